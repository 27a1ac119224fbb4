//! Particle MCMC kernels built on conditional SMC.
//!
//! Every conditional sweep pins the reference trajectory in the last particle
//! slot (`N − 1`) and differs only in how that slot's ancestor is chosen:
//! kept fixed (PG), resampled from the ancestor-sampling weights (PGAS), or
//! redrawn jointly with a window of future reference states (rejuvenated
//! PGAS). Each sweep forks two generators from the caller's: one drives
//! propagation and the final draw, the other drives the ancestor updates. Two
//! variants that pick the same ancestors therefore return identical output
//! under the same seed.

mod rejuvenation;

pub use rejuvenation::{
    cis_rejuvenation_kernel, mh_rejuvenation_kernel, partial_collapse_logtarget, CisKernel,
    GaussianBridgeProposal, IdentityKernel, KernelStep, MhKernel, PriorSegmentProposal,
    ProposalWeights, RandomWalkSegmentProposal, RejuvenationContext, RejuvenationKernel,
    RejuvenationPlan, SegmentProposal,
};

use crate::error::{Error, Result};
use crate::path::{EmptyPath, FuturePath, Trajectory};
use crate::rng::RandomSource;
use crate::smc::{
    log_sum_exp, smc_step, trace_ancestry, Categorical, LogWeight, ParticleSystem, TargetSequence,
};

/// Result of one sweep.
#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub trajectory: Trajectory,
    /// `a_t^N ≠ N` (the reference's ancestor left its own slot), per time; always false at `t = 0`.
    pub ancestor_changed: Vec<bool>,
    /// Whether the rejuvenation kernel moved the pair, per time.
    pub kernel_accepted: Vec<bool>,
    /// Largest finite log-weight in the particle system.
    pub max_log_weight: f64,
    /// The reference as pinned during the sweep (after any rejuvenation).
    pub reference: Trajectory,
}

/// How the reference slot's ancestor (and possibly its future) is updated at each time.
pub trait ReferenceUpdate {
    /// Called before column `t` is propagated. Returns the ancestor index for
    /// the reference slot (ignored at `t = 0`) and whether a kernel moved.
    fn update(
        &self,
        system: &ParticleSystem,
        t: usize,
        reference: &mut Trajectory,
        target: &dyn TargetSequence,
        rng: &mut RandomSource,
    ) -> Result<(usize, bool)>;
}

/// PG: `a_t^N = N`.
pub struct KeepAncestor;

impl ReferenceUpdate for KeepAncestor {
    fn update(
        &self,
        system: &ParticleSystem,
        _t: usize,
        _reference: &mut Trajectory,
        _target: &dyn TargetSequence,
        _rng: &mut RandomSource,
    ) -> Result<(usize, bool)> {
        Ok((system.num_particles() - 1, false))
    }
}

/// PGAS: `a_t^N` drawn from the ancestor-sampling weights.
pub struct AncestorSampling;

impl ReferenceUpdate for AncestorSampling {
    fn update(
        &self,
        system: &ParticleSystem,
        t: usize,
        reference: &mut Trajectory,
        target: &dyn TargetSequence,
        rng: &mut RandomSource,
    ) -> Result<(usize, bool)> {
        if t == 0 {
            return Ok((system.num_particles() - 1, false));
        }
        let lw = ancestor_sampling_logweights(system, t, reference, target)?;
        Ok((Categorical::from_log_weights(&lw)?.draw(rng), false))
    }
}

/// Rejuvenated PGAS: `(a_t^N, Ξ_t)` drawn from a kernel, `Ξ_t` spliced into the reference.
pub struct Rejuvenation<'k> {
    pub plan: RejuvenationPlan,
    pub kernel: &'k dyn RejuvenationKernel,
}

impl ReferenceUpdate for Rejuvenation<'_> {
    fn update(
        &self,
        system: &ParticleSystem,
        t: usize,
        reference: &mut Trajectory,
        target: &dyn TargetSequence,
        rng: &mut RandomSource,
    ) -> Result<(usize, bool)> {
        let r = system.num_particles() - 1;
        let step = {
            let ctx = RejuvenationContext::new(t, &self.plan, system, reference, target)?;
            let current_a = if t == 0 { 0 } else { r };
            self.kernel
                .step(current_a, ctx.current_segment(), &ctx, rng)?
        };
        self.plan.splice(reference, t, &step.segment)?;
        Ok((if t == 0 { r } else { step.ancestor }, step.accepted))
    }
}

/// `log w_{t−1}^i + log γ_T(X_{t−1}^i ∪ x′_{t:T}) − log γ_{t−1}(X_{t−1}^i)` for every `i`
/// (up to a constant shared by all `i`).
pub fn ancestor_sampling_logweights(
    system: &ParticleSystem,
    t: usize,
    reference: &Trajectory,
    target: &dyn TargetSequence,
) -> Result<Vec<f64>> {
    if t == 0 || t >= system.horizon() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: system.horizon(),
        });
    }
    let future = FuturePath::new(&[], reference, t);
    let mut out = Vec::with_capacity(system.num_particles());
    for i in 0..system.num_particles() {
        let lw = system.log_weight(t - 1, i);
        if lw == f64::NEG_INFINITY {
            out.push(lw);
            continue;
        }
        let v = target.log_future_ratio(t, &system.history(t, i), &future, 0)?;
        out.push(LogWeight::new(lw + v)?.value());
    }
    Ok(out)
}

/// Conditional SMC with the reference in slot `N − 1`, the reference
/// ancestor chosen by `update`, and a final draw `k ∝ w_T`.
pub fn conditional_sweep(
    reference: &Trajectory,
    target: &dyn TargetSequence,
    n: usize,
    update: &dyn ReferenceUpdate,
    rng: &mut RandomSource,
) -> Result<SweepOutput> {
    if n < 2 {
        return Err(Error::TooFewParticles { min: 2, got: n });
    }
    let horizon = target.horizon();
    if reference.len() != horizon || reference.dim() != target.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "reference is {}x{}, target expects {}x{}",
            reference.len(),
            reference.dim(),
            horizon,
            target.state_dim()
        )));
    }
    let mut main = rng.fork();
    let mut aux = rng.fork();
    let r = n - 1;
    let mut reference = reference.clone();
    let mut system = ParticleSystem::new(n, target.state_dim(), horizon);
    let mut ancestor_changed = vec![false; horizon];
    let mut kernel_accepted = vec![false; horizon];
    for t in 0..horizon {
        let (a, moved) = update.update(&system, t, &mut reference, target, &mut aux)?;
        kernel_accepted[t] = moved;
        smc_step(&mut system, t, target, Some(r), &mut main)?;
        system.set_state(t, r, reference.state(t));
        if t > 0 {
            system.set_ancestor(t, r, a);
            ancestor_changed[t] = a != r;
        }
        system.reweight(target, t, r)?;
    }
    let k = Categorical::from_log_weights(system.log_weights(horizon - 1))?.draw(&mut main);
    let (trajectory, _) = trace_ancestry(&system, k)?;
    let max_log_weight = (0..horizon)
        .flat_map(|t| system.log_weights(t).iter().copied())
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SweepOutput {
        trajectory,
        ancestor_changed,
        kernel_accepted,
        max_log_weight,
        reference,
    })
}

/// Particle Gibbs: the reference keeps its own ancestry.
pub fn pg_sweep(
    reference: &Trajectory,
    target: &dyn TargetSequence,
    n: usize,
    rng: &mut RandomSource,
) -> Result<SweepOutput> {
    conditional_sweep(reference, target, n, &KeepAncestor, rng)
}

/// Particle Gibbs with ancestor sampling.
pub fn pgas_sweep(
    reference: &Trajectory,
    target: &dyn TargetSequence,
    n: usize,
    rng: &mut RandomSource,
) -> Result<SweepOutput> {
    conditional_sweep(reference, target, n, &AncestorSampling, rng)
}

/// PGAS with particle rejuvenation.
pub fn pgas_rejuvenated_sweep(
    reference: &Trajectory,
    target: &dyn TargetSequence,
    n: usize,
    plan: &RejuvenationPlan,
    kernel: &dyn RejuvenationKernel,
    rng: &mut RandomSource,
) -> Result<SweepOutput> {
    let update = Rejuvenation {
        plan: plan.clone(),
        kernel,
    };
    conditional_sweep(reference, target, n, &update, rng)
}

/// Run an unconditional particle filter; returns the system and `log Ẑ`.
pub fn particle_filter(
    target: &dyn TargetSequence,
    n: usize,
    rng: &mut RandomSource,
) -> Result<(ParticleSystem, f64)> {
    if n == 0 {
        return Err(Error::TooFewParticles { min: 1, got: 0 });
    }
    let horizon = target.horizon();
    let mut system = ParticleSystem::new(n, target.state_dim(), horizon);
    let mut log_z = 0.0;
    for t in 0..horizon {
        smc_step(&mut system, t, target, None, rng)?;
        let lse = log_sum_exp(system.log_weights(t));
        if lse == f64::NEG_INFINITY {
            return Err(Error::AllWeightsDegenerate);
        }
        log_z += lse - (n as f64).ln();
    }
    Ok((system, log_z))
}

/// Current state of a PIMH chain.
#[derive(Clone, Debug)]
pub struct PimhState {
    pub trajectory: Trajectory,
    pub log_likelihood: f64,
}

impl PimhState {
    /// First state from filters run until one does not degenerate (at most 100 attempts).
    pub fn initialise(
        target: &dyn TargetSequence,
        n: usize,
        rng: &mut RandomSource,
    ) -> Result<Self> {
        let mut last = Error::AllWeightsDegenerate;
        for _ in 0..100 {
            match propose_pimh(target, n, rng) {
                Ok(s) => return Ok(s),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

fn propose_pimh(
    target: &dyn TargetSequence,
    n: usize,
    rng: &mut RandomSource,
) -> Result<PimhState> {
    let (system, log_likelihood) = particle_filter(target, n, rng)?;
    let k = Categorical::from_log_weights(system.log_weights(target.horizon() - 1))?.draw(rng);
    let (trajectory, _) = trace_ancestry(&system, k)?;
    Ok(PimhState {
        trajectory,
        log_likelihood,
    })
}

/// Particle independent Metropolis–Hastings step. Returns the new state and
/// whether the proposal was accepted; degenerate proposals are rejected.
pub fn pimh_sweep(
    current: &PimhState,
    target: &dyn TargetSequence,
    n: usize,
    rng: &mut RandomSource,
) -> Result<(PimhState, bool)> {
    let mut main = rng.fork();
    let u = rng.uniform();
    match propose_pimh(target, n, &mut main) {
        Ok(prop) if u.ln() < prop.log_likelihood - current.log_likelihood => Ok((prop, true)),
        Ok(_) | Err(Error::AllWeightsDegenerate) => Ok((current.clone(), false)),
        Err(e) => Err(e),
    }
}

/// Chain of a two-block Gibbs sampler.
#[derive(Clone, Debug)]
pub struct GibbsChain<P> {
    pub thetas: Vec<P>,
    pub sweeps: Vec<SweepOutput>,
}

/// Alternate `X ~ state_sweep(θ, X)` and `θ ~ theta_sampler(X)`, recording both.
pub fn gibbs_loop<P: Clone>(
    mut theta_sampler: impl FnMut(&Trajectory, &mut RandomSource) -> Result<P>,
    mut state_sweep: impl FnMut(&P, &Trajectory, &mut RandomSource) -> Result<SweepOutput>,
    theta0: P,
    reference0: Trajectory,
    iterations: usize,
    rng: &mut RandomSource,
) -> Result<GibbsChain<P>> {
    let mut theta = theta0;
    let mut reference = reference0;
    let mut chain = GibbsChain {
        thetas: Vec::with_capacity(iterations),
        sweeps: Vec::with_capacity(iterations),
    };
    for _ in 0..iterations {
        let out = state_sweep(&theta, &reference, rng)?;
        reference = out.trajectory.clone();
        theta = theta_sampler(&reference, rng)?;
        chain.thetas.push(theta.clone());
        chain.sweeps.push(out);
    }
    Ok(chain)
}

/// `log φ(X, A, k)` of the extended target, up to the normalising constant of `γ_T`.
///
/// `φ = γ_T(X^k)/N^T · ∏_{i≠b_0} r_0(x_0^i) · ∏_{t≥1} ∏_{i≠b_t} w̄_{t−1}^{a_t^i} r_t(x_t^i | X_{t−1}^{a_t^i})`,
/// with `b` the ancestral indexes of `k` and `w̄` the normalised weights recomputed from the target.
pub fn log_extended_target(
    system: &ParticleSystem,
    k: usize,
    target: &dyn TargetSequence,
) -> Result<f64> {
    let n = system.num_particles();
    let horizon = system.horizon();
    let (traj, b) = trace_ancestry(system, k)?;
    let mut total = target.log_gamma(&traj)? - horizon as f64 * (n as f64).ln();
    let mut prev_w: Vec<f64> = Vec::new();
    for t in 0..horizon {
        let mut w = Vec::with_capacity(n);
        let lse_prev = log_sum_exp(&prev_w);
        for i in 0..n {
            let x = system.state(t, i);
            if t == 0 {
                w.push(target.log_weight(0, &EmptyPath, x)?);
                if i != b[0] {
                    total += target.proposal_logpdf(0, &EmptyPath, x)?;
                }
            } else {
                let a = system.ancestor(t, i);
                let hist = system.history(t, a);
                w.push(target.log_weight(t, &hist, x)?);
                if i != b[t] {
                    total += prev_w[a] - lse_prev + target.proposal_logpdf(t, &hist, x)?;
                }
            }
        }
        prev_w = w;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArSsmSpec, LgssmSpec, SsmTarget};

    fn lgssm_target() -> SsmTarget<LgssmSpec> {
        let spec = LgssmSpec::scalar(0.8, 0.6, 1.0, 0.5, 0.0, 1.0).unwrap();
        SsmTarget::new(spec, Trajectory::from_scalars(&[0.2, -0.4, 0.9, 0.3])).unwrap()
    }

    #[test]
    fn ancestor_weights_match_hand_product() {
        let tg = lgssm_target();
        let mut sys = ParticleSystem::new(3, 1, 4);
        let xs = [0.1, -0.5, 1.2];
        let lw = [0.0, -1.0, -0.3];
        for i in 0..3 {
            sys.set_state(0, i, &[xs[i]]);
            sys.set_log_weight(0, i, lw[i]);
        }
        let reference = Trajectory::from_scalars(&[0.0, 0.7, 0.1, -0.2]);
        let got = ancestor_sampling_logweights(&sys, 1, &reference, &tg).unwrap();
        let ln_n = |x: f64, s: f64| {
            -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln() - 0.5 * (x / s).powi(2)
        };
        for i in 0..3 {
            let expected = lw[i] + ln_n(0.7 - 0.8 * xs[i], 0.6);
            assert!((got[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_weights_flat_transition_give_uniform_ancestors() {
        let spec = LgssmSpec::scalar(0.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let tg = SsmTarget::new(spec, Trajectory::from_scalars(&[0.0, 0.0])).unwrap();
        let mut sys = ParticleSystem::new(4, 1, 2);
        for i in 0..4 {
            sys.set_state(0, i, &[i as f64]);
            sys.set_log_weight(0, i, 0.0);
        }
        let lw = ancestor_sampling_logweights(&sys, 1, &Trajectory::from_scalars(&[0.0, 0.5]), &tg)
            .unwrap();
        for v in &lw {
            assert!((v - lw[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_transition_isolates_reference_history() {
        let spec = ArSsmSpec::benchmark();
        let mut rng = RandomSource::new(5);
        let (xs, ys) = crate::models::simulate_data(&spec, 6, &mut rng);
        let tg = SsmTarget::new(spec, ys).unwrap();
        let n = 8;
        let mut sys = ParticleSystem::new(n, 5, 6);
        for t in 0..3 {
            smc_step(&mut sys, t, &tg, Some(n - 1), &mut rng).unwrap();
            sys.set_state(t, n - 1, xs.state(t));
            if t > 0 {
                sys.set_ancestor(t, n - 1, n - 1);
            }
            sys.reweight(&tg, t, n - 1).unwrap();
        }
        let lw = ancestor_sampling_logweights(&sys, 3, &xs, &tg).unwrap();
        for (i, v) in lw.iter().enumerate() {
            if i == n - 1 {
                assert!(v.is_finite());
            } else {
                assert_eq!(*v, f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn sweeps_reject_single_particle() {
        let tg = lgssm_target();
        let r = Trajectory::from_scalars(&[0.0; 4]);
        let mut rng = RandomSource::new(0);
        assert_eq!(
            pg_sweep(&r, &tg, 1, &mut rng).unwrap_err(),
            Error::TooFewParticles { min: 2, got: 1 }
        );
    }

    #[test]
    fn reference_is_pinned_in_last_slot() {
        let tg = lgssm_target();
        let r = Trajectory::from_scalars(&[0.5, 0.1, -0.3, 0.2]);
        let mut rng = RandomSource::new(3);
        for _ in 0..20 {
            let out = pg_sweep(&r, &tg, 3, &mut rng).unwrap();
            assert_eq!(out.reference, r);
            assert!(out.ancestor_changed.iter().all(|c| !c));
        }
    }

    #[test]
    fn pimh_accepts_everything_without_noise() {
        // With deterministic dynamics and a flat observation density every
        // filter returns the same likelihood estimate.
        let spec = LgssmSpec::new(
            crate::bridge::LinearGaussianDynamics::new(
                nalgebra::DMatrix::from_element(1, 1, 0.5),
                nalgebra::DMatrix::zeros(1, 1),
            )
            .unwrap(),
            nalgebra::DMatrix::zeros(1, 1),
            nalgebra::DMatrix::from_element(1, 1, 1.0),
            vec![1.0],
            nalgebra::DMatrix::zeros(1, 1),
        )
        .unwrap();
        let tg = SsmTarget::new(spec, Trajectory::from_scalars(&[0.3, 0.1, 0.2])).unwrap();
        let mut rng = RandomSource::new(1);
        let mut state = PimhState::initialise(&tg, 4, &mut rng).unwrap();
        for _ in 0..50 {
            let (s, acc) = pimh_sweep(&state, &tg, 4, &mut rng).unwrap();
            assert!(acc);
            state = s;
        }
    }
}
