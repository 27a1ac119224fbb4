//! ABC ancestor sampling for models whose transition can only be simulated.
//!
//! The point mass of a degenerate (or unavailable) transition density is
//! replaced by a Gaussian kernel in the ancestor sampling step only; forward
//! propagation still uses the exact simulator. `ε` scales the *squared*
//! distance, so it has variance units, not standard-deviation units.

use crate::error::{Error, Result};
use crate::kernels::{conditional_sweep, ReferenceUpdate, SweepOutput};
use crate::models::{SsmTarget, StateSpaceModel};
use crate::path::Trajectory;
use crate::rng::RandomSource;
use crate::smc::{Categorical, ParticleSystem, TargetSequence};

/// Statistic `S(x)` compared by the kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum SummaryStatistic {
    Identity,
    /// `S(x)_i = x_i / scale_i`, for states whose components live on different scales.
    Scaled(Vec<f64>),
}

impl SummaryStatistic {
    fn squared_distance(&self, x: &[f64], x_ref: &[f64]) -> f64 {
        match self {
            Self::Identity => x.iter().zip(x_ref).map(|(a, b)| (a - b) * (a - b)).sum(),
            Self::Scaled(s) => x
                .iter()
                .zip(x_ref)
                .zip(s)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum(),
        }
    }
}

/// Gaussian kernel `K_ε(x, x′) = exp(−‖S(x) − S(x′)‖² / (2ε))`.
#[derive(Clone, Debug, PartialEq)]
pub struct AbcKernel {
    epsilon: f64,
    summary: SummaryStatistic,
}

impl AbcKernel {
    pub fn new(epsilon: f64) -> Result<Self> {
        Self::with_summary(epsilon, SummaryStatistic::Identity)
    }

    pub fn with_summary(epsilon: f64, summary: SummaryStatistic) -> Result<Self> {
        if !(epsilon >= 0.0) || epsilon.is_infinite() {
            return Err(Error::InvalidInput(format!(
                "ABC bandwidth must be finite and >= 0, got {epsilon}"
            )));
        }
        if let SummaryStatistic::Scaled(s) = &summary {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput(
                    "summary scales must be positive".into(),
                ));
            }
        }
        Ok(Self { epsilon, summary })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn summary(&self) -> &SummaryStatistic {
        &self.summary
    }
}

/// `log K_ε(x, x_ref)`; the exact (`ε = 0`) mode has no finite log-kernel and is rejected.
pub fn abc_kernel_logeval(kernel: &AbcKernel, x: &[f64], x_ref: &[f64]) -> Result<f64> {
    if kernel.epsilon == 0.0 {
        return Err(Error::InvalidInput(
            "log-kernel is undefined for epsilon = 0".into(),
        ));
    }
    if x.len() != x_ref.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {}",
            x.len(),
            x_ref.len()
        )));
    }
    Ok(-kernel.summary.squared_distance(x, x_ref) / (2.0 * kernel.epsilon))
}

/// One ABC ancestor draw for the reference slot `N − 1` at time `t ≥ 1`.
///
/// For each of the first `N − 1` slots an ancestor is drawn from the filter
/// weights at `t − 1` and pushed through `simulate`; the candidate is weighted
/// by `K_ε` against `x_ref`. The reference slot gets `K_ε(x_ref, x_ref)`.
/// With `ε = 0` nothing is simulated and `N − 1` is returned.
pub fn abc_ancestor_step(
    system: &ParticleSystem,
    t: usize,
    x_ref: &[f64],
    simulate: &dyn Fn(&[f64], &mut RandomSource, &mut [f64]),
    kernel: &AbcKernel,
    rng: &mut RandomSource,
) -> Result<usize> {
    let n = system.num_particles();
    if n < 2 {
        return Err(Error::TooFewParticles { min: 2, got: n });
    }
    if t == 0 || t >= system.horizon() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: system.horizon(),
        });
    }
    if kernel.epsilon == 0.0 {
        return Ok(n - 1);
    }
    let resample = Categorical::from_log_weights(system.log_weights(t - 1))?;
    let mut candidates = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    let mut x_check = vec![0.0; system.dim()];
    for _ in 0..n - 1 {
        let a = resample.draw(rng);
        simulate(system.state(t - 1, a), rng, &mut x_check);
        candidates.push(a);
        log_w.push(abc_kernel_logeval(kernel, &x_check, x_ref)?);
    }
    candidates.push(n - 1);
    log_w.push(abc_kernel_logeval(kernel, x_ref, x_ref)?);
    let l = Categorical::from_log_weights(&log_w)?.draw(rng);
    Ok(candidates[l])
}

/// Reference update that uses [`abc_ancestor_step`] with the model simulator.
pub struct AbcAncestorUpdate<'m, M> {
    pub model: &'m M,
    pub kernel: AbcKernel,
}

impl<M: StateSpaceModel> ReferenceUpdate for AbcAncestorUpdate<'_, M> {
    fn update(
        &self,
        system: &ParticleSystem,
        t: usize,
        reference: &mut Trajectory,
        _target: &dyn TargetSequence,
        rng: &mut RandomSource,
    ) -> Result<(usize, bool)> {
        let r = system.num_particles() - 1;
        if t == 0 {
            return Ok((r, false));
        }
        let simulate = |x: &[f64], rng: &mut RandomSource, out: &mut [f64]| {
            self.model.sample_transition(x, rng, out)
        };
        let a = abc_ancestor_step(system, t, reference.state(t), &simulate, &self.kernel, rng)?;
        Ok((a, false))
    }
}

/// PGAS with the ancestor sampling step replaced by [`abc_ancestor_step`].
/// The target must use the bootstrap proposal, which [`SsmTarget`] does.
pub fn pgas_abc_sweep<M: StateSpaceModel>(
    reference: &Trajectory,
    target: &SsmTarget<M>,
    n: usize,
    kernel: &AbcKernel,
    rng: &mut RandomSource,
) -> Result<SweepOutput> {
    let update = AbcAncestorUpdate {
        model: target.model(),
        kernel: kernel.clone(),
    };
    conditional_sweep(reference, target, n, &update, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::pg_sweep;
    use crate::models::LgssmSpec;

    #[test]
    fn kernel_values() {
        let k = AbcKernel::new(1.0).unwrap();
        assert_eq!(
            abc_kernel_logeval(&k, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        assert_eq!(
            abc_kernel_logeval(&k, &[3.0, 4.0, 0.0], &[0.0; 3]).unwrap(),
            -12.5
        );
        let k = AbcKernel::new(0.7).unwrap();
        // ‖x − x′‖² = 2ε.
        let d = (1.4f64).sqrt();
        assert!((abc_kernel_logeval(&k, &[d], &[0.0]).unwrap() + 1.0).abs() < 1e-14);
        assert!(abc_kernel_logeval(&AbcKernel::new(0.0).unwrap(), &[0.0], &[0.0]).is_err());
        assert!(AbcKernel::new(-1.0).is_err());
        let k = AbcKernel::with_summary(2.0, SummaryStatistic::Scaled(vec![2.0, 1.0])).unwrap();
        assert_eq!(
            abc_kernel_logeval(&k, &[4.0, 1.0], &[0.0, 0.0]).unwrap(),
            -5.0 / 4.0
        );
    }

    fn two_slot_system(x_prev: [f64; 2], lw_prev: [f64; 2]) -> ParticleSystem {
        let mut sys = ParticleSystem::new(2, 1, 2);
        for i in 0..2 {
            sys.set_state(0, i, &[x_prev[i]]);
            sys.set_log_weight(0, i, lw_prev[i]);
        }
        sys
    }

    #[test]
    fn two_point_switch_probability() {
        // Only slot 0 can be resampled; Γ is the identity, so the candidate
        // sits at distance d from x′ and competes with the reference alone.
        let sys = two_slot_system([0.0, 5.0], [0.0, f64::NEG_INFINITY]);
        let eps = 0.5;
        let d: f64 = 0.8;
        let kernel = AbcKernel::new(eps).unwrap();
        let id = |x: &[f64], _: &mut RandomSource, out: &mut [f64]| out[0] = x[0];
        let mut rng = RandomSource::new(11);
        let n = 100_000;
        let switched = (0..n)
            .filter(|_| abc_ancestor_step(&sys, 1, &[d], &id, &kernel, &mut rng).unwrap() == 0)
            .count();
        let k = (-d * d / (2.0 * eps)).exp();
        let p = k / (k + 1.0);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((switched as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn huge_bandwidth_is_uniform_over_slots() {
        let n_part = 4;
        let mut sys = ParticleSystem::new(n_part, 1, 2);
        for i in 0..n_part {
            sys.set_state(0, i, &[i as f64]);
            sys.set_log_weight(0, i, 0.0);
        }
        let kernel = AbcKernel::new(1e12).unwrap();
        let id = |x: &[f64], _: &mut RandomSource, out: &mut [f64]| out[0] = x[0];
        let mut rng = RandomSource::new(12);
        let draws = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[abc_ancestor_step(&sys, 1, &[0.5], &id, &kernel, &mut rng).unwrap()] += 1;
        }
        // Each candidate is uniform, the reference adds 1/N to slot N−1:
        // P(i) = (N−1)/N · 1/N for i < N−1, plus 1/N for i = N−1.
        for (i, c) in counts.iter().enumerate() {
            let nf = n_part as f64;
            let p = (nf - 1.0) / nf / nf + if i == n_part - 1 { 1.0 / nf } else { 0.0 };
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (*c as f64 / draws as f64 - p).abs() < 4.0 * se,
                "slot {i}: {c}"
            );
        }
    }

    #[test]
    fn zero_bandwidth_is_pg() {
        let spec = LgssmSpec::scalar(0.9, 0.5, 1.0, 0.3, 0.0, 1.0).unwrap();
        let mut rng = RandomSource::new(4);
        let (xs, ys) = crate::models::simulate_data(&spec, 15, &mut rng);
        let tg = SsmTarget::new(spec, ys).unwrap();
        let kernel = AbcKernel::new(0.0).unwrap();
        let mut r1 = RandomSource::new(99);
        let mut r2 = RandomSource::new(99);
        let mut ref1 = xs.clone();
        let mut ref2 = xs;
        for _ in 0..10 {
            let a = pgas_abc_sweep(&ref1, &tg, 5, &kernel, &mut r1).unwrap();
            let b = pg_sweep(&ref2, &tg, 5, &mut r2).unwrap();
            assert_eq!(a.trajectory, b.trajectory);
            ref1 = a.trajectory;
            ref2 = b.trajectory;
        }
    }
}
