//! Joint updates of the reference's ancestor and a window of its future states.
//!
//! At time `t` the pair `(a, Ξ_t)` with `Ξ_t = x_{t..=κ}` is redrawn from a
//! kernel that leaves
//!
//! `π_t(a, Ξ) ∝ w_{t−1}^a γ_T(X_{t−1}^a ∪ Ξ ∪ R) / γ_{t−1}(X_{t−1}^a)`
//!
//! invariant, where `R` is the part of the reference after `κ`. At `t = 0`
//! there is no ancestor and the target is `γ_T(Ξ ∪ R)`.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};

use crate::bridge::{BridgeSampler, BridgeStart};
use crate::error::{Error, Result};
use crate::models::LinearGaussianModel;
use crate::path::{Concat, FuturePath, Path, Trajectory};
use crate::rng::RandomSource;
use crate::smc::{log_sum_exp, Categorical, Lineage, ParticleSystem, TargetSequence};

/// Which future states are rejuvenated at each time.
#[derive(Clone, Debug, PartialEq)]
pub struct RejuvenationPlan {
    window: usize,
    mask: Option<Vec<bool>>,
}

impl RejuvenationPlan {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidInput(
                "rejuvenation window must be at least 1".into(),
            ));
        }
        Ok(Self { window, mask: None })
    }

    /// Rejuvenate only the masked state components inside each window.
    pub fn with_mask(window: usize, mask: Vec<bool>) -> Result<Self> {
        let mut plan = Self::new(window)?;
        if !mask.iter().any(|m| *m) {
            return Err(Error::InvalidInput("component mask selects nothing".into()));
        }
        plan.mask = Some(mask);
        Ok(plan)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Last index `κ_t = min(T − 1, t + ℓ − 1)` of the window starting at `t`.
    pub fn last_index(&self, t: usize, horizon: usize) -> Result<usize> {
        if t >= horizon {
            return Err(Error::PlanOutOfRange(format!(
                "t = {t} with horizon {horizon}"
            )));
        }
        Ok((t + self.window - 1).min(horizon - 1))
    }

    /// Number of states in the window starting at `t`.
    pub fn len_at(&self, t: usize, horizon: usize) -> Result<usize> {
        Ok(self.last_index(t, horizon)? - t + 1)
    }

    /// Copy `segment` into `reference` over the window at `t`, respecting the mask.
    pub fn splice(&self, reference: &mut Trajectory, t: usize, segment: &[f64]) -> Result<()> {
        let len = self.len_at(t, reference.len())?;
        let dim = reference.dim();
        if segment.len() != len * dim {
            return Err(Error::DimensionMismatch("rejuvenated segment".into()));
        }
        let dst = reference.window_mut(t, len);
        match &self.mask {
            None => dst.copy_from_slice(segment),
            Some(mask) => {
                for (i, (d, s)) in dst.iter_mut().zip(segment).enumerate() {
                    if mask[i % dim] {
                        *d = *s;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Everything a kernel may look at when updating the pair at time `t`.
pub struct RejuvenationContext<'a> {
    pub t: usize,
    pub len: usize,
    pub system: &'a ParticleSystem,
    /// `w_{t−1}`, or the single entry `0` at `t = 0`.
    pub log_weights: &'a [f64],
    pub reference: &'a Trajectory,
    pub target: &'a dyn TargetSequence,
}

impl<'a> RejuvenationContext<'a> {
    pub fn new(
        t: usize,
        plan: &RejuvenationPlan,
        system: &'a ParticleSystem,
        reference: &'a Trajectory,
        target: &'a dyn TargetSequence,
    ) -> Result<Self> {
        const ROOT: [f64; 1] = [0.0];
        let len = plan.len_at(t, reference.len())?;
        let log_weights: &'a [f64] = if t == 0 {
            &ROOT
        } else {
            system.log_weights(t - 1)
        };
        Ok(Self {
            t,
            len,
            system,
            log_weights,
            reference,
            target,
        })
    }

    pub fn num_ancestors(&self) -> usize {
        self.log_weights.len()
    }

    /// `X_{t−1}^a` (empty at `t = 0`).
    pub fn history(&self, a: usize) -> Lineage<'a> {
        self.system.history(self.t, a)
    }

    /// The retained reference state right after the window, if any.
    pub fn endpoint(&self) -> Option<&'a [f64]> {
        let end = self.t + self.len;
        (end < self.reference.len()).then(|| self.reference.state(end))
    }

    /// The reference's current window, flat.
    pub fn current_segment(&self) -> &'a [f64] {
        self.reference.window(self.t, self.len)
    }
}

/// `log π_t(a, Ξ)` up to a constant; evaluation failures count as zero density.
pub fn partial_collapse_logtarget(a: usize, segment: &[f64], ctx: &RejuvenationContext) -> f64 {
    let lw = ctx.log_weights[a];
    if lw == f64::NEG_INFINITY {
        return lw;
    }
    let hist = ctx.history(a);
    let future = FuturePath::new(segment, ctx.reference, ctx.t);
    match ctx.target.log_future_ratio(ctx.t, &hist, &future, ctx.len) {
        Ok(v) if !v.is_nan() => lw + v,
        _ => f64::NEG_INFINITY,
    }
}

/// Output of one kernel application.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelStep {
    pub ancestor: usize,
    pub segment: Vec<f64>,
    /// Whether the kernel moved away from the current pair.
    pub accepted: bool,
}

/// Markov kernel on `(a, Ξ_t)` leaving `π_t` invariant.
pub trait RejuvenationKernel {
    fn step(
        &self,
        ancestor: usize,
        segment: &[f64],
        ctx: &RejuvenationContext,
        rng: &mut RandomSource,
    ) -> Result<KernelStep>;
}

/// Leaves the pair unchanged; rejuvenated PGAS then reduces to PG.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityKernel;

impl RejuvenationKernel for IdentityKernel {
    fn step(
        &self,
        ancestor: usize,
        segment: &[f64],
        _: &RejuvenationContext,
        _: &mut RandomSource,
    ) -> Result<KernelStep> {
        Ok(KernelStep {
            ancestor,
            segment: segment.to_vec(),
            accepted: false,
        })
    }
}

/// Distribution `ν` over ancestors used by the proposal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProposalWeights {
    /// `ν = w_{t−1}`.
    #[default]
    Filter,
    Uniform,
}

struct AncestorProposal {
    log_nu: Vec<f64>,
    sampler: Categorical,
}

impl AncestorProposal {
    fn new(kind: ProposalWeights, log_weights: &[f64]) -> Result<Self> {
        let log_nu: Vec<f64> = match kind {
            ProposalWeights::Filter => {
                let z = log_sum_exp(log_weights);
                if z == f64::NEG_INFINITY {
                    return Err(Error::AllWeightsDegenerate);
                }
                log_weights.iter().map(|w| w - z).collect()
            }
            ProposalWeights::Uniform => vec![-(log_weights.len() as f64).ln(); log_weights.len()],
        };
        let probs: Vec<f64> = log_nu.iter().map(|v| v.exp()).collect();
        Ok(Self {
            log_nu,
            sampler: Categorical::new(&probs),
        })
    }
}

/// Proposal `q(Ξ | X_{t−1}^a, current, R)` for the window states.
pub trait SegmentProposal {
    /// Draw into `out`; `Ok(false)` when no segment can connect ancestor `a`
    /// to the retained future (the pair then has zero weight).
    fn sample(
        &self,
        ctx: &RejuvenationContext,
        a: usize,
        current: &[f64],
        rng: &mut RandomSource,
        out: &mut [f64],
    ) -> Result<bool>;

    fn log_density(
        &self,
        ctx: &RejuvenationContext,
        a: usize,
        current: &[f64],
        segment: &[f64],
    ) -> Result<f64>;
}

/// Independent Metropolis–Hastings on `(a, Ξ)`, iterated `iterations` times.
pub struct MhKernel<P> {
    pub proposal: P,
    pub weights: ProposalWeights,
    pub iterations: usize,
}

impl<P: SegmentProposal> MhKernel<P> {
    pub fn new(proposal: P, weights: ProposalWeights, iterations: usize) -> Self {
        Self {
            proposal,
            weights,
            iterations: iterations.max(1),
        }
    }
}

/// Build an MH rejuvenation kernel (one iterate by default).
pub fn mh_rejuvenation_kernel<P: SegmentProposal>(
    proposal: P,
    weights: ProposalWeights,
    iterations: usize,
) -> MhKernel<P> {
    MhKernel::new(proposal, weights, iterations)
}

impl<P: SegmentProposal> RejuvenationKernel for MhKernel<P> {
    fn step(
        &self,
        ancestor: usize,
        segment: &[f64],
        ctx: &RejuvenationContext,
        rng: &mut RandomSource,
    ) -> Result<KernelStep> {
        let nu = AncestorProposal::new(self.weights, ctx.log_weights)?;
        let mut a_cur = ancestor;
        let mut xi_cur = segment.to_vec();
        let mut pi_cur = partial_collapse_logtarget(a_cur, &xi_cur, ctx);
        let mut xi_new = vec![0.0; segment.len()];
        let mut moved = false;
        for _ in 0..self.iterations {
            let a_new = nu.sampler.draw(rng);
            let ok = self
                .proposal
                .sample(ctx, a_new, &xi_cur, rng, &mut xi_new)?;
            let u = rng.uniform();
            if !ok {
                continue;
            }
            let pi_new = partial_collapse_logtarget(a_new, &xi_new, ctx);
            if pi_new == f64::NEG_INFINITY {
                continue;
            }
            let q_fwd = self.proposal.log_density(ctx, a_new, &xi_cur, &xi_new)?;
            let q_rev = self.proposal.log_density(ctx, a_cur, &xi_new, &xi_cur)?;
            let log_ratio =
                (nu.log_nu[a_cur] + q_rev) - (nu.log_nu[a_new] + q_fwd) + pi_new - pi_cur;
            let log_ratio = if log_ratio.is_nan() {
                f64::NEG_INFINITY
            } else {
                log_ratio
            };
            if u.ln() < log_ratio {
                moved |= a_new != a_cur || xi_new != xi_cur;
                a_cur = a_new;
                std::mem::swap(&mut xi_cur, &mut xi_new);
                pi_cur = pi_new;
            }
        }
        Ok(KernelStep {
            ancestor: a_cur,
            segment: xi_cur,
            accepted: moved,
        })
    }
}

/// Conditional importance sampling: the current pair plus `M − 1` fresh
/// draws from `ν · q̃`, resampled by their importance weights.
pub struct CisKernel<P> {
    pub proposal: P,
    pub weights: ProposalWeights,
    /// `M`; `None` uses the number of particles.
    pub inner: Option<usize>,
}

impl<P: SegmentProposal> CisKernel<P> {
    pub fn new(proposal: P, weights: ProposalWeights, inner: Option<usize>) -> Self {
        Self {
            proposal,
            weights,
            inner,
        }
    }

    /// Log importance weight `log w^a γ_T/(ν^a q̃ γ_{t−1})` of a pair.
    pub fn log_importance_weight(
        &self,
        log_nu: &[f64],
        a: usize,
        segment: &[f64],
        ctx: &RejuvenationContext,
    ) -> Result<f64> {
        let pi = partial_collapse_logtarget(a, segment, ctx);
        if pi == f64::NEG_INFINITY {
            return Ok(pi);
        }
        let q = self.proposal.log_density(ctx, a, segment, segment)?;
        let w = pi - log_nu[a] - q;
        Ok(if w.is_nan() { f64::NEG_INFINITY } else { w })
    }
}

/// Build a CIS rejuvenation kernel; `inner = None` uses `M = N`.
pub fn cis_rejuvenation_kernel<P: SegmentProposal>(
    proposal: P,
    weights: ProposalWeights,
    inner: Option<usize>,
) -> CisKernel<P> {
    CisKernel::new(proposal, weights, inner)
}

impl<P: SegmentProposal> RejuvenationKernel for CisKernel<P> {
    fn step(
        &self,
        ancestor: usize,
        segment: &[f64],
        ctx: &RejuvenationContext,
        rng: &mut RandomSource,
    ) -> Result<KernelStep> {
        let m = self.inner.unwrap_or(ctx.system.num_particles());
        if m <= 1 {
            return IdentityKernel.step(ancestor, segment, ctx, rng);
        }
        let nu = AncestorProposal::new(self.weights, ctx.log_weights)?;
        let seg_len = segment.len();
        let mut ancestors = vec![0usize; m];
        let mut segments = vec![0.0; m * seg_len];
        let mut log_w = vec![f64::NEG_INFINITY; m];
        for j in 0..m - 1 {
            let a = nu.sampler.draw(rng);
            ancestors[j] = a;
            let out = &mut segments[j * seg_len..(j + 1) * seg_len];
            if self.proposal.sample(ctx, a, segment, rng, out)? {
                log_w[j] = self.log_importance_weight(&nu.log_nu, a, out, ctx)?;
            }
        }
        ancestors[m - 1] = ancestor;
        segments[(m - 1) * seg_len..].copy_from_slice(segment);
        log_w[m - 1] = self.log_importance_weight(&nu.log_nu, ancestor, segment, ctx)?;
        if log_w[m - 1] == f64::NEG_INFINITY {
            return Err(Error::InvalidInput(format!(
                "current pair has zero importance weight at t = {}; the proposal does not cover the reference",
                ctx.t
            )));
        }
        let pick = Categorical::from_log_weights(&log_w)?.draw(rng);
        Ok(KernelStep {
            ancestor: ancestors[pick],
            segment: segments[pick * seg_len..(pick + 1) * seg_len].to_vec(),
            accepted: pick != m - 1,
        })
    }
}

/// Forward simulation of the window from the target's own proposal kernels.
#[derive(Clone, Copy, Debug, Default)]
pub struct PriorSegmentProposal;

impl SegmentProposal for PriorSegmentProposal {
    fn sample(
        &self,
        ctx: &RejuvenationContext,
        a: usize,
        _current: &[f64],
        rng: &mut RandomSource,
        out: &mut [f64],
    ) -> Result<bool> {
        let dim = ctx.reference.dim();
        let hist = ctx.history(a);
        for k in 0..ctx.len {
            let (done, rest) = out.split_at_mut(k * dim);
            let so_far = Trajectory::from_flat(dim, done.to_vec());
            let prefix = Concat {
                head: &hist,
                tail: &so_far,
            };
            ctx.target
                .sample_proposal(ctx.t + k, &prefix, rng, &mut rest[..dim]);
        }
        Ok(true)
    }

    fn log_density(
        &self,
        ctx: &RejuvenationContext,
        a: usize,
        _current: &[f64],
        segment: &[f64],
    ) -> Result<f64> {
        let dim = ctx.reference.dim();
        let hist = ctx.history(a);
        let mut total = 0.0;
        for k in 0..ctx.len {
            let so_far = Trajectory::from_flat(dim, segment[..k * dim].to_vec());
            let prefix = Concat {
                head: &hist,
                tail: &so_far,
            };
            total +=
                ctx.target
                    .proposal_logpdf(ctx.t + k, &prefix, &segment[k * dim..(k + 1) * dim])?;
        }
        Ok(total)
    }
}

/// Symmetric Gaussian random walk on the window (masked components only).
/// Suitable for the MH kernel, not for CIS.
#[derive(Clone, Debug)]
pub struct RandomWalkSegmentProposal {
    pub step: f64,
    pub mask: Option<Vec<bool>>,
}

impl SegmentProposal for RandomWalkSegmentProposal {
    fn sample(
        &self,
        ctx: &RejuvenationContext,
        _a: usize,
        current: &[f64],
        rng: &mut RandomSource,
        out: &mut [f64],
    ) -> Result<bool> {
        let dim = ctx.reference.dim();
        for (i, (o, c)) in out.iter_mut().zip(current).enumerate() {
            let active = self.mask.as_ref().is_none_or(|m| m[i % dim]);
            let z: f64 = StandardNormal.sample(rng);
            *o = if active { c + self.step * z } else { *c };
        }
        Ok(true)
    }

    fn log_density(
        &self,
        ctx: &RejuvenationContext,
        _a: usize,
        current: &[f64],
        segment: &[f64],
    ) -> Result<f64> {
        let dim = ctx.reference.dim();
        let mut total = 0.0;
        for (i, (c, s)) in current.iter().zip(segment).enumerate() {
            if self.mask.as_ref().is_none_or(|m| m[i % dim]) {
                let z = (s - c) / self.step;
                total += -0.5 * z * z - self.step.ln() - 0.918_938_533_204_672_7;
            } else if s != c {
                return Ok(f64::NEG_INFINITY);
            }
        }
        Ok(total)
    }
}

/// `q̃(Ξ | x_{t−1}^a, x_{κ+1}) = p(Ξ | x_{t−1}^a, x_{κ+1})` for a linear-Gaussian
/// transition, sampled by the Kalman bridge. At `t = 0` the bridge starts from
/// the initial law; when the window reaches the horizon there is no endpoint
/// and the window is drawn from the dynamics.
#[derive(Clone, Debug)]
pub struct GaussianBridgeProposal {
    samplers: HashMap<(usize, bool, bool), BridgeSampler>,
}

impl GaussianBridgeProposal {
    pub fn new<M: LinearGaussianModel + ?Sized>(model: &M, window: usize) -> Result<Self> {
        let dyn_ = model.dynamics();
        let prior = BridgeStart::Prior {
            mean: model.initial_mean().to_vec(),
            cov: model.initial_cov().clone(),
        };
        let mut samplers = HashMap::new();
        for len in 1..=window {
            for prior_start in [false, true] {
                for terminal in [false, true] {
                    let start = if prior_start {
                        prior.clone()
                    } else {
                        BridgeStart::Point
                    };
                    samplers.insert(
                        (len, prior_start, terminal),
                        BridgeSampler::new(dyn_, len, start, terminal)?,
                    );
                }
            }
        }
        Ok(Self { samplers })
    }

    fn pick<'a>(&'a self, ctx: &RejuvenationContext) -> Result<&'a BridgeSampler> {
        let key = (ctx.len, ctx.t == 0, ctx.endpoint().is_some());
        self.samplers.get(&key).ok_or_else(|| {
            Error::PlanOutOfRange(format!("no bridge prepared for a window of {}", ctx.len))
        })
    }

    fn start(ctx: &RejuvenationContext, a: usize) -> Option<Vec<f64>> {
        (ctx.t > 0).then(|| ctx.history(a).state(ctx.t - 1).to_vec())
    }

    /// `log p(x_{κ+1} | x_{t−1}^a)`, the bridge's normalising constant.
    pub fn endpoint_logpdf(&self, ctx: &RejuvenationContext, a: usize) -> Result<f64> {
        match ctx.endpoint() {
            None => Ok(0.0),
            Some(end) => self
                .pick(ctx)?
                .endpoint_logpdf(Self::start(ctx, a).as_deref(), end),
        }
    }
}

impl SegmentProposal for GaussianBridgeProposal {
    fn sample(
        &self,
        ctx: &RejuvenationContext,
        a: usize,
        _current: &[f64],
        rng: &mut RandomSource,
        out: &mut [f64],
    ) -> Result<bool> {
        let sampler = self.pick(ctx)?;
        match sampler.sample(Self::start(ctx, a).as_deref(), ctx.endpoint(), rng, out) {
            Ok(()) => Ok(true),
            Err(Error::NumericalRankFailure(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn log_density(
        &self,
        ctx: &RejuvenationContext,
        a: usize,
        _current: &[f64],
        segment: &[f64],
    ) -> Result<f64> {
        self.pick(ctx)?
            .log_density(Self::start(ctx, a).as_deref(), ctx.endpoint(), segment)
    }
}
