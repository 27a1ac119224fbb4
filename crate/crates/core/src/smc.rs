//! Sequential Monte Carlo substrate.
//!
//! Particles, log-weights and ancestor indexes are stored for every time step
//! (no pruning), column by column. Resampling is multinomial: each ancestor is
//! an independent inverse-CDF draw proportional to the previous weights. All
//! weights stay in log-space; linear weights only exist transiently inside
//! [`normalize_log_weights`].

use crate::error::{Error, Result};
use crate::path::{Concat, EmptyPath, Path, Trajectory};
use crate::rng::RandomSource;

/// Natural-log importance weight. Finite or `-inf`; never NaN or `+inf`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogWeight(f64);

impl LogWeight {
    pub const ZERO: LogWeight = LogWeight(f64::NEG_INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value == f64::INFINITY {
            Err(Error::InvalidLogWeight)
        } else {
            Ok(Self(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero_weight(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

/// A sequence of unnormalised targets `γ_1, …, γ_T` on growing paths, together
/// with the proposal kernels used to extend particles.
///
/// `log_gamma` of a path of length `t` is `log γ_t` and may only depend on
/// those `t` states. The default weight and future-ratio methods are the
/// literal definitions; models with Markov structure override them with O(1)
/// versions.
pub trait TargetSequence {
    fn horizon(&self) -> usize;

    fn state_dim(&self) -> usize;

    fn log_gamma(&self, path: &dyn Path) -> Result<f64>;

    /// Draw `x_t ~ r_t(· | prefix)` into `out`, where `prefix` holds the `t` earlier states.
    fn sample_proposal(&self, t: usize, prefix: &dyn Path, rng: &mut RandomSource, out: &mut [f64]);

    fn proposal_logpdf(&self, t: usize, prefix: &dyn Path, x: &[f64]) -> Result<f64>;

    /// Incremental importance weight of extending `prefix` by `x` at time `t`.
    fn log_weight(&self, t: usize, prefix: &dyn Path, x: &[f64]) -> Result<f64> {
        weight_function(self, t, prefix, x).map(LogWeight::value)
    }

    /// `log γ_T(history ∪ future) − log γ_{t−1}(history)`, where `history` ends at
    /// time `t − 1` and `future` runs from time `t` to the horizon.
    ///
    /// Only the first `depth` states of `future` (plus `history`) vary between
    /// calls at a given `t`; implementations may drop any additive term that
    /// depends on the remaining future states alone.
    fn log_future_ratio(
        &self,
        t: usize,
        history: &dyn Path,
        future: &dyn Path,
        depth: usize,
    ) -> Result<f64> {
        let _ = (t, depth);
        let full = Concat {
            head: history,
            tail: future,
        };
        let num = self.log_gamma(&full)?;
        if num == f64::NEG_INFINITY {
            return Ok(num);
        }
        let den = if history.is_empty() {
            0.0
        } else {
            self.log_gamma(history)?
        };
        Ok(num - den)
    }
}

/// Single-state path.
struct One<'a>(&'a [f64]);

impl Path for One<'_> {
    fn len(&self) -> usize {
        1
    }

    fn state(&self, _s: usize) -> &[f64] {
        self.0
    }
}

/// `log γ_t(X_t) − log γ_{t−1}(X_{t−1}) − log r_t(x_t | X_{t−1})`.
pub fn weight_function<T: TargetSequence + ?Sized>(
    target: &T,
    t: usize,
    prefix: &dyn Path,
    x: &[f64],
) -> Result<LogWeight> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in proposed state".into()));
    }
    debug_assert_eq!(prefix.len(), t);
    let one = One(x);
    let path = Concat {
        head: prefix,
        tail: &one,
    };
    let num = target.log_gamma(&path)?;
    if num == f64::NEG_INFINITY {
        return Ok(LogWeight::ZERO);
    }
    let den = if t == 0 {
        0.0
    } else {
        target.log_gamma(prefix)?
    };
    let lr = target.proposal_logpdf(t, prefix, x)?;
    if den.is_nan() || lr.is_nan() || num.is_nan() {
        return Err(Error::InvalidLogWeight);
    }
    LogWeight::new(num - den - lr)
}

/// `log Σ exp(v_i)`; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Probability vector proportional to `exp(log_weights)`, via max-subtraction.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let mut m = f64::NEG_INFINITY;
    for &w in log_weights {
        if w.is_nan() || w == f64::INFINITY {
            return Err(Error::InvalidLogWeight);
        }
        m = m.max(w);
    }
    if m == f64::NEG_INFINITY {
        return Err(Error::AllWeightsDegenerate);
    }
    let mut p: Vec<f64> = log_weights.iter().map(|w| (w - m).exp()).collect();
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    Ok(p)
}

/// Inverse-CDF sampler over a fixed probability vector.
#[derive(Clone, Debug)]
pub struct Categorical {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    pub fn new(probs: &[f64]) -> Self {
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            cdf.push(acc);
            if p > 0.0 {
                last_positive = i;
            }
        }
        Self { cdf, last_positive }
    }

    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        Ok(Self::new(&normalize_log_weights(log_weights)?))
    }

    /// Probability of returning `i`.
    pub fn probability(&self, i: usize) -> f64 {
        let total = self.cdf[self.cdf.len() - 1];
        let lo = if i == 0 { 0.0 } else { self.cdf[i - 1] };
        (self.cdf[i] - lo) / total
    }

    /// First index `i` with `u < cdf[i]`; zero-probability entries are never returned.
    pub fn draw(&self, rng: &mut RandomSource) -> usize {
        let u = rng.uniform() * self.cdf[self.cdf.len() - 1];
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.last_positive)
    }
}

/// One index drawn with probability `probs[i]` using a single uniform.
pub fn categorical_draw(probs: &[f64], rng: &mut RandomSource) -> usize {
    Categorical::new(probs).draw(rng)
}

/// `1 / Σ p_i²` of the normalised weights.
pub fn effective_sample_size(log_weights: &[f64]) -> Result<f64> {
    let p = normalize_log_weights(log_weights)?;
    Ok(1.0 / p.iter().map(|v| v * v).sum::<f64>())
}

/// Full genealogy of an SMC run: `N` particles at each of `T` times.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    n: usize,
    dim: usize,
    horizon: usize,
    states: Vec<f64>,
    log_weights: Vec<f64>,
    ancestors: Vec<usize>,
}

impl ParticleSystem {
    pub fn new(n: usize, dim: usize, horizon: usize) -> Self {
        Self {
            n,
            dim,
            horizon,
            states: vec![0.0; n * dim * horizon],
            log_weights: vec![f64::NEG_INFINITY; n * horizon],
            ancestors: (0..horizon).flat_map(|_| 0..n).collect(),
        }
    }

    pub fn num_particles(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state(&self, t: usize, i: usize) -> &[f64] {
        let o = (t * self.n + i) * self.dim;
        &self.states[o..o + self.dim]
    }

    pub fn set_state(&mut self, t: usize, i: usize, x: &[f64]) {
        let o = (t * self.n + i) * self.dim;
        self.states[o..o + self.dim].copy_from_slice(x);
    }

    pub fn log_weight(&self, t: usize, i: usize) -> f64 {
        self.log_weights[t * self.n + i]
    }

    pub fn set_log_weight(&mut self, t: usize, i: usize, w: f64) {
        self.log_weights[t * self.n + i] = w;
    }

    pub fn log_weights(&self, t: usize) -> &[f64] {
        &self.log_weights[t * self.n..(t + 1) * self.n]
    }

    /// Ancestor `a_t^i` (an index into column `t − 1`); meaningless at `t = 0`.
    pub fn ancestor(&self, t: usize, i: usize) -> usize {
        self.ancestors[t * self.n + i]
    }

    pub fn set_ancestor(&mut self, t: usize, i: usize, a: usize) {
        self.ancestors[t * self.n + i] = a;
    }

    /// Path `X_{t}^i` of particle `i` at column `t` (length `t + 1`).
    pub fn lineage(&self, t: usize, i: usize) -> Lineage<'_> {
        Lineage {
            system: self,
            len: t + 1,
            last: i,
        }
    }

    /// History available to a particle at time `t` descending from `a`: `X_{t−1}^a`, or empty at `t = 0`.
    pub fn history(&self, t: usize, a: usize) -> Lineage<'_> {
        Lineage {
            system: self,
            len: t,
            last: a,
        }
    }

    /// Recompute and store the weight of particle `i` at column `t` from its lineage.
    pub fn reweight<T: TargetSequence + ?Sized>(
        &mut self,
        target: &T,
        t: usize,
        i: usize,
    ) -> Result<f64> {
        let a = self.ancestor(t, i);
        let w = {
            let hist = self.history(t, a);
            let w = target.log_weight(t, &hist, self.state(t, i))?;
            LogWeight::new(w)?.value()
        };
        self.set_log_weight(t, i, w);
        Ok(w)
    }
}

/// Ancestral path of one particle, resolved lazily through the stored ancestors.
#[derive(Clone, Copy)]
pub struct Lineage<'a> {
    system: &'a ParticleSystem,
    len: usize,
    last: usize,
}

impl Path for Lineage<'_> {
    fn len(&self) -> usize {
        self.len
    }

    fn state(&self, s: usize) -> &[f64] {
        assert!(s < self.len, "state {s} beyond lineage length {}", self.len);
        let mut idx = self.last;
        let mut u = self.len - 1;
        while u > s {
            idx = self.system.ancestor(u, idx);
            u -= 1;
        }
        self.system.state(s, idx)
    }
}

/// Propagate column `t` from column `t − 1` (or from the initial proposal at
/// `t = 0`) for every particle except `skip`; the skipped slot's state,
/// ancestor and weight are left for the caller.
pub fn smc_step<T: TargetSequence + ?Sized>(
    system: &mut ParticleSystem,
    t: usize,
    target: &T,
    skip: Option<usize>,
    rng: &mut RandomSource,
) -> Result<()> {
    let n = system.n;
    let dim = system.dim;
    let mut new_states = vec![0.0; n * dim];
    let mut new_weights = vec![f64::NEG_INFINITY; n];
    let mut new_ancestors: Vec<usize> = (0..n).collect();
    if t == 0 {
        for i in (0..n).filter(|&i| Some(i) != skip) {
            let out = &mut new_states[i * dim..(i + 1) * dim];
            target.sample_proposal(0, &EmptyPath, rng, out);
            new_weights[i] = LogWeight::new(target.log_weight(0, &EmptyPath, out)?)?.value();
        }
    } else {
        let resampler = Categorical::from_log_weights(system.log_weights(t - 1))?;
        for i in (0..n).filter(|&i| Some(i) != skip) {
            let a = resampler.draw(rng);
            new_ancestors[i] = a;
            let hist = system.history(t, a);
            let out = &mut new_states[i * dim..(i + 1) * dim];
            target.sample_proposal(t, &hist, rng, out);
            new_weights[i] = LogWeight::new(target.log_weight(t, &hist, out)?)?.value();
        }
    }
    for i in (0..n).filter(|&i| Some(i) != skip) {
        system.set_state(t, i, &new_states[i * dim..(i + 1) * dim]);
        system.set_log_weight(t, i, new_weights[i]);
        if t > 0 {
            system.set_ancestor(t, i, new_ancestors[i]);
        }
    }
    Ok(())
}

/// Trajectory `(x_1^{b_1}, …, x_T^{b_T})` with `b_T = k`, `b_t = a_{t+1}^{b_{t+1}}`,
/// and the index path `B_T`.
pub fn trace_ancestry(system: &ParticleSystem, k: usize) -> Result<(Trajectory, Vec<usize>)> {
    if k >= system.n {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: system.n,
        });
    }
    let horizon = system.horizon;
    let mut indexes = vec![0; horizon];
    let mut b = k;
    for t in (0..horizon).rev() {
        indexes[t] = b;
        if t > 0 {
            b = system.ancestor(t, b);
        }
    }
    let mut traj = Trajectory::zeros(system.dim, horizon);
    for (t, &b) in indexes.iter().enumerate() {
        traj.state_mut(t).copy_from_slice(system.state(t, b));
    }
    Ok((traj, indexes))
}

/// Running maximum of the weight function against an optional bound `κ`.
///
/// Uniform ergodicity of the conditional SMC kernels holds when the weight
/// function is bounded; the monitor records the largest weight seen and warns
/// once if it ever exceeds the configured bound.
#[derive(Clone, Debug, Default)]
pub struct WeightMonitor {
    pub bound: Option<f64>,
    pub max_log_weight: Option<f64>,
    pub exceeded: bool,
}

impl WeightMonitor {
    pub fn new(bound: Option<f64>) -> Self {
        Self {
            bound,
            max_log_weight: None,
            exceeded: false,
        }
    }

    pub fn observe(&mut self, log_weights: &[f64]) {
        for &w in log_weights.iter().filter(|w| w.is_finite()) {
            if self.max_log_weight.is_none_or(|m| w > m) {
                self.max_log_weight = Some(w);
            }
        }
        if let (Some(bound), Some(m)) = (self.bound, self.max_log_weight) {
            if !self.exceeded && m > bound.ln() {
                self.exceeded = true;
                log::warn!(
                    "weight function reached {:.4e}, above the configured bound {:.4e}",
                    m.exp(),
                    bound
                );
            }
        }
    }

    pub fn observe_system(&mut self, system: &ParticleSystem) {
        for t in 0..system.horizon() {
            self.observe(system.log_weights(t));
        }
    }

    pub fn merge(&mut self, other: &WeightMonitor) {
        if let Some(m) = other.max_log_weight {
            self.observe(&[m]);
        }
        self.exceeded |= other.exceeded;
    }

    /// `sup |W|` seen so far in linear scale.
    pub fn max_weight(&self) -> Option<f64> {
        self.max_log_weight.map(f64::exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_equal_weights() {
        let p = normalize_log_weights(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_single_support() {
        let p = normalize_log_weights(&[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn normalize_matches_linear_oracle() {
        let lin = [1.0, 2.0, 3.0];
        let total: f64 = lin.iter().sum();
        let logs: Vec<f64> = lin.iter().map(|v: &f64| v.ln()).collect();
        let p = normalize_log_weights(&logs).unwrap();
        for (a, b) in p.iter().zip(lin.iter()) {
            assert!((a - b / total).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_survives_huge_offsets() {
        let p = normalize_log_weights(&[-1e4, -1e4 + 2f64.ln()]).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_degenerate_and_nan() {
        assert_eq!(
            normalize_log_weights(&[f64::NEG_INFINITY; 3]),
            Err(Error::AllWeightsDegenerate)
        );
        assert_eq!(
            normalize_log_weights(&[0.0, f64::NAN]),
            Err(Error::InvalidLogWeight)
        );
        assert_eq!(
            normalize_log_weights(&[0.0, f64::INFINITY]),
            Err(Error::InvalidLogWeight)
        );
    }

    #[test]
    fn categorical_point_masses() {
        let mut rng = RandomSource::new(1);
        for _ in 0..1000 {
            assert_eq!(categorical_draw(&[1.0, 0.0, 0.0], &mut rng), 0);
            assert_eq!(categorical_draw(&[0.0, 0.0, 1.0], &mut rng), 2);
        }
    }

    #[test]
    fn categorical_fair_coin() {
        // Binomial(1e5, 0.5): sd = 158, so ±0.02 is > 12 sd.
        let mut rng = RandomSource::new(2);
        let c = Categorical::new(&[0.5, 0.5]);
        let zeros = (0..100_000).filter(|_| c.draw(&mut rng) == 0).count();
        let f = zeros as f64 / 1e5;
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }

    #[test]
    fn ess_examples() {
        assert!((effective_sample_size(&[0.0; 10]).unwrap() - 10.0).abs() < 1e-12);
        let one_hot = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!((effective_sample_size(&one_hot).unwrap() - 1.0).abs() < 1e-12);
        let w: Vec<f64> = [0.5f64, 0.25, 0.25].iter().map(|v| v.ln()).collect();
        assert!((effective_sample_size(&w).unwrap() - 1.0 / 0.375).abs() < 1e-12);
        assert_eq!(
            effective_sample_size(&[f64::NEG_INFINITY]),
            Err(Error::AllWeightsDegenerate)
        );
    }

    #[test]
    fn log_weight_rejects_nan_and_pos_inf() {
        assert!(LogWeight::new(f64::NAN).is_err());
        assert!(LogWeight::new(f64::INFINITY).is_err());
        assert!(LogWeight::new(f64::NEG_INFINITY).unwrap().is_zero_weight());
    }

    #[test]
    fn trace_identity_genealogy() {
        let mut sys = ParticleSystem::new(3, 1, 4);
        for t in 0..4 {
            for i in 0..3 {
                sys.set_state(t, i, &[(10 * t + i) as f64]);
            }
        }
        let (traj, idx) = trace_ancestry(&sys, 2).unwrap();
        assert_eq!(idx, vec![2; 4]);
        assert_eq!(traj.component(0), vec![2.0, 12.0, 22.0, 32.0]);
        assert!(trace_ancestry(&sys, 3).is_err());
    }

    #[test]
    fn trace_single_time() {
        let mut sys = ParticleSystem::new(2, 1, 1);
        sys.set_state(0, 1, &[5.0]);
        let (traj, idx) = trace_ancestry(&sys, 1).unwrap();
        assert_eq!(traj.component(0), vec![5.0]);
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn trace_random_genealogy_matches_recursive_walk() {
        fn walk(sys: &ParticleSystem, t: usize, i: usize, out: &mut Vec<f64>) {
            if t > 0 {
                walk(sys, t - 1, sys.ancestor(t, i), out);
            }
            out.push(sys.state(t, i)[0]);
        }
        let mut rng = RandomSource::new(9);
        let (n, horizon) = (4, 5);
        for _ in 0..50 {
            let mut sys = ParticleSystem::new(n, 1, horizon);
            for t in 0..horizon {
                for i in 0..n {
                    sys.set_state(t, i, &[rng.uniform()]);
                    if t > 0 {
                        sys.set_ancestor(t, i, (rng.uniform() * n as f64) as usize);
                    }
                }
            }
            for k in 0..n {
                let mut expected = Vec::new();
                walk(&sys, horizon - 1, k, &mut expected);
                let (traj, _) = trace_ancestry(&sys, k).unwrap();
                assert_eq!(traj.component(0), expected);
                let lin = sys.lineage(horizon - 1, k);
                for (s, e) in expected.iter().enumerate() {
                    assert_eq!(lin.state(s)[0], *e);
                }
            }
        }
    }

    #[test]
    fn monitor_tracks_max() {
        let mut m = WeightMonitor::new(Some(10.0));
        m.observe(&[0.0, 1.0, f64::NEG_INFINITY]);
        assert_eq!(m.max_log_weight, Some(1.0));
        assert!(!m.exceeded);
        m.observe(&[3.0]);
        assert!(m.exceeded);
    }
}
