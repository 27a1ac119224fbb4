//! State-space models and the target sequence they induce.
//!
//! A model supplies `μ`, a transition sampler `Γ`, optionally the transition
//! density `f`, and the observation density `g`. [`SsmTarget`] turns a model
//! plus an observation record into the target sequence
//! `γ_t(x_{0:t}) = p(x_{0:t}, y_{0:t})` with the bootstrap proposal.

mod ar;
mod lgssm;
mod lorenz;
mod tracking;
mod two_state;

pub use ar::ArSsmSpec;
pub use lgssm::LgssmSpec;
pub use lorenz::Lorenz63Spec;
pub use tracking::{tracking_theta_conditional, TrackingSpec};
pub use two_state::TwoStateHmm;

use nalgebra::DMatrix;

use crate::bridge::{kalman_filter, rts_smoother, LinearGaussianDynamics, SmootherOutput};
use crate::error::{Error, Result};
use crate::path::{Path, Trajectory};
use crate::rng::RandomSource;
use crate::smc::TargetSequence;

pub trait StateSpaceModel {
    fn state_dim(&self) -> usize;

    fn obs_dim(&self) -> usize;

    fn sample_initial(&self, rng: &mut RandomSource, out: &mut [f64]);

    fn initial_logpdf(&self, _x: &[f64]) -> Result<f64> {
        Err(Error::IntractableInitial)
    }

    /// Simulate `x_{t+1} ~ f(· | x)`.
    fn sample_transition(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]);

    /// `log f(x_next | x)`. Simulator-only models keep the default.
    fn transition_logpdf(&self, _x: &[f64], _x_next: &[f64]) -> Result<f64> {
        Err(Error::IntractableTransition)
    }

    fn observation_logpdf(&self, y: &[f64], x: &[f64]) -> f64;

    fn sample_observation(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]);
}

/// Models whose transition is `x_{t+1} = A x_t + F v` and whose initial state is Gaussian.
pub trait LinearGaussianModel: StateSpaceModel {
    fn dynamics(&self) -> &LinearGaussianDynamics;

    fn initial_mean(&self) -> &[f64];

    fn initial_cov(&self) -> &DMatrix<f64>;
}

/// Forward simulation of `T` states and observations.
pub fn simulate_data<M: StateSpaceModel + ?Sized>(
    model: &M,
    horizon: usize,
    rng: &mut RandomSource,
) -> (Trajectory, Trajectory) {
    let (n, p) = (model.state_dim(), model.obs_dim());
    let mut xs = Trajectory::zeros(n, horizon);
    let mut ys = Trajectory::zeros(p, horizon);
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    for t in 0..horizon {
        if t == 0 {
            model.sample_initial(rng, &mut x);
        } else {
            model.sample_transition(&x, rng, &mut next);
            std::mem::swap(&mut x, &mut next);
        }
        xs.state_mut(t).copy_from_slice(&x);
        model.sample_observation(&x, rng, ys.state_mut(t));
    }
    (xs, ys)
}

/// Exact smoothing marginals for a linear-Gaussian model.
pub fn kalman_smoother_oracle(spec: &LgssmSpec, ys: &Trajectory) -> Result<SmootherOutput> {
    let filter = kalman_filter(spec, ys)?;
    Ok(rts_smoother(spec, &filter))
}

/// `γ_t(x_{0:t}) = μ(x_0) g(y_0|x_0) ∏ f(x_s|x_{s−1}) g(y_s|x_s)` with the bootstrap proposal `r_t = f`.
#[derive(Clone, Debug)]
pub struct SsmTarget<M> {
    model: M,
    ys: Trajectory,
}

impl<M: StateSpaceModel> SsmTarget<M> {
    pub fn new(model: M, ys: Trajectory) -> Result<Self> {
        if ys.dim() != model.obs_dim() {
            return Err(Error::DimensionMismatch(format!(
                "observations have dimension {}, model expects {}",
                ys.dim(),
                model.obs_dim()
            )));
        }
        if ys.is_empty() {
            return Err(Error::InvalidInput("no observations".into()));
        }
        Ok(Self { model, ys })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn observations(&self) -> &Trajectory {
        &self.ys
    }

    fn link(&self, prev: Option<&[f64]>, x: &[f64]) -> Result<f64> {
        match prev {
            None => self.model.initial_logpdf(x),
            Some(p) => self.model.transition_logpdf(p, x),
        }
    }
}

impl<M: StateSpaceModel> TargetSequence for SsmTarget<M> {
    fn horizon(&self) -> usize {
        self.ys.len()
    }

    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn log_gamma(&self, path: &dyn Path) -> Result<f64> {
        let mut total = 0.0;
        for s in 0..path.len() {
            let prev = if s == 0 {
                None
            } else {
                Some(path.state(s - 1))
            };
            total += self.link(prev, path.state(s))?;
            if total == f64::NEG_INFINITY {
                return Ok(total);
            }
            total += self
                .model
                .observation_logpdf(self.ys.state(s), path.state(s));
        }
        Ok(total)
    }

    fn sample_proposal(
        &self,
        t: usize,
        prefix: &dyn Path,
        rng: &mut RandomSource,
        out: &mut [f64],
    ) {
        if t == 0 {
            self.model.sample_initial(rng, out);
        } else {
            self.model.sample_transition(prefix.state(t - 1), rng, out);
        }
    }

    fn proposal_logpdf(&self, t: usize, prefix: &dyn Path, x: &[f64]) -> Result<f64> {
        self.link(
            if t == 0 {
                None
            } else {
                Some(prefix.state(t - 1))
            },
            x,
        )
    }

    fn log_weight(&self, t: usize, _prefix: &dyn Path, x: &[f64]) -> Result<f64> {
        Ok(self.model.observation_logpdf(self.ys.state(t), x))
    }

    fn log_future_ratio(
        &self,
        t: usize,
        history: &dyn Path,
        future: &dyn Path,
        depth: usize,
    ) -> Result<f64> {
        let mut total = self.link(history.last(), future.state(0))?;
        for k in 0..depth.min(future.len()) {
            if total == f64::NEG_INFINITY {
                return Ok(total);
            }
            if k > 0 {
                total += self
                    .model
                    .transition_logpdf(future.state(k - 1), future.state(k))?;
            }
            total += self
                .model
                .observation_logpdf(self.ys.state(t + k), future.state(k));
        }
        if depth >= 1 && depth < future.len() && total > f64::NEG_INFINITY {
            total += self
                .model
                .transition_logpdf(future.state(depth - 1), future.state(depth))?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{Concat, EmptyPath};
    use crate::smc::weight_function;

    fn target() -> SsmTarget<LgssmSpec> {
        let spec = LgssmSpec::scalar(0.9, 0.7, 1.0, 0.5, 0.2, 1.3).unwrap();
        let ys = Trajectory::from_scalars(&[0.4, -0.3, 1.1, 0.8, -0.5]);
        SsmTarget::new(spec, ys).unwrap()
    }

    #[test]
    fn bootstrap_weight_is_observation_density() {
        let tg = target();
        let path = Trajectory::from_scalars(&[0.1, 0.5]);
        let generic = weight_function(&tg, 2, &path, &[0.7]).unwrap().value();
        let direct = tg.model().observation_logpdf(&[1.1], &[0.7]);
        assert!((generic - direct).abs() < 1e-12);
        assert_eq!(tg.log_weight(2, &path, &[0.7]).unwrap(), direct);
        let at_zero = weight_function(&tg, 0, &EmptyPath, &[0.3]).unwrap().value();
        assert!((at_zero - tg.model().observation_logpdf(&[0.4], &[0.3])).abs() < 1e-12);
    }

    #[test]
    fn gamma_telescopes() {
        let tg = target();
        let path = Trajectory::from_scalars(&[0.1, 0.5, -0.2]);
        let m = tg.model();
        let full = tg.log_gamma(&path).unwrap();
        let manual = m.initial_logpdf(&[0.1]).unwrap()
            + m.observation_logpdf(&[0.4], &[0.1])
            + m.transition_logpdf(&[0.1], &[0.5]).unwrap()
            + m.observation_logpdf(&[-0.3], &[0.5])
            + m.transition_logpdf(&[0.5], &[-0.2]).unwrap()
            + m.observation_logpdf(&[1.1], &[-0.2]);
        assert!((full - manual).abs() < 1e-12);
    }

    #[test]
    fn markov_future_ratio_differs_from_literal_by_a_constant() {
        // The Markov form drops terms that depend only on the fixed tail, so
        // its difference from the literal ratio must not depend on the
        // history or the varying window.
        let tg = target();
        let mut diffs = Vec::new();
        for (h, w) in [(0.3, [0.2, 0.1]), (-1.0, [0.5, -0.7]), (0.8, [1.5, 0.0])] {
            let hist = Trajectory::from_scalars(&[0.5, h]);
            let fut_states = Trajectory::from_scalars(&[w[0], w[1], 0.9]);
            let fast = tg.log_future_ratio(2, &hist, &fut_states, 2).unwrap();
            let slow = {
                let full = Concat {
                    head: &hist,
                    tail: &fut_states,
                };
                tg.log_gamma(&full).unwrap() - tg.log_gamma(&hist).unwrap()
            };
            diffs.push(slow - fast);
        }
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn observation_densities_integrate_to_one() {
        let ar = ArSsmSpec::benchmark();
        let lg = LgssmSpec::scalar(0.5, 1.0, 1.0, 0.7, 0.0, 1.0).unwrap();
        let lor = Lorenz63Spec::benchmark();
        let x5 = [0.4, 0.0, 0.0, 0.0, 0.0];
        let h = 1e-3;
        let grid = (-40_000..40_000).map(|k| k as f64 * h);
        let (mut s_ar, mut s_lg, mut s_lor) = (0.0, 0.0, 0.0);
        for y in grid {
            s_ar += ar.observation_logpdf(&[y], &x5).exp() * h;
            s_lg += lg.observation_logpdf(&[y], &[0.3]).exp() * h;
            s_lor += lor.observation_logpdf(&[y], &[1.0, 2.0, 3.0]).exp() * h;
        }
        assert!((s_ar - 1.0).abs() < 1e-3, "{s_ar}");
        assert!((s_lg - 1.0).abs() < 1e-3);
        assert!((s_lor - 1.0).abs() < 1e-3);
    }
}
