use super::StateSpaceModel;
use crate::error::Result;
use crate::path::Trajectory;
use crate::rng::RandomSource;

/// Hidden Markov chain on `{0, 1}` with binary observations. States and
/// observations are stored as `0.0` / `1.0`; densities are with respect to
/// counting measure, so every posterior can be enumerated exactly.
#[derive(Clone, Debug)]
pub struct TwoStateHmm {
    /// `P(x_0 = 1)`.
    pub p_initial: f64,
    /// `P(x_{t+1} = 1 | x_t = i)`.
    pub p_transition: [f64; 2],
    /// `P(y = 1 | x = i)`.
    pub p_emission: [f64; 2],
}

fn index(x: &[f64]) -> usize {
    usize::from(x[0] > 0.5)
}

fn ln_bernoulli(p_one: f64, v: usize) -> f64 {
    if v == 1 {
        p_one.ln()
    } else {
        (1.0 - p_one).ln()
    }
}

impl TwoStateHmm {
    /// `P(x_{0:T−1} = path | y)` for all `2^T` paths, indexed by the binary
    /// number whose bit `t` is `x_t`.
    pub fn enumerate_posterior(&self, ys: &Trajectory) -> Result<Vec<f64>> {
        let horizon = ys.len();
        let mut log_joint = Vec::with_capacity(1 << horizon);
        for code in 0..(1usize << horizon) {
            let bit = |t: usize| (code >> t) & 1;
            let mut lp = ln_bernoulli(self.p_initial, bit(0));
            for t in 0..horizon {
                if t > 0 {
                    lp += ln_bernoulli(self.p_transition[bit(t - 1)], bit(t));
                }
                lp += ln_bernoulli(self.p_emission[bit(t)], index(ys.state(t)));
            }
            log_joint.push(lp);
        }
        crate::smc::normalize_log_weights(&log_joint)
    }

    pub fn code_of(path: &Trajectory) -> usize {
        (0..path.len()).map(|t| index(path.state(t)) << t).sum()
    }
}

impl StateSpaceModel for TwoStateHmm {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn sample_initial(&self, rng: &mut RandomSource, out: &mut [f64]) {
        out[0] = if rng.uniform() < self.p_initial {
            1.0
        } else {
            0.0
        };
    }

    fn initial_logpdf(&self, x: &[f64]) -> Result<f64> {
        Ok(ln_bernoulli(self.p_initial, index(x)))
    }

    fn sample_transition(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        out[0] = if rng.uniform() < self.p_transition[index(x)] {
            1.0
        } else {
            0.0
        };
    }

    fn transition_logpdf(&self, x: &[f64], x_next: &[f64]) -> Result<f64> {
        Ok(ln_bernoulli(self.p_transition[index(x)], index(x_next)))
    }

    fn observation_logpdf(&self, y: &[f64], x: &[f64]) -> f64 {
        ln_bernoulli(self.p_emission[index(x)], index(y))
    }

    fn sample_observation(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        out[0] = if rng.uniform() < self.p_emission[index(x)] {
            1.0
        } else {
            0.0
        };
    }
}
