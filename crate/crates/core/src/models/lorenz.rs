use rand_distr::{Distribution, StandardNormal};

use super::StateSpaceModel;
use crate::error::{Error, Result};
use crate::rng::RandomSource;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Stochastic Lorenz '63 system, available only as a simulator.
///
/// The SDE has additive diffusion, so the Milstein and Euler–Maruyama schemes
/// coincide; each observation interval `dt` is split into `substeps` steps of
/// size `h = dt / substeps`. `(Q, R, S)` at time zero is standard normal and
/// the first observed state is one interval later. Only `Q` is observed,
/// with unit Gaussian noise.
#[derive(Clone, Debug)]
pub struct Lorenz63Spec {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub noise_std: [f64; 3],
    pub obs_std: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl Lorenz63Spec {
    pub fn benchmark() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            noise_std: [5f64.sqrt(); 3],
            obs_std: 1.0,
            dt: 0.01,
            substeps: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidInput("substeps must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.obs_std > 0.0) || self.noise_std.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidInput(
                "dt and obs_std must be positive, noise stds non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn drift(&self, x: &[f64]) -> [f64; 3] {
        let (q, r, s) = (x[0], x[1], x[2]);
        [
            self.sigma * (r - q),
            q * (self.rho - s) - r,
            q * r - self.beta * s,
        ]
    }

    /// The black-box simulator `Γ(x, v)` with `v` drawn internally.
    pub fn lorenz_transition_sample(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        let h = self.dt / self.substeps as f64;
        let sh = h.sqrt();
        out.copy_from_slice(&x[..3]);
        for _ in 0..self.substeps {
            let d = self.drift(out);
            for i in 0..3 {
                let xi: f64 = StandardNormal.sample(rng);
                out[i] += d[i] * h + self.noise_std[i] * sh * xi;
            }
        }
    }
}

impl StateSpaceModel for Lorenz63Spec {
    fn state_dim(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn sample_initial(&self, rng: &mut RandomSource, out: &mut [f64]) {
        let x0: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        self.lorenz_transition_sample(&x0, rng, out);
    }

    fn sample_transition(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        self.lorenz_transition_sample(x, rng, out);
    }

    fn observation_logpdf(&self, y: &[f64], x: &[f64]) -> f64 {
        let z = (y[0] - x[0]) / self.obs_std;
        -0.5 * (LN_2PI + z * z) - self.obs_std.ln()
    }

    fn sample_observation(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        let e: f64 = StandardNormal.sample(rng);
        out[0] = x[0] + self.obs_std * e;
    }
}
