use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::{LinearGaussianModel, StateSpaceModel};
use crate::bridge::LinearGaussianDynamics;
use crate::error::{Error, Result};
use crate::linalg::{matvec, norm, GaussianNoise};
use crate::rng::RandomSource;

/// Linear-Gaussian state-space model: `x_0 ~ N(m0, P0)`,
/// `x_{t+1} = A x_t + F v`, `y_t = H x_t + e`, `e ~ N(0, R)`.
#[derive(Clone, Debug)]
pub struct LgssmSpec {
    pub dynamics: LinearGaussianDynamics,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m0: Vec<f64>,
    pub p0: DMatrix<f64>,
    init_noise: GaussianNoise,
    process_noise: GaussianNoise,
    obs_noise: GaussianNoise,
}

impl LgssmSpec {
    pub fn new(
        dynamics: LinearGaussianDynamics,
        h: DMatrix<f64>,
        r: DMatrix<f64>,
        m0: Vec<f64>,
        p0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        if h.ncols() != n || r.nrows() != h.nrows() || r.ncols() != h.nrows() {
            return Err(Error::DimensionMismatch("observation model".into()));
        }
        if m0.len() != n || p0.shape() != (n, n) {
            return Err(Error::DimensionMismatch("initial law".into()));
        }
        let obs_noise = GaussianNoise::new(&r)?;
        if obs_noise.rank() < r.nrows() {
            return Err(Error::InvalidInput(
                "observation noise must be positive definite".into(),
            ));
        }
        Ok(Self {
            init_noise: GaussianNoise::new(&p0)?,
            process_noise: GaussianNoise::new(dynamics.process_cov())?,
            obs_noise,
            dynamics,
            h,
            r,
            m0,
            p0,
        })
    }

    /// Scalar model `x' = a x + q v`, `y = h x + r e`, `x_0 ~ N(m0, p0)` (`q`, `r` are standard deviations).
    pub fn scalar(a: f64, q: f64, h: f64, r: f64, m0: f64, p0: f64) -> Result<Self> {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(
            LinearGaussianDynamics::new(one(a), one(q))?,
            one(h),
            one(r * r),
            vec![m0],
            one(p0),
        )
    }
}

impl StateSpaceModel for LgssmSpec {
    fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    fn sample_initial(&self, rng: &mut RandomSource, out: &mut [f64]) {
        out.copy_from_slice(&self.m0);
        self.init_noise.sample_add(rng, out);
    }

    fn initial_logpdf(&self, x: &[f64]) -> Result<f64> {
        let r: Vec<f64> = x.iter().zip(&self.m0).map(|(a, b)| a - b).collect();
        Ok(self
            .init_noise
            .log_density_residual(&r, 1.0 + norm(x) + norm(&self.m0)))
    }

    fn sample_transition(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        self.dynamics.apply_a(x, out);
        let d = self.dynamics.noise_dim();
        let mut v = vec![0.0; d];
        for vi in &mut v {
            *vi = StandardNormal.sample(rng);
        }
        self.dynamics.add_noise(&v, out);
    }

    fn transition_logpdf(&self, x: &[f64], x_next: &[f64]) -> Result<f64> {
        let mut pred = vec![0.0; x.len()];
        self.dynamics.apply_a(x, &mut pred);
        let scale = 1.0 + norm(x_next) + norm(&pred);
        for (p, xn) in pred.iter_mut().zip(x_next) {
            *p = xn - *p;
        }
        Ok(self.process_noise.log_density_residual(&pred, scale))
    }

    fn observation_logpdf(&self, y: &[f64], x: &[f64]) -> f64 {
        let mut pred = vec![0.0; y.len()];
        matvec(&self.h, x, &mut pred);
        for (p, yi) in pred.iter_mut().zip(y) {
            *p = yi - *p;
        }
        self.obs_noise.log_density_residual(&pred, 1.0 + norm(y))
    }

    fn sample_observation(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        matvec(&self.h, x, out);
        self.obs_noise.sample_add(rng, out);
    }
}

impl LinearGaussianModel for LgssmSpec {
    fn dynamics(&self) -> &LinearGaussianDynamics {
        &self.dynamics
    }

    fn initial_mean(&self) -> &[f64] {
        &self.m0
    }

    fn initial_cov(&self) -> &DMatrix<f64> {
        &self.p0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::simulate_data;

    #[test]
    fn noiseless_identity_model_holds_still() {
        let spec = LgssmSpec::new(
            LinearGaussianDynamics::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap(),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            vec![1.5, -2.0],
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let (xs, _) = simulate_data(&spec, 50, &mut RandomSource::new(3));
        for t in 0..50 {
            assert_eq!(xs.state(t), &[1.5, -2.0]);
        }
    }

    #[test]
    fn scalar_densities() {
        let spec = LgssmSpec::scalar(0.5, 2.0, 1.0, 0.5, 0.0, 1.0).unwrap();
        let ln_n = |x: f64, s: f64| {
            -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln() - 0.5 * (x / s).powi(2)
        };
        assert!((spec.transition_logpdf(&[2.0], &[0.0]).unwrap() - ln_n(1.0, 2.0)).abs() < 1e-12);
        assert!((spec.observation_logpdf(&[1.0], &[0.2]) - ln_n(0.8, 0.5)).abs() < 1e-12);
        assert!((spec.initial_logpdf(&[0.3]).unwrap() - ln_n(0.3, 1.0)).abs() < 1e-12);
    }
}
