use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::function::gamma::ln_gamma;

use super::{LinearGaussianModel, StateSpaceModel};
use crate::bridge::LinearGaussianDynamics;
use crate::error::{Error, Result};
use crate::linalg::{norm, symmetrize, GaussianNoise, SUPPORT_TOL};
use crate::rng::RandomSource;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// AR(n) latent process in companion form with a saturated, heavy-tailed
/// observation of its first component:
///
/// `z_{t+1} = Σ α_k z_{t+1−k} + σ_v v`, `y_t = tanh(β z_t)/β + σ_e e`, `e ~ t_ν`.
///
/// The state is `x_t = (z_t, …, z_{t−n+1})`; only the first component receives
/// noise, so `F F^T` has rank one. `x_0` is drawn from the stationary law.
#[derive(Clone, Debug)]
pub struct ArSsmSpec {
    pub alpha: Vec<f64>,
    pub sigma_v: f64,
    pub beta: f64,
    pub sigma_e: f64,
    pub nu: f64,
    dynamics: LinearGaussianDynamics,
    m0: Vec<f64>,
    p0: DMatrix<f64>,
    init_noise: GaussianNoise,
    t_log_norm: f64,
}

impl ArSsmSpec {
    pub fn new(alpha: Vec<f64>, sigma_v: f64, beta: f64, sigma_e: f64, nu: f64) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::InvalidInput("AR order must be positive".into()));
        }
        if !(sigma_v > 0.0 && sigma_e > 0.0 && nu > 0.0 && beta >= 0.0) {
            return Err(Error::InvalidInput(
                "need sigma_v > 0, sigma_e > 0, nu > 0 and beta >= 0".into(),
            ));
        }
        let mut a = DMatrix::zeros(n, n);
        for (j, &v) in alpha.iter().enumerate() {
            a[(0, j)] = v;
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut f = DMatrix::zeros(n, 1);
        f[(0, 0)] = sigma_v;
        let dynamics = LinearGaussianDynamics::new(a, f)?;
        let p0 = stationary_covariance(&dynamics)?;
        let t_log_norm = ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln();
        Ok(Self {
            init_noise: GaussianNoise::new(&p0)?,
            m0: vec![0.0; n],
            p0,
            dynamics,
            alpha,
            sigma_v,
            beta,
            sigma_e,
            nu,
            t_log_norm,
        })
    }

    /// `α = (0.9, −0.8, 0.7, −0.6, 0.5)`, `σ_v = 1`, `β = 0.5`, `σ_e = 0.5`, `ν = 3`.
    pub fn benchmark() -> Self {
        Self::new(vec![0.9, -0.8, 0.7, -0.6, 0.5], 1.0, 0.5, 0.5, 3.0)
            .expect("valid AR(5) parameters")
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    /// `tanh(β z)/β`, or `z` when `β = 0`.
    pub fn saturate(&self, z: f64) -> f64 {
        if self.beta == 0.0 {
            z
        } else {
            (self.beta * z).tanh() / self.beta
        }
    }

    /// `log t_ν((y − tanh(β x₁)/β)/σ_e) − log σ_e`.
    pub fn ar_observation_logdensity(&self, y: f64, x: &[f64]) -> f64 {
        let z = (y - self.saturate(x[0])) / self.sigma_e;
        self.t_log_norm - 0.5 * (self.nu + 1.0) * (z * z / self.nu).ln_1p() - self.sigma_e.ln()
    }
}

/// `P = Σ_k A^k F F^T (A^k)^T` by repeated doubling.
fn stationary_covariance(dynamics: &LinearGaussianDynamics) -> Result<DMatrix<f64>> {
    let mut p = dynamics.process_cov().clone();
    let mut a = dynamics.a().clone();
    for _ in 0..64 {
        let next = symmetrize(&(&p + &a * &p * a.transpose()));
        a = &a * &a;
        let change = (&next - &p).abs().max();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= 1e-14 * p.abs().max() && a.abs().max() < 1e-8 {
            return Ok(p);
        }
    }
    Err(Error::InvalidInput(
        "AR coefficients are not stationary".into(),
    ))
}

impl StateSpaceModel for ArSsmSpec {
    fn state_dim(&self) -> usize {
        self.alpha.len()
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn sample_initial(&self, rng: &mut RandomSource, out: &mut [f64]) {
        out.fill(0.0);
        self.init_noise.sample_add(rng, out);
    }

    fn initial_logpdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.init_noise.log_density_residual(x, 1.0 + norm(x)))
    }

    fn sample_transition(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        let n = self.alpha.len();
        let v: f64 = StandardNormal.sample(rng);
        let head: f64 = self.alpha.iter().zip(x).map(|(a, b)| a * b).sum();
        out[1..n].copy_from_slice(&x[..n - 1]);
        out[0] = head + self.sigma_v * v;
    }

    fn transition_logpdf(&self, x: &[f64], x_next: &[f64]) -> Result<f64> {
        let n = self.alpha.len();
        let mean0: f64 = self.alpha.iter().zip(x).map(|(a, b)| a * b).sum();
        let mut off = 0.0;
        let mut scale = 1.0 + mean0 * mean0 + x_next[0] * x_next[0];
        for i in 1..n {
            let d = x_next[i] - x[i - 1];
            off += d * d;
            scale += x_next[i] * x_next[i] + x[i - 1] * x[i - 1];
        }
        if off.sqrt() > SUPPORT_TOL * (1.0 + scale.sqrt()) {
            return Ok(f64::NEG_INFINITY);
        }
        let z = (x_next[0] - mean0) / self.sigma_v;
        Ok(-0.5 * (LN_2PI + z * z) - self.sigma_v.ln())
    }

    fn observation_logpdf(&self, y: &[f64], x: &[f64]) -> f64 {
        self.ar_observation_logdensity(y[0], x)
    }

    fn sample_observation(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        let e: f64 = StudentT::new(self.nu).expect("nu > 0").sample(rng);
        out[0] = self.saturate(x[0]) + self.sigma_e * e;
    }
}

impl LinearGaussianModel for ArSsmSpec {
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
