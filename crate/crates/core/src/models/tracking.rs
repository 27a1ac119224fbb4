use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{LinearGaussianModel, StateSpaceModel};
use crate::bridge::LinearGaussianDynamics;
use crate::error::{Error, Result};
use crate::linalg::{norm, GaussianNoise};
use crate::path::Trajectory;
use crate::rng::RandomSource;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Near-constant-velocity target in 3D observed by a sensor at the origin.
///
/// State `(p_x, p_y, p_z, v_x, v_y, v_z)`. Transition
/// `x' = A x + w`, `w ~ N(0, θ Q_cv)`, with the usual white-acceleration
/// blocks `Q_cv = [[dt³/3 I, dt²/2 I], [dt²/2 I, dt I]]`. Observations are
/// bearing, elevation and range with independent Gaussian errors. Small `θ`
/// makes the transition nearly degenerate.
#[derive(Clone, Debug)]
pub struct TrackingSpec {
    pub theta: f64,
    pub dt: f64,
    pub sigma_bearing: f64,
    pub sigma_elevation: f64,
    pub sigma_range: f64,
    pub m0: Vec<f64>,
    pub p0: DMatrix<f64>,
    /// Inverse-gamma prior `(shape, scale)` on `θ`.
    pub prior: (f64, f64),
    dynamics: LinearGaussianDynamics,
    q_cv_inv: DMatrix<f64>,
    init_noise: GaussianNoise,
    process_noise: GaussianNoise,
}

impl TrackingSpec {
    pub fn new(theta: f64) -> Result<Self> {
        Self::build(
            theta,
            1.0,
            (0.01, 0.01, 0.1),
            vec![100.0, 100.0, 20.0, 1.0, -1.0, 0.0],
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                10.0, 10.0, 10.0, 1.0, 1.0, 1.0,
            ])),
            (1.0, 1.0),
        )
    }

    pub fn build(
        theta: f64,
        dt: f64,
        noise: (f64, f64, f64),
        m0: Vec<f64>,
        p0: DMatrix<f64>,
        prior: (f64, f64),
    ) -> Result<Self> {
        if !(theta > 0.0 && dt > 0.0 && noise.0 > 0.0 && noise.1 > 0.0 && noise.2 > 0.0) {
            return Err(Error::InvalidInput(
                "theta, dt and noise scales must be positive".into(),
            ));
        }
        if !(prior.0 > 0.0 && prior.1 > 0.0) {
            return Err(Error::InvalidInput(
                "inverse-gamma prior needs positive shape and scale".into(),
            ));
        }
        if m0.len() != 6 || p0.shape() != (6, 6) {
            return Err(Error::DimensionMismatch("tracking initial law".into()));
        }
        let q_cv = Self::q_cv(dt);
        let chol = q_cv
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalRankFailure("Q_cv".into()))?;
        let f = chol.l() * theta.sqrt();
        let mut a = DMatrix::identity(6, 6);
        for i in 0..3 {
            a[(i, i + 3)] = dt;
        }
        let dynamics = LinearGaussianDynamics::new(a, f)?;
        Ok(Self {
            q_cv_inv: chol.inverse(),
            init_noise: GaussianNoise::new(&p0)?,
            process_noise: GaussianNoise::new(dynamics.process_cov())?,
            dynamics,
            theta,
            dt,
            sigma_bearing: noise.0,
            sigma_elevation: noise.1,
            sigma_range: noise.2,
            m0,
            p0,
            prior,
        })
    }

    pub fn q_cv(dt: f64) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(6, 6);
        for i in 0..3 {
            q[(i, i)] = dt.powi(3) / 3.0;
            q[(i, i + 3)] = dt * dt / 2.0;
            q[(i + 3, i)] = dt * dt / 2.0;
            q[(i + 3, i + 3)] = dt;
        }
        q
    }

    /// Same model with a different transition scale.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::build(
            theta,
            self.dt,
            (self.sigma_bearing, self.sigma_elevation, self.sigma_range),
            self.m0.clone(),
            self.p0.clone(),
            self.prior,
        )
    }

    /// `(bearing, elevation, range)` of a position seen from the origin.
    pub fn measure(x: &[f64]) -> [f64; 3] {
        let ground = x[0].hypot(x[1]);
        [x[1].atan2(x[0]), x[2].atan2(ground), ground.hypot(x[2])]
    }

    /// `Σ_t r_t^T Q_cv^{-1} r_t` over the innovations `r_t = x_{t+1} − A x_t`.
    pub fn innovation_quadratic(&self, states: &Trajectory) -> f64 {
        let mut total = 0.0;
        let mut pred = [0.0; 6];
        for t in 1..states.len() {
            self.dynamics.apply_a(states.state(t - 1), &mut pred);
            let r = nalgebra::DVector::from_iterator(
                6,
                states.state(t).iter().zip(&pred).map(|(a, b)| a - b),
            );
            total += (r.transpose() * &self.q_cv_inv * &r)[(0, 0)];
        }
        total
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        w
    }
}

fn ln_normal(r: f64, s: f64) -> f64 {
    -0.5 * (LN_2PI + (r / s) * (r / s)) - s.ln()
}

impl StateSpaceModel for TrackingSpec {
    fn state_dim(&self) -> usize {
        6
    }

    fn obs_dim(&self) -> usize {
        3
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
        let mut v = [0.0; 6];
        for vi in &mut v {
            *vi = StandardNormal.sample(rng);
        }
        self.dynamics.add_noise(&v, out);
    }

    fn transition_logpdf(&self, x: &[f64], x_next: &[f64]) -> Result<f64> {
        let mut pred = [0.0; 6];
        self.dynamics.apply_a(x, &mut pred);
        let scale = 1.0 + norm(x_next) + norm(&pred);
        for (p, xn) in pred.iter_mut().zip(x_next) {
            *p = xn - *p;
        }
        Ok(self.process_noise.log_density_residual(&pred, scale))
    }

    fn observation_logpdf(&self, y: &[f64], x: &[f64]) -> f64 {
        let h = Self::measure(x);
        ln_normal(wrap_angle(y[0] - h[0]), self.sigma_bearing)
            + ln_normal(y[1] - h[1], self.sigma_elevation)
            + ln_normal(y[2] - h[2], self.sigma_range)
    }

    fn sample_observation(&self, x: &[f64], rng: &mut RandomSource, out: &mut [f64]) {
        let h = Self::measure(x);
        let e: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        out[0] = wrap_angle(h[0] + self.sigma_bearing * e[0]);
        out[1] = h[1] + self.sigma_elevation * e[1];
        out[2] = h[2] + self.sigma_range * e[2];
    }
}

impl LinearGaussianModel for TrackingSpec {
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

/// Parameters `(shape, scale)` of the inverse-gamma full conditional of `θ`.
pub fn theta_posterior(spec: &TrackingSpec, states: &Trajectory) -> (f64, f64) {
    let (a0, b0) = spec.prior;
    let steps = states.len().saturating_sub(1) as f64;
    (
        a0 + 3.0 * steps,
        b0 + 0.5 * spec.innovation_quadratic(states),
    )
}

/// Draw `θ ~ p(θ | x_{0:T})` under the conjugate inverse-gamma prior.
pub fn tracking_theta_conditional(
    spec: &TrackingSpec,
    states: &Trajectory,
    rng: &mut RandomSource,
) -> Result<f64> {
    if states.dim() != 6 {
        return Err(Error::DimensionMismatch(
            "tracking states must be 6-dimensional".into(),
        ));
    }
    let (shape, scale) = theta_posterior(spec, states);
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::NumericalRankFailure(
            "innovation quadratic form".into(),
        ));
    }
    let g: f64 = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .sample(rng);
    Ok(1.0 / g)
}
