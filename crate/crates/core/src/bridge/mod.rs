//! Degenerate linear-Gaussian dynamics `x_{t+1} = A x_t + F v_{t+1}`,
//! `v ~ N(0, I_d)`, with `F F^T` possibly rank-deficient.
//!
//! A single step may be confined to a lower-dimensional affine set, but
//! `ℓ + 1` steps reach all of `R^n` once `C_ℓ = [F, AF, …, A^ℓ F]` has rank
//! `n`. The bridge sampler draws the `ℓ` intermediate states between two fixed
//! endpoints by Kalman filtering the window with the far endpoint as a final
//! pseudo-observation, then simulating backwards.

mod kalman;

pub use kalman::{ffbs_sample, kalman_filter, rts_smoother, FilterOutput, SmootherOutput};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    matrix_rank, matvec, matvec_add, norm, psd_pinv, symmetrize, GaussianDensity, GaussianNoise,
};
use crate::rng::RandomSource;

pub use crate::linalg::RANK_TOL;

#[derive(Clone, Debug)]
pub struct LinearGaussianDynamics {
    a: DMatrix<f64>,
    f: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl LinearGaussianDynamics {
    pub fn new(a: DMatrix<f64>, f: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || f.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, F is {}x{}",
                a.nrows(),
                a.ncols(),
                f.nrows(),
                f.ncols()
            )));
        }
        if a.iter().chain(f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in A or F".into()));
        }
        let q = &f * f.transpose();
        Ok(Self { a, f, q })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// `F F^T`.
    pub fn process_cov(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `out = A x`.
    pub fn apply_a(&self, x: &[f64], out: &mut [f64]) {
        matvec(&self.a, x, out);
    }

    /// `out += F v`.
    pub fn add_noise(&self, v: &[f64], out: &mut [f64]) {
        matvec_add(&self.f, v, out);
    }

    /// `A^k`.
    pub fn a_power(&self, k: usize) -> DMatrix<f64> {
        let n = self.state_dim();
        (0..k).fold(DMatrix::identity(n, n), |acc, _| &self.a * acc)
    }
}

/// `[F, AF, …, A^ℓ F]`.
pub fn controllability_matrix(dyn_: &LinearGaussianDynamics, ell: usize) -> DMatrix<f64> {
    let (n, d) = (dyn_.state_dim(), dyn_.noise_dim());
    let mut c = DMatrix::zeros(n, (ell + 1) * d);
    let mut block = dyn_.f.clone();
    for k in 0..=ell {
        c.view_mut((0, k * d), (n, d)).copy_from(&block);
        block = &dyn_.a * block;
    }
    c
}

#[derive(Clone, Debug)]
pub struct ControllabilityData {
    pub ell: usize,
    pub c_ell: DMatrix<f64>,
    pub rank: usize,
    pub tolerance: f64,
}

/// Smallest `ℓ ∈ 0..n` with `rank C_ℓ = n`.
pub fn controllability_index(
    dyn_: &LinearGaussianDynamics,
    tol: f64,
) -> Result<ControllabilityData> {
    let n = dyn_.state_dim();
    let mut rank = 0;
    for ell in 0..n {
        let c = controllability_matrix(dyn_, ell);
        rank = matrix_rank(&c, tol);
        if rank == n {
            return Ok(ControllabilityData {
                ell,
                c_ell: c,
                rank,
                tolerance: tol,
            });
        }
    }
    Err(Error::NotControllable { rank, n })
}

/// Law of `x_{t+ℓ}` given `x_{t−1} = x_start`: `N(A^{ℓ+1} x, C_ℓ C_ℓ^T)`.
pub fn ell_step_marginal(
    dyn_: &LinearGaussianDynamics,
    x_start: &[f64],
    ell: usize,
) -> Result<GaussianDensity> {
    if x_start.len() != dyn_.state_dim() {
        return Err(Error::DimensionMismatch("x_start".into()));
    }
    let c = controllability_matrix(dyn_, ell);
    let mean = dyn_.a_power(ell + 1) * nalgebra::DVector::from_column_slice(x_start);
    GaussianDensity::new(mean.as_slice().to_vec(), symmetrize(&(&c * c.transpose())))
}

/// Where the window starts from.
#[derive(Clone, Debug)]
pub enum BridgeStart {
    /// The state just before the window is known; the first window state is `A x + F v`.
    Point,
    /// The first window state is drawn from `N(mean, cov)` (the initial law).
    Prior { mean: Vec<f64>, cov: DMatrix<f64> },
}

/// Precomputed sampler for `p(x_t, …, x_{t+L−1} | start, x_{t+L})`.
///
/// All covariances and gains depend only on `(A, F, L)` and the start type, so
/// they are computed once; each draw then costs `O(L n²)`. Without a terminal
/// endpoint the sampler draws the window from the forward dynamics alone.
#[derive(Clone, Debug)]
pub struct BridgeSampler {
    dynamics: LinearGaussianDynamics,
    len: usize,
    start: BridgeStart,
    terminal: bool,
    /// Gain of the terminal update.
    gain: DMatrix<f64>,
    /// Law of the endpoint innovation `x_end − A m_{L−1}`.
    endpoint: GaussianNoise,
    /// Law of the last window state after the terminal update.
    last: GaussianNoise,
    /// Backward gains `J_k` and conditional laws of `x_k | x_{k+1}` for `k < L − 1`.
    back_gains: Vec<DMatrix<f64>>,
    back_noise: Vec<GaussianNoise>,
}

impl BridgeSampler {
    pub fn new(
        dynamics: &LinearGaussianDynamics,
        len: usize,
        start: BridgeStart,
        terminal: bool,
    ) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidInput(
                "bridge window must hold at least one state".into(),
            ));
        }
        let n = dynamics.state_dim();
        let a = dynamics.a();
        let q = dynamics.process_cov();
        let mut p = Vec::with_capacity(len);
        p.push(match &start {
            BridgeStart::Point => q.clone(),
            BridgeStart::Prior { mean, cov } => {
                if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
                    return Err(Error::DimensionMismatch("bridge prior".into()));
                }
                cov.clone()
            }
        });
        for k in 1..len {
            let next = symmetrize(&(a * &p[k - 1] * a.transpose() + q));
            p.push(next);
        }
        let lmax = |m: &DMatrix<f64>| {
            m.symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(0.0, f64::max)
        };
        let p_last = &p[len - 1];
        let s = symmetrize(&(a * p_last * a.transpose() + q));
        let endpoint = GaussianNoise::new(&s)?;
        let (gain, last) = if terminal {
            let s_pinv = psd_pinv(&s, 0.0);
            let gain = p_last * a.transpose() * s_pinv;
            let post = symmetrize(&(p_last - &gain * &s * gain.transpose()));
            let last = GaussianNoise::with_scale(&post, lmax(p_last))?;
            (gain, last)
        } else {
            (DMatrix::zeros(n, n), GaussianNoise::new(p_last)?)
        };
        let mut back_gains = Vec::with_capacity(len.saturating_sub(1));
        let mut back_noise = Vec::with_capacity(len.saturating_sub(1));
        for k in 0..len - 1 {
            let pk = &p[k];
            let pnext = &p[k + 1];
            let j = pk * a.transpose() * psd_pinv(pnext, 0.0);
            let cond = symmetrize(&(pk - &j * pnext * j.transpose()));
            back_noise.push(GaussianNoise::with_scale(&cond, lmax(pk))?);
            back_gains.push(j);
        }
        Ok(Self {
            dynamics: dynamics.clone(),
            len,
            start,
            terminal,
            gain,
            endpoint,
            last,
            back_gains,
            back_noise,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn has_terminal(&self) -> bool {
        self.terminal
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    /// Unconditioned means `m_k` of the window states, flat.
    fn prior_means(&self, x_start: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.state_dim();
        let mut m = vec![0.0; self.len * n];
        match (&self.start, x_start) {
            (BridgeStart::Point, Some(x)) => {
                if x.len() != n {
                    return Err(Error::DimensionMismatch("x_start".into()));
                }
                self.dynamics.apply_a(x, &mut m[..n]);
            }
            (BridgeStart::Prior { mean, .. }, None) => m[..n].copy_from_slice(mean),
            (BridgeStart::Point, None) => {
                return Err(Error::InvalidInput("bridge needs a start state".into()))
            }
            (BridgeStart::Prior { .. }, Some(_)) => {
                return Err(Error::InvalidInput(
                    "prior-start bridge takes no start state".into(),
                ))
            }
        }
        for k in 1..self.len {
            let (prev, next) = m.split_at_mut(k * n);
            self.dynamics.apply_a(&prev[(k - 1) * n..], &mut next[..n]);
        }
        Ok(m)
    }

    fn end_residual(&self, m_last: &[f64], x_end: &[f64]) -> (Vec<f64>, f64) {
        let n = self.state_dim();
        let mut pred = vec![0.0; n];
        self.dynamics.apply_a(m_last, &mut pred);
        let r: Vec<f64> = x_end.iter().zip(&pred).map(|(e, p)| e - p).collect();
        (r, 1.0 + norm(x_end) + norm(&pred))
    }

    /// `log p(x_end | start)`, `-inf` when `x_end` is unreachable.
    pub fn endpoint_logpdf(&self, x_start: Option<&[f64]>, x_end: &[f64]) -> Result<f64> {
        let m = self.prior_means(x_start)?;
        let n = self.state_dim();
        let (r, scale) = self.end_residual(&m[(self.len - 1) * n..], x_end);
        Ok(self.endpoint.log_density_residual(&r, scale))
    }

    fn terminal_mean(&self, m: &[f64], x_end: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.state_dim();
        let m_last = &m[(self.len - 1) * n..];
        let mut mean = m_last.to_vec();
        if self.terminal {
            let x_end =
                x_end.ok_or_else(|| Error::InvalidInput("bridge needs an endpoint".into()))?;
            if x_end.len() != n {
                return Err(Error::DimensionMismatch("x_end".into()));
            }
            let (r, scale) = self.end_residual(m_last, x_end);
            let (z, off) = self.endpoint.project(&r);
            if off > crate::linalg::SUPPORT_TOL * scale {
                return Err(Error::NumericalRankFailure(format!(
                    "endpoint residual {off:.3e} lies outside the reachable subspace"
                )));
            }
            // Project onto the support before applying the gain.
            let mut r_proj = vec![0.0; n];
            matvec(self.endpoint.basis(), &z, &mut r_proj);
            matvec_add(&self.gain, &r_proj, &mut mean);
        }
        Ok(mean)
    }

    /// Draw the window into `out` (`len × n`, time-major).
    pub fn sample(
        &self,
        x_start: Option<&[f64]>,
        x_end: Option<&[f64]>,
        rng: &mut RandomSource,
        out: &mut [f64],
    ) -> Result<()> {
        let n = self.state_dim();
        debug_assert_eq!(out.len(), self.len * n);
        let m = self.prior_means(x_start)?;
        let last = self.terminal_mean(&m, x_end)?;
        let l = self.len - 1;
        out[l * n..].copy_from_slice(&last);
        self.last.sample_add(rng, &mut out[l * n..]);
        let mut pred = vec![0.0; n];
        let mut diff = vec![0.0; n];
        for k in (0..l).rev() {
            let (head, tail) = out.split_at_mut((k + 1) * n);
            let next = &tail[..n];
            let mk = &m[k * n..(k + 1) * n];
            self.dynamics.apply_a(mk, &mut pred);
            for i in 0..n {
                diff[i] = next[i] - pred[i];
            }
            let cur = &mut head[k * n..];
            cur.copy_from_slice(mk);
            matvec_add(&self.back_gains[k], &diff, cur);
            self.back_noise[k].sample_add(rng, cur);
        }
        Ok(())
    }

    /// `log q(window | start, x_end)`, with respect to the same base measure
    /// for every start and endpoint.
    pub fn log_density(
        &self,
        x_start: Option<&[f64]>,
        x_end: Option<&[f64]>,
        window: &[f64],
    ) -> Result<f64> {
        let n = self.state_dim();
        if window.len() != self.len * n {
            return Err(Error::DimensionMismatch("bridge window".into()));
        }
        let m = self.prior_means(x_start)?;
        let last = match self.terminal_mean(&m, x_end) {
            Ok(v) => v,
            Err(Error::NumericalRankFailure(_)) => return Ok(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        };
        let l = self.len - 1;
        let x_last = &window[l * n..];
        let r: Vec<f64> = x_last.iter().zip(&last).map(|(a, b)| a - b).collect();
        let mut total = self
            .last
            .log_density_residual(&r, 1.0 + norm(x_last) + norm(&last));
        let mut pred = vec![0.0; n];
        let mut mean = vec![0.0; n];
        for k in (0..l).rev() {
            if total == f64::NEG_INFINITY {
                break;
            }
            let next = &window[(k + 1) * n..(k + 2) * n];
            let mk = &m[k * n..(k + 1) * n];
            self.dynamics.apply_a(mk, &mut pred);
            let diff: Vec<f64> = next.iter().zip(&pred).map(|(a, b)| a - b).collect();
            mean.copy_from_slice(mk);
            matvec_add(&self.back_gains[k], &diff, &mut mean);
            let xk = &window[k * n..(k + 1) * n];
            let r: Vec<f64> = xk.iter().zip(&mean).map(|(a, b)| a - b).collect();
            total += self.back_noise[k].log_density_residual(&r, 1.0 + norm(xk) + norm(&mean));
        }
        Ok(total)
    }
}

/// One draw of the `ℓ` states strictly between `x_start` and `x_end`.
pub fn kalman_bridge_sample(
    dynamics: &LinearGaussianDynamics,
    x_start: &[f64],
    x_end: &[f64],
    ell: usize,
    rng: &mut RandomSource,
) -> Result<Vec<f64>> {
    if ell == 0 {
        // Nothing to draw; only reachability of the endpoint is checked.
        let marginal = ell_step_marginal(dynamics, x_start, 0)?;
        if marginal.logpdf(x_end) == f64::NEG_INFINITY {
            return Err(Error::NumericalRankFailure(
                "endpoint lies outside the reachable subspace".into(),
            ));
        }
        return Ok(Vec::new());
    }
    let sampler = BridgeSampler::new(dynamics, ell, BridgeStart::Point, true)?;
    let mut out = vec![0.0; ell * dynamics.state_dim()];
    sampler.sample(Some(x_start), Some(x_end), rng, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar5() -> LinearGaussianDynamics {
        let alpha = [0.9, -0.8, 0.7, -0.6, 0.5];
        let mut a = DMatrix::zeros(5, 5);
        for (j, &v) in alpha.iter().enumerate() {
            a[(0, j)] = v;
        }
        for i in 1..5 {
            a[(i, i - 1)] = 1.0;
        }
        let mut f = DMatrix::zeros(5, 1);
        f[(0, 0)] = 1.0;
        LinearGaussianDynamics::new(a, f).unwrap()
    }

    fn scalar(a: f64, f: f64) -> LinearGaussianDynamics {
        LinearGaussianDynamics::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, f),
        )
        .unwrap()
    }

    #[test]
    fn index_of_invertible_f_is_zero() {
        let d = LinearGaussianDynamics::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.3]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 2.0]),
        )
        .unwrap();
        assert_eq!(controllability_index(&d, RANK_TOL).unwrap().ell, 0);
    }

    #[test]
    fn index_of_ar5_is_four() {
        let c = controllability_index(&ar5(), RANK_TOL).unwrap();
        assert_eq!(c.ell, 4);
        assert_eq!(c.rank, 5);
        assert_eq!(c.c_ell.shape(), (5, 5));
    }

    #[test]
    fn identity_with_single_input_is_not_controllable() {
        let mut f = DMatrix::zeros(2, 1);
        f[(0, 0)] = 1.0;
        let d = LinearGaussianDynamics::new(DMatrix::identity(2, 2), f).unwrap();
        assert_eq!(
            controllability_index(&d, RANK_TOL).unwrap_err(),
            Error::NotControllable { rank: 1, n: 2 }
        );
    }

    #[test]
    fn scalar_marginal() {
        let g = ell_step_marginal(&scalar(0.7, 2.0), &[3.0], 0).unwrap();
        assert!((g.mean[0] - 2.1).abs() < 1e-15);
        assert!((g.covariance[(0, 0)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn nilpotent_marginal_expands() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let f = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let d = LinearGaussianDynamics::new(a.clone(), f.clone()).unwrap();
        let g = ell_step_marginal(&d, &[1.0, 1.0], 1).unwrap();
        let q = &f * f.transpose();
        let expected = &q + &a * &q * a.transpose();
        assert!((&g.covariance - expected).abs().max() < 1e-14);
        assert_eq!(g.mean, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_bridge_matches_bivariate_conditioning() {
        // x1 = a x0 + f v1, x2 = a x1 + f v2; x1 | x0, x2 is Gaussian with
        // precision 1/f² + a²/f² and mean (a x0 + a x2) / (1 + a²).
        let (a, f) = (0.8, 1.5);
        let d = scalar(a, f);
        let s = BridgeSampler::new(&d, 1, BridgeStart::Point, true).unwrap();
        let (x0, x2) = (1.0, -2.0);
        let var = f * f / (1.0 + a * a);
        let mean = a * (x0 + x2) / (1.0 + a * a);
        let at = |x: f64| s.log_density(Some(&[x0]), Some(&[x2]), &[x]).unwrap();
        let expected =
            |x: f64| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var);
        for x in [-1.0, 0.0, 0.3, 2.0] {
            assert!((at(x) - expected(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn small_noise_bridge_follows_noiseless_path() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let f = DMatrix::identity(2, 2) * 1e-6;
        let d = LinearGaussianDynamics::new(a.clone(), f).unwrap();
        let x0 = [1.0, 2.0];
        let mut path = vec![x0.to_vec()];
        for _ in 0..4 {
            let prev = path.last().unwrap();
            let mut next = vec![0.0; 2];
            d.apply_a(prev, &mut next);
            path.push(next);
        }
        let mut rng = RandomSource::new(1);
        let xi = kalman_bridge_sample(&d, &x0, &path[4], 3, &mut rng).unwrap();
        for k in 0..3 {
            for i in 0..2 {
                assert!((xi[k * 2 + i] - path[k + 1][i]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn ar5_bridge_is_deterministic_and_consistent() {
        let d = ar5();
        let mut rng = RandomSource::new(3);
        let mut x = vec![0.3, -0.2, 0.1, 0.5, -0.4];
        let mut path = vec![x.clone()];
        for _ in 0..5 {
            let mut next = vec![0.0; 5];
            d.apply_a(&x, &mut next);
            next[0] +=
                rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
            path.push(next.clone());
            x = next;
        }
        let a = kalman_bridge_sample(&d, &path[0], &path[5], 4, &mut rng).unwrap();
        let b = kalman_bridge_sample(&d, &path[0], &path[5], 4, &mut rng).unwrap();
        for k in 0..4 {
            for i in 0..5 {
                assert!((a[k * 5 + i] - path[k + 1][i]).abs() < 1e-9);
                assert_eq!(a[k * 5 + i], b[k * 5 + i]);
            }
        }
    }

    #[test]
    fn unreachable_endpoint_is_reported() {
        let d = ar5();
        let s = BridgeSampler::new(&d, 2, BridgeStart::Point, true).unwrap();
        let start = [0.0; 5];
        let end = [1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(
            s.endpoint_logpdf(Some(&start), &end).unwrap(),
            f64::NEG_INFINITY
        );
        let mut rng = RandomSource::new(0);
        let mut out = vec![0.0; 10];
        assert!(matches!(
            s.sample(Some(&start), Some(&end), &mut rng, &mut out),
            Err(Error::NumericalRankFailure(_))
        ));
    }
}
