//! Kalman filter, RTS smoother and forward-filtering backward-sampling for
//! linear-Gaussian state-space models. These are the exact references the
//! particle samplers are checked against.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{psd_pinv, symmetrize, GaussianNoise};
use crate::models::LgssmSpec;
use crate::path::Trajectory;
use crate::rng::RandomSource;

#[derive(Clone, Debug)]
pub struct FilterOutput {
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug)]
pub struct SmootherOutput {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `Cov(x_t, x_{t+1} | y_{1:T})` for `t = 0..T−1`.
    pub lag_one_covs: Vec<DMatrix<f64>>,
}

pub fn kalman_filter(spec: &LgssmSpec, ys: &Trajectory) -> Result<FilterOutput> {
    let p = spec.h.nrows();
    if ys.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "observations have dimension {}, model expects {p}",
            ys.dim()
        )));
    }
    let a = spec.dynamics.a();
    let q = spec.dynamics.process_cov();
    let h = &spec.h;
    let horizon = ys.len();
    let mut out = FilterOutput {
        predicted_means: Vec::with_capacity(horizon),
        predicted_covs: Vec::with_capacity(horizon),
        filtered_means: Vec::with_capacity(horizon),
        filtered_covs: Vec::with_capacity(horizon),
        log_likelihood: 0.0,
    };
    let mut m = DVector::from_column_slice(&spec.m0);
    let mut cov = spec.p0.clone();
    for t in 0..horizon {
        if t > 0 {
            m = a * &m;
            cov = symmetrize(&(a * &cov * a.transpose() + q));
        }
        out.predicted_means.push(m.clone());
        out.predicted_covs.push(cov.clone());
        let y = DVector::from_column_slice(ys.state(t));
        let innov = &y - h * &m;
        let s = symmetrize(&(h * &cov * h.transpose() + &spec.r));
        let s_noise = GaussianNoise::new(&s)?;
        if s_noise.rank() < p {
            return Err(Error::NumericalRankFailure(
                "singular innovation covariance".into(),
            ));
        }
        out.log_likelihood += s_noise.log_density_residual(innov.as_slice(), 1.0 + innov.norm());
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NumericalRankFailure("innovation covariance".into()))?;
        let k = &cov * h.transpose() * s_inv;
        m = &m + &k * innov;
        cov = symmetrize(&(&cov - &k * &s * k.transpose()));
        out.filtered_means.push(m.clone());
        out.filtered_covs.push(cov.clone());
    }
    Ok(out)
}

fn smoother_gain(
    a: &DMatrix<f64>,
    filtered: &DMatrix<f64>,
    predicted_next: &DMatrix<f64>,
) -> DMatrix<f64> {
    let scale = predicted_next
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    filtered * a.transpose() * psd_pinv(predicted_next, scale)
}

pub fn rts_smoother(spec: &LgssmSpec, filter: &FilterOutput) -> SmootherOutput {
    let a = spec.dynamics.a();
    let horizon = filter.filtered_means.len();
    let mut means = filter.filtered_means.clone();
    let mut covs = filter.filtered_covs.clone();
    let mut lag = vec![DMatrix::zeros(a.nrows(), a.nrows()); horizon.saturating_sub(1)];
    for t in (0..horizon.saturating_sub(1)).rev() {
        let j = smoother_gain(a, &filter.filtered_covs[t], &filter.predicted_covs[t + 1]);
        means[t] =
            &filter.filtered_means[t] + &j * (&means[t + 1] - &filter.predicted_means[t + 1]);
        covs[t] = symmetrize(
            &(&filter.filtered_covs[t]
                + &j * (&covs[t + 1] - &filter.predicted_covs[t + 1]) * j.transpose()),
        );
        lag[t] = &j * &covs[t + 1];
    }
    SmootherOutput {
        means,
        covs,
        lag_one_covs: lag,
    }
}

/// One exact draw from `p(x_{1:T} | y_{1:T})`.
pub fn ffbs_sample(
    spec: &LgssmSpec,
    ys: &Trajectory,
    rng: &mut RandomSource,
) -> Result<Trajectory> {
    let filter = kalman_filter(spec, ys)?;
    ffbs_from_filter(spec, &filter, rng)
}

/// Backward simulation over a precomputed filter pass.
pub fn ffbs_from_filter(
    spec: &LgssmSpec,
    filter: &FilterOutput,
    rng: &mut RandomSource,
) -> Result<Trajectory> {
    let a = spec.dynamics.a();
    let n = a.nrows();
    let horizon = filter.filtered_means.len();
    let mut traj = Trajectory::zeros(n, horizon);
    let last = horizon - 1;
    let noise = GaussianNoise::new(&filter.filtered_covs[last])?;
    traj.state_mut(last)
        .copy_from_slice(filter.filtered_means[last].as_slice());
    noise.sample_add(rng, traj.state_mut(last));
    for t in (0..last).rev() {
        let j = smoother_gain(a, &filter.filtered_covs[t], &filter.predicted_covs[t + 1]);
        let next = DVector::from_column_slice(traj.state(t + 1));
        let mean = &filter.filtered_means[t] + &j * (next - &filter.predicted_means[t + 1]);
        let cov = symmetrize(
            &(&filter.filtered_covs[t] - &j * &filter.predicted_covs[t + 1] * j.transpose()),
        );
        let scale = filter.filtered_covs[t]
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        let noise = GaussianNoise::with_scale(&cov, scale)?;
        traj.state_mut(t).copy_from_slice(mean.as_slice());
        noise.sample_add(rng, traj.state_mut(t));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_walk(r: f64) -> LgssmSpec {
        LgssmSpec::scalar(1.0, 1.0, 1.0, r, 0.0, 1.0).unwrap()
    }

    #[test]
    fn steady_state_gain_matches_riccati_fixed_point() {
        // Random walk with unit noises observed directly: the predicted
        // variance solves P = P/(P+1) + 1, i.e. P = φ (golden ratio), so the
        // gain is φ/(φ+1) = 1/φ.
        let spec = random_walk(1.0);
        let ys = Trajectory::from_scalars(&[0.0; 60]);
        let out = kalman_filter(&spec, &ys).unwrap();
        let mut p: f64 = 1.0;
        for _ in 0..200 {
            p = p / (p + 1.0) + 1.0;
        }
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((p - phi).abs() < 1e-12);
        let pred = out.predicted_covs[59][(0, 0)];
        let gain = pred / (pred + 1.0);
        assert!((gain - 1.0 / phi).abs() < 1e-12);
    }

    #[test]
    fn three_step_hand_case() {
        // x0 ~ N(0, 1), x_{t+1} = x_t + v, y = x + e, unit noises, y = (1, 2, 0).
        let spec = random_walk(1.0);
        let ys = Trajectory::from_scalars(&[1.0, 2.0, 0.0]);
        let out = kalman_filter(&spec, &ys).unwrap();
        // t=0: P=1, K=1/2, m=1/2, P=1/2.
        // t=1: P=3/2, K=3/5, m=1/2+3/5·3/2=7/5, P=3/5.
        // t=2: P=8/5, K=8/13, m=7/5−8/13·7/5=7/13, P=8/13.
        let m: Vec<f64> = out.filtered_means.iter().map(|v| v[0]).collect();
        let p: Vec<f64> = out.filtered_covs.iter().map(|v| v[(0, 0)]).collect();
        for (a, b) in m.iter().zip([0.5, 1.4, 7.0 / 13.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in p.iter().zip([0.5, 0.6, 8.0 / 13.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let ln_n = |y: f64, v: f64| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + y * y / v);
        let ll = ln_n(1.0, 2.0) + ln_n(2.0 - 0.5, 2.5) + ln_n(0.0 - 1.4, 2.6);
        assert!((out.log_likelihood - ll).abs() < 1e-12);
    }

    #[test]
    fn tiny_observation_noise_tracks_observations() {
        let spec = random_walk(1e-8);
        let ys = Trajectory::from_scalars(&[0.3, -1.2, 2.5]);
        let out = kalman_filter(&spec, &ys).unwrap();
        for t in 0..3 {
            assert!((out.filtered_means[t][0] - ys.state(t)[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn single_step_ffbs_draws_filtered_law() {
        let spec = random_walk(1.0);
        let ys = Trajectory::from_scalars(&[2.0]);
        let mut rng = RandomSource::new(4);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| ffbs_sample(&spec, &ys, &mut rng).unwrap().state(0)[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        // Filtered law N(1, 1/2); SE of the mean = sqrt(0.5/2e4) = 0.005.
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }
}
