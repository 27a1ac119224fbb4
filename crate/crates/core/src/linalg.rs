//! Small dense helpers on top of nalgebra: allocation-free products on flat
//! slices and a spectral representation of possibly singular Gaussians.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Relative cutoff below which singular values (or PSD eigenvalues) count as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Relative tolerance for deciding that a point lies on a degenerate support.
pub const SUPPORT_TOL: f64 = 1e-7;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `out = m · x` for a column-major matrix.
pub fn matvec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = m.shape();
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    out.fill(0.0);
    let data = m.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = &data[j * rows..(j + 1) * rows];
        for (o, c) in out.iter_mut().zip(col) {
            *o += c * xj;
        }
    }
}

/// `out += m · x`.
pub fn matvec_add(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    let data = m.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let col = &data[j * rows..(j + 1) * rows];
        for (o, c) in out.iter_mut().zip(col) {
            *o += c * xj;
        }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Numerical rank from singular values above `tol × σ_max`.
pub fn matrix_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Moore–Penrose inverse of a symmetric PSD matrix, dropping eigenvalues below
/// `RANK_TOL × max(λ_max, scale)`.
pub fn psd_pinv(m: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmax = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(scale);
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > RANK_TOL * lmax && l > 0.0 {
            let u = eig.eigenvectors.column(k);
            out += (u * u.transpose()) / l;
        }
    }
    out
}

/// Zero-mean Gaussian with a fixed, possibly singular covariance, stored by its
/// support basis and positive eigenvalues.
///
/// Densities are taken with respect to Lebesgue measure on the support; points
/// off the support (beyond a relative tolerance) have log-density `-inf`.
#[derive(Clone, Debug)]
pub struct GaussianNoise {
    dim: usize,
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    factor: DMatrix<f64>,
    log_pdet: f64,
}

impl GaussianNoise {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        Self::with_scale(cov, 0.0)
    }

    /// As [`GaussianNoise::new`], treating eigenvalues as zero relative to
    /// `max(λ_max, scale)`. Conditional covariances that should vanish exactly
    /// pass the scale of the unconditioned covariance here.
    pub fn with_scale(cov: &DMatrix<f64>, scale: f64) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariance entry".into()));
        }
        let eig = SymmetricEigen::new(symmetrize(cov));
        let lmax = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0, f64::max)
            .max(scale);
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * lmax.max(1.0)) {
            return Err(Error::InvalidInput(
                "covariance is not positive semidefinite".into(),
            ));
        }
        let keep: Vec<usize> = (0..n)
            .filter(|&k| eig.eigenvalues[k] > RANK_TOL * lmax && eig.eigenvalues[k] > 0.0)
            .collect();
        let r = keep.len();
        let mut basis = DMatrix::zeros(n, r);
        let mut factor = DMatrix::zeros(n, r);
        let mut eigenvalues = Vec::with_capacity(r);
        for (c, &k) in keep.iter().enumerate() {
            let l = eig.eigenvalues[k];
            basis.set_column(c, &eig.eigenvectors.column(k));
            factor.set_column(c, &(eig.eigenvectors.column(k) * l.sqrt()));
            eigenvalues.push(l);
        }
        let log_pdet = eigenvalues.iter().map(|l| l.ln()).sum();
        Ok(Self {
            dim: n,
            basis,
            eigenvalues,
            factor,
            log_pdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Log pseudo-determinant of the covariance.
    pub fn log_pdet(&self) -> f64 {
        self.log_pdet
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Coordinates of `r` in the support basis and the norm of what is left over.
    pub fn project(&self, r: &[f64]) -> (Vec<f64>, f64) {
        let rank = self.rank();
        let mut z = vec![0.0; rank];
        let data = self.basis.as_slice();
        for (c, zc) in z.iter_mut().enumerate() {
            let col = &data[c * self.dim..(c + 1) * self.dim];
            *zc = col.iter().zip(r).map(|(u, v)| u * v).sum();
        }
        let mut off = 0.0;
        for i in 0..self.dim {
            let mut v = r[i];
            for (c, zc) in z.iter().enumerate() {
                v -= data[c * self.dim + i] * zc;
            }
            off += v * v;
        }
        (z, off.sqrt())
    }

    /// Log-density of the residual `r = x − mean`. `scale` sets the absolute
    /// support tolerance `SUPPORT_TOL × scale`; callers pass `1 + ‖x‖ + ‖mean‖`.
    pub fn log_density_residual(&self, r: &[f64], scale: f64) -> f64 {
        let (z, off) = self.project(r);
        if off > SUPPORT_TOL * scale {
            return f64::NEG_INFINITY;
        }
        let quad: f64 = z
            .iter()
            .zip(&self.eigenvalues)
            .map(|(z, l)| z * z / l)
            .sum();
        -0.5 * (self.rank() as f64 * LN_2PI + self.log_pdet + quad)
    }

    /// Adds one draw to `out`.
    pub fn sample_add(&self, rng: &mut RandomSource, out: &mut [f64]) {
        let rank = self.rank();
        if rank == 0 {
            return;
        }
        let mut xi = [0.0; 16];
        let mut heap;
        let xi: &mut [f64] = if rank <= 16 {
            &mut xi[..rank]
        } else {
            heap = vec![0.0; rank];
            &mut heap
        };
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        matvec_add(&self.factor, xi, out);
    }
}

/// Gaussian with explicit mean on top of [`GaussianNoise`].
#[derive(Clone, Debug)]
pub struct GaussianDensity {
    pub mean: Vec<f64>,
    pub noise: GaussianNoise,
    pub covariance: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.len() != covariance.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, covariance is {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        if asym > 1e-10 * covariance.abs().max().max(1.0) {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let noise = GaussianNoise::new(&covariance)?;
        Ok(Self {
            mean,
            noise,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.noise.rank()
    }

    /// Orthonormal basis of the covariance's column space.
    pub fn support_basis(&self) -> &DMatrix<f64> {
        self.noise.basis()
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let scale = 1.0 + norm(x) + norm(&self.mean);
        self.noise.log_density_residual(&r, scale)
    }

    pub fn sample(&self, rng: &mut RandomSource) -> Vec<f64> {
        let mut out = self.mean.clone();
        self.noise.sample_add(rng, &mut out);
        out
    }
}
