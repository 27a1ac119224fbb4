//! Chain diagnostics: autocorrelation, batch-means error bars, ancestor-update
//! rates, RMSE, KS agreement and histograms, plus CSV output.

use std::fmt::Display;
use std::io::Write;

use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Autocorrelation at lags `0..=max_lag`, using the biased (divide by `T`)
/// autocovariance so the sequence is positive semidefinite.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag {
        return Err(Error::TooShort(format!(
            "series of length {n} for max lag {max_lag}"
        )));
    }
    let m = mean(series);
    let c: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0: f64 = c.iter().map(|x| x * x).sum();
    if !(c0 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|k| {
            c[..n - k]
                .iter()
                .zip(&c[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / c0
        })
        .collect())
}

/// Root mean squared difference over all time steps and components.
pub fn posterior_rmse(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} reference values",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::EmptyLog);
    }
    let ss: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / estimate.len() as f64).sqrt())
}

/// Fraction of sweeps whose reference ancestry changed, per time step.
pub fn update_rate(logs: &[Vec<bool>]) -> Result<Vec<f64>> {
    let first = logs.first().ok_or(Error::EmptyLog)?;
    let horizon = first.len();
    let mut counts = vec![0usize; horizon];
    for log in logs {
        if log.len() != horizon {
            return Err(Error::DimensionMismatch(
                "sweep logs of different lengths".into(),
            ));
        }
        for (c, &changed) in counts.iter_mut().zip(log) {
            *c += usize::from(changed);
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / logs.len() as f64)
        .collect())
}

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov distribution tail `Q_KS(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS statistic with the asymptotic p-value
/// `Q_KS((√n_e + 0.12 + 0.11/√n_e) D)`, `n_e = n m / (n + m)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_tail((en + 0.12 + 0.11 / en) * d),
    })
}

/// Batch-means standard error of the mean with `n_batches` equal batches;
/// trailing samples that do not fill a batch are dropped.
pub fn batch_means_se(series: &[f64], n_batches: usize) -> Result<f64> {
    if n_batches < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 batches, got {n_batches}"
        )));
    }
    let size = series.len() / n_batches;
    if size == 0 {
        return Err(Error::TooShort(format!(
            "{} samples for {n_batches} batches",
            series.len()
        )));
    }
    let means: Vec<f64> = series[..size * n_batches].chunks(size).map(mean).collect();
    let grand = mean(&means);
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok((var / n_batches as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Histogram with Freedman–Diaconis bin width `2 IQR n^{−1/3}`.
pub fn histogram(samples: &[f64]) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    let bins = if width > 0.0 && hi > lo {
        (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
    } else {
        1
    };
    let edges: Vec<f64> = (0..=bins)
        .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
        .collect();
    histogram_with_edges(samples, &edges)
}

/// Histogram on fixed edges; values outside `[edges[0], edges[last]]` are dropped,
/// the last bin is closed on the right.
pub fn histogram_with_edges(samples: &[f64], edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidInput(
            "edges must be nondecreasing with at least two entries".into(),
        ));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        if x < edges[0] || x > edges[bins] {
            continue;
        }
        let k = edges
            .partition_point(|e| *e <= x)
            .saturating_sub(1)
            .min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
    })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::TooShort("need at least two pairs".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One-sided sign test of `a > b`: `P(X ≥ wins)` for `X ~ Bin(n, 1/2)`, ties dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {}",
            a.len(),
            b.len()
        )));
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count() as u64;
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count() as u64;
    let n = wins + losses;
    if n == 0 {
        return Ok(1.0);
    }
    let bin = Binomial::new(0.5, n).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(if wins == 0 { 1.0 } else { bin.sf(wins - 1) })
}

/// Summaries of one chain record: `samples[i][v]` is variable `v` at kept iteration `i`.
#[derive(Clone, Debug)]
pub struct ChainSummary {
    pub means: Vec<f64>,
    /// `None` for variables with zero sample variance.
    pub acf: Vec<Option<Vec<f64>>>,
    pub batch_se: Vec<f64>,
    pub update_rate: Vec<f64>,
    pub histograms: Vec<Histogram>,
}

impl ChainSummary {
    pub fn new(
        samples: &[Vec<f64>],
        changes: &[Vec<bool>],
        max_lag: usize,
        n_batches: usize,
    ) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyLog)?;
        let vars = first.len();
        let mut summary = Self {
            means: Vec::with_capacity(vars),
            acf: Vec::with_capacity(vars),
            batch_se: Vec::with_capacity(vars),
            update_rate: update_rate(changes)?,
            histograms: Vec::with_capacity(vars),
        };
        let mut column = vec![0.0; samples.len()];
        for v in 0..vars {
            for (c, row) in column.iter_mut().zip(samples) {
                *c = row[v];
            }
            summary.means.push(mean(&column));
            summary
                .acf
                .push(match acf(&column, max_lag.min(column.len() - 1)) {
                    Ok(r) => Some(r),
                    Err(Error::ZeroVariance) => None,
                    Err(e) => return Err(e),
                });
            summary.batch_se.push(batch_means_se(&column, n_batches)?);
            summary.histograms.push(histogram(&column)?);
        }
        Ok(summary)
    }
}

/// Write a two-column CSV `(index, value)`.
pub fn write_series_csv<W: Write, T: Display>(
    mut out: W,
    header: (&str, &str),
    values: &[T],
) -> Result<()> {
    writeln!(out, "{},{}", header.0, header.1)?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    Ok(())
}

/// Write a CSV with the given header and rows.
pub fn write_table_csv<W: Write>(mut out: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Write a histogram as `(left, right, count)` rows.
pub fn write_histogram_csv<W: Write>(mut out: W, h: &Histogram) -> Result<()> {
    writeln!(out, "left,right,count")?;
    for (k, c) in h.counts.iter().enumerate() {
        writeln!(out, "{:?},{:?},{}", h.edges[k], h.edges[k + 1], c)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64, shift: f64) -> Vec<f64> {
        let mut rng = RandomSource::new(seed);
        (0..n)
            .map(|_| shift + Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = RandomSource::new(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + e;
                x
            })
            .collect()
    }

    #[test]
    fn acf_alternating_and_constant() {
        let s: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let r = acf(&s, 2).unwrap();
        assert_eq!(r[0], 1.0);
        assert!((r[1] + 1.0).abs() < 2e-3);
        assert_eq!(acf(&[2.0; 10], 1), Err(Error::ZeroVariance));
        assert!(acf(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn acf_white_noise_and_ar1() {
        let r = acf(&normals(100_000, 1, 0.0), 10).unwrap();
        assert!(r[1..].iter().all(|v| v.abs() < 0.02));
        let r = acf(&ar1(100_000, 0.9, 2), 10).unwrap();
        for (k, v) in r.iter().enumerate() {
            assert!((v - 0.9f64.powi(k as i32)).abs() < 0.02, "lag {k}: {v}");
        }
    }

    #[test]
    fn rmse_values() {
        assert_eq!(posterior_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((posterior_rmse(&[1.5, 2.5, 0.5], &[1.0, 2.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        // sqrt((1 + 4 + 0 + 9) / 4)
        assert!(
            (posterior_rmse(&[1.0, 0.0, 3.0, -3.0], &[0.0, 2.0, 3.0, 0.0]).unwrap()
                - 3.5f64.sqrt())
            .abs()
                < 1e-15
        );
        assert!(posterior_rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rates() {
        let logs = vec![vec![false, true, true], vec![false, false, true]];
        assert_eq!(update_rate(&logs).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(update_rate(&[]), Err(Error::EmptyLog));
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a = normals(2000, 3, 0.0);
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let b = normals(2000, 4, 1.0);
        assert!(ks_two_sample(&a, &b).unwrap().p_value < 1e-6);
    }

    #[test]
    fn ks_calibration() {
        let passes = (0..100)
            .filter(|s| {
                let a = normals(2000, 100 + 2 * s, 0.0);
                let b = normals(2000, 101 + 2 * s, 0.0);
                ks_two_sample(&a, &b).unwrap().p_value > 0.01
            })
            .count();
        assert!(passes >= 95, "{passes}");
    }

    #[test]
    fn ks_tail_known_values() {
        // Q_KS(1) = 2(e^{-2} − e^{-8} + e^{-18} − …)
        let q = 2.0 * ((-2.0f64).exp() - (-8.0f64).exp() + (-18.0f64).exp() - (-32.0f64).exp());
        assert!((kolmogorov_tail(1.0) - q).abs() < 1e-14);
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn batch_means() {
        assert_eq!(batch_means_se(&[3.0; 100], 10).unwrap(), 0.0);
        assert!(batch_means_se(&[1.0; 5], 10).is_err());
        assert!(batch_means_se(&[1.0; 100], 5).is_err());
        let n = 100_000;
        let se = batch_means_se(&normals(n, 5, 0.0), 50).unwrap();
        let target = 1.0 / (n as f64).sqrt();
        assert!((se / target - 1.0).abs() < 0.3);
        // AR(1), unit innovations: asymptotic variance of the mean is 1/(1−φ)² per sample.
        let phi: f64 = 0.8;
        let se = batch_means_se(&ar1(n, phi, 6), 50).unwrap();
        let target = (1.0 / (1.0 - phi).powi(2) / n as f64).sqrt();
        assert!((se / target - 1.0).abs() < 0.3, "{se} vs {target}");
    }

    #[test]
    fn histogram_counts() {
        let h = histogram_with_edges(&[0.0, 0.5, 1.0, 1.5, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(h.counts, vec![2, 3]);
        let s = normals(1000, 7, 0.0);
        let h = histogram(&s).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 1000);
        assert_eq!(histogram(&[1.0; 4]).unwrap().counts, vec![4]);
    }

    #[test]
    fn spearman_and_sign() {
        assert!(
            (spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs()
                < 1e-15
        );
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // Ties: ranks (1.5, 1.5, 3) vs (1, 2, 3) → ρ = 0.5/(sqrt(0.5)·sqrt(2)) = 0.866…
        assert!(
            (spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap() - 0.75f64.sqrt()).abs() < 1e-12
        );
        // 5 wins of 5: 1/32.
        assert!((sign_test(&[2.0; 5], &[1.0; 5]).unwrap() - 1.0 / 32.0).abs() < 1e-12);
        // 4 wins, 1 loss, 1 tie: P(X ≥ 4 | n=5) = 6/32.
        let p = sign_test(&[2.0, 2.0, 2.0, 2.0, 0.0, 1.0], &[1.0; 6]).unwrap();
        assert!((p - 6.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn summary_and_csv() {
        let samples: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, 1.0]).collect();
        let changes = vec![vec![false, true]; 100];
        let s = ChainSummary::new(&samples, &changes, 5, 10).unwrap();
        assert_eq!(s.acf[0].as_ref().unwrap()[0], 1.0);
        assert!(s.acf[1].is_none());
        assert_eq!(s.update_rate, vec![0.0, 1.0]);
        let mut buf = Vec::new();
        write_series_csv(&mut buf, ("lag", "acf"), &[1.0, 0.5]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lag,acf\n0,1\n1,0.5\n");
    }
}
