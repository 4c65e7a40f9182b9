//! Per-cycle features (seven statistical and six gradient values per channel)
//! and the dataset-level analyses: Pearson correlation, PCA and LDA.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::class::EyeClass;
use crate::error::{Error, Result};
use crate::segment::{Channel, Cycle, Polarity};

pub const NUM_FEATURES: usize = 26;
pub const FEATURES_PER_CHANNEL: usize = 13;

/// Frozen column order. `ch1` is the horizontal channel, `ch2` the vertical.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "ch1_mean_abs",
    "ch1_max",
    "ch1_min",
    "ch1_std",
    "ch1_skew",
    "ch1_kurt",
    "ch1_mean_fft",
    "ch1_rg40",
    "ch1_rg60",
    "ch1_rg80",
    "ch1_fg40",
    "ch1_fg60",
    "ch1_fg80",
    "ch2_mean_abs",
    "ch2_max",
    "ch2_min",
    "ch2_std",
    "ch2_skew",
    "ch2_kurt",
    "ch2_mean_fft",
    "ch2_rg40",
    "ch2_rg60",
    "ch2_rg80",
    "ch2_fg40",
    "ch2_fg60",
    "ch2_fg80",
];

/// Threshold fractions of the peak amplitude used by the gradient features.
pub const GRADIENT_FRACTIONS: [f64; 3] = [0.40, 0.60, 0.80];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; NUM_FEATURES],
    pub label: EyeClass,
    /// Bit `i` set when gradient slot `i` (0..12, `ch1_rg40` first) had no
    /// threshold crossing inside the window and was set to 0.
    pub missing_crossings: u16,
}

impl FeatureVector {
    pub fn names() -> &'static [&'static str; NUM_FEATURES] {
        &FEATURE_NAMES
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.values[i])
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Mean magnitude of the unnormalized DFT over the one-sided bins
/// `0..=N/2`.
pub fn mean_fft_magnitude(x: &[f64]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let bins = n / 2 + 1;
    buf[..bins].iter().map(|c| c.norm()).sum::<f64>() / bins as f64
}

/// `(mean |x|, max, min, std (n-1), skewness g1, excess kurtosis, mean FFT
/// magnitude)`. Skewness and kurtosis are 0 when the standard deviation is
/// below 1e-12.
pub fn stat_features(x: &[f64]) -> Result<[f64; 7]> {
    let n = x.len();
    if n < 4 {
        return Err(Error::input(format!(
            "statistical features need at least 4 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / nf;
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let (skew, kurt) = if std < 1e-12 {
        (0.0, 0.0)
    } else {
        let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Ok([mean_abs, max, min, std, skew, kurt, mean_fft_magnitude(x)])
}

/// Rising and falling gradients at 40/60/80 % of the peak amplitude, in
/// volts per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradients {
    /// `[RG40, RG60, RG80, FG40, FG60, FG80]`.
    pub values: [f64; 6],
    /// Slots whose crossing was not found inside the window.
    pub missing: [bool; 6],
}

impl Gradients {
    pub const ZERO: Gradients = Gradients {
        values: [0.0; 6],
        missing: [false; 6],
    };
}

/// Fractional index of the last upward crossing of `level` before `peak`.
fn rising_crossing(y: &[f64], peak: usize, level: f64) -> Option<f64> {
    (0..peak).rev().find(|&k| y[k] <= level).map(|k| {
        let (a, b) = (y[k], y[k + 1]);
        k as f64 + (level - a) / (b - a)
    })
}

/// Fractional index of the first downward crossing of `level` after `peak`.
fn falling_crossing(y: &[f64], peak: usize, level: f64) -> Option<f64> {
    (peak + 1..y.len()).find(|&k| y[k] <= level).map(|k| {
        let (a, b) = (y[k - 1], y[k]);
        (k - 1) as f64 + (a - level) / (a - b)
    })
}

/// Gradient features around `peak`.
///
/// With `A = x[peak]` and fraction `p`, `RG_p = p*A / ((t_peak - t_Rp)/fs)`
/// where `t_Rp` is the last (linearly interpolated) crossing of `p*A` on the
/// way up to the peak; `FG_p` uses the first crossing after the peak. A
/// negative peak is handled on `-x` and the amplitude re-signed, so its
/// gradients are the negated gradients of the mirrored pulse.
pub fn gradient_features(x: &[f64], peak: usize, polarity: Polarity, fs: f64) -> Result<Gradients> {
    if peak == 0 || peak + 1 >= x.len() {
        return Err(Error::input(format!(
            "peak index {peak} is on the boundary of a {}-sample window",
            x.len()
        )));
    }
    if !(fs > 0.0) {
        return Err(Error::config("sampling rate must be positive"));
    }
    let sign = match polarity {
        Polarity::Positive => 1.0,
        Polarity::Negative => -1.0,
        Polarity::None => return Ok(Gradients::ZERO),
    };
    let a_signed = x[peak];
    if !(sign * a_signed > 0.0) {
        return Err(Error::input(format!(
            "peak value {a_signed} does not match {} polarity",
            polarity.as_str()
        )));
    }
    let y: Vec<f64> = x.iter().map(|v| sign * v).collect();
    let a = y[peak];
    let t_peak = peak as f64;

    let mut out = Gradients::ZERO;
    for (j, &p) in GRADIENT_FRACTIONS.iter().enumerate() {
        let level = p * a;
        match rising_crossing(&y, peak, level) {
            Some(t) => out.values[j] = p * a_signed / ((t_peak - t) / fs),
            None => out.missing[j] = true,
        }
        match falling_crossing(&y, peak, level) {
            Some(t) => out.values[3 + j] = p * a_signed / ((t - t_peak) / fs),
            None => out.missing[3 + j] = true,
        }
    }
    Ok(out)
}

/// Index and sign of the largest absolute sample (earliest on ties).
fn extremum(x: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    (best, x[best])
}

/// Gradients of the channel that does not own the detected peak, anchored
/// at its own extremum.
fn secondary_gradients(x: &[f64], fs: f64) -> Result<Gradients> {
    let (i, v) = extremum(x);
    if i == 0 || i + 1 >= x.len() || v == 0.0 {
        return Ok(Gradients {
            values: [0.0; 6],
            missing: [true; 6],
        });
    }
    let polarity = if v > 0.0 {
        Polarity::Positive
    } else {
        Polarity::Negative
    };
    gradient_features(x, i, polarity, fs)
}

/// The 26 features of one cycle.
pub fn featurize(cycle: &Cycle, fs: f64) -> Result<FeatureVector> {
    if cycle.ch_h.len() != cycle.ch_v.len() {
        return Err(Error::input("cycle channels differ in length"));
    }
    let peak = cycle.peak_local_index();
    let mut values = [0.0; NUM_FEATURES];
    let mut missing_crossings = 0u16;
    for (c, (channel, x)) in [
        (Channel::Horizontal, &cycle.ch_h),
        (Channel::Vertical, &cycle.ch_v),
    ]
    .into_iter()
    .enumerate()
    {
        let base = c * FEATURES_PER_CHANNEL;
        values[base..base + 7].copy_from_slice(&stat_features(x)?);
        let g = match cycle.polarity {
            Polarity::None => Gradients::ZERO,
            p if channel == cycle.peak_channel => gradient_features(x, peak, p, fs)?,
            _ => secondary_gradients(x, fs)?,
        };
        values[base + 7..base + 13].copy_from_slice(&g.values);
        for (j, &m) in g.missing.iter().enumerate() {
            if m {
                missing_crossings |= 1 << (c * 6 + j);
            }
        }
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "feature {} is not finite",
            FEATURE_NAMES[i]
        )));
    }
    Ok(FeatureVector {
        values,
        label: cycle.label,
        missing_crossings,
    })
}

fn to_matrix<R: AsRef<[f64]>>(rows: &[R]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    if n == 0 || d == 0 {
        return Err(Error::input("empty matrix"));
    }
    if rows.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::input("rows differ in length"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j]))
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.ncols(), |j, _| x.column(j).mean())
}

/// Pearson correlation between columns. A zero-variance column gets a zero
/// row and column with 1 on the diagonal.
pub fn correlation_matrix<R: AsRef<[f64]>>(rows: &[R]) -> Result<Vec<Vec<f64>>> {
    if rows.len() < 3 {
        return Err(Error::input("correlation needs at least 3 rows"));
    }
    let x = to_matrix(rows)?;
    let d = x.ncols();
    let mean = column_means(&x);
    let centered = DMatrix::from_fn(x.nrows(), d, |i, j| x[(i, j)] - mean[j]);
    let norms: Vec<f64> = (0..d).map(|j| centered.column(j).norm()).collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        out[i][i] = 1.0;
        for j in i + 1..d {
            if norms[i] < 1e-300 || norms[j] < 1e-300 {
                continue;
            }
            let r = (centered.column(i).dot(&centered.column(j)) / (norms[i] * norms[j]))
                .clamp(-1.0, 1.0);
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

/// A linear projection fitted on a data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// Unit-length direction vectors, one per row (`k x d`).
    pub components: Vec<Vec<f64>>,
    /// Eigenvalue share of each component, in decreasing order.
    pub explained_variance_ratio: Vec<f64>,
    /// Coordinates of every input row (`n x k`), after centering.
    pub projected: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl ProjectionResult {
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(w, (v, m))| w * (v - m))
                    .sum()
            })
            .collect()
    }
}

/// Eigenpairs sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l, v.into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Flips `v` so that its largest-magnitude entry (earliest on ties) is
/// positive.
fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

fn project(x: &DMatrix<f64>, mean: &DVector<f64>, comps: &[DVector<f64>]) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| {
            let row = x.row(i).transpose() - mean;
            comps.iter().map(|c| c.dot(&row)).collect()
        })
        .collect()
}

/// Principal component analysis on the mean-centered sample covariance.
pub fn pca<R: AsRef<[f64]>>(rows: &[R], k: usize) -> Result<ProjectionResult> {
    let x = to_matrix(rows)?;
    let (n, d) = (x.nrows(), x.ncols());
    if k < 1 || k > d.min(n.saturating_sub(1)) {
        return Err(Error::input(format!(
            "{k} components requested from {n} rows of {d} columns"
        )));
    }
    let mean = column_means(&x);
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let pairs = sorted_eigen(cov);
    let total: f64 = pairs.iter().map(|(l, _)| l.max(0.0)).sum();
    let mut comps = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for (l, mut v) in pairs.into_iter().take(k) {
        fix_sign(&mut v);
        comps.push(v);
        ratios.push(if total > 0.0 { l.max(0.0) / total } else { 0.0 });
    }
    Ok(ProjectionResult {
        projected: project(&x, &mean, &comps),
        components: comps.iter().map(|c| c.iter().copied().collect()).collect(),
        explained_variance_ratio: ratios,
        mean: mean.iter().copied().collect(),
    })
}

/// Fisher linear discriminant analysis.
///
/// Solves `S_b v = lambda (S_w + eps I) v` with
/// `eps = 1e-6 * trace(S_w) / d` by whitening with the Cholesky factor of the
/// regularized within-class scatter. Directions are returned at unit length;
/// they are orthogonal in the whitened metric, not in general in the input
/// space.
pub fn lda<R: AsRef<[f64]>>(rows: &[R], labels: &[usize], k: usize) -> Result<ProjectionResult> {
    let x = to_matrix(rows)?;
    let (n, d) = (x.nrows(), x.ncols());
    if labels.len() != n {
        return Err(Error::input("labels and rows differ in length"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::input(
            "discriminant analysis needs at least two classes",
        ));
    }
    if k < 1 || k > (classes.len() - 1).min(d) {
        return Err(Error::input(format!(
            "{k} discriminants requested for {} classes",
            classes.len()
        )));
    }
    let mean = column_means(&x);
    let mut s_w = DMatrix::<f64>::zeros(d, d);
    let mut s_b = DMatrix::<f64>::zeros(d, d);
    for &c in &classes {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            return Err(Error::input(format!(
                "class {c} has fewer than two samples"
            )));
        }
        let mut mu = DVector::<f64>::zeros(d);
        for &i in &idx {
            mu += x.row(i).transpose();
        }
        mu /= idx.len() as f64;
        for &i in &idx {
            let dv = x.row(i).transpose() - &mu;
            s_w += &dv * dv.transpose();
        }
        let db = &mu - &mean;
        s_b += (&db * db.transpose()) * idx.len() as f64;
    }
    let eps = (1e-6 * s_w.trace() / d as f64).max(1e-12);
    let reg = &s_w + DMatrix::<f64>::identity(d, d) * eps;
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Numerical("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let m = &l_inv * s_b * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let pairs = sorted_eigen(m);
    let total: f64 = pairs.iter().map(|(l, _)| l.max(0.0)).sum();
    let mut comps = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for (lam, u) in pairs.into_iter().take(k) {
        let mut v = l_inv.transpose() * u;
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        fix_sign(&mut v);
        comps.push(v);
        ratios.push(if total > 0.0 {
            lam.max(0.0) / total
        } else {
            0.0
        });
    }
    Ok(ProjectionResult {
        projected: project(&x, &mean, &comps),
        components: comps.iter().map(|c| c.iter().copied().collect()).collect(),
        explained_variance_ratio: ratios,
        mean: mean.iter().copied().collect(),
    })
}

/// Isolation of one class in a projected space: distance from its centroid
/// to the nearest other centroid, divided by the pooled RMS distance of
/// points to their own class centroid.
pub fn isolation_ratio(projected: &[Vec<f64>], labels: &[usize], class: usize) -> Result<f64> {
    if projected.len() != labels.len() || projected.is_empty() {
        return Err(Error::input("projection and labels differ in length"));
    }
    let dim = projected[0].len();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if !classes.contains(&class) || classes.len() < 2 {
        return Err(Error::input("class missing or no other class present"));
    }
    let centroid = |c: usize| -> Vec<f64> {
        let mut m = vec![0.0; dim];
        let mut cnt = 0.0;
        for (p, _) in projected.iter().zip(labels).filter(|(_, &l)| l == c) {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
            cnt += 1.0;
        }
        m.iter().map(|v| v / cnt).collect()
    };
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let centroids: Vec<(usize, Vec<f64>)> = classes.iter().map(|&c| (c, centroid(c))).collect();
    let own = &centroids.iter().find(|(c, _)| *c == class).unwrap().1;
    let nearest = centroids
        .iter()
        .filter(|(c, _)| *c != class)
        .map(|(_, m)| dist2(own, m))
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    let within: f64 = projected
        .iter()
        .zip(labels)
        .map(|(p, l)| dist2(p, &centroids.iter().find(|(c, _)| c == l).unwrap().1))
        .sum::<f64>()
        / projected.len() as f64;
    let radius = within.sqrt();
    if radius == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(nearest / radius)
}
