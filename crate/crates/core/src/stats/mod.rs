//! Moment and rank statistics shared by the analyses.
//!
//! Variances and covariances use the `n - 1` denominator. Sums go through a
//! compensated accumulator so that algebraically equal aggregates (for
//! example the mean source drop and the mean target drop over a full
//! cross-product) agree to well below `1e-12`.

pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("input is empty")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("constant series has undefined correlation")]
    ConstantInput,
    #[error("constant predictor makes the regression undefined")]
    ConstantPredictor,
    #[error("no categories given")]
    EmptyCounts,
    #[error("all category counts are zero")]
    AllZero,
    #[error("invalid expected probabilities: {0}")]
    InvalidProbabilities(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<KahanSum>().value()
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    Ok(sum(xs) / xs.len() as f64)
}

/// Two equal-length, finite, non-empty series.
#[derive(Debug, Clone, Copy)]
pub struct PairedSamples<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
}

impl<'a> PairedSamples<'a> {
    pub fn new(xs: &'a [f64], ys: &'a [f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(StatsError::LengthMismatch { left: xs.len(), right: ys.len() });
        }
        if xs.is_empty() {
            return Err(StatsError::EmptyInput);
        }
        check_finite(xs)?;
        check_finite(ys)?;
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &'a [f64] {
        self.xs
    }

    pub fn ys(&self) -> &'a [f64] {
        self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn pearson(&self) -> Result<f64> {
        pearson(self.xs, self.ys)
    }

    pub fn spearman(&self) -> Result<f64> {
        spearman(self.xs, self.ys)
    }
}

fn check_finite(xs: &[f64]) -> Result<()> {
    match xs.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&v| v == xs[0])
}

/// Unbiased sample covariance.
pub fn sample_cov(x: &[f64], y: &[f64]) -> Result<f64> {
    let p = PairedSamples::new(x, y)?;
    if p.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: p.len() });
    }
    let mx = mean(x)?;
    let my = mean(y)?;
    let acc: KahanSum = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    Ok(acc.value() / (x.len() - 1) as f64)
}

/// Unbiased sample variance.
pub fn sample_var(x: &[f64]) -> Result<f64> {
    sample_cov(x, x).map(|v| v.max(0.0))
}

pub fn sample_std(x: &[f64]) -> Result<f64> {
    sample_var(x).map(f64::sqrt)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let p = PairedSamples::new(x, y)?;
    if p.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: p.len() });
    }
    if is_constant(x) || is_constant(y) {
        return Err(StatsError::ConstantInput);
    }
    let vx = sample_var(x)?;
    let vy = sample_var(y)?;
    if vx == 0.0 || vy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    let r = sample_cov(x, y)? / (vx.sqrt() * vy.sqrt());
    Ok(r.clamp(-1.0, 1.0))
}

/// Fractional ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1..=j)
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    let p = PairedSamples::new(x, y)?;
    if p.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: p.len() });
    }
    if is_constant(x) || is_constant(y) {
        return Err(StatsError::ConstantInput);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Coefficient of determination of the least-squares fit of `y` on `x`.
///
/// A constant `y` is reproduced exactly by the fitted line, so it scores 1.
pub fn r_squared(x: &[f64], y: &[f64]) -> Result<f64> {
    let p = PairedSamples::new(x, y)?;
    if p.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: p.len() });
    }
    if is_constant(x) {
        return Err(StatsError::ConstantPredictor);
    }
    if is_constant(y) {
        return Ok(1.0);
    }
    let mx = mean(x)?;
    let my = mean(y)?;
    let sxx: KahanSum = x.iter().map(|a| (a - mx) * (a - mx)).collect();
    let sxy: KahanSum = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let slope = sxy.value() / sxx.value();
    let intercept = my - slope * mx;
    let sse: KahanSum = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .collect();
    let sst: KahanSum = y.iter().map(|b| (b - my) * (b - my)).collect();
    Ok((1.0 - sse.value() / sst.value()).clamp(0.0, 1.0))
}

/// Mean of `|a_i - b_i|`.
pub fn mean_abs_deviation(a: &[f64], b: &[f64]) -> Result<f64> {
    PairedSamples::new(a, b)?;
    let acc: KahanSum = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    Ok(acc.value() / a.len() as f64)
}

pub fn bonferroni(alpha: f64, m: u32) -> f64 {
    alpha / m.max(1) as f64
}

/// Chi-square statistic, degrees of freedom and upper-tail p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareStat {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

impl ChiSquareStat {
    /// Applies a Bonferroni-corrected decision at level `alpha` over `m` comparisons.
    pub fn decide(self, alpha: f64, m: u32) -> ChiSquareResult {
        let alpha_adjusted = bonferroni(alpha, m);
        ChiSquareResult {
            statistic: self.statistic,
            df: self.df,
            p_value: self.p_value,
            alpha,
            alpha_adjusted,
            reject: self.p_value < alpha_adjusted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub alpha: f64,
    pub alpha_adjusted: f64,
    pub reject: bool,
}

/// Pearson goodness-of-fit test of `counts` against expected proportions `probs`.
pub fn chi_square_goodness_of_fit(counts: &[u64], probs: &[f64]) -> Result<ChiSquareStat> {
    if counts.is_empty() {
        return Err(StatsError::EmptyCounts);
    }
    if counts.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: counts.len() });
    }
    if counts.len() != probs.len() {
        return Err(StatsError::LengthMismatch { left: counts.len(), right: probs.len() });
    }
    if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(StatsError::InvalidProbabilities("every category needs p > 0".into()));
    }
    let total_p = sum(probs);
    if (total_p - 1.0).abs() > 1e-9 {
        return Err(StatsError::InvalidProbabilities(format!("sum to {total_p}, not 1")));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(StatsError::AllZero);
    }
    let nf = n as f64;
    let statistic: KahanSum = counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = nf * p;
            let d = o as f64 - e;
            d * d / e
        })
        .collect();
    let statistic = statistic.value().max(0.0);
    let df = (counts.len() - 1) as u32;
    Ok(ChiSquareStat { statistic, df, p_value: special::chi_square_sf(statistic, df) })
}

/// Goodness-of-fit test against the uniform distribution over `counts.len()` categories.
pub fn chi_square_uniform(counts: &[u64]) -> Result<ChiSquareStat> {
    if counts.is_empty() {
        return Err(StatsError::EmptyCounts);
    }
    let k = counts.len();
    chi_square_goodness_of_fit(counts, &vec![1.0 / k as f64; k])
}
