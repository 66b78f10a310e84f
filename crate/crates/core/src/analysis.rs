//! Task-level characterization of drops over a list of shifts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{DomainId, PerformanceMatrix, Scenario, ShiftMetrics, TripletOrdering};
use crate::stats::{self, ChiSquareResult, KahanSum, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} shifts, got {got}")]
    TooFewShifts { needed: usize, got: usize },
    #[error("every shift has a degenerate ordering")]
    AllDegenerate,
    #[error("k = {k} exceeds the {n} available shifts")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be positive")]
    InvalidK,
    #[error("no divergence for pair {0}")]
    MissingDivergence(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// How shifts from several matrices are grouped before characterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    PerModel,
    #[default]
    PerTask,
    Pooled,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "per-model" => Ok(Pooling::PerModel),
            "per-task" => Ok(Pooling::PerTask),
            "pooled" => Ok(Pooling::Pooled),
            other => Err(format!("unknown pooling `{other}` (per-model, per-task, pooled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftGroup {
    pub task: String,
    pub model_group: String,
    pub shifts: Vec<ShiftMetrics>,
}

pub const ALL_GROUP: &str = "all";

/// Collects the computable shifts of each matrix into groups keyed by `pooling`.
pub fn pool_shifts(matrices: &[PerformanceMatrix], pooling: Pooling, epsilon: f64) -> Vec<ShiftGroup> {
    let mut groups: BTreeMap<(String, String), Vec<ShiftMetrics>> = BTreeMap::new();
    for m in matrices {
        let key = match pooling {
            Pooling::PerModel => (m.task().to_owned(), m.model().to_owned()),
            Pooling::PerTask => (m.task().to_owned(), ALL_GROUP.to_owned()),
            Pooling::Pooled => (ALL_GROUP.to_owned(), ALL_GROUP.to_owned()),
        };
        groups.entry(key).or_default().extend(m.shifts(epsilon).shifts);
    }
    groups
        .into_iter()
        .map(|((task, model_group), shifts)| ShiftGroup { task, model_group, shifts })
        .collect()
}

/// Pearson and Spearman coefficients side by side; `None` where undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl Correlation {
    fn of(x: &[f64], y: &[f64]) -> Self {
        Self { pearson: stats::pearson(x, y).ok(), spearman: stats::spearman(x, y).ok() }
    }
}

/// Whether the absolute-drop comparison points the same way as the variance comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentLink {
    pub var_diff: f64,
    pub mad_diff: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationRow {
    pub task: String,
    pub model_group: String,
    pub n_shifts: usize,
    pub var_sd: f64,
    pub var_td: f64,
    pub std_sd: f64,
    pub std_td: f64,
    pub worst_sd: f64,
    pub worst_td: f64,
    pub corr_st_ss: Correlation,
    pub corr_st_tt: Correlation,
    pub r2_idd_sd: Option<f64>,
    pub r2_idd_td: Option<f64>,
    pub mad_st_ss: f64,
    pub mad_st_td: f64,
    pub positive_sd_share: f64,
    pub positive_td_share: f64,
    pub moment_link: MomentLink,
    pub notes: Vec<String>,
}

struct Columns {
    ss: Vec<f64>,
    tt: Vec<f64>,
    st: Vec<f64>,
    sd: Vec<f64>,
    td: Vec<f64>,
    idd: Vec<f64>,
}

impl Columns {
    fn new(shifts: &[ShiftMetrics]) -> Self {
        let col = |f: fn(&ShiftMetrics) -> f64| shifts.iter().map(f).collect::<Vec<_>>();
        Self {
            ss: col(|s| s.ss),
            tt: col(|s| s.tt),
            st: col(|s| s.st),
            sd: col(|s| s.sd),
            td: col(|s| s.td),
            idd: col(|s| s.idd),
        }
    }
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn r2_field(x: &[f64], y: &[f64], label: &str, notes: &mut Vec<String>) -> Option<f64> {
    if y.iter().all(|&v| v == y[0]) {
        notes.push(format!("{label}: response is constant"));
        return None;
    }
    match stats::r_squared(x, y) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{label}: {e}"));
            None
        }
    }
}

/// Variance, correlation, R² and absolute-deviation statistics over one shift list.
pub fn characterize(shifts: &[ShiftMetrics], task: &str, model_group: &str) -> Result<CharacterizationRow> {
    if shifts.len() < 3 {
        return Err(AnalysisError::TooFewShifts { needed: 3, got: shifts.len() });
    }
    let c = Columns::new(shifts);
    let mut notes = Vec::new();
    let var_sd = stats::sample_var(&c.sd)?;
    let var_td = stats::sample_var(&c.td)?;
    let corr_st_ss = Correlation::of(&c.st, &c.ss);
    let corr_st_tt = Correlation::of(&c.st, &c.tt);
    if corr_st_ss.pearson.is_none() {
        notes.push("corr(ST, SS): constant series".into());
    }
    if corr_st_tt.pearson.is_none() {
        notes.push("corr(ST, TT): constant series".into());
    }
    let r2_idd_sd = r2_field(&c.idd, &c.sd, "R2(IDD, SD)", &mut notes);
    let r2_idd_td = r2_field(&c.idd, &c.td, "R2(IDD, TD)", &mut notes);
    let mad_st_ss = stats::mean_abs_deviation(&c.st, &c.ss)?;
    let mad_st_td = stats::mean_abs_deviation(&c.st, &c.tt)?;

    let var_diff = var_sd - var_td;
    let mad_diff = mad_st_ss - mad_st_td;
    let agree = var_diff.signum() == mad_diff.signum() || (var_diff == 0.0 && mad_diff == 0.0);
    if !agree {
        notes.push(format!(
            "sign of mean|SD| - mean|TD| ({mad_diff:+.4}) disagrees with Var[SD] - Var[TD] ({var_diff:+.4})"
        ));
    }
    let n = shifts.len() as f64;
    Ok(CharacterizationRow {
        task: task.to_owned(),
        model_group: model_group.to_owned(),
        n_shifts: shifts.len(),
        var_sd,
        var_td,
        std_sd: var_sd.sqrt(),
        std_td: var_td.sqrt(),
        worst_sd: max(&c.sd),
        worst_td: max(&c.td),
        corr_st_ss,
        corr_st_tt,
        r2_idd_sd,
        r2_idd_td,
        mad_st_ss,
        mad_st_td,
        positive_sd_share: c.sd.iter().filter(|&&v| v > 0.0).count() as f64 / n,
        positive_td_share: c.td.iter().filter(|&&v| v > 0.0).count() as f64 / n,
        moment_link: MomentLink { var_diff, mad_diff, agree },
        notes,
    })
}

/// Category layout for the ordering-uniformity test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChiCategories {
    /// Six strict orderings, each with probability 1/6.
    #[default]
    Orderings,
    /// Four scenarios with probabilities (2, 1, 1, 2)/6 for Classic, Observed, Unobserved, No Challenge.
    Scenarios,
}

impl std::str::FromStr for ChiCategories {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "orderings" => Ok(ChiCategories::Orderings),
            "scenarios" => Ok(ChiCategories::Scenarios),
            other => Err(format!("unknown categories `{other}` (orderings, scenarios)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTestReport {
    pub ordering_counts: BTreeMap<TripletOrdering, u64>,
    pub excluded_degenerate: u64,
    pub categories: ChiCategories,
    pub chi: ChiSquareResult,
    pub scenario_counts: BTreeMap<Scenario, u64>,
    pub scenario_proportions: BTreeMap<Scenario, f64>,
}

pub fn scenario_test(shifts: &[ShiftMetrics], alpha: f64, m: u32) -> Result<ScenarioTestReport> {
    scenario_test_with(shifts, alpha, m, ChiCategories::Orderings)
}

pub fn scenario_test_with(
    shifts: &[ShiftMetrics],
    alpha: f64,
    m: u32,
    categories: ChiCategories,
) -> Result<ScenarioTestReport> {
    let mut ordering_counts: BTreeMap<TripletOrdering, u64> =
        TripletOrdering::STRICT.iter().map(|&o| (o, 0)).collect();
    let mut excluded_degenerate = 0;
    let mut scenario_counts: BTreeMap<Scenario, u64> =
        Scenario::ALL.iter().map(|&s| (s, 0)).collect();
    for s in shifts {
        match s.ordering {
            TripletOrdering::Degenerate => excluded_degenerate += 1,
            o => *ordering_counts.entry(o).or_default() += 1,
        }
        *scenario_counts.entry(s.scenario).or_default() += 1;
    }
    if excluded_degenerate as usize == shifts.len() {
        return Err(AnalysisError::AllDegenerate);
    }

    let stat = match categories {
        ChiCategories::Orderings => {
            let counts: Vec<u64> = ordering_counts.values().copied().collect();
            stats::chi_square_uniform(&counts)?
        }
        ChiCategories::Scenarios => {
            let mut grouped: BTreeMap<Scenario, u64> =
                Scenario::DECIDED.iter().map(|&s| (s, 0)).collect();
            for (o, n) in &ordering_counts {
                *grouped.entry(o.scenario()).or_default() += n;
            }
            let probs: Vec<f64> = grouped
                .keys()
                .map(|s| match s {
                    Scenario::Classic | Scenario::NoChallenge => 2.0 / 6.0,
                    _ => 1.0 / 6.0,
                })
                .collect();
            let counts: Vec<u64> = grouped.values().copied().collect();
            stats::chi_square_goodness_of_fit(&counts, &probs)?
        }
    };

    let decided: u64 = Scenario::DECIDED.iter().map(|s| scenario_counts[s]).sum();
    let scenario_proportions = Scenario::DECIDED
        .iter()
        .map(|&s| {
            let p = if decided == 0 { 0.0 } else { scenario_counts[&s] as f64 / decided as f64 };
            (s, p)
        })
        .collect();

    Ok(ScenarioTestReport {
        ordering_counts,
        excluded_degenerate,
        categories,
        chi: stat.decide(alpha, m),
        scenario_counts,
        scenario_proportions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RankingKey {
    #[default]
    BySD,
    ByTD,
}

impl std::str::FromStr for RankingKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sd" | "bysd" => Ok(RankingKey::BySD),
            "td" | "bytd" => Ok(RankingKey::ByTD),
            other => Err(format!("unknown ranking `{other}` (sd, td)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengeCurvePoint {
    pub k: usize,
    pub avg_sd_over_top_k: f64,
    pub avg_td_over_top_k: f64,
    pub ranking_key: RankingKey,
}

/// Average SD and TD over the `k` hardest shifts, for each requested `k`.
///
/// Shifts are ranked descending by the key; ties fall back to (source, target).
pub fn challenge_curve(
    shifts: &[ShiftMetrics],
    ranking_key: RankingKey,
    ks: &[usize],
) -> Result<Vec<ChallengeCurvePoint>> {
    for &k in ks {
        if k == 0 {
            return Err(AnalysisError::InvalidK);
        }
        if k > shifts.len() {
            return Err(AnalysisError::KTooLarge { k, n: shifts.len() });
        }
    }
    let key = |s: &ShiftMetrics| match ranking_key {
        RankingKey::BySD => s.sd,
        RankingKey::ByTD => s.td,
    };
    let mut ranked: Vec<&ShiftMetrics> = shifts.iter().collect();
    ranked.sort_by(|a, b| {
        key(b)
            .total_cmp(&key(a))
            .then_with(|| (&a.source, &a.target).cmp(&(&b.source, &b.target)))
    });
    Ok(ks
        .iter()
        .map(|&k| {
            let top = &ranked[..k];
            let sd: KahanSum = top.iter().map(|s| s.sd).collect();
            let td: KahanSum = top.iter().map(|s| s.td).collect();
            ChallengeCurvePoint {
                k,
                avg_sd_over_top_k: sd.value() / k as f64,
                avg_td_over_top_k: td.value() / k as f64,
                ranking_key,
            }
        })
        .collect())
}

/// Spearman correlations of the two drop predictors (divergence and IDD) with SD and TD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorCorrelations {
    pub n_shifts: usize,
    pub js_vs_sd: Option<f64>,
    pub js_vs_td: Option<f64>,
    pub idd_vs_sd: Option<f64>,
    pub idd_vs_td: Option<f64>,
    pub notes: Vec<String>,
}

/// Looks up a divergence under either orientation of the pair.
pub fn lookup_divergence(
    divergences: &BTreeMap<(DomainId, DomainId), f64>,
    a: &DomainId,
    b: &DomainId,
) -> Option<f64> {
    divergences
        .get(&(a.clone(), b.clone()))
        .or_else(|| divergences.get(&(b.clone(), a.clone())))
        .copied()
}

pub fn predictor_correlations(
    shifts: &[ShiftMetrics],
    divergences: &BTreeMap<(DomainId, DomainId), f64>,
) -> Result<PredictorCorrelations> {
    if shifts.len() < 3 {
        return Err(AnalysisError::TooFewShifts { needed: 3, got: shifts.len() });
    }
    let mut js = Vec::with_capacity(shifts.len());
    for s in shifts {
        match lookup_divergence(divergences, &s.source, &s.target) {
            Some(v) => js.push(v),
            None => {
                return Err(AnalysisError::MissingDivergence(format!("{} -> {}", s.source, s.target)))
            }
        }
    }
    let c = Columns::new(shifts);
    let mut notes = Vec::new();
    let mut corr = |x: &[f64], y: &[f64], label: &str| match stats::spearman(x, y) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{label}: {e}"));
            None
        }
    };
    let js_vs_sd = corr(&js, &c.sd, "JS vs SD");
    let js_vs_td = corr(&js, &c.td, "JS vs TD");
    let idd_vs_sd = corr(&c.idd, &c.sd, "IDD vs SD");
    let idd_vs_td = corr(&c.idd, &c.td, "IDD vs TD");
    Ok(PredictorCorrelations { n_shifts: shifts.len(), js_vs_sd, js_vs_td, idd_vs_sd, idd_vs_td, notes })
}
