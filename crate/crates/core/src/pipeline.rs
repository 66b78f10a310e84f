//! Fills report sections from ingested records.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::analysis::{
    challenge_curve, characterize, pool_shifts, predictor_correlations, scenario_test_with, AnalysisError,
    ChiCategories, Pooling, RankingKey,
};
use crate::metrics::{summarize_shifts, DomainId, MetricsError, PerformanceMatrix, Scenario};
use crate::report::{ChallengeCurve, PredictorRow, Report, ScenarioGroupTest, SkippedShift};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("no (task, model) matrix has a computable shift")]
    NoShifts,
    #[error("no group has enough shifts to characterize (need 3)")]
    NothingToCharacterize,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizeOptions {
    pub epsilon: f64,
    pub pooling: Pooling,
    pub ranking: RankingKey,
    pub ks: Vec<usize>,
    pub alpha: f64,
    pub m: u32,
    pub categories: ChiCategories,
}

impl Default for CharacterizeOptions {
    fn default() -> Self {
        Self {
            epsilon: crate::metrics::DEFAULT_EPSILON,
            pooling: Pooling::PerTask,
            ranking: RankingKey::BySD,
            ks: vec![1, 3, 5, 10],
            alpha: 0.05,
            m: 1,
            categories: ChiCategories::Orderings,
        }
    }
}

/// One summary per (task, model) matrix, plus diagnostics for what was skipped.
pub fn add_summaries(report: &mut Report, matrices: &[PerformanceMatrix], epsilon: f64) -> Result<()> {
    for m in matrices {
        let label = format!("{}/{}", m.task(), m.model());
        let set = m.shifts(epsilon);
        let diag = &mut report.diagnostics;
        diag.skipped_shifts.extend(set.skipped.iter().map(|(s, t)| SkippedShift {
            task: m.task().to_owned(),
            model: m.model().to_owned(),
            source: s.clone(),
            target: t.clone(),
        }));
        if !m.is_full_cross_product() {
            diag.partial_matrices.push(format!(
                "{label}: {} of {} cells present",
                m.len(),
                m.domains().len() * m.domains().len()
            ));
        }
        if set.shifts.is_empty() {
            diag.warnings.push(format!("{label}: no computable shifts"));
            continue;
        }
        let mut summary = summarize_shifts(m.task(), m.model(), &set.shifts)?;
        summary.skipped_shifts = set.skipped.len();
        summary.full_cross_product = m.is_full_cross_product();
        diag.degenerate_orderings += summary.degenerate_orderings;
        diag.boundary_shifts += summary.scenario_counts.get(&Scenario::Boundary).copied().unwrap_or(0);
        report.summaries.push(summary);
    }
    if report.summaries.is_empty() {
        return Err(PipelineError::NoShifts);
    }
    Ok(())
}

/// Characterization rows, ordering tests and challenge curves for each pooled group.
///
/// Groups too small for a statistic are noted in the diagnostics and skipped.
pub fn add_characterization(report: &mut Report, matrices: &[PerformanceMatrix], opts: &CharacterizeOptions) -> Result<()> {
    if opts.ks.contains(&0) {
        return Err(AnalysisError::InvalidK.into());
    }
    for g in pool_shifts(matrices, opts.pooling, opts.epsilon) {
        let label = format!("{}/{}", g.task, g.model_group);
        let warnings = &mut report.diagnostics.warnings;
        match characterize(&g.shifts, &g.task, &g.model_group) {
            Ok(row) => report.characterization.push(row),
            Err(e) => {
                warnings.push(format!("{label}: characterization skipped: {e}"));
                continue;
            }
        }
        match scenario_test_with(&g.shifts, opts.alpha, opts.m, opts.categories) {
            Ok(test) => report.scenario_tests.push(ScenarioGroupTest {
                task: g.task.clone(),
                model_group: g.model_group.clone(),
                test,
            }),
            Err(e) => warnings.push(format!("{label}: scenario test skipped: {e}")),
        }
        let (ks, dropped): (Vec<usize>, Vec<usize>) = opts.ks.iter().partition(|&&k| k <= g.shifts.len());
        if !dropped.is_empty() {
            warnings.push(format!("{label}: k values {dropped:?} exceed the {} shifts", g.shifts.len()));
        }
        if !ks.is_empty() {
            let points = challenge_curve(&g.shifts, opts.ranking, &ks)?;
            report.challenge_curves.push(ChallengeCurve { task: g.task, model_group: g.model_group, points });
        }
    }
    if report.characterization.is_empty() {
        return Err(PipelineError::NothingToCharacterize);
    }
    Ok(())
}

/// Spearman correlations of divergence and IDD with the drops, per pooled group.
pub fn add_predictors(
    report: &mut Report,
    matrices: &[PerformanceMatrix],
    divergences: &BTreeMap<(DomainId, DomainId), f64>,
    pooling: Pooling,
    epsilon: f64,
) {
    let mut rows = Vec::new();
    for g in pool_shifts(matrices, pooling, epsilon) {
        match predictor_correlations(&g.shifts, divergences) {
            Ok(correlations) => rows.push(PredictorRow { task: g.task, model_group: g.model_group, correlations }),
            Err(e) => report
                .diagnostics
                .warnings
                .push(format!("{}/{}: predictor correlations skipped: {e}", g.task, g.model_group)),
        }
    }
    report.predictor_correlations = Some(rows);
}
