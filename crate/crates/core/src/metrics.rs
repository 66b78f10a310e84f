//! Source/target drop metrics for cross-domain score matrices.
//!
//! A shift trains on `source` and evaluates on `target`. Its triplet is
//! `SS` (source in-domain), `TT` (target in-domain) and `ST` (cross-domain),
//! from which `SD = SS - ST`, `TD = TT - ST` and `IDD = SS - TT` follow.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, KahanSum};

/// Default tie tolerance on the 0–100 score scale.
pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no records given")]
    EmptyInput,
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("domain identifier is empty")]
    EmptyDomainId,
    #[error("score {value} is {reason}")]
    InvalidScore { value: f64, reason: &'static str },
    #[error("missing cell {source_domain} -> {target}")]
    MissingCell { source_domain: DomainId, target: DomainId },
    #[error("source and target are both {0}")]
    SameDomain(DomainId),
    #[error("no computable shifts")]
    NoShifts,
    #[error("variance needs at least 2 shifts, got {0}")]
    InsufficientForVariance(usize),
    #[error("source {0} has no shifts")]
    EmptySourceGroup(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// A task score on the 0–100 scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Result<Self> {
        Self::within(value, 0.0, 100.0)
    }

    /// Validates against a caller-supplied range instead of `[0, 100]`.
    pub fn within(value: f64, lo: f64, hi: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(MetricsError::InvalidScore { value, reason: "not finite" });
        }
        if value < lo || value > hi {
            return Err(MetricsError::InvalidScore { value, reason: "out of range" });
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Domain name, compared after trimming surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainId(String);

impl DomainId {
    pub fn new(name: &str) -> Result<Self> {
        let name = name.trim();
        if name.is_empty() {
            return Err(MetricsError::EmptyDomainId);
        }
        Ok(Self(name.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub model: String,
    pub source: DomainId,
    pub target: DomainId,
    pub score: Score,
}

impl RunRecord {
    pub fn key(&self) -> String {
        format!("({}, {}, {}, {})", self.task, self.model, self.source, self.target)
    }
}

/// Scores of one (task, model) over source→target pairs. Diagonal cells are in-domain scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    task: String,
    model: String,
    domains: Vec<DomainId>,
    scores: BTreeMap<(DomainId, DomainId), Score>,
}

impl PerformanceMatrix {
    pub fn new(
        task: impl Into<String>,
        model: impl Into<String>,
        scores: BTreeMap<(DomainId, DomainId), Score>,
    ) -> Self {
        let mut domains: Vec<DomainId> =
            scores.keys().flat_map(|(s, t)| [s.clone(), t.clone()]).collect();
        domains.sort();
        domains.dedup();
        Self { task: task.into(), model: model.into(), domains, scores }
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn domains(&self) -> &[DomainId] {
        &self.domains
    }

    pub fn get(&self, source: &DomainId, target: &DomainId) -> Option<Score> {
        self.scores.get(&(source.clone(), target.clone())).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_full_cross_product(&self) -> bool {
        self.scores.len() == self.domains.len() * self.domains.len()
    }

    /// Every computable shift plus the ordered pairs that had to be skipped.
    pub fn shifts(&self, epsilon: f64) -> ShiftSet {
        let mut shifts = Vec::new();
        let mut skipped = Vec::new();
        for s in &self.domains {
            for t in &self.domains {
                if s == t {
                    continue;
                }
                match shift_metrics(self, s, t, epsilon) {
                    Ok(m) => shifts.push(m),
                    Err(_) => skipped.push((s.clone(), t.clone())),
                }
            }
        }
        ShiftSet { shifts, skipped }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSet {
    pub shifts: Vec<ShiftMetrics>,
    pub skipped: Vec<(DomainId, DomainId)>,
}

/// Groups records into one matrix per (task, model), sorted by that key.
pub fn build_matrix(records: &[RunRecord]) -> Result<Vec<PerformanceMatrix>> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut groups: BTreeMap<(String, String), BTreeMap<(DomainId, DomainId), Score>> =
        BTreeMap::new();
    for r in records {
        let cells = groups.entry((r.task.clone(), r.model.clone())).or_default();
        if cells.insert((r.source.clone(), r.target.clone()), r.score).is_some() {
            return Err(MetricsError::DuplicateKey(r.key()));
        }
    }
    Ok(groups
        .into_iter()
        .map(|((task, model), scores)| PerformanceMatrix::new(task, model, scores))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    Classic,
    Observed,
    Unobserved,
    NoChallenge,
    Boundary,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Classic,
        Scenario::Observed,
        Scenario::Unobserved,
        Scenario::NoChallenge,
        Scenario::Boundary,
    ];
    pub const DECIDED: [Scenario; 4] =
        [Scenario::Classic, Scenario::Observed, Scenario::Unobserved, Scenario::NoChallenge];
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::Classic => "Classic",
            Scenario::Observed => "Observed",
            Scenario::Unobserved => "Unobserved",
            Scenario::NoChallenge => "No Challenge",
            Scenario::Boundary => "Boundary",
        };
        f.write_str(s)
    }
}

/// Labels a shift by the signs of its drops; any drop within `epsilon` of zero is `Boundary`.
pub fn classify_scenario(sd: f64, td: f64, epsilon: f64) -> Scenario {
    if sd.abs() <= epsilon || td.abs() <= epsilon {
        return Scenario::Boundary;
    }
    match (sd > 0.0, td > 0.0) {
        (true, true) => Scenario::Classic,
        (true, false) => Scenario::Observed,
        (false, true) => Scenario::Unobserved,
        (false, false) => Scenario::NoChallenge,
    }
}

/// Strict ascending order of the (SS, TT, ST) triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TripletOrdering {
    #[serde(rename = "ST<SS<TT")]
    StSsTt,
    #[serde(rename = "ST<TT<SS")]
    StTtSs,
    #[serde(rename = "TT<ST<SS")]
    TtStSs,
    #[serde(rename = "SS<ST<TT")]
    SsStTt,
    #[serde(rename = "SS<TT<ST")]
    SsTtSt,
    #[serde(rename = "TT<SS<ST")]
    TtSsSt,
    Degenerate,
}

impl TripletOrdering {
    pub const STRICT: [TripletOrdering; 6] = [
        TripletOrdering::StSsTt,
        TripletOrdering::StTtSs,
        TripletOrdering::TtStSs,
        TripletOrdering::SsStTt,
        TripletOrdering::SsTtSt,
        TripletOrdering::TtSsSt,
    ];

    /// The scenario implied by a strict ordering.
    pub fn scenario(self) -> Scenario {
        match self {
            TripletOrdering::StSsTt | TripletOrdering::StTtSs => Scenario::Classic,
            TripletOrdering::TtStSs => Scenario::Observed,
            TripletOrdering::SsStTt => Scenario::Unobserved,
            TripletOrdering::SsTtSt | TripletOrdering::TtSsSt => Scenario::NoChallenge,
            TripletOrdering::Degenerate => Scenario::Boundary,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TripletOrdering::StSsTt => "ST<SS<TT",
            TripletOrdering::StTtSs => "ST<TT<SS",
            TripletOrdering::TtStSs => "TT<ST<SS",
            TripletOrdering::SsStTt => "SS<ST<TT",
            TripletOrdering::SsTtSt => "SS<TT<ST",
            TripletOrdering::TtSsSt => "TT<SS<ST",
            TripletOrdering::Degenerate => "Degenerate",
        }
    }
}

impl fmt::Display for TripletOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn classify_ordering(ss: f64, tt: f64, st: f64, epsilon: f64) -> TripletOrdering {
    if (ss - tt).abs() <= epsilon || (ss - st).abs() <= epsilon || (tt - st).abs() <= epsilon {
        return TripletOrdering::Degenerate;
    }
    use TripletOrdering::*;
    match (ss < tt, ss < st, tt < st) {
        (true, false, false) => StSsTt,
        (false, false, false) => StTtSs,
        (false, false, true) => TtStSs,
        (true, true, false) => SsStTt,
        (true, true, true) => SsTtSt,
        (false, true, true) => TtSsSt,
        // remaining sign patterns are intransitive
        _ => Degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftMetrics {
    pub source: DomainId,
    pub target: DomainId,
    pub ss: f64,
    pub tt: f64,
    pub st: f64,
    pub sd: f64,
    pub td: f64,
    pub idd: f64,
    pub scenario: Scenario,
    pub ordering: TripletOrdering,
}

impl ShiftMetrics {
    pub fn from_triplet(
        source: DomainId,
        target: DomainId,
        ss: f64,
        tt: f64,
        st: f64,
        epsilon: f64,
    ) -> Self {
        let sd = ss - st;
        let td = tt - st;
        Self {
            source,
            target,
            ss,
            tt,
            st,
            sd,
            td,
            idd: ss - tt,
            scenario: classify_scenario(sd, td, epsilon),
            ordering: classify_ordering(ss, tt, st, epsilon),
        }
    }

    pub fn drop(&self, which: DropKind) -> f64 {
        match which {
            DropKind::Source => self.sd,
            DropKind::Target => self.td,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropKind {
    #[serde(rename = "SD")]
    Source,
    #[serde(rename = "TD")]
    Target,
}

pub fn shift_metrics(
    matrix: &PerformanceMatrix,
    source: &DomainId,
    target: &DomainId,
    epsilon: f64,
) -> Result<ShiftMetrics> {
    if source == target {
        return Err(MetricsError::SameDomain(source.clone()));
    }
    let cell = |s: &DomainId, t: &DomainId| {
        matrix.get(s, t).ok_or_else(|| MetricsError::MissingCell {
            source_domain: s.clone(),
            target: t.clone(),
        })
    };
    let ss = cell(source, source)?.value();
    let tt = cell(target, target)?.value();
    let st = cell(source, target)?.value();
    Ok(ShiftMetrics::from_triplet(source.clone(), target.clone(), ss, tt, st, epsilon))
}

/// A maximal drop and the shift it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftExtreme {
    pub value: f64,
    pub source: DomainId,
    pub target: DomainId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub model: String,
    pub n_shifts: usize,
    pub skipped_shifts: usize,
    pub full_cross_product: bool,
    pub avg_ss: f64,
    pub avg_tt: f64,
    pub avg_st: f64,
    pub avg_drop: f64,
    pub worst_sd: ShiftExtreme,
    pub worst_td: ShiftExtreme,
    pub mean_sd: f64,
    pub mean_td: f64,
    pub var_sd: Option<f64>,
    pub var_td: Option<f64>,
    pub std_sd: Option<f64>,
    pub std_td: Option<f64>,
    pub scenario_counts: BTreeMap<Scenario, usize>,
    pub ordering_counts: BTreeMap<TripletOrdering, usize>,
    pub degenerate_orderings: usize,
}

impl TaskSummary {
    /// `(var_sd, var_td)`, failing when fewer than two shifts were summarized.
    pub fn variances(&self) -> Result<(f64, f64)> {
        match (self.var_sd, self.var_td) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(MetricsError::InsufficientForVariance(self.n_shifts)),
        }
    }
}

fn mean_of(shifts: &[ShiftMetrics], f: impl Fn(&ShiftMetrics) -> f64) -> f64 {
    shifts.iter().map(f).collect::<KahanSum>().value() / shifts.len() as f64
}

fn worst(shifts: &[ShiftMetrics], which: DropKind) -> ShiftExtreme {
    // first maximum in input order
    let mut best = &shifts[0];
    for s in &shifts[1..] {
        if s.drop(which) > best.drop(which) {
            best = s;
        }
    }
    ShiftExtreme { value: best.drop(which), source: best.source.clone(), target: best.target.clone() }
}

pub fn task_summary(matrix: &PerformanceMatrix, epsilon: f64) -> Result<TaskSummary> {
    let set = matrix.shifts(epsilon);
    let mut summary = summarize_shifts(matrix.task(), matrix.model(), &set.shifts)?;
    summary.skipped_shifts = set.skipped.len();
    summary.full_cross_product = matrix.is_full_cross_product();
    Ok(summary)
}

/// Aggregates an arbitrary shift list (for example shifts pooled across models).
pub fn summarize_shifts(task: &str, model: &str, shifts: &[ShiftMetrics]) -> Result<TaskSummary> {
    if shifts.is_empty() {
        return Err(MetricsError::NoShifts);
    }
    let avg_ss = mean_of(shifts, |s| s.ss);
    let avg_tt = mean_of(shifts, |s| s.tt);
    let avg_st = mean_of(shifts, |s| s.st);
    let sd: Vec<f64> = shifts.iter().map(|s| s.sd).collect();
    let td: Vec<f64> = shifts.iter().map(|s| s.td).collect();
    let var_sd = stats::sample_var(&sd).ok();
    let var_td = stats::sample_var(&td).ok();

    let mut scenario_counts: BTreeMap<Scenario, usize> =
        Scenario::ALL.iter().map(|&s| (s, 0)).collect();
    let mut ordering_counts: BTreeMap<TripletOrdering, usize> =
        TripletOrdering::STRICT.iter().map(|&o| (o, 0)).collect();
    let mut degenerate_orderings = 0;
    for s in shifts {
        *scenario_counts.entry(s.scenario).or_default() += 1;
        match s.ordering {
            TripletOrdering::Degenerate => degenerate_orderings += 1,
            o => *ordering_counts.entry(o).or_default() += 1,
        }
    }

    Ok(TaskSummary {
        task: task.to_owned(),
        model: model.to_owned(),
        n_shifts: shifts.len(),
        skipped_shifts: 0,
        full_cross_product: false,
        avg_ss,
        avg_tt,
        avg_st,
        avg_drop: avg_ss - avg_st,
        worst_sd: worst(shifts, DropKind::Source),
        worst_td: worst(shifts, DropKind::Target),
        mean_sd: stats::sum(&sd) / sd.len() as f64,
        mean_td: stats::sum(&td) / td.len() as f64,
        var_sd,
        var_td,
        std_sd: var_sd.map(f64::sqrt),
        std_td: var_td.map(f64::sqrt),
        scenario_counts,
        ordering_counts,
        degenerate_orderings,
    })
}

/// Mean over source domains of each source's largest drop.
pub fn avg_per_source_worst_drop(shifts: &[ShiftMetrics], which: DropKind) -> Result<f64> {
    if shifts.is_empty() {
        return Err(MetricsError::EmptySourceGroup("<none>".into()));
    }
    let mut maxima: BTreeMap<&DomainId, f64> = BTreeMap::new();
    for s in shifts {
        let d = s.drop(which);
        maxima.entry(&s.source).and_modify(|m| *m = m.max(d)).or_insert(d);
    }
    let acc: KahanSum = maxima.values().copied().collect();
    Ok(acc.value() / maxima.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(name: &str) -> DomainId {
        DomainId::new(name).unwrap()
    }

    fn rec(s: &str, t: &str, v: f64) -> RunRecord {
        RunRecord {
            task: "sa".into(),
            model: "m".into(),
            source: d(s),
            target: d(t),
            score: Score::new(v).unwrap(),
        }
    }

    #[test]
    fn domain_ids_trim() {
        assert_eq!(d("  books "), d("books"));
        assert_eq!(DomainId::new("   "), Err(MetricsError::EmptyDomainId));
    }

    #[test]
    fn score_range() {
        assert!(Score::new(100.0).is_ok());
        assert!(Score::new(100.5).is_err());
        assert!(Score::new(f64::NAN).is_err());
        assert!(Score::within(100.5, 0.0, 200.0).is_ok());
    }

    #[test]
    fn build_matrix_completeness() {
        let m = build_matrix(&[rec("a", "a", 90.0), rec("b", "b", 80.0)]).unwrap();
        assert_eq!(m.len(), 1);
        assert!(!m[0].is_full_cross_product());

        let mut recs = Vec::new();
        for s in ["a", "b", "c"] {
            for t in ["a", "b", "c"] {
                recs.push(rec(s, t, 50.0));
            }
        }
        let m = build_matrix(&recs).unwrap();
        assert!(m[0].is_full_cross_product());
        assert_eq!(m[0].domains().len(), 3);
    }

    #[test]
    fn build_matrix_errors() {
        let r = build_matrix(&[rec("a", "b", 1.0), rec("a", "b", 2.0)]);
        assert!(matches!(r, Err(MetricsError::DuplicateKey(_))));
        assert_eq!(build_matrix(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn thought_experiment_shifts() {
        let m = build_matrix(&[rec("s", "s", 90.0), rec("t", "t", 80.0), rec("s", "t", 75.0)])
            .unwrap()
            .remove(0);
        let sh = shift_metrics(&m, &d("s"), &d("t"), DEFAULT_EPSILON).unwrap();
        assert_eq!((sh.sd, sh.td, sh.idd), (15.0, 5.0, 10.0));
        assert_eq!(sh.scenario, Scenario::Classic);
        assert_eq!(sh.ordering, TripletOrdering::StTtSs);

        let sh = ShiftMetrics::from_triplet(d("s"), d("t"), 90.0, 70.0, 75.0, DEFAULT_EPSILON);
        assert_eq!((sh.sd, sh.td, sh.idd), (15.0, -5.0, 20.0));
        assert_eq!(sh.scenario, Scenario::Observed);

        let sh = ShiftMetrics::from_triplet(d("s"), d("t"), 70.0, 70.0, 70.0, DEFAULT_EPSILON);
        assert_eq!((sh.sd, sh.td, sh.idd), (0.0, 0.0, 0.0));
        assert_eq!(sh.scenario, Scenario::Boundary);
        assert_eq!(sh.ordering, TripletOrdering::Degenerate);
    }

    #[test]
    fn shift_errors() {
        let m = build_matrix(&[rec("s", "s", 90.0), rec("s", "t", 75.0)]).unwrap().remove(0);
        assert_eq!(
            shift_metrics(&m, &d("s"), &d("t"), 0.0),
            Err(MetricsError::MissingCell { source_domain: d("t"), target: d("t") })
        );
        assert_eq!(shift_metrics(&m, &d("s"), &d("s"), 0.0), Err(MetricsError::SameDomain(d("s"))));
    }

    #[test]
    fn scenario_table() {
        assert_eq!(classify_scenario(15.0, 5.0, 1e-9), Scenario::Classic);
        assert_eq!(classify_scenario(-3.0, 4.0, 1e-9), Scenario::Unobserved);
        assert_eq!(classify_scenario(0.0, 7.0, 1e-9), Scenario::Boundary);
        assert_eq!(classify_scenario(-1.0, -2.0, 1e-9), Scenario::NoChallenge);
    }

    #[test]
    fn ordering_table() {
        assert_eq!(classify_ordering(90.0, 80.0, 75.0, 1e-9), TripletOrdering::StTtSs);
        assert_eq!(classify_ordering(70.0, 90.0, 75.0, 1e-9), TripletOrdering::SsStTt);
        assert_eq!(classify_ordering(50.0, 50.0 + 1e-12, 60.0, 1e-9), TripletOrdering::Degenerate);
        // each strict ordering agrees with the scenario signs
        for (ss, tt, st) in [(2., 3., 1.), (3., 2., 1.), (3., 1., 2.), (1., 3., 2.), (1., 2., 3.), (2., 1., 3.)] {
            let o = classify_ordering(ss, tt, st, 1e-9);
            assert_eq!(o.scenario(), classify_scenario(ss - st, tt - st, 1e-9), "{o}");
        }
    }

    #[test]
    fn two_domain_summary() {
        let m = build_matrix(&[
            rec("a", "a", 90.0),
            rec("b", "b", 80.0),
            rec("a", "b", 75.0),
            rec("b", "a", 85.0),
        ])
        .unwrap()
        .remove(0);
        let s = task_summary(&m, DEFAULT_EPSILON).unwrap();
        // oracle: enumerate both shifts by hand
        let sds = [90.0 - 75.0, 80.0 - 85.0];
        let tds = [80.0 - 75.0, 90.0 - 85.0];
        assert_eq!(s.n_shifts, 2);
        assert_eq!(s.avg_drop, 5.0);
        assert_eq!(s.mean_sd, (sds[0] + sds[1]) / 2.0);
        assert_eq!(s.mean_td, (tds[0] + tds[1]) / 2.0);
        assert_eq!(s.avg_ss, s.avg_tt);
        assert_eq!(s.worst_sd.value, 15.0);
        assert_eq!(s.worst_sd.source, d("a"));
        assert_eq!(s.worst_td.value, 5.0);
        assert!(s.full_cross_product);
        assert_eq!(s.variances().unwrap(), (200.0, 0.0));
    }

    #[test]
    fn missing_diagonal_skips_shifts() {
        let m = build_matrix(&[
            rec("a", "a", 90.0),
            rec("b", "b", 80.0),
            rec("a", "b", 75.0),
            rec("b", "a", 85.0),
            rec("a", "c", 60.0),
        ])
        .unwrap()
        .remove(0);
        let s = task_summary(&m, DEFAULT_EPSILON).unwrap();
        assert_eq!(s.n_shifts, 2);
        // a->c, b->c, c->a, c->b
        assert_eq!(s.skipped_shifts, 4);
        assert!(!s.full_cross_product);
    }

    #[test]
    fn summary_errors() {
        let m = build_matrix(&[rec("a", "a", 90.0)]).unwrap().remove(0);
        assert_eq!(task_summary(&m, 0.0), Err(MetricsError::NoShifts));
        let m = build_matrix(&[rec("a", "a", 90.0), rec("b", "b", 80.0), rec("a", "b", 70.0)])
            .unwrap()
            .remove(0);
        let s = task_summary(&m, 0.0).unwrap();
        assert_eq!(s.variances(), Err(MetricsError::InsufficientForVariance(1)));
    }

    #[test]
    fn per_source_worst() {
        let sh = |s: &str, t: &str, sd: f64| {
            ShiftMetrics::from_triplet(d(s), d(t), 50.0 + sd, 50.0, 50.0, 1e-9)
        };
        let one = [sh("a", "b", 3.0), sh("a", "c", 7.0)];
        assert!((avg_per_source_worst_drop(&one, DropKind::Source).unwrap() - 7.0).abs() < 1e-12);
        let two = [sh("a", "b", 7.0), sh("b", "a", 1.0)];
        assert!((avg_per_source_worst_drop(&two, DropKind::Source).unwrap() - 4.0).abs() < 1e-12);
        let flat = [sh("a", "b", 2.5), sh("b", "a", 2.5), sh("c", "a", 2.5)];
        assert!((avg_per_source_worst_drop(&flat, DropKind::Source).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(
            avg_per_source_worst_drop(&[], DropKind::Target),
            Err(MetricsError::EmptySourceGroup(_))
        ));
    }

    proptest! {
        #[test]
        fn scenario_is_scale_invariant(sd in -50.0f64..50.0, td in -50.0f64..50.0, k in 0.01f64..100.0) {
            prop_assume!(sd.abs() > 1e-6 && td.abs() > 1e-6);
            prop_assert_eq!(classify_scenario(sd, td, 1e-9), classify_scenario(k * sd, k * td, 1e-9));
        }

        #[test]
        fn ordering_is_shift_invariant(ss in 0.0f64..100.0, tt in 0.0f64..100.0, st in 0.0f64..100.0, c in -20.0f64..20.0) {
            prop_assume!((ss - tt).abs() > 1e-6 && (ss - st).abs() > 1e-6 && (tt - st).abs() > 1e-6);
            prop_assert_eq!(classify_ordering(ss, tt, st, 1e-9), classify_ordering(ss + c, tt + c, st + c, 1e-9));
        }

        #[test]
        fn full_matrix_identities(n in 2usize..7, seed in proptest::collection::vec(0.0f64..100.0, 49)) {
            let names: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let mut recs = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    recs.push(rec(&names[i], &names[j], seed[i * 7 + j]));
                }
            }
            let m = build_matrix(&recs).unwrap().remove(0);
            let s = task_summary(&m, DEFAULT_EPSILON).unwrap();
            prop_assert_eq!(s.n_shifts, n * (n - 1));
            prop_assert!((s.avg_ss - s.avg_tt).abs() < 1e-12);
            prop_assert!((s.mean_sd - s.mean_td).abs() < 1e-12);
            prop_assert!((s.mean_sd - s.avg_drop).abs() < 1e-12);
            prop_assert!(s.worst_sd.value >= s.mean_sd && s.worst_td.value >= s.mean_td);
            prop_assert_eq!(s.scenario_counts.values().sum::<usize>(), s.n_shifts);
            prop_assert_eq!(s.ordering_counts.values().sum::<usize>() + s.degenerate_orderings, s.n_shifts);
            for sh in m.shifts(DEFAULT_EPSILON).shifts {
                prop_assert!((sh.sd - (sh.td + sh.idd)).abs() < 1e-12);
            }
        }
    }
}
