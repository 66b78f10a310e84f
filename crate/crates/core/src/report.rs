//! The report document and its JSON, Markdown and CSV renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{ChallengeCurvePoint, CharacterizationRow, PredictorCorrelations, ScenarioTestReport};
use crate::divergence::DivergenceMatrix;
use crate::metrics::{DomainId, Scenario, TaskSummary, TripletOrdering};
use crate::theorem::{EquivalenceReport, IdentityReport, MomentSet, SimulationOutcome, SweepSummary};

/// Placeholder timestamp written when deterministic output is requested.
pub const ZERO_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("section `{0}` is not populated in this report")]
    UnpopulatedSection(Section),
    #[error("CSV output holds exactly one section, got {0}")]
    CsvSectionCount(usize),
    #[error("write failed: {0}")]
    WriteFailure(String),
}

impl From<std::io::Error> for ReportError {
    fn from(e: std::io::Error) -> Self {
        ReportError::WriteFailure(e.to_string())
    }
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::WriteFailure(e.to_string())
    }
}

impl From<serde_json::Error> for ReportError {
    fn from(e: serde_json::Error) -> Self {
        ReportError::WriteFailure(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ReportError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format `{other}` (json, markdown, csv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Section {
    Summaries,
    Characterization,
    ScenarioTests,
    ChallengeCurves,
    Divergence,
    Predictors,
    Theorem,
}

impl Section {
    pub const ALL: [Section; 7] = [
        Section::Summaries,
        Section::Characterization,
        Section::ScenarioTests,
        Section::ChallengeCurves,
        Section::Divergence,
        Section::Predictors,
        Section::Theorem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Section::Summaries => "summaries",
            Section::Characterization => "characterization",
            Section::ScenarioTests => "scenario-tests",
            Section::ChallengeCurves => "challenge-curves",
            Section::Divergence => "divergence",
            Section::Predictors => "predictors",
            Section::Theorem => "theorem",
        }
    }
}

impl std::fmt::Display for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Section::ALL
            .into_iter()
            .find(|sec| sec.name() == s)
            .ok_or_else(|| format!("unknown section `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGroupTest {
    pub task: String,
    pub model_group: String,
    pub test: ScenarioTestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeCurve {
    pub task: String,
    pub model_group: String,
    pub points: Vec<ChallengeCurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorRow {
    pub task: String,
    pub model_group: String,
    pub correlations: PredictorCorrelations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactCheck {
    pub atoms: usize,
    pub moments: MomentSet,
    pub identities: IdentityReport,
    pub equivalence: EquivalenceReport,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TheoremSection {
    pub exact: Option<ExactCheck>,
    pub simulation: Option<SimulationOutcome>,
    pub sweep: Option<SweepSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedShift {
    pub task: String,
    pub model: String,
    pub source: DomainId,
    pub target: DomainId,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub skipped_shifts: Vec<SkippedShift>,
    pub degenerate_orderings: usize,
    pub boundary_shifts: usize,
    pub partial_matrices: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub generated_at: String,
    pub tool_version: String,
    /// Effective configuration after merging the config file and flags.
    pub config: BTreeMap<String, String>,
    pub summaries: Vec<TaskSummary>,
    pub characterization: Vec<CharacterizationRow>,
    pub scenario_tests: Vec<ScenarioGroupTest>,
    pub challenge_curves: Vec<ChallengeCurve>,
    pub divergence: Option<DivergenceMatrix>,
    pub predictor_correlations: Option<Vec<PredictorRow>>,
    pub theorem: Option<TheoremSection>,
    pub diagnostics: Diagnostics,
}

impl Report {
    pub fn new(deterministic: bool) -> Self {
        let generated_at = if deterministic {
            ZERO_TIMESTAMP.to_owned()
        } else {
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        };
        Self {
            generated_at,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: BTreeMap::new(),
            summaries: Vec::new(),
            characterization: Vec::new(),
            scenario_tests: Vec::new(),
            challenge_curves: Vec::new(),
            divergence: None,
            predictor_correlations: None,
            theorem: None,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn is_populated(&self, section: Section) -> bool {
        match section {
            Section::Summaries => !self.summaries.is_empty(),
            Section::Characterization => !self.characterization.is_empty(),
            Section::ScenarioTests => !self.scenario_tests.is_empty(),
            Section::ChallengeCurves => !self.challenge_curves.is_empty(),
            Section::Divergence => self.divergence.is_some(),
            Section::Predictors => self.predictor_correlations.is_some(),
            Section::Theorem => self.theorem.is_some(),
        }
    }

    pub fn populated_sections(&self) -> Vec<Section> {
        Section::ALL.into_iter().filter(|&s| self.is_populated(s)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Writes `sections` of `report` in `format`.
///
/// An empty `sections` list means every populated section. JSON always carries
/// the whole report; the section list only checks that the requested parts exist.
pub fn emit_report(report: &Report, format: ReportFormat, sections: &[Section], out: &mut dyn Write) -> Result<()> {
    for &s in sections {
        if !report.is_populated(s) {
            return Err(ReportError::UnpopulatedSection(s));
        }
    }
    let sections = if sections.is_empty() { report.populated_sections() } else { sections.to_vec() };
    match format {
        ReportFormat::Json => out.write_all(report.to_json()?.as_bytes())?,
        ReportFormat::Markdown => out.write_all(render_markdown(report, &sections).as_bytes())?,
        ReportFormat::Csv => {
            if sections.len() != 1 {
                return Err(ReportError::CsvSectionCount(sections.len()));
            }
            write_csv(report, sections[0], out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), f4)
}

fn table(out: &mut String, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out.push('\n');
}

fn by_task<T>(items: &[T], task: impl Fn(&T) -> &str) -> BTreeMap<String, Vec<&T>> {
    let mut map: BTreeMap<String, Vec<&T>> = BTreeMap::new();
    for item in items {
        map.entry(task(item).to_owned()).or_default().push(item);
    }
    map
}

pub fn render_markdown(report: &Report, sections: &[Section]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Domain robustness report\n");
    let _ = writeln!(out, "Generated {} by version {}.\n", report.generated_at, report.tool_version);
    for &section in sections {
        match section {
            Section::Summaries => md_summaries(&mut out, report),
            Section::Characterization => md_characterization(&mut out, report),
            Section::ScenarioTests => md_scenarios(&mut out, report),
            Section::ChallengeCurves => md_curves(&mut out, report),
            Section::Divergence => md_divergence(&mut out, report),
            Section::Predictors => md_predictors(&mut out, report),
            Section::Theorem => md_theorem(&mut out, report),
        }
    }
    md_diagnostics(&mut out, &report.diagnostics);
    out
}

fn md_summaries(out: &mut String, report: &Report) {
    let _ = writeln!(out, "## Summaries\n");
    for (task, rows) in by_task(&report.summaries, |s| &s.task) {
        let _ = writeln!(out, "### {task}\n");
        table(
            out,
            &["model", "AVG SS", "AVG ST", "Δ̄", "W_SD", "W_TD"],
            rows.iter().map(|s| {
                vec![
                    s.model.clone(),
                    f2(s.avg_ss),
                    f2(s.avg_st),
                    f2(s.avg_drop),
                    f2(s.worst_sd.value),
                    f2(s.worst_td.value),
                ]
            }),
        );
    }
}

fn md_characterization(out: &mut String, report: &Report) {
    let _ = writeln!(out, "## Characterization\n");
    for (task, rows) in by_task(&report.characterization, |r| &r.task) {
        let _ = writeln!(out, "### {task}\n");
        table(
            out,
            &[
                "group", "n", "Var SD", "Var TD", "W_SD", "W_TD", "ρ(ST,SS)", "ρ(ST,TT)", "R² IDD~SD", "R² IDD~TD",
                "SD>0", "TD>0",
            ],
            rows.iter().map(|r| {
                vec![
                    r.model_group.clone(),
                    r.n_shifts.to_string(),
                    f2(r.var_sd),
                    f2(r.var_td),
                    f2(r.worst_sd),
                    f2(r.worst_td),
                    opt4(r.corr_st_ss.spearman),
                    opt4(r.corr_st_tt.spearman),
                    opt4(r.r2_idd_sd),
                    opt4(r.r2_idd_td),
                    f2(r.positive_sd_share),
                    f2(r.positive_td_share),
                ]
            }),
        );
    }
}

fn md_scenarios(out: &mut String, report: &Report) {
    let _ = writeln!(out, "## Scenario tests\n");
    let mut header = vec!["task", "group"];
    header.extend(TripletOrdering::STRICT.iter().map(|o| o.label()));
    header.extend(["χ²", "df", "p", "α adj", "reject"]);
    table(
        out,
        &header,
        report.scenario_tests.iter().map(|g| {
            let mut row = vec![g.task.clone(), g.model_group.clone()];
            row.extend(
                TripletOrdering::STRICT
                    .iter()
                    .map(|o| g.test.ordering_counts.get(o).copied().unwrap_or(0).to_string()),
            );
            let chi = &g.test.chi;
            row.extend([
                f4(chi.statistic),
                chi.df.to_string(),
                f4(chi.p_value),
                f4(chi.alpha_adjusted),
                chi.reject.to_string(),
            ]);
            row
        }),
    );
    let _ = writeln!(out, "Scenario proportions:\n");
    let mut header = vec!["task", "group"];
    let names: Vec<String> = Scenario::DECIDED.iter().map(|s| s.to_string()).collect();
    header.extend(names.iter().map(String::as_str));
    table(
        out,
        &header,
        report.scenario_tests.iter().map(|g| {
            let mut row = vec![g.task.clone(), g.model_group.clone()];
            row.extend(
                Scenario::DECIDED
                    .iter()
                    .map(|s| f2(g.test.scenario_proportions.get(s).copied().unwrap_or(0.0))),
            );
            row
        }),
    );
}

fn md_curves(out: &mut String, report: &Report) {
    let _ = writeln!(out, "## Challenge curves\n");
    table(
        out,
        &["task", "group", "ranked by", "k", "avg SD", "avg TD"],
        report.challenge_curves.iter().flat_map(|c| {
            c.points.iter().map(|p| {
                vec![
                    c.task.clone(),
                    c.model_group.clone(),
                    ranking_name(p).to_owned(),
                    p.k.to_string(),
                    f2(p.avg_sd_over_top_k),
                    f2(p.avg_td_over_top_k),
                ]
            })
        }),
    );
}

fn ranking_name(p: &ChallengeCurvePoint) -> &'static str {
    match p.ranking_key {
        crate::analysis::RankingKey::BySD => "SD",
        crate::analysis::RankingKey::ByTD => "TD",
    }
}

fn md_divergence(out: &mut String, report: &Report) {
    let Some(d) = &report.divergence else { return };
    let _ = writeln!(out, "## Divergence\n");
    table(
        out,
        &["domain A", "domain B", "JSD", "vocabulary"],
        d.results.iter().map(|r| {
            vec![r.pair.0.to_string(), r.pair.1.to_string(), f4(r.jsd), r.vocab_size_used.to_string()]
        }),
    );
    for f in &d.failures {
        let _ = writeln!(out, "- failed {} / {}: {}", f.pair.0, f.pair.1, f.error);
    }
    if !d.failures.is_empty() {
        out.push('\n');
    }
}

fn md_predictors(out: &mut String, report: &Report) {
    let Some(rows) = &report.predictor_correlations else { return };
    let _ = writeln!(out, "## Predictor correlations (Spearman)\n");
    table(
        out,
        &["task", "group", "n", "JS~SD", "JS~TD", "IDD~SD", "IDD~TD"],
        rows.iter().map(|r| {
            let c = &r.correlations;
            vec![
                r.task.clone(),
                r.model_group.clone(),
                c.n_shifts.to_string(),
                opt4(c.js_vs_sd),
                opt4(c.js_vs_td),
                opt4(c.idd_vs_sd),
                opt4(c.idd_vs_td),
            ]
        }),
    );
}

fn signs(e: &EquivalenceReport) -> String {
    format!("{} {} {} {} (abs form {})", e.c1, e.c2, e.c3, e.c4_sq, e.c4_abs)
}

fn md_theorem(out: &mut String, report: &Report) {
    let Some(t) = &report.theorem else { return };
    let _ = writeln!(out, "## Theorem checks\n");
    if let Some(x) = &t.exact {
        let _ = writeln!(out, "Exact joint with {} atoms: x = {:.6}, y = {:.6}.\n", x.atoms, x.moments.x, x.moments.y);
        table(
            out,
            &["identity", "lhs", "rhs", "residual", "passed"],
            x.identities.checks.iter().map(|c| {
                vec![
                    c.name.clone(),
                    format!("{:.6}", c.lhs),
                    format!("{:.6}", c.rhs),
                    format!("{:.3e}", c.residual),
                    c.passed.map_or_else(|| "skipped".to_owned(), |p| p.to_string()),
                ]
            }),
        );
        let _ = writeln!(out, "Condition signs: {}; asserted: {}; agree: {}.\n", signs(&x.equivalence), x.equivalence.asserted, x.equivalence.all_agree_proved);
    }
    if let Some(s) = &t.simulation {
        let _ = writeln!(
            out,
            "Simulation: {} trials on {} domains. Exact signs {}; empirical signs {}; match: {}.\n",
            s.trace.trials,
            s.space.n(),
            signs(&s.exact_equivalence),
            signs(&s.empirical_equivalence),
            s.signs_match
        );
    }
    if let Some(w) = &t.sweep {
        let _ = writeln!(
            out,
            "Sweep over {} joints: {} asserted, {} agreements, {} failures, {} identity failures, {} abs-form disagreements. Margin range {} to {}.\n",
            w.joints,
            w.asserted,
            w.agreements,
            w.failures.len(),
            w.identity_failures.len(),
            w.abs_variant_disagreements.len(),
            w.min_margin.map_or_else(|| "n/a".into(), |v| format!("{v:.3e}")),
            w.max_margin.map_or_else(|| "n/a".into(), |v| format!("{v:.3e}")),
        );
    }
}

fn md_diagnostics(out: &mut String, d: &Diagnostics) {
    if d.skipped_shifts.is_empty() && d.partial_matrices.is_empty() && d.warnings.is_empty() && d.degenerate_orderings == 0 {
        return;
    }
    let _ = writeln!(out, "## Diagnostics\n");
    let _ = writeln!(out, "- skipped shifts: {}", d.skipped_shifts.len());
    let _ = writeln!(out, "- degenerate orderings: {}", d.degenerate_orderings);
    let _ = writeln!(out, "- boundary shifts: {}", d.boundary_shifts);
    for p in &d.partial_matrices {
        let _ = writeln!(out, "- partial matrix: {p}");
    }
    for w in &d.warnings {
        let _ = writeln!(out, "- {w}");
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(report: &Report, section: Section, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match section {
        Section::Summaries => {
            let mut header: Vec<String> = [
                "task", "model", "n_shifts", "skipped_shifts", "full_cross_product", "avg_ss", "avg_tt", "avg_st",
                "avg_drop", "worst_sd", "worst_sd_source", "worst_sd_target", "worst_td", "worst_td_source",
                "worst_td_target", "mean_sd", "mean_td", "var_sd", "var_td", "std_sd", "std_td",
            ]
            .map(String::from)
            .to_vec();
            header.extend(Scenario::ALL.iter().map(|s| format!("n_{}", s.to_string().to_lowercase())));
            header.push("degenerate_orderings".into());
            w.write_record(&header)?;
            for s in &report.summaries {
                let mut row = vec![
                    s.task.clone(),
                    s.model.clone(),
                    s.n_shifts.to_string(),
                    s.skipped_shifts.to_string(),
                    s.full_cross_product.to_string(),
                    s.avg_ss.to_string(),
                    s.avg_tt.to_string(),
                    s.avg_st.to_string(),
                    s.avg_drop.to_string(),
                    s.worst_sd.value.to_string(),
                    s.worst_sd.source.to_string(),
                    s.worst_sd.target.to_string(),
                    s.worst_td.value.to_string(),
                    s.worst_td.source.to_string(),
                    s.worst_td.target.to_string(),
                    s.mean_sd.to_string(),
                    s.mean_td.to_string(),
                    opt(s.var_sd),
                    opt(s.var_td),
                    opt(s.std_sd),
                    opt(s.std_td),
                ];
                row.extend(Scenario::ALL.iter().map(|sc| s.scenario_counts.get(sc).copied().unwrap_or(0).to_string()));
                row.push(s.degenerate_orderings.to_string());
                w.write_record(&row)?;
            }
        }
        Section::Characterization => {
            w.write_record([
                "task", "model_group", "n_shifts", "var_sd", "var_td", "std_sd", "std_td", "worst_sd", "worst_td",
                "pearson_st_ss", "spearman_st_ss", "pearson_st_tt", "spearman_st_tt", "r2_idd_sd", "r2_idd_td",
                "mad_st_ss", "mad_st_td", "positive_sd_share", "positive_td_share", "moment_link_agree",
            ])?;
            for r in &report.characterization {
                w.write_record([
                    r.task.clone(),
                    r.model_group.clone(),
                    r.n_shifts.to_string(),
                    r.var_sd.to_string(),
                    r.var_td.to_string(),
                    r.std_sd.to_string(),
                    r.std_td.to_string(),
                    r.worst_sd.to_string(),
                    r.worst_td.to_string(),
                    opt(r.corr_st_ss.pearson),
                    opt(r.corr_st_ss.spearman),
                    opt(r.corr_st_tt.pearson),
                    opt(r.corr_st_tt.spearman),
                    opt(r.r2_idd_sd),
                    opt(r.r2_idd_td),
                    r.mad_st_ss.to_string(),
                    r.mad_st_td.to_string(),
                    r.positive_sd_share.to_string(),
                    r.positive_td_share.to_string(),
                    r.moment_link.agree.to_string(),
                ])?;
            }
        }
        Section::ScenarioTests => {
            let mut header: Vec<String> = vec!["task".into(), "model_group".into()];
            header.extend(TripletOrdering::STRICT.iter().map(|o| o.label().to_owned()));
            header.extend(["excluded_degenerate", "statistic", "df", "p_value", "alpha_adjusted", "reject"].map(String::from));
            w.write_record(&header)?;
            for g in &report.scenario_tests {
                let mut row = vec![g.task.clone(), g.model_group.clone()];
                row.extend(
                    TripletOrdering::STRICT
                        .iter()
                        .map(|o| g.test.ordering_counts.get(o).copied().unwrap_or(0).to_string()),
                );
                let chi = &g.test.chi;
                row.extend([
                    g.test.excluded_degenerate.to_string(),
                    chi.statistic.to_string(),
                    chi.df.to_string(),
                    chi.p_value.to_string(),
                    chi.alpha_adjusted.to_string(),
                    chi.reject.to_string(),
                ]);
                w.write_record(&row)?;
            }
        }
        Section::ChallengeCurves => {
            w.write_record(["task", "model_group", "ranking_key", "k", "avg_sd_over_top_k", "avg_td_over_top_k"])?;
            for c in &report.challenge_curves {
                for p in &c.points {
                    w.write_record([
                        c.task.clone(),
                        c.model_group.clone(),
                        ranking_name(p).to_owned(),
                        p.k.to_string(),
                        p.avg_sd_over_top_k.to_string(),
                        p.avg_td_over_top_k.to_string(),
                    ])?;
                }
            }
        }
        Section::Divergence => {
            let d = report.divergence.as_ref().ok_or(ReportError::UnpopulatedSection(section))?;
            w.write_record(["domain_a", "domain_b", "jsd", "vocab_size_used"])?;
            for r in &d.results {
                w.write_record([r.pair.0.to_string(), r.pair.1.to_string(), r.jsd.to_string(), r.vocab_size_used.to_string()])?;
            }
        }
        Section::Predictors => {
            let rows = report.predictor_correlations.as_ref().ok_or(ReportError::UnpopulatedSection(section))?;
            w.write_record(["task", "model_group", "n_shifts", "js_vs_sd", "js_vs_td", "idd_vs_sd", "idd_vs_td"])?;
            for r in rows {
                let c = &r.correlations;
                w.write_record([
                    r.task.clone(),
                    r.model_group.clone(),
                    c.n_shifts.to_string(),
                    opt(c.js_vs_sd),
                    opt(c.js_vs_td),
                    opt(c.idd_vs_sd),
                    opt(c.idd_vs_td),
                ])?;
            }
        }
        Section::Theorem => {
            let t = report.theorem.as_ref().ok_or(ReportError::UnpopulatedSection(section))?;
            w.write_record(["source", "quantity", "value"])?;
            let moments = |label: &str, m: &MomentSet, w: &mut csv::Writer<&mut dyn Write>| -> Result<()> {
                let value = serde_json::to_value(m)?;
                if let serde_json::Value::Object(map) = value {
                    for (k, v) in map {
                        w.write_record([label, k.as_str(), v.to_string().as_str()])?;
                    }
                }
                Ok(())
            };
            if let Some(x) = &t.exact {
                moments("exact", &x.moments, &mut w)?;
            }
            if let Some(s) = &t.simulation {
                moments("simulation_exact", &s.exact, &mut w)?;
                moments("simulation_empirical", &s.empirical, &mut w)?;
            }
            if let Some(s) = &t.sweep {
                w.write_record(["sweep", "joints", &s.joints.to_string()])?;
                w.write_record(["sweep", "asserted", &s.asserted.to_string()])?;
                w.write_record(["sweep", "failures", &s.failures.len().to_string()])?;
                w.write_record(["sweep", "max_identity_residual", &s.max_identity_residual.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{build_matrix, task_summary, RunRecord, Score};

    fn summary(avg_ss: f64, avg_st: f64) -> TaskSummary {
        let d = |s: &str| DomainId::new(s).unwrap();
        let rec = |s: &str, t: &str, v: f64| RunRecord {
            task: "sa".into(),
            model: "m".into(),
            source: d(s),
            target: d(t),
            score: Score::new(v).unwrap(),
        };
        let records = vec![
            rec("a", "a", avg_ss),
            rec("b", "b", avg_ss),
            rec("a", "b", avg_st),
            rec("b", "a", avg_st),
        ];
        task_summary(&build_matrix(&records).unwrap()[0], 1e-9).unwrap()
    }

    fn emit(report: &Report, format: ReportFormat, sections: &[Section]) -> Result<String> {
        let mut buf = Vec::new();
        emit_report(report, format, sections, &mut buf)?;
        Ok(String::from_utf8(buf).unwrap())
    }

    #[test]
    fn markdown_shows_drop_to_two_decimals() {
        let mut r = Report::new(true);
        r.summaries.push(summary(90.0, 85.0));
        let md = emit(&r, ReportFormat::Markdown, &[Section::Summaries]).unwrap();
        assert!(md.contains("| model | AVG SS | AVG ST | Δ̄ | W_SD | W_TD |"), "{md}");
        assert!(md.contains("| m | 90.00 | 85.00 | 5.00 | 5.00 | 5.00 |"), "{md}");
    }

    #[test]
    fn json_round_trip_is_identity() {
        let mut r = Report::new(false);
        r.summaries.push(summary(81.3, 77.1));
        r.config.insert("epsilon".into(), "1e-9".into());
        let text = emit(&r, ReportFormat::Json, &[]).unwrap();
        assert_eq!(Report::from_json(&text).unwrap(), r);
    }

    #[test]
    fn missing_section_is_an_error() {
        let mut r = Report::new(true);
        r.summaries.push(summary(90.0, 85.0));
        let e = emit(&r, ReportFormat::Csv, &[Section::Divergence]).unwrap_err();
        assert!(matches!(e, ReportError::UnpopulatedSection(Section::Divergence)));
        let e = emit(&r, ReportFormat::Csv, &[]).map(|_| ());
        assert!(e.is_ok());
    }

    #[test]
    fn csv_has_one_row_per_summary() {
        let mut r = Report::new(true);
        r.summaries.push(summary(90.0, 85.0));
        r.summaries.push(summary(70.0, 60.0));
        let text = emit(&r, ReportFormat::Csv, &[Section::Summaries]).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("sa,m,2,0,true,90,90,85,5,"));
    }

    #[test]
    fn section_names_parse() {
        for s in Section::ALL {
            assert_eq!(s.name().parse::<Section>().unwrap(), s);
        }
    }
}
