//! Command-line front end.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error, 3 assertion failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::analysis::{ChiCategories, Pooling, RankingKey};
use crate::divergence::{divergence_matrix, parse_stopwords, DivergenceConfig, LogBase};
use crate::ingest::{self, IngestOptions, ResultsFormat, ScoreScale};
use crate::metrics::{build_matrix, PerformanceMatrix, DEFAULT_EPSILON};
use crate::pipeline::{self, CharacterizeOptions};
use crate::report::{emit_report, ExactCheck, Report, ReportFormat, Section, TheoremSection};
use crate::theorem::{
    check_equivalence, draw_samples, exact_moments, simulate_space, sweep, verify_identities, DiscreteJoint,
    PairMode, SimConfig, Tolerance,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "domrob", version, about = "Domain-robustness analysis of cross-domain evaluation results")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Results file (CSV or JSONL, chosen by extension).
    #[arg(long, global = true)]
    pub results: Option<PathBuf>,
    /// Report destination; without it the report goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// json, markdown or csv. Defaults from the --out extension, else json.
    #[arg(long, global = true)]
    pub format: Option<ReportFormat>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// unit (0-1 scores) or percent (0-100 scores).
    #[arg(long, global = true)]
    pub score_scale: Option<ScoreScale>,
    /// Accept any finite score rather than the scale's native range.
    #[arg(long, global = true)]
    pub wide_range: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with [global], [characterize], [divergence], [verify-theorem] and [simulation] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Zero the report timestamp so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Comma-separated report sections to emit.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sections: Vec<Section>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per (task, model) drop summaries.
    Analyze,
    /// Variance, correlation, ordering and challenge-curve analysis.
    Characterize(CharacterizeArgs),
    /// Jensen-Shannon divergence between domain corpora.
    Divergence(DivergenceArgs),
    /// Exact and simulated checks of the drop-comparison theorem.
    VerifyTheorem(TheoremArgs),
}

#[derive(Debug, Args)]
pub struct CharacterizeArgs {
    /// per-model, per-task or pooled.
    #[arg(long)]
    pub pooling: Option<Pooling>,
    /// sd or td.
    #[arg(long)]
    pub ranking: Option<RankingKey>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of comparisons for the Bonferroni correction.
    #[arg(long)]
    pub m: Option<u32>,
    /// orderings or scenarios.
    #[arg(long)]
    pub categories: Option<ChiCategories>,
}

#[derive(Debug, Args)]
pub struct DivergenceArgs {
    /// Directory of domains or a JSONL file of {"domain", "text"} lines.
    #[arg(long)]
    pub corpora: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Stopword file, one word per line; replaces the bundled list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// 2 or e.
    #[arg(long)]
    pub base: Option<LogBase>,
    #[arg(long)]
    pub min_token_length: Option<usize>,
    /// Grouping for predictor correlations when --results is given.
    #[arg(long)]
    pub pooling: Option<Pooling>,
}

#[derive(Debug, Args)]
pub struct TheoremArgs {
    /// CSV of joint atoms with header ss,tt,st,prob.
    #[arg(long)]
    pub atoms: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Run an exact sweep over this many random domain spaces.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// independent or distinct.
    #[arg(long)]
    pub pair_mode: Option<PairMode>,
    #[arg(long)]
    pub n_domains: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Write every simulated trial as CSV (trial,ss,tt,st).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    global: GlobalFile,
    characterize: CharacterizeFile,
    divergence: DivergenceFile,
    #[serde(rename = "verify-theorem")]
    verify_theorem: TheoremFile,
    simulation: Option<SimConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GlobalFile {
    results: Option<PathBuf>,
    out: Option<PathBuf>,
    format: Option<String>,
    epsilon: Option<f64>,
    score_scale: Option<String>,
    wide_range: Option<bool>,
    seed: Option<u64>,
    deterministic: Option<bool>,
    sections: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CharacterizeFile {
    pooling: Option<String>,
    ranking: Option<String>,
    ks: Option<Vec<usize>>,
    alpha: Option<f64>,
    m: Option<u32>,
    categories: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DivergenceFile {
    corpora: Option<PathBuf>,
    top_k: Option<usize>,
    stopwords: Option<PathBuf>,
    base: Option<String>,
    min_token_length: Option<usize>,
    pooling: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TheoremFile {
    atoms: Option<PathBuf>,
    trials: Option<usize>,
    seeds: Option<u64>,
    workers: Option<usize>,
    pair_mode: Option<String>,
    trace: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Assertion(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Assertion(_) => EXIT_ASSERTION,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Assertion(m) => m,
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn data(e: impl Display) -> Failure {
    Failure::Data(e.to_string())
}

/// Serialized name of a unit enum variant, as used in config files.
fn label<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn pick<T: FromStr>(flag: Option<T>, file: Option<&str>, key: &str) -> Outcome<Option<T>>
where
    T::Err: Display,
{
    match (flag, file) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(s)) => s.parse().map(Some).map_err(|e| Failure::Usage(format!("config `{key}`: {e}"))),
        (None, None) => Ok(None),
    }
}

/// Settings shared by every subcommand after merging flags over the config file.
struct Context {
    results: Option<PathBuf>,
    out: Option<PathBuf>,
    format: ReportFormat,
    epsilon: f64,
    ingest: IngestOptions,
    seed: Option<u64>,
    deterministic: bool,
    sections: Vec<Section>,
    echo: BTreeMap<String, String>,
}

impl Context {
    fn new(g: GlobalArgs, f: &GlobalFile) -> Outcome<Self> {
        let out = g.out.or_else(|| f.out.clone());
        let format = match pick(g.format, f.format.as_deref(), "format")? {
            Some(fmt) => fmt,
            None => match out.as_deref().and_then(Path::extension).and_then(|e| e.to_str()) {
                Some("md") => ReportFormat::Markdown,
                Some("csv") => ReportFormat::Csv,
                _ => ReportFormat::Json,
            },
        };
        let epsilon = g.epsilon.or(f.epsilon).unwrap_or(DEFAULT_EPSILON);
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Failure::Usage(format!("epsilon must be a non-negative number, got {epsilon}")));
        }
        let scale = pick(g.score_scale, f.score_scale.as_deref(), "score_scale")?.unwrap_or_default();
        let sections = if g.sections.is_empty() {
            f.sections
                .iter()
                .flatten()
                .map(|s| s.parse().map_err(Failure::Usage))
                .collect::<Outcome<Vec<Section>>>()?
        } else {
            g.sections
        };
        let ctx = Self {
            results: g.results.or_else(|| f.results.clone()),
            out,
            format,
            epsilon,
            ingest: IngestOptions { scale, wide_range: g.wide_range || f.wide_range.unwrap_or(false) },
            seed: g.seed.or(f.seed),
            deterministic: g.deterministic || f.deterministic.unwrap_or(false),
            sections,
            echo: BTreeMap::new(),
        };
        Ok(ctx)
    }

    fn echo(&mut self, key: &str, value: impl Display) {
        self.echo.insert(key.to_owned(), value.to_string());
    }

    fn echo_global(&mut self, command: &str) {
        self.echo("command", command);
        self.echo("epsilon", self.epsilon);
        self.echo("format", label(&self.format));
        self.echo("score_scale", label(&self.ingest.scale));
        self.echo("wide_range", self.ingest.wide_range);
        if let Some(p) = self.results.clone() {
            self.echo("results", p.display());
        }
        if let Some(s) = self.seed {
            self.echo("seed", s);
        }
    }

    fn matrices(&self) -> Outcome<Vec<PerformanceMatrix>> {
        let path = self.results.as_deref().ok_or_else(|| Failure::Usage("--results is required".into()))?;
        let records =
            ingest::parse_results(path, ResultsFormat::from_path(path), self.ingest).map_err(data)?;
        build_matrix(&records).map_err(data)
    }

    fn report(&self) -> Report {
        let mut r = Report::new(self.deterministic);
        r.config = self.echo.clone();
        r
    }

    fn write(&self, report: &Report, default_csv: Section, stdout: &mut dyn Write) -> Outcome<()> {
        let mut sections = self.sections.clone();
        if sections.is_empty() && self.format == ReportFormat::Csv {
            sections.push(default_csv);
        }
        match &self.out {
            Some(path) => {
                let file = File::create(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
                let mut w = BufWriter::new(file);
                emit_report(report, self.format, &sections, &mut w).map_err(data)
            }
            None => emit_report(report, self.format, &sections, stdout).map_err(data),
        }
    }
}

fn load_file_config(path: Option<&Path>) -> Outcome<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn print_warnings(report: &Report, stderr: &mut dyn Write) {
    let d = &report.diagnostics;
    if !d.skipped_shifts.is_empty() {
        let _ = writeln!(stderr, "warning: {} shifts skipped for missing cells", d.skipped_shifts.len());
    }
    for p in &d.partial_matrices {
        let _ = writeln!(stderr, "warning: partial matrix {p}");
    }
    for w in &d.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
}

/// Parses `args` (including the program name) and runs the chosen command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let kind = match f {
                Failure::Usage(_) => "usage error",
                Failure::Data(_) => "error",
                Failure::Assertion(_) => "assertion failed",
            };
            let _ = writeln!(stderr, "{kind}: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome<()> {
    let file = load_file_config(cli.global.config.as_deref())?;
    let mut ctx = Context::new(cli.global, &file.global)?;
    // Human summaries only go to stdout when the report itself goes to a file.
    let mut sink = std::io::sink();
    let summary_out: &mut dyn Write = if ctx.out.is_some() { stdout } else { &mut sink };
    let (report, default_csv, result) = match cli.command {
        Command::Analyze => {
            let (r, res) = analyze(&mut ctx, summary_out)?;
            (r, Section::Summaries, res)
        }
        Command::Characterize(a) => {
            let (r, res) = characterize(&mut ctx, a, &file.characterize, summary_out)?;
            (r, Section::Characterization, res)
        }
        Command::Divergence(a) => {
            let (r, res) = divergence(&mut ctx, a, &file.divergence, summary_out, stderr)?;
            (r, Section::Divergence, res)
        }
        Command::VerifyTheorem(a) => {
            let (r, res) = verify_theorem(&mut ctx, a, &file.verify_theorem, file.simulation, summary_out)?;
            (r, Section::Theorem, res)
        }
    };
    print_warnings(&report, stderr);
    ctx.write(&report, default_csv, stdout)?;
    result
}

fn analyze(ctx: &mut Context, summary: &mut dyn Write) -> Outcome<(Report, Outcome<()>)> {
    ctx.echo_global("analyze");
    let matrices = ctx.matrices()?;
    let mut report = ctx.report();
    pipeline::add_summaries(&mut report, &matrices, ctx.epsilon).map_err(data)?;
    for s in &report.summaries {
        let _ = writeln!(
            summary,
            "{}/{}: {} shifts, AVG SS {:.2}, AVG ST {:.2}, drop {:.2}, worst SD {:.2}, worst TD {:.2}",
            s.task, s.model, s.n_shifts, s.avg_ss, s.avg_st, s.avg_drop, s.worst_sd.value, s.worst_td.value
        );
    }
    Ok((report, Ok(())))
}

fn characterize(
    ctx: &mut Context,
    a: CharacterizeArgs,
    f: &CharacterizeFile,
    summary: &mut dyn Write,
) -> Outcome<(Report, Outcome<()>)> {
    let defaults = CharacterizeOptions::default();
    let opts = CharacterizeOptions {
        epsilon: ctx.epsilon,
        pooling: pick(a.pooling, f.pooling.as_deref(), "pooling")?.unwrap_or(defaults.pooling),
        ranking: pick(a.ranking, f.ranking.as_deref(), "ranking")?.unwrap_or(defaults.ranking),
        ks: if a.ks.is_empty() { f.ks.clone().unwrap_or(defaults.ks) } else { a.ks },
        alpha: a.alpha.or(f.alpha).unwrap_or(defaults.alpha),
        m: a.m.or(f.m).unwrap_or(defaults.m),
        categories: pick(a.categories, f.categories.as_deref(), "categories")?.unwrap_or(defaults.categories),
    };
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Failure::Usage(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    if opts.m == 0 || opts.ks.contains(&0) {
        return Err(Failure::Usage("m and every k must be positive".into()));
    }
    ctx.echo_global("characterize");
    ctx.echo("pooling", label(&opts.pooling));
    ctx.echo("ranking", label(&opts.ranking));
    ctx.echo("ks", format!("{:?}", opts.ks));
    ctx.echo("alpha", opts.alpha);
    ctx.echo("m", opts.m);
    ctx.echo("categories", label(&opts.categories));
    let matrices = ctx.matrices()?;
    let mut report = ctx.report();
    pipeline::add_summaries(&mut report, &matrices, ctx.epsilon).map_err(data)?;
    pipeline::add_characterization(&mut report, &matrices, &opts).map_err(data)?;
    for row in &report.characterization {
        let _ = writeln!(
            summary,
            "{}/{}: {} shifts, Var SD {:.2}, Var TD {:.2}",
            row.task, row.model_group, row.n_shifts, row.var_sd, row.var_td
        );
    }
    for g in &report.scenario_tests {
        let _ = writeln!(
            summary,
            "{}/{}: chi2 {:.4} (df {}), p {:.4}, alpha {:.4}, reject {}",
            g.task, g.model_group, g.test.chi.statistic, g.test.chi.df, g.test.chi.p_value, g.test.chi.alpha_adjusted, g.test.chi.reject
        );
    }
    Ok((report, Ok(())))
}

fn divergence(
    ctx: &mut Context,
    a: DivergenceArgs,
    f: &DivergenceFile,
    summary: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Outcome<(Report, Outcome<()>)> {
    let corpora_path = a
        .corpora
        .or_else(|| f.corpora.clone())
        .ok_or_else(|| Failure::Usage("--corpora is required".into()))?;
    let mut cfg = DivergenceConfig::default();
    cfg.top_k = a.top_k.or(f.top_k).unwrap_or(cfg.top_k);
    cfg.min_token_length = a.min_token_length.or(f.min_token_length).unwrap_or(cfg.min_token_length);
    cfg.log_base = pick(a.base, f.base.as_deref(), "base")?.unwrap_or(cfg.log_base);
    let stopwords = a.stopwords.or_else(|| f.stopwords.clone());
    if let Some(p) = &stopwords {
        cfg.stopwords = parse_stopwords(&ingest::read_text(p).map_err(data)?);
    }
    let pooling = pick(a.pooling, f.pooling.as_deref(), "pooling")?.unwrap_or(Pooling::PerModel);
    if cfg.top_k == 0 || cfg.min_token_length == 0 {
        return Err(Failure::Usage("top-k and min-token-length must be positive".into()));
    }
    ctx.echo_global("divergence");
    ctx.echo("corpora", corpora_path.display());
    ctx.echo("top_k", cfg.top_k);
    ctx.echo("min_token_length", cfg.min_token_length);
    ctx.echo("log_base", label(&cfg.log_base));
    ctx.echo("stopwords", stopwords.as_ref().map_or_else(|| "bundled".to_owned(), |p| p.display().to_string()));
    if ctx.results.is_some() {
        ctx.echo("pooling", label(&pooling));
    }

    let corpora = ingest::load_corpora(&corpora_path).map_err(data)?;
    let matrix = divergence_matrix(&corpora, &cfg).map_err(data)?;
    let mut report = ctx.report();
    for r in &matrix.results {
        let _ = writeln!(summary, "{} / {}: JSD {:.6} over {} words", r.pair.0, r.pair.1, r.jsd, r.vocab_size_used);
    }
    for fail in &matrix.failures {
        let _ = writeln!(stderr, "error: pair {} / {}: {}", fail.pair.0, fail.pair.1, fail.error);
    }
    let failed = matrix.failures.len();
    if ctx.results.is_some() {
        let matrices = ctx.matrices()?;
        pipeline::add_predictors(&mut report, &matrices, &matrix.as_map(), pooling, ctx.epsilon);
        for row in report.predictor_correlations.iter().flatten() {
            let c = &row.correlations;
            let _ = writeln!(
                summary,
                "{}/{}: Spearman JS~SD {:?}, JS~TD {:?}, IDD~SD {:?}, IDD~TD {:?}",
                row.task, row.model_group, c.js_vs_sd, c.js_vs_td, c.idd_vs_sd, c.idd_vs_td
            );
        }
    }
    report.divergence = Some(matrix);
    let result = if failed > 0 { Err(Failure::Data(format!("{failed} corpus pairs failed"))) } else { Ok(()) };
    Ok((report, result))
}

fn verify_theorem(
    ctx: &mut Context,
    a: TheoremArgs,
    f: &TheoremFile,
    simulation: Option<SimConfig>,
    summary: &mut dyn Write,
) -> Outcome<(Report, Outcome<()>)> {
    let tol = Tolerance::default();
    let atoms = a.atoms.or_else(|| f.atoms.clone());
    let seeds = a.seeds.or(f.seeds);
    let pair_mode = pick(a.pair_mode, f.pair_mode.as_deref(), "pair_mode")?;
    ctx.echo_global("verify-theorem");
    ctx.echo("tolerance_exact", tol.exact);
    ctx.echo("tolerance_margin", tol.margin);
    let mut section = TheoremSection::default();
    let mut failures = Vec::new();

    if let Some(path) = atoms {
        ctx.echo("atoms", path.display());
        let parsed = ingest::parse_atoms_str(&ingest::read_text(&path).map_err(data)?).map_err(data)?;
        let joint = DiscreteJoint::new(parsed).map_err(data)?;
        let moments = exact_moments(&joint);
        let identities = verify_identities(&moments, tol.exact);
        let equivalence = check_equivalence(&moments, &tol);
        let _ = writeln!(
            summary,
            "exact joint: {} atoms, x {:.6}, y {:.6}, hypotheses hold {}, identities passed {}, signs {} {} {} {}",
            joint.atoms().len(),
            moments.x,
            moments.y,
            identities.hypotheses.all_hold(),
            identities.all_passed(),
            equivalence.c1,
            equivalence.c2,
            equivalence.c3,
            equivalence.c4_sq
        );
        if !identities.all_passed() {
            failures.push(format!("identity residual {:.3e} above tolerance", identities.max_residual()));
        }
        if !equivalence.passed() {
            failures.push("proved conditions disagree in sign".to_owned());
        }
        section.exact = Some(ExactCheck { atoms: joint.atoms().len(), moments, identities, equivalence });
    } else if let Some(count) = seeds {
        let first = ctx.seed.unwrap_or(1);
        let mode = pair_mode.unwrap_or_default();
        ctx.echo("seeds", count);
        ctx.echo("first_seed", first);
        ctx.echo("pair_mode", label(&mode));
        let s = sweep(first, count, mode, &tol).map_err(data)?;
        let _ = writeln!(
            summary,
            "sweep: {} joints, {} asserted, {} agreements, margin {:?} to {:?}, max identity residual {:.3e}, abs-form disagreements {}",
            s.joints,
            s.asserted,
            s.agreements,
            s.min_margin,
            s.max_margin,
            s.max_identity_residual,
            s.abs_variant_disagreements.len()
        );
        if !s.failures.is_empty() {
            failures.push(format!("sign disagreement at seeds {:?}", s.failures));
        }
        if !s.identity_failures.is_empty() {
            failures.push(format!("identity failure at seeds {:?}", s.identity_failures));
        }
        section.sweep = Some(s);
    } else {
        let mut cfg = simulation.unwrap_or_default();
        if let Some(v) = a.trials.or(f.trials) {
            cfg.trials = v;
        }
        if let Some(v) = a.workers.or(f.workers) {
            cfg.workers = v;
        }
        if let Some(v) = ctx.seed {
            cfg.seed = v;
        }
        if let Some(v) = pair_mode {
            cfg.pair_mode = v;
        }
        if let Some(v) = a.n_domains {
            cfg.n_domains = v;
        }
        if let Some(v) = a.noise_sd {
            cfg.noise_sd = v;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        // Worker count never changes the output, so it stays out of the echo.
        let mut echoed = cfg.clone();
        echoed.workers = 1;
        ctx.echo("simulation", serde_json::to_string(&echoed).map_err(data)?);
        let space = cfg.domain_space().map_err(data)?;
        let mut outcome = simulate_space(&space, &cfg).map_err(data)?;
        outcome.config.workers = 1;
        outcome.trace.workers = 1;
        if let Some(path) = a.trace.or_else(|| f.trace.clone()) {
            write_trace(&path, &draw_samples(&space, &cfg).map_err(data)?)?;
        }
        let identities = verify_identities(&outcome.exact, tol.exact);
        let _ = writeln!(
            summary,
            "simulation: {} trials over {} domains, exact signs {} {} {} {}, empirical signs {} {} {} {}, match {}",
            outcome.trace.trials,
            space.n(),
            outcome.exact_equivalence.c1,
            outcome.exact_equivalence.c2,
            outcome.exact_equivalence.c3,
            outcome.exact_equivalence.c4_sq,
            outcome.empirical_equivalence.c1,
            outcome.empirical_equivalence.c2,
            outcome.empirical_equivalence.c3,
            outcome.empirical_equivalence.c4_sq,
            outcome.signs_match
        );
        if !identities.all_passed() {
            failures.push(format!("identity residual {:.3e} above tolerance", identities.max_residual()));
        }
        if !outcome.exact_equivalence.passed() {
            failures.push("proved conditions disagree in sign on the exact joint".to_owned());
        }
        section.exact = Some(ExactCheck {
            atoms: match cfg.pair_mode {
                PairMode::IndependentWithReplacement => space.n() * space.n(),
                PairMode::DistinctOrderedPairs => space.n() * (space.n() - 1),
            },
            moments: outcome.exact,
            identities,
            equivalence: outcome.exact_equivalence,
        });
        section.simulation = Some(outcome);
    }

    let mut report = ctx.report();
    report.theorem = Some(section);
    let result = if failures.is_empty() { Ok(()) } else { Err(Failure::Assertion(failures.join("; "))) };
    Ok((report, result))
}

fn write_trace(path: &Path, samples: &[crate::theorem::Sample]) -> Outcome<()> {
    let file = File::create(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let res: csv::Result<()> = (|| {
        w.write_record(["trial", "ss", "tt", "st"])?;
        for (i, s) in samples.iter().enumerate() {
            w.write_record([i.to_string(), s.ss.to_string(), s.tt.to_string(), s.st.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(data)
}
