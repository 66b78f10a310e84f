//! Result-file, corpus and atom-file parsing.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::divergence::Corpus;
use crate::metrics::{DomainId, RunRecord, Score};
use crate::theorem::JointAtom;

pub const RESULTS_HEADER: [&str; 5] = ["task", "model", "source", "target", "score"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("line {line}: {detail}")]
    SchemaError { line: u64, detail: String },
    #[error("line {line}: score {value} out of range")]
    ScoreOutOfRange { line: u64, value: f64 },
    #[error("line {line}: duplicate key {key} (first seen on line {first_line})")]
    DuplicateKey { first_line: u64, line: u64, key: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultsFormat {
    Csv,
    Jsonl,
}

impl ResultsFormat {
    /// `.jsonl`/`.ndjson` are JSONL, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => ResultsFormat::Jsonl,
            _ => ResultsFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScale {
    /// Scores in `[0, 1]`, multiplied by 100 on ingestion.
    Unit,
    #[default]
    Percent,
}

impl std::str::FromStr for ScoreScale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "unit" => Ok(ScoreScale::Unit),
            "percent" => Ok(ScoreScale::Percent),
            other => Err(format!("unknown score scale `{other}` (unit, percent)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IngestOptions {
    pub scale: ScoreScale,
    /// Accept any finite score instead of the scale's native range.
    pub wide_range: bool,
}

fn io_err(path: &Path, e: impl ToString) -> IngestError {
    IngestError::Io { path: path.display().to_string(), detail: e.to_string() }
}

fn schema(line: u64, detail: impl Into<String>) -> IngestError {
    IngestError::SchemaError { line, detail: detail.into() }
}

fn normalize_score(value: f64, line: u64, opts: &IngestOptions) -> Result<Score> {
    if !value.is_finite() {
        return Err(schema(line, format!("score {value} is not finite")));
    }
    let hi = match opts.scale {
        ScoreScale::Unit => 1.0,
        ScoreScale::Percent => 100.0,
    };
    if !opts.wide_range && !(0.0..=hi).contains(&value) {
        return Err(IngestError::ScoreOutOfRange { line, value });
    }
    let scaled = match opts.scale {
        ScoreScale::Unit => value * 100.0,
        ScoreScale::Percent => value,
    };
    Score::within(scaled, f64::MIN, f64::MAX).map_err(|e| schema(line, e.to_string()))
}

struct RowBuilder {
    seen: HashMap<(String, String, DomainId, DomainId), u64>,
    rows: Vec<RunRecord>,
    opts: IngestOptions,
}

impl RowBuilder {
    fn new(opts: IngestOptions) -> Self {
        Self { seen: HashMap::new(), rows: Vec::new(), opts }
    }

    fn push(&mut self, line: u64, fields: [&str; 4], score: f64) -> Result<()> {
        let [task, model, source, target] = fields.map(str::trim);
        if task.is_empty() || model.is_empty() {
            return Err(schema(line, "task and model must be non-empty"));
        }
        let source = DomainId::new(source).map_err(|_| schema(line, "empty source domain"))?;
        let target = DomainId::new(target).map_err(|_| schema(line, "empty target domain"))?;
        let score = normalize_score(score, line, &self.opts)?;
        let key = (task.to_owned(), model.to_owned(), source.clone(), target.clone());
        if let Some(&first_line) = self.seen.get(&key) {
            return Err(IngestError::DuplicateKey {
                first_line,
                line,
                key: format!("({task}, {model}, {source}, {target})"),
            });
        }
        self.seen.insert(key, line);
        self.rows.push(RunRecord { task: task.to_owned(), model: model.to_owned(), source, target, score });
        Ok(())
    }
}

fn parse_csv(text: &str, opts: IngestOptions) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(schema(1, format!("header must be `{}`", RESULTS_HEADER.join(","))));
    }
    let mut out = RowBuilder::new(opts);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            schema(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let score_text = &rec[4];
        let score: f64 = score_text
            .parse()
            .map_err(|_| schema(line, format!("score `{score_text}` is not a number")))?;
        out.push(line, [&rec[0], &rec[1], &rec[2], &rec[3]], score)?;
    }
    Ok(out.rows)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    task: String,
    model: String,
    source: String,
    target: String,
    score: f64,
}

fn parse_jsonl(text: &str, opts: IngestOptions) -> Result<Vec<RunRecord>> {
    let mut out = RowBuilder::new(opts);
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(raw).map_err(|e| schema(line, e.to_string()))?;
        out.push(line, [&row.task, &row.model, &row.source, &row.target], row.score)?;
    }
    Ok(out.rows)
}

/// Parses results text; fails atomically on the first bad row.
pub fn parse_results_str(text: &str, format: ResultsFormat, opts: IngestOptions) -> Result<Vec<RunRecord>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    match format {
        ResultsFormat::Csv => parse_csv(text, opts),
        ResultsFormat::Jsonl => parse_jsonl(text, opts),
    }
}

pub fn parse_results(path: &Path, format: ResultsFormat, opts: IngestOptions) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_results_str(&text, format, opts)
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    entries.sort();
    Ok(entries)
}

/// Loads corpora from a directory.
///
/// Each subdirectory is a domain whose files are its documents. A plain file at
/// the top level is a single-document domain named after its file stem.
pub fn load_corpora_dir(dir: &Path) -> Result<Vec<Corpus>> {
    let mut corpora = Vec::new();
    for path in sorted_entries(dir)? {
        let name = if path.is_dir() {
            path.file_name()
        } else {
            path.file_stem()
        }
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_owned();
        let domain = DomainId::new(&name).map_err(|e| io_err(&path, e))?;
        let documents = if path.is_dir() {
            sorted_entries(&path)?
                .into_iter()
                .filter(|p| p.is_file())
                .map(|p| fs::read_to_string(&p).map_err(|e| io_err(&p, e)))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![fs::read_to_string(&path).map_err(|e| io_err(&path, e))?]
        };
        corpora.push(Corpus { domain, documents });
    }
    Ok(corpora)
}

#[derive(Deserialize)]
struct JsonDoc {
    domain: String,
    text: String,
}

/// Loads `{"domain": ..., "text": ...}` lines, one corpus per domain sorted by name.
pub fn parse_corpora_jsonl(text: &str) -> Result<Vec<Corpus>> {
    let mut by_domain: BTreeMap<DomainId, Vec<String>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let doc: JsonDoc = serde_json::from_str(raw).map_err(|e| schema(line, e.to_string()))?;
        let domain = DomainId::new(&doc.domain).map_err(|_| schema(line, "empty domain"))?;
        by_domain.entry(domain).or_default().push(doc.text);
    }
    Ok(by_domain.into_iter().map(|(domain, documents)| Corpus { domain, documents }).collect())
}

pub fn load_corpora(path: &Path) -> Result<Vec<Corpus>> {
    if path.is_dir() {
        load_corpora_dir(path)
    } else {
        parse_corpora_jsonl(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }
}

/// Atom file: header `ss,tt,st,prob`, one atom per row.
pub fn parse_atoms_str(text: &str) -> Result<Vec<JointAtom>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["ss", "tt", "st", "prob"] {
        return Err(schema(1, "header must be `ss,tt,st,prob`"));
    }
    let mut atoms = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut vals = [0.0; 4];
        for (v, field) in vals.iter_mut().zip(rec.iter()) {
            *v = field.parse().map_err(|_| schema(line, format!("`{field}` is not a number")))?;
        }
        atoms.push(JointAtom { ss: vals[0], tt: vals[1], st: vals[2], prob: vals[3] });
    }
    Ok(atoms)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str) -> Result<Vec<RunRecord>> {
        parse_results_str(text, ResultsFormat::Csv, IngestOptions::default())
    }

    #[test]
    fn csv_row_maps_fields() {
        let rows = csv("task,model,source,target,score\nsa,roberta,books,beauty,91.25\n").unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.task.as_str(), r.model.as_str()), ("sa", "roberta"));
        assert_eq!((r.source.as_str(), r.target.as_str()), ("books", "beauty"));
        assert_eq!(r.score.value(), 91.25);
    }

    #[test]
    fn csv_tolerates_crlf_whitespace_and_blank_lines() {
        let rows = csv("task,model,source,target,score\r\n sa , m , a , b , 10 \r\n\r\nsa,m,b,a,20\r\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].source.as_str(), "a");
    }

    #[test]
    fn csv_errors_carry_lines() {
        let e = csv("task,model,source,target,score\nsa,m,a,b,1\nsa,m,a,c,abc\n").unwrap_err();
        assert!(matches!(e, IngestError::SchemaError { line: 3, .. }), "{e:?}");

        let e = csv("task,model,source,target,score\nsa,m,a,b,1\nsa,m,b,a,2\nsa,m,a,b,3\n").unwrap_err();
        assert_eq!(
            e,
            IngestError::DuplicateKey { first_line: 2, line: 4, key: "(sa, m, a, b)".into() }
        );

        let e = csv("task,model,src,target,score\n").unwrap_err();
        assert!(matches!(e, IngestError::SchemaError { line: 1, .. }));

        let e = csv("task,model,source,target,score\nsa,m,a,b,101\n").unwrap_err();
        assert_eq!(e, IngestError::ScoreOutOfRange { line: 2, value: 101.0 });

        let e = csv("task,model,source,target,score\nsa,m,a,b\n").unwrap_err();
        assert!(matches!(e, IngestError::SchemaError { line: 2, .. }));
    }

    #[test]
    fn unit_scale_and_wide_range() {
        let opts = IngestOptions { scale: ScoreScale::Unit, wide_range: false };
        let rows = parse_results_str("task,model,source,target,score\nsa,m,a,b,0.5\n", ResultsFormat::Csv, opts).unwrap();
        assert_eq!(rows[0].score.value(), 50.0);
        let e = parse_results_str("task,model,source,target,score\nsa,m,a,b,50\n", ResultsFormat::Csv, opts);
        assert!(matches!(e, Err(IngestError::ScoreOutOfRange { .. })));
        let wide = IngestOptions { wide_range: true, ..IngestOptions::default() };
        assert!(parse_results_str("task,model,source,target,score\nsa,m,a,b,130\n", ResultsFormat::Csv, wide).is_ok());
    }

    #[test]
    fn jsonl_rows() {
        let text = "{\"task\":\"qa\",\"model\":\"t5\",\"source\":\"wiki\",\"target\":\"news\",\"score\":71.5}\n\n";
        let rows = parse_results_str(text, ResultsFormat::Jsonl, IngestOptions::default()).unwrap();
        assert_eq!(rows[0].score.value(), 71.5);
        let bad = "{\"task\":\"qa\",\"model\":\"t5\",\"source\":\"wiki\",\"target\":\"news\",\"score\":\"abc\"}\n";
        let e = parse_results_str(bad, ResultsFormat::Jsonl, IngestOptions::default()).unwrap_err();
        assert!(matches!(e, IngestError::SchemaError { line: 1, .. }));
    }

    #[test]
    fn corpora_jsonl_groups_by_domain() {
        let text = "{\"domain\":\"b\",\"text\":\"x y\"}\n{\"domain\":\"a\",\"text\":\"z\"}\n{\"domain\":\"b\",\"text\":\"w\"}\n";
        let c = parse_corpora_jsonl(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].domain.as_str(), "a");
        assert_eq!(c[1].documents, vec!["x y", "w"]);
    }

    #[test]
    fn corpora_directory_layouts() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("books")).unwrap();
        fs::write(dir.path().join("books/1.txt"), "one").unwrap();
        fs::write(dir.path().join("books/2.txt"), "two").unwrap();
        fs::write(dir.path().join("news.txt"), "three").unwrap();
        fs::write(dir.path().join(".hidden"), "skip").unwrap();
        let c = load_corpora(dir.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].domain.as_str(), "books");
        assert_eq!(c[0].documents, vec!["one", "two"]);
        assert_eq!(c[1].domain.as_str(), "news");
    }

    #[test]
    fn atoms_file() {
        let atoms = parse_atoms_str("ss,tt,st,prob\n70,70,70,1\n").unwrap();
        assert_eq!(atoms, vec![JointAtom { ss: 70.0, tt: 70.0, st: 70.0, prob: 1.0 }]);
        assert!(parse_atoms_str("a,b,c,d\n").is_err());
        assert!(parse_atoms_str("ss,tt,st,prob\n1,2,x,1\n").is_err());
    }
}
