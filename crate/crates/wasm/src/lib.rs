//! Browser bindings for the interactive demo page.
//!
//! Each export returns a JSON string; the `*_json` functions hold the logic so
//! they can be exercised natively.

use domrob::divergence::{js_divergence, pair_distributions, Corpus, DivergenceConfig, LogBase};
use domrob::metrics::{DomainId, ShiftMetrics};
use domrob::theorem::{
    build_domain_space_joint, check_equivalence, exact_moments, simulate_space, verify_identities, PairMode,
    SimConfig, Tolerance,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn domain(name: &str) -> DomainId {
    DomainId::new(name).expect("non-empty literal")
}

pub fn classify_shift_json(ss: f64, tt: f64, st: f64, epsilon: f64) -> Result<String, String> {
    if ![ss, tt, st, epsilon].iter().all(|v| v.is_finite()) {
        return Err("scores must be finite".into());
    }
    let m = ShiftMetrics::from_triplet(domain("source"), domain("target"), ss, tt, st, epsilon.max(0.0));
    serde_json::to_string(&m).map_err(|e| e.to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn explore_theorem_json(
    n_domains: usize,
    w_source: f64,
    w_target: f64,
    difficulty_sd: f64,
    penalty_mean: f64,
    penalty_sd: f64,
    seed: u64,
    distinct_pairs: bool,
    trials: usize,
) -> Result<String, String> {
    let cfg = SimConfig {
        n_domains,
        w_source,
        w_target,
        difficulty_sd,
        penalty_mean,
        penalty_sd,
        seed,
        trials: trials.max(2),
        workers: 1,
        pair_mode: if distinct_pairs { PairMode::DistinctOrderedPairs } else { PairMode::IndependentWithReplacement },
        ..SimConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let space = cfg.domain_space().map_err(|e| e.to_string())?;
    let joint = build_domain_space_joint(&space, cfg.pair_mode).map_err(|e| e.to_string())?;
    let tol = Tolerance::default();
    let moments = exact_moments(&joint);
    let atoms: Vec<_> = joint.atoms().iter().map(|a| json!({ "sd": a.ss - a.st, "td": a.tt - a.st, "prob": a.prob })).collect();
    let simulation = if trials >= 2 {
        let out = simulate_space(&space, &cfg).map_err(|e| e.to_string())?;
        json!({ "empirical": out.empirical, "equivalence": out.empirical_equivalence, "signs_match": out.signs_match })
    } else {
        serde_json::Value::Null
    };
    let value = json!({
        "space": space,
        "moments": moments,
        "identities": verify_identities(&moments, tol.exact),
        "equivalence": check_equivalence(&moments, &tol),
        "atoms": atoms,
        "simulation": simulation,
    });
    Ok(value.to_string())
}

pub fn text_divergence_json(a: &str, b: &str, top_k: usize, use_stopwords: bool) -> Result<String, String> {
    let mut cfg = DivergenceConfig { top_k: top_k.max(1), log_base: LogBase::Two, ..DivergenceConfig::default() };
    if !use_stopwords {
        cfg.stopwords.clear();
    }
    let ca = Corpus { domain: domain("a"), documents: vec![a.to_owned()] };
    let cb = Corpus { domain: domain("b"), documents: vec![b.to_owned()] };
    let (p, q) = pair_distributions(&ca, &cb, &cfg).map_err(|e| e.to_string())?;
    let jsd = js_divergence(&p, &q, LogBase::Two).map_err(|e| e.to_string())?;
    let top: Vec<_> = p
        .support
        .iter()
        .zip(p.probs.iter().zip(&q.probs))
        .take(20)
        .map(|(w, (pa, pb))| json!({ "word": w, "p": pa, "q": pb }))
        .collect();
    Ok(json!({ "jsd": jsd, "vocab_size_used": p.support.len(), "top_words": top }).to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Drops, scenario and ordering of a single (SS, TT, ST) triplet.
#[wasm_bindgen(js_name = classifyShift)]
pub fn classify_shift(ss: f64, tt: f64, st: f64, epsilon: f64) -> Result<String, JsError> {
    js(classify_shift_json(ss, tt, st, epsilon))
}

/// Exact moments and condition signs for a random domain space, with an optional simulation.
#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = exploreTheorem)]
pub fn explore_theorem(
    n_domains: usize,
    w_source: f64,
    w_target: f64,
    difficulty_sd: f64,
    penalty_mean: f64,
    penalty_sd: f64,
    seed: u64,
    distinct_pairs: bool,
    trials: usize,
) -> Result<String, JsError> {
    js(explore_theorem_json(
        n_domains,
        w_source,
        w_target,
        difficulty_sd,
        penalty_mean,
        penalty_sd,
        seed,
        distinct_pairs,
        trials,
    ))
}

/// Base-2 JSD between two texts over their shared top-k vocabulary.
#[wasm_bindgen(js_name = textDivergence)]
pub fn text_divergence(a: &str, b: &str, top_k: usize, use_stopwords: bool) -> Result<String, JsError> {
    js(text_divergence_json(a, b, top_k, use_stopwords))
}
