//! Moment relations between SS, TT and ST over a joint distribution of shifts.
//!
//! With `x = Var[SS]` and `y = Cov[TT, ST] - Cov[SS, ST]`, and under
//! `E[SS] = E[TT]`, `Var[SS] = Var[TT]`, `Cov[SS, TT] = 0`, the following
//! all carry the sign of `y`:
//!
//! 1. `Cov[TT, ST] - Cov[SS, ST]`
//! 2. `Cov[IDD, SD]^2 - Cov[IDD, TD]^2` (equal to `4xy`)
//! 3. `Var[SD] - Var[TD]` (equal to `2y`)
//! 4. `E[SD^2] - E[TD^2]` (equal to `2(E[TT*ST] - E[SS*ST])`)
//!
//! The first-absolute-moment variant `E[|SD|] - E[|TD|]` is tracked as well
//! but never asserted.

mod sim;

pub use sim::{
    draw_samples, simulate, simulate_space, sweep, Sample, SimConfig,
    SimulationOutcome, SweepSummary, TraceSummary,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::KahanSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoremError {
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),
    #[error("joint has no atoms")]
    EmptyJoint,
    #[error("non-finite value in atom {0}")]
    NonFinite(usize),
    #[error("need at least 2 domains, got {0}")]
    TooFewDomains(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, TheoremError>;

/// Exact-enumeration tolerance.
pub const EXACT_TOLERANCE: f64 = 1e-12;
/// Minimum `|y|` for sign assertions.
pub const MARGIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAtom {
    pub ss: f64,
    pub tt: f64,
    pub st: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    atoms: Vec<JointAtom>,
}

impl DiscreteJoint {
    pub fn new(atoms: Vec<JointAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(TheoremError::EmptyJoint);
        }
        for (i, a) in atoms.iter().enumerate() {
            if !(a.ss.is_finite() && a.tt.is_finite() && a.st.is_finite() && a.prob.is_finite()) {
                return Err(TheoremError::NonFinite(i));
            }
            if !(a.prob > 0.0 && a.prob <= 1.0) {
                return Err(TheoremError::InvalidProbabilities(format!(
                    "atom {i} has probability {}",
                    a.prob
                )));
            }
        }
        let total: KahanSum = atoms.iter().map(|a| a.prob).collect();
        if (total.value() - 1.0).abs() > 1e-12 {
            return Err(TheoremError::InvalidProbabilities(format!(
                "probabilities sum to {}",
                total.value()
            )));
        }
        Ok(Self { atoms })
    }

    pub fn point_mass(ss: f64, tt: f64, st: f64) -> Self {
        Self { atoms: vec![JointAtom { ss, tt, st, prob: 1.0 }] }
    }

    /// Joint of a source and target drawn independently from `weights`.
    ///
    /// `SS` is `in_domain[s]`, `TT` is `in_domain[t]` and `ST` is `cross(s, t)`.
    pub fn independent_pairs(
        weights: &[f64],
        in_domain: &[f64],
        cross: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        if weights.len() != in_domain.len() {
            return Err(TheoremError::InvalidConfig("weights and in-domain lengths differ".into()));
        }
        let mut atoms = Vec::with_capacity(weights.len() * weights.len());
        for (s, &ws) in weights.iter().enumerate() {
            for (t, &wt) in weights.iter().enumerate() {
                atoms.push(JointAtom { ss: in_domain[s], tt: in_domain[t], st: cross(s, t), prob: ws * wt });
            }
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[JointAtom] {
        &self.atoms
    }
}

/// Population moments of a joint, or sample moments of draws (`n - 1` for central moments).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentSet {
    pub e_ss: f64,
    pub e_tt: f64,
    pub e_st: f64,
    pub var_ss: f64,
    pub var_tt: f64,
    pub var_st: f64,
    pub cov_ss_tt: f64,
    pub cov_ss_st: f64,
    pub cov_tt_st: f64,
    pub x: f64,
    pub y: f64,
    pub cov_idd_sd: f64,
    pub cov_idd_td: f64,
    pub var_sd: f64,
    pub var_td: f64,
    pub e_sd: f64,
    pub e_td: f64,
    pub e_sd2: f64,
    pub e_td2: f64,
    pub e_abs_sd: f64,
    pub e_abs_td: f64,
    pub e_ss_st: f64,
    pub e_tt_st: f64,
    pub e_ss2: f64,
    pub e_tt2: f64,
    /// `E[TT*ST] - E[SS*ST]`, accumulated as the single expectation `E[(TT - SS)*ST]`.
    pub e_cross_gap: f64,
}

/// Computes every moment from weighted triplets. `central_scale` multiplies the
/// central second moments (1 for population moments, `n/(n-1)` for sample ones).
pub(crate) fn weighted_moments<'a>(
    points: impl Iterator<Item = (f64, f64, f64, f64)> + Clone + 'a,
    central_scale: f64,
) -> MomentSet {
    let expect = |f: &dyn Fn(f64, f64, f64) -> f64| {
        points.clone().map(|(ss, tt, st, w)| w * f(ss, tt, st)).collect::<KahanSum>().value()
    };
    let e_ss = expect(&|ss, _, _| ss);
    let e_tt = expect(&|_, tt, _| tt);
    let e_st = expect(&|_, _, st| st);
    let e_sd = expect(&|ss, _, st| ss - st);
    let e_td = expect(&|_, tt, st| tt - st);
    let e_idd = expect(&|ss, tt, _| ss - tt);
    let central = |f: &dyn Fn(f64, f64, f64) -> f64| central_scale * expect(f);

    let var_ss = central(&|ss, _, _| (ss - e_ss).powi(2));
    let var_tt = central(&|_, tt, _| (tt - e_tt).powi(2));
    let var_st = central(&|_, _, st| (st - e_st).powi(2));
    let cov_ss_tt = central(&|ss, tt, _| (ss - e_ss) * (tt - e_tt));
    let cov_ss_st = central(&|ss, _, st| (ss - e_ss) * (st - e_st));
    let cov_tt_st = central(&|_, tt, st| (tt - e_tt) * (st - e_st));
    let cov_idd_sd = central(&|ss, tt, st| (ss - tt - e_idd) * (ss - st - e_sd));
    let cov_idd_td = central(&|ss, tt, st| (ss - tt - e_idd) * (tt - st - e_td));
    let var_sd = central(&|ss, _, st| (ss - st - e_sd).powi(2));
    let var_td = central(&|_, tt, st| (tt - st - e_td).powi(2));

    MomentSet {
        e_ss,
        e_tt,
        e_st,
        var_ss,
        var_tt,
        var_st,
        cov_ss_tt,
        cov_ss_st,
        cov_tt_st,
        x: var_ss,
        y: cov_tt_st - cov_ss_st,
        cov_idd_sd,
        cov_idd_td,
        var_sd,
        var_td,
        e_sd,
        e_td,
        e_sd2: expect(&|ss, _, st| (ss - st).powi(2)),
        e_td2: expect(&|_, tt, st| (tt - st).powi(2)),
        e_abs_sd: expect(&|ss, _, st| (ss - st).abs()),
        e_abs_td: expect(&|_, tt, st| (tt - st).abs()),
        e_ss_st: expect(&|ss, _, st| ss * st),
        e_tt_st: expect(&|_, tt, st| tt * st),
        e_ss2: expect(&|ss, _, _| ss * ss),
        e_tt2: expect(&|_, tt, _| tt * tt),
        e_cross_gap: expect(&|ss, tt, st| (tt - ss) * st),
    }
}

/// Exact probability-weighted moments of a joint.
pub fn exact_moments(joint: &DiscreteJoint) -> MomentSet {
    weighted_moments(joint.atoms.iter().map(|a| (a.ss, a.tt, a.st, a.prob)), 1.0)
}

/// Sample moments of draws; central moments use the `n - 1` denominator.
pub fn sample_moments(samples: &[Sample]) -> Result<MomentSet> {
    if samples.len() < 2 {
        return Err(TheoremError::InvalidConfig(format!("need 2 samples, got {}", samples.len())));
    }
    let n = samples.len() as f64;
    let w = 1.0 / n;
    Ok(weighted_moments(samples.iter().map(move |s| (s.ss, s.tt, s.st, w)), n / (n - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub holds: bool,
    pub residual: f64,
}

impl Residual {
    fn new(residual: f64, tol: f64) -> Self {
        let residual = residual.abs();
        Self { holds: residual <= tol, residual }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub mean_equal: Residual,
    pub var_equal: Residual,
    pub cov_zero: Residual,
    pub tolerance: f64,
}

impl HypothesisReport {
    pub fn all_hold(&self) -> bool {
        self.mean_equal.holds && self.var_equal.holds && self.cov_zero.holds
    }
}

pub fn check_hypotheses(m: &MomentSet, tol: f64) -> HypothesisReport {
    HypothesisReport {
        mean_equal: Residual::new(m.e_ss - m.e_tt, tol),
        var_equal: Residual::new(m.var_ss - m.var_tt, tol),
        cov_zero: Residual::new(m.cov_ss_tt, tol),
        tolerance: tol,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// `None` when the identity was skipped because its hypotheses fail.
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub hypotheses: HypothesisReport,
    pub checks: Vec<IdentityCheck>,
    pub notes: Vec<String>,
}

impl IdentityReport {
    /// No identity that was checked failed.
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }

    pub fn max_residual(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.passed.is_some())
            .map(|c| c.residual)
            .fold(0.0, f64::max)
    }
}

/// Checks the proof-step identities. Identities that need a failing hypothesis are skipped.
pub fn verify_identities(m: &MomentSet, tol: f64) -> IdentityReport {
    let hyp = check_hypotheses(m, tol);
    let mut notes = Vec::new();
    let mut checks = Vec::new();
    let mut push = |name: &str, lhs: f64, rhs: f64, requires: bool| {
        let residual = (lhs - rhs).abs();
        checks.push(IdentityCheck {
            name: name.to_owned(),
            lhs,
            rhs,
            residual,
            passed: requires.then_some(residual <= tol),
        });
    };
    let cov_ok = hyp.cov_zero.holds;
    let var_ok = hyp.var_equal.holds;
    let mean_ok = hyp.mean_equal.holds;
    push("E[SD] = E[TD]", m.e_sd, m.e_td, mean_ok);
    push("Cov[IDD,SD] = x + y", m.cov_idd_sd, m.x + m.y, cov_ok);
    push("Cov[IDD,TD] = -x + y", m.cov_idd_td, -m.x + m.y, cov_ok && var_ok);
    push("Var[SD] - Var[TD] = 2y", m.var_sd - m.var_td, 2.0 * m.y, var_ok);
    push(
        "E[SD^2] - E[TD^2] = 2(E[TT*ST] - E[SS*ST])",
        m.e_sd2 - m.e_td2,
        2.0 * m.e_cross_gap,
        mean_ok && var_ok,
    );
    for c in &checks {
        if c.passed.is_none() {
            notes.push(format!("skipped `{}`: hypotheses do not hold", c.name));
        }
    }
    IdentityReport { hypotheses: hyp, checks, notes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub exact: f64,
    pub margin: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { exact: EXACT_TOLERANCE, margin: MARGIN_TOLERANCE }
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub c1: i8,
    pub c2: i8,
    pub c3: i8,
    pub c4_sq: i8,
    pub c4_abs: i8,
    pub margin: f64,
    pub hypotheses_hold: bool,
    /// Hypotheses hold and the margin exceeds the tolerance, so agreement is required.
    pub asserted: bool,
    pub all_agree_proved: bool,
    pub abs_variant_agrees: bool,
}

impl EquivalenceReport {
    /// Fails only when agreement was required and did not happen.
    pub fn passed(&self) -> bool {
        !self.asserted || self.all_agree_proved
    }
}

pub fn check_equivalence(m: &MomentSet, tol: &Tolerance) -> EquivalenceReport {
    let hyp = check_hypotheses(m, tol.exact);
    let c1 = sign(m.cov_tt_st - m.cov_ss_st);
    let c2 = sign(m.cov_idd_sd.powi(2) - m.cov_idd_td.powi(2));
    let c3 = sign(m.var_sd - m.var_td);
    let c4_sq = sign(m.e_sd2 - m.e_td2);
    let c4_abs = sign(m.e_abs_sd - m.e_abs_td);
    let margin = m.y.abs();
    let hypotheses_hold = hyp.all_hold();
    EquivalenceReport {
        c1,
        c2,
        c3,
        c4_sq,
        c4_abs,
        margin,
        hypotheses_hold,
        asserted: hypotheses_hold && margin > tol.margin,
        all_agree_proved: c1 == c2 && c2 == c3 && c3 == c4_sq,
        abs_variant_agrees: c4_abs == c1,
    }
}

/// How a (source, target) pair is drawn from the domain space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// Source and target drawn independently and uniformly; `s == t` allowed.
    #[default]
    IndependentWithReplacement,
    /// Uniform over ordered pairs with `s != t`.
    DistinctOrderedPairs,
}

impl std::str::FromStr for PairMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "independent" | "independent-with-replacement" => Ok(PairMode::IndependentWithReplacement),
            "distinct" | "distinct-ordered-pairs" => Ok(PairMode::DistinctOrderedPairs),
            other => Err(format!("unknown pair mode `{other}` (independent, distinct)")),
        }
    }
}

/// Deterministic score model over `n` domains.
///
/// In-domain score is `base - difficulty[d]`; cross-domain score is
/// `base - w_source * difficulty[s] - w_target * difficulty[t] - penalty[s][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpace {
    pub base: f64,
    pub difficulty: Vec<f64>,
    pub w_source: f64,
    pub w_target: f64,
    pub penalty: Vec<Vec<f64>>,
}

impl DomainSpace {
    pub fn n(&self) -> usize {
        self.difficulty.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n < 2 {
            return Err(TheoremError::TooFewDomains(n));
        }
        if self.penalty.len() != n || self.penalty.iter().any(|row| row.len() != n) {
            return Err(TheoremError::InvalidConfig(format!("penalty must be {n}x{n}")));
        }
        let finite = self.base.is_finite()
            && self.w_source.is_finite()
            && self.w_target.is_finite()
            && self.difficulty.iter().all(|v| v.is_finite());
        if !finite {
            return Err(TheoremError::InvalidConfig("non-finite space parameter".into()));
        }
        if self.penalty.iter().flatten().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(TheoremError::InvalidConfig("penalties must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn in_domain(&self, d: usize) -> f64 {
        self.base - self.difficulty[d]
    }

    /// Triplet for a pair; a same-domain pair scores its in-domain value three times.
    pub fn triplet(&self, s: usize, t: usize) -> (f64, f64, f64) {
        let ss = self.in_domain(s);
        let tt = self.in_domain(t);
        let st = if s == t {
            ss
        } else {
            self.base
                - self.w_source * self.difficulty[s]
                - self.w_target * self.difficulty[t]
                - self.penalty[s][t]
        };
        (ss, tt, st)
    }

    /// Random space with 3–8 domains, mixed tracking weights and non-negative penalties.
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(3..=8);
        let difficulty = (0..n).map(|_| rng.random_range(-15.0..25.0)).collect();
        let penalty = (0..n)
            .map(|s| (0..n).map(|t| if s == t { 0.0 } else { rng.random_range(0.0..12.0) }).collect())
            .collect();
        Self {
            base: rng.random_range(60.0..85.0),
            difficulty,
            w_source: rng.random_range(0.0..1.2),
            w_target: rng.random_range(0.0..1.2),
            penalty,
        }
    }
}

pub fn build_domain_space_joint(space: &DomainSpace, mode: PairMode) -> Result<DiscreteJoint> {
    space.validate()?;
    let n = space.n();
    match mode {
        PairMode::IndependentWithReplacement => {
            let in_domain: Vec<f64> = (0..n).map(|d| space.in_domain(d)).collect();
            DiscreteJoint::independent_pairs(&vec![1.0 / n as f64; n], &in_domain, |s, t| {
                space.triplet(s, t).2
            })
        }
        PairMode::DistinctOrderedPairs => {
            let p = 1.0 / (n * (n - 1)) as f64;
            let atoms = (0..n)
                .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
                .map(|(s, t)| {
                    let (ss, tt, st) = space.triplet(s, t);
                    JointAtom { ss, tt, st, prob: p }
                })
                .collect();
            DiscreteJoint::new(atoms)
        }
    }
}
