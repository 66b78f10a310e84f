//! Seeded Monte Carlo over a generated domain space.
//!
//! Trials are cut into fixed blocks; block `b` draws from the ChaCha stream
//! `b + 1` of the configured seed (stream 0 generates the space itself). The
//! sample vector is therefore identical for any number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    build_domain_space_joint, check_equivalence, exact_moments, sample_moments, verify_identities,
    DomainSpace, EquivalenceReport, MomentSet, PairMode, Result, TheoremError, Tolerance,
};

const BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_domains: usize,
    pub base: f64,
    pub difficulty_mean: f64,
    pub difficulty_sd: f64,
    pub w_source: f64,
    pub w_target: f64,
    pub penalty_mean: f64,
    pub penalty_sd: f64,
    /// Standard deviation of Gaussian noise added to each drawn cross-domain score.
    pub noise_sd: f64,
    pub seed: u64,
    pub trials: usize,
    pub pair_mode: PairMode,
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_domains: 6,
            base: 80.0,
            difficulty_mean: 0.0,
            difficulty_sd: 8.0,
            w_source: 0.3,
            w_target: 0.9,
            penalty_mean: 5.0,
            penalty_sd: 2.0,
            noise_sd: 0.0,
            seed: 42,
            trials: 100_000,
            pair_mode: PairMode::IndependentWithReplacement,
            workers: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TheoremError::InvalidConfig(msg.to_owned()));
        if self.n_domains < 2 {
            return bad("n_domains must be >= 2");
        }
        if self.trials < 2 {
            return bad("trials must be >= 2");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        for (name, v) in [
            ("difficulty_sd", self.difficulty_sd),
            ("penalty_sd", self.penalty_sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        let params = [self.base, self.difficulty_mean, self.w_source, self.w_target, self.penalty_mean];
        if params.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite");
        }
        Ok(())
    }

    /// Draws per-domain difficulties and per-pair penalties (clamped at zero).
    pub fn domain_space(&self) -> Result<DomainSpace> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.n_domains;
        let normal = |m: f64, sd: f64| Normal::new(m, sd).map_err(|e| TheoremError::InvalidConfig(e.to_string()));
        let diff = normal(self.difficulty_mean, self.difficulty_sd)?;
        let pen = normal(self.penalty_mean, self.penalty_sd)?;
        let difficulty = (0..n).map(|_| diff.sample(&mut rng)).collect();
        let penalty = (0..n)
            .map(|s| (0..n).map(|t| if s == t { 0.0 } else { pen.sample(&mut rng).max(0.0) }).collect())
            .collect();
        let space = DomainSpace {
            base: self.base,
            difficulty,
            w_source: self.w_source,
            w_target: self.w_target,
            penalty,
        };
        space.validate()?;
        Ok(space)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub source: u32,
    pub target: u32,
    pub ss: f64,
    pub tt: f64,
    pub st: f64,
}

fn fill_block(space: &DomainSpace, cfg: &SimConfig, block: usize, out: &mut [Sample]) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(block as u64 + 1);
    let n = space.n();
    let noise = (cfg.noise_sd > 0.0).then(|| Normal::new(0.0, cfg.noise_sd).expect("validated sd"));
    for slot in out.iter_mut() {
        let s = rng.random_range(0..n);
        let t = match cfg.pair_mode {
            PairMode::IndependentWithReplacement => rng.random_range(0..n),
            PairMode::DistinctOrderedPairs => {
                let t = rng.random_range(0..n - 1);
                if t >= s { t + 1 } else { t }
            }
        };
        let (ss, tt, mut st) = space.triplet(s, t);
        if let Some(d) = &noise {
            st += d.sample(&mut rng);
        }
        *slot = Sample { source: s as u32, target: t as u32, ss, tt, st };
    }
}

/// Draws `cfg.trials` pairs from `space` using `cfg.workers` threads.
pub fn draw_samples(space: &DomainSpace, cfg: &SimConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    space.validate()?;
    let empty = Sample { source: 0, target: 0, ss: 0.0, tt: 0.0, st: 0.0 };
    let mut samples = vec![empty; cfg.trials];
    let blocks: Vec<(usize, &mut [Sample])> = samples.chunks_mut(BLOCK).enumerate().collect();
    if cfg.workers == 1 {
        for (b, chunk) in blocks {
            fill_block(space, cfg, b, chunk);
        }
    } else {
        let mut lanes: Vec<Vec<(usize, &mut [Sample])>> = (0..cfg.workers).map(|_| Vec::new()).collect();
        for (i, blk) in blocks.into_iter().enumerate() {
            lanes[i % cfg.workers].push(blk);
        }
        std::thread::scope(|scope| {
            for lane in lanes {
                scope.spawn(move || {
                    for (b, chunk) in lane {
                        fill_block(space, cfg, b, chunk);
                    }
                });
            }
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trials: usize,
    pub workers: usize,
    pub blocks: usize,
    pub same_domain_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub config: SimConfig,
    pub space: DomainSpace,
    /// Moments of the noise-free joint the draws come from.
    pub exact: MomentSet,
    pub exact_equivalence: EquivalenceReport,
    pub empirical: MomentSet,
    pub empirical_equivalence: EquivalenceReport,
    /// Empirical signs of the four proved conditions equal the exact ones.
    pub signs_match: bool,
    pub trace: TraceSummary,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimulationOutcome> {
    let space = cfg.domain_space()?;
    simulate_space(&space, cfg)
}

pub fn simulate_space(space: &DomainSpace, cfg: &SimConfig) -> Result<SimulationOutcome> {
    let samples = draw_samples(space, cfg)?;
    let tol = Tolerance::default();
    let exact = exact_moments(&build_domain_space_joint(space, cfg.pair_mode)?);
    let empirical = sample_moments(&samples)?;
    let exact_equivalence = check_equivalence(&exact, &tol);
    let empirical_equivalence = check_equivalence(&empirical, &tol);
    let signs = |e: &EquivalenceReport| (e.c1, e.c2, e.c3, e.c4_sq);
    Ok(SimulationOutcome {
        config: cfg.clone(),
        space: space.clone(),
        exact,
        exact_equivalence,
        empirical,
        empirical_equivalence,
        signs_match: signs(&exact_equivalence) == signs(&empirical_equivalence),
        trace: TraceSummary {
            trials: samples.len(),
            workers: cfg.workers,
            blocks: samples.len().div_ceil(BLOCK),
            same_domain_pairs: samples.iter().filter(|s| s.source == s.target).count(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub joints: usize,
    pub asserted: usize,
    pub agreements: usize,
    pub failures: Vec<u64>,
    pub identity_failures: Vec<u64>,
    /// Seeds whose `E[|SD|] - E[|TD|]` sign differs from the proved conditions.
    pub abs_variant_disagreements: Vec<u64>,
    pub min_margin: Option<f64>,
    pub max_margin: Option<f64>,
    pub max_identity_residual: f64,
}

impl SweepSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.identity_failures.is_empty()
    }
}

/// Exact checks over `count` random domain spaces seeded `first_seed..first_seed + count`.
pub fn sweep(first_seed: u64, count: u64, mode: PairMode, tol: &Tolerance) -> Result<SweepSummary> {
    let mut out = SweepSummary {
        joints: 0,
        asserted: 0,
        agreements: 0,
        failures: Vec::new(),
        identity_failures: Vec::new(),
        abs_variant_disagreements: Vec::new(),
        min_margin: None,
        max_margin: None,
        max_identity_residual: 0.0,
    };
    for seed in first_seed..first_seed + count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = DomainSpace::random(&mut rng);
        let m = exact_moments(&build_domain_space_joint(&space, mode)?);
        let eq = check_equivalence(&m, tol);
        let ids = verify_identities(&m, tol.exact);
        out.joints += 1;
        out.max_identity_residual = out.max_identity_residual.max(ids.max_residual());
        if !ids.all_passed() {
            out.identity_failures.push(seed);
        }
        if eq.asserted {
            out.asserted += 1;
            out.min_margin = Some(out.min_margin.map_or(eq.margin, |v| v.min(eq.margin)));
            out.max_margin = Some(out.max_margin.map_or(eq.margin, |v| v.max(eq.margin)));
            if eq.all_agree_proved {
                out.agreements += 1;
            } else {
                out.failures.push(seed);
            }
            if !eq.abs_variant_agrees {
                out.abs_variant_disagreements.push(seed);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trials: usize, workers: usize) -> SimConfig {
        SimConfig { trials, workers, noise_sd: 0.5, ..SimConfig::default() }
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let one = simulate(&small(20_000, 1)).unwrap();
        let eight = simulate(&small(20_000, 8)).unwrap();
        assert_eq!(one.empirical, eight.empirical);
        let space = small(2, 1).domain_space().unwrap();
        assert_eq!(draw_samples(&space, &small(9_000, 1)).unwrap(), draw_samples(&space, &small(9_000, 3)).unwrap());
    }

    #[test]
    fn two_identical_trials_have_zero_variance() {
        let space = DomainSpace {
            base: 70.0,
            difficulty: vec![1.0, 1.0],
            w_source: 0.5,
            w_target: 0.5,
            penalty: vec![vec![0.0, 2.0], vec![2.0, 0.0]],
        };
        let cfg = SimConfig { trials: 2, pair_mode: PairMode::IndependentWithReplacement, ..SimConfig::default() };
        let out = simulate_space(&space, &cfg).unwrap();
        assert_eq!(out.empirical.var_ss, 0.0);
        assert_eq!(out.empirical.var_tt, 0.0);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SimConfig { trials: 1, ..SimConfig::default() },
            SimConfig { n_domains: 1, ..SimConfig::default() },
            SimConfig { noise_sd: -1.0, ..SimConfig::default() },
            SimConfig { workers: 0, ..SimConfig::default() },
        ] {
            assert!(matches!(simulate(&cfg), Err(TheoremError::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn distinct_pairs_never_repeat_domain() {
        let cfg = SimConfig { trials: 5_000, pair_mode: PairMode::DistinctOrderedPairs, ..SimConfig::default() };
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.trace.same_domain_pairs, 0);
    }

    #[test]
    fn sweep_passes() {
        let s = sweep(1, 200, PairMode::IndependentWithReplacement, &Tolerance::default()).unwrap();
        assert!(s.passed(), "{s:?}");
        assert!(s.asserted > 150);
    }

    #[test]
    fn config_from_toml() {
        let cfg: SimConfig = toml::from_str("trials = 500\nw_target = 1.0\npair_mode = \"distinct-ordered-pairs\"").unwrap();
        assert_eq!(cfg.trials, 500);
        assert_eq!(cfg.pair_mode, PairMode::DistinctOrderedPairs);
        assert!(toml::from_str::<SimConfig>("bogus = 1").is_err());
    }
}
