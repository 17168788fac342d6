//! Corpus-level evaluation: how often each strategy picks the mechanism an
//! oracle with the true data would pick.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adaptive::DecisionMode;
use crate::decide::{
    choose_general, choose_nested, dhc_select, nesting_map, snr_bounds, snr_spread, Decision,
    DhcConfig, SnrPolicy,
};
use crate::decompose::{
    common_mechanism, common_mechanism_multi, residual_mechanism, Reconstruction, SolverConfig,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mechanism::{DataVector, LinearGaussianMechanism};
use crate::psd::Tolerances;
use crate::rng::{self, StreamRng};
use crate::spec::QuerySpec;
use crate::workloads::{
    bucketization_matrix, ingest_histogram, synth_blocks, Bucketization, Domain, SynthConfig,
};

/// Written into every report so readers know what the %PLB column measures.
pub const PLB_DEFINITION: &str = "plb_saved = 100 * rho(common mechanism run standalone) / rho; \
     the budget a separate pre-release answering the common queries with the same noise would cost";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Family {
    /// Two targets at equal ρ. Nested pairs (`B₁ = A·B₂`) use the SNR-bound
    /// rule; others fall back to `mode` (probing by default).
    Pair {
        domain: Vec<usize>,
        primary: QuerySpec,
        secondary: QuerySpec,
        #[serde(default)]
        mode: Option<DecisionMode>,
    },
    /// Total → Age4 → Age9 → Age23 over the 2 × 103 gender-age domain.
    CensusChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Corpus {
    Synthetic {
        num_blocks: usize,
        #[serde(default)]
        synth: SynthConfig,
    },
    Csv {
        paths: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Strategy {
    /// Decide from the common mechanism's output (free).
    Common,
    /// Spend `γρ` on a noisy total and pick a bucketization by thresholds.
    Dhc { gamma: f64, thetas: [f64; 3] },
    /// Spend `βρ` on a standalone copy of the common mechanism, then run the
    /// chosen target at `(1 − β)ρ`. `β` defaults to `ρ(common)/ρ`.
    Alternate {
        #[serde(default)]
        beta: Option<f64>,
    },
}

impl Strategy {
    fn label(&self) -> &'static str {
        match self {
            Strategy::Common => "common",
            Strategy::Dhc { .. } => "dhc",
            Strategy::Alternate { .. } => "alternate",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Strategy::Common => 1,
            Strategy::Dhc { .. } => 2,
            Strategy::Alternate { .. } => 3,
        }
    }
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Common]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub rhos: Vec<f64>,
    pub policies: Vec<SnrPolicy>,
    pub corpus: Corpus,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    /// Overrides the caller's seed when present.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_true")]
    pub record_blocks: bool,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rhos.is_empty() || self.rhos.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid(
                "rhos must be a nonempty list of positive values",
            ));
        }
        if self.policies.is_empty() {
            return Err(Error::invalid("at least one policy is required"));
        }
        for p in &self.policies {
            p.validate()?;
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("at least one strategy is required"));
        }
        for s in &self.strategies {
            match (s, &self.family) {
                (Strategy::Dhc { gamma, thetas }, Family::CensusChain) => DhcConfig {
                    gamma: *gamma,
                    thetas: *thetas,
                }
                .validate()?,
                (Strategy::Dhc { .. }, _) => {
                    return Err(Error::invalid(
                        "the DHC strategy applies only to the census chain",
                    ))
                }
                (Strategy::Alternate { .. }, Family::CensusChain) => {
                    return Err(Error::invalid(
                        "the alternate strategy applies only to pair families",
                    ))
                }
                (Strategy::Alternate { beta: Some(b) }, _) if !(*b > 0.0 && *b < 1.0) => {
                    return Err(Error::invalid("alternate beta must be in (0, 1)"))
                }
                _ => {}
            }
        }
        if let Some(s) = &self.solver {
            s.validate()?;
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain> {
        match &self.family {
            Family::Pair { domain, .. } => Domain::from_cardinalities(domain),
            Family::CensusChain => Ok(Domain::gender_age()),
        }
    }

    pub fn load_corpus(&self, seed: u64) -> Result<Vec<DataVector>> {
        let domain = self.domain()?;
        match &self.corpus {
            Corpus::Synthetic { num_blocks, synth } => {
                synth_blocks(&domain, *num_blocks, synth, rng::child_seed(seed, 0xC0))
            }
            Corpus::Csv { paths } => paths.iter().map(|p| ingest_histogram(p, &domain)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub strategy: String,
    pub rho: f64,
    pub x: f64,
    pub y: f64,
    pub blocks: usize,
    /// Percent of blocks for which the oracle picks each mechanism.
    pub pct_m: Vec<f64>,
    /// Percent of blocks for which the strategy picks each mechanism.
    pub pct_chosen: Vec<f64>,
    pub acc: f64,
    pub plb_saved: f64,
    /// Percent of ρ the strategy spends before deciding.
    pub decision_budget_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: usize,
    pub strategy: String,
    pub rho: f64,
    pub x: f64,
    pub y: f64,
    /// 1-based mechanism index.
    pub chosen: usize,
    pub oracle: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub plb_definition: &'static str,
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockRecord>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    /// One CSV line per row; mechanism percentages spread over columns.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let k = self.rows.first().map_or(0, |r| r.pct_m.len());
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut header: Vec<String> = ["strategy", "rho", "x", "y", "blocks"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=k).map(|i| format!("pct_m{i}")));
        header.extend((1..=k).map(|i| format!("chosen_m{i}")));
        header.extend(["acc", "plb_saved", "decision_budget_pct"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.strategy.clone(),
                r.rho.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.blocks.to_string(),
            ];
            rec.extend(r.pct_m.iter().map(|v| format!("{v:.4}")));
            rec.extend(r.pct_chosen.iter().map(|v| format!("{v:.4}")));
            rec.push(format!("{:.4}", r.acc));
            rec.push(format!("{:.4}", r.plb_saved));
            rec.push(format!("{:.4}", r.decision_budget_pct));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of `signal[i] / sd[i] ≥ y`, compared against `x`.
fn enough(signal: &DVector<f64>, sd: &[f64], policy: SnrPolicy) -> bool {
    if sd.is_empty() {
        return false;
    }
    let hits = signal
        .iter()
        .zip(sd)
        .filter(|(s, d)| **s / **d >= policy.y)
        .count();
    hits as f64 / sd.len() as f64 >= policy.x
}

fn sqrt_diag(m: &LinearGaussianMechanism, a: Option<&DMatrix<f64>>) -> Vec<f64> {
    let d = match a {
        Some(a) => m.covariance().congruence(a).diagonal(),
        None => m.covariance().diagonal(),
    };
    d.into_iter().map(f64::sqrt).collect()
}

/// Per-ρ view of a two-target family.
struct PairSetup {
    m1: LinearGaussianMechanism,
    m2: LinearGaussianMechanism,
    common: LinearGaussianMechanism,
    nest: Option<DMatrix<f64>>,
    /// Oracle noise: secondary's derived std on the primary queries when
    /// nested, else the secondary's own std.
    oracle_sd: Vec<f64>,
}

impl PairSetup {
    fn new(b1: &DMatrix<f64>, b2: &DMatrix<f64>, rho: f64, tol: Tolerances) -> Result<Self> {
        let m1 = LinearGaussianMechanism::with_target_rho(b1.clone(), rho)?;
        let m2 = LinearGaussianMechanism::with_target_rho(b2.clone(), rho)?;
        let common = common_mechanism(&m1, &m2, tol)?;
        let nest = nesting_map(b1, b2, tol)?;
        let oracle_sd = sqrt_diag(&m2, nest.as_ref());
        Ok(PairSetup {
            m1,
            m2,
            common,
            nest,
            oracle_sd,
        })
    }

    fn oracle(&self, x: &DVector<f64>, policy: SnrPolicy) -> usize {
        let signal = match self.nest {
            Some(_) => self.m1.query() * x,
            None => self.m2.query() * x,
        };
        if enough(&signal, &self.oracle_sd, policy) {
            2
        } else {
            1
        }
    }
}

fn decision_index(d: Decision) -> usize {
    match d {
        Decision::Secondary => 2,
        // Stop counts as keeping the primary analysis.
        Decision::Primary | Decision::Stop => 1,
    }
}

/// Decisions for every policy from one estimate `o` of the common queries.
#[allow(clippy::too_many_arguments)]
fn pair_decisions(
    o: &DVector<f64>,
    est: &LinearGaussianMechanism,
    m1: &LinearGaussianMechanism,
    m2: &LinearGaussianMechanism,
    nest: Option<&DMatrix<f64>>,
    mode: &DecisionMode,
    policies: &[SnrPolicy],
    probe_seed: u64,
    tol: Tolerances,
) -> Result<Vec<usize>> {
    match nest {
        Some(a) => {
            let report = snr_bounds(o, est, m1, m2, a, tol)?;
            Ok(policies
                .iter()
                .map(|p| decision_index(choose_nested(&report, *p)))
                .collect())
        }
        None => {
            let (num_probes, l1) = match mode {
                DecisionMode::General {
                    num_probes,
                    l1_budget,
                } => (*num_probes, *l1_budget),
                DecisionMode::Nested => {
                    return Err(Error::invalid(
                        "pair is not nested; use the general decision mode",
                    ))
                }
            };
            let spread = |m: &LinearGaussianMechanism| {
                snr_spread(
                    o,
                    est,
                    m.query(),
                    num_probes,
                    probe_seed,
                    l1,
                    Exec::Sequential,
                )
            };
            let stats = match (spread(m1), spread(m2)) {
                (Ok(a), Ok(b)) => Some((a, b)),
                (Err(Error::Infeasible(_)), _) | (_, Err(Error::Infeasible(_))) => None,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            Ok(policies
                .iter()
                .map(|p| match &stats {
                    Some((a, b)) => decision_index(choose_general(a, b, m1, m2, *p)),
                    None => 1,
                })
                .collect())
        }
    }
}

/// Per-ρ view of the census chain.
struct ChainSetup {
    targets: Vec<LinearGaussianMechanism>,
    /// `CM₁₂₃₄`, `CM₂₃₄`, `CM₃₄`.
    commons: Vec<LinearGaussianMechanism>,
    nests: Vec<DMatrix<f64>>,
    /// Residual of `commons[j+1]` w.r.t. `commons[j]` and the map recreating it.
    steps: Vec<(LinearGaussianMechanism, Reconstruction)>,
    oracle_sd: Vec<Vec<f64>>,
}

impl ChainSetup {
    fn targets_at(rho: f64) -> Result<Vec<LinearGaussianMechanism>> {
        Bucketization::chain()
            .iter()
            .map(|b| LinearGaussianMechanism::with_target_rho(bucketization_matrix(b), rho))
            .collect()
    }

    fn new(rho: f64, solver: &SolverConfig, tol: Tolerances) -> Result<Self> {
        let targets = Self::targets_at(rho)?;
        let t: Vec<&LinearGaussianMechanism> = targets.iter().collect();
        let commons = vec![
            common_mechanism_multi(&t, solver, tol)?,
            common_mechanism_multi(&t[1..], solver, tol)?,
            common_mechanism(t[2], t[3], tol)?,
        ];
        let nests = Self::nests(&targets, tol)?;
        let mut steps = Vec::with_capacity(2);
        for j in 0..2 {
            let r = residual_mechanism(&commons[j + 1], &commons[j], tol)?;
            let rc = Reconstruction::new(&commons[j + 1], &commons[j], &r, tol)?;
            steps.push((r, rc));
        }
        let oracle_sd = Self::oracle_sd(&targets, &nests);
        Ok(ChainSetup {
            targets,
            commons,
            nests,
            steps,
            oracle_sd,
        })
    }

    fn nests(targets: &[LinearGaussianMechanism], tol: Tolerances) -> Result<Vec<DMatrix<f64>>> {
        (0..3)
            .map(|j| {
                nesting_map(targets[j].query(), targets[j + 1].query(), tol)?.ok_or_else(|| {
                    Error::InternalInconsistency("bucketizations are not nested".into())
                })
            })
            .collect()
    }

    fn oracle_sd(targets: &[LinearGaussianMechanism], nests: &[DMatrix<f64>]) -> Vec<Vec<f64>> {
        (0..3)
            .map(|j| sqrt_diag(&targets[j + 1], Some(&nests[j])))
            .collect()
    }

    /// Moves up the chain while the next level is good enough on the truth.
    fn oracle(
        targets: &[LinearGaussianMechanism],
        oracle_sd: &[Vec<f64>],
        x: &DVector<f64>,
        policy: SnrPolicy,
    ) -> usize {
        let mut j = 0;
        while j < 3 && enough(&(targets[j].query() * x), &oracle_sd[j], policy) {
            j += 1;
        }
        j + 1
    }

    /// Estimates of `CM₁₂₃₄`, `CM₂₃₄`, `CM₃₄` obtained by running the first
    /// common mechanism and then each intermediate residual, recreating the
    /// next common from the previous one.
    fn common_outputs(&self, x: &DataVector, r: &mut StreamRng) -> Result<Vec<DVector<f64>>> {
        let mut outs = vec![self.commons[0].run_with(x, r)?];
        for (res, rc) in &self.steps {
            let o_res = if res.is_empty() {
                DVector::zeros(0)
            } else {
                res.run_with(x, r)?
            };
            let next = rc.combine(outs.last().expect("nonempty"), &o_res, Some(&mut *r))?;
            outs.push(next);
        }
        Ok(outs)
    }

    fn decide(&self, outs: &[DVector<f64>], policy: SnrPolicy, tol: Tolerances) -> Result<usize> {
        for (j, o) in outs.iter().enumerate().take(3) {
            let report = snr_bounds(
                o,
                &self.commons[j],
                &self.targets[j],
                &self.targets[j + 1],
                &self.nests[j],
                tol,
            )?;
            if choose_nested(&report, policy) != Decision::Secondary {
                return Ok(j + 1);
            }
        }
        Ok(4)
    }
}

struct Tally {
    k: usize,
    oracle: Vec<usize>,
    chosen: Vec<usize>,
    correct: usize,
    n: usize,
}

impl Tally {
    fn new(k: usize) -> Self {
        Tally {
            k,
            oracle: vec![0; k],
            chosen: vec![0; k],
            correct: 0,
            n: 0,
        }
    }

    fn add(&mut self, chosen: usize, oracle: usize) {
        self.chosen[chosen - 1] += 1;
        self.oracle[oracle - 1] += 1;
        self.correct += usize::from(chosen == oracle);
        self.n += 1;
    }

    fn pct(&self, v: &[usize]) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        v.iter().map(|&c| 100.0 * c as f64 / n).collect()
    }

    fn row(
        &self,
        strategy: &Strategy,
        rho: f64,
        p: SnrPolicy,
        plb: f64,
        budget: f64,
    ) -> ExperimentRow {
        debug_assert_eq!(self.oracle.len(), self.k);
        ExperimentRow {
            strategy: strategy.label().into(),
            rho,
            x: p.x,
            y: p.y,
            blocks: self.n,
            pct_m: self.pct(&self.oracle),
            pct_chosen: self.pct(&self.chosen),
            acc: if self.n == 0 {
                0.0
            } else {
                100.0 * self.correct as f64 / self.n as f64
            },
            plb_saved: plb,
            decision_budget_pct: budget,
        }
    }
}

/// `(chosen, oracle)` per block, per policy.
type Outcomes = Vec<Vec<(usize, usize)>>;

struct Collector<'a> {
    cfg: &'a ExperimentConfig,
    rows: Vec<ExperimentRow>,
    blocks: Vec<BlockRecord>,
}

impl Collector<'_> {
    fn push(
        &mut self,
        strategy: &Strategy,
        rho: f64,
        k: usize,
        plb: f64,
        budget: f64,
        out: Outcomes,
    ) {
        for (pi, p) in self.cfg.policies.iter().enumerate() {
            let mut t = Tally::new(k);
            for (b, per_policy) in out.iter().enumerate() {
                let (chosen, oracle) = per_policy[pi];
                t.add(chosen, oracle);
                if self.cfg.record_blocks {
                    self.blocks.push(BlockRecord {
                        block: b,
                        strategy: strategy.label().into(),
                        rho,
                        x: p.x,
                        y: p.y,
                        chosen,
                        oracle,
                    });
                }
            }
            self.rows.push(t.row(strategy, rho, *p, plb, budget));
        }
    }
}

fn strategy_seed(seed: u64, strategy: &Strategy, rho_index: usize) -> u64 {
    rng::child_seed(rng::child_seed(seed, strategy.tag()), rho_index as u64)
}

/// Runs every (ρ, strategy, policy) combination over the corpus. Blocks are
/// processed through `exec`; block `b` draws only from stream `b` of a seed
/// derived from (seed, strategy, ρ index), so results do not depend on `exec`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    tol: Tolerances,
    exec: Exec,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let seed = cfg.seed.unwrap_or(seed);
    let corpus = cfg.load_corpus(seed)?;
    let xs: Vec<DVector<f64>> = corpus.iter().map(DataVector::to_vector).collect();
    let solver = cfg.solver.unwrap_or_default();
    let mut col = Collector {
        cfg,
        rows: Vec::new(),
        blocks: Vec::new(),
    };
    let mut notes = Vec::new();

    match &cfg.family {
        Family::Pair {
            primary,
            secondary,
            mode,
            ..
        } => {
            let domain = cfg.domain()?;
            let b1 = primary.matrix(&domain)?;
            let b2 = secondary.matrix(&domain)?;
            let mode = mode.clone().unwrap_or(DecisionMode::General {
                num_probes: 20,
                l1_budget: crate::decide::DEFAULT_L1_BUDGET,
            });
            for (ri, &rho) in cfg.rhos.iter().enumerate() {
                let s = PairSetup::new(&b1, &b2, rho, tol)?;
                if s.common.is_empty() {
                    return Err(Error::invalid("targets share no queries"));
                }
                let plb = 100.0 * s.common.rho() / rho;
                for strategy in &cfg.strategies {
                    let sseed = strategy_seed(seed, strategy, ri);
                    match strategy {
                        Strategy::Common => {
                            let out = exec.try_map(corpus.len(), |b| {
                                let o = s
                                    .common
                                    .run_with(&corpus[b], &mut rng::stream(sseed, b as u64))?;
                                let probe = rng::child_seed(sseed, b as u64);
                                let ds = pair_decisions(
                                    &o,
                                    &s.common,
                                    &s.m1,
                                    &s.m2,
                                    s.nest.as_ref(),
                                    &mode,
                                    &cfg.policies,
                                    probe,
                                    tol,
                                )?;
                                Ok::<_, Error>(
                                    cfg.policies
                                        .iter()
                                        .zip(ds)
                                        .map(|(p, d)| (d, s.oracle(&xs[b], *p)))
                                        .collect::<Vec<_>>(),
                                )
                            })?;
                            col.push(strategy, rho, 2, plb, 0.0, out);
                        }
                        Strategy::Alternate { beta } => {
                            let beta = beta.unwrap_or(plb / 100.0);
                            if !(beta > 0.0 && beta < 1.0) {
                                notes.push(format!(
                                    "alternate strategy skipped at rho={rho}: beta={beta} leaves no budget"
                                ));
                                continue;
                            }
                            // Same cost as the common mechanism, rescaled to βρ.
                            let est = LinearGaussianMechanism::new(
                                s.common.query().clone(),
                                s.common.covariance().scale(s.common.rho() / (beta * rho)),
                            )?;
                            let reduced = PairSetup::new(&b1, &b2, rho * (1.0 - beta), tol)?;
                            let out = exec.try_map(corpus.len(), |b| {
                                let o =
                                    est.run_with(&corpus[b], &mut rng::stream(sseed, b as u64))?;
                                let probe = rng::child_seed(sseed, b as u64);
                                let ds = pair_decisions(
                                    &o,
                                    &est,
                                    &reduced.m1,
                                    &reduced.m2,
                                    reduced.nest.as_ref(),
                                    &mode,
                                    &cfg.policies,
                                    probe,
                                    tol,
                                )?;
                                Ok::<_, Error>(
                                    cfg.policies
                                        .iter()
                                        .zip(ds)
                                        .map(|(p, d)| (d, reduced.oracle(&xs[b], *p)))
                                        .collect::<Vec<_>>(),
                                )
                            })?;
                            col.push(strategy, rho, 2, plb, 100.0 * beta, out);
                        }
                        Strategy::Dhc { .. } => unreachable!("rejected by validate"),
                    }
                }
            }
        }
        Family::CensusChain => {
            for (ri, &rho) in cfg.rhos.iter().enumerate() {
                let s = ChainSetup::new(rho, &solver, tol)?;
                let plb = 100.0 * s.commons[0].rho() / rho;
                for strategy in &cfg.strategies {
                    let sseed = strategy_seed(seed, strategy, ri);
                    match strategy {
                        Strategy::Common => {
                            let out = exec.try_map(corpus.len(), |b| {
                                let outs = s.common_outputs(
                                    &corpus[b],
                                    &mut rng::stream(sseed, b as u64),
                                )?;
                                cfg.policies
                                    .iter()
                                    .map(|p| {
                                        let chosen = s.decide(&outs, *p, tol)?;
                                        let oracle = ChainSetup::oracle(
                                            &s.targets,
                                            &s.oracle_sd,
                                            &xs[b],
                                            *p,
                                        );
                                        Ok((chosen, oracle))
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })?;
                            col.push(strategy, rho, 4, plb, 0.0, out);
                        }
                        Strategy::Dhc { gamma, thetas } => {
                            let dhc = DhcConfig {
                                gamma: *gamma,
                                thetas: *thetas,
                            };
                            // The chosen bucketization runs on what is left.
                            let targets = ChainSetup::targets_at(rho * (1.0 - gamma))?;
                            let nests = ChainSetup::nests(&targets, tol)?;
                            let sd = ChainSetup::oracle_sd(&targets, &nests);
                            let noise_sd = (1.0 / (2.0 * gamma * rho)).sqrt();
                            let out = exec.map(corpus.len(), |b| {
                                let mut r = rng::stream(sseed, b as u64);
                                let z: f64 = r.sample(StandardNormal);
                                let chosen =
                                    dhc_select(corpus[b].total() as f64 + noise_sd * z, &dhc);
                                cfg.policies
                                    .iter()
                                    .map(|p| {
                                        (chosen, ChainSetup::oracle(&targets, &sd, &xs[b], *p))
                                    })
                                    .collect::<Vec<_>>()
                            });
                            col.push(strategy, rho, 4, plb, 100.0 * gamma, out);
                        }
                        Strategy::Alternate { .. } => unreachable!("rejected by validate"),
                    }
                }
            }
        }
    }

    Ok(ExperimentReport {
        seed,
        plb_definition: PLB_DEFINITION,
        config: cfg.clone(),
        rows: col.rows,
        blocks: col.blocks,
        notes,
    })
}
