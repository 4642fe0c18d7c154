//! Batch experiment engine behind the `falcon` CLI.
//!
//! Five experiments are provided, each writing one row file (CSV or JSON),
//! one aggregate CSV, and one JSON metadata sidecar into the output
//! directory:
//!
//! - **feasibility** — fresh clustered-multipath channels per trial; every
//!   configured method runs on the same draw; alternating-baseline entries
//!   are expanded over the `p_m0_list` power-split sweep. Rows:
//!   `feasibility_trials.csv`.
//! - **convergence** — one seeded channel draw, all configured methods, full
//!   per-iteration objective traces (`convergence_traces.csv`).
//! - **rate_region** — two-user phase-ramp channels at each `θ` in the
//!   sweep; for the fully-digital reference and each phase-matched
//!   resolution in `l_tx_list`, the weight pair `(μ₁, μ₂)` sweeps
//!   `weight_points` log-spaced ratios with `μ₁ + μ₂ = 2`, solved with and
//!   without unicast common parts (`rate_region_points.csv`).
//! - **hybrid_compare** — for each user count in `k_list`: the relaxation
//!   solver on fully-digital, phase-matched, and codebook-greedy analog
//!   designs, plus the alternating baseline (matched-filter init, 0.80
//!   multicast split) on fully-digital, averaged over trials.
//! - **timing** — wall-clock and feasibility per (user count, method).
//!
//! Seeding: trial `i` of an experiment uses `seed_base + i` (counting
//! across the user-count sweep where one exists), so a rerun with the same
//! config is bit-identical in every field except the `wall_ms` columns,
//! which are measurements. Aggregates are plain recomputations over the row
//! files: feasibility percentage over all rows of a group; mean/median
//! weighted sum rate over the *feasible* rows; mean iterations and wall
//! time over rows whose solver produced an iterate.
//!
//! A run counts **feasible** when its final status is converged or
//! iteration-capped *and* the returned design passes the exact constraint
//! check with slacks ≥ −10⁻⁶; baseline initialization failures (for
//! example zero-forcing on rank-deficient channels) count infeasible.
//!
//! Configs are TOML (see [`ExperimentConfig::from_toml`]); every field has
//! a default, so an empty document is a valid config.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analog::{
    build_codebook, design_codebook_greedy, design_phase_matched, identity_analog, AnalogPrecoder,
    PhaseShiftSet,
};
use crate::channel::{dbm_to_mw, ChannelSet};
use crate::error::Error;
use crate::falcon::{run_falcon, FalconConfig, RsMode, RsSolution, RunStatus};
use crate::rates::{feasibility_report, ProblemParams};
use crate::wmmse::{init_point, run_wmmse, WmmseInitMethod};

/// Cluster count for every generated multipath channel.
pub const DEFAULT_PATHS: usize = 3;

/// Slack tolerance of the per-trial constraint check.
pub const FEASIBILITY_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Feasibility,
    Convergence,
    RateRegion,
    HybridCompare,
    Timing,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Feasibility => "feasibility",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::RateRegion => "rate_region",
            ExperimentKind::HybridCompare => "hybrid_compare",
            ExperimentKind::Timing => "timing",
        }
    }
}

/// Physical scenario: array size, user count, multicast floor, and link
/// budget. Empty `weights` means equal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub n_tx: usize,
    pub k_users: usize,
    /// Multicast rate floor, bits/s/Hz.
    pub c0_min: f64,
    pub p_tx_dbm: f64,
    pub sigma2_dbm: f64,
    pub weights: Vec<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n_tx: 8,
            k_users: 4,
            c0_min: 1.5,
            p_tx_dbm: 50.0,
            sigma2_dbm: 30.0,
            weights: vec![],
        }
    }
}

impl Scenario {
    /// Resolves to solver parameters for `k` users (weights default to 1).
    pub fn params(&self, k_users: usize) -> Result<ProblemParams, Error> {
        let weights = if self.weights.is_empty() {
            vec![1.0; k_users]
        } else {
            self.weights.clone()
        };
        let params = ProblemParams {
            p_tx_mw: dbm_to_mw(self.p_tx_dbm),
            sigma2_mw: dbm_to_mw(self.sigma2_dbm),
            c0_min: self.c0_min,
            weights,
        };
        params.validate(k_users)?;
        Ok(params)
    }
}

/// Which analog front end the digital precoders drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrecoderSpec {
    /// `F = I`, one RF chain per antenna.
    #[serde(rename = "fd")]
    FullyDigital,
    /// Quantized conjugate matching with an `l_tx`-phase alphabet.
    #[serde(rename = "pb")]
    PhaseMatched { l_tx: usize },
    /// Greedy assignment from a constant-modulus codebook.
    #[serde(rename = "cb")]
    CodebookGreedy { l_tx: usize, codebook_size: usize },
}

impl PrecoderSpec {
    pub fn label(&self) -> String {
        match self {
            PrecoderSpec::FullyDigital => "fd".into(),
            PrecoderSpec::PhaseMatched { l_tx } => format!("pb{l_tx}"),
            PrecoderSpec::CodebookGreedy { l_tx, codebook_size } => {
                format!("cb{codebook_size}x{l_tx}")
            }
        }
    }

    /// Materializes the analog matrix for one channel draw. `seed` feeds
    /// only the codebook's random filler codewords.
    pub fn build(&self, channels: &ChannelSet, seed: u64) -> Result<AnalogPrecoder, Error> {
        match self {
            PrecoderSpec::FullyDigital => Ok(identity_analog(channels.n_tx())),
            PrecoderSpec::PhaseMatched { l_tx } => {
                let alphabet = PhaseShiftSet::new(*l_tx, channels.k_users())?;
                Ok(design_phase_matched(channels, &alphabet))
            }
            PrecoderSpec::CodebookGreedy { l_tx, codebook_size } => {
                let alphabet = PhaseShiftSet::new(*l_tx, channels.k_users())?;
                let book = build_codebook(channels.n_tx(), *codebook_size, &alphabet, seed)?;
                design_codebook_greedy(channels, &book)
            }
        }
    }
}

/// One solver entry in the experiment's method list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Falcon,
    Wmmse {
        init: WmmseInitMethod,
        p_m0_fraction: f64,
    },
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Falcon => "falcon".into(),
            MethodSpec::Wmmse {
                init,
                p_m0_fraction,
            } => format!("wmmse-{}-{:.2}", init.label(), p_m0_fraction),
        }
    }
}

/// Experiment-specific sweep axes; unused axes are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    /// Phase-ramp angles for the rate-region experiment, radians.
    pub thetas: Vec<f64>,
    /// Phase-shifter resolutions compared in the rate-region experiment.
    pub l_tx_list: Vec<usize>,
    /// User counts for hybrid comparison and timing.
    pub k_list: Vec<usize>,
    /// Multicast power fractions swept by baseline entries in the
    /// feasibility experiment.
    pub p_m0_list: Vec<f64>,
    /// Weight pairs per rate-region boundary.
    pub weight_points: usize,
    /// Phase resolution of the hybrid-comparison analog designs.
    pub hybrid_l_tx: usize,
    /// Codebook size of the hybrid-comparison greedy design.
    pub codebook_size: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            thetas: vec![
                std::f64::consts::PI / 9.0,
                std::f64::consts::PI / 4.0,
                std::f64::consts::PI / 2.0,
            ],
            l_tx_list: vec![2, 4, 8, 16],
            k_list: vec![2, 3, 4, 5, 6],
            p_m0_list: vec![0.70, 0.80, 0.90, 0.95, 0.99],
            weight_points: 41,
            hybrid_l_tx: 16,
            codebook_size: 16,
        }
    }
}

/// Complete description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub scenario: Scenario,
    pub precoder: PrecoderSpec,
    pub methods: Vec<MethodSpec>,
    pub trials: usize,
    pub seed_base: u64,
    pub mode: RsMode,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Feasibility,
            scenario: Scenario::default(),
            precoder: PrecoderSpec::FullyDigital,
            methods: vec![
                MethodSpec::Falcon,
                MethodSpec::Wmmse {
                    init: WmmseInitMethod::Mrt,
                    p_m0_fraction: 0.90,
                },
            ],
            trials: 100,
            seed_base: 1,
            mode: RsMode::Rs,
            sweep: SweepSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults tuned per experiment: the rate region runs on the two-user
    /// four-antenna phase-ramp geometry with a 0.5 bps/Hz floor; the
    /// feasibility default adds all three baseline initializations; the
    /// convergence default contrasts two multicast splits.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut cfg = ExperimentConfig {
            experiment: kind,
            ..Default::default()
        };
        match kind {
            ExperimentKind::Feasibility => {
                cfg.methods = vec![
                    MethodSpec::Falcon,
                    MethodSpec::Wmmse {
                        init: WmmseInitMethod::Mrt,
                        p_m0_fraction: 0.90,
                    },
                    MethodSpec::Wmmse {
                        init: WmmseInitMethod::Zf,
                        p_m0_fraction: 0.90,
                    },
                    MethodSpec::Wmmse {
                        init: WmmseInitMethod::Slnr,
                        p_m0_fraction: 0.90,
                    },
                ];
            }
            ExperimentKind::Convergence => {
                cfg.trials = 1;
                cfg.methods = vec![
                    MethodSpec::Falcon,
                    MethodSpec::Wmmse {
                        init: WmmseInitMethod::Mrt,
                        p_m0_fraction: 0.80,
                    },
                    MethodSpec::Wmmse {
                        init: WmmseInitMethod::Mrt,
                        p_m0_fraction: 0.99,
                    },
                ];
            }
            ExperimentKind::RateRegion => {
                cfg.scenario = Scenario {
                    n_tx: 4,
                    k_users: 2,
                    c0_min: 0.5,
                    ..Scenario::default()
                };
            }
            ExperimentKind::HybridCompare => {
                cfg.trials = 50;
            }
            ExperimentKind::Timing => {
                cfg.trials = 20;
            }
        }
        cfg
    }

    /// Parses a TOML document; missing keys fall back to defaults.
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes back to TOML (the config echo format).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.scenario
            .params(self.scenario.k_users)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.methods.is_empty()
            && matches!(
                self.experiment,
                ExperimentKind::Feasibility | ExperimentKind::Convergence | ExperimentKind::Timing
            )
        {
            return Err(Error::Config("methods list is empty".into()));
        }
        let has_wmmse = self
            .methods
            .iter()
            .any(|m| matches!(m, MethodSpec::Wmmse { .. }));
        if self.mode == RsMode::Ldm && has_wmmse {
            return Err(Error::Config(
                "the alternating baseline has no no-split variant; use falcon for ldm runs".into(),
            ));
        }
        for m in &self.methods {
            if let MethodSpec::Wmmse { p_m0_fraction, .. } = m {
                if !(*p_m0_fraction > 0.0 && *p_m0_fraction < 1.0) {
                    return Err(Error::Config("p_m0_fraction must be inside (0, 1)".into()));
                }
            }
        }
        match self.experiment {
            ExperimentKind::RateRegion => {
                if self.scenario.k_users != 2 || self.scenario.n_tx != 4 {
                    return Err(Error::Config(
                        "the rate-region experiment runs on the two-user four-antenna phase-ramp geometry".into(),
                    ));
                }
                if self.sweep.thetas.is_empty() {
                    return Err(Error::Config("thetas list is empty".into()));
                }
                if self.sweep.weight_points < 2 || self.sweep.weight_points > 1001 {
                    return Err(Error::Config("weight_points must be in 2..=1001".into()));
                }
            }
            ExperimentKind::HybridCompare | ExperimentKind::Timing => {
                if self.sweep.k_list.is_empty() {
                    return Err(Error::Config("k_list is empty".into()));
                }
                if !self.scenario.weights.is_empty() {
                    return Err(Error::Config(
                        "experiments sweeping the user count require default (equal) weights"
                            .into(),
                    ));
                }
            }
            _ => {}
        }
        if self
            .sweep
            .p_m0_list
            .iter()
            .any(|p| !(*p > 0.0 && *p < 1.0))
        {
            return Err(Error::Config("p_m0_list entries must be inside (0, 1)".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// One solver invocation on one channel draw.
#[derive(Debug, Clone, Serialize)]
pub struct SolveRow {
    pub k_users: usize,
    pub trial: usize,
    pub seed: u64,
    pub method: String,
    pub precoder: String,
    pub status: String,
    pub feasible: bool,
    /// Weighted sum rate; NaN when no iterate was produced.
    pub wsr: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Worst rank residual over the extracted covariances (0 for the
    /// baseline, whose iterates are vectors by construction).
    pub max_rank_residual: f64,
    pub relaxation_gap: f64,
}

/// One weight pair on one rate-region boundary.
#[derive(Debug, Clone, Serialize)]
pub struct RegionRow {
    pub theta: f64,
    pub precoder: String,
    pub mode: String,
    pub mu1: f64,
    pub mu2: f64,
    pub status: String,
    pub feasible: bool,
    /// Total unicast rates (private + common part) of each user.
    pub r1: f64,
    pub r2: f64,
    pub wsr: f64,
}

/// One point of one method's objective trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub method: String,
    pub iteration: usize,
    pub wsr: f64,
}

/// Group summary, recomputable from the row files.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub group: String,
    pub rows: usize,
    pub feasible_pct: f64,
    pub mean_wsr: f64,
    pub median_wsr: f64,
    pub mean_iterations: f64,
    pub mean_wall_ms: f64,
}

/// Everything one experiment produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub solve_rows: Vec<SolveRow>,
    pub region_rows: Vec<RegionRow>,
    pub trace_rows: Vec<TraceRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Per-trial seeds in dispatch order.
    pub seeds: Vec<u64>,
}

/// A rendered output file.
#[derive(Debug, Clone)]
pub struct OutputFile {
    pub name: String,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Maps `f` over `0..n` on a scoped thread pool. Work items are claimed
/// from a shared counter; results are reassembled in index order, so output
/// never depends on scheduling.
fn run_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1)
        .min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, T)>> = Mutex::new(Vec::with_capacity(n));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let v = f(i);
                results.lock().expect("worker poisoned").push((i, v));
            });
        }
    });
    let mut got = results.into_inner().expect("worker poisoned");
    got.sort_by_key(|p| p.0);
    got.into_iter().map(|p| p.1).collect()
}

// ---------------------------------------------------------------------------
// Single-run plumbing
// ---------------------------------------------------------------------------

struct MethodOutcome {
    status: &'static str,
    feasible: bool,
    wsr: f64,
    iterations: usize,
    wall_ms: f64,
    max_rank_residual: f64,
    relaxation_gap: f64,
    trace: Vec<f64>,
}

/// Runs one method on one prepared instance and applies the feasibility
/// counting rule from the module docs.
fn run_method(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    params: &ProblemParams,
    mode: RsMode,
    method: &MethodSpec,
) -> MethodOutcome {
    let t0 = Instant::now();
    let sol: Result<RsSolution, Error> = match method {
        MethodSpec::Falcon => {
            let cfg = FalconConfig {
                mode,
                ..FalconConfig::default()
            };
            run_falcon(channels, analog, params, &cfg)
        }
        MethodSpec::Wmmse {
            init,
            p_m0_fraction,
        } => init_point(
            channels,
            analog,
            *init,
            *p_m0_fraction,
            params.p_tx_mw,
            params.sigma2_mw,
        )
        .and_then(|ip| run_wmmse(channels, analog, &ip, params, &FalconConfig::default())),
    };
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    match sol {
        Err(_) => MethodOutcome {
            status: "init_failure",
            feasible: false,
            wsr: f64::NAN,
            iterations: 0,
            wall_ms,
            max_rank_residual: f64::NAN,
            relaxation_gap: f64::NAN,
            trace: vec![],
        },
        Ok(sol) => {
            let usable = matches!(sol.status, RunStatus::Converged | RunStatus::IterationCap);
            let feasible = usable
                && feasibility_report(
                    channels,
                    analog,
                    &sol.b_vecs,
                    &sol.m_vec,
                    sol.c0,
                    &sol.c,
                    params,
                    FEASIBILITY_TOL,
                )
                .map(|r| r.pass)
                .unwrap_or(false);
            MethodOutcome {
                status: sol.status.label(),
                feasible,
                wsr: sol.wsr,
                iterations: sol.iterations_used,
                wall_ms,
                max_rank_residual: sol
                    .rank_residuals
                    .iter()
                    .cloned()
                    .fold(0.0f64, f64::max),
                relaxation_gap: sol.relaxation_gap,
                trace: sol.trace.clone(),
            }
        }
    }
}

fn solve_row(
    k_users: usize,
    trial: usize,
    seed: u64,
    method: &MethodSpec,
    precoder_label: String,
    out: MethodOutcome,
) -> SolveRow {
    SolveRow {
        k_users,
        trial,
        seed,
        method: method.label(),
        precoder: precoder_label,
        status: out.status.into(),
        feasible: out.feasible,
        wsr: out.wsr,
        iterations: out.iterations,
        wall_ms: out.wall_ms,
        max_rank_residual: out.max_rank_residual,
        relaxation_gap: out.relaxation_gap,
    }
}

/// Decouples the codebook filler stream from the channel stream.
fn codebook_seed(trial_seed: u64) -> u64 {
    trial_seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

fn median(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn aggregate_group(group: String, rows: &[&SolveRow]) -> AggregateRow {
    let n = rows.len();
    let feasible: Vec<&&SolveRow> = rows.iter().filter(|r| r.feasible).collect();
    let mut wsrs: Vec<f64> = feasible.iter().map(|r| r.wsr).collect();
    wsrs.sort_by(f64::total_cmp);
    let ran: Vec<&&SolveRow> = rows
        .iter()
        .filter(|r| r.status == "converged" || r.status == "iteration_cap")
        .collect();
    let mean = |v: &[f64]| -> f64 {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    AggregateRow {
        group,
        rows: n,
        feasible_pct: 100.0 * feasible.len() as f64 / n.max(1) as f64,
        mean_wsr: mean(&wsrs),
        median_wsr: median(&wsrs),
        mean_iterations: mean(&ran.iter().map(|r| r.iterations as f64).collect::<Vec<_>>()),
        mean_wall_ms: mean(&ran.iter().map(|r| r.wall_ms).collect::<Vec<_>>()),
    }
}

/// Groups solve rows by `(k_users, method, precoder)`, preserving first-seen
/// order.
pub fn aggregate_solve_rows(rows: &[SolveRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(usize, String, String)> = Vec::new();
    for r in rows {
        let key = (r.k_users, r.method.clone(), r.precoder.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let members: Vec<&SolveRow> = rows
                .iter()
                .filter(|r| r.k_users == key.0 && r.method == key.1 && r.precoder == key.2)
                .collect();
            aggregate_group(format!("k={},method={},precoder={}", key.0, key.1, key.2), &members)
        })
        .collect()
}

/// Groups region rows by `(theta, precoder, mode)`: feasibility percentage
/// and weighted-sum-rate statistics over the boundary sweep.
pub fn aggregate_region_rows(rows: &[RegionRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    for r in rows {
        let key = (format!("{}", r.theta), r.precoder.clone(), r.mode.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let members: Vec<&RegionRow> = rows
                .iter()
                .filter(|r| {
                    format!("{}", r.theta) == key.0 && r.precoder == key.1 && r.mode == key.2
                })
                .collect();
            let n = members.len();
            let feasible: Vec<f64> = members
                .iter()
                .filter(|r| r.feasible)
                .map(|r| r.wsr)
                .collect();
            let mut sorted = feasible.clone();
            sorted.sort_by(f64::total_cmp);
            AggregateRow {
                group: format!("theta={},precoder={},mode={}", key.0, key.1, key.2),
                rows: n,
                feasible_pct: 100.0 * feasible.len() as f64 / n.max(1) as f64,
                mean_wsr: if sorted.is_empty() {
                    f64::NAN
                } else {
                    sorted.iter().sum::<f64>() / sorted.len() as f64
                },
                median_wsr: median(&sorted),
                mean_iterations: f64::NAN,
                mean_wall_ms: f64::NAN,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Expands baseline entries over the multicast-split sweep (feasibility
/// experiment rule), deduplicating by label.
fn expand_p_m0(methods: &[MethodSpec], p_m0_list: &[f64]) -> Vec<MethodSpec> {
    let mut out: Vec<MethodSpec> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for m in methods {
        match m {
            MethodSpec::Falcon => {
                if !seen.contains(&m.label()) {
                    seen.push(m.label());
                    out.push(*m);
                }
            }
            MethodSpec::Wmmse { init, .. } => {
                for p in p_m0_list {
                    let cand = MethodSpec::Wmmse {
                        init: *init,
                        p_m0_fraction: *p,
                    };
                    if !seen.contains(&cand.label()) {
                        seen.push(cand.label());
                        out.push(cand);
                    }
                }
            }
        }
    }
    out
}

fn exp_feasibility(config: &ExperimentConfig) -> Result<RunRecord, Error> {
    let sc = &config.scenario;
    let params = sc.params(sc.k_users)?;
    let methods = expand_p_m0(&config.methods, &config.sweep.p_m0_list);
    let seeds: Vec<u64> = (0..config.trials)
        .map(|i| config.seed_base.wrapping_add(i as u64))
        .collect();

    let trials: Vec<Result<Vec<SolveRow>, Error>> = run_indexed(config.trials, |i| {
        let seed = seeds[i];
        let channels = ChannelSet::saleh_valenzuela(seed, sc.n_tx, sc.k_users, DEFAULT_PATHS)?;
        let analog = config.precoder.build(&channels, codebook_seed(seed))?;
        let label = config.precoder.label();
        Ok(methods
            .iter()
            .map(|m| {
                let out = run_method(&channels, &analog, &params, config.mode, m);
                solve_row(sc.k_users, i, seed, m, label.clone(), out)
            })
            .collect())
    });
    let mut solve_rows = Vec::new();
    for t in trials {
        solve_rows.extend(t?);
    }
    let aggregates = aggregate_solve_rows(&solve_rows);
    Ok(RunRecord {
        config: config.clone(),
        solve_rows,
        region_rows: vec![],
        trace_rows: vec![],
        aggregates,
        seeds,
    })
}

fn exp_convergence(config: &ExperimentConfig) -> Result<RunRecord, Error> {
    let sc = &config.scenario;
    let params = sc.params(sc.k_users)?;
    let seed = config.seed_base;
    let channels = ChannelSet::saleh_valenzuela(seed, sc.n_tx, sc.k_users, DEFAULT_PATHS)?;
    let analog = config.precoder.build(&channels, codebook_seed(seed))?;
    let label = config.precoder.label();

    let outcomes: Vec<(MethodSpec, MethodOutcome)> = config
        .methods
        .iter()
        .map(|m| (*m, run_method(&channels, &analog, &params, config.mode, m)))
        .collect();

    let mut solve_rows = Vec::new();
    let mut trace_rows = Vec::new();
    for (m, out) in outcomes {
        for (it, wsr) in out.trace.iter().enumerate() {
            trace_rows.push(TraceRow {
                method: m.label(),
                iteration: it + 1,
                wsr: *wsr,
            });
        }
        solve_rows.push(solve_row(sc.k_users, 0, seed, &m, label.clone(), out));
    }
    let aggregates = aggregate_solve_rows(&solve_rows);
    Ok(RunRecord {
        config: config.clone(),
        solve_rows,
        region_rows: vec![],
        trace_rows,
        aggregates,
        seeds: vec![seed],
    })
}

/// The `weight_points` log-spaced weight pairs `(μ₁, μ₂)` with
/// `μ₁/μ₂ ∈ [10⁻², 10²]` and `μ₁ + μ₂ = 2`.
pub fn region_weight_pairs(points: usize) -> Vec<(f64, f64)> {
    (0..points)
        .map(|i| {
            let expo = -2.0 + 4.0 * i as f64 / (points - 1) as f64;
            let ratio = 10f64.powf(expo);
            let mu1 = 2.0 * ratio / (1.0 + ratio);
            (mu1, 2.0 - mu1)
        })
        .collect()
}

fn exp_rate_region(config: &ExperimentConfig) -> Result<RunRecord, Error> {
    let sc = &config.scenario;
    let pairs = region_weight_pairs(config.sweep.weight_points);
    let mut variants: Vec<PrecoderSpec> = vec![PrecoderSpec::FullyDigital];
    for l in &config.sweep.l_tx_list {
        variants.push(PrecoderSpec::PhaseMatched { l_tx: *l });
    }

    // Flatten (θ, variant, mode, weight pair) into one task list.
    struct Task {
        theta: f64,
        variant: PrecoderSpec,
        mode: RsMode,
        mu: (f64, f64),
    }
    let mut tasks = Vec::new();
    for theta in &config.sweep.thetas {
        for variant in &variants {
            for mode in [RsMode::Rs, RsMode::Ldm] {
                for mu in &pairs {
                    tasks.push(Task {
                        theta: *theta,
                        variant: *variant,
                        mode,
                        mu: *mu,
                    });
                }
            }
        }
    }

    let rows: Vec<Result<RegionRow, Error>> = run_indexed(tasks.len(), |i| {
        let t = &tasks[i];
        let channels = ChannelSet::two_user_phase_ramp(t.theta);
        let analog = t.variant.build(&channels, 0)?;
        let params = ProblemParams {
            p_tx_mw: dbm_to_mw(sc.p_tx_dbm),
            sigma2_mw: dbm_to_mw(sc.sigma2_dbm),
            c0_min: sc.c0_min,
            weights: vec![t.mu.0, t.mu.1],
        };
        let cfg = FalconConfig {
            mode: t.mode,
            ..FalconConfig::default()
        };
        let sol = run_falcon(&channels, &analog, &params, &cfg)?;
        let usable = matches!(sol.status, RunStatus::Converged | RunStatus::IterationCap);
        let feasible = usable
            && feasibility_report(
                &channels,
                &analog,
                &sol.b_vecs,
                &sol.m_vec,
                sol.c0,
                &sol.c,
                &params,
                FEASIBILITY_TOL,
            )
            .map(|r| r.pass)
            .unwrap_or(false);
        Ok(RegionRow {
            theta: t.theta,
            precoder: t.variant.label(),
            mode: match t.mode {
                RsMode::Rs => "rs".into(),
                RsMode::Ldm => "ldm".into(),
            },
            mu1: t.mu.0,
            mu2: t.mu.1,
            status: sol.status.label().into(),
            feasible,
            r1: sol.unicast_rate[0],
            r2: sol.unicast_rate[1],
            wsr: sol.wsr,
        })
    });
    let region_rows: Vec<RegionRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let aggregates = aggregate_region_rows(&region_rows);
    Ok(RunRecord {
        config: config.clone(),
        solve_rows: vec![],
        region_rows,
        trace_rows: vec![],
        aggregates,
        seeds: vec![],
    })
}

/// The fixed method/front-end matrix of the hybrid comparison.
fn hybrid_entries(sweep: &SweepSpec) -> Vec<(PrecoderSpec, MethodSpec)> {
    vec![
        (PrecoderSpec::FullyDigital, MethodSpec::Falcon),
        (
            PrecoderSpec::PhaseMatched {
                l_tx: sweep.hybrid_l_tx,
            },
            MethodSpec::Falcon,
        ),
        (
            PrecoderSpec::CodebookGreedy {
                l_tx: sweep.hybrid_l_tx,
                codebook_size: sweep.codebook_size,
            },
            MethodSpec::Falcon,
        ),
        (
            PrecoderSpec::FullyDigital,
            MethodSpec::Wmmse {
                init: WmmseInitMethod::Mrt,
                p_m0_fraction: 0.80,
            },
        ),
    ]
}

fn exp_sweep_k(config: &ExperimentConfig) -> Result<RunRecord, Error> {
    let sc = &config.scenario;
    let entries: Vec<(PrecoderSpec, MethodSpec)> = match config.experiment {
        ExperimentKind::HybridCompare => hybrid_entries(&config.sweep),
        _ => config
            .methods
            .iter()
            .map(|m| (config.precoder, *m))
            .collect(),
    };
    let k_list = &config.sweep.k_list;
    let total = k_list.len() * config.trials;
    let seeds: Vec<u64> = (0..total)
        .map(|i| config.seed_base.wrapping_add(i as u64))
        .collect();

    let trials: Vec<Result<Vec<SolveRow>, Error>> = run_indexed(total, |i| {
        let ki = i / config.trials;
        let trial = i % config.trials;
        let k = k_list[ki];
        let seed = seeds[i];
        let channels = ChannelSet::saleh_valenzuela(seed, sc.n_tx, k, DEFAULT_PATHS)?;
        let params = sc.params(k)?;
        entries
            .iter()
            .map(|(p, m)| {
                let analog = p.build(&channels, codebook_seed(seed))?;
                let out = run_method(&channels, &analog, &params, config.mode, m);
                Ok(solve_row(k, trial, seed, m, p.label(), out))
            })
            .collect()
    });
    let mut solve_rows = Vec::new();
    for t in trials {
        solve_rows.extend(t?);
    }
    let aggregates = aggregate_solve_rows(&solve_rows);
    Ok(RunRecord {
        config: config.clone(),
        solve_rows,
        region_rows: vec![],
        trace_rows: vec![],
        aggregates,
        seeds,
    })
}

/// Runs the experiment named by `config.experiment`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord, Error> {
    config.validate()?;
    match config.experiment {
        ExperimentKind::Feasibility => exp_feasibility(config),
        ExperimentKind::Convergence => exp_convergence(config),
        ExperimentKind::RateRegion => exp_rate_region(config),
        ExperimentKind::HybridCompare | ExperimentKind::Timing => exp_sweep_k(config),
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn solve_rows_csv(rows: &[SolveRow]) -> String {
    let mut s = String::from(
        "k_users,trial,seed,method,precoder,status,feasible,wsr,iterations,wall_ms,max_rank_residual,relaxation_gap\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.k_users,
            r.trial,
            r.seed,
            r.method,
            r.precoder,
            r.status,
            r.feasible,
            r.wsr,
            r.iterations,
            r.wall_ms,
            r.max_rank_residual,
            r.relaxation_gap
        ));
    }
    s
}

fn region_rows_csv(rows: &[RegionRow]) -> String {
    let mut s = String::from("theta,precoder,mode,mu1,mu2,status,feasible,r1,r2,wsr\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.theta, r.precoder, r.mode, r.mu1, r.mu2, r.status, r.feasible, r.r1, r.r2, r.wsr
        ));
    }
    s
}

fn trace_rows_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("method,iteration,wsr\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.method, r.iteration, r.wsr));
    }
    s
}

fn aggregates_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(
        "group,rows,feasible_pct,mean_wsr,median_wsr,mean_iterations,mean_wall_ms\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.group, r.rows, r.feasible_pct, r.mean_wsr, r.median_wsr, r.mean_iterations, r.mean_wall_ms
        ));
    }
    s
}

fn git_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Renders an experiment's output files. The metadata sidecar carries the
/// config echo, package version, best-effort git hash, and the seed list;
/// it deliberately has no timestamps so reruns diff clean.
pub fn render_files(record: &RunRecord, format: OutputFormat) -> Vec<OutputFile> {
    let stem = record.config.experiment.label();
    let mut files = Vec::new();

    let (rows_name, rows_content) = match record.config.experiment {
        ExperimentKind::RateRegion => match format {
            OutputFormat::Csv => (
                format!("{stem}_points.csv"),
                region_rows_csv(&record.region_rows),
            ),
            OutputFormat::Json => (
                format!("{stem}_points.json"),
                serde_json::to_string_pretty(&record.region_rows).expect("row serialization"),
            ),
        },
        _ => match format {
            OutputFormat::Csv => (
                format!("{stem}_trials.csv"),
                solve_rows_csv(&record.solve_rows),
            ),
            OutputFormat::Json => (
                format!("{stem}_trials.json"),
                serde_json::to_string_pretty(&record.solve_rows).expect("row serialization"),
            ),
        },
    };
    files.push(OutputFile {
        name: rows_name,
        content: rows_content,
    });

    if !record.trace_rows.is_empty() {
        files.push(OutputFile {
            name: format!("{stem}_traces.csv"),
            content: trace_rows_csv(&record.trace_rows),
        });
    }

    files.push(OutputFile {
        name: format!("{stem}_aggregate.csv"),
        content: aggregates_csv(&record.aggregates),
    });

    let meta = serde_json::json!({
        "experiment": stem,
        "config": record.config,
        "package_version": env!("CARGO_PKG_VERSION"),
        "git_hash": git_hash(),
        "seeds": record.seeds,
    });
    files.push(OutputFile {
        name: format!("{stem}_meta.json"),
        content: serde_json::to_string_pretty(&meta).expect("meta serialization"),
    });
    files
}

/// Writes rendered files into `out_dir`, creating it if needed.
pub fn write_files(files: &[OutputFile], out_dir: &std::path::Path) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    for f in files {
        std::fs::write(out_dir.join(&f.name), &f.content)?;
    }
    Ok(())
}

/// One-line-per-group summary for the terminal.
pub fn summarize(record: &RunRecord) -> String {
    let mut s = format!(
        "{}: {} rows\n",
        record.config.experiment.label(),
        record.solve_rows.len().max(record.region_rows.len())
    );
    for a in &record.aggregates {
        s.push_str(&format!(
            "  {}  rows={}  feasible={:.1}%  mean_wsr={:.4}  median_wsr={:.4}  mean_iters={:.1}\n",
            a.group, a.rows, a.feasible_pct, a.mean_wsr, a.median_wsr, a.mean_iterations
        ));
    }
    s
}
