//! Twelve end-to-end verdicts covering the solver stack: oracle agreement,
//! convergence and tightness properties of the relaxation loop, dominance
//! relations between transmission modes and precoder families, feasibility
//! and speed against the WMMSE baseline, and reproducibility of the
//! experiment harness.
//!
//! Runs as a plain binary (`harness = false`) so every criterion prints one
//! verdict line as it completes, expensive ensembles are shared between
//! criteria, and wall-clock limits are measured sequentially:
//!
//! ```text
//! acceptance 01 scalar-closed-form        pass     0.9s  wsr 5.658153 ...
//! ```
//!
//! The full suite takes on the order of an hour, dominated by the
//! user-count sweep of criterion 10. Set `FALCON_ACCEPTANCE_SMOKE=1` to run
//! the same logic on heavily shrunk ensembles as a quick plumbing check;
//! smoke verdicts are not authoritative (several criteria are statistical
//! and need the full sample sizes).

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write as _;
use std::time::Instant;

use falcon::analog::identity_analog;
use falcon::channel::ChannelSet;
use falcon::falcon::{run_falcon, FalconConfig, RsSolution, RunStatus};
use falcon::harness::{self, ExperimentConfig, ExperimentKind, RunRecord};
use falcon::oracle::{brute_force_wsr, GridAxis, GridSpec};
use falcon::rates::ProblemParams;
use falcon::wmmse::{init_point, run_wmmse, WmmseInitMethod};
use falcon::{C64, CVector};

type CheckResult = Result<String, String>;

fn estr(e: falcon::Error) -> String {
    e.to_string()
}

fn smoke() -> bool {
    std::env::var_os("FALCON_ACCEPTANCE_SMOKE").is_some()
}

#[derive(Default)]
struct Tester {
    failures: usize,
}

impl Tester {
    fn check<F: FnOnce() -> CheckResult>(&mut self, name: &str, f: F) {
        let started = Instant::now();
        let result = f();
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("acceptance {name:<26} pass {secs:7.1}s  {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("acceptance {name:<26} FAIL {secs:7.1}s  {detail}");
            }
        }
        std::io::stdout().flush().ok();
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Shared ensembles
// ---------------------------------------------------------------------------

/// Dense-array scenario used by the property criteria: 8 antennas, 4 users,
/// multicast floor 1.5 bps/Hz, 50 dBm budget over 30 dBm noise.
fn case_c_params() -> ProblemParams {
    harness::Scenario::default()
        .params(4)
        .expect("default scenario parameters are valid")
}

struct CaseRun {
    seed: u64,
    channels: ChannelSet,
    sol: RsSolution,
}

fn build_case_c_ensemble(count: u64) -> Result<Vec<CaseRun>, String> {
    let params = case_c_params();
    let analog = identity_analog(8);
    let mut runs = Vec::with_capacity(count as usize);
    for seed in 1..=count {
        let channels = ChannelSet::saleh_valenzuela(seed, 8, 4, harness::DEFAULT_PATHS)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let sol = run_falcon(&channels, &analog, &params, &FalconConfig::default())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        runs.push(CaseRun {
            seed,
            channels,
            sol,
        });
        if seed % 10 == 0 {
            eprintln!("  [ensemble] {seed}/{count} instances solved");
        }
    }
    Ok(runs)
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

/// 1: the single-user scalar instance has the closed-form optimum
/// log2(1 + P/σ²) − c0_min; the solver must land on it quickly.
fn crit01() -> CheckResult {
    let started = Instant::now();
    let h = CVector::from_element(1, C64::new(1.0, 0.0));
    let set = ChannelSet::from_vectors(vec![h]).map_err(estr)?;
    let params = ProblemParams {
        p_tx_mw: 100.0,
        sigma2_mw: 1.0,
        c0_min: 1.0,
        weights: vec![1.0],
    };
    let sol = run_falcon(&set, &identity_analog(1), &params, &FalconConfig::default())
        .map_err(estr)?;
    let want = 101f64.log2() - 1.0;
    let err = (sol.wsr - want).abs();
    let secs = started.elapsed().as_secs_f64();
    if sol.status != RunStatus::Converged {
        return Err(format!("status {:?}, expected Converged", sol.status));
    }
    if err > 1e-3 {
        return Err(format!(
            "wsr {:.6} vs closed form {want:.6} (err {err:.1e} > 1e-3)",
            sol.wsr
        ));
    }
    if secs > 5.0 {
        return Err(format!("took {secs:.1}s, limit 5s"));
    }
    Ok(format!(
        "wsr {:.6} vs log2(101)-1 (err {err:.1e} <= 1e-3) in {secs:.2}s",
        sol.wsr
    ))
}

/// 2: two orthogonal users against an exhaustive grid. The θ = π/2
/// phase-ramp pair over four antennas is orthogonal with per-user gain
/// ‖h‖² = 4; in the basis spanned by the two channels it becomes a pair of
/// axis-aligned effective channels of gain 2 over two chains. Under
/// orthogonality each private beam is optimal along its own user's axis, so
/// the grid only needs the two power fractions and the multicast direction
/// (multicast power is the budget remainder).
fn crit02() -> CheckResult {
    let g1 = CVector::from_iterator(2, [C64::new(2.0, 0.0), C64::new(0.0, 0.0)]);
    let g2 = CVector::from_iterator(2, [C64::new(0.0, 0.0), C64::new(2.0, 0.0)]);
    let set = ChannelSet::from_vectors(vec![g1, g2]).map_err(estr)?;
    let analog = identity_analog(2);
    let params = ProblemParams {
        p_tx_mw: 100.0,
        sigma2_mw: 1.0,
        c0_min: 0.5,
        weights: vec![1.0, 1.0],
    };
    let points = if smoke() { 40 } else { 200 };
    let grid = GridSpec {
        axes: vec![
            GridAxis::new("f_1", 0.0, 1.0, points),
            GridAxis::pinned("phi_1", 0.0),
            GridAxis::pinned("chi_1", 0.0),
            GridAxis::new("f_2", 0.0, 1.0, points),
            GridAxis::pinned("phi_2", FRAC_PI_2),
            GridAxis::pinned("chi_2", 0.0),
            GridAxis::new("phi_m", 0.0, FRAC_PI_2, points),
            GridAxis::pinned("chi_m", 0.0),
        ],
    };
    let t_oracle = Instant::now();
    let oracle = brute_force_wsr(&set, &analog, &params, &grid).map_err(estr)?;
    let oracle_secs = t_oracle.elapsed().as_secs_f64();
    let best = oracle.best.ok_or("no feasible grid point")?;

    let t_falcon = Instant::now();
    let sol = run_falcon(&set, &analog, &params, &FalconConfig::default()).map_err(estr)?;
    let falcon_secs = t_falcon.elapsed().as_secs_f64();

    let diff = (sol.wsr - best.wsr).abs();
    if diff > 1e-2 {
        return Err(format!(
            "falcon {:.4} vs grid {:.4} (diff {diff:.1e} > 1e-2)",
            sol.wsr, best.wsr
        ));
    }
    if oracle_secs > 600.0 {
        return Err(format!("oracle took {oracle_secs:.0}s, limit 600s"));
    }
    if falcon_secs > 10.0 {
        return Err(format!("solver took {falcon_secs:.1}s, limit 10s"));
    }
    Ok(format!(
        "falcon {:.4} vs {points}^3 grid {:.4} (diff {diff:.1e} <= 1e-2); oracle {oracle_secs:.0}s, solver {falcon_secs:.1}s",
        sol.wsr, best.wsr
    ))
}

/// 3: every relaxation trace is monotone non-decreasing up to 1e-8
/// relative, with no run erroring out.
fn crit03(ensemble: &Result<Vec<CaseRun>, String>) -> CheckResult {
    let runs = ensemble.as_ref().map_err(|e| format!("ensemble: {e}"))?;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_seed = 0;
    for run in runs {
        let trace = &run.sol.trace;
        for i in 1..trace.len() {
            let backstep = (trace[i - 1] - trace[i]) / (1.0 + trace[i - 1].abs());
            if backstep > worst {
                worst = backstep;
                worst_seed = run.seed;
            }
        }
    }
    if worst > 1e-8 {
        return Err(format!(
            "seed {worst_seed} trace steps back {worst:.1e} relative (> 1e-8)"
        ));
    }
    Ok(format!(
        "{}/{} traces monotone; worst relative backstep {worst:.1e} (seed {worst_seed})",
        runs.len(),
        runs.len()
    ))
}

/// 4: covariances come back (near) rank one on at least 95% of the
/// converged runs — the multicast matrix outright, the private matrices
/// rank-one-or-zero (a de-allocated user's matrix carries no power).
fn crit04(ensemble: &Result<Vec<CaseRun>, String>) -> CheckResult {
    let runs = ensemble.as_ref().map_err(|e| format!("ensemble: {e}"))?;
    let p_tx = case_c_params().p_tx_mw;
    let optimal: Vec<&CaseRun> = runs
        .iter()
        .filter(|r| r.sol.status == RunStatus::Converged)
        .collect();
    if optimal.is_empty() {
        return Err("no converged runs in the ensemble".into());
    }
    let mut m_ok = 0usize;
    let mut b_ok = 0usize;
    for run in &optimal {
        if run.sol.rank_residuals[0] <= 1e-5 {
            m_ok += 1;
        }
        let rel = run
            .sol
            .final_relaxation
            .as_ref()
            .ok_or_else(|| format!("seed {}: converged without final state", run.seed))?;
        let all_users = rel.b_mats.iter().enumerate().all(|(k, bm)| {
            run.sol.rank_residuals[1 + k] <= 1e-5 || bm.norm() <= 1e-8 * p_tx
        });
        if all_users {
            b_ok += 1;
        }
    }
    let m_frac = m_ok as f64 / optimal.len() as f64;
    let b_frac = b_ok as f64 / optimal.len() as f64;
    if m_frac < 0.95 || b_frac < 0.95 {
        return Err(format!(
            "rank-one fractions over {} converged runs: multicast {m_frac:.2}, private {b_frac:.2} (need >= 0.95)",
            optimal.len()
        ));
    }
    Ok(format!(
        "multicast {m_ok}/{} and private {b_ok}/{} rank-one at 1e-5 ({} runs converged)",
        optimal.len(),
        optimal.len(),
        optimal.len()
    ))
}

/// 5: at termination the private-slot power link is active (received
/// interference-plus-noise equals the slot variable) and the multipliers
/// sit at their contraction fixed point.
fn crit05(ensemble: &Result<Vec<CaseRun>, String>) -> CheckResult {
    let runs = ensemble.as_ref().map_err(|e| format!("ensemble: {e}"))?;
    let sigma2 = case_c_params().sigma2_mw;
    let mut worst_act = 0.0f64;
    let mut worst_alpha = 0.0f64;
    for run in runs {
        if run.sol.status != RunStatus::Converged {
            return Err(format!(
                "seed {} ended {:?}; activity is asserted at optimal points",
                run.seed, run.sol.status
            ));
        }
        let rel = run
            .sol
            .final_relaxation
            .as_ref()
            .ok_or_else(|| format!("seed {}: missing final state", run.seed))?;
        for k in 0..run.channels.k_users() {
            let gk = run.channels.channel(k);
            let mut cross = 0.0;
            for (j, bj) in rel.b_mats.iter().enumerate() {
                if j != k {
                    cross += (gk.adjoint() * bj * gk)[(0, 0)].re;
                }
            }
            cross /= sigma2;
            let t = run.sol.aux.t[k];
            let activity = (t - 1.0 - cross).abs() / t;
            let alpha_gap =
                (run.sol.alpha[k] - t / run.sol.aux.r[k]).abs() / run.sol.alpha[k];
            worst_act = worst_act.max(activity);
            worst_alpha = worst_alpha.max(alpha_gap);
            if activity > 1e-5 {
                return Err(format!(
                    "seed {} user {k}: slot link slack {activity:.1e} relative (> 1e-5)",
                    run.seed
                ));
            }
            if alpha_gap > 1e-4 {
                return Err(format!(
                    "seed {} user {k}: |alpha - t/r| = {alpha_gap:.1e}·alpha (> 1e-4)",
                    run.seed
                ));
            }
        }
    }
    Ok(format!(
        "{} runs: worst slot-link slack {worst_act:.1e} (<= 1e-5), worst multiplier gap {worst_alpha:.1e} (<= 1e-4)",
        runs.len()
    ))
}

/// Key for matching rate-region rows across modes/precoders at one weight
/// point despite f64 fields.
fn region_key(theta: f64, mu1: f64) -> (u64, u64) {
    (theta.to_bits(), mu1.to_bits())
}

/// 6: rate splitting dominates plain layering at every swept weight pair,
/// for every channel angle and precoder family, within 1e-3.
fn crit06(region: &Result<RunRecord, String>, sweep_secs: f64) -> CheckResult {
    let record = region.as_ref().map_err(|e| format!("region sweep: {e}"))?;
    let mut by_point: BTreeMap<((u64, u64), String), (Option<f64>, Option<f64>)> =
        BTreeMap::new();
    for row in &record.region_rows {
        let entry = by_point
            .entry((region_key(row.theta, row.mu1), row.precoder.clone()))
            .or_default();
        match row.mode.as_str() {
            "rs" => entry.0 = Some(row.wsr),
            _ => entry.1 = Some(row.wsr),
        }
    }
    let mut min_margin = f64::INFINITY;
    let mut compared = 0usize;
    for ((_, precoder), (rs, ldm)) in &by_point {
        let (rs, ldm) = match (rs, ldm) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(format!("missing mode row for precoder {precoder}")),
        };
        if !rs.is_finite() || !ldm.is_finite() {
            return Err(format!("non-finite wsr at precoder {precoder}"));
        }
        min_margin = min_margin.min(rs - ldm);
        compared += 1;
        if rs < ldm - 1e-3 {
            return Err(format!(
                "precoder {precoder}: rs {rs:.4} < ldm {ldm:.4} - 1e-3"
            ));
        }
    }
    if compared == 0 {
        return Err("no weight points compared".into());
    }
    if sweep_secs > 1800.0 {
        return Err(format!("sweep took {sweep_secs:.0}s, limit 1800s"));
    }
    Ok(format!(
        "{compared} (angle, precoder, weight) points: min(rs - ldm) = {min_margin:.1e} >= -1e-3; sweep {sweep_secs:.0}s"
    ))
}

/// 7: at θ = π/9 the 16-phase analog front end gives up at most 3% of the
/// fully-digital boundary at every weight point.
fn crit07(region: &Result<RunRecord, String>) -> CheckResult {
    let record = region.as_ref().map_err(|e| format!("region sweep: {e}"))?;
    let theta = PI / 9.0;
    let mut fd: BTreeMap<u64, f64> = BTreeMap::new();
    let mut pb: BTreeMap<u64, f64> = BTreeMap::new();
    for row in &record.region_rows {
        if row.theta.to_bits() != theta.to_bits() || row.mode != "rs" {
            continue;
        }
        match row.precoder.as_str() {
            "fd" => {
                fd.insert(row.mu1.to_bits(), row.wsr);
            }
            "pb16" => {
                pb.insert(row.mu1.to_bits(), row.wsr);
            }
            _ => {}
        }
    }
    if fd.is_empty() || fd.len() != pb.len() {
        return Err(format!(
            "row mismatch: {} digital vs {} hybrid weight points",
            fd.len(),
            pb.len()
        ));
    }
    let mut worst = f64::NEG_INFINITY;
    for (mu_bits, fd_wsr) in &fd {
        let pb_wsr = pb
            .get(mu_bits)
            .ok_or_else(|| format!("no hybrid row at mu1 {}", f64::from_bits(*mu_bits)))?;
        if !fd_wsr.is_finite() || !pb_wsr.is_finite() {
            return Err("non-finite wsr in the comparison".into());
        }
        let shortfall = (fd_wsr - pb_wsr) / fd_wsr;
        worst = worst.max(shortfall);
        if shortfall > 0.03 {
            return Err(format!(
                "at mu1 {:.3}: hybrid {pb_wsr:.4} trails digital {fd_wsr:.4} by {:.1}% (> 3%)",
                f64::from_bits(*mu_bits),
                shortfall * 100.0
            ));
        }
    }
    Ok(format!(
        "{} weight points: worst hybrid shortfall {:.2}% (<= 3%)",
        fd.len(),
        worst * 100.0
    ))
}

fn find_aggregate<'a>(
    record: &'a RunRecord,
    k: usize,
    method: &str,
    precoder: &str,
) -> Result<&'a harness::AggregateRow, String> {
    let group = format!("k={k},method={method},precoder={precoder}");
    record
        .aggregates
        .iter()
        .find(|a| a.group == group)
        .ok_or_else(|| format!("missing aggregate group {group}"))
}

/// 8: on the tight-floor two-user scenario the solver accepts at least 95%
/// of instances and never fewer than any WMMSE initialization.
fn crit08() -> CheckResult {
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Feasibility);
    cfg.scenario.n_tx = 4;
    cfg.scenario.k_users = 2;
    cfg.scenario.c0_min = 2.5;
    if smoke() {
        cfg.trials = 8;
        cfg.sweep.p_m0_list = vec![0.80, 0.99];
    }
    let trials = cfg.trials;
    let record = harness::run_experiment(&cfg).map_err(estr)?;
    let falcon_pct = find_aggregate(&record, 2, "falcon", "fd")?.feasible_pct;
    let mut worst_margin = f64::INFINITY;
    let mut baselines = 0usize;
    for agg in &record.aggregates {
        if let Some(rest) = agg.group.strip_prefix("k=2,method=wmmse-") {
            baselines += 1;
            worst_margin = worst_margin.min(falcon_pct - agg.feasible_pct);
            if falcon_pct < agg.feasible_pct {
                return Err(format!(
                    "falcon {falcon_pct:.1}% feasible < wmmse-{} {:.1}%",
                    rest.split(',').next().unwrap_or(rest),
                    agg.feasible_pct
                ));
            }
        }
    }
    if baselines == 0 {
        return Err("no baseline aggregates found".into());
    }
    if falcon_pct < 95.0 {
        return Err(format!(
            "falcon feasibility {falcon_pct:.1}% over {trials} trials (< 95%)"
        ));
    }
    Ok(format!(
        "falcon {falcon_pct:.1}% >= 95% over {trials} trials; beats all {baselines} baseline variants (min margin {worst_margin:.1} pts)"
    ))
}

/// 9: iteration counts — the relaxation loop needs few outer iterations
/// (median <= 20) and strictly fewer than the WMMSE baseline run to the
/// same increment threshold on the same channels. The baseline's starting
/// point does not support the multicast floor on every draw (that
/// fragility is its documented weakness), so its median is taken over the
/// seeds where it produces a run at all.
fn crit09(ensemble: &Result<Vec<CaseRun>, String>) -> CheckResult {
    let runs = ensemble.as_ref().map_err(|e| format!("ensemble: {e}"))?;
    let take = if smoke() { runs.len().min(4) } else { 20 };
    if runs.len() < take {
        return Err(format!("ensemble has only {} runs", runs.len()));
    }
    let falcon_iters: Vec<f64> = runs[..take]
        .iter()
        .map(|r| r.sol.iterations_used as f64)
        .collect();

    let params = case_c_params();
    let analog = identity_analog(8);
    // The baseline gets a generous cycle cap so its median reflects its own
    // convergence rather than a truncation artifact.
    let wmmse_cfg = FalconConfig {
        max_iters: 200,
        ..FalconConfig::default()
    };
    let mut wmmse_iters = Vec::with_capacity(take);
    let mut infeasible_starts = 0usize;
    for run in &runs[..take] {
        let init = init_point(
            &run.channels,
            &analog,
            WmmseInitMethod::Mrt,
            0.90,
            params.p_tx_mw,
            params.sigma2_mw,
        )
        .map_err(|e| format!("seed {}: {e}", run.seed))?;
        let sol = run_wmmse(&run.channels, &analog, &init, &params, &wmmse_cfg)
            .map_err(|e| format!("seed {}: {e}", run.seed))?;
        match sol.status {
            RunStatus::Converged | RunStatus::IterationCap => {
                wmmse_iters.push(sol.iterations_used as f64)
            }
            RunStatus::Infeasible => infeasible_starts += 1,
            other => return Err(format!("wmmse on seed {} ended {other:?}", run.seed)),
        }
    }
    if wmmse_iters.len() < take / 2 {
        return Err(format!(
            "baseline produced only {}/{take} runs; comparison would not be meaningful",
            wmmse_iters.len()
        ));
    }
    let fm = median(&falcon_iters);
    let wm = median(&wmmse_iters);
    if fm > 20.0 {
        return Err(format!("median falcon iterations {fm} > 20"));
    }
    if !(fm < wm) {
        return Err(format!(
            "median falcon iterations {fm} not strictly below wmmse {wm}"
        ));
    }
    Ok(format!(
        "median iterations: falcon {fm} over {take} seeds (<= 20), wmmse(mrt, 0.90) {wm} over its {} runs ({infeasible_starts} infeasible starts)",
        wmmse_iters.len()
    ))
}

/// 10: widening the analog bottleneck never hurts — per user count, mean
/// sum rate orders fully-digital >= phase-matched >= codebook.
fn crit10() -> CheckResult {
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::HybridCompare);
    if smoke() {
        cfg.trials = 2;
        cfg.sweep.k_list = vec![2, 3];
    }
    let trials = cfg.trials;
    let k_list = cfg.sweep.k_list.clone();
    let record = harness::run_experiment(&cfg).map_err(estr)?;
    let pb = format!("pb{}", cfg.sweep.hybrid_l_tx);
    let cb = format!("cb{}x{}", cfg.sweep.codebook_size, cfg.sweep.hybrid_l_tx);
    let mut parts = Vec::new();
    for &k in &k_list {
        let fd_mean = find_aggregate(&record, k, "falcon", "fd")?.mean_wsr;
        let pb_mean = find_aggregate(&record, k, "falcon", &pb)?.mean_wsr;
        let cb_mean = find_aggregate(&record, k, "falcon", &cb)?.mean_wsr;
        if !(fd_mean.is_finite() && pb_mean.is_finite() && cb_mean.is_finite()) {
            return Err(format!(
                "K={k}: non-finite means (fd {fd_mean}, pb {pb_mean}, cb {cb_mean})"
            ));
        }
        if !(fd_mean >= pb_mean && pb_mean >= cb_mean) {
            return Err(format!(
                "K={k}: ordering violated (fd {fd_mean:.3}, pb {pb_mean:.3}, cb {cb_mean:.3})"
            ));
        }
        parts.push(format!("K={k}: {fd_mean:.1}/{pb_mean:.1}/{cb_mean:.1}"));
    }
    Ok(format!(
        "mean wsr fd/pb/cb ordered over {trials} trials — {}",
        parts.join("; ")
    ))
}

/// Serializes everything a rerun must reproduce; timing fields zeroed.
fn fingerprint(record: &RunRecord) -> String {
    let mut solve = record.solve_rows.clone();
    for row in &mut solve {
        row.wall_ms = 0.0;
    }
    let mut aggregates = record.aggregates.clone();
    for agg in &mut aggregates {
        agg.mean_wall_ms = 0.0;
    }
    serde_json::to_string(&(
        solve,
        &record.region_rows,
        &record.trace_rows,
        aggregates,
        &record.seeds,
    ))
    .expect("rows serialize")
}

/// 11: reruns with an identical config reproduce every non-timing field
/// bit-exactly, across two different experiment types.
fn crit11() -> CheckResult {
    let mut feas = ExperimentConfig::default_for(ExperimentKind::Feasibility);
    feas.scenario.n_tx = 4;
    feas.scenario.k_users = 2;
    feas.scenario.c0_min = 2.5;
    feas.trials = 3;
    feas.sweep.p_m0_list = vec![0.80];
    let a = harness::run_experiment(&feas).map_err(estr)?;
    let b = harness::run_experiment(&feas).map_err(estr)?;
    if fingerprint(&a) != fingerprint(&b) {
        return Err("feasibility rerun differs in non-timing fields".into());
    }
    let rows_a = a.solve_rows.len();

    let conv = ExperimentConfig::default_for(ExperimentKind::Convergence);
    let c = harness::run_experiment(&conv).map_err(estr)?;
    let d = harness::run_experiment(&conv).map_err(estr)?;
    if fingerprint(&c) != fingerprint(&d) {
        return Err("convergence rerun differs in non-timing fields".into());
    }
    Ok(format!(
        "feasibility ({rows_a} rows) and convergence ({} trace points) reruns bit-identical",
        c.trace_rows.len()
    ))
}

/// 12: whenever the relaxation is tight (rank-one covariances), the
/// vector-level sum rate matches the relaxation objective.
fn crit12(ensemble: &Result<Vec<CaseRun>, String>) -> CheckResult {
    let runs = ensemble.as_ref().map_err(|e| format!("ensemble: {e}"))?;
    let mut candidates = 0usize;
    let mut worst = 0.0f64;
    let mut worst_seed = 0;
    for run in runs {
        if run.sol.status != RunStatus::Converged
            || !run.sol.rank_residuals.iter().all(|r| *r <= 1e-5)
        {
            continue;
        }
        candidates += 1;
        let bound = 1e-4 * (1.0 + run.sol.wsr);
        let normalized = run.sol.relaxation_gap / bound;
        if normalized > worst {
            worst = normalized;
            worst_seed = run.seed;
        }
        if run.sol.relaxation_gap > bound {
            return Err(format!(
                "seed {}: |wsr - relaxation| = {:.1e} > 1e-4·(1 + wsr) = {bound:.1e}",
                run.seed, run.sol.relaxation_gap
            ));
        }
    }
    if candidates == 0 {
        return Err("no tight converged runs to check".into());
    }
    Ok(format!(
        "{candidates} tight runs: worst gap at {:.2}x the 1e-4·(1+wsr) bound (seed {worst_seed})",
        worst
    ))
}

fn main() {
    let suite_start = Instant::now();
    if smoke() {
        println!("acceptance SMOKE MODE: shrunk ensembles, verdicts not authoritative");
    }
    let mut t = Tester::default();

    t.check("01 scalar-closed-form", crit01);
    t.check("02 two-user-oracle", crit02);

    let count = if smoke() { 6 } else { 50 };
    eprintln!("  [ensemble] solving {count} dense-array instances...");
    let ensemble = build_case_c_ensemble(count);

    t.check("03 monotone-traces", || crit03(&ensemble));
    t.check("04 rank-one-recovery", || crit04(&ensemble));
    t.check("05 fixed-point-tightness", || crit05(&ensemble));

    eprintln!("  [region] running the two-user rate-region sweep...");
    let region_start = Instant::now();
    let mut region_cfg = ExperimentConfig::default_for(ExperimentKind::RateRegion);
    if smoke() {
        region_cfg.sweep.weight_points = 7;
        region_cfg.sweep.l_tx_list = vec![16];
    }
    let region = harness::run_experiment(&region_cfg).map_err(estr);
    let region_secs = region_start.elapsed().as_secs_f64();

    t.check("06 rs-dominates-ldm", || crit06(&region, region_secs));
    t.check("07 hybrid-tracks-digital", || crit07(&region));

    eprintln!("  [feasibility] running the tight-floor feasibility battery...");
    t.check("08 feasibility-response", crit08);
    t.check("09 iteration-counts", || crit09(&ensemble));

    eprintln!("  [hybrid] running the user-count sweep (the long one)...");
    t.check("10 precoder-ordering", crit10);
    t.check("11 rerun-determinism", crit11);
    t.check("12 relaxation-consistency", || crit12(&ensemble));

    let total = suite_start.elapsed().as_secs_f64();
    if t.failures == 0 {
        println!("acceptance: 12/12 criteria passed in {:.0}s", total);
    } else {
        println!(
            "acceptance: {}/12 criteria FAILED in {:.0}s",
            t.failures, total
        );
        std::process::exit(1);
    }
}
