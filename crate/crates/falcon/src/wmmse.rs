//! Alternating-optimization baseline built on the rate–MMSE equivalence.
//!
//! For a scalar stream received as `y = h s + interference + noise`, the
//! weighted MSE `ξ = u·ε(w) − ln u` satisfies `min_{u,w} ξ = 1 − ln(1 +
//! SINR)`, with the minimum at the MMSE equalizer `w = h*/E|y|²` and weight
//! `u = 1/ε`. Each cycle therefore:
//!
//! 1. refits `w` (common stream first, decoded before the privates; private
//!    streams after common cancellation) and `u = 1/ε` in closed form;
//! 2. rewrites every rate as `(1 − ξ)/ln 2`, which at fixed `(u, w)` is a
//!    convex quadratic in the precoder entries, and solves the resulting
//!    program over the precoders and the common-rate split — quadratic
//!    objective and constraints, linear split variables, the power budget —
//!    with the shared interior-point core;
//! 3. logs the true achieved sum rate, which block-coordinate ascent makes
//!    non-decreasing across cycles.
//!
//! Initial points follow three unicast recipes (matched filter,
//! zero-forcing, leakage-regularized) plus a multicast beam along the
//! principal direction of the aggregate channel, with an explicit power
//! split; an initial point whose common stream cannot carry the multicast
//! floor reports `Infeasible` — exactly the failure mode the feasibility
//! experiments count.
//!
//! Everything runs noise-normalized (`σ̄² = 1`) like the relaxation solver;
//! precoders are rescaled on exit.

use serde::{Deserialize, Serialize};

use crate::analog::{effective_channels, AnalogPrecoder, EffectiveChannels};
use crate::channel::ChannelSet;
use crate::error::Error;
use crate::falcon::{AuxScalars, FalconConfig, RsMode, RsSolution, RunStatus};
use crate::ipm::{
    self, BarrierProblem, BoundLower, Constraint, Objective, QuadForm, SolveOptions, SpVec,
};
use crate::rates::{self, ProblemParams};
use crate::{C64, CMatrix, CVector};

const LN2: f64 = std::f64::consts::LN_2;

/// Unicast direction recipe for the initial point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WmmseInitMethod {
    /// Matched filter: `b_k ∝ g_k`.
    Mrt,
    /// Zero-forcing: columns of `G (G^H G)⁻¹`, killing cross-talk.
    Zf,
    /// Leakage-regularized: `b_k ∝ (Σ_{j≠k} g_j g_j^H + (σ²K/P)·I)⁻¹ g_k`.
    Slnr,
}

impl WmmseInitMethod {
    pub fn label(&self) -> &'static str {
        match self {
            WmmseInitMethod::Mrt => "mrt",
            WmmseInitMethod::Zf => "zf",
            WmmseInitMethod::Slnr => "slnr",
        }
    }
}

/// A fully materialized initial point (physical units).
#[derive(Debug, Clone)]
pub struct WmmseInit {
    pub method: WmmseInitMethod,
    /// Fraction of the power budget radiated by the multicast beam.
    pub p_m0_fraction: f64,
    pub m0: CVector,
    pub b0: Vec<CVector>,
}

/// Builds an initial point: multicast along the principal direction of the
/// aggregate effective channel, unicast directions per `method`, and the
/// power split `‖F m₀‖² = p_m0_fraction·P`, `‖F b₀_k‖² = (P − P_m)/K`.
pub fn init_point(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    method: WmmseInitMethod,
    p_m0_fraction: f64,
    p_tx_mw: f64,
    sigma2_mw: f64,
) -> Result<WmmseInit, Error> {
    if !(p_m0_fraction > 0.0 && p_m0_fraction < 1.0) {
        return Err(Error::param("p_m0_fraction must be inside (0, 1)"));
    }
    if !(p_tx_mw > 0.0) || !(sigma2_mw > 0.0) {
        return Err(Error::param("p_tx_mw and sigma2_mw must be positive"));
    }
    let eff = effective_channels(analog, channels)?;
    let k = channels.k_users();
    let n = eff.fgram.nrows();

    // Multicast direction: principal eigenvector of Σ g_k g_k^H (the
    // principal left singular direction of [g_1 … g_K]).
    let mut agg = CMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for g in &eff.g {
        agg += g * g.adjoint();
    }
    let (m_dir, _res) = crate::subproblem::extract_rank_one(&agg)?;
    if m_dir.norm() <= 0.0 {
        return Err(Error::numerical(
            "aggregate effective channel is zero; no multicast direction exists",
        ));
    }

    let b_dirs: Vec<CVector> = match method {
        WmmseInitMethod::Mrt => eff
            .g
            .iter()
            .map(|g| {
                let nn = g.norm();
                if nn <= 0.0 {
                    Err(Error::numerical(
                        "matched-filter init failed: a user has a zero effective channel",
                    ))
                } else {
                    Ok(g.map(|v| v / C64::new(nn, 0.0)))
                }
            })
            .collect::<Result<_, _>>()?,
        WmmseInitMethod::Zf => {
            if n < k {
                return Err(Error::numerical(
                    "zero-forcing init failed: fewer RF chains than users",
                ));
            }
            let a = CMatrix::from_fn(n, k, |i, j| eff.g[j][i]);
            let gram = a.adjoint() * &a;
            // Cholesky alone can slip past an exactly singular Gram on
            // rounding noise; gate on the eigenvalue spread first.
            let eigs = gram.clone().symmetric_eigenvalues();
            let lam_max = eigs.iter().fold(0.0f64, |m, v| m.max(*v));
            let lam_min = eigs.iter().fold(f64::INFINITY, |m, v| m.min(*v));
            if !(lam_min > 1e-12 * lam_max.max(1e-300)) {
                return Err(Error::numerical(
                    "zero-forcing init failed: effective channel matrix is rank-deficient",
                ));
            }
            let chol = gram.clone().cholesky().ok_or_else(|| {
                Error::numerical(
                    "zero-forcing init failed: effective channel matrix is rank-deficient",
                )
            })?;
            // Columns of A (A^H A)⁻¹, each normalized below.
            let inv = chol.inverse();
            let zf = &a * inv;
            (0..k)
                .map(|j| {
                    let col: CVector = zf.column(j).into_owned();
                    let nn = col.norm();
                    if nn <= 1e-150 {
                        Err(Error::numerical(
                            "zero-forcing init failed: effective channel matrix is rank-deficient",
                        ))
                    } else {
                        Ok(col.map(|v| v / C64::new(nn, 0.0)))
                    }
                })
                .collect::<Result<_, _>>()?
        }
        WmmseInitMethod::Slnr => {
            let reg = sigma2_mw * k as f64 / p_tx_mw;
            (0..k)
                .map(|kk| {
                    let mut x = CMatrix::from_diagonal_element(n, n, C64::new(reg, 0.0));
                    for (j, g) in eff.g.iter().enumerate() {
                        if j != kk {
                            x += g * g.adjoint();
                        }
                    }
                    let chol = x
                        .cholesky()
                        .ok_or_else(|| Error::numerical("leakage matrix is not positive definite"))?;
                    let v = chol.solve(&eff.g[kk]);
                    let nn = v.norm();
                    if nn <= 0.0 {
                        Err(Error::numerical(
                            "leakage-regularized init failed: a user has a zero effective channel",
                        ))
                    } else {
                        Ok(v.map(|e| e / C64::new(nn, 0.0)))
                    }
                })
                .collect::<Result<_, _>>()?
        }
    };

    // Power-scale: ‖F d‖² = d^H W d.
    let radiated = |d: &CVector| -> f64 {
        let wd = &eff.fgram * d;
        d.dotc(&wd).re
    };
    let p_m = p_m0_fraction * p_tx_mw;
    let p_u = (p_tx_mw - p_m) / k as f64;
    let scale_to = |d: &CVector, p: f64| -> Result<CVector, Error> {
        let r = radiated(d);
        if r <= 1e-300 {
            return Err(Error::numerical("direction radiates no power"));
        }
        Ok(d.map(|v| v * C64::new((p / r).sqrt(), 0.0)))
    };
    let m0 = scale_to(&m_dir, p_m)?;
    let b0 = b_dirs
        .iter()
        .map(|d| scale_to(d, p_u))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WmmseInit {
        method,
        p_m0_fraction,
        m0,
        b0,
    })
}

// ---------------------------------------------------------------------------
// The per-cycle convex program
// ---------------------------------------------------------------------------

/// Real-variable layout: `[C_0, C_1..C_K, re/im-interleaved b_1..b_K, m]`.
#[derive(Clone, Copy)]
struct QpLayout {
    k: usize,
    n: usize,
}

impl QpLayout {
    fn c0(&self) -> usize {
        0
    }
    fn c(&self, k: usize) -> usize {
        1 + k
    }
    /// Start of vector `v`: users `0..K−1`, multicast at `v = K`.
    fn vec_off(&self, v: usize) -> usize {
        1 + self.k + v * 2 * self.n
    }
    fn nvars(&self) -> usize {
        1 + self.k + (self.k + 1) * 2 * self.n
    }
}

/// `Re(g^H v)` as coefficients over the interleaved re/im layout of `v`.
fn re_coeffs(g: &CVector, off: usize) -> SpVec {
    let mut sp = Vec::with_capacity(2 * g.len());
    for (e, ge) in g.iter().enumerate() {
        sp.push((off + 2 * e, ge.re));
        sp.push((off + 2 * e + 1, ge.im));
    }
    sp
}

/// `Im(g^H v)` over the same layout.
fn im_coeffs(g: &CVector, off: usize) -> SpVec {
    let mut sp = Vec::with_capacity(2 * g.len());
    for (e, ge) in g.iter().enumerate() {
        sp.push((off + 2 * e, -ge.im));
        sp.push((off + 2 * e + 1, ge.re));
    }
    sp
}

/// Per-stream equalizer/weight state for one user.
#[derive(Clone)]
struct MmseState {
    w_c: C64,
    u_c: f64,
    w_p: C64,
    u_p: f64,
}

/// Closed-form equalizers and weights at the current beams (normalized
/// units). Common stream sees every private stream plus noise; private
/// streams see the other privates plus noise.
fn refit(eff: &EffectiveChannels, b: &[CVector], m: &CVector) -> Vec<MmseState> {
    eff.g
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut t_p = 1.0;
            let mut own = C64::new(0.0, 0.0);
            for (j, bj) in b.iter().enumerate() {
                let d = g.dotc(bj);
                t_p += d.norm_sqr();
                if j == k {
                    own = d;
                }
            }
            let h_c = g.dotc(m);
            let t_c = t_p + h_c.norm_sqr();
            let w_c = h_c.conj() / C64::new(t_c, 0.0);
            let e_c = 1.0 - h_c.norm_sqr() / t_c;
            let w_p = own.conj() / C64::new(t_p, 0.0);
            let e_p = 1.0 - own.norm_sqr() / t_p;
            MmseState {
                w_c,
                u_c: 1.0 / e_c,
                w_p,
                u_p: 1.0 / e_p,
            }
        })
        .collect()
}

/// Builds the precoder program at fixed equalizers/weights: minimize
/// `−Σ μ_k C_k + Σ (μ_k/ln2)·ξ_k^p` subject to per-user common
/// decodability, the power budget, and split bounds. The objective constant
/// is chosen so the optimal value is exactly minus the surrogate sum rate.
fn build_qp(
    lay: &QpLayout,
    eff: &EffectiveChannels,
    states: &[MmseState],
    weights: &[f64],
    c0_min: f64,
    p_bar: f64,
) -> Result<BarrierProblem, Error> {
    let k = lay.k;
    let nvars = lay.nvars();
    let mut objective = Objective {
        lin: vec![0.0; nvars],
        ..Default::default()
    };
    let mut constraints = Vec::with_capacity(k + 1);

    for (kk, st) in states.iter().enumerate() {
        let g = &eff.g[kk];
        let mu = weights[kk];

        // Objective: (μ/ln2)·ξ_k^p, with ξ^p = u[|w|²(Σ_j |g^H b_j|² + σ̄²)
        // − 2 Re(w g^H b_k) + 1] − ln u, and the −μ/ln2 rate constant.
        objective.lin[lay.c(kk)] = -mu;
        let u = st.u_p;
        let w2 = st.w_p.norm_sqr();
        for j in 0..k {
            let coef = mu * u * w2 / LN2;
            objective.rank_terms.push((coef, re_coeffs(g, lay.vec_off(j))));
            objective.rank_terms.push((coef, im_coeffs(g, lay.vec_off(j))));
        }
        // −2(μu/ln2)·Re(w · g^H b_k).
        let cw = -2.0 * mu * u / LN2;
        for (i, v) in re_coeffs(g, lay.vec_off(kk)) {
            objective.lin[i] += cw * st.w_p.re * v;
        }
        for (i, v) in im_coeffs(g, lay.vec_off(kk)) {
            objective.lin[i] += -cw * st.w_p.im * v;
        }
        objective.constant += mu / LN2 * (u * (w2 + 1.0) - u.ln() - 1.0);

        // Decodability: C_0 + Σ C_j + (ξ_k^c − 1)/ln2 ≤ 0.
        let uc = st.u_c;
        let wc2 = st.w_c.norm_sqr();
        let mut q = QuadForm {
            constant: (uc * (wc2 + 1.0) - uc.ln() - 1.0) / LN2,
            ..Default::default()
        };
        let mut lin: SpVec = vec![(lay.c0(), 1.0)];
        for j in 0..k {
            lin.push((lay.c(j), 1.0));
        }
        let cwc = -2.0 * uc / LN2;
        for (i, v) in re_coeffs(g, lay.vec_off(k)) {
            lin.push((i, cwc * st.w_c.re * v));
        }
        for (i, v) in im_coeffs(g, lay.vec_off(k)) {
            lin.push((i, -cwc * st.w_c.im * v));
        }
        q.lin = lin;
        let coef = uc * wc2 / LN2;
        for j in 0..=k {
            q.rank_terms.push((coef, re_coeffs(g, lay.vec_off(j))));
            q.rank_terms.push((coef, im_coeffs(g, lay.vec_off(j))));
        }
        constraints.push(Constraint::Quadratic(q));
    }

    // Power: Σ_v ‖L^H v‖² ≤ P̄ with W = L L^H.
    let chol = eff
        .fgram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("analog Gram is not positive definite"))?;
    let l = chol.l();
    let mut q = QuadForm {
        constant: -p_bar,
        ..Default::default()
    };
    for i in 0..lay.n {
        let li: CVector = l.column(i).into_owned();
        for v in 0..=k {
            q.rank_terms.push((1.0, re_coeffs(&li, lay.vec_off(v))));
            q.rank_terms.push((1.0, im_coeffs(&li, lay.vec_off(v))));
        }
    }
    constraints.push(Constraint::Quadratic(q));

    let mut bounds = vec![BoundLower {
        idx: lay.c0(),
        lower: c0_min,
    }];
    for kk in 0..k {
        bounds.push(BoundLower {
            idx: lay.c(kk),
            lower: 0.0,
        });
    }

    Ok(BarrierProblem {
        nvars,
        objective,
        constraints,
        bounds,
        blocks: vec![],
    })
}

fn pack(lay: &QpLayout, c0: f64, c: &[f64], b: &[CVector], m: &CVector) -> Vec<f64> {
    let mut x = vec![0.0; lay.nvars()];
    x[lay.c0()] = c0;
    for (kk, v) in c.iter().enumerate() {
        x[lay.c(kk)] = *v;
    }
    for (v, vec) in b.iter().chain(std::iter::once(m)).enumerate() {
        let off = lay.vec_off(v);
        for (e, val) in vec.iter().enumerate() {
            x[off + 2 * e] = val.re;
            x[off + 2 * e + 1] = val.im;
        }
    }
    x
}

fn unpack_vectors(lay: &QpLayout, x: &[f64]) -> (Vec<CVector>, CVector) {
    let read = |v: usize| -> CVector {
        let off = lay.vec_off(v);
        CVector::from_fn(lay.n, |e, _| C64::new(x[off + 2 * e], x[off + 2 * e + 1]))
    };
    ((0..lay.k).map(read).collect(), read(lay.k))
}

// ---------------------------------------------------------------------------
// The alternating loop
// ---------------------------------------------------------------------------

/// Runs the baseline from a materialized initial point. `config` supplies
/// the stop rule (`max_iters` cycles, increment `eps`) and the inner solver
/// tolerance; only the split formulation is supported.
pub fn run_wmmse(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    init: &WmmseInit,
    params: &ProblemParams,
    config: &FalconConfig,
) -> Result<RsSolution, Error> {
    let k = channels.k_users();
    params.validate(k)?;
    if config.mode == RsMode::Ldm {
        return Err(Error::param(
            "the alternating baseline optimizes the split formulation only",
        ));
    }
    if analog.n_tx() != channels.n_tx() {
        return Err(Error::param("analog precoder does not match the channels"));
    }
    let eff = effective_channels(analog, channels)?;
    let n = eff.fgram.nrows();
    if init.b0.len() != k || init.m0.len() != n || init.b0.iter().any(|b| b.len() != n) {
        return Err(Error::param("initial point does not match the instance"));
    }

    // Noise-normalized internal state.
    let sigma = params.sigma2_mw.sqrt();
    let p_bar = params.p_tx_mw / params.sigma2_mw;
    let mut b: Vec<CVector> = init.b0.iter().map(|v| v.map(|e| e / sigma)).collect();
    let mut m: CVector = init.m0.map(|e| e / sigma);

    // The initial point must already support the multicast floor. The
    // common rate is log2(1/ε_c) = log2(u_c).
    let states = refit(&eff, &b, &m);
    let cap0 = states
        .iter()
        .map(|s| s.u_c.ln() / LN2)
        .fold(f64::INFINITY, f64::min);
    if cap0 < params.c0_min {
        return Ok(RsSolution::empty(analog, k, RunStatus::Infeasible));
    }
    let avail = cap0 - params.c0_min;
    if avail <= 1e-9 * (1.0 + cap0.abs()) {
        // Exactly on the floor: no strict interior for the split exists.
        return Ok(RsSolution::empty(analog, k, RunStatus::NumericalFailure));
    }
    let mut c0 = params.c0_min + 0.05 * avail;
    let mut c = vec![0.45 * avail / k as f64; k];

    let lay = QpLayout { k, n };
    let mut trace: Vec<f64> = Vec::new();
    let mut status = RunStatus::IterationCap;
    let mut surrogate = f64::NAN;

    for cycle in 0..config.max_iters {
        let states = refit(&eff, &b, &m);
        let prob = build_qp(&lay, &eff, &states, &params.weights, params.c0_min, p_bar)?;

        // Strictly interior start: shrink beams off the power boundary and
        // keep the split safely under the (tight-at-refit) common cap.
        let power: f64 = {
            let mut p = m.dotc(&(&eff.fgram * &m)).re;
            for bk in &b {
                p += bk.dotc(&(&eff.fgram * bk)).re;
            }
            p
        };
        let target = p_bar * (1.0 - 1e-7);
        if power > target {
            let s = (target / power).sqrt();
            for bk in &mut b {
                *bk *= C64::new(s, 0.0);
            }
            m *= C64::new(s, 0.0);
        }
        let cap = states
            .iter()
            .map(|s| s.u_c.ln() / LN2)
            .fold(f64::INFINITY, f64::min);
        let total = c0 + c.iter().sum::<f64>();
        if total >= cap - 1e-12 * (1.0 + cap.abs()) || c0 <= params.c0_min || c.iter().any(|v| *v <= 0.0)
        {
            let avail = cap - params.c0_min;
            if avail <= 0.0 {
                status = RunStatus::NumericalFailure;
                break;
            }
            c0 = params.c0_min + 0.05 * avail;
            c = vec![0.45 * avail / k as f64; k];
        }
        let x0 = pack(&lay, c0, &c, &b, &m);

        let opts = SolveOptions {
            tau0: if cycle == 0 { 1.0 } else { 100.0 },
            gap_tol: config.subproblem_tol,
            ..Default::default()
        };
        let sol = match ipm::minimize(&prob, &x0, &opts) {
            Ok(s) => s,
            Err(_) => {
                status = RunStatus::NumericalFailure;
                break;
            }
        };
        let (nb, nm) = unpack_vectors(&lay, &sol.x);
        b = nb;
        m = nm;
        c0 = sol.x[lay.c0()];
        c = (0..k).map(|kk| sol.x[lay.c(kk)]).collect();
        surrogate = -sol.objective;

        // True achieved sum rate at the new point (C's are feasible for it:
        // the surrogate never overstates a rate).
        let wsr_now = {
            let states = refit(&eff, &b, &m);
            let mut wsr = 0.0;
            for kk in 0..k {
                let r_p = -(1.0 / states[kk].u_p).ln() / LN2;
                wsr += params.weights[kk] * (c[kk] + r_p);
            }
            wsr
        };
        trace.push(wsr_now);
        let nlen = trace.len();
        if nlen >= 2 && trace[nlen - 1] - trace[nlen - 2] < config.eps {
            status = RunStatus::Converged;
            break;
        }
    }

    if trace.is_empty() {
        return Ok(RsSolution::empty(analog, k, status));
    }

    // Rescale to physical units and assemble through the shared reporting
    // path so feasibility semantics match the other solver exactly.
    let b_phys: Vec<CVector> = b.iter().map(|v| v.map(|e| e * sigma)).collect();
    let m_phys: CVector = m.map(|e| e * sigma);
    let report = rates::rate_report(channels, analog, &b_phys, &m_phys, params.sigma2_mw)?;
    let cap = report.common_rate_cap;
    let c0_out = c0.max(params.c0_min).min(cap.max(params.c0_min));
    let sum_c: f64 = c.iter().sum();
    let avail_out = (cap - c0_out).max(0.0);
    let c_out: Vec<f64> = if sum_c > avail_out && sum_c > 0.0 {
        let f = avail_out / sum_c;
        c.iter().map(|v| v * f).collect()
    } else {
        c.clone()
    };
    let wsr = rates::wsr(&report, &c_out, &params.weights);
    let unicast_rate: Vec<f64> = (0..k).map(|i| c_out[i] + report.rate_private[i]).collect();
    let iterations_used = trace.len();
    Ok(RsSolution {
        analog: analog.clone(),
        b_vecs: b_phys,
        m_vec: m_phys,
        c0: c0_out,
        c: c_out,
        per_user_private_rate: report.rate_private.clone(),
        per_user_common_rate: report.rate_common.clone(),
        common_rate: cap,
        unicast_rate,
        wsr,
        trace,
        iterations_used,
        status,
        rank_residuals: vec![0.0; k + 1],
        relaxation_gap: (wsr - surrogate).abs(),
        rank_one_violation: false,
        alpha: vec![],
        beta: vec![],
        aux: AuxScalars::default(),
        final_relaxation: None,
    })
}
