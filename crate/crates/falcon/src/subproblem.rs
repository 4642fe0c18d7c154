//! The per-iteration convex program of the successive relaxation solver.
//!
//! The weighted sum-rate problem is lifted to precoder *covariances*: each
//! private precoder becomes a Hermitian PSD matrix `B_k`, the multicast
//! precoder becomes `M`, and every rate expression turns into traces against
//! the effective-channel Grams `G_k = g_k g_k^H`. Auxiliary scalars make the
//! SINR structure convex:
//!
//! - `t_k` — received power at user `k` on the private slot (all private
//!   streams plus noise), `q_k` — same on the common slot (before multicast
//!   cancellation);
//! - `r_k` — private SINR-plus-one proxy, `z_k` — common SINR-plus-one proxy;
//! - `c0, c_1..c_K` — the common-rate split.
//!
//! The only nonconvexity left after lifting, the bilinear products `r_k t_k`
//! and `z_k q_k`, is replaced by the arithmetic–geometric upper bound
//! `r t ≤ (α/2) r² + t²/(2α)` (tight exactly when `α = t/r`), giving for
//! fixed `(α_k, β_k)` the convex constraints
//!
//! ```text
//! (α_k/2) r_k² + t_k²/(2α_k) − t_k − Tr(G_k B_k)      ≤ 0     (private bound)
//! (β_k/2) z_k² + q_k²/(2β_k) − q_k − Tr(G_k M)        ≤ 0     (common bound)
//! Σ_{j≠k} Tr(G_k B_j) + σ̄² − t_k                      ≤ 0     (private-slot power)
//! Σ_j    Tr(G_k B_j) + σ̄² − q_k                       ≤ 0     (common-slot power)
//! c0 + Σ_j c_j − log2(z_k)                            ≤ 0     (decodability)
//! Tr(W M) + Σ_k Tr(W B_k)                             ≤ P̄     (radiated power)
//! ```
//!
//! plus bounds `c0 ≥ c0_min`, `c_k ≥ 0`, `r_k ≥ 1`, `z_k ≥ 1` and PSD
//! blocks, maximizing `Σ μ_k (c_k + log2 r_k)`. Everything is solved in
//! noise-normalized units (`σ̄² = 1`, `P̄ = p_tx/σ²`) and covariances are
//! rescaled on exit; the auxiliary scalars stay in normalized units since
//! the multiplier updates `α ← t/r`, `β ← q/z` consume them directly.
//!
//! In the no-split variant the common stream carries only the multicast
//! service: `c_k` and `c0` are eliminated (the decodability family becomes
//! the bound `z_k ≥ 2^{c0_min}`) and the objective keeps only the private
//! terms.
//!
//! Infeasible instances are detected by a phase-I solve that minimizes a
//! shared violation variable `s` added to every coupled constraint (bounds,
//! PSD cones, and the power budget stay hard); the solve exits early the
//! moment `s` dips clearly below zero and hands the point to the main solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analog::EffectiveChannels;
use crate::error::Error;
use crate::ipm::{
    self, BarrierProblem, BoundLower, Constraint, MatrixBlock, Objective, QuadForm, SolveOptions,
    SpVec,
};
use crate::rates::ProblemParams;
use crate::{C64, CMatrix, CVector, MAX_USERS};

const LN2: f64 = std::f64::consts::LN_2;

/// Data of one convex subproblem instance.
#[derive(Debug, Clone)]
pub struct SubproblemParams {
    /// Effective-channel Grams `G_k = g_k g_k^H`, one per user, `n_rf × n_rf`.
    pub grams: Vec<CMatrix>,
    /// `F^H F` — maps RF-chain covariances to radiated power.
    pub fgram: CMatrix,
    /// Noise power, milliwatts.
    pub sigma2_mw: f64,
    /// Power budget, milliwatts.
    pub p_tx_mw: f64,
    /// Per-user objective weights.
    pub weights: Vec<f64>,
    /// Multicast floor on the common rate, bits/s/Hz.
    pub c0_min: f64,
    /// Private-bound multipliers (one per user, positive).
    pub alpha: Vec<f64>,
    /// Common-bound multipliers (one per user, positive).
    pub beta: Vec<f64>,
    /// No-split variant: drop the common-rate split variables.
    pub ldm: bool,
}

impl SubproblemParams {
    /// Assembles an instance from effective channels and physical parameters.
    pub fn new(
        eff: &EffectiveChannels,
        params: &ProblemParams,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        ldm: bool,
    ) -> Self {
        let grams = eff.g.iter().map(|g| g * g.adjoint()).collect();
        SubproblemParams {
            grams,
            fgram: eff.fgram.clone(),
            sigma2_mw: params.sigma2_mw,
            p_tx_mw: params.p_tx_mw,
            weights: params.weights.clone(),
            c0_min: params.c0_min,
            alpha,
            beta,
            ldm,
        }
    }

    fn k_users(&self) -> usize {
        self.grams.len()
    }

    fn n_rf(&self) -> usize {
        self.fgram.nrows()
    }

    fn validate(&self) -> Result<(), Error> {
        let k = self.k_users();
        if k == 0 {
            return Err(Error::param("at least one user required"));
        }
        if k > MAX_USERS {
            return Err(Error::param(format!(
                "k_users = {k} exceeds the supported maximum {MAX_USERS}"
            )));
        }
        let n = self.n_rf();
        if n == 0 || self.fgram.ncols() != n {
            return Err(Error::param("fgram must be square and nonempty"));
        }
        if self.grams.iter().any(|g| g.nrows() != n || g.ncols() != n) {
            return Err(Error::param("every gram must be n_rf × n_rf"));
        }
        if self.weights.len() != k || self.alpha.len() != k || self.beta.len() != k {
            return Err(Error::param("weights, alpha, beta must have one entry per user"));
        }
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::param("weights must be positive and finite"));
        }
        if self
            .alpha
            .iter()
            .chain(&self.beta)
            .any(|a| !(*a > 0.0) || !a.is_finite())
        {
            return Err(Error::param("alpha and beta must be positive and finite"));
        }
        if !(self.sigma2_mw > 0.0) || !(self.p_tx_mw > 0.0) {
            return Err(Error::param("sigma2_mw and p_tx_mw must be positive"));
        }
        if !(self.c0_min >= 0.0) || !self.c0_min.is_finite() {
            return Err(Error::param("c0_min must be nonnegative and finite"));
        }
        Ok(())
    }
}

/// Termination status of one subproblem solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Converged to the requested KKT tolerance.
    Optimal,
    /// Phase I proved the instance has no feasible point.
    Infeasible,
    /// Stage/iteration caps hit before the tolerance; the point is feasible
    /// but `kkt_residual` reports how far the gap estimate remained.
    MaxIterations,
    /// Numerical breakdown past all retries.
    NumericalFailure,
}

/// Solution of one subproblem.
///
/// Covariances are in physical units (mW); the auxiliary scalars `r, t, z, q`
/// are in noise-normalized units, matching what the multiplier updates
/// `α ← t/r`, `β ← q/z` expect. For `Infeasible`/`NumericalFailure` only
/// `status` is meaningful.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    /// Private covariances `B_k`, physical scale.
    pub b_mats: Vec<CMatrix>,
    /// Multicast covariance `M`, physical scale.
    pub m_mat: CMatrix,
    /// Multicast-floor part of the common rate.
    pub c0: f64,
    /// Per-user common-rate split.
    pub c: Vec<f64>,
    /// Private SINR-plus-one proxies (normalized units).
    pub r: Vec<f64>,
    /// Private-slot received powers (normalized units).
    pub t: Vec<f64>,
    /// Common SINR-plus-one proxies (normalized units).
    pub z: Vec<f64>,
    /// Common-slot received powers (normalized units).
    pub q: Vec<f64>,
    /// Relaxation objective `Σ μ_k (c_k + log2 r_k)`.
    pub objective: f64,
    pub status: SolveStatus,
    /// Relative duality-gap estimate at exit.
    pub kkt_residual: f64,
    /// Newton steps spent (diagnostics).
    pub newton_steps: usize,
}

impl SubproblemSolution {
    /// Serializes the solution to JSON for debugging (complex entries as
    /// `[re, im]`).
    pub fn to_json(&self) -> String {
        let raw = RawSolution::from(self);
        serde_json::to_string(&raw).expect("solution serialization cannot fail")
    }

    fn empty(k: usize, n: usize, status: SolveStatus) -> Self {
        SubproblemSolution {
            b_mats: vec![DMatrix::from_element(n, n, C64::new(0.0, 0.0)); k],
            m_mat: DMatrix::from_element(n, n, C64::new(0.0, 0.0)),
            c0: 0.0,
            c: vec![0.0; k],
            r: vec![1.0; k],
            t: vec![1.0; k],
            z: vec![1.0; k],
            q: vec![1.0; k],
            objective: f64::NAN,
            status,
            kkt_residual: f64::NAN,
            newton_steps: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawSolution {
    b_mats: Vec<Vec<Vec<[f64; 2]>>>,
    m_mat: Vec<Vec<[f64; 2]>>,
    c0: f64,
    c: Vec<f64>,
    r: Vec<f64>,
    t: Vec<f64>,
    z: Vec<f64>,
    q: Vec<f64>,
    objective: f64,
    status: SolveStatus,
    kkt_residual: f64,
    newton_steps: usize,
}

fn mat_raw(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

impl From<&SubproblemSolution> for RawSolution {
    fn from(s: &SubproblemSolution) -> Self {
        RawSolution {
            b_mats: s.b_mats.iter().map(mat_raw).collect(),
            m_mat: mat_raw(&s.m_mat),
            c0: s.c0,
            c: s.c.clone(),
            r: s.r.clone(),
            t: s.t.clone(),
            z: s.z.clone(),
            q: s.q.clone(),
            objective: s.objective,
            status: s.status,
            kkt_residual: s.kkt_residual,
            newton_steps: s.newton_steps,
        }
    }
}

// ---------------------------------------------------------------------------
// Variable layout
// ---------------------------------------------------------------------------

/// Index map of the flattened variable vector. Scalars first (split
/// variables only in the rate-splitting variant), then the multicast block,
/// then one block per private covariance. Phase I appends the shared
/// violation variable at the end.
#[derive(Debug, Clone, Copy)]
struct Layout {
    k: usize,
    n: usize,
    ldm: bool,
}

impl Layout {
    fn c0(&self) -> usize {
        debug_assert!(!self.ldm);
        0
    }
    fn c(&self, k: usize) -> usize {
        debug_assert!(!self.ldm);
        1 + k
    }
    fn scalar_base(&self) -> usize {
        if self.ldm {
            0
        } else {
            1 + self.k
        }
    }
    fn r(&self, k: usize) -> usize {
        self.scalar_base() + k
    }
    fn t(&self, k: usize) -> usize {
        self.scalar_base() + self.k + k
    }
    fn z(&self, k: usize) -> usize {
        self.scalar_base() + 2 * self.k + k
    }
    fn q(&self, k: usize) -> usize {
        self.scalar_base() + 3 * self.k + k
    }
    fn m_off(&self) -> usize {
        self.scalar_base() + 4 * self.k
    }
    fn b_off(&self, k: usize) -> usize {
        self.m_off() + (1 + k) * self.n * self.n
    }
    fn nvars(&self) -> usize {
        self.m_off() + (1 + self.k) * self.n * self.n
    }
    /// Index of the phase-I violation variable.
    fn s_idx(&self) -> usize {
        self.nvars()
    }
}

// ---------------------------------------------------------------------------
// Problem assembly
// ---------------------------------------------------------------------------

/// Internal noise-normalized view of the instance.
struct Normalized {
    layout: Layout,
    /// `p_tx / σ²`.
    p_bar: f64,
    grams: Vec<CMatrix>,
    fgram: CMatrix,
    weights: Vec<f64>,
    c0_min: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// Lower bound on `z` (1 in the split variant, `2^{c0_min}` otherwise).
    z_floor: f64,
}

impl Normalized {
    fn new(p: &SubproblemParams) -> Self {
        let layout = Layout {
            k: p.k_users(),
            n: p.n_rf(),
            ldm: p.ldm,
        };
        let z_floor = if p.ldm {
            2f64.powf(p.c0_min).max(1.0)
        } else {
            1.0
        };
        Normalized {
            layout,
            p_bar: p.p_tx_mw / p.sigma2_mw,
            grams: p.grams.clone(),
            fgram: p.fgram.clone(),
            weights: p.weights.clone(),
            c0_min: p.c0_min,
            alpha: p.alpha.clone(),
            beta: p.beta.clone(),
            z_floor,
        }
    }

    /// Builds the barrier problem; with `phase1` the coupled constraints get
    /// `−s` and the objective becomes `min s`.
    fn build(&self, phase1: bool) -> BarrierProblem {
        let lay = self.layout;
        let k_users = lay.k;
        let nvars = if phase1 { lay.nvars() + 1 } else { lay.nvars() };
        let s_term = |lin: &mut SpVec| {
            if phase1 {
                lin.push((lay.s_idx(), -1.0));
            }
        };

        let mut constraints = Vec::new();
        for k in 0..k_users {
            // Private bound: (α/2) r² + t²/(2α) − t − Tr(G_k B_k) ≤ 0.
            let mut lin: SpVec = vec![(lay.t(k), -1.0)];
            for (i, v) in ipm::gvec_coeffs(&self.grams[k], lay.b_off(k)) {
                lin.push((i, -v));
            }
            s_term(&mut lin);
            constraints.push(Constraint::Quadratic(QuadForm {
                rank_terms: vec![],
                diag: vec![
                    (lay.r(k), self.alpha[k] / 2.0),
                    (lay.t(k), 1.0 / (2.0 * self.alpha[k])),
                ],
                lin,
                constant: 0.0,
            }));

            // Common bound: (β/2) z² + q²/(2β) − q − Tr(G_k M) ≤ 0.
            let mut lin: SpVec = vec![(lay.q(k), -1.0)];
            for (i, v) in ipm::gvec_coeffs(&self.grams[k], lay.m_off()) {
                lin.push((i, -v));
            }
            s_term(&mut lin);
            constraints.push(Constraint::Quadratic(QuadForm {
                rank_terms: vec![],
                diag: vec![
                    (lay.z(k), self.beta[k] / 2.0),
                    (lay.q(k), 1.0 / (2.0 * self.beta[k])),
                ],
                lin,
                constant: 0.0,
            }));

            // Private-slot power: Σ_{j≠k} Tr(G_k B_j) + 1 − t_k ≤ 0.
            let mut lin: SpVec = vec![(lay.t(k), -1.0)];
            for j in 0..k_users {
                if j != k {
                    lin.extend(ipm::gvec_coeffs(&self.grams[k], lay.b_off(j)));
                }
            }
            s_term(&mut lin);
            constraints.push(Constraint::Linear {
                lin,
                constant: 1.0,
            });

            // Common-slot power: Σ_j Tr(G_k B_j) + 1 − q_k ≤ 0.
            let mut lin: SpVec = vec![(lay.q(k), -1.0)];
            for j in 0..k_users {
                lin.extend(ipm::gvec_coeffs(&self.grams[k], lay.b_off(j)));
            }
            s_term(&mut lin);
            constraints.push(Constraint::Linear {
                lin,
                constant: 1.0,
            });

            // Decodability: c0 + Σ c_j − log2 z_k ≤ 0 (split variant only;
            // eliminated into the z floor otherwise).
            if !lay.ldm {
                let mut lin: SpVec = vec![(lay.c0(), 1.0)];
                for j in 0..k_users {
                    lin.push((lay.c(j), 1.0));
                }
                s_term(&mut lin);
                constraints.push(Constraint::LinearMinusLog {
                    lin,
                    constant: 0.0,
                    log_idx: lay.z(k),
                    log_coef: 1.0 / LN2,
                });
            }
        }

        // Radiated power: Tr(W M) + Σ Tr(W B_k) ≤ P̄ (kept hard in phase I —
        // the trivial start satisfies it, and feasibility questions are about
        // rates *under* the budget).
        let mut lin = ipm::gvec_coeffs(&self.fgram, lay.m_off());
        for k in 0..k_users {
            lin.extend(ipm::gvec_coeffs(&self.fgram, lay.b_off(k)));
        }
        constraints.push(Constraint::Linear {
            lin,
            constant: -self.p_bar,
        });

        let mut bounds = Vec::new();
        if !lay.ldm {
            bounds.push(BoundLower {
                idx: lay.c0(),
                lower: self.c0_min,
            });
            for k in 0..k_users {
                bounds.push(BoundLower {
                    idx: lay.c(k),
                    lower: 0.0,
                });
            }
        }
        for k in 0..k_users {
            bounds.push(BoundLower {
                idx: lay.r(k),
                lower: 1.0,
            });
            bounds.push(BoundLower {
                idx: lay.z(k),
                lower: self.z_floor,
            });
        }
        if phase1 {
            // The violation variable needs curvature and a floor; feasible
            // instances early-exit far above it.
            bounds.push(BoundLower {
                idx: lay.s_idx(),
                lower: -10.0 * self.p_bar.max(1.0),
            });
        }

        let n = lay.n;
        let mut blocks = vec![MatrixBlock {
            offset: lay.m_off(),
            n,
        }];
        for k in 0..k_users {
            blocks.push(MatrixBlock {
                offset: lay.b_off(k),
                n,
            });
        }

        let objective = if phase1 {
            let mut lin = vec![0.0; nvars];
            lin[lay.s_idx()] = 1.0;
            Objective {
                lin,
                ..Default::default()
            }
        } else {
            // Minimize −Σ μ_k (c_k + log2 r_k).
            let mut lin = vec![0.0; nvars];
            let mut neg_logs = Vec::with_capacity(k_users);
            for k in 0..k_users {
                if !lay.ldm {
                    lin[lay.c(k)] = -self.weights[k];
                }
                neg_logs.push((lay.r(k), self.weights[k] / LN2));
            }
            Objective {
                lin,
                neg_logs,
                ..Default::default()
            }
        };

        BarrierProblem {
            nvars,
            objective,
            constraints,
            bounds,
            blocks,
        }
    }

    /// Received-power sums at candidate covariances: per user, the private
    /// interference `Σ_{j≠k} Tr(G_k B_j)`, own signal `Tr(G_k B_k)`, and
    /// multicast signal `Tr(G_k M)`.
    fn powers(&self, b: &[CMatrix], m: &CMatrix) -> Vec<(f64, f64, f64)> {
        (0..self.layout.k)
            .map(|k| {
                let own = tr_herm(&self.grams[k], &b[k]);
                let mut cross = 0.0;
                for (j, bj) in b.iter().enumerate() {
                    if j != k {
                        cross += tr_herm(&self.grams[k], bj);
                    }
                }
                let mc = tr_herm(&self.grams[k], m);
                (cross, own, mc)
            })
            .collect()
    }

    fn radiated(&self, b: &[CMatrix], m: &CMatrix) -> f64 {
        let mut p = tr_herm(&self.fgram, m);
        for bk in b {
            p += tr_herm(&self.fgram, bk);
        }
        p
    }

    /// Packs covariances and auxiliary scalars into a flat vector for the
    /// split variant layouts (phase II).
    fn pack(
        &self,
        b: &[CMatrix],
        m: &CMatrix,
        c0: f64,
        c: &[f64],
        r: &[f64],
        t: &[f64],
        z: &[f64],
        q: &[f64],
    ) -> Vec<f64> {
        let lay = self.layout;
        let mut x = vec![0.0; lay.nvars()];
        if !lay.ldm {
            x[lay.c0()] = c0;
            for k in 0..lay.k {
                x[lay.c(k)] = c[k];
            }
        }
        for k in 0..lay.k {
            x[lay.r(k)] = r[k];
            x[lay.t(k)] = t[k];
            x[lay.z(k)] = z[k];
            x[lay.q(k)] = q[k];
        }
        let n = lay.n;
        ipm::mat_to_hvec(m, &mut x[lay.m_off()..lay.m_off() + n * n]);
        for k in 0..lay.k {
            ipm::mat_to_hvec(&b[k], &mut x[lay.b_off(k)..lay.b_off(k) + n * n]);
        }
        x
    }

    /// Builds a strictly interior start from candidate covariances by
    /// reconstructing every auxiliary scalar with explicit margins. Returns
    /// `None` when the candidate cannot be made interior this way.
    fn interior_from_covariances(&self, b: &[CMatrix], m: &CMatrix) -> Option<Vec<f64>> {
        let lay = self.layout;
        if self.radiated(b, m) >= self.p_bar * (1.0 - 1e-9) {
            return None;
        }
        let pw = self.powers(b, m);
        let mut r = vec![0.0; lay.k];
        let mut t = vec![0.0; lay.k];
        let mut z = vec![0.0; lay.k];
        let mut q = vec![0.0; lay.k];
        let mut caps = vec![0.0; lay.k];
        for k in 0..lay.k {
            let (cross, own, mc) = pw[k];
            let alpha = self.alpha[k];
            let beta = self.beta[k];
            t[k] = (1.0 + cross) * (1.0 + 1e-4);
            q[k] = (1.0 + cross + own) * (1.0 + 1e-4);
            // Largest r with the private bound strictly slack:
            // (α/2) r² < t + own − t²/(2α).
            let head_r = t[k] + own - t[k] * t[k] / (2.0 * alpha);
            let r_max2 = 2.0 * head_r / alpha;
            if r_max2 <= 1.0 + 1e-9 {
                return None;
            }
            r[k] = (r_max2.sqrt() * (1.0 - 1e-7)).max(1.0 + 1e-9);
            let head_z = q[k] + mc - q[k] * q[k] / (2.0 * beta);
            let z_max2 = 2.0 * head_z / beta;
            let z_need = self.z_floor * (1.0 + 1e-9);
            if z_max2 <= z_need * z_need {
                return None;
            }
            z[k] = (z_max2.sqrt() * (1.0 - 1e-7)).max(z_need);
            caps[k] = z[k].log2();
        }
        let (c0, c) = if lay.ldm {
            (self.c0_min, vec![0.0; lay.k])
        } else {
            // Fit the split strictly inside the worst decodability cap.
            let cap = caps.iter().cloned().fold(f64::INFINITY, f64::min) * (1.0 - 1e-7);
            if cap <= self.c0_min + 1e-9 {
                return None;
            }
            let room = cap - self.c0_min;
            let c0 = self.c0_min + 1e-4 * room;
            let each = 0.5 * (cap - c0) / lay.k as f64;
            (c0, vec![each; lay.k])
        };
        Some(self.pack(b, m, c0, &c, &r, &t, &z, &q))
    }

    /// Cold start: multicast-heavy isotropic covariances, private power
    /// halved until the interior reconstruction succeeds.
    fn cold_start(&self) -> Option<Vec<f64>> {
        let lay = self.layout;
        let n = lay.n;
        let trw = self.fgram.trace().re.max(1e-12);
        let eye = DMatrix::from_diagonal_element(n, n, C64::new(1.0, 0.0));
        // 70% of the budget on the multicast stream, 20% split across the
        // private streams, 10% headroom.
        let m_scale = 0.7 * self.p_bar / trw;
        for attempt in 0..50 {
            let b_scale = 0.2 * self.p_bar / (trw * lay.k as f64) * 0.5f64.powi(attempt);
            let m = &eye * C64::new(m_scale, 0.0);
            let b: Vec<CMatrix> = (0..lay.k)
                .map(|_| &eye * C64::new(b_scale, 0.0))
                .collect();
            if let Some(x) = self.interior_from_covariances(&b, &m) {
                return Some(x);
            }
        }
        None
    }

    /// Warm start from a previous solution's covariances (physical units),
    /// slightly shrunk and regularized so the point is strictly interior
    /// under the *updated* multipliers.
    fn warm_start(&self, prev: &SubproblemSolution, sigma2: f64) -> Option<Vec<f64>> {
        let lay = self.layout;
        let n = lay.n;
        if prev.m_mat.nrows() != n || prev.b_mats.len() != lay.k {
            return None;
        }
        let eye = DMatrix::from_diagonal_element(n, n, C64::new(1.0, 0.0));
        for attempt in 0..6 {
            let shrink = 1.0 - 1e-3 * 10f64.powi(attempt);
            if shrink <= 0.0 {
                break;
            }
            let ridge = 1e-8 * self.p_bar.max(1.0) / n as f64;
            let m = prev.m_mat.map(|v| v * (shrink / sigma2)) + &eye * C64::new(ridge, 0.0);
            let b: Vec<CMatrix> = prev
                .b_mats
                .iter()
                .map(|bm| bm.map(|v| v * (shrink / sigma2)) + &eye * C64::new(ridge, 0.0))
                .collect();
            if let Some(x) = self.interior_from_covariances(&b, &m) {
                return Some(x);
            }
        }
        None
    }

    /// Phase-I start: tiny isotropic covariances, roomy scalars, violation
    /// variable above the worst constraint value.
    fn phase1_start(&self, prob: &BarrierProblem) -> Vec<f64> {
        let lay = self.layout;
        let n = lay.n;
        let trw = self.fgram.trace().re.max(1e-12);
        let eps = 1e-3 * self.p_bar / (trw * (lay.k + 1) as f64);
        let eye = DMatrix::from_diagonal_element(n, n, C64::new(eps, 0.0));
        let b: Vec<CMatrix> = (0..lay.k).map(|_| eye.clone()).collect();
        let c0 = self.c0_min + 1.0;
        let c = vec![1.0; lay.k];
        let r = vec![2.0; lay.k];
        let t = vec![2.0; lay.k];
        let z = vec![self.z_floor + 1.0; lay.k];
        let q = vec![2.0; lay.k];
        let mut x = self.pack(&b, &eye, c0, &c, &r, &t, &z, &q);
        x.push(0.0);
        // Place s strictly above every relaxed constraint value (the last
        // constraint is the hard power budget; the s coefficient makes the
        // relaxed ones self-referential, so evaluate with s = 0 first).
        let mut worst = f64::NEG_INFINITY;
        for (i, c) in prob.constraints.iter().enumerate() {
            // Hard power constraint sits last and has no s term.
            let _ = i;
            let v = constraint_value_at(c, &x);
            worst = worst.max(v);
        }
        x[lay.s_idx()] = worst + 1.0 + 0.1 * worst.abs();
        x
    }
}

fn constraint_value_at(c: &Constraint, x: &[f64]) -> f64 {
    // Constraint::value is private to the ipm module; replicate the tiny
    // evaluation here through the public pieces.
    match c {
        Constraint::Linear { lin, constant } => ipm::sp_dot(lin, x) + constant,
        Constraint::Quadratic(q) => {
            let mut v = q.constant + ipm::sp_dot(&q.lin, x);
            for &(cf, ref tv) in &q.rank_terms {
                let d = ipm::sp_dot(tv, x);
                v += cf * d * d;
            }
            for &(i, d) in &q.diag {
                v += d * x[i] * x[i];
            }
            v
        }
        Constraint::LinearMinusLog {
            lin,
            constant,
            log_idx,
            log_coef,
        } => ipm::sp_dot(lin, x) + constant - log_coef * x[*log_idx].ln(),
    }
}

#[inline]
fn tr_herm(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    s
}

// ---------------------------------------------------------------------------
// Solving
// ---------------------------------------------------------------------------

/// Solves one subproblem instance to relative KKT tolerance `tol`.
///
/// `warm` supplies a previous solution whose covariances seed the interior
/// start (margins are rebuilt for the updated multipliers). The fallback
/// chain is warm start → cold analytic start → phase-I feasibility solve;
/// phase I doubles as the infeasibility test.
pub fn solve(
    params: &SubproblemParams,
    tol: f64,
    warm: Option<&SubproblemSolution>,
) -> Result<SubproblemSolution, Error> {
    params.validate()?;
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::param("tol must be positive and finite"));
    }
    let norm = Normalized::new(params);
    let prob = norm.build(false);

    let mut start = warm
        .filter(|w| w.status == SolveStatus::Optimal || w.status == SolveStatus::MaxIterations)
        .and_then(|w| norm.warm_start(w, params.sigma2_mw));
    let warm_used = start.is_some();
    if start.is_none() {
        start = norm.cold_start();
    }
    let mut newton_total = 0usize;
    let start = match start {
        Some(x) => x,
        None => match feasibility_phase(&norm, &mut newton_total)? {
            Some(x) => x,
            None => {
                return Ok(SubproblemSolution::empty(
                    norm.layout.k,
                    norm.layout.n,
                    SolveStatus::Infeasible,
                ))
            }
        },
    };

    let opts = SolveOptions {
        tau0: if warm_used { 100.0 } else { 1.0 },
        gap_tol: tol,
        ..Default::default()
    };
    match ipm::minimize(&prob, &start, &opts) {
        Ok(sol) => {
            newton_total += sol.newton_steps;
            Ok(unpack(&norm, params, &sol.x, -sol.objective, sol.kkt_residual, newton_total, sol.converged))
        }
        Err(_first_failure) => {
            // One retry from a phase-I point: it both re-derives a clean
            // interior start and settles feasibility questions.
            match feasibility_phase(&norm, &mut newton_total)? {
                None => Ok(SubproblemSolution::empty(
                    norm.layout.k,
                    norm.layout.n,
                    SolveStatus::Infeasible,
                )),
                Some(x) => match ipm::minimize(&prob, &x, &opts) {
                    Ok(sol) => {
                        newton_total += sol.newton_steps;
                        Ok(unpack(
                            &norm,
                            params,
                            &sol.x,
                            -sol.objective,
                            sol.kkt_residual,
                            newton_total,
                            sol.converged,
                        ))
                    }
                    Err(_) => Ok(SubproblemSolution::empty(
                        norm.layout.k,
                        norm.layout.n,
                        SolveStatus::NumericalFailure,
                    )),
                },
            }
        }
    }
}

/// Runs phase I. Returns a strictly interior phase-II start, or `None` if
/// the instance is infeasible.
fn feasibility_phase(
    norm: &Normalized,
    newton_total: &mut usize,
) -> Result<Option<Vec<f64>>, Error> {
    let prob1 = norm.build(true);
    let x0 = norm.phase1_start(&prob1);
    let lay = norm.layout;
    let margin = 1e-4 * norm.p_bar.max(1.0);
    let early = move |x: &[f64]| x[lay.s_idx()] <= -margin;
    let opts = SolveOptions {
        tau0: 1.0,
        gap_tol: 1e-7,
        early_exit: Some(&early),
        ..Default::default()
    };
    let sol = ipm::minimize(&prob1, &x0, &opts)
        .map_err(|e| Error::numerical(format!("feasibility phase failed: {e}")))?;
    *newton_total += sol.newton_steps;
    let s_final = sol.x[lay.s_idx()];
    // A strictly interior phase-II point needs real negative margin on s;
    // anything above that is either provably infeasible or too borderline
    // to push through a barrier, and both report as infeasible.
    if s_final <= -1e-9 * norm.p_bar.max(1.0) {
        Ok(Some(sol.x[..lay.nvars()].to_vec()))
    } else {
        Ok(None)
    }
}

fn unpack(
    norm: &Normalized,
    params: &SubproblemParams,
    x: &[f64],
    objective: f64,
    kkt: f64,
    newton_steps: usize,
    converged: bool,
) -> SubproblemSolution {
    let lay = norm.layout;
    let n = lay.n;
    let sigma2 = params.sigma2_mw;
    let m_mat = ipm::hvec_to_mat(&x[lay.m_off()..lay.m_off() + n * n], n)
        .map(|v| v * sigma2);
    let b_mats: Vec<CMatrix> = (0..lay.k)
        .map(|k| {
            ipm::hvec_to_mat(&x[lay.b_off(k)..lay.b_off(k) + n * n], n).map(|v| v * sigma2)
        })
        .collect();
    let (c0, c) = if lay.ldm {
        (norm.c0_min, vec![0.0; lay.k])
    } else {
        (x[lay.c0()], (0..lay.k).map(|k| x[lay.c(k)]).collect())
    };
    SubproblemSolution {
        b_mats,
        m_mat,
        c0,
        c,
        r: (0..lay.k).map(|k| x[lay.r(k)]).collect(),
        t: (0..lay.k).map(|k| x[lay.t(k)]).collect(),
        z: (0..lay.k).map(|k| x[lay.z(k)]).collect(),
        q: (0..lay.k).map(|k| x[lay.q(k)]).collect(),
        objective,
        status: if converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIterations
        },
        kkt_residual: kkt,
        newton_steps,
    }
}

// ---------------------------------------------------------------------------
// Solution checking and extraction
// ---------------------------------------------------------------------------

/// Constraint slacks of a solution against its instance (positive =
/// satisfied with margin). All entries are in noise-normalized units.
#[derive(Debug, Clone)]
pub struct SlackReport {
    /// Private bound slack per user.
    pub private_bound: Vec<f64>,
    /// Common bound slack per user.
    pub common_bound: Vec<f64>,
    /// Private-slot power linking slack per user.
    pub private_power: Vec<f64>,
    /// Common-slot power linking slack per user.
    pub common_power: Vec<f64>,
    /// Decodability slack per user (split variant; `z` floor slack otherwise).
    pub decode: Vec<f64>,
    /// Radiated power slack.
    pub power: f64,
    /// All slacks within tolerance.
    pub pass: bool,
}

/// Evaluates all subproblem constraints at a solution.
pub fn check_feasible(
    sol: &SubproblemSolution,
    params: &SubproblemParams,
    tol: f64,
) -> Result<SlackReport, Error> {
    params.validate()?;
    let norm = Normalized::new(params);
    let lay = norm.layout;
    if sol.b_mats.len() != lay.k || sol.m_mat.nrows() != lay.n {
        return Err(Error::param("solution shape does not match instance"));
    }
    let sigma2 = params.sigma2_mw;
    let b: Vec<CMatrix> = sol.b_mats.iter().map(|m| m.map(|v| v / sigma2)).collect();
    let m = sol.m_mat.map(|v| v / sigma2);
    let pw = norm.powers(&b, &m);

    let mut private_bound = Vec::with_capacity(lay.k);
    let mut common_bound = Vec::with_capacity(lay.k);
    let mut private_power = Vec::with_capacity(lay.k);
    let mut common_power = Vec::with_capacity(lay.k);
    let mut decode = Vec::with_capacity(lay.k);
    for k in 0..lay.k {
        let (cross, own, mc) = pw[k];
        let (alpha, beta) = (norm.alpha[k], norm.beta[k]);
        let (r, t, z, q) = (sol.r[k], sol.t[k], sol.z[k], sol.q[k]);
        private_bound.push(own + t - (alpha / 2.0) * r * r - t * t / (2.0 * alpha));
        common_bound.push(mc + q - (beta / 2.0) * z * z - q * q / (2.0 * beta));
        private_power.push(t - cross - 1.0);
        common_power.push(q - cross - own - 1.0);
        if lay.ldm {
            decode.push(z - norm.z_floor);
        } else {
            decode.push(z.log2() - (sol.c0 + sol.c.iter().sum::<f64>()));
        }
    }
    let power = norm.p_bar - norm.radiated(&b, &m);

    let scale = norm.p_bar.max(1.0);
    let pass = power >= -tol * scale
        && private_bound.iter().all(|s| *s >= -tol * scale)
        && common_bound.iter().all(|s| *s >= -tol * scale)
        && private_power.iter().all(|s| *s >= -tol * scale)
        && common_power.iter().all(|s| *s >= -tol * scale)
        && decode.iter().all(|s| *s >= -tol * scale.log2().max(1.0))
        && sol.c0 >= norm.c0_min - tol
        && sol.c.iter().all(|v| *v >= -tol)
        && sol.r.iter().all(|v| *v >= 1.0 - tol)
        && sol.z.iter().all(|v| *v >= norm.z_floor.min(1.0) - tol);

    Ok(SlackReport {
        private_bound,
        common_bound,
        private_power,
        common_power,
        decode,
        power,
        pass,
    })
}

/// Splits a Hermitian PSD matrix into its dominant rank-one component.
///
/// Returns the scaled principal eigenvector `v = sqrt(λ1) u1` — phase-fixed
/// so the largest-magnitude entry is real nonnegative — and the residual
/// ratio `λ2/λ1` (0 for a matrix that is numerically zero).
pub fn extract_rank_one(h: &CMatrix) -> Result<(CVector, f64), Error> {
    let n = h.nrows();
    if h.ncols() != n || n == 0 {
        return Err(Error::param("matrix must be square and nonempty"));
    }
    let herm = (h + h.adjoint()).map(|v| v * 0.5);
    let scale = herm.trace().re.abs().max(herm.norm());
    if scale <= 1e-12 {
        return Ok((DVector::from_element(n, C64::new(0.0, 0.0)), 0.0));
    }
    let eig = herm.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues of a finite Hermitian matrix are finite")
    });
    let l1 = eig.eigenvalues[order[0]];
    if l1 <= 1e-12 * scale {
        return Ok((DVector::from_element(n, C64::new(0.0, 0.0)), 0.0));
    }
    let l2 = if n > 1 {
        eig.eigenvalues[order[1]].max(0.0)
    } else {
        0.0
    };
    let mut v: CVector = eig.eigenvectors.column(order[0]).into_owned();
    v *= C64::new(l1.sqrt(), 0.0);
    // Phase normalization: rotate so the largest-|entry| is real ≥ 0.
    let mut imax = 0;
    let mut best = -1.0;
    for (i, e) in v.iter().enumerate() {
        let a = e.norm();
        if a > best {
            best = a;
            imax = i;
        }
    }
    if best > 0.0 {
        let phase = v[imax] / C64::new(best, 0.0);
        v *= phase.conj();
    }
    Ok((v, l2 / l1))
}
