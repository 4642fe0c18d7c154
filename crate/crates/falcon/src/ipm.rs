//! Log-barrier interior-point core.
//!
//! A purpose-built solver for the convex programs this crate generates:
//! smooth objectives and inequality constraints over real variables, some of
//! which are vectorized Hermitian positive-definite matrix blocks. Both the
//! per-iteration precoder-covariance subproblem and the WMMSE precoder step
//! reduce to this standard form:
//!
//! ```text
//! minimize    c·x + Σ_m qc_m (v_m·x)² + Σ_d qd_d x_d² − Σ_j w_j ln x_{l_j}
//! subject to  f_i(x) ≤ 0           (linear / convex-quadratic / linear-minus-log)
//!             x_d ≥ lb_d           (selected coordinates)
//!             mat(x, block) ≻ 0    (Hermitian blocks, -ln det barrier)
//! ```
//!
//! The solver follows the classical barrier path: minimize
//! `τ f0(x) + Σ −ln(−f_i) + Σ −ln(x_d − lb_d) + Σ −ln det H_b` by damped
//! Newton, multiply `τ` by a fixed factor, repeat until the barrier
//! duality-gap estimate `ν/τ` clears the requested relative tolerance.
//!
//! Hermitian blocks are vectorized in an orthonormal real basis (diagonal
//! entries first, then `√2·Re` / `√2·Im` of each upper-triangle entry), so
//! `Tr(G H) = gvec(G)·hvec(H)` and Euclidean geometry matches trace
//! geometry. The det-barrier needs no factorization gymnastics: its gradient
//! is `−gvec(H⁻¹)`, its Hessian acts as `U ↦ H⁻¹ U H⁻¹`, and — the property
//! the fast path is built on — its Hessian *inverse* acts as `V ↦ H V H` in
//! closed form.
//!
//! Newton systems are solved two ways:
//!
//! - **structured**: when the objective has no rank-one curvature and every
//!   quadratic constraint carries only diagonal curvature, the barrier
//!   Hessian is `D + Σ_i (1/f_i²) g_i g_iᵀ` with `D` block-diagonal
//!   (positive scalars + det-barrier blocks). The step comes from the
//!   Sherman–Morrison–Woodbury identity with a capacitance system scaled to
//!   `I + Ĝᵀ D⁻¹ Ĝ` for conditioning; an explicit residual check guards the
//!   algebra.
//! - **dense**: assemble the full Hessian and Cholesky-factor it, with
//!   escalating diagonal jitter. Used for the WMMSE step (dense curvature by
//!   construction), as the fallback when the structured path is ineligible
//!   or its residual check fails, and for any variable lacking strictly
//!   positive diagonal curvature.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{C64, CMatrix};

pub(crate) const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Sparse real vector: `(index, value)` pairs, indices strictly increasing.
pub(crate) type SpVec = Vec<(usize, f64)>;

#[inline]
pub(crate) fn sp_dot(sp: &SpVec, x: &[f64]) -> f64 {
    sp.iter().map(|&(i, v)| v * x[i]).sum()
}

#[inline]
fn sp_axpy(sp: &SpVec, coef: f64, out: &mut [f64]) {
    for &(i, v) in sp {
        out[i] += coef * v;
    }
}

/// `Σ_m coef_m (v_m·x)² + Σ_d diag_d x_d² + lin·x + constant`.
///
/// All `coef_m` and `diag_d` must be nonnegative so the form is convex.
#[derive(Debug, Clone, Default)]
pub(crate) struct QuadForm {
    pub rank_terms: Vec<(f64, SpVec)>,
    pub diag: Vec<(usize, f64)>,
    pub lin: SpVec,
    pub constant: f64,
}

impl QuadForm {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant + sp_dot(&self.lin, x);
        for &(c, ref t) in &self.rank_terms {
            let d = sp_dot(t, x);
            v += c * d * d;
        }
        for &(i, d) in &self.diag {
            v += d * x[i] * x[i];
        }
        v
    }

    /// Adds `coef · ∇q(x)` into `out`.
    fn add_gradient(&self, x: &[f64], coef: f64, out: &mut [f64]) {
        sp_axpy(&self.lin, coef, out);
        for &(c, ref t) in &self.rank_terms {
            let d = sp_dot(t, x);
            sp_axpy(t, coef * 2.0 * c * d, out);
        }
        for &(i, d) in &self.diag {
            out[i] += coef * 2.0 * d * x[i];
        }
    }
}

/// One inequality constraint `f(x) ≤ 0`.
#[derive(Debug, Clone)]
pub(crate) enum Constraint {
    /// `lin·x + constant ≤ 0`.
    Linear { lin: SpVec, constant: f64 },
    /// Convex quadratic form `q(x) ≤ 0`.
    Quadratic(QuadForm),
    /// `lin·x + constant − log_coef·ln(x_log) ≤ 0` with `log_coef > 0`;
    /// requires `x_log > 0`.
    LinearMinusLog {
        lin: SpVec,
        constant: f64,
        log_idx: usize,
        log_coef: f64,
    },
}

impl Constraint {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::Linear { lin, constant } => sp_dot(lin, x) + constant,
            Constraint::Quadratic(q) => q.value(x),
            Constraint::LinearMinusLog {
                lin,
                constant,
                log_idx,
                log_coef,
            } => sp_dot(lin, x) + constant - log_coef * x[*log_idx].ln(),
        }
    }

    fn domain_ok(&self, x: &[f64]) -> bool {
        match self {
            Constraint::LinearMinusLog { log_idx, .. } => x[*log_idx] > 0.0,
            _ => true,
        }
    }

    /// Adds `coef · ∇f(x)` into `out`.
    fn add_gradient(&self, x: &[f64], coef: f64, out: &mut [f64]) {
        match self {
            Constraint::Linear { lin, .. } => sp_axpy(lin, coef, out),
            Constraint::Quadratic(q) => q.add_gradient(x, coef, out),
            Constraint::LinearMinusLog {
                lin,
                log_idx,
                log_coef,
                ..
            } => {
                sp_axpy(lin, coef, out);
                out[*log_idx] -= coef * log_coef / x[*log_idx];
            }
        }
    }

    /// Diagonal of `∇²f(x)` (exact for this constraint family unless the
    /// quadratic carries rank terms, which the structured path rejects).
    fn add_curvature_diag(&self, x: &[f64], coef: f64, out: &mut [f64]) {
        match self {
            Constraint::Linear { .. } => {}
            Constraint::Quadratic(q) => {
                for &(i, d) in &q.diag {
                    out[i] += coef * 2.0 * d;
                }
            }
            Constraint::LinearMinusLog {
                log_idx, log_coef, ..
            } => {
                out[*log_idx] += coef * log_coef / (x[*log_idx] * x[*log_idx]);
            }
        }
    }

    fn has_rank_curvature(&self) -> bool {
        matches!(self, Constraint::Quadratic(q) if !q.rank_terms.is_empty())
    }

    /// Self-concordance parameter credited to this constraint's barrier.
    fn nu(&self) -> f64 {
        match self {
            Constraint::Linear { .. } => 1.0,
            Constraint::Quadratic(_) | Constraint::LinearMinusLog { .. } => 2.0,
        }
    }
}

/// Smooth objective `c·x + quad − Σ w_j ln x_{l_j} + constant`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Objective {
    pub lin: Vec<f64>,
    pub rank_terms: Vec<(f64, SpVec)>,
    pub diag: Vec<(usize, f64)>,
    /// `(index, weight)`: contributes `−weight·ln x_index`, weight > 0.
    pub neg_logs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Objective {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for (i, c) in self.lin.iter().enumerate() {
            v += c * x[i];
        }
        for &(c, ref t) in &self.rank_terms {
            let d = sp_dot(t, x);
            v += c * d * d;
        }
        for &(i, d) in &self.diag {
            v += d * x[i] * x[i];
        }
        for &(i, w) in &self.neg_logs {
            v -= w * x[i].ln();
        }
        v
    }

    fn domain_ok(&self, x: &[f64]) -> bool {
        self.neg_logs.iter().all(|&(i, _)| x[i] > 0.0)
    }

    fn add_gradient(&self, x: &[f64], coef: f64, out: &mut [f64]) {
        for (i, c) in self.lin.iter().enumerate() {
            out[i] += coef * c;
        }
        for &(c, ref t) in &self.rank_terms {
            let d = sp_dot(t, x);
            sp_axpy(t, coef * 2.0 * c * d, out);
        }
        for &(i, d) in &self.diag {
            out[i] += coef * 2.0 * d * x[i];
        }
        for &(i, w) in &self.neg_logs {
            out[i] -= coef * w / x[i];
        }
    }

    fn add_curvature_diag(&self, x: &[f64], coef: f64, out: &mut [f64]) {
        for &(i, d) in &self.diag {
            out[i] += coef * 2.0 * d;
        }
        for &(i, w) in &self.neg_logs {
            out[i] += coef * w / (x[i] * x[i]);
        }
    }
}

/// A Hermitian PD matrix block living in `x[offset .. offset + n²]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatrixBlock {
    pub offset: usize,
    pub n: usize,
}

/// Lower bound `x_idx ≥ lower`, enforced through `−ln(x_idx − lower)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundLower {
    pub idx: usize,
    pub lower: f64,
}

/// A complete barrier problem instance.
#[derive(Debug, Clone, Default)]
pub(crate) struct BarrierProblem {
    pub nvars: usize,
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<BoundLower>,
    pub blocks: Vec<MatrixBlock>,
}

impl BarrierProblem {
    /// Total self-concordance parameter of the combined barrier.
    fn nu_total(&self) -> f64 {
        let mut nu = 0.0;
        for c in &self.constraints {
            nu += c.nu();
        }
        nu += self.bounds.len() as f64;
        for b in &self.blocks {
            nu += b.n as f64;
        }
        nu
    }

    /// Structured Newton algebra applies: block-diagonal `D` plus one
    /// rank-one term per constraint.
    fn structured_eligible(&self) -> bool {
        self.objective.rank_terms.is_empty()
            && self.constraints.iter().all(|c| !c.has_rank_curvature())
    }

}

/// Solver knobs. `gap_tol` is relative: iteration stops once
/// `ν/τ ≤ gap_tol·(1 + |f0|)`.
pub(crate) struct SolveOptions<'a> {
    pub tau0: f64,
    pub tau_factor: f64,
    pub gap_tol: f64,
    pub max_stages: usize,
    pub max_newton_per_stage: usize,
    /// Checked after every accepted Newton step; returning true ends the
    /// solve immediately (used by feasibility phase I to stop as soon as a
    /// strictly feasible point emerges).
    pub early_exit: Option<&'a dyn Fn(&[f64]) -> bool>,
}

impl Default for SolveOptions<'_> {
    fn default() -> Self {
        SolveOptions {
            tau0: 1.0,
            tau_factor: 10.0,
            gap_tol: 1e-7,
            max_stages: 80,
            max_newton_per_stage: 60,
            early_exit: None,
        }
    }
}

/// Result of a barrier solve.
#[derive(Debug, Clone)]
pub(crate) struct BarrierSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Final `ν/τ` duality-gap estimate over `1 + |objective|` — the
    /// reported KKT residual.
    pub kkt_residual: f64,
    pub converged: bool,
    pub newton_steps: usize,
}

#[derive(Debug)]
pub(crate) enum IpmError {
    /// The supplied start point is not strictly interior.
    StartNotInterior(String),
    /// Factorization/line-search breakdown past all fallbacks.
    Numerical(String),
}

impl std::fmt::Display for IpmError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IpmError::StartNotInterior(m) => write!(f, "start not strictly interior: {m}"),
            IpmError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Hermitian vectorization
// ---------------------------------------------------------------------------

/// Position of upper-triangle pair `(i, j)`, `i < j`, in the off-diagonal
/// section of the vectorized basis.
#[inline]
fn pair_pos(i: usize, j: usize) -> usize {
    j * (j - 1) / 2 + i
}

/// Writes the orthonormal-basis coordinates of Hermitian `h` into `out`
/// (length `n²`): diagonal first, then `√2·Re h_ij, √2·Im h_ij` per `i < j`.
pub(crate) fn mat_to_hvec(h: &CMatrix, out: &mut [f64]) {
    let n = h.nrows();
    for d in 0..n {
        out[d] = h[(d, d)].re;
    }
    for j in 1..n {
        for i in 0..j {
            let p = n + 2 * pair_pos(i, j);
            out[p] = SQRT2 * h[(i, j)].re;
            out[p + 1] = SQRT2 * h[(i, j)].im;
        }
    }
}

/// Inverse of [`mat_to_hvec`].
pub(crate) fn hvec_to_mat(x: &[f64], n: usize) -> CMatrix {
    let mut h = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for d in 0..n {
        h[(d, d)] = C64::new(x[d], 0.0);
    }
    for j in 1..n {
        for i in 0..j {
            let p = n + 2 * pair_pos(i, j);
            let v = C64::new(x[p] / SQRT2, x[p + 1] / SQRT2);
            h[(i, j)] = v;
            h[(j, i)] = v.conj();
        }
    }
    h
}

/// Coefficient vector of the linear functional `H ↦ Re Tr(G H)` in the same
/// basis, offset into a larger variable vector: `Tr(G·mat(x)) = Σ out·x`.
pub(crate) fn gvec_coeffs(g: &CMatrix, offset: usize) -> SpVec {
    let n = g.nrows();
    let mut out = Vec::with_capacity(n * n);
    let mut buf = vec![0.0; n * n];
    mat_to_hvec(g, &mut buf);
    for (i, v) in buf.iter().enumerate() {
        if *v != 0.0 {
            out.push((offset + i, *v));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Evaluation state
// ---------------------------------------------------------------------------

/// Everything the Newton iteration needs at a strictly interior point.
struct EvalState {
    fvals: Vec<f64>,
    /// Per-block Cholesky of the (PD) reconstructed matrices.
    chols: Vec<Cholesky<C64, Dyn>>,
    /// Barrier value `τ f0 + Σ −ln(−f) + Σ −ln(x−lb) + Σ −ln det`.
    psi: f64,
    f0: f64,
}

fn evaluate(prob: &BarrierProblem, tau: f64, x: &[f64]) -> Option<EvalState> {
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if !prob.objective.domain_ok(x) {
        return None;
    }
    for c in &prob.constraints {
        if !c.domain_ok(x) {
            return None;
        }
    }
    let f0 = prob.objective.value(x);
    let mut psi = tau * f0;
    let mut fvals = Vec::with_capacity(prob.constraints.len());
    for c in &prob.constraints {
        let f = c.value(x);
        if !(f < 0.0) {
            return None;
        }
        fvals.push(f);
        psi -= (-f).ln();
    }
    for b in &prob.bounds {
        let s = x[b.idx] - b.lower;
        if !(s > 0.0) {
            return None;
        }
        psi -= s.ln();
    }
    let mut chols = Vec::with_capacity(prob.blocks.len());
    for blk in &prob.blocks {
        let h = hvec_to_mat(&x[blk.offset..blk.offset + blk.n * blk.n], blk.n);
        let chol = Cholesky::new(h)?;
        let mut lndet = 0.0;
        for d in 0..blk.n {
            let l = chol.l_dirty()[(d, d)].re;
            if !(l > 0.0) {
                return None;
            }
            lndet += l.ln();
        }
        psi -= 2.0 * lndet;
        chols.push(chol);
    }
    if !psi.is_finite() {
        return None;
    }
    Some(EvalState {
        fvals,
        chols,
        psi,
        f0,
    })
}

// ---------------------------------------------------------------------------
// Newton step computation
// ---------------------------------------------------------------------------

/// Gradient of the barrier `ψ_τ` at `x`, plus per-block inverses (needed by
/// both the gradient and the structured Hessian actions).
fn barrier_gradient(
    prob: &BarrierProblem,
    tau: f64,
    x: &[f64],
    state: &EvalState,
) -> (Vec<f64>, Vec<CMatrix>) {
    let mut g = vec![0.0; prob.nvars];
    prob.objective.add_gradient(x, tau, &mut g);
    for (c, &f) in prob.constraints.iter().zip(&state.fvals) {
        c.add_gradient(x, 1.0 / (-f), &mut g);
    }
    for b in &prob.bounds {
        g[b.idx] -= 1.0 / (x[b.idx] - b.lower);
    }
    let mut invs = Vec::with_capacity(prob.blocks.len());
    for (blk, chol) in prob.blocks.iter().zip(&state.chols) {
        let hinv = chol.inverse();
        let mut buf = vec![0.0; blk.n * blk.n];
        mat_to_hvec(&hinv, &mut buf);
        for (i, v) in buf.iter().enumerate() {
            g[blk.offset + i] -= v;
        }
        invs.push(hinv);
    }
    (g, invs)
}

/// Scalar diagonal `D` of the structured Hessian: objective curvature plus
/// per-constraint diagonal curvature plus bound barriers. Matrix-block
/// coordinates are left at zero (their curvature lives in the det-barrier
/// blocks handled separately).
fn structured_diag(prob: &BarrierProblem, tau: f64, x: &[f64], state: &EvalState) -> Vec<f64> {
    let mut d = vec![0.0; prob.nvars];
    prob.objective.add_curvature_diag(x, tau, &mut d);
    for (c, &f) in prob.constraints.iter().zip(&state.fvals) {
        c.add_curvature_diag(x, 1.0 / (-f), &mut d);
    }
    for b in &prob.bounds {
        let s = x[b.idx] - b.lower;
        d[b.idx] += 1.0 / (s * s);
    }
    d
}

/// Applies `D⁻¹` (scalar diagonal inverse + closed-form det-barrier block
/// inverse `V ↦ H V H`) to `v`.
fn apply_dinv(
    prob: &BarrierProblem,
    diag: &[f64],
    blocks_h: &[CMatrix],
    in_block: &[bool],
    v: &[f64],
    out: &mut [f64],
) {
    for i in 0..prob.nvars {
        if !in_block[i] {
            out[i] = v[i] / diag[i];
        }
    }
    for (blk, h) in prob.blocks.iter().zip(blocks_h) {
        let slice = &v[blk.offset..blk.offset + blk.n * blk.n];
        let vm = hvec_to_mat(slice, blk.n);
        let res = h * vm * h;
        mat_to_hvec(&res, &mut out[blk.offset..blk.offset + blk.n * blk.n]);
    }
}

/// Applies the forward structured Hessian `D + Σ w_i g_i g_iᵀ` to `v`
/// (for the residual check). `blocks_hinv` are the current block inverses.
#[allow(clippy::too_many_arguments)]
fn apply_hessian(
    prob: &BarrierProblem,
    diag: &[f64],
    blocks_hinv: &[CMatrix],
    in_block: &[bool],
    rank_vecs: &[Vec<f64>],
    rank_w: &[f64],
    v: &[f64],
    out: &mut [f64],
) {
    for i in 0..prob.nvars {
        out[i] = if in_block[i] { 0.0 } else { diag[i] * v[i] };
    }
    for (blk, hinv) in prob.blocks.iter().zip(blocks_hinv) {
        let slice = &v[blk.offset..blk.offset + blk.n * blk.n];
        let vm = hvec_to_mat(slice, blk.n);
        let res = hinv * vm * hinv;
        mat_to_hvec(&res, &mut out[blk.offset..blk.offset + blk.n * blk.n]);
    }
    for (gv, &w) in rank_vecs.iter().zip(rank_w) {
        let dot: f64 = gv.iter().zip(v).map(|(a, b)| a * b).sum();
        let coef = w * dot;
        for (o, a) in out.iter_mut().zip(gv) {
            *o += coef * a;
        }
    }
}

/// Structured Newton step via Sherman–Morrison–Woodbury. Returns `None`
/// if the algebra is not applicable at this point (nonpositive diagonal,
/// capacitance breakdown, or residual check failure) — caller falls back to
/// the dense path.
fn newton_step_structured(
    prob: &BarrierProblem,
    tau: f64,
    x: &[f64],
    state: &EvalState,
    grad: &[f64],
    blocks_hinv: &[CMatrix],
    in_block: &[bool],
) -> Option<Vec<f64>> {
    let n = prob.nvars;
    let diag = structured_diag(prob, tau, x, state);
    for i in 0..n {
        if !in_block[i] && !(diag[i] > 1e-300) {
            return None;
        }
    }
    // Block values H themselves (inverse of the det-barrier Hessian needs H,
    // the forward action needs H⁻¹ — reconstruct H from x).
    let blocks_h: Vec<CMatrix> = prob
        .blocks
        .iter()
        .map(|blk| hvec_to_mat(&x[blk.offset..blk.offset + blk.n * blk.n], blk.n))
        .collect();

    // Scaled rank-one vectors ĝ_i = ∇f_i / |f_i| and their weights (all 1
    // after scaling): H = D + Σ ĝ ĝᵀ.
    let s = prob.constraints.len();
    let mut ghat: Vec<Vec<f64>> = Vec::with_capacity(s);
    for (c, &f) in prob.constraints.iter().zip(&state.fvals) {
        let mut gv = vec![0.0; n];
        c.add_gradient(x, 1.0, &mut gv);
        let inv = 1.0 / (-f);
        for v in gv.iter_mut() {
            *v *= inv;
        }
        ghat.push(gv);
    }

    let mut u = vec![0.0; n];
    apply_dinv(prob, &diag, &blocks_h, in_block, grad, &mut u);
    let mut cap_cols: Vec<Vec<f64>> = Vec::with_capacity(s);
    for gv in &ghat {
        let mut col = vec![0.0; n];
        apply_dinv(prob, &diag, &blocks_h, in_block, gv, &mut col);
        cap_cols.push(col);
    }
    // Capacitance M = I + Ĝᵀ D⁻¹ Ĝ.
    let mut m = DMatrix::<f64>::identity(s, s);
    for i in 0..s {
        for j in i..s {
            let dot: f64 = ghat[i].iter().zip(&cap_cols[j]).map(|(a, b)| a * b).sum();
            m[(i, j)] += dot;
            if j != i {
                m[(j, i)] = m[(i, j)];
            }
        }
    }
    let chol = Cholesky::new(m)?;
    let rhs = DVector::from_iterator(
        s,
        ghat.iter()
            .map(|gv| gv.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()),
    );
    let y = chol.solve(&rhs);

    // Δ = −u + Σ y_i D⁻¹ ĝ_i.
    let mut delta = vec![0.0; n];
    for i in 0..n {
        delta[i] = -u[i];
    }
    for (col, yi) in cap_cols.iter().zip(y.iter()) {
        for (d, c) in delta.iter_mut().zip(col) {
            *d += yi * c;
        }
    }

    // Residual check ‖HΔ + g‖ ≤ η‖g‖ certifies the SMW algebra held up.
    let weights = vec![1.0; s];
    let mut resid = vec![0.0; n];
    apply_hessian(
        prob,
        &diag,
        blocks_hinv,
        in_block,
        &ghat,
        &weights,
        &delta,
        &mut resid,
    );
    let mut rnorm2 = 0.0;
    let mut gnorm2 = 0.0;
    for i in 0..n {
        let r = resid[i] + grad[i];
        rnorm2 += r * r;
        gnorm2 += grad[i] * grad[i];
    }
    if rnorm2.sqrt() > 1e-6 * (gnorm2.sqrt() + 1e-300) {
        return None;
    }
    Some(delta)
}

/// Dense Newton step: assemble the full barrier Hessian and factor it with
/// escalating jitter.
fn newton_step_dense(
    prob: &BarrierProblem,
    tau: f64,
    x: &[f64],
    state: &EvalState,
    grad: &[f64],
    blocks_hinv: &[CMatrix],
) -> Option<Vec<f64>> {
    let n = prob.nvars;
    let mut h = DMatrix::<f64>::zeros(n, n);
    // Scalar diagonal curvature (objective + constraints + bounds).
    let diag = structured_diag(prob, tau, x, state);
    for i in 0..n {
        h[(i, i)] += diag[i];
    }
    // Objective rank curvature.
    for &(c, ref t) in &prob.objective.rank_terms {
        add_sparse_outer(&mut h, t, tau * 2.0 * c);
    }
    // Constraint curvature: rank terms of quadratics, then the gradient
    // outer products of the log barriers.
    for (cons, &f) in prob.constraints.iter().zip(&state.fvals) {
        if let Constraint::Quadratic(q) = cons {
            for &(c, ref t) in &q.rank_terms {
                add_sparse_outer(&mut h, t, 2.0 * c / (-f));
            }
        }
        let mut gv = vec![0.0; n];
        cons.add_gradient(x, 1.0, &mut gv);
        let w = 1.0 / (f * f);
        for i in 0..n {
            if gv[i] == 0.0 {
                continue;
            }
            let wi = w * gv[i];
            for j in i..n {
                if gv[j] != 0.0 {
                    h[(i, j)] += wi * gv[j];
                }
            }
        }
    }
    // Det-barrier block Hessians, column by column through the action
    // U ↦ H⁻¹ U H⁻¹.
    for (blk, hinv) in prob.blocks.iter().zip(blocks_hinv) {
        let nb = blk.n * blk.n;
        let mut unit = vec![0.0; nb];
        let mut col = vec![0.0; nb];
        for a in 0..nb {
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[a] = 1.0;
            let um = hvec_to_mat(&unit, blk.n);
            let res = hinv * um * hinv;
            mat_to_hvec(&res, &mut col);
            for b in a..nb {
                h[(blk.offset + a, blk.offset + b)] += col[b];
            }
        }
    }
    // Mirror the upper triangle.
    for i in 0..n {
        for j in (i + 1)..n {
            h[(j, i)] = h[(i, j)];
        }
    }

    let scale = h.diagonal().iter().cloned().fold(0.0f64, f64::max).max(1.0);
    let g = DVector::from_column_slice(grad);
    let mut jitter = 0.0;
    for attempt in 0..7 {
        let mut hj = h.clone();
        if jitter > 0.0 {
            for i in 0..n {
                hj[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(hj) {
            let delta = -chol.solve(&g);
            return Some(delta.as_slice().to_vec());
        }
        jitter = scale * 1e-12 * 10f64.powi(attempt);
    }
    None
}

fn add_sparse_outer(h: &mut DMatrix<f64>, t: &SpVec, coef: f64) {
    for &(i, vi) in t {
        for &(j, vj) in t {
            if j >= i {
                h[(i, j)] += coef * vi * vj;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Main loop
// ---------------------------------------------------------------------------

/// Minimizes the barrier problem from a strictly interior start point.
pub(crate) fn minimize(
    prob: &BarrierProblem,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<BarrierSolution, IpmError> {
    assert_eq!(x0.len(), prob.nvars);
    let structured = prob.structured_eligible();
    let mut in_block = vec![false; prob.nvars];
    for blk in &prob.blocks {
        for i in 0..blk.n * blk.n {
            in_block[blk.offset + i] = true;
        }
    }
    let nu = prob.nu_total();
    let mut tau = opts.tau0.max(1e-6);
    let mut x = x0.to_vec();
    let mut state = evaluate(prob, tau, &x).ok_or_else(|| {
        IpmError::StartNotInterior(describe_violation(prob, x0))
    })?;
    let mut total_newton = 0usize;
    let mut converged = false;
    let mut stalled_stages = 0usize;

    'stages: for _stage in 0..opts.max_stages {
        let mut stage_stalled = false;
        for _step in 0..opts.max_newton_per_stage {
            let (grad, blocks_hinv) = barrier_gradient(prob, tau, &x, &state);
            let delta = if structured {
                newton_step_structured(prob, tau, &x, &state, &grad, &blocks_hinv, &in_block)
            } else {
                None
            };
            let delta = match delta {
                Some(d) => d,
                None => newton_step_dense(prob, tau, &x, &state, &grad, &blocks_hinv)
                    .ok_or_else(|| {
                        IpmError::Numerical("Hessian factorization failed beyond jitter".into())
                    })?,
            };
            let gd: f64 = grad.iter().zip(&delta).map(|(a, b)| a * b).sum();
            let lambda2 = -gd;
            if lambda2 <= 1e-16 {
                // Centered to machine precision (or direction lost meaning).
                break;
            }
            if lambda2 / 2.0 <= 1e-8 {
                break;
            }
            // Backtracking line search: strict feasibility, then Armijo.
            let mut t = 1.0;
            let mut accepted = false;
            let mut trial = vec![0.0; prob.nvars];
            while t >= 1e-14 {
                for i in 0..prob.nvars {
                    trial[i] = x[i] + t * delta[i];
                }
                if let Some(new_state) = evaluate(prob, tau, &trial) {
                    if new_state.psi <= state.psi + 0.2 * t * gd {
                        x.copy_from_slice(&trial);
                        state = new_state;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            total_newton += 1;
            if !accepted {
                if lambda2 > 1.0 {
                    return Err(IpmError::Numerical(
                        "line search stalled while far from centered".into(),
                    ));
                }
                stage_stalled = true;
                break;
            }
            if let Some(cb) = opts.early_exit {
                if cb(&x) {
                    converged = true;
                    break 'stages;
                }
            }
        }
        let gap = nu / tau;
        if gap <= opts.gap_tol * (1.0 + state.f0.abs()) {
            converged = true;
            break;
        }
        if stage_stalled {
            stalled_stages += 1;
            if stalled_stages >= 2 {
                break;
            }
        } else {
            stalled_stages = 0;
        }
        tau *= opts.tau_factor;
        state = evaluate(prob, tau, &x)
            .expect("accepted iterate must stay interior when only tau changes");
    }

    let f0 = state.f0;
    let gap = nu / tau;
    Ok(BarrierSolution {
        x,
        objective: f0,
        kkt_residual: gap / (1.0 + f0.abs()),
        converged,
        newton_steps: total_newton,
    })
}

/// Human-readable account of why a start point is not strictly interior.
fn describe_violation(prob: &BarrierProblem, x: &[f64]) -> String {
    if x.iter().any(|v| !v.is_finite()) {
        return "non-finite coordinate".into();
    }
    for (i, c) in prob.constraints.iter().enumerate() {
        if !c.domain_ok(x) {
            return format!("constraint {i}: log argument not positive");
        }
        let f = c.value(x);
        if !(f < 0.0) {
            return format!("constraint {i}: value {f:.3e} not negative");
        }
    }
    for b in &prob.bounds {
        if !(x[b.idx] > b.lower) {
            return format!("bound on x[{}]: {} ≤ {}", b.idx, x[b.idx], b.lower);
        }
    }
    for (bi, blk) in prob.blocks.iter().enumerate() {
        let h = hvec_to_mat(&x[blk.offset..blk.offset + blk.n * blk.n], blk.n);
        if Cholesky::new(h).is_none() {
            return format!("matrix block {bi} not positive definite");
        }
    }
    "objective log domain violated".into()
}
