//! Brute-force reference optimizers for tiny instances.
//!
//! These exist to validate the iterative solvers end to end, so they share
//! nothing with them: precoders are laid out on an explicit grid, rates are
//! evaluated directly from inner products, and the common-rate split is
//! resolved analytically at each point.
//!
//! Grid parameterization (instances up to `K = 2` users and `n_rf = 2`):
//! every beam is a power fraction times a unit direction,
//!
//! ```text
//! b = sqrt(f · P) · d / ‖F d‖,    d = [cos φ, sin φ · e^{jχ}]   (n_rf = 2)
//!                                 d = [1]                        (n_rf = 1)
//! ```
//!
//! with one `(f, φ, χ)` group per user in order, then `(φ, χ)` for the
//! multicast beam — axis names `f_1, phi_1, chi_1, …, phi_m, chi_m` (power
//! axes only when `n_rf = 1`). The multicast power fraction is not an axis:
//! it takes the remainder `1 − Σ f_k`, which is optimal because growing the
//! multicast beam raises every user's common SINR without interfering with
//! any private stream. Points whose fractions exceed the budget are skipped
//! as infeasible.
//!
//! At each grid point the split is resolved exactly: the common stream
//! carries `cap = min_k log2(1 + common SINR_k)`; the point is infeasible
//! when `cap` is below the multicast floor, and otherwise the floor is
//! pinned and the remaining common rate goes to the heaviest-weight user.

use std::io::Write as IoWrite;

use crate::analog::{effective_channels, AnalogPrecoder};
use crate::channel::ChannelSet;
use crate::error::Error;
use crate::rates::ProblemParams;
use crate::{C64, CVector};

/// One grid axis: `points` uniformly spaced values on `[lo, hi]`; a single
/// point pins the axis at `lo`.
#[derive(Debug, Clone)]
pub struct GridAxis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn new(name: &str, lo: f64, hi: f64, points: usize) -> Self {
        GridAxis {
            name: name.to_string(),
            lo,
            hi,
            points,
        }
    }

    /// Pinned axis: one point at `value`.
    pub fn pinned(name: &str, value: f64) -> Self {
        GridAxis::new(name, value, value, 1)
    }

    fn value(&self, idx: usize) -> f64 {
        if self.points == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * idx as f64 / (self.points - 1) as f64
        }
    }
}

/// A full precoder grid; axes must follow the canonical order for the
/// instance (see [`GridSpec::axis_names`]).
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

/// Hard cap on total grid size.
const MAX_GRID_POINTS: u128 = 100_000_000;

impl GridSpec {
    /// Canonical axis names for an instance: per user `f_k` (+ `phi_k`,
    /// `chi_k` when `n_rf = 2`), then `phi_m`, `chi_m` for the multicast
    /// beam.
    pub fn axis_names(k_users: usize, n_rf: usize) -> Vec<String> {
        let mut names = Vec::new();
        for k in 1..=k_users {
            names.push(format!("f_{k}"));
            if n_rf == 2 {
                names.push(format!("phi_{k}"));
                names.push(format!("chi_{k}"));
            }
        }
        if n_rf == 2 {
            names.push("phi_m".to_string());
            names.push("chi_m".to_string());
        }
        names
    }

    /// Uniform grid over the whole parameter space: power fractions on
    /// `[0, 1]`, `phi` on `[0, π/2]`, `chi` on `[0, 2π)` (endpoint dropped).
    pub fn uniform(k_users: usize, n_rf: usize, points: usize) -> Self {
        let axes = Self::axis_names(k_users, n_rf)
            .into_iter()
            .map(|name| {
                if name.starts_with("f_") {
                    GridAxis::new(&name, 0.0, 1.0, points)
                } else if name.starts_with("phi_") {
                    GridAxis::new(&name, 0.0, std::f64::consts::FRAC_PI_2, points)
                } else {
                    let hi = std::f64::consts::TAU * (points - 1) as f64 / points as f64;
                    GridAxis::new(&name, 0.0, hi, points)
                }
            })
            .collect();
        GridSpec { axes }
    }

    pub fn total_points(&self) -> u128 {
        self.axes.iter().map(|a| a.points as u128).product()
    }

    fn validate(&self, k_users: usize, n_rf: usize) -> Result<(), Error> {
        let names = Self::axis_names(k_users, n_rf);
        if self.axes.len() != names.len() {
            return Err(Error::param(format!(
                "grid needs {} axes ({}), got {}",
                names.len(),
                names.join(", "),
                self.axes.len()
            )));
        }
        for (axis, want) in self.axes.iter().zip(&names) {
            if &axis.name != want {
                return Err(Error::param(format!(
                    "axis name mismatch: expected {want}, got {}",
                    axis.name
                )));
            }
            if axis.points == 0 {
                return Err(Error::param(format!("axis {want} has zero points")));
            }
            if !(axis.lo.is_finite() && axis.hi.is_finite()) || axis.lo > axis.hi {
                return Err(Error::param(format!("axis {want} has a bad range")));
            }
        }
        if self.total_points() > MAX_GRID_POINTS {
            return Err(Error::param(format!(
                "grid has {} points, cap is {MAX_GRID_POINTS}",
                self.total_points()
            )));
        }
        Ok(())
    }
}

/// Best grid point found.
#[derive(Debug, Clone)]
pub struct BestPoint {
    pub wsr: f64,
    /// Axis values at the optimum, canonical order.
    pub coords: Vec<f64>,
}

/// Outcome of a grid search. `best` is `None` when no grid point was
/// feasible.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best: Option<BestPoint>,
    pub feasible_points: u64,
    pub evaluated_points: u64,
}

/// Closed-form optimum of the single-user scalar instance: every power
/// split achieves total rate `log2(1 + p·|g|²/σ²)`, the floor is pinned at
/// `c0_min`, and the rest is unicast.
pub fn scalar_optimum(p_tx_mw: f64, sigma2_mw: f64, gain2: f64, c0_min: f64) -> Result<f64, Error> {
    if !(p_tx_mw > 0.0) || !(sigma2_mw > 0.0) {
        return Err(Error::param("p_tx_mw and sigma2_mw must be positive"));
    }
    if !(gain2 >= 0.0) || !(c0_min >= 0.0) {
        return Err(Error::param("gain2 and c0_min must be nonnegative"));
    }
    let cap = (1.0 + p_tx_mw * gain2 / sigma2_mw).log2();
    if cap < c0_min {
        return Err(Error::param(format!(
            "multicast floor {c0_min} exceeds the full-power common rate {cap}"
        )));
    }
    Ok(cap - c0_min)
}

/// Exhaustive weighted-sum-rate search over a precoder grid.
pub fn brute_force_wsr(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    params: &ProblemParams,
    grid: &GridSpec,
) -> Result<OracleResult, Error> {
    search(channels, analog, params, grid, None)
}

/// As [`brute_force_wsr`], additionally streaming every evaluated point as
/// CSV (`axis values…, wsr, feasible`; `wsr` is NaN at infeasible points).
pub fn brute_force_wsr_dump(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    params: &ProblemParams,
    grid: &GridSpec,
    sink: &mut dyn IoWrite,
) -> Result<OracleResult, Error> {
    search(channels, analog, params, grid, Some(sink))
}

fn search(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    params: &ProblemParams,
    grid: &GridSpec,
    mut sink: Option<&mut dyn IoWrite>,
) -> Result<OracleResult, Error> {
    let k = channels.k_users();
    params.validate(k)?;
    let eff = effective_channels(analog, channels)?;
    let n = eff.fgram.nrows();
    if k > 2 || n > 2 {
        return Err(Error::param(format!(
            "grid search supports at most 2 users and 2 RF chains, got K={k}, n={n}"
        )));
    }
    grid.validate(k, n)?;

    let g = &eff.g;
    let w = &eff.fgram;
    let p = params.p_tx_mw;
    let sigma2 = params.sigma2_mw;
    let mu_max = params
        .weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);

    if let Some(s) = sink.as_deref_mut() {
        let mut header: Vec<&str> = grid.axes.iter().map(|a| a.name.as_str()).collect();
        header.push("wsr");
        header.push("feasible");
        writeln!(s, "{}", header.join(",")).map_err(Error::Io)?;
    }

    // Odometer over axis indices, last axis fastest, so points stream in
    // lexicographic order and a strict-improvement rule lands on the
    // lexicographically smallest argmax.
    let naxes = grid.axes.len();
    let mut idx = vec![0usize; naxes];
    let mut coords = vec![0.0f64; naxes];
    for (a, axis) in grid.axes.iter().enumerate() {
        coords[a] = axis.value(0);
    }
    let mut best: Option<BestPoint> = None;
    let mut feasible_points = 0u64;
    let mut evaluated_points = 0u64;
    let mut beam = vec![C64::new(0.0, 0.0); n * (k + 1)];

    'outer: loop {
        evaluated_points += 1;
        let wsr = evaluate(&coords, k, n, g, w, p, sigma2, params, mu_max, &mut beam);
        if let Some(s) = sink.as_deref_mut() {
            let mut row = String::new();
            for c in &coords {
                row.push_str(&format!("{c},"));
            }
            match wsr {
                Some(v) => row.push_str(&format!("{v},true")),
                None => row.push_str("NaN,false"),
            }
            writeln!(s, "{row}").map_err(Error::Io)?;
        }
        if let Some(v) = wsr {
            feasible_points += 1;
            let better = match &best {
                None => true,
                Some(b) => v > b.wsr,
            };
            if better {
                best = Some(BestPoint {
                    wsr: v,
                    coords: coords.clone(),
                });
            }
        }

        // Advance the odometer.
        let mut a = naxes;
        loop {
            if a == 0 {
                break 'outer;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < grid.axes[a].points {
                coords[a] = grid.axes[a].value(idx[a]);
                break;
            }
            idx[a] = 0;
            coords[a] = grid.axes[a].value(0);
        }
    }

    Ok(OracleResult {
        best,
        feasible_points,
        evaluated_points,
    })
}

/// Scores one grid point; `None` when infeasible (power fractions exceed
/// the budget or the common stream cannot carry the multicast floor).
#[allow(clippy::too_many_arguments)]
fn evaluate(
    coords: &[f64],
    k: usize,
    n: usize,
    g: &[CVector],
    w: &crate::CMatrix,
    p: f64,
    sigma2: f64,
    params: &ProblemParams,
    mu_max: f64,
    beam: &mut [C64],
) -> Option<f64> {
    let per_user = if n == 2 { 3 } else { 1 };
    let mut f_sum = 0.0;
    for k_i in 0..k {
        f_sum += coords[k_i * per_user];
    }
    if f_sum > 1.0 + 1e-12 {
        return None;
    }
    let f_m = (1.0 - f_sum).max(0.0);

    // Fill beams: users first, multicast last, each sqrt(f·P)·d/‖Fd‖.
    for b_i in 0..=k {
        let (f, phi, chi) = if b_i < k {
            let base = b_i * per_user;
            if n == 2 {
                (coords[base], coords[base + 1], coords[base + 2])
            } else {
                (coords[base], 0.0, 0.0)
            }
        } else if n == 2 {
            let base = k * per_user;
            (f_m, coords[base], coords[base + 1])
        } else {
            (f_m, 0.0, 0.0)
        };
        let out = &mut beam[b_i * n..(b_i + 1) * n];
        if n == 1 {
            let d = C64::new(1.0, 0.0);
            let norm2 = (w[(0, 0)] * d * d.conj()).re;
            out[0] = d * C64::new((f * p / norm2).sqrt(), 0.0);
        } else {
            let (s, c) = phi.sin_cos();
            let d0 = C64::new(c, 0.0);
            let d1 = C64::from_polar(s, chi);
            // d^H W d, real for Hermitian W.
            let norm2 = (d0.conj() * (w[(0, 0)] * d0 + w[(0, 1)] * d1)
                + d1.conj() * (w[(1, 0)] * d0 + w[(1, 1)] * d1))
                .re;
            let scale = C64::new((f * p / norm2.max(1e-300)).sqrt(), 0.0);
            out[0] = d0 * scale;
            out[1] = d1 * scale;
        }
    }

    // Received powers: pg[k_i][b_i] = |g_{k_i}^H beam_{b_i}|².
    let mut cap = f64::INFINITY;
    let mut wsr = 0.0;
    for (k_i, gk) in g.iter().enumerate() {
        let mut private_sum = 0.0;
        let mut own = 0.0;
        for b_i in 0..k {
            let mut dot = C64::new(0.0, 0.0);
            for e in 0..n {
                dot += gk[e].conj() * beam[b_i * n + e];
            }
            let pw = dot.norm_sqr();
            private_sum += pw;
            if b_i == k_i {
                own = pw;
            }
        }
        let mut mdot = C64::new(0.0, 0.0);
        for e in 0..n {
            mdot += gk[e].conj() * beam[k * n + e];
        }
        let mc = mdot.norm_sqr();
        let r_p = (1.0 + own / (private_sum - own + sigma2)).log2();
        let r_c = (1.0 + mc / (private_sum + sigma2)).log2();
        cap = cap.min(r_c);
        wsr += params.weights[k_i] * r_p;
    }
    if cap < params.c0_min {
        return None;
    }
    Some(wsr + mu_max * (cap - params.c0_min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analog::identity_analog;
    use nalgebra::DVector;

    fn scalar_instance() -> (ChannelSet, AnalogPrecoder, ProblemParams) {
        let h = DVector::from_element(1, C64::new(1.0, 0.0));
        let set = ChannelSet::from_vectors(vec![h]).unwrap();
        let params = ProblemParams {
            p_tx_mw: 100.0,
            sigma2_mw: 1.0,
            c0_min: 1.0,
            weights: vec![1.0],
        };
        (set, identity_analog(1), params)
    }

    fn orthogonal_pair(c0_min: f64) -> (ChannelSet, AnalogPrecoder, ProblemParams) {
        let g1 = DVector::from_iterator(2, [C64::new(2.0, 0.0), C64::new(0.0, 0.0)]);
        let g2 = DVector::from_iterator(2, [C64::new(0.0, 0.0), C64::new(2.0, 0.0)]);
        let set = ChannelSet::from_vectors(vec![g1, g2]).unwrap();
        let params = ProblemParams {
            p_tx_mw: 100.0,
            sigma2_mw: 1.0,
            c0_min,
            weights: vec![1.0, 1.0],
        };
        (set, identity_analog(2), params)
    }

    #[test]
    fn scalar_optimum_matches_closed_forms() {
        let v = scalar_optimum(100.0, 1.0, 1.0, 1.0).unwrap();
        assert!((v - (101f64.log2() - 1.0)).abs() < 1e-12);
        let v = scalar_optimum(100.0, 1.0, 1.0, 0.0).unwrap();
        assert!((v - 101f64.log2()).abs() < 1e-12);
        assert!(scalar_optimum(100.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn scalar_grid_agrees_with_the_closed_form() {
        let (set, analog, params) = scalar_instance();
        let grid = GridSpec {
            axes: vec![GridAxis::new("f_1", 0.0, 1.0, 1001)],
        };
        let res = brute_force_wsr(&set, &analog, &params, &grid).unwrap();
        let best = res.best.expect("instance is feasible");
        let exact = scalar_optimum(100.0, 1.0, 1.0, 1.0).unwrap();
        assert!(
            (best.wsr - exact).abs() < 1e-3,
            "grid {} vs analytic {}",
            best.wsr,
            exact
        );
        assert!(res.feasible_points > 0);
        assert_eq!(res.evaluated_points, 1001);
    }

    #[test]
    fn zero_floor_scalar_wsr_is_split_invariant() {
        // With no floor, successive decoding makes the scalar sum rate
        // log2(1 + P/σ²) at every power split; the grid must see a flat
        // landscape at exactly that height.
        let (set, analog, mut params) = scalar_instance();
        params.c0_min = 0.0;
        let grid = GridSpec {
            axes: vec![GridAxis::new("f_1", 0.0, 1.0, 1001)],
        };
        let res = brute_force_wsr(&set, &analog, &params, &grid).unwrap();
        let best = res.best.unwrap();
        assert!((best.wsr - 101f64.log2()).abs() < 1e-9);
        assert_eq!(res.feasible_points, 1001);
    }

    #[test]
    fn impossible_floor_yields_no_feasible_points() {
        let (set, analog, mut params) = scalar_instance();
        params.c0_min = 20.0;
        let grid = GridSpec {
            axes: vec![GridAxis::new("f_1", 0.0, 1.0, 101)],
        };
        let res = brute_force_wsr(&set, &analog, &params, &grid).unwrap();
        assert!(res.best.is_none());
        assert_eq!(res.feasible_points, 0);
        assert_eq!(res.evaluated_points, 101);
    }

    #[test]
    fn refining_the_grid_never_loses_ground() {
        let (set, analog, params) = orthogonal_pair(0.5);
        // Free axes only where it matters for this symmetric instance.
        let coarse = GridSpec {
            axes: vec![
                GridAxis::new("f_1", 0.0, 1.0, 9),
                GridAxis::pinned("phi_1", 0.0),
                GridAxis::pinned("chi_1", 0.0),
                GridAxis::new("f_2", 0.0, 1.0, 9),
                GridAxis::pinned("phi_2", std::f64::consts::FRAC_PI_2),
                GridAxis::pinned("chi_2", 0.0),
                GridAxis::new("phi_m", 0.0, std::f64::consts::FRAC_PI_2, 9),
                GridAxis::pinned("chi_m", 0.0),
            ],
        };
        let mut fine = coarse.clone();
        // Dyadic refinement keeps every coarse point: 9 → 17 points.
        for a in [0, 3, 6] {
            fine.axes[a].points = 17;
        }
        let lo = brute_force_wsr(&set, &analog, &params, &coarse).unwrap();
        let hi = brute_force_wsr(&set, &analog, &params, &fine).unwrap();
        assert!(hi.best.unwrap().wsr >= lo.best.unwrap().wsr);
    }

    #[test]
    fn search_is_deterministic() {
        let (set, analog, params) = orthogonal_pair(0.5);
        let grid = GridSpec::uniform(2, 2, 5);
        let a = brute_force_wsr(&set, &analog, &params, &grid).unwrap();
        let b = brute_force_wsr(&set, &analog, &params, &grid).unwrap();
        let (pa, pb) = (a.best.unwrap(), b.best.unwrap());
        assert_eq!(pa.wsr.to_bits(), pb.wsr.to_bits());
        assert_eq!(pa.coords, pb.coords);
        assert_eq!(a.feasible_points, b.feasible_points);
    }

    #[test]
    fn guards_reject_large_instances_and_grids() {
        let set = ChannelSet::two_user_phase_ramp(1.0); // n_tx = 4
        let params = ProblemParams {
            p_tx_mw: 100.0,
            sigma2_mw: 1.0,
            c0_min: 0.5,
            weights: vec![1.0, 1.0],
        };
        let grid = GridSpec::uniform(2, 2, 3);
        assert!(brute_force_wsr(&set, &identity_analog(4), &params, &grid).is_err());

        let (set2, analog2, params2) = orthogonal_pair(0.5);
        let mut huge = GridSpec::uniform(2, 2, 3);
        for a in &mut huge.axes {
            a.points = 10_000;
        }
        assert!(brute_force_wsr(&set2, &analog2, &params2, &huge).is_err());
        let mut misnamed = GridSpec::uniform(2, 2, 3);
        misnamed.axes[0].name = "power".into();
        assert!(brute_force_wsr(&set2, &analog2, &params2, &misnamed).is_err());
    }

    #[test]
    fn dump_streams_one_row_per_point() {
        let (set, analog, params) = scalar_instance();
        let grid = GridSpec {
            axes: vec![GridAxis::new("f_1", 0.0, 1.0, 11)],
        };
        let mut buf = Vec::new();
        let res = brute_force_wsr_dump(&set, &analog, &params, &grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count() as u64, res.evaluated_points + 1);
        assert!(text.starts_with("f_1,wsr,feasible"));
        // f_1 = 1 leaves nothing for the multicast floor → infeasible row.
        assert!(text.lines().last().unwrap().ends_with("NaN,false"));
    }

    #[test]
    fn tie_break_is_the_lexicographically_smallest_point() {
        // A flat objective: zero channel gain for user 1 with a zero floor
        // makes every feasible point score exactly 0.
        let h = DVector::from_element(1, C64::new(0.0, 0.0));
        let set = ChannelSet::from_vectors(vec![h]).unwrap();
        let params = ProblemParams {
            p_tx_mw: 100.0,
            sigma2_mw: 1.0,
            c0_min: 0.0,
            weights: vec![1.0],
        };
        let grid = GridSpec {
            axes: vec![GridAxis::new("f_1", 0.0, 1.0, 11)],
        };
        let res = brute_force_wsr(&set, &identity_analog(1), &params, &grid).unwrap();
        let best = res.best.unwrap();
        assert_eq!(best.wsr, 0.0);
        assert_eq!(best.coords[0], 0.0);
    }
}
