//! Exact rate and feasibility evaluation of candidate transmit designs.
//!
//! This module is the measurement ground truth: given channels, an analog
//! precoder, digital precoders, and a common-rate split, it computes the
//! achieved SINRs, Shannon rates, radiated power, and constraint slacks
//! directly from their definitions — no relaxations, no surrogates. Solvers
//! are always scored through these functions rather than through their own
//! internal objective values.
//!
//! Signal model for user `k` with analog precoder `F`, private precoders
//! `b_j`, and multicast precoder `m` (all digital vectors live in the
//! RF-chain domain):
//!
//! ```text
//! SINR_common_k  = |h_k^H F m|² / (Σ_j |h_k^H F b_j|² + σ²)
//! SINR_private_k = |h_k^H F b_k|² / (Σ_{j≠k} |h_k^H F b_j|² + σ²)
//! ```
//!
//! The multicast stream is decoded first (all private streams count as
//! interference), then cancelled, so the private SINR excludes only the
//! user's own stream from the interference sum. The common rate actually
//! deliverable is capped by the weakest user: `min_k log2(1 + SINR_common_k)`,
//! and a split `(c0, c_1..c_K)` is feasible when `c0 + Σ_j c_j` fits under
//! every user's common rate, with `c0 ≥ c0_min` and `c_k ≥ 0`.

use serde::{Deserialize, Serialize};

use crate::analog::{effective_channels, AnalogPrecoder};
use crate::channel::ChannelSet;
use crate::error::Error;
use crate::CVector;

/// Physical problem parameters shared by all solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    /// Transmit power budget, milliwatts.
    pub p_tx_mw: f64,
    /// Noise power, milliwatts.
    pub sigma2_mw: f64,
    /// Minimum rate reserved on the common stream for multicast content,
    /// bits/s/Hz.
    pub c0_min: f64,
    /// Per-user weights in the weighted sum rate, one per user.
    pub weights: Vec<f64>,
}

impl ProblemParams {
    /// Checks internal consistency against a user count.
    pub fn validate(&self, k_users: usize) -> Result<(), Error> {
        if !(self.p_tx_mw > 0.0) || !self.p_tx_mw.is_finite() {
            return Err(Error::param("p_tx_mw must be positive and finite"));
        }
        if !(self.sigma2_mw > 0.0) || !self.sigma2_mw.is_finite() {
            return Err(Error::param("sigma2_mw must be positive and finite"));
        }
        if !(self.c0_min >= 0.0) || !self.c0_min.is_finite() {
            return Err(Error::param("c0_min must be nonnegative and finite"));
        }
        if self.weights.len() != k_users {
            return Err(Error::param(format!(
                "{} weights supplied for {k_users} users",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::param("weights must be positive and finite"));
        }
        Ok(())
    }
}

/// Everything measurable about a transmit design, before choosing the
/// common-rate split.
#[derive(Debug, Clone)]
pub struct RateReport {
    /// Per-user SINR of the multicast/common stream.
    pub sinr_common: Vec<f64>,
    /// Per-user SINR of the private stream after common-stream cancellation.
    pub sinr_private: Vec<f64>,
    /// `log2(1 + SINR_common_k)`.
    pub rate_common: Vec<f64>,
    /// `log2(1 + SINR_private_k)`.
    pub rate_private: Vec<f64>,
    /// `min_k rate_common[k]` — the common budget every user can decode.
    pub common_rate_cap: f64,
    /// Radiated power `‖F m‖² + Σ_k ‖F b_k‖²`, milliwatts.
    pub total_power_mw: f64,
}

/// Per-constraint slacks of a complete candidate solution. Positive slack
/// means satisfied with margin.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    /// `p_tx − total radiated power`.
    pub power_slack_mw: f64,
    /// `rate_common[k] − (c0 + Σ_j c_j)` per user.
    pub common_decode_slack: Vec<f64>,
    /// `c0 − c0_min`.
    pub c0_slack: f64,
    /// `c_k` (nonnegativity slack) per user.
    pub c_slack: Vec<f64>,
    /// All slacks within the relative tolerance used at construction.
    pub pass: bool,
}

/// Per-user SINRs of the common stream.
pub fn sinr_common(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    b_vecs: &[CVector],
    m_vec: &CVector,
    sigma2_mw: f64,
) -> Result<Vec<f64>, Error> {
    let report = rate_report(channels, analog, b_vecs, m_vec, sigma2_mw)?;
    Ok(report.sinr_common)
}

/// Per-user SINRs of the private streams.
pub fn sinr_private(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    b_vecs: &[CVector],
    m_vec: &CVector,
    sigma2_mw: f64,
) -> Result<Vec<f64>, Error> {
    let report = rate_report(channels, analog, b_vecs, m_vec, sigma2_mw)?;
    Ok(report.sinr_private)
}

/// Computes SINRs, rates, the common-rate cap, and radiated power for a
/// transmit design.
pub fn rate_report(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    b_vecs: &[CVector],
    m_vec: &CVector,
    sigma2_mw: f64,
) -> Result<RateReport, Error> {
    let k_users = channels.k_users();
    if b_vecs.len() != k_users {
        return Err(Error::param(format!(
            "{} private precoders supplied for {k_users} users",
            b_vecs.len()
        )));
    }
    let n_rf = analog.n_rf();
    if m_vec.len() != n_rf || b_vecs.iter().any(|b| b.len() != n_rf) {
        return Err(Error::param(format!(
            "digital precoders must have length n_rf = {n_rf}"
        )));
    }
    if !(sigma2_mw > 0.0) {
        return Err(Error::param("sigma2_mw must be positive"));
    }
    let eff = effective_channels(analog, channels)?;

    // |g_k^H b_j|² for all pairs, and |g_k^H m|².
    let mut private_gain = vec![vec![0.0; k_users]; k_users];
    let mut common_gain = vec![0.0; k_users];
    for k in 0..k_users {
        let gk = &eff.g[k];
        for (j, b) in b_vecs.iter().enumerate() {
            private_gain[k][j] = gk.dotc(b).norm_sqr();
        }
        common_gain[k] = gk.dotc(m_vec).norm_sqr();
    }

    let mut sinr_c = vec![0.0; k_users];
    let mut sinr_p = vec![0.0; k_users];
    for k in 0..k_users {
        let all_private: f64 = private_gain[k].iter().sum();
        sinr_c[k] = common_gain[k] / (all_private + sigma2_mw);
        let cross = all_private - private_gain[k][k];
        sinr_p[k] = private_gain[k][k] / (cross + sigma2_mw);
    }
    let rate_c: Vec<f64> = sinr_c.iter().map(|s| (1.0 + s).log2()).collect();
    let rate_p: Vec<f64> = sinr_p.iter().map(|s| (1.0 + s).log2()).collect();
    let cap = rate_c.iter().cloned().fold(f64::INFINITY, f64::min);

    // Radiated power goes through the analog network: ‖F v‖².
    let fmat = analog.matrix();
    let mut total = (fmat * m_vec).norm_squared();
    for b in b_vecs {
        total += (fmat * b).norm_squared();
    }

    Ok(RateReport {
        sinr_common: sinr_c,
        sinr_private: sinr_p,
        rate_common: rate_c,
        rate_private: rate_p,
        common_rate_cap: cap,
        total_power_mw: total,
    })
}

/// Weighted sum rate achieved by a report and a common-rate split:
/// `Σ_k weights_k (c_k + rate_private_k)`.
pub fn wsr(report: &RateReport, c: &[f64], weights: &[f64]) -> f64 {
    report
        .rate_private
        .iter()
        .zip(c)
        .zip(weights)
        .map(|((rp, ck), w)| w * (ck + rp))
        .sum()
}

/// Evaluates every constraint of the design problem at a complete candidate
/// `(b_vecs, m_vec, c0, c)` and reports slacks. `pass` requires each slack
/// to be at least `-tol` times its natural scale (power budget for the power
/// constraint, decode budget for rate constraints, 1 for plain bounds).
#[allow(clippy::too_many_arguments)]
pub fn feasibility_report(
    channels: &ChannelSet,
    analog: &AnalogPrecoder,
    b_vecs: &[CVector],
    m_vec: &CVector,
    c0: f64,
    c: &[f64],
    params: &ProblemParams,
    tol: f64,
) -> Result<FeasibilityReport, Error> {
    params.validate(channels.k_users())?;
    if c.len() != channels.k_users() {
        return Err(Error::param("common-split length must equal k_users"));
    }
    let report = rate_report(channels, analog, b_vecs, m_vec, params.sigma2_mw)?;
    let budget = c0 + c.iter().sum::<f64>();
    let power_slack = params.p_tx_mw - report.total_power_mw;
    let common_slack: Vec<f64> = report.rate_common.iter().map(|r| r - budget).collect();
    let c0_slack = c0 - params.c0_min;
    let c_slack = c.to_vec();

    let rate_scale = budget.abs().max(1.0);
    let pass = power_slack >= -tol * params.p_tx_mw.max(1.0)
        && common_slack.iter().all(|s| *s >= -tol * rate_scale)
        && c0_slack >= -tol
        && c_slack.iter().all(|s| *s >= -tol);

    Ok(FeasibilityReport {
        power_slack_mw: power_slack,
        common_decode_slack: common_slack,
        c0_slack,
        c_slack,
        pass,
    })
}
