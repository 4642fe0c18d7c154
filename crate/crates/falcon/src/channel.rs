//! Channel models for the downlink simulations.
//!
//! Two generators are provided:
//!
//! - a clustered multipath model for a uniform linear array: each user's
//!   channel is a sum of `n_paths` planar wavefronts with i.i.d. complex
//!   Gaussian gains and uniform angles, normalized so the expected channel
//!   energy equals the antenna count;
//! - a deterministic two-user phase-ramp model on four antennas whose
//!   cross-correlation is an explicit function of the ramp angle — handy for
//!   reproducible worked examples (the users are exactly orthogonal at a
//!   quarter-turn ramp).
//!
//! Random draws use a counter-based stream cipher RNG so that a given seed
//! produces the same channels on every platform. Channel sets serialize to
//! JSON (complex entries as `[re, im]` pairs) for archiving alongside
//! experiment outputs.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::{C64, CVector, MAX_USERS};

/// Provenance of a channel set's randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSeed {
    /// Drawn from the seeded RNG stream.
    Seeded(u64),
    /// Constructed from a closed-form recipe; no randomness involved.
    Deterministic,
}

/// A set of `k_users` downlink channel vectors, one per user, each of length
/// `n_tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    n_tx: usize,
    k_users: usize,
    channels: Vec<CVector>,
    seed: ChannelSeed,
}

/// Converts a power in dBm to milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

impl ChannelSet {
    /// Generates clustered multipath channels for a uniform linear array with
    /// half-wavelength spacing.
    ///
    /// For each user, `n_paths` path gains are drawn i.i.d. from the
    /// circularly-symmetric complex Gaussian distribution with unit variance
    /// and path angles uniformly from `[0, 2π)`. The user's channel is
    ///
    /// ```text
    /// h = sqrt(n_tx / n_paths) * Σ_l gain_l * steer(angle_l)
    /// ```
    ///
    /// with the unit-norm steering vector `steer(θ)[i] = e^{jπ·i·sinθ} / sqrt(n_tx)`,
    /// so the expected channel energy `E‖h‖²` equals `n_tx`.
    ///
    /// The draw order is fixed (per user, per path: gain real part, gain
    /// imaginary part, angle), making the output a pure function of the seed.
    pub fn saleh_valenzuela(
        seed: u64,
        n_tx: usize,
        k_users: usize,
        n_paths: usize,
    ) -> Result<Self, Error> {
        validate_dims(n_tx, k_users)?;
        if n_paths == 0 {
            return Err(Error::param("n_paths must be at least 1"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        // Per-path gain variance is 1 split evenly over real and imaginary parts.
        let comp_std = std::f64::consts::FRAC_1_SQRT_2;
        let scale = (n_tx as f64 / n_paths as f64).sqrt();
        let mut channels = Vec::with_capacity(k_users);
        for _ in 0..k_users {
            let mut h = DVector::from_element(n_tx, C64::new(0.0, 0.0));
            for _ in 0..n_paths {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let gain = C64::new(re * comp_std, im * comp_std);
                let angle: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                let spatial = std::f64::consts::PI * angle.sin();
                let amp = scale / (n_tx as f64).sqrt();
                for i in 0..n_tx {
                    h[i] += gain * C64::from_polar(amp, spatial * i as f64);
                }
            }
            channels.push(h);
        }
        Ok(ChannelSet {
            n_tx,
            k_users,
            channels,
            seed: ChannelSeed::Seeded(seed),
        })
    }

    /// Builds the deterministic two-user phase-ramp pair on four antennas:
    ///
    /// ```text
    /// h1 = [1, 1, 1, 1]
    /// h2 = [1, e^{-jθ}, e^{-j2θ}, e^{-j3θ}]
    /// ```
    ///
    /// The normalized correlation `|h1^H h2| / 4` sweeps from 1 at `θ = 0`
    /// to exactly 0 at `θ = π/2`, which makes this pair a convenient knob for
    /// studying how user alignment affects the rate region.
    pub fn two_user_phase_ramp(theta: f64) -> Self {
        let n_tx = 4;
        let h1 = DVector::from_element(n_tx, C64::new(1.0, 0.0));
        let h2 = DVector::from_fn(n_tx, |i, _| C64::from_polar(1.0, -theta * i as f64));
        ChannelSet {
            n_tx,
            k_users: 2,
            channels: vec![h1, h2],
            seed: ChannelSeed::Deterministic,
        }
    }

    /// Builds a channel set from explicit vectors (all of equal length).
    pub fn from_vectors(channels: Vec<CVector>) -> Result<Self, Error> {
        let k_users = channels.len();
        let n_tx = channels.first().map(|h| h.len()).unwrap_or(0);
        validate_dims(n_tx, k_users)?;
        if channels.iter().any(|h| h.len() != n_tx) {
            return Err(Error::param("all channel vectors must share one length"));
        }
        Ok(ChannelSet {
            n_tx,
            k_users,
            channels,
            seed: ChannelSeed::Deterministic,
        })
    }

    /// Antenna count.
    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    /// User count.
    pub fn k_users(&self) -> usize {
        self.k_users
    }

    /// All channel vectors, user-indexed.
    pub fn channels(&self) -> &[CVector] {
        &self.channels
    }

    /// Channel vector of user `k`.
    pub fn channel(&self, k: usize) -> &CVector {
        &self.channels[k]
    }

    /// How this set was produced.
    pub fn seed(&self) -> ChannelSeed {
        self.seed
    }

    /// Serializes to a JSON string (complex entries as `[re, im]`).
    pub fn to_json(&self) -> String {
        let raw = RawChannelSet::from(self);
        serde_json::to_string(&raw).expect("channel serialization cannot fail")
    }

    /// Parses a channel set previously written by [`ChannelSet::to_json`].
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let raw: RawChannelSet =
            serde_json::from_str(text).map_err(|e| Error::param(format!("bad channel JSON: {e}")))?;
        raw.try_into()
    }
}

fn validate_dims(n_tx: usize, k_users: usize) -> Result<(), Error> {
    if n_tx == 0 {
        return Err(Error::param("n_tx must be at least 1"));
    }
    if k_users == 0 {
        return Err(Error::param("k_users must be at least 1"));
    }
    if k_users > MAX_USERS {
        return Err(Error::param(format!(
            "k_users = {k_users} exceeds the supported maximum {MAX_USERS}"
        )));
    }
    Ok(())
}

/// Serde-friendly mirror of [`ChannelSet`].
#[derive(Serialize, Deserialize)]
struct RawChannelSet {
    n_tx: usize,
    k_users: usize,
    seed: ChannelSeed,
    /// `channels[k][i]` is `[re, im]` of antenna `i` of user `k`.
    channels: Vec<Vec<[f64; 2]>>,
}

impl From<&ChannelSet> for RawChannelSet {
    fn from(set: &ChannelSet) -> Self {
        RawChannelSet {
            n_tx: set.n_tx,
            k_users: set.k_users,
            seed: set.seed,
            channels: set
                .channels
                .iter()
                .map(|h| h.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
        }
    }
}

impl TryFrom<RawChannelSet> for ChannelSet {
    type Error = Error;

    fn try_from(raw: RawChannelSet) -> Result<Self, Error> {
        validate_dims(raw.n_tx, raw.k_users)?;
        if raw.channels.len() != raw.k_users {
            return Err(Error::param("channel JSON: user count mismatch"));
        }
        let channels: Vec<CVector> = raw
            .channels
            .iter()
            .map(|h| DVector::from_iterator(h.len(), h.iter().map(|c| C64::new(c[0], c[1]))))
            .collect();
        if channels.iter().any(|h| h.len() != raw.n_tx) {
            return Err(Error::param("channel JSON: antenna count mismatch"));
        }
        Ok(ChannelSet {
            n_tx: raw.n_tx,
            k_users: raw.k_users,
            channels,
            seed: raw.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(set: &ChannelSet) -> f64 {
        let h1 = set.channel(0);
        let h2 = set.channel(1);
        (h1.adjoint() * h2)[(0, 0)].norm() / (h1.norm() * h2.norm())
    }

    #[test]
    fn dbm_conversion_matches_reference_points() {
        assert!((dbm_to_mw(50.0) - 1.0e5).abs() < 1e-9);
        assert!((dbm_to_mw(30.0) - 1.0e3).abs() < 1e-12);
        assert!((dbm_to_mw(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn same_seed_reproduces_identical_channels() {
        let a = ChannelSet::saleh_valenzuela(42, 8, 4, 3).unwrap();
        let b = ChannelSet::saleh_valenzuela(42, 8, 4, 3).unwrap();
        assert_eq!(a, b);
        let c = ChannelSet::saleh_valenzuela(43, 8, 4, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn multipath_energy_is_calibrated_to_antenna_count() {
        // E‖h‖² = n_tx; the sample mean over 2000 independent users should
        // land within a few percent (per-draw relative std ≈ 1/sqrt(n_paths)).
        let n_tx = 8;
        let set = ChannelSet::saleh_valenzuela(7, n_tx, 1, 3).unwrap();
        let mut mean = set.channel(0).norm_squared();
        for trial in 1..2000u64 {
            let s = ChannelSet::saleh_valenzuela(7 + trial, n_tx, 1, 3).unwrap();
            mean += s.channel(0).norm_squared();
        }
        mean /= 2000.0;
        let rel = (mean - n_tx as f64).abs() / n_tx as f64;
        assert!(rel < 0.05, "second moment off by {rel:.3}");
    }

    #[test]
    fn phase_ramp_correlation_matches_closed_form() {
        // |h1^H h2| / 4 = |Σ_{n=0}^{3} e^{jnθ}| / 4.
        let set = ChannelSet::two_user_phase_ramp(std::f64::consts::PI / 9.0);
        assert!((correlation(&set) - 0.9254165783983234).abs() < 1e-12);
        let set = ChannelSet::two_user_phase_ramp(std::f64::consts::PI / 4.0);
        assert!((correlation(&set) - 0.6532814824381883).abs() < 1e-12);
    }

    #[test]
    fn phase_ramp_is_orthogonal_at_quarter_turn() {
        let set = ChannelSet::two_user_phase_ramp(std::f64::consts::FRAC_PI_2);
        assert!(correlation(&set) < 1e-12);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let set = ChannelSet::saleh_valenzuela(9, 4, 2, 3).unwrap();
        let back = ChannelSet::from_json(&set.to_json()).unwrap();
        assert_eq!(set, back);
        let ramp = ChannelSet::two_user_phase_ramp(0.3);
        let back = ChannelSet::from_json(&ramp.to_json()).unwrap();
        assert_eq!(ramp, back);
    }

    #[test]
    fn rejects_degenerate_dimensions() {
        assert!(ChannelSet::saleh_valenzuela(1, 0, 2, 3).is_err());
        assert!(ChannelSet::saleh_valenzuela(1, 4, 0, 3).is_err());
        assert!(ChannelSet::saleh_valenzuela(1, 4, 17, 3).is_err());
        assert!(ChannelSet::saleh_valenzuela(1, 4, 2, 0).is_err());
    }
}
