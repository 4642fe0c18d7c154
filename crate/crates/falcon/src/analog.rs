//! Analog precoder designs for hybrid arrays.
//!
//! In the hybrid architecture the digital precoders act on `n_rf` RF chains
//! and reach the `n_tx` antennas through an analog network `F` of quantized
//! phase shifters: every entry of `F` has fixed modulus `delta_tx =
//! sqrt(1/n_rf)` and a phase restricted to `l_tx` uniformly spaced values.
//! One RF chain is dedicated per user (`n_rf = k_users`).
//!
//! Two designs are implemented, plus the fully-digital reference:
//!
//! - *phase matched*: entry `(n, k)` of `F` takes the alphabet phase closest
//!   (in the inner-product sense) to the conjugate-matched phase of user `k`'s
//!   channel at antenna `n` — the quantized equivalent of per-antenna maximum
//!   ratio combining;
//! - *codebook greedy*: each column of `F` is picked sequentially from a
//!   constant-modulus codebook (array-response columns plus random fillers),
//!   maximizing the served user's effective channel gain among codewords not
//!   yet assigned;
//! - *fully digital*: `F` is the identity, so the digital precoders drive the
//!   antennas directly.
//!
//! Ties in both argmax scans break toward the lowest index, which keeps the
//! designs deterministic.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::Error;
use crate::{C64, CMatrix, CVector};

/// The quantized phase-shifter alphabet available to the analog network.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseShiftSet {
    l_tx: usize,
    delta_tx: f64,
    phases: Vec<C64>,
}

impl PhaseShiftSet {
    /// Builds the alphabet `{delta_tx * e^{j 2π l / l_tx} : l = 0..l_tx-1}`
    /// with `delta_tx = sqrt(1/n_rf)`.
    pub fn new(l_tx: usize, n_rf: usize) -> Result<Self, Error> {
        if l_tx == 0 {
            return Err(Error::param("l_tx must be at least 1"));
        }
        if n_rf == 0 {
            return Err(Error::param("n_rf must be at least 1"));
        }
        let delta_tx = (1.0 / n_rf as f64).sqrt();
        let phases = (0..l_tx)
            .map(|l| C64::from_polar(delta_tx, std::f64::consts::TAU * l as f64 / l_tx as f64))
            .collect();
        Ok(PhaseShiftSet {
            l_tx,
            delta_tx,
            phases,
        })
    }

    /// Number of phases in the alphabet.
    pub fn l_tx(&self) -> usize {
        self.l_tx
    }

    /// Common modulus of every alphabet member.
    pub fn delta_tx(&self) -> f64 {
        self.delta_tx
    }

    /// Alphabet members, index order.
    pub fn phases(&self) -> &[C64] {
        &self.phases
    }

    /// True if `value` coincides with some alphabet member within `tol`.
    pub fn contains(&self, value: C64, tol: f64) -> bool {
        self.phases.iter().any(|p| (p - value).norm() <= tol)
    }
}

/// Which analog design produced a precoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalogMode {
    /// `F = I`; the digital precoders are the antenna-domain precoders.
    #[serde(alias = "fd")]
    FullyDigital,
    /// Per-entry quantized conjugate matching.
    #[serde(alias = "pb")]
    PhaseMatched,
    /// Greedy sequential codeword assignment.
    #[serde(alias = "cb")]
    CodebookGreedy,
}

impl AnalogMode {
    /// Short label used in output records.
    pub fn label(self) -> &'static str {
        match self {
            AnalogMode::FullyDigital => "fd",
            AnalogMode::PhaseMatched => "pb",
            AnalogMode::CodebookGreedy => "cb",
        }
    }
}

/// An analog precoding matrix together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogPrecoder {
    matrix: CMatrix,
    mode: AnalogMode,
    alphabet: Option<PhaseShiftSet>,
}

impl AnalogPrecoder {
    /// The `n_tx × n_rf` matrix `F`.
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Design that produced this precoder.
    pub fn mode(&self) -> AnalogMode {
        self.mode
    }

    /// Number of RF chains (columns of `F`).
    pub fn n_rf(&self) -> usize {
        self.matrix.ncols()
    }

    /// Antenna count (rows of `F`).
    pub fn n_tx(&self) -> usize {
        self.matrix.nrows()
    }

    /// The phase alphabet, when the design is quantized.
    pub fn alphabet(&self) -> Option<&PhaseShiftSet> {
        self.alphabet.as_ref()
    }
}

/// Effective (RF-chain domain) channels induced by an analog precoder.
pub struct EffectiveChannels {
    /// `g_k = F^H h_k`, one per user.
    pub g: Vec<CVector>,
    /// Gram matrix `F^H F`; weights digital power into radiated power.
    pub fgram: CMatrix,
}

/// The fully-digital reference: `F = I` on `n_tx` antennas.
pub fn identity_analog(n_tx: usize) -> AnalogPrecoder {
    AnalogPrecoder {
        matrix: DMatrix::identity(n_tx, n_tx),
        mode: AnalogMode::FullyDigital,
        alphabet: None,
    }
}

/// Phase-matched design: one column per user; entry `(n, k)` is the alphabet
/// member `φ` maximizing `Re{φ · conj(h_k[n])}`, i.e. the quantized phase
/// closest to the channel-conjugate direction. Ties break toward the lowest
/// alphabet index; a zero channel entry takes index 0.
pub fn design_phase_matched(channels: &ChannelSet, alphabet: &PhaseShiftSet) -> AnalogPrecoder {
    let n_tx = channels.n_tx();
    let k_users = channels.k_users();
    let mut f = DMatrix::from_element(n_tx, k_users, C64::new(0.0, 0.0));
    for k in 0..k_users {
        let h = channels.channel(k);
        for n in 0..n_tx {
            let target = h[n].conj();
            let mut best = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for (l, phi) in alphabet.phases().iter().enumerate() {
                let val = (phi * target).re;
                if val > best_val + 1e-15 {
                    best_val = val;
                    best = l;
                }
            }
            f[(n, k)] = alphabet.phases()[best];
        }
    }
    AnalogPrecoder {
        matrix: f,
        mode: AnalogMode::PhaseMatched,
        alphabet: Some(alphabet.clone()),
    }
}

/// A constant-modulus codebook of candidate analog columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    codewords: Vec<CVector>,
    alphabet: PhaseShiftSet,
}

impl Codebook {
    /// Codewords, index order.
    pub fn codewords(&self) -> &[CVector] {
        &self.codewords
    }

    /// Number of codewords.
    pub fn size(&self) -> usize {
        self.codewords.len()
    }

    /// Alphabet the codeword phases live in.
    pub fn alphabet(&self) -> &PhaseShiftSet {
        &self.alphabet
    }
}

/// Builds a codebook of `size ≥ n_tx` columns: the first `n_tx` are the
/// array-response (DFT) directions `v_c[n] = delta_tx · e^{j 2π n c / n_tx}`,
/// the rest draw each entry's phase uniformly from the alphabet.
///
/// The DFT phases `2π n c / n_tx` are exact alphabet members only when
/// `l_tx` is a multiple of `n_tx`; other combinations are rejected so the
/// alphabet-closure invariant cannot silently break.
pub fn build_codebook(
    n_tx: usize,
    size: usize,
    alphabet: &PhaseShiftSet,
    seed: u64,
) -> Result<Codebook, Error> {
    if n_tx == 0 {
        return Err(Error::param("n_tx must be at least 1"));
    }
    if size < n_tx {
        return Err(Error::param(format!(
            "codebook size {size} is smaller than n_tx = {n_tx}"
        )));
    }
    if alphabet.l_tx() % n_tx != 0 {
        return Err(Error::param(format!(
            "l_tx = {} must be a multiple of n_tx = {n_tx} so array-response phases are exact alphabet members",
            alphabet.l_tx()
        )));
    }
    let stride = alphabet.l_tx() / n_tx;
    let mut codewords = Vec::with_capacity(size);
    for c in 0..n_tx {
        let v = DVector::from_fn(n_tx, |n, _| {
            alphabet.phases()[(n * c * stride) % alphabet.l_tx()]
        });
        codewords.push(v);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in n_tx..size {
        let v = DVector::from_iterator(
            n_tx,
            (0..n_tx).map(|_| alphabet.phases()[rng.gen_range(0..alphabet.l_tx())]),
        );
        codewords.push(v);
    }
    Ok(Codebook {
        codewords,
        alphabet: alphabet.clone(),
    })
}

/// Codebook-greedy design: users are served in index order; user `k` takes
/// the not-yet-assigned codeword maximizing `|h_k^H v|²` (ties toward the
/// lowest codeword index).
pub fn design_codebook_greedy(
    channels: &ChannelSet,
    codebook: &Codebook,
) -> Result<AnalogPrecoder, Error> {
    let n_tx = channels.n_tx();
    let k_users = channels.k_users();
    if codebook.size() < k_users {
        return Err(Error::param(format!(
            "codebook of {} codewords cannot serve {k_users} users",
            codebook.size()
        )));
    }
    if codebook.codewords()[0].len() != n_tx {
        return Err(Error::param("codeword length does not match n_tx"));
    }
    let mut assigned = vec![false; codebook.size()];
    let mut f = DMatrix::from_element(n_tx, k_users, C64::new(0.0, 0.0));
    for k in 0..k_users {
        let h = channels.channel(k);
        let mut best = None;
        let mut best_val = f64::NEG_INFINITY;
        for (c, v) in codebook.codewords().iter().enumerate() {
            if assigned[c] {
                continue;
            }
            let val = (h.adjoint() * v)[(0, 0)].norm_sqr();
            if val > best_val + 1e-15 {
                best_val = val;
                best = Some(c);
            }
        }
        let c = best.expect("codebook has at least k_users free codewords");
        assigned[c] = true;
        let chosen = &codebook.codewords()[c];
        for n in 0..n_tx {
            f[(n, k)] = chosen[n];
        }
    }
    Ok(AnalogPrecoder {
        matrix: f,
        mode: AnalogMode::CodebookGreedy,
        alphabet: Some(codebook.alphabet().clone()),
    })
}

/// Computes the effective channels `g_k = F^H h_k` and the Gram matrix
/// `F^H F` used by power constraints in the RF-chain domain.
pub fn effective_channels(
    analog: &AnalogPrecoder,
    channels: &ChannelSet,
) -> Result<EffectiveChannels, Error> {
    if analog.n_tx() != channels.n_tx() {
        return Err(Error::param(format!(
            "analog precoder has {} rows but channels have {} antennas",
            analog.n_tx(),
            channels.n_tx()
        )));
    }
    let fh = analog.matrix().adjoint();
    let g = channels.channels().iter().map(|h| &fh * h).collect();
    let fgram = &fh * analog.matrix();
    Ok(EffectiveChannels { g, fgram })
}
