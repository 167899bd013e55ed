//! Simulated BB84 quantum link.
//!
//! Produces identical streams of (key_ID, key) pairs at both ends of a
//! two-site link, with configurable channel noise and an intercept-resend
//! eavesdropper. Qubits are simulated classically: a prepared bit plus a
//! preparation basis, with the standard measurement rules (matching basis
//! reproduces the bit, mismatched basis yields a uniform bit). The pipeline
//! is sifting, QBER estimation over a disclosed sample, ideal reconciliation
//! with honest leak accounting, and Toeplitz privacy amplification.

mod amplify;
mod fixture;

pub use amplify::{privacy_amplify, SAFETY_MARGIN_BITS};
pub use fixture::Injection;

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use uuid::Uuid;

use crate::types::QkdKey;

/// One of the two conjugate preparation/measurement bases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

impl Basis {
    fn random(rng: &mut impl Rng) -> Self {
        if rng.random() {
            Basis::Rectilinear
        } else {
            Basis::Diagonal
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Rectilinear => "+",
            Basis::Diagonal => "×",
        })
    }
}

/// Polarization glyph for a (bit, basis) pair, as used in logs and fixtures.
pub fn polarization(bit: bool, basis: Basis) -> char {
    match (basis, bit) {
        (Basis::Rectilinear, false) => '↑',
        (Basis::Rectilinear, true) => '→',
        (Basis::Diagonal, false) => '↗',
        (Basis::Diagonal, true) => '↘',
    }
}

/// Channel disturbance parameters for one link.
#[derive(Clone, Copy, Debug)]
pub struct ChannelModel {
    /// Probability that a matched-basis measurement flips.
    pub noise_qber: f64,
    /// Per-qubit probability of an intercept-resend eavesdropper acting.
    pub eve_probability: f64,
    /// RNG seed; a fixed seed makes the whole transmission deterministic.
    pub seed: u64,
}

impl ChannelModel {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            noise_qber: 0.0,
            eve_probability: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), Bb84Error> {
        if !(0.0..0.5).contains(&self.noise_qber) {
            return Err(Bb84Error::InvalidArgument(format!(
                "noise_qber must lie in [0, 0.5), got {}",
                self.noise_qber
            )));
        }
        if !(0.0..=1.0).contains(&self.eve_probability) {
            return Err(Bb84Error::InvalidArgument(format!(
                "eve_probability must lie in [0, 1], got {}",
                self.eve_probability
            )));
        }
        Ok(())
    }
}

/// Everything both parties (and the simulator's omniscient view) know about
/// one transmission round of `n` qubits.
#[derive(Clone, Debug)]
pub struct QubitFrame {
    pub alice_bits: Vec<bool>,
    pub alice_bases: Vec<Basis>,
    pub bob_bases: Vec<Basis>,
    pub bob_results: Vec<bool>,
    pub eve_intercepted: Vec<bool>,
}

impl QubitFrame {
    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }
}

/// Post-sifting positions and bit values held by each side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiftedBlock {
    /// Strictly ascending 0-based indices into the originating frame.
    pub positions: Vec<usize>,
    pub alice_bits: Vec<bool>,
    pub bob_bits: Vec<bool>,
    /// Length of the originating frame.
    pub n_raw: usize,
}

impl SiftedBlock {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionStatus {
    Ok,
    AbortedQber,
}

/// Outcome of a full link session as seen by one side.
#[derive(Clone, Debug)]
pub struct SessionResult {
    pub status: SessionStatus,
    pub qber_estimate: f64,
    /// Number of sifted bits revealed publicly for error estimation.
    pub disclosed_count: usize,
    pub keys: Vec<QkdKey>,
}

/// Parameters for [`run_session`].
#[derive(Clone, Debug)]
pub struct SessionParams {
    pub n: usize,
    pub channel: ChannelModel,
    pub key_size_bits: usize,
    pub qber_abort_threshold: f64,
    pub sample_fraction: f64,
    /// Seed for the classical post-processing stages (sampling, hashing,
    /// key_ID assignment); the quantum transmission uses `channel.seed`.
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum Bb84Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("disclosed set is not a subset of the sifted block positions")]
    DisclosedNotSubset,
    #[error("insufficient material: {have} bits cannot cover {leaked} leaked bits plus the {margin}-bit safety margin")]
    InsufficientMaterial {
        have: usize,
        leaked: usize,
        margin: usize,
    },
}

fn measure(photon_bit: bool, photon_basis: Basis, measuring_basis: Basis, rng: &mut impl Rng) -> bool {
    if photon_basis == measuring_basis {
        photon_bit
    } else {
        rng.random()
    }
}

/// Runs one transmission round: Alice prepares `n` random qubits, Eve may
/// intercept-resend each with `channel.eve_probability`, Bob measures in a
/// uniformly random basis, and channel noise flips the measured bit with
/// `channel.noise_qber`.
pub fn transmit_and_measure(n: usize, channel: &ChannelModel) -> Result<QubitFrame, Bb84Error> {
    if n == 0 {
        return Err(Bb84Error::InvalidArgument(
            "frame length must be at least 1".into(),
        ));
    }
    channel.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(channel.seed);
    let alice_bits: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    let alice_bases: Vec<Basis> = (0..n).map(|_| Basis::random(&mut rng)).collect();
    measure_frame(alice_bits, alice_bases, None, channel, &mut rng)
}

/// Like [`transmit_and_measure`] but with forced bit/basis sequences, so a
/// known worked example can be reproduced as a golden test. Mismatched-basis
/// measurement outcomes remain random.
pub fn transmit_and_measure_injected(
    injection: &Injection,
    channel: &ChannelModel,
) -> Result<QubitFrame, Bb84Error> {
    if injection.len() == 0 {
        return Err(Bb84Error::InvalidArgument(
            "injection must contain at least 1 qubit".into(),
        ));
    }
    channel.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(channel.seed);
    measure_frame(
        injection.alice_bits.clone(),
        injection.alice_bases.clone(),
        Some(injection.bob_bases.clone()),
        channel,
        &mut rng,
    )
}

fn measure_frame(
    alice_bits: Vec<bool>,
    alice_bases: Vec<Basis>,
    forced_bob_bases: Option<Vec<Basis>>,
    channel: &ChannelModel,
    rng: &mut ChaCha20Rng,
) -> Result<QubitFrame, Bb84Error> {
    let n = alice_bits.len();
    let mut bob_bases = Vec::with_capacity(n);
    let mut bob_results = Vec::with_capacity(n);
    let mut eve_intercepted = Vec::with_capacity(n);
    for i in 0..n {
        let mut photon_bit = alice_bits[i];
        let mut photon_basis = alice_bases[i];

        let intercepted = rng.random_bool(channel.eve_probability);
        if intercepted {
            let eve_basis = Basis::random(rng);
            let eve_bit = measure(photon_bit, photon_basis, eve_basis, rng);
            // Eve re-sends her measurement result in her own basis.
            photon_bit = eve_bit;
            photon_basis = eve_basis;
        }
        eve_intercepted.push(intercepted);

        let bob_basis = match &forced_bob_bases {
            Some(bases) => bases[i],
            None => Basis::random(rng),
        };
        let mut result = measure(photon_bit, photon_basis, bob_basis, rng);
        if rng.random_bool(channel.noise_qber) {
            result = !result;
        }
        bob_bases.push(bob_basis);
        bob_results.push(result);
    }
    Ok(QubitFrame {
        alice_bits,
        alice_bases,
        bob_bases,
        bob_results,
        eve_intercepted,
    })
}

/// Keeps exactly the positions where Alice's and Bob's bases agree.
pub fn sift(frame: &QubitFrame) -> SiftedBlock {
    let mut positions = Vec::new();
    let mut alice_bits = Vec::new();
    let mut bob_bits = Vec::new();
    for i in 0..frame.len() {
        if frame.alice_bases[i] == frame.bob_bases[i] {
            positions.push(i);
            alice_bits.push(frame.alice_bits[i]);
            bob_bits.push(frame.bob_results[i]);
        }
    }
    SiftedBlock {
        positions,
        alice_bits,
        bob_bits,
        n_raw: frame.len(),
    }
}

/// Discloses a uniformly sampled subset of `ceil(sample_fraction * len)`
/// sifted positions and reports the mismatch fraction within it. The
/// returned positions (ascending, 0-based frame indices) must be discarded
/// by the caller.
pub fn estimate_qber(
    block: &SiftedBlock,
    sample_fraction: f64,
    seed: u64,
) -> Result<(f64, Vec<usize>), Bb84Error> {
    if block.is_empty() {
        return Err(Bb84Error::InvalidArgument(
            "cannot estimate QBER on an empty block".into(),
        ));
    }
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Bb84Error::InvalidArgument(format!(
            "sample_fraction must lie in (0, 1], got {sample_fraction}"
        )));
    }
    let len = block.len();
    let amount = ((len as f64) * sample_fraction).ceil().min(len as f64) as usize;
    let amount = amount.max(1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, len, amount).into_vec();
    picked.sort_unstable();
    let mismatches = picked
        .iter()
        .filter(|&&i| block.alice_bits[i] != block.bob_bits[i])
        .count();
    let disclosed: Vec<usize> = picked.iter().map(|&i| block.positions[i]).collect();
    Ok((mismatches as f64 / amount as f64, disclosed))
}

/// Ideal reconciliation: returns Alice's bits at undisclosed positions where
/// both sides already agree (the simulator compares ground truth), counting
/// each disclosed position and each discarded mismatch as one publicly
/// leaked bit.
pub fn reconcile(block: &SiftedBlock, disclosed: &[usize]) -> Result<(Vec<bool>, usize), Bb84Error> {
    let position_set: HashSet<usize> = block.positions.iter().copied().collect();
    if !disclosed.iter().all(|p| position_set.contains(p)) {
        return Err(Bb84Error::DisclosedNotSubset);
    }
    let disclosed_set: HashSet<usize> = disclosed.iter().copied().collect();
    let mut bits = Vec::with_capacity(block.len());
    let mut discarded_mismatches = 0usize;
    for i in 0..block.len() {
        if disclosed_set.contains(&block.positions[i]) {
            continue;
        }
        if block.alice_bits[i] == block.bob_bits[i] {
            bits.push(block.alice_bits[i]);
        } else {
            discarded_mismatches += 1;
        }
    }
    Ok((bits, disclosed_set.len() + discarded_mismatches))
}

/// Runs the full pipeline and emits matching key streams for both ends.
///
/// A QBER estimate above the abort threshold aborts the session with zero
/// keys at both ends; running out of amplifiable material yields an ok
/// result with zero keys.
pub fn run_session(params: &SessionParams) -> Result<(SessionResult, SessionResult), Bb84Error> {
    if params.key_size_bits % 8 != 0 || params.key_size_bits < 64 {
        return Err(Bb84Error::InvalidArgument(format!(
            "key_size_bits must be a multiple of 8 and at least 64, got {}",
            params.key_size_bits
        )));
    }
    let frame = transmit_and_measure(params.n, &params.channel)?;
    let block = sift(&frame);
    if block.is_empty() {
        let result = SessionResult {
            status: SessionStatus::Ok,
            qber_estimate: 0.0,
            disclosed_count: 0,
            keys: Vec::new(),
        };
        return Ok((result.clone(), result));
    }

    let qber_seed = stage_seed(params.seed, 1);
    let amplify_seed = stage_seed(params.seed, 2);
    let id_seed = stage_seed(params.seed, 3);

    let (qber_estimate, disclosed) = estimate_qber(&block, params.sample_fraction, qber_seed)?;
    let disclosed_count = disclosed.len();
    if qber_estimate > params.qber_abort_threshold {
        let result = SessionResult {
            status: SessionStatus::AbortedQber,
            qber_estimate,
            disclosed_count,
            keys: Vec::new(),
        };
        return Ok((result.clone(), result));
    }

    let (bits, leaked) = reconcile(&block, &disclosed)?;
    let material = match privacy_amplify(&bits, leaked, amplify_seed) {
        Ok(bytes) => bytes,
        Err(Bb84Error::InsufficientMaterial { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };

    let key_size_bytes = params.key_size_bits / 8;
    let mut id_rng = ChaCha20Rng::seed_from_u64(id_seed);
    let mut seen_ids = HashSet::new();
    let mut keys = Vec::new();
    for chunk in material.chunks_exact(key_size_bytes) {
        let key_id = loop {
            let mut raw = [0u8; 16];
            id_rng.fill_bytes(&mut raw);
            let id = Uuid::from_bytes(raw);
            if seen_ids.insert(id) {
                break id;
            }
        };
        keys.push(QkdKey::new(key_id, chunk.to_vec()));
    }

    let result = SessionResult {
        status: SessionStatus::Ok,
        qber_estimate,
        disclosed_count,
        keys,
    };
    Ok((result.clone(), result))
}

/// Derives a per-stage sub-seed so the post-processing stages draw from
/// streams independent of the channel RNG (splitmix64 finalizer).
fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
