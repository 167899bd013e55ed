//! Privacy amplification by seeded Toeplitz hashing over GF(2).
//!
//! The reconciled bit string is multiplied by a random binary Toeplitz
//! matrix drawn from the stage seed. The output is shortened by the leaked
//! bit count plus a fixed safety margin, then truncated to whole bytes.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::Bb84Error;

/// Fixed shortening applied on top of the leaked-bit count.
pub const SAFETY_MARGIN_BITS: usize = 64;

/// Compresses `bits` into `floor((|bits| - leaked_bits - 64) / 8)` bytes.
///
/// The Toeplitz matrix `T` has `m` output rows and `n = |bits|` columns and
/// is defined by a diagonal bit sequence `d` of length `m + n - 1` with
/// `T[i][j] = d[i + (n - 1) - j]`; output bit `i` is the GF(2) inner product
/// of row `i` with the input. Deterministic for fixed inputs and seed.
pub fn privacy_amplify(bits: &[bool], leaked_bits: usize, seed: u64) -> Result<Vec<u8>, Bb84Error> {
    if bits.len() <= leaked_bits + SAFETY_MARGIN_BITS {
        return Err(Bb84Error::InsufficientMaterial {
            have: bits.len(),
            leaked: leaked_bits,
            margin: SAFETY_MARGIN_BITS,
        });
    }
    let n = bits.len();
    let out_bytes = (n - leaked_bits - SAFETY_MARGIN_BITS) / 8;
    let m = out_bytes * 8;
    if m == 0 {
        return Ok(Vec::new());
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let diag = random_bits(&mut rng, m + n - 1);

    // Row i of T holds d[i + n - 1], d[i + n - 2], ..., d[i]; reversing the
    // input turns each row product into a sliding window over d:
    //   out[i] = parity( d[i .. i + n] AND reverse(bits) ).
    let diag_words = pack_bits(&diag);
    let reversed: Vec<bool> = bits.iter().rev().copied().collect();
    let input_words = pack_bits(&reversed);

    let mut out = vec![0u8; out_bytes];
    for i in 0..m {
        if window_parity(&diag_words, i, &input_words) {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    Ok(out)
}

fn random_bits(rng: &mut impl RngCore, len: usize) -> Vec<bool> {
    let mut bytes = vec![0u8; len.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    (0..len).map(|k| (bytes[k / 8] >> (k % 8)) & 1 == 1).collect()
}

/// Packs bits LSB-first into u64 words, zero-padding the tail.
fn pack_bits(bits: &[bool]) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64)];
    for (k, &bit) in bits.iter().enumerate() {
        if bit {
            words[k / 64] |= 1u64 << (k % 64);
        }
    }
    words
}

/// Parity of the AND between `window` = diag bits [offset, offset + n) and
/// the packed n-bit input (whose tail padding is zero).
fn window_parity(diag_words: &[u64], offset: usize, input_words: &[u64]) -> bool {
    let q = offset / 64;
    let r = offset % 64;
    let mut acc = 0u64;
    for (t, &input) in input_words.iter().enumerate() {
        let lo = diag_words.get(q + t).copied().unwrap_or(0) >> r;
        let w = if r == 0 {
            lo
        } else {
            lo | diag_words.get(q + t + 1).copied().unwrap_or(0) << (64 - r)
        };
        acc ^= w & input;
    }
    acc.count_ones() & 1 == 1
}
