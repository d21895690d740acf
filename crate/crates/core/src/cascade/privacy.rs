use rand::RngCore;

use crate::bits::BitString;
use crate::error::{QkdError, Result};
use crate::random::rng_from_seed;
use crate::rates::binary_entropy;

pub const DEFAULT_SAFETY_MARGIN: u64 = 30;

/// Output of privacy amplification together with the inputs that fixed
/// its length.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    pub bits: BitString,
    pub input_len: usize,
    pub delta: f64,
    pub qber: f64,
    pub leaked_bits: u64,
    pub safety_margin: u64,
}

impl SecretKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// The length formula left nothing; the run is in an insecure regime.
    pub fn is_zero_length(&self) -> bool {
        self.bits.is_empty()
    }
}

/// `max(0, floor(n (1 - delta) (1 - H2(qber / (1 - delta)))) - leaked - margin)`.
pub fn secret_key_length(
    n: usize,
    delta: f64,
    qber: f64,
    leaked_bits: u64,
    safety_margin: u64,
) -> Result<usize> {
    if !(0.0..1.0).contains(&delta) {
        return Err(QkdError::param(
            "delta",
            format!("must lie in [0, 1), got {delta}"),
        ));
    }
    if !(0.0..0.5).contains(&qber) {
        return Err(QkdError::param(
            "qber",
            format!("must lie in [0, 0.5), got {qber}"),
        ));
    }
    let untagged = qber / (1.0 - delta);
    if untagged >= 1.0 {
        return Err(QkdError::param(
            "qber",
            "qber / (1 - delta) must stay below 1",
        ));
    }
    if untagged >= 0.5 {
        return Ok(0);
    }
    let raw = (n as f64 * (1.0 - delta) * (1.0 - binary_entropy(untagged)?)).floor();
    let len = raw - leaked_bits as f64 - safety_margin as f64;
    Ok(if len > 0.0 { len as usize } else { 0 })
}

/// Multiplies `key` by the `out_len x n` binary Toeplitz matrix
/// `T[i][j] = r[i - j + n - 1]`, where `r` holds `n + out_len - 1` seeded
/// random bits.
pub fn toeplitz_hash(key: &BitString, out_len: usize, seed: u64) -> BitString {
    let n = key.len();
    if n == 0 || out_len == 0 {
        return BitString::zeros(out_len);
    }
    let r_len = n + out_len - 1;
    let mut rng = rng_from_seed(seed);
    let r = BitString::from_words(
        (0..r_len.div_ceil(64)).map(|_| rng.next_u64()).collect(),
        r_len,
    );
    // Row i against the reversed key is a sliding window of r at offset i.
    let rev: BitString = (0..n).rev().map(|j| key.get(j)).collect();
    let words = rev.words();
    (0..out_len)
        .map(|i| {
            let mut acc = 0u32;
            for (w, &kw) in words.iter().enumerate() {
                acc ^= (r.word_at(i + 64 * w) & kw).count_ones();
            }
            acc & 1 == 1
        })
        .collect()
}

/// Compresses a reconciled key to its secret length with a seeded
/// Toeplitz hash.
pub fn privacy_amplify(
    key: &BitString,
    leaked_bits: u64,
    delta: f64,
    qber: f64,
    safety_margin: u64,
    hash_seed: u64,
) -> Result<SecretKey> {
    if key.is_empty() {
        return Err(QkdError::param("key", "needs at least one bit"));
    }
    let out_len = secret_key_length(key.len(), delta, qber, leaked_bits, safety_margin)?;
    Ok(SecretKey {
        bits: toeplitz_hash(key, out_len, hash_seed),
        input_len: key.len(),
        delta,
        qber,
        leaked_bits,
        safety_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn random_key(n: usize, seed: u64) -> BitString {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.random_bool(0.5)).collect()
    }

    #[test]
    fn length_example() {
        assert_eq!(secret_key_length(1000, 0.0042, 0.03, 300, 30).unwrap(), 471);
        let k = privacy_amplify(&random_key(1000, 1), 300, 0.0042, 0.03, 30, 7).unwrap();
        assert_eq!(k.len(), 471);
        assert!(!k.is_zero_length());
    }

    #[test]
    fn leakage_beyond_key_gives_empty() {
        let k = privacy_amplify(&random_key(500, 2), 500, 0.0, 0.01, 30, 7).unwrap();
        assert!(k.is_zero_length());
        assert_eq!(secret_key_length(100, 0.0, 0.3, 0, 0).unwrap(), 11);
        assert_eq!(secret_key_length(100, 0.0, 0.3, 11, 0).unwrap(), 0);
        assert_eq!(secret_key_length(100, 0.5, 0.3, 0, 0).unwrap(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let key = random_key(100, 3);
        assert!(privacy_amplify(&BitString::zeros(0), 0, 0.0, 0.01, 30, 1).is_err());
        assert!(privacy_amplify(&key, 0, 1.0, 0.01, 30, 1).is_err());
        assert!(privacy_amplify(&key, 0, 0.0, 0.5, 30, 1).is_err());
        assert!(privacy_amplify(&key, 0, 0.6, 0.45, 30, 1).is_err());
    }

    #[test]
    fn matches_naive_matrix_product() {
        let key = random_key(150, 4);
        let out = toeplitz_hash(&key, 70, 9);
        let mut rng = rng_from_seed(9);
        let r_len: usize = 150 + 70 - 1;
        let r = BitString::from_words(
            (0..r_len.div_ceil(64)).map(|_| rng.next_u64()).collect(),
            r_len,
        );
        for i in 0..70 {
            let p = (0..150).fold(false, |acc, j| acc ^ (r.get(i + 150 - 1 - j) & key.get(j)));
            assert_eq!(out.get(i), p, "row {i}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let key = random_key(800, 5);
        assert_eq!(toeplitz_hash(&key, 300, 1), toeplitz_hash(&key, 300, 1));
        assert_ne!(toeplitz_hash(&key, 300, 1), toeplitz_hash(&key, 300, 2));
    }

    #[test]
    fn avalanche() {
        let trials = 1000;
        let (n, m) = (256, 128);
        let mut rng = rng_from_seed(6);
        let mut changed = 0usize;
        for t in 0..trials {
            let key = random_key(n, 1000 + t);
            let mut flipped = key.clone();
            flipped.flip(rng.random_range(0..n));
            let seed = rng.next_u64();
            changed +=
                toeplitz_hash(&key, m, seed).hamming_distance(&toeplitz_hash(&flipped, m, seed));
        }
        let frac = changed as f64 / (trials as usize * m) as f64;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    proptest! {
        #[test]
        fn linear_over_gf2(n in 1usize..400, m in 1usize..200, sa in any::<u64>(), sb in any::<u64>(), seed in any::<u64>()) {
            let a = random_key(n, sa);
            let b = random_key(n, sb);
            let lhs = toeplitz_hash(&a.xor(&b), m, seed);
            let rhs = toeplitz_hash(&a, m, seed).xor(&toeplitz_hash(&b, m, seed));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn length_formula_bounds(n in 1usize..100_000, delta in 0.0f64..0.9, qber in 0.0f64..0.49, leaked in 0u64..50_000) {
            prop_assume!(qber / (1.0 - delta) < 1.0);
            let len = secret_key_length(n, delta, qber, leaked, DEFAULT_SAFETY_MARGIN).unwrap();
            prop_assert!(len <= n.saturating_sub((leaked + DEFAULT_SAFETY_MARGIN) as usize));
        }
    }
}
