//! CASCADE reconciliation and privacy amplification.
//!
//! Bob drives the protocol and only ever learns parities of Alice's key
//! through a [`ParityOracle`]. Every message crossing the classical channel
//! is logged in a [`Transcript`], so the leakage charged to privacy
//! amplification is exactly what the transcript shows.

mod privacy;
pub mod transcript;

pub use privacy::{
    privacy_amplify, secret_key_length, toeplitz_hash, SecretKey, DEFAULT_SAFETY_MARGIN,
};
pub use transcript::{Message, Transcript};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::bits::BitString;
use crate::error::{QkdError, Result};
use crate::random::{derive_seed, rng_from_seed};

pub const DEFAULT_PASSES: usize = 4;
pub const DEFAULT_VERIFY_BITS: u8 = 50;
/// Shortest key the protocol accepts.
pub const MIN_KEY_BITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconciliationConfig {
    /// Prior QBER estimate, sets the first-pass block size.
    pub est_qber: f64,
    pub n_passes: usize,
    /// Overrides `ceil(0.73 / est_qber)` when set.
    pub k1: Option<usize>,
    pub shuffle_seed: u64,
    /// Size of the final random-subset parity hash; 0 disables verification.
    pub verify_bits: u8,
}

impl ReconciliationConfig {
    pub fn new(est_qber: f64, shuffle_seed: u64) -> Self {
        ReconciliationConfig {
            est_qber,
            n_passes: DEFAULT_PASSES,
            k1: None,
            shuffle_seed,
            verify_bits: DEFAULT_VERIFY_BITS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.est_qber > 0.0 && self.est_qber < 0.5) {
            return Err(QkdError::param(
                "est_qber",
                format!("must lie in (0, 0.5), got {}", self.est_qber),
            ));
        }
        if self.n_passes < 2 {
            return Err(QkdError::param(
                "n_passes",
                format!("must be >= 2, got {}", self.n_passes),
            ));
        }
        if self.k1 == Some(0) {
            return Err(QkdError::param("k1", "must be >= 1"));
        }
        if self.verify_bits > 64 {
            return Err(QkdError::param(
                "verify_bits",
                format!("must be <= 64, got {}", self.verify_bits),
            ));
        }
        Ok(())
    }

    pub fn initial_block_size(&self) -> usize {
        self.k1
            .unwrap_or_else(|| (0.73 / self.est_qber).ceil() as usize)
            .max(1)
    }

    /// Block size of `pass` (0-based) on an `n`-bit key.
    pub fn block_size(&self, pass: usize, n: usize) -> usize {
        let k = self.initial_block_size();
        let doubled = k.checked_shl(pass as u32).filter(|&v| v >> pass == k);
        doubled.unwrap_or(usize::MAX).min(n).max(1)
    }

    pub fn pass_seed(&self, pass: usize) -> u64 {
        derive_seed(self.shuffle_seed, pass as u64)
    }

    fn verify_seed(&self) -> u64 {
        derive_seed(self.shuffle_seed, u64::MAX)
    }
}

/// Order in which `pass` visits the key: identity for pass 0, a seeded
/// Fisher-Yates shuffle afterwards.
pub fn pass_permutation(n: usize, pass: usize, seed: u64) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    if pass > 0 {
        perm.shuffle(&mut rng_from_seed(seed));
    }
    perm
}

/// `n_bits` parities of seeded random subsets of `key`, bit `i` of the
/// result holding subset `i`.
pub fn subset_parity_hash(key: &BitString, seed: u64, n_bits: u8) -> u64 {
    let mut rng = rng_from_seed(seed);
    let mut hash = 0u64;
    for i in 0..u32::from(n_bits) {
        let mut acc = 0u32;
        for &w in key.words() {
            acc ^= (w & rng.next_u64()).count_ones();
        }
        hash |= u64::from(acc & 1) << i;
    }
    hash
}

fn permuted_parity(key: &BitString, perm: &[u32], start: usize, end: usize) -> bool {
    perm[start..end]
        .iter()
        .fold(false, |p, &i| p ^ key.get(i as usize))
}

/// Alice's side of the protocol.
pub trait ParityOracle {
    fn key_len(&self) -> usize;

    /// Answers a parity request (with a reply) or absorbs a shuffle seed
    /// (no reply).
    fn handle(&mut self, msg: &Message) -> Result<Option<Message>>;

    /// Alice's verification hash, sent unsolicited at the end.
    fn verification(&mut self, seed: u64, n_bits: u8) -> Result<Message>;
}

/// In-process Alice holding her key.
pub struct LocalAlice {
    key: BitString,
    perms: Vec<Vec<u32>>,
}

impl LocalAlice {
    pub fn new(key: BitString) -> Self {
        let identity = pass_permutation(key.len(), 0, 0);
        LocalAlice {
            key,
            perms: vec![identity],
        }
    }
}

impl ParityOracle for LocalAlice {
    fn key_len(&self) -> usize {
        self.key.len()
    }

    fn handle(&mut self, msg: &Message) -> Result<Option<Message>> {
        match *msg {
            Message::ShuffleSeed { pass, seed } => {
                let pass = usize::from(pass);
                if pass != self.perms.len() {
                    return Err(QkdError::Transcript(format!(
                        "shuffle seed for pass {pass} while expecting pass {}",
                        self.perms.len()
                    )));
                }
                self.perms
                    .push(pass_permutation(self.key.len(), pass, seed));
                Ok(None)
            }
            Message::ParityRequest { pass, start, end } => {
                let perm = self.perms.get(usize::from(pass)).ok_or_else(|| {
                    QkdError::Transcript(format!("parity request for unannounced pass {pass}"))
                })?;
                let (start, end) = (start as usize, end as usize);
                if start >= end || end > perm.len() {
                    return Err(QkdError::Transcript(format!(
                        "bad parity range [{start}, {end})"
                    )));
                }
                Ok(Some(Message::ParityReply {
                    parity: permuted_parity(&self.key, perm, start, end),
                }))
            }
            other => Err(QkdError::Transcript(format!(
                "Alice cannot handle {other:?}"
            ))),
        }
    }

    fn verification(&mut self, seed: u64, n_bits: u8) -> Result<Message> {
        Ok(Message::VerifyHash {
            seed,
            n_bits,
            hash: subset_parity_hash(&self.key, seed, n_bits),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationOutcome {
    pub corrected_bob_key: BitString,
    /// Every parity bit and hash bit disclosed.
    pub leaked_bits: u64,
    pub corrections_made: usize,
    /// Final hash matched; always false when verification is disabled.
    pub verified_equal: bool,
    pub block_sizes: Vec<usize>,
    pub transcript: Transcript,
}

impl ReconciliationOutcome {
    /// Leakage relative to the Shannon limit `n H2(qber)`.
    pub fn efficiency(&self, qber: f64) -> Option<f64> {
        let n = self.corrected_bob_key.len() as f64;
        let h = crate::rates::binary_entropy(qber).ok()?;
        (h > 0.0).then(|| self.leaked_bits as f64 / (n * h))
    }
}

/// Locates one differing bit between blocks whose parities differ, by
/// bisection. Returns the position and the number of parities revealed,
/// at most `ceil(log2(len))`.
pub fn binary_bisect(alice_block: &BitString, bob_block: &BitString) -> Result<(usize, usize)> {
    if alice_block.len() != bob_block.len() {
        return Err(QkdError::LengthMismatch {
            alice: alice_block.len(),
            bob: bob_block.len(),
        });
    }
    if alice_block.is_empty() || alice_block.parity() == bob_block.parity() {
        return Err(QkdError::ContractViolation(
            "binary bisection needs blocks with odd parity difference".into(),
        ));
    }
    let range_parity = |k: &BitString, s: usize, e: usize| (s..e).fold(false, |p, i| p ^ k.get(i));
    bisect_by(
        alice_block.len(),
        |s, e| Ok(range_parity(alice_block, s, e)),
        |s, e| range_parity(bob_block, s, e),
    )
}

fn bisect_by(
    len: usize,
    mut alice: impl FnMut(usize, usize) -> Result<bool>,
    bob: impl Fn(usize, usize) -> bool,
) -> Result<(usize, usize)> {
    let (mut s, mut e) = (0, len);
    let mut asked = 0;
    while e - s > 1 {
        let mid = s + (e - s).div_ceil(2);
        asked += 1;
        if alice(s, mid)? != bob(s, mid) {
            e = mid;
        } else {
            s = mid;
        }
    }
    Ok((s, asked))
}

/// Runs CASCADE with an in-process Alice.
///
/// Bob remembers every parity Alice has disclosed and never asks for the
/// same range twice.
pub fn cascade(
    alice_key: &BitString,
    bob_key: &BitString,
    cfg: &ReconciliationConfig,
) -> Result<ReconciliationOutcome> {
    if alice_key.len() != bob_key.len() {
        return Err(QkdError::LengthMismatch {
            alice: alice_key.len(),
            bob: bob_key.len(),
        });
    }
    reconcile(bob_key, cfg, &mut LocalAlice::new(alice_key.clone()))
}

struct Bob<'a> {
    alice: &'a mut dyn ParityOracle,
    transcript: Transcript,
    /// Alice parities already disclosed, keyed by (pass, start, end).
    known: HashMap<(usize, usize, usize), bool>,
}

impl Bob<'_> {
    fn ask(&mut self, pass: usize, start: usize, end: usize) -> Result<bool> {
        if let Some(&p) = self.known.get(&(pass, start, end)) {
            return Ok(p);
        }
        let req = Message::ParityRequest {
            pass: pass as u8,
            start: start as u32,
            end: end as u32,
        };
        self.transcript.push(req);
        match self.alice.handle(&req)? {
            Some(reply @ Message::ParityReply { parity }) => {
                self.transcript.push(reply);
                self.known.insert((pass, start, end), parity);
                Ok(parity)
            }
            other => Err(QkdError::Transcript(format!(
                "expected a parity reply, got {other:?}"
            ))),
        }
    }

    fn announce(&mut self, pass: usize, seed: u64) -> Result<()> {
        let msg = Message::ShuffleSeed {
            pass: pass as u8,
            seed,
        };
        self.transcript.push(msg);
        match self.alice.handle(&msg)? {
            None => Ok(()),
            Some(other) => Err(QkdError::Transcript(format!(
                "unexpected reply {other:?} to shuffle seed"
            ))),
        }
    }
}

/// Bob's side of CASCADE against any Alice implementation.
pub fn reconcile(
    bob_key: &BitString,
    cfg: &ReconciliationConfig,
    alice: &mut dyn ParityOracle,
) -> Result<ReconciliationOutcome> {
    cfg.validate()?;
    let n = bob_key.len();
    if alice.key_len() != n {
        return Err(QkdError::LengthMismatch {
            alice: alice.key_len(),
            bob: n,
        });
    }
    if n < MIN_KEY_BITS {
        return Err(QkdError::param(
            "key",
            format!("needs at least {MIN_KEY_BITS} bits, got {n}"),
        ));
    }
    if n > u32::MAX as usize || cfg.n_passes > 256 {
        return Err(QkdError::param("key", "too long for the wire format"));
    }

    let mut bob = Bob {
        alice,
        transcript: Transcript::default(),
        known: HashMap::new(),
    };
    let mut key = bob_key.clone();
    let mut perms: Vec<Vec<u32>> = Vec::with_capacity(cfg.n_passes);
    let mut inverse: Vec<Vec<u32>> = Vec::with_capacity(cfg.n_passes);
    let mut sizes = Vec::with_capacity(cfg.n_passes);
    let mut alice_top: Vec<Vec<bool>> = Vec::with_capacity(cfg.n_passes);
    let mut bob_top: Vec<Vec<bool>> = Vec::with_capacity(cfg.n_passes);
    let mut corrections = 0;

    for pass in 0..cfg.n_passes {
        let size = cfg.block_size(pass, n);
        let seed = cfg.pass_seed(pass);
        if pass > 0 {
            bob.announce(pass, seed)?;
        }
        let perm = pass_permutation(n, pass, seed);
        let mut inv = vec![0u32; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p as usize] = i as u32;
        }
        let n_blocks = n.div_ceil(size);
        let mut a_top = Vec::with_capacity(n_blocks);
        let mut b_top = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let (s, e) = (b * size, ((b + 1) * size).min(n));
            a_top.push(bob.ask(pass, s, e)?);
            b_top.push(permuted_parity(&key, &perm, s, e));
        }
        let mut pending: Vec<(usize, usize)> = (0..n_blocks)
            .filter(|&b| a_top[b] != b_top[b])
            .map(|b| (pass, b))
            .collect();
        perms.push(perm);
        inverse.push(inv);
        sizes.push(size);
        alice_top.push(a_top);
        bob_top.push(b_top);

        while let Some((p, b)) = pending.pop() {
            if alice_top[p][b] == bob_top[p][b] {
                continue;
            }
            let (s, e) = (b * sizes[p], ((b + 1) * sizes[p]).min(n));
            let perm = &perms[p];
            let (offset, _) = {
                let key_ref = &key;
                bisect_by(
                    e - s,
                    |ls, le| bob.ask(p, s + ls, s + le),
                    |ls, le| permuted_parity(key_ref, perm, s + ls, s + le),
                )?
            };
            let pos = perm[s + offset] as usize;
            key.flip(pos);
            corrections += 1;
            for i in 0..=pass {
                let blk = inverse[i][pos] as usize / sizes[i];
                bob_top[i][blk] ^= true;
                if alice_top[i][blk] != bob_top[i][blk] {
                    pending.push((i, blk));
                }
            }
        }
    }

    let verified_equal = if cfg.verify_bits > 0 {
        let seed = cfg.verify_seed();
        let msg = bob.alice.verification(seed, cfg.verify_bits)?;
        bob.transcript.push(msg);
        match msg {
            Message::VerifyHash { hash, .. } => {
                hash == subset_parity_hash(&key, seed, cfg.verify_bits)
            }
            other => {
                return Err(QkdError::Transcript(format!(
                    "expected a verify hash, got {other:?}"
                )))
            }
        }
    } else {
        false
    };

    Ok(ReconciliationOutcome {
        corrected_bob_key: key,
        leaked_bits: bob.transcript.leaked_bits(),
        corrections_made: corrections,
        verified_equal,
        block_sizes: sizes,
        transcript: bob.transcript,
    })
}

/// True when every block of every pass has equal parity in both keys.
pub fn block_parities_match(
    alice: &BitString,
    bob: &BitString,
    cfg: &ReconciliationConfig,
) -> bool {
    let n = alice.len();
    (0..cfg.n_passes).all(|pass| {
        let size = cfg.block_size(pass, n);
        let perm = pass_permutation(n, pass, cfg.pass_seed(pass));
        (0..n.div_ceil(size)).all(|b| {
            let (s, e) = (b * size, ((b + 1) * size).min(n));
            permuted_parity(alice, &perm, s, e) == permuted_parity(bob, &perm, s, e)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::transcript::TYPE_PARITY_REPLY;
    use super::*;
    use crate::random::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn bits(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    fn noisy_pair(n: usize, qber: f64, seed: u64) -> (BitString, BitString) {
        let mut rng = rng_from_seed(seed);
        let alice: BitString = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let mut bob = alice.clone();
        for i in 0..n {
            if rng.random_bool(qber) {
                bob.flip(i);
            }
        }
        (alice, bob)
    }

    #[test]
    fn bisect_examples() {
        assert_eq!(binary_bisect(&bits("1011"), &bits("1111")).unwrap(), (1, 2));
        assert_eq!(binary_bisect(&bits("1"), &bits("0")).unwrap(), (0, 0));
        assert!(matches!(
            binary_bisect(&bits("1011"), &bits("1011")),
            Err(QkdError::ContractViolation(_))
        ));
        assert!(binary_bisect(&bits("1001"), &bits("0110")).is_err());
        assert!(binary_bisect(&bits("10"), &bits("1")).is_err());
    }

    #[test]
    fn bisect_power_of_two_reveals_log2_parities() {
        for log in 0..10 {
            let n = 1usize << log;
            for pos in [0, n / 3, n - 1] {
                let a = BitString::zeros(n);
                let mut b = a.clone();
                b.flip(pos);
                assert_eq!(binary_bisect(&a, &b).unwrap(), (pos, log));
            }
        }
    }

    #[test]
    fn identical_keys_leak_only_top_level_parities() {
        let (alice, _) = noisy_pair(64, 0.0, 1);
        let mut cfg = ReconciliationConfig::new(0.03, 9);
        cfg.verify_bits = 0;
        let out = cascade(&alice, &alice, &cfg).unwrap();
        assert_eq!(out.corrections_made, 0);
        assert_eq!(out.corrected_bob_key, alice);
        let top: usize = out.block_sizes.iter().map(|&k| 64usize.div_ceil(k)).sum();
        assert_eq!(out.block_sizes, vec![25, 50, 64, 64]);
        assert_eq!(out.leaked_bits, top as u64);

        cfg.verify_bits = DEFAULT_VERIFY_BITS;
        let out = cascade(&alice, &alice, &cfg).unwrap();
        assert!(out.verified_equal);
        assert_eq!(out.leaked_bits, top as u64 + 50);
    }

    #[test]
    fn two_errors_in_32_bits() {
        let (alice, _) = noisy_pair(32, 0.0, 2);
        let mut bob = alice.clone();
        bob.flip(5);
        bob.flip(20);
        let out = cascade(&alice, &bob, &ReconciliationConfig::new(0.06, 3)).unwrap();
        assert_eq!(out.corrected_bob_key, alice);
        assert_eq!(out.corrections_made, 2);
        assert!(out.verified_equal);
    }

    #[test]
    fn validation() {
        let (a, b) = noisy_pair(64, 0.03, 3);
        assert!(cascade(
            &a,
            &BitString::zeros(63),
            &ReconciliationConfig::new(0.03, 1)
        )
        .is_err());
        assert!(cascade(&a, &b, &ReconciliationConfig::new(0.0, 1)).is_err());
        assert!(cascade(&a, &b, &ReconciliationConfig::new(0.5, 1)).is_err());
        let short = BitString::zeros(7);
        assert!(cascade(&short, &short, &ReconciliationConfig::new(0.03, 1)).is_err());
        let cfg = ReconciliationConfig {
            n_passes: 1,
            ..ReconciliationConfig::new(0.03, 1)
        };
        assert!(cascade(&a, &b, &cfg).is_err());
    }

    #[test]
    fn block_rule() {
        let cfg = ReconciliationConfig::new(0.03, 0);
        assert_eq!(cfg.initial_block_size(), 25);
        assert_eq!(cfg.block_size(3, 10_000), 200);
        assert_eq!(cfg.block_size(3, 100), 100);
        assert_eq!(ReconciliationConfig::new(0.4, 0).initial_block_size(), 2);
        assert_eq!(cfg.block_size(200, 10_000), 10_000);
    }

    #[test]
    fn leakage_matches_transcript_and_parities_agree() {
        let (alice, bob) = noisy_pair(5000, 0.05, 4);
        let cfg = ReconciliationConfig::new(0.05, 11);
        let out = cascade(&alice, &bob, &cfg).unwrap();
        let replies = out.transcript.count(TYPE_PARITY_REPLY) as u64;
        assert_eq!(out.leaked_bits, replies + u64::from(cfg.verify_bits));
        assert!(block_parities_match(&alice, &out.corrected_bob_key, &cfg));
        let decoded = Transcript::decode(&out.transcript.encode()).unwrap();
        assert_eq!(decoded, out.transcript);
        assert_eq!(decoded.leaked_bits(), out.leaked_bits);
    }

    #[test]
    fn verification_flags_residual_errors() {
        // A single pass-free case: force one undetectable double error in a block.
        let (alice, _) = noisy_pair(64, 0.0, 5);
        let mut bob = alice.clone();
        bob.flip(0);
        let out = cascade(&alice, &bob, &ReconciliationConfig::new(0.03, 5)).unwrap();
        assert_eq!(out.corrected_bob_key == alice, out.verified_equal);
        let mut wrong = out.corrected_bob_key.clone();
        wrong.flip(10);
        assert_ne!(
            subset_parity_hash(&alice, 1, 50),
            subset_parity_hash(&wrong, 1, 50),
        );
    }

    #[test]
    fn monte_carlo_residual_and_leakage() {
        let n = 10_000;
        let qber = 0.03;
        let trials = 100;
        let mut residual = 0usize;
        let mut leaked = 0u64;
        for t in 0..trials {
            let (alice, bob) = noisy_pair(n, qber, 100 + t);
            let out = cascade(&alice, &bob, &ReconciliationConfig::new(qber, 1000 + t)).unwrap();
            let left = out.corrected_bob_key.hamming_distance(&alice);
            assert_eq!(out.verified_equal, left == 0);
            residual += left;
            leaked += out.leaked_bits;
        }
        let ber = residual as f64 / (n as f64 * trials as f64);
        assert!(ber < 1e-3, "residual BER {ber}");
        let mean_leak = leaked as f64 / trials as f64;
        let bound = 1.3 * n as f64 * crate::rates::binary_entropy(qber).unwrap();
        assert!(mean_leak <= bound, "mean leakage {mean_leak} > {bound}");
    }

    #[test]
    fn remote_alice_rejects_out_of_order_passes() {
        let mut alice = LocalAlice::new(BitString::zeros(16));
        assert!(alice
            .handle(&Message::ShuffleSeed { pass: 2, seed: 0 })
            .is_err());
        assert!(alice
            .handle(&Message::ParityRequest {
                pass: 1,
                start: 0,
                end: 4
            })
            .is_err());
        assert!(alice
            .handle(&Message::ParityRequest {
                pass: 0,
                start: 4,
                end: 4
            })
            .is_err());
        assert!(alice
            .handle(&Message::ParityRequest {
                pass: 0,
                start: 0,
                end: 17
            })
            .is_err());
        assert!(alice
            .handle(&Message::ParityReply { parity: true })
            .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn corrects_sparse_errors(
            n in 64usize..600,
            qber in 0.01f64..0.08,
            seed in any::<u64>(),
        ) {
            let (alice, bob) = noisy_pair(n, qber, seed);
            let cfg = ReconciliationConfig::new(qber, seed ^ 1);
            let out = cascade(&alice, &bob, &cfg).unwrap();
            prop_assert!(block_parities_match(&alice, &out.corrected_bob_key, &cfg));
            prop_assert_eq!(out.verified_equal, out.corrected_bob_key == alice);
            prop_assert_eq!(
                out.leaked_bits,
                out.transcript.count(TYPE_PARITY_REPLY) as u64 + u64::from(cfg.verify_bits)
            );
        }

        #[test]
        fn bisect_finds_a_true_difference(
            a in proptest::collection::vec(any::<bool>(), 1..200),
            flips in proptest::collection::vec(any::<prop::sample::Index>(), 1..8),
        ) {
            let alice = BitString::from_bools(a.iter().copied());
            let mut bob = alice.clone();
            for f in &flips {
                bob.flip(f.index(a.len()));
            }
            prop_assume!(alice.parity() != bob.parity());
            let (pos, asked) = binary_bisect(&alice, &bob).unwrap();
            prop_assert_ne!(alice.get(pos), bob.get(pos));
            let ceil_log2 = (usize::BITS - (a.len() - 1).leading_zeros()) as usize;
            prop_assert!(asked <= ceil_log2);
        }
    }
}
