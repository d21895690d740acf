//! Seeded randomness: per-task seed derivation and the bit-source
//! abstraction used for Alice's and Bob's choices.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QkdError, Result};

/// The deterministic generator used throughout the toolkit.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for task `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// `rng_from_seed(derive_seed(master, index))`.
pub fn task_rng(master: u64, index: u64) -> SimRng {
    rng_from_seed(derive_seed(master, index))
}

/// A stream of uniformly random bits for protocol choices
/// (Alice's bit and basis, Bob's basis).
pub trait BitSource {
    fn next_bit(&mut self) -> Result<bool>;
}

/// Bits drawn from any `RngCore`, 64 at a time.
pub struct RngBits<R> {
    rng: R,
    buf: u64,
    left: u32,
}

impl<R: RngCore> RngBits<R> {
    pub fn new(rng: R) -> Self {
        RngBits {
            rng,
            buf: 0,
            left: 0,
        }
    }
}

impl<R: RngCore> BitSource for RngBits<R> {
    #[inline]
    fn next_bit(&mut self) -> Result<bool> {
        if self.left == 0 {
            self.buf = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.buf & 1 == 1;
        self.buf >>= 1;
        self.left -= 1;
        Ok(b)
    }
}

/// Raw bits read from a file (e.g. dumped from a hardware QRNG).
/// Bits are consumed LSB-first from each byte. Running out is an error;
/// bits are never recycled.
pub struct EntropyFile {
    bytes: Vec<u8>,
    pos: u64,
}

impl EntropyFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_bytes(std::fs::read(path)?))
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        EntropyFile { bytes, pos: 0 }
    }

    pub fn remaining_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8 - self.pos
    }
}

impl BitSource for EntropyFile {
    fn next_bit(&mut self) -> Result<bool> {
        let byte = self
            .bytes
            .get((self.pos / 8) as usize)
            .ok_or(QkdError::EntropyExhausted { consumed: self.pos })?;
        let b = (byte >> (self.pos % 8)) & 1 == 1;
        self.pos += 1;
        Ok(b)
    }
}
