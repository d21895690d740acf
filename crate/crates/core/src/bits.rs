//! Packed bit strings used for keys, hashes and parity bookkeeping.

use std::fmt;

/// A fixed-length string of bits packed into 64-bit words, LSB first.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut out = BitString::default();
        for b in bits {
            out.push(b);
        }
        out
    }

    /// Parses a string of `0`/`1` characters; whitespace is ignored.
    pub fn parse(text: &str) -> Option<Self> {
        let mut out = BitString::default();
        for c in text.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                c if c.is_whitespace() => {}
                _ => return None,
            }
        }
        Some(out)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn push(&mut self, value: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Parity of the whole string.
    pub fn parity(&self) -> bool {
        self.words
            .iter()
            .fold(0u32, |acc, w| acc ^ (w.count_ones() & 1))
            == 1
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming_distance(&self, other: &BitString) -> usize {
        assert_eq!(self.len, other.len, "hamming distance of unequal lengths");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len, other.len, "xor of unequal lengths");
        BitString {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
            len: self.len,
        }
    }

    /// Parity of `self AND mask`.
    pub fn masked_parity(&self, mask: &BitString) -> bool {
        assert_eq!(self.len, mask.len);
        self.words
            .iter()
            .zip(&mask.words)
            .fold(0u32, |acc, (a, m)| acc ^ ((a & m).count_ones() & 1))
            == 1
    }

    /// Extracts 64 bits starting at `offset`; bits past the end read as zero.
    #[inline]
    pub fn word_at(&self, offset: usize) -> u64 {
        let w = offset >> 6;
        let s = offset & 63;
        let lo = self.words.get(w).copied().unwrap_or(0);
        if s == 0 {
            lo
        } else {
            let hi = self.words.get(w + 1).copied().unwrap_or(0);
            (lo >> s) | (hi << (64 - s))
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Self {
        assert!(words.len() * 64 >= len);
        let mut out = BitString { words, len };
        out.words.truncate(len.div_ceil(64));
        if len % 64 != 0 {
            let last = out.words.len() - 1;
            out.words[last] &= (1u64 << (len % 64)) - 1;
        }
        out
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.iter().collect()
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString[{}](", self.len)?;
        for b in self.iter().take(64) {
            f.write_str(if b { "1" } else { "0" })?;
        }
        if self.len > 64 {
            f.write_str("…")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        BitString::from_bools(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_get_flip() {
        let mut b = BitString::default();
        for i in 0..130 {
            b.push(i % 3 == 0);
        }
        assert_eq!(b.len(), 130);
        assert!(b.get(129));
        assert!(!b.get(128));
        b.flip(128);
        assert!(b.get(128));
        assert_eq!(b.count_ones(), 45);
    }

    #[test]
    fn word_at_crosses_boundaries() {
        let b = BitString::from_bools((0..100).map(|i| i == 63 || i == 64 || i == 99));
        assert_eq!(b.word_at(63) & 0b11, 0b11);
        assert_eq!(b.word_at(60), 0b11 << 3 | 1 << 39);
        assert_eq!(b.word_at(99), 1);
    }

    #[test]
    fn parse_and_display() {
        let b = BitString::parse("10 11\n0").unwrap();
        assert_eq!(b.to_string(), "10110");
        assert!(BitString::parse("102").is_none());
        assert!(b.parity());
    }
}
