//! Network state: a fixed-width bit vector over the N genes.
//!
//! Bits are packed MSB-first: node 1 occupies the most significant bit of the
//! first word. With that layout the derived lexicographic ordering on the
//! words coincides with the numeric ordering of the printed bit string
//! (`"1001001"` reads node 1 first), and for N <= 64 the integer index is a
//! single shift away.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::PbnError;

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetworkState {
    words: Vec<u64>,
    len: usize,
}

impl NetworkState {
    /// All-zero state of width `len`.
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(WORD).max(1)],
            len,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    /// Decodes a state index using the canonical ordering (node 1 = MSB).
    pub fn from_index(len: usize, index: u64) -> Self {
        assert!(len <= 64, "integer encoding only defined for N <= 64");
        assert!(len == 64 || index >> len == 0, "index out of range for width {len}");
        let mut s = Self::zeros(len);
        if len > 0 {
            s.words[0] = index << (WORD - len);
        }
        s
    }

    /// Uniform random state.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(len);
        for i in 0..len {
            s.set(i, rng.gen::<bool>());
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit of node `i` (0-based).
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / WORD] >> (WORD - 1 - i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (WORD - 1 - i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    #[inline]
    pub fn toggle(&mut self, i: usize) {
        self.words[i / WORD] ^= 1u64 << (WORD - 1 - i % WORD);
    }

    /// Integer index in `[0, 2^N)`; `None` when N > 64.
    pub fn index(&self) -> Option<u64> {
        match self.len {
            0 => Some(0),
            1..=64 => Some(self.words[0] >> (WORD - self.len)),
            _ => None,
        }
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Writes the bits as 0.0/1.0 into `out`, the network input encoding.
    pub fn write_f64(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len);
        for (i, o) in out.iter_mut().enumerate() {
            *o = if self.get(i) { 1.0 } else { 0.0 };
        }
    }

    /// Flips node `node` (1-based); `0` means no intervention.
    pub fn intervene(&self, node: usize) -> Result<Self, PbnError> {
        if node > self.len {
            return Err(PbnError::NodeOutOfRange {
                node,
                n_nodes: self.len,
            });
        }
        let mut next = self.clone();
        if node > 0 {
            next.toggle(node - 1);
        }
        Ok(next)
    }
}

/// Flips bit `node` (1-based) of `state`; `node == 0` returns the state unchanged.
pub fn apply_intervention(state: &NetworkState, node: usize) -> Result<NetworkState, PbnError> {
    state.intervene(node)
}

impl fmt::Display for NetworkState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for NetworkState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NetworkState({self})")
    }
}

impl FromStr for NetworkState {
    type Err = PbnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(PbnError::Parse(format!("invalid state string {s:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_bits(&bits))
    }
}

impl Serialize for NetworkState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NetworkState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
