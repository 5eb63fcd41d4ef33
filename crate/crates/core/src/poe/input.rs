use rand::Rng;

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::RandomStream;

/// A packed bit string, MSB-first within each byte.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bytes: vec![0; len.div_ceil(8)],
            len,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Self::new();
        for &b in bits {
            s.push(b);
        }
        s
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse_binary(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::domain(format!("`{c}` is not a bit"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(|bits| Self::from_bits(&bits))
    }

    pub fn random(len: usize, rng: &mut RandomStream) -> Self {
        let mut s = Self::new();
        for _ in 0..len {
            s.push(rng.random());
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 1 << (7 - self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        (i < self.len).then(|| self.bytes[i / 8] >> (7 - i % 8) & 1 == 1)
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range");
        self.bytes[i / 8] ^= 1 << (7 - i % 8);
    }

    pub fn extend(&mut self, other: &BitString) {
        for i in 0..other.len {
            self.push(other.get(i).expect("in range"));
        }
    }

    /// Unsigned value of bits `start..start + width`, MSB-first.
    pub fn uint(&self, start: usize, width: usize) -> Option<u64> {
        if start + width > self.len {
            return None;
        }
        Some((start..start + width).fold(0, |acc, i| acc << 1 | self.get(i).unwrap() as u64))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    /// Inverse of [`to_hex`](Self::to_hex); padding bits must be zero.
    pub fn from_hex(hex_str: &str, len: usize) -> Result<Self> {
        let bytes =
            hex::decode(hex_str).map_err(|e| Error::malformed("bit string", e.to_string()))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::malformed(
                "bit string",
                "length does not match bit count",
            ));
        }
        if !len.is_multiple_of(8) && bytes[len / 8] & (0xff >> (len % 8)) != 0 {
            return Err(Error::malformed("bit string", "nonzero padding bits"));
        }
        Ok(Self { bytes, len })
    }
}

/// Bits of client randomness and of block hash consumed per round.
pub fn bits_per_setting(n: usize) -> usize {
    assert!(n >= 2, "need at least two settings");
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// `ceil(log2 n)` hash bits starting at `round_index * width`, wrapping around
/// the 256-bit digest.
pub fn hash_window(block_hash: &Digest, round_index: u64, width: usize) -> u64 {
    let start = (round_index % Digest::BITS as u64) as usize * width;
    (0..width).fold(0, |acc, i| {
        acc << 1 | block_hash.bit((start + i) % Digest::BITS) as u64
    })
}

/// Combines one round's client bits with the block hash:
/// `k = (uint(client bits) + uint(hash window)) mod n`.
pub fn combine(client_bits: u64, block_hash: &Digest, round_index: u64, n: usize) -> usize {
    let width = bits_per_setting(n);
    ((client_bits + hash_window(block_hash, round_index, width)) % n as u64) as usize
}

/// Setting index of round `round_index` from a recorded client transcript,
/// which holds `ceil(log2 n)` bits per kept round.
pub fn derive_input(
    qrng: &BitString,
    block_hash: &Digest,
    round_index: u64,
    n: usize,
) -> Result<usize> {
    let width = bits_per_setting(n);
    let start = usize::try_from(round_index)
        .ok()
        .and_then(|r| r.checked_mul(width))
        .ok_or_else(|| Error::malformed("certificate", "round index overflows"))?;
    let bits = qrng.uint(start, width).ok_or_else(|| {
        Error::malformed(
            "certificate",
            format!("client randomness exhausted at round {round_index}"),
        )
    })?;
    Ok(combine(bits, block_hash, round_index, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::random_stream;
    use proptest::prelude::*;

    /// A hash whose leading bits are `prefix`, the rest zero.
    fn hash_with_prefix(prefix: &str) -> Digest {
        let mut h = Digest::ZERO;
        for (i, c) in prefix.chars().enumerate() {
            if c == '1' {
                h = h.with_bit_flipped(i);
            }
        }
        h
    }

    #[test]
    fn widths() {
        assert_eq!(bits_per_setting(2), 1);
        assert_eq!(bits_per_setting(3), 2);
        assert_eq!(bits_per_setting(4), 2);
        assert_eq!(bits_per_setting(6), 3);
        assert_eq!(bits_per_setting(8), 3);
        assert_eq!(bits_per_setting(10), 4);
        assert_eq!(bits_per_setting(16), 4);
    }

    #[test]
    fn modular_sum_example() {
        let qrng = BitString::parse_binary("101").unwrap();
        let hash = hash_with_prefix("110");
        assert_eq!(derive_input(&qrng, &hash, 0, 8).unwrap(), 3);
    }

    #[test]
    fn zero_client_bits_reduce_to_hash() {
        let hash = hash_with_prefix("10110100");
        let qrng = BitString::zeros(8);
        let expected = [2, 3, 1, 0];
        for (r, &e) in expected.iter().enumerate() {
            assert_eq!(derive_input(&qrng, &hash, r as u64, 4).unwrap(), e);
        }
    }

    #[test]
    fn hash_window_wraps() {
        // round 85 with width 3 starts at bit 255 and wraps to bits 0, 1
        let hash = hash_with_prefix("01").with_bit_flipped(255);
        assert_eq!(hash_window(&hash, 85, 3), 0b101);
    }

    #[test]
    fn exhausted_transcript_is_malformed() {
        let qrng = BitString::parse_binary("1011").unwrap();
        assert!(derive_input(&qrng, &Digest::ZERO, 1, 4).is_ok());
        assert!(matches!(
            derive_input(&qrng, &Digest::ZERO, 2, 4),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn hex_round_trip_and_padding() {
        let mut rng = random_stream(3, 0);
        for len in [0, 1, 7, 8, 9, 64, 1001] {
            let s = BitString::random(len, &mut rng);
            assert_eq!(BitString::from_hex(&s.to_hex(), len).unwrap(), s);
        }
        assert!(BitString::from_hex("ff", 7).is_err());
        assert!(BitString::from_hex("fe", 7).is_ok());
    }

    proptest! {
        /// Any single flipped hash bit changes the setting of every round
        /// that reads it, for every supported n.
        #[test]
        fn hash_bit_flip_changes_setting(bits in any::<u64>(), round in 0u64..1000, pick in 0usize..4) {
            for n in [2usize, 3, 4, 6, 10, 16] {
                let width = bits_per_setting(n);
                let client = bits & ((1 << width) - 1);
                let hash = Digest::of(&bits.to_be_bytes());
                let start = (round % 256) as usize * width;
                let flipped = hash.with_bit_flipped((start + pick % width) % 256);
                prop_assert_ne!(
                    combine(client, &hash, round, n),
                    combine(client, &flipped, round, n)
                );
            }
        }
    }
}
