// SPDX-License-Identifier: Apache-2.0

//! Arithmetic in `Z_t` for a plaintext modulus below `2^62`.
//!
//! Products are reduced with Barrett reduction so that the hot loops of the
//! reference backend never execute a 128-bit division.

use serde::{Deserialize, Serialize};

/// Largest supported modulus bit width.
pub const MAX_MODULUS_BITS: u32 = 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Modulus {
    value: u64,
    bits: u32,
    barrett: u128,
}

impl From<Modulus> for u64 {
    fn from(m: Modulus) -> u64 {
        m.value
    }
}

impl TryFrom<u64> for Modulus {
    type Error = String;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        Modulus::new(value).ok_or_else(|| format!("unsupported modulus {value}"))
    }
}

impl Modulus {
    /// Returns `None` unless `2 <= value < 2^62`.
    pub fn new(value: u64) -> Option<Self> {
        if value < 2 || value >> MAX_MODULUS_BITS != 0 {
            return None;
        }
        let bits = 64 - value.leading_zeros();
        let barrett = (1u128 << (2 * bits)) / value as u128;
        Some(Self {
            value,
            bits,
            barrett,
        })
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    /// Bit width of the modulus, `⌈log₂(t+1)⌉`.
    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// `⌊log₂ t⌋`: the number of bits that always fit into one slot.
    #[inline]
    pub fn slot_bits(&self) -> u32 {
        self.bits - 1
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        if x < self.value {
            x
        } else {
            x % self.value
        }
    }

    /// Reduces `x < t^2`.
    #[inline]
    pub fn reduce_wide(&self, x: u128) -> u64 {
        let k = self.bits;
        let q = ((x >> (k - 1)) * self.barrett) >> (k + 1);
        let mut r = x - q * self.value as u128;
        while r >= self.value as u128 {
            r -= self.value as u128;
        }
        r as u64
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_wide(a as u128 * b as u128)
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.value;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let (mut r0, mut r1) = (self.value as i128, self.reduce(a) as i128);
        let (mut s0, mut s1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (s0, s1) = (s1, s0 - q * s1);
        }
        if r0 != 1 {
            return None;
        }
        Some(s0.rem_euclid(self.value as i128) as u64)
    }

    /// Maps a signed integer into `[0, t)`.
    pub fn from_i64(&self, x: i64) -> u64 {
        x.rem_euclid(self.value as i64) as u64
    }
}

/// Deterministic Miller-Rabin, exact for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime `p >= 2^(bits-1)` with `p ≡ 1 (mod congruence)`.
pub fn batching_prime(bits: u32, congruence: u64) -> Option<u64> {
    if !(2..=MAX_MODULUS_BITS).contains(&bits) || congruence == 0 {
        return None;
    }
    let lo = 1u64 << (bits - 1);
    let hi = 1u64 << bits;
    let mut p = (lo / congruence) * congruence + 1;
    if p < lo {
        p += congruence;
    }
    while p < hi {
        if is_prime(p) {
            return Some(p);
        }
        p += congruence;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_primes() {
        let primes: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(
            primes,
            vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]
        );
        assert!(is_prime(257));
        assert!(!is_prime(3215031751)); // strong pseudoprime to bases 2,3,5,7
    }

    #[test]
    fn batching_prime_has_congruence() {
        let p = batching_prime(40, 1 << 16).unwrap();
        assert!(is_prime(p));
        assert_eq!(p % (1 << 16), 1);
        assert_eq!(64 - p.leading_zeros(), 40);
    }

    #[test]
    fn inverse_of_factorials() {
        let m = Modulus::new(257).unwrap();
        for a in 1..257 {
            let inv = m.inv(a).unwrap();
            assert_eq!(m.mul(a, inv), 1);
        }
        assert_eq!(m.inv(0), None);
    }

    proptest! {
        #[test]
        fn barrett_matches_u128_rem(t in 2u64..(1 << 62), a in any::<u64>(), b in any::<u64>()) {
            let m = Modulus::new(t).unwrap();
            let (a, b) = (a % t, b % t);
            prop_assert_eq!(m.mul(a, b), ((a as u128 * b as u128) % t as u128) as u64);
        }
    }
}
