// SPDX-License-Identifier: Apache-2.0

//! Constant-weight codes and the arithmetic equality operator.
//!
//! Elements of `λ̄` bits are mapped to length-`ℓ` binary strings of Hamming
//! weight exactly `h`, where `ℓ` is the smallest length with
//! `C(ℓ, h) ≥ 2^λ̄`. Two such codewords share exactly `h` set bits iff they
//! are equal, so equality reduces to a degree-`h` polynomial in the inner
//! product of the bit vectors.
//!
//! Ranks are mapped to codewords in colexicographic order: the codeword with
//! set positions `c_1 < c_2 < … < c_h` has rank `Σ_j C(c_j, j)`. This
//! numbering is part of the stable encoding.

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher13;
use std::hash::Hasher;

use crate::backend::{SimdBackend, SimdVector};
use crate::error::{Error, Result};
use crate::modulus::Modulus;

/// Largest supported code length.
pub const MAX_CODE_LENGTH: u64 = 1 << 20;

/// Exact `C(n, k)`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::ZERO;
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Smallest `ℓ` with `C(ℓ, h) ≥ 2^bitlength`.
///
/// # Panics
///
/// If `bitlength` or `h` is zero, or if `h = 1` and `bitlength ≥ 64`.
pub fn code_length(bitlength: u32, h: u32) -> u64 {
    assert!(
        bitlength >= 1 && h >= 1,
        "bitlength and weight must be positive"
    );
    if h == 1 {
        assert!(
            bitlength < 64,
            "code length 2^{bitlength} does not fit in u64"
        );
        return 1u64 << bitlength;
    }
    let target = BigUint::one() << bitlength as usize;
    let h = h as u64;
    let mut hi = h;
    while binomial(hi, h) < target {
        hi *= 2;
    }
    let mut lo = h;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if binomial(mid, h) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// `C(n, k)` in 128 bits; callers guarantee no overflow.
fn binomial_u128(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeParams {
    bitlength: u32,
    hamming_weight: u32,
    code_length: u32,
}

impl CodeParams {
    pub fn new(bitlength: u32, hamming_weight: u32) -> Result<Self> {
        if !(1..=64).contains(&bitlength) {
            return Err(Error::InvalidParams(format!(
                "effective bitlength {bitlength} outside 1..=64"
            )));
        }
        if hamming_weight == 0 || (hamming_weight == 1 && bitlength > 20) {
            return Err(Error::InvalidParams(format!(
                "Hamming weight {hamming_weight} unusable at bitlength {bitlength}"
            )));
        }
        let len = code_length(bitlength, hamming_weight);
        if len > MAX_CODE_LENGTH {
            return Err(Error::InvalidParams(format!("code length {len} too large")));
        }
        Ok(Self {
            bitlength,
            hamming_weight,
            code_length: len as u32,
        })
    }

    /// Effective bitlength `λ̄` of the encoded values.
    pub fn bitlength(&self) -> u32 {
        self.bitlength
    }

    pub fn hamming_weight(&self) -> u32 {
        self.hamming_weight
    }

    pub fn code_length(&self) -> usize {
        self.code_length as usize
    }

    fn check_value(&self, x: u64) -> Result<()> {
        if self.bitlength < 64 && x >> self.bitlength != 0 {
            return Err(Error::ValueOutOfRange {
                value: x,
                bits: self.bitlength,
            });
        }
        Ok(())
    }

    /// Perfect mapping: the `x`-th weight-`h` string in colex order.
    pub fn encode(&self, x: u64) -> Result<Codeword> {
        self.check_value(x)?;
        Ok(self.unrank(x as u128))
    }

    fn unrank(&self, rank: u128) -> Codeword {
        let mut rest = rank;
        let mut ones = Vec::with_capacity(self.hamming_weight as usize);
        let mut bound = self.code_length as u64;
        for j in (1..=self.hamming_weight as u64).rev() {
            let mut c = bound - 1;
            let mut b = binomial_u128(c, j);
            while b > rest {
                // C(c-1, j) = C(c, j)·(c-j)/c
                b = b * (c - j) as u128 / c as u128;
                c -= 1;
            }
            ones.push(c as u32);
            rest -= b;
            bound = c;
        }
        ones.reverse();
        Codeword {
            len: self.code_length,
            ones,
        }
    }

    /// Inverse of [`encode`](Self::encode). Returns `None` for dummies and
    /// strings of the wrong weight or length.
    pub fn decode(&self, cw: &Codeword) -> Option<u64> {
        if cw.len != self.code_length || cw.ones.len() != self.hamming_weight as usize {
            return None;
        }
        let rank: u128 = cw
            .ones
            .iter()
            .enumerate()
            .map(|(j, &c)| binomial_u128(c as u64, j as u64 + 1))
            .sum();
        u64::try_from(rank)
            .ok()
            .filter(|&v| self.check_value(v).is_ok())
    }

    pub fn dummy(&self) -> Codeword {
        Codeword {
            len: self.code_length,
            ones: Vec::new(),
        }
    }
}

/// A length-`ℓ` bit string, stored as its sorted set positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Codeword {
    len: u32,
    ones: Vec<u32>,
}

impl Codeword {
    pub fn from_bits(bits: &[bool]) -> Self {
        Self {
            len: bits.len() as u32,
            ones: (0..bits.len() as u32)
                .filter(|&i| bits[i as usize])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn weight(&self) -> usize {
        self.ones.len()
    }

    pub fn is_dummy(&self) -> bool {
        self.ones.is_empty()
    }

    /// Set positions, ascending.
    pub fn ones(&self) -> &[u32] {
        &self.ones
    }

    pub fn bit(&self, i: usize) -> bool {
        self.ones.binary_search(&(i as u32)).is_ok()
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = vec![false; self.len as usize];
        for &i in &self.ones {
            bits[i as usize] = true;
        }
        bits
    }
}

/// Keyed truncating hash for the lossy mapping of arbitrary byte strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossyHasher {
    key: u128,
}

impl LossyHasher {
    pub fn new(key: u128) -> Self {
        Self { key }
    }

    pub fn key(&self) -> u128 {
        self.key
    }

    /// Low `bits` bits of the keyed hash of `data`.
    pub fn hash(&self, data: &[u8], bits: u32) -> u64 {
        let mut h = SipHasher13::new_with_keys(self.key as u64, (self.key >> 64) as u64);
        h.write(data);
        let v = h.finish();
        if bits >= 64 {
            v
        } else {
            v & ((1u64 << bits) - 1)
        }
    }
}

impl CodeParams {
    /// Lossy mapping: hash to `λ̄` bits, then encode.
    pub fn encode_lossy(&self, data: &[u8], hasher: &LossyHasher) -> Codeword {
        self.encode(hasher.hash(data, self.bitlength))
            .expect("hash is truncated to the bitlength")
    }
}

/// Precomputed constants for [`arith_cw_eq`].
#[derive(Debug, Clone)]
pub struct EqualityOperator {
    hamming_weight: u32,
    inv_factorial: u64,
    /// `t - i` for `i` in `1..h`.
    neg_offsets: Vec<u64>,
}

impl EqualityOperator {
    pub fn new(hamming_weight: u32, t: &Modulus) -> Result<Self> {
        if hamming_weight == 0 || t.value() <= hamming_weight as u64 {
            return Err(Error::InvalidParams(format!(
                "weight {hamming_weight} needs a plaintext modulus above it"
            )));
        }
        let fact = (1..=hamming_weight as u64).fold(1u64, |acc, i| t.mul(acc, i));
        let inv_factorial = t
            .inv(fact)
            .ok_or_else(|| Error::InvalidParams("h! is not invertible mod t".into()))?;
        Ok(Self {
            hamming_weight,
            inv_factorial,
            neg_offsets: (1..hamming_weight as u64).map(|i| t.neg(i)).collect(),
        })
    }

    pub fn hamming_weight(&self) -> u32 {
        self.hamming_weight
    }
}

/// Slot-wise equality of encrypted codewords `x` against plaintext codewords
/// `y`, both given as `ℓ` bit-plane vectors.
///
/// Computes `h' = Σ x_i·y_i` with `ℓ` plaintext multiplications, then
/// `(1/h!)·Π_{i<h}(h' − i)` as a left-balanced product tree of depth
/// `⌈log₂ h⌉` followed by one constant multiplication. Each slot of the
/// result is `1` when the two codewords there are the same weight-`h`
/// codeword and `0` otherwise; a dummy on either side gives `h' < h`.
pub fn arith_cw_eq<B: SimdBackend>(
    backend: &B,
    x: &[B::Ciphertext],
    y: &[SimdVector],
    op: &EqualityOperator,
) -> Result<B::Ciphertext> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} ciphertext planes vs {} plaintext planes",
            x.len(),
            y.len()
        )));
    }
    let mut inner = backend.plain_mult(&y[0], &x[0])?;
    for (ct, pt) in x.iter().zip(y).skip(1) {
        inner = backend.add(&inner, &backend.plain_mult(pt, ct)?)?;
    }

    let mut layer = Vec::with_capacity(op.hamming_weight as usize);
    layer.push(inner.clone());
    for &off in &op.neg_offsets {
        layer.push(backend.add_scalar(&inner, off)?);
    }
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        let mut it = layer.chunks(2);
        for pair in &mut it {
            match pair {
                [a, b] => next.push(backend.mult(a, b)?),
                [a] => next.push(a.clone()),
                _ => unreachable!(),
            }
        }
        layer = next;
    }
    let e = backend.mult_scalar(&layer[0], op.inv_factorial)?;
    if backend.levels_remaining(&e) < backend.params().reserved_levels {
        return Err(Error::DepthExhausted);
    }
    Ok(e)
}
