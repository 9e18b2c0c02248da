// SPDX-License-Identifier: Apache-2.0

//! Batched arithmetic over `Z_t^N`.
//!
//! [`SimdBackend`] is the seam between the protocol and a leveled
//! homomorphic scheme: slot-wise addition, plaintext multiplication and
//! ciphertext multiplication, plus (de)serialization. Nothing
//! protocol-specific crosses it. [`ReferenceBackend`] implements it with
//! exact cleartext arithmetic and level bookkeeping.

mod params;
mod reference;

use std::sync::atomic::{AtomicU64, Ordering};

pub use params::{
    ceil_log2, default_plain_modulus, HeParams, ModulusProfile, ModulusRow, ALTERNATE_LOG_Q_H8,
    MODULUS_TABLE,
};
pub use reference::{RefCiphertext, RefSecretKey, ReferenceBackend, REFERENCE_BACKEND_ID};

use rand::{CryptoRng, RngCore};

use crate::error::Result;
use crate::modulus::Modulus;

/// A plaintext vector of `N` slots in `Z_t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SimdVector(Vec<u64>);

impl SimdVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn constant(len: usize, value: u64) -> Self {
        Self(vec![value; len])
    }

    /// Wraps `slots`, reducing each value mod `t`.
    pub fn from_slots(mut slots: Vec<u64>, t: &Modulus) -> Self {
        for s in &mut slots {
            *s = t.reduce(*s);
        }
        Self(slots)
    }

    pub fn slots(&self) -> &[u64] {
        &self.0
    }

    pub fn slots_mut(&mut self) -> &mut [u64] {
        &mut self.0
    }

    pub fn into_slots(self) -> Vec<u64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Running totals of backend operations.
#[derive(Debug, Default)]
pub struct OpCounters {
    plain_mults: AtomicU64,
    mults: AtomicU64,
    scalar_mults: AtomicU64,
    adds: AtomicU64,
    plain_adds: AtomicU64,
    encryptions: AtomicU64,
    decryptions: AtomicU64,
}

/// A snapshot of [`OpCounters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub plain_mults: u64,
    pub mults: u64,
    pub scalar_mults: u64,
    pub adds: u64,
    pub plain_adds: u64,
    pub encryptions: u64,
    pub decryptions: u64,
}

impl OpCounts {
    /// Plaintext-vector multiplications (`PM`).
    pub fn pm(&self) -> u64 {
        self.plain_mults
    }

    /// Multiplications in the product stage (`M`): ciphertext products plus
    /// constant normalizations.
    pub fn m(&self) -> u64 {
        self.mults + self.scalar_mults
    }
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            plain_mults: self.plain_mults - rhs.plain_mults,
            mults: self.mults - rhs.mults,
            scalar_mults: self.scalar_mults - rhs.scalar_mults,
            adds: self.adds - rhs.adds,
            plain_adds: self.plain_adds - rhs.plain_adds,
            encryptions: self.encryptions - rhs.encryptions,
            decryptions: self.decryptions - rhs.decryptions,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Op {
    PlainMult,
    Mult,
    ScalarMult,
    Add,
    PlainAdd,
    Encrypt,
    Decrypt,
}

impl OpCounters {
    pub(crate) fn bump(&self, op: Op) {
        let c = match op {
            Op::PlainMult => &self.plain_mults,
            Op::Mult => &self.mults,
            Op::ScalarMult => &self.scalar_mults,
            Op::Add => &self.adds,
            Op::PlainAdd => &self.plain_adds,
            Op::Encrypt => &self.encryptions,
            Op::Decrypt => &self.decryptions,
        };
        c.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            plain_mults: self.plain_mults.load(Ordering::Relaxed),
            mults: self.mults.load(Ordering::Relaxed),
            scalar_mults: self.scalar_mults.load(Ordering::Relaxed),
            adds: self.adds.load(Ordering::Relaxed),
            plain_adds: self.plain_adds.load(Ordering::Relaxed),
            encryptions: self.encryptions.load(Ordering::Relaxed),
            decryptions: self.decryptions.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        for c in [
            &self.plain_mults,
            &self.mults,
            &self.scalar_mults,
            &self.adds,
            &self.plain_adds,
            &self.encryptions,
            &self.decryptions,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

/// Slot-wise arithmetic on encrypted vectors.
///
/// Multiplications consume levels; an operation that would leave a
/// ciphertext below level zero fails with `DepthExhausted`.
pub trait SimdBackend: Send + Sync {
    type Ciphertext: Clone + Send + Sync + std::fmt::Debug;
    type SecretKey: Send + Sync;

    fn params(&self) -> &HeParams;

    fn slot_count(&self) -> usize {
        self.params().slot_count()
    }

    fn plain_modulus(&self) -> &Modulus {
        self.params().t()
    }

    fn keygen<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Self::SecretKey;

    fn encrypt(&self, pt: &SimdVector, key: &Self::SecretKey) -> Result<Self::Ciphertext>;

    fn decrypt(&self, ct: &Self::Ciphertext, key: &Self::SecretKey) -> Result<SimdVector>;

    fn add(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> Result<Self::Ciphertext>;

    fn add_plain(&self, a: &Self::Ciphertext, pt: &SimdVector) -> Result<Self::Ciphertext>;

    /// Adds `c` to every slot.
    fn add_scalar(&self, a: &Self::Ciphertext, c: u64) -> Result<Self::Ciphertext>;

    fn plain_mult(&self, pt: &SimdVector, ct: &Self::Ciphertext) -> Result<Self::Ciphertext>;

    fn mult(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> Result<Self::Ciphertext>;

    /// Multiplies every slot by the constant `c`. Consumes no level.
    fn mult_scalar(&self, a: &Self::Ciphertext, c: u64) -> Result<Self::Ciphertext>;

    /// Adds a fresh encryption of zero (noise flooding).
    fn rerandomize(&self, a: &Self::Ciphertext) -> Result<Self::Ciphertext>;

    fn levels_remaining(&self, ct: &Self::Ciphertext) -> u32;

    fn serialize(&self, ct: &Self::Ciphertext) -> Vec<u8>;

    fn deserialize(&self, bytes: &[u8]) -> Result<Self::Ciphertext>;

    /// Size in bytes of one serialized ciphertext.
    fn serialized_size(&self) -> usize;

    fn counters(&self) -> &OpCounters;
}
