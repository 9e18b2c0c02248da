// SPDX-License-Identifier: Apache-2.0

//! Cleartext reference backend.
//!
//! Slots are held in the clear; "encryption" only tags a vector with the key
//! id and a fresh level budget. This gives exact modular semantics plus the
//! level accounting a leveled scheme would enforce, and nothing else. It is
//! not a cryptosystem.

use rand::{CryptoRng, RngCore};

use super::{HeParams, Op, OpCounters, SimdBackend, SimdVector};
use crate::error::{Error, Result};

pub const REFERENCE_BACKEND_ID: u8 = 1;

/// Backend id, HeParams fingerprint, key id, level.
const HEADER_BYTES: usize = 1 + 8 + 8 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefSecretKey {
    id: u64,
}

impl RefSecretKey {
    pub fn id(&self) -> u64 {
        self.id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefCiphertext {
    key_id: u64,
    level: u32,
    slots: Vec<u64>,
}

impl RefCiphertext {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }
}

#[derive(Debug)]
pub struct ReferenceBackend {
    params: HeParams,
    fingerprint: u64,
    counters: OpCounters,
}

impl ReferenceBackend {
    pub fn new(params: HeParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            fingerprint: params.fingerprint(),
            params,
            counters: OpCounters::default(),
        })
    }

    fn check_vec(&self, len: usize) -> Result<()> {
        if len != self.params.slot_count() {
            return Err(Error::ShapeMismatch(format!(
                "vector has {len} slots, backend has {}",
                self.params.slot_count()
            )));
        }
        Ok(())
    }

    fn same_key(a: &RefCiphertext, b: &RefCiphertext) -> Result<()> {
        if a.key_id != b.key_id {
            return Err(Error::KeyMismatch);
        }
        Ok(())
    }

    fn zip(&self, a: &[u64], b: &[u64], f: impl Fn(u64, u64) -> u64) -> Vec<u64> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    }
}

impl SimdBackend for ReferenceBackend {
    type Ciphertext = RefCiphertext;
    type SecretKey = RefSecretKey;

    fn params(&self) -> &HeParams {
        &self.params
    }

    fn keygen<R: RngCore + CryptoRng>(&self, rng: &mut R) -> RefSecretKey {
        RefSecretKey {
            id: rng.next_u64() | 1,
        }
    }

    fn encrypt(&self, pt: &SimdVector, key: &RefSecretKey) -> Result<RefCiphertext> {
        self.check_vec(pt.len())?;
        let t = self.params.t();
        self.counters.bump(Op::Encrypt);
        Ok(RefCiphertext {
            key_id: key.id,
            level: self.params.fresh_levels(),
            slots: pt.slots().iter().map(|&s| t.reduce(s)).collect(),
        })
    }

    fn decrypt(&self, ct: &RefCiphertext, key: &RefSecretKey) -> Result<SimdVector> {
        if ct.key_id != key.id {
            return Err(Error::KeyMismatch);
        }
        self.counters.bump(Op::Decrypt);
        Ok(SimdVector(ct.slots.clone()))
    }

    fn add(&self, a: &RefCiphertext, b: &RefCiphertext) -> Result<RefCiphertext> {
        Self::same_key(a, b)?;
        let t = self.params.t();
        self.counters.bump(Op::Add);
        Ok(RefCiphertext {
            key_id: a.key_id,
            level: a.level.min(b.level),
            slots: self.zip(&a.slots, &b.slots, |x, y| t.add(x, y)),
        })
    }

    fn add_plain(&self, a: &RefCiphertext, pt: &SimdVector) -> Result<RefCiphertext> {
        self.check_vec(pt.len())?;
        let t = self.params.t();
        self.counters.bump(Op::PlainAdd);
        Ok(RefCiphertext {
            key_id: a.key_id,
            level: a.level,
            slots: self.zip(&a.slots, pt.slots(), |x, y| t.add(x, t.reduce(y))),
        })
    }

    fn add_scalar(&self, a: &RefCiphertext, c: u64) -> Result<RefCiphertext> {
        let t = self.params.t();
        let c = t.reduce(c);
        self.counters.bump(Op::PlainAdd);
        Ok(RefCiphertext {
            key_id: a.key_id,
            level: a.level,
            slots: a.slots.iter().map(|&x| t.add(x, c)).collect(),
        })
    }

    fn plain_mult(&self, pt: &SimdVector, ct: &RefCiphertext) -> Result<RefCiphertext> {
        self.check_vec(pt.len())?;
        let cost = self.params.plain_mult_levels;
        if ct.level < cost {
            return Err(Error::DepthExhausted);
        }
        let t = self.params.t();
        self.counters.bump(Op::PlainMult);
        Ok(RefCiphertext {
            key_id: ct.key_id,
            level: ct.level - cost,
            slots: self.zip(pt.slots(), &ct.slots, |x, y| t.mul(t.reduce(x), y)),
        })
    }

    fn mult(&self, a: &RefCiphertext, b: &RefCiphertext) -> Result<RefCiphertext> {
        Self::same_key(a, b)?;
        let level = a.level.min(b.level);
        if level < 1 {
            return Err(Error::DepthExhausted);
        }
        let t = self.params.t();
        self.counters.bump(Op::Mult);
        Ok(RefCiphertext {
            key_id: a.key_id,
            level: level - 1,
            slots: self.zip(&a.slots, &b.slots, |x, y| t.mul(x, y)),
        })
    }

    fn mult_scalar(&self, a: &RefCiphertext, c: u64) -> Result<RefCiphertext> {
        let t = self.params.t();
        let c = t.reduce(c);
        self.counters.bump(Op::ScalarMult);
        Ok(RefCiphertext {
            key_id: a.key_id,
            level: a.level,
            slots: a.slots.iter().map(|&x| t.mul(x, c)).collect(),
        })
    }

    fn rerandomize(&self, a: &RefCiphertext) -> Result<RefCiphertext> {
        // Adding a fresh encryption of zero leaves the slots unchanged.
        self.counters.bump(Op::Add);
        Ok(a.clone())
    }

    fn levels_remaining(&self, ct: &RefCiphertext) -> u32 {
        ct.level
    }

    fn serialize(&self, ct: &RefCiphertext) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_size());
        out.push(REFERENCE_BACKEND_ID);
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&ct.key_id.to_le_bytes());
        out.extend_from_slice(&ct.level.to_le_bytes());
        for s in &ct.slots {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.resize(self.serialized_size(), 0);
        out
    }

    fn deserialize(&self, bytes: &[u8]) -> Result<RefCiphertext> {
        if bytes.len() != self.serialized_size() {
            return Err(Error::Malformed(format!(
                "ciphertext is {} bytes, expected {}",
                bytes.len(),
                self.serialized_size()
            )));
        }
        if bytes[0] != REFERENCE_BACKEND_ID {
            return Err(Error::Malformed(format!("unknown backend id {}", bytes[0])));
        }
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        if u64_at(1) != self.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        let key_id = u64_at(9);
        let level = u32::from_le_bytes(bytes[17..21].try_into().unwrap());
        if level > self.params.fresh_levels() {
            return Err(Error::Malformed(format!(
                "level {level} above fresh budget"
            )));
        }
        let n = self.params.slot_count();
        let t = self.params.t().value();
        let mut slots = Vec::with_capacity(n);
        for i in 0..n {
            let s = u64_at(HEADER_BYTES + 8 * i);
            if s >= t {
                return Err(Error::Malformed(format!("slot value {s} not reduced")));
            }
            slots.push(s);
        }
        if bytes[HEADER_BYTES + 8 * n..].iter().any(|&b| b != 0) {
            return Err(Error::Malformed("nonzero ciphertext padding".into()));
        }
        Ok(RefCiphertext {
            key_id,
            level,
            slots,
        })
    }

    fn serialized_size(&self) -> usize {
        HEADER_BYTES + self.params.ciphertext_payload_bytes()
    }

    fn counters(&self) -> &OpCounters {
        &self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ModulusProfile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ReferenceBackend {
        ReferenceBackend::new(HeParams::custom(4, 72, 257, 4).unwrap()).unwrap()
    }

    fn random_vec(rng: &mut impl Rng, b: &ReferenceBackend) -> SimdVector {
        let t = b.plain_modulus().value();
        SimdVector((0..b.slot_count()).map(|_| rng.gen_range(0..t)).collect())
    }

    #[test]
    fn round_trip_exact() {
        let b = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let key = b.keygen(&mut rng);
        let zero = SimdVector::zeros(16);
        assert_eq!(
            b.decrypt(&b.encrypt(&zero, &key).unwrap(), &key).unwrap(),
            zero
        );
        for _ in 0..1000 {
            let v = random_vec(&mut rng, &b);
            assert_eq!(b.decrypt(&b.encrypt(&v, &key).unwrap(), &key).unwrap(), v);
        }
    }

    #[test]
    fn wrong_key_rejected() {
        let b = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k1 = b.keygen(&mut rng);
        let k2 = b.keygen(&mut rng);
        let ct = b.encrypt(&SimdVector::zeros(16), &k1).unwrap();
        assert!(matches!(b.decrypt(&ct, &k2), Err(Error::KeyMismatch)));
        let other = b.encrypt(&SimdVector::zeros(16), &k2).unwrap();
        assert!(matches!(b.add(&ct, &other), Err(Error::KeyMismatch)));
    }

    #[test]
    fn slotwise_semantics() {
        let b = toy();
        let t = *b.plain_modulus();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let key = b.keygen(&mut rng);
        for _ in 0..1000 {
            let (x, y, z) = (
                random_vec(&mut rng, &b),
                random_vec(&mut rng, &b),
                random_vec(&mut rng, &b),
            );
            let cy = b.encrypt(&y, &key).unwrap();
            let cz = b.encrypt(&z, &key).unwrap();
            let got = b
                .decrypt(&b.add(&b.plain_mult(&x, &cy).unwrap(), &cz).unwrap(), &key)
                .unwrap();
            for i in 0..16 {
                let want = (x.0[i] * y.0[i] + z.0[i]) % t.value();
                assert_eq!(got.0[i], want);
            }
            let prod = b.decrypt(&b.mult(&cy, &cz).unwrap(), &key).unwrap();
            let sum = b.decrypt(&b.add(&cy, &cz).unwrap(), &key).unwrap();
            for i in 0..16 {
                assert_eq!(prod.0[i], y.0[i] * z.0[i] % 257);
                assert_eq!(sum.0[i], (y.0[i] + z.0[i]) % 257);
            }
        }
    }

    #[test]
    fn mult_chain_exhausts_depth() {
        let b = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let key = b.keygen(&mut rng);
        let budget = b.params().fresh_levels();
        let mut ct = b.encrypt(&SimdVector::constant(16, 2), &key).unwrap();
        for _ in 0..budget {
            ct = b.mult(&ct, &ct).unwrap();
        }
        assert_eq!(b.levels_remaining(&ct), 0);
        assert!(matches!(b.mult(&ct, &ct), Err(Error::DepthExhausted)));
        assert!(matches!(
            b.plain_mult(&SimdVector::constant(16, 1), &ct),
            Err(Error::DepthExhausted)
        ));
        // Scalar operations are free.
        assert!(b.mult_scalar(&ct, 3).is_ok());
    }

    #[test]
    fn serialization_is_bit_exact_and_sized_by_n_q() {
        let b =
            ReferenceBackend::new(HeParams::for_hamming_weight(8, ModulusProfile::Table).unwrap())
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let key = b.keygen(&mut rng);
        let v = random_vec(&mut rng, &b);
        let ct = b.encrypt(&v, &key).unwrap();
        let bytes = b.serialize(&ct);
        assert_eq!(bytes.len(), HEADER_BYTES + 8192 * 204 / 8);
        assert_eq!(b.deserialize(&bytes).unwrap(), ct);
        assert_eq!(b.serialize(&b.deserialize(&bytes).unwrap()), bytes);

        let other = ReferenceBackend::new(
            HeParams::for_hamming_weight(8, ModulusProfile::Experiments).unwrap(),
        )
        .unwrap();
        let mut padded = bytes.clone();
        padded.truncate(other.serialized_size());
        assert!(matches!(
            other.deserialize(&padded),
            Err(Error::FingerprintMismatch)
        ));
        let mut bad = bytes;
        *bad.last_mut().unwrap() = 1;
        assert!(b.deserialize(&bad).is_err());
    }
}
