// SPDX-License-Identifier: Apache-2.0

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modulus::{batching_prime, Modulus};

/// One row of the modulus table: Hamming weights `min_weight..=max_weight`
/// run with `N = 2^log_n` slots and a `log_q`-bit coefficient modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModulusRow {
    pub min_weight: u32,
    pub max_weight: u32,
    pub log_n: u32,
    pub log_q: u32,
}

/// Smallest 128-bit-secure parameters per Hamming weight range.
pub const MODULUS_TABLE: [ModulusRow; 7] = [
    ModulusRow {
        min_weight: 1,
        max_weight: 1,
        log_n: 12,
        log_q: 72,
    },
    ModulusRow {
        min_weight: 2,
        max_weight: 2,
        log_n: 13,
        log_q: 144,
    },
    ModulusRow {
        min_weight: 3,
        max_weight: 4,
        log_n: 13,
        log_q: 168,
    },
    ModulusRow {
        min_weight: 5,
        max_weight: 8,
        log_n: 13,
        log_q: 204,
    },
    ModulusRow {
        min_weight: 9,
        max_weight: 16,
        log_n: 14,
        log_q: 240,
    },
    ModulusRow {
        min_weight: 17,
        max_weight: 32,
        log_n: 14,
        log_q: 276,
    },
    ModulusRow {
        min_weight: 33,
        max_weight: 64,
        log_n: 14,
        log_q: 312,
    },
];

/// Coefficient modulus used by the 32-bit element experiments for `h = 8`.
pub const ALTERNATE_LOG_Q_H8: u32 = 192;

/// Which coefficient-modulus column to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulusProfile {
    /// The per-weight table above.
    #[default]
    Table,
    /// As `Table`, but the `5..=8` row uses `log q = 192`.
    Experiments,
}

impl ModulusProfile {
    pub fn row(self, hamming_weight: u32) -> Option<ModulusRow> {
        let mut row = *MODULUS_TABLE
            .iter()
            .find(|r| (r.min_weight..=r.max_weight).contains(&hamming_weight))?;
        if self == ModulusProfile::Experiments && row.max_weight == 8 {
            row.log_q = ALTERNATE_LOG_Q_H8;
        }
        Some(row)
    }
}

/// Default plaintext modulus: the smallest 40-bit prime `t ≡ 1 (mod 2^15)`,
/// batching-compatible with every `N ≤ 2^14` in the table.
pub fn default_plain_modulus() -> u64 {
    static T: OnceLock<u64> = OnceLock::new();
    *T.get_or_init(|| batching_prime(40, 1 << 15).expect("40-bit batching prime exists"))
}

pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Parameters of the batched arithmetic backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeParams {
    /// `N = 2^log_n` slots per vector.
    pub log_n: u32,
    /// Bit length of the coefficient modulus `q`.
    pub log_q: u32,
    pub plain_modulus: Modulus,
    /// Largest Hamming weight whose equality circuit fits the depth budget.
    pub max_hamming_weight: u32,
    /// Levels charged by one round of plaintext multiplications.
    pub plain_mult_levels: u32,
    /// Levels left over after equality for variant post-processing.
    pub reserved_levels: u32,
}

impl HeParams {
    pub fn for_hamming_weight(hamming_weight: u32, profile: ModulusProfile) -> Result<Self> {
        let row = profile.row(hamming_weight).ok_or_else(|| {
            Error::InvalidParams(format!(
                "no modulus row covers Hamming weight {hamming_weight}"
            ))
        })?;
        Ok(Self {
            log_n: row.log_n,
            log_q: row.log_q,
            plain_modulus: Modulus::new(default_plain_modulus()).expect("valid modulus"),
            max_hamming_weight: row.max_weight,
            plain_mult_levels: 1,
            reserved_levels: 1,
        })
    }

    /// Custom parameters, for small test instances.
    pub fn custom(
        log_n: u32,
        log_q: u32,
        plain_modulus: u64,
        max_hamming_weight: u32,
    ) -> Result<Self> {
        let p = Self {
            log_n,
            log_q,
            plain_modulus: Modulus::new(plain_modulus).ok_or_else(|| {
                Error::InvalidParams(format!("bad plaintext modulus {plain_modulus}"))
            })?,
            max_hamming_weight,
            plain_mult_levels: 1,
            reserved_levels: 1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_reserved_levels(mut self, levels: u32) -> Self {
        self.reserved_levels = levels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=17).contains(&self.log_n) {
            return Err(Error::InvalidParams(format!(
                "log N = {} out of range",
                self.log_n
            )));
        }
        // Reference ciphertexts store one 64-bit word per slot inside N·q bits.
        if self.log_q < 64 {
            return Err(Error::InvalidParams(format!(
                "log q = {} below 64",
                self.log_q
            )));
        }
        if self.max_hamming_weight == 0 {
            return Err(Error::InvalidParams(
                "max Hamming weight must be positive".into(),
            ));
        }
        if self.plain_modulus.value() <= self.max_hamming_weight as u64 {
            return Err(Error::InvalidParams(
                "plaintext modulus must exceed h".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn slot_count(&self) -> usize {
        1 << self.log_n
    }

    #[inline]
    pub fn t(&self) -> &Modulus {
        &self.plain_modulus
    }

    /// Levels consumed by one equality test at weight `h`.
    pub fn equality_levels(&self, hamming_weight: u32) -> u32 {
        self.plain_mult_levels + ceil_log2(hamming_weight as u64)
    }

    /// Level budget of a fresh ciphertext.
    pub fn fresh_levels(&self) -> u32 {
        self.equality_levels(self.max_hamming_weight) + self.reserved_levels
    }

    /// Serialized size of a fresh ciphertext under the `N·q` size model.
    pub fn ciphertext_payload_bytes(&self) -> usize {
        (self.slot_count() * self.log_q as usize).div_ceil(8)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"pepsi-he-params-v1");
        for v in [
            self.log_n as u64,
            self.log_q as u64,
            self.plain_modulus.value(),
            self.max_hamming_weight as u64,
            self.plain_mult_levels as u64,
            self.reserved_levels as u64,
        ] {
            h.update(v.to_le_bytes());
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }
}
