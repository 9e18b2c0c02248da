// SPDX-License-Identifier: Apache-2.0

//! The plan file shared by client and server.
//!
//! A TOML document holding every agreed parameter, hash keys included,
//! plus the planner's predictions for reference. 128-bit keys are written
//! as hex strings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::HeParams;
use crate::binning::{BinningPlan, KeyedHashes};
use crate::cwcode::LossyHasher;
use crate::error::{Error, Result};
use crate::planner::PlanResult;
use crate::protocol::PsiParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub binning: BinningSection,
    pub code: CodeSection,
    pub he: HeParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Predicted>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningSection {
    pub bins: u64,
    pub element_bits: u32,
    pub client_max_load: u64,
    pub server_max_load: u64,
    pub hash_index_bits: bool,
    pub max_evictions: u64,
    pub hash_keys: Vec<String>,
    pub element_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSection {
    pub hamming_weight: u32,
    pub effective_bits: u32,
    pub code_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicted {
    pub request_mb: f64,
    pub plain_mults: u64,
    pub mults: u64,
    pub collision_bound: f64,
    pub fingerprint: String,
}

fn parse_key(s: &str) -> Result<u128> {
    u128::from_str_radix(s.trim_start_matches("0x"), 16)
        .map_err(|_| Error::Malformed(format!("bad hash key {s:?}")))
}

impl PlanFile {
    pub fn from_params(params: &PsiParams, plan: Option<&PlanResult>) -> Self {
        let b = &params.binning;
        Self {
            binning: BinningSection {
                bins: b.bins() as u64,
                element_bits: b.element_bits,
                client_max_load: b.client_max_load as u64,
                server_max_load: b.server_max_load as u64,
                hash_index_bits: b.hash_index_bits,
                max_evictions: b.max_evictions as u64,
                hash_keys: b
                    .hashes
                    .keys()
                    .iter()
                    .map(|k| format!("{k:032x}"))
                    .collect(),
                element_key: format!("{:032x}", params.element_hasher.key()),
            },
            code: CodeSection {
                hamming_weight: params.code.hamming_weight(),
                effective_bits: params.code.bitlength(),
                code_length: params.code_length() as u64,
            },
            he: params.he.clone(),
            predicted: plan.map(|p| Predicted {
                request_mb: p.cost.comm_megabytes(),
                plain_mults: p.cost.plain_mults,
                mults: p.cost.mults,
                collision_bound: p.collision_bound,
                fingerprint: format!("{:016x}", params.fingerprint()),
            }),
        }
    }

    pub fn to_params(&self) -> Result<PsiParams> {
        let b = &self.binning;
        if !b.bins.is_power_of_two() {
            return Err(Error::InvalidParams(format!(
                "bin count {} is not a power of two",
                b.bins
            )));
        }
        let binning = BinningPlan {
            bin_bits: b.bins.trailing_zeros(),
            element_bits: b.element_bits,
            client_max_load: b.client_max_load as usize,
            server_max_load: b.server_max_load as usize,
            hash_index_bits: b.hash_index_bits,
            hashes: KeyedHashes::new(
                b.hash_keys
                    .iter()
                    .map(|k| parse_key(k))
                    .collect::<Result<_>>()?,
            ),
            max_evictions: b.max_evictions as usize,
        };
        let params = PsiParams::new(
            binning,
            self.code.hamming_weight,
            self.he.clone(),
            LossyHasher::new(parse_key(&b.element_key)?),
        )?;
        if params.code.bitlength() != self.code.effective_bits
            || params.code_length() as u64 != self.code.code_length
        {
            return Err(Error::InvalidParams(
                "code section disagrees with the binning section".into(),
            ));
        }
        Ok(params)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plan file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Malformed(format!("plan file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
