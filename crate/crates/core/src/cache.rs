// SPDX-License-Identifier: Apache-2.0

//! On-disk cache of the server's preprocessed table.
//!
//! ```text
//! "PEPSITC1" | version u32 | plan fp u64 | bins u32 | max load u32
//! | bins × max load × (stored u64, source u32)      source = u32::MAX: dummy
//! | values:  0 u8 | 1 u8, count u32, count × u64
//! | labels:  0 u8 | 1 u8, len u32, count u32, count × len bytes
//! ```
//!
//! Little-endian throughout. Bit planes are rebuilt on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::binning::{BinTable, ServerSlot};
use crate::error::{Error, Result};
use crate::protocol::PsiParams;

const MAGIC: &[u8; 8] = b"PEPSITC1";
const VERSION: u32 = 1;
const DUMMY: u32 = u32::MAX;

/// Environment variable naming the default cache directory.
pub const CACHE_DIR_ENV: &str = "PEPSI_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerCache {
    pub plan_fingerprint: u64,
    pub table: BinTable<ServerSlot>,
    /// Per-element integer values, by input position.
    pub values: Option<Vec<u64>>,
    /// Per-element fixed-length byte labels.
    pub byte_labels: Option<(usize, Vec<Vec<u8>>)>,
}

impl ServerCache {
    pub fn new(params: &PsiParams, table: BinTable<ServerSlot>) -> Self {
        Self {
            plan_fingerprint: params.fingerprint(),
            table,
            values: None,
            byte_labels: None,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.plan_fingerprint.to_le_bytes())?;
        w.write_all(&(self.table.bin_count() as u32).to_le_bytes())?;
        w.write_all(&(self.table.max_load() as u32).to_le_bytes())?;
        for bin in 0..self.table.bin_count() {
            for slot in self.table.padded(bin) {
                let (stored, source) = slot.map_or((0, DUMMY), |s| (s.stored, s.source));
                w.write_all(&stored.to_le_bytes())?;
                w.write_all(&source.to_le_bytes())?;
            }
        }
        match &self.values {
            None => w.write_all(&[0])?,
            Some(v) => {
                w.write_all(&[1])?;
                w.write_all(&(v.len() as u32).to_le_bytes())?;
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        match &self.byte_labels {
            None => w.write_all(&[0])?,
            Some((len, labels)) => {
                w.write_all(&[1])?;
                w.write_all(&(*len as u32).to_le_bytes())?;
                w.write_all(&(labels.len() as u32).to_le_bytes())?;
                for l in labels {
                    if l.len() != *len {
                        return Err(Error::Malformed("label length differs from header".into()));
                    }
                    w.write_all(l)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Malformed("not a server table cache".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Malformed(format!(
                "cache version {version}, expected {VERSION}"
            )));
        }
        let plan_fingerprint = read_u64(r)?;
        let bins = read_u32(r)? as usize;
        let max_load = read_u32(r)? as usize;
        if !bins.is_power_of_two() || bins > 1 << 30 || max_load == 0 || max_load > 1 << 20 {
            return Err(Error::Malformed(format!(
                "implausible table shape {bins} × {max_load}"
            )));
        }
        let mut table = Vec::with_capacity(bins);
        for _ in 0..bins {
            let mut entries = Vec::new();
            let mut seen_dummy = false;
            for _ in 0..max_load {
                let stored = read_u64(r)?;
                let source = read_u32(r)?;
                if source == DUMMY {
                    seen_dummy = true;
                } else if seen_dummy {
                    return Err(Error::Malformed("real slot after a dummy".into()));
                } else {
                    entries.push(ServerSlot { stored, source });
                }
            }
            table.push(entries);
        }
        let table = BinTable::from_bins(table, max_load)?;
        let values = match read_u8(r)? {
            0 => None,
            1 => {
                let n = read_u32(r)? as usize;
                Some((0..n).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?)
            }
            t => return Err(Error::Malformed(format!("values section tag {t}"))),
        };
        let byte_labels = match read_u8(r)? {
            0 => None,
            1 => {
                let len = read_u32(r)? as usize;
                let n = read_u32(r)? as usize;
                let mut labels = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    let mut l = vec![0u8; len];
                    r.read_exact(&mut l)?;
                    labels.push(l);
                }
                Some((len, labels))
            }
            t => return Err(Error::Malformed(format!("labels section tag {t}"))),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Malformed("trailing bytes in cache".into()));
        }
        Ok(Self {
            plan_fingerprint,
            table,
            values,
            byte_labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Loads and checks that the cache was built for `params`.
    pub fn load_for(path: &Path, params: &PsiParams) -> Result<Self> {
        let cache = Self::load(path)?;
        if cache.plan_fingerprint != params.fingerprint() {
            return Err(Error::FingerprintMismatch);
        }
        Ok(cache)
    }
}

/// Default cache file for a plan: `$PEPSI_CACHE_DIR/<fingerprint>.tc`, or
/// under the system temp directory.
pub fn default_cache_path(params: &PsiParams) -> PathBuf {
    let dir = std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pepsi"));
    dir.join(format!("{:016x}.tc", params.fingerprint()))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
