// SPDX-License-Identifier: Apache-2.0

//! Hashing to bins.
//!
//! The client places each element in one bin with cuckoo hashing (no stash);
//! the server places a copy of each element under every hash function.
//! Both use permutation-based hashing: for `x = x_H ∥ x_L` with `|x_H| = c`
//! and `b = 2^c` bins, hash function `i` puts `x_L` in bin
//! `x_H ⊕ H_i(x_L)`. Only the `λ - c` residue bits are stored, optionally
//! followed by the hash index so that copies placed under different hash
//! functions can never be confused.

use std::collections::HashSet;
use std::hash::Hasher;

use rand::Rng;
use sha2::{Digest, Sha256};
use siphasher::sip::SipHasher13;
use statrs::function::gamma::ln_gamma;

use crate::backend::ceil_log2;
use crate::error::{Error, Result};

pub const DEFAULT_HASH_COUNT: usize = 3;
pub const DEFAULT_MAX_EVICTIONS: usize = 500;
/// Cuckoo table expansion for three hash functions.
pub const CUCKOO_EXPANSION: f64 = 1.27;

/// A family of `k` hash functions from residues to bin offsets.
pub trait HashFamily {
    fn hash_count(&self) -> usize;

    /// Hash `index` applied to `residue`; the caller keeps the low `c` bits.
    fn bin_hash(&self, index: usize, residue: u64) -> u64;
}

/// SipHash-1-3 under one 128-bit key per hash function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyedHashes {
    keys: Vec<u128>,
}

impl KeyedHashes {
    pub fn new(keys: Vec<u128>) -> Self {
        Self { keys }
    }

    pub fn random<R: Rng>(count: usize, rng: &mut R) -> Self {
        Self {
            keys: (0..count).map(|_| rng.gen()).collect(),
        }
    }

    pub fn keys(&self) -> &[u128] {
        &self.keys
    }
}

impl HashFamily for KeyedHashes {
    fn hash_count(&self) -> usize {
        self.keys.len()
    }

    #[inline]
    fn bin_hash(&self, index: usize, residue: u64) -> u64 {
        let key = self.keys[index];
        let mut h = SipHasher13::new_with_keys(key as u64, (key >> 64) as u64);
        h.write_u64(residue);
        h.finish()
    }
}

#[inline]
fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Splits a `λ`-bit `x` into `(x_H ⊕ H(x_L), x_L)` where `x_H` is the top
/// `c` bits.
#[inline]
pub fn pbh_split(
    x: u64,
    element_bits: u32,
    bin_bits: u32,
    hash: impl Fn(u64) -> u64,
) -> (usize, u64) {
    let residue_bits = element_bits - bin_bits;
    let low = x & low_mask(residue_bits);
    let high = if residue_bits >= 64 {
        0
    } else {
        x >> residue_bits
    };
    let bin = (high ^ hash(low)) & low_mask(bin_bits);
    (bin as usize, low)
}

/// Inverse of [`pbh_split`].
#[inline]
pub fn pbh_join(
    bin: usize,
    residue: u64,
    element_bits: u32,
    bin_bits: u32,
    hash: impl Fn(u64) -> u64,
) -> u64 {
    let residue_bits = element_bits - bin_bits;
    let high = (bin as u64 ^ hash(residue)) & low_mask(bin_bits);
    if residue_bits >= 64 {
        residue
    } else {
        high << residue_bits | residue
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinningPlan {
    /// `c`, with `b = 2^c` bins.
    pub bin_bits: u32,
    /// `λ`, the bit length of the elements being binned.
    pub element_bits: u32,
    /// `γ`.
    pub client_max_load: usize,
    /// `μ`.
    pub server_max_load: usize,
    /// Append the hash index to stored residues.
    pub hash_index_bits: bool,
    pub hashes: KeyedHashes,
    pub max_evictions: usize,
}

impl BinningPlan {
    pub fn new<R: Rng>(
        bins: usize,
        element_bits: u32,
        server_max_load: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !bins.is_power_of_two() {
            return Err(Error::InvalidParams(format!(
                "bin count {bins} is not a power of two"
            )));
        }
        let plan = Self {
            bin_bits: bins.trailing_zeros(),
            element_bits,
            client_max_load: 1,
            server_max_load,
            hash_index_bits: true,
            hashes: KeyedHashes::random(DEFAULT_HASH_COUNT, rng),
            max_evictions: DEFAULT_MAX_EVICTIONS,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_bits > 64 || self.element_bits <= self.bin_bits {
            return Err(Error::InvalidParams(format!(
                "element bits {} must exceed bin bits {} and be at most 64",
                self.element_bits, self.bin_bits
            )));
        }
        if self.bin_bits > 30 {
            return Err(Error::InvalidParams("too many bins".into()));
        }
        if self.hashes.hash_count() == 0 {
            return Err(Error::InvalidParams(
                "need at least one hash function".into(),
            ));
        }
        if self.client_max_load == 0 || self.server_max_load == 0 {
            return Err(Error::InvalidParams("bin loads must be positive".into()));
        }
        if self.stored_bits() > 64 {
            return Err(Error::InvalidParams("stored values exceed 64 bits".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        1 << self.bin_bits
    }

    pub fn hash_count(&self) -> usize {
        self.hashes.hash_count()
    }

    /// `λ - c`.
    pub fn residue_bits(&self) -> u32 {
        self.element_bits - self.bin_bits
    }

    pub fn index_bits(&self) -> u32 {
        if self.hash_index_bits {
            ceil_log2(self.hash_count() as u64)
        } else {
            0
        }
    }

    /// Effective bitlength `λ̄` of stored values.
    pub fn stored_bits(&self) -> u32 {
        self.residue_bits() + self.index_bits()
    }

    pub fn check_element(&self, x: u64) -> Result<()> {
        if x & !low_mask(self.element_bits) != 0 {
            return Err(Error::ValueOutOfRange {
                value: x,
                bits: self.element_bits,
            });
        }
        Ok(())
    }

    /// Bin and stored value of `x` under hash `index`.
    #[inline]
    pub fn place(&self, x: u64, index: usize) -> (usize, u64) {
        self.place_with(&self.hashes, x, index)
    }

    #[inline]
    pub fn place_with(&self, hashes: &impl HashFamily, x: u64, index: usize) -> (usize, u64) {
        let (bin, residue) = pbh_split(x, self.element_bits, self.bin_bits, |l| {
            hashes.bin_hash(index, l)
        });
        let stored = if self.hash_index_bits {
            residue << self.index_bits() | index as u64
        } else {
            residue
        };
        (bin, stored)
    }

    /// Recovers the element stored as `stored` in `bin` under hash `index`.
    pub fn recover(&self, bin: usize, stored: u64, index: usize) -> u64 {
        self.recover_with(&self.hashes, bin, stored, index)
    }

    pub fn recover_with(
        &self,
        hashes: &impl HashFamily,
        bin: usize,
        stored: u64,
        index: usize,
    ) -> u64 {
        let residue = stored >> self.index_bits();
        pbh_join(bin, residue, self.element_bits, self.bin_bits, |l| {
            hashes.bin_hash(index, l)
        })
    }

    pub(crate) fn fingerprint_into(&self, h: &mut Sha256) {
        for v in [
            self.bin_bits as u64,
            self.element_bits as u64,
            self.client_max_load as u64,
            self.server_max_load as u64,
            self.hash_index_bits as u64,
            self.max_evictions as u64,
            self.hashes.hash_count() as u64,
        ] {
            h.update(v.to_le_bytes());
        }
        for k in self.hashes.keys() {
            h.update(k.to_le_bytes());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientSlot {
    pub stored: u64,
    pub hash_index: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerSlot {
    pub stored: u64,
    /// Position of the element in the server's input.
    pub source: u32,
}

/// `b` bins, each holding at most `max_load` real entries. Positions past
/// the real entries are dummies, so every bin reads as exactly `max_load`
/// slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinTable<S> {
    max_load: usize,
    bins: Vec<Vec<S>>,
}

impl<S> BinTable<S> {
    pub fn new(bins: usize, max_load: usize) -> Self {
        Self {
            max_load,
            bins: (0..bins).map(|_| Vec::new()).collect(),
        }
    }

    pub(crate) fn from_bins(bins: Vec<Vec<S>>, max_load: usize) -> Result<Self> {
        for (bin, entries) in bins.iter().enumerate() {
            if entries.len() > max_load {
                return Err(Error::BinOverflow {
                    bin,
                    load: entries.len(),
                    max: max_load,
                });
            }
        }
        Ok(Self { max_load, bins })
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn max_load(&self) -> usize {
        self.max_load
    }

    /// Slot `i` of `bin`; `None` is a dummy.
    pub fn slot(&self, bin: usize, i: usize) -> Option<&S> {
        self.bins[bin].get(i)
    }

    /// All `max_load` slots of `bin`, dummies included.
    pub fn padded(&self, bin: usize) -> impl Iterator<Item = Option<&S>> + '_ {
        (0..self.max_load).map(move |i| self.slot(bin, i))
    }

    /// Real entries of `bin`.
    pub fn entries(&self, bin: usize) -> &[S] {
        &self.bins[bin]
    }

    pub fn real_count(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    pub fn max_observed_load(&self) -> usize {
        self.bins.iter().map(Vec::len).max().unwrap_or(0)
    }
}

fn check_distinct(elements: &[u64], plan: &BinningPlan) -> Result<()> {
    let mut seen = HashSet::with_capacity(elements.len());
    for &x in elements {
        plan.check_element(x)?;
        if !seen.insert(x) {
            return Err(Error::DuplicateElement(x));
        }
    }
    Ok(())
}

/// Client-side cuckoo hashing with one slot per bin.
pub fn cuckoo_insert<R: Rng>(
    elements: &[u64],
    plan: &BinningPlan,
    rng: &mut R,
) -> Result<BinTable<ClientSlot>> {
    cuckoo_insert_with(elements, plan, &plan.hashes, rng)
}

pub fn cuckoo_insert_with<R: Rng>(
    elements: &[u64],
    plan: &BinningPlan,
    hashes: &impl HashFamily,
    rng: &mut R,
) -> Result<BinTable<ClientSlot>> {
    check_distinct(elements, plan)?;
    let k = hashes.hash_count();
    let mut table: Vec<Option<(u64, usize)>> = vec![None; plan.bins()];
    let mut evictions = 0usize;
    for &x in elements {
        let mut current = (x, 0usize);
        loop {
            let (bin, _) = plan.place_with(hashes, current.0, current.1);
            match table[bin].replace(current) {
                None => break,
                Some((evicted, index)) => {
                    evictions += 1;
                    if evictions > plan.max_evictions || k < 2 {
                        return Err(Error::InsertionFailure { evictions });
                    }
                    // Uniform over the k-1 other hash functions.
                    let mut next = rng.gen_range(0..k - 1);
                    if next >= index {
                        next += 1;
                    }
                    current = (evicted, next);
                }
            }
        }
        evictions = 0;
    }
    let bins = table
        .into_iter()
        .map(|slot| match slot {
            None => Vec::new(),
            Some((x, index)) => vec![ClientSlot {
                stored: plan.place_with(hashes, x, index).1,
                hash_index: index as u8,
            }],
        })
        .collect();
    BinTable::from_bins(bins, plan.client_max_load)
}

/// Server-side simple hashing: every element under every hash function,
/// identical stored values within a bin merged, bins capped at `μ`.
pub fn simple_hash_insert(elements: &[u64], plan: &BinningPlan) -> Result<BinTable<ServerSlot>> {
    check_distinct(elements, plan)?;
    let mut bins: Vec<Vec<ServerSlot>> = vec![Vec::new(); plan.bins()];
    for (source, &y) in elements.iter().enumerate() {
        for index in 0..plan.hash_count() {
            let (bin, stored) = plan.place(y, index);
            let entries = &mut bins[bin];
            if entries.iter().any(|e| e.stored == stored) {
                continue;
            }
            entries.push(ServerSlot {
                stored,
                source: source as u32,
            });
            if entries.len() > plan.server_max_load {
                return Err(Error::BinOverflow {
                    bin,
                    load: entries.len(),
                    max: plan.server_max_load,
                });
            }
        }
    }
    BinTable::from_bins(bins, plan.server_max_load)
}

/// Per-bin server load without building the table. Copies of one element
/// that coincide are merged; coincidences across elements are not, so this
/// never undercounts.
pub fn server_bin_loads(elements: impl IntoIterator<Item = u64>, plan: &BinningPlan) -> Vec<u32> {
    let mut loads = vec![0u32; plan.bins()];
    let mut placed = Vec::with_capacity(plan.hash_count());
    for y in elements {
        placed.clear();
        for index in 0..plan.hash_count() {
            let p = plan.place(y, index);
            if !placed.contains(&p) {
                placed.push(p);
                loads[p.0] += 1;
            }
        }
    }
    loads
}

/// Largest `μ` such that the union bound `b · P[Bin(n·k, 1/b) > μ]` stays
/// below `2^target_log2`.
pub fn estimate_server_max_load(n: u64, bins: u64, hash_count: u64, target_log2: f64) -> usize {
    let balls = n * hash_count;
    if balls == 0 {
        return 1;
    }
    let p = 1.0 / bins as f64;
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let ln_pmf = |j: u64| {
        ln_gamma(balls as f64 + 1.0) - ln_gamma(j as f64 + 1.0) - ln_gamma((balls - j) as f64 + 1.0)
            + j as f64 * ln_p
            + (balls - j) as f64 * ln_q
    };
    // log2 P[X > mu], summed from the tail head until terms vanish.
    let ln_tail = |mu: u64| -> f64 {
        if mu >= balls {
            return f64::NEG_INFINITY;
        }
        let first = ln_pmf(mu + 1);
        let mut sum = 1.0f64;
        let mut term = 0.0f64;
        let mut j = mu + 1;
        while j < balls {
            // ratio pmf(j+1)/pmf(j)
            term += ((balls - j) as f64).ln() - ((j + 1) as f64).ln() + ln_p - ln_q;
            let t = term.exp();
            sum += t;
            if t < 1e-18 * sum {
                break;
            }
            j += 1;
        }
        first + sum.ln()
    };
    let budget = target_log2 * std::f64::consts::LN_2 - (bins as f64).ln();
    let mut mu = (balls as f64 * p).floor() as u64;
    while ln_tail(mu) >= budget {
        mu += 1;
    }
    mu.max(1) as usize
}

/// Maximum load per trial of simple hashing `n` random `λ`-bit elements
/// under fresh hash keys.
pub fn simulate_max_load<R: Rng>(
    n: usize,
    bins: usize,
    element_bits: u32,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let plan = BinningPlan::new(bins, element_bits, usize::MAX, rng)?;
        let mask = low_mask(element_bits);
        let elements: Vec<u64> = (0..n).map(|_| rng.gen::<u64>() & mask).collect();
        let loads = server_bin_loads(elements, &plan);
        out.push(loads.into_iter().max().unwrap_or(0) as usize);
    }
    Ok(out)
}
