// SPDX-License-Identifier: Apache-2.0

//! Preprocessing, server computation and result extraction for plain PSI.
//!
//! Batching layout: for client slot `i` (or server slot `i'`), bin chunk `w`
//! and code position `j`, vector `(i·chunks + w)·ℓ + j` holds in its slot
//! `s` bit `j` of the codeword at slot `i` of bin `w·N + s`. Slots past the
//! last bin are dummies.

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::backend::HeParams;
use crate::backend::{SimdBackend, SimdVector};
use crate::binning::{self, BinTable, BinningPlan, ClientSlot, ServerSlot};
use crate::cwcode::{arith_cw_eq, CodeParams, EqualityOperator, LossyHasher};
use crate::error::{Error, Result};

/// Everything both parties must agree on before a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsiParams {
    pub binning: BinningPlan,
    pub code: CodeParams,
    pub he: HeParams,
    /// Maps byte-string elements to `λ` bits in large-element mode.
    pub element_hasher: LossyHasher,
}

impl PsiParams {
    pub fn new(
        binning: BinningPlan,
        hamming_weight: u32,
        he: HeParams,
        element_hasher: LossyHasher,
    ) -> Result<Self> {
        binning.validate()?;
        he.validate()?;
        let code = CodeParams::new(binning.stored_bits(), hamming_weight)?;
        if he.t().value() <= hamming_weight as u64 {
            return Err(Error::InvalidParams(
                "plaintext modulus must exceed h".into(),
            ));
        }
        Ok(Self {
            binning,
            code,
            he,
            element_hasher,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.he.slot_count()
    }

    /// `⌈b/N⌉`.
    pub fn chunks(&self) -> usize {
        self.binning.bins().div_ceil(self.slot_count())
    }

    pub fn code_length(&self) -> usize {
        self.code.code_length()
    }

    /// `γ·ℓ·⌈b/N⌉`.
    pub fn request_ciphertexts(&self) -> usize {
        self.binning.client_max_load * self.code_length() * self.chunks()
    }

    /// `γ·⌈b/N⌉`.
    pub fn indicator_ciphertexts(&self) -> usize {
        self.binning.client_max_load * self.chunks()
    }

    /// Maps a byte-string element to a `λ`-bit element.
    pub fn hash_element(&self, data: &[u8]) -> u64 {
        self.element_hasher.hash(data, self.binning.element_bits)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"pepsi-plan-v1");
        self.binning.fingerprint_into(&mut h);
        h.update((self.code.bitlength() as u64).to_le_bytes());
        h.update((self.code.hamming_weight() as u64).to_le_bytes());
        h.update(self.he.fingerprint().to_le_bytes());
        h.update(self.element_hasher.key().to_le_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    #[inline]
    pub(crate) fn plane_base(&self, slot: usize, chunk: usize) -> usize {
        (slot * self.chunks() + chunk) * self.code_length()
    }
}

/// The client's retained table and its encrypted request.
#[derive(Debug, Clone)]
pub struct ClientQuery<C> {
    pub table: BinTable<ClientSlot>,
    pub ciphertexts: Vec<C>,
}

fn encode_planes<S>(
    params: &PsiParams,
    table: &BinTable<S>,
    load: usize,
    stored: impl Fn(&S) -> u64,
) -> Result<Vec<SimdVector>> {
    let n = params.slot_count();
    let ell = params.code_length();
    let mut planes = vec![SimdVector::zeros(n); load * params.chunks() * ell];
    for bin in 0..table.bin_count() {
        let (w, s) = (bin / n, bin % n);
        for (i, entry) in table.entries(bin).iter().enumerate() {
            let cw = params.code.encode(stored(entry))?;
            let base = params.plane_base(i, w);
            for &j in cw.ones() {
                planes[base + j as usize].slots_mut()[s] = 1;
            }
        }
    }
    Ok(planes)
}

/// Client bit planes of `table` before encryption.
pub fn client_planes(params: &PsiParams, table: &BinTable<ClientSlot>) -> Result<Vec<SimdVector>> {
    encode_planes(params, table, params.binning.client_max_load, |s| s.stored)
}

/// Cuckoo-hashes, encodes, batches and encrypts the client set.
pub fn client_prepare<B: SimdBackend, R: Rng>(
    backend: &B,
    params: &PsiParams,
    elements: &[u64],
    key: &B::SecretKey,
    rng: &mut R,
) -> Result<ClientQuery<B::Ciphertext>> {
    check_backend(backend, params)?;
    let table = binning::cuckoo_insert(elements, &params.binning, rng)?;
    let ciphertexts = client_planes(params, &table)?
        .iter()
        .map(|pt| backend.encrypt(pt, key))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClientQuery { table, ciphertexts })
}

fn check_backend<B: SimdBackend>(backend: &B, params: &PsiParams) -> Result<()> {
    if backend.params() != &params.he {
        return Err(Error::FingerprintMismatch);
    }
    Ok(())
}

/// The server's preprocessed set: simple-hash table plus plaintext planes.
#[derive(Debug, Clone)]
pub struct ServerDataset {
    fingerprint: u64,
    table: BinTable<ServerSlot>,
    planes: Vec<SimdVector>,
}

impl ServerDataset {
    pub fn from_table(params: &PsiParams, table: BinTable<ServerSlot>) -> Result<Self> {
        if table.bin_count() != params.binning.bins()
            || table.max_load() != params.binning.server_max_load
        {
            return Err(Error::ShapeMismatch(
                "server table does not match the plan".into(),
            ));
        }
        let planes = encode_planes(params, &table, table.max_load(), |s| s.stored)?;
        Ok(Self {
            fingerprint: params.fingerprint(),
            table,
            planes,
        })
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn table(&self) -> &BinTable<ServerSlot> {
        &self.table
    }

    pub fn max_load(&self) -> usize {
        self.table.max_load()
    }

    pub(crate) fn planes(&self, params: &PsiParams, slot: usize, chunk: usize) -> &[SimdVector] {
        let base = params.plane_base(slot, chunk);
        &self.planes[base..base + params.code_length()]
    }

    /// Per-slot values laid out like the planes: `values[source]` at each
    /// real slot, zero at dummies. Returns `μ·chunks` vectors.
    pub fn slot_values(&self, params: &PsiParams, value: impl Fn(u32) -> u64) -> Vec<SimdVector> {
        let n = params.slot_count();
        let chunks = params.chunks();
        let t = params.he.t();
        let mut out = vec![SimdVector::zeros(n); self.max_load() * chunks];
        for bin in 0..self.table.bin_count() {
            let (w, s) = (bin / n, bin % n);
            for (i, e) in self.table.entries(bin).iter().enumerate() {
                out[i * chunks + w].slots_mut()[s] = t.reduce(value(e.source));
            }
        }
        out
    }
}

/// Simple-hashes and encodes the server set. Deterministic given the plan.
pub fn server_prepare(params: &PsiParams, elements: &[u64]) -> Result<ServerDataset> {
    let table = binning::simple_hash_insert(elements, &params.binning)?;
    ServerDataset::from_table(params, table)
}

pub(crate) fn check_request<B: SimdBackend>(
    backend: &B,
    params: &PsiParams,
    dataset: &ServerDataset,
    request: &[B::Ciphertext],
) -> Result<()> {
    check_backend(backend, params)?;
    if dataset.fingerprint != params.fingerprint() {
        return Err(Error::FingerprintMismatch);
    }
    if request.len() != params.request_ciphertexts() {
        return Err(Error::ShapeMismatch(format!(
            "request has {} ciphertexts, expected {}",
            request.len(),
            params.request_ciphertexts()
        )));
    }
    Ok(())
}

/// Encrypted equality of client slot `i` and server slot `ip` over chunk `w`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn slot_equality<B: SimdBackend>(
    backend: &B,
    params: &PsiParams,
    op: &EqualityOperator,
    dataset: &ServerDataset,
    request: &[B::Ciphertext],
    i: usize,
    ip: usize,
    w: usize,
) -> Result<B::Ciphertext> {
    let base = params.plane_base(i, w);
    let x = &request[base..base + params.code_length()];
    arith_cw_eq(backend, x, dataset.planes(params, ip, w), op)
}

pub(crate) fn equality_operator(params: &PsiParams) -> Result<EqualityOperator> {
    EqualityOperator::new(params.code.hamming_weight(), params.he.t())
}

/// Evaluates `f` on `0..count` in parallel and sums the returned
/// ciphertext vectors position-wise.
pub(crate) fn par_sum<B, F>(backend: &B, count: usize, f: F) -> Result<Vec<B::Ciphertext>>
where
    B: SimdBackend,
    F: Fn(usize) -> Result<Vec<B::Ciphertext>> + Sync + Send,
{
    (0..count)
        .into_par_iter()
        .map(f)
        .try_reduce_with(|a, b| {
            a.iter()
                .zip(&b)
                .map(|(x, y)| backend.add(x, y))
                .collect::<Result<Vec<_>>>()
        })
        .unwrap_or_else(|| Err(Error::ShapeMismatch("nothing to sum".into())))
}

/// Server computation: `ct_ind[i] = Σ_{i'} ct_eq[i][i']` for every client
/// slot and chunk. Returns `γ·⌈b/N⌉` ciphertexts indexed `i·chunks + w`.
pub fn intersect<B: SimdBackend>(
    backend: &B,
    params: &PsiParams,
    dataset: &ServerDataset,
    request: &[B::Ciphertext],
) -> Result<Vec<B::Ciphertext>> {
    check_request(backend, params, dataset, request)?;
    let op = equality_operator(params)?;
    let chunks = params.chunks();
    let mut out = Vec::with_capacity(params.indicator_ciphertexts());
    for i in 0..params.binning.client_max_load {
        for w in 0..chunks {
            let mut sum = par_sum(backend, dataset.max_load(), |ip| {
                Ok(vec![slot_equality(
                    backend, params, &op, dataset, request, i, ip, w,
                )?])
            })?;
            out.push(sum.pop().expect("one accumulator"));
        }
    }
    Ok(out)
}

/// Applies noise flooding to every response ciphertext.
pub fn rerandomize_all<B: SimdBackend>(
    backend: &B,
    cts: Vec<B::Ciphertext>,
) -> Result<Vec<B::Ciphertext>> {
    cts.iter().map(|c| backend.rerandomize(c)).collect()
}

/// Walks decrypted per-slot results: calls `f(element, i, chunk, s)` for
/// every real client slot.
pub(crate) fn for_each_client_slot(
    params: &PsiParams,
    table: &BinTable<ClientSlot>,
    mut f: impl FnMut(u64, usize, usize, usize) -> Result<()>,
) -> Result<()> {
    let n = params.slot_count();
    for bin in 0..table.bin_count() {
        for (i, slot) in table.entries(bin).iter().enumerate() {
            let x = params
                .binning
                .recover(bin, slot.stored, slot.hash_index as usize);
            f(x, i, bin / n, bin % n)?;
        }
    }
    Ok(())
}

/// Decrypts the indicator ciphertexts and maps hits back to elements.
pub fn extract_intersection<B: SimdBackend>(
    backend: &B,
    params: &PsiParams,
    table: &BinTable<ClientSlot>,
    indicators: &[B::Ciphertext],
    key: &B::SecretKey,
) -> Result<Vec<u64>> {
    if indicators.len() != params.indicator_ciphertexts() {
        return Err(Error::ShapeMismatch(format!(
            "{} indicator ciphertexts, expected {}",
            indicators.len(),
            params.indicator_ciphertexts()
        )));
    }
    let plain = indicators
        .iter()
        .map(|c| backend.decrypt(c, key))
        .collect::<Result<Vec<_>>>()?;
    let chunks = params.chunks();
    let mut out = Vec::new();
    for_each_client_slot(params, table, |x, i, w, s| {
        if plain[i * chunks + w].slots()[s] != 0 {
            out.push(x);
        }
        Ok(())
    })?;
    out.sort_unstable();
    Ok(out)
}

/// `(PM, M)` for one plain-PSI query: `(ℓ·c·γ·μ, h·c·γ·μ)` with
/// `c = ⌈b/N⌉`.
pub fn count_operations(
    code_length: u64,
    hamming_weight: u64,
    bins: u64,
    slot_count: u64,
    client_max_load: u64,
    server_max_load: u64,
) -> (u64, u64) {
    let reps = bins.div_ceil(slot_count) * client_max_load * server_max_load;
    (code_length * reps, hamming_weight * reps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ModulusProfile, ReferenceBackend};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn toy(seed: u64) -> (ReferenceBackend, PsiParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = HeParams::custom(6, 72, 65537, 4).unwrap();
        let mut binning = BinningPlan::new(128, 24, 16, &mut rng).unwrap();
        binning.server_max_load = binning::estimate_server_max_load(200, 128, 3, -40.0);
        let params = PsiParams::new(binning, 4, he.clone(), LossyHasher::new(7)).unwrap();
        (ReferenceBackend::new(he).unwrap(), params)
    }

    #[test]
    fn count_formula_examples() {
        assert_eq!(count_operations(24, 8, 8192, 8192, 1, 526), (12624, 4208));
        assert_eq!(count_operations(24, 8, 100, 8192, 1, 1), (24, 8));
        let (pm, m) = count_operations(24, 8, 16384, 8192, 1, 100);
        assert_eq!(
            count_operations(24, 8, 16384, 8192, 1, 200),
            (2 * pm, 2 * m)
        );
    }

    #[test]
    fn request_shape_for_published_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut binning = BinningPlan::new(8192, 32, 526, &mut rng).unwrap();
        binning.hash_index_bits = false;
        let he = HeParams::for_hamming_weight(8, ModulusProfile::Experiments).unwrap();
        let p = PsiParams::new(binning, 8, he, LossyHasher::new(0)).unwrap();
        assert_eq!(p.code_length(), 24);
        assert_eq!(p.request_ciphertexts(), 24);
    }

    #[test]
    fn empty_client_set_gives_all_dummy_request() {
        let (b, p) = toy(2);
        let key = b.keygen(&mut ChaCha8Rng::seed_from_u64(0));
        let q = client_prepare(&b, &p, &[], &key, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(q.ciphertexts.len(), p.request_ciphertexts());
        for ct in &q.ciphertexts {
            assert!(b.decrypt(ct, &key).unwrap().slots().iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn pipeline_matches_set_intersection() {
        let (b, p) = toy(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let key = b.keygen(&mut rng);
        let server: Vec<u64> = (0..200u64).map(|i| i * 7 + 3).collect();
        let client: Vec<u64> = (0..60u64).map(|i| i * 11).collect();
        let ds = server_prepare(&p, &server).unwrap();
        let q = client_prepare(&b, &p, &client, &key, &mut rng).unwrap();
        let ind = intersect(&b, &p, &ds, &q.ciphertexts).unwrap();
        assert_eq!(ind.len(), p.indicator_ciphertexts());
        let got: HashSet<u64> = extract_intersection(&b, &p, &q.table, &ind, &key)
            .unwrap()
            .into_iter()
            .collect();
        let s: HashSet<u64> = server.into_iter().collect();
        let want: HashSet<u64> = client.into_iter().filter(|x| s.contains(x)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn disjoint_sets_give_zero_indicator() {
        let (b, p) = toy(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let key = b.keygen(&mut rng);
        let ds = server_prepare(&p, &[1, 2, 3]).unwrap();
        let q = client_prepare(&b, &p, &[4, 5, 6], &key, &mut rng).unwrap();
        for ct in intersect(&b, &p, &ds, &q.ciphertexts).unwrap() {
            assert!(b
                .decrypt(&ct, &key)
                .unwrap()
                .slots()
                .iter()
                .all(|&s| s == 0));
        }
    }

    #[test]
    fn single_server_element_one_real_slot_per_copy() {
        let (_, p) = toy(7);
        let ds = server_prepare(&p, &[42]).unwrap();
        assert_eq!(ds.table().real_count(), 3);
        assert_eq!(ds.table().max_observed_load(), 1);
    }

    #[test]
    fn stale_dataset_rejected() {
        let (b, p) = toy(8);
        let (_, other) = toy(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let key = b.keygen(&mut rng);
        let ds = server_prepare(&other, &[1]).unwrap();
        let q = client_prepare(&b, &p, &[1], &key, &mut rng).unwrap();
        assert!(matches!(
            intersect(&b, &p, &ds, &q.ciphertexts),
            Err(Error::FingerprintMismatch)
        ));
    }
}
