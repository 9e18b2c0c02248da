// SPDX-License-Identifier: Apache-2.0

//! Circuit-PSI functionalities built on the per-slot equality indicators.
//!
//! Each variant runs the same equality work as plain PSI and differs only in
//! how the indicators are folded: weighted by server labels (labelled PSI),
//! summed and masked into one ciphertext (PSI-Sum, PSI-Cardinality), or
//! weighted by encrypted client values first (inner product).

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::Rng;

use crate::backend::{SimdBackend, SimdVector};
use crate::binning::{BinTable, ClientSlot};
use crate::error::{Error, Result};
use crate::modulus::Modulus;
use crate::protocol::{
    check_request, equality_operator, for_each_client_slot, par_sum, slot_equality, PsiParams,
    ServerDataset,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Variant {
    Psi = 0,
    Labelled = 1,
    Sum = 2,
    Cardinality = 3,
    InnerProduct = 4,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Psi,
        Variant::Labelled,
        Variant::Sum,
        Variant::Cardinality,
        Variant::InnerProduct,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Psi => "psi",
            Variant::Labelled => "labelled",
            Variant::Sum => "sum",
            Variant::Cardinality => "cardinality",
            Variant::InnerProduct => "inner-product",
        }
    }

    /// Whether the response is a single masked scalar ciphertext.
    pub fn is_aggregate(self) -> bool {
        matches!(
            self,
            Variant::Sum | Variant::Cardinality | Variant::InnerProduct
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnsupportedVariant(s.to_string()))
    }
}

/// Packing of fixed-length byte labels into `⌊log₂ t⌋`-bit limbs.
///
/// A sentinel `1` bit is prepended to the label so the leading limb of a
/// real label is never zero; a zero leading limb therefore means "no match"
/// even when the label itself starts with zero bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelLayout {
    label_bytes: usize,
    limb_bits: u32,
    limbs: usize,
}

impl LabelLayout {
    pub fn new(label_bytes: usize, t: &Modulus) -> Result<Self> {
        if label_bytes == 0 {
            return Err(Error::InvalidParams("label length must be positive".into()));
        }
        let limb_bits = t.slot_bits();
        let limbs = (8 * label_bytes + 1).div_ceil(limb_bits as usize);
        Ok(Self {
            label_bytes,
            limb_bits,
            limbs,
        })
    }

    pub fn label_bytes(&self) -> usize {
        self.label_bytes
    }

    /// `L`, the number of response ciphertext groups.
    pub fn limbs(&self) -> usize {
        self.limbs
    }

    pub fn encode(&self, label: &[u8]) -> Result<Vec<u64>> {
        if label.len() != self.label_bytes {
            return Err(Error::Malformed(format!(
                "label has {} bytes, expected {}",
                label.len(),
                self.label_bytes
            )));
        }
        let v = (BigUint::from(1u8) << (8 * self.label_bytes)) | BigUint::from_bytes_be(label);
        let mask = (BigUint::from(1u8) << self.limb_bits) - 1u8;
        Ok((0..self.limbs)
            .map(|g| {
                let shift = self.limb_bits as usize * (self.limbs - 1 - g);
                let limb: BigUint = (&v >> shift) & &mask;
                limb.try_into().expect("limb fits in u64")
            })
            .collect())
    }

    /// Inverse of [`encode`](Self::encode); `None` if the sentinel is off.
    pub fn decode(&self, limbs: &[u64]) -> Option<Vec<u8>> {
        if limbs.len() != self.limbs || limbs.iter().any(|&l| l >> self.limb_bits != 0) {
            return None;
        }
        let v = limbs.iter().fold(BigUint::ZERO, |acc, &l| {
            (acc << self.limb_bits) | BigUint::from(l)
        });
        let sentinel = BigUint::from(1u8) << (8 * self.label_bytes);
        if &v >> (8 * self.label_bytes) != BigUint::from(1u8) {
            return None;
        }
        let bytes = (v ^ sentinel).to_bytes_be();
        let mut out = vec![0u8; self.label_bytes.saturating_sub(bytes.len())];
        out.extend_from_slice(&bytes[bytes.len().saturating_sub(self.label_bytes)..]);
        Some(out)
    }
}

/// Server values per slot, `groups × μ × ⌈b/N⌉` vectors; zero at dummies.
#[derive(Debug, Clone)]
pub struct ValuePlanes {
    groups: usize,
    planes: Vec<SimdVector>,
}

impl ValuePlanes {
    /// One value per server element, indexed by input position.
    pub fn scalar(params: &PsiParams, dataset: &ServerDataset, values: &[u64]) -> Result<Self> {
        check_values(dataset, values.len())?;
        let t = params.he.t().value();
        if let Some(&v) = values.iter().find(|&&v| v >= t) {
            return Err(Error::InvalidValue(v));
        }
        Ok(Self {
            groups: 1,
            planes: dataset.slot_values(params, |src| values[src as usize]),
        })
    }

    /// Nonzero one-slot labels for labelled PSI.
    pub fn labels(params: &PsiParams, dataset: &ServerDataset, labels: &[u64]) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::InvalidValue(0));
        }
        Self::scalar(params, dataset, labels)
    }

    /// Multi-limb byte labels.
    pub fn large_labels(
        params: &PsiParams,
        dataset: &ServerDataset,
        layout: &LabelLayout,
        labels: &[Vec<u8>],
    ) -> Result<Self> {
        check_values(dataset, labels.len())?;
        let encoded = labels
            .iter()
            .map(|l| layout.encode(l))
            .collect::<Result<Vec<_>>>()?;
        let mut planes = Vec::with_capacity(layout.limbs() * dataset.max_load() * params.chunks());
        #[allow(clippy::needless_range_loop)]
        for g in 0..layout.limbs() {
            planes.extend(dataset.slot_values(params, |src| encoded[src as usize][g]));
        }
        Ok(Self {
            groups: layout.limbs(),
            planes,
        })
    }

    /// All ones: turns PSI-Sum into PSI-Cardinality.
    pub fn unit(params: &PsiParams, dataset: &ServerDataset) -> Self {
        Self {
            groups: 1,
            planes: dataset.slot_values(params, |_| 1),
        }
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    fn get(
        &self,
        params: &PsiParams,
        max_load: usize,
        g: usize,
        ip: usize,
        w: usize,
    ) -> &SimdVector {
        &self.planes[(g * max_load + ip) * params.chunks() + w]
    }

    fn check(&self, params: &PsiParams, dataset: &ServerDataset) -> Result<()> {
        if self.planes.len() != self.groups * dataset.max_load() * params.chunks() {
            return Err(Error::ShapeMismatch(
                "value planes do not match the dataset".into(),
            ));
        }
        Ok(())
    }
}

fn check_values(dataset: &ServerDataset, len: usize) -> Result<()> {
    let table = dataset.table();
    let needed = (0..table.bin_count())
        .flat_map(|b| table.entries(b))
        .map(|e| e.source as usize + 1)
        .max()
        .unwrap_or(0);
    if len < needed {
        return Err(Error::ShapeMismatch(format!(
            "{len} values for a set of at least {needed} elements"
        )));
    }
    Ok(())
}

/// Labelled PSI: `ct_res[g][i] = Σ_{i'} val_s[g][i']·ct_eq[i][i']`.
///
/// Equality is computed once per slot pair; only the label accumulation is
/// repeated per limb group. Returns `groups·γ·⌈b/N⌉` ciphertexts indexed
/// `(g·γ + i)·chunks + w`.
pub fn labelled_psi<B: SimdBackend>(
    backend: &B,
    params: &PsiParams,
    dataset: &ServerDataset,
    values: &ValuePlanes,
    request: &[B::Ciphertext],
) -> Result<Vec<B::Ciphertext>> {
    check_request(backend, params, dataset, request)?;
    values.check(params, dataset)?;
    let op = equality_operator(params)?;
    let gamma = params.binning.client_max_load;
    let chunks = params.chunks();
    let mu = dataset.max_load();
    let mut out: Vec<Option<B::Ciphertext>> = vec![None; values.groups * gamma * chunks];
    for i in 0..gamma {
        for w in 0..chunks {
            let sums = par_sum(backend, mu, |ip| {
                let eq = slot_equality(backend, params, &op, dataset, request, i, ip, w)?;
                (0..values.groups)
                    .map(|g| backend.plain_mult(values.get(params, mu, g, ip, w), &eq))
                    .collect()
            })?;
            for (g, ct) in sums.into_iter().enumerate() {
                out[(g * gamma + i) * chunks + w] = Some(ct);
            }
        }
    }
    Ok(out
        .into_iter()
        .map(|c| c.expect("every group filled"))
        .collect())
}

/// Decrypts a labelled response: for every client element whose leading
/// limb is nonzero, returns the element and its `groups` limbs.
pub fn extract_label_limbs<B: SimdBackend>(
    backend: &B,
    params: &PsiParams,
    table: &BinTable<ClientSlot>,
    response: &[B::Ciphertext],
    groups: usize,
    key: &B::SecretKey,
) -> Result<Vec<(u64, Vec<u64>)>> {
    let gamma = params.binning.client_max_load;
    let chunks = params.chunks();
    if response.len() != groups * gamma * chunks {
        return Err(Error::ShapeMismatch(format!(
            "{} response ciphertexts for {groups} label groups",
            response.len()
        )));
    }
    let plain = response
        .iter()
        .map(|c| backend.decrypt(c, key))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for_each_client_slot(params, table, |x, i, w, s| {
        let limbs: Vec<u64> = (0..groups)
            .map(|g| plain[(g * gamma + i) * chunks + w].slots()[s])
            .collect();
        if limbs[0] != 0 {
            out.push((x, limbs));
        }
        Ok(())
    })?;
    out.sort_unstable();
    Ok(out)
}

/// One-slot labels: `(element, label)` for every match.
pub fn extract_labels<B: SimdBackend>(
    backend: &B,
    params: &PsiParams,
    table: &BinTable<ClientSlot>,
    response: &[B::Ciphertext],
    key: &B::SecretKey,
) -> Result<Vec<(u64, u64)>> {
    Ok(
        extract_label_limbs(backend, params, table, response, 1, key)?
            .into_iter()
            .map(|(x, l)| (x, l[0]))
            .collect(),
    )
}

/// Byte labels: `(element, label)` for every match.
pub fn extract_large_labels<B: SimdBackend>(
    backend: &B,
    params: &PsiParams,
    table: &BinTable<ClientSlot>,
    response: &[B::Ciphertext],
    layout: &LabelLayout,
    key: &B::SecretKey,
) -> Result<Vec<(u64, Vec<u8>)>> {
    extract_label_limbs(backend, params, table, response, layout.limbs(), key)?
        .into_iter()
        .map(|(x, limbs)| {
            layout
                .decode(&limbs)
                .map(|l| (x, l))
                .ok_or_else(|| Error::Malformed(format!("label limbs for {x:#x} do not decode")))
        })
        .collect()
}

/// A uniformly random vector whose slots sum to zero mod `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroSumMask(SimdVector);

impl ZeroSumMask {
    pub fn sample<R: Rng>(len: usize, t: &Modulus, rng: &mut R) -> Self {
        let mut slots: Vec<u64> = (0..len).map(|_| rng.gen_range(0..t.value())).collect();
        if let Some((last, rest)) = slots.split_last_mut() {
            let sum = rest.iter().fold(0, |acc, &s| t.add(acc, s));
            *last = t.neg(sum);
        }
        Self(SimdVector::from_slots(slots, t))
    }

    pub fn vector(&self) -> &SimdVector {
        &self.0
    }
}

/// Sums the chunks of `parts`, then adds a zero-sum mask so only the total
/// survives decryption.
fn mask_total<B: SimdBackend, R: Rng>(
    backend: &B,
    parts: Vec<B::Ciphertext>,
    rng: &mut R,
) -> Result<B::Ciphertext> {
    let mut it = parts.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::ShapeMismatch("nothing to mask".into()))?;
    let total = it.try_fold(first, |acc, c| backend.add(&acc, &c))?;
    let mask = ZeroSumMask::sample(backend.slot_count(), backend.plain_modulus(), rng);
    backend.add_plain(&total, mask.vector())
}

/// PSI-Sum: `Σ_{i'} val_s[i']·Σ_i ct_eq[i][i']`, chunks summed, masked.
pub fn psi_sum<B: SimdBackend, R: Rng>(
    backend: &B,
    params: &PsiParams,
    dataset: &ServerDataset,
    values: &ValuePlanes,
    request: &[B::Ciphertext],
    rng: &mut R,
) -> Result<B::Ciphertext> {
    check_request(backend, params, dataset, request)?;
    values.check(params, dataset)?;
    if values.groups != 1 {
        return Err(Error::ShapeMismatch(
            "PSI-Sum takes one value per element".into(),
        ));
    }
    let op = equality_operator(params)?;
    let chunks = params.chunks();
    let mu = dataset.max_load();
    let gamma = params.binning.client_max_load;
    let sum = par_sum(backend, mu * chunks, |k| {
        let (ip, w) = (k / chunks, k % chunks);
        let mut acc = slot_equality(backend, params, &op, dataset, request, 0, ip, w)?;
        for i in 1..gamma {
            acc = backend.add(
                &acc,
                &slot_equality(backend, params, &op, dataset, request, i, ip, w)?,
            )?;
        }
        Ok(vec![
            backend.plain_mult(values.get(params, mu, 0, ip, w), &acc)?
        ])
    })?;
    mask_total(backend, sum, rng)
}

/// PSI-Cardinality: PSI-Sum with every server value equal to one.
pub fn psi_cardinality<B: SimdBackend, R: Rng>(
    backend: &B,
    params: &PsiParams,
    dataset: &ServerDataset,
    request: &[B::Ciphertext],
    rng: &mut R,
) -> Result<B::Ciphertext> {
    psi_sum(
        backend,
        params,
        dataset,
        &ValuePlanes::unit(params, dataset),
        request,
        rng,
    )
}

/// Client values laid out like the indicator: `γ·⌈b/N⌉` vectors indexed
/// `i·chunks + w`, `value(x)` at the slot holding `x`.
pub fn client_value_planes(
    params: &PsiParams,
    table: &BinTable<ClientSlot>,
    value: impl Fn(u64) -> Result<u64>,
) -> Result<Vec<SimdVector>> {
    let t = params.he.t();
    let chunks = params.chunks();
    let mut planes = vec![SimdVector::zeros(params.slot_count()); params.indicator_ciphertexts()];
    for_each_client_slot(params, table, |x, i, w, s| {
        let v = value(x)?;
        if v >= t.value() {
            return Err(Error::InvalidValue(v));
        }
        planes[i * chunks + w].slots_mut()[s] = v;
        Ok(())
    })?;
    Ok(planes)
}

/// Inner product: `Σ_{i'} val_s[i']·Σ_i val_c[i]·ct_eq[i][i']`. Needs two
/// levels left after equality.
pub fn psi_inner_product<B: SimdBackend, R: Rng>(
    backend: &B,
    params: &PsiParams,
    dataset: &ServerDataset,
    values: &ValuePlanes,
    request: &[B::Ciphertext],
    client_values: &[B::Ciphertext],
    rng: &mut R,
) -> Result<B::Ciphertext> {
    check_request(backend, params, dataset, request)?;
    values.check(params, dataset)?;
    if client_values.len() != params.indicator_ciphertexts() {
        return Err(Error::ShapeMismatch(format!(
            "{} client value ciphertexts, expected {}",
            client_values.len(),
            params.indicator_ciphertexts()
        )));
    }
    let op = equality_operator(params)?;
    let chunks = params.chunks();
    let mu = dataset.max_load();
    let gamma = params.binning.client_max_load;
    let sum = par_sum(backend, mu * chunks, |k| {
        let (ip, w) = (k / chunks, k % chunks);
        let mut acc: Option<B::Ciphertext> = None;
        for i in 0..gamma {
            let eq = slot_equality(backend, params, &op, dataset, request, i, ip, w)?;
            let term = backend.mult(&client_values[i * chunks + w], &eq)?;
            acc = Some(match acc {
                None => term,
                Some(a) => backend.add(&a, &term)?,
            });
        }
        Ok(vec![backend.plain_mult(
            values.get(params, mu, 0, ip, w),
            &acc.expect("γ ≥ 1"),
        )?])
    })?;
    mask_total(backend, sum, rng)
}

/// Sum of all slots of a masked aggregate response.
pub fn extract_sum<B: SimdBackend>(
    backend: &B,
    response: &B::Ciphertext,
    key: &B::SecretKey,
) -> Result<u64> {
    let t = backend.plain_modulus();
    Ok(backend
        .decrypt(response, key)?
        .slots()
        .iter()
        .fold(0, |acc, &s| t.add(acc, s)))
}

/// `M[i] = r_i·(k·I[i] − 1 − Σ_{i'<i} I[i'])` with `r_i` drawn by `r`.
pub fn kth_match_mask_with(
    indicator: &[u64],
    k: u64,
    t: &Modulus,
    mut r: impl FnMut() -> u64,
) -> Vec<u64> {
    let k = t.reduce(k);
    let mut prefix = 0u64;
    indicator
        .iter()
        .map(|&ind| {
            let v = t.sub(t.sub(t.mul(k, ind), 1), prefix);
            prefix = t.add(prefix, t.reduce(ind));
            t.mul(r(), v)
        })
        .collect()
}

/// kth-match mask with `r_i` uniform over `Z_t \ {0}`. The result is zero
/// exactly at the index of the `k`-th one of `indicator`, if it exists.
pub fn kth_match_mask<R: Rng>(indicator: &[u64], k: u64, t: &Modulus, rng: &mut R) -> Vec<u64> {
    kth_match_mask_with(indicator, k, t, || rng.gen_range(1..t.value()))
}

/// Index of the zero entry of a kth-match mask.
pub fn kth_match_index(mask: &[u64]) -> Option<usize> {
    mask.iter().position(|&m| m == 0)
}

/// kth-match over one indicator per ciphertext (every slot carries the same
/// position). Uses additions and constant multiplications only.
pub fn kth_match_encrypted<B: SimdBackend, R: Rng>(
    backend: &B,
    indicators: &[B::Ciphertext],
    k: u64,
    rng: &mut R,
) -> Result<Vec<B::Ciphertext>> {
    let t = backend.plain_modulus();
    let minus_one = t.neg(1);
    let mut prefix: Option<B::Ciphertext> = None;
    let mut out = Vec::with_capacity(indicators.len());
    for ind in indicators {
        let mut v = backend.add_scalar(&backend.mult_scalar(ind, k)?, minus_one)?;
        if let Some(p) = &prefix {
            v = backend.add(&v, &backend.mult_scalar(p, minus_one)?)?;
        }
        out.push(backend.mult_scalar(&v, rng.gen_range(1..t.value()))?);
        prefix = Some(match prefix {
            None => ind.clone(),
            Some(p) => backend.add(&p, ind)?,
        });
    }
    Ok(out)
}
