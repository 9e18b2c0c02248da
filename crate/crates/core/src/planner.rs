// SPDX-License-Identifier: Apache-2.0

//! Parameter selection and cost modeling.
//!
//! Given set sizes, the planner fixes the bin count, server bin load,
//! element bitlength and Hamming weight, and predicts request size and
//! operation counts. The Hamming weight is chosen either for communication
//! (closed form over the modulus table) or for computation (through a
//! [`TimingProbe`]).

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{
    ceil_log2, HeParams, ModulusProfile, ReferenceBackend, SimdBackend, SimdVector,
};
use crate::binning::{
    estimate_server_max_load, BinningPlan, KeyedHashes, CUCKOO_EXPANSION, DEFAULT_HASH_COUNT,
    DEFAULT_MAX_EVICTIONS,
};
use crate::cwcode::{
    arith_cw_eq, code_length, CodeParams, EqualityOperator, LossyHasher, MAX_CODE_LENGTH,
};
use crate::error::{Error, Result};
use crate::protocol::{count_operations, PsiParams};

/// Target probability of a bin overflow.
pub const DEFAULT_OVERFLOW_LOG2: f64 = -40.0;
pub const DEFAULT_ALPHA: u32 = 40;
/// Hamming weights the modulus table covers.
pub const MAX_HAMMING_WEIGHT: u32 = 64;

/// `λ = α + ⌈log₂(b·γ·μ)⌉`.
pub fn select_bitlength(bins: u64, client_max_load: u64, server_max_load: u64, alpha: u32) -> u32 {
    alpha + ceil_log2(bins * client_max_load * server_max_load)
}

/// Collision failure bound `b·γ·μ / 2^λ`.
pub fn collision_bound(
    bins: u64,
    client_max_load: u64,
    server_max_load: u64,
    element_bits: u32,
) -> f64 {
    (bins * client_max_load * server_max_load) as f64 * (-(element_bits as f64)).exp2()
}

/// Predicted communication and operation counts for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub code_length: u64,
    /// `⌈b/N⌉·γ·ℓ·N·q`.
    pub comm_bits: u128,
    pub plain_mults: u64,
    pub mults: u64,
}

impl CostModel {
    /// Costs at effective bitlength `λ̄` and weight `h`, or `None` if no
    /// table row covers `h` or the code is impractically long.
    pub fn evaluate(
        bitlength: u32,
        hamming_weight: u32,
        bins: u64,
        client_max_load: u64,
        server_max_load: u64,
        profile: ModulusProfile,
    ) -> Option<Self> {
        let row = profile.row(hamming_weight)?;
        if hamming_weight == 1 && bitlength > 40 {
            return None;
        }
        let ell = code_length(bitlength, hamming_weight);
        let n = 1u64 << row.log_n;
        let chunks = bins.div_ceil(n) as u128;
        let comm_bits =
            chunks * client_max_load as u128 * ell as u128 * n as u128 * row.log_q as u128;
        let (plain_mults, mults) = count_operations(
            ell,
            hamming_weight as u64,
            bins,
            n,
            client_max_load,
            server_max_load,
        );
        Some(Self {
            code_length: ell,
            comm_bits,
            plain_mults,
            mults,
        })
    }

    pub fn comm_megabytes(&self) -> f64 {
        self.comm_bits as f64 / 8.0 / 1e6
    }
}

/// `(h*, ℓ*, comm_bits)` minimizing `⌈b/N⌉·ℓ·N·q` over `h ∈ 1..=64`,
/// preferring the smaller weight on ties.
pub fn optimize_comm(bitlength: u32, bins: u64, profile: ModulusProfile) -> (u32, u64, u128) {
    let mut best: Option<(u32, u64, u128)> = None;
    for h in 1..=MAX_HAMMING_WEIGHT {
        if let Some(c) = CostModel::evaluate(bitlength, h, bins, 1, 1, profile) {
            if best.is_none_or(|b| c.comm_bits < b.2) {
                best = Some((h, c.code_length, c.comm_bits));
            }
        }
    }
    best.expect("h = 64 always has a row")
}

/// Runtime of one batch-pair equality (`γ = μ = 1`) at a given weight.
pub trait TimingProbe {
    /// Milliseconds, or `None` if the configuration cannot be probed.
    fn time_ms(
        &mut self,
        bitlength: u32,
        hamming_weight: u32,
        he: &HeParams,
    ) -> Result<Option<f64>>;
}

/// Op-count model: `ℓ·PM + h·M`, with per-operation costs that grow with
/// the ring size and the number of 64-bit limbs of `q`. Ciphertext
/// multiplication includes relinearization and is quadratic in the limbs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelProbe {
    pub plain_mult_unit: f64,
    pub mult_unit: f64,
}

impl Default for ModelProbe {
    fn default() -> Self {
        Self {
            plain_mult_unit: 1e-6,
            mult_unit: 1e-5,
        }
    }
}

impl ModelProbe {
    pub fn op_cost(&self, bitlength: u32, hamming_weight: u32, he: &HeParams) -> Option<f64> {
        if hamming_weight == 1 && bitlength > 40 {
            return None;
        }
        let ell = code_length(bitlength, hamming_weight) as f64;
        let n = he.slot_count() as f64;
        let limbs = he.log_q as f64 / 64.0;
        let pm = self.plain_mult_unit * n * limbs;
        let m = self.mult_unit * n * he.log_n as f64 * limbs * limbs;
        Some(ell * pm + hamming_weight as f64 * m)
    }
}

impl TimingProbe for ModelProbe {
    fn time_ms(
        &mut self,
        bitlength: u32,
        hamming_weight: u32,
        he: &HeParams,
    ) -> Result<Option<f64>> {
        Ok(self.op_cost(bitlength, hamming_weight, he))
    }
}

/// Times [`arith_cw_eq`] on the reference backend, median of `trials` runs
/// on the calling thread.
#[derive(Debug, Clone)]
pub struct ReferenceProbe {
    pub trials: usize,
    /// Weights whose code is longer than this are skipped.
    pub max_code_length: usize,
    rng: ChaCha8Rng,
}

impl ReferenceProbe {
    pub fn new(seed: u64) -> Self {
        Self {
            trials: 5,
            max_code_length: 4096,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl TimingProbe for ReferenceProbe {
    fn time_ms(
        &mut self,
        bitlength: u32,
        hamming_weight: u32,
        he: &HeParams,
    ) -> Result<Option<f64>> {
        if hamming_weight == 1 && bitlength > 20 {
            return Ok(None);
        }
        let code = CodeParams::new(bitlength, hamming_weight)?;
        if code.code_length() > self.max_code_length {
            return Ok(None);
        }
        let backend = ReferenceBackend::new(he.clone())?;
        let op = EqualityOperator::new(hamming_weight, he.t())?;
        let key = backend.keygen(&mut ChaCha8Rng::from_rng(&mut self.rng).expect("seeded"));
        let n = he.slot_count();
        let mask = if bitlength >= 64 {
            u64::MAX
        } else {
            (1u64 << bitlength) - 1
        };
        let planes = |rng: &mut ChaCha8Rng| -> Result<Vec<SimdVector>> {
            let mut planes = vec![SimdVector::zeros(n); code.code_length()];
            for s in 0..n {
                for &j in code.encode(rng.next_u64() & mask)?.ones() {
                    planes[j as usize].slots_mut()[s] = 1;
                }
            }
            Ok(planes)
        };
        let x = planes(&mut self.rng)?
            .iter()
            .map(|p| backend.encrypt(p, &key))
            .collect::<Result<Vec<_>>>()?;
        let y = planes(&mut self.rng)?;
        let mut times = Vec::with_capacity(self.trials);
        for _ in 0..self.trials.max(1) {
            let start = Instant::now();
            arith_cw_eq(&backend, &x, &y, &op)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        Ok(Some(times[times.len() / 2]))
    }
}

/// `(h*, ℓ*)` minimizing probed runtime over `hamming_weights`, plus the
/// full `(h, ms)` curve.
#[allow(clippy::type_complexity)]
pub fn optimize_comp(
    bitlength: u32,
    profile: ModulusProfile,
    hamming_weights: impl IntoIterator<Item = u32>,
    probe: &mut impl TimingProbe,
) -> Result<(u32, u64, Vec<(u32, f64)>)> {
    let mut curve = Vec::new();
    for h in hamming_weights {
        let Some(row) = profile.row(h) else { continue };
        let he = HeParams::for_hamming_weight(row.max_weight, profile)?;
        if let Some(ms) = probe.time_ms(bitlength, h, &he)? {
            curve.push((h, ms));
        }
    }
    let &(h, _) = curve
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::InvalidParams("no Hamming weight could be probed".into()))?;
    Ok((h, code_length(bitlength, h), curve))
}

/// One row of the communication/runtime tradeoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub bitlength: u32,
    pub hamming_weight: u32,
    pub comm_mb: f64,
    pub runtime_ms: f64,
}

pub fn emit_tradeoff(
    bitlengths: &[u32],
    bins: u64,
    hamming_weights: impl IntoIterator<Item = u32> + Clone,
    profile: ModulusProfile,
    probe: &mut impl TimingProbe,
) -> Result<Vec<TradeoffRow>> {
    let mut rows = Vec::new();
    for &lb in bitlengths {
        for h in hamming_weights.clone() {
            let Some(cost) = CostModel::evaluate(lb, h, bins, 1, 1, profile) else {
                continue;
            };
            let row = profile.row(h).expect("cost model found a row");
            let he = HeParams::for_hamming_weight(row.max_weight, profile)?;
            let Some(ms) = probe.time_ms(lb, h, &he)? else {
                continue;
            };
            rows.push(TradeoffRow {
                bitlength: lb,
                hamming_weight: h,
                comm_mb: cost.comm_megabytes(),
                runtime_ms: ms,
            });
        }
    }
    Ok(rows)
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from("bitlength,h,comm_MB,runtime_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.6}",
            r.bitlength, r.hamming_weight, r.comm_mb, r.runtime_ms
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Comm,
    Comp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    /// Client set size `m`.
    pub client_size: u64,
    /// Server set size `n`.
    pub server_size: u64,
    /// Fixed element bitlength; `None` hashes elements to
    /// `λ = α + ⌈log₂(bγμ)⌉` bits.
    pub element_bits: Option<u32>,
    pub alpha: u32,
    pub objective: Objective,
    pub profile: ModulusProfile,
    pub hash_index_bits: bool,
    pub overflow_log2: f64,
    /// Levels kept after equality (2 for inner products).
    pub reserved_levels: u32,
}

impl PlanOptions {
    pub fn new(client_size: u64, server_size: u64) -> Self {
        Self {
            client_size,
            server_size,
            element_bits: None,
            alpha: DEFAULT_ALPHA,
            objective: Objective::Comm,
            profile: ModulusProfile::Table,
            hash_index_bits: true,
            overflow_log2: DEFAULT_OVERFLOW_LOG2,
            reserved_levels: 1,
        }
    }
}

/// Output of [`plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub hamming_weight: u32,
    pub code_length: u64,
    pub he: HeParams,
    /// `λ`.
    pub element_bits: u32,
    /// `λ̄`.
    pub stored_bits: u32,
    pub bins: u64,
    pub client_max_load: u64,
    pub server_max_load: u64,
    pub hash_index_bits: bool,
    pub cost: CostModel,
    /// Collision failure bound at `λ`; zero when elements are used as is.
    pub collision_bound: f64,
    pub objective_value: f64,
}

impl PlanResult {
    /// Draws fresh hash keys and builds protocol parameters.
    pub fn instantiate<R: Rng>(&self, rng: &mut R) -> Result<PsiParams> {
        let binning = BinningPlan {
            bin_bits: self.bins.trailing_zeros(),
            element_bits: self.element_bits,
            client_max_load: self.client_max_load as usize,
            server_max_load: self.server_max_load as usize,
            hash_index_bits: self.hash_index_bits,
            hashes: KeyedHashes::random(DEFAULT_HASH_COUNT, rng),
            max_evictions: DEFAULT_MAX_EVICTIONS,
        };
        PsiParams::new(
            binning,
            self.hamming_weight,
            self.he.clone(),
            LossyHasher::new(rng.gen()),
        )
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k:<24}{v}");
        };
        row("hamming weight h", self.hamming_weight.to_string());
        row("code length", self.code_length.to_string());
        row("element bits", self.element_bits.to_string());
        row("effective bits", self.stored_bits.to_string());
        row("bins b", self.bins.to_string());
        row("client max load", self.client_max_load.to_string());
        row("server max load", self.server_max_load.to_string());
        row(
            "log N / log q",
            format!("{} / {}", self.he.log_n, self.he.log_q),
        );
        row("plaintext modulus t", self.he.t().value().to_string());
        row("request MB", format!("{:.3}", self.cost.comm_megabytes()));
        row(
            "PM / M",
            format!("{} / {}", self.cost.plain_mults, self.cost.mults),
        );
        row("collision bound", format!("{:.3e}", self.collision_bound));
        s
    }
}

/// Bin count for a client set: a power of two, at least `1.27·m` and at
/// least one full batch of `N` slots.
pub fn bins_for(client_size: u64, slot_count: u64) -> u64 {
    let min = (client_size as f64 * CUCKOO_EXPANSION).ceil() as u64;
    min.max(1).next_power_of_two().max(slot_count)
}

/// Searches `h ∈ 1..=64` for the best configuration under `opts.objective`.
pub fn plan(opts: &PlanOptions, probe: &mut impl TimingProbe) -> Result<PlanResult> {
    if let Some(bits) = opts.element_bits {
        if !(1..=64).contains(&bits) {
            return Err(Error::InvalidParams(format!(
                "element bits {bits} outside 1..=64"
            )));
        }
    }
    let mut best: Option<PlanResult> = None;
    for h in 1..=MAX_HAMMING_WEIGHT {
        let Some(row) = opts.profile.row(h) else {
            continue;
        };
        let bins = bins_for(opts.client_size, 1 << row.log_n);
        let mu = estimate_server_max_load(
            opts.server_size,
            bins,
            DEFAULT_HASH_COUNT as u64,
            opts.overflow_log2,
        ) as u64;
        let (lambda, bound) = match opts.element_bits {
            Some(bits) => (bits, 0.0),
            None => {
                let l = select_bitlength(bins, 1, mu, opts.alpha).min(64);
                (l, collision_bound(bins, 1, mu, l))
            }
        };
        let c = bins.trailing_zeros();
        if lambda <= c {
            continue;
        }
        let index_bits = if opts.hash_index_bits {
            ceil_log2(DEFAULT_HASH_COUNT as u64)
        } else {
            0
        };
        let stored = lambda - c + index_bits;
        if stored > 64 || (h == 1 && stored > 20) || code_length(stored, h) > MAX_CODE_LENGTH {
            continue;
        }
        let Some(cost) = CostModel::evaluate(stored, h, bins, 1, mu, opts.profile) else {
            continue;
        };
        let he = HeParams::for_hamming_weight(h, opts.profile)?
            .with_reserved_levels(opts.reserved_levels);
        let value = match opts.objective {
            Objective::Comm => cost.comm_bits as f64,
            Objective::Comp => match probe.time_ms(stored, h, &he)? {
                Some(ms) => ms,
                None => continue,
            },
        };
        if best.as_ref().is_none_or(|b| value < b.objective_value) {
            best = Some(PlanResult {
                hamming_weight: h,
                code_length: cost.code_length,
                he,
                element_bits: lambda,
                stored_bits: stored,
                bins,
                client_max_load: 1,
                server_max_load: mu,
                hash_index_bits: opts.hash_index_bits,
                cost,
                collision_bound: bound,
                objective_value: value,
            });
        }
    }
    best.ok_or_else(|| Error::InvalidParams("no Hamming weight yields a feasible plan".into()))
}

/// Outcome of [`simulate_collision_failures`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollisionStats {
    pub trials: u64,
    pub failures: u64,
    /// Trials discarded because a server bin exceeded `μ`.
    pub overflows: u64,
}

impl CollisionStats {
    /// Failure rate among trials without overflow.
    pub fn rate(&self) -> f64 {
        self.failures as f64 / (self.trials - self.overflows).max(1) as f64
    }

    /// Upper end of the 95% Wilson interval of [`rate`](Self::rate).
    pub fn upper_95(&self) -> f64 {
        let n = (self.trials - self.overflows).max(1) as f64;
        let p = self.rate();
        let z = 1.959_963_984_540_054f64;
        let denom = 1.0 + z * z / n;
        let centre = p + z * z / (2.0 * n);
        let spread = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
        (centre + spread) / denom
    }
}

/// Monte-Carlo of the collision failure event for distinct elements hashed
/// to `λ` bits: `m` client elements occupy distinct bins, `n` server
/// elements are placed in `k` uniformly chosen bins each, and a trial fails
/// when some bin holds a client and a server element with equal `λ`-bit
/// images.
#[allow(clippy::too_many_arguments)]
pub fn simulate_collision_failures<R: Rng>(
    bins: usize,
    client_size: usize,
    server_size: usize,
    hash_count: usize,
    element_bits: u32,
    server_max_load: usize,
    trials: u64,
    rng: &mut R,
) -> CollisionStats {
    const EMPTY: u64 = u64::MAX;
    let mask = (1u64 << element_bits) - 1;
    let mut client = vec![EMPTY; bins];
    let mut loads = vec![0u32; bins];
    let mut stats = CollisionStats {
        trials,
        failures: 0,
        overflows: 0,
    };
    let mut chosen = Vec::with_capacity(hash_count);
    for _ in 0..trials {
        client.fill(EMPTY);
        loads.fill(0);
        for bin in rand::seq::index::sample(rng, bins, client_size) {
            client[bin] = rng.next_u64() & mask;
        }
        let mut failed = false;
        for _ in 0..server_size {
            let v = rng.next_u64() & mask;
            chosen.clear();
            for _ in 0..hash_count {
                let bin = rng.gen_range(0..bins);
                if !chosen.contains(&bin) {
                    chosen.push(bin);
                    loads[bin] += 1;
                    failed |= client[bin] == v;
                }
            }
        }
        if loads.iter().any(|&l| l as usize > server_max_load) {
            stats.overflows += 1;
        } else if failed {
            stats.failures += 1;
        }
    }
    stats
}
