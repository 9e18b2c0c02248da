// SPDX-License-Identifier: Apache-2.0

//! Scenario harness: plans, runs and times queries at desk scale, and
//! reports one CSV row per scenario.
//!
//! A scenario file is TOML:
//!
//! ```toml
//! runs = 3
//! seed = 7
//!
//! [[scenario]]
//! n = 4096
//! m = 64
//! variant = "sum"
//! profile = "experiments"
//! element_bits = 32
//! ```
//!
//! The offline phase is server preprocessing. The online phase starts when
//! the request bytes reach the server and ends when the client has decoded
//! the answer. Every run is checked against a cleartext oracle.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use pepsi_core::backend::{ModulusProfile, ReferenceBackend, SimdBackend};
use pepsi_core::net::{Client, QueryOutput, QuerySpec, ServerLabels, ServerState};
use pepsi_core::planner::{self, ModelProbe, PlanOptions};
use pepsi_core::protocol::server_prepare;
use pepsi_core::variants::{LabelLayout, ValuePlanes};
use pepsi_core::wire::{Request, Response};
use pepsi_core::{Error, PsiParams, Result, Variant};

/// Fewest runs a median is taken over.
pub const MIN_RUNS: usize = 3;

fn default_runs() -> usize {
    MIN_RUNS
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Server set size.
    pub n: u64,
    /// Client set size.
    pub m: u64,
    #[serde(default = "default_variant", with = "variant_name")]
    pub variant: Variant,
    #[serde(default)]
    pub profile: ModulusProfile,
    /// Fixed element bitlength; hashed elements when absent.
    pub element_bits: Option<u32>,
    /// Planted intersection size; `min(m, n) / 2` when absent.
    pub intersection: Option<u64>,
    /// Byte labels of this length for labelled runs.
    pub label_bytes: Option<usize>,
}

fn default_variant() -> Variant {
    Variant::Psi
}

mod variant_name {
    use pepsi_core::Variant;
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Variant, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: Self =
            toml::from_str(text).map_err(|e| Error::Malformed(format!("scenario file: {e}")))?;
        if file.runs < MIN_RUNS {
            return Err(Error::InvalidParams(format!(
                "runs must be at least {MIN_RUNS}"
            )));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Medians over the runs of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: Variant,
    pub n: u64,
    pub m: u64,
    pub mu: u64,
    pub offline_s: f64,
    pub online_s: f64,
    pub req_mb: f64,
    pub resp_mb: f64,
}

pub const CSV_HEADER: &str = "variant,n,m,mu,offline_s,online_s,req_MB,resp_MB";

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.variant, r.n, r.m, r.mu, r.offline_s, r.online_s, r.req_mb, r.resp_mb
        );
    }
    s
}

/// Planted instance for one scenario.
pub struct Instance {
    pub params: PsiParams,
    pub server: Vec<u64>,
    pub client: Vec<u64>,
    /// Server values, or labels for labelled runs.
    pub server_values: Vec<u64>,
    pub byte_labels: Option<(usize, Vec<Vec<u8>>)>,
    pub client_values: HashMap<u64, u64>,
}

fn distinct_elements<R: Rng>(count: u64, bits: u32, avoid: &HashSet<u64>, rng: &mut R) -> Vec<u64> {
    let mask = if bits >= 64 {
        u64::MAX
    } else {
        (1 << bits) - 1
    };
    let mut seen = HashSet::with_capacity(count as usize);
    let mut out = Vec::with_capacity(count as usize);
    while (out.len() as u64) < count {
        let x = rng.gen::<u64>() & mask;
        if !avoid.contains(&x) && seen.insert(x) {
            out.push(x);
        }
    }
    out
}

impl Instance {
    pub fn generate<R: Rng>(sc: &Scenario, rng: &mut R) -> Result<Self> {
        let mut opts = PlanOptions::new(sc.m, sc.n);
        opts.element_bits = sc.element_bits;
        opts.profile = sc.profile;
        if sc.variant == Variant::InnerProduct {
            opts.reserved_levels = 2;
        }
        let plan = planner::plan(&opts, &mut ModelProbe::default())?;
        let params = plan.instantiate(rng)?;
        let bits = params.binning.element_bits;
        if bits < 64 && (sc.n + sc.m) as f64 > 0.5 * (1u64 << bits) as f64 {
            return Err(Error::InvalidParams(format!(
                "{bits}-bit elements are too few for n + m"
            )));
        }
        let common = sc.intersection.unwrap_or(sc.m.min(sc.n) / 2);
        if common > sc.m.min(sc.n) {
            return Err(Error::InvalidParams(
                "intersection larger than a set".into(),
            ));
        }
        let server = distinct_elements(sc.n, bits, &HashSet::new(), rng);
        let taken: HashSet<u64> = server.iter().copied().collect();
        let mut client: Vec<u64> = server[..common as usize].to_vec();
        client.extend(distinct_elements(sc.m - common, bits, &taken, rng));
        let t = params.he.t().value();
        let server_values = match sc.variant {
            Variant::Labelled => (0..sc.n).map(|_| rng.gen_range(1..t)).collect(),
            _ => (0..sc.n).map(|_| rng.gen_range(0..1 << 20)).collect(),
        };
        let byte_labels = sc.label_bytes.map(|len| {
            let labels = (0..sc.n)
                .map(|_| (0..len).map(|_| rng.gen()).collect())
                .collect();
            (len, labels)
        });
        let client_values = client
            .iter()
            .map(|&x| (x, rng.gen_range(0..1 << 10)))
            .collect();
        Ok(Self {
            params,
            server,
            client,
            server_values,
            byte_labels,
            client_values,
        })
    }

    /// What a correct query returns.
    pub fn oracle(&self, variant: Variant) -> QueryOutput {
        let t = self.params.he.t();
        let index: HashMap<u64, usize> = self
            .server
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, i))
            .collect();
        let mut hits: Vec<(u64, usize)> = self
            .client
            .iter()
            .filter_map(|x| index.get(x).map(|&i| (*x, i)))
            .collect();
        hits.sort_unstable();
        match variant {
            Variant::Psi => QueryOutput::Intersection(hits.iter().map(|h| h.0).collect()),
            Variant::Labelled => match &self.byte_labels {
                Some((_, labels)) => QueryOutput::ByteLabels(
                    hits.iter().map(|&(x, i)| (x, labels[i].clone())).collect(),
                ),
                None => QueryOutput::Labels(
                    hits.iter()
                        .map(|&(x, i)| (x, self.server_values[i]))
                        .collect(),
                ),
            },
            Variant::Cardinality => QueryOutput::Scalar(hits.len() as u64),
            Variant::Sum => QueryOutput::Scalar(hits.iter().fold(0, |acc, &(_, i)| {
                t.add(acc, t.reduce(self.server_values[i]))
            })),
            Variant::InnerProduct => QueryOutput::Scalar(hits.iter().fold(0, |acc, &(x, i)| {
                t.add(
                    acc,
                    t.mul(t.reduce(self.server_values[i]), self.client_values[&x]),
                )
            })),
        }
    }
}

fn sorted(out: QueryOutput) -> QueryOutput {
    match out {
        QueryOutput::Intersection(mut v) => {
            v.sort_unstable();
            QueryOutput::Intersection(v)
        }
        QueryOutput::Labels(mut v) => {
            v.sort_unstable();
            QueryOutput::Labels(v)
        }
        QueryOutput::ByteLabels(mut v) => {
            v.sort_unstable();
            QueryOutput::ByteLabels(v)
        }
        s => s,
    }
}

/// One timed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub mu: u64,
    pub offline: Duration,
    pub online: Duration,
    pub request_bytes: usize,
    pub response_bytes: usize,
}

/// Preprocesses, queries in process over serialized frames, and checks the
/// answer against the oracle.
pub fn run_once<R: Rng + rand::CryptoRng>(
    inst: &Instance,
    variant: Variant,
    rng: &mut R,
) -> Result<RunStats> {
    let params = &inst.params;
    let backend = ReferenceBackend::new(params.he.clone())?;

    let start = Instant::now();
    let dataset = server_prepare(params, &inst.server)?;
    let mut state = ServerState::new(
        ReferenceBackend::new(params.he.clone())?,
        params.clone(),
        dataset.clone(),
    )?;
    match variant {
        Variant::Sum | Variant::InnerProduct => {
            state = state.with_values(ValuePlanes::scalar(params, &dataset, &inst.server_values)?);
        }
        Variant::Labelled => {
            let labels = match &inst.byte_labels {
                Some((len, labels)) => {
                    let layout = LabelLayout::new(*len, params.he.t())?;
                    let planes = ValuePlanes::large_labels(params, &dataset, &layout, labels)?;
                    ServerLabels::Bytes(layout, planes)
                }
                None => ServerLabels::Scalar(ValuePlanes::labels(
                    params,
                    &dataset,
                    &inst.server_values,
                )?),
            };
            state = state.with_labels(labels);
        }
        Variant::Psi | Variant::Cardinality => {}
    }
    let offline = start.elapsed();

    let key = backend.keygen(rng);
    let client = Client {
        backend: &backend,
        params,
        key: &key,
    };
    let mut spec = QuerySpec::new(variant);
    spec.client_values = Some(&inst.client_values);
    spec.label_bytes = inst.byte_labels.as_ref().map(|l| l.0);
    let prepared = client.prepare(&spec, &inst.client, rng)?;
    let request_bytes = prepared.request.encode();

    let start = Instant::now();
    let resp = state.handle(&Request::decode(&request_bytes)?);
    let response_bytes = resp.encode();
    let out = client.finish(&spec, &prepared.table, &Response::decode(&response_bytes)?)?;
    let online = start.elapsed();

    if sorted(out) != inst.oracle(variant) {
        return Err(Error::Malformed(format!(
            "{variant} answer differs from the oracle"
        )));
    }
    Ok(RunStats {
        mu: params.binning.server_max_load as u64,
        offline,
        online,
        request_bytes: request_bytes.len(),
        response_bytes: response_bytes.len(),
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        (xs[k / 2 - 1] + xs[k / 2]) / 2.0
    }
}

pub fn run_scenario<R: Rng + rand::CryptoRng>(
    sc: &Scenario,
    runs: usize,
    rng: &mut R,
) -> Result<BenchRow> {
    let inst = Instance::generate(sc, rng)?;
    let stats = (0..runs.max(MIN_RUNS))
        .map(|_| run_once(&inst, sc.variant, rng))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&RunStats) -> f64| median(stats.iter().map(f).collect());
    Ok(BenchRow {
        variant: sc.variant,
        n: sc.n,
        m: sc.m,
        mu: stats[0].mu,
        offline_s: col(|s| s.offline.as_secs_f64()),
        online_s: col(|s| s.online.as_secs_f64()),
        req_mb: col(|s| s.request_bytes as f64 / 1e6),
        resp_mb: col(|s| s.response_bytes as f64 / 1e6),
    })
}

pub fn run_file(file: &ScenarioFile) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha20Rng::seed_from_u64(file.seed);
    file.scenarios
        .iter()
        .map(|sc| {
            log::info!("n={} m={} {}", sc.n, sc.m, sc.variant);
            run_scenario(sc, file.runs, &mut rng)
        })
        .collect()
}
