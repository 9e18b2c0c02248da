// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use pepsi_core::backend::{ReferenceBackend, SimdBackend};
use pepsi_core::binning::simple_hash_insert;
use pepsi_core::cache::{default_cache_path, ServerCache};
use pepsi_core::ingest::{self, ElementFormat};
use pepsi_core::net::{self, Client, QueryOutput, QuerySpec, ServerLabels, ServerState};
use pepsi_core::planner::{self, ModelProbe, Objective, PlanOptions, ReferenceProbe};
use pepsi_core::variants::{LabelLayout, ValuePlanes};
use pepsi_core::{Error, PlanFile, PsiParams, Result, ServerDataset, Variant};

use crate::args::{BenchArgs, ParamsArgs, PreprocessArgs, ProbeArg, QueryArgs, ServeArgs};

fn rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn load_plan(path: &Path) -> Result<PsiParams> {
    PlanFile::load(path)?.to_params()
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParams(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cache_path(explicit: Option<PathBuf>, params: &PsiParams) -> PathBuf {
    explicit.unwrap_or_else(|| default_cache_path(params))
}

pub fn params(a: ParamsArgs) -> Result<()> {
    let mut opts = PlanOptions::new(a.m, a.n);
    opts.element_bits = a.element_bits;
    opts.alpha = a.alpha;
    opts.objective = a.objective.into();
    opts.profile = a.profile.into();
    opts.hash_index_bits = !a.no_index_bits;
    if a.variant == Variant::InnerProduct {
        opts.reserved_levels = 2;
    }
    let plan = match (opts.objective, a.probe) {
        (Objective::Comp, ProbeArg::Reference) => {
            planner::plan(&opts, &mut ReferenceProbe::new(a.seed.unwrap_or(0)))?
        }
        _ => planner::plan(&opts, &mut ModelProbe::default())?,
    };
    let params = plan.instantiate(&mut rng(a.seed))?;
    PlanFile::from_params(&params, Some(&plan)).save(&a.out)?;
    print!("{}", plan.summary());
    println!("{:<24}{:016x}", "fingerprint", params.fingerprint());
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let params = load_plan(&a.plan)?;
    let elements = ingest::read_elements(&read_text(&a.set_file)?, a.format, &params)?;
    let start = Instant::now();
    let table = simple_hash_insert(&elements, &params.binning)?;
    let mut cache = ServerCache::new(&params, table);
    if let Some(path) = &a.values_file {
        let map = ingest::read_value_map(&read_text(path)?, a.format, &params)?;
        match a.label_bytes {
            Some(len) => {
                let (found, labels) = ingest::align_byte_labels(&elements, &map)?;
                if found != len && !labels.is_empty() {
                    return Err(Error::Malformed(format!(
                        "labels are {found} bytes, expected {len}"
                    )));
                }
                LabelLayout::new(len, params.he.t())?;
                cache.byte_labels = Some((len, labels));
            }
            None => cache.values = Some(ingest::align_values(&elements, &map, &params)?),
        }
    }
    let path = cache_path(a.out, &params);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    cache.save(&path)?;
    println!(
        "{} elements into {} bins, max load {} of {}, {:.3} s",
        elements.len(),
        cache.table.bin_count(),
        cache.table.max_observed_load(),
        cache.table.max_load(),
        start.elapsed().as_secs_f64()
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let params = load_plan(&a.plan)?;
    let path = cache_path(a.cache, &params);
    let cache = ServerCache::load_for(&path, &params)?;
    let start = Instant::now();
    let dataset = ServerDataset::from_table(&params, cache.table)?;
    let mut values = None;
    let mut labels = None;
    if let Some(v) = &cache.values {
        values = Some(ValuePlanes::scalar(&params, &dataset, v)?);
        if v.contains(&0) {
            warn!("some values are zero; labelled queries are disabled");
        } else {
            labels = Some(ServerLabels::Scalar(ValuePlanes::labels(
                &params, &dataset, v,
            )?));
        }
    }
    if let Some((len, l)) = &cache.byte_labels {
        let layout = LabelLayout::new(*len, params.he.t())?;
        let planes = ValuePlanes::large_labels(&params, &dataset, &layout, l)?;
        labels = Some(ServerLabels::Bytes(layout, planes));
    }
    info!("dataset ready in {:.3} s", start.elapsed().as_secs_f64());

    let backend = ReferenceBackend::new(params.he.clone())?;
    let mut state =
        ServerState::new(backend, params, dataset)?.with_noise_flooding(a.noise_flooding);
    if let Some(v) = values {
        state = state.with_values(v);
    }
    if let Some(l) = labels {
        state = state.with_labels(l);
    }
    if let Some(threads) = a.threads {
        state = state.with_threads(threads)?;
    }
    let listener = TcpListener::bind(a.listen).map_err(Error::Network)?;
    let handle = net::spawn(listener, Arc::new(state))?;
    println!("listening on {}", handle.local_addr());
    std::io::stdout().flush()?;
    handle.join();
    Ok(())
}

fn format_output(out: &QueryOutput, names: &HashMap<u64, &str>) -> String {
    let name = |x: &u64| {
        names
            .get(x)
            .map_or_else(|| x.to_string(), |s| s.to_string())
    };
    let mut s = String::new();
    match out {
        QueryOutput::Intersection(xs) => xs.iter().for_each(|x| {
            let _ = writeln!(s, "{}", name(x));
        }),
        QueryOutput::Labels(ls) => ls.iter().for_each(|(x, l)| {
            let _ = writeln!(s, "{}\t{l}", name(x));
        }),
        QueryOutput::ByteLabels(ls) => ls.iter().for_each(|(x, l)| {
            let _ = writeln!(s, "{}\t{}", name(x), ingest::to_hex(l));
        }),
        QueryOutput::Scalar(v) => {
            let _ = writeln!(s, "{v}");
        }
    }
    s
}

pub fn query(a: QueryArgs) -> Result<()> {
    let params = load_plan(&a.plan)?;
    let text = read_text(&a.set_file)?;
    let elements = ingest::read_elements(&text, a.format, &params)?;
    let names: HashMap<u64, &str> = match a.format {
        ElementFormat::String => text
            .lines()
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .filter(|l| !l.trim().is_empty())
            .map(|l| (params.hash_element(l.as_bytes()), l))
            .collect(),
        ElementFormat::Integer => HashMap::new(),
    };
    let client_values: Option<HashMap<u64, u64>> = match (a.variant, &a.values_file) {
        (Variant::InnerProduct, Some(path)) => {
            let map = ingest::read_value_map(&read_text(path)?, a.format, &params)?;
            let values = ingest::align_values(&elements, &map, &params)?;
            Some(elements.iter().copied().zip(values).collect())
        }
        (Variant::InnerProduct, None) => {
            return Err(Error::InvalidParams(
                "inner-product queries need --values-file".into(),
            ))
        }
        _ => None,
    };

    let backend = ReferenceBackend::new(params.he.clone())?;
    let mut rng = rng(None);
    let key = backend.keygen(&mut rng);
    let client = Client {
        backend: &backend,
        params: &params,
        key: &key,
    };
    let spec = QuerySpec {
        variant: a.variant,
        client_values: client_values.as_ref(),
        label_bytes: a.label_bytes,
    };
    let t0 = Instant::now();
    let prepared = client.prepare(&spec, &elements, &mut rng)?;
    let t1 = Instant::now();
    let resp = net::exchange(
        &a.server,
        &prepared.request,
        Some(Duration::from_secs(a.timeout)),
    )?;
    let t2 = Instant::now();
    let out = client.finish(&spec, &prepared.table, &resp)?;
    let t3 = Instant::now();

    emit(a.out.as_deref(), &format_output(&out, &names))?;
    eprintln!(
        "request {} bytes, response {} bytes, prepare {:.3} s, online {:.3} s, extract {:.3} s",
        prepared.request.encoded_len(),
        resp.encoded_len(),
        (t1 - t0).as_secs_f64(),
        (t2 - t1).as_secs_f64(),
        (t3 - t2).as_secs_f64()
    );
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let file = pepsi_bench::ScenarioFile::load(&a.scenarios)?;
    let rows = pepsi_bench::run_file(&file)?;
    emit(a.out.as_deref(), &pepsi_bench::to_csv(&rows))
}
