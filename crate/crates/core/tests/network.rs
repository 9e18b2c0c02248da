// SPDX-License-Identifier: Apache-2.0

mod common;

use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use pepsi_core::backend::{ReferenceBackend, SimdBackend};
use pepsi_core::binning::estimate_server_max_load;
use pepsi_core::net::{self, Client, QueryOutput, QuerySpec, ServerHandle, ServerState};
use pepsi_core::protocol::server_prepare;
use pepsi_core::variants::ValuePlanes;
use pepsi_core::wire::Status;
use pepsi_core::{Error, PsiParams, Variant};

use common::*;

struct Fixture {
    params: PsiParams,
    server_set: Vec<u64>,
    state: Arc<ServerState<ReferenceBackend>>,
    handle: ServerHandle,
}

fn start(
    log_n: u32,
    bins: usize,
    n: usize,
    values: Option<&[u64]>,
    rng: &mut ChaCha20Rng,
) -> Fixture {
    let mu = estimate_server_max_load(n as u64, bins as u64, 3, -40.0);
    let params = small_params(log_n, bins, 32, 1, mu, 6, 1, rng);
    let (_, server_set) = planted_sets(0, n, 0, 32, rng);
    let dataset = server_prepare(&params, &server_set).unwrap();
    let mut state = ServerState::new(
        ReferenceBackend::new(params.he.clone()).unwrap(),
        params.clone(),
        dataset.clone(),
    )
    .unwrap();
    if let Some(v) = values {
        state = state.with_values(ValuePlanes::scalar(&params, &dataset, v).unwrap());
    }
    let state = Arc::new(state);
    let handle = net::spawn(TcpListener::bind("127.0.0.1:0").unwrap(), state.clone()).unwrap();
    Fixture {
        params,
        server_set,
        state,
        handle,
    }
}

#[test]
fn concurrent_clients_against_a_large_set() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let fx = start(12, 4096, 1 << 16, None, &mut rng);
    let addr = fx.handle.local_addr();
    let workers: Vec<_> = (0..8u64)
        .map(|c| {
            let params = fx.params.clone();
            let server_set = fx.server_set.clone();
            thread::spawn(move || {
                let mut rng = ChaCha20Rng::seed_from_u64(100 + c);
                let common = rng.gen_range(0..=300);
                let mut client: Vec<u64> = server_set[(c as usize * 1000)..][..common].to_vec();
                let taken = server_set.iter().copied().collect();
                client.extend(distinct(400 - common, 32, &taken, &mut rng));
                let backend = ReferenceBackend::new(params.he.clone()).unwrap();
                let key = backend.keygen(&mut rng);
                let api = Client {
                    backend: &backend,
                    params: &params,
                    key: &key,
                };
                let (out, _) = api
                    .query(addr, &QuerySpec::new(Variant::Psi), &client, &mut rng)
                    .unwrap();
                out == QueryOutput::Intersection(oracle_intersection(&client, &server_set))
            })
        })
        .collect();
    let results: Vec<bool> = workers.into_iter().map(|w| w.join().unwrap()).collect();
    assert_eq!(results, vec![true; 8]);
    assert_eq!(fx.state.queries_computed(), 8);
    fx.handle.shutdown();
}

#[test]
fn stale_fingerprints_are_refused_before_computation() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let fx = start(8, 256, 500, None, &mut rng);
    let backend = ReferenceBackend::new(fx.params.he.clone()).unwrap();
    let key = backend.keygen(&mut rng);
    let api = Client {
        backend: &backend,
        params: &fx.params,
        key: &key,
    };
    let spec = QuerySpec::new(Variant::Psi);
    let base = api.prepare(&spec, &fx.server_set[..10], &mut rng).unwrap();

    let mut stale_plan = base.request.clone();
    stale_plan.plan_fingerprint = stale_plan.plan_fingerprint.wrapping_add(1);
    let mut stale_he = base.request.clone();
    stale_he.params_fingerprint ^= 1 << 40;
    for req in [stale_plan, stale_he] {
        let resp = net::exchange(fx.handle.local_addr(), &req, None).unwrap();
        assert_eq!(resp.status, Status::FingerprintMismatch);
        assert!(resp.ciphertexts.is_empty());
        assert!(matches!(
            api.finish(&spec, &base.table, &resp),
            Err(Error::FingerprintMismatch)
        ));
    }
    assert_eq!(fx.state.queries_computed(), 0);
    assert_eq!(fx.state.backend().counters().snapshot(), Default::default());

    let resp = net::exchange(fx.handle.local_addr(), &base.request, None).unwrap();
    assert_eq!(resp.status, Status::Ok);
    assert_eq!(fx.state.queries_computed(), 1);
    fx.handle.shutdown();
}

#[test]
fn malformed_frames_close_the_connection() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let fx = start(8, 256, 500, None, &mut rng);
    for garbage in [
        &b"GET / HTTP/1.1\r\n\r\n"[..],
        b"PEPSIv01\x00\x09",
        b"PEPSIv01",
    ] {
        let mut s = TcpStream::connect(fx.handle.local_addr()).unwrap();
        s.write_all(garbage).unwrap();
        s.shutdown(Shutdown::Write).unwrap();
        let mut back = Vec::new();
        let _ = s.read_to_end(&mut back);
        assert!(back.is_empty());
    }
    assert_eq!(fx.state.queries_computed(), 0);

    // The server keeps serving.
    let backend = ReferenceBackend::new(fx.params.he.clone()).unwrap();
    let key = backend.keygen(&mut rng);
    let api = Client {
        backend: &backend,
        params: &fx.params,
        key: &key,
    };
    let client: Vec<u64> = fx.server_set[..20].to_vec();
    let (out, stats) = api
        .query(
            fx.handle.local_addr(),
            &QuerySpec::new(Variant::Cardinality),
            &client,
            &mut rng,
        )
        .unwrap();
    assert_eq!(out, QueryOutput::Scalar(20));
    assert!(stats.response_bytes < stats.request_bytes);
    fx.handle.shutdown();
}

#[test]
fn missing_server_values_are_reported() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let fx = start(8, 256, 500, None, &mut rng);
    let backend = ReferenceBackend::new(fx.params.he.clone()).unwrap();
    let key = backend.keygen(&mut rng);
    let api = Client {
        backend: &backend,
        params: &fx.params,
        key: &key,
    };
    for variant in [Variant::Sum, Variant::Labelled] {
        let err = api
            .query(
                fx.handle.local_addr(),
                &QuerySpec::new(variant),
                &fx.server_set[..5],
                &mut rng,
            )
            .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Rejected {
                    status: Status::Unsupported,
                    ..
                }
            ),
            "{err}"
        );
    }
    fx.handle.shutdown();
}

#[test]
fn sum_over_the_network() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let values: Vec<u64> = (0..800).map(|_| rng.gen_range(0..1 << 30)).collect();
    let fx = start(9, 512, 800, Some(&values), &mut rng);
    let t = *fx.params.he.t();
    let backend = ReferenceBackend::new(fx.params.he.clone()).unwrap();
    let key = backend.keygen(&mut rng);
    let api = Client {
        backend: &backend,
        params: &fx.params,
        key: &key,
    };
    let mut client: Vec<u64> = fx.server_set[100..250].to_vec();
    client.extend(distinct(
        50,
        32,
        &fx.server_set.iter().copied().collect(),
        &mut rng,
    ));
    let (out, stats) = api
        .query(
            fx.handle.local_addr(),
            &QuerySpec::new(Variant::Sum),
            &client,
            &mut rng,
        )
        .unwrap();
    let expected = oracle_weighted_sum(&client, &fx.server_set, &values, |_| 1, &t);
    assert_eq!(out, QueryOutput::Scalar(expected));
    assert!(stats.response_bytes < stats.request_bytes);
    fx.handle.shutdown();
}
