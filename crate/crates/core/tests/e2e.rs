// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use pepsi_core::backend::{ReferenceBackend, SimdBackend};
use pepsi_core::binning::simple_hash_insert;
use pepsi_core::cache::ServerCache;
use pepsi_core::protocol::{client_prepare, extract_intersection, intersect, server_prepare};
use pepsi_core::variants;
use pepsi_core::{Error, PlanFile, PsiParams, ServerDataset};

use common::*;

fn run_psi(
    params: &PsiParams,
    client: &[u64],
    dataset: &ServerDataset,
    rng: &mut ChaCha20Rng,
) -> Vec<u64> {
    let backend = ReferenceBackend::new(params.he.clone()).unwrap();
    let key = backend.keygen(rng);
    let query = client_prepare(&backend, params, client, &key, rng).unwrap();
    let resp = intersect(&backend, params, dataset, &query.ciphertexts).unwrap();
    extract_intersection(&backend, params, &query.table, &resp, &key).unwrap()
}

#[test]
fn bins_spanning_several_batches() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    // Four chunks of 256 slots, two client slots per bin.
    let params = small_params(8, 1024, 30, 2, 40, 4, 1, &mut rng);
    assert_eq!(params.chunks(), 4);
    for _ in 0..5 {
        let (client, server) = planted_sets(600, 4000, 250, 30, &mut rng);
        let dataset = server_prepare(&params, &server).unwrap();
        assert_eq!(
            run_psi(&params, &client, &dataset, &mut rng),
            oracle_intersection(&client, &server)
        );
    }
}

#[test]
fn bins_fewer_than_slots() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let params = small_params(10, 128, 24, 1, 16, 3, 1, &mut rng);
    assert_eq!(params.chunks(), 1);
    let (client, server) = planted_sets(60, 300, 30, 24, &mut rng);
    let dataset = server_prepare(&params, &server).unwrap();
    assert_eq!(
        run_psi(&params, &client, &dataset, &mut rng),
        oracle_intersection(&client, &server)
    );
}

#[test]
fn degenerate_sets() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let params = small_params(8, 256, 28, 1, 24, 5, 1, &mut rng);
    let (_, server) = planted_sets(0, 500, 0, 28, &mut rng);
    let dataset = server_prepare(&params, &server).unwrap();
    assert!(run_psi(&params, &[], &dataset, &mut rng).is_empty());

    let subset: Vec<u64> = server[..150].to_vec();
    let mut expected = subset.clone();
    expected.sort_unstable();
    assert_eq!(run_psi(&params, &subset, &dataset, &mut rng), expected);

    let empty = server_prepare(&params, &[]).unwrap();
    assert!(run_psi(&params, &subset, &empty, &mut rng).is_empty());
}

#[test]
fn extremes_of_the_element_domain() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let params = small_params(8, 256, 64, 1, 8, 6, 1, &mut rng);
    let server = vec![0, 1, u64::MAX, u64::MAX - 1, 1 << 63];
    let client = vec![0, u64::MAX, 2, 1 << 63];
    let dataset = server_prepare(&params, &server).unwrap();
    assert_eq!(
        run_psi(&params, &client, &dataset, &mut rng),
        vec![0, 1 << 63, u64::MAX]
    );
}

#[test]
fn plan_file_and_cache_reproduce_the_answer() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let params = small_params(9, 512, 32, 1, 36, 7, 1, &mut rng);
    let (client, server) = planted_sets(200, 2000, 77, 32, &mut rng);

    let reloaded = PlanFile::from_toml(&PlanFile::from_params(&params, None).to_toml())
        .unwrap()
        .to_params()
        .unwrap();
    assert_eq!(reloaded, params);
    assert_eq!(reloaded.fingerprint(), params.fingerprint());

    let mut bytes = Vec::new();
    ServerCache::new(
        &params,
        simple_hash_insert(&server, &params.binning).unwrap(),
    )
    .write_to(&mut bytes)
    .unwrap();
    let cache = ServerCache::read_from(&mut bytes.as_slice()).unwrap();
    let dataset = ServerDataset::from_table(&reloaded, cache.table).unwrap();
    assert_eq!(
        run_psi(&reloaded, &client, &dataset, &mut rng),
        oracle_intersection(&client, &server)
    );
}

#[test]
fn responses_need_the_client_key() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let params = small_params(8, 256, 28, 1, 12, 4, 1, &mut rng);
    let (client, server) = planted_sets(50, 300, 10, 28, &mut rng);
    let backend = ReferenceBackend::new(params.he.clone()).unwrap();
    let key = backend.keygen(&mut rng);
    let other = backend.keygen(&mut rng);
    let query = client_prepare(&backend, &params, &client, &key, &mut rng).unwrap();
    let dataset = server_prepare(&params, &server).unwrap();
    let resp = intersect(&backend, &params, &dataset, &query.ciphertexts).unwrap();
    assert!(matches!(
        extract_intersection(&backend, &params, &query.table, &resp, &other),
        Err(Error::KeyMismatch)
    ));
}

#[test]
fn inner_product_needs_a_second_level() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let (client, server) = planted_sets(40, 200, 20, 28, &mut rng);
    let values: Vec<u64> = (0..server.len() as u64).collect();
    for (reserved, ok) in [(1, false), (2, true)] {
        let params = small_params(8, 256, 28, 1, 12, 8, reserved, &mut rng);
        let backend = ReferenceBackend::new(params.he.clone()).unwrap();
        let key = backend.keygen(&mut rng);
        let query = client_prepare(&backend, &params, &client, &key, &mut rng).unwrap();
        let dataset = server_prepare(&params, &server).unwrap();
        let planes = variants::ValuePlanes::scalar(&params, &dataset, &values).unwrap();
        let cv: HashMap<u64, u64> = client.iter().map(|&x| (x, rng.gen_range(0..100))).collect();
        let cv_cts: Vec<_> = variants::client_value_planes(&params, &query.table, |x| Ok(cv[&x]))
            .unwrap()
            .iter()
            .map(|p| backend.encrypt(p, &key).unwrap())
            .collect();
        let res = variants::psi_inner_product(
            &backend,
            &params,
            &dataset,
            &planes,
            &query.ciphertexts,
            &cv_cts,
            &mut rng,
        );
        match res {
            Ok(ct) => {
                assert!(ok);
                let t = params.he.t();
                let expected = oracle_weighted_sum(&client, &server, &values, |x| cv[&x], t);
                assert_eq!(
                    variants::extract_sum(&backend, &ct, &key).unwrap(),
                    expected
                );
            }
            Err(e) => {
                assert!(!ok);
                assert!(matches!(e, Error::DepthExhausted), "{e}");
            }
        }
    }
}

#[test]
fn masked_aggregates_hide_slot_values() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let params = small_params(8, 256, 28, 1, 24, 4, 1, &mut rng);
    let (client, server) = planted_sets(100, 500, 60, 28, &mut rng);
    let backend = ReferenceBackend::new(params.he.clone()).unwrap();
    let key = backend.keygen(&mut rng);
    let query = client_prepare(&backend, &params, &client, &key, &mut rng).unwrap();
    let dataset = server_prepare(&params, &server).unwrap();
    let ct = variants::psi_cardinality(&backend, &params, &dataset, &query.ciphertexts, &mut rng)
        .unwrap();
    let slots = backend.decrypt(&ct, &key).unwrap();
    // Unmasked, every slot would be 0 or 1.
    assert!(slots.slots().iter().filter(|&&s| s > 1).count() > slots.len() / 2);
    assert_eq!(variants::extract_sum(&backend, &ct, &key).unwrap(), 60);
}

#[test]
fn overflowing_server_set_is_a_protocol_failure() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let params = small_params(8, 256, 28, 1, 4, 4, 1, &mut rng);
    let (_, server) = planted_sets(0, 2000, 0, 28, &mut rng);
    let err = server_prepare(&params, &server).unwrap_err();
    assert!(err.is_protocol_failure(), "{err}");
    let (client, _) = planted_sets(300, 0, 0, 28, &mut rng);
    let backend = ReferenceBackend::new(params.he.clone()).unwrap();
    let key = backend.keygen(&mut rng);
    let err = client_prepare(&backend, &params, &client, &key, &mut rng).unwrap_err();
    assert!(err.is_protocol_failure(), "{err}");
}
