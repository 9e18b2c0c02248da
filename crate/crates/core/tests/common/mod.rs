// SPDX-License-Identifier: Apache-2.0

//! Instance generators and cleartext oracles shared by the integration
//! tests.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::Rng;

use pepsi_core::backend::{default_plain_modulus, HeParams};
use pepsi_core::binning::BinningPlan;
use pepsi_core::{LossyHasher, Modulus, PsiParams};

/// `C(n, k)` by the multiplicative formula; every prefix is itself a
/// binomial coefficient, so the divisions are exact.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

pub fn plain_modulus() -> Modulus {
    Modulus::new(default_plain_modulus()).unwrap()
}

/// Small-ring parameters for fast tests.
#[allow(clippy::too_many_arguments)]
pub fn small_params<R: Rng>(
    log_n: u32,
    bins: usize,
    element_bits: u32,
    client_max_load: usize,
    server_max_load: usize,
    h: u32,
    reserved_levels: u32,
    rng: &mut R,
) -> PsiParams {
    let he = HeParams::custom(log_n, 204, default_plain_modulus(), h)
        .unwrap()
        .with_reserved_levels(reserved_levels);
    let mut binning = BinningPlan::new(bins, element_bits, server_max_load, rng).unwrap();
    binning.client_max_load = client_max_load;
    PsiParams::new(binning, h, he, LossyHasher::new(rng.gen())).unwrap()
}

/// Distinct `bits`-bit integers avoiding `avoid`.
pub fn distinct<R: Rng>(count: usize, bits: u32, avoid: &HashSet<u64>, rng: &mut R) -> Vec<u64> {
    let mask = if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    };
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = rng.gen::<u64>() & mask;
        if !avoid.contains(&x) && seen.insert(x) {
            out.push(x);
        }
    }
    out
}

/// Client and server sets sharing exactly `common` elements, in random
/// order.
pub fn planted_sets<R: Rng>(
    m: usize,
    n: usize,
    common: usize,
    bits: u32,
    rng: &mut R,
) -> (Vec<u64>, Vec<u64>) {
    assert!(common <= m.min(n));
    let server = distinct(n, bits, &HashSet::new(), rng);
    let taken: HashSet<u64> = server.iter().copied().collect();
    let mut client = server[..common].to_vec();
    client.extend(distinct(m - common, bits, &taken, rng));
    shuffle(&mut client, rng);
    let mut server = server;
    shuffle(&mut server, rng);
    (client, server)
}

fn shuffle<T, R: Rng>(xs: &mut [T], rng: &mut R) {
    for i in (1..xs.len()).rev() {
        xs.swap(i, rng.gen_range(0..=i));
    }
}

pub fn oracle_intersection(client: &[u64], server: &[u64]) -> Vec<u64> {
    let s: HashSet<u64> = server.iter().copied().collect();
    let mut out: Vec<u64> = client.iter().copied().filter(|x| s.contains(x)).collect();
    out.sort_unstable();
    out
}

/// `(x, value of x)` over the intersection, sorted by `x`.
pub fn oracle_labels<V: Clone>(client: &[u64], server: &[u64], values: &[V]) -> Vec<(u64, V)> {
    let idx: HashMap<u64, usize> = server.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let mut out: Vec<(u64, V)> = client
        .iter()
        .filter_map(|x| idx.get(x).map(|&i| (*x, values[i].clone())))
        .collect();
    out.sort_unstable_by_key(|p| p.0);
    out
}

/// `Σ server_value(x)·client_value(x)` over the intersection, mod `t`.
pub fn oracle_weighted_sum(
    client: &[u64],
    server: &[u64],
    server_values: &[u64],
    client_value: impl Fn(u64) -> u64,
    t: &Modulus,
) -> u64 {
    oracle_labels(client, server, server_values)
        .into_iter()
        .fold(0, |acc, (x, v)| {
            t.add(acc, t.mul(t.reduce(v), t.reduce(client_value(x))))
        })
}
