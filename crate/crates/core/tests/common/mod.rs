#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rwch::{Field, RandomWalk};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected weighted graph: a random spanning tree plus extra edges with probability `p`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> RandomWalk {
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((i, j, rng.gen_range(0.2..2.0)));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j, rng.gen_range(0.2..2.0)));
            }
        }
    }
    RandomWalk::from_weighted_graph(n, &edges, false).unwrap()
}

/// Same as [`random_graph`] with optional self-loops.
pub fn random_graph_with_loops(rng: &mut ChaCha8Rng, n: usize, p: f64) -> RandomWalk {
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((i, j, rng.gen_range(0.2..2.0)));
    }
    for i in 0..n {
        if rng.gen_bool(0.3) {
            edges.push((i, i, rng.gen_range(0.1..1.0)));
        }
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j, rng.gen_range(0.2..2.0)));
            }
        }
    }
    RandomWalk::from_weighted_graph(n, &edges, true).unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Field {
    Field::from_fn(n, |_| rng.gen_range(lo..hi))
}

/// Random field with zero `nu`-mean.
pub fn random_mean_zero(rng: &mut ChaCha8Rng, rw: &RandomWalk) -> Field {
    let f = random_field(rng, rw.n(), -1.0, 1.0);
    let m = rw.nu().mean(f.as_slice());
    f.map(|x| x - m)
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol:e})");
}
