//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use hcvrp::instance::{Instance, Node, Point};
use hcvrp::qubo::QuboModel;
use rand::Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// TSPLIB nearest-integer Euclidean distance, computed here from scratch.
pub fn nint(a: Point, b: Point) -> i64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt().round() as i64
}

/// Closed tour cost depot -> route -> depot.
pub fn route_cost(points: &[Point], route: &[usize]) -> i64 {
    let mut prev = 0;
    let mut total = 0;
    for &v in route {
        total += nint(points[prev], points[v]);
        prev = v;
    }
    total + nint(points[prev], points[0])
}

pub fn random_points(rng: &mut impl Rng, count: usize, span: i32) -> Vec<Point> {
    (0..count)
        .map(|_| Point::new(rng.gen_range(0..=span) as f64, rng.gen_range(0..=span) as f64))
        .collect()
}

/// Every ordering of `items`.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Cheapest tour over all customer orderings, with the ordering.
pub fn brute_force_tsp(points: &[Point]) -> (i64, Vec<usize>) {
    let customers: Vec<usize> = (1..points.len()).collect();
    permutations(&customers)
        .into_iter()
        .map(|p| (route_cost(points, &p), p))
        .min()
        .expect("at least one ordering")
}

/// Held-Karp optimal tour cost through the depot and all other points.
pub fn held_karp(points: &[Point]) -> i64 {
    let n = points.len();
    if n <= 2 {
        return if n == 2 { 2 * nint(points[0], points[1]) } else { 0 };
    }
    let m = n - 1;
    let d = |a: usize, b: usize| nint(points[a], points[b]);
    let mut best = vec![vec![i64::MAX; m]; 1 << m];
    for k in 0..m {
        best[1 << k][k] = d(0, k + 1);
    }
    for set in 1usize..(1 << m) {
        for last in 0..m {
            let here = best[set][last];
            if set & (1 << last) == 0 || here == i64::MAX {
                continue;
            }
            for next in 0..m {
                if set & (1 << next) == 0 {
                    let s = set | (1 << next);
                    let c = here + d(last + 1, next + 1);
                    if c < best[s][next] {
                        best[s][next] = c;
                    }
                }
            }
        }
    }
    (0..m).map(|k| best[(1 << m) - 1][k] + d(k + 1, 0)).min().unwrap()
}

/// Energy summed term by term from the public coefficient tables.
pub fn naive_energy(model: &QuboModel, bits: &[u8]) -> f64 {
    let mut e = model.offset();
    for (i, &h) in model.linear().iter().enumerate() {
        if bits[i] == 1 {
            e += h;
        }
    }
    for (&(i, j), &q) in model.quadratic() {
        if bits[i] == 1 && bits[j] == 1 {
            e += q;
        }
    }
    e
}

pub fn random_bits(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.gen_range(0..=1u8)).collect()
}

/// Instance from explicit depot-first points and demands.
pub fn instance_from(name: &str, points: &[Point], demands: &[u32], trucks: usize, capacity: u32) -> Instance {
    let nodes = points
        .iter()
        .zip(demands)
        .enumerate()
        .map(|(i, (p, &d))| Node {
            id: i,
            x: p.x,
            y: p.y,
            demand: d,
        })
        .collect();
    Instance::new(name, nodes, trucks, capacity).expect("valid test instance")
}

/// Splits customers `1..=count` into `parts` shuffled, non-empty routes.
pub fn random_routes(rng: &mut impl Rng, count: usize, parts: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut customers: Vec<usize> = (1..=count).collect();
    customers.shuffle(rng);
    let mut cuts: Vec<usize> = (1..count).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
    cuts.sort();
    let mut routes = Vec::with_capacity(parts);
    let mut start = 0;
    for c in cuts.into_iter().chain(std::iter::once(count)) {
        routes.push(customers[start..c].to_vec());
        start = c;
    }
    routes
}
