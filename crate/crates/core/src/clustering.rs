//! Fuzzy C-Means over customer coordinates, with depot replication and
//! elbow-based choice of the cluster count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{fractional_distance, Instance, Point};
use crate::seeds::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("cannot form {clusters} clusters from {points} points")]
    TooManyClusters { clusters: usize, points: usize },
    #[error("invalid clustering configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcmConfig {
    pub fuzziness: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Depot copies appended to the customers; `None` means one per cluster.
    pub depot_copies: Option<usize>,
}

impl Default for FcmConfig {
    fn default() -> Self {
        Self {
            fuzziness: 2.0,
            tolerance: 1e-5,
            max_iterations: 300,
            seed: 0,
            depot_copies: None,
        }
    }
}

impl FcmConfig {
    pub fn validate(&self) -> Result<(), ClusteringError> {
        if !(self.fuzziness > 1.0) {
            return Err(ClusteringError::Config(format!("fuzziness must exceed 1, got {}", self.fuzziness)));
        }
        if !(self.tolerance > 0.0) {
            return Err(ClusteringError::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(ClusteringError::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Seed used for a run with `clusters` clusters, shared by every caller so
    /// that equal cluster counts give equal clusterings.
    pub fn seed_for(&self, clusters: usize) -> u64 {
        derive_seed(self.seed, clusters as u64)
    }
}

/// Soft memberships: `gamma[k][i]` is the affinity of point `k` for cluster `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipMatrix {
    pub gamma: Vec<Vec<f64>>,
    pub centroids: Vec<Point>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl MembershipMatrix {
    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Keeps only the first `count` rows (the customers, dropping depot copies).
    pub fn customer_rows(&self, count: usize) -> Vec<Vec<f64>> {
        self.gamma[..count.min(self.gamma.len())].to_vec()
    }

    pub fn argmax(&self, row: usize) -> usize {
        argmax(&self.gamma[row])
    }

    /// Diagnostic dump with keys `centroids`, `gamma`, `iterations`, `converged`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "centroids": self.centroids.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
            "gamma": self.gamma,
            "iterations": self.iterations_run,
            "converged": self.converged,
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Customer coordinates followed by `depot_copies` copies of the depot.
pub fn build_fcm_points(instance: &Instance, depot_copies: usize) -> Vec<Point> {
    let depot = instance.depot().point();
    instance
        .customers()
        .iter()
        .map(|c| c.point())
        .chain(std::iter::repeat(depot).take(depot_copies))
        .collect()
}

/// Membership-weighted centroids. A cluster whose total weight underflows is
/// re-seeded at the point farthest from the centroid it currently favors.
pub fn update_centroids(points: &[Point], gamma: &[Vec<f64>], m: f64) -> Vec<Point> {
    let c = gamma.first().map_or(0, |r| r.len());
    let mut centroids = Vec::with_capacity(c);
    let mut empty = Vec::new();
    for i in 0..c {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for (p, row) in points.iter().zip(gamma) {
            let w = row[i].powf(m);
            sx += w * p.x;
            sy += w * p.y;
            sw += w;
        }
        if sw < 1e-12 {
            empty.push(i);
            centroids.push(Point::new(0.0, 0.0));
        } else {
            centroids.push(Point::new(sx / sw, sy / sw));
        }
    }
    for i in empty {
        let far = points
            .iter()
            .zip(gamma)
            .map(|(p, row)| fractional_distance(*p, centroids[argmax(row)]))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, d)| if d > acc.1 { (k, d) } else { acc })
            .0;
        if let Some(&p) = points.get(far) {
            centroids[i] = p;
        }
    }
    centroids
}

/// Standard FCM membership update; a point sitting on a centroid belongs to
/// the first such centroid entirely.
pub fn update_memberships(points: &[Point], centroids: &[Point], m: f64) -> Vec<Vec<f64>> {
    let exponent = 1.0 / (m - 1.0);
    points
        .iter()
        .map(|&p| {
            let d2: Vec<f64> = centroids
                .iter()
                .map(|&v| fractional_distance(p, v).powi(2))
                .collect();
            if let Some(hit) = d2.iter().position(|&d| d == 0.0) {
                let mut row = vec![0.0; centroids.len()];
                row[hit] = 1.0;
                return row;
            }
            d2.iter()
                .map(|&dk| 1.0 / d2.iter().map(|&dj| (dk / dj).powf(exponent)).sum::<f64>())
                .collect()
        })
        .collect()
}

/// `J = Σ_k Σ_i γ_ki^m · d(x_k, v_i)²`.
pub fn objective(points: &[Point], gamma: &[Vec<f64>], centroids: &[Point], m: f64) -> f64 {
    points
        .iter()
        .zip(gamma)
        .map(|(&p, row)| {
            row.iter()
                .zip(centroids)
                .map(|(&g, &v)| g.powf(m) * fractional_distance(p, v).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn random_memberships(points: usize, clusters: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| {
            let raw: Vec<f64> = (0..clusters).map(|_| rng.gen::<f64>() + 1e-9).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
        .collect()
}

pub fn run_fcm(points: &[Point], clusters: usize, config: &FcmConfig) -> Result<MembershipMatrix, ClusteringError> {
    run_fcm_observed(points, clusters, config, |_, _| {})
}

/// Like [`run_fcm`], calling `observe(gamma, centroids)` after every membership
/// update, starting with the random initialization.
pub fn run_fcm_observed(
    points: &[Point],
    clusters: usize,
    config: &FcmConfig,
    mut observe: impl FnMut(&[Vec<f64>], &[Point]),
) -> Result<MembershipMatrix, ClusteringError> {
    config.validate()?;
    if clusters == 0 || clusters > points.len() {
        return Err(ClusteringError::TooManyClusters {
            clusters,
            points: points.len(),
        });
    }
    let m = config.fuzziness;
    let mut gamma = random_memberships(points.len(), clusters, config.seed);
    let mut centroids = update_centroids(points, &gamma, m);
    observe(&gamma, &centroids);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let next = update_memberships(points, &centroids, m);
        let change = gamma
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gamma = next;
        observe(&gamma, &centroids);
        centroids = update_centroids(points, &gamma, m);
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(MembershipMatrix {
        gamma,
        centroids,
        iterations_run: iterations,
        converged,
    })
}

/// Clusters the customers of `instance` with `clusters` clusters and the
/// configured number of depot copies.
pub fn cluster_instance(
    instance: &Instance,
    clusters: usize,
    config: &FcmConfig,
) -> Result<MembershipMatrix, ClusteringError> {
    let copies = config.depot_copies.unwrap_or(clusters);
    let points = build_fcm_points(instance, copies);
    let run_config = FcmConfig {
        seed: config.seed_for(clusters),
        ..config.clone()
    };
    run_fcm(&points, clusters, &run_config)
}

/// Sum over customers of the distance to their strongest centroid.
pub fn intra_cluster_distance(customers: &[Point], fcm: &MembershipMatrix) -> f64 {
    customers
        .iter()
        .enumerate()
        .map(|(k, &p)| fractional_distance(p, fcm.centroids[fcm.argmax(k)]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowPoint {
    pub clusters: usize,
    pub intra_cluster_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowSelection {
    pub chosen: usize,
    pub curve: Vec<ElbowPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub memberships: MembershipMatrix,
}

/// Index of the elbow of a decreasing curve: the interior point with the
/// largest second difference, earliest on ties. Curves shorter than three
/// points yield `None`.
pub fn elbow_index(values: &[f64]) -> Option<usize> {
    if values.len() < 3 {
        return None;
    }
    let mut best = 1;
    let mut best_score = f64::NEG_INFINITY;
    for i in 1..values.len() - 1 {
        let score = values[i - 1] - 2.0 * values[i] + values[i + 1];
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Some(best)
}

/// Runs FCM for each candidate count and picks the elbow of the
/// intra-cluster distance curve. Depot copies are clustered but not scored.
pub fn select_cluster_count(
    instance: &Instance,
    candidates: &[usize],
    config: &FcmConfig,
) -> Result<ElbowSelection, ClusteringError> {
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty() {
        return Err(ClusteringError::Config("no cluster-count candidates".into()));
    }
    if let Some(&c) = sorted.iter().find(|&&c| c < instance.truck_count) {
        return Err(ClusteringError::Config(format!(
            "candidate {c} is below the truck count {}",
            instance.truck_count
        )));
    }
    let customers: Vec<Point> = instance.customers().iter().map(|c| c.point()).collect();
    let runs: Vec<MembershipMatrix> = sorted
        .par_iter()
        .map(|&c| cluster_instance(instance, c, config))
        .collect::<Result<_, _>>()?;
    let curve: Vec<ElbowPoint> = sorted
        .iter()
        .zip(&runs)
        .map(|(&clusters, fcm)| ElbowPoint {
            clusters,
            intra_cluster_distance: intra_cluster_distance(&customers, fcm),
        })
        .collect();
    let values: Vec<f64> = curve.iter().map(|p| p.intra_cluster_distance).collect();
    let (index, warning) = match elbow_index(&values) {
        Some(i) => (i, None),
        None => (
            0,
            Some(format!(
                "{} candidate(s) cannot define an elbow; using the smallest",
                sorted.len()
            )),
        ),
    };
    Ok(ElbowSelection {
        chosen: sorted[index],
        curve,
        warning,
        memberships: runs.into_iter().nth(index).expect("index within candidates"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn centroid_examples() {
        let c = update_centroids(&[p(0.0, 0.0), p(2.0, 0.0)], &[vec![1.0], vec![1.0]], 2.0);
        assert_eq!(c, vec![p(1.0, 0.0)]);
        let c = update_centroids(&[p(3.0, 7.0)], &[vec![1.0]], 2.0);
        assert_eq!(c, vec![p(3.0, 7.0)]);
        let c = update_centroids(&[p(0.0, 0.0), p(4.0, 0.0)], &[vec![1.0, 0.0], vec![0.0, 1.0]], 2.0);
        assert_eq!(c[0], p(0.0, 0.0));
    }

    #[test]
    fn membership_examples() {
        let g = update_memberships(&[p(0.0, 0.0)], &[p(-1.0, 0.0), p(1.0, 0.0)], 2.0);
        assert!((g[0][0] - 0.5).abs() < 1e-12 && (g[0][1] - 0.5).abs() < 1e-12);
        let g = update_memberships(&[p(1.0, 1.0)], &[p(1.0, 1.0), p(5.0, 1.0), p(1.0, 1.0)], 2.0);
        assert_eq!(g[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        let pts = [p(0.0, 0.0), p(1.0, 0.0), p(10.0, 0.0)];
        let gamma = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        let c = update_centroids(&pts, &gamma, 2.0);
        assert_eq!(c[1], p(10.0, 0.0));
    }

    #[test]
    fn single_cluster_and_determinism() {
        let pts = [p(0.0, 0.0), p(2.0, 0.0), p(1.0, 3.0)];
        let cfg = FcmConfig { seed: 9, ..FcmConfig::default() };
        let one = run_fcm(&pts, 1, &cfg).unwrap();
        assert!(one.gamma.iter().all(|r| r == &vec![1.0]));
        assert!((one.centroids[0].x - 1.0).abs() < 1e-12 && (one.centroids[0].y - 1.0).abs() < 1e-12);
        assert_eq!(run_fcm(&pts, 2, &cfg).unwrap(), run_fcm(&pts, 2, &cfg).unwrap());
        assert!(run_fcm(&pts, 4, &cfg).is_err());
    }

    #[test]
    fn elbow_picks_sharpest_bend() {
        assert_eq!(elbow_index(&[100.0, 20.0, 15.0, 12.0]), Some(1));
        assert_eq!(elbow_index(&[100.0, 90.0, 20.0, 18.0]), Some(2));
        assert_eq!(elbow_index(&[3.0, 2.0]), None);
        assert_eq!(elbow_index(&[3.0, 2.0, 1.0]), Some(1));
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(FcmConfig { fuzziness: 1.0, ..FcmConfig::default() }.validate().is_err());
        assert!(FcmConfig { tolerance: 0.0, ..FcmConfig::default() }.validate().is_err());
    }
}
