//! Turns fuzzy memberships into a hard, capacity-aware customer-to-cluster map.
//!
//! Each round, every unassigned customer nominates its best remaining cluster.
//! Each cluster admits its nominees in decreasing order of membership until the
//! next one no longer fits; the rest drop that cluster from their preferences
//! and try again in the next round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Point;

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("{clusters} clusters is not a positive multiple of {trucks} trucks")]
    NotDivisible { clusters: usize, trucks: usize },
    #[error("invalid assignment input: {0}")]
    Invalid(String),
}

/// Capacity of one cluster when `clusters / trucks` clusters share a truck.
pub fn cluster_capacity(truck_capacity: u32, clusters: usize, trucks: usize) -> Result<u32, AssignmentError> {
    if trucks == 0 || clusters == 0 || clusters % trucks != 0 {
        return Err(AssignmentError::NotDivisible { clusters, trucks });
    }
    Ok(truck_capacity / (clusters / trucks) as u32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Customer node ids (1-based; row `k` of the memberships is node `k + 1`).
    pub members: Vec<usize>,
    pub centroid: Point,
    pub aggregate_demand: u64,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster of customer node `k + 1` at position `k`.
    pub cluster_of: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub rounds: usize,
    pub overflow: bool,
    /// Customers placed by the fallback because no cluster could take them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overflowed: Vec<usize>,
}

impl ClusterAssignment {
    pub fn residual(&self, cluster: usize) -> i64 {
        let c = &self.clusters[cluster];
        c.capacity as i64 - c.aggregate_demand as i64
    }
}

/// Preference order of one membership row: decreasing membership, lower
/// cluster index first on ties.
pub fn preference_order(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

pub fn assign(
    memberships: &[Vec<f64>],
    centroids: &[Point],
    demands: &[u32],
    capacities: &[u32],
) -> Result<ClusterAssignment, AssignmentError> {
    let k = memberships.len();
    let c = capacities.len();
    if demands.len() != k {
        return Err(AssignmentError::Invalid("one demand per membership row required".into()));
    }
    if centroids.len() != c || memberships.iter().any(|r| r.len() != c) {
        return Err(AssignmentError::Invalid("membership width, centroids and capacities disagree".into()));
    }
    if c == 0 && k > 0 {
        return Err(AssignmentError::Invalid("no clusters to assign to".into()));
    }

    let mut preferences: Vec<std::collections::VecDeque<usize>> =
        memberships.iter().map(|r| preference_order(r).into()).collect();
    let mut residual: Vec<i64> = capacities.iter().map(|&q| q as i64).collect();
    let mut cluster_of: Vec<Option<usize>> = vec![None; k];
    let mut overflowed = Vec::new();
    let mut rounds = 0;

    while cluster_of.iter().any(Option::is_none) {
        rounds += 1;
        for customer in 0..k {
            if cluster_of[customer].is_none() && preferences[customer].is_empty() {
                let target = (0..c)
                    .max_by_key(|&j| (residual[j], std::cmp::Reverse(j)))
                    .expect("at least one cluster");
                cluster_of[customer] = Some(target);
                residual[target] -= demands[customer] as i64;
                overflowed.push(customer + 1);
            }
        }
        let mut nominees: Vec<Vec<usize>> = vec![Vec::new(); c];
        for customer in 0..k {
            if cluster_of[customer].is_none() {
                nominees[preferences[customer][0]].push(customer);
            }
        }
        for (cluster, mut list) in nominees.into_iter().enumerate() {
            list.sort_by(|&a, &b| {
                memberships[b][cluster]
                    .total_cmp(&memberships[a][cluster])
                    .then(a.cmp(&b))
            });
            let mut open = true;
            for customer in list {
                if open && demands[customer] as i64 <= residual[cluster] {
                    residual[cluster] -= demands[customer] as i64;
                    cluster_of[customer] = Some(cluster);
                } else {
                    open = false;
                    preferences[customer].pop_front();
                }
            }
        }
    }

    let cluster_of: Vec<usize> = cluster_of.into_iter().map(|c| c.expect("loop ends when all assigned")).collect();
    let clusters = (0..c)
        .map(|j| {
            let members: Vec<usize> = (0..k).filter(|&i| cluster_of[i] == j).map(|i| i + 1).collect();
            Cluster {
                aggregate_demand: members.iter().map(|&m| demands[m - 1] as u64).sum(),
                members,
                centroid: centroids[j],
                capacity: capacities[j],
            }
        })
        .collect();
    Ok(ClusterAssignment {
        cluster_of,
        clusters,
        rounds,
        overflow: !overflowed.is_empty(),
        overflowed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin(c: usize) -> Vec<Point> {
        vec![Point::new(0.0, 0.0); c]
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(cluster_capacity(100, 10, 5), Ok(50));
        assert_eq!(cluster_capacity(100, 5, 5), Ok(100));
        assert_eq!(cluster_capacity(120, 15, 5), Ok(40));
        assert!(cluster_capacity(100, 7, 5).is_err());
    }

    #[test]
    fn contention_sends_weaker_customer_elsewhere() {
        let m = vec![vec![0.9, 0.1], vec![0.7, 0.3]];
        let a = assign(&m, &origin(2), &[5, 5], &[5, 5]).unwrap();
        assert_eq!(a.cluster_of, vec![0, 1]);
        assert_eq!(a.rounds, 2);
        assert!(!a.overflow);
    }

    #[test]
    fn uncontended_customers_get_their_favorite() {
        let m = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.1, 0.9]];
        let a = assign(&m, &origin(2), &[1, 2, 3], &[10, 10]).unwrap();
        assert_eq!(a.cluster_of, vec![1, 0, 1]);
        assert_eq!(a.clusters[1].members, vec![1, 3]);
        assert_eq!(a.clusters[1].aggregate_demand, 4);
    }

    #[test]
    fn stops_at_first_misfit() {
        // Cluster 0 takes the strongest nominee (demand 4), then meets demand 5
        // with residual 2 and closes, even though the last nominee would fit.
        let m = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.7, 0.3]];
        let a = assign(&m, &origin(2), &[4, 5, 1], &[6, 10]).unwrap();
        assert_eq!(a.cluster_of, vec![0, 1, 1]);
    }

    #[test]
    fn overflow_fallback() {
        let m = vec![vec![1.0], vec![1.0]];
        let a = assign(&m, &origin(1), &[3, 3], &[4]).unwrap();
        assert!(a.overflow);
        assert_eq!(a.overflowed, vec![2]);
        assert_eq!(a.clusters[0].aggregate_demand, 6);
    }
}
