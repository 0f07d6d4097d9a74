//! Cluster-first hybrid solver for the capacitated vehicle routing problem.
//!
//! Customers are grouped with fuzzy c-means, routing sub-problems are written
//! as QUBO models, and a classical annealer samples them. Two pipelines are
//! provided: cluster then route each cluster ([`pipeline::run_h2s`]), or
//! cluster, route the cluster centroids, then route each truck
//! ([`pipeline::run_h3s`]).

pub mod assignment;
pub mod bench;
pub mod cli;
pub mod clustering;
pub mod instance;
pub mod pipeline;
pub mod plot;
pub mod qubo;
pub mod routing_qubo;
pub mod sampler;
pub mod seeds;
