//! End-to-end pipelines.
//!
//! H2S clusters the customers into one cluster per truck and solves a TSP per
//! cluster. H3S clusters more finely, solves a CVRP over the cluster centroids
//! to hand clusters to trucks, then solves a TSP over each truck's customers.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{assign, cluster_capacity, AssignmentError, ClusterAssignment};
use crate::clustering::{cluster_instance, select_cluster_count, ClusteringError, ElbowPoint, FcmConfig, MembershipMatrix};
use crate::instance::{Instance, Point};
use crate::qubo::PenaltyWeights;
use crate::routing_qubo::{
    build_qubo, rounded_cost_matrix, PenaltyBreakdown, RouteDefect, RouteSolution, RoutingError, RoutingProblem,
    DEFAULT_VARIABLE_BUDGET,
};
use crate::sampler::{Sampler, SamplerConfig, SamplerError, SimulatedAnnealer};
use crate::seeds::{stage_seed, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    H2s,
    H3s,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::H2s => "h2s",
            Strategy::H3s => "h3s",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "h2s" => Ok(Strategy::H2s),
            "h3s" => Ok(Strategy::H3s),
            other => Err(format!("unknown strategy '{other}' (expected h2s or h3s)")),
        }
    }
}

/// How sub-problem penalty weights are chosen when none are given explicitly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// Every weight `2 · max edge cost · n`.
    Uniform,
    /// Uniform, except the ordering weight is divided by `n²`.
    #[default]
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    /// Master seed; clustering and every sampling stage derive their own
    /// streams from it, so the seeds inside `fcm` and `sampler` are ignored.
    pub seed: u64,
    pub fcm: FcmConfig,
    /// `None` derives weights per sub-problem from its own costs and size.
    pub weights: Option<PenaltyWeights>,
    pub weight_scheme: WeightScheme,
    pub sampler: SamplerConfig,
    /// H3S cluster counts to try; `None` means `p, 2p, 3p, 4p`.
    pub cluster_candidates: Option<Vec<usize>>,
    pub repair_enabled: bool,
    pub depot_return_penalty: bool,
    pub variable_budget: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::H2s,
            seed: 0,
            fcm: FcmConfig::default(),
            weights: None,
            weight_scheme: WeightScheme::default(),
            sampler: SamplerConfig::default(),
            cluster_candidates: None,
            repair_enabled: false,
            depot_return_penalty: true,
            variable_budget: DEFAULT_VARIABLE_BUDGET,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("invalid pipeline input: {0}")]
    Invalid(String),
    /// A stage found no feasible solution; the partial report is attached.
    #[error("{stage}: no feasible solution (penalties {penalties:?})")]
    Infeasible {
        stage: String,
        penalties: PenaltyBreakdown,
        report: Box<PipelineReport>,
    },
}

/// Outcome of sampling one routing sub-problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemResult {
    /// Instance node id of each local node (local 0 is the depot).
    pub nodes: Vec<usize>,
    pub variables: usize,
    pub seed: u64,
    pub distinct_samples: usize,
    pub feasible_samples: usize,
    /// Routes in instance node ids.
    pub solution: RouteSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub feasible: bool,
    pub cost: i64,
    pub loads: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub instance: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub clusters: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub elbow_curve: Vec<ElbowPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbow_warning: Option<String>,
    pub memberships: MembershipMatrix,
    pub assignment: ClusterAssignment,
    /// H3S only: the centroid-level CVRP, its nodes being clusters (local
    /// node `i` is cluster `i - 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid_routing: Option<SubproblemResult>,
    pub truck_routes: Vec<SubproblemResult>,
    pub solution: RouteSolution,
    pub validation: ValidationReport,
    /// Wall-clock seconds per stage; the only non-deterministic field.
    pub timing: BTreeMap<String, f64>,
}

impl PipelineReport {
    /// JSON with `timing` removed, for reproducibility comparisons.
    pub fn deterministic_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("timing");
        }
        value
    }
}

pub fn run(instance: &Instance, config: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    match config.strategy {
        Strategy::H2s => run_h2s(instance, config),
        Strategy::H3s => run_h3s(instance, config),
    }
}

/// FCM settings with the clustering-stage seed.
pub fn fcm_config(config: &PipelineConfig) -> FcmConfig {
    FcmConfig {
        seed: stage_seed(config.seed, Stage::Clustering, 0),
        ..config.fcm.clone()
    }
}

fn sampler_for(config: &PipelineConfig, seed: u64) -> SimulatedAnnealer {
    SimulatedAnnealer::new(SamplerConfig {
        seed,
        ..config.sampler.clone()
    })
}

/// Builds a routing problem with the configured penalty weights.
pub fn make_problem(
    config: &PipelineConfig,
    points: Vec<Point>,
    demands: Vec<u32>,
    trucks: usize,
    capacity: Option<u32>,
) -> Result<RoutingProblem, RoutingError> {
    let cost = rounded_cost_matrix(&points);
    let problem = match capacity {
        Some(q) => RoutingProblem::cvrp(points, demands, cost, trucks, q)?,
        None => RoutingProblem::tsp(points, cost)?,
    };
    let problem = problem.with_depot_return_penalty(config.depot_return_penalty);
    let weights = match (config.weights, config.weight_scheme) {
        (Some(w), _) => w,
        (None, WeightScheme::Uniform) => return Ok(problem),
        (None, WeightScheme::Balanced) => PenaltyWeights::balanced_for(
            problem.max_edge_cost(),
            problem.n(),
            problem.demands.iter().copied().max().unwrap_or(0),
        ),
    };
    problem.with_weights(weights)
}

/// Samples a routing problem and picks the cheapest feasible decoded sample.
/// Auxiliary bits of each sample are reset to their best values for the
/// sampled edges before decoding. Routes stay in local indices.
pub fn solve_routing(
    problem: &RoutingProblem,
    sampler: &dyn Sampler,
    repair: bool,
    variable_budget: usize,
) -> Result<(RouteSolution, usize, usize, usize), PipelineError> {
    let qubo = build_qubo(problem, variable_budget)?;
    let samples = sampler.sample(qubo.model())?;
    let mut best_feasible: Option<RouteSolution> = None;
    let mut fallback: Option<RouteSolution> = None;
    let mut feasible_count = 0;
    for sample in &samples.samples {
        let mut bits = sample.bits.clone();
        qubo.complete_auxiliaries(&mut bits);
        let sol = qubo.decode(&bits).expect("sample length matches model");
        if sol.feasible {
            feasible_count += 1;
            if best_feasible.as_ref().is_none_or(|b| sol.cost < b.cost) {
                best_feasible = Some(sol);
            }
        } else if fallback.is_none() {
            fallback = Some(sol);
        }
    }
    let solution = match (best_feasible, fallback) {
        (Some(sol), _) => sol,
        (None, Some(sol)) if repair => qubo.greedy_repair(&sol),
        (None, Some(mut sol)) => {
            sol.infeasibility_reason = Some("no feasible sample".into());
            sol
        }
        (None, None) => return Err(PipelineError::Invalid("sampler returned no samples".into())),
    };
    Ok((solution, qubo.model().num_vars(), samples.len(), feasible_count))
}

fn to_global(solution: RouteSolution, nodes: &[usize]) -> RouteSolution {
    RouteSolution {
        routes: solution
            .routes
            .iter()
            .map(|r| r.iter().map(|&v| nodes[v]).collect())
            .collect(),
        ..solution
    }
}

/// TSP over the depot and `customers`, anchored at the depot.
fn route_truck(
    instance: &Instance,
    customers: &[usize],
    config: &PipelineConfig,
    seed: u64,
) -> Result<SubproblemResult, PipelineError> {
    let mut nodes = vec![0];
    nodes.extend_from_slice(customers);
    if customers.is_empty() {
        return Ok(SubproblemResult {
            nodes,
            variables: 0,
            seed,
            distinct_samples: 0,
            feasible_samples: 0,
            solution: RouteSolution {
                routes: vec![Vec::new()],
                cost: 0,
                feasible: false,
                penalties: PenaltyBreakdown::default(),
                repaired: false,
                defects: Vec::new(),
                infeasibility_reason: Some("truck has no customers".into()),
            },
        });
    }
    let points: Vec<Point> = nodes.iter().map(|&v| instance.nodes[v].point()).collect();
    let problem = make_problem(config, points, vec![0; nodes.len()], 1, None)?;
    let sampler = sampler_for(config, seed);
    let (solution, variables, distinct, feasible) =
        solve_routing(&problem, &sampler, config.repair_enabled, config.variable_budget)?;
    Ok(SubproblemResult {
        solution: to_global(solution, &nodes),
        nodes,
        variables,
        seed,
        distinct_samples: distinct,
        feasible_samples: feasible,
    })
}

/// Routes each group of customers with its own TSP. Groups are ordered by
/// their smallest customer id first, so the same groups always get the same
/// seeds and route positions regardless of how they were produced.
fn route_groups(
    instance: &Instance,
    mut groups: Vec<Vec<usize>>,
    config: &PipelineConfig,
) -> Result<Vec<SubproblemResult>, PipelineError> {
    for g in groups.iter_mut() {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g.first().copied().unwrap_or(usize::MAX));
    groups
        .par_iter()
        .enumerate()
        .map(|(i, g)| route_truck(instance, g, config, stage_seed(config.seed, Stage::ClusterRouting, i as u64)))
        .collect()
}

/// Capacity penalty of a single route under a one-truck CVRP model.
fn capacity_penalty(instance: &Instance, route: &[usize], config: &PipelineConfig) -> Result<f64, PipelineError> {
    if route.is_empty() {
        return Ok(0.0);
    }
    let mut nodes = vec![0];
    nodes.extend_from_slice(route);
    let points: Vec<Point> = nodes.iter().map(|&v| instance.nodes[v].point()).collect();
    let demands: Vec<u32> = nodes.iter().map(|&v| instance.nodes[v].demand).collect();
    let problem = make_problem(config, points, demands, 1, Some(instance.truck_capacity))?;
    let qubo = build_qubo(&problem, usize::MAX)?;
    let local: Vec<usize> = (1..nodes.len()).collect();
    Ok(qubo.evaluate_routes(&[local]).penalties.capacity)
}

fn assemble(instance: &Instance, trucks: &[SubproblemResult], config: &PipelineConfig) -> Result<RouteSolution, PipelineError> {
    let mut routes = Vec::new();
    let mut cost = 0;
    let mut penalties = PenaltyBreakdown::default();
    let mut defects: Vec<RouteDefect> = Vec::new();
    let mut repaired = false;
    let mut reasons = Vec::new();
    for (t, sub) in trucks.iter().enumerate() {
        let sol = &sub.solution;
        let route = sol.routes.first().cloned().unwrap_or_default();
        cost += sol.cost;
        let p = sol.penalties;
        penalties.visit += p.visit;
        penalties.depot_departure += p.depot_departure;
        penalties.depot_return += p.depot_return;
        penalties.flow += p.flow;
        penalties.subtour += p.subtour;
        penalties.capacity += capacity_penalty(instance, &route, config)?;
        defects.extend(sol.defects.iter().cloned().map(|d| retruck(d, t)));
        repaired |= sol.repaired;
        if let Some(r) = &sol.infeasibility_reason {
            reasons.push(format!("truck {t}: {r}"));
        }
        routes.push(route);
    }
    let feasible = trucks.iter().all(|t| t.solution.feasible) && penalties.is_zero() && defects.is_empty();
    if feasible && routes.len() != instance.truck_count {
        reasons.push(format!("{} routes for {} trucks", routes.len(), instance.truck_count));
    }
    let feasible = feasible && routes.len() == instance.truck_count;
    if !feasible && reasons.is_empty() && !penalties.is_zero() {
        reasons.push("constraint penalties remain".into());
    }
    Ok(RouteSolution {
        routes,
        cost,
        feasible,
        penalties,
        repaired,
        defects,
        infeasibility_reason: (!reasons.is_empty()).then(|| reasons.join("; ")),
    })
}

fn retruck(defect: RouteDefect, truck: usize) -> RouteDefect {
    match defect {
        RouteDefect::Branching { node, .. } => RouteDefect::Branching { truck, node },
        RouteDefect::DeadEnd { node, .. } => RouteDefect::DeadEnd { truck, node },
        RouteDefect::Revisit { node, .. } => RouteDefect::Revisit { truck, node },
        RouteDefect::Subtour { nodes, .. } => RouteDefect::Subtour { truck, nodes },
        RouteDefect::StrayEdges { edges, .. } => RouteDefect::StrayEdges { truck, edges },
    }
}

/// Hard, capacity-aware assignment of the instance's customers.
pub fn clustered(
    instance: &Instance,
    fcm: &MembershipMatrix,
    capacity: u32,
) -> Result<ClusterAssignment, PipelineError> {
    let k = instance.customers().len();
    let rows = fcm.customer_rows(k);
    let demands: Vec<u32> = instance.customers().iter().map(|c| c.demand).collect();
    let caps = vec![capacity; fcm.clusters()];
    Ok(assign(&rows, &fcm.centroids, &demands, &caps)?)
}

fn conclude(
    instance: &Instance,
    mut report: PipelineReport,
) -> Result<PipelineReport, PipelineError> {
    report.validation = validate(&report.solution, instance);
    if report.solution.feasible {
        return Ok(report);
    }
    let stage = report
        .truck_routes
        .iter()
        .position(|t| !t.solution.feasible)
        .map(|t| format!("truck route {t}"))
        .unwrap_or_else(|| "route assembly".into());
    Err(PipelineError::Infeasible {
        stage,
        penalties: report.solution.penalties,
        report: Box::new(report),
    })
}

pub fn run_h2s(instance: &Instance, config: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    let mut timing = BTreeMap::new();
    let p = instance.truck_count;

    let start = Instant::now();
    let fcm = cluster_instance(instance, p, &fcm_config(config))?;
    timing.insert("clustering".to_string(), start.elapsed().as_secs_f64());

    let start = Instant::now();
    let assignment = clustered(instance, &fcm, cluster_capacity(instance.truck_capacity, p, p)?)?;
    timing.insert("assignment".to_string(), start.elapsed().as_secs_f64());

    let start = Instant::now();
    let groups: Vec<Vec<usize>> = assignment.clusters.iter().map(|c| c.members.clone()).collect();
    let truck_routes = route_groups(instance, groups, config)?;
    timing.insert("routing".to_string(), start.elapsed().as_secs_f64());

    let solution = assemble(instance, &truck_routes, config)?;
    let report = PipelineReport {
        instance: instance.name.clone(),
        strategy: Strategy::H2s,
        seed: config.seed,
        clusters: p,
        elbow_curve: Vec::new(),
        elbow_warning: None,
        memberships: fcm,
        assignment,
        centroid_routing: None,
        truck_routes,
        solution,
        validation: ValidationReport {
            feasible: false,
            cost: 0,
            loads: Vec::new(),
            reasons: Vec::new(),
        },
        timing,
    };
    conclude(instance, report)
}

/// Default H3S candidate cluster counts, capped at the number of customers.
pub fn default_candidates(instance: &Instance) -> Vec<usize> {
    let p = instance.truck_count;
    let k = instance.customers().len();
    let c: Vec<usize> = (1..=4).map(|f| f * p).filter(|&c| c <= k).collect();
    if c.is_empty() {
        vec![p]
    } else {
        c
    }
}

pub fn run_h3s(instance: &Instance, config: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    let mut timing = BTreeMap::new();
    let p = instance.truck_count;
    let candidates = config
        .cluster_candidates
        .clone()
        .unwrap_or_else(|| default_candidates(instance));
    if let Some(&bad) = candidates.iter().find(|&&c| c == 0 || c % p != 0) {
        return Err(PipelineError::Invalid(format!(
            "cluster count {bad} is not a positive multiple of the {p} trucks"
        )));
    }

    let start = Instant::now();
    let elbow = select_cluster_count(instance, &candidates, &fcm_config(config))?;
    timing.insert("clustering".to_string(), start.elapsed().as_secs_f64());
    let c = elbow.chosen;

    let start = Instant::now();
    let assignment = clustered(
        instance,
        &elbow.memberships,
        cluster_capacity(instance.truck_capacity, c, p)?,
    )?;
    timing.insert("assignment".to_string(), start.elapsed().as_secs_f64());

    // Centroid CVRP: local node 0 is the depot, node i is cluster i - 1.
    let start = Instant::now();
    let mut points = vec![instance.depot().point()];
    points.extend(assignment.clusters.iter().map(|cl| cl.centroid));
    let mut demands = vec![0u32];
    for cl in &assignment.clusters {
        demands.push(u32::try_from(cl.aggregate_demand).map_err(|_| PipelineError::Invalid("cluster demand overflow".into()))?);
    }
    let problem = make_problem(config, points, demands, p, Some(instance.truck_capacity))?;
    let seed = stage_seed(config.seed, Stage::CentroidRouting, 0);
    let sampler = sampler_for(config, seed);
    let (centroid_solution, variables, distinct, feasible) =
        solve_routing(&problem, &sampler, config.repair_enabled, config.variable_budget)?;
    let centroid_routing = SubproblemResult {
        nodes: (0..=c).collect(),
        variables,
        seed,
        distinct_samples: distinct,
        feasible_samples: feasible,
        solution: centroid_solution.clone(),
    };
    timing.insert("centroid_routing".to_string(), start.elapsed().as_secs_f64());

    let mut report = PipelineReport {
        instance: instance.name.clone(),
        strategy: Strategy::H3s,
        seed: config.seed,
        clusters: c,
        elbow_curve: elbow.curve,
        elbow_warning: elbow.warning,
        memberships: elbow.memberships,
        assignment,
        centroid_routing: Some(centroid_routing),
        truck_routes: Vec::new(),
        solution: RouteSolution {
            routes: Vec::new(),
            cost: 0,
            feasible: false,
            penalties: centroid_solution.penalties,
            repaired: centroid_solution.repaired,
            defects: Vec::new(),
            infeasibility_reason: Some("centroid routing infeasible".into()),
        },
        validation: ValidationReport {
            feasible: false,
            cost: 0,
            loads: Vec::new(),
            reasons: Vec::new(),
        },
        timing,
    };
    if !centroid_solution.feasible {
        report.validation = validate(&report.solution, instance);
        return Err(PipelineError::Infeasible {
            stage: "centroid routing".into(),
            penalties: centroid_solution.penalties,
            report: Box::new(report),
        });
    }

    let start = Instant::now();
    let groups: Vec<Vec<usize>> = centroid_solution
        .routes
        .iter()
        .map(|r| {
            r.iter()
                .flat_map(|&local| report.assignment.clusters[local - 1].members.iter().copied())
                .collect()
        })
        .collect();
    report.truck_routes = route_groups(instance, groups, config)?;
    report.timing.insert("routing".to_string(), start.elapsed().as_secs_f64());
    report.solution = assemble(instance, &report.truck_routes, config)?;
    conclude(instance, report)
}

/// Independent feasibility check straight from the instance data: every
/// customer exactly once, one non-empty route per truck, loads within
/// capacity, and no structural defects reported by the decoder. The cost is
/// recomputed from coordinates.
pub fn validate(solution: &RouteSolution, instance: &Instance) -> ValidationReport {
    let n = instance.nodes.len();
    let mut reasons = Vec::new();
    let mut visits = vec![0usize; n];
    let mut loads = Vec::with_capacity(solution.routes.len());
    let mut cost = 0i64;
    let leg = |a: usize, b: usize| {
        let (pa, pb) = (&instance.nodes[a], &instance.nodes[b]);
        let d = ((pa.x - pb.x).powi(2) + (pa.y - pb.y).powi(2)).sqrt();
        (d + 0.5).floor() as i64
    };
    for (t, route) in solution.routes.iter().enumerate() {
        if route.is_empty() {
            reasons.push(format!("idle truck: {t}"));
            loads.push(0);
            continue;
        }
        if let Some(&bad) = route.iter().find(|&&v| v == 0 || v >= n) {
            reasons.push(format!("truck {t}: invalid stop {bad}"));
            loads.push(0);
            continue;
        }
        let mut load = 0u64;
        let mut prev = 0;
        for &v in route {
            visits[v] += 1;
            load += instance.nodes[v].demand as u64;
            cost += leg(prev, v);
            prev = v;
        }
        cost += leg(prev, 0);
        if load > instance.truck_capacity as u64 {
            reasons.push(format!("overloaded truck: {t} ({load} > {})", instance.truck_capacity));
        }
        loads.push(load);
    }
    if solution.routes.len() != instance.truck_count {
        reasons.push(format!(
            "route count {} differs from truck count {}",
            solution.routes.len(),
            instance.truck_count
        ));
    }
    let unvisited: Vec<String> = (1..n).filter(|&v| visits[v] == 0).map(|v| v.to_string()).collect();
    if !unvisited.is_empty() {
        reasons.push(format!("unvisited: {{{}}}", unvisited.join(", ")));
    }
    let repeated: Vec<String> = (1..n).filter(|&v| visits[v] > 1).map(|v| v.to_string()).collect();
    if !repeated.is_empty() {
        reasons.push(format!("multiply-visited: {{{}}}", repeated.join(", ")));
    }
    if !solution.defects.is_empty() {
        reasons.push(format!("malformed routes: {} defect(s)", solution.defects.len()));
    }
    ValidationReport {
        feasible: reasons.is_empty(),
        cost,
        loads,
        reasons,
    }
}

