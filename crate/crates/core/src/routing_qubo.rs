//! CVRP and TSP as QUBO models over edge variables `x[r][i][j]`
//! ("truck `r` drives `i → j`"), plus decoding of sampled bit vectors back
//! into routes.
//!
//! Penalty groups:
//! - visit: every customer is entered exactly once over all trucks;
//! - depot: every truck leaves the depot once (and, optionally, returns once);
//! - flow: per truck and node, edges in equal edges out;
//! - capacity: per-truck load `≤ Q`, through binary slack;
//! - subtour: per-truck Miller–Tucker–Zemlin ordering. Each customer carries a
//!   binary-encoded position `u ∈ [1, n-1]` and each ordered customer pair adds
//!   `u_i - u_j + 1 - B + B·x[r][i][j] ≤ 0` through binary slack.
//!
//! Feasibility of a decoded solution is always judged by re-evaluating each
//! group on the bits, never by trusting the sampler's energy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{rounded_distance, Point};
use crate::qubo::{
    bounded_binary_coefficients, decode_bounded, encode_bounded, PenaltyWeights, QuboError, QuboModel,
    VarLabel,
};

/// Penalty energies at or below this magnitude count as satisfied.
pub const PENALTY_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_VARIABLE_BUDGET: usize = 60_000;

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("routing model needs {vars} variables, over the budget of {budget}; split the problem into smaller clusters first")]
    TooLarge { vars: usize, budget: usize },
    #[error("invalid routing problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Qubo(#[from] QuboError),
}

/// A routing problem over local node indices, node 0 being the depot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingProblem {
    pub points: Vec<Point>,
    pub demands: Vec<u32>,
    pub cost: Vec<Vec<i64>>,
    pub truck_count: usize,
    /// `None` drops the load constraint (single-truck TSP).
    pub capacity: Option<u32>,
    pub weights: PenaltyWeights,
    pub depot_return_penalty: bool,
    /// Largest order position `R`; positions range over `1..=R`. The tight
    /// choice is `n - 1`; larger values leave gaps between consecutive stops.
    pub max_order: u64,
}

pub fn rounded_cost_matrix(points: &[Point]) -> Vec<Vec<i64>> {
    points
        .iter()
        .map(|&a| points.iter().map(|&b| rounded_distance(a, b)).collect())
        .collect()
}

impl RoutingProblem {
    pub fn cvrp(
        points: Vec<Point>,
        demands: Vec<u32>,
        cost: Vec<Vec<i64>>,
        truck_count: usize,
        capacity: u32,
    ) -> Result<Self, RoutingError> {
        let n_points = points.len();
        let weights = PenaltyWeights::default_for(max_entry(&cost), n_points);
        let problem = Self {
            points,
            demands,
            cost,
            truck_count,
            capacity: Some(capacity),
            weights,
            depot_return_penalty: true,
            max_order: n_minus_one(n_points),
        };
        problem.validate()?;
        Ok(problem)
    }

    /// A single-truck tour anchored at `points[0]`, without a load constraint.
    pub fn tsp(points: Vec<Point>, cost: Vec<Vec<i64>>) -> Result<Self, RoutingError> {
        let n = points.len();
        let n_points = n;
        let weights = PenaltyWeights::default_for(max_entry(&cost), n);
        let problem = Self {
            points,
            demands: vec![0; n],
            cost,
            truck_count: 1,
            capacity: None,
            weights,
            depot_return_penalty: true,
            max_order: n_minus_one(n_points),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_weights(mut self, weights: PenaltyWeights) -> Result<Self, RoutingError> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_order(mut self, max_order: u64) -> Result<Self, RoutingError> {
        self.max_order = max_order;
        self.validate()?;
        Ok(self)
    }

    pub fn with_depot_return_penalty(mut self, enabled: bool) -> Self {
        self.depot_return_penalty = enabled;
        self
    }

    fn validate(&self) -> Result<(), RoutingError> {
        let n = self.points.len();
        if n < 2 {
            return Err(RoutingError::Invalid("need a depot and at least one customer".into()));
        }
        if self.demands.len() != n || self.cost.len() != n || self.cost.iter().any(|r| r.len() != n) {
            return Err(RoutingError::Invalid("points, demands and costs disagree in size".into()));
        }
        if self.truck_count == 0 {
            return Err(RoutingError::Invalid("at least one truck required".into()));
        }
        for i in 0..n {
            if self.cost[i][i] != 0 {
                return Err(RoutingError::Invalid("cost diagonal must be zero".into()));
            }
            for j in 0..n {
                if self.cost[i][j] != self.cost[j][i] || self.cost[i][j] < 0 {
                    return Err(RoutingError::Invalid("costs must be symmetric and non-negative".into()));
                }
            }
        }
        if !self.weights.all_positive() {
            return Err(RoutingError::Invalid("penalty weights must be positive".into()));
        }
        if self.max_order < n_minus_one(n) {
            return Err(RoutingError::Invalid(format!(
                "order positions must reach at least n - 1 = {}",
                n - 1
            )));
        }
        if self.weights.big_b.fract() != 0.0 || self.weights.big_b < self.max_order as f64 {
            return Err(RoutingError::Invalid(format!(
                "B must be an integer of at least the largest order position {}",
                self.max_order
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    fn big_b(&self) -> i64 {
        self.weights.big_b as i64
    }

    /// Slack range of one ordering inequality: `R + B - 2`.
    fn pair_slack_bound(&self) -> u64 {
        (self.max_order as i64 + self.big_b() - 2).max(0) as u64
    }

    pub fn max_edge_cost(&self) -> i64 {
        max_entry(&self.cost)
    }

    pub fn route_cost(&self, route: &[usize]) -> i64 {
        if route.is_empty() {
            return 0;
        }
        let mut prev = 0;
        let mut total = 0;
        for &v in route {
            total += self.cost[prev][v];
            prev = v;
        }
        total + self.cost[prev][0]
    }

    pub fn route_load(&self, route: &[usize]) -> u64 {
        route.iter().map(|&v| self.demands[v] as u64).sum()
    }

    /// Number of QUBO variables [`build_qubo`] would create.
    pub fn variable_count(&self) -> usize {
        let n = self.n();
        let p = self.truck_count;
        let order_bits = bounded_binary_coefficients(self.max_order.saturating_sub(1)).len();
        let capacity_bits = self
            .capacity
            .map_or(0, |q| bounded_binary_coefficients(q as u64).len());
        let pair_bits = bounded_binary_coefficients(self.pair_slack_bound()).len();
        p * (n * (n - 1) + (n - 1) * order_bits + capacity_bits + (n - 1) * (n.saturating_sub(2)) * pair_bits)
    }
}

fn n_minus_one(n: usize) -> u64 {
    n.saturating_sub(1).max(1) as u64
}

fn max_entry(cost: &[Vec<i64>]) -> i64 {
    cost.iter().flatten().copied().max().unwrap_or(0)
}

/// Maps structured variables to flat indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableIndex {
    pub n: usize,
    pub trucks: usize,
    pub order_coefficients: Vec<u64>,
    order_base: usize,
    /// Per truck: slack variables and their coefficients.
    pub capacity_slack: Vec<(Vec<usize>, Vec<u64>)>,
    /// Per truck, per ordered customer pair `(i, j)` at `(i - 1) * (n - 1) + (j - 1)`.
    subtour_slack: Vec<Vec<(Vec<usize>, Vec<u64>)>>,
    pub num_vars: usize,
}

impl VariableIndex {
    fn new(n: usize, trucks: usize, max_order: u64) -> Self {
        let order_coefficients = bounded_binary_coefficients(max_order.saturating_sub(1));
        let order_base = trucks * n * (n - 1);
        let num_vars = order_base + trucks * (n - 1) * order_coefficients.len();
        Self {
            n,
            trucks,
            order_coefficients,
            order_base,
            capacity_slack: vec![(Vec::new(), Vec::new()); trucks],
            subtour_slack: vec![vec![(Vec::new(), Vec::new()); (n - 1) * (n - 1)]; trucks],
            num_vars,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.order_base
    }

    pub fn edge(&self, truck: usize, from: usize, to: usize) -> usize {
        debug_assert!(from != to && from < self.n && to < self.n && truck < self.trucks);
        let col = if to < from { to } else { to - 1 };
        (truck * self.n + from) * (self.n - 1) + col
    }

    /// Inverse of [`VariableIndex::edge`] for edge variables.
    pub fn edge_of(&self, var: usize) -> Option<(usize, usize, usize)> {
        if var >= self.order_base {
            return None;
        }
        let col = var % (self.n - 1);
        let rest = var / (self.n - 1);
        let from = rest % self.n;
        let truck = rest / self.n;
        let to = if col < from { col } else { col + 1 };
        Some((truck, from, to))
    }

    pub fn order(&self, truck: usize, node: usize, bit: usize) -> usize {
        debug_assert!(node >= 1);
        self.order_base + (truck * (self.n - 1) + node - 1) * self.order_coefficients.len() + bit
    }

    fn order_vars(&self, truck: usize, node: usize) -> Vec<usize> {
        (0..self.order_coefficients.len())
            .map(|b| self.order(truck, node, b))
            .collect()
    }

    pub fn subtour_slack(&self, truck: usize, from: usize, to: usize) -> &(Vec<usize>, Vec<u64>) {
        &self.subtour_slack[truck][(from - 1) * (self.n - 1) + (to - 1)]
    }

    /// Position encoded for `node` on `truck`, in `1..=max_order`.
    pub fn position(&self, bits: &[u8], truck: usize, node: usize) -> u64 {
        let vars = self.order_vars(truck, node);
        let local: Vec<u8> = vars.iter().map(|&v| bits[v]).collect();
        1 + decode_bounded(&local, &self.order_coefficients)
    }
}

/// Energy of each constraint group on a bit vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub visit: f64,
    pub depot_departure: f64,
    pub depot_return: f64,
    pub flow: f64,
    pub capacity: f64,
    pub subtour: f64,
}

impl PenaltyBreakdown {
    pub fn total(&self) -> f64 {
        self.visit + self.depot_departure + self.depot_return + self.flow + self.capacity + self.subtour
    }

    pub fn is_zero(&self) -> bool {
        [
            self.visit,
            self.depot_departure,
            self.depot_return,
            self.flow,
            self.capacity,
            self.subtour,
        ]
        .iter()
        .all(|e| e.abs() <= PENALTY_TOLERANCE)
    }
}

/// Per-group sub-models over the shared variable space; `full` is their sum.
#[derive(Debug, Clone)]
pub struct RoutingQubo {
    pub problem: RoutingProblem,
    pub index: VariableIndex,
    pub full: QuboModel,
    objective: QuboModel,
    visit: QuboModel,
    depot_departure: QuboModel,
    depot_return: QuboModel,
    flow: QuboModel,
    capacity: QuboModel,
    subtour: QuboModel,
}

fn blank_model(labels: &[VarLabel]) -> QuboModel {
    let mut m = QuboModel::new();
    for l in labels {
        m.add_variable(l.clone());
    }
    m
}

/// Builds the routing QUBO. With `capacity = None` the load group is empty.
pub fn build_qubo(problem: &RoutingProblem, variable_budget: usize) -> Result<RoutingQubo, RoutingError> {
    problem.validate()?;
    let vars = problem.variable_count();
    if vars > variable_budget {
        return Err(RoutingError::TooLarge {
            vars,
            budget: variable_budget,
        });
    }
    let n = problem.n();
    let p = problem.truck_count;
    let w = problem.weights;
    let mut index = VariableIndex::new(n, p, problem.max_order);

    // Slack variables are appended after edges and order bits; collect their
    // labels by building the slack-bearing groups on a scratch model first.
    let mut base = QuboModel::new();
    for truck in 0..p {
        for from in 0..n {
            for to in (0..n).filter(|&t| t != from) {
                let v = base.add_variable(VarLabel::Edge { truck, from, to });
                debug_assert_eq!(v, index.edge(truck, from, to));
            }
        }
    }
    for truck in 0..p {
        for node in 1..n {
            for bit in 0..index.order_coefficients.len() {
                let v = base.add_variable(VarLabel::Order { truck, node, bit });
                debug_assert_eq!(v, index.order(truck, node, bit));
            }
        }
    }

    let mut capacity = base.clone();
    if let Some(q) = problem.capacity {
        for truck in 0..p {
            let terms: Vec<(usize, i64)> = (1..n)
                .filter(|&j| problem.demands[j] > 0)
                .flat_map(|j| {
                    let d = problem.demands[j] as i64;
                    (0..n).filter(move |&i| i != j).map(move |i| (i, j, d))
                })
                .map(|(i, j, d)| (index.edge(truck, i, j), d))
                .collect();
            let slack = capacity.add_inequality_penalty_with_slack(&terms, q as u64, w.lambda_capacity, |bit| {
                VarLabel::CapacitySlack { truck, bit }
            })?;
            index.capacity_slack[truck] = (slack, bounded_binary_coefficients(q as u64));
        }
    }

    let mut subtour = blank_model(capacity.labels());
    let big_b = problem.big_b();
    for truck in 0..p {
        for from in 1..n {
            for to in (1..n).filter(|&t| t != from) {
                let mut terms: Vec<(usize, i64)> = Vec::new();
                for (bit, &c) in index.order_coefficients.iter().enumerate() {
                    terms.push((index.order(truck, from, bit), c as i64));
                    terms.push((index.order(truck, to, bit), -(c as i64)));
                }
                terms.push((index.edge(truck, from, to), big_b));
                let slack = subtour.add_upper_bound_penalty(&terms, 1 - big_b, w.lambda_subtour, |bit| {
                    VarLabel::SubtourSlack { truck, from, to, bit }
                })?;
                let bound = problem.pair_slack_bound();
                index.subtour_slack[truck][(from - 1) * (n - 1) + (to - 1)] =
                    (slack, bounded_binary_coefficients(bound));
            }
        }
    }
    index.num_vars = subtour.num_vars();
    let labels = subtour.labels().to_vec();
    let widen = |m: &QuboModel| {
        let mut out = blank_model(&labels);
        out.merge(m);
        out
    };
    let capacity = widen(&capacity);

    let mut objective = blank_model(&labels);
    for truck in 0..p {
        for from in 0..n {
            for to in (0..n).filter(|&t| t != from) {
                objective.add_linear(index.edge(truck, from, to), problem.cost[from][to] as f64);
            }
        }
    }

    let mut visit = blank_model(&labels);
    for to in 1..n {
        let terms: Vec<(usize, f64)> = (0..p)
            .flat_map(|truck| (0..n).filter(move |&f| f != to).map(move |from| (truck, from)))
            .map(|(truck, from)| (index.edge(truck, from, to), 1.0))
            .collect();
        visit.add_squared_equality_penalty(&terms, -1.0, w.lambda_visit)?;
    }

    let mut depot_departure = blank_model(&labels);
    let mut depot_return = blank_model(&labels);
    for truck in 0..p {
        let out: Vec<(usize, f64)> = (1..n).map(|j| (index.edge(truck, 0, j), 1.0)).collect();
        depot_departure.add_squared_equality_penalty(&out, -1.0, w.lambda_depot)?;
        if problem.depot_return_penalty {
            let back: Vec<(usize, f64)> = (1..n).map(|j| (index.edge(truck, j, 0), 1.0)).collect();
            depot_return.add_squared_equality_penalty(&back, -1.0, w.lambda_depot)?;
        }
    }

    let mut flow = blank_model(&labels);
    for truck in 0..p {
        for node in 0..n {
            let mut terms: Vec<(usize, f64)> = Vec::new();
            for other in (0..n).filter(|&o| o != node) {
                terms.push((index.edge(truck, other, node), 1.0));
                terms.push((index.edge(truck, node, other), -1.0));
            }
            flow.add_squared_equality_penalty(&terms, 0.0, w.lambda_flow)?;
        }
    }

    let mut full = blank_model(&labels);
    for part in [&objective, &visit, &depot_departure, &depot_return, &flow, &capacity, &subtour] {
        full.merge(part);
    }
    debug_assert_eq!(full.num_vars(), vars);

    Ok(RoutingQubo {
        problem: problem.clone(),
        index,
        full,
        objective,
        visit,
        depot_departure,
        depot_return,
        flow,
        capacity,
        subtour,
    })
}

pub fn build_cvrp_qubo(problem: &RoutingProblem) -> Result<RoutingQubo, RoutingError> {
    build_qubo(problem, DEFAULT_VARIABLE_BUDGET)
}

/// TSP over `points` anchored at `points[0]`: one truck, no load constraint.
pub fn build_tsp_qubo(points: &[Point], cost: &[Vec<i64>]) -> Result<RoutingQubo, RoutingError> {
    let problem = RoutingProblem::tsp(points.to_vec(), cost.to_vec())?;
    build_qubo(&problem, DEFAULT_VARIABLE_BUDGET)
}

/// Structural problem found while following successor edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RouteDefect {
    /// `node` has more than one outgoing edge on `truck`.
    Branching { truck: usize, node: usize },
    /// The walk from the depot stops at `node`, which has no outgoing edge.
    DeadEnd { truck: usize, node: usize },
    /// The walk from the depot runs into `node` again before returning.
    Revisit { truck: usize, node: usize },
    /// A cycle of customers never connected to the depot.
    Subtour { truck: usize, nodes: Vec<usize> },
    /// Edges set on `truck` that the depot walk never uses and that form no cycle.
    StrayEdges { truck: usize, edges: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSolution {
    /// Customer sequence per truck; the depot is implicit at both ends.
    pub routes: Vec<Vec<usize>>,
    pub cost: i64,
    pub feasible: bool,
    pub penalties: PenaltyBreakdown,
    pub repaired: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub defects: Vec<RouteDefect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infeasibility_reason: Option<String>,
}

struct Walk {
    route: Vec<usize>,
    used: BTreeSet<(usize, usize)>,
    defects: Vec<RouteDefect>,
}

fn successors(index: &VariableIndex, bits: &[u8], truck: usize) -> Vec<Vec<usize>> {
    let n = index.n;
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && bits[index.edge(truck, i, j)] != 0)
                .collect()
        })
        .collect()
}

fn walk_truck(succ: &[Vec<usize>], truck: usize) -> Walk {
    let mut route = Vec::new();
    let mut used = BTreeSet::new();
    let mut defects = Vec::new();
    let mut on_route = vec![false; succ.len()];
    for (node, s) in succ.iter().enumerate() {
        if s.len() > 1 {
            defects.push(RouteDefect::Branching { truck, node });
        }
    }
    if let Some(&first) = succ[0].first() {
        used.insert((0, first));
        let mut current = first;
        loop {
            if current == 0 {
                break;
            }
            if on_route[current] {
                defects.push(RouteDefect::Revisit { truck, node: current });
                break;
            }
            on_route[current] = true;
            route.push(current);
            match succ[current].first() {
                Some(&next) => {
                    used.insert((current, next));
                    current = next;
                }
                None => {
                    defects.push(RouteDefect::DeadEnd { truck, node: current });
                    break;
                }
            }
        }
    }

    // Edges the walk never used: report customer-only cycles separately.
    let mut stray: BTreeSet<(usize, usize)> = succ
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.iter().map(move |&j| (i, j)))
        .filter(|e| !used.contains(e))
        .collect();
    for start in 1..succ.len() {
        let mut cycle = vec![start];
        let mut cur = start;
        let closed = loop {
            let Some(&(_, next)) = stray.range((cur, 0)..(cur + 1, 0)).next() else {
                break false;
            };
            if next == start {
                break true;
            }
            if next == 0 || cycle.contains(&next) {
                break false;
            }
            cycle.push(next);
            cur = next;
        };
        if closed {
            for w in 0..cycle.len() {
                stray.remove(&(cycle[w], cycle[(w + 1) % cycle.len()]));
            }
            cycle.sort_unstable();
            defects.push(RouteDefect::Subtour { truck, nodes: cycle });
        }
    }
    if !stray.is_empty() {
        defects.push(RouteDefect::StrayEdges {
            truck,
            edges: stray.into_iter().collect(),
        });
    }
    Walk { route, used, defects }
}

impl RoutingQubo {
    pub fn model(&self) -> &QuboModel {
        &self.full
    }

    pub fn energy(&self, bits: &[u8]) -> Result<f64, QuboError> {
        self.full.energy(bits)
    }

    pub fn penalties(&self, bits: &[u8]) -> Result<PenaltyBreakdown, QuboError> {
        Ok(PenaltyBreakdown {
            visit: self.visit.energy(bits)?,
            depot_departure: self.depot_departure.energy(bits)?,
            depot_return: self.depot_return.energy(bits)?,
            flow: self.flow.energy(bits)?,
            capacity: self.capacity.energy(bits)?,
            subtour: self.subtour.energy(bits)?,
        })
    }

    /// Travel cost term of the energy.
    pub fn objective(&self, bits: &[u8]) -> Result<f64, QuboError> {
        self.objective.energy(bits)
    }

    pub fn decode(&self, bits: &[u8]) -> Result<RouteSolution, QuboError> {
        if bits.len() != self.index.num_vars {
            return Err(QuboError::LengthMismatch {
                expected: self.index.num_vars,
                got: bits.len(),
            });
        }
        let penalties = self.penalties(bits)?;
        let mut routes = Vec::with_capacity(self.index.trucks);
        let mut defects = Vec::new();
        let mut cost = 0;
        for truck in 0..self.index.trucks {
            let succ = successors(&self.index, bits, truck);
            let walk = walk_truck(&succ, truck);
            cost += walk
                .used
                .iter()
                .map(|&(i, j)| self.problem.cost[i][j])
                .sum::<i64>();
            routes.push(walk.route);
            defects.extend(walk.defects);
        }
        let feasible = penalties.is_zero() && defects.is_empty();
        Ok(RouteSolution {
            routes,
            cost,
            feasible,
            penalties,
            repaired: false,
            defects,
            infeasibility_reason: None,
        })
    }

    /// Sets every order and slack bit to its penalty-minimizing value for the
    /// edge bits already present. Order positions follow each truck's depot
    /// walk; customers off the walk are numbered after it.
    pub fn complete_auxiliaries(&self, bits: &mut [u8]) {
        let idx = &self.index;
        let n = idx.n;
        let big_b = self.problem.big_b();
        for truck in 0..idx.trucks {
            let succ = successors(idx, bits, truck);
            let walk = walk_truck(&succ, truck);
            let mut position = vec![0u64; n];
            let mut next = 1u64;
            for &v in &walk.route {
                position[v] = next;
                next += 1;
            }
            for start in 1..n {
                let mut cur = start;
                while position[cur] == 0 {
                    position[cur] = next.min(self.problem.max_order);
                    next += 1;
                    match succ[cur].first() {
                        Some(&s) if s != 0 => cur = s,
                        _ => break,
                    }
                }
            }
            for node in 1..n {
                let vars = idx.order_vars(truck, node);
                let enc = encode_bounded(position[node] - 1, &idx.order_coefficients);
                for (v, b) in vars.into_iter().zip(enc) {
                    bits[v] = b;
                }
            }
            if let Some(q) = self.problem.capacity {
                let load: i64 = (1..n)
                    .map(|j| {
                        let entered = (0..n).filter(|&i| i != j && bits[idx.edge(truck, i, j)] != 0).count();
                        self.problem.demands[j] as i64 * entered as i64
                    })
                    .sum();
                let (vars, coeffs) = &idx.capacity_slack[truck];
                let slack = (q as i64 - load).max(0) as u64;
                for (v, b) in vars.iter().zip(encode_bounded(slack, coeffs)) {
                    bits[*v] = b;
                }
            }
            for from in 1..n {
                for to in (1..n).filter(|&t| t != from) {
                    let x = bits[idx.edge(truck, from, to)] as i64;
                    let lhs = position[from] as i64 - position[to] as i64 + 1 - big_b + big_b * x;
                    let (vars, coeffs) = idx.subtour_slack(truck, from, to);
                    let slack = (-lhs).max(0) as u64;
                    for (v, b) in vars.iter().zip(encode_bounded(slack, coeffs)) {
                        bits[*v] = b;
                    }
                }
            }
        }
    }

    /// Bit vector for explicit routes (one per truck), auxiliaries completed.
    pub fn encode(&self, routes: &[Vec<usize>]) -> Vec<u8> {
        let mut bits = vec![0u8; self.index.num_vars];
        for (truck, route) in routes.iter().enumerate().take(self.index.trucks) {
            if route.is_empty() {
                continue;
            }
            let mut prev = 0;
            for &v in route {
                if v != prev {
                    bits[self.index.edge(truck, prev, v)] = 1;
                }
                prev = v;
            }
            if prev != 0 {
                bits[self.index.edge(truck, prev, 0)] = 1;
            }
        }
        self.complete_auxiliaries(&mut bits);
        bits
    }

    /// Encodes and decodes explicit routes.
    pub fn evaluate_routes(&self, routes: &[Vec<usize>]) -> RouteSolution {
        let bits = self.encode(routes);
        self.decode(&bits).expect("encoded bits match the index")
    }

    /// Makes an infeasible solution feasible where possible: duplicate visits
    /// keep their cheaper occurrence, overloaded trucks shed customers, and
    /// every missing customer goes to its cheapest capacity-respecting
    /// insertion point. Feasible input is returned unchanged.
    pub fn greedy_repair(&self, solution: &RouteSolution) -> RouteSolution {
        if solution.feasible {
            return solution.clone();
        }
        let fail = |reason: &str| {
            let mut out = solution.clone();
            out.infeasibility_reason = Some(reason.to_string());
            out
        };
        let problem = &self.problem;
        let n = problem.n();
        let trucks = self.index.trucks;
        let mut routes: Vec<Vec<usize>> = solution.routes.clone();
        routes.resize(trucks, Vec::new());

        let removal_saving = |route: &[usize], pos: usize| {
            let prev = if pos == 0 { 0 } else { route[pos - 1] };
            let next = route.get(pos + 1).copied().unwrap_or(0);
            problem.cost[prev][route[pos]] + problem.cost[route[pos]][next] - problem.cost[prev][next]
        };

        loop {
            let mut seen: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
            for (r, route) in routes.iter().enumerate() {
                for (pos, &v) in route.iter().enumerate() {
                    seen[v].push((r, pos));
                }
            }
            let Some(occurrences) = seen.into_iter().find(|o| o.len() > 1) else {
                break;
            };
            let &(r, pos) = occurrences
                .iter()
                .max_by_key(|&&(r, pos)| (removal_saving(&routes[r], pos), std::cmp::Reverse((r, pos))))
                .expect("at least two occurrences");
            routes[r].remove(pos);
        }

        let mut missing: Vec<usize> = {
            let visited: BTreeSet<usize> = routes.iter().flatten().copied().collect();
            (1..n).filter(|v| !visited.contains(v)).collect()
        };
        if let Some(q) = problem.capacity {
            for route in routes.iter_mut() {
                while problem.route_load(route) > q as u64 {
                    let pos = (0..route.len())
                        .max_by_key(|&p| (removal_saving(route, p), std::cmp::Reverse(p)))
                        .expect("overloaded route is non-empty");
                    missing.push(route.remove(pos));
                }
            }
        }
        missing.sort_unstable();

        for v in missing {
            let mut best: Option<(i64, usize, usize)> = None;
            for (r, route) in routes.iter().enumerate() {
                if let Some(q) = problem.capacity {
                    if problem.route_load(route) + problem.demands[v] as u64 > q as u64 {
                        continue;
                    }
                }
                for pos in 0..=route.len() {
                    let prev = if pos == 0 { 0 } else { route[pos - 1] };
                    let next = route.get(pos).copied().unwrap_or(0);
                    let delta = problem.cost[prev][v] + problem.cost[v][next] - problem.cost[prev][next];
                    if best.is_none_or(|(d, _, _)| delta < d) {
                        best = Some((delta, r, pos));
                    }
                }
            }
            match best {
                Some((_, r, pos)) => routes[r].insert(pos, v),
                None => return fail("capacity"),
            }
        }

        // Every truck must leave the depot: hand idle trucks a customer from
        // routes that can spare one.
        while let Some(idle) = routes.iter().position(|r| r.is_empty()) {
            let mut best: Option<(i64, usize, usize)> = None;
            for (r, route) in routes.iter().enumerate() {
                if route.len() < 2 {
                    continue;
                }
                for pos in 0..route.len() {
                    let v = route[pos];
                    let delta = 2 * problem.cost[0][v] - removal_saving(route, pos);
                    if best.is_none_or(|(d, _, _)| delta < d) {
                        best = Some((delta, r, pos));
                    }
                }
            }
            match best {
                Some((_, r, pos)) => {
                    let v = routes[r].remove(pos);
                    routes[idle].push(v);
                }
                None => return fail("idle truck"),
            }
        }

        let mut out = self.evaluate_routes(&routes);
        out.repaired = true;
        if !out.feasible {
            out.infeasibility_reason = Some("repair left penalties".into());
        }
        out
    }
}
