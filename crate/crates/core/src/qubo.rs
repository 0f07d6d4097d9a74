//! Quadratic unconstrained binary optimization models.
//!
//! A model stores `offset + Σ linear_i·x_i + Σ_{i<j} quadratic_ij·x_i·x_j`.
//! Diagonal quadratic terms fold into the linear part since `x² = x` for
//! binary `x`. Constraints enter as squared penalties scaled by a weight.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuboError {
    #[error("bit vector has length {got}, model has {expected} variables")]
    LengthMismatch { expected: usize, got: usize },
    #[error("variable {var} out of range for a model with {num_vars} variables")]
    VarOutOfRange { var: usize, num_vars: usize },
    #[error("negative coefficient {0} in an inequality with non-negative terms")]
    NegativeCoefficient(i64),
    #[error("penalty weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("dump line {line}: {message}")]
    Dump { line: usize, message: String },
}

/// What a binary variable stands for.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarLabel {
    /// Truck `truck` drives from node `from` to node `to`.
    Edge { truck: usize, from: usize, to: usize },
    /// Bit `bit` of the visiting order of `node` on `truck`.
    Order { truck: usize, node: usize, bit: usize },
    /// Slack bit of the load constraint of `truck`.
    CapacitySlack { truck: usize, bit: usize },
    /// Slack bit of the ordering constraint for the pair `from → to` on `truck`.
    SubtourSlack { truck: usize, from: usize, to: usize, bit: usize },
    /// Anything else.
    Free { name: String },
}

impl fmt::Display for VarLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarLabel::Edge { truck, from, to } => write!(f, "edge {truck} {from} {to}"),
            VarLabel::Order { truck, node, bit } => write!(f, "order {truck} {node} {bit}"),
            VarLabel::CapacitySlack { truck, bit } => write!(f, "capacity_slack {truck} {bit}"),
            VarLabel::SubtourSlack { truck, from, to, bit } => {
                write!(f, "subtour_slack {truck} {from} {to} {bit}")
            }
            VarLabel::Free { name } => write!(f, "free {name}"),
        }
    }
}

impl FromStr for VarLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or("empty label")?;
        let rest: Vec<&str> = parts.collect();
        let nums = || -> Result<Vec<usize>, String> {
            rest.iter()
                .map(|t| t.parse::<usize>().map_err(|_| format!("bad label field `{t}`")))
                .collect()
        };
        let label = match kind {
            "edge" => match nums()?.as_slice() {
                [truck, from, to] => VarLabel::Edge { truck: *truck, from: *from, to: *to },
                _ => return Err("edge label needs 3 fields".into()),
            },
            "order" => match nums()?.as_slice() {
                [truck, node, bit] => VarLabel::Order { truck: *truck, node: *node, bit: *bit },
                _ => return Err("order label needs 3 fields".into()),
            },
            "capacity_slack" => match nums()?.as_slice() {
                [truck, bit] => VarLabel::CapacitySlack { truck: *truck, bit: *bit },
                _ => return Err("capacity_slack label needs 2 fields".into()),
            },
            "subtour_slack" => match nums()?.as_slice() {
                [truck, from, to, bit] => VarLabel::SubtourSlack {
                    truck: *truck,
                    from: *from,
                    to: *to,
                    bit: *bit,
                },
                _ => return Err("subtour_slack label needs 4 fields".into()),
            },
            "free" => VarLabel::Free { name: rest.join(" ") },
            other => return Err(format!("unknown label kind `{other}`")),
        };
        Ok(label)
    }
}

/// Lagrange weights for the routing penalties plus the ordering constant `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub lambda_visit: f64,
    pub lambda_depot: f64,
    pub lambda_flow: f64,
    pub lambda_capacity: f64,
    pub lambda_subtour: f64,
    pub big_b: f64,
}

impl PenaltyWeights {
    /// Every lambda is `2 · max_edge_cost · n`, and `B = n`, so a single
    /// violated constraint outweighs any achievable tour cost.
    pub fn default_for(max_edge_cost: i64, n: usize) -> Self {
        let lambda = (2 * max_edge_cost.max(1) * n as i64) as f64;
        Self {
            lambda_visit: lambda,
            lambda_depot: lambda,
            lambda_flow: lambda,
            lambda_capacity: lambda,
            lambda_subtour: lambda,
            big_b: n as f64,
        }
    }

    /// Like [`PenaltyWeights::default_for`] but with the ordering weight scaled
    /// down by `n²`, so that flipping one edge against its ordering constraint
    /// (an energy jump of about `lambda_subtour · B²`) costs about as much as
    /// breaking any other constraint once. The capacity weight is likewise
    /// divided by `max_demand²`, the size of one unit-step capacity violation.
    pub fn balanced_for(max_edge_cost: i64, n: usize, max_demand: u32) -> Self {
        let base = Self::default_for(max_edge_cost, n);
        let d = max_demand.max(1) as f64;
        Self {
            lambda_subtour: (2 * max_edge_cost.max(1)) as f64 / n.max(1) as f64,
            lambda_capacity: base.lambda_capacity / (d * d),
            ..base
        }
    }

    pub fn uniform(lambda: f64, big_b: f64) -> Self {
        Self {
            lambda_visit: lambda,
            lambda_depot: lambda,
            lambda_flow: lambda,
            lambda_capacity: lambda,
            lambda_subtour: lambda,
            big_b,
        }
    }

    pub fn all_positive(&self) -> bool {
        [
            self.lambda_visit,
            self.lambda_depot,
            self.lambda_flow,
            self.lambda_capacity,
            self.lambda_subtour,
            self.big_b,
        ]
        .iter()
        .all(|w| *w > 0.0)
    }
}

/// Coefficients of a binary expansion whose reachable values are exactly `0..=bound`:
/// powers of two with the last coefficient trimmed.
pub fn bounded_binary_coefficients(bound: u64) -> Vec<u64> {
    let mut coeffs = Vec::new();
    let mut covered = 0u64;
    let mut next = 1u64;
    while covered < bound {
        let c = next.min(bound - covered);
        coeffs.push(c);
        covered += c;
        next <<= 1;
    }
    coeffs
}

/// Bits selecting a subset of `coeffs` that sums to `value`, for coefficients
/// produced by [`bounded_binary_coefficients`]. Values above the bound saturate.
pub fn encode_bounded(value: u64, coeffs: &[u64]) -> Vec<u8> {
    let total: u64 = coeffs.iter().sum();
    let mut rest = value.min(total);
    let mut bits = vec![0u8; coeffs.len()];
    for k in (0..coeffs.len()).rev() {
        if coeffs[k] <= rest {
            bits[k] = 1;
            rest -= coeffs[k];
        }
    }
    bits
}

pub fn decode_bounded(bits: &[u8], coeffs: &[u64]) -> u64 {
    bits.iter().zip(coeffs).filter(|(b, _)| **b != 0).map(|(_, c)| c).sum()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuboModel {
    num_vars: usize,
    linear: Vec<f64>,
    quadratic: BTreeMap<(usize, usize), f64>,
    offset: f64,
    labels: Vec<VarLabel>,
}

impl QuboModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn labels(&self) -> &[VarLabel] {
        &self.labels
    }

    pub fn label(&self, var: usize) -> &VarLabel {
        &self.labels[var]
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    /// Non-zero off-diagonal couplings keyed by `(i, j)` with `i < j`.
    pub fn quadratic(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.quadratic
    }

    pub fn add_variable(&mut self, label: VarLabel) -> usize {
        self.labels.push(label);
        self.linear.push(0.0);
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_offset(&mut self, value: f64) {
        self.offset += value;
    }

    pub fn add_linear(&mut self, var: usize, value: f64) {
        self.linear[var] += value;
    }

    pub fn add_quadratic(&mut self, i: usize, j: usize, value: f64) {
        if i == j {
            self.add_linear(i, value);
            return;
        }
        let key = if i < j { (i, j) } else { (j, i) };
        let entry = self.quadratic.entry(key).or_insert(0.0);
        *entry += value;
        if *entry == 0.0 {
            self.quadratic.remove(&key);
        }
    }

    /// Coefficient of `x_i·x_j` (or of `x_i` when `i == j`), order-insensitive.
    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.linear[i];
        }
        let key = if i < j { (i, j) } else { (j, i) };
        self.quadratic.get(&key).copied().unwrap_or(0.0)
    }

    pub fn energy(&self, bits: &[u8]) -> Result<f64, QuboError> {
        if bits.len() != self.num_vars {
            return Err(QuboError::LengthMismatch {
                expected: self.num_vars,
                got: bits.len(),
            });
        }
        let mut e = self.offset;
        for (i, &h) in self.linear.iter().enumerate() {
            if bits[i] != 0 {
                e += h;
            }
        }
        for (&(i, j), &q) in &self.quadratic {
            if bits[i] != 0 && bits[j] != 0 {
                e += q;
            }
        }
        Ok(e)
    }

    fn check_var(&self, var: usize) -> Result<(), QuboError> {
        if var >= self.num_vars {
            return Err(QuboError::VarOutOfRange {
                var,
                num_vars: self.num_vars,
            });
        }
        Ok(())
    }

    /// Adds `weight · (Σ coeff·x + constant)²`.
    pub fn add_squared_equality_penalty(
        &mut self,
        terms: &[(usize, f64)],
        constant: f64,
        weight: f64,
    ) -> Result<(), QuboError> {
        if weight <= 0.0 {
            return Err(QuboError::NonPositiveWeight(weight));
        }
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(var, coeff) in terms {
            self.check_var(var)?;
            *merged.entry(var).or_insert(0.0) += coeff;
        }
        let merged: Vec<(usize, f64)> = merged.into_iter().filter(|(_, c)| *c != 0.0).collect();
        for (k, &(i, a)) in merged.iter().enumerate() {
            self.add_linear(i, weight * (a * a + 2.0 * a * constant));
            for &(j, b) in &merged[k + 1..] {
                self.add_quadratic(i, j, weight * 2.0 * a * b);
            }
        }
        self.offset += weight * constant * constant;
        Ok(())
    }

    /// Penalizes `Σ terms > bound` for non-negative integer terms by adding slack
    /// bits whose value ranges over exactly `0..=bound`, and
    /// `weight · (Σ terms + slack − bound)²`. Returns the new slack variables.
    pub fn add_inequality_penalty_with_slack(
        &mut self,
        terms: &[(usize, i64)],
        bound: u64,
        weight: f64,
        slack_label: impl FnMut(usize) -> VarLabel,
    ) -> Result<Vec<usize>, QuboError> {
        if let Some(&(_, c)) = terms.iter().find(|(_, c)| *c < 0) {
            return Err(QuboError::NegativeCoefficient(c));
        }
        self.add_upper_bound_penalty(terms, -(bound as i64), weight, slack_label)
    }

    /// Penalizes `Σ coeff·x + constant > 0` for integer coefficients of either
    /// sign. The slack range is `0..=-(smallest attainable left-hand side)`, so
    /// every satisfying assignment admits a zero-energy slack setting.
    pub fn add_upper_bound_penalty(
        &mut self,
        terms: &[(usize, i64)],
        constant: i64,
        weight: f64,
        mut slack_label: impl FnMut(usize) -> VarLabel,
    ) -> Result<Vec<usize>, QuboError> {
        if weight <= 0.0 {
            return Err(QuboError::NonPositiveWeight(weight));
        }
        for &(var, _) in terms {
            self.check_var(var)?;
        }
        let min_lhs: i64 = constant + terms.iter().map(|(_, c)| (*c).min(0)).sum::<i64>();
        let slack_bound = (-min_lhs).max(0) as u64;
        let mut all: Vec<(usize, f64)> = terms.iter().map(|&(v, c)| (v, c as f64)).collect();
        let mut slack_vars = Vec::new();
        for (bit, coeff) in bounded_binary_coefficients(slack_bound).into_iter().enumerate() {
            let var = self.add_variable(slack_label(bit));
            slack_vars.push(var);
            all.push((var, coeff as f64));
        }
        self.add_squared_equality_penalty(&all, constant as f64, weight)?;
        Ok(slack_vars)
    }

    /// Adds another model's terms over the same variable space; offsets add.
    pub fn merge(&mut self, other: &QuboModel) {
        while self.num_vars < other.num_vars {
            let label = other.labels[self.num_vars].clone();
            self.add_variable(label);
        }
        for (i, &h) in other.linear.iter().enumerate() {
            self.add_linear(i, h);
        }
        for (&(i, j), &q) in &other.quadratic {
            self.add_quadratic(i, j, q);
        }
        self.offset += other.offset;
    }

    /// Text dump: `# num_vars`, `# offset`, one `# label` line per variable,
    /// then `i j coeff` lines (`i == j` for linear terms).
    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# num_vars {}", self.num_vars);
        let _ = writeln!(s, "# offset {:?}", self.offset);
        for (i, label) in self.labels.iter().enumerate() {
            let _ = writeln!(s, "# label {i} {label}");
        }
        for (i, &h) in self.linear.iter().enumerate() {
            if h != 0.0 {
                let _ = writeln!(s, "{i} {i} {h:?}");
            }
        }
        for (&(i, j), &q) in &self.quadratic {
            let _ = writeln!(s, "{i} {j} {q:?}");
        }
        s
    }

    pub fn from_dump(text: &str) -> Result<Self, QuboError> {
        let err = |line: usize, message: String| QuboError::Dump { line, message };
        let mut model = QuboModel::new();
        let mut declared: Option<usize> = None;
        let mut labels: BTreeMap<usize, VarLabel> = BTreeMap::new();
        let mut terms: Vec<(usize, usize, f64)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("num_vars") {
                    declared = Some(v.trim().parse().map_err(|_| err(line_no, "bad num_vars".into()))?);
                } else if let Some(v) = comment.strip_prefix("offset") {
                    model.offset = v.trim().parse().map_err(|_| err(line_no, "bad offset".into()))?;
                } else if let Some(rest) = comment.strip_prefix("label") {
                    let rest = rest.trim();
                    let (idx, label) = rest
                        .split_once(' ')
                        .ok_or_else(|| err(line_no, "label needs an index".into()))?;
                    let idx: usize = idx.parse().map_err(|_| err(line_no, "bad label index".into()))?;
                    labels.insert(idx, label.parse().map_err(|m| err(line_no, m))?);
                }
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 3 {
                return Err(err(line_no, "expected `i j coeff`".into()));
            }
            let i: usize = tokens[0].parse().map_err(|_| err(line_no, "bad index".into()))?;
            let j: usize = tokens[1].parse().map_err(|_| err(line_no, "bad index".into()))?;
            let q: f64 = tokens[2].parse().map_err(|_| err(line_no, "bad coefficient".into()))?;
            terms.push((i, j, q));
        }
        let num_vars = declared
            .or_else(|| labels.keys().next_back().map(|k| k + 1))
            .unwrap_or(0)
            .max(terms.iter().map(|(i, j, _)| i.max(j) + 1).max().unwrap_or(0));
        for v in 0..num_vars {
            let label = labels
                .remove(&v)
                .unwrap_or_else(|| VarLabel::Free { name: format!("x{v}") });
            model.add_variable(label);
        }
        for (i, j, q) in terms {
            model.add_quadratic(i, j, q);
        }
        Ok(model)
    }
}
