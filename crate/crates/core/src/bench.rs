//! Benchmark harness: runs pipelines over instances, strategies and seeds,
//! computes optimality gaps against a reference table, and classifies
//! instances by customer layout and depot position.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{run_fcm, FcmConfig};
use crate::instance::{fractional_distance, Instance, Point};
use crate::pipeline::{run, validate, PipelineConfig, PipelineError, Strategy};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("reference file line {line}: {message}")]
    Reference { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub cost: i64,
    pub optimal: bool,
}

/// Best-known costs keyed by instance name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable(pub BTreeMap<String, Reference>);

impl ReferenceTable {
    /// Parses `name cost optimal_flag` lines; `#` starts a comment. The flag
    /// accepts `1/0`, `yes/no` and `true/false`.
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let mut table = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| BenchError::Reference { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            }
            let cost: i64 = fields[1]
                .parse()
                .map_err(|_| err(format!("bad cost '{}'", fields[1])))?;
            let optimal = match fields[2].to_ascii_lowercase().as_str() {
                "1" | "yes" | "true" => true,
                "0" | "no" | "false" => false,
                other => return Err(err(format!("bad optimal flag '{other}'"))),
            };
            table.insert(fields[0].to_string(), Reference { cost, optimal });
        }
        Ok(Self(table))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Option<Reference> {
        self.0.get(name).copied()
    }
}

/// `(cost - best_known) / best_known`.
pub fn gap(cost: i64, best_known: i64) -> f64 {
    (cost - best_known) as f64 / best_known as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub instance: String,
    pub strategy: Strategy,
    pub seed: u64,
    /// Cost recomputed by the independent validator; `None` when the run
    /// produced no routes.
    pub cost: Option<i64>,
    pub best_known: Option<i64>,
    pub gap: Option<f64>,
    pub feasible: bool,
    pub repaired: bool,
    pub clusters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_clock: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Clustered,
    Scattered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepotPosition {
    Corner,
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Depot counts as on the hull within this fraction of the bounding-box diagonal.
    pub hull_tolerance: f64,
    /// Mean silhouette above which customers count as clustered.
    pub silhouette_threshold: f64,
    pub seed: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            hull_tolerance: 0.02,
            silhouette_threshold: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub distribution: Distribution,
    pub depot: DepotPosition,
    pub silhouette: f64,
    /// Depot distance to the hull boundary over the bounding-box diagonal.
    pub hull_distance: f64,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull in counter-clockwise order (monotone chain), without
/// collinear boundary points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return fractional_distance(p, a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    fractional_distance(p, Point::new(a.x + t * dx, a.y + t * dy))
}

/// Distance from `p` to the boundary of `hull`.
pub fn hull_boundary_distance(p: Point, hull: &[Point]) -> f64 {
    match hull.len() {
        0 => f64::INFINITY,
        1 => fractional_distance(p, hull[0]),
        n => (0..n)
            .map(|i| segment_distance(p, hull[i], hull[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Mean silhouette of a hard labelling; members of singleton clusters score 0.
pub fn silhouette(points: &[Point], labels: &[usize]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for (i, &p) in points.iter().enumerate() {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (j, &q) in points.iter().enumerate() {
            if i != j {
                sum[labels[j]] += fractional_distance(p, q);
                count[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if count[own] == 0 {
            continue;
        }
        let a = sum[own] / count[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && count[c] > 0)
            .map(|c| sum[c] / count[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / points.len() as f64
}

pub fn classify_instance(instance: &Instance, config: &ClassifyConfig) -> Classification {
    let all: Vec<Point> = instance.nodes.iter().map(|n| n.point()).collect();
    let (min_x, max_x) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    let (min_y, max_y) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let diagonal = (max_x - min_x).hypot(max_y - min_y).max(f64::MIN_POSITIVE);
    let hull = convex_hull(&all);
    let hull_distance = hull_boundary_distance(instance.depot().point(), &hull) / diagonal;
    let depot = if hull_distance <= config.hull_tolerance {
        DepotPosition::Corner
    } else {
        DepotPosition::Center
    };

    let customers: Vec<Point> = instance.customers().iter().map(|c| c.point()).collect();
    let k = instance.truck_count.min(customers.len()).max(1);
    let fcm_config = FcmConfig {
        seed: config.seed,
        ..FcmConfig::default()
    };
    let score = match run_fcm(&customers, k, &fcm_config) {
        Ok(fcm) if k > 1 => {
            let labels: Vec<usize> = (0..customers.len()).map(|i| fcm.argmax(i)).collect();
            silhouette(&customers, &labels)
        }
        _ => 0.0,
    };
    let distribution = if score > config.silhouette_threshold {
        Distribution::Clustered
    } else {
        Distribution::Scattered
    };
    Classification {
        distribution,
        depot,
        silhouette: score,
        hull_distance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// Cheapest feasible, unrepaired cost across seeds.
    pub best_cost: Option<i64>,
    pub gap: Option<f64>,
    pub feasible_runs: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub instance: String,
    pub best_known: Option<i64>,
    pub proven_optimal: Option<bool>,
    pub results: Vec<StrategyResult>,
    /// Strategy with the lower best cost; `None` on ties or missing results.
    pub winner: Option<Strategy>,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub records: Vec<BenchmarkRecord>,
    pub summary: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn run_one(instance: &Instance, strategy: Strategy, seed: u64, config: &PipelineConfig, refs: &ReferenceTable) -> BenchmarkRecord {
    let cfg = PipelineConfig {
        strategy,
        seed,
        ..config.clone()
    };
    let start = Instant::now();
    let outcome = run(instance, &cfg);
    let wall_clock = start.elapsed().as_secs_f64();
    let best_known = refs.get(&instance.name).map(|r| r.cost);
    let (report, error) = match outcome {
        Ok(report) => (Some(report), None),
        Err(PipelineError::Infeasible { stage, report, .. }) => (Some(*report), Some(format!("{stage}: infeasible"))),
        Err(e) => (None, Some(e.to_string())),
    };
    let (cost, feasible, repaired, clusters) = match &report {
        Some(r) if !r.solution.routes.is_empty() => {
            let check = validate(&r.solution, instance);
            (Some(check.cost), check.feasible && r.solution.feasible, r.solution.repaired, r.clusters)
        }
        Some(r) => (None, false, r.solution.repaired, r.clusters),
        None => (None, false, false, 0),
    };
    BenchmarkRecord {
        instance: instance.name.clone(),
        strategy,
        seed,
        cost,
        best_known,
        gap: match (cost, best_known) {
            (Some(c), Some(b)) if feasible => Some(gap(c, b)),
            _ => None,
        },
        feasible,
        repaired,
        clusters,
        error,
        wall_clock,
    }
}

/// Runs every (instance, strategy, seed) triple and summarizes the best
/// feasible, unrepaired cost per instance and strategy.
pub fn run_benchmark(
    instances: &[Instance],
    strategies: &[Strategy],
    seeds: &[u64],
    config: &PipelineConfig,
    refs: &ReferenceTable,
    classify: &ClassifyConfig,
) -> BenchmarkOutput {
    let triples: Vec<(usize, Strategy, u64)> = (0..instances.len())
        .flat_map(|i| strategies.iter().flat_map(move |&s| seeds.iter().map(move |&seed| (i, s, seed))))
        .collect();
    let records: Vec<BenchmarkRecord> = triples
        .par_iter()
        .map(|&(i, s, seed)| run_one(&instances[i], s, seed, config, refs))
        .collect();
    let mut warnings = Vec::new();
    let summary = instances
        .iter()
        .map(|inst| {
            let reference = refs.get(&inst.name);
            if reference.is_none() {
                warnings.push(format!("no reference cost for {}", inst.name));
            }
            let results: Vec<StrategyResult> = strategies
                .iter()
                .map(|&s| {
                    let runs: Vec<&BenchmarkRecord> =
                        records.iter().filter(|r| r.instance == inst.name && r.strategy == s).collect();
                    let best_cost = runs
                        .iter()
                        .filter(|r| r.feasible && !r.repaired)
                        .filter_map(|r| r.cost)
                        .min();
                    StrategyResult {
                        strategy: s,
                        best_cost,
                        gap: best_cost.zip(reference).map(|(c, r)| gap(c, r.cost)),
                        feasible_runs: runs.iter().filter(|r| r.feasible).count(),
                        runs: runs.len(),
                    }
                })
                .collect();
            let mut ranked: Vec<(i64, Strategy)> =
                results.iter().filter_map(|r| r.best_cost.map(|c| (c, r.strategy))).collect();
            ranked.sort();
            let winner = match ranked.as_slice() {
                [(a, s), (b, _), ..] if a < b => Some(*s),
                [(_, s)] if results.len() == 1 => Some(*s),
                _ => None,
            };
            SummaryRow {
                instance: inst.name.clone(),
                best_known: reference.map(|r| r.cost),
                proven_optimal: reference.map(|r| r.optimal),
                results,
                winner,
                classification: classify_instance(inst, classify),
            }
        })
        .collect();
    BenchmarkOutput {
        records,
        summary,
        warnings,
    }
}

/// One JSON object per line.
pub fn records_jsonl(records: &[BenchmarkRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Plain-text table: one row per instance, one cost/gap column pair per strategy.
pub fn summary_table(summary: &[SummaryRow]) -> String {
    let mut out = String::new();
    let strategies: Vec<Strategy> = summary
        .first()
        .map(|r| r.results.iter().map(|x| x.strategy).collect())
        .unwrap_or_default();
    let _ = write!(out, "{:<12} {:>6} {:>4}", "instance", "best", "opt");
    for s in &strategies {
        let name = s.name().to_uppercase();
        let _ = write!(out, " {:>7} {:>7}", name, format!("{name}gap"));
    }
    let _ = writeln!(out, " {:>6} {:>10} {:>7}", "winner", "customers", "depot");
    let fmt_gap = |g: Option<f64>| g.map_or("-".to_string(), |g| format!("{:.2}%", 100.0 * g));
    for row in summary {
        let _ = write!(
            out,
            "{:<12} {:>6} {:>4}",
            row.instance,
            row.best_known.map_or("-".into(), |c| c.to_string()),
            match row.proven_optimal {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            }
        );
        for r in &row.results {
            let _ = write!(
                out,
                " {:>7} {:>7}",
                r.best_cost.map_or("-".into(), |c| c.to_string()),
                fmt_gap(r.gap)
            );
        }
        let c = row.classification;
        let _ = writeln!(
            out,
            " {:>6} {:>10} {:>7}",
            row.winner.map_or("-", |s| s.name()),
            match c.distribution {
                Distribution::Clustered => "clustered",
                Distribution::Scattered => "scattered",
            },
            match c.depot {
                DepotPosition::Corner => "corner",
                DepotPosition::Center => "center",
            }
        );
    }
    out
}
