//! VRPLib / TSPLIB CVRP instances and the distance conventions used downstream.
//!
//! Routing costs use the TSPLIB `EUC_2D` convention (Euclidean distance rounded
//! to the nearest integer). Clustering works on unrounded distances.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("line {line}: expected a number, found `{found}`")]
    InvalidNumber { line: usize, found: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("depot has nonzero demand {0}")]
    DepotDemand(u32),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("unsupported edge weight type {0}")]
    UnsupportedEdgeWeight(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// 0-based internal index; the depot is always 0.
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub demand: u32,
}

impl Node {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeWeightKind {
    #[serde(rename = "EUC_2D")]
    Euc2d,
}

/// An immutable CVRP problem: depot at index 0, customers at 1..n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub name: String,
    pub nodes: Vec<Node>,
    pub truck_count: usize,
    pub truck_capacity: u32,
    pub edge_weight_kind: EdgeWeightKind,
    /// File id of each internal node, used when writing the instance back out.
    #[serde(skip)]
    file_ids: Vec<usize>,
}

/// TSPLIB `nint` Euclidean distance.
pub fn distance(a: &Node, b: &Node) -> i64 {
    rounded_distance(a.point(), b.point())
}

/// Rounded Euclidean distance between arbitrary points (used for centroid problems).
pub fn rounded_distance(a: Point, b: Point) -> i64 {
    (fractional_distance(a, b) + 0.5).floor() as i64
}

pub fn fractional_distance(a: Point, b: Point) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

impl Instance {
    /// Builds an instance from nodes already in internal order (depot first)
    /// and checks every invariant.
    pub fn new(
        name: impl Into<String>,
        nodes: Vec<Node>,
        truck_count: usize,
        truck_capacity: u32,
    ) -> Result<Self, InstanceError> {
        let file_ids = (1..=nodes.len()).collect();
        let instance = Self {
            name: name.into(),
            nodes,
            truck_count,
            truck_capacity,
            edge_weight_kind: EdgeWeightKind::Euc2d,
            file_ids,
        };
        instance.validate()?;
        Ok(instance)
    }

    fn validate(&self) -> Result<(), InstanceError> {
        if self.nodes.is_empty() {
            return Err(InstanceError::Invalid("no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(InstanceError::Invalid(format!(
                    "node ids must be contiguous, found {} at position {i}",
                    node.id
                )));
            }
        }
        if self.nodes[0].demand != 0 {
            return Err(InstanceError::DepotDemand(self.nodes[0].demand));
        }
        if self.truck_count == 0 {
            return Err(InstanceError::Invalid("truck count must be positive".into()));
        }
        if self.truck_capacity == 0 {
            return Err(InstanceError::Invalid("capacity must be positive".into()));
        }
        let max_demand = self.nodes.iter().map(|n| n.demand).max().unwrap_or(0);
        if max_demand > self.truck_capacity {
            return Err(InstanceError::Invalid(format!(
                "demand {max_demand} exceeds truck capacity {}",
                self.truck_capacity
            )));
        }
        let total = self.total_demand();
        let fleet = self.truck_count as u64 * self.truck_capacity as u64;
        if total > fleet {
            return Err(InstanceError::Invalid(format!(
                "total demand {total} exceeds fleet capacity {fleet}"
            )));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.nodes.len()
    }

    pub fn depot(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn customers(&self) -> &[Node] {
        &self.nodes[1..]
    }

    pub fn total_demand(&self) -> u64 {
        self.nodes.iter().map(|n| n.demand as u64).sum()
    }

    pub fn distance(&self, a: usize, b: usize) -> i64 {
        distance(&self.nodes[a], &self.nodes[b])
    }

    pub fn cost_matrix(&self) -> Vec<Vec<i64>> {
        let n = self.nodes.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.distance(i, j)).collect())
            .collect()
    }

    /// Returns a copy with a different fleet size, re-checking invariants.
    pub fn with_truck_count(&self, truck_count: usize) -> Result<Self, InstanceError> {
        let mut out = self.clone();
        out.truck_count = truck_count;
        out.validate()?;
        Ok(out)
    }

    /// Writes the instance in VRPLib format using the original file ids.
    pub fn to_vrplib(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "NAME : {}", self.name);
        let _ = writeln!(s, "COMMENT : (No of trucks: {})", self.truck_count);
        let _ = writeln!(s, "TYPE : CVRP");
        let _ = writeln!(s, "DIMENSION : {}", self.nodes.len());
        let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EUC_2D");
        let _ = writeln!(s, "CAPACITY : {}", self.truck_capacity);
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| self.file_ids[i]);
        let _ = writeln!(s, "NODE_COORD_SECTION");
        for &i in &order {
            let n = &self.nodes[i];
            let _ = writeln!(s, "{} {} {}", self.file_ids[i], n.x, n.y);
        }
        let _ = writeln!(s, "DEMAND_SECTION");
        for &i in &order {
            let _ = writeln!(s, "{} {}", self.file_ids[i], self.nodes[i].demand);
        }
        let _ = writeln!(s, "DEPOT_SECTION");
        let _ = writeln!(s, "{}", self.file_ids[0]);
        let _ = writeln!(s, "-1");
        let _ = writeln!(s, "EOF");
        s
    }

    /// Original (1-based) file id of an internal node.
    pub fn file_id(&self, internal: usize) -> usize {
        self.file_ids[internal]
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Header,
    Coords,
    Demands,
    Depots,
    Done,
}

fn parse_number<T: std::str::FromStr>(token: &str, line: usize) -> Result<T, InstanceError> {
    token.parse().map_err(|_| InstanceError::InvalidNumber {
        line,
        found: token.to_string(),
    })
}

/// Truck count from a `-kN` name suffix, e.g. `A-n32-k5`.
fn trucks_from_name(name: &str) -> Option<usize> {
    name.rsplit('-')
        .next()
        .and_then(|tail| tail.strip_prefix('k'))
        .and_then(|k| k.parse().ok())
}

/// Truck count from a comment such as `(Augerat et al, No of trucks: 5, ...)`.
fn trucks_from_comment(comment: &str) -> Option<usize> {
    let lower = comment.to_ascii_lowercase();
    let at = lower.find("no of trucks")?;
    let rest = &comment[at + "no of trucks".len()..];
    let digits: String = rest
        .trim_start_matches(|c: char| c == ':' || c.is_whitespace())
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let mut name = None;
    let mut comment = String::new();
    let mut dimension: Option<usize> = None;
    let mut capacity: Option<u32> = None;
    let mut coords: Vec<(usize, f64, f64)> = Vec::new();
    let mut demands: Vec<(usize, u32)> = Vec::new();
    let mut depots: Vec<usize> = Vec::new();
    let mut seen_coords = false;
    let mut seen_demands = false;
    let mut seen_depots = false;
    let mut section = Section::Header;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let keyword = line
            .split(|c: char| c == ':' || c.is_whitespace())
            .next()
            .unwrap_or("");
        match keyword {
            "NODE_COORD_SECTION" => {
                section = Section::Coords;
                seen_coords = true;
                continue;
            }
            "DEMAND_SECTION" => {
                section = Section::Demands;
                seen_demands = true;
                continue;
            }
            "DEPOT_SECTION" => {
                section = Section::Depots;
                seen_depots = true;
                continue;
            }
            "EOF" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        if section == Section::Done {
            continue;
        }
        if let Some((key, value)) = line.split_once(':') {
            if !key.trim().is_empty() && key.trim().chars().all(|c| c.is_ascii_uppercase() || c == '_') {
                let value = value.trim();
                match key.trim() {
                    "NAME" => name = Some(value.to_string()),
                    "COMMENT" => comment = value.to_string(),
                    "DIMENSION" => dimension = Some(parse_number(value, line_no)?),
                    "CAPACITY" => capacity = Some(parse_number(value, line_no)?),
                    "EDGE_WEIGHT_TYPE" => {
                        if value != "EUC_2D" {
                            return Err(InstanceError::UnsupportedEdgeWeight(value.to_string()));
                        }
                    }
                    _ => {}
                }
                section = Section::Header;
                continue;
            }
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Coords => {
                if tokens.len() != 3 {
                    return Err(InstanceError::Malformed {
                        line: line_no,
                        message: "coordinate line needs `id x y`".into(),
                    });
                }
                coords.push((
                    parse_number(tokens[0], line_no)?,
                    parse_number(tokens[1], line_no)?,
                    parse_number(tokens[2], line_no)?,
                ));
            }
            Section::Demands => {
                if tokens.len() != 2 {
                    return Err(InstanceError::Malformed {
                        line: line_no,
                        message: "demand line needs `id demand`".into(),
                    });
                }
                demands.push((parse_number(tokens[0], line_no)?, parse_number(tokens[1], line_no)?));
            }
            Section::Depots => {
                for t in tokens {
                    let id: i64 = parse_number(t, line_no)?;
                    if id >= 0 {
                        depots.push(id as usize);
                    }
                }
            }
            Section::Header | Section::Done => {}
        }
    }

    let name = name.ok_or(InstanceError::MissingSection("NAME"))?;
    let dimension = dimension.ok_or(InstanceError::MissingSection("DIMENSION"))?;
    let capacity = capacity.ok_or(InstanceError::MissingSection("CAPACITY"))?;
    if !seen_coords {
        return Err(InstanceError::MissingSection("NODE_COORD_SECTION"));
    }
    if !seen_demands {
        return Err(InstanceError::MissingSection("DEMAND_SECTION"));
    }
    if !seen_depots {
        return Err(InstanceError::MissingSection("DEPOT_SECTION"));
    }
    if coords.len() != dimension || demands.len() != dimension {
        return Err(InstanceError::Invalid(format!(
            "DIMENSION is {dimension} but found {} coordinates and {} demands",
            coords.len(),
            demands.len()
        )));
    }
    if depots.len() != 1 {
        return Err(InstanceError::Invalid(format!(
            "expected exactly one depot, found {}",
            depots.len()
        )));
    }
    let depot_file_id = depots[0];

    let demand_of = |id: usize| demands.iter().find(|(d, _)| *d == id).map(|(_, q)| *q);
    let depot_coord = coords
        .iter()
        .find(|(id, _, _)| *id == depot_file_id)
        .ok_or_else(|| InstanceError::Invalid(format!("depot id {depot_file_id} has no coordinates")))?;
    let depot_demand = demand_of(depot_file_id)
        .ok_or_else(|| InstanceError::Invalid(format!("depot id {depot_file_id} has no demand")))?;
    if depot_demand != 0 {
        return Err(InstanceError::DepotDemand(depot_demand));
    }

    let mut nodes = vec![Node {
        id: 0,
        x: depot_coord.1,
        y: depot_coord.2,
        demand: 0,
    }];
    let mut file_ids = vec![depot_file_id];
    for &(id, x, y) in coords.iter().filter(|(id, _, _)| *id != depot_file_id) {
        let demand =
            demand_of(id).ok_or_else(|| InstanceError::Invalid(format!("node {id} has no demand")))?;
        nodes.push(Node {
            id: nodes.len(),
            x,
            y,
            demand,
        });
        file_ids.push(id);
    }

    let truck_count = trucks_from_name(&name)
        .or_else(|| trucks_from_comment(&comment))
        .ok_or_else(|| InstanceError::Invalid("truck count not found in NAME or COMMENT".into()))?;

    let instance = Instance {
        name,
        nodes,
        truck_count,
        truck_capacity: capacity,
        edge_weight_kind: EdgeWeightKind::Euc2d,
        file_ids,
    };
    instance.validate()?;
    Ok(instance)
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_instance(&text)
}

/// Loads every `*.vrp` file in a directory, sorted by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Instance>, InstanceError> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|source| InstanceError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "vrp"))
        .collect();
    paths.sort();
    paths.iter().map(load_instance).collect()
}
