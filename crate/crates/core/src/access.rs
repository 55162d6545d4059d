//! Multimodal transport graphs, shortest-path travel times, decay accessibility
//! and lagged analysis of accessibility differentials against local indicators.

use std::collections::BTreeMap;
use std::io::Read;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::lagcorr::{
    correlation_profile, gated_profile, CorrError, CorrelationProfile, DEFAULT_LEVEL,
};
use crate::stfield::{Dims, FieldError, SpatioTemporalField};

/// Access speed by car from a zone centroid to its nearest station, km/h.
pub const CONNECTOR_SPEED: f64 = 50.0;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_T0_LIST: [f64; 3] = [20.0, 40.0, 60.0];
/// Name of the differential variable in the analysis field.
pub const DELTA_T: &str = "dT";

/// Average speeds in km/h of the rail modes.
pub fn default_mode_speeds() -> BTreeMap<String, f64> {
    [
        ("rer", 60.0),
        ("transilien", 100.0),
        ("metro", 30.0),
        ("tramway", 20.0),
    ]
    .into_iter()
    .map(|(m, s)| (m.to_string(), s))
    .collect()
}

#[derive(Debug, Error)]
pub enum AccessError {
    #[error("graph construction: {0}")]
    Construction(String),
    #[error("no path from zone {origin} to zone {destination}")]
    Unreachable { origin: String, destination: String },
    #[error("decay parameter t0 must be positive, got {0}")]
    Parameter(f64),
    #[error("zone sets differ between scenarios: {0}")]
    Alignment(String),
    #[error("lag window {from}..={to} not covered by indicator variations {first}..={last}")]
    Coverage {
        from: i64,
        to: i64,
        first: i64,
        last: i64,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Corr(#[from] CorrError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn flag<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" | "" => Ok(false),
        other => Err(serde::de::Error::custom(format!("not a boolean: {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: u64,
    pub x_km: f64,
    pub y_km: f64,
    #[serde(deserialize_with = "flag")]
    pub is_station: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: u64,
    pub to: u64,
    pub mode: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneKind {
    Origin,
    Destination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub zone: String,
    pub x_km: f64,
    pub y_km: f64,
    pub kind: ZoneKind,
}

pub fn read_nodes<R: Read>(reader: R) -> Result<Vec<Node>, AccessError> {
    Ok(csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()?)
}

pub fn read_edges<R: Read>(reader: R) -> Result<Vec<Edge>, AccessError> {
    Ok(csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()?)
}

/// Zones split into `(origins, destinations)` in file order.
pub fn read_zones<R: Read>(reader: R) -> Result<(Vec<Zone>, Vec<Zone>), AccessError> {
    let zones: Vec<Zone> = csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()?;
    Ok(zones.into_iter().partition(|z| z.kind == ZoneKind::Origin))
}

fn distance(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - bx).hypot(ay - by)
}

/// Minutes to cover `km` at `speed` km/h.
pub fn minutes(km: f64, speed: f64) -> f64 {
    km / speed * 60.0
}

#[derive(Debug, Clone)]
pub struct TransportGraph {
    nodes: Vec<Node>,
    origins: Vec<Zone>,
    destinations: Vec<Zone>,
    /// Network nodes first, then origins, then destinations; weights in minutes.
    graph: UnGraph<(), f64>,
}

/// Network plus one connector per zone to its nearest station (ties to the lowest id).
pub fn build_graph(
    nodes: &[Node],
    edges: &[Edge],
    mode_speeds: &BTreeMap<String, f64>,
    origins: &[Zone],
    destinations: &[Zone],
    connector_speed: f64,
) -> Result<TransportGraph, AccessError> {
    let bad = |m: String| Err(AccessError::Construction(m));
    if !(connector_speed > 0.0 && connector_speed.is_finite()) {
        return bad(format!("connector speed {connector_speed}"));
    }
    if let Some((m, s)) = mode_speeds
        .iter()
        .find(|(_, s)| !(**s > 0.0 && s.is_finite()))
    {
        return bad(format!("speed of mode {m} is {s}"));
    }
    let mut index = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if !(n.x_km.is_finite() && n.y_km.is_finite()) {
            return bad(format!("node {} has non-finite coordinates", n.id));
        }
        if index.insert(n.id, i).is_some() {
            return bad(format!("duplicate node id {}", n.id));
        }
    }
    let stations: Vec<usize> = index
        .values()
        .copied()
        .filter(|&i| nodes[i].is_station)
        .collect();
    if stations.is_empty() {
        return bad("no station to attach connectors to".into());
    }
    let mut graph = UnGraph::<(), f64>::with_capacity(
        nodes.len() + origins.len() + destinations.len(),
        edges.len(),
    );
    for _ in nodes {
        graph.add_node(());
    }
    for e in edges {
        let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) else {
            return bad(format!("edge {}-{} has an unknown endpoint", e.from, e.to));
        };
        let Some(&speed) = mode_speeds.get(&e.mode) else {
            return bad(format!(
                "edge {}-{} has unknown mode {}",
                e.from, e.to, e.mode
            ));
        };
        let km = distance(nodes[a].x_km, nodes[a].y_km, nodes[b].x_km, nodes[b].y_km);
        graph.add_edge(NodeIndex::new(a), NodeIndex::new(b), minutes(km, speed));
    }
    for z in origins.iter().chain(destinations) {
        if !(z.x_km.is_finite() && z.y_km.is_finite()) {
            return bad(format!("zone {} has non-finite coordinates", z.zone));
        }
        let mut best = (stations[0], f64::INFINITY);
        for &s in &stations {
            let d = distance(z.x_km, z.y_km, nodes[s].x_km, nodes[s].y_km);
            if d < best.1 {
                best = (s, d);
            }
        }
        let zi = graph.add_node(());
        graph.add_edge(zi, NodeIndex::new(best.0), minutes(best.1, connector_speed));
    }
    Ok(TransportGraph {
        nodes: nodes.to_vec(),
        origins: origins.to_vec(),
        destinations: destinations.to_vec(),
        graph,
    })
}

impl TransportGraph {
    pub fn origins(&self) -> &[Zone] {
        &self.origins
    }

    pub fn destinations(&self) -> &[Zone] {
        &self.destinations
    }

    pub fn origin_vertex(&self, o: usize) -> usize {
        self.nodes.len() + o
    }

    pub fn destination_vertex(&self, d: usize) -> usize {
        self.nodes.len() + self.origins.len() + d
    }

    pub fn vertex_count(&self) -> usize {
        self.graph.node_count()
    }

    /// `(u, v, minutes)` over network edges and connectors.
    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        self.graph
            .raw_edges()
            .iter()
            .map(|e| (e.source().index(), e.target().index(), e.weight))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeMatrix {
    pub origins: Vec<String>,
    pub destinations: Vec<String>,
    /// Minutes, row-major by origin.
    pub times: Vec<f64>,
}

impl TravelTimeMatrix {
    pub fn get(&self, o: usize, d: usize) -> f64 {
        self.times[o * self.destinations.len() + d]
    }

    pub fn row(&self, o: usize) -> &[f64] {
        let n = self.destinations.len();
        &self.times[o * n..(o + 1) * n]
    }
}

/// Shortest travel times from every origin to every destination.
/// An origin and a destination at the same point are 0 minutes apart.
pub fn travel_times(graph: &TransportGraph) -> Result<TravelTimeMatrix, AccessError> {
    let rows: Vec<Vec<f64>> = (0..graph.origins.len())
        .into_par_iter()
        .map(|o| {
            let from = graph.origins[o].clone();
            let dist = dijkstra(
                &graph.graph,
                NodeIndex::new(graph.origin_vertex(o)),
                None,
                |e| *e.weight(),
            );
            graph
                .destinations
                .iter()
                .enumerate()
                .map(|(d, to)| {
                    if from.x_km == to.x_km && from.y_km == to.y_km {
                        return Ok(0.0);
                    }
                    dist.get(&NodeIndex::new(graph.destination_vertex(d)))
                        .copied()
                        .ok_or_else(|| AccessError::Unreachable {
                            origin: from.zone.clone(),
                            destination: to.zone.clone(),
                        })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(TravelTimeMatrix {
        origins: graph.origins.iter().map(|z| z.zone.clone()).collect(),
        destinations: graph.destinations.iter().map(|z| z.zone.clone()).collect(),
        times: rows.concat(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityResult {
    pub zones: Vec<String>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    pub t0: f64,
    pub scenario: String,
}

/// `T_i = Σ_k exp(-t_ik / t0)`.
pub fn decay_accessibility(
    matrix: &TravelTimeMatrix,
    t0: f64,
    scenario: &str,
) -> Result<AccessibilityResult, AccessError> {
    if !(t0 > 0.0) {
        return Err(AccessError::Parameter(t0));
    }
    let t = (0..matrix.origins.len())
        .map(|o| matrix.row(o).iter().map(|&t| (-t / t0).exp()).sum())
        .collect();
    Ok(AccessibilityResult {
        zones: matrix.origins.clone(),
        t,
        t0,
        scenario: scenario.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityDifferential {
    pub zones: Vec<String>,
    pub dt: Vec<f64>,
    pub t0: f64,
}

/// `ΔT_i = T_i(with_project) - T_i(baseline)`.
pub fn accessibility_differential(
    with_project: &TransportGraph,
    baseline: &TransportGraph,
    t0: f64,
) -> Result<AccessibilityDifferential, AccessError> {
    let ids = |zs: &[Zone]| zs.iter().map(|z| z.zone.clone()).collect::<Vec<_>>();
    if ids(&with_project.origins) != ids(&baseline.origins) {
        return Err(AccessError::Alignment("origins".into()));
    }
    if ids(&with_project.destinations) != ids(&baseline.destinations) {
        return Err(AccessError::Alignment("destinations".into()));
    }
    let a = decay_accessibility(&travel_times(with_project)?, t0, "project")?;
    let b = decay_accessibility(&travel_times(baseline)?, t0, "baseline")?;
    Ok(differential(&a, &b))
}

/// Differential of two accessibility results over the same zones.
pub fn differential(
    with_project: &AccessibilityResult,
    baseline: &AccessibilityResult,
) -> AccessibilityDifferential {
    AccessibilityDifferential {
        zones: with_project.zones.clone(),
        dt: with_project
            .t
            .iter()
            .zip(&baseline.t)
            .map(|(a, b)| a - b)
            .collect(),
        t0: with_project.t0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProfile {
    pub indicator: String,
    pub t0: f64,
    /// Gated profile of `(dT, indicator variation)`; lag `τ` pairs the
    /// differential with the variation `τ` years after the project date.
    pub profile: CorrelationProfile,
}

/// Lagged correlation of accessibility differentials with indicator variations.
///
/// The differential is a step at `project_date`, so its variation is an
/// impulse there: the analysis field carries `ΔT_i` at the project date and
/// nothing at other years. The indicators are first-differenced (a variation
/// is labelled with its later year) and matched to zones by unit label.
/// Zones without indicator data are skipped.
pub fn empirical_lagged_analysis(
    differentials: &[AccessibilityDifferential],
    indicators: &SpatioTemporalField,
    project_date: i64,
    tau_max: usize,
    alpha: f64,
) -> Result<Vec<EmpiricalProfile>, AccessError> {
    let variations = indicators.variations()?;
    let dims = variations.dims();
    let first = variations.time_origin();
    let last = first + dims.times as i64 - 1;
    let (from, to) = (project_date - tau_max as i64, project_date + tau_max as i64);
    if from < first || to > last {
        return Err(AccessError::Coverage {
            from,
            to,
            first,
            last,
        });
    }
    let date = (project_date - first) as usize;
    let mut names = vec![DELTA_T.to_string()];
    names.extend(variations.variable_names().iter().cloned());
    let mut out = Vec::new();
    for diff in differentials {
        let units: Vec<(usize, usize)> = diff
            .zones
            .iter()
            .enumerate()
            .filter_map(|(z, label)| variations.unit_index(label).ok().map(|i| (z, i)))
            .collect();
        if units.is_empty() {
            return Err(AccessError::Alignment("no zone has indicator data".into()));
        }
        let field_dims = Dims::new(
            units.len(),
            dims.variables + 1,
            dims.times,
            dims.replications,
        );
        let mut field = SpatioTemporalField::empty(field_dims, names.clone())?
            .with_time_origin(first)
            .with_unit_labels(units.iter().map(|&(z, _)| diff.zones[z].clone()).collect())?;
        for k in 0..dims.replications {
            for (u, &(z, i)) in units.iter().enumerate() {
                field.set(u, 0, date, k, diff.dt[z])?;
                for j in 0..dims.variables {
                    for t in 0..dims.times {
                        if let Some(v) = variations.get(i, j, t, k) {
                            field.set(u, j + 1, t, k, v)?;
                        }
                    }
                }
            }
        }
        for j in 0..dims.variables {
            let profile = correlation_profile(&field, 0, j + 1, tau_max, DEFAULT_LEVEL)?;
            out.push(EmpiricalProfile {
                indicator: names[j + 1].clone(),
                t0: diff.t0,
                profile: gated_profile(&profile, alpha),
            });
        }
    }
    Ok(out)
}
