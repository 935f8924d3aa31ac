//! Prior graphs for the channel → region → global hierarchy.
//!
//! Channel-level graphs are unions of one connected subgraph per region, so
//! the channel graph has exactly as many connected components as there are
//! regions and fusion never mixes channels of different regions. Region-level
//! graphs are small cycles and the global level is a single node.

mod spectral;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use spectral::{
    chebyshev_basis, laplacian, max_eigenvalue, normalized_laplacian, ChebBasis, SquareMatrix,
};

/// Emotiv EPOC channel order used by DREAMER recordings.
pub const DREAMER_CHANNELS: [&str; 14] = [
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid graph spec: {0}")]
    Validation(String),
    #[error("invalid graph parameter: {0}")]
    Parameter(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Undirected graph on named nodes with its Chebyshev filter degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGraph {
    node_names: Vec<String>,
    adjacency: Vec<bool>,
    cheb_degree: usize,
}

impl LevelGraph {
    /// Builds a graph from index pairs. The Chebyshev degree defaults to the
    /// diameter.
    pub fn new(node_names: Vec<String>, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let n = node_names.len();
        if n == 0 {
            return Err(GraphError::Parameter("graph has no nodes".into()));
        }
        let mut adjacency = vec![false; n * n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::Validation(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a == b {
                return Err(GraphError::Validation(format!(
                    "self-loop on {}",
                    node_names[a]
                )));
            }
            adjacency[a * n + b] = true;
            adjacency[b * n + a] = true;
        }
        let mut g = Self {
            node_names,
            adjacency,
            cheb_degree: 0,
        };
        g.cheb_degree = graph_diameter(&g)?;
        Ok(g)
    }

    pub fn with_cheb_degree(mut self, degree: usize) -> Self {
        self.cheb_degree = degree;
        self
    }

    pub fn len(&self) -> usize {
        self.node_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_names.is_empty()
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn cheb_degree(&self) -> usize {
        self.cheb_degree
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.len() + b]
    }

    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&b| self.has_edge(a, b))
    }

    pub fn degree(&self, a: usize) -> usize {
        self.neighbors(a).count()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&e| e).count() / 2
    }

    /// Node-induced subgraph, keeping node order.
    pub fn induced(&self, nodes: &[usize]) -> Result<LevelGraph, GraphError> {
        let names = nodes.iter().map(|&i| self.node_names[i].clone()).collect();
        let mut edges = Vec::new();
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate().skip(a + 1) {
                if self.has_edge(i, j) {
                    edges.push((a, b));
                }
            }
        }
        LevelGraph::new(names, &edges)
    }
}

fn bfs_distances(g: &LevelGraph, src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have distances");
        for v in g.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Longest shortest path. Disconnected graphs report the largest diameter
/// among their components.
pub fn graph_diameter(g: &LevelGraph) -> Result<usize, GraphError> {
    if g.is_empty() {
        return Err(GraphError::Parameter("diameter of an empty graph".into()));
    }
    Ok((0..g.len())
        .flat_map(|s| bfs_distances(g, s).into_iter().flatten())
        .max()
        .unwrap_or(0))
}

/// Connected components as sorted node index lists, ordered by smallest member.
pub fn connected_components(g: &LevelGraph) -> Vec<Vec<usize>> {
    let mut seen = vec![false; g.len()];
    let mut out = Vec::new();
    for s in 0..g.len() {
        if seen[s] {
            continue;
        }
        let mut comp: Vec<usize> = bfs_distances(g, s)
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|_| i))
            .collect();
        comp.sort_unstable();
        comp.iter().for_each(|&i| seen[i] = true);
        out.push(comp);
    }
    out
}

/// User-supplied hierarchy description (also the JSON schema of custom graph
/// files).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomGraphSpec {
    /// Region name → member channels, in path order.
    pub regions: IndexMap<String, Vec<String>>,
    pub region_edges: Vec<[String; 2]>,
    /// Explicit channel edges; when absent each region is a path over its
    /// channels in listed order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_edges: Option<Vec<[String; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphPreset {
    /// Four regions on a 4-cycle.
    G0,
    /// Five regions on a 5-cycle.
    G1,
    /// Three regions on a 3-cycle.
    G2,
}

impl fmt::Display for GraphPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl GraphPreset {
    pub fn spec(self) -> CustomGraphSpec {
        let region = |name: &str, chans: &[&str]| {
            (
                name.to_string(),
                chans.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            )
        };
        let cycle = |names: &[&str]| {
            (0..names.len())
                .map(|i| [names[i].to_string(), names[(i + 1) % names.len()].to_string()])
                .collect::<Vec<_>>()
        };
        let (regions, region_edges) = match self {
            GraphPreset::G0 => (
                vec![
                    region("FL", &["AF3", "F3", "F7", "FC5"]),
                    region("FR", &["FC6", "F4", "F8", "AF4"]),
                    region("PL", &["T7", "P7", "O1"]),
                    region("PR", &["O2", "P8", "T8"]),
                ],
                cycle(&["FL", "FR", "PR", "PL"]),
            ),
            GraphPreset::G1 => (
                vec![
                    region("FL", &["AF3", "F3", "F7", "FC5"]),
                    region("FR", &["FC6", "F4", "F8", "AF4"]),
                    region("TL", &["T7"]),
                    region("TR", &["T8"]),
                    region("PO", &["P7", "O1", "O2", "P8"]),
                ],
                cycle(&["FL", "FR", "TR", "PO", "TL"]),
            ),
            GraphPreset::G2 => (
                vec![
                    region("FL", &["AF3", "F3", "F7", "FC5"]),
                    region("FR", &["FC6", "F4", "F8", "AF4"]),
                    region("P", &["T7", "P7", "O1", "O2", "P8", "T8"]),
                ],
                cycle(&["FL", "FR", "P"]),
            ),
        };
        CustomGraphSpec {
            regions: regions.into_iter().collect(),
            region_edges,
            channel_edges: None,
        }
    }
}

/// Where a model's hierarchy comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphChoice {
    Preset(GraphPreset),
    Custom(CustomGraphSpec),
}

impl Default for GraphChoice {
    fn default() -> Self {
        GraphChoice::Preset(GraphPreset::G0)
    }
}

impl GraphChoice {
    pub fn spec(&self) -> CustomGraphSpec {
        match self {
            GraphChoice::Preset(p) => p.spec(),
            GraphChoice::Custom(s) => s.clone(),
        }
    }
}

/// Three-level prior hierarchy with fusion maps between levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHierarchy {
    pub channel: LevelGraph,
    pub region: LevelGraph,
    pub global: LevelGraph,
    /// Channel indices belonging to each region, in region order.
    pub fusion_map_cr: Vec<Vec<usize>>,
    /// Region indices feeding the single global node.
    pub fusion_map_rg: Vec<Vec<usize>>,
}

impl GraphHierarchy {
    pub fn preset(preset: GraphPreset) -> Result<Self, GraphError> {
        let channels: Vec<String> = DREAMER_CHANNELS.iter().map(|c| c.to_string()).collect();
        Self::from_spec(&preset.spec(), &channels)
    }

    pub fn from_choice(choice: &GraphChoice, channels: &[String]) -> Result<Self, GraphError> {
        Self::from_spec(&choice.spec(), channels)
    }

    /// Builds and validates a hierarchy over the given channel order.
    pub fn from_spec(spec: &CustomGraphSpec, channels: &[String]) -> Result<Self, GraphError> {
        let index_of = |name: &str| channels.iter().position(|c| c == name);

        let mut owner: Vec<Option<usize>> = vec![None; channels.len()];
        let mut duplicated = BTreeSet::new();
        let mut unknown = BTreeSet::new();
        let mut fusion_map_cr = Vec::with_capacity(spec.regions.len());
        for (r, (_, members)) in spec.regions.iter().enumerate() {
            let mut idx = Vec::with_capacity(members.len());
            for m in members {
                match index_of(m) {
                    None => {
                        unknown.insert(m.clone());
                    }
                    Some(i) if owner[i].is_some() => {
                        duplicated.insert(m.clone());
                    }
                    Some(i) => {
                        owner[i] = Some(r);
                        idx.push(i);
                    }
                }
            }
            fusion_map_cr.push(idx);
        }
        let missing: Vec<&str> = channels
            .iter()
            .zip(&owner)
            .filter(|(_, o)| o.is_none())
            .map(|(c, _)| c.as_str())
            .collect();
        if spec.regions.is_empty()
            || !missing.is_empty()
            || !duplicated.is_empty()
            || !unknown.is_empty()
        {
            return Err(GraphError::Validation(format!(
                "regions must partition the channels; missing {missing:?}, duplicated {:?}, unknown {:?}",
                duplicated.iter().collect::<Vec<_>>(),
                unknown.iter().collect::<Vec<_>>()
            )));
        }
        if let Some((name, _)) = spec.regions.iter().find(|(_, m)| m.is_empty()) {
            return Err(GraphError::Validation(format!("region {name} is empty")));
        }

        let channel_edges: Vec<(usize, usize)> = match &spec.channel_edges {
            None => fusion_map_cr
                .iter()
                .flat_map(|members| members.windows(2).map(|w| (w[0], w[1])))
                .collect(),
            Some(edges) => edges
                .iter()
                .map(|[a, b]| {
                    let ia = index_of(a)
                        .ok_or_else(|| GraphError::Validation(format!("unknown channel {a}")))?;
                    let ib = index_of(b)
                        .ok_or_else(|| GraphError::Validation(format!("unknown channel {b}")))?;
                    if owner[ia] != owner[ib] {
                        return Err(GraphError::Validation(format!(
                            "channel edge {a}-{b} crosses regions"
                        )));
                    }
                    Ok((ia, ib))
                })
                .collect::<Result<_, _>>()?,
        };
        let channel = LevelGraph::new(channels.to_vec(), &channel_edges)?;

        let region_names: Vec<String> = spec.regions.keys().cloned().collect();
        let region_index = |name: &str| {
            region_names
                .iter()
                .position(|r| r == name)
                .ok_or_else(|| GraphError::Validation(format!("unknown region {name}")))
        };
        let region_edges = spec
            .region_edges
            .iter()
            .map(|[a, b]| Ok((region_index(a)?, region_index(b)?)))
            .collect::<Result<Vec<_>, GraphError>>()?;
        let region = LevelGraph::new(region_names.clone(), &region_edges)?;
        let global = LevelGraph::new(vec!["global".to_string()], &[])?;

        let h = Self {
            channel,
            region,
            global,
            fusion_map_cr,
            fusion_map_rg: vec![(0..region_names.len()).collect()],
        };
        h.validate()?;
        Ok(h)
    }

    /// Checks the partition and connectivity invariants.
    pub fn validate(&self) -> Result<(), GraphError> {
        let components = connected_components(&self.channel);
        if components.len() != self.region.len() {
            return Err(GraphError::Validation(format!(
                "channel graph has {} connected components but {} regions",
                components.len(),
                self.region.len()
            )));
        }
        for (r, members) in self.fusion_map_cr.iter().enumerate() {
            let sub = self.channel.induced(members)?;
            if connected_components(&sub).len() != 1 {
                return Err(GraphError::Validation(format!(
                    "region {} does not induce a connected subgraph",
                    self.region.node_names()[r]
                )));
            }
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.channel.len()
    }

    pub fn num_regions(&self) -> usize {
        self.region.len()
    }

    /// Width of the concatenated channel + region + global feature.
    pub fn feature_width(&self) -> usize {
        self.channel.len() + self.region.len() + self.global.len()
    }

    pub fn levels(&self) -> [&LevelGraph; 3] {
        [&self.channel, &self.region, &self.global]
    }
}

#[cfg(test)]
mod tests;
