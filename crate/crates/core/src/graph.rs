//! Multi-scale network data model.
//!
//! A [`MultiScaleNetwork`] combines the global protein interaction graph,
//! one induced subnetwork per cell type, and the meta graph of cell-type and
//! tissue nodes. Proteins are replicated per cell type as distinct contextual
//! nodes so that each replica can carry its own embedding; a contextual index
//! maps `(protein, cell type)` pairs and meta nodes to flat node ids.
//!
//! Everything here is immutable after construction and safe to share across
//! threads for reads.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

/// Typed edge pattern restricting which neighbors an attention pass sees.
/// Protein-protein neighbors are confined to a single subnetwork; there are
/// no cross-cell-type protein edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetaPath {
    ProteinProtein,
    CelltypeCelltype,
    CelltypeTissue,
    TissueTissue,
}

impl MetaPath {
    pub const ALL: [MetaPath; 4] = [
        MetaPath::ProteinProtein,
        MetaPath::CelltypeCelltype,
        MetaPath::CelltypeTissue,
        MetaPath::TissueTissue,
    ];
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown protein symbol '{0}'")]
    UnknownProtein(String),
    #[error("node {node} of kind {kind} cannot source meta-path {path:?}")]
    KindMismatch { node: usize, kind: &'static str, path: MetaPath },
    #[error("node id {0} out of range")]
    UnknownNode(usize),
}

/// Canonicalizes an undirected edge list: self-loops dropped, endpoints
/// ordered low-high, duplicates removed, result sorted.
fn canonical_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<(usize, usize)> {
    let set: BTreeSet<(usize, usize)> = edges
        .into_iter()
        .filter(|(a, b)| a != b)
        .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
        .collect();
    set.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Global protein graph
// ---------------------------------------------------------------------------

/// Undirected global protein interaction graph over gene symbols.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "GlobalPpiData", into = "GlobalPpiData")]
pub struct GlobalPpi {
    proteins: Vec<String>,
    edges: Vec<(usize, usize)>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
    #[serde(skip)]
    symbol_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct GlobalPpiData {
    proteins: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl From<GlobalPpiData> for GlobalPpi {
    fn from(d: GlobalPpiData) -> Self {
        GlobalPpi::new(d.proteins, d.edges)
    }
}

impl From<GlobalPpi> for GlobalPpiData {
    fn from(g: GlobalPpi) -> Self {
        GlobalPpiData { proteins: g.proteins, edges: g.edges }
    }
}

impl PartialEq for GlobalPpi {
    fn eq(&self, other: &Self) -> bool {
        self.proteins == other.proteins && self.edges == other.edges
    }
}

impl GlobalPpi {
    /// Builds the graph, canonicalizing edges (no self-loops, no duplicates,
    /// symmetric adjacency).
    pub fn new(proteins: Vec<String>, edges: Vec<(usize, usize)>) -> Self {
        let edges = canonical_edges(edges);
        let mut adjacency = vec![Vec::new(); proteins.len()];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        let symbol_index =
            proteins.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        GlobalPpi { proteins, edges, adjacency, symbol_index }
    }

    pub fn len(&self) -> usize {
        self.proteins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proteins.is_empty()
    }

    pub fn proteins(&self) -> &[String] {
        &self.proteins
    }

    pub fn symbol(&self, protein: usize) -> &str {
        &self.proteins[protein]
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbol_index.get(symbol).copied()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors_of(&self, protein: usize) -> &[usize] {
        &self.adjacency[protein]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Edges of the subgraph induced by `members` (global protein indices).
    pub fn induced_edges(&self, members: &[usize]) -> Vec<(usize, usize)> {
        let member_set: BTreeSet<usize> = members.iter().copied().collect();
        self.edges
            .iter()
            .copied()
            .filter(|(a, b)| member_set.contains(a) && member_set.contains(b))
            .collect()
    }

    /// Connected components of the subgraph induced by `members`, each
    /// component listed in ascending protein order.
    pub fn induced_components(&self, members: &[usize]) -> Vec<Vec<usize>> {
        let member_set: BTreeSet<usize> = members.iter().copied().collect();
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut components = Vec::new();
        for &start in &member_set {
            if seen.contains(&start) {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen.insert(start);
            while let Some(v) = queue.pop_front() {
                comp.push(v);
                for &w in self.neighbors_of(v) {
                    if member_set.contains(&w) && seen.insert(w) {
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }

    pub fn is_connected_induced(&self, members: &[usize]) -> bool {
        members.len() <= 1 || self.induced_components(members).len() == 1
    }

    /// Shortest path through the full global graph from any node of `from`
    /// to the first reachable node of `to`; returns the whole path including
    /// both endpoints. BFS with ascending tie-breaks keeps it deterministic.
    pub fn shortest_path_between(&self, from: &[usize], to: &BTreeSet<usize>) -> Option<Vec<usize>> {
        let mut pred: HashMap<usize, usize> = HashMap::new();
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut sorted_from = from.to_vec();
        sorted_from.sort_unstable();
        for &s in &sorted_from {
            if seen.insert(s) {
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            if to.contains(&v) {
                let mut path = vec![v];
                let mut cur = v;
                while let Some(&p) = pred.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for &w in self.neighbors_of(v) {
                if seen.insert(w) {
                    pred.insert(w, v);
                    queue.push_back(w);
                }
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Cell type subnetworks and the meta graph
// ---------------------------------------------------------------------------

/// Induced subnetwork over one cell type's selected proteins, with a
/// positive relative differential-expression weight per member. The member
/// list is ordered (ranking prefix first), weights align with it and sum
/// to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTypeSubnetwork {
    pub celltype_id: String,
    /// Global protein indices, distinct.
    pub members: Vec<usize>,
    /// Induced undirected edges as global protein index pairs (low, high).
    pub edges: Vec<(usize, usize)>,
    /// Per-member positive weights summing to one, aligned with `members`.
    pub de_weight: Vec<f64>,
    /// Set when extraction had to bridge components through the global graph.
    pub fallback: bool,
}

/// Meta graph of cell-type and tissue nodes.
///
/// Edges come in three kinds: `cci` between cell types, `membership` between
/// a cell type and a tissue, and `parent` between tissues (forming a forest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaGraph {
    pub celltypes: Vec<String>,
    pub tissues: Vec<String>,
    /// Cell-type index pairs (low, high).
    pub cci_edges: Vec<(usize, usize)>,
    /// (cell-type index, tissue index) pairs.
    pub membership_edges: Vec<(usize, usize)>,
    /// (child tissue index, parent tissue index) pairs.
    pub parent_edges: Vec<(usize, usize)>,
}

impl MetaGraph {
    pub fn new(
        celltypes: Vec<String>,
        tissues: Vec<String>,
        cci_edges: Vec<(usize, usize)>,
        membership_edges: Vec<(usize, usize)>,
        parent_edges: Vec<(usize, usize)>,
    ) -> Self {
        let cci_edges = canonical_edges(cci_edges);
        let mut membership_edges = membership_edges;
        membership_edges.sort_unstable();
        membership_edges.dedup();
        let mut parent_edges = parent_edges;
        parent_edges.sort_unstable();
        parent_edges.dedup();
        MetaGraph { celltypes, tissues, cci_edges, membership_edges, parent_edges }
    }

    pub fn celltype_index(&self, id: &str) -> Option<usize> {
        self.celltypes.iter().position(|c| c == id)
    }

    pub fn tissue_index(&self, id: &str) -> Option<usize> {
        self.tissues.iter().position(|t| t == id)
    }

    /// Ascending cell-type neighbors of a cell type under cci edges.
    pub fn cci_neighbors(&self, celltype: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .cci_edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == celltype {
                    Some(b)
                } else if b == celltype {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Tissues a cell type belongs to, ascending.
    pub fn tissues_of_celltype(&self, celltype: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .membership_edges
            .iter()
            .filter_map(|&(c, t)| (c == celltype).then_some(t))
            .collect();
        out.sort_unstable();
        out
    }

    /// Cell types belonging to a tissue, ascending.
    pub fn celltypes_of_tissue(&self, tissue: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .membership_edges
            .iter()
            .filter_map(|&(c, t)| (t == tissue).then_some(c))
            .collect();
        out.sort_unstable();
        out
    }

    /// Tissue neighbors under parent edges (both directions), ascending.
    pub fn tissue_neighbors(&self, tissue: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .parent_edges
            .iter()
            .filter_map(|&(child, parent)| {
                if child == tissue {
                    Some(parent)
                } else if parent == tissue {
                    Some(child)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Child tissues of a tissue, ascending.
    pub fn children_of_tissue(&self, tissue: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .parent_edges
            .iter()
            .filter_map(|&(child, parent)| (parent == tissue).then_some(child))
            .collect();
        out.sort_unstable();
        out
    }

    /// True when the parent edges contain no cycle (treated undirected).
    pub fn parent_edges_acyclic(&self) -> bool {
        let mut root: Vec<usize> = (0..self.tissues.len()).collect();
        fn find(root: &mut [usize], mut x: usize) -> usize {
            while root[x] != x {
                root[x] = root[root[x]];
                x = root[x];
            }
            x
        }
        for &(a, b) in &self.parent_edges {
            if a >= self.tissues.len() || b >= self.tissues.len() || a == b {
                return false;
            }
            let (ra, rb) = (find(&mut root, a), find(&mut root, b));
            if ra == rb {
                return false;
            }
            root[ra] = rb;
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Contextual node index
// ---------------------------------------------------------------------------

/// A node in the multi-scale network, addressed by a flat contextual id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextualNode {
    /// Replica of a protein inside one cell type's subnetwork.
    Protein { protein: usize, celltype: usize },
    CellType(usize),
    Tissue(usize),
}

impl ContextualNode {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ContextualNode::Protein { .. } => "protein",
            ContextualNode::CellType(_) => "celltype",
            ContextualNode::Tissue(_) => "tissue",
        }
    }
}

/// Bijection between contextual node ids and nodes: protein replicas first
/// (subnetwork by subnetwork, member order), then cell types, then tissues.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextIndex {
    nodes: Vec<ContextualNode>,
    protein_ids: HashMap<(usize, usize), usize>,
    celltype_offset: usize,
    tissue_offset: usize,
}

impl ContextIndex {
    fn build(subnets: &[CellTypeSubnetwork], meta: &MetaGraph) -> Self {
        let mut nodes = Vec::new();
        let mut protein_ids = HashMap::new();
        for subnet in subnets {
            let celltype = meta
                .celltype_index(&subnet.celltype_id)
                .expect("subnetwork cell type resolved before indexing");
            for &protein in &subnet.members {
                protein_ids.insert((protein, celltype), nodes.len());
                nodes.push(ContextualNode::Protein { protein, celltype });
            }
        }
        let celltype_offset = nodes.len();
        for c in 0..meta.celltypes.len() {
            nodes.push(ContextualNode::CellType(c));
        }
        let tissue_offset = nodes.len();
        for t in 0..meta.tissues.len() {
            nodes.push(ContextualNode::Tissue(t));
        }
        ContextIndex { nodes, protein_ids, celltype_offset, tissue_offset }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> Option<ContextualNode> {
        self.nodes.get(id).copied()
    }

    pub fn nodes(&self) -> &[ContextualNode] {
        &self.nodes
    }

    pub fn protein_id(&self, protein: usize, celltype: usize) -> Option<usize> {
        self.protein_ids.get(&(protein, celltype)).copied()
    }

    pub fn celltype_id(&self, celltype: usize) -> usize {
        self.celltype_offset + celltype
    }

    pub fn tissue_id(&self, tissue: usize) -> usize {
        self.tissue_offset + tissue
    }
}

// ---------------------------------------------------------------------------
// The assembled multi-scale network
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "NetworkData", into = "NetworkData")]
pub struct MultiScaleNetwork {
    pub global: GlobalPpi,
    pub subnets: Vec<CellTypeSubnetwork>,
    pub meta: MetaGraph,
    #[serde(skip)]
    index: ContextIndex,
}

#[derive(Serialize, Deserialize)]
struct NetworkData {
    global: GlobalPpi,
    subnets: Vec<CellTypeSubnetwork>,
    meta: MetaGraph,
}

impl From<NetworkData> for MultiScaleNetwork {
    fn from(d: NetworkData) -> Self {
        MultiScaleNetwork::assemble(d.global, d.subnets, d.meta)
    }
}

impl From<MultiScaleNetwork> for NetworkData {
    fn from(n: MultiScaleNetwork) -> Self {
        NetworkData { global: n.global, subnets: n.subnets, meta: n.meta }
    }
}

impl PartialEq for MultiScaleNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.global == other.global && self.subnets == other.subnets && self.meta == other.meta
    }
}

/// One violated invariant found by [`MultiScaleNetwork::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FindingKind {
    SubnetworkDisconnected,
    SubnetworkWeights,
    SubnetworkMembers,
    SubnetworkEdges,
    UnknownCelltype,
    TissueHierarchyCyclic,
    CelltypeWithoutTissue,
    EdgeEndpointOutOfRange,
    TissueUninitializable,
    IndexInconsistent,
}

/// Validation output: empty iff every structural invariant holds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    fn add(&mut self, kind: FindingKind, message: impl Into<String>) {
        self.findings.push(Finding { kind, message: message.into() });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{:?}: {}", finding.kind, finding.message)?;
        }
        Ok(())
    }
}

impl MultiScaleNetwork {
    /// Assembles the network and builds the contextual index. Subnetworks
    /// whose cell type is missing from the meta graph are indexed last-ditch
    /// against nothing and reported by [`validate`](Self::validate); callers
    /// should validate after assembling untrusted inputs.
    pub fn assemble(
        global: GlobalPpi,
        subnets: Vec<CellTypeSubnetwork>,
        meta: MetaGraph,
    ) -> Self {
        // The index builder requires resolvable cell types; filter the rest
        // so assembly cannot panic, and let validate() surface them.
        let resolvable: Vec<CellTypeSubnetwork> = subnets
            .iter()
            .filter(|s| meta.celltype_index(&s.celltype_id).is_some())
            .cloned()
            .collect();
        let index = ContextIndex::build(&resolvable, &meta);
        MultiScaleNetwork { global, subnets, meta, index }
    }

    pub fn index(&self) -> &ContextIndex {
        &self.index
    }

    pub fn subnet_for_celltype(&self, celltype: usize) -> Option<&CellTypeSubnetwork> {
        self.subnets
            .iter()
            .find(|s| self.meta.celltype_index(&s.celltype_id) == Some(celltype))
    }

    /// Graph neighbors of `node` under `path`, plus the node itself, in
    /// ascending contextual-id order.
    pub fn neighbors(&self, node: usize, path: MetaPath) -> Result<Vec<usize>, GraphError> {
        let ctx = self.index.node(node).ok_or(GraphError::UnknownNode(node))?;
        let mut out: Vec<usize> = match (path, ctx) {
            (MetaPath::ProteinProtein, ContextualNode::Protein { protein, celltype }) => {
                let subnet = self
                    .subnet_for_celltype(celltype)
                    .expect("indexed protein implies subnetwork");
                subnet
                    .edges
                    .iter()
                    .filter_map(|&(a, b)| {
                        if a == protein {
                            Some(b)
                        } else if b == protein {
                            Some(a)
                        } else {
                            None
                        }
                    })
                    .filter_map(|p| self.index.protein_id(p, celltype))
                    .collect()
            }
            (MetaPath::CelltypeCelltype, ContextualNode::CellType(c)) => self
                .meta
                .cci_neighbors(c)
                .into_iter()
                .map(|c2| self.index.celltype_id(c2))
                .collect(),
            (MetaPath::CelltypeTissue, ContextualNode::CellType(c)) => self
                .meta
                .tissues_of_celltype(c)
                .into_iter()
                .map(|t| self.index.tissue_id(t))
                .collect(),
            (MetaPath::CelltypeTissue, ContextualNode::Tissue(t)) => self
                .meta
                .celltypes_of_tissue(t)
                .into_iter()
                .map(|c| self.index.celltype_id(c))
                .collect(),
            (MetaPath::TissueTissue, ContextualNode::Tissue(t)) => self
                .meta
                .tissue_neighbors(t)
                .into_iter()
                .map(|t2| self.index.tissue_id(t2))
                .collect(),
            (path, ctx) => {
                return Err(GraphError::KindMismatch {
                    node,
                    kind: ctx.kind_name(),
                    path,
                })
            }
        };
        out.push(node);
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Checks every structural invariant; returns an empty report iff all
    /// hold.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let n_proteins = self.global.len();

        for subnet in &self.subnets {
            let name = &subnet.celltype_id;
            if self.meta.celltype_index(name).is_none() {
                report.add(
                    FindingKind::UnknownCelltype,
                    format!("subnetwork '{name}' names a cell type absent from the meta graph"),
                );
            }
            let mut sorted = subnet.members.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != subnet.members.len() {
                report.add(
                    FindingKind::SubnetworkMembers,
                    format!("subnetwork '{name}' has duplicate members"),
                );
            }
            if subnet.members.iter().any(|&m| m >= n_proteins) {
                report.add(
                    FindingKind::SubnetworkMembers,
                    format!("subnetwork '{name}' has members outside the global graph"),
                );
                continue;
            }
            if !self.global.is_connected_induced(&subnet.members) {
                report.add(
                    FindingKind::SubnetworkDisconnected,
                    format!("subnetwork '{name}' not connected"),
                );
            }
            if subnet.edges != self.global.induced_edges(&subnet.members) {
                report.add(
                    FindingKind::SubnetworkEdges,
                    format!("subnetwork '{name}' edges differ from the induced edge set"),
                );
            }
            if subnet.de_weight.len() != subnet.members.len() {
                report.add(
                    FindingKind::SubnetworkWeights,
                    format!("subnetwork '{name}' weight count differs from member count"),
                );
            } else {
                let sum: f64 = subnet.de_weight.iter().sum();
                if subnet.de_weight.iter().any(|&w| w <= 0.0) {
                    report.add(
                        FindingKind::SubnetworkWeights,
                        format!("subnetwork '{name}' has non-positive weights"),
                    );
                }
                if (sum - 1.0).abs() > 1e-9 {
                    report.add(
                        FindingKind::SubnetworkWeights,
                        format!("subnetwork '{name}' weights sum to {sum}, expected 1"),
                    );
                }
            }
        }

        if !self.meta.parent_edges_acyclic() {
            report.add(FindingKind::TissueHierarchyCyclic, "tissue hierarchy cyclic");
        }
        for (c, name) in self.meta.celltypes.iter().enumerate() {
            if self.meta.tissues_of_celltype(c).is_empty() {
                report.add(
                    FindingKind::CelltypeWithoutTissue,
                    format!("cell type '{name}' has no membership edge"),
                );
            }
        }
        let n_ct = self.meta.celltypes.len();
        let n_t = self.meta.tissues.len();
        for &(a, b) in &self.meta.cci_edges {
            if a >= n_ct || b >= n_ct {
                report.add(
                    FindingKind::EdgeEndpointOutOfRange,
                    format!("cci edge ({a}, {b}) has an endpoint outside the cell-type set"),
                );
            }
        }
        for &(c, t) in &self.meta.membership_edges {
            if c >= n_ct || t >= n_t {
                report.add(
                    FindingKind::EdgeEndpointOutOfRange,
                    format!("membership edge ({c}, {t}) endpoint out of range"),
                );
            }
        }
        for &(a, b) in &self.meta.parent_edges {
            if a >= n_t || b >= n_t {
                report.add(
                    FindingKind::EdgeEndpointOutOfRange,
                    format!("parent edge ({a}, {b}) endpoint out of range"),
                );
            }
        }
        // Tissue embeddings initialize children-first from member cell
        // types and child tissues; a tissue with neither cannot start.
        for (t, name) in self.meta.tissues.iter().enumerate() {
            let uninitializable = self.meta.celltypes_of_tissue(t).is_empty()
                && self.meta.children_of_tissue(t).is_empty();
            if uninitializable {
                report.add(
                    FindingKind::TissueUninitializable,
                    format!("tissue '{name}' has no member cell types and no child tissues"),
                );
            }
        }

        // Index coverage: exactly the union of subnetwork replicas plus meta
        // nodes, collision-free, round-tripping.
        let expected: usize = self
            .subnets
            .iter()
            .filter(|s| self.meta.celltype_index(&s.celltype_id).is_some())
            .map(|s| s.members.len())
            .sum::<usize>()
            + n_ct
            + n_t;
        if self.index.len() != expected {
            report.add(
                FindingKind::IndexInconsistent,
                format!("index holds {} nodes, expected {expected}", self.index.len()),
            );
        }
        for id in 0..self.index.len() {
            let round_trip = match self.index.node(id) {
                Some(ContextualNode::Protein { protein, celltype }) => {
                    self.index.protein_id(protein, celltype) == Some(id)
                }
                Some(ContextualNode::CellType(c)) => self.index.celltype_id(c) == id,
                Some(ContextualNode::Tissue(t)) => self.index.tissue_id(t) == id,
                None => false,
            };
            if !round_trip {
                report.add(
                    FindingKind::IndexInconsistent,
                    format!("index round trip failed for node {id}"),
                );
            }
        }

        report
    }
}
