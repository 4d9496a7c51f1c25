//! Attributed semantic graph: object landmarks as nodes, relative geometry
//! as edges.
//!
//! Edges are stored undirected, once per unordered pair. Each keeps the
//! direction vector `dvec` from its `a` endpoint to its `b` endpoint in the
//! magnetic frame; walking the edge from `b` to `a` flips the sign.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{heading_of, Point3, Vec3, YawDeg};
use crate::json::{quantize, ser_quantized, ser_quantized_vec};

pub const MAP_FORMAT: &str = "oltsm-map/1";

/// Short-term graph capacity.
pub const STG_CAPACITY: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index into a graph's class table.
pub type ClassId = u32;

/// Open-ended node/edge property (color tags, observation counts, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(#[serde(serialize_with = "ser_quantized")] f64),
    Text(String),
}

pub type Attrs = BTreeMap<String, AttrValue>;

fn quantize_attrs(attrs: Attrs) -> Attrs {
    attrs
        .into_iter()
        .map(|(k, v)| match v {
            AttrValue::Number(n) => (k, AttrValue::Number(quantize(n))),
            other => (k, other),
        })
        .collect()
}

fn quantize_vec(v: Vec3) -> Vec3 {
    Vec3::new(quantize(v.x), quantize(v.y), quantize(v.z))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkNode {
    pub id: NodeId,
    pub class_id: ClassId,
    /// Session-anchored, magnetic-aligned position. Bookkeeping only:
    /// matching never reads it.
    pub center: Point3,
    pub attrs: Attrs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelativeEdge {
    pub a: NodeId,
    pub b: NodeId,
    pub dis: f64,
    pub yaw: YawDeg,
    pub dvec: Vec3,
    pub attrs: Attrs,
}

impl RelativeEdge {
    /// Builds an edge whose `dis` and `yaw` are derived from `dvec`.
    pub fn new(a: NodeId, b: NodeId, dvec: Vec3, attrs: Attrs) -> Result<Self> {
        if a == b {
            return Err(Error::SelfLoop(a));
        }
        let dvec = dvec.finite("edge direction")?;
        Ok(Self {
            a,
            b,
            dis: dvec.norm(),
            yaw: heading_of(dvec),
            dvec,
            attrs,
        })
    }

    /// Direction vector when walking away from `from`.
    pub fn direction_from(&self, from: NodeId) -> Option<Vec3> {
        if from == self.a {
            Some(self.dvec)
        } else if from == self.b {
            Some(-self.dvec)
        } else {
            None
        }
    }

    pub fn other(&self, id: NodeId) -> Option<NodeId> {
        if id == self.a {
            Some(self.b)
        } else if id == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

fn pair_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// `G = {N, E}` plus the class table its node classes index into.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SemanticGraph {
    class_table: Vec<String>,
    nodes: BTreeMap<NodeId, LandmarkNode>,
    edges: BTreeMap<(NodeId, NodeId), RelativeEdge>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    next_id: u32,
}

impl SemanticGraph {
    pub fn new(class_table: Vec<String>) -> Self {
        Self {
            class_table,
            ..Default::default()
        }
    }

    pub fn class_table(&self) -> &[String] {
        &self.class_table
    }

    /// Number of classes `k`.
    pub fn class_count(&self) -> usize {
        self.class_table.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node(&self, id: NodeId) -> Option<&LandmarkNode> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut LandmarkNode> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &LandmarkNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = &RelativeEdge> {
        self.edges.values()
    }

    pub fn edge(&self, a: NodeId, b: NodeId) -> Option<&RelativeEdge> {
        self.edges.get(&pair_key(a, b))
    }

    /// Adjacent node ids in ascending order. Empty for unknown ids.
    pub fn adjacent(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency.get(&id).map_or(0, BTreeSet::len)
    }

    /// Direction vector from `from` to `to`, when they share an edge.
    pub fn direction(&self, from: NodeId, to: NodeId) -> Option<Vec3> {
        self.edge(from, to).and_then(|e| e.direction_from(from))
    }

    fn check_class(&self, class_id: ClassId) -> Result<()> {
        if (class_id as usize) < self.class_table.len() {
            Ok(())
        } else {
            Err(Error::ClassOutOfRange {
                class_id,
                k: self.class_table.len(),
            })
        }
    }

    /// Appends a node with the next serial id (0, 1, 2, ...).
    pub fn add_node(&mut self, class_id: ClassId, center: Point3, attrs: Attrs) -> Result<NodeId> {
        let id = NodeId(self.next_id);
        self.insert_node(LandmarkNode {
            id,
            class_id,
            center,
            attrs,
        })?;
        Ok(id)
    }

    /// Inserts a node carrying an explicit id. Later [`add_node`] calls
    /// continue after the largest id seen.
    ///
    /// [`add_node`]: SemanticGraph::add_node
    pub fn insert_node(&mut self, node: LandmarkNode) -> Result<()> {
        self.check_class(node.class_id)?;
        if self.nodes.contains_key(&node.id) {
            return Err(Error::DuplicateNode(node.id));
        }
        let center = quantize_vec(node.center.finite("node center")?);
        let id = node.id;
        self.nodes.insert(
            id,
            LandmarkNode {
                center,
                attrs: quantize_attrs(node.attrs),
                ..node
            },
        );
        self.adjacency.entry(id).or_default();
        self.next_id = self.next_id.max(id.0 + 1);
        Ok(())
    }

    /// Moves a node; the new center is quantized like any stored value.
    pub fn set_center(&mut self, id: NodeId, center: Point3) -> Result<()> {
        let center = quantize_vec(center.finite("node center")?);
        self.nodes.get_mut(&id).ok_or(Error::MissingNode(id))?.center = center;
        Ok(())
    }

    /// Adds (or replaces) the edge between `a` and `b`, oriented `a → b`.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId, dvec: Vec3, attrs: Attrs) -> Result<&RelativeEdge> {
        if a == b {
            return Err(Error::SelfLoop(a));
        }
        for id in [a, b] {
            if !self.contains(id) {
                return Err(Error::MissingNode(id));
            }
        }
        let edge = RelativeEdge::new(a, b, quantize_vec(dvec), quantize_attrs(attrs))?;
        let key = pair_key(a, b);
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
        self.edges.insert(key, edge);
        Ok(&self.edges[&key])
    }

    /// Nodes within `max_hops` of `root` (excluding it), ascending by id,
    /// each with its hop distance.
    pub fn neighbors(&self, root: NodeId, max_hops: usize) -> Result<Vec<(NodeId, usize)>> {
        let ball = self.ball(root, max_hops)?;
        Ok(ball.into_iter().filter(|&(id, _)| id != root).collect())
    }

    /// BFS ball including the root at distance 0, keyed by id.
    pub fn ball(&self, root: NodeId, max_hops: usize) -> Result<BTreeMap<NodeId, usize>> {
        if !self.contains(root) {
            return Err(Error::MissingNode(root));
        }
        let mut seen = BTreeMap::from([(root, 0usize)]);
        let mut queue = VecDeque::from([root]);
        while let Some(id) = queue.pop_front() {
            let hops = seen[&id];
            if hops == max_hops {
                continue;
            }
            for next in self.adjacent(id) {
                if let std::collections::btree_map::Entry::Vacant(e) = seen.entry(next) {
                    e.insert(hops + 1);
                    queue.push_back(next);
                }
            }
        }
        Ok(seen)
    }

    /// Union of the BFS balls around several roots.
    pub fn multi_ball(&self, roots: &[NodeId], max_hops: usize) -> Result<BTreeSet<NodeId>> {
        let mut out = BTreeSet::new();
        for &r in roots {
            out.extend(self.ball(r, max_hops)?.into_keys());
        }
        Ok(out)
    }

    /// Copy holding exactly `ids` and the edges with both endpoints in `ids`.
    pub fn induced_subgraph<I>(&self, ids: I) -> Result<SemanticGraph>
    where
        I: IntoIterator<Item = NodeId>,
    {
        let keep: BTreeSet<NodeId> = ids.into_iter().collect();
        let mut sub = SemanticGraph::new(self.class_table.clone());
        for &id in &keep {
            let node = self.node(id).ok_or(Error::MissingNode(id))?;
            sub.nodes.insert(id, node.clone());
            sub.adjacency.insert(id, BTreeSet::new());
            sub.next_id = sub.next_id.max(id.0 + 1);
        }
        for (key, edge) in &self.edges {
            if keep.contains(&key.0) && keep.contains(&key.1) {
                sub.adjacency.get_mut(&key.0).unwrap().insert(key.1);
                sub.adjacency.get_mut(&key.1).unwrap().insert(key.0);
                sub.edges.insert(*key, edge.clone());
            }
        }
        Ok(sub)
    }

    /// Canonical, byte-deterministic map file contents.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let doc = MapDocument {
            class_table: self.class_table.clone(),
            edges: self
                .edges
                .values()
                .map(|e| EdgeRecord {
                    a: e.a.0,
                    attrs: e.attrs.clone(),
                    b: e.b.0,
                    dis: e.dis,
                    dvec: e.dvec,
                    yaw: e.yaw.degrees(),
                })
                .collect(),
            format: MAP_FORMAT.to_string(),
            nodes: self
                .nodes
                .values()
                .map(|n| NodeRecord {
                    attrs: n.attrs.clone(),
                    center: n.center,
                    cls: n.class_id,
                    id: n.id.0,
                })
                .collect(),
        };
        serde_json::to_vec(&doc).expect("map document serializes")
    }

    /// Parses a map file. `dis` and `yaw` are re-derived from `dvec` and
    /// checked against the stored values.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let doc: MapDocument = serde_json::from_slice(bytes)?;
        if doc.format != MAP_FORMAT {
            return Err(Error::Format(format!(
                "unsupported map format {:?}, expected {MAP_FORMAT:?}",
                doc.format
            )));
        }
        let mut g = SemanticGraph::new(doc.class_table);
        for n in doc.nodes {
            g.insert_node(LandmarkNode {
                id: NodeId(n.id),
                class_id: n.cls,
                center: n.center,
                attrs: n.attrs,
            })?;
        }
        for e in doc.edges {
            let (a, b) = (NodeId(e.a), NodeId(e.b));
            if g.edge(a, b).is_some() {
                return Err(Error::Format(format!("duplicate edge {a}-{b}")));
            }
            let edge = g.add_edge(a, b, e.dvec, e.attrs)?;
            if (edge.dis - e.dis).abs() > 1e-6 * (1.0 + e.dis) {
                return Err(Error::Format(format!(
                    "edge {a}-{b}: dis {} disagrees with |dvec| = {}",
                    e.dis, edge.dis
                )));
            }
        }
        Ok(g)
    }
}

#[derive(Serialize, Deserialize)]
struct MapDocument {
    class_table: Vec<String>,
    edges: Vec<EdgeRecord>,
    format: String,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    #[serde(default)]
    attrs: Attrs,
    #[serde(serialize_with = "ser_quantized_vec")]
    center: Vec3,
    cls: ClassId,
    id: u32,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    a: u32,
    #[serde(default)]
    attrs: Attrs,
    b: u32,
    #[serde(serialize_with = "ser_quantized")]
    dis: f64,
    #[serde(serialize_with = "ser_quantized_vec")]
    dvec: Vec3,
    #[serde(serialize_with = "ser_quantized")]
    yaw: f64,
}

/// Ring of the most recently associated nodes, oldest first.
///
/// Re-associating a member moves it to the newest slot; pushing a new member
/// into a full ring evicts the oldest.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortTermGraph<T = NodeId> {
    members: VecDeque<T>,
    capacity: usize,
}

impl<T: PartialEq + Copy> Default for ShortTermGraph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: PartialEq + Copy> ShortTermGraph<T> {
    pub fn new() -> Self {
        Self::with_capacity(STG_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "short-term graph needs room for one node");
        Self {
            members: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Records an association; returns the evicted member, if any.
    pub fn push(&mut self, id: T) -> Option<T> {
        if let Some(pos) = self.members.iter().position(|m| *m == id) {
            self.members.remove(pos);
            self.members.push_back(id);
            return None;
        }
        let evicted = if self.members.len() == self.capacity {
            self.members.pop_front()
        } else {
            None
        };
        self.members.push_back(id);
        evicted
    }

    pub fn contains(&self, id: &T) -> bool {
        self.members.contains(id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Oldest to newest.
    pub fn members(&self) -> impl Iterator<Item = T> + '_ {
        self.members.iter().copied()
    }

    pub fn replace(&mut self, from: T, to: T) {
        if from == to {
            return;
        }
        let had_target = self.members.contains(&to);
        if let Some(pos) = self.members.iter().position(|m| *m == from) {
            if had_target {
                self.members.remove(pos);
            } else {
                self.members[pos] = to;
            }
        }
    }

    /// Drops a member without touching the order of the others.
    pub fn remove(&mut self, id: &T) -> bool {
        match self.members.iter().position(|m| m == id) {
            Some(pos) => {
                self.members.remove(pos);
                true
            }
            None => false,
        }
    }

    pub fn clear(&mut self) {
        self.members.clear();
    }
}

impl ShortTermGraph<NodeId> {
    /// The subgraph of `g` induced by the members present in `g`.
    pub fn view(&self, g: &SemanticGraph) -> Result<SemanticGraph> {
        g.induced_subgraph(self.members().filter(|id| g.contains(*id)))
    }
}
