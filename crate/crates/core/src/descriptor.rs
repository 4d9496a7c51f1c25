//! Semantic scene-graph descriptors.
//!
//! A node's descriptor is built from every simple walk of `R` nodes that
//! starts at the node. Each walk contributes two aligned entries:
//!
//! - `des_s`: the walk's class sequence packed into one integer,
//!   `Σ c_i·(k+1)^(R−i)`, where `k` is the class-table size and the extra
//!   symbol `k` pads walks that hit a dead end before `R` nodes;
//! - `des_d`: the walk's `R−1` magnetic-frame direction vectors, padded
//!   with zero vectors.
//!
//! Entries are kept in canonical order (encoding, then node ids) so that
//! two descriptors can be compared without caring how the graph was
//! traversed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::graph::{ClassId, NodeId, SemanticGraph};

pub const DESCRIPTOR_CACHE_FORMAT: &str = "oltsm-descriptors/1";

/// Default walk length (nodes per walk) for map descriptors.
pub const DEFAULT_WALK_NODES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PathSampling {
    /// Every simple walk of the configured length.
    Exhaustive,
    /// Up to `walks` random walks per root, seeded per root. Meant for
    /// high-degree nodes where exhaustive enumeration explodes.
    Sampled { walks: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    /// Nodes per walk, `R ≥ 2`.
    pub walk_nodes: usize,
    pub sampling: PathSampling,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            walk_nodes: DEFAULT_WALK_NODES,
            sampling: PathSampling::Exhaustive,
        }
    }
}

impl DescriptorConfig {
    pub fn with_walk_nodes(walk_nodes: usize) -> Self {
        Self {
            walk_nodes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.walk_nodes < 2 {
            return Err(Error::InvalidConfig(format!(
                "walk length must be at least 2 nodes, got {}",
                self.walk_nodes
            )));
        }
        if let PathSampling::Sampled { walks: 0, .. } = self.sampling {
            return Err(Error::InvalidConfig(
                "sampled descriptors need at least one walk".into(),
            ));
        }
        Ok(())
    }
}

/// One walk rooted at `nodes[0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkPath {
    /// Visited nodes; shorter than `R` when the walk hit a dead end.
    pub nodes: Vec<NodeId>,
    /// `R` classes, padded with the reserved symbol `k`.
    pub classes: Vec<ClassId>,
    /// `R − 1` direction vectors, padded with zeros.
    pub vectors: Vec<Vec3>,
}

impl WalkPath {
    fn from_nodes(g: &SemanticGraph, nodes: Vec<NodeId>, walk_nodes: usize) -> Self {
        let pad = g.class_count() as ClassId;
        let mut classes: Vec<ClassId> = nodes
            .iter()
            .map(|id| g.node(*id).expect("walk visits existing nodes").class_id)
            .collect();
        classes.resize(walk_nodes, pad);
        let mut vectors: Vec<Vec3> = nodes
            .windows(2)
            .map(|w| g.direction(w[0], w[1]).expect("walk follows edges"))
            .collect();
        vectors.resize(walk_nodes - 1, Vec3::ZERO);
        Self {
            nodes,
            classes,
            vectors,
        }
    }

    pub fn is_padded(&self) -> bool {
        self.nodes.len() < self.classes.len()
    }
}

/// Packs a class sequence as `Σ c_i·(k+1)^(R−i)`. Class `k` is the padding
/// symbol, so the code is unique over sequences drawn from `0..=k`.
pub fn encode_confidence(classes: &[ClassId], k: usize) -> Result<u64> {
    if k == 0 {
        return Err(Error::InvalidConfig("class table must hold at least one class".into()));
    }
    let base = k as u64 + 1;
    let mut code: u64 = 0;
    for &c in classes {
        if c as usize > k {
            return Err(Error::ClassOutOfRange { class_id: c, k: k + 1 });
        }
        code = code
            .checked_mul(base)
            .and_then(|v| v.checked_add(c as u64))
            .ok_or_else(|| Error::InvalidConfig(format!("class code overflows u64 for k={k}, R={}", classes.len())))?;
    }
    Ok(code)
}

fn extend_walks(g: &SemanticGraph, walk: &mut Vec<NodeId>, walk_nodes: usize, out: &mut Vec<Vec<NodeId>>) {
    if walk.len() == walk_nodes {
        out.push(walk.clone());
        return;
    }
    let last = *walk.last().expect("walk starts at the root");
    let mut extended = false;
    for next in g.adjacent(last) {
        if !walk.contains(&next) {
            extended = true;
            walk.push(next);
            extend_walks(g, walk, walk_nodes, out);
            walk.pop();
        }
    }
    if !extended {
        out.push(walk.clone());
    }
}

fn sample_walks(g: &SemanticGraph, root: NodeId, walk_nodes: usize, walks: usize, seed: u64) -> Vec<Vec<NodeId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(root.0)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut unique = BTreeSet::new();
    for _ in 0..walks {
        let mut walk = vec![root];
        while walk.len() < walk_nodes {
            let last = *walk.last().unwrap();
            let options: Vec<NodeId> = g.adjacent(last).filter(|n| !walk.contains(n)).collect();
            if options.is_empty() {
                break;
            }
            walk.push(options[rng.random_range(0..options.len())]);
        }
        unique.insert(walk);
    }
    unique.into_iter().collect()
}

fn sort_canonical(paths: &mut [(u64, WalkPath)]) {
    paths.sort_by(|(ca, a), (cb, b)| ca.cmp(cb).then_with(|| a.nodes.cmp(&b.nodes)));
}

fn collect_paths(g: &SemanticGraph, root: NodeId, cfg: &DescriptorConfig) -> Result<Vec<(u64, WalkPath)>> {
    cfg.validate()?;
    if !g.contains(root) {
        return Err(Error::MissingNode(root));
    }
    let raw = match cfg.sampling {
        PathSampling::Exhaustive => {
            let mut out = Vec::new();
            extend_walks(g, &mut vec![root], cfg.walk_nodes, &mut out);
            out
        }
        PathSampling::Sampled { walks, seed } => sample_walks(g, root, cfg.walk_nodes, walks, seed),
    };
    let k = g.class_count();
    let mut paths = raw
        .into_iter()
        .map(|nodes| {
            let p = WalkPath::from_nodes(g, nodes, cfg.walk_nodes);
            encode_confidence(&p.classes, k).map(|code| (code, p))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_canonical(&mut paths);
    Ok(paths)
}

/// All simple walks of `walk_nodes` nodes from `root`, dead ends padded, in
/// canonical order.
pub fn enumerate_paths(g: &SemanticGraph, root: NodeId, walk_nodes: usize) -> Result<Vec<WalkPath>> {
    let cfg = DescriptorConfig::with_walk_nodes(walk_nodes);
    Ok(collect_paths(g, root, &cfg)?.into_iter().map(|(_, p)| p).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub root: NodeId,
    pub root_class: ClassId,
    /// Nodes per walk.
    pub walk_nodes: usize,
    /// Class-table size the codes were computed with.
    pub class_count: usize,
    pub des_s: Vec<u64>,
    pub des_d: Vec<Vec<Vec3>>,
    /// Node ids of each walk, aligned with `des_s`.
    pub paths: Vec<Vec<NodeId>>,
}

impl SceneDescriptor {
    pub fn len(&self) -> usize {
        self.des_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.des_s.is_empty()
    }
}

pub fn extract_descriptor(g: &SemanticGraph, root: NodeId, cfg: &DescriptorConfig) -> Result<SceneDescriptor> {
    let paths = collect_paths(g, root, cfg)?;
    let mut des_s = Vec::with_capacity(paths.len());
    let mut des_d = Vec::with_capacity(paths.len());
    let mut nodes = Vec::with_capacity(paths.len());
    for (code, p) in paths {
        des_s.push(code);
        des_d.push(p.vectors);
        nodes.push(p.nodes);
    }
    Ok(SceneDescriptor {
        root,
        root_class: g.node(root).expect("checked above").class_id,
        walk_nodes: cfg.walk_nodes,
        class_count: g.class_count(),
        des_s,
        des_d,
        paths: nodes,
    })
}

/// Precomputed descriptors for every node of a database graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorIndex {
    config: DescriptorConfig,
    class_count: usize,
    descriptors: BTreeMap<NodeId, SceneDescriptor>,
    layouts: BTreeMap<NodeId, WalkLayout>,
    by_class: BTreeMap<ClassId, Vec<NodeId>>,
}

/// Flat copy of a descriptor's direction vectors for the matching loop.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct WalkLayout {
    /// Vectors per walk.
    pub(crate) stride: usize,
    pub(crate) vecs: Vec<Vec3>,
    /// `‖v‖²`, or −1 for an exact zero vector.
    pub(crate) norms: Vec<f64>,
    /// `(code, first walk, one past last walk)` per run of equal codes.
    pub(crate) groups: Vec<(u64, usize, usize)>,
}

impl WalkLayout {
    pub(crate) fn of(d: &SceneDescriptor) -> Self {
        let stride = d.walk_nodes.saturating_sub(1);
        let vecs: Vec<Vec3> = d.des_d.iter().flatten().copied().collect();
        let norms = vecs
            .iter()
            .map(|v| if v.is_zero() { -1.0 } else { v.norm_squared() })
            .collect();
        let mut groups: Vec<(u64, usize, usize)> = Vec::new();
        for (i, c) in d.des_s.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.0 == *c => g.2 = i + 1,
                _ => groups.push((*c, i, i + 1)),
            }
        }
        Self {
            stride,
            vecs,
            norms,
            groups,
        }
    }
}

impl DescriptorIndex {
    pub fn build(g: &SemanticGraph, config: DescriptorConfig) -> Result<Self> {
        let descriptors = g
            .node_ids()
            .map(|id| extract_descriptor(g, id, &config).map(|d| (id, d)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self::from_parts(config, g.class_count(), descriptors))
    }

    fn from_parts(
        config: DescriptorConfig,
        class_count: usize,
        descriptors: BTreeMap<NodeId, SceneDescriptor>,
    ) -> Self {
        let mut by_class: BTreeMap<ClassId, Vec<NodeId>> = BTreeMap::new();
        for (id, d) in &descriptors {
            by_class.entry(d.root_class).or_default().push(*id);
        }
        let layouts = descriptors.iter().map(|(id, d)| (*id, WalkLayout::of(d))).collect();
        Self {
            config,
            class_count,
            descriptors,
            layouts,
            by_class,
        }
    }

    pub fn config(&self) -> &DescriptorConfig {
        &self.config
    }

    pub fn walk_nodes(&self) -> usize {
        self.config.walk_nodes
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn get(&self, id: NodeId) -> Option<&SceneDescriptor> {
        self.descriptors.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SceneDescriptor> {
        self.descriptors.values()
    }

    /// Database nodes whose class equals `class_id`, ascending.
    pub fn candidates(&self, class_id: ClassId) -> impl Iterator<Item = &SceneDescriptor> {
        self.by_class
            .get(&class_id)
            .into_iter()
            .flatten()
            .map(|id| &self.descriptors[id])
    }

    pub(crate) fn candidates_with_layout(
        &self,
        class_id: ClassId,
    ) -> impl Iterator<Item = (&SceneDescriptor, &WalkLayout)> {
        self.by_class
            .get(&class_id)
            .into_iter()
            .flatten()
            .map(|id| (&self.descriptors[id], &self.layouts[id]))
    }

    pub fn to_cache_json(&self, map_hash: &str) -> Vec<u8> {
        let doc = CacheDocument {
            class_count: self.class_count,
            config: self.config,
            descriptors: self.descriptors.values().cloned().collect(),
            format: DESCRIPTOR_CACHE_FORMAT.into(),
            map_hash: map_hash.into(),
        };
        serde_json::to_vec(&doc).expect("descriptor cache serializes")
    }

    /// Loads a cache, returning `None` when it was built for another map or
    /// another descriptor configuration.
    pub fn from_cache_json(bytes: &[u8], map_hash: &str, config: &DescriptorConfig) -> Result<Option<Self>> {
        let doc: CacheDocument = serde_json::from_slice(bytes)?;
        if doc.format != DESCRIPTOR_CACHE_FORMAT {
            return Err(Error::Format(format!(
                "unsupported descriptor cache format {:?}",
                doc.format
            )));
        }
        if doc.map_hash != map_hash || doc.config != *config {
            return Ok(None);
        }
        for d in &doc.descriptors {
            let stride = doc.config.walk_nodes.saturating_sub(1);
            let shaped = d.walk_nodes == doc.config.walk_nodes
                && d.class_count == doc.class_count
                && d.des_d.len() == d.des_s.len()
                && d.paths.len() == d.des_s.len()
                && d.des_d.iter().all(|v| v.len() == stride)
                && d.des_s.windows(2).all(|w| w[0] <= w[1]);
            if !shaped {
                return Err(Error::Format(format!(
                    "descriptor cache entry for node {} is malformed",
                    d.root
                )));
            }
        }
        let descriptors = doc.descriptors.into_iter().map(|d| (d.root, d)).collect();
        Ok(Some(Self::from_parts(doc.config, doc.class_count, descriptors)))
    }

    /// Reads the cache at `path` when it matches, otherwise rebuilds and
    /// rewrites it.
    pub fn load_or_build(path: &Path, g: &SemanticGraph, config: DescriptorConfig) -> Result<Self> {
        let hash = crate::json::sha256_hex(&g.to_canonical_json());
        if let Ok(bytes) = std::fs::read(path) {
            if let Some(index) = Self::from_cache_json(&bytes, &hash, &config)? {
                return Ok(index);
            }
        }
        let index = Self::build(g, config)?;
        std::fs::write(path, index.to_cache_json(&hash))?;
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheDocument {
    class_count: usize,
    config: DescriptorConfig,
    descriptors: Vec<SceneDescriptor>,
    format: String,
    map_hash: String,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph::Attrs;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use std::collections::BTreeSet;

    fn classes(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn add(g: &mut SemanticGraph, class_id: ClassId, p: [f64; 3]) -> NodeId {
        g.add_node(class_id, p.into(), Attrs::new()).unwrap()
    }

    fn link(g: &mut SemanticGraph, a: NodeId, b: NodeId) {
        let d = g.node(b).unwrap().center - g.node(a).unwrap().center;
        g.add_edge(a, b, d, Attrs::new()).unwrap();
    }

    fn ids(p: &WalkPath) -> Vec<u32> {
        p.nodes.iter().map(|n| n.0).collect()
    }

    /// door=0, sign=1, pillar=2.
    fn door_sign_pillar() -> SemanticGraph {
        let mut g = SemanticGraph::new(vec!["door".into(), "sign".into(), "pillar".into()]);
        let a = add(&mut g, 0, [0.0, 0.0, 1.0]);
        let b = add(&mut g, 1, [2.0, 0.0, 2.0]);
        let c = add(&mut g, 2, [1.0, -1.5, 1.0]);
        link(&mut g, a, b);
        link(&mut g, b, c);
        link(&mut g, c, a);
        g
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_confidence(&[0, 0, 0], 10).unwrap(), 0);
        assert_eq!(encode_confidence(&[0, 0, 0], 1).unwrap(), 0);
        assert_eq!(encode_confidence(&[2, 5, 7], 10).unwrap(), 2 * 121 + 5 * 11 + 7);
        assert_eq!(encode_confidence(&[2, 5, 7], 10).unwrap(), 304);
        assert!(encode_confidence(&[0, 11, 0], 10).is_err());
        assert!(encode_confidence(&[0], 0).is_err());
        assert!(encode_confidence(&[1; 40], 200).is_err(), "overflow is reported");
    }

    #[test]
    fn encode_base_three_is_a_bijection_onto_0_to_26() {
        let mut codes = BTreeSet::new();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    codes.insert(encode_confidence(&[a, b, c], 2).unwrap());
                }
            }
        }
        assert_eq!(codes, (0..27).collect());
    }

    #[test]
    fn encode_base_eleven_is_injective() {
        let mut codes = BTreeSet::new();
        for a in 0..=10 {
            for b in 0..=10 {
                for c in 0..=10 {
                    assert!(codes.insert(encode_confidence(&[a, b, c], 10).unwrap()));
                }
            }
        }
        assert_eq!(codes.len(), 1331);
    }

    #[test]
    fn isolated_root_yields_one_padded_path() {
        let mut g = SemanticGraph::new(classes(4));
        let a = add(&mut g, 2, [0.0; 3]);
        let paths = enumerate_paths(&g, a, 3).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].classes, vec![2, 4, 4]);
        assert_eq!(paths[0].vectors, vec![Vec3::ZERO; 2]);
        assert!(paths[0].is_padded());
        let d = extract_descriptor(&g, a, &DescriptorConfig::default()).unwrap();
        assert_eq!(d.des_s, vec![2 * 25 + 4 * 5 + 4]);
    }

    #[test]
    fn triangle_paths() {
        let g = door_sign_pillar();
        let paths = enumerate_paths(&g, NodeId(0), 3).unwrap();
        let got: Vec<_> = paths.iter().map(ids).collect();
        // door-sign-pillar (0,1,2) = 0·16+1·4+2 = 6 ; door-pillar-sign = 0+8+1 = 9
        assert_eq!(got, vec![vec![0, 1, 2], vec![0, 2, 1]]);
    }

    #[test]
    fn path_graph_from_end() {
        let mut g = SemanticGraph::new(classes(2));
        let n: Vec<_> = (0..4).map(|i| add(&mut g, 0, [i as f64, 0.0, 0.0])).collect();
        for w in n.windows(2) {
            link(&mut g, w[0], w[1]);
        }
        let paths = enumerate_paths(&g, n[0], 3).unwrap();
        assert_eq!(paths.iter().map(ids).collect::<Vec<_>>(), vec![vec![0, 1, 2]]);
        assert!(matches!(enumerate_paths(&g, NodeId(9), 3), Err(Error::MissingNode(_))));
        assert!(matches!(enumerate_paths(&g, n[0], 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn triangle_descriptor_by_hand() {
        let g = door_sign_pillar();
        let d = extract_descriptor(&g, NodeId(0), &DescriptorConfig::default()).unwrap();
        // k = 3, base 4: door(0) sign(1) pillar(2) → 0·16 + 1·4 + 2 = 6; door pillar sign → 9
        assert_eq!(d.des_s, vec![6, 9]);
        let a = Vec3::new(0.0, 0.0, 1.0);
        let b = Vec3::new(2.0, 0.0, 2.0);
        let c = Vec3::new(1.0, -1.5, 1.0);
        assert_eq!(d.des_d, vec![vec![b - a, c - b], vec![c - a, b - c]]);
        assert_eq!(d.root_class, 0);
        assert_eq!(d.walk_nodes, 3);
        assert_eq!(d.class_count, 3);
    }

    fn relabel(g: &SemanticGraph, perm: &[u32]) -> SemanticGraph {
        let mut h = SemanticGraph::new(g.class_table().to_vec());
        let mut nodes: Vec<_> = g.nodes().cloned().collect();
        nodes.sort_by_key(|n| perm[n.id.0 as usize]);
        for mut n in nodes {
            n.id = NodeId(perm[n.id.0 as usize]);
            h.insert_node(n).unwrap();
        }
        for e in g.edges() {
            h.add_edge(
                NodeId(perm[e.a.0 as usize]),
                NodeId(perm[e.b.0 as usize]),
                e.dvec,
                Attrs::new(),
            )
            .unwrap();
        }
        h
    }

    #[test]
    fn relabeling_preserves_descriptors() {
        let g = door_sign_pillar();
        let perm = [2, 0, 1];
        let h = relabel(&g, &perm);
        for id in g.node_ids() {
            let a = extract_descriptor(&g, id, &DescriptorConfig::default()).unwrap();
            let b = extract_descriptor(&h, NodeId(perm[id.0 as usize]), &DescriptorConfig::default()).unwrap();
            let mut sa: Vec<_> = a.des_s.iter().zip(&a.des_d).collect();
            let mut sb: Vec<_> = b.des_s.iter().zip(&b.des_d).collect();
            sa.sort_by(|x, y| x.0.cmp(y.0).then(format!("{:?}", x.1).cmp(&format!("{:?}", y.1))));
            sb.sort_by(|x, y| x.0.cmp(y.0).then(format!("{:?}", x.1).cmp(&format!("{:?}", y.1))));
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn sampled_mode_is_deterministic_subset() {
        let g = random_graph(11, 0.5, 3, 7);
        let full = extract_descriptor(&g, NodeId(0), &DescriptorConfig::default()).unwrap();
        let cfg = DescriptorConfig {
            walk_nodes: 3,
            sampling: PathSampling::Sampled { walks: 6, seed: 42 },
        };
        let a = extract_descriptor(&g, NodeId(0), &cfg).unwrap();
        let b = extract_descriptor(&g, NodeId(0), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 6 && !a.is_empty());
        for p in &a.paths {
            assert!(full.paths.contains(p));
        }
    }

    #[test]
    fn descriptor_cache_round_trip() {
        let g = random_graph(9, 0.4, 3, 3);
        let index = DescriptorIndex::build(&g, DescriptorConfig::default()).unwrap();
        let bytes = index.to_cache_json("abc");
        let back = DescriptorIndex::from_cache_json(&bytes, "abc", &DescriptorConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(back, index);
        assert!(
            DescriptorIndex::from_cache_json(&bytes, "other", &DescriptorConfig::default())
                .unwrap()
                .is_none()
        );
        assert!(
            DescriptorIndex::from_cache_json(&bytes, "abc", &DescriptorConfig::with_walk_nodes(4))
                .unwrap()
                .is_none()
        );

        let dir = std::env::temp_dir().join(format!("oltsm-desc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cache.json");
        let built = DescriptorIndex::load_or_build(&path, &g, DescriptorConfig::default()).unwrap();
        let loaded = DescriptorIndex::load_or_build(&path, &g, DescriptorConfig::default()).unwrap();
        assert_eq!(built, loaded);
        std::fs::remove_dir_all(dir).ok();
    }

    /// Deterministic Erdős–Rényi-style graph with random 3D positions.
    pub(crate) fn random_graph(n: usize, p_edge: f64, k: usize, seed: u64) -> SemanticGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = SemanticGraph::new(classes(k));
        for _ in 0..n {
            let c = rng.random_range(0..k as u32);
            let pos = [
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(0.0..3.0),
            ];
            add(&mut g, c, pos);
        }
        for i in 0..n as u32 {
            for j in (i + 1)..n as u32 {
                if rng.random_bool(p_edge) {
                    link(&mut g, NodeId(i), NodeId(j));
                }
            }
        }
        g
    }

    /// Independent oracle: every tuple of distinct nodes starting at the
    /// root, filtered by adjacency; short tuples count only when no
    /// unvisited neighbor extends them.
    pub(crate) fn brute_force_paths(g: &SemanticGraph, root: NodeId, walk_nodes: usize) -> BTreeSet<Vec<NodeId>> {
        let all: Vec<NodeId> = g.node_ids().collect();
        let mut out = BTreeSet::new();
        let mut frontier = vec![vec![root]];
        while let Some(t) = frontier.pop() {
            let last = *t.last().unwrap();
            let extensions: Vec<NodeId> = all
                .iter()
                .copied()
                .filter(|n| !t.contains(n) && g.edge(last, *n).is_some())
                .collect();
            if t.len() == walk_nodes || extensions.is_empty() {
                out.insert(t);
                continue;
            }
            for n in extensions {
                let mut next = t.clone();
                next.push(n);
                frontier.push(next);
            }
        }
        out
    }

    fn rotate_z(v: Vec3, deg: f64) -> Vec3 {
        let (s, c) = deg.to_radians().sin_cos();
        Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn enumeration_matches_brute_force(
            n in 1usize..=12, p in 0.0..0.7f64, seed in any::<u64>(), r in 2usize..=4,
        ) {
            let g = random_graph(n, p, 4, seed);
            for root in g.node_ids() {
                let got: BTreeSet<Vec<NodeId>> =
                    enumerate_paths(&g, root, r).unwrap().into_iter().map(|p| p.nodes).collect();
                prop_assert_eq!(got, brute_force_paths(&g, root, r));
            }
        }

        #[test]
        fn rotation_rotates_only_directions(seed in any::<u64>(), angle in -180.0..180.0f64) {
            let g = random_graph(8, 0.4, 3, seed);
            let mut h = SemanticGraph::new(g.class_table().to_vec());
            for n in g.nodes() {
                h.insert_node(n.clone()).unwrap();
            }
            for e in g.edges() {
                h.add_edge(e.a, e.b, rotate_z(e.dvec, angle), Attrs::new()).unwrap();
            }
            for id in g.node_ids() {
                let a = extract_descriptor(&g, id, &DescriptorConfig::default()).unwrap();
                let b = extract_descriptor(&h, id, &DescriptorConfig::default()).unwrap();
                prop_assert_eq!(&a.des_s, &b.des_s);
                prop_assert_eq!(&a.paths, &b.paths);
                for (va, vb) in a.des_d.iter().flatten().zip(b.des_d.iter().flatten()) {
                    // stored vectors are quantized to 9 significant digits
                    prop_assert!(rotate_z(*va, angle).distance(vb) < 1e-7);
                }
            }
        }

        #[test]
        fn descriptors_are_canonically_sorted(seed in any::<u64>()) {
            let g = random_graph(10, 0.35, 3, seed);
            for id in g.node_ids() {
                let d = extract_descriptor(&g, id, &DescriptorConfig::default()).unwrap();
                prop_assert_eq!(d.des_s.len(), d.des_d.len());
                for w in 0..d.len().saturating_sub(1) {
                    let key_a = (d.des_s[w], &d.paths[w]);
                    let key_b = (d.des_s[w + 1], &d.paths[w + 1]);
                    prop_assert!(key_a < key_b);
                }
            }
        }
    }

    #[test]
    fn encoding_injective_exhaustive_small() {
        for k in 1..=4usize {
            for r in 1..=4usize {
                let base = k + 1;
                let total = base.pow(r as u32);
                let mut seen = BTreeSet::new();
                for idx in 0..total {
                    let mut seq = vec![0u32; r];
                    let mut rest = idx;
                    for slot in seq.iter_mut().rev() {
                        *slot = (rest % base) as u32;
                        rest /= base;
                    }
                    assert!(seen.insert(encode_confidence(&seq, k).unwrap()), "k={k} r={r} {seq:?}");
                }
            }
        }
    }
}
