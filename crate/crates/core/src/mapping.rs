//! Building the map from a detection stream.
//!
//! Each frame goes through the same steps:
//!
//! 1. Observations are filtered by confidence and by the static-class
//!    allowlist, then moved into the robot-centric magnetic frame
//!    (camera → body → magnetic).
//! 2. They are associated with tracked nodes. Those are the short-term graph
//!    (STG), any staged nodes, and the working graph (WG) around the STG. WG
//!    positions are chained through stored edge vectors from the STG
//!    anchors.
//! 3. Unmatched observations become staged nodes. Each staged node gets edges
//!    to the co-visible STG members.
//! 4. Every `hierarchy_stride` frames, staged nodes are either merged into a
//!    nearby working-graph node that matches their descriptor, or inserted
//!    into the long-term graph (LTG).
//!
//! If almost nothing associates, the robot is treated as lost. A geometric
//! search over the whole LTG then tries to find where the frame belongs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::descriptor::{extract_descriptor, DescriptorConfig, DescriptorIndex};
use crate::error::{Error, Result};
use crate::geometry::{body_to_magnetic, camera_to_body, Extrinsics, Point3, Vec3, YawDeg};
use crate::graph::{AttrValue, Attrs, ClassId, NodeId, SemanticGraph, ShortTermGraph, STG_CAPACITY};
use crate::matching::{localize_roots, score_candidate, LocalizationResult, MatchConfig};
use crate::stream::DetectionStream;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectObservation {
    pub class_id: ClassId,
    pub confidence: f64,
    pub center_cam: Point3,
    pub color: Option<String>,
}

impl ObjectObservation {
    /// Validates against a class table of size `k`.
    pub fn new(
        class_id: ClassId,
        confidence: f64,
        center_cam: Point3,
        color: Option<String>,
        k: usize,
    ) -> Result<Self> {
        if class_id as usize >= k {
            return Err(Error::ClassOutOfRange { class_id, k });
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Format(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            class_id,
            confidence,
            center_cam: center_cam.finite("observation center")?,
            color,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionFrame {
    /// Seconds.
    pub timestamp: f64,
    pub yaw: YawDeg,
    pub observations: Vec<ObjectObservation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// Meters.
    pub gate_distance: f64,
    pub min_confidence: f64,
    /// `None` admits every class.
    pub static_class_allowlist: Option<BTreeSet<ClassId>>,
    /// Meters.
    pub edge_max_distance: f64,
    /// Largest robot translation between consecutive frames considered
    /// during association (m).
    pub max_frame_motion: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            gate_distance: 1.0,
            min_confidence: 0.5,
            static_class_allowlist: None,
            edge_max_distance: 10.0,
            max_frame_motion: 2.0,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_distance > 0.0 && self.gate_distance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gate_distance must be positive, got {}",
                self.gate_distance
            )));
        }
        if !(self.edge_max_distance >= self.gate_distance && self.edge_max_distance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "edge_max_distance {} must be at least gate_distance {}",
                self.edge_max_distance, self.gate_distance
            )));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidConfig(format!(
                "min_confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        if !(self.max_frame_motion >= 0.0 && self.max_frame_motion.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "max_frame_motion must be non-negative, got {}",
                self.max_frame_motion
            )));
        }
        Ok(())
    }

    pub fn admits(&self, class_id: ClassId) -> bool {
        self.static_class_allowlist
            .as_ref()
            .is_none_or(|s| s.contains(&class_id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingConfig {
    pub association: AssociationConfig,
    /// Descriptor score a staged node needs to merge into a WG node.
    pub tau_map: f64,
    /// Distance below which a staged node may duplicate a WG node (m).
    pub duplicate_gate: f64,
    pub walk_nodes: usize,
    /// Hop radius of the working graph around STG members.
    pub wg_radius: usize,
    /// Run the hierarchy update every this many non-empty frames.
    pub hierarchy_stride: usize,
    /// Geometric inliers needed to trust a recovery after losing track.
    pub recovery_min_inliers: usize,
    /// Sightings a staged node needs before it can enter the LTG.
    pub min_support: usize,
    /// Frames an unconfirmed staged node survives without a sighting.
    pub staged_ttl: usize,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            association: AssociationConfig::default(),
            tau_map: 0.8,
            duplicate_gate: 0.5,
            walk_nodes: 3,
            wg_radius: 3,
            hierarchy_stride: 1,
            recovery_min_inliers: 3,
            min_support: 1,
            staged_ttl: 10,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        self.association.validate()?;
        if !(self.tau_map > 0.0 && self.tau_map <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau_map must be in (0, 1], got {}",
                self.tau_map
            )));
        }
        if !(self.duplicate_gate > 0.0 && self.duplicate_gate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate_gate must be positive, got {}",
                self.duplicate_gate
            )));
        }
        if self.hierarchy_stride == 0 {
            return Err(Error::InvalidConfig("hierarchy_stride must be at least 1".into()));
        }
        if self.min_support == 0 {
            return Err(Error::InvalidConfig("min_support must be at least 1".into()));
        }
        if self.recovery_min_inliers < 2 {
            return Err(Error::InvalidConfig("recovery_min_inliers must be at least 2".into()));
        }
        self.descriptor_config().validate()
    }

    pub fn descriptor_config(&self) -> DescriptorConfig {
        DescriptorConfig::with_walk_nodes(self.walk_nodes)
    }
}

/// A node that is either in the long-term graph or still staged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Map(NodeId),
    Staged(u32),
}

#[derive(Clone, Debug)]
struct StagedNode {
    class_id: ClassId,
    center: Point3,
    attrs: Attrs,
    support: usize,
    last_seen: usize,
}

/// Which node an observation ended up in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationRecord {
    pub frame: usize,
    pub obs: usize,
    pub node: NodeId,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameReport {
    pub frame: usize,
    pub matched: Vec<NodeRef>,
    pub new_nodes: Vec<NodeRef>,
    pub new_edges: usize,
    pub lost: bool,
    pub recovered: bool,
    pub hierarchy: Option<HierarchyReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HierarchyReport {
    pub inserted: Vec<NodeId>,
    /// (staged id, LTG node it merged into).
    pub merged: Vec<(u32, NodeId)>,
    pub edges_added: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingStats {
    pub frames: usize,
    pub observations: usize,
    pub filtered: usize,
    pub lost_frames: usize,
    pub recoveries: usize,
    pub merges: usize,
    /// Staged nodes dropped for lack of confirmation.
    pub discarded: usize,
}

/// Final product of a mapping run.
#[derive(Clone, Debug)]
pub struct MapOutcome {
    pub graph: SemanticGraph,
    pub associations: Vec<AssociationRecord>,
    pub stats: MappingStats,
}

/// Observation after filtering, in the robot-centric magnetic frame.
#[derive(Clone, Debug)]
struct FrameObs {
    idx: usize,
    class_id: ClassId,
    q: Vec3,
}

#[derive(Clone, Copy, Debug)]
struct Track {
    node: NodeRef,
    class_id: ClassId,
    /// Robot-centric magnetic position.
    r: Vec3,
}

/// Greedy nearest-first one-to-one assignment of observations, moved by
/// `shift`, to same-class tracks within `gate`.
fn assign(obs: &[FrameObs], tracks: &[Track], shift: Vec3, gate: f64) -> (Vec<(usize, usize)>, f64) {
    let mut cands = Vec::new();
    for (i, o) in obs.iter().enumerate() {
        let p = o.q + shift;
        for (j, t) in tracks.iter().enumerate() {
            if t.class_id != o.class_id {
                continue;
            }
            let d = p.distance(&t.r);
            if d < gate {
                cands.push((d, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_o = vec![false; obs.len()];
    let mut used_t = vec![false; tracks.len()];
    let mut pairs = Vec::new();
    let mut residual = 0.0;
    for (d, i, j) in cands {
        if !used_o[i] && !used_t[j] {
            used_o[i] = true;
            used_t[j] = true;
            pairs.push((i, j));
            residual += d;
        }
    }
    (pairs, residual)
}

/// Best translation hypothesis: most inliers, then smallest residual.
fn best_assignment(obs: &[FrameObs], tracks: &[Track], gate: f64, max_motion: f64) -> Vec<(usize, usize)> {
    let mut hypotheses = vec![Vec3::ZERO];
    for o in obs {
        for t in tracks {
            if t.class_id == o.class_id {
                let shift = t.r - o.q;
                if shift.norm() <= max_motion {
                    hypotheses.push(shift);
                }
            }
        }
    }
    let mut best: Option<(Vec<(usize, usize)>, f64)> = None;
    for h in hypotheses {
        let (pairs, residual) = assign(obs, tracks, h, gate);
        let better = match &best {
            None => true,
            Some((bp, br)) => pairs.len() > bp.len() || (pairs.len() == bp.len() && residual < *br),
        };
        if better {
            best = Some((pairs, residual));
        }
    }
    best.map(|b| b.0).unwrap_or_default()
}

/// Positions of every node within `radius` hops of the anchors, found by
/// adding stored edge vectors outward. Earlier anchors win ties.
pub fn chain_positions(g: &SemanticGraph, anchors: &[(NodeId, Point3)], radius: usize) -> BTreeMap<NodeId, Point3> {
    let mut pos = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &(id, p) in anchors {
        if g.contains(id) && !pos.contains_key(&id) {
            pos.insert(id, p);
            queue.push_back((id, 0usize));
        }
    }
    while let Some((id, hops)) = queue.pop_front() {
        if hops == radius {
            continue;
        }
        let here = pos[&id];
        for next in g.adjacent(id) {
            if pos.contains_key(&next) {
                continue;
            }
            let d = g.direction(id, next).expect("adjacent nodes share an edge");
            pos.insert(next, here + d);
            queue.push_back((next, hops + 1));
        }
    }
    pos
}

/// The subgraph of `ltg` within `radius` hops of any root present in it.
pub fn build_working_graph(ltg: &SemanticGraph, roots: &[NodeId], radius: usize) -> Result<SemanticGraph> {
    let present: Vec<NodeId> = roots.iter().copied().filter(|r| ltg.contains(*r)).collect();
    let ids = ltg.multi_ball(&present, radius)?;
    ltg.induced_subgraph(ids)
}

/// Localizes the short-term graph of `session` against `ltg`.
pub fn relocalize(
    session: &SemanticGraph,
    stg: &ShortTermGraph<NodeId>,
    ltg: &SemanticGraph,
    cfg: &MatchConfig,
) -> Result<LocalizationResult> {
    let roots: Vec<NodeId> = stg.members().filter(|id| session.contains(*id)).collect();
    if roots.is_empty() {
        return Err(Error::NotEnoughContext("short-term graph is empty"));
    }
    let query = stg.view(session)?;
    let index = DescriptorIndex::build(ltg, cfg.descriptor_config())?;
    localize_roots(&query, &roots, &index, cfg)
}

/// Incremental map builder for one detection stream.
#[derive(Clone, Debug)]
pub struct Mapper {
    cfg: MappingConfig,
    extrinsics: Option<Extrinsics>,
    ltg: SemanticGraph,
    stg: ShortTermGraph<NodeRef>,
    staged: BTreeMap<u32, StagedNode>,
    next_staged: u32,
    resolved: BTreeMap<u32, NodeId>,
    pending_edges: Vec<(NodeRef, NodeRef, Vec3)>,
    /// Session-frame positions of nodes seen this session.
    positions: BTreeMap<NodeRef, Point3>,
    robot: Point3,
    last_t: Option<f64>,
    frame_index: usize,
    nonempty_frames: usize,
    log: Vec<(usize, usize, NodeRef)>,
    stats: MappingStats,
}

impl Mapper {
    pub fn new(class_table: Vec<String>, cfg: MappingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            extrinsics: None,
            ltg: SemanticGraph::new(class_table),
            stg: ShortTermGraph::new(),
            staged: BTreeMap::new(),
            next_staged: 0,
            resolved: BTreeMap::new(),
            pending_edges: Vec::new(),
            positions: BTreeMap::new(),
            robot: Vec3::ZERO,
            last_t: None,
            frame_index: 0,
            nonempty_frames: 0,
            log: Vec::new(),
            stats: MappingStats::default(),
        })
    }

    pub fn set_extrinsics(&mut self, ext: Extrinsics) {
        self.extrinsics = Some(ext);
    }

    pub fn config(&self) -> &MappingConfig {
        &self.cfg
    }

    pub fn ltg(&self) -> &SemanticGraph {
        &self.ltg
    }

    /// STG members, oldest first.
    pub fn stg(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.stg.members()
    }

    /// STG members already in the long-term graph.
    pub fn stg_map_nodes(&self) -> ShortTermGraph<NodeId> {
        let mut out = ShortTermGraph::new();
        for m in self.stg.members() {
            if let NodeRef::Map(id) = m {
                out.push(id);
            }
        }
        out
    }

    pub fn staged_len(&self) -> usize {
        self.staged.len()
    }

    pub fn stats(&self) -> MappingStats {
        self.stats
    }

    fn resolve(&self, r: NodeRef) -> Option<NodeId> {
        match r {
            NodeRef::Map(id) => Some(id),
            NodeRef::Staged(s) => self.resolved.get(&s).copied(),
        }
    }

    fn class_of(&self, r: NodeRef) -> ClassId {
        match r {
            NodeRef::Map(id) => self.ltg.node(id).expect("tracked node exists").class_id,
            NodeRef::Staged(s) => self.staged[&s].class_id,
        }
    }

    fn stg_anchors(&self) -> Vec<(NodeId, Point3)> {
        let mut anchors: Vec<(NodeId, Point3)> = self
            .stg
            .members()
            .filter_map(|m| match m {
                NodeRef::Map(id) => self.positions.get(&m).map(|p| (id, *p)),
                NodeRef::Staged(_) => None,
            })
            .collect();
        anchors.reverse(); // newest first
        anchors
    }

    fn tracks(&self) -> Vec<Track> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut add = |node: NodeRef, p: Point3, out: &mut Vec<Track>| {
            if seen.insert(node) {
                out.push(Track {
                    node,
                    class_id: self.class_of(node),
                    r: p - self.robot,
                });
            }
        };
        for m in self.stg.members() {
            if let Some(p) = self.positions.get(&m) {
                add(m, *p, &mut out);
            }
        }
        for &s in self.staged.keys() {
            let r = NodeRef::Staged(s);
            if let Some(p) = self.positions.get(&r) {
                add(r, *p, &mut out);
            }
        }
        let chained = chain_positions(&self.ltg, &self.stg_anchors(), self.cfg.wg_radius);
        for (id, p) in chained {
            add(NodeRef::Map(id), p, &mut out);
        }
        out
    }

    /// Geometric search of the whole LTG: every same-class (observation,
    /// node) pair anchors a hypothesis, and neighbors chained from the node
    /// are checked against the remaining observations.
    fn recover(&self, obs: &[FrameObs]) -> Option<(Vec<(usize, NodeId)>, Point3)> {
        let need = self.cfg.recovery_min_inliers;
        if obs.len() < need || self.ltg.len() < need {
            return None;
        }
        let classes: BTreeSet<ClassId> = obs.iter().map(|o| o.class_id).collect();
        let radius = self.cfg.wg_radius + 2;
        let gate = self.cfg.association.gate_distance;
        let mut best: Option<Recovery> = None;
        for anchor in self.ltg.nodes().filter(|n| classes.contains(&n.class_id)) {
            let chained = chain_positions(&self.ltg, &[(anchor.id, Vec3::ZERO)], radius);
            if chained.len() < need {
                continue;
            }
            let tracks: Vec<Track> = chained
                .iter()
                .map(|(id, p)| Track {
                    node: NodeRef::Map(*id),
                    class_id: self.ltg.node(*id).unwrap().class_id,
                    r: *p,
                })
                .collect();
            for a in obs.iter().filter(|o| o.class_id == anchor.class_id) {
                let (pairs, residual) = assign(obs, &tracks, -a.q, gate);
                if pairs.len() < need {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((n, r, ..)) => pairs.len() > *n || (pairs.len() == *n && residual < *r),
                };
                if better {
                    let mut robot = Vec3::ZERO;
                    let matched: Vec<(usize, NodeId)> = pairs
                        .iter()
                        .map(|&(i, j)| {
                            let NodeRef::Map(id) = tracks[j].node else {
                                unreachable!()
                            };
                            robot += anchor.center + tracks[j].r - obs[i].q;
                            (i, id)
                        })
                        .collect();
                    let robot = robot * (1.0 / pairs.len() as f64);
                    best = Some((pairs.len(), residual, matched, robot));
                }
            }
        }
        best.map(|(_, _, m, r)| (m, r))
    }

    pub fn process_frame(&mut self, frame: &DetectionFrame) -> Result<FrameReport> {
        let ext = self.extrinsics.clone().ok_or(Error::MissingExtrinsics)?;
        if let Some(prev) = self.last_t {
            if frame.timestamp <= prev {
                return Err(Error::OutOfOrder {
                    previous: prev,
                    got: frame.timestamp,
                });
            }
        }
        self.last_t = Some(frame.timestamp);
        let frame_no = self.frame_index;
        self.frame_index += 1;
        self.stats.frames += 1;
        let mut report = FrameReport {
            frame: frame_no,
            ..Default::default()
        };

        let k = self.ltg.class_count();
        let mut obs = Vec::new();
        for (idx, o) in frame.observations.iter().enumerate() {
            if o.class_id as usize >= k {
                return Err(Error::ClassOutOfRange {
                    class_id: o.class_id,
                    k,
                });
            }
            if o.confidence < self.cfg.association.min_confidence || !self.cfg.association.admits(o.class_id) {
                self.stats.filtered += 1;
                continue;
            }
            let q = body_to_magnetic(camera_to_body(o.center_cam, &ext), frame.yaw);
            obs.push(FrameObs {
                idx,
                class_id: o.class_id,
                q,
            });
        }
        if obs.is_empty() {
            return Ok(report);
        }
        self.stats.observations += obs.len();
        obs.sort_by(|a, b| a.q.norm().total_cmp(&b.q.norm()).then(a.idx.cmp(&b.idx)));

        let gate = self.cfg.association.gate_distance;
        let tracks = self.tracks();
        let pairs = best_assignment(&obs, &tracks, gate, self.cfg.association.max_frame_motion);

        // (observation index into `obs`, node)
        let mut matched: Vec<(usize, NodeRef)> = pairs.iter().map(|&(i, j)| (i, tracks[j].node)).collect();
        if !tracks.is_empty() && 2 * pairs.len() < obs.len() {
            report.lost = true;
            self.stats.lost_frames += 1;
            if let Some((found, robot)) = self.recover(&obs) {
                if found.len() > pairs.len() {
                    report.recovered = true;
                    self.stats.recoveries += 1;
                    matched = found.into_iter().map(|(i, id)| (i, NodeRef::Map(id))).collect();
                    self.robot = robot;
                }
            }
        }
        if !report.recovered && !pairs.is_empty() {
            let mut sum = Vec3::ZERO;
            for &(i, j) in &pairs {
                sum += self.robot + tracks[j].r - obs[i].q;
            }
            self.robot = sum * (1.0 / pairs.len() as f64);
        }
        matched.sort_by_key(|&(i, _)| i);

        let mut visible: BTreeMap<NodeRef, Vec3> = BTreeMap::new();
        let mut is_matched = vec![false; obs.len()];
        for &(i, node) in &matched {
            is_matched[i] = true;
            self.positions.insert(node, self.robot + obs[i].q);
            if let NodeRef::Staged(s) = node {
                let st = self.staged.get_mut(&s).expect("tracked staged node exists");
                st.support += 1;
                st.last_seen = frame_no;
            }
            visible.insert(node, obs[i].q);
            self.stg.push(node);
            self.log.push((frame_no, obs[i].idx, node));
            report.matched.push(node);
        }
        for (i, o) in obs.iter().enumerate() {
            if is_matched[i] {
                continue;
            }
            let s = self.next_staged;
            self.next_staged += 1;
            let node = NodeRef::Staged(s);
            let mut attrs = Attrs::new();
            if let Some(c) = &frame.observations[o.idx].color {
                attrs.insert("color".into(), AttrValue::Text(c.clone()));
            }
            self.staged.insert(
                s,
                StagedNode {
                    class_id: o.class_id,
                    center: self.robot + o.q,
                    attrs,
                    support: 1,
                    last_seen: frame_no,
                },
            );
            self.positions.insert(node, self.robot + o.q);
            for m in self.stg.members() {
                if let Some(qm) = visible.get(&m) {
                    let d = *qm - o.q;
                    if d.norm() <= self.cfg.association.edge_max_distance {
                        self.pending_edges.push((node, m, d));
                        report.new_edges += 1;
                    }
                }
            }
            visible.insert(node, o.q);
            self.stg.push(node);
            self.log.push((frame_no, o.idx, node));
            report.new_nodes.push(node);
        }
        if self.stg.len() > STG_CAPACITY {
            return Err(Error::Invariant(format!(
                "short-term graph holds {} nodes",
                self.stg.len()
            )));
        }

        self.expire_staged(frame_no);
        self.nonempty_frames += 1;
        if self.nonempty_frames.is_multiple_of(self.cfg.hierarchy_stride) {
            report.hierarchy = Some(self.update_hierarchy()?);
        }
        Ok(report)
    }

    /// Drops unconfirmed staged nodes that have not been seen for longer
    /// than `staged_ttl` frames, together with their pending edges.
    fn expire_staged(&mut self, now: usize) {
        let stale: Vec<u32> = self
            .staged
            .iter()
            .filter(|(_, n)| n.support < self.cfg.min_support && now - n.last_seen > self.cfg.staged_ttl)
            .map(|(s, _)| *s)
            .collect();
        for s in stale {
            self.discard(s);
        }
    }

    fn discard(&mut self, s: u32) {
        let r = NodeRef::Staged(s);
        self.staged.remove(&s);
        self.positions.remove(&r);
        self.stg.remove(&r);
        self.pending_edges.retain(|(a, b, _)| *a != r && *b != r);
        self.stats.discarded += 1;
    }

    /// Resolves every confirmed staged node: merge into a matching WG node
    /// or insert into the LTG.
    pub fn update_hierarchy(&mut self) -> Result<HierarchyReport> {
        let mut report = HierarchyReport::default();
        if self.staged.is_empty() {
            return Ok(report);
        }
        let anchors = self.stg_anchors();
        let roots: Vec<NodeId> = anchors.iter().map(|a| a.0).collect();
        let wg = build_working_graph(&self.ltg, &roots, self.cfg.wg_radius)?;
        let wg_pos = chain_positions(&wg, &anchors, self.cfg.wg_radius);
        let dcfg = self.cfg.descriptor_config();
        let mut wg_desc = BTreeMap::new();

        let staged_ids: Vec<u32> = self
            .staged
            .iter()
            .filter(|(_, n)| n.support >= self.cfg.min_support)
            .map(|(s, _)| *s)
            .collect();
        for s in staged_ids {
            let node = self.staged[&s].clone();
            let here = self.positions[&NodeRef::Staged(s)];
            let mut cands: Vec<(f64, NodeId)> = wg
                .nodes()
                .filter(|n| n.class_id == node.class_id)
                .filter_map(|n| wg_pos.get(&n.id).map(|p| (p.distance(&here), n.id)))
                .filter(|(d, _)| *d < self.cfg.duplicate_gate)
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let mut target = None;
            if !cands.is_empty() {
                let mut probe = wg.clone();
                let pid = probe.add_node(node.class_id, here, Attrs::new())?;
                for (a, b, d) in &self.pending_edges {
                    let (other, dvec) = if *a == NodeRef::Staged(s) {
                        (*b, *d)
                    } else if *b == NodeRef::Staged(s) {
                        (*a, -*d)
                    } else {
                        continue;
                    };
                    if let Some(o) = self.resolve(other) {
                        if probe.contains(o) && o != pid && probe.edge(pid, o).is_none() {
                            probe.add_edge(pid, o, dvec, Attrs::new())?;
                        }
                    }
                }
                let qd = extract_descriptor(&probe, pid, &dcfg)?;
                let mut best: Option<(f64, NodeId)> = None;
                for &(_, c) in &cands {
                    if let std::collections::btree_map::Entry::Vacant(e) = wg_desc.entry(c) {
                        e.insert(extract_descriptor(&wg, c, &dcfg)?);
                    }
                    let m = score_candidate(&qd, &wg_desc[&c])?;
                    if best.is_none_or(|(bs, _)| m.score > bs) {
                        best = Some((m.score, c));
                    }
                }
                if let Some((score, c)) = best {
                    if score >= self.cfg.tau_map {
                        target = Some(c);
                    }
                }
            }

            let id = match target {
                Some(x) => {
                    self.merge_into(x, &node)?;
                    report.merged.push((s, x));
                    self.stats.merges += 1;
                    x
                }
                None => {
                    let id = self.ltg.add_node(node.class_id, node.center, node.attrs.clone())?;
                    report.inserted.push(id);
                    id
                }
            };
            self.staged.remove(&s);
            self.resolved.insert(s, id);
            self.stg.replace(NodeRef::Staged(s), NodeRef::Map(id));
            if let Some(p) = self.positions.remove(&NodeRef::Staged(s)) {
                self.positions.insert(NodeRef::Map(id), p);
            }
            report.edges_added += self.flush_edges()?;
        }
        Ok(report)
    }

    fn merge_into(&mut self, target: NodeId, staged: &StagedNode) -> Result<()> {
        let n = self.ltg.node_mut(target).ok_or(Error::MissingNode(target))?;
        let support = match n.attrs.get("support") {
            Some(AttrValue::Number(v)) => *v,
            _ => 1.0,
        };
        let center = (n.center * support + staged.center) * (1.0 / (support + 1.0));
        n.attrs.insert("support".into(), AttrValue::Number(support + 1.0));
        for (k, v) in &staged.attrs {
            n.attrs.entry(k.clone()).or_insert_with(|| v.clone());
        }
        self.ltg.set_center(target, center)
    }

    fn flush_edges(&mut self) -> Result<usize> {
        let mut added = 0;
        let mut keep = Vec::new();
        for (a, b, d) in std::mem::take(&mut self.pending_edges) {
            match (self.resolve(a), self.resolve(b)) {
                (Some(x), Some(y)) => {
                    if x != y && self.ltg.edge(x, y).is_none() {
                        self.ltg.add_edge(x, y, d, Attrs::new())?;
                        added += 1;
                    }
                }
                _ => keep.push((a, b, d)),
            }
        }
        self.pending_edges = keep;
        Ok(added)
    }

    /// Localizes the current STG against `ltg` (usually this mapper's own).
    pub fn relocalize(&self, ltg: &SemanticGraph, cfg: &MatchConfig) -> Result<LocalizationResult> {
        relocalize(&self.ltg, &self.stg_map_nodes(), ltg, cfg)
    }

    /// Resolves anything still staged and returns the map.
    /// Observations of unconfirmed nodes are left out of the association
    /// log.
    pub fn finish(mut self) -> Result<MapOutcome> {
        self.update_hierarchy()?;
        let leftover: Vec<u32> = self.staged.keys().copied().collect();
        for s in leftover {
            self.discard(s);
        }
        let associations = self
            .log
            .iter()
            .filter_map(|&(frame, obs, r)| self.resolve(r).map(|node| AssociationRecord { frame, obs, node }))
            .collect();
        Ok(MapOutcome {
            graph: self.ltg,
            associations,
            stats: self.stats,
        })
    }
}

/// Inlier count, residual, observation-to-node pairs and robot position of a
/// recovery hypothesis.
type Recovery = (usize, f64, Vec<(usize, NodeId)>, Point3);

/// Maps a whole stream with the given configuration.
pub fn map_stream(stream: &DetectionStream, cfg: &MappingConfig) -> Result<MapOutcome> {
    let mut mapper = Mapper::new(stream.header.classes.clone(), cfg.clone())?;
    mapper.set_extrinsics(stream.header.extrinsics.clone());
    for f in &stream.frames {
        mapper.process_frame(f)?;
    }
    mapper.finish()
}
