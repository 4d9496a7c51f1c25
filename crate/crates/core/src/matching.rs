//! Multi-constraint descriptor matching and the localization decision.
//!
//! Three constraints decide whether a query node corresponds to a database
//! node:
//!
//! 1. **Euclidean distance** `S^D` between two positions in a shared frame.
//!    It only makes sense within one session, so it gates duplicate nodes
//!    during mapping ([`euclidean_gate`]).
//! 2. **Class consistency**: walks pair up only when their class codes are
//!    equal ([`match_paths`]), and candidates must share the root class.
//! 3. **Direction**: every paired edge must face the same way
//!    (`S^θ ≥ 0`, [`direction_cosine`]), and the surviving vector groups are
//!    compared with a normalized dot product ([`descriptor_similarity`]).
//!
//! The node score is `matched_fraction × max(S(M,N), 0)`, where the
//! fraction counts query walks that found a surviving partner.

use serde::{Deserialize, Serialize};

use crate::descriptor::{
    extract_descriptor, DescriptorConfig, DescriptorIndex, PathSampling, SceneDescriptor, WalkLayout,
};
use crate::error::{Error, Result};
use crate::geometry::{Point3, Vec3};
use crate::graph::{NodeId, SemanticGraph};
use crate::json::ser_quantized;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Scene acceptance threshold, in `(0, 1]`.
    pub tau_accept: f64,
    /// `S^D` below which two same-session nodes are the same object (m).
    pub duplicate_gate: f64,
    /// Nodes per descriptor walk.
    pub walk_nodes: usize,
    /// Hop radius of the neighborhood a query is built from.
    pub query_radius: usize,
    pub sampling: PathSampling,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            tau_accept: 0.6,
            duplicate_gate: 0.5,
            walk_nodes: 3,
            query_radius: 5,
            sampling: PathSampling::Exhaustive,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_accept > 0.0 && self.tau_accept <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau_accept must be in (0, 1], got {}",
                self.tau_accept
            )));
        }
        if !(self.duplicate_gate > 0.0 && self.duplicate_gate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate_gate must be positive, got {}",
                self.duplicate_gate
            )));
        }
        self.descriptor_config().validate()?;
        if self.query_radius + 1 < self.walk_nodes {
            return Err(Error::InvalidConfig(format!(
                "query_radius {} cannot hold walks of {} nodes",
                self.query_radius, self.walk_nodes
            )));
        }
        Ok(())
    }

    pub fn descriptor_config(&self) -> DescriptorConfig {
        DescriptorConfig {
            walk_nodes: self.walk_nodes,
            sampling: self.sampling,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Same,
    Distinct,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateResult {
    /// `S^D`, meters.
    pub distance: f64,
    pub decision: GateDecision,
}

pub fn euclidean_gate(a: Point3, b: Point3, gate: f64) -> GateResult {
    let distance = a.distance(&b);
    let decision = if distance < gate {
        GateDecision::Same
    } else {
        GateDecision::Distinct
    };
    GateResult { distance, decision }
}

/// `S^θ`. Two zero vectors (padding against padding) agree perfectly; a zero
/// vector against a real one has no direction to agree with.
pub fn direction_cosine(u: Vec3, v: Vec3) -> f64 {
    match (u.is_zero(), v.is_zero()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (u.dot(&v) / (u.norm_squared() * v.norm_squared()).sqrt()).clamp(-1.0, 1.0),
    }
}

/// `S(M, N)` over two index-aligned vector groups. Empty groups score 0;
/// all-zero groups on both sides score 1, matching [`direction_cosine`].
pub fn descriptor_similarity(m: &[Vec3], n: &[Vec3]) -> Result<f64> {
    if m.len() != n.len() {
        return Err(Error::LengthMismatch {
            left: m.len(),
            right: n.len(),
        });
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let mut dot = 0.0;
    let mut mm = 0.0;
    let mut nn = 0.0;
    for (a, b) in m.iter().zip(n) {
        dot += a.dot(b);
        mm += a.norm_squared();
        nn += b.norm_squared();
    }
    Ok(match (mm == 0.0, nn == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // sqrt of the product keeps S(M, M) exactly 1
        _ => (dot / (mm * nn).sqrt()).clamp(-1.0, 1.0),
    })
}

/// Two walks paired by equal class code.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPair {
    pub query: usize,
    pub db: usize,
    /// Per-edge `S^θ`.
    pub cosines: Vec<f64>,
}

impl PathPair {
    /// Every paired edge faces the same way.
    pub fn same_facing(&self) -> bool {
        self.cosines.iter().all(|c| *c >= 0.0)
    }

    pub fn mean_cosine(&self) -> f64 {
        if self.cosines.is_empty() {
            1.0
        } else {
            self.cosines.iter().sum::<f64>() / self.cosines.len() as f64
        }
    }
}

fn check_compatible(q: &SceneDescriptor, d: &SceneDescriptor) -> Result<()> {
    if q.walk_nodes != d.walk_nodes || q.class_count != d.class_count {
        return Err(Error::DescriptorMismatch {
            query_r: q.walk_nodes,
            query_k: q.class_count,
            db_r: d.walk_nodes,
            db_k: d.class_count,
        });
    }
    Ok(())
}

/// A candidate pairing with its cosines summarized.
#[derive(Clone, Copy, Debug)]
struct Pairing {
    query: usize,
    db: usize,
    same_facing: bool,
    cos_sum: f64,
    edges: usize,
}

impl Pairing {
    fn mean_cosine(&self) -> f64 {
        if self.edges == 0 {
            1.0
        } else {
            self.cos_sum / self.edges as f64
        }
    }
}

/// One-to-one pairing of equal-code walks. Within a code, pairs that keep
/// every edge same-facing go first, then higher mean `S^θ`, then canonical
/// order. Output is sorted by query index.
pub fn match_paths(qd: &SceneDescriptor, dd: &SceneDescriptor) -> Result<Vec<PathPair>> {
    check_compatible(qd, dd)?;
    let mut scratch = Scratch::default();
    let mut chosen = Vec::new();
    pair_walks(&WalkLayout::of(qd), &WalkLayout::of(dd), &mut scratch, &mut chosen);
    Ok(chosen
        .into_iter()
        .map(|p| PathPair {
            query: p.query,
            db: p.db,
            cosines: qd.des_d[p.query]
                .iter()
                .zip(&dd.des_d[p.db])
                .map(|(u, v)| direction_cosine(*u, *v))
                .collect(),
        })
        .collect())
}

#[derive(Default)]
struct Scratch {
    options: Vec<Pairing>,
    keys: Vec<u128>,
    small: Vec<u64>,
}

fn pair_walks(ql: &WalkLayout, dl: &WalkLayout, scratch: &mut Scratch, out: &mut Vec<Pairing>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < ql.groups.len() && j < dl.groups.len() {
        let (a, b) = (ql.groups[i], dl.groups[j]);
        if a.0 < b.0 {
            i += 1;
        } else if b.0 < a.0 {
            j += 1;
        } else {
            pair_group(ql, dl, a.1..a.2, b.1..b.2, scratch, out);
            i += 1;
            j += 1;
        }
    }
    out.sort_unstable_by_key(|p| p.query);
}

/// [`direction_cosine`] from precomputed squared norms.
fn layout_cosine(u: &Vec3, nu: f64, v: &Vec3, nv: f64) -> f64 {
    match (nu < 0.0, nv < 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (u.dot(v) / (nu * nv).sqrt()).clamp(-1.0, 1.0),
    }
}

fn pair_group(
    ql: &WalkLayout,
    dl: &WalkLayout,
    qs: std::ops::Range<usize>,
    ds: std::ops::Range<usize>,
    scratch: &mut Scratch,
    out: &mut Vec<Pairing>,
) {
    let Scratch { options, keys, small } = scratch;
    let stride = ql.stride;
    options.clear();
    for qi in qs.clone() {
        let (qv, qn) = (&ql.vecs[qi * stride..][..stride], &ql.norms[qi * stride..][..stride]);
        for dj in ds.clone() {
            let (dv, dn) = (&dl.vecs[dj * stride..][..stride], &dl.norms[dj * stride..][..stride]);
            let mut p = Pairing {
                query: qi,
                db: dj,
                same_facing: true,
                cos_sum: 0.0,
                edges: stride,
            };
            for e in 0..stride {
                let c = layout_cosine(&qv[e], qn[e], &dv[e], dn[e]);
                p.same_facing &= c >= 0.0;
                p.cos_sum += c;
            }
            options.push(p);
        }
    }
    let width = ds.len();
    if qs.len() == 1 || width == 1 {
        if let Some(best) = options.iter().min_by_key(|p| preference(p, qs.start, ds.start)) {
            out.push(*best);
        }
        return;
    }
    if options.len() <= 256 {
        select_by_scan(options, qs.len(), width, small, out);
    } else {
        select_by_sort(options, qs.len(), width, qs.start, ds.start, keys, out);
    }
}

/// Greedy one-to-one selection over a row-major `rows × width` block:
/// repeated minimum with taken rows and columns masked out. The flat index
/// breaks ties in canonical order, so this equals [`select_by_sort`].
fn select_by_scan(options: &[Pairing], rows: usize, width: usize, small: &mut Vec<u64>, out: &mut Vec<Pairing>) {
    small.clear();
    small.extend(options.iter().map(short_preference));
    for _ in 0..rows.min(width) {
        let (mut best, mut at) = (u64::MAX, 0);
        for (i, k) in small.iter().enumerate() {
            if *k < best {
                best = *k;
                at = i;
            }
        }
        let (qa, db) = (at / width, at % width);
        out.push(options[at]);
        small[qa * width..(qa + 1) * width].fill(u64::MAX);
        for row in 0..rows {
            small[row * width + db] = u64::MAX;
        }
    }
}

fn select_by_sort(
    options: &[Pairing],
    rows: usize,
    width: usize,
    q0: usize,
    d0: usize,
    keys: &mut Vec<u128>,
    out: &mut Vec<Pairing>,
) {
    keys.clear();
    keys.extend(options.iter().map(|p| preference(p, q0, d0)));
    keys.sort_unstable();
    let mut q_used = vec![false; rows];
    let mut d_used = vec![false; width];
    for key in keys.iter() {
        let (qa, db) = ((key >> 31) as u32 as usize, (*key as usize) & 0x7fff_ffff);
        if !q_used[qa] && !d_used[db] {
            q_used[qa] = true;
            d_used[db] = true;
            out.push(options[qa * width + db]);
        }
    }
}

/// Same-facing flag and mean cosine packed so that smaller is preferred.
/// Any `x` in `[-1, 1]` has a clear bit 62, which leaves 63 bits for the
/// order-preserving image of the mean.
fn short_preference(p: &Pairing) -> u64 {
    let mean = p.mean_cosine();
    debug_assert!((-1.0..=1.0).contains(&mean));
    let bits = mean.to_bits();
    let ordered = if bits >> 63 == 1 { !bits } else { bits | 1 << 63 };
    let rank = ordered - (1 << 62);
    ((!p.same_facing as u64) << 63) | ((1u64 << 63) - 1 - rank)
}

/// Packed sort key, smallest first: same-facing, then higher mean cosine,
/// then canonical order.
fn preference(p: &Pairing, q0: usize, d0: usize) -> u128 {
    let bits = p.mean_cosine().to_bits();
    let ordered = if bits >> 63 == 1 { !bits } else { bits | 1 << 63 };
    ((!p.same_facing as u128) << 127)
        | ((!ordered as u128) << 63)
        | (((p.query - q0) as u128) << 31)
        | ((p.db - d0) as u128 & 0x7fff_ffff)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchDiagnostics {
    /// `S^D` when the Euclidean gate was applied to this candidate.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gate_distance: Option<f64>,
    pub gate_applied: bool,
    /// Pairs whose edges all face the same way.
    pub paths_matched: usize,
    /// Pairs found by class code before the direction check.
    pub paths_paired: usize,
    pub paths_total: usize,
    #[serde(serialize_with = "ser_quantized")]
    pub mean_cosine: f64,
    #[serde(serialize_with = "ser_quantized")]
    pub similarity: f64,
}

impl MatchDiagnostics {
    pub fn matched_fraction(&self) -> f64 {
        if self.paths_total == 0 {
            0.0
        } else {
            self.paths_matched as f64 / self.paths_total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeMatch {
    pub query: NodeId,
    pub db: NodeId,
    pub score: f64,
    pub diagnostics: MatchDiagnostics,
}

/// Scores one database candidate against a query descriptor.
pub fn score_candidate(q: &SceneDescriptor, d: &SceneDescriptor) -> Result<NodeMatch> {
    check_compatible(q, d)?;
    let mut scratch = Scratch::default();
    let mut pairs = Vec::new();
    Ok(score_with(
        q,
        &WalkLayout::of(q),
        d,
        &WalkLayout::of(d),
        &mut scratch,
        &mut pairs,
    ))
}

fn score_with(
    q: &SceneDescriptor,
    ql: &WalkLayout,
    d: &SceneDescriptor,
    dl: &WalkLayout,
    scratch: &mut Scratch,
    pairs: &mut Vec<Pairing>,
) -> NodeMatch {
    pair_walks(ql, dl, scratch, pairs);
    let stride = ql.stride;
    let mut matched = 0usize;
    let (mut dot, mut mm, mut nn) = (0.0, 0.0, 0.0);
    let mut cos_sum = 0.0;
    let mut cos_count = 0usize;
    for p in pairs.iter().filter(|p| p.same_facing) {
        matched += 1;
        let qv = &ql.vecs[p.query * stride..][..stride];
        let dv = &dl.vecs[p.db * stride..][..stride];
        for (a, b) in qv.iter().zip(dv) {
            dot += a.dot(b);
            mm += a.norm_squared();
            nn += b.norm_squared();
        }
        cos_sum += p.cos_sum;
        cos_count += p.edges;
    }
    // same value as descriptor_similarity over the concatenated groups
    let similarity = if matched == 0 || q.walk_nodes < 2 {
        0.0
    } else {
        match (mm == 0.0, nn == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => (dot / (mm * nn).sqrt()).clamp(-1.0, 1.0),
        }
    };
    let diagnostics = MatchDiagnostics {
        gate_distance: None,
        gate_applied: false,
        paths_matched: matched,
        paths_paired: pairs.len(),
        paths_total: q.len(),
        mean_cosine: if cos_count == 0 {
            0.0
        } else {
            cos_sum / cos_count as f64
        },
        similarity,
    };
    let score = diagnostics.matched_fraction() * similarity.max(0.0);
    NodeMatch {
        query: q.root,
        db: d.root,
        score,
        diagnostics,
    }
}

fn rank(matches: &mut [NodeMatch]) {
    matches.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.db.cmp(&b.db)));
}

/// Scores every same-class database node, best first (ties by db id).
pub fn match_node(q: &SceneDescriptor, db: &DescriptorIndex) -> Result<Vec<NodeMatch>> {
    if q.walk_nodes != db.walk_nodes() || q.class_count != db.class_count() {
        return Err(Error::DescriptorMismatch {
            query_r: q.walk_nodes,
            query_k: q.class_count,
            db_r: db.walk_nodes(),
            db_k: db.class_count(),
        });
    }
    let mut scratch = Scratch::default();
    let mut pairs = Vec::new();
    let ql = WalkLayout::of(q);
    let mut out: Vec<NodeMatch> = db
        .candidates_with_layout(q.root_class)
        .map(|(d, dl)| score_with(q, &ql, d, dl, &mut scratch, &mut pairs))
        .collect();
    rank(&mut out);
    Ok(out)
}

/// [`match_node`] restricted to candidates that pass the Euclidean gate.
/// `position` yields a candidate's position in the query's frame; candidates
/// without one are skipped.
pub fn match_node_gated<F>(
    q: &SceneDescriptor,
    q_position: Point3,
    db: &DescriptorIndex,
    gate: f64,
    mut position: F,
) -> Result<Vec<NodeMatch>>
where
    F: FnMut(NodeId) -> Option<Point3>,
{
    let mut out = Vec::new();
    for d in db.candidates(q.root_class) {
        let Some(p) = position(d.root) else { continue };
        let g = euclidean_gate(q_position, p, gate);
        if g.decision == GateDecision::Distinct {
            continue;
        }
        let mut m = score_candidate(q, d)?;
        m.diagnostics.gate_applied = true;
        m.diagnostics.gate_distance = Some(g.distance);
        out.push(m);
    }
    rank(&mut out);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    /// Top-1 match of each query node that had any candidate, best first.
    pub matches: Vec<NodeMatch>,
    pub accepted: bool,
    pub scene_score: f64,
    /// Query nodes that were matched.
    pub query_nodes: Vec<NodeId>,
}

impl LocalizationResult {
    pub fn rejected(query_nodes: Vec<NodeId>) -> Self {
        Self {
            matches: Vec::new(),
            accepted: false,
            scene_score: 0.0,
            query_nodes,
        }
    }

    pub fn top(&self) -> Option<&NodeMatch> {
        self.matches.first()
    }

    pub fn correspondence(&self, query: NodeId) -> Option<NodeId> {
        self.matches.iter().find(|m| m.query == query).map(|m| m.db)
    }

    pub fn to_report(&self, query_session: &str) -> LocalizationReport {
        LocalizationReport {
            accepted: self.accepted,
            matches: self
                .matches
                .iter()
                .map(|m| MatchRecord {
                    db: m.db.0,
                    diagnostics: m.diagnostics.clone(),
                    q: m.query.0,
                    score: m.score,
                })
                .collect(),
            query_session: query_session.to_string(),
            scene_score: self.scene_score,
        }
    }
}

/// Serialized form of a [`LocalizationResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub accepted: bool,
    pub matches: Vec<MatchRecord>,
    pub query_session: String,
    #[serde(serialize_with = "ser_quantized")]
    pub scene_score: f64,
}

impl LocalizationReport {
    /// Inverse of [`LocalizationResult::to_report`], up to the rounding of
    /// written scores.
    pub fn to_result(&self) -> LocalizationResult {
        let matches: Vec<NodeMatch> = self
            .matches
            .iter()
            .map(|m| NodeMatch {
                query: NodeId(m.q),
                db: NodeId(m.db),
                score: m.score,
                diagnostics: m.diagnostics.clone(),
            })
            .collect();
        LocalizationResult {
            query_nodes: matches.iter().map(|m| m.query).collect(),
            matches,
            accepted: self.accepted,
            scene_score: self.scene_score,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub db: u32,
    pub diagnostics: MatchDiagnostics,
    pub q: u32,
    #[serde(serialize_with = "ser_quantized")]
    pub score: f64,
}

/// Weighted mean of top-1 scores, weights being each node's matched-path
/// fraction.
fn scene_score(matches: &[NodeMatch]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for m in matches {
        let w = m.diagnostics.matched_fraction();
        num += w * m.score;
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Matches the given query roots against a prebuilt database index.
/// Root descriptors are extracted from `query`, which should already be the
/// neighborhood the query is allowed to see.
pub fn localize_roots(
    query: &SemanticGraph,
    roots: &[NodeId],
    db: &DescriptorIndex,
    cfg: &MatchConfig,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    if roots.is_empty() {
        return Err(Error::Empty("query"));
    }
    let dcfg = cfg.descriptor_config();
    let descs = roots
        .iter()
        .map(|&root| extract_descriptor(query, root, &dcfg))
        .collect::<Result<Vec<_>>>()?;
    localize_descriptors(&descs, db, cfg)
}

/// The localization decision over already extracted query descriptors.
pub fn localize_descriptors(
    descs: &[SceneDescriptor],
    db: &DescriptorIndex,
    cfg: &MatchConfig,
) -> Result<LocalizationResult> {
    if descs.is_empty() {
        return Err(Error::Empty("query"));
    }
    let roots: Vec<NodeId> = descs.iter().map(|d| d.root).collect();
    if db.is_empty() {
        return Ok(LocalizationResult::rejected(roots));
    }
    let mut matches = Vec::new();
    for qd in descs {
        if let Some(best) = match_node(qd, db)?.into_iter().next() {
            matches.push(best);
        }
    }
    matches.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.query.cmp(&b.query)));
    let scene_score = scene_score(&matches);
    Ok(LocalizationResult {
        accepted: scene_score >= cfg.tau_accept,
        matches,
        scene_score,
        query_nodes: roots,
    })
}

/// Matches every node of `query` against `db`.
pub fn localize(query: &SemanticGraph, db: &SemanticGraph, cfg: &MatchConfig) -> Result<LocalizationResult> {
    if query.is_empty() {
        return Err(Error::Empty("query"));
    }
    cfg.validate()?;
    let index = DescriptorIndex::build(db, cfg.descriptor_config())?;
    let roots: Vec<NodeId> = query.node_ids().collect();
    localize_roots(query, &roots, &index, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::tests::random_graph;
    use crate::graph::Attrs;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn desc(g: &SemanticGraph, id: u32) -> SceneDescriptor {
        extract_descriptor(g, NodeId(id), &DescriptorConfig::default()).unwrap()
    }

    #[test]
    fn euclidean_gate_examples() {
        let same = euclidean_gate(Vec3::ZERO, Vec3::ZERO, 0.5);
        assert_eq!(same.distance, 0.0);
        assert_eq!(same.decision, GateDecision::Same);
        let far = euclidean_gate(Vec3::ZERO, v(3.0, 4.0, 0.0), 0.5);
        assert_eq!(far.distance, 5.0);
        assert_eq!(far.decision, GateDecision::Distinct);
        assert_eq!(
            euclidean_gate(Vec3::ZERO, v(0.3, 0.0, 0.0), 0.5).decision,
            GateDecision::Same
        );
    }

    #[test]
    fn direction_cosine_examples() {
        assert_eq!(direction_cosine(v(1.0, 2.0, 3.0), v(1.0, 2.0, 3.0)), 1.0);
        assert_eq!(direction_cosine(v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)), 0.0);
        let c = direction_cosine(v(1.0, 1.0, 0.0), v(1.0, 0.0, 0.0));
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(direction_cosine(Vec3::ZERO, Vec3::ZERO), 1.0);
        assert_eq!(direction_cosine(Vec3::ZERO, v(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(direction_cosine(v(-2.0, 0.0, 0.0), v(1.0, 0.0, 0.0)), -1.0);
    }

    #[test]
    fn descriptor_similarity_examples() {
        let m = [v(1.0, 2.0, 3.0), v(-1.0, 0.5, 0.0)];
        assert_eq!(descriptor_similarity(&m, &m).unwrap(), 1.0);
        let neg: Vec<Vec3> = m.iter().map(|x| -*x).collect();
        assert_eq!(descriptor_similarity(&m, &neg).unwrap(), -1.0);
        let s = descriptor_similarity(&[v(1.0, 0.0, 0.0)], &[v(1.0, 1.0, 0.0)]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(descriptor_similarity(&[], &[]).unwrap(), 0.0);
        assert!(matches!(
            descriptor_similarity(&m, &m[..1]),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
        assert_eq!(descriptor_similarity(&[Vec3::ZERO], &[Vec3::ZERO]).unwrap(), 1.0);
    }

    #[test]
    fn match_paths_identity_and_disjoint() {
        let g = random_graph(9, 0.4, 3, 11);
        for id in g.node_ids() {
            let d = desc(&g, id.0);
            let pairs = match_paths(&d, &d).unwrap();
            assert_eq!(pairs.len(), d.len());
            assert!(pairs.iter().enumerate().all(|(i, p)| p.query == i && p.db == i));
        }

        let mut a = SemanticGraph::new(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
        let mut b = a.clone();
        let a0 = a.add_node(0, Vec3::ZERO, Attrs::new()).unwrap();
        let a1 = a.add_node(1, Vec3::ZERO, Attrs::new()).unwrap();
        a.add_edge(a0, a1, v(1.0, 0.0, 0.0), Attrs::new()).unwrap();
        let b0 = b.add_node(2, Vec3::ZERO, Attrs::new()).unwrap();
        let b1 = b.add_node(3, Vec3::ZERO, Attrs::new()).unwrap();
        b.add_edge(b0, b1, v(1.0, 0.0, 0.0), Attrs::new()).unwrap();
        assert!(match_paths(&desc(&a, 0), &desc(&b, 0)).unwrap().is_empty());
    }

    #[test]
    fn match_paths_rejects_mismatched_parameters() {
        let g = random_graph(5, 0.5, 3, 1);
        let d3 = desc(&g, 0);
        let d4 = extract_descriptor(&g, NodeId(0), &DescriptorConfig::with_walk_nodes(4)).unwrap();
        assert!(matches!(match_paths(&d3, &d4), Err(Error::DescriptorMismatch { .. })));
    }

    /// Query: root(0) with two class-1 neighbors pointing +x and +y.
    /// Database: root(0) with one class-1 neighbor pointing mostly +y.
    fn two_vs_one() -> (SemanticGraph, SemanticGraph) {
        let classes = vec!["a".to_string(), "b".to_string()];
        let mut q = SemanticGraph::new(classes.clone());
        let r = q.add_node(0, Vec3::ZERO, Attrs::new()).unwrap();
        let n1 = q.add_node(1, Vec3::ZERO, Attrs::new()).unwrap();
        let n2 = q.add_node(1, Vec3::ZERO, Attrs::new()).unwrap();
        q.add_edge(r, n1, v(2.0, 0.0, 0.0), Attrs::new()).unwrap();
        q.add_edge(r, n2, v(0.0, 2.0, 0.0), Attrs::new()).unwrap();
        let mut d = SemanticGraph::new(classes);
        let r = d.add_node(0, Vec3::ZERO, Attrs::new()).unwrap();
        let n1 = d.add_node(1, Vec3::ZERO, Attrs::new()).unwrap();
        d.add_edge(r, n1, v(0.2, 2.0, 0.0), Attrs::new()).unwrap();
        (q, d)
    }

    #[test]
    fn match_paths_prefers_better_direction() {
        let (q, d) = two_vs_one();
        let qd = desc(&q, 0);
        let dd = desc(&d, 0);
        let pairs = match_paths(&qd, &dd).unwrap();
        assert_eq!(pairs.len(), 1);
        // brute force over the two admissible assignments
        let best = (0..qd.len())
            .filter(|&i| qd.des_s[i] == dd.des_s[0])
            .max_by(|&i, &j| {
                let ci = direction_cosine(qd.des_d[i][0], dd.des_d[0][0]);
                let cj = direction_cosine(qd.des_d[j][0], dd.des_d[0][0]);
                ci.total_cmp(&cj)
            })
            .unwrap();
        assert_eq!(pairs[0].query, best);
        assert_eq!(qd.paths[best][1], NodeId(2), "the +y neighbor wins");
    }

    #[test]
    fn counter_oriented_pairs_score_zero() {
        let classes = vec!["a".to_string(), "b".to_string()];
        let mut q = SemanticGraph::new(classes.clone());
        let r = q.add_node(0, Vec3::ZERO, Attrs::new()).unwrap();
        let n = q.add_node(1, Vec3::ZERO, Attrs::new()).unwrap();
        q.add_edge(r, n, v(1.0, 0.0, 0.0), Attrs::new()).unwrap();
        let mut d = q.clone();
        d.add_edge(NodeId(0), NodeId(1), v(-1.0, 0.1, 0.0), Attrs::new())
            .unwrap();
        let m = score_candidate(&desc(&q, 0), &desc(&d, 0)).unwrap();
        assert_eq!(m.diagnostics.paths_paired, 1);
        assert_eq!(m.diagnostics.paths_matched, 0);
        assert_eq!(m.score, 0.0);
    }

    #[test]
    fn self_match_ranks_first_with_score_one() {
        for seed in 0..20 {
            let g = random_graph(12, 0.3, 3, seed);
            let index = DescriptorIndex::build(&g, DescriptorConfig::default()).unwrap();
            for id in g.node_ids() {
                let ranked = match_node(index.get(id).unwrap(), &index).unwrap();
                assert_eq!(ranked[0].db, id, "seed {seed} node {id}");
                assert_eq!(ranked[0].score, 1.0);
            }
        }
    }

    #[test]
    fn absent_class_gives_empty_list() {
        let mut g = SemanticGraph::new(vec!["a".into(), "b".into()]);
        g.add_node(0, Vec3::ZERO, Attrs::new()).unwrap();
        let index = DescriptorIndex::build(&g, DescriptorConfig::default()).unwrap();
        let mut q = SemanticGraph::new(vec!["a".into(), "b".into()]);
        q.add_node(1, Vec3::ZERO, Attrs::new()).unwrap();
        assert!(match_node(&desc(&q, 0), &index).unwrap().is_empty());
    }

    /// 10 landmarks, every pair within 6 m linked; the query re-observes the
    /// world with center noise and one dropped landmark.
    fn world_and_reobservation(seed: u64) -> (SemanticGraph, SemanticGraph, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        let pts: Vec<(u32, Vec3)> = (0..10)
            .map(|_| {
                (
                    rng.random_range(0..3),
                    v(
                        rng.random_range(0.0..12.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(0.0..2.5),
                    ),
                )
            })
            .collect();
        let build = |keep: &[usize], noise: &mut dyn FnMut() -> Vec3| {
            let mut g = SemanticGraph::new(classes.clone());
            let pos: Vec<Vec3> = keep.iter().map(|&i| pts[i].1 + noise()).collect();
            for &i in keep {
                g.add_node(pts[i].0, pts[i].1, Attrs::new()).unwrap();
            }
            for a in 0..keep.len() {
                for b in (a + 1)..keep.len() {
                    if pts[keep[a]].1.distance(&pts[keep[b]].1) < 6.0 {
                        g.add_edge(NodeId(a as u32), NodeId(b as u32), pos[b] - pos[a], Attrs::new())
                            .unwrap();
                    }
                }
            }
            g
        };
        let all: Vec<usize> = (0..10).collect();
        let db = build(&all, &mut || Vec3::ZERO);
        let dropped = rng.random_range(0..10);
        let keep: Vec<usize> = all.iter().copied().filter(|&i| i != dropped).collect();
        let mut nrng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let mut noise = || {
            v(
                nrng.random_range(-0.05..0.05),
                nrng.random_range(-0.05..0.05),
                nrng.random_range(-0.05..0.05),
            )
        };
        let q = build(&keep, &mut noise);
        (db, q, keep.iter().map(|&i| i as u32).collect())
    }

    #[test]
    fn perturbed_reobservation_ranks_true_node_first() {
        let mut checked = 0;
        for seed in 0..10 {
            let (db, q, truth) = world_and_reobservation(seed);
            let index = DescriptorIndex::build(&db, DescriptorConfig::default()).unwrap();
            for qid in q.node_ids() {
                let qd = desc(&q, qid.0);
                if qd.paths.iter().all(|p| p.len() < 3) {
                    continue; // nothing to describe
                }
                let ranked = match_node(&qd, &index).unwrap();
                // brute-force oracle: score every db node, class filter applied by hand
                let mut oracle: Vec<(f64, u32)> = db
                    .node_ids()
                    .filter(|id| db.node(*id).unwrap().class_id == qd.root_class)
                    .map(|id| (score_candidate(&qd, index.get(id).unwrap()).unwrap().score, id.0))
                    .collect();
                oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                assert_eq!(
                    ranked.iter().map(|m| m.db.0).collect::<Vec<_>>(),
                    oracle.iter().map(|o| o.1).collect::<Vec<_>>()
                );
                assert_eq!(ranked[0].db.0, truth[qid.0 as usize], "seed {seed} query {qid}");
                assert!(ranked[0].score > 0.6, "seed {seed} score {}", ranked[0].score);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    /// Score built the long way: explicit pairs, concatenated groups.
    fn reference_score(q: &SceneDescriptor, d: &SceneDescriptor) -> (f64, usize, usize) {
        let pairs = match_paths(q, d).unwrap();
        let kept: Vec<&PathPair> = pairs.iter().filter(|p| p.same_facing()).collect();
        let m: Vec<Vec3> = kept.iter().flat_map(|p| q.des_d[p.query].clone()).collect();
        let n: Vec<Vec3> = kept.iter().flat_map(|p| d.des_d[p.db].clone()).collect();
        let s = descriptor_similarity(&m, &n).unwrap();
        let frac = if q.is_empty() {
            0.0
        } else {
            kept.len() as f64 / q.len() as f64
        };
        (frac * s.max(0.0), kept.len(), pairs.len())
    }

    #[test]
    fn scoring_agrees_with_reference_composition() {
        for seed in 0..6 {
            let (db, q, _) = world_and_reobservation(seed);
            let index = DescriptorIndex::build(&db, DescriptorConfig::default()).unwrap();
            for qid in q.node_ids() {
                let qd = desc(&q, qid.0);
                for d in index.iter() {
                    let got = score_candidate(&qd, d).unwrap();
                    let (score, kept, paired) = reference_score(&qd, d);
                    assert_eq!(got.score, score);
                    assert_eq!(got.diagnostics.paths_matched, kept);
                    assert_eq!(got.diagnostics.paths_paired, paired);
                }
            }
        }
    }

    #[test]
    fn greedy_selection_strategies_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let rows = rng.random_range(1..9);
            let width = rng.random_range(1..9);
            // coarse cosines so that ties are common
            let options: Vec<Pairing> = (0..rows * width)
                .map(|i| {
                    let c = rng.random_range(-4..=4) as f64 / 4.0;
                    Pairing {
                        query: 10 + i / width,
                        db: 20 + i % width,
                        same_facing: c >= 0.0 || rng.random_bool(0.2),
                        cos_sum: 2.0 * c,
                        edges: 2,
                    }
                })
                .collect();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            select_by_scan(&options, rows, width, &mut Vec::new(), &mut a);
            select_by_sort(&options, rows, width, 10, 20, &mut Vec::new(), &mut b);
            let key = |v: &[Pairing]| v.iter().map(|p| (p.query, p.db)).collect::<Vec<_>>();
            assert_eq!(key(&a), key(&b));
        }
    }

    #[test]
    fn gated_matching_skips_far_candidates() {
        let g = random_graph(10, 0.4, 2, 5);
        let index = DescriptorIndex::build(&g, DescriptorConfig::default()).unwrap();
        let q = index.get(NodeId(3)).unwrap();
        let here = g.node(NodeId(3)).unwrap().center;
        let gated = match_node_gated(q, here, &index, 0.5, |id| g.node(id).map(|n| n.center)).unwrap();
        assert_eq!(gated[0].db, NodeId(3));
        assert!(gated.iter().all(|m| m.diagnostics.gate_applied));
        assert!(gated.iter().all(|m| m.diagnostics.gate_distance.unwrap() < 0.5));
    }

    #[test]
    fn localize_self_query_accepts() {
        let g = random_graph(12, 0.3, 3, 9);
        let r = localize(&g, &g, &MatchConfig::default()).unwrap();
        assert!(r.accepted);
        assert_eq!(r.scene_score, 1.0);
        for id in g.node_ids() {
            assert_eq!(r.correspondence(id), Some(id));
        }
    }

    #[test]
    fn localize_disjoint_world_rejects() {
        let q = random_graph(8, 0.4, 4, 1);
        // same class table, but the database only uses classes the query lacks
        let mut db = SemanticGraph::new(q.class_table().to_vec());
        let used: std::collections::BTreeSet<u32> = q.nodes().map(|n| n.class_id).collect();
        let spare: Vec<u32> = (0..4).filter(|c| !used.contains(c)).collect();
        if !spare.is_empty() {
            for i in 0..6 {
                db.add_node(spare[i % spare.len()], Vec3::ZERO, Attrs::new()).unwrap();
            }
        }
        let r = localize(&q, &db, &MatchConfig::default()).unwrap();
        assert!(!r.accepted);
        assert!(r.scene_score.abs() < 1e-12);

        let empty = SemanticGraph::new(q.class_table().to_vec());
        let r = localize(&q, &empty, &MatchConfig::default()).unwrap();
        assert!(!r.accepted);
        assert_eq!(r.scene_score, 0.0);
        assert!(matches!(
            localize(&empty, &q, &MatchConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::default().validate().is_ok());
        assert!(MatchConfig {
            tau_accept: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MatchConfig {
            tau_accept: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MatchConfig {
            query_radius: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MatchConfig {
            duplicate_gate: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn report_serializes_in_key_order() {
        let g = random_graph(6, 0.5, 2, 2);
        let r = localize(&g, &g, &MatchConfig::default()).unwrap();
        let text = serde_json::to_string(&r.to_report("q1")).unwrap();
        assert!(text.starts_with(r#"{"accepted":true,"matches":[{"db":"#));
        assert!(text.ends_with(r#""query_session":"q1","scene_score":1.0}"#));
    }

    fn rotate(u: Vec3, deg: f64) -> Vec3 {
        let (s, c) = deg.to_radians().sin_cos();
        v(c * u.x - s * u.y, s * u.x + c * u.y, u.z)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn similarity_is_symmetric(seed in 0u64..u64::MAX, len in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = || v(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let m: Vec<Vec3> = (0..len).map(|_| g()).collect();
            let n: Vec<Vec3> = (0..len).map(|_| g()).collect();
            let a = descriptor_similarity(&m, &n).unwrap();
            let b = descriptor_similarity(&n, &m).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }

        #[test]
        fn co_rotation_leaves_scores_unchanged(seed in 0u64..u64::MAX, angle in -180.0..180.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = || v(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0));
            let m: Vec<Vec3> = (0..6).map(|_| g()).collect();
            let n: Vec<Vec3> = (0..6).map(|_| g()).collect();
            let mr: Vec<Vec3> = m.iter().map(|x| rotate(*x, angle)).collect();
            let nr: Vec<Vec3> = n.iter().map(|x| rotate(*x, angle)).collect();
            prop_assert!((descriptor_similarity(&m, &n).unwrap() - descriptor_similarity(&mr, &nr).unwrap()).abs() < 1e-9);
            for (a, b) in m.iter().zip(&n) {
                prop_assert!((direction_cosine(*a, *b) - direction_cosine(rotate(*a, angle), rotate(*b, angle))).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn co_rotated_graphs_keep_node_scores() {
        for seed in 0..10u64 {
            let g = random_graph(10, 0.35, 3, seed);
            let q = random_graph(10, 0.35, 3, seed + 100);
            let rot = |src: &SemanticGraph| {
                let mut h = SemanticGraph::new(src.class_table().to_vec());
                for n in src.nodes() {
                    h.insert_node(n.clone()).unwrap();
                }
                for e in src.edges() {
                    h.add_edge(e.a, e.b, rotate(e.dvec, 37.0), Attrs::new()).unwrap();
                }
                h
            };
            let (gr, qr) = (rot(&g), rot(&q));
            for qid in q.node_ids() {
                for did in g.node_ids() {
                    let (a, b) = (desc(&q, qid.0), desc(&g, did.0));
                    if a.root_class != b.root_class {
                        continue;
                    }
                    let s1 = score_candidate(&a, &b).unwrap();
                    let s2 = score_candidate(&desc(&qr, qid.0), &desc(&gr, did.0)).unwrap();
                    // stored vectors are quantized, so compare at storage precision
                    assert!((s1.diagnostics.similarity - s2.diagnostics.similarity).abs() < 1e-7);
                }
            }
        }
    }
}
