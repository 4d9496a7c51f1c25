//! End-to-end trials: simulate a map session and a query session over one
//! world, map both, localize snapshots of the query session's short-term
//! graph against the map, and score the result.
//!
//! A query is taken every `query_stride` frames. Its roots are the STG
//! members at that frame. The descriptors are built on the `query_radius`
//! ball around them in the finished query-session graph.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::descriptor::{extract_descriptor, DescriptorIndex};
use crate::error::{Error, Result};
use crate::eval::{
    auc, node_landmarks, pr_curve, score_correspondences, success_rate, LabeledScore, PrPoint, QueryOutcome,
    TimingRecorder, TimingReport,
};
use crate::graph::{NodeId, SemanticGraph};
use crate::mapping::{MapOutcome, Mapper, MappingConfig};
use crate::matching::{localize_descriptors, LocalizationReport, LocalizationResult, MatchConfig};
use crate::simulator::{generate_session, generate_world, static_classes, Session, SessionSpec, World, WorldSpec};
use crate::stream::{write_stream, DetectionStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub world: WorldSpec,
    pub map_session: SessionSpec,
    pub query_session: SessionSpec,
    pub mapping: MappingConfig,
    pub matching: MatchConfig,
    /// Frames between query snapshots.
    pub query_stride: usize,
}

impl TrialConfig {
    /// Noiseless 100-landmark corridor; both sessions drive the same route.
    pub fn corridor(seed: u64) -> Self {
        let mut mapping = MappingConfig::default();
        mapping.association.static_class_allowlist = Some(static_classes());
        mapping.min_support = 3;
        Self {
            world: WorldSpec {
                seed,
                ..Default::default()
            },
            map_session: SessionSpec {
                name: "map".into(),
                seed: seed.wrapping_mul(2).wrapping_add(1),
                ..Default::default()
            },
            query_session: SessionSpec {
                name: "query".into(),
                seed: seed.wrapping_mul(2).wrapping_add(2),
                ..Default::default()
            },
            mapping,
            matching: MatchConfig::default(),
            query_stride: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.mapping.validate()?;
        self.matching.validate()?;
        if self.query_stride == 0 {
            return Err(Error::InvalidConfig("query_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// STG members at one frame of the query session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub frame: usize,
    pub roots: Vec<NodeId>,
}

/// Maps a stream, recording the STG every `stride` frames.
pub fn map_with_snapshots(
    stream: &DetectionStream,
    cfg: &MappingConfig,
    stride: usize,
) -> Result<(MapOutcome, Vec<Snapshot>)> {
    let mut mapper = Mapper::new(stream.header.classes.clone(), cfg.clone())?;
    mapper.set_extrinsics(stream.header.extrinsics.clone());
    let mut snapshots = Vec::new();
    for (i, f) in stream.frames.iter().enumerate() {
        mapper.process_frame(f)?;
        if (i + 1) % stride == 0 {
            let roots: Vec<NodeId> = mapper.stg_map_nodes().members().collect();
            if !roots.is_empty() {
                snapshots.push(Snapshot { frame: i, roots });
            }
        }
    }
    Ok((mapper.finish()?, snapshots))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRun {
    pub snapshot: Snapshot,
    pub result: LocalizationResult,
}

/// Localizes every snapshot against the database index.
pub fn run_queries(
    query_graph: &SemanticGraph,
    snapshots: &[Snapshot],
    db: &DescriptorIndex,
    cfg: &MatchConfig,
    timing: &mut TimingRecorder,
) -> Result<Vec<QueryRun>> {
    let dcfg = cfg.descriptor_config();
    let mut runs = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let start = Instant::now();
        let ball = query_graph.multi_ball(&s.roots, cfg.query_radius)?;
        let sub = query_graph.induced_subgraph(ball)?;
        let descs = s
            .roots
            .iter()
            .map(|&r| extract_descriptor(&sub, r, &dcfg))
            .collect::<Result<Vec<_>>>()?;
        let extracted = Instant::now();
        let result = localize_descriptors(&descs, db, cfg)?;
        let done = Instant::now();
        timing.descriptor.push(extracted - start);
        timing.matching.push(done - extracted);
        timing.total.push(done - start);
        runs.push(QueryRun {
            snapshot: s.clone(),
            result,
        });
    }
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub labels: Vec<LabeledScore>,
    pub curve: Vec<PrPoint>,
    pub auc: f64,
    pub outcomes: Vec<QueryOutcome>,
    pub success_rate: f64,
}

pub fn evaluate(
    runs: &[QueryRun],
    query_landmarks: &BTreeMap<NodeId, u32>,
    db_landmarks: &BTreeMap<NodeId, u32>,
) -> Result<Evaluation> {
    let mut labels = Vec::new();
    let mut outcomes = Vec::with_capacity(runs.len());
    for r in runs {
        labels.extend(score_correspondences(&r.result.matches, query_landmarks, db_landmarks)?);
        outcomes.push(QueryOutcome::judge(&r.result, query_landmarks, db_landmarks));
    }
    let curve = pr_curve(&labels)?;
    Ok(Evaluation {
        auc: auc(&curve)?,
        success_rate: success_rate(&outcomes)?,
        labels,
        curve,
        outcomes,
    })
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub world: World,
    pub map_session: Session,
    pub query_session: Session,
    pub map: MapOutcome,
    pub query_map: MapOutcome,
    pub runs: Vec<QueryRun>,
    pub evaluation: Evaluation,
    pub timing: TimingReport,
    /// Canonical map file contents.
    pub map_bytes: Vec<u8>,
}

impl TrialOutput {
    pub fn storage_bytes(&self) -> u64 {
        self.map_bytes.len() as u64
    }

    pub fn report(&self) -> SessionReport {
        let mut report = session_report(&self.query_session.stream.header.session, &self.runs);
        for (q, o) in report.queries.iter_mut().zip(&self.evaluation.outcomes) {
            q.outcome = Some(*o);
        }
        report.labels = Some(self.evaluation.labels.clone());
        report
    }

    /// Deterministic localization report: one entry per query plus the
    /// labeled scores.
    pub fn report_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.report()).expect("report serializes")
    }
}

/// One localization query as written to a report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<QueryOutcome>,
    pub result: LocalizationReport,
    pub roots: Vec<u32>,
}

/// Report file of a localization session. `labels` and per-query outcomes
/// are present once ground truth has been applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<LabeledScore>>,
    pub queries: Vec<QueryRecord>,
    pub query_session: String,
}

pub fn session_report(query_session: &str, runs: &[QueryRun]) -> SessionReport {
    SessionReport {
        labels: None,
        queries: runs
            .iter()
            .map(|r| QueryRecord {
                frame: r.snapshot.frame,
                outcome: None,
                result: r.result.to_report(query_session),
                roots: r.snapshot.roots.iter().map(|n| n.0).collect(),
            })
            .collect(),
        query_session: query_session.to_string(),
    }
}

/// Rebuilds query runs from a report, with scores as written.
pub fn runs_from_report(report: &SessionReport) -> Vec<QueryRun> {
    report
        .queries
        .iter()
        .map(|q| QueryRun {
            snapshot: Snapshot {
                frame: q.frame,
                roots: q.roots.iter().map(|n| NodeId(*n)).collect(),
            },
            result: q.result.to_result(),
        })
        .collect()
}

/// Maps a query stream and localizes its STG snapshots against `db`.
pub fn localize_stream(
    stream: &DetectionStream,
    db: &DescriptorIndex,
    mapping: &MappingConfig,
    matching: &MatchConfig,
    stride: usize,
) -> Result<(MapOutcome, Vec<QueryRun>, TimingReport)> {
    if stride == 0 {
        return Err(Error::InvalidConfig("query stride must be at least 1".into()));
    }
    let (outcome, snapshots) = map_with_snapshots(stream, mapping, stride)?;
    let mut timing = TimingRecorder::default();
    let runs = run_queries(&outcome.graph, &snapshots, db, matching, &mut timing)?;
    Ok((outcome, runs, timing.report()))
}

fn simulate_and_map(
    world: &World,
    spec: &SessionSpec,
    mapping: &MappingConfig,
    stride: usize,
) -> Result<(Session, MapOutcome, Vec<Snapshot>)> {
    let session = generate_session(world, spec)?;
    let (outcome, snaps) = map_with_snapshots(&session.stream, mapping, stride)?;
    Ok((session, outcome, snaps))
}

/// Runs one trial. With `jobs > 1` the two sessions are simulated and
/// mapped on separate threads; results do not depend on `jobs`.
pub fn run_trial(cfg: &TrialConfig, jobs: usize) -> Result<TrialOutput> {
    cfg.validate()?;
    let world = generate_world(&cfg.world)?;
    let (map_side, query_side) = if jobs > 1 {
        std::thread::scope(|s| {
            let a = s.spawn(|| simulate_and_map(&world, &cfg.map_session, &cfg.mapping, cfg.query_stride));
            let b = s.spawn(|| simulate_and_map(&world, &cfg.query_session, &cfg.mapping, cfg.query_stride));
            (a.join(), b.join())
        })
    } else {
        (
            Ok(simulate_and_map(
                &world,
                &cfg.map_session,
                &cfg.mapping,
                cfg.query_stride,
            )),
            Ok(simulate_and_map(
                &world,
                &cfg.query_session,
                &cfg.mapping,
                cfg.query_stride,
            )),
        )
    };
    let join = |r: std::thread::Result<Result<_>>| r.map_err(|_| Error::Invariant("worker thread panicked".into()))?;
    let (map_session, map, _) = join(map_side)?;
    let (query_session, query_map, snapshots) = join(query_side)?;

    let index = DescriptorIndex::build(&map.graph, cfg.matching.descriptor_config())?;
    let mut timing = TimingRecorder::default();
    let runs = run_queries(&query_map.graph, &snapshots, &index, &cfg.matching, &mut timing)?;
    let db_landmarks = node_landmarks(&map.associations, &map_session.truth);
    let query_landmarks = node_landmarks(&query_map.associations, &query_session.truth);
    let evaluation = evaluate(&runs, &query_landmarks, &db_landmarks)?;
    let map_bytes = map.graph.to_canonical_json();
    Ok(TrialOutput {
        world,
        map_session,
        query_session,
        map,
        query_map,
        runs,
        evaluation,
        timing: timing.report(),
        map_bytes,
    })
}

/// Raw size of a stream, for comparison against the map.
pub fn stream_bytes(stream: &DetectionStream) -> u64 {
    write_stream(stream).len() as u64
}
