//! Object-level topological semantic mapping and localization.
//!
//! The crate turns streams of object detections into a robot-centric
//! semantic topology graph (objects as nodes, relative geometry as edges),
//! keeps it in a three-tier memory (short-term, working and long-term
//! graphs), and localizes new observations against a stored map by
//! matching class-path / direction-vector descriptors built from walks
//! through the graph.
//!
//! Module map:
//!
//! - [`geometry`]: camera, body and magnetic-frame transforms and landmark
//!   propagation between frames.
//! - [`graph`]: attributed graph types, tier containers and the canonical
//!   map file format.
//! - [`stream`]: the JSONL detection stream format.
//! - [`mapping`]: per-frame association, edge creation and the hierarchical
//!   memory update.
//! - [`descriptor`]: scene-graph descriptors rooted at a node.
//! - [`matching`]: multi-constraint descriptor matching and the localization
//!   decision.
//! - [`simulator`]: deterministic synthetic worlds and detection streams.
//! - [`eval`]: PR curves, AUC, success rate, storage and timing.
//! - [`pipeline`]: end-to-end map/query trials used by the CLI and the
//!   acceptance suite.

pub mod descriptor;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod json;
pub mod mapping;
pub mod matching;
pub mod pipeline;
pub mod simulator;
pub mod stream;

pub use descriptor::{DescriptorConfig, DescriptorIndex, PathSampling, SceneDescriptor, WalkPath};
pub use error::{Error, Result};
pub use geometry::{Extrinsics, Point3, Vec3, YawDeg};
pub use graph::{ClassId, LandmarkNode, NodeId, RelativeEdge, SemanticGraph, ShortTermGraph};
pub use mapping::{AssociationConfig, DetectionFrame, Mapper, ObjectObservation};
pub use matching::{LocalizationResult, MatchConfig, NodeMatch};
