use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use oltsm_core::mapping::MappingConfig;
use oltsm_core::matching::MatchConfig;
use oltsm_core::simulator::{PerturbationSpec, Template, TrajectorySpec, WorldSpec};

#[derive(Debug, Parser)]
#[command(
    name = "oltsm",
    version,
    about = "Object-level topological semantic mapping and localization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world and one detection session over it.
    Simulate(SimulateArgs),
    /// Build a map from a detection stream.
    Map(MapArgs),
    /// Localize a query stream against a map.
    Localize(LocalizeArgs),
    /// Score a localization report against ground truth.
    Eval(EvalArgs),
    /// Simulate, map, localize and evaluate in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Session seed.
    #[arg(long, env = "OLTSM_SEED")]
    pub seed: u64,
    /// World seed; defaults to the session seed.
    #[arg(long)]
    pub world_seed: Option<u64>,
    /// Session name written to the stream header.
    #[arg(long, default_value = "session")]
    pub name: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub world: WorldKnobs,
    #[command(flatten)]
    pub trajectory: TrajectoryKnobs,
    #[command(flatten)]
    pub perturbation: PerturbationKnobs,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Detection stream (JSONL).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Map file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the observation-to-node associations here.
    #[arg(long)]
    pub associations: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub mapping: MappingKnobs,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Map file built by `map`.
    #[arg(long)]
    pub map: PathBuf,
    /// Query detection stream (JSONL).
    #[arg(long)]
    pub query: PathBuf,
    /// Report file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Frames between query snapshots.
    #[arg(long, default_value_t = 20)]
    pub stride: usize,
    /// Also write the query session's own map here.
    #[arg(long)]
    pub query_map: Option<PathBuf>,
    /// Also write the query session's associations here.
    #[arg(long)]
    pub query_associations: Option<PathBuf>,
    /// Also write per-stage timing here.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub mapping: MappingKnobs,
    #[command(flatten)]
    pub matching: MatchKnobs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Report written by `localize` or `pipeline`.
    #[arg(long)]
    pub report: PathBuf,
    /// Map file the report was localized against.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub map_truth: PathBuf,
    #[arg(long)]
    pub map_associations: PathBuf,
    #[arg(long)]
    pub query_truth: PathBuf,
    #[arg(long)]
    pub query_associations: PathBuf,
    /// Timing file written by `localize`.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// World seed; session seeds derive from it.
    #[arg(long, env = "OLTSM_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Re-run the exact configuration recorded in a pipeline manifest.
    #[arg(long, conflicts_with = "config")]
    pub from_manifest: Option<PathBuf>,
    /// Trial configuration (JSON) used as the base before flags apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Compare outputs against the hashes in `--from-manifest`.
    #[arg(long, requires = "from_manifest")]
    pub verify: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Frames between query snapshots.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Also write both streams, ground truths and the world.
    #[arg(long)]
    pub keep_streams: bool,
    #[command(flatten)]
    pub world: WorldKnobs,
    #[command(flatten)]
    pub trajectory: TrajectoryKnobs,
    #[command(flatten)]
    pub perturbation: PerturbationKnobs,
    #[command(flatten)]
    pub mapping: MappingKnobs,
    #[command(flatten)]
    pub matching: MatchKnobs,
}

impl PipelineArgs {
    /// True when any configuration flag was given.
    pub fn has_knobs(&self) -> bool {
        self.stride.is_some()
            || self.world.is_set()
            || self.trajectory.is_set()
            || self.perturbation.is_set()
            || self.mapping.is_set()
            || self.matching.is_set()
    }
}

#[derive(Debug, Args)]
pub struct WorldKnobs {
    /// corridor, hospital or random.
    #[arg(long)]
    pub template: Option<Template>,
    #[arg(long)]
    pub landmarks: Option<usize>,
    /// Corridor length or loop width (m).
    #[arg(long)]
    pub extent: Option<f64>,
}

impl WorldKnobs {
    fn is_set(&self) -> bool {
        self.template.is_some() || self.landmarks.is_some() || self.extent.is_some()
    }

    pub fn apply(&self, w: &mut WorldSpec) {
        set(&mut w.template, self.template);
        set(&mut w.landmarks, self.landmarks);
        set(&mut w.extent, self.extent);
    }
}

#[derive(Debug, Args)]
pub struct TrajectoryKnobs {
    /// Times the route is driven.
    #[arg(long)]
    pub passes: Option<usize>,
    /// m/s.
    #[arg(long)]
    pub speed: Option<f64>,
    #[arg(long)]
    pub rate_hz: Option<f64>,
}

impl TrajectoryKnobs {
    fn is_set(&self) -> bool {
        self.passes.is_some() || self.speed.is_some() || self.rate_hz.is_some()
    }

    pub fn apply(&self, t: &mut TrajectorySpec) {
        set(&mut t.passes, self.passes);
        set(&mut t.speed, self.speed);
        set(&mut t.rate_hz, self.rate_hz);
    }
}

/// Detection noise. In `pipeline` these apply to the query session.
#[derive(Debug, Args)]
pub struct PerturbationKnobs {
    #[arg(long)]
    pub p_drop: Option<f64>,
    #[arg(long)]
    pub p_confuse: Option<f64>,
    /// m.
    #[arg(long)]
    pub sigma_center: Option<f64>,
    /// deg.
    #[arg(long)]
    pub sigma_yaw: Option<f64>,
    /// Trajectory shift to the left of travel (m).
    #[arg(long)]
    pub lateral_offset: Option<f64>,
    /// Heading offset (deg).
    #[arg(long)]
    pub heading_offset: Option<f64>,
    #[arg(long)]
    pub n_dynamic: Option<usize>,
}

impl PerturbationKnobs {
    fn is_set(&self) -> bool {
        self.p_drop.is_some()
            || self.p_confuse.is_some()
            || self.sigma_center.is_some()
            || self.sigma_yaw.is_some()
            || self.lateral_offset.is_some()
            || self.heading_offset.is_some()
            || self.n_dynamic.is_some()
    }

    pub fn apply(&self, p: &mut PerturbationSpec) {
        set(&mut p.p_drop, self.p_drop);
        set(&mut p.p_confuse, self.p_confuse);
        set(&mut p.sigma_center, self.sigma_center);
        set(&mut p.sigma_yaw, self.sigma_yaw);
        set(&mut p.viewpoint_lateral, self.lateral_offset);
        set(&mut p.viewpoint_heading, self.heading_offset);
        set(&mut p.n_dynamic, self.n_dynamic);
    }
}

#[derive(Debug, Args)]
pub struct MappingKnobs {
    /// Association gate (m).
    #[arg(long)]
    pub gate_distance: Option<f64>,
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Longest edge created between co-visible nodes (m).
    #[arg(long)]
    pub edge_max_distance: Option<f64>,
    /// Descriptor score needed to merge into an existing node.
    #[arg(long)]
    pub tau_map: Option<f64>,
    /// Nodes per descriptor walk (R).
    #[arg(long, short = 'R')]
    pub walk_nodes: Option<usize>,
    /// Sightings before a new node enters the map.
    #[arg(long)]
    pub min_support: Option<usize>,
    /// Frames an unconfirmed node survives unseen.
    #[arg(long)]
    pub staged_ttl: Option<usize>,
    /// Classes never mapped, comma separated. Default: person.
    #[arg(long, value_delimiter = ',')]
    pub dynamic_classes: Option<Vec<String>>,
}

pub const DEFAULT_DYNAMIC_CLASSES: &[&str] = &["person"];
pub const DEFAULT_MIN_SUPPORT: usize = 3;

impl MappingKnobs {
    fn is_set(&self) -> bool {
        self.gate_distance.is_some()
            || self.min_confidence.is_some()
            || self.edge_max_distance.is_some()
            || self.tau_map.is_some()
            || self.walk_nodes.is_some()
            || self.min_support.is_some()
            || self.staged_ttl.is_some()
            || self.dynamic_classes.is_some()
    }

    /// Mapping configuration for a stream with the given class table.
    pub fn resolve(&self, classes: &[String]) -> MappingConfig {
        let mut cfg = MappingConfig {
            min_support: DEFAULT_MIN_SUPPORT,
            ..MappingConfig::default()
        };
        let dynamic: Vec<String> = match &self.dynamic_classes {
            Some(d) => d.clone(),
            None => DEFAULT_DYNAMIC_CLASSES.iter().map(|s| s.to_string()).collect(),
        };
        cfg.association.static_class_allowlist = Some(
            classes
                .iter()
                .enumerate()
                .filter(|(_, name)| !dynamic.contains(name))
                .map(|(i, _)| i as u32)
                .collect(),
        );
        self.apply(&mut cfg);
        cfg
    }

    pub fn apply(&self, cfg: &mut MappingConfig) {
        set(&mut cfg.association.gate_distance, self.gate_distance);
        set(&mut cfg.association.min_confidence, self.min_confidence);
        set(&mut cfg.association.edge_max_distance, self.edge_max_distance);
        set(&mut cfg.tau_map, self.tau_map);
        set(&mut cfg.walk_nodes, self.walk_nodes);
        set(&mut cfg.min_support, self.min_support);
        set(&mut cfg.staged_ttl, self.staged_ttl);
    }
}

#[derive(Debug, Args)]
pub struct MatchKnobs {
    /// Scene score needed to accept a localization.
    #[arg(long)]
    pub tau_accept: Option<f64>,
    /// Hop radius of the query neighborhood.
    #[arg(long)]
    pub query_radius: Option<usize>,
}

impl MatchKnobs {
    fn is_set(&self) -> bool {
        self.tau_accept.is_some() || self.query_radius.is_some()
    }

    pub fn apply(&self, cfg: &mut MatchConfig, walk_nodes: Option<usize>) {
        set(&mut cfg.tau_accept, self.tau_accept);
        set(&mut cfg.query_radius, self.query_radius);
        set(&mut cfg.walk_nodes, walk_nodes);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
