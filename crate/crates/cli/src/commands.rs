use std::path::Path;

use oltsm_core::descriptor::DescriptorIndex;
use oltsm_core::eval::{map_storage_bytes, node_landmarks, pr_csv, EvalSummary, TimingReport};
use oltsm_core::graph::SemanticGraph;
use oltsm_core::mapping::{map_stream, AssociationRecord, MapOutcome, MappingStats};
use oltsm_core::matching::MatchConfig;
use oltsm_core::pipeline::{
    evaluate, localize_stream, run_trial, runs_from_report, session_report, SessionReport, TrialConfig,
};
use oltsm_core::simulator::{class_table, generate_session, generate_world, GroundTruth, SessionSpec, WorldSpec};
use oltsm_core::stream::{parse_stream, write_stream, DetectionStream};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{Command, EvalArgs, LocalizeArgs, MapArgs, PipelineArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{default_manifest_path, write_file, Manifest};

pub const STREAM_FILE: &str = "stream.jsonl";
pub const TRUTH_FILE: &str = "truth.json";
pub const WORLD_FILE: &str = "world.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MAP_FILE: &str = "map.json";
pub const QUERY_MAP_FILE: &str = "query_map.json";
pub const REPORT_FILE: &str = "report.json";
pub const PR_FILE: &str = "pr.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Observation-to-node assignments of one mapped session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationFile {
    pub associations: Vec<AssociationRecord>,
    pub session: String,
    pub stats: MappingStats,
}

impl AssociationFile {
    fn of(session: &str, outcome: &MapOutcome) -> Self {
        Self {
            associations: outcome.associations.clone(),
            session: session.to_string(),
            stats: outcome.stats,
        }
    }
}

pub fn run(command: &Command, argv: Vec<String>) -> CliResult<()> {
    match command {
        Command::Simulate(a) => simulate(a, argv),
        Command::Map(a) => map(a, argv),
        Command::Localize(a) => localize(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::Pipeline(a) => pipeline(a, argv),
    }
}

fn require_inputs(paths: &[&Path]) -> CliResult<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Usage(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(CliError::io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_stream(path: &Path, bytes: &[u8]) -> CliResult<DetectionStream> {
    parse_stream(bytes).map_err(CliError::data(path))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("output serializes")
}

fn to_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("configuration serializes")
}

fn simulate(a: &SimulateArgs, argv: Vec<String>) -> CliResult<()> {
    let mut world = WorldSpec {
        seed: a.world_seed.unwrap_or(a.seed),
        ..WorldSpec::default()
    };
    a.world.apply(&mut world);
    let mut session = SessionSpec {
        name: a.name.clone(),
        seed: a.seed,
        ..SessionSpec::default()
    };
    a.trajectory.apply(&mut session.trajectory);
    a.perturbation.apply(&mut session.perturbation);
    world.validate()?;
    session.perturbation.validate()?;
    session.trajectory.validate()?;

    let w = generate_world(&world)?;
    let s = generate_session(&w, &session)?;
    let stream = write_stream(&s.stream);
    let truth = s.truth.to_json();
    let world_bytes = w.to_json();

    let mut manifest = Manifest::new("simulate", json!({ "session": session, "world": world }), argv);
    manifest.seed = Some(a.seed);
    for (name, bytes) in [(STREAM_FILE, &stream), (TRUTH_FILE, &truth), (WORLD_FILE, &world_bytes)] {
        write_file(&a.out_dir.join(name), bytes)?;
        manifest.output(name, bytes);
    }
    manifest.write(&a.out_dir.join(MANIFEST_FILE))?;
    println!(
        "simulated {} frames, {} observations ({} dropped, {} distractor)",
        s.stats.frames, s.stats.emitted, s.stats.dropped, s.stats.distractor_emissions
    );
    Ok(())
}

fn map(a: &MapArgs, argv: Vec<String>) -> CliResult<()> {
    require_inputs(&[&a.input])?;
    let input = read(&a.input)?;
    let stream = read_stream(&a.input, &input)?;
    let cfg = a.mapping.resolve(&stream.header.classes);
    cfg.validate()?;

    let outcome = map_stream(&stream, &cfg)?;
    let map_bytes = outcome.graph.to_canonical_json();
    let mut manifest = Manifest::new("map", to_value(&cfg), argv);
    manifest.input(&a.input, &input);
    write_file(&a.out, &map_bytes)?;
    manifest.output(&a.out.display().to_string(), &map_bytes);
    if let Some(path) = &a.associations {
        let bytes = json_bytes(&AssociationFile::of(&stream.header.session, &outcome));
        write_file(path, &bytes)?;
        manifest.output(&path.display().to_string(), &bytes);
    }
    let manifest_path = a.manifest.clone().unwrap_or_else(|| default_manifest_path(&a.out));
    manifest.write(&manifest_path)?;
    println!(
        "mapped {} frames: {} nodes, {} edges, {} bytes",
        outcome.stats.frames,
        outcome.graph.len(),
        outcome.graph.edge_count(),
        map_bytes.len()
    );
    Ok(())
}

fn localize(a: &LocalizeArgs, argv: Vec<String>) -> CliResult<()> {
    require_inputs(&[&a.map, &a.query])?;
    if a.stride == 0 {
        return Err(CliError::Usage("--stride must be at least 1".into()));
    }
    let map_input = read(&a.map)?;
    let db = SemanticGraph::from_json(&map_input).map_err(CliError::data(&a.map))?;
    let query_input = read(&a.query)?;
    let stream = read_stream(&a.query, &query_input)?;
    if db.class_table() != stream.header.classes.as_slice() {
        return Err(CliError::Data(format!(
            "class tables differ: map has {:?}, query stream has {:?}",
            db.class_table(),
            stream.header.classes
        )));
    }
    let mapping = a.mapping.resolve(&stream.header.classes);
    let mut matching = MatchConfig::default();
    a.matching.apply(&mut matching, a.mapping.walk_nodes);
    mapping.validate()?;
    matching.validate()?;

    let index = DescriptorIndex::build(&db, matching.descriptor_config())?;
    let (query_map, runs, timing) = localize_stream(&stream, &index, &mapping, &matching, a.stride)?;
    let report = session_report(&stream.header.session, &runs);
    let report_bytes = json_bytes(&report);

    let config = json!({ "mapping": mapping, "matching": matching, "stride": a.stride });
    let mut manifest = Manifest::new("localize", config, argv);
    manifest.input(&a.map, &map_input);
    manifest.input(&a.query, &query_input);
    write_file(&a.out, &report_bytes)?;
    manifest.output(&a.out.display().to_string(), &report_bytes);
    if let Some(path) = &a.query_map {
        let bytes = query_map.graph.to_canonical_json();
        write_file(path, &bytes)?;
        manifest.output(&path.display().to_string(), &bytes);
    }
    if let Some(path) = &a.query_associations {
        let bytes = json_bytes(&AssociationFile::of(&stream.header.session, &query_map));
        write_file(path, &bytes)?;
        manifest.output(&path.display().to_string(), &bytes);
    }
    if let Some(path) = &a.timing {
        write_file(path, &json_bytes(&timing))?;
        manifest.volatile.push(path.display().to_string());
    }
    let manifest_path = a.manifest.clone().unwrap_or_else(|| default_manifest_path(&a.out));
    manifest.write(&manifest_path)?;
    let accepted = report.queries.iter().filter(|q| q.result.accepted).count();
    println!("{} queries, {} accepted", report.queries.len(), accepted);
    Ok(())
}

fn eval(a: &EvalArgs, argv: Vec<String>) -> CliResult<()> {
    let mut inputs = vec![
        a.report.as_path(),
        &a.map,
        &a.map_truth,
        &a.map_associations,
        &a.query_truth,
        &a.query_associations,
    ];
    if let Some(t) = &a.timing {
        inputs.push(t);
    }
    require_inputs(&inputs)?;
    let mut manifest = Manifest::new("eval", json!({}), argv);
    let mut load = |path: &Path| -> CliResult<Vec<u8>> {
        let bytes = read(path)?;
        manifest.input(path, &bytes);
        Ok(bytes)
    };
    let report: SessionReport = read_json(&a.report, &load(&a.report)?)?;
    load(&a.map)?;
    let map_truth = GroundTruth::from_json(&load(&a.map_truth)?).map_err(CliError::data(&a.map_truth))?;
    let query_truth = GroundTruth::from_json(&load(&a.query_truth)?).map_err(CliError::data(&a.query_truth))?;
    let map_assoc: AssociationFile = read_json(&a.map_associations, &load(&a.map_associations)?)?;
    let query_assoc: AssociationFile = read_json(&a.query_associations, &load(&a.query_associations)?)?;
    let timing: TimingReport = match &a.timing {
        Some(path) => read_json(path, &load(path)?)?,
        None => TimingReport::default(),
    };

    let db_landmarks = node_landmarks(&map_assoc.associations, &map_truth);
    let query_landmarks = node_landmarks(&query_assoc.associations, &query_truth);
    let evaluation = evaluate(&runs_from_report(&report), &query_landmarks, &db_landmarks)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.report.display())))?;
    let summary = EvalSummary {
        auc: evaluation.auc,
        success_rate: evaluation.success_rate,
        storage_bytes: map_storage_bytes(&a.map)?,
        timing,
        queries: evaluation.outcomes.len(),
        labeled: evaluation.labels.len(),
        positives: evaluation.labels.iter().filter(|l| l.positive).count(),
    };
    let csv = pr_csv(&evaluation.curve);
    let summary_bytes = json_bytes(&summary);
    write_file(&a.out_dir.join(PR_FILE), csv.as_bytes())?;
    write_file(&a.out_dir.join(SUMMARY_FILE), &summary_bytes)?;
    manifest.output(PR_FILE, csv.as_bytes());
    manifest.output(SUMMARY_FILE, &summary_bytes);
    manifest.write(&a.out_dir.join(MANIFEST_FILE))?;
    println!(
        "auc {:.4}, success rate {:.4}, {} labeled matches",
        summary.auc, summary.success_rate, summary.labeled
    );
    Ok(())
}

fn pipeline_config(a: &PipelineArgs) -> CliResult<(TrialConfig, Option<u64>, Option<Manifest>)> {
    if let Some(path) = &a.from_manifest {
        require_inputs(&[path])?;
        if a.has_knobs() || a.seed.is_some() {
            return Err(CliError::Usage(
                "configuration flags cannot be combined with --from-manifest".into(),
            ));
        }
        let manifest = Manifest::read(path)?;
        if manifest.command != "pipeline" {
            return Err(CliError::Usage(format!(
                "{} records a `{}` run, not a pipeline run",
                path.display(),
                manifest.command
            )));
        }
        let cfg: TrialConfig = serde_json::from_value(manifest.config.clone())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return Ok((cfg, manifest.seed, Some(manifest)));
    }
    let mut cfg = match (&a.config, a.seed) {
        (Some(path), seed) => {
            require_inputs(&[path])?;
            let mut cfg: TrialConfig = read_json(path, &read(path)?)?;
            if let Some(s) = seed {
                let base = TrialConfig::corridor(s);
                cfg.world.seed = base.world.seed;
                cfg.map_session.seed = base.map_session.seed;
                cfg.query_session.seed = base.query_session.seed;
            }
            cfg
        }
        (None, Some(seed)) => TrialConfig::corridor(seed),
        (None, None) => {
            return Err(CliError::Usage(
                "pipeline needs --seed (or OLTSM_SEED), --config or --from-manifest".into(),
            ))
        }
    };
    a.world.apply(&mut cfg.world);
    a.trajectory.apply(&mut cfg.map_session.trajectory);
    a.trajectory.apply(&mut cfg.query_session.trajectory);
    a.perturbation.apply(&mut cfg.query_session.perturbation);
    a.mapping.apply(&mut cfg.mapping);
    if a.mapping.dynamic_classes.is_some() {
        cfg.mapping.association.static_class_allowlist =
            a.mapping.resolve(&class_table()).association.static_class_allowlist;
    }
    a.matching.apply(&mut cfg.matching, a.mapping.walk_nodes);
    if let Some(s) = a.stride {
        cfg.query_stride = s;
    }
    Ok((cfg, a.seed, None))
}

fn pipeline(a: &PipelineArgs, argv: Vec<String>) -> CliResult<()> {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let (cfg, seed, recorded) = pipeline_config(a)?;
    cfg.validate()?;
    let out = run_trial(&cfg, a.jobs)?;

    let dir = &a.out_dir;
    let mut manifest = Manifest::new("pipeline", to_value(&cfg), argv);
    manifest.seed = seed;
    let report = out.report_json();
    let csv = pr_csv(&out.evaluation.curve);
    let query_map = out.query_map.graph.to_canonical_json();
    let mut files: Vec<(String, Vec<u8>)> = vec![
        (MAP_FILE.into(), out.map_bytes.clone()),
        (QUERY_MAP_FILE.into(), query_map),
        (REPORT_FILE.into(), report),
        (PR_FILE.into(), csv.into_bytes()),
    ];
    if a.keep_streams {
        for (prefix, session) in [("map", &out.map_session), ("query", &out.query_session)] {
            files.push((format!("{prefix}_{STREAM_FILE}"), write_stream(&session.stream)));
            files.push((format!("{prefix}_{TRUTH_FILE}"), session.truth.to_json()));
        }
        for (prefix, outcome, session) in [
            ("map", &out.map, &out.map_session),
            ("query", &out.query_map, &out.query_session),
        ] {
            let assoc = AssociationFile::of(&session.stream.header.session, outcome);
            files.push((format!("{prefix}_associations.json"), json_bytes(&assoc)));
        }
        files.push((WORLD_FILE.into(), out.world.to_json()));
    }
    for (name, bytes) in &files {
        write_file(&dir.join(name), bytes)?;
        manifest.output(name, bytes);
    }
    let e = &out.evaluation;
    let summary = EvalSummary {
        auc: e.auc,
        success_rate: e.success_rate,
        storage_bytes: out.storage_bytes(),
        timing: out.timing,
        queries: e.outcomes.len(),
        labeled: e.labels.len(),
        positives: e.labels.iter().filter(|l| l.positive).count(),
    };
    write_file(&dir.join(SUMMARY_FILE), &json_bytes(&summary))?;
    manifest.volatile.push(SUMMARY_FILE.into());
    manifest.write(&dir.join(MANIFEST_FILE))?;

    println!(
        "auc {:.4}, success rate {:.4}, map {} nodes in {} bytes, {} queries",
        summary.auc,
        summary.success_rate,
        out.map.graph.len(),
        summary.storage_bytes,
        summary.queries
    );
    if a.verify {
        let recorded = recorded.expect("--verify requires --from-manifest");
        let differing: Vec<&String> = recorded
            .outputs
            .iter()
            .filter(|(name, hash)| manifest.outputs.get(*name) != Some(*hash))
            .map(|(name, _)| name)
            .collect();
        if !differing.is_empty() {
            return Err(CliError::Invariant(format!(
                "re-run differs from the manifest in {differing:?}"
            )));
        }
        println!("verified {} outputs against the manifest", recorded.outputs.len());
    }
    Ok(())
}
