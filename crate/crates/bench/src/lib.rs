//! Shared fixtures for the benchmarks.

use oltsm_core::mapping::map_stream;
use oltsm_core::pipeline::TrialConfig;
use oltsm_core::simulator::{generate_session, generate_world};
use oltsm_core::SemanticGraph;

/// Map of a noiseless corridor holding `landmarks` landmarks, 0.7 m of
/// corridor per landmark.
pub fn corridor_map(landmarks: usize) -> SemanticGraph {
    let mut cfg = TrialConfig::corridor(0);
    cfg.world.landmarks = landmarks;
    cfg.world.extent = 0.7 * landmarks as f64;
    let world = generate_world(&cfg.world).expect("valid world");
    let session = generate_session(&world, &cfg.map_session).expect("valid session");
    map_stream(&session.stream, &cfg.mapping)
        .expect("mapping succeeds")
        .graph
}
