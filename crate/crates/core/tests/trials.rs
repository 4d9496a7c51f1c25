use oltsm_core::pipeline::{run_trial, TrialConfig};

fn dropout_trial(seed: u64, p_drop: f64, p_confuse: f64) -> TrialConfig {
    let mut cfg = TrialConfig::corridor(seed);
    cfg.query_session.perturbation.p_drop = p_drop;
    cfg.query_session.perturbation.p_confuse = p_confuse;
    cfg
}

#[test]
fn dropout_and_confusion_keep_most_correspondences() {
    let (mut queries, mut accepted, mut labeled, mut correct) = (0, 0, 0, 0);
    for seed in 0..4 {
        let e = run_trial(&dropout_trial(seed, 0.2, 0.05), 1).unwrap().evaluation;
        queries += e.outcomes.len();
        accepted += e.outcomes.iter().filter(|o| o.accepted).count();
        labeled += e.labels.len();
        correct += e.labels.iter().filter(|l| l.positive).count();
    }
    assert!(
        accepted as f64 >= 0.95 * queries as f64,
        "{accepted}/{queries} accepted"
    );
    assert!(correct as f64 >= 0.9 * labeled as f64, "{correct}/{labeled} correct");
}

#[test]
fn scene_score_degrades_with_dropout() {
    let means: Vec<f64> = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        .iter()
        .map(|&d| {
            let scores: Vec<f64> = (0..30)
                .flat_map(|seed| run_trial(&dropout_trial(seed, d, 0.0), 1).unwrap().runs)
                .map(|r| r.result.scene_score)
                .collect();
            scores.iter().sum::<f64>() / scores.len() as f64
        })
        .collect();
    assert_eq!(means[0], 1.0);
    for w in means.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "{means:?}");
    }
}

#[test]
fn trials_are_reproducible() {
    let cfg = dropout_trial(3, 0.3, 0.05);
    let a = run_trial(&cfg, 1).unwrap();
    let b = run_trial(&cfg, 1).unwrap();
    assert_eq!(a.map_bytes, b.map_bytes);
    assert_eq!(a.report_json(), b.report_json());
    assert_eq!(a.evaluation, b.evaluation);
}
