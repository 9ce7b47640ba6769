use std::sync::Arc;

use coldaug::augmenter::{
    generate_augmentations, AugmentOptions, LexicalOracle, ReplayOracle, TrueScoreOracle,
};
use coldaug::datasets::{build_eval_queries, temporal_split, SplitDataset};
use coldaug::evaluation::{run_experiment, Arm, ExperimentConfig, Ranker};
use coldaug::synthworld::{generate_world, World, WorldSpec};
use coldaug::training::{read_triples, TrainConfig, TripleSource};
use coldaug::Exec;

fn world(n_users: usize) -> (Arc<World>, SplitDataset) {
    let spec = WorldSpec {
        n_users,
        n_warm: 200,
        n_cold: 40,
        interactions_per_user: 10,
        seed: 8,
        ..WorldSpec::default()
    };
    let w = generate_world(&spec).unwrap();
    let mut split = temporal_split(&w.interactions, spec.train_fraction).unwrap();
    split.catalog.attach_meta(w.metas.clone());
    (Arc::new(w), split)
}

#[test]
fn true_score_triples_follow_the_hidden_affinities() {
    let (w, split) = world(100);
    let oracle = TrueScoreOracle::new(w.clone());
    let opts = AugmentOptions {
        fraction: 0.2,
        ..AugmentOptions::default()
    };
    let out = generate_augmentations(&split, &oracle, &opts).unwrap();
    assert_eq!(out.report.queries, 20);
    assert_eq!(out.triples.len(), 20);
    for t in &out.triples {
        assert_eq!(t.source, TripleSource::TrueScore);
        let u = w.user_index(&t.user_id).unwrap();
        let (p, n) = (
            w.item_index(&t.pos_item).unwrap(),
            w.item_index(&t.neg_item).unwrap(),
        );
        assert!(w.is_cold(p) && w.is_cold(n));
        assert!(w.true_affinity(u, p) > w.true_affinity(u, n));
    }

    let three = AugmentOptions {
        pairs_per_query: 3,
        ..opts
    };
    assert_eq!(
        generate_augmentations(&split, &oracle, &three)
            .unwrap()
            .report
            .pairs,
        60
    );
}

#[test]
fn interrupted_runs_resume_to_the_same_file() {
    let (_, split) = world(60);
    let oracle = LexicalOracle::new(&split.catalog).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("triples.jsonl");
    let opts = AugmentOptions {
        fraction: 1.0,
        chunk_size: 7,
        output: Some(path.clone()),
        ..AugmentOptions::default()
    };
    let full = generate_augmentations(&split, &oracle, &opts).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(read_triples(&path).unwrap(), full.triples);

    let kept: Vec<&str> = std::str::from_utf8(&bytes)
        .unwrap()
        .lines()
        .take(25)
        .collect();
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    let resumed = generate_augmentations(&split, &oracle, &opts).unwrap();
    assert_eq!(resumed.report.resumed, 25);
    assert_eq!(resumed.triples, full.triples);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn replaying_a_recording_reproduces_the_triple_file() {
    let (_, split) = world(60);
    let dir = tempfile::tempdir().unwrap();
    let (first, second, record) = (
        dir.path().join("a.jsonl"),
        dir.path().join("b.jsonl"),
        dir.path().join("replay.jsonl"),
    );
    let opts = AugmentOptions {
        fraction: 0.5,
        pairs_per_query: 2,
        seed: 9,
        output: Some(first.clone()),
        record: Some(record.clone()),
        ..AugmentOptions::default()
    };
    let live = LexicalOracle::new(&split.catalog).unwrap();
    generate_augmentations(&split, &live, &opts).unwrap();
    let replay = ReplayOracle::load(&record).unwrap();
    let again = AugmentOptions {
        output: Some(second.clone()),
        record: None,
        ..opts
    };
    let out = generate_augmentations(&split, &replay, &again).unwrap();
    assert_eq!(out.report.abstains, 0);
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}

fn quick() -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig {
            epochs: 3,
            batch_size: 64,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn zero_weight_augmentation_matches_the_plain_arm() {
    let (w, split) = world(60);
    let oracle = TrueScoreOracle::new(w);
    let opts = AugmentOptions {
        fraction: 1.0,
        ..AugmentOptions::default()
    };
    let triples = generate_augmentations(&split, &oracle, &opts)
        .unwrap()
        .triples;
    let mut config = quick();
    config.train.aug_weight = 0.0;
    config.arms = vec![Arm::Aug];
    let weighted_off =
        run_experiment(&split, Some(&triples), &config, 2, Exec::Sequential).unwrap();
    config.arms = vec![Arm::NoAug];
    let plain = run_experiment(&split, None, &config, 2, Exec::Sequential).unwrap();
    assert_eq!(weighted_off[0].params, plain[0].params);
    assert_eq!(weighted_off[0].recall, plain[0].recall);
}

#[test]
fn sequential_and_parallel_experiments_agree() {
    let (_, split) = world(60);
    let oracle = LexicalOracle::new(&split.catalog).unwrap();
    let triples = generate_augmentations(&split, &oracle, &AugmentOptions::default())
        .unwrap()
        .triples;
    let config = quick();
    let seq = run_experiment(&split, Some(&triples), &config, 1, Exec::Sequential).unwrap();
    let par = run_experiment(&split, Some(&triples), &config, 1, Exec::Parallel).unwrap();
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.arm, b.arm);
        assert_eq!(a.params, b.params);
        assert_eq!(a.recall, b.recall);
    }
}

#[test]
fn content_arm_separates_cold_items() {
    let (_, split) = world(60);
    let outcomes = run_experiment(
        &split,
        None,
        &ExperimentConfig {
            arms: vec![Arm::Content],
            ..quick()
        },
        0,
        Exec::Sequential,
    )
    .unwrap();
    let (queries, _) = build_eval_queries(&split);
    let ranker = Ranker::new(&outcomes[0].params, &split).unwrap();
    let scores = ranker.scores(&queries[0]).unwrap();
    let cold: Vec<f64> = (0..split.catalog.len())
        .filter(|&i| split.catalog.is_cold(i))
        .map(|i| scores[i])
        .collect();
    let mean = cold.iter().sum::<f64>() / cold.len() as f64;
    let var = cold.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / cold.len() as f64;
    assert!(var > 1e-8, "cold score variance {var}");
}
