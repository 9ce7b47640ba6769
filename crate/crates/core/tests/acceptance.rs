//! End-to-end acceptance criteria. Prints one PASS/FAIL/SKIP line per
//! criterion and exits nonzero if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use coldaug::augmenter::{
    build_oracle, generate_augmentations, AugmentOptions, OracleConfig, PreferenceOracle,
    RemoteConfig, RemoteOracle, ReplayOracle,
};
use coldaug::datasets::{
    build_eval_queries, load_interactions, load_item_meta, save_split, temporal_split,
    InteractionFormat, SplitDataset,
};
use coldaug::evaluation::{
    recall_at_k, run_experiment, sweep, topk_indices, write_json, Arm, ExperimentConfig, Group,
    Ranker, SweepAxis, SweepConfig,
};
use coldaug::model::{init_params, save_checkpoint, Backbone, ModelConfig, ModelParams, UserCtx};
use coldaug::synthworld::{generate_world, World, WorldSpec};
use coldaug::training::{
    bpr_term, read_triples, sampled_softmax_loss, AugReduction, Example, LossOptions,
    OptimizerKind, TrainConfig,
};
use coldaug::Exec;

struct Outcome {
    /// `None` when the criterion could not run.
    pass: Option<bool>,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: Some(pass),
        detail: detail.into(),
    }
}

fn within(budget: Duration, started: Instant) -> (bool, String) {
    let took = started.elapsed();
    (
        took < budget,
        format!("{:.1}s of {:.0}s", took.as_secs_f64(), budget.as_secs_f64()),
    )
}

/// The world shared by the end-to-end criteria.
fn world() -> &'static (Arc<World>, SplitDataset) {
    static WORLD: OnceLock<(Arc<World>, SplitDataset)> = OnceLock::new();
    WORLD.get_or_init(|| {
        let spec = WorldSpec {
            n_users: 500,
            n_warm: 1700,
            n_cold: 300,
            true_dim: 8,
            interactions_per_user: 30,
            temperature: 0.5,
            seed: 0,
            ..WorldSpec::default()
        };
        let w = generate_world(&spec).expect("world");
        let mut split = temporal_split(&w.interactions, 0.7).expect("split");
        split.catalog.attach_meta(w.metas.clone());
        (Arc::new(w), split)
    })
}

/// mf, dim 16. With Adam the cold-item steps do not shrink with λ, so λ is
/// paired with an epsilon near the size of the per-step augmentation
/// gradient; together they set the scale of cold-item scores.
fn experiment_config() -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig {
            backbone: Backbone::Mf,
            dim: 16,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 30,
            aug_weight: 0.04,
            aug_reduction: AugReduction::Mean,
            optimizer: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-5,
            },
            ..TrainConfig::default()
        },
        k_values: vec![5, 10, 50],
        arms: vec![Arm::NoAug, Arm::Content, Arm::Aug],
    }
}

fn true_oracle() -> OracleConfig {
    OracleConfig::TrueScore { world: None }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let bpr_err = (bpr_term(0.0) - std::f64::consts::LN_2).abs();
    let mut worst = bpr_err;
    for b in [2usize, 4, 8] {
        let catalog = common::catalog(b, 1, 0);
        let cfg = ModelConfig {
            backbone: Backbone::Mf,
            dim: 4,
            ..ModelConfig::default()
        };
        let mut params = init_params(&cfg, b, &catalog, 0).unwrap();
        params.weights.fill(0.0);
        let batch: Vec<Example> = (0..b)
            .map(|k| Example {
                ctx: UserCtx {
                    user: k,
                    history: &[],
                },
                item: k,
            })
            .collect();
        let loss =
            sampled_softmax_loss(&params, &batch, &LossOptions::default(), None, 1.0).unwrap();
        worst = worst.max((loss - (b as f64).ln()).abs());
    }
    let (fast, time) = within(Duration::from_secs(1), started);
    verdict(
        worst < 1e-9 && fast,
        format!("max deviation {worst:.2e}; {time}"),
    )
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut min_checked = usize::MAX;
    for (backbone, dim) in [
        (Backbone::Mf, 8),
        (Backbone::Neumf, 6),
        (Backbone::Seqrec, 4),
        (Backbone::ContentMf, 16),
    ] {
        for (loss, r) in common::grads::check_backbone(backbone, dim) {
            min_checked = min_checked.min(r.checked);
            if r.max_rel_error >= worst.0 {
                worst = (r.max_rel_error, format!("{}/{loss}", backbone.name()));
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(120), started);
    verdict(
        worst.0 < 1e-4 && min_checked >= 200 && fast,
        format!(
            "worst rel error {:.2e} ({}); >= {min_checked} params per check; {time}",
            worst.0, worst.1
        ),
    )
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let spec = WorldSpec {
        n_users: 100,
        n_warm: 450,
        n_cold: 50,
        true_dim: 4,
        interactions_per_user: 10,
        temperature: 1.0,
        seed: 5,
        ..WorldSpec::default()
    };
    let w = generate_world(&spec).unwrap();
    let split = temporal_split(&w.interactions, 0.7).unwrap();
    let (mut queries, _) = build_eval_queries(&split);
    queries.truncate(200);
    let params = common::random_params(
        Backbone::Mf,
        8,
        5,
        split.users.len(),
        &split.catalog,
        9,
        1.0,
    );
    let ranker = Ranker::new(&params, &split).unwrap();
    let ks = [5usize, 10, 50];
    let mut mismatches = 0;
    let mut hits = [[0usize; 3]; 2];
    let mut counts = [0usize; 2];
    for q in &queries {
        let scores = ranker.scores(q).unwrap();
        let mut full: Vec<usize> = (0..scores.len()).collect();
        full.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let truth = split.catalog.index_of(&q.truth_item).unwrap();
        let g = q.is_cold as usize;
        counts[g] += 1;
        for (n, &k) in ks.iter().enumerate() {
            let fast: Vec<String> = ranker.topk(q, k).unwrap();
            let brute: Vec<String> = full[..k]
                .iter()
                .map(|&i| split.catalog.id_of(i).to_string())
                .collect();
            mismatches += (fast != brute) as usize;
            mismatches += (topk_indices(&scores, k) != full[..k]) as usize;
            hits[g][n] += full[..k].contains(&truth) as usize;
        }
    }
    let report = recall_at_k(&params, &split, &queries, &ks, Exec::Parallel).unwrap();
    for (n, &k) in ks.iter().enumerate() {
        for (g, group) in [(1, Group::Cold), (0, Group::Warm)] {
            let expected = (counts[g] > 0).then(|| hits[g][n] as f64 / counts[g] as f64);
            mismatches += (report.at(group, k) != expected) as usize;
        }
        let all = (hits[0][n] + hits[1][n]) as f64 / queries.len() as f64;
        mismatches += (report.at(Group::All, k) != Some(all)) as usize;
    }
    let (fast, time) = within(Duration::from_secs(10), started);
    verdict(
        mismatches == 0 && queries.len() == 200 && split.catalog.len() == 500 && fast,
        format!(
            "{} items, {} queries, {mismatches} mismatches vs full sort; {time}",
            split.catalog.len(),
            queries.len()
        ),
    )
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let (w, split) = world();
    let cfg = experiment_config();
    let (mut cold, mut warm) = ([Vec::new(), Vec::new()], [Vec::new(), Vec::new()]);
    for seed in 0..3u64 {
        let oracle = build_oracle(&true_oracle(), &split.catalog, Some(w)).unwrap();
        let opts = AugmentOptions {
            fraction: 1.0,
            pairs_per_query: 1,
            seed,
            ..Default::default()
        };
        let aug = generate_augmentations(split, oracle.as_ref(), &opts).unwrap();
        let outcomes =
            run_experiment(split, Some(&aug.triples), &cfg, seed, Exec::Parallel).unwrap();
        println!(
            "    seed {seed}, {} triples\n{}",
            aug.triples.len(),
            coldaug::evaluation::comparison_table(&outcomes)
                .lines()
                .map(|l| format!("      {l}"))
                .collect::<Vec<_>>()
                .join("\n")
        );
        for o in &outcomes {
            let slot = match o.arm {
                Arm::NoAug => 0,
                Arm::Aug => 1,
                Arm::Content => continue,
            };
            cold[slot].push(o.recall.at(Group::Cold, 50).unwrap());
            warm[slot].push(o.recall.at(Group::Warm, 50).unwrap());
        }
    }
    let (c0, c1) = (mean(&cold[0]), mean(&cold[1]));
    let (w0, w1) = (mean(&warm[0]), mean(&warm[1]));
    let degradation = (w0 - w1) / w0;
    let per_arm = started.elapsed() / 9;
    let fast = per_arm < Duration::from_secs(300);
    verdict(
        c1 >= 2.0 * c0 && c1 - c0 >= 0.05 && degradation <= 0.15 && fast,
        format!(
            "cold R@50 {:.2}% -> {:.2}%, warm R@50 {:.2}% -> {:.2}% ({:+.1}% rel); {:.1}s per arm",
            100.0 * c0,
            100.0 * c1,
            100.0 * w0,
            100.0 * w1,
            -100.0 * degradation,
            per_arm.as_secs_f64()
        ),
    )
}

fn sweep_config(fraction: f64) -> SweepConfig {
    SweepConfig {
        experiment: experiment_config(),
        augment: AugmentOptions {
            fraction,
            ..Default::default()
        },
        oracle: true_oracle(),
    }
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let (w, split) = world();
    let values = [0.0, 0.2, 0.4];
    let seeds: Vec<u64> = (0..5).collect();
    let r = sweep(
        split,
        Some(w),
        SweepAxis::AugFraction,
        &values,
        &seeds,
        &sweep_config(1.0),
        Exec::Parallel,
    )
    .unwrap();
    let means: Vec<f64> = values
        .iter()
        .map(|&v| r.mean(v, Group::Cold, 50).unwrap())
        .collect();
    let monotone = means.windows(2).all(|m| m[1] >= m[0]);
    let (fast, time) = within(Duration::from_secs(1200), started);
    verdict(
        monotone && fast,
        format!(
            "mean cold R@50 at fractions 0/0.2/0.4: {}; {time}",
            means
                .iter()
                .map(|m| format!("{:.2}%", 100.0 * m))
                .collect::<Vec<_>>()
                .join(" / ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let (w, split) = world();
    let values = [0.0, 0.4];
    let seeds: Vec<u64> = (0..5).collect();
    let r = sweep(
        split,
        Some(w),
        SweepAxis::FlipProb,
        &values,
        &seeds,
        &sweep_config(1.0),
        Exec::Parallel,
    )
    .unwrap();
    let (clean, noisy) = (
        r.mean(0.0, Group::Cold, 50).unwrap(),
        r.mean(0.4, Group::Cold, 50).unwrap(),
    );
    let (fast, time) = within(Duration::from_secs(600), started);
    verdict(
        clean > noisy && fast,
        format!(
            "mean cold R@50 flip 0.0 {:.2}% vs flip 0.4 {:.2}%; {time}",
            100.0 * clean,
            100.0 * noisy
        ),
    )
}

/// Small world archive -> split -> augment -> train -> checkpoint -> metrics,
/// all written under `dir`.
fn pipeline(
    dir: &Path,
    oracle: &dyn Fn(&SplitDataset) -> Box<dyn PreferenceOracle>,
    record: bool,
) -> Vec<PathBuf> {
    let spec = WorldSpec {
        n_users: 120,
        n_warm: 300,
        n_cold: 60,
        true_dim: 4,
        interactions_per_user: 12,
        seed: 21,
        ..WorldSpec::default()
    };
    let w = generate_world(&spec).unwrap();
    let world_dir = dir.join("world");
    w.save(&world_dir).unwrap();
    let (xs, _) =
        load_interactions(&world_dir.join("interactions.tsv"), InteractionFormat::Tsv).unwrap();
    let mut split = temporal_split(&xs, 0.7).unwrap();
    split
        .catalog
        .attach_meta(load_item_meta(&world_dir.join("items.jsonl")).unwrap());
    save_split(&dir.join("split"), &split).unwrap();

    let oracle = oracle(&split);
    let triples_path = dir.join("triples.jsonl");
    let opts = AugmentOptions {
        fraction: 0.5,
        seed: 3,
        output: Some(triples_path.clone()),
        record: record.then(|| dir.join("replay.jsonl")),
        ..Default::default()
    };
    generate_augmentations(&split, oracle.as_ref(), &opts).unwrap();
    let triples = read_triples(&triples_path).unwrap();

    let mut cfg = experiment_config();
    cfg.model.dim = 8;
    cfg.train.epochs = 5;
    cfg.arms = vec![Arm::Aug];
    let outcome = run_experiment(&split, Some(&triples), &cfg, 4, Exec::Parallel)
        .unwrap()
        .remove(0);
    let ckpt = dir.join("model.bin");
    save_checkpoint(&ckpt, &outcome.params).unwrap();
    let metrics = dir.join("metrics.json");
    write_json(&metrics, &outcome.recall.records("aug", 4)).unwrap();
    vec![triples_path, ckpt, metrics]
}

fn same_bytes(a: &[PathBuf], b: &[PathBuf]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap())
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let lexical =
        |s: &SplitDataset| build_oracle(&OracleConfig::Lexical, &s.catalog, None).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let lex_same = same_bytes(
        &pipeline(d1.path(), &lexical, false),
        &pipeline(d2.path(), &lexical, false),
    );

    // A stand-in endpoint whose answer depends only on the prompt text.
    let (url, _) = common::mock::serve(|_, body| {
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        let p = v["prompt"].as_str().unwrap();
        let text = match p.bytes().map(|b| b as usize).sum::<usize>() % 5 {
            0 => "Hard to say.",
            1 | 2 => "A",
            _ => "B",
        };
        (200, serde_json::json!({ "text": text }).to_string(), 0)
    });
    std::env::set_var("COLDAUG_ACCEPTANCE_TOKEN", common::mock::TOKEN);
    let remote = |_: &SplitDataset| -> Box<dyn PreferenceOracle> {
        Box::new(
            RemoteOracle::new(RemoteConfig {
                max_in_flight: 4,
                ..RemoteConfig::new(url.clone(), "COLDAUG_ACCEPTANCE_TOKEN")
            })
            .unwrap(),
        )
    };
    let (r1, r2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let recorded = pipeline(r1.path(), &remote, true);
    let replay_path = r1.path().join("replay.jsonl");
    let replay = |_: &SplitDataset| -> Box<dyn PreferenceOracle> {
        Box::new(ReplayOracle::load(&replay_path).unwrap())
    };
    let replayed = pipeline(r2.path(), &replay, false);
    let remote_triples = read_triples(&recorded[0]).unwrap().len();
    let replay_same = std::fs::read(&recorded[0]).unwrap() == std::fs::read(&replayed[0]).unwrap()
        && std::fs::read(&recorded[2]).unwrap() == std::fs::read(&replayed[2]).unwrap();
    verdict(
        lex_same && replay_same && remote_triples > 0,
        format!(
            "lexical rerun identical: {lex_same}; remote replay identical triples+metrics: {replay_same} ({remote_triples} triples); {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let (_, split) = world();
    let (queries, _) = build_eval_queries(split);
    let cold: Vec<_> = queries.into_iter().filter(|q| q.is_cold).collect();
    let n_items = split.catalog.len() as f64;
    let cfg = ModelConfig {
        backbone: Backbone::Mf,
        dim: 16,
        ..ModelConfig::default()
    };
    let ks = [5usize, 10, 50];
    let mut sums = [0.0; 3];
    for seed in 0..20u64 {
        let params: ModelParams =
            init_params(&cfg, split.users.len(), &split.catalog, seed).unwrap();
        let r = Ranker::new(&params, split)
            .unwrap()
            .recall_at_k(&cold, &ks, Exec::Parallel)
            .unwrap();
        for (n, &k) in ks.iter().enumerate() {
            sums[n] += r.at(Group::Cold, k).unwrap();
        }
    }
    let trials = 20.0 * cold.len() as f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, &k) in ks.iter().enumerate() {
        let p = k as f64 / n_items;
        let half = 2.576 * (p * (1.0 - p) / trials).sqrt();
        let got = sums[n] / 20.0;
        ok &= (got - p).abs() <= half;
        parts.push(format!(
            "R@{k} {:.3}% in {:.3}%±{:.3}%",
            100.0 * got,
            100.0 * p,
            100.0 * half
        ));
    }
    verdict(ok, parts.join("; "))
}

/// Runs only when `COLDAUG_SPORTS_DIR` holds `interactions.tsv` and `items.jsonl`.
fn criterion_9() -> Outcome {
    let Some(dir) = std::env::var_os("COLDAUG_SPORTS_DIR").map(PathBuf::from) else {
        return Outcome {
            pass: None,
            detail: "COLDAUG_SPORTS_DIR not set; public data absent".into(),
        };
    };
    let (xs, _) = match load_interactions(&dir.join("interactions.tsv"), InteractionFormat::Tsv) {
        Ok(x) => x,
        Err(e) => return verdict(false, format!("cannot load data: {e}")),
    };
    let mut split = temporal_split(&xs, 0.7).unwrap();
    let (queries, _) = build_eval_queries(&split);
    let counts = (
        split.catalog.warm_ids.len(),
        split.catalog.cold_ids.len(),
        queries.len(),
    );
    let counts_ok = counts == (55_255, 2_751, 224_956);
    split
        .catalog
        .attach_meta(load_item_meta(&dir.join("items.jsonl")).unwrap_or_default());
    let oracle = build_oracle(&OracleConfig::Lexical, &split.catalog, None).unwrap();
    let aug = generate_augmentations(&split, oracle.as_ref(), &AugmentOptions::default()).unwrap();
    let mut cfg = experiment_config();
    cfg.arms = vec![Arm::NoAug, Arm::Aug];
    let out = run_experiment(&split, Some(&aug.triples), &cfg, 0, Exec::Parallel).unwrap();
    let (c0, c1) = (
        out[0].recall.at(Group::Cold, 50),
        out[1].recall.at(Group::Cold, 50),
    );
    let lift = matches!((c0, c1), (Some(a), Some(b)) if b > a);
    verdict(
        counts_ok && lift,
        format!("counts {counts:?}; cold R@50 {c0:?} -> {c1:?}"),
    )
}

fn main() {
    // `cargo test -- --list` and similar harness queries get no output.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(u8, &str, fn() -> Outcome); 9] = [
        (1, "loss unit values", criterion_1),
        (2, "gradient fidelity", criterion_2),
        (3, "retrieval correctness", criterion_3),
        (4, "augmentation lift", criterion_4),
        (5, "fraction sweep", criterion_5),
        (6, "oracle-quality sweep", criterion_6),
        (7, "determinism and replay", criterion_7),
        (8, "untrained-model sanity", criterion_8),
        (9, "public data split", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let o = run();
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("{tag} [{n}] {name}: {}", o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
