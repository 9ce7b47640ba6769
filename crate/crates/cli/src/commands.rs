use std::fs;
use std::path::Path;
use std::sync::Arc;

use coldaug::augmenter::{
    build_oracle, generate_augmentations, oracle_agreement, OracleConfig, PreferenceOracle,
};
use coldaug::datasets::{
    build_eval_queries, load_interactions, load_item_meta, load_split, save_split, temporal_split,
    InteractionFormat, SplitDataset,
};
use coldaug::evaluation::{
    comparison_table, run_experiment, sweep as run_sweep, write_json, Arm, Group, Ranker,
    SweepConfig,
};
use coldaug::model::{init_params, load_checkpoint, save_checkpoint, Backbone};
use coldaug::synthworld::{generate_world, World};
use coldaug::training::{read_triples, train as fit, AugTriple, TrainConfig, TrainingData};
use coldaug::{Error, Result};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;

/// Comparisons drawn when measuring oracle agreement on a new world.
const AGREEMENT_PAIRS: usize = 2000;

fn prepare_run_dir(config: &RunConfig, command: &str) -> Result<()> {
    let dir = config.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{command}.config.toml"));
    fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn open_split(config: &RunConfig) -> Result<SplitDataset> {
    let dir = config.split_dir();
    require(&dir, "split directory (run `coldaug split` first)")?;
    load_split(&dir)
}

/// The world when the oracle scores against one, else `None`.
fn open_world(config: &RunConfig) -> Result<Option<Arc<World>>> {
    match config.oracle.base() {
        OracleConfig::TrueScore { world: None } => {
            let dir = config.world_dir();
            require(&dir, "world directory (run `coldaug synth` first)")?;
            Ok(Some(Arc::new(World::load(&dir)?)))
        }
        _ => Ok(None),
    }
}

fn open_oracle(config: &RunConfig, split: &SplitDataset) -> Result<Box<dyn PreferenceOracle>> {
    let world = open_world(config)?;
    build_oracle(&config.oracle, &split.catalog, world.as_ref())
}

fn is_remote(config: &RunConfig) -> bool {
    matches!(config.oracle.base(), OracleConfig::RemoteLlm(_))
}

fn open_triples(config: &RunConfig) -> Result<Vec<AugTriple>> {
    let path = config.triples_path();
    require(&path, "triple file (run `coldaug augment` first)")?;
    read_triples(&path)
}

#[derive(Serialize)]
struct SynthReport {
    users: usize,
    warm_items: usize,
    cold_items: usize,
    interactions: usize,
    regenerations: u32,
    cold_queries: usize,
    warm_queries: usize,
    /// Recall@K of the true-affinity ranking, per K.
    bayes_cold: Vec<(usize, Option<f64>)>,
    bayes_warm: Vec<(usize, Option<f64>)>,
    lexical_agreement: Option<f64>,
    lexical_abstains: usize,
}

pub fn synth(config: &RunConfig) -> Result<()> {
    prepare_run_dir(config, "synth")?;
    let world = generate_world(&config.world)?;
    let dir = config.world_dir();
    world.save(&dir)?;
    info!("wrote world to {}", dir.display());

    let mut split = temporal_split(&world.interactions, config.world.train_fraction)?;
    split.catalog.attach_meta(world.metas.clone());
    let (queries, _) = build_eval_queries(&split);
    let (cold, warm): (Vec<_>, Vec<_>) = queries.into_iter().partition(|q| q.is_cold);
    let bayes = |qs: &[_]| -> Result<Vec<(usize, Option<f64>)>> {
        config
            .k_values
            .iter()
            .map(|&k| Ok((k, world.bayes_recall(qs, k)?)))
            .collect()
    };
    let lexical = build_oracle(&OracleConfig::Lexical, &split.catalog, None)?;
    let agreement = oracle_agreement(
        &world,
        &split,
        lexical.as_ref(),
        AGREEMENT_PAIRS,
        config.seed,
    )?;
    let report = SynthReport {
        users: config.world.n_users,
        warm_items: config.world.n_warm,
        cold_items: config.world.n_cold,
        interactions: world.interactions.len(),
        regenerations: world.regenerations,
        cold_queries: cold.len(),
        warm_queries: warm.len(),
        bayes_cold: bayes(&cold)?,
        bayes_warm: bayes(&warm)?,
        lexical_agreement: agreement.agreement,
        lexical_abstains: agreement.abstains,
    };
    write_json(&config.run_dir().join("synth.json"), &report)?;
    println!(
        "world: {} users, {} warm + {} cold items, {} interactions",
        report.users, report.warm_items, report.cold_items, report.interactions
    );
    for (&(k, c), &(_, w)) in report.bayes_cold.iter().zip(&report.bayes_warm) {
        println!(
            "true-affinity ceiling R@{k}: cold {} warm {}",
            pct(c),
            pct(w)
        );
    }
    println!(
        "lexical oracle agreement with truth: {} over {} pairs ({} abstained)",
        pct(agreement.agreement),
        agreement.pairs,
        agreement.abstains
    );
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}%", 100.0 * v))
}

pub fn split(config: &RunConfig) -> Result<()> {
    let (interactions, items) = config.inputs();
    require(&interactions, "interaction file")?;
    if let Some(items) = &items {
        require(items, "item metadata file")?;
    }
    prepare_run_dir(config, "split")?;
    let (xs, report) =
        load_interactions(&interactions, InteractionFormat::from_path(&interactions))?;
    if !report.malformed.is_empty() {
        warn!(
            "{}: skipped {} malformed lines",
            interactions.display(),
            report.malformed.len()
        );
    }
    let mut split = temporal_split(&xs, config.split.train_fraction)?;
    if let Some(items) = &items {
        split.catalog.attach_meta(load_item_meta(items)?);
    }
    let (_, queries) = build_eval_queries(&split);
    let dir = config.split_dir();
    save_split(&dir, &split)?;
    info!(
        "split at t={}: {} train, {} test, {} warm + {} cold items, {} queries ({} test events dropped)",
        split.split_time,
        split.train.len(),
        split.test.len(),
        split.catalog.warm_ids.len(),
        split.catalog.cold_ids.len(),
        queries.queries,
        queries.skipped_interactions
    );
    Ok(())
}

pub fn augment(config: &RunConfig) -> Result<()> {
    if let OracleConfig::RemoteLlm(r) = config.oracle.base() {
        if std::env::var_os(&r.auth_env).is_none() {
            return Err(Error::Config(format!(
                "remote oracle token variable {} is not set",
                r.auth_env
            )));
        }
    }
    let split = open_split(config)?;
    prepare_run_dir(config, "augment")?;
    let oracle = open_oracle(config, &split)?;
    let mut opts = config.augment_options();
    opts.output = Some(config.triples_path());
    if is_remote(config) {
        opts.record = Some(config.replay_path());
    }
    let out = generate_augmentations(&split, oracle.as_ref(), &opts)?;
    let r = &out.report;
    write_json(&config.run_dir().join("augment_report.json"), r)?;
    info!(
        "{} queries, {} pairs, {} triples, {} abstained, {} resumed",
        r.queries, r.pairs, r.triples, r.abstains, r.resumed
    );
    Ok(())
}

pub fn train(config: &RunConfig, arm: Arm) -> Result<()> {
    let split = open_split(config)?;
    let triples = if arm == Arm::Aug {
        open_triples(config)?
    } else {
        Vec::new()
    };
    prepare_run_dir(config, "train")?;
    let mut model = config.model.clone();
    if arm == Arm::Content {
        model.backbone = Backbone::ContentMf;
    }
    let data = TrainingData::build(&split, &triples, model.backbone)?;
    let initial = init_params(&model, split.users.len(), &split.catalog, config.seed)?;
    let train_config = TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    };
    let outcome = fit(&initial, &data, &train_config)?;
    let path = config.checkpoint_path(arm);
    save_checkpoint(&path, &outcome.params)?;
    write_json(
        &config.run_dir().join(format!("train-{}.json", arm.name())),
        &outcome.log,
    )?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn eval(config: &RunConfig) -> Result<()> {
    let split = open_split(config)?;
    let experiment = config.experiment();
    let triples = if experiment.arms.contains(&Arm::Aug) {
        Some(open_triples(config)?)
    } else {
        None
    };
    prepare_run_dir(config, "eval")?;
    let outcomes = run_experiment(
        &split,
        triples.as_deref(),
        &experiment,
        config.seed,
        config.exec,
    )?;
    let mut records = Vec::new();
    for o in &outcomes {
        save_checkpoint(&config.checkpoint_path(o.arm), &o.params)?;
        records.extend(o.recall.records(o.arm.name(), o.seed));
    }
    let dir = config.run_dir();
    write_json(&dir.join("metrics.json"), &records)?;
    let table = comparison_table(&outcomes);
    fs::write(dir.join("table.txt"), &table).map_err(|e| Error::io(dir.join("table.txt"), e))?;
    print!("{table}");
    Ok(())
}

pub fn eval_checkpoint(config: &RunConfig, path: &Path) -> Result<()> {
    require(path, "checkpoint")?;
    let split = open_split(config)?;
    prepare_run_dir(config, "eval")?;
    let params = load_checkpoint(path)?;
    let (queries, _) = build_eval_queries(&split);
    let recall =
        Ranker::new(&params, &split)?.recall_at_k(&queries, &config.k_values, config.exec)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    write_json(
        &config.run_dir().join(format!("metrics-{name}.json")),
        &recall.records(&name, config.seed),
    )?;
    for g in [Group::Cold, Group::Warm, Group::All] {
        let cells: Vec<String> = config
            .k_values
            .iter()
            .map(|&k| format!("R@{k} {}", pct(recall.at(g, k))))
            .collect();
        println!("{name} {:<4} {}", g.name(), cells.join("  "));
    }
    Ok(())
}

pub fn sweep(config: &RunConfig) -> Result<()> {
    let split = open_split(config)?;
    let world = open_world(config)?;
    if is_remote(config) {
        return Err(Error::Config(
            "sweeps regenerate triples per point; record a replay file and sweep over it instead"
                .into(),
        ));
    }
    prepare_run_dir(config, "sweep")?;
    let seeds: Vec<u64> = (config.seed..config.seed + config.sweep.seeds).collect();
    let sweep_config = SweepConfig {
        experiment: config.experiment(),
        augment: config.augment_options(),
        oracle: config.oracle.clone(),
    };
    let result = run_sweep(
        &split,
        world.as_ref(),
        config.sweep.axis,
        &config.sweep.values,
        &seeds,
        &sweep_config,
        config.exec,
    )?;
    let dir = config.run_dir();
    write_json(&dir.join("sweep.json"), &result)?;
    write_json(&dir.join("sweep_records.json"), &result.records())?;
    for s in result
        .summary
        .iter()
        .filter(|s| s.group == Group::Cold && s.k == *config.k_values.last().unwrap())
    {
        println!(
            "{} = {}: cold R@{} mean {:.2}% sd {:.2}% over {} seeds",
            config.sweep.axis.name(),
            s.value,
            s.k,
            100.0 * s.mean,
            100.0 * s.stddev,
            s.seeds
        );
    }
    Ok(())
}
