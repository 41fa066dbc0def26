use serde::Serialize;

use responsibility::dataset::{split, Dataset, DatasetManifest};
use responsibility::eval::{run_evaluation, Condition, EvalSetup, EvaluatorConfig};
use responsibility::experiments::{
    debugging_experiment, distribution_report, misclassified_report, seeds_experiment, DebugConfig,
    OutputDir, OutputManifest,
};
use responsibility::explain::{
    explanation_grid, to_jsonl, GridImage, Method, NearestNeighborExplainer,
    ResponsibilityExplainer,
};
use responsibility::ledger::{train_with_ledger, Aggregate, ResponsibilityLedger};
use responsibility::nn::{load_checkpoint, save_checkpoint, Network, TrainConfig, TrainReport};

use crate::config::{RunConfig, Subcommand};
use crate::CliError;

/// Attaches the failing step to a library error.
trait Step<T> {
    fn step(self, what: &str) -> Result<T, CliError>;
}

impl<T> Step<T> for responsibility::Result<T> {
    fn step(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_core(what, e))
    }
}

pub fn run(cmd: Subcommand, config: &RunConfig) -> Result<OutputManifest, CliError> {
    let root = config.output_root(cmd);
    let mut out = OutputDir::create(&root).step("creating output directory")?;
    match cmd {
        Subcommand::Train => train_cmd(config, &mut out)?,
        Subcommand::Explain => explain_cmd(config, &mut out)?,
        Subcommand::Eval => eval_cmd(config, &mut out)?,
        Subcommand::DebugData => debug_cmd(config, &mut out)?,
        Subcommand::Interclass => interclass_cmd(config, &mut out)?,
        Subcommand::Stats => stats_cmd(config, &mut out)?,
        Subcommand::Seeds => seeds_cmd(config, &mut out)?,
        Subcommand::Misclass => misclass_cmd(config, &mut out)?,
    }
    out.finish(cmd.name(), &config.echo()).step("writing manifest")
}

struct Data {
    train: Dataset,
    test: Dataset,
    class_names: Vec<String>,
}

fn load_data(config: &RunConfig) -> Result<Data, CliError> {
    let path = config.dataset.as_deref().expect("validated");
    let manifest = DatasetManifest::load(path).step("loading dataset manifest")?;
    let mut train = manifest.load_train().step("loading training data")?;
    let mut test = manifest.load_test().step("loading test data")?;
    let mut class_names = manifest.class_names.clone();
    if let Some(classes) = &config.classes {
        train = train.select_classes(classes).step("selecting classes")?;
        test = test.select_classes(classes).step("selecting classes")?;
        class_names = classes.iter().map(|&c| manifest.class_names[c].clone()).collect();
    }
    Ok(Data {
        train,
        test,
        class_names,
    })
}

fn sample(data: &Dataset, count: Option<usize>, seed: u64, field: &str) -> Result<Dataset, CliError> {
    match count {
        Some(n) if n > 0 && n < data.len() => data.sample(n, seed).step(field),
        Some(n) if n > data.len() => Err(CliError::Config(format!(
            "{field}: requested {n} of {} examples",
            data.len()
        ))),
        _ => Ok(data.clone()),
    }
}

fn train_config(config: &RunConfig, network: &Network) -> TrainConfig {
    TrainConfig {
        learning_rate: config.learning_rate.expect("defaulted") as f32,
        batch_size: config.batch_size.expect("defaulted"),
        epochs: config.epochs.expect("defaulted"),
        tracked_layers: config
            .tracked_layers
            .clone()
            .unwrap_or_else(|| vec![network.last_layer()]),
        rng_seed: config.seed.expect("defaulted"),
    }
}

/// A trained network, its ledger and the training split the ledger indexes.
struct Run {
    network: Network,
    ledger: ResponsibilityLedger,
    train: Dataset,
    report: Option<TrainReport>,
}

fn train_run(config: &RunConfig, train: &Dataset) -> Result<Run, CliError> {
    let seed = config.seed.expect("defaulted");
    let arch = config.architecture.expect("defaulted");
    let mut network = arch
        .build(train.shape(), train.class_count(), seed)
        .step("building network")?;
    let tc = train_config(config, &network);
    let (report, ledger) = train_with_ledger(&mut network, train, &tc).step("training")?;
    Ok(Run {
        network,
        ledger,
        train: train.clone(),
        report: Some(report),
    })
}

/// Loads `model` and `ledger` and rebuilds the training split from the ledger's index map.
fn load_run(config: &RunConfig, full_train: &Dataset) -> Result<Run, CliError> {
    let network = load_checkpoint(config.model.as_deref().expect("validated")).step("loading model")?;
    let ledger = ResponsibilityLedger::load(config.ledger.as_deref().expect("validated"))
        .step("loading ledger")?;
    ledger.check_model(&network).step("checking ledger against model")?;
    let positions = ledger
        .index_map()
        .iter()
        .map(|&i| {
            full_train.position_of(i).ok_or_else(|| {
                CliError::Config(format!(
                    "ledger: example index {i} is not in the training data of {}",
                    config.dataset.as_deref().unwrap().display()
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let train = full_train.subset(&positions).step("rebuilding training split")?;
    Ok(Run {
        network,
        ledger,
        train,
        report: None,
    })
}

fn obtain_run(config: &RunConfig, data: &Data) -> Result<Run, CliError> {
    if config.model.is_some() {
        load_run(config, &data.train)
    } else {
        let train = sample(&data.train, config.train_subset, config.seed.unwrap(), "train_subset")?;
        train_run(config, &train)
    }
}

fn write_report(out: &mut OutputDir, name: &str, report: &Option<TrainReport>) -> Result<(), CliError> {
    if let Some(r) = report {
        out.write_json(name, r).step("writing training report")?;
    }
    Ok(())
}

fn save_model(out: &mut OutputDir, name: &str, network: &Network) -> Result<(), CliError> {
    save_checkpoint(network, &out.path(name)).step("saving model")?;
    out.record(name).step("saving model")
}

fn write_png(out: &mut OutputDir, name: &str, tiles: &[&[f32]], data: &Dataset) -> Result<(), CliError> {
    let bytes = GridImage::from_tiles(tiles, data.shape())
        .and_then(|g| g.encode_png())
        .step("rendering image grid")?;
    out.write(name, bytes).step("writing image grid")?;
    Ok(())
}

fn train_cmd(config: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let data = load_data(config)?;
    let run = obtain_run(config, &data)?;
    save_model(out, "model.ckpt", &run.network)?;
    run.ledger.save(&out.path("ledger.bin")).step("saving ledger")?;
    out.record("ledger.bin").step("saving ledger")?;
    write_report(out, "train_report.json", &run.report)
}

fn explain_cmd(config: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let data = load_data(config)?;
    let run = load_run(config, &data.train)?;
    let index = config.query_index.unwrap();
    let position = data.test.position_of(index).ok_or_else(|| {
        CliError::Config(format!("query_index: {index} is not in the test data"))
    })?;
    let query = &data.test.examples()[position];
    let id = format!("test:{index}");
    let k = config.top_k.unwrap();
    let explanation = match config.method.unwrap() {
        Method::Responsibility => ResponsibilityExplainer::new(&run.network, &run.ledger)
            .and_then(|x| x.explain(&id, &query.pixels, Some(query.label), config.scope(), k)),
        Method::NearestNeighbor => NearestNeighborExplainer::new(&run.train, &run.network)
            .explain(&id, &query.pixels, Some(query.label), k),
    }
    .step("explaining query")?;
    out.write("explanation.jsonl", to_jsonl(std::slice::from_ref(&explanation)))
        .step("writing explanation")?;
    let tiles = explanation_grid(&query.pixels, &explanation, &run.train).step("collecting images")?;
    write_png(out, "explanation.png", &tiles, &data.test)
}

/// Actor split and training shared by `eval` and `misclass`.
struct Actor {
    run: Run,
    validation: Dataset,
    test: Dataset,
}

fn actor(config: &RunConfig, data: &Data) -> Result<Actor, CliError> {
    let seed = config.seed.unwrap();
    let pool = sample(&data.train, config.eval_pool, seed, "eval_pool")?;
    let f = config.split_fractions.as_ref().unwrap();
    let parts = split(&pool, [f[0], f[1], f[2]], seed).step("splitting actor data")?;
    let run = if config.model.is_some() {
        load_run(config, &pool)?
    } else {
        train_run(config, &parts.train)?
    };
    Ok(Actor {
        run,
        validation: parts.validation,
        test: parts.test,
    })
}

fn eval_cmd(config: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let data = load_data(config)?;
    let actor = actor(config, &data)?;
    let setup = EvalSetup {
        actor: &actor.run.network,
        actor_train: &actor.run.train,
        ledger: &actor.run.ledger,
        validation: &actor.validation,
        test: &actor.test,
        scope: config.scope(),
        balance_seed: config.seed.unwrap(),
    };
    let evaluator = EvaluatorConfig {
        learning_rate: config.evaluator_learning_rate.unwrap() as f32,
        batch_size: config.evaluator_batch_size.unwrap(),
        epochs: config.evaluator_epochs.unwrap(),
        ..EvaluatorConfig::default()
    };
    let conditions: Vec<Condition> = config.conditions.clone().unwrap();
    let report = run_evaluation(&setup, &conditions, config.seeds.as_ref().unwrap(), &evaluator)
        .step("evaluation")?;
    save_model(out, "actor.ckpt", &actor.run.network)?;
    write_report(out, "actor_train_report.json", &actor.run.report)?;
    out.write("eval_summary.csv", report.summary_csv()).step("writing summary")?;
    out.write("eval_per_seed.csv", report.per_seed_csv()).step("writing per-seed metrics")?;
    out.write_json("eval_report.json", &report).step("writing report")?;
    Ok(())
}

#[derive(Serialize)]
struct DebugSummary {
    fraction: f64,
    responsibility_found: Vec<usize>,
    random_found: Vec<usize>,
    mean_margin: f64,
}

fn debug_cmd(config: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let data = load_data(config)?;
    let debug = DebugConfig {
        architecture: config.architecture.unwrap(),
        learning_rate: config.learning_rate.unwrap() as f32,
        batch_size: config.batch_size.unwrap(),
        epochs: config.epochs.unwrap(),
        checkpoint_step: config.checkpoint_step.unwrap(),
    };
    let fraction = 0.2;
    let mut summary = DebugSummary {
        fraction,
        responsibility_found: Vec::new(),
        random_found: Vec::new(),
        mean_margin: 0.0,
    };
    let mut csv = String::new();
    for &seed in config.seeds.as_ref().unwrap() {
        let outcome = debugging_experiment(
            &data.train,
            &data.test,
            config.debug_examples.unwrap(),
            config.flip_fraction.unwrap(),
            &debug,
            seed,
        )
        .map_err(|e| CliError::from_core(&format!("debugging seed {seed}"), e))?;
        for curve in [&outcome.responsibility, &outcome.random] {
            let text = curve.to_csv();
            if csv.is_empty() {
                csv.push_str(&text);
            } else {
                csv.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
            }
        }
        let at = |c: &responsibility::experiments::DebuggingCurve| c.found_at_fraction(fraction).unwrap_or(0);
        summary.responsibility_found.push(at(&outcome.responsibility));
        summary.random_found.push(at(&outcome.random));
        out.write_json(&format!("flips_seed{seed}.json"), &outcome.flips)
            .step("writing flip record")?;
    }
    let n = summary.random_found.len() as f64;
    summary.mean_margin = summary
        .responsibility_found
        .iter()
        .zip(&summary.random_found)
        .map(|(a, b)| *a as f64 - *b as f64)
        .sum::<f64>()
        / n;
    out.write("debug_curves.csv", csv).step("writing curves")?;
    out.write_json("debug_summary.json", &summary).step("writing summary")?;
    Ok(())
}

#[derive(Serialize)]
struct InterclassSummary {
    row_argmax: Vec<usize>,
    diagonal_rows: usize,
}

fn interclass_cmd(config: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let data = load_data(config)?;
    let run = obtain_run(config, &data)?;
    let labels = run.train.labels();
    for (how, name) in [(Aggregate::Signed, "signed"), (Aggregate::Magnitude, "magnitude")] {
        let m = run
            .ledger
            .interclass_matrix(&run.network, &labels, how)
            .step("aggregating inter-class matrix")?;
        out.write(&format!("interclass_{name}.csv"), m.to_csv(Some(&data.class_names)))
            .step("writing matrix")?;
        if how == Aggregate::Signed {
            out.write_json(
                "interclass.json",
                &InterclassSummary {
                    row_argmax: m.row_argmax(),
                    diagonal_rows: m.diagonal_rows(),
                },
            )
            .step("writing summary")?;
        }
    }
    write_report(out, "train_report.json", &run.report)
}

fn stats_cmd(config: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let data = load_data(config)?;
    let run = obtain_run(config, &data)?;
    let report = distribution_report(&run.ledger, &run.network).step("computing statistics")?;
    out.write("distribution_summary.csv", report.stats.summary_csv())
        .step("writing summary")?;
    out.write("distribution_extremes.csv", report.stats.extremes_csv())
        .step("writing extremes")?;
    out.write("distribution_histogram.csv", report.stats.histogram.to_csv())
        .step("writing histogram")?;
    let values = report.values_csv(&run.ledger).step("exporting values")?;
    out.write("distribution_values.csv", values).step("writing values")?;
    out.write_json("distribution.json", &report.stats).step("writing statistics")?;
    write_report(out, "train_report.json", &run.report)
}

fn seeds_cmd(config: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let data = load_data(config)?;
    let train = sample(&data.train, config.train_subset, config.seed.unwrap(), "train_subset")?;
    let arch = config.architecture.unwrap();
    let probe = arch
        .build(train.shape(), train.class_count(), 0)
        .step("building network")?;
    let tc = train_config(config, &probe);
    let cmp = seeds_experiment(&train, arch, &tc, config.seeds.as_ref().unwrap(), config.list_len.unwrap())
        .step("seed comparison")?;
    out.write("seed_lists.csv", cmp.lists_csv()).step("writing lists")?;
    out.write("seed_jaccard.csv", cmp.jaccard_csv()).step("writing overlaps")?;
    let mut alignment = String::from("seed,label_alignment\n");
    for (seed, a) in &cmp.label_alignment {
        alignment.push_str(&format!("{seed},{a:.6}\n"));
    }
    out.write("seed_alignment.csv", alignment).step("writing alignment")?;
    for s in &cmp.seeds {
        for (kind, pick) in [
            ("max_pos", (|n: &responsibility::experiments::NeuronLists| n.max_pos[0]) as fn(&_) -> usize),
            ("freq_pos", |n| n.freq_pos[0]),
        ] {
            let tiles: Vec<&[f32]> = s
                .neurons
                .iter()
                .map(|n| {
                    let p = train.position_of(pick(n)).expect("ledger indices come from this split");
                    &train.examples()[p].pixels[..]
                })
                .collect();
            write_png(out, &format!("{kind}_seed{}.png", s.seed), &tiles, &train)?;
        }
    }
    Ok(())
}

fn misclass_cmd(config: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let data = load_data(config)?;
    let actor = actor(config, &data)?;
    let test = data
        .test
        .balanced_sample(config.misclass_per_class.unwrap(), config.seed.unwrap())
        .step("sampling test subset")?;
    let explainer =
        ResponsibilityExplainer::new(&actor.run.network, &actor.run.ledger).step("loading explainer")?;
    let report = misclassified_report(
        &explainer,
        &actor.run.network,
        &test,
        config.scope(),
        config.min_group_size.unwrap(),
    )
    .step("misclassification report")?;
    out.write("misclass_entries.csv", report.entries_csv()).step("writing entries")?;
    out.write("misclass_groups.csv", report.groups_csv()).step("writing groups")?;
    out.write_json("misclass_report.json", &report).step("writing report")?;
    for g in report.groups.iter().filter(|g| g.size >= report.min_group_size) {
        let shared = actor.run.train.position_of(g.shared_index).expect("explained from this split");
        let mut tiles: Vec<&[f32]> = vec![&actor.run.train.examples()[shared].pixels];
        for e in report
            .entries
            .iter()
            .filter(|e| e.true_class == g.true_class && e.predicted_class == g.predicted_class)
        {
            let p = test.position_of(e.query_index).expect("query from the subset");
            tiles.push(&test.examples()[p].pixels);
        }
        write_png(
            out,
            &format!("misclass_true{}_pred{}.png", g.true_class, g.predicted_class),
            &tiles,
            &test,
        )?;
    }
    Ok(())
}
