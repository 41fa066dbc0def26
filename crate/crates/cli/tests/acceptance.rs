//! Acceptance suite. Criteria run sequentially inside one test so their
//! timings are not distorted by each other; every criterion reports one
//! PASS/FAIL line on stderr and the test fails if any criterion failed.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use responsibility::dataset::{split, synthetic_blobs, Dataset, DatasetManifest};
use responsibility::eval::{accuracy, run_evaluation, Condition, EvalRun, EvalSetup, EvaluatorConfig};
use responsibility::experiments::{
    debugging_experiment, distribution_report, group_entries, misclassified_report, seed_lists,
    seeds_experiment, DebugConfig, ListKind, MisclassEntry,
};
use responsibility::explain::{explain_nn, ResponsibilityExplainer};
use responsibility::ledger::{
    train_with_ledger, Accumulator, Aggregate, ResponsibilityLedger, EXTREME_COUNT,
};
use responsibility::nn::arch::Architecture;
use responsibility::nn::{Activation, LayerSpec, Loss, Network, Shape, TrainConfig};
use responsibility::probe::ProbeScope;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn report(line: &str) {
    // Written past the test harness's output capture on purpose.
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn criterion(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    timed_criterion(id, name, limit, Duration::ZERO, f)
}

/// `carried` is time already spent on shared setup the criterion depends on.
fn timed_criterion(
    id: u32,
    name: &str,
    limit: Option<Duration>,
    carried: Duration,
    f: impl FnOnce() -> Outcome,
) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed() + carried;
    let result = match (result, limit) {
        (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.1?}, limit {l:?}")),
        (r, _) => r,
    };
    let limit = limit.map_or(String::new(), |l| format!(" limit {}s", l.as_secs()));
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    report(&format!(
        "acceptance {id:>2} [{tag}] {name}: {detail} ({:.1}s{limit})",
        elapsed.as_secs_f64()
    ));
    result.is_ok()
}

fn datasets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets")
}

fn load(name: &str) -> Result<(Dataset, Dataset), String> {
    let path = datasets_dir().join(format!("{name}.toml"));
    let m = DatasetManifest::load(&path).map_err(|e| format!("{e} (fetch with scripts/fetch_data.sh)"))?;
    let train = m.load_train().map_err(|e| e.to_string())?;
    let test = m.load_test().map_err(|e| e.to_string())?;
    Ok((train, test))
}

fn ledger_oracle() -> Outcome {
    let mut worst = 0f64;
    let mut argmax_checked = 0;
    for batch in [1, 4] {
        let data = synthetic_blobs(50, 6, 3, 7);
        let mut net = Architecture::Mlp { hidden: 8 }.build(data.shape(), 3, 7).unwrap();
        check!(net.param_count() <= 200, "{} weights", net.param_count());
        let config = TrainConfig {
            learning_rate: 0.05,
            batch_size: batch,
            epochs: 3,
            tracked_layers: vec![1, 2],
            rng_seed: 7,
        };
        let mut twin = net.clone();
        let (_, ledger) = train_with_ledger(&mut net, &data, &config).map_err(|e| e.to_string())?;
        let oracle = common::snapshot_ledger(&mut twin, &data, &config);
        check!(ledger.tracked() == &oracle.weights[..], "tracked weights differ");
        for (i, &w) in oracle.weights.iter().enumerate() {
            for (acc, want) in [
                (Accumulator::Magnitude, &oracle.mag[i]),
                (Accumulator::Positive, &oracle.pos[i]),
                (Accumulator::Negative, &oracle.neg[i]),
            ] {
                let got = ledger.weight_values(acc, w).unwrap();
                for m in 0..got.len() {
                    let scale = got[m].abs().max(want[m].abs());
                    if scale > 0.0 {
                        worst = worst.max((got[m] - want[m]).abs() / scale);
                    }
                }
                let a = responsibility::ledger::argmax_f64(&got);
                let b = common::SnapshotLedger::argmax(want);
                check!(a == b, "batch {batch}: {w} {acc:?} argmax {a} vs oracle {b}");
                argmax_checked += 1;
            }
        }
    }
    check!(worst <= 1e-6, "max relative error {worst:e} > 1e-6");
    Ok(format!(
        "batch 1 and 4: max rel err {worst:.1e} (tol 1e-6), {argmax_checked} argmaxes agree"
    ))
}

fn gradient_check() -> Outcome {
    let net = Network::new(
        Shape::new(1, 6, 6),
        &[
            LayerSpec::conv(2, 3, 1, Activation::Relu),
            LayerSpec::max_pool(2),
            LayerSpec::flatten(),
            LayerSpec::dense(5, Activation::Relu),
            LayerSpec::dense(3, Activation::Softmax),
        ],
        Loss::CrossEntropy,
        11,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f32> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, analytic) = net.gradient(&x, 2).map_err(|e| e.to_string())?;
    let numeric = common::numeric_gradient(&net, &x, 2, 1e-5);
    let agree = analytic
        .iter()
        .zip(&numeric)
        .filter(|(a, n)| {
            let (a, n) = (**a as f64, **n);
            (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-8)
        })
        .count();
    let share = agree as f64 / analytic.len() as f64;
    check!(share >= 0.95, "only {agree}/{} parameters agree", analytic.len());
    Ok(format!(
        "{agree}/{} parameters within 1e-4 relative ({:.1}%, need 95%)",
        analytic.len(),
        100.0 * share
    ))
}

fn trivial_invariants() -> Outcome {
    let data = synthetic_blobs(30, 5, 3, 4);
    let config = |lr: f32| TrainConfig {
        learning_rate: lr,
        batch_size: 2,
        epochs: 2,
        tracked_layers: vec![1, 2],
        rng_seed: 4,
    };
    let mut net = Architecture::Mlp { hidden: 6 }.build(data.shape(), 3, 4).unwrap();
    let (_, zero) = train_with_ledger(&mut net, &data, &config(0.0)).map_err(|e| e.to_string())?;
    for &w in zero.tracked() {
        for acc in [Accumulator::Magnitude, Accumulator::Positive, Accumulator::Negative] {
            check!(
                zero.weight_values(acc, w).unwrap().iter().all(|&v| v == 0.0),
                "lr = 0 left a nonzero {acc:?} entry on {w}"
            );
        }
    }

    let one = synthetic_blobs(1, 5, 3, 5);
    let mut net = Architecture::Mlp { hidden: 6 }.build(one.shape(), 3, 5).unwrap();
    let (_, single) = train_with_ledger(&mut net, &one, &config(0.1)).map_err(|e| e.to_string())?;
    let mut nonzero = 0;
    for &w in single.tracked() {
        if single.value(Accumulator::Magnitude, w, 0).unwrap() > 0.0 {
            nonzero += 1;
            check!(single.most_responsible(w, 1).unwrap()[0].0 == 0, "{w}");
        }
    }
    check!(nonzero > 0, "single-example run changed no weight");

    let mut net = Network::new(
        Shape::new(1, 6, 6),
        &[
            LayerSpec::conv(3, 3, 0, Activation::Relu),
            LayerSpec::flatten(),
            LayerSpec::dense(3, Activation::Softmax),
        ],
        Loss::CrossEntropy,
        2,
    )
    .unwrap();
    let images: Vec<Vec<f32>> = (0..24)
        .map(|i| (0..36).map(|p| ((i * 7 + p * 3) % 11) as f32 / 10.0).collect())
        .collect();
    let conv_data = Dataset::from_parts("c", Shape::new(1, 6, 6), 3, images, (0..24).map(|i| i % 3).collect())
        .unwrap();
    let (_, full) = train_with_ledger(
        &mut net,
        &conv_data,
        &TrainConfig {
            tracked_layers: vec![0, 2],
            ..config(0.05)
        },
    )
    .map_err(|e| e.to_string())?;
    let mut checked = 0;
    for ledger in [&zero, &single, &full] {
        for &w in ledger.tracked() {
            let mag = ledger.weight_values(Accumulator::Magnitude, w).unwrap();
            let pos = ledger.weight_values(Accumulator::Positive, w).unwrap();
            let neg = ledger.weight_values(Accumulator::Negative, w).unwrap();
            for m in 0..mag.len() {
                check!(
                    common::rel_close(mag[m], pos[m] + neg[m], 1e-6),
                    "{w} m={m}: R_mag {} vs R_pos + R_neg {}",
                    mag[m],
                    pos[m] + neg[m]
                );
                checked += 1;
            }
        }
    }
    Ok(format!(
        "lr=0 ledger all zero; single example top for {nonzero} weights; R_mag = R_pos + R_neg on {checked} entries"
    ))
}

fn nn_exactness(network: &Network, train: &Dataset, queries: &Dataset) -> Outcome {
    let split_set = train.sample(5000, 11).map_err(|e| e.to_string())?;
    check!(queries.len() >= 1000, "need 1000 queries");
    let queries = queries.sample(1000, 12).map_err(|e| e.to_string())?;
    let examples = split_set.examples();
    for q in queries.examples() {
        let got = explain_nn(&split_set, network, &q.pixels, 1).map_err(|e| e.to_string())?;
        let class = network.predict_class(&q.pixels).unwrap();
        let mut best: Option<(f64, usize)> = None;
        for (p, e) in examples.iter().enumerate() {
            if e.label != class {
                continue;
            }
            let d: f64 = q
                .pixels
                .iter()
                .zip(&e.pixels)
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum::<f64>()
                / q.pixels.len() as f64;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, p));
            }
        }
        let (score, position) = best.ok_or("predicted class absent from split")?;
        let top = got.top();
        check!(
            top.position == position && top.score == score,
            "query {}: got ({}, {}) brute force ({position}, {score})",
            q.index,
            top.position,
            top.score
        );
    }
    Ok("1000 queries against 5000 examples match the exhaustive argmin exactly".into())
}

struct MnistRun {
    network: Network,
    ledger: ResponsibilityLedger,
    train: Dataset,
}

fn mnist_run(train_full: &Dataset) -> Result<MnistRun, String> {
    let train = train_full.sample(10_000, 0).map_err(|e| e.to_string())?;
    let mut network = Architecture::LeNet5.build(train.shape(), 10, 0).unwrap();
    let config = TrainConfig {
        learning_rate: 0.01,
        batch_size: 1,
        epochs: 2,
        tracked_layers: vec![network.last_layer()],
        rng_seed: 0,
    };
    let (_, ledger) = train_with_ledger(&mut network, &train, &config).map_err(|e| e.to_string())?;
    Ok(MnistRun {
        network,
        ledger,
        train,
    })
}

fn diagonal_dominance(run: &MnistRun) -> Outcome {
    let m = run
        .ledger
        .interclass_matrix(&run.network, &run.train.labels(), Aggregate::Signed)
        .map_err(|e| e.to_string())?;
    let diag = m.diagonal_rows();
    check!(diag >= 8, "row maximum on the diagonal for {diag}/10 classes; argmax {:?}", m.row_argmax());
    Ok(format!("row maximum on the diagonal for {diag}/10 classes (need 8)"))
}

fn distribution_shape(run: &MnistRun) -> Outcome {
    let r = distribution_report(&run.ledger, &run.network).map_err(|e| e.to_string())?;
    let s = &r.stats;
    check!(s.mean.abs() < 0.05 * s.std, "|mean| {:e} vs std {:e}", s.mean, s.std);
    check!(
        s.max.len() == EXTREME_COUNT && s.min.len() == EXTREME_COUNT,
        "extremes {} + {}",
        s.max.len(),
        s.min.len()
    );
    let top = r.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bottom = r.values.iter().cloned().fold(f64::INFINITY, f64::min);
    check!(s.max[0].value == top && s.min[0].value == bottom, "extremes are not the global max/min");
    check!(s.max.windows(2).all(|w| w[0].value >= w[1].value), "max list not descending");
    check!(s.min.windows(2).all(|w| w[0].value <= w[1].value), "min list not ascending");
    for e in s.max.iter().chain(&s.min) {
        let signed = run.ledger.value(Accumulator::Positive, e.weight, e.position).unwrap()
            - run.ledger.value(Accumulator::Negative, e.weight, e.position).unwrap();
        check!(signed == e.value, "extreme at {} m={} does not match the ledger", e.weight, e.position);
    }
    let csv = s.extremes_csv();
    check!(csv.lines().count() == 1 + 2 * EXTREME_COUNT, "extremes csv has {} lines", csv.lines().count());
    Ok(format!(
        "mean {:.2e}, std {:.2e}, |mean|/std = {:.1e} (need < 0.05); 20 + 20 extremes consistent",
        s.mean,
        s.std,
        s.mean.abs() / s.std
    ))
}

fn debugging_margin(train: &Dataset, test: &Dataset) -> Outcome {
    let pool = train.select_classes(&[0, 6]).map_err(|e| e.to_string())?;
    let test = test.select_classes(&[0, 6]).map_err(|e| e.to_string())?;
    let config = DebugConfig::default();
    let mut margins = Vec::new();
    let mut per_seed = Vec::new();
    for seed in 0..5u64 {
        let o = debugging_experiment(&pool, &test, 1000, 0.1, &config, seed).map_err(|e| e.to_string())?;
        for c in [&o.responsibility, &o.random] {
            check!(c.total_flips == 100, "seed {seed}: {} flips", c.total_flips);
            check!(c.found_at.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {} curve not monotone", c.ordering);
            check!(c.found_at_fraction(1.0) == Some(100), "seed {seed}: {} found {:?} at 1.0", c.ordering, c.found_at_fraction(1.0));
        }
        let a = o.responsibility.found_at_fraction(0.2).ok_or("no 0.2 checkpoint")?;
        let b = o.random.found_at_fraction(0.2).ok_or("no 0.2 checkpoint")?;
        margins.push(a as f64 - b as f64);
        per_seed.push(format!("{a}/{b}"));
    }
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    check!(mean >= 5.0, "mean margin {mean} < 5 (responsibility/random per seed: {per_seed:?})");
    Ok(format!(
        "found at 0.2 responsibility/random per seed {}; mean margin {mean:.1} (need >= 5); curves monotone, 100/100 at 1.0",
        per_seed.join(" ")
    ))
}

struct Actor {
    network: Network,
    ledger: ResponsibilityLedger,
    train: Dataset,
    validation: Dataset,
    test: Dataset,
}

fn fashion_actor(train_full: &Dataset) -> Result<Actor, String> {
    let pool = train_full.sample(12_000, 0).map_err(|e| e.to_string())?;
    let parts = split(&pool, [0.5, 1.0 / 3.0, 1.0 / 6.0], 0).map_err(|e| e.to_string())?;
    let mut network = Architecture::LeNet5.build(pool.shape(), 10, 0).unwrap();
    let config = TrainConfig {
        learning_rate: 0.01,
        batch_size: 1,
        epochs: 1,
        tracked_layers: vec![network.last_layer()],
        rng_seed: 0,
    };
    let (_, ledger) = train_with_ledger(&mut network, &parts.train, &config).map_err(|e| e.to_string())?;
    Ok(Actor {
        network,
        ledger,
        train: parts.train,
        validation: parts.validation,
        test: parts.test,
    })
}

fn evaluator_ordering(actor: &Actor) -> Outcome {
    let actor_acc = accuracy(&actor.network, &actor.test).map_err(|e| e.to_string())?;
    check!((0.6..=0.8).contains(&actor_acc), "actor test accuracy {actor_acc:.3} outside [0.6, 0.8]");
    let setup = EvalSetup {
        actor: &actor.network,
        actor_train: &actor.train,
        ledger: &actor.ledger,
        validation: &actor.validation,
        test: &actor.test,
        scope: ProbeScope::default(),
        balance_seed: 0,
    };
    let run: EvalRun = run_evaluation(&setup, &Condition::ALL, &[0, 1, 2, 3, 4], &EvaluatorConfig::default())
        .map_err(|e| e.to_string())?;
    let mean = |c: Condition| run.report(c).and_then(|r| r.accuracy.mean);
    let base = mean(Condition::Baseline).ok_or("baseline failed")?;
    let resp = mean(Condition::Responsibility).ok_or("responsibility failed")?;
    let nn = mean(Condition::NearestNeighbor);
    let gap = 100.0 * (resp - base);
    let nn_text = nn.map_or("failed".to_string(), |v| format!("{:.1}%", 100.0 * v));
    check!(gap >= 2.0, "responsibility {:.1}% vs baseline {:.1}% (gap {gap:.1} pp)", 100.0 * resp, 100.0 * base);
    Ok(format!(
        "actor {:.1}%; evaluator accuracy responsibility {:.1}% vs baseline {:.1}% (+{gap:.1} pp, need 2); nearest-neighbor {nn_text} (reported only)",
        100.0 * actor_acc,
        100.0 * resp,
        100.0 * base
    ))
}

fn misclassification_sharing(actor: &Actor, test_full: &Dataset) -> Outcome {
    let subset = test_full.balanced_sample(60, 0).map_err(|e| e.to_string())?;
    let explainer = ResponsibilityExplainer::new(&actor.network, &actor.ledger).map_err(|e| e.to_string())?;
    let scope = ProbeScope::default();
    let report = misclassified_report(&explainer, &actor.network, &subset, scope, 3).map_err(|e| e.to_string())?;

    // Regrouping oracle: explain every misclassified example again and group by hand.
    let mut entries = Vec::new();
    for e in subset.examples() {
        let predicted = actor.network.predict_class(&e.pixels).unwrap();
        if predicted != e.label {
            let x = explainer.explain("q", &e.pixels, None, scope, 1).map_err(|e| e.to_string())?;
            entries.push(MisclassEntry {
                query_index: e.index,
                true_class: e.label,
                predicted_class: predicted,
                responsible_position: x.top().position,
                responsible_index: x.top().index,
            });
        }
    }
    check!(entries == report.entries, "per-query entries differ from the explainer");
    let mut by_pair = std::collections::BTreeMap::<(usize, usize), Vec<usize>>::new();
    for e in &entries {
        by_pair.entry((e.true_class, e.predicted_class)).or_default().push(e.responsible_index);
    }
    check!(by_pair.len() == report.groups.len(), "group count differs");
    for (g, ((t, p), members)) in report.groups.iter().zip(&by_pair) {
        let best = members
            .iter()
            .map(|i| members.iter().filter(|j| *j == i).count())
            .max()
            .unwrap();
        check!(
            (g.true_class, g.predicted_class, g.size, g.shared_count) == (*t, *p, members.len(), best),
            "group ({t}, {p}) differs from regrouping"
        );
    }
    check!(group_entries(&entries) == report.groups, "grouping not reproducible");
    check!(
        report.sharing_groups >= 1,
        "no group of size >= 3 has a majority sharing one example ({} eligible)",
        report.eligible_groups
    );
    Ok(format!(
        "{} of {} misclassified; {} of {} groups (size >= 3) share one most responsible example; regrouping oracle agrees",
        report.entries.len(),
        report.evaluated,
        report.sharing_groups,
        report.eligible_groups
    ))
}

fn seed_uniqueness(train_full: &Dataset) -> Outcome {
    let data = train_full.sample(5000, 0).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        learning_rate: 0.01,
        batch_size: 1,
        epochs: 1,
        tracked_layers: Vec::new(),
        rng_seed: 0,
    };
    let cmp = seeds_experiment(&data, Architecture::LeNet5, &config, &[1, 2, 3], 10).map_err(|e| e.to_string())?;
    let again = seed_lists(&data, Architecture::LeNet5, &config, 1, 10).map_err(|e| e.to_string())?;
    check!(again == cmp.seeds[0], "seed 1 lists differ between runs");
    for (seed, a) in &cmp.label_alignment {
        check!(*a >= 0.8, "seed {seed}: label alignment {a}");
    }
    let j = cmp.jaccard(ListKind::MaxPos).unwrap().mean;
    let alignment: Vec<String> = cmp.label_alignment.iter().map(|(s, a)| format!("{s}:{a:.2}")).collect();
    Ok(format!(
        "repeat of seed 1 identical; max-pos top-1 label alignment per seed {} (need 0.8); mean max-pos Jaccard {j:.3} (reported)",
        alignment.join(" ")
    ))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    support::fixture(root);
    let mut compared = 0;
    let run = |cmd: &str, extra: &[&str], out: &str| -> Result<(), String> {
        let cfg = support::write_config(root, &format!("{cmd}.toml"), support::small_config(cmd));
        let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--output-dir", out];
        args.extend_from_slice(extra);
        let o = support::resp(&args, root);
        if o.status.success() {
            Ok(())
        } else {
            Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr)))
        }
    };
    for cmd in ["train", "eval", "debug-data", "interclass", "stats", "seeds", "misclass"] {
        run(cmd, &[], &format!("{cmd}-a"))?;
        run(cmd, &[], &format!("{cmd}-b"))?;
        let (a, b) = (
            support::checksums(&root.join(format!("{cmd}-a"))),
            support::checksums(&root.join(format!("{cmd}-b"))),
        );
        check!(a == b, "{cmd}: checksums differ");
        compared += a.len();
    }
    let explain_cfg = support::write_config(root, "explain.toml", "model = \"train-a/model.ckpt\"\nledger = \"train-a/ledger.bin\"\nquery_index = 5\n");
    for out in ["explain-a", "explain-b"] {
        let o = support::resp(&["explain", "--config", explain_cfg.to_str().unwrap(), "--output-dir", out], root);
        check!(o.status.success(), "explain failed: {}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (support::checksums(&root.join("explain-a")), support::checksums(&root.join("explain-b")));
    check!(a == b, "explain: checksums differ");
    compared += a.len();
    Ok(format!("all 8 subcommands run twice: {compared} files with identical checksums"))
}

#[test]
fn acceptance() {
    let mut passed = Vec::new();
    let secs = |s: u64| Some(Duration::from_secs(s));
    passed.push(criterion(1, "ledger equals snapshot-diff oracle", secs(10), ledger_oracle));
    passed.push(criterion(2, "gradient check", secs(10), gradient_check));
    passed.push(criterion(3, "trivial invariants", None, trivial_invariants));

    let mnist = load("mnist");
    let mnist_run_result = {
        let start = Instant::now();
        let r = mnist.as_ref().map_err(|e| e.clone()).and_then(|(train, _)| mnist_run(train));
        (r, start.elapsed())
    };
    passed.push(criterion(4, "nearest-neighbour exactness", None, || {
        let (train, test) = mnist.as_ref().map_err(|e| e.clone())?;
        let run = mnist_run_result.0.as_ref().map_err(|e| e.clone())?;
        nn_exactness(&run.network, train, test)
    }));
    let train_time = mnist_run_result.1;
    passed.push(timed_criterion(5, "inter-class diagonal dominance", secs(600), train_time, || {
        let run = mnist_run_result.0.as_ref().map_err(|e| e.clone())?;
        diagonal_dominance(run).map(|d| format!("{d}; includes {:.1}s training", train_time.as_secs_f64()))
    }));
    passed.push(criterion(6, "signed value distribution", None, || {
        distribution_shape(mnist_run_result.0.as_ref().map_err(|e| e.clone())?)
    }));
    drop(mnist_run_result);

    let fashion = load("fashion-mnist");
    passed.push(criterion(7, "data debugging margin", secs(1200), || {
        let (train, test) = fashion.as_ref().map_err(|e| e.clone())?;
        debugging_margin(train, test)
    }));
    let start = Instant::now();
    let actor = fashion.as_ref().map_err(|e| e.clone()).and_then(|(train, _)| fashion_actor(train));
    let actor_time = start.elapsed();
    passed.push(timed_criterion(8, "evaluator ordering", secs(1800), actor_time, || {
        evaluator_ordering(actor.as_ref().map_err(|e| e.clone())?)
    }));
    passed.push(criterion(9, "misclassification sharing", None, || {
        let (_, test) = fashion.as_ref().map_err(|e| e.clone())?;
        misclassification_sharing(actor.as_ref().map_err(|e| e.clone())?, test)
    }));
    drop(actor);

    passed.push(criterion(10, "seed uniqueness and label alignment", None, || {
        let (train, _) = mnist.as_ref().map_err(|e| e.clone())?;
        seed_uniqueness(train)
    }));
    passed.push(criterion(11, "end-to-end CLI determinism", None, cli_determinism));

    let ok = passed.iter().filter(|p| **p).count();
    report(&format!("acceptance summary: {ok}/{} criteria passed", passed.len()));
    assert_eq!(ok, passed.len(), "acceptance criteria failed; see the lines above");
}
