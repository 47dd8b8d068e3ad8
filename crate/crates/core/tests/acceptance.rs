//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as part of `cargo test`. Pass criterion numbers to select a subset,
//! e.g. `cargo test -p lstmvar --test acceptance -- 1 2 7`. Criteria 4, 5, 6
//! and 8 read MNIST and the sentiment corpus from `data/` (see
//! `scripts/fetch-data.sh`) and take several minutes each.
//!
//! A failing criterion prints FAIL but the process still exits 0, so that the
//! report is part of every `cargo test` run. Pass `--strict` to exit 1 on any
//! failure.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use lstmvar::bptt::{backward_sequence, forward_sequence};
use lstmvar::cell::{init_params, param_count, CellDims, CellParams, CellState, GateVariant};
use lstmvar::data::{convert_text, load_token_file};
use lstmvar::linalg::Matrix;
use lstmvar::optim::{EarlyStop, LrSchedule, StopDecision};
use lstmvar::runner::{
    evaluate, gradcheck, load_datasets, metrics_csv, train_on, Datasets, ExperimentConfig,
    GradcheckSpec, MetricsRecord, Task, TrainOutcome, GRADCHECK_TOLERANCE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Report {
    passed: bool,
    summary: String,
}

impl Report {
    fn new(passed: bool, summary: impl Into<String>) -> Self {
        Report {
            passed,
            summary: summary.into(),
        }
    }
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn mnist(split: &str) -> String {
    let d = data_dir().join("mnist");
    format!(
        "idx:{},{}",
        d.join(format!("{split}-images-idx3-ubyte")).display(),
        d.join(format!("{split}-labels-idx1-ubyte")).display()
    )
}

fn best(history: &[MetricsRecord]) -> (f64, usize) {
    history
        .iter()
        .fold((f64::NEG_INFINITY, 0), |(acc, e), r| {
            if r.test_acc > acc {
                (r.test_acc, r.epoch)
            } else {
                (acc, e)
            }
        })
}

fn progress(label: &str) -> impl FnMut(&MetricsRecord) + '_ {
    move |r| {
        eprintln!(
            "    {label} epoch {:>3}: loss {:.4} train {:.4} test {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.test_acc
        )
    }
}

/// Parameter counts of the three experiment tables.
fn criterion_1() -> Report {
    let expected = [
        ((1, 100), [40_800, 40_500, 40_200, 10_500]),
        ((28, 50), [15_800, 11_600, 11_450, 4_100]),
        ((128, 128), [131_584, 82_432, 82_048, 33_280]),
    ];
    let mut mismatches = Vec::new();
    for ((m, n), counts) in expected {
        for (v, want) in GateVariant::ALL.into_iter().zip(counts) {
            let got = param_count(v, CellDims::new(m, n).unwrap());
            let built = init_params(v, CellDims::new(m, n).unwrap(), 0).element_count();
            if got != want || built != want {
                mismatches.push(format!("{v} ({m},{n}): {got}/{built} != {want}"));
            }
        }
    }
    Report::new(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "all 12 table counts exact".to_string()
        } else {
            mismatches.join("; ")
        },
    )
}

/// Backpropagation against finite differences over the full grid.
fn criterion_2() -> Report {
    let mut worst = (0.0f64, String::new());
    let mut failures = 0;
    let mut count = 0;
    for variant in GateVariant::ALL {
        for input in [1, 3] {
            for hidden in [2, 5] {
                for steps in [1, 4, 7] {
                    for (batch, seed) in [1, 4].into_iter().flat_map(|b| (0..5).map(move |s| (b, s))) {
                        let spec = GradcheckSpec {
                            variant,
                            input,
                            hidden,
                            steps,
                            batch,
                            seed: seed + 100 * count,
                        };
                        let r = gradcheck(spec).expect("valid spec");
                        count += 1;
                        failures += usize::from(!r.passed);
                        if r.max_relative_error > worst.0 {
                            worst = (r.max_relative_error, r.summary());
                        }
                    }
                }
            }
        }
    }
    Report::new(
        failures == 0,
        format!(
            "{count} instances, {failures} above {GRADCHECK_TOLERANCE:e}; worst {:.3e} [{}]",
            worst.0, worst.1
        ),
    )
}

fn randomized(variant: GateVariant, dims: CellDims, rng: &mut ChaCha8Rng) -> CellParams {
    let mut p = init_params(variant, dims, rng.random());
    for t in p.tensors_mut() {
        if t.name.starts_with('b') {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
    }
    p
}

/// Reduced variants inside a zero-padded standard container.
fn criterion_3() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_grad = 0.0f64;
    let mut forward_mismatch = 0;
    let instances = 20;
    for k in 0..instances {
        let variant = [GateVariant::Lstm1, GateVariant::Lstm2, GateVariant::Lstm3][k % 3];
        let dims = CellDims::new(rng.random_range(1..5), rng.random_range(1..6)).unwrap();
        let (steps, batch) = (rng.random_range(1..8), rng.random_range(1..4));
        let reduced = randomized(variant, dims, &mut rng);
        let full = reduced.embed_in_standard();
        let inputs: Vec<Matrix> = (0..steps)
            .map(|_| Matrix::from_fn(dims.input, batch, |_, _| rng.sample(StandardNormal)))
            .collect();
        let initial = CellState::zeros(dims.hidden, batch);
        let (a, cache_a) = forward_sequence(&reduced, &inputs, &initial).unwrap();
        let (b, cache_b) = forward_sequence(&full, &inputs, &initial).unwrap();
        let same = |x: &Matrix, y: &Matrix| {
            x.as_slice().iter().zip(y.as_slice()).all(|(p, q)| p.to_bits() == q.to_bits())
        };
        let all_steps = cache_a.steps.iter().zip(&cache_b.steps).all(|(s, t)| same(&s.h, &t.h) && same(&s.c, &t.c));
        if !(same(&a.h, &b.h) && same(&a.c, &b.c) && all_steps) {
            forward_mismatch += 1;
        }
        let d_h = Matrix::from_fn(dims.hidden, batch, |_, _| rng.sample(StandardNormal));
        let (ga, dxa) = backward_sequence(&reduced, &cache_a, &d_h).unwrap();
        let (gb, dxb) = backward_sequence(&full, &cache_b, &d_h).unwrap();
        for t in ga.tensors() {
            let other = gb.tensor(&t.name).expect("standard holds every tensor");
            for (p, q) in t.data.iter().zip(other) {
                worst_grad = worst_grad.max((p - q).abs());
            }
        }
        for (x, y) in dxa.iter().zip(&dxb) {
            worst_grad = worst_grad.max(x.max_abs_diff(y));
        }
    }
    Report::new(
        forward_mismatch == 0 && worst_grad <= 1e-12,
        format!(
            "{instances} instances: forward bit-identical in {}/{instances}, max shared-gradient difference {worst_grad:.3e} (limit 1e-12)",
            instances - forward_mismatch
        ),
    )
}

fn rowwise_config(variant: GateVariant) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_task(Task::Rowwise);
    c.variant = variant;
    c.hidden = 50;
    c.eta0 = 1e-3;
    c.max_epochs = 30;
    c.train_size = 10_000;
    c.test_size = 2_000;
    c.train_data = mnist("train");
    c.test_data = mnist("t10k");
    c.record_time = false;
    c
}

fn load(config: &ExperimentConfig) -> Result<Datasets, Report> {
    load_datasets(config, std::path::Path::new("")).map_err(|e| {
        Report::new(
            false,
            format!("cannot load data ({e}); run scripts/fetch-data.sh first"),
        )
    })
}

/// Row-wise MNIST at desk scale. Returns the standard run for reuse.
fn criterion_4(standard_run: &mut Option<TrainOutcome>) -> Report {
    let data = match load(&rowwise_config(GateVariant::Standard)) {
        Ok(d) => d,
        Err(r) => return r,
    };
    let mut passed = true;
    let mut parts = Vec::new();
    for variant in GateVariant::ALL {
        let config = rowwise_config(variant);
        let start = Instant::now();
        let out = train_on(&config, &data, progress(variant.name())).expect("training runs");
        let (acc, epoch) = best(&out.history);
        let bar = if variant == GateVariant::Lstm3 { 0.92 } else { 0.95 };
        passed &= acc >= bar;
        parts.push(format!(
            "{variant} {acc:.4} (epoch {epoch}, need {bar}, {:.0}s)",
            start.elapsed().as_secs_f64()
        ));
        if variant == GateVariant::Standard {
            *standard_run = Some(out);
        }
    }
    Report::new(passed, format!("best test accuracy: {}", parts.join(", ")))
}

fn pixelwise_config(variant: GateVariant, eta0: f64, hidden: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_task(Task::Pixelwise);
    c.variant = variant;
    c.eta0 = eta0;
    c.hidden = hidden;
    c.seed = seed;
    c.train_data = mnist("train");
    c.test_data = mnist("t10k");
    c.record_time = false;
    c
}

/// Pixel-wise overfit check on 64 samples.
fn criterion_5a() -> Report {
    let mut config = pixelwise_config(GateVariant::Standard, 1e-4, 32, 1);
    config.max_epochs = 150;
    // memorization is the point, so early stopping on held-out data is off
    config.patience = config.max_epochs;
    config.train_size = 64;
    config.test_data = config.train_data.clone();
    config.test_size = 64;
    let data = match load(&config) {
        Ok(d) => d,
        Err(r) => return r,
    };
    let start = Instant::now();
    let out = train_on(&config, &data, |_| {}).expect("training runs");
    let hit = out.history.iter().find(|r| r.train_acc >= 0.99);
    let peak = out.history.iter().map(|r| r.train_acc).fold(0.0, f64::max);
    Report::new(
        hit.is_some(),
        match hit {
            Some(r) => format!(
                "train accuracy {:.4} at epoch {} (limit 150; {:.0}s)",
                r.train_acc,
                r.epoch,
                start.elapsed().as_secs_f64()
            ),
            None => format!("peak train accuracy {peak:.4} after 150 epochs"),
        },
    )
}

const FLUCTUATION_TRAIN: usize = 500;
const FLUCTUATION_TEST: usize = 250;
const FLUCTUATION_HIDDEN: usize = 32;
const FLUCTUATION_EPOCHS: usize = 30;

fn largest_drop(history: &[MetricsRecord]) -> f64 {
    history
        .windows(2)
        .map(|w| w[0].test_acc - w[1].test_acc)
        .fold(0.0, f64::max)
}

/// Pixel-wise fluctuation observation (reported, not gated).
fn criterion_5b() -> Report {
    let base = pixelwise_config(GateVariant::Standard, 1e-4, FLUCTUATION_HIDDEN, 1);
    let mut base = base;
    base.train_size = FLUCTUATION_TRAIN;
    base.test_size = FLUCTUATION_TEST;
    let data = match load(&base) {
        Ok(d) => d,
        Err(r) => return r,
    };
    let mut lines = Vec::new();
    let mut reproduced = 0;
    for seed in 1..=3 {
        let mut drops = Vec::new();
        for (variant, eta0) in [(GateVariant::Lstm2, 1e-3), (GateVariant::Standard, 1e-4)] {
            let mut c = pixelwise_config(variant, eta0, FLUCTUATION_HIDDEN, seed);
            c.max_epochs = FLUCTUATION_EPOCHS;
            c.patience = FLUCTUATION_EPOCHS;
            c.train_size = FLUCTUATION_TRAIN;
            c.test_size = FLUCTUATION_TEST;
            let label = format!("{variant}@{eta0:e} seed {seed}");
            let out = train_on(&c, &data, progress(&label)).expect("training runs");
            drops.push(largest_drop(&out.history));
        }
        if drops[0] >= 0.05 && drops[1] < 0.05 {
            reproduced += 1;
        }
        lines.push(format!(
            "seed {seed}: lstm2@1e-3 largest drop {:.3}, standard@1e-4 {:.3}",
            drops[0], drops[1]
        ));
    }
    Report::new(
        true,
        format!(
            "observation only; pattern seen in {reproduced}/3 seeds ({}); {FLUCTUATION_TRAIN} train / {FLUCTUATION_TEST} test, n={FLUCTUATION_HIDDEN}, {FLUCTUATION_EPOCHS} epochs",
            lines.join("; ")
        ),
    )
}

pub const SENTIMENT_ETA0: f64 = 1e-5;
pub const SENTIMENT_EPOCHS: usize = 100;

/// Binary sentiment at desk scale, all four variants.
fn criterion_6() -> Report {
    let raw = data_dir().join("imdb");
    let dir = tempfile::tempdir().expect("temp dir");
    let (train_tok, test_tok) = (dir.path().join("train.tok"), dir.path().join("test.tok"));
    if let Err(e) = convert_text(
        &[raw.join("train.txt"), raw.join("test.txt")],
        &[train_tok.clone(), test_tok.clone()],
        2_000,
    ) {
        return Report::new(false, format!("cannot convert corpus ({e}); run scripts/fetch-data.sh first"));
    }
    let balance = load_token_file(&train_tok, 2_000).map(|s| {
        let pos = s.labels[..5_000.min(s.len())].iter().filter(|&&l| l == 1).count();
        pos as f64 / 5_000f64.min(s.len() as f64)
    });

    let config_for = |variant| {
        let mut c = ExperimentConfig::for_task(Task::Tokens);
        c.variant = variant;
        c.vocab_limit = 2_000;
        c.maxlen = 40;
        c.hidden = 32;
        c.embedding_dim = 32;
        c.eta0 = SENTIMENT_ETA0;
        c.max_epochs = SENTIMENT_EPOCHS;
        c.train_size = 5_000;
        c.test_size = 1_000;
        c.train_data = format!("tokens:{}", train_tok.display());
        c.test_data = format!("tokens:{}", test_tok.display());
        c.record_time = false;
        c
    };
    let data = match load(&config_for(GateVariant::Standard)) {
        Ok(d) => d,
        Err(r) => return r,
    };
    let mut accs = Vec::new();
    let mut parts = Vec::new();
    for variant in GateVariant::ALL {
        let start = Instant::now();
        let out = train_on(&config_for(variant), &data, progress(variant.name())).expect("training runs");
        let (acc, epoch) = best(&out.history);
        accs.push(acc);
        parts.push(format!(
            "{variant} {acc:.4} (epoch {epoch}, {:.0}s)",
            start.elapsed().as_secs_f64()
        ));
    }
    let lo = accs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Report::new(
        lo >= 0.75 && hi - lo <= 0.05,
        format!(
            "best test accuracy {}; spread {:.4} (limit 0.05), floor 0.75; eta0 {SENTIMENT_ETA0:e}; positive share of train subset {}",
            parts.join(", "),
            hi - lo,
            balance.map_or("unknown".into(), |b| format!("{b:.3}"))
        ),
    )
}

/// Learning-rate coupling, early stopping and the best checkpoint.
fn criterion_7() -> Report {
    let mut notes = Vec::new();
    let lr = LrSchedule::new(1e-3).unwrap().lr_from_loss(10f64.ln()).unwrap();
    let lr_ok = (lr - 1e-2).abs() <= 1e-15;
    notes.push(format!("eta(1e-3, ln 10) = {lr:e}"));

    let mut es = EarlyStop::new(25);
    let halt = (1..=100).find(|&k| es.observe(0.5, k) == StopDecision::Stop);
    let stop_ok = halt == Some(26);
    notes.push(format!("patience 25 halts at observation {halt:?}"));

    // a short real run with a tight patience so the stop actually triggers
    let mut config = rowwise_config(GateVariant::Standard);
    config.hidden = 16;
    config.train_size = 600;
    config.test_size = 300;
    config.max_epochs = 40;
    config.patience = 3;
    let checkpoint_ok = match load(&config) {
        Ok(data) => {
            let out = train_on(&config, &data, |_| {}).expect("training runs");
            let (max_acc, max_epoch) = best(&out.history);
            let (_, cp_acc) = evaluate(&out.checkpoint.model, &data.test).unwrap();
            let tail = out.history.len() - 1 - max_epoch;
            notes.push(format!(
                "checkpoint accuracy {cp_acc:.4} vs history max {max_acc:.4} (epoch {max_epoch}, {tail} epochs after)"
            ));
            cp_acc == max_acc && out.checkpoint.best_epoch == Some(max_epoch) && tail <= config.patience
        }
        Err(r) => {
            notes.push(r.summary);
            false
        }
    };
    Report::new(lr_ok && stop_ok && checkpoint_ok, notes.join("; "))
}

/// Same seed, same config: identical metrics files.
fn criterion_8(standard_run: Option<TrainOutcome>) -> Report {
    let config = rowwise_config(GateVariant::Standard);
    let data = match load(&config) {
        Ok(d) => d,
        Err(r) => return r,
    };
    let first = match standard_run {
        Some(out) => out,
        None => train_on(&config, &data, |_| {}).expect("training runs"),
    };
    let second = train_on(&config, &data, |_| {}).expect("training runs");
    let (a, b) = (metrics_csv(&first.history), metrics_csv(&second.history));
    let same_ckpt = first.checkpoint.to_bytes() == second.checkpoint.to_bytes();
    Report::new(
        a == b && same_ckpt,
        format!(
            "{} epochs; metrics CSVs {} ({} bytes); checkpoints {}",
            first.history.len(),
            if a == b { "byte-identical" } else { "differ" },
            a.len(),
            if same_ckpt { "byte-identical" } else { "differ" }
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let selected: BTreeSet<String> = args.into_iter().filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| {
        selected.is_empty() || selected.contains(id) || selected.contains(&id[..1])
    };

    let mut standard_run = None;
    let mut results = Vec::new();
    let mut run = |id: &'static str, name: &str, f: &mut dyn FnMut() -> Report| {
        if !wanted(id) {
            return;
        }
        eprintln!("running criterion {id}: {name}");
        let start = Instant::now();
        let r = f();
        let line = format!(
            "{} criterion {id} ({name}): {} [{:.1}s]",
            if r.passed { "PASS" } else { "FAIL" },
            r.summary,
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        results.push((r.passed, line));
    };

    run("1", "parameter counts", &mut criterion_1);
    run("2", "gradient check grid", &mut criterion_2);
    run("3", "variant embedding", &mut criterion_3);
    run("4", "row-wise MNIST desk scale", &mut || criterion_4(&mut standard_run));
    run("5a", "pixel-wise overfit", &mut criterion_5a);
    run("5b", "pixel-wise fluctuation", &mut criterion_5b);
    run("6", "token sentiment desk scale", &mut criterion_6);
    run("7", "learning rate and early stopping", &mut criterion_7);
    run("8", "determinism", &mut || criterion_8(standard_run.take()));

    println!("\nacceptance summary:");
    for (_, line) in &results {
        println!("  {line}");
    }
    let failed = results.iter().filter(|(p, _)| !p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
