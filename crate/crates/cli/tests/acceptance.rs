//! Acceptance suite: one line per criterion, then a non-zero exit if any failed.
//!
//! Runs without the libtest harness so the report is always printed.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use pyranet_core::dataset::{
    normalize, resize_bilinear, rgb_to_gray, split_dataset, synth_dataset, RawImage,
};
use pyranet_core::training::{rprop_step, train_epoch, RpropState};
use pyranet_core::{
    evaluate, load_model, save_model, shape_plan, Network, ParamBanks, PyraNetConfig, Shape,
    Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

/// Model bytes, log bytes, stdout of one training run.
type RunArtifacts = (Vec<u8>, Vec<u8>, Vec<u8>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn pyranet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pyranet"))
        .args(args)
        .output()
        .expect("spawn pyranet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

fn gradient_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut slowest = Duration::ZERO;
    let seeds = [1u64, 2, 3, 4, 5];
    for seed in seeds {
        let start = Instant::now();
        let out = pyranet(&[
            "gradcheck",
            "--seed",
            &seed.to_string(),
            "--sample-params",
            "1000",
        ]);
        let took = start.elapsed();
        slowest = slowest.max(took);
        let text = stdout(&out);
        let line = text.lines().next().unwrap_or_default();
        let checked: usize = field(line, "checked")
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        let err: f64 = field(line, "max_rel_error")
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::INFINITY);
        ensure!(
            out.status.success(),
            "seed {seed}: exit {:?}: {line}",
            out.status.code()
        );
        ensure!(
            checked >= 1000,
            "seed {seed}: only {checked} parameters compared"
        );
        ensure!(err <= 1e-6, "seed {seed}: max relative error {err:e}");
        ensure!(
            took <= Duration::from_secs(60),
            "seed {seed}: took {took:?}"
        );
        worst = worst.max(err);
        let abs: f64 = field(line, "max_abs_error")
            .and_then(|v| v.parse().ok())
            .unwrap_or(0.0);
        worst_abs = worst_abs.max(abs);
    }
    Ok(format!(
        "{} seeds x 1000 params, worst max_rel_error {worst:e} (max abs diff {worst_abs:.1e}), slowest {:.1}s",
        seeds.len(),
        slowest.as_secs_f64()
    ))
}

fn shape_plan_and_count(dir: &Path) -> Outcome {
    let model = dir.join("init.pyrn");
    save_model(
        &Network::init(PyraNetConfig::default(), 42).unwrap(),
        &model,
    )
    .unwrap();
    let out = pyranet(&["inspect", "--model", model.to_str().unwrap()]);
    ensure!(
        out.status.success(),
        "inspect exited {:?}",
        out.status.code()
    );
    let text = stdout(&out);

    let expected = [
        ("input", "1x32x32"),
        ("C1", "64x28x28"),
        ("S2", "64x14x14"),
        ("C3", "32x12x12"),
        ("S4", "32x6x6"),
        ("C5", "16x1x1"),
        ("F6", "12x1x1"),
    ];
    let printed: Vec<(String, String)> = text
        .lines()
        .take(expected.len())
        .map(|l| {
            let mut it = l.split_whitespace();
            (
                it.next().unwrap_or_default().into(),
                it.next().unwrap_or_default().into(),
            )
        })
        .collect();
    for ((name, shape), (got_name, got_shape)) in expected.iter().zip(&printed) {
        ensure!(
            name == got_name && shape == got_shape,
            "expected {name} {shape}, inspect printed {got_name} {got_shape}"
        );
    }
    let plan = shape_plan(&PyraNetConfig::default()).unwrap();
    for (layer, (name, shape)) in plan.iter().zip(expected) {
        ensure!(
            layer.name == name && layer.shape.to_string() == shape,
            "shape_plan disagrees at {name}"
        );
    }

    // weights + one bias per output map or neuron
    let hand = 64 * (5 * 5 + 1) + 32 * (64 * 3 * 3 + 1) + 16 * (32 * 6 * 6 + 1) + 12 * (16 + 1);
    ensure!(hand == 38_780, "hand count {hand}");
    ensure!(
        text.lines().any(|l| l == "parameters 38780"),
        "inspect did not report 38780 parameters:\n{text}"
    );
    Ok(
        "1x32x32 -> 64x28x28 -> 64x14x14 -> 32x12x12 -> 32x6x6 -> 16x1x1 -> 12, 38780 params"
            .into(),
    )
}

fn convergence() -> Outcome {
    let data = synth_dataset(10, 42);
    let net = Network::init(PyraNetConfig::default(), 42).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        target_mse: 0.0,
        threads: 1,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let (net, history) = pyranet_core::fit(net, &data, &cfg).unwrap();
    let took = start.elapsed();
    let report = evaluate(&net, &data).unwrap();
    ensure!(history.len() == 100, "ran {} epochs", history.len());
    ensure!(
        history.iter().all(|m| m.mse.is_finite()),
        "non-finite MSE in history"
    );
    ensure!(
        report.mse < history[0].mse,
        "MSE did not drop from {:.4}",
        history[0].mse
    );
    ensure!(report.mse <= 0.08, "final training MSE {:.4}", report.mse);
    ensure!(
        report.accuracy >= 0.92,
        "final training accuracy {:.4}",
        report.accuracy
    );
    ensure!(took <= Duration::from_secs(300), "took {took:?}");
    Ok(format!(
        "120 samples, 100 epochs: mse {:.4}, accuracy {:.4}, {:.1}s single-threaded",
        report.mse,
        report.accuracy,
        took.as_secs_f64()
    ))
}

fn generalization() -> Outcome {
    let data = synth_dataset(40, 42);
    let (train, test) = split_dataset(&data, 0.8, 42).unwrap();
    ensure!(
        train.len() == 384 && test.len() == 96,
        "split {}/{}",
        train.len(),
        test.len()
    );
    let net = Network::init(PyraNetConfig::default(), 42).unwrap();
    let (net, history) = pyranet_core::fit(net, &train, &TrainConfig::default()).unwrap();
    let report = evaluate(&net, &test).unwrap();
    ensure!(
        report.accuracy >= 0.80,
        "held-out accuracy {:.4}",
        report.accuracy
    );
    Ok(format!(
        "384/96 split, {} epochs: held-out accuracy {:.4}, mse {:.4}",
        history.len(),
        report.accuracy,
        report.mse
    ))
}

fn one_param(value: f64) -> ParamBanks {
    let mut p = ParamBanks::zeros(&PyraNetConfig::default()).unwrap();
    *p.get_mut(0).unwrap() = value;
    p
}

fn rprop_semantics() -> Outcome {
    let cfg = TrainConfig {
        delta0: 0.07,
        ..TrainConfig::default()
    };
    let mut params = one_param(0.5);
    let mut state = RpropState::new(params.num_params(), cfg.delta0);
    let step = |state: &mut RpropState, params: &mut ParamBanks, g: f64| {
        rprop_step(state, &one_param(g), params, &cfg).unwrap();
        (state.steps[0], params.get(0).unwrap())
    };

    // fresh state: product with the zero previous gradient is 0, step stays
    let (d, p) = step(&mut state, &mut params, 0.3);
    ensure!(
        d == 0.07 && p == 0.5 - 0.07,
        "first step: delta {d}, param {p}"
    );
    let (d, p) = step(&mut state, &mut params, 0.3);
    // 0.07 * 1.2 = 0.084 up to rounding; compare against the rule's own arithmetic
    let grown: f64 = 0.07 * 1.2;
    ensure!((grown - 0.084).abs() < 1e-15, "0.07 * 1.2 = {grown}");
    ensure!(
        d == grown && p == (0.5 - 0.07) - grown,
        "second step: delta {d}, param {p}"
    );

    // sign flip: halve, skip the update, forget the gradient
    let before = p;
    let (d, p) = step(&mut state, &mut params, -0.1);
    ensure!(
        d == grown * 0.5 && p == before,
        "sign flip: delta {d}, param {p}"
    );
    ensure!(
        state.prev_grads[0] == 0.0,
        "gradient not zeroed after sign flip"
    );
    let (d, p) = step(&mut state, &mut params, -0.1);
    ensure!(
        d == grown * 0.5 && p == before + grown * 0.5,
        "after flip: delta {d}, param {p}"
    );

    // untouched parameters never move
    ensure!(
        params.iter().skip(1).all(|v| v == 0.0),
        "zero-gradient parameters moved"
    );

    // growth saturates at delta_max = 50
    let mut params = one_param(0.0);
    let mut state = RpropState::new(params.num_params(), 0.07);
    for _ in 0..60 {
        step(&mut state, &mut params, 1.0);
    }
    ensure!(
        state.steps[0] == 50.0,
        "delta_max clamp: {}",
        state.steps[0]
    );
    // alternating signs halve every other step down to delta_min = 1e-6
    for k in 0..80 {
        step(&mut state, &mut params, if k % 2 == 0 { -1.0 } else { 1.0 });
    }
    ensure!(
        state.steps[0] == 1e-6,
        "delta_min clamp: {}",
        state.steps[0]
    );
    Ok("0.07 -> 0.084, flip halves and skips, clamps at 50 and 1e-6".into())
}

fn determinism(dir: &Path) -> Outcome {
    let data = dir.join("det_data");
    let out = pyranet(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--per-class",
        "4",
        "--seed",
        "3",
    ]);
    ensure!(out.status.success(), "synth failed");

    let run = |tag: &str, threads: &str| -> Result<RunArtifacts, String> {
        let model = dir.join(format!("det_{tag}.pyrn"));
        let log = dir.join(format!("det_{tag}.csv"));
        let out = pyranet(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--epochs",
            "15",
            "--target-mse",
            "0",
            "--seed",
            "9",
            "--threads",
            threads,
            "--log",
            log.to_str().unwrap(),
        ]);
        ensure!(
            out.status.success(),
            "train ({tag}) exited {:?}",
            out.status.code()
        );
        Ok((
            fs::read(&model).unwrap(),
            fs::read(&log).unwrap(),
            out.stdout,
        ))
    };
    let a = run("a", "1")?;
    let b = run("b", "1")?;
    let c = run("c", "4")?;
    ensure!(a.0 == b.0, "model bytes differ between identical runs");
    ensure!(a.1 == b.1, "logs differ between identical runs");
    ensure!(a.0 == c.0, "model bytes differ between --threads 1 and 4");
    ensure!(a.1 == c.1, "logs differ between --threads 1 and 4");
    ensure!(a.2 == c.2, "stdout differs between --threads 1 and 4");
    let epochs = String::from_utf8_lossy(&a.1)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1;
    ensure!(epochs == 15, "log has {epochs} epoch lines");
    Ok(format!(
        "3 runs (threads 1, 1, 4): identical {}-byte models and {}-byte logs",
        a.0.len(),
        a.1.len()
    ))
}

fn round_trips(dir: &Path) -> Outcome {
    // a network that has moved away from its initialization
    let data = synth_dataset(1, 4);
    let cfg = TrainConfig {
        epochs: 5,
        target_mse: 0.0,
        ..TrainConfig::default()
    };
    let (net, _) = pyranet_core::fit(
        Network::init(PyraNetConfig::default(), 6).unwrap(),
        &data,
        &cfg,
    )
    .unwrap();
    let path = dir.join("rt.pyrn");
    save_model(&net, &path).unwrap();
    let back = load_model(&path).unwrap();
    let bits = |n: &Network| n.params.iter().map(f64::to_bits).collect::<Vec<_>>();
    ensure!(
        bits(&back) == bits(&net),
        "parameters not bit-identical after load"
    );
    ensure!(back.config() == net.config(), "config changed after load");

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(77);
    let shape = Shape::new(1, 32, 32);
    for k in 0..100 {
        let input: Vec<f64> = (0..shape.len())
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let t = Tensor::from_vec(shape, input).unwrap();
        let a: Vec<u64> = net
            .scores(&t)
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let b: Vec<u64> = back
            .scores(&t)
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        ensure!(a == b, "prediction {k} differs after load");
    }

    // BT.601: round(0.299 R + 0.587 G + 0.114 B)
    let rgb = RawImage::new(
        1,
        5,
        3,
        vec![255, 255, 255, 255, 0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0],
    )
    .unwrap();
    let gray = rgb_to_gray(&rgb).pixels;
    ensure!(gray == [255, 76, 150, 29, 0], "BT.601 gave {gray:?}");
    let plain = RawImage::gray(1, 3, vec![9, 99, 199]).unwrap();
    ensure!(rgb_to_gray(&plain) == plain, "gray input was altered");

    // 64x64 halves of 100 and 200: output column j samples x = 2j + 0.5
    let seam = RawImage::gray(
        64,
        64,
        (0..64 * 64)
            .map(|i| if i % 64 < 32 { 100 } else { 200 })
            .collect(),
    )
    .unwrap();
    let small = resize_bilinear(&seam, 32, 32).unwrap();
    for r in 0..32 {
        for c in 0..32 {
            let want = if c < 16 { 100 } else { 200 };
            ensure!(
                small.at(r, c) == want,
                "seam ({r},{c}) = {}",
                small.at(r, c)
            );
        }
    }

    let mut px = vec![77u8; 1024];
    px[0] = 0;
    px[1] = 255;
    px[2] = 128;
    let t = normalize(&RawImage::gray(32, 32, px).unwrap()).unwrap();
    let d = t.data();
    ensure!(d[0] == -1.0 && d[1] == 1.0, "endpoints {} {}", d[0], d[1]);
    ensure!(
        d[2] == 128.0 / 127.5 - 1.0 && (d[2] - 0.00392).abs() < 1e-5,
        "128 -> {}",
        d[2]
    );
    Ok("model bit-exact, 100 predictions identical, BT.601/seam/normalize fixtures exact".into())
}

fn loss_scale_invariance() -> Outcome {
    let data = synth_dataset(2, 5);
    let start = Network::init(PyraNetConfig::default(), 11).unwrap();
    let base = TrainConfig::default();
    let scaled = TrainConfig {
        loss_scale: 10.0,
        ..TrainConfig::default()
    };
    let (mut a, mut b) = (start.clone(), start);
    let mut sa = RpropState::for_network(&a, &base);
    let mut sb = RpropState::for_network(&b, &scaled);
    let bits = |n: &Network| n.params.iter().map(f64::to_bits).collect::<Vec<_>>();
    let epochs = 25;
    for epoch in 1..=epochs {
        train_epoch(&mut a, &data, &mut sa, &base).unwrap();
        train_epoch(&mut b, &data, &mut sb, &scaled).unwrap();
        ensure!(
            bits(&a) == bits(&b),
            "trajectories diverge at epoch {epoch}"
        );
        ensure!(sa.steps == sb.steps, "step sizes diverge at epoch {epoch}");
    }
    Ok(format!(
        "{epochs} epochs on 24 samples, loss x10: parameters bit-identical every epoch"
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: [Criterion; 8] = [
        ("gradient oracle", Box::new(gradient_oracle)),
        ("shape plan", Box::new(|| shape_plan_and_count(dir.path()))),
        ("convergence", Box::new(convergence)),
        ("generalization", Box::new(generalization)),
        ("rprop step semantics", Box::new(rprop_semantics)),
        ("determinism", Box::new(|| determinism(dir.path()))),
        ("round-trips", Box::new(|| round_trips(dir.path()))),
        ("loss-scale invariance", Box::new(loss_scale_invariance)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
