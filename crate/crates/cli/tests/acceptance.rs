//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr, bypassing the harness's output capture, before asserting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use elsym_core::attribution::{
    endpoint_gap, integrated_gradients, layer_conductance, per_symbol_report,
};
use elsym_core::channel::{gumbel_noise, hard_decode, GumbelSoftmaxSampler, Noise};
use elsym_core::data::generate_synthetic;
use elsym_core::loss::{softmax, softmax_cross_entropy};
use elsym_core::train::{evaluate, train};
use elsym_core::{
    Activation, Architecture, AttributionConfig, DenseLayer, EvalReport, Mode, ModelGraph, Part,
    SynthSpec, Target, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "[acceptance] {} {name} ({:.1}s): {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], r: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-r..r)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Largest relative error between `analytic` and central differences of
/// `f` around `x`, step 1e-5.
fn fd_worst(analytic: &[f64], x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    const H: f64 = 1e-5;
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        probe[k] = x[k] + H;
        let up = f(&probe);
        probe[k] = x[k] - H;
        let down = f(&probe);
        probe[k] = x[k];
        worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * H)));
    }
    worst
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with_data(t: &Tensor, d: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), d.to_vec()).unwrap()
}

#[test]
fn gradient_suite() {
    let start = Instant::now();
    let mut layers = 0.0f64;
    let mut loss = 0.0f64;
    let mut channel = 0.0f64;
    let mut model = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        for act in [Activation::Relu, Activation::Identity] {
            let (i, o, b) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=4));
            let mut l = DenseLayer::glorot(i, o, act, &mut rng).unwrap();
            *l.bias_mut() = tensor(&mut rng, &[o], 0.5);
            let x = tensor(&mut rng, &[b, i], 1.0);
            let r = tensor(&mut rng, &[b, o], 1.0);
            l.forward(&x).unwrap();
            let g = l.backward(&r).unwrap();
            layers = layers.max(fd_worst(g.input.data(), x.data(), |v| dot(&l.apply(&with_data(&x, v)).unwrap().1, &r)));
            layers = layers.max(fd_worst(g.weights.data(), l.weights().data(), |v| {
                let mut p = l.clone();
                *p.weights_mut() = with_data(l.weights(), v);
                dot(&p.apply(&x).unwrap().1, &r)
            }));
            layers = layers.max(fd_worst(g.bias.data(), l.bias().data(), |v| {
                let mut p = l.clone();
                *p.bias_mut() = with_data(l.bias(), v);
                dot(&p.apply(&x).unwrap().1, &r)
            }));
        }

        let (b, c) = (rng.random_range(1..=5), rng.random_range(2..=8));
        let logits = tensor(&mut rng, &[b, c], 3.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        loss = loss.max(fd_worst(grad.data(), logits.data(), |v| {
            softmax_cross_entropy(&with_data(&logits, v), &labels).unwrap().0
        }));

        let (b, k) = (rng.random_range(1..=3), rng.random_range(2..=10));
        let tau = rng.random_range(0.2..3.0);
        let logits = tensor(&mut rng, &[b, k], 2.0);
        let noise = gumbel_noise(b * k, &mut rng).reshape(vec![b, k]).unwrap();
        let r = tensor(&mut rng, &[b, k], 1.0);
        let mut s = GumbelSoftmaxSampler::new(k, tau, seed).unwrap();
        s.set_noise(Noise::Fixed(noise));
        s.forward(&logits).unwrap();
        let grad = s.backward(&r).unwrap();
        channel = channel.max(fd_worst(grad.data(), logits.data(), |v| {
            dot(&s.clone().forward(&with_data(&logits, v)).unwrap(), &r)
        }));

        // input 6, K = 5, C = 3
        let arch = Architecture {
            sender_hidden: vec![8, 8],
            receiver_hidden: vec![8],
            ..Architecture::emergent(6, 5, 3)
        };
        let mut m = arch.build(seed).unwrap();
        for p in m.params_mut() {
            if p.shape().len() == 1 {
                *p = tensor(&mut rng, p.shape(), 0.5);
            }
        }
        let b = rng.random_range(1..=4);
        let x = tensor(&mut rng, &[b, 6], 1.5);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
        let noise = gumbel_noise(b * 5, &mut rng).reshape(vec![b, 5]).unwrap();
        m.bottleneck_mut().unwrap().set_noise(Noise::Fixed(noise));
        let out = m.forward(&x, Mode::Train).unwrap();
        let (_, dl) = softmax_cross_entropy(&out.logits, &labels).unwrap();
        let grads = m.backward(&dl).unwrap();
        let params = m.snapshot();
        for (p, g) in grads.params.iter().enumerate() {
            model = model.max(fd_worst(g.data(), params[p].data(), |v| {
                let mut probe = m.clone();
                *probe.params_mut()[p] = with_data(&params[p], v);
                let out = probe.forward(&x, Mode::Train).unwrap();
                softmax_cross_entropy(&out.logits, &labels).unwrap().0
            }));
        }
        model = model.max(fd_worst(grads.input.data(), x.data(), |v| {
            let out = m.clone().forward(&with_data(&x, v), Mode::Train).unwrap();
            softmax_cross_entropy(&out.logits, &labels).unwrap().0
        }));
    }
    let elapsed = start.elapsed();
    let pass = layers <= 1e-6 && loss <= 1e-6 && channel <= 1e-6 && model <= 1e-5 && elapsed.as_secs() < 30;
    report(
        "gradient suite",
        pass,
        elapsed,
        &format!(
            "100 seeds; worst rel. error layers {layers:.1e}, loss {loss:.1e}, relaxation {channel:.1e} (limit 1e-6), full model {model:.1e} (limit 1e-5)"
        ),
    );
    assert!(pass);
}

#[test]
fn sampler_statistics() {
    let start = Instant::now();
    const DRAWS: usize = 100_000;
    let mut worst_z = 0.0f64;
    let mut worst_sum = 0.0f64;
    for (i, k) in [2usize, 5, 10].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = softmax(&logits);
        let batch = Tensor::new(vec![DRAWS, k], logits.iter().cycle().take(DRAWS * k).copied().collect()).unwrap();
        let mut s = GumbelSoftmaxSampler::new(k, 1.0, 7 + i as u64).unwrap();
        let soft = s.forward(&batch).unwrap();
        for row in soft.iter_rows() {
            worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let mut counts = vec![0usize; k];
        for sym in hard_decode(&soft) {
            counts[sym] += 1;
        }
        for (&c, &pj) in counts.iter().zip(&p) {
            let n = DRAWS as f64;
            worst_z = worst_z.max((c as f64 - n * pj).abs() / (n * pj * (1.0 - pj)).sqrt());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_z <= 4.0 && worst_sum <= 1e-12 && elapsed.as_secs() < 10;
    report(
        "sampler statistics",
        pass,
        elapsed,
        &format!("K in {{2,5,10}}, 1e5 draws; worst |z| {worst_z:.2} (limit 4), worst row-sum error {worst_sum:.1e} (limit 1e-12)"),
    );
    assert!(pass);
}

fn dense(rng: &mut ChaCha8Rng, i: usize, o: usize, act: Activation, bias: f64) -> DenseLayer {
    let mut l = DenseLayer::glorot(i, o, act, rng).unwrap();
    *l.bias_mut() = tensor(rng, &[o], bias);
    l
}

#[test]
fn attribution_correctness() {
    let start = Instant::now();

    // linear models: IG_i = (v·W)_i Δx_i and Cond^{y_j}_i = v_j W_ji Δx_i
    let mut linear = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, c) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(2..=4));
        let l1 = dense(&mut rng, d, h, Activation::Identity, 1.0);
        let l2 = dense(&mut rng, h, c, Activation::Identity, 1.0);
        let (w, v) = (l1.weights().clone(), l2.weights().clone());
        let m = ModelGraph::from_parts(vec![l1], None, vec![l2]).unwrap();
        let x = tensor(&mut rng, &[d], 2.0);
        let base = if seed % 2 == 0 { None } else { Some(tensor(&mut rng, &[d], 1.0)) };
        let zero = Tensor::zeros(&[d]);
        let b = base.as_ref().unwrap_or(&zero);
        let t = rng.random_range(0..c);
        let cfg = AttributionConfig {
            baseline: base.clone(),
            steps: [1, 7, 300][seed as usize % 3],
            target: Target::Class(t),
            ..AttributionConfig::default()
        };
        let ig = integrated_gradients(&m, &x, &cfg).unwrap();
        let conds = layer_conductance(&m, &x, Part::Sender, 0, &cfg).unwrap();
        for i in 0..d {
            let dx = x.data()[i] - b.data()[i];
            let eff: f64 = (0..h).map(|j| v.row(t)[j] * w.row(j)[i]).sum();
            linear = linear.max((ig.data()[i] - eff * dx).abs());
            for (j, cond) in conds.iter().enumerate() {
                linear = linear.max((cond.data()[i] - v.row(t)[j] * w.row(j)[i] * dx).abs());
            }
        }
    }

    // random 2-layer relu nets at m = 300
    let mut ig_worst = 0.0f64;
    let mut ig_fail = 0;
    let mut layer_worst = 0.0f64;
    let cfg = AttributionConfig::default();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, c) = (rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(2..=4));
        let l1 = dense(&mut rng, d, h, Activation::Relu, 0.5);
        let l2 = dense(&mut rng, h, c, Activation::Identity, 0.5);
        let m = ModelGraph::from_parts(vec![l1], None, vec![l2]).unwrap();
        let x = tensor(&mut rng, &[d], 1.0);
        let ig = integrated_gradients(&m, &x, &cfg).unwrap();
        let gap = endpoint_gap(&m, &x, &cfg).unwrap();
        let err = (ig.sum() - gap).abs() / gap.abs().max(1.0);
        ig_worst = ig_worst.max(err);
        if err > 1e-3 {
            ig_fail += 1;
        }
        let conds = layer_conductance(&m, &x, Part::Sender, 0, &cfg).unwrap();
        for i in 0..d {
            let total: f64 = conds.iter().map(|c| c.data()[i]).sum();
            layer_worst = layer_worst.max((total - ig.data()[i]).abs() / ig.data()[i].abs().max(1.0));
        }
    }
    let elapsed = start.elapsed();
    let pass = linear <= 1e-12 && ig_worst <= 1e-3 && layer_worst <= 1e-3 && elapsed.as_secs() < 30;
    report(
        "attribution correctness",
        pass,
        elapsed,
        &format!(
            "linear closed forms max abs error {linear:.1e} (limit 1e-12); relu nets at m=300: IG completeness worst {ig_worst:.2e} with {ig_fail}/100 above 1e-3, layer completeness worst {layer_worst:.1e} (limit 1e-3)"
        ),
    );
    assert!(pass);
}

struct Benchmark {
    el: EvalReport,
    baseline: EvalReport,
    elapsed: Duration,
}

/// Default synthetic task, default hyperparameters, both models.
fn benchmark() -> &'static Benchmark {
    static CELL: OnceLock<Benchmark> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let (tr, va, te) = generate_synthetic(&SynthSpec::default()).unwrap();
        let cfg = TrainConfig::default();
        let run = |el: bool| {
            let arch = if el {
                Architecture::emergent(tr.num_features(), cfg.vocab_size, tr.num_classes())
            } else {
                Architecture::baseline(tr.num_features(), cfg.vocab_size, tr.num_classes())
            };
            let mut m = arch.build(cfg.seed).unwrap();
            train(&mut m, &tr, &va, &cfg).unwrap();
            evaluate(&m, &te).unwrap()
        };
        let el = run(true);
        let baseline = run(false);
        Benchmark {
            el,
            baseline,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn synthetic_benchmark() {
    let b = benchmark();
    let gap = (b.el.accuracy - b.baseline.accuracy).abs();
    let pass = b.el.accuracy >= 0.95
        && b.el.f1 >= 0.95
        && b.baseline.accuracy >= 0.95
        && b.baseline.f1 >= 0.95
        && gap <= 0.03
        && b.elapsed.as_secs() < 300;
    report(
        "synthetic benchmark",
        pass,
        b.elapsed,
        &format!(
            "el accuracy {:.4} macro-F1 {:.4}; baseline accuracy {:.4} macro-F1 {:.4}; gap {:.2} points (limits 0.95, 3 points)",
            b.el.accuracy,
            b.el.f1,
            b.baseline.accuracy,
            b.baseline.f1,
            gap * 100.0
        ),
    );
    assert!(pass);
}

#[test]
fn symbol_parsimony() {
    let b = benchmark();
    let n = b.el.symbol_inventory.len();
    let pass = n <= 12;
    report(
        "symbol parsimony",
        pass,
        b.elapsed,
        &format!("{n} unique symbols of 100 (limit 12): {}", b.el.symbol_inventory),
    );
    assert!(pass);
}

#[test]
fn attribution_faithfulness() {
    let start = Instant::now();
    let spec = SynthSpec {
        noise_std: 0.5,
        ..SynthSpec::default()
    };
    let (tr, va, te) = generate_synthetic(&spec).unwrap();
    let cfg = TrainConfig::default();
    let mut m = Architecture::emergent(tr.num_features(), cfg.vocab_size, tr.num_classes())
        .build(cfg.seed)
        .unwrap();
    train(&mut m, &tr, &va, &cfg).unwrap();
    let symbols = m.predict(&te.features).unwrap().symbols.unwrap();
    let rep = per_symbol_report(&m, &te, &AttributionConfig::default()).unwrap();
    let summary = rep.block_summary(spec.block_size).unwrap();

    let mut lines = Vec::new();
    let mut pass = true;
    for class in 0..spec.num_classes {
        let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
        for (&s, &l) in symbols.iter().zip(&te.labels) {
            if l == class {
                *tally.entry(s).or_default() += 1;
            }
        }
        // ties go to the lower symbol
        let (&majority, _) = tally.iter().rev().max_by_key(|(_, &n)| n).unwrap();
        let s = summary.iter().find(|s| s.symbol == majority).unwrap();
        pass &= s.dominant_block == class;
        lines.push(format!("class {class} -> symbol {majority} -> block {} ({:.2})", s.dominant_block, s.share));
    }
    let elapsed = start.elapsed();
    report("attribution faithfulness", pass, elapsed, &format!("sigma 0.5; {}", lines.join("; ")));
    assert!(pass);
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn repro_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_elsym"))
            .args(["repro", "--seed", "11", "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        trees.push(tree(&out));
    }
    let differing: Vec<&String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let required = ["table.json", "el/report.json", "el/checkpoint.json", "baseline/report.json", "baseline/checkpoint.json"];
    let complete = required.iter().all(|f| trees[0].contains_key(&f.replace('/', std::path::MAIN_SEPARATOR_STR)));
    let pass = differing.is_empty() && trees[0].len() == trees[1].len() && complete;
    report(
        "repro determinism",
        pass,
        start.elapsed(),
        &format!("{} files compared, {} differ", trees[0].len(), differing.len()),
    );
    assert!(pass, "differing: {differing:?}");
}
