//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p spikelab-cli --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use spikelab_cli::{run, ExperimentConfig};
use spikelab_core::data::Batch;
use spikelab_core::encoding::{decode_sf, encode_mw, encode_sf, encode_tc, naive_delta_density, sparsity};
use spikelab_core::error::Result as CoreResult;
use spikelab_core::neurons::{
    AlifParams, CellKind, CellParams, LifParams, Model, RecurrentConfig, RecurrentNet, B_OUT, W_OUT,
};
use spikelab_core::numerics::{finite_difference_gradient, ParamSet, PseudoDerivative, Tensor};
use spikelab_core::rules::{
    bptt_gradients, eprop_gradients, eprop_trace_step, run_chain, BroadcastMatrix, FeedbackMode, LogPosterior,
    MalaConfig, Objective, TraceState,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// A shipped example config run into a scratch directory.
struct ConfigRun {
    name: &'static str,
    dir: tempfile::TempDir,
    metrics: Value,
}

fn run_config(name: &'static str) -> ConfigRun {
    let path = configs_dir().join(format!("{name}.toml"));
    let cfg = ExperimentConfig::load(&path).unwrap_or_else(|p| panic!("{name}: {p:?}"));
    let dir = tempfile::tempdir().expect("scratch dir");
    let report = run(&cfg, dir.path()).unwrap_or_else(|e| panic!("{name}: {e}"));
    ConfigRun {
        name,
        dir,
        metrics: report.summary["metrics"].clone(),
    }
}

fn metric(r: &ConfigRun, path: &[&str]) -> f64 {
    let mut v = &r.metrics;
    for k in path {
        v = &v[*k];
    }
    v.as_f64().unwrap_or_else(|| panic!("{}: metric {path:?} missing", r.name))
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn alif_net(n_in: usize, n_rec: usize, n_out: usize, seed: u64) -> RecurrentNet {
    let mut cfg = RecurrentConfig::new(CellKind::Alif, n_in, n_rec, n_out);
    cfg.weight_scale = 2.5;
    cfg.beta = 0.3;
    RecurrentNet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_batch(b: usize, t: usize, d: usize, classes: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        inputs: normal(&mut rng, &[b, t, d], 1.5),
        labels: (0..b).map(|i| i % classes).collect(),
    }
}

fn readout_only(p: &ParamSet) -> ParamSet {
    let mut out = ParamSet::new();
    for id in [W_OUT, B_OUT] {
        out.insert(id, p.require(id).unwrap().clone());
    }
    out
}

fn gradient_fidelity() -> Outcome {
    let model = Model::Recurrent(alif_net(3, 20, 3, 5));
    let batch = random_batch(4, 20, 3, 3, 6);
    let obj = Objective::default();
    let (_, grads) = bptt_gradients(&model, &batch, &obj).unwrap();
    let full = model.params();
    let fd = finite_difference_gradient(
        |ro| {
            let mut p = full.clone();
            for (id, t) in ro {
                p.insert(id.clone(), t.clone());
            }
            let mut m = model.clone();
            m.set_params(&p)?;
            obj.loss(&m, &batch)
        },
        &readout_only(&full),
        1e-5,
    )
    .unwrap();
    let got = readout_only(&grads);
    let norm_rel = got.add_scaled(&fd, -1.0).unwrap().norm() / fd.norm();
    // entrywise, against the larger magnitude; entries below 1e-8 are compared absolutely
    let worst = got
        .flatten()
        .iter()
        .zip(fd.flatten())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max);
    let spikes = model.forward(&batch.inputs).unwrap().spikes.unwrap().sum();
    check(
        norm_rel < 1e-4 && worst < 1e-4 && spikes > 0.0,
        format!("relative error {norm_rel:.2e} (norm), {worst:.2e} (worst entry), tol 1e-4; {spikes} spikes"),
    )
}

/// `ε[t] = Σ_s (Π_{r=s+1..t} D[r]) · (pre[s], 0)` with
/// `D[r] = [[α, 0], [ψ[r−1], ρ − β·ψ[r−1]]]`; returns `ψ[t]·(ε_v − β·ε_a)`.
fn unrolled_eligibility(pre: &[f64], psi: &[f64], alpha: f64, rho: f64, beta: f64) -> Vec<f64> {
    (0..pre.len())
        .map(|t| {
            let (mut ev, mut ea) = (0.0, 0.0);
            for s in 0..=t {
                let mut m = [[1.0, 0.0], [0.0, 1.0]];
                for r in s + 1..=t {
                    let d = [[alpha, 0.0], [psi[r - 1], rho - beta * psi[r - 1]]];
                    m = [
                        [d[0][0] * m[0][0] + d[0][1] * m[1][0], d[0][0] * m[0][1] + d[0][1] * m[1][1]],
                        [d[1][0] * m[0][0] + d[1][1] * m[1][0], d[1][0] * m[0][1] + d[1][1] * m[1][1]],
                    ];
                }
                ev += m[0][0] * pre[s];
                ea += m[1][0] * pre[s];
            }
            psi[t] * (ev - beta * ea)
        })
        .collect()
}

fn eprop_identities() -> Outcome {
    let obj = Objective::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // (a) readout gradients, T = 20
    let mut out_err: f64 = 0.0;
    for seed in 0..3 {
        let net = alif_net(4, 12, 3, 10 + seed);
        let model = Model::Recurrent(net.clone());
        let batch = random_batch(4, 20, 4, 3, 20 + seed);
        let (_, exact) = bptt_gradients(&model, &batch, &obj).unwrap();
        for mode in [FeedbackMode::Symmetric, FeedbackMode::Random, FeedbackMode::Adaptive] {
            let fb = BroadcastMatrix::new(mode, &net, &mut rng).unwrap();
            let (_, approx) = eprop_gradients(&model, &batch, &obj, &fb).unwrap();
            for id in [W_OUT, B_OUT] {
                out_err = out_err.max(exact.require(id).unwrap().sub(approx.require(id).unwrap()).unwrap().max_abs());
            }
        }
    }

    // (b) every parameter at T = 1
    let mut t1_err: f64 = 0.0;
    for seed in 0..5 {
        let net = alif_net(5, 10, 3, 100 + seed);
        let model = Model::Recurrent(net.clone());
        let batch = random_batch(6, 1, 5, 3, 200 + seed);
        let (_, exact) = bptt_gradients(&model, &batch, &obj).unwrap();
        let fb = BroadcastMatrix::new(FeedbackMode::Symmetric, &net, &mut rng).unwrap();
        let (_, approx) = eprop_gradients(&model, &batch, &obj, &fb).unwrap();
        for (id, g) in &exact {
            t1_err = t1_err.max(g.sub(approx.require(id).unwrap()).unwrap().max_abs());
        }
    }

    // (c) recursive traces against the unrolled Jacobian products, T ≤ 10
    let mut trace_err: f64 = 0.0;
    for t_len in 1..=10 {
        let (b, n_pre, n_post) = (2, 3, 4);
        let (alpha, rho, beta) = (rng.gen_range(0.5..0.99), rng.gen_range(0.8..0.999), rng.gen_range(0.0..1.5));
        let kappa = rng.gen_range(0.0..0.99);
        let lif = LifParams {
            alpha,
            v_th: 1.0,
            w_in: Tensor::zeros(&[n_pre, n_post]),
            w_rec: Tensor::zeros(&[n_post, n_post]),
            pseudo: PseudoDerivative::default(),
        };
        let cell = CellParams::Alif(AlifParams { lif, rho, beta });
        let uniform = |rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
        };
        let pres: Vec<Tensor> = (0..t_len).map(|_| uniform(&mut rng, &[b, n_pre], -1.0, 2.0)).collect();
        let psis: Vec<Tensor> = (0..t_len).map(|_| uniform(&mut rng, &[b, n_post], 0.0, 0.3)).collect();
        let mut tr = TraceState::zeros(b, n_pre, n_post);
        let mut history = Vec::new();
        for (pre, psi) in pres.iter().zip(&psis) {
            tr = eprop_trace_step(&cell, kappa, pre, psi, &tr).unwrap();
            history.push(tr.clone());
        }
        for bi in 0..b {
            for i in 0..n_pre {
                for j in 0..n_post {
                    let pre: Vec<f64> = pres.iter().map(|p| p.get(&[bi, i]).unwrap()).collect();
                    let psi: Vec<f64> = psis.iter().map(|p| p.get(&[bi, j]).unwrap()).collect();
                    let e = unrolled_eligibility(&pre, &psi, alpha, rho, beta);
                    for t in 0..t_len {
                        let filtered: f64 = (0..=t).map(|s| kappa.powi((t - s) as i32) * e[s]).sum();
                        trace_err = trace_err
                            .max((history[t].eligibility.get(&[bi, i, j]).unwrap() - e[t]).abs())
                            .max((history[t].filtered.get(&[bi, i, j]).unwrap() - filtered).abs());
                    }
                }
            }
        }
    }
    check(
        out_err < 1e-9 && t1_err < 1e-7 && trace_err < 1e-9,
        format!(
            "(a) readout max diff {out_err:.1e} < 1e-9, (b) T=1 max diff {t1_err:.1e} < 1e-7, (c) trace max diff {trace_err:.1e} < 1e-9"
        ),
    )
}

fn feedback_ordering(r: &ConfigRun) -> Outcome {
    let med = |rule: &str, param: &str| metric(r, &["median_cosine", rule, param]);
    let mut parts = Vec::new();
    let mut ok = true;
    for param in ["w_rec", "w_in", "all"] {
        let (s, n) = (med("eprop_symmetric", param), med("eprop_random", param));
        ok &= s > n;
        parts.push(format!("{param} {s:.3} vs {n:.3}"));
    }
    let steps = metric(r, &["steps"]);
    check(ok && steps >= 20.0, format!("median cosine to BPTT, symmetric vs random over {steps} batches: {}", parts.join(", ")))
}

fn manhattan_claim(plain: &ConfigRun, bounded: &ConfigRun, adam: &ConfigRun) -> Outcome {
    let acc = |r: &ConfigRun| metric(r, &["test_accuracy"]);
    let (m, b, a) = (acc(plain), acc(bounded), acc(adam));
    check(
        m >= 0.92 && a - m <= 0.04 && (b - m).abs() <= 0.01,
        format!("test accuracy manhattan {m:.4} (≥ 0.92), bptt/adam {a:.4} (gap {:.2} ≤ 4 pts), bounded [-1,1] {b:.4} (|diff| {:.2} ≤ 1 pt)", 100.0 * (a - m), 100.0 * (b - m).abs()),
    )
}

struct StdGaussian;

impl LogPosterior for StdGaussian {
    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&mut self, t: &[f64]) -> CoreResult<(f64, Vec<f64>)> {
        Ok((-0.5 * t.iter().map(|x| x * x).sum::<f64>(), t.iter().map(|x| -x).collect()))
    }
}

fn mala_calibration() -> Outcome {
    let cfg = MalaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let run = run_chain(&mut StdGaussian, vec![0.5, -0.5], &cfg, 2000, 20_000, 1, &mut rng).unwrap();
    let n = run.samples.len() as f64;
    let mean: Vec<f64> = (0..2).map(|k| run.samples.iter().map(|s| s[k]).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..2)
        .map(|k| run.samples.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let mean_err = mean.iter().map(|m| m.abs()).fold(0.0, f64::max);
    let cov_err = var.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let acc = run.acceptance_rate();
    check(
        mean_err < 0.05 && cov_err < 0.1 && (acc - cfg.target_accept).abs() <= 0.05 && run.samples.len() == 20_000,
        format!(
            "{} samples: mean err {mean_err:.4} < 0.05, variance err {cov_err:.4} < 0.1, acceptance {acc:.3} vs target {} ± 0.05",
            run.samples.len(),
            cfg.target_accept
        ),
    )
}

fn uncertainty_claim(r: &ConfigRun) -> Outcome {
    let wrong = r.metrics["median_entropy_misclassified"].as_f64();
    let right = r.metrics["median_entropy_correct"].as_f64();
    let acc = metric(r, &["posterior_accuracy"]);
    match (wrong, right) {
        (Some(w), Some(c)) => check(
            w > c,
            format!("median predictive entropy misclassified {w:.4} > correct {c:.4} (posterior accuracy {acc:.3})"),
        ),
        _ => Err(format!("need both correct and misclassified test points (posterior accuracy {acc:.3})")),
    }
}

/// Piecewise signal: random segments that are linear plus a slow sinusoid,
/// with a jump between segments.
fn piecewise_smooth(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut level: f64 = rng.gen_range(-1.0..1.0);
    while out.len() < len {
        let seg = rng.gen_range(20..80).min(len - out.len());
        let slope = rng.gen_range(-0.02..0.02);
        let (amp, period, phase) = (rng.gen_range(0.0..0.5), rng.gen_range(30.0..120.0), rng.gen_range(0.0..6.3));
        let start = level;
        for k in 0..seg {
            let k = k as f64;
            out.push(start + slope * k + amp * ((2.0 * std::f64::consts::PI * k / period + phase).sin() - phase.sin()));
        }
        level = out.last().copied().unwrap_or(0.0) + rng.gen_range(-0.5..0.5);
    }
    out
}

fn encoder_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut bound_ok, mut ternary_ok, mut sparse_ok) = (0, 0, 0);
    let mut worst_slack = f64::INFINITY;
    let n = 100;
    for _ in 0..n {
        let s = piecewise_smooth(&mut rng, 300);
        let thr = rng.gen_range(0.05..0.3);
        let max_step = s.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        let sf = encode_sf(&s, thr).unwrap();
        let rec = decode_sf(&sf).unwrap();
        let err = rec.data().iter().zip(&s).map(|(r, v)| (r - v).abs()).fold(0.0, f64::max);
        worst_slack = worst_slack.min(thr + max_step - err);
        bound_ok += usize::from(err <= thr + max_step);
        let trains = [encode_tc(&s, 0.5).unwrap(), sf, encode_mw(&s, thr, 3).unwrap()];
        ternary_ok += usize::from(trains.iter().all(|t| t.values.data().iter().all(|v| [-1.0, 0.0, 1.0].contains(v))));
        let naive = naive_delta_density(&s);
        sparse_ok += usize::from(trains.iter().all(|t| sparsity(t) < naive));
    }
    check(
        bound_ok == n && ternary_ok == n && sparse_ok == n,
        format!(
            "{n} piecewise-smooth signals: SF error bound held {bound_ok}/{n} (min slack {worst_slack:.3}), ternary {ternary_ok}/{n}, sparser than naive delta {sparse_ok}/{n}"
        ),
    )
}

fn rate_control(r: &ConfigRun) -> Outcome {
    let rate = metric(r, &["test_firing_rate"]);
    let acc = metric(r, &["test_accuracy"]);
    check(
        (5.0..=20.0).contains(&rate) && acc >= 0.8,
        format!("test firing rate {rate:.2} Hz in [5, 20], test accuracy {acc:.3} ≥ 0.8 (train rate {:.2} Hz)", metric(r, &["train_firing_rate"])),
    )
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn determinism(runs: &[&ConfigRun]) -> Outcome {
    let mut compared = Vec::new();
    for r in runs {
        let again = run_config(r.name);
        let (a, b) = (csv_files(r.dir.path()), csv_files(again.dir.path()));
        if a.is_empty() {
            return Err(format!("{} wrote no CSV files", r.name));
        }
        if a != b {
            return Err(format!("{}: CSV output differs between identical runs", r.name));
        }
        compared.push(format!("{} ({})", r.name, a.keys().cloned().collect::<Vec<_>>().join(", ")));
    }
    Ok(format!("byte-identical CSVs on rerun: {}", compared.join("; ")))
}

fn report(id: u32, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("PASS  criterion {id} ({title}): {d} [{secs:.1}s]"),
        Err(d) => println!("FAIL  criterion {id} ({title}): {d} [{secs:.1}s]"),
    }
    outcome.is_ok()
}

/// Runs a config, keeping it for later criteria; a failure is reported by
/// the criterion that needed it.
fn fetch(runs: &mut BTreeMap<&'static str, ConfigRun>, name: &'static str) -> bool {
    match catch_unwind(AssertUnwindSafe(|| run_config(name))) {
        Ok(r) => {
            runs.insert(name, r);
            true
        }
        Err(_) => false,
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, "gradient fidelity", gradient_fidelity);
    ok &= report(2, "e-prop identities", eprop_identities);

    let mut runs: BTreeMap<&str, ConfigRun> = BTreeMap::new();
    let have_compare = fetch(&mut runs, "mnist_alif_compare");
    ok &= report(3, "feedback ordering on spiking MNIST", || {
        if !have_compare {
            return Err("compare run failed".into());
        }
        feedback_ordering(&runs["mnist_alif_compare"])
    });
    let have_mlp = ["mnist_mlp_manhattan", "mnist_mlp_manhattan_bounded", "mnist_mlp_adam"]
        .into_iter()
        .all(|n| fetch(&mut runs, n));
    ok &= report(4, "Manhattan rule on MNIST", || {
        if !have_mlp {
            return Err("an MNIST training run failed".into());
        }
        manhattan_claim(&runs["mnist_mlp_manhattan"], &runs["mnist_mlp_manhattan_bounded"], &runs["mnist_mlp_adam"])
    });
    ok &= report(5, "MALA calibration", mala_calibration);
    let have_sample = fetch(&mut runs, "two_sines_posterior");
    ok &= report(6, "uncertainty higher on errors", || {
        if !have_sample {
            return Err("sampling run failed".into());
        }
        uncertainty_claim(&runs["two_sines_posterior"])
    });
    ok &= report(7, "encoder properties", encoder_properties);
    let have_rate = fetch(&mut runs, "pattern_rate_reg");
    ok &= report(8, "firing-rate control", || {
        if !have_rate {
            return Err("regularized training run failed".into());
        }
        rate_control(&runs["pattern_rate_reg"])
    });
    ok &= report(9, "determinism", || determinism(&runs.values().collect::<Vec<_>>()));

    if ok {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
