//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the PASS/FAIL lines are always printed; exits non-zero if any fails.
//! Pass criterion numbers as arguments to run a subset.

use std::time::{Duration, Instant};

use gnireg::calibration::{calibrate, predictions, DEFAULT_BINS};
use gnireg::data::{gen_blobs, gen_sinusoid, Batch, BlobSpec, SinusoidSpec};
use gnireg::diagnostics::{
    amplitude_spectrum, dominance_fraction, dominance_scan, empirical_flip_distance,
    estimate_remainder, exact_flip_distance, fd_hessian_trace, hessian_trace,
    high_frequency_energy, hutchinson, layer_stats, layer_stats_oriented, margin_bounds,
    sample_network, spectrum, striation, DominanceConfig, DominanceRow, Grid, MaskOrientation,
    Tones,
};
use gnireg::linalg::{Matrix, RandomSource};
use gnireg::network::{Activation, Architecture, Init, Network};
use gnireg::noise::{NoiseMode, NoiseSpec};
use gnireg::objective::{ce_hessian, softmax, softmax_ce, LossKind, RegVariant};
use gnireg::trainer::{explicit_objective, explicit_objective_fd, train, TrainConfig, TrainMode};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn budget(v: Verdict, took: Duration, limit: Option<Duration>) -> Verdict {
    match limit {
        Some(l) if took > l => verdict(
            false,
            format!("{}; runtime {took:.1?} over budget {l:?}", v.detail),
        ),
        _ => v,
    }
}

fn random_batch(
    rs: &mut RandomSource,
    rows: usize,
    d_in: usize,
    d_out: usize,
    classes: bool,
) -> Batch {
    let x = Matrix::from_vec(rows, d_in, rs.gaussian(rows * d_in, 1.0).unwrap()).unwrap();
    let y = if classes {
        let mut y = Matrix::zeros(rows, d_out);
        for b in 0..rows {
            y.set(b, (rs.next_u64() % d_out as u64) as usize, 1.0);
        }
        y
    } else {
        Matrix::from_vec(rows, d_out, rs.gaussian(rows * d_out, 1.0).unwrap()).unwrap()
    };
    Batch::new(x, y).unwrap()
}

fn c1_gradients() -> Verdict {
    let acts = [Activation::Sigmoid, Activation::Elu, Activation::Softplus];
    let mut rs = RandomSource::new(1);
    let (mut worst_param, mut worst_explicit) = (0.0f64, 0.0f64);
    for t in 0..100 {
        let act = acts[t % 3];
        let ce = t % 2 == 1;
        let loss = if ce {
            LossKind::CrossEntropy
        } else {
            LossKind::Mse
        };
        let net = Network::random(&[2, 2, 2], act, Init::Uniform, &mut rs.split(t as u64)).unwrap();
        let batch = random_batch(&mut rs, 4, 2, 2, ce);
        let theta = net.params();
        let i = (rs.next_u64() % theta.len() as u64) as usize;

        let g = net.param_gradient(&batch, loss).unwrap().1.flatten();
        let h = 1e-5;
        let mut probe = net.clone();
        let mut at = |v: f64| {
            let mut th = theta.clone();
            th[i] = v;
            probe.set_params(&th).unwrap();
            probe.param_gradient(&batch, loss).unwrap().0
        };
        let fd = (at(theta[i] + h) - at(theta[i] - h)) / (2.0 * h);
        worst_param = worst_param.max(relative_gap(g[i], fd));

        let mode = if t % 4 < 2 {
            NoiseMode::Additive
        } else {
            NoiseMode::Multiplicative
        };
        let spec = NoiseSpec::uniform(2, mode, 0.3).unwrap();
        let variant = match (ce, t % 3) {
            (false, _) => RegVariant::Mse,
            (true, 0) => RegVariant::CeFull,
            (true, _) => RegVariant::CeDiag,
        };
        let (_, ge) =
            explicit_objective(&net, &batch.inputs, &batch.targets, loss, &spec, variant).unwrap();
        let (_, gf) = explicit_objective_fd(
            &net,
            &batch.inputs,
            &batch.targets,
            loss,
            &spec,
            variant,
            1e-5,
        )
        .unwrap();
        worst_explicit = worst_explicit.max(relative_gap(ge.flatten()[i], gf.flatten()[i]));
    }
    verdict(
        worst_param < 1e-5 && worst_explicit < 1e-4,
        format!("max relative error: loss gradient {worst_param:.2e} (tol 1e-5), explicit L+R gradient {worst_explicit:.2e} (tol 1e-4) over 100 coordinates"),
    )
}

fn c2_linear_remainder() -> Verdict {
    let mut rs = RandomSource::new(2);
    let net = Network::random(&[3, 4, 4, 2], Activation::Identity, Init::Uniform, &mut rs).unwrap();
    let batch = random_batch(&mut rs, 16, 3, 2, false);
    let spec = NoiseSpec::uniform(3, NoiseMode::Additive, 0.5).unwrap();
    let est = estimate_remainder(&net, &batch, &spec, LossKind::Mse, 10_000, &rs.split(7)).unwrap();
    verdict(
        est.remainder.abs() <= 3.0 * est.stderr,
        format!(
            "|E[C]| = {:.3e}, 3 stderr = {:.3e}, R = {:.4} (10^4 draws)",
            est.remainder.abs(),
            3.0 * est.stderr,
            est.regulariser
        ),
    )
}

fn c3_ce_hessian() -> Verdict {
    let mut rs = RandomSource::new(3);
    let mut fd_err = 0.0f64;
    for _ in 0..20 {
        let logits = rs.gaussian(4, 2.0).unwrap();
        let y = [0.0, 1.0, 0.0, 0.0];
        let h = ce_hessian(&softmax(&logits)).unwrap();
        let eps = 1e-4;
        for i in 0..4 {
            for j in 0..4 {
                let at = |di: f64, dj: f64| {
                    let mut l = logits.clone();
                    l[i] += di;
                    l[j] += dj;
                    softmax_ce(&l, &y).unwrap()
                };
                let fd = (at(eps, eps) - at(eps, -eps) - at(-eps, eps) + at(-eps, -eps))
                    / (4.0 * eps * eps);
                fd_err = fd_err.max((fd - h.get(i, j)).abs());
            }
        }
    }
    let (mut min_eig, mut max_row) = (f64::INFINITY, 0.0f64);
    for t in 0..1000 {
        let k = 2 + t % 9;
        let scale = 0.1 + 5.0 * rs.uniform();
        let p = softmax(&rs.gaussian(k, scale).unwrap());
        let h = ce_hessian(&p).unwrap();
        for i in 0..k {
            max_row = max_row.max(h.row(i).iter().sum::<f64>().abs());
        }
        let m = nalgebra::DMatrix::from_row_slice(k, k, h.data());
        min_eig = min_eig.min(nalgebra::SymmetricEigen::new(m).eigenvalues.min());
    }
    verdict(
        fd_err < 1e-5 && min_eig >= -1e-10 && max_row < 1e-12,
        format!("FD error {fd_err:.2e} (tol 1e-5), min eigenvalue {min_eig:.2e} (>= -1e-10), max |row sum| {max_row:.2e} (tol 1e-12) over 1000 p"),
    )
}

fn dominance_rows(seed: u64) -> Vec<DominanceRow> {
    let data = gen_sinusoid(&SinusoidSpec::default()).unwrap();
    let arch = Architecture::mlp(1, 256, 6, 1, Activation::Sigmoid);
    let cfg = DominanceConfig {
        seed,
        ..DominanceConfig::default()
    };
    dominance_scan(&arch, &data, &[0.1, 0.25, 1.0], 25, &cfg).unwrap()
}

fn c4_dominance() -> Verdict {
    let rows = dominance_rows(4);
    let frac = dominance_fraction(&rows).unwrap_or(0.0);
    let worst = rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
    verdict(
        frac >= 0.95,
        format!(
            "R > |E[C]| in {:.1}% of {} runs (need 95%), worst |E[C]|/R = {worst:.3}",
            100.0 * frac,
            rows.len()
        ),
    )
}

struct SpectralRun {
    hf: f64,
    test_loss: f64,
    spearman: Option<f64>,
    spearman_columns: Option<f64>,
}

/// 6 weight layers of width 256, ReLU, trained on the 10-tone task.
fn spectral_runs() -> Vec<[SpectralRun; 3]> {
    let grid = Grid::default();
    (0..5u64)
        .map(|seed| {
            let train_set = gen_sinusoid(&SinusoidSpec {
                seed,
                ..SinusoidSpec::default()
            })
            .unwrap();
            let test_set = gen_sinusoid(&SinusoidSpec {
                seed: seed + 1000,
                phases: train_set.meta.phases.clone(),
                ..SinusoidSpec::default()
            })
            .unwrap();
            let net = Architecture::mlp(1, 256, 6, 1, Activation::Relu)
                .with_init(Init::He)
                .build(&mut RandomSource::new(seed))
                .unwrap();
            let probe = train_set.inputs.select_rows(&(0..512).collect::<Vec<_>>());
            [TrainMode::Baseline, TrainMode::Gni, TrainMode::Explicit].map(|mode| {
                let cfg = TrainConfig {
                    mode,
                    loss: LossKind::Mse,
                    noise: NoiseSpec::uniform(6, NoiseMode::Additive, 0.1).unwrap(),
                    learning_rate: 0.01,
                    batch_size: 128,
                    steps: 2000,
                    seed,
                    eval_every: 500,
                    metric_examples: 256,
                    ..TrainConfig::default()
                };
                let (trained, log) = train(net.clone(), &train_set, Some(&test_set), &cfg).unwrap();
                let amps = amplitude_spectrum(&sample_network(&trained, &grid).unwrap()).unwrap();
                SpectralRun {
                    hf: high_frequency_energy(&amps, 25),
                    test_loss: log.last().unwrap().test_loss.unwrap(),
                    spearman: striation(&layer_stats(&trained, &probe).unwrap()),
                    spearman_columns: striation(
                        &layer_stats_oriented(&trained, &probe, MaskOrientation::Columns).unwrap(),
                    ),
                }
            })
        })
        .collect()
}

fn c5_spectral(runs: &[[SpectralRun; 3]]) -> Verdict {
    let gni = runs.iter().filter(|r| r[1].hf < r[0].hf).count();
    let explicit = runs.iter().filter(|r| r[2].hf < r[0].hf).count();
    let table: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}/{:.3}/{:.3}", r[0].hf, r[1].hf, r[2].hf))
        .collect();
    verdict(
        gni >= 4 && explicit >= 4,
        format!(
            "high-frequency energy lower than baseline: gni {gni}/5, explicit {explicit}/5 (baseline/gni/explicit per seed: {})",
            table.join(", ")
        ),
    )
}

fn c6_profile(runs: &[[SpectralRun; 3]]) -> Verdict {
    let hits = runs
        .iter()
        .filter(|r| {
            (r[2].test_loss - r[1].test_loss).abs() < (r[2].test_loss - r[0].test_loss).abs()
        })
        .count();
    let table: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "{:.3}/{:.3}/{:.3}",
                r[0].test_loss, r[1].test_loss, r[2].test_loss
            )
        })
        .collect();
    verdict(
        hits >= 4,
        format!("explicit closer to gni than to baseline in {hits}/5 seeds (final test loss baseline/gni/explicit: {})", table.join(", ")),
    )
}

fn c7_striation(runs: &[[SpectralRun; 3]]) -> Verdict {
    let show = |f: &dyn Fn(&[SpectralRun; 3]) -> Option<f64>| -> String {
        runs.iter()
            .map(|r| f(r).map_or("n/a".into(), |s| format!("{s:.1}")))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let negative = runs
        .iter()
        .filter(|r| r[1].spearman.is_some_and(|s| s < 0.0))
        .count();
    verdict(
        negative >= 4,
        format!(
            "gni Spearman(k, masked norm) negative in {negative}/5 seeds [{}]; reported only: baseline [{}], gni with column masks [{}]",
            show(&|r| r[1].spearman),
            show(&|r| r[0].spearman),
            show(&|r| r[1].spearman_columns)
        ),
    )
}

fn c8_parseval() -> Verdict {
    let grid = Grid::default();
    let pure = Tones::unit(&[5.0]);
    let two = Tones {
        freqs: vec![3.0, 11.0],
        amplitudes: vec![1.0, 0.4],
        phases: vec![0.3, 1.7],
    };
    let mut worst_analytic = 0.0f64;
    let mut worst_fd = 0.0f64;
    for t in [&pure, &two] {
        worst_analytic = worst_analytic.max(t.parseval(&grid, true).unwrap().rel_gap);
        worst_fd = worst_fd.max(t.parseval(&grid, false).unwrap().rel_gap);
    }
    let lhs = pure.parseval(&grid, true).unwrap().lhs;
    verdict(
        worst_analytic < 1e-6 && worst_fd < 1e-3,
        format!("relative gap analytic {worst_analytic:.2e} (tol 1e-6), finite difference {worst_fd:.2e} (tol 1e-3); pure tone lhs {lhs:.2}"),
    )
}

fn c9_margin() -> Verdict {
    let mut rs = RandomSource::new(9);
    let mut violations = 0;
    let mut linear_points = 0;
    for k in 0..5u64 {
        let net = Network::random(
            &[2, 4, 3],
            Activation::Identity,
            Init::Uniform,
            &mut rs.split(k),
        )
        .unwrap();
        let x = Matrix::from_vec(100, 2, rs.gaussian(200, 2.0).unwrap()).unwrap();
        let report = margin_bounds(&net, &x).unwrap();
        for (b, p) in report.points.iter().enumerate() {
            let exact = exact_flip_distance(&net, x.row(b)).unwrap();
            linear_points += 1;
            violations += usize::from(p.bound > exact * (1.0 + 1e-12));
        }
    }

    let data = gen_blobs(&BlobSpec::default()).unwrap();
    let test = gen_blobs(&BlobSpec {
        per_class: 50,
        seed: 1,
        ..BlobSpec::default()
    })
    .unwrap();
    let net = Network::random(
        &[2, 256, 3],
        Activation::Relu,
        Init::Uniform,
        &mut rs.split(100),
    )
    .unwrap();
    let cfg = TrainConfig {
        loss: LossKind::CrossEntropy,
        learning_rate: 0.1,
        batch_size: 32,
        steps: 1000,
        seed: 9,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let (net, _) = train(net, &data, None, &cfg).unwrap();
    let report = margin_bounds(&net, &test.inputs).unwrap();
    let mut respected = 0;
    let root = rs.split(200);
    for (b, p) in report.points.iter().enumerate() {
        let flip = empirical_flip_distance(
            &net,
            test.inputs.row(b),
            100,
            20.0,
            &mut root.split(b as u64),
        )
        .unwrap();
        respected += usize::from(flip.is_none_or(|f| p.bound <= f));
    }
    let frac = respected as f64 / report.points.len() as f64;
    verdict(
        violations == 0 && frac >= 0.95,
        format!(
            "linear: {violations} violations over {linear_points} points; 2-layer width-256 relu on blobs: bound respected for {:.1}% of {} points (need 95%)",
            100.0 * frac,
            report.points.len()
        ),
    )
}

fn c10_calibration() -> Verdict {
    let mut ece_hits = 0;
    let mut entropy_hits = 0;
    let mut table = Vec::new();
    for seed in 0..5u64 {
        let spec = BlobSpec {
            classes: 3,
            per_class: 50,
            dim: 2,
            separation: 1.5,
            cluster_std: 1.0,
            seed,
        };
        let train_set = gen_blobs(&spec).unwrap();
        let test_set = gen_blobs(&BlobSpec {
            per_class: 500,
            seed: seed + 1000,
            ..spec
        })
        .unwrap();
        let net = Architecture::mlp(2, 64, 3, 3, Activation::Relu)
            .build(&mut RandomSource::new(seed))
            .unwrap();
        let [base, gni] = [TrainMode::Baseline, TrainMode::Gni].map(|mode| {
            let cfg = TrainConfig {
                mode,
                loss: LossKind::CrossEntropy,
                noise: NoiseSpec::uniform(3, NoiseMode::Additive, 0.1).unwrap(),
                learning_rate: 0.05,
                batch_size: 32,
                steps: 3000,
                seed,
                eval_every: 0,
                ..TrainConfig::default()
            };
            let (trained, _) = train(net.clone(), &train_set, None, &cfg).unwrap();
            calibrate(&predictions(&trained, &test_set).unwrap(), DEFAULT_BINS).unwrap()
        });
        ece_hits += usize::from(gni.ece <= base.ece);
        entropy_hits += usize::from(gni.mean_entropy > base.mean_entropy);
        table.push(format!("{:.3}/{:.3}", base.ece, gni.ece));
    }
    let mut hand: Vec<gnireg::calibration::Prediction> = Vec::new();
    for (conf, correct) in [(0.9, 35), (0.6, 30)] {
        for i in 0..50 {
            hand.push(gnireg::calibration::Prediction {
                confidence: conf,
                predicted: 0,
                label: usize::from(i >= correct),
                probs: None,
            });
        }
    }
    let hand_ece = calibrate(&hand, DEFAULT_BINS).unwrap().ece;
    verdict(
        ece_hits >= 4 && entropy_hits >= 4 && (hand_ece - 0.1).abs() < 1e-12,
        format!(
            "ECE(gni) <= ECE(baseline) in {ece_hits}/5 seeds (baseline/gni: {}), higher gni entropy in {entropy_hits}/5; two-bin example ECE {hand_ece}",
            table.join(", ")
        ),
    )
}

fn c11_hessian() -> Verdict {
    let theta: Vec<f64> = (0..50).map(|i| (i as f64).cos()).collect();
    let quad = hutchinson(
        |t| Ok(t.to_vec()),
        &theta,
        8,
        1e-3,
        &mut RandomSource::new(0),
    )
    .unwrap();

    let mut rs = RandomSource::new(11);
    let net = Network::random(&[3, 3, 2], Activation::Softplus, Init::Uniform, &mut rs).unwrap();
    let batch = random_batch(&mut rs, 8, 3, 2, true);
    let exact = fd_hessian_trace(&net, &batch, LossKind::CrossEntropy, 1e-4).unwrap();
    let est = hessian_trace(&net, &batch, LossKind::CrossEntropy, 200, &mut rs).unwrap();
    verdict(
        net.param_count() == 20 && (quad.estimate - 50.0).abs() < 1e-6 && (est.estimate - exact).abs() <= 3.0 * est.stderr,
        format!(
            "quadratic hook {:.9} (want 50); 20-parameter net: Hutchinson {:.5} +/- {:.5} vs FD trace {exact:.5}",
            quad.estimate, est.estimate, est.stderr
        ),
    )
}

fn c12_determinism() -> Verdict {
    let data = gen_sinusoid(&SinusoidSpec {
        points: 128,
        ..SinusoidSpec::default()
    })
    .unwrap();
    let one_thread = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let run = || -> Vec<Vec<u8>> {
        let net = Architecture::mlp(1, 16, 3, 1, Activation::Relu)
            .build(&mut RandomSource::new(12))
            .unwrap();
        let mut out = Vec::new();
        let mut snaps = Vec::new();
        for mode in [TrainMode::Baseline, TrainMode::Gni, TrainMode::Explicit] {
            let cfg = TrainConfig {
                mode,
                noise: NoiseSpec::uniform(3, NoiseMode::Additive, 0.1).unwrap(),
                learning_rate: 0.01,
                batch_size: 32,
                steps: 50,
                seed: 12,
                eval_every: 10,
                ..TrainConfig::default()
            };
            let (trained, log) = train(net.clone(), &data, Some(&data), &cfg).unwrap();
            let mut csv = Vec::new();
            log.write_csv(3, &mut csv).unwrap();
            out.push(csv);
            snaps.push((snaps.len(), trained));
        }
        let mut csv = Vec::new();
        spectrum(
            &snaps,
            &Grid {
                n: 128,
                ..Grid::default()
            },
        )
        .unwrap()
        .write_csv(&mut csv, false)
        .unwrap();
        out.push(csv);
        let cfg = DominanceConfig {
            draws: 50,
            seed: 12,
            ..DominanceConfig::default()
        };
        let rows = dominance_scan(
            &Architecture::mlp(1, 16, 3, 1, Activation::Sigmoid),
            &data,
            &[0.1, 1.0],
            3,
            &cfg,
        )
        .unwrap();
        out.push(serde_json::to_vec(&rows).unwrap());
        out
    };
    let first = run();
    let second = run();
    let serial = one_thread.install(run);
    let same = first == second && first == serial;
    verdict(
        same,
        format!("{} artifacts (metric CSVs, spectrum CSV, dominance table) identical across reruns and thread counts: {same}", first.len()),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut failures = 0;
    let mut report =
        |n: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Verdict| {
            if !want(n) {
                return;
            }
            let start = Instant::now();
            let v = f();
            let took = start.elapsed();
            let v = budget(v, took, limit);
            failures += usize::from(!v.pass);
            println!(
                "criterion {n:>2} [{}] {name}: {} ({took:.1?})",
                if v.pass { "PASS" } else { "FAIL" },
                v.detail
            );
        };
    let secs = |s: u64| Some(Duration::from_secs(s));
    report(1, "gradient correctness", secs(10), &mut c1_gradients);
    report(
        2,
        "exact-remainder oracle",
        secs(30),
        &mut c2_linear_remainder,
    );
    report(3, "cross-entropy Hessian", None, &mut c3_ce_hessian);
    report(4, "dominance", secs(600), &mut c4_dominance);
    if [5, 6, 7].into_iter().any(&want) {
        let start = Instant::now();
        let runs = spectral_runs();
        let took = start.elapsed();
        println!("(spectral runs: 5 seeds x 3 modes, 2000 steps each, {took:.1?})");
        let mut cached = Some(budget(c5_spectral(&runs), took, secs(1800)));
        report(5, "spectral bias", None, &mut || cached.take().unwrap());
        report(6, "training-profile match", None, &mut || c6_profile(&runs));
        report(7, "layer striation", None, &mut || c7_striation(&runs));
    }
    report(8, "Parseval proxy", None, &mut c8_parseval);
    report(9, "margin bound", None, &mut c9_margin);
    report(10, "calibration", None, &mut c10_calibration);
    report(11, "Hessian trace", None, &mut c11_hessian);
    report(12, "determinism", None, &mut c12_determinism);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
