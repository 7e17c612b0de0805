#![allow(clippy::type_complexity, clippy::needless_range_loop)]

//! Acceptance run: one PASS/FAIL line per criterion, then a summary.
//!
//! Criteria 5 to 8, 10 and 11 train two full-size models (λ = 0.3 and λ = 0)
//! in lockstep and then repeat that work for the reproducibility check, so
//! this target takes a long time in debug builds; run it with `--release`.
//! The process exits non-zero only if the harness itself breaks; failing
//! criteria are reported, not hidden.

mod common;

use std::f64::consts::FRAC_PI_4;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng as _;

use pcreal_core::eval::{chamfer, noise_sweep, noise_sweep_csv, upsampling_baseline};
use pcreal_core::net::{Init, MetricModel, ModelConfig};
use pcreal_core::pcgen::{inject_patch_anomaly, AzimuthInterval, DatasetSuite};
use pcreal_core::rng::{derive_seed, rng_from_seed};
use pcreal_core::score::{export_features, interpolate, knn_feature_probe, score_cloud, FeatureLabel};
use pcreal_core::spatial::{farthest_point_sampling, knn};
use pcreal_core::train::{
    adversary_lower_bound, run_lockstep, sweep_csv, EvalSet, SweepRow, TrainConfig, Trainer,
};
use pcreal_core::{Category, Point, PointCloud};

/// Training steps of the criterion-5 runs. The default configuration trains
/// for 6000 steps; see the README for why the acceptance run is shorter.
const TRAIN_STEPS: u64 = 400;
const SEED: u64 = 2024;
const GRAD_TOL: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn line(n: u32, name: &str, o: Outcome, elapsed: Duration, limit: Option<Duration>) -> bool {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = o.pass && in_time;
    let limit = limit.map_or(String::new(), |l| format!(", limit {} s", l.as_secs()));
    println!(
        "criterion {n:>2} {} {name}: {} [{:.1} s{limit}{}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        if in_time { "" } else { ", over time" }
    );
    pass
}

fn report(n: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let (o, elapsed) = timed(f);
    line(n, name, o, elapsed, Some(limit))
}

fn gradient_reversal() -> Outcome {
    let checks: Vec<_> = (0..20).map(common::gradcheck::reversal).collect();
    let worst = checks.iter().map(|c| c.numeric).fold(0.0, f64::max);
    let exact = checks.iter().map(|c| c.analytic).fold(0.0, f64::max);
    let head = checks.iter().map(|c| c.adversary_head).fold(0.0, f64::max);
    let skipped: usize = checks.iter().map(|c| c.skipped).sum();
    let total: usize = checks.iter().map(|c| c.total).sum();
    outcome(
        worst < GRAD_TOL && exact < GRAD_TOL && head < GRAD_TOL,
        format!(
            "20 models, extractor vs -λ·numeric {worst:.1e}, vs -λ·analytic {exact:.1e}, adversary head {head:.1e} \
             ({skipped}/{total} coordinates on a kink skipped)"
        ),
    )
}

fn layer_gradients() -> Outcome {
    use common::gradcheck as g;
    let simple: [(&str, fn(u64) -> f64); 5] = [
        ("dense", g::dense),
        ("leaky-relu", g::leaky_relu),
        ("max", g::max_pool),
        ("cross-entropy", g::cross_entropy),
        ("head", g::head),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f) in simple {
        let worst = (0..20).map(f).fold(0.0, f64::max);
        pass &= worst < GRAD_TOL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let ext: Vec<_> = (0..20).map(g::extractor).collect();
    let worst = ext.iter().map(|c| c.error).fold(0.0, f64::max);
    let skipped: usize = ext.iter().map(|c| c.skipped).sum();
    let total: usize = ext.iter().map(|c| c.total).sum();
    pass &= worst < GRAD_TOL && skipped * 20 < total;
    parts.push(format!("extractor {worst:.1e} ({skipped}/{total} skipped)"));
    outcome(
        pass,
        format!("max rel. error over 20 shapes each: {}", parts.join(", ")),
    )
}

fn random_instance(rng: &mut pcreal_core::rng::Rng) -> Vec<Point> {
    let n = rng.gen_range(1..=256);
    let grid = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            if grid {
                [
                    rng.gen_range(-6..6) as f64 * 0.5,
                    rng.gen_range(-6..6) as f64 * 0.5,
                    rng.gen_range(-2..2) as f64 * 0.5,
                ]
            } else {
                [
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-3.0..3.0),
                ]
            }
        })
        .collect()
}

fn spatial_oracles() -> Outcome {
    let mut rng = rng_from_seed(SEED);
    let mut fps_bad = 0;
    let mut knn_bad = 0;
    for _ in 0..500 {
        let points = random_instance(&mut rng);
        let m = rng.gen_range(1..=points.len());
        if farthest_point_sampling(&points, m).unwrap().indices != common::fps(&points, m) {
            fps_bad += 1;
        }
        let queries: Vec<Point> = (0..rng.gen_range(1..32))
            .map(|_| points[rng.gen_range(0..points.len())])
            .collect();
        let k = rng.gen_range(1..=16);
        let table = knn(&points, &queries, k).unwrap();
        let oracle = common::knn(&points, &queries, k);
        if (0..queries.len()).any(|q| table.row(q) != oracle[q].as_slice()) {
            knn_bad += 1;
        }
    }
    let mut chamfer_bad = 0;
    for _ in 0..100 {
        let a = random_instance(&mut rng);
        let b = random_instance(&mut rng);
        let got = chamfer(&PointCloud::new(a.clone()), &PointCloud::new(b.clone())).unwrap();
        if got.to_bits() != common::chamfer(&a, &b).to_bits() {
            chamfer_bad += 1;
        }
    }
    outcome(
        fps_bad + knn_bad + chamfer_bad == 0,
        format!("mismatches: FPS {fps_bad}/500, KNN {knn_bad}/500, Chamfer {chamfer_bad}/100"),
    )
}

fn permutation_invariance() -> Outcome {
    let suite = DatasetSuite::default();
    let model = MetricModel::<f32>::new(ModelConfig::default(), SEED, Init::Random).unwrap();
    let mut rng = rng_from_seed(SEED + 4);
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let pc = suite.generate(i as usize % suite.len(), SEED + 4, i).unwrap();
        let mut order: Vec<usize> = (0..pc.len()).collect();
        order.shuffle(&mut rng);
        let a = score_cloud(&model, &pc).unwrap().scene;
        let b = score_cloud(&model, &pc.permuted(&order)).unwrap().scene;
        for c in 0..3 {
            worst = worst.max((a[c] - b[c]).abs());
        }
    }
    outcome(
        worst < 1e-6,
        format!("50 clouds, max |ΔS| = {worst:.1e} (random-init model)"),
    )
}

/// Everything criteria 5 to 8 and 10 need from one pass of training plus the
/// CSV files criterion 11 compares.
struct Trained {
    config: TrainConfig,
    trainers: Vec<Trainer>,
    eval: EvalSet,
    csv: Vec<(&'static str, String)>,
}

impl Trained {
    fn model(&self, lambda: f64) -> &MetricModel<f32> {
        &self.trainers.iter().find(|t| t.lambda() == lambda).unwrap().model
    }
}

fn train_pair() -> Trained {
    let mut config = TrainConfig {
        steps: TRAIN_STEPS,
        seed: SEED,
        eval_per_dataset: 20,
        ..TrainConfig::default()
    };
    config.eval_every = config.steps;
    let eval = EvalSet::generate(&config, config.eval_per_dataset).unwrap();
    let mut trainers: Vec<Trainer> = [0.3, 0.0]
        .iter()
        .map(|&l| Trainer::new(config.clone().with_lambda(l)).unwrap())
        .collect();
    run_lockstep(&mut trainers, Some(&eval)).unwrap();
    let rows: Vec<SweepRow> = trainers
        .iter()
        .map(|t| {
            let e = t.report.last_evaluation().unwrap();
            SweepRow {
                lambda: t.lambda(),
                acc_c: e.acc_c,
                acc_a: e.acc_a,
            }
        })
        .collect();
    let mut csv = vec![("lambda_sweep.csv", sweep_csv(&rows))];
    for t in &trainers {
        let name = if t.lambda() == 0.0 {
            "metrics_lambda0.csv"
        } else {
            "metrics_lambda0.3.csv"
        };
        csv.push((name, t.report.metrics_csv()));
    }
    Trained {
        config,
        trainers,
        eval,
        csv,
    }
}

fn training(run: &Trained) -> Outcome {
    let t = &run.trainers[0];
    let e = t.report.last_evaluation().unwrap();
    let acc_a = e.acc_a.unwrap_or(f64::NAN);
    let bound = adversary_lower_bound(3, 7, true, 2).unwrap();
    let losses = &t.report.losses;
    let window = 100.min(losses.len());
    let mean =
        |s: &[pcreal_core::train::StepLosses]| s.iter().map(|l| l.classifier).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&losses[..window]), mean(&losses[losses.len() - window..]));
    outcome(
        e.acc_c >= 0.95 && acc_a <= 0.60 && last < first,
        format!(
            "λ=0.3, {} steps ({} clouds held out): ACC_C {:.3} (≥ 0.95), ACC_A {:.3} (≤ 0.60, bound {bound}), \
             classifier loss {first:.3} → {last:.3}, training time covers both λ",
            t.step_count(),
            run.eval.len(),
            e.acc_c,
            acc_a,
        ),
    )
}

fn real_clouds(config: &TrainConfig, per_dataset: u64, stream: u64) -> Vec<(PointCloud, FeatureLabel)> {
    let seed = derive_seed(config.seed, stream);
    config
        .suite
        .real_ids()
        .into_iter()
        .flat_map(|id| (0..per_dataset).map(move |i| (id, i)))
        .map(|(id, i)| {
            (
                config.suite.generate(id, seed, i).unwrap(),
                FeatureLabel {
                    dataset: id,
                    category: Category::Real,
                },
            )
        })
        .collect()
}

fn probe(run: &mut Trained) -> Outcome {
    let clouds = real_clouds(&run.config, 25, 6);
    let acc = |lambda| {
        let table = export_features(run.model(lambda), &clouds).unwrap();
        knn_feature_probe(&table, 5).unwrap()
    };
    let (fair, plain) = (acc(0.3), acc(0.0));
    run.csv.push((
        "probe.csv",
        format!("lambda,probe_accuracy\n0.3,{fair:.6}\n0,{plain:.6}\n"),
    ));
    outcome(
        plain - fair >= 0.15,
        format!(
            "5-NN probe on {} Real clouds: λ=0 {plain:.3}, λ=0.3 {fair:.3}, gap {:.3} (≥ 0.15)",
            clouds.len(),
            plain - fair
        ),
    )
}

fn noise(run: &mut Trained) -> Outcome {
    let sim = &run.config.suite.datasets[2];
    assert_eq!(sim.category, Category::Synthetic);
    let rows = noise_sweep(
        run.model(0.3),
        &sim.generator,
        &run.config.suite.pattern,
        &[0.0, 0.1, 1.0, 3.0, 10.0],
        100,
        derive_seed(SEED, 7),
    )
    .unwrap();
    run.csv.push(("noise_sweep.csv", noise_sweep_csv(&rows)));
    let (lo, hi) = (&rows[0], rows.last().unwrap());
    let misc_up = hi.mean[2] - lo.mean[2];
    let syn_down = lo.mean[1] - hi.mean[1];
    outcome(
        misc_up >= 0.3 && syn_down >= 0.3,
        format!(
            "{} clouds: S^Misc {:.3} → {:.3} (rise {misc_up:.3}), S^Synthetic {:.3} → {:.3} (drop {syn_down:.3}), both ≥ 0.3",
            100, lo.mean[2], hi.mean[2], lo.mean[1], hi.mean[1]
        ),
    )
}

fn anomaly(run: &mut Trained) -> Outcome {
    let model = run.model(0.3);
    let clouds = real_clouds(&run.config, 10, 8);
    let mut rng = rng_from_seed(derive_seed(SEED, 9));
    let mut csv = String::from("scan,dataset,in_patch_real,out_patch_real\n");
    let (mut inside, mut outside) = (0.0, 0.0);
    for (i, (pc, label)) in clouds.iter().enumerate() {
        let start = rng.gen_range(0.0..std::f64::consts::TAU);
        let patch = inject_patch_anomaly(
            pc,
            AzimuthInterval::new(start, FRAC_PI_4).unwrap(),
            1.0,
            rng.gen(),
        )
        .unwrap();
        let scores = score_cloud(model, &patch.cloud).unwrap();
        let map = interpolate(&scores, &patch.cloud.points).unwrap();
        let outside_mask: Vec<bool> = patch.mask.iter().map(|m| !m).collect();
        let a = map.mean_where(&patch.mask).unwrap()[0];
        let b = map.mean_where(&outside_mask).unwrap()[0];
        csv.push_str(&format!("{i},{},{a:.6},{b:.6}\n", label.dataset));
        inside += a / clouds.len() as f64;
        outside += b / clouds.len() as f64;
    }
    run.csv.push(("anomaly.csv", csv));
    outcome(
        outside - inside >= 0.2,
        format!(
            "{} scans: p^Real in patch {inside:.3}, outside {outside:.3}, gap {:.3} (≥ 0.2)",
            clouds.len(),
            outside - inside
        ),
    )
}

fn lower_bound() -> Outcome {
    let open = adversary_lower_bound(3, 7, false, 2).unwrap();
    let filtered = adversary_lower_bound(3, 7, true, 2).unwrap();
    outcome(
        open == 3.0 / 7.0 && filtered == 0.5,
        format!("unfiltered {open:.6} (3/7), filtered {filtered} (1/2)"),
    )
}

fn baseline(run: &Trained) -> Outcome {
    let urban = &run.config.suite.datasets[0];
    let rows = upsampling_baseline(
        Some(run.model(0.3)),
        &urban.generator,
        &run.config.suite.pattern,
        4,
        50,
        derive_seed(SEED, 10),
    )
    .unwrap();
    let n = rows.len() as f64;
    let mse = rows.iter().map(|r| r.mse).sum::<f64>() / n;
    let positive = rows.iter().all(|r| r.mse > 0.0);
    let gt = rows.iter().map(|r| r.realism.unwrap().0).sum::<f64>() / n;
    let up = rows.iter().map(|r| r.realism.unwrap().1).sum::<f64>() / n;
    outcome(
        positive && gt > up,
        format!("50 scans, 4× bilinear: mean MSE {mse:.3} m² (all > 0: {positive}), S^Real ground truth {gt:.4} vs up-sampled {up:.4}"),
    )
}

fn criteria_5_to_8() -> (Trained, Vec<(Outcome, Duration)>) {
    let (mut run, setup) = timed(train_pair);
    let c5 = (training(&run), setup);
    let c6 = timed(|| probe(&mut run));
    let c7 = timed(|| noise(&mut run));
    let c8 = timed(|| anomaly(&mut run));
    (run, vec![c5, c6, c7, c8])
}

fn main() {
    // `cargo test` passes harness flags; a name filter skips the long run.
    if std::env::args().skip(1).any(|a| !a.starts_with('-')) {
        return;
    }
    let mut passed = 0;
    passed += report(1, "gradient reversal", minutes(1), gradient_reversal) as u32;
    passed += report(2, "layer gradient checks", minutes(2), layer_gradients) as u32;
    passed += report(3, "spatial oracles", minutes(2), spatial_oracles) as u32;
    passed += report(4, "permutation invariance", minutes(2), permutation_invariance) as u32;

    let (run, outcomes) = criteria_5_to_8();
    // Criterion 5 is timed over training both models in lockstep, which is
    // stricter than the single λ=0.3 run the limit refers to.
    let names = [
        "desk-scale training",
        "fairness probe",
        "noise sweep",
        "anomaly localization",
    ];
    let limits = [minutes(45), minutes(5), minutes(5), minutes(5)];
    for (i, (o, elapsed)) in outcomes.into_iter().enumerate() {
        passed += line(5 + i as u32, names[i], o, elapsed, Some(limits[i])) as u32;
    }
    passed += report(9, "adversary lower bound", minutes(1), lower_bound) as u32;
    passed += report(10, "up-sampling baseline", minutes(10), || baseline(&run)) as u32;

    let (o, elapsed) = timed(|| {
        let (again, _) = criteria_5_to_8();
        let differ: Vec<&str> = run
            .csv
            .iter()
            .zip(&again.csv)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0)
            .collect();
        outcome(
            differ.is_empty() && run.csv.len() == again.csv.len(),
            format!(
                "{} CSV files from criteria 5 to 8 rerun with seed {SEED}: {}",
                run.csv.len(),
                if differ.is_empty() {
                    "byte-identical".to_string()
                } else {
                    format!("differ: {}", differ.join(", "))
                }
            ),
        )
    });
    passed += line(11, "reproducibility", o, elapsed, None) as u32;
    println!("acceptance: {passed}/11 criteria passed");
}
