//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Single-threaded so the determinism check is meaningful.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sshd_core::ablate::{lambda_grid, lambda_sweep};
use sshd_core::blocks::{OdAttention, OdConv};
use sshd_core::data::*;
use sshd_core::gradsuite::run_suite;
use sshd_core::sshd_tensor::{Tape, Tensor};
use sshd_core::threads::{configure_threads, THREADS_VAR};
use sshd_core::train::training_batch;
use sshd_core::*;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let rows = run_suite(None, 20, 1e-4).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let worst = rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    check(
        failed.is_empty() && elapsed < Duration::from_secs(300),
        format!("{} cases x 20 seeds, max rel err {worst:.2e}, failed {failed:?}, {:.1}s", rows.len(), elapsed.as_secs_f64()),
    )
}

fn odconv_reduction() -> Outcome {
    let mut r = rng(21);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (b, cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=6), r.gen_range(1..=6));
        let k = [1, 3, 5][r.gen_range(0..3)];
        let (h, w) = (r.gen_range(2..=9), r.gen_range(2..=9));
        let cfg = ModelConfig { od_kernels: 1, od_kernel_size: k, ..ModelConfig::default() };
        let mut store = ParamStore::<f64>::new();
        let od = OdConv::new(&mut store, &mut Init::new(r.gen()), &cfg, "od", cin, cout);
        let x = Tensor::new(vec![b, cin, h, w], (0..b * cin * h * w).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let weight = store.value(od.weights).clone().reshape(vec![cout, cin, k, k]).unwrap();
        let mut ctx = Ctx::new(&mut store, Mode::Eval, false);
        let xv = ctx.tape.constant(x);
        let ones = |t: &mut Tape<f64>, shape: Vec<usize>| t.constant(Tensor::ones(shape));
        let att = OdAttention {
            kernel: ones(&mut ctx.tape, vec![b, 1]),
            spatial: ones(&mut ctx.tape, vec![b, k, k]),
            channel: ones(&mut ctx.tape, vec![b, cin]),
            filter: ones(&mut ctx.tape, vec![b, cout]),
        };
        let dynamic = od.apply(&mut ctx, xv, &att).map_err(|e| e.to_string())?;
        let wv = ctx.tape.constant(weight);
        let plain = ctx.tape.conv2d(xv, wv, None, 1, k / 2).map_err(|e| e.to_string())?;
        worst = worst.max(ctx.tape.value(dynamic).max_abs_diff(ctx.tape.value(plain)).unwrap());
    }
    check(worst <= 1e-10, format!("50 shapes, max abs diff {worst:.2e}"))
}

fn anms_oracle() -> Outcome {
    let mut r = rng(31);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let hm = random_heatmap(&mut r, 16, 16);
        for lambda in [0.05, 0.25, 0.55] {
            for tau in [0.0, 0.2] {
                let cfg = AnmsConfig { lambda, tau };
                mismatches += usize::from(anms(&hm, &cfg) != brute_anms(&hm, &cfg));
            }
        }
    }
    let pair = |second: f64| {
        let mut v = vec![0.0; 49];
        v[8] = 0.9;
        v[40] = second;
        anms(&Heatmap::new(7, 7, v).unwrap(), &AnmsConfig { lambda: 0.25, tau: 0.0 }).len()
    };
    let (suppressed, retained) = (pair(0.6), pair(0.8));
    check(
        mismatches == 0 && suppressed == 1 && retained == 2,
        format!("1000 maps x 6 settings, {mismatches} mismatches; 0.9/0.6 keeps {suppressed}, 0.9/0.8 keeps {retained}"),
    )
}

fn lambda_monotonicity(maps: &[Heatmap], labels: &[&[PointLabel]]) -> Outcome {
    let report = lambda_sweep(maps, labels, 0.2, MatchRule::default());
    let recalls: Vec<f64> = report.rows.iter().map(|r| r.metrics.recall).collect();
    let ok = report.rows.len() == lambda_grid().len() && recalls.windows(2).all(|w| w[1] >= w[0]);
    check(ok, format!("{} trained-model maps, recall {:?}", maps.len(), recalls.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>()))
}

fn clustering_oracle() -> Outcome {
    let mut r = rng(51);
    let mut mismatches = 0;
    for _ in 0..500 {
        let mask = random_mask(&mut r, 32, 32);
        let mut ours = cluster_mask(&mask);
        for c in &mut ours {
            c.sort_unstable();
        }
        mismatches += usize::from(ours != flood_fill(&mask));
    }
    check(mismatches == 0, format!("500 masks, {mismatches} mismatches"))
}

fn metrics_arithmetic() -> Outcome {
    let mut r = rng(61);
    let mut worst = 0.0f64;
    let mut triples: Vec<(usize, usize, usize)> = (0..1000).map(|_| (r.gen_range(0..200), r.gen_range(0..200), r.gen_range(0..200))).collect();
    triples.extend([(0, 0, 0), (0, 5, 0), (0, 0, 5), (0, 3, 4)]);
    for (tp, fp, fn_) in triples {
        let got = compute_prf(MatchCounts { tp, fp, fn_ });
        let (p, rc, f) = prf_oracle(tp, fp, fn_);
        worst = worst.max((got.precision - p).abs()).max((got.recall - rc).abs()).max((got.f1 - f).abs());
    }
    let pred = [Detection { x: 3, y: 4, score: 1.0 }];
    let gt = [PointLabel { x: 0, y: 0 }];
    let inclusive = match_with(&pred, &gt, MatchRule { radius: 5.0, inclusive: true });
    let exclusive = match_with(&pred, &gt, MatchRule { radius: 5.0, inclusive: false });
    check(
        worst <= 1e-12 && inclusive.tp == 1 && exclusive.tp == 0,
        format!("1004 triples, max err {worst:.1e}; distance 5 inclusive tp={} exclusive tp={}", inclusive.tp, exclusive.tp),
    )
}

fn heatmap_invariants() -> Outcome {
    let mut r = rng(71);
    let mut problems = Vec::new();
    for i in 0..200 {
        let (h, w) = (r.gen_range(8..24), r.gen_range(8..24));
        let pts = random_points(&mut r, h, w, 5);
        let hm = make_gt_heatmap(&pts, h, w, 1.5).map_err(|e| e.to_string())?;
        if pts.iter().any(|p| hm.get(p.y, p.x) != 1.0) {
            problems.push(format!("set {i}: peak"));
        }
        // max-combination: the joint map is the pointwise max of single-target maps
        let mut joint = vec![0.0f64; h * w];
        for p in &pts {
            let single = make_gt_heatmap(&[*p], h, w, 1.5).unwrap();
            for (j, v) in joint.iter_mut().zip(&single.values) {
                *j = j.max(*v);
            }
        }
        if hm.values != joint || gaussian_oracle(&pts, h, w, 1.5).iter().zip(&hm.values).any(|(a, b)| (a - b).abs() > 1e-15) {
            problems.push(format!("set {i}: combination"));
        }
        if let Some(p) = pts.first() {
            // mirror symmetry about a lone target
            let single = make_gt_heatmap(&[*p], h, w, 1.5).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let (my, mx) = (2 * p.y as i64 - y as i64, 2 * p.x as i64 - x as i64);
                    if (0..h as i64).contains(&my) && (0..w as i64).contains(&mx) && single.get(y, x) != single.get(my as usize, mx as usize) {
                        problems.push(format!("set {i}: symmetry"));
                    }
                }
            }
            if p.x + 1 < w && (single.get(p.y, p.x + 1) - 0.80074).abs() > 1e-5 {
                problems.push(format!("set {i}: neighbour {}", single.get(p.y, p.x + 1)));
            }
        }
    }
    problems.dedup();
    check(problems.is_empty(), format!("200 label sets, problems {problems:?}"))
}

fn single_sample_overfit() -> Outcome {
    let t = Instant::now();
    let sc = SynthConfig { height: 32, width: 32, seed: 3, ..SynthConfig::default() };
    let sample = synth_dataset(&sc, 1, "overfit").map_err(|e| e.to_string())?.remove(0).sample;
    let cfg = ModelConfig { input_size: 32, ..ModelConfig::default() };
    let mut model = build_model::<f32>(&cfg).map_err(|e| e.to_string())?;
    let tc = TrainConfig::default();
    let mut opt = Optimizer::new(&tc, &model.store);
    let (x, gt) = training_batch::<f32>(std::slice::from_ref(&sample), &cfg).map_err(|e| e.to_string())?;
    let mut loss = f64::NAN;
    for _ in 0..500 {
        loss = train_step(&mut model, &mut opt, &x, &gt).map_err(|e| e.to_string())?;
    }
    let out = detect(&mut model, &[&sample.image], &AnmsConfig::default()).map_err(|e| e.to_string())?;
    let mut found: Vec<(usize, usize)> = out[0].0.iter().map(|d| (d.x, d.y)).collect();
    let mut want: Vec<(usize, usize)> = sample.labels.iter().map(|p| (p.x, p.y)).collect();
    found.sort_unstable();
    want.sort_unstable();
    let elapsed = t.elapsed();
    check(
        loss < 1e-3 && found == want && elapsed < Duration::from_secs(120),
        format!("final mse {loss:.2e}, decoded {found:?} vs labels {want:?}, {:.1}s", elapsed.as_secs_f64()),
    )
}

/// Scenes, model and outcome of one end-to-end synthetic run.
struct EndToEnd {
    samples: Vec<Sample>,
    model: Model<f32>,
    outcome: TrainOutcome,
    seconds: f64,
}

const E2E_TRAIN: usize = 512;
const E2E_VAL: usize = 128;
const E2E_TEST: usize = 128;

fn end_to_end_run(out: &Path) -> sshd_core::Result<EndToEnd> {
    let t = Instant::now();
    let sc = SynthConfig { seed: 7, ..SynthConfig::default() };
    let samples: Vec<Sample> = synth_dataset(&sc, E2E_TRAIN + E2E_VAL + E2E_TEST, "scene")?.into_iter().map(|s| s.sample).collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut model = build_model::<f32>(&ModelConfig::default())?;
    let outcome = train(&mut model, &refs[..E2E_TRAIN], &refs[E2E_TRAIN..E2E_TRAIN + E2E_VAL], &TrainConfig::default(), Some(out))?;
    Ok(EndToEnd { samples, model, outcome, seconds: t.elapsed().as_secs_f64() })
}

fn end_to_end(run: &mut EndToEnd) -> Outcome {
    let test: Vec<&Sample> = run.samples[E2E_TRAIN + E2E_VAL..].iter().collect();
    let (report, _) = evaluate(&mut run.model, &test, &AnmsConfig::default(), MatchRule::default()).map_err(|e| e.to_string())?;
    check(
        report.f1 >= 0.90 && run.seconds < 1800.0,
        format!(
            "test P {:.4} R {:.4} F1 {:.4} (best epoch {}), {:.0}s",
            report.precision, report.recall, report.f1, run.outcome.best_epoch, run.seconds
        ),
    )
}

fn format_roundtrips(first_best: &Path) -> Outcome {
    let mut r = rng(101);
    let mut failures = Vec::new();
    for i in 0..100 {
        let mut table = TensorTable::new();
        for k in 0..r.gen_range(1..5) {
            let shape: Vec<usize> = (0..r.gen_range(0..4)).map(|_| r.gen_range(1..5)).collect();
            let n = shape.iter().product();
            let data = (0..n).map(|_| f32::from_bits(r.gen::<u32>() & 0xff7f_ffff)).collect();
            table.insert(format!("layer{k}.w"), Tensor::new(shape, data).unwrap());
        }
        let back = decode_checkpoint(&encode_checkpoint(&table).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if encode_checkpoint(&back).unwrap() != encode_checkpoint(&table).unwrap() {
            failures.push(format!("checkpoint {i}"));
        }

        let (h, w) = (r.gen_range(1..20), r.gen_range(1..20));
        for maxval in [65535u16, 255] {
            let pgm = Pgm { width: w, height: h, maxval, samples: (0..h * w).map(|_| r.gen_range(0..=maxval)).collect() };
            let bytes = encode_pgm(&pgm);
            match decode_pgm(&bytes, "roundtrip") {
                Ok(back) if back == pgm && encode_pgm(&back) == bytes => {}
                _ => failures.push(format!("pgm {i} maxval {maxval}")),
            }
        }

        let hm = Heatmap::new(h, w, (0..h * w).map(|_| r.gen::<f32>() as f64).collect()).unwrap();
        match decode_raw_heatmap(&encode_raw_heatmap(&hm), "roundtrip") {
            Ok(back) if back == hm => {}
            _ => failures.push(format!("heatmap {i}")),
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rerun = end_to_end_run(dir.path()).map_err(|e| e.to_string())?;
    let a = std::fs::read(first_best).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.path().join("best.ckpt")).map_err(|e| e.to_string())?;
    check(
        failures.is_empty() && a == b,
        format!("100 instances per format, failures {failures:?}; re-run best.ckpt identical: {} ({:.0}s)", a == b, rerun.seconds),
    )
}

fn main() {
    std::env::set_var(THREADS_VAR, "1");
    configure_threads(Some(1));
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, result: Outcome| {
        eprintln!("criterion {n} done");
        results.push((n, name, result));
    };

    record(1, "gradient suite", gradient_suite());
    record(2, "odconv reduction", odconv_reduction());
    record(3, "anms oracle", anms_oracle());
    record(5, "clustering oracle", clustering_oracle());
    record(6, "metrics arithmetic", metrics_arithmetic());
    record(7, "heatmap invariants", heatmap_invariants());
    record(8, "single-sample overfit", single_sample_overfit());

    let dir = tempfile::tempdir().expect("temp dir");
    match end_to_end_run(dir.path()) {
        Ok(mut run) => {
            record(9, "end-to-end synthetic run", end_to_end(&mut run));
            // the sweep reuses the trained model on the first 100 test scenes
            let test: Vec<&Sample> = run.samples[E2E_TRAIN + E2E_VAL..][..100].iter().collect();
            let images: Vec<&Image> = test.iter().map(|s| &s.image).collect();
            let r4 = predict_heatmaps(&mut run.model, &images).map_err(|e| e.to_string()).and_then(|maps| {
                let labels: Vec<&[PointLabel]> = test.iter().map(|s| s.labels.as_slice()).collect();
                lambda_monotonicity(&maps, &labels)
            });
            record(4, "lambda monotonicity", r4);
        }
        Err(e) => {
            record(9, "end-to-end synthetic run", Err(e.to_string()));
            record(4, "lambda monotonicity", Err(format!("no trained model: {e}")));
        }
    }
    record(10, "format roundtrips and determinism", format_roundtrips(&dir.path().join("best.ckpt")));

    results.sort_by_key(|r| r.0);
    let mut all_ok = true;
    for (n, name, result) in results {
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        all_ok &= tag == "PASS";
        println!("{tag} {n:>2} {name}: {detail}");
    }
    if !all_ok {
        std::process::exit(1);
    }
}
