use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use sshd_core::ablate::{lambda_sweep, run_variants, topology_variants, width_variants, AblationReport, Suite};
use sshd_core::config::{load_run_config, load_synth_config};
use sshd_core::data::{
    dump_heatmap, format_labels, list_images, load_dataset_dir, read_image, read_mask, synth_dataset, write_dataset_dir, Dataset, HeatmapFormat,
    Sample, SplitManifest,
};
use sshd_core::gradsuite::run_suite;
use sshd_core::infer::{evaluate_records, read_detections, records_for, write_detections};
use sshd_core::{build_model, detect, evaluate, load_model, mask_to_points, predict_heatmaps, train as fit, AnmsConfig, MatchRule, RunConfig, SynthConfig};

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    })
}

fn splits(ds: &Dataset) -> anyhow::Result<[Vec<&Sample>; 3]> {
    Ok([ds.split("train")?, ds.split("val")?, ds.split("test")?])
}

pub fn train(config: Option<&Path>, data: &Path, out: &Path, split_seed: u64) -> anyhow::Result<()> {
    let cfg = run_config(config)?;
    let ds = load_dataset_dir(data, split_seed)?;
    let [train_set, val_set, test_set] = splits(&ds)?;
    if train_set.is_empty() {
        bail!("{} has no training samples", data.display());
    }
    create_dir(out)?;
    let mut model = build_model::<f32>(&cfg.model)?;
    log::info!("{} parameters, {} train / {} val / {} test", model.store.param_count(), train_set.len(), val_set.len(), test_set.len());
    let outcome = fit(&mut model, &train_set, &val_set, &cfg.train, Some(out))?;
    match outcome.best_f1 {
        Some(f1) => println!("best epoch {} (val F1 {f1:.4}), checkpoints in {}", outcome.best_epoch, out.display()),
        None => println!("trained {} epochs without validation, checkpoints in {}", outcome.history.len(), out.display()),
    }
    if !test_set.is_empty() {
        let anms = AnmsConfig { lambda: cfg.model.lambda, tau: cfg.model.tau };
        let (report, _) = evaluate(&mut model, &test_set, &anms, MatchRule::default())?;
        println!("test {}", serde_json::to_string(&report)?);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn infer(
    ckpt: &Path,
    images: &Path,
    out: &Path,
    config: Option<&Path>,
    dump: Option<&Path>,
    heatmap_format: &str,
    lambda: Option<f64>,
    tau: Option<f64>,
) -> anyhow::Result<()> {
    let format: HeatmapFormat = heatmap_format.parse()?;
    let model_cfg = config.map(load_run_config).transpose()?.map(|c| c.model);
    let mut model = load_model::<f32>(ckpt, model_cfg.as_ref())?;
    let anms = AnmsConfig { lambda: lambda.unwrap_or(model.cfg.lambda), tau: tau.unwrap_or(model.cfg.tau) };
    if let Some(d) = dump {
        create_dir(d)?;
    }
    let paths = list_images(images)?;
    let mut records = Vec::new();
    // bounded batches keep memory flat on large directories
    for chunk in paths.chunks(64) {
        let loaded = chunk.iter().map(|p| read_image(p)).collect::<sshd_core::Result<Vec<_>>>()?;
        let refs: Vec<_> = loaded.iter().collect();
        for (path, (dets, hm)) in chunk.iter().zip(detect(&mut model, &refs, &anms)?) {
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if let Some(d) = dump {
                let ext = match format {
                    HeatmapFormat::Pgm => "pgm",
                    HeatmapFormat::Raw => "raw",
                };
                dump_heatmap(&hm, &d.join(format!("{id}.{ext}")), format)?;
            }
            records.extend(records_for(&id, &dets));
        }
    }
    write_detections(out, &records)?;
    println!("{} detections in {} images", records.len(), paths.len());
    Ok(())
}

pub fn eval(pred: &Path, gt: &Path, rule: MatchRule, split: Option<&str>) -> anyhow::Result<()> {
    let ds = load_dataset_dir(gt, 0)?;
    let samples = match split {
        Some(name) => ds.split(name)?,
        None => ds.samples.iter().collect(),
    };
    let labels: BTreeMap<String, Vec<_>> = samples.iter().map(|s| (s.id.clone(), s.labels.clone())).collect();
    let report = evaluate_records(&read_detections(pred)?, &labels, rule)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn annotate(masks: &Path, images: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    create_dir(out)?;
    let paths = list_images(masks)?;
    let mut targets = 0;
    for path in &paths {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mask = read_mask(path)?;
        let intensity = match images {
            Some(dir) => {
                let im = read_image(&dir.join(format!("{id}.pgm")))?;
                if (im.height, im.width) != (mask.height, mask.width) {
                    bail!("{id}: mask is {}×{}, image is {}×{}", mask.width, mask.height, im.width, im.height);
                }
                Some(im.pixels.iter().map(|&v| v as f64).collect::<Vec<_>>())
            }
            None => None,
        };
        let points = mask_to_points(&mask, intensity.as_deref());
        targets += points.len();
        let dest = out.join(format!("{id}.csv"));
        std::fs::write(&dest, format_labels(&points)).with_context(|| format!("writing {}", dest.display()))?;
    }
    println!("{targets} points from {} masks", paths.len());
    Ok(())
}

pub fn synth(config: Option<&Path>, out: &Path, count: usize) -> anyhow::Result<()> {
    let cfg = match config {
        Some(p) => load_synth_config(p)?,
        None => SynthConfig::default(),
    };
    let samples: Vec<Sample> = synth_dataset(&cfg, count, "synth")?.into_iter().map(|s| s.sample).collect();
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    write_dataset_dir(out, &samples, &SplitManifest::random(&ids, cfg.seed))?;
    let targets: usize = samples.iter().map(|s| s.labels.len()).sum();
    println!("{count} images, {targets} targets in {}", out.display());
    Ok(())
}

pub fn ablate(
    suite: &str,
    data: &Path,
    ckpt: Option<&Path>,
    config: Option<&Path>,
    widths: &[usize],
    split_seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let suite: Suite = suite.parse()?;
    let cfg = run_config(config)?;
    let ds = load_dataset_dir(data, split_seed)?;
    let [train_set, val_set, test_set] = splits(&ds)?;
    let report: AblationReport = match suite {
        Suite::Lambda => {
            let Some(ckpt) = ckpt else {
                return Err(sshd_core::CoreError::Usage("the lambda suite needs --ckpt".into()).into());
            };
            let model_cfg = config.map(|_| cfg.model.clone());
            let mut model = load_model::<f32>(ckpt, model_cfg.as_ref())?;
            let images: Vec<_> = test_set.iter().map(|s| &s.image).collect();
            let maps = predict_heatmaps(&mut model, &images)?;
            let labels: Vec<&[_]> = test_set.iter().map(|s| s.labels.as_slice()).collect();
            lambda_sweep(&maps, &labels, model.cfg.tau, MatchRule::default())
        }
        Suite::Width => run_variants("width", &width_variants(&cfg.model, widths), &train_set, &val_set, &test_set, &cfg.train)?,
        Suite::Topology => run_variants("topology", &topology_variants(&cfg.model), &train_set, &val_set, &test_set, &cfg.train)?,
    };
    print!("{}", report.to_table());
    if let Some(p) = out {
        std::fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn gradcheck(ops: &str, seeds: u64, tol: f64) -> anyhow::Result<()> {
    let rows = run_suite(Some(ops), seeds, tol)?;
    println!("{:<24} {:>12} {:>8} {:>8}  result", "case", "max rel err", "checked", "kinks");
    for r in &rows {
        println!("{:<24} {:>12.3e} {:>8} {:>8}  {}", r.name, r.max_rel_err, r.checked, r.skipped_nonsmooth, if r.passed { "ok" } else { "FAIL" });
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", rows.len());
    }
    Ok(())
}
