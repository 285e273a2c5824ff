use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use maskface::augment::{image_stream_seed, masked_file_name, DatasetJob, MaskPolicy, SidecarLandmarks, Status};
use maskface::embed::{read_embeddings, read_embeddings_csv, write_embeddings, Embedding, MiningMode, StepSchedule, ToyEncoder, TrainConfig, TripletLossParams};
use maskface::maskwarp::{builtin_library, parse_hex_color, MaskLibrary};
use maskface::synth::{write_face_fixture, FeatureModel};
use maskface::verifeval::{
    calibrate, cluster_identities, cluster_quality, evaluate, generate_pairs, heatmap, read_pairs, score_pairs,
    threshold_at_far, write_pairs, CalibrationConfig, CellThresholds, EmbeddingSet, FarDefinition, HeatmapConfig,
    PairSides, ThresholdCalibration,
};
use maskface::{load_landmarks, mask_dataset, mask_image, train_toy, SplitMix64};
use serde::Serialize;
use serde_json::json;

use crate::config::{FileConfig, Overrides, Resolved};
use crate::{parse_mining, Cli, CliError, Command, Style};

type Res<T = ()> = Result<T, CliError>;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training identities.
    #[arg(long, default_value_t = 40)]
    identities: usize,
    #[arg(long, default_value_t = 8)]
    per_identity: usize,
    /// Held-out identities embedded after training.
    #[arg(long, default_value_t = 40)]
    eval_identities: usize,
    #[arg(long, default_value_t = 6)]
    eval_per_identity: usize,
    /// Input feature width.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    /// Trailing feature dims replaced when a sample is masked.
    #[arg(long, default_value_t = 12)]
    occluded: usize,
    #[arg(long, default_value_t = 0.35)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    mask_strength: f64,
    /// Add the masked variant of every training sample.
    #[arg(long)]
    mixed: bool,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_identities: usize,
    #[arg(long, default_value_t = 4)]
    batch_samples: usize,
    #[arg(long, default_value = "semi-hard", value_parser = parse_mining)]
    mining: MiningMode,
    #[arg(long, default_value_t = 0.2)]
    margin: f64,
}

fn emit(value: &impl Serialize) -> Res {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Res {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Res {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn library(cfg: &Resolved) -> Res<MaskLibrary> {
    Ok(match &cfg.assets {
        Some(dir) => MaskLibrary::load_dir(dir)?,
        None => builtin_library(),
    })
}

fn apply_style(policy: &mut MaskPolicy, style: &Style, lib: &MaskLibrary) -> Res {
    if let Some(p) = &style.pattern {
        lib.pattern(p)?;
        policy.pattern = Some(p.clone());
    }
    if let Some(c) = &style.color {
        policy.color = Some(match lib.color(c) {
            Some(rgb) => rgb,
            None => parse_hex_color(c)?,
        });
    }
    Ok(())
}

/// `tag=path` or a bare path whose tag is the file stem.
fn split_spec(spec: &str) -> (Option<String>, PathBuf) {
    match spec.split_once('=') {
        Some((tag, path)) if !tag.is_empty() => (Some(tag.to_string()), PathBuf::from(path)),
        _ => (None, PathBuf::from(spec)),
    }
}

fn load_embeddings(path: &Path) -> Res<Vec<Embedding>> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        return Ok(read_embeddings_csv(path)?);
    }
    let file = fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    read_embeddings(std::io::BufReader::new(file)).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn load_set(spec: &str) -> Res<EmbeddingSet> {
    let (tag, path) = split_spec(spec);
    let tag = tag.unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    Ok(EmbeddingSet::new(tag, load_embeddings(&path)?))
}

pub fn run(cli: Cli) -> Res {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = Resolved::build(
        file,
        Overrides {
            seed: cli.seed,
            workers: cli.workers,
            out: cli.out.clone(),
        },
    )?;
    eprintln!(
        "config: {}",
        serde_json::to_string(&cfg).map_err(|e| CliError::Invalid(e.to_string()))?
    );
    let out_given = cli.out.is_some();
    match cli.command {
        Command::Mask {
            image,
            mask_type,
            style,
            landmarks,
        } => cmd_mask(&cfg, out_given, &image, mask_type, &style, landmarks.as_deref()),
        Command::MaskDir {
            root,
            mask_types,
            pattern_probability,
            pattern_intensity,
            style,
            no_originals,
            max_residual,
        } => {
            let lib = library(&cfg)?;
            let mut policy = cfg.policy();
            if let Some(t) = mask_types {
                policy.candidate_types = t;
            }
            if let Some(p) = pattern_probability {
                policy.pattern_probability = p;
            }
            if let Some(p) = pattern_intensity {
                policy.pattern_intensity = p;
            }
            if let Some(r) = max_residual {
                policy.max_residual_px = r;
            }
            policy.keep_original &= !no_originals;
            apply_style(&mut policy, &style, &lib)?;
            cmd_mask_dir(&cfg, out_given, &root, &lib, &policy)
        }
        Command::Pairs {
            template,
            unknown,
            n_pos,
            n_neg,
        } => cmd_pairs(&cfg, &template, unknown.as_deref(), n_pos, n_neg),
        Command::TrainToy(args) => cmd_train(&cfg, &args),
        Command::Eval {
            pairs,
            embeddings,
            far,
            folds,
            far_definition,
            calibration,
        } => cmd_eval(&cfg, &pairs, &embeddings, far, folds, far_definition, calibration.as_deref()),
        Command::Heatmap {
            embeddings,
            tags,
            calibration,
            far,
            n_pos,
            n_neg,
        } => cmd_heatmap(&cfg, &embeddings, tags, calibration.as_deref(), far, n_pos, n_neg),
        Command::Cluster { embeddings, threshold } => cmd_cluster(&cfg, &embeddings, threshold),
        Command::ExportAssets { dir } => {
            builtin_library().save_dir(&dir)?;
            emit(&json!({ "assets": dir }))
        }
        Command::SynthFaces {
            dir,
            count,
            size,
            no_face_every,
        } => {
            let files = write_face_fixture(&dir, count, size, cfg.seed, no_face_every)?;
            eprintln!("wrote {} images under {}", files.len(), dir.display());
            emit(&json!({ "dir": dir, "images": files.len() }))
        }
    }
}

fn cmd_mask(
    cfg: &Resolved,
    out_given: bool,
    image_path: &Path,
    mask_type: Option<maskface::MaskType>,
    style: &Style,
    landmarks: Option<&Path>,
) -> Res {
    let lib = library(cfg)?;
    let mut policy = cfg.policy();
    if let Some(t) = mask_type {
        policy.candidate_types = vec![t];
    }
    apply_style(&mut policy, style, &lib)?;
    let img = image::open(image_path)?.to_rgb8();
    let faces = match landmarks {
        Some(p) => load_landmarks(p)?,
        None => {
            let side = SidecarLandmarks::sidecar_path(image_path);
            if side.exists() {
                load_landmarks(side)?
            } else {
                Vec::new()
            }
        }
    };
    let name = image_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut rng = SplitMix64::new(image_stream_seed(cfg.seed, &name));
    let (masked, records) = mask_image(&img, &faces, &lib, &policy, &mut rng)?;
    let first = records.iter().find(|r| r.status == Status::Masked);
    let output = match first {
        Some(r) => {
            let beside = masked_file_name(image_path, r.mask_type.expect("masked face has a type"), r.pattern.as_deref());
            let dst = if out_given {
                ensure_dir(&cfg.out)?;
                cfg.out.join(beside.file_name().expect("file name"))
            } else {
                beside
            };
            masked.save(&dst)?;
            Some(dst)
        }
        None => None,
    };
    let n_masked = records.iter().filter(|r| r.status == Status::Masked).count();
    eprintln!("{}: {n_masked} of {} face(s) masked", image_path.display(), faces.len());
    emit(&json!({ "input": image_path, "output": output, "records": records }))
}

fn cmd_mask_dir(cfg: &Resolved, out_given: bool, root: &Path, lib: &MaskLibrary, policy: &MaskPolicy) -> Res {
    let out = if out_given || cfg.out != Path::new(".") {
        cfg.out.clone()
    } else {
        let name = root.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
        root.with_file_name(format!("{name}_masked"))
    };
    let job = DatasetJob {
        root,
        out: &out,
        workers: cfg.workers,
    };
    let manifest = mask_dataset(&job, lib, policy, &SidecarLandmarks)?;
    let mut counts = BTreeMap::new();
    for s in [
        Status::Masked,
        Status::OriginalKept,
        Status::SkippedNoFace,
        Status::SkippedPoorFit,
        Status::SkippedUnreadable,
    ] {
        counts.insert(s, manifest.count(s));
    }
    let files = manifest.output_files().len();
    eprintln!(
        "{files} output files, {} faces masked, manifest at {}",
        counts[&Status::Masked],
        out.join("manifest.csv").display()
    );
    emit(&json!({
        "manifest": out.join("manifest.csv"),
        "rows": manifest.rows.len(),
        "output_files": files,
        "counts": counts,
    }))
}

fn cmd_pairs(cfg: &Resolved, template: &str, unknown: Option<&str>, n_pos: usize, n_neg: usize) -> Res {
    let t = load_set(template)?;
    let (u, sides) = match unknown {
        Some(spec) => (load_set(spec)?, PairSides::Across),
        None => (t.clone(), PairSides::Within),
    };
    let pairs = generate_pairs(&t, &u, n_pos, n_neg, cfg.seed, sides)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("pairs.csv");
    write_pairs(&path, &pairs)?;
    eprintln!("{} pairs written to {}", pairs.len(), path.display());
    emit(&json!({ "pairs": path, "positive": n_pos, "negative": n_neg, "template_tag": t.tag, "unknown_tag": u.tag }))
}

fn cmd_train(cfg: &Resolved, a: &TrainArgs) -> Res {
    if a.occluded > a.dim {
        return Err(CliError::Invalid(format!("--occluded {} exceeds --dim {}", a.occluded, a.dim)));
    }
    let model = FeatureModel::new(a.dim, a.occluded, a.noise, a.mask_strength, cfg.seed);
    let (clean, masked) = model.clean_and_masked(a.identities, a.per_identity, 0, cfg.seed);
    let mut train = clean;
    if a.mixed {
        train.extend(masked);
    }
    let tc = TrainConfig {
        epochs: a.epochs,
        identities_per_batch: a.batch_identities,
        samples_per_identity: a.batch_samples,
        mode: a.mining,
        params: TripletLossParams::new(a.margin)?,
        schedule: StepSchedule::default(),
        seed: cfg.seed,
    };
    let init = ToyEncoder::random(a.dim, a.embed_dim, cfg.seed);
    let report = train_toy(init, &train, &tc)?;

    let (eval_clean, eval_masked) = model.clean_and_masked(
        a.eval_identities,
        a.eval_per_identity,
        a.identities as u32,
        cfg.seed ^ 0x5eed,
    );
    ensure_dir(&cfg.out)?;
    let enc_path = cfg.out.join("encoder.json");
    write_json(&enc_path, &report.encoder)?;
    write_json(&cfg.out.join("trace.json"), &report.trace)?;
    let mut written = Vec::new();
    for (tag, samples) in [("nomask", &eval_clean), ("masked", &eval_masked)] {
        let emb = report.encoder.embed_all(samples)?;
        let path = cfg.out.join(format!("eval_{tag}.bin"));
        let f = fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        write_embeddings(BufWriter::new(f), &emb)?;
        written.push(path);
    }
    let last = report.trace.last();
    eprintln!(
        "trained {} epochs on {} samples; final mean loss {:.4}",
        a.epochs,
        train.len(),
        last.map_or(0.0, |s| s.mean_loss)
    );
    emit(&json!({
        "encoder": enc_path,
        "trace": cfg.out.join("trace.json"),
        "embeddings": written,
        "final_loss": last.map(|s| s.mean_loss),
        "training_samples": train.len(),
    }))
}

fn bind_sets(pairs: &[maskface::VerificationPair], specs: &[String]) -> Res<Vec<EmbeddingSet>> {
    let mut tagged: BTreeMap<String, Vec<Embedding>> = BTreeMap::new();
    let mut fallback = None;
    for spec in specs {
        match split_spec(spec) {
            (Some(tag), path) => {
                tagged.insert(tag, load_embeddings(&path)?);
            }
            (None, path) => fallback = Some(load_embeddings(&path)?),
        }
    }
    for p in pairs {
        for tag in [&p.tag_a, &p.tag_b] {
            if !tagged.contains_key(tag) {
                let e = fallback
                    .clone()
                    .ok_or_else(|| CliError::Invalid(format!("no embeddings given for tag {tag:?}")))?;
                tagged.insert(tag.clone(), e);
            }
        }
    }
    Ok(tagged.into_iter().map(|(t, e)| EmbeddingSet::new(t, e)).collect())
}

fn cmd_eval(
    cfg: &Resolved,
    pairs_path: &Path,
    specs: &[String],
    far: Option<f64>,
    folds: usize,
    far_definition: FarDefinition,
    calibration: Option<&Path>,
) -> Res {
    let pairs = read_pairs(pairs_path)?;
    let sets = bind_sets(&pairs, specs)?;
    let scored = score_pairs(&pairs, &sets)?;
    let far_target = far.unwrap_or(cfg.far_target);
    let cal = match calibration {
        Some(p) => read_json::<ThresholdCalibration>(p)?,
        None => calibrate(
            &scored,
            &CalibrationConfig {
                n_folds: folds,
                far_target,
                far_definition,
                grid: cfg.grid,
            },
        )?,
    };
    let report = evaluate(&scored, &cal)?;
    let feasibility = threshold_at_far(&scored, cal.far_target, &cfg.grid, cal.far_definition)?;
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("calibration.json"), &cal)?;
    write_json(&cfg.out.join("metrics.json"), &report)?;
    if !feasibility.resolvable {
        eprintln!(
            "note: FAR target {} is below one false acceptance in {} negatives; only zero false acceptances satisfy it",
            cal.far_target, report.negatives
        );
    }
    eprintln!(
        "max accuracy {:.4} at {:.3}; TPR {:.4} / accuracy {:.4} at FAR {} (threshold {:.3})",
        report.max_accuracy,
        report.threshold_max_acc,
        report.tpr_at_far,
        report.acc_at_far,
        cal.far_target,
        report.threshold_at_far
    );
    emit(&json!({
        "calibration": cal,
        "report": report,
        "far_resolvable": feasibility.resolvable,
        "far_met_on_grid": feasibility.met,
    }))
}

fn cmd_heatmap(
    cfg: &Resolved,
    specs: &[String],
    tags: Option<Vec<String>>,
    calibration: Option<&Path>,
    far: Option<f64>,
    n_pos: usize,
    n_neg: usize,
) -> Res {
    let mut sets = specs.iter().map(|s| load_set(s)).collect::<Res<Vec<_>>>()?;
    if let Some(order) = tags {
        sets = order
            .iter()
            .map(|t| {
                sets.iter()
                    .find(|s| &s.tag == t)
                    .cloned()
                    .ok_or_else(|| CliError::Invalid(format!("no embeddings given for tag {t:?}")))
            })
            .collect::<Res<_>>()?;
    }
    let thresholds = match calibration {
        Some(p) => CellThresholds::Calibrated(read_json(p)?),
        None => CellThresholds::PerCell {
            far_target: far.unwrap_or(cfg.far_target),
            grid: cfg.grid,
            far_definition: FarDefinition::default(),
        },
    };
    let grid = heatmap(&sets, &thresholds, &HeatmapConfig { n_pos, n_neg, seed: cfg.seed })?;
    ensure_dir(&cfg.out)?;
    let csv_path = cfg.out.join("heatmap.csv");
    fs::write(&csv_path, grid.to_csv()?).map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
    let json_path = cfg.out.join("heatmap.json");
    write_json(&json_path, &grid.plot_data())?;
    let insufficient = grid.cells.iter().filter(|c| c.insufficient()).count();
    eprintln!("{} cells ({insufficient} insufficient) written to {}", grid.cells.len(), csv_path.display());
    emit(&json!({ "csv": csv_path, "plot": json_path, "cells": grid.cells }))
}

fn cmd_cluster(cfg: &Resolved, path: &Path, threshold: f64) -> Res {
    let emb = load_embeddings(path)?;
    let clustering = cluster_identities(&emb, threshold)?;
    let quality = cluster_quality(&emb, &clustering);
    ensure_dir(&cfg.out)?;
    let out = cfg.out.join("clusters.json");
    write_json(&out, &json!({ "clusters": clustering.clusters, "labels": clustering.labels() }))?;
    eprintln!(
        "{} clusters over {} identities, purity {:.4}",
        quality.clusters, quality.identities, quality.purity
    );
    emit(&json!({ "clusters": out, "quality": quality }))
}
