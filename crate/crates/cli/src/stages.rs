//! Pipeline stage implementations. Every stage reads its inputs from the
//! output directory, validates provenance, writes its own artifacts plus a
//! manifest, and is idempotent for a fixed config and seed.

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use har_core::augment::{ja_augment, ka_augment_dataset, AugmentMode, JaConfig, KaConfig};
use har_core::eval::{confusion, format_report, metrics, split_half_half, split_leave_one_out, Split};
use har_core::features::{write_feature_image, write_sidecar, ImageSidecar};
use har_core::fusion::{
    decide, fuse, read_prob_file, write_prob_file, FusionInput, FusionMethod, ProbDist,
};
use har_core::imu::{
    build_dataset, dataset_summary, ingest_recording, read_annotations, write_annotations,
    write_recording, ColumnMap, Dataset, Delimiter,
};
use har_core::nn::{
    load_model, read_model_sidecar, save_model, train, write_model_sidecar, ModelSidecar, Network,
    TrainConfig,
};
use har_core::protocol::{
    aggregate_subset, build_network, expansion_plan, format_subset_grid, modality_subsets,
    transform_window, ModalityKind, ProtocolKind, SubsetReport,
};
use har_core::seed;
use har_core::synth::generate;

use crate::artifacts::{
    image_path, read_feature_dir, read_windows, require_stage, write_manifest, write_windows,
    FeatureRow, Manifest, WindowProvenance, WindowSet,
};
use crate::config::PipelineConfig;
use crate::preview::{write_pgm, write_ppm};

/// Shared command context.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub hash: String,
}

impl Ctx {
    fn manifest(&self, stage: &str, inputs: &[&str]) -> Manifest {
        Manifest {
            stage: stage.to_string(),
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn raw_dir(&self) -> PathBuf {
        self.out.join("raw")
    }

    fn windows_dir(&self) -> PathBuf {
        self.out.join("windows")
    }

    fn features_dir(&self, modality: &str) -> PathBuf {
        self.out.join("features").join(modality)
    }

    fn ja_dir(&self, modality: &str) -> PathBuf {
        self.out.join("features").join(format!("{modality}-ja"))
    }

    fn models_dir(&self, modality: &str) -> PathBuf {
        self.out.join("models").join(modality)
    }

    fn preds_dir(&self, modality: &str) -> PathBuf {
        self.out.join("preds").join(modality)
    }

    fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    /// The windows artifact the transform stage consumes: the KA-augmented
    /// set when the config enables kinematics augmentation.
    fn transform_source(&self) -> (PathBuf, &'static str) {
        match self.cfg.augment.mode {
            AugmentMode::Ka | AugmentMode::JaKa => {
                (self.windows_dir().join("windows_ka.harb"), "augment-ka")
            }
            _ => (self.windows_dir().join("windows.harb"), "sample"),
        }
    }

    fn splits(&self, ds: &Dataset) -> Result<Vec<Split>> {
        Ok(match self.cfg.protocol.kind {
            ProtocolKind::Hh => vec![split_half_half(ds, self.cfg.seed)?],
            ProtocolKind::Loo => split_leave_one_out(ds)?,
        })
    }

    fn protocol_label(&self) -> &'static str {
        match self.cfg.protocol.kind {
            ProtocolKind::Hh => "hh",
            ProtocolKind::Loo => "loo",
        }
    }
}

fn parse_modality(s: &str) -> Result<ModalityKind> {
    match s {
        "freq" => Ok(ModalityKind::Freq),
        "och" => Ok(ModalityKind::Och),
        _ => bail!("unknown modality '{s}' (expected freq|och)"),
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let mut synth_cfg = ctx.cfg.synth.clone();
    synth_cfg.seed = seed::derive(ctx.cfg.seed, "synth");
    let (recordings, annotations) = generate(&synth_cfg)?;

    let rec_dir = ctx.raw_dir().join("recordings");
    std::fs::create_dir_all(&rec_dir)?;
    for (rec, ann) in recordings.iter().zip(&annotations) {
        let path = rec_dir.join(format!("{}__{}.csv", rec.subject, ann.label));
        write_recording(&path, rec)?;
    }
    write_annotations(&ctx.raw_dir().join("annotations.csv"), &annotations)?;
    write_manifest(&ctx.raw_dir(), &ctx.manifest("raw", &[]))?;
    println!(
        "synth: {} recordings for {} subjects ({} samples each)",
        recordings.len(),
        synth_cfg.subjects,
        recordings[0].records.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub struct IngestArgs {
    pub inputs: Vec<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub preset: Option<String>,
    pub subject: Option<String>,
}

pub fn cmd_ingest(ctx: &Ctx, args: &IngestArgs) -> Result<()> {
    if args.inputs.is_empty() {
        bail!("ingest needs at least one --input file");
    }
    let map = match args.preset.as_deref() {
        None => ctx.cfg.ingest.format.clone(),
        Some("pamap2-hand") => ColumnMap::pamap2_hand(),
        Some(other) => bail!("unknown ingest preset '{other}' (available: pamap2-hand)"),
    };
    let rec_dir = ctx.raw_dir().join("recordings");
    std::fs::create_dir_all(&rec_dir)?;
    for input in &args.inputs {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("input '{}' has no usable file name", input.display()))?;
        let subject = args
            .subject
            .clone()
            .unwrap_or_else(|| stem.split("__").next().unwrap_or(stem).to_string());
        let outcome = ingest_recording(input, &map, &subject, ctx.cfg.ingest.rate_hz)?;
        if outcome.dropped_non_finite > 0 {
            eprintln!(
                "warning: '{}': dropped {} rows with non-finite channels",
                input.display(),
                outcome.dropped_non_finite
            );
        }
        if let Some(dt) = outcome.recording.rate_mismatch() {
            eprintln!(
                "warning: '{}': mean sample spacing {dt:.2} ms disagrees with nominal {} Hz (not resampled)",
                input.display(),
                ctx.cfg.ingest.rate_hz
            );
        }
        let dest = rec_dir.join(format!("{stem}.csv"));
        write_recording(&dest, &outcome.recording)?;
        println!(
            "ingest: '{}' -> '{}' ({} records, subject '{}')",
            input.display(),
            dest.display(),
            outcome.recording.records.len(),
            subject
        );
    }
    if let Some(ann) = &args.annotations {
        let anns = read_annotations(ann, Delimiter::Comma)?;
        write_annotations(&ctx.raw_dir().join("annotations.csv"), &anns)?;
    }
    write_manifest(&ctx.raw_dir(), &ctx.manifest("raw", &[]))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

pub fn cmd_sample(ctx: &Ctx) -> Result<()> {
    require_stage(&ctx.raw_dir(), "raw", "sample", &ctx.hash, ctx.cfg.seed)?;
    let rec_dir = ctx.raw_dir().join("recordings");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&rec_dir)
        .with_context(|| format!("reading '{}'", rec_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(crate::artifacts::StageOrderError {
            needed: "synth or ingest".into(),
            current: "sample".into(),
            detail: format!("no recordings under '{}'", rec_dir.display()),
        });
    }

    let map = ColumnMap::default();
    let mut recordings = Vec::with_capacity(files.len());
    for path in &files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let subject = stem.split("__").next().unwrap_or(stem).to_string();
        let outcome = ingest_recording(path, &map, &subject, ctx.cfg.ingest.rate_hz)?;
        recordings.push(outcome.recording);
    }
    let annotations = read_annotations(&ctx.raw_dir().join("annotations.csv"), Delimiter::Comma)?;
    let (dataset, short) =
        build_dataset(&recordings, &annotations, ctx.cfg.sampling.window, ctx.cfg.sampling.overlap)?;
    for s in &short {
        eprintln!(
            "warning: annotation #{} ('{}') yields only {} records (< window {})",
            s.ann_index, s.label, s.len, ctx.cfg.sampling.window
        );
    }

    let dir = ctx.windows_dir();
    std::fs::create_dir_all(&dir)?;
    write_windows(&dir.join("windows.harb"), &WindowSet::originals(dataset.clone()))?;
    write_manifest(&dir, &ctx.manifest("sample", &["raw"]))?;
    print!("{}", dataset_summary(&dataset));
    Ok(())
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

pub fn cmd_augment(ctx: &Ctx, mode: &str) -> Result<()> {
    match mode {
        "ka" => augment_ka(ctx),
        "ja" => augment_ja(ctx),
        other => bail!("augment --mode must be ka or ja, got '{other}'"),
    }
}

fn augment_ka(ctx: &Ctx) -> Result<()> {
    let dir = ctx.windows_dir();
    require_stage(&dir, "sample", "augment-ka", &ctx.hash, ctx.cfg.seed)?;
    let set = read_windows(&dir.join("windows.harb"))?;
    let ka_cfg = KaConfig {
        seed: seed::derive(ctx.cfg.seed, "ka"),
        ..ctx.cfg.augment.ka.clone()
    };
    let (originals, augmented) = ka_augment_dataset(&set.dataset.windows, &ka_cfg)?;

    let mut windows = originals;
    let mut provenance = vec![WindowProvenance::default(); windows.len()];
    for a in augmented {
        windows.push(a.window);
        provenance.push(WindowProvenance {
            origin: Some(a.origin),
            descriptor: Some(a.descriptor),
        });
    }
    let out_set = WindowSet {
        dataset: Dataset {
            windows,
            class_names: set.dataset.class_names.clone(),
            subjects: set.dataset.subjects.clone(),
        },
        provenance,
    };
    write_windows(&dir.join("windows_ka.harb"), &out_set)?;
    write_manifest(&dir, &ctx.manifest("augment-ka", &["sample"]))?;
    println!(
        "augment ka: {} originals -> {} windows ({}x)",
        set.dataset.windows.len(),
        out_set.dataset.windows.len(),
        out_set.dataset.windows.len() / set.dataset.windows.len().max(1)
    );
    Ok(())
}

fn augment_ja(ctx: &Ctx) -> Result<()> {
    let ja_cfg = JaConfig {
        seed: seed::derive(ctx.cfg.seed, "ja"),
        ..ctx.cfg.augment.ja.clone()
    };
    for (kind, _) in ctx.cfg.modalities() {
        let name = kind.name();
        let src_dir = ctx.features_dir(name);
        require_stage(&src_dir, &format!("transform-{name}"), "augment-ja", &ctx.hash, ctx.cfg.seed)?;
        let rows = read_feature_dir(&src_dir)?;
        let originals: Vec<&FeatureRow> =
            rows.iter().filter(|r| r.meta.origin.is_none()).collect();
        let mut next_id = rows.iter().map(|r| r.id + 1).max().unwrap_or(0);

        let dst_dir = ctx.ja_dir(name);
        std::fs::create_dir_all(&dst_dir)?;
        let mut written = 0usize;
        for row in &originals {
            for a in ja_augment(&row.image, &ja_cfg)? {
                let mut image = a.image;
                image.provenance = next_id;
                write_feature_image(&image_path(&dst_dir, next_id), &image)?;
                write_sidecar(
                    &image_path(&dst_dir, next_id).with_extension("json"),
                    &ImageSidecar {
                        window_id: next_id,
                        label: row.meta.label.clone(),
                        subject: row.meta.subject.clone(),
                        origin: Some(a.origin),
                        transform: Some(a.descriptor),
                        config_hash: Some(ctx.hash.clone()),
                    },
                )?;
                next_id += 1;
                written += 1;
            }
        }
        write_manifest(&dst_dir, &ctx.manifest(&format!("augment-ja-{name}"), &[&format!("transform-{name}")]))?;
        println!("augment ja: {name}: {} originals -> {written} jittered images", originals.len());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// transform
// ---------------------------------------------------------------------------

pub fn cmd_transform(ctx: &Ctx, modality: &str) -> Result<()> {
    let kind = parse_modality(modality)?;
    let (src, src_stage) = ctx.transform_source();
    require_stage(&ctx.windows_dir(), src_stage, "transform", &ctx.hash, ctx.cfg.seed)?;
    if !src.exists() {
        bail!(crate::artifacts::StageOrderError {
            needed: src_stage.into(),
            current: "transform".into(),
            detail: format!("'{}' not found", src.display()),
        });
    }
    let set = read_windows(&src)?;
    let plan = expansion_plan(&ctx.cfg.transforms, ctx.cfg.seed)?;

    let dir = ctx.features_dir(kind.name());
    std::fs::create_dir_all(&dir)?;
    for (w, prov) in set.dataset.windows.iter().zip(&set.provenance) {
        let image = transform_window(w, kind, &plan, &ctx.cfg.transforms)?;
        write_feature_image(&image_path(&dir, w.id), &image)?;
        write_sidecar(
            &image_path(&dir, w.id).with_extension("json"),
            &ImageSidecar {
                window_id: w.id,
                label: w.label.clone(),
                subject: w.subject.clone(),
                origin: prov.origin,
                transform: prov.descriptor.clone(),
                config_hash: Some(ctx.hash.clone()),
            },
        )?;
    }
    write_manifest(&dir, &ctx.manifest(&format!("transform-{}", kind.name()), &[src_stage]))?;
    let sample = transform_window(&set.dataset.windows[0], kind, &plan, &ctx.cfg.transforms)?;
    println!(
        "transform {}: {} images of {}x{}x{}",
        kind.name(),
        set.dataset.windows.len(),
        sample.height,
        sample.width,
        sample.depth()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Training-pool rows for one fold: a feature row joins the pool when its
/// root window (its origin, or itself) is in the fold's training windows.
fn training_pool(
    rows: &[FeatureRow],
    ja_rows: &[FeatureRow],
    train_ids: &HashSet<u64>,
    class_names: &[String],
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let class_of = |label: &str| -> Result<usize> {
        class_names
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| anyhow!("label '{label}' missing from the class catalog"))
    };
    for row in rows.iter().chain(ja_rows) {
        let root = row.meta.origin.unwrap_or(row.id);
        if train_ids.contains(&root) {
            inputs.push(row.image.pixels.clone());
            labels.push(class_of(&row.meta.label)?);
        }
    }
    Ok((inputs, labels))
}

/// Per-command overrides for the training hyperparameters.
#[derive(Debug, Default, Clone)]
pub struct TrainOverrides {
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub l2: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lr: self.lr.unwrap_or(base.lr),
            momentum: self.momentum.unwrap_or(base.momentum),
            l2_lambda: self.l2.unwrap_or(base.l2_lambda),
            batch_size: self.batch.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            ..base.clone()
        }
    }
}

pub fn cmd_train(ctx: &Ctx, modality: &str, overrides: &TrainOverrides) -> Result<()> {
    let kind = parse_modality(modality)?;
    let name = kind.name();
    let win_dir = ctx.windows_dir();
    require_stage(&win_dir, "sample", "train", &ctx.hash, ctx.cfg.seed)?;
    let feat_dir = ctx.features_dir(name);
    require_stage(&feat_dir, &format!("transform-{name}"), "train", &ctx.hash, ctx.cfg.seed)?;

    let originals = read_windows(&win_dir.join("windows.harb"))?;
    let rows = read_feature_dir(&feat_dir)?;
    let ja_rows = if matches!(ctx.cfg.augment.mode, AugmentMode::Ja | AugmentMode::JaKa) {
        let dir = ctx.ja_dir(name);
        require_stage(&dir, &format!("augment-ja-{name}"), "train", &ctx.hash, ctx.cfg.seed)?;
        read_feature_dir(&dir)?
    } else {
        Vec::new()
    };

    let ds = &originals.dataset;
    let splits = ctx.splits(ds)?;
    let section = match kind {
        ModalityKind::Freq => &ctx.cfg.modality.freq,
        ModalityKind::Och => &ctx.cfg.modality.och,
    };
    let plan = expansion_plan(&ctx.cfg.transforms, ctx.cfg.seed)?;
    let net = build_network(
        kind,
        &section.arch,
        &plan,
        &ctx.cfg.transforms,
        ctx.cfg.sampling.window,
        ds.num_classes(),
    )?;

    let dir = ctx.models_dir(name);
    std::fs::create_dir_all(&dir)?;
    let fold_names: Vec<String> = splits.iter().map(|s| s.name.clone()).collect();
    std::fs::write(dir.join("folds.json"), serde_json::to_string_pretty(&fold_names)?)?;

    for (fold_no, split) in splits.iter().enumerate() {
        let train_idx = subsample_train(&split.train, ctx.cfg.protocol.train_subsample, ctx.cfg.seed, fold_no);
        let train_ids: HashSet<u64> = train_idx.iter().map(|&i| ds.windows[i].id).collect();
        let (inputs, labels) = training_pool(&rows, &ja_rows, &train_ids, &ds.class_names)?;

        let stream = format!("{name}-{}", split.name);
        let train_cfg = TrainConfig {
            seed: seed::derive_indexed(ctx.cfg.seed, &stream, fold_no as u64),
            ..overrides.apply(&section.train)
        };
        let mut params = net.init_params(seed::derive_indexed(
            ctx.cfg.seed,
            &format!("init-{stream}"),
            fold_no as u64,
        ));
        let stats = train(&net, &mut params, &train_cfg, &inputs, &labels)?;
        let final_loss = stats.last().map(|s| s.loss).unwrap_or(f64::NAN);

        let model_path = dir.join(format!("fold_{fold_no:02}.harw"));
        save_model(&model_path, &params)?;
        write_model_sidecar(
            &model_path.with_extension("json"),
            &ModelSidecar {
                input_shape: net.input_shape().to_vec(),
                specs: net.specs().to_vec(),
                train: train_cfg,
                config_hash: Some(ctx.hash.clone()),
            },
        )?;
        println!(
            "train {name} fold {fold_no} ({}): {} samples, final epoch loss {final_loss:.3}",
            split.name,
            inputs.len()
        );
    }
    write_manifest(&dir, &ctx.manifest(&format!("models-{name}"), &["sample", &format!("transform-{name}")]))?;
    Ok(())
}

fn subsample_train(train: &[usize], fraction: f64, seed_val: u64, fold_no: usize) -> Vec<usize> {
    if fraction >= 1.0 {
        return train.to_vec();
    }
    let keep = ((train.len() as f64 * fraction).round() as usize).max(1);
    let mut order = train.to_vec();
    let mut rng = seed::rng(seed::derive_indexed(seed_val, "subsample", fold_no as u64));
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    order.truncate(keep);
    order.sort_unstable();
    order
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

pub fn cmd_predict(ctx: &Ctx, modality: &str) -> Result<()> {
    let kind = parse_modality(modality)?;
    let name = kind.name();
    let win_dir = ctx.windows_dir();
    require_stage(&win_dir, "sample", "predict", &ctx.hash, ctx.cfg.seed)?;
    let models_dir = ctx.models_dir(name);
    require_stage(&models_dir, &format!("models-{name}"), "predict", &ctx.hash, ctx.cfg.seed)?;
    let rows = read_feature_dir(&ctx.features_dir(name))?;
    let by_id: BTreeMap<u64, &FeatureRow> = rows.iter().map(|r| (r.id, r)).collect();

    let originals = read_windows(&win_dir.join("windows.harb"))?;
    let ds = &originals.dataset;
    let splits = ctx.splits(ds)?;

    let out_dir = ctx.preds_dir(name);
    std::fs::create_dir_all(&out_dir)?;
    for (fold_no, split) in splits.iter().enumerate() {
        let model_path = models_dir.join(format!("fold_{fold_no:02}.harw"));
        let sidecar = read_model_sidecar(&model_path.with_extension("json"))?;
        let net = Network::new(sidecar.input_shape.clone(), sidecar.specs.clone())?;
        let params = load_model(&model_path, net.arch_hash())?;

        let mut predictions = Vec::with_capacity(split.test.len());
        for &i in &split.test {
            let id = ds.windows[i].id;
            let row = by_id
                .get(&id)
                .ok_or_else(|| anyhow!("no feature image for window {id} in modality {name}"))?;
            let p = net.forward(&params, &row.image.pixels)?;
            predictions.push((id, ProbDist::new(p)?));
        }
        write_prob_file(&out_dir.join(format!("fold_{fold_no:02}.probs")), &predictions)?;
        println!(
            "predict {name} fold {fold_no} ({}): {} samples",
            split.name,
            predictions.len()
        );
    }
    write_manifest(&out_dir, &ctx.manifest(&format!("preds-{name}"), &[&format!("models-{name}")]))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// fuse
// ---------------------------------------------------------------------------

pub struct FuseArgs {
    pub modalities: Vec<String>,
    pub external: Vec<(String, PathBuf)>,
    pub method: Option<FusionMethod>,
    pub k: Option<usize>,
}

/// Per-fold probability rows for one modality, keyed by window id.
type FoldProbs = Vec<BTreeMap<u64, ProbDist>>;

fn load_modality_probs(ctx: &Ctx, name: &str, n_folds: usize) -> Result<FoldProbs> {
    let dir = ctx.preds_dir(name);
    require_stage(&dir, &format!("preds-{name}"), "fuse/eval", &ctx.hash, ctx.cfg.seed)?;
    let mut folds = Vec::with_capacity(n_folds);
    for fold_no in 0..n_folds {
        let path = dir.join(format!("fold_{fold_no:02}.probs"));
        let rows = read_prob_file(&path)?;
        folds.push(rows.into_iter().collect());
    }
    Ok(folds)
}

/// External probability files cover the whole id space in one file; every
/// fold draws from the same table.
fn load_external_probs(path: &Path) -> Result<BTreeMap<u64, ProbDist>> {
    Ok(read_prob_file(path)?.into_iter().collect())
}

pub fn cmd_fuse(ctx: &Ctx, args: &FuseArgs) -> Result<()> {
    let win_dir = ctx.windows_dir();
    require_stage(&win_dir, "sample", "fuse", &ctx.hash, ctx.cfg.seed)?;
    let originals = read_windows(&win_dir.join("windows.harb"))?;
    let ds = &originals.dataset;
    let splits = ctx.splits(ds)?;

    let names: Vec<String> = if args.modalities.is_empty() {
        ctx.cfg
            .modalities()
            .iter()
            .map(|(k, _)| k.name().to_string())
            .collect()
    } else {
        args.modalities.clone()
    };
    let mut sources: Vec<(String, FoldProbs)> = Vec::new();
    for name in &names {
        sources.push((name.clone(), load_modality_probs(ctx, name, splits.len())?));
    }
    for (ext_name, path) in &args.external {
        let table = load_external_probs(path)?;
        sources.push((ext_name.clone(), vec![table; splits.len()]));
    }
    let method = args.method.unwrap_or(ctx.cfg.fusion.method);
    let k = args.k.or(ctx.cfg.fusion_k());

    let subset_label = sources
        .iter()
        .map(|(n, _)| n.clone())
        .collect::<Vec<_>>()
        .join("+");
    let out_dir = ctx.out.join("fused").join(&subset_label);
    std::fs::create_dir_all(&out_dir)?;
    let source_names: Vec<String> = sources.iter().map(|(n, _)| n.clone()).collect();

    for (fold_no, split) in splits.iter().enumerate() {
        let path = out_dir.join(format!("fold_{fold_no:02}.dec"));
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for &i in &split.test {
            let id = ds.windows[i].id;
            let dists: Vec<ProbDist> = sources
                .iter()
                .map(|(n, folds)| {
                    folds[fold_no]
                        .get(&id)
                        .cloned()
                        .ok_or_else(|| anyhow!("modality '{n}' has no probabilities for window {id}"))
                })
                .collect::<Result<_>>()?;
            let fi = FusionInput::new(source_names.clone(), dists)?;
            let scores = fuse(&fi, method, k)?;
            let d = decide(&scores);
            write!(out, "{id} {} {}", d.index, u8::from(d.tied))?;
            for s in &scores {
                write!(out, " {s}")?;
            }
            writeln!(out)?;
        }
        println!("fuse {subset_label} fold {fold_no}: {} decisions", split.test.len());
    }
    write_manifest(&out_dir, &ctx.manifest(&format!("fused-{subset_label}"), &["preds"]))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub struct EvalArgs {
    pub grid: bool,
    pub external: Vec<(String, PathBuf)>,
    pub method: Option<FusionMethod>,
    pub k: Option<usize>,
}

#[derive(serde::Serialize)]
struct EvalReport {
    protocol: String,
    class_names: Vec<String>,
    fold_names: Vec<String>,
    subsets: Vec<SubsetReport>,
}

pub fn cmd_eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let win_dir = ctx.windows_dir();
    require_stage(&win_dir, "sample", "eval", &ctx.hash, ctx.cfg.seed)?;
    let originals = read_windows(&win_dir.join("windows.harb"))?;
    let ds = &originals.dataset;
    let splits = ctx.splits(ds)?;

    let mut sources: Vec<(String, FoldProbs)> = Vec::new();
    for (kind, _) in ctx.cfg.modalities() {
        let name = kind.name();
        sources.push((name.to_string(), load_modality_probs(ctx, name, splits.len())?));
    }
    for (ext_name, path) in &args.external {
        let table = load_external_probs(path)?;
        sources.push((ext_name.clone(), vec![table; splits.len()]));
    }
    if sources.is_empty() {
        bail!("eval needs at least one prediction source");
    }
    let method = args.method.unwrap_or(ctx.cfg.fusion.method);
    let k = args.k.or(ctx.cfg.fusion_k());

    let mut subsets = Vec::new();
    for subset in modality_subsets(sources.len(), args.grid) {
        let names: Vec<String> = subset.iter().map(|&i| sources[i].0.clone()).collect();
        let mut fold_reports = Vec::with_capacity(splits.len());
        for (fold_no, split) in splits.iter().enumerate() {
            let mut preds = Vec::with_capacity(split.test.len());
            let mut truths = Vec::with_capacity(split.test.len());
            for &i in &split.test {
                let id = ds.windows[i].id;
                let dists: Vec<ProbDist> = subset
                    .iter()
                    .map(|&si| {
                        sources[si].1[fold_no].get(&id).cloned().ok_or_else(|| {
                            anyhow!("source '{}' has no probabilities for window {id}", sources[si].0)
                        })
                    })
                    .collect::<Result<_>>()?;
                let fi = FusionInput::new(names.clone(), dists)?;
                let scores = fuse(&fi, method, k)?;
                preds.push(decide(&scores).index);
                truths.push(
                    ds.class_index(&ds.windows[i].label)
                        .ok_or_else(|| anyhow!("label missing from catalog"))?,
                );
            }
            let cm = confusion(&preds, &truths, ds.num_classes())?;
            fold_reports.push(metrics(&cm)?);
        }
        let report = aggregate_subset(fold_reports);
        subsets.push(SubsetReport {
            modalities: names,
            report,
        });
    }

    let eval_dir = ctx.eval_dir();
    std::fs::create_dir_all(&eval_dir)?;
    let report = EvalReport {
        protocol: ctx.protocol_label().to_string(),
        class_names: ds.class_names.clone(),
        fold_names: splits.iter().map(|s| s.name.clone()).collect(),
        subsets,
    };
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(eval_dir.join("report.json"), &json)?;

    let mut text = format_subset_grid(ctx.protocol_label(), &report.subsets);
    text.push('\n');
    for s in &report.subsets {
        text.push_str(&format_report(&s.modalities.join("+"), &s.report, &report.class_names));
        text.push('\n');
    }
    std::fs::write(eval_dir.join("report.txt"), &text)?;
    write_manifest(&eval_dir, &ctx.manifest("eval", &["preds"]))?;
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(ctx: &Ctx, force: bool) -> Result<()> {
    let eval_dir = ctx.eval_dir();
    require_stage(&eval_dir, "eval", "report", &ctx.hash, ctx.cfg.seed)?;

    // Refuse mixed-config inputs unless forced.
    let mut hashes: Vec<(String, String)> = Vec::new();
    for dir in [ctx.raw_dir(), ctx.windows_dir(), eval_dir.clone()] {
        if let Ok(m) = crate::artifacts::read_manifest(&dir) {
            hashes.push((m.stage.clone(), m.config_hash.clone()));
        }
    }
    for (kind, _) in ctx.cfg.modalities() {
        for dir in [ctx.features_dir(kind.name()), ctx.models_dir(kind.name()), ctx.preds_dir(kind.name())] {
            if let Ok(m) = crate::artifacts::read_manifest(&dir) {
                hashes.push((m.stage.clone(), m.config_hash.clone()));
            }
        }
    }
    let distinct: HashSet<&String> = hashes.iter().map(|(_, h)| h).collect();
    if distinct.len() > 1 {
        let detail = hashes
            .iter()
            .map(|(s, h)| format!("{s}={h}"))
            .collect::<Vec<_>>()
            .join(", ");
        if force {
            eprintln!("warning: mixing artifacts from different configs ({detail})");
        } else {
            bail!(crate::artifacts::StageOrderError {
                needed: "a single-config pipeline".into(),
                current: "report".into(),
                detail: format!("mixed config hashes: {detail} (use --force to override)"),
            });
        }
    }

    let report_dir = ctx.report_dir();
    std::fs::create_dir_all(&report_dir)?;
    std::fs::copy(eval_dir.join("report.json"), report_dir.join("report.json"))?;
    std::fs::copy(eval_dir.join("report.txt"), report_dir.join("report.txt"))?;

    // Feature-image previews: a handful per modality, portable formats.
    let preview_dir = report_dir.join("previews");
    std::fs::create_dir_all(&preview_dir)?;
    let mut written = 0usize;
    for (kind, _) in ctx.cfg.modalities() {
        let name = kind.name();
        let dir = ctx.features_dir(name);
        if let Ok(rows) = read_feature_dir(&dir) {
            for row in rows.iter().filter(|r| r.meta.origin.is_none()).take(4) {
                let base = preview_dir.join(format!("{name}_{:08}_{}", row.id, row.meta.label));
                match row.image.depth() {
                    1 => write_pgm(&base.with_extension("pgm"), &row.image)?,
                    _ => write_ppm(&base.with_extension("ppm"), &row.image)?,
                }
                written += 1;
            }
        }
    }
    write_manifest(&report_dir, &ctx.manifest("report", &["eval"]))?;
    println!(
        "report: wrote {}/report.txt, report.json and {written} previews",
        report_dir.display()
    );
    Ok(())
}
