//! Protocol-driven evaluation: trains the configured modality models per
//! fold, fuses their probability outputs, and reports metrics — one row
//! per requested modality subset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{ja_augment, ka_augment, AugmentMode, JaConfig, KaConfig};
use crate::error::{Error, Result};
use crate::eval::{
    confusion, metrics, split_half_half, split_leave_one_out, ClassMetrics, MetricReport, Split,
};
use crate::features::{
    build_expansion_plan, expand_rows, freq_transform, och_transform, stack_channels,
    FeatureImage, RowExpansionPlan,
};
use crate::fusion::{decide, fuse, FusionInput, FusionMethod, ProbDist};
use crate::imu::{Dataset, ImuWindow, NUM_CHANNELS};
use crate::nn::{build_m1_architecture, train, ArchParams, ModelParams, Network, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Freq,
    Och,
}

impl ModalityKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModalityKind::Freq => "freq",
            ModalityKind::Och => "och",
        }
    }
}

/// One trainable prediction path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityConfig {
    pub kind: ModalityKind,
    pub arch: ArchParams,
    pub train: TrainConfig,
}

/// Feature-transform settings shared by every modality run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    /// Explicit row-expansion sequence; empty means the built Eulerian plan.
    pub expansion_rows: Vec<usize>,
    pub och_size: usize,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            expansion_rows: Vec::new(),
            och_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Hh,
    Loo,
}

impl ProtocolKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hh" => Ok(Self::Hh),
            "loo" => Ok(Self::Loo),
            _ => Err(Error::InvalidParameter(format!(
                "unknown protocol '{s}' (expected hh|loo)"
            ))),
        }
    }
}

/// Full protocol-run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub protocol: ProtocolKind,
    pub fusion_method: FusionMethod,
    /// Top-K for the weighted fusion informativity; None means all classes.
    pub fusion_k: Option<usize>,
    pub augment: AugmentMode,
    pub ka: KaConfig,
    pub ja: JaConfig,
    /// Fraction of each fold's training windows actually used.
    pub train_subsample: f64,
    /// Emit one row per non-empty modality subset instead of only the
    /// full combination.
    pub grid: bool,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            protocol: ProtocolKind::Hh,
            fusion_method: FusionMethod::Avg,
            fusion_k: None,
            augment: AugmentMode::None,
            ka: KaConfig::default(),
            ja: JaConfig::default(),
            train_subsample: 1.0,
            grid: false,
            seed: 0,
        }
    }
}

/// One grid row: a modality subset and its aggregate metrics (per-fold
/// breakdown inside `report.folds` for multi-fold protocols).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetReport {
    pub modalities: Vec<String>,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldDetail {
    pub name: String,
    pub train_originals: usize,
    /// Training-pool size after augmentation.
    pub train_total: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolReport {
    pub protocol: ProtocolKind,
    pub class_names: Vec<String>,
    pub subsets: Vec<SubsetReport>,
    pub folds: Vec<FoldDetail>,
}

/// Per-sample probability rows for one modality over one fold's test set.
pub type PredictionRows = Vec<(u64, ProbDist)>;

/// Transforms one window for the given modality. The freq path stacks,
/// row-expands, and takes the half-spectrum; the och path rasterizes the
/// orientation trajectory.
pub fn transform_window(
    w: &ImuWindow,
    kind: ModalityKind,
    plan: &RowExpansionPlan,
    tf: &TransformConfig,
) -> Result<FeatureImage> {
    match kind {
        ModalityKind::Freq => {
            let expanded = expand_rows(&stack_channels(w), plan)?;
            freq_transform(&expanded, w.id)
        }
        ModalityKind::Och => och_transform(w, tf.och_size),
    }
}

/// The row-expansion plan a run uses: the explicit sequence when provided,
/// otherwise the seeded Eulerian construction.
pub fn expansion_plan(tf: &TransformConfig, seed_val: u64) -> Result<RowExpansionPlan> {
    if tf.expansion_rows.is_empty() {
        build_expansion_plan(NUM_CHANNELS, seed_val)
    } else {
        RowExpansionPlan::from_sequence(tf.expansion_rows.clone(), true)
    }
}

/// Network input shape for a modality under this transform config.
pub fn modality_input_shape(
    kind: ModalityKind,
    plan: &RowExpansionPlan,
    tf: &TransformConfig,
    t_len: usize,
) -> Vec<usize> {
    match kind {
        ModalityKind::Freq => vec![plan.sequence.len(), t_len / 2, 1],
        ModalityKind::Och => vec![tf.och_size, tf.och_size, 3],
    }
}

/// Builds the network for one modality.
pub fn build_network(
    kind: ModalityKind,
    arch: &ArchParams,
    plan: &RowExpansionPlan,
    tf: &TransformConfig,
    t_len: usize,
    classes: usize,
) -> Result<Network> {
    let shape = modality_input_shape(kind, plan, tf, t_len);
    let specs = build_m1_architecture(shape[0], shape[1], classes, arch)?;
    Network::new(shape, specs)
}

/// Evaluates a trained model on a feature list, returning validated
/// probability rows keyed by window id.
pub fn predict(
    net: &Network,
    params: &ModelParams,
    features: &[(u64, Vec<f64>)],
) -> Result<PredictionRows> {
    let probs: Vec<Result<(u64, ProbDist)>> = features
        .par_iter()
        .map(|(id, pixels)| {
            let p = net.forward(params, pixels)?;
            Ok((*id, ProbDist::new(p)?))
        })
        .collect();
    probs.into_iter().collect()
}

struct FoldModalityRun {
    predictions: PredictionRows,
    train_total: usize,
}

/// Trains one modality on one fold's training pool (originals plus the
/// configured augmentation pools) and predicts the fold's test originals.
#[allow(clippy::too_many_arguments)]
fn run_fold_modality(
    ds: &Dataset,
    split: &Split,
    train_idx: &[usize],
    modality: &ModalityConfig,
    plan: &RowExpansionPlan,
    tf: &TransformConfig,
    cfg: &ProtocolConfig,
    fold_no: usize,
    features_all: &[FeatureImage],
) -> Result<FoldModalityRun> {
    let label_of = |w: &ImuWindow| -> usize {
        ds.class_index(&w.label).expect("validated dataset")
    };

    // Originals.
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for &i in train_idx {
        inputs.push(features_all[i].pixels.clone());
        labels.push(label_of(&ds.windows[i]));
    }

    // Kinematics pool: augment raw windows, then transform.
    if matches!(cfg.augment, AugmentMode::Ka | AugmentMode::JaKa) {
        let ka_cfg = KaConfig {
            seed: seed::derive(cfg.seed, "ka"),
            ..cfg.ka.clone()
        };
        let augmented: Vec<Result<Vec<(Vec<f64>, usize)>>> = train_idx
            .par_iter()
            .map(|&i| {
                let w = &ds.windows[i];
                let outs = ka_augment(w, &ka_cfg)?;
                let mut rows = Vec::with_capacity(outs.len());
                for a in outs {
                    let img = transform_window(&a.window, modality.kind, plan, tf)?;
                    rows.push((img.pixels, label_of(&a.window)));
                }
                Ok(rows)
            })
            .collect();
        for group in augmented {
            for (pixels, label) in group? {
                inputs.push(pixels);
                labels.push(label);
            }
        }
    }

    // Jitter pool: augment the originals' finished images.
    if matches!(cfg.augment, AugmentMode::Ja | AugmentMode::JaKa) {
        let ja_cfg = JaConfig {
            seed: seed::derive(cfg.seed, "ja"),
            ..cfg.ja.clone()
        };
        let augmented: Vec<Result<Vec<(Vec<f64>, usize)>>> = train_idx
            .par_iter()
            .map(|&i| {
                let outs = ja_augment(&features_all[i], &ja_cfg)?;
                let label = label_of(&ds.windows[i]);
                Ok(outs.into_iter().map(|a| (a.image.pixels, label)).collect())
            })
            .collect();
        for group in augmented {
            for (pixels, label) in group? {
                inputs.push(pixels);
                labels.push(label);
            }
        }
    }

    let net = build_network(
        modality.kind,
        &modality.arch,
        plan,
        tf,
        ds.windows[0].t_len,
        ds.num_classes(),
    )?;
    let stream = format!("{}-{}", modality.kind.name(), split.name);
    let train_cfg = TrainConfig {
        seed: seed::derive_indexed(cfg.seed, &stream, fold_no as u64),
        ..modality.train.clone()
    };
    let mut params = net.init_params(seed::derive_indexed(
        cfg.seed,
        &format!("init-{stream}"),
        fold_no as u64,
    ));
    train(&net, &mut params, &train_cfg, &inputs, &labels)?;

    let test_features: Vec<(u64, Vec<f64>)> = split
        .test
        .iter()
        .map(|&i| (ds.windows[i].id, features_all[i].pixels.clone()))
        .collect();
    let predictions = predict(&net, &params, &test_features)?;
    Ok(FoldModalityRun {
        predictions,
        train_total: inputs.len(),
    })
}

/// All non-empty modality index subsets when `grid` is set, otherwise just
/// the full set: singles first, then pairs, ordered deterministically.
pub fn modality_subsets(count: usize, grid: bool) -> Vec<Vec<usize>> {
    if !grid {
        return vec![(0..count).collect()];
    }
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << count))
        .map(|mask| (0..count).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by_key(|s: &Vec<usize>| (s.len(), s.clone()));
    subsets
}

/// Collapses per-fold reports into one: the single report itself for a
/// one-fold protocol, otherwise the unweighted fold mean with the folds
/// attached.
pub fn aggregate_subset(mut folds: Vec<MetricReport>) -> MetricReport {
    if folds.len() == 1 {
        folds.pop().unwrap()
    } else {
        aggregate_folds(folds)
    }
}

/// Unweighted mean of per-fold reports, with the folds attached.
fn aggregate_folds(folds: Vec<MetricReport>) -> MetricReport {
    let n = folds.len() as f64;
    let c = folds[0].per_class.len();
    let mean = |f: &dyn Fn(&MetricReport) -> f64| folds.iter().map(|r| f(r)).sum::<f64>() / n;
    let per_class = (0..c)
        .map(|k| ClassMetrics {
            precision: folds.iter().map(|r| r.per_class[k].precision).sum::<f64>() / n,
            recall: folds.iter().map(|r| r.per_class[k].recall).sum::<f64>() / n,
            f1: folds.iter().map(|r| r.per_class[k].f1).sum::<f64>() / n,
            zero_division: folds.iter().any(|r| r.per_class[k].zero_division),
        })
        .collect();
    MetricReport {
        accuracy: mean(&|r: &MetricReport| r.accuracy),
        macro_precision: mean(&|r: &MetricReport| r.macro_precision),
        macro_recall: mean(&|r: &MetricReport| r.macro_recall),
        macro_f1: mean(&|r: &MetricReport| r.macro_f1),
        per_class,
        folds,
    }
}

/// Trains and evaluates the configured modalities under the chosen
/// protocol. Feature transforms run once per modality over the whole
/// dataset; augmentation pools are built per fold from training windows
/// only.
pub fn run_protocol(
    ds: &Dataset,
    modalities: &[ModalityConfig],
    tf: &TransformConfig,
    cfg: &ProtocolConfig,
) -> Result<ProtocolReport> {
    ds.validate()?;
    if modalities.is_empty() {
        return Err(Error::InvalidParameter("no modalities configured".into()));
    }
    if !(0.0 < cfg.train_subsample && cfg.train_subsample <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_subsample must be in (0,1], got {}",
            cfg.train_subsample
        )));
    }
    let plan = expansion_plan(tf, cfg.seed)?;

    // Whole-dataset transforms, one list per modality, window order.
    let mut features: Vec<Vec<FeatureImage>> = Vec::with_capacity(modalities.len());
    for m in modalities {
        let imgs: Vec<Result<FeatureImage>> = ds
            .windows
            .par_iter()
            .map(|w| transform_window(w, m.kind, &plan, tf))
            .collect();
        features.push(imgs.into_iter().collect::<Result<Vec<_>>>()?);
    }

    let splits = match cfg.protocol {
        ProtocolKind::Hh => vec![split_half_half(ds, cfg.seed)?],
        ProtocolKind::Loo => split_leave_one_out(ds)?,
    };

    let mut fold_details = Vec::with_capacity(splits.len());
    // per fold, per modality predictions
    let mut fold_preds: Vec<Vec<PredictionRows>> = Vec::with_capacity(splits.len());
    for (fold_no, split) in splits.iter().enumerate() {
        let train_idx = subsample(&split.train, cfg.train_subsample, cfg.seed, fold_no);
        let mut per_modality = Vec::with_capacity(modalities.len());
        let mut train_total = 0usize;
        for (mi, m) in modalities.iter().enumerate() {
            let run = run_fold_modality(
                ds,
                split,
                &train_idx,
                m,
                &plan,
                tf,
                cfg,
                fold_no,
                &features[mi],
            )?;
            train_total = run.train_total;
            per_modality.push(run.predictions);
        }
        fold_details.push(FoldDetail {
            name: split.name.clone(),
            train_originals: train_idx.len(),
            train_total,
            test_count: split.test.len(),
        });
        fold_preds.push(per_modality);
    }

    // Truths per fold, aligned with prediction row order.
    let truths: Vec<Vec<usize>> = splits
        .iter()
        .map(|s| {
            s.test
                .iter()
                .map(|&i| ds.class_index(&ds.windows[i].label).unwrap())
                .collect()
        })
        .collect();

    let mut subsets = Vec::new();
    for subset in modality_subsets(modalities.len(), cfg.grid) {
        let names: Vec<String> = subset
            .iter()
            .map(|&mi| modalities[mi].kind.name().to_string())
            .collect();
        let mut fold_reports = Vec::with_capacity(splits.len());
        for (fi, per_modality) in fold_preds.iter().enumerate() {
            let n_test = truths[fi].len();
            let mut preds = Vec::with_capacity(n_test);
            for row in 0..n_test {
                let dists: Vec<ProbDist> = subset
                    .iter()
                    .map(|&mi| per_modality[mi][row].1.clone())
                    .collect();
                let fi_input = FusionInput::new(names.clone(), dists)?;
                let scores = fuse(&fi_input, cfg.fusion_method, cfg.fusion_k)?;
                preds.push(decide(&scores).index);
            }
            let cm = confusion(&preds, &truths[fi], ds.num_classes())?;
            fold_reports.push(metrics(&cm)?);
        }
        let report = aggregate_subset(fold_reports);
        subsets.push(SubsetReport {
            modalities: names,
            report,
        });
    }

    Ok(ProtocolReport {
        protocol: cfg.protocol,
        class_names: ds.class_names.clone(),
        subsets,
        folds: fold_details,
    })
}

fn subsample(train: &[usize], fraction: f64, seed_val: u64, fold_no: usize) -> Vec<usize> {
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

/// Renders a subset grid as an aligned text table: one row per modality
/// subset, metric columns labeled for the protocol.
pub fn format_subset_grid(protocol_label: &str, subsets: &[SubsetReport]) -> String {
    use std::fmt::Write as _;
    let name_w = subsets
        .iter()
        .map(|s| s.modalities.join("+").len())
        .chain(["modalities".len()])
        .max()
        .unwrap();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:name_w$}  {:>12} {:>13} {:>10} {:>9}",
        "modalities",
        format!("{protocol_label}-accuracy"),
        format!("{protocol_label}-precision"),
        format!("{protocol_label}-recall"),
        format!("{protocol_label}-f1"),
    );
    for s in subsets {
        let _ = writeln!(
            out,
            "{:name_w$}  {:>12.4} {:>13.4} {:>10.4} {:>9.4}",
            s.modalities.join("+"),
            s.report.accuracy,
            s.report.macro_precision,
            s.report.macro_recall,
            s.report.macro_f1,
        );
    }
    out
}

pub fn format_grid(report: &ProtocolReport) -> String {
    let proto = match report.protocol {
        ProtocolKind::Hh => "hh",
        ProtocolKind::Loo => "loo",
    };
    format_subset_grid(proto, &report.subsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::build_dataset;
    use crate::synth::{generate, SynthConfig};

    fn tiny_modality(kind: ModalityKind) -> ModalityConfig {
        ModalityConfig {
            kind,
            arch: ArchParams {
                conv1_filters: 3,
                conv2_filters: 4,
                dense_units: 16,
                dropout_rate: 0.2,
            },
            train: TrainConfig {
                lr: 0.002,
                epochs: 4,
                batch_size: 16,
                dropout_rate: 0.2,
                ..TrainConfig::default()
            },
        }
    }

    fn tiny_dataset() -> Dataset {
        let cfg = SynthConfig {
            subjects: 2,
            windows_per_class: 6,
            seed: 21,
            ..SynthConfig::default()
        };
        let (recs, anns) = generate(&cfg).unwrap();
        build_dataset(&recs, &anns, 64, 0.75).unwrap().0
    }

    #[test]
    fn half_half_single_modality_smoke() {
        let ds = tiny_dataset();
        let cfg = ProtocolConfig {
            seed: 5,
            ..ProtocolConfig::default()
        };
        let tf = TransformConfig {
            och_size: 16,
            ..TransformConfig::default()
        };
        let report =
            run_protocol(&ds, &[tiny_modality(ModalityKind::Freq)], &tf, &cfg).unwrap();
        assert_eq!(report.subsets.len(), 1);
        assert_eq!(report.folds.len(), 1);
        let acc = report.subsets[0].report.accuracy;
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn loo_mean_equals_unweighted_fold_mean() {
        let ds = tiny_dataset();
        let cfg = ProtocolConfig {
            protocol: ProtocolKind::Loo,
            seed: 6,
            ..ProtocolConfig::default()
        };
        let tf = TransformConfig {
            och_size: 16,
            ..TransformConfig::default()
        };
        let report = run_protocol(&ds, &[tiny_modality(ModalityKind::Och)], &tf, &cfg).unwrap();
        let agg = &report.subsets[0].report;
        assert_eq!(agg.folds.len(), 2);
        let mean: f64 =
            agg.folds.iter().map(|f| f.accuracy).sum::<f64>() / agg.folds.len() as f64;
        assert!((agg.accuracy - mean).abs() < 1e-12);
    }

    #[test]
    fn grid_emits_all_subsets_in_size_order() {
        let ds = tiny_dataset();
        let cfg = ProtocolConfig {
            grid: true,
            seed: 7,
            ..ProtocolConfig::default()
        };
        let tf = TransformConfig {
            och_size: 16,
            ..TransformConfig::default()
        };
        let report = run_protocol(
            &ds,
            &[
                tiny_modality(ModalityKind::Freq),
                tiny_modality(ModalityKind::Och),
            ],
            &tf,
            &cfg,
        )
        .unwrap();
        let names: Vec<String> = report
            .subsets
            .iter()
            .map(|s| s.modalities.join("+"))
            .collect();
        assert_eq!(names, vec!["freq", "och", "freq+och"]);
        let text = format_grid(&report);
        assert!(text.contains("freq+och"));
        assert!(text.contains("hh-accuracy"));
    }

    #[test]
    fn ka_augmentation_multiplies_the_training_pool_by_seven() {
        let ds = tiny_dataset();
        let cfg = ProtocolConfig {
            augment: AugmentMode::Ka,
            seed: 8,
            ..ProtocolConfig::default()
        };
        let tf = TransformConfig {
            och_size: 16,
            ..TransformConfig::default()
        };
        let report = run_protocol(&ds, &[tiny_modality(ModalityKind::Och)], &tf, &cfg).unwrap();
        for fold in &report.folds {
            assert_eq!(fold.train_total, fold.train_originals * 7);
        }
    }

    #[test]
    fn subsample_keeps_the_requested_fraction() {
        let ds = tiny_dataset();
        let cfg = ProtocolConfig {
            train_subsample: 0.25,
            seed: 9,
            ..ProtocolConfig::default()
        };
        let tf = TransformConfig {
            och_size: 16,
            ..TransformConfig::default()
        };
        let report = run_protocol(&ds, &[tiny_modality(ModalityKind::Freq)], &tf, &cfg).unwrap();
        let fold = &report.folds[0];
        assert_eq!(fold.train_originals, 9); // 36 train windows, quarter
    }

    #[test]
    fn runs_are_deterministic() {
        let ds = tiny_dataset();
        let cfg = ProtocolConfig {
            seed: 10,
            ..ProtocolConfig::default()
        };
        let tf = TransformConfig {
            och_size: 16,
            ..TransformConfig::default()
        };
        let a = run_protocol(&ds, &[tiny_modality(ModalityKind::Freq)], &tf, &cfg).unwrap();
        let b = run_protocol(&ds, &[tiny_modality(ModalityKind::Freq)], &tf, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
