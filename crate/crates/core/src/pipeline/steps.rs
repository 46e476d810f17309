use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::EvalSplit;
use super::manifest::{FileRecord, RunManifest};
use super::{PipelineConfig, PipelineError, Result, Step};
use crate::dualreg::{dual_regress, stage1_file, stage2_file, write_subject_components, SubjectComponents};
use crate::eval::{evaluate, report_emit};
use crate::ica::{build_mask, concat_normalize, group_ica, read_ica, write_ica, BrainMask, FastIcaSettings};
use crate::nifti::{read_nifti, write_nifti, Volume3D, Volume4D};
use crate::nn::{class_weights, load_model, mlp_train, predict_batch, save_model, ClassWeightMode, ClassWeights, Samples, TrainHistory};
use crate::preprocess::{
    gaussian_smooth, highpass_temporal, motion_correct, register_affine, resample_to_grid, write_motion_params,
    Dof, HighpassSpec, SmoothingSpec,
};
use crate::represent::{
    build_dataset, class_counts, export_png, parse_label, project_2p5d, read_component_labels, read_dataset, select,
    split_subjects, write_component_labels, write_dataset, zscore_features, ComponentLabels, FeatureMode, LabelSet,
    Split, SplitSpec, NOISE,
};
use crate::synth::{match_components, read_truth, synth_generate, GroundTruth, MatchPair, TRUTH_FILE, TRUTH_MAPS_FILE};
use crate::table::read_matrix;

const PREPROC_SUFFIX: &str = "_preproc.nii";
const MASK_FILE: &str = "mask.nii.gz";
const LABELS_FILE: &str = "labels.tsv";
const CLASSES_FILE: &str = "classes.txt";
const DATASET_FILE: &str = "dataset.bin";
const SPLIT_FILE: &str = "split.json";
const MATCHING_FILE: &str = "label_matching.json";
const MODEL_FILE: &str = "model.bin";
const HISTORY_FILE: &str = "history.json";
const WEIGHTS_FILE: &str = "class_weights.json";
const REPORT_PREFIX: &str = "report";
const PREDICTIONS_FILE: &str = "predictions.json";

/// Outputs whose bytes carry wall-clock timings.
const VOLATILE: [&str; 2] = [HISTORY_FILE, "report.json"];

fn file_name(p: &Path) -> &str {
    p.file_name().and_then(|s| s.to_str()).unwrap_or("")
}

fn strip_nifti_ext(name: &str) -> &str {
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or(name)
}

fn is_nifti(name: &str) -> bool {
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

/// Outputs of `producer` whose file name satisfies `pred`, re-hashed and
/// checked against the producer's manifest.
fn upstream(run_dir: &Path, step: Step, producer: Step, pred: impl Fn(&str) -> bool) -> Result<Vec<FileRecord>> {
    let m = RunManifest::load(run_dir, producer)?.ok_or_else(|| PipelineError::MissingInput {
        step,
        what: format!("{producer} manifest (run the {producer} step first)"),
    })?;
    let mut out = Vec::new();
    for rec in m.outputs.iter().filter(|r| pred(file_name(Path::new(&r.path)))) {
        let path = rec.resolve(run_dir);
        if !path.exists() {
            return Err(PipelineError::MissingInput {
                step,
                what: rec.path.clone(),
            });
        }
        let fresh = FileRecord::hash(run_dir, &path, rec.volatile)?;
        if fresh.sha256 != rec.sha256 {
            return Err(PipelineError::HashMismatch {
                step: producer,
                path: rec.path.clone(),
            });
        }
        out.push(fresh);
    }
    if out.is_empty() {
        return Err(PipelineError::MissingInput {
            step,
            what: format!("no matching outputs of {producer}"),
        });
    }
    Ok(out)
}

fn external(run_dir: &Path, step: Step, path: &Path) -> Result<FileRecord> {
    let abs = std::fs::canonicalize(path).map_err(|_| PipelineError::MissingInput {
        step,
        what: path.display().to_string(),
    })?;
    let mut rec = FileRecord::hash(run_dir, &abs, false)?;
    rec.external = true;
    rec.path = abs.to_string_lossy().into_owned();
    Ok(rec)
}

fn external_dir(run_dir: &Path, step: Step, dir: &Path) -> Result<Vec<FileRecord>> {
    let missing = || PipelineError::MissingInput {
        step,
        what: dir.display().to_string(),
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|_| missing())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_nifti(file_name(p)))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(missing());
    }
    paths.iter().map(|p| external(run_dir, step, p)).collect()
}

fn is_subject_volume(name: &str) -> bool {
    is_nifti(name) && name != TRUTH_MAPS_FILE
}

pub(super) fn resolve_inputs(cfg: &PipelineConfig, run_dir: &Path, step: Step) -> Result<Vec<FileRecord>> {
    let mut inputs = match step {
        Step::Synth => Vec::new(),
        Step::Preprocess => {
            let mut v = match &cfg.preprocess.input_dir {
                Some(dir) => external_dir(run_dir, step, dir)?,
                None => upstream(run_dir, step, Step::Synth, is_subject_volume)?,
            };
            if let Some(t) = &cfg.preprocess.template {
                v.push(external(run_dir, step, t)?);
            }
            v
        }
        Step::Groupica => upstream(run_dir, step, Step::Preprocess, |n| n.ends_with(PREPROC_SUFFIX))?,
        Step::Dualreg => {
            let mut v = upstream(run_dir, step, Step::Groupica, |n| {
                n == MASK_FILE || n == crate::ica::MAPS_FILE || n == crate::ica::MIXING_FILE || n == crate::ica::META_FILE
            })?;
            v.extend(upstream(run_dir, step, Step::Preprocess, |n| n.ends_with(PREPROC_SUFFIX))?);
            v
        }
        Step::Represent => {
            let mut v = upstream(run_dir, step, Step::Groupica, |n| {
                n == MASK_FILE || n == crate::ica::MAPS_FILE || n == crate::ica::MIXING_FILE || n == crate::ica::META_FILE
            })?;
            v.extend(upstream(run_dir, step, Step::Dualreg, |n| n.starts_with("dr_stage"))?);
            if cfg.represent.labels == "auto" {
                v.extend(upstream(run_dir, step, Step::Synth, |n| n == TRUTH_FILE || n == TRUTH_MAPS_FILE)?);
            } else {
                v.push(external(run_dir, step, Path::new(&cfg.represent.labels))?);
            }
            v
        }
        Step::Train => upstream(run_dir, step, Step::Represent, |n| {
            n == DATASET_FILE || n == SPLIT_FILE || n == CLASSES_FILE
        })?,
        Step::Evaluate => {
            let mut v = upstream(run_dir, step, Step::Train, |n| n == MODEL_FILE || n == HISTORY_FILE)?;
            v.extend(upstream(run_dir, step, Step::Represent, |n| {
                n == DATASET_FILE || n == SPLIT_FILE || n == CLASSES_FILE
            })?);
            v
        }
        Step::Predict => {
            let mut v = upstream(run_dir, step, Step::Train, |n| n == MODEL_FILE)?;
            v.extend(upstream(run_dir, step, Step::Represent, |n| n == CLASSES_FILE)?);
            match &cfg.predict.input {
                Some(p) => {
                    v.extend(upstream(run_dir, step, Step::Groupica, |n| n == MASK_FILE)?);
                    v.push(external(run_dir, step, p)?);
                }
                None => v.extend(upstream(run_dir, step, Step::Represent, |n| n == DATASET_FILE)?),
            }
            v
        }
    };
    inputs.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(inputs)
}

/// Every file under `step_dir` except the manifest, sorted by path.
pub(super) fn collect_outputs(run_dir: &Path, step_dir: &Path) -> Result<Vec<FileRecord>> {
    let mut files = Vec::new();
    let mut stack = vec![step_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).map_err(|e| PipelineError::io(&dir, e))? {
            let p = e.map_err(|e| PipelineError::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if file_name(&p) != super::MANIFEST_FILE {
                files.push(p);
            }
        }
    }
    files.sort();
    files
        .iter()
        .map(|p| FileRecord::hash(run_dir, p, VOLATILE.contains(&file_name(p))))
        .collect()
}

fn paths(run_dir: &Path, inputs: &[FileRecord], pred: impl Fn(&str) -> bool) -> Vec<PathBuf> {
    inputs
        .iter()
        .map(|r| r.resolve(run_dir))
        .filter(|p| pred(file_name(p)))
        .collect()
}

fn one(run_dir: &Path, inputs: &[FileRecord], name: &str) -> PathBuf {
    paths(run_dir, inputs, |n| n == name)
        .into_iter()
        .next()
        .unwrap_or_else(|| run_dir.join(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))
}

pub(super) fn execute(cfg: &PipelineConfig, run_dir: &Path, out: &Path, step: Step, inputs: &[FileRecord]) -> Result<()> {
    match step {
        Step::Synth => {
            synth_generate(&cfg.synth, out).map_err(PipelineError::failed(step))?;
        }
        Step::Preprocess => run_preprocess(cfg, run_dir, out, inputs)?,
        Step::Groupica => run_groupica(cfg, run_dir, out, inputs)?,
        Step::Dualreg => run_dualreg(cfg, run_dir, out, inputs)?,
        Step::Represent => run_represent(cfg, run_dir, out, inputs)?,
        Step::Train => run_train(cfg, run_dir, out, inputs)?,
        Step::Evaluate => run_evaluate(cfg, run_dir, out, inputs)?,
        Step::Predict => run_predict(cfg, run_dir, out, inputs)?,
    }
    Ok(())
}

fn mean_frame(vol: &Volume4D) -> Volume3D {
    let n = vol.header.n_voxels();
    let nt = vol.n_frames();
    let mut data = vec![0.0; n];
    for t in 0..nt {
        for (m, x) in data.iter_mut().zip(vol.frame(t)) {
            *m += x;
        }
    }
    data.iter_mut().for_each(|m| *m /= nt as f64);
    Volume3D(Volume4D {
        header: vol.header.with_frames(1),
        data,
    })
}

fn run_preprocess(cfg: &PipelineConfig, run_dir: &Path, out: &Path, inputs: &[FileRecord]) -> Result<()> {
    let step = Step::Preprocess;
    let p = &cfg.preprocess;
    let template = match &p.template {
        Some(t) => {
            let v = read_nifti(t).map_err(PipelineError::failed(step))?;
            Some(Volume3D::try_from(v).map_err(PipelineError::failed(step))?)
        }
        None => None,
    };
    let template_name = p.template.as_ref().map(|t| file_name(t).to_string());
    let subjects: Vec<PathBuf> = paths(run_dir, inputs, |n| is_nifti(n) && Some(n) != template_name.as_deref());
    let dof = Dof::try_from(p.registration_dof).map_err(PipelineError::failed(step))?;

    subjects.par_iter().try_for_each(|path| -> Result<()> {
        let id = strip_nifti_ext(file_name(path)).to_string();
        let mut vol = read_nifti(path).map_err(PipelineError::failed(step))?;
        if p.motion_correction {
            let (corrected, params) = motion_correct(&vol, p.reference_frame).map_err(PipelineError::failed(step))?;
            let mp = out.join(format!("{id}_motion.txt"));
            write_motion_params(&mp, &params).map_err(|e| PipelineError::io(&mp, e))?;
            vol = corrected;
        }
        if p.fwhm_mm > 0.0 {
            vol = gaussian_smooth(&vol, &SmoothingSpec { fwhm_mm: p.fwhm_mm }).map_err(PipelineError::failed(step))?;
        }
        vol = highpass_temporal(&vol, &HighpassSpec::new(p.highpass_cutoff_s, vol.header.tr_s)).map_err(PipelineError::failed(step))?;
        if let Some(t) = &template {
            let xfm = register_affine(&mean_frame(&vol), t, dof).map_err(PipelineError::failed(step))?;
            let xp = out.join(format!("{id}_to_template.txt"));
            let m = DMatrix::from_fn(4, 4, |r, c| xfm.matrix[(r, c)]);
            crate::table::write_matrix(&xp, &m).map_err(|e| PipelineError::io(&xp, e))?;
            vol = resample_to_grid(&vol, &xfm, &t.header).map_err(PipelineError::failed(step))?;
        }
        write_nifti(&vol, out.join(format!("{id}{PREPROC_SUFFIX}")), false).map_err(PipelineError::failed(step))?;
        Ok(())
    })
}

fn subject_id_of(name: &str) -> &str {
    name.strip_suffix(PREPROC_SUFFIX).unwrap_or(name)
}

fn read_subjects(run_dir: &Path, inputs: &[FileRecord], step: Step) -> Result<Vec<(String, Volume4D)>> {
    paths(run_dir, inputs, |n| n.ends_with(PREPROC_SUFFIX))
        .iter()
        .map(|p| {
            let v = read_nifti(p).map_err(PipelineError::failed(step))?;
            Ok((subject_id_of(file_name(p)).to_string(), v))
        })
        .collect()
}

fn run_groupica(cfg: &PipelineConfig, run_dir: &Path, out: &Path, inputs: &[FileRecord]) -> Result<()> {
    let step = Step::Groupica;
    let g = &cfg.groupica;
    let subjects = read_subjects(run_dir, inputs, step)?;
    let vols: Vec<&Volume4D> = subjects.iter().map(|(_, v)| v).collect();
    let mask = build_mask(&vols, g.mask_threshold).map_err(PipelineError::failed(step))?;
    let data = concat_normalize(&vols, &mask).map_err(PipelineError::failed(step))?;
    drop(subjects);
    let settings = FastIcaSettings {
        seed: g.seed,
        tol: g.tol,
        max_iter: g.max_iter,
        contrast: g.contrast,
    };
    let (ica, pca) = group_ica(&data, g.model_order, &settings).map_err(PipelineError::failed(step))?;
    write_nifti(&mask.to_volume(), out.join(MASK_FILE), true).map_err(PipelineError::failed(step))?;
    write_ica(out, &ica, &mask, &pca.eigenvalues, pca.explained_variance_fraction()).map_err(PipelineError::failed(step))?;
    Ok(())
}

fn load_mask(run_dir: &Path, inputs: &[FileRecord], step: Step) -> Result<BrainMask> {
    let v = read_nifti(one(run_dir, inputs, MASK_FILE)).map_err(PipelineError::failed(step))?;
    BrainMask::from_volume(&Volume3D::try_from(v).map_err(PipelineError::failed(step))?).map_err(PipelineError::failed(step))
}

fn group_dir(run_dir: &Path, inputs: &[FileRecord]) -> PathBuf {
    one(run_dir, inputs, MASK_FILE)
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join(Step::Groupica.name()))
}

fn run_dualreg(cfg: &PipelineConfig, run_dir: &Path, out: &Path, inputs: &[FileRecord]) -> Result<()> {
    let step = Step::Dualreg;
    let mask = load_mask(run_dir, inputs, step)?;
    let (ica, _) = read_ica(&group_dir(run_dir, inputs), &mask).map_err(PipelineError::failed(step))?;
    let subjects = paths(run_dir, inputs, |n| n.ends_with(PREPROC_SUFFIX));
    subjects.par_iter().try_for_each(|p| -> Result<()> {
        let vol = read_nifti(p).map_err(PipelineError::failed(step))?;
        let id = subject_id_of(file_name(p));
        let sc = dual_regress(&ica, &vol, &mask, id, &cfg.dualreg).map_err(PipelineError::failed(step))?;
        write_subject_components(out, &sc, &mask).map_err(PipelineError::failed(step))?;
        Ok(())
    })
}

fn read_components(run_dir: &Path, inputs: &[FileRecord], mask: &BrainMask, step: Step) -> Result<Vec<SubjectComponents>> {
    let maps = paths(run_dir, inputs, |n| n.starts_with("dr_stage2_"));
    maps.iter()
        .map(|p| {
            let id = strip_nifti_ext(file_name(p)).trim_start_matches("dr_stage2_").to_string();
            let vol = read_nifti(p).map_err(PipelineError::failed(step))?;
            let maps = mask.volume_to_maps(&vol).map_err(PipelineError::failed(step))?;
            let tc_path = p.with_file_name(stage1_file(&id));
            let timecourses = read_matrix(&tc_path).map_err(|e| PipelineError::io(&tc_path, e))?;
            debug_assert_eq!(file_name(p), stage2_file(&id));
            Ok(SubjectComponents {
                subject_id: id,
                timecourses,
                maps,
                grid: mask.header.clone(),
            })
        })
        .collect()
}

/// Columns of the full-grid truth maps restricted to the mask.
fn masked_truth(truth: &GroundTruth, mask: &BrainMask) -> DMatrix<f64> {
    DMatrix::from_fn(truth.maps.nrows(), mask.len(), |r, c| truth.maps[(r, mask.voxels[c])])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelMatching {
    min_match_corr: f64,
    pairs: Vec<MatchPair>,
}

fn auto_labels(
    truth: &GroundTruth,
    group_maps: &DMatrix<f64>,
    mask: &BrainMask,
    min_corr: f64,
) -> Result<(ComponentLabels, LabelSet, LabelMatching)> {
    let k = group_maps.nrows();
    let g = truth.labels.len();
    if k < g {
        return Err(PipelineError::Config(format!(
            "auto labels need model_order >= {g} networks, got {k}"
        )));
    }
    let matching = match_components(group_maps, &masked_truth(truth, mask));
    let noise = parse_label(NOISE).expect("reserved label");
    let mut labels: ComponentLabels = (0..k).map(|c| (c, noise.clone())).collect();
    for p in &matching.pairs {
        if p.corr.abs() >= min_corr {
            labels.insert(p.estimate, truth.labels[p.truth].clone());
        }
    }
    Ok((
        labels,
        LabelSet::new(truth.labels.iter().cloned()),
        LabelMatching {
            min_match_corr: min_corr,
            pairs: matching.pairs,
        },
    ))
}

fn run_represent(cfg: &PipelineConfig, run_dir: &Path, out: &Path, inputs: &[FileRecord]) -> Result<()> {
    let step = Step::Represent;
    let r = &cfg.represent;
    let mask = load_mask(run_dir, inputs, step)?;
    let subjects = read_components(run_dir, inputs, &mask, step)?;

    let (labels, set) = if r.labels == "auto" {
        let synth_dir = one(run_dir, inputs, TRUTH_FILE);
        let truth = read_truth(synth_dir.parent().unwrap_or(run_dir)).map_err(PipelineError::failed(step))?;
        let (ica, _) = read_ica(&group_dir(run_dir, inputs), &mask).map_err(PipelineError::failed(step))?;
        let (labels, set, matching) = auto_labels(&truth, &ica.spatial_maps, &mask, r.min_match_corr)?;
        write_json(&out.join(MATCHING_FILE), &matching)?;
        (labels, set)
    } else {
        let labels = read_component_labels(Path::new(&r.labels)).map_err(PipelineError::failed(step))?;
        let set = LabelSet::new(labels.values().cloned());
        (labels, set)
    };
    write_component_labels(&out.join(LABELS_FILE), &labels).map_err(PipelineError::failed(step))?;
    set.save(&out.join(CLASSES_FILE)).map_err(PipelineError::failed(step))?;

    let ids: Vec<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
    let split = split_subjects(
        &ids,
        &SplitSpec {
            train: r.train,
            val: r.val,
            test: r.test,
            seed: r.seed,
        },
    )
    .map_err(PipelineError::failed(step))?;
    write_json(&out.join(SPLIT_FILE), &split)?;

    let examples = build_dataset(&subjects, &mask, &labels, &set, r.mode).map_err(PipelineError::failed(step))?;
    write_dataset(&out.join(DATASET_FILE), &examples).map_err(PipelineError::failed(step))?;

    if r.export_png {
        let png_dir = out.join("png");
        std::fs::create_dir_all(&png_dir).map_err(|e| PipelineError::io(&png_dir, e))?;
        let jobs: Vec<(usize, usize)> = (0..subjects.len())
            .flat_map(|s| (0..subjects[s].n_components()).map(move |c| (s, c)))
            .collect();
        jobs.par_iter().try_for_each(|&(s, c)| -> Result<()> {
            let sc = &subjects[s];
            let row: Vec<f64> = sc.maps.row(c).iter().copied().collect();
            let vol = Volume3D(Volume4D {
                header: mask.header.clone(),
                data: mask.embed(&row),
            });
            let img = project_2p5d(&vol).map_err(PipelineError::failed(step))?;
            export_png(&img, &png_dir.join(format!("{}_ic{c:03}.png", sc.subject_id))).map_err(PipelineError::failed(step))?;
            Ok(())
        })?;
    }
    Ok(())
}

fn load_classes(run_dir: &Path, inputs: &[FileRecord], step: Step) -> Result<LabelSet> {
    LabelSet::load(&one(run_dir, inputs, CLASSES_FILE)).map_err(PipelineError::failed(step))
}

fn run_train(cfg: &PipelineConfig, run_dir: &Path, out: &Path, inputs: &[FileRecord]) -> Result<()> {
    let step = Step::Train;
    let set = load_classes(run_dir, inputs, step)?;
    let examples = read_dataset(&one(run_dir, inputs, DATASET_FILE)).map_err(PipelineError::failed(step))?;
    let split: Split = read_json(&one(run_dir, inputs, SPLIT_FILE))?;
    let train = Samples::from_examples(select(&examples, &split.train));
    let val = Samples::from_examples(select(&examples, &split.val));
    let w = match cfg.train.class_weight_mode {
        ClassWeightMode::InverseFrequency => {
            class_weights(&class_counts(select(&examples, &split.train), set.len())).map_err(PipelineError::failed(step))?
        }
        ClassWeightMode::None => ClassWeights::uniform(set.len()),
    };
    let val = (!val.is_empty()).then_some(&val);
    let (model, history) = mlp_train(&train, val, &cfg.train, &w).map_err(PipelineError::failed(step))?;
    save_model(&model, &out.join(MODEL_FILE)).map_err(PipelineError::failed(step))?;
    write_json(&out.join(HISTORY_FILE), &history)?;
    write_json(&out.join(WEIGHTS_FILE), &w.0)?;
    Ok(())
}

fn run_evaluate(cfg: &PipelineConfig, run_dir: &Path, out: &Path, inputs: &[FileRecord]) -> Result<()> {
    let step = Step::Evaluate;
    let set = load_classes(run_dir, inputs, step)?;
    let model = load_model(&one(run_dir, inputs, MODEL_FILE)).map_err(PipelineError::failed(step))?;
    let history: TrainHistory = read_json(&one(run_dir, inputs, HISTORY_FILE))?;
    let examples = read_dataset(&one(run_dir, inputs, DATASET_FILE)).map_err(PipelineError::failed(step))?;
    let split: Split = read_json(&one(run_dir, inputs, SPLIT_FILE))?;
    let ids = match cfg.evaluate.split {
        EvalSplit::Train => &split.train,
        EvalSplit::Val => &split.val,
        EvalSplit::Test => &split.test,
    };
    let data = Samples::from_examples(select(&examples, ids));
    let names: Vec<String> = set.labels().iter().map(|l| l.raw()).collect();
    let report = evaluate(&model, &data, &names).map_err(PipelineError::failed(step))?.with_training(&history);
    report_emit(&report, &out.join(REPORT_PREFIX)).map_err(PipelineError::failed(step))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub source: String,
    pub component_index: usize,
    pub label: String,
    pub probabilities: Vec<f64>,
}

fn run_predict(cfg: &PipelineConfig, run_dir: &Path, out: &Path, inputs: &[FileRecord]) -> Result<()> {
    let step = Step::Predict;
    let set = load_classes(run_dir, inputs, step)?;
    let model = load_model(&one(run_dir, inputs, MODEL_FILE)).map_err(PipelineError::failed(step))?;
    let (sources, features): (Vec<(String, usize)>, Vec<Vec<f64>>) = match &cfg.predict.input {
        Some(path) => {
            let mask = load_mask(run_dir, inputs, step)?;
            let vol = read_nifti(path).map_err(PipelineError::failed(step))?;
            let maps = mask.volume_to_maps(&vol).map_err(PipelineError::failed(step))?;
            let name = file_name(path).to_string();
            (0..maps.nrows())
                .map(|c| {
                    let row: Vec<f64> = maps.row(c).iter().copied().collect();
                    let full = mask.embed(&row);
                    let f = match cfg.represent.mode {
                        FeatureMode::Flat => zscore_features(&full),
                        FeatureMode::Rgb => {
                            let v = Volume3D(Volume4D {
                                header: mask.header.clone(),
                                data: full,
                            });
                            project_2p5d(&v).map_err(PipelineError::failed(step))?.to_features()
                        }
                    };
                    Ok(((name.clone(), c), f))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        }
        None => {
            let examples = read_dataset(&one(run_dir, inputs, DATASET_FILE)).map_err(PipelineError::failed(step))?;
            examples
                .into_iter()
                .map(|e| ((e.subject_id, e.component_index), e.features.to_vector()))
                .unzip()
        }
    };
    let d = model.input_dim();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(PipelineError::StepFailed {
            step,
            source: Box::new(crate::nn::NnError::DimensionMismatch {
                expected: d,
                found: bad.len(),
            }),
        });
    }
    let x = DMatrix::from_fn(d, features.len(), |r, c| features[c][r]);
    let preds = predict_batch(&model, &x).map_err(PipelineError::failed(step))?;
    let out_rows: Vec<Prediction> = sources
        .into_iter()
        .zip(preds)
        .map(|((source, component_index), (cls, probabilities))| Prediction {
            source,
            component_index,
            label: set.label(cls).map(|l| l.raw()).unwrap_or_default(),
            probabilities,
        })
        .collect();
    write_json(&out.join(PREDICTIONS_FILE), &out_rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMatch {
    pub label: String,
    /// |corr| of the greedily matched group component.
    pub group_abs_corr: f64,
    /// Smallest over subjects of the matched dual-regression map |corr|.
    pub dualreg_min_abs_corr: f64,
    pub best_abs_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub networks: Vec<NetworkMatch>,
    pub min_best_abs_corr: f64,
}

/// Compares group and dual-regression maps of a run against its synthetic
/// ground truth. `None` when the run lacks synth, groupica or dualreg outputs.
pub fn truth_report(run_dir: &Path) -> Result<Option<TruthReport>> {
    let step = Step::Dualreg;
    for s in [Step::Synth, Step::Groupica, Step::Dualreg] {
        if RunManifest::load(run_dir, s)?.is_none() {
            return Ok(None);
        }
    }
    let truth = read_truth(&run_dir.join(Step::Synth.name())).map_err(PipelineError::failed(step))?;
    let group = run_dir.join(Step::Groupica.name());
    let v = read_nifti(group.join(MASK_FILE)).map_err(PipelineError::failed(step))?;
    let mask = BrainMask::from_volume(&Volume3D::try_from(v).map_err(PipelineError::failed(step))?).map_err(PipelineError::failed(step))?;
    let (ica, _) = read_ica(&group, &mask).map_err(PipelineError::failed(step))?;
    let t = masked_truth(&truth, &mask);
    if ica.spatial_maps.nrows() < t.nrows() {
        return Ok(None);
    }
    let gm = match_components(&ica.spatial_maps, &t);

    let dr = RunManifest::load(run_dir, step)?.map(|m| m.outputs).unwrap_or_default();
    let subjects = read_components(run_dir, &dr, &mask, step)?;
    let mut dr_min = vec![f64::INFINITY; t.nrows()];
    for sc in &subjects {
        for p in match_components(&sc.maps, &t).pairs {
            dr_min[p.truth] = dr_min[p.truth].min(p.corr.abs());
        }
    }
    let networks: Vec<NetworkMatch> = gm
        .pairs
        .iter()
        .map(|p| {
            let d = if dr_min[p.truth].is_finite() { dr_min[p.truth] } else { 0.0 };
            NetworkMatch {
                label: truth.labels[p.truth].raw(),
                group_abs_corr: p.corr.abs(),
                dualreg_min_abs_corr: d,
                best_abs_corr: p.corr.abs().max(d),
            }
        })
        .collect();
    let min_best = networks.iter().map(|n| n.best_abs_corr).fold(f64::INFINITY, f64::min);
    Ok(Some(TruthReport {
        networks,
        min_best_abs_corr: min_best,
    }))
}
