use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use rsnlab::pipeline::*;
use sha2::{Digest, Sha256};

fn tiny_toml(out: &Path) -> String {
    format!(
        r#"
seed = 3
out_dir = "{}"
run_id = "tiny"

[synth]
n_subjects = 10
dims = [20, 22, 18]
blob_radius = 1.5
n_timepoints = 30
n_networks = 3
voxel_size_mm = 4.0

[preprocess]
motion_correction = false
fwhm_mm = 5.0

[groupica]
model_order = 4

[represent]
export_png = true

[train]
epochs = 4
"#,
        out.display()
    )
}

fn tiny(out: &Path) -> PipelineConfig {
    PipelineConfig::from_toml_str(&tiny_toml(out), None).unwrap()
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn second_run_is_cached_and_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let first = run_all(&cfg, None, RunOptions::default()).unwrap();
    assert_eq!(first.len(), 7);
    assert!(first.iter().all(|m| !m.cached));
    let second = run_all(&cfg, None, RunOptions::default()).unwrap();
    for (a, b) in first.iter().zip(&second) {
        assert!(b.cached, "{} not cached", b.step);
        assert_eq!(a.manifest_hash, b.manifest_hash);
        assert_eq!(a.started_at, b.started_at, "{} was recomputed", b.step);
    }
    let log = std::fs::read_to_string(cfg.run_dir().join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 14);

    // chain oracle: each run-local input is byte-identical to an output of
    // the step named by its first path component
    let by_step: BTreeMap<Step, &RunManifest> = first.iter().map(|m| (m.step, m)).collect();
    for m in &first {
        for input in m.inputs.iter().filter(|f| !f.external) {
            let producer: Step = input.path.split('/').next().unwrap().parse().unwrap();
            assert!(producer < m.step);
            let up = by_step[&producer];
            assert!(
                up.outputs.iter().any(|o| o.path == input.path && o.sha256 == input.sha256),
                "{} input {} not produced upstream",
                m.step,
                input.path
            );
            assert_eq!(sha(&cfg.run_dir().join(&input.path)), input.sha256);
        }
    }
    assert!(verify_run(&cfg.run_dir()).is_clean());

    // completeness: every file in a step directory is in its manifest
    for m in &first {
        let step_dir = cfg.run_dir().join(m.step.name());
        let listed: Vec<String> = m.outputs.iter().map(|o| o.path.clone()).collect();
        for f in files_under(&step_dir) {
            let rel = f.strip_prefix(cfg.run_dir()).unwrap().to_string_lossy().into_owned();
            if rel.ends_with(MANIFEST_FILE) {
                continue;
            }
            assert!(listed.contains(&rel), "{rel} missing from {} manifest", m.step);
        }
    }
}

#[test]
fn changed_parameter_reexecutes_only_affected_steps() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    let before = run_all(&cfg, None, RunOptions::default()).unwrap();
    let train_hash = cfg.config_hash(Step::Train);
    cfg.train.epochs += 1;
    assert_ne!(cfg.config_hash(Step::Train), train_hash);
    let after = run_all(&cfg, None, RunOptions::default()).unwrap();
    for (b, a) in before.iter().zip(&after) {
        match a.step {
            Step::Train => {
                assert!(!a.cached);
                assert_ne!(a.config_hash, b.config_hash);
            }
            // the model changed, so evaluation inputs changed
            Step::Evaluate => assert!(!a.cached),
            _ => assert!(a.cached, "{} should be cached", a.step),
        }
    }
    assert!(verify_run(&cfg.run_dir()).is_clean());
}

#[test]
fn bit_flip_is_reported_once_and_blocks_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    run_all(&cfg, Some(Step::Groupica), RunOptions::default()).unwrap();
    let run = cfg.run_dir();
    assert!(verify_run(&run).is_clean());

    let target = run.join("groupica").join("mixing.txt");
    let mut bytes = std::fs::read(&target).unwrap();
    bytes[10] ^= 0x01;
    std::fs::write(&target, bytes).unwrap();

    let report = verify_run(&run);
    assert_eq!(report.mismatches.len(), 1);
    assert_eq!(report.mismatches[0].path, "groupica/mixing.txt");
    assert_eq!(report.mismatches[0].step, Step::Groupica);
    assert!(report.chain_errors.is_empty());

    match run_step(&cfg, Step::Groupica, RunOptions::default()) {
        Err(PipelineError::HashMismatch { step, path }) => {
            assert_eq!(step, Step::Groupica);
            assert_eq!(path, "groupica/mixing.txt");
        }
        other => panic!("unexpected {other:?}"),
    }
    // downstream steps refuse corrupted inputs too
    assert!(matches!(
        run_step(&cfg, Step::Dualreg, RunOptions::default()),
        Err(PipelineError::HashMismatch { .. })
    ));
    let m = run_step(&cfg, Step::Groupica, RunOptions { force: true }).unwrap();
    assert!(!m.cached);
    assert!(verify_run(&run).is_clean());
}

#[test]
fn two_runs_are_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_all(&tiny(a.path()), None, RunOptions::default()).unwrap();
    let mb = run_all(&tiny(b.path()), None, RunOptions::default()).unwrap();
    for (x, y) in ma.iter().zip(&mb) {
        assert_eq!(x.manifest_hash, y.manifest_hash, "{}", x.step);
        let stable = |m: &RunManifest| -> Vec<(String, String)> {
            m.outputs.iter().filter(|o| !o.volatile).map(|o| (o.path.clone(), o.sha256.clone())).collect()
        };
        assert_eq!(stable(x), stable(y));
    }
}

#[test]
fn missing_upstream_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    match run_step(&cfg, Step::Groupica, RunOptions::default()) {
        Err(e @ PipelineError::MissingInput { .. }) => assert_eq!(e.kind(), "missing_input"),
        other => panic!("unexpected {other:?}"),
    }
    let mut cfg = cfg;
    cfg.preprocess.input_dir = Some(dir.path().join("nowhere"));
    assert!(matches!(
        run_step(&cfg, Step::Preprocess, RunOptions::default()),
        Err(PipelineError::MissingInput { .. })
    ));
}

#[test]
fn external_inputs_and_label_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    run_step(&cfg, Step::Synth, RunOptions::default()).unwrap();

    // a second run reads the first run's subjects as external data and uses a
    // hand-written labels file
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    for f in files_under(&cfg.run_dir().join("synth")) {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("sub-") {
            std::fs::copy(&f, data.join(name)).unwrap();
        }
    }
    let mut ext = cfg.clone();
    ext.run_id = "external".into();
    ext.steps.retain(|&s| s != Step::Synth);
    ext.preprocess.input_dir = Some(data);
    let labels = dir.path().join("labels.tsv");
    std::fs::write(&labels, "# component labels\n0\tDMN\n1\tVISUAL-MEDIAL\n2\tNOISE\n3\tNOISE\n").unwrap();
    ext.represent.labels = labels.to_string_lossy().into_owned();
    let ms = run_all(&ext, Some(Step::Represent), RunOptions::default()).unwrap();
    assert_eq!(ms.len(), 4);
    let pre = ms.iter().find(|m| m.step == Step::Preprocess).unwrap();
    assert!(pre.inputs.iter().all(|f| f.external));
    let rep = ms.iter().find(|m| m.step == Step::Represent).unwrap();
    assert!(rep.inputs.iter().any(|f| f.external && f.path.ends_with("labels.tsv")));
    let classes = std::fs::read_to_string(ext.run_dir().join("represent").join("classes.txt")).unwrap();
    assert_eq!(classes, "DMN\nVISUAL-MEDIAL\nNOISE\nUNKNOWN\n");
    assert!(verify_run(&ext.run_dir()).is_clean());
}

#[test]
fn predict_covers_every_example() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    run_all(&cfg, Some(Step::Train), RunOptions::default()).unwrap();
    let m = run_step(&cfg, Step::Predict, RunOptions::default()).unwrap();
    let p: Vec<Prediction> =
        serde_json::from_str(&std::fs::read_to_string(cfg.run_dir().join("predict/predictions.json")).unwrap()).unwrap();
    assert_eq!(p.len(), 10 * 4);
    for row in &p {
        assert!((row.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(m.outputs.len(), 1);

    // a K-frame map volume as external input
    let mut ext = cfg.clone();
    ext.predict.input = Some(cfg.run_dir().join("dualreg").join("dr_stage2_sub-01.nii.gz"));
    run_step(&ext, Step::Predict, RunOptions::default()).unwrap();
    let q: Vec<Prediction> =
        serde_json::from_str(&std::fs::read_to_string(cfg.run_dir().join("predict/predictions.json")).unwrap()).unwrap();
    assert_eq!(q.len(), 4);
    assert!(q.iter().all(|r| r.source == "dr_stage2_sub-01.nii.gz"));
}

#[test]
fn config_materializes_seeds_and_rejects_typos() {
    let cfg = PipelineConfig::from_toml_str("seed = 11\n[train]\nseed = 2\n", None).unwrap();
    assert_eq!(cfg.synth.seed, 11);
    assert_eq!(cfg.groupica.seed, 11);
    assert_eq!(cfg.represent.seed, 11);
    assert_eq!(cfg.train.seed, 2);
    let over = PipelineConfig::from_toml_str("seed = 11\n", Some(5)).unwrap();
    assert_eq!(over.synth.seed, 5);
    assert_eq!(PipelineConfig::with_seed(0), PipelineConfig::from_toml_str("", None).unwrap());
    assert_eq!(PipelineConfig::default().groupica.model_order, 100);

    for bad in [
        "[groupica]\nmodel_ordr = 3\n",
        "[synth]\nnetworks_count = 3\n",
        "steps = [\"synth\", \"synth\"]\n",
        "steps = [\"cook\"]\n",
        "seed = \"x\"\n",
        "run_id = \"../up\"\n",
        "[preprocess]\nregistration_dof = 7\n",
    ] {
        assert!(
            matches!(PipelineConfig::from_toml_str(bad, None), Err(PipelineError::Config(_))),
            "{bad:?} accepted"
        );
    }
}

#[test]
fn config_hash_tracks_materialized_values() {
    let a = PipelineConfig::from_toml_str("", None).unwrap();
    let b = PipelineConfig::from_toml_str("[groupica]\nmodel_order = 100\n", None).unwrap();
    assert_eq!(a.config_hash(Step::Groupica), b.config_hash(Step::Groupica));
    let c = PipelineConfig::from_toml_str("[groupica]\nmodel_order = 99\n", None).unwrap();
    assert_ne!(a.config_hash(Step::Groupica), c.config_hash(Step::Groupica));
    assert_eq!(a.config_hash(Step::Synth), c.config_hash(Step::Synth));
    let d = PipelineConfig::from_toml_str("seed = 1\n", None).unwrap();
    assert_ne!(a.config_hash(Step::Synth), d.config_hash(Step::Synth));
    assert_eq!(a.config_hash(Step::Dualreg), d.config_hash(Step::Dualreg));
    assert_eq!(a.config_hash(Step::Synth).len(), 64);
}

#[test]
fn manifest_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let m = run_step(&cfg, Step::Synth, RunOptions::default()).unwrap();
    let text = std::fs::read_to_string(RunManifest::path(&cfg.run_dir(), Step::Synth)).unwrap();
    let back: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.compute_hash(), back.manifest_hash);
    assert_eq!(back.seeds, vec![("synth".to_string(), 3)]);
    assert_eq!(back.outputs.len(), 12);
    assert!(back.finished_at >= back.started_at);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rsnlab"))
}

#[test]
fn cli_success_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(&cfg_path, tiny_toml(dir.path())).unwrap();

    let out = cli()
        .args(["synth", "--config"])
        .arg(&cfg_path)
        .args(["--threads", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(line["step"], "synth");
    assert_eq!(line["cached"], false);

    let out = cli().args(["verify", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verify"]["mismatches"].as_array().unwrap().len(), 0);

    let out = cli().args(["groupica", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "missing_input");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = \"many\"\n").unwrap();
    let out = cli().args(["train", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let out = cli().args(["run-all", "--step", "bake"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
