use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ctvforge::cli::{cmd_eval, cmd_phantom_gen, cmd_sdt, cmd_train, load_cohort, read_manifest};
use ctvforge::config::RunConfig;
use ctvforge::phantom::{auto_oar, Organ};
use ctvforge::pipeline::{assemble_stack, AugmentPolicy, ChannelLayout, OarSource};
use ctvforge::sdt::signed_distance;
use ctvforge::svox::{read_mask, read_volume};
use ctvforge::Error;

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ctvforge"))
}

fn tiny_config(root: &Path) -> RunConfig {
    let text = format!(
        "cohort_dir = {r}/cohort\ncheckpoint_dir = {r}/ckpt\noutput_dir = {r}/out\n\
         seed = 7\nn_cases = 3\nsetup = ct_gtvln_sdt\n\
         epochs = 2\nn_pos = 2\nn_neg = 1\nbatch_size = 3\nvoi_size = 32,32,16\n\
         block_channels = 2,4\nblock_convs = 1,1\nwindow = 32,32,16\nstride = 32,32,16\n",
        r = root.display()
    );
    RunConfig::parse_str(&text).unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn phantom_gen_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_phantom_gen(&tiny_config(a.path()), false).unwrap();
    cmd_phantom_gen(&tiny_config(b.path()), false).unwrap();
    let (ta, tb) = (tree(&a.path().join("cohort")), tree(&b.path().join("cohort")));
    assert_eq!(ta.len(), 3 * 7 + 1);
    assert_eq!(ta, tb);

    let rows = read_manifest(&a.path().join("cohort")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].paths.len(), 7);
    assert!(rows[0].paths[0].starts_with("case_000/"));
}

#[test]
fn phantom_gen_guards_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cmd_phantom_gen(&cfg, false).unwrap();
    let err = cmd_phantom_gen(&cfg, false).unwrap_err();
    assert!(matches!(err, Error::OutputNotEmpty(_)));

    fs::write(cfg.cohort_dir.join("notes.txt"), "keep").unwrap();
    cfg.n_cases = 2;
    cmd_phantom_gen(&cfg, true).unwrap();
    assert!(!cfg.cohort_dir.join("case_002").exists());
    assert!(cfg.cohort_dir.join("notes.txt").exists());

    cfg.n_cases = 0;
    assert_eq!(cmd_phantom_gen(&cfg, true).unwrap_err().to_string(), "empty cohort");
}

#[test]
fn sdt_files_match_in_process_transform() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_phantom_gen(&cfg, false).unwrap();
    let case_dir = cfg.cohort_dir.join("case_001");
    cmd_sdt(&case_dir).unwrap();

    let lung = read_mask(case_dir.join("lung.svox")).unwrap();
    let on_disk = read_volume(case_dir.join("sdt/lung.svox")).unwrap();
    assert_eq!(on_disk.data(), signed_distance(&lung).unwrap().data());

    let tumor = read_mask(case_dir.join("gtv.svox"))
        .unwrap()
        .union(&read_mask(case_dir.join("lns.svox")).unwrap())
        .unwrap();
    let combined = read_volume(case_dir.join("sdt/gtv_ln.svox")).unwrap();
    assert_eq!(combined.data(), signed_distance(&tumor).unwrap().data());
    let mut names: Vec<_> = fs::read_dir(case_dir.join("sdt"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["gtv_ln.svox", "heart.svox", "lung.svox", "spinal_canal.svox"]);

    fs::remove_file(case_dir.join("heart.svox")).unwrap();
    let err = cmd_sdt(&case_dir).unwrap_err().to_string();
    assert!(err.contains("heart.svox"), "{err}");
}

#[test]
fn train_and_eval_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_phantom_gen(&cfg, false).unwrap();
    cmd_train(&cfg).unwrap();
    let first = tree(&cfg.checkpoint_dir);
    assert_eq!(first.len(), 3 * 2 + 1);
    cmd_eval(&cfg).unwrap();
    let eval_first = tree(&cfg.output_dir);

    cmd_train(&cfg).unwrap();
    cmd_eval(&cfg).unwrap();
    assert_eq!(tree(&cfg.checkpoint_dir), first);
    assert_eq!(tree(&cfg.output_dir), eval_first);

    let names: Vec<_> = eval_first.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["hist_asd.csv", "hist_dice.csv", "metrics.csv"]);
    let metrics = fs::read_to_string(cfg.output_dir.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).filter(|l| l.starts_with("case_")).collect();
    assert_eq!(rows.len(), 3);

    let log = fs::read_to_string(cfg.checkpoint_dir.join("fold0_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,mean_loss,lr"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn metrics_mean_row_is_arithmetic_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_phantom_gen(&cfg, false).unwrap();
    cmd_train(&cfg).unwrap();
    cmd_eval(&cfg).unwrap();
    let text = fs::read_to_string(cfg.output_dir.join("metrics.csv")).unwrap();
    let parsed: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    let ok: Vec<&Vec<String>> = parsed.iter().filter(|r| r[5] == "OK").collect();
    let mean_row = parsed.iter().find(|r| r[0] == "MEAN").unwrap();
    for col in 1..5 {
        if ok.is_empty() {
            break;
        }
        let mean = ok.iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>() / ok.len() as f64;
        let reported: f64 = mean_row[col].parse().unwrap();
        assert!((mean - reported).abs() < 1e-5, "column {col}: {mean} vs {reported}");
    }
}

#[test]
fn auto_oar_eval_uses_simulated_organ_masks() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.set("setup", "ct_all_sdt").unwrap();
    cmd_phantom_gen(&cfg, false).unwrap();
    let case = &load_cohort(&cfg.cohort_dir).unwrap()[0];
    let stack = assemble_stack(case, ChannelLayout::CtAllSdt, &AugmentPolicy::eval(OarSource::Auto), &cfg.eval.norm, 0).unwrap();
    for (k, organ) in Organ::ALL.into_iter().enumerate() {
        let expect = cfg.eval.norm.sdt(&signed_distance(&auto_oar(case, organ).unwrap()).unwrap());
        assert_eq!(stack.channels[2 + k], expect, "{}", organ.name());
        assert_ne!(auto_oar(case, organ).unwrap(), *case.oar(organ));
    }

    cmd_train(&cfg).unwrap();
    cmd_eval(&cfg).unwrap();
    let manual = fs::read_to_string(cfg.output_dir.join("metrics.csv")).unwrap();
    cfg.set("oar_source", "auto").unwrap();
    cmd_eval(&cfg).unwrap();
    let auto = fs::read_to_string(cfg.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(manual.lines().count(), auto.lines().count());

    // a CT-only model ignores the organ source entirely
    cfg.set("setup", "ct").unwrap();
    cmd_train(&cfg).unwrap();
    cmd_eval(&cfg).unwrap();
    let a = fs::read_to_string(cfg.output_dir.join("metrics.csv")).unwrap();
    cfg.set("oar_source", "manual").unwrap();
    cmd_eval(&cfg).unwrap();
    assert_eq!(a, fs::read_to_string(cfg.output_dir.join("metrics.csv")).unwrap());
}

#[test]
fn cohort_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_phantom_gen(&cfg, false).unwrap();
    let loaded = load_cohort(&cfg.cohort_dir).unwrap();
    let fresh = ctvforge::phantom::generate_cohort(&cfg.phantom, 3).unwrap();
    assert_eq!(loaded, fresh);
}

#[test]
fn binary_reports_single_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(
        &cfg_path,
        "cohort_dir = cohort\nn_cases = 2\nblock_channels = 2,4\nblock_convs = 1,1\nwindow = 32,32,16\n",
    )
    .unwrap();
    let run = |args: &[&str]| {
        Command::new(bin())
            .args(args)
            .env("CTVFORGE_THREADS", "1")
            .output()
            .unwrap()
    };
    let cfg = cfg_path.to_str().unwrap();
    let ok = run(&["phantom-gen", "--config", cfg, "--seed", "3"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("cohort/manifest.csv").exists());

    let again = run(&["phantom-gen", "--config", cfg]);
    assert!(!again.status.success());
    let err = String::from_utf8(again.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: output dir"), "{err}");

    let forced = run(&["phantom-gen", "--config", cfg, "--force", "--n-cases", "0"]);
    assert_eq!(String::from_utf8(forced.stderr).unwrap(), "error: empty cohort\n");

    let bad = run(&["train", "--config", cfg, "--setup", "ct_everything"]);
    assert!(!bad.status.success());
    assert_eq!(String::from_utf8(bad.stderr).unwrap().lines().count(), 1);

    let missing = run(&["sdt", "--config", cfg, "--case-dir", dir.path().join("nope").to_str().unwrap()]);
    let err = String::from_utf8(missing.stderr).unwrap();
    assert!(err.contains("missing file") && err.contains("gtv.svox"), "{err}");
}
