//! Command implementations behind the `ctvforge` binary.
//!
//! On-disk cohort layout:
//!
//! ```text
//! cohort_dir/manifest.csv            case_id,seed,paths
//! cohort_dir/case_000/ct.svox        HU volume
//! cohort_dir/case_000/<mask>.svox    gtv, lns, lung, heart, spinal_canal, ctv
//! cohort_dir/case_000/sdt/*.svox     written by `sdt`
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalx::{cumulative_histogram, HistMetric, MetricsReport};
use crate::experiment::{evaluate_folds, train_fold};
use crate::net::checkpoint::{load_checkpoint, save_checkpoint};
use crate::net::PhnnParams;
use crate::phantom::{generate_case, Organ, PhantomCase};
use crate::sdt::{combined_gtv_ln_sdt, signed_distance};
use crate::svox::{read_mask, read_volume, write_mask, write_volume};
use crate::train::log_csv;

#[derive(Debug, Parser)]
#[command(name = "ctvforge", version, about = "Phantom cohort, SDT context encoding and PHNN training/evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Channel layout: ct, ct_mask, ct_gtvln_sdt or ct_all_sdt.
    #[arg(long, global = true)]
    pub setup: Option<String>,
    /// Organ masks used for evaluation SDTs: manual or auto.
    #[arg(long = "oar-source", global = true)]
    pub oar_source: Option<String>,
    #[arg(long = "n-cases", global = true)]
    pub n_cases: Option<usize>,
    #[arg(long = "case-dir", global = true)]
    pub case_dir: Option<PathBuf>,
    /// Extra `KEY=VALUE` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Overwrite a non-empty cohort directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort and its manifest.
    PhantomGen,
    /// Write signed distance transforms for one case directory.
    Sdt,
    /// Train one network per cross-validation fold.
    Train,
    /// Score held-out cases with their fold's network.
    Eval,
}

impl Cli {
    /// Config file (if any) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(s) = &self.setup {
            cfg.set("setup", s)?;
        }
        if let Some(s) = &self.oar_source {
            cfg.set("oar_source", s)?;
        }
        if let Some(n) = self.n_cases {
            cfg.n_cases = n;
        }
        if let Some(d) = &self.case_dir {
            cfg.case_dir = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(command: Command, cfg: &RunConfig, force: bool) -> Result<String> {
    match command {
        Command::PhantomGen => cmd_phantom_gen(cfg, force),
        Command::Sdt => {
            let dir = cfg
                .case_dir
                .as_ref()
                .ok_or_else(|| Error::Config("sdt needs case_dir".into()))?;
            cmd_sdt(dir)
        }
        Command::Train => cmd_train(cfg),
        Command::Eval => cmd_eval(cfg),
    }
}

const MASK_FILES: [&str; 6] = ["gtv", "lns", "lung", "heart", "spinal_canal", "ctv"];

fn case_dir_name(index: usize) -> String {
    format!("case_{index:03}")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn is_owned_entry(name: &str) -> bool {
    name == "manifest.csv" || (name.starts_with("case_") && name[5..].bytes().all(|b| b.is_ascii_digit()))
}

/// Prepares the cohort directory: refuses to touch a non-empty one unless
/// `force`, which clears the manifest and `case_NNN` entries.
fn prepare_cohort_dir(dir: &Path, force: bool) -> Result<()> {
    if let Ok(entries) = fs::read_dir(dir) {
        let entries: Vec<_> = entries.collect::<std::io::Result<_>>().map_err(|e| Error::io(dir, e))?;
        if !entries.is_empty() {
            if !force {
                return Err(Error::OutputNotEmpty(dir.to_path_buf()));
            }
            for e in entries {
                let name = e.file_name().to_string_lossy().into_owned();
                if !is_owned_entry(&name) {
                    continue;
                }
                let p = e.path();
                let r = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
                r.map_err(|err| Error::io(&p, err))?;
            }
        }
    }
    create_dir(dir)
}

fn write_case(dir: &Path, case: &PhantomCase) -> Result<Vec<String>> {
    create_dir(dir)?;
    write_volume(&case.ct, dir.join("ct.svox"))?;
    let masks = [&case.gtv, &case.lns, &case.lung, &case.heart, &case.spinal_canal, &case.ctv_truth];
    for (name, m) in MASK_FILES.iter().zip(masks) {
        write_mask(m, dir.join(format!("{name}.svox")))?;
    }
    Ok(std::iter::once("ct".to_string())
        .chain(MASK_FILES.iter().map(|s| s.to_string()))
        .map(|n| format!("{n}.svox"))
        .collect())
}

pub fn cmd_phantom_gen(cfg: &RunConfig, force: bool) -> Result<String> {
    use rayon::prelude::*;
    if cfg.n_cases == 0 {
        return Err(Error::EmptyCohort);
    }
    cfg.phantom.validate()?;
    let root = &cfg.cohort_dir;
    prepare_cohort_dir(root, force)?;
    let rows = (0..cfg.n_cases)
        .into_par_iter()
        .map(|i| {
            let case = generate_case(&cfg.phantom, i)?;
            let sub = case_dir_name(i);
            let files = write_case(&root.join(&sub), &case)?;
            let paths: Vec<String> = files.iter().map(|f| format!("{sub}/{f}")).collect();
            Ok(format!("{},{},{}\n", case.case_id, case.seed, paths.join(";")))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = String::from("case_id,seed,paths\n") + &rows.concat();
    write_text(&root.join("manifest.csv"), &manifest)?;
    Ok(format!("wrote {} cases to {}", cfg.n_cases, root.display()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub case_id: String,
    pub seed: u64,
    pub paths: Vec<String>,
}

pub fn read_manifest(cohort_dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = cohort_dir.join("manifest.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("case_id,seed,paths") {
        return Err(Error::Parse(format!("{}: bad header", path.display())));
    }
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut f = l.splitn(3, ',');
            let bad = || Error::Parse(format!("{}: bad row '{l}'", path.display()));
            let case_id = f.next().ok_or_else(bad)?.to_string();
            let seed = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let paths = f.next().ok_or_else(bad)?.split(';').map(str::to_string).collect();
            Ok(ManifestRow { case_id, seed, paths })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyCohort);
    }
    Ok(rows)
}

/// Reads one case back from its directory.
pub fn load_case(dir: &Path, case_id: &str, seed: u64) -> Result<PhantomCase> {
    let m = |name: &str| read_mask(dir.join(format!("{name}.svox")));
    Ok(PhantomCase {
        case_id: case_id.to_string(),
        seed,
        ct: read_volume(dir.join("ct.svox"))?,
        gtv: m("gtv")?,
        lns: m("lns")?,
        lung: m("lung")?,
        heart: m("heart")?,
        spinal_canal: m("spinal_canal")?,
        ctv_truth: m("ctv")?,
    })
}

/// Loads every case of the manifest, in manifest order.
pub fn load_cohort(cohort_dir: &Path) -> Result<Vec<PhantomCase>> {
    use rayon::prelude::*;
    read_manifest(cohort_dir)?
        .par_iter()
        .map(|r| {
            let sub = r
                .paths
                .first()
                .and_then(|p| Path::new(p).parent())
                .ok_or_else(|| Error::Parse(format!("no paths for {}", r.case_id)))?;
            load_case(&cohort_dir.join(sub), &r.case_id, r.seed)
        })
        .collect()
}

/// Writes `sdt/gtv_ln.svox` plus one file per organ into `case_dir`.
pub fn cmd_sdt(case_dir: &Path) -> Result<String> {
    let m = |name: &str| read_mask(case_dir.join(format!("{name}.svox")));
    let (gtv, lns) = (m("gtv")?, m("lns")?);
    let organs = Organ::ALL
        .iter()
        .map(|o| Ok((*o, m(o.name())?)))
        .collect::<Result<Vec<_>>>()?;
    let out = case_dir.join("sdt");
    create_dir(&out)?;
    write_volume(combined_gtv_ln_sdt(&gtv, &lns)?.grid(), out.join("gtv_ln.svox"))?;
    for (o, mask) in &organs {
        write_volume(signed_distance(mask)?.grid(), out.join(format!("{}.svox", o.name())))?;
    }
    Ok(format!("wrote {} SDT files to {}", organs.len() + 1, out.display()))
}

pub fn checkpoint_path(cfg: &RunConfig, fold: usize) -> PathBuf {
    cfg.checkpoint_dir.join(format!("fold{fold}.ckpt"))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let cases = load_cohort(&cfg.cohort_dir)?;
    if cases.len() < cfg.folds {
        return Err(Error::Config(format!("{} cases cannot form {} folds", cases.len(), cfg.folds)));
    }
    let d = cases[0].dims().as_array();
    let div = cfg.train.descriptor().divisor();
    if d.iter().any(|&n| n % div != 0) {
        return Err(Error::NotDivisible(d, div));
    }
    create_dir(&cfg.checkpoint_dir)?;
    write_text(&cfg.checkpoint_dir.join("run.cfg"), &cfg.to_text())?;
    let mut summary = String::new();
    for k in 0..cfg.folds {
        let out = train_fold(&cases, k, cfg.folds, &cfg.train)?;
        save_checkpoint(&out.params, checkpoint_path(cfg, k))?;
        write_text(&cfg.checkpoint_dir.join(format!("fold{k}_log.csv")), &log_csv(&out.log))?;
        let (first, last) = (out.log.first(), out.log.last());
        if let (Some(a), Some(b)) = (first, last) {
            let _ = write!(
                summary,
                "fold {k}: loss {:.4} -> {:.4}; ",
                a.mean_loss, b.mean_loss
            );
        }
    }
    Ok(format!("{}checkpoints in {}", summary, cfg.checkpoint_dir.display()))
}

pub fn load_fold_models(cfg: &RunConfig) -> Result<Vec<PhnnParams<f32>>> {
    (0..cfg.folds).map(|k| load_checkpoint(checkpoint_path(cfg, k))).collect()
}

/// Writes `metrics.csv`, `hist_dice.csv` and `hist_asd.csv` into `dir`.
pub fn write_eval_outputs(report: &MetricsReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    report.write_csv(dir.join("metrics.csv"))?;
    for metric in [HistMetric::Dice, HistMetric::Asd] {
        let table = cumulative_histogram(&report.rows, metric, &metric.default_thresholds())?;
        write_text(&dir.join(format!("hist_{}.csv", metric.name())), &table.to_csv())?;
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let cases = load_cohort(&cfg.cohort_dir)?;
    let models = load_fold_models(cfg)?;
    let report = evaluate_folds(&cases, &models, cfg.train.layout, cfg.oar_source, &cfg.eval)?;
    write_eval_outputs(&report, &cfg.output_dir)?;
    let (dice, asd) = (report.dice(), report.asd());
    Ok(format!(
        "{} cases ({} oar): dice {:.4} +/- {:.4}, asd {:.3} mm; results in {}",
        report.rows.len(),
        cfg.oar_source.name(),
        dice.mean,
        dice.std,
        asd.mean,
        cfg.output_dir.display()
    ))
}

/// Single-line rendering of an error for stderr.
pub fn error_line(e: &Error) -> String {
    e.to_string().replace(['\n', '\r'], " ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn owned_entries() {
        assert!(is_owned_entry("manifest.csv"));
        assert!(is_owned_entry("case_012"));
        assert!(!is_owned_entry("case_x"));
        assert!(!is_owned_entry("notes.txt"));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "seed = 3\nsetup = ct\ncohort_dir = data\n").unwrap();
        let cli = Cli::parse_from([
            "ctvforge",
            "train",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "--setup",
            "ct_all_sdt",
            "--set",
            "epochs=2",
        ]);
        assert_eq!(cli.command, Command::Train);
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.layout, crate::pipeline::ChannelLayout::CtAllSdt);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.cohort_dir, dir.path().join("data"));
    }

    #[test]
    fn manifest_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.csv"), "id,seed\n").unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Parse(_))));
        fs::write(dir.path().join("manifest.csv"), "case_id,seed,paths\n").unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::EmptyCohort)));
    }
}
