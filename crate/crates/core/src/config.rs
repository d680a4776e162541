//! Run configuration: `key = value` text merged over defaults, then over
//! command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::EvalConfig;
use crate::net::WeightDecay;
use crate::phantom::PhantomConfig;
use crate::pipeline::{ChannelLayout, OarSource};
use crate::train::TrainConfig;
use crate::voxgrid::{Dims, Spacing};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cohort_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Case directory read by `sdt`.
    pub case_dir: Option<PathBuf>,
    pub seed: u64,
    pub n_cases: usize,
    pub folds: usize,
    pub oar_source: OarSource,
    pub phantom: PhantomConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cohort_dir: PathBuf::from("cohort"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            output_dir: PathBuf::from("results"),
            case_dir: None,
            seed: 0,
            n_cases: 30,
            folds: 3,
            oar_source: OarSource::Manual,
            phantom: PhantomConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Keys accepted in config files and `--set`.
pub const KEYS: &[&str] = &[
    "cohort_dir",
    "checkpoint_dir",
    "output_dir",
    "case_dir",
    "seed",
    "n_cases",
    "folds",
    "setup",
    "channel_layout",
    "oar_source",
    "dims",
    "spacing",
    "margin_xy",
    "margin_z",
    "oar_penetration",
    "ln_count_min",
    "ln_count_max",
    "noise_sigma",
    "jitter_halfwidth_mm",
    "rotation_deg",
    "n_pos",
    "n_neg",
    "voi_size",
    "sdt_clamp_mm",
    "ct_clamp",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "weight_decay",
    "weight_decay_mode",
    "block_channels",
    "block_convs",
    "window",
    "stride",
    "threshold",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn parse_triple<T: FromStr + Copy>(key: &str, v: &str) -> Result<[T; 3]> {
    let items: Vec<T> = parse_list(key, v)?;
    match items.as_slice() {
        &[a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Config(format!("{key} needs three comma-separated values"))),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "cohort_dir" => self.cohort_dir = v.into(),
            "checkpoint_dir" => self.checkpoint_dir = v.into(),
            "output_dir" => self.output_dir = v.into(),
            "case_dir" => self.case_dir = Some(v.into()),
            "seed" => {
                self.seed = parse(key, v)?;
                self.phantom.seed = self.seed;
                self.train.seed = self.seed;
            }
            "n_cases" => self.n_cases = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "setup" | "channel_layout" => self.train.layout = ChannelLayout::from_str(v)?,
            "oar_source" => self.oar_source = OarSource::from_str(v)?,
            "dims" => {
                let [nx, ny, nz] = parse_triple(key, v)?;
                self.phantom.dims = Dims::new(nx, ny, nz)?;
            }
            "spacing" => {
                let [dx, dy, dz] = parse_triple(key, v)?;
                self.phantom.spacing = Spacing::new(dx, dy, dz)?;
            }
            "margin_xy" => self.phantom.margin_xy = parse(key, v)?,
            "margin_z" => self.phantom.margin_z = parse(key, v)?,
            "oar_penetration" => self.phantom.oar_penetration = parse(key, v)?,
            "ln_count_min" => self.phantom.ln_count_range.0 = parse(key, v)?,
            "ln_count_max" => self.phantom.ln_count_range.1 = parse(key, v)?,
            "noise_sigma" => self.phantom.noise_sigma = parse(key, v)?,
            "jitter_halfwidth_mm" => self.train.policy.jitter_halfwidth_mm = parse(key, v)?,
            "rotation_deg" => self.train.policy.rotation_deg = parse(key, v)?,
            "n_pos" => self.train.n_pos = parse(key, v)?,
            "n_neg" => self.train.n_neg = parse(key, v)?,
            "voi_size" => self.train.voi_size = parse_triple(key, v)?,
            "sdt_clamp_mm" => {
                self.train.norm.sdt_clamp_mm = parse(key, v)?;
                self.eval.norm.sdt_clamp_mm = self.train.norm.sdt_clamp_mm;
            }
            "ct_clamp" => {
                self.train.norm.ct_clamp = parse(key, v)?;
                self.eval.norm.ct_clamp = self.train.norm.ct_clamp;
            }
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.adam.lr = parse(key, v)?,
            "beta1" => self.train.adam.beta1 = parse(key, v)?,
            "beta2" => self.train.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam.eps = parse(key, v)?,
            "weight_decay" => self.train.adam.weight_decay = parse(key, v)?,
            "weight_decay_mode" => self.train.adam.decay = WeightDecay::from_str(v)?,
            "block_channels" => self.train.block_channels = parse_list(key, v)?,
            "block_convs" => self.train.block_convs = parse_list(key, v)?,
            "window" => self.eval.window = parse_triple(key, v)?,
            "stride" => self.eval.stride = parse_triple(key, v)?,
            "threshold" => self.eval.threshold = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses config text over the defaults. Blank lines and `#` comments
    /// are skipped; later lines win.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    /// Reads `path`; relative directories in the file resolve against the
    /// file's own directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for dir in [&mut cfg.cohort_dir, &mut cfg.checkpoint_dir, &mut cfg.output_dir] {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        if let Some(d) = cfg.case_dir.as_mut().filter(|d| d.is_relative()) {
            *d = base.join(&*d);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.train.validate()?;
        if self.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        let div = self.train.descriptor().divisor();
        if self.eval.window.iter().any(|&w| w == 0 || w % div != 0) {
            return Err(Error::NotDivisible(self.eval.window, div));
        }
        if (0..3).any(|a| self.eval.stride[a] == 0 || self.eval.stride[a] > self.eval.window[a]) {
            return Err(Error::Config("stride must be in 1..=window per axis".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let t = &self.train;
        let p = &self.phantom;
        let mut lines = vec![
            format!("cohort_dir = {}", self.cohort_dir.display()),
            format!("checkpoint_dir = {}", self.checkpoint_dir.display()),
            format!("output_dir = {}", self.output_dir.display()),
        ];
        if let Some(d) = &self.case_dir {
            lines.push(format!("case_dir = {}", d.display()));
        }
        lines.extend([
            format!("seed = {}", self.seed),
            format!("n_cases = {}", self.n_cases),
            format!("folds = {}", self.folds),
            format!("setup = {}", t.layout.name()),
            format!("oar_source = {}", self.oar_source.name()),
            format!("dims = {},{},{}", p.dims.nx, p.dims.ny, p.dims.nz),
            format!("spacing = {},{},{}", p.spacing.dx, p.spacing.dy, p.spacing.dz),
            format!("margin_xy = {}", p.margin_xy),
            format!("margin_z = {}", p.margin_z),
            format!("oar_penetration = {}", p.oar_penetration),
            format!("ln_count_min = {}", p.ln_count_range.0),
            format!("ln_count_max = {}", p.ln_count_range.1),
            format!("noise_sigma = {}", p.noise_sigma),
            format!("jitter_halfwidth_mm = {}", t.policy.jitter_halfwidth_mm),
            format!("rotation_deg = {}", t.policy.rotation_deg),
            format!("n_pos = {}", t.n_pos),
            format!("n_neg = {}", t.n_neg),
            format!("voi_size = {}", join(&t.voi_size)),
            format!("sdt_clamp_mm = {}", t.norm.sdt_clamp_mm),
            format!("ct_clamp = {}", t.norm.ct_clamp),
            format!("epochs = {}", t.epochs),
            format!("batch_size = {}", t.batch_size),
            format!("lr = {}", t.adam.lr),
            format!("beta1 = {}", t.adam.beta1),
            format!("beta2 = {}", t.adam.beta2),
            format!("adam_eps = {}", t.adam.eps),
            format!("weight_decay = {}", t.adam.weight_decay),
            format!("weight_decay_mode = {}", t.adam.decay.name()),
            format!("block_channels = {}", join(&t.block_channels)),
            format!("block_convs = {}", join(&t.block_convs)),
            format!("window = {}", join(&self.eval.window)),
            format!("stride = {}", join(&self.eval.stride)),
            format!("threshold = {}", self.eval.threshold),
        ]);
        lines.join("\n") + "\n"
    }
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("invalid config: ").map(str::to_string).unwrap_or(s)
}
