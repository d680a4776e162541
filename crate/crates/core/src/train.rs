//! Training loop: per epoch, every case gets a fresh augmented view, VOIs are
//! sampled from it, shuffled across cases and fed to Adam in mini-batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{phnn_forward, AdamConfig, AdamState, PhnnDescriptor, PhnnParams, SideInit, Tensor};
use crate::phantom::{mix_seed, PhantomCase};
use crate::pipeline::{augmented_view_with, sample_vois, OrganChannels, AugmentPolicy, ChannelLayout, ContextStack, Normalization, VoiSpec};
use crate::voxgrid::MaskVolume;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layout: ChannelLayout,
    pub policy: AugmentPolicy,
    pub norm: Normalization,
    pub n_pos: usize,
    pub n_neg: usize,
    pub voi_size: [usize; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub block_channels: Vec<usize>,
    pub block_convs: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layout: ChannelLayout::CtAllSdt,
            policy: AugmentPolicy::training(),
            norm: Normalization::default(),
            n_pos: crate::pipeline::sampling::DEFAULT_N_POS,
            n_neg: crate::pipeline::sampling::DEFAULT_N_NEG,
            voi_size: crate::pipeline::sampling::DEFAULT_VOI,
            epochs: 30,
            batch_size: 4,
            adam: AdamConfig {
                beta1: 0.9,
                ..AdamConfig::default()
            },
            block_channels: vec![8, 16, 32, 64],
            block_convs: vec![2, 2, 3, 3],
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Budget recipe for cross-validating a 30-case cohort on one CPU core:
    /// two positive and one negative VOI per case and epoch, and a shallower
    /// net with the same channel widths.
    pub fn ablation() -> Self {
        Self {
            n_pos: 2,
            n_neg: 1,
            block_convs: vec![1, 1, 2, 2],
            ..Self::default()
        }
    }

    pub fn descriptor(&self) -> PhnnDescriptor {
        PhnnDescriptor {
            in_channels: self.layout.count(),
            channels: self.block_channels.clone(),
            convs: self.block_convs.clone(),
            layout_checksum: self.layout.checksum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.norm.validate()?;
        let desc = self.descriptor();
        desc.validate()?;
        let div = desc.divisor();
        if self.voi_size.iter().any(|&v| v == 0 || v % div != 0) {
            return Err(Error::NotDivisible(self.voi_size, div));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.n_pos + self.n_neg == 0 {
            return Err(Error::Config("epochs, batch_size and n_pos + n_neg must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PhnnParams<f32>,
    pub log: Vec<EpochLog>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,mean_loss,lr\n");
    for r in log {
        s.push_str(&format!("{},{:.8},{}\n", r.epoch, r.mean_loss, r.lr));
    }
    s
}

/// Stable 64-bit key of a case id.
pub fn case_key(case_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in case_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct View {
    stack: ContextStack,
    label: MaskVolume,
    vois: Vec<VoiSpec>,
}

fn epoch_views(
    cases: &[&PhantomCase],
    organs: &[Option<OrganChannels>],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<View>> {
    cases
        .par_iter()
        .zip(organs)
        .map(|(case, organs)| {
            let key = mix_seed(mix_seed(cfg.seed, epoch as u64), case_key(&case.case_id));
            let (stack, label) = augmented_view_with(case, organs.as_ref(), cfg.layout, &cfg.policy, &cfg.norm, key)?;
            let vois = sample_vois(&label, cfg.n_pos, cfg.n_neg, cfg.voi_size, mix_seed(key, 0x564f_4953))
                .or_else(|e| match e {
                    // rotation can push a thin target out of view; fall back to the unrotated mask
                    Error::EmptyObject => sample_vois(&case.ctv_truth, cfg.n_pos, cfg.n_neg, cfg.voi_size, mix_seed(key, 0x564f_4953)),
                    e => Err(e),
                })?;
            Ok(View { stack, label, vois })
        })
        .collect()
}

/// Trains a fresh network on `cases`. Deterministic in `cfg.seed`.
pub fn train(cases: &[&PhantomCase], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(cases, cfg, |_| {})
}

pub fn train_with_progress(
    cases: &[&PhantomCase],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut params = PhnnParams::<f32>::init(cfg.descriptor(), mix_seed(cfg.seed, 0x494e_4954), SideInit::Zero)?;
    let mut opt = AdamState::new(cfg.adam, &params.tensors);
    let n_ch = cfg.layout.count();
    let [vx, vy, vz] = cfg.voi_size;
    let voxels = vx * vy * vz;
    let organs: Vec<Option<OrganChannels>> = cases
        .par_iter()
        .map(|c| {
            cfg.layout
                .uses_oars()
                .then(|| OrganChannels::new(c, &cfg.norm))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let views = epoch_views(cases, &organs, cfg, epoch)?;
        let mut order: Vec<(usize, usize)> = views
            .iter()
            .enumerate()
            .flat_map(|(c, v)| (0..v.vois.len()).map(move |k| (c, k)))
            .collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5348_0000 + epoch as u64)));
        let mut losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let mut input = Vec::with_capacity(batch.len() * n_ch * voxels);
            let mut target = vec![0u8; batch.len() * voxels];
            for (b, &(c, k)) in batch.iter().enumerate() {
                let view = &views[c];
                let voi = &view.vois[k];
                view.stack.crop_append(voi, &mut input);
                crate::pipeline::crop_into(
                    view.label.data(),
                    view.label.dims(),
                    voi,
                    &mut target[b * voxels..(b + 1) * voxels],
                );
            }
            let x = Tensor::from_vec([batch.len(), n_ch, vx, vy, vz], input)?;
            let target: Vec<f32> = target.iter().map(|&t| t as f32).collect();
            let mut f = phnn_forward(&params, x)?;
            let loss = f.dice_loss(&target)?;
            losses.push(f.tape.value(loss).data()[0] as f64);
            let grads = f.param_grads(loss)?;
            opt.step(&mut params.tensors, &grads)?;
        }
        let row = EpochLog {
            epoch,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            lr: cfg.adam.lr,
        };
        progress(&row);
        log.push(row);
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_case, PhantomConfig};
    use crate::voxgrid::Dims;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            layout: ChannelLayout::CtGtvLnSdt,
            n_pos: 3,
            n_neg: 1,
            voi_size: [16, 16, 8],
            epochs: 3,
            batch_size: 2,
            block_channels: vec![4, 4],
            block_convs: vec![1, 1],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_finite() {
        let pc = PhantomConfig {
            dims: Dims::new(48, 48, 32).unwrap(),
            ..Default::default()
        };
        let c = generate_case(&pc, 0).unwrap();
        let a = train(&[&c], &tiny_cfg()).unwrap();
        let b = train(&[&c], &tiny_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log.len(), 3);
        assert!(a.log.iter().all(|r| r.mean_loss.is_finite()));
        assert!(log_csv(&a.log).starts_with("epoch,mean_loss,lr\n1,"));
    }

    #[test]
    fn rejects_bad_voi() {
        let cfg = TrainConfig {
            voi_size: [16, 16, 7],
            ..tiny_cfg()
        };
        assert!(matches!(cfg.validate(), Err(Error::NotDivisible(..))));
    }
}
