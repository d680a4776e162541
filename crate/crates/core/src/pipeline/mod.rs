//! Context-channel assembly, normalization, augmentation and VOI sampling.

pub mod augment;
pub mod sampling;

use crate::error::{Error, Result};
use crate::net::Tensor;
use crate::phantom::{auto_oar, mix_seed, Organ, PhantomCase};
use crate::sdt::{signed_distance, SignedDistanceVolume};
use crate::voxgrid::{MaskVolume, VolumeGrid};

pub use augment::{
    choose_sdt_source, jitter_components, rotate_mask_xy, rotate_volume_xy, AugmentPolicy, GtvLnSource, OarSource,
    SdtSource, SourceMode, MAX_ROTATION_DEG,
};
pub use sampling::{crop_into, sample_vois, VoiLabel, VoiSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Ct,
    GtvLnMask,
    GtvLnSdt,
    LungSdt,
    HeartSdt,
    CanalSdt,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Ct => "ct",
            ChannelKind::GtvLnMask => "gtvln_mask",
            ChannelKind::GtvLnSdt => "gtvln_sdt",
            ChannelKind::LungSdt => "lung_sdt",
            ChannelKind::HeartSdt => "heart_sdt",
            ChannelKind::CanalSdt => "canal_sdt",
        }
    }

    fn organ(self) -> Option<Organ> {
        match self {
            ChannelKind::LungSdt => Some(Organ::Lung),
            ChannelKind::HeartSdt => Some(Organ::Heart),
            ChannelKind::CanalSdt => Some(Organ::SpinalCanal),
            _ => None,
        }
    }

    fn organ_channel(organ: Organ) -> Self {
        match organ {
            Organ::Lung => ChannelKind::LungSdt,
            Organ::Heart => ChannelKind::HeartSdt,
            Organ::SpinalCanal => ChannelKind::CanalSdt,
        }
    }
}

/// The four input setups, each with a frozen channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelLayout {
    Ct,
    CtMask,
    CtGtvLnSdt,
    CtAllSdt,
}

impl ChannelLayout {
    pub const ALL: [ChannelLayout; 4] = [
        ChannelLayout::Ct,
        ChannelLayout::CtMask,
        ChannelLayout::CtGtvLnSdt,
        ChannelLayout::CtAllSdt,
    ];

    pub fn channels(self) -> &'static [ChannelKind] {
        use ChannelKind::*;
        match self {
            ChannelLayout::Ct => &[Ct],
            ChannelLayout::CtMask => &[Ct, GtvLnMask],
            ChannelLayout::CtGtvLnSdt => &[Ct, GtvLnSdt],
            ChannelLayout::CtAllSdt => &[Ct, GtvLnSdt, LungSdt, HeartSdt, CanalSdt],
        }
    }

    pub fn count(self) -> usize {
        self.channels().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelLayout::Ct => "ct",
            ChannelLayout::CtMask => "ct_mask",
            ChannelLayout::CtGtvLnSdt => "ct_gtvln_sdt",
            ChannelLayout::CtAllSdt => "ct_all_sdt",
        }
    }

    /// FNV-1a over the comma-joined channel names.
    pub fn checksum(self) -> u32 {
        let names: Vec<&str> = self.channels().iter().map(|c| c.name()).collect();
        layout_checksum(&names)
    }

    pub fn uses_oars(self) -> bool {
        self.channels().iter().any(|c| c.organ().is_some())
    }
}

impl std::str::FromStr for ChannelLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChannelLayout::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown channel layout {s:?} (ct|ct_mask|ct_gtvln_sdt|ct_all_sdt)")))
    }
}

pub fn layout_checksum(names: &[&str]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in names.join(",").bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    /// CT is clamped to `[-ct_clamp, ct_clamp]` HU and divided by it.
    pub ct_clamp: f32,
    /// SDTs are clamped to `[-sdt_clamp_mm, sdt_clamp_mm]` and divided by it.
    pub sdt_clamp_mm: f32,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            ct_clamp: 1000.0,
            sdt_clamp_mm: 100.0,
        }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if !(self.ct_clamp > 0.0 && self.sdt_clamp_mm > 0.0 && self.ct_clamp.is_finite() && self.sdt_clamp_mm.is_finite()) {
            return Err(Error::Config("ct_clamp and sdt_clamp_mm must be finite and > 0".into()));
        }
        Ok(())
    }

    pub fn ct(&self, ct: &VolumeGrid) -> VolumeGrid {
        let c = self.ct_clamp;
        ct.map(|v| v.clamp(-c, c) / c)
    }

    pub fn sdt(&self, sdt: &SignedDistanceVolume) -> VolumeGrid {
        let c = self.sdt_clamp_mm;
        sdt.grid().map(|v| v.clamp(-c, c) / c)
    }
}

/// Clamp to [-1000, 1000] HU and scale to [-1, 1].
pub fn normalize_ct(ct: &VolumeGrid) -> VolumeGrid {
    Normalization::default().ct(ct)
}

/// Clamp to [-100, 100] mm and scale to [-1, 1].
pub fn normalize_sdt(sdt: &SignedDistanceVolume) -> VolumeGrid {
    Normalization::default().sdt(sdt)
}

/// Ordered, normalized input channels of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextStack {
    pub layout: ChannelLayout,
    /// Checksum of the channel order, compared against the model's at inference.
    pub checksum: u32,
    pub channels: Vec<VolumeGrid>,
}

impl ContextStack {
    pub fn new(layout: ChannelLayout, channels: Vec<VolumeGrid>) -> Result<Self> {
        if channels.len() != layout.count() {
            return Err(Error::Shape(format!(
                "layout {} needs {} channels, got {}",
                layout.name(),
                layout.count(),
                channels.len()
            )));
        }
        let d = channels[0].dims();
        if channels.iter().any(|c| c.dims() != d) {
            return Err(Error::DimMismatch("stack channels differ in dims".into()));
        }
        Ok(Self {
            layout,
            checksum: layout.checksum(),
            channels,
        })
    }

    pub fn dims(&self) -> crate::voxgrid::Dims {
        self.channels[0].dims()
    }

    pub fn check_layout(&self, model_checksum: u32) -> Result<()> {
        if self.checksum != model_checksum {
            return Err(Error::LayoutMismatch {
                stack: self.checksum,
                model: model_checksum,
            });
        }
        Ok(())
    }

    /// Whole volume as a `(1, C, nx, ny, nz)` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let d = self.dims();
        let mut data = Vec::with_capacity(d.len() * self.channels.len());
        for c in &self.channels {
            data.extend_from_slice(c.data());
        }
        Tensor::from_vec([1, self.channels.len(), d.nx, d.ny, d.nz], data).expect("stack shape")
    }

    /// Appends the channels of one VOI (channel-major, x-fastest) to `out`.
    pub fn crop_append(&self, voi: &VoiSpec, out: &mut Vec<f32>) {
        let n: usize = voi.size.iter().product();
        for c in &self.channels {
            let start = out.len();
            out.resize(start + n, 0.0);
            crop_into(c.data(), c.dims(), voi, &mut out[start..]);
        }
    }

    pub fn rotate_xy(&self, angle_deg: f64) -> Result<Self> {
        Ok(Self {
            layout: self.layout,
            checksum: self.checksum,
            channels: self
                .channels
                .iter()
                .map(|c| rotate_volume_xy(c, angle_deg))
                .collect::<Result<_>>()?,
        })
    }
}

/// Tumor-and-node mask from the chosen source: the clean union or a jittered copy.
pub fn gtv_ln_mask(case: &PhantomCase, source: GtvLnSource, halfwidth_mm: f64, seed: u64) -> Result<MaskVolume> {
    let clean = case.gtv_ln();
    match source {
        GtvLnSource::Clean => Ok(clean),
        GtvLnSource::Jittered => {
            if clean.is_empty() {
                return Ok(clean);
            }
            let j = jitter_components(&clean, halfwidth_mm, mix_seed(seed, 0x4a49_5454))?;
            Ok(if j.is_empty() { clean } else { j })
        }
    }
}

fn organ_mask(case: &PhantomCase, organ: Organ, source: OarSource) -> Result<MaskVolume> {
    match source {
        OarSource::Manual => Ok(case.oar(organ).clone()),
        OarSource::Auto => auto_oar(case, organ),
    }
}

fn sdt_channel(mask: &MaskVolume, kind: ChannelKind, norm: &Normalization) -> Result<VolumeGrid> {
    match signed_distance(mask) {
        Ok(s) => Ok(norm.sdt(&s)),
        Err(Error::EmptyObject) => Err(Error::MissingChannel(kind.name())),
        Err(e) => Err(e),
    }
}

/// Normalized organ SDT channels of one case for both organ sources. They do
/// not depend on the augmentation seed, so training computes them once.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganChannels {
    manual: Vec<VolumeGrid>,
    auto: Vec<VolumeGrid>,
}

impl OrganChannels {
    pub fn new(case: &PhantomCase, norm: &Normalization) -> Result<Self> {
        let build = |source| {
            Organ::ALL
                .iter()
                .map(|&o| sdt_channel(&organ_mask(case, o, source)?, ChannelKind::organ_channel(o), norm))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            manual: build(OarSource::Manual)?,
            auto: build(OarSource::Auto)?,
        })
    }

    pub fn get(&self, organ: Organ, source: OarSource) -> &VolumeGrid {
        let k = Organ::ALL.iter().position(|&o| o == organ).expect("known organ");
        match source {
            OarSource::Manual => &self.manual[k],
            OarSource::Auto => &self.auto[k],
        }
    }
}

/// Builds the channels of `layout` from explicit sources.
pub fn assemble_with_source(
    case: &PhantomCase,
    layout: ChannelLayout,
    source: SdtSource,
    policy: &AugmentPolicy,
    norm: &Normalization,
    seed: u64,
) -> Result<ContextStack> {
    build_stack(case, None, layout, source, policy, norm, seed)
}

fn build_stack(
    case: &PhantomCase,
    organs: Option<&OrganChannels>,
    layout: ChannelLayout,
    source: SdtSource,
    policy: &AugmentPolicy,
    norm: &Normalization,
    seed: u64,
) -> Result<ContextStack> {
    let tumor = match layout {
        ChannelLayout::Ct => None,
        _ => Some(gtv_ln_mask(case, source.gtv_ln, policy.jitter_halfwidth_mm, seed)?),
    };
    let mut channels = Vec::with_capacity(layout.count());
    for &kind in layout.channels() {
        let ch = match kind {
            ChannelKind::Ct => norm.ct(&case.ct),
            ChannelKind::GtvLnMask => {
                let t = tumor.as_ref().expect("tumor mask for mask layout");
                if t.is_empty() {
                    return Err(Error::MissingChannel(kind.name()));
                }
                t.to_volume()
            }
            ChannelKind::GtvLnSdt => sdt_channel(tumor.as_ref().expect("tumor mask for sdt layout"), kind, norm)?,
            k => {
                let organ = k.organ().expect("organ channel");
                match organs {
                    Some(cache) => cache.get(organ, source.oar).clone(),
                    None => sdt_channel(&organ_mask(case, organ, source.oar)?, k, norm)?,
                }
            }
        };
        channels.push(ch);
    }
    ContextStack::new(layout, channels)
}

/// Chooses the SDT source from `policy` and `seed`, then builds the stack.
pub fn assemble_stack(
    case: &PhantomCase,
    layout: ChannelLayout,
    policy: &AugmentPolicy,
    norm: &Normalization,
    seed: u64,
) -> Result<ContextStack> {
    let source = choose_sdt_source(policy, seed);
    assemble_with_source(case, layout, source, policy, norm, seed)
}

/// One augmented training view of a case: source choice, jitter, SDTs,
/// then a shared in-plane rotation of the stack and the target mask.
pub fn augmented_view(
    case: &PhantomCase,
    layout: ChannelLayout,
    policy: &AugmentPolicy,
    norm: &Normalization,
    seed: u64,
) -> Result<(ContextStack, MaskVolume)> {
    augmented_view_with(case, None, layout, policy, norm, seed)
}

/// [`augmented_view`] reading organ channels from `organs` when given.
pub fn augmented_view_with(
    case: &PhantomCase,
    organs: Option<&OrganChannels>,
    layout: ChannelLayout,
    policy: &AugmentPolicy,
    norm: &Normalization,
    seed: u64,
) -> Result<(ContextStack, MaskVolume)> {
    let source = choose_sdt_source(policy, seed);
    let stack = build_stack(case, organs, layout, source, policy, norm, seed)?;
    let angle = policy.draw_rotation(mix_seed(seed, 0x524f_5441));
    let label = rotate_mask_xy(&case.ctv_truth, angle)?;
    Ok((stack.rotate_xy(angle)?, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_case, PhantomConfig};
    use crate::sdt::combined_gtv_ln_sdt;
    use crate::voxgrid::{Dims, TARGET_SPACING};

    fn small_case(ln: (usize, usize)) -> PhantomCase {
        let cfg = PhantomConfig {
            dims: Dims::new(48, 48, 32).unwrap(),
            ln_count_range: ln,
            ..Default::default()
        };
        generate_case(&cfg, 0).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let d = Dims::new(3, 1, 1).unwrap();
        let ct = VolumeGrid::new(d, TARGET_SPACING, vec![0.0, -1400.0, 500.0]).unwrap();
        assert_eq!(normalize_ct(&ct).data(), &[0.0, -1.0, 0.5]);
        let d = Dims::new(4, 1, 1).unwrap();
        let sdt = SignedDistanceVolume::from_grid(VolumeGrid::new(d, TARGET_SPACING, vec![0.0, 250.0, -30.0, -130.0]).unwrap());
        let s = normalize_sdt(&sdt);
        assert_eq!(s.get(0, 0, 0), 0.0);
        assert_eq!(s.get(1, 0, 0), 1.0);
        assert!((s.get(2, 0, 0) + 0.3).abs() < 1e-7);
        assert_eq!(s.get(3, 0, 0), -1.0);
    }

    #[test]
    fn layouts_and_checksums() {
        let counts: Vec<usize> = ChannelLayout::ALL.iter().map(|l| l.count()).collect();
        assert_eq!(counts, vec![1, 2, 2, 5]);
        let sums: std::collections::HashSet<u32> = ChannelLayout::ALL.iter().map(|l| l.checksum()).collect();
        assert_eq!(sums.len(), 4);
        assert_ne!(
            layout_checksum(&["ct", "gtvln_sdt", "heart_sdt", "lung_sdt", "canal_sdt"]),
            ChannelLayout::CtAllSdt.checksum()
        );
        for l in ChannelLayout::ALL {
            assert_eq!(l.name().parse::<ChannelLayout>().unwrap(), l);
        }
        assert!("ct_sdt".parse::<ChannelLayout>().is_err());
    }

    #[test]
    fn ct_layout_is_normalized_ct() {
        let c = small_case((0, 2));
        let s = assemble_stack(&c, ChannelLayout::Ct, &AugmentPolicy::eval(OarSource::Manual), &Normalization::default(), 1).unwrap();
        assert_eq!(s.channels, vec![normalize_ct(&c.ct)]);
    }

    #[test]
    fn clean_manual_full_stack() {
        let c = small_case((2, 2));
        let p = AugmentPolicy::eval(OarSource::Manual);
        let n = Normalization::default();
        let s = assemble_stack(&c, ChannelLayout::CtAllSdt, &p, &n, 5).unwrap();
        assert_eq!(s.channels[1], normalize_sdt(&combined_gtv_ln_sdt(&c.gtv, &c.lns).unwrap()));
        assert_eq!(s.channels[2], normalize_sdt(&signed_distance(&c.lung).unwrap()));
        assert_eq!(s, assemble_stack(&c, ChannelLayout::CtAllSdt, &p, &n, 77).unwrap());
        for ch in &s.channels {
            assert!(ch.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn no_nodes_gives_gtv_sdt() {
        let c = small_case((0, 0));
        assert!(c.lns.is_empty());
        let s = assemble_stack(&c, ChannelLayout::CtAllSdt, &AugmentPolicy::eval(OarSource::Manual), &Normalization::default(), 0).unwrap();
        assert_eq!(s.channels[1], normalize_sdt(&signed_distance(&c.gtv).unwrap()));
    }

    #[test]
    fn mask_channel_is_binary_union() {
        let c = small_case((1, 3));
        let s = assemble_stack(&c, ChannelLayout::CtMask, &AugmentPolicy::eval(OarSource::Manual), &Normalization::default(), 0).unwrap();
        assert_eq!(s.channels[1], c.gtv_ln().to_volume());
    }

    #[test]
    fn missing_organ_is_named() {
        let mut c = small_case((0, 0));
        c.heart = MaskVolume::empty(c.dims(), c.spacing());
        let err = assemble_stack(&c, ChannelLayout::CtAllSdt, &AugmentPolicy::eval(OarSource::Manual), &Normalization::default(), 0).unwrap_err();
        assert!(matches!(err, Error::MissingChannel("heart_sdt")));
        assert!(err.to_string().contains("heart_sdt"));
    }

    #[test]
    fn layout_mismatch_raises() {
        let c = small_case((0, 0));
        let s = assemble_stack(&c, ChannelLayout::CtGtvLnSdt, &AugmentPolicy::eval(OarSource::Manual), &Normalization::default(), 0).unwrap();
        assert!(s.check_layout(ChannelLayout::CtGtvLnSdt.checksum()).is_ok());
        assert!(matches!(s.check_layout(ChannelLayout::CtMask.checksum()), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn augmented_view_is_deterministic() {
        let c = small_case((1, 1));
        let p = AugmentPolicy::training();
        let n = Normalization::default();
        let a = augmented_view(&c, ChannelLayout::CtAllSdt, &p, &n, 11).unwrap();
        let b = augmented_view(&c, ChannelLayout::CtAllSdt, &p, &n, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.channels.len(), 5);
        assert!(!a.1.is_empty());
    }
}
