//! Domain-specific augmentation: SDT source selection, per-component jitter
//! of the tumor and node masks, and in-plane rotation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::voxgrid::{Dims, MaskVolume, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GtvLnSource {
    Clean,
    Jittered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OarSource {
    Manual,
    Auto,
}

impl OarSource {
    pub fn name(self) -> &'static str {
        match self {
            OarSource::Manual => "manual",
            OarSource::Auto => "auto",
        }
    }
}

impl std::str::FromStr for OarSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manual" => Ok(OarSource::Manual),
            "auto" => Ok(OarSource::Auto),
            _ => Err(Error::Config(format!("unknown oar source {s:?} (manual|auto)"))),
        }
    }
}

/// Where the SDT channels of one training sample come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SdtSource {
    pub gtv_ln: GtvLnSource,
    pub oar: OarSource,
}

impl SdtSource {
    pub const CLEAN_MANUAL: SdtSource = SdtSource {
        gtv_ln: GtvLnSource::Clean,
        oar: OarSource::Manual,
    };

    pub const ALL: [SdtSource; 4] = [
        SdtSource::CLEAN_MANUAL,
        SdtSource {
            gtv_ln: GtvLnSource::Clean,
            oar: OarSource::Auto,
        },
        SdtSource {
            gtv_ln: GtvLnSource::Jittered,
            oar: OarSource::Manual,
        },
        SdtSource {
            gtv_ln: GtvLnSource::Jittered,
            oar: OarSource::Auto,
        },
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceMode {
    /// Uniform choice among the four combinations (training).
    Random,
    Fixed(SdtSource),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    /// Per-axis jitter draw is uniform in `[-h, h]` mm.
    pub jitter_halfwidth_mm: f64,
    /// Rotation draw is uniform in `[-r, r]` degrees.
    pub rotation_deg: f64,
    pub sources: SourceMode,
}

/// Largest in-plane rotation accepted by [`rotate_volume_xy`] and [`rotate_mask_xy`].
pub const MAX_ROTATION_DEG: f64 = 10.0;

impl AugmentPolicy {
    pub fn training() -> Self {
        Self {
            jitter_halfwidth_mm: 2.0,
            rotation_deg: MAX_ROTATION_DEG,
            sources: SourceMode::Random,
        }
    }

    /// No jitter, no rotation, fixed clean tumor masks and the given organ masks.
    pub fn eval(oar: OarSource) -> Self {
        Self {
            jitter_halfwidth_mm: 0.0,
            rotation_deg: 0.0,
            sources: SourceMode::Fixed(SdtSource {
                gtv_ln: GtvLnSource::Clean,
                oar,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_halfwidth_mm >= 0.0 && self.jitter_halfwidth_mm.is_finite()) {
            return Err(Error::Config("jitter_halfwidth_mm must be finite and >= 0".into()));
        }
        if !(0.0..=MAX_ROTATION_DEG).contains(&self.rotation_deg) {
            return Err(Error::RotationRange(self.rotation_deg, MAX_ROTATION_DEG));
        }
        Ok(())
    }

    pub fn draw_rotation(&self, seed: u64) -> f64 {
        if self.rotation_deg == 0.0 {
            return 0.0;
        }
        ChaCha8Rng::seed_from_u64(seed).random_range(-self.rotation_deg..=self.rotation_deg)
    }
}

pub fn choose_sdt_source(policy: &AugmentPolicy, epoch_seed: u64) -> SdtSource {
    match policy.sources {
        SourceMode::Fixed(s) => s,
        SourceMode::Random => SdtSource::ALL[ChaCha8Rng::seed_from_u64(epoch_seed).random_range(0..4)],
    }
}

/// 6-connected components as lists of linear voxel indices, ordered by their
/// first voxel.
pub fn connected_components(mask: &MaskVolume) -> Vec<Vec<usize>> {
    let d = mask.dims();
    let mut label = vec![false; d.len()];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..d.len() {
        if !mask.at(start) || label[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y, z) = d.coords(i);
            let mut visit = |j: usize| {
                if mask.at(j) && !label[j] {
                    label[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < d.nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - d.nx);
            }
            if y + 1 < d.ny {
                visit(i + d.nx);
            }
            if z > 0 {
                visit(i - d.nx * d.ny);
            }
            if z + 1 < d.nz {
                visit(i + d.nx * d.ny);
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Per-axis voxel shift of one draw in mm.
pub fn shift_voxels(shift_mm: [f64; 3], spacing: [f64; 3]) -> [i64; 3] {
    std::array::from_fn(|a| (shift_mm[a] / spacing[a]).round() as i64)
}

/// Moves every 6-connected component by its own uniform per-axis draw in
/// `[-halfwidth, halfwidth]` mm, rounded to whole voxels. Voxels leaving the
/// volume are dropped; overlapping components merge.
pub fn jitter_components(mask: &MaskVolume, halfwidth_mm: f64, seed: u64) -> Result<MaskVolume> {
    if mask.is_empty() {
        return Err(Error::EmptyObject);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<[f64; 3]> = connected_components(mask)
        .iter()
        .map(|_| {
            std::array::from_fn(|_| {
                if halfwidth_mm > 0.0 {
                    rng.random_range(-halfwidth_mm..=halfwidth_mm)
                } else {
                    0.0
                }
            })
        })
        .collect();
    shift_components(mask, &draws)
}

/// Translates component `k` (in [`connected_components`] order) by `shifts_mm[k]`.
pub fn shift_components(mask: &MaskVolume, shifts_mm: &[[f64; 3]]) -> Result<MaskVolume> {
    let d = mask.dims();
    let comps = connected_components(mask);
    if comps.len() != shifts_mm.len() {
        return Err(Error::Shape(format!("{} components, {} shifts", comps.len(), shifts_mm.len())));
    }
    let sp = mask.spacing().as_array();
    let mut out = MaskVolume::empty(d, mask.spacing());
    for (comp, &mm) in comps.iter().zip(shifts_mm) {
        let [sx, sy, sz] = shift_voxels(mm, sp);
        for &i in comp {
            let (x, y, z) = d.coords(i);
            let (nx, ny, nz) = (x as i64 + sx, y as i64 + sy, z as i64 + sz);
            if d.contains(nx, ny, nz) {
                out.set(nx as usize, ny as usize, nz as usize, true);
            }
        }
    }
    Ok(out)
}

fn check_angle(angle_deg: f64) -> Result<()> {
    if !(angle_deg.abs() <= MAX_ROTATION_DEG) {
        return Err(Error::RotationRange(angle_deg, MAX_ROTATION_DEG));
    }
    Ok(())
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// For every output `(x, y)` the continuous source index in the same slice.
/// Output point `p` samples the input at `c + R(angle) (p - c)` in millimeters,
/// with `c` the slice center.
fn source_coords(d: Dims, dx: f64, dy: f64, angle_deg: f64) -> Vec<(f64, f64)> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = ((d.nx - 1) as f64 * 0.5, (d.ny - 1) as f64 * 0.5);
    let mut out = Vec::with_capacity(d.nx * d.ny);
    for y in 0..d.ny {
        for x in 0..d.nx {
            let (u, v) = ((x as f64 - cx) * dx, (y as f64 - cy) * dy);
            let (su, sv) = (u * c - v * s, u * s + v * c);
            out.push((snap(cx + su / dx), snap(cy + sv / dy)));
        }
    }
    out
}

/// In-plane rotation about the slice center with bilinear interpolation
/// (edge values extend outward). `|angle_deg|` must not exceed 10.
pub fn rotate_volume_xy(vol: &VolumeGrid, angle_deg: f64) -> Result<VolumeGrid> {
    check_angle(angle_deg)?;
    rotate_volume_xy_unchecked(vol, angle_deg)
}

/// [`rotate_volume_xy`] without the angle guard.
pub fn rotate_volume_xy_unchecked(vol: &VolumeGrid, angle_deg: f64) -> Result<VolumeGrid> {
    if angle_deg == 0.0 {
        return Ok(vol.clone());
    }
    let d = vol.dims();
    let sp = vol.spacing();
    let coords = source_coords(d, sp.dx, sp.dy, angle_deg);
    let src = vol.data();
    let plane = d.nx * d.ny;
    let mut data = Vec::with_capacity(d.len());
    for z in 0..d.nz {
        let slice = &src[z * plane..(z + 1) * plane];
        for &(fx, fy) in &coords {
            let fx = fx.clamp(0.0, (d.nx - 1) as f64);
            let fy = fy.clamp(0.0, (d.ny - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(d.nx - 1), (y0 + 1).min(d.ny - 1));
            let (tx, ty) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
            let at = |x: usize, y: usize| slice[x + d.nx * y];
            let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
            let bot = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
            data.push(top * (1.0 - ty) + bot * ty);
        }
    }
    VolumeGrid::new(d, sp, data)
}

/// In-plane nearest-neighbor rotation of a mask; samples outside the volume are background.
pub fn rotate_mask_xy(mask: &MaskVolume, angle_deg: f64) -> Result<MaskVolume> {
    check_angle(angle_deg)?;
    rotate_mask_xy_unchecked(mask, angle_deg)
}

/// [`rotate_mask_xy`] without the angle guard.
pub fn rotate_mask_xy_unchecked(mask: &MaskVolume, angle_deg: f64) -> Result<MaskVolume> {
    if angle_deg == 0.0 {
        return Ok(mask.clone());
    }
    let d = mask.dims();
    let sp = mask.spacing();
    let coords = source_coords(d, sp.dx, sp.dy, angle_deg);
    let src = mask.data();
    let plane = d.nx * d.ny;
    let mut data = Vec::with_capacity(d.len());
    for z in 0..d.nz {
        for &(fx, fy) in &coords {
            let (x, y) = (fx.round() as i64, fy.round() as i64);
            let inside = d.contains(x, y, 0);
            data.push(if inside { src[z * plane + x as usize + d.nx * y as usize] } else { 0 });
        }
    }
    MaskVolume::new(d, sp, data)
}
