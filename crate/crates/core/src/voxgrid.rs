//! Volumes and masks on an anisotropic voxel grid.
//!
//! Data is stored x-fastest: `index = x + nx * (y + ny * z)`. The world origin
//! sits at the center of voxel (0, 0, 0), so the world position of voxel
//! `(i, j, k)` is `(i * dx, j * dy, k * dz)` in millimeters.

use crate::error::{Error, Result};

/// Target resampling resolution in millimeters.
pub const TARGET_SPACING: Spacing = Spacing {
    dx: 1.0,
    dy: 1.0,
    dz: 2.5,
};

/// Millimeters per voxel along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Spacing {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(dx) && ok(dy) && ok(dz) {
            Ok(Self { dx, dy, dz })
        } else {
            Err(Error::InvalidSpacing(dx, dy, dz))
        }
    }

    pub fn isotropic(d: f64) -> Result<Self> {
        Self::new(d, d, d)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn max_component(&self) -> f64 {
        self.dx.max(self.dy).max(self.dz)
    }
}

// Components are validated finite, so equality is reflexive.
impl Eq for Spacing {}

/// Grid extent in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidDims(nx, ny, nz));
        }
        Ok(Self { nx, ny, nz })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / (self.nx * self.ny);
        (x, y, z)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn contains(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.nx
            && (y as usize) < self.ny
            && (z as usize) < self.nz
    }
}

impl From<[usize; 3]> for Dims {
    fn from(d: [usize; 3]) -> Self {
        Self {
            nx: d[0],
            ny: d[1],
            nz: d[2],
        }
    }
}

/// Scalar field (CT intensities, signed distances, probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl VolumeGrid {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DataLength {
                expected: dims.len(),
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Self {
        Self {
            dims,
            spacing,
            data: vec![value; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    /// Applies `f` voxelwise, keeping geometry.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_grid(&self, other_dims: Dims) -> bool {
        self.dims == other_dims
    }
}

/// Binary field with values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<u8>,
}

impl MaskVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DataLength {
                expected: dims.len(),
                found: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinary(v));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Self {
        Self {
            dims,
            spacing,
            data: vec![0; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut data = vec![0u8; dims.len()];
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data[dims.index(x, y, z)] = f(x, y, z) as u8;
                }
            }
        }
        Self {
            dims,
            spacing,
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.dims.index(x, y, z)] != 0
    }

    #[inline]
    pub fn at(&self, i: usize) -> bool {
        self.data[i] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    fn check_same(&self, other: &MaskVolume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "{:?} vs {:?}",
                self.dims.as_array(),
                other.dims.as_array()
            )));
        }
        Ok(())
    }

    pub fn union(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.check_same(other)?;
        Ok(self.zip(other, |a, b| a | b))
    }

    pub fn intersection(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.check_same(other)?;
        Ok(self.zip(other, |a, b| a & b))
    }

    /// Voxels in `self` but not in `other`.
    pub fn difference(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.check_same(other)?;
        Ok(self.zip(other, |a, b| a & (1 - b)))
    }

    pub fn complement(&self) -> MaskVolume {
        MaskVolume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// True when every voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &MaskVolume) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    fn zip(&self, other: &MaskVolume, f: impl Fn(u8, u8) -> u8) -> MaskVolume {
        MaskVolume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn to_volume(&self) -> VolumeGrid {
        VolumeGrid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    /// Re-tags the same voxel data with a different spacing.
    pub fn with_spacing(&self, spacing: Spacing) -> MaskVolume {
        MaskVolume {
            dims: self.dims,
            spacing,
            data: self.data.clone(),
        }
    }
}

/// Continuous voxel index of a world point in millimeters.
pub fn world_to_index(p_mm: [f64; 3], spacing: Spacing) -> [f64; 3] {
    [p_mm[0] / spacing.dx, p_mm[1] / spacing.dy, p_mm[2] / spacing.dz]
}

pub fn index_to_world(idx: [f64; 3], spacing: Spacing) -> [f64; 3] {
    [idx[0] * spacing.dx, idx[1] * spacing.dy, idx[2] * spacing.dz]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

fn resampled_dims(dims: Dims, from: Spacing, to: Spacing) -> Dims {
    let axis = |n: usize, s: f64, t: f64| ((n as f64 * s / t + 0.5).floor() as usize).max(1);
    Dims {
        nx: axis(dims.nx, from.dx, to.dx),
        ny: axis(dims.ny, from.dy, to.dy),
        nz: axis(dims.nz, from.dz, to.dz),
    }
}

/// Nearest source index with ties resolved toward the lower index.
#[inline]
fn nearest_index(c: f64, n: usize) -> usize {
    let i = (c - 0.5).ceil();
    i.clamp(0.0, (n - 1) as f64) as usize
}

/// Samples a scalar field at a continuous index, clamping to edge values.
pub fn sample_trilinear(vol: &VolumeGrid, c: [f64; 3]) -> f32 {
    let d = vol.dims;
    let split = |v: f64, n: usize| -> (usize, usize, f64) {
        let max = (n - 1) as f64;
        let v = v.clamp(0.0, max);
        let i0 = v.floor();
        let i1 = (i0 + 1.0).min(max);
        (i0 as usize, i1 as usize, v - i0)
    };
    let (x0, x1, fx) = split(c[0], d.nx);
    let (y0, y1, fy) = split(c[1], d.ny);
    let (z0, z1, fz) = split(c[2], d.nz);
    let g = |x, y, z| vol.get(x, y, z) as f64;
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let c00 = lerp(g(x0, y0, z0), g(x1, y0, z0), fx);
    let c10 = lerp(g(x0, y1, z0), g(x1, y1, z0), fx);
    let c01 = lerp(g(x0, y0, z1), g(x1, y0, z1), fx);
    let c11 = lerp(g(x0, y1, z1), g(x1, y1, z1), fx);
    let c0 = lerp(c00, c10, fy);
    let c1 = lerp(c01, c11, fy);
    lerp(c0, c1, fz) as f32
}

/// Resamples a scalar volume to `target` spacing in world coordinates.
pub fn resample_volume(vol: &VolumeGrid, target: Spacing, mode: Interpolation) -> Result<VolumeGrid> {
    let target = Spacing::new(target.dx, target.dy, target.dz)?;
    let src = vol.spacing;
    let out = resampled_dims(vol.dims, src, target);
    let mut data = Vec::with_capacity(out.len());
    for z in 0..out.nz {
        let cz = z as f64 * target.dz / src.dz;
        for y in 0..out.ny {
            let cy = y as f64 * target.dy / src.dy;
            for x in 0..out.nx {
                let cx = x as f64 * target.dx / src.dx;
                let v = match mode {
                    Interpolation::Trilinear => sample_trilinear(vol, [cx, cy, cz]),
                    Interpolation::Nearest => vol.get(
                        nearest_index(cx, vol.dims.nx),
                        nearest_index(cy, vol.dims.ny),
                        nearest_index(cz, vol.dims.nz),
                    ),
                };
                data.push(v);
            }
        }
    }
    VolumeGrid::new(out, target, data)
}

/// Resamples a mask; only nearest-neighbor interpolation is accepted.
pub fn resample_mask(mask: &MaskVolume, target: Spacing, mode: Interpolation) -> Result<MaskVolume> {
    if mode != Interpolation::Nearest {
        return Err(Error::Config("masks must be resampled with nearest interpolation".into()));
    }
    let target = Spacing::new(target.dx, target.dy, target.dz)?;
    let src = mask.spacing;
    let out = resampled_dims(mask.dims, src, target);
    let d = mask.dims;
    let xs: Vec<usize> = (0..out.nx).map(|x| nearest_index(x as f64 * target.dx / src.dx, d.nx)).collect();
    let ys: Vec<usize> = (0..out.ny).map(|y| nearest_index(y as f64 * target.dy / src.dy, d.ny)).collect();
    let zs: Vec<usize> = (0..out.nz).map(|z| nearest_index(z as f64 * target.dz / src.dz, d.nz)).collect();
    let mut data = Vec::with_capacity(out.len());
    for &sz in &zs {
        for &sy in &ys {
            for &sx in &xs {
                data.push(mask.data[d.index(sx, sy, sz)]);
            }
        }
    }
    MaskVolume::new(out, target, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Spacing {
        Spacing::isotropic(1.0).unwrap()
    }

    #[test]
    fn spacing_rejects_non_positive() {
        assert!(Spacing::new(0.0, 1.0, 1.0).is_err());
        assert!(Spacing::new(1.0, -1.0, 1.0).is_err());
        assert!(Spacing::new(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn world_to_index_examples() {
        assert_eq!(world_to_index([0.0; 3], TARGET_SPACING), [0.0; 3]);
        assert_eq!(world_to_index([2.0, 3.0, 5.0], TARGET_SPACING), [2.0, 3.0, 2.0]);
        assert_eq!(world_to_index([1.5, 0.0, 0.0], TARGET_SPACING), [1.5, 0.0, 0.0]);
    }

    #[test]
    fn constant_volume_stays_constant() {
        let dims = Dims::new(5, 4, 3).unwrap();
        let v = VolumeGrid::filled(dims, Spacing::new(1.3, 0.7, 2.0).unwrap(), 42.5);
        for target in [TARGET_SPACING, unit(), Spacing::new(0.4, 3.0, 1.1).unwrap()] {
            let r = resample_volume(&v, target, Interpolation::Trilinear).unwrap();
            assert!(r.data().iter().all(|&x| x == 42.5));
        }
    }

    #[test]
    fn identity_resample() {
        let dims = Dims::new(6, 5, 4).unwrap();
        let data: Vec<f32> = (0..dims.len()).map(|i| (i as f32 * 0.37).sin()).collect();
        let v = VolumeGrid::new(dims, TARGET_SPACING, data).unwrap();
        let r = resample_volume(&v, TARGET_SPACING, Interpolation::Trilinear).unwrap();
        for (a, b) in v.data().iter().zip(r.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let n = resample_volume(&v, TARGET_SPACING, Interpolation::Nearest).unwrap();
        assert_eq!(n, v);
    }

    #[test]
    fn upsampled_octant_mask() {
        let s2 = Spacing::isotropic(2.0).unwrap();
        let dims = Dims::new(4, 4, 4).unwrap();
        let m = MaskVolume::from_fn(dims, s2, |x, y, z| x < 2 && y < 2 && z < 2);
        let r = resample_mask(&m, unit(), Interpolation::Nearest).unwrap();
        assert_eq!(r.dims().as_array(), [8, 8, 8]);
        assert_eq!(r.count(), 8 * m.count());

        // brute force: nearest source center in world space, lowest index on ties
        let nearest = |o: usize| -> usize {
            let w = o as f64;
            (0..4)
                .min_by(|&a, &b| {
                    let da = (a as f64 * 2.0 - w).abs();
                    let db = (b as f64 * 2.0 - w).abs();
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .unwrap()
        };
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(r.get(x, y, z), m.get(nearest(x), nearest(y), nearest(z)));
                }
            }
        }
    }

    #[test]
    fn mask_requires_nearest() {
        let m = MaskVolume::empty(Dims::new(2, 2, 2).unwrap(), unit());
        assert!(resample_mask(&m, unit(), Interpolation::Trilinear).is_err());
    }

    #[test]
    fn resample_rejects_bad_target() {
        let v = VolumeGrid::filled(Dims::new(2, 2, 2).unwrap(), unit(), 1.0);
        let bad = Spacing {
            dx: 0.0,
            dy: 1.0,
            dz: 1.0,
        };
        assert!(resample_volume(&v, bad, Interpolation::Trilinear).is_err());
    }

    #[test]
    fn mask_set_ops() {
        let dims = Dims::new(3, 1, 1).unwrap();
        let a = MaskVolume::new(dims, unit(), vec![1, 1, 0]).unwrap();
        let b = MaskVolume::new(dims, unit(), vec![0, 1, 1]).unwrap();
        assert_eq!(a.union(&b).unwrap().data(), &[1, 1, 1]);
        assert_eq!(a.intersection(&b).unwrap().data(), &[0, 1, 0]);
        assert_eq!(a.difference(&b).unwrap().data(), &[1, 0, 0]);
        assert!(MaskVolume::new(dims, unit(), vec![0, 2, 0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nearest_resample_stays_binary(
                bits in proptest::collection::vec(0u8..2, 4 * 3 * 5),
                t in 0.3f64..3.0,
            ) {
                let dims = Dims::new(4, 3, 5).unwrap();
                let m = MaskVolume::new(dims, TARGET_SPACING, bits).unwrap();
                let r = resample_mask(&m, Spacing::new(t, t * 1.5, t).unwrap(), Interpolation::Nearest).unwrap();
                prop_assert!(r.data().iter().all(|&v| v <= 1));
            }
        }
    }
}
