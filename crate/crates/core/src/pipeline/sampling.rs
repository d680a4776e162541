//! Training VOI placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::voxgrid::{Dims, MaskVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoiLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoiSpec {
    pub origin: [usize; 3],
    pub size: [usize; 3],
    pub label: VoiLabel,
    /// Center before clamping into the volume (positives: a target voxel).
    pub center: [usize; 3],
}

impl VoiSpec {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.size[a])
    }
}

pub const DEFAULT_VOI: [usize; 3] = [64, 64, 16];
pub const DEFAULT_N_POS: usize = 60;
pub const DEFAULT_N_NEG: usize = 20;

fn clamp_origin(center: [usize; 3], size: [usize; 3], dims: [usize; 3]) -> [usize; 3] {
    std::array::from_fn(|a| center[a].saturating_sub(size[a] / 2).min(dims[a] - size[a]))
}

/// `n_pos` VOIs centered on uniformly drawn target voxels followed by `n_neg`
/// VOIs with uniform origins, all clamped to lie inside the volume.
pub fn sample_vois(ctv: &MaskVolume, n_pos: usize, n_neg: usize, voi_size: [usize; 3], seed: u64) -> Result<Vec<VoiSpec>> {
    let dims = ctv.dims().as_array();
    if (0..3).any(|a| voi_size[a] == 0 || voi_size[a] > dims[a]) {
        return Err(Error::VoiTooLarge { voi: voi_size, vol: dims });
    }
    if ctv.is_empty() {
        return Err(Error::EmptyObject);
    }
    let d: Dims = dims.into();
    let targets: Vec<usize> = (0..d.len()).filter(|&i| ctv.at(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..n_pos {
        let (x, y, z) = d.coords(targets[rng.random_range(0..targets.len())]);
        let center = [x, y, z];
        out.push(VoiSpec {
            origin: clamp_origin(center, voi_size, dims),
            size: voi_size,
            label: VoiLabel::Positive,
            center,
        });
    }
    for _ in 0..n_neg {
        let origin: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..=dims[a] - voi_size[a]));
        out.push(VoiSpec {
            origin,
            size: voi_size,
            label: VoiLabel::Negative,
            center: std::array::from_fn(|a| origin[a] + voi_size[a] / 2),
        });
    }
    Ok(out)
}

/// Copies the VOI of an x-fastest volume into `out` (x-fastest, `size` dims).
pub fn crop_into<T: Copy>(src: &[T], dims: Dims, voi: &VoiSpec, out: &mut [T]) {
    let [ox, oy, oz] = voi.origin;
    let [sx, sy, sz] = voi.size;
    debug_assert_eq!(out.len(), sx * sy * sz);
    for z in 0..sz {
        for y in 0..sy {
            let s = dims.index(ox, oy + y, oz + z);
            let o = sx * (y + sy * z);
            out[o..o + sx].copy_from_slice(&src[s..s + sx]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxgrid::TARGET_SPACING;
    use proptest::prelude::*;

    fn ctv(d: Dims) -> MaskVolume {
        MaskVolume::from_fn(d, TARGET_SPACING, |x, y, z| (2..9).contains(&x) && (30..40).contains(&y) && (10..14).contains(&z))
    }

    #[test]
    fn default_counts() {
        let d = Dims::new(64, 64, 48).unwrap();
        let v = sample_vois(&ctv(d), DEFAULT_N_POS, DEFAULT_N_NEG, DEFAULT_VOI, 1).unwrap();
        assert_eq!(v.len(), 80);
        assert_eq!(v.iter().filter(|s| s.label == VoiLabel::Positive).count(), 60);
    }

    #[test]
    fn errors() {
        let d = Dims::new(64, 64, 16).unwrap();
        assert!(matches!(
            sample_vois(&ctv(Dims::new(64, 64, 48).unwrap()), 1, 1, [96, 96, 64], 0),
            Err(Error::VoiTooLarge { .. })
        ));
        assert!(matches!(
            sample_vois(&MaskVolume::empty(d, TARGET_SPACING), 1, 1, DEFAULT_VOI, 0),
            Err(Error::EmptyObject)
        ));
    }

    #[test]
    fn crop_copies_block() {
        let d = Dims::new(5, 4, 3).unwrap();
        let src: Vec<usize> = (0..d.len()).collect();
        let voi = VoiSpec {
            origin: [1, 2, 1],
            size: [3, 2, 2],
            label: VoiLabel::Negative,
            center: [2, 3, 2],
        };
        let mut out = vec![0; 12];
        crop_into(&src, d, &voi, &mut out);
        let mut expect = Vec::new();
        for z in 1..3 {
            for y in 2..4 {
                for x in 1..4 {
                    expect.push(d.index(x, y, z));
                }
            }
        }
        assert_eq!(out, expect);
    }

    proptest! {
        #[test]
        fn vois_inside_and_positives_centered(seed: u64, n_pos in 0usize..30, n_neg in 0usize..10) {
            let d = Dims::new(48, 48, 32).unwrap();
            let m = ctv(d);
            let v = sample_vois(&m, n_pos, n_neg, [32, 32, 16], seed).unwrap();
            prop_assert_eq!(v.len(), n_pos + n_neg);
            for s in &v {
                for a in 0..3 {
                    prop_assert!(s.origin[a] + s.size[a] <= d.as_array()[a]);
                }
                if s.label == VoiLabel::Positive {
                    prop_assert!(m.get(s.center[0], s.center[1], s.center[2]));
                }
            }
        }
    }
}
