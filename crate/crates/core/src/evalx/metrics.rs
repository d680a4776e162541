//! Overlap and surface-distance metrics between binary masks.
//!
//! Surface distances are measured between boundary voxel centers (6-connected
//! boundary, see [`crate::sdt::boundary_voxels`]) using the exact distance
//! transform of the opposing boundary, in millimeters.

use crate::error::{Error, Result};
use crate::sdt::{boundary_voxels, edt_squared};
use crate::voxgrid::MaskVolume;

fn check_dims(a: &MaskVolume, b: &MaskVolume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch(format!(
            "{:?} vs {:?}",
            a.dims().as_array(),
            b.dims().as_array()
        )));
    }
    Ok(())
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice_score(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    check_dims(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Distances (mm) from every boundary voxel of `from` to the boundary of `to`,
/// in linear voxel order.
pub fn directed_surface_distances(from: &MaskVolume, to: &MaskVolume) -> Result<Vec<f64>> {
    check_dims(from, to)?;
    let gf = boundary_voxels(from)?;
    let gt = boundary_voxels(to)?;
    let field = edt_squared(&gt)?;
    Ok(gf
        .data()
        .iter()
        .zip(&field)
        .filter(|(&m, _)| m != 0)
        .map(|(_, &d2)| d2.sqrt())
        .collect())
}

fn surface_pair(a: &MaskVolume, b: &MaskVolume, err: Error) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(err);
    }
    Ok((directed_surface_distances(a, b)?, directed_surface_distances(b, a)?))
}

/// Symmetric Hausdorff distance (maximum, not a percentile) between boundaries.
pub fn hausdorff(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    let (ab, ba) = surface_pair(a, b, Error::UndefinedHd)?;
    Ok(ab.iter().chain(&ba).copied().fold(0.0, f64::max))
}

/// 95th-percentile Hausdorff distance: the larger of the two directed
/// nearest-rank 95th percentiles.
pub fn hausdorff95(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    let (ab, ba) = surface_pair(a, b, Error::UndefinedHd)?;
    Ok(percentile(ab, 0.95).max(percentile(ba, 0.95)))
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(|x, y| x.total_cmp(y));
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Symmetric average surface distance over both boundaries.
pub fn asd(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    let (ab, ba) = surface_pair(a, b, Error::UndefinedSurfaceDistance)?;
    let total: f64 = ab.iter().sum::<f64>() + ba.iter().sum::<f64>();
    Ok(total / (ab.len() + ba.len()) as f64)
}
