//! Sliding-window inference and binarization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{phnn_forward, PhnnParams, Tensor};
use crate::pipeline::ContextStack;
use crate::voxgrid::{Dims, MaskVolume, VolumeGrid};

/// Window origins along one axis of length `n`: every `stride` from 0, plus a
/// final window flush with the far edge. An axis shorter than the window gets
/// one centered window (negative origin) whose out-of-range samples repeat the edge.
pub fn window_origins(n: usize, window: usize, stride: usize) -> Vec<i64> {
    if n <= window {
        return vec![-(((window - n) / 2) as i64)];
    }
    let last = (n - window) as i64;
    let mut out: Vec<i64> = (0..).map(|k| k * stride as i64).take_while(|&o| o < last).collect();
    out.push(last);
    out
}

/// Running per-voxel probability sum and window hit count.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationBuffer {
    dims: Dims,
    prob_sum: Vec<f64>,
    hit_count: Vec<u32>,
}

impl AggregationBuffer {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            prob_sum: vec![0.0; dims.len()],
            hit_count: vec![0; dims.len()],
        }
    }

    /// Adds a window output (x-fastest over `size`) placed at `origin`; samples
    /// falling outside the volume are ignored.
    pub fn add(&mut self, origin: [i64; 3], size: [usize; 3], probs: &[f32]) {
        let d = self.dims;
        for z in 0..size[2] {
            let gz = origin[2] + z as i64;
            for y in 0..size[1] {
                let gy = origin[1] + y as i64;
                for x in 0..size[0] {
                    let gx = origin[0] + x as i64;
                    if d.contains(gx, gy, gz) {
                        let i = d.index(gx as usize, gy as usize, gz as usize);
                        self.prob_sum[i] += probs[x + size[0] * (y + size[1] * z)] as f64;
                        self.hit_count[i] += 1;
                    }
                }
            }
        }
    }

    pub fn hit_count(&self) -> &[u32] {
        &self.hit_count
    }

    pub fn finish(self, spacing: crate::voxgrid::Spacing) -> Result<VolumeGrid> {
        if self.hit_count.contains(&0) {
            return Err(Error::Shape("sliding window left voxels uncovered".into()));
        }
        let data = self
            .prob_sum
            .iter()
            .zip(&self.hit_count)
            .map(|(&s, &n)| (s / n as f64) as f32)
            .collect();
        VolumeGrid::new(self.dims, spacing, data)
    }
}

fn crop_clamped(stack: &ContextStack, origin: [i64; 3], size: [usize; 3], out: &mut Vec<f32>) {
    let d = stack.dims();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    for c in &stack.channels {
        let src = c.data();
        for z in 0..size[2] {
            let gz = clamp(origin[2] + z as i64, d.nz);
            for y in 0..size[1] {
                let gy = clamp(origin[1] + y as i64, d.ny);
                for x in 0..size[0] {
                    let gx = clamp(origin[0] + x as i64, d.nx);
                    out.push(src[d.index(gx, gy, gz)]);
                }
            }
        }
    }
}

/// Windows evaluated per forward pass.
const WINDOW_BATCH: usize = 4;

/// Probability map of the whole stack: the network runs on every window and
/// each voxel takes the unweighted mean of the windows covering it. Windows
/// are reduced in placement order, so results do not depend on thread count.
pub fn sliding_window_infer(
    stack: &ContextStack,
    params: &PhnnParams<f32>,
    window: [usize; 3],
    stride: [usize; 3],
) -> Result<VolumeGrid> {
    stack.check_layout(params.desc.layout_checksum)?;
    if stack.channels.len() != params.desc.in_channels {
        return Err(Error::Shape(format!(
            "stack has {} channels, network expects {}",
            stack.channels.len(),
            params.desc.in_channels
        )));
    }
    let div = params.desc.divisor();
    if window.iter().any(|&w| w == 0 || w % div != 0) {
        return Err(Error::NotDivisible(window, div));
    }
    if (0..3).any(|a| stride[a] == 0 || stride[a] > window[a]) {
        return Err(Error::Config(format!("stride {stride:?} must be in 1..=window {window:?} per axis")));
    }
    let d = stack.dims();
    let axes: Vec<Vec<i64>> = (0..3)
        .map(|a| window_origins(d.as_array()[a], window[a], stride[a]))
        .collect();
    let mut origins = Vec::new();
    for &z in &axes[2] {
        for &y in &axes[1] {
            for &x in &axes[0] {
                origins.push([x, y, z]);
            }
        }
    }
    let n = window.iter().product::<usize>();
    let outputs: Vec<Vec<f32>> = origins
        .par_chunks(WINDOW_BATCH)
        .map(|group| -> Result<Vec<f32>> {
            let mut buf = Vec::with_capacity(group.len() * n * stack.channels.len());
            for &o in group {
                crop_clamped(stack, o, window, &mut buf);
            }
            let x = Tensor::from_vec([group.len(), stack.channels.len(), window[0], window[1], window[2]], buf)?;
            Ok(phnn_forward(params, x)?.prob().data().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut agg = AggregationBuffer::new(d);
    for (group, probs) in origins.chunks(WINDOW_BATCH).zip(&outputs) {
        for (k, &o) in group.iter().enumerate() {
            agg.add(o, window, &probs[k * n..(k + 1) * n]);
        }
    }
    agg.finish(stack.channels[0].spacing())
}

/// `value >= threshold` → 1.
pub fn binarize(prob: &VolumeGrid, threshold: f32) -> MaskVolume {
    let data = prob.data().iter().map(|&v| (v >= threshold) as u8).collect();
    MaskVolume::new(prob.dims(), prob.spacing(), data).expect("same length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{PhnnDescriptor, SideInit};
    use crate::pipeline::ChannelLayout;
    use crate::voxgrid::TARGET_SPACING;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack(d: Dims, seed: u64) -> ContextStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = (0..2)
            .map(|_| VolumeGrid::new(d, TARGET_SPACING, (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        ContextStack::new(ChannelLayout::CtGtvLnSdt, ch).unwrap()
    }

    fn net(seed: u64) -> PhnnParams<f32> {
        let desc = PhnnDescriptor {
            in_channels: 2,
            channels: vec![4, 4, 4],
            convs: vec![1, 1, 1],
            layout_checksum: ChannelLayout::CtGtvLnSdt.checksum(),
        };
        PhnnParams::init(desc, seed, SideInit::Random).unwrap()
    }

    #[test]
    fn origins_examples() {
        assert_eq!(window_origins(160, 96, 64), vec![0, 64]);
        assert_eq!(window_origins(96, 96, 64), vec![0]);
        assert_eq!(window_origins(64, 32, 24), vec![0, 24, 32]);
        assert_eq!(window_origins(48, 16, 12), vec![0, 12, 24, 32]);
        assert_eq!(window_origins(12, 16, 8), vec![-2]);
    }

    #[test]
    fn coverage_counts_on_wide_axis() {
        let d = Dims::new(160, 1, 1).unwrap();
        let mut agg = AggregationBuffer::new(d);
        for o in window_origins(160, 96, 64) {
            agg.add([o, 0, 0], [96, 1, 1], &[0.5; 96]);
        }
        for (x, &c) in agg.hit_count().iter().enumerate() {
            assert_eq!(c, if (64..96).contains(&x) { 2 } else { 1 }, "x = {x}");
        }
    }

    #[test]
    fn single_window_equals_forward() {
        let s = stack(Dims::new(16, 16, 8).unwrap(), 1);
        let p = net(2);
        let agg = sliding_window_infer(&s, &p, [16, 16, 8], [8, 8, 4]).unwrap();
        let direct = phnn_forward(&p, s.to_tensor()).unwrap();
        assert_eq!(agg.data(), direct.prob().data());
    }

    #[test]
    fn zero_network_gives_half_everywhere() {
        let s = stack(Dims::new(40, 24, 12).unwrap(), 3);
        let p = PhnnParams::<f32>::zeros(net(0).desc).unwrap();
        let agg = sliding_window_infer(&s, &p, [16, 16, 8], [12, 12, 4]).unwrap();
        assert!(agg.data().iter().all(|&v| v == 0.5));
        assert!(binarize(&agg, 0.5).data().iter().all(|&v| v == 1));
        let low = agg.map(|_| 0.2);
        assert!(binarize(&low, 0.5).is_empty());
    }

    #[test]
    fn small_volume_uses_clamped_window() {
        let s = stack(Dims::new(12, 16, 8).unwrap(), 4);
        let agg = sliding_window_infer(&s, &net(5), [16, 16, 8], [8, 8, 4]).unwrap();
        assert_eq!(agg.dims(), s.dims());
        assert!(agg.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_wrong_layout_and_window() {
        let s = stack(Dims::new(16, 16, 8).unwrap(), 1);
        let mut p = net(2);
        assert!(sliding_window_infer(&s, &p, [10, 16, 8], [8, 8, 4]).is_err());
        p.desc.layout_checksum = ChannelLayout::CtMask.checksum();
        assert!(matches!(
            sliding_window_infer(&s, &p, [16, 16, 8], [8, 8, 4]),
            Err(Error::LayoutMismatch { .. })
        ));
    }
}
