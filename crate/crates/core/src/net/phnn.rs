//! 3D progressive holistically-nested network.
//!
//! An encoder of convolutional blocks separated by 2×2×2 max pooling. Each
//! block emits a one-channel side map through a 1×1×1 projection; side maps are
//! upsampled to input resolution and summed progressively
//! (`a_k = a_{k-1} + s_k`). The last sum goes through a sigmoid. The fusion adds
//! no parameters beyond the side projections and there is no decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::tape::{NodeId, Tape};
use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhnnDescriptor {
    pub in_channels: usize,
    /// Feature channels of each block.
    pub channels: Vec<usize>,
    /// Number of 3×3×3 conv + ReLU layers in each block.
    pub convs: Vec<usize>,
    /// Checksum of the ordered input channel names the model was built for.
    pub layout_checksum: u32,
}

impl PhnnDescriptor {
    /// Four blocks with 8/16/32/64 channels and 2/2/3/3 convolutions.
    pub fn toy(in_channels: usize, layout_checksum: u32) -> Self {
        Self {
            in_channels,
            channels: vec![8, 16, 32, 64],
            convs: vec![2, 2, 3, 3],
            layout_checksum,
        }
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    /// Spatial dims must be divisible by this (one halving per pool).
    pub fn divisor(&self) -> usize {
        1 << (self.blocks().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.channels.is_empty()
            || self.channels.len() != self.convs.len()
            || self.channels.iter().any(|&c| c == 0)
            || self.convs.iter().any(|&c| c == 0)
        {
            return Err(Error::Config(format!("invalid network descriptor {self:?}")));
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order: for every block its conv
    /// weights and biases, then the block's side projection weight and bias.
    pub fn param_specs(&self) -> Vec<(String, [usize; 5])> {
        let mut specs = Vec::new();
        let mut cin = self.in_channels;
        for (b, (&c, &n)) in self.channels.iter().zip(&self.convs).enumerate() {
            for j in 0..n {
                specs.push((format!("block{b}.conv{j}.weight"), [c, cin, 3, 3, 3]));
                specs.push((format!("block{b}.conv{j}.bias"), [c, 1, 1, 1, 1]));
                cin = c;
            }
            specs.push((format!("block{b}.side.weight"), [1, c, 1, 1, 1]));
            specs.push((format!("block{b}.side.bias"), [1, 1, 1, 1, 1]));
        }
        specs
    }

    pub fn is_side(name: &str) -> bool {
        name.contains(".side.")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhnnParams<T> {
    pub desc: PhnnDescriptor,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SideInit {
    Zero,
    /// He-uniform like the convolutions; used by gradient checks so that every
    /// block receives gradient from the first step.
    Random,
}

impl<T: Real> PhnnParams<T> {
    /// He-style uniform weights (bound `sqrt(6 / fan_in)`), zero biases and
    /// side projections initialized per `side`.
    pub fn init(desc: PhnnDescriptor, seed: u64, side: SideInit) -> Result<Self> {
        desc.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in desc.param_specs() {
            let fan_in = shape[1] * shape[2] * shape[3] * shape[4];
            let bound = (6.0 / fan_in as f64).sqrt();
            let random = name.ends_with(".weight") && (!PhnnDescriptor::is_side(&name) || side == SideInit::Random);
            let n: usize = shape.iter().product();
            let data = if random {
                (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
            } else {
                vec![T::zero(); n]
            };
            names.push(name);
            tensors.push(Tensor::from_vec(shape, data)?);
        }
        Ok(Self { desc, names, tensors })
    }

    pub fn zeros(desc: PhnnDescriptor) -> Result<Self> {
        desc.validate()?;
        let (names, tensors) = desc
            .param_specs()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(s)))
            .unzip();
        Ok(Self { desc, names, tensors })
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn cast<U: Real>(&self) -> PhnnParams<U> {
        PhnnParams {
            desc: self.desc.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// A recorded forward pass.
pub struct PhnnForward<T> {
    pub tape: Tape<T>,
    pub prob: NodeId,
    /// Progressive sums `a_1 .. a_K` at input resolution.
    pub side_sums: Vec<NodeId>,
    /// Tape node of each parameter, in parameter order.
    pub params: Vec<NodeId>,
}

impl<T: Real> PhnnForward<T> {
    pub fn prob(&self) -> &Tensor<T> {
        self.tape.value(self.prob)
    }

    /// Appends the Dice loss of the output against `target` (same layout as the output).
    pub fn dice_loss(&mut self, target: &[T]) -> Result<NodeId> {
        self.tape.dice_loss(self.prob, target)
    }

    /// Gradients of scalar node `loss` for every parameter, in parameter order.
    pub fn param_grads(&self, loss: NodeId) -> Result<Vec<Tensor<T>>> {
        let mut g = self.tape.backward(loss)?;
        Ok(self
            .params
            .iter()
            .map(|&id| g.take(id).unwrap_or_else(|| Tensor::zeros(self.tape.value(id).shape())))
            .collect())
    }
}

/// Runs the network on `input` of shape `(batch, in_channels, nx, ny, nz)`.
pub fn phnn_forward<T: Real>(params: &PhnnParams<T>, input: Tensor<T>) -> Result<PhnnForward<T>> {
    let desc = &params.desc;
    if input.channels() != desc.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, network expects {}",
            input.channels(),
            desc.in_channels
        )));
    }
    let spatial = input.spatial();
    let div = desc.divisor();
    if spatial.iter().any(|&n| n % div != 0) {
        return Err(Error::NotDivisible(spatial, div));
    }
    let mut tape = Tape::new();
    let param_nodes = params
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(i, t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut h = tape.input(input)?;
    let mut next = 0;
    let mut acc: Option<NodeId> = None;
    let mut side_sums = Vec::with_capacity(desc.blocks());
    for (b, &n_convs) in desc.convs.iter().enumerate() {
        if b > 0 {
            h = tape.max_pool(h)?;
        }
        for _ in 0..n_convs {
            let (w, bias) = (param_nodes[next], param_nodes[next + 1]);
            next += 2;
            let pre = tape.conv3d(h, w, bias)?;
            h = tape.relu(pre)?;
        }
        let (w, bias) = (param_nodes[next], param_nodes[next + 1]);
        next += 2;
        let side = tape.conv3d(h, w, bias)?;
        let side = tape.upsample(side, 1 << b)?;
        let sum = match acc {
            None => side,
            Some(prev) => tape.add(prev, side)?,
        };
        side_sums.push(sum);
        acc = Some(sum);
    }
    let prob = tape.sigmoid(acc.expect("at least one block"))?;
    Ok(PhnnForward {
        tape,
        prob,
        side_sums,
        params: param_nodes,
    })
}

/// Soft Dice loss value `1 - (2 Σ p g + eps) / (Σ p + Σ g + eps)`, `eps = 1e-5`.
pub fn dice_loss<T: Real>(prob: &[T], target: &[T]) -> Result<T> {
    if prob.len() != target.len() {
        return Err(Error::Shape(format!("dice {} vs {}", prob.len(), target.len())));
    }
    let mut tape = Tape::new();
    let p = tape.input(Tensor::from_vec([1, 1, prob.len(), 1, 1], prob.to_vec())?)?;
    let l = tape.dice_loss(p, target)?;
    Ok(tape.value(l).data()[0])
}
