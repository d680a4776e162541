//! Central-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::phnn::{phnn_forward, PhnnParams};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Samples dropped because a perturbation changed a ReLU sign or pool argmax.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// `(tensor, element)` of the worst sample.
    pub worst: Option<(usize, usize)>,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against `(f(θ+h) - f(θ-h)) / 2h` on `samples` randomly
/// drawn parameter elements. `eval` returns the loss and the activation
/// pattern of the forward pass; samples whose perturbations change the
/// pattern are replaced by fresh draws.
pub fn grad_check<F>(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    samples: usize,
    h: f64,
    seed: u64,
    mut eval: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<(f64, Vec<u64>)>,
{
    let (_, base) = eval(params)?;
    let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let max_attempts = samples * 4;
    let mut attempts = 0;
    while report.checked < samples && attempts < max_attempts && total > 0 {
        attempts += 1;
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let orig = work[t].data()[flat];
        work[t].data_mut()[flat] = orig + h;
        let (fp, pp) = eval(&work)?;
        work[t].data_mut()[flat] = orig - h;
        let (fm, pm) = eval(&work)?;
        work[t].data_mut()[flat] = orig;
        if pp != base || pm != base {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic[t].data()[flat], numeric);
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((t, flat));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Gradient check of the PHNN Dice loss on one batch.
pub fn phnn_grad_check(
    params: &PhnnParams<f64>,
    input: &Tensor<f64>,
    target: &[f64],
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut f = phnn_forward(params, input.clone())?;
    let loss = f.dice_loss(target)?;
    let analytic = f.param_grads(loss)?;
    let mut probe = params.clone();
    grad_check(&params.tensors, &analytic, samples, 1e-4, seed, |ts| {
        probe.tensors.clone_from_slice(ts);
        let mut f = phnn_forward(&probe, input.clone())?;
        let l = f.dice_loss(target)?;
        Ok((f.tape.value(l).data()[0], f.tape.activation_pattern()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::phnn::{PhnnDescriptor, SideInit};
    use crate::net::tape::Tape;

    fn rand_tensor(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_loss_through_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor([2, 2, 4, 4, 4], &mut rng);
        let params = vec![rand_tensor([3, 2, 3, 3, 3], &mut rng), rand_tensor([3, 1, 1, 1, 1], &mut rng)];
        let weights: Vec<f64> = (0..2 * 3 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = |ps: &[Tensor<f64>]| -> Result<(Tape<f64>, crate::net::tape::NodeId, Vec<crate::net::tape::NodeId>)> {
            let mut t = Tape::new();
            let xi = t.input(x.clone())?;
            let w = t.param(0, ps[0].clone())?;
            let b = t.param(1, ps[1].clone())?;
            let y = t.conv3d(xi, w, b)?;
            let l = t.dot(y, &weights)?;
            Ok((t, l, vec![w, b]))
        };
        let (t, l, ids) = run(&params).unwrap();
        let mut g = t.backward(l).unwrap();
        let analytic: Vec<_> = ids.iter().map(|&i| g.take(i).unwrap()).collect();
        let rep = grad_check(&params, &analytic, 100, 1e-4, 2, |ps| {
            let (t, l, _) = run(ps)?;
            Ok((t.value(l).data()[0], t.activation_pattern()))
        })
        .unwrap();
        assert_eq!(rep.checked, 100);
        assert!(rep.max_rel_err < 1e-7, "{rep:?}");
    }

    #[test]
    fn tiny_phnn_dice() {
        let desc = PhnnDescriptor {
            in_channels: 2,
            channels: vec![3, 4],
            convs: vec![1, 2],
            layout_checksum: 0,
        };
        let params = PhnnParams::<f64>::init(desc, 4, SideInit::Random).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor([2, 2, 8, 8, 4], &mut rng);
        let target: Vec<f64> = (0..2 * 256).map(|_| rng.random_bool(0.3) as u8 as f64).collect();
        let rep = phnn_grad_check(&params, &x, &target, 200, 6).unwrap();
        assert_eq!(rep.checked, 200, "{rep:?}");
        assert!(rep.max_rel_err < 1e-5, "{rep:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }
}
