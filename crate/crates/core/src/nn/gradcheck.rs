//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::optim::Net;
use super::tensor::{Element, Tensor};

/// Compares analytic gradients against central differences on a random
/// sample of parameters and returns the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `run_backward` must zero gradients, run a full forward pass and
/// backpropagate; `run_loss` must evaluate the same loss without touching
/// gradients. Both must be deterministic for fixed parameters. Use f64
/// networks; f32 truncation swamps the comparison.
pub fn gradient_check<E: Element, N: Net<E>, R: Rng>(
    net: &mut N,
    mut run_backward: impl FnMut(&mut N) -> f64,
    mut run_loss: impl FnMut(&mut N) -> f64,
    samples: usize,
    epsilon: f64,
    rng: &mut R,
) -> f64 {
    run_backward(net);
    // snapshot analytic gradients per parameter tensor
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    net.visit_params(&mut |_, _, g| {
        analytic.push(g.data().iter().map(|v| v.to_f64()).collect());
        sizes.push(g.data().len());
    });
    let tensors = sizes.len();
    let mut max_rel = 0.0f64;
    for _ in 0..samples {
        let ti = rng.random_range(0..tensors);
        if sizes[ti] == 0 {
            continue;
        }
        let ei = rng.random_range(0..sizes[ti]);
        let a = analytic[ti][ei];

        let orig = read_param(net, ti, ei);
        write_param(net, ti, ei, orig + E::from_f64(epsilon));
        let plus = run_loss(net);
        write_param(net, ti, ei, orig - E::from_f64(epsilon));
        let minus = run_loss(net);
        write_param(net, ti, ei, orig);

        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

fn read_param<E: Element, N: Net<E>>(net: &mut N, ti: usize, ei: usize) -> E {
    let mut out = E::ZERO;
    let mut i = 0;
    net.visit_params(&mut |_, p, _| {
        if i == ti {
            out = p.data()[ei];
        }
        i += 1;
    });
    out
}

fn write_param<E: Element, N: Net<E>>(net: &mut N, ti: usize, ei: usize, v: E) {
    let mut i = 0;
    net.visit_params(&mut |_, p, _| {
        if i == ti {
            p.data_mut()[ei] = v;
        }
        i += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::{squared_loss, Linear};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Lin {
        l: Linear<f64>,
        x: Tensor<f64>,
    }

    impl Net<f64> for Lin {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>, &mut Tensor<f64>)) {
            f("w", &mut self.l.w, &mut self.l.gw);
            f("b", &mut self.l.b, &mut self.l.gb);
        }
    }

    #[test]
    fn linear_layer_gradients_are_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = crate::nn::ops::kaiming_uniform(&[4, 6], 6, &mut rng);
        let mut net = Lin { l: Linear::new(6, 3, &mut rng), x };
        let err = gradient_check(
            &mut net,
            |n| {
                n.zero_grads();
                let y = n.l.forward(&n.x.clone());
                let (loss, dy) = squared_loss(&y);
                n.l.backward(&dy);
                loss
            },
            |n| {
                let y = n.l.forward(&n.x.clone());
                squared_loss(&y).0
            },
            60,
            1e-6,
            &mut ChaCha8Rng::seed_from_u64(6),
        );
        assert!(err < 1e-7, "max relative error {err}");
    }

    /// An identity "network" (loss = parameter itself) has exactly zero
    /// error up to rounding.
    struct Id {
        w: Tensor<f64>,
        g: Tensor<f64>,
    }

    impl Net<f64> for Id {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>, &mut Tensor<f64>)) {
            f("w", &mut self.w, &mut self.g);
        }
    }

    #[test]
    fn identity_network_has_zero_error() {
        let mut net = Id { w: Tensor::from_vec(&[1], vec![0.75]), g: Tensor::zeros(&[1]) };
        let err = gradient_check(
            &mut net,
            |n| {
                n.g.data_mut()[0] = 1.0;
                n.w.data()[0]
            },
            |n| n.w.data()[0],
            5,
            1e-5,
            &mut ChaCha8Rng::seed_from_u64(7),
        );
        assert!(err < 1e-10, "max relative error {err}");
    }
}
