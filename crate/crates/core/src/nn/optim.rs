//! Optimizers. Parameters are visited in a stable registration order via
//! the [`Net`] trait, which is also what checkpointing and gradient
//! checks build on.

use super::tensor::{Element, Tensor};

/// Anything with named parameters and gradient accumulators.
pub trait Net<E: Element> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>, &mut Tensor<E>));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, _, g| g.fill(E::ZERO));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p, _| n += p.numel());
        n
    }
}

/// Global gradient-norm clip; returns the scale that was applied.
fn clip_scale<E: Element>(net: &mut impl Net<E>, clip: f64) -> f64 {
    if clip <= 0.0 {
        return 1.0;
    }
    let mut sq = 0.0f64;
    net.visit_params(&mut |_, _, g| {
        for v in g.data() {
            sq += v.to_f64() * v.to_f64();
        }
    });
    let norm = sq.sqrt();
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

pub struct Adam<E: Element> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    step: u64,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(lr: f64, clip: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut impl Net<E>) {
        let scale = clip_scale(net, self.clip);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        net.visit_params(&mut |_, p, g| {
            if m.len() <= idx {
                m.push(Tensor::zeros(p.shape()));
                v.push(Tensor::zeros(p.shape()));
            }
            // parameter growth after transfer: restart moments for the tensor
            if m[idx].shape() != p.shape() {
                m[idx] = Tensor::zeros(p.shape());
                v[idx] = Tensor::zeros(p.shape());
            }
            let (mi, vi) = (m[idx].data_mut(), v[idx].data_mut());
            for ((pv, gv), (mv, vv)) in
                p.data_mut().iter_mut().zip(g.data()).zip(mi.iter_mut().zip(vi.iter_mut()))
            {
                let gd = gv.to_f64() * scale;
                let mn = b1 * mv.to_f64() + (1.0 - b1) * gd;
                let vn = b2 * vv.to_f64() + (1.0 - b2) * gd * gd;
                *mv = E::from_f64(mn);
                *vv = E::from_f64(vn);
                let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + eps);
                *pv -= E::from_f64(update);
            }
            idx += 1;
        });
    }

    /// Moment tensors in visit order, for checkpointing.
    pub fn moments(&self) -> (&[Tensor<E>], &[Tensor<E>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor<E>>, v: Vec<Tensor<E>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

/// Plain SGD, mostly for tests and tiny fits.
pub struct Sgd {
    pub lr: f64,
    pub clip: f64,
}

impl Sgd {
    pub fn step<E: Element>(&self, net: &mut impl Net<E>) {
        let scale = clip_scale(net, self.clip);
        let lr = self.lr;
        net.visit_params(&mut |_, p, g| {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= E::from_f64(lr * scale * gv.to_f64());
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Toy {
        w: Tensor<f64>,
        g: Tensor<f64>,
    }

    impl Net<f64> for Toy {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>, &mut Tensor<f64>)) {
            f("w", &mut self.w, &mut self.g);
        }
    }

    #[test]
    fn adam_with_zero_gradients_is_a_no_op() {
        let mut toy =
            Toy { w: Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]), g: Tensor::zeros(&[3]) };
        let before = toy.w.clone();
        let mut adam = Adam::new(1e-2, 0.0);
        for _ in 0..5 {
            adam.step(&mut toy);
        }
        assert_eq!(toy.w, before);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut toy = Toy { w: Tensor::from_vec(&[1], vec![5.0]), g: Tensor::zeros(&[1]) };
        let mut adam = Adam::new(0.1, 0.0);
        for _ in 0..500 {
            toy.g = toy.w.clone(); // d/dw of w^2/2
            adam.step(&mut toy);
        }
        assert!(toy.w.data()[0].abs() < 1e-2);
    }

    #[test]
    fn clip_bounds_update_norm() {
        let mut toy = Toy { w: Tensor::zeros(&[2]), g: Tensor::from_vec(&[2], vec![30.0, 40.0]) };
        let sgd = Sgd { lr: 1.0, clip: 5.0 };
        sgd.step(&mut toy);
        // gradient norm 50 clipped to 5
        let norm = (toy.w.data()[0].powi(2) + toy.w.data()[1].powi(2)).sqrt();
        assert!((norm - 5.0).abs() < 1e-9);
    }
}
