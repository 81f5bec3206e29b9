//! The Q-network: an encoder-decoder over the workspace heightmap with
//! skip connections, an in-hand encoder, and goal / current-abstract
//! one-hots projected and tiled onto the bottleneck feature map. Output
//! is a two-channel spatial Q-map (channel 0 = PICK, channel 1 = PLACE).

use rand::Rng;

use crate::nn::ops::{
    broadcast_backward, broadcast_to_map, concat_channels, crop_to, pad_to, split_channels,
    upsample2, upsample2_backward, Conv2d, Linear, MaxPool2, Relu,
};
use crate::nn::optim::Net;
use crate::nn::tensor::{Element, Tensor};

/// Input bundle for one forward pass.
///
/// `goal` is a one-hot over abstract-state ids (capacity wide); `cur` has
/// one extra leading slot for the off-grammar sentinel, then the ids.
/// Keeping the sentinel first lets the abstract space grow by appending
/// columns without disturbing trained weights.
pub struct QInput<E: Element> {
    pub img: Tensor<E>,
    pub hand: Tensor<E>,
    pub goal: Tensor<E>,
    pub cur: Tensor<E>,
}

pub struct QNet<E: Element> {
    enc0: Conv2d<E>,
    r_e0: Relu<E>,
    pool0: MaxPool2<E>,
    enc1: Conv2d<E>,
    r_e1: Relu<E>,
    pool1: MaxPool2<E>,
    enc2: Conv2d<E>,
    r_e2: Relu<E>,
    pool2: MaxPool2<E>,
    bott: Conv2d<E>,
    r_b: Relu<E>,
    merge: Conv2d<E>,
    r_m: Relu<E>,
    dec2: Conv2d<E>,
    r_d2: Relu<E>,
    dec1: Conv2d<E>,
    r_d1: Relu<E>,
    dec0: Conv2d<E>,
    r_d0: Relu<E>,
    head: Conv2d<E>,

    hand_conv1: Conv2d<E>,
    r_h1: Relu<E>,
    hand_pool1: MaxPool2<E>,
    hand_conv2: Conv2d<E>,
    r_h2: Relu<E>,
    hand_pool2: MaxPool2<E>,
    hand_fc: Linear<E>,
    r_hf: Relu<E>,

    goal_fc: Linear<E>,
    cur_fc: Linear<E>,
    r_c: Relu<E>,

    base: usize,
    embed: usize,
    img_norm: E,
    fwd: Option<FwdShapes>,
}

struct FwdShapes {
    n: usize,
    pad_hw: (usize, usize),
    hand_hw: (usize, usize),
}

impl<E: Element> QNet<E> {
    /// `capacity` is the number of abstract-state ids the one-hots can
    /// express; `img_norm` the heightmap scale.
    pub fn new<R: Rng>(
        base: usize,
        embed: usize,
        capacity: usize,
        inhand: usize,
        img_norm: f64,
        rng: &mut R,
    ) -> Self {
        let c = base;
        let hand_flat = 16 * (inhand / 4) * (inhand / 4);
        QNet {
            enc0: Conv2d::new(1, c, 3, 1, 1, rng),
            r_e0: Relu::new(),
            pool0: MaxPool2::new(),
            enc1: Conv2d::new(c, 2 * c, 3, 1, 1, rng),
            r_e1: Relu::new(),
            pool1: MaxPool2::new(),
            enc2: Conv2d::new(2 * c, 4 * c, 3, 1, 1, rng),
            r_e2: Relu::new(),
            pool2: MaxPool2::new(),
            bott: Conv2d::new(4 * c, 8 * c, 3, 1, 1, rng),
            r_b: Relu::new(),
            merge: Conv2d::new(8 * c + 2 * embed, 8 * c, 3, 1, 1, rng),
            r_m: Relu::new(),
            dec2: Conv2d::new(8 * c + 4 * c, 4 * c, 3, 1, 1, rng),
            r_d2: Relu::new(),
            dec1: Conv2d::new(4 * c + 2 * c, 2 * c, 3, 1, 1, rng),
            r_d1: Relu::new(),
            dec0: Conv2d::new(2 * c + c, c, 3, 1, 1, rng),
            r_d0: Relu::new(),
            head: Conv2d::new(c, 2, 1, 1, 0, rng),
            hand_conv1: Conv2d::new(1, 8, 3, 1, 1, rng),
            r_h1: Relu::new(),
            hand_pool1: MaxPool2::new(),
            hand_conv2: Conv2d::new(8, 16, 3, 1, 1, rng),
            r_h2: Relu::new(),
            hand_pool2: MaxPool2::new(),
            hand_fc: Linear::new(hand_flat, embed, rng),
            r_hf: Relu::new(),
            goal_fc: Linear::new(capacity, embed, rng),
            cur_fc: Linear::new(capacity + 1, embed, rng),
            r_c: Relu::new(),
            base,
            embed,
            img_norm: E::from_f64(img_norm),
            fwd: None,
        }
    }

    /// One-hot width for goals (current adds the sentinel slot).
    pub fn capacity(&self) -> usize {
        self.goal_fc.in_features()
    }

    /// Appends freshly initialized projection columns for new abstract
    /// ids after the goal graph grows.
    pub fn grow_capacity<R: Rng>(&mut self, extra: usize, rng: &mut R) {
        self.goal_fc.grow_inputs(extra, rng);
        self.cur_fc.grow_inputs(extra, rng);
    }

    /// Q-maps [n, 2, h, w] matching the input image size.
    pub fn forward(&mut self, input: &QInput<E>) -> Tensor<E> {
        let (n, _, h, w) = input.img.dims4();
        let (_, _, ih, iw) = input.hand.dims4();
        // the three pools need spatial dims divisible by 8
        let ph = h.div_ceil(8) * 8;
        let pw = w.div_ceil(8) * 8;
        let mut img = pad_to(&input.img, ph, pw);
        let norm = self.img_norm;
        for v in img.data_mut() {
            *v = *v / norm;
        }
        let mut hand = input.hand.clone();
        for v in hand.data_mut() {
            *v = *v / norm;
        }

        // conditioning embedding: summed projections of the two one-hots
        let mut cond = self.goal_fc.forward(&input.goal);
        cond.add_scaled(&self.cur_fc.forward(&input.cur), E::ONE);
        let e_cond = self.r_c.forward(cond);
        // in-hand embedding
        let h1 = self.r_h1.forward(self.hand_conv1.forward(&hand));
        let p1 = self.hand_pool1.forward(&h1);
        let h2 = self.r_h2.forward(self.hand_conv2.forward(&p1));
        let p2 = self.hand_pool2.forward(&h2);
        let flat = p2.reshaped(&[n, self.hand_fc.in_features()]);
        let e_hand = self.r_hf.forward(self.hand_fc.forward(&flat));

        // encoder
        let s0 = self.r_e0.forward(self.enc0.forward(&img));
        let d0 = self.pool0.forward(&s0);
        let s1 = self.r_e1.forward(self.enc1.forward(&d0));
        let d1 = self.pool1.forward(&s1);
        let s2 = self.r_e2.forward(self.enc2.forward(&d1));
        let d2 = self.pool2.forward(&s2);
        let b = self.r_b.forward(self.bott.forward(&d2));

        // tile embeddings over the bottleneck and merge
        let (bh, bw) = (ph / 8, pw / 8);
        let e = concat_channels(&[
            &broadcast_to_map(&e_cond, bh, bw),
            &broadcast_to_map(&e_hand, bh, bw),
        ]);
        let merged = self.r_m.forward(self.merge.forward(&concat_channels(&[&b, &e])));

        // decoder with skip connections
        let u2 = upsample2(&merged);
        let y2 = self.r_d2.forward(self.dec2.forward(&concat_channels(&[&u2, &s2])));
        let u1 = upsample2(&y2);
        let y1 = self.r_d1.forward(self.dec1.forward(&concat_channels(&[&u1, &s1])));
        let u0 = upsample2(&y1);
        let y0 = self.r_d0.forward(self.dec0.forward(&concat_channels(&[&u0, &s0])));
        let q = self.head.forward(&y0);

        self.fwd = Some(FwdShapes { n, pad_hw: (ph, pw), hand_hw: (ih, iw) });
        crop_to(&q, h, w)
    }

    /// Backpropagates dL/dQ; parameter gradients accumulate.
    pub fn backward(&mut self, dq: &Tensor<E>) {
        let shapes = self.fwd.take().expect("backward without forward");
        let c = self.base;
        let (ph, pw) = shapes.pad_hw;
        let dq = pad_to(dq, ph, pw);
        let dy0 = self.head.backward(&dq);
        let dcat0 = self.dec0.backward(&self.r_d0.backward(dy0));
        let parts = split_channels(&dcat0, &[2 * c, c]);
        let dy1 = upsample2_backward(&parts[0]);
        let ds0_skip = parts.into_iter().nth(1).unwrap();
        let dcat1 = self.dec1.backward(&self.r_d1.backward(dy1));
        let parts = split_channels(&dcat1, &[4 * c, 2 * c]);
        let dy2 = upsample2_backward(&parts[0]);
        let ds1_skip = parts.into_iter().nth(1).unwrap();
        let dcat2 = self.dec2.backward(&self.r_d2.backward(dy2));
        let mut parts = split_channels(&dcat2, &[8 * c, 4 * c]);
        let ds2_skip = parts.pop().unwrap();
        let dmerged = parts.pop().unwrap();

        let dcat_b = self.merge.backward(&self.r_m.backward(dmerged));
        let mut parts = split_channels(&dcat_b, &[8 * c, 2 * self.embed]);
        let de = parts.pop().unwrap();
        let db = parts.pop().unwrap();
        let de_parts = split_channels(&de, &[self.embed, self.embed]);
        let de_cond = broadcast_backward(&de_parts[0]);
        let de_hand = broadcast_backward(&de_parts[1]);

        // encoder chain
        let dd2 = self.bott.backward(&self.r_b.backward(db));
        let mut ds2 = self.pool2.backward(&dd2);
        ds2.add_scaled(&ds2_skip, E::ONE);
        let dd1 = self.enc2.backward(&self.r_e2.backward(ds2));
        let mut ds1 = self.pool1.backward(&dd1);
        ds1.add_scaled(&ds1_skip, E::ONE);
        let dd0 = self.enc1.backward(&self.r_e1.backward(ds1));
        let mut ds0 = self.pool0.backward(&dd0);
        ds0.add_scaled(&ds0_skip, E::ONE);
        self.enc0.backward(&self.r_e0.backward(ds0));

        // conditioning path: both projections receive the same upstream
        let dcond = self.r_c.backward(de_cond);
        self.goal_fc.backward(&dcond);
        self.cur_fc.backward(&dcond);

        // in-hand path
        let dflat = self.hand_fc.backward(&self.r_hf.backward(de_hand));
        let (ih, iw) = shapes.hand_hw;
        let dp2 = dflat.reshaped(&[shapes.n, 16, ih / 4, iw / 4]);
        let dh2 = self.r_h2.backward(self.hand_pool2.backward(&dp2));
        let dp1 = self.hand_conv2.backward(&dh2);
        let dh1 = self.r_h1.backward(self.hand_pool1.backward(&dp1));
        self.hand_conv1.backward(&dh1);
    }
}

impl<E: Element> Clone for QNet<E> {
    fn clone(&self) -> Self {
        QNet {
            enc0: self.enc0.clone(),
            r_e0: Relu::new(),
            pool0: MaxPool2::new(),
            enc1: self.enc1.clone(),
            r_e1: Relu::new(),
            pool1: MaxPool2::new(),
            enc2: self.enc2.clone(),
            r_e2: Relu::new(),
            pool2: MaxPool2::new(),
            bott: self.bott.clone(),
            r_b: Relu::new(),
            merge: self.merge.clone(),
            r_m: Relu::new(),
            dec2: self.dec2.clone(),
            r_d2: Relu::new(),
            dec1: self.dec1.clone(),
            r_d1: Relu::new(),
            dec0: self.dec0.clone(),
            r_d0: Relu::new(),
            head: self.head.clone(),
            hand_conv1: self.hand_conv1.clone(),
            r_h1: Relu::new(),
            hand_pool1: MaxPool2::new(),
            hand_conv2: self.hand_conv2.clone(),
            r_h2: Relu::new(),
            hand_pool2: MaxPool2::new(),
            hand_fc: self.hand_fc.clone(),
            r_hf: Relu::new(),
            goal_fc: self.goal_fc.clone(),
            cur_fc: self.cur_fc.clone(),
            r_c: Relu::new(),
            base: self.base,
            embed: self.embed,
            img_norm: self.img_norm,
            fwd: None,
        }
    }
}

impl<E: Element> Net<E> for QNet<E> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>, &mut Tensor<E>)) {
        f("enc0.w", &mut self.enc0.w, &mut self.enc0.gw);
        f("enc0.b", &mut self.enc0.b, &mut self.enc0.gb);
        f("enc1.w", &mut self.enc1.w, &mut self.enc1.gw);
        f("enc1.b", &mut self.enc1.b, &mut self.enc1.gb);
        f("enc2.w", &mut self.enc2.w, &mut self.enc2.gw);
        f("enc2.b", &mut self.enc2.b, &mut self.enc2.gb);
        f("bott.w", &mut self.bott.w, &mut self.bott.gw);
        f("bott.b", &mut self.bott.b, &mut self.bott.gb);
        f("merge.w", &mut self.merge.w, &mut self.merge.gw);
        f("merge.b", &mut self.merge.b, &mut self.merge.gb);
        f("dec2.w", &mut self.dec2.w, &mut self.dec2.gw);
        f("dec2.b", &mut self.dec2.b, &mut self.dec2.gb);
        f("dec1.w", &mut self.dec1.w, &mut self.dec1.gw);
        f("dec1.b", &mut self.dec1.b, &mut self.dec1.gb);
        f("dec0.w", &mut self.dec0.w, &mut self.dec0.gw);
        f("dec0.b", &mut self.dec0.b, &mut self.dec0.gb);
        f("head.w", &mut self.head.w, &mut self.head.gw);
        f("head.b", &mut self.head.b, &mut self.head.gb);
        f("hand_conv1.w", &mut self.hand_conv1.w, &mut self.hand_conv1.gw);
        f("hand_conv1.b", &mut self.hand_conv1.b, &mut self.hand_conv1.gb);
        f("hand_conv2.w", &mut self.hand_conv2.w, &mut self.hand_conv2.gw);
        f("hand_conv2.b", &mut self.hand_conv2.b, &mut self.hand_conv2.gb);
        f("hand_fc.w", &mut self.hand_fc.w, &mut self.hand_fc.gw);
        f("hand_fc.b", &mut self.hand_fc.b, &mut self.hand_fc.gb);
        f("goal_fc.w", &mut self.goal_fc.w, &mut self.goal_fc.gw);
        f("goal_fc.b", &mut self.goal_fc.b, &mut self.goal_fc.gb);
        f("cur_fc.w", &mut self.cur_fc.w, &mut self.cur_fc.gw);
        f("cur_fc.b", &mut self.cur_fc.b, &mut self.cur_fc.gb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::kaiming_uniform;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(n: usize, h: usize, w: usize, ih: usize, cap: usize, seed: u64) -> QInput<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QInput {
            img: kaiming_uniform(&[n, 1, h, w], 1, &mut rng),
            hand: kaiming_uniform(&[n, 1, ih, ih], 1, &mut rng),
            goal: kaiming_uniform(&[n, cap], 1, &mut rng),
            cur: kaiming_uniform(&[n, cap + 1], 1, &mut rng),
        }
    }

    #[test]
    fn qmap_shape_tracks_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = QNet::<f32>::new(4, 8, 5, 16, 36.0, &mut rng);
        let q = net.forward(&input(2, 48, 48, 16, 5, 2));
        assert_eq!(q.shape(), &[2, 2, 48, 48]);
        // paper-scale 90x90 pads internally to 96 and crops back
        let q = net.forward(&input(1, 90, 90, 16, 5, 3));
        assert_eq!(q.shape(), &[1, 2, 90, 90]);
    }

    #[test]
    fn grow_capacity_preserves_old_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = QNet::<f32>::new(4, 8, 5, 16, 36.0, &mut rng);
        let w_before = net.goal_fc.w.clone();
        net.grow_capacity(6, &mut rng);
        assert_eq!(net.capacity(), 11);
        assert_eq!(net.cur_fc.in_features(), 12);
        let (out, wide) = net.goal_fc.w.dims2();
        for o in 0..out {
            for i in 0..5 {
                assert_eq!(net.goal_fc.w.data()[o * wide + i], w_before.data()[o * 5 + i]);
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_clone_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = QNet::<f32>::new(4, 8, 5, 16, 36.0, &mut rng);
        let inp = input(1, 24, 24, 16, 5, 5);
        let a = net.forward(&inp);
        let mut copy = net.clone();
        let b = copy.forward(&inp);
        assert_eq!(a, b);
    }
}
