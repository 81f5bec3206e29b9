//! Observation augmentation: low-frequency gradient noise followed by a
//! Gaussian blur, approximating real depth-sensor artifacts.

use rand::Rng;

use crate::nn::tensor::Tensor;

use super::Observation;

const NOISE_AMPLITUDE: f32 = 0.05;
const NOISE_CELL: usize = 8;
const SIGMA_RANGE: (f32, f32) = (0.5, 1.0);

/// Adds bounded Perlin-style noise to the workspace image and blurs it
/// with a randomly drawn sigma. The in-hand image and holding flag pass
/// through untouched.
pub fn augment_observation<R: Rng>(obs: &Observation, rng: &mut R) -> Observation {
    let sigma = rng.random_range(SIGMA_RANGE.0..=SIGMA_RANGE.1);
    let img = augment_image(&obs.img, NOISE_AMPLITUDE, sigma, rng);
    Observation { img, hand: obs.hand.clone(), holding: obs.holding }
}

/// Noise-then-blur with explicit parameters. Amplitude 0 and sigma 0 is
/// the identity. Per-pixel deviation before the blur never exceeds the
/// amplitude, and values stay non-negative.
pub fn augment_image<R: Rng>(
    img: &Tensor<f32>,
    amplitude: f32,
    sigma: f32,
    rng: &mut R,
) -> Tensor<f32> {
    let (_, h, w) = img.dims3();
    let mut out = img.clone();
    if amplitude > 0.0 {
        let noise = perlin(w, h, NOISE_CELL, rng);
        let data = out.data_mut();
        for (i, n) in noise.iter().enumerate() {
            let delta = (n * amplitude).clamp(-amplitude, amplitude);
            data[i] = (data[i] + delta).max(0.0);
        }
    }
    if sigma > 0.0 {
        out = gaussian_blur(&out, sigma);
    }
    out
}

/// Classic 2-d gradient noise in roughly [-1, 1].
fn perlin<R: Rng>(w: usize, h: usize, cell: usize, rng: &mut R) -> Vec<f32> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let grads: Vec<(f32, f32)> = (0..gw * gh)
        .map(|_| {
            let a = rng.random_range(0.0..std::f32::consts::TAU);
            (a.cos(), a.sin())
        })
        .collect();
    let fade = |t: f32| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let mut out = vec![0.0f32; w * h];
    for v in 0..h {
        for u in 0..w {
            let fx = u as f32 / cell as f32;
            let fy = v as f32 / cell as f32;
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
            let dot = |gx: usize, gy: usize, dx: f32, dy: f32| {
                let (gu, gv) = grads[gy * gw + gx];
                gu * dx + gv * dy
            };
            let n00 = dot(x0, y0, tx, ty);
            let n10 = dot(x0 + 1, y0, tx - 1.0, ty);
            let n01 = dot(x0, y0 + 1, tx, ty - 1.0);
            let n11 = dot(x0 + 1, y0 + 1, tx - 1.0, ty - 1.0);
            let (sx, sy) = (fade(tx), fade(ty));
            let a = n00 + sx * (n10 - n00);
            let b = n01 + sx * (n11 - n01);
            // sqrt(2) rescale puts the theoretical range at [-1, 1]
            out[v * w + u] = (a + sy * (b - a)) * std::f32::consts::SQRT_2;
        }
    }
    out
}

/// Separable Gaussian blur; the kernel renormalizes at the borders.
fn gaussian_blur(img: &Tensor<f32>, sigma: f32) -> Tensor<f32> {
    let (_, h, w) = img.dims3();
    let radius = (2.5 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i as f32).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();

    let mut tmp = vec![0.0f32; w * h];
    let src = img.data();
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let su = u as isize + ki as isize - radius;
                if su < 0 || su >= w as isize {
                    continue;
                }
                acc += k * src[v * w + su as usize];
                norm += k;
            }
            tmp[v * w + u] = acc / norm;
        }
    }
    let mut out = Tensor::zeros(&[1, h, w]);
    let dst = out.data_mut();
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sv = v as isize + ki as isize - radius;
                if sv < 0 || sv >= h as isize {
                    continue;
                }
                acc += k * tmp[sv as usize * w + u];
                norm += k;
            }
            dst[v * w + u] = acc / norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_img() -> Tensor<f32> {
        let mut img = Tensor::zeros(&[1, 32, 32]);
        for v in 10..20 {
            for u in 10..20 {
                img.data_mut()[v * 32 + u] = 6.0;
            }
        }
        img
    }

    #[test]
    fn zero_amplitude_zero_sigma_is_identity() {
        let img = test_img();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment_image(&img, 0.0, 0.0, &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn noise_bounded_before_blur() {
        let img = test_img();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = augment_image(&img, 0.05, 0.0, &mut rng);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.05 + 1e-6);
            assert!(*a >= 0.0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let img = test_img();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = augment_image(&img, 0.05, 0.8, &mut r1);
        let b = augment_image(&img, 0.05, 0.8, &mut r2);
        assert_eq!(a, b);
    }

    #[test]
    fn blur_preserves_shape_and_positivity() {
        let img = test_img();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = augment_image(&img, 0.05, 1.0, &mut rng);
        assert_eq!(out.shape(), img.shape());
        assert!(out.data().iter().all(|&v| v >= 0.0));
    }
}
