use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{Array, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    /// Odd side length of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    /// Dynamic range of the data; 2 for `[-1, 1]` images.
    pub data_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            data_range: 2.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    /// The SSIM map value from window moments.
    pub fn combine(&self, mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
        let (c1, c2) = (self.c1(), self.c2());
        ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    }
}

/// `(planes, h, w)` view of a rank-2 or rank-3 array.
fn planes<T: Scalar>(a: &Array<T>) -> Result<(usize, usize, usize)> {
    match *a.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(invalid!("ssim expects (H,W) or (C,H,W), got {s:?}")),
    }
}

/// Correlate each row, then each column, with `taps` keeping only positions
/// where the window fits.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for i in 0..h {
        let line = &x[i * w..(i + 1) * w];
        for j in 0..wo {
            rows[i * wo + j] = taps.iter().zip(&line[j..j + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for (t_idx, t) in taps.iter().enumerate() {
            let src = &rows[(i + t_idx) * wo..(i + t_idx + 1) * wo];
            let dst = &mut out[i * wo..(i + 1) * wo];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    out
}

/// Mean SSIM over all valid windows and channels.
pub fn ssim<T: Scalar>(a: &Array<T>, b: &Array<T>, p: &SsimParams) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(invalid!("ssim shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
    }
    let (c, h, w) = planes(a)?;
    if p.window.is_multiple_of(2) || p.window == 0 {
        return Err(invalid!("ssim window must be odd, got {}", p.window));
    }
    if p.window > h.min(w) {
        return Err(invalid!("ssim window {} exceeds image {h}x{w}", p.window));
    }
    if c == 0 {
        return Err(invalid!("ssim on an image without channels"));
    }
    let taps = p.taps();
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let xa: Vec<f64> = a.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let xb: Vec<f64> = b.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { xa.iter().zip(&xb).map(|(&u, &v)| f(u, v)).collect() };
        let mu_a = filter_valid(&xa, h, w, &taps);
        let mu_b = filter_valid(&xb, h, w, &taps);
        let aa = filter_valid(&prod(&|u, _| u * u), h, w, &taps);
        let bb = filter_valid(&prod(&|_, v| v * v), h, w, &taps);
        let ab = filter_valid(&prod(&|u, v| u * v), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            total += p.combine(ma, mb, aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
        }
        count += mu_a.len();
    }
    Ok(total / count as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-window evaluation with the full 2-D kernel.
    pub(crate) fn ssim_brute(a: &Array<f64>, b: &Array<f64>, p: &SsimParams) -> f64 {
        let (c, h, w) = planes(a).unwrap();
        let g = p.taps();
        let k = p.window;
        let (mut total, mut n) = (0.0, 0usize);
        for ch in 0..c {
            let at = |x: &Array<f64>, i: usize, j: usize| x.data()[ch * h * w + i * w + j];
            for i in 0..=h - k {
                for j in 0..=w - k {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for u in 0..k {
                        for v in 0..k {
                            ma += g[u] * g[v] * at(a, i + u, j + v);
                            mb += g[u] * g[v] * at(b, i + u, j + v);
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for u in 0..k {
                        for v in 0..k {
                            let (da, db) = (at(a, i + u, j + v) - ma, at(b, i + u, j + v) - mb);
                            va += g[u] * g[v] * da * da;
                            vb += g[u] * g[v] * db * db;
                            cov += g[u] * g[v] * da * db;
                        }
                    }
                    total += p.combine(ma, mb, va, vb, cov);
                    n += 1;
                }
            }
        }
        total / n as f64
    }

    pub(crate) fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Array<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_fn(&[c, h, w], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_and_errors() {
        let p = SsimParams::default();
        let a = random_image(3, 20, 17, 1);
        assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);
        assert!(ssim(&a, &random_image(3, 17, 20, 1), &p).is_err());
        assert!(ssim(&random_image(1, 10, 30, 0), &random_image(1, 10, 30, 1), &p).is_err());
        let even = SsimParams { window: 4, ..p };
        assert!(ssim(&a, &a, &even).is_err());
    }

    #[test]
    fn constant_images_plug_in() {
        let p = SsimParams::default();
        let a = Array::<f64>::full(&[3, 16, 16], -1.0);
        let b = Array::<f64>::full(&[3, 16, 16], 1.0);
        // zero variances make the contrast-structure factor C2/C2 = 1
        let c1 = p.c1();
        let expected = (-2.0 * 1.0 + c1) / (1.0 + 1.0 + c1);
        assert!((ssim(&a, &b, &p).unwrap() - expected).abs() < 1e-7);
        assert!((expected - (-0.999_600_08)).abs() < 1e-8);
    }

    #[test]
    fn taps_sum_to_one() {
        let t = SsimParams::default().taps();
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn separable_matches_brute_force(seed in any::<u64>(), c in 1usize..4) {
            let p = SsimParams::default();
            let a = random_image(c, 16, 16, seed);
            let b = random_image(c, 16, 16, seed.wrapping_add(1));
            prop_assert!((ssim(&a, &b, &p).unwrap() - ssim_brute(&a, &b, &p)).abs() < 1e-9);
        }

        #[test]
        fn symmetric_and_bounded(seed in any::<u64>()) {
            let p = SsimParams::default();
            let a = random_image(3, 18, 14, seed);
            let b = random_image(3, 18, 14, seed ^ 0xff);
            let (ab, ba) = (ssim(&a, &b, &p).unwrap(), ssim(&b, &a, &p).unwrap());
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
