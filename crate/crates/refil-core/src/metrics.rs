//! Attack-quality and utility metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over all elements of (a - b)^2.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: "mse".into(),
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Mean structural similarity between two images of equal shape.
///
/// 11x11 Gaussian window (sigma 1.5) slid over the valid region only,
/// stabilizers C1 = (0.01 L)^2 and C2 = (0.03 L)^2 for dynamic range `L`,
/// averaged over window positions and channels. Accepts [h, w] or
/// [c, h, w]; images smaller than the window are rejected.
pub fn ssim(a: &Tensor, b: &Tensor, dynamic_range: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: "ssim".into(),
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    let (channels, h, w) = match a.shape() {
        [h, w] => (1usize, *h, *w),
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::InvalidArgument(format!(
                "ssim expects [h,w] or [c,h,w] images, got {other:?}"
            )))
        }
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let kernel = gaussian_kernel();
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);

    let mut total = 0.0f64;
    let mut count = 0usize;
    for c in 0..channels {
        let plane_a = &a.data()[c * h * w..(c + 1) * h * w];
        let plane_b = &b.data()[c * h * w..(c + 1) * h * w];
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                // Weighted moments; covariance via E[xy] - mu_x mu_y.
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    let row = (y0 + ky) * w + x0;
                    for kx in 0..SSIM_WINDOW {
                        let wgt = kernel[ky * SSIM_WINDOW + kx];
                        let va = plane_a[row + kx] as f64;
                        let vb = plane_b[row + kx] as f64;
                        mx += wgt * va;
                        my += wgt * vb;
                        mxx += wgt * va * va;
                        myy += wgt * vb * vb;
                        mxy += wgt * va * vb;
                    }
                }
                let var_a = mxx - mx * mx;
                let var_b = myy - my * my;
                let cov = mxy - mx * my;
                let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                let den = (mx * mx + my * my + c1) * (var_a + var_b + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - center;
            let dx = x as f64 - center;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            k[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// 1 iff `true_id` appears among the first k entries of the ranking.
pub fn topk_success(ranked_ids: &[usize], true_id: usize, k: usize) -> Result<bool> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-k needs k >= 1".into()));
    }
    Ok(ranked_ids.iter().take(k).any(|&id| id == true_id))
}

/// Fraction of (prediction, label) pairs that match.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / predicted.len() as f64
}

/// ROC-AUC by rank statistic; ties get averaged ranks. Returns 0.5 when one
/// class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    (rank_sum - pos as f64 * (pos as f64 + 1.0) / 2.0) / (pos as f64 * neg as f64)
}

/// Spearman rank correlation; ties get averaged ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(vals: &[f64]) -> Vec<f64> {
    let n = vals.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).expect("finite values"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && vals[idx[j + 1]] == vals[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn mse_examples() {
        let z = Tensor::from_vec(vec![0.0, 0.0]);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        let ones = Tensor::from_vec(vec![1.0, 1.0]);
        assert_eq!(mse(&z, &ones).unwrap(), 1.0);
        let a = Tensor::from_vec(vec![0.0, 2.0]);
        assert_eq!(mse(&a, &z).unwrap(), 2.0);
        let bad = Tensor::from_vec(vec![0.0]);
        assert!(mse(&a, &bad).is_err());
    }

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
        let mut rng = SeededRng::new(seed);
        Tensor::new(
            vec![c, h, w],
            (0..c * h * w).map(|_| rng.uniform_f32()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let img = random_image(1, 3, 12, 12);
        let s = ssim(&img, &img, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "got {s}");
    }

    #[test]
    fn ssim_of_negated_zero_mean_image_is_negative() {
        // zero-mean checkerboard: every window mean ~ 0, so the sign comes
        // from the anticorrelated structure term
        let mut data = vec![0.0f32; 16 * 16];
        for y in 0..16 {
            for x in 0..16 {
                data[y * 16 + x] = if (x + y) % 2 == 0 { 0.3 } else { -0.3 };
            }
        }
        let img = Tensor::new(vec![16, 16], data).unwrap();
        let neg = img.scale(-1.0);
        let s = ssim(&img, &neg, 1.0).unwrap();
        assert!(s < -0.9, "anticorrelated structure must give s < 0, got {s}");
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let img = random_image(3, 1, 8, 8);
        assert!(ssim(&img, &img, 1.0).is_err());
    }

    #[test]
    fn topk_examples() {
        assert!(topk_success(&[3, 1, 2], 3, 1).unwrap());
        assert!(topk_success(&[9, 8, 7, 6, 5], 5, 5).unwrap());
        assert!(!topk_success(&[1, 2, 3], 4, 3).unwrap());
        assert!(topk_success(&[1], 1, 0).is_err());
    }

    #[test]
    fn auc_separable_scores() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&scores, &labels), 1.0);
        let anti = [false, false, true, true];
        assert_eq!(roc_auc(&scores, &anti), 0.0);
        // pos {0.9, 0.2} vs neg {0.8, 0.1}: 3 of 4 pairs ordered correctly
        let mixed = [true, false, true, false];
        assert_eq!(roc_auc(&scores, &mixed), 0.75);
    }

    #[test]
    fn spearman_monotone_sequences() {
        let xs = [0.01, 0.1, 1.0, 10.0, 100.0];
        let down = [0.9, 0.7, 0.5, 0.3, 0.1];
        assert!((spearman(&xs, &down) + 1.0).abs() < 1e-12);
        let up = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert!((spearman(&xs, &up) - 1.0).abs() < 1e-12);
    }
}
