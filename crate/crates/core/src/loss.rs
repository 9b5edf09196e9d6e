//! Per-task classification losses with ignored labels, and class weights.
//!
//! Labels are `i64` with `-1` meaning "missing". A task loss is the mean over
//! non-ignored samples; a batch with no labelled samples has loss 0 and a
//! zero gradient.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const IGNORE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    WeightedCe,
    Focal { gamma: f64 },
}

#[derive(Debug, Clone)]
pub struct LossOutput<T: Scalar> {
    pub value: f64,
    /// `dL/dlogits`, same shape as the logits.
    pub grad: Tensor<T>,
    pub counted: usize,
}

fn validate<T: Scalar>(logits: &Tensor<T>, labels: &[i64], weights: &[f64]) -> Result<(usize, usize)> {
    logits.expect_rank(2, "logits")?;
    let (b, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for a batch of {b}", labels.len())));
    }
    if weights.len() != k {
        return Err(Error::dim(format!("{} class weights for {k} classes", weights.len())));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y < IGNORE || y >= k as i64 {
            return Err(Error::data(format!("record {i}: label {y} outside 0..{k} (or -1)")));
        }
    }
    Ok((b, k))
}

/// `log softmax` of one row in 64-bit.
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean of `−w_y·(1−p_y)^γ·log p_y` over labelled samples; `γ = 0` is
/// weighted cross-entropy.
pub fn focal_loss<T: Scalar>(logits: &Tensor<T>, labels: &[i64], weights: &[f64], gamma: f64) -> Result<LossOutput<T>> {
    if !(gamma >= 0.0) {
        return Err(Error::config(format!("focal gamma must be non-negative, got {gamma}")));
    }
    let (b, k) = validate(logits, labels, weights)?;
    logits.check_finite("logits")?;
    let counted = labels.iter().filter(|&&y| y != IGNORE).count();
    let mut grad = vec![0.0f64; b * k];
    let mut total = 0.0;
    if counted > 0 {
        let inv_m = 1.0 / counted as f64;
        for (i, &y) in labels.iter().enumerate() {
            if y == IGNORE {
                continue;
            }
            let y = y as usize;
            let row: Vec<f64> = logits.data()[i * k..(i + 1) * k].iter().map(|v| v.as_f64()).collect();
            let logp = log_softmax(&row);
            let p = logp[y].exp();
            let w = weights[y];
            let one_minus = (1.0 - p).max(0.0);
            let modulator = one_minus.powf(gamma);
            total += -w * modulator * logp[y];
            // dL/dz_k = w·[γ·p·(1−p)^(γ−1)·log p − (1−p)^γ]·(δ_ky − p_k)
            let focus = if gamma > 0.0 && one_minus > 0.0 { gamma * p * one_minus.powf(gamma - 1.0) * logp[y] } else { 0.0 };
            let coef = w * (focus - modulator) * inv_m;
            for c in 0..k {
                let delta = if c == y { 1.0 } else { 0.0 };
                grad[i * k + c] = coef * (delta - logp[c].exp());
            }
        }
        total *= inv_m;
    }
    Ok(LossOutput { value: total, grad: Tensor::new(logits.shape(), grad.into_iter().map(T::of).collect())?, counted })
}

/// Mean of `−w_y·log softmax(z)_y` over labelled samples.
pub fn weighted_ce<T: Scalar>(logits: &Tensor<T>, labels: &[i64], weights: &[f64]) -> Result<LossOutput<T>> {
    focal_loss(logits, labels, weights, 0.0)
}

pub fn task_loss<T: Scalar>(kind: LossKind, logits: &Tensor<T>, labels: &[i64], weights: &[f64]) -> Result<LossOutput<T>> {
    match kind {
        LossKind::WeightedCe => weighted_ce(logits, labels, weights),
        LossKind::Focal { gamma } => focal_loss(logits, labels, weights, gamma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Hard,
    Soft,
    Focal,
    Median,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            "focal" => Ok(Self::Focal),
            "median" => Ok(Self::Median),
            _ => Err(Error::config(format!("unknown class-weight mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub mode: WeightMode,
    pub cap: f64,
    pub weights: Vec<f64>,
}

/// Weights before clipping and renormalization. Zero-count classes get
/// `cap`.
pub fn raw_class_weights(counts: &[u64], mode: WeightMode, cap: f64) -> Result<Vec<f64>> {
    if !(cap >= 1.0) || !cap.is_finite() {
        return Err(Error::config(format!("class-weight cap must be at least 1, got {cap}")));
    }
    let positive: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    if positive.is_empty() {
        return Err(Error::data("class counts are all zero"));
    }
    let n: f64 = positive.iter().sum();
    let k = counts.len() as f64;
    let median = {
        let mut s = positive.clone();
        s.sort_by(f64::total_cmp);
        let m = s.len();
        if m % 2 == 1 {
            s[m / 2]
        } else {
            0.5 * (s[m / 2 - 1] + s[m / 2])
        }
    };
    let inv_sum: f64 = positive.iter().map(|c| 1.0 / c).sum();
    Ok(counts
        .iter()
        .map(|&c| {
            if c == 0 {
                return cap;
            }
            let c = c as f64;
            match mode {
                WeightMode::Median => median / c,
                WeightMode::Hard => n / (k * c),
                WeightMode::Soft => (n / (k * c)).sqrt(),
                WeightMode::Focal => (1.0 / c) / inv_sum,
            }
        })
        .collect())
}

/// Raw weights clipped into `[1/cap, cap]`, then rescaled to mean 1.
pub fn compute_class_weights(counts: &[u64], mode: WeightMode, cap: f64) -> Result<ClassWeights> {
    let raw = raw_class_weights(counts, mode, cap)?;
    let clipped: Vec<f64> = raw.iter().map(|w| w.clamp(1.0 / cap, cap)).collect();
    let mean = clipped.iter().sum::<f64>() / clipped.len() as f64;
    Ok(ClassWeights { mode, cap, weights: clipped.iter().map(|w| w / mean).collect() })
}

/// Per-class counts of labelled samples.
pub fn class_counts(labels: impl IntoIterator<Item = i64>, num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes];
    for y in labels {
        if y >= 0 && (y as usize) < num_classes {
            counts[y as usize] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::new(&[rows.len(), rows[0].len()], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn hand_values() {
        assert!((weighted_ce(&t(&[&[0.0, 0.0]]), &[0], &[1.0, 1.0]).unwrap().value - LN2).abs() < 1e-12);
        let ignored = weighted_ce(&t(&[&[5.0, -3.0], &[0.0, 0.0]]), &[-1, 1], &[1.0, 1.0]).unwrap();
        assert!((ignored.value - LN2).abs() < 1e-12);
        assert!(ignored.grad.data()[..2].iter().all(|&g| g == 0.0));
        assert!((weighted_ce(&t(&[&[0.0, 0.0]]), &[0], &[2.0, 1.0]).unwrap().value - 2.0 * LN2).abs() < 1e-12);
        assert!((focal_loss(&t(&[&[0.0, 0.0]]), &[0], &[1.0, 1.0], 2.0).unwrap().value - 0.25 * LN2).abs() < 1e-12);
    }

    #[test]
    fn all_ignored_is_zero() {
        let out = weighted_ce(&t(&[&[1.0, 2.0]]), &[-1], &[1.0, 1.0]).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.counted, 0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bad_label_names_record() {
        let err = weighted_ce(&t(&[&[0.0, 0.0], &[0.0, 0.0]]), &[0, 2], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("record 1")), "{err}");
    }

    #[test]
    fn focal_decays_faster_when_confident() {
        let logits = t(&[&[4.0, 0.0]]);
        let ce = weighted_ce(&logits, &[0], &[1.0, 1.0]).unwrap().value;
        let mut prev = ce;
        for g in [0.5, 1.0, 2.0, 5.0] {
            let f = focal_loss(&logits, &[0], &[1.0, 1.0], g).unwrap().value;
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn focal_gradient_matches_differences_and_survives_certainty() {
        let logits = t(&[&[0.3, -1.2, 0.8], &[2.0, 0.1, -0.4]]);
        let w = [1.5, 0.7, 1.0];
        for gamma in [0.0, 0.5, 2.0] {
            let out = focal_loss(&logits, &[2, 0], &w, gamma).unwrap();
            for i in 0..6 {
                let mut p = logits.clone();
                p.data_mut()[i] += 1e-6;
                let mut m = logits.clone();
                m.data_mut()[i] -= 1e-6;
                let num = (focal_loss(&p, &[2, 0], &w, gamma).unwrap().value - focal_loss(&m, &[2, 0], &w, gamma).unwrap().value) / 2e-6;
                assert!((num - out.grad.data()[i]).abs() < 1e-7, "γ={gamma} i={i}");
            }
        }
        let sure = focal_loss(&t(&[&[800.0, 0.0]]), &[0], &[1.0, 1.0], 0.5).unwrap();
        assert!(sure.grad.is_finite() && sure.value == 0.0);
    }

    #[test]
    fn median_weights_hand_checked() {
        let raw = raw_class_weights(&[10, 20, 40], WeightMode::Median, 10.0).unwrap();
        assert_eq!(raw, vec![2.0, 1.0, 0.5]);
        let w = compute_class_weights(&[10, 20, 40], WeightMode::Median, 10.0).unwrap();
        assert!((w.weights.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_counts_unit_weights() {
        for mode in [WeightMode::Hard, WeightMode::Soft, WeightMode::Focal, WeightMode::Median] {
            let w = compute_class_weights(&[7, 7, 7, 7], mode, 5.0).unwrap();
            assert!(w.weights.iter().all(|&v| (v - 1.0).abs() < 1e-12), "{mode:?}");
        }
    }

    #[test]
    fn clip_rule_bounds_ratio_by_cap_squared() {
        let raw = raw_class_weights(&[1, 1000], WeightMode::Hard, 5.0).unwrap();
        assert!((raw[0] - 500.5).abs() < 1e-9 && (raw[1] - 0.5005).abs() < 1e-12);
        let w = compute_class_weights(&[1, 1000], WeightMode::Hard, 5.0).unwrap().weights;
        // Clipped to [5, 0.5005] before renormalization.
        assert!((w[0] / w[1] - 5.0 / 0.5005).abs() < 1e-9);
        assert!(w[0] / w[1] <= 25.0);
    }

    #[test]
    fn zero_counts() {
        assert!(matches!(raw_class_weights(&[0, 0], WeightMode::Hard, 5.0), Err(Error::Data(_))));
        assert_eq!(raw_class_weights(&[0, 4], WeightMode::Median, 3.0).unwrap()[0], 3.0);
        assert!(matches!(raw_class_weights(&[1, 4], WeightMode::Median, 0.5), Err(Error::Config(_))));
    }
}
