//! Central finite-difference gradient checking (64-bit).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, Mode, ParamKind};
use super::tensor::Tensor;
use crate::error::Result;

/// A scalar objective with analytic gradients.
pub trait Objective {
    /// Loss only.
    fn loss(&mut self, x: &Tensor<f64>) -> Result<f64>;
    /// Zeroes parameter grads, runs forward and backward, returns the loss
    /// and `dL/dx`; parameter gradients are left in the parameters.
    fn loss_and_grad(&mut self, x: &Tensor<f64>) -> Result<(f64, Tensor<f64>)>;
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>, ParamKind));
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Denominator floor: `rel = |a − n| / max(|a|, |n|, abs_floor)`.
    pub abs_floor: f64,
    /// Check at most this many evenly spaced coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
    pub check_input: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, abs_floor: 1e-3, max_coords_per_tensor: None, check_input: true }
    }
}

impl GradCheckOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }

    pub fn sampled(max: usize) -> Self {
        Self { max_coords_per_tensor: Some(max), ..Self::default() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coords_checked: usize,
    /// Location of the worst coordinate.
    pub worst: String,
}

impl GradCheckReport {
    fn record(&mut self, what: &str, idx: usize, analytic: f64, numeric: f64, floor: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
        self.coords_checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if rel > self.max_rel_err || self.worst.is_empty() {
            if rel >= self.max_rel_err {
                self.worst = format!("{what}[{idx}] analytic={analytic:e} numeric={numeric:e}");
            }
            self.max_rel_err = self.max_rel_err.max(rel);
        }
    }
}

fn coords(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let step = len as f64 / m as f64;
            (0..m).map(|i| ((i as f64 + 0.5) * step) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compares analytic gradients (parameters and, optionally, input) against
/// `(f(x+eps) − f(x−eps)) / (2·eps)` per coordinate.
pub fn grad_check<O: Objective>(obj: &mut O, x: &Tensor<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (_, dx) = obj.loss_and_grad(x)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    obj.visit_params_mut(&mut |name, t, kind| {
        if kind == ParamKind::Trainable {
            analytic.push((name.to_string(), t.grad_tensor().into_data()));
        }
    });

    let mut report = GradCheckReport::default();
    let eps = opts.eps;
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for i in coords(grads.len(), opts.max_coords_per_tensor) {
            let nudge = |obj: &mut O, delta: f64| {
                let mut k = 0;
                obj.visit_params_mut(&mut |_, t, kind| {
                    if kind == ParamKind::Trainable {
                        if k == pi {
                            t.data_mut()[i] += delta;
                        }
                        k += 1;
                    }
                });
            };
            nudge(obj, eps);
            let lp = obj.loss(x)?;
            nudge(obj, -2.0 * eps);
            let lm = obj.loss(x)?;
            nudge(obj, eps);
            report.record(name, i, grads[i], (lp - lm) / (2.0 * eps), opts.abs_floor);
        }
    }
    if opts.check_input {
        for i in coords(x.len(), opts.max_coords_per_tensor) {
            let mut xp = x.detached();
            xp.data_mut()[i] += eps;
            let lp = obj.loss(&xp)?;
            xp.data_mut()[i] -= 2.0 * eps;
            let lm = obj.loss(&xp)?;
            report.record("input", i, dx.data()[i], (lp - lm) / (2.0 * eps), opts.abs_floor);
        }
    }
    Ok(report)
}

/// Wraps a layer with the probe loss `L = Σ r ⊙ layer(x)` for a fixed
/// random `r` in `[-1, 1]`.
pub struct LayerProbe<'a, L: Layer<f64>> {
    pub layer: &'a mut L,
    pub mode: Mode,
    seed: u64,
    r: Option<Tensor<f64>>,
}

impl<'a, L: Layer<f64>> LayerProbe<'a, L> {
    pub fn new(layer: &'a mut L, mode: Mode, seed: u64) -> Self {
        Self { layer, mode, seed, r: None }
    }

    fn probe(&mut self, shape: &[usize]) -> &Tensor<f64> {
        if self.r.as_ref().map(|r| r.shape() != shape).unwrap_or(true) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9);
            self.r = Some(Tensor::uniform(shape, -1.0, 1.0, &mut rng));
        }
        self.r.as_ref().unwrap()
    }
}

impl<L: Layer<f64>> Objective for LayerProbe<'_, L> {
    fn loss(&mut self, x: &Tensor<f64>) -> Result<f64> {
        let y = self.layer.forward(x, self.mode)?;
        let r = self.probe(y.shape());
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    }

    fn loss_and_grad(&mut self, x: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
        self.layer.zero_grads();
        let l = self.loss(x)?;
        let r = self.r.clone().expect("probe set by loss");
        let dx = self.layer.backward(&r)?;
        Ok((l, dx))
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>, ParamKind)) {
        self.layer.visit_mut("", f);
    }
}

/// Gradient check of a single layer under the random probe loss.
pub fn grad_check_layer<L: Layer<f64>>(layer: &mut L, x: &Tensor<f64>, mode: Mode, opts: &GradCheckOptions, seed: u64) -> Result<GradCheckReport> {
    let mut probe = LayerProbe::new(layer, mode, seed);
    grad_check(&mut probe, x, opts)
}
