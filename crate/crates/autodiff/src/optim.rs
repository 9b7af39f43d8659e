//! Parameter storage, gradient buffers, Adam with global-norm clipping and
//! the warmup + cosine learning-rate schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::AutodiffError;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named trainable tensors together with their Adam moments.
#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
    index: BTreeMap<String, ParamId>,
    step: u64,
    pub adam: AdamConfig,
}

impl<T: Element> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            index: BTreeMap::new(),
            step: 0,
            adam: AdamConfig::default(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = ParamId(self.values.len());
        self.first_moment.push(vec![T::zero(); value.numel()]);
        self.second_moment.push(vec![T::zero(); value.numel()]);
        self.values.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Replaces every value with a same-named, same-shaped tensor.
    pub fn load(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<(), AutodiffError> {
        if tensors.len() != self.values.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                self.values.len()
            )));
        }
        for (name, t) in tensors {
            let id = self
                .id(name)
                .ok_or_else(|| AutodiffError::UnknownParameter(name.clone()))?;
            if self.values[id.0].shape != t.shape {
                return Err(AutodiffError::Shape {
                    op: "load",
                    a: self.values[id.0].shape.clone(),
                    b: t.shape.clone(),
                });
            }
        }
        for (name, t) in tensors {
            let id = self.index[name];
            self.values[id.0] = t.clone();
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn zeros_like(store: &ParameterStore<T>) -> Self {
        Self {
            tensors: store.values.iter().map(|v| Tensor::zeros(&v.shape)).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn add_to(&mut self, id: ParamId, g: &Tensor<T>) {
        for (a, &b) in self.tensors[id.0].data.iter_mut().zip(&g.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x * s;
            }
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Global L2 norm, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }
}

/// Rescales `grads` so their global norm is at most `clip`. Returns the
/// norm before clipping.
pub fn clip_gradients<T: Element>(grads: &mut Gradients<T>, clip: f64) -> f64 {
    let norm = grads.global_norm();
    if norm.is_finite() && norm > clip {
        grads.scale(T::lit(clip / norm));
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// One Adam update after global-norm clipping. A non-finite gradient leaves
/// parameters, moments and the step counter untouched.
pub fn adam_step<T: Element>(
    store: &mut ParameterStore<T>,
    grads: &mut Gradients<T>,
    lr: f64,
    clip: f64,
) -> Result<StepReport, AutodiffError> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(AutodiffError::NonFiniteGradient(norm));
    }
    let clipped = norm > clip;
    if clipped {
        grads.scale(T::lit(clip / norm));
    }
    store.step += 1;
    let AdamConfig { beta1, beta2, eps } = store.adam;
    let t = store.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2, one) = (T::lit(beta1), T::lit(beta2), T::one());
    let (lr_t, bc1_t, bc2_t, eps_t) = (T::lit(lr), T::lit(bc1), T::lit(bc2), T::lit(eps));
    for (i, g) in grads.tensors.iter().enumerate() {
        let p = &mut store.values[i].data;
        let m = &mut store.first_moment[i];
        let v = &mut store.second_moment[i];
        for j in 0..p.len() {
            let gj = g.data[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / bc1_t;
            let v_hat = v[j] / bc2_t;
            p[j] = p[j] - lr_t * m_hat / (v_hat.sqrt() + eps_t);
        }
    }
    Ok(StepReport {
        grad_norm: norm,
        clipped,
    })
}

/// Linear warmup over the first `warmup_steps`, then cosine decay from
/// `peak` to `floor`, reaching `floor` exactly at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub floor: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn from_epochs(peak: f64, floor: f64, warmup_epochs: usize, epochs: usize, steps_per_epoch: usize) -> Self {
        Self {
            peak,
            floor,
            warmup_steps: warmup_epochs * steps_per_epoch,
            total_steps: epochs * steps_per_epoch,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps + 1);
        let progress = if span == 0 {
            1.0
        } else {
            ((step - self.warmup_steps) as f64 / span as f64).min(1.0)
        };
        self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (PI * progress).cos())
    }

    pub fn lr_at(&self, epoch: usize, step_in_epoch: usize, steps_per_epoch: usize) -> f64 {
        self.lr(epoch * steps_per_epoch + step_in_epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParameterStore<f64>, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("w", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = one_param(1.5);
        let mut g = Gradients::zeros_like(&s);
        adam_step(&mut s, &mut g, 1e-3, 0.5).unwrap();
        assert_eq!(s.get(id).item(), 1.5);
    }

    #[test]
    fn single_step_on_quadratic() {
        // f(w) = (w - 3)^2 at w = 1: g = -4, clipped to -0.5.
        let (mut s, id) = one_param(1.0);
        let mut g = Gradients::zeros_like(&s);
        g.tensors[0].data[0] = -4.0;
        let r = adam_step(&mut s, &mut g, 0.1, 0.5).unwrap();
        assert!(r.clipped);
        let gc: f64 = -0.5;
        let m_hat = (0.1 * gc) / 0.1;
        let v_hat = (0.001 * gc * gc) / 0.001;
        let want = 1.0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((s.get(id).item() - want).abs() < 1e-15);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut s, id) = one_param(2.0);
        let mut g = Gradients::zeros_like(&s);
        g.tensors[0].data[0] = f64::NAN;
        assert!(adam_step(&mut s, &mut g, 0.1, 0.5).is_err());
        assert_eq!(s.get(id).item(), 2.0);
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::from_epochs(2e-4, 1e-6, 2, 30, 10);
        assert!((s.lr(0) - 1e-5).abs() < 1e-18);
        assert!((s.lr(19) - 2e-4).abs() < 1e-18);
        assert!((s.lr(20) - 2e-4).abs() < 1e-18);
        assert!((s.lr(299) - 1e-6).abs() < 1e-9);
        assert_eq!(s.lr(299), 1e-6);
        for k in 20..299 {
            assert!(s.lr(k + 1) <= s.lr(k));
        }
        assert_eq!(s.lr_at(29, 9, 10), s.lr(299));
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = one_param(0.0);
        assert!(s.add("w", Tensor::scalar(1.0)).is_err());
    }
}
