//! Central finite-difference checks for every op and loss on the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::AutodiffError;
use crate::graph::{AttnMask, Graph, Var};
use crate::nn::uniform;
use crate::optim::ParameterStore;
use crate::tensor::Tensor;

pub const FD_EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError> + Send + Sync>;

/// A scalar-valued function of some inputs, checked at fixed inputs.
pub struct GradcheckCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub rel_error: f64,
    pub evaluations: usize,
    pub passed: bool,
}

impl GradcheckCase {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor<f64>>,
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs,
            build: Box::new(build),
        }
    }

    fn eval(&self, store: &ParameterStore<f64>, inputs: &[Tensor<f64>]) -> Result<f64, AutodiffError> {
        let mut g = Graph::inference(store);
        let vars = inputs
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = (self.build)(&mut g, &vars)?;
        Ok(g.value(out).item())
    }

    /// Compares the tape gradient with central differences. `corrupt`
    /// perturbs the analytic gradient by 1% to exercise the detector.
    pub fn run(&self, corrupt: bool) -> Result<CaseReport, AutodiffError> {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let vars = self
            .inputs
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = (self.build)(&mut g, &vars)?;
        let grads = g.backward(out)?;
        let mut analytic = Vec::new();
        for (v, t) in vars.iter().zip(&self.inputs) {
            match grads.of(*v) {
                Some(gt) => analytic.extend_from_slice(&gt.data),
                None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
            }
        }
        if corrupt {
            analytic.iter_mut().for_each(|x| *x *= 1.01);
        }
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut inputs = self.inputs.clone();
        let mut evaluations = 0;
        for i in 0..inputs.len() {
            for j in 0..inputs[i].numel() {
                let x0 = inputs[i].data[j];
                inputs[i].data[j] = x0 + FD_EPS;
                let up = self.eval(&store, &inputs)?;
                inputs[i].data[j] = x0 - FD_EPS;
                let down = self.eval(&store, &inputs)?;
                inputs[i].data[j] = x0;
                numeric.push((up - down) / (2.0 * FD_EPS));
                evaluations += 2;
            }
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel_error = norm(&diff) / (norm(&analytic) + norm(&numeric)).max(1e-6);
        Ok(CaseReport {
            name: self.name.clone(),
            rel_error,
            evaluations,
            passed: rel_error < REL_TOL,
        })
    }
}

/// Scalar projection `sum(y * w)` with fixed, non-uniform weights so every
/// output entry contributes a distinct amount.
pub fn project(g: &mut Graph<f64>, y: Var) -> Result<Var, AutodiffError> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect())?;
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Entries bounded away from zero, for the kink of `|x|`.
fn rand_nonzero(shape: &[usize], seed: u64) -> Tensor<f64> {
    rand(shape, seed).map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 })
}

/// One case per op and loss of the engine.
pub fn registry() -> Vec<GradcheckCase> {
    vec![
        GradcheckCase::new("matmul", vec![rand(&[3, 4], 1), rand(&[4, 2], 2)], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y)
        }),
        GradcheckCase::new("add", vec![rand(&[2, 3], 3), rand(&[2, 3], 4)], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y)
        }),
        GradcheckCase::new("sub", vec![rand(&[2, 3], 5), rand(&[2, 3], 6)], |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y)
        }),
        GradcheckCase::new("mul", vec![rand(&[2, 3], 7), rand(&[2, 3], 8)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y)
        }),
        GradcheckCase::new("add_row", vec![rand(&[3, 4], 9), rand(&[1, 4], 10)], |g, v| {
            let y = g.add_row(v[0], v[1])?;
            project(g, y)
        }),
        GradcheckCase::new("scale", vec![rand(&[2, 2], 11)], |g, v| {
            let y = g.scale(v[0], -1.7);
            project(g, y)
        }),
        GradcheckCase::new("concat_rows", vec![rand(&[2, 3], 12), rand(&[1, 3], 13)], |g, v| {
            let y = g.concat(&[v[0], v[1], v[0]], 0)?;
            project(g, y)
        }),
        GradcheckCase::new("concat_cols", vec![rand(&[2, 3], 14), rand(&[2, 1], 15)], |g, v| {
            let y = g.concat(&[v[1], v[0]], 1)?;
            project(g, y)
        }),
        GradcheckCase::new("embedding_lookup", vec![rand(&[5, 3], 16)], |g, v| {
            let y = g.select_rows(v[0], &[4, 0, 4, 2])?;
            project(g, y)
        }),
        GradcheckCase::new("slice_cols", vec![rand(&[3, 5], 17)], |g, v| {
            let y = g.slice_cols(v[0], 1, 4)?;
            project(g, y)
        }),
        GradcheckCase::new("softmax_rows", vec![rand(&[3, 4], 18)], |g, v| {
            let y = g.softmax(v[0], 1)?;
            project(g, y)
        }),
        GradcheckCase::new("softmax_cols", vec![rand(&[4, 3], 19)], |g, v| {
            let y = g.softmax(v[0], 0)?;
            project(g, y)
        }),
        GradcheckCase::new(
            "layer_norm",
            vec![rand(&[3, 5], 20), rand(&[1, 5], 21), rand(&[1, 5], 22)],
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                project(g, y)
            },
        ),
        GradcheckCase::new("gelu", vec![rand(&[3, 4], 23).map(|x| 3.0 * x)], |g, v| {
            let y = g.gelu(v[0]);
            project(g, y)
        }),
        GradcheckCase::new(
            "attention",
            vec![rand(&[3, 4], 24), rand(&[5, 4], 25), rand(&[5, 4], 26)],
            |g, v| {
                let y = g.attention(v[0], v[1], v[2], 2, AttnMask::None)?;
                project(g, y)
            },
        ),
        GradcheckCase::new(
            "attention_causal",
            vec![rand(&[4, 6], 27), rand(&[4, 6], 28), rand(&[4, 6], 29)],
            |g, v| {
                let y = g.attention(v[0], v[1], v[2], 3, AttnMask::Causal)?;
                project(g, y)
            },
        ),
        GradcheckCase::new("attention_self", vec![rand(&[4, 4], 30)], |g, v| {
            let y = g.attention(v[0], v[0], v[0], 2, AttnMask::Causal)?;
            project(g, y)
        }),
        GradcheckCase::new("sum", vec![rand(&[2, 3], 31)], |g, v| {
            let y = g.sum(v[0]);
            let y2 = g.mul(y, y)?;
            Ok(y2)
        }),
        GradcheckCase::new("mean", vec![rand(&[2, 3], 32)], |g, v| {
            let y = g.mean(v[0]);
            let y2 = g.mul(y, y)?;
            Ok(y2)
        }),
        GradcheckCase::new("mse", vec![rand(&[3, 2], 33)], |g, v| {
            g.mse(v[0], &rand(&[3, 2], 34))
        }),
        GradcheckCase::new("cross_entropy", vec![rand(&[4, 5], 35).map(|x| 2.0 * x)], |g, v| {
            g.cross_entropy(v[0], &[Some(2), None, Some(0), Some(4)])
        }),
        GradcheckCase::new("masked_l1", vec![rand_nonzero(&[2, 4], 36)], |g, v| {
            g.masked_l1(v[0], &[true, false, true, true, false, true, true, false])
        }),
        GradcheckCase::new("soft_argmax", vec![rand(&[3, 6], 37)], |g, v| {
            let p = g.softmax(v[0], 1)?;
            let centers = Tensor::new(vec![6, 1], (0..6).map(|t| -1.0 + (t as f64 + 0.5) / 3.0).collect())?;
            let c = g.constant(centers)?;
            let e = g.matmul(p, c)?;
            g.mse(e, &Tensor::new(vec![3, 1], vec![0.2, -0.4, 0.9])?)
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_passes_and_detects_corruption() {
        for case in registry() {
            let r = case.run(false).unwrap();
            assert!(r.passed, "{}: {}", r.name, r.rel_error);
            let bad = case.run(true).unwrap();
            assert!(!bad.passed, "{} corruption missed", r.name);
        }
    }
}
