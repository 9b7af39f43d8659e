//! Parameterised building blocks on top of the tape.

use rand::Rng;

use crate::error::AutodiffError;
use crate::graph::{AttnMask, Graph, Var};
use crate::optim::{ParamId, ParameterStore};
use crate::tensor::{Element, Tensor};

pub const EMBED_INIT: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

pub fn uniform<T: Element>(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| T::lit(rng.random_range(-limit..=limit))).collect(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<T: Element>(
        store: &mut ParameterStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(&[fan_in, fan_out], limit, rng))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Element>(store: &mut ParameterStore<T>, name: &str, dim: usize) -> Result<Self, AutodiffError> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[1, dim], T::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[1, dim]))?,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, AutodiffError> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Multi-head attention with input and output projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Element>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng)?,
            heads,
        })
    }

    /// Projects keys and values once so they can be reused across calls.
    pub fn project_kv<T: Element>(&self, g: &mut Graph<T>, memory: Var) -> Result<(Var, Var), AutodiffError> {
        Ok((self.k.forward(g, memory)?, self.v.forward(g, memory)?))
    }

    /// Attention over pre-projected keys and values. Returns the projected
    /// output and the raw attention node (for its weights).
    pub fn attend<T: Element>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        k: Var,
        v: Var,
        mask: AttnMask,
    ) -> Result<(Var, Var), AutodiffError> {
        let q = self.q.forward(g, x)?;
        let a = g.attention(q, k, v, self.heads, mask)?;
        Ok((self.o.forward(g, a)?, a))
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        memory: Var,
        mask: AttnMask,
    ) -> Result<(Var, Var), AutodiffError> {
        let (k, v) = self.project_kv(g, memory)?;
        self.attend(g, x, k, v, mask)
    }
}

/// Two-layer GELU feed-forward block.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Element>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, out, true, rng)?,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, AutodiffError> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_shapes_and_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::<f32>::new();
        let l = Linear::new(&mut s, "l", 5, 3, true, &mut rng).unwrap();
        assert_eq!(s.num_scalars(), 18);
        let limit = (6.0f32 / 8.0).sqrt();
        assert!(s.get(l.w).data.iter().all(|v| v.abs() <= limit));
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::zeros(&[4, 5])).unwrap();
        let y = l.forward(&mut g, x).unwrap();
        assert_eq!(g.shape(y), &[4, 3]);
    }

    #[test]
    fn fresh_layer_norm_standardises_rows() {
        let mut s = ParameterStore::<f64>::new();
        let ln = LayerNorm::new(&mut s, "ln", 4).unwrap();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let y = ln.forward(&mut g, x).unwrap();
        let v = &g.value(y).data;
        assert!(v.iter().sum::<f64>().abs() < 1e-12);
        assert!((v.iter().map(|a| a * a).sum::<f64>() / 4.0 - 1.0).abs() < 1e-4);
    }
}
