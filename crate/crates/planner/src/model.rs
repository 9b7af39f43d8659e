//! BEV encoder, target fusion, autoregressive trajectory decoder and the
//! two-stage motion-state branch.

use parkbench_autodiff::nn::{uniform, FeedForward, LayerNorm, Linear, MultiHeadAttention, EMBED_INIT};
use parkbench_autodiff::{AttnMask, Element, Graph, ParamId, ParameterStore, Var};
use parkbench_autodiff::Tensor;
use parkbench_core::encoding::{fourier_encode_scalar, TokenSequence};
use parkbench_core::Pose2D;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Decoding, ModelConfig, TargetInput};
use crate::data::NetInput;
use crate::error::PlannerError;

/// Pre-norm residual block: self-attention, cross-attention, feed-forward.
#[derive(Debug, Clone)]
struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    fn new<T: Element>(
        store: &mut ParameterStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, PlannerError> {
        let c = cfg.channels;
        Ok(Self {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), c)?,
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), c, cfg.heads, rng)?,
            ln_cross: LayerNorm::new(store, &format!("{name}.ln_cross"), c)?,
            cross: MultiHeadAttention::new(store, &format!("{name}.cross"), c, cfg.heads, rng)?,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), c)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), c, cfg.ffn_hidden, c, rng)?,
        })
    }

    fn forward<T: Element>(&self, g: &mut Graph<T>, x: Var, memory: Var, mask: AttnMask) -> Result<Var, PlannerError> {
        let h = self.ln_self.forward(g, x)?;
        let (a, _) = self.self_attn.forward(g, h, h, mask)?;
        let x = g.add(x, a)?;
        let h = self.ln_cross.forward(g, x)?;
        let (a, _) = self.cross.forward(g, h, memory, AttnMask::None)?;
        let x = g.add(x, a)?;
        self.ffn_residual(g, x)
    }

    fn ffn_residual<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, PlannerError> {
        let h = self.ln_ffn.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        Ok(g.add(x, f)?)
    }
}

/// Cross-attention block of the fusion decoder.
#[derive(Debug, Clone)]
struct FusionLayer {
    ln_q: LayerNorm,
    cross: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct MotionBranch {
    queries: ParamId,
    hidden_norm: LayerNorm,
    stage1: FusionLayer,
    stage2: Vec<DecoderLayer>,
    norm: LayerNorm,
    head: Linear,
}

/// Per-layer key/value caches for incremental decoding.
struct KvCache {
    self_kv: Vec<Option<(Var, Var)>>,
    cross_kv: Vec<(Var, Var)>,
}

/// Graph handles produced by the encoder.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub f_bev: Var,
    pub f_enhanced: Var,
    /// Attention node of the last fusion layer.
    pub fusion_attention: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerOutput {
    pub tokens: TokenSequence,
    pub waypoints: Vec<Pose2D>,
    /// `[forward, backward]` per step, present with the motion branch.
    pub motion_probs: Option<Vec<[f64; 2]>>,
    /// Fusion attention weights, `heads x N x N` flattened, when requested.
    pub attention: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Planner {
    pub cfg: ModelConfig,
    patch_embed: Linear,
    heat_embed: Option<Linear>,
    bev_pos: ParamId,
    bev_norm: LayerNorm,
    target_mlp: Option<FeedForward>,
    queries: ParamId,
    fusion: Vec<FusionLayer>,
    fusion_norm: LayerNorm,
    tok_embed: ParamId,
    tok_pos: ParamId,
    traj: Vec<DecoderLayer>,
    traj_norm: LayerNorm,
    traj_head: Linear,
    value: Option<ValueEmbedding>,
    motion: Option<MotionBranch>,
}

/// Shared sinusoidal code of each value token's bin centre. Inputs add
/// `phi P` to the learned embedding; logits add `h R phi^T`.
#[derive(Debug, Clone)]
struct ValueEmbedding {
    /// `vocab x F`, zero rows for the special tokens.
    phi: Vec<f64>,
    features: usize,
    input: ParamId,
    output: ParamId,
}

impl ValueEmbedding {
    fn new<T: Element>(
        store: &mut ParameterStore<T>,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Self>, PlannerError> {
        let k = cfg.value_octaves;
        if k == 0 {
            return Ok(None);
        }
        let (n_u, vocab, f) = (cfg.codec.n_u as usize, cfg.codec.traj_vocab(), 2 * k);
        let mut phi = vec![0.0; vocab * f];
        for t in 0..n_u {
            let u = -1.0 + (t as f64 + 0.5) * 2.0 / n_u as f64;
            phi[t * f..(t + 1) * f].copy_from_slice(&fourier_encode_scalar(std::f64::consts::PI * u, k));
        }
        let limit = (6.0 / (f + cfg.channels) as f64).sqrt();
        Ok(Some(Self {
            phi,
            features: f,
            input: store.add("traj.value_in", uniform(&[f, cfg.channels], limit, rng))?,
            output: store.add("traj.value_out", uniform(&[cfg.channels, f], limit, rng))?,
        }))
    }

    fn rows<T: Element>(&self, ids: &[usize]) -> Result<Tensor<T>, PlannerError> {
        let f = self.features;
        let data = ids
            .iter()
            .flat_map(|&i| self.phi[i * f..(i + 1) * f].iter().map(|&v| T::lit(v)))
            .collect();
        Ok(Tensor::matrix(ids.len(), f, data)?)
    }

    fn transposed<T: Element>(&self) -> Result<Tensor<T>, PlannerError> {
        let f = self.features;
        let vocab = self.phi.len() / f;
        let data = (0..f)
            .flat_map(|j| (0..vocab).map(move |t| (t, j)))
            .map(|(t, j)| T::lit(self.phi[t * f + j]))
            .collect();
        Ok(Tensor::matrix(f, vocab, data)?)
    }
}

fn embedding<T: Element>(
    store: &mut ParameterStore<T>,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParamId, PlannerError> {
    Ok(store.add(name, uniform(&[rows, cols], EMBED_INIT, rng))?)
}

impl FusionLayer {
    fn new<T: Element>(
        store: &mut ParameterStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, PlannerError> {
        let c = cfg.channels;
        Ok(Self {
            ln_q: LayerNorm::new(store, &format!("{name}.ln_q"), c)?,
            cross: MultiHeadAttention::new(store, &format!("{name}.cross"), c, cfg.heads, rng)?,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), c)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), c, cfg.ffn_hidden, c, rng)?,
        })
    }

    /// Returns the updated queries and the raw attention node.
    fn forward<T: Element>(&self, g: &mut Graph<T>, x: Var, memory: Var) -> Result<(Var, Var), PlannerError> {
        let h = self.ln_q.forward(g, x)?;
        let (a, attn) = self.cross.forward(g, h, memory, AttnMask::None)?;
        let x = g.add(x, a)?;
        let h = self.ln_ffn.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        Ok((g.add(x, f)?, attn))
    }
}

impl Planner {
    /// Registers all parameters in `store`, initialised from `seed`.
    pub fn new<T: Element>(cfg: ModelConfig, store: &mut ParameterStore<T>, seed: u64) -> Result<Self, PlannerError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let c = cfg.channels;
        let n = cfg.spatial_tokens();
        let patch_cells = cfg.bev_patch * cfg.bev_patch;
        let vocab = cfg.codec.traj_vocab();
        let patch_embed = Linear::new(store, "bev.patch", patch_cells, c, true, rng)?;
        let heat_embed = match cfg.target_input {
            TargetInput::BevHeatmap => Some(Linear::new(store, "bev.heat", patch_cells, c, false, rng)?),
            TargetInput::Fourier => None,
        };
        let bev_pos = embedding(store, "bev.pos", n, c, rng)?;
        let bev_norm = LayerNorm::new(store, "bev.norm", c)?;
        let target_mlp = match cfg.target_input {
            TargetInput::Fourier => Some(FeedForward::new(store, "target.mlp", cfg.fourier.dim(), c, c, rng)?),
            TargetInput::BevHeatmap => None,
        };
        let queries = embedding(store, "fusion.queries", n, c, rng)?;
        let fusion = (0..cfg.fusion_layers)
            .map(|i| FusionLayer::new(store, &format!("fusion.{i}"), &cfg, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let fusion_norm = LayerNorm::new(store, "fusion.norm", c)?;
        let tok_embed = embedding(store, "traj.embed", vocab, c, rng)?;
        let tok_pos = embedding(store, "traj.pos", cfg.seq_len() - 1, c, rng)?;
        let traj = (0..cfg.traj_layers)
            .map(|i| DecoderLayer::new(store, &format!("traj.{i}"), &cfg, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let traj_norm = LayerNorm::new(store, "traj.norm", c)?;
        let traj_head = Linear::new(store, "traj.head", c, vocab, true, rng)?;
        let value = ValueEmbedding::new(store, &cfg, rng)?;
        let motion = if cfg.motion_branch {
            Some(MotionBranch {
                queries: embedding(store, "motion.queries", cfg.horizon, c, rng)?,
                hidden_norm: LayerNorm::new(store, "motion.hidden_norm", c)?,
                stage1: FusionLayer::new(store, "motion.stage1", &cfg, rng)?,
                stage2: (0..cfg.motion_layers)
                    .map(|i| DecoderLayer::new(store, &format!("motion.stage2.{i}"), &cfg, rng))
                    .collect::<Result<Vec<_>, _>>()?,
                norm: LayerNorm::new(store, "motion.norm", c)?,
                head: Linear::new(store, "motion.head", c, 2, true, rng)?,
            })
        } else {
            None
        };
        Ok(Self {
            cfg,
            patch_embed,
            heat_embed,
            bev_pos,
            bev_norm,
            target_mlp,
            queries,
            fusion,
            fusion_norm,
            tok_embed,
            tok_pos,
            traj,
            traj_norm,
            traj_head,
            value,
            motion,
        })
    }

    pub fn has_motion_branch(&self) -> bool {
        self.motion.is_some()
    }

    /// Patch embedding of the occupancy (plus the target heat map) with the
    /// learned positional embedding added.
    pub fn bev_encode<T: Element>(&self, g: &mut Graph<T>, input: &NetInput<T>) -> Result<Var, PlannerError> {
        let patches = g.constant(input.patches.clone())?;
        let mut f = self.patch_embed.forward(g, patches)?;
        match (&self.heat_embed, &input.heat) {
            (Some(embed), Some(heat)) => {
                let h = g.constant(heat.clone())?;
                let h = embed.forward(g, h)?;
                f = g.add(f, h)?;
            }
            (None, None) => {}
            _ => return Err(PlannerError::Input("heat-map channel does not match the model".into())),
        }
        let pos = g.param(self.bev_pos);
        Ok(g.add(f, pos)?)
    }

    /// `t_global` from the Fourier features, `1 x C`.
    pub fn target_global<T: Element>(&self, g: &mut Graph<T>, input: &NetInput<T>) -> Result<Option<Var>, PlannerError> {
        match (&self.target_mlp, &input.target_features) {
            (Some(mlp), Some(t)) => {
                if t.shape != [1, self.cfg.fourier.dim()] {
                    return Err(PlannerError::Input(format!("target features of shape {:?}", t.shape)));
                }
                let t = g.constant(t.clone())?;
                Ok(Some(mlp.forward(g, t)?))
            }
            (None, None) => Ok(None),
            _ => Err(PlannerError::Input("target features do not match the model".into())),
        }
    }

    /// Fusion queries `q_j = s_j + t_global`.
    pub fn fusion_queries<T: Element>(&self, g: &mut Graph<T>, t_global: Option<Var>) -> Result<Var, PlannerError> {
        let s = g.param(self.queries);
        Ok(match t_global {
            Some(t) => g.add_row(s, t)?,
            None => s,
        })
    }

    pub fn encode<T: Element>(&self, g: &mut Graph<T>, input: &NetInput<T>) -> Result<Encoded, PlannerError> {
        let f_bev = self.bev_encode(g, input)?;
        let memory = self.bev_norm.forward(g, f_bev)?;
        let t_global = self.target_global(g, input)?;
        let mut x = self.fusion_queries(g, t_global)?;
        let mut fusion_attention = None;
        for layer in &self.fusion {
            let (y, attn) = layer.forward(g, x, memory)?;
            x = y;
            fusion_attention = Some(attn);
        }
        Ok(Encoded {
            f_bev,
            f_enhanced: self.fusion_norm.forward(g, x)?,
            fusion_attention: fusion_attention.expect("at least one fusion layer"),
        })
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), PlannerError> {
        let vocab = self.cfg.codec.traj_vocab() as u32;
        if tokens.is_empty() || tokens.len() > self.cfg.seq_len() - 1 {
            return Err(PlannerError::Input(format!("decoder input of length {}", tokens.len())));
        }
        if tokens[0] != self.cfg.codec.traj_bos() {
            return Err(PlannerError::Input("decoder input must start with BOS".into()));
        }
        if let Some(t) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(PlannerError::Input(format!("token {t} outside vocabulary {vocab}")));
        }
        Ok(())
    }

    fn embed_tokens<T: Element>(&self, g: &mut Graph<T>, ids: &[usize]) -> Result<Var, PlannerError> {
        let emb = g.embedding(self.tok_embed, ids)?;
        let Some(v) = &self.value else {
            return Ok(emb);
        };
        let phi = g.constant(v.rows(ids)?)?;
        let p = g.param(v.input);
        let code = g.matmul(phi, p)?;
        Ok(g.add(emb, code)?)
    }

    fn token_logits<T: Element>(&self, g: &mut Graph<T>, hidden: Var) -> Result<Var, PlannerError> {
        let logits = self.traj_head.forward(g, hidden)?;
        let Some(v) = &self.value else {
            return Ok(logits);
        };
        let r = g.param(v.output);
        let proj = g.matmul(hidden, r)?;
        let phi_t = g.constant(v.transposed()?)?;
        let code = g.matmul(proj, phi_t)?;
        Ok(g.add(logits, code)?)
    }

    /// Teacher-forced pass: row `t` of the logits scores the token that
    /// follows `tokens[..=t]`. Returns `(logits, hidden)`.
    pub fn trajectory_decode<T: Element>(
        &self,
        g: &mut Graph<T>,
        f_enhanced: Var,
        tokens: &[u32],
    ) -> Result<(Var, Var), PlannerError> {
        self.check_tokens(tokens)?;
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let emb = self.embed_tokens(g, &ids)?;
        let pos_table = g.param(self.tok_pos);
        let pos = g.select_rows(pos_table, &(0..ids.len()).collect::<Vec<_>>())?;
        let mut x = g.add(emb, pos)?;
        for layer in &self.traj {
            x = layer.forward(g, x, f_enhanced, AttnMask::Causal)?;
        }
        let hidden = self.traj_norm.forward(g, x)?;
        let logits = self.token_logits(g, hidden)?;
        Ok((logits, hidden))
    }

    /// Motion logits `Q x 2` from the trajectory hidden states.
    pub fn motion_decode<T: Element>(&self, g: &mut Graph<T>, hidden: Var, f_enhanced: Var) -> Result<Var, PlannerError> {
        let m = self
            .motion
            .as_ref()
            .ok_or_else(|| PlannerError::Config("model has no motion branch".into()))?;
        let memory = m.hidden_norm.forward(g, hidden)?;
        let q = g.param(m.queries);
        let (mut x, _) = m.stage1.forward(g, q, memory)?;
        for layer in &m.stage2 {
            x = layer.forward(g, x, f_enhanced, AttnMask::None)?;
        }
        let x = m.norm.forward(g, x)?;
        Ok(m.head.forward(g, x)?)
    }

    fn decode_step<T: Element>(
        &self,
        g: &mut Graph<T>,
        cache: &mut KvCache,
        token: u32,
        pos: usize,
    ) -> Result<(Var, Var), PlannerError> {
        let emb = self.embed_tokens(g, &[token as usize])?;
        let pos_table = g.param(self.tok_pos);
        let p = g.select_rows(pos_table, &[pos])?;
        let mut x = g.add(emb, p)?;
        for (i, layer) in self.traj.iter().enumerate() {
            let h = layer.ln_self.forward(g, x)?;
            let sa = &layer.self_attn;
            let k = sa.k.forward(g, h)?;
            let v = sa.v.forward(g, h)?;
            let (k, v) = match cache.self_kv[i] {
                Some((kc, vc)) => (g.concat(&[kc, k], 0)?, g.concat(&[vc, v], 0)?),
                None => (k, v),
            };
            cache.self_kv[i] = Some((k, v));
            let (a, _) = sa.attend(g, h, k, v, AttnMask::None)?;
            x = g.add(x, a)?;
            let h = layer.ln_cross.forward(g, x)?;
            let (ck, cv) = cache.cross_kv[i];
            let (a, _) = layer.cross.attend(g, h, ck, cv, AttnMask::None)?;
            x = g.add(x, a)?;
            x = layer.ffn_residual(g, x)?;
        }
        let hidden = self.traj_norm.forward(g, x)?;
        let logits = self.token_logits(g, hidden)?;
        Ok((logits, hidden))
    }

    /// Greedy incremental decoding with key/value caches. Payload positions
    /// take the best value token; EOS closes the sequence. Returns the full
    /// token sequence and the hidden states of every decoder input.
    pub fn greedy_decode<T: Element>(&self, g: &mut Graph<T>, f_enhanced: Var) -> Result<(Vec<u32>, Var), PlannerError> {
        let codec = &self.cfg.codec;
        let payload = self.cfg.seq_len() - 2;
        let mut cache = KvCache {
            self_kv: vec![None; self.traj.len()],
            cross_kv: self
                .traj
                .iter()
                .map(|l| l.cross.project_kv(g, f_enhanced))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let mut tokens = vec![codec.traj_bos()];
        let mut hidden = Vec::with_capacity(payload + 1);
        for pos in 0..=payload {
            let (logits, h) = self.decode_step(g, &mut cache, tokens[pos], pos)?;
            hidden.push(h);
            let next = if pos < payload {
                let values = &g.value(logits).data[..codec.n_u as usize];
                match self.cfg.decoding {
                    Decoding::Argmax => argmax(values) as u32,
                    Decoding::Expected => expected_index(values),
                }
            } else {
                codec.traj_eos()
            };
            tokens.push(next);
        }
        let hidden = g.concat(&hidden, 0)?;
        Ok((tokens, hidden))
    }

    /// Autoregressive inference for one sample.
    pub fn predict<T: Element>(
        &self,
        store: &ParameterStore<T>,
        input: &NetInput<T>,
        with_attention: bool,
    ) -> Result<PlannerOutput, PlannerError> {
        let mut g = Graph::inference(store);
        let enc = self.encode(&mut g, input)?;
        let (tokens, hidden) = self.greedy_decode(&mut g, enc.f_enhanced)?;
        let seq = TokenSequence {
            tokens,
            n_values: self.cfg.codec.n_u,
        };
        let waypoints = self.cfg.codec.decode_waypoints(&seq)?;
        let motion_probs = if self.motion.is_some() {
            let logits = self.motion_decode(&mut g, hidden, enc.f_enhanced)?;
            let probs = g.softmax(logits, 1)?;
            Some(
                g.value(probs)
                    .data
                    .chunks(2)
                    .map(|r| [to_f64(r[0]), to_f64(r[1])])
                    .collect(),
            )
        } else {
            None
        };
        let attention = with_attention.then(|| {
            g.attention_weights(enc.fusion_attention)
                .expect("attention node")
                .iter()
                .map(|&v| to_f64(v))
                .collect()
        });
        Ok(PlannerOutput {
            tokens: seq,
            waypoints,
            motion_probs,
            attention,
        })
    }
}

fn to_f64<T: Element>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Rounded softmax-weighted mean index of `logits`.
pub fn expected_index<T: Element>(logits: &[T]) -> u32 {
    let vals: Vec<f64> = logits.iter().map(|&v| to_f64(v)).collect();
    let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m) = (0.0, 0.0);
    for (i, v) in vals.iter().enumerate() {
        let p = (v - top).exp();
        z += p;
        m += p * i as f64;
    }
    (m / z).round().clamp(0.0, (vals.len() - 1) as f64) as u32
}

/// Index of the largest entry; the first wins ties.
pub fn argmax<T: Element>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
