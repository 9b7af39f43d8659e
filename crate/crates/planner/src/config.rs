use std::fmt;
use std::str::FromStr;

use parkbench_core::encoding::{FourierConfig, SequenceCodec};
use serde::{Deserialize, Serialize};

use crate::error::PlannerError;

/// How the target slot reaches the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetInput {
    /// Fourier features projected to a global target vector.
    Fourier,
    /// A rasterised target square as a second BEV channel.
    BevHeatmap,
}

/// How a value token is read off the trajectory logits during inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    /// Most probable value token.
    Argmax,
    /// Token nearest the expected value, the soft-argmax the waypoint loss uses.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub bev_size: usize,
    pub bev_resolution: f64,
    pub bev_patch: usize,
    pub feat_hw: usize,
    pub channels: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub fusion_layers: usize,
    pub traj_layers: usize,
    pub motion_layers: usize,
    pub horizon: usize,
    pub codec: SequenceCodec,
    pub fourier: FourierConfig,
    pub target_input: TargetInput,
    pub motion_branch: bool,
    /// Side of the target square in the heat-map input, meters.
    pub heatmap_side: f64,
    /// Sinusoid octaves of the shared value embedding of trajectory tokens;
    /// 0 leaves every token with an independent embedding.
    pub value_octaves: usize,
    pub decoding: Decoding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bev_size: 200,
            bev_resolution: 0.1,
            bev_patch: 13,
            feat_hw: 16,
            channels: 64,
            heads: 4,
            ffn_hidden: 128,
            fusion_layers: 1,
            traj_layers: 2,
            motion_layers: 1,
            horizon: 30,
            codec: SequenceCodec::default(),
            fourier: FourierConfig::default(),
            target_input: TargetInput::Fourier,
            motion_branch: true,
            heatmap_side: 1.0,
            value_octaves: 9,
            decoding: Decoding::Argmax,
        }
    }
}

impl ModelConfig {
    pub fn tokens_per_step(&self) -> usize {
        self.codec.tokens_per_step()
    }

    /// Full trajectory sequence length including BOS and EOS.
    pub fn seq_len(&self) -> usize {
        self.codec.traj_len(self.horizon)
    }

    /// Number of spatial tokens `N = H * W`.
    pub fn spatial_tokens(&self) -> usize {
        self.feat_hw * self.feat_hw
    }

    /// Zero padding on each side of the BEV before patching.
    pub fn bev_padding(&self) -> usize {
        (self.feat_hw * self.bev_patch - self.bev_size) / 2
    }

    pub fn bev_extent(&self) -> f64 {
        self.bev_size as f64 * self.bev_resolution / 2.0
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: String| Err(PlannerError::Config(m));
        let covered = self.feat_hw * self.bev_patch;
        if self.bev_patch == 0 || covered < self.bev_size || covered - self.bev_patch >= self.bev_size {
            return bad(format!(
                "{} patches of {} cells do not tile a {}-cell BEV",
                self.feat_hw, self.bev_patch, self.bev_size
            ));
        }
        if (covered - self.bev_size) % 2 != 0 {
            return bad(format!("padding {} is not symmetric", covered - self.bev_size));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("{} channels over {} heads", self.channels, self.heads));
        }
        if self.horizon == 0 || self.traj_layers == 0 || self.fusion_layers == 0 {
            return bad("horizon and layer counts must be positive".into());
        }
        if self.motion_branch && self.motion_layers == 0 {
            return bad("motion branch needs at least one stage-2 layer".into());
        }
        if self.codec.n_u < 2 || self.codec.n_v < 2 {
            return bad("vocabularies need at least two value tokens".into());
        }
        Ok(())
    }
}

/// Waypoint objective on the trajectory logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointObjective {
    /// MSE of soft-argmax expectations only.
    Mse,
    /// Token cross-entropy only.
    TokenCe,
    /// Sum of both.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub waypoints: f64,
    pub motion: f64,
    pub smooth: f64,
    pub smooth_window: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            waypoints: 1.0,
            motion: 1.0,
            smooth: 0.1,
            smooth_window: 2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if [self.waypoints, self.motion, self.smooth].iter().any(|w| !(*w >= 0.0)) {
            return Err(PlannerError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_peak: f64,
    pub lr_floor: f64,
    pub warmup_epochs: usize,
    pub clip: f64,
    pub scheduled_sampling: bool,
    pub ss_start_epoch: usize,
    pub ss_end_epoch: usize,
    pub noise_pos: f64,
    pub noise_yaw_deg: f64,
    pub objective: WaypointObjective,
    pub seed: u64,
    /// Validation samples scored per epoch; `None` scores all.
    pub val_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 24,
            lr_peak: 2e-4,
            lr_floor: 1e-6,
            warmup_epochs: 2,
            clip: 0.5,
            scheduled_sampling: true,
            ss_start_epoch: 5,
            ss_end_epoch: 25,
            noise_pos: 0.3,
            noise_yaw_deg: 2.0,
            objective: WaypointObjective::Both,
            seed: 0,
            val_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::Config(m.to_string()));
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be positive");
        }
        if self.ss_start_epoch >= self.ss_end_epoch {
            return bad("scheduled sampling needs start < end");
        }
        if !(self.lr_peak > 0.0 && self.lr_floor >= 0.0 && self.lr_floor <= self.lr_peak) {
            return bad("learning rate endpoints out of order");
        }
        if !(self.clip > 0.0) || self.noise_pos < 0.0 || self.noise_yaw_deg < 0.0 {
            return bad("clip must be positive and noise non-negative");
        }
        Ok(())
    }
}

/// How demonstrations become train and validation windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSplit {
    /// Fraction of scenarios used for training.
    pub train_ratio: f64,
    /// Window start spacing in frames.
    pub stride: usize,
}

impl Default for DataSplit {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            stride: 1,
        }
    }
}

/// Ablation presets. Odd sets keep teacher forcing throughout; sets
/// 1-4 feed the target as a BEV heat map; sets 3, 4, 7, 8 add heading tokens
/// and the motion branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Set1,
    Set2,
    Set3,
    Set4,
    Set5,
    Set6,
    Set7,
    Set8,
}

impl Ablation {
    pub const ALL: [Ablation; 8] = [
        Ablation::Set1,
        Ablation::Set2,
        Ablation::Set3,
        Ablation::Set4,
        Ablation::Set5,
        Ablation::Set6,
        Ablation::Set7,
        Ablation::Set8,
    ];

    fn index(self) -> usize {
        self as usize + 1
    }

    pub fn target_input(self) -> TargetInput {
        if self.index() <= 4 {
            TargetInput::BevHeatmap
        } else {
            TargetInput::Fourier
        }
    }

    /// Heading tokens and the motion branch come together.
    pub fn dual_branch(self) -> bool {
        matches!(self.index(), 3 | 4 | 7 | 8)
    }

    pub fn scheduled_sampling(self) -> bool {
        self.index() % 2 == 0
    }

    pub fn apply(self, model: &mut ModelConfig, train: &mut TrainConfig) {
        model.target_input = self.target_input();
        model.motion_branch = self.dual_branch();
        model.codec.with_heading = self.dual_branch();
        train.scheduled_sampling = self.scheduled_sampling();
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "set{}", self.index())
    }
}

impl FromStr for Ablation {
    type Err = PlannerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let named = match s {
            "full" => Some(Ablation::Set8),
            "traj_only" => Some(Ablation::Set6),
            "bev_target" => Some(Ablation::Set4),
            "no_sched" => Some(Ablation::Set7),
            _ => None,
        };
        if let Some(a) = named {
            return Ok(a);
        }
        s.strip_prefix("set")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| (1..=8).contains(n))
            .map(|n| Ablation::ALL[n - 1])
            .ok_or_else(|| PlannerError::Config(format!("unknown ablation {s:?}")))
    }
}
