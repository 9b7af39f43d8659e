//! Turns stored demonstrations into network-ready samples.

use std::collections::BTreeMap;
use std::sync::Arc;

use parkbench_autodiff::{Element, Tensor};
use parkbench_core::dataset::{build_training_samples, rasterize_bev, BevOccupancy, TrainingSample, TrajectoryRecord};
use parkbench_core::encoding::encode_target;
use parkbench_core::scenario::{regenerate_vehicles, slot_at, LotConfig};
use parkbench_core::trajectory::DEFAULT_DT;
use parkbench_core::{OrientedBox, Pose2D};

use crate::config::{ModelConfig, TargetInput};
use crate::error::PlannerError;

/// A training window plus the parked vehicles of its scenario.
#[derive(Debug, Clone)]
pub struct PlannerSample {
    pub sample: TrainingSample,
    pub obstacles: Arc<[OrientedBox]>,
}

impl PlannerSample {
    pub fn bev(&self, cfg: &ModelConfig) -> BevOccupancy {
        rasterize_bev(&self.obstacles, &self.sample.ego, cfg.bev_extent(), cfg.bev_resolution)
    }
}

/// Windows of every record, with obstacles rebuilt from the record seed.
pub fn samples_from_records(
    records: &[TrajectoryRecord],
    lot: &LotConfig,
    horizon: usize,
    stride: usize,
) -> Result<Vec<PlannerSample>, PlannerError> {
    let slots = lot.build_lot();
    let mut cache: BTreeMap<(u64, u32), Arc<[OrientedBox]>> = BTreeMap::new();
    let mut out = Vec::new();
    for rec in records {
        let traj = rec
            .to_trajectory(DEFAULT_DT)
            .map_err(|e| PlannerError::Input(format!("{}: {e}", rec.scenario_id)))?;
        let slot = slot_at(&slots, &traj.target_slot)
            .ok_or_else(|| PlannerError::Input(format!("{}: target matches no slot", rec.scenario_id)))?;
        let obstacles = match cache.get(&(rec.seed, slot)) {
            Some(o) => o.clone(),
            None => {
                let o: Arc<[OrientedBox]> = regenerate_vehicles(rec.seed, slot, lot)?.into();
                cache.insert((rec.seed, slot), o.clone());
                o
            }
        };
        for sample in build_training_samples(&traj, horizon, stride)? {
            out.push(PlannerSample {
                sample,
                obstacles: obstacles.clone(),
            });
        }
    }
    Ok(out)
}

/// Non-overlapping `patch x patch` blocks of a zero-padded grid, one row per
/// block in row-major block order.
pub fn patchify<T: Element>(cells: &[u8], size: usize, cfg: &ModelConfig) -> Result<Tensor<T>, PlannerError> {
    if size != cfg.bev_size || cells.len() != size * size {
        return Err(PlannerError::Input(format!(
            "BEV is {size}x{size} with {} cells, expected {}x{}",
            cells.len(),
            cfg.bev_size,
            cfg.bev_size
        )));
    }
    let (p, hw, pad) = (cfg.bev_patch, cfg.feat_hw, cfg.bev_padding());
    let mut data = vec![T::zero(); hw * hw * p * p];
    for br in 0..hw {
        for bc in 0..hw {
            let base = (br * hw + bc) * p * p;
            for i in 0..p {
                let Some(r) = (br * p + i).checked_sub(pad).filter(|&r| r < size) else {
                    continue;
                };
                for j in 0..p {
                    let Some(c) = (bc * p + j).checked_sub(pad).filter(|&c| c < size) else {
                        continue;
                    };
                    if cells[r * size + c] != 0 {
                        data[base + i * p + j] = T::one();
                    }
                }
            }
        }
    }
    Ok(Tensor::matrix(hw * hw, p * p, data)?)
}

/// Hard square centred on the (ego-frame) target slot.
pub fn target_heatmap(target: &Pose2D, cfg: &ModelConfig) -> Result<BevOccupancy, PlannerError> {
    let half = cfg.heatmap_side / 2.0;
    let square = OrientedBox::new(*target, half, half).map_err(|e| PlannerError::Input(e.to_string()))?;
    Ok(rasterize_bev(&[square], &Pose2D::origin(), cfg.bev_extent(), cfg.bev_resolution))
}

/// Network inputs of one sample.
#[derive(Debug, Clone)]
pub struct NetInput<T> {
    pub patches: Tensor<T>,
    pub heat: Option<Tensor<T>>,
    pub target_features: Option<Tensor<T>>,
}

pub fn net_input<T: Element>(bev: &BevOccupancy, target: &Pose2D, cfg: &ModelConfig) -> Result<NetInput<T>, PlannerError> {
    let patches = patchify(&bev.cells, bev.size, cfg)?;
    Ok(match cfg.target_input {
        TargetInput::Fourier => {
            let f = encode_target(target, &cfg.fourier)?;
            NetInput {
                patches,
                heat: None,
                target_features: Some(Tensor::matrix(1, f.values.len(), f.values.iter().map(|&v| T::lit(v)).collect())?),
            }
        }
        TargetInput::BevHeatmap => {
            let h = target_heatmap(target, cfg)?;
            NetInput {
                patches,
                heat: Some(patchify(&h.cells, h.size, cfg)?),
                target_features: None,
            }
        }
    })
}
