//! Seeded batch generation: scenarios, valid slices, k-shot filtering and
//! the per-category census.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{extract_valid_slice, trajectory_kshot, FilterTable, KShot, TrajectoryRecord};
use crate::error::ScenarioError;
use crate::scenario::{generate_scenario, mix_seed, spawn_grid, LotConfig};

/// Scenario seed, target slot and spawn cell of the `index`-th scenario.
/// Slots cycle fastest so every slot appears once per 16 scenarios.
pub fn scenario_plan(seed: u64, index: usize, slots: usize, grid: usize) -> (u64, u32, usize) {
    let slot = (index % slots) as u32;
    let cell = (index / slots + index * 7) % grid;
    (mix_seed(seed, index as u64), slot, cell)
}

/// Why a planned scenario produced no record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub scenario_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub requested: usize,
    pub records: Vec<TrajectoryRecord>,
    /// Kept trajectories per category.
    pub census: BTreeMap<KShot, usize>,
    /// Scenarios with no feasible expert plan.
    pub infeasible: Vec<Rejection>,
    /// Feasible demonstrations rejected by the filter table.
    pub filtered: Vec<Rejection>,
}

impl Corpus {
    pub fn infeasible_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.infeasible.len() as f64 / self.requested as f64
        }
    }
}

/// Generates `count` scenarios and keeps the slices that pass `filter`.
pub fn generate_corpus(seed: u64, count: usize, lot: &LotConfig, filter: &FilterTable) -> Result<Corpus, ScenarioError> {
    lot.validate()?;
    let slots = lot.build_lot().len();
    let grid = spawn_grid(lot).len();
    let mut corpus = Corpus {
        requested: count,
        records: Vec::new(),
        census: KShot::ALL.iter().map(|&k| (k, 0)).collect(),
        infeasible: Vec::new(),
        filtered: Vec::new(),
    };
    for index in 0..count {
        let (s, slot, cell) = scenario_plan(seed, index, slots, grid);
        let traj = match generate_scenario(s, lot, slot, cell) {
            Ok((_, traj)) => traj,
            Err(e @ ScenarioError::Infeasible { .. }) => {
                corpus.infeasible.push(Rejection {
                    index,
                    scenario_id: None,
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let reject = |reason: String| Rejection {
            index,
            scenario_id: Some(traj.scenario_ref.clone()),
            reason,
        };
        let slice = match extract_valid_slice(&traj) {
            Ok(s) => s,
            Err(e) => {
                corpus.filtered.push(reject(e.to_string()));
                continue;
            }
        };
        let Some(k) = trajectory_kshot(&slice).filter(|_| filter.keeps(&slice)) else {
            corpus.filtered.push(reject("outside the filter table".into()));
            continue;
        };
        *corpus.census.entry(k).or_default() += 1;
        corpus.records.push(TrajectoryRecord::from_trajectory(&slice, s));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_cycles_slots_and_stays_in_grid() {
        let plans: Vec<_> = (0..64).map(|i| scenario_plan(1, i, 16, 33)).collect();
        for (i, &(_, slot, cell)) in plans.iter().enumerate() {
            assert_eq!(slot as usize, i % 16);
            assert!(cell < 33);
        }
        assert_ne!(plans[0].0, plans[1].0);
        assert_eq!(scenario_plan(1, 5, 16, 33), plans[5]);
    }

    #[test]
    fn census_matches_records() {
        let c = generate_corpus(3, 20, &LotConfig::default(), &FilterTable::default()).unwrap();
        assert_eq!(c.census.values().sum::<usize>(), c.records.len());
        assert_eq!(c.records.len() + c.infeasible.len() + c.filtered.len(), 20);
    }
}
