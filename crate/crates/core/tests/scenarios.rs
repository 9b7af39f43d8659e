use std::collections::BTreeSet;

use parkbench_core::dataset::{count_gear_shifts, extract_valid_slice, label_motion_states};
use parkbench_core::scenario::{generate_scenario, parking_success, regenerate_vehicles, spawn_grid, LotConfig};
use parkbench_core::{obb_intersect, OrientedBox};

/// Point-in-box containment check on a dense sample of both footprints.
fn sampled_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let n = 24;
    let probe = |p: &OrientedBox, q: &OrientedBox| {
        (0..=n).any(|i| {
            (0..=n).any(|j| {
                let lx = -p.half_length + 2.0 * p.half_length * i as f64 / n as f64;
                let ly = -p.half_width + 2.0 * p.half_width * j as f64 / n as f64;
                let (x, y) = p.center.transform_point(lx, ly);
                q.contains_point(x, y)
            })
        })
    };
    probe(a, b) || probe(b, a)
}

#[test]
fn generated_experts_are_valid() {
    let cfg = LotConfig::default();
    let grid = spawn_grid(&cfg);
    let mut shifts = BTreeSet::new();
    for seed in 0..48u64 {
        let slot = (seed % 16) as u32;
        let g = (seed as usize * 5) % grid.len();
        let (scenario, traj) = generate_scenario(seed, &cfg, slot, g).unwrap();
        let target = scenario.target_slot();
        assert!(parking_success(&traj.final_pose().unwrap(), target));
        for f in &traj.frames {
            let ego = cfg.ego_box(f.pose);
            for v in &scenario.static_vehicles {
                assert!(!sampled_overlap(&ego, v), "seed {seed}: footprint overlaps a parked vehicle");
            }
        }
        let spawn = cfg.ego_box(scenario.ego_spawn);
        assert!(scenario.static_vehicles.iter().all(|v| !obb_intersect(&spawn, v)));
        for w in traj.frames.windows(2) {
            assert!(w[0].pose.distance(&w[1].pose) <= 1.8 * traj.dt + 1e-9);
        }
        assert_eq!(regenerate_vehicles(seed, slot, &cfg).unwrap(), scenario.static_vehicles);
        let slice = extract_valid_slice(&traj).unwrap();
        shifts.insert(count_gear_shifts(&label_motion_states(&slice.speeds())));
    }
    assert_eq!(shifts, BTreeSet::from([0, 1, 2, 3]));
}
