mod common;

use common::{config_for, fixture};
use parkbench_planner::train::{predict_all, train};
use parkbench_planner::{Ablation, LossWeights, TrainStatus};

#[test]
fn memorizes_a_single_sample() {
    let (mc, mut tc) = config_for(Ablation::Set8);
    let samples = fixture(&mc, 4, 40);
    let one = &samples[3..4];
    tc.epochs = 300;
    tc.batch = 1;
    tc.lr_peak = 1e-3;
    tc.lr_floor = 1e-4;
    tc.warmup_epochs = 0;
    tc.scheduled_sampling = false;
    tc.noise_pos = 0.0;
    tc.noise_yaw_deg = 0.0;
    let out = train(one, &[], &mc, &tc, &LossWeights::default(), |_| {}).unwrap();
    assert_eq!(out.status, TrainStatus::Completed);
    let first = out.step_losses[0];
    let last = *out.step_losses.last().unwrap();
    assert!(last < 0.01 * first, "{first} -> {last}");
    let pred = &predict_all(&out.model, &out.last, one).unwrap()[0];
    assert_eq!(pred.tokens.tokens, one[0].tokens);
    let gt = one[0].sample.sample.filled_directions();
    let dirs: Vec<_> = pred.motion_probs.as_ref().unwrap().iter().map(|&p| parkbench_core::metrics::argmax_direction(p)).collect();
    assert_eq!(dirs, gt);
}

fn short_run(set: Ablation, epochs: usize) -> parkbench_planner::TrainOutcome {
    let (mc, mut tc) = config_for(set);
    let samples = fixture(&mc, 6, 25);
    let (tr, va) = samples.split_at(samples.len() - 4);
    tc.epochs = epochs;
    tc.batch = 4;
    tc.seed = 9;
    train(tr, va, &mc, &tc, &LossWeights::default(), |_| {}).unwrap()
}

#[test]
fn training_is_deterministic() {
    let a = short_run(Ablation::Set8, 2);
    let b = short_run(Ablation::Set8, 2);
    let strip = |o: &parkbench_planner::TrainOutcome| {
        o.trace.iter().map(|t| (t.loss_total, t.lr, t.val_l2, t.val_motion_acc)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.step_losses, b.step_losses);
    let pa: Vec<_> = a.last.iter().map(|(_, _, t)| t.data.clone()).collect();
    let pb: Vec<_> = b.last.iter().map(|(_, _, t)| t.data.clone()).collect();
    assert_eq!(pa, pb);
}

#[test]
fn sampling_switch_only_matters_once_the_schedule_starts() {
    let with = short_run(Ablation::Set8, 1);
    let without = short_run(Ablation::Set7, 1);
    assert_eq!(with.trace[0].teacher_prob, 1.0);
    assert_eq!(with.step_losses, without.step_losses);
}

#[test]
fn best_checkpoint_follows_validation() {
    let out = short_run(Ablation::Set6, 3);
    let best = out.best_epoch.unwrap();
    let l2 = |e: usize| out.trace[e - 1].val_l2.unwrap();
    assert!((1..=3).all(|e| l2(best) <= l2(e)));
    assert!(out.trace.iter().all(|t| t.val_motion_acc.is_none()));
}

#[test]
fn divergence_is_reported_with_finite_parameters() {
    let (mc, mut tc) = config_for(Ablation::Set8);
    let samples = fixture(&mc, 4, 40);
    tc.epochs = 3;
    tc.batch = 2;
    tc.warmup_epochs = 0;
    tc.lr_peak = 1e36;
    tc.lr_floor = 1e36;
    let out = train(&samples[..4], &[], &mc, &tc, &LossWeights::default(), |_| {}).unwrap();
    assert!(matches!(out.status, TrainStatus::Diverged { .. }), "{:?}", out.status);
    assert!(out.best.iter().all(|(_, _, t)| t.is_finite()));
}
