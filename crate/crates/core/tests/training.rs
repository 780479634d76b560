//! End-to-end trainer behavior on a small separable stream: determinism,
//! bit-exact frozen prefixes, resume equivalence, and baseline plumbing.

mod common;

use lightcl_core::arch::{build_model, Arch};
use lightcl_core::baselines::{
    train_er, train_ewc, train_joint, train_sgd, BaselineConfig, ErConfig, EwcConfig,
};
use lightcl_core::lightcl::{
    run_continual, train_task, union_positions, LightClConfig, PositionSet, ResumeState,
    SelectionBatch, TrainMode,
};
use lightcl_core::model::Model;
use lightcl_core::stream::{build_stream, DatasetName, EvalMode, StreamConfig, TaskStream};

fn stream(num_tasks: usize, seed: u64) -> TaskStream<f32> {
    let raw = common::patterned_raw(2 * num_tasks, 30, 10, 8, 7);
    let config = StreamConfig {
        dataset: DatasetName::SplitMnist,
        num_tasks,
        classes_per_task: 2,
        eval_mode: EvalMode::Til,
        seed,
        subsample_fraction: 1.0,
    };
    build_stream(&raw, &config).unwrap()
}

fn model(stream: &TaskStream<f32>, seed: u64) -> Model<f32> {
    let (c, h, w) = stream.input_shape();
    build_model(Arch::SmallCnn, (c, h, w), stream.num_classes, seed).unwrap()
}

fn base_cfg(seed: u64) -> BaselineConfig {
    BaselineConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 0.05,
        seed,
    }
}

fn lightcl_cfg(seed: u64) -> LightClConfig {
    LightClConfig {
        mode: TrainMode::Scratch,
        fz_layer: Some("conv1".into()),
        freeze_norm_stats: true,
        ratio: 0.25,
        beta: 2e-4,
        mem_size: 8,
        epochs: 2,
        batch_size: 16,
        learning_rate: 0.05,
        selection_batch: SelectionBatch::Last,
        regulation: true,
        seed,
    }
}

fn digests(m: &Model<f32>) -> Vec<u64> {
    (0..m.units().len()).map(|u| m.unit_digest(u)).collect()
}

#[test]
fn sgd_is_deterministic_and_fills_the_matrix() {
    let s = stream(2, 3);
    let a = train_sgd(model(&s, 9), &s, &base_cfg(3)).unwrap();
    let b = train_sgd(model(&s, 9), &s, &base_cfg(3)).unwrap();
    assert_eq!(digests(a.final_model()), digests(b.final_model()));
    assert_eq!(a.matrix.columns, b.matrix.columns);
    assert_eq!(a.matrix.num_columns(), 2);
    assert!(a.aa >= 0.0 && a.aa <= 1.0);
    assert_eq!(a.per_task.len(), 2);
    assert!(a.positions.is_empty());
    // Different ordering seed must actually change the trajectory.
    let c = train_sgd(model(&s, 9), &s, &base_cfg(4)).unwrap();
    assert_ne!(digests(a.final_model()), digests(c.final_model()));
}

#[test]
fn frozen_prefix_is_bit_exact_across_later_tasks() {
    let s = stream(3, 5);
    let outcome = run_continual(model(&s, 11), &s, &lightcl_cfg(5), None).unwrap();
    assert_eq!(outcome.checkpoints.len(), 3);
    // Scratch mode freezes at the end of task 1; from then on the prefix
    // (parameters and running statistics) must never change again.
    let reference = outcome.checkpoints[0].frozen_digest();
    for ckpt in &outcome.checkpoints[1..] {
        assert_eq!(ckpt.frozen_digest(), reference);
    }
    let final_model = outcome.final_model();
    let conv1 = final_model.unit_index("conv1").unwrap();
    assert!(!final_model.is_trainable(conv1));
    // Regulation was active from task 2 and the position set only grows.
    assert!(outcome.per_task[1].reg_loss_final.is_some());
    assert!(!outcome.positions.is_empty());
    let sizes = &outcome.i_size_trajectory;
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn resumed_run_matches_the_uninterrupted_one() {
    let s = stream(3, 6);
    let cfg = lightcl_cfg(6);
    let full = run_continual(model(&s, 13), &s, &cfg, None).unwrap();

    // Interrupt after task 1, then continue from the checkpointed state.
    let mut partial_model = model(&s, 13);
    let outcome1 = train_task(&mut partial_model, &s.tasks[0], &PositionSet::new(), &cfg).unwrap();
    let positions = union_positions(&PositionSet::new(), &outcome1.new_positions);
    let state = ResumeState {
        completed: vec![partial_model],
        positions: positions.clone(),
        per_task: vec![outcome1.summary],
        i_size_trajectory: vec![positions.len()],
    };
    let resumed = run_continual(model(&s, 13), &s, &cfg, Some(state)).unwrap();

    assert_eq!(full.checkpoints.len(), resumed.checkpoints.len());
    for (a, b) in full.checkpoints.iter().zip(&resumed.checkpoints) {
        assert_eq!(digests(a), digests(b));
    }
    assert_eq!(full.matrix.columns, resumed.matrix.columns);
    assert_eq!(full.positions, resumed.positions);
    assert_eq!(full.aa, resumed.aa);
}

#[test]
fn freezing_through_the_head_makes_training_a_parameter_noop() {
    let s = stream(2, 4);
    let mut cfg = lightcl_cfg(4);
    cfg.mode = TrainMode::Pretrained;
    cfg.fz_layer = Some("head".into());
    let initial = model(&s, 21);
    let want = digests(&initial);
    let outcome = run_continual(initial, &s, &cfg, None).unwrap();
    for ckpt in &outcome.checkpoints {
        assert_eq!(digests(ckpt), want);
    }
    // No eligible layers means no positions and no regulation terms.
    assert!(outcome.positions.is_empty());
    assert!(outcome.per_task.iter().all(|t| t.reg_loss_final.is_none()));
}

#[test]
fn joint_trains_one_phase_over_all_tasks() {
    let s = stream(2, 8);
    let outcome = train_joint(model(&s, 15), &s, &base_cfg(8)).unwrap();
    assert_eq!(outcome.checkpoints.len(), 1);
    assert_eq!(outcome.matrix.num_columns(), 1);
    let column = &outcome.matrix.columns[0];
    assert_eq!(column.len(), 2);
    let mean = column.iter().sum::<f64>() / column.len() as f64;
    assert!((outcome.aa - mean).abs() < 1e-15);
    assert_eq!(outcome.per_task.len(), 1);
    assert_eq!(outcome.per_task[0].task_id, 0);
}

#[test]
fn importance_penalty_restrains_drift_from_the_anchor() {
    let s = stream(2, 9);
    let plain = EwcConfig {
        base: base_cfg(9),
        lambda: 0.0,
        fisher_samples: 20,
    };
    let strong = EwcConfig {
        base: base_cfg(9),
        lambda: 200.0,
        fisher_samples: 20,
    };
    let drift = |outcome: &lightcl_core::outcome::RunOutcome<f32>| -> f64 {
        let first = &outcome.checkpoints[0];
        let last = outcome.final_model();
        let mut sum = 0.0f64;
        for u in 0..first.units().len() {
            for (a, b) in first
                .unit_param_slices(u)
                .into_iter()
                .zip(last.unit_param_slices(u))
            {
                for (&x, &y) in a.iter().zip(b.iter()) {
                    let d = (x - y) as f64;
                    sum += d * d;
                }
            }
        }
        sum
    };
    let d_plain = drift(&train_ewc(model(&s, 17), &s, &plain).unwrap());
    let d_strong = drift(&train_ewc(model(&s, 17), &s, &strong).unwrap());
    assert!(
        d_strong < d_plain,
        "lambda 200 drift {d_strong:.4} should be under lambda 0 drift {d_plain:.4}"
    );
}

#[test]
fn replay_training_runs_and_reports_per_task() {
    let s = stream(3, 10);
    let cfg = ErConfig {
        base: base_cfg(10),
        capacity: 20,
    };
    let outcome = train_er(model(&s, 19), &s, &cfg).unwrap();
    assert_eq!(outcome.checkpoints.len(), 3);
    assert_eq!(outcome.per_task.len(), 3);
    assert!(outcome.per_task.iter().all(|t| t.steps > 0));
    assert!(outcome.aa >= 0.0 && outcome.aa <= 1.0);
}
