//! `run`: train the configured method over the task stream, persisting
//! checkpoints, the accuracy matrix, and the run record.
//!
//! Reruns are guarded by the resolved-config hash: a completed run refuses
//! to repeat without --force, and a partially finished LightCL run with the
//! same hash resumes from its last task checkpoint.

use std::path::{Path, PathBuf};

use lightcl_core::accounting::{
    feature_map_shapes, fs_memory_estimate, resolve_spec, resource_report, CostFreeze,
    RegulationCost, TrainingPlan,
};
use lightcl_core::arch::build_model;
use lightcl_core::baselines::{train_er, train_ewc, train_joint, train_sgd};
use lightcl_core::lightcl::{train_task, union_positions, LightClConfig, PositionSet, TrainMode};
use lightcl_core::metrics::{average_accuracy, fill_matrix};
use lightcl_core::model::{FreezeConfig, Model};
use lightcl_core::outcome::{MethodTag, RunOutcome, TaskSummary};
use lightcl_core::stream::TaskStream;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::commands::{ensure_dir, load_stream};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::record::{build_record, write_matrix_csv, write_record};
use crate::report::write_stream_manifest;

/// On-disk progress of a partially finished LightCL run.
#[derive(Serialize, Deserialize)]
struct RunState {
    config_hash: String,
    completed: usize,
    positions: PositionSet,
    per_task: Vec<TaskSummary>,
    i_size_trajectory: Vec<usize>,
}

pub fn cmd_run(config: &ExperimentConfig, force: bool) -> Result<()> {
    let out = config.output_dir.clone();
    ensure_dir(&out)?;
    let resolved = config.resolved_toml()?;
    let hash = config.hash()?;
    let config_path = out.join("config.toml");
    let record_path = out.join("record.json");
    let state_path = out.join("state.json");

    if config_path.exists() {
        let existing =
            std::fs::read_to_string(&config_path).map_err(|e| CliError::io(&config_path, e))?;
        if existing != resolved {
            return Err(CliError::Config(format!(
                "{} holds a different experiment; change output_dir or --out",
                out.display()
            )));
        }
        if record_path.exists() && !force {
            return Err(CliError::Config(format!(
                "completed run with identical config already in {}; pass --force to rerun",
                out.display()
            )));
        }
    } else {
        std::fs::write(&config_path, &resolved).map_err(|e| CliError::io(&config_path, e))?;
    }
    if force {
        let _ = std::fs::remove_file(&state_path);
    }

    let stream = load_stream(config)?;
    write_stream_manifest(&out.join("stream_manifest.json"), &stream.manifest())?;
    let model: Model<f32> = build_model(
        config.arch,
        stream.input_shape(),
        stream.num_classes,
        config.seed,
    )?;

    let outcome = match config.method {
        MethodTag::Lightcl => run_lightcl(config, &stream, model, &out, &hash, &state_path)?,
        MethodTag::Sgd => train_sgd(model, &stream, &config.baseline_config())?,
        MethodTag::Joint => train_joint(model, &stream, &config.baseline_config())?,
        MethodTag::Ewc => train_ewc(model, &stream, &config.ewc_config())?,
        MethodTag::Er => train_er(model, &stream, &config.er_config())?,
    };

    let mut checkpoint_names = Vec::with_capacity(outcome.checkpoints.len());
    for (i, ckpt) in outcome.checkpoints.iter().enumerate() {
        let task_index = outcome.per_task.get(i).map(|s| s.task_id).unwrap_or(i + 1);
        let name = format!("task_{task_index}.ckpt");
        let meta = CheckpointMeta {
            arch: config.arch,
            seed: config.seed,
            task_index,
            config_hash: hash.clone(),
        };
        save_checkpoint(ckpt, &meta, &out.join(&name))?;
        checkpoint_names.push(PathBuf::from(name));
    }

    write_matrix_csv(&out.join("matrix.csv"), &outcome.matrix, stream.tasks.len())?;
    let resource = if config.method == MethodTag::Lightcl {
        Some(lightcl_resource(config, &stream, &outcome)?)
    } else {
        None
    };
    let config_value: toml::Value = resolved
        .parse()
        .map_err(|e| CliError::Config(format!("resolved config does not re-parse: {e}")))?;
    let record = build_record(&outcome, config_value, checkpoint_names, resource);
    write_record(&record_path, &record)?;
    let _ = std::fs::remove_file(&state_path);

    println!("method            {}", outcome.method);
    println!("tasks             {}", stream.tasks.len());
    println!("AA                {:.4}", outcome.aa);
    if !outcome.i_size_trajectory.is_empty() {
        println!("|I| trajectory    {:?}", outcome.i_size_trajectory);
    }
    println!("artifacts         {}", out.display());
    Ok(())
}

fn freeze_config(cfg: &LightClConfig) -> FreezeConfig {
    FreezeConfig {
        fz_layer: cfg.fz_layer.clone(),
        freeze_norm_stats: cfg.freeze_norm_stats,
    }
}

/// LightCL runs task by task so progress survives interruption: after every
/// task the checkpoint and a state file land on disk.
fn run_lightcl(
    config: &ExperimentConfig,
    stream: &TaskStream<f32>,
    initial: Model<f32>,
    out: &Path,
    hash: &str,
    state_path: &Path,
) -> Result<RunOutcome<f32>> {
    let cfg = config.lightcl_config();
    cfg.validate()?;

    let mut checkpoints: Vec<Model<f32>> = Vec::new();
    let mut positions = PositionSet::new();
    let mut per_task: Vec<TaskSummary> = Vec::new();
    let mut i_sizes: Vec<usize> = Vec::new();
    let mut model = initial;

    if state_path.exists() {
        let text = std::fs::read_to_string(state_path).map_err(|e| CliError::io(state_path, e))?;
        let state: RunState =
            serde_json::from_str(&text).map_err(|e| CliError::format(state_path, e.to_string()))?;
        if state.config_hash != hash {
            return Err(CliError::Config(format!(
                "{} belongs to a different config; remove it or use --force",
                state_path.display()
            )));
        }
        if state.completed == 0 || state.completed > stream.tasks.len() {
            return Err(CliError::format(state_path, "completed-task count out of range"));
        }
        for task_index in 1..=state.completed {
            let path = out.join(format!("task_{task_index}.ckpt"));
            let (ckpt, _) = load_checkpoint(&path)?;
            checkpoints.push(ckpt);
        }
        positions = state.positions;
        per_task = state.per_task;
        i_sizes = state.i_size_trajectory;
        model = checkpoints.last().unwrap().clone();
        // Checkpoints store weights only; restore the freeze flags the run
        // had after its first task.
        model.freeze_prefix(&freeze_config(&cfg))?;
        println!("resuming after task {}", state.completed);
    } else if cfg.mode == TrainMode::Pretrained {
        model.freeze_prefix(&freeze_config(&cfg))?;
    }

    for task in stream.tasks.iter().skip(checkpoints.len()) {
        let outcome = train_task(&mut model, task, &positions, &cfg)?;
        positions = union_positions(&positions, &outcome.new_positions);
        per_task.push(outcome.summary);
        i_sizes.push(positions.len());
        checkpoints.push(model.clone());

        let meta = CheckpointMeta {
            arch: config.arch,
            seed: config.seed,
            task_index: task.task_id,
            config_hash: hash.to_string(),
        };
        save_checkpoint(&model, &meta, &out.join(format!("task_{}.ckpt", task.task_id)))?;
        let state = RunState {
            config_hash: hash.to_string(),
            completed: checkpoints.len(),
            positions: positions.clone(),
            per_task: per_task.clone(),
            i_size_trajectory: i_sizes.clone(),
        };
        let text = serde_json::to_string(&state)
            .map_err(|e| CliError::format(state_path, e.to_string()))?;
        std::fs::write(state_path, text).map_err(|e| CliError::io(state_path, e))?;
    }

    let matrix = fill_matrix(&checkpoints, stream, stream.config.eval_mode)?;
    let aa = average_accuracy(&matrix, stream.tasks.len())?;
    Ok(RunOutcome {
        method: MethodTag::Lightcl,
        checkpoints,
        matrix,
        aa,
        per_task,
        i_size_trajectory: i_sizes,
        positions,
    })
}

/// Cost model of the finished run: actual per-task batch counts, the real
/// freeze boundary, and the realized position set's footprint.
fn lightcl_resource(
    config: &ExperimentConfig,
    stream: &TaskStream<f32>,
    outcome: &RunOutcome<f32>,
) -> Result<lightcl_core::accounting::ResourceReport> {
    let cfg = config.lightcl_config();
    let spec = outcome
        .checkpoints
        .last()
        .expect("finished run has checkpoints")
        .to_arch_spec();
    let freeze = CostFreeze { fz_layer: cfg.fz_layer.clone() };
    let n = stream.tasks.first().map(|t| t.n_train()).unwrap_or(0) as u64;
    let batch = cfg.batch_size as u64;
    let plan = TrainingPlan {
        batch_size: batch,
        batches: n.div_ceil(batch),
        epochs: cfg.epochs as u64,
        tasks: stream.tasks.len() as u64,
        extra_forward_batches: 0,
    };
    let regulation = (cfg.regulation && cfg.beta > 0.0)
        .then_some(RegulationCost { mem_size: cfg.mem_size as u64 });
    let shapes = feature_map_shapes(&resolve_spec(&spec)?);
    let fs_bytes = fs_memory_estimate(&outcome.positions, cfg.mem_size as u64, &shapes)?;
    resource_report(&spec, &freeze, &plan, regulation, fs_bytes).map_err(CliError::from)
}
