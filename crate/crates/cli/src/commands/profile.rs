//! `profile`: per-layer memory-stability / learning-plasticity measurement
//! over a consecutive task pair, aggregated across seeds.

use lightcl_core::baselines::{train_sgd, BaselineConfig};
use lightcl_core::lightcl::{train_task, union_positions, PositionSet, TrainMode};
use lightcl_core::model::Model;
use lightcl_core::outcome::MethodTag;
use lightcl_core::profile::{aggregate_profiles, compute_profile, LayerProfile};
use lightcl_core::arch::build_model;
use lightcl_core::stream::{build_stream, TaskStream};

use crate::checkpoint::load_checkpoint;
use crate::commands::ensure_dir;
use crate::config::ExperimentConfig;
use crate::data::load_raw;
use crate::error::{CliError, Result};
use crate::report::{write_profile_csv, write_profile_svg};

pub fn cmd_profile(config: &ExperimentConfig) -> Result<()> {
    let Some(section) = &config.profile else {
        return Err(CliError::Config(
            "the profile command needs a [profile] section".into(),
        ));
    };
    let out = config.output_dir.clone();
    ensure_dir(&out)?;
    std::fs::write(out.join("config.toml"), config.resolved_toml()?)
        .map_err(|e| CliError::io(&out.join("config.toml"), e))?;

    let [prev_id, curr_id] = section.task_pair;
    let raw = load_raw(&config.data_root, config.stream.dataset)?;
    let from_checkpoints = section.checkpoint_prev.is_some();

    let mut profiles: Vec<LayerProfile> = Vec::new();
    if from_checkpoints {
        let (prev, _) = load_checkpoint(section.checkpoint_prev.as_ref().unwrap())?;
        let (curr, _) = load_checkpoint(section.checkpoint_curr.as_ref().unwrap())?;
        let stream = truncated_stream(config, &raw, config.seed, curr_id)?;
        profiles.push(profile_pair(&stream, &curr, &prev, prev_id, curr_id)?);
    } else {
        for &seed in &section.seeds {
            let stream = truncated_stream(config, &raw, seed, curr_id)?;
            let (prev, curr) = train_pair(config, &stream, seed, prev_id)?;
            profiles.push(profile_pair(&stream, &curr, &prev, prev_id, curr_id)?);
        }
    }

    let stats = aggregate_profiles(&profiles).map_err(CliError::from)?;
    write_profile_csv(&out.join("profile.csv"), &stats)?;
    write_profile_svg(&out.join("profile.svg"), &stats)?;

    println!(
        "profiled tasks {prev_id}->{curr_id} over {} run(s), {} layers",
        profiles.len(),
        stats.layer_names.len()
    );
    let third = stats.layer_names.len() / 3;
    if third > 0 {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "MS mean   first third {:+.4}   last third {:+.4}",
            mean(&stats.ms_mean[..third]),
            mean(&stats.ms_mean[stats.ms_mean.len() - third..])
        );
        println!(
            "LP mean   first third {:+.4}   last third {:+.4}",
            mean(&stats.lp_mean[..third]),
            mean(&stats.lp_mean[stats.lp_mean.len() - third..])
        );
    }
    println!("artifacts         {}", out.display());
    Ok(())
}

/// Stream truncated after the profiled pair so training and evaluation touch
/// only the tasks the protocol uses.
fn truncated_stream(
    config: &ExperimentConfig,
    raw: &lightcl_core::stream::RawDataset,
    seed: u64,
    last_task: usize,
) -> Result<TaskStream<f32>> {
    let mut stream_config = config.stream_config();
    stream_config.seed = seed;
    let mut stream = build_stream(raw, &stream_config).map_err(CliError::from)?;
    stream.tasks.truncate(last_task);
    Ok(stream)
}

/// Train the pair's checkpoints under the configured method: plain
/// sequential fine-tuning by default, or the memory-regulated trainer when
/// the config says so.
fn train_pair(
    config: &ExperimentConfig,
    stream: &TaskStream<f32>,
    seed: u64,
    prev_id: usize,
) -> Result<(Model<f32>, Model<f32>)> {
    let model: Model<f32> = build_model(
        config.arch,
        stream.input_shape(),
        stream.num_classes,
        seed,
    )?;
    match config.method {
        MethodTag::Sgd => {
            let mut cfg: BaselineConfig = config.baseline_config();
            cfg.seed = seed;
            let outcome = train_sgd(model, stream, &cfg)?;
            Ok((
                outcome.checkpoints[prev_id - 1].clone(),
                outcome.checkpoints[prev_id].clone(),
            ))
        }
        MethodTag::Lightcl => {
            let mut cfg = config.lightcl_config();
            cfg.seed = seed;
            cfg.validate()?;
            let mut model = model;
            if cfg.mode == TrainMode::Pretrained {
                model.freeze_prefix(&lightcl_core::model::FreezeConfig {
                    fz_layer: cfg.fz_layer.clone(),
                    freeze_norm_stats: cfg.freeze_norm_stats,
                })?;
            }
            let mut positions = PositionSet::new();
            let mut prev = None;
            for task in &stream.tasks {
                let outcome = train_task(&mut model, task, &positions, &cfg)?;
                positions = union_positions(&positions, &outcome.new_positions);
                if task.task_id == prev_id {
                    prev = Some(model.clone());
                }
            }
            Ok((prev.expect("pair lies within the stream"), model))
        }
        other => Err(CliError::Config(format!(
            "profiling drives method sgd or lightcl, not {other}"
        ))),
    }
}

fn profile_pair(
    stream: &TaskStream<f32>,
    curr: &Model<f32>,
    prev: &Model<f32>,
    prev_id: usize,
    curr_id: usize,
) -> Result<LayerProfile> {
    let mode = stream.config.eval_mode;
    let mask_prev = stream.eval_class_mask(prev_id, curr_id, mode);
    let mask_curr = stream.eval_class_mask(curr_id, curr_id, mode);
    compute_profile(
        curr,
        prev,
        &stream.tasks[prev_id - 1],
        &stream.tasks[curr_id - 1],
        &mask_prev,
        &mask_curr,
    )
    .map_err(CliError::from)
}
