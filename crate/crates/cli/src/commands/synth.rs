//! `synth`: write a procedurally generated dataset in the exact on-disk
//! format the corresponding loader expects.

use std::path::PathBuf;

use lightcl_core::stream::DatasetName;

use crate::error::Result;
use crate::synth::{synth_cifar, synth_mnist};

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub dataset: DatasetName,
    pub out: PathBuf,
    pub seed: u64,
    pub per_class_train: Option<usize>,
    pub per_class_test: Option<usize>,
    pub side: Option<usize>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let manifest = match args.dataset {
        DatasetName::SplitMnist => synth_mnist(
            &args.out,
            args.seed,
            args.per_class_train.unwrap_or(480),
            args.per_class_test.unwrap_or(60),
            args.side.unwrap_or(16),
        )?,
        DatasetName::SplitCifar10 => synth_cifar(
            &args.out,
            args.seed,
            args.per_class_train.unwrap_or(120),
            args.per_class_test.unwrap_or(60),
        )?,
    };
    println!(
        "wrote {} classes x ({} train + {} test) at {}x{}x{} to {}",
        manifest.classes,
        manifest.per_class_train,
        manifest.per_class_test,
        manifest.channels,
        manifest.side,
        manifest.side,
        args.out.display()
    );
    Ok(())
}
