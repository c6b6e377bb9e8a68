use std::path::{Path, PathBuf};

use depthgrad_core::scene::{Sample, Split};
use depthgrad_core::train::{self, EpochLog, TrainConfig};
use depthgrad_core::DepthNet;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io;

pub const LOG_HEADER: [&str; 3] = ["epoch", "train_loss", "val_loss"];

/// Training log location beside a checkpoint: `model.ckpt` becomes
/// `model.log.csv`.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

fn samples(data: &Dataset, split: Split) -> Result<Vec<Sample>> {
    Ok(data.load_split(split)?.into_iter().map(|(_, s)| s).collect())
}

/// Trains on the dataset's train split, validating on its val split, and
/// writes the checkpoint and its log.
pub fn train_to_files(
    data: &Dataset,
    cfg: &TrainConfig,
    checkpoint: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(DepthNet, Vec<EpochLog>)> {
    cfg.validate().map_err(|e| Error::usage(e.to_string()))?;
    let train_set = samples(data, Split::Train)?;
    let val_set = samples(data, Split::Val)?;
    let (net, logs) = train::train(&train_set, &val_set, cfg, on_epoch)?;
    io::write_checkpoint(checkpoint, &net)?;
    write_log(&log_path(checkpoint), &logs)?;
    Ok((net, logs))
}

pub fn write_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut w = crate::report::csv_writer();
    let err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    w.write_record(LOG_HEADER).map_err(err)?;
    for l in logs {
        w.write_record([l.epoch.to_string(), l.train_loss.to_string(), l.val_loss.to_string()])
            .map_err(err)?;
    }
    io::write_bytes(path, &crate::report::finish(w, path)?)
}
