//! Output directory for a training run:
//!
//! ```text
//! out/
//!   checkpoints/iter_000050.json ... final.json
//!   metrics.csv
//! ```

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::trainer::{Metrics, TrainObserver};

pub const METRICS_HEADER: &str =
    "iteration,env_steps,mean_return,mean_episode_len,mean_waypoints,policy_loss,value_loss,entropy";

pub struct RunWriter {
    root: PathBuf,
    metrics: csv::Writer<fs::File>,
    checkpoint_every: u64,
}

impl RunWriter {
    /// Opens (or creates) `root`. The metrics file is appended to; its header
    /// is written only when the file is new.
    pub fn create(root: &Path, checkpoint_every: u64) -> Result<Self> {
        let ckpt_dir = root.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let path = root.join("metrics.csv");
        let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let metrics = csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file);
        Ok(RunWriter {
            root: root.to_path_buf(),
            metrics,
            checkpoint_every,
        })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint_path(&self, iteration: u64) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("iter_{iteration:06}.json"))
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoints").join("final.json")
    }

    pub fn write_final(&mut self, checkpoint: &Checkpoint) -> Result<PathBuf> {
        let path = self.final_checkpoint_path();
        checkpoint.save(&path)?;
        Ok(path)
    }
}

impl TrainObserver for RunWriter {
    fn on_iteration(&mut self, m: &Metrics, checkpoint: &dyn Fn() -> Checkpoint) -> Result<()> {
        let path = self.metrics_path();
        self.metrics.serialize(m).map_err(|e| Error::csv(&path, e))?;
        self.metrics.flush().map_err(|e| Error::io(&path, e))?;
        if self.checkpoint_every > 0 && m.iteration.is_multiple_of(self.checkpoint_every) {
            checkpoint().save(&self.checkpoint_path(m.iteration))?;
        }
        Ok(())
    }
}

/// Reads back a metrics history file.
pub fn read_metrics(path: &Path) -> Result<Vec<Metrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}
