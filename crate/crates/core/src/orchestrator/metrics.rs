use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "episode,curiosity_return,episode_len,model_loss,model_version,policy_updates";

/// One metrics row. `model_loss` is NaN until the first model update.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub curiosity_return: f64,
    pub episode_len: usize,
    pub model_loss: f64,
    pub model_version: u64,
    pub policy_updates: u64,
}

impl EpisodeRecord {
    fn to_fields(&self) -> [String; 6] {
        [
            self.episode.to_string(),
            self.curiosity_return.to_string(),
            self.episode_len.to_string(),
            self.model_loss.to_string(),
            self.model_version.to_string(),
            self.policy_updates.to_string(),
        ]
    }

    fn from_fields(rec: &csv::StringRecord) -> Result<Self> {
        fn get<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Csv(format!("bad metrics field {i} in {rec:?}")))
        }
        Ok(Self {
            episode: get(rec, 0)?,
            curiosity_return: get(rec, 1)?,
            episode_len: get(rec, 2)?,
            model_loss: get(rec, 3)?,
            model_version: get(rec, 4)?,
            policy_updates: get(rec, 5)?,
        })
    }
}

/// Appends rows and flushes after each, so a halted run leaves every completed
/// episode on disk.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| Error::Csv(e.to_string()))?;
        inner
            .write_record(METRICS_HEADER.split(','))
            .and_then(|_| inner.flush().map_err(Into::into))
            .map_err(|e| Error::Csv(e.to_string()))?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, record: &EpisodeRecord) -> Result<()> {
        self.inner
            .write_record(record.to_fields())
            .map_err(|e| Error::Csv(e.to_string()))?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::Csv(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(Error::Csv(format!("unexpected metrics header in {}", path.display())));
    }
    reader
        .records()
        .map(|r| EpisodeRecord::from_fields(&r.map_err(|e| Error::Csv(e.to_string()))?))
        .collect()
}
