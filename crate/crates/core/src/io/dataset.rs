//! Dataset directories.
//!
//! ```text
//! DIR/meta.txt           key = value generation settings
//! DIR/index.txt          one line per sample: name split t0 t1
//! DIR/<name>.evt         events
//! DIR/<name>.flo(.mask)  ground-truth flow for [t0, t1)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::parse_lines;
use super::events::{read_events, write_events};
use super::flow::{read_flow, write_flow};
use crate::error::{Error, Result};
use crate::synth::{is_train_index, DatasetConfig, LabeledSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(Error::Usage(format!("unknown split {s:?} (train, test, all)"))),
        }
    }

    fn admits(self, train: bool) -> bool {
        match self {
            Split::Train => train,
            Split::Test => !train,
            Split::All => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub name: String,
    pub train: bool,
    pub t0: u64,
    pub t1: u64,
}

impl DatasetEntry {
    pub fn events_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.evt", self.name))
    }

    pub fn flow_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.flo", self.name))
    }
}

pub fn sample_name(index: usize) -> String {
    format!("sample_{index:05}")
}

/// Writes samples in order; even indices form the train split.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[LabeledSample], config: &DatasetConfig) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let segments = samples.first().map_or(config.scene.segments, |s| s.segments);
    let mut meta = String::new();
    let _ = writeln!(meta, "count = {}", samples.len());
    let _ = writeln!(meta, "width = {}", config.width);
    let _ = writeln!(meta, "height = {}", config.height);
    let _ = writeln!(meta, "seed = {}", config.seed);
    let _ = writeln!(meta, "speed_max = {:?}", config.speed_max);
    let _ = writeln!(meta, "segments = {segments}");
    fs::write(dir.join("meta.txt"), meta)?;

    let mut index = String::new();
    for (i, s) in samples.iter().enumerate() {
        let entry = DatasetEntry {
            name: sample_name(i),
            train: is_train_index(i),
            t0: s.t0,
            t1: s.t1,
        };
        write_events(entry.events_path(dir), &s.stream)?;
        write_flow(entry.flow_path(dir), &s.gt_flow)?;
        let split = if entry.train { "train" } else { "test" };
        let _ = writeln!(index, "{} {split} {} {}", entry.name, entry.t0, entry.t1);
    }
    fs::write(dir.join("index.txt"), index)?;
    Ok(())
}

/// Segment count recorded at generation time.
pub fn read_segments(dir: impl AsRef<Path>) -> Result<usize> {
    let text = fs::read_to_string(dir.as_ref().join("meta.txt"))?;
    for (k, v) in parse_lines(&text)? {
        if k == "segments" {
            return v.parse().map_err(|_| Error::Config(format!("bad segments value {v:?}")));
        }
    }
    Err(Error::Config("meta.txt has no segments entry".into()))
}

pub fn read_index(dir: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let text = fs::read_to_string(dir.as_ref().join("index.txt"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::Config(format!("index.txt line {}: expected `name split t0 t1`", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let train = match f[1] {
                "train" => true,
                "test" => false,
                _ => return Err(bad()),
            };
            Ok(DatasetEntry {
                name: f[0].to_string(),
                train,
                t0: f[2].parse().map_err(|_| bad())?,
                t1: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn load_sample(dir: impl AsRef<Path>, entry: &DatasetEntry, segments: usize) -> Result<LabeledSample> {
    let dir = dir.as_ref();
    Ok(LabeledSample {
        stream: read_events(entry.events_path(dir))?,
        t0: entry.t0,
        t1: entry.t1,
        segments,
        gt_flow: read_flow(entry.flow_path(dir))?,
        starts: Vec::new(),
    })
}

pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Vec<(DatasetEntry, LabeledSample)>> {
    let dir = dir.as_ref();
    let segments = read_segments(dir)?;
    read_index(dir)?
        .into_iter()
        .filter(|e| split.admits(e.train))
        .map(|e| {
            let s = load_sample(dir, &e, segments)?;
            Ok((e, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::Execution;
    use crate::synth::generate_dataset;

    #[test]
    fn round_trip_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig::new(4, 32, 32, 3.0);
        let samples = generate_dataset(3, &cfg, Execution::Sequential).unwrap();
        write_dataset(dir.path(), &samples, &cfg).unwrap();
        let all = load_split(dir.path(), Split::All).unwrap();
        assert_eq!(all.len(), 3);
        for ((_, back), orig) in all.iter().zip(&samples) {
            assert_eq!(back.stream, orig.stream);
            assert_eq!(back.gt_flow, orig.gt_flow);
            assert_eq!((back.t0, back.t1, back.segments), (orig.t0, orig.t1, orig.segments));
        }
        assert_eq!(load_split(dir.path(), Split::Train).unwrap().len(), 2);
        assert_eq!(load_split(dir.path(), Split::Test).unwrap().len(), 1);
        assert!(Split::parse("val").is_err());
    }
}
