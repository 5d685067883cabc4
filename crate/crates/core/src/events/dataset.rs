//! Dataset directories: one event file per recording plus `manifest.tsv`.
//!
//! ```text
//! # file<TAB>label<TAB>subject<TAB>lighting<TAB>split
//! user01_fluorescent_03.aer  3  1  fluorescent  train
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{crop, downsample_sum, format, EventStream};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recording {
    pub name: String,
    pub label: usize,
    pub subject: u32,
    pub lighting: String,
    pub split: Split,
    pub stream: EventStream,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub label: usize,
    pub subject: u32,
    pub lighting: String,
    pub split: Split,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Dataset(format!("{MANIFEST} line {}: {what}", lineno + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad(&format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let split = match cols[4] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad(&format!("unknown split {other:?}"))),
        };
        out.push(ManifestEntry {
            file: cols[0].to_string(),
            label: cols[1].parse().map_err(|_| bad("label is not an integer"))?,
            subject: cols[2].parse().map_err(|_| bad("subject is not an integer"))?,
            lighting: cols[3].to_string(),
            split,
        });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("# file\tlabel\tsubject\tlighting\tsplit\n");
    for e in entries {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.file,
            e.label,
            e.subject,
            e.lighting,
            e.split.as_str()
        ));
    }
    s
}

/// Reads every recording listed in `dir/manifest.tsv`.
pub fn load_dir(dir: &Path) -> Result<Vec<Recording>> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    parse_manifest(&manifest)?
        .into_iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
            let parsed = format::parse_event_file(&bytes)?;
            Ok(Recording {
                name: entry.file,
                label: entry.label,
                subject: entry.subject,
                lighting: entry.lighting,
                split: entry.split,
                stream: parsed.stream,
            })
        })
        .collect()
}

/// Writes recordings as `<name>.aer` files plus a manifest.
pub fn write_dir(dir: &Path, recordings: &[Recording]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(recordings.len());
    for r in recordings {
        let file = format!("{}.aer", r.name);
        fs::write(dir.join(&file), format::write_event_file(&r.stream))?;
        entries.push(ManifestEntry {
            file,
            label: r.label,
            subject: r.subject,
            lighting: r.lighting.clone(),
            split: r.split,
        });
    }
    fs::write(dir.join(MANIFEST), format_manifest(&entries))?;
    Ok(())
}

/// Spatial preparation applied to every recording before binning: optional
/// top-left crop, then sum-downsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Preprocess {
    #[serde(default)]
    pub crop: Option<[u16; 2]>,
    #[serde(default = "one")]
    pub downsample: u16,
}

fn one() -> u16 {
    1
}

impl Preprocess {
    pub fn apply(&self, stream: &EventStream) -> Result<EventStream> {
        let cropped = match self.crop {
            Some([w, h]) => crop(stream, 0, 0, w, h)?,
            None => stream.clone(),
        };
        downsample_sum(&cropped, self.downsample.max(1))
    }

    /// `[2, height, width]` after preprocessing a `width x height` sensor.
    pub fn output_dims(&self, width: u16, height: u16) -> Result<[usize; 3]> {
        let probe = self.apply(&EventStream::new(width, height))?;
        Ok([2, probe.height as usize, probe.width as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Event, Polarity};
    use super::*;

    #[test]
    fn manifest_round_trip_and_errors() {
        let entries = vec![
            ManifestEntry {
                file: "a.aer".into(),
                label: 3,
                subject: 1,
                lighting: "led".into(),
                split: Split::Train,
            },
            ManifestEntry {
                file: "b.aer".into(),
                label: 10,
                subject: 29,
                lighting: "natural".into(),
                split: Split::Test,
            },
        ];
        assert_eq!(parse_manifest(&format_manifest(&entries)).unwrap(), entries);
        assert!(parse_manifest("a.aer\t1\t2\tled\n").is_err());
        assert!(parse_manifest("a.aer\tx\t2\tled\ttrain\n").is_err());
        assert!(parse_manifest("a.aer\t1\t2\tled\tvalid\n").is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut stream = EventStream::new(128, 128);
        stream.events.push(Event {
            t: 10,
            x: 127,
            y: 5,
            polarity: Polarity::Off,
        });
        let recs = vec![Recording {
            name: "r0".into(),
            label: 4,
            subject: 2,
            lighting: "led".into(),
            split: Split::Test,
            stream,
        }];
        write_dir(dir.path(), &recs).unwrap();
        let mut loaded = load_dir(dir.path()).unwrap();
        assert_eq!(loaded[0].name, "r0.aer");
        loaded[0].name = "r0".into();
        assert_eq!(loaded, recs);
    }

    #[test]
    fn preprocess_dims() {
        let p = Preprocess {
            crop: None,
            downsample: 4,
        };
        assert_eq!(p.output_dims(128, 128).unwrap(), [2, 32, 32]);
        let p = Preprocess {
            crop: Some([32, 32]),
            downsample: 1,
        };
        assert_eq!(p.output_dims(34, 34).unwrap(), [2, 32, 32]);
    }
}
