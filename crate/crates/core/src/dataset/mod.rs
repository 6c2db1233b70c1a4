//! Manifests, labeling, splitting, rebalancing, augmentation and the
//! synthetic corpus generator.

mod augment;
mod images;
mod split;
mod synth;

pub use augment::{augment, AugmentSpec};
pub use images::ImageSet;
pub use split::{oversample_minority, split, split_by_participant, test_count};
pub use synth::{generate_corpus, generate_synthetic_corpus, synth_clip, SynthConfig, MANIFEST_NAME};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// PHQ-8 scores at or above this value are labeled depressed.
pub const PHQ8_THRESHOLD: u8 = 10;
pub const PHQ8_MAX: u8 = 24;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("records already carry a split assignment")]
    AlreadySplit,
    #[error("only one class present ({0})")]
    SingleClass(Label),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonDepressed,
    Depressed,
}

impl Label {
    pub fn from_phq8(score: u8) -> Self {
        if score >= PHQ8_THRESHOLD {
            Label::Depressed
        } else {
            Label::NonDepressed
        }
    }

    /// Class index used by the network: 0 = non-depressed, 1 = depressed.
    pub fn class_index(self) -> usize {
        match self {
            Label::NonDepressed => 0,
            Label::Depressed => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 1 {
            Label::Depressed
        } else {
            Label::NonDepressed
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::NonDepressed => Label::Depressed,
            Label::Depressed => Label::NonDepressed,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::NonDepressed => "non-depressed",
            Label::Depressed => "depressed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub participant_id: String,
    /// Audio or image path, relative to the manifest directory unless absolute.
    pub path: String,
    pub phq8: u8,
    pub label: Label,
    pub split: Option<Split>,
}

impl SampleRecord {
    pub fn new(participant_id: impl Into<String>, path: impl Into<String>, phq8: u8) -> Self {
        Self {
            participant_id: participant_id.into(),
            path: path.into(),
            phq8,
            label: Label::from_phq8(phq8),
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub seed: u64,
    /// Directory relative paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

const HEADER: [&str; 3] = ["participant_id", "path", "phq8"];

impl Manifest {
    pub fn new(records: Vec<SampleRecord>) -> Self {
        Self {
            records,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        let p = Path::new(&record.path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn with_records(&self, records: Vec<SampleRecord>) -> Self {
        Self {
            records,
            seed: self.seed,
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn filter_split(&self, split: Split) -> Self {
        self.with_records(
            self.records
                .iter()
                .filter(|r| r.split == Some(split))
                .cloned()
                .collect(),
        )
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let err = |line: usize, message: String| DatasetError::ManifestParse { line, message };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| err(1, "empty manifest".into()))?;
        let cols: Vec<&str> = header.trim().trim_start_matches('\u{feff}').split(',').map(str::trim).collect();
        let has_split = match cols.as_slice() {
            [a, b, c] if [*a, *b, *c] == HEADER => false,
            [a, b, c, d] if [*a, *b, *c] == HEADER && *d == "split" => true,
            _ => {
                return Err(err(
                    1,
                    format!("header must be participant_id,path,phq8[,split], got '{}'", header.trim()),
                ))
            }
        };
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in lines {
            let line = idx + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            let expected = if has_split { 4 } else { 3 };
            if fields.len() != expected {
                return Err(err(
                    line,
                    format!("expected {expected} fields, found {} (commas in paths are not allowed)", fields.len()),
                ));
            }
            let pid = fields[0].trim();
            let path = fields[1].trim();
            if pid.is_empty() || path.is_empty() {
                return Err(err(line, "participant_id and path must be non-empty".into()));
            }
            let phq8: u8 = fields[2]
                .trim()
                .parse::<i64>()
                .map_err(|_| err(line, format!("phq8 '{}' is not an integer", fields[2].trim())))
                .and_then(|v| {
                    if (0..=PHQ8_MAX as i64).contains(&v) {
                        Ok(v as u8)
                    } else {
                        Err(err(line, format!("phq8 {v} outside 0..={PHQ8_MAX}")))
                    }
                })?;
            let split = if has_split && !fields[3].trim().is_empty() {
                Some(fields[3].parse::<Split>().map_err(|m| err(line, m))?)
            } else {
                None
            };
            if !seen.insert((pid.to_string(), path.to_string())) {
                return Err(err(line, format!("duplicate record {pid} / {path}")));
            }
            let mut rec = SampleRecord::new(pid, path, phq8);
            rec.split = split;
            records.push(rec);
        }
        Ok(Manifest::new(records))
    }

    pub fn to_csv(&self) -> String {
        let with_split = self.records.iter().any(|r| r.split.is_some());
        let mut out = String::from("participant_id,path,phq8");
        out.push_str(if with_split { ",split\n" } else { "\n" });
        for r in &self.records {
            out.push_str(&format!("{},{},{}", r.participant_id, r.path, r.phq8));
            if with_split {
                out.push(',');
                if let Some(s) = r.split {
                    out.push_str(&s.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        if let Some(bad) = self.records.iter().find(|r| r.path.contains(',') || r.participant_id.contains(',')) {
            return Err(DatasetError::InvalidArgument(format!(
                "record '{}' contains a comma",
                bad.path
            )));
        }
        std::fs::write(path, self.to_csv()).map_err(|e| DatasetError::io(path, e))
    }
}

/// Reads a manifest CSV; relative paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let mut m = Manifest::parse(&text)?;
    m.base_dir = path.parent().map(Path::to_path_buf);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_labeling() {
        let m = Manifest::parse("participant_id,path,phq8\n300,a.wav,10\n301,b.wav,9\n").unwrap();
        assert_eq!(m.records[0].label, Label::Depressed);
        assert_eq!(m.records[1].label, Label::NonDepressed);
        for s in 0..=24u8 {
            assert_eq!(Label::from_phq8(s) == Label::Depressed, s >= 10);
        }
    }

    #[test]
    fn out_of_scale_score_rejected_with_line() {
        let e = Manifest::parse("participant_id,path,phq8\n300,a.wav,3\n301,b.wav,25\n").unwrap_err();
        match e {
            DatasetError::ManifestParse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        assert!(Manifest::parse("participant_id,path,phq8\n1,a.wav,x\n").is_err());
        assert!(Manifest::parse("participant_id,path,phq8\n1,a.wav,-1\n").is_err());
    }

    #[test]
    fn bad_header_and_commas() {
        assert!(matches!(
            Manifest::parse("id,path,phq8\n"),
            Err(DatasetError::ManifestParse { line: 1, .. })
        ));
        assert!(Manifest::parse("participant_id,path,phq8\n1,a,b.wav,3\n").is_err());
    }

    #[test]
    fn duplicates_rejected() {
        assert!(Manifest::parse("participant_id,path,phq8\n1,a.wav,3\n1,a.wav,3\n").is_err());
    }

    #[test]
    fn split_column_roundtrip() {
        let text = "participant_id,path,phq8,split\n1,a.wav,3,train\n2,b.wav,12,test\n";
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.records[1].split, Some(Split::Test));
        assert_eq!(m.to_csv(), text);
        assert_eq!(Manifest::parse(&m.to_csv()).unwrap(), m);
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "participant_id,path,phq8\n1,clips/a.wav,3\n").unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.resolve(&m.records[0]), dir.path().join("clips/a.wav"));
    }
}
