use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::image::GrayImage;
use super::labels::{parse_yolo_labels, GroundTruth};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

/// Image/label pair relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: SplitName,
    pub image: PathBuf,
    pub labels: PathBuf,
}

/// `split image label` lines.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {} {}\n", e.split, e.image.display(), e.labels.display()))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `split image labels`, found {} fields", f.len()),
                });
            }
            let split = f[0].parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("unknown split `{}`", f[0]),
            })?;
            entries.push(ManifestEntry {
                split,
                image: PathBuf::from(f[1]),
                labels: PathBuf::from(f[2]),
            });
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn count(&self, split: SplitName) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// A loaded image and its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: GrayImage,
    pub labels: Vec<GroundTruth>,
}

/// Loads every entry of one split, in manifest order.
pub fn load_split(manifest_path: &Path, split: SplitName) -> Result<Vec<Sample>> {
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        let image = GrayImage::load_pgm(&root.join(&e.image))?;
        let lp = root.join(&e.labels);
        let text = std::fs::read_to_string(&lp).map_err(|err| Error::io(&lp, err))?;
        let labels = parse_yolo_labels(&text).map_err(|err| Error::Data(format!("{}: {err}", lp.display())))?;
        let name = e
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push(Sample { name, image, labels });
    }
    Ok(out)
}
