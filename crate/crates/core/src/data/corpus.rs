use std::path::{Path, PathBuf};

use super::{read_bag, write_bag, FeatureBag, SynthCorpus};
use crate::error::{Error, Result};

/// File name of the manifest inside a corpus directory.
pub const MANIFEST_NAME: &str = "manifest.txt";

/// A list of bag files relative to a root directory. Entries under `train/`
/// and `test/` form the two splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub entries: Vec<String>,
}

impl Corpus {
    /// Opens a corpus from a directory (using its `manifest.txt`) or from a
    /// manifest file (entries relative to the file's directory).
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let entries: Vec<String> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        let root = manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self {
            root,
            manifest,
            entries,
        })
    }

    /// Entries whose first path component is `split`.
    pub fn split(&self, split: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split('/').next() == Some(split) && e.contains('/'))
            .map(String::as_str)
            .collect()
    }

    pub fn has_split(&self, split: &str) -> bool {
        !self.split(split).is_empty()
    }

    pub fn load(&self, entries: &[&str]) -> Result<Vec<FeatureBag>> {
        entries.iter().map(|e| read_bag(self.root.join(e))).collect()
    }

    pub fn load_all(&self) -> Result<Vec<FeatureBag>> {
        let all: Vec<&str> = self.entries.iter().map(String::as_str).collect();
        self.load(&all)
    }

    /// Bags of `split`, or every bag if the manifest has no such split.
    pub fn load_split_or_all(&self, split: &str) -> Result<Vec<FeatureBag>> {
        if self.has_split(split) {
            self.load(&self.split(split))
        } else {
            self.load_all()
        }
    }
}

/// Writes every bag of `corpus` under `dir/{train,test}/<id>.pdvb` plus a
/// manifest.
pub fn write_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for (split, bags) in [("train", &corpus.train), ("test", &corpus.test)] {
        let sub = dir.join(split);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for bag in bags {
            let name = format!("{}.pdvb", bag.id);
            write_bag(bag, sub.join(&name))?;
            entries.push(format!("{split}/{name}"));
        }
    }
    let manifest = dir.join(MANIFEST_NAME);
    let text: String = entries.iter().map(|e| format!("{e}\n")).collect();
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(Corpus {
        root: dir.to_path_buf(),
        manifest,
        entries,
    })
}
