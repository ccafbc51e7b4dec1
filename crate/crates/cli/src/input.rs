//! Resolves `--data` paths to datasets.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use enhope::data::{load_csv, load_idx, LabelColumn};
use enhope::{Dataset, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Test,
}

impl Subset {
    fn prefix(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Test => "t10k",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DataSource {
    pub path: PathBuf,
    pub subset: Subset,
    pub label_column: LabelColumn,
    pub has_header: bool,
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::InvalidArgument(format!(
        "{}: no {stem} or {stem}.gz",
        dir.display()
    )))
}

impl DataSource {
    /// A directory is read as an IDX pair (`train-*` or `t10k-*` by subset);
    /// a file as CSV.
    pub fn load(&self) -> Result<Dataset> {
        if self.path.is_dir() {
            let p = self.subset.prefix();
            let images = find_idx(&self.path, &format!("{p}-images-idx3-ubyte"))?;
            let labels = find_idx(&self.path, &format!("{p}-labels-idx1-ubyte"))?;
            load_idx(images, labels)
        } else {
            load_csv(&self.path, &self.label_column, self.has_header)
        }
    }
}
