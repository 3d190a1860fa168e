use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Artifact directory for one command invocation.
pub struct Output {
    dir: PathBuf,
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'a str,
    config: &'a ExperimentConfig,
    result: &'a T,
}

impl Output {
    pub fn create(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Output { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn open(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.path(name);
        let file =
            File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        Ok((path, BufWriter::new(file)))
    }

    pub fn write_with(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<PathBuf> {
        let (path, mut w) = self.open(name)?;
        body(&mut w).with_context(|| format!("cannot write {}", path.display()))?;
        w.flush()
            .with_context(|| format!("cannot write {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        self.write_with(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// CSV with a header row followed by `rows`.
    pub fn write_rows(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        self.write_with(name, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(header)?;
            for r in rows {
                c.write_record(r)?;
            }
            c.flush()?;
            Ok(())
        })
    }

    /// `<command>.json`: the resolved config alongside the result.
    pub fn write_summary<T: Serialize>(
        &self,
        command: &str,
        config: &ExperimentConfig,
        result: &T,
    ) -> Result<PathBuf> {
        let summary = Summary {
            command,
            config,
            result,
        };
        let text = serde_json::to_string_pretty(&summary)?;
        self.write_text(&format!("{command}.json"), &(text + "\n"))
    }
}

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
