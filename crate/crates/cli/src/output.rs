use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};

/// Where summaries and files go. Every summary and CSV starts with the
/// `# config_hash=` line.
pub struct Output {
    pub dir: Option<PathBuf>,
    pub quiet: bool,
    pub hash: String,
}

impl Output {
    pub fn new(dir: Option<PathBuf>, quiet: bool, hash: String) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)
                .with_context(|| format!("cannot create output directory {}", d.display()))?;
        }
        Ok(Output { dir, quiet, hash })
    }

    fn header(&self) -> String {
        format!("# config_hash={}\n", self.hash)
    }

    /// Prints the summary and, with an output directory, saves it as `name`.
    pub fn summary(&self, name: &str, lines: &[String]) -> Result<()> {
        let mut text = self.header();
        for l in lines {
            text.push_str(l);
            text.push('\n');
        }
        if !self.quiet {
            io::stdout().write_all(text.as_bytes())?;
        }
        if let Some(d) = &self.dir {
            let path = d.join(name);
            fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        }
        Ok(())
    }

    /// Writes a CSV (hash line first) when an output directory is set.
    pub fn csv(
        &self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
    ) -> Result<()> {
        self.file(name, |w| {
            w.write_all(self.header().as_bytes())?;
            body(w)
        })
    }

    /// Writes a raw file when an output directory is set.
    pub fn file(
        &self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
    ) -> Result<()> {
        let Some(d) = &self.dir else {
            return Ok(());
        };
        let path = d.join(name);
        let f =
            fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(f);
        body(&mut w)
            .and_then(|_| w.flush())
            .with_context(|| format!("cannot write {}", path.display()))
    }
}
