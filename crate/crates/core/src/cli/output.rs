use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::CliError;

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

/// In-memory CSV with a header row and a trailing `# config_sha256=` line.
pub struct CsvWriter {
    buf: String,
    width: usize,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Self { buf, width: header.len() }
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.width);
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn finish(mut self, path: &Path, hash: &str) -> Result<PathBuf, CliError> {
        self.buf.push_str(&format!("# config_sha256={hash}\n"));
        write_atomic(path, self.buf.as_bytes())?;
        Ok(path.to_path_buf())
    }
}
