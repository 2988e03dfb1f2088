use std::io::Write;
use std::path::Path;

use anyhow::Context;
use gtlvm_core::cohort::Provenance;

/// Writes `bytes` to a temp file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// CSV table with a provenance comment line on top.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
    header: String,
}

impl Table {
    pub fn new(prov: &Provenance, columns: &[&str]) -> anyhow::Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(columns)?;
        Ok(Self { writer, header: format!("# config_sha256={} seed={}\n", prov.config_sha256, prov.seed) })
    }

    pub fn row<I, S>(&mut self, fields: I) -> anyhow::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn into_bytes(self) -> anyhow::Result<Vec<u8>> {
        let body = self.writer.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        let mut out = self.header.into_bytes();
        out.extend(body);
        Ok(out)
    }

    pub fn save(self, path: &Path) -> anyhow::Result<()> {
        write_atomic(path, &self.into_bytes()?)
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
