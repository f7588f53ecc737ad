use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use sha2::{Digest, Sha256};

use homedetect::geo::{read_boundary_csv, read_towers_csv, TowerNetwork};

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Opens a file for reading, decompressing `.gz` transparently.
pub fn open(path: &Path) -> Result<Box<dyn Read + Send>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(if is_gz(path) {
        Box::new(MultiGzDecoder::new(BufReader::with_capacity(1 << 20, f)))
    } else {
        Box::new(f)
    })
}

pub fn open_buffered(path: &Path) -> Result<BufReader<Box<dyn Read + Send>>> {
    Ok(BufReader::with_capacity(1 << 16, open(path)?))
}

/// Creates a file (and its parent directory), gzip-compressed for `.gz`.
pub fn create(path: &Path) -> Result<Box<dyn Write>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let w = BufWriter::with_capacity(1 << 20, f);
    Ok(if is_gz(path) {
        Box::new(GzEncoder::new(w, Compression::default()))
    } else {
        Box::new(w)
    })
}

/// Writes through `f` and finishes the stream (gzip trailer included).
pub fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> homedetect::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    drop(w);
    Ok(())
}

pub fn sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

pub fn load_network(towers: &Path, boundary: Option<&PathBuf>) -> Result<TowerNetwork> {
    let list = read_towers_csv(open(towers)?).with_context(|| format!("reading {}", towers.display()))?;
    let ring = match boundary {
        Some(p) => Some(read_boundary_csv(open(p)?).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    TowerNetwork::build(list, ring).with_context(|| format!("building network from {}", towers.display()))
}
