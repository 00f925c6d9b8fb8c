//! File formats and persistence: binary microstructure (`XMS1`), field
//! (`XFD1`), and model (`XLM1`) files, the JSON dataset manifest, and CSV
//! export. All writes are atomic (temp file + rename) and little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::elasticity::{MaterialSpec, VoigtField};
use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::microstructure::{Microstructure, Orientation};
use crate::model::{RankTerm, TrainConfig, XlraModel};

const MAGIC_MICROSTRUCTURE: &[u8; 4] = b"XMS1";
const MAGIC_FIELD: &[u8; 4] = b"XFD1";
const MAGIC_MODEL: &[u8; 4] = b"XLM1";

/// Writes `bytes` to a temp file in the target directory, then renames it
/// into place, so readers never observe a partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp = PathBuf::from(path);
    tmp.set_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Sequential little-endian reader over an in-memory file image.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Cursor { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(format_err(self.path, "unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(format_err(
                self.path,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(format_err(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}

fn push_dims(out: &mut Vec<u8>, grid: &PeriodicGrid) {
    out.push(grid.dims().len() as u8);
    for &d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn read_grid(c: &mut Cursor) -> Result<PeriodicGrid> {
    let ndim = c.u8()? as usize;
    if !(2..=3).contains(&ndim) {
        return Err(format_err(c.path, format!("unsupported ndim {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(c.u32()? as usize);
    }
    PeriodicGrid::new(&dims)
}

/// Serializes a microstructure to the `XMS1` binary layout.
pub fn write_microstructure(path: &Path, ms: &Microstructure) -> Result<()> {
    ms.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_MICROSTRUCTURE);
    push_dims(&mut out, &ms.grid);
    let flags = ms.phase.is_some() as u8 | (ms.orientation.is_some() as u8) << 1;
    out.push(flags);
    out.extend_from_slice(&ms.n_phases.to_le_bytes());
    if let Some(phase) = &ms.phase {
        for &p in phase {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    if let Some(orientation) = &ms.orientation {
        for o in orientation {
            for v in [o.phi1, o.cap_phi, o.phi2] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    atomic_write(path, &out)
}

pub fn read_microstructure(path: &Path) -> Result<Microstructure> {
    let buf = fs::read(path)?;
    let mut c = Cursor::new(&buf, path);
    c.magic(MAGIC_MICROSTRUCTURE)?;
    let grid = read_grid(&mut c)?;
    let flags = c.u8()?;
    let n_phases = c.u16()?;
    let n = grid.n();
    let phase = if flags & 1 != 0 {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(c.u16()?);
        }
        Some(v)
    } else {
        None
    };
    let orientation = if flags & 2 != 0 {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(Orientation {
                phi1: c.f64()?,
                cap_phi: c.f64()?,
                phi2: c.f64()?,
            });
        }
        Some(v)
    } else {
        None
    };
    c.done()?;
    let ms = Microstructure {
        grid,
        n_phases,
        phase,
        orientation,
    };
    ms.validate()?;
    Ok(ms)
}

/// Serializes a strain/stress field to the `XFD1` binary layout
/// (component labels and per-component means in the header, cell-major
/// components-fastest f64 payload).
pub fn write_field(path: &Path, field: &VoigtField) -> Result<()> {
    let v = field.components.len();
    if field.data.len() != field.grid.n() * v || field.mean.len() != v {
        return Err(Error::invalid("field data does not match grid/components"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_FIELD);
    push_dims(&mut out, &field.grid);
    out.extend_from_slice(&(v as u16).to_le_bytes());
    for label in &field.components {
        let bytes = label.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    for &m in &field.mean {
        out.extend_from_slice(&m.to_le_bytes());
    }
    for &x in &field.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    atomic_write(path, &out)
}

pub fn read_field(path: &Path) -> Result<VoigtField> {
    let buf = fs::read(path)?;
    let mut c = Cursor::new(&buf, path);
    c.magic(MAGIC_FIELD)?;
    let grid = read_grid(&mut c)?;
    let v = c.u16()? as usize;
    let mut components = Vec::with_capacity(v);
    for _ in 0..v {
        let len = c.u16()? as usize;
        let bytes = c.take(len)?;
        components.push(
            String::from_utf8(bytes.to_vec())
                .map_err(|_| format_err(path, "component label is not UTF-8"))?,
        );
    }
    let mut mean = Vec::with_capacity(v);
    for _ in 0..v {
        mean.push(c.f64()?);
    }
    let n = grid.n() * v;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(c.f64()?);
    }
    c.done()?;
    Ok(VoigtField {
        grid,
        components,
        mean,
        data,
    })
}

/// JSON header embedded in an `XLM1` model file.
#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    basis: BasisSpec,
    dims: Vec<usize>,
    target: String,
    scale: f64,
    betas: Vec<f64>,
    n_basis: usize,
    config: TrainConfig,
}

/// Serializes a trained model: `XLM1` magic, u64 JSON-header length, JSON
/// header, then one interleaved complex-f64 block per (rank, basis index)
/// over the row-major frequency grid.
pub fn write_model(path: &Path, model: &XlraModel) -> Result<()> {
    let n_basis = model.ranks.first().map_or(0, |r| r.coeffs.len());
    let n: usize = model.dims.iter().product();
    for rank in &model.ranks {
        if rank.coeffs.len() != n_basis || rank.coeffs.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("model coefficient blocks are inconsistent"));
        }
    }
    let header = ModelHeader {
        format_version: 1,
        basis: model.basis.clone(),
        dims: model.dims.clone(),
        target: model.target.clone(),
        scale: model.scale,
        betas: model.ranks.iter().map(|r| r.beta).collect(),
        n_basis,
        config: model.config,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_MODEL);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for rank in &model.ranks {
        for block in &rank.coeffs {
            for z in block {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    atomic_write(path, &out)
}

pub fn read_model(path: &Path) -> Result<XlraModel> {
    let buf = fs::read(path)?;
    let mut c = Cursor::new(&buf, path);
    c.magic(MAGIC_MODEL)?;
    let header_len = c.u64()? as usize;
    let header: ModelHeader = serde_json::from_slice(c.take(header_len)?)?;
    if header.format_version != 1 {
        return Err(format_err(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    let n: usize = header.dims.iter().product();
    let mut ranks = Vec::with_capacity(header.betas.len());
    for &beta in &header.betas {
        let mut coeffs = Vec::with_capacity(header.n_basis);
        for _ in 0..header.n_basis {
            let mut block = Vec::with_capacity(n);
            for _ in 0..n {
                let re = c.f64()?;
                let im = c.f64()?;
                block.push(Complex64::new(re, im));
            }
            coeffs.push(block);
        }
        ranks.push(RankTerm { beta, coeffs });
    }
    c.done()?;
    Ok(XlraModel {
        basis: header.basis,
        dims: header.dims,
        target: header.target,
        scale: header.scale,
        ranks,
        config: header.config,
    })
}

/// Train/test membership of one dataset entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One (microstructure, solved field) pair; the solver fills in the
/// `field`/`iterations`/`residual`/`error` entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub microstructure: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub split: Split,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    /// Populated when the oracle failed on this entry; the batch continues.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Ordered dataset description: shared material/load plus one entry per
/// instance. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub material: MaterialSpec,
    pub mean_strain: Vec<f64>,
    pub dims: Vec<usize>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::invalid("manifest has no entries"));
        }
        if self.mean_strain.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("applied mean strain is zero"));
        }
        Ok(())
    }

    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    atomic_write(path, &json)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(path)?)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Resolves a manifest-relative path against the manifest's directory.
pub fn resolve(manifest_path: &Path, relative: &str) -> PathBuf {
    match manifest_path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(relative),
        _ => PathBuf::from(relative),
    }
}

/// Writes a CSV table with a header row; numbers use Rust's shortest
/// round-trip formatting so reading them back is lossless.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::invalid("CSV row width does not match header"));
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Serializes any report structure as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    atomic_write(path, &json)
}
