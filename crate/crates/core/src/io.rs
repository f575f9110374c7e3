//! File formats: 8-bit PGM previews, raw f64 images with text sidecars,
//! channel-data dumps, and CSV histories.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::transport::ChannelData;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Binary 8-bit PGM from pixel values in [0, 1]; rows are depth rows.
pub fn write_pgm(path: &Path, img: &[f64], nx: usize, nz: usize) -> Result<(), IoError> {
    assert_eq!(img.len(), nx * nz);
    let mut buf = format!("P5\n{nx} {nz}\n255\n").into_bytes();
    buf.extend(
        img.iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, buf).map_err(|e| file_err(path, e))
}

/// Geometry of a stored image, mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMeta {
    pub nx: usize,
    pub nz: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

/// Raw little-endian f64 pixels plus a `.meta` text sidecar describing the
/// grid extent.
pub fn write_image(path: &Path, img: &[f64], meta: &ImageMeta) -> Result<(), IoError> {
    assert_eq!(img.len(), meta.nx * meta.nz);
    let mut buf = Vec::with_capacity(img.len() * 8);
    for v in img {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| file_err(path, e))?;
    let sidecar = sidecar_path(path);
    let text = format!(
        "nx = {}\nnz = {}\nx_min = {}\nx_max = {}\nz_min = {}\nz_max = {}\n",
        meta.nx, meta.nz, meta.x_min, meta.x_max, meta.z_min, meta.z_max
    );
    fs::write(&sidecar, text).map_err(|e| file_err(&sidecar, e))
}

pub fn read_image(path: &Path) -> Result<(Vec<f64>, ImageMeta), IoError> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| file_err(&sidecar, e))?;
    let mut kv = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<f64, IoError> {
        kv.get(k)
            .ok_or_else(|| format_err(&sidecar, format!("missing key {k}")))?
            .parse::<f64>()
            .map_err(|e| format_err(&sidecar, format!("bad value for {k}: {e}")))
    };
    let meta = ImageMeta {
        nx: get("nx")? as usize,
        nz: get("nz")? as usize,
        x_min: get("x_min")?,
        x_max: get("x_max")?,
        z_min: get("z_min")?,
        z_max: get("z_max")?,
    };
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    if bytes.len() != meta.nx * meta.nz * 8 {
        return Err(format_err(
            path,
            format!(
                "expected {} pixels ({} bytes), file has {} bytes",
                meta.nx * meta.nz,
                meta.nx * meta.nz * 8,
                bytes.len()
            ),
        ));
    }
    let img = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((img, meta))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

const CHANNEL_MAGIC: &[u8; 4] = b"SDCH";
const CHANNEL_VERSION: u32 = 1;

/// Channel data: magic, version, element and sample counts, sampling rate,
/// then little-endian f64 samples row-major by element.
pub fn write_channel(path: &Path, ch: &ChannelData) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(24 + ch.values.len() * 8);
    buf.extend_from_slice(CHANNEL_MAGIC);
    buf.extend_from_slice(&CHANNEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ch.n_elements as u32).to_le_bytes());
    buf.extend_from_slice(&(ch.n_samples as u32).to_le_bytes());
    buf.extend_from_slice(&ch.fs.to_le_bytes());
    for v in &ch.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| file_err(path, e))
}

pub fn read_channel(path: &Path) -> Result<ChannelData, IoError> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    if bytes.len() < 24 || &bytes[0..4] != CHANNEL_MAGIC {
        return Err(format_err(path, "not a channel-data file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHANNEL_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let n_elements = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n_samples = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let fs_hz = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let want = 24 + n_elements * n_samples * 8;
    if bytes.len() != want {
        return Err(format_err(
            path,
            format!("expected {want} bytes, found {}", bytes.len()),
        ));
    }
    let mut ch = ChannelData::zeros(n_elements, n_samples, fs_hz);
    for (i, c) in bytes[24..].chunks_exact(8).enumerate() {
        ch.values[i] = f64::from_le_bytes(c.try_into().unwrap());
    }
    Ok(ch)
}

/// CSV with a header row; numbers are written with full precision.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut f = fs::File::create(path).map_err(|e| file_err(path, e))?;
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    f.write_all(out.as_bytes()).map_err(|e| file_err(path, e))
}

/// FNV-1a over the raw config text, written into run manifests so outputs
/// can be traced back to their exact inputs.
pub fn text_fingerprint(text: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Plain-text manifest describing one run.
pub fn write_manifest(
    path: &Path,
    config_path: &str,
    config_text: &str,
    seed: u64,
    outputs: &[String],
) -> Result<(), IoError> {
    let mut text = String::new();
    text.push_str(&format!("config = {config_path}\n"));
    text.push_str(&format!(
        "config_fingerprint = {:016x}\n",
        text_fingerprint(config_text)
    ));
    text.push_str(&format!("seed = {seed}\n"));
    for o in outputs {
        text.push_str(&format!("output = {o}\n"));
    }
    fs::write(path, text).map_err(|e| file_err(path, e))
}
