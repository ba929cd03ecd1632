//! Archives: a directory of 8-bit grayscale images plus `manifest.jsonl`,
//! one JSON object per pair.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Variant, WarpPair};
use crate::error::{Error, Result};
use crate::geometry::CornerDisplacement;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageFormat {
    #[default]
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    index: u64,
    seed: u64,
    variant: String,
    source: String,
    target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
    d_gt: [f64; 8],
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn gray(img: &Tensor<f32>) -> Result<(usize, usize, Vec<u8>)> {
    match *img.shape() {
        [1, h, w] | [h, w] => Ok((h, w, img.data().iter().map(|&v| quantize(v)).collect())),
        ref s => Err(Error::Image(format!("only single-channel images can be stored, got {s:?}"))),
    }
}

/// Writes an 8-bit grayscale PGM (P5) or PNG, chosen by extension.
pub fn write_image(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (h, w, bytes) = gray(img)?;
    let file = BufWriter::new(fs::File::create(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => {
            let mut enc = png::Encoder::new(file, w as u32, h as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut wr = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
            wr.write_image_data(&bytes).map_err(|e| Error::Image(e.to_string()))?;
            wr.finish().map_err(|e| Error::Image(e.to_string()))?;
        }
        _ => {
            let mut file = file;
            write!(file, "P5\n{w} {h}\n255\n")?;
            file.write_all(&bytes)?;
            file.flush()?;
        }
    }
    Ok(())
}

fn pgm_tokens(data: &[u8], count: usize) -> Result<(Vec<usize>, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < count {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && data[i].is_ascii_digit() {
            i += 1;
        }
        let tok = std::str::from_utf8(&data[start..i]).unwrap_or("");
        out.push(tok.parse().map_err(|_| Error::Image("malformed PGM header".into()))?);
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((out, i + 1))
}

/// Reads an 8-bit grayscale PGM (P5) or PNG into `[1, H, W]` in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let (h, w, bytes) = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => {
            let mut dec = png::Decoder::new(BufReader::new(fs::File::open(path)?));
            dec.set_transformations(png::Transformations::EXPAND);
            let mut rd = dec.read_info().map_err(|e| Error::Image(e.to_string()))?;
            let mut buf = vec![0; rd.output_buffer_size().unwrap_or(0)];
            let info = rd.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
            if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
                return Err(Error::Image(format!("{}: expected 8-bit grayscale", path.display())));
            }
            buf.truncate(info.buffer_size());
            (info.height as usize, info.width as usize, buf)
        }
        _ => {
            let data = fs::read(path)?;
            if !data.starts_with(b"P5") {
                return Err(Error::Image(format!("{}: not a binary PGM", path.display())));
            }
            let (hdr, off) = pgm_tokens(&data[2..], 3)?;
            let (w, h, max) = (hdr[0], hdr[1], hdr[2]);
            if max != 255 {
                return Err(Error::Image(format!("{}: maxval {max} unsupported", path.display())));
            }
            let raster = data.get(2 + off..2 + off + w * h).ok_or_else(|| {
                Error::Image(format!("{}: truncated raster", path.display()))
            })?;
            (h, w, raster.to_vec())
        }
    };
    Tensor::new(&[1, h, w], bytes.iter().map(|&b| b as f32 / 255.0).collect())
}

/// Writes `pairs` into `dir` (created if needed).
pub fn write_archive(dir: &Path, pairs: &[WarpPair], format: ImageFormat) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ext = format.extension();
    let mut manifest = BufWriter::new(fs::File::create(dir.join(MANIFEST))?);
    for p in pairs {
        let stem = format!("{:06}", p.index);
        let rec = Record {
            index: p.index,
            seed: p.seed,
            variant: p.variant.as_str().into(),
            source: format!("{stem}_s.{ext}"),
            target: format!("{stem}_t.{ext}"),
            mask: p.mask.as_ref().map(|_| format!("{stem}_m.{ext}")),
            d_gt: p.d_gt.to_flat(),
        };
        write_image(&dir.join(&rec.source), &p.i_s)?;
        write_image(&dir.join(&rec.target), &p.i_t)?;
        if let (Some(m), Some(name)) = (&p.mask, &rec.mask) {
            write_image(&dir.join(name), m)?;
        }
        let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(manifest, "{line}")?;
    }
    manifest.flush()?;
    Ok(())
}

fn read_records(dir: &Path) -> Result<Vec<Record>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::CorruptManifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if rec.variant.parse::<Variant>().is_err() || rec.d_gt.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptManifest {
                line: i + 1,
                reason: "bad variant or non-finite displacement".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads every pair listed in the manifest, in manifest order.
pub fn read_archive(dir: &Path) -> Result<Vec<WarpPair>> {
    read_records(dir)?
        .into_iter()
        .map(|rec| {
            Ok(WarpPair {
                i_s: read_image(&dir.join(&rec.source))?,
                i_t: read_image(&dir.join(&rec.target))?,
                d_gt: CornerDisplacement::from_flat(&rec.d_gt),
                seed: rec.seed,
                index: rec.index,
                variant: rec.variant.parse()?,
                mask: rec.mask.as_ref().map(|m| read_image(&dir.join(m))).transpose()?,
            })
        })
        .collect()
}

/// SHA-256 over the manifest followed by every referenced file, in manifest
/// order, as lowercase hex.
pub fn archive_checksum(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(fs::read(dir.join(MANIFEST))?);
    for rec in read_records(dir)? {
        for name in [Some(&rec.source), Some(&rec.target), rec.mask.as_ref()].into_iter().flatten() {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingFile(path.display().to_string()));
            }
            hasher.update(fs::read(path)?);
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
