//! IONF v1 frame container.
//!
//! A frame file is one line of JSON metadata terminated by `\n`, followed by
//! `width·height` row-major little-endian `u32` pixel counts and nothing else.
//! A series directory holds the frame files plus `manifest.json`.

use super::{Frame, FrameMetadata, FrameSeries, SeriesManifest};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const FRAME_FORMAT: &str = "IONF v1";
pub const SERIES_FORMAT: &str = "IONF v1 series";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    #[serde(flatten)]
    meta: FrameMetadata,
}

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:05}.ionf")
}

pub fn write_frame<W: Write>(mut w: W, frame: &Frame) -> Result<()> {
    if frame.pixels.len() != frame.meta.width * frame.meta.height {
        return Err(Error::Format(format!(
            "pixel count {} does not match {}×{}",
            frame.pixels.len(),
            frame.meta.width,
            frame.meta.height
        )));
    }
    let header = Header {
        format: FRAME_FORMAT.to_string(),
        meta: frame.meta.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(frame.pixels.len() * 4);
    for p in &frame.pixels {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_frame<R: BufRead>(mut r: R) -> Result<Frame> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing metadata line terminator".into()));
    }
    let header: Header =
        serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| Error::Format(format!("bad metadata: {e}")))?;
    if header.format != FRAME_FORMAT {
        return Err(Error::Format(format!("unsupported format {:?}", header.format)));
    }
    let n = header.meta.width * header.meta.height;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("truncated pixel block, expected {n} pixels")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after pixel block".into()));
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Frame {
        pixels,
        meta: header.meta,
    })
}

pub fn save_frame(path: &Path, frame: &Frame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frame(&mut w, frame)?;
    w.flush()?;
    Ok(())
}

pub fn load_frame(path: &Path) -> Result<Frame> {
    read_frame(BufReader::new(File::open(path)?))
}

/// Writes every frame and the manifest into `dir` (created if missing).
pub fn save_series(dir: &Path, series: &FrameSeries) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (frame, entry) in series.frames.iter().zip(&series.manifest.frames) {
        save_frame(&dir.join(&entry.file), frame)?;
    }
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &series.manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<SeriesManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: SeriesManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
    if manifest.format != SERIES_FORMAT {
        return Err(Error::Format(format!(
            "unsupported series format {:?}",
            manifest.format
        )));
    }
    if manifest.frames.len() != manifest.n_frames {
        return Err(Error::Format(format!(
            "manifest lists {} frames but declares {}",
            manifest.frames.len(),
            manifest.n_frames
        )));
    }
    Ok(manifest)
}
