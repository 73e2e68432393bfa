//! Flat binary mel container: an 8-byte magic, four little-endian `u32`
//! header fields (`T`, `n_mels`, `sr`, `hop`), then `T * n_mels` row-major
//! little-endian `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{MelConfig, MelSpectrogram};
use crate::error::{Error, Result};

pub const MEL_MAGIC: &[u8; 8] = b"XLF5MEL1";

pub fn write_mel_to<W: Write>(mel: &MelSpectrogram, mut w: W) -> std::io::Result<()> {
    w.write_all(MEL_MAGIC)?;
    let cfg = mel.config();
    for field in [
        mel.n_frames() as u32,
        cfg.n_mels as u32,
        cfg.sample_rate,
        cfg.hop as u32,
    ] {
        w.write_all(&field.to_le_bytes())?;
    }
    for v in mel.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn write_mel(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_mel_to(mel, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Reads a container. Fields the header does not carry (`n_fft`, band
/// limits, floor) are taken from `template`.
pub fn read_mel_from<R: Read>(mut r: R, template: &MelConfig) -> Result<MelSpectrogram> {
    let bad = |m: &str| Error::Parse {
        line: 0,
        message: m.to_string(),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != MEL_MAGIC {
        return Err(bad("not an XLF5MEL1 container"));
    }
    let mut header = [0u32; 4];
    for field in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        *field = u32::from_le_bytes(b);
    }
    let [n_frames, n_mels, sr, hop] = header.map(|v| v as usize);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|_| bad("unreadable body"))?;
    if bytes.len() != n_frames * n_mels * 4 {
        return Err(bad(&format!(
            "body has {} bytes, header implies {}",
            bytes.len(),
            n_frames * n_mels * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let config = MelConfig {
        sample_rate: sr as u32,
        hop,
        n_mels,
        n_fft: template.n_fft.max(hop),
        fmax: template.fmax.min(sr as f64 / 2.0),
        ..template.clone()
    };
    MelSpectrogram::new(data, n_frames, config)
}

pub fn read_mel(path: impl AsRef<Path>, template: &MelConfig) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_mel_from(BufReader::new(file), template)
}
