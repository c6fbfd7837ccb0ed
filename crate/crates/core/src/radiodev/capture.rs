//! I/Q capture files: raw interleaved little-endian i16 pairs, plus a text
//! sidecar `<file>.txt` holding `key = value` lines (`sample_rate`,
//! `center_freq_hz`, `start_tick`, `format`).

use crate::iqcore::{IqBuffer, IqSample, SAMPLE_BYTES};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureHeader {
    pub sample_rate: u64,
    pub center_freq_hz: u64,
    pub start_tick: u64,
}

impl CaptureHeader {
    fn to_text(&self) -> String {
        format!(
            "format = \"ci16_le\"\nsample_rate = {}\ncenter_freq_hz = {}\nstart_tick = {}\n",
            self.sample_rate, self.center_freq_hz, self.start_tick
        )
    }

    fn from_text(text: &str) -> io::Result<Self> {
        let field = |key: &str| -> io::Result<u64> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .and_then(|(_, v)| v.trim().parse().ok())
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("sidecar lacks {key}")))
        };
        Ok(Self {
            sample_rate: field("sample_rate")?,
            center_freq_hz: field("center_freq_hz")?,
            start_tick: field("start_tick")?,
        })
    }
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    let mut p = data.as_os_str().to_owned();
    p.push(".txt");
    PathBuf::from(p)
}

/// Appends blocks in tick order. Gaps are written as silence; blocks that
/// start before the current end are skipped.
pub struct CaptureWriter {
    out: BufWriter<File>,
    next_tick: u64,
    pub skipped_blocks: u64,
}

impl CaptureWriter {
    pub fn create(path: &Path, header: &CaptureHeader) -> io::Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(sidecar_path(path), header.to_text())?;
        Ok(Self { out: BufWriter::new(File::create(path)?), next_tick: header.start_tick, skipped_blocks: 0 })
    }

    pub fn write_at(&mut self, tick: u64, samples: &[IqSample]) -> io::Result<()> {
        if tick < self.next_tick {
            self.skipped_blocks += 1;
            return Ok(());
        }
        let gap = tick - self.next_tick;
        for _ in 0..gap {
            self.out.write_all(&[0u8; SAMPLE_BYTES])?;
        }
        for s in samples {
            self.out.write_all(&s.to_le_bytes())?;
        }
        self.next_tick = tick + samples.len() as u64;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Reads a capture and its sidecar back.
pub fn read_capture(path: &Path) -> io::Result<(CaptureHeader, IqBuffer)> {
    let header = CaptureHeader::from_text(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    let buf = IqBuffer::from_le_bytes(&bytes)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "capture length is not a whole number of samples"))?;
    Ok((header, buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaps_fill_with_silence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.iq");
        let h = CaptureHeader { sample_rate: 7_680_000, center_freq_hz: 595_000_000, start_tick: 100 };
        let mut w = CaptureWriter::create(&path, &h).unwrap();
        w.write_at(100, &[IqSample::new(1, 2)]).unwrap();
        w.write_at(103, &[IqSample::new(3, 4)]).unwrap();
        w.write_at(50, &[IqSample::new(9, 9)]).unwrap();
        w.flush().unwrap();
        assert_eq!(w.skipped_blocks, 1);
        let (h2, buf) = read_capture(&path).unwrap();
        assert_eq!(h2, h);
        assert_eq!(
            buf.samples(),
            &[IqSample::new(1, 2), IqSample::ZERO, IqSample::ZERO, IqSample::new(3, 4)]
        );
    }
}
