//! Binary log of the Jacobians a filter used.
//!
//! Layout, all integers `u64` little-endian and all floats `f64` little-endian:
//!
//! ```text
//! "KDCL1\n"
//! name_len, filter kind name (UTF-8, e.g. "KD")
//! repeated:
//!   record_len (bytes that follow)
//!   step
//!   f_rows, f_cols, f (row-major)
//!   h_rows, h_cols, h (row-major)
//!   mean_len, mean (robot-major [x, y, z, yaw])
//! ```
//!
//! Steps are strictly increasing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use kdcl_core::observability::LinearizationRecord;
use kdcl_core::{FilterKind, FleetState};
use nalgebra::{DMatrix, DVector};

use crate::error::CliError;

pub const MAGIC: &[u8; 6] = b"KDCL1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianLog {
    pub kind: FilterKind,
    pub records: Vec<LinearizationRecord>,
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    put_u64(buf, m.nrows() as u64);
    put_u64(buf, m.ncols() as u64);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

fn encode_record(rec: &LinearizationRecord) -> Vec<u8> {
    let mut body = Vec::new();
    put_u64(&mut body, rec.step);
    put_matrix(&mut body, &rec.f);
    put_matrix(&mut body, &rec.h);
    let mean = rec.mean.to_vector();
    put_u64(&mut body, mean.len() as u64);
    for v in mean.iter() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    body
}

/// Streams records to a file, enforcing increasing steps.
pub struct LogWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
    last_step: Option<u64>,
}

impl LogWriter {
    pub fn create(path: &Path, kind: FilterKind) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_owned(),
            last_step: None,
        };
        let name = kind.as_str().as_bytes();
        let mut head = MAGIC.to_vec();
        put_u64(&mut head, name.len() as u64);
        head.extend_from_slice(name);
        w.write_bytes(&head)?;
        Ok(w)
    }

    fn write_bytes(&mut self, bytes: &[u8]) -> Result<(), CliError> {
        self.out.write_all(bytes).map_err(|e| CliError::io(&self.path, e))
    }

    pub fn append(&mut self, rec: &LinearizationRecord) -> Result<(), CliError> {
        if self.last_step.is_some_and(|s| rec.step <= s) {
            return Err(CliError::Log(format!(
                "step {} after step {}",
                rec.step,
                self.last_step.unwrap_or_default()
            )));
        }
        let body = encode_record(rec);
        let mut len = Vec::with_capacity(8);
        put_u64(&mut len, body.len() as u64);
        self.write_bytes(&len)?;
        self.write_bytes(&body)?;
        self.last_step = Some(rec.step);
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn write_log(path: &Path, log: &JacobianLog) -> Result<(), CliError> {
    let mut w = LogWriter::create(path, log.kind)?;
    for rec in &log.records {
        w.append(rec)?;
    }
    w.finish()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::Log(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CliError> {
        usize::try_from(self.u64()?).map_err(|_| CliError::Log("length overflow".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| CliError::Log("length overflow".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>, CliError> {
        let r = self.len()?;
        let c = self.len()?;
        let n = r
            .checked_mul(c)
            .ok_or_else(|| CliError::Log("matrix size overflow".into()))?;
        Ok(DMatrix::from_row_slice(r, c, &self.f64s(n)?))
    }
}

pub fn decode_log(bytes: &[u8]) -> Result<JacobianLog, CliError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(CliError::Log("bad magic".into()));
    }
    let name_len = cur.len()?;
    let name = std::str::from_utf8(cur.take(name_len)?)
        .map_err(|_| CliError::Log("filter name is not UTF-8".into()))?;
    let kind = name
        .parse::<FilterKind>()
        .map_err(|_| CliError::Log(format!("unknown filter kind {name:?}")))?;
    let mut records: Vec<LinearizationRecord> = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.len()?;
        let start = cur.pos;
        let step = cur.u64()?;
        let f = cur.matrix()?;
        let h = cur.matrix()?;
        let mean_len = cur.len()?;
        let mean = FleetState::from_vector(&DVector::from_vec(cur.f64s(mean_len)?))
            .map_err(|e| CliError::Log(format!("record {step}: {e}")))?;
        if cur.pos - start != len {
            return Err(CliError::Log(format!("record {step}: length {len} does not match contents")));
        }
        if let Some(prev) = records.last() {
            if step <= prev.step {
                return Err(CliError::Log(format!("step {step} after step {}", prev.step)));
            }
        }
        records.push(LinearizationRecord { step, f, h, mean });
    }
    Ok(JacobianLog { kind, records })
}

pub fn read_log(path: &Path) -> Result<JacobianLog, CliError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::io(path, e))?;
    decode_log(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kdcl_core::RobotPose;

    fn record(step: u64) -> LinearizationRecord {
        let mean = FleetState::new(vec![
            RobotPose::from_xyz_yaw(1.0, 2.0, 3.0, 0.5).unwrap(),
            RobotPose::from_xyz_yaw(-1.0, 0.0, 2.0, -0.5).unwrap(),
        ])
        .unwrap();
        LinearizationRecord {
            step,
            f: DMatrix::from_fn(8, 8, |r, c| (r * 8 + c) as f64 + 0.25),
            h: DMatrix::from_fn(6, 8, |r, c| r as f64 - c as f64 * 1e-3),
            mean,
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kd.kdcl");
        let log = JacobianLog {
            kind: FilterKind::Kd,
            records: vec![record(1), record(2), record(5)],
        };
        write_log(&path, &log).unwrap();
        assert_eq!(read_log(&path).unwrap(), log);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], MAGIC);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        // first f entry row-major
        let first = 6 + 8 + 2 + 8 + 8 + 16;
        assert_eq!(f64::from_le_bytes(bytes[first..first + 8].try_into().unwrap()), 0.25);
    }

    #[test]
    fn empty_h_round_trips() {
        let mut rec = record(3);
        rec.h = DMatrix::zeros(0, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("std.kdcl");
        let log = JacobianLog { kind: FilterKind::Std, records: vec![rec] };
        write_log(&path, &log).unwrap();
        assert_eq!(read_log(&path).unwrap(), log);
    }

    #[test]
    fn rejects_non_increasing_steps_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.kdcl");
        let log = JacobianLog { kind: FilterKind::Std, records: vec![record(2), record(2)] };
        assert!(matches!(write_log(&path, &log), Err(CliError::Log(_))));

        write_log(&path, &JacobianLog { kind: FilterKind::Std, records: vec![record(1)] }).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(decode_log(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_log(&bad).is_err());
    }
}
