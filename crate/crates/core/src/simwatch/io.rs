//! JSON Lines dataset records: one labeled segment per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::passwords::Password;

use super::{LabelSpan, MotionSegment};

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("record {0}: accel/gyro lengths differ")]
    LengthMismatch(u64),
}

/// One dataset record. `snr_db` is absent for clean segments (JSON has
/// no infinity); `password` is absent for background-only segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub rate_hz: u32,
    pub device: String,
    pub user: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub snr_db: Option<f64>,
    pub password: Option<Password>,
    pub labels: Vec<LabelSpan>,
    pub accel: Vec<[f64; 3]>,
    pub gyro: Vec<[f64; 3]>,
}

impl DatasetRecord {
    pub fn from_segment(
        id: u64,
        seg: &MotionSegment,
        device: &str,
        user: u32,
        password: Option<Password>,
        snr_db: f64,
    ) -> Self {
        Self {
            id,
            rate_hz: seg.rate_hz,
            device: device.to_string(),
            user,
            snr_db: if snr_db.is_finite() { Some(snr_db) } else { None },
            password,
            labels: seg.labels.clone(),
            accel: seg.samples.iter().map(|s| s.accel).collect(),
            gyro: seg.samples.iter().map(|s| s.gyro).collect(),
        }
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db.unwrap_or(f64::INFINITY)
    }

    pub fn to_segment(&self) -> Result<MotionSegment, DataIoError> {
        if self.accel.len() != self.gyro.len() {
            return Err(DataIoError::LengthMismatch(self.id));
        }
        let mut seg = MotionSegment::with_rate(self.rate_hz);
        for (a, g) in self.accel.iter().zip(&self.gyro) {
            seg.push(*a, *g);
        }
        seg.labels = self.labels.clone();
        Ok(seg)
    }
}

/// Writes records as JSON Lines. Field order and float formatting are
/// fixed, so equal records always produce equal bytes.
pub fn write_jsonl<W: Write>(mut w: W, records: &[DatasetRecord]) -> Result<(), DataIoError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| DataIoError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<DatasetRecord>, DataIoError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(&line).map_err(|source| DataIoError::Json { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}
