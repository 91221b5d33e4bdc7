//! Synthetic six-axis smartwatch IMU streams.
//!
//! Taps excite an underdamped case resonance on the screen-normal accel
//! axis plus a lever-arm torque on the gyro; swipes follow minimum-jerk
//! fingertip trajectories with friction pulses at dot crossings.
//! Background activities, wrist-raise orientation ramps, and additive
//! noise scaled to a target SNR turn these primitives into labeled
//! episodes. Everything is driven by explicit seeded RNG streams, so a
//! fixed seed reproduces a dataset byte for byte.

mod io;
mod process;
mod synth;

pub use io::{read_jsonl, write_jsonl, DataIoError, DatasetRecord};
pub use process::{add_noise_to_snr, measure_snr_db, resample};
pub use synth::{
    compose_episode, swipe_trajectory_accel, synth_activity, synth_nonpassword_interaction,
    synth_swipe, synth_tap, ActivityKind, EpisodeAction,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::SeededRng;

pub const GRAVITY: f64 = 9.81;

/// Sampling rates the pipeline understands, in Hz.
pub const SUPPORTED_RATES: [u32; 5] = [10, 40, 50, 100, 200];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown keypad digit {0}")]
    UnknownDigit(u8),
    #[error("invalid swipe pattern")]
    InvalidPattern,
    #[error("duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("unsupported rate {0} Hz (supported: 10, 40, 50, 100, 200)")]
    UnsupportedRate(u32),
    #[error("no integer resampling factor between {from} Hz and {to} Hz")]
    NoIntegerFactor { from: u32, to: u32 },
    #[error("segment has no signal power to scale noise against")]
    ZeroSignalPower,
    #[error("episode needs at least one action")]
    EmptyEpisode,
    #[error("malformed segment: {0}")]
    Malformed(String),
}

/// One IMU reading. Acceleration in m/s^2, angular rate in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub t: f64,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

/// Ground-truth annotation kinds. The first five are background
/// activities, `WristRaise` is the orientation ramp around screen
/// interactions, and the last three are the screen interactions
/// themselves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Still,
    Walk,
    Drink,
    Type,
    Stairs,
    WristRaise,
    PinEntry,
    AplEntry,
    NonPassword,
}

impl ActionKind {
    /// Whether the wearer is touching the screen: the positive class for
    /// input detection.
    pub fn is_interactive(self) -> bool {
        matches!(
            self,
            ActionKind::PinEntry | ActionKind::AplEntry | ActionKind::NonPassword
        )
    }

    pub fn is_password_entry(self) -> bool {
        matches!(self, ActionKind::PinEntry | ActionKind::AplEntry)
    }
}

/// Half-open annotated interval `[start, end)` in sample indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub kind: ActionKind,
    pub start: usize,
    pub end: usize,
}

impl LabelSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// A uniformly sampled, annotated stretch of six-axis motion data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub rate_hz: u32,
    pub samples: Vec<MotionSample>,
    pub labels: Vec<LabelSpan>,
}

impl MotionSegment {
    pub fn with_rate(rate_hz: u32) -> Self {
        Self {
            rate_hz,
            samples: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz as f64
    }

    /// Appends one reading; the timestamp follows from the index.
    pub fn push(&mut self, accel: [f64; 3], gyro: [f64; 3]) {
        let t = self.samples.len() as f64 / self.rate_hz as f64;
        self.samples.push(MotionSample { t, accel, gyro });
    }

    pub fn label(&mut self, kind: ActionKind, start: usize, end: usize) {
        debug_assert!(start <= end && end <= self.samples.len());
        self.labels.push(LabelSpan { kind, start, end });
    }

    pub fn spans_of(&self, pred: impl Fn(ActionKind) -> bool) -> Vec<LabelSpan> {
        self.labels.iter().copied().filter(|l| pred(l.kind)).collect()
    }

    /// Structural checks: finite values, uniform timestamps, labels in
    /// bounds, non-overlapping, and sorted.
    pub fn validate(&self) -> Result<(), SimError> {
        let dt = 1.0 / self.rate_hz as f64;
        for (i, s) in self.samples.iter().enumerate() {
            let finite =
                s.t.is_finite() && s.accel.iter().all(|v| v.is_finite()) && s.gyro.iter().all(|v| v.is_finite());
            if !finite {
                return Err(SimError::Malformed(format!("non-finite sample at {i}")));
            }
            if (s.t - i as f64 * dt).abs() > 1e-9 {
                return Err(SimError::Malformed(format!("non-uniform timestamp at {i}")));
            }
        }
        let mut prev_end = 0usize;
        for (i, l) in self.labels.iter().enumerate() {
            if l.start > l.end || l.end > self.samples.len() {
                return Err(SimError::Malformed(format!("label {i} out of bounds")));
            }
            if l.start < prev_end {
                return Err(SimError::Malformed(format!("label {i} overlaps predecessor")));
            }
            prev_end = l.end;
        }
        Ok(())
    }
}

/// Case geometry; round cases couple tap energy into the in-plane axes
/// more strongly than square ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Round,
    Square,
}

/// Physical response of one watch model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    /// Peak screen-normal acceleration per unit tap force, m/s^2.
    pub impulse_gain: f64,
    pub resonant_freq_hz: f64,
    /// In (0,1): the case rings when tapped.
    pub damping_ratio: f64,
    /// Screen center to wrist rotation axis, meters.
    pub lever_arm: f64,
    pub noise_floor_accel: f64,
    pub noise_floor_gyro: f64,
    pub geometry: Geometry,
}

impl DeviceProfile {
    pub fn preset(name: &str) -> Option<Self> {
        let p = match name {
            "sw3" => Self {
                name: "sw3".into(),
                impulse_gain: 2.6,
                resonant_freq_hz: 27.0,
                damping_ratio: 0.16,
                lever_arm: 0.062,
                noise_floor_accel: 0.030,
                noise_floor_gyro: 0.012,
                geometry: Geometry::Square,
            },
            "gear-live" => Self {
                name: "gear-live".into(),
                impulse_gain: 3.1,
                resonant_freq_hz: 34.0,
                damping_ratio: 0.13,
                lever_arm: 0.058,
                noise_floor_accel: 0.025,
                noise_floor_gyro: 0.010,
                geometry: Geometry::Square,
            },
            "moto360" => Self {
                name: "moto360".into(),
                impulse_gain: 2.2,
                resonant_freq_hz: 22.0,
                damping_ratio: 0.20,
                lever_arm: 0.065,
                noise_floor_accel: 0.035,
                noise_floor_gyro: 0.015,
                geometry: Geometry::Round,
            },
            _ => return None,
        };
        Some(p)
    }

    pub fn preset_names() -> [&'static str; 3] {
        ["sw3", "gear-live", "moto360"]
    }

    /// Fraction of the screen-normal tap waveform leaking into the
    /// in-plane accel axes.
    pub fn cross_coupling(&self) -> [f64; 2] {
        match self.geometry {
            Geometry::Square => [0.10, 0.07],
            Geometry::Round => [0.16, 0.11],
        }
    }

    pub fn assert_valid(&self) {
        assert!(self.damping_ratio > 0.0 && self.damping_ratio < 1.0);
        assert!(self.impulse_gain > 0.0 && self.resonant_freq_hz > 0.0);
        assert!(self.lever_arm > 0.0);
        assert!(self.noise_floor_accel >= 0.0 && self.noise_floor_gyro >= 0.0);
    }
}

/// Per-wearer motor parameters. Durations are lognormal: `exp(N(mu,
/// sigma))` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub tap_duration_mu: f64,
    pub tap_duration_sigma: f64,
    pub inter_tap_gap_mu: f64,
    pub inter_tap_gap_sigma: f64,
    /// Mean fingertip swipe speed, m/s; 0.05 is the reference speed the
    /// duration model is calibrated to.
    pub swipe_speed: f64,
    /// Lognormal sigma on whole-swipe duration.
    pub swipe_jitter: f64,
    /// Physiological tremor amplitude while the arm is raised, m/s^2.
    pub tremor_amp: f64,
}

impl Default for UserProfile {
    fn default() -> Self {
        Self {
            tap_duration_mu: (0.09f64).ln(),
            tap_duration_sigma: 0.22,
            inter_tap_gap_mu: (0.24f64).ln(),
            inter_tap_gap_sigma: 0.28,
            swipe_speed: 0.05,
            swipe_jitter: 0.32,
            tremor_amp: 0.03,
        }
    }
}

impl UserProfile {
    /// Draws an individual around the population defaults. Each user gets
    /// their own tempo, speed, and tremor level.
    pub fn sample(rng: &mut SeededRng) -> Self {
        let base = Self::default();
        Self {
            tap_duration_mu: base.tap_duration_mu + 0.12 * rng.normal(),
            tap_duration_sigma: base.tap_duration_sigma,
            inter_tap_gap_mu: base.inter_tap_gap_mu + 0.15 * rng.normal(),
            inter_tap_gap_sigma: base.inter_tap_gap_sigma,
            swipe_speed: base.swipe_speed * (0.13 * rng.normal()).exp(),
            swipe_jitter: base.swipe_jitter,
            tremor_amp: base.tremor_amp * (0.3 * rng.normal()).exp(),
        }
    }

    pub fn assert_valid(&self) {
        assert!(self.tap_duration_sigma > 0.0 && self.inter_tap_gap_sigma > 0.0);
        assert!(self.swipe_speed > 0.0 && self.swipe_jitter > 0.0);
        assert!(self.tremor_amp >= 0.0);
    }
}

/// Everything a generation run needs besides the RNG stream. `seed` is
/// carried for provenance; callers derive per-episode streams from it so
/// parallel and serial generation agree.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Target signal-to-noise ratio in dB; `f64::INFINITY` means no
    /// added noise (encoded as absent in JSON).
    pub snr_db: f64,
    pub device: DeviceProfile,
    pub user: UserProfile,
    pub rate_hz: u32,
}

impl GeneratorConfig {
    pub fn new(seed: u64, snr_db: f64, device: DeviceProfile, user: UserProfile, rate_hz: u32) -> Self {
        assert!(SUPPORTED_RATES.contains(&rate_hz), "unsupported rate {rate_hz}");
        assert!(!snr_db.is_nan());
        device.assert_valid();
        user.assert_valid();
        Self {
            seed,
            snr_db,
            device,
            user,
            rate_hz,
        }
    }

    /// 10 dB: the smartwatch preset. Watches sit 20-40 dB below phones.
    pub const SNR_SMARTWATCH_DB: f64 = 10.0;
    /// 35 dB: the smartphone preset.
    pub const SNR_SMARTPHONE_DB: f64 = 35.0;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_devices_are_valid() {
        for name in DeviceProfile::preset_names() {
            let d = DeviceProfile::preset(name).unwrap();
            d.assert_valid();
            assert_eq!(d.name, name);
        }
        assert!(DeviceProfile::preset("nonesuch").is_none());
    }

    #[test]
    fn segment_validation_catches_overlap() {
        let mut seg = MotionSegment::with_rate(40);
        for _ in 0..20 {
            seg.push([0.0; 3], [0.0; 3]);
        }
        seg.label(ActionKind::Still, 0, 10);
        seg.label(ActionKind::Walk, 8, 20);
        assert!(seg.validate().is_err());
    }

    #[test]
    fn segment_timestamps_are_uniform() {
        let mut seg = MotionSegment::with_rate(50);
        for _ in 0..7 {
            seg.push([1.0, 0.0, 0.0], [0.0; 3]);
        }
        seg.validate().unwrap();
        assert!((seg.samples[6].t - 0.12).abs() < 1e-12);
        assert!((seg.duration_s() - 0.14).abs() < 1e-12);
    }

    #[test]
    fn user_sampling_varies_but_stays_valid() {
        let mut rng = SeededRng::new(9);
        let a = UserProfile::sample(&mut rng);
        let b = UserProfile::sample(&mut rng);
        a.assert_valid();
        b.assert_valid();
        assert!(a.tap_duration_mu != b.tap_duration_mu);
    }
}
