//! The adaptive three-mode sensing loop and its energy accounting.
//!
//! Passive mode watches a 10 Hz accelerometer for a wrist-raise
//! (gravity swinging onto the screen-normal axis). Monitoring mode
//! frames a 40 Hz accelerometer stream and asks the linear SVM whether
//! an input session is underway. Extraction mode caches both sensors at
//! 200 Hz until the detector has been quiet for a run of frames, then
//! smooths the frame labels, cuts the longest positive run, and hands
//! it to the password-entry identifier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    extract_features, frame_stream, identify_sequence, longest_positive_segment, pooled_features,
    segment_features, smooth, svm_predict, svm_train, FeatureVector, FrontendError, LinearSvm,
    LogisticIdentifier, Smoother,
};
use crate::numerics::SeededRng;
use crate::simwatch::{ActionKind, LabelSpan, MotionSegment, GRAVITY};

pub const PASSIVE_RATE_HZ: u32 = 10;
pub const MONITOR_RATE_HZ: u32 = 40;
pub const EXTRACT_RATE_HZ: u32 = 200;

/// Detection window length and stride, in 40 Hz monitoring samples.
pub const FRAME_LEN: usize = 60;
pub const FRAME_STRIDE: usize = 6;
/// The same window geometry in 200 Hz source samples.
pub const FRAME_LEN_SAMPLES_200: usize = FRAME_LEN * 5;
pub const FRAME_STRIDE_SAMPLES_200: usize = FRAME_STRIDE * 5;

/// A frame is ground-truth positive when at least this fraction of it
/// overlaps an input session (wrist-raise gesture or interaction).
pub const POSITIVE_OVERLAP_FRAC: f64 = 0.5;

/// Shortest smoothed positive run kept as an extraction.
pub const MIN_RUN_FRAMES: usize = 10;
/// Consecutive negative frames that end extraction mode.
pub const STOP_AFTER_NEGATIVES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensingMode {
    Passive,
    Monitoring,
    Extraction,
}

impl SensingMode {
    /// Sensors drawn on in this mode, as (sensor, rate) pairs.
    pub fn sensors(self) -> &'static [(&'static str, u32)] {
        match self {
            SensingMode::Passive => &[("accel", PASSIVE_RATE_HZ)],
            SensingMode::Monitoring => &[("accel", MONITOR_RATE_HZ)],
            SensingMode::Extraction => {
                &[("accel", EXTRACT_RATE_HZ), ("gyro", EXTRACT_RATE_HZ)]
            }
        }
    }
}

/// Battery drain per sensor and rate, in percent of charge per hour.
/// Passive and monitoring rows fold in the always-on trigger and
/// detector compute; keys look like "accel.40".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    entries: BTreeMap<String, f64>,
}

impl CostTable {
    pub fn new() -> Self {
        CostTable {
            entries: BTreeMap::new(),
        }
    }

    /// Bench-calibrated defaults. Constant-rate rows sum to 2.0, 4.4
    /// and 6.3 %/hr for both sensors at 50, 100 and 200 Hz; the
    /// passive and monitoring rows carry the detection overhead.
    pub fn default_calibrated() -> Self {
        let mut t = CostTable::new();
        t.set("accel", 10, 2.00);
        t.set("accel", 40, 2.10);
        t.set("accel", 50, 0.60);
        t.set("gyro", 50, 1.40);
        t.set("accel", 100, 1.10);
        t.set("gyro", 100, 3.30);
        t.set("accel", 200, 1.55);
        t.set("gyro", 200, 4.75);
        t
    }

    pub fn set(&mut self, sensor: &str, rate: u32, pct_per_hr: f64) {
        self.entries.insert(format!("{sensor}.{rate}"), pct_per_hr);
    }

    /// Builds a table from dotted config keys: "cost.accel.10" or
    /// "accel.10", value in %/hr. Unknown shapes are an error.
    pub fn from_config_pairs(pairs: &[(String, f64)]) -> Result<Self, FrontendError> {
        let mut t = CostTable::new();
        for (key, value) in pairs {
            let parts: Vec<&str> = key.split('.').collect();
            let tail = match parts.as_slice() {
                ["cost", sensor, rate] => Some((*sensor, *rate)),
                [sensor, rate] => Some((*sensor, *rate)),
                _ => None,
            };
            let parsed = tail.and_then(|(sensor, rate)| {
                if sensor == "accel" || sensor == "gyro" {
                    rate.parse::<u32>().ok().map(|r| (sensor, r))
                } else {
                    None
                }
            });
            match parsed {
                Some((sensor, rate)) => t.set(sensor, rate, *value),
                None => {
                    return Err(FrontendError::BadConfig(format!(
                        "cost key {key:?} is not cost.<accel|gyro>.<rate>"
                    )))
                }
            }
        }
        Ok(t)
    }

    pub fn cost(&self, sensor: &'static str, rate: u32) -> Result<f64, FrontendError> {
        self.entries
            .get(&format!("{sensor}.{rate}"))
            .copied()
            .ok_or(FrontendError::MissingCost { sensor, rate })
    }

    /// %/hr while in a sensing mode: sum over its sensors.
    pub fn mode_cost_per_hr(&self, mode: SensingMode) -> Result<f64, FrontendError> {
        mode.sensors()
            .iter()
            .map(|&(s, r)| self.cost(s, r))
            .sum()
    }

    /// %/hr of a constant-rate pipeline sampling both sensors.
    pub fn constant_rate_cost(&self, rate: u32) -> Result<f64, FrontendError> {
        Ok(self.cost("accel", rate)? + self.cost("gyro", rate)?)
    }
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable::default_calibrated()
    }
}

/// Time-ordered record of which sensing mode was active when, plus the
/// battery percentage that implies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub table: CostTable,
    /// (mode, start, end) in seconds; intervals abut and never overlap.
    pub timeline: Vec<(SensingMode, f64, f64)>,
    accumulated_pct: f64,
}

impl EnergyLedger {
    pub fn new(table: CostTable) -> Self {
        EnergyLedger {
            table,
            timeline: Vec::new(),
            accumulated_pct: 0.0,
        }
    }

    pub fn add(
        &mut self,
        mode: SensingMode,
        start_s: f64,
        end_s: f64,
    ) -> Result<(), FrontendError> {
        assert!(end_s >= start_s, "ledger interval runs backwards");
        if let Some(&(_, _, prev_end)) = self.timeline.last() {
            assert!(
                (start_s - prev_end).abs() < 1e-9,
                "ledger gap: {prev_end} -> {start_s}"
            );
        }
        let cost = self.table.mode_cost_per_hr(mode)?;
        self.accumulated_pct += cost * (end_s - start_s) / 3600.0;
        self.timeline.push((mode, start_s, end_s));
        Ok(())
    }

    pub fn total_pct(&self) -> f64 {
        self.accumulated_pct
    }

    /// Recomputes the total from the timeline; equals total_pct.
    pub fn recomputed_pct(&self) -> Result<f64, FrontendError> {
        let mut sum = 0.0;
        for &(mode, s, e) in &self.timeline {
            sum += self.table.mode_cost_per_hr(mode)? * (e - s) / 3600.0;
        }
        Ok(sum)
    }

    pub fn seconds_in(&self, mode: SensingMode) -> f64 {
        self.timeline
            .iter()
            .filter(|(m, _, _)| *m == mode)
            .map(|(_, s, e)| e - s)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct AdaptiveConfig {
    /// Gravity-projection jump (in g) that wakes monitoring.
    pub trigger_delta_g: f64,
    /// Monitoring gives up and returns to passive after this long
    /// without a positive frame.
    pub monitor_timeout_s: f64,
    pub min_run_frames: usize,
    pub stop_after_negatives: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            trigger_delta_g: 0.5,
            monitor_timeout_s: 8.0,
            min_run_frames: MIN_RUN_FRAMES,
            stop_after_negatives: STOP_AFTER_NEGATIVES,
        }
    }
}

/// Frame decisions for one monitoring burst, for diagnostics and
/// detection scoring. Frame k covers source samples
/// [origin + 30k, origin + 30k + 300).
#[derive(Clone, Debug)]
pub struct MonitoringBurst {
    pub origin: usize,
    pub raw: Vec<bool>,
    pub smoothed: Vec<bool>,
}

/// One extracted candidate segment. Every sufficiently long frame run
/// is materialized; `accepted` records the identifier's verdict so
/// callers can separate extraction quality from triage quality.
#[derive(Clone, Debug)]
pub struct ExtractedCandidate {
    /// Source-sample interval, end exclusive.
    pub sample_start: usize,
    pub sample_end: usize,
    /// Inclusive frame-index run inside its burst.
    pub frame_run: (usize, usize),
    /// Index into the outcome's burst list.
    pub burst: usize,
    /// Identifier score in [0, 1].
    pub score: f64,
    /// Identifier verdict; only accepted candidates reach the attack.
    pub accepted: bool,
    /// Cached 200 Hz data. Samples that predate extraction mode hold
    /// the 40 Hz monitoring buffer zero-order-held with zeroed gyro.
    pub segment: MotionSegment,
}

#[derive(Clone, Debug)]
pub struct AdaptiveOutcome {
    pub candidates: Vec<ExtractedCandidate>,
    pub bursts: Vec<MonitoringBurst>,
    pub ledger: EnergyLedger,
}

/// The 40 Hz monitoring view of a 200 Hz stream: every fifth
/// accelerometer sample, as the monitoring hardware would read it.
/// Detector training must frame episodes through this same view.
pub fn monitor_stream(episode: &MotionSegment) -> Vec<[f64; 3]> {
    episode.samples.iter().step_by(5).map(|s| s.accel).collect()
}

fn in_session(kind: ActionKind) -> bool {
    kind.is_interactive() || kind == ActionKind::WristRaise
}

/// Maximal contiguous input-session intervals (wrist-raise gestures
/// plus the interactions inside them), with a flag for sessions that
/// contain password entry. Assumes sorted, non-overlapping labels.
pub fn session_spans(labels: &[LabelSpan]) -> Vec<(usize, usize, bool)> {
    let mut out: Vec<(usize, usize, bool)> = Vec::new();
    for span in labels {
        if !in_session(span.kind) {
            continue;
        }
        let pwd = span.kind.is_password_entry();
        match out.last_mut() {
            Some((_, end, has_pwd)) if *end == span.start => {
                *end = span.end;
                *has_pwd |= pwd;
            }
            _ => out.push((span.start, span.end, pwd)),
        }
    }
    out
}

/// Ground-truth frame labels on the monitoring grid anchored at
/// `origin` (a 200 Hz sample index): a frame is positive when at least
/// half of it lies inside an input session.
pub fn frame_truth_labels(labels: &[LabelSpan], origin: usize, n_frames: usize) -> Vec<bool> {
    let need = (POSITIVE_OVERLAP_FRAC * FRAME_LEN_SAMPLES_200 as f64).ceil() as usize;
    (0..n_frames)
        .map(|k| {
            let fs = origin + k * FRAME_STRIDE_SAMPLES_200;
            let fe = fs + FRAME_LEN_SAMPLES_200;
            let mut overlap = 0usize;
            for span in labels {
                if in_session(span.kind) {
                    overlap += fe.min(span.end).saturating_sub(fs.max(span.start));
                }
            }
            overlap >= need
        })
        .collect()
}

/// Trains the session detector and the password-entry identifier from
/// labelled 200 Hz episodes. The detector sees 41-feature frames of the
/// 40 Hz monitoring view with negatives subsampled to three per
/// positive. The identifier trains on ground-truth session segments
/// plus the candidates this very detector extracts from the training
/// episodes, so it sees the stitched heads and boundary slop the
/// extraction path produces at run time.
pub fn train_frontend(
    episodes: &[MotionSegment],
    rng: &mut SeededRng,
) -> Result<(LinearSvm, LogisticIdentifier), FrontendError> {
    let mut pos: Vec<FeatureVector> = Vec::new();
    let mut neg: Vec<FeatureVector> = Vec::new();
    let mut id_xs: Vec<Vec<f64>> = Vec::new();
    let mut id_ys: Vec<bool> = Vec::new();
    for ep in episodes {
        if ep.rate_hz != EXTRACT_RATE_HZ {
            return Err(FrontendError::WrongRate {
                expected: EXTRACT_RATE_HZ,
                got: ep.rate_hz,
            });
        }
        let stream = monitor_stream(ep);
        let frames = frame_stream(&stream, FRAME_LEN, FRAME_STRIDE);
        let truth = frame_truth_labels(&ep.labels, 0, frames.len());
        for (frame, &t) in frames.iter().zip(&truth) {
            let f = extract_features(frame);
            if t {
                pos.push(f);
            } else {
                neg.push(f);
            }
        }
        for (start, end, has_password) in session_spans(&ep.labels) {
            let mut seg = MotionSegment::with_rate(ep.rate_hz);
            for s in &ep.samples[start..end] {
                seg.push(s.accel, s.gyro);
            }
            id_xs.push(segment_features(&seg)?);
            id_ys.push(has_password);
        }
    }
    if neg.len() > 3 * pos.len() {
        rng.shuffle(&mut neg);
        neg.truncate(3 * pos.len());
    }
    let mut xs = Vec::with_capacity(pos.len() + neg.len());
    let mut ys = Vec::with_capacity(pos.len() + neg.len());
    for f in pos {
        xs.push(f);
        ys.push(1i8);
    }
    for f in neg {
        xs.push(f);
        ys.push(-1i8);
    }
    let detector = svm_train(&xs, &ys, super::svm::SVM_LAMBDA, super::svm::SVM_EPOCHS, rng)?;

    let accept_all = LogisticIdentifier {
        w: vec![0.0; super::IDENTIFY_DIMS],
        b: 20.0,
        mean: vec![0.0; super::IDENTIFY_DIMS],
        std: vec![1.0; super::IDENTIFY_DIMS],
    };
    let table = CostTable::default_calibrated();
    let cfg = AdaptiveConfig::default();
    for ep in episodes {
        let out = adaptive_run(
            ep,
            &detector,
            &Smoother::hmm_default(),
            &accept_all,
            &table,
            &cfg,
        )?;
        for c in &out.candidates {
            let covers_password = ep.labels.iter().any(|span| {
                span.kind.is_password_entry()
                    && c.sample_end.min(span.end).saturating_sub(c.sample_start.max(span.start))
                        >= span.len() / 2
            });
            id_xs.push(segment_features(&c.segment)?);
            id_ys.push(covers_password);
        }
    }
    let identifier = LogisticIdentifier::train(&id_xs, &id_ys)?;
    Ok((detector, identifier))
}

/// Runs the three-mode loop over one 200 Hz episode. Returns every
/// extracted candidate with its identifier verdict, the per-burst
/// frame decisions and the energy ledger. The episode's labels are
/// never consulted.
pub fn adaptive_run(
    episode: &MotionSegment,
    detector: &LinearSvm,
    smoother: &Smoother,
    identifier: &LogisticIdentifier,
    table: &CostTable,
    cfg: &AdaptiveConfig,
) -> Result<AdaptiveOutcome, FrontendError> {
    if episode.rate_hz != EXTRACT_RATE_HZ {
        return Err(FrontendError::WrongRate {
            expected: EXTRACT_RATE_HZ,
            got: episode.rate_hz,
        });
    }
    let n = episode.len();
    if n == 0 {
        return Err(FrontendError::EmptyInput("episode"));
    }
    let rate = EXTRACT_RATE_HZ as f64;
    let decim_passive = (EXTRACT_RATE_HZ / PASSIVE_RATE_HZ) as usize;
    // Screen-normal gravity projection as the 10 Hz passive hardware
    // sees it.
    let z10: Vec<f64> = episode
        .samples
        .iter()
        .step_by(decim_passive)
        .map(|s| s.accel[2])
        .collect();
    let threshold = cfg.trigger_delta_g * GRAVITY;
    let timeout_samples = (cfg.monitor_timeout_s * rate) as usize;

    let mut ledger = EnergyLedger::new(table.clone());
    let mut bursts: Vec<MonitoringBurst> = Vec::new();
    let mut candidates: Vec<ExtractedCandidate> = Vec::new();

    let mut t = 0usize;
    loop {
        // Passive: scan for a gravity jump. Windows must lie inside the
        // current passive interval: trailing 0.5 s mean against the
        // 0.5 s mean one second earlier.
        let first10 = t.div_ceil(decim_passive);
        let mut trigger: Option<usize> = None;
        let mut i = first10 + 14;
        while i < z10.len() {
            let now: f64 = z10[i - 4..=i].iter().sum::<f64>() / 5.0;
            let prev: f64 = z10[i - 14..=i - 10].iter().sum::<f64>() / 5.0;
            if (now - prev).abs() > threshold {
                trigger = Some(i * decim_passive);
                break;
            }
            i += 1;
        }
        let m0 = match trigger {
            None => {
                ledger.add(SensingMode::Passive, t as f64 / rate, n as f64 / rate)?;
                break;
            }
            Some(m0) => {
                ledger.add(SensingMode::Passive, t as f64 / rate, m0 as f64 / rate)?;
                m0
            }
        };

        // Monitoring: classify frames as they complete; first positive
        // switches to extraction.
        let mut raw: Vec<bool> = Vec::new();
        let mut fired: Option<usize> = None;
        let mut consec_neg = 0usize;
        let mut stop: Option<usize> = None;
        let mut k = 0usize;
        loop {
            let rel_end = k * FRAME_STRIDE_SAMPLES_200 + FRAME_LEN_SAMPLES_200;
            if m0 + rel_end > n {
                break;
            }
            if fired.is_none() && rel_end > timeout_samples {
                break;
            }
            let rows: Vec<[f64; 3]> = (0..FRAME_LEN)
                .map(|j| episode.samples[m0 + k * FRAME_STRIDE_SAMPLES_200 + 5 * j].accel)
                .collect();
            let (label, _) = svm_predict(detector, &pooled_features(&rows))?;
            let positive = label > 0;
            raw.push(positive);
            if fired.is_none() {
                if positive {
                    fired = Some(m0 + rel_end);
                }
            } else if positive {
                consec_neg = 0;
            } else {
                consec_neg += 1;
                if consec_neg >= cfg.stop_after_negatives {
                    stop = Some(m0 + rel_end);
                    break;
                }
            }
            k += 1;
        }

        let resume = match fired {
            None => {
                let mon_end = (m0 + timeout_samples).min(n);
                ledger.add(
                    SensingMode::Monitoring,
                    m0 as f64 / rate,
                    mon_end as f64 / rate,
                )?;
                mon_end
            }
            Some(fire) => {
                let ext_end = stop.unwrap_or(n);
                ledger.add(SensingMode::Monitoring, m0 as f64 / rate, fire as f64 / rate)?;
                ledger.add(
                    SensingMode::Extraction,
                    fire as f64 / rate,
                    ext_end as f64 / rate,
                )?;
                let smoothed = smooth(smoother, &raw)?;
                if let Some((f_lo, f_hi)) =
                    longest_positive_segment(&smoothed, cfg.min_run_frames)
                {
                    let sample_start = m0 + f_lo * FRAME_STRIDE_SAMPLES_200;
                    let sample_end =
                        (m0 + f_hi * FRAME_STRIDE_SAMPLES_200 + FRAME_LEN_SAMPLES_200).min(n);
                    let mut seg = MotionSegment::with_rate(EXTRACT_RATE_HZ);
                    for s in sample_start..sample_end {
                        if s >= fire {
                            let src = &episode.samples[s];
                            seg.push(src.accel, src.gyro);
                        } else {
                            // Pre-fire samples exist only in the 40 Hz
                            // monitoring buffer.
                            let held = m0 + (s - m0) / 5 * 5;
                            seg.push(episode.samples[held].accel, [0.0; 3]);
                        }
                    }
                    let (accepted, score) = identify_sequence(identifier, &seg)?;
                    candidates.push(ExtractedCandidate {
                        sample_start,
                        sample_end,
                        frame_run: (f_lo, f_hi),
                        burst: bursts.len(),
                        score,
                        accepted,
                        segment: seg,
                    });
                }
                bursts.push(MonitoringBurst {
                    origin: m0,
                    raw,
                    smoothed,
                });
                ext_end
            }
        };
        if resume >= n {
            break;
        }
        t = resume;
    }

    debug_assert!({
        let last = ledger.timeline.last().map(|&(_, _, e)| e).unwrap_or(0.0);
        (last - n as f64 / rate).abs() < 1e-9
    });
    Ok(AdaptiveOutcome {
        candidates,
        bursts,
        ledger,
    })
}
