//! Waveform synthesis for taps, swipes, background activities, and
//! composed episodes.
//!
//! All primitives emit dynamic (gravity-free) motion; `compose_episode`
//! layers the gravity vector on top, rotating it through wrist-raise
//! ramps around every screen interaction. Draw order from the RNG is
//! fixed, so a given seed always produces the same samples.

use crate::numerics::SeededRng;
use crate::passwords::{AplPattern, Password, Pin};

use super::{ActionKind, DeviceProfile, GeneratorConfig, MotionSegment, SimError, GRAVITY};

/// Keypad pitch in meters; a 3x4 digit grid on a 34 mm screen.
const KEY_PITCH: f64 = 0.0085;
/// Pattern grid pitch in meters.
const DOT_PITCH: f64 = 0.010;
/// Lognormal sigma of per-tap force.
const FORCE_SIGMA: f64 = 0.22;
/// Gyro response per unit force per unit (offset / lever arm), rad/s.
const TAP_GYRO_GAIN: f64 = 1.4;
/// Fraction of fingertip acceleration coupled into the case.
const SWIPE_GAIN: f64 = 0.85;
/// Gyro response per unit fingertip speed over lever arm.
const SWIPE_GYRO_GAIN: f64 = 0.13;
/// Friction pulse at each dot crossing: amplitude relative to the
/// adjacent leg's peak trajectory acceleration, and fixed width.
const DOT_PULSE_REL: f64 = 1.1;
const DOT_PULSE_WIDTH_S: f64 = 0.024;
/// Random slip vibration amplitude relative to the leg's peak
/// trajectory acceleration.
const SLIP_FRAC: f64 = 0.35;
/// Legs bow sideways by this fraction of their chord; the centripetal
/// acceleration of the arc peaks at mid-leg, exactly where straight
/// minimum-jerk acceleration crosses zero.
const BOW_FRAC: f64 = 0.2;
const TREMOR_HZ: f64 = 9.0;

/// Screen position of a keypad digit, meters from screen center.
/// Layout is the standard 123/456/789/-0- phone pad.
fn keypad_xy(digit: u8) -> Result<(f64, f64), SimError> {
    if digit > 9 {
        return Err(SimError::UnknownDigit(digit));
    }
    let (col, row) = if digit == 0 {
        (1i32, 3i32)
    } else {
        (((digit - 1) % 3) as i32, ((digit - 1) / 3) as i32)
    };
    let x = (col - 1) as f64 * KEY_PITCH;
    let y = (1.5 - row as f64) * KEY_PITCH;
    Ok((x, y))
}

/// Screen position of a pattern dot, meters from screen center.
fn dot_xy(dot: u8) -> (f64, f64) {
    let (col, row) = AplPattern::dot_coords(dot);
    ((col - 1.0) * DOT_PITCH, (1.0 - row) * DOT_PITCH)
}

/// Pressing a key at screen offset (x, y) torques the case about the
/// wrist axis: pitch from y, roll from x, plus a small yaw twist.
fn tap_gyro_scale(x: f64, y: f64, dev: &DeviceProfile) -> [f64; 3] {
    let k = TAP_GYRO_GAIN / dev.lever_arm;
    [-y * k, x * k, 0.35 * x * k]
}

fn sample_count(duration_s: f64, rate_hz: u32) -> usize {
    ((duration_s * rate_hz as f64).round() as usize).max(1)
}

/// Raw interleaved (accel, gyro) rows prior to labeling.
type Rows = Vec<([f64; 3], [f64; 3])>;

fn push_noise(rows: &mut Rows, n: usize, dev: &DeviceProfile, rng: &mut SeededRng) {
    for _ in 0..n {
        let a = [
            dev.noise_floor_accel * rng.normal(),
            dev.noise_floor_accel * rng.normal(),
            dev.noise_floor_accel * rng.normal(),
        ];
        let g = [
            dev.noise_floor_gyro * rng.normal(),
            dev.noise_floor_gyro * rng.normal(),
            dev.noise_floor_gyro * rng.normal(),
        ];
        rows.push((a, g));
    }
}

/// Adds physiological tremor over rows `[start, end)`.
fn add_tremor(rows: &mut [([f64; 3], [f64; 3])], start: usize, end: usize, amp: f64, rate: u32, rng: &mut SeededRng) {
    if amp == 0.0 || start >= end {
        return;
    }
    let phase = rng.next_f64() * std::f64::consts::TAU;
    let w = std::f64::consts::TAU * TREMOR_HZ;
    for (k, row) in rows[start..end].iter_mut().enumerate() {
        let t = (k as f64 + 0.5) / rate as f64;
        let s = (w * t + phase).sin();
        let c = (w * t + phase).cos();
        row.0[0] += amp * s;
        row.0[1] += amp * c;
        row.0[2] += 0.5 * amp * s;
        row.1[0] += 0.25 * amp * s;
        row.1[1] += 0.25 * amp * c;
    }
}

/// One tap burst: underdamped ring on the screen-normal accel axis with
/// geometric cross-coupling, and a press bump on the gyro scaled by the
/// key's offset from the wrist axis.
///
/// Draw order: duration, force, then per-sample noise.
fn tap_burst(digit: u8, cfg: &GeneratorConfig, rng: &mut SeededRng, rows: &mut Rows) -> Result<(), SimError> {
    let (x, y) = keypad_xy(digit)?;
    let dev = &cfg.device;
    let dur = rng.lognormal(cfg.user.tap_duration_mu, cfg.user.tap_duration_sigma);
    let force = rng.lognormal(0.0, FORCE_SIGMA);
    let n = sample_count(dur, cfg.rate_hz);
    let amp = dev.impulse_gain * force;
    let omega = std::f64::consts::TAU * dev.resonant_freq_hz;
    let zeta = dev.damping_ratio;
    let omega_d = omega * (1.0 - zeta * zeta).sqrt();
    let [cx, cy] = dev.cross_coupling();
    let gscale = tap_gyro_scale(x, y, dev);
    let dur_actual = n as f64 / cfg.rate_hz as f64;

    for k in 0..n {
        // Half-sample offset keeps the first sample off the t=0 zero.
        let t = (k as f64 + 0.5) / cfg.rate_hz as f64;
        let ring = amp * (-zeta * omega * t).exp() * (omega_d * t).sin();
        let press = force * ((std::f64::consts::PI * t / dur_actual).sin() + 0.25 * ring / amp);
        let a = [
            cx * ring + dev.noise_floor_accel * rng.normal(),
            cy * ring + dev.noise_floor_accel * rng.normal(),
            ring + dev.noise_floor_accel * rng.normal(),
        ];
        let g = [
            gscale[0] * press + dev.noise_floor_gyro * rng.normal(),
            gscale[1] * press + dev.noise_floor_gyro * rng.normal(),
            gscale[2] * press + dev.noise_floor_gyro * rng.normal(),
        ];
        rows.push((a, g));
    }
    Ok(())
}

/// Minimum-jerk interpolation through `pts` with per-leg durations
/// proportional to chord length and a gentle sideways bow per leg;
/// returns (position, velocity, acceleration) at `t` within `[0, total]`.
struct MinJerkPath {
    pts: Vec<(f64, f64)>,
    /// Cumulative leg boundary times, `len = pts.len()`, starting at 0.
    bounds: Vec<f64>,
    /// Per-leg bow vector: unit perpendicular times bow amplitude.
    bows: Vec<(f64, f64)>,
}

/// Side the leg bows toward: the screen center, which makes the arc a
/// property of the chord alone. Drawing the chord in either direction
/// traces the same curve, so reversed patterns reverse the signal
/// exactly. For chords through the center the side falls back to a fixed
/// reference direction no grid chord is parallel to.
fn bow_normal(p0: (f64, f64), p1: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
    let len = (dx * dx + dy * dy).sqrt();
    let base = (-dy / len, dx / len);
    let mid = ((p0.0 + p1.0) / 2.0, (p0.1 + p1.1) / 2.0);
    let toward_center = -(base.0 * mid.0 + base.1 * mid.1);
    let sign = if toward_center.abs() > 1e-12 {
        toward_center.signum()
    } else {
        (base.0 + 0.618 * base.1).signum()
    };
    (base.0 * sign, base.1 * sign)
}

impl MinJerkPath {
    fn new(pts: Vec<(f64, f64)>, total_s: f64) -> Self {
        assert!(pts.len() >= 2);
        let dists: Vec<f64> = pts
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
            .collect();
        let sum: f64 = dists.iter().sum();
        assert!(sum > 0.0);
        let mut bounds = Vec::with_capacity(pts.len());
        bounds.push(0.0);
        let mut acc = 0.0;
        for d in &dists {
            acc += d / sum * total_s;
            bounds.push(acc);
        }
        *bounds.last_mut().unwrap() = total_s;
        let bows = pts
            .windows(2)
            .zip(&dists)
            .map(|(w, d)| {
                let n = bow_normal(w[0], w[1]);
                (n.0 * BOW_FRAC * d, n.1 * BOW_FRAC * d)
            })
            .collect();
        Self { pts, bounds, bows }
    }

    fn leg_at(&self, t: f64) -> usize {
        let mut leg = self.bounds.len() - 2;
        for i in 0..self.bounds.len() - 1 {
            if t < self.bounds[i + 1] {
                leg = i;
                break;
            }
        }
        leg
    }

    fn eval(&self, t: f64) -> ((f64, f64), (f64, f64), (f64, f64)) {
        let total = *self.bounds.last().unwrap();
        let t = t.clamp(0.0, total);
        let leg = self.leg_at(t);
        let t0 = self.bounds[leg];
        let dur = self.bounds[leg + 1] - t0;
        let s = ((t - t0) / dur).clamp(0.0, 1.0);
        let (p0, p1) = (self.pts[leg], self.pts[leg + 1]);
        let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
        let h = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let hd = 30.0 * s * s - 60.0 * s * s * s + 30.0 * s * s * s * s;
        let hdd = 60.0 * s - 180.0 * s * s + 120.0 * s * s * s;
        let (bx, by) = self.bows[leg];
        let pi = std::f64::consts::PI;
        let (bs, bc) = ((pi * s).sin(), (pi * s).cos());
        (
            (p0.0 + dx * h + bx * bs, p0.1 + dy * h + by * bs),
            (
                (dx * hd + bx * pi * bc) / dur,
                (dy * hd + by * pi * bc) / dur,
            ),
            (
                (dx * hdd - bx * pi * pi * bs) / (dur * dur),
                (dy * hdd - by * pi * pi * bs) / (dur * dur),
            ),
        )
    }

    /// Peak |velocity| and |chord acceleration| of the leg containing `t`.
    fn leg_peaks(&self, t: f64) -> (f64, f64) {
        let total = *self.bounds.last().unwrap();
        let leg = self.leg_at(t.clamp(0.0, total));
        (self.leg_peak_vel(leg), self.leg_peak_acc(leg))
    }

    fn leg_len(&self, leg: usize) -> f64 {
        let (p0, p1) = (self.pts[leg], self.pts[leg + 1]);
        ((p1.0 - p0.0).powi(2) + (p1.1 - p0.1).powi(2)).sqrt()
    }

    /// Min-jerk extreme: v_max = 15/8 d/T.
    fn leg_peak_vel(&self, leg: usize) -> f64 {
        let dur = self.bounds[leg + 1] - self.bounds[leg];
        1.875 * self.leg_len(leg) / dur
    }

    /// Min-jerk extreme: a_max = 10/sqrt(3) d/T^2.
    fn leg_peak_acc(&self, leg: usize) -> f64 {
        let dur = self.bounds[leg + 1] - self.bounds[leg];
        10.0 / 3f64.sqrt() * self.leg_len(leg) / (dur * dur)
    }

    /// Reference acceleration for the friction pulse at waypoint `i`:
    /// the stronger of the adjacent legs.
    fn waypoint_peak_acc(&self, i: usize) -> f64 {
        let legs = self.pts.len() - 1;
        let before = if i > 0 { self.leg_peak_acc(i - 1) } else { 0.0 };
        let after = if i < legs { self.leg_peak_acc(i) } else { 0.0 };
        before.max(after)
    }
}

/// Whole-swipe duration in seconds: sublinear in pattern length, scaled
/// by the user's speed relative to the 0.05 m/s reference, with
/// lognormal jitter. Calibrated so 4- and 7-dot duration distributions
/// overlap heavily.
fn swipe_duration(len: usize, cfg: &GeneratorConfig, rng: &mut SeededRng) -> f64 {
    let base = 0.45 + 0.22 * (len as f64).powf(0.7);
    let speed_factor = 0.05 / cfg.user.swipe_speed;
    base * speed_factor * rng.lognormal(0.0, cfg.user.swipe_jitter)
}

/// Pure trajectory acceleration (in-plane axes, m/s^2) of a swipe over
/// `dots` lasting `total_s`, sampled at `rate_hz` with half-sample
/// offsets. Exposed so the time-reversal symmetry of the construction
/// can be checked directly.
pub fn swipe_trajectory_accel(dots: &[u8], total_s: f64, rate_hz: u32) -> Vec<[f64; 2]> {
    let pts: Vec<(f64, f64)> = dots.iter().map(|&d| dot_xy(d)).collect();
    let path = MinJerkPath::new(pts, total_s);
    let n = sample_count(total_s, rate_hz);
    (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) / rate_hz as f64;
            let (_, _, (ax, ay)) = path.eval(t);
            [SWIPE_GAIN * ax, SWIPE_GAIN * ay]
        })
        .collect()
}

/// One swipe burst: min-jerk trajectory acceleration on the in-plane
/// axes, slip vibration and friction pulses on the screen-normal axis,
/// and drag torque on the gyro.
///
/// Draw order: duration, per-dot pulse forces, slip/noise per sample.
fn swipe_burst(dots: &[u8], cfg: &GeneratorConfig, rng: &mut SeededRng, rows: &mut Rows) {
    let dev = &cfg.device;
    let total = swipe_duration(dots.len(), cfg, rng);
    let n = sample_count(total, cfg.rate_hz).max(dots.len());
    let total = n as f64 / cfg.rate_hz as f64;
    let pts: Vec<(f64, f64)> = dots.iter().map(|&d| dot_xy(d)).collect();
    let path = MinJerkPath::new(pts, total);

    let pulse_forces: Vec<f64> = dots.iter().map(|_| rng.lognormal(0.0, FORCE_SIGMA)).collect();
    let kg = SWIPE_GYRO_GAIN / dev.lever_arm;

    for k in 0..n {
        let t = (k as f64 + 0.5) / cfg.rate_hz as f64;
        let (_, (vx, vy), (ax, ay)) = path.eval(t);
        let (v_peak, a_peak) = path.leg_peaks(t);
        let speed = (vx * vx + vy * vy).sqrt();
        let slip_env = if v_peak > 0.0 { speed / v_peak } else { 0.0 };
        let slip = SLIP_FRAC * SWIPE_GAIN * a_peak * slip_env * rng.normal();

        // Friction pulse whenever the fingertip crosses a dot.
        let mut pulse = 0.0;
        for (i, &b) in path.bounds.iter().enumerate() {
            let dt = t - b;
            if dt.abs() <= DOT_PULSE_WIDTH_S / 2.0 {
                let phase = (dt / DOT_PULSE_WIDTH_S + 0.5) * std::f64::consts::PI;
                let amp = DOT_PULSE_REL * SWIPE_GAIN * path.waypoint_peak_acc(i);
                pulse += amp * pulse_forces[i] * phase.sin();
            }
        }

        let a = [
            SWIPE_GAIN * ax + dev.noise_floor_accel * rng.normal(),
            SWIPE_GAIN * ay + dev.noise_floor_accel * rng.normal(),
            pulse + slip + dev.noise_floor_accel * rng.normal(),
        ];
        let g = [
            -vy * kg + dev.noise_floor_gyro * rng.normal(),
            vx * kg + dev.noise_floor_gyro * rng.normal(),
            0.25 * (vx + vy) * kg + dev.noise_floor_gyro * rng.normal(),
        ];
        rows.push((a, g));
    }
}

/// PIN entry: four taps separated by inter-tap gaps, tremor across the
/// whole burst.
fn pin_burst(pin: &Pin, cfg: &GeneratorConfig, rng: &mut SeededRng, rows: &mut Rows) -> Result<(), SimError> {
    let start = rows.len();
    for (i, &d) in pin.digits().iter().enumerate() {
        if i > 0 {
            let gap = rng.lognormal(cfg.user.inter_tap_gap_mu, cfg.user.inter_tap_gap_sigma);
            push_noise(rows, sample_count(gap, cfg.rate_hz), &cfg.device, rng);
        }
        tap_burst(d, cfg, rng, rows)?;
    }
    let end = rows.len();
    add_tremor(rows, start, end, cfg.user.tremor_amp, cfg.rate_hz, rng);
    Ok(())
}

fn apl_burst(apl: &AplPattern, cfg: &GeneratorConfig, rng: &mut SeededRng, rows: &mut Rows) {
    let start = rows.len();
    swipe_burst(apl.dots(), cfg, rng, rows);
    let end = rows.len();
    add_tremor(rows, start, end, cfg.user.tremor_amp, cfg.rate_hz, rng);
}

/// What a non-password interaction consists of. Never more than two
/// impulsive events: one or two confirmation taps, or a single straight
/// scroll swipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum NonPasswordPlan {
    Taps(usize),
    Scroll,
}

pub(crate) fn nonpassword_plan(rng: &mut SeededRng) -> NonPasswordPlan {
    match rng.gen_index(3) {
        0 => NonPasswordPlan::Taps(1),
        1 => NonPasswordPlan::Taps(2),
        _ => NonPasswordPlan::Scroll,
    }
}

fn nonpassword_burst(cfg: &GeneratorConfig, rng: &mut SeededRng, rows: &mut Rows) {
    let start = rows.len();
    match nonpassword_plan(rng) {
        NonPasswordPlan::Taps(k) => {
            for i in 0..k {
                if i > 0 {
                    // Dismissal double-taps run faster than PIN typing.
                    let gap = rng.lognormal((0.16f64).ln(), 0.2);
                    push_noise(rows, sample_count(gap, cfg.rate_hz), &cfg.device, rng);
                }
                let digit = rng.gen_index(10) as u8;
                tap_burst(digit, cfg, rng, rows).expect("digit < 10");
            }
        }
        NonPasswordPlan::Scroll => {
            let dev = &cfg.device;
            let x0 = (rng.next_f64() - 0.5) * 0.012;
            let y0 = 0.012 + rng.next_f64() * 0.004;
            let len = 0.018 + rng.next_f64() * 0.008;
            let dur = rng.lognormal((0.38f64).ln(), 0.2);
            let n = sample_count(dur, cfg.rate_hz).max(2);
            let dur = n as f64 / cfg.rate_hz as f64;
            let path = MinJerkPath::new(vec![(x0, y0), (x0, y0 - len)], dur);
            let forces = [rng.lognormal(0.0, FORCE_SIGMA), rng.lognormal(0.0, FORCE_SIGMA)];
            let kg = SWIPE_GYRO_GAIN / dev.lever_arm;
            for k in 0..n {
                let t = (k as f64 + 0.5) / cfg.rate_hz as f64;
                let (_, (vx, vy), (ax, ay)) = path.eval(t);
                let (v_peak, a_peak) = path.leg_peaks(t);
                let speed = (vx * vx + vy * vy).sqrt();
                let slip = SLIP_FRAC * SWIPE_GAIN * a_peak * (speed / v_peak) * rng.normal();
                let mut pulse = 0.0;
                for (i, &b) in [0.0, dur].iter().enumerate() {
                    let dt = t - b;
                    if dt.abs() <= DOT_PULSE_WIDTH_S / 2.0 {
                        let phase = (dt / DOT_PULSE_WIDTH_S + 0.5) * std::f64::consts::PI;
                        let amp = DOT_PULSE_REL * SWIPE_GAIN * path.waypoint_peak_acc(i);
                        pulse += amp * forces[i] * phase.sin();
                    }
                }
                let a = [
                    SWIPE_GAIN * ax + dev.noise_floor_accel * rng.normal(),
                    SWIPE_GAIN * ay + dev.noise_floor_accel * rng.normal(),
                    pulse + slip + dev.noise_floor_accel * rng.normal(),
                ];
                let g = [
                    -vy * kg + dev.noise_floor_gyro * rng.normal(),
                    vx * kg + dev.noise_floor_gyro * rng.normal(),
                    0.25 * (vx + vy) * kg + dev.noise_floor_gyro * rng.normal(),
                ];
                rows.push((a, g));
            }
        }
    }
    let end = rows.len();
    add_tremor(rows, start, end, cfg.user.tremor_amp, cfg.rate_hz, rng);
}

/// Background activity kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivityKind {
    Walk,
    Drink,
    Type,
    Still,
    Stairs,
}

impl ActivityKind {
    pub fn label(self) -> ActionKind {
        match self {
            ActivityKind::Walk => ActionKind::Walk,
            ActivityKind::Drink => ActionKind::Drink,
            ActivityKind::Type => ActionKind::Type,
            ActivityKind::Still => ActionKind::Still,
            ActivityKind::Stairs => ActionKind::Stairs,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "walk" => ActivityKind::Walk,
            "drink" => ActivityKind::Drink,
            "type" => ActivityKind::Type,
            "still" => ActivityKind::Still,
            "stairs" => ActivityKind::Stairs,
            _ => return None,
        })
    }
}

/// Band-limited noise: white noise through a one-pole lowpass.
struct BandNoise {
    state: [f64; 6],
    alpha: f64,
    amp_accel: f64,
    amp_gyro: f64,
}

impl BandNoise {
    fn new(cutoff_hz: f64, rate_hz: u32, amp_accel: f64, amp_gyro: f64) -> Self {
        let alpha = (-std::f64::consts::TAU * cutoff_hz / rate_hz as f64).exp();
        Self {
            state: [0.0; 6],
            alpha,
            amp_accel,
            amp_gyro,
        }
    }

    fn next(&mut self, rng: &mut SeededRng) -> ([f64; 3], [f64; 3]) {
        let mut out = [0.0; 6];
        // Compensate the lowpass gain so output RMS tracks amp.
        let g = (1.0 - self.alpha * self.alpha).sqrt();
        for (i, s) in self.state.iter_mut().enumerate() {
            *s = self.alpha * *s + g * rng.normal();
            out[i] = *s;
        }
        (
            [
                self.amp_accel * out[0],
                self.amp_accel * out[1],
                self.amp_accel * out[2],
            ],
            [self.amp_gyro * out[3], self.amp_gyro * out[4], self.amp_gyro * out[5]],
        )
    }
}

fn activity_burst(kind: ActivityKind, n: usize, cfg: &GeneratorConfig, rng: &mut SeededRng, rows: &mut Rows) {
    let dev = &cfg.device;
    let rate = cfg.rate_hz as f64;
    match kind {
        ActivityKind::Still => push_noise(rows, n, dev, rng),
        ActivityKind::Walk | ActivityKind::Stairs => {
            let stairs = kind == ActivityKind::Stairs;
            let f = if stairs {
                (1.7 + 0.1 * rng.normal()).clamp(1.5, 1.9)
            } else {
                (2.0 + 0.15 * rng.normal()).clamp(1.7, 2.3)
            };
            let phase = rng.next_f64() * std::f64::consts::TAU;
            let (ax_amp, az_amp, g_amp) = if stairs { (0.8, 1.9, 0.5) } else { (1.3, 0.5, 0.45) };
            let mut band = BandNoise::new(6.0, cfg.rate_hz, 0.12, 0.04);
            let w = std::f64::consts::TAU * f;
            for k in 0..n {
                let t = (k as f64 + 0.5) / rate;
                let (bn_a, bn_g) = band.next(rng);
                let a = [
                    ax_amp * (w * t + phase).sin() + bn_a[0] + dev.noise_floor_accel * rng.normal(),
                    0.35 * ax_amp * (w * t + phase + 1.3).sin() + bn_a[1] + dev.noise_floor_accel * rng.normal(),
                    az_amp * (2.0 * w * t + 2.0 * phase).sin()
                        + (if stairs { 0.4 * (3.0 * w * t).sin() } else { 0.0 })
                        + bn_a[2]
                        + dev.noise_floor_accel * rng.normal(),
                ];
                let g = [
                    g_amp * (w * t + phase - 0.6).sin() + bn_g[0] + dev.noise_floor_gyro * rng.normal(),
                    0.3 * g_amp * (w * t + phase + 0.4).sin() + bn_g[1] + dev.noise_floor_gyro * rng.normal(),
                    0.2 * g_amp * (2.0 * w * t + phase).sin() + bn_g[2] + dev.noise_floor_gyro * rng.normal(),
                ];
                rows.push((a, g));
            }
        }
        ActivityKind::Drink => {
            // Raise to the mouth, hold with small wobble, lower back.
            let mut band = BandNoise::new(3.0, cfg.rate_hz, 0.08, 0.03);
            let quarter = (n / 4).max(1);
            for k in 0..n {
                let (bn_a, bn_g) = band.next(rng);
                let bump = if k < quarter {
                    (std::f64::consts::PI * k as f64 / quarter as f64).sin()
                } else if k >= n - quarter {
                    -(std::f64::consts::PI * (n - 1 - k) as f64 / quarter as f64).sin()
                } else {
                    0.0
                };
                let a = [
                    0.9 * bump + bn_a[0] + dev.noise_floor_accel * rng.normal(),
                    0.3 * bump + bn_a[1] + dev.noise_floor_accel * rng.normal(),
                    0.6 * bump.abs() + bn_a[2] + dev.noise_floor_accel * rng.normal(),
                ];
                let g = [
                    0.8 * bump + bn_g[0] + dev.noise_floor_gyro * rng.normal(),
                    bn_g[1] + dev.noise_floor_gyro * rng.normal(),
                    0.2 * bump + bn_g[2] + dev.noise_floor_gyro * rng.normal(),
                ];
                rows.push((a, g));
            }
        }
        ActivityKind::Type => {
            // Keyboard typing with the watch hand: small fast impulses.
            let mut band = BandNoise::new(8.0, cfg.rate_hz, 0.10, 0.03);
            let mut next_key = sample_count(rng.lognormal((0.18f64).ln(), 0.3), cfg.rate_hz);
            let mut key_left = 0usize;
            let mut key_amp = 0.0;
            let key_len = sample_count(0.04, cfg.rate_hz);
            for _k in 0..n {
                if next_key == 0 && key_left == 0 {
                    key_amp = 0.45 * rng.lognormal(0.0, 0.2);
                    key_left = key_len;
                    next_key = key_len + sample_count(rng.lognormal((0.18f64).ln(), 0.3), cfg.rate_hz);
                }
                let imp = if key_left > 0 {
                    let ph = std::f64::consts::PI * (key_len - key_left) as f64 / key_len as f64;
                    key_left -= 1;
                    key_amp * ph.sin()
                } else {
                    0.0
                };
                next_key = next_key.saturating_sub(1);
                let (bn_a, bn_g) = band.next(rng);
                let a = [
                    0.3 * imp + bn_a[0] + dev.noise_floor_accel * rng.normal(),
                    0.2 * imp + bn_a[1] + dev.noise_floor_accel * rng.normal(),
                    imp + bn_a[2] + dev.noise_floor_accel * rng.normal(),
                ];
                let g = [
                    0.08 * imp + bn_g[0] + dev.noise_floor_gyro * rng.normal(),
                    0.05 * imp + bn_g[1] + dev.noise_floor_gyro * rng.normal(),
                    bn_g[2] + dev.noise_floor_gyro * rng.normal(),
                ];
                rows.push((a, g));
            }
        }
    }
}

fn finish_segment(rows: Rows, labels: Vec<LabelPlan>, rate_hz: u32) -> MotionSegment {
    let mut seg = MotionSegment::with_rate(rate_hz);
    for (a, g) in rows {
        seg.push(a, g);
    }
    for l in labels {
        seg.label(l.0, l.1, l.2);
    }
    seg
}

type LabelPlan = (ActionKind, usize, usize);

fn pad_count(cfg: &GeneratorConfig, rng: &mut SeededRng) -> usize {
    sample_count(0.15 + 0.15 * rng.next_f64(), cfg.rate_hz)
}

/// A single labeled tap with still padding. Dynamic acceleration only;
/// the lone tap is labeled as a PIN-entry fragment.
pub fn synth_tap(digit: u8, cfg: &GeneratorConfig, rng: &mut SeededRng) -> Result<MotionSegment, SimError> {
    let mut rows = Rows::new();
    let pre = pad_count(cfg, rng);
    push_noise(&mut rows, pre, &cfg.device, rng);
    let start = rows.len();
    tap_burst(digit, cfg, rng, &mut rows)?;
    let end = rows.len();
    add_tremor(&mut rows, start, end, cfg.user.tremor_amp, cfg.rate_hz, rng);
    let post = pad_count(cfg, rng);
    push_noise(&mut rows, post, &cfg.device, rng);
    Ok(finish_segment(
        rows,
        vec![(ActionKind::PinEntry, start, end)],
        cfg.rate_hz,
    ))
}

/// A single labeled pattern swipe with still padding. Dynamic
/// acceleration only.
pub fn synth_swipe(apl: &AplPattern, cfg: &GeneratorConfig, rng: &mut SeededRng) -> Result<MotionSegment, SimError> {
    let mut rows = Rows::new();
    let pre = pad_count(cfg, rng);
    push_noise(&mut rows, pre, &cfg.device, rng);
    let start = rows.len();
    apl_burst(apl, cfg, rng, &mut rows);
    let end = rows.len();
    let post = pad_count(cfg, rng);
    push_noise(&mut rows, post, &cfg.device, rng);
    Ok(finish_segment(
        rows,
        vec![(ActionKind::AplEntry, start, end)],
        cfg.rate_hz,
    ))
}

/// A background activity segment, labeled no-input over its full length.
pub fn synth_activity(
    kind: ActivityKind,
    duration_s: f64,
    cfg: &GeneratorConfig,
    rng: &mut SeededRng,
) -> Result<MotionSegment, SimError> {
    if !(duration_s > 0.0) {
        return Err(SimError::BadDuration(duration_s));
    }
    let n = sample_count(duration_s, cfg.rate_hz);
    let mut rows = Rows::new();
    activity_burst(kind, n, cfg, rng, &mut rows);
    Ok(finish_segment(rows, vec![(kind.label(), 0, n)], cfg.rate_hz))
}

/// A short non-password screen interaction with still padding.
pub fn synth_nonpassword_interaction(cfg: &GeneratorConfig, rng: &mut SeededRng) -> MotionSegment {
    let mut rows = Rows::new();
    let pre = pad_count(cfg, rng);
    push_noise(&mut rows, pre, &cfg.device, rng);
    let start = rows.len();
    nonpassword_burst(cfg, rng, &mut rows);
    let end = rows.len();
    let post = pad_count(cfg, rng);
    push_noise(&mut rows, post, &cfg.device, rng);
    finish_segment(rows, vec![(ActionKind::NonPassword, start, end)], cfg.rate_hz)
}

/// One step of an episode script.
#[derive(Clone, Debug)]
pub enum EpisodeAction {
    Activity { kind: ActivityKind, duration_s: f64 },
    Entry(Password),
    NonPassword,
}

/// Orientation of the gravity vector in the device frame.
#[derive(Clone, Copy, PartialEq)]
enum Pose {
    /// Arm hanging: gravity along +x.
    Rest,
    /// Screen up in front of the face: gravity along +z.
    Raised,
}

fn gravity_vec(pose: Pose) -> [f64; 3] {
    match pose {
        Pose::Rest => [GRAVITY, 0.0, 0.0],
        Pose::Raised => [0.0, 0.0, GRAVITY],
    }
}

/// Script an episode: still transitions between actions, a wrist-raise
/// ramp before and after every screen interaction, gravity layered over
/// all of it. Every sample ends up inside exactly one label span.
pub fn compose_episode(
    actions: &[EpisodeAction],
    cfg: &GeneratorConfig,
    rng: &mut SeededRng,
) -> Result<MotionSegment, SimError> {
    if actions.is_empty() {
        return Err(SimError::EmptyEpisode);
    }
    let mut rows = Rows::new();
    let mut labels: Vec<LabelPlan> = Vec::new();
    // (start, end, pose or ramp direction) painted after synthesis.
    enum Region {
        Fixed(Pose),
        Ramp { up: bool },
    }
    let mut regions: Vec<(usize, usize, Region)> = Vec::new();

    let still = |rows: &mut Rows, labels: &mut Vec<LabelPlan>, regions: &mut Vec<(usize, usize, Region)>, rng: &mut SeededRng| {
        let n = sample_count(0.3 + 0.5 * rng.next_f64(), cfg.rate_hz);
        let s = rows.len();
        push_noise(rows, n, &cfg.device, rng);
        labels.push((ActionKind::Still, s, rows.len()));
        regions.push((s, rows.len(), Region::Fixed(Pose::Rest)));
    };

    let ramp = |rows: &mut Rows, labels: &mut Vec<LabelPlan>, regions: &mut Vec<(usize, usize, Region)>, rng: &mut SeededRng, up: bool| {
        let n = sample_count(0.45 + 0.2 * rng.next_f64(), cfg.rate_hz);
        let s = rows.len();
        push_noise(rows, n, &cfg.device, rng);
        // The rotation itself shows up on the pitch gyro.
        let dur = n as f64 / cfg.rate_hz as f64;
        for (k, row) in rows[s..].iter_mut().enumerate() {
            let t = (k as f64 + 0.5) / cfg.rate_hz as f64;
            let sfrac = t / dur;
            let hd = 30.0 * sfrac * sfrac * (1.0 - sfrac) * (1.0 - sfrac);
            let rate = std::f64::consts::FRAC_PI_2 * hd / dur;
            row.1[1] += if up { rate } else { -rate };
        }
        labels.push((ActionKind::WristRaise, s, rows.len()));
        regions.push((s, rows.len(), Region::Ramp { up }));
    };

    // Raised hold around the interaction: the wearer reads the screen
    // before touching it and settles briefly after. Labelled as part of
    // the wrist-raise gesture.
    let hold = |rows: &mut Rows, labels: &mut Vec<LabelPlan>, regions: &mut Vec<(usize, usize, Region)>, rng: &mut SeededRng, lo: f64, hi: f64| {
        let n = sample_count(lo + (hi - lo) * rng.next_f64(), cfg.rate_hz);
        let s = rows.len();
        push_noise(rows, n, &cfg.device, rng);
        labels.push((ActionKind::WristRaise, s, rows.len()));
        regions.push((s, rows.len(), Region::Fixed(Pose::Raised)));
    };

    still(&mut rows, &mut labels, &mut regions, rng);
    for action in actions {
        match action {
            EpisodeAction::Activity { kind, duration_s } => {
                if !(*duration_s > 0.0) {
                    return Err(SimError::BadDuration(*duration_s));
                }
                let n = sample_count(*duration_s, cfg.rate_hz);
                let s = rows.len();
                activity_burst(*kind, n, cfg, rng, &mut rows);
                labels.push((kind.label(), s, rows.len()));
                regions.push((s, rows.len(), Region::Fixed(Pose::Rest)));
            }
            EpisodeAction::Entry(pwd) => {
                ramp(&mut rows, &mut labels, &mut regions, rng, true);
                hold(&mut rows, &mut labels, &mut regions, rng, 1.6, 2.3);
                let s = rows.len();
                let kind = match pwd {
                    Password::Pin(p) => {
                        pin_burst(p, cfg, rng, &mut rows)?;
                        ActionKind::PinEntry
                    }
                    Password::Apl(a) => {
                        apl_burst(a, cfg, rng, &mut rows);
                        ActionKind::AplEntry
                    }
                };
                labels.push((kind, s, rows.len()));
                regions.push((s, rows.len(), Region::Fixed(Pose::Raised)));
                hold(&mut rows, &mut labels, &mut regions, rng, 0.25, 0.45);
                ramp(&mut rows, &mut labels, &mut regions, rng, false);
            }
            EpisodeAction::NonPassword => {
                ramp(&mut rows, &mut labels, &mut regions, rng, true);
                hold(&mut rows, &mut labels, &mut regions, rng, 1.6, 2.3);
                let s = rows.len();
                nonpassword_burst(cfg, rng, &mut rows);
                labels.push((ActionKind::NonPassword, s, rows.len()));
                regions.push((s, rows.len(), Region::Fixed(Pose::Raised)));
                hold(&mut rows, &mut labels, &mut regions, rng, 0.25, 0.45);
                ramp(&mut rows, &mut labels, &mut regions, rng, false);
            }
        }
        still(&mut rows, &mut labels, &mut regions, rng);
    }

    // Paint gravity over the dynamic signal region by region.
    for (s, e, region) in regions {
        match region {
            Region::Fixed(pose) => {
                let gv = gravity_vec(pose);
                for row in &mut rows[s..e] {
                    for i in 0..3 {
                        row.0[i] += gv[i];
                    }
                }
            }
            Region::Ramp { up } => {
                let n = e - s;
                let dur = n as f64;
                for (k, row) in rows[s..e].iter_mut().enumerate() {
                    let sf = (k as f64 + 0.5) / dur;
                    let h = sf * sf * sf * (10.0 - 15.0 * sf + 6.0 * sf * sf);
                    let phi = std::f64::consts::FRAC_PI_2 * if up { h } else { 1.0 - h };
                    row.0[0] += GRAVITY * phi.cos();
                    row.0[2] += GRAVITY * phi.sin();
                }
            }
        }
    }

    let seg = finish_segment(rows, labels, cfg.rate_hz);
    debug_assert!(seg.validate().is_ok());
    Ok(seg)
}
