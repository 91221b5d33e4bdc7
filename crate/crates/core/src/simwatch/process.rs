//! Post-processing: calibrated additive noise and rate conversion.

use crate::numerics::SeededRng;

use super::{MotionSegment, SimError, SUPPORTED_RATES};

/// Spans used to measure signal power: screen interactions if present,
/// any labels otherwise, the whole segment as a last resort.
fn measurement_spans(seg: &MotionSegment) -> Vec<(usize, usize)> {
    let interactive: Vec<_> = seg
        .labels
        .iter()
        .filter(|l| l.kind.is_interactive() && l.len() > 0)
        .map(|l| (l.start, l.end))
        .collect();
    if !interactive.is_empty() {
        return interactive;
    }
    let labeled: Vec<_> = seg
        .labels
        .iter()
        .filter(|l| l.len() > 0)
        .map(|l| (l.start, l.end))
        .collect();
    if !labeled.is_empty() {
        return labeled;
    }
    vec![(0, seg.len())]
}

/// Mean squared deviation from the per-span per-axis mean, pooled over
/// the given spans. Removing the span mean keeps the gravity offset out
/// of the power estimate.
fn signal_power(seg: &MotionSegment, spans: &[(usize, usize)], gyro: bool) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for &(s, e) in spans {
        if e <= s {
            continue;
        }
        let n = (e - s) as f64;
        for ax in 0..3 {
            let mut mean = 0.0;
            for sample in &seg.samples[s..e] {
                mean += if gyro { sample.gyro[ax] } else { sample.accel[ax] };
            }
            mean /= n;
            for sample in &seg.samples[s..e] {
                let v = if gyro { sample.gyro[ax] } else { sample.accel[ax] };
                total += (v - mean) * (v - mean);
            }
        }
        count += 3 * (e - s);
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Adds white Gaussian noise to every sample, scaled per sensor so the
/// measured ratio of in-interval signal power to added-noise power hits
/// `snr_db` exactly. The realized noise is rescaled to its target power,
/// so the result is not just unbiased but exact. `snr_db = +inf` leaves
/// the segment untouched.
pub fn add_noise_to_snr(seg: &MotionSegment, snr_db: f64, rng: &mut SeededRng) -> Result<MotionSegment, SimError> {
    assert!(!snr_db.is_nan());
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(seg.clone());
    }
    let spans = measurement_spans(seg);
    let p_accel = signal_power(seg, &spans, false);
    let p_gyro = signal_power(seg, &spans, true);
    if p_accel <= 1e-24 || p_gyro <= 1e-24 {
        return Err(SimError::ZeroSignalPower);
    }
    let ratio = 10f64.powf(snr_db / 10.0);
    let n = seg.len();

    // Draw order: per sample, accel axes then gyro axes.
    let mut noise = vec![[0.0f64; 6]; n];
    for row in noise.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.normal();
        }
    }
    let mut scale = [0.0f64; 2];
    for (sensor, &p_sig) in [p_accel, p_gyro].iter().enumerate() {
        let target = p_sig / ratio;
        let mut realized = 0.0;
        for row in &noise {
            for ax in 0..3 {
                let v = row[sensor * 3 + ax];
                realized += v * v;
            }
        }
        realized /= (3 * n) as f64;
        scale[sensor] = (target / realized).sqrt();
    }

    let mut out = seg.clone();
    for (sample, row) in out.samples.iter_mut().zip(&noise) {
        for ax in 0..3 {
            sample.accel[ax] += scale[0] * row[ax];
            sample.gyro[ax] += scale[1] * row[3 + ax];
        }
    }
    Ok(out)
}

/// Measured SNR in dB of `noisy` against the clean reference, using the
/// same span and power conventions as the injection. Test instrumentation
/// for the generator's own calibration.
pub fn measure_snr_db(clean: &MotionSegment, noisy: &MotionSegment, gyro: bool) -> f64 {
    assert_eq!(clean.len(), noisy.len());
    let spans = measurement_spans(clean);
    let p_sig = signal_power(clean, &spans, gyro);
    let mut p_noise = 0.0;
    for (c, x) in clean.samples.iter().zip(&noisy.samples) {
        for ax in 0..3 {
            let d = if gyro {
                x.gyro[ax] - c.gyro[ax]
            } else {
                x.accel[ax] - c.accel[ax]
            };
            p_noise += d * d;
        }
    }
    p_noise /= (3 * clean.len()) as f64;
    10.0 * (p_sig / p_noise).log10()
}

/// Integer-factor rate conversion. Downsampling runs a trailing boxcar
/// prefilter of the decimation width, then keeps every f-th sample;
/// upsampling holds each sample for the whole new-rate interval. Labels
/// are re-indexed so a kept sample lies in a mapped span exactly when its
/// source sample lay in the original span.
pub fn resample(seg: &MotionSegment, new_rate: u32) -> Result<MotionSegment, SimError> {
    if !SUPPORTED_RATES.contains(&seg.rate_hz) {
        return Err(SimError::UnsupportedRate(seg.rate_hz));
    }
    if !SUPPORTED_RATES.contains(&new_rate) {
        return Err(SimError::UnsupportedRate(new_rate));
    }
    if new_rate == seg.rate_hz {
        return Ok(seg.clone());
    }
    let mut out = MotionSegment::with_rate(new_rate);
    if seg.rate_hz % new_rate == 0 {
        let f = (seg.rate_hz / new_rate) as usize;
        let n = seg.len();
        let mut i = 0usize;
        while i < n {
            let lo = i.saturating_sub(f - 1);
            let w = (i - lo + 1) as f64;
            let mut a = [0.0; 3];
            let mut g = [0.0; 3];
            for s in &seg.samples[lo..=i] {
                for ax in 0..3 {
                    a[ax] += s.accel[ax];
                    g[ax] += s.gyro[ax];
                }
            }
            for ax in 0..3 {
                a[ax] /= w;
                g[ax] /= w;
            }
            out.push(a, g);
            i += f;
        }
        for l in &seg.labels {
            out.label(l.kind, l.start.div_ceil(f), l.end.div_ceil(f));
        }
    } else if new_rate % seg.rate_hz == 0 {
        let u = (new_rate / seg.rate_hz) as usize;
        for s in &seg.samples {
            for _ in 0..u {
                out.push(s.accel, s.gyro);
            }
        }
        for l in &seg.labels {
            out.label(l.kind, l.start * u, l.end * u);
        }
    } else {
        return Err(SimError::NoIntegerFactor {
            from: seg.rate_hz,
            to: new_rate,
        });
    }
    debug_assert!(out.validate().is_ok());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{ActionKind, MotionSegment};
    use super::*;

    fn ramp_segment(n: usize, rate: u32) -> MotionSegment {
        let mut seg = MotionSegment::with_rate(rate);
        for i in 0..n {
            let v = (i as f64 * 0.37).sin();
            seg.push([v, -v, 2.0 * v], [0.5 * v, v, -v]);
        }
        seg.label(ActionKind::PinEntry, n / 4, n / 2);
        seg.label(ActionKind::Still, n / 2, n);
        seg
    }

    #[test]
    fn decimation_count_is_ceil() {
        for n in [100usize, 101, 104, 105, 7] {
            let mut seg = MotionSegment::with_rate(200);
            for _ in 0..n {
                seg.push([1.0, 0.0, 0.0], [0.0; 3]);
            }
            seg.label(ActionKind::Still, 0, n);
            let down = resample(&seg, 40).unwrap();
            assert_eq!(down.len(), n.div_ceil(5), "n = {n}");
        }
    }

    #[test]
    fn identity_rate_is_identity() {
        let seg = ramp_segment(200, 100);
        let same = resample(&seg, 100).unwrap();
        assert_eq!(same, seg);
    }

    #[test]
    fn upsample_is_zero_order_hold() {
        let seg = ramp_segment(40, 50);
        let up = resample(&seg, 200).unwrap();
        assert_eq!(up.len(), 160);
        for (i, s) in up.samples.iter().enumerate() {
            assert_eq!(s.accel, seg.samples[i / 4].accel);
        }
        assert_eq!(up.labels[0].start, seg.labels[0].start * 4);
        assert_eq!(up.labels[0].end, seg.labels[0].end * 4);
    }

    #[test]
    fn unsupported_pairs_error() {
        let seg = ramp_segment(100, 40);
        assert!(matches!(
            resample(&seg, 100),
            Err(SimError::NoIntegerFactor { from: 40, to: 100 })
        ));
        let seg = ramp_segment(100, 50);
        assert!(matches!(
            resample(&seg, 40),
            Err(SimError::NoIntegerFactor { from: 50, to: 40 })
        ));
        let mut seg = ramp_segment(100, 100);
        seg.rate_hz = 37;
        assert!(matches!(resample(&seg, 100), Err(SimError::UnsupportedRate(37))));
    }

    #[test]
    fn down_then_up_preserves_boundaries_within_one_coarse_sample() {
        let seg = ramp_segment(400, 200);
        let down = resample(&seg, 40).unwrap();
        let back = resample(&down, 200).unwrap();
        assert_eq!(back.len(), seg.len());
        for (orig, round) in seg.labels.iter().zip(&back.labels) {
            assert_eq!(orig.kind, round.kind);
            assert!((orig.start as i64 - round.start as i64).unsigned_abs() <= 5);
            assert!((orig.end as i64 - round.end as i64).unsigned_abs() <= 5);
        }
    }

    #[test]
    fn kept_sample_membership_matches_source() {
        let seg = ramp_segment(403, 200);
        let down = resample(&seg, 40).unwrap();
        let span = seg.labels[0];
        let mapped = down.labels[0];
        for j in 0..down.len() {
            let src = j * 5;
            let inside_src = src >= span.start && src < span.end;
            let inside_map = j >= mapped.start && j < mapped.end;
            assert_eq!(inside_src, inside_map, "sample {j}");
        }
    }

    #[test]
    fn infinite_snr_is_identity() {
        let seg = ramp_segment(300, 100);
        let mut rng = SeededRng::new(1);
        let out = add_noise_to_snr(&seg, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(out, seg);
    }

    #[test]
    fn injected_snr_is_exact() {
        let seg = ramp_segment(2000, 100);
        for seed in [1u64, 2, 3] {
            for target in [0.0, 10.0, 20.0, 35.0] {
                let mut rng = SeededRng::new(seed);
                let noisy = add_noise_to_snr(&seg, target, &mut rng).unwrap();
                for gyro in [false, true] {
                    let measured = measure_snr_db(&seg, &noisy, gyro);
                    assert!(
                        (measured - target).abs() < 0.5,
                        "target {target} measured {measured} (gyro {gyro})"
                    );
                }
            }
        }
    }

    #[test]
    fn different_seeds_same_snr_different_noise() {
        let seg = ramp_segment(500, 100);
        let a = add_noise_to_snr(&seg, 15.0, &mut SeededRng::new(5)).unwrap();
        let b = add_noise_to_snr(&seg, 15.0, &mut SeededRng::new(6)).unwrap();
        assert_ne!(a, b);
        assert!((measure_snr_db(&seg, &a, false) - measure_snr_db(&seg, &b, false)).abs() < 1e-9);
    }

    #[test]
    fn zero_power_segment_errors() {
        let mut seg = MotionSegment::with_rate(100);
        for _ in 0..50 {
            seg.push([1.0, 1.0, 1.0], [0.0; 3]);
        }
        seg.label(ActionKind::Still, 0, 50);
        let mut rng = SeededRng::new(1);
        assert!(matches!(
            add_noise_to_snr(&seg, 10.0, &mut rng),
            Err(SimError::ZeroSignalPower)
        ));
    }
}
