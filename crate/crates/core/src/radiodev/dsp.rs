//! Channelization for the wideband medium: frequency shifts, a windowed-sinc
//! low-pass, interpolation and decimation.
//!
//! All sample indices are absolute (ticks since the radio epoch at the
//! relevant rate) so the oscillator phase is continuous across calls, and a
//! window computed with enough margin is exact regardless of how the stream
//! is cut into blocks.

use super::RadioError;
use crate::iqcore::{IqBuffer, IqSample};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Default filter length.
pub const DEFAULT_TAPS: usize = 127;
/// Cutoff as a fraction of the narrowband (slice) rate.
pub const CUTOFF_FRACTION: f64 = 0.45;

/// Blackman-windowed sinc with unity DC gain. `cutoff` is in cycles per
/// sample (0 < cutoff <= 0.5). Odd `taps` keeps the filter zero-phase about
/// its centre tap.
pub fn design_lowpass(taps: usize, cutoff: f64) -> Vec<f64> {
    assert!(taps % 2 == 1, "filter length must be odd");
    if taps == 1 {
        return vec![1.0];
    }
    let m = (taps - 1) as f64;
    let centre = m / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - centre;
            let sinc = if x == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * x).sin() / (PI * x) };
            let w = 0.42 - 0.5 * (2.0 * PI * n as f64 / m).cos() + 0.08 * (4.0 * PI * n as f64 / m).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Low-pass for a slice at `narrow_rate` inside a `wide_rate` stream.
pub fn channel_filter(taps: usize, narrow_rate: u64, wide_rate: u64) -> Vec<f64> {
    design_lowpass(taps, CUTOFF_FRACTION * narrow_rate as f64 / wide_rate as f64)
}

/// `exp(sign * j*2*pi*offset*n/rate)` computed exactly for large `n`.
pub(crate) fn oscillator(offset_hz: i64, rate: u64, n: i64, sign: f64) -> Complex64 {
    let r = rate as i128;
    let cycles = (offset_hz as i128 * n as i128).rem_euclid(r);
    let phase = 2.0 * PI * cycles as f64 / rate as f64;
    Complex64::from_polar(1.0, sign * phase)
}

pub(crate) fn to_complex(s: &[IqSample]) -> Vec<Complex64> {
    s.iter().map(|s| Complex64::new(f64::from(s.i), f64::from(s.q))).collect()
}

fn sat(v: f64) -> i16 {
    v.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

pub(crate) fn to_samples(c: &[Complex64]) -> Vec<IqSample> {
    c.iter().map(|c| IqSample::new(sat(c.re), sat(c.im))).collect()
}

pub(crate) fn check_band(offset_hz: i64, narrow_rate: u64, wide_rate: u64) -> Result<u64, RadioError> {
    if narrow_rate == 0 || wide_rate % narrow_rate != 0 {
        return Err(RadioError::InvalidOptions(format!(
            "channel rate {narrow_rate} does not divide wideband rate {wide_rate}"
        )));
    }
    // |offset| + narrow/2 <= wide/2, in integers
    if 2 * offset_hz.unsigned_abs() + narrow_rate > wide_rate {
        return Err(RadioError::BandOutsideWideband { offset_hz, rate: narrow_rate, wideband_rate: wide_rate });
    }
    Ok(wide_rate / narrow_rate)
}

/// Contribution of one narrowband stream to wideband samples `[lo, hi)`.
///
/// `x(t)` supplies narrowband sample `t` (absolute); it is only asked for
/// ticks that can reach the window through the filter.
pub(crate) fn upconvert_window(
    x: &dyn Fn(i64) -> Complex64,
    factor: u64,
    offset_hz: i64,
    wide_rate: u64,
    h: &[f64],
    lo: i64,
    hi: i64,
    out: &mut [Complex64],
) {
    let l = factor as i64;
    let half = (h.len() / 2) as i64;
    let gain = l as f64;
    for n in lo..hi {
        let mut acc = Complex64::new(0.0, 0.0);
        if l == 1 {
            acc = x(n);
        } else {
            // zero-stuffed input is non-zero only at multiples of l
            let first = (n - half).div_euclid(l) + i64::from((n - half).rem_euclid(l) != 0);
            let mut t = first;
            while t * l <= n + half {
                let k = (n - t * l + half) as usize;
                acc += x(t) * h[k];
                t += 1;
            }
            acc *= gain;
        }
        out[(n - lo) as usize] += acc * oscillator(offset_hz, wide_rate, n, 1.0);
    }
}

/// Narrowband samples `[a, b)` recovered from a wideband stream.
///
/// `w(n)` supplies wideband sample `n`; it is asked for `n` in
/// `[a*factor - taps/2, (b-1)*factor + taps/2]`.
pub(crate) fn downconvert_window(
    w: &dyn Fn(i64) -> Complex64,
    factor: u64,
    offset_hz: i64,
    wide_rate: u64,
    h: &[f64],
    a: i64,
    b: i64,
) -> Vec<Complex64> {
    let l = factor as i64;
    let half = (h.len() / 2) as i64;
    if b <= a {
        return Vec::new();
    }
    // shift once over the whole support, then filter at the kept indices
    let lo = a * l - half;
    let shifted: Vec<Complex64> =
        (lo..=(b - 1) * l + half).map(|n| w(n) * oscillator(offset_hz, wide_rate, n, -1.0)).collect();
    (a..b)
        .map(|t| {
            let centre = t * l;
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &hk) in h.iter().enumerate() {
                acc += shifted[(centre + half - k as i64 - lo) as usize] * hk;
            }
            acc
        })
        .collect()
}

/// Shifts a narrowband block (starting at tick 0) by `offset_hz` and
/// interpolates it to `wideband_rate`. The output has `len * factor`
/// samples; input outside the block is treated as zero.
pub fn mix_up(x: &IqBuffer, offset_hz: i64, in_rate: u64, wideband_rate: u64) -> Result<IqBuffer, RadioError> {
    let factor = check_band(offset_hz, in_rate, wideband_rate)?;
    let h = channel_filter(DEFAULT_TAPS, in_rate, wideband_rate);
    let c = to_complex(x.samples());
    let get = |t: i64| if t >= 0 && (t as usize) < c.len() { c[t as usize] } else { Complex64::new(0.0, 0.0) };
    let n = x.len() as i64 * factor as i64;
    let mut out = vec![Complex64::new(0.0, 0.0); n as usize];
    upconvert_window(&get, factor, offset_hz, wideband_rate, &h, 0, n, &mut out);
    Ok(IqBuffer::new(to_samples(&out)))
}

/// Shifts a wideband block (starting at tick 0) by `-offset_hz`, filters it
/// with `taps` and keeps every `wideband_rate / out_rate`-th sample.
pub fn mix_down(
    wideband: &IqBuffer,
    offset_hz: i64,
    wideband_rate: u64,
    out_rate: u64,
    taps: &[f64],
) -> Result<IqBuffer, RadioError> {
    let factor = check_band(offset_hz, out_rate, wideband_rate)?;
    if taps.len() % 2 == 0 {
        return Err(RadioError::InvalidOptions("filter length must be odd".into()));
    }
    let c = to_complex(wideband.samples());
    let get = |n: i64| if n >= 0 && (n as usize) < c.len() { c[n as usize] } else { Complex64::new(0.0, 0.0) };
    let out_len = wideband.len() as i64 / factor as i64;
    let out = downconvert_window(&get, factor, offset_hz, wideband_rate, taps, 0, out_len);
    Ok(IqBuffer::new(to_samples(&out)))
}

/// Mean power of a complex block.
pub fn mean_power(x: &[IqSample]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s.power()).sum::<f64>() / x.len() as f64
}

/// Complex tone at `freq_hz` with the given amplitude, `len` samples at `rate`.
pub fn tone(freq_hz: i64, rate: u64, amplitude: f64, len: usize) -> IqBuffer {
    let c: Vec<Complex64> = (0..len as i64).map(|n| oscillator(freq_hz, rate, n, 1.0) * amplitude).collect();
    IqBuffer::new(to_samples(&c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(x: f64) -> f64 {
        10.0 * x.log10()
    }

    #[test]
    fn lowpass_shape() {
        let h = design_lowpass(DEFAULT_TAPS, 0.1125);
        assert_eq!(h.len(), 127);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..63 {
            assert!((h[k] - h[126 - k]).abs() < 1e-15, "symmetric");
        }
        assert_eq!(design_lowpass(1, 0.5), vec![1.0]);
    }

    #[test]
    fn passthrough_is_identity() {
        let x = IqBuffer::new((0..500).map(|n| IqSample::new(n as i16 * 3, -(n as i16))).collect());
        let w = mix_up(&x, 0, 7_680_000, 7_680_000).unwrap();
        assert_eq!(w, x);
        let y = mix_down(&w, 0, 7_680_000, 7_680_000, &[1.0]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn round_trip_error_below_minus_40_db() {
        let rate = 7_680_000;
        let wide = 30_720_000;
        let x = tone(1_000_000, rate, 8000.0, 2000);
        let w = mix_up(&x, 7_500_000, rate, wide).unwrap();
        let h = channel_filter(DEFAULT_TAPS, rate, wide);
        let y = mix_down(&w, 7_500_000, wide, rate, &h).unwrap();
        // ignore the filter's edge transients
        let err: Vec<IqSample> = x.samples()[100..1900]
            .iter()
            .zip(&y.samples()[100..1900])
            .map(|(a, b)| IqSample::new(a.i - b.i, a.q - b.q))
            .collect();
        let ratio = db(mean_power(&err) / mean_power(&x.samples()[100..1900]));
        assert!(ratio <= -40.0, "round-trip error {ratio:.1} dB");
    }

    #[test]
    fn band_edges() {
        assert!(check_band(11_520_000, 7_680_000, 30_720_000).is_ok());
        assert!(check_band(11_520_001, 7_680_000, 30_720_000).is_err());
        assert!(check_band(0, 7_000_000, 30_720_000).is_err());
    }

    #[test]
    fn oscillator_is_exact_far_from_origin() {
        let a = oscillator(1_000_000, 30_720_000, 3 * 30_720_000 * 1_000_000 + 5, 1.0);
        let b = oscillator(1_000_000, 30_720_000, 5, 1.0);
        assert!((a - b).norm() < 1e-12);
    }
}
