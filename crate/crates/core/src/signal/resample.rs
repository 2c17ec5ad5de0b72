use std::f64::consts::PI;

use super::EcgRecord;
use crate::error::{Error, Result};

/// Kernel half-width, in zero crossings of the low-pass sinc.
const ZERO_CROSSINGS: f64 = 24.0;

/// Resamples every lead to `target_hz` by band-limited interpolation.
///
/// Each output instant is evaluated with a Blackman-windowed sinc whose
/// cutoff sits at the Nyquist frequency of the lower of the two rates, so
/// downsampling is anti-aliased and upsampling does not image. Record edges are
/// extended by point reflection, which keeps the signal and its slope
/// continuous across the boundary. Equal rates return the record untouched.
pub fn resample(record: &EcgRecord, target_hz: f64) -> Result<EcgRecord> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::invalid(format!(
            "target rate must be positive, got {target_hz}"
        )));
    }
    record.validate()?;
    let src_hz = record.sampling_rate_hz;
    if target_hz == src_hz {
        return Ok(record.clone());
    }

    let n_in = record.n_samples();
    let n_out = ((n_in as f64) * target_hz / src_hz).round().max(1.0) as usize;
    let step = src_hz / target_hz;
    // cutoff in cycles per input sample
    let fc = 0.5 * src_hz.min(target_hz) / src_hz;
    let half = (ZERO_CROSSINGS / (2.0 * fc)).ceil();

    let mut out = vec![Vec::with_capacity(n_out); record.n_leads()];
    let mut taps: Vec<(i64, f64)> = Vec::with_capacity(2 * half as usize + 2);
    for k in 0..n_out {
        let pos = k as f64 * step;
        let lo = (pos - half).ceil() as i64;
        let hi = (pos + half).floor() as i64;
        taps.clear();
        let mut norm = 0.0;
        for n in lo..=hi {
            let d = pos - n as f64;
            let w = 2.0 * fc * sinc(2.0 * fc * d) * blackman(d / half);
            taps.push((n, w));
            norm += w;
        }
        for (lead_out, lead_in) in out.iter_mut().zip(&record.leads) {
            let acc: f64 = taps.iter().map(|&(i, w)| w * extended(lead_in, i)).sum();
            lead_out.push(acc / norm);
        }
    }

    Ok(EcgRecord {
        subject_id: record.subject_id.clone(),
        leads: out,
        sampling_rate_hz: target_hz,
        labels: record.labels.clone(),
    })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on `[-1, 1]`.
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos()
}

/// Sample `i` of `x` extended past both ends by point reflection about the
/// edge samples; clamps once the reflection runs out of data.
fn extended(x: &[f64], i: i64) -> f64 {
    let n = x.len() as i64;
    if (0..n).contains(&i) {
        return x[i as usize];
    }
    if i < 0 {
        let j = (-i).min(n - 1) as usize;
        2.0 * x[0] - x[j]
    } else {
        let last = x[(n - 1) as usize];
        let j = (2 * (n - 1) - i).max(0) as usize;
        2.0 * last - x[j]
    }
}
