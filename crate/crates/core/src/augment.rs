//! Signal augmentations used to build the two correlated views of a window.
//!
//! Every function here is pure given its input, parameters and random
//! stream, and returns a window of exactly the input shape.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::signal::Window;

/// One augmentation recipe. Serializes as `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum AugmentationSpec {
    GaussianNoise {
        sigma: f64,
    },
    ChannelScaling {
        a: f64,
        b: f64,
    },
    Negation {},
    /// `f_w` is the wander period in samples, `s_bw` its amplitude.
    BaselineWander {
        f_w: f64,
        s_bw: f64,
    },
    EmgNoise {
        sigma: f64,
    },
    /// Fraction of each lead zeroed, drawn in `[a_pct, b_pct]` percent.
    Masking {
        a_pct: f64,
        b_pct: f64,
    },
    /// `w` segments, stretch of `r_pct` percent.
    TimeWarping {
        w: usize,
        r_pct: f64,
    },
    Combination {},
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentationSpec::GaussianNoise { sigma } | AugmentationSpec::EmgNoise { sigma } => {
                sigma.is_finite() && sigma > 0.0
            }
            AugmentationSpec::ChannelScaling { a, b } => {
                a.is_finite() && b.is_finite() && 0.0 < a && a <= b
            }
            AugmentationSpec::BaselineWander { f_w, s_bw } => {
                f_w.is_finite() && f_w > 0.0 && s_bw.is_finite() && s_bw >= 0.0
            }
            AugmentationSpec::Masking { a_pct, b_pct } => {
                0.0 <= a_pct && a_pct <= b_pct && b_pct <= 100.0
            }
            AugmentationSpec::TimeWarping { w, r_pct } => {
                w >= 1 && r_pct.is_finite() && r_pct > 0.0
            }
            AugmentationSpec::Negation {} | AugmentationSpec::Combination {} => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid augmentation parameters: {self:?}"
            )))
        }
    }

    /// Short lowercase label, used in file names and reports.
    pub fn name(&self) -> &'static str {
        match self {
            AugmentationSpec::GaussianNoise { .. } => "gaussian_noise",
            AugmentationSpec::ChannelScaling { .. } => "channel_scaling",
            AugmentationSpec::Negation {} => "negation",
            AugmentationSpec::BaselineWander { .. } => "baseline_wander",
            AugmentationSpec::EmgNoise { .. } => "emg_noise",
            AugmentationSpec::Masking { .. } => "masking",
            AugmentationSpec::TimeWarping { .. } => "time_warping",
            AugmentationSpec::Combination {} => "combination",
        }
    }

    /// The parameter grid each augmentation is evaluated over.
    pub fn grid() -> Vec<AugmentationSpec> {
        use AugmentationSpec::*;
        let mut out = Vec::new();
        out.extend([0.01, 0.1, 1.0].map(|sigma| GaussianNoise { sigma }));
        out.extend([(0.33, 3.0), (0.33, 1.0), (0.5, 2.0)].map(|(a, b)| ChannelScaling { a, b }));
        out.push(Negation {});
        out.extend([0.1, 0.7, 1.0].map(|s_bw| BaselineWander { f_w: 100.0, s_bw }));
        out.extend([0.01, 0.5, 1.0].map(|sigma| EmgNoise { sigma }));
        out.extend(
            [(10.0, 20.0), (0.0, 50.0), (40.0, 50.0)]
                .map(|(a_pct, b_pct)| Masking { a_pct, b_pct }),
        );
        out.extend([(1, 10.0), (3, 5.0), (3, 10.0)].map(|(w, r_pct)| TimeWarping { w, r_pct }));
        out.push(Combination {});
        out
    }
}

/// The pool [`combine`] draws from.
pub const COMBINATION_POOL: [AugmentationSpec; 6] = [
    AugmentationSpec::GaussianNoise { sigma: 1.0 },
    AugmentationSpec::ChannelScaling { a: 0.33, b: 3.0 },
    AugmentationSpec::BaselineWander {
        f_w: 100.0,
        s_bw: 1.0,
    },
    AugmentationSpec::EmgNoise { sigma: 0.01 },
    AugmentationSpec::Masking {
        a_pct: 40.0,
        b_pct: 50.0,
    },
    AugmentationSpec::TimeWarping { w: 1, r_pct: 10.0 },
];

/// Number of augmentations [`combine`] chains.
pub const COMBINATION_SIZE: usize = 4;

fn map_leads(x: &Window, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Window {
    x.with_data(
        x.data
            .iter()
            .enumerate()
            .map(|(l, lead)| f(l, lead))
            .collect(),
    )
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every sample.
pub fn gaussian_noise(x: &Window, sigma: f64, rng: &mut RngStream) -> Window {
    map_leads(x, |_, lead| {
        lead.iter().map(|v| v + rng.normal(0.0, sigma)).collect()
    })
}

/// Multiplies each lead by its own factor drawn uniformly from `[a, b]`.
pub fn channel_scale(x: &Window, a: f64, b: f64, rng: &mut RngStream) -> Window {
    map_leads(x, |_, lead| {
        let s = if a == b { a } else { rng.uniform(a, b) };
        lead.iter().map(|v| v * s).collect()
    })
}

pub fn negate(x: &Window) -> Window {
    map_leads(x, |_, lead| lead.iter().map(|v| -v).collect())
}

/// Adds `s_bw * sin(2 pi t / f_w + phi)` to every lead, with one random
/// phase shared across leads.
pub fn baseline_wander(x: &Window, f_w: f64, s_bw: f64, rng: &mut RngStream) -> Window {
    let phi = rng.uniform(0.0, 2.0 * PI);
    let wave: Vec<f64> = (0..x.len())
        .map(|t| s_bw * (2.0 * PI * t as f64 / f_w + phi).sin())
        .collect();
    map_leads(x, |_, lead| {
        lead.iter().zip(&wave).map(|(v, w)| v + w).collect()
    })
}

/// High-pass cutoff of the EMG noise filter, in cycles per sample
/// (0.3 of Nyquist).
pub const EMG_CUTOFF: f64 = 0.15;
const EMG_HALF_TAPS: usize = 16;

/// Windowed-sinc high-pass FIR built by spectral inversion of a low-pass.
fn emg_highpass_taps() -> Vec<f64> {
    let m = 2 * EMG_HALF_TAPS;
    let mut lp: Vec<f64> = (0..=m)
        .map(|n| {
            let k = n as f64 - EMG_HALF_TAPS as f64;
            let sinc = if k == 0.0 {
                2.0 * EMG_CUTOFF
            } else {
                (2.0 * PI * EMG_CUTOFF * k).sin() / (PI * k)
            };
            let blackman = 0.42 - 0.5 * (2.0 * PI * n as f64 / m as f64).cos()
                + 0.08 * (4.0 * PI * n as f64 / m as f64).cos();
            sinc * blackman
        })
        .collect();
    let dc: f64 = lp.iter().sum();
    lp.iter_mut().for_each(|v| *v /= dc);
    lp.iter_mut().for_each(|v| *v = -*v);
    lp[EMG_HALF_TAPS] += 1.0;
    lp
}

/// Adds white Gaussian noise high-passed above [`EMG_CUTOFF`] and rescaled to
/// sample standard deviation `sigma`, independently per lead.
pub fn emg_noise(x: &Window, sigma: f64, rng: &mut RngStream) -> Window {
    let taps = emg_highpass_taps();
    map_leads(x, |_, lead| {
        let n = lead.len();
        if n == 0 {
            return Vec::new();
        }
        let raw: Vec<f64> = (0..n + taps.len() - 1)
            .map(|_| rng.standard_normal())
            .collect();
        let filtered: Vec<f64> = (0..n)
            .map(|i| taps.iter().zip(&raw[i..]).map(|(h, r)| h * r).sum())
            .collect();
        let mean = filtered.iter().sum::<f64>() / n as f64;
        let std = (filtered.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let gain = if std > 0.0 { sigma / std } else { 0.0 };
        lead.iter()
            .zip(&filtered)
            .map(|(v, h)| v + gain * h)
            .collect()
    })
}

/// Zeroed run in one lead of a masked window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRun {
    pub start: usize,
    pub len: usize,
}

/// Like [`mask`] but also reports the zeroed run of every lead.
pub fn mask_with_runs(
    x: &Window,
    a_pct: f64,
    b_pct: f64,
    rng: &mut RngStream,
) -> (Window, Vec<MaskRun>) {
    let n = x.len();
    let c = if a_pct == b_pct {
        a_pct
    } else {
        rng.uniform(a_pct, b_pct)
    };
    let len = ((c / 100.0) * n as f64).round().min(n as f64) as usize;
    let mut runs = Vec::with_capacity(x.n_leads());
    let out = map_leads(x, |_, lead| {
        let start = rng.below(n - len + 1);
        runs.push(MaskRun { start, len });
        let mut v = lead.to_vec();
        v[start..start + len].iter_mut().for_each(|s| *s = 0.0);
        v
    });
    (out, runs)
}

/// Zeroes a contiguous run of `round(c% * len)` samples in each lead, with
/// `c` drawn once per window and offsets drawn per lead.
pub fn mask(x: &Window, a_pct: f64, b_pct: f64, rng: &mut RngStream) -> Window {
    mask_with_runs(x, a_pct, b_pct, rng).0
}

/// Splits `0..len` into `w` near-equal segments (two halves when `w == 1`),
/// stretches `ceil(w/2)` randomly chosen ones by `r_pct` percent and squeezes
/// the rest so the total length is unchanged. Fails when `len < 2w` or the
/// stretch leaves no room for the squeezed segments.
pub fn time_warp(x: &Window, w: usize, r_pct: f64, rng: &mut RngStream) -> Result<Window> {
    let n = x.len();
    if w == 0 || n < 2 * w {
        return Err(Error::invalid(format!(
            "time warp with {w} segments needs at least {} samples, got {n}",
            2 * w
        )));
    }
    let (n_seg, n_stretch) = if w == 1 { (2, 1) } else { (w, w.div_ceil(2)) };
    let bounds: Vec<usize> = (0..=n_seg)
        .map(|k| (k as f64 * n as f64 / n_seg as f64).round() as usize)
        .collect();
    let in_len: Vec<f64> = bounds.windows(2).map(|b| (b[1] - b[0]) as f64).collect();

    let mut order: Vec<usize> = (0..n_seg).collect();
    rng.shuffle(&mut order);
    let mut stretched = vec![false; n_seg];
    order[..n_stretch].iter().for_each(|&k| stretched[k] = true);

    let factor = 1.0 + r_pct / 100.0;
    let stretch_total: f64 = (0..n_seg)
        .filter(|&k| stretched[k])
        .map(|k| in_len[k])
        .sum();
    let squeeze_total = n as f64 - stretch_total;
    let squeeze = (n as f64 - factor * stretch_total) / squeeze_total;
    if !(squeeze > 0.0) {
        return Err(Error::invalid(format!(
            "stretch of {r_pct}% leaves no room for the squeezed segments"
        )));
    }

    // cumulative rounding keeps the output length exactly n
    let mut out_bounds = vec![0usize];
    let mut acc = 0.0;
    for k in 0..n_seg {
        acc += in_len[k] * if stretched[k] { factor } else { squeeze };
        out_bounds.push((acc.round() as usize).min(n));
    }
    out_bounds[n_seg] = n;

    let data = x
        .data
        .iter()
        .map(|lead| {
            let mut out = Vec::with_capacity(n);
            for k in 0..n_seg {
                let (s, m) = (bounds[k] as f64, out_bounds[k + 1] - out_bounds[k]);
                if m == 0 {
                    continue;
                }
                let step = in_len[k] / m as f64;
                out.extend((0..m).map(|j| interp(lead, s + j as f64 * step)));
            }
            out
        })
        .collect();
    Ok(x.with_data(data))
}

/// Linear interpolation at fractional index `p`, extrapolating along the
/// last interval past the end.
fn interp(x: &[f64], p: f64) -> f64 {
    if x.len() == 1 {
        return x[0];
    }
    let i = (p.floor().max(0.0) as usize).min(x.len() - 2);
    let frac = p - i as f64;
    x[i] + frac * (x[i + 1] - x[i])
}

/// Applies four distinct augmentations drawn without replacement from
/// [`COMBINATION_POOL`], in drawn order.
pub fn combine(x: &Window, rng: &mut RngStream) -> Result<Window> {
    let mut idx: Vec<usize> = (0..COMBINATION_POOL.len()).collect();
    rng.shuffle(&mut idx);
    let mut out = x.clone();
    for &k in &idx[..COMBINATION_SIZE] {
        out = apply(&out, &COMBINATION_POOL[k], rng)?;
    }
    Ok(out)
}

/// Applies one augmentation.
pub fn apply(x: &Window, spec: &AugmentationSpec, rng: &mut RngStream) -> Result<Window> {
    spec.validate()?;
    Ok(match *spec {
        AugmentationSpec::GaussianNoise { sigma } => gaussian_noise(x, sigma, rng),
        AugmentationSpec::ChannelScaling { a, b } => channel_scale(x, a, b, rng),
        AugmentationSpec::Negation {} => negate(x),
        AugmentationSpec::BaselineWander { f_w, s_bw } => baseline_wander(x, f_w, s_bw, rng),
        AugmentationSpec::EmgNoise { sigma } => emg_noise(x, sigma, rng),
        AugmentationSpec::Masking { a_pct, b_pct } => mask(x, a_pct, b_pct, rng),
        AugmentationSpec::TimeWarping { w, r_pct } => time_warp(x, w, r_pct, rng)?,
        AugmentationSpec::Combination {} => combine(x, rng)?,
    })
}

/// Two independent applications of `spec`, each with its own child stream.
pub fn make_views(
    x: &Window,
    spec: &AugmentationSpec,
    rng: &mut RngStream,
) -> Result<(Window, Window)> {
    let mut ri = rng.fork();
    let mut rj = rng.fork();
    Ok((apply(x, spec, &mut ri)?, apply(x, spec, &mut rj)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros(leads: usize, n: usize) -> Window {
        Window::from_data(vec![vec![0.0; n]; leads])
    }

    fn ramp(n: usize) -> Window {
        Window::from_data(vec![(0..n).map(|t| t as f64).collect()])
    }

    fn sample_std(x: &Window) -> f64 {
        let all: Vec<f64> = x.data.iter().flatten().copied().collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        (all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64).sqrt()
    }

    #[test]
    fn grid_is_valid() {
        let g = AugmentationSpec::grid();
        assert_eq!(g.len(), 20);
        g.iter().for_each(|s| s.validate().unwrap());
        COMBINATION_POOL.iter().for_each(|s| s.validate().unwrap());
    }

    #[test]
    fn invalid_params_rejected() {
        use AugmentationSpec::*;
        for s in [
            GaussianNoise { sigma: 0.0 },
            ChannelScaling { a: 2.0, b: 1.0 },
            ChannelScaling { a: 0.0, b: 1.0 },
            BaselineWander {
                f_w: 0.0,
                s_bw: 1.0,
            },
            BaselineWander {
                f_w: 100.0,
                s_bw: -1.0,
            },
            EmgNoise { sigma: -1.0 },
            Masking {
                a_pct: 50.0,
                b_pct: 40.0,
            },
            Masking {
                a_pct: 0.0,
                b_pct: 101.0,
            },
            TimeWarping { w: 0, r_pct: 10.0 },
            TimeWarping { w: 2, r_pct: 0.0 },
        ] {
            assert!(s.validate().is_err(), "{s:?}");
        }
    }

    #[test]
    fn spec_json_shape() {
        let s = AugmentationSpec::TimeWarping { w: 3, r_pct: 10.0 };
        let j = serde_json::to_value(s).unwrap();
        assert_eq!(
            j,
            serde_json::json!({"kind": "TimeWarping", "params": {"w": 3, "r_pct": 10.0}})
        );
        let n: AugmentationSpec =
            serde_json::from_str(r#"{"kind": "Negation", "params": {}}"#).unwrap();
        assert_eq!(n, AugmentationSpec::Negation {});
    }

    #[test]
    fn gaussian_noise_std() {
        let mut rng = RngStream::new(1);
        let y = gaussian_noise(&zeros(12, 250), 1.0, &mut rng);
        let s = sample_std(&y);
        assert!((0.9..=1.1).contains(&s), "{s}");
        let y = gaussian_noise(&ramp(250), 1e-9, &mut rng);
        assert!(y.data[0]
            .iter()
            .enumerate()
            .all(|(t, v)| (v - t as f64).abs() < 1e-6));
    }

    #[test]
    fn channel_scale_cases() {
        let x = Window::from_data(vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.25, -1.0]]);
        let mut rng = RngStream::new(2);
        assert_eq!(channel_scale(&x, 1.0, 1.0, &mut rng), x);
        let d = channel_scale(&x, 2.0, 2.0, &mut rng);
        assert_eq!(d.data[0], vec![2.0, -4.0, 6.0]);
        let back = channel_scale(&channel_scale(&x, 4.0, 4.0, &mut rng), 0.25, 0.25, &mut rng);
        for (a, b) in back.data.iter().flatten().zip(x.data.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = channel_scale(&x, 0.33, 3.0, &mut rng);
        for (ly, lx) in y.data.iter().zip(&x.data) {
            let r = ly[0] / lx[0];
            assert!((0.33..=3.0).contains(&r));
            assert!(ly.iter().zip(lx).all(|(a, b)| (a / b - r).abs() < 1e-12));
        }
    }

    #[test]
    fn negation() {
        let x = Window::from_data(vec![vec![1.0, -2.0, 0.0]]);
        assert_eq!(negate(&x).data[0], vec![-1.0, 2.0, -0.0]);
        assert_eq!(negate(&negate(&x)), x);
    }

    #[test]
    fn baseline_wander_amplitude() {
        let mut rng = RngStream::new(3);
        let x = zeros(3, 250);
        assert_eq!(baseline_wander(&x, 100.0, 0.0, &mut rng).data, x.data);
        let y = baseline_wander(&x, 100.0, 1.0, &mut rng);
        let peak = y.data[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((0.99..=1.0).contains(&peak), "{peak}");
        assert_eq!(y.data[0], y.data[2]);
    }

    #[test]
    fn emg_noise_std_and_spectrum() {
        let mut rng = RngStream::new(4);
        let y = emg_noise(&zeros(12, 250), 0.5, &mut rng);
        let s = sample_std(&y);
        assert!((0.45..=0.55).contains(&s), "{s}");
        // lag-one autocorrelation of high-passed white noise is negative
        let lead = &y.data[0];
        let ac: f64 = lead.windows(2).map(|p| p[0] * p[1]).sum();
        assert!(ac < 0.0);
        let tiny = emg_noise(&ramp(50), 1e-9, &mut rng);
        assert!(tiny.data[0]
            .iter()
            .enumerate()
            .all(|(t, v)| (v - t as f64).abs() < 1e-6));
    }

    #[test]
    fn masking_runs() {
        let x = Window::from_data(vec![vec![1.0; 250]; 12]);
        let mut rng = RngStream::new(5);
        assert_eq!(mask(&x, 0.0, 0.0, &mut rng), x);
        assert!(mask(&x, 100.0, 100.0, &mut rng)
            .data
            .iter()
            .flatten()
            .all(|v| *v == 0.0));
        for _ in 0..50 {
            let (y, runs) = mask_with_runs(&x, 40.0, 50.0, &mut rng);
            for (lead, run) in y.data.iter().zip(&runs) {
                assert!((100..=125).contains(&run.len));
                let zeros = lead.iter().filter(|v| **v == 0.0).count();
                assert_eq!(zeros, run.len);
                assert!(lead[run.start..run.start + run.len]
                    .iter()
                    .all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn time_warp_preserves_length() {
        let mut rng = RngStream::new(6);
        for (w, r) in [(1, 10.0), (3, 5.0), (3, 10.0), (5, 30.0)] {
            for n in [2 * w, 2 * w + 1, 250, 1000] {
                let y = time_warp(&zeros(2, n), w, r, &mut rng).unwrap();
                assert!(y.data.iter().all(|l| l.len() == n));
            }
        }
        assert!(time_warp(&zeros(1, 5), 3, 10.0, &mut rng).is_err());
        assert!(time_warp(&zeros(1, 100), 2, 150.0, &mut rng).is_err());
    }

    #[test]
    fn time_warp_tiny_stretch_is_identity() {
        let x = Window::from_data(vec![(0..250).map(|t| (t as f64 * 0.1).sin()).collect()]);
        let y = time_warp(&x, 3, 1e-6, &mut RngStream::new(7)).unwrap();
        for (a, b) in y.data[0].iter().zip(&x.data[0]) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn time_warp_ramp_has_three_slopes() {
        let y = time_warp(&ramp(250), 3, 10.0, &mut RngStream::new(8)).unwrap();
        let slopes: Vec<f64> = y.data[0].windows(2).map(|p| p[1] - p[0]).collect();
        let mut regions = vec![slopes[0]];
        for s in &slopes[1..] {
            if (s - regions.last().unwrap()).abs() > 1e-9 {
                regions.push(*s);
            }
        }
        assert_eq!(regions.len(), 3, "{regions:?}");
        let (lo, hi) = regions
            .iter()
            .fold((f64::MAX, 0.0f64), |(l, h), s| (l.min(*s), h.max(*s)));
        // stretched slope is 1/1.1; the squeezed one 1/squeeze with two of the
        // three segments stretched: squeeze = 1 - 2 * 0.1
        let expected = 1.1 / 0.8;
        assert!((hi / lo - expected).abs() / expected < 0.03, "{}", hi / lo);
    }

    #[test]
    fn combination_deterministic_and_length_preserving() {
        let x = Window::from_data(vec![(0..250).map(|t| (t as f64 * 0.05).sin()).collect(); 4]);
        let a = combine(&x, &mut RngStream::new(9)).unwrap();
        let b = combine(&x, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|l| l.len() == 250));
    }

    #[test]
    fn views() {
        let x = Window::from_data(vec![vec![1.0, 2.0, 3.0, 4.0]; 2]);
        let (i, j) =
            make_views(&x, &AugmentationSpec::Negation {}, &mut RngStream::new(10)).unwrap();
        assert_eq!(i, j);
        let g = AugmentationSpec::GaussianNoise { sigma: 1.0 };
        let (i, j) = make_views(&x, &g, &mut RngStream::new(10)).unwrap();
        assert_ne!(i, j);
        let (i2, j2) = make_views(&x, &g, &mut RngStream::new(10)).unwrap();
        assert_eq!((i, j), (i2, j2));
    }
}
