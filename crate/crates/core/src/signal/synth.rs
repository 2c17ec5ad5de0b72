//! Desk-scale synthetic ECG.
//!
//! A beat is the sum of three Gaussian bumps (P wave, QRS complex, T wave).
//! Each lead sees the bumps through a cosine projection of a per-subject
//! electrical axis, so leads differ in amplitude and polarity. The four
//! morphologies differ only in their RR-interval statistics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{EcgRecord, LabelSet};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Nominal RR interval of the normal rhythm, seconds.
const NORMAL_RR_S: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    Normal,
    FastRate,
    SlowRate,
    IrregularInterval,
}

impl Morphology {
    pub const ALL: [Morphology; 4] = [
        Morphology::Normal,
        Morphology::FastRate,
        Morphology::SlowRate,
        Morphology::IrregularInterval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Morphology::Normal => "normal",
            Morphology::FastRate => "fast_rate",
            Morphology::SlowRate => "slow_rate",
            Morphology::IrregularInterval => "irregular_interval",
        }
    }

    pub fn index(self) -> usize {
        Morphology::ALL.iter().position(|&m| m == self).unwrap()
    }

    pub fn class_names() -> Vec<String> {
        Morphology::ALL
            .iter()
            .map(|m| m.name().to_string())
            .collect()
    }

    /// (mean RR relative to normal, RR jitter as a fraction of the mean)
    fn rr_stats(self) -> (f64, f64) {
        match self {
            Morphology::Normal => (1.0, 0.02),
            Morphology::FastRate => (0.6, 0.02),
            Morphology::SlowRate => (1.5, 0.02),
            Morphology::IrregularInterval => (1.0, 0.3),
        }
    }
}

/// Acquisition site. Sites share rhythm statistics but differ in waveform
/// shape, which gives two related but shifted data distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Site {
    #[default]
    A,
    B,
}

#[derive(Debug, Clone, Copy)]
struct Bump {
    center_s: f64,
    amplitude_mv: f64,
    width_s: f64,
    axis_offset: f64,
}

impl Site {
    fn bumps(self) -> [Bump; 3] {
        match self {
            Site::A => [
                Bump {
                    center_s: 0.10,
                    amplitude_mv: 0.15,
                    width_s: 0.020,
                    axis_offset: 0.3,
                },
                Bump {
                    center_s: 0.25,
                    amplitude_mv: 1.20,
                    width_s: 0.012,
                    axis_offset: 0.0,
                },
                Bump {
                    center_s: 0.48,
                    amplitude_mv: 0.35,
                    width_s: 0.045,
                    axis_offset: 0.3,
                },
            ],
            Site::B => [
                Bump {
                    center_s: 0.12,
                    amplitude_mv: 0.08,
                    width_s: 0.030,
                    axis_offset: -0.6,
                },
                Bump {
                    center_s: 0.26,
                    amplitude_mv: 0.80,
                    width_s: 0.024,
                    axis_offset: 0.5,
                },
                Bump {
                    center_s: 0.52,
                    amplitude_mv: -0.30,
                    width_s: 0.060,
                    axis_offset: 1.1,
                },
            ],
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Site::A => "A",
            Site::B => "B",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticEcgConfig {
    pub n_subjects: usize,
    /// Record duration expressed in nominal normal-rhythm beats; every class
    /// shares this duration.
    pub beats_per_record: usize,
    pub class_id: Morphology,
    pub noise_sigma: f64,
    pub sampling_rate_hz: f64,
    pub seed: u64,
    pub n_leads: usize,
    pub site: Site,
}

impl Default for SyntheticEcgConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            beats_per_record: 12,
            class_id: Morphology::Normal,
            noise_sigma: 0.05,
            sampling_rate_hz: 100.0,
            seed: 0,
            n_leads: 12,
            site: Site::A,
        }
    }
}

impl SyntheticEcgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::invalid("n_subjects must be at least 1"));
        }
        if self.beats_per_record == 0 {
            return Err(Error::invalid("beats_per_record must be at least 1"));
        }
        if self.n_leads == 0 {
            return Err(Error::invalid("n_leads must be at least 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be nonnegative"));
        }
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(Error::invalid("sampling_rate_hz must be positive"));
        }
        Ok(())
    }

    pub fn duration_samples(&self) -> usize {
        ((self.beats_per_record as f64 * NORMAL_RR_S * self.sampling_rate_hz).round() as usize)
            .max(1)
    }
}

/// Generates one record per subject. Output is a pure function of `config`.
pub fn generate_synthetic(config: &SyntheticEcgConfig) -> Result<Vec<EcgRecord>> {
    config.validate()?;
    let classes = Morphology::class_names();
    let labels = LabelSet::one_hot(&classes, config.class_id.index());
    let mut master = RngStream::new(config.seed);
    (0..config.n_subjects)
        .map(|i| {
            let mut rng = master.fork();
            let leads = synth_leads(config, &mut rng).0;
            EcgRecord::new(
                format!(
                    "{}-{}-{:016x}-{i:04}",
                    config.site.tag(),
                    config.class_id.name(),
                    config.seed
                ),
                leads,
                config.sampling_rate_hz,
                labels.clone(),
            )
        })
        .collect()
}

/// Beat onset times (seconds) for one record.
fn beat_onsets(config: &SyntheticEcgConfig, rate_scale: f64, rng: &mut RngStream) -> Vec<f64> {
    let duration = config.duration_samples() as f64 / config.sampling_rate_hz;
    let (rel_mean, jitter) = config.class_id.rr_stats();
    let mean = NORMAL_RR_S * rel_mean * rate_scale;
    let mut onsets = vec![0.0];
    let mut t = 0.0;
    loop {
        let rr = rng.normal(mean, jitter * mean).max(0.35 * mean);
        t += rr;
        if t >= duration {
            break;
        }
        onsets.push(t);
    }
    onsets
}

fn synth_leads(config: &SyntheticEcgConfig, rng: &mut RngStream) -> (Vec<Vec<f64>>, usize) {
    let n = config.duration_samples();
    let fs = config.sampling_rate_hz;
    // per-subject nuisance: rate, overall gain, electrical axis
    let rate_scale = rng.uniform(0.92, 1.08);
    let gain = rng.uniform(0.5f64.ln(), 2.0f64.ln()).exp();
    let axis = rng.uniform(-0.4, 0.4);
    let onsets = beat_onsets(config, rate_scale, rng);
    let bumps = config.site.bumps();

    let mut leads = vec![vec![0.0; n]; config.n_leads];
    for (l, lead) in leads.iter_mut().enumerate() {
        let lead_angle = PI * l as f64 / config.n_leads as f64;
        let weights: Vec<f64> = bumps
            .iter()
            .map(|b| gain * b.amplitude_mv * (axis + lead_angle + b.axis_offset).cos())
            .collect();
        for &onset in &onsets {
            for (b, &w) in bumps.iter().zip(&weights) {
                let center = onset + b.center_s;
                let lo = (((center - 5.0 * b.width_s) * fs).floor().max(0.0)) as usize;
                let hi = (((center + 5.0 * b.width_s) * fs).ceil() as usize).min(n);
                for (i, v) in lead.iter_mut().enumerate().take(hi).skip(lo) {
                    let d = (i as f64 / fs - center) / b.width_s;
                    *v += w * (-0.5 * d * d).exp();
                }
            }
        }
    }
    if config.noise_sigma > 0.0 {
        for v in leads.iter_mut().flatten() {
            *v += rng.normal(0.0, config.noise_sigma);
        }
    }
    (leads, onsets.len())
}

/// Multi-class synthetic dataset: `n_subjects_per_class` subjects of every
/// morphology from one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDatasetConfig {
    pub site: Site,
    pub n_subjects_per_class: usize,
    pub beats_per_record: usize,
    pub n_leads: usize,
    pub noise_sigma: f64,
    pub sampling_rate_hz: f64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        Self {
            site: Site::A,
            n_subjects_per_class: 25,
            beats_per_record: 12,
            n_leads: 12,
            noise_sigma: 0.05,
            sampling_rate_hz: 100.0,
        }
    }
}

pub fn generate_dataset(config: &SyntheticDatasetConfig, seed: u64) -> Result<Vec<EcgRecord>> {
    let mut master = RngStream::new(seed);
    let mut records = Vec::new();
    for class_id in Morphology::ALL {
        let cfg = SyntheticEcgConfig {
            n_subjects: config.n_subjects_per_class,
            beats_per_record: config.beats_per_record,
            class_id,
            noise_sigma: config.noise_sigma,
            sampling_rate_hz: config.sampling_rate_hz,
            seed: master.next_u64(),
            n_leads: config.n_leads,
            site: config.site,
        };
        records.extend(generate_synthetic(&cfg)?);
    }
    Ok(records)
}
