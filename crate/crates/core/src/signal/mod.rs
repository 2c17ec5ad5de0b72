//! ECG records, resampling, windowing, subject-disjoint splits, and a
//! synthetic record generator.

pub mod io;
mod resample;
mod split;
mod synth;

pub use resample::resample;
pub use split::{split_by_subject, window, DatasetSplit, WindowConfig};
pub use synth::{
    generate_dataset, generate_synthetic, Morphology, Site, SyntheticDatasetConfig,
    SyntheticEcgConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-label class indicator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub classes: Vec<String>,
    pub indicator: Vec<u8>,
}

impl LabelSet {
    pub fn new(classes: Vec<String>, indicator: Vec<u8>) -> Result<Self> {
        if classes.len() != indicator.len() {
            return Err(Error::shape(format!(
                "label indicator has {} entries for {} classes",
                indicator.len(),
                classes.len()
            )));
        }
        if indicator.iter().any(|&v| v > 1) {
            return Err(Error::invalid("label indicator entries must be 0 or 1"));
        }
        Ok(Self { classes, indicator })
    }

    /// Label set with no classes at all.
    pub fn empty() -> Self {
        Self {
            classes: Vec::new(),
            indicator: Vec::new(),
        }
    }

    /// Builds an indicator over `classes` with the named entries set.
    pub fn from_names<S: AsRef<str>>(classes: &[String], present: &[S]) -> Result<Self> {
        let mut indicator = vec![0u8; classes.len()];
        for name in present {
            let name = name.as_ref();
            let idx = classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::format(format!("unknown class name '{name}'")))?;
            indicator[idx] = 1;
        }
        Ok(Self {
            classes: classes.to_vec(),
            indicator,
        })
    }

    pub fn one_hot(classes: &[String], index: usize) -> Self {
        let mut indicator = vec![0u8; classes.len()];
        indicator[index] = 1;
        Self {
            classes: classes.to_vec(),
            indicator,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn present(&self) -> impl Iterator<Item = &str> {
        self.classes
            .iter()
            .zip(&self.indicator)
            .filter(|(_, &v)| v == 1)
            .map(|(c, _)| c.as_str())
    }
}

/// A multi-lead sampled signal. Samples are stored lead-major in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub subject_id: String,
    pub leads: Vec<Vec<f64>>,
    pub sampling_rate_hz: f64,
    pub labels: LabelSet,
}

impl EcgRecord {
    pub fn new(
        subject_id: impl Into<String>,
        leads: Vec<Vec<f64>>,
        sampling_rate_hz: f64,
        labels: LabelSet,
    ) -> Result<Self> {
        let record = Self {
            subject_id: subject_id.into(),
            leads,
            sampling_rate_hz,
            labels,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.leads.is_empty() {
            return Err(Error::invalid("record has no leads"));
        }
        let n = self.leads[0].len();
        if n == 0 {
            return Err(Error::invalid("record has no samples"));
        }
        if self.leads.iter().any(|l| l.len() != n) {
            return Err(Error::shape("leads have unequal sample counts"));
        }
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(Error::invalid(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate_hz
            )));
        }
        if self.leads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "record '{}' contains non-finite samples",
                self.subject_id
            )));
        }
        Ok(())
    }

    pub fn n_leads(&self) -> usize {
        self.leads.len()
    }

    pub fn n_samples(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }
}

/// Fixed-length segment cut from one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Vec<Vec<f64>>,
    pub source_subject: String,
    pub labels: LabelSet,
}

impl Window {
    pub fn n_leads(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same metadata, new sample data.
    pub fn with_data(&self, data: Vec<Vec<f64>>) -> Window {
        Window {
            data,
            source_subject: self.source_subject.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Bare window without subject or labels, mostly useful in tests.
    pub fn from_data(data: Vec<Vec<f64>>) -> Window {
        Window {
            data,
            source_subject: String::new(),
            labels: LabelSet::empty(),
        }
    }
}
