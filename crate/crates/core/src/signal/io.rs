//! On-disk formats for records, labels and windows.
//!
//! Record binary (`.esig`), little-endian:
//!
//! ```text
//! magic "ESIG", version u32, n_leads u32, n_samples u64,
//! sampling_rate_hz f64, then f32 samples lead-major
//! ```
//!
//! Window binary (`.ewin`), little-endian:
//!
//! ```text
//! magic "EWIN", version u32, n_windows u32, n_leads u32, window_len u32,
//! n_classes u32, class names (u32 length + UTF-8 each), then per window:
//! subject id (u32 length + UTF-8), indicator u8 x n_classes,
//! f32 samples lead-major
//! ```
//!
//! A dataset directory holds `index.csv` (`record_id,subject_id,file`),
//! `labels.csv` (`record_id,labels` with `;`-separated class names),
//! `classes.txt` (one class name per line, in indicator order) and the
//! record files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{EcgRecord, LabelSet, Window};
use crate::error::{Error, Result};

const RECORD_MAGIC: &[u8; 4] = b"ESIG";
const WINDOW_MAGIC: &[u8; 4] = b"EWIN";
const VERSION: u32 = 1;
/// Upper bound on any length-prefixed string, to reject corrupt headers early.
const MAX_STRING: u32 = 1 << 16;

/// Raw signal read from an `.esig` file, before subject and labels are known.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalData {
    pub leads: Vec<Vec<f64>>,
    pub sampling_rate_hz: f64,
}

pub fn write_esig<W: Write>(mut w: W, leads: &[Vec<f64>], sampling_rate_hz: f64) -> Result<()> {
    let n = leads.first().map_or(0, Vec::len);
    if leads.iter().any(|l| l.len() != n) {
        return Err(Error::shape("leads have unequal sample counts"));
    }
    w.write_all(RECORD_MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(leads.len() as u32)?;
    w.write_u64::<LE>(n as u64)?;
    w.write_f64::<LE>(sampling_rate_hz)?;
    for lead in leads {
        for &v in lead {
            w.write_f32::<LE>(v as f32)?;
        }
    }
    Ok(())
}

pub fn read_esig<R: Read>(mut r: R) -> Result<SignalData> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RECORD_MAGIC {
        return Err(Error::format("not an ESIG record (bad magic)"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported ESIG version {version}")));
    }
    let n_leads = r.read_u32::<LE>()? as usize;
    let n_samples = r.read_u64::<LE>()? as usize;
    let sampling_rate_hz = r.read_f64::<LE>()?;
    if n_leads == 0 || n_samples == 0 {
        return Err(Error::format("ESIG record is empty"));
    }
    let mut leads = Vec::with_capacity(n_leads);
    for _ in 0..n_leads {
        let mut lead = vec![0f32; n_samples];
        r.read_f32_into::<LE>(&mut lead)?;
        leads.push(lead.into_iter().map(f64::from).collect());
    }
    Ok(SignalData {
        leads,
        sampling_rate_hz,
    })
}

/// Reads a CSV with one row per sample and one column per lead, with a
/// header row of lead names.
pub fn read_signal_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::format("signal CSV has no lead columns"));
    }
    let mut leads = vec![Vec::new(); names.len()];
    for (row_idx, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != names.len() {
            return Err(Error::format(format!(
                "signal CSV row {} has {} fields, expected {}",
                row_idx + 1,
                row.len(),
                names.len()
            )));
        }
        for (lead, field) in leads.iter_mut().zip(row.iter()) {
            let v: f64 = field.parse().map_err(|_| {
                Error::format(format!("bad sample '{field}' in row {}", row_idx + 1))
            })?;
            lead.push(v);
        }
    }
    Ok((names, leads))
}

pub fn write_signal_csv<W: Write>(w: W, names: &[String], leads: &[Vec<f64>]) -> Result<()> {
    if names.len() != leads.len() {
        return Err(Error::shape("one name per lead required"));
    }
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(names)?;
    let n = leads.first().map_or(0, Vec::len);
    for t in 0..n {
        wtr.write_record(leads.iter().map(|l| l[t].to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `record_id,labels` rows. Label fields hold `;`-separated class
/// names; an empty field means no listed condition.
pub fn read_labels_csv<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::format("labels CSV rows must be record_id,labels"));
        }
        let names = row[1]
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if out.insert(row[0].to_string(), names).is_some() {
            return Err(Error::format(format!(
                "duplicate record id '{}' in labels",
                &row[0]
            )));
        }
    }
    Ok(out)
}

pub fn write_labels_csv<W: Write>(w: W, labels: &[(String, LabelSet)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["record_id", "labels"])?;
    for (id, set) in labels {
        wtr.write_record([id.as_str(), &set.present().collect::<Vec<_>>().join(";")])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexRow {
    record_id: String,
    subject_id: String,
    file: String,
}

/// Writes records as `records/<id>.esig` plus index, labels and classes.
/// Record ids are `r00000`, `r00001`, ... in input order.
pub fn write_dataset_dir(dir: &Path, records: &[EcgRecord]) -> Result<()> {
    let classes = records
        .first()
        .map(|r| r.labels.classes.clone())
        .unwrap_or_default();
    if records.iter().any(|r| r.labels.classes != classes) {
        return Err(Error::invalid("records disagree on the class list"));
    }
    fs::create_dir_all(dir.join("records"))?;
    let mut index = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("index.csv"))?));
    let mut labels = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let id = format!("r{i:05}");
        let file = format!("records/{id}.esig");
        write_esig(
            BufWriter::new(File::create(dir.join(&file))?),
            &rec.leads,
            rec.sampling_rate_hz,
        )?;
        index.serialize(IndexRow {
            record_id: id.clone(),
            subject_id: rec.subject_id.clone(),
            file,
        })?;
        labels.push((id, rec.labels.clone()));
    }
    index.flush()?;
    write_labels_csv(
        BufWriter::new(File::create(dir.join("labels.csv"))?),
        &labels,
    )?;
    let mut cls = String::new();
    for c in &classes {
        cls.push_str(c);
        cls.push('\n');
    }
    fs::write(dir.join("classes.txt"), cls)?;
    Ok(())
}

/// Reads a dataset directory. Record files ending in `.csv` are read as
/// signal CSVs at `csv_rate_hz`; everything else as `.esig`.
pub fn read_dataset_dir(dir: &Path, csv_rate_hz: Option<f64>) -> Result<Vec<EcgRecord>> {
    let classes: Vec<String> = fs::read_to_string(dir.join("classes.txt"))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let labels = read_labels_csv(BufReader::new(File::open(dir.join("labels.csv"))?))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(dir.join("index.csv"))?));
    let mut records = Vec::new();
    for row in rdr.deserialize() {
        let row: IndexRow = row?;
        let names = labels.get(&row.record_id).ok_or_else(|| {
            Error::format(format!("record '{}' has no labels row", row.record_id))
        })?;
        let label_set = LabelSet::from_names(&classes, names)?;
        let path = dir.join(&row.file);
        let signal = if row.file.ends_with(".csv") {
            let rate = csv_rate_hz.ok_or_else(|| {
                Error::invalid(format!(
                    "CSV record '{}' needs a sampling rate",
                    row.record_id
                ))
            })?;
            let (_, leads) = read_signal_csv(BufReader::new(File::open(&path)?))?;
            SignalData {
                leads,
                sampling_rate_hz: rate,
            }
        } else {
            read_esig(BufReader::new(File::open(&path)?))?
        };
        records.push(EcgRecord::new(
            row.subject_id,
            signal.leads,
            signal.sampling_rate_hz,
            label_set,
        )?);
    }
    if records.is_empty() {
        return Err(Error::format(format!(
            "dataset '{}' has no records",
            dir.display()
        )));
    }
    Ok(records)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LE>()?;
    if len > MAX_STRING {
        return Err(Error::format(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::format("string is not UTF-8"))
}

/// Writes windows that share lead count, length and class list.
pub fn write_windows<W: Write>(mut w: W, windows: &[Window]) -> Result<()> {
    let (n_leads, len, classes) = match windows.first() {
        Some(first) => (first.n_leads(), first.len(), first.labels.classes.clone()),
        None => (0, 0, Vec::new()),
    };
    for win in windows {
        if win.n_leads() != n_leads || win.data.iter().any(|l| l.len() != len) {
            return Err(Error::shape("windows differ in lead count or length"));
        }
        if win.labels.classes != classes {
            return Err(Error::invalid("windows disagree on the class list"));
        }
    }
    w.write_all(WINDOW_MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    for v in [windows.len(), n_leads, len, classes.len()] {
        w.write_u32::<LE>(v as u32)?;
    }
    for c in &classes {
        write_str(&mut w, c)?;
    }
    for win in windows {
        write_str(&mut w, &win.source_subject)?;
        w.write_all(&win.labels.indicator)?;
        for lead in &win.data {
            for &v in lead {
                w.write_f32::<LE>(v as f32)?;
            }
        }
    }
    Ok(())
}

pub fn read_windows<R: Read>(mut r: R) -> Result<Vec<Window>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WINDOW_MAGIC {
        return Err(Error::format("not an EWIN window file (bad magic)"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported EWIN version {version}")));
    }
    let n = r.read_u32::<LE>()? as usize;
    let n_leads = r.read_u32::<LE>()? as usize;
    let len = r.read_u32::<LE>()? as usize;
    let n_classes = r.read_u32::<LE>()? as usize;
    let classes = (0..n_classes)
        .map(|_| read_str(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut buf = vec![0f32; len];
    for _ in 0..n {
        let subject = read_str(&mut r)?;
        let mut indicator = vec![0u8; n_classes];
        r.read_exact(&mut indicator)?;
        let labels = LabelSet::new(classes.clone(), indicator)?;
        let mut data = Vec::with_capacity(n_leads);
        for _ in 0..n_leads {
            r.read_f32_into::<LE>(&mut buf)?;
            let lead: Vec<f64> = buf.iter().map(|&v| f64::from(v)).collect();
            if lead.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("window of subject '{subject}'")));
            }
            data.push(lead);
        }
        out.push(Window {
            data,
            source_subject: subject,
            labels,
        });
    }
    Ok(out)
}

pub fn save_windows(path: &Path, windows: &[Window]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_windows(&mut w, windows)?;
    w.flush()?;
    Ok(())
}

pub fn load_windows(path: &Path) -> Result<Vec<Window>> {
    read_windows(BufReader::new(File::open(path)?))
}
