//! Dataset files.
//!
//! Binary layout (little-endian), version 1:
//!
//! ```text
//! magic "SHDS" | u32 version
//! u32 dim | u32 N | u32 flags (bit 0: labeled)
//! N × (u64 id | u32 label, 0 = none | u32 n | n·dim f32)
//! ```
//!
//! CSV input has one row per point, `set_id,label,f1,...,fd`, with an
//! optional header row. An empty label means unlabeled. Rows of one set
//! need not be contiguous; sets keep the order of their first row.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::codec::{self, Decoder, Encoder};
use crate::data::{Label, PointSet, SetDataset, SetId};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SHDS";
pub const VERSION: u32 = 1;
const KIND: &str = "dataset";
const FLAG_LABELED: u32 = 1;

pub fn is_dataset_file(prefix: &[u8]) -> bool {
    prefix.starts_with(MAGIC)
}

/// Writes the binary format. Coordinates are stored as f32.
pub fn write_dataset<W: Write>(data: &SetDataset, mut w: W) -> Result<()> {
    codec::write_header(&mut w, MAGIC, VERSION)?;
    let mut e = Encoder::new(w);
    let n32 = |n: usize, what: &str| u32::try_from(n).map_err(|_| Error::invalid(format!("too many {what}")));
    e.u32(n32(data.dim(), "dimensions")?)?;
    e.u32(n32(data.len(), "sets")?)?;
    e.u32(if data.is_fully_labeled() { FLAG_LABELED } else { 0 })?;
    for s in data.sets() {
        e.u64(s.id().0)?;
        e.u32(s.label().unwrap_or(0))?;
        e.u32(n32(s.len(), "points")?)?;
        for &v in s.values() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::invalid(format!("set {} has a value outside f32 range", s.id())));
            }
            e.f32(f)?;
        }
    }
    e.into_inner().flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<SetDataset> {
    codec::read_header(&mut r, KIND, MAGIC, VERSION)?;
    let mut d = Decoder::new(r, KIND);
    let dim = d.u32()? as usize;
    let n = d.u32()? as usize;
    let flags = d.u32()?;
    if dim == 0 {
        return Err(Error::format(KIND, "dimension 0"));
    }
    let mut sets = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let id = SetId(d.u64()?);
        let label = d.u32()?;
        if flags & FLAG_LABELED != 0 && label == 0 {
            return Err(Error::format(KIND, format!("set {id} lacks a label in a labeled file")));
        }
        let count = d.u32()? as usize;
        let values = d.f32s(count * dim)?.into_iter().map(f64::from).collect();
        sets.push(
            PointSet::new(id, dim, values, (label != 0).then_some(label))
                .map_err(|e| Error::format(KIND, e.to_string()))?,
        );
    }
    d.finish()?;
    SetDataset::new(sets)
}

/// Reads `set_id,label,f1..fd` rows.
pub fn read_csv<R: Read>(r: R) -> Result<SetDataset> {
    let bad = |line: u64, why: String| Error::format("csv", format!("line {line}: {why}"));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut order: Vec<SetId> = Vec::new();
    let mut rows: HashMap<SetId, (Option<Label>, Vec<f64>)> = HashMap::new();
    let mut dim = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("csv", e.to_string()))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.len() < 3 {
            return Err(bad(line, "need set_id, label and at least one feature".into()));
        }
        let Ok(id) = rec[0].parse::<u64>() else {
            if i == 0 {
                continue; // header row
            }
            return Err(bad(line, format!("bad set id {:?}", &rec[0])));
        };
        let id = SetId(id);
        let label = match &rec[1] {
            "" => None,
            s => match s.parse::<Label>() {
                Ok(0) | Err(_) => return Err(bad(line, format!("bad label {s:?}, labels are integers >= 1"))),
                Ok(l) => Some(l),
            },
        };
        let d = rec.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::DimensionMismatch { expected, found: d });
            }
            _ => {}
        }
        let entry = rows.entry(id).or_insert_with(|| {
            order.push(id);
            (label, Vec::new())
        });
        if entry.0 != label {
            return Err(bad(line, format!("set {id} has conflicting labels")));
        }
        for f in rec.iter().skip(2) {
            entry
                .1
                .push(f.parse::<f64>().map_err(|_| bad(line, format!("bad feature {f:?}")))?);
        }
    }
    let dim = dim.ok_or_else(|| Error::format("csv", "no data rows"))?;
    let sets = order
        .into_iter()
        .map(|id| {
            let (label, values) = rows.remove(&id).expect("recorded id");
            PointSet::new(id, dim, values, label)
        })
        .collect::<Result<Vec<_>>>()?;
    SetDataset::new(sets)
}

pub fn write_csv<W: Write>(data: &SetDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["set_id".to_string(), "label".to_string()];
    header.extend((1..=data.dim()).map(|i| format!("f{i}")));
    out.write_record(&header).map_err(map)?;
    for s in data.sets() {
        for p in s.points() {
            let mut rec = vec![s.id().0.to_string(), s.label().map_or(String::new(), |l| l.to_string())];
            rec.extend(p.iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(map)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Loads a dataset file, choosing binary or CSV by its leading bytes.
pub fn load_dataset(path: &Path) -> Result<SetDataset> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if is_dataset_file(&bytes) {
        read_dataset(&bytes[..])
    } else {
        read_csv(&bytes[..])
    }
}

pub fn save_dataset(data: &SetDataset, path: &Path) -> Result<()> {
    write_dataset(data, BufWriter::new(File::create(path)?))
}
