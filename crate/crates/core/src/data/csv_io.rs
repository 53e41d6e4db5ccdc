//! Patch CSV: header `f000,…,f125,label`, features as shortest round-trip
//! decimals in `[0, 1]`, label `0` (healthy) or `1` (affected).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Label, Patch, PatchDataset, PATCH_FEATURES};

fn header() -> Vec<String> {
    (0..PATCH_FEATURES)
        .map(|i| format!("f{i:03}"))
        .chain(std::iter::once("label".to_string()))
        .collect()
}

pub fn write_patch_csv<W: Write>(writer: W, dataset: &PatchDataset) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header())?;
    let mut row = Vec::with_capacity(PATCH_FEATURES + 1);
    for patch in &dataset.patches {
        row.clear();
        row.extend(patch.features().iter().map(|v| v.to_string()));
        row.push(patch.label.code().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_patch_csv<R: Read>(reader: R, id: &str) -> Result<PatchDataset, DataError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = r.records();
    let head = match records.next() {
        Some(rec) => rec?,
        None => return Err(DataError::MissingHeader),
    };
    if head.iter().ne(header().iter().map(String::as_str)) {
        return Err(DataError::MissingHeader);
    }
    let mut patches = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec?;
        let malformed = |reason: String| DataError::MalformedRow { row, reason };
        if rec.len() != PATCH_FEATURES + 1 {
            return Err(malformed(format!(
                "expected {} columns, found {}",
                PATCH_FEATURES + 1,
                rec.len()
            )));
        }
        let mut features = Vec::with_capacity(PATCH_FEATURES);
        for (col, field) in rec.iter().take(PATCH_FEATURES).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(format!("column {col}: not a number: {field:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(malformed(format!("column {col}: {v} outside [0, 1]")));
            }
            features.push(v);
        }
        let label_field = rec[PATCH_FEATURES].trim();
        let label = label_field
            .parse::<u8>()
            .ok()
            .and_then(Label::from_code)
            .ok_or_else(|| malformed(format!("label must be 0 or 1, got {label_field:?}")))?;
        patches.push(Patch::new(features, label)?);
    }
    Ok(PatchDataset::new(id, patches))
}

pub fn write_patch_file(path: impl AsRef<Path>, dataset: &PatchDataset) -> Result<(), DataError> {
    let file = File::create(path)?;
    write_patch_csv(BufWriter::new(file), dataset)
}

/// Reads a patch CSV; the dataset id is the file stem.
pub fn read_patch_file(path: impl AsRef<Path>) -> Result<PatchDataset, DataError> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_patch_csv(BufReader::new(File::open(path)?), &id)
}
