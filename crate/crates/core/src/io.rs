//! CSV input for curves and responses, and atomic file output.
//!
//! Curves use a wide layout: a header `t,<t_1>,...,<t_T>` followed by rows
//! `curve_id,predictor_id,v_1,...,v_T`. Predictor ids are zero-based and
//! must be contiguous. Responses are `curve_id,y`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::{CurveSet, FunctionalDataset, TimeGrid};
use crate::error::{FarError, Result};

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| FarError::InvalidInput(format!("cannot parse {what} value {field:?}")))?;
    if !v.is_finite() {
        return Err(FarError::NonFinite(format!("{what} value {field:?}")));
    }
    Ok(v)
}

/// Curves together with their ids in row order.
#[derive(Debug, Clone)]
pub struct CurveTable {
    pub curve_ids: Vec<String>,
    pub curves: CurveSet,
}

pub fn read_curves<R: Read>(reader: R) -> Result<CurveTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| FarError::InvalidInput("curve file is empty".into()))??;
    if header.get(0) != Some("t") {
        return Err(FarError::InvalidInput("curve file header must start with `t`".into()));
    }
    let points = header
        .iter()
        .skip(1)
        .map(|f| parse_f64(f, "grid"))
        .collect::<Result<Vec<_>>>()?;
    let grid = TimeGrid::new(points)?;
    let t = grid.len();

    let mut ids: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (line, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != t + 2 {
            return Err(FarError::GridMismatch(format!(
                "row {} has {} values, grid has {}",
                line + 2,
                rec.len().saturating_sub(2),
                t
            )));
        }
        let id = rec[0].to_string();
        let j: usize = rec[1]
            .parse()
            .map_err(|_| FarError::InvalidInput(format!("bad predictor id {:?} on row {}", &rec[1], line + 2)))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|f| parse_f64(f, "curve"))
            .collect::<Result<Vec<_>>>()?;
        let next = ids.len();
        let i = *index.entry(id.clone()).or_insert_with(|| {
            ids.push(id.clone());
            next
        });
        if rows.entry(j).or_default().insert(i, values).is_some() {
            return Err(FarError::InvalidInput(format!("duplicate row for curve {id:?}, predictor {j}")));
        }
    }
    if ids.is_empty() {
        return Err(FarError::InvalidInput("curve file has no data rows".into()));
    }
    let p = rows.keys().next_back().map_or(0, |m| m + 1);
    let mut curves = Vec::with_capacity(p);
    for j in 0..p {
        let block = rows
            .get(&j)
            .ok_or_else(|| FarError::InvalidInput(format!("predictor {j} has no curves")))?;
        let mut m = DMatrix::zeros(ids.len(), t);
        for (i, id) in ids.iter().enumerate() {
            let v = block
                .get(&i)
                .ok_or_else(|| FarError::InvalidInput(format!("curve {id:?} is missing predictor {j}")))?;
            m.row_mut(i).copy_from_slice(v);
        }
        curves.push(m);
    }
    Ok(CurveTable {
        curve_ids: ids,
        curves: CurveSet::new(grid, curves)?,
    })
}

pub fn read_curves_path(path: &Path) -> Result<CurveTable> {
    read_curves(std::fs::File::open(path)?)
}

/// Reads `curve_id,y` and orders the responses like `ids`.
pub fn read_responses<R: Read>(reader: R, ids: &[String]) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut map = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(FarError::InvalidInput("response rows need `curve_id,y`".into()));
        }
        map.insert(rec[0].to_string(), parse_f64(&rec[1], "response")?);
    }
    let missing: Vec<&str> = ids.iter().filter(|id| !map.contains_key(*id)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(FarError::InvalidInput(format!("no response for curve ids {missing:?}")));
    }
    Ok(ids.iter().map(|id| map[id]).collect())
}

pub fn read_dataset(curves: &Path, responses: &Path) -> Result<(Vec<String>, FunctionalDataset)> {
    let table = read_curves_path(curves)?;
    let y = read_responses(std::fs::File::open(responses)?, &table.curve_ids)?;
    Ok((table.curve_ids, FunctionalDataset::new(table.curves, &y)?))
}

/// Writes curves in the wide layout with ids `0..n`.
pub fn write_curves<W: Write>(writer: W, curves: &CurveSet) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(curves.grid().points().iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for (j, m) in curves.curves().iter().enumerate() {
        for i in 0..m.nrows() {
            let mut row = vec![i.to_string(), j.to_string()];
            row.extend(m.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_responses<W: Write>(writer: W, y: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["curve_id", "y"])?;
    for (i, v) in y.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| FarError::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}
