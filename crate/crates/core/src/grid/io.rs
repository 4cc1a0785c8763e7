//! Field serialization: a single-line JSON header followed by little-endian
//! f64 node values, plus CSV export of low-dimensional slices.

use super::{DomainGrid, GridField, MaskKind};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldHeader {
    pub dims: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
    pub spacing: Vec<f64>,
    pub mask: MaskKind,
    pub count: usize,
}

impl FieldHeader {
    pub fn for_grid(grid: &DomainGrid) -> Self {
        Self {
            dims: grid.dims.clone(),
            bounds: grid.bounds.clone(),
            spacing: grid.spacing.clone(),
            mask: grid.mask,
            count: grid.node_count(),
        }
    }
}

pub fn write_field(path: &Path, grid: &DomainGrid, field: &GridField) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = FieldHeader::for_grid(grid);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field(path: &Path, grid: &DomainGrid) -> Result<GridField> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header_line = String::new();
    r.read_line(&mut header_line)?;
    let header: FieldHeader = serde_json::from_str(header_line.trim_end())?;
    let expected = FieldHeader::for_grid(grid);
    if header != expected {
        return Err(Error::InvalidInput(
            "field header does not match the grid".into(),
        ));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * header.count {
        return Err(Error::InvalidInput(format!(
            "field payload has {} bytes, expected {}",
            bytes.len(),
            8 * header.count
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(GridField { values })
}

/// CSV body of a 1-D slice along `axis` through the multi-index `through`.
pub fn csv_slice_1d(grid: &DomainGrid, field: &GridField, axis: usize, through: &[usize]) -> String {
    let mut out = String::from("x,value\n");
    let mut idx = through.to_vec();
    for i in 0..grid.dims[axis] {
        idx[axis] = i;
        let flat = grid.flat_index(&idx);
        let x = grid.bounds[axis].0 + i as f64 * grid.spacing[axis];
        out.push_str(&format!("{x},{}\n", field.get(flat)));
    }
    out
}

/// CSV body of a 2-D slice in the (axis_a, axis_b) plane through `through`.
pub fn csv_slice_2d(
    grid: &DomainGrid,
    field: &GridField,
    axis_a: usize,
    axis_b: usize,
    through: &[usize],
) -> String {
    let mut out = String::from("x,y,value\n");
    let mut idx = through.to_vec();
    for i in 0..grid.dims[axis_a] {
        for j in 0..grid.dims[axis_b] {
            idx[axis_a] = i;
            idx[axis_b] = j;
            let flat = grid.flat_index(&idx);
            let x = grid.bounds[axis_a].0 + i as f64 * grid.spacing[axis_a];
            let y = grid.bounds[axis_b].0 + j as f64 * grid.spacing[axis_b];
            out.push_str(&format!("{x},{y},{}\n", field.get(flat)));
        }
    }
    out
}
