//! Field files.
//!
//! Binary layout, all little-endian `f64`: `d`, `n_1..n_d`, `lo_1, hi_1, .., lo_d, hi_d`,
//! then the nodal values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::{DiscretizeError, Grid, ScalarField};

pub fn write_field_binary(field: &ScalarField, path: &Path) -> Result<(), DiscretizeError> {
    let g = &field.grid;
    let mut header = vec![g.dim() as f64];
    header.extend(g.n().iter().map(|&n| n as f64));
    for k in 0..g.dim() {
        header.push(g.lo()[k]);
        header.push(g.hi()[k]);
    }
    let mut buf = Vec::with_capacity(8 * (header.len() + field.values.len()));
    for v in header.iter().chain(&field.values) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a field; the core fraction is not stored and is set to `core_fraction`.
pub fn read_field_binary(path: &Path, core_fraction: f64) -> Result<ScalarField, DiscretizeError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(DiscretizeError::Format("length is not a multiple of 8".into()));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let short = || DiscretizeError::Format("truncated header".into());
    let d = *vals.first().ok_or_else(short)? as usize;
    if vals.len() < 1 + 3 * d {
        return Err(short());
    }
    let n: Vec<usize> = vals[1..1 + d].iter().map(|&v| v as usize).collect();
    let bounds: Vec<(f64, f64)> = (0..d).map(|k| (vals[1 + d + 2 * k], vals[2 + d + 2 * k])).collect();
    let grid = Grid::new(&bounds, &n, core_fraction)?;
    let payload = vals[1 + 3 * d..].to_vec();
    ScalarField::new(grid, payload)
}

/// One row per node: coordinates then value.
pub fn write_field_csv(field: &ScalarField, path: &Path) -> Result<(), DiscretizeError> {
    let g = &field.grid;
    let d = g.dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.push("value".into());
    w.write_record(&header)?;
    for (i, v) in field.values.iter().enumerate() {
        let x = g.coord(i);
        let mut row: Vec<String> = x[..d].iter().map(|c| c.to_string()).collect();
        row.push(v.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(&[(-1.0, 2.0), (0.0, 1.0)], &[5, 6], 0.5).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0].sin() + x[1] * 1e-300);
        let p = dir.path().join("v.bin");
        write_field_binary(&f, &p).unwrap();
        let back = read_field_binary(&p, 0.5).unwrap();
        assert_eq!(back, f);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 8 * (1 + 2 + 4 + 30));
        assert_eq!(f64::from_le_bytes(bytes[..8].try_into().unwrap()), 2.0);
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(&[(0.0, 1.0)], &[5], 1.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| 2.0 * x[0]);
        let p = dir.path().join("v.csv");
        write_field_csv(&f, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,value");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[5], "1,2");
    }
}
