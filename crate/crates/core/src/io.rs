//! Field file format and CSV export.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `MFCFIELD` |
//! | 4     | format version (`1`) |
//! | 4×3   | `d`, `nx`, `nt` (u32) |
//! | 8     | horizon `T` (f64) |
//! | 4     | staggering: 0 node-time, 1 cell-time, 2 spatial |
//! | 4     | component count (1 for scalars, `d` for vector fields) |
//! | 8·len | values, slice-major, spatial index with `x₁` fastest, components innermost |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MfcError, Result};
use crate::grid::{SpaceTimeField, Staggering, TorusGrid, VectorField};

pub const MAGIC: &[u8; 8] = b"MFCFIELD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldHeader {
    pub d: usize,
    pub nx: usize,
    pub nt: usize,
    pub t_final: f64,
    pub staggering: Staggering,
    pub components: usize,
}

/// A decoded field file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub header: FieldHeader,
    pub slices: usize,
    pub values: Vec<f64>,
}

fn stagger_code(s: Staggering) -> u32 {
    match s {
        Staggering::NodeTime => 0,
        Staggering::CellTime => 1,
        Staggering::Spatial => 2,
    }
}

fn write_raw(path: &Path, header: &FieldHeader, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [VERSION, header.d as u32, header.nx as u32, header.nt as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&header.t_final.to_le_bytes())?;
    w.write_all(&stagger_code(header.staggering).to_le_bytes())?;
    w.write_all(&(header.components as u32).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn header_for(grid: &TorusGrid, staggering: Staggering, components: usize) -> FieldHeader {
    FieldHeader { d: grid.d(), nx: grid.nx(), nt: grid.nt(), t_final: grid.t_final(), staggering, components }
}

pub fn write_scalar(path: &Path, field: &SpaceTimeField) -> Result<()> {
    write_raw(path, &header_for(field.grid(), field.staggering(), 1), field.values())
}

pub fn write_vector(path: &Path, field: &VectorField) -> Result<()> {
    let g = field.grid();
    write_raw(path, &header_for(g, Staggering::CellTime, g.d()), field.values())
}

pub fn write_spatial(path: &Path, grid: &TorusGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.n_space() {
        return Err(MfcError::GridMismatch(format!("spatial field needs {} values", grid.n_space())));
    }
    write_raw(path, &header_for(grid, Staggering::Spatial, 1), values)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_field(path: &Path) -> Result<FieldFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(MfcError::Format(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(MfcError::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let d = read_u32(&mut r)? as usize;
    let nx = read_u32(&mut r)? as usize;
    let nt = read_u32(&mut r)? as usize;
    let mut tb = [0u8; 8];
    r.read_exact(&mut tb)?;
    let t_final = f64::from_le_bytes(tb);
    let staggering = match read_u32(&mut r)? {
        0 => Staggering::NodeTime,
        1 => Staggering::CellTime,
        2 => Staggering::Spatial,
        other => return Err(MfcError::Format(format!("{}: staggering code {other}", path.display()))),
    };
    let components = read_u32(&mut r)? as usize;
    if !(1..=2).contains(&d) || components == 0 || components > d {
        return Err(MfcError::Format(format!("{}: inconsistent header d={d} components={components}", path.display())));
    }
    let slices = match staggering {
        Staggering::NodeTime => nt + 1,
        Staggering::CellTime => nt,
        Staggering::Spatial => 1,
    };
    let len = slices * nx.pow(d as u32) * components;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(MfcError::Format(format!(
            "{}: expected {} payload bytes, found {}",
            path.display(),
            len * 8,
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FieldFile { header: FieldHeader { d, nx, nt, t_final, staggering, components }, slices, values })
}

impl FieldFile {
    fn check_grid(&self, grid: &TorusGrid) -> Result<()> {
        let h = &self.header;
        let same = h.d == grid.d()
            && h.nx == grid.nx()
            && (h.staggering == Staggering::Spatial || (h.nt == grid.nt() && h.t_final == grid.t_final()));
        if same {
            Ok(())
        } else {
            Err(MfcError::GridMismatch(format!("file header {h:?} does not match {grid:?}")))
        }
    }

    pub fn into_scalar(self, grid: TorusGrid) -> Result<SpaceTimeField> {
        self.check_grid(&grid)?;
        if self.header.components != 1 {
            return Err(MfcError::Format("expected a scalar field".into()));
        }
        SpaceTimeField::from_values(grid, self.header.staggering, self.values)
    }

    pub fn into_vector(self, grid: TorusGrid) -> Result<VectorField> {
        self.check_grid(&grid)?;
        if self.header.components != grid.d() || self.header.staggering != Staggering::CellTime {
            return Err(MfcError::Format("expected a cell-time vector field".into()));
        }
        VectorField::from_values(grid, self.values)
    }

    pub fn into_spatial(self, grid: &TorusGrid) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        if self.header.staggering != Staggering::Spatial || self.header.components != 1 {
            return Err(MfcError::Format("expected a spatial scalar field".into()));
        }
        Ok(self.values)
    }
}

fn slice_time(grid: &TorusGrid, staggering: Staggering, k: usize) -> f64 {
    match staggering {
        Staggering::NodeTime => grid.node_time(k),
        Staggering::CellTime => grid.cell_time(k),
        Staggering::Spatial => 0.0,
    }
}

fn write_csv_rows(
    path: &Path,
    grid: &TorusGrid,
    staggering: Staggering,
    slices: usize,
    comps: usize,
    values: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut head = String::from("t");
    for i in 0..grid.d() {
        head.push_str(&format!(",x{}", i + 1));
    }
    if comps == 1 {
        head.push_str(",value");
    } else {
        for c in 0..comps {
            head.push_str(&format!(",v{}", c + 1));
        }
    }
    writeln!(w, "{head}")?;
    let n = grid.n_space();
    for k in 0..slices {
        let t = slice_time(grid, staggering, k);
        for s in 0..n {
            let mut row = format!("{t:?}");
            for x in grid.node(s) {
                row.push_str(&format!(",{x:?}"));
            }
            for c in 0..comps {
                row.push_str(&format!(",{:?}", values[(k * n + s) * comps + c]));
            }
            writeln!(w, "{row}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV export `t, x1[, x2], value` for plotting.
pub fn write_scalar_csv(path: &Path, field: &SpaceTimeField) -> Result<()> {
    write_csv_rows(path, field.grid(), field.staggering(), field.slices(), 1, field.values())
}

pub fn write_vector_csv(path: &Path, field: &VectorField) -> Result<()> {
    let g = field.grid();
    write_csv_rows(path, g, Staggering::CellTime, g.nt(), g.d(), field.values())
}
