//! Functions on the torus `[0,1)^d`: built-in closed forms and tabulated grids.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use crate::error::{MfcError, Result};
use crate::grid::TorusGrid;

/// A scalar function on the unit torus.
///
/// Multi-dimensional built-ins average the one-dimensional profile over the
/// coordinates, so `cos2pi(a,b,k)` in `d = 2` is
/// `a + b·(cos 2πk x₁ + cos 2πk x₂)/2`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialFn {
    Zero,
    Const(f64),
    /// `a + b·cos(2πk x)`
    Cos2Pi { a: f64, b: f64, k: u32 },
    /// `a·sin²(2πk x)`
    Sin2 { a: f64, k: u32 },
    /// Nodal values on a periodic grid, multilinearly interpolated.
    Tabulated { d: usize, nx: usize, values: Vec<f64> },
}

fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl SpatialFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SpatialFn::Zero => 0.0,
            SpatialFn::Const(v) => *v,
            SpatialFn::Cos2Pi { a, b, k } => {
                let kk = *k as f64;
                let s: f64 = x.iter().map(|xi| (2.0 * PI * kk * xi).cos()).sum();
                a + b * s / x.len() as f64
            }
            SpatialFn::Sin2 { a, k } => {
                let kk = *k as f64;
                let s: f64 = x.iter().map(|xi| (2.0 * PI * kk * xi).sin().powi(2)).sum();
                a * s / x.len() as f64
            }
            SpatialFn::Tabulated { d, nx, values } => interpolate(*d, *nx, values, x),
        }
    }

    /// Samples the function at every spatial node of `grid`.
    pub fn sample(&self, grid: &TorusGrid) -> Vec<f64> {
        (0..grid.n_space()).map(|i| self.eval(&grid.node(i))).collect()
    }

    /// Parses a spec string: `zero`, `const(v)`, `cos2pi(a,b[,k])`,
    /// `sin2(a[,k])` or `file:<path>` (a spatial field file).
    pub fn parse(spec: &str) -> Result<SpatialFn> {
        let s = spec.trim();
        if s == "zero" {
            return Ok(SpatialFn::Zero);
        }
        if let Some(path) = s.strip_prefix("file:") {
            let field = crate::io::read_field(Path::new(path.trim()))?;
            if field.slices != 1 {
                return Err(MfcError::Format(format!("{path}: expected a spatial field, found {} slices", field.slices)));
            }
            return Ok(SpatialFn::Tabulated { d: field.header.d, nx: field.header.nx, values: field.values });
        }
        let (name, args) = match (s.find('('), s.ends_with(')')) {
            (Some(open), true) => (&s[..open], &s[open + 1..s.len() - 1]),
            _ => return Err(MfcError::InvalidArgument(format!("unrecognised function spec `{spec}`"))),
        };
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| MfcError::InvalidArgument(format!("`{spec}`: {e}")))?;
        let freq = |v: Option<&f64>| -> Result<u32> {
            match v {
                None => Ok(1),
                Some(k) if *k >= 1.0 && k.fract() == 0.0 => Ok(*k as u32),
                Some(k) => Err(MfcError::InvalidArgument(format!("`{spec}`: frequency {k} must be a positive integer"))),
            }
        };
        match (name.trim(), nums.len()) {
            ("const", 1) => Ok(SpatialFn::Const(nums[0])),
            ("cos2pi", 2 | 3) => Ok(SpatialFn::Cos2Pi { a: nums[0], b: nums[1], k: freq(nums.get(2))? }),
            ("sin2", 1 | 2) => Ok(SpatialFn::Sin2 { a: nums[0], k: freq(nums.get(1))? }),
            _ => Err(MfcError::InvalidArgument(format!("unrecognised function spec `{spec}`"))),
        }
    }
}

impl fmt::Display for SpatialFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialFn::Zero => write!(f, "zero"),
            SpatialFn::Const(v) => write!(f, "const({v:?})"),
            SpatialFn::Cos2Pi { a, b, k } => write!(f, "cos2pi({a:?},{b:?},{k})"),
            SpatialFn::Sin2 { a, k } => write!(f, "sin2({a:?},{k})"),
            SpatialFn::Tabulated { d, nx, .. } => write!(f, "tabulated(d={d},nx={nx})"),
        }
    }
}

fn interpolate(d: usize, nx: usize, values: &[f64], x: &[f64]) -> f64 {
    let mut base = [0usize; 2];
    let mut frac = [0.0f64; 2];
    for i in 0..d {
        let s = wrap(x[i]) * nx as f64;
        let b = s.floor();
        base[i] = (b as usize) % nx;
        frac[i] = s - b;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = 0;
        let mut stride = 1;
        for i in 0..d {
            let up = (corner >> i) & 1;
            w *= if up == 1 { frac[i] } else { 1.0 - frac[i] };
            idx += ((base[i] + up) % nx) * stride;
            stride *= nx;
        }
        acc += w * values[idx];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_builtins() {
        assert_eq!(SpatialFn::parse("zero").unwrap(), SpatialFn::Zero);
        assert_eq!(SpatialFn::parse("const(2.5)").unwrap(), SpatialFn::Const(2.5));
        assert_eq!(SpatialFn::parse("cos2pi(1, 0.5)").unwrap(), SpatialFn::Cos2Pi { a: 1.0, b: 0.5, k: 1 });
        assert_eq!(SpatialFn::parse("sin2(1,2)").unwrap(), SpatialFn::Sin2 { a: 1.0, k: 2 });
        assert!(SpatialFn::parse("cos2pi(1)").is_err());
        assert!(SpatialFn::parse("sin2(1,0.5)").is_err());
        assert!(SpatialFn::parse("bogus").is_err());
    }

    #[test]
    fn display_round_trips() {
        for f in [SpatialFn::Zero, SpatialFn::Const(0.25), SpatialFn::Cos2Pi { a: 0.5, b: -0.5, k: 1 }, SpatialFn::Sin2 { a: 1.0, k: 3 }] {
            assert_eq!(SpatialFn::parse(&f.to_string()).unwrap(), f);
        }
    }

    #[test]
    fn tabulated_reproduces_nodes_and_wraps() {
        let nx = 8;
        let values: Vec<f64> = (0..nx).map(|i| i as f64).collect();
        let f = SpatialFn::Tabulated { d: 1, nx, values };
        assert_eq!(f.eval(&[3.0 / 8.0]), 3.0);
        assert!((f.eval(&[7.5 / 8.0]) - 3.5).abs() < 1e-14);
        assert_eq!(f.eval(&[1.0 + 2.0 / 8.0]), 2.0);
    }
}
