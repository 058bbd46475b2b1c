//! Complex refractive index `n(λ) + jκ(λ)` of the layer material.
//!
//! Dispersion tables are plain text, one `λ/λ_m  n  κ` record per line,
//! `#` starting a comment line.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Refractive index of the dispersion-free reference material.
pub const DISPERSION_FREE_INDEX: f64 = 1.72;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispersionNode {
    pub wavelength: f64,
    pub n: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Material {
    Constant { n: f64, kappa: f64 },
    Tabulated { nodes: Vec<DispersionNode> },
}

impl Material {
    /// Lossless material with `n = 1.72` at every wavelength.
    pub fn dispersion_free() -> Self {
        Material::Constant {
            n: DISPERSION_FREE_INDEX,
            kappa: 0.0,
        }
    }

    pub fn constant(n: f64, kappa: f64) -> Result<Self> {
        check_node(n, kappa)?;
        Ok(Material::Constant { n, kappa })
    }

    pub fn tabulated(nodes: Vec<DispersionNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Parameter("dispersion table has no entries".into()));
        }
        for node in &nodes {
            if !(node.wavelength > 0.0) || !node.wavelength.is_finite() {
                return Err(Error::Parameter(format!(
                    "table wavelength must be positive, got {}",
                    node.wavelength
                )));
            }
            check_node(node.n, node.kappa)?;
        }
        if nodes.windows(2).any(|w| w[1].wavelength <= w[0].wavelength) {
            return Err(Error::Parameter(
                "dispersion table wavelengths must be strictly increasing".into(),
            ));
        }
        Ok(Material::Tabulated { nodes })
    }

    pub fn parse_table(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "dispersion table line {}: expected 3 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut parsed = [0.0; 3];
            for (slot, field) in parsed.iter_mut().zip(&fields) {
                *slot = field.parse().map_err(|_| {
                    Error::Format(format!("dispersion table line {}: bad number {field:?}", lineno + 1))
                })?;
            }
            nodes.push(DispersionNode {
                wavelength: parsed[0],
                n: parsed[1],
                kappa: parsed[2],
            });
        }
        Self::tabulated(nodes)
    }

    pub fn load_table(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_table(&std::fs::read_to_string(path)?)
    }

    /// `(n, κ)` at `wavelength` (units of `λ_m`). Tables are interpolated
    /// linearly and never extrapolated.
    pub fn complex_index(&self, wavelength: f64) -> Result<(f64, f64)> {
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::Parameter(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        match self {
            Material::Constant { n, kappa } => Ok((*n, *kappa)),
            Material::Tabulated { nodes } => {
                let first = nodes[0];
                let last = nodes[nodes.len() - 1];
                if wavelength < first.wavelength || wavelength > last.wavelength {
                    return Err(Error::OutOfRange {
                        wavelength,
                        min: first.wavelength,
                        max: last.wavelength,
                    });
                }
                let hi = nodes.partition_point(|node| node.wavelength < wavelength);
                let upper = nodes[hi];
                if upper.wavelength == wavelength || hi == 0 {
                    return Ok((upper.n, upper.kappa));
                }
                let lower = nodes[hi - 1];
                let s = (wavelength - lower.wavelength) / (upper.wavelength - lower.wavelength);
                Ok((
                    lower.n + s * (upper.n - lower.n),
                    lower.kappa + s * (upper.kappa - lower.kappa),
                ))
            }
        }
    }

    pub fn is_lossless(&self) -> bool {
        match self {
            Material::Constant { kappa, .. } => *kappa == 0.0,
            Material::Tabulated { nodes } => nodes.iter().all(|n| n.kappa == 0.0),
        }
    }
}

fn check_node(n: f64, kappa: f64) -> Result<()> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Parameter(format!("refractive index must be positive, got {n}")));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Parameter(format!(
            "extinction coefficient must be non-negative, got {kappa}"
        )));
    }
    Ok(())
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Material::Constant { n, kappa } => write!(f, "constant n={n} kappa={kappa}"),
            Material::Tabulated { nodes } => write!(
                f,
                "table of {} nodes over [{}, {}]",
                nodes.len(),
                nodes[0].wavelength,
                nodes[nodes.len() - 1].wavelength
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> Material {
        Material::parse_table(
            "# lambda/lambda_m  n  kappa\n\
             0.90 1.70 0.010\n\
             \n\
             1.00 1.68 0.020\n\
             1.10 1.66 0.040\n",
        )
        .unwrap()
    }

    #[test]
    fn dispersion_free_is_flat_and_lossless() {
        let m = Material::dispersion_free();
        for wl in [0.9125, 0.9708, 1.0, 1.0292, 1.0875] {
            assert_eq!(m.complex_index(wl).unwrap(), (1.72, 0.0));
        }
        assert!(m.is_lossless());
    }

    #[test]
    fn nodes_are_reproduced_exactly() {
        let m = table();
        assert_eq!(m.complex_index(0.9).unwrap(), (1.70, 0.010));
        assert_eq!(m.complex_index(1.0).unwrap(), (1.68, 0.020));
        assert_eq!(m.complex_index(1.1).unwrap(), (1.66, 0.040));
    }

    #[test]
    fn midpoint_is_the_average() {
        let (n, k) = table().complex_index(1.05).unwrap();
        assert!((n - 1.67).abs() < 1e-12);
        assert!((k - 0.03).abs() < 1e-12);
    }

    #[test]
    fn refuses_to_extrapolate() {
        assert!(matches!(table().complex_index(0.85), Err(Error::OutOfRange { .. })));
        assert!(matches!(table().complex_index(1.2), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(Material::parse_table("1.0 1.5\n").is_err());
        assert!(Material::parse_table("1.0 1.5 x\n").is_err());
        assert!(Material::parse_table("1.0 1.5 0\n0.9 1.5 0\n").is_err());
        assert!(Material::parse_table("1.0 1.5 -0.1\n").is_err());
        assert!(Material::parse_table("# only comments\n").is_err());
        assert!(Material::constant(0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn interpolant_is_monotone_on_monotone_tables(a in 0.9f64..1.1, b in 0.9f64..1.1) {
            let m = table();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (n_lo, k_lo) = m.complex_index(lo).unwrap();
            let (n_hi, k_hi) = m.complex_index(hi).unwrap();
            prop_assert!(n_hi <= n_lo + 1e-15);
            prop_assert!(k_hi >= k_lo - 1e-15);
        }
    }
}
