//! The discrete target measure and its height parametrization.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{invalid_input, Error, Result};

/// A discrete measure: atoms `y_i` in `R^d` with positive masses summing to 1.
///
/// Atom coordinates are stored flat, row-major: coordinate `c` of atom `i`
/// lives at `atoms[i * dim + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTarget {
    atoms: Vec<f64>,
    masses: Vec<f64>,
    dim: usize,
}

pub const MASS_SUM_TOL: f64 = 1e-9;

impl DiscreteTarget {
    /// Build a target from flat row-major atom coordinates and per-atom masses.
    ///
    /// Rejects empty targets, non-positive or non-normalized masses, and
    /// duplicate atoms (duplicates make heights non-identifiable).
    pub fn new(atoms: Vec<f64>, masses: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid_input("atom dimension must be >= 1"));
        }
        if atoms.is_empty() || atoms.len() % dim != 0 {
            return Err(invalid_input(format!(
                "atom buffer length {} is not a positive multiple of dim {}",
                atoms.len(),
                dim
            )));
        }
        let n = atoms.len() / dim;
        if masses.len() != n {
            return Err(invalid_input(format!(
                "{} atoms but {} masses",
                n,
                masses.len()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(invalid_input("atom coordinates must be finite"));
        }
        for (i, &m) in masses.iter().enumerate() {
            if !m.is_finite() || m <= 0.0 {
                return Err(invalid_input(format!("mass {i} is {m}; masses must be > 0")));
            }
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > MASS_SUM_TOL {
            return Err(invalid_input(format!(
                "masses sum to {sum}, expected 1 within {MASS_SUM_TOL:e}"
            )));
        }
        // Duplicate detection by exact bit pattern; distinct-but-close atoms
        // are the caller's business.
        let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(n);
        for i in 0..n {
            let key: Vec<u64> = atoms[i * dim..(i + 1) * dim]
                .iter()
                .map(|v| v.to_bits())
                .collect();
            if !seen.insert(key) {
                return Err(invalid_input(format!("duplicate atom at index {i}")));
            }
        }
        Ok(Self { atoms, masses, dim })
    }

    /// Uniform masses `1/n` over the given atoms.
    pub fn with_uniform_masses(atoms: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || atoms.is_empty() || atoms.len() % dim != 0 {
            return Err(invalid_input("bad atom buffer for uniform-mass target"));
        }
        let n = atoms.len() / dim;
        Self::new(atoms, vec![1.0 / n as f64; n], dim)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coordinates of atom `i`.
    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat row-major view of all atoms.
    pub fn atoms_flat(&self) -> &[f64] {
        &self.atoms
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Restrict to the atoms at `indices`, renormalizing masses to sum to 1.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid_input("subset must contain at least one atom"));
        }
        let mut atoms = Vec::with_capacity(indices.len() * self.dim);
        let mut masses = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid_input(format!("subset index {i} out of range")));
            }
            atoms.extend_from_slice(self.atom(i));
            masses.push(self.masses[i]);
        }
        let total: f64 = masses.iter().sum();
        for m in &mut masses {
            *m /= total;
        }
        // Renormalization can leave the sum a few ulps off 1; pin it.
        let sum: f64 = masses.iter().sum();
        let last = masses.len() - 1;
        masses[last] += 1.0 - sum;
        Self::new(atoms, masses, self.dim)
    }

    /// Read points from CSV: one point per row, `d` columns of floats, an
    /// optional final mass column, and an optional header row (detected by a
    /// non-numeric first token).
    ///
    /// `dim`: when known, rows with `dim + 1` columns are treated as
    /// `coords + mass`. When `None`, every column is a coordinate unless the
    /// header names the last column `mass`, `weight`, `nu` or `m`.
    pub fn from_csv(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        let (rows, header) = parse_numeric_csv(BufReader::new(file))?;
        if rows.is_empty() {
            return Err(invalid_input("point file contains no data rows"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid_input("point file rows have inconsistent column counts"));
        }
        let has_mass = match dim {
            Some(d) if cols == d => false,
            Some(d) if cols == d + 1 => true,
            Some(d) => {
                return Err(invalid_input(format!(
                    "point file has {cols} columns, expected {d} or {}",
                    d + 1
                )))
            }
            None => header
                .as_ref()
                .and_then(|h| h.last())
                .map(|name| {
                    matches!(name.trim().to_ascii_lowercase().as_str(), "mass" | "weight" | "nu" | "m")
                })
                .unwrap_or(false),
        };
        let d = if has_mass { cols - 1 } else { cols };
        if d == 0 {
            return Err(invalid_input("point file has no coordinate columns"));
        }
        let n = rows.len();
        let mut atoms = Vec::with_capacity(n * d);
        let mut masses = Vec::with_capacity(n);
        for row in &rows {
            atoms.extend_from_slice(&row[..d]);
            if has_mass {
                masses.push(row[d]);
            }
        }
        if has_mass {
            Self::new(atoms, masses, d)
        } else {
            Self::with_uniform_masses(atoms, d)
        }
    }

    /// Write atoms (and masses) as CSV with a header row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let names: Vec<String> = (0..self.dim).map(|c| format!("x{c}")).collect();
        writeln!(w, "{},mass", names.join(","))?;
        for i in 0..self.len() {
            let coords: Vec<String> = self.atom(i).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{},{}", coords.join(","), self.masses[i])?;
        }
        Ok(())
    }
}

/// Parse a loose numeric CSV: comma-separated float rows, blank lines
/// skipped, an optional header row detected by a non-numeric first token.
/// Returns data rows and the header, if any.
pub fn parse_numeric_csv(reader: impl BufRead) -> Result<(Vec<Vec<f64>>, Option<Vec<String>>)> {
    let mut rows = Vec::new();
    let mut header = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let first_numeric = tokens
            .first()
            .map(|t| t.parse::<f64>().is_ok())
            .unwrap_or(false);
        if !first_numeric {
            if rows.is_empty() && header.is_none() {
                header = Some(tokens.into_iter().map(str::to_string).collect());
                continue;
            }
            return Err(invalid_input(format!(
                "line {}: non-numeric token {:?}",
                lineno + 1,
                tokens.first().unwrap_or(&"")
            )));
        }
        let row: Result<Vec<f64>> = tokens
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    invalid_input(format!("line {}: cannot parse {t:?} as a number", lineno + 1))
                })
            })
            .collect();
        rows.push(row?);
    }
    Ok((rows, header))
}

/// Per-atom heights parametrizing the Brenier potential.
///
/// Heights are identifiable only up to an additive constant; comparisons go
/// through [`HeightVector::project_zero_mean`] first.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightVector {
    values: Vec<f64>,
    centered: bool,
}

impl HeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, centered: false }
    }

    /// All-zero heights for `n` atoms (already centered).
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n], centered: true }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    /// Subtract the mean. Cell assignments are invariant under this shift.
    pub fn project_zero_mean(&self) -> HeightVector {
        let n = self.values.len();
        if n == 0 {
            return HeightVector { values: Vec::new(), centered: true };
        }
        let mean = self.values.iter().sum::<f64>() / n as f64;
        HeightVector {
            values: self.values.iter().map(|v| v - mean).collect(),
            centered: true,
        }
    }

    /// Length check against the target this vector is paired with.
    pub fn check_pairing(&self, target: &DiscreteTarget) -> Result<()> {
        if self.values.len() != target.len() {
            return Err(invalid_input(format!(
                "height vector has {} entries for {} atoms",
                self.values.len(),
                target.len()
            )));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for HeightVector {
    fn from(values: Vec<f64>) -> Self {
        HeightVector::new(values)
    }
}
