//! Datasets, uniform-kernel weights and the local polynomial design.

use std::path::Path;

use crate::error::{Error, Result};
use crate::stats;

/// How a covariate column is read from a CSV file.
#[derive(Clone, Debug, PartialEq)]
pub enum CovariateKind {
    Continuous,
    /// One-hot encoded with the reference level dropped.
    Categorical {
        levels: Vec<String>,
        reference: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

/// Column roles of an input file.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub outcome: String,
    pub running: String,
    pub covariates: Vec<CovariateSpec>,
    pub cutoff: f64,
}

/// Encoded column of the covariate matrix and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedColumn {
    pub name: String,
    /// `Some((source column, level))` for one-hot indicator columns.
    pub level: Option<(String, String)>,
}

/// Outcomes, running variable and encoded covariates of a sharp discontinuity design.
///
/// Treatment is never stored: unit `i` is treated iff `x[i] >= cutoff`.
#[derive(Clone, Debug)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    /// Row-major `n x d`.
    z: Vec<f64>,
    d: usize,
    cutoff: f64,
    columns: Vec<EncodedColumn>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Vec<Vec<f64>>, cutoff: f64) -> Result<Self> {
        let n = y.len();
        if n < 2 || x.len() != n || z.len() != n {
            return Err(Error::Domain(format!(
                "dataset needs n >= 2 with matching lengths (y: {}, x: {}, z: {})",
                n,
                x.len(),
                z.len()
            )));
        }
        let d = z[0].len();
        if d == 0 {
            return Err(Error::Domain("dataset needs at least one covariate".into()));
        }
        if z.iter().any(|row| row.len() != d) {
            return Err(Error::Domain("covariate rows have differing lengths".into()));
        }
        if !cutoff.is_finite()
            || y.iter().chain(&x).any(|v| !v.is_finite())
            || z.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        let columns = (0..d)
            .map(|j| EncodedColumn {
                name: format!("z{}", j + 1),
                level: None,
            })
            .collect();
        Ok(Self {
            y,
            x,
            z: z.into_iter().flatten().collect(),
            d,
            cutoff,
            columns,
        })
    }

    pub fn with_columns(mut self, columns: Vec<EncodedColumn>) -> Result<Self> {
        if columns.len() != self.d {
            return Err(Error::Domain(format!(
                "{} column names for {} covariates",
                columns.len(),
                self.d
            )));
        }
        self.columns = columns;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    pub fn columns(&self) -> &[EncodedColumn] {
        &self.columns
    }

    pub fn treated(&self, i: usize) -> bool {
        self.x[i] >= self.cutoff
    }

    pub fn w(&self, i: usize) -> f64 {
        if self.treated(i) {
            1.0
        } else {
            0.0
        }
    }

    /// Sample standard deviation of the running variable.
    pub fn sd_x(&self) -> f64 {
        stats::sample_sd(&self.x)
    }
}

/// Reads a CSV file with a header row according to `schema`.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in {}", path.display())))
    };
    let y_col = position(&schema.outcome)?;
    let x_col = position(&schema.running)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| position(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut columns = Vec::new();
    for spec in &schema.covariates {
        match &spec.kind {
            CovariateKind::Continuous => columns.push(EncodedColumn {
                name: spec.name.clone(),
                level: None,
            }),
            CovariateKind::Categorical { levels, reference } => {
                if !levels.contains(reference) {
                    return Err(Error::Schema(format!(
                        "reference level `{reference}` of `{}` is not among its levels",
                        spec.name
                    )));
                }
                for level in levels.iter().filter(|l| *l != reference) {
                    columns.push(EncodedColumn {
                        name: format!("{}={}", spec.name, level),
                        level: Some((spec.name.clone(), level.clone())),
                    });
                }
            }
        }
    }

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // Row numbers are 1-based data rows (the header is row 0).
        let row = r + 1;
        let numeric = |col: usize, name: &str| -> Result<f64> {
            let cell = record.get(col).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("`{cell}` is not a finite number"),
                })
        };
        y.push(numeric(y_col, &schema.outcome)?);
        x.push(numeric(x_col, &schema.running)?);
        let mut zrow = Vec::with_capacity(columns.len());
        for (spec, &col) in schema.covariates.iter().zip(&cov_cols) {
            match &spec.kind {
                CovariateKind::Continuous => zrow.push(numeric(col, &spec.name)?),
                CovariateKind::Categorical { levels, reference } => {
                    let cell = record.get(col).unwrap_or("");
                    let value = levels
                        .iter()
                        .find(|l| level_matches(l, cell))
                        .ok_or_else(|| {
                            Error::Schema(format!(
                                "row {row}, column `{}`: unknown level `{cell}`",
                                spec.name
                            ))
                        })?;
                    for level in levels.iter().filter(|l| *l != reference) {
                        zrow.push(if level == value { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        z.push(zrow);
    }
    Dataset::new(y, x, z, schema.cutoff)?.with_columns(columns)
}

fn level_matches(level: &str, cell: &str) -> bool {
    if level == cell {
        return true;
    }
    match (level.parse::<f64>(), cell.parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Uniform kernel weights `k_i = 1{|x_i - c| <= h}`.
pub fn kernel_weights(ds: &Dataset, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("bandwidth must be positive, got {h}")));
    }
    let c = ds.cutoff();
    Ok(ds
        .x()
        .iter()
        .map(|&x| if (x - c).abs() <= h { 1.0 } else { 0.0 })
        .collect())
}

/// One-sided polynomial basis `(1, u_-, u_+, u_-^2, u_+^2, ..., u_-^q, u_+^q)` with `u = x - c`,
/// where `u_- = u 1{u < 0}` and `u_+ = u 1{u >= 0}` keep their sign.
pub fn polynomial_basis(x: f64, c: f64, q: usize) -> Vec<f64> {
    let u = x - c;
    let (neg, pos) = if u < 0.0 { (u, 0.0) } else { (0.0, u) };
    let mut basis = Vec::with_capacity(2 * q + 1);
    basis.push(1.0);
    for p in 1..=q as i32 {
        basis.push(neg.powi(p));
        basis.push(pos.powi(p));
    }
    basis
}

/// Indices with `|x_i - c| <= multiplier * sd(x)`, ascending.
pub fn near_cutoff_units(ds: &Dataset, multiplier: f64) -> Vec<usize> {
    let radius = multiplier * ds.sd_x();
    let c = ds.cutoff();
    (0..ds.n())
        .filter(|&i| (ds.x()[i] - c).abs() <= radius)
        .collect()
}

/// Regressors of one unit in the local polynomial working model.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignRow {
    pub x_basis: Vec<f64>,
    /// `(1, z_1, ..., z_d)`.
    pub z_tilde: Vec<f64>,
    /// `z_tilde ⊗ x_basis`, entry `a * (2q+1) + b = z_tilde[a] * x_basis[b]`.
    pub kron: Vec<f64>,
    pub weight: f64,
}

impl DesignRow {
    pub fn new(x_basis: Vec<f64>, z: &[f64], weight: f64) -> Self {
        let mut z_tilde = Vec::with_capacity(z.len() + 1);
        z_tilde.push(1.0);
        z_tilde.extend_from_slice(z);
        let kron = z_tilde
            .iter()
            .flat_map(|&za| x_basis.iter().map(move |&xb| za * xb))
            .collect();
        Self {
            x_basis,
            z_tilde,
            kron,
            weight,
        }
    }
}

/// Design rows for every unit at bandwidth `h`.
pub fn design_rows(ds: &Dataset, q: usize, h: f64) -> Result<Vec<DesignRow>> {
    let weights = kernel_weights(ds, h)?;
    Ok((0..ds.n())
        .map(|i| DesignRow::new(polynomial_basis(ds.x()[i], ds.cutoff(), q), ds.z(i), weights[i]))
        .collect())
}
