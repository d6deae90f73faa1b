//! Sparse-triplet JSON form of an [`SdpProblem`].
//!
//! ```text
//! {
//!   "format": "ltn-sdp-triplet/1",
//!   "sense": "maximize",
//!   "n_scalars": 4,
//!   "variables": [{"name": "P", "rows": 2, "cols": 2, "symmetric": true, "offset": 0}, ...],
//!   "objective": {"constant": 0.0, "terms": [[3, 1.0]]},
//!   "psd": [{"label": "...", "rows": 2, "cols": 2,
//!            "constant": [[row, col, value], ...],
//!            "coeffs": [[scalar, row, col, coeff], ...]}],
//!   "equalities": [ same shape as psd ]
//! }
//! ```
//!
//! `scalar` indexes the flattened decision vector: a variable's entries start
//! at its `offset`, dense ones column-major, symmetric ones lower triangle
//! column-major. Rows and columns are zero-based.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::problem::{LinearForm, MatExpr, SdpProblem};
use crate::SdpError;

pub const FORMAT_TAG: &str = "ltn-sdp-triplet/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableJson {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveJson {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintJson {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub constant: Vec<(usize, usize, f64)>,
    pub coeffs: Vec<(usize, usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemJson {
    pub format: String,
    pub sense: String,
    pub n_scalars: usize,
    pub variables: Vec<VariableJson>,
    pub objective: ObjectiveJson,
    pub psd: Vec<ConstraintJson>,
    pub equalities: Vec<ConstraintJson>,
}

fn expr_to_json(label: &str, e: &MatExpr) -> ConstraintJson {
    let mut constant = Vec::new();
    let mut coeffs = Vec::new();
    for j in 0..e.ncols() {
        for i in 0..e.nrows() {
            let c = e.constant_part()[(i, j)];
            if c != 0.0 {
                constant.push((i, j, c));
            }
            for &(v, a) in &e.form(i, j).canonical().terms {
                coeffs.push((v, i, j, a));
            }
        }
    }
    ConstraintJson {
        label: label.to_string(),
        rows: e.nrows(),
        cols: e.ncols(),
        constant,
        coeffs,
    }
}

fn expr_from_json(c: &ConstraintJson) -> Result<MatExpr, SdpError> {
    let mut constant = DMatrix::zeros(c.rows, c.cols);
    let mut forms = vec![LinearForm::zero(); c.rows * c.cols];
    let in_range = |i: usize, j: usize| {
        if i < c.rows && j < c.cols {
            Ok(())
        } else {
            Err(SdpError::Malformed(format!(
                "'{}': entry ({i}, {j}) outside {}x{}",
                c.label, c.rows, c.cols
            )))
        }
    };
    for &(i, j, v) in &c.constant {
        in_range(i, j)?;
        constant[(i, j)] += v;
    }
    for &(s, i, j, a) in &c.coeffs {
        in_range(i, j)?;
        forms[j * c.rows + i].push(s, a);
    }
    let mut e = MatExpr::from_parts(constant, forms);
    e.canonicalize();
    Ok(e)
}

impl ProblemJson {
    pub fn from_problem(p: &SdpProblem) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            sense: "maximize".to_string(),
            n_scalars: p.num_scalars(),
            variables: p
                .variables()
                .iter()
                .map(|v| VariableJson {
                    name: v.name.clone(),
                    rows: v.rows,
                    cols: v.cols,
                    symmetric: v.symmetric,
                    offset: v.offset,
                })
                .collect(),
            objective: ObjectiveJson {
                constant: p.objective_constant(),
                terms: p.objective().canonical().terms,
            },
            psd: p
                .psd_constraints()
                .iter()
                .map(|c| expr_to_json(&c.label, &c.expr))
                .collect(),
            equalities: p
                .equality_constraints()
                .iter()
                .map(|c| expr_to_json(&c.label, &c.expr))
                .collect(),
        }
    }

    pub fn to_problem(&self) -> Result<SdpProblem, SdpError> {
        if self.format != FORMAT_TAG {
            return Err(SdpError::Malformed(format!("unknown format '{}'", self.format)));
        }
        if self.sense != "maximize" {
            return Err(SdpError::Malformed(format!("unsupported sense '{}'", self.sense)));
        }
        let mut p = SdpProblem::new();
        for v in &self.variables {
            if v.symmetric && v.rows != v.cols {
                return Err(SdpError::Malformed(format!("symmetric variable '{}' is not square", v.name)));
            }
            let var = p.add_variable(&v.name, v.rows, v.cols, v.symmetric);
            if var.offset != v.offset {
                return Err(SdpError::Malformed(format!(
                    "variable '{}' offset {} does not match layout ({})",
                    v.name, v.offset, var.offset
                )));
            }
        }
        if p.num_scalars() != self.n_scalars {
            return Err(SdpError::Malformed(format!(
                "n_scalars {} does not match variable table ({})",
                self.n_scalars,
                p.num_scalars()
            )));
        }
        let mut obj = LinearForm::zero();
        for &(s, a) in &self.objective.terms {
            obj.push(s, a);
        }
        obj.canonicalize();
        p.set_objective(obj, self.objective.constant);
        for c in &self.psd {
            p.add_psd(c.label.clone(), expr_from_json(c)?);
        }
        for c in &self.equalities {
            p.add_equality(c.label.clone(), expr_from_json(c)?);
        }
        p.validate()?;
        Ok(p)
    }
}

impl SdpProblem {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProblemJson::from_problem(self)).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<SdpProblem, SdpError> {
        serde_json::from_str::<ProblemJson>(s)?.to_problem()
    }
}
