//! Affine matrix expressions over named matrix variables and the SDP model
//! built from them.
//!
//! Every decision variable is flattened into one scalar vector. Dense
//! variables occupy `rows * cols` scalars in column-major order; symmetric
//! variables occupy only their lower triangle (`i >= j`), also column-major.

use nalgebra::DMatrix;

use crate::SdpError;

const SYM_RTOL: f64 = 1e-12;

/// Handle to a declared matrix variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub id: usize,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    /// First scalar index of this variable in the flattened vector.
    pub offset: usize,
}

impl Variable {
    /// Number of scalars this variable contributes.
    pub fn len(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar index of entry `(i, j)`.
    pub fn scalar_index(&self, i: usize, j: usize) -> usize {
        assert!(i < self.rows && j < self.cols, "index out of range");
        if self.symmetric {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            // lower triangle, column-major: columns 0..c hold n, n-1, ... entries
            let n = self.rows;
            let col_start = c * n - c * (c.saturating_sub(1)) / 2;
            self.offset + col_start + (r - c)
        } else {
            self.offset + j * self.rows + i
        }
    }

    /// Expand this variable's scalars into a dense matrix.
    pub fn unpack(&self, scalars: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| scalars[self.scalar_index(i, j)])
    }
}

/// Sparse linear functional `sum coeff * y[var]` over the flattened scalars.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    pub terms: Vec<(usize, f64)>,
}

impl LinearForm {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn single(var: usize, coeff: f64) -> Self {
        Self { terms: vec![(var, coeff)] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn push(&mut self, var: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((var, coeff));
        }
    }

    pub fn add_scaled(&mut self, other: &LinearForm, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for &(v, c) in &other.terms {
            self.push(v, c * scale);
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = Self::zero();
        out.add_scaled(self, scale);
        out
    }

    /// Sort by variable, merge duplicates and drop exact zeros.
    pub fn canonicalize(&mut self) {
        self.terms.sort_by_key(|&(v, _)| v);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        self.terms = merged;
    }

    pub fn canonical(&self) -> Self {
        let mut out = self.clone();
        out.canonicalize();
        out
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * y[v]).sum()
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|&(v, _)| v).max()
    }
}

/// Affine matrix expression `constant + [forms(i, j) · y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    /// Column-major, `rows * cols` forms.
    forms: Vec<LinearForm>,
}

impl MatExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            forms: vec![LinearForm::zero(); rows * cols],
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        Self {
            rows,
            cols,
            constant: m,
            forms: vec![LinearForm::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    /// Expression referencing every entry of `var`.
    pub fn of_var(var: &Variable) -> Self {
        let mut out = Self::zeros(var.rows, var.cols);
        for j in 0..var.cols {
            for i in 0..var.rows {
                out.forms[j * var.rows + i] = LinearForm::single(var.scalar_index(i, j), 1.0);
            }
        }
        out
    }

    /// `form * I_n`.
    pub fn form_identity(n: usize, form: &LinearForm) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out.forms[i * n + i] = form.clone();
        }
        out
    }

    /// Build from explicit parts; `forms` is column-major.
    pub fn from_parts(constant: DMatrix<f64>, forms: Vec<LinearForm>) -> Self {
        let (rows, cols) = constant.shape();
        assert_eq!(forms.len(), rows * cols, "form count must match shape");
        Self {
            rows,
            cols,
            constant,
            forms,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn form(&self, i: usize, j: usize) -> &LinearForm {
        &self.forms[j * self.rows + i]
    }

    fn form_mut(&mut self, i: usize, j: usize) -> &mut LinearForm {
        &mut self.forms[j * self.rows + i]
    }

    pub fn add(&self, other: &MatExpr) -> MatExpr {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &MatExpr) -> MatExpr {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &MatExpr, sign: f64) -> MatExpr {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in expression sum");
        let mut out = self.clone();
        out.constant += &other.constant * sign;
        for (f, g) in out.forms.iter_mut().zip(&other.forms) {
            f.add_scaled(g, sign);
        }
        out
    }

    pub fn add_constant(&self, m: &DMatrix<f64>) -> MatExpr {
        assert_eq!(self.shape(), m.shape());
        let mut out = self.clone();
        out.constant += m;
        out
    }

    pub fn scale(&self, c: f64) -> MatExpr {
        MatExpr {
            rows: self.rows,
            cols: self.cols,
            constant: &self.constant * c,
            forms: self.forms.iter().map(|f| f.scaled(c)).collect(),
        }
    }

    pub fn transpose(&self) -> MatExpr {
        let mut forms = Vec::with_capacity(self.forms.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                forms.push(self.form(i, j).clone());
            }
        }
        MatExpr {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            forms,
        }
    }

    /// `a * self` for a dense coefficient matrix `a`.
    pub fn left_mul(&self, a: &DMatrix<f64>) -> MatExpr {
        assert_eq!(a.ncols(), self.rows, "left_mul shape mismatch");
        let mut out = MatExpr::zeros(a.nrows(), self.cols);
        out.constant = a * &self.constant;
        for j in 0..self.cols {
            for p in 0..a.nrows() {
                let f = out.form_mut(p, j);
                for k in 0..self.rows {
                    let c = a[(p, k)];
                    if c != 0.0 {
                        f.add_scaled(&self.forms[j * self.rows + k], c);
                    }
                }
                f.canonicalize();
            }
        }
        out
    }

    /// `self * b` for a dense coefficient matrix `b`.
    pub fn right_mul(&self, b: &DMatrix<f64>) -> MatExpr {
        self.transpose().left_mul(&b.transpose()).transpose()
    }

    /// Rows `start..start + len`.
    pub fn rows_range(&self, start: usize, len: usize) -> MatExpr {
        self.view(start, 0, len, self.cols)
    }

    /// Sub-block starting at `(r0, c0)` of shape `(nr, nc)`.
    pub fn view(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> MatExpr {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols, "view out of range");
        let mut forms = Vec::with_capacity(nr * nc);
        for j in c0..c0 + nc {
            for i in r0..r0 + nr {
                forms.push(self.form(i, j).clone());
            }
        }
        MatExpr {
            rows: nr,
            cols: nc,
            constant: self.constant.view((r0, c0), (nr, nc)).into_owned(),
            forms,
        }
    }

    pub fn vstack(parts: &[MatExpr]) -> MatExpr {
        assert!(!parts.is_empty());
        let cols = parts[0].cols;
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut out = MatExpr::zeros(rows, cols);
        let mut r0 = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            out.place(r0, 0, p);
            r0 += p.rows;
        }
        out
    }

    pub fn hstack(parts: &[MatExpr]) -> MatExpr {
        assert!(!parts.is_empty());
        let rows = parts[0].rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = MatExpr::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            assert_eq!(p.rows, rows, "hstack row mismatch");
            out.place(0, c0, p);
            c0 += p.cols;
        }
        out
    }

    fn place(&mut self, r0: usize, c0: usize, block: &MatExpr) {
        for j in 0..block.cols {
            for i in 0..block.rows {
                self.constant[(r0 + i, c0 + j)] = block.constant[(i, j)];
                *self.form_mut(r0 + i, c0 + j) = block.form(i, j).clone();
            }
        }
    }

    /// Symmetric 2×2 block pattern `[[a, bᵀ], [b, c]]`; `a` and `c` must be
    /// symmetric expressions themselves.
    pub fn symmetric_blocks(a: &MatExpr, b: &MatExpr, c: &MatExpr) -> MatExpr {
        assert_eq!(a.rows, a.cols);
        assert_eq!(c.rows, c.cols);
        assert_eq!(b.shape(), (c.rows, a.cols));
        let top = MatExpr::hstack(&[a.clone(), b.transpose()]);
        let bottom = MatExpr::hstack(&[b.clone(), c.clone()]);
        MatExpr::vstack(&[top, bottom])
    }

    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for j in 0..self.cols {
            for i in 0..self.rows {
                out[(i, j)] += self.form(i, j).eval(y);
            }
        }
        out
    }

    /// Canonicalize every entry in place.
    pub fn canonicalize(&mut self) {
        for f in &mut self.forms {
            f.canonicalize();
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        self.forms.iter().filter_map(|f| f.max_var()).max()
    }

    /// Structural symmetry: forms and constants match their transposes up to
    /// summation-order rounding.
    pub fn is_structurally_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= SYM_RTOL * a.abs().max(b.abs()).max(1.0);
        for j in 0..self.cols {
            for i in (j + 1)..self.rows {
                if !close(self.constant[(i, j)], self.constant[(j, i)]) {
                    return false;
                }
                let mut diff = self.form(i, j).clone();
                diff.add_scaled(self.form(j, i), -1.0);
                let scale = self
                    .form(i, j)
                    .terms
                    .iter()
                    .chain(&self.form(j, i).terms)
                    .fold(1.0f64, |m, &(_, c)| m.max(c.abs()));
                diff.canonicalize();
                if diff.terms.iter().any(|&(_, c)| c.abs() > SYM_RTOL * scale) {
                    return false;
                }
            }
        }
        true
    }
}

/// `expr ⪰ 0`.
#[derive(Debug, Clone)]
pub struct PsdConstraint {
    pub label: String,
    pub expr: MatExpr,
}

impl PsdConstraint {
    pub fn size(&self) -> usize {
        self.expr.nrows()
    }
}

/// `expr = 0`.
#[derive(Debug, Clone)]
pub struct EqConstraint {
    pub label: String,
    pub expr: MatExpr,
}

/// Maximize `objective · y + objective_constant` subject to PSD and equality
/// constraints, all affine in the variables.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    variables: Vec<Variable>,
    psd: Vec<PsdConstraint>,
    equalities: Vec<EqConstraint>,
    objective: LinearForm,
    objective_constant: f64,
    n_scalars: usize,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> Variable {
        assert!(!symmetric || rows == cols, "symmetric variables must be square");
        let var = Variable {
            id: self.variables.len(),
            name: name.to_string(),
            rows,
            cols,
            symmetric,
            offset: self.n_scalars,
        };
        self.n_scalars += var.len();
        self.variables.push(var.clone());
        var
    }

    pub fn add_psd(&mut self, label: impl Into<String>, expr: MatExpr) {
        self.psd.push(PsdConstraint {
            label: label.into(),
            expr,
        });
    }

    pub fn add_equality(&mut self, label: impl Into<String>, expr: MatExpr) {
        self.equalities.push(EqConstraint {
            label: label.into(),
            expr,
        });
    }

    pub fn set_objective(&mut self, form: LinearForm, constant: f64) {
        self.objective = form;
        self.objective_constant = constant;
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn psd_constraints(&self) -> &[PsdConstraint] {
        &self.psd
    }

    pub fn equality_constraints(&self) -> &[EqConstraint] {
        &self.equalities
    }

    pub fn objective(&self) -> &LinearForm {
        &self.objective
    }

    pub fn objective_constant(&self) -> f64 {
        self.objective_constant
    }

    /// Total number of scalar decision variables.
    pub fn num_scalars(&self) -> usize {
        self.n_scalars
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.eval(y) + self.objective_constant
    }

    /// Reject problems that reference undeclared scalars, have non-square or
    /// asymmetric PSD expressions, or non-finite data.
    pub fn validate(&self) -> Result<(), SdpError> {
        let check_refs = |label: &str, max: Option<usize>| -> Result<(), SdpError> {
            match max {
                Some(v) if v >= self.n_scalars => Err(SdpError::Malformed(format!(
                    "'{label}' references scalar {v} but only {} are declared",
                    self.n_scalars
                ))),
                _ => Ok(()),
            }
        };
        check_refs("objective", self.objective.max_var())?;
        for c in &self.psd {
            check_refs(&c.label, c.expr.max_var())?;
            if !c.expr.is_structurally_symmetric() {
                return Err(SdpError::Malformed(format!(
                    "PSD constraint '{}' is not structurally symmetric",
                    c.label
                )));
            }
            check_finite(&c.label, &c.expr)?;
        }
        for c in &self.equalities {
            check_refs(&c.label, c.expr.max_var())?;
            check_finite(&c.label, &c.expr)?;
        }
        Ok(())
    }
}

fn check_finite(label: &str, expr: &MatExpr) -> Result<(), SdpError> {
    let bad_const = expr.constant_part().iter().any(|v| !v.is_finite());
    let bad_form = expr
        .forms
        .iter()
        .any(|f| f.terms.iter().any(|&(_, c)| !c.is_finite()));
    if bad_const || bad_form {
        return Err(SdpError::Malformed(format!("'{label}' contains non-finite data")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_variable_indexing_is_lower_triangle_column_major() {
        let mut p = SdpProblem::new();
        let _a = p.add_variable("a", 2, 1, false);
        let s = p.add_variable("s", 3, 3, true);
        assert_eq!(s.offset, 2);
        assert_eq!(s.len(), 6);
        let idx: Vec<usize> = [(0, 0), (1, 0), (2, 0), (1, 1), (2, 1), (2, 2)]
            .iter()
            .map(|&(i, j)| s.scalar_index(i, j) - s.offset)
            .collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(s.scalar_index(0, 2), s.scalar_index(2, 0));
        assert_eq!(p.num_scalars(), 8);
    }

    #[test]
    fn left_mul_and_eval_agree_with_dense_product() {
        let mut p = SdpProblem::new();
        let x = p.add_variable("x", 3, 2, false);
        let y: Vec<f64> = (0..6).map(|v| v as f64 + 1.0).collect();
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let e = MatExpr::of_var(&x).left_mul(&a);
        let dense = &a * x.unpack(&y);
        assert!((e.eval(&y) - dense).norm() < 1e-14);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.0]);
        let e2 = MatExpr::of_var(&x).right_mul(&b);
        assert!((e2.eval(&y) - x.unpack(&y) * b).norm() < 1e-14);
    }

    #[test]
    fn symmetric_blocks_are_structurally_symmetric() {
        let mut p = SdpProblem::new();
        let s = p.add_variable("s", 2, 2, true);
        let x = p.add_variable("x", 2, 2, false);
        let a = MatExpr::of_var(&s);
        let b = MatExpr::of_var(&x).add(&a.scale(0.5));
        let blk = MatExpr::symmetric_blocks(&a, &b, &a);
        assert!(blk.is_structurally_symmetric());
        assert!(!MatExpr::of_var(&x).is_structurally_symmetric());
    }

    #[test]
    fn validate_rejects_asymmetric_psd_expression() {
        let mut p = SdpProblem::new();
        let x = p.add_variable("x", 2, 2, false);
        p.add_psd("bad", MatExpr::of_var(&x));
        assert!(matches!(p.validate(), Err(SdpError::Malformed(_))));
    }
}
