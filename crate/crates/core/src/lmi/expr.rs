//! Affine matrix expressions in matrix-valued decision variables and the
//! programs assembled from them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum VarKind {
    /// Symmetric `d x d`; a scalar is `Symmetric(1)`.
    Symmetric(usize),
    Full { rows: usize, cols: usize },
}

impl VarKind {
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(d) => (d, d),
            VarKind::Full { rows, cols } => (rows, cols),
        }
    }

    /// Number of free scalar entries.
    pub fn free_entries(&self) -> usize {
        match *self {
            VarKind::Symmetric(d) => d * (d + 1) / 2,
            VarKind::Full { rows, cols } => rows * cols,
        }
    }

    /// Position `(a, b)` of free entry `k`. Symmetric variables store the lower
    /// triangle row by row: (0,0), (1,0), (1,1), (2,0), …
    pub fn entry(&self, k: usize) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(_) => {
                let a = ((((8 * k + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize;
                // guard the float estimate
                let a = if (a + 1) * (a + 2) / 2 <= k { a + 1 } else if a * (a + 1) / 2 > k { a - 1 } else { a };
                (a, k - a * (a + 1) / 2)
            }
            VarKind::Full { cols, .. } => (k / cols, k % cols),
        }
    }
}

/// Handle to a declared decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Var {
    pub id: usize,
    pub kind: VarKind,
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        self.kind.shape()
    }
}

/// `left · V · right`, or `left · Vᵀ · right` when `transposed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub var: Var,
    pub left: Mat,
    pub right: Mat,
    pub transposed: bool,
}

impl Term {
    fn eval(&self, value: &Mat) -> Mat {
        if self.transposed {
            &self.left * value.transpose() * &self.right
        } else {
            &self.left * value * &self.right
        }
    }

    fn transpose(&self) -> Term {
        Term {
            var: self.var,
            left: self.right.transpose(),
            right: self.left.transpose(),
            transposed: !self.transposed,
        }
    }
}

/// `constant + Σ terms`, all of shape `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinExpr {
    pub constant: Mat,
    pub terms: Vec<Term>,
}

impl LinExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { constant: Mat::zeros(rows, cols), terms: Vec::new() }
    }

    pub fn constant(m: Mat) -> Self {
        Self { constant: m, terms: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Mat::identity(n, n))
    }

    pub fn var(v: Var) -> Self {
        let (r, c) = v.shape();
        Self {
            constant: Mat::zeros(r, c),
            terms: vec![Term { var: v, left: Mat::identity(r, r), right: Mat::identity(c, c), transposed: false }],
        }
    }

    /// `left · V · right`.
    pub fn product(left: &Mat, v: Var, right: &Mat) -> Self {
        let (r, c) = v.shape();
        assert_eq!(left.ncols(), r, "left factor does not match variable rows");
        assert_eq!(right.nrows(), c, "right factor does not match variable columns");
        Self {
            constant: Mat::zeros(left.nrows(), right.ncols()),
            terms: vec![Term { var: v, left: left.clone(), right: right.clone(), transposed: false }],
        }
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }
    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(mut self, other: &LinExpr) -> Self {
        assert_eq!(self.constant.shape(), other.constant.shape(), "shape mismatch in expression sum");
        self.constant += &other.constant;
        self.terms.extend(other.terms.iter().cloned());
        self
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: &LinExpr) -> Self {
        self.add(&other.clone().scale(-1.0))
    }

    pub fn add_constant(mut self, m: &Mat) -> Self {
        self.constant += m;
        self
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.constant *= s;
        for t in &mut self.terms {
            t.left *= s;
        }
        self
    }

    /// `m · self`.
    pub fn premul(mut self, m: &Mat) -> Self {
        self.constant = m * &self.constant;
        for t in &mut self.terms {
            t.left = m * &t.left;
        }
        self
    }

    /// `self · m`.
    pub fn postmul(mut self, m: &Mat) -> Self {
        self.constant = &self.constant * m;
        for t in &mut self.terms {
            t.right = &t.right * m;
        }
        self
    }

    pub fn transpose(&self) -> Self {
        Self { constant: self.constant.transpose(), terms: self.terms.iter().map(Term::transpose).collect() }
    }

    pub fn eval(&self, values: &[Mat]) -> Mat {
        let mut out = self.constant.clone();
        for t in &self.terms {
            out += t.eval(&values[t.var.id]);
        }
        out
    }

    /// Merges terms on the same variable and orientation that share a left or
    /// a right factor, which keeps compiled programs small.
    pub fn simplify(mut self) -> Self {
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            let same = |m: &Term| m.var == t.var && m.transposed == t.transposed;
            if let Some(m) = merged.iter_mut().find(|m| same(m) && m.right == t.right) {
                m.left += &t.left;
            } else if let Some(m) = merged.iter_mut().find(|m| same(m) && m.left == t.left) {
                m.right += &t.right;
            } else {
                merged.push(t);
            }
        }
        merged.retain(|t| t.left.iter().any(|v| *v != 0.0) && t.right.iter().any(|v| *v != 0.0));
        self.terms = merged;
        self
    }
}

/// Symmetric block matrix given by its lower triangle; diagonal blocks are
/// symmetrized, upper blocks are the transposes of the lower ones.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlockMatrix {
    sizes: Vec<usize>,
    lower: Vec<Vec<Option<LinExpr>>>,
}

impl AffineBlockMatrix {
    pub fn new(sizes: Vec<usize>) -> Self {
        let lower = (0..sizes.len()).map(|i| vec![None; i + 1]).collect();
        Self { sizes, lower }
    }

    /// Sets block `(i, j)`; `(j, i)` with `j > i` is stored transposed.
    pub fn set(&mut self, i: usize, j: usize, e: LinExpr) -> Result<()> {
        let (i, j, e) = if i >= j { (i, j, e) } else { (j, i, e.transpose()) };
        if i >= self.sizes.len() {
            return Err(Error::Dimension(format!("block row {i} out of range")));
        }
        if e.rows() != self.sizes[i] || e.cols() != self.sizes[j] {
            return Err(Error::Dimension(format!(
                "block ({i},{j}) is {}x{}, expected {}x{}",
                e.rows(),
                e.cols(),
                self.sizes[i],
                self.sizes[j]
            )));
        }
        self.lower[i][j] = Some(e.simplify());
        Ok(())
    }

    pub fn with(mut self, i: usize, j: usize, e: LinExpr) -> Result<Self> {
        self.set(i, j, e)?;
        Ok(self)
    }

    /// Single-block matrix.
    pub fn single(e: LinExpr) -> Result<Self> {
        Self::new(vec![e.rows()]).with(0, 0, e)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn offset(&self, i: usize) -> usize {
        self.sizes[..i].iter().sum()
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&LinExpr> {
        self.lower[i][j].as_ref()
    }

    /// Lower-triangle blocks `(i, j, expr)` with `i ≥ j`.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, &LinExpr)> {
        self.lower
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter_map(move |(j, e)| e.as_ref().map(|e| (i, j, e))))
    }

    /// `self - s·other`, block by block; the block structures must agree.
    pub fn sub_scaled(mut self, other: &AffineBlockMatrix, s: f64) -> Result<Self> {
        if self.sizes != other.sizes {
            return Err(Error::Dimension("block structures differ".into()));
        }
        for (i, j, e) in other.blocks() {
            let add = e.clone().scale(-s);
            let cur = match self.lower[i][j].take() {
                Some(c) => c.add(&add),
                None => add,
            };
            self.lower[i][j] = Some(cur.simplify());
        }
        Ok(self)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.blocks().flat_map(|(_, _, e)| e.terms.iter().map(|t| t.var)).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Dense symmetric value at the given variable values.
    pub fn eval(&self, values: &[Mat]) -> Mat {
        let n = self.dim();
        let mut out = Mat::zeros(n, n);
        for (i, j, e) in self.blocks() {
            let (r, c) = (self.offset(i), self.offset(j));
            let v = e.eval(values);
            if i == j {
                out.view_mut((r, r), (v.nrows(), v.nrows())).copy_from(&linalg::sym(&v));
            } else {
                out.view_mut((r, c), (v.nrows(), v.ncols())).copy_from(&v);
                out.view_mut((c, r), (v.ncols(), v.nrows())).copy_from(&v.transpose());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Linear objective `Σ ⟨C_k, V_k⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: Sense,
    pub terms: Vec<(Var, Mat)>,
}

impl Objective {
    pub fn feasibility() -> Self {
        Self { sense: Sense::Minimize, terms: Vec::new() }
    }

    pub fn minimize_trace(v: Var) -> Self {
        let (r, _) = v.shape();
        Self { sense: Sense::Minimize, terms: vec![(v, Mat::identity(r, r))] }
    }

    pub fn maximize_trace(vars: &[Var]) -> Self {
        Self {
            sense: Sense::Maximize,
            terms: vars.iter().map(|&v| (v, Mat::identity(v.shape().0, v.shape().0))).collect(),
        }
    }

    pub fn eval(&self, values: &[Mat]) -> f64 {
        self.terms.iter().map(|(v, c)| linalg::inner(c, &values[v.id])).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdConstraint {
    pub name: String,
    pub matrix: AffineBlockMatrix,
    /// Enforced as `matrix ⪰ margin·I`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarInfo {
    pub name: String,
    pub var: Var,
}

/// Variables, PSD constraints and a linear objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProgram {
    vars: Vec<VarInfo>,
    constraints: Vec<PsdConstraint>,
    objective: Objective,
}

impl Default for SdpProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProgram {
    pub fn new() -> Self {
        Self { vars: Vec::new(), constraints: Vec::new(), objective: Objective::feasibility() }
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> Var {
        let (r, c) = kind.shape();
        assert!(r > 0 && c > 0, "variables must have positive dimensions");
        let var = Var { id: self.vars.len(), kind };
        self.vars.push(VarInfo { name: name.to_string(), var });
        var
    }

    pub fn symmetric(&mut self, name: &str, d: usize) -> Var {
        self.declare(name, VarKind::Symmetric(d))
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.declare(name, VarKind::Symmetric(1))
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> Var {
        self.declare(name, VarKind::Full { rows, cols })
    }

    pub fn add_psd(&mut self, name: impl Into<String>, matrix: AffineBlockMatrix, margin: f64) -> Result<()> {
        if !(margin >= 0.0) {
            return Err(Error::InvalidArgument(format!("margin {margin} must be non-negative")));
        }
        for v in matrix.vars() {
            if self.vars.get(v.id).map(|i| i.var) != Some(v) {
                return Err(Error::InvalidArgument(format!("constraint references undeclared variable {}", v.id)));
            }
        }
        self.constraints.push(PsdConstraint { name: name.into(), matrix, margin });
        Ok(())
    }

    /// `lhs ≥ rhs` for a 1x1 expression.
    pub fn add_scalar_ge(&mut self, name: impl Into<String>, lhs: LinExpr, rhs: f64) -> Result<()> {
        if lhs.rows() != 1 || lhs.cols() != 1 {
            return Err(Error::Dimension("scalar inequality needs a 1x1 expression".into()));
        }
        let e = lhs.add_constant(&Mat::from_element(1, 1, -rhs));
        self.add_psd(name, AffineBlockMatrix::single(e)?, 0.0)
    }

    pub fn set_objective(&mut self, objective: Objective) {
        self.objective = objective;
    }

    pub fn vars(&self) -> &[VarInfo] {
        &self.vars
    }
    pub fn constraints(&self) -> &[PsdConstraint] {
        &self.constraints
    }
    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn var_by_name(&self, name: &str) -> Option<Var> {
        self.vars.iter().find(|v| v.name == name).map(|v| v.var)
    }

    pub fn free_entries(&self) -> usize {
        self.vars.iter().map(|v| v.var.kind.free_entries()).sum()
    }

    /// Self-describing JSON dump: variables, and each block as a constant plus
    /// a list of `left · V · right` coefficient terms.
    pub fn to_debug_json(&self) -> serde_json::Value {
        use serde_json::json;
        let mat = |m: &Mat| serde_json::to_value(crate::serde_mat::to_rows(m)).unwrap_or_default();
        let constraints: Vec<_> = self
            .constraints
            .iter()
            .map(|c| {
                let blocks: Vec<_> = c
                    .matrix
                    .blocks()
                    .map(|(i, j, e)| {
                        json!({
                            "row": i,
                            "col": j,
                            "constant": mat(&e.constant),
                            "terms": e.terms.iter().map(|t| json!({
                                "var": t.var.id,
                                "transposed": t.transposed,
                                "left": mat(&t.left),
                                "right": mat(&t.right),
                            })).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                json!({
                    "name": c.name,
                    "margin": c.margin,
                    "block_sizes": c.matrix.sizes(),
                    "lower_blocks": blocks,
                })
            })
            .collect();
        json!({
            "variables": self.vars,
            "objective": {
                "sense": self.objective.sense,
                "terms": self.objective.terms.iter().map(|(v, c)| json!({"var": v.id, "coefficient": mat(c)})).collect::<Vec<_>>(),
            },
            "constraints": constraints,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_entry_order() {
        let k = VarKind::Symmetric(4);
        let got: Vec<_> = (0..k.free_entries()).map(|i| k.entry(i)).collect();
        assert_eq!(got[..6], [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]);
        assert_eq!(got[9], (3, 3));
    }

    #[test]
    fn transpose_round_trip() {
        let mut p = SdpProgram::new();
        let u = p.full("U", 2, 3);
        let e = LinExpr::product(&Mat::from_element(1, 2, 1.0), u, &Mat::identity(3, 3));
        let value = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let vals = vec![value];
        assert_eq!(e.transpose().eval(&vals), e.eval(&vals).transpose());
    }

    #[test]
    fn block_eval_mirrors_lower() {
        let mut p = SdpProgram::new();
        let x = p.symmetric("X", 2);
        let m = AffineBlockMatrix::new(vec![2, 1])
            .with(0, 0, LinExpr::var(x))
            .unwrap()
            .with(0, 1, LinExpr::constant(Mat::from_row_slice(2, 1, &[1.0, 2.0])))
            .unwrap();
        let v = m.eval(&[Mat::identity(2, 2)]);
        assert_eq!(v[(2, 0)], 1.0);
        assert_eq!(v[(0, 2)], 1.0);
        assert_eq!(v[(2, 2)], 0.0);
    }

    #[test]
    fn undeclared_variable_rejected() {
        let mut other = SdpProgram::new();
        other.scalar("a");
        let b = other.scalar("b");
        let mut p = SdpProgram::new();
        p.scalar("only");
        assert!(p.add_scalar_ge("c", LinExpr::var(b), 0.0).is_err());
    }
}
