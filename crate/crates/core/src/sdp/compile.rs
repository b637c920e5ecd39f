//! Lowering of an `SdpProgram` to the operator form used by the solver:
//! `F_b(y) = F0_b + Σ_i y_i F_{b,i}` per block, with each `F_{b,i}` kept as a
//! sum of placed rank-structured terms rather than a dense matrix.

use crate::lmi::{SdpProgram, Sense, VarKind};
use crate::linalg::{Mat, Vector};

/// `weight · (Ĝ + Ĝᵀ)` where `Ĝ` places `left · V · right` (or `Vᵀ`) at `(r0, c0)`.
#[derive(Debug, Clone)]
pub(crate) struct CTerm {
    pub var: usize,
    pub left: Mat,
    pub right: Mat,
    pub transposed: bool,
    pub r0: usize,
    pub c0: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct CBlock {
    pub dim: usize,
    /// Constant part with the margin already subtracted.
    pub f0: Mat,
    pub terms: Vec<CTerm>,
}

/// One free coordinate of `y`: its elementary positions `(a, b)` in the variable.
#[derive(Debug, Clone)]
pub(crate) struct Basis {
    pub elems: [(usize, usize); 2],
    pub count: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub blocks: Vec<CBlock>,
    pub kinds: Vec<VarKind>,
    pub offsets: Vec<usize>,
    pub basis: Vec<Vec<Basis>>,
    /// Minimization objective in `y`.
    pub c: Vector,
    pub m: usize,
}

impl Compiled {
    pub fn new(prog: &SdpProgram) -> Self {
        let kinds: Vec<VarKind> = prog.vars().iter().map(|v| v.var.kind).collect();
        let mut offsets = Vec::with_capacity(kinds.len());
        let mut m = 0;
        for k in &kinds {
            offsets.push(m);
            m += k.free_entries();
        }
        let basis: Vec<Vec<Basis>> = kinds
            .iter()
            .map(|k| {
                (0..k.free_entries())
                    .map(|e| {
                        let (a, b) = k.entry(e);
                        match k {
                            VarKind::Symmetric(_) if a != b => Basis { elems: [(a, b), (b, a)], count: 2 },
                            _ => Basis { elems: [(a, b), (a, b)], count: 1 },
                        }
                    })
                    .collect()
            })
            .collect();

        let zeros: Vec<Mat> = kinds.iter().map(|k| Mat::zeros(k.shape().0, k.shape().1)).collect();
        let blocks = prog
            .constraints()
            .iter()
            .map(|con| {
                let mat = &con.matrix;
                let dim = mat.dim();
                let mut f0 = mat.eval(&zeros);
                for i in 0..dim {
                    f0[(i, i)] -= con.margin;
                }
                let mut terms = Vec::new();
                for (i, j, e) in mat.blocks() {
                    let (r0, c0) = (mat.offset(i), mat.offset(j));
                    let weight = if i == j { 0.5 } else { 1.0 };
                    for t in &e.terms {
                        terms.push(CTerm {
                            var: t.var.id,
                            left: t.left.clone(),
                            right: t.right.clone(),
                            transposed: t.transposed,
                            r0,
                            c0,
                            weight,
                        });
                    }
                }
                CBlock { dim, f0, terms }
            })
            .collect();

        let mut c = Vector::zeros(m);
        let sign = match prog.objective().sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        for (v, coef) in &prog.objective().terms {
            for (k, b) in basis[v.id].iter().enumerate() {
                let s: f64 = b.elems[..b.count].iter().map(|&(a, bb)| coef[(a, bb)]).sum();
                c[offsets[v.id] + k] += sign * s;
            }
        }
        Self { blocks, kinds, offsets, basis, c, m }
    }

    pub fn values(&self, y: &Vector) -> Vec<Mat> {
        self.kinds
            .iter()
            .enumerate()
            .map(|(v, k)| {
                let (r, c) = k.shape();
                let mut out = Mat::zeros(r, c);
                for (e, b) in self.basis[v].iter().enumerate() {
                    for &(a, bb) in &b.elems[..b.count] {
                        out[(a, bb)] = y[self.offsets[v] + e];
                    }
                }
                out
            })
            .collect()
    }

    /// `Σ_i y_i F_{b,i}` for every block (no constant).
    pub fn apply(&self, y: &Vector) -> Vec<Mat> {
        let vals = self.values(y);
        self.blocks
            .iter()
            .map(|b| {
                let mut out = Mat::zeros(b.dim, b.dim);
                for t in &b.terms {
                    let v = &vals[t.var];
                    let g = if t.transposed { &t.left * v.transpose() * &t.right } else { &t.left * v * &t.right };
                    let g = g * t.weight;
                    let (h, k) = g.shape();
                    let mut view = out.view_mut((t.r0, t.c0), (h, k));
                    view += &g;
                    let mut view_t = out.view_mut((t.c0, t.r0), (k, h));
                    view_t += g.transpose();
                }
                out
            })
            .collect()
    }

    /// `F(y) = F0 + Σ y_i F_i`.
    pub fn affine(&self, y: &Vector) -> Vec<Mat> {
        let mut out = self.apply(y);
        for (o, b) in out.iter_mut().zip(&self.blocks) {
            *o += &b.f0;
        }
        out
    }

    /// Adjoint: `(⟨F_i, X⟩)_i` summed over blocks.
    pub fn adjoint(&self, xs: &[Mat]) -> Vector {
        let mut out = Vector::zeros(self.m);
        for (b, x) in self.blocks.iter().zip(xs) {
            for t in &b.terms {
                let (h, k) = (t.left.nrows(), t.right.ncols());
                let sub = x.view((t.r0, t.c0), (h, k));
                let g = t.left.transpose() * sub * t.right.transpose();
                let gv = if t.transposed { g.transpose() } else { g };
                let scale = 2.0 * t.weight;
                let off = self.offsets[t.var];
                for (e, bs) in self.basis[t.var].iter().enumerate() {
                    let mut s = 0.0;
                    for &(a, bb) in &bs.elems[..bs.count] {
                        s += gv[(a, bb)];
                    }
                    out[off + e] += scale * s;
                }
            }
        }
        out
    }

    /// Schur complement `M_ij = Σ_b ⟨F_{b,i}, W_b F_{b,j} W_b⟩`.
    pub fn schur(&self, ws: &[Mat]) -> Mat {
        let mut m = Mat::zeros(self.m, self.m);
        for (b, w) in self.blocks.iter().zip(ws) {
            for t in &b.terms {
                for s in &b.terms {
                    if t.var > s.var {
                        continue;
                    }
                    self.schur_pair(&mut m, w, t, s);
                }
            }
        }
        // mirror the filled upper triangle
        for j in 0..self.m {
            for i in j + 1..self.m {
                m[(i, j)] = m[(j, i)];
            }
        }
        m
    }

    fn schur_pair(&self, m: &mut Mat, w: &Mat, t: &CTerm, s: &CTerm) {
        let (ht, kt) = (t.left.nrows(), t.right.ncols());
        let (hs, ks) = (s.left.nrows(), s.right.ncols());
        let w_rr = w.view((t.r0, s.r0), (ht, hs));
        let w_cc = w.view((t.c0, s.c0), (kt, ks));
        let w_rc = w.view((t.r0, s.c0), (ht, ks));
        let w_cr = w.view((t.c0, s.r0), (kt, hs));
        let k_uu = t.left.transpose() * w_rr * &s.left;
        let k_vv = &t.right * w_cc * s.right.transpose();
        let k_uv = t.left.transpose() * w_rc * s.right.transpose();
        let k_vu = &t.right * w_cr * &s.left;
        let coef = 2.0 * t.weight * s.weight;

        let (uu, vv, uv, vu) = (k_uu.as_slice(), k_vv.as_slice(), k_uv.as_slice(), k_vu.as_slice());
        let (nuu, nvv, nuv, nvu) = (k_uu.nrows(), k_vv.nrows(), k_uv.nrows(), k_vu.nrows());
        let same = t.var == s.var;
        let (ot, os) = (self.offsets[t.var], self.offsets[s.var]);
        let orient = |tr: bool, (a, b): (usize, usize)| if tr { (b, a) } else { (a, b) };
        let bt = &self.basis[t.var];
        let bs = &self.basis[s.var];
        let mrows = m.nrows();
        let md = m.as_mut_slice();
        for (i, bi) in bt.iter().enumerate() {
            let j0 = if same { i } else { 0 };
            for (j, bj) in bs.iter().enumerate().skip(j0) {
                let mut acc = 0.0;
                for &ei in &bi.elems[..bi.count] {
                    let (al, be) = orient(t.transposed, ei);
                    for &ej in &bj.elems[..bj.count] {
                        let (ga, de) = orient(s.transposed, ej);
                        acc += uu[al + ga * nuu] * vv[be + de * nvv] + uv[al + de * nuv] * vu[be + ga * nvu];
                    }
                }
                md[(ot + i) + (os + j) * mrows] += coef * acc;
            }
        }
    }
}
