//! Normal equations of one ALS half-step.
//!
//! With the factors `X_s` of one side fixed, the unknowns `W_s` of the other
//! side solve `sum_t G_st W_t = H_s`, where
//! `G_st = sum_kl <F_k X_s, F_l X_t> O_k^T O_l` and `H_s = sum_k tr(F_k X_s) O_k^T`
//! (`F_k` are the operator factors of the fixed side, `O_k` those of the
//! unknown side).

use rayon::prelude::*;

use super::pattern::SparsityPattern;
use crate::error::{Error, Result};
use crate::matrix::{solve_spd_or_lu, solve_spd_then_lu, DenseMatrix, Factor, SparseMatrix, SpdSolve};

/// Coefficients computed from the fixed factors of one side:
/// `quad[k][l][(s,t)] = <F_k X_s, F_l X_t>_F` and `lin[k][s] = tr(F_k X_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SideCoefficients {
    pub quad: Vec<Vec<DenseMatrix>>,
    pub lin: Vec<Vec<f64>>,
}

impl SideCoefficients {
    /// Evaluates the coefficients from the products `F_k X_s`, in parallel
    /// over index pairs; every entry is computed independently, so results
    /// do not depend on the number of workers.
    pub fn compute(ops: &[Factor], xs: &[Factor]) -> Result<(Self, Vec<Vec<Factor>>)> {
        let (r, q) = (ops.len(), xs.len());
        let flat: Vec<Factor> = (0..r * q)
            .into_par_iter()
            .map(|i| ops[i / q].matmul(&xs[i % q]))
            .collect::<Result<_>>()?;
        let pairs: Vec<(usize, usize)> = (0..r * q).flat_map(|a| (a..r * q).map(move |b| (a, b))).collect();
        let values: Vec<f64> = pairs.par_iter().map(|&(a, b)| flat[a].frobenius(&flat[b])).collect();
        let mut quad = vec![vec![DenseMatrix::zeros(q, q); r]; r];
        for (&(a, b), v) in pairs.iter().zip(values) {
            let (k, s, l, t) = (a / q, a % q, b / q, b % q);
            quad[k][l][(s, t)] = v;
            quad[l][k][(t, s)] = v;
        }
        let lin = (0..r).map(|k| (0..q).map(|s| flat[k * q + s].trace()).collect()).collect();
        let mut products = Vec::with_capacity(r);
        let mut it = flat.into_iter();
        for _ in 0..r {
            products.push(it.by_ref().take(q).collect());
        }
        Ok((Self { quad, lin }, products))
    }

    pub fn q(&self) -> usize {
        self.lin.first().map_or(0, Vec::len)
    }
}

/// Blocks `G_st` (`s <= t`, row-major upper triangle) and `H_s`.
pub struct NormalSystem {
    q: usize,
    dim: usize,
    upper: Vec<Factor>,
    rhs: Vec<Factor>,
}

impl NormalSystem {
    /// Assembles the blocks. With `products[k][l] = O_k^T O_l` available the
    /// blocks are linear combinations of them; otherwise the sum
    /// factorization `sum_k O_k^T (sum_l c_kl O_l)` is used.
    pub fn assemble(coeffs: &SideCoefficients, ops: &[Factor], products: Option<&[Vec<Factor>]>) -> Result<Self> {
        let q = coeffs.q();
        let r = ops.len();
        let dim = ops[0].nrows();
        let pairs: Vec<(usize, usize)> = (0..q).flat_map(|s| (s..q).map(move |t| (s, t))).collect();
        let upper = pairs
            .par_iter()
            .map(|&(s, t)| -> Result<Factor> {
                match products {
                    Some(p) => {
                        let mut c = Vec::with_capacity(r * r);
                        let mut m = Vec::with_capacity(r * r);
                        for k in 0..r {
                            for l in 0..r {
                                c.push(coeffs.quad[k][l][(s, t)]);
                                m.push(&p[k][l]);
                            }
                        }
                        Factor::linear_combination(&c, &m)
                    }
                    None => {
                        let mut terms = Vec::with_capacity(r);
                        for k in 0..r {
                            let c: Vec<f64> = (0..r).map(|l| coeffs.quad[k][l][(s, t)]).collect();
                            let inner = Factor::linear_combination(&c, &ops.iter().collect::<Vec<_>>())?;
                            terms.push(ops[k].tr_matmul(&inner)?);
                        }
                        Factor::linear_combination(&vec![1.0; r], &terms.iter().collect::<Vec<_>>())
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let transposed: Vec<Factor> = ops.iter().map(Factor::transpose).collect();
        let trefs: Vec<&Factor> = transposed.iter().collect();
        let rhs = (0..q)
            .map(|s| {
                let c: Vec<f64> = (0..r).map(|k| coeffs.lin[k][s]).collect();
                Factor::linear_combination(&c, &trefs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { q, dim, upper, rhs })
    }

    fn block(&self, s: usize, t: usize) -> (&Factor, bool) {
        let (a, b, transposed) = if s <= t { (s, t, false) } else { (t, s, true) };
        let idx = a * self.q - a * (a + 1) / 2 + b;
        (&self.upper[idx], transposed)
    }

    /// Dense `qm × qm` system matrix.
    pub fn dense_matrix(&self) -> DenseMatrix {
        let (q, m) = (self.q, self.dim);
        let mut g = DenseMatrix::zeros(q * m, q * m);
        for s in 0..q {
            for t in s..q {
                let (blk, _) = self.block(s, t);
                let d = blk.to_dense();
                g.view_mut((s * m, t * m), (m, m)).copy_from(&d);
                if s != t {
                    g.view_mut((t * m, s * m), (m, m)).copy_from(&d.transpose());
                }
            }
        }
        g
    }

    /// Unconstrained solve; `name` labels the unknown side in errors.
    pub fn solve_dense(&self, name: &'static str) -> Result<(Vec<Factor>, SpdSolve)> {
        let (q, m) = (self.q, self.dim);
        let g = self.dense_matrix();
        let mut h = DenseMatrix::zeros(q * m, m);
        for s in 0..q {
            let d = self.rhs[s].to_dense();
            h.view_mut((s * m, 0), (m, m)).copy_from(&d);
        }
        let (w, how) = solve_spd_then_lu(&g, &h).map_err(|_| Error::DependentFactors { name })?;
        let out = (0..q)
            .map(|s| Factor::Dense(w.view((s * m, 0), (m, m)).into_owned()))
            .collect();
        Ok((out, how))
    }

    /// Column-wise solves restricted to `pattern`: column `j` of every `W_s`
    /// may only hold the rows `J_j`, and its values solve the submatrix system
    /// `G(J, J) w = H(J, j)` over the `q |J_j|` indices `(s, i)`, `i in J_j`.
    /// Columns are independent and collected in index order.
    pub fn solve_sparse(&self, pattern: &SparsityPattern) -> Result<(Vec<Factor>, usize)> {
        let (q, m) = (self.q, self.dim);
        if pattern.dim() != m {
            return Err(Error::Argument(format!(
                "pattern of dimension {} for factors of size {m}",
                pattern.dim()
            )));
        }
        let dense_blocks: Vec<Option<DenseMatrix>> = self
            .upper
            .iter()
            .map(|b| match b {
                Factor::Dense(d) => Some(d.clone()),
                Factor::Sparse(_) => None,
            })
            .collect();
        let columns: Vec<(Vec<f64>, SpdSolve)> = (0..m)
            .into_par_iter()
            .map_init(
                || vec![usize::MAX; m],
                |marker, j| self.solve_column(pattern, j, marker, &dense_blocks),
            )
            .collect();
        let mut values = vec![Vec::with_capacity(pattern.nnz()); q];
        let mut regularized = 0;
        for (j, (x, how)) in columns.into_iter().enumerate() {
            let p = pattern.column(j).len();
            for (s, vals) in values.iter_mut().enumerate() {
                vals.extend_from_slice(&x[s * p..(s + 1) * p]);
            }
            if how != SpdSolve::Cholesky {
                regularized += 1;
            }
        }
        let factors = values
            .into_iter()
            .map(|v| pattern.with_values(v).map(Factor::Sparse))
            .collect::<Result<Vec<_>>>()?;
        Ok((factors, regularized))
    }

    fn solve_column(
        &self,
        pattern: &SparsityPattern,
        j: usize,
        marker: &mut [usize],
        dense_blocks: &[Option<DenseMatrix>],
    ) -> (Vec<f64>, SpdSolve) {
        let q = self.q;
        let rows = pattern.column(j);
        let p = rows.len();
        for (a, &i) in rows.iter().enumerate() {
            marker[i] = a;
        }
        let mut g = DenseMatrix::zeros(q * p, q * p);
        for s in 0..q {
            for t in s..q {
                let idx = s * q - s * (s + 1) / 2 + t;
                let (rs, cs) = (s * p, t * p);
                match (&self.upper[idx], &dense_blocks[idx]) {
                    (_, Some(d)) => {
                        for (b, &c) in rows.iter().enumerate() {
                            for (a, &i) in rows.iter().enumerate() {
                                g[(rs + a, cs + b)] = d[(i, c)];
                            }
                        }
                    }
                    (Factor::Sparse(sp), None) => scatter(sp, rows, marker, &mut g, rs, cs),
                    (Factor::Dense(_), None) => unreachable!("dense blocks are cached"),
                }
                if s != t {
                    for b in 0..p {
                        for a in 0..p {
                            g[(cs + b, rs + a)] = g[(rs + a, cs + b)];
                        }
                    }
                }
            }
        }
        for &i in rows {
            marker[i] = usize::MAX;
        }
        let mut h = DenseMatrix::zeros(q * p, 1);
        for s in 0..q {
            match &self.rhs[s] {
                Factor::Sparse(sp) => sp.gather_column(j, rows, &mut h.as_mut_slice()[s * p..(s + 1) * p]),
                Factor::Dense(d) => {
                    for (a, &i) in rows.iter().enumerate() {
                        h[s * p + a] = d[(i, j)];
                    }
                }
            }
        }
        match solve_spd_or_lu(&g, &h) {
            Ok((x, how)) => (x.as_slice().to_vec(), how),
            // an all-zero reduced system: the column carries no information
            Err(_) => (vec![0.0; q * p], SpdSolve::Ridge),
        }
    }
}

/// Writes `sp(rows, rows)` into `g` at offset `(rs, cs)` using the row
/// position map `marker`.
fn scatter(sp: &SparseMatrix, rows: &[usize], marker: &[usize], g: &mut DenseMatrix, rs: usize, cs: usize) {
    for (b, &c) in rows.iter().enumerate() {
        let (ri, rv) = sp.column(c);
        for (&i, &v) in ri.iter().zip(rv) {
            let a = marker[i];
            if a != usize::MAX {
                g[(rs + a, cs + b)] = v;
            }
        }
    }
}
