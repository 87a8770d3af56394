//! The implicit operator `M(X) = sum_k B_k X A_k^T`, i.e. the matrix
//! `sum_k A_k ⊗ B_k` acting on `vec(X)`.
//!
//! Besides application, the operator owns the data every approximation
//! algorithm needs: the vectorized factor stacks `V_A`, `V_B`, their Gram
//! matrices, and (lazily) the cache of all products `A_k^T A_l`, `B_k^T B_l`.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use nalgebra::linalg::QR;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::matrix::{market, DenseMatrix, Factor};

/// Default cap on `n*m` for dense materialization.
pub const MATERIALIZE_CAP: usize = 4096;

#[derive(Debug, Clone)]
pub struct KroneckerOperator {
    a: Vec<Factor>,
    b: Vec<Factor>,
    gram: OnceLock<Arc<GramCache>>,
}

/// Columns `vec(A_k)` and `vec(B_k)`.
#[derive(Debug, Clone)]
pub struct FactorStack {
    pub va: DenseMatrix,
    pub vb: DenseMatrix,
}

/// All pairwise products `A_k^T A_l` and `B_k^T B_l`.
///
/// Memory is `O(r^2 (n^2 + m^2))` for dense factors; sparse factors keep
/// sparse products where they stay below the density promotion threshold.
#[derive(Debug, Clone)]
pub struct GramCache {
    pub ata: Vec<Vec<Factor>>,
    pub btb: Vec<Vec<Factor>>,
}

impl KroneckerOperator {
    /// `a` are the right factors (n×n), `b` the left factors (m×m).
    pub fn new(a: Vec<Factor>, b: Vec<Factor>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::Argument(format!(
                "operator needs r >= 1 factor pairs, got {} right and {} left factors",
                a.len(),
                b.len()
            )));
        }
        let n = a[0].nrows();
        let m = b[0].nrows();
        for (k, f) in a.iter().enumerate() {
            if f.nrows() != n || f.ncols() != n {
                return Err(dim_err(format!("A_{k} is {}x{}, expected {n}x{n}", f.nrows(), f.ncols())));
            }
        }
        for (k, f) in b.iter().enumerate() {
            if f.nrows() != m || f.ncols() != m {
                return Err(dim_err(format!("B_{k} is {}x{}, expected {m}x{m}", f.nrows(), f.ncols())));
            }
        }
        Ok(Self {
            a,
            b,
            gram: OnceLock::new(),
        })
    }

    /// `I_n ⊗ I_m`.
    pub fn identity(n: usize, m: usize) -> Self {
        Self::new(vec![Factor::identity(n)], vec![Factor::identity(m)]).expect("valid identity")
    }

    /// Column dimension of `X` (size of the `A_k`).
    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }

    /// Row dimension of `X` (size of the `B_k`).
    pub fn m(&self) -> usize {
        self.b[0].nrows()
    }

    pub fn r(&self) -> usize {
        self.a.len()
    }

    pub fn right_factors(&self) -> &[Factor] {
        &self.a
    }

    pub fn left_factors(&self) -> &[Factor] {
        &self.b
    }

    fn check_shape(&self, x: &DenseMatrix) -> Result<()> {
        if x.shape() != (self.m(), self.n()) {
            return Err(dim_err(format!(
                "operator acts on {}x{} matrices, got {:?}",
                self.m(),
                self.n(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// `sum_k B_k X A_k^T`, terms summed in index order.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_shape(x)?;
        let mut y = DenseMatrix::zeros(self.m(), self.n());
        for (a, b) in self.a.iter().zip(&self.b) {
            b.sandwich_acc(x, a, 1.0, &mut y);
        }
        Ok(y)
    }

    /// Adjoint application `sum_k B_k^T Y A_k`.
    pub fn apply_adjoint(&self, y: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_shape(y)?;
        let mut x = DenseMatrix::zeros(self.m(), self.n());
        for (a, b) in self.a.iter().zip(&self.b) {
            b.transpose().sandwich_acc(y, &a.transpose(), 1.0, &mut x);
        }
        Ok(x)
    }

    pub fn factor_stacks(&self) -> FactorStack {
        FactorStack {
            va: stack(&self.a),
            vb: stack(&self.b),
        }
    }

    /// `V_A^T V_A`, i.e. the r×r matrix of `<A_k, A_l>_F`.
    pub fn right_gram(&self) -> DenseMatrix {
        gram(&self.a.iter().collect::<Vec<_>>())
    }

    /// `V_B^T V_B`.
    pub fn left_gram(&self) -> DenseMatrix {
        gram(&self.b.iter().collect::<Vec<_>>())
    }

    /// `||sum_k A_k ⊗ B_k||_F`, evaluated from the upper-triangular factors of
    /// the stacks so that no squared quantities lose precision.
    pub fn frobenius_norm(&self) -> f64 {
        let left: Vec<&Factor> = self.a.iter().collect();
        let right: Vec<&Factor> = self.b.iter().collect();
        kron_sum_norm(&left, &right, &vec![1.0; self.r()])
    }

    /// Products `A_k^T A_l`, `B_k^T B_l`, built on first use and shared by
    /// clones made afterwards.
    pub fn gram_cache(&self) -> &GramCache {
        self.gram.get_or_init(|| Arc::new(GramCache::build(&self.a, &self.b)))
    }

    pub fn has_gram_cache(&self) -> bool {
        self.gram.get().is_some()
    }

    /// Dense `sum_k A_k ⊗ B_k` of size `nm × nm`, for tests and diagnostics.
    pub fn materialize(&self, cap: usize) -> Result<DenseMatrix> {
        let size = self.n() * self.m();
        if size > cap {
            return Err(Error::SizeGuard {
                what: "operator materialization",
                required: size,
                cap,
            });
        }
        let mut out = DenseMatrix::zeros(size, size);
        for (a, b) in self.a.iter().zip(&self.b) {
            out += a.to_dense().kronecker(&b.to_dense());
        }
        Ok(out)
    }

    /// Writes each factor as a MatrixMarket file next to a JSON manifest and
    /// returns the manifest path.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = Manifest {
            n: self.n(),
            m: self.m(),
            r: self.r(),
            a: Vec::new(),
            b: Vec::new(),
        };
        for (k, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let an = format!("{prefix}A{}.mtx", k + 1);
            let bn = format!("{prefix}B{}.mtx", k + 1);
            market::write(dir.join(&an), a)?;
            market::write(dir.join(&bn), b)?;
            manifest.a.push(an);
            manifest.b.push(bn);
        }
        let path = dir.join(format!("{prefix}operator.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    /// Reads a manifest; relative factor paths resolve against its directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.a.len() != manifest.r || manifest.b.len() != manifest.r {
            return Err(Error::Argument(format!(
                "manifest declares r = {} but lists {} A and {} B files",
                manifest.r,
                manifest.a.len(),
                manifest.b.len()
            )));
        }
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let read_all = |paths: &[String]| -> Result<Vec<Factor>> {
            paths.iter().map(|p| market::read(base.join(p))).collect()
        };
        let op = Self::new(read_all(&manifest.a)?, read_all(&manifest.b)?)?;
        if op.n() != manifest.n || op.m() != manifest.m {
            return Err(dim_err(format!(
                "manifest declares n = {}, m = {} but factors are {}x{} and {}x{}",
                manifest.n,
                manifest.m,
                op.n(),
                op.n(),
                op.m(),
                op.m()
            )));
        }
        Ok(op)
    }
}

/// On-disk description of an operator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    #[serde(rename = "A")]
    pub a: Vec<String>,
    #[serde(rename = "B")]
    pub b: Vec<String>,
}

impl GramCache {
    fn build(a: &[Factor], b: &[Factor]) -> Self {
        Self {
            ata: products(a),
            btb: products(b),
        }
    }
}

/// `F_k^T F_l` for `k <= l`; the lower half is the exact transpose.
fn products(f: &[Factor]) -> Vec<Vec<Factor>> {
    let r = f.len();
    let mut out: Vec<Vec<Option<Factor>>> = vec![vec![None; r]; r];
    for k in 0..r {
        for l in k..r {
            let p = f[k].tr_matmul(&f[l]).expect("equal factor sizes");
            if l != k {
                out[l][k] = Some(p.transpose());
            }
            out[k][l] = Some(p);
        }
    }
    out.into_iter()
        .map(|row| row.into_iter().map(|p| p.expect("filled")).collect())
        .collect()
}

/// Columns `vec(F_k)`.
pub fn stack(factors: &[Factor]) -> DenseMatrix {
    let rows = factors.first().map_or(0, |f| f.nrows() * f.ncols());
    let mut out = DenseMatrix::zeros(rows, factors.len());
    for (k, f) in factors.iter().enumerate() {
        write_vec(f, 1.0, out.column_mut(k).as_mut_slice());
    }
    out
}

fn write_vec(f: &Factor, alpha: f64, col: &mut [f64]) {
    match f {
        Factor::Dense(d) => {
            for (c, v) in col.iter_mut().zip(d.as_slice()) {
                *c = alpha * v;
            }
        }
        Factor::Sparse(s) => {
            col.iter_mut().for_each(|c| *c = 0.0);
            let rows = s.rows();
            for (i, j, v) in s.triplets() {
                col[j * rows + i] = alpha * v;
            }
        }
    }
}

/// Matrix of Frobenius products `<F_k, F_l>`, symmetric by construction.
pub fn gram(f: &[&Factor]) -> DenseMatrix {
    let r = f.len();
    let mut g = DenseMatrix::zeros(r, r);
    for k in 0..r {
        for l in k..r {
            let v = f[k].frobenius(f[l]);
            g[(k, l)] = v;
            g[(l, k)] = v;
        }
    }
    g
}

/// Cross products `<F_k, G_s>` as a `|f| × |g|` matrix.
pub fn cross_gram(f: &[&Factor], g: &[&Factor]) -> DenseMatrix {
    DenseMatrix::from_fn(f.len(), g.len(), |k, s| f[k].frobenius(g[s]))
}

/// `||sum_i c_i L_i ⊗ R_i||_F` through thin QR factors of the two stacks:
/// with `[vec L_i] = Q_1 R_1` and `[c_i vec R_i] = Q_2 R_2` the norm is
/// `||R_1 R_2^T||_F`. Accurate to roundoff relative to the individual terms,
/// unlike the expanded Gram formula.
pub fn kron_sum_norm(left: &[&Factor], right: &[&Factor], coeffs: &[f64]) -> f64 {
    assert!(left.len() == right.len() && left.len() == coeffs.len());
    if left.is_empty() {
        return 0.0;
    }
    let t = left.len();
    let rl = left[0].nrows() * left[0].ncols();
    let rr = right[0].nrows() * right[0].ncols();
    let mut sl = DenseMatrix::zeros(rl, t);
    let mut sr = DenseMatrix::zeros(rr, t);
    for i in 0..t {
        write_vec(left[i], 1.0, sl.column_mut(i).as_mut_slice());
        write_vec(right[i], coeffs[i], sr.column_mut(i).as_mut_slice());
    }
    let r1 = thin_r(sl);
    let r2 = thin_r(sr);
    (r1 * r2.transpose()).norm()
}

/// Upper factor of a thin QR, padded with zero rows to `cols × cols` when the
/// matrix has fewer rows than columns.
pub(crate) fn thin_r(a: DenseMatrix) -> DenseMatrix {
    let (rows, cols) = a.shape();
    let r = QR::new(a).r();
    if rows >= cols {
        return r;
    }
    let mut out = DenseMatrix::zeros(cols, cols);
    out.view_mut((0, 0), (r.nrows(), cols)).copy_from(&r);
    out
}
