//! Spline bases and quadratic penalties.
//!
//! Univariate smooths are cubic P-splines: a clamped B-spline basis with a
//! second-order difference penalty. Tensor-product smooths take row-wise
//! Kronecker products of two marginal bases with one Kronecker penalty per
//! margin. Construction then proceeds through three reparameterizations:
//!
//! * `absorb_centering` removes the redundant intercept of each smooth by
//!   restricting the coefficients to the sum-to-zero subspace,
//! * `null_space_penalty` builds the projector onto whatever the summed
//!   penalties leave unpenalized, so the implied Gaussian prior is proper,
//! * `diagonalize` eigen-reparameterizes single-penalty smooths so the prior
//!   becomes independent normals (identity precision with trailing zeros).

use crate::error::Error;
use crate::formula::SmoothKind;
use nalgebra::{DMatrix, DVector};

pub const DEGREE: usize = 3;

/// Relative eigenvalue threshold below which a direction counts as unpenalized.
pub const NULL_EIGEN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClampPolicy {
    /// Clamp out-of-range covariates to the training range (default).
    Clamp,
    /// Report an error instead.
    Error,
}

/// Clamped cubic B-spline knot sequence: k + 4 knots, the first and last four
/// pinned to the data range, interior knots at evenly spaced quantiles of the
/// distinct covariate values.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    pub knots: Vec<f64>,
    pub data_range: (f64, f64),
}

impl KnotVector {
    pub fn basis_dim(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }
}

/// Symmetric PSD penalty with its analytic rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub s: DMatrix<f64>,
    pub rank: usize,
    pub label: String,
}

/// Eigen-reparameterization record: new design = old design * U * D^{-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Reparam {
    pub u: DMatrix<f64>,
    /// Diagonal of D: square roots of the positive eigenvalues, then ones.
    pub d: DVector<f64>,
}

/// Identity-structure prior after diagonalization, stored as index ranges:
/// the first `penalized` coefficients share one precision, the trailing
/// `null` coefficients share another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagRanges {
    pub penalized: usize,
    pub null: usize,
}

/// One smooth term's design block with its penalties and every transform
/// needed to rebuild prediction matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothBlock {
    pub label: String,
    pub kind: SmoothKind,
    pub variables: Vec<String>,
    /// Raw basis dimension per margin.
    pub k: Vec<usize>,
    pub x: DMatrix<f64>,
    pub penalties: Vec<PenaltyMatrix>,
    /// Dimension left unpenalized by the sum of the original penalties.
    pub null_dim: usize,
    pub knots: Vec<KnotVector>,
    /// Centering transform Z (p_raw x p_c), set by `absorb_centering`.
    pub centering: Option<DMatrix<f64>>,
    pub reparam: Option<Reparam>,
    pub diag: Option<DiagRanges>,
    /// 0-based column offset of this block in the assembled design.
    pub coef_offset: usize,
    /// 0-based index of this block's first smoothing parameter.
    pub lambda_offset: usize,
    /// Number of smoothing parameters attached to this block.
    pub lambda_count: usize,
}

impl SmoothBlock {
    /// Coefficient count of the block in its current parameterization.
    pub fn p_c(&self) -> usize {
        self.x.ncols()
    }

    /// Rebuild this block's design columns for new covariate values,
    /// applying the stored centering and eigen-reparameterization.
    pub fn design_for(&self, margins: &[Vec<f64>], clamp: ClampPolicy) -> Result<DMatrix<f64>, Error> {
        if margins.len() != self.knots.len() {
            return Err(Error::Data(format!(
                "smooth `{}` expects {} covariates, got {}",
                self.label,
                self.knots.len(),
                margins.len()
            )));
        }
        if clamp == ClampPolicy::Error {
            for (m, kv) in margins.iter().zip(&self.knots) {
                for &v in m {
                    if v < kv.data_range.0 || v > kv.data_range.1 {
                        return Err(Error::OutOfRange {
                            name: self.variables[self.knots.iter().position(|x| std::ptr::eq(x, kv)).unwrap_or(0)].clone(),
                            value: v,
                            lo: kv.data_range.0,
                            hi: kv.data_range.1,
                        });
                    }
                }
            }
        }
        let mut raw = match self.kind {
            SmoothKind::S => bspline_design(&margins[0], &self.knots[0]),
            SmoothKind::Te => {
                let b1 = bspline_design(&margins[0], &self.knots[0]);
                let b2 = bspline_design(&margins[1], &self.knots[1]);
                row_kronecker(&b1, &b2)
            }
        };
        if let Some(z) = &self.centering {
            raw = &raw * z;
        }
        if let Some(rp) = &self.reparam {
            raw = &raw * &rp.u;
            for j in 0..raw.ncols() {
                let d = rp.d[j];
                for i in 0..raw.nrows() {
                    raw[(i, j)] /= d;
                }
            }
        }
        Ok(raw)
    }
}

/// Type-7 (linear interpolation) quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let h = (m - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= m {
        sorted[m - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

pub fn make_knots(x: &[f64], k: usize, column: &str) -> Result<KnotVector, Error> {
    if k < 4 {
        return Err(Error::Data(format!(
            "basis dimension k={k} for `{column}` is below the minimum of 4"
        )));
    }
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::TooFewDistinct {
            column: column.to_string(),
            needed: k,
            found: distinct.len(),
        });
    }
    let lo = distinct[0];
    let hi = distinct[distinct.len() - 1];
    let n_interior = k - 4;
    let mut knots = Vec::with_capacity(k + 4);
    knots.extend(std::iter::repeat(lo).take(4));
    for j in 1..=n_interior {
        knots.push(quantile_sorted(&distinct, j as f64 / (k - 3) as f64));
    }
    knots.extend(std::iter::repeat(hi).take(4));
    Ok(KnotVector {
        knots,
        data_range: (lo, hi),
    })
}

/// Values of the four cubic basis functions that are nonzero at `x`, plus the
/// knot span index, via the Cox-de Boor recursion.
fn bspline_nonzero(x: f64, t: &[f64]) -> (usize, [f64; DEGREE + 1]) {
    let hi = t.len() - DEGREE - 2;
    let span = if x >= t[hi] {
        hi
    } else {
        t.partition_point(|&tv| tv <= x).saturating_sub(1).clamp(DEGREE, hi)
    };
    let mut vals = [0.0; DEGREE + 1];
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    vals[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    (span, vals)
}

/// Evaluate the clamped cubic B-spline basis. Out-of-range abscissae are
/// clamped to the range endpoints.
pub fn bspline_design(x: &[f64], kv: &KnotVector) -> DMatrix<f64> {
    let k = kv.basis_dim();
    let mut out = DMatrix::zeros(x.len(), k);
    for (i, &xi) in x.iter().enumerate() {
        let xc = xi.clamp(kv.data_range.0, kv.data_range.1);
        let (span, vals) = bspline_nonzero(xc, &kv.knots);
        for (r, &v) in vals.iter().enumerate() {
            out[(i, span - DEGREE + r)] = v;
        }
    }
    out
}

/// S = D'D for the order-th difference matrix D ((k-order) x k).
pub fn difference_penalty(k: usize, order: usize, label: &str) -> Result<PenaltyMatrix, Error> {
    if k <= order {
        return Err(Error::Data(format!(
            "difference penalty needs k > order; got k={k}, order={order}"
        )));
    }
    // alternating binomial coefficients, e.g. order 2 -> [1, -2, 1]
    let mut coefs = vec![1.0f64];
    for _ in 0..order {
        let mut next = vec![0.0; coefs.len() + 1];
        for (i, &c) in coefs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c;
        }
        coefs = next;
    }
    let rows = k - order;
    let mut d = DMatrix::zeros(rows, k);
    for i in 0..rows {
        for (j, &c) in coefs.iter().enumerate() {
            d[(i, i + j)] = c;
        }
    }
    Ok(PenaltyMatrix {
        s: d.transpose() * &d,
        rank: rows,
        label: label.to_string(),
    })
}

pub fn build_univariate_smooth(
    x: &[f64],
    k: usize,
    label: &str,
    variable: &str,
) -> Result<SmoothBlock, Error> {
    let kv = make_knots(x, k, variable)?;
    let design = bspline_design(x, &kv);
    let penalty = difference_penalty(k, 2, label)?;
    Ok(SmoothBlock {
        label: label.to_string(),
        kind: SmoothKind::S,
        variables: vec![variable.to_string()],
        k: vec![k],
        x: design,
        penalties: vec![penalty],
        null_dim: 2,
        knots: vec![kv],
        centering: None,
        reparam: None,
        diag: None,
        coef_offset: 0,
        lambda_offset: 0,
        lambda_count: 0,
    })
}

/// Row-wise Kronecker product: row i of the result is kron(a_i, b_i).
pub fn row_kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let (n, ka, kb) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(n, ka * kb);
    for i in 0..n {
        for j1 in 0..ka {
            let av = a[(i, j1)];
            if av == 0.0 {
                continue;
            }
            for j2 in 0..kb {
                out[(i, j1 * kb + j2)] = av * b[(i, j2)];
            }
        }
    }
    out
}

pub fn build_tensor_smooth(
    x1: &[f64],
    x2: &[f64],
    k: (usize, usize),
    label: &str,
    variables: (&str, &str),
) -> Result<SmoothBlock, Error> {
    let kv1 = make_knots(x1, k.0, variables.0)?;
    let kv2 = make_knots(x2, k.1, variables.1)?;
    let b1 = bspline_design(x1, &kv1);
    let b2 = bspline_design(x2, &kv2);
    let design = row_kronecker(&b1, &b2);
    let s1 = difference_penalty(k.0, 2, &format!("{label}:margin1"))?;
    let s2 = difference_penalty(k.1, 2, &format!("{label}:margin2"))?;
    let eye1 = DMatrix::<f64>::identity(k.0, k.0);
    let eye2 = DMatrix::<f64>::identity(k.1, k.1);
    let p1 = PenaltyMatrix {
        s: s1.s.kronecker(&eye2),
        rank: s1.rank * k.1,
        label: s1.label,
    };
    let p2 = PenaltyMatrix {
        s: eye1.kronecker(&s2.s),
        rank: k.0 * s2.rank,
        label: s2.label,
    };
    Ok(SmoothBlock {
        label: label.to_string(),
        kind: SmoothKind::Te,
        variables: vec![variables.0.to_string(), variables.1.to_string()],
        k: vec![k.0, k.1],
        x: design,
        penalties: vec![p1, p2],
        // joint null space of the two Kronecker penalties: 2 x 2 marginal nulls
        null_dim: 4,
        knots: vec![kv1, kv2],
        centering: None,
        reparam: None,
        diag: None,
        coef_offset: 0,
        lambda_offset: 0,
        lambda_count: 0,
    })
}

/// Orthonormal basis of the hyperplane orthogonal to `c`, from a single
/// Householder reflection (deterministic).
fn householder_null_basis(c: &DVector<f64>) -> DMatrix<f64> {
    let p = c.len();
    let norm = c.norm();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = c.clone();
    v[0] += sign * norm;
    let vtv = v.dot(&v);
    let mut z = DMatrix::zeros(p, p - 1);
    for col in 1..p {
        for row in 0..p {
            let id = if row == col { 1.0 } else { 0.0 };
            z[(row, col - 1)] = id - 2.0 * v[row] * v[col] / vtv;
        }
    }
    z
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Absorb the sum-to-zero constraint into the basis: X <- XZ, S <- Z'SZ,
/// where Z spans the null space of the design column sums. Drops one
/// coefficient and one null-space dimension (the constant).
pub fn absorb_centering(mut block: SmoothBlock) -> Result<SmoothBlock, Error> {
    if block.centering.is_some() {
        return Err(Error::AlreadyCentered {
            label: block.label.clone(),
        });
    }
    let n = block.x.nrows();
    let c = DVector::from_fn(block.x.ncols(), |j, _| block.x.column(j).sum());
    let scale = n as f64 * block.x.amax();
    if c.norm() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::AlreadyCentered {
            label: block.label.clone(),
        });
    }
    let z = householder_null_basis(&c);
    block.x = &block.x * &z;
    for pen in &mut block.penalties {
        pen.s = symmetrize(z.transpose() * &pen.s * &z);
    }
    block.null_dim -= 1;
    block.centering = Some(z);
    Ok(block)
}

/// Eigenvalues (descending) and matching eigenvectors of a symmetric matrix.
/// Ties keep the decomposition's native order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_fn(n, |i, _| eig.eigenvalues[idx[i]]);
    let mut vecs = DMatrix::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// S0 = U0 U0' where U0 spans the null space of the summed penalties.
/// Returns the zero matrix (rank 0) when the sum is full rank.
pub fn null_space_penalty(penalties: &[PenaltyMatrix], label: &str) -> PenaltyMatrix {
    assert!(!penalties.is_empty());
    let p = penalties[0].s.nrows();
    let mut sum = DMatrix::zeros(p, p);
    for pen in penalties {
        sum += &pen.s;
    }
    let (vals, vecs) = sym_eigen_desc(&sum);
    let max = vals[0];
    let null_cols: Vec<usize> = if max <= 0.0 {
        (0..p).collect()
    } else {
        (0..p).filter(|&i| vals[i] < NULL_EIGEN_EPS * max).collect()
    };
    let mut s0 = DMatrix::zeros(p, p);
    for &c in &null_cols {
        let u = vecs.column(c);
        for i in 0..p {
            for j in 0..p {
                s0[(i, j)] += u[i] * u[j];
            }
        }
    }
    PenaltyMatrix {
        s: symmetrize(s0),
        rank: null_cols.len(),
        label: label.to_string(),
    }
}

/// Reparameterize a single-penalty smooth so its prior precision becomes the
/// identity with trailing zeros: S = U L U', D = diag(sqrt positive
/// eigenvalues, then ones), X <- X U D^{-1}. Penalized coefficients come
/// first, null-space coefficients last.
pub fn diagonalize(mut block: SmoothBlock) -> Result<SmoothBlock, Error> {
    if block.penalties.len() != 1 {
        return Err(Error::MultiPenaltyDiagonalize {
            label: block.label.clone(),
            count: block.penalties.len(),
        });
    }
    let (vals, u) = sym_eigen_desc(&block.penalties[0].s);
    let p = vals.len();
    let max = vals[0];
    let rank = if max <= 0.0 {
        0
    } else {
        (0..p).filter(|&i| vals[i] >= NULL_EIGEN_EPS * max).count()
    };
    let m = p - rank;
    let d = DVector::from_fn(p, |i, _| if i < rank { vals[i].sqrt() } else { 1.0 });
    block.x = &block.x * &u;
    for j in 0..p {
        let dj = d[j];
        for i in 0..block.x.nrows() {
            block.x[(i, j)] /= dj;
        }
    }
    block.penalties.clear();
    block.reparam = Some(Reparam { u, d });
    block.diag = Some(DiagRanges {
        penalized: rank,
        null: m,
    });
    block.null_dim = m;
    Ok(block)
}
