//! Dense SVD, rank truncation and energy-based rank selection.
//!
//! The decomposition is a one-sided (Hestenes) Jacobi SVD. It is slower than
//! bidiagonalisation for large matrices but the cluster matrices here are at
//! most a few thousand rows by `p²` columns, and Jacobi gives singular values
//! to high relative accuracy with a fully deterministic operation order.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Thin SVD `A = U·diag(S)·Vt` with `k = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub vt: Array2<f64>,
}

impl SvdFactors {
    pub fn rank_capacity(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        product(&self.u, &self.s, &self.vt)
    }
}

/// The leading `r` singular triplets of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedFactors {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub vt: Array2<f64>,
}

impl TruncatedFactors {
    /// Assemble factors from parts, checking that the shapes agree.
    pub fn from_parts(u: Array2<f64>, s: Array1<f64>, vt: Array2<f64>) -> Result<Self> {
        let r = s.len();
        if r == 0 || u.ncols() != r || vt.nrows() != r || r > u.nrows().min(vt.ncols()) {
            return Err(Error::InvalidInput(format!(
                "inconsistent factor shapes: U {:?}, S {}, Vt {:?}",
                u.dim(),
                r,
                vt.dim()
            )));
        }
        Ok(Self { u, s, vt })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.vt.ncols()
    }

    /// Number of stored scalars, `r·(rows + cols + 1)`.
    pub fn element_count(&self) -> usize {
        self.rank() * (self.rows() + self.cols() + 1)
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        product(&self.u, &self.s, &self.vt)
    }
}

fn product(u: &Array2<f64>, s: &Array1<f64>, vt: &Array2<f64>) -> Array2<f64> {
    let scaled = u * &s.view().insert_axis(Axis(0));
    scaled.dot(vt)
}

/// Thin singular value decomposition.
///
/// Singular values come back sorted in descending order. Each column of `U`
/// is sign-normalised so that its largest-magnitude entry is positive (the
/// first such entry on ties), with the matching row of `Vt` flipped along.
/// Singular values below `max(rows, cols)·ε·σ₁` are set to zero and the
/// corresponding columns of `U` are completed to an orthonormal set.
pub fn svd(matrix: ArrayView2<'_, f64>) -> Result<SvdFactors> {
    let (rows, cols) = matrix.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput(format!(
            "cannot decompose an empty {rows}x{cols} matrix"
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix contains non-finite entries".into()));
    }

    if rows >= cols {
        let (u, s, v) = jacobi_tall(matrix);
        Ok(normalise_signs(u, s, v.reversed_axes()))
    } else {
        // A^T = U' S V'^T, so A = V' S U'^T.
        let (u_t, s, v_t) = jacobi_tall(matrix.t());
        Ok(normalise_signs(v_t, s, u_t.reversed_axes()))
    }
}

/// One-sided Jacobi on a matrix with `rows >= cols`. Returns `(U, S, V)`
/// with `U` of shape `rows × cols` and `V` of shape `cols × cols`, sorted.
fn jacobi_tall(a: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let (m, n) = a.dim();
    // Column-major working copies: column j lives at [j*m .. (j+1)*m].
    let mut w = vec![0.0; m * n];
    for j in 0..n {
        for i in 0..m {
            w[j * m + i] = a[[i, j]];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let tol = 4.0 * f64::EPSILON;
    let mut norms = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        for (j, norm) in norms.iter_mut().enumerate() {
            *norm = dot(&w[j * m..(j + 1) * m], &w[j * m..(j + 1) * m]);
        }
        let mut rotated = false;
        for i in 0..n.saturating_sub(1) {
            for j in (i + 1)..n {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (head, tail) = w.split_at_mut(j * m);
                let wi = &mut head[i * m..(i + 1) * m];
                let wj = &mut tail[..m];
                let gamma = dot(wi, wj);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate(wi, wj, c, sn);
                let (vh, vtl) = v.split_at_mut(j * n);
                rotate(&mut vh[i * n..(i + 1) * n], &mut vtl[..n], c, sn);
                norms[i] = (alpha - t * gamma).max(0.0);
                norms[j] = beta + t * gamma;
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = (0..n)
        .map(|j| dot(&w[j * m..(j + 1) * m], &w[j * m..(j + 1) * m]).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the column order for exact ties.
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]));

    let smax = order.first().map_or(0.0, |&j| sigma[j]);
    let cutoff = smax * (m.max(n) as f64) * f64::EPSILON;

    let mut u = Array2::<f64>::zeros((m, n));
    let mut vout = Array2::<f64>::zeros((n, n));
    let mut s = Array1::<f64>::zeros(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let sj = sigma[j];
        for r in 0..n {
            vout[[r, k]] = v[j * n + r];
        }
        if sj > cutoff && sj > 0.0 {
            s[k] = sj;
            for r in 0..m {
                u[[r, k]] = w[j * m + r] / sj;
            }
        } else {
            missing.push(k);
        }
    }
    complete_orthonormal(&mut u, &missing);
    (u, s, vout)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let xa = *a;
        let yb = *b;
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fill the listed columns of `u` with unit vectors orthogonal to every other
/// column, drawn from the standard basis by Gram-Schmidt.
fn complete_orthonormal(u: &mut Array2<f64>, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let (m, k) = u.dim();
    let mut filled: Vec<usize> = (0..k).filter(|c| !missing.contains(c)).collect();
    let mut next_candidate = 0;
    for &col in missing {
        let mut best: Option<(f64, Array1<f64>)> = None;
        let mut tried = 0;
        while tried < m {
            let e = next_candidate % m;
            next_candidate += 1;
            tried += 1;
            let mut cand = Array1::<f64>::zeros(m);
            cand[e] = 1.0;
            for _ in 0..2 {
                for &f in &filled {
                    let basis = u.column(f);
                    let proj = basis.dot(&cand);
                    cand.scaled_add(-proj, &basis);
                }
            }
            let norm = cand.dot(&cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
            if norm >= 0.5 {
                break;
            }
        }
        let (norm, cand) = best.expect("at least one candidate");
        u.column_mut(col).assign(&(cand / norm));
        filled.push(col);
    }
}

fn normalise_signs(mut u: Array2<f64>, s: Array1<f64>, mut vt: Array2<f64>) -> SvdFactors {
    for k in 0..s.len() {
        let col = u.column(k);
        let mut pivot = 0.0_f64;
        for &x in col.iter() {
            if x.abs() > pivot.abs() {
                pivot = x;
            }
        }
        if pivot < 0.0 {
            u.column_mut(k).mapv_inplace(|x| -x);
            vt.row_mut(k).mapv_inplace(|x| -x);
        }
    }
    SvdFactors { u, s, vt }
}

/// Keep the leading `r` singular triplets.
pub fn truncate(factors: &SvdFactors, r: usize) -> Result<TruncatedFactors> {
    let max = factors.rank_capacity();
    if r == 0 || r > max {
        return Err(Error::InvalidRank { rank: r, max });
    }
    Ok(TruncatedFactors {
        u: factors.u.slice(s![.., ..r]).to_owned(),
        s: factors.s.slice(s![..r]).to_owned(),
        vt: factors.vt.slice(s![..r, ..]).to_owned(),
    })
}

/// Frobenius norm of the discarded singular values, `sqrt(Σ_{k>r} σ_k²)`.
///
/// By Eckart-Young this is the error of the best rank-`r` approximation.
pub fn tail_error(singular_values: &[f64], r: usize) -> Result<f64> {
    let max = singular_values.len();
    if r == 0 || r > max {
        return Err(Error::InvalidRank { rank: r, max });
    }
    Ok(singular_values[r..].iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Smallest rank whose leading squared singular values hold at least
/// `alpha` of the total energy.
///
/// An all-zero spectrum has no energy to distribute; rank 1 is returned so
/// the factors stay well formed, and a warning is logged.
pub fn rank_for_energy(singular_values: &[f64], alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("energy fraction {alpha} outside (0, 1]")));
    }
    if singular_values.is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    if singular_values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "singular values must be finite and nonnegative".into(),
        ));
    }

    let cumulative: Vec<f64> = singular_values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v * v;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().expect("nonempty");
    if total == 0.0 {
        log::warn!("degenerate spectrum: all singular values are zero, retaining rank 1");
        return Ok(1);
    }
    let target = alpha * total;
    let rank = cumulative
        .iter()
        .position(|&c| c >= target)
        .map_or(singular_values.len(), |i| i + 1);
    Ok(rank)
}

/// Frobenius norm of a matrix.
pub fn frobenius(matrix: ArrayView2<'_, f64>) -> f64 {
    matrix.iter().map(|v| v * v).sum::<f64>().sqrt()
}
