//! Least squares by Householder QR with column pivoting.
//!
//! Every projection the estimators need (onto `VD`, onto `A = [VD | M]`) is
//! applied through a fit: residuals give `(I - H) y` and an auxiliary fit of
//! the all-ones vector gives `e'(I - H)e`. No `n x n` hat matrix is formed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::RANK_TOLERANCE;

/// Leverages closer to one than this make HC weights blow up.
pub const LEVERAGE_LIMIT: f64 = 1.0 - 1e-12;

/// Compact pivoted QR factorization `X P = Q R`.
#[derive(Debug, Clone)]
struct PivotedQr {
    /// Householder vectors; column `j` is non-zero in rows `j..n` only.
    reflectors: DMatrix<f64>,
    /// Scalars `beta_j` with `H_j = I - beta_j v_j v_j'`.
    betas: Vec<f64>,
    r: DMatrix<f64>,
    /// `perm[j]` is the original column placed at position `j`.
    perm: Vec<usize>,
}

impl PivotedQr {
    fn factor(x: &DMatrix<f64>) -> Self {
        let (n, k) = x.shape();
        let mut a = x.clone();
        let mut reflectors = DMatrix::zeros(n, k);
        let mut betas = vec![0.0; k];
        let mut perm: Vec<usize> = (0..k).collect();

        for j in 0..k.min(n) {
            // Pivot on the largest remaining column norm; norms are recomputed
            // rather than downdated.
            let mut pivot = j;
            let mut best = -1.0;
            for c in j..k {
                let norm = a.column(c).rows(j, n - j).norm_squared();
                if norm > best {
                    best = norm;
                    pivot = c;
                }
            }
            if pivot != j {
                a.swap_columns(j, pivot);
                perm.swap(j, pivot);
            }

            let x0 = a[(j, j)];
            let norm = best.sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let mut v = a.column(j).rows(j, n - j).clone_owned();
            v[0] -= alpha;
            let vtv = v.norm_squared();
            if vtv == 0.0 {
                continue;
            }
            let beta = 2.0 / vtv;
            for c in j..k {
                let mut col = a.column_mut(c);
                let mut col = col.rows_mut(j, n - j);
                let s = beta * v.dot(&col);
                col.axpy(-s, &v, 1.0);
            }
            reflectors.column_mut(j).rows_mut(j, n - j).copy_from(&v);
            betas[j] = beta;
        }

        let r = a.view((0, 0), (k.min(n), k)).upper_triangle();
        Self {
            reflectors,
            betas,
            r,
            perm,
        }
    }

    fn cols(&self) -> usize {
        self.perm.len()
    }

    /// Numerical rank from the diagonal of `R`.
    fn rank(&self) -> usize {
        let diag: Vec<f64> = (0..self.r.nrows()).map(|j| self.r[(j, j)].abs()).collect();
        let largest = diag.first().copied().unwrap_or(0.0);
        if largest == 0.0 {
            return 0;
        }
        diag.iter()
            .filter(|&&d| d > RANK_TOLERANCE * largest)
            .count()
    }

    /// `Q' y` in place.
    fn apply_qt(&self, y: &mut DVector<f64>) {
        let n = y.len();
        for j in 0..self.betas.len() {
            if self.betas[j] == 0.0 {
                continue;
            }
            let v = self.reflectors.column(j);
            let v = v.rows(j, n - j);
            let mut tail = y.rows_mut(j, n - j);
            let s = self.betas[j] * v.dot(&tail);
            tail.axpy(-s, &v, 1.0);
        }
    }

    /// `Q y` in place.
    fn apply_q(&self, y: &mut DVector<f64>) {
        let n = y.len();
        for j in (0..self.betas.len()).rev() {
            if self.betas[j] == 0.0 {
                continue;
            }
            let v = self.reflectors.column(j);
            let v = v.rows(j, n - j);
            let mut tail = y.rows_mut(j, n - j);
            let s = self.betas[j] * v.dot(&tail);
            tail.axpy(-s, &v, 1.0);
        }
    }

    /// Solves `R z = b` for the leading `k` entries of `b`.
    fn solve_r(&self, b: &DVector<f64>) -> DVector<f64> {
        let k = self.cols();
        let mut z = b.rows(0, k).clone_owned();
        for i in (0..k).rev() {
            let mut s = z[i];
            for c in i + 1..k {
                s -= self.r[(i, c)] * z[c];
            }
            z[i] = s / self.r[(i, i)];
        }
        z
    }

    /// Solves `R' z = b`.
    fn solve_rt(&self, b: &DVector<f64>) -> DVector<f64> {
        let k = self.cols();
        let mut z = b.clone();
        for i in 0..k {
            let mut s = z[i];
            for c in 0..i {
                s -= self.r[(c, i)] * z[c];
            }
            z[i] = s / self.r[(i, i)];
        }
        z
    }

    /// Thin `Q`, `n x k`.
    fn thin_q(&self, n: usize) -> DMatrix<f64> {
        let k = self.cols();
        let mut q = DMatrix::zeros(n, k);
        for j in 0..k {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            self.apply_q(&mut e);
            q.set_column(j, &e);
        }
        q
    }
}

/// Heteroskedasticity-consistent variance variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HcVariant {
    /// Weights `e_i^2 / (1 - h_ii)`.
    #[serde(rename = "HC2")]
    Hc2,
    /// Weights `e_i^2 / (1 - h_ii)^2`.
    #[serde(rename = "HC3")]
    Hc3,
}

/// Result of an ordinary least-squares fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Intercept first when the fit has one.
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub dof: usize,
    pub labels: Vec<String>,
    pub with_intercept: bool,
    qr: PivotedQr,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn intercept(&self) -> Option<f64> {
        self.with_intercept.then(|| self.coefficients[0])
    }

    /// Slope coefficients (everything after the intercept).
    pub fn slopes(&self) -> Vec<f64> {
        let skip = usize::from(self.with_intercept);
        self.coefficients.iter().skip(skip).copied().collect()
    }

    pub fn sse(&self) -> f64 {
        self.residuals.norm_squared()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        if labels.len() == self.labels.len() {
            self.labels = labels;
        }
        self
    }

    /// Diagonal of the hat matrix of the full design, from the thin `Q`.
    pub fn leverages(&self) -> DVector<f64> {
        let q = self.qr.thin_q(self.n());
        DVector::from_iterator(self.n(), q.row_iter().map(|row| row.norm_squared()))
    }

    /// Weights `w` with `beta_hat[0] = w'y`: the row of `(X'X)^-1 X'` for the intercept.
    fn intercept_weights(&self) -> DVector<f64> {
        let k = self.qr.cols();
        let pos = self
            .qr
            .perm
            .iter()
            .position(|&c| c == 0)
            .expect("intercept column present");
        let mut u = DVector::zeros(k);
        u[pos] = 1.0;
        let z = self.qr.solve_rt(&u);
        let mut w = DVector::zeros(self.n());
        w.rows_mut(0, k).copy_from(&z);
        self.qr.apply_q(&mut w);
        w
    }
}

/// Fits `y ~ [e X]` (or `y ~ X` without intercept) by pivoted QR.
pub fn least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    with_intercept: bool,
) -> Result<FitResult> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: y.len(),
        });
    }
    let k = x.ncols() + usize::from(with_intercept);
    let design = if with_intercept {
        let mut full = DMatrix::zeros(n, k);
        full.column_mut(0).fill(1.0);
        full.columns_mut(1, x.ncols()).copy_from(x);
        full
    } else {
        x.clone()
    };
    let needed = if with_intercept { k } else { k.max(1) };
    if n <= needed && k > 0 {
        return Err(Error::Underdetermined { n, params: k });
    }

    let qr = PivotedQr::factor(&design);
    let rank = qr.rank();
    if rank < k {
        return Err(Error::RankDeficient { rank, expected: k });
    }

    let mut qty = y.clone();
    qr.apply_qt(&mut qty);
    let z = qr.solve_r(&qty);
    let mut coefficients = DVector::zeros(k);
    for (pos, &col) in qr.perm.iter().enumerate() {
        coefficients[col] = z[pos];
    }
    // Residuals = Q (0, (Q'y)[k..]); exactly orthogonal to the columns up to rounding.
    let mut residuals = qty;
    residuals.rows_mut(0, k).fill(0.0);
    qr.apply_q(&mut residuals);

    let mut labels = Vec::with_capacity(k);
    if with_intercept {
        labels.push("(intercept)".to_string());
    }
    labels.extend((1..=x.ncols()).map(|c| format!("x{c}")));

    Ok(FitResult {
        coefficients,
        residuals,
        dof: n - k,
        labels,
        with_intercept,
        qr,
    })
}

/// `e'(I - H)e` for the hat matrix `H` of `block`, by regressing ones on it.
pub fn ones_residual_norm(block: &DMatrix<f64>) -> Result<f64> {
    let n = block.nrows();
    if block.ncols() == 0 {
        return Ok(n as f64);
    }
    let ones = DVector::from_element(n, 1.0);
    Ok(least_squares(block, &ones, false)?.sse())
}

/// Homoskedastic variance of the intercept: `SSE / dof / e'(I - H)e`.
///
/// `block` holds the non-intercept regressors the fit used.
pub fn intercept_variance_classical(fit: &FitResult, block: &DMatrix<f64>) -> Result<f64> {
    if !fit.with_intercept {
        return Err(Error::Config(
            "intercept variance requested for a fit without intercept".into(),
        ));
    }
    if fit.dof == 0 {
        return Err(Error::Underdetermined {
            n: fit.n(),
            params: fit.coefficients.len(),
        });
    }
    let n = fit.n();
    let denom = ones_residual_norm(block)?;
    if denom <= RANK_TOLERANCE * n as f64 {
        return Err(Error::DegenerateDenominator { value: denom, n });
    }
    Ok(fit.sse() / fit.dof as f64 / denom)
}

/// Sandwich variance of the intercept with HC2 or HC3 residual inflation.
pub fn intercept_variance_hc(fit: &FitResult, variant: HcVariant) -> Result<f64> {
    if !fit.with_intercept {
        return Err(Error::Config(
            "intercept variance requested for a fit without intercept".into(),
        ));
    }
    let leverages = fit.leverages();
    if let Some((index, &h)) = leverages
        .iter()
        .enumerate()
        .find(|(_, &h)| h >= LEVERAGE_LIMIT)
    {
        return Err(Error::LeverageOne { index, leverage: h });
    }
    let w = fit.intercept_weights();
    let variance = w
        .iter()
        .zip(fit.residuals.iter())
        .zip(leverages.iter())
        .map(|((wi, ei), hi)| {
            let inflate = match variant {
                HcVariant::Hc2 => 1.0 - hi,
                HcVariant::Hc3 => (1.0 - hi) * (1.0 - hi),
            };
            wi * wi * ei * ei / inflate
        })
        .sum();
    Ok(variance)
}
