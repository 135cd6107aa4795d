//! Ground-truth Markov-like parameters and realization recovery by Ho-Kalman.
//!
//! The default recovery builds every `A_k` in one state basis: the Hankel
//! matrix of `C A_0^d B` fixes the observability/controllability factors
//! `O`, `Q`, and each `A_k` is read off the block matrix
//! `[C A_0^i A_k A_0^j B]_{ij} = O A_k Q`. [`ho_kalman_per_input`] runs the
//! classic algorithm separately on each sequence `C A_k^d B`, which recovers
//! every `(A_k, B, C)` in its own basis.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::MarkovParams;
use crate::features::FeatureConfig;
use crate::linalg::op_norm;
use crate::model::SystemParams;
use crate::scalar::Real;

/// Minimum acceptable `sigma_n / sigma_{n+1}` before a warning is raised.
pub const GAP_WARNING_RATIO: f64 = 10.0;

/// `G` for a known system: the block at chain `(i_1, .., i_{l-1})` is
/// `C A_{i_1} .. A_{i_{l-1}} B` and the first `p` columns are `D`.
pub fn true_markov<T: Real>(sys: &SystemParams<T>, l: usize) -> Result<MarkovParams<T>> {
    let dims = sys.dims();
    let cfg = FeatureConfig::new(l, dims.p)?;
    let (m, p) = (dims.m, dims.p);
    let mut g = Mat::<T>::zeros(m, cfg.dim());
    g.as_mut().submatrix_mut(0, 0, m, p).copy_from(sys.d());

    // left products C A_{i_1} .. A_{i_r} for every chain of length r, chain order
    let mut level: Vec<Mat<T>> = vec![sys.c().to_owned()];
    for ell in 1..=l {
        let mut col = cfg.offset(ell);
        for left in &level {
            let block = left * sys.b();
            g.as_mut().submatrix_mut(0, col, m, p).copy_from(&block);
            col += p;
        }
        if ell < l {
            level = level
                .iter()
                .flat_map(|left| sys.a().iter().map(move |ak| left * ak))
                .collect();
        }
    }
    MarkovParams::new(g, cfg)
}

/// `[CB, C A_k B, .., C A_k^{L-1} B]` read from the chains `(k, .., k)`.
pub fn extract_powers<T: Real>(g: &MarkovParams<T>, k: usize) -> Result<Vec<Mat<T>>> {
    let p = g.cfg().input_dim();
    if k > p {
        return Err(Error::InvalidArgument(format!(
            "index k = {k} outside 0..={p}"
        )));
    }
    (1..=g.cfg().history())
        .map(|ell| g.block(ell, &vec![k; ell - 1]).map(|b| b.to_owned()))
        .collect()
}

/// The block estimating `C A_0^i A_k A_0^j B` (chain `0^i, k, 0^j`).
pub fn extract_mixed<T: Real>(g: &MarkovParams<T>, k: usize, i: usize, j: usize) -> Result<Mat<T>> {
    let (p, l) = (g.cfg().input_dim(), g.cfg().history());
    if k > p {
        return Err(Error::InvalidArgument(format!(
            "index k = {k} outside 0..={p}"
        )));
    }
    if i + j + 1 > l.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "chain length i + j + 1 = {} exceeds L - 1 = {}",
            i + j + 1,
            l.saturating_sub(1)
        )));
    }
    let mut chain = vec![0; i + j + 1];
    chain[i] = k;
    Ok(g.block(i + j + 2, &chain)?.to_owned())
}

/// Block-Hankel matrix with `block(i, j)` depending only on `i + j`.
#[derive(Debug, Clone)]
pub struct HankelMatrix<T: Real> {
    pub data: Mat<T>,
    pub n1: usize,
    pub n2: usize,
    pub block_rows: usize,
    pub block_cols: usize,
}

impl<T: Real> HankelMatrix<T> {
    /// `block(i, j) = markov[i + j + shift]`.
    pub fn from_sequence(markov: &[Mat<T>], n1: usize, n2: usize, shift: usize) -> Result<Self> {
        Self::from_fn(n1, n2, |i, j| {
            markov.get(i + j + shift).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "Markov sequence too short for degree {}",
                    i + j + shift
                ))
            })
        })
    }

    /// Block matrix from an arbitrary block generator (used for the `A_k`
    /// sandwiches, which are not Hankel in general).
    pub fn from_fn(
        n1: usize,
        n2: usize,
        mut block: impl FnMut(usize, usize) -> Result<Mat<T>>,
    ) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidArgument(
                "Hankel block dimensions must be positive".into(),
            ));
        }
        let first = block(0, 0)?;
        let (br, bc) = (first.nrows(), first.ncols());
        let mut data = Mat::<T>::zeros(n1 * br, n2 * bc);
        for i in 0..n1 {
            for j in 0..n2 {
                let b = if i == 0 && j == 0 {
                    first.clone()
                } else {
                    block(i, j)?
                };
                if b.nrows() != br || b.ncols() != bc {
                    return Err(Error::Shape("inconsistent block shapes".into()));
                }
                data.as_mut()
                    .submatrix_mut(i * br, j * bc, br, bc)
                    .copy_from(&b);
            }
        }
        Ok(Self {
            data,
            n1,
            n2,
            block_rows: br,
            block_cols: bc,
        })
    }

    pub fn block(&self, i: usize, j: usize) -> MatRef<'_, T> {
        self.data.submatrix(
            i * self.block_rows,
            j * self.block_cols,
            self.block_rows,
            self.block_cols,
        )
    }
}

/// A recovered system plus the diagnostics of the factorization.
#[derive(Debug, Clone)]
pub struct Realization<T: Real> {
    pub system: SystemParams<T>,
    /// Singular values of the `A_0` Hankel matrix, descending.
    pub hankel_singular_values: Vec<T>,
    pub warnings: Vec<String>,
}

/// Hankel block counts; both default to the model order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HankelShape {
    pub n1: usize,
    pub n2: usize,
}

struct Factorization<T: Real> {
    /// `O^+ = S^{-1/2} U_n^T`
    obs_pinv: Mat<T>,
    /// `Q^+ = V_n S^{-1/2}`
    ctrb_pinv: Mat<T>,
    c_hat: Mat<T>,
    b_hat: Mat<T>,
    singular_values: Vec<T>,
    warnings: Vec<String>,
}

fn factorize<T: Real>(h: &HankelMatrix<T>, n: usize) -> Result<Factorization<T>> {
    let data = h.data.as_ref();
    let svd = data
        .thin_svd()
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    let singular_values: Vec<T> = order.iter().map(|&i| s[i]).collect();
    let sigma_max = singular_values.first().copied().unwrap_or_else(T::zero);
    let tol = T::of_usize(data.nrows().max(data.ncols())) * T::epsilon() * sigma_max;
    let rank = singular_values.iter().filter(|&&v| v > tol).count();
    if rank < n {
        return Err(Error::RankDeficient {
            observed: rank,
            requested: n,
        });
    }
    let mut warnings = Vec::new();
    if let Some(&next) = singular_values.get(n) {
        let gap = singular_values[n - 1] / next;
        if gap < T::of(GAP_WARNING_RATIO) {
            let msg = format!(
                "weak rank-{n} gap in Hankel spectrum: sigma_{n} / sigma_{} = {:.3e}; the model order may be wrong",
                n + 1,
                gap.as_f64()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let (u, v) = (svd.U(), svd.V());
    let (rows, cols) = (data.nrows(), data.ncols());
    let mut obs = Mat::<T>::zeros(rows, n);
    let mut ctrb = Mat::<T>::zeros(n, cols);
    let mut obs_pinv = Mat::<T>::zeros(n, rows);
    let mut ctrb_pinv = Mat::<T>::zeros(cols, n);
    for (r, &i) in order.iter().take(n).enumerate() {
        let root = s[i].sqrt();
        for a in 0..rows {
            obs[(a, r)] = u[(a, i)] * root;
            obs_pinv[(r, a)] = u[(a, i)] / root;
        }
        for b in 0..cols {
            ctrb[(r, b)] = v[(b, i)] * root;
            ctrb_pinv[(b, r)] = v[(b, i)] / root;
        }
    }
    Ok(Factorization {
        c_hat: obs.subrows(0, h.block_rows).to_owned(),
        b_hat: ctrb.subcols(0, h.block_cols).to_owned(),
        obs_pinv,
        ctrb_pinv,
        singular_values,
        warnings,
    })
}

fn check_budget<T: Real>(g: &MarkovParams<T>, n: usize, shape: HankelShape) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "model order must be positive".into(),
        ));
    }
    let l = g.cfg().history();
    if shape.n1 + shape.n2 > l {
        return Err(Error::InvalidArgument(format!(
            "Hankel blocks {}x{} need Markov degrees up to {}, but L = {l} only provides up to {}",
            shape.n1,
            shape.n2,
            shape.n1 + shape.n2 - 1,
            l - 1
        )));
    }
    Ok(())
}

/// Shared-basis Ho-Kalman with `n1 = n2 = n`.
pub fn ho_kalman<T: Real>(g: &MarkovParams<T>, n: usize) -> Result<Realization<T>> {
    ho_kalman_with(g, n, HankelShape { n1: n, n2: n })
}

pub fn ho_kalman_with<T: Real>(
    g: &MarkovParams<T>,
    n: usize,
    shape: HankelShape,
) -> Result<Realization<T>> {
    check_budget(g, n, shape)?;
    let p = g.cfg().input_dim();
    let HankelShape { n1, n2 } = shape;
    let drift = extract_powers(g, 0)?;
    let h = HankelMatrix::from_sequence(&drift, n1, n2, 0)?;
    let h_shift = HankelMatrix::from_sequence(&drift, n1, n2, 1)?;
    let fact = factorize(&h, n)?;

    let sandwich = |block: &Mat<T>| -> Mat<T> { &fact.obs_pinv * block * &fact.ctrb_pinv };
    let mut a = Vec::with_capacity(p + 1);
    a.push(sandwich(&h_shift.data));
    for k in 1..=p {
        let hk = HankelMatrix::from_fn(n1, n2, |i, j| extract_mixed(g, k, i, j))?;
        a.push(sandwich(&hk.data));
    }
    let system = SystemParams::new(a, fact.b_hat, fact.c_hat, g.feedthrough().to_owned())?;
    Ok(Realization {
        system,
        hankel_singular_values: fact.singular_values,
        warnings: fact.warnings,
    })
}

/// `(A_k, B, C)` recovered from the sequence `C A_k^d B` alone, in its own basis.
#[derive(Debug, Clone)]
pub struct PerInputRealization<T: Real> {
    pub k: usize,
    pub a: Mat<T>,
    pub b: Mat<T>,
    pub c: Mat<T>,
    pub hankel_singular_values: Vec<T>,
    pub warnings: Vec<String>,
}

pub fn ho_kalman_per_input<T: Real>(
    g: &MarkovParams<T>,
    n: usize,
) -> Result<Vec<PerInputRealization<T>>> {
    let shape = HankelShape { n1: n, n2: n };
    check_budget(g, n, shape)?;
    (0..=g.cfg().input_dim())
        .map(|k| {
            let seq = extract_powers(g, k)?;
            let h = HankelMatrix::from_sequence(&seq, n, n, 0)?;
            let h_shift = HankelMatrix::from_sequence(&seq, n, n, 1)?;
            let fact = factorize(&h, n)?;
            Ok(PerInputRealization {
                k,
                a: &fact.obs_pinv * &h_shift.data * &fact.ctrb_pinv,
                b: fact.b_hat,
                c: fact.c_hat,
                hankel_singular_values: fact.singular_values,
                warnings: fact.warnings,
            })
        })
        .collect()
}

/// How well a system reproduces a given `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovMismatch {
    /// `|G(system) - G|_op`
    pub absolute: f64,
    /// `absolute / |G|_op`
    pub relative: f64,
    /// Largest entrywise deviation.
    pub max_entry: f64,
}

pub fn markov_mismatch<T: Real>(
    system: &SystemParams<T>,
    g: &MarkovParams<T>,
) -> Result<MarkovMismatch> {
    let rebuilt = true_markov(system, g.cfg().history())?;
    crate::linalg::check_same_shape(rebuilt.matrix(), g.matrix(), "Markov mismatch")?;
    let diff = rebuilt.matrix() - g.matrix();
    let absolute = op_norm(diff.as_ref())?.as_f64();
    let scale = op_norm(g.matrix())?.as_f64();
    let relative = if scale > 0.0 {
        absolute / scale
    } else {
        absolute
    };
    let max_entry = crate::linalg::max_abs_diff(rebuilt.matrix(), g.matrix()).as_f64();
    Ok(MarkovMismatch {
        absolute,
        relative,
        max_entry,
    })
}
