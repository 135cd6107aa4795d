//! Minimum-norm least squares for the Markov-like parameters, excitation
//! diagnostics, and the three-term error decomposition.

use std::io::Write;
use std::path::Path;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    f_at, feature_matrix, noise_feature, output_matrix, truncation_bias, FeatureConfig, MultiIndex,
};
use crate::linalg::{self, from_rows, mat_vec, op_norm, singular_values_desc, to_rows};
use crate::model::SystemParams;
use crate::scalar::Real;
use crate::simulate::Trajectory;

/// Slack allowed on the decomposition inequality.
pub const DECOMPOSITION_SLACK: f64 = 1e-8;

/// `G = [D | G_1 | .. | G_L]`, an `m x d` matrix whose columns follow
/// [`FeatureConfig`]'s multi-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovParams<T: Real> {
    g: Mat<T>,
    cfg: FeatureConfig,
}

impl<T: Real> MarkovParams<T> {
    pub fn new(g: Mat<T>, cfg: FeatureConfig) -> Result<Self> {
        if g.ncols() != cfg.dim() {
            return Err(Error::Shape(format!(
                "G has {} columns, expected d = {}",
                g.ncols(),
                cfg.dim()
            )));
        }
        if g.nrows() == 0 {
            return Err(Error::Shape("G has no rows".into()));
        }
        Ok(Self { g, cfg })
    }

    pub fn matrix(&self) -> MatRef<'_, T> {
        self.g.as_ref()
    }

    pub fn into_matrix(self) -> Mat<T> {
        self.g
    }

    pub fn cfg(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn outputs(&self) -> usize {
        self.g.nrows()
    }

    /// The `m x p` block for chain `(i_1, .., i_{ell-1})` of block `ell`.
    pub fn block(&self, ell: usize, chain: &[usize]) -> Result<MatRef<'_, T>> {
        let first = self.cfg.flat_column(&MultiIndex {
            ell,
            chain: chain.to_vec(),
            input: 0,
        })?;
        Ok(self.g.subcols(first, self.cfg.input_dim()))
    }

    /// The feedthrough block `D` (first `p` columns).
    pub fn feedthrough(&self) -> MatRef<'_, T> {
        self.g.subcols(0, self.cfg.input_dim())
    }

    pub fn to_json_doc(&self) -> MarkovJson {
        MarkovJson {
            m: self.g.nrows(),
            p: self.cfg.input_dim(),
            l: self.cfg.history(),
            g: to_rows(self.g.as_ref()),
        }
    }

    pub fn from_json_doc(doc: &MarkovJson) -> Result<Self> {
        let cfg = FeatureConfig::new(doc.l, doc.p)?;
        let g = from_rows(&doc.g)?;
        if g.nrows() != doc.m {
            return Err(Error::Shape(format!(
                "declared m = {} but G has {} rows",
                doc.m,
                g.nrows()
            )));
        }
        Self::new(g, cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json_doc())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_doc(&serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// On-disk form of [`MarkovParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovJson {
    pub m: usize,
    pub p: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
}

/// Minimum-norm solution of `min_G sum_t |y_t - G u~_t|^2` plus the spectrum it came from.
#[derive(Debug, Clone)]
pub struct LstsqSolution<T: Real> {
    /// `m x d`.
    pub coef: Mat<T>,
    /// Singular values of the design matrix, descending.
    pub singular_values: Vec<T>,
    pub rank: usize,
    pub cutoff: T,
    pub warnings: Vec<String>,
}

/// Singular values at or below this are treated as zero:
/// `max(rows, cols) * eps * sigma_max`.
pub fn pinv_cutoff<T: Real>(rows: usize, cols: usize, sigma_max: T) -> T {
    T::of_usize(rows.max(cols)) * T::epsilon() * sigma_max
}

/// `G^ = Y^T U~ (U~^T U~)^+`, computed from one thin SVD of the design matrix.
pub fn lse_raw<T: Real>(design: MatRef<'_, T>, y: MatRef<'_, T>) -> Result<LstsqSolution<T>> {
    if design.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "design has {} rows but targets have {}",
            design.nrows(),
            y.nrows()
        )));
    }
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(Error::Shape("empty design matrix".into()));
    }
    let (rows, cols, m) = (design.nrows(), design.ncols(), y.ncols());
    let svd = design
        .thin_svd()
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    let k = s.nrows();
    let sigma_max = (0..k).map(|i| s[i]).fold(T::zero(), T::max);
    let cutoff = pinv_cutoff(rows, cols, sigma_max);
    let mut warnings = Vec::new();

    let kept: Vec<usize> = (0..k).filter(|&i| s[i] > cutoff).collect();
    let coef = if kept.is_empty() {
        let msg = "design matrix is identically zero; returning G^ = 0".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        Mat::zeros(m, cols)
    } else {
        let (u, v) = (svd.U(), svd.V());
        // (Y^T U_r) diag(1/s_r) V_r^T over the retained directions only
        let mut left = Mat::<T>::zeros(m, kept.len());
        let mut right = Mat::<T>::zeros(kept.len(), cols);
        for (r, &i) in kept.iter().enumerate() {
            let inv = T::one() / s[i];
            for a in 0..m {
                let mut acc = T::zero();
                for t in 0..rows {
                    acc += y[(t, a)] * u[(t, i)];
                }
                left[(a, r)] = acc * inv;
            }
            for c in 0..cols {
                right[(r, c)] = v[(c, i)];
            }
        }
        &left * &right
    };
    if kept.len() < k && !kept.is_empty() {
        log::debug!("design rank {} of {k} after cutoff {cutoff}", kept.len());
    }
    let mut singular_values: Vec<T> = (0..k).map(|i| s[i]).collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(LstsqSolution {
        coef,
        singular_values,
        rank: kept.len(),
        cutoff,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct LseFit<T: Real> {
    pub markov: MarkovParams<T>,
    pub singular_values: Vec<T>,
    pub rank: usize,
    pub warnings: Vec<String>,
}

impl<T: Real> LseFit<T> {
    /// Persistence-of-excitation report from the design's singular values.
    pub fn gram_report(&self, rows: usize) -> GramReport {
        GramReport::from_singular_values(&self.singular_values, rows, self.markov.cfg().dim())
    }
}

/// [`lse_raw`] wrapped into [`MarkovParams`] for the given feature layout.
pub fn lse<T: Real>(
    design: MatRef<'_, T>,
    y: MatRef<'_, T>,
    cfg: &FeatureConfig,
) -> Result<LseFit<T>> {
    if design.ncols() != cfg.dim() {
        return Err(Error::Shape(format!(
            "design has {} columns, expected d = {}",
            design.ncols(),
            cfg.dim()
        )));
    }
    let sol = lse_raw(design, y)?;
    Ok(LseFit {
        markov: MarkovParams::new(sol.coef, *cfg)?,
        singular_values: sol.singular_values,
        rank: sol.rank,
        warnings: sol.warnings,
    })
}

/// Builds the design and targets from a trajectory and fits `G^`.
pub fn fit_markov<T: Real>(traj: &Trajectory<T>, cfg: &FeatureConfig) -> Result<LseFit<T>> {
    let design = feature_matrix(traj, cfg)?;
    let y = output_matrix(traj, cfg.history())?;
    lse(design.as_ref(), y.as_ref(), cfg)
}

/// Smallest eigenvalue of `U~^T U~` against the `(T - L + 1) / 4` threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub lambda_min: f64,
    pub threshold: f64,
    pub satisfied: bool,
    pub rows: usize,
}

impl GramReport {
    fn new(lambda_min: f64, rows: usize) -> Self {
        let threshold = rows as f64 / 4.0;
        Self {
            lambda_min,
            threshold,
            satisfied: lambda_min >= threshold,
            rows,
        }
    }

    /// `lambda_min = sigma_min^2` when the design has at least as many rows as
    /// columns, and 0 otherwise.
    pub fn from_singular_values<T: Real>(sv: &[T], rows: usize, cols: usize) -> Self {
        let lambda_min = if rows < cols {
            0.0
        } else {
            sv.iter()
                .copied()
                .fold(T::infinity(), T::min)
                .as_f64()
                .powi(2)
        };
        Self::new(lambda_min, rows)
    }
}

/// Symmetric eigensolve of the Gram matrix.
pub fn gram_min_eig<T: Real>(design: MatRef<'_, T>) -> Result<GramReport> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(Error::Shape("empty design matrix".into()));
    }
    let gram = design.transpose() * design;
    let eig = gram
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let lambda_min = eig.iter().copied().fold(T::infinity(), T::min);
    Ok(GramReport::new(lambda_min.as_f64(), design.nrows()))
}

/// `|G^ - G|_op`.
pub fn estimation_error<T: Real>(g_hat: MatRef<'_, T>, g_true: MatRef<'_, T>) -> Result<T> {
    linalg::check_same_shape(g_hat, g_true, "estimation error")?;
    op_norm((g_hat - g_true).as_ref())
}

/// Rows `(F_t w~_t)^T` and `eps_t^T` for `t = L..=T`.
pub fn residual_components<T: Real>(
    sys: &SystemParams<T>,
    traj: &Trajectory<T>,
    l: usize,
) -> Result<(Mat<T>, Mat<T>)> {
    let m = sys.dims().m;
    if traj.len() < l + 1 {
        return Err(Error::InvalidArgument(format!(
            "horizon shorter than L = {l}"
        )));
    }
    let rows = traj.len() - l;
    let mut noise = Mat::<T>::zeros(rows, m);
    let mut bias = Mat::<T>::zeros(rows, m);
    for s in 0..rows {
        let t = l + s;
        let f = f_at(sys, traj, t, l)?;
        let fw = mat_vec(f.as_ref(), &noise_feature(traj, t, l)?);
        let eps = truncation_bias(sys, traj, t, l)?;
        for i in 0..m {
            noise[(s, i)] = fw[i];
            bias[(s, i)] = eps[i];
        }
    }
    Ok((noise, bias))
}

/// The terms of `|G^ - G| <= |(U~^T U~)^+| (|sum u~ (F w~)^T| + |sum u~ eps^T|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// `|(U~^T U~)^+|_op`; infinite when the Gram matrix is singular.
    pub excitation: f64,
    pub multiplier: f64,
    pub truncation: f64,
    pub bound: f64,
    pub actual: f64,
    pub gram_singular: bool,
    pub inequality_holds: bool,
}

pub fn error_decomposition<T: Real>(
    sys: &SystemParams<T>,
    traj: &Trajectory<T>,
    cfg: &FeatureConfig,
    g_true: &MarkovParams<T>,
    g_hat: &MarkovParams<T>,
) -> Result<ErrorDecomposition> {
    let l = cfg.history();
    let design = feature_matrix(traj, cfg)?;
    let (rows, cols) = (design.nrows(), design.ncols());
    let sv = singular_values_desc(design.as_ref())?;
    let sigma_max = sv.first().copied().unwrap_or_else(T::zero);
    let sigma_min = sv.last().copied().unwrap_or_else(T::zero);
    let gram_singular = rows < cols || sigma_min <= pinv_cutoff(rows, cols, sigma_max);
    let excitation = if gram_singular {
        f64::INFINITY
    } else {
        1.0 / sigma_min.as_f64().powi(2)
    };

    let (noise, bias) = residual_components(sys, traj, l)?;
    let multiplier = op_norm((design.transpose() * &noise).as_ref())?.as_f64();
    let truncation = op_norm((design.transpose() * &bias).as_ref())?.as_f64();
    let actual = estimation_error(g_hat.matrix(), g_true.matrix())?.as_f64();
    let bound = excitation * (multiplier + truncation);
    let inequality_holds = !gram_singular && actual <= bound + DECOMPOSITION_SLACK;
    Ok(ErrorDecomposition {
        excitation,
        multiplier,
        truncation,
        bound,
        actual,
        gram_singular,
        inequality_holds,
    })
}

/// One line of a decomposition report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub excitation: f64,
    pub multiplier: f64,
    pub truncation: f64,
    pub bound: f64,
    pub actual: f64,
}

impl DecompositionRow {
    pub fn new(seed: u64, horizon: usize, l: usize, d: &ErrorDecomposition) -> Self {
        Self {
            seed,
            horizon,
            l,
            excitation: d.excitation,
            multiplier: d.multiplier,
            truncation: d.truncation,
            bound: d.bound,
            actual: d.actual,
        }
    }
}

/// CSV with columns `seed,T,L,excitation,multiplier,truncation,bound,actual`.
pub fn write_decomposition_csv<W: Write>(out: W, rows: &[DecompositionRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_consistent_system() {
        let g = Mat::<f64>::from_fn(2, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let design = Mat::<f64>::from_fn(12, 4, |t, j| {
            ((t * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * (t * j) as f64
        });
        let y = &design * g.transpose();
        let sol = lse_raw(design.as_ref(), y.as_ref()).unwrap();
        assert!(linalg::max_abs_diff(sol.coef.as_ref(), g.as_ref()) < 1e-8);
        assert_eq!(sol.rank, 4);
    }

    #[test]
    fn zero_design_returns_zero_with_warning() {
        let design = Mat::<f64>::zeros(5, 3);
        let y = Mat::<f64>::from_fn(5, 2, |i, j| (i + j) as f64);
        let sol = lse_raw(design.as_ref(), y.as_ref()).unwrap();
        assert_eq!(sol.coef.norm_l2(), 0.0);
        assert_eq!(sol.rank, 0);
        assert_eq!(sol.warnings.len(), 1);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let design = Mat::<f64>::zeros(5, 3);
        let y = Mat::<f64>::zeros(4, 2);
        assert!(matches!(
            lse_raw(design.as_ref(), y.as_ref()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            estimation_error(
                Mat::<f64>::zeros(2, 3).as_ref(),
                Mat::<f64>::zeros(3, 2).as_ref()
            ),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gram_of_single_row_is_singular() {
        let design = Mat::<f64>::from_fn(1, 3, |_, j| j as f64 + 1.0);
        let report = gram_min_eig(design.as_ref()).unwrap();
        assert!(report.lambda_min.abs() < 1e-12);
        assert!(!report.satisfied);
        assert_eq!(report.threshold, 0.25);
    }

    #[test]
    fn gram_of_scaled_orthonormal_rows() {
        // 2 * (a rotation): rows orthonormal up to the factor 2
        let (c, s) = (0.6, 0.8);
        let design = Mat::<f64>::from_fn(2, 2, |i, j| 2.0 * [[c, -s], [s, c]][i][j]);
        let report = gram_min_eig(design.as_ref()).unwrap();
        assert_relative_eq!(report.lambda_min, 4.0, epsilon = 1e-12);
        let via_svd =
            GramReport::from_singular_values(&singular_values_desc(design.as_ref()).unwrap(), 2, 2);
        assert_relative_eq!(via_svd.lambda_min, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn error_of_rank_one_difference() {
        let a = [1.0, -2.0, 2.0];
        let b = [3.0, 4.0];
        let g = Mat::<f64>::from_fn(3, 2, |i, j| 0.3 * (i + j) as f64);
        let g_hat = Mat::<f64>::from_fn(3, 2, |i, j| g[(i, j)] + a[i] * b[j]);
        assert_relative_eq!(
            estimation_error(g_hat.as_ref(), g.as_ref()).unwrap(),
            15.0,
            epsilon = 1e-12
        );
        assert_eq!(estimation_error(g.as_ref(), g.as_ref()).unwrap(), 0.0);
    }

    #[test]
    fn markov_json_round_trip() {
        let cfg = FeatureConfig::new(2, 2).unwrap();
        let g = Mat::<f64>::from_fn(2, cfg.dim(), |i, j| (i * 100 + j) as f64 * 0.5);
        let mp = MarkovParams::new(g, cfg).unwrap();
        let back = MarkovParams::<f64>::from_json_doc(&mp.to_json_doc()).unwrap();
        assert_eq!(mp, back);
        assert!(MarkovParams::new(Mat::<f64>::zeros(2, 5), cfg).is_err());
    }

    #[test]
    fn decomposition_csv_header() {
        let d = ErrorDecomposition {
            excitation: 1.0,
            multiplier: 2.0,
            truncation: 3.0,
            bound: 5.0,
            actual: 0.5,
            gram_singular: false,
            inequality_holds: true,
        };
        let mut buf = Vec::new();
        write_decomposition_csv(&mut buf, &[DecompositionRow::new(7, 100, 3, &d)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("seed,T,L,excitation,multiplier,truncation,bound,actual\n7,100,3,")
        );
    }
}
