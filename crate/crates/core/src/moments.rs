//! Monte-Carlo checks of the input-distribution hypotheses: isotropy, zero
//! third moments, the hypercontractivity constant, and the fourth-moment
//! bound on the Kronecker covariates.

use faer::{Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_feature, FeatureConfig};
use crate::linalg::euclidean_norm;
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::simulate::{sample_inputs, InputDistribution};

const BATCH_ROWS: usize = 1 << 15;

pub const MIN_SAMPLES: usize = 1000;
pub const MIN_DIRECTIONS: usize = 10;

/// Largest covariate dimension the fourth-moment check accepts.
pub const MAX_FEATURE_DIM: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `max_x E^[(u.x)^4] / E^[(u.x)^2]^2` over the sampled directions.
    pub gamma_hat: f64,
    /// `max |E^[u u^T] - I|` entrywise.
    pub isotropy_dev: f64,
    /// `max_x |E^[(u.x)^3]|` over the sampled unit directions.
    pub third_moment_max: f64,
    pub sample_count: usize,
    pub direction_count: usize,
}

/// Empirical second/third/fourth moments of `samples . x` for one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalMoments {
    pub second: f64,
    pub third: f64,
    pub fourth: f64,
}

impl DirectionalMoments {
    pub fn ratio(&self) -> f64 {
        self.fourth / (self.second * self.second)
    }
}

/// `count` uniform directions on the unit sphere in `R^d` followed by the `d`
/// coordinate axes.
pub fn probe_directions<R: Rng + ?Sized>(d: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count + d);
    while dirs.len() < count {
        let g: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let norm = euclidean_norm(&g);
        if norm > 0.0 {
            dirs.push(g.into_iter().map(|v| v / norm).collect());
        }
    }
    for k in 0..d {
        let mut axis = vec![0.0; d];
        axis[k] = 1.0;
        dirs.push(axis);
    }
    dirs
}

/// Moments of the projections of each sample row onto each direction.
pub fn directional_moments(
    samples: MatRef<'_, f64>,
    dirs: &[Vec<f64>],
) -> Result<Vec<DirectionalMoments>> {
    let (n, d) = (samples.nrows(), samples.ncols());
    if n == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if dirs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape(format!("directions must have length {d}")));
    }
    let dir_mat = Mat::<f64>::from_fn(d, dirs.len(), |i, j| dirs[j][i]);
    let mut sums = vec![[0.0f64; 3]; dirs.len()];
    let mut start = 0;
    while start < n {
        let rows = BATCH_ROWS.min(n - start);
        let proj = samples.subrows(start, rows) * &dir_mat;
        for (j, acc) in sums.iter_mut().enumerate() {
            for i in 0..rows {
                let v = proj[(i, j)];
                let v2 = v * v;
                acc[0] += v2;
                acc[1] += v2 * v;
                acc[2] += v2 * v2;
            }
        }
        start += rows;
    }
    let inv = 1.0 / n as f64;
    Ok(sums
        .into_iter()
        .map(|[s2, s3, s4]| DirectionalMoments {
            second: s2 * inv,
            third: s3 * inv,
            fourth: s4 * inv,
        })
        .collect())
}

/// `max |(1/N) V^T V - I|` over the entries, for sample rows `V`.
pub fn isotropy_check(samples: MatRef<'_, f64>) -> Result<f64> {
    let (n, d) = (samples.nrows(), samples.ncols());
    if n == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let gram = samples.transpose() * samples;
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] / n as f64 - target).abs());
        }
    }
    Ok(worst)
}

/// Full moment report for `n_samples` i.i.d. inputs and `n_dirs` random
/// directions (plus the `p` axes).
pub fn moment_report(
    dist: InputDistribution,
    p: usize,
    n_samples: usize,
    n_dirs: usize,
    seed: u64,
) -> Result<MomentReport> {
    if p == 0 || n_samples < MIN_SAMPLES || n_dirs < MIN_DIRECTIONS {
        return Err(Error::InvalidArgument(format!(
            "need p >= 1, at least {MIN_SAMPLES} samples and {MIN_DIRECTIONS} directions"
        )));
    }
    let samples = sample_inputs::<f64, _>(
        dist,
        p,
        n_samples,
        &mut rng_from_seed(derive_seed(seed, &[0])),
    );
    let dirs = probe_directions(p, n_dirs, &mut rng_from_seed(derive_seed(seed, &[1])));
    let moments = directional_moments(samples.as_ref(), &dirs)?;
    let mut gamma_hat = f64::NEG_INFINITY;
    let mut third_moment_max = 0.0f64;
    for m in &moments {
        if !(m.second > 0.0) {
            return Err(Error::DegenerateDistribution(
                "zero empirical second moment along a direction".into(),
            ));
        }
        gamma_hat = gamma_hat.max(m.ratio());
        third_moment_max = third_moment_max.max(m.third.abs());
    }
    Ok(MomentReport {
        gamma_hat,
        isotropy_dev: isotropy_check(samples.as_ref())?,
        third_moment_max,
        sample_count: n_samples,
        direction_count: dirs.len(),
    })
}

/// Sampled hypercontractivity constant.
pub fn empirical_gamma(
    dist: InputDistribution,
    p: usize,
    n_samples: usize,
    n_dirs: usize,
    seed: u64,
) -> Result<f64> {
    Ok(moment_report(dist, p, n_samples, n_dirs, seed)?.gamma_hat)
}

/// `n` covariates built from independent input windows, as rows.
pub fn independent_features(
    dist: InputDistribution,
    cfg: &FeatureConfig,
    n: usize,
    seed: u64,
) -> Result<Mat<f64>> {
    let mut rng = rng_from_seed(seed);
    let (l, p) = (cfg.history(), cfg.input_dim());
    let mut out = Mat::<f64>::zeros(n, cfg.dim());
    for s in 0..n {
        let window = sample_inputs::<f64, _>(dist, p, l + 1, &mut rng);
        for (j, v) in build_feature(window.as_ref(), cfg)?.into_iter().enumerate() {
            out[(s, j)] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourthMomentReport {
    pub max_fourth: f64,
    /// `L (3 v gamma)^(L+1)` with the analytic `gamma` of the distribution.
    pub bound: f64,
    pub satisfied: bool,
    pub dim: usize,
    pub sample_count: usize,
    pub direction_count: usize,
}

/// Largest sampled `E^[(u~ . v)^4]` over unit directions `v`, against
/// `L (3 v gamma)^(L+1)`.
pub fn fourth_moment_feature_check(
    dist: InputDistribution,
    p: usize,
    l: usize,
    n_samples: usize,
    n_dirs: usize,
    seed: u64,
) -> Result<FourthMomentReport> {
    let cfg = FeatureConfig::new(l, p)?;
    if cfg.dim() > MAX_FEATURE_DIM {
        return Err(Error::InvalidArgument(format!(
            "covariate dimension {} exceeds {MAX_FEATURE_DIM}; choose smaller p or L",
            cfg.dim()
        )));
    }
    let feats = independent_features(dist, &cfg, n_samples, derive_seed(seed, &[0]))?;
    let dirs = probe_directions(
        cfg.dim(),
        n_dirs,
        &mut rng_from_seed(derive_seed(seed, &[1])),
    );
    let max_fourth = directional_moments(feats.as_ref(), &dirs)?
        .iter()
        .map(|m| m.fourth)
        .fold(f64::NEG_INFINITY, f64::max);
    let bound = l as f64 * dist.gamma(p).max(3.0).powi(l as i32 + 1);
    Ok(FourthMomentReport {
        max_fourth,
        bound,
        satisfied: max_fourth <= bound,
        dim: cfg.dim(),
        sample_count: n_samples,
        direction_count: dirs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_point_distribution_is_exactly_isotropic() {
        let samples = Mat::<f64>::from_fn(10, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        assert_eq!(isotropy_check(samples.as_ref()).unwrap(), 0.0);
    }

    #[test]
    fn sign_inputs_have_unit_gamma() {
        let report = moment_report(InputDistribution::Sphere, 1, 2000, 10, 4).unwrap();
        assert_relative_eq!(report.gamma_hat, 1.0, epsilon = 1e-12);
        assert_eq!(report.direction_count, 11);
    }

    #[test]
    fn ratio_is_scale_free() {
        let samples =
            sample_inputs::<f64, _>(InputDistribution::Gaussian, 3, 5000, &mut rng_from_seed(9));
        let x = vec![0.3, -0.5, 0.8];
        let scaled: Vec<f64> = x.iter().map(|v| v * 17.5).collect();
        let m = directional_moments(samples.as_ref(), &[x, scaled]).unwrap();
        assert_relative_eq!(m[0].ratio(), m[1].ratio(), max_relative = 1e-12);
    }

    #[test]
    fn axis_direction_reduces_to_scalar_marginal() {
        let report =
            fourth_moment_feature_check(InputDistribution::Sphere, 1, 1, 20_000, 10, 3).unwrap();
        assert_eq!(report.bound, 9.0);
        // sign inputs: every covariate coordinate is +-1
        let feats = independent_features(
            InputDistribution::Sphere,
            &FeatureConfig::new(1, 1).unwrap(),
            100,
            1,
        )
        .unwrap();
        let m = directional_moments(feats.as_ref(), &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(m[0].fourth, 1.0);
        assert!(report.max_fourth <= report.bound);
    }

    #[test]
    fn large_feature_dimension_is_refused() {
        assert!(
            fourth_moment_feature_check(InputDistribution::Gaussian, 2, 5, 100, 10, 0).is_err()
        );
    }
}
