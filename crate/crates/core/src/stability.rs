//! Sampled evidence for uniform stability.
//!
//! Uniform stability asks for bounds over *all* input sequences in the input
//! set; everything here looks at finitely many sampled sequences, so the
//! reports are evidence, not proofs.
//!
//! Products are renormalized at every step and their scale carried as a log,
//! which keeps depth-64 products with small radii away from underflow.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::build_f;
use crate::linalg::{op_norm, spectral_radius};
use crate::model::SystemParams;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Real;
use crate::simulate::{sample_input, InputDistribution};

pub const DEFAULT_DEPTH: usize = 64;
pub const DEFAULT_SAMPLES: usize = 256;

/// Log-norm (and optionally log spectral radius) of one sampled product at one depth.
#[derive(Debug, Clone, Copy)]
struct ProductStat {
    depth: usize,
    log_norm: f64,
    log_radius: f64,
}

/// Walks `samples` independent input sequences of length `depth_max`, forming
/// the left-to-right products `M_1 M_2 .. M_k` with `M_i = u_i o A`.
///
/// Sample `s` draws from its own stream, so a larger `depth_max` or `samples`
/// only ever adds products to the visited set.
fn visit_products<T: Real>(
    sys: &SystemParams<T>,
    dist: InputDistribution,
    depth_max: usize,
    samples: usize,
    seed: u64,
    with_radius: bool,
    mut visit: impl FnMut(usize, ProductStat),
) -> Result<()> {
    if depth_max == 0 || samples == 0 {
        return Err(Error::InvalidArgument(
            "depth_max and samples must be positive".into(),
        ));
    }
    let dims = sys.dims();
    for s in 0..samples {
        let mut rng = rng_from_seed(derive_seed(seed, &[s as u64]));
        let mut prod = Mat::<T>::identity(dims.n, dims.n);
        let mut log_scale = 0.0f64;
        for depth in 1..=depth_max {
            let u: Vec<T> = sample_input(dist, dims.p, &mut rng);
            prod = &prod * sys.input_operator(&u);
            let frob = prod.norm_l2();
            if frob == T::zero() {
                // the product vanished; it stays zero at every later depth
                for d in depth..=depth_max {
                    visit(
                        s,
                        ProductStat {
                            depth: d,
                            log_norm: f64::NEG_INFINITY,
                            log_radius: f64::NEG_INFINITY,
                        },
                    );
                }
                break;
            }
            if !frob.is_finite() {
                return Err(Error::ProductOverflow { depth });
            }
            let inv = T::one() / frob;
            for j in 0..dims.n {
                for i in 0..dims.n {
                    prod[(i, j)] *= inv;
                }
            }
            log_scale += frob.as_f64().ln();
            if !log_scale.is_finite() {
                return Err(Error::ProductOverflow { depth });
            }
            let log_norm = log_scale + op_norm(prod.as_ref())?.as_f64().ln();
            let log_radius = if with_radius {
                log_scale + spectral_radius(prod.as_ref())?.as_f64().ln()
            } else {
                f64::NAN
            };
            visit(
                s,
                ProductStat {
                    depth,
                    log_norm,
                    log_radius,
                },
            );
        }
    }
    Ok(())
}

/// Sampled joint-spectral-radius estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsrEstimate {
    /// `max rho(M_1 .. M_k)^(1/k)` over every sampled product and depth. Each
    /// term is a lower bound on the joint spectral radius, so this is too.
    pub lower: f64,
    /// `max |M_1 .. M_k|^(1/k)` over the sampled products at `k = depth_max`:
    /// the sampled version of the depth-k norm bound, which approaches the
    /// joint spectral radius from above as depth grows.
    pub norm_bound: f64,
    pub depth_max: usize,
    pub samples: usize,
}

pub fn jsr_estimate<T: Real>(
    sys: &SystemParams<T>,
    dist: InputDistribution,
    depth_max: usize,
    samples: usize,
    seed: u64,
) -> Result<JsrEstimate> {
    let mut lower = f64::NEG_INFINITY;
    let mut norm_bound = f64::NEG_INFINITY;
    visit_products(sys, dist, depth_max, samples, seed, true, |_, st| {
        let k = st.depth as f64;
        lower = lower.max(st.log_radius / k);
        if st.depth == depth_max {
            norm_bound = norm_bound.max(st.log_norm / k);
        }
    })?;
    Ok(JsrEstimate {
        lower: lower.exp(),
        norm_bound: norm_bound.exp(),
        depth_max,
        samples,
    })
}

/// `max_k max_samples |M_1 .. M_k| / rho^k` for `k = 1..=depth_max`.
pub fn phi_estimate<T: Real>(
    sys: &SystemParams<T>,
    dist: InputDistribution,
    rho: f64,
    depth_max: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in (0, 1), got {rho}"
        )));
    }
    let log_rho = rho.ln();
    let mut best = f64::NEG_INFINITY;
    visit_products(sys, dist, depth_max, samples, seed, false, |_, st| {
        best = best.max(st.log_norm - st.depth as f64 * log_rho);
    })?;
    Ok(best.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Sampled lower estimate of the joint spectral radius.
    pub rho_hat: f64,
    /// Sampled depth-`depth_max` norm bound.
    pub rho_norm_bound: f64,
    /// `max(1, phi_hat(rho))`; the empty product is included.
    pub kappa_hat: f64,
    pub rho: f64,
    pub kappa: f64,
    pub depth_max: usize,
    pub samples: usize,
    /// `rho_hat < rho && kappa_hat <= kappa` over the sampled products.
    pub certified: bool,
}

impl StabilityReport {
    pub fn summary(&self) -> String {
        format!(
            "sampled stability evidence (not a proof)\n  \
             JSR lower estimate  rho_hat      = {:.6}\n  \
             depth-{} norm bound               = {:.6}\n  \
             transient constant  kappa_hat    = {:.6}  (at rho = {})\n  \
             requested           (rho, kappa) = ({}, {})\n  \
             samples per depth               = {}\n  \
             certified on sampled set         = {}",
            self.rho_hat,
            self.depth_max,
            self.rho_norm_bound,
            self.kappa_hat,
            self.rho,
            self.rho,
            self.kappa,
            self.samples,
            if self.certified { "yes" } else { "no" }
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub fn certify_uniform_stability<T: Real>(
    sys: &SystemParams<T>,
    dist: InputDistribution,
    rho: f64,
    kappa: f64,
    depth_max: usize,
    samples: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let jsr = jsr_estimate(sys, dist, depth_max, samples, seed)?;
    let phi = phi_estimate(sys, dist, rho, depth_max, samples, seed)?;
    let kappa_hat = phi.max(1.0);
    Ok(StabilityReport {
        rho_hat: jsr.lower,
        rho_norm_bound: jsr.norm_bound,
        kappa_hat,
        rho,
        kappa,
        depth_max,
        samples,
        certified: jsr.lower < rho && kappa_hat <= kappa,
    })
}

/// Tries `rho` on a grid above the sampled JSR estimate and pairs it with the
/// sampled `kappa_hat`. Returns the first certified pair, if any.
pub fn search_certificate<T: Real>(
    sys: &SystemParams<T>,
    dist: InputDistribution,
    depth_max: usize,
    samples: usize,
    seed: u64,
) -> Result<Option<StabilityReport>> {
    let jsr = jsr_estimate(sys, dist, depth_max, samples, seed)?;
    for margin in [0.02, 0.05, 0.1, 0.2, 0.4] {
        let rho = jsr.lower * (1.0 + margin);
        if !(rho > 0.0 && rho < 1.0) {
            continue;
        }
        let kappa = phi_estimate(sys, dist, rho, depth_max, samples, seed)?.max(1.0);
        let report = certify_uniform_stability(sys, dist, rho, kappa, depth_max, samples, seed)?;
        if report.certified {
            return Ok(Some(report));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FNormCheck {
    pub norm: f64,
    /// `1 + kappa |C|_op / (1 - rho)`
    pub bound: f64,
    pub holds: bool,
}

/// Builds `F` for the window (`L - 1` inputs, oldest first) and compares its
/// norm with the bound implied by `(kappa, rho)`.
pub fn f_norm_check<T: Real>(
    sys: &SystemParams<T>,
    window: MatRef<'_, T>,
    kappa: f64,
    rho: f64,
) -> Result<FNormCheck> {
    if !(rho > 0.0 && rho < 1.0) || !(kappa >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < rho < 1 and kappa >= 1, got rho={rho}, kappa={kappa}"
        )));
    }
    let f = build_f(sys, window)?;
    let norm = op_norm(f.as_ref())?.as_f64();
    let bound = 1.0 + kappa * op_norm(sys.c())?.as_f64() / (1.0 - rho);
    Ok(FNormCheck {
        norm,
        bound,
        holds: norm <= bound * (1.0 + 1e-12),
    })
}
