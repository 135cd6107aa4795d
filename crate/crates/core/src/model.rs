//! System parameters of the bilinear state-space model
//!
//! ```text
//! x_{t+1} = A_0 x_t + sum_k (u_t)_k A_k x_t + B u_t + w_t
//! y_t     = C x_t + D u_t + z_t
//! ```
//!
//! and the random test systems used by the experiments.

use std::path::Path;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, from_rows, to_rows};
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::scalar::Real;

/// Redraws allowed when a sampled drift/bilinear matrix is numerically nilpotent.
pub const MAX_REDRAWS: usize = 8;

/// State, input and output dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(n: usize, p: usize, m: usize) -> Result<Self> {
        if n == 0 || p == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got n={n}, p={p}, m={m}"
            )));
        }
        Ok(Self { n, p, m })
    }
}

/// `A_0..A_p`, `B`, `C`, `D` with consistent shapes and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams<T: Real> {
    a: Vec<Mat<T>>,
    b: Mat<T>,
    c: Mat<T>,
    d: Mat<T>,
    dims: Dims,
}

impl<T: Real> SystemParams<T> {
    pub fn new(a: Vec<Mat<T>>, b: Mat<T>, c: Mat<T>, d: Mat<T>) -> Result<Self> {
        let n = b.nrows();
        let p = b.ncols();
        let m = c.nrows();
        let dims = Dims::new(n, p, m)?;
        if a.len() != p + 1 {
            return Err(Error::Shape(format!(
                "expected p+1 = {} dynamics matrices, got {}",
                p + 1,
                a.len()
            )));
        }
        for (k, ak) in a.iter().enumerate() {
            if ak.nrows() != n || ak.ncols() != n {
                return Err(Error::Shape(format!(
                    "A_{k} is {}x{}, expected {n}x{n}",
                    ak.nrows(),
                    ak.ncols()
                )));
            }
        }
        if c.ncols() != n {
            return Err(Error::Shape(format!(
                "C is {}x{}, expected {m}x{n}",
                m,
                c.ncols()
            )));
        }
        if d.nrows() != m || d.ncols() != p {
            return Err(Error::Shape(format!(
                "D is {}x{}, expected {m}x{p}",
                d.nrows(),
                d.ncols()
            )));
        }
        let finite = a.iter().all(|ak| linalg::all_finite(ak.as_ref()))
            && linalg::all_finite(b.as_ref())
            && linalg::all_finite(c.as_ref())
            && linalg::all_finite(d.as_ref());
        if !finite {
            return Err(Error::InvalidArgument(
                "system matrices must be finite".into(),
            ));
        }
        Ok(Self { a, b, c, d, dims })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// `A_0..A_p`; index 0 is the drift.
    pub fn a(&self) -> &[Mat<T>] {
        &self.a
    }

    pub fn b(&self) -> MatRef<'_, T> {
        self.b.as_ref()
    }

    pub fn c(&self) -> MatRef<'_, T> {
        self.c.as_ref()
    }

    pub fn d(&self) -> MatRef<'_, T> {
        self.d.as_ref()
    }

    pub fn into_parts(self) -> (Vec<Mat<T>>, Mat<T>, Mat<T>, Mat<T>) {
        (self.a, self.b, self.c, self.d)
    }

    /// The state-transition matrix `A_0 + sum_k u_k A_k` for input `u`.
    pub fn input_operator(&self, u: &[T]) -> Mat<T> {
        debug_assert_eq!(u.len(), self.dims.p);
        let n = self.dims.n;
        let mut out = self.a[0].clone();
        for (k, &uk) in u.iter().enumerate() {
            if uk == T::zero() {
                continue;
            }
            let ak = &self.a[k + 1];
            for j in 0..n {
                for i in 0..n {
                    out[(i, j)] += uk * ak[(i, j)];
                }
            }
        }
        out
    }

    pub fn to_json_doc(&self) -> SystemJson {
        SystemJson {
            n: self.dims.n,
            p: self.dims.p,
            m: self.dims.m,
            a: self.a.iter().map(|ak| to_rows(ak.as_ref())).collect(),
            b: to_rows(self.b.as_ref()),
            c: to_rows(self.c.as_ref()),
            d: to_rows(self.d.as_ref()),
        }
    }

    pub fn from_json_doc(doc: &SystemJson) -> Result<Self> {
        let sys = Self::new(
            doc.a
                .iter()
                .map(|r| from_rows(r))
                .collect::<Result<Vec<_>>>()?,
            from_rows(&doc.b)?,
            from_rows(&doc.c)?,
            from_rows(&doc.d)?,
        )?;
        if sys.dims
            != (Dims {
                n: doc.n,
                p: doc.p,
                m: doc.m,
            })
        {
            return Err(Error::Shape(format!(
                "declared dims (n={}, p={}, m={}) disagree with matrix shapes {:?}",
                doc.n, doc.p, doc.m, sys.dims
            )));
        }
        Ok(sys)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_doc(&serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of [`SystemParams`]: matrices as arrays of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemJson {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
}

pub fn spectral_radius<T: Real>(m: MatRef<'_, T>) -> Result<T> {
    linalg::spectral_radius(m)
}

/// `M * (target / rho(M))`.
pub fn scale_to_spectral_radius<T: Real>(m: MatRef<'_, T>, target: T) -> Result<Mat<T>> {
    if !(target >= T::zero()) || !target.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target spectral radius must be finite and nonnegative, got {target}"
        )));
    }
    let rho = spectral_radius(m)?;
    if target == T::zero() {
        return Ok(Mat::zeros(m.nrows(), m.ncols()));
    }
    if is_numerically_nilpotent(m, rho) {
        return Err(Error::Unscalable {
            target: target.as_f64(),
        });
    }
    let factor = target / rho;
    Ok(Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
        m[(i, j)] * factor
    }))
}

// Eigenvalues of a nilpotent Jordan block of size k are perturbed by about
// eps^(1/k) in floating point, so the threshold scales with eps^(1/n).
fn is_numerically_nilpotent<T: Real>(m: MatRef<'_, T>, rho: T) -> bool {
    let n = m.nrows().max(1);
    let scale = m.norm_l2();
    let tol = T::of(10.0) * scale * T::epsilon().powf(T::one() / T::of_usize(n));
    rho <= tol
}

fn gaussian_matrix<T: Real>(rows: usize, cols: usize, std: f64, seed: u64) -> Mat<T> {
    let mut rng = rng_from_seed(seed);
    let std = T::of(std);
    let mut out = Mat::zeros(rows, cols);
    // Row-major fill so the stream order matches the serialized layout.
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = std * standard_normal::<T, _>(&mut rng);
        }
    }
    out
}

/// Random test system: `A_k` with i.i.d. N(0,1) entries rescaled so that
/// `rho(A_0) = rho0` and `rho(A_k) = rhok` for `k >= 1`; `B`, `C` with
/// N(0, 1/n) entries; `D` with N(0, 1/m) entries. Deterministic in `seed`.
pub fn random_system<T: Real>(dims: Dims, rho0: T, rhok: T, seed: u64) -> Result<SystemParams<T>> {
    let Dims { n, p, m } = Dims::new(dims.n, dims.p, dims.m)?;
    if !(rho0 >= T::zero()) || !(rhok >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "spectral radii must be nonnegative, got rho0={rho0}, rhok={rhok}"
        )));
    }
    let mut a = Vec::with_capacity(p + 1);
    for k in 0..=p {
        let target = if k == 0 { rho0 } else { rhok };
        let mut drawn = None;
        for attempt in 0..MAX_REDRAWS {
            let raw =
                gaussian_matrix::<T>(n, n, 1.0, derive_seed(seed, &[0, k as u64, attempt as u64]));
            match scale_to_spectral_radius(raw.as_ref(), target) {
                Ok(scaled) => {
                    drawn = Some(scaled);
                    break;
                }
                Err(Error::Unscalable { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        a.push(drawn.ok_or_else(|| Error::DegenerateDraw {
            what: format!("A_{k} stayed nilpotent"),
            attempts: MAX_REDRAWS,
        })?);
    }
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let inv_sqrt_m = 1.0 / (m as f64).sqrt();
    let b = gaussian_matrix(n, p, inv_sqrt_n, derive_seed(seed, &[1]));
    let c = gaussian_matrix(m, n, inv_sqrt_n, derive_seed(seed, &[2]));
    let d = gaussian_matrix(m, p, inv_sqrt_m, derive_seed(seed, &[3]));
    SystemParams::new(a, b, c, d)
}
