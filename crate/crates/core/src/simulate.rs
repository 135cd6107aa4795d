//! Input generation and trajectory simulation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use faer::{Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{euclidean_norm, mat_vec, row_vec, to_rows};
use crate::model::SystemParams;
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::scalar::Real;

pub const DEFAULT_OVERFLOW_GUARD: f64 = 1e12;

/// Law of the i.i.d. inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputDistribution {
    /// Uniform on the sphere of radius `sqrt(p)`.
    Sphere,
    /// Standard normal, identity covariance.
    Gaussian,
}

impl InputDistribution {
    pub const ALL: [InputDistribution; 2] =
        [InputDistribution::Sphere, InputDistribution::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            InputDistribution::Sphere => "sphere",
            InputDistribution::Gaussian => "gaussian",
        }
    }

    /// Hypercontractivity constant: 3 for the Gaussian, `3 / (1 + 2/p)` on the sphere.
    pub fn gamma(self, p: usize) -> f64 {
        match self {
            InputDistribution::Gaussian => 3.0,
            InputDistribution::Sphere => 3.0 / (1.0 + 2.0 / p as f64),
        }
    }
}

impl fmt::Display for InputDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" | "uniform" | "uniform-sphere" | "uniformsphere" => Ok(Self::Sphere),
            "gaussian" | "normal" => Ok(Self::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown input distribution {other:?}"
            ))),
        }
    }
}

/// Process and measurement noise are both i.i.d. `N(0, sigma^2)` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig<T> {
    pub sigma: T,
}

impl<T: Real> NoiseConfig<T> {
    pub fn new(sigma: T) -> Result<Self> {
        if !(sigma >= T::zero()) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn noiseless() -> Self {
        Self { sigma: T::zero() }
    }
}

/// One input vector. Sphere draws are normalized Gaussians rescaled to `sqrt(p)`.
pub fn sample_input<T: Real, R: Rng + ?Sized>(
    dist: InputDistribution,
    p: usize,
    rng: &mut R,
) -> Vec<T> {
    assert!(p >= 1, "input dimension must be positive");
    loop {
        let g: Vec<T> = (0..p).map(|_| standard_normal(rng)).collect();
        match dist {
            InputDistribution::Gaussian => return g,
            InputDistribution::Sphere => {
                let norm = euclidean_norm(&g);
                if norm > T::zero() {
                    let r = T::of_usize(p).sqrt();
                    return g.into_iter().map(|x| x / norm * r).collect();
                }
            }
        }
    }
}

/// `count` i.i.d. inputs stacked as rows.
pub fn sample_inputs<T: Real, R: Rng + ?Sized>(
    dist: InputDistribution,
    p: usize,
    count: usize,
    rng: &mut R,
) -> Mat<T> {
    let mut out = Mat::zeros(count, p);
    for t in 0..count {
        for (k, v) in sample_input::<T, _>(dist, p, rng).into_iter().enumerate() {
            out[(t, k)] = v;
        }
    }
    out
}

/// Aligned sequences for `t = 0..=T`, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub x: Mat<T>,
    pub u: Mat<T>,
    pub y: Mat<T>,
    pub w: Mat<T>,
    pub z: Mat<T>,
}

impl<T: Real> Trajectory<T> {
    /// Final time index `T` (the trajectory has `T + 1` samples).
    pub fn horizon(&self) -> usize {
        self.u.nrows() - 1
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    pub fn input(&self, t: usize) -> Vec<T> {
        row_vec(self.u.as_ref(), t)
    }

    pub fn output(&self, t: usize) -> Vec<T> {
        row_vec(self.y.as_ref(), t)
    }

    pub fn state(&self, t: usize) -> Vec<T> {
        row_vec(self.x.as_ref(), t)
    }

    /// CSV with header `t,u1..up,y1..ym` and, when `with_hidden`, `x1..xn,w1..wn,z1..zm`.
    pub fn write_csv<W: Write>(&self, out: W, with_hidden: bool) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        let blocks: Vec<(&str, &Mat<T>)> = if with_hidden {
            vec![
                ("u", &self.u),
                ("y", &self.y),
                ("x", &self.x),
                ("w", &self.w),
                ("z", &self.z),
            ]
        } else {
            vec![("u", &self.u), ("y", &self.y)]
        };
        for (name, m) in &blocks {
            header.extend((1..=m.ncols()).map(|k| format!("{name}{k}")));
        }
        wtr.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![t.to_string()];
            for (_, m) in &blocks {
                rec.extend((0..m.ncols()).map(|k| format!("{:e}", m[(t, k)].as_f64())));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json_doc(&self) -> TrajectoryJson {
        TrajectoryJson {
            n: self.x.ncols(),
            p: self.u.ncols(),
            m: self.y.ncols(),
            x: to_rows(self.x.as_ref()),
            u: to_rows(self.u.as_ref()),
            y: to_rows(self.y.as_ref()),
            w: to_rows(self.w.as_ref()),
            z: to_rows(self.z.as_ref()),
        }
    }
}

/// JSON container for a trajectory; every sequence is an array of per-time rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryJson {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

pub fn simulate<T: Real, R: Rng + ?Sized>(
    sys: &SystemParams<T>,
    inputs: MatRef<'_, T>,
    noise: NoiseConfig<T>,
    rng: &mut R,
) -> Result<Trajectory<T>> {
    simulate_guarded(sys, inputs, noise, rng, T::of(DEFAULT_OVERFLOW_GUARD))
}

/// Runs the recursion from `x_0 = 0`. Noise is drawn per step as `w_t` then `z_t`.
/// Fails with [`Error::Unstable`] as soon as a state norm exceeds `guard`.
pub fn simulate_guarded<T: Real, R: Rng + ?Sized>(
    sys: &SystemParams<T>,
    inputs: MatRef<'_, T>,
    noise: NoiseConfig<T>,
    rng: &mut R,
    guard: T,
) -> Result<Trajectory<T>> {
    let dims = sys.dims();
    let (n, p, m) = (dims.n, dims.p, dims.m);
    if inputs.ncols() != p {
        return Err(Error::Shape(format!(
            "inputs have {} columns, expected p = {p}",
            inputs.ncols()
        )));
    }
    if inputs.nrows() == 0 {
        return Err(Error::InvalidArgument("need at least one input".into()));
    }
    let len = inputs.nrows();
    let mut x = Mat::<T>::zeros(len, n);
    let mut y = Mat::<T>::zeros(len, m);
    let mut w = Mat::<T>::zeros(len, n);
    let mut z = Mat::<T>::zeros(len, m);
    let sigma = noise.sigma;

    let mut state = vec![T::zero(); n];
    for t in 0..len {
        let u = row_vec(inputs, t);
        for i in 0..n {
            w[(t, i)] = sigma * standard_normal::<T, _>(rng);
        }
        for i in 0..m {
            z[(t, i)] = sigma * standard_normal::<T, _>(rng);
        }

        let cx = mat_vec(sys.c(), &state);
        let du = mat_vec(sys.d(), &u);
        for i in 0..m {
            y[(t, i)] = cx[i] + du[i] + z[(t, i)];
        }
        for i in 0..n {
            x[(t, i)] = state[i];
        }
        if t + 1 == len {
            break;
        }

        let op = sys.input_operator(&u);
        let ax = mat_vec(op.as_ref(), &state);
        let bu = mat_vec(sys.b(), &u);
        for i in 0..n {
            state[i] = ax[i] + bu[i] + w[(t, i)];
        }
        let norm = euclidean_norm(&state);
        if !norm.is_finite() || norm > guard {
            return Err(Error::Unstable {
                t: t + 1,
                norm: norm.as_f64(),
                guard: guard.as_f64(),
            });
        }
    }
    Ok(Trajectory {
        x,
        u: inputs.to_owned(),
        y,
        w,
        z,
    })
}

/// Closed-form unrolled state `x_{t+1}`:
/// `sum_{l=0}^{t} (prod_{k=0}^{l-1} (u_{t-k} o A)) (B u_{t-l} + w_{t-l})`.
pub fn unrolled_state<T: Real>(
    sys: &SystemParams<T>,
    inputs: MatRef<'_, T>,
    noises: MatRef<'_, T>,
    t: usize,
) -> Result<Vec<T>> {
    let n = sys.dims().n;
    if t >= inputs.nrows() || t >= noises.nrows() {
        return Err(Error::Shape(format!(
            "t = {t} outside the {} inputs / {} noises",
            inputs.nrows(),
            noises.nrows()
        )));
    }
    if noises.ncols() != n || inputs.ncols() != sys.dims().p {
        return Err(Error::Shape(
            "input or noise width does not match the system".into(),
        ));
    }
    let mut prod = Mat::<T>::identity(n, n);
    let mut acc = vec![T::zero(); n];
    for l in 0..=t {
        let s = t - l;
        let u = row_vec(inputs, s);
        let mut drive = mat_vec(sys.b(), &u);
        for (i, d) in drive.iter_mut().enumerate() {
            *d += noises[(s, i)];
        }
        for (a, v) in acc.iter_mut().zip(mat_vec(prod.as_ref(), &drive)) {
            *a += v;
        }
        prod = &prod * sys.input_operator(&u);
    }
    Ok(acc)
}

/// Draws inputs and noise from two independent streams derived from `seed`
/// and simulates `horizon + 1` steps.
pub fn generate_trajectory<T: Real>(
    sys: &SystemParams<T>,
    dist: InputDistribution,
    horizon: usize,
    noise: NoiseConfig<T>,
    seed: u64,
) -> Result<Trajectory<T>> {
    let mut input_rng = rng_from_seed(derive_seed(seed, &[0]));
    let mut noise_rng = rng_from_seed(derive_seed(seed, &[1]));
    let inputs = sample_inputs::<T, _>(dist, sys.dims().p, horizon + 1, &mut input_rng);
    simulate(sys, inputs.as_ref(), noise, &mut noise_rng)
}
