//! Kronecker-expanded covariates and the matching noise/bias terms.
//!
//! For history length `L` the covariate at time `t` is
//!
//! ```text
//! u~_t = [ u_t ; u_{t-1} ; ub_{t-1} (x) u_{t-2} ; ... ; ub_{t-1} (x) ... (x) ub_{t-L+1} (x) u_{t-L} ]
//! ```
//!
//! with `ub = [1; u]` and `(a (x) b)[i * len(b) + j] = a[i] * b[j]`. Column
//! bookkeeping follows the same order: inside block `l >= 2` the chain
//! `(i_1, .., i_{l-1})` is read base `p+1` with `i_1` most significant, and the
//! input coordinate varies fastest.

use std::io::Write;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{mat_vec, row_vec};
use crate::model::SystemParams;
use crate::scalar::Real;
use crate::simulate::Trajectory;

const MAX_EXPANSION: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureConfig {
    l: usize,
    p: usize,
    dim: usize,
}

impl FeatureConfig {
    /// Refuses `L = 0`, `p = 0`, and any `(p+1)^(L+1) > 2^31`.
    pub fn new(l: usize, p: usize) -> Result<Self> {
        if l == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "need L >= 1 and p >= 1, got L={l}, p={p}"
            )));
        }
        let base = p as u64 + 1;
        let mut pow = 1u64;
        for _ in 0..=l {
            pow = pow
                .checked_mul(base)
                .filter(|&v| v <= MAX_EXPANSION)
                .ok_or(Error::FeatureOverflow { p, l })?;
        }
        let dim = (pow / base) as usize + p - 1;
        Ok(Self { l, p, dim })
    }

    pub fn history(&self) -> usize {
        self.l
    }

    pub fn input_dim(&self) -> usize {
        self.p
    }

    /// `(p+1)^L + p - 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Width of block `ell`: `p` for `ell = 0`, else `p (p+1)^(ell-1)`.
    pub fn block_width(&self, ell: usize) -> usize {
        assert!(ell <= self.l, "block {ell} beyond L = {}", self.l);
        if ell == 0 {
            self.p
        } else {
            self.p * (self.p + 1).pow(ell as u32 - 1)
        }
    }

    /// First flat column of block `ell`; `offset(1) = p`.
    pub fn offset(&self, ell: usize) -> usize {
        assert!(ell <= self.l, "block {ell} beyond L = {}", self.l);
        if ell == 0 {
            0
        } else {
            self.p + (self.p + 1).pow(ell as u32 - 1) - 1
        }
    }

    pub fn flat_column(&self, idx: &MultiIndex) -> Result<usize> {
        if idx.ell > self.l {
            return Err(Error::InvalidArgument(format!(
                "block {} beyond L = {}",
                idx.ell, self.l
            )));
        }
        if idx.input >= self.p {
            return Err(Error::InvalidArgument(format!(
                "input index {} >= p = {}",
                idx.input, self.p
            )));
        }
        let expected_chain = idx.ell.saturating_sub(1);
        if idx.chain.len() != expected_chain {
            return Err(Error::InvalidArgument(format!(
                "block {} needs a chain of length {expected_chain}, got {}",
                idx.ell,
                idx.chain.len()
            )));
        }
        let mut flat = 0usize;
        for &i in &idx.chain {
            if i > self.p {
                return Err(Error::InvalidArgument(format!(
                    "chain entry {i} > p = {}",
                    self.p
                )));
            }
            flat = flat * (self.p + 1) + i;
        }
        Ok(self.offset(idx.ell) + flat * self.p + idx.input)
    }

    pub fn multi_index(&self, column: usize) -> Result<MultiIndex> {
        if column >= self.dim {
            return Err(Error::InvalidArgument(format!(
                "column {column} >= d = {}",
                self.dim
            )));
        }
        if column < self.p {
            return Ok(MultiIndex {
                ell: 0,
                chain: Vec::new(),
                input: column,
            });
        }
        let ell = (1..=self.l)
            .rev()
            .find(|&e| self.offset(e) <= column)
            .expect("column past the D block lies in some block");
        let local = column - self.offset(ell);
        let mut flat = local / self.p;
        let input = local % self.p;
        let mut chain = vec![0; ell - 1];
        for slot in chain.iter_mut().rev() {
            *slot = flat % (self.p + 1);
            flat /= self.p + 1;
        }
        Ok(MultiIndex { ell, chain, input })
    }

    /// Every column's multi-index, in column order.
    pub fn index_map(&self) -> Vec<MultiIndex> {
        (0..self.dim)
            .map(|c| self.multi_index(c).expect("in range"))
            .collect()
    }

    /// CSV `column,ell,chain,input` with the chain as dot-separated indices
    /// (empty for blocks 0 and 1) and 0-based input coordinates.
    pub fn write_index_map_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["column", "ell", "chain", "input"])?;
        for (col, idx) in self.index_map().iter().enumerate() {
            let chain: Vec<String> = idx.chain.iter().map(ToString::to_string).collect();
            wtr.write_record([
                col.to_string(),
                idx.ell.to_string(),
                chain.join("."),
                idx.input.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Address of one covariate column. Block `ell = 0` holds `u_t` (the `D`
/// columns), block 1 holds `u_{t-1}` (`CB`), block `ell >= 2` the products
/// weighted by `C A_{i_1} ... A_{i_{ell-1}} B`. `input` is 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    pub ell: usize,
    pub chain: Vec<usize>,
    pub input: usize,
}

fn check_window<T>(window: MatRef<'_, T>, rows: usize, p: usize) -> Result<()> {
    if window.nrows() != rows || window.ncols() != p {
        return Err(Error::Shape(format!(
            "window is {}x{}, expected {rows}x{p}",
            window.nrows(),
            window.ncols()
        )));
    }
    Ok(())
}

/// Writes the covariate for a window of `L + 1` inputs (oldest first, so the
/// last row is `u_t`) into `out`.
fn fill_feature<T: Real>(
    window: MatRef<'_, T>,
    cfg: &FeatureConfig,
    out: &mut [T],
    prefix: &mut Vec<T>,
) {
    let (l, p) = (cfg.l, cfg.p);
    debug_assert_eq!(out.len(), cfg.dim);
    for j in 0..p {
        out[j] = window[(l, j)];
    }
    let mut pos = p;
    prefix.clear();
    prefix.push(T::one());
    for ell in 1..=l {
        let row = l - ell;
        for &a in prefix.iter() {
            for j in 0..p {
                out[pos] = a * window[(row, j)];
                pos += 1;
            }
        }
        if ell < l {
            let mut next = Vec::with_capacity(prefix.len() * (p + 1));
            for &a in prefix.iter() {
                next.push(a);
                for j in 0..p {
                    next.push(a * window[(row, j)]);
                }
            }
            *prefix = next;
        }
    }
    debug_assert_eq!(pos, cfg.dim);
}

/// Covariate `u~_t` from the window `u_{t-L}, .., u_t` (oldest first).
pub fn build_feature<T: Real>(window: MatRef<'_, T>, cfg: &FeatureConfig) -> Result<Vec<T>> {
    check_window(window, cfg.l + 1, cfg.p)?;
    let mut out = vec![T::zero(); cfg.dim];
    fill_feature(window, cfg, &mut out, &mut Vec::new());
    Ok(out)
}

/// Design matrix with one row per `t = L..=T` (row `s` is time `L + s`)
/// built from an input sequence with one row per time step.
pub fn feature_matrix_from_inputs<T: Real>(
    inputs: MatRef<'_, T>,
    cfg: &FeatureConfig,
) -> Result<Mat<T>> {
    if inputs.ncols() != cfg.p {
        return Err(Error::Shape(format!(
            "inputs have {} columns, expected p = {}",
            inputs.ncols(),
            cfg.p
        )));
    }
    if inputs.nrows() < cfg.l + 1 {
        return Err(Error::InvalidArgument(format!(
            "horizon T = {} is shorter than L = {}",
            inputs.nrows() as isize - 1,
            cfg.l
        )));
    }
    let rows = inputs.nrows() - cfg.l;
    let mut design = Mat::<T>::zeros(rows, cfg.dim);
    let mut buf = vec![T::zero(); cfg.dim];
    let mut prefix = Vec::new();
    for s in 0..rows {
        let window = inputs.subrows(s, cfg.l + 1);
        fill_feature(window, cfg, &mut buf, &mut prefix);
        for (c, &v) in buf.iter().enumerate() {
            design[(s, c)] = v;
        }
    }
    Ok(design)
}

pub fn feature_matrix<T: Real>(traj: &Trajectory<T>, cfg: &FeatureConfig) -> Result<Mat<T>> {
    feature_matrix_from_inputs(traj.u.as_ref(), cfg)
}

/// Regression targets `y_L, .., y_T` stacked as rows.
pub fn output_matrix<T: Real>(traj: &Trajectory<T>, l: usize) -> Result<Mat<T>> {
    if traj.len() < l + 1 {
        return Err(Error::InvalidArgument(format!(
            "horizon shorter than L = {l}"
        )));
    }
    Ok(traj.y.subrows(l, traj.len() - l).to_owned())
}

/// `[z_t; w_{t-1}; ..; w_{t-L}]`.
pub fn noise_feature<T: Real>(traj: &Trajectory<T>, t: usize, l: usize) -> Result<Vec<T>> {
    if t < l || t >= traj.len() {
        return Err(Error::InvalidArgument(format!(
            "noise feature needs L <= t <= T, got t={t}, L={l}"
        )));
    }
    let mut out = row_vec(traj.z.as_ref(), t);
    for ell in 1..=l {
        out.extend(row_vec(traj.w.as_ref(), t - ell));
    }
    Ok(out)
}

/// `F = [I_m | C | C (u_{t-1} o A) | .. | C prod_{l=1}^{L-1} (u_{t-l} o A)]` for the
/// window `u_{t-L+1}, .., u_{t-1}` (oldest first, `L - 1` rows).
pub fn build_f<T: Real>(sys: &SystemParams<T>, window: MatRef<'_, T>) -> Result<Mat<T>> {
    let dims = sys.dims();
    if window.ncols() != dims.p {
        return Err(Error::Shape(format!(
            "window has {} columns, expected p = {}",
            window.ncols(),
            dims.p
        )));
    }
    let l = window.nrows() + 1;
    let (n, m) = (dims.n, dims.m);
    let mut f = Mat::<T>::zeros(m, m + n * l);
    for i in 0..m {
        f[(i, i)] = T::one();
    }
    let mut left = sys.c().to_owned();
    for block in 0..l {
        if block > 0 {
            // block j multiplies w_{t-j-1}; extend the product by u_{t-j}
            let u = row_vec(window, l - 1 - block);
            left = &left * sys.input_operator(&u);
        }
        f.as_mut()
            .submatrix_mut(0, m + block * n, m, n)
            .copy_from(&left);
    }
    Ok(f)
}

/// `F` at time `t >= L` using the inputs stored in `traj`.
pub fn f_at<T: Real>(
    sys: &SystemParams<T>,
    traj: &Trajectory<T>,
    t: usize,
    l: usize,
) -> Result<Mat<T>> {
    if t < l || t >= traj.len() || l == 0 {
        return Err(Error::InvalidArgument(format!(
            "F needs 1 <= L <= t <= T, got t={t}, L={l}"
        )));
    }
    build_f(sys, traj.u.subrows(t + 1 - l, l - 1))
}

/// `eps_t = C (prod_{l=1}^{L} (u_{t-l} o A)) x_{t-L}`, product ordered `l = 1` leftmost.
pub fn truncation_bias<T: Real>(
    sys: &SystemParams<T>,
    traj: &Trajectory<T>,
    t: usize,
    l: usize,
) -> Result<Vec<T>> {
    if t < l || t >= traj.len() {
        return Err(Error::InvalidArgument(format!(
            "truncation bias needs L <= t <= T, got t={t}, L={l}"
        )));
    }
    let mut v = traj.state(t - l);
    for ell in (1..=l).rev() {
        let op = sys.input_operator(&traj.input(t - ell));
        v = mat_vec(op.as_ref(), &v);
    }
    Ok(mat_vec(sys.c(), &v))
}
