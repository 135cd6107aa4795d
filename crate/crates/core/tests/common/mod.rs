//! Reference implementations used as test oracles. They are written
//! independently of the library code paths they check.
#![allow(dead_code)]

use blds::{Mat, MultiIndex, SystemParamsF64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept separate from the library sampler on purpose
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_mat(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| gaussian(r))
}

pub fn matmul(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    assert_eq!(a.ncols(), b.nrows());
    Mat::from_fn(a.nrows(), b.ncols(), |i, j| {
        (0..a.ncols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
    })
}

pub fn transpose(a: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)])
}

pub fn matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|k| a[(i, k)] * x[k]).sum())
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on the smaller of `A^T A` and `A A^T`.
pub fn op_norm_power(a: &Mat<f64>) -> f64 {
    let ata = if a.nrows() < a.ncols() {
        matmul(a, &transpose(a))
    } else {
        matmul(&transpose(a), a)
    };
    let mut r = rng(7);
    let mut v: Vec<f64> = (0..ata.ncols()).map(|_| gaussian(&mut r)).collect();
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let w = matvec(&ata, &v);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        lambda = nw / norm(&v);
        v = w.iter().map(|x| x / nw).collect();
    }
    lambda.sqrt()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    let mut aug = Mat::from_fn(n, 2 * n, |i, j| {
        if j < n {
            a[(i, j)]
        } else if j - n == i {
            1.0
        } else {
            0.0
        }
    });
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| aug[(x, col)].abs().total_cmp(&aug[(y, col)].abs()))
            .unwrap();
        for j in 0..2 * n {
            let tmp = aug[(col, j)];
            aug[(col, j)] = aug[(piv, j)];
            aug[(piv, j)] = tmp;
        }
        let d = aug[(col, col)];
        for j in 0..2 * n {
            aug[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = aug[(i, col)];
                for j in 0..2 * n {
                    aug[(i, j)] -= f * aug[(col, j)];
                }
            }
        }
    }
    Mat::from_fn(n, n, |i, j| aug[(i, j + n)])
}

/// `P T P^{-1}` for block upper-triangular `T` whose spectrum is known.
pub fn similar_to(t: &Mat<f64>, seed: u64) -> Mat<f64> {
    let n = t.nrows();
    let mut r = rng(seed);
    let p = Mat::from_fn(
        n,
        n,
        |i, j| if i == j { 3.0 } else { 0.0 } + 0.5 * gaussian(&mut r),
    );
    matmul(&matmul(&p, t), &inverse(&p))
}

/// `u o A = A_0 + sum_k u_k A_k`, written out directly.
pub fn operator(sys: &SystemParamsF64, u: &[f64]) -> Mat<f64> {
    let a = sys.a();
    Mat::from_fn(a[0].nrows(), a[0].ncols(), |i, j| {
        a[0][(i, j)]
            + u.iter()
                .enumerate()
                .map(|(k, uk)| uk * a[k + 1][(i, j)])
                .sum::<f64>()
    })
}

/// The Markov block of one covariate column: `D` for `ell = 0`, otherwise
/// `C A_{i_1} .. A_{i_{ell-1}} B` restricted to input column `input`.
pub fn markov_entry_column(sys: &SystemParamsF64, idx: &MultiIndex) -> Vec<f64> {
    if idx.ell == 0 {
        return (0..sys.d().nrows())
            .map(|i| sys.d()[(i, idx.input)])
            .collect();
    }
    let mut left = sys.c().to_owned();
    for &k in &idx.chain {
        left = matmul(&left, &sys.a()[k].to_owned());
    }
    let b_col: Vec<f64> = (0..sys.b().nrows())
        .map(|i| sys.b()[(i, idx.input)])
        .collect();
    matvec(&left, &b_col)
}

/// `G` assembled column by column from the index map.
pub fn markov_oracle(sys: &SystemParamsF64, cfg: &blds::FeatureConfig) -> Mat<f64> {
    let m = sys.dims().m;
    let mut g = Mat::zeros(m, cfg.dim());
    for (col, idx) in cfg.index_map().iter().enumerate() {
        for (i, v) in markov_entry_column(sys, idx).into_iter().enumerate() {
            g[(i, col)] = v;
        }
    }
    g
}

/// Covariate built entry by entry from the index map: `u_t`, then for each
/// `ell >= 1` the entries of `[1; u_{t-1}] x .. x [1; u_{t-ell+1}] x u_{t-ell}`.
/// `window` rows are `u_{t-L}, .., u_t`.
pub fn covariate_oracle(window: &Mat<f64>, cfg: &blds::FeatureConfig) -> Vec<f64> {
    let l = cfg.history();
    let u = |lag: usize, k: usize| window[(l - lag, k)];
    let mut out = vec![0.0; cfg.dim()];
    for (col, idx) in cfg.index_map().iter().enumerate() {
        out[col] = if idx.ell == 0 {
            u(0, idx.input)
        } else {
            // chain entry j pairs with lag j + 1; index 0 selects the constant 1
            let mut v = u(idx.ell, idx.input);
            for (j, &k) in idx.chain.iter().enumerate() {
                v *= if k == 0 { 1.0 } else { u(j + 1, k - 1) };
            }
            v
        };
    }
    out
}
