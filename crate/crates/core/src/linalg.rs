//! Dense matrix functions: exponential, its Fréchet derivative, and the
//! principal logarithm.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Padé(13,13) numerator coefficients (Higham 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which Padé(13) alone is accurate to unit roundoff.
const THETA13: f64 = 5.371920351148152;

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé core.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension("expm needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expm argument".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = norm1(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let scaled = a * 2f64.powi(-s);

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_inner = &a6 * (b[13]) + &a4 * b[11] + &a2 * b[9];
    let u_outer = &a6 * &u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let u = &scaled * u_outer;
    let v_inner = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * &v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or_else(|| Error::Numerical("singular Padé denominator".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(r)
}

/// Fréchet derivative `L(A, E)` of the exponential at `A` in direction `E`,
/// read off the upper-right block of `exp([[A, E], [0, A]])`.
///
/// Returns `(exp(A), L(A, E))`.
pub fn expm_frechet(a: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || e.nrows() != n || e.ncols() != n {
        return Err(Error::Dimension("expm_frechet needs equal square matrices".into()));
    }
    let mut block = DMatrix::<f64>::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((n, n), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, n)).copy_from(e);
    let big = expm(&block)?;
    Ok((big.view((0, 0), (n, n)).into_owned(), big.view((0, n), (n, n)).into_owned()))
}

/// Principal matrix logarithm by inverse scaling and squaring: repeated
/// Denman–Beavers square roots until `||A - I||_1 <= 1/4`, then the
/// Mercator series.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension("logm needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logm argument".into()));
    }
    let ident = DMatrix::<f64>::identity(n, n);
    let mut m = a.clone();
    let mut k = 0;
    while norm1(&(&m - &ident)) > 0.25 {
        if k >= 40 {
            return Err(Error::Numerical("logm: square roots do not approach identity".into()));
        }
        m = sqrtm_db(&m)?;
        k += 1;
    }
    let x = &m - &ident;
    let mut term = x.clone();
    let mut acc = x.clone();
    for j in 2..200 {
        term = &term * &x;
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        let add = &term * (sign / j as f64);
        acc += &add;
        if norm1(&add) < 1e-18 * norm1(&acc).max(1e-300) {
            break;
        }
    }
    Ok(acc * 2f64.powi(k))
}

fn sqrtm_db(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().ok_or_else(|| Error::Numerical("logm: singular iterate".into()))?;
        let zi = z.clone().try_inverse().ok_or_else(|| Error::Numerical("logm: singular iterate".into()))?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = norm1(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * norm1(&y) {
            return Ok(y);
        }
    }
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(Error::Numerical("logm: square root iteration diverged".into()))
    }
}
