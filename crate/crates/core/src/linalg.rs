//! Dense kernels shared by scoring, the objective and the optimizer.
//!
//! Stored data is `f32`; every reduction accumulates in `f64`. Products of
//! two `f32` values are exact in `f64`, so the only rounding comes from the
//! summation, which uses a fixed lane layout and is therefore deterministic.

const LANES: usize = 8;

/// Inner product of two stored vectors.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; LANES];
    let split = a.len() - a.len() % LANES;
    for (ca, cb) in a[..split]
        .chunks_exact(LANES)
        .zip(b[..split].chunks_exact(LANES))
    {
        for k in 0..LANES {
            acc[k] += f64::from(ca[k]) * f64::from(cb[k]);
        }
    }
    let mut tail = 0f64;
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        tail += f64::from(*x) * f64::from(*y);
    }
    reduce(acc) + tail
}

/// Inner product of a stored row against a working-precision vector.
#[inline]
pub fn dot_mixed(a: &[f32], x: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), x.len());
    let mut acc = [0f64; LANES];
    let split = a.len() - a.len() % LANES;
    for (ca, cx) in a[..split]
        .chunks_exact(LANES)
        .zip(x[..split].chunks_exact(LANES))
    {
        for k in 0..LANES {
            acc[k] += f64::from(ca[k]) * cx[k];
        }
    }
    let mut tail = 0f64;
    for (v, w) in a[split..].iter().zip(&x[split..]) {
        tail += f64::from(*v) * w;
    }
    reduce(acc) + tail
}

/// `(a·x, a·y)` reading `a` once. Each result equals [`dot_mixed`].
#[inline]
pub fn dot2_mixed(a: &[f32], x: &[f64], y: &[f64]) -> (f64, f64) {
    debug_assert!(a.len() == x.len() && a.len() == y.len());
    let mut acc_x = [0f64; LANES];
    let mut acc_y = [0f64; LANES];
    let split = a.len() - a.len() % LANES;
    for ((ca, cx), cy) in a[..split]
        .chunks_exact(LANES)
        .zip(x[..split].chunks_exact(LANES))
        .zip(y[..split].chunks_exact(LANES))
    {
        for k in 0..LANES {
            let v = f64::from(ca[k]);
            acc_x[k] += v * cx[k];
            acc_y[k] += v * cy[k];
        }
    }
    let (mut tx, mut ty) = (0f64, 0f64);
    for ((v, w), u) in a[split..].iter().zip(&x[split..]).zip(&y[split..]) {
        tx += f64::from(*v) * w;
        ty += f64::from(*v) * u;
    }
    (reduce(acc_x) + tx, reduce(acc_y) + ty)
}

#[inline]
pub fn dot64(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; LANES];
    let split = a.len() - a.len() % LANES;
    for (ca, cb) in a[..split]
        .chunks_exact(LANES)
        .zip(b[..split].chunks_exact(LANES))
    {
        for k in 0..LANES {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = 0f64;
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        tail += x * y;
    }
    reduce(acc) + tail
}

#[inline]
pub fn norm64(a: &[f64]) -> f64 {
    dot64(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += alpha * x` with a stored row as `x`.
#[inline]
pub fn axpy_mixed(alpha: f64, x: &[f32], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * f64::from(*xi);
    }
}

#[inline]
fn reduce(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}
