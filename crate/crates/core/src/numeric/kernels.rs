//! Dense kernels with hand-written backward passes.

use super::{NumericError, Tensor};

/// `C = A B` for row-major operands described by `(rows, cols, row_stride,
/// col_stride)`, via the `matrixmultiply` GEMM.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (isize, isize), b: &[f64], (rsb, csb): (isize, isize)) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: the strides describe in-bounds views of `a` ([m, k]) and `b`
    // ([k, n]) as checked by the callers, and `out` is a fresh [m, n] buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `[m,k] x [k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(NumericError::ShapeMismatch(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let out = gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1));
    Tensor::new(vec![m, n], out)
}

/// `a^T b` without materializing the transpose: `[k,m]^T x [k,n] -> [m,n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(NumericError::ShapeMismatch(format!(
            "matmul_tn {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let out = gemm(m, k, n, a.data(), (1, m as isize), b.data(), (n as isize, 1));
    Tensor::new(vec![m, n], out)
}

/// `a b^T`: `[m,k] x [n,k]^T -> [m,n]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(NumericError::ShapeMismatch(format!(
            "matmul_nt {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let out = gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (1, k as isize));
    Tensor::new(vec![m, n], out)
}

/// Gradients of `matmul(a, b)` given the upstream gradient.
pub fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor), NumericError> {
    Ok((matmul_nt(dout, b)?, matmul_tn(a, dout)?))
}

/// Row-wise softmax over the last dimension.
pub fn softmax_lastdim(t: &Tensor) -> Tensor {
    let c = *t.shape().last().unwrap_or(&1);
    let mut out = t.clone();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of softmax given its output `y` and upstream `dy`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor, NumericError> {
    y.same_shape(dy)?;
    let c = *y.shape().last().unwrap_or(&1);
    let mut dx = dy.clone();
    if c == 0 {
        return Ok(dx);
    }
    for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
        let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
        for (d, &yv) in drow.iter_mut().zip(yrow) {
            *d = yv * (*d - dot);
        }
    }
    Ok(dx)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(t: &Tensor) -> Tensor {
    t.map(|x| 0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2)))
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor, NumericError> {
    x.zip_map(dy, |x, d| {
        let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
        let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
        d * (cdf + x * pdf)
    })
}

/// Cached statistics of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

/// Layer norm over the last dimension with per-channel gain and bias.
pub fn layer_norm(
    t: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache), NumericError> {
    let c = *t.shape().last().unwrap_or(&0);
    if gain.len() != c || bias.len() != c {
        return Err(NumericError::ShapeMismatch(format!(
            "layer_norm over {c} channels with gain {:?} bias {:?}",
            gain.shape(),
            bias.shape()
        )));
    }
    let mut out = t.clone();
    let mut normalized = t.clone();
    let mut inv_std = Vec::with_capacity(t.len() / c.max(1));
    if c == 0 {
        return Ok((out, LayerNormCache { normalized, inv_std }));
    }
    for (row, nrow) in out.data_mut().chunks_mut(c).zip(normalized.data_mut().chunks_mut(c)) {
        let mean = nrow.iter().sum::<f64>() / c as f64;
        let var = nrow.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for ((o, n), (g, b)) in row
            .iter_mut()
            .zip(nrow.iter_mut())
            .zip(gain.data().iter().zip(bias.data()))
        {
            *n = (*n - mean) * is;
            *o = *n * g + b;
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumericError> {
    cache.normalized.same_shape(dy)?;
    let c = gain.len();
    let mut dx = dy.clone();
    let mut dgain = Tensor::zeros(gain.shape());
    let mut dbias = Tensor::zeros(gain.shape());
    if c == 0 {
        return Ok((dx, dgain, dbias));
    }
    for ((dxrow, nrow), &is) in dx
        .data_mut()
        .chunks_mut(c)
        .zip(cache.normalized.data().chunks(c))
        .zip(&cache.inv_std)
    {
        let mut mean_dn = 0.0;
        let mut mean_dn_n = 0.0;
        for j in 0..c {
            let dy_j = dxrow[j];
            dgain.data_mut()[j] += dy_j * nrow[j];
            dbias.data_mut()[j] += dy_j;
            let dn = dy_j * gain.data()[j];
            mean_dn += dn;
            mean_dn_n += dn * nrow[j];
        }
        mean_dn /= c as f64;
        mean_dn_n /= c as f64;
        for j in 0..c {
            let dn = dxrow[j] * gain.data()[j];
            dxrow[j] = is * (dn - mean_dn - nrow[j] * mean_dn_n);
        }
    }
    Ok((dx, dgain, dbias))
}

/// Adds a length-`C` bias to every row of an `[N, C]` matrix.
pub fn add_row_bias(t: &mut Tensor, bias: &Tensor) -> Result<(), NumericError> {
    let (_, c) = t.dims2()?;
    if bias.len() != c {
        return Err(NumericError::ShapeMismatch(format!(
            "bias {:?} for {c} columns",
            bias.shape()
        )));
    }
    for row in t.data_mut().chunks_mut(c.max(1)) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(())
}

/// Column sums of an `[N, C]` matrix, the gradient of a broadcast row bias.
pub fn column_sums(t: &Tensor) -> Result<Tensor, NumericError> {
    let (_, c) = t.dims2()?;
    let mut out = vec![0.0; c];
    for row in t.data().chunks(c.max(1)) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(vec![c], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::finite_diff_check;
    use crate::rng::Rng;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, 1.0, &mut Rng::new(seed))
    }

    #[test]
    fn identity_matmul() {
        let x = rand(&[4, 3], 1);
        let y = matmul(&Tensor::identity(4), &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matmul_shape_mismatch() {
        assert!(matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn transposed_variants_agree() {
        let a = rand(&[3, 5], 2);
        let b = rand(&[3, 4], 3);
        let direct = matmul(&a.transpose2().unwrap(), &b).unwrap();
        assert!(matmul_tn(&a, &b).unwrap().max_abs_diff(&direct) < 1e-14);
        let c = rand(&[4, 5], 4);
        let direct = matmul(&a, &c.transpose2().unwrap()).unwrap();
        assert!(matmul_nt(&a, &c).unwrap().max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let y = softmax_lastdim(&rand(&[5, 7], 5).scale(10.0));
        for r in 0..5 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = rand(&[3, 6], 6);
        let shifted = Tensor::new(
            vec![3, 6],
            x.data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + (i / 6) as f64 * 17.25)
                .collect(),
        )
        .unwrap();
        assert!(softmax_lastdim(&x).max_abs_diff(&softmax_lastdim(&shifted)) < 1e-12);
    }

    #[test]
    fn layer_norm_moments_match_gain_and_bias() {
        let x = rand(&[6, 32], 7).scale(3.0);
        let gain = Tensor::full(&[32], 2.5);
        let bias = Tensor::full(&[32], -0.75);
        let (y, _) = layer_norm(&x, &gain, &bias, 1e-12).unwrap();
        for r in 0..6 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 32.0;
            let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0).sqrt();
            assert!((mean + 0.75).abs() < 1e-12);
            assert!((std - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_gradients_pass_finite_differences() {
        let a0 = rand(&[3, 4], 8);
        let b0 = rand(&[4, 2], 9);
        let w = rand(&[3, 2], 10);
        let n_a = a0.len();
        let mut point = a0.data().to_vec();
        point.extend_from_slice(b0.data());
        let err = finite_diff_check(
            |p| {
                let a = Tensor::new(vec![3, 4], p[..n_a].to_vec()).unwrap();
                let b = Tensor::new(vec![4, 2], p[n_a..].to_vec()).unwrap();
                let y = matmul(&a, &b).unwrap();
                let loss = y.data().iter().zip(w.data()).map(|(u, v)| u * v).sum();
                let (da, db) = matmul_backward(&a, &b, &w).unwrap();
                let mut g = da.into_data();
                g.extend(db.into_data());
                (loss, g)
            },
            &point,
            1e-5,
        );
        assert!(err < 1e-8, "matmul err {err}");

        let x0 = rand(&[3, 5], 11);
        let w = rand(&[3, 5], 12);
        let err = finite_diff_check(
            |p| {
                let x = Tensor::new(vec![3, 5], p.to_vec()).unwrap();
                let y = softmax_lastdim(&x);
                let loss = y.data().iter().zip(w.data()).map(|(u, v)| u * v).sum();
                (loss, softmax_backward(&y, &w).unwrap().into_data())
            },
            x0.data(),
            1e-5,
        );
        assert!(err < 1e-8, "softmax err {err}");

        let err = finite_diff_check(
            |p| {
                let x = Tensor::new(vec![3, 5], p.to_vec()).unwrap();
                let y = gelu(&x);
                let loss = y.data().iter().zip(w.data()).map(|(u, v)| u * v).sum();
                (loss, gelu_backward(&x, &w).unwrap().into_data())
            },
            x0.data(),
            1e-5,
        );
        assert!(err < 1e-8, "gelu err {err}");

        let g0 = rand(&[5], 13);
        let b0 = rand(&[5], 14);
        let mut point = x0.data().to_vec();
        point.extend_from_slice(g0.data());
        point.extend_from_slice(b0.data());
        let err = finite_diff_check(
            |p| {
                let x = Tensor::new(vec![3, 5], p[..15].to_vec()).unwrap();
                let g = Tensor::new(vec![5], p[15..20].to_vec()).unwrap();
                let b = Tensor::new(vec![5], p[20..].to_vec()).unwrap();
                let (y, cache) = layer_norm(&x, &g, &b, 1e-5).unwrap();
                let loss = y.data().iter().zip(w.data()).map(|(u, v)| u * v).sum();
                let (dx, dg, db) = layer_norm_backward(&cache, &g, &w).unwrap();
                let mut grad = dx.into_data();
                grad.extend(dg.into_data());
                grad.extend(db.into_data());
                (loss, grad)
            },
            &point,
            1e-5,
        );
        assert!(err < 1e-7, "layer_norm err {err}");
    }
}
