//! Zero-padded 3x3 spatial and width-3 temporal convolutions
//! (cross-correlation semantics).

use super::tensor::join_name;
use super::{Module, NumericError, Parameter, Tensor};
use crate::rng::Rng;

fn dims3(x: &Tensor) -> Result<(usize, usize, usize), NumericError> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(NumericError::ShapeMismatch(format!("expected [C,H,W], got {s:?}"))),
    }
}

fn dims4(x: &Tensor) -> Result<(usize, usize, usize, usize), NumericError> {
    match x.shape() {
        [c, f, h, w] => Ok((*c, *f, *h, *w)),
        s => Err(NumericError::ShapeMismatch(format!("expected [C,F,H,W], got {s:?}"))),
    }
}

/// Output columns `lo..hi` whose source column `j + b - 1` is in bounds.
fn col_range(b: usize, w: usize) -> (usize, usize) {
    (usize::from(b == 0), if b == 2 { w - 1 } else { w })
}

/// `x: [C,H,W]`, `kernel: [C',C,3,3]`, `bias: [C']` -> `[C',H,W]`.
pub fn conv2d_3x3(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor, NumericError> {
    let (c, h, w) = dims3(x)?;
    let co = check_kernel(kernel, bias, c, &[3, 3])?;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        let plane = &mut out[o * h * w..(o + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = bias.data()[o]);
        for ci in 0..c {
            let xin = &xd[ci * h * w..(ci + 1) * h * w];
            for a in 0..3 {
                for b in 0..3 {
                    let k = kd[((o * c + ci) * 3 + a) * 3 + b];
                    if k == 0.0 {
                        continue;
                    }
                    for i in 0..h {
                        let si = i as isize + a as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let (lo, hi) = col_range(b, w);
                        let srow = &xin[si as usize * w + lo + b - 1..si as usize * w + hi + b - 1];
                        let drow = &mut plane[i * w + lo..i * w + hi];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![co, h, w], out)
}

/// Returns `(dx, dkernel, dbias)`.
pub fn conv2d_3x3_backward(
    x: &Tensor,
    kernel: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumericError> {
    let (c, h, w) = dims3(x)?;
    let co = kernel.shape()[0];
    if dout.shape() != [co, h, w] {
        return Err(NumericError::ShapeMismatch("conv2d upstream gradient".into()));
    }
    let (xd, kd, gd) = (x.data(), kernel.data(), dout.data());
    let mut dx = vec![0.0; c * h * w];
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; co];
    for o in 0..co {
        let g = &gd[o * h * w..(o + 1) * h * w];
        db[o] = g.iter().sum();
        for ci in 0..c {
            let xin = &xd[ci * h * w..(ci + 1) * h * w];
            let dxin = &mut dx[ci * h * w..(ci + 1) * h * w];
            for a in 0..3 {
                for b in 0..3 {
                    let kidx = ((o * c + ci) * 3 + a) * 3 + b;
                    let k = kd[kidx];
                    let mut acc = 0.0;
                    for i in 0..h {
                        let si = i as isize + a as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let si = si as usize;
                        let (lo, hi) = col_range(b, w);
                        let grow = &g[i * w + lo..i * w + hi];
                        let off = si * w + lo + b - 1;
                        let xrow = &xin[off..off + hi - lo];
                        let dxrow = &mut dxin[off..off + hi - lo];
                        for ((gv, xv), dv) in grow.iter().zip(xrow).zip(dxrow) {
                            acc += gv * xv;
                            *dv += k * gv;
                        }
                    }
                    dk[kidx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![c, h, w], dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(vec![co], db)?,
    ))
}

/// `x: [C,F,H,W]`, `kernel: [C',C,3]`, `bias: [C']` -> `[C',F,H,W]`;
/// mixes only along the frame axis.
pub fn temporal_conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor, NumericError> {
    let (c, f, h, w) = dims4(x)?;
    let co = check_kernel(kernel, bias, c, &[3])?;
    let hw = h * w;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; co * f * hw];
    for o in 0..co {
        out[o * f * hw..(o + 1) * f * hw]
            .iter_mut()
            .for_each(|v| *v = bias.data()[o]);
        for ci in 0..c {
            for tap in 0..3 {
                let k = kd[(o * c + ci) * 3 + tap];
                if k == 0.0 {
                    continue;
                }
                for fi in 0..f {
                    let sf = fi as isize + tap as isize - 1;
                    if sf < 0 || sf >= f as isize {
                        continue;
                    }
                    let src = &xd[(ci * f + sf as usize) * hw..(ci * f + sf as usize + 1) * hw];
                    let dst = &mut out[(o * f + fi) * hw..(o * f + fi + 1) * hw];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += k * s;
                    }
                }
            }
        }
    }
    Tensor::new(vec![co, f, h, w], out)
}

/// Returns `(dx, dkernel, dbias)`.
pub fn temporal_conv1d_backward(
    x: &Tensor,
    kernel: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumericError> {
    let (c, f, h, w) = dims4(x)?;
    let co = kernel.shape()[0];
    if dout.shape() != [co, f, h, w] {
        return Err(NumericError::ShapeMismatch("temporal conv upstream gradient".into()));
    }
    let hw = h * w;
    let (xd, kd, gd) = (x.data(), kernel.data(), dout.data());
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; co];
    for o in 0..co {
        db[o] = gd[o * f * hw..(o + 1) * f * hw].iter().sum();
        for ci in 0..c {
            for tap in 0..3 {
                let kidx = (o * c + ci) * 3 + tap;
                let k = kd[kidx];
                let mut acc = 0.0;
                for fi in 0..f {
                    let sf = fi as isize + tap as isize - 1;
                    if sf < 0 || sf >= f as isize {
                        continue;
                    }
                    let s0 = (ci * f + sf as usize) * hw;
                    let g0 = (o * f + fi) * hw;
                    for p in 0..hw {
                        acc += gd[g0 + p] * xd[s0 + p];
                        dx[s0 + p] += k * gd[g0 + p];
                    }
                }
                dk[kidx] += acc;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(vec![co], db)?,
    ))
}

fn check_kernel(
    kernel: &Tensor,
    bias: &Tensor,
    c: usize,
    taps: &[usize],
) -> Result<usize, NumericError> {
    let ks = kernel.shape();
    if ks.len() != 2 + taps.len() || ks[1] != c || &ks[2..] != taps || bias.shape() != [ks[0]] {
        return Err(NumericError::ShapeMismatch(format!(
            "kernel {ks:?} / bias {:?} for {c} input channels",
            bias.shape()
        )));
    }
    Ok(ks[0])
}

/// A 3x3 convolution layer applied per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub kernel: Parameter,
    pub bias: Parameter,
}

impl Conv3x3 {
    pub fn new(c_in: usize, c_out: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            kernel: Parameter::new(Tensor::randn(&[c_out, c_in, 3, 3], std, rng)),
            bias: Parameter::new(Tensor::zeros(&[c_out])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NumericError> {
        conv2d_3x3(x, &self.kernel.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor, dout: &Tensor) -> Result<Tensor, NumericError> {
        let (dx, dk, db) = conv2d_3x3_backward(x, &self.kernel.value, dout)?;
        self.kernel.grad.add_assign(&dk)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }
}

/// A width-3 convolution along the frame axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConv {
    pub kernel: Parameter,
    pub bias: Parameter,
}

impl TemporalConv {
    pub fn new(c_in: usize, c_out: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            kernel: Parameter::new(Tensor::randn(&[c_out, c_in, 3], std, rng)),
            bias: Parameter::new(Tensor::zeros(&[c_out])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NumericError> {
        temporal_conv1d(x, &self.kernel.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor, dout: &Tensor) -> Result<Tensor, NumericError> {
        let (dx, dk, db) = temporal_conv1d_backward(x, &self.kernel.value, dout)?;
        self.kernel.grad.add_assign(&dk)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }
}

macro_rules! kernel_bias_module {
    ($t:ty) => {
        impl Module for $t {
            fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
                out.push((join_name(prefix, "kernel"), &self.kernel));
                out.push((join_name(prefix, "bias"), &self.bias));
            }

            fn visit_params_mut<'a>(
                &'a mut self,
                prefix: &str,
                out: &mut Vec<(String, &'a mut Parameter)>,
            ) {
                out.push((join_name(prefix, "kernel"), &mut self.kernel));
                out.push((join_name(prefix, "bias"), &mut self.bias));
            }
        }
    };
}

kernel_bias_module!(Conv3x3);
kernel_bias_module!(TemporalConv);
