//! Small parameterized layers shared by the denoisers.

use super::kernels::{
    add_row_bias, column_sums, layer_norm, layer_norm_backward, matmul, matmul_nt, matmul_tn,
    LayerNormCache,
};
use super::tensor::join_name;
use super::{Module, NumericError, Parameter, Tensor};
use crate::rng::Rng;

/// Affine map on rows: `[N, in] -> [N, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            weight: Parameter::new(Tensor::randn(&[d_in, d_out], std, rng)),
            bias: Parameter::new(Tensor::zeros(&[d_out])),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Parameter::new(Tensor::zeros(&[d_in, d_out])),
            bias: Parameter::new(Tensor::zeros(&[d_out])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NumericError> {
        let mut y = matmul(x, &self.weight.value)?;
        add_row_bias(&mut y, &self.bias.value)?;
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dout: &Tensor) -> Result<Tensor, NumericError> {
        self.weight.grad.add_assign(&matmul_tn(x, dout)?)?;
        self.bias.grad.add_assign(&column_sums(dout)?)?;
        matmul_nt(dout, &self.weight.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Parameter,
    pub bias: Parameter,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: Parameter::new(Tensor::full(&[channels], 1.0)),
            bias: Parameter::new(Tensor::zeros(&[channels])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache), NumericError> {
        layer_norm(x, &self.gain.value, &self.bias.value, self.eps)
    }

    pub fn backward(
        &mut self,
        cache: &LayerNormCache,
        dout: &Tensor,
    ) -> Result<Tensor, NumericError> {
        let (dx, dg, db) = layer_norm_backward(cache, &self.gain.value, dout)?;
        self.gain.grad.add_assign(&dg)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }
}

impl Module for Linear {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        out.push((join_name(prefix, "weight"), &self.weight));
        out.push((join_name(prefix, "bias"), &self.bias));
    }

    fn visit_params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Parameter)>,
    ) {
        out.push((join_name(prefix, "weight"), &mut self.weight));
        out.push((join_name(prefix, "bias"), &mut self.bias));
    }
}

impl Module for LayerNorm {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        out.push((join_name(prefix, "gain"), &self.gain));
        out.push((join_name(prefix, "bias"), &self.bias));
    }

    fn visit_params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Parameter)>,
    ) {
        out.push((join_name(prefix, "gain"), &mut self.gain));
        out.push((join_name(prefix, "bias"), &mut self.bias));
    }
}
