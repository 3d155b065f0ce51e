use std::fmt;

use super::NumericError;
use crate::rng::Rng;

/// Dense row-major tensor of `f64` values.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericError::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.normal() * std).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericError::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize), NumericError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(NumericError::ShapeMismatch(format!(
                "expected a matrix, got shape {s:?}"
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NumericError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NumericError::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[self.shape.len() - 1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<(), NumericError> {
        if self.shape != other.shape {
            return Err(NumericError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumericError> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), NumericError> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose2(&self) -> Result<Tensor, NumericError> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Concatenates matrices with equal column counts along rows.
    pub fn concat_rows(parts: &[&Tensor], cols: usize) -> Result<Tensor, NumericError> {
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = p.dims2()?;
            if c != cols {
                return Err(NumericError::ShapeMismatch(format!(
                    "column width {c} differs from {cols}"
                )));
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor, NumericError> {
        let (r, c) = self.dims2()?;
        if start > end || end > r {
            return Err(NumericError::ShapeMismatch(format!(
                "row range {start}..{end} out of {r}"
            )));
        }
        Ok(Tensor {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        })
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(value: Tensor) -> Self {
        Self {
            trainable: false,
            ..Self::new(value)
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

/// Anything that owns named parameters.
///
/// Names are stable, dot-separated paths; the visit order is fixed so flat
/// parameter vectors and optimizer state line up across calls.
pub trait Module {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>);
    fn visit_params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Parameter)>,
    );

    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        self.visit_params("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut out = Vec::new();
        self.visit_params_mut("", &mut out);
        out
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// All parameter values concatenated in visit order.
    fn flat_values(&self) -> Vec<f64> {
        self.named_params()
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().copied())
            .collect()
    }

    fn flat_grads(&self) -> Vec<f64> {
        self.named_params()
            .iter()
            .flat_map(|(_, p)| p.grad.data().iter().copied())
            .collect()
    }

    fn set_flat_values(&mut self, values: &[f64]) {
        let mut offset = 0;
        for (_, p) in self.named_params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    fn set_trainable(&mut self, trainable: bool) {
        for (_, p) in self.named_params_mut() {
            p.trainable = trainable;
        }
    }
}

pub(crate) fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn transpose_round_trips() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let tt = t.transpose2().unwrap();
        assert_eq!(tt.data(), &[1., 4., 2., 5., 3., 6.]);
        assert_eq!(tt.transpose2().unwrap(), t);
    }

    #[test]
    fn concat_and_slice_rows() {
        let a = Tensor::full(&[2, 3], 1.0);
        let b = Tensor::full(&[1, 3], 2.0);
        let c = Tensor::concat_rows(&[&a, &b], 3).unwrap();
        assert_eq!(c.shape(), &[3, 3]);
        assert_eq!(c.slice_rows(2, 3).unwrap(), b);
        assert!(Tensor::concat_rows(&[&a, &Tensor::zeros(&[1, 2])], 3).is_err());
    }
}
