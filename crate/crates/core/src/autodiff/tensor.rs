use crate::error::{Error, Result};

/// Dense row-major array with a gradient buffer of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor values".into()));
        }
        Ok(Self {
            grad: vec![0.0; len],
            shape,
            values,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![v],
            grad: vec![0.0],
        }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("ragged rows"));
        }
        Tensor::new(vec![n, d], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let d = *self.shape.last().unwrap_or(&1);
        self.values.chunks(d).map(<[f64]>::to_vec).collect()
    }
}

/// L2-normalizes every slice of `t` along `axis`.
///
/// Slices with zero norm stay zero; the returned flags mark them, in the
/// row-major order of the remaining axes.
pub fn l2_normalize(t: &Tensor, axis: usize) -> Result<(Tensor, Vec<bool>)> {
    let shape = t.shape();
    if axis >= shape.len() {
        return Err(Error::shape(format!(
            "axis {axis} out of range for {shape:?}"
        )));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let mut out = t.values().to_vec();
    let mut flags = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let norm = (0..n).map(|k| out[idx(k)].powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                (0..n).for_each(|k| out[idx(k)] /= norm);
                flags.push(false);
            } else {
                flags.push(true);
            }
        }
    }
    Ok((Tensor::new(shape.to_vec(), out)?, flags))
}
