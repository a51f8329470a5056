use accguard_core::{Error, Result};

/// Dense `(batch, channels, length)` array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for l in 0..shape[2] {
                    data.push(f(b, c, l));
                }
            }
        }
        Tensor { shape, data }
    }

    /// Stacks equally sized samples of `channels * length` values.
    pub fn stack<'a>(channels: usize, length: usize, samples: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut data = Vec::new();
        let mut batch = 0;
        for s in samples {
            if s.len() != channels * length {
                return Err(Error::Shape(format!(
                    "sample {batch} has {} values, expected {channels}x{length}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
            batch += 1;
        }
        Ok(Tensor {
            shape: [batch, channels, length],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    pub fn sample_size(&self) -> usize {
        self.shape[1] * self.shape[2]
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

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_size();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.sample_size();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, c: usize, l: usize) -> f64 {
        self.data[(b * self.shape[1] + c) * self.shape[2] + l]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Same data viewed with a new shape of equal size.
    pub fn reshape(self, shape: [usize; 3]) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Tensor {
        let n = self.sample_size();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor {
            shape: [indices.len(), self.shape[1], self.shape[2]],
            data,
        }
    }

    pub(crate) fn expect_shape(&self, what: &str, channels: usize) -> Result<()> {
        if self.shape[1] != channels {
            return Err(Error::Shape(format!(
                "{what}: channel axis is {} but the layer expects {channels} (input shape {:?})",
                self.shape[1], self.shape
            )));
        }
        Ok(())
    }
}

/// `(B, C, L)` to a `C x (B*L)` matrix.
pub(crate) fn to_channel_major(x: &Tensor) -> Vec<f64> {
    let [b, c, l] = x.shape;
    let mut out = vec![0.0; b * c * l];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x.data[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            out[ci * b * l + bi * l..ci * b * l + (bi + 1) * l].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`to_channel_major`].
pub(crate) fn from_channel_major(m: &[f64], shape: [usize; 3]) -> Tensor {
    let [b, c, l] = shape;
    let mut data = vec![0.0; b * c * l];
    for bi in 0..b {
        for ci in 0..c {
            data[(bi * c + ci) * l..(bi * c + ci + 1) * l]
                .copy_from_slice(&m[ci * b * l + bi * l..ci * b * l + (bi + 1) * l]);
        }
    }
    Tensor { shape, data }
}
