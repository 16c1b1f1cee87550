use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor. Axis 0 is the batch, axis 1 the channel axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimMismatch {
                expected: n,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    /// Product of the axes after the channel axis.
    pub fn spatial(&self) -> usize {
        self.shape.iter().skip(2).product()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Example `i` of the batch as a tensor with batch size one.
    pub fn example(&self, i: usize) -> Tensor {
        let per = self.numel() / self.batch().max(1);
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Data("cannot stack an empty tensor list".into()))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        let mut b = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::Shape {
                    layer: "stack".into(),
                    detail: format!("{:?} vs {:?}", p.shape, first.shape),
                });
            }
            b += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        shape[0] = b;
        Ok(Tensor { shape, data })
    }

    /// Concatenates along the channel axis; all other axes must agree.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Data("cannot concatenate an empty tensor list".into()))?;
        if parts.len() == 1 {
            return Ok((*first).clone());
        }
        let (b, s) = (first.batch(), first.spatial());
        for p in parts {
            if p.shape.len() != first.shape.len()
                || p.batch() != b
                || p.shape[2..] != first.shape[2..]
            {
                return Err(Error::Shape {
                    layer: "concat".into(),
                    detail: format!("{:?} vs {:?}", p.shape, first.shape),
                });
            }
        }
        let c_total: usize = parts.iter().map(|p| p.channels()).sum();
        let mut data = Vec::with_capacity(b * c_total * s);
        for bi in 0..b {
            for p in parts {
                let per = p.channels() * s;
                data.extend_from_slice(&p.data[bi * per..(bi + 1) * per]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = c_total;
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        if sizes.iter().sum::<usize>() != self.channels() {
            return Err(Error::Shape {
                layer: "split".into(),
                detail: format!("{sizes:?} does not partition {} channels", self.channels()),
            });
        }
        let (b, s, c) = (self.batch(), self.spatial(), self.channels());
        let mut out: Vec<Tensor> = sizes
            .iter()
            .map(|&k| {
                let mut shape = self.shape.clone();
                shape[1] = k;
                Tensor {
                    shape,
                    data: Vec::with_capacity(b * k * s),
                }
            })
            .collect();
        for bi in 0..b {
            let mut off = bi * c * s;
            for (t, &k) in out.iter_mut().zip(sizes) {
                t.data.extend_from_slice(&self.data[off..off + k * s]);
                off += k * s;
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }
}
