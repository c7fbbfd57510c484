//! Dense feature-map and kernel containers.
//!
//! Both containers are generic over the scalar so the same reference math
//! runs on the 32-bit datapath and on the 64-bit oracle path.

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

use crate::error::{ensure_dim, Error, Result};

/// Scalar word used by the reference operators.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// `maps × height × width` grid, row-major within a map, maps outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps<T = f32> {
    maps: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMaps<T> {
    pub fn zeros(maps: usize, height: usize, width: usize) -> Self {
        Self {
            maps,
            height,
            width,
            data: vec![T::zero(); maps * height * width],
        }
    }

    pub fn from_vec(maps: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        ensure_dim("data length", maps * height * width, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec(
                "feature maps contain non-finite values".into(),
            ));
        }
        Ok(Self {
            maps,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        maps: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(maps * height * width);
        for i in 0..maps {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(i, r, c));
                }
            }
        }
        Self {
            maps,
            height,
            width,
            data,
        }
    }

    /// Uniform values in `[-1, 1)`.
    pub fn random<R: Rng>(maps: usize, height: usize, width: usize, rng: &mut R) -> Self {
        Self::from_fn(maps, height, width, |_, _, _| {
            T::of_f64(rng.gen_range(-1.0..1.0))
        })
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.maps, self.height, self.width)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, map: usize, row: usize, col: usize) -> usize {
        (map * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, map: usize, row: usize, col: usize) -> T {
        self.data[self.index(map, row, col)]
    }

    /// Read with zero padding: coordinates outside the map return zero.
    #[inline]
    pub fn get_padded(&self, map: usize, row: isize, col: isize) -> T {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            T::zero()
        } else {
            self.get(map, row as usize, col as usize)
        }
    }

    #[inline]
    pub fn set(&mut self, map: usize, row: usize, col: usize, v: T) {
        let idx = self.index(map, row, col);
        self.data[idx] = v;
    }

    #[inline]
    pub fn add_at(&mut self, map: usize, row: usize, col: usize, v: T) {
        let idx = self.index(map, row, col);
        self.data[idx] = self.data[idx] + v;
    }

    /// Maps `[start, start + count)` as a new tensor.
    pub fn slice_maps(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.maps {
            return Err(Error::shape("maps", start + count, self.maps));
        }
        let plane = self.height * self.width;
        Ok(Self {
            maps: count,
            height: self.height,
            width: self.width,
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        })
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            maps: self.maps,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn convert<U: Real>(&self) -> FeatureMaps<U> {
        FeatureMaps {
            maps: self.maps,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    /// Inner product accumulated in 64-bit.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        ensure_dim("maps", self.maps, other.maps)?;
        ensure_dim("height", self.height, other.height)?;
        ensure_dim("width", self.width, other.width)
    }

    /// Largest elementwise relative error against `reference`, using
    /// `max(|reference|_inf, tiny)` as the scale so near-zero entries do not blow up.
    pub fn max_rel_error<U: Real>(&self, reference: &FeatureMaps<U>) -> Result<f64> {
        ensure_dim("maps", reference.maps, self.maps)?;
        ensure_dim("height", reference.height, self.height)?;
        ensure_dim("width", reference.width, self.width)?;
        Ok(max_rel_error(
            self.data.iter().map(|v| v.as_f64()),
            reference.data.iter().map(|v| v.as_f64()),
        ))
    }
}

/// Relative error of two equally long sequences, scaled by the reference's
/// largest magnitude.
pub fn max_rel_error(
    actual: impl IntoIterator<Item = f64>,
    reference: impl IntoIterator<Item = f64>,
) -> f64 {
    let pairs: Vec<(f64, f64)> = actual.into_iter().zip(reference).collect();
    let scale = pairs
        .iter()
        .map(|(_, r)| r.abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    pairs
        .iter()
        .map(|(a, r)| (a - r).abs() / scale)
        .fold(0.0, f64::max)
}

/// `n_in × m_out` kernels of `k × k` words; kernel `(i, j)` connects input map
/// `i` to output map `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBank<T = f32> {
    n_in: usize,
    m_out: usize,
    k: usize,
    weights: Vec<T>,
}

impl<T: Real> KernelBank<T> {
    pub fn zeros(n_in: usize, m_out: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSpec("kernel side must be at least 1".into()));
        }
        Ok(Self {
            n_in,
            m_out,
            k,
            weights: vec![T::zero(); n_in * m_out * k * k],
        })
    }

    pub fn from_vec(n_in: usize, m_out: usize, k: usize, weights: Vec<T>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSpec("kernel side must be at least 1".into()));
        }
        ensure_dim("weights length", n_in * m_out * k * k, weights.len())?;
        Ok(Self {
            n_in,
            m_out,
            k,
            weights,
        })
    }

    pub fn random<R: Rng>(n_in: usize, m_out: usize, k: usize, rng: &mut R) -> Result<Self> {
        let weights = (0..n_in * m_out * k * k)
            .map(|_| T::of_f64(rng.gen_range(-1.0..1.0)))
            .collect();
        Self::from_vec(n_in, m_out, k, weights)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn m_out(&self) -> usize {
        self.m_out
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.weights
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, u: usize, v: usize) -> usize {
        ((i * self.m_out + j) * self.k + u) * self.k + v
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, u: usize, v: usize) -> T {
        self.weights[self.index(i, j, u, v)]
    }

    /// The `k × k` kernel `(i, j)` as a contiguous slice.
    #[inline]
    pub fn kernel(&self, i: usize, j: usize) -> &[T] {
        let start = self.index(i, j, 0, 0);
        &self.weights[start..start + self.k * self.k]
    }

    #[inline]
    pub fn kernel_mut(&mut self, i: usize, j: usize) -> &mut [T] {
        let start = self.index(i, j, 0, 0);
        let len = self.k * self.k;
        &mut self.weights[start..start + len]
    }

    /// Kernels rotated by 180 degrees with the in/out roles swapped, i.e. the
    /// bank that drives the transposed convolution.
    pub fn rotated_transpose(&self) -> Self {
        let k = self.k;
        let mut out = Self {
            n_in: self.m_out,
            m_out: self.n_in,
            k,
            weights: vec![T::zero(); self.weights.len()],
        };
        for i in 0..self.n_in {
            for j in 0..self.m_out {
                for u in 0..k {
                    for v in 0..k {
                        let idx = out.index(j, i, k - 1 - u, k - 1 - v);
                        out.weights[idx] = self.get(i, j, u, v);
                    }
                }
            }
        }
        out
    }

    pub fn convert<U: Real>(&self) -> KernelBank<U> {
        KernelBank {
            n_in: self.n_in,
            m_out: self.m_out,
            k: self.k,
            weights: self.weights.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        ensure_dim("kernel n_in", self.n_in, other.n_in)?;
        ensure_dim("kernel m_out", self.m_out, other.m_out)?;
        ensure_dim("kernel k", self.k, other.k)
    }
}
