use rayon::prelude::*;

use super::Real;
use crate::lf::{LfShape, LightField};

/// A feature field laid out like a light field: `(u, v, x, y, c)`, channel
/// fastest. Each view is one contiguous `X * Y * C` slab.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    shape: LfShape,
    data: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn zeros(shape: LfShape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn from_vec(shape: LfShape, data: Vec<T>) -> Self {
        assert_eq!(shape.len(), data.len(), "field shape/data mismatch");
        Self { shape, data }
    }

    pub fn from_light_field(lf: &LightField) -> Self {
        Self {
            shape: lf.shape(),
            data: lf
                .as_slice()
                .iter()
                .map(|&v| T::from_f64_lossy(v))
                .collect(),
        }
    }

    pub fn to_light_field(&self) -> crate::lf::Result<LightField> {
        LightField::from_vec(self.shape, self.data.iter().map(|v| v.as_f64()).collect())
    }

    pub fn shape(&self) -> LfShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.c
    }

    pub fn views(&self) -> usize {
        self.shape.u * self.shape.v
    }

    pub fn pixels(&self) -> usize {
        self.shape.x * self.shape.y
    }

    pub fn view_len(&self) -> usize {
        self.pixels() * self.shape.c
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

    pub fn view(&self, p: usize) -> &[T] {
        let n = self.view_len();
        &self.data[p * n..(p + 1) * n]
    }

    pub fn view_mut(&mut self, p: usize) -> &mut [T] {
        let n = self.view_len();
        &mut self.data[p * n..(p + 1) * n]
    }

    pub fn views_iter(&self) -> std::slice::Chunks<'_, T> {
        self.data.chunks(self.view_len())
    }

    pub fn par_views(&self) -> rayon::slice::Chunks<'_, T> {
        let n = self.view_len();
        self.data.par_chunks(n)
    }

    pub fn par_views_mut(&mut self) -> rayon::slice::ChunksMut<'_, T> {
        let n = self.view_len();
        self.data.par_chunks_mut(n)
    }

    pub fn add_assign(&mut self, other: &Field<T>) {
        assert_eq!(self.shape, other.shape, "field shapes differ");
        super::add_assign(&mut self.data, &other.data);
    }

    pub fn cast<U: Real>(&self) -> Field<U> {
        Field {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
