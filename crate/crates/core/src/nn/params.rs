use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;

use super::Real;
use crate::error::{Error, Result};

/// Handle to one named tensor inside a [`ParamStore`]. Tensors are stored
/// as row-major `rows x cols` blocks; vectors use `rows == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    index: usize,
    offset: usize,
    rows: usize,
    cols: usize,
}

impl ParamId {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub id: ParamId,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry>,
    data: Vec<T>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Registers a zero-initialized tensor.
    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        let id = ParamId {
            index: self.entries.len(),
            offset: self.data.len(),
            rows,
            cols,
        };
        self.data.resize(self.data.len() + rows * cols, T::zero());
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: [rows, cols],
            id,
        });
        id
    }

    /// Registers a tensor drawn from `U(-bound, bound)`.
    pub fn uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let id = self.zeros(name, rows, cols);
        if bound > 0.0 {
            for v in &mut self.data[id.range()] {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        }
        id
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn slice(&self, id: ParamId) -> &[T] {
        &self.data[id.range()]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.data[id.range()]
    }

    pub fn view2(&self, id: ParamId) -> ArrayView2<'_, T> {
        ArrayView2::from_shape((id.rows, id.cols), self.slice(id)).expect("param layout")
    }

    pub fn view1(&self, id: ParamId) -> ArrayView1<'_, T> {
        ArrayView1::from(self.slice(id))
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            data: vec![T::zero(); self.data.len()],
        }
    }

    /// Same layout, values converted to another scalar type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Overwrites the tensor `name` with `values`, checking the shape.
    pub fn assign(&mut self, name: &str, shape: [usize; 2], values: &[f64]) -> Result<()> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
        if entry.shape != shape || values.len() != entry.id.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, checkpoint holds {:?} ({} values)",
                entry.shape,
                shape,
                values.len()
            )));
        }
        let id = entry.id;
        for (dst, &src) in self.data[id.range()].iter_mut().zip(values) {
            *dst = T::of(src);
        }
        Ok(())
    }
}

/// Gradient buffer with the same flat layout as the [`ParamStore`] it was
/// created from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    data: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn slice(&self, id: ParamId) -> &[T] {
        &self.data[id.range()]
    }

    pub fn view2_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, T> {
        ArrayViewMut2::from_shape((id.rows, id.cols), &mut self.data[id.range()])
            .expect("param layout")
    }

    pub fn view1_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, T> {
        ArrayViewMut1::from(&mut self.data[id.range()])
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn clear(&mut self) {
        self.data.fill(T::zero());
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
