//! Row-major 2-D grids used for depth maps, images, masks and gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// An RGB triple. Channels are linear values, nominally in `[0, 1]`.
pub type Rgb = [f64; 3];

/// A `height × width` grid stored row by row. Row index `i` runs down the
/// image, column index `j` runs left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// RGB image.
pub type Image = Grid<Rgb>;
/// Binary object mask.
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid { width, height, data: vec![value; width * height] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: (width, height),
                found: (data.len(), 1),
            });
        }
        Ok(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Grid { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.width + j]
    }
    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.width + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.width + j] = v;
    }
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    /// Errors unless `other` has the same width and height.
    pub fn check_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch { expected: self.dims(), found: other.dims() });
        }
        Ok(())
    }
}

impl<T: Clone> Grid<T> {
    /// Left-right mirror: output `(i, j)` holds input `(i, W-1-j)`.
    pub fn mirrored(&self) -> Self {
        let w = self.width;
        Grid::from_fn(w, self.height, |i, j| self.get(i, w - 1 - j).clone())
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    /// Inclusive bounding box `(i_min, i_max, j_min, j_max)` of set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for i in 0..self.height {
            for j in 0..self.width {
                if *self.get(i, j) {
                    bb = Some(match bb {
                        None => (i, i, j, j),
                        Some((a, b, c, d)) => (a.min(i), b.max(i), c.min(j), d.max(j)),
                    });
                }
            }
        }
        bb
    }
}

impl<const N: usize> Grid<[f64; N]> {
    /// Channel values in row-major pixel order.
    pub fn as_flat(&self) -> &[f64] {
        self.data.as_flattened()
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        self.data.as_flattened_mut()
    }
}

impl Image {
    /// Copy with every channel clamped to `[0, 1]`, as used on export.
    pub fn clamped(&self) -> Image {
        self.map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0), p[2].clamp(0.0, 1.0)])
    }
}
