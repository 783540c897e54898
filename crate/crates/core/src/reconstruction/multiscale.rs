//! Coarse-to-fine depth offsets.
//!
//! A coarse grid with node spacing `s` is bilinearly upsampled onto the pixel
//! grid. Nodes are laid out symmetrically about the image centre and all node
//! coordinates are dyadic, so a mirror-symmetric coarse grid upsamples to a
//! bitwise mirror-symmetric field.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::Grid;
use crate::linalg;

#[derive(Clone, Debug, PartialEq)]
struct Axis {
    nodes: usize,
    /// Per pixel: left node and weight of the right node.
    taps: Vec<(usize, f64)>,
}

impl Axis {
    fn new(len: usize, s: usize) -> Axis {
        let span = (len - 1) as f64;
        let nodes = (linalg::ceil(span / s as f64) as usize + 1).max(2);
        let x0 = span / 2.0 - s as f64 * (nodes - 1) as f64 / 2.0;
        let taps = (0..len)
            .map(|p| {
                let t = (p as f64 - x0) / s as f64;
                let q = (linalg::floor(t) as usize).min(nodes - 2);
                (q, t - q as f64)
            })
            .collect();
        Axis { nodes, taps }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Upsampler {
    width: usize,
    height: usize,
    rows: Axis,
    cols: Axis,
}

impl Upsampler {
    pub fn new(width: usize, height: usize, spacing: usize) -> Self {
        Upsampler { width, height, rows: Axis::new(height, spacing), cols: Axis::new(width, spacing) }
    }

    /// Zero-valued coarse grid.
    pub fn zeros(&self) -> Grid<f64> {
        Grid::filled(self.cols.nodes, self.rows.nodes, 0.0)
    }

    /// Adds the upsampled `coarse` field to `out`.
    pub fn add_to(&self, coarse: &Grid<f64>, out: &mut Grid<f64>) {
        let mut row_buf = vec![0.0; self.width];
        for i in 0..self.height {
            let (qi, fi) = self.rows.taps[i];
            for (j, v) in row_buf.iter_mut().enumerate() {
                let (qj, fj) = self.cols.taps[j];
                // Pairs along j are summed first; each pair is commutative, so
                // mirrored pixels see identical arithmetic.
                let top = (1.0 - fj) * coarse.get(qi, qj) + fj * coarse.get(qi, qj + 1);
                let bot = (1.0 - fj) * coarse.get(qi + 1, qj) + fj * coarse.get(qi + 1, qj + 1);
                *v = (1.0 - fi) * top + fi * bot;
            }
            for (j, v) in row_buf.iter().enumerate() {
                *out.get_mut(i, j) += v;
            }
        }
    }

    /// Adjoint of [`Upsampler::add_to`].
    pub fn adjoint(&self, g: &Grid<f64>) -> Grid<f64> {
        let mut c = self.zeros();
        for i in 0..self.height {
            let (qi, fi) = self.rows.taps[i];
            for j in 0..self.width {
                let (qj, fj) = self.cols.taps[j];
                let v = *g.get(i, j);
                *c.get_mut(qi, qj) += (1.0 - fi) * (1.0 - fj) * v;
                *c.get_mut(qi, qj + 1) += (1.0 - fi) * fj * v;
                *c.get_mut(qi + 1, qj) += fi * (1.0 - fj) * v;
                *c.get_mut(qi + 1, qj + 1) += fi * fj * v;
            }
        }
        c
    }
}
