use ndarray::{Array2, ArrayView1, ArrayViewMut1};

use super::NnError;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2(pub(crate) Array2<f64>);

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2(Array2::zeros((rows, cols)))
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape {
                op: "from_vec",
                detail: format!("{} values for a {rows}x{cols} tensor", data.len()),
            });
        }
        Ok(Tensor2(
            Array2::from_shape_vec((rows, cols), data).expect("length checked"),
        ))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(NnError::Shape {
                    op: "from_rows",
                    detail: format!("row {i} has {} columns, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// A single-row tensor.
    pub fn row_vector(v: &[f64]) -> Self {
        Tensor2(Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("1 x n"))
    }

    pub fn scalar(x: f64) -> Self {
        Tensor2(Array2::from_elem((1, 1), x))
    }

    pub fn from_array(a: Array2<f64>) -> Self {
        // Keep everything in standard layout so row slices are contiguous.
        if a.is_standard_layout() {
            Tensor2(a)
        } else {
            Tensor2(a.as_standard_layout().into_owned())
        }
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.0[(r, c)] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.as_slice()[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols();
        &mut self.as_slice_mut()[r * cols..(r + 1) * cols]
    }

    pub fn row_view(&self, r: usize) -> ArrayView1<'_, f64> {
        self.0.row(r)
    }

    pub fn row_view_mut(&mut self, r: usize) -> ArrayViewMut1<'_, f64> {
        self.0.row_mut(r)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.0.as_slice_mut().expect("standard layout")
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// The value of a 1x1 tensor.
    pub fn item(&self) -> Option<f64> {
        (self.shape() == (1, 1)).then(|| self.0[(0, 0)])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor2 {
        let mut out = Tensor2::zeros(idx.len(), self.cols());
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }
}
