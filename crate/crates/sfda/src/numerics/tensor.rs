//! Row-major `f64` matrices and trainable parameters.

use crate::error::SfdaError;
use crate::Result;

/// Dense row-major matrix of `f64`, the universal numeric carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    /// A `rows x cols` matrix of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer. Fails if the length is off.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SfdaError::ShapeMismatch {
                context: "Tensor2D::from_vec".into(),
                expected: format!("{} values", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor2D { rows, cols, data })
    }

    /// A 1x1 matrix holding one value.
    pub fn scalar(v: f64) -> Self {
        Tensor2D {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// (rows, cols).
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Flat row-major view of the entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One row as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single entry of a 1x1 matrix. Panics on anything larger.
    pub fn item(&self) -> f64 {
        assert!(
            self.rows == 1 && self.cols == 1,
            "item() on a {}x{} tensor",
            self.rows,
            self.cols
        );
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product `self * rhs`. Plain triple loop, fixed reduction order.
    pub fn matmul(&self, rhs: &Tensor2D) -> Tensor2D {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Tensor2D::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = k * rhs.cols;
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[row + j];
                }
            }
        }
        out
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Tensor2D) -> Tensor2D {
        assert_eq!(self.rows, rhs.rows, "t_matmul row mismatch");
        let mut out = Tensor2D::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[r * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let row = r * rhs.cols;
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[row + j];
                }
            }
        }
        out
    }

    /// `self * rhs^T` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Tensor2D) -> Tensor2D {
        assert_eq!(self.cols, rhs.cols, "matmul_t col mismatch");
        let mut out = Tensor2D::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            for j in 0..rhs.rows {
                let mut s = 0.0;
                for k in 0..self.cols {
                    s += self.data[i * self.cols + k] * rhs.data[j * self.cols + k];
                }
                out.data[i * rhs.rows + j] = s;
            }
        }
        out
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor2D) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// Set every entry to zero.
    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// A trainable value together with its gradient accumulator and momentum
/// velocity. All three tensors share one shape for the lifetime of the
/// parameter.
#[derive(Debug, Clone)]
pub struct Parameter {
    value: Tensor2D,
    grad: Tensor2D,
    velocity: Tensor2D,
}

impl Parameter {
    pub fn new(value: Tensor2D) -> Self {
        let (r, c) = value.shape();
        Parameter {
            value,
            grad: Tensor2D::zeros(r, c),
            velocity: Tensor2D::zeros(r, c),
        }
    }

    pub fn value(&self) -> &Tensor2D {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor2D {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor2D {
        &self.grad
    }

    pub fn velocity(&self) -> &Tensor2D {
        &self.velocity
    }

    /// Accumulate `g` into the gradient (`+=`).
    pub fn accumulate_grad(&mut self, g: &Tensor2D) {
        assert_eq!(
            self.grad.shape(),
            g.shape(),
            "gradient shape mismatch on accumulate"
        );
        self.grad.add_assign(g);
    }

    /// Reset the gradient to exact zero.
    pub fn zero_grad(&mut self) {
        self.grad.fill_zero();
    }

    /// Reset the momentum velocity to exact zero. Training phases call
    /// this on entry so optimizer state never leaks across phases.
    pub fn reset_velocity(&mut self) {
        self.velocity.fill_zero();
    }

    /// One SGD-with-momentum update. Decay is folded into the gradient
    /// before the momentum update, then `value -= lr * velocity`.
    /// The stored gradient is left untouched.
    pub(crate) fn sgd_update(&mut self, lr: f64, momentum: f64, weight_decay: f64) {
        assert_eq!(
            self.value.shape(),
            self.grad.shape(),
            "sgd_update: grad/value shape mismatch"
        );
        let n = self.value.data().len();
        for i in 0..n {
            let g = self.grad.data()[i] + weight_decay * self.value.data()[i];
            let v = momentum * self.velocity.data()[i] + g;
            self.velocity.data_mut()[i] = v;
            self.value.data_mut()[i] -= lr * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor2D::from_vec(2, 3, vec![0.0; 5]).is_err());
        assert!(Tensor2D::from_vec(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_small() {
        let a = Tensor2D::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor2D::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Tensor2D::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
        let b = Tensor2D::from_vec(2, 3, vec![2.0, 1.0, -1.0, 3.0, 0.0, 2.5]).unwrap();
        let mut a_t = Tensor2D::zeros(3, 2);
        for i in 0..2 {
            for j in 0..3 {
                a_t.set(j, i, a.get(i, j));
            }
        }
        // a^T * b computed directly vs via the explicit transpose
        assert_eq!(a.t_matmul(&b).data(), a_t.matmul(&b).data());
        // b * a^T computed directly vs via the explicit transpose
        assert_eq!(b.matmul_t(&a).data(), b.matmul(&a_t).data());
    }

    #[test]
    fn parameter_keeps_shapes_in_sync() {
        let p = Parameter::new(Tensor2D::zeros(3, 4));
        assert_eq!(p.value().shape(), p.grad().shape());
        assert_eq!(p.value().shape(), p.velocity().shape());
    }

    #[test]
    fn zero_grad_is_exact() {
        let mut p = Parameter::new(Tensor2D::zeros(2, 2));
        p.accumulate_grad(&Tensor2D::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        p.zero_grad();
        assert!(p.grad().data().iter().all(|&v| v == 0.0));
    }
}
