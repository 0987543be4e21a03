//! Dense layers and activations with explicit backward passes.

use ndarray::{Array1, Array2, Axis};

use super::{GradStore, Init, Param, ParamBuilder, Scalar};

pub struct Linear<T> {
    pub w: Param<T>,
    pub b: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(builder: &mut ParamBuilder<T>, name: &str, in_dim: usize, out_dim: usize, init: Init) -> Self {
        Linear {
            w: builder.tensor(&format!("{name}.w"), &[out_dim, in_dim], init),
            b: builder.tensor(&format!("{name}.b"), &[out_dim], Init::Zeros),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    /// x: [n, in] -> [n, out]
    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let w = self.w.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b = self.b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = x.dot(&w.t());
        y += &b;
        y
    }

    /// Needs the forward input; returns dx.
    pub fn backward(&self, x: &Array2<T>, dy: &Array2<T>, grads: &mut GradStore<T>) -> Array2<T> {
        let w = self.w.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(Axis(0));
        grads.accum(&self.w, &dw.into_dyn());
        grads.accum(&self.b, &db.into_dyn());
        dy.dot(&w)
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.w);
        f(&self.b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(builder: &mut ParamBuilder<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: builder.tensor(&format!("{name}.gamma"), &[dim], Init::Ones),
            beta: builder.tensor(&format!("{name}.beta"), &[dim], Init::Zeros),
            eps: 1e-5,
        }
    }

    /// Normalizes each row of x: [n, d].
    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let d = x.ncols();
        let inv_d = T::from_f64(1.0 / d as f64);
        let eps = T::from_f64(self.eps);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() * inv_d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b) * inv_d;
            let is = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * is);
            *inv = is;
        }
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            row.zip_mut_with(&gamma, |v, g| *v = *v * *g);
            row += &beta;
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<T>,
        dy: &Array2<T>,
        grads: &mut GradStore<T>,
    ) -> Array2<T> {
        let d = dy.ncols();
        let inv_d = T::from_f64(1.0 / d as f64);
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        grads.accum(&self.gamma, &dgamma.into_dyn());
        grads.accum(&self.beta, &dbeta.into_dyn());

        let mut dx = Array2::zeros(dy.raw_dim());
        for ((dy_row, xh_row), (mut dx_row, inv)) in dy
            .rows()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(dx.rows_mut().into_iter().zip(cache.inv_std.iter()))
        {
            // dxh = gamma * dy; dx = inv * (dxh - mean(dxh) - xh * mean(dxh * xh))
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for ((dyv, g), xh) in dy_row.iter().zip(gamma.iter()).zip(xh_row.iter()) {
                let dxh = *dyv * *g;
                m1 += dxh;
                m2 += dxh * *xh;
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (((dxv, dyv), g), xh) in dx_row
                .iter_mut()
                .zip(dy_row.iter())
                .zip(gamma.iter())
                .zip(xh_row.iter())
            {
                let dxh = *dyv * *g;
                *dxv = *inv * (dxh - m1 - *xh * m2);
            }
        }
        dx
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

pub fn relu<T: Scalar, D: ndarray::Dimension>(x: &ndarray::Array<T, D>) -> ndarray::Array<T, D> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar, D: ndarray::Dimension>(
    x: &ndarray::Array<T, D>,
    dy: &ndarray::Array<T, D>,
) -> ndarray::Array<T, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, v| {
        if *v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| {
        let xf = v.as_f64();
        let t = (GELU_C * (xf + GELU_A * xf * xf * xf)).tanh();
        T::from_f64(0.5 * xf * (1.0 + t))
    })
}

pub fn gelu_backward<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, v| {
        let xf = v.as_f64();
        let inner = GELU_C * (xf + GELU_A * xf * xf * xf);
        let t = inner.tanh();
        let dinner = GELU_C * (1.0 + 3.0 * GELU_A * xf * xf);
        let grad = 0.5 * (1.0 + t) + 0.5 * xf * (1.0 - t * t) * dinner;
        *d = *d * T::from_f64(grad);
    });
    dx
}

pub fn sigmoid<T: Scalar, D: ndarray::Dimension>(x: &ndarray::Array<T, D>) -> ndarray::Array<T, D> {
    x.mapv(|v| T::one() / (T::one() + (-v).exp()))
}

/// Takes the forward *output* y = sigmoid(x).
pub fn sigmoid_backward<T: Scalar, D: ndarray::Dimension>(
    y: &ndarray::Array<T, D>,
    dy: &ndarray::Array<T, D>,
) -> ndarray::Array<T, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, v| *d = *d * *v * (T::one() - *v));
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_manual() {
        let mut b = ParamBuilder::<f64>::new(0);
        let mut lin = Linear::new(&mut b, "l", 3, 2, Init::Normal(0.5));
        lin.b.value[[0]] = 0.1;
        lin.b.value[[1]] = -0.2;
        let x = ndarray::array![[1.0, 2.0, 3.0]];
        let y = lin.forward(&x);
        let w = &lin.w.value;
        let expect0 = w[[0, 0]] + 2.0 * w[[0, 1]] + 3.0 * w[[0, 2]] + 0.1;
        assert!((y[[0, 0]] - expect0).abs() < 1e-12);
    }

    #[test]
    fn layernorm_rows_are_standardized() {
        let mut b = ParamBuilder::<f64>::new(0);
        let ln = LayerNorm::new(&mut b, "ln", 4);
        let x = ndarray::array![[1.0, 2.0, 3.0, 4.0], [5.0, 5.0, 5.0, 5.0]];
        let (y, _) = ln.forward(&x);
        let mean0: f64 = y.row(0).sum() / 4.0;
        assert!(mean0.abs() < 1e-9);
        // Constant rows normalize to zero.
        assert!(y.row(1).iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = ndarray::array![[1.0f64, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let y = softmax_rows(&x);
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
