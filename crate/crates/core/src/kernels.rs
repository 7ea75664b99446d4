//! Dense primitives: matmul, row softmax, layer norm, affine layers and MLPs.
//!
//! Nothing here broadcasts implicitly. Every reduction accumulates in `f64`
//! and rounds once into the tensor's scalar type.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.shape2("matmul")?;
    let (k2, n) = b.shape2("matmul")?;
    if k != k2 {
        return Err(Error::shape(
            "numeric-kernel",
            "matmul",
            format!("[{m}x{k}] * [{k2}x{n}]: inner dims disagree"),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = ad[i * k + p].to_f64_lossy();
            let brow = &bd[p * n..(p + 1) * n];
            for (s, bv) in acc.iter_mut().zip(brow) {
                *s += av * bv.to_f64_lossy();
            }
        }
        out.extend(acc.iter().map(|&v| T::from_f64_lossy(v)));
    }
    Tensor::new(vec![m, n], out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = x.shape2("softmax_rows")?;
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = x.row(i);
        let max = row.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::from_f64_lossy(e / sum)));
    }
    Tensor::new(vec![m, n], out)
}

/// Per-row standardization followed by an affine gain/bias.
///
/// A zero-variance row standardizes to zero and so outputs `bias`.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = x.shape2("layer_norm")?;
    if n < 2 {
        return Err(Error::DegenerateShape {
            op: "layer_norm",
            detail: format!("row width {n} < 2"),
        });
    }
    if gain.len() != n || bias.len() != n {
        return Err(Error::shape(
            "numeric-kernel",
            "layer_norm",
            format!("gain/bias lengths {}/{} vs width {n}", gain.len(), bias.len()),
        ));
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n as f64;
        let var = row
            .iter()
            .map(|v| {
                let d = v.to_f64_lossy() - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (j, v) in row.iter().enumerate() {
            let z = (v.to_f64_lossy() - mean) * inv;
            let y = z * gain.data()[j].to_f64_lossy() + bias.data()[j].to_f64_lossy();
            out.push(T::from_f64_lossy(y));
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let x = x.to_f64_lossy();
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    T::from_f64_lossy(s)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Affine map `x * weight + bias` with `weight` stored `[in x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, out) = weight.shape2("Linear::new")?;
        if bias.dims() != [out] {
            return Err(Error::shape(
                "numeric-kernel",
                "Linear::new",
                format!("bias dims {:?} vs out width {out}", bias.dims()),
            ));
        }
        Ok(Linear { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(vec![input, output]),
            bias: Tensor::zeros(vec![output]),
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_width(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(x, &self.weight, &self.bias)
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = weight.shape2("linear")?;
    if bias.len() != n {
        return Err(Error::shape(
            "numeric-kernel",
            "linear",
            format!("bias length {} vs out width {n}", bias.len()),
        ));
    }
    let mut y = matmul(x, weight)?;
    let b = bias.data();
    for i in 0..y.rows() {
        for (v, bv) in y.row_mut(i).iter_mut().zip(b) {
            *v = T::from_f64_lossy(v.to_f64_lossy() + bv.to_f64_lossy());
        }
    }
    Ok(y)
}

/// Stack of affine layers with ReLU between consecutive layers (none after
/// the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<Linear<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("numeric-kernel", "mlp needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_width() != w[1].in_width() {
                return Err(Error::shape(
                    "numeric-kernel",
                    "Mlp::new",
                    format!("layer widths {} -> {} do not chain", w[0].out_width(), w[1].in_width()),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    /// Two-layer MLP of zeros: `input -> 2*output -> output`.
    pub fn zeros(input: usize, output: usize) -> Self {
        Mlp {
            layers: vec![Linear::zeros(input, 2 * output), Linear::zeros(2 * output, output)],
        }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        mlp(x, &self.layers)
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(Linear::cast).collect(),
        }
    }
}

pub fn mlp<T: Scalar>(x: &Tensor<T>, layers: &[Linear<T>]) -> Result<Tensor<T>> {
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(&h)?;
        if i + 1 < layers.len() {
            h = relu(&h);
        }
    }
    Ok(h)
}

/// Affine norm parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(width: usize) -> Self {
        LayerNorm {
            gain: Tensor::filled(vec![width], T::one()),
            bias: Tensor::zeros(vec![width]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        layer_norm(x, &self.gain, &self.bias)
    }

    pub fn cast<U: Scalar>(&self) -> LayerNorm<U> {
        LayerNorm {
            gain: self.gain.cast(),
            bias: self.bias.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(dims.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&Tensor::identity(3), &a).unwrap(), a);

        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = t(&[2, 1], &[0.0, 1.0]);
        assert_eq!(matmul(&x, &y).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_mismatch_is_shape_error() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let err = matmul(&a, &a).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_rows(&t(&[1, 4], &[0.7; 4])).unwrap();
        for v in u.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let s = softmax_rows(&t(&[1, 2], &[0.0, 3f64.ln()])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12);
        assert!((s.data()[1] - 0.75).abs() < 1e-12);
        let col = softmax_rows(&t(&[3, 1], &[-4.0, 0.0, 9.0])).unwrap();
        assert_eq!(col.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = t(&[2], &[1.0, 1.0]);
        let zeros = t(&[2], &[0.0, 0.0]);
        let c = layer_norm(&t(&[1, 2], &[5.0, 5.0]), &ones, &zeros).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0]);

        let r = layer_norm(&t(&[1, 2], &[1.0, 3.0]), &ones, &zeros).unwrap();
        assert!((r.data()[0] + 1.0).abs() < 1e-4);
        assert!((r.data()[1] - 1.0).abs() < 1e-4);

        let bias = t(&[2], &[0.3, -0.7]);
        let g = layer_norm(&t(&[1, 2], &[1.0, 3.0]), &zeros, &bias).unwrap();
        assert_eq!(g.data(), &[0.3, -0.7]);
    }

    #[test]
    fn layer_norm_rejects_width_one() {
        let one = t(&[1], &[1.0]);
        let err = layer_norm(&t(&[2, 1], &[1.0, 2.0]), &one, &one).unwrap_err();
        assert!(matches!(err, Error::DegenerateShape { .. }));
    }

    #[test]
    fn sigmoid_and_zero_linear() {
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
        let lin = Linear {
            weight: Tensor::<f64>::zeros(vec![3, 2]),
            bias: t(&[2], &[0.5, -1.5]),
        };
        let y = lin.forward(&t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn two_layer_mlp_hand_computed() {
        // x = [1, -2]
        // h = relu(x W1 + b1), W1 = [[1, 0, 2], [1, -1, 0]], b1 = [0, 0, -1]
        //   = relu([-1, 2, 1]) = [0, 2, 1]
        // y = h W2 + b2, W2 = [[1], [3], [-2]], b2 = [0.5]  -> 6 - 2 + 0.5 = 4.5
        let l1 = Linear::new(t(&[2, 3], &[1.0, 0.0, 2.0, 1.0, -1.0, 0.0]), t(&[3], &[0.0, 0.0, -1.0])).unwrap();
        let l2 = Linear::new(t(&[3, 1], &[1.0, 3.0, -2.0]), t(&[1], &[0.5])).unwrap();
        let m = Mlp::new(vec![l1, l2]).unwrap();
        let y = m.forward(&t(&[1, 2], &[1.0, -2.0])).unwrap();
        assert_eq!(y.data(), &[4.5]);
    }

    #[test]
    fn mlp_rejects_unchained_layers() {
        assert!(Mlp::new(vec![Linear::<f32>::zeros(2, 3), Linear::zeros(4, 1)]).is_err());
    }
}
