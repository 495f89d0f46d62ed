use rand::Rng;

use super::real::Real;
use crate::{Error, Result};

/// Fully connected network: ReLU on hidden layers, linear output.
///
/// Parameters live in one flat buffer, layer by layer, each layer as an
/// `out × in` row-major weight matrix followed by `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real = f32> {
    widths: Vec<usize>,
    params: Vec<T>,
}

/// Activations saved by [`Mlp::forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Input of every layer, batch-major (`batch × width`).
    inputs: Vec<Vec<T>>,
    /// Output of every layer, feature-major (`width × batch`); hidden
    /// layers are post-ReLU.
    outputs: Vec<Vec<T>>,
    pub batch: usize,
}

impl<T: Real> Trace<T> {
    /// Whether each hidden unit is active, layer by layer.
    pub(crate) fn hidden_active(&self) -> impl Iterator<Item = bool> + '_ {
        let k = self.outputs.len() - 1;
        self.outputs[..k].iter().flatten().map(|&a| a > T::ZERO)
    }

    /// Network output, feature-major (`output_width × batch`).
    pub fn output(&self) -> &[T] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Cache-blocked transpose of a row-major `rows × cols` matrix.
pub(crate) fn transpose<T: Copy + Default>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    const B: usize = 16;
    let mut dst = vec![T::default(); rows * cols];
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "mlp needs at least two layer widths, all positive (got {widths:?})"
        )));
    }
    Ok(())
}

impl<T: Real> Mlp<T> {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Mlp {
            widths: widths.to_vec(),
            params: vec![T::ZERO; param_count(widths)],
        })
    }

    /// He-style uniform init, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// zero biases.
    pub fn he_uniform(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        let mut off = 0;
        for w in widths.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            for p in &mut m.params[off..off + w[0] * w[1]] {
                *p = T::from_f64(rng.random_range(-bound..bound));
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(m)
    }

    pub fn from_params(widths: &[usize], params: Vec<T>) -> Result<Self> {
        check_widths(widths)?;
        if params.len() != param_count(widths) {
            return Err(Error::DimensionMismatch {
                expected: format!("{} parameters", param_count(widths)),
                got: params.len().to_string(),
            });
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.widths[..=layer])
    }

    /// Weights (`out × in`, row-major) and biases of `layer`.
    pub fn layer(&self, layer: usize) -> (&[T], &[T]) {
        let (i, o) = (self.widths[layer], self.widths[layer + 1]);
        let off = self.offset(layer);
        let (w, rest) = self.params[off..].split_at(i * o);
        (w, &rest[..o])
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [T], &mut [T]) {
        let (i, o) = (self.widths[layer], self.widths[layer + 1]);
        let off = self.offset(layer);
        let (w, rest) = self.params[off..].split_at_mut(i * o);
        (w, &mut rest[..o])
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            widths: self.widths.clone(),
            params: self
                .params
                .iter()
                .map(|p| U::from_f64(p.to_f64()))
                .collect(),
        }
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<()> {
        if x.len() != batch * self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: format!("{batch} x {} inputs", self.input_width()),
                got: x.len().to_string(),
            });
        }
        Ok(())
    }

    /// Row-major `batch × input_width` in, `batch × output_width` out.
    pub fn forward(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        let trace = self.forward_trace(x, batch)?;
        Ok(transpose(trace.output(), self.output_width(), batch))
    }

    /// Forward pass keeping what [`Mlp::backward`] needs. `x` is row-major
    /// (`batch × input_width`).
    pub fn forward_trace(&self, x: &[T], batch: usize) -> Result<Trace<T>> {
        self.check_input(x, batch)?;
        let n = self.n_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(n);
        inputs.push(x.to_vec());
        let x_fm = transpose(x, batch, self.input_width());
        for l in 0..n {
            let input = if l == 0 { &x_fm } else { &outputs[l - 1] };
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            let (w, b) = self.layer(l);
            let mut out: Vec<T> = Vec::with_capacity(o * batch);
            for &bj in b {
                out.extend(std::iter::repeat_n(bj, batch));
            }
            T::gemm(
                o,
                i,
                batch,
                w,
                (i, 1),
                input,
                (batch, 1),
                T::ONE,
                &mut out,
                (batch, 1),
            );
            if l + 1 < n {
                out.iter_mut().for_each(|v| *v = v.relu());
                inputs.push(transpose(&out, o, batch));
            }
            outputs.push(out);
        }
        Ok(Trace {
            inputs,
            outputs,
            batch,
        })
    }

    /// Backpropagates `d_out`, the loss gradient w.r.t. the output in
    /// feature-major layout (`output_width × batch`). Parameter gradients are
    /// added into `grad`; the returned gradient w.r.t. the input is
    /// feature-major as well.
    pub fn backward(&self, trace: &Trace<T>, d_out: Vec<T>, grad: &mut [T]) -> Vec<T> {
        assert_eq!(grad.len(), self.params.len());
        let batch = trace.batch;
        let mut d = d_out;
        for l in (0..self.n_layers()).rev() {
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            if l + 1 < self.n_layers() {
                for (g, &a) in d.iter_mut().zip(&trace.outputs[l]) {
                    *g = g.gated(a);
                }
            }
            let off = self.offset(l);
            let (gw, gb) = grad[off..off + i * o + o].split_at_mut(i * o);
            // dW += d · input, contracted over the batch; both operands
            // batch-major so the product packs efficiently.
            let d_bm = transpose(&d, o, batch);
            T::gemm(
                o,
                batch,
                i,
                &d_bm,
                (1, o),
                &trace.inputs[l],
                (i, 1),
                T::ONE,
                gw,
                (i, 1),
            );
            for (g, row) in gb.iter_mut().zip(d.chunks_exact(batch)) {
                for &v in row {
                    *g += v;
                }
            }
            let (w, _) = self.layer(l);
            let mut d_in = vec![T::ZERO; i * batch];
            T::gemm(
                i,
                o,
                batch,
                w,
                (1, i),
                &d,
                (batch, 1),
                T::ZERO,
                &mut d_in,
                (batch, 1),
            );
            d = d_in;
        }
        d
    }
}

/// Weighted binary cross-entropy on a logit:
/// `pw·y·softplus(-z) + (1 - y)·softplus(z)`.
pub fn bce_with_logits<T: Real>(z: T, y: T, pos_weight: T) -> T {
    pos_weight * y * (-z).softplus() + (T::ONE - y) * z.softplus()
}

/// Derivative of [`bce_with_logits`] with respect to `z`.
pub fn bce_grad<T: Real>(z: T, y: T, pos_weight: T) -> T {
    let s = z.sigmoid();
    pos_weight * y * (s - T::ONE) + (T::ONE - y) * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_half() {
        let m = Mlp::<f32>::zeros(&[16, 32, 32, 1]).unwrap();
        let x: Vec<f32> = (0..5 * 16).map(|i| i as f32 * 0.1 - 3.0).collect();
        let z = m.forward(&x, 5).unwrap();
        assert_eq!(z, vec![0.0; 5]);
        assert!(z.iter().all(|v| v.sigmoid() == 0.5));
    }

    #[test]
    fn hand_built_network() {
        // 2 -> 2 -> 1: hidden = relu([x0 - x1, x1 - x0] + [0, 0.5]), out = h0 + 2 h1 - 1
        let m = Mlp::<f64>::from_params(
            &[2, 2, 1],
            vec![1.0, -1.0, -1.0, 1.0, 0.0, 0.5, 1.0, 2.0, -1.0],
        )
        .unwrap();
        let x = [3.0, 1.0, 1.0, 3.0];
        let z = m.forward(&x, 2).unwrap();
        // row 0: h = relu(2, -1.5) = (2, 0) -> 1
        // row 1: h = relu(-2, 2.5) = (0, 2.5) -> 4
        assert_eq!(z, vec![1.0, 4.0]);
    }

    #[test]
    fn f32_and_f64_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m64 = Mlp::<f64>::he_uniform(&[16, 32, 32, 1], &mut rng).unwrap();
        let m32: Mlp<f32> = m64.cast();
        let x64: Vec<f64> = (0..64 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x32: Vec<f32> = x64.iter().map(|&v| v as f32).collect();
        let a = m64.forward(&x64, 64).unwrap();
        let b = m32.forward(&x32, 64).unwrap();
        for (p, q) in a.iter().zip(&b) {
            let rel = (p - *q as f64).abs() / p.abs().max(1.0);
            assert!(rel < 1e-4, "{p} vs {q}");
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let m = Mlp::<f32>::zeros(&[3, 4, 1]).unwrap();
        assert!(matches!(
            m.forward(&[0.0; 7], 2),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Mlp::<f32>::zeros(&[3]).is_err());
        assert!(Mlp::<f32>::zeros(&[3, 0, 1]).is_err());
    }

    #[test]
    fn single_weight_gradient_is_sigmoid_minus_label() {
        let (w, b, x) = (0.7f64, -0.2f64, 1.5f64);
        let m = Mlp::<f64>::from_params(&[1, 1], vec![w, b]).unwrap();
        for y in [0.0, 1.0] {
            let trace = m.forward_trace(&[x], 1).unwrap();
            let z = trace.output()[0];
            let mut grad = vec![0.0; 2];
            m.backward(&trace, vec![bce_grad(z, y, 1.0)], &mut grad);
            let s = (w * x + b).sigmoid();
            assert!((grad[0] - (s - y) * x).abs() < 1e-15);
            assert!((grad[1] - (s - y)).abs() < 1e-15);
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a: Vec<u32> = (0..37 * 19).collect();
        let t = transpose(&a, 37, 19);
        assert_eq!(t[5 * 37 + 3], a[3 * 19 + 5]);
        assert_eq!(transpose(&t, 19, 37), a);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(1000f64.softplus(), 1000.0);
        assert!((-1000f64).softplus() >= 0.0);
        assert!(((0f64).softplus() - 2f64.ln()).abs() < 1e-15);
        assert!((bce_with_logits(0.0f64, 1.0, 2.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
    }
}
