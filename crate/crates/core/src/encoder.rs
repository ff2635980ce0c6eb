//! Bias-free deep ReLU encoder with exact backpropagation.
//!
//! ```text
//! g_0 = A x,      h_0 = relu(g_0)
//! g_l = W_l h_{l-1}, h_l = relu(g_l)   for l = 1..L
//! y   = B h_L
//! ```
//!
//! Batches are stored row-wise: a batch of `b` inputs is a `b x d_x` matrix and
//! every tape entry is `b x m`. The ReLU derivative at 0 is taken to be 0.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"CBE1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    output: Array2<f64>,
}

/// Pre- and post-activations of a forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub input: Array2<f64>,
    /// `g_0..g_L`, each `batch x m`.
    pub pre: Vec<Array2<f64>>,
    /// `h_0..h_L`, each `batch x m`.
    pub post: Vec<Array2<f64>>,
    /// `y`, `batch x d`.
    pub output: Array2<f64>,
}

/// Gradients with the same shapes as the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients {
    pub input: Array2<f64>,
    pub hidden: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, variance: f64, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl Encoder {
    /// He-style initialization: `A`, `W_l` entries have variance `2/m`,
    /// `B` entries variance `1/d`.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        width: usize,
        depth: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || width == 0 || depth == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder dimensions must be >= 1 (d_x={input_dim}, m={width}, L={depth}, d={output_dim})"
            )));
        }
        let var_hidden = 2.0 / width as f64;
        let input = gaussian_matrix(width, input_dim, var_hidden, rng);
        let hidden = (0..depth)
            .map(|_| gaussian_matrix(width, width, var_hidden, rng))
            .collect();
        let output = gaussian_matrix(output_dim, width, 1.0 / output_dim as f64, rng);
        Ok(Self {
            input,
            hidden,
            output,
        })
    }

    pub fn from_parts(input: Array2<f64>, hidden: Vec<Array2<f64>>, output: Array2<f64>) -> Result<Self> {
        let m = input.nrows();
        if m == 0 || input.ncols() == 0 || output.nrows() == 0 || hidden.is_empty() {
            return Err(Error::Dimension("empty encoder parameter".into()));
        }
        for (l, w) in hidden.iter().enumerate() {
            if w.dim() != (m, m) {
                return Err(Error::Dimension(format!(
                    "hidden layer {} is {:?}, expected ({m}, {m})",
                    l + 1,
                    w.dim()
                )));
            }
        }
        if output.ncols() != m {
            return Err(Error::Dimension(format!(
                "output layer has {} columns, expected {m}",
                output.ncols()
            )));
        }
        let finite = input.iter().chain(hidden.iter().flatten()).chain(output.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite encoder parameter".into()));
        }
        Ok(Self {
            input,
            hidden,
            output,
        })
    }

    /// All three kinds of layer set to the identity (`d_x = m = d = dim`).
    pub fn identity(dim: usize, depth: usize) -> Result<Self> {
        let eye = Array2::eye(dim);
        Self::from_parts(eye.clone(), vec![eye.clone(); depth], eye)
    }

    pub fn input_dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn width(&self) -> usize {
        self.input.nrows()
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output.nrows()
    }

    pub fn input_weights(&self) -> &Array2<f64> {
        &self.input
    }

    pub fn hidden_weights(&self) -> &[Array2<f64>] {
        &self.hidden
    }

    pub fn output_weights(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn output_weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.output
    }

    /// Parameter matrices in the order `A, W_1..W_L, B`.
    pub fn parameters(&self) -> Vec<&Array2<f64>> {
        std::iter::once(&self.input)
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.output))
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        std::iter::once(&mut self.input)
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.output))
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> ForwardTape {
        assert_eq!(inputs.ncols(), self.input_dim(), "input width");
        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth + 1);
        let mut post = Vec::with_capacity(depth + 1);
        let g0 = inputs.dot(&self.input.t());
        post.push(g0.mapv(relu));
        pre.push(g0);
        for w in &self.hidden {
            let g = post.last().expect("h_{l-1}").dot(&w.t());
            post.push(g.mapv(relu));
            pre.push(g);
        }
        let output = post[depth].dot(&self.output.t());
        ForwardTape {
            input: inputs.to_owned(),
            pre,
            post,
            output,
        }
    }

    pub fn forward(&self, x: &[f64]) -> ForwardTape {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward_batch(view)
    }

    /// Gradient of `sum_b <y_grad[b], y[b]>` with respect to every parameter.
    pub fn backward(&self, tape: &ForwardTape, y_grad: ArrayView2<'_, f64>) -> ParameterGradients {
        assert_eq!(y_grad.dim(), tape.output.dim(), "y_grad shape");
        let depth = self.depth();
        let output = y_grad.t().dot(&tape.post[depth]);
        let mut dh = y_grad.dot(&self.output);
        let mut hidden = vec![Array2::zeros((0, 0)); depth];
        for l in (1..=depth).rev() {
            mask_inactive(&mut dh, &tape.pre[l]);
            hidden[l - 1] = dh.t().dot(&tape.post[l - 1]);
            dh = dh.dot(&self.hidden[l - 1]);
        }
        mask_inactive(&mut dh, &tape.pre[0]);
        let input = dh.t().dot(&tape.input);
        ParameterGradients {
            input,
            hidden,
            output,
        }
    }

    /// Plain gradient descent: every parameter moves by `-learning_rate * grad`.
    pub fn sgd_step(&mut self, grads: &ParameterGradients, learning_rate: f64) {
        self.input.scaled_add(-learning_rate, &grads.input);
        for (w, g) in self.hidden.iter_mut().zip(&grads.hidden) {
            w.scaled_add(-learning_rate, g);
        }
        self.output.scaled_add(-learning_rate, &grads.output);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.n_parameters());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            CHECKPOINT_VERSION,
            self.input_dim() as u32,
            self.width() as u32,
            self.depth() as u32,
            self.output_dim() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in self.parameters() {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::Format(format!("checkpoint header truncated ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {:?}", &bytes[..4])));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let version = word(0);
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let (d_x, m, depth, d) = (word(1), word(2), word(3), word(4));
        let count = m
            .checked_mul(d_x)
            .and_then(|a| m.checked_mul(m).and_then(|b| b.checked_mul(depth)).and_then(|b| a.checked_add(b)))
            .and_then(|a| d.checked_mul(m).and_then(|b| a.checked_add(b)))
            .ok_or_else(|| Error::Format("checkpoint dimensions overflow".into()))?;
        let expected = 24 + 8 * count;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint payload is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut values = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |rows: usize, cols: usize| {
            let v: Vec<f64> = values.by_ref().take(rows * cols).collect();
            Array2::from_shape_vec((rows, cols), v).expect("sized")
        };
        let input = take(m, d_x);
        let hidden = (0..depth).map(|_| take(m, m)).collect();
        let output = take(d, m);
        Self::from_parts(input, hidden, output)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn mask_inactive(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

impl Embedding for Encoder {
    fn input_dim(&self) -> usize {
        Encoder::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        Encoder::output_dim(self)
    }

    fn embed_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = inputs.dot(&self.input.t()).mapv_into(relu);
        for w in &self.hidden {
            h = h.dot(&w.t()).mapv_into(relu);
        }
        h.dot(&self.output.t())
    }
}

impl ParameterGradients {
    pub fn zeros_like(enc: &Encoder) -> Self {
        Self {
            input: Array2::zeros(enc.input.dim()),
            hidden: enc.hidden.iter().map(|w| Array2::zeros(w.dim())).collect(),
            output: Array2::zeros(enc.output.dim()),
        }
    }

    pub fn matrices(&self) -> Vec<&Array2<f64>> {
        std::iter::once(&self.input)
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.output))
            .collect()
    }

    pub fn add_assign(&mut self, other: &ParameterGradients) {
        self.input += &other.input;
        for (a, b) in self.hidden.iter_mut().zip(&other.hidden) {
            *a += b;
        }
        self.output += &other.output;
    }

    pub fn scale(&mut self, factor: f64) {
        self.input *= factor;
        for w in &mut self.hidden {
            *w *= factor;
        }
        self.output *= factor;
    }

    pub fn norm(&self) -> f64 {
        self.matrices()
            .iter()
            .flat_map(|m| m.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn naive_forward(enc: &Encoder, x: &[f64]) -> Vec<f64> {
        let matvec = |m: &Array2<f64>, v: &[f64]| -> Vec<f64> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[[i, j]] * v[j]).sum())
                .collect()
        };
        let relu_v = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let mut h = relu_v(matvec(&enc.input, x));
        for w in &enc.hidden {
            h = relu_v(matvec(w, &h));
        }
        matvec(&enc.output, &h)
    }

    #[test]
    fn rejects_zero_dimensions() {
        let mut r = rng::stream(0);
        assert!(Encoder::init(0, 4, 1, 2, &mut r).is_err());
        assert!(Encoder::init(3, 4, 0, 2, &mut r).is_err());
    }

    #[test]
    fn init_variance_and_determinism() {
        let enc = Encoder::init(4, 1000, 2, 3, &mut rng::stream(1)).unwrap();
        let w = &enc.hidden[0];
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 1000.0;
        assert!((var - target).abs() <= 0.1 * target, "{var}");
        assert_eq!(enc, Encoder::init(4, 1000, 2, 3, &mut rng::stream(1)).unwrap());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let enc = Encoder::init(5, 16, 2, 3, &mut rng::stream(2)).unwrap();
        let tape = enc.forward(&[0.0; 5]);
        assert!(tape.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_network_on_nonnegative_input() {
        let enc = Encoder::identity(4, 1).unwrap();
        let x = [0.1, 0.0, 2.5, 3.0];
        assert_eq!(enc.forward(&x).output.row(0).to_vec(), x.to_vec());
    }

    #[test]
    fn forward_matches_naive_chain() {
        let mut r = rng::stream(3);
        let enc = Encoder::init(7, 24, 3, 5, &mut r).unwrap();
        for _ in 0..10 {
            let x = crate::latent_model::random_unit_vector(7, &mut r);
            let y = enc.forward(&x).output.row(0).to_vec();
            let y_ref = naive_forward(&enc, &x);
            let scale = y_ref.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (a, b) in y.iter().zip(&y_ref) {
                assert!((a - b).abs() <= 1e-12 * scale.max(1e-300));
            }
        }
    }

    #[test]
    fn tape_invariants_are_exact() {
        let mut r = rng::stream(4);
        let enc = Encoder::init(6, 12, 2, 3, &mut r).unwrap();
        let x = Array2::from_shape_simple_fn((5, 6), || r.random::<f64>() - 0.5);
        let tape = enc.forward_batch(x.view());
        for (g, h) in tape.pre.iter().zip(&tape.post) {
            assert_eq!(&g.mapv(relu), h);
        }
        assert_eq!(tape.output, tape.post[2].dot(&enc.output.t()));
        assert_eq!(enc.embed_batch(x.view()), tape.output);
    }

    #[test]
    fn positive_homogeneity() {
        let mut r = rng::stream(5);
        let enc = Encoder::init(6, 12, 2, 3, &mut r).unwrap();
        let x = crate::latent_model::random_unit_vector(6, &mut r);
        let y1 = enc.forward(&x).output;
        let x2: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        let y2 = enc.forward(&x2).output;
        for (a, b) in y1.iter().zip(y2.iter()) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_zero_and_linear_in_y_grad() {
        let mut r = rng::stream(6);
        let enc = Encoder::init(4, 8, 2, 3, &mut r).unwrap();
        let x = Array2::from_shape_simple_fn((3, 4), || r.random::<f64>() - 0.5);
        let tape = enc.forward_batch(x.view());
        let zero = enc.backward(&tape, Array2::zeros((3, 3)).view());
        assert!(zero.matrices().iter().all(|m| m.iter().all(|&v| v == 0.0)));
        let yg = Array2::from_shape_simple_fn((3, 3), || r.random::<f64>() - 0.5);
        let g1 = enc.backward(&tape, yg.view());
        let g3 = enc.backward(&tape, (&yg * 3.0).view());
        for (a, b) in g1.matrices().iter().zip(g3.matrices()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((3.0 * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn sgd_step_zero_rate_and_reversal() {
        let mut r = rng::stream(7);
        let enc = Encoder::init(4, 8, 2, 3, &mut r).unwrap();
        let x = Array2::from_shape_simple_fn((2, 4), || r.random::<f64>());
        let tape = enc.forward_batch(x.view());
        let g = enc.backward(&tape, Array2::ones((2, 3)).view());
        let mut same = enc.clone();
        same.sgd_step(&g, 0.0);
        assert_eq!(same, enc);
        let mut there_and_back = enc.clone();
        there_and_back.sgd_step(&g, 0.01);
        let mut neg = g.clone();
        neg.scale(-1.0);
        there_and_back.sgd_step(&neg, 0.01);
        for (a, b) in there_and_back.parameters().iter().zip(enc.parameters()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn sgd_step_matches_quadratic_update() {
        // loss(b) = 0.5 * (b - 3)^2 on a 1x1x1x1 network with unit input.
        let mut enc = Encoder::from_parts(
            Array2::from_elem((1, 1), 1.0),
            vec![Array2::from_elem((1, 1), 1.0)],
            Array2::from_elem((1, 1), 0.5),
        )
        .unwrap();
        let tape = enc.forward(&[1.0]);
        let y = tape.output[[0, 0]];
        let grads = enc.backward(&tape, Array2::from_elem((1, 1), y - 3.0).view());
        enc.sgd_step(&grads, 0.1);
        let expected = 0.5 - 0.1 * (0.5 - 3.0);
        assert!((enc.output[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let enc = Encoder::init(3, 5, 2, 2, &mut rng::stream(8)).unwrap();
        let bytes = enc.to_bytes();
        assert_eq!(&bytes[..4], b"CBE1");
        assert_eq!(Encoder::from_bytes(&bytes).unwrap(), enc);
        assert!(Encoder::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Encoder::from_bytes(&bad).is_err());
    }

    #[test]
    fn gradient_norm_of_unit_matrix() {
        let enc = Encoder::identity(2, 1).unwrap();
        let mut g = ParameterGradients::zeros_like(&enc);
        g.output = Array2::from_elem((2, 2), 1.0);
        assert_eq!(g.norm(), 2.0);
    }
}
