//! Anything that maps inputs in `R^{d_x}` to embeddings in `R^d`.

use ndarray::{Array2, ArrayView2, Axis};

pub trait Embedding {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Embeds every row of `inputs`.
    fn embed_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64>;

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.embed_batch(view).index_axis(Axis(0), 0).to_vec()
    }
}

/// `f(x) = value` for every input.
#[derive(Debug, Clone)]
pub struct ConstantEmbedding {
    pub value: Vec<f64>,
    pub input_dim: usize,
}

impl Embedding for ConstantEmbedding {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.value.len()
    }

    fn embed_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((inputs.nrows(), self.value.len()));
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&self.value).for_each(|(o, v)| *o = *v);
        }
        out
    }
}

/// `f(x) = x`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityEmbedding {
    pub dim: usize,
}

impl Embedding for IdentityEmbedding {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        inputs.to_owned()
    }
}

impl<E: Embedding + ?Sized> Embedding for &E {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }

    fn embed_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        (**self).embed_batch(inputs)
    }
}
