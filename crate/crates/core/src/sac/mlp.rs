use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network with tanh hidden layers and a linear output.
///
/// Parameters live in one flat vector; layer `l` stores its weight matrix
/// (`in x out`, row-major) followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer activations kept for the backward pass; `acts[0]` is the input.
#[derive(Clone, Debug)]
pub struct MlpCache {
    acts: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("non-empty cache")
    }
}

impl Mlp {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization of weights
    /// and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(
            sizes.len() >= 2 && sizes.iter().all(|&n| n > 0),
            "invalid layer sizes {sizes:?}"
        );
        let mut params = Vec::with_capacity(Self::param_count_for(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count_for(sizes)],
        }
    }

    fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        (off, off + n_in * n_out, off + n_in * n_out + n_out)
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (w0, b0, end) = self.offsets(l);
        let w = ArrayView2::from_shape((self.sizes[l], self.sizes[l + 1]), &self.params[w0..b0]).expect("layer shape");
        (w, ArrayView1::from(&self.params[b0..end]))
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: &Array2<f64>) -> MlpCache {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension mismatch");
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.clone());
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut z = acts[l].dot(&w);
            z += &b;
            if l + 1 < self.num_layers() {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        MlpCache { acts }
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        self.forward(&x).output().row(0).to_vec()
    }

    /// Backpropagates `grad_out` (dL/d output, same shape as the output)
    /// through the cached pass. Adds parameter gradients into `grads` (a
    /// flat vector laid out like the parameters) and returns dL/d input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        assert_eq!(grads.len(), self.params.len());
        let mut delta = grad_out.clone();
        for l in (0..self.num_layers()).rev() {
            let (w, _) = self.layer(l);
            let (w0, b0, end) = self.offsets(l);
            let a_in = &cache.acts[l];
            {
                let mut gw = ArrayViewMut2::from_shape((self.sizes[l], self.sizes[l + 1]), &mut grads[w0..b0])
                    .expect("grad layer shape");
                gw += &a_in.t().dot(&delta);
            }
            {
                let mut gb = ArrayViewMut1::from(&mut grads[b0..end]);
                gb += &delta.sum_axis(Axis(0));
            }
            let mut prev = delta.dot(&w.t());
            if l > 0 {
                prev.zip_mut_with(a_in, |d, a| *d *= 1.0 - a * a);
            }
            delta = prev;
        }
        delta
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.sizes, source.sizes, "architecture mismatch");
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Weight matrix of layer `l` as an owned array, for inspection.
    pub fn weight(&self, l: usize) -> Array2<f64> {
        self.layer(l).0.to_owned()
    }

    pub fn bias(&self, l: usize) -> Array1<f64> {
        self.layer(l).1.to_owned()
    }

    /// Sets the bias of the output layer.
    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let l = self.num_layers() - 1;
        let (_, b0, end) = self.offsets(l);
        assert_eq!(bias.len(), end - b0);
        self.params[b0..end].copy_from_slice(bias);
    }
}
