//! Parametric maps from input space to the embedding space.
//!
//! The high-order map computes, for an input `x` augmented with a constant
//! `1` (so `x' = [x; 1]`):
//!
//! ```text
//! t_f = C_f · x'                      (F factor projections)
//! a_k = sigmoid(Σ_f W_fk t_f^O + b_k)  (m hidden units)
//! y   = V a                            (h outputs)
//! ```
//!
//! Because `x'` carries the constant, the expansion of `t_f^O` contains every
//! monomial of the inputs up to degree `O`. The linear map is `y = A x`.
//!
//! All batch operations take points as rows.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::data::NormStats;
use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `t^order` by repeated multiplication, exact in sign for odd orders.
#[inline]
pub(crate) fn int_pow(t: f64, order: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..order {
        acc *= t;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighOrderParams {
    /// `(H+1) × F`; the last row multiplies the constant input component.
    pub factors: Array2<f64>,
    /// `F × m`
    pub projection: Array2<f64>,
    /// length `m`
    pub bias: Array1<f64>,
    /// `h × m`
    pub output: Array2<f64>,
    pub order: u32,
}

impl HighOrderParams {
    pub fn input_dim(&self) -> usize {
        self.factors.nrows() - 1
    }

    pub fn factor_count(&self) -> usize {
        self.factors.ncols()
    }

    pub fn hidden_units(&self) -> usize {
        self.projection.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.output.nrows()
    }

    fn validate(&self) -> Result<()> {
        let (h1, f) = self.factors.dim();
        let m = self.projection.ncols();
        if h1 < 2 || f == 0 || m == 0 || self.output.nrows() == 0 {
            return Err(Error::Dimension("empty high-order parameter block".into()));
        }
        if self.projection.nrows() != f || self.bias.len() != m || self.output.ncols() != m {
            return Err(Error::Dimension(format!(
                "inconsistent high-order shapes: C {:?}, W {:?}, b {}, V {:?}",
                self.factors.dim(),
                self.projection.dim(),
                self.bias.len(),
                self.output.dim()
            )));
        }
        if self.order == 0 {
            return Err(Error::InvalidArgument("interaction order must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `h × H`
    pub transform: Array2<f64>,
}

/// The learnable map, either high-order or linear.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    HighOrder(HighOrderParams),
    Linear(LinearParams),
}

/// Intermediate values of a high-order forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    /// factor projections `t`, `n × F`
    projections: Option<Array2<f64>>,
    /// `t^O`, `n × F`
    powers: Option<Array2<f64>>,
    /// sigmoid activations, `n × m`
    hidden: Option<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

/// Gradient of a scalar loss w.r.t. the parameters (flat, in
/// [`Embedding::params_flat`] order) and optionally w.r.t. the inputs.
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Vec<f64>,
    pub inputs: Option<Array2<f64>>,
}

impl Embedding {
    pub fn high_order(params: HighOrderParams) -> Result<Self> {
        params.validate()?;
        Ok(Embedding::HighOrder(params))
    }

    pub fn linear(transform: Array2<f64>) -> Result<Self> {
        if transform.is_empty() {
            return Err(Error::Dimension("empty linear transform".into()));
        }
        Ok(Embedding::Linear(LinearParams { transform }))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Embedding::HighOrder(p) => p.input_dim(),
            Embedding::Linear(p) => p.transform.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Embedding::HighOrder(p) => p.output_dim(),
            Embedding::Linear(p) => p.transform.nrows(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Embedding::HighOrder(p) => {
                p.factors.len() + p.projection.len() + p.bias.len() + p.output.len()
            }
            Embedding::Linear(p) => p.transform.len(),
        }
    }

    /// Parameters as one vector: `C, W, b, V` (row-major each) or `A`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match self {
            Embedding::HighOrder(p) => {
                out.extend(p.factors.iter());
                out.extend(p.projection.iter());
                out.extend(p.bias.iter());
                out.extend(p.output.iter());
            }
            Embedding::Linear(p) => out.extend(p.transform.iter()),
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut rest = flat;
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for d in dst {
                *d = rest[0];
                rest = &rest[1..];
            }
        };
        match self {
            Embedding::HighOrder(p) => {
                fill(&mut p.factors.iter_mut());
                fill(&mut p.projection.iter_mut());
                fill(&mut p.bias.iter_mut());
                fill(&mut p.output.iter_mut());
            }
            Embedding::Linear(p) => fill(&mut p.transform.iter_mut()),
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Dimension(format!(
                "model expects {} input features, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Embeds every row of `x`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(match self {
            Embedding::HighOrder(p) => {
                let t = projections(p, x);
                let powers = t.mapv(|v| int_pow(v, p.order));
                let hidden = hidden_units(p, &powers);
                hidden.dot(&p.output.t())
            }
            Embedding::Linear(p) => x.dot(&p.transform.t()),
        })
    }

    /// Forward pass that keeps what [`Embedding::backward`] needs.
    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        Ok(match self {
            Embedding::HighOrder(p) => {
                let t = projections(p, x);
                let powers = t.mapv(|v| int_pow(v, p.order));
                let hidden = hidden_units(p, &powers);
                let output = hidden.dot(&p.output.t());
                ForwardCache {
                    input: x.to_owned(),
                    projections: Some(t),
                    powers: Some(powers),
                    hidden: Some(hidden),
                    output,
                }
            }
            Embedding::Linear(p) => ForwardCache {
                input: x.to_owned(),
                projections: None,
                powers: None,
                hidden: None,
                output: x.dot(&p.transform.t()),
            },
        })
    }

    /// Back-propagates `upstream = ∂loss/∂y` (one row per cached point).
    /// The parameter gradient is summed over the batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
        want_inputs: bool,
    ) -> Result<Backward> {
        if upstream.dim() != cache.output.dim() {
            return Err(Error::Dimension(format!(
                "upstream gradient has shape {:?}, output has {:?}",
                upstream.dim(),
                cache.output.dim()
            )));
        }
        let x = cache.input.view();
        match self {
            Embedding::Linear(p) => {
                let grad_a = upstream.t().dot(&x);
                Ok(Backward {
                    params: grad_a.into_iter().collect(),
                    inputs: want_inputs.then(|| upstream.dot(&p.transform)),
                })
            }
            Embedding::HighOrder(p) => {
                let (t, powers, hidden) = match (&cache.projections, &cache.powers, &cache.hidden) {
                    (Some(t), Some(pw), Some(a)) => (t, pw, a),
                    _ => {
                        return Err(Error::InvalidArgument(
                            "forward cache was produced by a different model variant".into(),
                        ))
                    }
                };
                let h = p.input_dim();
                let order = p.order;

                let grad_v = upstream.t().dot(hidden);
                let mut dz = upstream.dot(&p.output);
                dz.zip_mut_with(hidden, |d, &a| *d *= a * (1.0 - a));
                let grad_b = dz.sum_axis(Axis(0));
                let grad_w = powers.t().dot(&dz);
                let mut dt = dz.dot(&p.projection.t());
                let o = f64::from(order);
                dt.zip_mut_with(t, |d, &tv| *d *= o * int_pow(tv, order - 1));

                let mut grad_c = Array2::zeros(p.factors.dim());
                grad_c.slice_mut(s![..h, ..]).assign(&x.t().dot(&dt));
                grad_c.row_mut(h).assign(&dt.sum_axis(Axis(0)));

                let inputs = want_inputs.then(|| dt.dot(&p.factors.slice(s![..h, ..]).t()));

                let mut params = Vec::with_capacity(self.param_count());
                params.extend(grad_c.iter());
                params.extend(grad_w.iter());
                params.extend(grad_b.iter());
                params.extend(grad_v.iter());
                Ok(Backward { params, inputs })
            }
        }
    }

    /// Gradient over all parameters of `Σ_i ⟨upstream_i, f(x_i)⟩`.
    pub fn backward_params(&self, x: ArrayView2<'_, f64>, upstream: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let cache = self.forward_cached(x)?;
        Ok(self.backward(&cache, upstream, false)?.params)
    }

    /// Jacobian-transpose product `Jᵀ upstream` at a single input `x`.
    pub fn backward_input(&self, x: ArrayView1<'_, f64>, upstream: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Dimension(format!(
                "upstream gradient has length {}, model outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let xs = x.insert_axis(Axis(0));
        let cache = self.forward_cached(xs)?;
        let up = upstream.insert_axis(Axis(0));
        let grad = self
            .backward(&cache, up, true)?
            .inputs
            .expect("input gradient requested");
        Ok(grad.row(0).to_owned())
    }
}

fn projections(p: &HighOrderParams, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let h = p.input_dim();
    let mut t = x.dot(&p.factors.slice(s![..h, ..]));
    t += &p.factors.row(h);
    t
}

fn hidden_units(p: &HighOrderParams, powers: &Array2<f64>) -> Array2<f64> {
    let mut z = powers.dot(&p.projection);
    z += &p.bias;
    z.mapv_inplace(sigmoid);
    z
}

/// Structural sizes of a high-order map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HighOrderDims {
    pub input: usize,
    pub output: usize,
    pub factors: usize,
    pub hidden: usize,
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-r, r).expect("finite bounds");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// `sqrt(6 / (fan_in + fan_out))`, the half-width used by [`init_high_order`].
pub fn init_range(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform fan-scaled initialization with zero biases.
pub fn init_high_order(dims: HighOrderDims, order: u32, seed: u64) -> Result<Embedding> {
    if dims.input == 0 || dims.output == 0 || dims.factors == 0 || dims.hidden == 0 {
        return Err(Error::InvalidArgument(format!("all dimensions must be positive: {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = uniform_matrix(dims.input + 1, dims.factors, &mut rng);
    let projection = uniform_matrix(dims.factors, dims.hidden, &mut rng);
    let output = uniform_matrix(dims.output, dims.hidden, &mut rng);
    Embedding::high_order(HighOrderParams {
        factors,
        projection,
        bias: Array1::zeros(dims.hidden),
        output,
        order,
    })
}

pub fn init_linear(input: usize, output: usize, seed: u64) -> Result<Embedding> {
    if input == 0 || output == 0 {
        return Err(Error::InvalidArgument("linear map dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Embedding::linear(uniform_matrix(output, input, &mut rng))
}

/// An embedding together with the normalization applied to raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub embedding: Embedding,
    pub norm: NormStats,
}

impl EmbeddingModel {
    pub fn new(embedding: Embedding, norm: NormStats) -> Result<Self> {
        if norm.dim() != embedding.input_dim() {
            return Err(Error::Dimension(format!(
                "normalization covers {} features, embedding expects {}",
                norm.dim(),
                embedding.input_dim()
            )));
        }
        Ok(Self { embedding, norm })
    }

    /// Normalizes raw features and embeds them.
    pub fn embed_raw(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let normalized = self.norm.apply(x)?;
        self.embedding.forward(normalized.view())
    }

    /// Embeds features that are already in normalized space (e.g. exemplars).
    pub fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.embedding.forward(x)
    }
}
