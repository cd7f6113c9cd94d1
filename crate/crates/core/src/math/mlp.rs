use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{LayerShape, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::{logistic, Scalar};

/// Output nonlinearity of the last layer. Hidden layers always use `tanh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    /// `1 / (1 + exp(-z))`, output strictly inside `(0, 1)`.
    Logistic,
}

/// Architecture of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
}

impl NetSpec {
    pub fn new(
        input_dim: usize,
        hidden_sizes: Vec<usize>,
        output_dim: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_sizes,
            output_dim,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config("network input and output dims must be positive"));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::config("network needs at least one hidden layer"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_sizes);
        dims.push(self.output_dim);
        dims.windows(2)
            .map(|w| LayerShape {
                rows: w[1],
                cols: w[0],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerShape::param_count).sum()
    }

    /// One-line header used in checkpoint files.
    pub fn to_header(&self) -> String {
        let hidden: Vec<String> = self.hidden_sizes.iter().map(ToString::to_string).collect();
        let out = match self.output_activation {
            OutputActivation::Identity => "identity",
            OutputActivation::Logistic => "logistic",
        };
        format!(
            "netspec input={} hidden={} output={} hidden_act=tanh output_act={}",
            self.input_dim,
            hidden.join(","),
            self.output_dim,
            out
        )
    }

    pub fn from_header(line: &str) -> Result<Self> {
        let mut it = line.split_whitespace();
        if it.next() != Some("netspec") {
            return Err(Error::parse(format!("expected netspec header, got `{line}`")));
        }
        let (mut input, mut hidden, mut output, mut act) = (None, None, None, None);
        for kv in it {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("bad netspec field `{kv}`")))?;
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(format!("bad netspec number `{s}`")))
            };
            match k {
                "input" => input = Some(num(v)?),
                "output" => output = Some(num(v)?),
                "hidden" => {
                    hidden = Some(v.split(',').map(num).collect::<Result<Vec<_>>>()?);
                }
                "hidden_act" if v == "tanh" => {}
                "output_act" => {
                    act = Some(match v {
                        "identity" => OutputActivation::Identity,
                        "logistic" => OutputActivation::Logistic,
                        _ => return Err(Error::parse(format!("unknown output activation `{v}`"))),
                    })
                }
                _ => return Err(Error::parse(format!("unknown netspec field `{kv}`"))),
            }
        }
        let missing = || Error::parse(format!("incomplete netspec header `{line}`"));
        Self::new(
            input.ok_or_else(missing)?,
            hidden.ok_or_else(missing)?,
            output.ok_or_else(missing)?,
            act.ok_or_else(missing)?,
        )
        .map_err(|e| Error::parse(e.to_string()))
    }
}

/// Activations recorded by a forward pass, consumed by the backward pass.
///
/// `acts[0]` is the input, `acts[l + 1]` the post-activation output of layer
/// `l`. Reusable across calls to avoid reallocating.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    acts: Vec<Vec<T>>,
    layout: Vec<LayerShape>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Draws weights uniformly in `±1/sqrt(fan_in)`; biases are zero.
pub fn net_init<T: Scalar>(spec: &NetSpec, seed: u64) -> Result<ParamVector<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(spec.layout());
    let layout = params.layout().to_vec();
    let mut off = 0;
    let values = params.as_mut_slice();
    for shape in layout {
        let bound = 1.0 / (shape.cols as f64).sqrt();
        for w in &mut values[off..off + shape.rows * shape.cols] {
            *w = T::lit(rng.gen_range(-bound..bound));
        }
        off += shape.param_count();
    }
    Ok(params)
}

/// Forward pass returning the output and the activation record.
pub fn net_forward<T: Scalar>(
    params: &ParamVector<T>,
    spec: &NetSpec,
    input: &[T],
) -> Result<(Vec<T>, ForwardCache<T>)> {
    if input.len() != spec.input_dim {
        return Err(Error::Dimension {
            context: "network input",
            expected: spec.input_dim,
            got: input.len(),
        });
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    check_layout(params, spec)?;
    let mut cache = ForwardCache::default();
    forward_into(params, spec, input, &mut cache);
    Ok((cache.output().to_vec(), cache))
}

/// Gradient of `output_grad · output` with respect to the parameters.
pub fn net_backward<T: Scalar>(
    params: &ParamVector<T>,
    spec: &NetSpec,
    cache: &ForwardCache<T>,
    output_grad: &[T],
) -> Result<ParamVector<T>> {
    check_layout(params, spec)?;
    if cache.layout != params.layout() || cache.acts.len() != cache.layout.len() + 1 {
        return Err(Error::contract("forward cache does not match network"));
    }
    if output_grad.len() != spec.output_dim {
        return Err(Error::Dimension {
            context: "output gradient",
            expected: spec.output_dim,
            got: output_grad.len(),
        });
    }
    let mut grad = params.zeros_like();
    let mut cache = cache.clone();
    backward_accumulate(params, spec, &mut cache, output_grad, grad.as_mut_slice());
    Ok(grad)
}

fn check_layout<T: Scalar>(params: &ParamVector<T>, spec: &NetSpec) -> Result<()> {
    if params.layout() != spec.layout().as_slice() {
        return Err(Error::contract("parameter layout does not match network spec"));
    }
    Ok(())
}

/// Unchecked forward pass into a reusable cache.
pub(crate) fn forward_into<T: Scalar>(
    params: &ParamVector<T>,
    spec: &NetSpec,
    input: &[T],
    cache: &mut ForwardCache<T>,
) {
    let layout = params.layout();
    if cache.layout.as_slice() != layout {
        cache.layout = layout.to_vec();
        cache.acts = std::iter::once(spec.input_dim)
            .chain(layout.iter().map(|s| s.rows))
            .map(|n| vec![T::zero(); n])
            .collect();
    }
    cache.acts[0].copy_from_slice(input);
    let values = params.as_slice();
    let n_layers = layout.len();
    let mut off = 0;
    for (l, shape) in layout.iter().enumerate() {
        let (head, tail) = cache.acts.split_at_mut(l + 1);
        let x = &head[l];
        let y = &mut tail[0];
        let w = &values[off..off + shape.rows * shape.cols];
        let b = &values[off + shape.rows * shape.cols..off + shape.param_count()];
        for r in 0..shape.rows {
            let row = &w[r * shape.cols..(r + 1) * shape.cols];
            let mut z = b[r];
            for (wi, xi) in row.iter().zip(x.iter()) {
                z += *wi * *xi;
            }
            y[r] = if l + 1 < n_layers {
                z.tanh()
            } else {
                match spec.output_activation {
                    OutputActivation::Identity => z,
                    OutputActivation::Logistic => logistic(z),
                }
            };
        }
        off += shape.param_count();
    }
}

/// Adds `∂(output_grad · output)/∂params` into `grad`. The cache must hold the
/// matching forward pass.
pub(crate) fn backward_accumulate<T: Scalar>(
    params: &ParamVector<T>,
    spec: &NetSpec,
    cache: &mut ForwardCache<T>,
    output_grad: &[T],
    grad: &mut [T],
) {
    let layout = params.layout();
    let n_layers = layout.len();
    let values = params.as_slice();

    let ForwardCache {
        acts,
        delta,
        delta_prev,
        ..
    } = cache;

    // delta holds dL/dz for the current layer.
    delta.clear();
    let out = &acts[n_layers];
    delta.extend(output_grad.iter().zip(out).map(|(&g, &y)| match spec.output_activation {
        OutputActivation::Identity => g,
        OutputActivation::Logistic => g * y * (T::one() - y),
    }));

    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for s in layout {
        offsets.push(off);
        off += s.param_count();
    }

    for l in (0..n_layers).rev() {
        let shape = layout[l];
        let off = offsets[l];
        let x = &acts[l];
        let w_len = shape.rows * shape.cols;
        {
            let (gw, gb) = grad[off..off + shape.param_count()].split_at_mut(w_len);
            for r in 0..shape.rows {
                let d = delta[r];
                if d == T::zero() {
                    continue;
                }
                gb[r] += d;
                for (g, &xi) in gw[r * shape.cols..(r + 1) * shape.cols].iter_mut().zip(x.iter()) {
                    *g += d * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &values[off..off + w_len];
        delta_prev.clear();
        delta_prev.resize(shape.cols, T::zero());
        for r in 0..shape.rows {
            let d = delta[r];
            if d == T::zero() {
                continue;
            }
            for (dp, &wi) in delta_prev.iter_mut().zip(&w[r * shape.cols..(r + 1) * shape.cols]) {
                *dp += d * wi;
            }
        }
        // x is tanh output of layer l-1
        for (dp, &a) in delta_prev.iter_mut().zip(x.iter()) {
            *dp *= T::one() - a * a;
        }
        std::mem::swap(delta, delta_prev);
    }
}

/// A network specification bundled with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub spec: NetSpec,
    pub params: ParamVector<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let params = net_init(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: NetSpec, params: ParamVector<T>) -> Result<Self> {
        spec.validate()?;
        check_layout(&params, &spec)?;
        Ok(Self { spec, params })
    }

    /// Forward pass into `cache`; returns the output slice. Input length is
    /// only checked in debug builds.
    #[inline]
    pub fn forward<'c>(&self, input: &[T], cache: &'c mut ForwardCache<T>) -> &'c [T] {
        debug_assert_eq!(input.len(), self.spec.input_dim);
        forward_into(&self.params, &self.spec, input, cache);
        cache.output()
    }

    /// Accumulates the parameter gradient of `output_grad · output` into `grad`.
    #[inline]
    pub fn backward(&self, cache: &mut ForwardCache<T>, output_grad: &[T], grad: &mut [T]) {
        debug_assert_eq!(grad.len(), self.params.len());
        backward_accumulate(&self.params, &self.spec, cache, output_grad, grad);
    }

    pub fn to_checkpoint(&self) -> String {
        format!("{}\n{}", self.spec.to_header(), self.params.to_text())
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("empty checkpoint"))?;
        let spec = NetSpec::from_header(header)?;
        let params = ParamVector::parse_lines(&mut lines)?;
        Self::from_parts(spec, params)
    }
}
