use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points evaluated per cache chunk. Chunk boundaries are fixed so gradient
/// reductions happen in the same order whatever the thread count.
pub const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub label_count: usize,
    pub latent_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// The network input is concatenated onto the output of this hidden layer
    /// (1-based). `None` disables the skip connection.
    pub skip_after: Option<usize>,
    pub out_channels: usize,
    pub leaky_slope: f64,
}

impl NetworkConfig {
    pub fn new(label_count: usize, latent_dim: usize, out_channels: usize) -> Self {
        NetworkConfig {
            label_count,
            latent_dim,
            hidden_layers: 8,
            hidden_width: 384,
            skip_after: Some(3),
            out_channels,
            leaky_slope: 0.01,
        }
    }

    /// `2 + labels + latent`.
    pub fn input_dim(&self) -> usize {
        2 + self.cond_dim()
    }

    /// One-hot label followed by the latent code.
    pub fn cond_dim(&self) -> usize {
        self.label_count + self.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.out_channels == 0 {
            return Err(Error::Config("network needs hidden layers, width and outputs".into()));
        }
        if let Some(k) = self.skip_after {
            if k == 0 || k >= self.hidden_layers {
                return Err(Error::Config(format!(
                    "skip_after = {k} must name a hidden layer before the last (1..{})",
                    self.hidden_layers
                )));
            }
        }
        if !(self.leaky_slope.is_finite()) {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let d = self.input_dim();
        let mut out = Vec::with_capacity(self.hidden_layers + 1);
        let mut offset = 0;
        for k in 0..=self.hidden_layers {
            let in_hidden = if k == 0 { 0 } else { self.hidden_width };
            let has_input = k == 0 || self.skip_after == Some(k);
            let in_total = in_hidden + if has_input { d } else { 0 };
            let width = if k == self.hidden_layers {
                self.out_channels
            } else {
                self.hidden_width
            };
            out.push(LayerSpec {
                in_hidden,
                has_input,
                in_total,
                out: width,
                w_offset: offset,
                b_offset: offset + width * in_total,
            });
            offset += width * in_total + width;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map(|l| l.b_offset + l.out).unwrap_or(0)
    }
}

/// Placement of one dense layer inside the flat parameter vector.
///
/// Weights are `out x in_total`, row-major; input columns are ordered
/// `[previous hidden | x, y | one-hot label | latent]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_hidden: usize,
    pub has_input: bool,
    pub in_total: usize,
    pub out: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

/// Network weights and biases in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    version: u64,
}

/// Activations kept by [`Network::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    points: Vec<[f64; 2]>,
    cond: Vec<f64>,
    /// Pre-activations per layer, `N x out`; the last entry is the output.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `N x out_channels`, row-major.
    pub fn outputs(&self) -> &[f64] {
        self.pre.last().unwrap()
    }
}

/// Gradients with respect to the parameters and the conditioning vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub params: Vec<f64>,
    pub cond: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(config: &NetworkConfig) -> Self {
        ParamGrads {
            params: vec![0.0; config.param_count()],
            cond: vec![0.0; config.cond_dim()],
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
        for (a, b) in self.cond.iter_mut().zip(&other.cond) {
            *a += b;
        }
    }

    /// Latent part of the conditioning gradient.
    pub fn latent<'a>(&'a self, config: &NetworkConfig) -> &'a [f64] {
        &self.cond[config.label_count..]
    }
}

/// One-hot label followed by the latent code.
pub fn conditioning(config: &NetworkConfig, label: usize, latent: &[f64]) -> Result<Vec<f64>> {
    if label >= config.label_count {
        return Err(Error::Contract(format!(
            "label {label} outside alphabet of {}",
            config.label_count
        )));
    }
    if latent.len() != config.latent_dim {
        return Err(Error::Shape(format!(
            "latent has {} entries, network expects {}",
            latent.len(),
            config.latent_dim
        )));
    }
    let mut c = vec![0.0; config.cond_dim()];
    c[label] = 1.0;
    c[config.label_count..].copy_from_slice(latent);
    Ok(c)
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// `C (m x n) += A (m x k) B (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices that cover every strided index of the
    // m x k, k x n and m x n operands.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn tensor_name(layers: &[LayerSpec], index: usize) -> String {
    for (k, l) in layers.iter().enumerate() {
        if index < l.b_offset {
            return format!("layer {k} weight");
        }
        if index < l.b_offset + l.out {
            return format!("layer {k} bias");
        }
    }
    format!("parameter {index}")
}

impl Network {
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let params = vec![0.0; config.param_count()];
        Ok(Network {
            config,
            layers,
            params,
            version: 0,
        })
    }

    /// Fan-in scaled Gaussian weights (gain 2 for hidden layers, 1 for the
    /// linear head), zero biases.
    pub fn init(config: NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Network::zeros(config)?;
        let last = net.layers.len() - 1;
        for (k, l) in net.layers.clone().iter().enumerate() {
            let gain = if k == last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / l.in_total as f64).sqrt()).unwrap();
            for w in &mut net.params[l.w_offset..l.b_offset] {
                *w = normal.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn from_params(config: NetworkConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Network::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, network needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Human-readable tensor name for a flat parameter index.
    pub fn tensor_name(&self, index: usize) -> String {
        tensor_name(&self.layers, index)
    }

    /// One ADAM update of all parameters.
    pub fn adam_step(&mut self, adam: &mut super::AdamState, grads: &[f64]) -> Result<()> {
        self.version += 1;
        let layers = &self.layers;
        adam.step(&mut self.params, grads, |i| tensor_name(layers, i))
    }

    /// Evaluate one point; returns the `out_channels` field values.
    pub fn forward(&self, latent: &[f64], label: usize, p: [f64; 2]) -> Result<Vec<f64>> {
        let cond = conditioning(&self.config, label, latent)?;
        Ok(self.forward_batch(&[p], &cond)?.outputs().to_vec())
    }

    /// Evaluate a batch of points sharing one conditioning vector.
    pub fn forward_batch(&self, points: &[[f64; 2]], cond: &[f64]) -> Result<ForwardCache> {
        if cond.len() != self.config.cond_dim() {
            return Err(Error::Contract(format!(
                "conditioning has {} entries, network expects {}",
                cond.len(),
                self.config.cond_dim()
            )));
        }
        let n = points.len();
        let slope = self.config.leaky_slope;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            let w = &self.params[l.w_offset..l.b_offset];
            let b = &self.params[l.b_offset..l.b_offset + l.out];
            let mut z = vec![0.0; n * l.out];
            let mut bias = b.to_vec();
            if l.has_input {
                let c0 = l.in_hidden + 2;
                for (o, bo) in bias.iter_mut().enumerate() {
                    let row = &w[o * l.in_total + c0..(o + 1) * l.in_total];
                    *bo += row.iter().zip(cond).map(|(a, c)| a * c).sum::<f64>();
                }
                let px = l.in_hidden;
                for (s, p) in points.iter().enumerate() {
                    let zr = &mut z[s * l.out..(s + 1) * l.out];
                    for (o, zo) in zr.iter_mut().enumerate() {
                        let row = o * l.in_total + px;
                        *zo = bias[o] + w[row] * p[0] + w[row + 1] * p[1];
                    }
                }
            } else {
                for zr in z.chunks_exact_mut(l.out) {
                    zr.copy_from_slice(&bias);
                }
            }
            if k > 0 {
                gemm(
                    n,
                    l.in_hidden,
                    l.out,
                    &act,
                    l.in_hidden,
                    1,
                    w,
                    1,
                    l.in_total,
                    &mut z,
                    l.out,
                    1,
                );
            }
            if k + 1 < self.layers.len() {
                act = z.iter().map(|&v| leaky(v, slope)).collect();
            }
            pre.push(z);
        }
        Ok(ForwardCache {
            version: self.version,
            points: points.to_vec(),
            cond: cond.to_vec(),
            pre,
        })
    }

    /// Accumulate gradients of `sum(upstream ⊙ outputs)` into `grads` and
    /// return the gradient with respect to each input point.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut ParamGrads,
    ) -> Result<Vec<[f64; 2]>> {
        if cache.version != self.version {
            return Err(Error::Contract(
                "stale forward cache: parameters changed since the forward pass".into(),
            ));
        }
        let n = cache.points.len();
        let out = self.config.out_channels;
        if upstream.len() != n * out {
            return Err(Error::Contract(format!(
                "upstream gradient has {} entries, expected {}",
                upstream.len(),
                n * out
            )));
        }
        if grads.params.len() != self.params.len() || grads.cond.len() != self.config.cond_dim() {
            return Err(Error::Shape("gradient buffers do not match the network".into()));
        }
        let slope = self.config.leaky_slope;
        let mut point_grads = vec![[0.0; 2]; n];
        let mut delta = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = self.layers[k];
            let w = &self.params[l.w_offset..l.b_offset];
            let (gw, gb) = grads.params[l.w_offset..l.b_offset + l.out].split_at_mut(l.b_offset - l.w_offset);

            let mut colsum = vec![0.0; l.out];
            for dr in delta.chunks_exact(l.out) {
                for (c, d) in colsum.iter_mut().zip(dr) {
                    *c += d;
                }
            }
            for (g, c) in gb.iter_mut().zip(&colsum) {
                *g += c;
            }

            if l.has_input {
                let px = l.in_hidden;
                let c0 = px + 2;
                for o in 0..l.out {
                    let row = o * l.in_total;
                    let s_o = colsum[o];
                    if s_o != 0.0 {
                        for (j, c) in cache.cond.iter().enumerate() {
                            gw[row + c0 + j] += s_o * c;
                            grads.cond[j] += s_o * w[row + c0 + j];
                        }
                    }
                }
                for (s, p) in cache.points.iter().enumerate() {
                    let dr = &delta[s * l.out..(s + 1) * l.out];
                    let mut gp = [0.0; 2];
                    for (o, &d) in dr.iter().enumerate() {
                        let row = o * l.in_total + px;
                        gw[row] += d * p[0];
                        gw[row + 1] += d * p[1];
                        gp[0] += d * w[row];
                        gp[1] += d * w[row + 1];
                    }
                    point_grads[s][0] += gp[0];
                    point_grads[s][1] += gp[1];
                }
            }

            if k > 0 {
                let prev = &cache.pre[k - 1];
                let act: Vec<f64> = prev.iter().map(|&v| leaky(v, slope)).collect();
                // dW_hidden += delta^T act
                gemm(
                    l.out,
                    n,
                    l.in_hidden,
                    &delta,
                    1,
                    l.out,
                    &act,
                    l.in_hidden,
                    1,
                    gw,
                    l.in_total,
                    1,
                );
                // d act = delta W_hidden
                let mut da = vec![0.0; n * l.in_hidden];
                gemm(
                    n,
                    l.out,
                    l.in_hidden,
                    &delta,
                    l.out,
                    1,
                    w,
                    l.in_total,
                    1,
                    &mut da,
                    l.in_hidden,
                    1,
                );
                for (d, &z) in da.iter_mut().zip(prev) {
                    *d *= leaky_grad(z, slope);
                }
                delta = da;
            }
        }
        Ok(point_grads)
    }

    /// Convenience wrapper returning fresh gradient buffers.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(ParamGrads, Vec<[f64; 2]>)> {
        let mut g = ParamGrads::zeros(&self.config);
        let p = self.backward_into(cache, upstream, &mut g)?;
        Ok((g, p))
    }

    /// Forward over fixed-size chunks in parallel.
    pub fn forward_chunked(&self, points: &[[f64; 2]], cond: &[f64]) -> Result<BatchEval> {
        let chunks = points
            .par_chunks(CHUNK)
            .map(|c| self.forward_batch(c, cond))
            .collect::<Result<Vec<_>>>()?;
        Ok(BatchEval { chunks })
    }

    /// Outputs only, without keeping caches.
    pub fn predict(&self, points: &[[f64; 2]], cond: &[f64]) -> Result<Vec<f64>> {
        let parts = points
            .par_chunks(CHUNK)
            .map(|c| self.forward_batch(c, cond).map(|fc| fc.outputs().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.concat())
    }
}

/// Chunked forward results for a large batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    chunks: Vec<ForwardCache>,
}

impl BatchEval {
    pub fn len(&self) -> usize {
        self.chunks.iter().map(ForwardCache::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outputs(&self) -> Vec<f64> {
        self.chunks.iter().flat_map(|c| c.outputs().iter().copied()).collect()
    }

    /// Backward over all chunks; partial gradients are summed in chunk order.
    pub fn backward(&self, net: &Network, upstream: &[f64]) -> Result<(ParamGrads, Vec<[f64; 2]>)> {
        let out = net.config().out_channels;
        if upstream.len() != self.len() * out {
            return Err(Error::Contract("upstream gradient length mismatch".into()));
        }
        let mut offsets = Vec::with_capacity(self.chunks.len());
        let mut o = 0;
        for c in &self.chunks {
            offsets.push(o);
            o += c.len() * out;
        }
        let parts = self
            .chunks
            .par_iter()
            .zip(offsets.par_iter())
            .map(|(c, &off)| net.backward(c, &upstream[off..off + c.len() * out]))
            .collect::<Result<Vec<_>>>()?;
        let mut total = ParamGrads::zeros(net.config());
        let mut points = Vec::with_capacity(self.len());
        for (g, p) in parts {
            total.add(&g);
            points.extend(p);
        }
        Ok((total, points))
    }
}
