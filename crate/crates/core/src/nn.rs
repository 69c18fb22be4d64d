//! Minimal dense neural primitives: linear layers with activations, forward
//! and analytic backward passes, seeded init, SGD, dropout, and a portable
//! little-endian weight container.
//!
//! Computation is f64 throughout; parameters are quantized through f32 at
//! every mutation point so the on-disk format (32-bit floats) round-trips
//! bit-exactly.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::rng::Xoshiro256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::None => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => math::sigmoid(z),
        }
    }

    /// Derivative given pre-activation `z` and post-activation `y`.
    /// The relu subgradient at 0 is 0.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Dense row-major matrix with a batch dimension in the rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Elementwise product, used for attention gates and dropout masks.
    pub fn hadamard(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }
}

/// One affine layer: `out x in` row-major weights, per-output bias, and the
/// activation applied after the affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: alloc::vec![0.0; in_dim * out_dim],
            bias: alloc::vec![0.0; out_dim],
            activation,
        }
    }

    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.in_dim + i]
    }
}

/// A stack of layers with chained dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NnError {
    ShapeMismatch { context: &'static str, expected: usize, got: usize },
    EmptyMlp,
    Codec(String),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch { context, expected, got } => {
                write!(f, "shape mismatch in {context}: expected {expected}, got {got}")
            }
            NnError::EmptyMlp => write!(f, "mlp has no layers"),
            NnError::Codec(msg) => write!(f, "weight codec: {msg}"),
        }
    }
}

impl core::error::Error for NnError {}

impl MlpParams {
    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// Checks that adjacent layer dimensions chain.
    pub fn validate(&self) -> Result<(), NnError> {
        if self.layers.is_empty() {
            return Err(NnError::EmptyMlp);
        }
        for pair in self.layers.windows(2) {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(NnError::ShapeMismatch {
                    context: "layer dim chain",
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Quantizes to the nearest f32 value; keeps in-memory params identical to
/// their serialized form.
#[inline]
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Uniform init in `(-1/sqrt(in), +1/sqrt(in))`; relu on hidden layers, no
/// activation on the last.
pub fn seeded_init(dims: &[usize], seed: u64) -> MlpParams {
    let acts: Vec<Activation> = (0..dims.len().saturating_sub(1))
        .map(|i| {
            if i + 2 == dims.len() {
                Activation::None
            } else {
                Activation::Relu
            }
        })
        .collect();
    seeded_init_with(dims, &acts, seed)
}

/// Uniform init with explicit per-layer activations.
pub fn seeded_init_with(dims: &[usize], activations: &[Activation], seed: u64) -> MlpParams {
    assert!(dims.len() >= 2, "an mlp needs at least one layer");
    assert_eq!(activations.len(), dims.len() - 1);
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (k, pair) in dims.windows(2).enumerate() {
        let (in_dim, out_dim) = (pair[0], pair[1]);
        let scale = 1.0 / math::sqrt(in_dim as f64);
        let mut draw = || quantize((2.0 * rng.next_f64() - 1.0) * scale);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        layers.push(Layer {
            in_dim,
            out_dim,
            weights,
            bias,
            activation: activations[k],
        });
    }
    MlpParams { layers }
}

/// Per-layer cache from a forward pass: the layer inputs, pre-activations,
/// and the final output.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Tensor2>,
    preacts: Vec<Tensor2>,
    output: Tensor2,
}

impl MlpCache {
    pub fn output(&self) -> &Tensor2 {
        &self.output
    }

    fn postact(&self, k: usize) -> &Tensor2 {
        if k + 1 < self.inputs.len() {
            &self.inputs[k + 1]
        } else {
            &self.output
        }
    }
}

/// Row-wise affine + activation composition over the batch.
pub fn mlp_forward(params: &MlpParams, x: &Tensor2) -> Result<Tensor2, NnError> {
    Ok(mlp_forward_cached(params, x)?.0)
}

pub fn mlp_forward_cached(params: &MlpParams, x: &Tensor2) -> Result<(Tensor2, MlpCache), NnError> {
    params.validate()?;
    if x.cols != params.in_dim() {
        return Err(NnError::ShapeMismatch {
            context: "mlp input",
            expected: params.in_dim(),
            got: x.cols,
        });
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut preacts = Vec::with_capacity(params.layers.len());
    let mut cur = x.clone();
    for layer in &params.layers {
        let mut z = Tensor2::zeros(cur.rows, layer.out_dim);
        for b in 0..cur.rows {
            let row = cur.row(b);
            let out = z.row_mut(b);
            for o in 0..layer.out_dim {
                let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = layer.bias[o];
                for i in 0..layer.in_dim {
                    acc += wrow[i] * row[i];
                }
                out[o] = acc;
            }
        }
        let mut a = z.clone();
        for v in &mut a.data {
            *v = layer.activation.apply(*v);
        }
        inputs.push(cur);
        preacts.push(z);
        cur = a;
    }
    let cache = MlpCache { inputs, preacts, output: cur.clone() };
    Ok((cur, cache))
}

/// Gradients shaped like an [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: alloc::vec![0.0; l.weights.len()],
                    bias: alloc::vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

/// Analytic backward pass. `grad_out` is dL/d(output); returns dL/d(input)
/// and the parameter gradients.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &MlpCache,
    grad_out: &Tensor2,
) -> Result<(Tensor2, MlpGrads), NnError> {
    if grad_out.cols != params.out_dim() {
        return Err(NnError::ShapeMismatch {
            context: "mlp grad_out",
            expected: params.out_dim(),
            got: grad_out.cols,
        });
    }
    let mut grads = MlpGrads::zeros_like(params);
    let mut grad = grad_out.clone();
    for (k, layer) in params.layers.iter().enumerate().rev() {
        let input = &cache.inputs[k];
        let preact = &cache.preacts[k];
        let postact = cache.postact(k);
        let rows = grad.rows;

        // dz = grad .* act'(z)
        let mut dz = Tensor2::zeros(rows, layer.out_dim);
        for b in 0..rows {
            for o in 0..layer.out_dim {
                dz.set(
                    b,
                    o,
                    grad.get(b, o) * layer.activation.derivative(preact.get(b, o), postact.get(b, o)),
                );
            }
        }

        let lg = &mut grads.layers[k];
        for b in 0..rows {
            let xin = input.row(b);
            let dzr = dz.row(b);
            for o in 0..layer.out_dim {
                let g = dzr[o];
                lg.bias[o] += g;
                let wrow = &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    wrow[i] += g * xin[i];
                }
            }
        }

        let mut gx = Tensor2::zeros(rows, layer.in_dim);
        for b in 0..rows {
            let dzr = dz.row(b);
            let gxr = gx.row_mut(b);
            for o in 0..layer.out_dim {
                let g = dzr[o];
                let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    gxr[i] += g * wrow[i];
                }
            }
        }
        grad = gx;
    }
    Ok((grad, grads))
}

/// Plain SGD step; parameters stay f32-representable.
pub fn sgd_step(params: &mut MlpParams, grads: &MlpGrads, lr: f64) {
    for (layer, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w = quantize(*w - lr * gw);
        }
        for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
            *b = quantize(*b - lr * gb);
        }
    }
}

/// Inverted-dropout mask: entries are `1 / keep` with probability
/// `keep = 1 - drop_ratio` and 0 otherwise. Applying a mask is an
/// elementwise product; inference skips the mask entirely.
pub fn dropout_mask(rows: usize, cols: usize, drop_ratio: f64, rng: &mut Xoshiro256) -> Tensor2 {
    assert!((0.0..1.0).contains(&drop_ratio));
    let keep = 1.0 - drop_ratio;
    let mut mask = Tensor2::zeros(rows, cols);
    for v in &mut mask.data {
        *v = if rng.next_f64() < keep { 1.0 / keep } else { 0.0 };
    }
    mask
}

// ---------------------------------------------------------------------------
// Weight container: magic "RGW1", then u32 layer count, then per layer
// u32 in, u32 out, u32 activation code, f32 weights row-major, f32 bias.
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

pub const WEIGHT_MAGIC: [u8; 4] = *b"RGW1";

pub fn encode_weights(params: &MlpParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&layer.activation.code().to_le_bytes());
        for &w in &layer.weights {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for &b in &layer.bias {
            out.extend_from_slice(&(b as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Codec(String::from("truncated weight data")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32, NnError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes one weight container and returns the byte length consumed, so
/// containers can be concatenated into parameter bundles.
pub fn decode_weights_prefix(bytes: &[u8]) -> Result<(MlpParams, usize), NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(NnError::Codec(String::from("bad magic, expected RGW1")));
    }
    let layer_count = r.u32()? as usize;
    if layer_count == 0 {
        return Err(NnError::EmptyMlp);
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let activation = Activation::from_code(r.u32()?)
            .ok_or_else(|| NnError::Codec(String::from("unknown activation code")))?;
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(NnError::Codec(String::from("non-finite weight")));
            }
            weights.push(v as f64);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(NnError::Codec(String::from("non-finite bias")));
            }
            bias.push(v as f64);
        }
        layers.push(Layer { in_dim, out_dim, weights, bias, activation });
    }
    let params = MlpParams { layers };
    params.validate()?;
    Ok((params, r.pos))
}

pub fn decode_weights(bytes: &[u8]) -> Result<MlpParams, NnError> {
    let (params, used) = decode_weights_prefix(bytes)?;
    if used != bytes.len() {
        return Err(NnError::Codec(String::from("trailing bytes after weight data")));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single_layer(w: &[f64], bias: &[f64], in_dim: usize, act: Activation) -> MlpParams {
        MlpParams {
            layers: vec![Layer {
                in_dim,
                out_dim: bias.len(),
                weights: w.to_vec(),
                bias: bias.to_vec(),
                activation: act,
            }],
        }
    }

    #[test]
    fn zero_params_relu_gives_zero() {
        let p = single_layer(&[0.0; 6], &[0.0, 0.0], 3, Activation::Relu);
        let x = Tensor2::from_vec(1, 3, vec![1.0, -2.0, 3.0]);
        let y = mlp_forward(&p, &x).unwrap();
        assert_eq!(y.data, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = single_layer(
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            &[0.0; 3],
            3,
            Activation::None,
        );
        let x = Tensor2::from_vec(2, 3, vec![1.0, -2.5, 3.0, 0.5, 0.0, -9.0]);
        let y = mlp_forward(&p, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn scalar_relu_layer() {
        // w = 2, b = 1: relu(2x + 1).
        let p = single_layer(&[2.0], &[1.0], 1, Activation::Relu);
        let y = mlp_forward(&p, &Tensor2::from_vec(1, 1, vec![-3.0])).unwrap();
        assert_eq!(y.data, vec![0.0]);
        let y = mlp_forward(&p, &Tensor2::from_vec(1, 1, vec![3.0])).unwrap();
        assert_eq!(y.data, vec![7.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = single_layer(&[1.0], &[0.0], 1, Activation::None);
        let x = Tensor2::from_vec(1, 2, vec![1.0, 2.0]);
        assert!(matches!(
            mlp_forward(&p, &x),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn linear_weight_grad_is_outer_product() {
        // With grad_out = e_k, grad_w row k equals the input row.
        let p = single_layer(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[0.0, 0.0], 3, Activation::None);
        let x = Tensor2::from_vec(1, 3, vec![2.0, -1.0, 4.0]);
        let (_, cache) = mlp_forward_cached(&p, &x).unwrap();
        let grad_out = Tensor2::from_vec(1, 2, vec![0.0, 1.0]);
        let (_, grads) = mlp_backward(&p, &cache, &grad_out).unwrap();
        assert_eq!(&grads.layers[0].weights[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&grads.layers[0].weights[3..6], &[2.0, -1.0, 4.0]);
        assert_eq!(grads.layers[0].bias, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let p = seeded_init(&[4, 5, 2], 3);
        let x = Tensor2::from_vec(2, 4, vec![0.3; 8]);
        let (_, cache) = mlp_forward_cached(&p, &x).unwrap();
        let (gx, grads) = mlp_backward(&p, &cache, &Tensor2::zeros(2, 2)).unwrap();
        assert!(gx.data.iter().all(|&v| v == 0.0));
        for l in grads.layers {
            assert!(l.weights.iter().all(|&v| v == 0.0));
            assert!(l.bias.iter().all(|&v| v == 0.0));
        }
    }

    /// Central finite differences as the gradient oracle.
    fn finite_difference_check(seed: u64) {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut p = seeded_init_with(
            &[5, 7, 3],
            &[Activation::Relu, Activation::Sigmoid],
            seed,
        );
        let x = Tensor2::from_vec(3, 5, (0..15).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let wvec: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let loss = |params: &MlpParams| -> f64 {
            let y = mlp_forward(params, &x).unwrap();
            let mut acc = 0.0;
            for b in 0..y.rows {
                for (c, w) in wvec.iter().enumerate() {
                    acc += w * y.get(b, c);
                }
            }
            acc
        };
        let (y, cache) = mlp_forward_cached(&p, &x).unwrap();
        let mut grad_out = Tensor2::zeros(y.rows, y.cols);
        for b in 0..y.rows {
            for (c, w) in wvec.iter().enumerate() {
                grad_out.set(b, c, *w);
            }
        }
        let (_, grads) = mlp_backward(&p, &cache, &grad_out).unwrap();

        let eps = 1e-4;
        for k in 0..p.layers.len() {
            for idx in 0..p.layers[k].weights.len() {
                let orig = p.layers[k].weights[idx];
                p.layers[k].weights[idx] = orig + eps;
                let up = loss(&p);
                p.layers[k].weights[idx] = orig - eps;
                let down = loss(&p);
                p.layers[k].weights[idx] = orig;
                let fd = (up - down) / (2.0 * eps);
                let analytic = grads.layers[k].weights[idx];
                let denom = analytic.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-4,
                    "layer {k} weight {idx}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in [1, 2, 3] {
            finite_difference_check(seed);
        }
    }

    #[test]
    fn forward_is_batch_order_equivariant() {
        let p = seeded_init(&[4, 6, 2], 11);
        let rows = [
            vec![0.1, -0.2, 0.3, 0.4],
            vec![1.0, 2.0, -3.0, 0.0],
            vec![-0.5, 0.5, 0.25, -0.125],
        ];
        let x = Tensor2::from_vec(3, 4, rows.concat());
        let xp = Tensor2::from_vec(3, 4, [rows[2].clone(), rows[0].clone(), rows[1].clone()].concat());
        let y = mlp_forward(&p, &x).unwrap();
        let yp = mlp_forward(&p, &xp).unwrap();
        assert_eq!(yp.row(0), y.row(2));
        assert_eq!(yp.row(1), y.row(0));
        assert_eq!(yp.row(2), y.row(1));
    }

    #[test]
    fn seeded_init_is_reproducible_with_expected_shapes() {
        let a = seeded_init(&[4, 8, 3], 1);
        let b = seeded_init(&[4, 8, 3], 1);
        assert_eq!(a, b);
        assert_eq!(a.layers[0].out_dim, 8);
        assert_eq!(a.layers[0].in_dim, 4);
        assert_eq!(a.layers[1].out_dim, 3);
        assert_eq!(a.layers[1].in_dim, 8);
        let bound = 1.0 / 2.0;
        for w in &a.layers[0].weights {
            assert!(w.abs() <= bound);
        }
    }

    #[test]
    fn weight_container_round_trips_bit_exactly() {
        let p = seeded_init_with(
            &[3, 5, 2],
            &[Activation::Relu, Activation::Sigmoid],
            77,
        );
        let bytes = encode_weights(&p);
        let q = decode_weights(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode_weights(&q), bytes);
    }

    #[test]
    fn decode_rejects_malformed_input() {
        assert!(matches!(decode_weights(b"nope"), Err(NnError::Codec(_))));
        let p = seeded_init(&[2, 2], 1);
        let mut bytes = encode_weights(&p);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(decode_weights(&bytes), Err(NnError::Codec(_))));
    }

    #[test]
    fn decode_rejects_broken_dim_chain() {
        let p = MlpParams {
            layers: vec![
                Layer::zeros(2, 3, Activation::Relu),
                Layer::zeros(4, 1, Activation::None),
            ],
        };
        let bytes = encode_weights(&p);
        assert!(matches!(
            decode_weights(&bytes),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sgd_keeps_params_f32_exact() {
        let mut p = seeded_init(&[3, 4, 2], 5);
        let x = Tensor2::from_vec(1, 3, vec![0.2, -0.4, 0.6]);
        let (y, cache) = mlp_forward_cached(&p, &x).unwrap();
        let grad_out = Tensor2::from_vec(1, 2, vec![1.0, -1.0]);
        let (_, grads) = mlp_backward(&p, &cache, &grad_out).unwrap();
        sgd_step(&mut p, &grads, 0.05);
        for layer in &p.layers {
            for &w in layer.weights.iter().chain(&layer.bias) {
                assert_eq!(w, w as f32 as f64);
            }
        }
        // The step moved the output in the descent direction.
        let y2 = mlp_forward(&p, &x).unwrap();
        let obj = |t: &Tensor2| t.get(0, 0) - t.get(0, 1);
        assert!(obj(&y2) < obj(&y));
    }

    #[test]
    fn dropout_mask_statistics_and_scaling() {
        let mut rng = Xoshiro256::seed_from_u64(8);
        let mask = dropout_mask(100, 100, 0.1, &mut rng);
        let kept = mask.data.iter().filter(|&&v| v != 0.0).count();
        assert!((kept as f64 / 10_000.0 - 0.9).abs() < 0.02);
        for &v in &mask.data {
            assert!(v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-12);
        }
    }
}
