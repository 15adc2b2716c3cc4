//! Small multilayer embedding network with a final unit-norm layer.
//!
//! Each layer applies a linear transform, an optional rectifier and an
//! optional L2 normalisation (applied last so a normalised final layer
//! guarantees unit-norm embeddings). Backpropagation is exact, including
//! the normalisation Jacobian, and is checked against central finite
//! differences in the tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Norm denominators are floored here; exact zeros still raise
/// [`Error::DegenerateNorm`].
pub const NORM_EPSILON: f64 = 1e-12;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SMCP";
const CHECKPOINT_VERSION: u32 = 1;

/// Shape and switches for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    /// Rectifier after the linear transform.
    pub has_activation: bool,
    /// L2 normalisation applied after the (optional) rectifier.
    pub has_normalisation: bool,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize) -> Self {
        Self { input_width, output_width, has_activation: false, has_normalisation: false }
    }

    pub fn with_activation(mut self) -> Self {
        self.has_activation = true;
        self
    }

    pub fn with_normalisation(mut self) -> Self {
        self.has_normalisation = true;
        self
    }
}

/// One linear layer: row-major `output_width x input_width` weights plus a
/// bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn new(spec: LayerSpec, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if weights.len() != spec.output_width * spec.input_width {
            return Err(Error::config(format!(
                "layer weights have {} entries, expected {}x{}",
                weights.len(),
                spec.output_width,
                spec.input_width
            )));
        }
        if biases.len() != spec.output_width {
            return Err(Error::config(format!(
                "layer biases have {} entries, expected {}",
                biases.len(),
                spec.output_width
            )));
        }
        Ok(Self { spec, weights, biases })
    }
}

/// All parameters of an embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    layers: Vec<Layer>,
}

/// Per-layer vectors cached by [`EmbeddingParams::forward`] for one input:
/// pre-activation, post-activation and the post-activation norm (where the
/// layer normalises).
#[derive(Debug, Clone)]
pub struct ForwardTape {
    input: Vec<f64>,
    stages: Vec<LayerTape>,
}

#[derive(Debug, Clone)]
struct LayerTape {
    /// `W x + b`.
    pre_activation: Vec<f64>,
    /// Euclidean norm of the post-activation vector; set only when the
    /// layer normalises.
    norm: Option<f64>,
    /// Post-activation layer output, input to the next layer.
    output: Vec<f64>,
}

/// Gradients with the same shapes as [`EmbeddingParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weight_grads: Vec<Vec<f64>>,
    pub bias_grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &EmbeddingParams) -> Self {
        Self {
            weight_grads: params.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias_grads: params.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// Elementwise accumulate another gradient of identical shape.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (mine, theirs) in self.weight_grads.iter_mut().zip(&other.weight_grads) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += t;
            }
        }
        for (mine, theirs) in self.bias_grads.iter_mut().zip(&other.bias_grads) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += t;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.weight_grads.iter_mut().flatten() {
            *g *= factor;
        }
        for g in self.bias_grads.iter_mut().flatten() {
            *g *= factor;
        }
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::config("network needs at least one layer"));
    }
    for spec in specs {
        if spec.input_width == 0 || spec.output_width == 0 {
            return Err(Error::config("layer widths must be at least 1"));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].output_width != pair[1].input_width {
            return Err(Error::config(format!(
                "layer {i} outputs width {} but layer {} expects {}",
                pair[0].output_width,
                i + 1,
                pair[1].input_width
            )));
        }
    }
    Ok(())
}

impl EmbeddingParams {
    /// Seeded initialisation: weights uniform in `±sqrt(6/(in+out))`,
    /// biases zero.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = (6.0 / (spec.input_width + spec.output_width) as f64).sqrt();
                let weights = (0..spec.output_width * spec.input_width)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                let biases = vec![0.0; spec.output_width];
                Layer { spec, weights, biases }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Assembles a network from explicit layers, validating the width chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_width
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().unwrap().spec.output_width
    }

    /// Embeds one input, returning the output and the tape needed by
    /// [`EmbeddingParams::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTape)> {
        if x.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input has width {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite input to forward"));
        }
        let mut stages = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let spec = layer.spec;
            let mut pre = vec![0.0; spec.output_width];
            for (row, pre_v) in pre.iter_mut().enumerate() {
                let w = &layer.weights[row * spec.input_width..(row + 1) * spec.input_width];
                let mut acc = layer.biases[row];
                for (wv, xv) in w.iter().zip(&current) {
                    acc += wv * xv;
                }
                *pre_v = acc;
            }
            let post: Vec<f64> = if spec.has_activation {
                pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                pre.clone()
            };
            let (output, norm) = if spec.has_normalisation {
                let norm = post.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::DegenerateNorm);
                }
                let denom = norm.max(NORM_EPSILON);
                (post.iter().map(|v| v / denom).collect(), Some(norm))
            } else {
                (post.clone(), None)
            };
            current = output.clone();
            stages.push(LayerTape { pre_activation: pre, norm, output });
        }
        Ok((current, ForwardTape { input: x.to_vec(), stages }))
    }

    /// Embeds a batch; element `i` equals `forward(xs[i]).0`. Runs in
    /// parallel, output order preserved.
    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.par_iter().map(|x| self.forward(x).map(|(e, _)| e)).collect()
    }

    /// Reverse-mode pass through a tape produced by `forward` with these
    /// parameters. Returns parameter gradients and the gradient with
    /// respect to the input.
    pub fn backward(&self, tape: &ForwardTape, grad_output: &[f64]) -> Result<(ParamGrads, Vec<f64>)> {
        if tape.stages.len() != self.layers.len() {
            return Err(Error::config("tape does not match network depth"));
        }
        if grad_output.len() != self.embedding_dim() {
            return Err(Error::config(format!(
                "upstream gradient has width {}, embedding width is {}",
                grad_output.len(),
                self.embedding_dim()
            )));
        }
        let mut grads = ParamGrads::zeros_like(self);
        let mut upstream = grad_output.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let stage = &tape.stages[idx];
            let spec = layer.spec;
            if stage.pre_activation.len() != spec.output_width {
                return Err(Error::config("tape stage width does not match layer"));
            }

            // Normalisation: for o = y / n, do/dy = (I - o o^T) / n, so the
            // component of the upstream gradient parallel to o is removed.
            let mut grad_post = upstream;
            if let Some(norm) = stage.norm {
                let denom = norm.max(NORM_EPSILON);
                let dot: f64 = grad_post.iter().zip(&stage.output).map(|(g, o)| g * o).sum();
                grad_post = grad_post
                    .iter()
                    .zip(&stage.output)
                    .map(|(g, o)| (g - dot * o) / denom)
                    .collect();
            }

            // Rectifier: pass-through where the pre-activation was positive.
            let grad_pre: Vec<f64> = if spec.has_activation {
                grad_post
                    .iter()
                    .zip(&stage.pre_activation)
                    .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
                    .collect()
            } else {
                grad_post
            };

            let layer_input: &[f64] =
                if idx == 0 { &tape.input } else { &tape.stages[idx - 1].output };
            let wg = &mut grads.weight_grads[idx];
            for (row, &g) in grad_pre.iter().enumerate() {
                let w_row = row * spec.input_width;
                for (col, &xin) in layer_input.iter().enumerate() {
                    wg[w_row + col] += g * xin;
                }
                grads.bias_grads[idx][row] += g;
            }

            let mut grad_input = vec![0.0; spec.input_width];
            for (row, &g) in grad_pre.iter().enumerate() {
                let w_row = &layer.weights[row * spec.input_width..(row + 1) * spec.input_width];
                for (col, &w) in w_row.iter().enumerate() {
                    grad_input[col] += g * w;
                }
            }
            upstream = grad_input;
        }
        Ok((grads, upstream))
    }

    /// One SGD update: `w <- w - lr * (g + weight_decay * w)` for weights,
    /// plain `b <- b - lr * g` for biases.
    pub fn sgd_step(&mut self, grads: &ParamGrads, lr: f64, weight_decay: f64) -> Result<()> {
        if lr < 0.0 || weight_decay < 0.0 {
            return Err(Error::config("learning rate and weight decay must be non-negative"));
        }
        if grads.weight_grads.len() != self.layers.len() {
            return Err(Error::config("gradient does not match network depth"));
        }
        for (layer, (wg, bg)) in self
            .layers
            .iter_mut()
            .zip(grads.weight_grads.iter().zip(&grads.bias_grads))
        {
            if wg.len() != layer.weights.len() || bg.len() != layer.biases.len() {
                return Err(Error::config("gradient shape does not match layer"));
            }
            for (w, g) in layer.weights.iter_mut().zip(wg) {
                *w -= lr * (g + weight_decay * *w);
            }
            for (b, g) in layer.biases.iter_mut().zip(bg) {
                *b -= lr * g;
            }
        }
        Ok(())
    }

    /// Writes the versioned binary checkpoint: magic, version and layer
    /// count, then per-layer widths and flags, then row-major 32-bit
    /// little-endian floats for each layer's weights and biases.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.spec.input_width as u32).to_le_bytes())?;
            w.write_all(&(layer.spec.output_width as u32).to_le_bytes())?;
            let flags = layer.spec.has_activation as u32 | (layer.spec.has_normalisation as u32) << 1;
            w.write_all(&flags.to_le_bytes())?;
        }
        for layer in &self.layers {
            for &v in layer.weights.iter().chain(&layer.biases) {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::parse(0, "bad checkpoint magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
        }
        let layer_count = read_u32(&mut r)? as usize;
        if layer_count == 0 || layer_count > 1024 {
            return Err(Error::parse(8, format!("implausible layer count {layer_count}")));
        }
        let mut specs = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let input = read_u32(&mut r)? as usize;
            let output = read_u32(&mut r)? as usize;
            let flags = read_u32(&mut r)?;
            specs.push(LayerSpec {
                input_width: input,
                output_width: output,
                has_activation: flags & 1 != 0,
                has_normalisation: flags & 2 != 0,
            });
        }
        validate_specs(&specs)?;
        let mut layers = Vec::with_capacity(layer_count);
        for spec in specs {
            let mut weights = Vec::with_capacity(spec.output_width * spec.input_width);
            for _ in 0..spec.output_width * spec.input_width {
                weights.push(read_f32(&mut r)? as f64);
            }
            let mut biases = Vec::with_capacity(spec.output_width);
            for _ in 0..spec.output_width {
                biases.push(read_f32(&mut r)? as f64);
            }
            layers.push(Layer { spec, weights, biases });
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

/// The default desk-scale architecture: `input -> 128` rectified,
/// `128 -> embedding_dim` normalised.
pub fn default_specs(input_dim: usize, hidden_width: usize, embedding_dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(input_dim, hidden_width).with_activation(),
        LayerSpec::new(hidden_width, embedding_dim).with_normalisation(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn specs_2layer() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(4, 3).with_activation(),
            LayerSpec::new(3, 2).with_normalisation(),
        ]
    }

    /// Scalar probe for the finite-difference oracle: J(params) = g . f(x).
    fn probe_loss(params: &EmbeddingParams, x: &[f64], g: &[f64]) -> f64 {
        let (out, _) = params.forward(x).unwrap();
        out.iter().zip(g).map(|(o, gv)| o * gv).sum()
    }

    fn numeric_param_grads(
        params: &EmbeddingParams,
        x: &[f64],
        g: &[f64],
        h: f64,
    ) -> ParamGrads {
        let mut grads = ParamGrads::zeros_like(params);
        for li in 0..params.layers().len() {
            for wi in 0..params.layers()[li].weights.len() {
                let mut plus = params.clone();
                plus.layers[li].weights[wi] += h;
                let mut minus = params.clone();
                minus.layers[li].weights[wi] -= h;
                grads.weight_grads[li][wi] =
                    (probe_loss(&plus, x, g) - probe_loss(&minus, x, g)) / (2.0 * h);
            }
            for bi in 0..params.layers()[li].biases.len() {
                let mut plus = params.clone();
                plus.layers[li].biases[bi] += h;
                let mut minus = params.clone();
                minus.layers[li].biases[bi] -= h;
                grads.bias_grads[li][bi] =
                    (probe_loss(&plus, x, g) - probe_loss(&minus, x, g)) / (2.0 * h);
            }
        }
        grads
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = EmbeddingParams::init(&specs_2layer(), 7).unwrap();
        let b = EmbeddingParams::init(&specs_2layer(), 7).unwrap();
        assert_eq!(a, b);
        let c = EmbeddingParams::init(&specs_2layer(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_mismatched_widths() {
        let specs = vec![LayerSpec::new(4, 3), LayerSpec::new(5, 2)];
        assert!(matches!(EmbeddingParams::init(&specs, 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_zeroes_biases() {
        let specs = vec![LayerSpec::new(64, 64).with_normalisation()];
        let params = EmbeddingParams::init(&specs, 0).unwrap();
        assert!(params.layers()[0].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_normalises_identity_layer() {
        // Identity weights on (3,4) normalise to (0.6, 0.8).
        let spec = LayerSpec::new(2, 2).with_normalisation();
        let layer = Layer::new(spec, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let params = EmbeddingParams::from_layers(vec![layer]).unwrap();
        let (out, _) = params.forward(&[3.0, 4.0]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-12);
        assert!((out[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn forward_emits_unit_norm() {
        let params = EmbeddingParams::init(&specs_2layer(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = viable_input(&params, &mut rng, 4);
            let (out, _) = params.forward(&x).unwrap();
            let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "norm was {norm}");
        }
    }

    #[test]
    fn forward_rejects_nan_input() {
        let params = EmbeddingParams::init(&specs_2layer(), 3).unwrap();
        let err = params.forward(&[0.0, f64::NAN, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn forward_rejects_zero_vector_into_normalisation() {
        let spec = LayerSpec::new(2, 2).with_normalisation();
        let layer = Layer::new(spec, vec![0.0; 4], vec![0.0, 0.0]).unwrap();
        let params = EmbeddingParams::from_layers(vec![layer]).unwrap();
        assert!(matches!(params.forward(&[1.0, 1.0]), Err(Error::DegenerateNorm)));
    }

    /// Draws inputs until the tiny test network does not hit a dead
    /// rectifier layer in front of the normalisation.
    fn viable_input(params: &EmbeddingParams, rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            if params.forward(&x).is_ok() {
                return x;
            }
        }
    }

    #[test]
    fn forward_batch_matches_forward_and_preserves_order() {
        let params = EmbeddingParams::init(&specs_2layer(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let xs: Vec<Vec<f64>> = (0..20).map(|_| viable_input(&params, &mut rng, 4)).collect();
        let batch = params.forward_batch(&xs).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            let (single, _) = params.forward(x).unwrap();
            assert_eq!(&single, b);
        }
        // Permuted input gives permuted output.
        let mut perm = xs.clone();
        perm.reverse();
        let batch_perm = params.forward_batch(&perm).unwrap();
        let mut reversed = batch.clone();
        reversed.reverse();
        assert_eq!(batch_perm, reversed);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        let mut trial = 0;
        while checked < 30 {
            trial += 1;
            let params = EmbeddingParams::init(&specs_2layer(), 100 + trial).unwrap();
            let x = viable_input(&params, &mut rng, 4);
            let g: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, tape) = params.forward(&x).unwrap();
            // Finite differences are invalid within h of a rectifier kink.
            if tape.stages.iter().any(|s| s.pre_activation.iter().any(|z| z.abs() < 1e-4)) {
                continue;
            }
            checked += 1;
            let (analytic, _) = params.backward(&tape, &g).unwrap();
            let numeric = numeric_param_grads(&params, &x, &g, 1e-5);
            for li in 0..2 {
                for (a, n) in analytic.weight_grads[li].iter().zip(&numeric.weight_grads[li]) {
                    if n.abs() > 1e-7 {
                        assert!(
                            relative_error(*a, *n) < 1e-5,
                            "weight grad mismatch: analytic={a}, numeric={n}"
                        );
                    }
                }
                for (a, n) in analytic.bias_grads[li].iter().zip(&numeric.bias_grads[li]) {
                    if n.abs() > 1e-7 {
                        assert!(
                            relative_error(*a, *n) < 1e-5,
                            "bias grad mismatch: analytic={a}, numeric={n}"
                        );
                    }
                }
            }
        }
    }

    /// Fixed two-layer network whose rectifier stays alive on positive
    /// inputs.
    fn fixed_2layer() -> EmbeddingParams {
        let l1 = Layer::new(
            LayerSpec::new(4, 3).with_activation(),
            vec![
                0.5, 0.1, -0.2, 0.3, //
                -0.1, 0.4, 0.2, 0.1, //
                0.2, -0.3, 0.5, 0.4,
            ],
            vec![0.2, 0.1, 0.3],
        )
        .unwrap();
        let l2 = Layer::new(
            LayerSpec::new(3, 2).with_normalisation(),
            vec![0.6, -0.2, 0.3, 0.1, 0.5, -0.4],
            vec![0.05, -0.02],
        )
        .unwrap();
        EmbeddingParams::from_layers(vec![l1, l2]).unwrap()
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let params = fixed_2layer();
        let (_, tape) = params.forward(&[0.3, 0.2, 0.8, 0.1]).unwrap();
        let (grads, grad_in) = params.backward(&tape, &[0.0, 0.0]).unwrap();
        assert!(grads.weight_grads.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.bias_grads.iter().flatten().all(|&g| g == 0.0));
        assert!(grad_in.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn normalisation_annihilates_parallel_gradient() {
        // A pure normalisation layer projects out the component of the
        // upstream gradient parallel to the output.
        let spec = LayerSpec::new(3, 3).with_normalisation();
        let layer = Layer::new(
            spec,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 3],
        )
        .unwrap();
        let params = EmbeddingParams::from_layers(vec![layer]).unwrap();
        let (out, tape) = params.forward(&[1.0, 2.0, 2.0]).unwrap();
        let (_, grad_in) = params.backward(&tape, &out).unwrap();
        assert!(grad_in.iter().all(|&g| g.abs() < 1e-12), "parallel grad leaked: {grad_in:?}");
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let params = fixed_2layer();
        let (_, tape) = params.forward(&[0.3, 0.2, 0.8, 0.1]).unwrap();
        assert!(params.backward(&tape, &[0.0; 5]).is_err());
    }

    #[test]
    fn sgd_step_matches_hand_value() {
        let spec = LayerSpec::new(1, 1);
        let layer = Layer::new(spec, vec![1.0], vec![0.0]).unwrap();
        let mut params = EmbeddingParams::from_layers(vec![layer]).unwrap();
        let grads = ParamGrads { weight_grads: vec![vec![0.0]], bias_grads: vec![vec![0.0]] };
        params.sgd_step(&grads, 0.1, 0.0005).unwrap();
        assert!((params.layers()[0].weights[0] - 0.99995).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_zero_lr_is_identity() {
        let mut params = EmbeddingParams::init(&specs_2layer(), 31).unwrap();
        let before = params.clone();
        let mut grads = ParamGrads::zeros_like(&params);
        for g in grads.weight_grads.iter_mut().flatten() {
            *g = 1.0;
        }
        params.sgd_step(&grads, 0.0, 0.1).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn sgd_step_zero_grad_zero_decay_is_identity() {
        let mut params = EmbeddingParams::init(&specs_2layer(), 31).unwrap();
        let before = params.clone();
        let grads = ParamGrads::zeros_like(&params);
        params.sgd_step(&grads, 0.1, 0.0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn sgd_step_leaves_biases_undecayed() {
        let spec = LayerSpec::new(1, 1);
        let layer = Layer::new(spec, vec![1.0], vec![1.0]).unwrap();
        let mut params = EmbeddingParams::from_layers(vec![layer]).unwrap();
        let grads = ParamGrads { weight_grads: vec![vec![0.0]], bias_grads: vec![vec![0.0]] };
        params.sgd_step(&grads, 0.1, 0.1).unwrap();
        assert_eq!(params.layers()[0].biases[0], 1.0);
        assert!(params.layers()[0].weights[0] < 1.0);
    }

    #[test]
    fn checkpoint_round_trips_at_f32_precision() {
        let params = EmbeddingParams::init(&specs_2layer(), 41).unwrap();
        let mut buf = Vec::new();
        params.write_checkpoint(&mut buf).unwrap();
        let loaded = EmbeddingParams::read_checkpoint(buf.as_slice()).unwrap();
        // A second round trip is exact: the f32 cast has already happened.
        let mut buf2 = Vec::new();
        loaded.write_checkpoint(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        for (a, b) in params.layers().iter().zip(loaded.layers()) {
            assert_eq!(a.spec, b.spec);
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn checkpoint_rejects_truncation_and_bad_magic() {
        let params = EmbeddingParams::init(&specs_2layer(), 41).unwrap();
        let mut buf = Vec::new();
        params.write_checkpoint(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(EmbeddingParams::read_checkpoint(buf.as_slice()).is_err());
        assert!(EmbeddingParams::read_checkpoint(&b"NOPE"[..]).is_err());
    }
}
