//! A small fully-connected regressor trained by mini-batch gradient descent.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{Array, DType};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MODEL_MANIFEST_FILE: &str = "model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Dense layer with `weights[o * n_in + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, &b)| {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    /// Applied on hidden layers; the output layer is linear.
    pub activation: Activation,
}

/// Gradients with the same layout as [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub layer_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: MlpModel,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

fn check_layer_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Shape(format!(
            "layer sizes {sizes:?} need an input and an output layer, all non-zero"
        )));
    }
    Ok(())
}

impl MlpModel {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn random(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        let mut rng = stream(seed, 0, Purpose::Init);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = 1.0 / (n_in as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| rng.random_range(-bound..=bound)).collect(),
                    biases: vec![0.0; n_out],
                }
            })
            .collect();
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                n_in: w[0],
                n_out: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_layer_sizes(&self.layer_sizes)?;
        if self.layers.len() + 1 != self.layer_sizes.len() {
            return Err(Error::Shape("layer count does not match layer sizes".into()));
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.n_in != w[0] || l.n_out != w[1] || l.weights.len() != w[0] * w[1] || l.biases.len() != w[1] {
                return Err(Error::Shape(format!("layer {}x{} is inconsistent", w[0], w[1])));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite model parameter".into()));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Activations of every layer, input first.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&acts[i], &mut z);
            if i != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).pop().unwrap_or_default())
    }

    fn zero_gradient(&self) -> Gradient {
        Gradient {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// Mean squared error over the batch (averaged over samples and output
    /// components) and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[&TrainingPair]) -> Result<(f64, Gradient)> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let scale = 1.0 / (batch.len() * self.output_len()) as f64;
        let mut grad = self.zero_gradient();
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for pair in batch {
            self.check_input(&pair.input)?;
            if pair.target.len() != self.output_len() {
                return Err(Error::Shape(format!(
                    "target has {} values, model outputs {}",
                    pair.target.len(),
                    self.output_len()
                )));
            }
            let acts = self.activations(&pair.input);
            let out = &acts[last + 1];
            let mut delta: Vec<f64> = out
                .iter()
                .zip(&pair.target)
                .map(|(y, t)| {
                    loss += (y - t) * (y - t);
                    2.0 * (y - t) * scale
                })
                .collect();
            for li in (0..=last).rev() {
                let layer = &self.layers[li];
                let a_in = &acts[li];
                let rows = grad.weights[li].chunks_exact_mut(layer.n_in);
                for ((row, gb), &d) in rows.zip(grad.biases[li].iter_mut()).zip(&delta) {
                    *gb += d;
                    for (g, a) in row.iter_mut().zip(a_in) {
                        *g += d * a;
                    }
                }
                if li > 0 {
                    delta = (0..layer.n_in)
                        .map(|i| {
                            let back: f64 = (0..layer.n_out)
                                .map(|o| layer.weights[o * layer.n_in + i] * delta[o])
                                .sum();
                            back * self.activation.derivative_from_output(a_in[i])
                        })
                        .collect();
                }
            }
        }
        Ok((loss * scale, grad))
    }

    fn apply_gradient(&mut self, grad: &Gradient, learning_rate: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grad.weights.iter().zip(&grad.biases)) {
            layer
                .weights
                .iter_mut()
                .zip(gw)
                .for_each(|(w, g)| *w -= learning_rate * g);
            layer
                .biases
                .iter_mut()
                .zip(gb)
                .for_each(|(b, g)| *b -= learning_rate * g);
        }
    }
}

pub fn mlp_train(pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::Shape("no training pairs".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidArgument(
            "learning rate must be positive; batch size and epochs at least 1".into(),
        ));
    }
    let mut model = MlpModel::random(&cfg.layer_sizes, cfg.seed)?;
    let (n_in, n_out) = (model.input_len(), model.output_len());
    if let Some(p) = pairs.iter().find(|p| p.input.len() != n_in || p.target.len() != n_out) {
        return Err(Error::Shape(format!(
            "pair with {} inputs / {} targets does not fit layers {:?}",
            p.input.len(),
            p.target.len(),
            cfg.layer_sizes
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = stream(cfg.seed, 0, Purpose::Shuffle);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * chunk.len() as f64;
            model.apply_gradient(&grad, cfg.learning_rate);
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() || model.validate().is_err() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("epoch {epoch}: loss {mean:.3e}");
        trace.push(mean);
    }
    Ok(TrainReport {
        model,
        loss_trace: trace,
    })
}

pub fn mlp_infer(model: &MlpModel, signals: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    signals.par_iter().map(|s| model.predict(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    format_version: u32,
    layer_sizes: Vec<usize>,
    activation: Activation,
    dtype: DType,
    byte_order: String,
    /// Per layer: `[weights_file, biases_file]`.
    files: Vec<[String; 2]>,
}

/// Writes `model.json` plus one raw float32 file per weight matrix and bias
/// vector. Parameters are stored in single precision.
pub fn write_model(model: &MlpModel, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let wf = format!("layer{i}.weights.raw");
        let bf = format!("layer{i}.biases.raw");
        fs::write(
            dir.join(&wf),
            Array::real(vec![layer.n_out, layer.n_in], &layer.weights).to_bytes(),
        )?;
        fs::write(dir.join(&bf), Array::real(vec![layer.n_out], &layer.biases).to_bytes())?;
        files.push([wf, bf]);
    }
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        layer_sizes: model.layer_sizes.clone(),
        activation: model.activation,
        dtype: DType::Float32,
        byte_order: crate::datasets::BYTE_ORDER.into(),
        files,
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    fs::write(dir.join(MODEL_MANIFEST_FILE), text)?;
    Ok(())
}

pub fn read_model(dir: &Path) -> Result<MlpModel> {
    let path = dir.join(MODEL_MANIFEST_FILE);
    let manifest: ModelManifest = serde_json::from_slice(&fs::read(&path)?)?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    check_layer_sizes(&manifest.layer_sizes)?;
    if manifest.files.len() + 1 != manifest.layer_sizes.len() {
        return Err(Error::Corruption {
            file: path,
            message: "file list does not match layer sizes".into(),
        });
    }
    let load = |name: &str, n: usize| -> Result<Vec<f64>> {
        let file = dir.join(name);
        let bytes = fs::read(&file)?;
        if bytes.len() != n * 4 {
            return Err(Error::Corruption {
                file,
                message: format!("{} bytes, expected {}", bytes.len(), n * 4),
            });
        }
        Ok(Array::from_bytes(DType::Float32, vec![n], &bytes).to_f64())
    };
    let layers = manifest
        .layer_sizes
        .windows(2)
        .zip(&manifest.files)
        .map(|(w, [wf, bf])| {
            Ok(Layer {
                n_in: w[0],
                n_out: w[1],
                weights: load(wf, w[0] * w[1])?,
                biases: load(bf, w[1])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = MlpModel {
        layer_sizes: manifest.layer_sizes,
        layers,
        activation: manifest.activation,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_batch() -> Vec<TrainingPair> {
        (0..8)
            .map(|i| {
                let x = i as f64 / 8.0;
                TrainingPair {
                    input: vec![x, (3.0 * x).sin(), 1.0 - x * x],
                    target: vec![x * x - 0.3, (2.0 * x).cos()],
                }
            })
            .collect()
    }

    fn perturbed_loss(model: &MlpModel, batch: &[&TrainingPair], layer: usize, bias: bool, idx: usize, h: f64) -> f64 {
        let mut m = model.clone();
        let p = if bias {
            &mut m.layers[layer].biases[idx]
        } else {
            &mut m.layers[layer].weights[idx]
        };
        *p += h;
        m.loss_and_gradient(batch).unwrap().0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = MlpModel::random(&[3, 5, 4, 2], 11).unwrap();
        for l in &mut model.layers {
            for (k, b) in l.biases.iter_mut().enumerate() {
                *b = 0.1 * (k as f64 + 1.0).sin();
            }
        }
        let data = tiny_batch();
        let batch: Vec<&TrainingPair> = data.iter().collect();
        let (_, grad) = model.loss_and_gradient(&batch).unwrap();
        let h = 1e-6;
        for li in 0..model.layers.len() {
            for (bias, n) in [
                (false, model.layers[li].weights.len()),
                (true, model.layers[li].biases.len()),
            ] {
                for idx in 0..n {
                    let fd = (perturbed_loss(&model, &batch, li, bias, idx, h)
                        - perturbed_loss(&model, &batch, li, bias, idx, -h))
                        / (2.0 * h);
                    let an = if bias {
                        grad.biases[li][idx]
                    } else {
                        grad.weights[li][idx]
                    };
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                    assert!(rel < 1e-4, "layer {li} bias={bias} idx {idx}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn constant_target_converges() {
        let pairs: Vec<TrainingPair> = (0..64)
            .map(|i| TrainingPair {
                input: vec![i as f64 / 64.0, 1.0 - i as f64 / 64.0],
                target: vec![0.37],
            })
            .collect();
        let cfg = TrainConfig {
            layer_sizes: vec![2, 4, 1],
            learning_rate: 0.1,
            epochs: 400,
            batch_size: 8,
            seed: 3,
        };
        let report = mlp_train(&pairs, &cfg).unwrap();
        assert!(*report.loss_trace.last().unwrap() < 1e-6);
        let pred = mlp_infer(&report.model, &[vec![0.2, 0.8]]).unwrap();
        assert!((pred[0][0] - 0.37).abs() < 1e-3);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_batch();
        let cfg = TrainConfig {
            layer_sizes: vec![3, 6, 2],
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 3,
            seed: 9,
        };
        let a = mlp_train(&data, &cfg).unwrap();
        let b = mlp_train(&data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn zero_weights_predict_output_bias() {
        let mut model = MlpModel::zeros(&[3, 4, 2]).unwrap();
        model.layers[1].biases = vec![0.25, -1.5];
        for x in [[0.0, 1.0, 2.0], [5.0, -3.0, 0.5]] {
            assert_eq!(model.predict(&x).unwrap(), vec![0.25, -1.5]);
        }
    }

    #[test]
    fn batch_matches_single_and_repeats() {
        let model = MlpModel::random(&[3, 5, 2], 1).unwrap();
        let x = vec![0.1, -0.4, 0.9];
        let batch = mlp_infer(&model, std::slice::from_ref(&x)).unwrap();
        assert_eq!(batch, vec![model.predict(&x).unwrap()]);
        assert_eq!(mlp_infer(&model, std::slice::from_ref(&x)).unwrap(), batch);
    }

    #[test]
    fn shape_errors() {
        let model = MlpModel::random(&[3, 2], 1).unwrap();
        assert!(matches!(mlp_infer(&model, &[vec![1.0]]), Err(Error::Shape(_))));
        let bad = vec![TrainingPair {
            input: vec![1.0, 2.0],
            target: vec![0.0],
        }];
        let cfg = TrainConfig {
            layer_sizes: vec![3, 1],
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 1,
            seed: 0,
        };
        assert!(matches!(mlp_train(&bad, &cfg), Err(Error::Shape(_))));
        assert!(matches!(MlpModel::random(&[3], 0), Err(Error::Shape(_))));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let pairs: Vec<TrainingPair> = (0..16)
            .map(|i| TrainingPair {
                input: vec![i as f64 * 100.0],
                target: vec![i as f64 * 1e3],
            })
            .collect();
        let cfg = TrainConfig {
            layer_sizes: vec![1, 1],
            learning_rate: 10.0,
            epochs: 50,
            batch_size: 16,
            seed: 0,
        };
        assert!(matches!(mlp_train(&pairs, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = MlpModel::random(&[4, 3, 1], 5).unwrap();
        write_model(&model, dir.path()).unwrap();
        let back = read_model(dir.path()).unwrap();
        assert_eq!(back.layer_sizes, model.layer_sizes);
        for (a, b) in back.layers.iter().zip(&model.layers) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
    }
}
