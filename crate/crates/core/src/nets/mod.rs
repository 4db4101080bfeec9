//! Encoder, classifier, label-conditioned decoder and the FiLM conditioning
//! layers, bundled as an [`OpenSetModel`].
//!
//! The decoder sees `gamma(l) * z + beta(l)`, where `l` is the +/-1 label
//! condition vector of a class hypothesis and `gamma`, `beta` are single
//! affine maps from `k` to the latent width.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::evt::ThresholdModel;
use crate::tensor::kernels::matmul;
use crate::tensor::{softmax_rows, Activation, Gradients, Tape, Tensor, Var};

/// Layer widths and activations of one fully connected sub-network.
///
/// `hidden` follows every layer but the last; `output` (if any) follows the
/// last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDef {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Option<Activation>,
}

impl MlpDef {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Option<Activation>) -> Self {
        Self { widths, hidden, output }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Contract(format!("{name} needs at least an input and an output width")));
        }
        if self.widths.contains(&0) {
            return Err(Error::Contract(format!("{name} has a zero width")));
        }
        Ok(())
    }
}

/// Architecture of the whole model. The two FiLM layers are implied:
/// `k -> latent_dim`, one affine map each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDef {
    pub input_dim: usize,
    pub k: usize,
    pub latent_dim: usize,
    pub encoder: MlpDef,
    pub classifier: MlpDef,
    pub decoder: MlpDef,
}

impl NetworkDef {
    /// Sigmoid nets for 2-D toy data: `2-2-5` encoder, `5-5-k` classifier,
    /// `5-5-2` decoder with `tanh` output.
    pub fn toy(k: usize) -> Self {
        Self {
            input_dim: 2,
            k,
            latent_dim: 5,
            encoder: MlpDef::new(vec![2, 2, 5], Activation::Sigmoid, Some(Activation::Sigmoid)),
            classifier: MlpDef::new(vec![5, 5, k], Activation::Sigmoid, None),
            decoder: MlpDef::new(vec![5, 5, 2], Activation::Sigmoid, Some(Activation::Tanh)),
        }
    }

    /// Symmetric fully connected nets: the encoder runs through `hidden` to
    /// `latent_dim`, the decoder mirrors it, the classifier is one hidden
    /// layer of `latent_dim` units.
    pub fn mlp(input_dim: usize, k: usize, hidden: &[usize], latent_dim: usize, activation: Activation) -> Self {
        let mut enc = vec![input_dim];
        enc.extend_from_slice(hidden);
        enc.push(latent_dim);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        Self {
            input_dim,
            k,
            latent_dim,
            encoder: MlpDef::new(enc, activation, Some(activation)),
            classifier: MlpDef::new(vec![latent_dim, latent_dim, k], activation, None),
            decoder: MlpDef::new(dec, activation, Some(Activation::Tanh)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.latent_dim == 0 || self.input_dim == 0 {
            return Err(Error::Contract("k, latent_dim and input_dim must be positive".into()));
        }
        self.encoder.validate("encoder")?;
        self.classifier.validate("classifier")?;
        self.decoder.validate("decoder")?;
        let checks = [
            ("encoder input", self.encoder.input_width(), self.input_dim),
            ("encoder output", self.encoder.output_width(), self.latent_dim),
            ("classifier input", self.classifier.input_width(), self.latent_dim),
            ("classifier output", self.classifier.output_width(), self.k),
            ("decoder input", self.decoder.input_width(), self.latent_dim),
            ("decoder output", self.decoder.output_width(), self.input_dim),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::Contract(format!("{what} width {got}, expected {want}")));
            }
        }
        Ok(())
    }
}

/// One affine layer; `weight` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, weights then bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        let w = draw(fan_in * fan_out);
        let b = draw(fan_out);
        Self {
            weight: Tensor::param(vec![fan_in, fan_out], w).expect("positive widths"),
            bias: Tensor::param(vec![fan_out], b).expect("positive widths"),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Same arithmetic as [`Tape::affine`], without recording.
    fn eval(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (d_in, d_out) = (self.fan_in(), self.fan_out());
        let mut out = matmul(x, self.weight.data(), rows, d_in, d_out);
        for row in out.chunks_exact_mut(d_out) {
            for (o, &b) in row.iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        out
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> (Var, Var) {
        if trainable {
            (tape.param(&self.weight), tape.param(&self.bias))
        } else {
            (tape.constant(&self.weight), tape.constant(&self.bias))
        }
    }
}

/// Tape handles of an [`Mlp`]'s parameters, layer by layer.
#[derive(Debug, Clone)]
pub struct BoundMlp(Vec<(Var, Var)>);

/// A stack of [`Dense`] layers following an [`MlpDef`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub def: MlpDef,
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn init(def: MlpDef, rng: &mut impl Rng) -> Self {
        let layers = def.widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { def, layers }
    }

    fn activation_after(&self, layer: usize) -> Option<Activation> {
        if layer + 1 == self.layers.len() {
            self.def.output
        } else {
            Some(self.def.hidden)
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        BoundMlp(self.layers.iter().map(|l| l.bind(tape, trainable)).collect())
    }

    pub fn apply(&self, tape: &mut Tape, bound: &BoundMlp, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in bound.0.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            if let Some(a) = self.activation_after(i) {
                h = tape.activation(h, a);
            }
        }
        Ok(h)
    }

    /// Forward pass without a tape; bit-identical to [`Mlp::apply`].
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let rows = check_width(x, self.def.input_width(), "network input")?;
        let mut h = x.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.eval(&h, rows);
            if let Some(a) = self.activation_after(i) {
                h.iter_mut().for_each(|v| *v = a.apply(*v));
            }
        }
        Tensor::new(vec![rows, self.def.output_width()], h)
    }

    pub fn write_grads(&mut self, bound: &BoundMlp, grads: &Gradients) {
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&bound.0) {
            grads.write_to(w, &mut layer.weight);
            grads.write_to(b, &mut layer.bias);
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

fn check_width(x: &Tensor, width: usize, what: &str) -> Result<usize> {
    match x.shape() {
        [rows, w] if *w == width => Ok(*rows),
        s => Err(Error::Dimension(format!("{what} must be N x {width}, got {s:?}"))),
    }
}

/// The +/-1 vector selecting class hypothesis `class_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelConditionVector {
    values: Vec<f64>,
    class_index: usize,
}

impl LabelConditionVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }
}

/// `+1` at position `j`, `-1` elsewhere.
pub fn condition_vector(j: usize, k: usize) -> Result<LabelConditionVector> {
    if j >= k {
        return Err(Error::Index(format!("class {j} out of range for k = {k}")));
    }
    let values = (0..k).map(|i| if i == j { 1.0 } else { -1.0 }).collect();
    Ok(LabelConditionVector { values, class_index: j })
}

/// Stacked condition vectors, one row per label.
pub fn condition_matrix(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(labels.len() * k);
    for &l in labels {
        data.extend_from_slice(condition_vector(l, k)?.values());
    }
    Tensor::new(vec![labels.len(), k], data)
}

/// Scale and shift produced by the conditioning layers for one label.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FilmParams {
    /// `gamma * z + beta`, element-wise.
    pub fn modulate(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.gamma.len() || z.len() != self.beta.len() {
            return Err(Error::Dimension(format!(
                "latent width {} vs FiLM width {}",
                z.len(),
                self.gamma.len()
            )));
        }
        Ok(z.iter()
            .zip(&self.gamma)
            .zip(&self.beta)
            .map(|((z, g), b)| g * z + b)
            .collect())
    }
}

/// The two conditioning layers `H_gamma`, `H_beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Film {
    pub gamma: Dense,
    pub beta: Dense,
}

/// Tape handles of a [`Film`].
#[derive(Debug, Clone, Copy)]
pub struct BoundFilm {
    gamma: (Var, Var),
    beta: (Var, Var),
}

impl Film {
    pub fn params_for(&self, l: &LabelConditionVector) -> Result<FilmParams> {
        if l.values.len() != self.gamma.fan_in() {
            return Err(Error::Dimension(format!(
                "condition vector of length {} for k = {}",
                l.values.len(),
                self.gamma.fan_in()
            )));
        }
        Ok(FilmParams {
            gamma: self.gamma.eval(&l.values, 1),
            beta: self.beta.eval(&l.values, 1),
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundFilm {
        BoundFilm {
            gamma: self.gamma.bind(tape, trainable),
            beta: self.beta.bind(tape, trainable),
        }
    }

    /// Records `H_gamma(cond) * z + H_beta(cond)` for a batch.
    pub fn apply(&self, tape: &mut Tape, bound: &BoundFilm, z: Var, cond: Var) -> Result<Var> {
        let g = tape.affine(cond, bound.gamma.0, bound.gamma.1)?;
        let b = tape.affine(cond, bound.beta.0, bound.beta.1)?;
        let scaled = tape.mul(g, z)?;
        tape.add(scaled, b)
    }

    /// Batch modulation without a tape; bit-identical to [`Film::apply`].
    pub fn eval(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let rows = check_width(cond, self.gamma.fan_in(), "condition matrix")?;
        let z_rows = check_width(z, self.gamma.fan_out(), "latent")?;
        if rows != z_rows {
            return Err(Error::Dimension(format!("{z_rows} latents for {rows} condition rows")));
        }
        let g = self.gamma.eval(cond.data(), rows);
        let b = self.beta.eval(cond.data(), rows);
        let out = z
            .data()
            .iter()
            .zip(g.iter().zip(&b))
            .map(|(z, (g, b))| g * z + b)
            .collect();
        Tensor::new(z.shape().to_vec(), out)
    }

    pub fn write_grads(&mut self, bound: &BoundFilm, grads: &Gradients) {
        grads.write_to(bound.gamma.0, &mut self.gamma.weight);
        grads.write_to(bound.gamma.1, &mut self.gamma.bias);
        grads.write_to(bound.beta.0, &mut self.beta.weight);
        grads.write_to(bound.beta.1, &mut self.beta.bias);
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.gamma.weight, &self.gamma.bias, &self.beta.weight, &self.beta.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.gamma.weight,
            &mut self.gamma.bias,
            &mut self.beta.weight,
            &mut self.beta.bias,
        ]
    }
}

/// `z_l = gamma(l) * z + beta(l)`.
pub fn film_modulate(z: &[f64], l: &LabelConditionVector, film: &Film) -> Result<Vec<f64>> {
    film.params_for(l)?.modulate(z)
}

/// Closed-set view of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedSetOutput {
    pub z: Tensor,
    pub probs: Tensor,
    pub y_pred: Vec<usize>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Parameters of all sub-networks plus the optional fitted threshold and
/// the split the model was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetModel {
    pub def: NetworkDef,
    pub encoder: Mlp,
    pub classifier: Mlp,
    pub decoder: Mlp,
    pub film: Film,
    pub threshold: Option<ThresholdModel>,
    pub split: Option<SplitSpec>,
}

impl OpenSetModel {
    /// Fresh model; initialization order is encoder, classifier, decoder,
    /// `H_gamma`, `H_beta`.
    pub fn new(def: NetworkDef, seed: u64) -> Result<Self> {
        def.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::init(def.encoder.clone(), &mut rng);
        let classifier = Mlp::init(def.classifier.clone(), &mut rng);
        let decoder = Mlp::init(def.decoder.clone(), &mut rng);
        let film = Film {
            gamma: Dense::init(def.k, def.latent_dim, &mut rng),
            beta: Dense::init(def.k, def.latent_dim, &mut rng),
        };
        Ok(Self {
            def,
            encoder,
            classifier,
            decoder,
            film,
            threshold: None,
            split: None,
        })
    }

    pub fn k(&self) -> usize {
        self.def.k
    }

    pub fn input_dim(&self) -> usize {
        self.def.input_dim
    }

    pub fn threshold(&self) -> Result<&ThresholdModel> {
        self.threshold.as_ref().ok_or(Error::ThresholdMissing)
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.eval(x)
    }

    /// Latents, class probabilities and argmax labels.
    pub fn forward_closed(&self, x: &Tensor) -> Result<ClosedSetOutput> {
        let z = self.encode(x)?;
        let logits = self.classifier.eval(&z)?;
        let probs = Tensor::new(logits.shape().to_vec(), softmax_rows(logits.data(), self.k()))?;
        let y_pred = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
        Ok(ClosedSetOutput { z, probs, y_pred })
    }

    pub fn film_params(&self, j: usize) -> Result<FilmParams> {
        self.film.params_for(&condition_vector(j, self.k())?)
    }

    /// Decoder output for latents `z` under the given class hypotheses.
    pub fn decode_conditioned(&self, z: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let cond = condition_matrix(labels, self.k())?;
        let zl = self.film.eval(z, &cond)?;
        self.decoder.eval(&zl)
    }

    /// `G(H_gamma(l) * F(x) + H_beta(l))` row by row.
    pub fn reconstruct_conditioned(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let z = self.encode(x)?;
        self.decode_conditioned(&z, labels)
    }

    /// Parameter tensors with their checkpoint names, in storage order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, mlp) in [("encoder", &self.encoder), ("classifier", &self.classifier), ("decoder", &self.decoder)] {
            for (i, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), &layer.weight));
                out.push((format!("{prefix}.{i}.bias"), &layer.bias));
            }
        }
        for (prefix, layer) in [("film_gamma", &self.film.gamma), ("film_beta", &self.film.beta)] {
            out.push((format!("{prefix}.weight"), &layer.weight));
            out.push((format!("{prefix}.bias"), &layer.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.extend(self.classifier.params_mut());
        out.extend(self.decoder.params_mut());
        out.extend(self.film.params_mut());
        out
    }
}

/// Per-row L1 distance between two equally shaped batches.
pub fn per_sample_l1(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok((0..a.rows())
        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_vectors() {
        assert_eq!(condition_vector(2, 4).unwrap().values(), &[-1.0, -1.0, 1.0, -1.0]);
        assert_eq!(condition_vector(0, 1).unwrap().values(), &[1.0]);
        assert!(matches!(condition_vector(4, 4), Err(Error::Index(_))));
    }

    #[test]
    fn film_arithmetic() {
        let p = FilmParams { gamma: vec![0.5, 2.0], beta: vec![1.0, -1.0] };
        assert_eq!(p.modulate(&[2.0, 3.0]).unwrap(), vec![2.0, 5.0]);
        let id = FilmParams { gamma: vec![1.0; 2], beta: vec![0.0; 2] };
        assert_eq!(id.modulate(&[0.1, -7.3]).unwrap(), vec![0.1, -7.3]);
        let zero = FilmParams { gamma: vec![0.0; 2], beta: vec![4.0, 5.0] };
        assert_eq!(zero.modulate(&[0.1, -7.3]).unwrap(), vec![4.0, 5.0]);
        assert!(matches!(p.modulate(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.3, 0.3, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4]), 1);
    }

    #[test]
    fn def_validation() {
        assert!(NetworkDef::toy(2).validate().is_ok());
        let mut bad = NetworkDef::toy(2);
        bad.classifier.widths = vec![5, 5, 3];
        assert!(matches!(bad.validate(), Err(Error::Contract(_))));
        let mlp = NetworkDef::mlp(784, 6, &[128], 32, Activation::Sigmoid);
        assert!(mlp.validate().is_ok());
        assert_eq!(mlp.decoder.widths, vec![32, 128, 784]);
    }

    #[test]
    fn closed_forward_shapes() {
        let m = OpenSetModel::new(NetworkDef::toy(3), 1).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2], vec![-0.5, 0.9]]).unwrap();
        let out = m.forward_closed(&x).unwrap();
        assert_eq!(out.z.shape(), &[2, 5]);
        for i in 0..2 {
            assert!((out.probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let bad = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        assert!(matches!(m.forward_closed(&bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn tape_and_eval_paths_agree_bitwise() {
        let m = OpenSetModel::new(NetworkDef::toy(3), 4).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2], vec![-0.5, 0.9], vec![0.7, -0.3]]).unwrap();
        let labels = [2, 0, 1];
        let direct = m.reconstruct_conditioned(&x, &labels).unwrap();

        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let enc = m.encoder.bind(&mut tape, false);
        let film = m.film.bind(&mut tape, true);
        let dec = m.decoder.bind(&mut tape, true);
        let z = m.encoder.apply(&mut tape, &enc, xv).unwrap();
        let cond = tape.constant(&condition_matrix(&labels, 3).unwrap());
        let zl = m.film.apply(&mut tape, &film, z, cond).unwrap();
        let out = m.decoder.apply(&mut tape, &dec, zl).unwrap();
        assert_eq!(tape.value(out), direct.data());
    }

    #[test]
    fn reconstruction_is_finite_and_repeatable() {
        let m = OpenSetModel::new(NetworkDef::toy(2), 9).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let a = m.reconstruct_conditioned(&x, &[1]).unwrap();
        let b = m.reconstruct_conditioned(&x, &[1]).unwrap();
        assert_eq!(a.shape(), &[1, 2]);
        assert!(a.data().iter().all(|v| v.is_finite()));
        assert_eq!(a, b);
        assert!(matches!(m.reconstruct_conditioned(&x, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn missing_threshold_is_reported() {
        let m = OpenSetModel::new(NetworkDef::toy(2), 0).unwrap();
        assert!(matches!(m.threshold(), Err(Error::ThresholdMissing)));
    }
}
