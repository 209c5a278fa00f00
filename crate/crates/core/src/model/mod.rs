//! Set-transformer classifier: input projection, transformer encoder stack
//! without positional encodings, min/max/mean/std pooling over samples, and a
//! two-layer classification head.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};

use crate::fnsuite::NUM_CLASSES;
use crate::sampling::DesignMatrix;
use crate::tensor::{Graph, SplitRng, Stat, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Problem dimension; inputs have `d + 1` columns.
    pub d: usize,
    /// Embedding size.
    pub e: usize,
    /// Attention heads.
    pub h: usize,
    /// Encoder layers.
    pub layers: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
}

fn default_ffn_mult() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.1
}
fn default_head_hidden() -> usize {
    64
}
fn default_classes() -> usize {
    NUM_CLASSES
}

impl ModelConfig {
    /// Config with the default FFN width, dropout and head width.
    pub fn new(d: usize, e: usize, h: usize, layers: usize) -> Self {
        Self {
            d,
            e,
            h,
            layers,
            ffn_mult: default_ffn_mult(),
            dropout_p: default_dropout(),
            head_hidden: default_head_hidden(),
            n_classes: default_classes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.d == 0 {
            return fail("d must be >= 1".into());
        }
        if self.e == 0 || self.h == 0 || self.layers == 0 {
            return fail(format!(
                "e, h and layers must be >= 1 (e={}, h={}, layers={})",
                self.e, self.h, self.layers
            ));
        }
        if !self.e.is_multiple_of(self.h) {
            return fail(format!(
                "embedding size {} is not divisible by head count {}",
                self.e, self.h
            ));
        }
        if self.ffn_mult == 0 || self.head_hidden == 0 || self.n_classes < 2 {
            return fail("ffn_mult, head_hidden must be >= 1 and n_classes >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.e / self.h
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_mult * self.e
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (e, f) = (self.e, self.ffn_width());
        let mut out = vec![
            ("input_proj.weight".to_string(), vec![self.d + 1, e]),
            ("input_proj.bias".to_string(), vec![e]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("attn.wq"), vec![e, e]),
                (p("attn.bq"), vec![e]),
                (p("attn.wk"), vec![e, e]),
                (p("attn.bk"), vec![e]),
                (p("attn.wv"), vec![e, e]),
                (p("attn.bv"), vec![e]),
                (p("attn.wo"), vec![e, e]),
                (p("attn.bo"), vec![e]),
                (p("norm1.gain"), vec![e]),
                (p("norm1.bias"), vec![e]),
                (p("ffn.w1"), vec![e, f]),
                (p("ffn.b1"), vec![f]),
                (p("ffn.w2"), vec![f, e]),
                (p("ffn.b2"), vec![e]),
                (p("norm2.gain"), vec![e]),
                (p("norm2.bias"), vec![e]),
            ]);
        }
        out.extend([
            ("head.w1".to_string(), vec![4 * e, self.head_hidden]),
            ("head.b1".to_string(), vec![self.head_hidden]),
            (
                "head.w2".to_string(),
                vec![self.head_hidden, self.n_classes],
            ),
            ("head.b2".to_string(), vec![self.n_classes]),
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Offset of each parameter inside the flat list.
const INPUT_W: usize = 0;
const INPUT_B: usize = 1;
const PER_LAYER: usize = 16;

#[derive(Clone, Copy)]
struct LayerIdx(usize);

impl LayerIdx {
    fn at(self, k: usize) -> usize {
        2 + self.0 * PER_LAYER + k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransOptModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    mode: Mode,
}

/// Graph handles produced by one forward pass.
pub struct Forward {
    pub logits: Var,
    pub encoded: Var,
    pub pooled: Var,
    /// Attention node of every layer; see [`Graph::attention_probs`].
    pub attention: Vec<Var>,
}

impl TransOptModel {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains. Parameters
    /// are drawn in storage order, each row-major.
    pub fn init(config: ModelConfig, rng: &mut SplitRng) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in config.parameter_shapes() {
            let t = if name.ends_with(".gain") {
                Tensor::full(&shape, 1.0)
            } else if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let n = shape[0] * shape[1];
                Tensor::new(shape, (0..n).map(|_| rng.uniform(-limit, limit)).collect())?
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config,
            names,
            params,
            mode: Mode::Eval,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != named.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                named.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&named) {
            if en != n || es.as_slice() != t.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {n} {:?} does not match expected {en} {es:?}",
                    t.shape()
                )));
            }
        }
        let (names, params) = named.into_iter().unzip();
        Ok(Self {
            config,
            names,
            params,
            mode: Mode::Eval,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Named parameters in storage order.
    pub fn parameters(&self) -> Vec<(&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(&self.params)
            .collect()
    }

    pub fn parameter_tensors(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameter_tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    fn check_input(&self, design: &DesignMatrix) -> Result<()> {
        if design.d != self.config.d {
            return Err(ModelError::Shape(format!(
                "design has d={}, model expects d={}",
                design.d, self.config.d
            )));
        }
        if design.s == 0 {
            return Err(ModelError::Shape("design has no samples".into()));
        }
        Ok(())
    }

    fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
        Ok(g.linear(x, w, b)?)
    }

    /// Runs the encoder on an `[s, d + 1]` input already placed on `g`.
    fn encode_on(
        &self,
        g: &mut Graph,
        p: &[Var],
        input: Var,
        mode: Mode,
        rng: &mut SplitRng,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let training = mode == Mode::Train;
        let dh = cfg.head_width();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = Self::linear(g, input, p[INPUT_W], p[INPUT_B])?;
        for l in 0..cfg.layers {
            let li = LayerIdx(l);
            let q = Self::linear(g, x, p[li.at(0)], p[li.at(1)])?;
            let k = Self::linear(g, x, p[li.at(2)], p[li.at(3)])?;
            let v = Self::linear(g, x, p[li.at(4)], p[li.at(5)])?;
            let merged = g.attention(q, k, v, cfg.h, scale)?;
            attention.push(merged);
            let attn = Self::linear(g, merged, p[li.at(6)], p[li.at(7)])?;
            let attn = g.dropout(attn, cfg.dropout_p, training, rng)?;
            let res = g.add(x, attn)?;
            let x1 = g.layer_norm(res, p[li.at(8)], p[li.at(9)])?;

            let hid = Self::linear(g, x1, p[li.at(10)], p[li.at(11)])?;
            let hid = g.relu(hid);
            let hid = g.dropout(hid, cfg.dropout_p, training, rng)?;
            let ffn = Self::linear(g, hid, p[li.at(12)], p[li.at(13)])?;
            let res = g.add(x1, ffn)?;
            x = g.layer_norm(res, p[li.at(14)], p[li.at(15)])?;
        }
        Ok(x)
    }

    /// Column-wise `[min, max, mean, std]` of an `[s, e]` encoding, giving `[4e]`.
    pub fn pool_on(g: &mut Graph, encoded: Var) -> Result<Var> {
        let stats = [Stat::Min, Stat::Max, Stat::Mean, Stat::Std]
            .iter()
            .map(|s| g.reduce(encoded, *s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(g.concat(&stats, 0)?)
    }

    /// Full forward pass for one design on `g` with parameters `p` (from
    /// [`TransOptModel::bind`]). Returns `[n_classes]` logits.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        design: &DesignMatrix,
        mode: Mode,
        rng: &mut SplitRng,
    ) -> Result<Forward> {
        self.check_input(design)?;
        let input = g.constant(design.model_input());
        let mut attention = Vec::new();
        let encoded = self.encode_on(g, p, input, mode, rng, &mut attention)?;
        let pooled = Self::pool_on(g, encoded)?;
        let n = self.params.len();
        let row = g.reshape(pooled, &[1, 4 * self.config.e])?;
        let hidden = Self::linear(g, row, p[n - 4], p[n - 3])?;
        let hidden = g.relu(hidden);
        let hidden = g.dropout(hidden, self.config.dropout_p, mode == Mode::Train, rng)?;
        let logits = Self::linear(g, hidden, p[n - 2], p[n - 1])?;
        let logits = g.reshape(logits, &[self.config.n_classes])?;
        Ok(Forward {
            logits,
            encoded,
            pooled,
            attention,
        })
    }

    fn run(
        &self,
        design: &DesignMatrix,
        mode: Mode,
        rng: &mut SplitRng,
    ) -> Result<(Graph, Forward)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let fwd = self.forward(&mut g, &p, design, mode, rng)?;
        Ok((g, fwd))
    }

    /// `[s, e]` encoder output in eval mode.
    pub fn encode(&self, design: &DesignMatrix) -> Result<Tensor> {
        let (g, f) = self.run(design, Mode::Eval, &mut SplitRng::new(0))?;
        Ok(g.value(f.encoded).clone())
    }

    /// Pooled `[4e]` representation in eval mode.
    pub fn represent(&self, design: &DesignMatrix) -> Result<Tensor> {
        let (g, f) = self.run(design, Mode::Eval, &mut SplitRng::new(0))?;
        Ok(g.value(f.pooled).clone())
    }

    /// Logits in the model's current mode; `rng` drives dropout in train mode.
    pub fn classify(&self, design: &DesignMatrix, rng: &mut SplitRng) -> Result<Tensor> {
        let (g, f) = self.run(design, self.mode, rng)?;
        Ok(g.value(f.logits).clone())
    }

    /// Eval-mode logits regardless of the current mode.
    pub fn predict(&self, design: &DesignMatrix) -> Result<Tensor> {
        let (g, f) = self.run(design, Mode::Eval, &mut SplitRng::new(0))?;
        Ok(g.value(f.logits).clone())
    }

    /// Eval-mode attention probabilities, `layers × heads` matrices of `[s, s]`.
    pub fn attention_weights(&self, design: &DesignMatrix) -> Result<Vec<Tensor>> {
        let (g, f) = self.run(design, Mode::Eval, &mut SplitRng::new(0))?;
        Ok(f.attention
            .iter()
            .flat_map(|v| g.attention_probs(*v).unwrap_or_default())
            .collect())
    }
}

/// Column-wise `[min, max, mean, std]` of an `[s, e]` tensor.
pub fn pool(encoded: &Tensor) -> Result<Tensor> {
    let (s, _) = encoded.dims2("pool")?;
    if s == 0 {
        return Err(ModelError::Shape("cannot pool zero samples".into()));
    }
    let mut g = Graph::new();
    let x = g.constant(encoded.clone());
    let p = TransOptModel::pool_on(&mut g, x)?;
    Ok(g.value(p).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnsuite::{make_instance, InstanceSpec};
    use crate::sampling::{build_design, Multiplier};

    fn design(class: u32, d: usize, mult: usize) -> DesignMatrix {
        let inst = make_instance(InstanceSpec::new(class, 1, d).unwrap());
        build_design(&inst, Multiplier::custom(mult).unwrap(), 3).unwrap()
    }

    #[test]
    fn best_config_shapes() {
        let cfg = ModelConfig::new(3, 30, 1, 1);
        let m = TransOptModel::init(cfg, &mut SplitRng::new(1)).unwrap();
        assert_eq!(m.parameters()[0].1.shape(), &[4, 30]);
        let des = design(4, 3, 50);
        assert_eq!(m.encode(&des).unwrap().shape(), &[150, 30]);
        assert_eq!(m.represent(&des).unwrap().len(), 120);
        let logits = m.predict(&des).unwrap();
        assert_eq!(logits.shape(), &[24]);
        assert!(logits.data().iter().all(|v| v.is_finite()));
        assert_eq!(m.parameter_count(), 20_644);
        assert_eq!(cfg.parameter_count(), 20_644);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let err = TransOptModel::init(ModelConfig::new(3, 30, 4, 1), &mut SplitRng::new(1));
        assert!(matches!(err, Err(ModelError::Config(_))));
        let mut cfg = ModelConfig::new(3, 30, 1, 1);
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::new(3, 12, 2, 2);
        let a = TransOptModel::init(cfg, &mut SplitRng::new(5)).unwrap();
        let b = TransOptModel::init(cfg, &mut SplitRng::new(5)).unwrap();
        let c = TransOptModel::init(cfg, &mut SplitRng::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_names_unique_and_counted() {
        let m = TransOptModel::init(ModelConfig::new(3, 30, 1, 1), &mut SplitRng::new(1)).unwrap();
        let params = m.parameters();
        let mut names: Vec<&str> = params.iter().map(|(n, _)| *n).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), params.len());
        let total: usize = params.iter().map(|(_, t)| t.len()).sum();
        assert_eq!(total, m.parameter_count());
        assert!(params
            .iter()
            .filter(|(n, _)| n.ends_with("bias") || n.contains(".b"))
            .all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_sample_attention_returns_values() {
        let cfg = ModelConfig::new(2, 4, 1, 1);
        let m = TransOptModel::init(cfg, &mut SplitRng::new(2)).unwrap();
        let des = DesignMatrix::from_raw(
            vec![0.3, -1.2],
            vec![4.0],
            crate::fnsuite::ClassId::new(1).unwrap(),
            2,
        )
        .unwrap();
        let att = m.attention_weights(&des).unwrap();
        assert_eq!(att.len(), 1);
        assert_eq!(att[0].data(), &[1.0]);
    }

    #[test]
    fn eval_is_deterministic_and_train_uses_dropout() {
        let mut m =
            TransOptModel::init(ModelConfig::new(3, 8, 2, 1), &mut SplitRng::new(3)).unwrap();
        let des = design(9, 3, 10);
        let mut rng = SplitRng::new(0);
        let a = m.classify(&des, &mut rng).unwrap();
        let b = m.classify(&des, &mut rng).unwrap();
        assert_eq!(a, b);
        m.set_mode(Mode::Train);
        let c = m.classify(&des, &mut rng).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pool_hand_example() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = pool(&x).unwrap();
        let want = [1.0, 2.0, 3.0, 4.0, 2.0, 3.0, 1.0, 1.0];
        for (a, b) in p.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-11);
        }
        let c = Tensor::full(&[5, 3], 2.5);
        let p = pool(&c).unwrap();
        assert_eq!(&p.data()[..9], &[2.5; 9]);
        assert!(p.data()[9..].iter().all(|&v| v < 1e-5));
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let m = TransOptModel::init(ModelConfig::new(3, 8, 1, 1), &mut SplitRng::new(3)).unwrap();
        let des = design(1, 2, 10);
        assert!(matches!(m.predict(&des), Err(ModelError::Shape(_))));
    }
}
