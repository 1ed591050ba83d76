//! Representation network λ, linear group heads, and the two losses.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Layout, LayoutEntry, ParamVector, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Square,
    Logistic,
}

impl LossKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => LossKind::Square,
            Task::BinaryClassification => LossKind::Logistic,
        }
    }

    /// Per-sample loss of a score against a label.
    pub fn eval(self, score: f64, label: f64) -> f64 {
        match self {
            LossKind::Square => (score - label).powi(2),
            LossKind::Logistic => softplus(-label * score),
        }
    }

    /// d loss / d score.
    fn dscore(self, score: f64, label: f64) -> f64 {
        match self {
            LossKind::Square => 2.0 * (score - label),
            LossKind::Logistic => -label * sigmoid(-label * score),
        }
    }

    /// d² loss / d score².
    fn d2score(self, score: f64) -> f64 {
        match self {
            LossKind::Square => 2.0,
            LossKind::Logistic => {
                let s = sigmoid(score);
                s * (1.0 - s)
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// The representation λ: a stack of affine layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprNet {
    arch: Vec<usize>,
    activation: Activation,
    output_activation: Activation,
    params: ParamVector,
    norm_cap: Option<f64>,
}

impl ReprNet {
    /// `arch` lists widths from input to embedding. Hidden layers use
    /// `activation`; the embedding layer is linear unless changed with
    /// [`ReprNet::with_output_activation`].
    pub fn new(arch: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let layout = Arc::new(Self::layout_for(arch)?);
        let mut params = ParamVector::zeros(layout.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in layout.entries() {
            // PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
            // both weight and bias of a layer.
            let layer: usize = e.name[1..].parse().expect("layer index");
            let bound = 1.0 / (arch[layer] as f64).sqrt();
            for v in &mut params.values_mut()[e.range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            arch: arch.to_vec(),
            activation,
            output_activation: Activation::Linear,
            params,
            norm_cap: None,
        })
    }

    pub fn from_params(arch: &[usize], activation: Activation, params: ParamVector) -> Result<Self> {
        let layout = Self::layout_for(arch)?;
        if **params.layout() != layout {
            return Err(Error::Shape(format!(
                "parameter layout [{}] does not match architecture {:?}",
                params.layout(),
                arch
            )));
        }
        Ok(Self {
            arch: arch.to_vec(),
            activation,
            output_activation: Activation::Linear,
            params,
            norm_cap: None,
        })
    }

    pub fn with_output_activation(mut self, act: Activation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn with_norm_cap(mut self, cap: Option<f64>) -> Self {
        self.norm_cap = cap;
        self.enforce_cap();
        self
    }

    /// Blocks `w{i}` `[in, out]` and `b{i}` `[out]` per layer.
    pub fn layout_for(arch: &[usize]) -> Result<Layout> {
        if arch.len() < 2 {
            return Err(Error::config("model.arch", "needs an input and an embedding width"));
        }
        if let Some(i) = arch.iter().position(|&w| w == 0) {
            return Err(Error::config("model.arch", format!("width {i} is zero")));
        }
        let mut blocks = Vec::new();
        for (i, pair) in arch.windows(2).enumerate() {
            blocks.push((format!("w{i}"), vec![pair[0], pair[1]]));
            blocks.push((format!("b{i}"), vec![pair[1]]));
        }
        Ok(Layout::new(blocks))
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }
    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }
    pub fn embed_dim(&self) -> usize {
        *self.arch.last().expect("arch")
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }
    pub fn params(&self) -> &ParamVector {
        &self.params
    }
    pub fn norm_cap(&self) -> Option<f64> {
        self.norm_cap
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_layout(&params)?;
        self.params = params;
        self.enforce_cap();
        Ok(())
    }

    pub fn enforce_cap(&mut self) {
        if let Some(cap) = self.norm_cap {
            self.params.project_to_ball(cap);
        }
    }

    /// Record the forward pass onto `tape` with `leaves` standing for the
    /// parameter blocks (as from [`Tape::leaves`]).
    pub fn embed_on(&self, tape: &mut Tape, leaves: &[Var], x: Var) -> Result<Var, AutodiffError> {
        let width = tape.shape(x).get(1).copied();
        if tape.shape(x).len() != 2 || width != Some(self.input_dim()) {
            return Err(AutodiffError::Shape {
                node: Some(x.index()),
                op: "embed",
                detail: format!(
                    "input batch has shape {:?}; the network expects {} columns",
                    tape.shape(x),
                    self.input_dim()
                ),
            });
        }
        let layers = self.arch.len() - 1;
        let mut h = x;
        for i in 0..layers {
            h = tape.matmul(h, leaves[2 * i])?;
            h = tape.add_bias(h, leaves[2 * i + 1])?;
            let act = if i + 1 == layers {
                self.output_activation
            } else {
                self.activation
            };
            if act == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Embedding of a batch, `[n, embed_dim]`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leaves = tape.constants(&self.params);
        let xv = tape.constant(x.clone());
        let z = self.embed_on(&mut tape, &leaves, xv)?;
        Ok(tape.value(z).clone())
    }
}

/// A linear predictor on the embedding: `s = zᵀw + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    params: ParamVector,
    task: Task,
    norm_cap: Option<f64>,
}

impl Head {
    pub fn layout_for(embed_dim: usize) -> Layout {
        Layout::new([("weight", vec![embed_dim, 1]), ("bias", vec![1])])
    }

    pub fn zeros(embed_dim: usize, task: Task) -> Self {
        Self {
            params: ParamVector::zeros(Arc::new(Self::layout_for(embed_dim))),
            task,
            norm_cap: None,
        }
    }

    pub fn from_params(params: ParamVector, task: Task) -> Result<Self> {
        let e = params.len().saturating_sub(1);
        if params.is_empty() || **params.layout() != Self::layout_for(e) {
            return Err(Error::Shape(format!(
                "head layout [{}] is not weight [e x 1] + bias [1]",
                params.layout()
            )));
        }
        Ok(Self {
            params,
            task,
            norm_cap: None,
        })
    }

    /// Same layout and task, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            params: self.params.with_values(values)?,
            task: self.task,
            norm_cap: self.norm_cap,
        })
    }

    pub fn with_norm_cap(mut self, cap: Option<f64>) -> Self {
        self.norm_cap = cap;
        self.enforce_cap();
        self
    }

    pub fn embed_dim(&self) -> usize {
        self.params.len() - 1
    }
    pub fn task(&self) -> Task {
        self.task
    }
    pub fn loss_kind(&self) -> LossKind {
        LossKind::for_task(self.task)
    }
    pub fn params(&self) -> &ParamVector {
        &self.params
    }
    pub fn weight(&self) -> &[f64] {
        &self.params.values()[..self.embed_dim()]
    }
    pub fn bias(&self) -> f64 {
        self.params.values()[self.embed_dim()]
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_layout(&params)?;
        self.params = params;
        self.enforce_cap();
        Ok(())
    }

    pub fn enforce_cap(&mut self) {
        if let Some(cap) = self.norm_cap {
            self.params.project_to_ball(cap);
        }
    }

    /// Scores for an embedding batch.
    pub fn scores(&self, z: &Tensor) -> Result<Vec<f64>> {
        if z.shape().len() != 2 || z.cols() != self.embed_dim() {
            return Err(Error::Shape(format!(
                "embedding batch has shape {:?}; the head expects {} columns",
                z.shape(),
                self.embed_dim()
            )));
        }
        let (w, b) = (self.weight(), self.bias());
        Ok((0..z.rows())
            .map(|i| z.row(i).iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect())
    }
}

/// Mean loss of a head (`weight`, `bias` leaves) on embeddings `z` `[n, e]`
/// against labels `y` `[n, 1]`, recorded on `tape`.
pub fn group_loss_on(
    tape: &mut Tape,
    head: &[Var],
    z: Var,
    y: Var,
    loss: LossKind,
) -> Result<Var, AutodiffError> {
    let s = tape.matmul(z, head[0])?;
    let s = tape.add_bias(s, head[1])?;
    let per_sample = match loss {
        LossKind::Square => {
            let r = tape.sub(s, y)?;
            tape.square(r)?
        }
        LossKind::Logistic => tape.logistic_loss(s, y)?,
    };
    tape.mean(per_sample)
}

/// Labels as an `[n, 1]` column.
pub fn label_column(y: &[f64]) -> Tensor {
    Tensor::column(y.to_vec())
}

/// Mean loss of `head ∘ net` on a batch.
pub fn group_loss(head: &Head, net: &ReprNet, x: &Tensor, y: &[f64], loss: LossKind) -> Result<f64> {
    if y.is_empty() || x.rows() == 0 {
        return Err(Error::EmptyBatch("group_loss"));
    }
    if x.rows() != y.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    let scores = predict(head, net, x)?;
    let mut total = 0.0;
    for (i, (&s, &t)) in scores.iter().zip(y).enumerate() {
        let l = loss.eval(s, t);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        total += l;
    }
    Ok(total / y.len() as f64)
}

/// Real-valued scores (regression outputs or classification logits).
pub fn predict(head: &Head, net: &ReprNet, x: &Tensor) -> Result<Vec<f64>> {
    let z = net.embed(x)?;
    head.scores(&z)
}

/// One group's inner problem with the embedding held fixed. Derivatives are
/// in closed form, in the head's flat coordinates `(w, b)`.
#[derive(Clone, Debug)]
pub struct HeadProblem {
    z: Tensor,
    y: Vec<f64>,
    loss: LossKind,
}

impl HeadProblem {
    pub fn new(z: Tensor, y: Vec<f64>, loss: LossKind) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyBatch("head problem"));
        }
        if z.shape().len() != 2 || z.rows() != y.len() {
            return Err(Error::Shape(format!(
                "embeddings {:?} do not match {} labels",
                z.shape(),
                y.len()
            )));
        }
        Ok(Self { z, y, loss })
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn loss(&self) -> LossKind {
        self.loss
    }
    pub fn dim(&self) -> usize {
        self.z.cols() + 1
    }

    fn score(&self, i: usize, h: &[f64]) -> f64 {
        let e = self.z.cols();
        self.z.row(i).iter().zip(&h[..e]).map(|(a, b)| a * b).sum::<f64>() + h[e]
    }

    fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        self.score(i, v)
    }

    pub fn loss_value(&self, h: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        (0..self.y.len())
            .map(|i| self.loss.eval(self.score(i, h), self.y[i]))
            .sum::<f64>()
            / n
    }

    pub fn loss_and_grad(&self, h: &[f64]) -> (f64, Vec<f64>) {
        let e = self.z.cols();
        let n = self.y.len() as f64;
        let mut g = vec![0.0; e + 1];
        let mut total = 0.0;
        for i in 0..self.y.len() {
            let s = self.score(i, h);
            total += self.loss.eval(s, self.y[i]);
            let d = self.loss.dscore(s, self.y[i]) / n;
            for (gj, zj) in g.iter_mut().zip(self.z.row(i)) {
                *gj += d * zj;
            }
            g[e] += d;
        }
        (total / n, g)
    }

    /// `∇²L(h) v`.
    pub fn hvp(&self, h: &[f64], v: &[f64]) -> Vec<f64> {
        let e = self.z.cols();
        let n = self.y.len() as f64;
        let mut out = vec![0.0; e + 1];
        for i in 0..self.y.len() {
            let c = self.loss.d2score(self.score(i, h)) * self.row_dot(i, v) / n;
            for (o, zj) in out.iter_mut().zip(self.z.row(i)) {
                *o += c * zj;
            }
            out[e] += c;
        }
        out
    }

    /// Dense Hessian, row-major `(e+1)²`.
    pub fn hessian(&self, h: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let e = d - 1;
        let n = self.y.len() as f64;
        let mut hess = vec![0.0; d * d];
        let mut row = vec![1.0; d];
        for i in 0..self.y.len() {
            row[..e].copy_from_slice(self.z.row(i));
            let c = self.loss.d2score(self.score(i, h)) / n;
            for a in 0..d {
                let ca = c * row[a];
                for b in 0..d {
                    hess[a * d + b] += ca * row[b];
                }
            }
        }
        hess
    }
}

const CHECKPOINT_MAGIC: &str = "# fairpath params v1";

/// Write `params` as a text header line followed by little-endian `f64`s.
///
/// Header: `# fairpath params v1 len=<n> layout=<name>:[<d0>x<d1>]@<offset>,...`
pub fn write_checkpoint(path: &Path, params: &ParamVector) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * params.len());
    writeln!(
        buf,
        "{CHECKPOINT_MAGIC} len={} layout={}",
        params.len(),
        params.layout()
    )
    .expect("write to vec");
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ParamVector> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::Data(format!("{}: {why}", path.display()));
    let rest = header
        .trim_end()
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| bad("missing checkpoint header"))?;
    let mut len = None;
    let mut layout_spec = None;
    for field in rest.split_whitespace() {
        if let Some(v) = field.strip_prefix("len=") {
            len = Some(v.parse::<usize>().map_err(|_| bad("bad len"))?);
        } else if let Some(v) = field.strip_prefix("layout=") {
            layout_spec = Some(v.to_string());
        }
    }
    let len = len.ok_or_else(|| bad("header lacks len="))?;
    let layout = parse_layout(layout_spec.as_deref().unwrap_or("")).map_err(|e| bad(&e))?;
    if layout.len() != len {
        return Err(bad("layout extent disagrees with len"));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * len {
        return Err(bad(&format!("expected {} payload bytes, found {}", 8 * len, bytes.len())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ParamVector::new(Arc::new(layout), values)?)
}

fn parse_layout(spec: &str) -> std::result::Result<Layout, String> {
    let mut entries = Vec::new();
    for item in spec.split(',').filter(|s| !s.is_empty()) {
        let (name, rest) = item.split_once(":[").ok_or(format!("bad entry `{item}`"))?;
        let (dims, offset) = rest.split_once("]@").ok_or(format!("bad entry `{item}`"))?;
        let shape = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split('x')
                .map(|d| d.parse::<usize>().map_err(|_| format!("bad dim in `{item}`")))
                .collect::<std::result::Result<_, _>>()?
        };
        let offset = offset.parse().map_err(|_| format!("bad offset in `{item}`"))?;
        entries.push(LayoutEntry {
            name: name.to_string(),
            shape,
            offset,
        });
    }
    Layout::from_entries(entries).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{hvp, value_and_grad};

    fn batch(seed: u64, n: usize, d: usize) -> (Tensor, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        (x, y)
    }

    /// Straight-line evaluation of a ReLU MLP with a linear output layer.
    fn hand_forward(net: &ReprNet, x: &[f64]) -> Vec<f64> {
        let p = net.params();
        let mut h = x.to_vec();
        let layers = net.arch().len() - 1;
        for l in 0..layers {
            let (din, dout) = (net.arch()[l], net.arch()[l + 1]);
            let w = p.block(&format!("w{l}")).unwrap();
            let b = p.block(&format!("b{l}")).unwrap();
            let mut out = vec![0.0; dout];
            for j in 0..dout {
                let mut acc = b.data()[j];
                for i in 0..din {
                    acc += h[i] * w.data()[i * dout + j];
                }
                out[j] = if l + 1 < layers { acc.max(0.0) } else { acc };
            }
            h = out;
        }
        h
    }

    #[test]
    fn param_count_matches_arch() {
        let net = ReprNet::new(&[5, 7, 3], Activation::Relu, 0).unwrap();
        assert_eq!(net.params().len(), 5 * 7 + 7 + 7 * 3 + 3);
        assert!(ReprNet::new(&[5], Activation::Relu, 0).is_err());
        assert!(ReprNet::new(&[5, 0], Activation::Relu, 0).is_err());
    }

    #[test]
    fn identity_net_embeds_input() {
        let layout = Arc::new(ReprNet::layout_for(&[2, 2]).unwrap());
        let p = ParamVector::new(layout, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let net = ReprNet::from_params(&[2, 2], Activation::Linear, p).unwrap();
        let x = Tensor::new(vec![2, 2], vec![0.3, -1.0, 2.0, 4.0]).unwrap();
        assert_eq!(net.embed(&x).unwrap(), x);

        let head = Head::from_params(
            ParamVector::new(Arc::new(Head::layout_for(2)), vec![1.0, 0.0, 0.0]).unwrap(),
            Task::Regression,
        )
        .unwrap();
        assert_eq!(predict(&head, &net, &x).unwrap(), vec![0.3, 2.0]);
    }

    #[test]
    fn zero_weights_embed_bias() {
        let layout = Arc::new(ReprNet::layout_for(&[3, 2]).unwrap());
        let mut vals = vec![0.0; 8];
        vals[6] = 1.5;
        vals[7] = -0.5;
        let net = ReprNet::from_params(&[3, 2], Activation::Relu, ParamVector::new(layout, vals).unwrap()).unwrap();
        let z = net.embed(&Tensor::full(&[4, 3], 9.0)).unwrap();
        for i in 0..4 {
            assert_eq!(z.row(i), &[1.5, -0.5]);
        }
    }

    #[test]
    fn seeded_relu_net_matches_hand_evaluation() {
        let net = ReprNet::new(&[2, 4, 3], Activation::Relu, 0).unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap();
        let z = net.embed(&x).unwrap();
        let want = hand_forward(&net, &[0.5, -0.5]);
        for (a, b) in z.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        let (xb, _) = batch(4, 6, 2);
        let zb = net.embed(&xb).unwrap();
        for i in 0..6 {
            let want = hand_forward(&net, xb.row(i));
            for (a, b) in zb.row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let net = ReprNet::new(&[3, 2], Activation::Relu, 0).unwrap();
        assert!(matches!(
            net.embed(&Tensor::zeros(&[2, 4])),
            Err(Error::Autodiff(AutodiffError::Shape { op: "embed", .. }))
        ));
    }

    #[test]
    fn loss_special_values() {
        let net = ReprNet::new(&[2, 3], Activation::Linear, 1).unwrap();
        let (x, _) = batch(0, 5, 2);
        let head = Head::zeros(3, Task::BinaryClassification);
        let y = vec![1.0, -1.0, 1.0, 1.0, -1.0];
        let l = group_loss(&head, &net, &x, &y, LossKind::Logistic).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let reg = Head::zeros(3, Task::Regression);
        assert_eq!(group_loss(&reg, &net, &x, &[0.0; 5], LossKind::Square).unwrap(), 0.0);
        assert_eq!(predict(&reg, &net, &x).unwrap(), vec![0.0; 5]);
        assert!(matches!(
            group_loss(&reg, &net, &Tensor::zeros(&[0, 2]), &[], LossKind::Square),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn non_finite_loss_names_sample() {
        let net = ReprNet::new(&[1, 1], Activation::Linear, 1).unwrap();
        let x = Tensor::new(vec![3, 1], vec![0.0, 0.0, 0.0]).unwrap();
        let head = Head::zeros(1, Task::Regression);
        let err = group_loss(&head, &net, &x, &[0.0, 0.0, f64::INFINITY], LossKind::Square).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { sample: 2 }));
    }

    #[test]
    fn taped_loss_matches_scalar_loop() {
        for loss in [LossKind::Square, LossKind::Logistic] {
            let net = ReprNet::new(&[3, 5, 2], Activation::Relu, 7).unwrap();
            let (x, mut y) = batch(8, 9, 3);
            if loss == LossKind::Logistic {
                y.iter_mut().for_each(|v| *v = if *v > 0.0 { 1.0 } else { -1.0 });
            }
            let head = Head::from_params(
                ParamVector::new(Arc::new(Head::layout_for(2)), vec![0.4, -1.2, 0.3]).unwrap(),
                Task::Regression,
            )
            .unwrap();

            let mut tape = Tape::new();
            let nl = tape.constants(net.params());
            let hl = tape.constants(head.params());
            let xv = tape.constant(x.clone());
            let yv = tape.constant(label_column(&y));
            let z = net.embed_on(&mut tape, &nl, xv).unwrap();
            let l = group_loss_on(&mut tape, &hl, z, yv, loss).unwrap();

            let mut want = 0.0;
            for i in 0..9 {
                let z = hand_forward(&net, x.row(i));
                let s = z[0] * 0.4 - 1.2 * z[1] + 0.3;
                want += match loss {
                    LossKind::Square => (s - y[i]).powi(2),
                    LossKind::Logistic => (1.0 + (-y[i] * s).exp()).ln(),
                };
            }
            want /= 9.0;
            assert!((tape.scalar(l) - want).abs() < 1e-12);
            assert!((group_loss(&head, &net, &x, &y, loss).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_head_derivatives_match_autodiff() {
        for loss in [LossKind::Square, LossKind::Logistic] {
            let (z, mut y) = batch(11, 12, 4);
            if loss == LossKind::Logistic {
                y.iter_mut().for_each(|v| *v = v.signum());
            }
            let prob = HeadProblem::new(z.clone(), y.clone(), loss).unwrap();
            let head = Head::zeros(4, Task::Regression)
                .with_values(vec![0.1, -0.3, 0.5, 0.2, -0.1])
                .unwrap();
            let f = |t: &mut Tape, l: &[Var]| {
                let zv = t.constant(z.clone());
                let yv = t.constant(label_column(&y));
                group_loss_on(t, l, zv, yv, loss)
            };
            let (lv, g) = value_and_grad(head.params(), f).unwrap();
            let (la, ga) = prob.loss_and_grad(head.params().values());
            assert!((lv - la).abs() < 1e-13);
            for (a, b) in g.values().iter().zip(&ga) {
                assert!((a - b).abs() < 1e-13);
            }
            let v = head.params().with_values(vec![1.0, 0.5, -0.5, 2.0, 0.3]).unwrap();
            let hv = hvp(head.params(), &v, f).unwrap();
            let ha = prob.hvp(head.params().values(), v.values());
            let dense = prob.hessian(head.params().values());
            for i in 0..5 {
                assert!((hv.values()[i] - ha[i]).abs() < 1e-12);
                let row: f64 = (0..5).map(|j| dense[i * 5 + j] * v.values()[j]).sum();
                assert!((row - ha[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn square_loss_is_convex_in_head() {
        let (z, y) = batch(2, 20, 3);
        let prob = HeadProblem::new(z, y, LossKind::Square).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            assert!(prob.loss_value(&mid) <= 0.5 * (prob.loss_value(&a) + prob.loss_value(&b)) + 1e-10);
        }
    }

    #[test]
    fn norm_cap_projects() {
        let net = ReprNet::new(&[4, 8, 2], Activation::Relu, 3).unwrap().with_norm_cap(Some(0.5));
        assert!(net.params().norm() <= 0.5 + 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lambda.bin");
        let net = ReprNet::new(&[3, 4, 2], Activation::Relu, 9).unwrap();
        write_checkpoint(&path, net.params()).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(&back, net.params());
        let text = std::fs::read(&path).unwrap();
        let header = text.split(|&b| b == b'\n').next().unwrap();
        assert_eq!(
            std::str::from_utf8(header).unwrap(),
            "# fairpath params v1 len=26 layout=w0:[3x4]@0,b0:[4]@12,w1:[4x2]@16,b1:[2]@24"
        );
    }
}
