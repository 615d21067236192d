//! The two modality branches.
//!
//! Each branch is `input → fc1 → ReLU → fc2 → softmax`. The post-ReLU fc1
//! activation and the fc2 logits are the two points where alignment
//! gradients are injected during the backward pass.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{axpy, Matrix, Rng};

pub const DEFAULT_HIDDEN: usize = 1000;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `d_out × d_in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("non-finite layer parameter".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_out, d_in),
            bias: vec![0.0; d_out],
        }
    }

    /// Zero bias, weights uniform in `±sqrt(6 / (d_in + d_out))`.
    pub fn glorot(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        Self {
            weight: Matrix::from_fn(d_out, d_in, |_, _| rng.gen_range(-limit..limit)),
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    /// `X Wᵀ + b` for a batch `X` of `n × d_in`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul_nt(&self.weight)?;
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchNet {
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

/// Gradients share the parameter layout.
pub type BranchGrads = BranchNet;

impl BranchNet {
    pub fn new(fc1: DenseLayer, fc2: DenseLayer) -> Result<Self> {
        if fc1.d_out() != fc2.d_in() {
            return Err(Error::Shape(format!(
                "fc1 emits {} features, fc2 expects {}",
                fc1.d_out(),
                fc2.d_in()
            )));
        }
        Ok(Self { fc1, fc2 })
    }

    pub fn init(d_in: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        Self {
            fc1: DenseLayer::glorot(d_in, hidden, rng),
            fc2: DenseLayer::glorot(hidden, classes, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc1: DenseLayer::zeros(self.fc1.d_in(), self.fc1.d_out()),
            fc2: DenseLayer::zeros(self.fc2.d_in(), self.fc2.d_out()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.d_in()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1.d_out()
    }

    pub fn classes(&self) -> usize {
        self.fc2.d_out()
    }

    /// Parameter blocks in the fixed order `W¹, b¹, W², b²`.
    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            self.fc1.weight.as_slice(),
            &self.fc1.bias,
            self.fc2.weight.as_slice(),
            &self.fc2.bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.fc1.weight.as_mut_slice(),
            &mut self.fc1.bias,
            self.fc2.weight.as_mut_slice(),
            &mut self.fc2.bias,
        ]
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "branch expects {} input features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let pre_hidden = self.fc1.forward(x)?;
        let hidden = relu(&pre_hidden);
        let logits = self.fc2.forward(&hidden)?;
        let probs = softmax(&logits);
        Ok(ForwardCache {
            input: x.clone(),
            pre_hidden,
            hidden,
            logits,
            probs,
        })
    }
}

/// Both branches. `image` maps image features, `text` maps TF-IDF vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub image: BranchNet,
    pub text: BranchNet,
}

pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn new(image: BranchNet, text: BranchNet) -> Result<Self> {
        if image.classes() != text.classes() {
            return Err(Error::Shape(format!(
                "image branch has {} classes, text branch {}",
                image.classes(),
                text.classes()
            )));
        }
        Ok(Self { image, text })
    }

    pub fn init(d_img: usize, d_txt: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        let image = BranchNet::init(d_img, hidden, classes, rng);
        let text = BranchNet::init(d_txt, hidden, classes, rng);
        Self { image, text }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            image: self.image.zeros_like(),
            text: self.text.zeros_like(),
        }
    }

    pub fn classes(&self) -> usize {
        self.image.classes()
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Matrix,
    pub pre_hidden: Matrix,
    /// Post-ReLU fc1 activation.
    pub hidden: Matrix,
    /// fc2 output, pre-softmax.
    pub logits: Matrix,
    pub probs: Matrix,
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Row-wise softmax with max subtraction. Entries that underflow are
/// raised to the smallest positive normal `f64`.
pub fn softmax(o: &Matrix) -> Matrix {
    let mut out = o.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut()
            .for_each(|v| *v = (*v / sum).max(f64::MIN_POSITIVE));
    }
    out
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            rows
        )));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label { label, classes });
    }
    Ok(())
}

/// Mean of `−ln S[i, yᵢ]`, probabilities floored at 1e-12.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, probs.rows(), probs.cols())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradients of `cross_entropy + injected terms` for one branch.
///
/// `grad_hidden` and `grad_logits` are upstream gradients of the alignment
/// terms with respect to the post-ReLU hidden activation and the logits;
/// they are added to the cross-entropy gradient at those points.
pub fn backward(
    branch: &BranchNet,
    cache: &ForwardCache,
    labels: &[usize],
    grad_hidden: &Matrix,
    grad_logits: &Matrix,
) -> Result<BranchGrads> {
    let n = cache.input.rows();
    check_labels(labels, n, branch.classes())?;
    if grad_hidden.shape() != cache.hidden.shape() || grad_logits.shape() != cache.logits.shape() {
        return Err(Error::Shape(format!(
            "injected gradients {:?}/{:?} for activations {:?}/{:?}",
            grad_hidden.shape(),
            grad_logits.shape(),
            cache.hidden.shape(),
            cache.logits.shape()
        )));
    }

    // softmax + mean cross-entropy: (S − onehot) / n
    let mut d_logits = cache.probs.scale(1.0 / n as f64);
    for (i, &y) in labels.iter().enumerate() {
        let v = d_logits.get(i, y);
        d_logits.set(i, y, v - 1.0 / n as f64);
    }
    d_logits.add_scaled_assign(1.0, grad_logits)?;

    let fc2 = DenseLayer {
        weight: d_logits.matmul_tn(&cache.hidden)?,
        bias: column_sums(&d_logits),
    };

    let mut d_hidden = d_logits.matmul(&branch.fc2.weight)?;
    d_hidden.add_scaled_assign(1.0, grad_hidden)?;
    for (g, &pre) in d_hidden
        .as_mut_slice()
        .iter_mut()
        .zip(cache.pre_hidden.as_slice())
    {
        if pre <= 0.0 {
            *g = 0.0;
        }
    }

    let fc1 = DenseLayer {
        weight: d_hidden.matmul_tn(&cache.input)?,
        bias: column_sums(&d_hidden),
    };
    Ok(BranchNet { fc1, fc2 })
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in m.row_iter() {
        axpy(1.0, r, &mut sums);
    }
    sums
}

const MODEL_MAGIC: &str = "crossalign-model";
const MODEL_FORMAT_VERSION: u32 = 1;

impl ModelParams {
    /// Writes the textual model format:
    ///
    /// ```text
    /// crossalign-model
    /// format_version 1
    /// classes <K>
    /// branch image
    /// layer fc1 <d_out> <d_in>
    /// <d_out lines of d_in weights>
    /// <one line of d_out biases>
    /// layer fc2 <d_out> <d_in>
    /// ...
    /// branch text
    /// ...
    /// ```
    ///
    /// Values use Rust's shortest round-trip `f64` formatting, so reading
    /// back reproduces every parameter bit for bit.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MODEL_MAGIC}")?;
        writeln!(w, "format_version {MODEL_FORMAT_VERSION}")?;
        writeln!(w, "classes {}", self.classes())?;
        for (name, branch) in [("image", &self.image), ("text", &self.text)] {
            writeln!(w, "branch {name}")?;
            for (lname, layer) in [("fc1", &branch.fc1), ("fc2", &branch.fc2)] {
                writeln!(w, "layer {lname} {} {}", layer.d_out(), layer.d_in())?;
                for row in layer.weight.row_iter() {
                    write_values(&mut w, row)?;
                }
                write_values(&mut w, &layer.bias)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = LineReader {
            inner: r.lines(),
            line_no: 0,
        };
        let magic = lines.next_line()?;
        if magic.trim() != MODEL_MAGIC {
            return Err(lines.err("not a model file"));
        }
        let version: u32 = lines.keyed("format_version")?;
        if version != MODEL_FORMAT_VERSION {
            return Err(lines.err(format!("unsupported format version {version}")));
        }
        let classes: usize = lines.keyed("classes")?;
        let image = read_branch(&mut lines, "image")?;
        let text = read_branch(&mut lines, "text")?;
        let model = ModelParams::new(image, text)?;
        if model.classes() != classes {
            return Err(lines.err(format!(
                "header declares {classes} classes, layers have {}",
                model.classes()
            )));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::DanglingReference(path.to_path_buf())
            } else {
                e.into()
            }
        })?;
        Self::read_from(BufReader::new(file))
    }
}

fn write_values<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    writeln!(w)?;
    Ok(())
}

struct LineReader<L> {
    inner: L,
    line_no: usize,
}

impl<L: Iterator<Item = std::io::Result<String>>> LineReader<L> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(format!("model line {}", self.line_no), msg)
    }

    fn next_line(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected {key:?}")));
        }
        parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err(format!("bad value for {key:?}")))
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| self.err(e.to_string()))?;
        if values.len() != expected {
            return Err(self.err(format!("{} values, expected {expected}", values.len())));
        }
        Ok(values)
    }
}

fn read_layer<L: Iterator<Item = std::io::Result<String>>>(
    lines: &mut LineReader<L>,
    name: &str,
) -> Result<DenseLayer> {
    let header = lines.next_line()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let dims = match parts.as_slice() {
        ["layer", n, out, inp] if *n == name => out.parse::<usize>().ok().zip(inp.parse().ok()),
        _ => None,
    };
    let (d_out, d_in) = dims.ok_or_else(|| lines.err(format!("expected layer {name} header")))?;
    let mut data = Vec::with_capacity(d_out * d_in);
    for _ in 0..d_out {
        data.extend(lines.values(d_in)?);
    }
    let bias = lines.values(d_out)?;
    DenseLayer::new(Matrix::new(d_out, d_in, data)?, bias)
}

fn read_branch<L: Iterator<Item = std::io::Result<String>>>(
    lines: &mut LineReader<L>,
    name: &str,
) -> Result<BranchNet> {
    let header = lines.next_line()?;
    if header.split_whitespace().collect::<Vec<_>>() != ["branch", name] {
        return Err(lines.err(format!("expected branch {name}")));
    }
    let fc1 = read_layer(lines, "fc1")?;
    let fc2 = read_layer(lines, "fc2")?;
    BranchNet::new(fc1, fc2)
}
