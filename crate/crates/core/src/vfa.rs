//! Value function approximations over the feature vector.
//!
//! [`PolyVfa`] is linear in the features and learns by TD(0).
//! [`NeuralVfa`] is a fully connected ReLU network without per-neuron biases
//! (feature 0 is the constant) and a single linear output node, trained by
//! plain SGD on the squared error `0.5 * (target - output)^2`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolyVfa {
    pub weights: Vec<f64>,
}

impl PolyVfa {
    pub fn zeros(features: usize) -> Self {
        Self {
            weights: vec![0.0; features],
        }
    }

    pub fn he_init<R: Rng + ?Sized>(features: usize, rng: &mut R) -> Result<Self> {
        if features == 0 {
            return Err(Error::shape("at least one feature", 0));
        }
        Ok(Self {
            weights: he_sample(features, features, rng),
        })
    }

    pub fn features(&self) -> usize {
        self.weights.len()
    }

    pub fn eval(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.weights.len() {
            return Err(Error::shape(self.weights.len(), phi.len()));
        }
        Ok(dot(&self.weights, phi))
    }

    /// `w += eta * (target - <w, phi>) * phi`.
    pub fn td0_update(&self, phi: &[f64], target: f64, eta: f64) -> Result<Self> {
        if !target.is_finite() {
            return Err(Error::NonFinite("TD(0) target"));
        }
        check_rate(eta)?;
        let err = target - self.eval(phi)?;
        let weights: Vec<f64> = self
            .weights
            .iter()
            .zip(phi)
            .map(|(w, p)| w + eta * err * p)
            .collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("polynomial weights"));
        }
        Ok(Self { weights })
    }
}

/// Row-major weight matrix, `rows` = neurons of the target layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.weights[r * self.cols + c] = v;
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), input)).collect()
    }
}

/// ReLU network: `layers[k]` maps layer `k` to layer `k + 1`; the last layer
/// has a single row and no activation.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralVfa {
    pub layers: Vec<Layer>,
}

/// Pre- and post-activation values of every hidden layer plus the output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub output: f64,
}

/// Per-weight gradient, same shapes as [`NeuralVfa::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.layers.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl NeuralVfa {
    pub fn zeros(features: usize, hidden: &[usize]) -> Result<Self> {
        Ok(Self {
            layers: shapes(features, hidden)?
                .into_iter()
                .map(|(r, c)| Layer::zeros(r, c))
                .collect(),
        })
    }

    /// He initialization: every weight drawn from `N(0, 2 / fan_in)`.
    pub fn he_init<R: Rng + ?Sized>(features: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let layers = shapes(features, hidden)?
            .into_iter()
            .map(|(rows, cols)| Layer {
                rows,
                cols,
                weights: he_sample(rows * cols, cols, rng),
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn features(&self) -> usize {
        self.layers[0].cols
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.rows)
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().expect("network has an output layer")
    }

    pub fn forward(&self, phi: &[f64]) -> Result<ForwardTrace> {
        if phi.len() != self.features() {
            return Err(Error::shape(self.features(), phi.len()));
        }
        let mut pre = Vec::with_capacity(self.depth());
        let mut post = Vec::with_capacity(self.depth());
        let mut y = phi.to_vec();
        for layer in &self.layers[..self.depth()] {
            let p = layer.apply(&y);
            y = p.iter().map(|&v| v.max(0.0)).collect();
            pre.push(p);
            post.push(y.clone());
        }
        let output = dot(self.output_layer().row(0), &y);
        Ok(ForwardTrace {
            input: phi.to_vec(),
            pre,
            post,
            output,
        })
    }

    pub fn eval(&self, phi: &[f64]) -> Result<f64> {
        Ok(self.forward(phi)?.output)
    }

    /// Backpropagated gradient of `0.5 * (target - output)^2`. The ReLU
    /// derivative at exactly zero is taken as zero.
    pub fn gradient(&self, trace: &ForwardTrace, target: f64) -> Result<Gradient> {
        if trace.pre.len() != self.depth() {
            return Err(Error::shape(self.depth(), trace.pre.len()));
        }
        let k = self.depth();
        let mut grads: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        // delta: d loss / d (pre-activation) of the current layer.
        let mut delta = vec![trace.output - target];
        for l in (0..=k).rev() {
            let layer = &self.layers[l];
            let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let g = &mut grads[l][r * layer.cols..(r + 1) * layer.cols];
                for (gc, x) in g.iter_mut().zip(input) {
                    *gc = d * x;
                }
            }
            if l > 0 {
                let pre = &trace.pre[l - 1];
                delta = (0..layer.cols)
                    .map(|c| {
                        if pre[c] > 0.0 {
                            delta.iter().enumerate().map(|(r, d)| d * layer.get(r, c)).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok(Gradient { layers: grads })
    }

    /// `w -= eta * grad`.
    pub fn sgd_update(&self, grad: &Gradient, eta: f64) -> Result<Self> {
        check_rate(eta)?;
        if grad.layers.len() != self.layers.len()
            || grad
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.len() != l.weights.len())
        {
            return Err(Error::shape("gradient matching network", "mismatched gradient"));
        }
        if grad.layers.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let layers: Vec<Layer> = self
            .layers
            .iter()
            .zip(&grad.layers)
            .map(|(l, g)| Layer {
                rows: l.rows,
                cols: l.cols,
                weights: l.weights.iter().zip(g).map(|(w, d)| w - eta * d).collect(),
            })
            .collect();
        if layers.iter().flat_map(|l| &l.weights).any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("network weights"));
        }
        Ok(Self { layers })
    }
}

/// Either approximation, with a uniform evaluate/update interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Vfa {
    Poly(PolyVfa),
    Neural(NeuralVfa),
}

/// Requested architecture.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum VfaSpec {
    Poly,
    Neural { hidden: Vec<usize> },
}

impl VfaSpec {
    /// `PL`, or `NN(K,width)` when all hidden layers share a width.
    pub fn label(&self) -> String {
        match self {
            VfaSpec::Poly => "PL".into(),
            VfaSpec::Neural { hidden } if hidden.iter().all(|&w| w == hidden[0]) => {
                format!("NN({},{})", hidden.len(), hidden[0])
            }
            VfaSpec::Neural { hidden } => format!(
                "NN({})",
                hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-")
            ),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("unknown VFA `{s}`"));
        if s.eq_ignore_ascii_case("pl") || s.eq_ignore_ascii_case("poly") {
            return Ok(VfaSpec::Poly);
        }
        let body = s
            .strip_prefix("nn:")
            .or_else(|| s.strip_prefix("NN:"))
            .ok_or_else(bad)?;
        let hidden = body
            .split(',')
            .map(|w| w.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(bad());
        }
        Ok(VfaSpec::Neural { hidden })
    }

    pub fn he_init<R: Rng + ?Sized>(&self, features: usize, rng: &mut R) -> Result<Vfa> {
        Ok(match self {
            VfaSpec::Poly => Vfa::Poly(PolyVfa::he_init(features, rng)?),
            VfaSpec::Neural { hidden } => Vfa::Neural(NeuralVfa::he_init(features, hidden, rng)?),
        })
    }
}

impl Vfa {
    pub fn features(&self) -> usize {
        match self {
            Vfa::Poly(p) => p.features(),
            Vfa::Neural(n) => n.features(),
        }
    }

    pub fn spec(&self) -> VfaSpec {
        match self {
            Vfa::Poly(_) => VfaSpec::Poly,
            Vfa::Neural(n) => VfaSpec::Neural { hidden: n.hidden() },
        }
    }

    pub fn eval(&self, phi: &[f64]) -> Result<f64> {
        match self {
            Vfa::Poly(p) => p.eval(phi),
            Vfa::Neural(n) => n.eval(phi),
        }
    }

    /// TD(0) for the polynomial form, one SGD step for the network.
    pub fn update(&self, phi: &[f64], target: f64, eta: f64) -> Result<Vfa> {
        match self {
            Vfa::Poly(p) => Ok(Vfa::Poly(p.td0_update(phi, target, eta)?)),
            Vfa::Neural(n) => {
                if !target.is_finite() {
                    return Err(Error::NonFinite("SGD target"));
                }
                let trace = n.forward(phi)?;
                let g = n.gradient(&trace, target)?;
                Ok(Vfa::Neural(n.sgd_update(&g, eta)?))
            }
        }
    }

    pub fn all_weights(&self) -> Vec<f64> {
        match self {
            Vfa::Poly(p) => p.weights.clone(),
            Vfa::Neural(n) => n.layers.iter().flat_map(|l| l.weights.iter().copied()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.all_weights().iter().all(|w| w.is_finite())
    }

    /// Weight file: header `vfa-format v1 <kind> <K> <widths...>` then one
    /// line per weight row. Widths list the input, every hidden layer, and
    /// the output (`poly` lists only the input width).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self {
            Vfa::Poly(p) => {
                let _ = writeln!(s, "vfa-format v1 poly 0 {}", p.features());
                let _ = writeln!(s, "{}", join(&p.weights));
            }
            Vfa::Neural(n) => {
                let mut widths = vec![n.features()];
                widths.extend(n.layers.iter().map(|l| l.rows));
                let _ = writeln!(s, "vfa-format v1 nn {} {}", n.depth(), join_usize(&widths));
                for l in &n.layers {
                    for r in 0..l.rows {
                        let _ = writeln!(s, "{}", join(l.row(r)));
                    }
                }
            }
        }
        s
    }

    /// Parses a weight file. Lines starting with `#` are metadata and ignored.
    /// `expected_features` rejects files built for another feature layout.
    pub fn from_text(text: &str, expected_features: Option<usize>) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "empty weight file"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() < 5 || h[0] != "vfa-format" {
            return Err(Error::parse(hl, "expected `vfa-format v1 <kind> <K> <widths...>`"));
        }
        if h[1] != "v1" {
            return Err(Error::parse(hl, format!("unsupported version `{}`", h[1])));
        }
        let depth: usize = h[3].parse().map_err(|_| Error::parse(hl, "bad layer count"))?;
        let widths = h[4..]
            .iter()
            .map(|w| w.parse::<usize>().map_err(|_| Error::parse(hl, "bad width")))
            .collect::<Result<Vec<_>>>()?;
        if widths.contains(&0) {
            return Err(Error::parse(hl, "zero width"));
        }
        if let Some(f) = expected_features {
            if widths[0] != f {
                return Err(Error::shape(format!("{f} features"), format!("{} features", widths[0])));
            }
        }
        let mut row = |cols: usize| -> Result<Vec<f64>> {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(hl, "weight file truncated"))?;
            let vals = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::parse(ln, format!("bad number `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != cols {
                return Err(Error::parse(ln, format!("expected {cols} values, found {}", vals.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(ln, "non-finite weight"));
            }
            Ok(vals)
        };
        let vfa = match h[2] {
            "poly" => {
                if depth != 0 || widths.len() != 1 {
                    return Err(Error::parse(hl, "poly header must be `poly 0 <features>`"));
                }
                Vfa::Poly(PolyVfa {
                    weights: row(widths[0])?,
                })
            }
            "nn" => {
                if depth < 1 || widths.len() != depth + 2 || widths[depth + 1] != 1 {
                    return Err(Error::parse(hl, "nn header must list input, hidden and output (1) widths"));
                }
                let mut layers = Vec::with_capacity(depth + 1);
                for k in 0..=depth {
                    let (rows, cols) = (widths[k + 1], widths[k]);
                    let mut weights = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        weights.extend(row(cols)?);
                    }
                    layers.push(Layer { rows, cols, weights });
                }
                Vfa::Neural(NeuralVfa { layers })
            }
            other => return Err(Error::parse(hl, format!("unknown kind `{other}`"))),
        };
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(ln, "trailing data after weights"));
        }
        Ok(vfa)
    }
}

fn shapes(features: usize, hidden: &[usize]) -> Result<Vec<(usize, usize)>> {
    if features == 0 || hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::shape(
            "nonzero input width and at least one nonzero hidden layer",
            format!("{features} inputs, hidden {hidden:?}"),
        ));
    }
    let mut out = Vec::with_capacity(hidden.len() + 1);
    let mut prev = features;
    for &h in hidden {
        out.push((h, prev));
        prev = h;
    }
    out.push((1, prev));
    Ok(out)
}

fn he_sample<R: Rng + ?Sized>(count: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive variance");
    (0..count).map(|_| normal.sample(rng)).collect()
}

fn check_rate(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig("eta out of (0,1]".into()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}
