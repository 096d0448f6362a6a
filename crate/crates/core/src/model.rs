//! Fixed two-modality classifier with an analytic backward pass.
//!
//! ```text
//! vision_in ─ vision1 ─ tanh ─ vision2 ─ tanh ─ interface ─ tanh ─┐
//!                                                                  ├ [q; t] ─ lang1 ─ tanh ─ lang2 ─ logits
//! text_in ─────────────────────────────────────────────────────────┘
//! ```
//!
//! Every layer computes `y = Ŵ x + b` with `Ŵ` chosen by [`WeightMode`]:
//! the teacher reads the stored dense weights `W₀`, the student reads the
//! masked, adapter-augmented weights from [`PrunableLayer::effective_weight`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lora::Adapter;
use crate::numeric::{BitMask, Matrix, Rng};
use crate::pruning::SparsityPattern;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Vision,
    Language,
    Interface,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Vision, Modality::Language, Modality::Interface];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Language => "language",
            Modality::Interface => "interface",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vision" | "v" => Ok(Modality::Vision),
            "language" | "l" => Ok(Modality::Language),
            "interface" | "q" => Ok(Modality::Interface),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Modality::Vision => 0,
            Modality::Language => 1,
            Modality::Interface => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Modality::ALL.get(c as usize).copied()
    }

    /// Interface layers are never pruned.
    pub fn is_prunable(self) -> bool {
        self != Modality::Interface
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub d_v: usize,
    pub h_v: usize,
    pub d_q: usize,
    pub d_t: usize,
    pub h_l: usize,
    pub classes: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_v: 16,
            h_v: 32,
            d_q: 8,
            d_t: 8,
            h_l: 32,
            classes: 8,
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let all = [self.d_v, self.h_v, self.d_q, self.d_t, self.h_l, self.classes];
        if all.contains(&0) {
            return Err(Error::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(name, modality, out, in)` for each layer in forward order.
    pub fn layer_specs(&self) -> [(&'static str, Modality, usize, usize); 5] {
        [
            ("vision1", Modality::Vision, self.h_v, self.d_v),
            ("vision2", Modality::Vision, self.h_v, self.h_v),
            ("interface", Modality::Interface, self.d_q, self.h_v),
            ("lang1", Modality::Language, self.h_l, self.d_q + self.d_t),
            ("lang2", Modality::Language, self.classes, self.h_l),
        ]
    }
}

pub const VISION1: usize = 0;
pub const VISION2: usize = 1;
pub const INTERFACE: usize = 2;
pub const LANG1: usize = 3;
pub const LANG2: usize = 4;
pub const NUM_LAYERS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct PrunableLayer {
    pub name: String,
    pub modality: Modality,
    /// Stored dense weights (`out × in`). Read by the teacher.
    pub w0: Matrix,
    pub mask: BitMask,
    pub bias: Vec<f64>,
    pub adapter: Option<Adapter>,
    /// Sparsity pattern the mask was built for, if any.
    pub declared: Option<SparsityPattern>,
    /// Set once an adapter has been folded into `w0`; from then on `w0` is
    /// the deployable weight and must itself respect the declared pattern.
    pub merged: bool,
}

impl PrunableLayer {
    pub fn shape(&self) -> (usize, usize) {
        self.w0.shape()
    }

    /// `(W₀ + BA) ⊙ M` with a sparse adapter, `W₀ ⊙ M + BA` with a dense
    /// one, `W₀ ⊙ M` without.
    pub fn effective_weight(&self) -> Matrix {
        let out = match &self.adapter {
            Some(ad) => ad.apply(&self.w0, &self.mask),
            None => self.w0.hadamard_mask(&self.mask),
        };
        out.expect("layer invariants keep mask and adapter shapes aligned")
    }

    fn weight(&self, mode: WeightMode) -> Matrix {
        match mode {
            WeightMode::DenseTeacher => self.w0.clone(),
            WeightMode::MaskedStudent => self.effective_weight(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightMode {
    DenseTeacher,
    MaskedStudent,
}

/// Snapshot of per-layer weights for one mode, shared between forwards.
#[derive(Clone, Debug)]
pub struct WeightView {
    revision: u64,
    mode: WeightMode,
    weights: Arc<[Matrix]>,
}

impl WeightView {
    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }
}

/// Cached activations from one forward pass.
#[derive(Clone, Debug)]
pub struct BackwardTape {
    revision: u64,
    weights: Arc<[Matrix]>,
    /// Input vector of every layer.
    inputs: Vec<Vec<f64>>,
    /// Post-activation output of every hidden layer.
    hidden: Vec<Vec<f64>>,
}

impl BackwardTape {
    /// Input seen by layer `idx` during the forward pass.
    pub fn layer_input(&self, idx: usize) -> &[f64] {
        &self.inputs[idx]
    }
}

/// Per-layer gradients with respect to the effective weights and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(model: &ToyVlm) -> Self {
        GradientSet {
            weights: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.w0.rows(), l.w0.cols()))
                .collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_assign(b).expect("gradient sets from the same model");
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w.as_mut_slice() {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyVlm {
    dims: Dims,
    seed: u64,
    layers: Vec<PrunableLayer>,
    revision: u64,
}

/// Equality covers parameters and metadata, not the revision counter.
impl PartialEq for ToyVlm {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.seed == other.seed && self.layers == other.layers
    }
}

impl ToyVlm {
    /// Xavier-uniform weights, zero biases, all-ones masks.
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let layers = dims
            .layer_specs()
            .iter()
            .enumerate()
            .map(|(idx, &(name, modality, out, inp))| {
                let mut rng = Rng::derive(seed, idx as u64);
                let bound = (6.0 / (inp + out) as f64).sqrt();
                PrunableLayer {
                    name: name.to_string(),
                    modality,
                    w0: Matrix::from_fn(out, inp, |_, _| rng.uniform_range(-bound, bound)),
                    mask: BitMask::ones(out, inp),
                    bias: vec![0.0; out],
                    adapter: None,
                    declared: None,
                    merged: false,
                }
            })
            .collect();
        Ok(ToyVlm {
            dims,
            seed,
            layers,
            revision: 0,
        })
    }

    /// Assembles a model from explicit layers, checking them against `dims`.
    pub fn from_layers(dims: Dims, seed: u64, layers: Vec<PrunableLayer>) -> Result<Self> {
        dims.validate()?;
        let specs = dims.layer_specs();
        if layers.len() != specs.len() {
            return Err(Error::Input(format!(
                "expected {} layers, got {}",
                specs.len(),
                layers.len()
            )));
        }
        for (l, &(name, modality, out, inp)) in layers.iter().zip(specs.iter()) {
            if l.name != name || l.modality != modality {
                return Err(Error::Input(format!(
                    "layer {} ({}) where {name} ({modality}) was expected",
                    l.name, l.modality
                )));
            }
            if l.w0.shape() != (out, inp) || l.mask.shape() != (out, inp) || l.bias.len() != out {
                return Err(Error::Dimension(format!("layer {name} has the wrong shape")));
            }
            if let Some(ad) = &l.adapter {
                if ad.shape() != (out, inp) {
                    return Err(Error::Dimension(format!("adapter on {name} has the wrong shape")));
                }
            }
            if !l.w0.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Domain(format!("layer {name} holds non-finite values")));
            }
        }
        Ok(ToyVlm {
            dims,
            seed,
            layers,
            revision: 0,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[PrunableLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&PrunableLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Mutable access; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [PrunableLayer] {
        self.revision += 1;
        &mut self.layers
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut PrunableLayer {
        self.revision += 1;
        &mut self.layers[idx]
    }

    /// Layers whose modality is in `scope`, as `(index, layer)`.
    pub fn layers_in<'a>(
        &'a self,
        scope: &'a [Modality],
    ) -> impl Iterator<Item = (usize, &'a PrunableLayer)> + 'a {
        self.layers
            .iter()
            .enumerate()
            .filter(move |(_, l)| scope.contains(&l.modality))
    }

    /// Parameter registry: every weight matrix once, with its modality.
    pub fn parameter_registry(&self) -> Vec<(&str, Modality, (usize, usize))> {
        self.layers
            .iter()
            .map(|l| (l.name.as_str(), l.modality, l.w0.shape()))
            .collect()
    }

    pub fn view(&self, mode: WeightMode) -> WeightView {
        WeightView {
            revision: self.revision,
            mode,
            weights: self.layers.iter().map(|l| l.weight(mode)).collect(),
        }
    }

    pub fn forward(
        &self,
        vision_in: &[f64],
        text_in: &[f64],
        mode: WeightMode,
    ) -> Result<(Vec<f64>, BackwardTape)> {
        self.forward_view(&self.view(mode), vision_in, text_in)
    }

    pub fn forward_view(
        &self,
        view: &WeightView,
        vision_in: &[f64],
        text_in: &[f64],
    ) -> Result<(Vec<f64>, BackwardTape)> {
        if view.revision != self.revision {
            return Err(Error::State("weight view is stale".into()));
        }
        if vision_in.len() != self.dims.d_v || text_in.len() != self.dims.d_t {
            return Err(Error::Dimension(format!(
                "inputs of length ({}, {}) for a model expecting ({}, {})",
                vision_in.len(),
                text_in.len(),
                self.dims.d_v,
                self.dims.d_t
            )));
        }
        let w = &view.weights;
        let mut inputs = Vec::with_capacity(NUM_LAYERS);
        let mut hidden = Vec::with_capacity(NUM_LAYERS - 1);

        let mut x = vision_in.to_vec();
        for idx in [VISION1, VISION2, INTERFACE] {
            let a = self.affine(w, idx, &x).into_iter().map(f64::tanh).collect::<Vec<_>>();
            inputs.push(std::mem::replace(&mut x, a.clone()));
            hidden.push(a);
        }
        let mut fused = x;
        fused.extend_from_slice(text_in);
        let a4: Vec<f64> = self
            .affine(w, LANG1, &fused)
            .into_iter()
            .map(f64::tanh)
            .collect();
        inputs.push(fused);
        hidden.push(a4.clone());
        let logits = self.affine(w, LANG2, &a4);
        inputs.push(a4);

        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("forward produced non-finite logits".into()));
        }
        Ok((
            logits,
            BackwardTape {
                revision: self.revision,
                weights: Arc::clone(&view.weights),
                inputs,
                hidden,
            },
        ))
    }

    /// Logits only.
    pub fn logits(&self, view: &WeightView, vision_in: &[f64], text_in: &[f64]) -> Result<Vec<f64>> {
        self.forward_view(view, vision_in, text_in).map(|(l, _)| l)
    }

    fn affine(&self, w: &[Matrix], idx: usize, x: &[f64]) -> Vec<f64> {
        let mut y = w[idx].matvec(x).expect("layer shapes fixed at construction");
        for (v, b) in y.iter_mut().zip(&self.layers[idx].bias) {
            *v += b;
        }
        y
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect
    /// to the logits is `dlogits`.
    pub fn backward(&self, tape: &BackwardTape, dlogits: &[f64]) -> Result<GradientSet> {
        if tape.revision != self.revision {
            return Err(Error::State(
                "tape was recorded before the model was modified".into(),
            ));
        }
        if dlogits.len() != self.dims.classes {
            return Err(Error::Dimension(format!(
                "dlogits of length {} for {} classes",
                dlogits.len(),
                self.dims.classes
            )));
        }
        let w = &tape.weights;
        let mut grads = GradientSet::zeros_like(self);

        // Output layer is linear.
        let mut delta = dlogits.to_vec();
        let mut idx = LANG2;
        loop {
            grads.weights[idx].add_outer(&delta, &tape.inputs[idx], 1.0)?;
            grads.biases[idx].copy_from_slice(&delta);
            if idx == VISION1 {
                break;
            }
            let mut upstream = w[idx].t_matvec(&delta)?;
            if idx == LANG1 {
                // Drop the text half of the fused input; it has no parameters.
                upstream.truncate(self.dims.d_q);
            }
            idx -= 1;
            delta = upstream
                .iter()
                .zip(&tape.hidden[idx])
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
        }
        Ok(grads)
    }
}
