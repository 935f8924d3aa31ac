//! The hierarchical network: feature head, three-level graph core and the
//! four classifier variants.
//!
//! Activations use the `[B, T, C]` layout throughout, so a node-feature
//! matrix `X ∈ R^{n×T}` is stored transposed as `[T, n]`.

mod checkpoint;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::graph::{chebyshev_basis, normalized_laplacian, ChebBasis};
use crate::graph::{GraphError, GraphHierarchy, GraphPreset, LevelGraph};
use crate::metrics::{one_hot, smooth_label, MetricsError};
use crate::tensor::{
    activation, add, avg_pool_time, channel_weighted_sum, concat_last, decode_mixture,
    depthwise_time_conv, gmm_nll, mean_absolute_error, mul_const, normal_pdf, pad_time,
    pointwise_mix, reshape, scale, select_last, soft_cross_entropy, softmax, weighted_sum,
    affine_scalar, Activation, Tensor, TensorError,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, ParamRecord, CHECKPOINT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration error at {stage}: {reason}")]
    Config { stage: &'static str, reason: String },
    #[error("input has shape {got:?}, expected [batch, {time}, {channels}]")]
    Dimension {
        got: Vec<usize>,
        time: usize,
        channels: usize,
    },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Label(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Classifier design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Softmax logits trained against one-hot targets.
    A,
    /// Scalar regression trained with mean absolute error.
    B,
    /// Gaussian mixture over the score axis trained by likelihood.
    C,
    /// Softmax logits trained against Gaussian-smoothed targets.
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];

    /// Width of the raw output layer.
    pub fn output_width(self, classes: usize) -> usize {
        match self {
            Variant::A | Variant::D => classes,
            Variant::B => 1,
            Variant::C => 3 * classes,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Variant::A),
            "B" => Ok(Variant::B),
            "C" => Ok(Variant::C),
            "D" => Ok(Variant::D),
            other => Err(format!("unknown variant {other:?}; expected one of A, B, C, D")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_views: usize,
    pub head_kernel: usize,
    pub head_pool: usize,
    pub sep_kernel: usize,
    /// Samples per input window.
    pub input_len: usize,
    pub hierarchy: GraphHierarchy,
    pub variant: Variant,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub smoothing_s: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_views: 4,
            head_kernel: 5,
            head_pool: 2,
            sep_kernel: 5,
            input_len: 128,
            hierarchy: GraphHierarchy::preset(GraphPreset::G0).expect("built-in preset is valid"),
            variant: Variant::D,
            num_classes: 5,
            dropout_rate: 0.25,
            activation: Activation::Elu,
            smoothing_s: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// A four-channel, two-region network over 16-sample windows, small enough
    /// for exhaustive finite-difference checks.
    pub fn toy(variant: Variant) -> Self {
        let channels: Vec<String> = ["c1", "c2", "c3", "c4"].map(String::from).to_vec();
        let spec = crate::graph::CustomGraphSpec {
            regions: [
                ("left".to_string(), channels[..2].to_vec()),
                ("right".to_string(), channels[2..].to_vec()),
            ]
            .into_iter()
            .collect(),
            region_edges: vec![["left".into(), "right".into()]],
            channel_edges: None,
        };
        Self {
            input_len: 16,
            hierarchy: GraphHierarchy::from_spec(&spec, &channels).expect("toy hierarchy is valid"),
            variant,
            ..Self::default()
        }
    }

    /// Time length after the feature head.
    pub fn pooled_len(&self) -> Result<usize> {
        if self.head_kernel == 0 || self.head_kernel > self.input_len {
            return Err(ModelError::Config {
                stage: "feature head",
                reason: format!(
                    "kernel {} does not fit input length {}",
                    self.head_kernel, self.input_len
                ),
            });
        }
        if self.head_pool == 0 {
            return Err(ModelError::Config {
                stage: "feature head",
                reason: "pool window must be positive".into(),
            });
        }
        let len = (self.input_len - self.head_kernel + 1) / self.head_pool;
        if len == 0 {
            return Err(ModelError::Config {
                stage: "feature head",
                reason: format!(
                    "pool window {} exceeds convolved length {}",
                    self.head_pool,
                    self.input_len - self.head_kernel + 1
                ),
            });
        }
        Ok(len)
    }

    pub fn validate(&self) -> Result<()> {
        self.pooled_len()?;
        if self.num_views == 0 {
            return Err(ModelError::Config {
                stage: "feature head",
                reason: "at least one view is required".into(),
            });
        }
        if self.sep_kernel % 2 == 0 {
            return Err(ModelError::Config {
                stage: "time convolution",
                reason: format!("kernel {} must be odd for same padding", self.sep_kernel),
            });
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config {
                stage: "classifier",
                reason: "at least two classes are required".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config {
                stage: "classifier",
                reason: format!("dropout rate {} outside [0, 1)", self.dropout_rate),
            });
        }
        if !(self.smoothing_s > 0.0) {
            return Err(ModelError::Config {
                stage: "classifier",
                reason: format!("smoothing width {} must be positive", self.smoothing_s),
            });
        }
        self.hierarchy.validate()?;
        Ok(())
    }
}

/// Parameter groups, in network order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// The feature head (Part I).
    Head,
    Channel,
    Region,
    Global,
    Fusion,
    Classifier,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Head,
        ParamGroup::Channel,
        ParamGroup::Region,
        ParamGroup::Global,
        ParamGroup::Fusion,
        ParamGroup::Classifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Head => "head",
            ParamGroup::Channel => "channel",
            ParamGroup::Region => "region",
            ParamGroup::Global => "global",
            ParamGroup::Fusion => "fusion",
            ParamGroup::Classifier => "classifier",
        }
    }
}

impl FromStr for ParamGroup {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| ModelError::Config {
                stage: "parameter groups",
                reason: format!("unknown group {s:?}"),
            })
    }
}

#[derive(Debug, Clone)]
enum Init {
    Uniform(f64),
    Values(Vec<f64>),
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    init: Init,
}

fn glorot(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
}

const LEVELS: [(ParamGroup, &str); 3] = [
    (ParamGroup::Channel, "channel"),
    (ParamGroup::Region, "region"),
    (ParamGroup::Global, "global"),
];

// softplus(x) = 1
const UNIT_STD_RAW: f64 = 0.541_324_854_612_918_1;

fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, group, shape: Vec<usize>, init| {
        specs.push(ParamSpec {
            name,
            group,
            shape,
            init,
        })
    };
    let c = cfg.hierarchy.num_channels();
    let (k1, k2) = (cfg.head_kernel, cfg.sep_kernel);
    for s in 0..cfg.num_views {
        push(format!("head.view{s}.kernel"), ParamGroup::Head, vec![k1, c], glorot(k1, k1));
        push(format!("head.view{s}.bias"), ParamGroup::Head, vec![c], Init::Values(vec![0.0; c]));
    }
    push(
        "head.squeeze".into(),
        ParamGroup::Head,
        vec![cfg.num_views],
        Init::Values(vec![1.0 / cfg.num_views as f64; cfg.num_views]),
    );

    for (graph, (group, level)) in cfg.hierarchy.levels().into_iter().zip(LEVELS) {
        let n = graph.len();
        let d = graph.cheb_degree();
        for branch in 1..=2 {
            let p = format!("{level}.b{branch}");
            push(format!("{p}.cheb"), group, vec![d + 1], glorot(d + 1, 1));
            push(format!("{p}.dw.kernel"), group, vec![k2, n], glorot(k2, k2));
            push(format!("{p}.dw.bias"), group, vec![n], Init::Values(vec![0.0; n]));
            push(format!("{p}.pw.weight"), group, vec![n, n], glorot(n, n));
            push(format!("{p}.pw.bias"), group, vec![n], Init::Values(vec![0.0; n]));
        }
    }
    for link in ["cr", "rg"] {
        push(format!("fusion.{link}.w"), ParamGroup::Fusion, vec![1], glorot(1, 1));
        push(format!("fusion.{link}.b"), ParamGroup::Fusion, vec![1], Init::Values(vec![0.0]));
    }

    let k = cfg.num_classes;
    let f = cfg.hierarchy.feature_width();
    let out = cfg.variant.output_width(k);
    let bias = match cfg.variant {
        Variant::A | Variant::D => vec![0.0; k],
        Variant::B => vec![(k as f64 + 1.0) / 2.0],
        Variant::C => {
            let mut b = vec![0.0; k];
            b.extend((1..=k).map(|j| j as f64));
            b.extend(std::iter::repeat_n(UNIT_STD_RAW, k));
            b
        }
    };
    push("classifier.weight".into(), ParamGroup::Classifier, vec![f, out], glorot(f, out));
    push("classifier.bias".into(), ParamGroup::Classifier, vec![out], Init::Values(bias));
    specs
}

#[derive(Debug, Clone)]
struct Parameter {
    group: ParamGroup,
    tensor: Tensor,
}

/// A built network: configuration, named parameters and the constant
/// Chebyshev bases of each level.
#[derive(Debug, Clone)]
pub struct HistnModel {
    config: ModelConfig,
    params: IndexMap<String, Parameter>,
    frozen: BTreeSet<ParamGroup>,
    bases: Vec<Vec<Tensor>>,
}

fn level_basis(graph: &LevelGraph) -> Result<Vec<Tensor>> {
    let basis = chebyshev_basis(&normalized_laplacian(graph)?, graph.cheb_degree())?;
    basis_tensors(&basis)
}

fn basis_tensors(basis: &ChebBasis) -> Result<Vec<Tensor>> {
    basis
        .matrices
        .iter()
        .map(|m| Tensor::new(&[m.n, m.n], m.data.clone()).map_err(ModelError::from))
        .collect()
}

pub fn build_model<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<HistnModel> {
    cfg.validate()?;
    let mut values = IndexMap::new();
    for spec in param_specs(cfg) {
        let len = spec.shape.iter().product();
        let data = match spec.init {
            Init::Uniform(b) => (0..len).map(|_| rng.random_range(-b..b)).collect(),
            Init::Values(v) => v,
        };
        values.insert(spec.name, data);
    }
    HistnModel::from_values(cfg.clone(), values)
}

impl HistnModel {
    /// Assembles a model from explicit parameter values; every expected
    /// parameter must be present with the configured size.
    pub(crate) fn from_values(
        config: ModelConfig,
        mut values: IndexMap<String, Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = IndexMap::new();
        for spec in param_specs(&config) {
            let data = values.shift_remove(&spec.name).ok_or_else(|| {
                ModelError::Parameter(format!("missing parameter {}", spec.name))
            })?;
            let expected: usize = spec.shape.iter().product();
            if data.len() != expected {
                return Err(ModelError::Parameter(format!(
                    "parameter {} has {} values but the configuration expects shape {:?}",
                    spec.name,
                    data.len(),
                    spec.shape
                )));
            }
            params.insert(
                spec.name,
                Parameter {
                    group: spec.group,
                    tensor: Tensor::param(&spec.shape, data)?,
                },
            );
        }
        if let Some(extra) = values.keys().next() {
            return Err(ModelError::Parameter(format!("unexpected parameter {extra}")));
        }
        let bases = config
            .hierarchy
            .levels()
            .into_iter()
            .map(level_basis)
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            params,
            frozen: BTreeSet::new(),
            bases,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.tensor)
    }

    pub fn param_group(&self, name: &str) -> Option<ParamGroup> {
        self.params.get(name).map(|p| p.group)
    }

    /// `(name, tensor)` for every parameter outside the frozen groups.
    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params
            .iter()
            .filter(|(_, p)| !self.frozen.contains(&p.group))
            .map(|(n, p)| (n.as_str(), &p.tensor))
    }

    /// Replaces a parameter's values, keeping its shape and frozen state.
    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let frozen = &self.frozen;
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| ModelError::Parameter(format!("unknown parameter {name}")))?;
        let shape = p.tensor.shape().to_vec();
        p.tensor = if frozen.contains(&p.group) {
            Tensor::new(&shape, values)?
        } else {
            Tensor::param(&shape, values)?
        };
        Ok(())
    }

    /// Swaps in an arbitrary tensor of the same shape, e.g. a leaf owned by a
    /// gradient check.
    pub(crate) fn replace_param(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| ModelError::Parameter(format!("unknown parameter {name}")))?;
        if p.tensor.shape() != tensor.shape() {
            return Err(ModelError::Parameter(format!(
                "parameter {name} has shape {:?}, got {:?}",
                p.tensor.shape(),
                tensor.shape()
            )));
        }
        p.tensor = tensor;
        Ok(())
    }

    /// Frozen groups hold constant tensors, so no gradient is ever computed
    /// for them.
    pub fn set_frozen(&mut self, groups: &[ParamGroup]) -> Result<()> {
        self.frozen = groups.iter().copied().collect();
        let names: Vec<String> = self.params.keys().cloned().collect();
        for name in names {
            let values = self.params[&name].tensor.values().to_vec();
            self.set_values(&name, values)?;
        }
        Ok(())
    }

    pub fn frozen(&self) -> &BTreeSet<ParamGroup> {
        &self.frozen
    }

    pub fn count_parameters(&self, trainable_only: bool) -> usize {
        self.params
            .values()
            .filter(|p| !trainable_only || !self.frozen.contains(&p.group))
            .map(|p| p.tensor.len())
            .sum()
    }

    fn p(&self, name: &str) -> &Tensor {
        &self.params[name].tensor
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let (t, c) = (self.config.input_len, self.config.hierarchy.num_channels());
        if s.len() != 3 || s[1] != t || s[2] != c {
            return Err(ModelError::Dimension {
                got: s.to_vec(),
                time: t,
                channels: c,
            });
        }
        Ok(())
    }

    /// Feature head: view expansion, learned squeeze, activation, pooling.
    pub fn head(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let views = (0..self.config.num_views)
            .map(|s| {
                depthwise_time_conv(
                    x,
                    self.p(&format!("head.view{s}.kernel")),
                    Some(self.p(&format!("head.view{s}.bias"))),
                )
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let squeezed = weighted_sum(self.p("head.squeeze"), &views)?;
        Ok(avg_pool_time(
            &activation(&squeezed, self.config.activation)?,
            self.config.head_pool,
        )?)
    }

    fn time_conv(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let pad = (self.config.sep_kernel - 1) / 2;
        let padded = pad_time(x, pad, pad)?;
        let dw = depthwise_time_conv(
            &padded,
            self.p(&format!("{prefix}.dw.kernel")),
            Some(self.p(&format!("{prefix}.dw.bias"))),
        )?;
        let pw = pointwise_mix(
            &dw,
            self.p(&format!("{prefix}.pw.weight")),
            Some(self.p(&format!("{prefix}.pw.bias"))),
        )?;
        Ok(activation(&pw, self.config.activation)?)
    }

    fn level_block(&self, level: usize, x: &Tensor) -> Result<Tensor> {
        let name = LEVELS[level].1;
        let act = self.config.activation;
        let basis = &self.bases[level];
        let b1 = format!("{name}.b1");
        let b2 = format!("{name}.b2");
        let first = self.time_conv(
            &b1,
            &cheb_conv(x, basis, self.p(&format!("{b1}.cheb")), act)?,
        )?;
        let second = cheb_conv(
            &self.time_conv(&b2, x)?,
            basis,
            self.p(&format!("{b2}.cheb")),
            act,
        )?;
        Ok(scale(&add(&first, &second)?, 0.5)?)
    }

    /// Concatenated channel, region and global features, `[B, T', F]`.
    pub fn feature_map(&self, x: &Tensor) -> Result<Tensor> {
        let h = &self.config.hierarchy;
        let head = self.head(x)?;
        let channel = self.level_block(0, &head)?;
        let region_in = node_fusion(
            &channel,
            &h.fusion_map_cr,
            self.p("fusion.cr.w"),
            self.p("fusion.cr.b"),
        )?;
        let region = self.level_block(1, &region_in)?;
        let global_in = node_fusion(
            &region,
            &h.fusion_map_rg,
            self.p("fusion.rg.w"),
            self.p("fusion.rg.b"),
        )?;
        let global = self.level_block(2, &global_in)?;
        Ok(concat_last(&[channel, region, global])?)
    }

    /// Time-pooled deep features, `[B, F]`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let map = self.feature_map(x)?;
        let (b, t, f) = (map.shape()[0], map.shape()[1], map.shape()[2]);
        Ok(reshape(&avg_pool_time(&map, t)?, &[b, f])?)
    }

    /// Raw variant output. Dropout is applied only when a generator is given.
    pub fn forward(&self, x: &Tensor, dropout: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let mut feats = self.features(x)?;
        let p = self.config.dropout_rate;
        if let (Some(rng), true) = (dropout, p > 0.0) {
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..feats.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            feats = mul_const(&feats, &mask)?;
        }
        Ok(pointwise_mix(
            &feats,
            self.p("classifier.weight"),
            Some(self.p("classifier.bias")),
        )?)
    }

    /// Batch-mean training loss for integer scores `1..=K`.
    pub fn loss(&self, output: &Tensor, targets: &[usize]) -> Result<Tensor> {
        variant_loss(
            self.config.variant,
            output,
            targets,
            self.config.num_classes,
            self.config.smoothing_s,
        )
    }

    /// Class rankings (best first, 1-indexed) for each output row.
    pub fn rankings(&self, output: &Tensor) -> Vec<Vec<usize>> {
        let k = self.config.num_classes;
        let w = self.config.variant.output_width(k);
        output
            .values()
            .chunks(w)
            .map(|row| predict_ranking(self.config.variant, row, k))
            .collect()
    }
}

fn cheb_conv(x: &Tensor, basis: &[Tensor], beta: &Tensor, act: Activation) -> Result<Tensor> {
    if beta.len() != basis.len() {
        return Err(ModelError::Parameter(format!(
            "{} Chebyshev coefficients for a degree-{} basis",
            beta.len(),
            basis.len() - 1
        )));
    }
    // The filter is symmetric, so right-multiplying the [T, n] layout applies it
    // node-wise.
    let filter = weighted_sum(beta, basis)?;
    Ok(activation(&pointwise_mix(x, &filter, None)?, act)?)
}

/// `act(Σ_k β_k T_k(L̃) X)` for node features `x: [.., T, n]`.
pub fn cheb_graph_conv(
    x: &Tensor,
    basis: &ChebBasis,
    beta: &Tensor,
    act: Activation,
) -> Result<Tensor> {
    if x.shape().last() != Some(&basis.nodes()) {
        return Err(ModelError::Parameter(format!(
            "features of shape {:?} for a {}-node basis",
            x.shape(),
            basis.nodes()
        )));
    }
    cheb_conv(x, &basis_tensors(basis)?, beta, act)
}

/// Softmax weights over each group's children, `[B, 1, m]`, from a shared
/// affine scorer on the children's time means.
pub fn fusion_weights(x: &Tensor, children: &[usize], w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if children.is_empty() {
        return Err(ModelError::Parameter("node fusion needs at least one child".into()));
    }
    let sel = select_last(x, children)?;
    let t = sel.shape()[sel.shape().len() - 2];
    let means = avg_pool_time(&sel, t)?;
    Ok(softmax(&affine_scalar(&means, w, b)?)?)
}

/// Maps child features `x: [B, T, n]` to one parent per group, `[B, T, groups]`.
pub fn node_fusion(x: &Tensor, groups: &[Vec<usize>], w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let parents = groups
        .iter()
        .map(|children| {
            let weights = fusion_weights(x, children, w, b)?;
            Ok(channel_weighted_sum(&select_last(x, children)?, &weights)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(concat_last(&parents)?)
}

pub fn variant_loss(
    variant: Variant,
    output: &Tensor,
    targets: &[usize],
    classes: usize,
    smoothing_s: f64,
) -> Result<Tensor> {
    for &t in targets {
        if t == 0 || t > classes {
            return Err(MetricsError::Label { label: t, classes }.into());
        }
    }
    let loss = match variant {
        Variant::A => {
            let dist = targets
                .iter()
                .map(|&t| one_hot(t, classes))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            soft_cross_entropy(output, &dist.concat())?
        }
        Variant::D => {
            let dist = targets
                .iter()
                .map(|&t| smooth_label(t, classes, smoothing_s).map(|s| s.probs))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            soft_cross_entropy(output, &dist.concat())?
        }
        Variant::B => {
            let y: Vec<f64> = targets.iter().map(|&t| t as f64).collect();
            mean_absolute_error(output, &y)?
        }
        Variant::C => {
            let y: Vec<f64> = targets.iter().map(|&t| t as f64).collect();
            gmm_nll(output, &y)?
        }
    };
    Ok(loss)
}

fn rank_by(scores: &[f64], higher_first: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps ties in index order.
    idx.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        if higher_first {
            ord.reverse()
        } else {
            ord
        }
    });
    idx.into_iter().map(|i| i + 1).collect()
}

/// Ranks the `K` classes from one raw output row, best first, 1-indexed.
pub fn predict_ranking(variant: Variant, row: &[f64], classes: usize) -> Vec<usize> {
    match variant {
        Variant::A | Variant::D => rank_by(&row[..classes], true),
        Variant::B => {
            let y = row[0].clamp(1.0, classes as f64);
            let dist: Vec<f64> = (1..=classes).map(|j| (y - j as f64).abs()).collect();
            rank_by(&dist, false)
        }
        Variant::C => {
            let m = decode_mixture(row);
            let density: Vec<f64> = (1..=classes)
                .map(|j| {
                    (0..m.weights.len())
                        .map(|i| m.weights[i] * normal_pdf(j as f64, m.means[i], m.stds[i]))
                        .sum()
                })
                .collect();
            rank_by(&density, true)
        }
    }
}

#[cfg(test)]
mod tests;
