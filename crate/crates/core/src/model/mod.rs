//! The multi-stream convolution–deconvolution forecasting network.
//!
//! Each enabled input stream (location-scale history, ego-motion, body
//! pose) runs through its own temporal-convolution encoder; the encoded
//! streams are concatenated along channels and a shared deconvolution head
//! expands them back to a `t_future`-step offset forecast.
//!
//! Default architecture (10 input frames, 10 predicted frames):
//!
//! ```text
//! per stream: D×10 ─conv3→ 32×8 ─conv3→ 64×6 ─conv3→ 128×4 ─conv3→ 128×2
//! head: concat(128·S × 2) ─conv1→ 256×2 ─conv1→ 256×2
//!       ─deconv3→ 256×4 ─deconv3→ 128×6 ─deconv3→ 64×8 ─deconv3→ 32×10
//!       ─conv1→ 3×10
//! ```
//!
//! Every conv/deconv except the final projection is followed by batch
//! normalization and ReLU. Length variants reshape the algebra with
//! per-layer encoder paddings and per-layer deconvolution kernel sizes.

mod train;
mod weights;

#[cfg(test)]
pub(crate) use train::testdata;

pub use train::{TrainLog, TrainSchedule};

use indexmap::IndexMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{NormStats, Sample};
use crate::tensor::{BatchNormState, BnMode, Graph, NodeId, Parameter, Tensor, TensorError};

/// Encoder kernel width.
pub const CONV_KERNEL: usize = 3;
/// Encoder channel progression (each stream).
pub const ENCODER_CHANNELS: [usize; 4] = [32, 64, 128, 128];
/// Channel width of the two 1×1 fusion layers.
pub const HEAD_CHANNELS: usize = 256;
/// Decoder deconvolution channel progression.
pub const DECONV_CHANNELS: [usize; 4] = [256, 128, 64, 32];

/// Errors raised by network construction, execution, and persistence.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("weights file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
}

/// The kind of evidence a stream encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamKind {
    LocationScale,
    EgoMotion,
    Pose,
}

impl StreamKind {
    /// Short name used as the layer-name prefix.
    pub fn name(&self) -> &'static str {
        match self {
            StreamKind::LocationScale => "location",
            StreamKind::EgoMotion => "ego",
            StreamKind::Pose => "pose",
        }
    }
}

/// One input stream of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub kind: StreamKind,
    /// Channels this stream consumes per frame.
    pub input_dim: usize,
    pub enabled: bool,
}

impl StreamSpec {
    /// Stream spec with the canonical input width for its kind.
    /// `ego_dim` selects the ego variant (6 accumulated or 24 flow values).
    pub fn canonical(kind: StreamKind, ego_dim: usize) -> Self {
        let input_dim = match kind {
            StreamKind::LocationScale => 3,
            StreamKind::EgoMotion => ego_dim,
            StreamKind::Pose => crate::features::POSE_DIM,
        };
        StreamSpec {
            kind,
            input_dim,
            enabled: true,
        }
    }
}

/// Complete architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Observed input frames.
    pub t_prev: usize,
    /// Predicted future frames.
    pub t_future: usize,
    pub streams: Vec<StreamSpec>,
    /// Zero-padding of each of the four encoder convolutions.
    pub input_paddings: [usize; 4],
    /// Kernel size of each of the four decoder deconvolutions.
    pub deconv_kernels: [usize; 4],
    /// Output channels (x, y, s offsets).
    pub output_dim: usize,
}

impl NetConfig {
    /// The standard 10-in/10-out architecture with the given streams
    /// enabled. `ego_dim` is 6 (accumulated rotation/translation) or 24
    /// (grid-pooled flow); it is ignored when the ego stream is absent.
    pub fn standard(kinds: &[StreamKind], ego_dim: usize) -> Self {
        let order = [
            StreamKind::LocationScale,
            StreamKind::EgoMotion,
            StreamKind::Pose,
        ];
        let streams = order
            .iter()
            .filter(|k| kinds.contains(k))
            .map(|&k| StreamSpec::canonical(k, ego_dim))
            .collect();
        NetConfig {
            t_prev: 10,
            t_future: 10,
            streams,
            input_paddings: [0; 4],
            deconv_kernels: [3; 4],
            output_dim: 3,
        }
    }

    /// The full three-stream default.
    pub fn default_full(ego_dim: usize) -> Self {
        Self::standard(
            &[
                StreamKind::LocationScale,
                StreamKind::EgoMotion,
                StreamKind::Pose,
            ],
            ego_dim,
        )
    }

    /// Variant observing 6 frames: 1-padding on the first two encoder
    /// convolutions keeps the encoder output length at 2.
    pub fn with_short_observation(mut self) -> Self {
        self.t_prev = 6;
        self.input_paddings = [1, 1, 0, 0];
        self
    }

    /// Variant predicting 20 frames: wider deconvolution kernels expand
    /// the decoder to length 20.
    pub fn with_long_prediction(mut self) -> Self {
        self.t_future = 20;
        self.deconv_kernels = [3, 5, 7, 7];
        self
    }

    /// Streams that are enabled, in network order.
    pub fn enabled_streams(&self) -> Vec<&StreamSpec> {
        self.streams.iter().filter(|s| s.enabled).collect()
    }

    /// Input width of the ego stream if enabled.
    pub fn ego_dim(&self) -> Option<usize> {
        self.enabled_streams()
            .iter()
            .find(|s| s.kind == StreamKind::EgoMotion)
            .map(|s| s.input_dim)
    }

    fn has_enabled(&self, kind: StreamKind) -> bool {
        self.enabled_streams().iter().any(|s| s.kind == kind)
    }

    /// Validate stream widths and the full shape algebra.
    pub fn validate(&self) -> Result<(), ModelError> {
        shape_plan(self).map(|_| ())
    }

    /// Stable 32-byte digest of the configuration, stored in weights files
    /// so weights can only load into the architecture they were trained on.
    pub fn fingerprint(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serialization cannot fail");
        let digest = Sha256::digest(&json);
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

/// Shape of one layer's activation: channels × length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub channels: usize,
    pub length: usize,
}

impl LayerShape {
    fn new(name: impl Into<String>, channels: usize, length: usize) -> Self {
        LayerShape {
            name: name.into(),
            channels,
            length,
        }
    }
}

/// Walk the architecture's shape algebra, returning every activation shape
/// (inputs included) or a configuration error when the algebra collapses.
pub fn shape_plan(config: &NetConfig) -> Result<Vec<LayerShape>, ModelError> {
    if config.t_prev == 0 || config.t_future == 0 {
        return Err(ModelError::Config(
            "t_prev and t_future must be positive".to_string(),
        ));
    }
    if config.output_dim == 0 {
        return Err(ModelError::Config(
            "output_dim must be positive".to_string(),
        ));
    }
    let enabled = config.enabled_streams();
    if enabled.is_empty() {
        return Err(ModelError::Config(
            "at least one stream must be enabled".to_string(),
        ));
    }
    if !config.has_enabled(StreamKind::LocationScale) {
        return Err(ModelError::Config(
            "the location-scale stream anchors the forecast and must be enabled".to_string(),
        ));
    }
    for (i, s) in enabled.iter().enumerate() {
        let expected: &[usize] = match s.kind {
            StreamKind::LocationScale => &[3],
            StreamKind::EgoMotion => &[6, 24],
            StreamKind::Pose => &[crate::features::POSE_DIM],
        };
        if !expected.contains(&s.input_dim) {
            return Err(ModelError::Config(format!(
                "stream {} ({}) has input width {}, expected one of {:?}",
                i,
                s.kind.name(),
                s.input_dim,
                expected
            )));
        }
        if enabled.iter().filter(|t| t.kind == s.kind).count() > 1 {
            return Err(ModelError::Config(format!(
                "stream kind {} enabled more than once",
                s.kind.name()
            )));
        }
    }

    let mut shapes = Vec::new();
    let mut encoder_len = 0;
    for s in &enabled {
        let prefix = s.kind.name();
        shapes.push(LayerShape::new(
            format!("{prefix}.input"),
            s.input_dim,
            config.t_prev,
        ));
        let mut len = config.t_prev;
        for (i, &ch) in ENCODER_CHANNELS.iter().enumerate() {
            let padded = len + 2 * config.input_paddings[i];
            if padded < CONV_KERNEL {
                return Err(ModelError::Config(format!(
                    "encoder layer {} of stream {} sees length {} with padding {}, too short for kernel {}",
                    i + 1,
                    prefix,
                    len,
                    config.input_paddings[i],
                    CONV_KERNEL
                )));
            }
            len = padded - CONV_KERNEL + 1;
            shapes.push(LayerShape::new(format!("{prefix}.conv{}", i + 1), ch, len));
        }
        encoder_len = len;
    }
    if encoder_len != 2 {
        return Err(ModelError::Config(format!(
            "encoder must reduce the window to length 2, got {encoder_len}; adjust paddings for t_prev = {}",
            config.t_prev
        )));
    }

    let concat_ch = 128 * enabled.len();
    shapes.push(LayerShape::new("head.concat", concat_ch, encoder_len));
    shapes.push(LayerShape::new("head.conv1", HEAD_CHANNELS, encoder_len));
    shapes.push(LayerShape::new("head.conv2", HEAD_CHANNELS, encoder_len));
    let mut len = encoder_len;
    for (i, (&ch, &k)) in DECONV_CHANNELS
        .iter()
        .zip(config.deconv_kernels.iter())
        .enumerate()
    {
        if k == 0 {
            return Err(ModelError::Config(format!(
                "deconv layer {} has zero kernel size",
                i + 1
            )));
        }
        len = len + k - 1;
        shapes.push(LayerShape::new(format!("head.deconv{}", i + 1), ch, len));
    }
    if len != config.t_future {
        return Err(ModelError::Config(format!(
            "decoder produces length {len} but t_future = {}; adjust deconv kernels",
            config.t_future
        )));
    }
    shapes.push(LayerShape::new("head.out", config.output_dim, len));
    Ok(shapes)
}

/// One forward pass through the network: the output node plus the graph
/// nodes each named parameter was bound to, for gradient extraction.
pub struct ForwardPass {
    pub output: NodeId,
    bindings: Vec<(String, NodeId)>,
}

impl ForwardPass {
    /// Names and nodes of all bound parameters (in binding order).
    pub fn bindings(&self) -> &[(String, NodeId)] {
        &self.bindings
    }
}

/// The forecasting network: named parameters plus batch-norm states.
pub struct Network {
    config: NetConfig,
    params: IndexMap<String, Parameter>,
    bn: IndexMap<String, BatchNormState>,
}

impl Network {
    /// Build a network with deterministic seeded initialization: weights
    /// uniform in ±√(1/fan_in) (fan_in = input channels × kernel taps),
    /// biases zero, batch-norm scale 1 / shift 0.
    pub fn build(config: NetConfig, seed: u64) -> Result<Network, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::new();
        let mut bn = IndexMap::new();

        let add_conv = |params: &mut IndexMap<String, Parameter>,
                        bn: &mut IndexMap<String, BatchNormState>,
                        rng: &mut ChaCha8Rng,
                        name: &str,
                        shape: [usize; 3],
                        fan_in: usize,
                        with_bn: bool,
                        bn_channels: usize| {
            let bound = (1.0 / fan_in as f64).sqrt();
            let numel = shape[0] * shape[1] * shape[2];
            let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
            let w = Tensor::new(shape.to_vec(), data).expect("shape/data agree");
            params.insert(
                format!("{name}.weight"),
                Parameter::new(format!("{name}.weight"), w),
            );
            // Bias length equals the layer's output channels.
            let b = Tensor::zeros(vec![bn_channels]);
            params.insert(
                format!("{name}.bias"),
                Parameter::new(format!("{name}.bias"), b),
            );
            if with_bn {
                let state = BatchNormState::new(&format!("{name}.bn"), bn_channels);
                bn.insert(format!("{name}.bn"), state);
            }
        };

        for s in config.enabled_streams() {
            let prefix = s.kind.name();
            let mut in_ch = s.input_dim;
            for (i, &out_ch) in ENCODER_CHANNELS.iter().enumerate() {
                add_conv(
                    &mut params,
                    &mut bn,
                    &mut rng,
                    &format!("{prefix}.conv{}", i + 1),
                    [out_ch, in_ch, CONV_KERNEL],
                    in_ch * CONV_KERNEL,
                    true,
                    out_ch,
                );
                in_ch = out_ch;
            }
        }

        let concat_ch = 128 * config.enabled_streams().len();
        add_conv(
            &mut params,
            &mut bn,
            &mut rng,
            "head.conv1",
            [HEAD_CHANNELS, concat_ch, 1],
            concat_ch,
            true,
            HEAD_CHANNELS,
        );
        add_conv(
            &mut params,
            &mut bn,
            &mut rng,
            "head.conv2",
            [HEAD_CHANNELS, HEAD_CHANNELS, 1],
            HEAD_CHANNELS,
            true,
            HEAD_CHANNELS,
        );
        let mut in_ch = HEAD_CHANNELS;
        for (i, (&out_ch, &k)) in DECONV_CHANNELS
            .iter()
            .zip(config.deconv_kernels.iter())
            .enumerate()
        {
            // Deconvolution weights are stored [C_in, C_out, K].
            add_conv(
                &mut params,
                &mut bn,
                &mut rng,
                &format!("head.deconv{}", i + 1),
                [in_ch, out_ch, k],
                in_ch * k,
                true,
                out_ch,
            );
            in_ch = out_ch;
        }
        add_conv(
            &mut params,
            &mut bn,
            &mut rng,
            "head.out",
            [config.output_dim, in_ch, 1],
            in_ch,
            false,
            config.output_dim,
        );

        Ok(Network { config, params, bn })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Total learnable scalars (conv/deconv weights and biases plus
    /// batch-norm scales and shifts).
    pub fn parameter_count(&self) -> usize {
        self.params
            .values()
            .map(|p| p.tensor.numel())
            .sum::<usize>()
            + self
                .bn
                .values()
                .map(|s| s.gamma.tensor.numel() + s.beta.tensor.numel())
                .sum::<usize>()
    }

    /// Switch every batch-norm layer between train and eval behavior.
    pub fn set_mode(&mut self, mode: BnMode) {
        for state in self.bn.values_mut() {
            state.mode = mode;
        }
    }

    /// All learnable parameters in deterministic order: conv parameters in
    /// creation order, then each batch-norm's scale and shift.
    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.params.values_mut().collect();
        for state in self.bn.values_mut() {
            let BatchNormState { gamma, beta, .. } = state;
            out.push(gamma);
            out.push(beta);
        }
        out
    }

    /// Names of all learnable parameters, in the same order as
    /// [`Self::parameters_mut`].
    pub fn parameter_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.params.keys().cloned().collect();
        for (name, _) in &self.bn {
            out.push(format!("{name}.gamma"));
            out.push(format!("{name}.beta"));
        }
        out
    }

    /// Look up one learnable parameter by its [`Self::parameter_names`]
    /// name (batch-norm scales and shifts via `.gamma`/`.beta` suffixes).
    pub fn param(&self, name: &str) -> Option<&Parameter> {
        if let Some(p) = self.params.get(name) {
            return Some(p);
        }
        if let Some(base) = name.strip_suffix(".gamma") {
            return self.bn.get(base).map(|s| &s.gamma);
        }
        if let Some(base) = name.strip_suffix(".beta") {
            return self.bn.get(base).map(|s| &s.beta);
        }
        None
    }

    /// Mutable access to one learnable parameter by name.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        if self.params.contains_key(name) {
            return self.params.get_mut(name);
        }
        if let Some(base) = name.strip_suffix(".gamma") {
            return self.bn.get_mut(base).map(|s| &mut s.gamma);
        }
        if let Some(base) = name.strip_suffix(".beta") {
            return self.bn.get_mut(base).map(|s| &mut s.beta);
        }
        None
    }

    /// Run the network on a batch, returning the output node (shape
    /// `[N, output_dim, t_future]`, normalized offsets) and the parameter
    /// bindings of this pass.
    ///
    /// `x_in` is `[N, 3, t_prev]`; `e_in`/`p_in` must be given exactly when
    /// the corresponding stream is enabled. Batch-norm behavior follows the
    /// mode set via [`Self::set_mode`].
    pub fn forward(
        &mut self,
        g: &mut Graph,
        x_in: &Tensor,
        e_in: Option<&Tensor>,
        p_in: Option<&Tensor>,
    ) -> Result<ForwardPass, ModelError> {
        self.forward_with_overrides(g, x_in, e_in, p_in, &[])
    }

    /// Like [`Self::forward`], but binding the named parameters to
    /// caller-provided graph nodes instead of the stored tensors. Used by
    /// gradient verification to drive parameters as differentiation inputs.
    pub fn forward_with_overrides(
        &mut self,
        g: &mut Graph,
        x_in: &Tensor,
        e_in: Option<&Tensor>,
        p_in: Option<&Tensor>,
        overrides: &[(String, NodeId)],
    ) -> Result<ForwardPass, ModelError> {
        // Validate inputs against enabled streams.
        let expect_shape = |t: &Tensor, dim: usize, what: &str| -> Result<usize, ModelError> {
            let s = t.shape();
            if s.len() != 3 || s[1] != dim || s[2] != self.config.t_prev {
                return Err(ModelError::Usage(format!(
                    "{what} input must be [N, {dim}, {}], got {:?}",
                    self.config.t_prev, s
                )));
            }
            Ok(s[0])
        };
        let n = expect_shape(x_in, 3, "location-scale")?;
        if !self.config.has_enabled(StreamKind::LocationScale) {
            return Err(ModelError::Usage(
                "configuration has no enabled location-scale stream".to_string(),
            ));
        }
        let ego_spec = self.config.ego_dim();
        match (ego_spec, e_in) {
            (Some(dim), Some(t)) => {
                let ne = expect_shape(t, dim, "ego-motion")?;
                if ne != n {
                    return Err(ModelError::Usage(format!(
                        "ego batch size {ne} does not match location batch size {n}"
                    )));
                }
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(ModelError::Usage(
                    "ego stream is enabled but no ego input was provided".to_string(),
                ))
            }
            (None, Some(_)) => {
                return Err(ModelError::Usage(
                    "ego input provided but the ego stream is disabled".to_string(),
                ))
            }
        }
        let pose_enabled = self.config.has_enabled(StreamKind::Pose);
        match (pose_enabled, p_in) {
            (true, Some(t)) => {
                let np = expect_shape(t, crate::features::POSE_DIM, "pose")?;
                if np != n {
                    return Err(ModelError::Usage(format!(
                        "pose batch size {np} does not match location batch size {n}"
                    )));
                }
            }
            (false, None) => {}
            (true, None) => {
                return Err(ModelError::Usage(
                    "pose stream is enabled but no pose input was provided".to_string(),
                ))
            }
            (false, Some(_)) => {
                return Err(ModelError::Usage(
                    "pose input provided but the pose stream is disabled".to_string(),
                ))
            }
        }

        let mut bindings: Vec<(String, NodeId)> = Vec::new();
        let streams: Vec<StreamSpec> = self.config.enabled_streams().into_iter().copied().collect();
        let paddings = self.config.input_paddings;

        let bind = |net: &Network,
                    g: &mut Graph,
                    bindings: &mut Vec<(String, NodeId)>,
                    name: &str|
         -> Result<NodeId, ModelError> {
            if let Some((_, id)) = overrides.iter().find(|(n, _)| n == name) {
                bindings.push((name.to_string(), *id));
                return Ok(*id);
            }
            let p = net
                .param(name)
                .ok_or_else(|| ModelError::Usage(format!("unknown parameter '{name}'")))?;
            let id = g.leaf(&p.tensor);
            bindings.push((name.to_string(), id));
            Ok(id)
        };

        let mut stream_outputs = Vec::new();
        for spec in &streams {
            let prefix = spec.kind.name();
            let input = match spec.kind {
                StreamKind::LocationScale => x_in,
                StreamKind::EgoMotion => e_in.expect("validated above"),
                StreamKind::Pose => p_in.expect("validated above"),
            };
            let mut h = g.leaf(input);
            for i in 0..ENCODER_CHANNELS.len() {
                let base = format!("{prefix}.conv{}", i + 1);
                let w = bind(self, g, &mut bindings, &format!("{base}.weight"))?;
                let b = bind(self, g, &mut bindings, &format!("{base}.bias"))?;
                h = g.conv1d(h, w, b, paddings[i])?;
                let bn_name = format!("{base}.bn");
                let has_override = overrides.iter().any(|(n, _)| {
                    n == &format!("{bn_name}.gamma") || n == &format!("{bn_name}.beta")
                });
                if has_override {
                    return Err(ModelError::Usage(
                        "batch-norm parameters cannot be overridden; they bind inside the op"
                            .to_string(),
                    ));
                }
                let state = self.bn.get_mut(&bn_name).expect("bn state exists");
                let nodes = g.batchnorm1d(h, state)?;
                bindings.push((format!("{bn_name}.gamma"), nodes.gamma));
                bindings.push((format!("{bn_name}.beta"), nodes.beta));
                h = g.relu(nodes.out);
            }
            stream_outputs.push(h);
        }

        let mut h = if stream_outputs.len() == 1 {
            stream_outputs[0]
        } else {
            g.concat_channels(&stream_outputs)?
        };

        for i in 1..=2 {
            let base = format!("head.conv{i}");
            let w = bind(self, g, &mut bindings, &format!("{base}.weight"))?;
            let b = bind(self, g, &mut bindings, &format!("{base}.bias"))?;
            h = g.conv1d(h, w, b, 0)?;
            let bn_name = format!("{base}.bn");
            let state = self.bn.get_mut(&bn_name).expect("bn state exists");
            let nodes = g.batchnorm1d(h, state)?;
            bindings.push((format!("{bn_name}.gamma"), nodes.gamma));
            bindings.push((format!("{bn_name}.beta"), nodes.beta));
            h = g.relu(nodes.out);
        }

        for i in 0..DECONV_CHANNELS.len() {
            let base = format!("head.deconv{}", i + 1);
            let w = bind(self, g, &mut bindings, &format!("{base}.weight"))?;
            let b = bind(self, g, &mut bindings, &format!("{base}.bias"))?;
            h = g.deconv1d(h, w, b)?;
            let bn_name = format!("{base}.bn");
            let state = self.bn.get_mut(&bn_name).expect("bn state exists");
            let nodes = g.batchnorm1d(h, state)?;
            bindings.push((format!("{bn_name}.gamma"), nodes.gamma));
            bindings.push((format!("{bn_name}.beta"), nodes.beta));
            h = g.relu(nodes.out);
        }

        let w = bind(self, g, &mut bindings, "head.out.weight")?;
        let b = bind(self, g, &mut bindings, "head.out.bias")?;
        let out = g.conv1d(h, w, b, 0)?;

        Ok(ForwardPass {
            output: out,
            bindings,
        })
    }

    /// Clear accumulated gradients on every parameter.
    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.tensor.grad = None;
        }
    }

    /// Pull this pass's gradients out of the graph and accumulate them into
    /// the stored parameters. Parameters bound via overrides are skipped
    /// (their gradients live on the caller's nodes).
    pub fn accumulate_gradients(&mut self, g: &Graph, pass: &ForwardPass) {
        // A parameter may be bound once per pass; copy each binding's grad.
        let grads: Vec<(String, Vec<f64>)> = pass
            .bindings
            .iter()
            .filter_map(|(name, id)| g.grad(*id).map(|gr| (name.clone(), gr.to_vec())))
            .collect();
        for (name, grad) in grads {
            if let Some(p) = self.param_mut(&name) {
                p.tensor.accumulate_grad(&grad);
            }
        }
    }
}

/// Assemble batched `[N, C, T]` input tensors from samples.
///
/// The location channels are normalized with `stats`; ego and pose
/// channels pass through unchanged. Returns tensors for exactly the
/// streams the config enables.
pub fn batch_inputs(
    samples: &[&Sample],
    stats: &NormStats,
    config: &NetConfig,
) -> Result<(Tensor, Option<Tensor>, Option<Tensor>), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Usage("empty batch".to_string()));
    }
    let n = samples.len();
    let tp = config.t_prev;
    for (i, s) in samples.iter().enumerate() {
        if s.t_prev() != tp {
            return Err(ModelError::Usage(format!(
                "sample {i} has {} input frames, config expects {tp}",
                s.t_prev()
            )));
        }
    }
    let mut x = vec![0.0; n * 3 * tp];
    for (i, s) in samples.iter().enumerate() {
        let mut block = s.x_in.clone();
        stats.normalize(&mut block);
        x[i * 3 * tp..(i + 1) * 3 * tp].copy_from_slice(&block);
    }
    let x = Tensor::new(vec![n, 3, tp], x)?;

    let e = match config.ego_dim() {
        Some(dim) => {
            let mut e = vec![0.0; n * dim * tp];
            for (i, s) in samples.iter().enumerate() {
                if s.ego_dim() != dim {
                    return Err(ModelError::Usage(format!(
                        "sample {i} has ego width {}, config expects {dim}",
                        s.ego_dim()
                    )));
                }
                e[i * dim * tp..(i + 1) * dim * tp].copy_from_slice(&s.e_in);
            }
            Some(Tensor::new(vec![n, dim, tp], e)?)
        }
        None => None,
    };

    let p = if config
        .streams
        .iter()
        .any(|s| s.enabled && s.kind == StreamKind::Pose)
    {
        let pd = crate::features::POSE_DIM;
        let mut p = vec![0.0; n * pd * tp];
        for (i, s) in samples.iter().enumerate() {
            p[i * pd * tp..(i + 1) * pd * tp].copy_from_slice(&s.p_in);
        }
        Some(Tensor::new(vec![n, pd, tp], p)?)
    } else {
        None
    };

    Ok((x, e, p))
}

/// Assemble the batched `[N, 3, t_future]` normalized target tensor.
pub fn batch_targets(
    samples: &[&Sample],
    stats: &NormStats,
    t_future: usize,
) -> Result<Tensor, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Usage("empty batch".to_string()));
    }
    let n = samples.len();
    let mut y = vec![0.0; n * 3 * t_future];
    for (i, s) in samples.iter().enumerate() {
        if s.t_future() != t_future {
            return Err(ModelError::Usage(format!(
                "sample {i} has {} future frames, expected {t_future}",
                s.t_future()
            )));
        }
        let mut block = s.x_out.clone();
        stats.normalize(&mut block);
        y[i * 3 * t_future..(i + 1) * 3 * t_future].copy_from_slice(&block);
    }
    Ok(Tensor::new(vec![n, 3, t_future], y)?)
}

pub use weights::{load_weights, save_weights};
