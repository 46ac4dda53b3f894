//! Desk-scale vocoder generators and fully convolutional discriminators.
//!
//! Models are plain functions of a spec, a bound [`ParameterSet`], and tape
//! inputs. Parameters are named (`"up0.res2.conv.w"`), so checkpoints and
//! optimizers address them by name and order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use num_traits::Float;

use crate::error::{invalid, shape_err, Error, Result};
use crate::losses::ScoreMap;
use crate::tape::{Conv1dOpts, ConvTranspose1dOpts, Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Gain for layers followed by a leaky ReLU with `slope`.
pub fn leaky_relu_gain(slope: f64) -> f64 {
    Float::sqrt(2.0 / (1.0 + slope * slope))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Initialization gain; weights were drawn from `N(0, (gain² / fan_in))`.
    pub gain: f64,
    pub requires_grad: bool,
}

/// Named model parameters in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        Self { params: Vec::new() }
    }
}

/// Parameters of one model recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| invalid("model", format!("parameter {name:?} missing from parameter set")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, gain: f64) -> Result<()> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(invalid("parameter_set", format!("duplicate parameter {name:?}")));
        }
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            gain,
            requires_grad: true,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Mutable views of all values, in order, for optimizer updates.
    pub fn take_values(&mut self) -> Vec<Tensor<T>> {
        self.params
            .iter_mut()
            .map(|p| core::mem::replace(&mut p.value, Tensor::zeros(&[0])))
            .collect()
    }

    pub fn restore_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(invalid("parameter_set", "value count mismatch".into()));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn set_all_zero(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().fill(T::zero());
        }
    }

    /// Records every value as a leaf.
    pub fn bind(&self, tape: &Tape<T>, requires_grad: bool) -> BoundParams {
        let mut index = BTreeMap::new();
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                index.insert(p.name.clone(), i);
                tape.leaf(p.value.clone(), requires_grad && p.requires_grad)
            })
            .collect();
        BoundParams { vars, index }
    }

    /// Views consecutive slices of a flat `[num_scalars]` variable as the
    /// parameters, so a scalar function of the model can be differentiated
    /// with respect to one vector.
    pub fn bind_flat(&self, tape: &Tape<T>, flat: Var) -> Result<BoundParams> {
        let mut index = BTreeMap::new();
        let mut vars = Vec::with_capacity(self.params.len());
        let mut off = 0;
        for (i, p) in self.params.iter().enumerate() {
            let n = p.value.len();
            let v = tape.reshape(tape.slice(flat, 0, off, n)?, p.value.shape())?;
            off += n;
            index.insert(p.name.clone(), i);
            vars.push(v);
        }
        Ok(BoundParams { vars, index })
    }

    /// Gradients for each parameter in order; zeros where none flowed.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }
}

/// Shape and initialization of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub gain: f64,
    pub is_bias: bool,
}

fn conv_params(out: &mut Vec<ParamShape>, prefix: &str, shape: [usize; 3], fan_in: usize, gain: f64, bias: Option<usize>) {
    out.push(ParamShape {
        name: format!("{prefix}.w"),
        shape: shape.to_vec(),
        fan_in,
        gain,
        is_bias: false,
    });
    if let Some(n) = bias {
        out.push(ParamShape {
            name: format!("{prefix}.b"),
            shape: vec![n],
            fan_in,
            gain,
            is_bias: true,
        });
    }
}

/// Deterministic initialization: weights `~ N(0, gain / sqrt(fan_in))`
/// (standard deviation), biases zero.
pub fn init_from_shapes<T: Real>(shapes: &[ParamShape], seed: u64) -> Result<ParameterSet<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParameterSet::new();
    for s in shapes {
        let value = if s.is_bias {
            Tensor::zeros(&s.shape)
        } else {
            let std = s.gain / Float::sqrt(s.fan_in.max(1) as f64);
            Tensor::randn(&s.shape, std, &mut rng)
        };
        set.insert(&s.name, value, s.gain)?;
    }
    Ok(set)
}

fn check_bound<T: Real>(tape: &Tape<T>, p: &BoundParams, shapes: &[ParamShape]) -> Result<()> {
    for s in shapes {
        let found = tape.shape(p.get(&s.name)?)?;
        if found != s.shape {
            return Err(shape_err(
                "model",
                format!("parameter {} has shape {found:?}, spec expects {:?}", s.name, s.shape),
            ));
        }
    }
    Ok(())
}

fn check_names<T: Real>(set: &ParameterSet<T>, shapes: &[ParamShape]) -> Result<()> {
    for s in shapes {
        match set.get(&s.name) {
            Some(t) if t.shape() == s.shape.as_slice() => {}
            Some(t) => {
                return Err(shape_err(
                    "model",
                    format!("parameter {} has shape {:?}, spec expects {:?}", s.name, t.shape(), s.shape),
                ))
            }
            None => return Err(invalid("model", format!("parameter {:?} missing", s.name))),
        }
    }
    Ok(())
}

/// Init gain of the last conv in each MelGAN residual branch. Twelve
/// branches at unit gain would double the signal variance twelve times, so
/// the branches start small and the blocks start close to identity.
pub const RESIDUAL_BRANCH_GAIN: f64 = 0.25;

/// Init gain of the MelGAN output conv. It keeps the initial waveform quiet
/// so the final tanh starts in its linear range instead of saturating.
pub const OUTPUT_GAIN: f64 = 0.1;

/// MelGAN-style generator: transposed-conv upsampling blocks, each followed
/// by dilated residual units.
#[derive(Debug, Clone, PartialEq)]
pub struct MelGanSpec {
    pub n_mels: usize,
    /// Channels entering the first upsampling block; halved by every block.
    pub base_channels: usize,
    pub strides: Vec<usize>,
    pub dilations: Vec<usize>,
    /// Samples per conditioning frame; must equal the product of `strides`.
    pub hop: usize,
    pub pre_kernel: usize,
    pub post_kernel: usize,
    pub slope: f64,
}

impl Default for MelGanSpec {
    fn default() -> Self {
        Self {
            n_mels: 80,
            base_channels: 64,
            strides: vec![8, 8, 4],
            dilations: vec![1, 3, 9, 27],
            hop: 256,
            pre_kernel: 7,
            post_kernel: 7,
            slope: 0.2,
        }
    }
}

impl MelGanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() || self.strides.contains(&0) {
            return Err(invalid("melgan", "strides must be non-empty and >= 1".into()));
        }
        let prod: usize = self.strides.iter().product();
        if prod != self.hop {
            return Err(invalid("melgan", format!("stride product {prod} != hop {}", self.hop)));
        }
        if !self.base_channels.is_multiple_of(1 << self.strides.len()) {
            return Err(invalid(
                "melgan",
                format!("base_channels {} cannot be halved {} times", self.base_channels, self.strides.len()),
            ));
        }
        if self.pre_kernel.is_multiple_of(2) || self.post_kernel.is_multiple_of(2) || self.n_mels == 0 {
            return Err(invalid("melgan", "kernels must be odd and n_mels positive".into()));
        }
        Ok(())
    }

    pub fn channels_after(&self, block: usize) -> usize {
        self.base_channels >> (block + 1)
    }

    /// (kernel, padding) of the upsampling layer for `stride`; output length
    /// is exactly `stride * input`.
    pub fn upsample_geometry(stride: usize) -> (usize, usize) {
        let pad = stride / 2;
        (stride + 2 * pad, pad)
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let lg = leaky_relu_gain(self.slope);
        let mut out = Vec::new();
        let c0 = self.base_channels;
        conv_params(&mut out, "pre", [c0, self.n_mels, self.pre_kernel], self.n_mels * self.pre_kernel, lg, Some(c0));
        let mut cin = c0;
        for (i, &s) in self.strides.iter().enumerate() {
            let cout = self.channels_after(i);
            let (k, _) = Self::upsample_geometry(s);
            conv_params(&mut out, &format!("up{i}"), [cin, cout, k], cin * k / s, lg, Some(cout));
            for j in 0..self.dilations.len() {
                conv_params(&mut out, &format!("up{i}.res{j}.conv"), [cout, cout, 3], cout * 3, lg, Some(cout));
                conv_params(&mut out, &format!("up{i}.res{j}.proj"), [cout, cout, 1], cout, RESIDUAL_BRANCH_GAIN, Some(cout));
            }
            cin = cout;
        }
        conv_params(&mut out, "post", [1, cin, self.post_kernel], cin * self.post_kernel, OUTPUT_GAIN, Some(1));
        out
    }
}

/// Parallel-WaveGAN-style generator: non-causal dilated convolutions with
/// gated activations, skip connections, and nearest-neighbour upsampled
/// mel conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct PwGanSpec {
    pub n_mels: usize,
    pub layers: usize,
    /// Dilations cycle through `1, 2, 4, ..., 2^(cycle - 1)`.
    pub dilation_cycle: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub skip_channels: usize,
    pub kernel: usize,
    pub hop: usize,
}

impl Default for PwGanSpec {
    fn default() -> Self {
        Self {
            n_mels: 80,
            layers: 8,
            dilation_cycle: 8,
            residual_channels: 16,
            gate_channels: 32,
            skip_channels: 16,
            kernel: 3,
            hop: 256,
        }
    }
}

impl PwGanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dilation_cycle == 0 || self.hop == 0 || self.n_mels == 0 {
            return Err(invalid("pwgan", "layers, dilation_cycle, hop, n_mels must be positive".into()));
        }
        if !self.gate_channels.is_multiple_of(2) || self.kernel.is_multiple_of(2) {
            return Err(invalid("pwgan", "gate_channels must be even and kernel odd".into()));
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << (layer % self.dilation_cycle)
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let (r, g, s, k) = (self.residual_channels, self.gate_channels, self.skip_channels, self.kernel);
        let mut out = Vec::new();
        conv_params(&mut out, "input", [r, 1, 1], 1, 1.0, Some(r));
        for l in 0..self.layers {
            conv_params(&mut out, &format!("layer{l}.dil"), [g, r, k], r * k, 1.0, Some(g));
            conv_params(&mut out, &format!("layer{l}.cond"), [g, self.n_mels, 1], self.n_mels, 1.0, None);
            conv_params(&mut out, &format!("layer{l}.out"), [r + s, g / 2, 1], g / 2, 1.0, Some(r + s));
        }
        conv_params(&mut out, "post1", [s, s, 1], s, Float::sqrt(2f64), Some(s));
        conv_params(&mut out, "post2", [1, s, 1], s, 1.0, Some(1));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    MelGan(MelGanSpec),
    PwGan(PwGanSpec),
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::MelGan(s) => s.validate(),
            GeneratorSpec::PwGan(s) => s.validate(),
        }
    }

    pub fn hop(&self) -> usize {
        match self {
            GeneratorSpec::MelGan(s) => s.hop,
            GeneratorSpec::PwGan(s) => s.hop,
        }
    }

    pub fn n_mels(&self) -> usize {
        match self {
            GeneratorSpec::MelGan(s) => s.n_mels,
            GeneratorSpec::PwGan(s) => s.n_mels,
        }
    }

    pub fn needs_noise(&self) -> bool {
        matches!(self, GeneratorSpec::PwGan(_))
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        match self {
            GeneratorSpec::MelGan(s) => s.param_shapes(),
            GeneratorSpec::PwGan(s) => s.param_shapes(),
        }
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParameterSet<T>> {
        self.validate()?;
        init_from_shapes(&self.param_shapes(), seed)
    }

    /// Waveform `[B, 1, F * hop]` from mel `[B, n_mels, F]`; `noise` is
    /// required by (and only used by) the PWGAN generator.
    pub fn generate<T: Real>(&self, tape: &Tape<T>, mel: Var, noise: Option<Var>, p: &BoundParams) -> Result<Var> {
        check_bound(tape, p, &self.param_shapes())?;
        match self {
            GeneratorSpec::MelGan(s) => melgan_generate(tape, mel, s, p),
            GeneratorSpec::PwGan(s) => {
                let noise = noise.ok_or_else(|| invalid("pwgan_generate", "noise input required".into()))?;
                pwgan_generate(tape, noise, mel, s, p)
            }
        }
    }
}

fn conv<T: Real>(tape: &Tape<T>, x: Var, p: &BoundParams, prefix: &str, opts: Conv1dOpts, bias: bool) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = if bias { Some(p.get(&format!("{prefix}.b"))?) } else { None };
    tape.conv1d(x, w, b, opts)
}

fn same_pad(kernel: usize, dilation: usize) -> Conv1dOpts {
    Conv1dOpts {
        dilation,
        padding: dilation * (kernel - 1) / 2,
        ..Default::default()
    }
}

fn check_mel<T: Real>(tape: &Tape<T>, mel: Var, n_mels: usize, op: &'static str) -> Result<Vec<usize>> {
    let s = tape.shape(mel)?;
    if s.len() != 3 || s[1] != n_mels || s[2] == 0 {
        return Err(shape_err(op, format!("mel {s:?}, expected [B, {n_mels}, F >= 1]")));
    }
    Ok(s)
}

pub fn melgan_generate<T: Real>(tape: &Tape<T>, mel: Var, spec: &MelGanSpec, p: &BoundParams) -> Result<Var> {
    spec.validate()?;
    check_mel(tape, mel, spec.n_mels, "melgan_generate")?;
    let slope = T::of(spec.slope);
    let mut h = conv(tape, mel, p, "pre", same_pad(spec.pre_kernel, 1), true)?;
    for (i, &s) in spec.strides.iter().enumerate() {
        h = tape.leaky_relu(h, slope)?;
        let (_, pad) = MelGanSpec::upsample_geometry(s);
        let w = p.get(&format!("up{i}.w"))?;
        let b = p.get(&format!("up{i}.b"))?;
        h = tape.conv_transpose1d(h, w, Some(b), ConvTranspose1dOpts { stride: s, padding: pad })?;
        for (j, &d) in spec.dilations.iter().enumerate() {
            let r = tape.leaky_relu(h, slope)?;
            let r = conv(tape, r, p, &format!("up{i}.res{j}.conv"), same_pad(3, d), true)?;
            let r = tape.leaky_relu(r, slope)?;
            let r = conv(tape, r, p, &format!("up{i}.res{j}.proj"), Conv1dOpts::default(), true)?;
            h = tape.add(h, r)?;
        }
    }
    h = tape.leaky_relu(h, slope)?;
    h = conv(tape, h, p, "post", same_pad(spec.post_kernel, 1), true)?;
    tape.tanh(h)
}

pub fn pwgan_generate<T: Real>(tape: &Tape<T>, noise: Var, mel: Var, spec: &PwGanSpec, p: &BoundParams) -> Result<Var> {
    spec.validate()?;
    let ms = check_mel(tape, mel, spec.n_mels, "pwgan_generate")?;
    let ns = tape.shape(noise)?;
    if ns.len() != 3 || ns[1] != 1 || ns[0] != ms[0] || ns[2] != ms[2] * spec.hop {
        return Err(shape_err(
            "pwgan_generate",
            format!("noise {ns:?} must be [B, 1, F * {}] for mel {ms:?}", spec.hop),
        ));
    }
    let (r, g, s) = (spec.residual_channels, spec.gate_channels, spec.skip_channels);
    let mut x = conv(tape, noise, p, "input", Conv1dOpts::default(), true)?;
    let mut skips: Option<Var> = None;
    let res_scale = T::of(Float::sqrt(0.5f64));
    for l in 0..spec.layers {
        let h = conv(tape, x, p, &format!("layer{l}.dil"), same_pad(spec.kernel, spec.dilation(l)), true)?;
        // A 1x1 conv commutes with nearest-neighbour repetition, so the
        // conditioning projection runs at frame rate and is then repeated.
        let c = conv(tape, mel, p, &format!("layer{l}.cond"), Conv1dOpts::default(), false)?;
        let c = tape.upsample_nearest(c, spec.hop)?;
        let h = tape.add(h, c)?;
        let a = tape.tanh(tape.slice(h, 1, 0, g / 2)?)?;
        let b = tape.sigmoid(tape.slice(h, 1, g / 2, g / 2)?)?;
        let z = tape.mul(a, b)?;
        let o = conv(tape, z, p, &format!("layer{l}.out"), Conv1dOpts::default(), true)?;
        let res = tape.slice(o, 1, 0, r)?;
        let skip = tape.slice(o, 1, r, s)?;
        x = tape.scale(tape.add(x, res)?, res_scale)?;
        skips = Some(match skips {
            Some(acc) => tape.add(acc, skip)?,
            None => skip,
        });
    }
    let h = tape.scale(skips.expect("layers >= 1"), T::of(Float::sqrt(1.0 / spec.layers as f64)))?;
    let h = tape.leaky_relu(h, T::zero())?;
    let h = conv(tape, h, p, "post1", Conv1dOpts::default(), true)?;
    let h = tape.leaky_relu(h, T::zero())?;
    let h = conv(tape, h, p, "post2", Conv1dOpts::default(), true)?;
    tape.tanh(h)
}

/// Fully convolutional discriminator, applied at one or more scales.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSpec {
    /// 1 for the single-scale PWGAN discriminator, 3 for MelGAN's.
    pub scales: usize,
    /// Average-pool width and stride between successive scales.
    pub pool: usize,
    pub channels: usize,
    pub first_kernel: usize,
    pub kernel: usize,
    /// Strides of the middle layers; the network has `strides.len() + 2` layers.
    pub strides: Vec<usize>,
    /// Groups used by strided middle layers.
    pub groups: usize,
    pub slope: f64,
}

impl DiscriminatorSpec {
    /// One scale: the PWGAN discriminator.
    pub fn single() -> Self {
        Self {
            scales: 1,
            pool: 4,
            channels: 32,
            first_kernel: 15,
            kernel: 5,
            strides: vec![2, 2, 2, 1],
            groups: 4,
            slope: 0.2,
        }
    }

    /// Three scales separated by stride-4 average pooling: MelGAN's.
    pub fn multiscale() -> Self {
        Self {
            scales: 3,
            ..Self::single()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.pool == 0 || self.channels == 0 || self.strides.contains(&0) {
            return Err(invalid("discriminator", format!("invalid spec {self:?}")));
        }
        if self.first_kernel.is_multiple_of(2) || self.kernel.is_multiple_of(2) {
            return Err(invalid("discriminator", "kernels must be odd".into()));
        }
        if !self.channels.is_multiple_of(self.groups.max(1)) {
            return Err(invalid("discriminator", "channels must divide into groups".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.strides.len() + 2
    }

    /// (kernel, stride, groups) per layer.
    fn layer_plan(&self) -> Vec<(usize, usize, usize)> {
        let mut plan = vec![(self.first_kernel, 1, 1)];
        for &s in &self.strides {
            plan.push((self.kernel, s, if s > 1 { self.groups } else { 1 }));
        }
        plan.push((self.kernel, 1, 1));
        plan
    }

    /// Samples of one scale's input that influence one output score.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for (k, s, _) in self.layer_plan() {
            rf += (k - 1) * jump;
            jump *= s;
        }
        rf
    }

    /// Input samples between consecutive output scores.
    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let lg = leaky_relu_gain(self.slope);
        let c = self.channels;
        let plan = self.layer_plan();
        let last = plan.len() - 1;
        let mut out = Vec::new();
        for scale in 0..self.scales {
            for (l, &(k, _, g)) in plan.iter().enumerate() {
                let cin = if l == 0 { 1 } else { c };
                let cout = if l == last { 1 } else { c };
                let gain = if l == last { 1.0 } else { lg };
                conv_params(&mut out, &format!("d{scale}.l{l}"), [cout, cin / g, k], cin / g * k, gain, Some(cout));
            }
        }
        out
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParameterSet<T>> {
        self.validate()?;
        init_from_shapes(&self.param_shapes(), seed)
    }
}

/// Score maps `[B, T_k]` for each scale of `wav: [B, 1, T]`.
pub fn discriminate<T: Real>(tape: &Tape<T>, wav: Var, spec: &DiscriminatorSpec, p: &BoundParams) -> Result<Vec<ScoreMap>> {
    spec.validate()?;
    check_bound(tape, p, &spec.param_shapes())?;
    let s = tape.shape(wav)?;
    if s.len() != 3 || s[1] != 1 {
        return Err(shape_err("discriminate", format!("waveform {s:?}, expected [B, 1, T]")));
    }
    let rf = spec.receptive_field();
    let slope = T::of(spec.slope);
    let plan = spec.layer_plan();
    let last = plan.len() - 1;
    let mut input = wav;
    let mut maps = Vec::with_capacity(spec.scales);
    for scale in 0..spec.scales {
        if scale > 0 {
            input = tape.avg_pool1d(input, spec.pool, spec.pool)?;
        }
        let len = tape.shape(input)?[2];
        if len < rf {
            return Err(Error::TooShort {
                what: "discriminator input",
                len,
                needed: rf,
            });
        }
        let mut h = input;
        for (l, &(k, stride, groups)) in plan.iter().enumerate() {
            let opts = Conv1dOpts {
                stride,
                dilation: 1,
                padding: (k - 1) / 2,
                groups,
            };
            h = conv(tape, h, p, &format!("d{scale}.l{l}"), opts, true)?;
            if l != last {
                h = tape.leaky_relu(h, slope)?;
            }
        }
        let hs = tape.shape(h)?;
        maps.push(tape.reshape(h, &[hs[0], hs[2]])?);
    }
    Ok(maps)
}

/// Checks that `params` carries every tensor the spec needs, with the right shapes.
pub fn check_generator_params<T: Real>(spec: &GeneratorSpec, params: &ParameterSet<T>) -> Result<()> {
    check_names(params, &spec.param_shapes())
}

pub fn check_discriminator_params<T: Real>(spec: &DiscriminatorSpec, params: &ParameterSet<T>) -> Result<()> {
    check_names(params, &spec.param_shapes())
}

#[cfg(test)]
mod tests;
