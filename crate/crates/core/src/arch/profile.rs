//! Declarative network profiles and symbolic shape inference.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{spec_err, Error, Result};
use crate::nn::{Activation, ConvSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Deconv,
    Gap,
    Shuffle,
    Crop,
}

impl LayerKind {
    fn token(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Deconv => "deconv",
            LayerKind::Gap => "gap",
            LayerKind::Shuffle => "shuffle",
            LayerKind::Crop => "crop",
        }
    }

    pub fn is_learnable(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Deconv)
    }
}

/// One line of the profile. `kernel`, `stride`, `out_channels` and
/// `activation` only matter for conv/deconv; `groups` is also the group
/// count of a shuffle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub out_channels: usize,
    pub groups: usize,
    pub norm: bool,
    pub bias: bool,
    pub activation: Activation,
}

impl LayerSpec {
    fn learnable(kind: LayerKind, kernel: [usize; 3], stride: [usize; 3], out_channels: usize) -> Self {
        Self {
            kind,
            kernel,
            stride,
            out_channels,
            groups: 1,
            norm: true,
            bias: false,
            activation: Activation::leaky(),
        }
    }

    pub fn conv(kernel: [usize; 3], stride: [usize; 3], out_channels: usize) -> Self {
        Self::learnable(LayerKind::Conv, kernel, stride, out_channels)
    }

    pub fn deconv(kernel: [usize; 3], stride: [usize; 3], out_channels: usize) -> Self {
        Self::learnable(LayerKind::Deconv, kernel, stride, out_channels)
    }

    /// Output head: no normalization, a bias, tanh.
    pub fn head(out_channels: usize) -> Self {
        Self { norm: false, bias: true, activation: Activation::Tanh, ..Self::conv([3; 3], [1; 3], out_channels) }
    }

    fn parameterless(kind: LayerKind, groups: usize) -> Self {
        Self {
            kind,
            kernel: [1; 3],
            stride: [1; 3],
            out_channels: 0,
            groups,
            norm: false,
            bias: false,
            activation: Activation::Identity,
        }
    }

    pub fn gap() -> Self {
        Self::parameterless(LayerKind::Gap, 1)
    }

    pub fn shuffle(groups: usize) -> Self {
        Self::parameterless(LayerKind::Shuffle, groups)
    }

    pub fn crop() -> Self {
        Self::parameterless(LayerKind::Crop, 1)
    }

    pub fn conv_spec(&self, in_channels: usize) -> ConvSpec {
        let spec = if self.kind == LayerKind::Deconv {
            ConvSpec::deconv(in_channels, self.out_channels, self.kernel, self.stride)
        } else {
            ConvSpec::conv(in_channels, self.out_channels, self.kernel, self.stride)
        };
        spec.with_groups(self.groups).with_bias(self.bias)
    }
}

/// Channel count and spatial extent `[T, H, W]` of the network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputGeometry {
    pub channels: usize,
    pub dims: [usize; 3],
}

/// A complete network description: encoder and decoder layer lists plus the
/// input geometry and the cropped output volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchProfile {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub input: InputGeometry,
    pub output: [usize; 3],
    /// Width divisor the profile was derived with (1 at full scale).
    pub channel_divisor: usize,
}

/// Shape of one layer output, channels first.
pub type Shape = [usize; 4];

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NamedShape {
    pub name: String,
    pub shape: Shape,
}

pub const FULL_TIME: usize = 896;
pub const FULL_RECEIVERS: usize = 40;
pub const FULL_SOURCES: usize = 8;
pub const FULL_OUTPUT: [usize; 3] = [350, 400, 400];

fn enc_table() -> Vec<LayerSpec> {
    let c = LayerSpec::conv;
    let k3 = [3, 3, 3];
    let one = [1, 1, 1];
    vec![
        c([7, 3, 3], [3, 1, 1], 64),
        c(k3, one, 64),
        c(k3, [2, 1, 1], 64),
        c(k3, one, 64),
        c(k3, [2, 2, 2], 128),
        c(k3, one, 128),
        c(k3, [2, 1, 1], 128),
        c(k3, one, 128),
        c(k3, [2, 2, 2], 256),
        c(k3, one, 256),
        c(k3, [2, 1, 1], 512),
        c(k3, one, 512),
        c(k3, [2, 2, 2], 512),
        LayerSpec::gap(),
    ]
}

/// Decoder upsampling stages as (kernel, stride, width).
const DEC_STAGES: [([usize; 3], [usize; 3], usize); 6] = [
    ([4, 4, 4], [2, 2, 2], 256),
    ([4, 4, 4], [2, 2, 2], 128),
    ([4, 4, 4], [2, 2, 2], 64),
    ([5, 4, 4], [3, 2, 2], 32),
    ([5, 7, 7], [3, 5, 5], 16),
    ([7, 7, 7], [5, 5, 5], 4),
];

fn dec_table(stages: &[([usize; 3], [usize; 3], usize)]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for &(k, s, c) in stages {
        layers.push(LayerSpec::deconv(k, s, c));
        layers.push(LayerSpec::conv([3, 3, 3], [1, 1, 1], c));
    }
    layers.push(LayerSpec::head(1));
    layers.push(LayerSpec::crop());
    layers
}

impl ArchProfile {
    /// The baseline network at full scale.
    pub fn full(input: InputGeometry) -> Self {
        Self {
            encoder: enc_table(),
            decoder: dec_table(&DEC_STAGES),
            input,
            output: FULL_OUTPUT,
            channel_divisor: 1,
        }
    }

    pub fn full_default() -> Self {
        Self::full(InputGeometry { channels: FULL_SOURCES, dims: [FULL_TIME, FULL_RECEIVERS, FULL_RECEIVERS] })
    }

    pub fn layers(&self) -> impl Iterator<Item = (Side, &LayerSpec)> {
        self.encoder.iter().map(|l| (Side::Encoder, l)).chain(self.decoder.iter().map(|l| (Side::Decoder, l)))
    }

    /// Role names of every layer in order, e.g. `enc.conv1_2`, `dec.deconv3_1`.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = side_names(&self.encoder, "enc");
        names.extend(side_names(&self.decoder, "dec"));
        names
    }

    pub fn validate(&self) -> Result<()> {
        infer_shapes(self).map(|_| ())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let i = &self.input;
        writeln!(s, "input {} {} {} {}", i.channels, i.dims[0], i.dims[1], i.dims[2]).unwrap();
        writeln!(s, "output {} {} {}", self.output[0], self.output[1], self.output[2]).unwrap();
        writeln!(s, "divisor {}", self.channel_divisor).unwrap();
        for (side, l) in self.layers() {
            let tag = side.tag();
            match l.kind {
                LayerKind::Gap | LayerKind::Crop => writeln!(s, "{tag} {}", l.kind.token()),
                LayerKind::Shuffle => writeln!(s, "{tag} shuffle {}", l.groups),
                _ => {
                    let mut line = format!(
                        "{tag} {} {} {} {} {} {}",
                        l.kind.token(),
                        triple(l.kernel),
                        triple(l.stride),
                        l.out_channels,
                        l.groups,
                        activation_token(l.activation)
                    );
                    if l.norm {
                        line.push_str(" bn");
                    }
                    if l.bias {
                        line.push_str(" bias");
                    }
                    writeln!(s, "{line}")
                }
            }
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut input = None;
        let mut output = None;
        let mut divisor = 1;
        let (mut encoder, mut decoder) = (Vec::new(), Vec::new());
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Format(format!("profile line {}: {msg}: {raw:?}", no + 1));
            let toks: Vec<&str> = line.split_whitespace().collect();
            let nums = |from: usize, n: usize| -> Result<Vec<usize>> {
                if toks.len() != from + n {
                    return Err(bad(&format!("expected {n} values")));
                }
                toks[from..].iter().map(|t| t.parse().map_err(|_| bad("not an integer"))).collect()
            };
            match toks[0] {
                "input" => {
                    let v = nums(1, 4)?;
                    input = Some(InputGeometry { channels: v[0], dims: [v[1], v[2], v[3]] });
                }
                "output" => {
                    let v = nums(1, 3)?;
                    output = Some([v[0], v[1], v[2]]);
                }
                "divisor" => divisor = nums(1, 1)?[0],
                "enc" | "dec" => {
                    let layer = parse_layer(&toks[1..]).map_err(|m| bad(&m))?;
                    if toks[0] == "enc" { &mut encoder } else { &mut decoder }.push(layer);
                }
                _ => return Err(bad("unknown directive")),
            }
        }
        let profile = Self {
            encoder,
            decoder,
            input: input.ok_or_else(|| Error::Format("profile has no input line".into()))?,
            output: output.ok_or_else(|| Error::Format("profile has no output line".into()))?,
            channel_divisor: divisor,
        };
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

impl Side {
    fn tag(self) -> &'static str {
        match self {
            Side::Encoder => "enc",
            Side::Decoder => "dec",
        }
    }
}

fn triple(v: [usize; 3]) -> String {
    format!("{}x{}x{}", v[0], v[1], v[2])
}

fn parse_triple(t: &str) -> Option<[usize; 3]> {
    let v: Vec<usize> = t.split('x').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

fn activation_token(a: Activation) -> String {
    match a {
        Activation::LeakyRelu(s) if s == crate::nn::LEAKY_SLOPE => "leaky".into(),
        Activation::LeakyRelu(s) => format!("leaky:{s}"),
        Activation::Tanh => "tanh".into(),
        Activation::Identity => "none".into(),
    }
}

fn parse_activation(t: &str) -> Option<Activation> {
    match t {
        "leaky" => Some(Activation::leaky()),
        "tanh" => Some(Activation::Tanh),
        "none" => Some(Activation::Identity),
        _ => t.strip_prefix("leaky:")?.parse().ok().map(Activation::LeakyRelu),
    }
}

fn parse_layer(toks: &[&str]) -> std::result::Result<LayerSpec, String> {
    let kind = toks.first().ok_or("missing layer kind")?;
    match *kind {
        "gap" | "crop" if toks.len() == 1 => {
            Ok(if *kind == "gap" { LayerSpec::gap() } else { LayerSpec::crop() })
        }
        "shuffle" if toks.len() == 2 => {
            Ok(LayerSpec::shuffle(toks[1].parse().map_err(|_| "bad shuffle group count")?))
        }
        "conv" | "deconv" if toks.len() >= 6 => {
            let kernel = parse_triple(toks[1]).ok_or("bad kernel")?;
            let stride = parse_triple(toks[2]).ok_or("bad stride")?;
            let out_channels = toks[3].parse().map_err(|_| "bad channel count")?;
            let groups = toks[4].parse().map_err(|_| "bad group count")?;
            let activation = parse_activation(toks[5]).ok_or("bad activation")?;
            let mut norm = false;
            let mut bias = false;
            for flag in &toks[6..] {
                match *flag {
                    "bn" => norm = true,
                    "bias" => bias = true,
                    other => return Err(format!("unknown flag {other}")),
                }
            }
            let kind = if *kind == "conv" { LayerKind::Conv } else { LayerKind::Deconv };
            Ok(LayerSpec { kind, kernel, stride, out_channels, groups, norm, bias, activation })
        }
        _ => Err("malformed layer".into()),
    }
}

/// Names learnable layers by stage: a stage opens at every strided or
/// transposed layer and holds at most two layers. Single-layer stages drop
/// the sub-index (`conv7`).
fn side_names(layers: &[LayerSpec], tag: &str) -> Vec<String> {
    let mut stage_of = Vec::with_capacity(layers.len());
    let (mut stage, mut sub) = (0usize, 0usize);
    let mut stage_kind = "conv";
    for l in layers {
        if l.kind.is_learnable() {
            let opens = l.kind == LayerKind::Deconv || l.stride != [1, 1, 1] || sub == 0 || sub == 2;
            if opens {
                stage += 1;
                sub = 0;
                stage_kind = l.kind.token();
            }
            sub += 1;
            stage_of.push(Some((stage, sub, stage_kind)));
        } else {
            stage_of.push(None);
        }
    }
    let stage_len = |s: usize| stage_of.iter().flatten().filter(|(st, _, _)| *st == s).count();
    let mut counts = std::collections::HashMap::new();
    layers
        .iter()
        .zip(&stage_of)
        .map(|(l, st)| match st {
            Some((s, _, kind)) if stage_len(*s) == 1 => format!("{tag}.{kind}{s}"),
            Some((s, k, kind)) => format!("{tag}.{kind}{s}_{k}"),
            None => {
                let n = counts.entry(l.kind).or_insert(0usize);
                *n += 1;
                let base = format!("{tag}.{}", l.kind.token());
                if *n == 1 { base } else { format!("{base}{n}") }
            }
        })
        .collect()
}

/// Whether a learnable layer is the second layer of its stage, the slot
/// that may hold an invertible module.
pub(crate) fn is_second_layer(name: &str) -> bool {
    name.ends_with("_2")
}

/// Applies one layer to an input shape.
pub(crate) fn layer_output(layer: &LayerSpec, input: Shape, output: [usize; 3], name: &str) -> Result<Shape> {
    let [c, t, h, w] = input;
    match layer.kind {
        LayerKind::Conv | LayerKind::Deconv => {
            let spec = layer.conv_spec(c);
            spec.validate().map_err(|e| spec_err!("layer {name}: {e}"))?;
            let d = spec.output_dims([t, h, w]).map_err(|e| spec_err!("layer {name}: {e}"))?;
            Ok([layer.out_channels, d[0], d[1], d[2]])
        }
        LayerKind::Gap => Ok([c, 1, 1, 1]),
        LayerKind::Shuffle => {
            if layer.groups == 0 || c % layer.groups != 0 {
                return Err(spec_err!("layer {name}: {c} channels not divisible by {} shuffle groups", layer.groups));
            }
            Ok(input)
        }
        LayerKind::Crop => {
            for (axis, (&have, &want)) in ["depth", "height", "width"].iter().zip([t, h, w].iter().zip(&output)) {
                if want == 0 || want > have {
                    return Err(spec_err!("layer {name}: cannot crop {axis} {have} to {want}"));
                }
            }
            Ok([c, output[0], output[1], output[2]])
        }
    }
}

/// Output shape of every layer, in order. Purely symbolic.
pub fn infer_shapes(profile: &ArchProfile) -> Result<Vec<NamedShape>> {
    let i = profile.input;
    if i.channels == 0 || i.dims.contains(&0) {
        return Err(spec_err!("input geometry {i:?} has an empty dim"));
    }
    let mut shape = [i.channels, i.dims[0], i.dims[1], i.dims[2]];
    let mut out = Vec::new();
    for ((_, layer), name) in profile.layers().zip(profile.layer_names()) {
        shape = layer_output(layer, shape, profile.output, &name)?;
        out.push(NamedShape { name, shape });
    }
    Ok(out)
}

/// Smallest-product stride pair `(a, b)` with `a ≤ max.0`, `b ≤ max.1` and
/// `input · a · b ≥ target`; ties go to the larger first stride.
fn stride_pair(input: usize, target: usize, max: (usize, usize)) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for a in (1..=max.0).rev() {
        for b in 1..=max.1 {
            if input * a * b >= target && best.is_none_or(|(x, y)| a * b < x * y) {
                best = Some((a, b));
            }
        }
    }
    best
}

fn scale_width(width: usize, divisor: usize) -> Result<usize> {
    if width < divisor {
        return Ok(2);
    }
    if width % divisor != 0 {
        return Err(spec_err!("channel width {width} is not divisible by {divisor}"));
    }
    Ok((width / divisor).max(2))
}

/// The baseline topology scaled for small machines: every width divided by
/// `channel_divisor` (widths below the divisor become 2; the output head
/// stays at 1), and the strides of the last two upsampling stages reduced
/// to the smallest that still reach `output`.
pub fn desk_profile(channel_divisor: usize, input: InputGeometry, output: [usize; 3]) -> Result<ArchProfile> {
    if channel_divisor == 0 {
        return Err(spec_err!("channel divisor must be positive"));
    }
    let mut encoder = enc_table();
    for l in encoder.iter_mut().filter(|l| l.kind.is_learnable()) {
        l.out_channels = scale_width(l.out_channels, channel_divisor)?;
    }
    let mut stages = DEC_STAGES;
    for st in stages.iter_mut() {
        st.2 = scale_width(st.2, channel_divisor)?;
    }
    let mut vol = [1usize; 3];
    for st in &stages[..4] {
        for d in 0..3 {
            vol[d] *= st.1[d];
        }
    }
    let (mut s5, mut s6) = ([1; 3], [1; 3]);
    for d in 0..3 {
        let (a, b) = stride_pair(vol[d], output[d], (DEC_STAGES[4].1[d], DEC_STAGES[5].1[d])).ok_or_else(|| {
            spec_err!("output extent {} is unreachable from decoder extent {} in dim {d}", output[d], vol[d])
        })?;
        s5[d] = a;
        s6[d] = b;
    }
    stages[4].1 = s5;
    stages[4].0 = s5.map(|s| s + 2);
    stages[5].1 = s6;
    stages[5].0 = s6.map(|s| s + 2);
    let profile = ArchProfile { encoder, decoder: dec_table(&stages), input, output, channel_divisor };
    profile.validate()?;
    Ok(profile)
}
