//! Model variants and their symbolic layer plans.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::profile::{infer_shapes, is_second_layer, layer_output, ArchProfile, InputGeometry, LayerKind, Shape, Side};
use crate::error::{spec_err, Error, Result};
use crate::invertible::coupling_sub_spec;
use crate::nn::{Activation, ConvSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantKind {
    /// Plain convolutions throughout.
    S,
    /// Plain convolutions with invertible modules.
    I,
    /// Grouped encoder with channel shuffle.
    G,
    /// Grouped encoder with invertible modules.
    Full,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [VariantKind::S, VariantKind::I, VariantKind::G, VariantKind::Full];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::S => "invnet3ds",
            VariantKind::I => "invnet3di",
            VariantKind::G => "invnet3dg",
            VariantKind::Full => "invnet3d",
        }
    }

    pub fn grouped(self) -> bool {
        matches!(self, VariantKind::G | VariantKind::Full)
    }

    pub fn invertible(self) -> bool {
        matches!(self, VariantKind::I | VariantKind::Full)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
            Error::Argument(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// A variant plus the depth of every second-layer slot: the coupling count
/// of each invertible module, or the number of stacked plain layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: VariantKind,
    pub n_blocks: usize,
}

impl ModelVariant {
    pub fn new(kind: VariantKind, n_blocks: usize) -> Self {
        Self { kind, n_blocks }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum PlanOp {
    Layer { spec: ConvSpec, norm: bool, activation: Activation },
    Invertible { channels: usize, depth: usize, groups: usize, bias: bool },
    Shuffle { groups: usize },
    Gap,
    Crop { target: [usize; 3] },
}

impl PlanOp {
    /// Spec of every convolution this op owns.
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        match *self {
            PlanOp::Layer { spec, .. } => vec![spec],
            PlanOp::Invertible { channels, depth, groups, bias } => {
                vec![coupling_sub_spec(channels, groups, bias); 2 * depth]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanNode {
    pub name: String,
    pub op: PlanOp,
    pub input: Shape,
    pub output: Shape,
}

/// Fully resolved, uninstantiated network: every node with its concrete
/// spec and input/output shapes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelPlan {
    pub variant: ModelVariant,
    pub input: InputGeometry,
    pub nodes: Vec<PlanNode>,
}

impl ModelPlan {
    pub fn output_shape(&self) -> Shape {
        self.nodes.last().map_or([self.input.channels, self.input.dims[0], self.input.dims[1], self.input.dims[2]], |n| n.output)
    }

    pub fn output_shapes(&self) -> Vec<Shape> {
        self.nodes.iter().map(|n| n.output).collect()
    }
}

fn check(spec: &ConvSpec, name: &str) -> Result<()> {
    spec.validate().map_err(|e| spec_err!("layer {name}: {e}"))
}

/// Resolves `variant` over `profile`.
///
/// * S keeps the profile as written.
/// * G sets every encoder convolution to `groups = input channels`, makes the
///   last encoder convolution depthwise, and follows every other encoder
///   convolution with a channel shuffle of the same group count.
/// * I replaces every stage's second layer by an invertible module.
/// * Full does both; encoder coupling sub-layers use half the encoder group
///   count, decoder ones stay ungrouped.
///
/// For S and G, `n_blocks > 1` stacks that many copies of each second layer.
pub fn build_plan(variant: ModelVariant, profile: &ArchProfile) -> Result<ModelPlan> {
    if variant.n_blocks == 0 {
        return Err(spec_err!("n_blocks must be at least 1"));
    }
    infer_shapes(profile)?;
    let kind = variant.kind;
    let in_channels = profile.input.channels;
    if kind.grouped() && kind.invertible() && in_channels % 2 != 0 {
        return Err(spec_err!("{kind} needs an even encoder group size, got {in_channels} input channels"));
    }
    let names = profile.layer_names();
    let last_enc = profile.encoder.iter().rposition(|l| l.kind.is_learnable());
    let i = profile.input;
    let mut shape: Shape = [i.channels, i.dims[0], i.dims[1], i.dims[2]];
    let mut nodes = Vec::new();
    let mut push = |name: String, op: PlanOp, shape: &mut Shape| -> Result<()> {
        let input = *shape;
        let output = match op {
            PlanOp::Layer { spec, .. } => {
                let d = spec.output_dims([input[1], input[2], input[3]]).map_err(|e| spec_err!("layer {name}: {e}"))?;
                [spec.out_channels, d[0], d[1], d[2]]
            }
            PlanOp::Gap => [input[0], 1, 1, 1],
            PlanOp::Crop { target } => [input[0], target[0], target[1], target[2]],
            _ => input,
        };
        *shape = output;
        nodes.push(PlanNode { name, op, input, output });
        Ok(())
    };

    for (idx, ((side, layer), name)) in profile.layers().zip(names).enumerate() {
        let enc = side == Side::Encoder;
        match layer.kind {
            LayerKind::Conv | LayerKind::Deconv => {
                let mut layer = *layer;
                let is_last_enc = enc && Some(idx) == last_enc;
                let group_count = if kind.grouped() && enc {
                    layer.groups = if is_last_enc { shape[0] } else { in_channels };
                    Some(layer.groups)
                } else {
                    None
                };
                let spec = layer.conv_spec(shape[0]);
                check(&spec, &name)?;
                let second = is_second_layer(&name);
                let shuffle = group_count.filter(|_| !is_last_enc);
                if second && kind.invertible() {
                    if !spec.is_shape_preserving() {
                        return Err(Error::Structural(format!(
                            "layer {name} cannot hold an invertible module: it is not shape preserving"
                        )));
                    }
                    if spec.in_channels % 2 != 0 {
                        return Err(spec_err!("layer {name}: coupling needs an even width, got {}", spec.in_channels));
                    }
                    let groups = match group_count {
                        Some(g) if g % 2 != 0 => {
                            return Err(spec_err!("layer {name}: odd group size {g} cannot be halved for coupling"))
                        }
                        Some(g) => g / 2,
                        None => 1,
                    };
                    let op = PlanOp::Invertible {
                        channels: spec.in_channels,
                        depth: variant.n_blocks,
                        groups,
                        bias: layer.bias,
                    };
                    for s in op.conv_specs().iter().take(1) {
                        check(s, &name)?;
                    }
                    push(name.clone(), op, &mut shape)?;
                    if let Some(g) = shuffle {
                        push(format!("{name}.shuffle"), PlanOp::Shuffle { groups: g }, &mut shape)?;
                    }
                } else {
                    let copies = if second { variant.n_blocks } else { 1 };
                    for k in 0..copies {
                        let node_name = if copies == 1 { name.clone() } else { format!("{name}.{k}") };
                        let op = PlanOp::Layer { spec, norm: layer.norm, activation: layer.activation };
                        push(node_name.clone(), op, &mut shape)?;
                        if let Some(g) = shuffle {
                            push(format!("{node_name}.shuffle"), PlanOp::Shuffle { groups: g }, &mut shape)?;
                        }
                    }
                }
            }
            _ => {
                let out = layer_output(layer, shape, profile.output, &name)?;
                let op = match layer.kind {
                    LayerKind::Gap => PlanOp::Gap,
                    LayerKind::Shuffle => PlanOp::Shuffle { groups: layer.groups },
                    _ => PlanOp::Crop { target: [out[1], out[2], out[3]] },
                };
                push(name, op, &mut shape)?;
            }
        }
    }
    Ok(ModelPlan { variant, input: profile.input, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::profile::desk_profile;

    fn layer_count(plan: &ModelPlan) -> usize {
        plan.nodes.iter().filter(|n| matches!(n.op, PlanOp::Layer { .. } | PlanOp::Invertible { .. })).count()
    }

    #[test]
    fn variant_names_parse() {
        for v in VariantKind::ALL {
            assert_eq!(v.name().parse::<VariantKind>().unwrap(), v);
        }
        let e = "bogus".parse::<VariantKind>().unwrap_err().to_string();
        assert!(e.contains("invnet3ds") && e.contains("invnet3di") && e.contains("invnet3dg") && e.contains("invnet3d"));
    }

    #[test]
    fn every_variant_has_26_layers() {
        let p = ArchProfile::full_default();
        for kind in VariantKind::ALL {
            let plan = build_plan(ModelVariant::new(kind, 1), &p).unwrap();
            assert_eq!(layer_count(&plan), 26, "{kind}");
            assert_eq!(plan.output_shape(), [1, 350, 400, 400]);
        }
    }

    #[test]
    fn grouped_shapes_match_plain() {
        let p = ArchProfile::full_default();
        let strip = |plan: ModelPlan| -> Vec<Shape> {
            plan.nodes.into_iter().filter(|n| !matches!(n.op, PlanOp::Shuffle { .. })).map(|n| n.output).collect()
        };
        let s = strip(build_plan(ModelVariant::new(VariantKind::S, 1), &p).unwrap());
        let g = strip(build_plan(ModelVariant::new(VariantKind::G, 1), &p).unwrap());
        assert_eq!(s, g);
    }

    #[test]
    fn g_grouping_and_shuffles() {
        let plan = build_plan(ModelVariant::new(VariantKind::G, 1), &ArchProfile::full_default()).unwrap();
        let shuffles = plan.nodes.iter().filter(|n| matches!(n.op, PlanOp::Shuffle { groups: 8 })).count();
        assert_eq!(shuffles, 12);
        let conv7 = plan.nodes.iter().find(|n| n.name == "enc.conv7").unwrap();
        match conv7.op {
            PlanOp::Layer { spec, .. } => assert_eq!(spec.groups, 512),
            _ => panic!(),
        }
        for n in &plan.nodes {
            if let (true, PlanOp::Layer { spec, .. }) = (n.name.starts_with("dec."), n.op) {
                assert_eq!(spec.groups, 1);
            }
        }
    }

    #[test]
    fn full_coupling_groups_are_halved() {
        let plan = build_plan(ModelVariant::new(VariantKind::Full, 2), &ArchProfile::full_default()).unwrap();
        let inv: Vec<_> = plan.nodes.iter().filter_map(|n| match n.op {
            PlanOp::Invertible { groups, depth, .. } => Some((n.name.clone(), groups, depth)),
            _ => None,
        }).collect();
        assert_eq!(inv.len(), 12);
        for (name, groups, depth) in inv {
            assert_eq!(depth, 2);
            assert_eq!(groups, if name.starts_with("enc.") { 4 } else { 1 }, "{name}");
        }
    }

    #[test]
    fn stacked_plain_layers() {
        let p = ArchProfile::full_default();
        let plan = build_plan(ModelVariant::new(VariantKind::G, 3), &p).unwrap();
        assert_eq!(layer_count(&plan), 26 + 2 * 12);
        assert!(plan.nodes.iter().any(|n| n.name == "enc.conv1_2.2"));
    }

    #[test]
    fn odd_group_size_rejected_for_full() {
        let g = InputGeometry { channels: 3, dims: [96, 8, 8] };
        let p = desk_profile(8, g, [24; 3]).unwrap();
        assert!(matches!(build_plan(ModelVariant::new(VariantKind::Full, 1), &p), Err(Error::Spec(_))));
        let e = build_plan(ModelVariant::new(VariantKind::G, 1), &p).unwrap_err().to_string();
        assert!(e.contains("enc.conv1_1"), "{e}");
    }

    #[test]
    fn zero_blocks_rejected() {
        let p = ArchProfile::full_default();
        assert!(build_plan(ModelVariant::new(VariantKind::I, 0), &p).is_err());
    }
}
