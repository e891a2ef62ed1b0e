//! Closed-form parameter and FLOP counts, and the stored-activation ledger of
//! a training forward pass.
//!
//! Conventions:
//! * a convolution's FLOPs are `2 · Cin · Cout · kernel volume · output volume / groups`
//!   (one multiply-add = 2), using the output volume for both strided and
//!   transposed layers;
//! * convolution weights, biases and normalization affine parameters are
//!   reported as separate totals;
//! * normalization, activations, pooling, shuffle, crop and the coupling
//!   additions are counted at one op per element in a separate
//!   `elementwise_flops` total.

use std::fmt::Write as _;

use serde::Serialize;

use crate::arch::{ModelPlan, PlanOp};
use crate::error::Result;
use crate::nn::ConvSpec;

/// Weight elements of one convolution: `Cin · Cout · kernel volume / groups`.
pub fn count_params(spec: &ConvSpec) -> Result<u64> {
    spec.validate()?;
    Ok((spec.in_channels * spec.out_channels) as u64 * spec.kernel_volume() as u64 / spec.groups as u64)
}

/// Multiply-add FLOPs of one convolution applied to a `T×H×W` input.
pub fn count_flops(spec: &ConvSpec, input: [usize; 3]) -> Result<u64> {
    let out = spec.output_dims(input)?;
    Ok(2 * count_params(spec)? * out.iter().map(|&d| d as u64).product::<u64>())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub weights: u64,
    pub biases: u64,
    pub norm_affine: u64,
    pub flops: u64,
    pub elementwise_flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CostTotals {
    pub weights: u64,
    pub biases: u64,
    pub norm_affine: u64,
    pub flops: u64,
    pub elementwise_flops: u64,
}

impl CostTotals {
    /// Headline parameter count: weights, optionally with biases and
    /// normalization affine folded in.
    pub fn params(&self, fold_extras: bool) -> u64 {
        if fold_extras {
            self.weights + self.biases + self.norm_affine
        } else {
            self.weights
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub variant: String,
    pub n_blocks: usize,
    pub layers: Vec<LayerCost>,
    pub totals: CostTotals,
}

impl CostReport {
    /// One JSON object per layer, then a totals record.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for l in &self.layers {
            writeln!(s, "{}", serde_json::to_string(&serde_json::json!({"record": "layer", "layer": l}))?).unwrap();
        }
        let t = &self.totals;
        let totals = serde_json::json!({
            "record": "totals",
            "variant": self.variant,
            "n_blocks": self.n_blocks,
            "params": t.weights,
            "params_with_bias_and_norm": t.params(true),
            "weights": t.weights,
            "biases": t.biases,
            "norm_affine": t.norm_affine,
            "flops": t.flops,
            "gflops": t.flops as f64 / 1e9,
            "elementwise_flops": t.elementwise_flops,
        });
        writeln!(s, "{}", serde_json::to_string(&totals)?).unwrap();
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<24} {:>8} {:>12} {:>8} {:>8} {:>16}", "layer", "kind", "weights", "bias", "norm", "flops").unwrap();
        for l in &self.layers {
            writeln!(
                s,
                "{:<24} {:>8} {:>12} {:>8} {:>8} {:>16}",
                l.name, l.kind, l.weights, l.biases, l.norm_affine, l.flops
            )
            .unwrap();
        }
        let t = &self.totals;
        writeln!(s, "params {:.3}M  gflops {:.2}", t.weights as f64 / 1e6, t.flops as f64 / 1e9).unwrap();
        s
    }
}

fn volume(shape: &[usize]) -> u64 {
    shape.iter().map(|&d| d as u64).product()
}

/// Per-layer and total costs of a single-sample inference pass.
pub fn model_cost(plan: &ModelPlan) -> Result<CostReport> {
    let mut layers = Vec::with_capacity(plan.nodes.len());
    for node in &plan.nodes {
        let in_vol = volume(&node.input[1..]);
        let out_elems = volume(&node.output);
        let mut c = LayerCost { name: node.name.clone(), ..Default::default() };
        match node.op {
            PlanOp::Layer { spec, norm, .. } => {
                c.kind = if spec.transposed { "deconv" } else { "conv" };
                c.weights = count_params(&spec)?;
                c.flops = count_flops(&spec, [node.input[1], node.input[2], node.input[3]])?;
                if spec.bias {
                    c.biases = spec.out_channels as u64;
                }
                if norm {
                    c.norm_affine = 2 * spec.out_channels as u64;
                }
                // bias, normalization and activation
                c.elementwise_flops = out_elems * (1 + u64::from(spec.bias) + u64::from(norm));
            }
            PlanOp::Invertible { .. } => {
                c.kind = "invertible";
                let half = out_elems / 2;
                for spec in node.op.conv_specs() {
                    c.weights += count_params(&spec)?;
                    c.flops += count_flops(&spec, [node.input[1], node.input[2], node.input[3]])?;
                    c.biases += if spec.bias { spec.out_channels as u64 } else { 0 };
                    c.norm_affine += 2 * spec.out_channels as u64;
                    // bias, normalization, activation and the coupling addition
                    c.elementwise_flops += half * (3 + u64::from(spec.bias));
                }
            }
            PlanOp::Shuffle { .. } => {
                c.kind = "shuffle";
                c.elementwise_flops = out_elems;
            }
            PlanOp::Gap => {
                c.kind = "gap";
                c.elementwise_flops = node.input[0] as u64 * in_vol;
            }
            PlanOp::Crop { .. } => {
                c.kind = "crop";
                c.elementwise_flops = out_elems;
            }
        }
        layers.push(c);
    }
    let totals = layers.iter().fold(CostTotals::default(), |mut t, l| {
        t.weights += l.weights;
        t.biases += l.biases;
        t.norm_affine += l.norm_affine;
        t.flops += l.flops;
        t.elementwise_flops += l.elementwise_flops;
        t
    });
    Ok(CostReport {
        variant: plan.variant.kind.name().to_string(),
        n_blocks: plan.variant.n_blocks,
        layers,
        totals,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemoryEvent {
    pub layer: String,
    pub elements: u64,
}

/// Activation elements retained by a training forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemoryLedger {
    pub events: Vec<MemoryEvent>,
    /// Largest stored total plus the live output, over the forward pass.
    pub peak_elements: u64,
    pub total_elements: u64,
}

impl MemoryLedger {
    pub fn bytes(&self, dtype_size: usize) -> u64 {
        self.total_elements * dtype_size as u64
    }
}

/// Simulates a training forward pass over `batch` samples. A plain layer
/// stores its input and its pre-normalization output; an invertible module
/// stores only its output, whatever its depth; parameter-free layers store
/// nothing.
pub fn memory_ledger(plan: &ModelPlan, batch: usize) -> MemoryLedger {
    let b = batch as u64;
    let mut ledger = MemoryLedger::default();
    for node in &plan.nodes {
        let input = b * volume(&node.input);
        let output = b * volume(&node.output);
        let stored = match node.op {
            PlanOp::Layer { .. } => Some(input + output),
            PlanOp::Invertible { .. } => Some(output),
            _ => None,
        };
        if let Some(e) = stored {
            ledger.events.push(MemoryEvent { layer: node.name.clone(), elements: e });
            ledger.total_elements += e;
        }
        ledger.peak_elements = ledger.peak_elements.max(ledger.total_elements + output);
    }
    ledger
}
