//! Instantiated networks: inference, training forward with a tape, and
//! backward.

use super::plan::{build_plan, ModelPlan, ModelVariant, PlanOp};
use super::profile::ArchProfile;
use crate::error::{shape_err, Result};
use crate::invertible::InvertibleModule;
use crate::nn::{
    center_crop, center_crop_backward, channel_shuffle, channel_shuffle_backward, global_avg_pool,
    global_avg_pool_backward, BlockCache, ConvBlock, NormMode, ParamRef,
};
use crate::tensor::{Real, Rng, Tensor};

#[derive(Clone, Debug)]
pub enum Node<T: Real> {
    Block(ConvBlock<T>),
    Invertible(InvertibleModule<T>),
    Shuffle(usize),
    Gap,
    Crop([usize; 3]),
}

/// What each node retains for its backward pass during training.
#[derive(Clone, Debug)]
pub enum TapeEntry<T: Real> {
    Block(BlockCache<T>),
    /// Output of an invertible module; its interior is recomputed.
    Boundary(Tensor<T>),
    Shape(Vec<usize>),
    None,
}

impl<T: Real> TapeEntry<T> {
    pub fn stored_elements(&self) -> usize {
        match self {
            TapeEntry::Block(c) => c.stored_elements(),
            TapeEntry::Boundary(y) => y.numel(),
            _ => 0,
        }
    }
}

/// Activations retained by a training forward pass, one entry per node.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Real> {
    pub entries: Vec<(String, TapeEntry<T>)>,
}

impl<T: Real> Tape<T> {
    /// `(node, stored elements)` for every node that stores anything.
    pub fn events(&self) -> Vec<(String, usize)> {
        self.entries
            .iter()
            .filter(|(_, e)| !matches!(e, TapeEntry::Shape(_) | TapeEntry::None))
            .map(|(n, e)| (n.clone(), e.stored_elements()))
            .collect()
    }

    pub fn stored_elements(&self) -> usize {
        self.entries.iter().map(|(_, e)| e.stored_elements()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    plan: ModelPlan,
    nodes: Vec<Node<T>>,
}

/// Builds the plan for `variant` over `profile` and instantiates it.
pub fn build_model<T: Real>(variant: ModelVariant, profile: &ArchProfile, rng: &mut Rng) -> Result<Model<T>> {
    Model::from_plan(build_plan(variant, profile)?, rng)
}

impl<T: Real> Model<T> {
    pub fn from_plan(plan: ModelPlan, rng: &mut Rng) -> Result<Self> {
        let nodes = plan
            .nodes
            .iter()
            .map(|n| {
                Ok(match n.op {
                    PlanOp::Layer { spec, norm, activation } => Node::Block(ConvBlock::new(spec, norm, activation, rng)?),
                    PlanOp::Invertible { channels, depth, groups, bias } => {
                        Node::Invertible(InvertibleModule::new(channels, depth, groups, bias, rng)?)
                    }
                    PlanOp::Shuffle { groups } => Node::Shuffle(groups),
                    PlanOp::Gap => Node::Gap,
                    PlanOp::Crop { target } => Node::Crop(target),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { plan, nodes })
    }

    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let i = self.plan.input;
        let want = [i.channels, i.dims[0], i.dims[1], i.dims[2]];
        if x.rank() != 5 || x.dims()[1..] != want {
            return Err(shape_err!("model expects N×{want:?} input, got {:?}", x.dims()));
        }
        Ok(())
    }

    /// Forward pass retaining nothing.
    pub fn forward(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for node in &mut self.nodes {
            h = match node {
                Node::Block(b) => b.forward(&h, mode)?,
                Node::Invertible(m) => m.forward(&h, mode)?,
                Node::Shuffle(g) => channel_shuffle(&h, *g)?,
                Node::Gap => global_avg_pool(&h)?,
                Node::Crop(t) => center_crop(&h, *t)?,
            };
        }
        Ok(h)
    }

    /// Training forward pass with batch statistics, returning the output and
    /// the tape needed by [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut tape = Tape { entries: Vec::with_capacity(self.nodes.len()) };
        for (node, pn) in self.nodes.iter_mut().zip(&self.plan.nodes) {
            let (y, entry) = match node {
                Node::Block(b) => {
                    let (y, c) = b.forward_cached(&h, NormMode::TRAIN)?;
                    (y, TapeEntry::Block(c))
                }
                Node::Invertible(m) => {
                    let y = m.forward(&h, NormMode::TRAIN)?;
                    (y.clone(), TapeEntry::Boundary(y))
                }
                Node::Shuffle(g) => (channel_shuffle(&h, *g)?, TapeEntry::None),
                Node::Gap => (global_avg_pool(&h)?, TapeEntry::Shape(h.dims().to_vec())),
                Node::Crop(t) => (center_crop(&h, *t)?, TapeEntry::Shape(h.dims().to_vec())),
            };
            tape.entries.push((pn.name.clone(), entry));
            h = y;
        }
        Ok((h, tape))
    }

    /// Backpropagates `grad_out` through the tape, accumulating parameter
    /// gradients, and returns the input gradient. Consumes the tape so each
    /// entry is freed as soon as its node is done.
    pub fn backward(&mut self, grad_out: &Tensor<T>, tape: Tape<T>) -> Result<Tensor<T>> {
        if tape.entries.len() != self.nodes.len() {
            return Err(shape_err!("tape has {} entries for {} nodes", tape.entries.len(), self.nodes.len()));
        }
        let mut g = grad_out.clone();
        for (node, (_, entry)) in self.nodes.iter_mut().zip(tape.entries).rev() {
            g = match (node, entry) {
                (Node::Block(b), TapeEntry::Block(c)) => b.backward(&g, &c)?,
                (Node::Invertible(m), TapeEntry::Boundary(y)) => m.backward(&g, &y)?,
                (Node::Shuffle(groups), TapeEntry::None) => channel_shuffle_backward(&g, *groups)?,
                (Node::Gap, TapeEntry::Shape(d)) => global_avg_pool_backward(&g, &d)?,
                (Node::Crop(_), TapeEntry::Shape(d)) => center_crop_backward(&g, &d)?,
                _ => return Err(shape_err!("tape does not match the model")),
            };
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            match node {
                Node::Block(b) => b.zero_grad(),
                Node::Invertible(m) => m.zero_grad(),
                _ => {}
            }
        }
    }

    /// Every trainable tensor with its gradient, in a stable order.
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        for (node, pn) in self.nodes.iter_mut().zip(&self.plan.nodes) {
            match node {
                Node::Block(b) => b.params_mut(&pn.name, &mut out),
                Node::Invertible(m) => m.params_mut(&pn.name, &mut out),
                _ => {}
            }
        }
        out
    }

    /// Normalization running statistics, in a stable order.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (node, pn) in self.nodes.iter_mut().zip(&self.plan.nodes) {
            match node {
                Node::Block(b) => b.buffers_mut(&pn.name, &mut out),
                Node::Invertible(m) => m.buffers_mut(&pn.name, &mut out),
                _ => {}
            }
        }
        out
    }

    /// Total trainable scalars, normalization affine included.
    pub fn num_trainable(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.numel()).sum()
    }
}
