//! Network description, variants and instantiation.

mod model;
mod plan;
mod profile;

pub use model::{build_model, Model, Node, Tape, TapeEntry};
pub use plan::{build_plan, ModelPlan, ModelVariant, PlanNode, PlanOp, VariantKind};
pub use profile::{
    desk_profile, infer_shapes, ArchProfile, InputGeometry, LayerKind, LayerSpec, NamedShape, Shape, Side,
    FULL_OUTPUT, FULL_RECEIVERS, FULL_SOURCES, FULL_TIME,
};
