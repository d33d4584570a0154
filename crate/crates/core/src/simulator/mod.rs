//! Synthetic stand-in for a detector and its test stream.

mod presets;
mod scene;
mod schedule;
mod source;
pub mod trace;

pub use presets::{build_schedule, preset_schedule, Corruption, Preset};
pub use scene::{
    evaluate_accuracy, sample_scene, Scene, SceneConfig, SceneObject, MAX_OBJECTS_PER_SCENE,
};
pub use schedule::{
    orthogonality_error, planar_rotation, random_rotation, transform_at, DomainSchedule,
    DomainTransform, ScheduleMode, Segment,
};
pub use source::{
    generate_source_model, head_predict, SourceConfig, SourceModel, CLEAN_RECALL_TARGET,
};
