//! Procedural multi-view scenes, rendering, questions and dataset shards.

pub mod dataset;
pub mod generate;
pub mod questions;
pub mod render;
pub mod shard;
pub mod types;

pub use dataset::{build_dataset, generate_dataset, load_dataset, load_split, Dataset, DatasetStats, GenConfig, Split};
pub use generate::{generate_scene, generate_scene_retrying, sample_views, SceneConfig, ViewMode};
pub use questions::{
    answer_oracle, generate_questions, holds, Clause, Description, Program, QaItem, QuestionVocab, Relation, TemplateId,
    PAD_ID,
};
pub use render::{render_view, render_with_ids, Image};
pub use shard::{read_shard, write_shard, SceneRecord};
pub use types::{CameraPose, Color, Material, SceneGraph, SceneObject, Shape, Size};
