//! Scene guidance from a language model: the context prompt, the backend
//! call and the word-budgeted refinement of the reply.

mod backend;
mod refine;

pub use backend::{
    query, BackendKind, LlmBackend, MockBackend, RecordedBackend, RecordingBackend, TranscriptEntry,
    DEFAULT_RETAKE_REPLY,
};
#[cfg(feature = "remote")]
pub use backend::{RemoteBackend, RemoteConfig};
pub use refine::{refine, word_count, RefineError, RefinedGuidance};

use crate::world::{CapturedImage, Pose};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

pub const DEFAULT_WORD_BUDGET: usize = 40;
pub const MIN_WORD_BUDGET: usize = 10;

/// Spoken when the backend fails or runs out of time.
pub const FALLBACK_TEXT: &str = "Guidance unavailable, continuing navigation.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("{backend} did not answer within {deadline} s")]
    Timeout { backend: String, deadline: f64 },
    #[error("{backend} failed: {message}")]
    Backend { backend: String, message: String },
}

impl GatewayError {
    pub fn fallback_text(&self) -> &'static str {
        FALLBACK_TEXT
    }
}

/// Everything the model hears about the traveller's situation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavContext {
    pub image: CapturedImage,
    pub current_location: String,
    pub pose: Pose,
    pub destination_name: String,
    pub next_step_instruction: String,
    pub remaining_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAttachment {
    pub scene_tag: String,
    pub asset_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub image_attachment: ImageAttachment,
    pub word_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLlmReply {
    pub text: String,
    pub backend_id: String,
    /// Seconds; simulated for offline backends.
    pub latency: f64,
}

fn system_text(budget: usize) -> String {
    format!(
        "You guide a blind or low-vision pedestrian who is walking a planned route. \
Use the attached photo and the route context to answer in five labeled lines:\n\
DESCRIPTION: what the photo shows, in one short sentence.\n\
LOCATION: where the traveller is now.\n\
SAFETY: whether it is safe to keep walking.\n\
NEXT: the next navigation action.\n\
WARNINGS: hazards or other useful notes, or nothing.\n\
If the photo is taken at a poor angle or shows nothing useful for navigation, add a final line containing only RETAKE.\n\
Use at most {budget} words of spoken content in total. Stay focused on navigation and safety and do not write a detailed scene description."
    )
}

/// Deterministic prompt for one capture.
pub fn build_prompt(ctx: &NavContext, budget: usize) -> PromptBundle {
    let budget = budget.max(MIN_WORD_BUDGET);
    let user_text = format!(
        "Photo: {}\nCurrent location: {}\nDestination: {}\nNext step: {}\nRemaining distance: {} meters",
        ctx.image.scene_tag,
        ctx.current_location,
        ctx.destination_name,
        ctx.next_step_instruction,
        ctx.remaining_distance.max(0.0).round() as u64,
    );
    PromptBundle {
        system_text: system_text(budget),
        user_text,
        image_attachment: ImageAttachment {
            scene_tag: ctx.image.scene_tag.clone(),
            asset_path: ctx.image.asset_path.clone(),
        },
        word_budget: budget,
    }
}

#[cfg(test)]
pub(crate) fn sample_context(scene_tag: &str) -> NavContext {
    NavContext {
        image: CapturedImage {
            id: format!("1000-{scene_tag}"),
            scene_tag: scene_tag.into(),
            navigable_content: true,
            asset_path: None,
            saved_path: None,
            timestamp: 1.0,
            pose_at_capture: Pose::new(3.0, 4.0, 0.0),
        },
        current_location: "12 meters from Quad Path".into(),
        pose: Pose::new(3.0, 4.0, 0.0),
        destination_name: "Library".into(),
        next_step_instruction: "In 45 meters, turn left toward Oak Gate".into(),
        remaining_distance: 120.4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_embeds_every_context_element() {
        let ctx = sample_context("construction-path");
        let bundle = build_prompt(&ctx, 40);
        for needle in [
            "Library",
            "In 45 meters, turn left toward Oak Gate",
            "12 meters from Quad Path",
            "construction-path",
        ] {
            assert!(bundle.user_text.contains(needle), "missing {needle}");
        }
        assert!(bundle.system_text.contains("at most 40 words"));
        for label in ["DESCRIPTION:", "LOCATION:", "SAFETY:", "NEXT:", "WARNINGS:", "RETAKE"] {
            assert!(bundle.system_text.contains(label));
        }
        assert_eq!(bundle.image_attachment.scene_tag, "construction-path");
    }

    #[test]
    fn prompt_is_deterministic() {
        let ctx = sample_context("plaza");
        assert_eq!(build_prompt(&ctx, 40), build_prompt(&ctx, 40));
    }

    #[test]
    fn budget_floor() {
        let bundle = build_prompt(&sample_context("plaza"), 3);
        assert_eq!(bundle.word_budget, MIN_WORD_BUDGET);
    }
}
