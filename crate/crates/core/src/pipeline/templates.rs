use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Request sent to the text model; `{Raw_Text}` is the user's prompt.
pub const REWRITE_TEMPLATE: &str = "Optimize this prompt into a single, high-quality, photorealistic physical object description, focusing on realistic materials, detailed textures, and authentic visual qualities: {Raw_Text}.";

/// Appended to the rewritten prompt before text-to-image generation.
pub const REALISM_TEMPLATE: &str = "{Text_Prompt}, real camera shot, real photograph, pure white background with no shadows, complete object, high-quality photography, macro lens detail, professional studio lighting.";

/// Instruction for the four-panel image edit.
pub const EDIT_PROMPT: &str = "Edit Image, photorealistic micro-refinement only, make it a real object; strictly preserve exact composition and framing (NO recomposition); lock camera parameters (position, rotation, FOV, focal length); lock scale and subject position; preserve exact geometry, silhouette and perspective; fix tiny artifacts; refine textures and micro-details; keep colors and lighting exactly the same.";

const RAW_SLOT: &str = "{Raw_Text}";
const TEXT_SLOT: &str = "{Text_Prompt}";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPrompt {
    pub raw: String,
    pub rewritten: String,
    pub realism_suffixed: String,
}

pub fn rewrite_request(raw: &str) -> Result<String> {
    if raw.trim().is_empty() {
        return Err(Error::invalid("prompt text is empty"));
    }
    Ok(REWRITE_TEMPLATE.replacen(RAW_SLOT, raw, 1))
}

/// Inverse of [`rewrite_request`]; `None` if `request` does not follow the template.
pub fn raw_from_request(request: &str) -> Option<&str> {
    let (head, tail) = REWRITE_TEMPLATE.split_once(RAW_SLOT)?;
    request.strip_prefix(head)?.strip_suffix(tail)
}

fn realism_suffix() -> &'static str {
    REALISM_TEMPLATE.strip_prefix(TEXT_SLOT).expect("template starts with the text slot")
}

/// Rewritten text plus the realistic-constraints suffix. The suffix is never doubled.
pub fn build_generation_prompt(prompt: &TextPrompt) -> Result<String> {
    if prompt.rewritten.is_empty() {
        return Err(Error::invalid("prompt has not been rewritten"));
    }
    let text = prompt.rewritten.strip_suffix(realism_suffix()).unwrap_or(&prompt.rewritten);
    Ok(REALISM_TEMPLATE.replacen(TEXT_SLOT, text, 1))
}

pub fn build_edit_prompt() -> &'static str {
    EDIT_PROMPT
}
