//! Isotropic Gaussian splat scenes, an orthographic differentiable renderer
//! and a latent-to-splat decoder.

mod decoder;
mod render;
mod scene;

pub use decoder::{
    decode_latent, DecodeTrace, Decoder3D, Latent3D, DEFAULT_LATENT_DIM, DEFAULT_SPLATS, RAW_PER_SPLAT, SCALE_MIN,
    SCALE_RANGE,
};
pub use render::{render, render_backward, render_views, rotate_about_vertical, CameraPose, MIN_RESOLUTION};
pub use scene::{
    apply_texture, load_scene, read_scene, save_scene, write_scene, Appearance, GeometryHandle, SceneGrad,
    ToySplatScene, MIN_SCALE,
};

/// Appearance of `scene` (inverse of [`apply_texture`] given its geometry).
pub fn extract_appearance(scene: &ToySplatScene) -> Appearance {
    scene.appearance()
}

pub fn geometry_of(scene: &ToySplatScene) -> GeometryHandle {
    scene.geometry()
}

#[cfg(test)]
mod tests;
