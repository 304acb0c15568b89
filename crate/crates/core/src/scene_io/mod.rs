//! Interchange formats: scene manifest, depth rasters, masks and labeled
//! point clouds.

mod camera;
mod depth;
mod manifest;
mod mask;
mod points;

pub use camera::{CameraIntrinsics, Pose4x4, ORTHONORMAL_TOLERANCE};
pub use depth::DepthMap;
pub use manifest::{
    load_manifest, read_mask_file, save_manifest, write_mask_file, FrameEntry, Scene,
    SceneManifest, MANIFEST_FILE,
};
pub use mask::{decode_rle, encode_rle, Bitmap, Granularity, Mask, MaskSource, Runs};
pub use points::{
    instance_color, read_labeled_points, write_labeled_points, LabeledPoint, LabeledPointSet,
    PointFormat, GLPT_MAGIC,
};

#[allow(unused_imports)]
pub(crate) use camera::{cross, normalize, sub};
