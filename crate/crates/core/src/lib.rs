//! Disentangled motion control signals for image-to-video synthesis.
//!
//! A first frame with depth is lifted to a point set and split into motion
//! units: the borderland (unit 0), drag units that follow a rigid 6-DOF
//! path plus a residual, and brush units that carry only a motion
//! strength. Camera motion, unit motion, and strength are composed into a
//! `(T, 5, H, W)` control tensor.
//!
//! ```
//! use motionforge::compose::compose;
//! use motionforge::geometry::CameraIntrinsics;
//! use motionforge::scene::{SceneDomain, UnitPartition};
//! use motionforge::script::MotionScript;
//!
//! let k = CameraIntrinsics::centered(40.0, 32, 24).unwrap();
//! let scene = SceneDomain::from_depth(k, vec![2.0; 32 * 24]).unwrap();
//! let partition = UnitPartition::borderland_only(&scene);
//! let tensor = compose(&scene, &partition, &MotionScript::identity(24)).unwrap();
//! assert_eq!(tensor.shape(), [24, 5, 24, 32]);
//! ```

pub mod compose;
pub mod formats;
pub mod geometry;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod preview;
pub mod scene;
pub mod script;
pub mod tensor;
pub mod trajectory;

pub use geometry::{CameraIntrinsics, Point3, RigidTransform, Vector3};
pub use scene::{Category, Mask, SceneDomain, UnitPartition};
pub use tensor::ControlTensor;
pub use trajectory::TrajectoryField;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/motion-units.md")]
    mod motion_units {}
    #[doc = include_str!("../../../book/src/rigid-fitting.md")]
    mod rigid_fitting {}
    #[doc = include_str!("../../../book/src/camera.md")]
    mod camera {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/control-tensor.md")]
    mod control_tensor {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
