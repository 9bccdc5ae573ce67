//! Synthetic paired 2D/3D hand data.

pub mod camera;
pub mod dataset;
pub mod io;
pub mod normalize;
pub mod skeleton;

pub use camera::{project, Camera};
pub use dataset::{augment, augment_with, generate_dataset, label_mask, PoseSample};
pub use normalize::{normalize_pose, wrist_to_palm, NormFlags};
pub use skeleton::{forward_kinematics, HandSkeleton, Handedness, DOF, NUM_JOINTS};
