//! Point clouds, pointwise maps, geodesics, and the synthetic shape generator.

mod cloud;
mod generator;
mod geodesic;
pub mod io;

pub use cloud::{
    flip, random_rotation, random_rotation_within, rotation_about, subsample, Axis, IndexMap, PointCloud,
    ShapePairSample, MAX_TILT_DEG, MIN_POINTS,
};
pub use generator::{
    gen_dataset, gen_pair, gen_shape, gen_shape_posed, BodyTemplate, GeneratedPair, LimbPose, Partiality, Pose,
    CUT_FRACTION, HOLE_COUNT, HOLE_FRACTION, MAX_REMOVED_FRACTION,
};
pub use geodesic::{geodesics, GeodesicField, DEFAULT_KNN, DIAMETER_SOURCES};
