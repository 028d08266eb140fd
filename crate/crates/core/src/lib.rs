pub mod augment;
pub mod image;
pub mod rng;
pub mod volume_io;
pub mod similarity;
pub mod matcher;
pub mod segmenter;
pub mod phantom;
pub mod pipeline;
pub mod eval;
