pub mod annotate;
pub mod archive;
pub mod evaluate;
pub mod fixtures;
pub mod genclient;
pub mod metrics;
pub mod pac;
pub mod replay;
pub mod shaper;
pub mod stats;
pub mod study;
