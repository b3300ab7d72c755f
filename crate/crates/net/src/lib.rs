//! Networked pieces of the replay harness: the proxy pair, shaped streams,
//! backend HTTP clients and the study service.

pub mod backends;
pub mod proxy;
pub mod shaper;
pub mod study_service;
