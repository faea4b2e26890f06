//! Socio-economic indicator regression from daytime imagery, reproduced at desk
//! scale: census asset aggregation, a micro-CNN trained with momentum SGD,
//! transfer-learning heads, occlusion / edge / temporal analyses and an OLS
//! repeated-sampling engine, all exercisable on a planted synthetic world.

pub mod census;
pub mod econ;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod spatial;
pub mod transfer;
