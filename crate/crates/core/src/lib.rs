pub mod capture;
pub mod cli;
pub mod experiments;
pub mod features;
pub mod http;
pub mod model;
pub mod nn;
