pub mod accountant;
pub mod data;
pub mod experiment;
pub mod method;
pub mod nn;
pub mod unlearn;
