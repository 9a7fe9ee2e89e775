pub mod align;
pub mod audio;
pub mod config;
pub mod corpus;
pub mod lang;
pub mod phoneme;
pub mod qa;
pub mod script;
pub mod select;
pub mod store;
pub mod synth;
