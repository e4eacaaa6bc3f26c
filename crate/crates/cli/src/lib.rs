pub mod acceptance;
pub mod commands;
pub mod experiments;
pub mod manifest;
