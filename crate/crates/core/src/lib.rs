//! Retrieval-augmented extraction and evaluation for electrocatalysis literature.

pub mod cli;
pub mod clock;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod index;
pub mod ingest;
pub mod rag;
pub mod service;
pub mod text;
pub mod workbench;
