//! Shared test helpers: fixtures, random generators, brute-force query
//! oracle, validation mutants, snapshot transparency harness.
#![allow(dead_code)]

pub mod gen;
pub mod mutants;
pub mod oracle;
pub mod transparency;

use subjekt_core::model_io::parse_definition;
use subjekt_core::ProcessDefinition;

pub const INTERNAL_ORDER: &str = include_str!("../../fixtures/internal_order.json");

pub fn internal_order() -> ProcessDefinition {
    parse_definition(INTERNAL_ORDER.as_bytes()).expect("fixture parses").process
}
