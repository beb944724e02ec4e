//! Scenario presets shipped with the crate.

use crate::config::Scenario;
use crate::error::{CoreError, Result};

const PRESETS: &[(&str, &str)] = &[
    ("nodefault-100bp", include_str!("../presets/nodefault-100bp.toml")),
    ("default-500bp", include_str!("../presets/default-500bp.toml")),
    ("default-500bp-2cds", include_str!("../presets/default-500bp-2cds.toml")),
    ("raredefault-100bp", include_str!("../presets/raredefault-100bp.toml")),
    ("raredefault-100bp-2cds", include_str!("../presets/raredefault-100bp-2cds.toml")),
];

/// Names of the built-in scenarios.
pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Raw TOML text of a preset.
pub fn text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| CoreError::Config(format!("unknown preset '{name}'")))
}

pub fn load(name: &str) -> Result<Scenario> {
    Scenario::from_toml(text(name)?)
}
