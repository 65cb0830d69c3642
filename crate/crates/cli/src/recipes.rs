//! Checked-in experiment recipes.

use crate::config::ExperimentConfig;
use crate::{CliError, Result};

pub const RECIPES: [(&str, &str); 6] = [
    ("sis-exact", include_str!("../recipes/sis-exact.toml")),
    ("sis-state-perception", include_str!("../recipes/sis-state-perception.toml")),
    ("sis-cost-perception", include_str!("../recipes/sis-cost-perception.toml")),
    ("unicycle-exact", include_str!("../recipes/unicycle-exact.toml")),
    ("unicycle-perception", include_str!("../recipes/unicycle-perception.toml")),
    ("lti-theorem1-validation", include_str!("../recipes/lti-theorem1-validation.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    RECIPES.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    RECIPES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ExperimentConfig> {
    let text = source(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown recipe {name:?}; available: {}",
            names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    ExperimentConfig::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_recipe_parses_under_its_own_name() {
        for name in names() {
            let cfg = load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
        }
        assert!(matches!(load("nope"), Err(CliError::Config(_))));
    }
}
