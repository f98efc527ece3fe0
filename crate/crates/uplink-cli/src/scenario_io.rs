//! Scenario loading: built-in names or strict TOML files.

use std::fs;
use std::path::Path;

use thiserror::Error;
use uplink_core::scenario::Scenario;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read scenario {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    /// Parse errors carry the offending key path and the TOML line/column.
    #[error("cannot parse scenario {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid scenario {path}: {source}")]
    Invalid {
        path: String,
        source: uplink_core::Error,
    },
}

/// Resolve a scenario argument: a built-in name (`paper-default`) or a path
/// to a TOML file. Unknown keys are rejected; the result is fully validated.
pub fn load(spec: &str) -> Result<Scenario, LoadError> {
    if let Some(scenario) = Scenario::builtin(spec) {
        return Ok(scenario);
    }
    let text = fs::read_to_string(Path::new(spec)).map_err(|source| LoadError::Read {
        path: spec.to_string(),
        source,
    })?;
    let scenario = parse(&text).map_err(|detail| LoadError::Parse {
        path: spec.to_string(),
        detail,
    })?;
    scenario.validate().map_err(|source| LoadError::Invalid {
        path: spec.to_string(),
        source,
    })?;
    Ok(scenario)
}

/// Strict TOML parse; errors name the key path and position.
pub fn parse(text: &str) -> Result<Scenario, String> {
    let deserializer = toml::Deserializer::parse(text).map_err(|e| e.to_string())?;
    serde_path_to_error::deserialize(deserializer).map_err(|e| {
        let path = e.path().to_string();
        if path.is_empty() || path == "." {
            format!("{}", e.inner())
        } else {
            format!("at key `{path}`: {}", e.inner())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_resolves() {
        let s = load("paper-default").unwrap();
        assert_eq!(s.run_length, 60.0);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let s = parse("run_length = 5.0\n").unwrap();
        assert_eq!(s.run_length, 5.0);
        assert_eq!(s.seed, 7);
        assert_eq!(s.limits.max_encoder_bps, 20e6);
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let err = parse("run_length = 5.0\n[predictor]\ngamme = 0.9\n").unwrap_err();
        assert!(err.contains("predictor"), "{err}");
        let err = parse("not_a_field = 1\n").unwrap_err();
        assert!(err.contains("not_a_field"), "{err}");
    }

    #[test]
    fn full_roundtrip_through_toml() {
        let s = Scenario::paper_default();
        let text = toml::to_string(&s).unwrap();
        let back = parse(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn missing_file_is_a_read_error() {
        assert!(matches!(
            load("/no/such/scenario.toml"),
            Err(LoadError::Read { .. })
        ));
    }

    #[test]
    fn invalid_scenario_reports_section() {
        let err = parse("[capacity]\nsegments = [{ start = 1.0, bps = 1e6 }]\n")
            .map(|s| s.validate())
            .unwrap()
            .unwrap_err();
        assert!(format!("{err}").contains("capacity"));
    }
}
