use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MonitorConfig, MonitorError, Mode};
use crate::lang::compile;

/// On-disk monitor configuration. `spec_file` is resolved relative to the
/// configuration file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfigFile {
    pub principal: String,
    pub mode: Mode,
    pub spec_file: String,
    #[serde(default)]
    pub justification_goals: BTreeMap<String, String>,
}

pub fn load_monitor_config(path: &Path) -> Result<MonitorConfig, MonitorError> {
    let io = |p: &Path, e: std::io::Error| MonitorError::Config(format!("{}: {e}", p.display()));
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let file: MonitorConfigFile =
        serde_json::from_str(&text).map_err(|e| MonitorError::Config(format!("{}: {e}", path.display())))?;
    let spec_path = path.parent().unwrap_or(Path::new(".")).join(&file.spec_file);
    let spec = fs::read_to_string(&spec_path).map_err(|e| io(&spec_path, e))?;
    let mut config = MonitorConfig::new(&file.principal, file.mode, compile(&spec)?);
    config.justification_goals = file.justification_goals;
    config.check()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_relative_spec() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("s.adl"), "ok(X) :- 'SB' attests booking(X).").unwrap();
        let cfg = dir.path().join("m.json");
        fs::write(
            &cfg,
            r#"{"principal":"DO","mode":"vtt","spec_file":"s.adl","justification_goals":{"/ready_to_fly":"ok"}}"#,
        )
        .unwrap();
        let c = load_monitor_config(&cfg).unwrap();
        assert_eq!(c.mode, Mode::VerifyThenTrust);
        assert_eq!(c.monitor_principal(), "monitor:DO");
        assert_eq!(c.justification_goals["/ready_to_fly"], "ok");
    }

    #[test]
    fn negated_justification_rules_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("s.adl"), "ok(X) :- r(X), not q(X).").unwrap();
        let cfg = dir.path().join("m.json");
        fs::write(
            &cfg,
            r#"{"principal":"DO","mode":"TrustThenVerify","spec_file":"s.adl","justification_goals":{"/x":"ok"}}"#,
        )
        .unwrap();
        assert!(matches!(load_monitor_config(&cfg), Err(MonitorError::Config(_))));
    }
}
