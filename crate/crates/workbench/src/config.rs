//! Config resolution: preset or file, then `section.key=value` overrides.

use std::path::Path;

use crr_model::CrrConfig;

use crate::error::{Error, Result};

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `path.to.key=value` assignments. Values are TOML literals; any
/// text that does not parse as one is taken as a string.
pub fn apply_overrides(config: &CrrConfig, sets: &[String]) -> Result<CrrConfig> {
    if sets.is_empty() {
        return Ok(config.clone());
    }
    let mut root = toml::Value::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{set}` is not key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields one part");
        let mut table = root.as_table_mut().expect("config serialises to a table");
        for p in parents {
            table = table
                .get_mut(*p)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown config section `{p}` in `{key}`")))?;
        }
        table.insert(last.to_string(), parse_value(raw.trim()));
    }
    let out: CrrConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    out.validate()?;
    Ok(out)
}

pub fn resolve(file: Option<&Path>, preset: &str, sets: &[String]) -> Result<CrrConfig> {
    let base = match file {
        Some(p) => CrrConfig::load(p)?,
        None => CrrConfig::preset(preset)?,
    };
    apply_overrides(&base, sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let base = CrrConfig::toy();
        let c = apply_overrides(
            &base,
            &[
                "trainer.stage1.iterations=7".into(),
                "scoring.top_t=3".into(),
                "segnet.variant=residual-head".into(),
                "dataset.root=/data/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.trainer.stage1.iterations, 7);
        assert_eq!(c.scoring.top_t, Some(3));
        assert_eq!(c.dataset.root.as_deref(), Some(Path::new("/data/x")));
        assert_ne!(c.segnet, base.segnet);
        assert!(apply_overrides(&base, &["nope.x=1".into()]).is_err());
        assert!(apply_overrides(&base, &["trainer.stage1.iterations".into()]).is_err());
        assert!(apply_overrides(&base, &["scoring.lambda1=-1".into()]).is_err());
    }
}
