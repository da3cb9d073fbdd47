//! Scenario files: TOML over the preset for the chosen variant, then dotted
//! `key=value` overrides.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use erocket::sim::{ScenarioConfig, Variant};
use toml::{Table, Value};

/// Parses `raw` as a TOML value; bare words fall back to strings.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty segment");
    }
    let mut node = table;
    for seg in &path[..path.len() - 1] {
        let entry = node
            .entry(seg.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{seg}` is not a table"))?;
    }
    node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// The user's table (file plus overrides), before merging with a preset.
pub fn user_table(path: Option<&Path>, overrides: &[String]) -> Result<Table> {
    let mut table = match path {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .parse::<Table>()
            .with_context(|| format!("parsing {}", p.display()))?,
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Ok(table)
}

pub fn resolve(user: Table) -> Result<ScenarioConfig> {
    let variant: Variant = match user.get("variant") {
        Some(v) => v.clone().try_into().context("unknown variant")?,
        None => Variant::Full2d,
    };
    let mut base =
        Table::try_from(ScenarioConfig::preset(variant)).context("serializing preset")?;
    merge(&mut base, user);
    let cfg: ScenarioConfig = Value::Table(base).try_into().context("invalid scenario")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ScenarioConfig> {
    let mut cfg = resolve(user_table(path, overrides)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_creates_nested_keys() {
        let mut t = Table::new();
        apply_override(&mut t, "guidance.k_x=0.5").unwrap();
        apply_override(&mut t, "variant=reduced-lateral").unwrap();
        apply_override(&mut t, "attitude.lqr.q = [1, 2, 3]").unwrap();
        assert_eq!(t["guidance"]["k_x"].as_float(), Some(0.5));
        assert_eq!(t["variant"].as_str(), Some("reduced-lateral"));
        assert_eq!(t["attitude"]["lqr"]["q"].as_array().unwrap().len(), 3);
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
        assert!(apply_override(&mut t, "variant.x=1").is_err());
    }

    #[test]
    fn variant_selects_preset() {
        let mut t = Table::new();
        apply_override(&mut t, "variant=\"reduced-lateral\"").unwrap();
        let cfg = resolve(t).unwrap();
        assert_eq!(cfg, ScenarioConfig::reduced_lateral());
        assert_eq!(resolve(Table::new()).unwrap(), ScenarioConfig::full_2d());
    }

    #[test]
    fn integers_accepted_for_floats() {
        let mut t = Table::new();
        apply_override(&mut t, "duration=5").unwrap();
        assert_eq!(resolve(t).unwrap().duration, 5.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut t = Table::new();
        apply_override(&mut t, "guidance.kx=0.5").unwrap();
        assert!(resolve(t).is_err());
        let mut t = Table::new();
        apply_override(&mut t, "dt=-1").unwrap();
        assert!(resolve(t).is_err());
    }

    #[test]
    fn shipped_configs_match_presets() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for (file, preset) in [
            ("full_2d.toml", ScenarioConfig::full_2d()),
            ("reduced_lateral.toml", ScenarioConfig::reduced_lateral()),
            ("reduced_vertical.toml", ScenarioConfig::reduced_vertical()),
        ] {
            let cfg = load(Some(&dir.join(file)), &[], None).unwrap();
            assert_eq!(cfg, preset, "{file}");
        }
    }
}
