//! Scenario config files: TOML with one table per scenario, or the same
//! layout in JSON. Matrices are row-major nested arrays.
//!
//! ```toml
//! [bm-cdf]
//! mu = 1.0
//! alpha = 0.2
//!
//! [bm-cdf.sweep]
//! variable = "horizon"
//! start = 0.2
//! stop = 10.0
//! points = 50
//! ```

use std::path::Path;

use pathuq::scenarios::{ParamValue, ScenarioConfig, ScenarioId, Sweep};
use serde_json::Value;

/// A config problem located as precisely as the source allows.
#[derive(Debug, thiserror::Error)]
#[error("{location}: {message}")]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

fn err<T>(location: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { location: location.into(), message: message.into() })
}

/// Parsed file contents plus enough of the source text to report line numbers.
pub struct ConfigFile {
    path: String,
    text: String,
    root: serde_json::Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return err(name, format!("cannot read config: {e}")),
        };
        Self::parse(&name, text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn parse(path: &str, text: String, json: bool) -> Result<Self, ConfigError> {
        let root = if json || text.trim_start().starts_with('{') {
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return err(path, "top level must be an object with one table per scenario"),
                Err(e) => return err(format!("{path}:{}:{}", e.line(), e.column()), e.to_string()),
            }
        } else {
            match toml::from_str::<toml::Table>(&text) {
                Ok(t) => match serde_json::to_value(t) {
                    Ok(Value::Object(m)) => m,
                    _ => return err(path, "unsupported TOML values"),
                },
                Err(e) => {
                    let line = e.span().map(|s| text[..s.start].lines().count().max(1));
                    let loc = line.map_or(path.to_string(), |l| format!("{path}:{l}"));
                    return err(loc, e.message().to_string());
                }
            }
        };
        for key in root.keys() {
            if ScenarioId::parse(key).is_none() {
                let loc = self_locate(path, &text, None, key);
                return err(loc, format!("unknown scenario table `{key}`"));
            }
        }
        Ok(Self { path: path.to_string(), text, root })
    }

    fn locate(&self, table: &str, key: &str) -> String {
        self_locate(&self.path, &self.text, Some(table), key)
    }

    /// Applies the table for `cfg.id`, if present, on top of `cfg`.
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<(), ConfigError> {
        let id = cfg.id.name();
        let Some(table) = self.root.get(id) else {
            return Ok(());
        };
        let Some(table) = table.as_object() else {
            return err(self.locate(id, id), format!("`{id}` must be a table"));
        };
        for (key, value) in table {
            let field = format!("[{id}].{key}");
            let at = |m: String| err(format!("{} ({field})", self.locate(id, key)), m);
            match key.as_str() {
                "sweep" => match parse_sweep(value) {
                    Ok(sweep) => {
                        if let Err(e) = cfg.set_sweep(sweep) {
                            return at(e.to_string());
                        }
                    }
                    Err(m) => return at(m),
                },
                "budget_scale" => match value.as_f64() {
                    Some(s) => cfg.budget_scale = s,
                    None => return at("budget_scale must be a number".into()),
                },
                _ => match param_value(value) {
                    Ok(v) => {
                        if let Err(e) = cfg.set(key, v) {
                            return at(e.to_string());
                        }
                    }
                    Err(m) => return at(m),
                },
            }
        }
        Ok(())
    }

    /// Whether the file sets `key` for scenario `id`.
    pub fn sets(&self, id: ScenarioId, key: &str) -> bool {
        self.root.get(id.name()).and_then(Value::as_object).is_some_and(|t| t.contains_key(key))
    }
}

/// `path:line` of the first line mentioning `key` after the header of
/// `table`, or just `path` if none does.
fn self_locate(path: &str, text: &str, table: Option<&str>, key: &str) -> String {
    let mut in_table = table.is_none();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(table) = table {
            if t.starts_with('[') {
                in_table = t.trim_matches(|c| c == '[' || c == ']').trim().starts_with(table);
            }
            if t.starts_with(&format!("\"{table}\"")) {
                in_table = true;
            }
        }
        let mentions = t.starts_with(key) || t.starts_with(&format!("\"{key}\"")) || t.contains(&format!("[{key}]"));
        if in_table && mentions {
            return format!("{path}:{}", i + 1);
        }
    }
    path.to_string()
}

fn number(v: &Value) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("expected a number, got {v}"))
}

/// Converts a file value into a scenario parameter.
pub fn param_value(v: &Value) -> Result<ParamValue, String> {
    match v {
        Value::Bool(b) => Ok(ParamValue::Flag(*b)),
        Value::Number(_) => Ok(ParamValue::Real(number(v)?)),
        Value::Array(rows) => {
            let rows = rows
                .iter()
                .map(|r| match r {
                    Value::Array(xs) => xs.iter().map(number).collect::<Result<Vec<f64>, String>>(),
                    _ => Err("matrices must be nested arrays of rows".to_string()),
                })
                .collect::<Result<Vec<_>, String>>()?;
            Ok(ParamValue::Matrix(rows))
        }
        other => Err(format!("unsupported value {other}")),
    }
}

/// A sweep table: `variable` plus either `values` or `start`/`stop`/`points`.
pub fn parse_sweep(v: &Value) -> Result<Option<Sweep>, String> {
    let Some(t) = v.as_object() else {
        return if v.as_bool() == Some(false) { Ok(None) } else { Err("sweep must be a table or false".into()) };
    };
    for key in t.keys() {
        if !["variable", "values", "start", "stop", "points"].contains(&key.as_str()) {
            return Err(format!("unknown sweep field `{key}`"));
        }
    }
    let variable = t.get("variable").and_then(Value::as_str).ok_or("sweep needs a string `variable`")?.to_string();
    let values = match (t.get("values"), t.get("start"), t.get("stop"), t.get("points")) {
        (Some(Value::Array(xs)), None, None, None) => xs.iter().map(number).collect::<Result<Vec<f64>, String>>()?,
        (None, Some(a), Some(b), Some(n)) => {
            let n = n.as_u64().ok_or("sweep `points` must be a positive integer")? as usize;
            linspace(number(a)?, number(b)?, n)?
        }
        _ => return Err("sweep needs either `values` or all of `start`, `stop`, `points`".into()),
    };
    Ok(Some(Sweep { variable, values }))
}

pub fn linspace(start: f64, stop: f64, points: usize) -> Result<Vec<f64>, String> {
    match points {
        0 => Err("a grid needs at least one point".into()),
        1 => Ok(vec![start]),
        n => Ok((0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect()),
    }
}

/// Parses an inline sweep `name=v1,v2,...` or `name=start:stop:points`.
pub fn parse_inline_sweep(s: &str) -> Result<Sweep, String> {
    let (variable, spec) = s.split_once('=').ok_or("expected name=values")?;
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("bad number `{x}`: {e}"));
    let values = if let [a, b, n] = spec.split(':').collect::<Vec<_>>()[..] {
        let n = n.trim().parse::<usize>().map_err(|e| format!("bad point count `{n}`: {e}"))?;
        linspace(parse(a)?, parse(b)?, n)?
    } else {
        spec.split(',').map(parse).collect::<Result<Vec<_>, _>>()?
    };
    Ok(Sweep { variable: variable.trim().to_string(), values })
}

/// Parses an inline `name=value`, where the value is a number, a boolean,
/// or a JSON nested array.
pub fn parse_inline_param(s: &str) -> Result<(String, ParamValue), String> {
    let (name, value) = s.split_once('=').ok_or("expected name=value")?;
    let v: Value = serde_json::from_str(value.trim()).map_err(|e| format!("bad value `{value}`: {e}"))?;
    Ok((name.trim().to_string(), param_value(&v)?))
}
