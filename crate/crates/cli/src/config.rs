//! Config files: a TOML or JSON table whose keys are long flag names.
//! Top-level scalar keys apply to every command; a table named after the
//! command applies to that command only. Command-line flags win.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::CliError;

/// Removes `--config <path>` (or `--config=<path>`) from `args`.
pub fn take_config_path(args: &mut Vec<OsString>) -> Result<Option<PathBuf>, CliError> {
    let mut i = 0;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--" {
            break;
        }
        if a == "--config" {
            if i + 1 >= args.len() {
                return Err(CliError::Validation("--config requires a path".into()));
            }
            let p = PathBuf::from(args.remove(i + 1));
            args.remove(i);
            return Ok(Some(p));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            let p = PathBuf::from(p);
            args.remove(i);
            return Ok(Some(p));
        }
        i += 1;
    }
    Ok(None)
}

pub fn load(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let value: Value = if is_toml {
        let t: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(CliError::Validation(format!(
            "{}: config must be a table",
            path.display()
        )));
    }
    Ok(value)
}

fn scalar(key: &str, v: &Value, out: &mut Vec<OsString>) -> Result<(), CliError> {
    let flag = format!("--{}", key.replace('_', "-"));
    match v {
        Value::Bool(true) => out.push(flag.into()),
        Value::Bool(false) | Value::Null => {}
        Value::Number(n) => {
            out.push(flag.into());
            out.push(n.to_string().into());
        }
        Value::String(s) => {
            out.push(flag.into());
            out.push(s.into());
        }
        Value::Array(items) => {
            let parts: Result<Vec<String>, CliError> = items
                .iter()
                .map(|x| match x {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    other => Err(CliError::Validation(format!(
                        "config key {key}: unsupported list item {other}"
                    ))),
                })
                .collect();
            out.push(flag.into());
            out.push(parts?.join(",").into());
        }
        Value::Object(_) => {
            return Err(CliError::Validation(format!(
                "config key {key}: nested tables are only allowed per command"
            )))
        }
    }
    Ok(())
}

/// Flags the config supplies for `command`.
pub fn flags_for(config: &Value, command: &str) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::new();
    let table = config.as_object().expect("validated table");
    for (k, v) in table {
        if !v.is_object() {
            scalar(k, v, &mut out)?;
        }
    }
    if let Some(Value::Object(section)) = table.get(command) {
        for (k, v) in section {
            scalar(k, v, &mut out)?;
        }
    }
    Ok(out)
}

/// Inserts config flags right after the subcommand so later user flags override them.
pub fn merge(mut args: Vec<OsString>, commands: &[&str]) -> Result<Vec<OsString>, CliError> {
    let Some(path) = take_config_path(&mut args)? else {
        return Ok(args);
    };
    let config = load(&path)?;
    let Some(pos) = args
        .iter()
        .skip(1)
        .position(|a| commands.iter().any(|c| a == *c))
        .map(|p| p + 1)
    else {
        return Ok(args);
    };
    let command = args[pos].to_string_lossy().into_owned();
    let extra = flags_for(&config, &command)?;
    args.splice(pos + 1..pos + 1, extra);
    Ok(args)
}
