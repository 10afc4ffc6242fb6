//! `--config FILE`: a JSON object whose keys mirror long flags. Values fill in
//! flags absent from the command line; explicit flags win.

use std::fs;

use serde_json::Value;

use crate::error::CliError;

fn config_path(argv: &[String]) -> Result<Option<(usize, usize, String)>, CliError> {
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            let path = argv
                .get(i + 1)
                .ok_or_else(|| CliError::Usage("--config needs a file argument".into()))?;
            return Ok(Some((i, 2, path.clone())));
        }
        if let Some(path) = a.strip_prefix("--config=") {
            return Ok(Some((i, 1, path.to_string())));
        }
    }
    Ok(None)
}

fn has_flag(argv: &[String], flag: &str) -> bool {
    argv.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

fn value_text(key: &str, v: &Value) -> Result<Option<String>, CliError> {
    Ok(match v {
        Value::Null => None,
        Value::Bool(_) => None,
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => {
            let parts: Result<Vec<String>, CliError> = items
                .iter()
                .map(|x| match x {
                    Value::Number(n) => Ok(n.to_string()),
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(CliError::Input(format!("config key {key:?}: unsupported list item"))),
                })
                .collect();
            Some(parts?.join(","))
        }
        Value::Object(_) => {
            return Err(CliError::Input(format!(
                "config key {key:?}: nested objects not supported"
            )))
        }
    })
}

/// Returns the argument vector with config values spliced in and the
/// `--config` option removed.
pub fn merge_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some((at, width, path)) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::input(&path, e))?;
    let obj: serde_json::Map<String, Value> = serde_json::from_str(&text).map_err(|e| CliError::input(&path, e))?;
    let mut out: Vec<String> = argv[..at].iter().chain(&argv[at + width..]).cloned().collect();
    for (key, value) in &obj {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || has_flag(&out, &flag) {
            continue;
        }
        match value {
            Value::Bool(true) => out.push(flag),
            Value::Bool(false) => {}
            v => {
                if let Some(text) = value_text(key, v)? {
                    out.push(flag);
                    out.push(text);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"budget": 8, "seed": 3, "sort": true, "budgets": [4, 8]}"#).unwrap();
        let argv: Vec<String> = ["x", "plan", "--budget", "16", "--config", cfg.to_str().unwrap()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = merge_config(argv).unwrap();
        assert_eq!(
            out,
            [
                "x",
                "plan",
                "--budget",
                "16",
                "--budgets",
                "4,8",
                "--seed",
                "3",
                "--sort"
            ]
        );
    }
}
