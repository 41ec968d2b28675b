//! `key = value` run files. Each key is a long flag name; `#` starts a
//! comment. Values on the command line take precedence.

use std::path::Path;

use crate::error::{Error, Result};

pub fn parse(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: k as u64 + 1,
            message: format!("expected key=value, found `{line}`"),
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k as u64 + 1,
                message: "empty key".into(),
            });
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

fn flag_given(args: &[String], key: &str) -> bool {
    let long = format!("--{key}");
    let prefix = format!("--{key}=");
    args.iter().any(|a| *a == long || a.starts_with(&prefix))
}

/// Inserts `--key=value` tokens for file entries not already on the command
/// line, directly after the subcommand at `position`. `true`/`false` values
/// switch boolean flags.
pub fn merge(args: &[String], position: usize, entries: &[(String, String)], is_switch: impl Fn(&str) -> bool) -> Vec<String> {
    let mut injected = Vec::new();
    for (key, value) in entries {
        if flag_given(args, key) {
            continue;
        }
        if is_switch(key) {
            if value.eq_ignore_ascii_case("true") {
                injected.push(format!("--{key}"));
            }
        } else {
            injected.push(format!("--{key}={value}"));
        }
    }
    let mut out = args[..=position].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[position + 1..]);
    out
}
