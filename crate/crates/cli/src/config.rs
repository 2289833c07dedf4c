//! Flat `key = value` configuration files, merged into argv so that flags
//! given on the command line win.

use std::path::Path;

use clap::{ArgAction, Command};

use crate::error::{CliError, CliResult, PathContext};

pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected key=value, found {line:?}",
                i + 1
            )));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).at(path)?;
    parse_config(&text)
}

/// Value of `--config` if present.
pub fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

/// Locate the innermost subcommand named in argv. Returns its position
/// and definition.
fn leaf_subcommand(root: &Command, argv: &[String]) -> (usize, Command) {
    let mut cmd = root.clone();
    let mut pos = 0;
    let mut skip_value = false;
    for (i, a) in argv.iter().enumerate().skip(1) {
        if skip_value {
            skip_value = false;
            continue;
        }
        if a == "--" {
            break;
        }
        if a == "--config" {
            skip_value = true;
            continue;
        }
        if a.starts_with('-') {
            continue;
        }
        match cmd.find_subcommand(a) {
            Some(sub) => {
                let sub = sub.clone();
                cmd = sub;
                pos = i;
            }
            None => {
                if cmd.has_subcommands() {
                    break;
                }
            }
        }
    }
    (pos, cmd)
}

/// Insert config entries accepted by the selected subcommand right after
/// it, ahead of any flags the user typed.
pub fn inject(root: &Command, argv: Vec<String>, entries: &[(String, String)]) -> CliResult<Vec<String>> {
    let (pos, leaf) = leaf_subcommand(root, &argv);
    if pos == 0 {
        return Ok(argv);
    }
    let mut injected = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        let Some(arg) = leaf.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            log::debug!("config key {key:?} not used by {}", leaf.get_name());
            continue;
        };
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "yes" | "1" => injected.push(format!("--{key}")),
                "false" | "no" | "0" => {}
                _ => {
                    return Err(CliError::Usage(format!(
                        "config key {key:?} expects true or false, found {value:?}"
                    )))
                }
            }
        } else {
            injected.push(format!("--{key}={value}"));
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}
