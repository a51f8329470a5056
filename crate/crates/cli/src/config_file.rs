//! Flat `key = value` configuration files.

use std::ffi::OsString;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value, got '{line}'", i + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key.replace('_', "-"), value.trim().to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
}

/// Splices config entries into `argv` right after the subcommand token. Entries whose
/// flag is also given on the command line are dropped, so explicit flags win.
/// `--config` itself is removed.
pub fn expand(argv: Vec<OsString>, subcommands: &[String]) -> CliResult<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        match arg.to_str() {
            Some("--config") => {
                let path = it.next().ok_or_else(|| CliError::usage("--config needs a file path"))?;
                config = Some(path);
            }
            Some(s) if s.starts_with("--config=") => config = Some(OsString::from(&s["--config=".len()..])),
            _ => rest.push(arg),
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let entries = load(Path::new(&path))?;
    let at = rest
        .iter()
        .skip(1)
        .position(|a| a.to_str().is_some_and(|s| subcommands.iter().any(|c| c == s)))
        .map(|p| p + 2)
        .ok_or_else(|| CliError::usage("--config given without a subcommand"))?;
    let explicit: Vec<String> = rest
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let injected = entries
        .into_iter()
        .filter(|(k, _)| !explicit.contains(k))
        .map(|(k, v)| OsString::from(format!("--{k}={v}")));
    rest.splice(at..at, injected);
    Ok(rest)
}
