//! `kdforge` command-line trainer.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

pub mod args;
pub mod commands;

use std::ffi::OsString;
use std::fs;

use clap::Parser;
use kdforge_core::Error;
use serde_json::Value;

pub use args::{Cli, Command, GlueTask};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(p.into());
        }
    }
    None
}

/// Turns a flat JSON object into flags. Booleans become bare switches when
/// true; nested values are rejected.
fn config_flags(value: &Value) -> Result<Vec<OsString>, String> {
    let obj = value.as_object().ok_or("config file must hold a JSON object")?;
    let mut out = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => out.extend([flag.into(), n.to_string().into()]),
            Value::String(s) => out.extend([flag.into(), s.into()]),
            _ => return Err(format!("config key {key:?} must be a scalar")),
        }
    }
    Ok(out)
}

/// Splices config-file flags in front of the command-line flags so that
/// explicit flags, parsed later, override them.
fn expand_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.to_string_lossy()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.to_string_lossy()))?;
    let flags = config_flags(&value)?;
    let at = 2.min(argv.len());
    argv.splice(at..at, flags);
    Ok(argv)
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv = match expand_config(argv.into_iter().map(Into::into).collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
