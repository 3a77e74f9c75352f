use std::fmt;

use serde::Serialize;

/// An error raised by the command layer itself.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
}

/// Variant name of the innermost library error, read off its `Debug` form
/// (`Engine(MissingParam("x"))` gives `MissingParam`).
fn variant_name(debug: &str) -> String {
    let mut rest = debug;
    loop {
        let head: String = rest.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
        let after = &rest[head.len()..];
        let nested = after.starts_with('(') && after[1..].starts_with(|c: char| c.is_ascii_uppercase());
        if head.is_empty() || head == "Io" || !nested {
            return if head.is_empty() { "Error".into() } else { head };
        }
        rest = &after[1..];
    }
}

pub fn report(err: &anyhow::Error) -> ErrorReport {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<CliError>().map(|c| c.kind.to_string()))
        .or_else(|| {
            err.chain()
                .find(|e| e.downcast_ref::<std::io::Error>().is_some())
                .map(|_| "Io".to_string())
        })
        .unwrap_or_else(|| variant_name(&format!("{:?}", err.root_cause())));
    ErrorReport {
        error: kind,
        message: format!("{err:#}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_variants_are_unwrapped() {
        assert_eq!(variant_name("Engine(MissingParam(\"a/b\"))"), "MissingParam");
        assert_eq!(variant_name("WindowTooLong { window: 5, len: 2 }"), "WindowTooLong");
        assert_eq!(variant_name("Io(Os { code: 2 })"), "Io");
        assert_eq!(variant_name("EmptyFile"), "EmptyFile");
    }

    #[test]
    fn command_errors_keep_their_kind() {
        let e = anyhow::Error::new(CliError::new("MissingArtifact", "no manifest")).context("loading store");
        let r = report(&e);
        assert_eq!(r.error, "MissingArtifact");
        assert!(r.message.contains("no manifest"));
    }
}
