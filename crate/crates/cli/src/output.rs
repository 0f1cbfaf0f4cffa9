//! Output envelopes, file writing and error classification.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub const TOOL: &str = "latent-unmix";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Bad command-line input that clap cannot catch.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

/// Error category and exit code.
pub fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    if e.downcast_ref::<Usage>().is_some() {
        return ("usage", 2);
    }
    if let Some(err) = e.downcast_ref::<latent_unmix::Error>() {
        return (err.category(), 1);
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return ("io", 1);
    }
    if e.downcast_ref::<serde_json::Error>().is_some() {
        return ("json", 1);
    }
    ("internal", 1)
}

/// JSON output: tool, version, command and full configuration next to the result.
#[derive(Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    pub result: R,
}

pub fn envelope<'a, C: Serialize, R: Serialize>(command: &'a str, config: &'a C, result: R) -> Envelope<'a, C, R> {
    Envelope { tool: TOOL, version: VERSION, command, config, result }
}

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `# latent-unmix <version> <command> <config>` header for line formats.
pub fn comment_header<C: Serialize>(command: &str, config: &C) -> anyhow::Result<String> {
    Ok(format!("# {TOOL} {VERSION} {command} {}\n", serde_json::to_string(config)?))
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| anyhow::Error::new(e).context(format!("writing {}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        assert_eq!(classify(&usage("x")), ("usage", 2));
        let e = anyhow::Error::new(latent_unmix::Error::RootSelection("x".into())).context("estimating");
        assert_eq!(classify(&e), ("root-selection", 1));
        assert_eq!(classify(&anyhow::anyhow!("x")), ("internal", 1));
    }

    #[test]
    fn header_is_one_line() {
        let h = comment_header("check", &serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(h, format!("# latent-unmix {VERSION} check {{\"seed\":1}}\n"));
    }
}
