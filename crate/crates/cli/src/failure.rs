//! Errors tagged with the exit code they map to.

use std::fmt::Display;
use std::path::Path;

use serde::de::DeserializeOwned;

#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or config: exit 1.
    Usage(anyhow::Error),
    /// Failure while running a valid request: exit 2.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

/// Tags any error as a runtime failure.
pub trait Tag<T> {
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub fn usage(msg: impl Display) -> Failure {
    Failure::Usage(anyhow::anyhow!("{msg}"))
}

pub fn runtime(context: impl Display, err: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(err.into().context(context.to_string()))
}

/// Reads a JSON config, reporting the path of the first offending key.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format_args!("cannot read config {}: {e}", path.display())))?;
    parse_json(&text).map_err(|(at, msg)| usage(format_args!("invalid config {} at `{at}`: {msg}", path.display())))
}

/// Parses JSON text; the error carries the JSON path and message.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, (String, String)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| (e.path().to_string(), e.inner().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use jumpcov::simulate::SimConfig;

    #[test]
    fn path_points_at_offending_key() {
        let (at, msg) = parse_json::<SimConfig>(r#"{"n_assets": 3, "garch": {"a": "x"}}"#).unwrap_err();
        assert_eq!(at, "garch.a");
        assert!(msg.contains("invalid type"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_location() {
        let (at, msg) = parse_json::<SimConfig>(r#"{"n_asets": 3}"#).unwrap_err();
        assert_eq!(at, "n_asets");
        assert!(msg.contains("unknown field"), "{msg}");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(usage("x").code(), 1);
        assert_eq!(runtime("ctx", anyhow::anyhow!("boom")).code(), 2);
        let r: Result<(), std::io::Error> = Err(std::io::Error::other("io"));
        assert_eq!(r.runtime().unwrap_err().code(), 2);
    }
}
