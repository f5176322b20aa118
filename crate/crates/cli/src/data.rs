//! Defaults directory, config loading and error classification.

use std::fmt;
use std::path::{Path, PathBuf};

use nvsim_core::node::Register;
use nvsim_core::protocol::ProtocolConfig;
use nvsim_core::pump::{LevelScheme, RepumpConfig};

pub const PROTOCOL_FILE: &str = "protocol.toml";
pub const REGISTER_FILE: &str = "register.toml";

const BUNDLED_PROTOCOL: &str = include_str!("../data/protocol.toml");
const BUNDLED_REGISTER: &str = include_str!("../../core/data/register.toml");
const BUNDLED_SCHEME_A: &str = include_str!("../../core/data/level_scheme_a.toml");
const BUNDLED_SCHEME_E: &str = include_str!("../../core/data/level_scheme_e.toml");

/// Exit status 1: the inputs are wrong. Exit status 2: the run failed.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<nvsim_core::Error> for CliError {
    fn from(e: nvsim_core::Error) -> Self {
        use nvsim_core::Error as E;
        match e {
            E::InvalidParameter { .. } | E::Parse(_) | E::UnknownSpin(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Where defaults come from: the bundled copies or the directory named by
/// `NVSIM_DATA`.
#[derive(Debug, Clone)]
pub enum DataSource {
    Bundled,
    Dir(PathBuf),
}

impl DataSource {
    pub fn from_env() -> Self {
        match std::env::var_os("NVSIM_DATA") {
            Some(dir) if !dir.is_empty() => DataSource::Dir(PathBuf::from(dir)),
            _ => DataSource::Bundled,
        }
    }

    fn read(&self, name: &str, bundled: &'static str) -> CliResult<String> {
        match self {
            DataSource::Bundled => Ok(bundled.to_string()),
            DataSource::Dir(dir) => read_file(&dir.join(name)),
        }
    }

    pub fn protocol_text(&self) -> CliResult<String> {
        self.read(PROTOCOL_FILE, BUNDLED_PROTOCOL)
    }

    pub fn register(&self) -> CliResult<Register> {
        let text = self.read(REGISTER_FILE, BUNDLED_REGISTER)?;
        Register::from_toml(&text).map_err(|e| CliError::Config(format!("{REGISTER_FILE}: {e}")))
    }

    pub fn scheme(&self, config: RepumpConfig) -> CliResult<LevelScheme> {
        let (name, bundled) = match config {
            RepumpConfig::A => ("level_scheme_a.toml", BUNDLED_SCHEME_A),
            RepumpConfig::E => ("level_scheme_e.toml", BUNDLED_SCHEME_E),
        };
        let text = self.read(name, bundled)?;
        LevelScheme::from_toml(&text).map_err(|e| CliError::Config(format!("{name}: {e}")))
    }
}

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Strict parse: unknown and missing fields are both errors.
pub fn parse_protocol(text: &str, origin: &str) -> CliResult<ProtocolConfig> {
    let cfg: ProtocolConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {}", e.message())))?;
    cfg.validate().map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    Ok(cfg)
}

pub fn load_protocol(config: Option<&Path>, data: &DataSource) -> CliResult<ProtocolConfig> {
    match config {
        Some(path) => parse_protocol(&read_file(path)?, &path.display().to_string()),
        None => parse_protocol(&data.protocol_text()?, PROTOCOL_FILE),
    }
}
