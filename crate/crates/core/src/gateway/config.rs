//! Service configuration: a TOML file of flat sections, every key
//! overridable from the environment as `SCAMBAIT_<SECTION>_<KEY>`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engagement::{human_duration, DelayPolicy, EngineConfig, ObservationWindow};
use crate::mail::MailboxFormat;
use crate::reply::HttpGeneratorConfig;
use crate::sim::{PersonaSpec, SimConfig};

pub const ENV_PREFIX: &str = "SCAMBAIT_";

/// Keys that would put a secret into the file. Secrets are read from the
/// environment variable a `*_env` key names instead.
const SECRET_KEYS: &[&str] = &["token", "api_key", "apikey", "password", "secret", "auth_token"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("[{section}] {key}: secrets must come from the environment, not the config file")]
    SecretInFile { section: String, key: String },
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
}

impl From<crate::engagement::ConfigError> for ConfigFileError {
    fn from(e: crate::engagement::ConfigError) -> Self {
        ConfigFileError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardSection {
    pub max_attempts: u32,
    pub include_history: bool,
}

impl Default for GuardSection {
    fn default() -> Self {
        GuardSection {
            max_attempts: 3,
            include_history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Offline template replies.
    Template,
    /// OpenAI-style chat completion endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    pub endpoint_url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_env_var: Option<String>,
    #[serde(with = "human_duration")]
    pub timeout: Duration,
    pub seed: u64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            kind: GeneratorKind::Template,
            endpoint_url: None,
            model: None,
            auth_env_var: None,
            timeout: Duration::from_secs(60),
            seed: 0,
        }
    }
}

impl GeneratorSection {
    pub fn http_config(&self) -> Result<HttpGeneratorConfig, ConfigFileError> {
        let missing = |k: &str| ConfigFileError::Invalid(format!("[generator] {k} is required for kind = \"http\""));
        Ok(HttpGeneratorConfig {
            endpoint_url: self.endpoint_url.clone().ok_or_else(|| missing("endpoint_url"))?,
            model: self.model.clone().ok_or_else(|| missing("model"))?,
            auth_env_var: self.auth_env_var.clone(),
            timeout: self.timeout,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub approval_required: bool,
    #[serde(with = "human_duration")]
    pub silence_timeout: Duration,
    pub seed: u64,
    pub own_address: String,
    pub signature: String,
    /// 0 turns the limit off.
    pub daily_domain_limit: u32,
    pub max_transient_retries: u32,
    #[serde(with = "human_duration")]
    pub transient_backoff: Duration,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::new(ObservationWindow {
            collection_start: chrono::DateTime::UNIX_EPOCH,
            collection_end: chrono::DateTime::UNIX_EPOCH,
            experiment_end: chrono::DateTime::UNIX_EPOCH,
        });
        EngineSection {
            approval_required: e.approval_required,
            silence_timeout: e.silence_timeout,
            seed: e.seed,
            own_address: e.own_address,
            signature: e.signature,
            daily_domain_limit: e.daily_domain_limit.unwrap_or(0),
            max_transient_retries: e.max_transient_retries,
            transient_backoff: e.transient_backoff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MailboxKind {
    File,
    Net,
    Sim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MailboxSection {
    pub kind: MailboxKind,
    /// file: mbox file or maildir directory to poll.
    pub path: Option<PathBuf>,
    pub format: Option<MailboxFormat>,
    /// file: directory outbound mail is written to.
    pub outbox: Option<PathBuf>,
    pub imap_host: Option<String>,
    pub imap_port: Option<u16>,
    pub smtp_host: Option<String>,
    pub smtp_port: Option<u16>,
    pub username: Option<String>,
    /// Name of the environment variable holding the mailbox password.
    pub password_env: Option<String>,
    #[serde(with = "human_duration")]
    pub poll_interval: Duration,
}

impl Default for MailboxSection {
    fn default() -> Self {
        MailboxSection {
            kind: MailboxKind::Sim,
            path: None,
            format: None,
            outbox: None,
            imap_host: None,
            imap_port: None,
            smtp_host: None,
            smtp_port: None,
            username: None,
            password_env: None,
            poll_interval: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub denylist_path: Option<PathBuf>,
    pub refusal_patterns_path: Option<PathBuf>,
    pub reply_cues_path: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: PathBuf::from("data"),
            denylist_path: None,
            refusal_patterns_path: None,
            reply_cues_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiSection {
    pub bind: SocketAddr,
}

impl Default for ApiSection {
    fn default() -> Self {
        ApiSection {
            bind: SocketAddr::from(([127, 0, 0, 1], 8025)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
    pub personas: Vec<PersonaSpec>,
}

/// Everything `serve` and `simulate` read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub window: ObservationWindow,
    #[serde(default)]
    pub delay: DelayPolicy,
    #[serde(default)]
    pub guard: GuardSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub mailbox: MailboxSection,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub api: ApiSection,
    pub simulation: Option<SimulationSection>,
}

/// TOML datetimes become RFC 3339 strings so they deserialize like quoted
/// timestamps.
fn normalize(value: &mut toml::Value) {
    match value {
        toml::Value::Datetime(d) => *value = toml::Value::String(d.to_string()),
        toml::Value::Array(items) => items.iter_mut().for_each(normalize),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| normalize(v)),
        _ => {}
    }
}

fn check_secrets(table: &toml::Table) -> Result<(), ConfigFileError> {
    for (section, value) in table {
        if let toml::Value::Table(t) = value {
            if let Some(key) = t.keys().find(|k| SECRET_KEYS.contains(&k.to_lowercase().as_str())) {
                return Err(ConfigFileError::SecretInFile {
                    section: section.clone(),
                    key: key.clone(),
                });
            }
        }
    }
    Ok(())
}

/// An override value: TOML scalars (`true`, `12`, `"x"`) parse as such,
/// anything else is taken as a string.
fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .filter(|v| !matches!(v, toml::Value::Table(_)))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = Self::parse(&text, std::env::vars())?;
        config.resolve_paths(base);
        Ok(config)
    }

    /// Parses `text` and applies `SCAMBAIT_<SECTION>_<KEY>` overrides from
    /// `env`. Sections are single words, so everything after the second
    /// underscore is the key.
    pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigFileError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigFileError::Syntax(e.to_string()))?;
        check_secrets(&table)?;
        for (name, raw) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            let Some((section, key)) = rest.to_lowercase().split_once('_').map(|(s, k)| (s.to_string(), k.to_string())) else {
                continue;
            };
            if key.is_empty() {
                continue;
            }
            let entry = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => {
                    t.insert(key, env_value(&raw));
                }
                _ => return Err(ConfigFileError::Invalid(format!("{name}: [{section}] is not a section"))),
            }
        }
        let mut value = toml::Value::Table(table);
        normalize(&mut value);
        let config: ServiceConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigFileError::Invalid(e.message().to_string()))?;
        config.engine_config().validate()?;
        if config.guard.max_attempts == 0 {
            return Err(ConfigFileError::Invalid("[guard] max_attempts must be at least 1".into()));
        }
        Ok(config)
    }

    /// Makes relative paths relative to the config file's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.data_dir);
        for p in [
            &mut self.paths.denylist_path,
            &mut self.paths.refusal_patterns_path,
            &mut self.paths.reply_cues_path,
            &mut self.mailbox.path,
            &mut self.mailbox.outbox,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Startup checks: referenced input files exist, the data directory can
    /// be created.
    pub fn check_paths(&self) -> Result<(), ConfigFileError> {
        let inputs = [
            ("denylist", &self.paths.denylist_path),
            ("refusal pattern file", &self.paths.refusal_patterns_path),
            ("reply cue file", &self.paths.reply_cues_path),
        ];
        for (what, path) in inputs {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigFileError::MissingPath { what, path: p.clone() });
                }
            }
        }
        if self.mailbox.kind == MailboxKind::File {
            let path = self
                .mailbox
                .path
                .as_ref()
                .ok_or_else(|| ConfigFileError::Invalid("[mailbox] path is required for kind = \"file\"".into()))?;
            if !path.exists() {
                return Err(ConfigFileError::MissingPath {
                    what: "mailbox",
                    path: path.clone(),
                });
            }
        }
        std::fs::create_dir_all(&self.paths.data_dir).map_err(|source| ConfigFileError::Read {
            path: self.paths.data_dir.clone(),
            source,
        })?;
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        let e = &self.engine;
        let mut c = EngineConfig::new(self.window);
        c.delay = self.delay.clone();
        c.silence_timeout = e.silence_timeout;
        c.approval_required = e.approval_required;
        c.seed = e.seed;
        c.own_address = e.own_address.clone();
        c.signature = e.signature.clone();
        c.daily_domain_limit = (e.daily_domain_limit > 0).then_some(e.daily_domain_limit);
        c.max_transient_retries = e.max_transient_retries;
        c.transient_backoff = e.transient_backoff;
        c
    }

    /// The `[simulation]` section combined with the window, delay and
    /// engine settings.
    pub fn sim_config(&self) -> Result<SimConfig, ConfigFileError> {
        let s = self
            .simulation
            .as_ref()
            .ok_or_else(|| ConfigFileError::Invalid("missing [simulation] section".into()))?;
        let mut c = SimConfig::new(self.window, s.seed);
        c.delay = self.delay.clone();
        c.max_attempts = self.guard.max_attempts;
        c.silence_timeout = self.engine.silence_timeout;
        c.own_address = self.engine.own_address.clone();
        c.personas = s.personas.clone();
        c.validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[window]
collection_start = 2022-11-12T00:00:00Z
collection_end = "2022-12-12T00:00:00Z"
experiment_end = "2023-01-11T00:00:00Z"

[delay]
min_delay = "15m"
max_delay = "21days"
distribution = "LogUniform"

[engine]
approval_required = true
"#;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn minimal_file_with_defaults() {
        let c = ServiceConfig::parse(MINIMAL, no_env()).unwrap();
        assert!(c.engine.approval_required);
        assert_eq!(c.delay.max_delay, Duration::from_secs(21 * 86_400));
        assert_eq!(c.engine.daily_domain_limit, 10);
        assert_eq!(c.api.bind.to_string(), "127.0.0.1:8025");
        assert_eq!(c.generator.kind, GeneratorKind::Template);
        let e = c.engine_config();
        assert_eq!(e.daily_domain_limit, Some(10));
        assert_eq!(e.silence_timeout, Duration::from_secs(30 * 86_400));
    }

    #[test]
    fn environment_overrides() {
        let env = vec![
            ("SCAMBAIT_ENGINE_APPROVAL_REQUIRED".to_string(), "false".to_string()),
            ("SCAMBAIT_ENGINE_DAILY_DOMAIN_LIMIT".to_string(), "0".to_string()),
            ("SCAMBAIT_PATHS_DATA_DIR".to_string(), "/tmp/x".to_string()),
            ("SCAMBAIT_DELAY_MIN_DELAY".to_string(), "1h".to_string()),
            ("UNRELATED".to_string(), "1".to_string()),
        ];
        let c = ServiceConfig::parse(MINIMAL, env).unwrap();
        assert!(!c.engine.approval_required);
        assert_eq!(c.engine_config().daily_domain_limit, None);
        assert_eq!(c.paths.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.delay.min_delay, Duration::from_secs(3600));
    }

    #[test]
    fn secrets_are_refused() {
        let text = format!("{MINIMAL}\n[generator]\nkind = \"http\"\napi_key = \"sk-123\"\n");
        assert!(matches!(
            ServiceConfig::parse(&text, no_env()),
            Err(ConfigFileError::SecretInFile { .. })
        ));
    }

    #[test]
    fn invalid_values() {
        let bad_window = MINIMAL.replace("2023-01-11", "2022-12-01");
        assert!(matches!(ServiceConfig::parse(&bad_window, no_env()), Err(ConfigFileError::Invalid(_))));
        let unknown = format!("{MINIMAL}\nfoo = 1\n");
        assert!(ServiceConfig::parse(&unknown, no_env()).is_err());
        assert!(matches!(ServiceConfig::parse("[window", no_env()), Err(ConfigFileError::Syntax(_))));
        let env = vec![("SCAMBAIT_DELAY_MIN_DELAY".to_string(), "soon".to_string())];
        assert!(ServiceConfig::parse(MINIMAL, env).is_err());
    }

    #[test]
    fn path_checks() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ServiceConfig::parse(MINIMAL, no_env()).unwrap();
        c.paths.data_dir = PathBuf::from("data");
        c.paths.denylist_path = Some(PathBuf::from("brands.txt"));
        c.resolve_paths(dir.path());
        assert!(matches!(c.check_paths(), Err(ConfigFileError::MissingPath { what: "denylist", .. })));
        std::fs::write(dir.path().join("brands.txt"), "paypal\n").unwrap();
        c.check_paths().unwrap();
        assert!(dir.path().join("data").is_dir());
        c.mailbox.kind = MailboxKind::File;
        assert!(c.check_paths().is_err());
    }

    #[test]
    fn generator_http_needs_endpoint() {
        let c = ServiceConfig::parse(MINIMAL, no_env()).unwrap();
        assert!(c.generator.http_config().is_err());
        let env = vec![
            ("SCAMBAIT_GENERATOR_KIND".to_string(), "http".to_string()),
            ("SCAMBAIT_GENERATOR_ENDPOINT_URL".to_string(), "http://127.0.0.1:9/v1/chat/completions".to_string()),
            ("SCAMBAIT_GENERATOR_MODEL".to_string(), "gpt-3.5-turbo".to_string()),
        ];
        let c = ServiceConfig::parse(MINIMAL, env).unwrap();
        assert_eq!(c.generator.http_config().unwrap().model, "gpt-3.5-turbo");
    }

    #[test]
    fn shipped_reference_config_matches_builtin_scenario() {
        let text = include_str!("../../configs/reference_scenario.toml");
        let c = ServiceConfig::parse(text, []).unwrap();
        let sim = c.sim_config().unwrap();
        assert_eq!(sim, crate::sim::reference_scenario(2022));
    }
}
