//! TOML configuration files for the server and the client.
//!
//! Server:
//!
//! ```toml
//! listen = "127.0.0.1:7400"
//! ws_listen = "127.0.0.1:7401"   # optional
//!
//! [[principals]]
//! identity = "r1"
//! secret = "s3cret"
//! rules = [{ topic_regex = "/r1/.*", op = "send" }, { topic_regex = "/r1/cmd", op = "receive" }]
//! ```
//!
//! Client:
//!
//! ```toml
//! client_name = "r1"
//! server_addr = "127.0.0.1:7400"
//! identity = "r1"
//! secret = "s3cret"
//! backpressure_threshold = 1
//!
//! [[local_topics]]
//! topic = "/scan"
//! msg_type = "sensor_msgs/LaserScan"
//! priority = 1.0
//! rate_hz = 10.0
//!
//! [[remote_topics]]
//! topic = "/r1/cmd"
//! msg_type = "std_msgs/String"
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::client::ClientConfig;
use crate::server::{AuthMap, ServerConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {field}: {message}", path.display())]
    Invalid {
        path: PathBuf,
        field: String,
        message: String,
    },
}

fn parse_file<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_owned(),
        message: e.to_string().trim_end().to_owned(),
    })
}

fn invalid(path: &Path, field: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_owned(),
        field: field.to_owned(),
        message: message.to_string(),
    }
}

pub fn load_server_config(path: &Path) -> Result<ServerConfig, ConfigError> {
    let config: ServerConfig = parse_file(path)?;
    validate_server_config(&config).map_err(|(field, message)| invalid(path, &field, message))?;
    Ok(config)
}

/// Returns the offending field and a message.
pub fn validate_server_config(config: &ServerConfig) -> Result<(), (String, String)> {
    config
        .listen
        .parse::<SocketAddr>()
        .map_err(|e| ("listen".to_owned(), format!("{:?}: {e}", config.listen)))?;
    if let Some(ws) = &config.ws_listen {
        ws.parse::<SocketAddr>()
            .map_err(|e| ("ws_listen".to_owned(), format!("{ws:?}: {e}")))?;
    }
    for (i, p) in config.principals.iter().enumerate() {
        if p.identity.is_empty() {
            return Err((format!("principals[{i}].identity"), "must not be empty".into()));
        }
        if let Some(j) = config.principals[..i].iter().position(|q| q.identity == p.identity) {
            return Err((
                format!("principals[{i}].identity"),
                format!("{:?} is already defined by principals[{j}]", p.identity),
            ));
        }
        if p.secret.is_empty() {
            return Err((format!("principals[{i}].secret"), "must not be empty".into()));
        }
        for (k, r) in p.rules.iter().enumerate() {
            if let Err(e) = crate::pattern::TopicPattern::compile(&r.topic_regex) {
                return Err((format!("principals[{i}].rules[{k}].topic_regex"), e.to_string()));
            }
        }
    }
    AuthMap::new(&config.principals).map_err(|e| ("principals".to_owned(), e.to_string()))?;
    Ok(())
}

pub fn load_client_config(path: &Path) -> Result<ClientConfig, ConfigError> {
    let config: ClientConfig = parse_file(path)?;
    config
        .validate()
        .map_err(|e| invalid(path, "client", e))?;
    Ok(config)
}
