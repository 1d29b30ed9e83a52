use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use roomrec_core::nn::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    /// Largest accepted request body.
    pub max_body_bytes: usize,
    /// Most records accepted in one training upload.
    pub max_batch_records: usize,
    pub session_ttl_secs: u64,
    /// Network trained on every retrain.
    pub arch: String,
    pub train: TrainConfig,
    /// Seed of the per-room split shuffle.
    pub split_seed: u64,
    /// TLS material; TLS is expected to terminate at a fronting proxy, so
    /// setting these is rejected at startup.
    pub tls_cert: Option<PathBuf>,
    pub tls_key: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("roomrec-data"),
            max_body_bytes: 16 << 20,
            max_batch_records: 500,
            session_ttl_secs: 24 * 3600,
            arch: "C".into(),
            train: TrainConfig::default(),
            split_seed: 1,
            tls_cert: None,
            tls_key: None,
        }
    }
}

impl ServiceConfig {
    /// Reads a JSON config file, then applies `ROOMREC_*` environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        fn parse<T: std::str::FromStr>(key: &str, v: String) -> Result<T, ServiceError> {
            v.parse().map_err(|_| ServiceError::Config(format!("{key}: cannot parse `{v}`")))
        }
        if let Some(v) = get("ROOMREC_BIND") {
            self.bind = parse("ROOMREC_BIND", v)?;
        }
        if let Some(v) = get("ROOMREC_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("ROOMREC_MAX_STEPS") {
            self.train.max_steps = parse("ROOMREC_MAX_STEPS", v)?;
        }
        if let Some(v) = get("ROOMREC_SESSION_TTL_SECS") {
            self.session_ttl_secs = parse("ROOMREC_SESSION_TTL_SECS", v)?;
        }
        if let Some(v) = get("ROOMREC_TLS_CERT") {
            self.tls_cert = Some(v.into());
        }
        if let Some(v) = get("ROOMREC_TLS_KEY") {
            self.tls_key = Some(v.into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.tls_cert.is_some() || self.tls_key.is_some() {
            return Err(ServiceError::Config(
                "TLS is not terminated in-process; put the service behind an HTTPS proxy".into(),
            ));
        }
        if self.max_batch_records == 0 {
            return Err(ServiceError::Config("max_batch_records must be positive".into()));
        }
        roomrec_core::nn::build_named_arch(&self.arch, 2).map_err(|e| ServiceError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| ServiceError::Config(e.to_string()))
    }
}
