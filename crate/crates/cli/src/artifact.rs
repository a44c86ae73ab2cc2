//! Model artifacts: a one-line header `vqreg-model <version> <sha256>`
//! followed by the JSON payload the digest covers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vqreg::{CvqfDecoder, FittedModel};

use crate::CliError;

pub const MAGIC: &str = "vqreg-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub model: FittedModel,
    pub decoder: CvqfDecoder,
    /// SHA-256 of the canonical configuration text.
    pub config_fingerprint: String,
    pub config: String,
    pub final_loss: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ModelArtifact {
    pub fn new(model: FittedModel, decoder: CvqfDecoder, config: String, final_loss: Vec<f64>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model,
            decoder,
            config_fingerprint: sha256_hex(config.as_bytes()),
            config,
            final_loss,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let payload = serde_json::to_string(self).map_err(|e| CliError::Io(format!("serialising model: {e}")))?;
        Ok(format!("{MAGIC} {} {}\n{payload}\n", self.format_version, sha256_hex(payload.as_bytes())).into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let text = std::str::from_utf8(bytes).map_err(|_| CliError::Corrupt("artifact is not UTF-8".into()))?;
        let (header, rest) = text
            .split_once('\n')
            .ok_or_else(|| CliError::Corrupt("artifact header is missing".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(CliError::Corrupt("not a vqreg model artifact".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Corrupt("artifact header has no version".into()))?;
        if version != FORMAT_VERSION {
            return Err(CliError::Corrupt(format!(
                "artifact format version {version} is not supported (this build reads version {FORMAT_VERSION})"
            )));
        }
        let digest = parts
            .next()
            .ok_or_else(|| CliError::Corrupt("artifact header has no checksum".into()))?;
        let payload = rest.strip_suffix('\n').unwrap_or(rest);
        if sha256_hex(payload.as_bytes()) != digest {
            return Err(CliError::Corrupt("artifact checksum mismatch (truncated or modified file)".into()));
        }
        let artifact: ModelArtifact =
            serde_json::from_str(payload).map_err(|e| CliError::Corrupt(format!("artifact payload: {e}")))?;
        if artifact.format_version != version {
            return Err(CliError::Corrupt("artifact header and payload versions differ".into()));
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
