//! JSON files for certificates, gains and verdicts.
//!
//! Every file written here is read back by the matching loader, and
//! serialization is deterministic: identical values give identical bytes.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SymMatrix;
use crate::synthesis::{DetectCertificate, ObserverGains, StabCertificate};
use crate::verify::Verdict;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CertificateFile {
    Detect(DetectCertificate),
    Stab(StabCertificate),
}

/// Stored `S̄_i` with `P̄_i = S̄_i⁻¹`, enough to evaluate `K(ξ, ξ⁺)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerBlocks {
    #[serde(rename = "S_bar")]
    pub s_bar: Vec<SymMatrix>,
    #[serde(rename = "P_bar")]
    pub p_bar: Vec<SymMatrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GainsFile {
    Observer(ObserverGains),
    Controller(ControllerBlocks),
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    from_json(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_certificate(path: impl AsRef<Path>) -> Result<CertificateFile> {
    load_json(path)
}

pub fn load_gains(path: impl AsRef<Path>) -> Result<GainsFile> {
    load_json(path)
}

pub fn load_verdict(path: impl AsRef<Path>) -> Result<Verdict> {
    load_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::synthesis::StabMethod;

    #[test]
    fn certificate_tags() {
        let detect = CertificateFile::Detect(DetectCertificate {
            p_bar: vec![SymMatrix::scalar(0.3)],
            margin: 0.1,
            provenance: None,
        });
        let text = to_json(&detect).unwrap();
        assert!(text.contains("\"kind\": \"detect\""));
        assert!(text.contains("\"P_bar\""));
        assert_eq!(from_json::<CertificateFile>(&text).unwrap(), detect);

        let stab = CertificateFile::Stab(StabCertificate {
            kind: StabMethod::Slack,
            s_bar: vec![SymMatrix::scalar(0.3)],
            x: vec![Matrix::scalar(0.1 + 0.2)],
            margin: 0.1,
            provenance: None,
        });
        let text = to_json(&stab).unwrap();
        assert!(text.contains("\"method\": \"slack\""));
        assert_eq!(from_json::<CertificateFile>(&text).unwrap(), stab);
    }

    #[test]
    fn gains_round_trip() {
        let gains = GainsFile::Observer(ObserverGains { vertex: vec![Matrix::scalar(-5.0 / 13.0), Matrix::scalar(-20.0 / 13.0)] });
        let text = to_json(&gains).unwrap();
        assert!(text.contains("\"kind\": \"observer\""));
        assert_eq!(from_json::<GainsFile>(&text).unwrap(), gains);
    }

    #[test]
    fn malformed_json_is_a_format_error() {
        assert!(matches!(from_json::<CertificateFile>("{\"kind\": \"other\"}"), Err(Error::Format(_))));
    }
}
