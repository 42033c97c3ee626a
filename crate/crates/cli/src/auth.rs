//! Study-code login and signed annotator tokens.
//!
//! Both the per-annotator study code and the session token are HMAC-SHA256
//! tags under one study secret, so the server keeps no session state.

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

/// Environment variable holding the study secret.
pub const SECRET_ENV: &str = "HAZEVAL_STUDY_SECRET";

const CODE_LEN: usize = 10;

#[derive(Clone)]
pub struct Signer {
    secret: Vec<u8>,
}

impl std::fmt::Debug for Signer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Signer(..)")
    }
}

impl Signer {
    pub fn new(secret: impl Into<Vec<u8>>) -> anyhow::Result<Self> {
        let secret = secret.into();
        anyhow::ensure!(secret.len() >= 16, "study secret must be at least 16 bytes");
        Ok(Self { secret })
    }

    pub fn from_env() -> anyhow::Result<Self> {
        let s = std::env::var(SECRET_ENV).map_err(|_| anyhow::anyhow!("environment variable {SECRET_ENV} is not set"))?;
        Self::new(s)
    }

    fn mac(&self, purpose: &str, subject: &str) -> HmacSha256 {
        let mut m = HmacSha256::new_from_slice(&self.secret).expect("hmac accepts any key length");
        m.update(purpose.as_bytes());
        m.update(&[0]);
        m.update(subject.as_bytes());
        m
    }

    /// Short code handed to an annotator out of band.
    pub fn study_code(&self, annotator_id: &str) -> String {
        let tag = self.mac("code", annotator_id).finalize().into_bytes();
        hex::encode(tag)[..CODE_LEN].to_string()
    }

    /// Opaque bearer token: hex(annotator id) "." hex(tag).
    pub fn issue(&self, annotator_id: &str) -> String {
        let tag = self.mac("token", annotator_id).finalize().into_bytes();
        format!("{}.{}", hex::encode(annotator_id), hex::encode(tag))
    }

    /// Returns the annotator id when the token's tag checks out.
    pub fn verify(&self, token: &str) -> Option<String> {
        let (id_hex, tag_hex) = token.split_once('.')?;
        let id = String::from_utf8(hex::decode(id_hex).ok()?).ok()?;
        let tag = hex::decode(tag_hex).ok()?;
        self.mac("token", &id).verify_slice(&tag).ok()?;
        Some(id)
    }
}
