//! Authenticated encryption of sensitive tuples and keyed search tokens.

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use chacha20poly1305::aead::Aead;
use chacha20poly1305::{ChaCha20Poly1305, Key, KeyInit, Nonce};
use hmac::{Hmac, Mac};
use rand::Rng;
use sha2::Sha256;

use crate::error::{QbError, Result};
use crate::model::AttributeValue;
use crate::seed::Seed;

type HmacSha256 = Hmac<Sha256>;

const NONCE_LEN: usize = 12;

/// Occurrence indices at or above this mark belong to fake tuples.
pub const FAKE_OCCURRENCE_BASE: u64 = 1 << 32;

/// Owner secrets: an encryption key and a token key.
#[derive(Clone)]
pub struct Keys {
    enc: [u8; 32],
    tok: [u8; 32],
}

impl std::fmt::Debug for Keys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Keys(..)")
    }
}

impl Keys {
    pub fn derive(seed: Seed) -> Keys {
        Keys {
            enc: seed.key_bytes("encryption"),
            tok: seed.key_bytes("token"),
        }
    }

    /// Deterministic token for the `occurrence`-th tuple holding `value`.
    /// Every tuple gets a distinct token, so equal values are not linkable
    /// from the ciphertext alone.
    pub fn token(&self, value: &AttributeValue, occurrence: u64) -> String {
        let mut mac = <HmacSha256 as Mac>::new_from_slice(&self.tok).expect("any key length works");
        mac.update(&value.canonical_bytes());
        mac.update(&occurrence.to_be_bytes());
        URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes())
    }

    /// Encrypts `plaintext` under a fresh random nonce; returns base64 of
    /// nonce followed by ciphertext and tag.
    pub fn seal<R: Rng>(&self, plaintext: &[u8], rng: &mut R) -> String {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.enc));
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill(&mut nonce);
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), plaintext)
            .expect("encryption of in-memory buffers does not fail");
        let mut out = nonce.to_vec();
        out.extend_from_slice(&ct);
        STANDARD.encode(out)
    }

    /// Decrypts and authenticates a blob produced by [`Keys::seal`].
    pub fn open(&self, tuple_ref: &str, blob: &str) -> Result<Vec<u8>> {
        let bad = || QbError::Integrity(tuple_ref.to_string());
        let raw = STANDARD.decode(blob).map_err(|_| bad())?;
        if raw.len() < NONCE_LEN {
            return Err(bad());
        }
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.enc));
        cipher
            .decrypt(Nonce::from_slice(&raw[..NONCE_LEN]), &raw[NONCE_LEN..])
            .map_err(|_| bad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_open_roundtrip() {
        let k = Keys::derive(Seed(1));
        let mut rng = Seed(2).rng();
        let blob = k.seal(b"hello", &mut rng);
        assert_eq!(k.open("c0", &blob).unwrap(), b"hello");
    }

    #[test]
    fn fresh_nonces() {
        let k = Keys::derive(Seed(1));
        let mut rng = Seed(2).rng();
        assert_ne!(k.seal(b"same", &mut rng), k.seal(b"same", &mut rng));
    }

    #[test]
    fn tamper_detected() {
        let k = Keys::derive(Seed(1));
        let mut rng = Seed(2).rng();
        let blob = k.seal(b"payload", &mut rng);
        let mut raw = STANDARD.decode(&blob).unwrap();
        let last = raw.len() - 1;
        raw[last] ^= 1;
        let tampered = STANDARD.encode(raw);
        assert!(matches!(k.open("c7", &tampered), Err(QbError::Integrity(r)) if r == "c7"));
        assert!(Keys::derive(Seed(3)).open("c0", &blob).is_err());
    }

    #[test]
    fn tokens_distinguish_value_and_occurrence() {
        let k = Keys::derive(Seed(1));
        let v = AttributeValue::from("E259");
        assert_eq!(k.token(&v, 0), k.token(&v, 0));
        assert_ne!(k.token(&v, 0), k.token(&v, 1));
        assert_ne!(k.token(&v, 0), k.token(&"E101".into(), 0));
        assert_ne!(k.token(&v, 0), Keys::derive(Seed(2)).token(&v, 0));
    }
}
