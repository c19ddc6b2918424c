//! Hashing, signatures and sealed-box encryption.
//!
//! All digests are SHA-256. Signing keys are Ed25519; every [`KeyPair`] also
//! carries an X25519 key derived from the same seed so that the public half
//! can be used as an encryption recipient. Encryption is a hybrid
//! construction: ephemeral X25519 agreement, HKDF-SHA256 key derivation and
//! ChaCha20-Poly1305.

use std::fmt;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand::RngCore;
use serde::{Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublicKey, StaticSecret};

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 64;
pub const SIGNATURE_LEN: usize = 64;

const EPHEMERAL_LEN: usize = 32;
const TAG_LEN: usize = 16;
const SEAL_INFO: &[u8] = b"bfica-seal-v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed ciphertext ({0} bytes)")]
    Malformed(usize),
    #[error("authenticated decryption failed")]
    Decryption,
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
}

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
        let arr: [u8; DIGEST_LEN] = bytes.as_slice().try_into().map_err(|_| CryptoError::Length {
            expected: DIGEST_LEN,
            got: bytes.len(),
        })?;
        Ok(Self(arr))
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; DIGEST_LEN]
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl FromStr for Digest {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// SHA-256 of `data`.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Public half of a [`KeyPair`]: the Ed25519 verification key followed by
/// the X25519 encryption key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn from_bytes(bytes: [u8; PUBLIC_KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    fn verifying_half(&self) -> [u8; 32] {
        self.0[..32].try_into().expect("fixed split")
    }

    fn encryption_half(&self) -> [u8; 32] {
        self.0[32..].try_into().expect("fixed split")
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
        let arr: [u8; PUBLIC_KEY_LEN] =
            bytes.as_slice().try_into().map_err(|_| CryptoError::Length {
                expected: PUBLIC_KEY_LEN,
                got: bytes.len(),
            })?;
        Ok(Self(arr))
    }

    /// Short fingerprint for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }

    /// Checks `signature` over `message` with the Ed25519 half.
    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.verifying_half()) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        vk.verify_strict(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.short())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_bytes(bytes: [u8; SIGNATURE_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..12])
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// Signing and decryption key material, deterministically derived from a
/// 32-byte seed.
#[derive(Clone)]
pub struct KeyPair {
    seed: [u8; 32],
    signing: SigningKey,
    encryption: StaticSecret,
    public: PublicKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        let enc_seed: [u8; 32] = hash_parts(&[b"bfica-x25519", &seed]).0;
        let encryption = StaticSecret::from(enc_seed);
        let mut public = [0u8; PUBLIC_KEY_LEN];
        public[..32].copy_from_slice(signing.verifying_key().as_bytes());
        public[32..].copy_from_slice(XPublicKey::from(&encryption).as_bytes());
        Self {
            seed,
            signing,
            encryption,
            public: PublicKey(public),
        }
    }

    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }

    pub fn decrypt(&self, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        decrypt(self, ciphertext)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public
    }
}

impl Eq for KeyPair {}

fn seal_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &PublicKey) -> Key {
    let hk = Hkdf::<Sha256>::new(Some(ephemeral), shared);
    let mut okm = [0u8; 32];
    let info = [SEAL_INFO, recipient.as_bytes().as_slice()].concat();
    hk.expand(&info, &mut okm).expect("32 bytes is a valid HKDF length");
    Key::from(okm)
}

/// Encrypts `plaintext` so that only the holder of `recipient`'s key pair
/// can read it. Output layout: ephemeral X25519 public key (32 bytes)
/// followed by the AEAD ciphertext and tag.
pub fn encrypt_for<R: RngCore>(recipient: &PublicKey, plaintext: &[u8], rng: &mut R) -> Vec<u8> {
    let mut eph_seed = [0u8; 32];
    rng.fill_bytes(&mut eph_seed);
    let eph = StaticSecret::from(eph_seed);
    let eph_pub = XPublicKey::from(&eph);
    let shared = eph.diffie_hellman(&XPublicKey::from(recipient.encryption_half()));
    let key = seal_key(shared.as_bytes(), eph_pub.as_bytes(), recipient);
    // every message uses a fresh key, so a fixed nonce is safe
    let body = ChaCha20Poly1305::new(&key)
        .encrypt(&Nonce::default(), plaintext)
        .expect("in-memory encryption cannot fail");
    let mut out = Vec::with_capacity(EPHEMERAL_LEN + body.len());
    out.extend_from_slice(eph_pub.as_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decrypt(recipient: &KeyPair, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < EPHEMERAL_LEN + TAG_LEN {
        return Err(CryptoError::Malformed(ciphertext.len()));
    }
    let eph: [u8; 32] = ciphertext[..EPHEMERAL_LEN].try_into().expect("checked length");
    let shared = recipient.encryption.diffie_hellman(&XPublicKey::from(eph));
    let key = seal_key(shared.as_bytes(), &eph, &recipient.public);
    ChaCha20Poly1305::new(&key)
        .decrypt(&Nonce::default(), &ciphertext[EPHEMERAL_LEN..])
        .map_err(|_| CryptoError::Decryption)
}

/// Deterministic test vectors: `(label, seed, message, public key, signature, digest)`
/// rendered as hex. Encryption is randomized and is not part of the fixture.
pub fn fixture_vectors() -> Vec<FixtureVector> {
    let cases: [(&str, [u8; 32], &[u8]); 4] = [
        ("empty", [0u8; 32], b""),
        ("abc", [1u8; 32], b"abc"),
        ("pet-body", [7u8; 32], b"loc=-33.917,151.231;ts=86400"),
        ("net-ack", [0xa5u8; 32], b"bfica-tx-sig"),
    ];
    cases
        .into_iter()
        .map(|(label, seed, msg)| {
            let kp = KeyPair::from_seed(seed);
            FixtureVector {
                label: label.to_string(),
                seed: hex::encode(seed),
                message: hex::encode(msg),
                public_key: kp.public().to_hex(),
                signature: kp.sign(msg).to_hex(),
                digest: hash(msg).to_hex(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureVector {
    pub label: String,
    pub seed: String,
    pub message: String,
    pub public_key: String,
    pub signature: String,
    pub digest: String,
}

/// Renders the fixture file: one whitespace-separated vector per line.
pub fn render_fixture_file() -> String {
    let mut out = String::from("# label seed message public_key signature sha256\n");
    for v in fixture_vectors() {
        let msg = if v.message.is_empty() { "-" } else { v.message.as_str() };
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            v.label, v.seed, msg, v.public_key, v.signature, v.digest
        ));
    }
    out
}
