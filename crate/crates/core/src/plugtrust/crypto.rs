//! Pluggable signature and key-agreement primitives.
//!
//! The protocol code only needs deterministic key generation from a seed,
//! byte-string public keys and a boolean verify; the defaults are Ed25519
//! and X25519.

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};

pub trait SignatureScheme {
    const NAME: &'static str;
    type SigningKey: Clone;

    fn from_seed(seed: [u8; 32]) -> Self::SigningKey;
    fn public_key(sk: &Self::SigningKey) -> Vec<u8>;
    fn sign(sk: &Self::SigningKey, msg: &[u8]) -> Vec<u8>;
    fn verify(public_key: &[u8], msg: &[u8], signature: &[u8]) -> bool;
}

pub trait KeyAgreement {
    const NAME: &'static str;
    type Secret;

    fn from_seed(seed: [u8; 32]) -> Self::Secret;
    fn public_share(secret: &Self::Secret) -> Vec<u8>;
    /// Shared secret, or `None` for a malformed or degenerate peer share.
    fn agree(secret: &Self::Secret, peer_share: &[u8]) -> Option<Vec<u8>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ed25519;

impl SignatureScheme for Ed25519 {
    const NAME: &'static str = "ed25519";
    type SigningKey = SigningKey;

    fn from_seed(seed: [u8; 32]) -> SigningKey {
        SigningKey::from_bytes(&seed)
    }

    fn public_key(sk: &SigningKey) -> Vec<u8> {
        sk.verifying_key().to_bytes().to_vec()
    }

    fn sign(sk: &SigningKey, msg: &[u8]) -> Vec<u8> {
        sk.sign(msg).to_bytes().to_vec()
    }

    fn verify(public_key: &[u8], msg: &[u8], signature: &[u8]) -> bool {
        let Ok(pk) = <[u8; 32]>::try_from(public_key) else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        vk.verify_strict(msg, &sig).is_ok()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct X25519;

impl KeyAgreement for X25519 {
    const NAME: &'static str = "x25519";
    type Secret = x25519_dalek::StaticSecret;

    fn from_seed(seed: [u8; 32]) -> Self::Secret {
        x25519_dalek::StaticSecret::from(seed)
    }

    fn public_share(secret: &Self::Secret) -> Vec<u8> {
        x25519_dalek::PublicKey::from(secret).as_bytes().to_vec()
    }

    fn agree(secret: &Self::Secret, peer_share: &[u8]) -> Option<Vec<u8>> {
        let peer = <[u8; 32]>::try_from(peer_share).ok()?;
        let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(peer));
        shared
            .was_contributory()
            .then(|| shared.as_bytes().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signature_round_trip_and_tamper() {
        let sk = Ed25519::from_seed([7; 32]);
        let pk = Ed25519::public_key(&sk);
        let sig = Ed25519::sign(&sk, b"hello");
        assert!(Ed25519::verify(&pk, b"hello", &sig));
        assert!(!Ed25519::verify(&pk, b"hellp", &sig));
        for i in 0..sig.len() * 8 {
            let mut bad = sig.clone();
            bad[i / 8] ^= 1 << (i % 8);
            assert!(!Ed25519::verify(&pk, b"hello", &bad), "flip {i} accepted");
        }
        assert!(!Ed25519::verify(&pk[..31], b"hello", &sig));
    }

    #[test]
    fn key_agreement_commutes() {
        let a = X25519::from_seed([1; 32]);
        let b = X25519::from_seed([2; 32]);
        let ab = X25519::agree(&a, &X25519::public_share(&b)).unwrap();
        let ba = X25519::agree(&b, &X25519::public_share(&a)).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(X25519::agree(&a, &[0u8; 32]), None);
        assert_eq!(X25519::agree(&a, &[9u8; 5]), None);
    }
}
