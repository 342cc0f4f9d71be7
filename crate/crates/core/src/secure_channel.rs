//! Conventional secure URLLC framing: AES-128 in CTR mode over a zero-padded
//! payload, followed by an AES-CMAC tag truncated to 64 bits.
//!
//! Wire format (big-endian):
//!
//! ```text
//! [source_id:16][dest_id:16][key_epoch:8][counter:32][payload_len_bits:16]
//! [ciphertext: ceil(N/128)*128][tag:64]
//! ```
//!
//! The tag covers the header and the ciphertext (encrypt-then-MAC). The CTR
//! input block for keystream block `i` is
//! `source_id(16) || epoch(8) || 0(8) || counter(32) || i(32) || 0(32)`.
//!
//! A receiver checks, in order: frame lengths, key epoch, tag (constant time),
//! replay window; only then is the ciphertext decrypted.

use std::collections::BTreeSet;
use std::io::Write;

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use cmac::{Cmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::bits::BitString;
use crate::skg::SecretKey;

pub const BLOCK_BITS: usize = 128;
pub const TAG_BITS: usize = 64;
pub const TAG_BYTES: usize = TAG_BITS / 8;
pub const HEADER_BYTES: usize = 11;
pub const DEFAULT_REPLAY_WINDOW: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("payload must contain at least one bit")]
    EmptyPayload,
    #[error("payload of {0} bits exceeds the 16-bit length field")]
    PayloadTooLong(usize),
    #[error("counter {counter} already used in epoch {epoch}")]
    CounterReuse { counter: u32, epoch: u8 },
    #[error("counter space exhausted for epoch {0}")]
    CounterExhausted(u8),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("frame key epoch {frame} does not match session epoch {session}")]
    EpochMismatch { frame: u8, session: u8 },
    #[error("authentication tag mismatch")]
    TagMismatch,
    #[error("counter {0} replayed or outside the replay window")]
    Replay(u32),
    #[error("key material of {0} bits is shorter than 128 bits")]
    MaterialTooShort(usize),
}

/// Message overhead of zero padding to whole AES blocks plus an `l`-bit tag:
/// `(ceil(n/128) * 128 + l) / n - 1`.
pub fn moh(n_bits: usize, l_bits: usize) -> Result<f64, FrameError> {
    if n_bits == 0 {
        return Err(FrameError::EmptyPayload);
    }
    Ok((padded_bits(n_bits) + l_bits) as f64 / n_bits as f64 - 1.0)
}

pub fn padded_bits(n_bits: usize) -> usize {
    n_bits.div_ceil(BLOCK_BITS) * BLOCK_BITS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadPoint {
    pub n_bits: usize,
    pub l_bits: usize,
    pub moh: f64,
}

/// MOH for `n = n_min, n_min + step, ...` up to and including `n_max`.
pub fn overhead_sweep(l_bits: usize, n_min: usize, n_max: usize, step: usize) -> Result<Vec<OverheadPoint>, FrameError> {
    if step == 0 {
        return Err(FrameError::Malformed("sweep step must be positive".into()));
    }
    (n_min..=n_max)
        .step_by(step)
        .map(|n| {
            Ok(OverheadPoint {
                n_bits: n,
                l_bits,
                moh: moh(n, l_bits)?,
            })
        })
        .collect()
}

pub fn write_overhead_csv<W: Write>(points: &[OverheadPoint], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n_bits", "l_bits", "moh"])?;
    for p in points {
        w.write_record([p.n_bits.to_string(), p.l_bits.to_string(), p.moh.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub enc_key: [u8; 16],
    pub mac_key: [u8; 16],
    pub key_epoch: u8,
}

impl SessionKeys {
    /// Derives independent encryption and MAC keys from `material` with
    /// label-separated SHA-256.
    pub fn derive(material: &[u8], key_epoch: u8) -> Self {
        let derive = |label: &[u8]| -> [u8; 16] {
            let mut h = Sha256::new();
            h.update(label);
            h.update(material);
            h.finalize()[..16].try_into().expect("digest has 32 bytes")
        };
        Self {
            enc_key: derive(b"physec-session-enc"),
            mac_key: derive(b"physec-session-mac"),
            key_epoch,
        }
    }
}

/// Replaces the session keys with keys derived from fresh SKG material and
/// advances the epoch. Counters restart at zero under the new epoch.
pub fn rekey(keys: &SessionKeys, new_material: &SecretKey) -> Result<SessionKeys, FrameError> {
    if new_material.bits.len() < 128 {
        return Err(FrameError::MaterialTooShort(new_material.bits.len()));
    }
    Ok(SessionKeys::derive(
        &new_material.to_bytes(),
        keys.key_epoch.wrapping_add(1),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub source_id: u16,
    pub dest_id: u16,
    pub key_epoch: u8,
    pub counter: u32,
    pub payload_len_bits: u16,
}

impl FrameHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[0..2].copy_from_slice(&self.source_id.to_be_bytes());
        out[2..4].copy_from_slice(&self.dest_id.to_be_bytes());
        out[4] = self.key_epoch;
        out[5..9].copy_from_slice(&self.counter.to_be_bytes());
        out[9..11].copy_from_slice(&self.payload_len_bits.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; HEADER_BYTES]) -> Self {
        Self {
            source_id: u16::from_be_bytes([b[0], b[1]]),
            dest_id: u16::from_be_bytes([b[2], b[3]]),
            key_epoch: b[4],
            counter: u32::from_be_bytes([b[5], b[6], b[7], b[8]]),
            payload_len_bits: u16::from_be_bytes([b[9], b[10]]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub header: FrameHeader,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_BYTES],
}

impl Frame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.ciphertext.len() + TAG_BYTES);
        out.extend_from_slice(&self.header.to_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_BYTES + TAG_BYTES {
            return Err(FrameError::Malformed(format!("{} bytes is shorter than header and tag", bytes.len())));
        }
        let header = FrameHeader::from_bytes(bytes[..HEADER_BYTES].try_into().expect("length checked"));
        let ct_len = bytes.len() - HEADER_BYTES - TAG_BYTES;
        let frame = Self {
            header,
            ciphertext: bytes[HEADER_BYTES..HEADER_BYTES + ct_len].to_vec(),
            tag: bytes[HEADER_BYTES + ct_len..].try_into().expect("length checked"),
        };
        frame.check_lengths()?;
        Ok(frame)
    }

    pub fn total_bits(&self) -> usize {
        (HEADER_BYTES + self.ciphertext.len() + TAG_BYTES) * 8
    }

    /// Padding plus tag bits, the quantity the MOH model counts.
    pub fn security_overhead_bits(&self) -> usize {
        self.ciphertext.len() * 8 + TAG_BITS - self.header.payload_len_bits as usize
    }

    fn check_lengths(&self) -> Result<(), FrameError> {
        let n = self.header.payload_len_bits as usize;
        if n == 0 {
            return Err(FrameError::Malformed("zero payload length".into()));
        }
        if self.ciphertext.len() * 8 != padded_bits(n) {
            return Err(FrameError::Malformed(format!(
                "ciphertext of {} bits does not match payload length {n}",
                self.ciphertext.len() * 8
            )));
        }
        Ok(())
    }
}

/// CTR input block for keystream block `block_index`.
pub fn nonce_block(source_id: u16, key_epoch: u8, counter: u32, block_index: u32) -> [u8; 16] {
    let mut b = [0u8; 16];
    b[0..2].copy_from_slice(&source_id.to_be_bytes());
    b[2] = key_epoch;
    b[4..8].copy_from_slice(&counter.to_be_bytes());
    b[8..12].copy_from_slice(&block_index.to_be_bytes());
    b
}

fn apply_keystream(key: &[u8; 16], header: &FrameHeader, data: &mut [u8]) {
    let cipher = Aes128::new(key.into());
    for (i, chunk) in data.chunks_mut(16).enumerate() {
        let mut block = nonce_block(header.source_id, header.key_epoch, header.counter, i as u32).into();
        cipher.encrypt_block(&mut block);
        for (d, k) in chunk.iter_mut().zip(block.iter()) {
            *d ^= k;
        }
    }
}

/// Full 128-bit AES-CMAC.
pub fn aes_cmac(key: &[u8; 16], msg: &[u8]) -> [u8; 16] {
    let mut mac = <Cmac<Aes128> as Mac>::new(key.into());
    mac.update(msg);
    mac.finalize().into_bytes().into()
}

fn frame_tag(key: &[u8; 16], header: &FrameHeader, ciphertext: &[u8]) -> [u8; TAG_BYTES] {
    let mut msg = Vec::with_capacity(HEADER_BYTES + ciphertext.len());
    msg.extend_from_slice(&header.to_bytes());
    msg.extend_from_slice(ciphertext);
    aes_cmac(key, &msg)[..TAG_BYTES].try_into().expect("cmac is 16 bytes")
}

/// Encrypts and tags one payload. Counter uniqueness is the caller's
/// responsibility; [`FrameSender`] enforces it.
pub fn encrypt_frame(
    keys: &SessionKeys,
    source_id: u16,
    dest_id: u16,
    plaintext: &BitString,
    counter: u32,
) -> Result<Frame, FrameError> {
    if plaintext.is_empty() {
        return Err(FrameError::EmptyPayload);
    }
    let payload_len_bits: u16 = plaintext
        .len()
        .try_into()
        .map_err(|_| FrameError::PayloadTooLong(plaintext.len()))?;
    let header = FrameHeader {
        source_id,
        dest_id,
        key_epoch: keys.key_epoch,
        counter,
        payload_len_bits,
    };
    let mut ciphertext = plaintext.to_bytes();
    ciphertext.resize(padded_bits(plaintext.len()) / 8, 0);
    apply_keystream(&keys.enc_key, &header, &mut ciphertext);
    let tag = frame_tag(&keys.mac_key, &header, &ciphertext);
    Ok(Frame {
        header,
        ciphertext,
        tag,
    })
}

/// Sliding anti-replay window over frame counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayWindow {
    size: u32,
    highest: Option<u32>,
    seen: BTreeSet<u32>,
}

impl ReplayWindow {
    pub fn new(size: u32) -> Self {
        Self {
            size: size.max(1),
            highest: None,
            seen: BTreeSet::new(),
        }
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// Whether `counter` would be accepted, without recording it.
    pub fn check(&self, counter: u32) -> bool {
        match self.highest {
            None => true,
            Some(h) if counter > h => true,
            Some(h) => h - counter < self.size && !self.seen.contains(&counter),
        }
    }

    pub fn accept(&mut self, counter: u32) -> Result<(), FrameError> {
        if !self.check(counter) {
            return Err(FrameError::Replay(counter));
        }
        self.seen.insert(counter);
        let h = self.highest.map_or(counter, |h| h.max(counter));
        self.highest = Some(h);
        let floor = h.saturating_sub(self.size - 1);
        self.seen = self.seen.split_off(&floor);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.highest = None;
        self.seen.clear();
    }
}

impl Default for ReplayWindow {
    fn default() -> Self {
        Self::new(DEFAULT_REPLAY_WINDOW)
    }
}

/// Verifies and decrypts a frame, recording its counter in `window`.
pub fn decrypt_frame(keys: &SessionKeys, frame: &Frame, window: &mut ReplayWindow) -> Result<BitString, FrameError> {
    frame.check_lengths()?;
    if frame.header.key_epoch != keys.key_epoch {
        return Err(FrameError::EpochMismatch {
            frame: frame.header.key_epoch,
            session: keys.key_epoch,
        });
    }
    let expected = frame_tag(&keys.mac_key, &frame.header, &frame.ciphertext);
    if !bool::from(expected.ct_eq(&frame.tag)) {
        return Err(FrameError::TagMismatch);
    }
    window.accept(frame.header.counter)?;
    let mut plain = frame.ciphertext.clone();
    apply_keystream(&keys.enc_key, &frame.header, &mut plain);
    Ok(BitString::from_bytes(&plain, frame.header.payload_len_bits as usize))
}

/// Sending half of a session; owns the per-epoch counter.
#[derive(Debug, Clone)]
pub struct FrameSender {
    keys: SessionKeys,
    source_id: u16,
    dest_id: u16,
    next_counter: u64,
}

impl FrameSender {
    pub fn new(keys: SessionKeys, source_id: u16, dest_id: u16) -> Self {
        Self {
            keys,
            source_id,
            dest_id,
            next_counter: 0,
        }
    }

    pub fn keys(&self) -> &SessionKeys {
        &self.keys
    }

    pub fn next_counter(&self) -> u64 {
        self.next_counter
    }

    pub fn seal(&mut self, plaintext: &BitString) -> Result<Frame, FrameError> {
        let counter: u32 = self
            .next_counter
            .try_into()
            .map_err(|_| FrameError::CounterExhausted(self.keys.key_epoch))?;
        self.seal_at(plaintext, counter)
    }

    /// Seals with an explicit counter, which must not be below any counter
    /// already used in this epoch.
    pub fn seal_at(&mut self, plaintext: &BitString, counter: u32) -> Result<Frame, FrameError> {
        if (counter as u64) < self.next_counter {
            return Err(FrameError::CounterReuse {
                counter,
                epoch: self.keys.key_epoch,
            });
        }
        let frame = encrypt_frame(&self.keys, self.source_id, self.dest_id, plaintext, counter)?;
        self.next_counter = counter as u64 + 1;
        Ok(frame)
    }

    pub fn rekey(&mut self, material: &SecretKey) -> Result<(), FrameError> {
        self.keys = rekey(&self.keys, material)?;
        self.next_counter = 0;
        Ok(())
    }

    pub fn set_keys(&mut self, keys: SessionKeys) {
        self.keys = keys;
        self.next_counter = 0;
    }
}

/// Receiving half of a session.
#[derive(Debug, Clone)]
pub struct FrameReceiver {
    keys: SessionKeys,
    window: ReplayWindow,
}

impl FrameReceiver {
    pub fn new(keys: SessionKeys, window_size: u32) -> Self {
        Self {
            keys,
            window: ReplayWindow::new(window_size),
        }
    }

    pub fn keys(&self) -> &SessionKeys {
        &self.keys
    }

    pub fn open(&mut self, frame: &Frame) -> Result<BitString, FrameError> {
        decrypt_frame(&self.keys, frame, &mut self.window)
    }

    pub fn rekey(&mut self, material: &SecretKey) -> Result<(), FrameError> {
        self.keys = rekey(&self.keys, material)?;
        self.window.reset();
        Ok(())
    }

    pub fn set_keys(&mut self, keys: SessionKeys) {
        self.keys = keys;
        self.window.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng_from_seed;
    use rand::Rng;

    fn keys() -> SessionKeys {
        SessionKeys::derive(b"unit-test material", 0)
    }

    #[test]
    fn moh_values() {
        assert!((moh(400, 64).unwrap() - 0.44).abs() < 1e-12);
        assert!((moh(64, 64).unwrap() - 2.0).abs() < 1e-12);
        assert!((moh(2000, 64).unwrap() - 0.056).abs() < 1e-12);
        assert_eq!(moh(128, 0).unwrap(), 0.0);
        assert_eq!(moh(0, 64), Err(FrameError::EmptyPayload));
    }

    #[test]
    fn sweep_includes_endpoints() {
        let pts = overhead_sweep(64, 64, 2000, 8).unwrap();
        assert_eq!(pts.first().unwrap().n_bits, 64);
        assert_eq!(pts.last().unwrap().n_bits, 2000);
        assert_eq!(pts.len(), (2000 - 64) / 8 + 1);
    }

    #[test]
    fn four_hundred_bit_frame_layout() {
        let mut rng = rng_from_seed(1);
        let p = BitString::random(&mut rng, 400);
        let f = encrypt_frame(&keys(), 1, 2, &p, 0).unwrap();
        assert_eq!(f.ciphertext.len() * 8, 512);
        assert_eq!(f.security_overhead_bits(), 176);
        assert!((f.security_overhead_bits() as f64 / 400.0 - 0.44).abs() < 1e-12);
        assert_eq!(f.to_bytes().len(), 11 + 64 + 8);
    }

    #[test]
    fn header_layout_is_big_endian() {
        let h = FrameHeader {
            source_id: 0x0102,
            dest_id: 0x0304,
            key_epoch: 5,
            counter: 0x0607_0809,
            payload_len_bits: 0x0a0b,
        };
        assert_eq!(h.to_bytes(), [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]);
        assert_eq!(FrameHeader::from_bytes(&h.to_bytes()), h);
    }

    #[test]
    fn nonce_layout() {
        let n = nonce_block(0xabcd, 0x07, 0x1122_3344, 0x0000_0002);
        assert_eq!(
            n,
            [0xab, 0xcd, 0x07, 0x00, 0x11, 0x22, 0x33, 0x44, 0, 0, 0, 2, 0, 0, 0, 0]
        );
    }

    #[test]
    fn round_trip_and_freshness() {
        let k = keys();
        let p = BitString::from_binary_str("1011");
        let a = encrypt_frame(&k, 1, 2, &p, 7).unwrap();
        let b = encrypt_frame(&k, 1, 2, &p, 8).unwrap();
        assert_ne!(a.ciphertext, b.ciphertext);
        let mut w = ReplayWindow::default();
        assert_eq!(decrypt_frame(&k, &a, &mut w).unwrap(), p);
        assert_eq!(decrypt_frame(&k, &b, &mut w).unwrap(), p);
    }

    #[test]
    fn wire_round_trip() {
        let f = encrypt_frame(&keys(), 9, 3, &BitString::from_binary_str("110"), 42).unwrap();
        assert_eq!(Frame::from_bytes(&f.to_bytes()).unwrap(), f);
        let mut short = f.to_bytes();
        short.truncate(short.len() - 9);
        assert!(matches!(Frame::from_bytes(&short), Err(FrameError::Malformed(_))));
    }

    #[test]
    fn empty_and_oversized_payloads() {
        assert_eq!(
            encrypt_frame(&keys(), 1, 2, &BitString::new(), 0),
            Err(FrameError::EmptyPayload)
        );
        assert_eq!(
            encrypt_frame(&keys(), 1, 2, &BitString::zeros(65536), 0),
            Err(FrameError::PayloadTooLong(65536))
        );
    }

    #[test]
    fn sender_refuses_counter_reuse_and_exhaustion() {
        let mut s = FrameSender::new(keys(), 1, 2);
        let p = BitString::from_binary_str("1");
        s.seal_at(&p, 10).unwrap();
        assert_eq!(
            s.seal_at(&p, 10),
            Err(FrameError::CounterReuse { counter: 10, epoch: 0 })
        );
        assert!(s.seal_at(&p, 3).is_err());
        assert_eq!(s.seal(&p).unwrap().header.counter, 11);
        s.seal_at(&p, u32::MAX).unwrap();
        assert_eq!(s.seal(&p), Err(FrameError::CounterExhausted(0)));
    }

    #[test]
    fn replay_window_semantics() {
        let mut w = ReplayWindow::new(4);
        w.accept(5).unwrap();
        assert_eq!(w.accept(5), Err(FrameError::Replay(5)));
        // unseen and inside the window
        w.accept(3).unwrap();
        w.accept(9).unwrap();
        // 9 - 5 = 4 is outside a window of four
        assert_eq!(w.accept(5), Err(FrameError::Replay(5)));
        assert_eq!(w.accept(6), Ok(()));
        assert_eq!(w.accept(6), Err(FrameError::Replay(6)));
    }

    #[test]
    fn epoch_is_checked_before_tag() {
        let k = keys();
        let f = encrypt_frame(&k, 1, 2, &BitString::from_binary_str("1"), 0).unwrap();
        let material = SecretKey {
            bits: BitString::zeros(128),
            verifier: 0,
        };
        let k2 = rekey(&k, &material).unwrap();
        assert_eq!(k2.key_epoch, 1);
        assert_eq!(
            decrypt_frame(&k2, &f, &mut ReplayWindow::default()),
            Err(FrameError::EpochMismatch { frame: 0, session: 1 })
        );
    }

    #[test]
    fn rejected_tag_does_not_consume_counter() {
        let k = keys();
        let mut f = encrypt_frame(&k, 1, 2, &BitString::from_binary_str("1"), 0).unwrap();
        let good = f.clone();
        f.tag[0] ^= 1;
        let mut w = ReplayWindow::default();
        assert_eq!(decrypt_frame(&k, &f, &mut w), Err(FrameError::TagMismatch));
        assert!(decrypt_frame(&k, &good, &mut w).is_ok());
    }

    #[test]
    fn rekey_rules() {
        let k = keys();
        let short = SecretKey {
            bits: BitString::zeros(64),
            verifier: 0,
        };
        assert_eq!(rekey(&k, &short), Err(FrameError::MaterialTooShort(64)));
        let mut rng = rng_from_seed(3);
        let m = SecretKey {
            bits: BitString::random(&mut rng, 128),
            verifier: rng.random(),
        };
        let a = rekey(&k, &m).unwrap();
        assert_eq!(a, rekey(&k, &m).unwrap());
        assert_eq!(a.key_epoch, k.key_epoch + 1);
        assert_ne!(a.enc_key, a.mac_key);
    }
}
