use std::collections::HashSet;

use physec_core::plugtrust::{initial_auth, session_handshake, Endpoint, Role, SimLink, SimPki};
use physec_core::secure_channel::{encrypt_frame, padded_bits, FrameReceiver, ReplayWindow, SessionKeys};
use physec_core::skg::{apply_syndromes, compute_syndromes, privacy_amplify, quantize, ChannelProfile, ReconciliationCode};
use physec_core::{derive_seed, BitString, ChannelParams, ChannelTrace, Frame, Observer};
use proptest::prelude::*;

fn bits(max_len: usize) -> impl Strategy<Value = BitString> {
    prop::collection::vec(any::<bool>(), 1..=max_len).prop_map(BitString::from_bools)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frames_round_trip(payload in bits(1500), material in any::<[u8; 16]>(), counter in any::<u32>()) {
        let keys = SessionKeys::derive(&material, 0);
        let frame = encrypt_frame(&keys, 7, 9, &payload, counter).unwrap();
        prop_assert_eq!(frame.ciphertext.len() * 8, padded_bits(payload.len()));
        let wire = Frame::from_bytes(&frame.to_bytes()).unwrap();
        let mut rx = FrameReceiver::new(keys, 64);
        prop_assert_eq!(rx.open(&wire).unwrap(), payload);
    }

    #[test]
    fn any_flipped_bit_is_rejected(payload in bits(600), bit in any::<prop::sample::Index>()) {
        let keys = SessionKeys::derive(b"tamper", 0);
        let mut wire = encrypt_frame(&keys, 1, 2, &payload, 3).unwrap().to_bytes();
        let i = bit.index(wire.len() * 8);
        wire[i / 8] ^= 1 << (i % 8);
        let rejected = match Frame::from_bytes(&wire) {
            Err(_) => true,
            Ok(f) => FrameReceiver::new(keys, 64).open(&f).is_err(),
        };
        prop_assert!(rejected);
    }

    #[test]
    fn hamming_corrects_one_error_per_block(
        parity in 2u32..6,
        seed in any::<u64>(),
        blocks in 1usize..8,
    ) {
        let code = ReconciliationCode::Hamming { parity_bits: parity };
        let n = code.block_size();
        let mut r = physec_core::stats::rng_from_seed(seed);
        let a = BitString::random(&mut r, n * blocks);
        let (s, msg) = compute_syndromes(&a, code).unwrap();
        let mut b = a.clone();
        for k in 0..blocks {
            if rand::Rng::random_bool(&mut r, 0.7) {
                b.flip(k * n + rand::Rng::random_range(&mut r, 0..n));
            }
        }
        let (fixed, _) = apply_syndromes(&b, &msg, code);
        prop_assert_eq!(fixed, s);
    }

    #[test]
    fn replay_window_accepts_each_counter_once(counters in prop::collection::vec(0u32..200, 1..300)) {
        let mut w = ReplayWindow::new(32);
        let mut accepted = HashSet::new();
        let mut highest = None::<u32>;
        for c in counters {
            let ok = w.accept(c).is_ok();
            // Independent model: new, and not older than the window.
            let fresh = !accepted.contains(&c) && highest.is_none_or(|h| c > h || h - c < 32);
            prop_assert_eq!(ok, fresh, "counter {}", c);
            if ok {
                accepted.insert(c);
                highest = Some(highest.map_or(c, |h| h.max(c)));
            }
        }
    }

    #[test]
    fn amplification_depends_only_on_input(s in bits(512)) {
        prop_assume!(s.len() >= 128);
        let a = privacy_amplify(&s, 0, 128).unwrap();
        let b = privacy_amplify(&s.clone(), 0, 128).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn quantizer_output_length(values in prop::collection::vec(-5.0f64..5.0, 4..200), two_bit in any::<bool>()) {
        let n = if two_bit { 2 } else { 1 };
        let p = quantize(&ChannelProfile::from_scalars(&values, Observer::Ap), n, 0.0).unwrap();
        prop_assert!(p.dropped_indices.is_empty());
        prop_assert_eq!(p.bits.len(), values.len() * n);
    }

    #[test]
    fn traces_are_reproducible(seed in any::<u64>(), rho in 0.0f64..=1.0, snr in -5.0f64..40.0) {
        let params = ChannelParams::new(2, rho, snr, 0.3);
        let a = ChannelTrace::generate(params.clone(), seed, 16).unwrap();
        let b = ChannelTrace::generate(params, seed, 16).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn derived_seeds_do_not_collide(master in any::<u64>()) {
        let mut seen = HashSet::new();
        for label in ["skg", "auth", "protocol"] {
            for i in 0..64 {
                prop_assert!(seen.insert(derive_seed(master, label, i)));
            }
        }
    }
}

proptest! {
    // Each case runs a full pairing; keep the count modest.
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn honest_handshakes_agree_with_fresh_keys(seed in any::<u64>(), sessions in 1usize..4) {
        let pki = SimPki::new(1, 10, (0, 1_000), seed);
        let mut ap: Endpoint = Endpoint::new(Role::Ap, pki.device(100), 500, seed);
        let mut ed: Endpoint = Endpoint::new(Role::Ed, pki.device(200), 500, seed.rotate_left(7));
        initial_auth(&mut ap, &mut ed, &mut SimLink::lossless()).unwrap();
        let mut keys = HashSet::new();
        for _ in 0..sessions {
            let mut link = SimLink::lossless();
            let k = session_handshake(&mut ap, &mut ed, &mut link).unwrap();
            prop_assert_eq!(ap.session_keys(), Some(&k));
            prop_assert_eq!(ed.session_keys(), Some(&k));
            prop_assert_ne!(k.enc_key, k.mac_key);
            prop_assert!(keys.insert(k.enc_key));
            prop_assert_eq!(link.delivered_bits(), 2272);
        }
    }
}
