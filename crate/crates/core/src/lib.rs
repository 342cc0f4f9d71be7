//! Simulation toolkit for physical-layer security in local wireless control
//! networks.
//!
//! * [`channel`]: reciprocal Rayleigh channel with temporal correlation and a
//!   partially decorrelated attacker position.
//! * [`skg`]: secret key generation from channel reciprocity (probing,
//!   smoothing, quantization, Hamming reconciliation, privacy amplification).
//! * [`auth`]: channel-based message authentication (NPHT and GMM detectors,
//!   ROC evaluation).
//! * [`secure_channel`]: AES-CTR plus truncated CMAC framing and the message
//!   overhead model.
//! * [`plugtrust`]: certificate hierarchy, initial authentication and the
//!   session handshake.
//! * [`attacker`]: eavesdropping, spoofing and replay scripts.
//! * [`harness`]: seeded experiment runner with CSV output.

pub mod attacker;
pub mod auth;
pub mod bits;
pub mod channel;
pub mod harness;
pub mod plugtrust;
pub mod secure_channel;
pub mod skg;
pub mod stats;

pub use attacker::{AttackAction, AttackError, AttackOutcome, AttackerConfig};
pub use auth::{AuthConfig, AuthError, Authenticator, Decision, Detector, DetectorKind, Hypothesis, RocCurve};
pub use bits::BitString;
pub use channel::{Channel, ChannelError, ChannelParams, ChannelTrace, Direction, Observation, Observer};
pub use harness::{validate_config, ConfigError, ExperimentConfig, HarnessError, RunOptions, Scenario, ScenarioResult};
pub use plugtrust::{AbortReason, Endpoint, Phase, Role};
pub use secure_channel::{moh, Frame, FrameError, FrameReceiver, FrameSender, SessionKeys};
pub use skg::{SecretKey, SkgConfig, SkgError, SkgReport};
pub use stats::{derive_seed, SimRng};
