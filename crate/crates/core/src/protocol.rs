//! End-to-end request protocol between a user and the cloud.
//!
//! 1. Setup: simulated remote attestation yields a shared session key and
//!    the cloud's signing key pair.
//! 2. Request: the user draws a fresh nonce `r` and seals `(D, request, r)`.
//! 3. Processing: the attestation enclave opens the request, the plan runs,
//!    and `(Result, hash_cloud, Sig)` is sealed back.
//! 4. Verification: the user opens the response, checks `Sig`, recomputes
//!    the plan hash from `(plan, r)` and compares.
//!
//! Envelopes are ChaCha20-Poly1305 with a random 12-octet nonce prefixed to
//! the ciphertext. Plaintexts are sequences of fields, each preceded by a
//! 4-octet big-endian length.

use std::collections::{BTreeMap, HashSet};

use chacha20poly1305::aead::Aead;
use chacha20poly1305::{ChaCha20Poly1305, KeyInit};
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::algebra::{Digest, Nonce};
use crate::cloud::{execute_plan, ChannelTap, ExecError, ExecOutput, FunctionRegistry};
use crate::plan::ExecutionPlan;
use crate::user::{compute_user_hash, verify, Verdict, VerificationReport};

pub const AEAD_NONCE_LEN: usize = 12;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("remote attestation refused")]
    AttestationRefused,
    #[error("unknown request {0:?}")]
    UnknownRequest(String),
    #[error("envelope failed authentication")]
    DecryptFailure,
    #[error("malformed plaintext: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Authenticated encryption used for both envelopes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Ciphersuite {
    #[default]
    ChaCha20Poly1305,
}

/// Outcome of the simulated attestation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttestationSim {
    pub succeeds: bool,
}

impl Default for AttestationSim {
    fn default() -> Self {
        AttestationSim { succeeds: true }
    }
}

/// Tallies of the cryptographic events of a session. Fields with the
/// `_sgx` suffix happen inside the cloud.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventTally {
    pub enc_sgx: u64,
    pub dec_sgx: u64,
    pub sig_sgx: u64,
    pub ver_sgx: u64,
    pub la_sgx: u64,
    pub ra_sgx: u64,
    pub enc: u64,
    pub dec: u64,
}

/// Both endpoints' view of one conversation.
pub struct Session {
    suite: Ciphersuite,
    user_key: [u8; 32],
    cloud_key: [u8; 32],
    cloud_sign_key: SigningKey,
    user_verify_key: VerifyingKey,
    seen_nonces: HashSet<Nonce>,
    rng: ChaCha20Rng,
    events: EventTally,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("suite", &self.suite)
            .field("requests", &self.seen_nonces.len())
            .finish_non_exhaustive()
    }
}

pub fn establish_session<R: RngCore + CryptoRng>(
    rng: &mut R,
    attestation: AttestationSim,
) -> Result<Session, ProtocolError> {
    if !attestation.succeeds {
        return Err(ProtocolError::AttestationRefused);
    }
    let mut session_key = [0u8; 32];
    rng.fill_bytes(&mut session_key);
    let mut sign_seed = [0u8; 32];
    rng.fill_bytes(&mut sign_seed);
    let cloud_sign_key = SigningKey::from_bytes(&sign_seed);
    let user_verify_key = cloud_sign_key.verifying_key();
    let mut stream_seed = [0u8; 32];
    rng.fill_bytes(&mut stream_seed);
    Ok(Session {
        suite: Ciphersuite::default(),
        user_key: session_key,
        cloud_key: session_key,
        cloud_sign_key,
        user_verify_key,
        seen_nonces: HashSet::new(),
        rng: ChaCha20Rng::from_seed(stream_seed),
        events: EventTally { ra_sgx: 1, ..EventTally::default() },
    })
}

impl Session {
    pub fn ciphersuite(&self) -> Ciphersuite {
        self.suite
    }

    /// The session key as held by the user and by the cloud.
    pub fn session_keys(&self) -> (&[u8; 32], &[u8; 32]) {
        (&self.user_key, &self.cloud_key)
    }

    pub fn user_verify_key(&self) -> &VerifyingKey {
        &self.user_verify_key
    }

    pub fn sign(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        self.cloud_sign_key.sign(message).to_bytes()
    }

    pub fn verify_signature(&self, message: &[u8], sig: &[u8; SIGNATURE_LEN]) -> bool {
        self.user_verify_key.verify(message, &Signature::from_bytes(sig)).is_ok()
    }

    pub fn seen_nonces(&self) -> &HashSet<Nonce> {
        &self.seen_nonces
    }

    pub fn events(&self) -> EventTally {
        self.events
    }

    /// Replaces the randomness stream used for request nonces and AEAD
    /// nonces, keeping the keys.
    pub fn reseed_stream(&mut self, seed: u64) {
        self.rng = ChaCha20Rng::seed_from_u64(seed);
    }
}

fn seal(key: &[u8; 32], rng: &mut ChaCha20Rng, plaintext: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(key.into());
    let mut nonce = [0u8; AEAD_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let sealed = cipher
        .encrypt((&nonce).into(), plaintext)
        .expect("ChaCha20-Poly1305 encryption does not fail for in-memory buffers");
    let mut out = Vec::with_capacity(AEAD_NONCE_LEN + sealed.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&sealed);
    out
}

fn open(key: &[u8; 32], envelope: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    if envelope.len() < AEAD_NONCE_LEN {
        return Err(ProtocolError::DecryptFailure);
    }
    let (nonce, body) = envelope.split_at(AEAD_NONCE_LEN);
    let nonce: &[u8; AEAD_NONCE_LEN] = nonce.try_into().expect("split at nonce length");
    ChaCha20Poly1305::new(key.into()).decrypt(nonce.into(), body).map_err(|_| ProtocolError::DecryptFailure)
}

/// Concatenates fields, each prefixed with its 4-octet big-endian length.
pub fn encode_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.len() + 4).sum());
    for f in fields {
        let len = u32::try_from(f.len()).expect("field shorter than 4 GiB");
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

/// Inverse of [`encode_fields`]; requires exactly `count` fields.
pub fn decode_fields(mut bytes: &[u8], count: usize) -> Result<Vec<&[u8]>, ProtocolError> {
    let mut fields = Vec::with_capacity(count);
    while !bytes.is_empty() {
        if bytes.len() < 4 {
            return Err(ProtocolError::Malformed("truncated length prefix"));
        }
        let (len, rest) = bytes.split_at(4);
        let len = u32::from_be_bytes(len.try_into().expect("four octets")) as usize;
        if rest.len() < len {
            return Err(ProtocolError::Malformed("field overruns plaintext"));
        }
        let (field, rest) = rest.split_at(len);
        fields.push(field);
        bytes = rest;
    }
    if fields.len() != count {
        return Err(ProtocolError::Malformed("unexpected field count"));
    }
    Ok(fields)
}

macro_rules! envelope {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name {
            pub ciphertext: Vec<u8>,
        }

        impl $name {
            pub fn to_hex(&self) -> String {
                hex::encode(&self.ciphertext)
            }

            pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
                Ok(Self { ciphertext: hex::decode(s.trim())? })
            }
        }
    };
}

envelope!(
    /// `C_request`: sealed `(D, Request, r)`.
    RequestEnvelope
);
envelope!(
    /// `C_response`: sealed `(Result, hash_cloud, Sig)`.
    ResponseEnvelope
);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestPayload {
    pub data: Vec<u8>,
    pub request_id: String,
    pub r: Nonce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponsePayload {
    pub result: Vec<u8>,
    pub hash_cloud: Digest,
    pub sig: [u8; SIGNATURE_LEN],
}

impl ResponsePayload {
    /// The octets covered by the signature: `Result || hash_cloud`.
    pub fn signed_message(result: &[u8], hash_cloud: &Digest) -> Vec<u8> {
        crate::algebra::concat(result, hash_cloud.as_bytes())
    }
}

/// Request id → plan template.
#[derive(Debug, Clone, Default)]
pub struct PlanRegistry {
    plans: BTreeMap<String, ExecutionPlan>,
}

impl PlanRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(request_id: impl Into<String>, plan: ExecutionPlan) -> Self {
        let mut reg = Self::new();
        reg.insert(request_id, plan);
        reg
    }

    /// Adds or replaces a mapping.
    pub fn insert(&mut self, request_id: impl Into<String>, plan: ExecutionPlan) {
        self.plans.insert(request_id.into(), plan);
    }

    pub fn resolve(&self, request_id: &str) -> Result<&ExecutionPlan, ProtocolError> {
        self.plans.get(request_id).ok_or_else(|| ProtocolError::UnknownRequest(request_id.to_owned()))
    }
}

/// Everything the cloud host brings: its (untrusted) request→plan
/// resolution and the enclave functions.
#[derive(Debug, Clone)]
pub struct CloudServices {
    pub plans: PlanRegistry,
    pub functions: FunctionRegistry,
}

pub fn build_request(
    session: &mut Session,
    plans: &PlanRegistry,
    data: &[u8],
    request_id: &str,
) -> Result<(RequestEnvelope, Nonce), ProtocolError> {
    plans.resolve(request_id)?;
    let r = loop {
        let candidate = Nonce::random(&mut session.rng);
        if session.seen_nonces.insert(candidate) {
            break candidate;
        }
    };
    let plaintext = encode_fields(&[data, request_id.as_bytes(), r.as_bytes()]);
    let ciphertext = seal(&session.user_key, &mut session.rng, &plaintext);
    session.events.enc += 1;
    Ok((RequestEnvelope { ciphertext }, r))
}

/// Cloud-side decryption of a request.
pub fn open_request(session: &Session, env: &RequestEnvelope) -> Result<RequestPayload, ProtocolError> {
    let plaintext = open(&session.cloud_key, &env.ciphertext)?;
    let fields = decode_fields(&plaintext, 3)?;
    let request_id =
        std::str::from_utf8(fields[1]).map_err(|_| ProtocolError::Malformed("request id is not UTF-8"))?.to_owned();
    let r: [u8; Nonce::LEN] = fields[2].try_into().map_err(|_| ProtocolError::Malformed("nonce width"))?;
    Ok(RequestPayload { data: fields[0].to_vec(), request_id, r: Nonce::from_bytes(r) })
}

/// Seals a response under the cloud's copy of the session key.
pub fn seal_response(session: &mut Session, payload: &ResponsePayload) -> ResponseEnvelope {
    let plaintext = encode_fields(&[&payload.result, payload.hash_cloud.as_bytes(), &payload.sig]);
    let ciphertext = seal(&session.cloud_key, &mut session.rng, &plaintext);
    ResponseEnvelope { ciphertext }
}

/// User-side decryption of a response.
pub fn open_response(session: &Session, env: &ResponseEnvelope) -> Result<ResponsePayload, ProtocolError> {
    let plaintext = open(&session.user_key, &env.ciphertext)?;
    let fields = decode_fields(&plaintext, 3)?;
    let hash: [u8; 32] = fields[1].try_into().map_err(|_| ProtocolError::Malformed("digest width"))?;
    let sig: [u8; SIGNATURE_LEN] = fields[2].try_into().map_err(|_| ProtocolError::Malformed("signature width"))?;
    Ok(ResponsePayload { result: fields[0].to_vec(), hash_cloud: Digest::from_bytes(hash), sig })
}

#[derive(Debug)]
pub struct CloudReply {
    pub envelope: ResponseEnvelope,
    pub execution: ExecOutput,
}

/// Opens the request inside the attestation enclave, runs the resolved
/// plan, then signs and seals `(Result, hash_cloud)`.
pub fn cloud_handle(
    session: &mut Session,
    cloud: &CloudServices,
    env: &RequestEnvelope,
    tap: ChannelTap,
) -> Result<CloudReply, ProtocolError> {
    let request = open_request(session, env)?;
    session.events.dec_sgx += 1;
    let plan = cloud.plans.resolve(&request.request_id)?;
    let execution = execute_plan(plan, &cloud.functions, &request.data, &request.r, tap)?;
    session.events.la_sgx += execution.boundary_messages;

    let sig = session.sign(&ResponsePayload::signed_message(&execution.result, &execution.hash_cloud));
    session.events.sig_sgx += 1;
    let payload = ResponsePayload { result: execution.result.clone(), hash_cloud: execution.hash_cloud, sig };
    let envelope = seal_response(session, &payload);
    session.events.enc_sgx += 1;
    Ok(CloudReply { envelope, execution })
}

#[derive(Debug, Clone)]
pub struct Receipt {
    pub verdict: Verdict,
    /// The cloud's `Result`; only trustworthy when the verdict is Accept.
    pub result: Vec<u8>,
    pub hash_user: Digest,
    pub hash_cloud: Digest,
    pub report: VerificationReport,
}

impl Receipt {
    pub fn accepted_result(&self) -> Option<&[u8]> {
        self.verdict.is_accept().then_some(self.result.as_slice())
    }
}

pub fn user_receive(
    session: &mut Session,
    plan: &ExecutionPlan,
    r: &Nonce,
    env: &ResponseEnvelope,
) -> Result<Receipt, ProtocolError> {
    let payload = open_response(session, env)?;
    session.events.dec += 1;
    let sig_ok =
        session.verify_signature(&ResponsePayload::signed_message(&payload.result, &payload.hash_cloud), &payload.sig);
    session.events.ver_sgx += 1;
    let hash_user = compute_user_hash(plan, r).hash_user;
    let verdict = verify(&hash_user, &payload.hash_cloud, &payload.result, sig_ok);
    Ok(Receipt {
        verdict,
        report: VerificationReport::new(verdict, &hash_user, &payload.hash_cloud, plan),
        result: payload.result,
        hash_user,
        hash_cloud: payload.hash_cloud,
    })
}
