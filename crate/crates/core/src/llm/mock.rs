//! Deterministic test doubles: scripted lookups and a probabilistic oracle.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, BackendKind, ChatBackend, ChatRequest};
use crate::corpus::MinimalPair;
use crate::templates::Order;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MockKind {
    Scripted,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockPolicy {
    pub kind: MockKind,
    /// request digest → response text
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted_map: Option<BTreeMap<String, String>>,
    /// Answer for digests missing from `scripted_map`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted_default: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_accuracy: Option<f64>,
    pub rng_seed: u64,
}

impl MockPolicy {
    pub fn scripted(map: BTreeMap<String, String>, default: Option<String>, rng_seed: u64) -> Self {
        Self {
            kind: MockKind::Scripted,
            scripted_map: Some(map),
            scripted_default: default,
            oracle_accuracy: None,
            rng_seed,
        }
    }

    /// Answers every request with `text`.
    pub fn always(text: impl Into<String>) -> Self {
        Self::scripted(BTreeMap::new(), Some(text.into()), 0)
    }

    pub fn oracle(accuracy: f64, rng_seed: u64) -> Self {
        Self {
            kind: MockKind::Oracle,
            scripted_map: None,
            scripted_default: None,
            oracle_accuracy: Some(accuracy),
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            MockKind::Scripted if self.scripted_map.is_none() => {
                Err("SCRIPTED mock policy needs a scripted map".into())
            }
            MockKind::Oracle => match self.oracle_accuracy {
                Some(p) if (0.0..=1.0).contains(&p) => Ok(()),
                Some(p) => Err(format!("oracle accuracy {p} is outside [0, 1]")),
                None => Err("ORACLE mock policy needs an accuracy".into()),
            },
            _ => Ok(()),
        }
    }
}

/// Uniform draw in [0, 1) from the first 8 bytes of SHA-256(seed ‖ key).
fn uniform(seed: u64, draw_key: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(draw_key.as_bytes());
    let bytes = h.finalize();
    let x = u64::from_be_bytes(bytes[..8].try_into().expect("digest has 32 bytes"));
    // 53 high bits give an exactly representable double in [0, 1).
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Letter an oracle of accuracy `p` gives for a prompt presented in `order`:
/// the grammatical slot with probability p, otherwise the other one. The draw
/// is a pure function of (`policy.rng_seed`, `draw_key`).
pub fn oracle_answer(order: Order, policy: &MockPolicy, draw_key: &str) -> String {
    let p = policy.oracle_accuracy.unwrap_or(0.0);
    let correct = uniform(policy.rng_seed, draw_key) < p;
    let good = order.correct_letter();
    let letter = match (correct, good) {
        (true, l) => l,
        (false, 'A') => 'B',
        (false, _) => 'A',
    };
    letter.to_string()
}

pub struct MockBackend {
    policy: MockPolicy,
    /// (sentence A, sentence B) → presentation order
    answer_key: HashMap<(String, String), Order>,
}

impl MockBackend {
    /// `pairs` form the oracle's answer key and are ignored by scripted
    /// policies.
    pub fn new(policy: MockPolicy, pairs: &[MinimalPair]) -> Result<Self, String> {
        policy.validate()?;
        let mut answer_key = HashMap::new();
        if policy.kind == MockKind::Oracle {
            for p in pairs {
                answer_key.insert((p.good.clone(), p.bad.clone()), Order::GoodFirst);
                answer_key.insert((p.bad.clone(), p.good.clone()), Order::BadFirst);
            }
        }
        Ok(Self { policy, answer_key })
    }

    pub fn policy(&self) -> &MockPolicy {
        &self.policy
    }

    fn oracle_reply(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let text = &request.user_text;
        let last_line = |prefix: &str| {
            text.lines()
                .rev()
                .find_map(|l| l.strip_prefix(prefix))
                .map(str::to_string)
        };
        let (a, b) = match (last_line("Sentence A: "), last_line("Sentence B: ")) {
            (Some(a), Some(b)) => (a, b),
            // Not a judging prompt: treat it as an explanation request.
            _ => {
                return Ok(format!(
                    "Mock explanation {}.\nLook for the single word that differs.",
                    &request.request_digest[..12]
                ))
            }
        };
        let order = self.answer_key.get(&(a, b)).ok_or_else(|| {
            BackendError::Other("mock oracle: sentences are not in the answer key".into())
        })?;
        let letter = oracle_answer(*order, &self.policy, &request.request_digest);
        if text.contains("***") {
            Ok(format!("Reasoning omitted.\n*** {letter}"))
        } else {
            Ok(letter)
        }
    }
}

impl ChatBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        match self.policy.kind {
            MockKind::Oracle => self.oracle_reply(request),
            MockKind::Scripted => self
                .policy
                .scripted_map
                .as_ref()
                .and_then(|m| m.get(&request.request_digest))
                .or(self.policy.scripted_default.as_ref())
                .cloned()
                .ok_or_else(|| {
                    BackendError::Other(format!(
                        "no scripted response for request {}",
                        request.request_digest
                    ))
                }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities() {
        let never = MockPolicy::oracle(0.0, 7);
        let always = MockPolicy::oracle(1.0, 7);
        for i in 0..200 {
            let key = format!("k{i}");
            assert_eq!(oracle_answer(Order::GoodFirst, &never, &key), "B");
            assert_eq!(oracle_answer(Order::BadFirst, &never, &key), "A");
            assert_eq!(oracle_answer(Order::GoodFirst, &always, &key), "A");
            assert_eq!(oracle_answer(Order::BadFirst, &always, &key), "B");
        }
    }

    #[test]
    fn same_key_same_letter() {
        let p = MockPolicy::oracle(0.5, 42);
        let first = oracle_answer(Order::GoodFirst, &p, "pair:1#3");
        for _ in 0..10 {
            assert_eq!(oracle_answer(Order::GoodFirst, &p, "pair:1#3"), first);
        }
    }

    #[test]
    fn empirical_rate_within_binomial_bound() {
        let p = 0.8;
        let policy = MockPolicy::oracle(p, 2024);
        let n = 10_000;
        let hits = (0..n)
            .filter(|i| oracle_answer(Order::GoodFirst, &policy, &format!("draw-{i}")) == "A")
            .count();
        let rate = hits as f64 / n as f64;
        let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((rate - p).abs() <= bound, "rate {rate}, bound {bound}");
    }

    #[test]
    fn policy_validation() {
        assert!(MockPolicy::oracle(1.5, 0).validate().is_err());
        let mut p = MockPolicy::always("A");
        p.scripted_map = None;
        assert!(p.validate().is_err());
    }
}
