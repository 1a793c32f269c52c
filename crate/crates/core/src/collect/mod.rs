//! Count-matched LLM annotation collection: planning, execution against a provider,
//! response caching and coverage reporting.

mod cache;
mod provider;
mod ratelimit;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{CacheError, CacheKey, ResponseCache};
#[cfg(feature = "http")]
pub use provider::HttpProvider;
pub use provider::{
    DisabledProvider, MockFallback, MockProvider, MockScriptError, Provider, ProviderError,
    ProviderReply, ProviderRequest,
};
pub use ratelimit::TokenBucket;

use crate::dataset::{
    Annotation, Claim, Dimension, Gender, LlmCondition, PromptVariant, Rater, Source,
};
use crate::ingest::DatasetBundle;
use crate::prompt::{ParsedResponse, PromptError, TemplateSet};

/// Required LLM draws for one claim under one prompt variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub claim_id: String,
    pub variant: PromptVariant,
    pub man_conditioned: usize,
    pub woman_conditioned: usize,
    pub base: usize,
}

impl PlanEntry {
    pub fn count(&self, condition: LlmCondition) -> usize {
        match condition {
            LlmCondition::ManConditioned => self.man_conditioned,
            LlmCondition::WomanConditioned => self.woman_conditioned,
            LlmCondition::Base => self.base,
        }
    }

    pub fn total(&self) -> usize {
        self.man_conditioned + self.woman_conditioned + self.base
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionPlan {
    pub dimension: Dimension,
    pub entries: Vec<PlanEntry>,
}

impl CollectionPlan {
    pub fn entry(&self, claim_id: &str, variant: PromptVariant) -> Option<&PlanEntry> {
        self.entries
            .iter()
            .find(|e| e.claim_id == claim_id && e.variant == variant)
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(PlanEntry::total).sum()
    }

    /// Every planned draw in canonical (claim, condition, variant, slot) order.
    pub fn slots(&self) -> Vec<Slot> {
        let mut slots: Vec<Slot> = self
            .entries
            .iter()
            .flat_map(|e| {
                LlmCondition::ALL.iter().flat_map(move |&condition| {
                    (0..e.count(condition)).map(move |slot| Slot {
                        claim_id: e.claim_id.clone(),
                        condition,
                        variant: e.variant,
                        slot,
                    })
                })
            })
            .collect();
        slots.sort();
        slots
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub claim_id: String,
    pub condition: LlmCondition,
    pub variant: PromptVariant,
    pub slot: usize,
}

/// Mirrors the human annotation counts of each claim on `dimension`: one
/// man-conditioned draw per man's rating, one woman-conditioned draw per woman's
/// rating, and a base draw per rating of either. Every claim gets an entry.
pub fn plan_collection(
    bundle: &DatasetBundle,
    dimension: Dimension,
    variants: &[PromptVariant],
) -> CollectionPlan {
    let mut counts: BTreeMap<&str, (usize, usize)> = bundle
        .claims
        .iter()
        .map(|c| (c.claim_id.as_str(), (0, 0)))
        .collect();
    for a in bundle.human_annotations().filter(|a| a.dimension == dimension) {
        let Rater::Human { gender, .. } = &a.rater else {
            continue;
        };
        let e = counts.entry(a.claim_id.as_str()).or_default();
        match gender {
            Gender::Man => e.0 += 1,
            Gender::Woman => e.1 += 1,
            _ => {}
        }
    }
    let entries = counts
        .into_iter()
        .flat_map(|(claim_id, (men, women))| {
            variants.iter().map(move |&variant| PlanEntry {
                claim_id: claim_id.to_string(),
                variant,
                man_conditioned: men,
                woman_conditioned: women,
                base: men + women,
            })
        })
        .collect();
    CollectionPlan { dimension, entries }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
    /// Answer only from the cache; any miss is a provider error.
    CacheOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    /// Extra attempts after a refusal or unparseable reply.
    pub max_retries: u32,
    /// Requests per minute; 0 disables client-side limiting.
    pub rate_limit_per_minute: u32,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub concurrency: usize,
    /// Base pause before re-sending after a transient failure; doubles each time.
    pub backoff_ms: u64,
    /// Transient-failure re-sends per attempt before giving up.
    pub max_backoff_retries: u32,
    /// Scripted replies for the mock provider.
    pub mock_script: Option<std::path::PathBuf>,
    /// Seed for unscripted mock replies.
    pub mock_seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            timeout_secs: 60,
            max_retries: 3,
            rate_limit_per_minute: 0,
            api_key_env: "OPENAI_API_KEY".into(),
            concurrency: 4,
            backoff_ms: 500,
            max_backoff_retries: 5,
            mock_script: None,
            mock_seed: 0,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), CollectError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(CollectError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.model.trim().is_empty() {
            return Err(CollectError::Config("model name is empty".into()));
        }
        Ok(())
    }
}

pub trait Clock: Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Always reports the same instant; for reproducible record files.
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

/// Audit entry for one provider attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionRecord {
    pub claim_id: String,
    pub condition: LlmCondition,
    pub prompt_variant: PromptVariant,
    pub slot: usize,
    /// 1-based attempt number within the slot.
    pub attempt: u32,
    pub prompt: String,
    pub raw_response: String,
    /// `None` when the reply was neither a rating nor a recognised refusal.
    pub parsed: Option<ParsedResponse>,
    pub provider: String,
    pub model: String,
    pub from_cache: bool,
    pub metadata: BTreeMap<String, String>,
    pub timestamp_ms: u64,
}

/// A planned slot left without a rating after all attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageGap {
    pub claim_id: String,
    pub condition: LlmCondition,
    pub prompt_variant: PromptVariant,
    pub slot: usize,
    pub attempts: u32,
    pub last_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionOutput {
    pub annotations: Vec<Annotation>,
    pub records: Vec<CollectionRecord>,
    pub gaps: Vec<CoverageGap>,
    pub planned: usize,
    /// Requests that went to the provider rather than the cache.
    pub provider_calls: usize,
}

impl CollectionOutput {
    pub fn ensure_complete(&self) -> Result<(), CollectError> {
        if self.gaps.is_empty() {
            Ok(())
        } else {
            Err(CollectError::CoverageGap {
                missing: self.gaps.len(),
                planned: self.planned,
            })
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("rate limited by provider after {0} backoff rounds")]
    RateLimited(u32),
    #[error("{missing} of {planned} planned LLM annotations could not be collected")]
    CoverageGap { missing: usize, planned: usize },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("plan references unknown claim `{0}`")]
    UnknownClaim(String),
    #[error("invalid provider config: {0}")]
    Config(String),
}

/// Runs a plan against a provider through a cache.
pub struct Collector<'a> {
    pub provider: &'a dyn Provider,
    pub cache: &'a ResponseCache,
    pub config: &'a ProviderConfig,
    pub templates: &'a TemplateSet,
    pub clock: &'a dyn Clock,
}

struct SlotOutcome {
    annotation: Option<Annotation>,
    records: Vec<CollectionRecord>,
    gap: Option<CoverageGap>,
}

impl Collector<'_> {
    /// Fills every planned slot. Refusals and unparseable replies are retried up to
    /// `max_retries` times and then reported as coverage gaps; no rating is ever
    /// invented. Output is sorted canonically regardless of worker scheduling.
    pub fn collect(
        &self,
        plan: &CollectionPlan,
        claims: &[Claim],
    ) -> Result<CollectionOutput, CollectError> {
        self.config.validate()?;
        let texts: BTreeMap<&str, &str> = claims
            .iter()
            .map(|c| (c.claim_id.as_str(), c.text.as_str()))
            .collect();
        let slots = plan.slots();
        for s in &slots {
            if !texts.contains_key(s.claim_id.as_str()) {
                return Err(CollectError::UnknownClaim(s.claim_id.clone()));
            }
        }
        let limiter = TokenBucket::new(
            self.config.rate_limit_per_minute,
            self.config.concurrency.max(1) as u32,
        );
        let calls_before = self.provider.calls();
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let failure: Mutex<Option<CollectError>> = Mutex::new(None);
        let outcomes: Mutex<Vec<(usize, SlotOutcome)>> = Mutex::new(Vec::with_capacity(slots.len()));
        let workers = self.config.concurrency.clamp(1, slots.len().max(1));

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(slot) = slots.get(i) else { break };
                    match self.run_slot(plan.dimension, slot, texts[slot.claim_id.as_str()], limiter.as_ref()) {
                        Ok(o) => outcomes.lock().unwrap().push((i, o)),
                        Err(e) => {
                            stop.store(true, Ordering::Relaxed);
                            failure.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });

        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let mut outcomes = outcomes.into_inner().unwrap();
        outcomes.sort_by_key(|(i, _)| *i);
        let mut out = CollectionOutput {
            annotations: Vec::new(),
            records: Vec::new(),
            gaps: Vec::new(),
            planned: slots.len(),
            provider_calls: self.provider.calls() - calls_before,
        };
        for (_, o) in outcomes {
            out.annotations.extend(o.annotation);
            out.records.extend(o.records);
            out.gaps.extend(o.gap);
        }
        Ok(out)
    }

    fn fetch(
        &self,
        request: &ProviderRequest<'_>,
        limiter: Option<&TokenBucket>,
    ) -> Result<(ProviderReply, bool), CollectError> {
        let key = CacheKey::new(
            request.model,
            request.temperature,
            request.prompt,
            request.slot,
            request.attempt,
        );
        if let Some(hit) = self.cache.get(&key) {
            return Ok((hit, true));
        }
        let mut round = 0;
        loop {
            if let Some(l) = limiter {
                l.acquire();
            }
            let err = match self.provider.complete(request) {
                Ok(reply) => {
                    self.cache.insert(key, reply.clone())?;
                    return Ok((reply, false));
                }
                Err(ProviderError::Unreachable(m)) => {
                    return Err(CollectError::ProviderUnreachable(m))
                }
                Err(e) => e,
            };
            if round >= self.config.max_backoff_retries {
                return Err(match err {
                    ProviderError::RateLimited { .. } => CollectError::RateLimited(round),
                    other => CollectError::ProviderUnreachable(other.to_string()),
                });
            }
            let pause = match err {
                ProviderError::RateLimited {
                    retry_after: Some(d),
                } => d,
                _ => Duration::from_millis(self.config.backoff_ms.saturating_mul(1 << round.min(16))),
            };
            std::thread::sleep(pause);
            round += 1;
        }
    }

    fn run_slot(
        &self,
        dimension: Dimension,
        slot: &Slot,
        claim_text: &str,
        limiter: Option<&TokenBucket>,
    ) -> Result<SlotOutcome, CollectError> {
        let gender = match slot.condition {
            LlmCondition::ManConditioned => Some(Gender::Man),
            LlmCondition::WomanConditioned => Some(Gender::Woman),
            LlmCondition::Base => None,
        };
        let prompt = self
            .templates
            .render_for(dimension, slot.variant, gender, claim_text)?;
        let mut records = Vec::new();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            let request = ProviderRequest {
                claim_id: &slot.claim_id,
                condition: slot.condition,
                variant: slot.variant,
                slot: slot.slot,
                attempt,
                prompt: &prompt,
                model: &self.config.model,
                temperature: self.config.temperature,
            };
            let (reply, from_cache) = self.fetch(&request, limiter)?;
            let parsed = self.templates.parse(&reply.text).ok();
            let rating = parsed.as_ref().and_then(|p| p.rating);
            last = reply.text.clone();
            records.push(CollectionRecord {
                claim_id: slot.claim_id.clone(),
                condition: slot.condition,
                prompt_variant: slot.variant,
                slot: slot.slot,
                attempt: attempt + 1,
                prompt: prompt.clone(),
                raw_response: reply.text,
                parsed,
                provider: self.provider.name().to_string(),
                model: self.config.model.clone(),
                from_cache,
                metadata: reply.metadata,
                timestamp_ms: self.clock.now_ms(),
            });
            if let Some(rating) = rating {
                return Ok(SlotOutcome {
                    annotation: Some(Annotation {
                        claim_id: slot.claim_id.clone(),
                        rater: Rater::Llm {
                            condition: slot.condition,
                            variant: slot.variant,
                        },
                        dimension,
                        rating,
                        harmed_groups: None,
                    }),
                    records,
                    gap: None,
                });
            }
        }
        Ok(SlotOutcome {
            annotation: None,
            gap: Some(CoverageGap {
                claim_id: slot.claim_id.clone(),
                condition: slot.condition,
                prompt_variant: slot.variant,
                slot: slot.slot,
                attempts: self.config.max_retries + 1,
                last_response: last,
            }),
            records,
        })
    }
}

/// Replaces the bundle's LLM annotations for `dimension` with `collected`, keeping
/// human annotations and other dimensions.
pub fn merge_llm_annotations(
    bundle: &DatasetBundle,
    dimension: Dimension,
    collected: &[Annotation],
) -> Vec<Annotation> {
    bundle
        .annotations
        .iter()
        .filter(|a| a.rater.source() == Source::Human || a.dimension != dimension)
        .chain(collected)
        .cloned()
        .collect()
}
