//! Deterministic offline backend.
//!
//! Structured replies are synthesized from the request schema with a RNG
//! seeded by a hash of the canonical request, so identical requests give
//! byte-identical replies. Enum-constrained arrays become permutations or
//! partitions of their domain, excerpts are cut from the source text, and
//! media outputs are small placeholder files tagged with the prompt hash.
//! Every call is appended to a request log that tests can inspect.

use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};

use super::schema::{KeyRule, Schema, TextHint};
use super::*;
use crate::ids::{seed_from, short_hash};
use crate::media;

/// Milliseconds of narration per script character.
pub const SPEECH_MS_PER_CHAR: u64 = 60;
/// Clip length when a video request gives no duration hint.
pub const DEFAULT_VIDEO_MS: u64 = 8_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordedCall {
    pub modality: Modality,
    pub stage: String,
    pub prompt: String,
    /// Checksums of attached image or video parts, in order.
    pub image_checksums: Vec<String>,
    /// Keyframe checksum of a video request.
    pub keyframe_checksum: Option<String>,
    /// Base image checksum of an image edit.
    pub base_checksum: Option<String>,
    pub attempt: u32,
    pub index: u32,
}

#[derive(Debug, Default)]
pub struct MockBackend {
    latency: Duration,
    refuse: Option<String>,
    log: Mutex<Vec<RecordedCall>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleeps this long inside every call.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Refuses any request whose prompt contains `needle`.
    pub fn refusing(mut self, needle: impl Into<String>) -> Self {
        self.refuse = Some(needle.into());
        self
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.log.lock().clone()
    }

    pub fn clear_calls(&self) {
        self.log.lock().clear();
    }

    async fn enter(&self, call: RecordedCall) -> Result<(), ProviderError> {
        let refused = self.refuse.as_ref().is_some_and(|n| call.prompt.contains(n.as_str()));
        let prompt = call.prompt.clone();
        self.log.lock().push(call);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        if refused {
            return Err(ProviderError::ContentRefused(format!(
                "mock refuses prompt {}",
                short_hash(&[&prompt])
            )));
        }
        Ok(())
    }
}

fn checksums(parts: &[Part]) -> Vec<String> {
    parts.iter().filter_map(|p| p.checksum().map(str::to_string)).collect()
}

#[async_trait]
impl ModelBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    async fn complete(&self, call: &CompletionCall<'_>) -> Result<Completion, ProviderError> {
        let req = call.request;
        let user = req.user_text();
        self.enter(RecordedCall {
            modality: Modality::Text,
            stage: req.stage.clone(),
            prompt: user.clone(),
            image_checksums: checksums(&req.user_parts),
            keyframe_checksum: None,
            base_checksum: None,
            attempt: call.attempt,
            index: 0,
        })
        .await?;
        let fingerprint = serde_json::to_string(&json!({
            "stage": req.stage,
            "system": req.system_prompt,
            "parts": req.user_parts,
            "schema": req.schema.to_json_schema(),
            "creativity": req.creativity,
        }))
        .expect("request serializes");
        let seed = seed_from(&[&fingerprint, &call.seed.to_string(), &call.attempt.to_string()]);
        let mut g = Generator::new(seed, &user, req.user_parts.iter().find_map(|p| p.checksum()));
        let value = g.value(&req.schema, None);
        Ok(Completion {
            text: serde_json::to_string(&value).expect("value serializes"),
            echo: format!("mock-{:016x}", seed),
        })
    }

    async fn generate_image(&self, req: &ImageGenRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError> {
        self.enter(RecordedCall {
            modality: Modality::Image,
            stage: req.stage.clone(),
            prompt: req.prompt.clone(),
            image_checksums: checksums(&req.references),
            keyframe_checksum: None,
            base_checksum: req.base_image.as_ref().and_then(|p| p.checksum().map(str::to_string)),
            attempt: 0,
            index,
        })
        .await?;
        let prompt_hash = short_hash(&[&req.prompt]);
        let base = req.base_image.as_ref().and_then(Part::checksum).unwrap_or("-");
        let refs = checksums(&req.references).join(",");
        let tag = format!("prompt={prompt_hash} seed={seed} index={index} base={base} refs={refs}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[&tag]));
        let rgb = [
            rng.random_range(40..200),
            rng.random_range(40..200),
            rng.random_range(40..200),
        ];
        let (w, h) = ((req.width / 8).max(1), (req.height / 8).max(1));
        Ok(GeneratedMedia {
            bytes: media::placeholder_png(w, h, rgb, &tag),
            ext: "png".into(),
            echo: format!("mock-image-{}", short_hash(&[&tag])),
        })
    }

    async fn generate_video(&self, req: &VideoGenRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError> {
        let keyframe = req
            .keyframe
            .as_ref()
            .ok_or_else(|| ProviderError::Precondition("video generation requires a keyframe".into()))?;
        let key_sum = keyframe.checksum().unwrap_or_default().to_string();
        self.enter(RecordedCall {
            modality: Modality::Video,
            stage: req.stage.clone(),
            prompt: req.prompt.clone(),
            image_checksums: vec![key_sum.clone()],
            keyframe_checksum: Some(key_sum.clone()),
            base_checksum: None,
            attempt: 0,
            index,
        })
        .await?;
        let tag = format!(
            "prompt={} seed={seed} index={index} keyframe={key_sum}",
            short_hash(&[&req.prompt])
        );
        let poster = match keyframe {
            Part::Image { data, .. } => media::downscale_png(&data.0, 160).unwrap_or_default(),
            _ => Vec::new(),
        };
        let ms = req.duration_hint_s.map(secs_to_ms_ceil).unwrap_or(DEFAULT_VIDEO_MS).max(1);
        Ok(GeneratedMedia {
            bytes: media::placeholder_mp4(ms, 1280, 720, &poster, &tag),
            ext: "mp4".into(),
            echo: format!("mock-video-{}", short_hash(&[&tag])),
        })
    }

    async fn synthesize_speech(&self, req: &SpeechRequest, seed: u64) -> Result<GeneratedMedia, ProviderError> {
        self.enter(RecordedCall {
            modality: Modality::Speech,
            stage: "narration".into(),
            prompt: req.script.clone(),
            image_checksums: Vec::new(),
            keyframe_checksum: None,
            base_checksum: None,
            attempt: 0,
            index: 0,
        })
        .await?;
        let chars = req.script.chars().count() as u64;
        let pitch = seed_from(&[&req.voice, &seed.to_string()]);
        Ok(GeneratedMedia {
            bytes: media::placeholder_wav(chars * SPEECH_MS_PER_CHAR, pitch),
            ext: "wav".into(),
            echo: format!("mock-speech-{}", short_hash(&[&req.script, &req.voice])),
        })
    }

    async fn synthesize_music(&self, req: &MusicRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError> {
        self.enter(RecordedCall {
            modality: Modality::Music,
            stage: "music".into(),
            prompt: req.prompt.clone(),
            image_checksums: Vec::new(),
            keyframe_checksum: None,
            base_checksum: None,
            attempt: 0,
            index,
        })
        .await?;
        let pitch = seed_from(&[&req.prompt, &seed.to_string(), &index.to_string()]);
        let ms = secs_to_ms_ceil(req.duration_s).max(1);
        Ok(GeneratedMedia {
            bytes: media::placeholder_wav(ms, pitch),
            ext: "wav".into(),
            echo: format!("mock-music-{}", short_hash(&[&req.prompt, &index.to_string()])),
        })
    }
}

fn secs_to_ms_ceil(s: f64) -> u64 {
    (s * 1000.0).round().max(0.0) as u64
}

const ADJECTIVES: &[&str] = &[
    "quiet",
    "golden",
    "distant",
    "restless",
    "hidden",
    "bright",
    "weathered",
    "tender",
    "sudden",
    "wide",
    "misty",
    "familiar",
    "lonely",
    "vivid",
    "slow",
    "open",
];
const NOUNS: &[&str] = &[
    "harbor",
    "road",
    "morning",
    "return",
    "crossing",
    "light",
    "horizon",
    "market",
    "shoreline",
    "journey",
    "window",
    "arrival",
    "valley",
    "threshold",
    "evening",
    "path",
];
const SHOT_TYPES: &[&str] = &[
    "wide establishing shot",
    "medium shot",
    "close-up",
    "over-the-shoulder shot",
    "low-angle shot",
    "aerial view",
    "tracking shot",
    "detail insert",
];
const LIGHTING: &[&str] = &[
    "soft golden-hour light",
    "overcast diffuse light",
    "warm interior light",
    "cool blue twilight",
    "high-contrast midday sun",
    "gentle backlight",
];
const STYLES: &[&str] = &[
    "naturalistic documentary style",
    "handheld vlog texture",
    "muted film palette",
    "crisp travel-film look",
    "dreamlike shallow focus",
];
const MOTIONS: &[&str] = &[
    "slow push-in",
    "gentle pan to the right",
    "static locked-off frame",
    "slow tilt upward",
    "drifting handheld follow",
    "smooth dolly out",
];
const SENTENCE_FORMS: &[&str] = &[
    "The {a} {n} sets up the {w} and gives the viewer room to breathe.",
    "This moment connects the {w} to the {a} {n} that follows.",
    "A {a} {n} frames the {w} and carries the emotional thread forward.",
    "The sequence lingers on the {w}, letting the {a} {n} establish the mood.",
    "It bridges the {w} and the {n} with a {a} transition in tone.",
    "Focusing on the {w} here clarifies the stakes before the {a} {n}.",
];
const QUESTION_FORMS: &[&str] = &[
    "What does the {w} mean to you at this point in the story?",
    "How might the {a} {n} change the way we see the {w}?",
    "What would the audience miss if the {w} were cut?",
    "Why does the {w} matter before the {n} arrives?",
    "What feeling do you want the {a} {n} to leave behind?",
    "Where could the {w} reappear to give the story a sense of return?",
    "Who is the {w} really about, and how can we feel that sooner?",
    "What changed for you between the {w} and the {a} {n}?",
];
const REWRITE_LEADS: &[&str] = &["", "Quietly, ", "At last, ", "Even now, ", "Somehow, ", "Without a word, "];
const REWRITE_TAILS: &[&str] = &[
    "",
    " It stays with us.",
    " Nothing feels the same after.",
    " The moment holds.",
    " We keep moving.",
];
const STOPWORDS: &[&str] = &[
    "about",
    "above",
    "after",
    "again",
    "against",
    "being",
    "below",
    "between",
    "could",
    "every",
    "their",
    "there",
    "these",
    "those",
    "through",
    "under",
    "until",
    "where",
    "which",
    "while",
    "would",
    "should",
    "story",
    "scene",
    "scenes",
    "shots",
    "shot",
    "script",
    "other",
    "first",
    "second",
    "third",
    "before",
    "given",
    "return",
    "respond",
    "following",
    "description",
    "descriptions",
];

/// Schema-driven value synthesis.
struct Generator {
    rng: ChaCha8Rng,
    words: Vec<String>,
    checksum: Option<String>,
}

impl Generator {
    fn new(seed: u64, context: &str, checksum: Option<&str>) -> Self {
        let mut words: Vec<String> = Vec::new();
        for w in context.split(|c: char| !c.is_alphabetic()) {
            let w = w.to_lowercase();
            if w.chars().count() >= 5 && !STOPWORDS.contains(&w.as_str()) && !words.contains(&w) {
                words.push(w);
            }
        }
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            words,
            checksum: checksum.map(str::to_string),
        }
    }

    fn pick<'a>(&mut self, list: &[&'a str]) -> &'a str {
        list[self.rng.random_range(0..list.len())]
    }

    fn context_word(&mut self) -> String {
        if self.words.is_empty() {
            self.pick(NOUNS).to_string()
        } else {
            let i = self.rng.random_range(0..self.words.len());
            self.words[i].clone()
        }
    }

    fn fill(&mut self, form: &str) -> String {
        let a = self.pick(ADJECTIVES);
        let n = self.pick(NOUNS);
        let w = self.context_word();
        form.replace("{a}", a).replace("{n}", n).replace("{w}", &w)
    }

    fn text(&mut self, hint: &TextHint, slot: Option<(usize, usize)>) -> String {
        match hint {
            TextHint::Title => {
                let a = capitalize(self.pick(ADJECTIVES));
                if self.rng.random_bool(0.5) {
                    format!("{a} {}", capitalize(&self.context_word()))
                } else {
                    format!("The {a} {}", capitalize(self.pick(NOUNS)))
                }
            }
            TextHint::Sentence => {
                let f = self.pick(SENTENCE_FORMS);
                self.fill(f)
            }
            TextHint::Question => {
                let f = self.pick(QUESTION_FORMS);
                self.fill(f)
            }
            TextHint::ImageDescription => {
                let shot = self.pick(SHOT_TYPES);
                let light = self.pick(LIGHTING);
                let w = self.context_word();
                let a = self.pick(ADJECTIVES);
                let prefix = self.checksum.as_deref().map(|c| &c[..c.len().min(8)]).unwrap_or("00000000");
                format!("[{prefix}] A {shot} of a {a} {w} in {light}.")
            }
            TextHint::VisualPrompt => {
                let shot = self.pick(SHOT_TYPES);
                let light = self.pick(LIGHTING);
                let style = self.pick(STYLES);
                let motion = self.pick(MOTIONS);
                let w = self.context_word();
                let a = self.pick(ADJECTIVES);
                format!("{} of a {a} {w}, {light}, {style}, {motion}", capitalize(shot))
            }
            TextHint::ExcerptOf(source) | TextHint::PassageOf(source) => {
                let (i, n) = slot.unwrap_or((0, 1));
                excerpt(source, i, n)
            }
            TextHint::RewriteOf(original) => {
                let body = original.trim().trim_end_matches(['.', '!', '?']);
                let lead = self.pick(REWRITE_LEADS);
                let tail = self.pick(REWRITE_TAILS);
                let body = if lead.is_empty() {
                    body.to_string()
                } else {
                    lowercase_first(body)
                };
                format!("{lead}{body}.{tail}")
            }
        }
    }

    fn string(&mut self, schema: &Schema, slot: Option<(usize, usize)>) -> Value {
        match schema {
            Schema::String {
                enum_values: Some(values),
                ..
            } => Value::String(values[self.rng.random_range(0..values.len())].clone()),
            Schema::String { hint, min_len, .. } => {
                let mut s = self.text(hint, slot);
                while s.trim().chars().count() < *min_len {
                    s.push_str(" and more");
                }
                Value::String(s)
            }
            _ => unreachable!(),
        }
    }

    fn value(&mut self, schema: &Schema, slot: Option<(usize, usize)>) -> Value {
        match schema {
            Schema::String { .. } => self.string(schema, slot),
            Schema::Integer { min, max } => {
                let lo = min.unwrap_or(0);
                let hi = max.unwrap_or(lo + 10).max(lo);
                json!(self.rng.random_range(lo..=hi))
            }
            Schema::Number { min, max } => {
                let lo = min.unwrap_or(0.0);
                let hi = max.unwrap_or(lo + 1.0).max(lo);
                json!(lo + (hi - lo) * self.rng.random::<f64>())
            }
            Schema::Boolean => json!(self.rng.random_bool(0.5)),
            Schema::Object { fields } => {
                let mut m = Map::new();
                for (k, s) in fields {
                    m.insert(k.clone(), self.value(s, slot));
                }
                Value::Object(m)
            }
            Schema::Array {
                items,
                min,
                max,
                unique,
                key,
            } => self.array(items, *min, *max, *unique, key.as_ref()),
        }
    }

    fn length(&mut self, min: usize, max: Option<usize>) -> usize {
        let hi = max.unwrap_or(min + 3).max(min);
        self.rng.random_range(min..=hi)
    }

    fn array(&mut self, items: &Schema, min: usize, max: Option<usize>, unique: bool, key: Option<&KeyRule>) -> Value {
        match key {
            Some(KeyRule::UniqueBy(field)) => {
                if let Some(domain) = items.field(field).and_then(Schema::id_domain) {
                    return self.keyed_by_domain(items, field, domain, min, max);
                }
            }
            Some(KeyRule::PartitionBy(field)) | Some(KeyRule::DisjointBy(field)) => {
                let partition = matches!(key, Some(KeyRule::PartitionBy(_)));
                return self.partition(items, field, partition, min, max);
            }
            None => {}
        }
        if let (true, Some(domain)) = (unique, items.id_domain()) {
            let mut ids = domain.to_vec();
            ids.shuffle(&mut self.rng);
            let n = self.length(min, max).min(ids.len());
            ids.truncate(n);
            return json!(ids);
        }
        let n = self.length(min, max);
        let mut out: Vec<Value> = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = self.value(items, Some((i, n)));
            let mut tries = 0;
            while unique && out.contains(&v) && tries < 32 {
                v = self.value(items, Some((i, n)));
                tries += 1;
            }
            out.push(v);
        }
        Value::Array(out)
    }

    /// One item per domain value, in domain order.
    fn keyed_by_domain(&mut self, items: &Schema, field: &str, domain: &[String], min: usize, max: Option<usize>) -> Value {
        let mut n = domain.len().min(max.unwrap_or(usize::MAX));
        if let Some(units) = excerpt_units(items) {
            n = n.min(units.max(min));
        }
        let mut out = Vec::with_capacity(n);
        for (i, id) in domain.iter().take(n).enumerate() {
            let mut v = self.value(items, Some((i, n)));
            v[field] = json!(id);
            out.push(v);
        }
        Value::Array(out)
    }

    /// Splits the field's id domain over a random number of items.
    fn partition(&mut self, items: &Schema, field: &str, exhaustive: bool, min: usize, max: Option<usize>) -> Value {
        let field_schema = items.field(field).expect("checked by well-formedness");
        let mut ids = field_schema.id_domain().unwrap_or(&[]).to_vec();
        ids.shuffle(&mut self.rng);
        if !exhaustive && ids.len() > 1 {
            let drop = self.rng.random_range(0..=ids.len() / 4);
            ids.truncate(ids.len() - drop);
        }
        let single = matches!(field_schema, Schema::String { .. });
        let groups = if single {
            ids.len().min(max.unwrap_or(usize::MAX))
        } else {
            let lo = min.max(1).min(ids.len().max(1));
            let hi = max.unwrap_or(ids.len()).min(ids.len()).max(lo);
            let target_lo = ids.len().div_ceil(3).clamp(lo, hi);
            let target_hi = ids.len().div_ceil(2).clamp(lo, hi);
            self.rng.random_range(target_lo..=target_hi)
        };
        if single {
            ids.truncate(groups);
        }
        // Random cut points give contiguous nonempty chunks.
        let mut cuts: Vec<usize> = (1..ids.len()).collect();
        cuts.shuffle(&mut self.rng);
        cuts.truncate(groups.saturating_sub(1));
        cuts.sort_unstable();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(ids.len());
        let n = bounds.len() - 1;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let chunk = &ids[bounds[i]..bounds[i + 1]];
            let mut v = self.value(items, Some((i, n)));
            v[field] = if single { json!(chunk[0]) } else { json!(chunk) };
            out.push(v);
        }
        Value::Array(out)
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn lowercase_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) if !s.starts_with("I ") => f.to_lowercase().chain(c).collect(),
        Some(_) => s.to_string(),
        None => String::new(),
    }
}

/// Finest number of excerpt units in the first excerpt field of `items`.
fn excerpt_units(items: &Schema) -> Option<usize> {
    let Schema::Object { fields } = items else { return None };
    fields.iter().find_map(|(_, s)| match s {
        Schema::String {
            hint: TextHint::ExcerptOf(text),
            ..
        } => Some(text.chars().filter(|c| !c.is_whitespace()).count()),
        _ => None,
    })
}

fn sentences(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if start.is_none() && !c.is_whitespace() {
            start = Some(i);
        }
        let ends = matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| n.is_whitespace());
        if let (true, Some(s)) = (ends, start) {
            out.push((s, i + c.len_utf8()));
            start = None;
        }
    }
    if let Some(s) = start {
        out.push((s, text.trim_end().len()));
    }
    out
}

fn words(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

/// Byte ranges of sentences when there are at least `n` of them, else of
/// words, else of non-blank characters.
fn units(text: &str, n: usize) -> Vec<(usize, usize)> {
    let s = sentences(text);
    if s.len() >= n {
        return s;
    }
    let w = words(text);
    if w.len() >= n {
        return w;
    }
    text.char_indices()
        .filter(|(_, c)| !c.is_whitespace())
        .map(|(i, c)| (i, i + c.len_utf8()))
        .collect()
}

/// The `i`-th of `n` contiguous, roughly equal excerpts of `text`.
fn excerpt(text: &str, i: usize, n: usize) -> String {
    let u = units(text, n.max(1));
    if u.is_empty() {
        return text.to_string();
    }
    let n = n.clamp(1, u.len());
    let i = i.min(n - 1);
    let a = i * u.len() / n;
    let b = ((i + 1) * u.len() / n).max(a + 1);
    text[u[a].0..u[b - 1].1].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(schema: Schema, text: &str) -> StructuredRequest {
        StructuredRequest::new("test", "system", schema).part(Part::text(text))
    }

    async fn complete(backend: &MockBackend, r: &StructuredRequest, seed: u64) -> Value {
        let call = CompletionCall {
            request: r,
            attempt: 0,
            seed,
            repair: None,
        };
        serde_json::from_str(&backend.complete(&call).await.unwrap().text).unwrap()
    }

    #[tokio::test]
    async fn identical_requests_give_identical_replies() {
        let m = MockBackend::new();
        let r = req(
            Schema::object(vec![("title", Schema::text(TextHint::Title))]),
            "a walk by the harbor",
        );
        let a = complete(&m, &r, 7).await;
        assert_eq!(a, complete(&m, &r, 7).await);
        assert!(r.schema.validate(&a).is_ok());
        assert_eq!(m.calls().len(), 2);
    }

    #[tokio::test]
    async fn generated_values_satisfy_their_schema() {
        let ids = ["s1", "s2", "s3", "s4", "s5", "s6"];
        let notes = "We left at dawn. The ferry was late. Rain all afternoon. Dinner with friends.";
        let schemas = vec![
            Schema::permutation(&ids),
            Schema::array(
                Schema::object(vec![
                    ("title", Schema::text(TextHint::Title)),
                    ("shot_ids", Schema::id_set(&ids, 1, None)),
                ]),
                1,
                None,
            )
            .keyed(KeyRule::PartitionBy("shot_ids".into())),
            Schema::array(
                Schema::object(vec![
                    ("scene_id", Schema::one_of(&["a", "b", "c"])),
                    ("text", Schema::text(TextHint::ExcerptOf(notes.into()))),
                ]),
                1,
                None,
            )
            .keyed(KeyRule::UniqueBy("scene_id".into())),
            Schema::Array {
                items: Box::new(Schema::text(TextHint::Sentence)),
                min: 3,
                max: Some(3),
                unique: true,
                key: None,
            },
            Schema::array(Schema::text(TextHint::Question), 3, Some(5)),
        ];
        let m = MockBackend::new();
        for seed in 0..40 {
            for s in &schemas {
                let v = complete(&m, &req(s.clone(), notes), seed).await;
                s.validate(&v).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{v}"));
            }
        }
    }

    #[test]
    fn excerpts_are_contiguous_and_cover_sentences() {
        let notes = "One. Two two. Three three three.";
        let parts: Vec<String> = (0..3).map(|i| excerpt(notes, i, 3)).collect();
        assert_eq!(parts, vec!["One.", "Two two.", "Three three three."]);
        assert_eq!(excerpt(notes, 0, 1), notes);
        let words: Vec<String> = (0..2).map(|i| excerpt("alpha beta gamma", i, 2)).collect();
        assert_eq!(words, vec!["alpha", "beta gamma"]);
    }

    #[test]
    fn description_embeds_checksum_prefix() {
        let mut g = Generator::new(1, "", Some("abcdef0123456789"));
        assert!(g.text(&TextHint::ImageDescription, None).contains("[abcdef01]"));
    }

    #[tokio::test]
    async fn images_are_distinct_and_tagged() {
        let m = MockBackend::new();
        let r = ImageGenRequest::new("kf", "a lighthouse", 3);
        let mut seen = Vec::new();
        for i in 0..3 {
            let out = m.generate_image(&r, 5, i).await.unwrap();
            let tag = media::png_tag(&out.bytes).unwrap();
            assert!(tag.contains(&short_hash(&["a lighthouse"])));
            assert!(!seen.contains(&out.bytes));
            seen.push(out.bytes);
        }
        let again = m.generate_image(&r, 5, 0).await.unwrap();
        assert_eq!(again.bytes, seen[0]);
    }

    #[tokio::test]
    async fn speech_length_follows_script() {
        let m = MockBackend::new();
        let s = SpeechRequest {
            script: "x".repeat(21),
            voice: "v".into(),
            seed: None,
        };
        let out = m.synthesize_speech(&s, 0).await.unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        std::fs::write(&p, out.bytes).unwrap();
        assert_eq!(media::probe(&p).unwrap().duration_s, Some(21.0 * 0.06));
    }

    #[tokio::test]
    async fn refusal_knob() {
        let m = MockBackend::new().refusing("forbidden");
        let r = ImageGenRequest::new("kf", "a forbidden door", 1);
        assert!(matches!(
            m.generate_image(&r, 0, 0).await,
            Err(ProviderError::ContentRefused(_))
        ));
    }
}
