//! Prompt rendering: the explanation-eliciting instruction and the judging
//! prompts for every condition.
//!
//! All scaffolding text lives in versioned resources under `templates/`. The
//! renderers only substitute `{name}` placeholders and join sections; they
//! never rewrite sentence or explanation text.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::MinimalPair;
use crate::digest::ChunkHasher;
use crate::explain::GrammarExplanation;

pub const DEFAULT_TARGET_WORDS: u32 = 250;
pub const DEFAULT_SHOTS: u32 = 3;

const BUNDLED: &[(&str, &str)] = &[
    ("instruction", include_str!("../templates/instruction.txt")),
    ("instruction_example", include_str!("../templates/instruction_example.txt")),
    ("question", include_str!("../templates/question.txt")),
    ("base_suffix", include_str!("../templates/base_suffix.txt")),
    ("cot_preamble", include_str!("../templates/cot_preamble.txt")),
    ("cot_suffix", include_str!("../templates/cot_suffix.txt")),
    ("cot_explained_preamble", include_str!("../templates/cot_explained_preamble.txt")),
    ("cot_explained_suffix", include_str!("../templates/cot_explained_suffix.txt")),
    ("textbook_header", include_str!("../templates/textbook_header.txt")),
    ("few_shot_example", include_str!("../templates/few_shot_example.txt")),
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("explanation text is empty")]
    EmptyExplanation,
    #[error("textbook condition needs at least one explanation")]
    EmptyExplanationSet,
    #[error("few-shot example {index} is the evaluation pair itself")]
    ShotOverlapsEvaluationPair { index: usize },
    #[error("expected {expected} few-shot examples, got {got}")]
    ShotCountMismatch { expected: usize, got: usize },
    #[error("explanation for `{0}` contains a `Sentence A:`/`Sentence B:` line, which would make the judging prompt ambiguous")]
    ExplanationHasSentenceLine(String),
    #[error("invalid instruction spec: {0}")]
    InvalidInstruction(String),
    #[error("cannot read template {path}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid condition `{0}`")]
    InvalidCondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Audience {
    #[serde(alias = "beginner")]
    Beginner,
    #[serde(alias = "expert")]
    Expert,
}

impl Audience {
    /// The phrase substituted into the instruction template.
    pub fn phrase(self) -> &'static str {
        match self {
            Audience::Beginner => "novice learner",
            Audience::Expert => "expert linguist",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Audience::Beginner => "beginner",
            Audience::Expert => "expert",
        }
    }
}

impl fmt::Display for Audience {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Audience {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "beginner" | "b" => Ok(Audience::Beginner),
            "expert" | "x" => Ok(Audience::Expert),
            other => Err(format!("unknown audience `{other}` (expected beginner or expert)")),
        }
    }
}

/// Which sentence of the pair is shown as "Sentence A".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Order {
    GoodFirst,
    BadFirst,
}

impl Order {
    /// Letter of the slot holding the grammatical sentence.
    pub fn correct_letter(self) -> char {
        match self {
            Order::GoodFirst => 'A',
            Order::BadFirst => 'B',
        }
    }

    pub fn arrange<'a>(self, good: &'a str, bad: &'a str) -> (&'a str, &'a str) {
        match self {
            Order::GoodFirst => (good, bad),
            Order::BadFirst => (bad, good),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConditionKind {
    Base,
    Cot,
    Gp,
    GpCot,
    Control,
    Textbook,
    FewShot,
}

impl ConditionKind {
    pub fn is_reasoning(self) -> bool {
        matches!(self, ConditionKind::Cot | ConditionKind::GpCot)
    }

    pub fn is_gp(self) -> bool {
        matches!(self, ConditionKind::Gp | ConditionKind::GpCot)
    }
}

/// One prompting condition.
///
/// `explanation_source` and `audience` are set exactly for the GP family;
/// `shots` exactly for few-shot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audience: Option<Audience>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u32>,
}

impl ConditionSpec {
    fn plain(kind: ConditionKind) -> Self {
        Self {
            kind,
            explanation_source: None,
            audience: None,
            shots: None,
        }
    }

    pub fn base() -> Self {
        Self::plain(ConditionKind::Base)
    }

    pub fn cot() -> Self {
        Self::plain(ConditionKind::Cot)
    }

    pub fn control() -> Self {
        Self::plain(ConditionKind::Control)
    }

    pub fn textbook() -> Self {
        Self::plain(ConditionKind::Textbook)
    }

    pub fn few_shot(shots: u32) -> Self {
        Self {
            shots: Some(shots),
            ..Self::plain(ConditionKind::FewShot)
        }
    }

    pub fn gp(generator: impl Into<String>, audience: Audience, reasoning: bool) -> Self {
        let kind = if reasoning {
            ConditionKind::GpCot
        } else {
            ConditionKind::Gp
        };
        Self {
            explanation_source: Some(generator.into()),
            audience: Some(audience),
            ..Self::plain(kind)
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let gp = self.kind.is_gp();
        let bad = gp != self.explanation_source.is_some()
            || gp != self.audience.is_some()
            || (self.kind == ConditionKind::FewShot) != self.shots.is_some()
            || self.shots == Some(0)
            || self.explanation_source.as_deref().is_some_and(|g| g.trim().is_empty());
        if bad {
            return Err(TemplateError::InvalidCondition(format!("{self:?}")));
        }
        Ok(())
    }

    /// Canonical CLI spelling: `base`, `cot`, `gp:<gen>`, `gp+cot:<gen>`,
    /// `gpx:<gen>`, `gpx+cot:<gen>`, `control`, `textbook`, `fewshot<k>`.
    pub fn label(&self) -> String {
        let gp_prefix = |a: Option<Audience>| match a {
            Some(Audience::Expert) => "gpx",
            _ => "gp",
        };
        let generator = self.explanation_source.as_deref().unwrap_or_default();
        match self.kind {
            ConditionKind::Base => "base".into(),
            ConditionKind::Cot => "cot".into(),
            ConditionKind::Gp => format!("{}:{generator}", gp_prefix(self.audience)),
            ConditionKind::GpCot => format!("{}+cot:{generator}", gp_prefix(self.audience)),
            ConditionKind::Control => "control".into(),
            ConditionKind::Textbook => "textbook".into(),
            ConditionKind::FewShot => format!("fewshot{}", self.shots.unwrap_or(DEFAULT_SHOTS)),
        }
    }
}

impl fmt::Display for ConditionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ConditionSpec {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || TemplateError::InvalidCondition(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "base" => return Ok(Self::base()),
            "cot" | "ct" => return Ok(Self::cot()),
            "control" | "con" => return Ok(Self::control()),
            "textbook" => return Ok(Self::textbook()),
            _ => {}
        }
        if let Some(k) = lower.strip_prefix("fewshot") {
            let shots = if k.is_empty() {
                DEFAULT_SHOTS
            } else {
                k.parse().map_err(|_| invalid())?
            };
            let spec = Self::few_shot(shots);
            spec.validate().map_err(|_| invalid())?;
            return Ok(spec);
        }
        // Generator labels keep their original case.
        let (head, generator) = s.trim().split_once(':').ok_or_else(invalid)?;
        if generator.trim().is_empty() {
            return Err(invalid());
        }
        let (audience, reasoning) = match head.to_ascii_lowercase().as_str() {
            "gp" | "gpb" => (Audience::Beginner, false),
            "gp+cot" | "gpb+cot" | "gp+ct" | "gpb+ct" => (Audience::Beginner, true),
            "gpx" => (Audience::Expert, false),
            "gpx+cot" | "gpx+ct" => (Audience::Expert, true),
            _ => return Err(invalid()),
        };
        Ok(Self::gp(generator.trim(), audience, reasoning))
    }
}

/// Inputs of the explanation-eliciting instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSpec {
    pub paradigm_display_name: String,
    pub language_display_name: String,
    pub audience: Audience,
    /// (good, bad) reference pairs, between 2 and 4 of them.
    pub reference_examples: Vec<(String, String)>,
    pub target_words: u32,
    pub template_version: String,
}

impl InstructionSpec {
    pub fn validate(&self) -> Result<(), TemplateError> {
        let n = self.reference_examples.len();
        if !(2..=4).contains(&n) {
            return Err(TemplateError::InvalidInstruction(format!(
                "{n} reference examples (need 2 to 4)"
            )));
        }
        if self.target_words == 0 {
            return Err(TemplateError::InvalidInstruction("target_words must be positive".into()));
        }
        if self.paradigm_display_name.trim().is_empty() {
            return Err(TemplateError::InvalidInstruction("empty paradigm name".into()));
        }
        Ok(())
    }
}

/// `left_branch_island_echo_question` → `left branch island echo question`.
pub fn paradigm_display_name(paradigm: &str) -> String {
    paradigm.replace('_', " ")
}

/// English name for a language tag; unknown tags are returned unchanged.
pub fn language_display_name(tag: &str) -> String {
    let primary = tag.split(['-', '_']).next().unwrap_or(tag).to_ascii_lowercase();
    match primary.as_str() {
        "en" => "English",
        "zh" => "Chinese",
        "ru" => "Russian",
        "de" => "German",
        "fr" => "French",
        "es" => "Spanish",
        "ja" => "Japanese",
        _ => return tag.to_string(),
    }
    .to_string()
}

/// A fully rendered judging prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: Option<String>,
    pub user_text: String,
    pub condition: ConditionSpec,
    pub order: Order,
    pub render_digest: String,
}

impl PromptBundle {
    fn new(system_text: Option<String>, user_text: String, condition: ConditionSpec, order: Order) -> Self {
        let mut h = ChunkHasher::new();
        h.chunk([system_text.is_some() as u8])
            .chunk(system_text.as_deref().unwrap_or_default())
            .chunk(&user_text);
        Self {
            render_digest: h.finish(),
            system_text,
            user_text,
            condition,
            order,
        }
    }
}

/// The loaded template literals plus their version tag.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    texts: HashMap<&'static str, String>,
    version: String,
    system_text: Option<String>,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        let texts = BUNDLED.iter().map(|(k, v)| (*k, v.to_string())).collect();
        Self::from_texts(texts, "v1")
    }

    /// Bundled templates with any same-named `<name>.txt` files in `dir`
    /// taking precedence. Overrides always produce a `custom-` version.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut texts: HashMap<&'static str, String> =
            BUNDLED.iter().map(|(k, v)| (*k, v.to_string())).collect();
        for (name, _) in BUNDLED {
            let path = dir.join(format!("{name}.txt"));
            match fs::read_to_string(&path) {
                Ok(text) => {
                    texts.insert(name, text);
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(source) => return Err(TemplateError::Unreadable { path, source }),
            }
        }
        Ok(Self::from_texts(texts, "custom"))
    }

    fn from_texts(texts: HashMap<&'static str, String>, prefix: &str) -> Self {
        let mut h = ChunkHasher::new();
        for (name, _) in BUNDLED {
            h.chunk(name).chunk(&texts[name]);
        }
        let digest = h.finish();
        Self {
            texts,
            version: format!("{prefix}-{}", &digest[..12]),
            system_text: None,
        }
    }

    /// Sets the system turn attached to every judging bundle.
    pub fn with_system_text(mut self, system_text: Option<String>) -> Self {
        self.system_text = system_text.filter(|s| !s.is_empty());
        self
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    fn text(&self, name: &str) -> &str {
        &self.texts[name]
    }

    pub fn render_instruction(&self, spec: &InstructionSpec) -> String {
        let audience = spec.audience.phrase();
        let examples = spec
            .reference_examples
            .iter()
            .map(|(good, bad)| fill(self.text("instruction_example"), &[("good", good), ("bad", bad)]))
            .collect::<Vec<_>>()
            .join("\n\n");
        let target = spec.target_words.to_string();
        fill(
            self.text("instruction"),
            &[
                ("audience", audience),
                ("paradigm", &spec.paradigm_display_name),
                ("language", &spec.language_display_name),
                ("examples", &examples),
                ("target_words", &target),
            ],
        )
    }

    fn question(&self, pair: &MinimalPair, order: Order) -> String {
        let (a, b) = order.arrange(&pair.good, &pair.bad);
        fill(self.text("question"), &[("sentence_a", a), ("sentence_b", b)])
    }

    fn base_body(&self, pair: &MinimalPair, order: Order) -> String {
        format!("{}\n{}", self.question(pair, order), self.text("base_suffix"))
    }

    fn cot_body(&self, pair: &MinimalPair, order: Order, explained: bool) -> String {
        let (pre, post) = if explained {
            ("cot_explained_preamble", "cot_explained_suffix")
        } else {
            ("cot_preamble", "cot_suffix")
        };
        format!(
            "{}\n{}\n{}",
            self.text(pre),
            self.question(pair, order),
            self.text(post)
        )
    }

    fn bundle(&self, user_text: String, condition: ConditionSpec, order: Order) -> PromptBundle {
        PromptBundle::new(self.system_text.clone(), user_text, condition, order)
    }

    pub fn render_base(&self, pair: &MinimalPair, order: Order) -> PromptBundle {
        self.bundle(self.base_body(pair, order), ConditionSpec::base(), order)
    }

    pub fn render_cot(&self, pair: &MinimalPair, order: Order) -> PromptBundle {
        self.bundle(self.cot_body(pair, order, false), ConditionSpec::cot(), order)
    }

    /// GP (`reasoning = false`) or GP+CoT rendering: the explanation, a blank
    /// line, then the judging question.
    pub fn render_with_explanation(
        &self,
        pair: &MinimalPair,
        order: Order,
        explanation: &GrammarExplanation,
        reasoning: bool,
    ) -> Result<PromptBundle, TemplateError> {
        let condition =
            ConditionSpec::gp(explanation.generator_model.clone(), explanation.audience, reasoning);
        let text = self.explained_text(pair, order, explanation, reasoning)?;
        Ok(self.bundle(text, condition, order))
    }

    fn explained_text(
        &self,
        pair: &MinimalPair,
        order: Order,
        explanation: &GrammarExplanation,
        reasoning: bool,
    ) -> Result<String, TemplateError> {
        check_explanation(explanation)?;
        let body = if reasoning {
            self.cot_body(pair, order, true)
        } else {
            self.base_body(pair, order)
        };
        Ok(format!("{}\n\n{body}", explanation.text))
    }

    /// GP layout carrying a deliberately irrelevant explanation.
    pub fn render_control(
        &self,
        pair: &MinimalPair,
        order: Order,
        control_explanation: &GrammarExplanation,
    ) -> Result<PromptBundle, TemplateError> {
        let text = self.explained_text(pair, order, control_explanation, false)?;
        Ok(self.bundle(text, ConditionSpec::control(), order))
    }

    /// Every explanation under its own header, sorted by paradigm name, then
    /// the base question.
    pub fn render_textbook(
        &self,
        pair: &MinimalPair,
        order: Order,
        explanations: &[GrammarExplanation],
    ) -> Result<PromptBundle, TemplateError> {
        if explanations.is_empty() {
            return Err(TemplateError::EmptyExplanationSet);
        }
        let mut sorted: Vec<&GrammarExplanation> = explanations.iter().collect();
        sorted.sort_by(|a, b| {
            (&a.paradigm, &a.text).cmp(&(&b.paradigm, &b.text))
        });
        let mut sections = Vec::with_capacity(sorted.len());
        for e in sorted {
            check_explanation(e)?;
            let header = fill(self.text("textbook_header"), &[("paradigm", &e.paradigm)]);
            sections.push(format!("{header}\n{}", e.text));
        }
        let text = format!("{}\n\n{}", sections.join("\n\n"), self.base_body(pair, order));
        Ok(self.bundle(text, ConditionSpec::textbook(), order))
    }

    /// Solved examples followed by the unsolved evaluation question.
    ///
    /// `shots` are (good, bad) pairs; their presentation orders alternate
    /// GOOD_FIRST, BAD_FIRST, ... (see [`shot_order`]).
    pub fn render_few_shot(
        &self,
        pair: &MinimalPair,
        order: Order,
        shots: &[(String, String)],
    ) -> Result<PromptBundle, TemplateError> {
        if shots.is_empty() {
            return Err(TemplateError::ShotCountMismatch { expected: DEFAULT_SHOTS as usize, got: 0 });
        }
        let mut blocks = Vec::with_capacity(shots.len() + 1);
        for (i, (good, bad)) in shots.iter().enumerate() {
            let same = |s: &str| s == pair.good || s == pair.bad;
            if same(good) && same(bad) {
                return Err(TemplateError::ShotOverlapsEvaluationPair { index: i + 1 });
            }
            let shot_order = shot_order(i);
            let (a, b) = shot_order.arrange(good, bad);
            let index = (i + 1).to_string();
            let answer = shot_order.correct_letter().to_string();
            blocks.push(fill(
                self.text("few_shot_example"),
                &[("index", &index), ("sentence_a", a), ("sentence_b", b), ("answer", &answer)],
            ));
        }
        blocks.push(self.base_body(pair, order));
        let condition = ConditionSpec::few_shot(shots.len() as u32);
        Ok(self.bundle(blocks.join("\n\n"), condition, order))
    }

    /// Renders the judging prompt for any condition. `ctx` supplies what the
    /// condition needs; GP uses `explanation`, control uses `control`,
    /// textbook uses `textbook` and few-shot uses `shots`.
    pub fn render_condition(
        &self,
        condition: &ConditionSpec,
        pair: &MinimalPair,
        order: Order,
        ctx: &RenderContext<'_>,
    ) -> Result<PromptBundle, RenderFailure> {
        let need = |what: &'static str| RenderFailure::Missing(what);
        let mut bundle = match condition.kind {
            ConditionKind::Base => self.render_base(pair, order),
            ConditionKind::Cot => self.render_cot(pair, order),
            ConditionKind::Gp | ConditionKind::GpCot => {
                let e = ctx.explanation.ok_or(need("explanation"))?;
                self.render_with_explanation(pair, order, e, condition.kind == ConditionKind::GpCot)?
            }
            ConditionKind::Control => {
                self.render_control(pair, order, ctx.control.ok_or(need("control explanation"))?)?
            }
            ConditionKind::Textbook => self.render_textbook(pair, order, ctx.textbook)?,
            ConditionKind::FewShot => {
                let expected = condition.shots.unwrap_or(DEFAULT_SHOTS) as usize;
                if ctx.shots.len() != expected {
                    return Err(TemplateError::ShotCountMismatch {
                        expected,
                        got: ctx.shots.len(),
                    }
                    .into());
                }
                self.render_few_shot(pair, order, ctx.shots)?
            }
        };
        // Keep the caller's spelling (e.g. the configured generator label).
        bundle.condition = condition.clone();
        Ok(bundle)
    }
}

/// Per-pair inputs for [`TemplateSet::render_condition`].
#[derive(Debug, Default, Clone, Copy)]
pub struct RenderContext<'a> {
    pub explanation: Option<&'a GrammarExplanation>,
    pub control: Option<&'a GrammarExplanation>,
    pub textbook: &'a [GrammarExplanation],
    pub shots: &'a [(String, String)],
}

#[derive(Debug, Error)]
pub enum RenderFailure {
    #[error("missing {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Presentation order of the `index`-th (0-based) few-shot example.
pub fn shot_order(index: usize) -> Order {
    if index.is_multiple_of(2) {
        Order::GoodFirst
    } else {
        Order::BadFirst
    }
}

fn check_explanation(e: &GrammarExplanation) -> Result<(), TemplateError> {
    if e.text.trim().is_empty() {
        return Err(TemplateError::EmptyExplanation);
    }
    let has_sentence_line = e.text.lines().any(|l| {
        let l = l.trim_start();
        l.starts_with("Sentence A:") || l.starts_with("Sentence B:")
    });
    if has_sentence_line {
        return Err(TemplateError::ExplanationHasSentenceLine(e.paradigm.clone()));
    }
    Ok(())
}

/// Single-pass `{name}` substitution. Substituted values are never rescanned,
/// and unknown placeholders are left as they are.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => {
                        out.push_str(value);
                        rest = &after[close + 1..];
                    }
                    None => {
                        out.push('{');
                        rest = after;
                    }
                }
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Dataset;

    fn pair() -> MinimalPair {
        MinimalPair {
            id: "p:1".into(),
            dataset: Dataset::Blimp,
            language: "en".into(),
            paradigm: "only_npi_scope".into(),
            category: "npi licensing".into(),
            good: "Only Bill would ever complain.".into(),
            bad: "Even Bill would ever complain.".into(),
        }
    }

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("{a}-{b}", &[("a", "{b}"), ("b", "x")]), "{b}-x");
        assert_eq!(fill("{unknown} {a", &[("a", "1")]), "{unknown} {a");
        assert_eq!(fill("", &[]), "");
    }

    #[test]
    fn condition_labels_round_trip() {
        for label in [
            "base", "cot", "gp:son", "gp+cot:o1", "gpx:son", "gpx+cot:o1", "control", "textbook",
            "fewshot3", "fewshot5",
        ] {
            let spec: ConditionSpec = label.parse().unwrap();
            spec.validate().unwrap();
            assert_eq!(spec.label(), label);
        }
        assert_eq!("gpb:son".parse::<ConditionSpec>().unwrap().label(), "gp:son");
        assert_eq!("fewshot".parse::<ConditionSpec>().unwrap().shots, Some(3));
        for bad in ["gp:", "fewshot0", "nonsense", "gpz:son"] {
            assert!(bad.parse::<ConditionSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn version_tracks_literals() {
        let a = TemplateSet::bundled();
        assert!(a.version().starts_with("v1-"));
        let dir = tempfile::tempdir().unwrap();
        let same = TemplateSet::from_dir(dir.path()).unwrap();
        assert!(same.version().starts_with("custom-"));
        fs::write(dir.path().join("base_suffix.txt"), "Answer A or B.").unwrap();
        let changed = TemplateSet::from_dir(dir.path()).unwrap();
        assert_ne!(same.version(), changed.version());
        let bundle = changed.render_base(&pair(), Order::GoodFirst);
        assert!(bundle.user_text.ends_with("Answer A or B."));
    }

    #[test]
    fn sentence_line_in_explanation_is_rejected() {
        let t = TemplateSet::bundled();
        let e = GrammarExplanation::for_test("only_npi_scope", "Rule.\nSentence A: copied");
        assert!(matches!(
            t.render_with_explanation(&pair(), Order::GoodFirst, &e, false),
            Err(TemplateError::ExplanationHasSentenceLine(_))
        ));
    }

    #[test]
    fn system_text_enters_digest() {
        let plain = TemplateSet::bundled().render_base(&pair(), Order::GoodFirst);
        let sys = TemplateSet::bundled()
            .with_system_text(Some("Be terse.".into()))
            .render_base(&pair(), Order::GoodFirst);
        assert_eq!(plain.user_text, sys.user_text);
        assert_ne!(plain.render_digest, sys.render_digest);
    }
}
