//! Prompt templates with `{text}`, `{text_a}`, `{text_b}` and `{mask}`
//! placeholders.

use serde::{Deserialize, Serialize};

use crate::tensorio::{DatasetRecord, Payload};

/// Backend-agnostic marker for the prediction slot.
pub const MASK_MARKER: &str = "[MASK]";

pub type Result<T, E = TemplateError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template has no {{mask}} placeholder")]
    MissingMask,
    #[error("template has {0} {{mask}} placeholders, expected exactly one")]
    MultipleMasks(usize),
    #[error("template mixes {{text}} with {{text_a}}/{{text_b}}")]
    MixedSlots,
    #[error("template needs {{text}} or both {{text_a}} and {{text_b}}")]
    MissingText,
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("record {id:?} does not fit a {expected} template")]
    ShapeMismatch { id: String, expected: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Text,
    TextA,
    TextB,
    Mask,
}

impl Slot {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "text" => Self::Text,
            "text_a" => Self::TextA,
            "text_b" => Self::TextB,
            "mask" => Self::Mask,
            _ => return None,
        })
    }

    fn placeholder(self) -> &'static str {
        match self {
            Self::Text => "{text}",
            Self::TextA => "{text_a}",
            Self::TextB => "{text_b}",
            Self::Mask => "{mask}",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Literal(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
    is_pair: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    /// Offset of [`MASK_MARKER`] in `text`, counted in Unicode scalar values.
    pub mask_char_offset: usize,
}

pub fn parse_template(source: &str) -> Result<Template> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = source;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            break;
        };
        let name = &after[..close];
        // `{` not followed by an identifier and `}` is plain text
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            literal.push_str(&rest[..open + 1]);
            rest = after;
            continue;
        }
        let slot =
            Slot::from_name(name).ok_or_else(|| TemplateError::UnknownPlaceholder(name.into()))?;
        literal.push_str(&rest[..open]);
        if !literal.is_empty() {
            segments.push(Segment::Literal(std::mem::take(&mut literal)));
        }
        segments.push(Segment::Slot(slot));
        rest = &after[close + 1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }

    let count = |s: Slot| segments.iter().filter(|x| **x == Segment::Slot(s)).count();
    match count(Slot::Mask) {
        0 => return Err(TemplateError::MissingMask),
        1 => {}
        n => return Err(TemplateError::MultipleMasks(n)),
    }
    let (text, a, b) = (count(Slot::Text), count(Slot::TextA), count(Slot::TextB));
    if text > 0 && a + b > 0 {
        return Err(TemplateError::MixedSlots);
    }
    if text == 0 && (a == 0 || b == 0) {
        return Err(TemplateError::MissingText);
    }
    Ok(Template {
        segments,
        is_pair: text == 0,
    })
}

impl Template {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_pair(&self) -> bool {
        self.is_pair
    }

    /// The placeholder source this template was parsed from.
    pub fn source(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(l) => l.as_str(),
                Segment::Slot(slot) => slot.placeholder(),
            })
            .collect()
    }

    pub fn render(&self, record: &DatasetRecord) -> Result<RenderedPrompt> {
        let (text, a, b) = match (&record.payload, self.is_pair) {
            (Payload::Single(t), false) => (t.as_str(), "", ""),
            (Payload::Pair(a, b), true) => ("", a.as_str(), b.as_str()),
            (_, pair) => {
                return Err(TemplateError::ShapeMismatch {
                    id: record.id.clone(),
                    expected: if pair { "sentence-pair" } else { "single-sentence" },
                })
            }
        };
        let mut out = String::new();
        let mut mask_char_offset = 0;
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Slot(Slot::Text) => out.push_str(text),
                Segment::Slot(Slot::TextA) => out.push_str(a),
                Segment::Slot(Slot::TextB) => out.push_str(b),
                Segment::Slot(Slot::Mask) => {
                    mask_char_offset = out.chars().count();
                    out.push_str(MASK_MARKER);
                }
            }
        }
        Ok(RenderedPrompt {
            text: out,
            mask_char_offset,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(s: &str) -> Segment {
        Segment::Literal(s.into())
    }

    #[test]
    fn parses_single_sentence_template() {
        let t = parse_template("A {mask} news : {text} .").unwrap();
        assert_eq!(
            t.segments(),
            &[
                lit("A "),
                Segment::Slot(Slot::Mask),
                lit(" news : "),
                Segment::Slot(Slot::Text),
                lit(" ."),
            ]
        );
        assert!(!t.is_pair());
    }

    #[test]
    fn parses_pair_template() {
        let t = parse_template("{text_a} ? {mask} , {text_b}").unwrap();
        assert!(t.is_pair());
    }

    #[test]
    fn repeated_text_a_is_allowed() {
        let t = parse_template("{text_a} {text_b} In this sentence, {text_a} is a {mask} .").unwrap();
        let r = t
            .render(&DatasetRecord::pair("d", "Paris", "is a city.", None))
            .unwrap();
        assert_eq!(r.text, "Paris is a city. In this sentence, Paris is a [MASK] .");
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_template("no mask here {text}"), Err(TemplateError::MissingMask));
        assert_eq!(
            parse_template("{mask} {mask} {text}"),
            Err(TemplateError::MultipleMasks(2))
        );
        assert_eq!(
            parse_template("{text} {text_a} {text_b} {mask}"),
            Err(TemplateError::MixedSlots)
        );
        assert_eq!(parse_template("{text_a} {mask}"), Err(TemplateError::MissingText));
        assert_eq!(parse_template("{mask}"), Err(TemplateError::MissingText));
        assert_eq!(
            parse_template("{label} {text} {mask}"),
            Err(TemplateError::UnknownPlaceholder("label".into()))
        );
    }

    #[test]
    fn non_placeholder_braces_are_literal() {
        let t = parse_template("{ x } {text} {mask} {").unwrap();
        assert_eq!(t.source(), "{ x } {text} {mask} {");
        let r = t.render(&DatasetRecord::single("a", "y", None)).unwrap();
        assert_eq!(r.text, "{ x } y [MASK] {");
    }

    #[test]
    fn renders_running_example() {
        let t = parse_template("A {mask} news : {text} .").unwrap();
        let r = t
            .render(&DatasetRecord::single(
                "w",
                "The Warriors won the NBA championship 2022",
                None,
            ))
            .unwrap();
        assert_eq!(
            r.text,
            "A [MASK] news : The Warriors won the NBA championship 2022 ."
        );
        assert_eq!(r.mask_char_offset, 2);
    }

    #[test]
    fn empty_text_before_mask() {
        let t = parse_template("{text}{mask}").unwrap();
        let r = t.render(&DatasetRecord::single("e", "", None)).unwrap();
        assert_eq!(r.text, "[MASK]");
        assert_eq!(r.mask_char_offset, 0);
    }

    #[test]
    fn offset_counts_characters() {
        let t = parse_template("{text} → {mask}").unwrap();
        let r = t.render(&DatasetRecord::single("u", "café", None)).unwrap();
        let marker: String = r.text.chars().skip(r.mask_char_offset).take(6).collect();
        assert_eq!(marker, MASK_MARKER);
    }

    #[test]
    fn shape_mismatch() {
        let t = parse_template("{text} {mask}").unwrap();
        assert!(matches!(
            t.render(&DatasetRecord::pair("p", "a", "b", None)),
            Err(TemplateError::ShapeMismatch { .. })
        ));
        let pair = parse_template("{text_a} {mask} {text_b}").unwrap();
        assert!(matches!(
            pair.render(&DatasetRecord::single("s", "a", None)),
            Err(TemplateError::ShapeMismatch { .. })
        ));
    }
}
