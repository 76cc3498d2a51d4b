use super::{RawLlmReply, MIN_WORD_BUDGET};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("reply from {0} was empty")]
    Empty(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedGuidance {
    pub image_description: String,
    pub location_description: String,
    pub safety_assessment: String,
    pub next_instruction: String,
    pub warnings: String,
    pub retake_requested: bool,
    pub spoken_text: String,
    pub word_count: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Description,
    Location,
    Safety,
    Next,
    Warnings,
}

static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^[\s\-*#>]*(?:\*\*)?(description|location|safety|next|warnings?)(?:\*\*)?\s*:(?:\*\*)?\s*(.*)$")
        .unwrap()
});

static RETAKE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[\s\-*#>]*(?:\*\*)?RETAKE(?:\*\*)?(?:[\s:.!]+(.*))?$").unwrap());

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn normalize(text: &str) -> String {
    let mut out = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if let Some(last) = out.chars().last() {
        if !matches!(last, '.' | '!' | '?') {
            while out.ends_with([',', ';', ':', '-']) {
                out.pop();
            }
            if !out.is_empty() {
                out.push('.');
            }
        }
    }
    out
}

/// Splits after `.`, `!` or `?` followed by whitespace.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        let at_break = matches!(b, b'.' | b'!' | b'?')
            && bytes.get(i + 1).is_none_or(|n| n.is_ascii_whitespace());
        if at_break {
            let s = text[start..=i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Longest run of whole sentences within `budget` words, or a hard word cut
/// when even the first sentence is too long.
fn truncate(text: &str, budget: usize) -> String {
    if word_count(text) <= budget {
        return text.to_string();
    }
    let mut kept = Vec::new();
    let mut used = 0;
    for sentence in sentences(text) {
        let n = word_count(sentence);
        if used + n > budget {
            break;
        }
        used += n;
        kept.push(sentence);
    }
    if kept.is_empty() {
        let cut: Vec<&str> = text.split_whitespace().take(budget).collect();
        return normalize(&cut.join(" "));
    }
    kept.join(" ")
}

/// Parses the labeled reply and assembles the spoken text in safety-first
/// order within `budget` words.
pub fn refine(raw: &RawLlmReply, budget: usize) -> Result<RefinedGuidance, RefineError> {
    let budget = budget.max(MIN_WORD_BUDGET);
    if raw.text.trim().is_empty() {
        return Err(RefineError::Empty(raw.backend_id.clone()));
    }

    let mut retake_requested = false;
    let mut fields: [(Field, String); 5] = [
        (Field::Description, String::new()),
        (Field::Location, String::new()),
        (Field::Safety, String::new()),
        (Field::Next, String::new()),
        (Field::Warnings, String::new()),
    ];
    let mut unlabeled = String::new();
    let mut current: Option<usize> = None;
    let mut saw_label = false;

    for line in raw.text.lines() {
        if let Some(caps) = RETAKE.captures(line) {
            retake_requested = true;
            if let Some(note) = caps.get(1) {
                unlabeled.push(' ');
                unlabeled.push_str(note.as_str());
            }
            current = None;
            continue;
        }
        if let Some(caps) = LABEL.captures(line) {
            saw_label = true;
            let field = match caps[1].to_ascii_lowercase().as_str() {
                "description" => Field::Description,
                "location" => Field::Location,
                "safety" => Field::Safety,
                "next" => Field::Next,
                _ => Field::Warnings,
            };
            let idx = fields.iter().position(|(f, _)| *f == field).unwrap();
            fields[idx].1.push(' ');
            fields[idx].1.push_str(&caps[2]);
            current = Some(idx);
            continue;
        }
        match current {
            Some(idx) => {
                fields[idx].1.push(' ');
                fields[idx].1.push_str(line);
            }
            None => {
                unlabeled.push(' ');
                unlabeled.push_str(line);
            }
        }
    }

    let get = |f: Field| {
        let text = &fields.iter().find(|(k, _)| *k == f).unwrap().1;
        normalize(text)
    };
    let (mut description, location, mut safety, next, warnings) = (
        get(Field::Description),
        get(Field::Location),
        get(Field::Safety),
        get(Field::Next),
        get(Field::Warnings),
    );
    let unlabeled = normalize(&unlabeled);
    if !saw_label {
        safety = unlabeled;
    } else if !unlabeled.is_empty() {
        description = normalize(&format!("{unlabeled} {description}"));
    }

    let mut spoken: Vec<&str> = [&safety, &next, &warnings]
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(String::as_str)
        .collect();
    let mut used: usize = spoken.iter().map(|s| word_count(s)).sum();
    for extra in [&description, &location] {
        let n = word_count(extra);
        if n > 0 && used + n <= budget {
            spoken.push(extra);
            used += n;
        }
    }
    let spoken_text = truncate(&spoken.join(" "), budget);
    let word_count = word_count(&spoken_text);

    Ok(RefinedGuidance {
        image_description: description,
        location_description: location,
        safety_assessment: safety,
        next_instruction: next,
        warnings,
        retake_requested,
        spoken_text,
        word_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const LONG_DESCRIPTION: &str = "The image shows a walkway that appears to be under construction or maintenance. There are orange and white traffic cones placed along the path, with yellow caution tape strung between them, creating a barrier. On the right side, there is a plastic sheet covering something, possibly construction materials or an area under repair. Wooden planks are also visible on the ground near the plastic sheet. In the background, a few people are walking along the path. The ground looks wet, suggesting it might have rained recently.";
    pub(crate) const CONCISE_REPLY: &str = "It's safe to walk but be cautious as there is construction underway with barriers and caution tape indicating a restricted area. Please navigate around the construction area carefully.";

    fn raw(text: &str) -> RawLlmReply {
        RawLlmReply {
            text: text.into(),
            backend_id: "test".into(),
            latency: 0.0,
        }
    }

    #[test]
    fn fixture_word_counts() {
        assert_eq!(word_count(LONG_DESCRIPTION), 86);
        assert_eq!(word_count(CONCISE_REPLY), 28);
    }

    #[test]
    fn long_description_is_cut_to_whole_sentences() {
        let g = refine(&raw(LONG_DESCRIPTION), 40).unwrap();
        assert!(g.word_count <= 40);
        assert!(g.word_count < 86);
        assert!(g.spoken_text.starts_with("The image shows a walkway"));
        assert!(g.spoken_text.ends_with("creating a barrier."));
        assert_eq!(g.safety_assessment.split_whitespace().count(), 86);
    }

    #[test]
    fn concise_reply_passes_untouched() {
        let g = refine(&raw(CONCISE_REPLY), 40).unwrap();
        assert_eq!(g.spoken_text, CONCISE_REPLY);
        assert_eq!(g.word_count, 28);
    }

    #[test]
    fn labeled_fields_order_safety_first() {
        let text = "DESCRIPTION: A paved path with cones.\nLOCATION: Near Oak Gate.\nSAFETY: Safe to walk slowly.\nNEXT: Turn left in 20 meters.\nWARNINGS: Wet ground";
        let g = refine(&raw(text), 40).unwrap();
        assert_eq!(
            g.spoken_text,
            "Safe to walk slowly. Turn left in 20 meters. Wet ground. A paved path with cones. Near Oak Gate."
        );
        assert_eq!(g.warnings, "Wet ground.");
        assert!(!g.retake_requested);
    }

    #[test]
    fn description_dropped_when_budget_is_tight() {
        let text = "DESCRIPTION: A very long and winding paved path lined with many orange cones.\nSAFETY: Safe to walk but slow down now.\nNEXT: Turn left at the gate.";
        let g = refine(&raw(text), 15).unwrap();
        assert_eq!(g.spoken_text, "Safe to walk but slow down now. Turn left at the gate.");
    }

    #[test]
    fn retake_marker_detected() {
        let g = refine(&raw("RETAKE\nThe photo only shows the sky."), 40).unwrap();
        assert!(g.retake_requested);
        assert_eq!(g.spoken_text, "The photo only shows the sky.");
        let inline = refine(&raw("RETAKE: camera points at the ground"), 40).unwrap();
        assert!(inline.retake_requested);
        let labeled = refine(&raw("SAFETY: Unclear.\n**RETAKE**"), 40).unwrap();
        assert!(labeled.retake_requested);
    }

    #[test]
    fn lowercase_labels_and_markdown() {
        let g = refine(&raw("- **Safety:** clear path\n- **Next:** keep straight"), 40).unwrap();
        assert_eq!(g.safety_assessment, "clear path.");
        assert_eq!(g.next_instruction, "keep straight.");
    }

    #[test]
    fn empty_reply_is_error() {
        assert!(matches!(refine(&raw("  \n "), 40), Err(RefineError::Empty(_))));
    }

    #[test]
    fn run_on_sentence_gets_hard_cut() {
        let text = (0..60).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let g = refine(&raw(&text), 40).unwrap();
        assert_eq!(g.word_count, 40);
        assert!(g.spoken_text.ends_with("w39."));
    }

    #[test]
    fn refining_twice_is_stable() {
        for text in [LONG_DESCRIPTION, CONCISE_REPLY] {
            let once = refine(&raw(text), 40).unwrap();
            let twice = refine(&raw(&once.spoken_text), 40).unwrap();
            assert_eq!(once.spoken_text, twice.spoken_text);
        }
    }

    proptest! {
        #[test]
        fn budget_law(words in proptest::collection::vec("[a-z]{1,8}[.,!?]?", 1..150), budget in 10usize..80) {
            let text = words.join(" ");
            let g = refine(&raw(&text), budget).unwrap();
            prop_assert!(g.word_count <= budget);
            prop_assert_eq!(g.word_count, word_count(&g.spoken_text));
            let again = refine(&raw(&g.spoken_text), budget).unwrap();
            prop_assert_eq!(again.spoken_text, g.spoken_text);
        }
    }
}
