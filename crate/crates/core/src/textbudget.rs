//! Token counting and boundary-aware chunking.
//!
//! Every budget decision in the crate goes through [`TokenCounter`]. The
//! default heuristic counts `ceil(chars / 4)`; an exact tokenizer can be
//! attached through the [`Tokenizer`] trait.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub const DEFAULT_CHARS_PER_TOKEN: f64 = 4.0;
pub const DEFAULT_CHUNK_TOKENS: usize = 1500;
pub const MIN_CHUNK_BUDGET: usize = 16;

/// An exact, model-specific token counter.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

#[derive(Clone)]
pub enum TokenCounter {
    Heuristic { chars_per_token: f64 },
    Plugin(Arc<dyn Tokenizer>),
}

impl Default for TokenCounter {
    fn default() -> Self {
        TokenCounter::Heuristic {
            chars_per_token: DEFAULT_CHARS_PER_TOKEN,
        }
    }
}

impl fmt::Debug for TokenCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenCounter::Heuristic { chars_per_token } => f
                .debug_struct("Heuristic")
                .field("chars_per_token", chars_per_token)
                .finish(),
            TokenCounter::Plugin(t) => f.debug_tuple("Plugin").field(&t.name()).finish(),
        }
    }
}

impl TokenCounter {
    pub fn heuristic(chars_per_token: f64) -> Self {
        assert!(chars_per_token > 0.0, "chars_per_token must be positive");
        TokenCounter::Heuristic { chars_per_token }
    }

    pub fn plugin(tokenizer: Arc<dyn Tokenizer>) -> Self {
        TokenCounter::Plugin(tokenizer)
    }

    pub fn count(&self, text: &str) -> usize {
        match self {
            TokenCounter::Heuristic { chars_per_token } => {
                chars_to_tokens(text.chars().count(), *chars_per_token)
            }
            TokenCounter::Plugin(t) => {
                if text.is_empty() {
                    0
                } else {
                    t.count(text).max(1)
                }
            }
        }
    }

    /// Counts a sequence of strings as if they were concatenated.
    pub fn count_concat<'a, I>(&self, parts: I) -> usize
    where
        I: IntoIterator<Item = &'a str>,
    {
        match self {
            TokenCounter::Heuristic { chars_per_token } => {
                let chars = parts.into_iter().map(|p| p.chars().count()).sum();
                chars_to_tokens(chars, *chars_per_token)
            }
            TokenCounter::Plugin(_) => {
                let joined: String = parts.into_iter().collect();
                self.count(&joined)
            }
        }
    }
}

/// Convenience wrapper for [`TokenCounter::count`].
pub fn count_tokens(text: &str, counter: &TokenCounter) -> usize {
    counter.count(text)
}

fn chars_to_tokens(chars: usize, ratio: f64) -> usize {
    if chars == 0 {
        0
    } else {
        ((chars as f64) / ratio).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
    pub token_count: usize,
}

/// Boundary strength, strongest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Boundary {
    Paragraph = 0,
    Line = 1,
    Sentence = 2,
    Word = 3,
    Hard = 4,
}

#[derive(Debug, Clone, Copy)]
struct Cut {
    offset: usize,
    chars: usize,
    level: Boundary,
}

/// Measures the token size of `text[a..b]` between two cuts.
struct Spans<'a> {
    text: &'a str,
    counter: &'a TokenCounter,
}

impl Spans<'_> {
    fn size(&self, a: &Cut, b: &Cut) -> usize {
        match self.counter {
            TokenCounter::Heuristic { chars_per_token } => {
                chars_to_tokens(b.chars - a.chars, *chars_per_token)
            }
            TokenCounter::Plugin(_) => self.counter.count(&self.text[a.offset..b.offset]),
        }
    }
}

/// Splits `text` into chunks of roughly equal token size, each at most
/// `budget` tokens.
///
/// Cut points are taken from the strongest boundary class that still yields
/// at most `ceil(count / budget) + 1` chunks whose sizes differ by at most
/// `budget / 2`: blank line, then newline, then sentence end, then any
/// whitespace. Hard cuts are made only inside over-long words.
/// Among the splits with the fewest chunks at that level, the one with the
/// smallest squared deviation from the mean chunk size wins. Chunk texts
/// always concatenate back to `text`.
pub fn split_chunks(text: &str, budget: usize, counter: &TokenCounter) -> Vec<Chunk> {
    assert!(
        budget >= MIN_CHUNK_BUDGET,
        "chunk budget must be at least {MIN_CHUNK_BUDGET} tokens"
    );
    if text.is_empty() {
        return Vec::new();
    }
    let total = counter.count(text);
    if total <= budget {
        return vec![Chunk {
            index: 0,
            text: text.to_string(),
            token_count: total,
        }];
    }

    let spans = Spans { text, counter };
    let n_min = total.div_ceil(budget);
    let cuts = boundary_cuts(text, budget, &spans);

    // The strongest level that is both short and balanced wins; failing
    // that, the strongest short one. Hard cuts are never used for balance.
    let mut chosen = None;
    let mut fallback = None;
    for level in [
        Boundary::Paragraph,
        Boundary::Line,
        Boundary::Sentence,
        Boundary::Word,
        Boundary::Hard,
    ] {
        if level == Boundary::Hard && fallback.is_some() {
            break;
        }
        let eligible: Vec<Cut> = cuts
            .iter()
            .copied()
            .enumerate()
            .filter(|(i, c)| *i == 0 || *i == cuts.len() - 1 || c.level <= level)
            .map(|(_, c)| c)
            .collect();
        if let Some(path) = balanced_split(&eligible, budget, total, &spans) {
            if path.len() - 1 <= n_min + 1 {
                if spread(&path, text, &spans) <= budget / 2 {
                    chosen = Some(path);
                    break;
                }
                fallback.get_or_insert(path);
            }
        }
    }
    let offsets = chosen
        .or(fallback)
        .unwrap_or_else(|| uniform_hard_split(text, n_min, budget, counter));

    offsets
        .windows(2)
        .enumerate()
        .map(|(index, w)| {
            let piece = &text[w[0]..w[1]];
            Chunk {
                index,
                text: piece.to_string(),
                token_count: counter.count(piece),
            }
        })
        .collect()
}

/// Largest minus smallest chunk size of a split given by byte offsets.
fn spread(offsets: &[usize], text: &str, spans: &Spans<'_>) -> usize {
    let sizes = offsets.windows(2).map(|w| spans.counter.count(&text[w[0]..w[1]]));
    let (lo, hi) = sizes.fold((usize::MAX, 0), |(lo, hi), s| (lo.min(s), hi.max(s)));
    hi.saturating_sub(lo)
}

/// Every candidate cut, tagged with the strongest boundary class at that
/// position. Includes offset 0 and `text.len()`.
fn boundary_cuts(text: &str, budget: usize, spans: &Spans<'_>) -> Vec<Cut> {
    let mut cuts = vec![Cut {
        offset: 0,
        chars: 0,
        level: Boundary::Paragraph,
    }];
    let mut chars = 0usize;
    let mut prev_non_ws: Option<char> = None;
    let mut run_newlines = 0usize;
    let mut in_run = false;

    for (offset, ch) in text.char_indices() {
        if ch.is_whitespace() {
            in_run = true;
            if ch == '\n' {
                run_newlines += 1;
            }
        } else {
            if in_run && offset > 0 {
                let level = if run_newlines >= 2 {
                    Boundary::Paragraph
                } else if run_newlines == 1 {
                    Boundary::Line
                } else if matches!(prev_non_ws, Some('.' | '!' | '?' | '…')) {
                    Boundary::Sentence
                } else {
                    Boundary::Word
                };
                cuts.push(Cut {
                    offset,
                    chars,
                    level,
                });
            }
            in_run = false;
            run_newlines = 0;
            prev_non_ws = Some(ch);
        }
        chars += 1;
    }
    cuts.push(Cut {
        offset: text.len(),
        chars,
        level: Boundary::Paragraph,
    });

    // Hard cuts only inside gaps that no whitespace cut can make fit.
    let mut with_hard = Vec::with_capacity(cuts.len());
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        with_hard.push(a);
        if spans.size(&a, &b) > budget {
            for (n, (rel, _)) in text[a.offset..b.offset].char_indices().enumerate().skip(1) {
                with_hard.push(Cut {
                    offset: a.offset + rel,
                    chars: a.chars + n,
                    level: Boundary::Hard,
                });
            }
        }
    }
    with_hard.push(*cuts.last().expect("end cut"));
    with_hard
}

/// Fewest chunks, then least squared deviation from the mean size, with a
/// small per-cut penalty for weaker boundaries. Returns byte offsets
/// including both ends, or `None` when some gap cannot fit the budget.
fn balanced_split(
    cuts: &[Cut],
    budget: usize,
    total: usize,
    spans: &Spans<'_>,
) -> Option<Vec<usize>> {
    let n = cuts.len();
    // Pass 1: minimal chunk count.
    let mut fewest = vec![usize::MAX; n];
    fewest[0] = 0;
    let mut lo = 0;
    for j in 1..n {
        while lo < j && spans.size(&cuts[lo], &cuts[j]) > budget {
            lo += 1;
        }
        for i in lo..j {
            if fewest[i] != usize::MAX {
                fewest[j] = fewest[j].min(fewest[i] + 1);
            }
        }
    }
    let k = fewest[n - 1];
    if k == usize::MAX {
        return None;
    }

    // Pass 2: among k-chunk splits, the most balanced.
    let target = total as f64 / k as f64;
    let penalty_unit = (budget as f64 / 16.0).powi(2);
    let mut cost = vec![f64::INFINITY; n];
    let mut back = vec![usize::MAX; n];
    cost[0] = 0.0;
    let mut lo = 0;
    for j in 1..n {
        while lo < j && spans.size(&cuts[lo], &cuts[j]) > budget {
            lo += 1;
        }
        let cut_penalty = if j == n - 1 {
            0.0
        } else {
            cuts[j].level as u8 as f64 * penalty_unit
        };
        for i in lo..j {
            if fewest[i] == usize::MAX || fewest[i] + 1 != fewest[j] || !cost[i].is_finite() {
                continue;
            }
            // Only paths that can still finish in exactly k chunks.
            let dev = spans.size(&cuts[i], &cuts[j]) as f64 - target;
            let c = cost[i] + dev * dev + cut_penalty;
            if c < cost[j] {
                cost[j] = c;
                back[j] = i;
            }
        }
    }
    if back[n - 1] == usize::MAX {
        return None;
    }
    let mut path = vec![cuts[n - 1].offset];
    let mut j = n - 1;
    while j != 0 {
        j = back[j];
        path.push(cuts[j].offset);
    }
    path.reverse();
    Some(path)
}

/// Last resort: `n` pieces of near-equal size cut at arbitrary character
/// boundaries, each piece shrunk until it fits the budget.
fn uniform_hard_split(text: &str, n: usize, budget: usize, counter: &TokenCounter) -> Vec<usize> {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(o, _)| o)
        .chain(std::iter::once(text.len()))
        .collect();
    let total_chars = bounds.len() - 1;
    let mut offsets = vec![0];
    let mut start_ci = 0;
    let mut pieces_left = n.max(1);
    while start_ci < total_chars {
        let remaining = total_chars - start_ci;
        let mut end_ci = start_ci + remaining.div_ceil(pieces_left);
        while end_ci > start_ci + 1 && counter.count(&text[bounds[start_ci]..bounds[end_ci]]) > budget {
            end_ci -= 1;
        }
        offsets.push(bounds[end_ci]);
        start_ci = end_ci;
        pieces_left = pieces_left.saturating_sub(1).max(1);
    }
    offsets
}

/// Where [`truncate_to_tokens`] prefers to cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutAt {
    Sentence,
    Word,
}

/// Longest prefix of `text` within `budget` tokens, cut after the last
/// sentence end (or before the last whitespace) that fits. Falls back from
/// sentence to word to a hard cut.
pub fn truncate_to_tokens<'a>(
    text: &'a str,
    budget: usize,
    counter: &TokenCounter,
    at: CutAt,
) -> &'a str {
    if counter.count(text) <= budget {
        return text;
    }
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(o, _)| o)
        .chain(std::iter::once(text.len()))
        .collect();
    // Largest k whose prefix fits; prefix counts are monotone and the whole
    // text does not fit.
    let (mut lo, mut hi) = (0usize, bounds.len() - 2);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if counter.count(&text[..bounds[mid]]) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let fit = &text[..bounds[lo]];
    if at == CutAt::Sentence {
        let sentence_end = fit
            .char_indices()
            .filter(|&(i, c)| {
                matches!(c, '.' | '!' | '?' | '…')
                    && fit[i + c.len_utf8()..]
                        .chars()
                        .next()
                        .is_none_or(char::is_whitespace)
            })
            .map(|(i, c)| i + c.len_utf8())
            .next_back();
        if let Some(end) = sentence_end {
            return &fit[..end];
        }
    }
    // The next character decides whether `fit` already ends on a word.
    let next_is_space = text[fit.len()..].chars().next().is_some_and(char::is_whitespace);
    if next_is_space {
        return fit.trim_end();
    }
    match fit.rfind(char::is_whitespace) {
        Some(ws) if !fit[..ws].trim_end().is_empty() => fit[..ws].trim_end(),
        _ => fit,
    }
}
