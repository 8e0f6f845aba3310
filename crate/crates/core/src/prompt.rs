//! Few-shot prompt construction and similarity-based example selection.
//!
//! A prompt is the token stream `x_1 y_1 SEP x_2 y_2 SEP ... x_N y_N SEP x`
//! joined with a single space by default.

use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "PairRepr", into = "PairObject")]
pub struct ExamplePair {
    pub input_text: String,
    pub output_text: String,
}

#[derive(Serialize, Deserialize)]
struct PairObject {
    #[serde(alias = "input_text", alias = "x")]
    input: String,
    #[serde(alias = "output_text", alias = "y")]
    output: String,
}

/// Pairs are accepted either as `["input", "output"]` or as an object.
#[derive(Deserialize)]
#[serde(untagged)]
enum PairRepr {
    Tuple(String, String),
    Object(PairObject),
}

impl From<PairRepr> for ExamplePair {
    fn from(r: PairRepr) -> Self {
        match r {
            PairRepr::Tuple(i, o) => ExamplePair::new(i, o),
            PairRepr::Object(p) => ExamplePair::new(p.input, p.output),
        }
    }
}

impl From<ExamplePair> for PairObject {
    fn from(p: ExamplePair) -> Self {
        PairObject {
            input: p.input_text,
            output: p.output_text,
        }
    }
}

impl ExamplePair {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            input_text: input.into(),
            output_text: output.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub separator: String,
    pub pair_joiner: String,
    pub trailing_separator_before_query: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            separator: "[SEP]".into(),
            pair_joiner: " ".into(),
            trailing_separator_before_query: true,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.separator.is_empty() {
            return Err(LabError::param("separator must not be empty"));
        }
        Ok(())
    }
}

pub fn build_prompt(pairs: &[ExamplePair], query: &str, cfg: &PromptConfig) -> Result<String> {
    cfg.validate()?;
    if query.is_empty() {
        return Err(LabError::EmptyInput("query"));
    }
    if let Some(i) = pairs.iter().position(|p| p.input_text.is_empty()) {
        return Err(LabError::param(format!("example {i} has empty input text")));
    }
    let mut parts: Vec<&str> = Vec::with_capacity(pairs.len() * 3 + 1);
    for (i, p) in pairs.iter().enumerate() {
        parts.push(&p.input_text);
        parts.push(&p.output_text);
        if i + 1 < pairs.len() || cfg.trailing_separator_before_query {
            parts.push(&cfg.separator);
        }
    }
    parts.push(query);
    Ok(parts.join(&cfg.pair_joiner))
}

/// Indices of pairs whose text contains the separator, with `pairs.len()`
/// standing for the query. Such prompts are still built but can no longer be
/// split unambiguously.
pub fn separator_collisions(pairs: &[ExamplePair], query: &str, cfg: &PromptConfig) -> Vec<usize> {
    let sep = cfg.separator.as_str();
    let mut hits: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.input_text.contains(sep) || p.output_text.contains(sep))
        .map(|(i, _)| i)
        .collect();
    if query.contains(sep) {
        hits.push(pairs.len());
    }
    hits
}

/// Inverse of [`build_prompt`] for prompts whose input texts contain neither
/// the separator nor the joiner, and whose outputs do not contain the
/// separator. Without a trailing separator the query and the last output must
/// also be free of the joiner. Returns `None` when the string is not in that
/// form.
pub fn split_prompt(prompt: &str, cfg: &PromptConfig) -> Option<(Vec<ExamplePair>, String)> {
    let j = cfg.pair_joiner.as_str();
    let delim = format!("{j}{}{j}", cfg.separator);
    let mut segments: Vec<&str> = prompt.split(delim.as_str()).collect();
    let last = segments.pop()?;
    let query = if cfg.trailing_separator_before_query || !last.contains(j) {
        last.to_string()
    } else {
        // Last segment is "x_N y_N query": the query follows the second joiner.
        let (x, rest) = last.split_once(j)?;
        let (y, q) = rest.rsplit_once(j)?;
        segments.push(&last[..x.len() + j.len() + y.len()]);
        q.to_string()
    };
    let pairs = segments
        .into_iter()
        .map(|s| s.split_once(j).map(|(x, y)| ExamplePair::new(x, y)))
        .collect::<Option<Vec<_>>>()?;
    Some((pairs, query))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LabError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(LabError::UndefinedSimilarity);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lower-cased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub const MIN_EMBED_DIM: usize = 8;

/// Hashed bag of tokens, L2-normalized. Token `t` counts towards bucket
/// `fnv1a64(t) mod dim`.
pub fn embed_text(text: &str, dim: usize) -> Result<Vec<f64>> {
    if dim < MIN_EMBED_DIM {
        return Err(LabError::param(format!(
            "embedding dimension must be at least {MIN_EMBED_DIM}, got {dim}"
        )));
    }
    let mut v = vec![0.0; dim];
    for tok in tokenize(text) {
        v[(fnv1a64(tok.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(LabError::EmptyInput("text has no tokens to embed"));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// The `k` pairs whose inputs are most similar to `query`, ordered by
/// ascending similarity so the closest example ends up next to the query.
/// Equal similarities keep their original relative order, and among equals
/// the lower index wins a place in the top `k`.
pub fn similarity_select(
    pairs: &[ExamplePair],
    query: &str,
    k: usize,
    dim: usize,
) -> Result<Vec<ExamplePair>> {
    if k == 0 || k > pairs.len() {
        return Err(LabError::param(format!(
            "k must be in [1, {}], got {k}",
            pairs.len()
        )));
    }
    let q = embed_text(query, dim)?;
    let mut scored = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((cosine_similarity(&embed_text(&p.input_text, dim)?, &q)?, i)))
        .collect::<Result<Vec<(f64, usize)>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, i)| pairs[i].clone()).collect())
}
