//! Turning raw source into ranked, de-canonicalized suggestions with diffs.

use editvq::corpus::{canonicalize, decanonicalize, texts, tokens_from_texts, CanonMap, Vocab};
use editvq::models::{frame_source, DecodingConfig, Generated, Model};
use serde::{Deserialize, Serialize};
use similar::TextDiff;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuggestRequest {
    pub source: String,
    /// Latent indices to decode; all of them when absent.
    pub latents: Option<Vec<usize>>,
    /// Sampling temperature; greedy decoding when absent.
    pub temperature: Option<f64>,
    pub max_len: Option<usize>,
    /// Draws for models without discrete latents.
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Codebook index, absent for models without discrete latents.
    pub latent: Option<usize>,
    pub tokens: Vec<String>,
    pub source: String,
    /// Whether the de-canonicalized suggestion parses as MiniLang.
    pub parses: bool,
    pub diff: String,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub input_canonical: Vec<String>,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SuggestError {
    /// Source that does not lex or parse, or bad request values.
    BadRequest(String),
    /// Source longer than the model accepts.
    TooLong(String),
    Internal(String),
}

impl std::fmt::Display for SuggestError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SuggestError::BadRequest(m) | SuggestError::TooLong(m) | SuggestError::Internal(m) => {
                f.write_str(m)
            }
        }
    }
}

pub const DEFAULT_MAX_LEN: usize = 256;

/// Pretty text of canonical tokens under the input's names. Falls back to
/// the space-joined tokens when they do not parse.
pub fn render(tokens: &[String], map: &CanonMap) -> (String, bool) {
    let Ok(toks) = tokens_from_texts(tokens) else {
        return (tokens.join(" "), false);
    };
    let named = texts(&decanonicalize(&toks, map)).join(" ");
    match minilang::parse(&named) {
        Ok(p) => (minilang::pretty_print(&p), true),
        Err(_) => (named, false),
    }
}

pub fn unified_diff(old: &str, new: &str) -> String {
    TextDiff::from_lines(old, new)
        .unified_diff()
        .context_radius(3)
        .header("input", "suggestion")
        .to_string()
}

pub fn suggest(
    model: &Model<f32>,
    vocab: &Vocab,
    req: &SuggestRequest,
) -> Result<SuggestResponse, SuggestError> {
    let lexed = minilang::lex(&req.source).map_err(|e| SuggestError::BadRequest(format!("source does not lex: {e}")))?;
    let parsed = minilang::parse(&req.source)
        .map_err(|e| SuggestError::BadRequest(format!("source does not parse: {e}")))?;
    let original = minilang::pretty_print(&parsed);
    let (canon, map) = canonicalize(&lexed);
    let canon = texts(&canon);
    let ids = vocab.encode(&canon);
    let limit = model.config.max_len;
    if frame_source(&ids).len() > limit {
        return Err(SuggestError::TooLong(format!(
            "source has {} tokens; this model accepts at most {}",
            ids.len(),
            limit - 2
        )));
    }
    if let Some(t) = req.temperature {
        if !(t > 0.0 && t.is_finite()) {
            return Err(SuggestError::BadRequest(format!("temperature {t} must be positive")));
        }
    }
    let max_len = req.max_len.unwrap_or(DEFAULT_MAX_LEN);
    if max_len == 0 {
        return Err(SuggestError::BadRequest("max_len must be positive".into()));
    }
    let seed = req.seed.unwrap_or(0);
    let decoding = |i: usize| match req.temperature {
        Some(t) => DecodingConfig::sample(t, max_len, seed.wrapping_add(i as u64)),
        None => DecodingConfig::greedy(max_len),
    };
    let internal = |e: editvq::Error| SuggestError::Internal(e.to_string());
    let outputs: Vec<(Option<usize>, Generated)> = match model.codebook_size() {
        Some(k) => {
            let latents = req.latents.clone().unwrap_or_else(|| (0..k).collect());
            if latents.is_empty() {
                return Err(SuggestError::BadRequest("latents must not be empty".into()));
            }
            if let Some(bad) = latents.iter().find(|&&l| l >= k) {
                return Err(SuggestError::BadRequest(format!(
                    "latent {bad} out of range; the codebook has {k} entries"
                )));
            }
            latents
                .iter()
                .map(|&l| Ok((Some(l), model.generate(&ids, l, &decoding(l)).map_err(internal)?)))
                .collect::<Result<_, SuggestError>>()?
        }
        None => {
            if req.latents.is_some() {
                return Err(SuggestError::BadRequest(format!(
                    "{} has no discrete latents",
                    model.kind()
                )));
            }
            let n = req.samples.unwrap_or(1);
            if n == 0 {
                return Err(SuggestError::BadRequest("samples must be positive".into()));
            }
            match req.temperature {
                Some(t) => model
                    .suggestions(&ids, n, t, max_len, seed)
                    .map_err(internal)?
                    .into_iter()
                    .map(|g| (None, g))
                    .collect(),
                None => vec![(None, model.decode(&ids, None, &decoding(0)).map_err(internal)?)],
            }
        }
    };
    let suggestions = outputs
        .into_iter()
        .map(|(latent, g)| {
            let tokens = vocab.decode(&g.ids);
            let (source, parses) = render(&tokens, &map);
            let diff = unified_diff(&original, &source);
            Suggestion {
                latent,
                tokens,
                source,
                parses,
                diff,
                log_prob: g.log_prob,
            }
        })
        .collect();
    Ok(SuggestResponse {
        input_canonical: canon,
        suggestions,
    })
}

/// Stable order by decreasing log-probability.
pub fn rank(suggestions: &mut [Suggestion]) {
    suggestions.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
}
