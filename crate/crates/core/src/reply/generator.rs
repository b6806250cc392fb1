//! Text generators: an HTTP chat-completion client and a deterministic
//! template generator for tests and simulation.

use std::sync::OnceLock;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hash::Fnv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Scammer,
    Us,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorRequest {
    pub preamble: String,
    pub scam_text: String,
    pub prior_exchange: Option<Vec<Turn>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeneratorError {
    #[error("generator timed out")]
    Timeout,
    #[error("generator endpoint returned status {0}")]
    EndpointError(u16),
    #[error("malformed generator response: {0}")]
    MalformedResponse(String),
    #[error("generator transport failure: {0}")]
    Transport(String),
}

/// Produces reply text for a request. Implementations must tolerate
/// concurrent calls.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GeneratorRequest) -> Result<String, GeneratorError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GeneratorRequest) -> Result<String, GeneratorError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, request: &GeneratorRequest) -> Result<String, GeneratorError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for std::sync::Arc<G> {
    fn generate(&self, request: &GeneratorRequest) -> Result<String, GeneratorError> {
        (**self).generate(request)
    }
}

// ---------------------------------------------------------------------------
// HTTP chat completion

#[derive(Debug, Clone)]
pub struct HttpGeneratorConfig {
    pub endpoint_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env_var: Option<String>,
    pub timeout: Duration,
}

impl Default for HttpGeneratorConfig {
    fn default() -> Self {
        HttpGeneratorConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            auth_env_var: Some("OPENAI_API_KEY".into()),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// Chat-completion client. The preamble goes out as the system turn, prior
/// exchange as user/assistant turns, and the scam text as the final user turn.
pub struct HttpGenerator {
    config: HttpGeneratorConfig,
    // built lazily so construction is safe inside an async runtime
    client: OnceLock<Result<reqwest::blocking::Client, String>>,
}

impl HttpGenerator {
    pub fn new(config: HttpGeneratorConfig) -> Self {
        HttpGenerator {
            config,
            client: OnceLock::new(),
        }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, GeneratorError> {
        self.client
            .get_or_init(|| {
                reqwest::blocking::Client::builder()
                    .timeout(self.config.timeout)
                    .build()
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| GeneratorError::Transport(e.clone()))
    }

    fn body<'a>(&'a self, request: &'a GeneratorRequest) -> ChatRequest<'a> {
        let mut messages = vec![ChatMessage {
            role: "system",
            content: &request.preamble,
        }];
        for turn in request.prior_exchange.iter().flatten() {
            messages.push(ChatMessage {
                role: match turn.role {
                    Role::Scammer => "user",
                    Role::Us => "assistant",
                },
                content: &turn.text,
            });
        }
        messages.push(ChatMessage {
            role: "user",
            content: &request.scam_text,
        });
        ChatRequest {
            model: &self.config.model,
            messages,
        }
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, request: &GeneratorRequest) -> Result<String, GeneratorError> {
        let mut req = self
            .client()?
            .post(&self.config.endpoint_url)
            .json(&self.body(request));
        if let Some(token) = self
            .config
            .auth_env_var
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
        {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                GeneratorError::Timeout
            } else {
                GeneratorError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(GeneratorError::EndpointError(status.as_u16()));
        }
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                GeneratorError::Timeout
            } else {
                GeneratorError::Transport(e.to_string())
            }
        })?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| GeneratorError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GeneratorError::MalformedResponse("no choices".into()))
    }
}

// ---------------------------------------------------------------------------
// Deterministic template generator

const OPENERS: &[&str] = &[
    "Thank you for your message about {topic}.",
    "Thank you for reaching out to me regarding {topic}.",
    "I was very glad to read your note concerning {topic}.",
    "Many thanks for writing to me about {topic}.",
];

const MIDDLES: &[&str] = &[
    "I am interested in hearing more before we go any further.",
    "This sounds important and I would like to understand it properly.",
    "I have read your words twice and I want to be sure I follow everything.",
    "I would appreciate any further explanation you can give me.",
];

const CAUTIONS: &[&str] = &[
    "Please understand that I prefer not to share personal details by email.",
    "For now I would rather keep my private information to myself.",
    "I hope you will understand that I am careful with my personal details.",
];

const QUESTIONS: &[&str] = &[
    "Could you tell me more about how the process works?",
    "What would be the next step on your side?",
    "How long do you expect all of this to take?",
    "Who else is involved in handling {topic}?",
];

const CLOSINGS: &[&str] = &["Best regards,", "Kind regards,", "With warm wishes,"];

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "because", "before", "being", "below",
    "between", "could", "dear", "doing", "during", "every", "further", "great", "happy",
    "having", "hearing", "hello", "kindly", "other", "please", "reply", "regards", "should",
    "since", "still", "thank", "thanks", "their", "there", "these", "thing", "things", "those",
    "through", "today", "under", "until", "where", "which", "while", "would", "write", "yours",
];

/// Fills a fixed courteous reply from the scam text. Output depends only on
/// the seed and the scam text; the preamble and history are ignored.
#[derive(Debug, Clone, Copy)]
pub struct TemplateGenerator {
    seed: u64,
}

impl TemplateGenerator {
    pub fn new(seed: u64) -> Self {
        TemplateGenerator { seed }
    }

    fn salutation(text: &str) -> String {
        let first = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
        let lower = first.to_lowercase();
        if lower.starts_with("dear ") {
            let name: String = first[5..]
                .chars()
                .take_while(|c| *c != ',' && *c != ':')
                .filter(|c| c.is_alphabetic() || matches!(c, ' ' | '.' | '[' | ']' | '-'))
                .take(40)
                .collect();
            let name = name.trim();
            if !name.is_empty() {
                return format!("Dear {name},");
            }
        }
        "Hello,".to_string()
    }

    fn topic(text: &str) -> String {
        let mut counts: Vec<(String, usize, usize)> = Vec::new();
        for (pos, word) in text
            .split(|c: char| !c.is_alphabetic())
            .filter(|w| w.chars().count() >= 5)
            .enumerate()
        {
            let w = word.to_lowercase();
            if STOPWORDS.contains(&w.as_str()) {
                continue;
            }
            match counts.iter_mut().find(|(x, _, _)| *x == w) {
                Some(entry) => entry.1 += 1,
                None => counts.push((w, 1, pos)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        match counts.as_slice() {
            [] => "your proposal".to_string(),
            [(a, _, _)] => format!("the {a}"),
            [(a, _, _), (b, _, _), ..] => format!("the {a} and the {b}"),
        }
    }
}

impl Generator for TemplateGenerator {
    fn generate(&self, request: &GeneratorRequest) -> Result<String, GeneratorError> {
        let text = &request.scam_text;
        let seed = Fnv::new().u64(self.seed).str(text).finish();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topic = Self::topic(text);
        let pick = |list: &[&str], rng: &mut ChaCha8Rng| {
            list.choose(rng).expect("non-empty list").replace("{topic}", &topic)
        };
        let opener = pick(OPENERS, &mut rng);
        let middle = pick(MIDDLES, &mut rng);
        let caution = pick(CAUTIONS, &mut rng);
        let question = pick(QUESTIONS, &mut rng);
        let closing = pick(CLOSINGS, &mut rng);
        Ok(format!(
            "{}\n\n{opener} {middle}\n\n{caution} {question}\n\n{closing}",
            Self::salutation(text)
        ))
    }
}
