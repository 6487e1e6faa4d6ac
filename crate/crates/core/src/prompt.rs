//! Model inputs: ordered text/image blocks, their canonical digest, and the
//! VQA templates used to build the three scoring configurations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Image bytes plus their SHA-256, computed once.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageData {
    bytes: Arc<[u8]>,
    digest: [u8; 32],
}

impl ImageData {
    pub fn new(bytes: impl Into<Arc<[u8]>>) -> Self {
        let bytes = bytes.into();
        let digest = Sha256::digest(&bytes).into();
        ImageData { bytes, digest }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn to_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.bytes)
    }
}

impl fmt::Debug for ImageData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ImageData({} bytes, {})",
            self.bytes.len(),
            &self.digest_hex()[..12]
        )
    }
}

/// Where a sample's image lives. Serialized as a path or `base64:<payload>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageRef {
    Path(PathBuf),
    Inline(Vec<u8>),
}

impl ImageRef {
    pub const INLINE_PREFIX: &'static str = "base64:";

    /// Parses a reference; relative paths are resolved against `base_dir`.
    pub fn parse(raw: &str, base_dir: Option<&Path>) -> Result<Self> {
        if let Some(payload) = raw.strip_prefix(Self::INLINE_PREFIX) {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(payload.trim())
                .map_err(|e| Error::validation(format!("invalid base64 image payload: {e}")))?;
            return Ok(ImageRef::Inline(bytes));
        }
        if raw.trim().is_empty() {
            return Err(Error::validation("empty image reference"));
        }
        let path = PathBuf::from(raw);
        Ok(match base_dir {
            Some(dir) if path.is_relative() => ImageRef::Path(dir.join(path)),
            _ => ImageRef::Path(path),
        })
    }

    pub fn load(&self) -> Result<ImageData> {
        match self {
            ImageRef::Inline(bytes) => Ok(ImageData::new(bytes.clone())),
            ImageRef::Path(path) => std::fs::read(path)
                .map(ImageData::new)
                .map_err(|e| Error::io(path, e)),
        }
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageRef::Path(p) => write!(f, "{}", p.display()),
            ImageRef::Inline(bytes) => write!(
                f,
                "{}{}",
                Self::INLINE_PREFIX,
                base64::engine::general_purpose::STANDARD.encode(bytes)
            ),
        }
    }
}

impl Serialize for ImageRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ImageRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        ImageRef::parse(&raw, None).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Block {
    Text(String),
    Image(ImageData),
}

/// An ordered model input with optional system text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system_text: Option<String>,
    pub blocks: Vec<Block>,
}

/// Hex SHA-256 of a prompt's canonical byte form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptDigest(pub String);

impl fmt::Display for PromptDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn put_field(buf: &mut Vec<u8>, tag: u8, content: &[u8]) {
    buf.push(tag);
    buf.extend_from_slice(&(content.len() as u64).to_le_bytes());
    buf.extend_from_slice(content);
}

/// Serialized block for the shim wire protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireBlock {
    pub kind: String,
    pub content: String,
}

impl Prompt {
    pub fn new(system_text: Option<String>, blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::validation("prompt needs at least one block"));
        }
        Ok(Prompt {
            system_text,
            blocks,
        })
    }

    /// Tag byte and little-endian u64 length before every field; images
    /// contribute their content digest rather than their bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        match &self.system_text {
            Some(s) => put_field(&mut buf, b'S', s.as_bytes()),
            None => buf.push(b'N'),
        }
        for block in &self.blocks {
            match block {
                Block::Text(t) => put_field(&mut buf, b'T', t.as_bytes()),
                Block::Image(img) => put_field(&mut buf, b'I', &img.digest),
            }
        }
        buf
    }

    pub fn digest(&self) -> PromptDigest {
        PromptDigest(hex::encode(Sha256::digest(self.canonical_bytes())))
    }

    pub fn has_image(&self) -> bool {
        self.blocks.iter().any(|b| matches!(b, Block::Image(_)))
    }

    /// Wire blocks; system text, when present, becomes the leading text block.
    pub fn to_wire(&self) -> Vec<WireBlock> {
        let text = |content: &str| WireBlock {
            kind: "text".into(),
            content: content.into(),
        };
        self.system_text
            .iter()
            .map(|s| text(s))
            .chain(self.blocks.iter().map(|b| match b {
                Block::Text(t) => text(t),
                Block::Image(img) => WireBlock {
                    kind: "image".into(),
                    content: img.to_base64(),
                },
            }))
            .collect()
    }

    /// Plain-text rendering for text-only backends.
    pub fn to_plain_text(&self) -> Result<String> {
        let mut parts = Vec::with_capacity(self.blocks.len() + 1);
        if let Some(s) = &self.system_text {
            parts.push(s.as_str());
        }
        for b in &self.blocks {
            match b {
                Block::Text(t) => parts.push(t),
                Block::Image(_) => {
                    return Err(Error::Capability(
                        "prompt contains an image block but the backend is text-only".into(),
                    ))
                }
            }
        }
        Ok(parts.join("\n"))
    }
}

/// Instruction used to elicit a context.
pub const CONTEXT_PROMPT: &str =
    "Before answering this question, please give a detailed description of this image.";

/// System prompts for the ensemble baseline; index 0 is the default.
pub const SYSTEM_PROMPTS: [&str; 5] = [
    "A chat between a curious user and an artificial intelligence assistant. The assistant is able to understand the visual content that the user provides, and assist the user with a variety of tasks using natural language.",
    "You are a helpful language and vision assistant. You are able to understand the visual content that the user provides, and assist the user with a variety of tasks using natural language.",
    "You are a helpful, respectful and honest assistant. Always answer as helpfully as possible, while being safe. Your answers should not include any harmful, unethical, racist, sexist, toxic, dangerous, or illegal content. Please ensure that your responses are socially unbiased and positive in nature.",
    "Give the following image. You will be able to see the image once I provide it to you. Please answer my questions.",
    "A chat between a curious human and an artificial intelligence assistant. The assistant gives helpful, detailed, and polite answers to the human's questions.",
];

pub const ONE_SHOT_QUESTION: &str = "What is the animal in this image?";
pub const ONE_SHOT_ANSWER: &str = "There is a dog in this image.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneShotExemplar {
    /// The exemplar turn is text-only when no image is configured.
    pub image: Option<ImageRef>,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    context_prompt: String,
    system_prompts: Vec<String>,
    one_shot: OneShotExemplar,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        PromptLibrary {
            context_prompt: CONTEXT_PROMPT.to_string(),
            system_prompts: SYSTEM_PROMPTS.iter().map(|s| s.to_string()).collect(),
            one_shot: OneShotExemplar {
                image: None,
                question: ONE_SHOT_QUESTION.into(),
                answer: ONE_SHOT_ANSWER.into(),
            },
        }
    }
}

impl PromptLibrary {
    pub fn with_one_shot_image(mut self, image: ImageRef) -> Self {
        self.one_shot.image = Some(image);
        self
    }

    pub fn context_prompt(&self) -> &str {
        &self.context_prompt
    }

    pub fn system_prompts(&self) -> &[String] {
        &self.system_prompts
    }

    pub fn system_prompt(&self, index: usize) -> Result<&str> {
        self.system_prompts
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| {
                Error::validation(format!(
                    "system prompt index {index} out of range (0..{})",
                    self.system_prompts.len()
                ))
            })
    }

    pub fn one_shot(&self) -> &OneShotExemplar {
        &self.one_shot
    }
}

/// Text layout of the VQA prompts. `{question}` and `{instruction}` are
/// substituted literally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub context_prefix: String,
    pub question_format: String,
    pub generation_format: String,
    /// Reject image-conditioned configurations for samples without an image.
    /// When false, such samples are scored without an image block.
    pub require_image: bool,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            context_prefix: "Context: ".into(),
            question_format: "Question: {question}\nAnswer:".into(),
            generation_format: "Question: {question}\n{instruction}".into(),
            require_image: true,
        }
    }
}

/// Which inputs reach the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Configuration<'a> {
    /// Y(Q): question only.
    QuestionOnly,
    /// Y(I,Q): image and question.
    Direct,
    /// Y(I,C,Q): image, generated context, and question.
    WithContext(&'a str),
}

#[derive(Debug, Clone, Copy)]
pub struct VqaInput<'a> {
    pub question: &'a str,
    pub image: Option<&'a ImageData>,
}

/// Assembles blocks from the template and prompt library.
#[derive(Debug, Clone, Default)]
pub struct PromptBuilder {
    pub template: PromptTemplate,
    pub library: PromptLibrary,
    one_shot_image: Option<ImageData>,
}

impl PromptBuilder {
    pub fn new(template: PromptTemplate, library: PromptLibrary) -> Result<Self> {
        let one_shot_image = library
            .one_shot
            .image
            .as_ref()
            .map(ImageRef::load)
            .transpose()?;
        Ok(PromptBuilder {
            template,
            library,
            one_shot_image,
        })
    }

    fn image_block(&self, input: &VqaInput<'_>, blocks: &mut Vec<Block>) -> Result<()> {
        match input.image {
            Some(img) => blocks.push(Block::Image(img.clone())),
            None if self.template.require_image => {
                return Err(Error::validation(
                    "sample has no image but the configuration requires one",
                ))
            }
            None => {}
        }
        Ok(())
    }

    fn question_text(&self, question: &str) -> String {
        self.template
            .question_format
            .replace("{question}", question)
    }

    /// Builds the scoring prompt; the option string is appended by the backend
    /// as the forced completion.
    pub fn build_vqa_prompt(
        &self,
        input: &VqaInput<'_>,
        configuration: Configuration<'_>,
        system_prompt: Option<&str>,
        one_shot: bool,
    ) -> Result<Prompt> {
        let mut blocks = Vec::new();
        if one_shot {
            if let Some(img) = &self.one_shot_image {
                blocks.push(Block::Image(img.clone()));
            }
            let ex = &self.library.one_shot;
            blocks.push(Block::Text(format!(
                "{} {}",
                self.question_text(&ex.question),
                ex.answer
            )));
        }
        match configuration {
            Configuration::QuestionOnly => {}
            Configuration::Direct => self.image_block(input, &mut blocks)?,
            Configuration::WithContext(ctx) => {
                self.image_block(input, &mut blocks)?;
                blocks.push(Block::Text(format!(
                    "{}{}",
                    self.template.context_prefix, ctx
                )));
            }
        }
        blocks.push(Block::Text(self.question_text(input.question)));
        Prompt::new(system_prompt.map(str::to_string), blocks)
    }

    /// Prompt that asks the model for a description of the image.
    pub fn build_context_prompt(
        &self,
        input: &VqaInput<'_>,
        system_prompt: Option<&str>,
    ) -> Result<Prompt> {
        let mut blocks = Vec::new();
        self.image_block(input, &mut blocks)?;
        blocks.push(Block::Text(
            self.template
                .generation_format
                .replace("{question}", input.question)
                .replace("{instruction}", &self.library.context_prompt),
        ));
        Prompt::new(system_prompt.map(str::to_string), blocks)
    }
}
