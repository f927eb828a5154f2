//! Raw corpus loading and filtering.
//!
//! Submissions and comments arrive as line-delimited JSON records. Loading
//! never aborts on a bad record: each rejected line is reported with its line
//! number and the rest of the file is kept.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub author_id: String,
    pub created_at: i64,
    pub title: String,
    pub body: String,
    pub word_count: usize,
    /// Final verdict flair assigned by the community bot, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flair: Option<String>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        author_id: impl Into<String>,
        created_at: i64,
        title: impl Into<String>,
        body: impl Into<String>,
    ) -> Self {
        let body = body.into();
        Document {
            id: id.into(),
            author_id: author_id.into(),
            created_at,
            title: title.into(),
            word_count: body.split_whitespace().count(),
            body,
            flair: None,
        }
    }

    /// Title and body joined the way the embedder and the propensity scorer
    /// read them.
    pub fn full_text(&self) -> String {
        format!("{}\n{}", self.title, self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub document_id: String,
    pub author_id: String,
    pub body: String,
    pub score: i64,
}

#[derive(Debug, Clone, Default)]
pub struct BotList {
    user_ids: HashSet<String>,
}

impl BotList {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BotList {
            user_ids: ids.into_iter().map(Into::into).collect(),
        }
    }

    /// One user id per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        BotList::new(text.lines().filter_map(|line| {
            let line = line.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then(|| line.to_string())
        }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(BotList::parse(&text))
    }

    pub fn contains(&self, author_id: &str) -> bool {
        self.user_ids.contains(author_id)
    }

    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }
}

/// Record field names. Defaults follow the Pushshift dump layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMapping {
    pub submission_id: String,
    pub submission_author: String,
    pub submission_created: String,
    pub submission_title: String,
    pub submission_body: String,
    /// Optional; absent or null means no flair.
    pub submission_flair: String,
    pub comment_id: String,
    pub comment_document: String,
    pub comment_author: String,
    pub comment_body: String,
    pub comment_score: String,
    /// Bodies equal to one of these are treated as missing.
    pub removed_sentinels: Vec<String>,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            submission_id: "id".into(),
            submission_author: "author".into(),
            submission_created: "created_utc".into(),
            submission_title: "title".into(),
            submission_body: "selftext".into(),
            submission_flair: "link_flair_text".into(),
            comment_id: "id".into(),
            comment_document: "link_id".into(),
            comment_author: "author".into(),
            comment_body: "body".into(),
            comment_score: "score".into(),
            removed_sentinels: vec!["[deleted]".into(), "[removed]".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub submissions_read: usize,
    pub comments_read: usize,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub comments: Vec<Comment>,
    pub report: LoadReport,
}

pub fn load_corpus(submissions_path: &Path, comments_path: &Path, fields: &FieldMapping) -> Result<LoadedCorpus> {
    let submissions = fs::read_to_string(submissions_path).map_err(|e| Error::io(submissions_path, e))?;
    let comments = fs::read_to_string(comments_path).map_err(|e| Error::io(comments_path, e))?;
    Ok(parse_corpus(
        &submissions,
        &submissions_path.display().to_string(),
        &comments,
        &comments_path.display().to_string(),
        fields,
    ))
}

/// Parses already-read file contents; `*_name` only labels diagnostics.
pub fn parse_corpus(
    submissions: &str,
    submissions_name: &str,
    comments: &str,
    comments_name: &str,
    fields: &FieldMapping,
) -> LoadedCorpus {
    let mut report = LoadReport::default();

    let parsed_docs = parse_lines(submissions, |v| parse_document(v, fields));
    report.submissions_read = parsed_docs.len();
    let mut seen = HashSet::new();
    let mut documents = Vec::new();
    for (line, parsed) in parsed_docs {
        match parsed {
            Ok(doc) => {
                if seen.insert(doc.id.clone()) {
                    documents.push(doc);
                } else {
                    report.diagnostics.push(diag(
                        submissions_name,
                        line,
                        format!("duplicate id `{}` ignored", doc.id),
                    ));
                }
            }
            Err(msg) => report.diagnostics.push(diag(submissions_name, line, msg)),
        }
    }

    let parsed_comments = parse_lines(comments, |v| parse_comment(v, fields));
    report.comments_read = parsed_comments.len();
    let mut seen = HashSet::new();
    let mut out_comments = Vec::new();
    for (line, parsed) in parsed_comments {
        match parsed {
            Ok(c) => {
                if seen.insert(c.id.clone()) {
                    out_comments.push(c);
                } else {
                    report
                        .diagnostics
                        .push(diag(comments_name, line, format!("duplicate id `{}` ignored", c.id)));
                }
            }
            Err(msg) => report.diagnostics.push(diag(comments_name, line, msg)),
        }
    }

    LoadedCorpus {
        documents,
        comments: out_comments,
        report,
    }
}

fn diag(file: &str, line: usize, message: String) -> Diagnostic {
    Diagnostic {
        file: file.to_string(),
        line,
        message,
    }
}

/// Returns `(1-based line number, parse result)` for every non-blank line,
/// in file order.
fn parse_lines<T, F>(text: &str, parse: F) -> Vec<(usize, Result<T, String>)>
where
    T: Send,
    F: Fn(&Value) -> Result<T, String> + Sync,
{
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    lines
        .par_iter()
        .map(|&(n, line)| {
            let parsed = serde_json::from_str::<Value>(line)
                .map_err(|e| format!("malformed record: {e}"))
                .and_then(|v| parse(&v));
            (n, parsed)
        })
        .collect()
}

fn string_field(v: &Value, name: &str) -> Result<String, String> {
    match v.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(Value::Null) | None => Err(format!("missing required field `{name}`")),
        Some(_) => Err(format!("field `{name}` is not a string")),
    }
}

fn int_field(v: &Value, name: &str) -> Result<i64, String> {
    match v.get(name) {
        Some(Value::Number(n)) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
            .ok_or_else(|| format!("field `{name}` is not an integer")),
        Some(Value::String(s)) => s
            .trim()
            .parse()
            .map_err(|_| format!("field `{name}` is not an integer")),
        Some(Value::Null) | None => Err(format!("missing required field `{name}`")),
        Some(_) => Err(format!("field `{name}` is not an integer")),
    }
}

fn body_field(v: &Value, name: &str, sentinels: &[String]) -> Result<String, String> {
    let body = string_field(v, name)?;
    if sentinels.iter().any(|s| body.trim() == s) {
        return Err(format!("field `{name}` was deleted or removed"));
    }
    Ok(body)
}

fn parse_document(v: &Value, f: &FieldMapping) -> Result<Document, String> {
    let title = string_field(v, &f.submission_title)?;
    if title.trim().is_empty() {
        return Err(format!("field `{}` is empty", f.submission_title));
    }
    let mut doc = Document::new(
        string_field(v, &f.submission_id)?,
        string_field(v, &f.submission_author)?,
        int_field(v, &f.submission_created)?,
        title,
        body_field(v, &f.submission_body, &f.removed_sentinels)?,
    );
    doc.flair = string_field(v, &f.submission_flair).ok();
    Ok(doc)
}

fn parse_comment(v: &Value, f: &FieldMapping) -> Result<Comment, String> {
    let link = string_field(v, &f.comment_document)?;
    // Pushshift prefixes submission ids with their kind.
    let document_id = link.strip_prefix("t3_").unwrap_or(&link).to_string();
    Ok(Comment {
        id: string_field(v, &f.comment_id)?,
        document_id,
        author_id: string_field(v, &f.comment_author)?,
        body: body_field(v, &f.comment_body, &f.removed_sentinels)?,
        score: int_field(v, &f.comment_score)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    Bot,
    TitlePrefix,
    TooLong,
    TooShort,
    Orphan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthBounds {
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for LengthBounds {
    fn default() -> Self {
        LengthBounds {
            min_words: 100,
            max_words: 3000,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub documents_removed: BTreeMap<RemovalReason, usize>,
    pub comments_removed: BTreeMap<RemovalReason, usize>,
}

#[derive(Debug, Clone, Default)]
pub struct FilteredCorpus {
    pub documents: Vec<Document>,
    pub comments: Vec<Comment>,
    pub report: FilterReport,
}

/// Titles must open with one of the judgment-request prefixes.
pub fn has_request_prefix(title: &str) -> bool {
    let t = title.trim_start().to_ascii_lowercase();
    t.starts_with("aita") || t.starts_with("wibta")
}

/// First failing check for a document, in the order bot, title, length.
pub fn document_removal(doc: &Document, bots: &BotList, bounds: LengthBounds) -> Option<RemovalReason> {
    if bots.contains(&doc.author_id) {
        Some(RemovalReason::Bot)
    } else if !has_request_prefix(&doc.title) {
        Some(RemovalReason::TitlePrefix)
    } else if doc.word_count > bounds.max_words {
        Some(RemovalReason::TooLong)
    } else if doc.word_count < bounds.min_words {
        Some(RemovalReason::TooShort)
    } else {
        None
    }
}

pub fn filter_corpus(docs: &[Document], comments: &[Comment], bots: &BotList, bounds: LengthBounds) -> FilteredCorpus {
    let mut report = FilterReport::default();
    let mut documents = Vec::with_capacity(docs.len());
    for doc in docs {
        match document_removal(doc, bots, bounds) {
            Some(reason) => *report.documents_removed.entry(reason).or_default() += 1,
            None => documents.push(doc.clone()),
        }
    }
    let kept: HashSet<&str> = documents.iter().map(|d| d.id.as_str()).collect();
    let mut out_comments = Vec::with_capacity(comments.len());
    for c in comments {
        let reason = if bots.contains(&c.author_id) {
            Some(RemovalReason::Bot)
        } else if !kept.contains(c.document_id.as_str()) {
            Some(RemovalReason::Orphan)
        } else {
            None
        };
        match reason {
            Some(r) => *report.comments_removed.entry(r).or_default() += 1,
            None => out_comments.push(c.clone()),
        }
    }
    FilteredCorpus {
        documents,
        comments: out_comments,
        report,
    }
}
