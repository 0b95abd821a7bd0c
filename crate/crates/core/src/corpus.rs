//! Corpus loading, tokenization and indexing.
//!
//! Produces two kinds of training units: [`DialogueSession`]s for the
//! encoder-decoder, and [`ContextPairDoc`]s (two adjacent turns merged into
//! one bag of words) for topic-model pre-training.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved token ids. Every vocabulary starts with these four.
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

/// Number of reserved ids at the front of every vocabulary.
pub const RESERVED: usize = 4;

const RESERVED_NAMES: [&str; RESERVED] = ["PAD", "BOS", "EOS", "UNK"];

/// Lowercased whitespace tokenization. Deterministic and language-neutral.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

/// Token/id mapping with four reserved ids (PAD, BOS, EOS, UNK).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>, // non-reserved tokens; id = index + RESERVED
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    reserved: Vec<String>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Build a vocabulary from a token stream: the most frequent tokens are
    /// kept up to `max_size - 4` (reserved slots), ties broken by first
    /// appearance. Tokens seen fewer than `min_freq` times map to UNK.
    pub fn build<'a, I>(tokens: I, max_size: usize, min_freq: usize) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new(); // token -> (count, first index)
        let mut total = 0usize;
        for (i, tok) in tokens.into_iter().enumerate() {
            let entry = counts.entry(tok).or_insert((0, i));
            entry.0 += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut entries: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= min_freq.max(1))
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let keep = max_size.saturating_sub(RESERVED);
        entries.truncate(keep);

        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::with_capacity(entries.len()),
        };
        for (tok, _, _) in entries {
            let id = (vocab.id_to_token.len() + RESERVED) as u32;
            vocab.token_to_id.insert(tok.to_string(), id);
            vocab.id_to_token.push(tok.to_string());
        }
        Ok(vocab)
    }

    /// Build from all turns of a JSONL corpus file.
    pub fn build_from_corpus_file<P: AsRef<Path>>(
        path: P,
        max_size: usize,
        min_freq: usize,
    ) -> Result<Vocabulary> {
        let lines = read_corpus_lines(path.as_ref())?;
        let mut stream: Vec<String> = Vec::new();
        for (_, turns) in &lines {
            for turn in turns {
                stream.extend(tokenize(turn));
            }
        }
        Vocabulary::build(stream.iter().map(|s| s.as_str()), max_size, min_freq)
    }

    /// Total id count, reserved ids included.
    pub fn size(&self) -> usize {
        self.id_to_token.len() + RESERVED
    }

    /// Map a token to its id; unknown tokens map to UNK.
    pub fn encode(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    /// Encode a raw text line into ids.
    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.encode(t)).collect()
    }

    /// Map an id back to its token. Reserved ids render as `<pad>` etc.
    pub fn decode(&self, id: u32) -> &str {
        match id {
            PAD => "<pad>",
            BOS => "<bos>",
            EOS => "<eos>",
            UNK => "<unk>",
            _ => self
                .id_to_token
                .get(id as usize - RESERVED)
                .map(|s| s.as_str())
                .unwrap_or("<unk>"),
        }
    }

    /// Render a decoded id sequence as text, skipping reserved ids.
    pub fn decode_text(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id >= RESERVED as u32)
            .map(|&id| self.decode(id))
            .collect();
        words.join(" ")
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = VocabFile {
            version: 1,
            reserved: RESERVED_NAMES.iter().map(|s| s.to_string()).collect(),
            tokens: self.id_to_token.clone(),
        };
        let mut out = File::create(path)?;
        serde_json::to_writer(&mut out, &file)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Vocabulary> {
        let file: VocabFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.version != 1 {
            return Err(Error::Format(format!(
                "unsupported vocabulary version {}",
                file.version
            )));
        }
        let mut token_to_id = HashMap::new();
        for (i, tok) in file.tokens.iter().enumerate() {
            token_to_id.insert(tok.clone(), (i + RESERVED) as u32);
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token: file.tokens,
        })
    }
}

/// One dialogue: context turns `c_1..c_N` plus the response, all as token ids.
/// The response ends with EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueSession {
    pub turns: Vec<Vec<u32>>,
    pub response: Vec<u32>,
}

impl DialogueSession {
    /// Number of context turns N.
    pub fn turn_count(&self) -> usize {
        self.turns.len()
    }
}

/// Options controlling session loading.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Turns are truncated to this many tokens.
    pub max_len: usize,
    /// Sessions keep at most this many context turns (the most recent ones).
    pub max_turns: usize,
    /// When set, sentences shorter than this (or longer than `max_len`)
    /// are removed instead of truncated.
    pub min_len: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_len: 50,
            max_turns: 15,
            min_len: None,
        }
    }
}

/// Bookkeeping from a corpus load.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub sessions: usize,
    /// Lines skipped because fewer than two usable turns remained.
    pub skipped: usize,
}

#[derive(Deserialize)]
struct SessionLine {
    turns: Vec<String>,
}

fn read_corpus_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SessionLine =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
        out.push((lineno, parsed.turns));
    }
    Ok(out)
}

/// Load a JSONL corpus (`{"turns": [...]}` per line, final entry = response).
///
/// Turns are tokenized, encoded and truncated to `max_len`; sessions with more
/// than `max_turns` context turns keep the last `max_turns`. With `min_len`
/// set, sentences outside `[min_len, max_len]` are dropped instead. Sessions
/// left with fewer than two turns are skipped and counted.
pub fn load_corpus<P: AsRef<Path>>(
    path: P,
    vocab: &Vocabulary,
    opts: &LoadOptions,
) -> Result<(Vec<DialogueSession>, LoadStats)> {
    let lines = read_corpus_lines(path.as_ref())?;
    let mut stats = LoadStats::default();
    let mut sessions = Vec::new();
    for (_, turns) in &lines {
        stats.lines += 1;
        match session_from_turns(turns, vocab, opts) {
            Some(session) => {
                sessions.push(session);
                stats.sessions += 1;
            }
            None => stats.skipped += 1,
        }
    }
    Ok((sessions, stats))
}

/// Convert one line's turn strings into a session, or `None` when fewer than
/// two usable turns remain.
pub fn session_from_turns(
    turns: &[String],
    vocab: &Vocabulary,
    opts: &LoadOptions,
) -> Option<DialogueSession> {
    let mut encoded: Vec<Vec<u32>> = Vec::with_capacity(turns.len());
    for turn in turns {
        let ids = vocab.encode_text(turn);
        if ids.is_empty() {
            continue;
        }
        if let Some(min_len) = opts.min_len {
            if ids.len() < min_len || ids.len() > opts.max_len {
                continue;
            }
        }
        let mut ids = ids;
        ids.truncate(opts.max_len);
        encoded.push(ids);
    }
    if encoded.len() < 2 {
        return None;
    }
    let mut response = encoded.pop().unwrap();
    response.push(EOS);
    let n = encoded.len();
    if n > opts.max_turns {
        encoded.drain(..n - opts.max_turns);
    }
    Some(DialogueSession {
        turns: encoded,
        response,
    })
}

/// One topic-model document: the merged token bag of an adjacent turn pair,
/// reserved ids filtered out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextPairDoc {
    pub tokens: Vec<u32>,
}

fn pair_doc(a: &[u32], b: &[u32]) -> Option<ContextPairDoc> {
    let tokens: Vec<u32> = a
        .iter()
        .chain(b.iter())
        .copied()
        .filter(|&id| id >= RESERVED as u32)
        .collect();
    if tokens.is_empty() {
        None
    } else {
        Some(ContextPairDoc { tokens })
    }
}

/// Split sessions into context-pair documents: `(c_1,c_2), (c_3,c_4), ...`
/// with the response always paired with its immediate context — `(c_N, Y)`
/// for odd N, and an extra `(c_N, Y)` doc (reusing `c_N`) for even N.
/// Documents that are empty after reserved-id filtering are dropped.
pub fn split_context_pairs(sessions: &[DialogueSession]) -> Vec<ContextPairDoc> {
    let mut docs = Vec::new();
    for session in sessions {
        let n = session.turn_count();
        let mut i = 0;
        while i + 1 < n {
            if let Some(doc) = pair_doc(&session.turns[i], &session.turns[i + 1]) {
                docs.push(doc);
            }
            i += 2;
        }
        // Final doc: the last turn paired with the response.
        if n >= 1 {
            if let Some(doc) = pair_doc(&session.turns[n - 1], &session.response) {
                docs.push(doc);
            }
        }
    }
    docs
}
