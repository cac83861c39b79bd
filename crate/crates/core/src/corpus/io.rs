//! Line-delimited JSON readers and writers for items, interactions and tags.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{sort_chronologically, Corpus, Interaction, Item};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub items: usize,
    pub interactions: usize,
    pub skipped_item_lines: usize,
    pub skipped_interaction_lines: usize,
    pub dropped_unknown_item: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Parses one record per non-blank line. Lines that fail to parse are
/// counted and skipped.
fn parse_lines<T: DeserializeOwned>(path: &Path, mut accept: impl FnMut(T) -> Result<bool>) -> Result<usize> {
    let mut skipped = 0;
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ok = match serde_json::from_str::<T>(&line) {
            Ok(record) => accept(record)?,
            Err(_) => false,
        };
        if !ok {
            log::warn!("{}:{}: skipping malformed record", path.display(), lineno + 1);
            skipped += 1;
        }
    }
    Ok(skipped)
}

fn valid_item(item: &Item) -> bool {
    !item.item_id.trim().is_empty() && item.price.is_none_or(|p| p.is_finite() && p >= 0.0)
}

/// Reads the items and interactions files. Malformed lines are skipped
/// and counted, interactions on unknown items are dropped and counted,
/// and a duplicate item id is fatal.
pub fn load_corpus(items_path: &Path, interactions_path: &Path) -> Result<(Corpus, LoadStats)> {
    let mut corpus = Corpus::default();
    let mut stats = LoadStats::default();

    stats.skipped_item_lines = parse_lines(items_path, |item: Item| {
        if !valid_item(&item) {
            return Ok(false);
        }
        if corpus.items.contains_key(&item.item_id) {
            return Err(Error::DuplicateItem(item.item_id));
        }
        corpus.items.insert(item.item_id.clone(), item);
        Ok(true)
    })?;

    stats.skipped_interaction_lines = parse_lines(interactions_path, |x: Interaction| {
        if x.user_id.is_empty() || !(1..=5).contains(&x.rating) {
            return Ok(false);
        }
        if !corpus.items.contains_key(&x.item_id) {
            stats.dropped_unknown_item += 1;
            return Ok(true);
        }
        corpus.users.entry(x.user_id.clone()).or_default().push(x);
        Ok(true)
    })?;

    for seq in corpus.users.values_mut() {
        sort_chronologically(seq);
    }
    stats.items = corpus.items.len();
    stats.interactions = corpus.n_interactions();
    if stats.dropped_unknown_item > 0 {
        log::warn!("dropped {} interactions referencing unknown items", stats.dropped_unknown_item);
    }
    Ok((corpus, stats))
}

#[derive(Deserialize)]
struct TagRecord {
    item_id: String,
    tags: Vec<String>,
}

/// Reads a tags sidecar: one `{"item_id": .., "tags": [..]}` per line.
pub fn load_tags(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut tags = BTreeMap::new();
    let skipped = parse_lines(path, |r: TagRecord| {
        tags.insert(r.item_id, r.tags);
        Ok(true)
    })?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed tag lines", path.display());
    }
    Ok(tags)
}

/// Replaces item categories with sidecar tags. Returns how many items
/// were tagged.
pub fn apply_tags(corpus: &mut Corpus, tags: &BTreeMap<String, Vec<String>>) -> usize {
    let mut n = 0;
    for (id, t) in tags {
        if let Some(item) = corpus.items.get_mut(id) {
            item.categories = t.clone();
            n += 1;
        }
    }
    n
}

/// Vocabulary words occurring in the title, in vocabulary order.
pub fn keyword_tags(title: &str, vocabulary: &[&str]) -> Vec<String> {
    let words: Vec<String> = title
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    vocabulary
        .iter()
        .filter(|v| words.iter().any(|w| w == &v.to_lowercase()))
        .map(|v| v.to_string())
        .collect()
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::format(path.display().to_string(), e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Strict reader: any malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{}:{}", path.display(), lineno + 1), e))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus(corpus: &Corpus, items_path: &Path, interactions_path: &Path) -> Result<()> {
    write_jsonl(items_path, corpus.items.values())?;
    write_jsonl(interactions_path, corpus.users.values().flatten())
}
