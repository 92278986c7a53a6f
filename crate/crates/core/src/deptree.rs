//! CoNLL-U dependency trees and level indices.
//!
//! The level index of a token is `max_depth - depth(token)`, with depth
//! counted in edges from the root. The root therefore carries the largest
//! value and the deepest leaves carry 0.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// The Universal Dependencies UPOS inventory.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT", "SCONJ",
    "SYM", "VERB", "X",
];

pub fn is_upos(tag: &str) -> bool {
    UPOS_TAGS.contains(&tag)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepToken {
    /// 1-based position.
    pub index: usize,
    pub form: String,
    pub upos: String,
    /// 0 for the root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepTree {
    /// From the `# sent_id = ...` comment, when the block carries one.
    pub sentence_id: Option<String>,
    pub tokens: Vec<DepToken>,
    pub root_index: usize,
}

impl DepTree {
    /// Validates head structure: one root, in-range heads, no cycles.
    pub fn new(sentence_id: Option<String>, tokens: Vec<DepToken>) -> Result<Self> {
        let name = sentence_id.clone().unwrap_or_else(|| "<unnamed>".into());
        let fail = |message: String| Error::Tree {
            sentence_id: name.clone(),
            message,
        };
        if tokens.is_empty() {
            return Err(fail("no tokens".into()));
        }
        let n = tokens.len();
        for (i, tok) in tokens.iter().enumerate() {
            if tok.index != i + 1 {
                return Err(fail(format!("token ids not consecutive at id {}", tok.index)));
            }
            if tok.head > n {
                return Err(fail(format!("token {} has head {} beyond {} tokens", tok.index, tok.head, n)));
            }
            if tok.head == tok.index {
                return Err(fail(format!("token {} is its own head", tok.index)));
            }
        }
        let roots: Vec<usize> = tokens.iter().filter(|t| t.head == 0).map(|t| t.index).collect();
        if roots.len() != 1 {
            return Err(fail(format!("expected exactly one root, found {} ({:?})", roots.len(), roots)));
        }

        // Follow heads from every token; a walk longer than n means a cycle.
        for start in 1..=n {
            let mut path = vec![start];
            let mut cur = start;
            while tokens[cur - 1].head != 0 {
                cur = tokens[cur - 1].head;
                if let Some(pos) = path.iter().position(|&p| p == cur) {
                    let cycle: Vec<String> = path[pos..].iter().map(|i| i.to_string()).collect();
                    return Err(fail(format!("cycle through tokens {}", cycle.join(" -> "))));
                }
                path.push(cur);
            }
        }

        Ok(DepTree {
            sentence_id,
            tokens,
            root_index: roots[0],
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    /// 1-based child lists, indexed by head (slot 0 holds the root).
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.tokens.len() + 1];
        for tok in &self.tokens {
            children[tok.head].push(tok.index);
        }
        children
    }

    pub fn display_id(&self) -> &str {
        self.sentence_id.as_deref().unwrap_or("<unnamed>")
    }

    /// CoNLL-U block for the retained columns; the rest are written as `_`.
    pub fn to_conllu(&self) -> String {
        let mut out = String::new();
        if let Some(id) = &self.sentence_id {
            let _ = writeln!(out, "# sent_id = {id}");
        }
        for t in &self.tokens {
            let _ = writeln!(out, "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_", t.index, t.form, t.upos, t.head, t.deprel);
        }
        out.push('\n');
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelIndexVector {
    pub values: Vec<usize>,
    pub max_index: usize,
}

/// Parses a CoNLL-U document into one validated tree per sentence block.
pub fn parse_conllu(text: &str) -> Result<Vec<DepTree>> {
    let mut trees = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut tokens: Vec<DepToken> = Vec::new();

    let mut flush = |sent_id: &mut Option<String>, tokens: &mut Vec<DepToken>| -> Result<()> {
        if !tokens.is_empty() {
            trees.push(DepTree::new(sent_id.take(), std::mem::take(tokens))?);
        }
        *sent_id = None;
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut sent_id, &mut tokens)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Format {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') {
            continue;
        }
        if id.contains('.') {
            return Err(Error::Format {
                line: line_no,
                message: format!("empty node {id} is not supported"),
            });
        }
        let index: usize = id.parse().map_err(|_| Error::Format {
            line: line_no,
            message: format!("bad token id {id:?}"),
        })?;
        let head: usize = cols[6].parse().map_err(|_| Error::Format {
            line: line_no,
            message: format!("bad head {:?}", cols[6]),
        })?;
        if !is_upos(cols[3]) {
            return Err(Error::Format {
                line: line_no,
                message: format!("unknown UPOS tag {:?}", cols[3]),
            });
        }
        tokens.push(DepToken {
            index,
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    flush(&mut sent_id, &mut tokens)?;
    Ok(trees)
}

/// Level indices via a depth-first walk from the root.
pub fn level_indices(tree: &DepTree) -> LevelIndexVector {
    let children = tree.children();
    let mut depth = vec![0usize; tree.len()];
    let mut stack = vec![(tree.root_index, 0usize)];
    while let Some((node, d)) = stack.pop() {
        depth[node - 1] = d;
        stack.extend(children[node].iter().map(|&c| (c, d + 1)));
    }
    let max_index = depth.iter().copied().max().unwrap_or(0);
    LevelIndexVector {
        values: depth.iter().map(|d| max_index - d).collect(),
        max_index,
    }
}

/// Maps each whitespace token to the run of tree tokens (1-based indices)
/// that spells it, comparing case-insensitively.
pub fn align_tokens(sentence_id: &str, sentence_tokens: &[String], tree: &DepTree) -> Result<Vec<Vec<usize>>> {
    let fail = |message: String| Error::Alignment {
        sentence_id: sentence_id.to_string(),
        message,
    };
    let tree_forms: Vec<String> = tree.tokens.iter().map(|t| t.form.to_lowercase()).collect();
    let surface: Vec<String> = sentence_tokens.iter().map(|t| t.to_lowercase()).collect();

    if surface == tree_forms {
        return Ok((1..=tree.len()).map(|i| vec![i]).collect());
    }

    let mut mapping = Vec::with_capacity(surface.len());
    let mut next = 0;
    for (pos, word) in surface.iter().enumerate() {
        let mut built = String::new();
        let mut run = Vec::new();
        while built.len() < word.len() && next < tree_forms.len() {
            let candidate = format!("{built}{}", tree_forms[next]);
            if !word.starts_with(&candidate) {
                break;
            }
            built = candidate;
            run.push(next + 1);
            next += 1;
        }
        if run.is_empty() || built != *word {
            return Err(fail(format!(
                "token {:?} (position {pos}) does not match parser tokens starting at {:?}",
                sentence_tokens[pos],
                tree_forms.get(next - run.len()).map(String::as_str).unwrap_or("<end>")
            )));
        }
        mapping.push(run);
    }
    if next != tree_forms.len() {
        return Err(fail(format!(
            "parser tokens {:?} left over after the last word",
            &tree_forms[next..]
        )));
    }
    Ok(mapping)
}

/// Per whitespace token, the UPOS tag and level index of the first mapped
/// tree token that is not punctuation (or the first one if all are).
pub fn project_features(mapping: &[Vec<usize>], tree: &DepTree, levels: &LevelIndexVector) -> (Vec<String>, Vec<usize>) {
    mapping
        .iter()
        .map(|run| {
            let pick = run
                .iter()
                .copied()
                .find(|&i| tree.tokens[i - 1].upos != "PUNCT")
                .unwrap_or(run[0]);
            (tree.tokens[pick - 1].upos.clone(), levels.values[pick - 1])
        })
        .unzip()
}
