use std::f64::consts::LN_10;

use crate::criterion::{CriterionKind, REPETITION_TOKEN};
use crate::lm::{LanguageModel, WordId};
use crate::vocab::{Lexicon, TokenTable, VocabError};

use super::DecodeError;

pub const ROOT: u32 = 0;

#[derive(Debug, Clone, Default)]
pub struct TrieNode {
    /// (token id, child node), sorted by token id.
    pub children: Vec<(usize, u32)>,
    /// Indices into [`Trie::words`] of the words spelled by the path to here.
    pub terminals: Vec<u32>,
    /// Best unigram log10 score among terminals at or below this node.
    pub smeared: f32,
}

/// Prefix tree over the token spellings of the lexicon words.
#[derive(Debug, Clone)]
pub struct Trie {
    nodes: Vec<TrieNode>,
    words: Vec<String>,
    lm_ids: Vec<WordId>,
    smearing: bool,
}

impl Trie {
    /// Build from a lexicon. For ASG spellings are canonicalized so a token
    /// equal to its predecessor becomes `<2>`. Words the LM cannot score are
    /// dropped with a warning.
    pub fn build<L: LanguageModel>(
        lexicon: &Lexicon,
        tokens: &TokenTable,
        lm: &L,
        kind: CriterionKind,
        smear: bool,
    ) -> Result<Self, DecodeError> {
        let mut trie =
            Trie { nodes: vec![TrieNode::default()], words: Vec::new(), lm_ids: Vec::new(), smearing: smear };
        let rep = tokens.id(REPETITION_TOKEN);
        for entry in lexicon.entries() {
            let Some(lm_id) = lm.word_id(&entry.word) else {
                log::warn!("dropping {:?}: not in the language model", entry.word);
                continue;
            };
            let word = trie.words.len() as u32;
            trie.words.push(entry.word.clone());
            trie.lm_ids.push(lm_id);
            for spelling in &entry.spellings {
                let mut ids = tokens.encode(&entry.word, spelling)?;
                if kind == CriterionKind::Asg {
                    ids = canonical_asg(&entry.word, &ids, rep)?;
                }
                trie.insert(&ids, word);
            }
        }
        for node in &mut trie.nodes {
            node.children.sort_unstable();
        }
        if smear {
            trie.smear(lm);
        }
        Ok(trie)
    }

    fn insert(&mut self, ids: &[usize], word: u32) {
        let mut node = ROOT as usize;
        for &tok in ids {
            node = match self.nodes[node].children.iter().find(|c| c.0 == tok) {
                Some(&(_, child)) => child as usize,
                None => {
                    let child = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.push((tok, child as u32));
                    child
                }
            };
        }
        if !self.nodes[node].terminals.contains(&word) {
            self.nodes[node].terminals.push(word);
        }
    }

    fn smear<L: LanguageModel>(&mut self, lm: &L) {
        // children always have larger indices than their parents
        for i in (0..self.nodes.len()).rev() {
            let own = self.nodes[i]
                .terminals
                .iter()
                .map(|&w| lm.unigram(self.lm_ids[w as usize]))
                .fold(f32::NEG_INFINITY, f32::max);
            let below = self.nodes[i]
                .children
                .iter()
                .map(|&(_, c)| self.nodes[c as usize].smeared)
                .fold(f32::NEG_INFINITY, f32::max);
            self.nodes[i].smeared = own.max(below);
        }
    }

    pub fn root(&self) -> &TrieNode {
        &self.nodes[ROOT as usize]
    }

    pub fn node(&self, id: u32) -> &TrieNode {
        &self.nodes[id as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, w: u32) -> &str {
        &self.words[w as usize]
    }

    pub fn lm_id(&self, w: u32) -> WordId {
        self.lm_ids[w as usize]
    }

    pub fn child(&self, node: u32, token: usize) -> Option<u32> {
        let children = &self.nodes[node as usize].children;
        children.binary_search_by_key(&token, |c| c.0).ok().map(|i| children[i].1)
    }

    /// Follow a token sequence from the root.
    pub fn walk(&self, ids: &[usize]) -> Option<u32> {
        ids.iter().try_fold(ROOT, |node, &tok| self.child(node, tok))
    }

    pub fn smearing(&self) -> bool {
        self.smearing
    }

    /// Lookahead of a node in natural log, 0 at the root or without smearing.
    pub(crate) fn lookahead(&self, node: u32) -> f64 {
        if !self.smearing || node == ROOT {
            return 0.0;
        }
        self.nodes[node as usize].smeared as f64 * LN_10
    }

    pub(crate) fn uses_token(&self, token: usize) -> bool {
        self.nodes.iter().any(|n| n.children.iter().any(|c| c.0 == token))
    }
}

fn canonical_asg(word: &str, ids: &[usize], rep: Option<usize>) -> Result<Vec<usize>, VocabError> {
    let mut out: Vec<usize> = Vec::with_capacity(ids.len());
    for &tok in ids {
        if out.last() == Some(&tok) {
            out.push(rep.ok_or_else(|| VocabError::UnknownToken {
                word: word.to_string(),
                token: REPETITION_TOKEN.to_string(),
            })?);
        } else {
            out.push(tok);
        }
    }
    Ok(out)
}
