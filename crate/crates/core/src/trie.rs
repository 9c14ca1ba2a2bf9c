//! Prefix tree over token sequences with per-node leaf counts.
//!
//! Every inserted surface ends with an internal end-marker edge, so a
//! surface that is a prefix of another still owns its own leaf. The leaf is
//! the node reached through that edge. `leaf_count[n]` is the number of
//! leaves below `n`, which is also the number of times `n` may be passed
//! through within one response before every item beneath it has been
//! emitted.
//!
//! Nodes are numbered in depth-first preorder with children visited in
//! ascending token order, so a child always has a larger index than its
//! parent. Children are stored in CSR form.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::TokenId;

pub type NodeId = u32;

pub const ROOT: NodeId = 0;
const NONE: u32 = u32::MAX;
/// Incoming-edge label of end-marker leaves (and of the root).
const END_EDGE: u32 = u32::MAX;

pub const TREE_FORMAT: &str = "prefix-tree";
pub const TREE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TrieError {
    #[error("surface {0} is empty")]
    EmptySequence(usize),
    #[error("surfaces ({surfaces}) and item positions ({positions}) differ in length")]
    LengthMismatch { surfaces: usize, positions: usize },
    #[error("token id {0} is reserved")]
    ReservedToken(TokenId),
    #[error("node {0} does not exist")]
    InvalidCursor(NodeId),
    #[error("token {token} is not a child of node {node}")]
    TokenNotAllowed { node: NodeId, token: TokenId },
    #[error("surface is not a complete path in the tree")]
    PathNotInTree,
    #[error("visit count at node {0} would exceed its leaf count")]
    VisitOverflow(NodeId),
    #[error("malformed tree file: {0}")]
    Format(String),
    #[error("{0} items exceed the 32-bit index range")]
    TooLarge(usize),
}

/// Immutable trie. Cheap to share between concurrent decode sessions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PrefixTree {
    parent: Vec<NodeId>,
    incoming: Vec<TokenId>,
    child_offsets: Vec<u32>,
    child_tokens: Vec<TokenId>,
    child_nodes: Vec<NodeId>,
    end_child: Vec<NodeId>,
    leaf_count: Vec<u32>,
    terminal_item: Vec<u32>,
}

/// Result of [`PrefixTree::next_tokens`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NextTokens {
    /// Child tokens whose subtree still holds an unvisited leaf, ascending.
    pub tokens: Vec<TokenId>,
    /// Whether the surface ending at the cursor can still be completed.
    pub end: bool,
}

impl NextTokens {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty() && !self.end
    }

    /// The allowed set with the end marker rendered as `eoi`.
    pub fn with_end_token(&self, eoi: TokenId) -> Vec<TokenId> {
        let mut out = self.tokens.clone();
        if self.end {
            match out.binary_search(&eoi) {
                Ok(_) => {}
                Err(i) => out.insert(i, eoi),
            }
        }
        out
    }
}

/// Result of [`PrefixTree::descend`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Descent {
    pub node: NodeId,
    /// Catalog position of the surface that ends here, if any.
    pub terminal_item: Option<usize>,
    /// Whether the node has child tokens.
    pub extendable: bool,
}

/// Per-response pass counts. Owned by one decode session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VisitCounts {
    counts: HashMap<NodeId, u32>,
}

impl VisitCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, node: NodeId) -> u32 {
        self.counts.get(&node).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn clear(&mut self) {
        self.counts.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, u32)> + '_ {
        self.counts.iter().map(|(&n, &c)| (n, c))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct SurfaceRecord {
    key: u64,
    // Top bit set when the key does not hold the whole surface.
    index: u32,
    position: u32,
}

const SPILL: u32 = 1 << 31;

/// Layout of the packed sort keys: `per_key` digits of `width` bits, the
/// first token in the most significant digit, zero past the end.
#[derive(Debug, Clone, Copy)]
struct KeyLayout {
    width: u32,
    per_key: usize,
}

impl KeyLayout {
    fn digit(self, key: u64, j: usize) -> u64 {
        let shift = self.width as usize * (self.per_key - 1 - j);
        (key >> shift) & ((1u64 << self.width) - 1)
    }

    fn common_prefix(self, a: u64, b: u64) -> usize {
        let unused = 64 - self.width * self.per_key as u32;
        ((a ^ b).leading_zeros() - unused) as usize / self.width as usize
    }
}

const RADIX_BITS: u32 = 11;

/// Scratch space for tree construction. Reusing one builder, and handing
/// finished trees back through [`TreeBuilder::recycle`], lets repeated
/// builds run on already-mapped memory.
#[derive(Debug, Default)]
pub struct TreeBuilder {
    records: Vec<SurfaceRecord>,
    scratch: Vec<SurfaceRecord>,
    spare: Option<PrefixTree>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps `tree`'s storage for the next build.
    pub fn recycle(&mut self, tree: PrefixTree) {
        self.spare = Some(tree);
    }

    /// Builds the trie. Duplicate surfaces collapse into one leaf whose
    /// terminal item is the lowest of their positions.
    pub fn build(&mut self, surfaces: &[Vec<TokenId>], item_positions: &[usize]) -> Result<PrefixTree, TrieError> {
        if surfaces.len() != item_positions.len() {
            return Err(TrieError::LengthMismatch {
                surfaces: surfaces.len(),
                positions: item_positions.len(),
            });
        }
        if surfaces.len() >= SPILL as usize || item_positions.iter().any(|&p| p >= NONE as usize) {
            return Err(TrieError::TooLarge(surfaces.len()));
        }
        let mut token_total = 0;
        for (i, s) in surfaces.iter().enumerate() {
            if s.is_empty() {
                return Err(TrieError::EmptySequence(i));
            }
            if let Some(&t) = s.iter().find(|&&t| t == END_EDGE) {
                return Err(TrieError::ReservedToken(t));
            }
            token_total += s.len();
        }
        let layout = self.sort_surfaces(surfaces, item_positions);

        let mut tree = self.spare.take().unwrap_or_default();
        let cap = token_total + surfaces.len() + 1;
        for v in [
            &mut tree.parent,
            &mut tree.incoming,
            &mut tree.end_child,
            &mut tree.terminal_item,
        ] {
            v.clear();
            v.reserve(cap);
        }
        tree.parent.push(NONE);
        tree.incoming.push(END_EDGE);
        tree.end_child.push(NONE);
        tree.terminal_item.push(NONE);

        // stack[d] is the node reached after the first d tokens of the
        // previous surface.
        let mut stack: Vec<NodeId> = vec![ROOT];
        let mut prev: Option<SurfaceRecord> = None;
        for &rec in &self.records {
            let spilled = rec.index & SPILL != 0;
            let s = || surfaces[(rec.index & !SPILL) as usize].as_slice();
            let lcp = match prev {
                None => 0,
                Some(p) if p.key != rec.key => layout.common_prefix(p.key, rec.key),
                Some(_) if !spilled => continue,
                Some(p) => {
                    let ps = surfaces[(p.index & !SPILL) as usize].as_slice();
                    if ps == s() {
                        continue;
                    }
                    ps.iter().zip(s()).take_while(|(a, b)| a == b).count()
                }
            };
            stack.truncate(lcp + 1);
            let mut push = |tok: TokenId, tree: &mut PrefixTree| {
                let id = tree.parent.len() as NodeId;
                tree.parent.push(*stack.last().unwrap());
                tree.incoming.push(tok);
                tree.end_child.push(NONE);
                tree.terminal_item.push(NONE);
                stack.push(id);
            };
            if spilled {
                s()[lcp..].iter().for_each(|&t| push(t, &mut tree));
            } else {
                for j in lcp..layout.per_key {
                    match layout.digit(rec.key, j) {
                        0 => break,
                        d => push((d - 1) as TokenId, &mut tree),
                    }
                }
            }
            let last = *stack.last().unwrap();
            let leaf = tree.parent.len() as NodeId;
            tree.parent.push(last);
            tree.incoming.push(END_EDGE);
            tree.end_child.push(NONE);
            tree.terminal_item.push(rec.position);
            tree.end_child[last as usize] = leaf;
            prev = Some(rec);
        }
        tree.assemble();
        Ok(tree)
    }

    /// Orders surfaces lexicographically, ties by position. Each surface
    /// gets a key packing its leading tokens (offset by one, so a prefix
    /// sorts before its extensions); keys are LSD radix sorted and only runs
    /// of equal keys fall back to comparing whole surfaces.
    fn sort_surfaces(&mut self, surfaces: &[Vec<TokenId>], item_positions: &[usize]) -> KeyLayout {
        let max_token = surfaces.iter().flat_map(|s| s.iter().copied()).max().unwrap_or(0) as u64;
        let width = 64 - (max_token + 1).leading_zeros();
        let per_key = (64 / width) as usize;
        self.records.clear();
        self.records.extend(surfaces.iter().enumerate().map(|(i, s)| {
            let mut key = 0u64;
            for j in 0..per_key {
                let digit = s.get(j).map_or(0, |&t| t as u64 + 1);
                key = (key << width) | digit;
            }
            SurfaceRecord {
                key,
                index: i as u32 | if s.len() > per_key { SPILL } else { 0 },
                position: item_positions[i] as u32,
            }
        }));

        let used_bits = 64 - self.records.iter().fold(0, |acc, r| acc | r.key).leading_zeros();
        let buckets = 1usize << RADIX_BITS;
        let mask = (buckets - 1) as u64;
        let mut counts = vec![0usize; buckets];
        self.scratch.clear();
        self.scratch.resize(self.records.len(), SurfaceRecord::default());
        let mut shift = 0;
        while shift < used_bits {
            counts.iter_mut().for_each(|c| *c = 0);
            for r in &self.records {
                counts[((r.key >> shift) & mask) as usize] += 1;
            }
            if counts.contains(&self.records.len()) {
                shift += RADIX_BITS;
                continue;
            }
            let mut sum = 0;
            for c in counts.iter_mut() {
                let n = *c;
                *c = sum;
                sum += n;
            }
            for r in &self.records {
                let d = ((r.key >> shift) & mask) as usize;
                self.scratch[counts[d]] = *r;
                counts[d] += 1;
            }
            std::mem::swap(&mut self.records, &mut self.scratch);
            shift += RADIX_BITS;
        }

        let mut start = 0;
        while start < self.records.len() {
            let key = self.records[start].key;
            let mut end = start + 1;
            while end < self.records.len() && self.records[end].key == key {
                end += 1;
            }
            if end - start > 1 {
                self.records[start..end].sort_unstable_by(|x, y| {
                    let (a, b) = ((x.index & !SPILL) as usize, (y.index & !SPILL) as usize);
                    surfaces[a].cmp(&surfaces[b]).then(x.position.cmp(&y.position))
                });
            }
            start = end;
        }
        KeyLayout { width, per_key }
    }
}

impl PrefixTree {
    /// Builds the trie. Duplicate surfaces collapse into one leaf whose
    /// terminal item is the lowest of their positions.
    pub fn build(surfaces: &[Vec<TokenId>], item_positions: &[usize]) -> Result<Self, TrieError> {
        TreeBuilder::new().build(surfaces, item_positions)
    }

    fn from_nodes(
        parent: Vec<NodeId>,
        incoming: Vec<TokenId>,
        end_child: Vec<NodeId>,
        terminal_item: Vec<u32>,
    ) -> Self {
        let mut tree = PrefixTree {
            parent,
            incoming,
            end_child,
            terminal_item,
            ..PrefixTree::default()
        };
        tree.assemble();
        tree
    }

    /// Derives CSR children and leaf counts from preorder parent links.
    fn assemble(&mut self) {
        let n = self.parent.len();
        let (parent, incoming) = (&self.parent, &self.incoming);
        let offsets = &mut self.child_offsets;
        offsets.clear();
        offsets.resize(n + 1, 0);
        for i in 1..n {
            if incoming[i] != END_EDGE {
                offsets[parent[i] as usize + 1] += 1;
            }
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let edges = offsets[n] as usize;
        self.child_tokens.clear();
        self.child_tokens.resize(edges, 0);
        self.child_nodes.clear();
        self.child_nodes.resize(edges, 0);
        // offsets[p] serves as the fill cursor for node p and ends up at
        // the start of p + 1; the shift below restores it. Preorder creation
        // with sorted siblings keeps each run ascending.
        for i in 1..n {
            if incoming[i] != END_EDGE {
                let p = parent[i] as usize;
                let slot = offsets[p] as usize;
                self.child_tokens[slot] = incoming[i];
                self.child_nodes[slot] = i as NodeId;
                offsets[p] += 1;
            }
        }
        for i in (1..=n).rev() {
            offsets[i] = offsets[i - 1];
        }
        offsets[0] = 0;
        let leaf_count = &mut self.leaf_count;
        leaf_count.clear();
        leaf_count.resize(n, 0);
        for i in (1..n).rev() {
            if incoming[i] == END_EDGE {
                leaf_count[i] = 1;
            }
            leaf_count[parent[i] as usize] += leaf_count[i];
        }
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    /// Number of distinct surfaces, i.e. leaves.
    pub fn surface_count(&self) -> usize {
        self.leaf_count[ROOT as usize] as usize
    }

    pub fn root(&self) -> NodeId {
        ROOT
    }

    fn check(&self, node: NodeId) -> Result<usize, TrieError> {
        if (node as usize) < self.parent.len() {
            Ok(node as usize)
        } else {
            Err(TrieError::InvalidCursor(node))
        }
    }

    pub fn leaf_count(&self, node: NodeId) -> Result<u32, TrieError> {
        Ok(self.leaf_count[self.check(node)?])
    }

    pub fn is_leaf(&self, node: NodeId) -> Result<bool, TrieError> {
        let i = self.check(node)?;
        Ok(i != 0 && self.incoming[i] == END_EDGE)
    }

    /// Catalog position stored at an end-marker leaf.
    pub fn terminal_item(&self, node: NodeId) -> Result<Option<usize>, TrieError> {
        let t = self.terminal_item[self.check(node)?];
        Ok((t != NONE).then_some(t as usize))
    }

    /// `(token, child)` pairs of a node in ascending token order. The end
    /// marker is not included.
    pub fn children(&self, node: NodeId) -> Result<impl Iterator<Item = (TokenId, NodeId)> + '_, TrieError> {
        let i = self.check(node)?;
        let (lo, hi) = (self.child_offsets[i] as usize, self.child_offsets[i + 1] as usize);
        Ok(self.child_tokens[lo..hi]
            .iter()
            .copied()
            .zip(self.child_nodes[lo..hi].iter().copied()))
    }

    fn child_range(&self, i: usize) -> (usize, usize) {
        (self.child_offsets[i] as usize, self.child_offsets[i + 1] as usize)
    }

    /// The end-marker leaf below `node`, if a surface ends at `node`.
    pub fn end_leaf(&self, node: NodeId) -> Result<Option<NodeId>, TrieError> {
        let e = self.end_child[self.check(node)?];
        Ok((e != NONE).then_some(e))
    }

    /// Whether any edge of the tree is labelled `token`.
    pub fn contains_token(&self, token: TokenId) -> bool {
        self.child_tokens.contains(&token)
    }

    /// Child tokens of `cursor` whose subtrees are not yet exhausted, plus
    /// whether the end marker at `cursor` is still available.
    pub fn next_tokens(&self, cursor: NodeId, visits: &VisitCounts) -> Result<NextTokens, TrieError> {
        let i = self.check(cursor)?;
        let (lo, hi) = self.child_range(i);
        let tokens = &self.child_tokens[lo..hi];
        let nodes = &self.child_nodes[lo..hi];
        let exhausted = |node: NodeId, count: u32| count >= self.leaf_count[node as usize];

        let out = if visits.len() < tokens.len() {
            // Few visited nodes: find the exhausted children among them.
            let mut blocked: Vec<TokenId> = visits
                .iter()
                .filter(|&(n, c)| {
                    self.parent[n as usize] == cursor && self.incoming[n as usize] != END_EDGE && exhausted(n, c)
                })
                .map(|(n, _)| self.incoming[n as usize])
                .collect();
            if blocked.is_empty() {
                tokens.to_vec()
            } else {
                blocked.sort_unstable();
                tokens
                    .iter()
                    .copied()
                    .filter(|t| blocked.binary_search(t).is_err())
                    .collect()
            }
        } else {
            tokens
                .iter()
                .zip(nodes)
                .filter(|&(_, &n)| !exhausted(n, visits.get(n)))
                .map(|(&t, _)| t)
                .collect()
        };
        let end = match self.end_child[i] {
            NONE => false,
            leaf => visits.get(leaf) == 0,
        };
        Ok(NextTokens { tokens: out, end })
    }

    /// Follows the edge labelled `token` out of `cursor`.
    pub fn descend(&self, cursor: NodeId, token: TokenId) -> Result<Descent, TrieError> {
        let i = self.check(cursor)?;
        let (lo, hi) = self.child_range(i);
        let pos = self.child_tokens[lo..hi]
            .binary_search(&token)
            .map_err(|_| TrieError::TokenNotAllowed { node: cursor, token })?;
        let node = self.child_nodes[lo + pos];
        let n = node as usize;
        let terminal_item = match self.end_child[n] {
            NONE => None,
            leaf => Some(self.terminal_item[leaf as usize] as usize),
        };
        let (clo, chi) = self.child_range(n);
        Ok(Descent {
            node,
            terminal_item,
            extendable: chi > clo,
        })
    }

    /// Nodes on the root-to-leaf path of `surface`, root and leaf included.
    pub fn path(&self, surface: &[TokenId]) -> Result<Vec<NodeId>, TrieError> {
        let mut path = Vec::with_capacity(surface.len() + 2);
        let mut cur = ROOT;
        path.push(cur);
        for &t in surface {
            cur = self.descend(cur, t).map_err(|_| TrieError::PathNotInTree)?.node;
            path.push(cur);
        }
        let leaf = self.end_child[cur as usize];
        if leaf == NONE {
            return Err(TrieError::PathNotInTree);
        }
        path.push(leaf);
        Ok(path)
    }

    /// Catalog position of the item whose surface is exactly `surface`.
    pub fn lookup(&self, surface: &[TokenId]) -> Option<usize> {
        let path = self.path(surface).ok()?;
        self.terminal_item(*path.last()?).ok().flatten()
    }

    /// Adds one pass to every node on the path of `surface`. Nothing is
    /// changed if the path is missing or any count would exceed its bound.
    pub fn record_completion(&self, visits: &mut VisitCounts, surface: &[TokenId]) -> Result<(), TrieError> {
        let path = self.path(surface)?;
        if let Some(&n) = path
            .iter()
            .rev()
            .find(|&&n| visits.get(n) + 1 > self.leaf_count[n as usize])
        {
            return Err(TrieError::VisitOverflow(n));
        }
        for n in path {
            *visits.counts.entry(n).or_insert(0) += 1;
        }
        Ok(())
    }

    /// All surfaces in preorder, paired with their terminal items.
    pub fn enumerate(&self) -> Vec<(Vec<TokenId>, usize)> {
        let mut out = Vec::with_capacity(self.surface_count());
        let mut prefix = Vec::new();
        self.walk(ROOT, &mut prefix, &mut out);
        out
    }

    fn walk(&self, node: NodeId, prefix: &mut Vec<TokenId>, out: &mut Vec<(Vec<TokenId>, usize)>) {
        let i = node as usize;
        if self.end_child[i] != NONE {
            out.push((prefix.clone(), self.terminal_item[self.end_child[i] as usize] as usize));
        }
        let (lo, hi) = self.child_range(i);
        for k in lo..hi {
            prefix.push(self.child_tokens[k]);
            self.walk(self.child_nodes[k], prefix, out);
            prefix.pop();
        }
    }

    /// Writes the versioned jsonl dump: a header line, then one line per node.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = TreeHeader {
            format: TREE_FORMAT.into(),
            version: TREE_VERSION,
            nodes: self.node_count(),
            surfaces: self.surface_count(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for i in 0..self.node_count() {
            let rec = NodeRecord {
                node: i as NodeId,
                parent: (i != 0).then(|| self.parent[i]),
                token: (self.incoming[i] != END_EDGE).then(|| self.incoming[i]),
                leaf: i != 0 && self.incoming[i] == END_EDGE,
                terminal: (self.terminal_item[i] != NONE).then(|| self.terminal_item[i] as usize),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a dump produced by [`PrefixTree::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TrieError> {
        let fmt = |e: &dyn std::fmt::Display| TrieError::Format(e.to_string());
        let mut lines = r.lines();
        let header: TreeHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l.map_err(|e| fmt(&e))?).map_err(|e| fmt(&e))?,
            None => return Err(TrieError::Format("missing header".into())),
        };
        if header.format != TREE_FORMAT || header.version != TREE_VERSION {
            return Err(TrieError::Format(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let n = header.nodes;
        let mut parent = Vec::with_capacity(n);
        let mut incoming = Vec::with_capacity(n);
        let mut terminal_item = Vec::with_capacity(n);
        let mut end_child = vec![NONE; n];
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| fmt(&e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: NodeRecord = serde_json::from_str(&line).map_err(|e| fmt(&e))?;
            if rec.node as usize != i || i >= n {
                return Err(TrieError::Format(format!("node {} out of order", rec.node)));
            }
            match (i, rec.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(TrieError::Format("root has a parent".into())),
                (_, Some(p)) if (p as usize) < i => {}
                _ => return Err(TrieError::Format(format!("node {i} has a bad parent"))),
            }
            parent.push(rec.parent.unwrap_or(NONE));
            match (rec.leaf, rec.token) {
                (true, None) => {
                    let p = rec.parent.unwrap() as usize;
                    if end_child[p] != NONE {
                        return Err(TrieError::Format(format!("node {p} has two end leaves")));
                    }
                    end_child[p] = i as NodeId;
                    incoming.push(END_EDGE);
                }
                (false, Some(t)) if t != END_EDGE => incoming.push(t),
                (false, None) if i == 0 => incoming.push(END_EDGE),
                _ => return Err(TrieError::Format(format!("node {i} has an inconsistent edge"))),
            }
            match (rec.leaf, rec.terminal) {
                (true, Some(t)) => terminal_item.push(t as u32),
                (false, None) => terminal_item.push(NONE),
                _ => return Err(TrieError::Format(format!("node {i} terminal mismatch"))),
            }
        }
        if parent.len() != n {
            return Err(TrieError::Format(format!("expected {n} nodes, found {}", parent.len())));
        }
        let tree = Self::from_nodes(parent, incoming, end_child, terminal_item);
        tree.validate().map_err(TrieError::Format)?;
        if tree.surface_count() != header.surfaces {
            return Err(TrieError::Format("surface count mismatch".into()));
        }
        Ok(tree)
    }

    /// Checks structural invariants: sorted unique children, leaf counts
    /// equal to the sum over children, leaves counting one.
    pub fn validate(&self) -> Result<(), String> {
        for i in 0..self.node_count() {
            let (lo, hi) = self.child_range(i);
            let toks = &self.child_tokens[lo..hi];
            if toks.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("children of node {i} are not strictly ascending"));
            }
            let is_leaf = i != 0 && self.incoming[i] == END_EDGE;
            if is_leaf {
                if hi > lo || self.end_child[i] != NONE || self.leaf_count[i] != 1 {
                    return Err(format!("leaf {i} is malformed"));
                }
                continue;
            }
            let mut sum: u64 = self.child_nodes[lo..hi]
                .iter()
                .map(|&c| u64::from(self.leaf_count[c as usize]))
                .sum();
            if self.end_child[i] != NONE {
                sum += u64::from(self.leaf_count[self.end_child[i] as usize]);
            }
            if sum != u64::from(self.leaf_count[i]) {
                return Err(format!("leaf count mismatch at node {i}"));
            }
            if i != 0 && sum == 0 {
                return Err(format!("internal node {i} has no leaves"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeHeader {
    format: String,
    version: u32,
    nodes: usize,
    surfaces: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    node: NodeId,
    parent: Option<NodeId>,
    /// `None` on the root and on end-marker leaves.
    token: Option<TokenId>,
    leaf: bool,
    terminal: Option<usize>,
}
