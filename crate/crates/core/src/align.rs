//! Unit-cost Levenshtein DP, deterministic backtrace and forward replay into
//! an executable [`EditScript`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{EditOp, EditScript};
use crate::seq::{AlphabetKind, TokenSequence};

/// Pairs whose table would exceed this many cells are rejected.
pub const MAX_DP_CELLS: usize = 25_000_000;

/// Order in which equal-cost predecessors are preferred during backtrace.
pub const TIE_BREAK_PRIORITY: [Predecessor; 3] = [Predecessor::Diagonal, Predecessor::Up, Predecessor::Left];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predecessor {
    /// Match or substitute, `(i-1, j-1)`.
    Diagonal,
    /// Delete a source token, `(i-1, j)`.
    Up,
    /// Insert a target token, `(i, j-1)`.
    Left,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("alphabet mismatch: source is {src}, target is {tgt}")]
    AlphabetMismatch { src: AlphabetKind, tgt: AlphabetKind },
    #[error("alignment table of {cells} cells exceeds the limit of {MAX_DP_CELLS}")]
    TooLarge { cells: usize },
    #[error("alignment replay desynchronized: {0}")]
    InconsistentAlignment(String),
}

/// Full `(m+1) x (n+1)` cost table, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpTable {
    pub m: usize,
    pub n: usize,
    cost: Vec<u32>,
}

impl DpTable {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.cost[i * (self.n + 1) + j]
    }

    pub fn distance(&self) -> usize {
        self.get(self.m, self.n) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AlignmentStep {
    Match { src: usize, tgt: usize },
    Substitute { src: usize, tgt: usize },
    Delete { src: usize },
    Insert { tgt: usize },
}

impl AlignmentStep {
    pub fn is_edit(&self) -> bool {
        !matches!(self, AlignmentStep::Match { .. })
    }
}

fn check_pair(src: &TokenSequence, tgt: &TokenSequence) -> Result<(), AlignError> {
    if src.kind != tgt.kind {
        return Err(AlignError::AlphabetMismatch { src: src.kind, tgt: tgt.kind });
    }
    let cells = (src.len() + 1).saturating_mul(tgt.len() + 1);
    if src.len().saturating_mul(tgt.len()) > MAX_DP_CELLS {
        return Err(AlignError::TooLarge { cells });
    }
    Ok(())
}

pub fn dp_table(src: &TokenSequence, tgt: &TokenSequence) -> Result<DpTable, AlignError> {
    check_pair(src, tgt)?;
    Ok(dp_table_slices(&src.tokens, &tgt.tokens))
}

fn dp_table_slices<T: PartialEq>(a: &[T], b: &[T]) -> DpTable {
    let (m, n) = (a.len(), b.len());
    let w = n + 1;
    let mut cost = vec![0u32; (m + 1) * w];
    for (j, c) in cost.iter_mut().take(w).enumerate() {
        *c = j as u32;
    }
    for i in 1..=m {
        cost[i * w] = i as u32;
        for j in 1..=n {
            let sub = cost[(i - 1) * w + j - 1] + u32::from(a[i - 1] != b[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = sub.min(del).min(ins);
        }
    }
    DpTable { m, n, cost }
}

/// Distance only, two rows of storage. For metric callers that need no script.
pub fn levenshtein_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Walks from `(m, n)` back to `(0, 0)` and returns the path in forward order.
pub fn backtrace(table: &DpTable, src: &TokenSequence, tgt: &TokenSequence) -> Vec<AlignmentStep> {
    backtrace_slices(table, &src.tokens, &tgt.tokens)
}

fn backtrace_slices<T: PartialEq>(table: &DpTable, a: &[T], b: &[T]) -> Vec<AlignmentStep> {
    let (mut i, mut j) = (table.m, table.n);
    let mut steps = Vec::with_capacity(i.max(j));
    while i > 0 || j > 0 {
        let here = table.get(i, j);
        let chosen = TIE_BREAK_PRIORITY.iter().copied().find(|p| match p {
            Predecessor::Diagonal => {
                i > 0 && j > 0 && table.get(i - 1, j - 1) + u32::from(a[i - 1] != b[j - 1]) == here
            }
            Predecessor::Up => i > 0 && table.get(i - 1, j) + 1 == here,
            Predecessor::Left => j > 0 && table.get(i, j - 1) + 1 == here,
        });
        match chosen.expect("every interior cell has a minimal predecessor") {
            Predecessor::Diagonal => {
                i -= 1;
                j -= 1;
                steps.push(if a[i] == b[j] {
                    AlignmentStep::Match { src: i, tgt: j }
                } else {
                    AlignmentStep::Substitute { src: i, tgt: j }
                });
            }
            Predecessor::Up => {
                i -= 1;
                steps.push(AlignmentStep::Delete { src: i });
            }
            Predecessor::Left => {
                j -= 1;
                steps.push(AlignmentStep::Insert { tgt: j });
            }
        }
    }
    steps.reverse();
    steps
}

/// Replays the alignment on a working copy of `src` with a cursor into the
/// current sequence, so every emitted position refers to the evolving state.
pub fn alignment_to_script(
    steps: &[AlignmentStep],
    src: &TokenSequence,
    tgt: &TokenSequence,
) -> Result<EditScript, AlignError> {
    let desync = |msg: String| AlignError::InconsistentAlignment(msg);
    let mut current = src.tokens.clone();
    let mut cursor = 0usize;
    let mut ops = Vec::new();
    let (mut next_src, mut next_tgt) = (0usize, 0usize);
    for step in steps {
        match *step {
            AlignmentStep::Match { src: i, tgt: j } | AlignmentStep::Substitute { src: i, tgt: j } => {
                if i != next_src || j != next_tgt {
                    return Err(desync(format!("{step:?} out of order")));
                }
                let (s, t) = (&src.tokens[i], &tgt.tokens[j]);
                if current.get(cursor) != Some(s) {
                    return Err(desync(format!("cursor {cursor} does not hold source token {i}")));
                }
                if s != t {
                    ops.push(EditOp::replace(cursor, s.clone(), t.clone()));
                    current[cursor] = t.clone();
                }
                cursor += 1;
                next_src += 1;
                next_tgt += 1;
            }
            AlignmentStep::Delete { src: i } => {
                if i != next_src || current.get(cursor) != Some(&src.tokens[i]) {
                    return Err(desync(format!("{step:?} does not line up with cursor {cursor}")));
                }
                ops.push(EditOp::delete(cursor, current.remove(cursor)));
                next_src += 1;
            }
            AlignmentStep::Insert { tgt: j } => {
                if j != next_tgt {
                    return Err(desync(format!("{step:?} out of order")));
                }
                let t = tgt.tokens[j].clone();
                current.insert(cursor, t.clone());
                ops.push(EditOp::insert(cursor, t));
                cursor += 1;
                next_tgt += 1;
            }
        }
    }
    if next_src != src.len() || next_tgt != tgt.len() {
        return Err(desync("alignment does not cover both sequences".to_string()));
    }
    if current != tgt.tokens {
        return Err(desync("replay did not reach the target".to_string()));
    }
    Ok(EditScript::new(ops))
}

/// Minimum-cost executable script from `src` to `tgt`.
pub fn shortest_edit_script(src: &TokenSequence, tgt: &TokenSequence) -> Result<EditScript, AlignError> {
    let table = dp_table(src, tgt)?;
    let steps = backtrace(&table, src, tgt);
    alignment_to_script(&steps, src, tgt)
}

/// Forward alignment path between two sequences.
pub fn align(src: &TokenSequence, tgt: &TokenSequence) -> Result<Vec<AlignmentStep>, AlignError> {
    let table = dp_table(src, tgt)?;
    Ok(backtrace(&table, src, tgt))
}
