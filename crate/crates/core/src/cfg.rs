//! Per-method control-flow graphs.
//!
//! Blocks are numbered in instruction order. Loops are cut by deleting every
//! edge whose target dominates its source; the latch of each cut loop is then
//! wired to the loop exits so effects of the body still reach the code after
//! the loop. The resulting DAG is walked in reverse post order.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::warn;
use thiserror::Error;

use crate::app_ir::{Instruction, MethodDef};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CfgError {
    #[error("control-flow graph still has a cycle through block {0}")]
    Cycle(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: usize,
    /// Instruction range `start..end`.
    pub start: usize,
    pub end: usize,
    pub successors: Vec<usize>,
    pub predecessors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    pub entry: usize,
    /// Immediate dominator of each block; `None` for the entry and for
    /// unreachable blocks.
    pub idom: Vec<Option<usize>>,
    pub removed_back_edges: Vec<(usize, usize)>,
    pub added_edges: Vec<(usize, usize)>,
    /// Set when some cycle was not a natural loop and had to be cut by DFS
    /// classification instead of dominance.
    pub irreducible: bool,
}

pub fn build_cfg(method: &MethodDef) -> Cfg {
    let ins = &method.instructions;
    let n = ins.len();
    let mut leaders = BTreeSet::from([0usize]);
    for &target in method.labels.values() {
        leaders.insert(target);
    }
    for (i, instr) in ins.iter().enumerate() {
        if (instr.branch_target().is_some() || instr.is_return()) && i + 1 < n {
            leaders.insert(i + 1);
        }
    }
    let starts: Vec<usize> = leaders.into_iter().filter(|&s| s < n.max(1)).collect();
    let block_of = |idx: usize| starts.partition_point(|&s| s <= idx) - 1;

    let mut blocks: Vec<BasicBlock> = starts
        .iter()
        .enumerate()
        .map(|(id, &start)| BasicBlock {
            id,
            start,
            end: starts.get(id + 1).copied().unwrap_or(n),
            successors: Vec::new(),
            predecessors: Vec::new(),
        })
        .collect();

    // Indexed because successor blocks are updated inside the loop.
    #[allow(clippy::needless_range_loop)]
    for b in 0..blocks.len() {
        let (start, end) = (blocks[b].start, blocks[b].end);
        if start == end {
            continue;
        }
        let last = &ins[end - 1];
        let fall = (end < n).then(|| block_of(end));
        let target = last
            .branch_target()
            .map(|l| block_of(method.label_index(l).expect("validated label")));
        let succs: Vec<usize> = match last {
            Instruction::Goto { .. } => target.into_iter().collect(),
            Instruction::IfGoto { .. } => fall.into_iter().chain(target).collect(),
            i if i.is_return() => Vec::new(),
            _ => fall.into_iter().collect(),
        };
        for s in succs {
            if !blocks[b].successors.contains(&s) {
                blocks[b].successors.push(s);
            }
        }
    }
    link_predecessors(&mut blocks);
    let mut cfg = Cfg {
        blocks,
        entry: 0,
        idom: Vec::new(),
        removed_back_edges: Vec::new(),
        added_edges: Vec::new(),
        irreducible: false,
    };
    cfg.idom = dominators(&cfg);
    cfg
}

fn link_predecessors(blocks: &mut [BasicBlock]) {
    for b in blocks.iter_mut() {
        b.predecessors.clear();
    }
    for b in 0..blocks.len() {
        for s in blocks[b].successors.clone() {
            blocks[s].predecessors.push(b);
        }
    }
}

fn postorder(cfg: &Cfg) -> Vec<usize> {
    let mut seen = vec![false; cfg.blocks.len()];
    let mut order = Vec::new();
    let mut stack = vec![(cfg.entry, 0usize)];
    if cfg.blocks.is_empty() {
        return order;
    }
    seen[cfg.entry] = true;
    while let Some((b, i)) = stack.pop() {
        if let Some(&s) = cfg.blocks[b].successors.get(i) {
            stack.push((b, i + 1));
            if !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            order.push(b);
        }
    }
    order
}

/// Immediate dominators by the classic iterative data-flow scheme.
pub fn dominators(cfg: &Cfg) -> Vec<Option<usize>> {
    let po = postorder(cfg);
    let mut po_num = vec![usize::MAX; cfg.blocks.len()];
    for (i, &b) in po.iter().enumerate() {
        po_num[b] = i;
    }
    let mut idom: Vec<Option<usize>> = vec![None; cfg.blocks.len()];
    if cfg.blocks.is_empty() {
        return idom;
    }
    idom[cfg.entry] = Some(cfg.entry);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while po_num[a] < po_num[b] {
                a = idom[a].expect("processed");
            }
            while po_num[b] < po_num[a] {
                b = idom[b].expect("processed");
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in po.iter().rev() {
            if b == cfg.entry {
                continue;
            }
            let mut new = None;
            for &p in &cfg.blocks[b].predecessors {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom[cfg.entry] = None;
    idom
}

impl Cfg {
    /// Does `a` dominate `b`? Every block dominates itself.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.idom[c];
        }
        false
    }

    pub fn is_reachable(&self, b: usize) -> bool {
        b == self.entry || self.idom[b].is_some()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .flat_map(|b| b.successors.iter().map(move |&s| (b.id, s)))
            .collect()
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.blocks.len()];
        let mut stack = vec![from];
        while let Some(b) = stack.pop() {
            if b == to {
                return true;
            }
            if std::mem::replace(&mut seen[b], true) {
                continue;
            }
            stack.extend(self.blocks[b].successors.iter().copied());
        }
        false
    }

    /// Blocks of the natural loop of back edge `latch → header`.
    pub fn natural_loop(&self, latch: usize, header: usize) -> BTreeSet<usize> {
        let mut body = BTreeSet::from([header]);
        let mut stack = vec![latch];
        while let Some(b) = stack.pop() {
            if body.insert(b) {
                stack.extend(self.blocks[b].predecessors.iter().copied());
            }
        }
        body
    }

    /// Returns the block on a remaining cycle, if any.
    pub fn find_cycle(&self) -> Option<usize> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.blocks.len()];
        for root in 0..self.blocks.len() {
            if state[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            state[root] = 1;
            while let Some((b, i)) = stack.pop() {
                if let Some(&s) = self.blocks[b].successors.get(i) {
                    stack.push((b, i + 1));
                    match state[s] {
                        0 => {
                            state[s] = 1;
                            stack.push((s, 0));
                        }
                        1 => return Some(s),
                        _ => {}
                    }
                } else {
                    state[b] = 2;
                }
            }
        }
        None
    }

    fn remove_edge(&mut self, u: usize, v: usize) {
        self.blocks[u].successors.retain(|&s| s != v);
        self.blocks[v].predecessors.retain(|&p| p != u);
    }

    fn add_edge(&mut self, u: usize, v: usize) {
        self.blocks[u].successors.push(v);
        self.blocks[v].predecessors.push(u);
    }

    pub fn to_dot(&self, name: &str) -> String {
        let mut out = format!("digraph \"{name}\" {{\n");
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "  b{} [label=\"b{} [{}..{})\"];",
                b.id, b.id, b.start, b.end
            );
        }
        for (u, v) in self.edges() {
            let style = if self.added_edges.contains(&(u, v)) {
                " [style=dashed]"
            } else {
                ""
            };
            let _ = writeln!(out, "  b{u} -> b{v}{style};");
        }
        for (u, v) in &self.removed_back_edges {
            let _ = writeln!(out, "  b{u} -> b{v} [style=dotted, color=gray];");
        }
        out.push_str("}\n");
        out
    }
}

/// Cuts every loop, returning an acyclic graph.
pub fn remove_back_edges(cfg: &Cfg) -> Cfg {
    let mut g = cfg.clone();
    let back: Vec<(usize, usize)> = g
        .edges()
        .into_iter()
        .filter(|&(u, v)| g.is_reachable(u) && g.dominates(v, u))
        .collect();
    let loops: Vec<(usize, usize, BTreeSet<usize>)> = back
        .iter()
        .map(|&(u, h)| (u, h, g.natural_loop(u, h)))
        .collect();
    for &(u, v) in &back {
        g.remove_edge(u, v);
        g.removed_back_edges.push((u, v));
    }
    while let Some(b) = g.find_cycle() {
        // Not a natural loop: fall back to cutting a retreating DFS edge.
        g.irreducible = true;
        let pred = *g.blocks[b]
            .predecessors
            .iter()
            .find(|&&p| g.reaches(b, p))
            .expect("cycle through b has a predecessor inside it");
        warn!("irreducible control flow: cutting edge b{pred} -> b{b}");
        g.remove_edge(pred, b);
        g.removed_back_edges.push((pred, b));
    }
    for (latch, header, body) in loops {
        let exits: Vec<usize> = cfg.blocks[header]
            .successors
            .iter()
            .copied()
            .filter(|s| !body.contains(s))
            .collect();
        for exit in exits {
            let present = g.blocks[latch].successors.contains(&exit);
            if !present && latch != exit && !g.reaches(exit, latch) {
                g.add_edge(latch, exit);
                g.added_edges.push((latch, exit));
            }
        }
    }
    g.idom = dominators(&g);
    g
}

/// Reverse post order of the reachable blocks of an acyclic graph.
pub fn reverse_post_order(cfg: &Cfg) -> Result<Vec<usize>, CfgError> {
    if let Some(b) = cfg.find_cycle() {
        return Err(CfgError::Cycle(b));
    }
    let mut po = postorder(cfg);
    po.reverse();
    Ok(po)
}
