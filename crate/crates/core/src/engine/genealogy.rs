use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::Serialize;

use super::ParticleId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fate {
    Alive,
    Died { time: f64 },
    /// Born outside the cube: lifetime zero.
    SuppressedAtBirth,
    /// Dropped from the simulation while still alive (block construction
    /// after the population has been certified as surviving).
    Untracked { time: f64 },
}

/// One vertex of the genealogical tree.
#[derive(Debug, Clone, PartialEq)]
pub struct GenealogyNode {
    pub id: ParticleId,
    pub parent: Option<ParticleId>,
    pub birth_time: f64,
    /// Position at birth; outside the cube for suppressed nodes.
    pub position: Vec<f64>,
    pub fate: Fate,
    pub children: Vec<ParticleId>,
}

impl GenealogyNode {
    /// Realized lifetime, the materialized death mark. `None` while alive.
    pub fn lifetime(&self) -> Option<f64> {
        match self.fate {
            Fate::Died { time } => Some(time - self.birth_time),
            Fate::SuppressedAtBirth => Some(0.0),
            Fate::Alive | Fate::Untracked { .. } => None,
        }
    }
}

#[derive(Serialize)]
struct NodeLine<'a> {
    id: u64,
    parent: Option<u64>,
    t_birth: f64,
    fate: &'static str,
    t_death: Option<f64>,
    pos: &'a [f64],
}

/// Genealogical record of one simulation.
#[derive(Debug, Clone, Default)]
pub struct Genealogy {
    nodes: Vec<GenealogyNode>,
    index: HashMap<ParticleId, usize>,
}

impl Genealogy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GenealogyNode] {
        &self.nodes
    }

    pub fn node(&self, id: ParticleId) -> Option<&GenealogyNode> {
        self.index.get(&id).map(|i| &self.nodes[*i])
    }

    pub(crate) fn insert(&mut self, node: GenealogyNode) {
        if let Some(parent) = node.parent {
            if let Some(&pi) = self.index.get(&parent) {
                self.nodes[pi].children.push(node.id);
            }
        }
        self.index.insert(node.id, self.nodes.len());
        self.nodes.push(node);
    }

    pub(crate) fn set_fate(&mut self, id: ParticleId, fate: Fate) {
        if let Some(&i) = self.index.get(&id) {
            self.nodes[i].fate = fate;
        }
    }

    /// Ids whose fate is still `Alive`.
    pub fn alive_ids(&self) -> Vec<ParticleId> {
        self.nodes.iter().filter(|n| n.fate == Fate::Alive).map(|n| n.id).collect()
    }

    /// Whether `id` was born by `t` and had not died or been dropped before `t`.
    pub fn alive_at(&self, id: ParticleId, t: f64) -> bool {
        self.node(id).is_some_and(|n| {
            n.birth_time <= t
                && match n.fate {
                    Fate::Alive => true,
                    Fate::Died { time } => time > t,
                    Fate::Untracked { time } => time >= t,
                    Fate::SuppressedAtBirth => false,
                }
        })
    }

    /// True if `id` equals `ancestor` or descends from it.
    pub fn is_descendant(&self, id: ParticleId, ancestor: ParticleId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.node(c).and_then(|n| n.parent);
        }
        false
    }

    /// The first member of `set` on the ancestral line of `id` (itself included).
    pub fn ancestor_in(&self, id: ParticleId, set: &HashSet<ParticleId>) -> Option<ParticleId> {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if set.contains(&c) {
                return Some(c);
            }
            cur = self.node(c).and_then(|n| n.parent);
        }
        None
    }

    /// One JSON object per node: `{id,parent,t_birth,fate,t_death,pos}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for n in &self.nodes {
            let (fate, t_death) = match n.fate {
                Fate::Alive => ("alive", None),
                Fate::Died { time } => ("died", Some(time)),
                Fate::SuppressedAtBirth => ("suppressed", Some(n.birth_time)),
                Fate::Untracked { .. } => ("untracked", None),
            };
            let line = NodeLine {
                id: n.id.0,
                parent: n.parent.map(|p| p.0),
                t_birth: n.birth_time,
                fate,
                t_death,
                pos: &n.position,
            };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
        Ok(())
    }
}
