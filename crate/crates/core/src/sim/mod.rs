//! Exact event-driven simulation of binary branching Brownian motion.
//!
//! Each particle lives an `Exp(1)` time, moves by an independent
//! `N(0, lifespan)` increment and splits into two at its death. Only branch
//! events and the horizon are realized; positions at other times are filled
//! in by Brownian bridge sampling when a functional asks for them.
//!
//! The same depth-first driver feeds both the genealogy-preserving
//! [`SkeletonTree`] and the allocation-free fast paths below, and both
//! consume random numbers in the same order: a replica's maximum computed by
//! [`sample_max`] equals the maximum of the tree [`SkeletonTree::simulate`]
//! builds from an identically seeded generator.

mod tree;

pub use tree::{Ancestor, AncestorPartition, Checkpoint, CrossingMode, Node, RunSummary, SkeletonTree, TreeDump};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub(crate) const NO_PARENT: u32 = u32::MAX;

/// Simulation limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Node budget per run; exceeding it fails the run.
    pub pop_cap: u64,
    /// Check barriers on skeleton knots only. Faster, biased low.
    pub knot_only: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { pop_cap: 100_000_000, knot_only: false }
    }
}

impl SimConfig {
    pub fn with_pop_cap(mut self, cap: u64) -> Self {
        self.pop_cap = cap;
        self
    }

    pub fn crossing_mode(&self) -> CrossingMode {
        if self.knot_only {
            CrossingMode::KnotOnly
        } else {
            CrossingMode::Exact
        }
    }
}

/// A particle waiting to be expanded.
#[derive(Debug, Clone, Copy)]
pub struct Pending {
    parent: u32,
    birth: f64,
    pos: f64,
}

/// Receives each node as the driver creates it; returns the node id.
pub(crate) trait Visit {
    fn visit(&mut self, parent: u32, birth: f64, end: f64, from: f64, to: f64, leaf: bool) -> u32;
}

/// Reusable scratch space for the driver.
#[derive(Debug, Default)]
pub struct Workspace {
    stack: Vec<Pending>,
    frontier: Vec<(f64, f64)>,
}

/// Expands one BBM run on `[0, horizon]`, handing every node to `v`.
/// Returns the node count.
pub(crate) fn grow<R: Rng + ?Sized, V: Visit>(
    horizon: f64,
    cap: u64,
    rng: &mut R,
    ws: &mut Workspace,
    v: &mut V,
) -> Result<u64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("simulation horizon must be > 0, got {horizon}")));
    }
    let stack = &mut ws.stack;
    stack.clear();
    stack.push(Pending { parent: NO_PARENT, birth: 0.0, pos: 0.0 });
    let mut nodes = 0u64;
    while let Some(p) = stack.pop() {
        nodes += 1;
        if nodes > cap {
            return Err(Error::PopulationCap { nodes, cap, horizon });
        }
        let life: f64 = rng.sample(Exp1);
        let z: f64 = rng.sample(StandardNormal);
        let split = p.birth + life;
        let leaf = split >= horizon;
        let end = if leaf { horizon } else { split };
        let to = p.pos + (end - p.birth).sqrt() * z;
        let id = v.visit(p.parent, p.birth, end, p.pos, to, leaf);
        if !leaf {
            let child = Pending { parent: id, birth: end, pos: to };
            stack.push(child);
            stack.push(child);
        }
    }
    Ok(nodes)
}

/// Calls `f` on every leaf position; ids are not tracked.
struct LeafVisit<F> {
    f: F,
}

impl<F: FnMut(f64)> Visit for LeafVisit<F> {
    #[inline]
    fn visit(&mut self, _parent: u32, _birth: f64, _end: f64, _from: f64, to: f64, leaf: bool) -> u32 {
        if leaf {
            (self.f)(to);
        }
        0
    }
}

/// Maximum and population of one run at `horizon`, without storing the tree.
///
/// Same draws and visiting order as [`grow`], written without data-dependent
/// branches in the inner loop.
pub fn sample_max<R: Rng + ?Sized>(horizon: f64, cfg: &SimConfig, rng: &mut R, ws: &mut Workspace) -> Result<(f64, u64)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("simulation horizon must be > 0, got {horizon}")));
    }
    let stack = &mut ws.frontier;
    if stack.len() < 64 {
        stack.resize(64, (0.0, 0.0));
    }
    stack[0] = (0.0, 0.0);
    let mut top = 1usize;
    let mut nodes = 0u64;
    let mut leaves = 0u64;
    let mut max = f64::NEG_INFINITY;
    while top > 0 {
        top -= 1;
        let (birth, pos) = stack[top];
        nodes += 1;
        let life: f64 = rng.sample(Exp1);
        let z: f64 = rng.sample(StandardNormal);
        let split = birth + life;
        let leaf = split >= horizon;
        let end = if leaf { horizon } else { split };
        let to = pos + (end - birth).sqrt() * z;
        let cand = if leaf { to } else { f64::NEG_INFINITY };
        max = if cand > max { cand } else { max };
        leaves += leaf as u64;
        if top + 2 > stack.len() {
            let len = stack.len();
            stack.resize(2 * len, (0.0, 0.0));
        }
        stack[top] = (end, to);
        stack[top + 1] = (end, to);
        top += 2 * (!leaf as usize);
        if nodes > cfg.pop_cap {
            return Err(Error::PopulationCap { nodes, cap: cfg.pop_cap, horizon });
        }
    }
    Ok((max, leaves))
}

/// Streams every leaf position of one run at `horizon` into `f`.
pub fn for_each_leaf<R: Rng + ?Sized, F: FnMut(f64)>(
    horizon: f64,
    cfg: &SimConfig,
    rng: &mut R,
    ws: &mut Workspace,
    f: F,
) -> Result<()> {
    let mut v = LeafVisit { f };
    grow(horizon, cfg.pop_cap, rng, ws, &mut v)?;
    Ok(())
}
