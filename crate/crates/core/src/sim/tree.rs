use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{grow, SimConfig, Visit, Workspace, NO_PARENT};
use crate::analytic::Line;
use crate::bridge::{bridge_point, exact_segment_crossing_prob};
use crate::{Error, Result};

/// One particle's lifespan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub birth_time: f64,
    /// Death (branching) time, or the horizon for particles alive at the end.
    pub end_time: f64,
    pub position_at_birth: f64,
    pub position_at_end: f64,
    pub parent: Option<u32>,
}

/// Positions of every particle alive at `time`, realized by bridge sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub time: f64,
    /// `(node, position)` sorted by node.
    pub alive: Vec<(u32, f64)>,
}

impl Checkpoint {
    fn position_of(&self, node: u32) -> Option<f64> {
        self.alive
            .binary_search_by_key(&node, |&(n, _)| n)
            .ok()
            .map(|i| self.alive[i].1)
    }
}

/// How barrier crossings between skeleton knots are decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingMode {
    /// Knots are checked exactly; between knots a crossing occurs with the
    /// Brownian bridge crossing probability. Exact in distribution.
    Exact,
    /// Knots only. Misses excursions between knots.
    KnotOnly,
}

/// Full genealogy of one BBM run on `[0, horizon]`.
///
/// Nodes are stored in creation order, so every parent precedes its
/// children. Branching is binary and local: a child starts where and when
/// its parent ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTree {
    pub horizon: f64,
    pub nodes: Vec<Node>,
    pub leaves: Vec<u32>,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
}

struct TreeVisit<'a> {
    nodes: &'a mut Vec<Node>,
    leaves: &'a mut Vec<u32>,
}

impl Visit for TreeVisit<'_> {
    #[inline]
    fn visit(&mut self, parent: u32, birth: f64, end: f64, from: f64, to: f64, leaf: bool) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            birth_time: birth,
            end_time: end,
            position_at_birth: from,
            position_at_end: to,
            parent: (parent != NO_PARENT).then_some(parent),
        });
        if leaf {
            self.leaves.push(id);
        }
        id
    }
}

/// One leaf set partitioned by ancestor at `split_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncestorPartition {
    pub split_time: f64,
    pub ancestors: Vec<Ancestor>,
    /// For each entry of `SkeletonTree::leaves`, its index into `ancestors`.
    pub leaf_ancestor: Vec<u32>,
}

/// A particle alive at the split time and the extremes of its subtree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ancestor {
    pub node: u32,
    pub position: f64,
    pub descendant_max: f64,
    /// Lowest-index leaf attaining `descendant_max`.
    pub argmax_leaf: u32,
    pub leaf_count: u64,
}

/// Per-run summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub max_displacement: f64,
    pub population: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancestors: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossed: Option<bool>,
}

/// Column-oriented dump of a tree. Field order is fixed: `horizon`,
/// `birth_time`, `end_time`, `position_at_birth`, `position_at_end`,
/// `parent` (`-1` for the root), `leaves`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub horizon: f64,
    pub birth_time: Vec<f64>,
    pub end_time: Vec<f64>,
    pub position_at_birth: Vec<f64>,
    pub position_at_end: Vec<f64>,
    pub parent: Vec<i64>,
    pub leaves: Vec<u32>,
}

impl SkeletonTree {
    /// Samples one run on `[0, horizon]`.
    pub fn simulate<R: Rng + ?Sized>(horizon: f64, cfg: &SimConfig, rng: &mut R) -> Result<Self> {
        let mut ws = Workspace::default();
        Self::simulate_in(horizon, cfg, rng, &mut ws)
    }

    pub fn simulate_in<R: Rng + ?Sized>(
        horizon: f64,
        cfg: &SimConfig,
        rng: &mut R,
        ws: &mut Workspace,
    ) -> Result<Self> {
        let cap = cfg.pop_cap.min(u32::MAX as u64 - 1);
        let mut nodes = Vec::new();
        let mut leaves = Vec::new();
        grow(horizon, cap, rng, ws, &mut TreeVisit { nodes: &mut nodes, leaves: &mut leaves })?;
        Ok(SkeletonTree { horizon, nodes, leaves, checkpoints: Vec::new() })
    }

    pub fn population(&self) -> u64 {
        self.leaves.len() as u64
    }

    /// `M_t`: the largest leaf position.
    pub fn max_displacement(&self) -> f64 {
        self.leaves
            .iter()
            .map(|&l| self.nodes[l as usize].position_at_end)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index leaf attaining the maximum.
    pub fn argmax_leaf(&self) -> u32 {
        let mut best = self.leaves[0];
        for &l in &self.leaves[1..] {
            if self.nodes[l as usize].position_at_end > self.nodes[best as usize].position_at_end {
                best = l;
            }
        }
        best
    }

    pub fn children_counts(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                c[p as usize] += 1;
            }
        }
        c
    }

    /// Checks the structural invariants of a skeleton tree.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::domain(m));
        let Some(root) = self.nodes.first() else {
            return bad("empty tree".into());
        };
        if root.parent.is_some() || root.birth_time != 0.0 || root.position_at_birth != 0.0 {
            return bad("root must start at time 0 from the origin".into());
        }
        let children = self.children_counts();
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.end_time >= n.birth_time) {
                return bad(format!("node {i} ends before it is born"));
            }
            if let Some(p) = n.parent {
                let pn = &self.nodes[p as usize];
                if (p as usize) >= i {
                    return bad(format!("node {i} precedes its parent"));
                }
                if pn.end_time != n.birth_time || pn.position_at_end != n.position_at_birth {
                    return bad(format!("node {i} does not start where its parent ends"));
                }
            } else if i != 0 {
                return bad(format!("node {i} has no parent"));
            }
            let leaf = n.end_time == self.horizon;
            match (leaf, children[i]) {
                (true, 0) | (false, 2) => {}
                (l, c) => return bad(format!("node {i}: leaf = {l} with {c} children")),
            }
        }
        let expected: Vec<u32> = (0..self.nodes.len() as u32).filter(|&i| children[i as usize] == 0).collect();
        if expected != self.leaves {
            return bad("leaf index list does not match childless nodes".into());
        }
        Ok(())
    }

    /// Nodes alive at `time`: `birth <= time < end`, or the leaves at the horizon.
    pub fn alive_at(&self, time: f64) -> Vec<u32> {
        if time >= self.horizon {
            return self.leaves.clone();
        }
        (0..self.nodes.len() as u32)
            .filter(|&i| {
                let n = &self.nodes[i as usize];
                n.birth_time <= time && time < n.end_time
            })
            .collect()
    }

    /// Realizes (once) the positions of all particles alive at `time` and
    /// returns the checkpoint. Later calls reuse the stored values.
    pub fn realize_checkpoint<R: Rng + ?Sized>(&mut self, time: f64, rng: &mut R) -> Result<&Checkpoint> {
        if !(time >= 0.0 && time <= self.horizon) {
            return Err(Error::domain(format!("checkpoint time {time} outside [0, {}]", self.horizon)));
        }
        if let Some(i) = self.checkpoints.iter().position(|c| c.time == time) {
            return Ok(&self.checkpoints[i]);
        }
        let alive = self
            .alive_at(time)
            .into_iter()
            .map(|i| {
                let n = &self.nodes[i as usize];
                let pos = if time >= n.end_time {
                    n.position_at_end
                } else if time == n.birth_time {
                    n.position_at_birth
                } else {
                    let ((t0, x0), (t1, x1)) = self.bracket(i, time);
                    bridge_point(t0, x0, t1, x1, time, rng)
                };
                (i, pos)
            })
            .collect();
        self.checkpoints.push(Checkpoint { time, alive });
        self.checkpoints.sort_by(|a, b| a.time.total_cmp(&b.time));
        let i = self.checkpoints.iter().position(|c| c.time == time).expect("just inserted");
        Ok(&self.checkpoints[i])
    }

    /// Nearest realized knots of `node` on either side of `time`.
    fn bracket(&self, node: u32, time: f64) -> ((f64, f64), (f64, f64)) {
        let n = &self.nodes[node as usize];
        let mut left = (n.birth_time, n.position_at_birth);
        let mut right = (n.end_time, n.position_at_end);
        for c in &self.checkpoints {
            if c.time > left.0 && c.time < time {
                if let Some(p) = c.position_of(node) {
                    left = (c.time, p);
                }
            } else if c.time > time && c.time < right.0 {
                if let Some(p) = c.position_of(node) {
                    right = (c.time, p);
                }
            }
        }
        (left, right)
    }

    /// Realized knots `(time, position)` of `node` on `[birth, min(end, upto)]`.
    fn knots(&self, node: u32, upto: f64) -> Vec<(f64, f64)> {
        let n = &self.nodes[node as usize];
        let mut k = vec![(n.birth_time, n.position_at_birth)];
        for c in &self.checkpoints {
            if c.time > n.birth_time && c.time < n.end_time && c.time <= upto {
                if let Some(p) = c.position_of(node) {
                    k.push((c.time, p));
                }
            }
        }
        if n.end_time <= upto {
            k.push((n.end_time, n.position_at_end));
        }
        k
    }

    /// For every node, whether its ancestral path rose above `line` at some
    /// time in `[0, min(end, upto)]`. Realizes a checkpoint at `upto` first,
    /// so the flags are consistent with later partitions at that time.
    pub fn crossing_flags<R: Rng + ?Sized>(
        &mut self,
        line: &Line,
        upto: f64,
        mode: CrossingMode,
        rng: &mut R,
    ) -> Result<Vec<bool>> {
        if !(upto >= 0.0 && upto <= self.horizon) {
            return Err(Error::domain(format!("crossing time {upto} outside [0, {}]", self.horizon)));
        }
        self.realize_checkpoint(upto, rng)?;
        let mut flags = vec![false; self.nodes.len()];
        for i in 0..self.nodes.len() {
            let n = self.nodes[i];
            let inherited = n.parent.is_some_and(|p| flags[p as usize]);
            if inherited || n.birth_time > upto {
                flags[i] = inherited;
                continue;
            }
            let knots = self.knots(i as u32, upto);
            let mut crossed = false;
            for (j, &(s, x)) in knots.iter().enumerate() {
                let d = line.at(s) - x;
                if d < 0.0 {
                    crossed = true;
                    break;
                }
                if mode == CrossingMode::Exact && j + 1 < knots.len() {
                    let (s1, x1) = knots[j + 1];
                    let p = exact_segment_crossing_prob(d, line.at(s1) - x1, s1 - s);
                    if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
                        crossed = true;
                        break;
                    }
                }
            }
            flags[i] = crossed;
        }
        Ok(flags)
    }

    /// Whether some ancestral path crosses `line` before `upto`.
    pub fn crossed_barrier<R: Rng + ?Sized>(&mut self, line: &Line, upto: f64, rng: &mut R) -> Result<bool> {
        self.crossed_barrier_with(line, upto, CrossingMode::Exact, rng)
    }

    pub fn crossed_barrier_with<R: Rng + ?Sized>(
        &mut self,
        line: &Line,
        upto: f64,
        mode: CrossingMode,
        rng: &mut R,
    ) -> Result<bool> {
        Ok(self.crossing_flags(line, upto, mode, rng)?.into_iter().any(|f| f))
    }

    /// Groups leaves by their ancestor alive at `split_time` and reports each
    /// ancestor's position there and its subtree maximum at the horizon.
    pub fn ancestor_partition<R: Rng + ?Sized>(&mut self, split_time: f64, rng: &mut R) -> Result<AncestorPartition> {
        if !(split_time > 0.0 && split_time < self.horizon) {
            return Err(Error::domain(format!(
                "split time must lie in (0, {}), got {split_time}",
                self.horizon
            )));
        }
        let cp = self.realize_checkpoint(split_time, rng)?.clone();
        let mut of_node = vec![u32::MAX; self.nodes.len()];
        let mut ancestors: Vec<Ancestor> = Vec::with_capacity(cp.alive.len());
        for &(node, position) in &cp.alive {
            of_node[node as usize] = ancestors.len() as u32;
            ancestors.push(Ancestor {
                node,
                position,
                descendant_max: f64::NEG_INFINITY,
                argmax_leaf: u32::MAX,
                leaf_count: 0,
            });
        }
        for i in 0..self.nodes.len() {
            if of_node[i] == u32::MAX {
                if let Some(p) = self.nodes[i].parent {
                    if self.nodes[i].birth_time > split_time {
                        of_node[i] = of_node[p as usize];
                    }
                }
            }
        }
        let mut leaf_ancestor = Vec::with_capacity(self.leaves.len());
        for &l in &self.leaves {
            let a = of_node[l as usize];
            debug_assert!(a != u32::MAX);
            let anc = &mut ancestors[a as usize];
            let x = self.nodes[l as usize].position_at_end;
            anc.leaf_count += 1;
            if x > anc.descendant_max {
                anc.descendant_max = x;
                anc.argmax_leaf = l;
            }
            leaf_ancestor.push(a);
        }
        Ok(AncestorPartition { split_time, ancestors, leaf_ancestor })
    }

    /// Summary with optional ancestor map and barrier flag.
    pub fn summarize<R: Rng + ?Sized>(
        &mut self,
        split_time: Option<f64>,
        barrier: Option<(&Line, f64)>,
        rng: &mut R,
    ) -> Result<RunSummary> {
        let ancestors = match split_time {
            Some(s) => {
                let part = self.ancestor_partition(s, rng)?;
                Some(part.leaf_ancestor.iter().map(|&a| part.ancestors[a as usize].node).collect())
            }
            None => None,
        };
        let crossed = match barrier {
            Some((line, upto)) => Some(self.crossed_barrier(line, upto, rng)?),
            None => None,
        };
        Ok(RunSummary { max_displacement: self.max_displacement(), population: self.population(), ancestors, crossed })
    }

    pub fn dump(&self) -> TreeDump {
        TreeDump {
            horizon: self.horizon,
            birth_time: self.nodes.iter().map(|n| n.birth_time).collect(),
            end_time: self.nodes.iter().map(|n| n.end_time).collect(),
            position_at_birth: self.nodes.iter().map(|n| n.position_at_birth).collect(),
            position_at_end: self.nodes.iter().map(|n| n.position_at_end).collect(),
            parent: self.nodes.iter().map(|n| n.parent.map_or(-1, i64::from)).collect(),
            leaves: self.leaves.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{replica_rng, Stream};

    fn tree(t: f64, i: u64) -> SkeletonTree {
        SkeletonTree::simulate(t, &SimConfig::default(), &mut replica_rng(21, Stream::Tree, i)).unwrap()
    }

    #[test]
    fn sampled_trees_are_valid() {
        for i in 0..200 {
            let tr = tree(3.0, i);
            tr.validate().unwrap();
            assert_eq!(tr.nodes.len() as u64, 2 * tr.population() - 1);
        }
    }

    #[test]
    fn single_leaf_tree() {
        // find a run with no branching before the horizon
        let tr = (0..1000).map(|i| tree(0.05, i)).find(|t| t.population() == 1).unwrap();
        assert_eq!(tr.max_displacement(), tr.nodes[0].position_at_end);
        assert_eq!(tr.argmax_leaf(), 0);
    }

    #[test]
    fn negative_intercept_always_crosses() {
        let mut rng = replica_rng(2, Stream::Infill, 0);
        for i in 0..20 {
            let mut tr = tree(2.0, i);
            let line = Line::new(1.0, -0.01).unwrap();
            assert!(tr.crossed_barrier(&line, 2.0, &mut rng).unwrap());
        }
    }

    #[test]
    fn far_barrier_is_never_crossed() {
        let mut rng = replica_rng(2, Stream::Infill, 0);
        for i in 0..20 {
            let mut tr = tree(2.0, i);
            let line = Line::new(0.0, 1e3).unwrap();
            assert!(!tr.crossed_barrier(&line, 2.0, &mut rng).unwrap());
        }
    }

    #[test]
    fn partition_extremes() {
        let mut rng = replica_rng(4, Stream::Infill, 0);
        for i in 0..50 {
            let mut tr = tree(3.0, i);
            let first_branch = tr.nodes[0].end_time;
            if first_branch < 3.0 {
                let part = tr.ancestor_partition(first_branch * 0.5, &mut rng).unwrap();
                assert_eq!(part.ancestors.len(), 1);
                assert_eq!(part.ancestors[0].node, 0);
                assert_eq!(part.ancestors[0].descendant_max, tr.max_displacement());
            }
            let last_branch = tr
                .nodes
                .iter()
                .filter(|n| n.end_time < 3.0)
                .map(|n| n.end_time)
                .fold(0.0, f64::max);
            let part = tr.ancestor_partition(0.5 * (last_branch + 3.0), &mut rng).unwrap();
            assert_eq!(part.ancestors.len() as u64, tr.population());
            for (k, &l) in tr.leaves.iter().enumerate() {
                assert_eq!(part.ancestors[part.leaf_ancestor[k] as usize].node, l);
            }
            let mid = tr.ancestor_partition(1.5, &mut rng).unwrap();
            assert_eq!(mid.ancestors.iter().map(|a| a.leaf_count).sum::<u64>(), tr.population());
            let best = mid.ancestors.iter().map(|a| a.descendant_max).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best, tr.max_displacement());
        }
    }

    #[test]
    fn checkpoints_are_reused() {
        let mut tr = tree(4.0, 7);
        let mut rng = replica_rng(1, Stream::Infill, 0);
        let a = tr.realize_checkpoint(2.0, &mut rng).unwrap().clone();
        let b = tr.realize_checkpoint(2.0, &mut rng).unwrap().clone();
        assert_eq!(a, b);
        assert_eq!(a.alive.len(), tr.alive_at(2.0).len());
        assert!(tr.realize_checkpoint(5.0, &mut rng).is_err());
    }

    #[test]
    fn knot_only_never_exceeds_exact() {
        let line = Line::new(1.0, 0.8).unwrap();
        let (mut exact, mut knots) = (0, 0);
        for i in 0..400 {
            let mut rng = replica_rng(8, Stream::Infill, i);
            let mut tr = tree(1.5, i);
            let k = tr.clone().crossed_barrier_with(&line, 1.5, CrossingMode::KnotOnly, &mut rng).unwrap();
            let e = tr.crossed_barrier_with(&line, 1.5, CrossingMode::Exact, &mut rng).unwrap();
            assert!(!k || e);
            exact += e as u32;
            knots += k as u32;
        }
        assert!(exact > knots);
    }

    #[test]
    fn dump_round_trips_through_json() {
        let tr = tree(2.0, 3);
        let d = tr.dump();
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.starts_with("{\"horizon\":2.0,\"birth_time\":["));
        let back: TreeDump = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert_eq!(d.parent[0], -1);
    }
}
