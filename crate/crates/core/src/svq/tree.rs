//! Agglomerative merge tree over KMeans leaves and its prefix code.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{Result, SvqError};

/// Sufficient statistics of a cluster. Member lists are not kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub centroid: Vec<f64>,
    pub count: u64,
    /// Mean Euclidean distance of members to `centroid`.
    pub radius: f64,
}

impl ClusterStats {
    pub fn point(x: &[f64]) -> Self {
        Self { centroid: x.to_vec(), count: 1, radius: 0.0 }
    }

    /// Statistics of the union. The radius is the closed-form estimate
    /// returned by [`merge_distance`].
    pub fn merge(&self, other: &Self) -> Self {
        let (centroid, radius) = merged(self, other);
        Self { centroid, count: self.count + other.count, radius }
    }
}

fn merged(a: &ClusterStats, b: &ClusterStats) -> (Vec<f64>, f64) {
    let (na, nb) = (a.count as f64, b.count as f64);
    let n = na + nb;
    let m: Vec<f64> = a.centroid.iter().zip(&b.centroid).map(|(x, y)| (na * x + nb * y) / n).collect();
    (m, merged_radius(a, b))
}

// |a - m| = nb/n |a - b| and |b - m| = na/n |a - b|
fn merged_radius(a: &ClusterStats, b: &ClusterStats) -> f64 {
    let (na, nb) = (a.count as f64, b.count as f64);
    let n = na + nb;
    let gap = a.centroid.iter().zip(&b.centroid).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    (na * a.radius + nb * b.radius + 2.0 * na * nb / n * gap) / n
}

/// Quantization error of merging two clusters: the mean distance of their
/// members to the merged centroid, estimated from each cluster's centroid
/// and mean radius. Exact when members sit on their centroids, an upper
/// bound otherwise (triangle inequality).
pub fn merge_distance(a: &ClusterStats, b: &ClusterStats) -> f64 {
    merged_radius(a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub stats: ClusterStats,
    pub parent: Option<u32>,
    pub children: Option<[u32; 2]>,
    /// Code of this node, `depth` bits wide, right-aligned.
    pub code: u32,
    /// Code length in bits.
    pub depth: u8,
    /// Longest path down to a leaf.
    pub height: u8,
}

#[derive(Debug, Clone)]
pub struct MergeTree {
    pub dim: usize,
    pub init_bits: u8,
    pub top_bits: u8,
    pub nodes: Vec<TreeNode>,
    /// Leaf node ids (the KMeans clusters), ids `0..leaves.len()`.
    pub leaves: Vec<u32>,
    /// Root node ids ordered by code.
    pub roots: Vec<u32>,
}

#[derive(PartialEq)]
struct Candidate {
    d: f64,
    a: u32,
    b: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.total_cmp(&other.d).then(self.a.cmp(&other.a)).then(self.b.cmp(&other.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Unconstrained greedy agglomeration down to `roots_wanted` clusters,
/// always merging the alive pair with the smallest `(distance, lower id,
/// higher id)`. Returns the final cluster index of every input.
fn partition(stats: &[ClusterStats], roots_wanted: usize) -> Vec<usize> {
    let mut pool: Vec<ClusterStats> = stats.to_vec();
    let mut owner: Vec<usize> = (0..stats.len()).collect();
    let mut alive = vec![true; pool.len()];
    let mut alive_count = pool.len();
    let key = |pool: &[ClusterStats], x: usize, y: usize| Candidate { d: merge_distance(&pool[x], &pool[y]), a: x.min(y) as u32, b: x.max(y) as u32 };
    // best pair of every alive cluster
    let best_of = |pool: &[ClusterStats], alive: &[bool], x: usize| -> Option<Candidate> {
        (0..pool.len()).filter(|&y| y != x && alive[y]).map(|y| key(pool, x, y)).min()
    };
    let mut nearest: Vec<Option<Candidate>> = (0..pool.len()).map(|x| best_of(&pool, &alive, x)).collect();
    while alive_count > roots_wanted {
        let c = nearest.iter().flatten().min().expect("pairs remain while more than one cluster is alive");
        let (a, b) = (c.a as usize, c.b as usize);
        let id = pool.len();
        pool.push(pool[a].merge(&pool[b]));
        alive[a] = false;
        alive[b] = false;
        alive.push(true);
        nearest[a] = None;
        nearest[b] = None;
        nearest.push(None);
        alive_count -= 1;
        for o in owner.iter_mut() {
            if *o == a || *o == b {
                *o = id;
            }
        }
        for o in 0..id {
            if !alive[o] {
                continue;
            }
            let stale = nearest[o].as_ref().is_some_and(|n| [n.a, n.b].iter().any(|&m| m as usize == a || m as usize == b));
            if stale {
                nearest[o] = best_of(&pool, &alive, o);
            } else {
                let k = key(&pool, o, id);
                if nearest[o].as_ref().map_or(true, |n| k < *n) {
                    nearest[o] = Some(k);
                }
            }
        }
        nearest[id] = best_of(&pool, &alive, id);
    }
    let mut label: Vec<usize> = owner.clone();
    label.sort_unstable();
    label.dedup();
    owner.iter().map(|o| label.binary_search(o).unwrap()).collect()
}

/// Collapses the closest leaf pairs of any group holding more than `cap`
/// leaves. Surviving leaves keep their relative order.
fn fit_groups(leaves: Vec<ClusterStats>, group: Vec<usize>, cap: usize) -> (Vec<ClusterStats>, Vec<usize>) {
    let mut slots: Vec<Option<ClusterStats>> = leaves.into_iter().map(Some).collect();
    let groups = group.iter().max().map_or(0, |g| g + 1);
    for g in 0..groups {
        let mut members: Vec<usize> = (0..slots.len()).filter(|&i| group[i] == g).collect();
        if members.len() <= cap {
            continue;
        }
        // closest pair first, lower slots on ties; entries go stale when a
        // slot is merged into
        let mut version = vec![0u32; slots.len()];
        let mut heap = BinaryHeap::new();
        let dist = |slots: &[Option<ClusterStats>], i: usize, j: usize| merge_distance(slots[i].as_ref().unwrap(), slots[j].as_ref().unwrap());
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                heap.push(Reverse((Candidate { d: dist(&slots, i, j), a: i as u32, b: j as u32 }, 0u32, 0u32)));
            }
        }
        while members.len() > cap {
            let Reverse((c, va, vb)) = heap.pop().expect("pairs remain while a group is over capacity");
            let (i, j) = (c.a as usize, c.b as usize);
            if slots[i].is_none() || slots[j].is_none() || version[i] != va || version[j] != vb {
                continue;
            }
            let merged = slots[i].as_ref().unwrap().merge(slots[j].as_ref().unwrap());
            slots[i] = Some(merged);
            slots[j] = None;
            version[i] += 1;
            members.retain(|&m| m != j);
            for &o in &members {
                if o != i {
                    let (a, b) = (o.min(i), o.max(i));
                    heap.push(Reverse((Candidate { d: dist(&slots, a, b), a: a as u32, b: b as u32 }, version[a], version[b])));
                }
            }
        }
    }
    slots.into_iter().zip(group).filter_map(|(s, g)| s.map(|s| (s, g))).unzip()
}

impl MergeTree {
    /// Merges `leaves` greedily by [`merge_distance`] until `2^top_bits`
    /// roots remain, then assigns prefix codes.
    ///
    /// Codes must fit in `init_bits`, so each root subtree may hold at most
    /// `2^(init_bits - top_bits)` leaves at height at most
    /// `init_bits - top_bits`. The build runs in two passes:
    ///
    /// 1. Unconstrained greedy merging fixes which leaves share a root. A
    ///    group with too many leaves has its closest leaf pairs collapsed
    ///    into single leaves until it fits.
    /// 2. Greedy merging restricted to pairs within one group, admitting a
    ///    merge only if the group's Kraft sum `sum 2^height` stays within
    ///    `2^(init_bits - top_bits)`. Heights only grow, so a rejected pair
    ///    is dropped for good, and merging the two shortest subtrees of a
    ///    group is always admissible.
    pub fn build(leaves: Vec<ClusterStats>, init_bits: u8, top_bits: u8) -> Result<Self> {
        let roots_wanted = 1usize << top_bits;
        if leaves.len() < roots_wanted {
            return Err(SvqError::TooFewDistinct { distinct: leaves.len(), needed: roots_wanted });
        }
        if leaves.len() > 1usize << init_bits {
            return Err(SvqError::BadSpec(format!("{} leaves exceed 2^{init_bits}", leaves.len())));
        }
        let dim = leaves[0].centroid.len();
        let max_height = init_bits - top_bits;
        let budget: u64 = 1u64 << max_height;

        let part = partition(&leaves, roots_wanted);
        let (leaves, group) = fit_groups(leaves, part, budget as usize);
        let mut nodes: Vec<TreeNode> = leaves
            .into_iter()
            .map(|stats| TreeNode { stats, parent: None, children: None, code: 0, depth: 0, height: 0 })
            .collect();
        let leaf_ids: Vec<u32> = (0..nodes.len() as u32).collect();
        let mut group = group;
        let mut alive: Vec<bool> = vec![true; nodes.len()];
        let mut alive_count = nodes.len();
        let mut weight: Vec<u64> = vec![0; roots_wanted];
        for &g in &group {
            weight[g] += 1;
        }

        let mut heap = BinaryHeap::new();
        for a in 0..nodes.len() {
            for b in a + 1..nodes.len() {
                if group[a] == group[b] {
                    let d = merge_distance(&nodes[a].stats, &nodes[b].stats);
                    heap.push(Reverse(Candidate { d, a: a as u32, b: b as u32 }));
                }
            }
        }

        while alive_count > roots_wanted {
            let Reverse(c) = heap.pop().expect("an admissible merge always exists");
            let (a, b) = (c.a as usize, c.b as usize);
            if !alive[a] || !alive[b] {
                continue;
            }
            let g = group[a];
            let (ha, hb) = (nodes[a].height, nodes[b].height);
            let h = ha.max(hb) + 1;
            let new_weight = weight[g] - (1u64 << ha) - (1u64 << hb) + (1u64 << h);
            if h > max_height || new_weight > budget {
                continue;
            }
            let id = nodes.len() as u32;
            let stats = nodes[a].stats.merge(&nodes[b].stats);
            nodes[a].parent = Some(id);
            nodes[b].parent = Some(id);
            alive[a] = false;
            alive[b] = false;
            nodes.push(TreeNode { stats, parent: None, children: Some([c.a, c.b]), code: 0, depth: 0, height: h });
            alive.push(true);
            group.push(g);
            alive_count -= 1;
            weight[g] = new_weight;
            for o in 0..nodes.len() - 1 {
                if alive[o] && group[o] == g {
                    let d = merge_distance(&nodes[o].stats, &nodes[id as usize].stats);
                    heap.push(Reverse(Candidate { d, a: o as u32, b: id }));
                }
            }
        }

        // larger count gets the smaller code, lower node id on ties
        let order = |nodes: &[TreeNode], x: &u32, y: &u32| {
            nodes[*y as usize].stats.count.cmp(&nodes[*x as usize].stats.count).then(x.cmp(y))
        };
        let mut roots: Vec<u32> = (0..nodes.len() as u32).filter(|&i| alive[i as usize]).collect();
        roots.sort_by(|x, y| order(&nodes, x, y));
        let mut stack = Vec::new();
        for (code, &r) in roots.iter().enumerate() {
            nodes[r as usize].code = code as u32;
            nodes[r as usize].depth = top_bits;
            stack.push(r);
        }
        while let Some(id) = stack.pop() {
            let Some(mut kids) = nodes[id as usize].children else { continue };
            kids.sort_by(|x, y| order(&nodes, x, y));
            let (code, depth) = (nodes[id as usize].code, nodes[id as usize].depth);
            for (bit, &k) in kids.iter().enumerate() {
                nodes[k as usize].code = (code << 1) | bit as u32;
                nodes[k as usize].depth = depth + 1;
                stack.push(k);
            }
        }

        Ok(Self { dim, init_bits, top_bits, nodes, leaves: leaf_ids, roots })
    }

    pub fn node(&self, id: u32) -> &TreeNode {
        &self.nodes[id as usize]
    }

    /// Leaf code zero-padded to `init_bits`.
    pub fn full_code(&self, leaf: u32) -> u32 {
        let n = self.node(leaf);
        n.code << (self.init_bits - n.depth)
    }

    /// Ancestor of `leaf` (inclusive) whose depth is `depth`, or the leaf
    /// itself when it is shallower.
    pub fn ancestor_at(&self, leaf: u32, depth: u8) -> u32 {
        let mut id = leaf;
        while self.node(id).depth > depth {
            id = self.node(id).parent.expect("non-root node has a parent");
        }
        id
    }
}
