//! Adaptive octree over the unit box and its interaction lists.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::{image_offsets, PeriodicSetup};
use crate::kernel::Point;

pub const MAX_DEPTH: u32 = 12;

/// A box plus the lattice offset of the periodic copy it refers to.
pub type Entry = (usize, [i64; 3]);

#[derive(Clone, Debug, Default)]
pub struct TreeBox {
    pub level: u32,
    pub anchor: [i64; 3],
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Range into the sorted sources.
    pub src: Range<usize>,
    /// Range into the sorted targets.
    pub trg: Range<usize>,
}

impl TreeBox {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn n_src(&self) -> usize {
        self.src.len()
    }

    pub fn n_trg(&self) -> usize {
        self.trg.len()
    }

    pub fn size(&self) -> f64 {
        (0.5f64).powi(self.level as i32)
    }

    pub fn center(&self) -> Point {
        let h = self.size();
        [
            (self.anchor[0] as f64 + 0.5) * h,
            (self.anchor[1] as f64 + 0.5) * h,
            (self.anchor[2] as f64 + 0.5) * h,
        ]
    }
}

/// Interaction lists of one box.
#[derive(Clone, Debug, Default)]
pub struct Lists {
    /// Adjacent boxes carried down from the parent (same level, or coarser leaves).
    pub near: Vec<Entry>,
    /// Same level, well separated: multipole to local.
    pub v: Vec<Entry>,
    /// Coarser leaves not adjacent to this box: sources to local.
    pub x: Vec<Entry>,
    /// Leaves only: adjacent leaves, direct.
    pub u: Vec<Entry>,
    /// Leaves only: finer boxes not adjacent: multipole to targets.
    pub w: Vec<Entry>,
}

/// Octree with sources and targets sorted by box.
#[derive(Clone, Debug)]
pub struct FmmTree {
    pub boxes: Vec<TreeBox>,
    /// Box ids per level.
    pub levels: Vec<Vec<usize>>,
    pub sources: Vec<Point>,
    pub targets: Vec<Point>,
    /// `sources[i]` is input source `src_order[i]`.
    pub src_order: Vec<usize>,
    pub trg_order: Vec<usize>,
    pub leaf_capacity: usize,
}

fn check_points(pts: &[Point], what: &str) -> Result<()> {
    let bad: Vec<usize> = pts
        .iter()
        .enumerate()
        .filter(|(_, x)| !x.iter().all(|&c| (0.0..1.0).contains(&c)))
        .map(|(i, _)| i)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        let shown: Vec<String> = bad.iter().take(8).map(|&i| format!("{i} {:?}", pts[i])).collect();
        Err(Error::InvalidArgument(format!(
            "{} {what} outside [0,1)^3: {}{}",
            bad.len(),
            shown.join(", "),
            if bad.len() > 8 { ", ..." } else { "" }
        )))
    }
}

fn octant(x: &Point, level: u32) -> usize {
    let s = (1u64 << (level + 1)) as f64;
    let bit = |c: f64| ((c * s) as u64 & 1) as usize;
    4 * bit(x[0]) + 2 * bit(x[1]) + bit(x[2])
}

/// Reorders `idx` into the eight octants; returns the bucket boundaries.
fn partition(idx: &mut [usize], pts: &[Point], level: u32) -> [usize; 9] {
    let mut counts = [0usize; 8];
    for &i in idx.iter() {
        counts[octant(&pts[i], level)] += 1;
    }
    let mut bounds = [0usize; 9];
    for o in 0..8 {
        bounds[o + 1] = bounds[o] + counts[o];
    }
    let mut next = bounds;
    let mut out = vec![0usize; idx.len()];
    for &i in idx.iter() {
        let o = octant(&pts[i], level);
        out[next[o]] = i;
        next[o] += 1;
    }
    idx.copy_from_slice(&out);
    bounds
}

impl FmmTree {
    /// Splits boxes until every leaf holds at most `leaf_capacity` sources and targets.
    pub fn build(sources: &[Point], targets: &[Point], leaf_capacity: usize) -> Result<Self> {
        check_points(sources, "sources")?;
        check_points(targets, "targets")?;
        let cap = leaf_capacity.max(1);
        let mut src_order: Vec<usize> = (0..sources.len()).collect();
        let mut trg_order: Vec<usize> = (0..targets.len()).collect();
        let mut boxes = vec![TreeBox {
            level: 0,
            anchor: [0; 3],
            parent: None,
            children: Vec::new(),
            src: 0..sources.len(),
            trg: 0..targets.len(),
        }];
        let mut levels = vec![vec![0usize]];
        loop {
            let level = levels.len() as u32 - 1;
            let mut next = Vec::new();
            for &b in &levels[level as usize] {
                let (src, trg) = (boxes[b].src.clone(), boxes[b].trg.clone());
                if src.len() <= cap && trg.len() <= cap {
                    continue;
                }
                if level >= MAX_DEPTH {
                    return Err(Error::InvalidArgument(format!(
                        "leaf at depth {MAX_DEPTH} still holds {} sources and {} targets; duplicate points?",
                        src.len(),
                        trg.len()
                    )));
                }
                let sb = partition(&mut src_order[src.clone()], sources, level);
                let tb = partition(&mut trg_order[trg.clone()], targets, level);
                let anchor = boxes[b].anchor;
                for o in 0..8 {
                    let s = src.start + sb[o]..src.start + sb[o + 1];
                    let t = trg.start + tb[o]..trg.start + tb[o + 1];
                    if s.is_empty() && t.is_empty() {
                        continue;
                    }
                    let child = TreeBox {
                        level: level + 1,
                        anchor: [
                            2 * anchor[0] + (o >> 2) as i64,
                            2 * anchor[1] + ((o >> 1) & 1) as i64,
                            2 * anchor[2] + (o & 1) as i64,
                        ],
                        parent: Some(b),
                        children: Vec::new(),
                        src: s,
                        trg: t,
                    };
                    boxes.push(child);
                    let id = boxes.len() - 1;
                    boxes[b].children.push(id);
                    next.push(id);
                }
            }
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        Ok(FmmTree {
            boxes,
            levels,
            sources: src_order.iter().map(|&i| sources[i]).collect(),
            targets: trg_order.iter().map(|&i| targets[i]).collect(),
            src_order,
            trg_order,
            leaf_capacity: cap,
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.boxes.len()).filter(|&b| self.boxes[b].is_leaf())
    }

    /// Structural hash; identical inputs give identical values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for b in &self.boxes {
            (b.level, b.anchor, b.parent, &b.children, b.src.clone(), b.trg.clone()).hash(&mut h);
        }
        self.src_order.hash(&mut h);
        self.trg_order.hash(&mut h);
        h.finish()
    }

    /// Closed boxes `a` and `b + shift` touch or overlap.
    pub fn adjacent(&self, a: usize, b: usize, shift: [i64; 3]) -> bool {
        let d = self.depth() as u32;
        let (ba, bb) = (&self.boxes[a], &self.boxes[b]);
        let sa = 1i64 << (d - ba.level);
        let sb = 1i64 << (d - bb.level);
        (0..3).all(|k| {
            let lo_a = ba.anchor[k] * sa;
            let hi_a = lo_a + sa;
            let lo_b = bb.anchor[k] * sb + (shift[k] << d);
            let hi_b = lo_b + sb;
            lo_a <= hi_b && lo_b <= hi_a
        })
    }

    /// Lists for every box; images beyond max-norm 1 are not included.
    pub fn interaction_lists(&self, setup: &PeriodicSetup) -> Vec<Lists> {
        let mut lists = vec![Lists::default(); self.boxes.len()];
        let root_images = if setup.dims() == 0 { vec![[0; 3]] } else { image_offsets(setup, 0, 1) };
        lists[0].near = root_images.into_iter().map(|s| (0, s)).collect();
        for level in &self.levels {
            for &b in level {
                let parent_near = std::mem::take(&mut lists[b].near);
                for &c in &self.boxes[b].children {
                    if self.boxes[c].n_trg() == 0 {
                        continue;
                    }
                    let mut l = Lists::default();
                    for &(e, s) in &parent_near {
                        let eb = &self.boxes[e];
                        if eb.is_leaf() {
                            if self.adjacent(c, e, s) {
                                l.near.push((e, s));
                            } else {
                                l.x.push((e, s));
                            }
                        } else {
                            for &ch in &eb.children {
                                if self.boxes[ch].n_src() == 0 {
                                    continue;
                                }
                                if self.adjacent(c, ch, s) {
                                    l.near.push((ch, s));
                                } else {
                                    l.v.push((ch, s));
                                }
                            }
                        }
                    }
                    lists[c] = l;
                }
                if self.boxes[b].is_leaf() {
                    let mut stack: Vec<Entry> = Vec::new();
                    for &(e, s) in &parent_near {
                        if self.boxes[e].is_leaf() {
                            lists[b].u.push((e, s));
                        } else {
                            stack.extend(self.boxes[e].children.iter().map(|&ch| (ch, s)));
                        }
                    }
                    while let Some((e, s)) = stack.pop() {
                        if self.boxes[e].n_src() == 0 {
                            continue;
                        }
                        if !self.adjacent(b, e, s) {
                            lists[b].w.push((e, s));
                        } else if self.boxes[e].is_leaf() {
                            lists[b].u.push((e, s));
                        } else {
                            stack.extend(self.boxes[e].children.iter().map(|&ch| (ch, s)));
                        }
                    }
                }
                lists[b].near = parent_near;
            }
        }
        for l in &mut lists {
            l.near.retain(|&(e, _)| self.boxes[e].n_src() > 0);
            l.u.retain(|&(e, _)| self.boxes[e].n_src() > 0);
            l.x.retain(|&(e, _)| self.boxes[e].n_src() > 0);
        }
        lists
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Periodicity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>().powi(3)]).collect()
    }

    #[test]
    fn small_input_is_one_leaf() {
        let pts = random(10, 1);
        let t = FmmTree::build(&pts, &pts, 1000).unwrap();
        assert_eq!(t.boxes.len(), 1);
        assert!(t.boxes[0].is_leaf());
    }

    #[test]
    fn capacity_and_coverage() {
        let pts = random(3000, 2);
        let trg = random(500, 3);
        let t = FmmTree::build(&pts, &trg, 40).unwrap();
        let mut seen_s = vec![0; pts.len()];
        let mut seen_t = vec![0; trg.len()];
        for b in t.leaves() {
            let bx = &t.boxes[b];
            assert!(bx.n_src() <= 40 && bx.n_trg() <= 40);
            for i in bx.src.clone() {
                seen_s[t.src_order[i]] += 1;
                let h = bx.size();
                for d in 0..3 {
                    let lo = bx.anchor[d] as f64 * h;
                    assert!(t.sources[i][d] >= lo && t.sources[i][d] < lo + h);
                }
            }
            for i in bx.trg.clone() {
                seen_t[t.trg_order[i]] += 1;
            }
        }
        assert!(seen_s.iter().all(|&c| c == 1) && seen_t.iter().all(|&c| c == 1));
        assert_eq!(t.fingerprint(), FmmTree::build(&pts, &trg, 40).unwrap().fingerprint());
    }

    #[test]
    fn grid_input_depth() {
        let g = crate::geometry::chebyshev_cube(97).unwrap();
        let inside: Vec<Point> = g.into_iter().filter(|x| x.iter().all(|&c| c < 1.0)).collect();
        let t = FmmTree::build(&inside, &[], 1000).unwrap();
        assert!(t.depth() >= 3);
    }

    #[test]
    fn outside_points_are_rejected() {
        let e = FmmTree::build(&[[0.5, 1.0, 0.2], [0.1; 3]], &[], 10).unwrap_err();
        assert!(e.to_string().contains("1 sources"));
        assert!(FmmTree::build(&[[0.2; 3]], &[[-0.1, 0.0, 0.0]], 10).is_err());
    }

    #[test]
    fn duplicates_hit_the_depth_cap() {
        let pts = vec![[0.3; 3]; 20];
        assert!(FmmTree::build(&pts, &[], 4).is_err());
    }

    /// Every (target leaf, source leaf, image) triple is covered exactly once.
    #[test]
    fn lists_partition_all_pairs() {
        for (per, seed) in [(Periodicity::None, 4), (Periodicity::Sp, 5), (Periodicity::Dp, 6), (Periodicity::Tp, 7)] {
            let setup = if per == Periodicity::None { PeriodicSetup::free() } else { PeriodicSetup::new(per, 1).unwrap() };
            let pts = random(400, seed);
            let t = FmmTree::build(&pts, &pts, 12).unwrap();
            let lists = t.interaction_lists(&setup);
            let images = if setup.dims() == 0 { vec![[0; 3]] } else { image_offsets(&setup, 0, 1) };
            let leaves: Vec<usize> = t.leaves().filter(|&b| t.boxes[b].n_src() > 0).collect();
            for tl in t.leaves().filter(|&b| t.boxes[b].n_trg() > 0) {
                let mut chain = vec![tl];
                while let Some(p) = t.boxes[*chain.last().unwrap()].parent {
                    chain.push(p);
                }
                for &sl in &leaves {
                    for &s in &images {
                        let mut hits = 0;
                        let covers = |e: usize| {
                            let mut x = sl;
                            loop {
                                if x == e {
                                    return true;
                                }
                                match t.boxes[x].parent {
                                    Some(p) => x = p,
                                    None => return false,
                                }
                            }
                        };
                        for &a in &chain {
                            let l = &lists[a];
                            for list in [&l.v, &l.x] {
                                hits += list.iter().filter(|&&(e, sh)| sh == s && covers(e)).count();
                            }
                        }
                        let l = &lists[tl];
                        for list in [&l.u, &l.w] {
                            hits += list.iter().filter(|&&(e, sh)| sh == s && covers(e)).count();
                        }
                        assert_eq!(hits, 1, "{per:?}: target leaf {tl}, source leaf {sl}, image {s:?}");
                    }
                }
            }
        }
    }
}
