//! Sparse fixed-depth octree storing one `f32` log-odds value per leaf.

const NIL: u32 = u32::MAX;

/// Leaf key: integer leaf coordinates in `[0, 2^depth)` per axis.
pub type LeafKey = [u32; 3];

#[derive(Debug, Clone)]
pub struct Octree {
    depth: u32,
    // Internal nodes; at the deepest internal level children index `leaves`.
    nodes: Vec<[u32; 8]>,
    leaves: Vec<f32>,
}

#[inline]
fn octant(key: &LeafKey, bit: u32) -> usize {
    (((key[0] >> bit) & 1) | (((key[1] >> bit) & 1) << 1) | (((key[2] >> bit) & 1) << 2)) as usize
}

impl Octree {
    pub fn new(depth: u32) -> Octree {
        assert!((1..=20).contains(&depth), "octree depth {depth} out of range");
        Octree {
            depth,
            nodes: vec![[NIL; 8]],
            leaves: Vec::new(),
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn side(&self) -> u32 {
        1 << self.depth
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    fn in_range(&self, key: &LeafKey) -> bool {
        key.iter().all(|&c| c < self.side())
    }

    /// Walks root to leaf; `O(depth)`.
    pub fn get(&self, key: &LeafKey) -> Option<f32> {
        if !self.in_range(key) {
            return None;
        }
        let mut node = 0u32;
        for level in (0..self.depth).rev() {
            let child = self.nodes[node as usize][octant(key, level)];
            if child == NIL {
                return None;
            }
            if level == 0 {
                return Some(self.leaves[child as usize]);
            }
            node = child;
        }
        None
    }

    fn leaf_mut(&mut self, key: &LeafKey) -> &mut f32 {
        let mut node = 0usize;
        for level in (0..self.depth).rev() {
            let slot = octant(key, level);
            let child = self.nodes[node][slot];
            if level == 0 {
                let leaf = if child == NIL {
                    self.leaves.push(0.0);
                    let id = (self.leaves.len() - 1) as u32;
                    self.nodes[node][slot] = id;
                    id
                } else {
                    child
                };
                return &mut self.leaves[leaf as usize];
            }
            node = if child == NIL {
                self.nodes.push([NIL; 8]);
                let id = (self.nodes.len() - 1) as u32;
                self.nodes[node][slot] = id;
                id as usize
            } else {
                child as usize
            };
        }
        unreachable!("depth >= 1")
    }

    /// Adds `delta` to the leaf (creating it at 0) and clamps to `[lo, hi]`.
    pub fn update(&mut self, key: &LeafKey, delta: f32, lo: f32, hi: f32) -> f32 {
        assert!(self.in_range(key), "leaf key {key:?} outside octree");
        let v = self.leaf_mut(key);
        *v = (*v + delta).clamp(lo, hi);
        *v
    }

    /// Sets a leaf value directly (used when loading a map).
    pub fn set(&mut self, key: &LeafKey, value: f32) {
        assert!(self.in_range(key), "leaf key {key:?} outside octree");
        *self.leaf_mut(key) = value;
    }

    /// All leaves in depth-first octant order, independent of insertion order.
    pub fn leaves(&self) -> Vec<(LeafKey, f32)> {
        let mut out = Vec::with_capacity(self.leaves.len());
        self.collect(0, self.depth, [0, 0, 0], &mut out);
        out
    }

    fn collect(&self, node: u32, level: u32, prefix: LeafKey, out: &mut Vec<(LeafKey, f32)>) {
        let bit = level - 1;
        for (slot, &child) in self.nodes[node as usize].iter().enumerate() {
            if child == NIL {
                continue;
            }
            let key = [
                prefix[0] | ((slot as u32 & 1) << bit),
                prefix[1] | (((slot as u32 >> 1) & 1) << bit),
                prefix[2] | (((slot as u32 >> 2) & 1) << bit),
            ];
            if bit == 0 {
                out.push((key, self.leaves[child as usize]));
            } else {
                self.collect(child, bit, key, out);
            }
        }
    }
}

impl PartialEq for Octree {
    fn eq(&self, other: &Self) -> bool {
        self.depth == other.depth
            && self.leaves.len() == other.leaves.len()
            && self
                .leaves()
                .iter()
                .zip(other.leaves())
                .all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits())
    }
}
