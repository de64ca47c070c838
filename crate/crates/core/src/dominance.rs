//! Weak-dominance counting: for each query point `q`, the number of pool points
//! `p` with `p_k >= q_k` in every coordinate.
//!
//! Points are stored row-major in flat slices of length `n * dim`.

/// Counts pool points weakly dominating each query.
pub fn count_dominating(pool: &[f64], queries: &[f64], dim: usize) -> Vec<u32> {
    assert!(dim >= 1, "dimension must be positive");
    assert_eq!(pool.len() % dim, 0);
    assert_eq!(queries.len() % dim, 0);
    match dim {
        1 => count_1d(pool, queries),
        2 => count_2d(pool, queries),
        _ => BitsetIndex::new(pool, dim).count_all(queries),
    }
}

/// Quadratic reference implementation.
pub fn count_dominating_brute(pool: &[f64], queries: &[f64], dim: usize) -> Vec<u32> {
    queries
        .chunks_exact(dim)
        .map(|q| pool.chunks_exact(dim).filter(|p| p.iter().zip(q).all(|(a, b)| a >= b)).count() as u32)
        .collect()
}

fn count_1d(pool: &[f64], queries: &[f64]) -> Vec<u32> {
    let mut sorted = pool.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    queries
        .iter()
        .map(|&q| (n - sorted.partition_point(|&x| x < q)) as u32)
        .collect()
}

struct Fenwick(Vec<u32>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..i`.
    fn prefix(&self, mut i: usize) -> u32 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i &= i - 1;
        }
        s
    }
}

// Sweep in decreasing first coordinate, Fenwick tree over second-coordinate ranks.
fn count_2d(pool: &[f64], queries: &[f64]) -> Vec<u32> {
    let m = pool.len() / 2;
    let mut bs: Vec<f64> = pool.chunks_exact(2).map(|p| p[1]).collect();
    bs.sort_unstable_by(f64::total_cmp);
    let rank_b = |b: f64| bs.partition_point(|&x| x < b);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_unstable_by(|&i, &j| pool[2 * j].total_cmp(&pool[2 * i]));
    let mut qorder: Vec<usize> = (0..queries.len() / 2).collect();
    qorder.sort_unstable_by(|&i, &j| queries[2 * j].total_cmp(&queries[2 * i]));

    let mut tree = Fenwick(vec![0; m + 1]);
    let mut out = vec![0u32; qorder.len()];
    let mut inserted = 0usize;
    for qi in qorder {
        let (qa, qb) = (queries[2 * qi], queries[2 * qi + 1]);
        while inserted < m && pool[2 * order[inserted]] >= qa {
            let p = order[inserted];
            tree.add(rank_b(pool[2 * p + 1]));
            inserted += 1;
        }
        out[qi] = inserted as u32 - tree.prefix(rank_b(qb));
    }
    out
}

/// Per-coordinate prefix bitsets with checkpoints, for `dim >= 3`.
struct BitsetIndex {
    dim: usize,
    n: usize,
    words: usize,
    stride: usize,
    // per coordinate: values sorted descending, and the matching pool indices
    sorted_vals: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
    // per coordinate: position of each pool point in `order`
    position: Vec<Vec<u32>>,
    // per coordinate: checkpoint j holds the first j*stride points of `order`
    checkpoints: Vec<Vec<Vec<u64>>>,
}

impl BitsetIndex {
    fn new(pool: &[f64], dim: usize) -> Self {
        let n = pool.len() / dim;
        let words = n.div_ceil(64).max(1);
        let stride = (n / 256).max(64);
        let mut sorted_vals = Vec::with_capacity(dim);
        let mut orders = Vec::with_capacity(dim);
        let mut positions = Vec::with_capacity(dim);
        let mut checkpoints = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_unstable_by(|&i, &j| pool[j as usize * dim + k].total_cmp(&pool[i as usize * dim + k]));
            let vals: Vec<f64> = order.iter().map(|&i| pool[i as usize * dim + k]).collect();
            let mut pos = vec![0u32; n];
            for (r, &i) in order.iter().enumerate() {
                pos[i as usize] = r as u32;
            }
            let mut cps = Vec::with_capacity(n / stride + 1);
            let mut cur = vec![0u64; words];
            cps.push(cur.clone());
            for (r, &i) in order.iter().enumerate() {
                cur[i as usize / 64] |= 1 << (i % 64);
                if (r + 1) % stride == 0 {
                    cps.push(cur.clone());
                }
            }
            sorted_vals.push(vals);
            orders.push(order);
            positions.push(pos);
            checkpoints.push(cps);
        }
        Self { dim, n, words, stride, sorted_vals, order: orders, position: positions, checkpoints }
    }

    /// Number of pool points with coordinate `k` >= `v`; they occupy the
    /// leading positions of `order[k]`.
    fn prefix_len(&self, k: usize, v: f64) -> usize {
        self.sorted_vals[k].partition_point(|&x| x >= v)
    }

    fn fill_prefix(&self, k: usize, len: usize, buf: &mut [u64]) {
        let cp = len / self.stride;
        buf.copy_from_slice(&self.checkpoints[k][cp]);
        for &i in &self.order[k][cp * self.stride..len] {
            buf[i as usize / 64] |= 1 << (i % 64);
        }
    }

    fn count_all(&self, queries: &[f64]) -> Vec<u32> {
        let mut acc = vec![0u64; self.words];
        let mut tmp = vec![0u64; self.words];
        let bitset_cost = self.dim * (self.words + self.stride);
        queries
            .chunks_exact(self.dim)
            .map(|q| {
                let lens: Vec<usize> = (0..self.dim).map(|k| self.prefix_len(k, q[k])).collect();
                let (kmin, &lmin) = lens.iter().enumerate().min_by_key(|(_, &l)| l).unwrap();
                if lmin == 0 {
                    return 0;
                }
                if lmin == self.n && lens.iter().all(|&l| l == self.n) {
                    return self.n as u32;
                }
                if lmin * (self.dim - 1) <= bitset_cost {
                    // walk the shortest prefix and test membership in the others
                    return self.order[kmin][..lmin]
                        .iter()
                        .filter(|&&i| {
                            (0..self.dim)
                                .all(|k| k == kmin || (self.position[k][i as usize] as usize) < lens[k])
                        })
                        .count() as u32;
                }
                self.fill_prefix(0, lens[0], &mut acc);
                for k in 1..self.dim {
                    self.fill_prefix(k, lens[k], &mut tmp);
                    for (a, t) in acc.iter_mut().zip(&tmp) {
                        *a &= *t;
                    }
                }
                acc.iter().map(|w| w.count_ones()).sum()
            })
            .collect()
    }
}
