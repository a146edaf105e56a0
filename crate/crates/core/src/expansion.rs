//! Forest interpolation formulas, positivity-preserving decomposition, Mayer connectivity
//! factors and the toy polymer activity sum.

use crate::error::{Error, Result};
use crate::quad::gauss_legendre_unit;
use crate::regions::Square;
use nalgebra::DMatrix;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

pub const MAX_FOREST_LABELS: usize = 8;
pub const MAX_MAYER_POLYMERS: usize = 8;
pub const MAX_POLYOMINO_SIZE: usize = 10;
/// Upper bound on the growth of fixed polyomino counts per size.
pub const POLYOMINO_GROWTH_BOUND: f64 = 4.65;

/// Index of the unordered pair {i, j} among the n(n−1)/2 pairs of 0..n.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// All unordered pairs of 0..n in `pair_index` order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            v.push((i, j));
        }
    }
    v
}

#[derive(Debug, Clone)]
struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Loop-free edge set on the labels 0..n.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Forest {
    pub n: usize,
    /// Edges (i, j) with i < j.
    pub edges: Vec<(usize, usize)>,
}

impl Forest {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut dsu = Dsu::new(n);
        let mut norm = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::param("edges", "labels out of range or self-loop"));
            }
            if !dsu.union(a, b) {
                return Err(Error::param("edges", "edge set contains a loop"));
            }
            norm.push((a.min(b), a.max(b)));
        }
        Ok(Forest { n, edges: norm })
    }

    pub fn empty(n: usize) -> Self {
        Forest { n, edges: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_spanning_tree(&self) -> bool {
        self.n > 0 && self.edges.len() == self.n - 1
    }

    /// Cluster index of each label.
    pub fn clusters(&self) -> Vec<usize> {
        clusters_of(self.n, self.edges.iter().copied())
    }

    /// Edge indices on the unique path from i to j, if any.
    pub fn path(&self, i: usize, j: usize) -> Option<Vec<usize>> {
        if i == j {
            return Some(Vec::new());
        }
        let mut adj = vec![Vec::new(); self.n];
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            adj[a].push((b, k));
            adj[b].push((a, k));
        }
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.n];
        let mut seen = vec![false; self.n];
        seen[i] = true;
        let mut queue = VecDeque::from([i]);
        while let Some(v) = queue.pop_front() {
            if v == j {
                break;
            }
            for &(u, k) in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    prev[u] = Some((v, k));
                    queue.push_back(u);
                }
            }
        }
        if !seen[j] {
            return None;
        }
        let mut path = Vec::new();
        let mut v = j;
        while let Some((p, k)) = prev[v] {
            path.push(k);
            v = p;
        }
        Some(path)
    }
}

fn clusters_of(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut dsu = Dsu::new(n);
    for (a, b) in edges {
        dsu.union(a, b);
    }
    let mut ids = BTreeMap::new();
    (0..n)
        .map(|v| {
            let r = dsu.find(v);
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect()
}

/// Every forest on 0..n whose edges lie in `allowed` (all pairs when `None`).
pub fn enumerate_forests_on(n: usize, allowed: Option<&[(usize, usize)]>) -> Result<Vec<Forest>> {
    if n > MAX_FOREST_LABELS {
        return Err(Error::SizeGuard {
            what: "forest labels",
            got: n,
            limit: MAX_FOREST_LABELS,
        });
    }
    let candidates: Vec<(usize, usize)> = match allowed {
        Some(a) => a.iter().map(|&(x, y)| (x.min(y), x.max(y))).collect(),
        None => pairs(n),
    };
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn rec(
        k: usize,
        cands: &[(usize, usize)],
        dsu: &Dsu,
        current: &mut Vec<(usize, usize)>,
        n: usize,
        out: &mut Vec<Forest>,
    ) {
        if k == cands.len() {
            out.push(Forest { n, edges: current.clone() });
            return;
        }
        rec(k + 1, cands, dsu, current, n, out);
        let mut d = dsu.clone();
        if d.union(cands[k].0, cands[k].1) {
            current.push(cands[k]);
            rec(k + 1, cands, &d, current, n, out);
            current.pop();
        }
    }
    rec(0, &candidates, &Dsu::new(n), &mut current, n, &mut out);
    Ok(out)
}

/// Every forest on 0..n.
pub fn enumerate_forests(n: usize) -> Result<Vec<Forest>> {
    enumerate_forests_on(n, None)
}

/// h^F_ij: inf of the edge parameters on the path from i to j, 0 when disconnected.
pub fn effective_parameter(forest: &Forest, h: &[f64], i: usize, j: usize) -> f64 {
    match forest.path(i, j) {
        None => 0.0,
        Some(p) => p.iter().map(|&k| h[k]).fold(1.0, f64::min),
    }
}

/// ∫ over the unit cube in k dimensions, split into the k! ordering simplices and
/// integrated by iterated Gauss-Legendre with `nodes` points per direction.
pub fn integrate_cube_by_orderings(k: usize, nodes: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    if k == 0 {
        return f(&[]);
    }
    let (x, w) = gauss_legendre_unit(nodes);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut total = 0.0;
    let mut h = vec![0.0; k];
    let mut t = vec![0.0; k];
    loop {
        // Sorted t_0 ≤ ... ≤ t_{k−1}: t_{k−1} ∈ [0,1], t_{i} ∈ [0, t_{i+1}].
        let mut idx = vec![0usize; k];
        'outer: loop {
            let mut weight = 1.0;
            let mut upper = 1.0;
            for lvl in (0..k).rev() {
                t[lvl] = upper * x[idx[lvl]];
                weight *= upper * w[idx[lvl]];
                upper = t[lvl];
            }
            for (pos, &p) in perm.iter().enumerate() {
                h[p] = t[pos];
            }
            total += weight * f(&h);
            for lvl in 0..k {
                idx[lvl] += 1;
                if idx[lvl] < nodes {
                    continue 'outer;
                }
                idx[lvl] = 0;
            }
            break;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    total
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Smooth function of the pair variables x_p with known mixed partial derivatives.
pub trait PairFunction {
    fn labels(&self) -> usize;
    /// ∂^{|set|} H / Π_{p ∈ set} ∂x_p at x (distinct pair indices).
    fn mixed_partial(&self, x: &[f64], set: &[usize]) -> f64;
}

/// Closed-form test functions of the pair variables.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// exp(Σ a_p x_p).
    Exponential { n: usize, coeffs: Vec<f64> },
    /// Π_p (1 + a_p x_p).
    ProductLinear { n: usize, coeffs: Vec<f64> },
    /// (Σ_p x_p)^k.
    PowerOfSum { n: usize, k: u32 },
}

impl PairFunction for TestFunction {
    fn labels(&self) -> usize {
        match self {
            TestFunction::Exponential { n, .. } | TestFunction::ProductLinear { n, .. } | TestFunction::PowerOfSum { n, .. } => *n,
        }
    }

    fn mixed_partial(&self, x: &[f64], set: &[usize]) -> f64 {
        match self {
            TestFunction::Exponential { coeffs, .. } => {
                let s: f64 = coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
                set.iter().map(|&p| coeffs[p]).product::<f64>() * s.exp()
            }
            TestFunction::ProductLinear { coeffs, .. } => coeffs
                .iter()
                .zip(x)
                .enumerate()
                .map(|(p, (a, v))| if set.contains(&p) { *a } else { 1.0 + a * v })
                .product(),
            TestFunction::PowerOfSum { k, .. } => {
                let s: usize = set.len();
                if s > *k as usize {
                    return 0.0;
                }
                let falling: f64 = (0..s).map(|r| (*k as usize - r) as f64).product();
                falling * x.iter().sum::<f64>().powi((*k as usize - s) as i32)
            }
        }
    }
}

/// Gaussian normalization det^{-1/2}(1 + K(x)) with K(x)_{ab} = x_{b(a) b(b)} K_{ab} across blocks.
#[derive(Debug, Clone)]
pub struct GaussianToy {
    pub k: DMatrix<f64>,
    pub block_of: Vec<usize>,
    pub blocks: usize,
}

impl GaussianToy {
    pub fn new(k: DMatrix<f64>, block_of: Vec<usize>) -> Result<Self> {
        if k.nrows() != k.ncols() || k.nrows() != block_of.len() {
            return Err(Error::Dimension("kernel and block map sizes differ".into()));
        }
        let blocks = block_of.iter().max().map(|b| b + 1).unwrap_or(0);
        Ok(GaussianToy { k, block_of, blocks })
    }

    /// K(x) for pair variables x.
    pub fn interpolated(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.k.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (self.block_of[i], self.block_of[j]);
            if a == b {
                self.k[(i, j)]
            } else {
                x[pair_index(self.blocks, a, b)] * self.k[(i, j)]
            }
        })
    }

    fn link(&self, p: usize) -> DMatrix<f64> {
        let (a, b) = pairs(self.blocks)[p];
        let n = self.k.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            let (u, v) = (self.block_of[i], self.block_of[j]);
            if (u == a && v == b) || (u == b && v == a) {
                self.k[(i, j)]
            } else {
                0.0
            }
        })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let n = self.k.nrows();
        let m = DMatrix::identity(n, n) + self.interpolated(x);
        let det = m.determinant();
        if det <= 0.0 {
            return Err(Error::NotPositiveDefinite("1 + K(x)".into()));
        }
        Ok(det.powf(-0.5))
    }

    /// ∂_B ln Z = −½ (−1)^{|B|−1} Σ_{orders fixing the first} Tr Π_a (M^{-1} K_a).
    fn log_cumulant(&self, minv: &DMatrix<f64>, block: &[usize]) -> f64 {
        if block.is_empty() {
            return 0.0;
        }
        let first = block[0];
        let mut rest: Vec<usize> = block[1..].to_vec();
        rest.sort_unstable();
        let mut total = 0.0;
        loop {
            let mut prod = minv * self.link(first);
            for &p in &rest {
                prod = prod * minv * self.link(p);
            }
            total += prod.trace();
            if !next_permutation(&mut rest) {
                break;
            }
        }
        let sign = if block.len() % 2 == 1 { 1.0 } else { -1.0 };
        -0.5 * sign * total
    }
}

fn set_partitions(items: &[usize]) -> Vec<Vec<Vec<usize>>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let first = items[0];
    let mut out = Vec::new();
    for mut part in set_partitions(&items[1..]) {
        for k in 0..part.len() {
            let mut p = part.clone();
            p[k].insert(0, first);
            out.push(p);
        }
        part.push(vec![first]);
        out.push(part);
    }
    out
}

impl PairFunction for GaussianToy {
    fn labels(&self) -> usize {
        self.blocks
    }

    fn mixed_partial(&self, x: &[f64], set: &[usize]) -> f64 {
        let n = self.k.nrows();
        let m = DMatrix::identity(n, n) + self.interpolated(x);
        let z = m.determinant().powf(-0.5);
        let minv = m.try_inverse().expect("1 + K(x) invertible for PSD K");
        let mut s = 0.0;
        for part in set_partitions(set) {
            s += part.iter().map(|b| self.log_cumulant(&minv, b)).product::<f64>();
        }
        z * s
    }
}

/// Outcome of the forest-formula check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestFormulaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub forests: usize,
    pub residual: f64,
}

/// Right side of the forest formula, Σ_F ∫ dh_F (∂_F H)(h^F(h)), against H(1,...,1).
pub fn verify_forest_formula(h: &dyn PairFunction, nodes: usize) -> Result<ForestFormulaCheck> {
    let n = h.labels();
    let pp = pairs(n);
    let forests = enumerate_forests(n)?;
    let mut rhs = 0.0;
    for f in &forests {
        let set: Vec<usize> = f.edges.iter().map(|&(a, b)| pair_index(n, a, b)).collect();
        let mut x = vec![0.0; pp.len()];
        rhs += integrate_cube_by_orderings(f.len(), nodes, |hv| {
            for (p, &(a, b)) in pp.iter().enumerate() {
                x[p] = effective_parameter(f, hv, a, b);
            }
            h.mixed_partial(&x, &set)
        });
    }
    let lhs = h.mixed_partial(&vec![1.0; pp.len()], &[]);
    Ok(ForestFormulaCheck {
        lhs,
        rhs,
        forests: forests.len(),
        residual: (rhs - lhs).abs(),
    })
}

/// Whether two closed unit squares intersect.
pub fn squares_touch(a: Square, b: Square) -> bool {
    (a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1
}

/// Nonzero terms of the first forest formula on a toy large-field region.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstForestCheck {
    pub total: f64,
    pub surviving: Vec<Forest>,
    /// Every surviving forest has the components as clusters.
    pub clusters_match: bool,
    pub evaluated: usize,
}

/// Evaluate 1 = Σ_{F₁} Π_{l∈F₁} ε_l ∫dh_l Π_{l∉F₁} (η_l + ε_l h^{F₁}_l) on squares with component labels.
pub fn verify_first_forest_formula(squares: &[Square], component: &[usize], nodes: usize) -> Result<FirstForestCheck> {
    let n = squares.len();
    if component.len() != n {
        return Err(Error::Dimension("one component label per square".into()));
    }
    let pp = pairs(n);
    let eps: Vec<bool> = pp
        .iter()
        .map(|&(i, j)| component[i] == component[j] && squares_touch(squares[i], squares[j]))
        .collect();
    let allowed: Vec<(usize, usize)> = pp.iter().zip(&eps).filter(|(_, e)| **e).map(|(p, _)| *p).collect();
    let forests = enumerate_forests_on(n, Some(&allowed))?;
    let comp_clusters = canonical_partition(component);
    let mut total = 0.0;
    let mut surviving = Vec::new();
    let mut clusters_match = true;
    for f in &forests {
        let in_f: BTreeSet<usize> = f.edges.iter().map(|&(a, b)| pair_index(n, a, b)).collect();
        let value = integrate_cube_by_orderings(f.len(), nodes, |hv| {
            let mut prod = 1.0;
            for (p, &(a, b)) in pp.iter().enumerate() {
                if in_f.contains(&p) {
                    continue;
                }
                prod *= if eps[p] { effective_parameter(f, hv, a, b) } else { 1.0 };
                if prod == 0.0 {
                    break;
                }
            }
            prod
        });
        if value != 0.0 {
            if canonical_partition(&f.clusters()) != comp_clusters {
                clusters_match = false;
            }
            surviving.push(f.clone());
        }
        total += value;
    }
    Ok(FirstForestCheck {
        total,
        surviving,
        clusters_match,
        evaluated: forests.len(),
    })
}

fn canonical_partition(labels: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let mut m: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        m.entry(c).or_default().insert(i);
    }
    m.into_values().collect()
}

/// Inf-rule interpolation K(h)_{xy} = h^F_{b(x) b(y)} K_{xy}, with 1 inside a block.
pub fn interpolate_inf_rule(k: &DMatrix<f64>, block_of: &[usize], forest: &Forest, h: &[f64]) -> DMatrix<f64> {
    let n = k.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (block_of[i], block_of[j]);
        let factor = if a == b { 1.0 } else { effective_parameter(forest, h, a, b) };
        factor * k[(i, j)]
    })
}

/// K(h) = Σ_p (h_p − h_{p−1}) Σ_q χ_{p,q} K χ_{p,q} for the edges sorted by h.
pub fn positivity_decomposition(
    k: &DMatrix<f64>,
    block_of: &[usize],
    forest: &Forest,
    h: &[f64],
) -> Result<Vec<(f64, DMatrix<f64>)>> {
    if h.len() != forest.len() {
        return Err(Error::Dimension("one parameter per forest edge".into()));
    }
    if h.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::param("h", "parameters must lie in [0, 1]"));
    }
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| h[a].total_cmp(&h[b]));
    let blocks = forest.n;
    let n = k.nrows();
    let mut out = Vec::with_capacity(order.len() + 1);
    let mut prev = 0.0;
    for p in 0..=order.len() {
        let hp = if p < order.len() { h[order[p]] } else { 1.0 };
        let weight = hp - prev;
        prev = hp;
        // Clusters built from the edges with rank ≥ p.
        let cl = clusters_of(blocks, order[p..].iter().map(|&e| forest.edges[e]));
        let term = DMatrix::from_fn(n, n, |i, j| {
            if cl[block_of[i]] == cl[block_of[j]] {
                k[(i, j)]
            } else {
                0.0
            }
        });
        out.push((weight, term));
    }
    Ok(out)
}

/// Overlap (hard-core) graph on q polymers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapGraph {
    pub q: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl OverlapGraph {
    pub fn new(q: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if q > MAX_MAYER_POLYMERS {
            return Err(Error::SizeGuard {
                what: "polymers",
                got: q,
                limit: MAX_MAYER_POLYMERS,
            });
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= q || b >= q || a == b {
                return Err(Error::param("overlap", "invalid polymer pair"));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(OverlapGraph { q, edges: set })
    }

    pub fn complete(q: usize) -> Result<Self> {
        Self::new(q, pairs(q))
    }

    /// Overlap graph of square sets.
    pub fn from_polymers(polymers: &[BTreeSet<Square>]) -> Result<Self> {
        let q = polymers.len();
        let mut e = Vec::new();
        for (i, j) in pairs(q) {
            if !polymers[i].is_disjoint(&polymers[j]) {
                e.push((i, j));
            }
        }
        Self::new(q, e)
    }

    /// v_ij ∈ {0, −1}.
    pub fn v(&self, i: usize, j: usize) -> f64 {
        if self.edges.contains(&(i.min(j), i.max(j))) {
            -1.0
        } else {
            0.0
        }
    }
}

/// T(M) = Σ_{G connected} Π_{ij∈G} v_ij by enumeration of edge subsets of the overlap graph.
pub fn mayer_connectivity(g: &OverlapGraph) -> f64 {
    if g.q <= 1 {
        return 1.0;
    }
    let edges: Vec<(usize, usize)> = g.edges.iter().copied().collect();
    let m = edges.len();
    let full = (1u64 << g.q) - 1;
    let mut total = 0i64;
    for mask in 0u64..(1u64 << m) {
        let count = mask.count_ones() as usize;
        if count + 1 < g.q {
            continue;
        }
        // Connectivity by bitset flooding from vertex 0.
        let mut reach = 1u64;
        loop {
            let mut next = reach;
            for (k, &(a, b)) in edges.iter().enumerate() {
                if mask >> k & 1 == 1 && ((reach >> a) & 1 == 1 || (reach >> b) & 1 == 1) {
                    next |= (1 << a) | (1 << b);
                }
            }
            if next == reach {
                break;
            }
            reach = next;
        }
        if reach == full {
            total += if count % 2 == 0 { 1 } else { -1 };
        }
    }
    total as f64
}

pub const MAX_TREE_FORMULA_POLYMERS: usize = 6;

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Exact ∫_{0 ≤ t_0 ≤ ... ≤ t_{k−1} ≤ 1} Π_r (1 − t_r)^{c_r}.
pub fn simplex_integral(exponents: &[usize]) -> f64 {
    let mut p = vec![1.0];
    for &c in exponents {
        for _ in 0..c {
            p = poly_mul(&p, &[1.0, -1.0]);
        }
        let mut q = vec![0.0; p.len() + 1];
        for (i, a) in p.iter().enumerate() {
            q[i + 1] = a / (i + 1) as f64;
        }
        p = q;
    }
    p.iter().sum()
}

/// T(M) from the tree formula Σ_T Π_{l∈T} v_l ∫dh Π_{ij∉T} (1 + h_T(i,j) v_ij), integrated exactly.
pub fn mayer_tree_formula(g: &OverlapGraph) -> Result<f64> {
    if g.q > MAX_TREE_FORMULA_POLYMERS {
        return Err(Error::SizeGuard {
            what: "tree-formula polymers",
            got: g.q,
            limit: MAX_TREE_FORMULA_POLYMERS,
        });
    }
    if g.q <= 1 {
        return Ok(1.0);
    }
    let allowed: Vec<(usize, usize)> = g.edges.iter().copied().collect();
    let mut total = 0.0;
    for t in enumerate_forests_on(g.q, Some(&allowed))?.into_iter().filter(|f| f.is_spanning_tree()) {
        let tree_edges: BTreeSet<(usize, usize)> = t.edges.iter().copied().collect();
        let sign = if t.len() % 2 == 0 { 1.0 } else { -1.0 };
        // Tree path of every overlapping pair off the tree.
        let paths: Vec<Vec<usize>> = g
            .edges
            .iter()
            .filter(|e| !tree_edges.contains(e))
            .map(|&(a, b)| t.path(a, b).expect("spanning tree"))
            .collect();
        let k = t.len();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut rank = vec![0usize; k];
        let mut integral = 0.0;
        loop {
            for (pos, &e) in perm.iter().enumerate() {
                rank[e] = pos;
            }
            let mut exps = vec![0usize; k];
            for path in &paths {
                exps[path.iter().map(|&e| rank[e]).min().expect("nonempty path")] += 1;
            }
            integral += simplex_integral(&exps);
            if !next_permutation(&mut perm) {
                break;
            }
        }
        total += sign * integral;
    }
    Ok(total)
}

/// Connected square sets (fixed polyominoes) of each size ≤ max_size containing (0, 0).
pub fn polyominoes_containing_origin(max_size: usize) -> Result<Vec<Vec<BTreeSet<Square>>>> {
    if max_size > MAX_POLYOMINO_SIZE {
        return Err(Error::SizeGuard {
            what: "polyomino size",
            got: max_size,
            limit: MAX_POLYOMINO_SIZE,
        });
    }
    let mut levels: Vec<Vec<BTreeSet<Square>>> = Vec::with_capacity(max_size);
    if max_size == 0 {
        return Ok(levels);
    }
    levels.push(vec![BTreeSet::from([(0, 0)])]);
    for _ in 1..max_size {
        let mut next: BTreeSet<BTreeSet<Square>> = BTreeSet::new();
        for poly in levels.last().unwrap() {
            for &(i, j) in poly {
                for d in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let c = (i + d.0, j + d.1);
                    if !poly.contains(&c) {
                        let mut grown = poly.clone();
                        grown.insert(c);
                        next.insert(grown);
                    }
                }
            }
        }
        levels.push(next.into_iter().collect());
    }
    Ok(levels)
}

/// Σ_{Y∋0} |b(Y)| e^{|Y|} for the toy activity b(Y) = ρ^{|Y|}.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivitySum {
    pub rho: f64,
    pub counts: Vec<usize>,
    pub exhaustive: f64,
    pub tail_bound: f64,
}

impl ActivitySum {
    pub fn total(&self) -> f64 {
        self.exhaustive + self.tail_bound
    }
}

/// Exhaustive sum up to `max_size` plus Σ_{n>max} n (4.65 ρ e)^n.
pub fn polymer_activity_sum(rho: f64, max_size: usize, include_singletons: bool) -> Result<ActivitySum> {
    if !(rho >= 0.0) {
        return Err(Error::param("rho", "must be nonnegative"));
    }
    let levels = polyominoes_containing_origin(max_size)?;
    let counts: Vec<usize> = levels.iter().map(|l| l.len()).collect();
    activity_from_counts(rho, &counts, include_singletons)
}

fn activity_from_counts(rho: f64, counts: &[usize], include_singletons: bool) -> Result<ActivitySum> {
    let x = rho * std::f64::consts::E;
    let mut exhaustive = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        let size = k + 1;
        if size == 1 && !include_singletons {
            continue;
        }
        exhaustive += c as f64 * x.powi(size as i32);
    }
    let y = POLYOMINO_GROWTH_BOUND * x;
    let k0 = counts.len() as f64 + 1.0;
    let tail_bound = if y >= 1.0 {
        f64::INFINITY
    } else {
        y.powf(k0) * (k0 - (k0 - 1.0) * y) / ((1.0 - y) * (1.0 - y))
    };
    Ok(ActivitySum {
        rho,
        counts: counts.to_vec(),
        exhaustive,
        tail_bound,
    })
}

/// Largest ρ (to relative precision 1e-12) with total activity sum ≤ 1/2.
pub fn activity_threshold(max_size: usize, include_singletons: bool) -> Result<ActivitySum> {
    let levels = polyominoes_containing_origin(max_size)?;
    let counts: Vec<usize> = levels.iter().map(|l| l.len()).collect();
    let mut lo = 0.0;
    let mut hi = 1.0 / (POLYOMINO_GROWTH_BOUND * std::f64::consts::E);
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if activity_from_counts(mid, &counts, include_singletons)?.total() <= 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    activity_from_counts(lo, &counts, include_singletons)
}
