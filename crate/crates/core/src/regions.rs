//! Small/large-field partition of unity, square classification and corridor regions.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quad;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

/// Unit square identified by its integer lower-left corner.
pub type Square = (i64, i64);

/// Euclidean distance between two closed unit squares.
pub fn square_distance(a: Square, b: Square) -> f64 {
    let dx = ((a.0 - b.0).abs() - 1).max(0) as f64;
    let dy = ((a.1 - b.1).abs() - 1).max(0) as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Distance from a square to a set of squares (∞ for the empty set).
pub fn distance_to_set<'a>(a: Square, set: impl IntoIterator<Item = &'a Square>) -> f64 {
    set.into_iter().map(|&b| square_distance(a, b)).fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Geometry and site layouts

/// Paving of Λ = [−n, n]² by 4n² unit squares, each split into sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeGeometry {
    pub n: usize,
    /// Sites per square edge; a square carries sites_per_side² sites.
    pub sites_per_side: usize,
}

impl LatticeGeometry {
    pub fn new(n: usize, sites_per_side: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be positive"));
        }
        if sites_per_side == 0 {
            return Err(Error::param("sites_per_square", "must be positive"));
        }
        Ok(LatticeGeometry { n, sites_per_side })
    }

    pub fn num_squares(&self) -> usize {
        4 * self.n * self.n
    }

    /// Squares of Λ in lexicographic order.
    pub fn squares(&self) -> Vec<Square> {
        let n = self.n as i64;
        let mut v = Vec::with_capacity(self.num_squares());
        for i in -n..n {
            for j in -n..n {
                v.push((i, j));
            }
        }
        v
    }

    pub fn contains(&self, sq: Square) -> bool {
        let n = self.n as i64;
        (-n..n).contains(&sq.0) && (-n..n).contains(&sq.1)
    }

    /// Site layout covering Λ.
    pub fn layout(&self) -> SiteLayout {
        SiteLayout::new(self.squares(), self.sites_per_side)
    }

    pub fn grid_step(&self) -> f64 {
        1.0 / self.sites_per_side as f64
    }
}

/// Sites of a union of unit squares, ordered square by square.
///
/// Site k sits at the centre of its cell, (a + ½) h with global lattice index a.
#[derive(Debug, Clone)]
pub struct SiteLayout {
    sites_per_side: usize,
    squares: Vec<Square>,
    index: HashMap<Square, usize>,
}

impl SiteLayout {
    pub fn new(squares: Vec<Square>, sites_per_side: usize) -> Self {
        let index = squares.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        SiteLayout {
            sites_per_side,
            squares,
            index,
        }
    }

    pub fn sites_per_side(&self) -> usize {
        self.sites_per_side
    }

    pub fn squares(&self) -> &[Square] {
        &self.squares
    }

    pub fn sites_per_square(&self) -> usize {
        self.sites_per_side * self.sites_per_side
    }

    pub fn num_sites(&self) -> usize {
        self.squares.len() * self.sites_per_square()
    }

    pub fn grid_step(&self) -> f64 {
        1.0 / self.sites_per_side as f64
    }

    /// Quadrature weight of one site.
    pub fn cell_weight(&self) -> f64 {
        self.grid_step().powi(2)
    }

    pub fn square_of_site(&self, k: usize) -> Square {
        self.squares[k / self.sites_per_square()]
    }

    /// Global lattice index of a site.
    pub fn site_lattice(&self, k: usize) -> (i64, i64) {
        let s = self.sites_per_side;
        let sq = self.square_of_site(k);
        let local = k % self.sites_per_square();
        (
            sq.0 * s as i64 + (local / s) as i64,
            sq.1 * s as i64 + (local % s) as i64,
        )
    }

    pub fn site_position(&self, k: usize) -> (f64, f64) {
        let (a, b) = self.site_lattice(k);
        let h = self.grid_step();
        ((a as f64 + 0.5) * h, (b as f64 + 0.5) * h)
    }

    /// Sites belonging to a square, if the square is part of the layout.
    pub fn sites_of(&self, sq: Square) -> Option<std::ops::Range<usize>> {
        self.index.get(&sq).map(|&q| {
            let p = self.sites_per_square();
            q * p..(q + 1) * p
        })
    }

    pub fn contains_square(&self, sq: Square) -> bool {
        self.index.contains_key(&sq)
    }

    /// Site mask of all sites whose square satisfies `pred`.
    pub fn mask(&self, pred: impl Fn(Square) -> bool) -> Vec<bool> {
        (0..self.num_sites()).map(|k| pred(self.square_of_site(k))).collect()
    }

    /// Site mask of the given set of squares.
    pub fn mask_of(&self, set: &BTreeSet<Square>) -> Vec<bool> {
        self.mask(|s| set.contains(&s))
    }

    /// Largest absolute lattice displacement between two sites.
    pub fn max_displacement(&self) -> usize {
        let (mut lo, mut hi) = ((i64::MAX, i64::MAX), (i64::MIN, i64::MIN));
        for &(i, j) in &self.squares {
            lo = (lo.0.min(i), lo.1.min(j));
            hi = (hi.0.max(i), hi.1.max(j));
        }
        if self.squares.is_empty() {
            return 0;
        }
        let s = self.sites_per_side as i64;
        (((hi.0 - lo.0 + 1) * s - 1).max((hi.1 - lo.1 + 1) * s - 1)) as usize
    }
}

// ---------------------------------------------------------------------------
// Field configurations

/// Real τ-field on the sites of Λ with per-square L² masses (midpoint rule).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub geometry: LatticeGeometry,
    pub tau: Vec<f64>,
    pub masses: BTreeMap<Square, f64>,
}

impl FieldConfig {
    pub fn new(geometry: LatticeGeometry, tau: Vec<f64>) -> Result<Self> {
        let layout = geometry.layout();
        if tau.len() != layout.num_sites() {
            return Err(Error::Dimension(format!(
                "field has {} values, geometry has {} sites",
                tau.len(),
                layout.num_sites()
            )));
        }
        let w = layout.cell_weight();
        let mut masses = BTreeMap::new();
        for &sq in layout.squares() {
            let r = layout.sites_of(sq).expect("square of layout");
            masses.insert(sq, tau[r].iter().map(|t| t * t).sum::<f64>() * w);
        }
        Ok(FieldConfig { geometry, tau, masses })
    }

    pub fn zero(geometry: LatticeGeometry) -> Self {
        let n = geometry.layout().num_sites();
        FieldConfig::new(geometry, vec![0.0; n]).expect("matching size")
    }

    /// Field constant on each square with prescribed per-square mass ∫_Δ τ².
    pub fn from_square_masses(geometry: LatticeGeometry, masses: &BTreeMap<Square, f64>) -> Result<Self> {
        let layout = geometry.layout();
        let mut tau = vec![0.0; layout.num_sites()];
        for (&sq, &mass) in masses {
            if mass < 0.0 {
                return Err(Error::param("mass", "must be nonnegative"));
            }
            let r = layout.sites_of(sq).ok_or_else(|| Error::param("square", format!("{sq:?} outside the lattice")))?;
            for t in &mut tau[r] {
                *t = mass.sqrt();
            }
        }
        FieldConfig::new(geometry, tau)
    }

    /// ∫ τ² over a set of squares.
    pub fn mass_of<'a>(&self, set: impl IntoIterator<Item = &'a Square>) -> f64 {
        set.into_iter().map(|s| self.masses.get(s).copied().unwrap_or(0.0)).sum()
    }

    /// Write as text header plus little-endian f64 values.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = format!(
            "# largen-sigma field\nn={}\nsites_per_side={}\nend_header\n",
            self.geometry.n, self.geometry.sites_per_side
        )
        .into_bytes();
        for t in &self.tau {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = BufReader::new(file);
        let mut kv = HashMap::new();
        loop {
            let mut line = String::new();
            if rd.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    reason: "missing end_header".into(),
                });
            }
            let line = line.trim_end();
            if line == "end_header" {
                break;
            }
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<usize> {
            kv.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                reason: format!("bad or missing header key `{k}`"),
            })
        };
        let geometry = LatticeGeometry::new(get("n")?, get("sites_per_side")?)?;
        let mut raw = Vec::new();
        rd.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
        if raw.len() % 8 != 0 {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: "value block is not a whole number of f64".into(),
            });
        }
        let tau = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        FieldConfig::new(geometry, tau)
    }
}

// ---------------------------------------------------------------------------
// Partition of unity

const STEP_HALF_WIDTH: f64 = 0.25;

fn bump(t: f64) -> f64 {
    let d = STEP_HALF_WIDTH * STEP_HALF_WIDTH - t * t;
    if d <= 0.0 {
        0.0
    } else {
        (-1.0 / d).exp()
    }
}

fn bump_integral(a: f64, b: f64) -> f64 {
    quad::integrate(bump, a, b, 1e-25, 1e-14)
        .map(|r| r.value)
        .expect("bump integral converges")
}

fn bump_norm() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| bump_integral(-STEP_HALF_WIDTH, STEP_HALF_WIDTH))
}

/// Smooth monotone step: 0 for x ≤ −1/4, 1 for x ≥ 1/4, normalized bump integral between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= -STEP_HALF_WIDTH {
        0.0
    } else if x >= STEP_HALF_WIDTH {
        1.0
    } else if x > 0.0 {
        1.0 - smooth_step(-x)
    } else {
        bump_integral(-STEP_HALF_WIDTH, x) / bump_norm()
    }
}

/// Hard label of a square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SquareLabel {
    Small,
    /// lⁿ with n ≥ 1.
    Large(u32),
}

impl std::fmt::Display for SquareLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SquareLabel::Small => write!(f, "s"),
            SquareLabel::Large(n) => write!(f, "l{n}"),
        }
    }
}

/// Smooth weights of one square: θˢ and θ_1..θ_{n_max}.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaWeights {
    pub theta_s: f64,
    /// theta_n[k] = θ_{k+1}.
    pub theta_n: Vec<f64>,
}

impl ThetaWeights {
    /// θˢ + Σ θ_n.
    pub fn total(&self) -> f64 {
        self.theta_s + self.theta_n.iter().sum::<f64>()
    }
}

/// Smallest n with (3/4) N^{n/6} > x, where x = λK·(largest mass).
pub fn n_max(x_max: f64, big_n: f64) -> u32 {
    let mut n = 1u32;
    while 0.75 * big_n.powf(n as f64 / 6.0) <= x_max {
        n += 1;
    }
    n
}

/// θˢ and θ_n for x = λK ||τ_Δ||², n = 1..=n_max.
pub fn theta_weights(x: f64, big_n: f64, n_max: u32) -> ThetaWeights {
    let step = |n: u32| smooth_step(x / big_n.powf(n as f64 / 6.0) - 1.0);
    let theta_l = step(1);
    let mut theta_n = Vec::with_capacity(n_max as usize);
    let mut lower = theta_l;
    for n in 1..=n_max {
        let upper = step(n + 1);
        theta_n.push(lower - upper);
        lower = upper;
    }
    ThetaWeights {
        theta_s: 1.0 - theta_l,
        theta_n,
    }
}

/// Per-square labels with the smooth weights that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LSAssignment {
    pub labels: BTreeMap<Square, SquareLabel>,
    pub weights: BTreeMap<Square, ThetaWeights>,
    pub n_max: u32,
}

impl LSAssignment {
    /// Assignment from explicit labels (weights left empty).
    pub fn from_labels(labels: BTreeMap<Square, SquareLabel>) -> Self {
        let n_max = labels
            .values()
            .map(|l| match l {
                SquareLabel::Large(n) => *n,
                SquareLabel::Small => 0,
            })
            .max()
            .unwrap_or(0);
        LSAssignment {
            labels,
            weights: BTreeMap::new(),
            n_max,
        }
    }

    pub fn large_squares(&self) -> BTreeSet<Square> {
        self.labels
            .iter()
            .filter(|(_, l)| matches!(l, SquareLabel::Large(_)))
            .map(|(s, _)| *s)
            .collect()
    }

    pub fn small_squares(&self) -> BTreeSet<Square> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == SquareLabel::Small)
            .map(|(s, _)| *s)
            .collect()
    }

    /// n of an lⁿ square, 0 for s.
    pub fn level(&self, sq: Square) -> u32 {
        match self.labels.get(&sq) {
            Some(SquareLabel::Large(n)) => *n,
            _ => 0,
        }
    }
}

/// Classify each square by λK ||τ_Δ||² against the N^{n/6} windows.
pub fn classify_squares(field: &FieldConfig, params: &ModelParams) -> LSAssignment {
    let lk = params.lambda_k();
    let big_n = params.n_f64();
    let x_max = field.masses.values().fold(0.0f64, |a, &m| a.max(lk * m));
    let nm = n_max(x_max, big_n);
    let mut labels = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for (&sq, &mass) in &field.masses {
        let x = lk * mass;
        let w = theta_weights(x, big_n, nm);
        let label = if x < big_n.powf(1.0 / 6.0) {
            SquareLabel::Small
        } else {
            let best = w
                .theta_n
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k as u32 + 1)
                .unwrap_or(1);
            SquareLabel::Large(best)
        };
        labels.insert(sq, label);
        weights.insert(sq, w);
    }
    LSAssignment {
        labels,
        weights,
        n_max: nm,
    }
}

// ---------------------------------------------------------------------------
// Regions

/// One connectivity component l_i with its corridors γ_i and Γ_i.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub l: BTreeSet<Square>,
    pub gamma: BTreeSet<Square>,
    pub big_gamma: BTreeSet<Square>,
}

/// One e-connectivity component lᵉ_i with Γᵉ_i.
#[derive(Debug, Clone, PartialEq)]
pub struct EComponent {
    pub l: BTreeSet<Square>,
    pub big_gamma_e: BTreeSet<Square>,
}

/// Large-field regions and corridors derived from an assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub corridor_m: f64,
    pub lambda_l: BTreeSet<Square>,
    pub lambda_s: BTreeSet<Square>,
    pub lambda_ln: BTreeMap<u32, BTreeSet<Square>>,
    /// Connected components of Λ_l (closed squares at distance 0).
    pub l_components: Vec<BTreeSet<Square>>,
    /// Subset of the infinite paving.
    pub gamma: BTreeSet<Square>,
    pub big_gamma: BTreeSet<Square>,
    pub big_gamma_e: BTreeSet<Square>,
    pub components: Vec<Component>,
    pub e_components: Vec<EComponent>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = i;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
    fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.0.len() {
            let r = self.find(i);
            map.entry(r).or_default().push(i);
        }
        map.into_values().collect()
    }
}

/// Connected components of a square set under dist = 0.
pub fn touching_components(set: &BTreeSet<Square>) -> Vec<BTreeSet<Square>> {
    let v: Vec<Square> = set.iter().copied().collect();
    let mut uf = UnionFind::new(v.len());
    for a in 0..v.len() {
        for b in a + 1..v.len() {
            if square_distance(v[a], v[b]) == 0.0 {
                uf.union(a, b);
            }
        }
    }
    uf.groups()
        .into_iter()
        .map(|g| g.into_iter().map(|k| v[k]).collect())
        .collect()
}

/// Whether some Δ ∈ Λ has dist(a, Δ) + dist(b, Δ) ≤ bound.
pub fn link_witness(a: Square, b: Square, lattice: &[Square], bound: f64) -> Option<Square> {
    lattice
        .iter()
        .copied()
        .find(|&d| square_distance(a, d) + square_distance(b, d) <= bound + 1e-12)
}

fn squares_within(set: &BTreeSet<Square>, radius: f64, candidates: impl Iterator<Item = Square>) -> BTreeSet<Square> {
    candidates
        .filter(|&c| distance_to_set(c, set) <= radius + 1e-12)
        .collect()
}

/// All squares of the infinite paving within `radius` of a set.
fn plane_squares_within(set: &BTreeSet<Square>, radius: f64) -> BTreeSet<Square> {
    if set.is_empty() {
        return BTreeSet::new();
    }
    let r = radius.ceil() as i64 + 1;
    let (mut lo, mut hi) = ((i64::MAX, i64::MAX), (i64::MIN, i64::MIN));
    for &(i, j) in set {
        lo = (lo.0.min(i), lo.1.min(j));
        hi = (hi.0.max(i), hi.1.max(j));
    }
    let cands = (lo.0 - r..=hi.0 + r).flat_map(move |i| (lo.1 - r..=hi.1 + r).map(move |j| (i, j)));
    squares_within(set, radius, cands)
}

/// Build corridors and components for an assignment.
pub fn build_regions(assignment: &LSAssignment, geometry: &LatticeGeometry, corridor_m: f64) -> Result<RegionSet> {
    if !(corridor_m > 0.0) {
        return Err(Error::param("corridor_m", "must be positive"));
    }
    let lattice = geometry.squares();
    for sq in assignment.labels.keys() {
        if !geometry.contains(*sq) {
            return Err(Error::Dimension(format!("labelled square {sq:?} outside the lattice")));
        }
    }
    let lambda_l = assignment.large_squares();
    let lambda_s: BTreeSet<Square> = lattice.iter().copied().filter(|s| !lambda_l.contains(s)).collect();
    let mut lambda_ln: BTreeMap<u32, BTreeSet<Square>> = BTreeMap::new();
    for &sq in &lambda_l {
        lambda_ln.entry(assignment.level(sq)).or_default().insert(sq);
    }
    let l_components = touching_components(&lambda_l);
    let r = l_components.len();

    let merge = |bound: &dyn Fn(Square, Square) -> f64| -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(r);
        for i in 0..r {
            for j in i + 1..r {
                if uf.find(i) == uf.find(j) {
                    continue;
                }
                let linked = l_components[i].iter().any(|&a| {
                    l_components[j]
                        .iter()
                        .any(|&b| link_witness(a, b, &lattice, bound(a, b)).is_some())
                });
                if linked {
                    uf.union(i, j);
                }
            }
        }
        uf.groups()
    };

    let groups = merge(&|_, _| 2.0 * corridor_m);
    let mut components = Vec::with_capacity(groups.len());
    for g in &groups {
        let l: BTreeSet<Square> = g.iter().flat_map(|&k| l_components[k].iter().copied()).collect();
        let gamma = plane_squares_within(&l, 0.5 * corridor_m);
        let big_gamma = squares_within(&l, corridor_m, lattice.iter().copied());
        components.push(Component { l, gamma, big_gamma });
    }

    let level = |s: Square| assignment.level(s).max(1) as f64;
    let e_groups = merge(&|a, b| (level(a) + level(b)) * corridor_m);
    let mut e_components = Vec::with_capacity(e_groups.len());
    for g in &e_groups {
        let l: BTreeSet<Square> = g.iter().flat_map(|&k| l_components[k].iter().copied()).collect();
        let mut big_gamma_e = BTreeSet::new();
        let mut by_level: BTreeMap<u32, BTreeSet<Square>> = BTreeMap::new();
        for &s in &l {
            by_level.entry(assignment.level(s).max(1)).or_default().insert(s);
        }
        for (n, set) in &by_level {
            big_gamma_e.extend(squares_within(set, *n as f64 * corridor_m, lattice.iter().copied()));
        }
        e_components.push(EComponent { l, big_gamma_e });
    }

    let gamma = components.iter().flat_map(|c| c.gamma.iter().copied()).collect();
    let big_gamma = components.iter().flat_map(|c| c.big_gamma.iter().copied()).collect();
    let big_gamma_e = e_components.iter().flat_map(|c| c.big_gamma_e.iter().copied()).collect();
    Ok(RegionSet {
        corridor_m,
        lambda_l,
        lambda_s,
        lambda_ln,
        l_components,
        gamma,
        big_gamma,
        big_gamma_e,
        components,
        e_components,
    })
}

impl RegionSet {
    /// γ ∩ Λ.
    pub fn gamma_in(&self, geometry: &LatticeGeometry) -> BTreeSet<Square> {
        self.gamma.iter().copied().filter(|s| geometry.contains(*s)).collect()
    }

    /// Smallest distance between γ and Λ − Γ.
    pub fn corridor_gap(&self, geometry: &LatticeGeometry) -> f64 {
        let outside: Vec<Square> = geometry
            .squares()
            .into_iter()
            .filter(|s| !self.big_gamma.contains(s))
            .collect();
        self.gamma
            .iter()
            .map(|&g| distance_to_set(g, &outside))
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV rows: square, label, component index, e-component index.
    pub fn report_csv(&self, assignment: &LSAssignment, geometry: &LatticeGeometry) -> String {
        fn comp_of<'a>(s: Square, mut sets: impl Iterator<Item = &'a BTreeSet<Square>>) -> i64 {
            sets.position(|c| c.contains(&s)).map(|k| k as i64).unwrap_or(-1)
        }
        let mut out = String::from("i,j,label,in_gamma,in_Gamma,in_Gamma_e,component,e_component\n");
        for sq in geometry.squares() {
            let label = assignment.labels.get(&sq).copied().unwrap_or(SquareLabel::Small);
            let c = comp_of(sq, self.components.iter().map(|c| &c.big_gamma));
            let e = comp_of(sq, self.e_components.iter().map(|c| &c.big_gamma_e));
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                sq.0,
                sq.1,
                label,
                self.gamma.contains(&sq) as u8,
                self.big_gamma.contains(&sq) as u8,
                self.big_gamma_e.contains(&sq) as u8,
                c,
                e
            ));
        }
        out
    }
}

/// Both sides of the large-field suppression inequality, in logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionBound {
    /// −(49/100) ∫_{Λ_l} τ².
    pub ln_lhs: f64,
    /// −(1/4) ∫_{Λ_l} τ² − N^{1/8} |Γᵉ| − Σ_{Δ ∈ Λ_{lⁿ}} N^{(n−1)/8}.
    pub ln_rhs: f64,
    /// ln of the product bound e^{−N^{1/8}|Γᵉ|} Π e^{−N^{(n−1)/8}}.
    pub ln_product: f64,
    pub holds: bool,
}

/// Evaluate the per-square large-field suppression bound.
pub fn large_field_suppression(
    assignment: &LSAssignment,
    regions: &RegionSet,
    field: &FieldConfig,
    params: &ModelParams,
) -> SuppressionBound {
    let n = params.n_f64();
    let mass = field.mass_of(&regions.lambda_l);
    let per_square: f64 = regions
        .lambda_l
        .iter()
        .map(|&s| n.powf((assignment.level(s).max(1) as f64 - 1.0) / 8.0))
        .sum();
    let ln_product = -n.powf(0.125) * regions.big_gamma_e.len() as f64 - per_square;
    let ln_lhs = -0.49 * mass;
    let ln_rhs = -0.25 * mass + ln_product;
    SuppressionBound {
        ln_lhs,
        ln_rhs,
        ln_product,
        holds: ln_lhs <= ln_rhs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_values() {
        assert_eq!(smooth_step(-0.3), 0.0);
        assert_eq!(smooth_step(0.3), 1.0);
        assert!((smooth_step(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn distances() {
        assert_eq!(square_distance((0, 0), (1, 1)), 0.0);
        assert_eq!(square_distance((0, 0), (3, 0)), 2.0);
        assert!((square_distance((0, 0), (2, 2)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn layout_positions() {
        let g = LatticeGeometry::new(1, 2).unwrap();
        let l = g.layout();
        assert_eq!(l.num_sites(), 16);
        assert_eq!(l.site_position(0), (-0.75, -0.75));
        assert_eq!(l.square_of_site(15), (0, 0));
        assert_eq!(l.max_displacement(), 3);
    }
}
