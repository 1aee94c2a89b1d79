//! Undirected topologies, privately decomposed coupling weights and the
//! symmetric weight matrix they assemble into.
//!
//! Each edge weight is the product `w_ij = w_{i→j} · w_{j→i}` of two factors
//! drawn independently by the endpoints from the δ-grid in `(0, 1]`. The
//! matrix has zero row sums, so its spectrum is `0 = ρ₁ > ρ₂ ≥ … ≥ ρₙ` when
//! the graph is connected and the consensus operator `I + γW - 11ᵀ/n`
//! contracts at rate `1 - |ρ₂|γ` for `γ ≤ 1/|ρₙ|`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{symmetric_eigen, symmetric_spectral_norm, Matrix};
use crate::quantize::sample_weight_steps;

/// Largest eigenvalue magnitude accepted as the zero eigenvalue.
pub const ZERO_EIGEN_TOL: f64 = 1e-9;
/// `ρ₂` must be below `-SIMPLE_ZERO_TOL` for the zero eigenvalue to be simple.
pub const SIMPLE_ZERO_TOL: f64 = 1e-12;

/// Undirected simple graph on agents `0..n`. Edges are stored as `(i, j)`
/// with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    /// Build from 0-based pairs. Self-loops, duplicates (in either
    /// orientation) and out-of-range endpoints are rejected.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(invalid("topology needs at least one agent"));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Topology(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop on agent {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::Topology(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Self { n, edges: set })
    }

    /// Build from the 1-based edge list used in config files.
    pub fn from_one_based(n: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let zero_based = edges
            .iter()
            .map(|&[a, b]| {
                if a == 0 || b == 0 {
                    Err(Error::Topology("config edges are 1-based".into()))
                } else {
                    Ok((a - 1, b - 1))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, &zero_based)
    }

    pub fn to_one_based(&self) -> Vec<[usize; 2]> {
        self.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect()
    }

    /// Five agents on a ring with the chord 2–4 (1-based).
    pub fn default_five() -> Self {
        Self::from_one_based(5, &[[1, 2], [2, 3], [3, 4], [4, 5], [5, 1], [2, 4]])
            .expect("static topology is valid")
    }

    pub fn agents(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Neighbours of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == i, b == i) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.neighbors(i).len()).max().unwrap_or(0)
    }

    /// Breadth-first reachability from agent 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for u in self.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Random connected graph: a random spanning tree plus each remaining pair
/// with probability `extra_edge_prob`.
pub fn random_connected_topology<R: Rng + ?Sized>(
    n: usize,
    extra_edge_prob: f64,
    rng: &mut R,
) -> Result<Topology> {
    let mut edges = BTreeSet::new();
    for v in 1..n {
        let parent = rng.gen_range(0..v);
        edges.insert((parent, v));
    }
    for a in 0..n {
        for b in a + 1..n {
            if !edges.contains(&(a, b)) && rng.gen::<f64>() < extra_edge_prob {
                edges.insert((a, b));
            }
        }
    }
    Topology::new(n, &edges.into_iter().collect::<Vec<_>>())
}

/// Directed weight factors `w_{i→j} = steps(i→j) · δ`, one per ordered
/// neighbour pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDecomposition {
    delta: f64,
    #[serde(with = "pair_map")]
    steps: BTreeMap<(usize, usize), u32>,
}

mod pair_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        from: usize,
        to: usize,
        steps: u32,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<(usize, usize), u32>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = m
            .iter()
            .map(|(&(from, to), &steps)| Entry { from, to, steps })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(usize, usize), u32>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.from, e.to), e.steps)).collect())
    }
}

impl WeightDecomposition {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            steps: BTreeMap::new(),
        }
    }

    /// Set `w_{from→to} = steps · δ`. `steps` must lie in `1..=⌊1/δ⌋`.
    pub fn set(&mut self, from: usize, to: usize, steps: u32) -> Result<()> {
        let max = crate::quantize::weight_grid_size(self.delta)?;
        if steps == 0 || steps > max {
            return Err(invalid(format!("weight steps {steps} outside 1..={max}")));
        }
        self.steps.insert((from, to), steps);
        Ok(())
    }

    /// Every agent draws its outgoing factor for each incident edge, edges in
    /// ascending order, `i→j` before `j→i`.
    pub fn sample<R: Rng + ?Sized>(topology: &Topology, delta: f64, rng: &mut R) -> Result<Self> {
        let mut d = Self::new(delta);
        for (i, j) in topology.edges() {
            d.steps.insert((i, j), sample_weight_steps(delta, rng)?);
            d.steps.insert((j, i), sample_weight_steps(delta, rng)?);
        }
        Ok(d)
    }

    /// Resample until `1/|ρₙ| ≥ min_gamma_max`, i.e. until the undamped
    /// recursion `I + γW` with `γ ≤ min_gamma_max` is non-expansive.
    pub fn sample_admissible<R: Rng + ?Sized>(
        topology: &Topology,
        delta: f64,
        min_gamma_max: f64,
        max_attempts: usize,
        rng: &mut R,
    ) -> Result<Self> {
        for _ in 0..max_attempts.max(1) {
            let d = Self::sample(topology, delta, rng)?;
            if topology.agents() < 2 {
                return Ok(d);
            }
            let w = build_weight_matrix(topology, &d)?;
            if spectrum(&w)?.gamma_max >= min_gamma_max {
                return Ok(d);
            }
        }
        Err(invalid(format!(
            "no weight draw with 1/|rho_n| >= {min_gamma_max} in {max_attempts} attempts"
        )))
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Grid index of `w_{from→to}`; this is `Q(w_{from→to})` exactly.
    pub fn steps(&self, from: usize, to: usize) -> Option<u32> {
        self.steps.get(&(from, to)).copied()
    }

    pub fn factor(&self, from: usize, to: usize) -> Option<f64> {
        self.steps(from, to).map(|s| f64::from(s) * self.delta)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), u32)> + '_ {
        self.steps.iter().map(|(&k, &v)| (k, v))
    }
}

/// Symmetric coupling matrix with zero row sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    matrix: Matrix,
}

impl WeightMatrix {
    /// Accept an arbitrary matrix after checking symmetry and zero row sums
    /// (to 1e-12). Connectivity is not checked here.
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        if !matrix.is_symmetric() {
            return Err(invalid("weight matrix must be square and symmetric"));
        }
        for i in 0..matrix.rows() {
            let s: f64 = matrix.row(i).iter().sum();
            if s.abs() > 1e-12 {
                return Err(invalid(format!("row {i} sums to {s}, expected 0")));
            }
        }
        Ok(Self { matrix })
    }

    pub fn agents(&self) -> usize {
        self.matrix.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

/// Assemble `W` without the connectivity check.
pub fn assemble_weight_matrix(topology: &Topology, decomposition: &WeightDecomposition) -> Result<WeightMatrix> {
    let n = topology.agents();
    let mut m = Matrix::zeros(n, n);
    for (i, j) in topology.edges() {
        let a = decomposition
            .factor(i, j)
            .ok_or(Error::IncompleteDecomposition { from: i, to: j })?;
        let b = decomposition
            .factor(j, i)
            .ok_or(Error::IncompleteDecomposition { from: j, to: i })?;
        m[(i, j)] = a * b;
        m[(j, i)] = b * a;
    }
    for i in 0..n {
        let row_sum: f64 = topology.neighbors(i).iter().map(|&j| m[(i, j)]).sum();
        m[(i, i)] = -row_sum;
    }
    Ok(WeightMatrix { matrix: m })
}

pub fn build_weight_matrix(topology: &Topology, decomposition: &WeightDecomposition) -> Result<WeightMatrix> {
    let w = assemble_weight_matrix(topology, decomposition)?;
    if !topology.is_connected() {
        return Err(Error::Disconnected);
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// `ρ₁ ≥ ρ₂ ≥ … ≥ ρₙ`.
    pub eigenvalues: Vec<f64>,
    /// Spectral gap `|ρ₂|`.
    pub mu: f64,
    /// Largest admissible attenuation, `1/|ρₙ|`.
    pub gamma_max: f64,
}

pub fn spectrum(w: &WeightMatrix) -> Result<Spectrum> {
    if w.agents() < 2 {
        return Err(invalid("spectrum needs at least two agents"));
    }
    let eigenvalues = symmetric_eigen(&w.matrix)?.values;
    if eigenvalues[0].abs() > ZERO_EIGEN_TOL {
        return Err(invalid(format!(
            "largest eigenvalue {} is not zero; W is not a valid weight matrix",
            eigenvalues[0]
        )));
    }
    let rho2 = eigenvalues[1];
    if rho2 >= -SIMPLE_ZERO_TOL {
        return Err(Error::Disconnected);
    }
    let rho_n = *eigenvalues.last().expect("n >= 2");
    Ok(Spectrum {
        mu: rho2.abs(),
        gamma_max: 1.0 / rho_n.abs(),
        eigenvalues,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    /// `‖I + γW - 11ᵀ/n‖₂` from an eigen-decomposition.
    pub measured: f64,
    /// `1 - μγ`.
    pub predicted: f64,
}

pub fn consensus_operator(w: &WeightMatrix, gamma: f64) -> Matrix {
    let n = w.agents();
    let inv_n = 1.0 / n as f64;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            m[(i, j)] = id + gamma * w.get(i, j) - inv_n;
        }
    }
    m
}

pub fn contraction_norm(w: &WeightMatrix, gamma: f64) -> Result<Contraction> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    let eig = spectrum(w)?;
    if gamma > eig.gamma_max * (1.0 + 1e-12) {
        return Err(Error::OutOfRange {
            value: gamma,
            reason: format!("gamma must not exceed 1/|rho_n| = {}", eig.gamma_max),
        });
    }
    Ok(Contraction {
        measured: symmetric_spectral_norm(&consensus_operator(w, gamma))?,
        predicted: 1.0 - eig.mu * gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_node() -> (Topology, WeightDecomposition) {
        let t = Topology::new(2, &[(0, 1)]).unwrap();
        let mut d = WeightDecomposition::new(0.1);
        d.set(0, 1, 5).unwrap();
        d.set(1, 0, 5).unwrap();
        (t, d)
    }

    fn k3_unit() -> WeightMatrix {
        let t = Topology::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let mut d = WeightDecomposition::new(0.1);
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            d.set(a, b, 10).unwrap();
            d.set(b, a, 10).unwrap();
        }
        build_weight_matrix(&t, &d).unwrap()
    }

    #[test]
    fn two_node_matrix() {
        let (t, d) = two_node();
        let w = build_weight_matrix(&t, &d).unwrap();
        assert_eq!(w.matrix().to_rows(), vec![vec![-0.25, 0.25], vec![0.25, -0.25]]);
    }

    #[test]
    fn k3_unit_factors() {
        let w = k3_unit();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w.get(i, j), if i == j { -2.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn incomplete_decomposition() {
        let (t, mut d) = two_node();
        d.steps.remove(&(1, 0));
        assert!(matches!(
            build_weight_matrix(&t, &d),
            Err(Error::IncompleteDecomposition { from: 1, to: 0 })
        ));
    }

    #[test]
    fn disconnected_topology() {
        let t = Topology::new(4, &[(0, 1), (2, 3)]).unwrap();
        let d = WeightDecomposition::sample(&t, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(build_weight_matrix(&t, &d), Err(Error::Disconnected)));
        let w = assemble_weight_matrix(&t, &d).unwrap();
        assert!(matches!(spectrum(&w), Err(Error::Disconnected)));
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::new(3, &[(0, 0)]).is_err());
        assert!(Topology::new(3, &[(0, 1), (1, 0)]).is_err());
        assert!(Topology::new(3, &[(0, 3)]).is_err());
        assert!(Topology::from_one_based(3, &[[0, 1]]).is_err());
        let t = Topology::default_five();
        assert!(t.is_connected());
        assert_eq!(t.neighbors(1), vec![0, 2, 3]);
        assert_eq!(t.to_one_based().len(), 6);
    }

    #[test]
    fn two_node_spectrum_and_contraction() {
        let (t, d) = two_node();
        let w = build_weight_matrix(&t, &d).unwrap();
        let s = spectrum(&w).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-15);
        assert!((s.eigenvalues[1] + 0.5).abs() < 1e-15);
        assert!((s.mu - 0.5).abs() < 1e-15);
        assert!((s.gamma_max - 2.0).abs() < 1e-14);
        let c = contraction_norm(&w, 1.0).unwrap();
        assert!((c.measured - 0.5).abs() < 1e-12 && (c.predicted - 0.5).abs() < 1e-15);
        assert!(matches!(contraction_norm(&w, 2.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn k3_spectrum() {
        let s = spectrum(&k3_unit()).unwrap();
        assert!((s.eigenvalues[1] + 3.0).abs() < 1e-12);
        assert!((s.eigenvalues[2] + 3.0).abs() < 1e-12);
        assert!((s.mu - 3.0).abs() < 1e-12);
    }

    #[test]
    fn small_gamma_limit() {
        let w = k3_unit();
        let c = contraction_norm(&w, 1e-9).unwrap();
        assert!((c.measured - (1.0 - 3.0e-9)).abs() < 1e-12);
    }

    #[test]
    fn row_sums_vanish_exactly_in_assembly_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t = random_connected_topology(7, 0.4, &mut rng).unwrap();
            let d = WeightDecomposition::sample(&t, 0.1, &mut rng).unwrap();
            let w = build_weight_matrix(&t, &d).unwrap();
            assert!(w.matrix().is_symmetric());
            for i in 0..7 {
                let off: f64 = t.neighbors(i).iter().map(|&j| w.get(i, j)).sum();
                assert_eq!(off + w.get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn combinatorial_and_spectral_connectivity_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let n = rng.gen_range(2..=8);
            let edges: Vec<_> = (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .filter(|_| rng.gen::<f64>() < 0.3)
                .collect();
            let t = Topology::new(n, &edges).unwrap();
            let d = WeightDecomposition::sample(&t, 0.1, &mut rng).unwrap();
            let w = assemble_weight_matrix(&t, &d).unwrap();
            assert_eq!(t.is_connected(), spectrum(&w).is_ok(), "{edges:?}");
        }
    }

    #[test]
    fn admissible_sampling_bounds_the_spectrum() {
        let t = Topology::default_five();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let d = WeightDecomposition::sample_admissible(&t, 0.1, 1.0, 1000, &mut rng).unwrap();
            let s = spectrum(&build_weight_matrix(&t, &d).unwrap()).unwrap();
            assert!(s.gamma_max >= 1.0);
        }
    }

    #[test]
    fn decomposition_serializes() {
        let (_, d) = two_node();
        let json = serde_json::to_string(&d).unwrap();
        let back: WeightDecomposition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }
}
