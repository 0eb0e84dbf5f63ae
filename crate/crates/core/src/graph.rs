//! Simple graphs, their stabiliser groups and dense graph states.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::dense::{c, is_unitary, kron_registers, CMatrix, CVector, Observable, StateVector};
use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString, DENSE_CAP};

/// Largest vertex count for which the stabiliser group is enumerated.
pub const GROUP_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("graph needs at least one vertex"));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::validation(format!("edge ({u},{v}) out of range for {n} vertices")));
            }
            if u == v {
                return Err(Error::validation(format!("self-loop on vertex {u}")));
            }
            if !set.insert((u.min(v), u.max(v))) {
                return Err(Error::validation(format!("duplicate edge ({u},{v})")));
            }
        }
        Ok(Graph { n, edges: set })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Graph::new(n, [])
    }

    pub fn line(n: usize) -> Result<Self> {
        Graph::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::validation("ring needs at least 3 vertices"));
        }
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    /// Star with centre 0.
    pub fn star(n: usize) -> Result<Self> {
        Graph::new(n, (1..n).map(|i| (0, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Graph::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Edge-list text: first line `n`, then `u v` per line; `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("missing vertex count".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("vertex count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::Parse(format!("expected `u v`, got {line:?}")));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("vertex {s:?}: {e}")))
            };
            edges.push((parse(parts[0])?, parse(parts[1])?));
        }
        Graph::new(n, edges)
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    /// `S_i = X_i ⊗_{j∈N(i)} Z_j` for every vertex.
    pub fn generators(&self) -> Vec<PauliString> {
        (0..self.n)
            .map(|i| {
                let mut p = PauliString::single(self.n, i, Pauli::X);
                for j in self.neighbours(i) {
                    p.set(j, Pauli::Z);
                }
                p
            })
            .collect()
    }

    pub fn stabilizer_group(&self) -> StabilizerGroup {
        StabilizerGroup {
            generators: self.generators(),
        }
    }

    /// Graph state `∏_{(u,v)∈E} CZ_{uv} |+⟩^⊗n`.
    pub fn state_vector(&self) -> Result<StateVector> {
        Error::check_cap("graph state qubits", self.n, DENSE_CAP)?;
        let dim = 1usize << self.n;
        let amp = 1.0 / (dim as f64).sqrt();
        let edge_masks: Vec<usize> = self.edges.iter().map(|&(u, v)| (1 << u) | (1 << v)).collect();
        let v = CVector::from_fn(dim, |b, _| {
            let parity = edge_masks.iter().filter(|&&m| b & m == m).count() % 2;
            c(if parity == 0 { amp } else { -amp }, 0.0)
        });
        StateVector::new(v)
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.n)?;
        for (u, v) in &self.edges {
            writeln!(f, "{u} {v}")?;
        }
        Ok(())
    }
}

impl FromStr for Graph {
    type Err = Error;

    /// Built-in keywords `line:N`, `ring:N`, `star:N`, `complete:N`, `empty:N`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, size) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected `kind:N`, got {s:?}")))?;
        let n: usize = size
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("graph size {size:?}: {e}")))?;
        match kind.trim() {
            "line" => Graph::line(n),
            "ring" => Graph::ring(n),
            "star" => Graph::star(n),
            "complete" => Graph::complete(n),
            "empty" => Graph::empty(n),
            other => Err(Error::Parse(format!("unknown graph kind {other:?}"))),
        }
    }
}

/// The abelian group `⟨S_1, …, S_n⟩`, elements addressed by subset mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizerGroup {
    generators: Vec<PauliString>,
}

impl StabilizerGroup {
    pub fn num_qubits(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[PauliString] {
        &self.generators
    }

    pub fn order(&self) -> usize {
        1usize << self.generators.len()
    }

    /// Product of the generators selected by `mask` (bit `i` selects `S_i`).
    pub fn element(&self, mask: u64) -> PauliString {
        let n = self.generators.len();
        let mut acc = PauliString::identity(n);
        for (i, g) in self.generators.iter().enumerate() {
            if (mask >> i) & 1 == 1 {
                acc = acc.multiply(g).expect("generators share a qubit count");
            }
        }
        acc
    }

    pub fn elements(&self) -> Result<Vec<PauliString>> {
        Error::check_cap("stabiliser group size (qubits)", self.num_qubits(), GROUP_CAP)?;
        Ok((0..self.order() as u64).map(|m| self.element(m)).collect())
    }

    /// `(1/2^n) Σ_{S} S`.
    pub fn projector(&self) -> Result<CMatrix> {
        let n = self.num_qubits();
        Error::check_cap("projector qubits", n, DENSE_CAP)?;
        let dim = 1usize << n;
        let mut acc = CMatrix::zeros(dim, dim);
        for mask in 0..self.order() as u64 {
            let e = self.element(mask);
            for col in 0..dim {
                let (row, ph) = e.apply_to_basis(col);
                acc[(row, col)] += ph;
            }
        }
        Ok(acc / c(dim as f64, 0.0))
    }
}

/// Per-qubit single-qubit unitaries.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRotation {
    factors: Vec<CMatrix>,
}

pub fn hadamard() -> CMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_row_slice(2, 2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)])
}

impl LocalRotation {
    pub fn new(factors: Vec<CMatrix>) -> Result<Self> {
        for (q, f) in factors.iter().enumerate() {
            if f.nrows() != 2 || f.ncols() != 2 {
                return Err(Error::validation(format!("factor {q} is not 2×2")));
            }
            if !is_unitary(f, 1e-12) {
                return Err(Error::validation(format!("factor {q} is not unitary")));
            }
        }
        Ok(LocalRotation { factors })
    }

    pub fn identity(n: usize) -> Self {
        LocalRotation {
            factors: vec![CMatrix::identity(2, 2); n],
        }
    }

    /// Hadamard on the listed qubits, identity elsewhere.
    pub fn hadamard_on(n: usize, qubits: &[usize]) -> Self {
        let mut r = LocalRotation::identity(n);
        for &q in qubits {
            r.factors[q] = hadamard();
        }
        r
    }

    /// Maps the star graph (centre 0) onto GHZ.
    pub fn ghz_from_star(n: usize) -> Self {
        LocalRotation::hadamard_on(n, &(1..n).collect::<Vec<_>>())
    }

    /// Maps the complete graph onto GHZ: undo local complementation at vertex 0,
    /// then Hadamard the leaves of the resulting star.
    pub fn ghz_from_complete(n: usize) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // exp(+iπ/4 X) on the centre, exp(-iπ/4 Z) on the others.
        let centre = CMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(0.0, s), c(0.0, s), c(s, 0.0)]);
        let leaf_phase = CMatrix::from_row_slice(2, 2, &[c(s, -s), c(0.0, 0.0), c(0.0, 0.0), c(s, s)]);
        let leaf = hadamard() * leaf_phase;
        let mut factors = vec![leaf; n];
        factors[0] = centre;
        LocalRotation { factors }
    }

    pub fn num_qubits(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[CMatrix] {
        &self.factors
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        Error::check_cap("rotation qubits", self.factors.len(), DENSE_CAP)?;
        Ok(kron_registers(&self.factors))
    }

    /// `U P U†`, kept as a Pauli string whenever every factor maps to a signed Pauli.
    pub fn conjugate(&self, p: &PauliString) -> Result<Observable> {
        let n = p.num_qubits();
        if n != self.factors.len() {
            return Err(Error::dimension("rotation and Pauli differ in qubit count"));
        }
        let mut out = PauliString::identity(n).with_phase(p.phase_exponent());
        let mut pauli_form = true;
        for q in 0..n {
            let letter = p.get(q);
            if letter == Pauli::I {
                continue;
            }
            let u = &self.factors[q];
            let single = PauliString::from_letters(&[letter]).to_matrix()?;
            let rotated = u * single * u.adjoint();
            match recognise_pauli(&rotated) {
                Some((l, sign)) => {
                    out.set(q, l);
                    if sign < 0 {
                        out = out.clone().with_phase(out.phase_exponent() + 2);
                    }
                }
                None => {
                    pauli_form = false;
                    break;
                }
            }
        }
        if pauli_form {
            return Observable::pauli(out);
        }
        let u = self.to_matrix()?;
        Observable::dense(&u * p.to_matrix()? * u.adjoint())
    }
}

fn recognise_pauli(m: &CMatrix) -> Option<(Pauli, i8)> {
    for l in [Pauli::X, Pauli::Y, Pauli::Z] {
        let p = PauliString::from_letters(&[l]).to_matrix().ok()?;
        for sign in [1i8, -1] {
            let diff = m - &p * c(sign as f64, 0.0);
            if diff.iter().all(|z| z.norm() < 1e-12) {
                return Some((l, sign));
            }
        }
    }
    None
}

/// Rotated target state and rotated generators.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedTarget {
    pub state: StateVector,
    pub generators: Vec<Observable>,
}

/// `(⊗U)|G⟩` together with `U S_i U†`.
pub fn rotated_target(g: &Graph, rot: &LocalRotation) -> Result<RotatedTarget> {
    if rot.num_qubits() != g.num_vertices() {
        return Err(Error::dimension("rotation and graph differ in size"));
    }
    let u = rot.to_matrix()?;
    let state = StateVector::normalized(&u * g.state_vector()?.into_amplitudes())?;
    let generators = g
        .generators()
        .iter()
        .map(|s| rot.conjugate(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(RotatedTarget { state, generators })
}

/// `(|0…0⟩ + |1…1⟩)/√2`.
pub fn ghz_state(n: usize) -> StateVector {
    let dim = 1usize << n;
    let mut v = CVector::zeros(dim);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    v[0] = c(a, 0.0);
    v[dim - 1] = c(a, 0.0);
    StateVector::new(v).expect("normalised by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::max_abs;

    fn builtin(n_max: usize) -> Vec<Graph> {
        let mut gs = vec![Graph::empty(1).unwrap()];
        for n in 2..=n_max {
            gs.push(Graph::line(n).unwrap());
            gs.push(Graph::star(n).unwrap());
            gs.push(Graph::complete(n).unwrap());
            if n >= 3 {
                gs.push(Graph::ring(n).unwrap());
            }
        }
        gs
    }

    fn strs(ps: &[PauliString]) -> Vec<String> {
        ps.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn generator_examples() {
        assert_eq!(strs(&Graph::line(2).unwrap().generators()), ["+XZ", "+ZX"]);
        assert_eq!(strs(&Graph::empty(1).unwrap().generators()), ["+X"]);
        assert_eq!(
            strs(&Graph::complete(3).unwrap().generators()),
            ["+XZZ", "+ZXZ", "+ZZX"]
        );
    }

    #[test]
    fn invalid_graphs() {
        assert!(Graph::new(2, [(0, 0)]).is_err());
        assert!(Graph::new(2, [(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(2, [(0, 2)]).is_err());
        assert!(Graph::new(0, []).is_err());
        assert!("ring:2".parse::<Graph>().is_err());
        assert!("torus:4".parse::<Graph>().is_err());
    }

    #[test]
    fn edge_list_parsing() {
        let g = Graph::parse_edge_list("# triangle\n3\n0 1\n1 2 # last\n\n0 2\n").unwrap();
        assert_eq!(g, Graph::complete(3).unwrap());
        assert_eq!(Graph::parse_edge_list(&g.to_string()).unwrap(), g);
        assert!(Graph::parse_edge_list("2\n0 1 2\n").is_err());
        assert!(Graph::parse_edge_list("").is_err());
    }

    #[test]
    fn keyword_parsing() {
        assert_eq!("star:4".parse::<Graph>().unwrap().neighbours(0), vec![1, 2, 3]);
        assert_eq!("ring:4".parse::<Graph>().unwrap().edges().count(), 4);
    }

    #[test]
    fn group_elements() {
        let k2 = Graph::line(2).unwrap().stabilizer_group();
        assert_eq!(k2.element(0), PauliString::identity(2));
        assert_eq!(k2.element(0b11).to_string(), "+YY");
        // The triangle group contains -XXX.
        let tri = Graph::complete(3).unwrap().stabilizer_group();
        assert_eq!(tri.element(0b111).to_string(), "-XXX");
        for g in builtin(5) {
            let els = g.stabilizer_group().elements().unwrap();
            let distinct: std::collections::HashSet<_> =
                els.iter().map(|p| p.clone().with_phase(0)).collect();
            assert_eq!(distinct.len(), 1 << g.num_vertices());
            assert!(els.iter().all(|e| e.is_hermitian()));
        }
    }

    #[test]
    fn state_vector_examples() {
        let plus = Graph::empty(1).unwrap().state_vector().unwrap();
        assert_eq!(plus, StateVector::plus(1));
        let k2 = Graph::line(2).unwrap().state_vector().unwrap();
        let expected = [0.5, 0.5, 0.5, -0.5];
        for (a, e) in k2.amplitudes().iter().zip(expected) {
            assert!((a - c(e, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn stabiliser_equations_hold_for_whole_group() {
        for g in builtin(6) {
            let psi = g.state_vector().unwrap();
            for e in g.stabilizer_group().elements().unwrap() {
                let out = e.to_matrix().unwrap() * psi.amplitudes();
                assert!((out - psi.amplitudes()).norm() < 1e-12, "{g} {e}");
            }
        }
    }

    #[test]
    fn generators_commute() {
        for g in builtin(6) {
            let gens = g.generators();
            for a in &gens {
                for b in &gens {
                    assert!(a.commutes(b).unwrap());
                }
            }
        }
    }

    #[test]
    fn projector_matches_outer_product() {
        let plus = Graph::empty(1).unwrap().stabilizer_group().projector().unwrap();
        assert!(max_abs(&(plus - CMatrix::from_element(2, 2, c(0.5, 0.0)))) < 1e-15);
        for g in builtin(6) {
            let p = g.stabilizer_group().projector().unwrap();
            let psi = g.state_vector().unwrap();
            assert!(max_abs(&(&p - psi.projector())) < 1e-10);
            assert!((p.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_rotation_is_trivial() {
        let g = Graph::ring(4).unwrap();
        let t = rotated_target(&g, &LocalRotation::identity(4)).unwrap();
        assert_eq!(t.state, g.state_vector().unwrap());
        let gens: Vec<Observable> = g.generators().into_iter().map(Observable::Pauli).collect();
        assert_eq!(t.generators, gens);
    }

    #[test]
    fn star_with_leaf_hadamards_is_ghz() {
        for n in 2..=5 {
            let t = rotated_target(&Graph::star(n).unwrap(), &LocalRotation::ghz_from_star(n)).unwrap();
            assert!((t.state.inner(&ghz_state(n)).norm() - 1.0).abs() < 1e-12);
            let mut names: Vec<String> = t
                .generators
                .iter()
                .map(|o| match o {
                    Observable::Pauli(p) => p.to_string(),
                    Observable::Dense(_) => panic!("Clifford rotation must stay Pauli"),
                })
                .collect();
            names.sort();
            let mut expected = vec![format!("+{}", "X".repeat(n))];
            for i in 1..n {
                let mut s = vec!['I'; n];
                s[0] = 'Z';
                s[i] = 'Z';
                expected.push(format!("+{}", s.iter().collect::<String>()));
            }
            expected.sort();
            assert_eq!(names, expected);
            for o in &t.generators {
                let v = o.apply_vec(t.state.amplitudes());
                assert!((v - t.state.amplitudes()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn complete_graph_route_reaches_ghz() {
        for n in 2..=5 {
            let g = Graph::complete(n).unwrap();
            let t = rotated_target(&g, &LocalRotation::ghz_from_complete(n)).unwrap();
            let overlap = t.state.inner(&ghz_state(n)).norm();
            assert!((overlap - 1.0).abs() < 1e-12, "n={n} overlap={overlap}");
            for o in &t.generators {
                let v = o.apply_vec(t.state.amplitudes());
                assert!((v - t.state.amplitudes()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn non_clifford_rotation_gives_dense_stabilisers() {
        let th = 0.3f64;
        let ry = CMatrix::from_row_slice(
            2,
            2,
            &[c(th.cos(), 0.0), c(-th.sin(), 0.0), c(th.sin(), 0.0), c(th.cos(), 0.0)],
        );
        let rot = LocalRotation::new(vec![ry.clone(), CMatrix::identity(2, 2), ry]).unwrap();
        let t = rotated_target(&Graph::line(3).unwrap(), &rot).unwrap();
        assert!(t.generators.iter().any(|o| matches!(o, Observable::Dense(_))));
        for o in &t.generators {
            let v = o.apply_vec(t.state.amplitudes());
            assert!((v - t.state.amplitudes()).norm() < 1e-12);
        }
        let bad = CMatrix::identity(2, 2) * c(2.0, 0.0);
        assert!(LocalRotation::new(vec![bad]).is_err());
    }
}
