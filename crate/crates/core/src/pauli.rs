//! Phased multi-qubit Pauli operators in symplectic form.
//!
//! A [`PauliString`] on `n` qubits is stored as two bit masks `x` and `z`
//! plus a phase exponent `k`, and denotes `i^k · σ(x_0,z_0) ⊗ … ⊗ σ(x_{n-1},z_{n-1})`
//! with `σ(0,0)=I`, `σ(1,0)=X`, `σ(0,1)=Z`, `σ(1,1)=Y`. Qubit 0 is the least
//! significant bit of every mask and of every computational basis index.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// Largest qubit count for which dense matrices are materialised.
pub const DENSE_CAP: usize = 14;

const WORD: usize = 64;

/// Single-qubit Pauli letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// `i^k` for `k` mod 4.
pub fn phase_value(k: u8) -> Complex<f64> {
    match k & 3 {
        0 => Complex::new(1.0, 0.0),
        1 => Complex::new(0.0, 1.0),
        2 => Complex::new(-1.0, 0.0),
        _ => Complex::new(0.0, -1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    phase: u8,
}

fn words_for(n: usize) -> usize {
    n.div_ceil(WORD).max(1)
}

fn popcount(words: impl Iterator<Item = u64>) -> u32 {
    words.map(u64::count_ones).sum()
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        let w = words_for(n);
        PauliString {
            n,
            x: vec![0; w],
            z: vec![0; w],
            phase: 0,
        }
    }

    /// Builds from letters; `letters[q]` acts on qubit `q`.
    pub fn from_letters(letters: &[Pauli]) -> Self {
        let mut p = PauliString::identity(letters.len());
        for (q, &l) in letters.iter().enumerate() {
            p.set(q, l);
        }
        p
    }

    /// A single letter on `qubit`, identity elsewhere.
    pub fn single(n: usize, qubit: usize, letter: Pauli) -> Self {
        let mut p = PauliString::identity(n);
        p.set(qubit, letter);
        p
    }

    /// Builds from `u64` masks; only valid for `n <= 64`.
    pub fn from_masks(n: usize, x: u64, z: u64, phase: u8) -> Result<Self> {
        if n > WORD {
            return Err(Error::validation("from_masks supports at most 64 qubits"));
        }
        let keep = if n == WORD { u64::MAX } else { (1u64 << n) - 1 };
        if x & !keep != 0 || z & !keep != 0 {
            return Err(Error::validation("mask has bits beyond qubit count"));
        }
        Ok(PauliString {
            n,
            x: vec![x],
            z: vec![z],
            phase: phase & 3,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    /// Phase exponent `k` of the prefactor `i^k`.
    pub fn phase_exponent(&self) -> u8 {
        self.phase
    }

    pub fn with_phase(mut self, k: u8) -> Self {
        self.phase = k & 3;
        self
    }

    pub fn is_hermitian(&self) -> bool {
        self.phase.is_multiple_of(2)
    }

    pub fn set(&mut self, qubit: usize, letter: Pauli) {
        assert!(qubit < self.n, "qubit {qubit} out of range for {} qubits", self.n);
        let (xb, zb) = letter.bits();
        let (w, b) = (qubit / WORD, qubit % WORD);
        self.x[w] = (self.x[w] & !(1 << b)) | ((xb as u64) << b);
        self.z[w] = (self.z[w] & !(1 << b)) | ((zb as u64) << b);
    }

    pub fn get(&self, qubit: usize) -> Pauli {
        let (w, b) = (qubit / WORD, qubit % WORD);
        Pauli::from_bits((self.x[w] >> b) & 1 == 1, (self.z[w] >> b) & 1 == 1)
    }

    /// X and Z masks as single words (`n <= 64`).
    pub fn masks(&self) -> (u64, u64) {
        debug_assert!(self.n <= WORD);
        (self.x[0], self.z[0])
    }

    /// Bit mask of qubits carrying a non-identity letter (`n <= 64`).
    pub fn support_mask(&self) -> u64 {
        self.x[0] | self.z[0]
    }

    pub fn weight(&self) -> usize {
        popcount(self.x.iter().zip(&self.z).map(|(a, b)| a | b)) as usize
    }

    pub fn is_identity_up_to_phase(&self) -> bool {
        self.x.iter().chain(&self.z).all(|&w| w == 0)
    }

    fn check_same(&self, other: &PauliString) -> Result<()> {
        if self.n != other.n {
            return Err(Error::dimension(format!(
                "Pauli strings on {} and {} qubits",
                self.n, other.n
            )));
        }
        Ok(())
    }

    /// Operator product `self · other`, phase included.
    pub fn multiply(&self, other: &PauliString) -> Result<PauliString> {
        self.check_same(other)?;
        // σ(x,z) = i^{x·z} X^x Z^z and Z^{z1} X^{x2} = (-1)^{z1·x2} X^{x2} Z^{z1}.
        let mut x = Vec::with_capacity(self.x.len());
        let mut z = Vec::with_capacity(self.z.len());
        let mut k: i64 = self.phase as i64 + other.phase as i64;
        for w in 0..self.x.len() {
            let (x1, z1, x2, z2) = (self.x[w], self.z[w], other.x[w], other.z[w]);
            let (x3, z3) = (x1 ^ x2, z1 ^ z2);
            k += (x1 & z1).count_ones() as i64;
            k += (x2 & z2).count_ones() as i64;
            k += 2 * (z1 & x2).count_ones() as i64;
            k -= (x3 & z3).count_ones() as i64;
            x.push(x3);
            z.push(z3);
        }
        Ok(PauliString {
            n: self.n,
            x,
            z,
            phase: k.rem_euclid(4) as u8,
        })
    }

    /// Inverse operator: same letters, conjugated phase.
    pub fn inverse(&self) -> PauliString {
        PauliString {
            phase: (4 - self.phase) & 3,
            ..self.clone()
        }
    }

    /// Symplectic commutation test.
    pub fn commutes(&self, other: &PauliString) -> Result<bool> {
        self.check_same(other)?;
        let s = popcount(
            (0..self.x.len()).map(|w| (self.x[w] & other.z[w]) ^ (self.z[w] & other.x[w])),
        );
        Ok(s % 2 == 0)
    }

    /// Places this string on qubits `offset..offset+n` of a `total`-qubit register.
    pub fn embed(&self, offset: usize, total: usize) -> Result<PauliString> {
        if offset + self.n > total {
            return Err(Error::dimension(format!(
                "cannot embed {} qubits at offset {offset} into {total}",
                self.n
            )));
        }
        let mut p = PauliString::identity(total);
        for q in 0..self.n {
            p.set(offset + q, self.get(q));
        }
        p.phase = self.phase;
        Ok(p)
    }

    /// Action on a basis state: `P|b⟩ = c |b'⟩`. Requires `n <= 64`.
    #[inline]
    pub fn apply_to_basis(&self, b: usize) -> (usize, Complex<f64>) {
        let (x, z) = (self.x[0], self.z[0]);
        let sign = ((z & b as u64).count_ones() & 1) as u8 * 2;
        let k = self.phase + (x & z).count_ones() as u8 % 4 + sign;
        ((b as u64 ^ x) as usize, phase_value(k))
    }

    /// Dense `2^n × 2^n` matrix.
    pub fn to_matrix(&self) -> Result<DMatrix<Complex<f64>>> {
        Error::check_cap("Pauli dense matrix qubits", self.n, DENSE_CAP)?;
        let dim = 1usize << self.n;
        let mut m = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let (row, c) = self.apply_to_basis(col);
            m[(row, col)] = c;
        }
        Ok(m)
    }
}

impl fmt::Display for PauliString {
    /// Renders as `±[i]P₀P₁…`, qubit 0 first.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.phase {
            0 => "+",
            1 => "+i",
            2 => "-",
            _ => "-i",
        };
        f.write_str(prefix)?;
        for q in 0..self.n {
            write!(f, "{}", self.get(q).as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (mut k, rest) = match s.as_bytes().first() {
            Some(b'+') => (0u8, &s[1..]),
            Some(b'-') => (2u8, &s[1..]),
            _ => (0u8, s),
        };
        let rest = match rest.strip_prefix('i') {
            Some(r) => {
                k += 1;
                r
            }
            None => rest,
        };
        let letters = rest
            .chars()
            .map(|c| match c {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => Err(Error::Parse(format!("unexpected Pauli letter {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if letters.is_empty() {
            return Err(Error::Parse("empty Pauli string".into()));
        }
        Ok(PauliString::from_letters(&letters).with_phase(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn kron(a: &DMatrix<Complex<f64>>, b: &DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> {
        a.kronecker(b)
    }

    fn single(c: char) -> DMatrix<Complex<f64>> {
        let (o, l, i) = (Complex::new(0.0, 0.0), Complex::new(1.0, 0.0), Complex::new(0.0, 1.0));
        match c {
            'I' => DMatrix::from_row_slice(2, 2, &[l, o, o, l]),
            'X' => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
            'Y' => DMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
            'Z' => DMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
            _ => unreachable!(),
        }
    }

    /// Independent Kronecker oracle: qubit 0 is the rightmost factor.
    fn oracle(letters: &str, k: u8) -> DMatrix<Complex<f64>> {
        let mut m = DMatrix::from_element(1, 1, phase_value(k));
        for c in letters.chars() {
            m = kron(&single(c), &m);
        }
        m
    }

    fn close(a: &DMatrix<Complex<f64>>, b: &DMatrix<Complex<f64>>) -> bool {
        (a - b).iter().all(|c| c.norm() < 1e-12)
    }

    #[test]
    fn x_times_z_is_minus_i_y() {
        let r = p("X").multiply(&p("Z")).unwrap();
        assert_eq!(r, p("-iY"));
    }

    #[test]
    fn identity_is_neutral() {
        for s in ["X", "-Y", "+iZ", "-iI"] {
            assert_eq!(p("I").multiply(&p(s)).unwrap(), p(s));
        }
    }

    #[test]
    fn xz_times_zx_is_yy() {
        let r = p("XZ").multiply(&p("ZX")).unwrap();
        assert_eq!(r, p("+YY"));
        let dense = oracle("XZ", 0) * oracle("ZX", 0);
        assert!(close(&dense, &oracle("YY", 0)));
        assert!(close(&r.to_matrix().unwrap(), &dense));
    }

    #[test]
    fn commutation_examples() {
        assert!(!p("X").commutes(&p("Z")).unwrap());
        assert!(p("I").commutes(&p("Y")).unwrap());
        assert!(p("XZ").commutes(&p("ZX")).unwrap());
    }

    #[test]
    fn mismatched_lengths_fail() {
        assert!(matches!(p("X").multiply(&p("XX")), Err(Error::Dimension(_))));
        assert!(matches!(p("X").commutes(&p("XX")), Err(Error::Dimension(_))));
    }

    #[test]
    fn matrix_examples() {
        assert!(close(&p("X").to_matrix().unwrap(), &single('X')));
        let (o, l) = (Complex::new(0.0, 0.0), Complex::new(1.0, 0.0));
        let minus_iy = DMatrix::from_row_slice(2, 2, &[o, -l, l, o]);
        assert!(close(&p("-iY").to_matrix().unwrap(), &minus_iy));
        // qubit 0 carries X: the outer Kronecker factor is Z.
        let xz = p("XZ").to_matrix().unwrap();
        assert!(close(&xz, &kron(&single('Z'), &single('X'))));
    }

    #[test]
    fn dense_cap_enforced() {
        let big = PauliString::identity(DENSE_CAP + 1);
        assert!(matches!(big.to_matrix(), Err(Error::Capacity { .. })));
    }

    #[test]
    fn display_and_parse() {
        assert_eq!(p("-iXZY").to_string(), "-iXZY");
        assert_eq!(p("XZ").to_string(), "+XZ");
        assert!("XQ".parse::<PauliString>().is_err());
        assert!("".parse::<PauliString>().is_err());
    }

    #[test]
    fn wide_strings_cross_word_boundary() {
        let mut a = PauliString::identity(130);
        a.set(3, Pauli::X);
        a.set(100, Pauli::Z);
        let mut b = PauliString::identity(130);
        b.set(100, Pauli::X);
        assert!(!a.commutes(&b).unwrap());
        let c = a.multiply(&b).unwrap();
        assert_eq!(c.get(100), Pauli::Y);
        assert_eq!(c.phase_exponent(), 1);
        assert_eq!(c.weight(), 2);
    }

    fn arb_pauli(n: usize) -> impl Strategy<Value = PauliString> {
        (0u64..(1 << n), 0u64..(1 << n), 0u8..4)
            .prop_map(move |(x, z, k)| PauliString::from_masks(n, x, z, k).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn product_matches_dense(a in arb_pauli(3), b in arb_pauli(3)) {
            let prod = a.multiply(&b).unwrap().to_matrix().unwrap();
            let dense = a.to_matrix().unwrap() * b.to_matrix().unwrap();
            prop_assert!(close(&prod, &dense));
        }

        #[test]
        fn commutes_matches_dense(a in arb_pauli(3), b in arb_pauli(3)) {
            let (ma, mb) = (a.to_matrix().unwrap(), b.to_matrix().unwrap());
            let dense = close(&(&ma * &mb), &(&mb * &ma));
            prop_assert_eq!(a.commutes(&b).unwrap(), dense);
            let (ax, az) = a.masks();
            let (bx, bz) = b.masks();
            let sym = ((ax & bz).count_ones() + (az & bx).count_ones()) % 2 == 0;
            prop_assert_eq!(a.commutes(&b).unwrap(), sym);
        }

        #[test]
        fn associative(a in arb_pauli(4), b in arb_pauli(4), c in arb_pauli(4)) {
            let l = a.multiply(&b).unwrap().multiply(&c).unwrap();
            let r = a.multiply(&b.multiply(&c).unwrap()).unwrap();
            prop_assert_eq!(l, r);
        }

        #[test]
        fn inverse_gives_identity(a in arb_pauli(5)) {
            let id = a.multiply(&a.inverse()).unwrap();
            prop_assert_eq!(id, PauliString::identity(5));
        }

        #[test]
        fn hermitian_iff_real_phase(a in arb_pauli(2)) {
            let m = a.to_matrix().unwrap();
            prop_assert_eq!(close(&m, &m.adjoint()), a.is_hermitian());
            prop_assert!(close(&(&m * m.adjoint()), &DMatrix::identity(4, 4)));
        }

        #[test]
        fn text_round_trip(a in arb_pauli(6)) {
            prop_assert_eq!(a.to_string().parse::<PauliString>().unwrap(), a);
        }
    }
}
