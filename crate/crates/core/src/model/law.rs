use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NonnegMatrix, NonnegVector};
use crate::{Error, Result};

/// Tolerance on the total mass of a user-supplied atom list.
pub const MASS_TOL: f64 = 1e-9;

/// Sampler for laws without an enumerable support. Implementations write one draw of
/// `(M, Q)` into the row-major matrix buffer `m` and the vector buffer `q`.
pub trait PairSampler: Send + Sync + fmt::Debug {
    fn sample(&self, rng: &mut dyn RngCore, m: &mut [f64], q: &mut [f64]);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "M")]
    pub m: NonnegMatrix,
    #[serde(rename = "Q")]
    pub q: NonnegVector,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    /// `Q` is almost surely constant.
    ConstantQ,
    /// The joint law is the product of its marginals.
    Independent,
    /// General joint atoms.
    Joint,
}

#[derive(Clone)]
pub struct MatrixQLaw {
    name: String,
    d: usize,
    atoms: Option<Arc<[Atom]>>,
    cumulative: Arc<[f64]>,
    sampler: Option<Arc<dyn PairSampler>>,
    dependence: Dependence,
    moment_limit: Option<f64>,
    warnings: Vec<String>,
    hash: String,
}

impl fmt::Debug for MatrixQLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixQLaw")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("atoms", &self.atoms.as_ref().map(|a| a.len()))
            .field("dependence", &self.dependence)
            .field("hash", &self.hash)
            .finish()
    }
}

impl MatrixQLaw {
    /// Finite-support law. Probabilities must be positive and sum to one within
    /// [`MASS_TOL`]; they are renormalized afterwards.
    pub fn from_atoms(name: impl Into<String>, atoms: Vec<Atom>) -> Result<Self> {
        let first = atoms.first().ok_or_else(|| Error::InvalidLaw("empty atom list".into()))?;
        let d = first.m.dim();
        let mut mass = 0.0;
        for (k, a) in atoms.iter().enumerate() {
            if a.m.dim() != d || a.q.dim() != d {
                return Err(Error::InvalidLaw(format!("atom {k} does not have dimension {d}")));
            }
            if !(a.p > 0.0) || !a.p.is_finite() {
                return Err(Error::InvalidLaw(format!("atom {k} has probability {}", a.p)));
            }
            mass += a.p;
        }
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidLaw(format!("probability mass {mass} differs from 1")));
        }
        let mut atoms = atoms;
        for a in atoms.iter_mut() {
            a.p /= mass;
        }
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for a in &atoms {
            acc += a.p;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;

        let dependence = detect_dependence(&atoms);
        let hash = hash_atoms(d, &atoms);
        Ok(Self {
            name: name.into(),
            d,
            atoms: Some(atoms.into()),
            cumulative: cumulative.into(),
            sampler: None,
            dependence,
            moment_limit: None,
            warnings: Vec::new(),
            hash,
        })
    }

    /// Law known only through a sampler. `moment_limit` is the supremum of the `s`
    /// with `E‖M‖^s < ∞` and `E|Q|^s < ∞`, if known.
    pub fn from_sampler(
        name: impl Into<String>,
        d: usize,
        sampler: Arc<dyn PairSampler>,
        dependence: Dependence,
        moment_limit: Option<f64>,
    ) -> Self {
        let name = name.into();
        let mut h = Sha256::new();
        h.update(b"sampler:");
        h.update(name.as_bytes());
        h.update(format!("{sampler:?}").as_bytes());
        Self {
            hash: hex(&h.finalize()),
            name,
            d,
            atoms: None,
            cumulative: Arc::from(Vec::new()),
            sampler: Some(sampler),
            dependence,
            moment_limit,
            warnings: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn atoms(&self) -> Option<&[Atom]> {
        self.atoms.as_deref()
    }

    pub fn require_atoms(&self, what: &'static str) -> Result<&[Atom]> {
        self.atoms().ok_or(Error::NeedsFiniteSupport(what))
    }

    pub fn dependence(&self) -> Dependence {
        self.dependence
    }

    /// `None` when all moments are finite (always the case for finite support).
    pub fn moment_limit(&self) -> Option<f64> {
        self.moment_limit
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Hex SHA-256 of the canonical atom list (name excluded).
    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn with_warning(mut self, w: String) -> Self {
        log::warn!("{}: {w}", self.name);
        self.warnings.push(w);
        self
    }

    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }

    /// Draws one pair into the buffers and returns the atom index for finite-support laws.
    pub fn sample_into<R: RngCore>(&self, rng: &mut R, m: &mut [f64], q: &mut [f64]) -> Option<usize> {
        match (&self.atoms, &self.sampler) {
            (Some(atoms), _) => {
                let k = self.sample_atom(rng);
                m.copy_from_slice(atoms[k].m.as_slice());
                q.copy_from_slice(atoms[k].q.as_slice());
                Some(k)
            }
            (None, Some(s)) => {
                s.sample(rng, m, q);
                None
            }
            (None, None) => unreachable!("law without atoms or sampler"),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        LawConfig::from_json_str(text)?.build()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

fn detect_dependence(atoms: &[Atom]) -> Dependence {
    let q0 = &atoms[0].q;
    if atoms.iter().all(|a| &a.q == q0) {
        return Dependence::ConstantQ;
    }
    let mut ms: Vec<(&NonnegMatrix, f64)> = Vec::new();
    let mut qs: Vec<(&NonnegVector, f64)> = Vec::new();
    for a in atoms {
        match ms.iter_mut().find(|(m, _)| *m == &a.m) {
            Some(e) => e.1 += a.p,
            None => ms.push((&a.m, a.p)),
        }
        match qs.iter_mut().find(|(q, _)| *q == &a.q) {
            Some(e) => e.1 += a.p,
            None => qs.push((&a.q, a.p)),
        }
    }
    let product = ms.iter().all(|(m, pm)| {
        qs.iter().all(|(q, pq)| {
            let joint: f64 = atoms.iter().filter(|a| &a.m == *m && &a.q == *q).map(|a| a.p).sum();
            (joint - pm * pq).abs() <= 1e-12
        })
    });
    if product {
        Dependence::Independent
    } else {
        Dependence::Joint
    }
}

fn hash_atoms(d: usize, atoms: &[Atom]) -> String {
    let mut h = Sha256::new();
    h.update((d as u64).to_le_bytes());
    for a in atoms {
        for x in a.m.as_slice().iter().chain(a.q.as_slice()).chain(std::iter::once(&a.p)) {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Atoms,
    Garch12,
    ScalarAtoms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Entries(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    #[serde(rename = "M")]
    pub m: MatrixSpec,
    #[serde(rename = "Q")]
    pub q: VectorSpec,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub a0: f64,
    pub a1: f64,
    pub b1: f64,
    pub b2: f64,
    /// `(value, probability)` pairs of the law of `Z²`.
    pub z2_atoms: Vec<(f64, f64)>,
}

/// On-disk law description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawConfig {
    pub d: usize,
    pub kind: LawKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<AtomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub garch12: Option<GarchParams>,
}

impl LawConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<MatrixQLaw> {
        let name = self.name.clone().unwrap_or_else(|| "unnamed".into());
        let law = match self.kind {
            LawKind::Garch12 => {
                if self.d != 2 {
                    return Err(Error::InvalidLaw(format!("garch12 laws have d=2, got d={}", self.d)));
                }
                let g = self
                    .garch12
                    .as_ref()
                    .ok_or_else(|| Error::InvalidLaw("kind garch12 needs a \"garch12\" block".into()))?;
                build_law_garch12(g)?
            }
            LawKind::ScalarAtoms | LawKind::Atoms => {
                if self.kind == LawKind::ScalarAtoms && self.d != 1 {
                    return Err(Error::InvalidLaw(format!("scalar_atoms laws have d=1, got d={}", self.d)));
                }
                let atoms = self
                    .atoms
                    .iter()
                    .enumerate()
                    .map(|(k, a)| atom_from_spec(self.d, k, a))
                    .collect::<Result<Vec<_>>>()?;
                MatrixQLaw::from_atoms(name.clone(), atoms)?
            }
        };
        Ok(MatrixQLaw { name, ..law })
    }
}

fn atom_from_spec(d: usize, k: usize, a: &AtomSpec) -> Result<Atom> {
    let bad = |e: Error| Error::InvalidLaw(format!("atom {k}: {e}"));
    let m = match &a.m {
        MatrixSpec::Scalar(x) if d == 1 => NonnegMatrix::scalar(*x).map_err(bad)?,
        MatrixSpec::Scalar(_) => return Err(Error::InvalidLaw(format!("atom {k}: scalar M needs d=1"))),
        MatrixSpec::Rows(rows) => NonnegMatrix::from_rows(rows.clone()).map_err(bad)?,
    };
    let q = match &a.q {
        VectorSpec::Scalar(x) if d == 1 => NonnegVector::new(vec![*x]).map_err(bad)?,
        VectorSpec::Scalar(_) => return Err(Error::InvalidLaw(format!("atom {k}: scalar Q needs d=1"))),
        VectorSpec::Entries(v) => NonnegVector::new(v.clone()).map_err(bad)?,
    };
    if m.dim() != d || q.dim() != d {
        return Err(Error::InvalidLaw(format!("atom {k} does not have dimension {d}")));
    }
    Ok(Atom { m, q, p: a.p })
}

/// One-dimensional law with joint atoms `(m, q, p)`.
pub fn build_law_scalar(atoms: &[(f64, f64, f64)]) -> Result<MatrixQLaw> {
    let atoms = atoms
        .iter()
        .map(|&(m, q, p)| {
            Ok(Atom { m: NonnegMatrix::scalar(m)?, q: NonnegVector::new(vec![q])?, p })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::InvalidLaw(e.to_string()))?;
    MatrixQLaw::from_atoms("scalar", atoms)
}

/// GARCH(1,2) squared-volatility recursion written as `V = M V + Q` with
/// `M = [[b1 + a1 Z², b2], [1, 0]]` and `Q = (a0, 0)`.
///
/// `a1 = 0` and `b1 = 0` are accepted; `a0` and `b2` must be positive (the latter
/// keeps every `M` allowable). Atoms of `Z²` that produce the same matrix are merged.
pub fn build_law_garch12(g: &GarchParams) -> Result<MatrixQLaw> {
    let GarchParams { a0, a1, b1, b2, .. } = *g;
    for (label, v, strict) in [("a0", a0, true), ("a1", a1, false), ("b1", b1, false), ("b2", b2, true)] {
        let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
        if !ok {
            return Err(Error::InvalidLaw(format!("garch12 coefficient {label} = {v}")));
        }
    }
    if g.z2_atoms.is_empty() {
        return Err(Error::InvalidLaw("garch12 needs at least one Z² atom".into()));
    }
    let q = NonnegVector::new(vec![a0, 0.0])?;
    let mut atoms: Vec<Atom> = Vec::new();
    for (k, &(z2, p)) in g.z2_atoms.iter().enumerate() {
        if !(z2 >= 0.0) || !z2.is_finite() {
            return Err(Error::InvalidLaw(format!("Z² atom {k} has value {z2}")));
        }
        let m = NonnegMatrix::from_rows(vec![vec![b1 + a1 * z2, b2], vec![1.0, 0.0]])?;
        match atoms.iter_mut().find(|a| a.m == m) {
            Some(a) => a.p += p,
            None => atoms.push(Atom { m, q: q.clone(), p }),
        }
    }
    let mut law = MatrixQLaw::from_atoms("garch12", atoms)?;
    if a1 + b1 + b2 >= 1.0 {
        law = law.with_warning(format!(
            "a1 + b1 + b2 = {} >= 1; the stationarity condition fails",
            a1 + b1 + b2
        ));
    }
    Ok(law)
}

const BUNDLED: &[(&str, &str)] = &[
    ("golden", include_str!("../../laws/golden.json")),
    ("smooth4", include_str!("../../laws/smooth4.json")),
    ("halfdouble", include_str!("../../laws/halfdouble.json")),
    ("deterministic", include_str!("../../laws/deterministic.json")),
    ("positive2d", include_str!("../../laws/positive2d.json")),
    ("garch12", include_str!("../../laws/garch12.json")),
];

pub fn bundled_law_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Laws shipped with the crate, by name.
pub fn bundled_law(name: &str) -> Result<MatrixQLaw> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Missing(format!("no bundled law named {name:?}")))?;
    MatrixQLaw::from_json_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_builder() {
        let law = build_law_scalar(&[(2.0, 1.0, 0.5), (0.25, 1.0, 0.5)]).unwrap();
        assert_eq!(law.dim(), 1);
        assert_eq!(law.atoms().unwrap().len(), 2);
        assert_eq!(law.dependence(), Dependence::ConstantQ);

        let det = build_law_scalar(&[(2.0, 1.0, 1.0)]).unwrap();
        assert_eq!(det.atoms().unwrap().len(), 1);

        let err = build_law_scalar(&[(2.0, 1.0, 0.6), (0.5, 1.0, 0.5)]).unwrap_err();
        assert!(matches!(err, Error::InvalidLaw(ref s) if s.contains("1.1")), "{err}");
        assert!(build_law_scalar(&[(2.0, 1.0, 1.0), (0.5, 1.0, 0.0)]).is_err());
        assert!(build_law_scalar(&[(-2.0, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn probabilities_are_renormalized() {
        let law = build_law_scalar(&[(2.0, 1.0, 0.5 + 4e-10), (0.5, 1.0, 0.5)]).unwrap();
        let total: f64 = law.atoms().unwrap().iter().map(|a| a.p).sum();
        assert!((total - 1.0).abs() <= 1e-15);
    }

    fn garch(a1: f64, z2: Vec<(f64, f64)>) -> GarchParams {
        GarchParams { a0: 1.0, a1, b1: 0.2, b2: 0.3, z2_atoms: z2 }
    }

    #[test]
    fn garch_substitution() {
        let law = build_law_garch12(&garch(0.1, vec![(1.0, 1.0)])).unwrap();
        let a = &law.atoms().unwrap()[0];
        let want = [0.3, 0.3, 1.0, 0.0];
        for (x, w) in a.m.as_slice().iter().zip(want) {
            assert!((x - w).abs() < 1e-15);
        }
        assert_eq!(a.q.as_slice(), &[1.0, 0.0]);
        assert!(law.warnings().is_empty());

        let law = build_law_garch12(&garch(0.1, vec![(0.0, 0.5), (2.0, 0.5)])).unwrap();
        let atoms = law.atoms().unwrap();
        assert_eq!(atoms.len(), 2);
        assert_eq!(atoms[0].m.get(0, 0), 0.2);
        assert!((atoms[1].m.get(0, 0) - 0.4).abs() < 1e-15);
        for (i, j) in [(0, 1), (1, 0), (1, 1)] {
            assert_eq!(atoms[0].m.get(i, j), atoms[1].m.get(i, j));
        }

        let det = build_law_garch12(&garch(0.0, vec![(0.0, 0.5), (2.0, 0.5)])).unwrap();
        assert_eq!(det.atoms().unwrap().len(), 1);
    }

    #[test]
    fn garch_validation() {
        let mut g = garch(0.1, vec![(1.0, 1.0)]);
        g.b2 = 0.0;
        assert!(build_law_garch12(&g).is_err());
        let mut g = garch(0.1, vec![(1.0, 1.0)]);
        g.a0 = -1.0;
        assert!(build_law_garch12(&g).is_err());
        let mut g = garch(0.6, vec![(1.0, 1.0)]);
        g.b1 = 0.3;
        let law = build_law_garch12(&g).unwrap();
        assert_eq!(law.warnings().len(), 1);
    }

    #[test]
    fn config_parsing() {
        let text = r#"{"d": 1, "kind": "scalar_atoms", "name": "g",
            "atoms": [{"M": 2, "Q": 1, "p": 0.5}, {"M": [[0.25]], "Q": [1], "p": 0.5}]}"#;
        let law = MatrixQLaw::from_json_str(text).unwrap();
        assert_eq!(law.name(), "g");
        assert_eq!(law.atoms().unwrap()[1].m.get(0, 0), 0.25);

        let bad_mass = text.replace("0.5}]", "0.6}]");
        assert!(matches!(MatrixQLaw::from_json_str(&bad_mass), Err(Error::InvalidLaw(_))));

        let err = MatrixQLaw::from_json_str("{\"d\": 1,\n \"kind\": \"bogus\"}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let scalar_in_2d = r#"{"d": 2, "kind": "atoms", "atoms": [{"M": 2, "Q": 1, "p": 1}]}"#;
        assert!(MatrixQLaw::from_json_str(scalar_in_2d).is_err());
    }

    #[test]
    fn hash_ignores_name_and_tracks_content() {
        let a = build_law_scalar(&[(2.0, 1.0, 0.5), (0.25, 1.0, 0.5)]).unwrap();
        let b = bundled_law("golden").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = build_law_scalar(&[(2.0, 1.0, 0.5), (0.5, 1.0, 0.5)]).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn bundled_laws_load() {
        for name in bundled_law_names() {
            let law = bundled_law(name).unwrap();
            assert_eq!(law.name(), name);
        }
        assert!(bundled_law("nope").is_err());
    }

    #[test]
    fn sampling_frequencies() {
        let law = build_law_scalar(&[(2.0, 1.0, 0.25), (0.5, 1.0, 0.75)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let hits = (0..n).filter(|_| law.sample_atom(&mut rng) == 0).count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / n as f64).sqrt());
    }
}
