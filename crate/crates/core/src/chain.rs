//! Spin-chain models and their restriction to the single-excitation subspace.
//!
//! A chain is described by two symmetric coupling matrices: `jx` (shared by the
//! x and y channels, so the Hamiltonian conserves the excitation number) and
//! `jz`. The interaction Hamiltonian is taken over unordered pairs,
//!
//! ```text
//! H = 1/2 * sum_{m<n} Jx_mn (X_m X_n + Y_m Y_n) + Jz_mn Z_m Z_n
//! ```
//!
//! which places `Jx_mn` on the off-diagonal of the one-excitation block and
//! `1/2 * (sum_{m<l} Jz_ml - 2 * sum_m Jz_nm)` on its diagonal.

use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coupling class of a chain. The matrices are normative; the tag is checked
/// for consistency on construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `jz` is identically zero.
    Xy,
    /// `jz == jx`.
    Heisenberg,
    /// Arbitrary `jz`.
    Xyz,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Xy => "xy",
            ModelKind::Heisenberg => "heisenberg",
            ModelKind::Xyz => "xyz",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xy" => Ok(ModelKind::Xy),
            "heisenberg" => Ok(ModelKind::Heisenberg),
            "xyz" => Ok(ModelKind::Xyz),
            other => Err(Error::Format(format!(
                "unknown model '{other}' (expected xy, heisenberg or xyz)"
            ))),
        }
    }
}

/// Couplings of an N-spin chain in units of the reference coupling J.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    model: ModelKind,
    jx: DMatrix<f64>,
    jz: DMatrix<f64>,
}

fn check_coupling_matrix(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.ncols(),
        });
    }
    for i in 0..n {
        if m[(i, i)] != 0.0 {
            return Err(Error::SelfCoupling { name, site: i + 1 });
        }
        for j in (i + 1)..n {
            if m[(i, j)] != m[(j, i)] {
                return Err(Error::Asymmetric {
                    name,
                    row: i + 1,
                    col: j + 1,
                });
            }
        }
    }
    Ok(())
}

impl ChainSpec {
    pub fn new(model: ModelKind, jx: DMatrix<f64>, jz: DMatrix<f64>) -> Result<Self> {
        let n = jx.nrows();
        if n < 2 {
            return Err(Error::TooFewSpins(n));
        }
        check_coupling_matrix("jx", &jx)?;
        if jz.nrows() != n || jz.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: jz.nrows(),
            });
        }
        check_coupling_matrix("jz", &jz)?;
        match model {
            ModelKind::Xy if jz.iter().any(|&v| v != 0.0) => {
                return Err(Error::ModelMismatch {
                    model: model.to_string(),
                    reason: "jz must vanish".into(),
                })
            }
            ModelKind::Heisenberg if jz != jx => {
                return Err(Error::ModelMismatch {
                    model: model.to_string(),
                    reason: "jz must equal jx".into(),
                })
            }
            _ => {}
        }
        Ok(Self { model, jx, jz })
    }

    /// Nearest-neighbour chain with `bonds[i]` coupling sites `i+1` and `i+2`.
    /// For `Xyz` the z couplings equal the xy couplings; use
    /// [`ChainSpec::nnc_anisotropic`] to set them separately.
    pub fn nnc(model: ModelKind, bonds: &[f64]) -> Result<Self> {
        let zbonds: Vec<f64> = match model {
            ModelKind::Xy => vec![0.0; bonds.len()],
            ModelKind::Heisenberg | ModelKind::Xyz => bonds.to_vec(),
        };
        Self::nnc_anisotropic(model, bonds, &zbonds)
    }

    pub fn nnc_anisotropic(model: ModelKind, xbonds: &[f64], zbonds: &[f64]) -> Result<Self> {
        if xbonds.len() != zbonds.len() {
            return Err(Error::DimensionMismatch {
                expected: xbonds.len(),
                found: zbonds.len(),
            });
        }
        let n = xbonds.len() + 1;
        let mut jx = DMatrix::zeros(n, n);
        let mut jz = DMatrix::zeros(n, n);
        for (i, (&x, &z)) in xbonds.iter().zip(zbonds).enumerate() {
            jx[(i, i + 1)] = x;
            jx[(i + 1, i)] = x;
            jz[(i, i + 1)] = z;
            jz[(i + 1, i)] = z;
        }
        Self::new(model, jx, jz)
    }

    /// Uniformly coupled nearest-neighbour chain with J = 1.
    pub fn uniform(model: ModelKind, n_spins: usize) -> Result<Self> {
        if n_spins < 2 {
            return Err(Error::TooFewSpins(n_spins));
        }
        Self::nnc(model, &vec![1.0; n_spins - 1])
    }

    pub fn n_spins(&self) -> usize {
        self.jx.nrows()
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn jx(&self) -> &DMatrix<f64> {
        &self.jx
    }

    pub fn jz(&self) -> &DMatrix<f64> {
        &self.jz
    }

    /// Coupling between 1-based sites `m` and `n` as `(jx, jz)`.
    pub fn coupling(&self, m: usize, n: usize) -> Result<(f64, f64)> {
        let (i, j) = self.site_pair(m, n)?;
        Ok((self.jx[(i, j)], self.jz[(i, j)]))
    }

    /// True when every nonzero coupling joins adjacent sites.
    pub fn is_nearest_neighbour(&self) -> bool {
        self.first_long_range_bond().is_none()
    }

    fn first_long_range_bond(&self) -> Option<(usize, usize)> {
        let n = self.n_spins();
        for i in 0..n {
            for j in (i + 2)..n {
                if self.jx[(i, j)] != 0.0 || self.jz[(i, j)] != 0.0 {
                    return Some((i + 1, j + 1));
                }
            }
        }
        None
    }

    /// Nearest-neighbour xy bonds, `bonds[i]` joining sites `i+1` and `i+2`.
    pub fn nn_bonds(&self) -> Vec<f64> {
        (0..self.n_spins() - 1).map(|i| self.jx[(i, i + 1)]).collect()
    }

    fn site_pair(&self, m: usize, n: usize) -> Result<(usize, usize)> {
        let size = self.n_spins();
        for site in [m, n] {
            if site == 0 || site > size {
                return Err(Error::SiteOutOfRange { site, n: size });
            }
        }
        if m == n {
            return Err(Error::InvalidArgument(format!(
                "coupling needs two distinct sites, got ({m}, {n})"
            )));
        }
        Ok((m - 1, n - 1))
    }

    fn with_bond(&self, i: usize, j: usize, x: f64, z: f64) -> Self {
        let mut out = self.clone();
        out.jx[(i, j)] = x;
        out.jx[(j, i)] = x;
        out.jz[(i, j)] = z;
        out.jz[(j, i)] = z;
        out
    }
}

/// Real symmetric restriction of the chain Hamiltonian to the N-dimensional
/// one-excitation subspace, basis state `|n>` carrying the excitation at
/// site n.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceHamiltonian {
    matrix: DMatrix<f64>,
}

impl SubspaceHamiltonian {
    /// Wrap a matrix, rejecting non-square or non-symmetric input.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let dev = (&matrix - matrix.transpose()).amax();
        if dev > 1e-12 {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `H + c I`.
    pub fn shifted(&self, c: f64) -> Self {
        let n = self.dim();
        Self {
            matrix: &self.matrix + DMatrix::identity(n, n) * c,
        }
    }
}

pub fn build_subspace_hamiltonian(spec: &ChainSpec) -> SubspaceHamiltonian {
    let n = spec.n_spins();
    let jz = spec.jz();
    let mut h = spec.jx().clone();
    let upper_total: f64 = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| jz[(i, j)])
        .sum();
    for site in 0..n {
        let attached: f64 = jz.row(site).sum();
        h[(site, site)] = 0.5 * (upper_total - 2.0 * attached);
    }
    SubspaceHamiltonian { matrix: h }
}

/// Local, binary perturbation switched by the controller. Sites are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Actuator {
    /// Remove the bond between `m` and `n` in both the xy and z channels.
    SwitchOffCoupling { m: usize, n: usize },
    /// Add `delta` to the xy coupling between `m` and `n`; the z coupling
    /// follows it unless the chain is XY.
    AddCouplingDelta { m: usize, n: usize, delta: f64 },
    /// Add `delta` to the on-site energy of `site`.
    DiagonalShift { site: usize, delta: f64 },
}

impl Default for Actuator {
    fn default() -> Self {
        Actuator::SwitchOffCoupling { m: 1, n: 2 }
    }
}

/// Hamiltonian with the actuator switched on.
pub fn apply_actuator(spec: &ChainSpec, act: &Actuator) -> Result<SubspaceHamiltonian> {
    match *act {
        Actuator::SwitchOffCoupling { m, n } => {
            let (i, j) = spec.site_pair(m, n)?;
            if spec.jx[(i, j)] == 0.0 && spec.jz[(i, j)] == 0.0 {
                log::warn!("actuator switches off coupling ({m}, {n}) which is already zero");
            }
            Ok(build_subspace_hamiltonian(&spec.with_bond(i, j, 0.0, 0.0)))
        }
        Actuator::AddCouplingDelta { m, n, delta } => {
            let (i, j) = spec.site_pair(m, n)?;
            let z = match spec.model {
                ModelKind::Xy => 0.0,
                _ => spec.jz[(i, j)] + delta,
            };
            let perturbed = spec.with_bond(i, j, spec.jx[(i, j)] + delta, z);
            Ok(build_subspace_hamiltonian(&perturbed))
        }
        Actuator::DiagonalShift { site, delta } => {
            let size = spec.n_spins();
            if site == 0 || site > size {
                return Err(Error::SiteOutOfRange { site, n: size });
            }
            let mut h = build_subspace_hamiltonian(spec);
            h.matrix[(site - 1, site - 1)] += delta;
            Ok(h)
        }
    }
}

/// Multiply each nonzero nearest-neighbour bond by `1 + epsilon * xi` with
/// `xi` standard normal, independently per bond.
///
/// One draw is taken per bond in site order (also for zero bonds, so the
/// stream does not depend on which bonds are present). The same factor
/// scales the xy and z couplings of a bond, which keeps the model class.
/// No clipping is applied; large `epsilon` may flip bond signs.
pub fn sample_disordered_chain(base: &ChainSpec, epsilon: f64, seed: u64) -> Result<ChainSpec> {
    if !(epsilon >= 0.0) {
        return Err(Error::NegativeEpsilon(epsilon));
    }
    if let Some((m, n)) = base.first_long_range_bond() {
        return Err(Error::NotNearestNeighbour { m, n });
    }
    if epsilon == 0.0 {
        return Ok(base.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = base.clone();
    for i in 0..base.n_spins() - 1 {
        let xi: f64 = StandardNormal.sample(&mut rng);
        let factor = 1.0 + epsilon * xi;
        let (x, z) = (base.jx[(i, i + 1)], base.jz[(i, i + 1)]);
        if x != 0.0 || z != 0.0 {
            out = out.with_bond(i, i + 1, x * factor, z * factor);
        }
    }
    Ok(out)
}

/// One coupling entry in a chain file; sites are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bond {
    pub m: usize,
    pub n: usize,
    pub j: f64,
}

/// On-disk chain description (TOML).
///
/// ```toml
/// n_spins = 4
/// model = "heisenberg"
/// jx = [ { m = 1, n = 2, j = 1.0 }, { m = 2, n = 3, j = 1.0 }, { m = 3, n = 4, j = 1.0 } ]
/// # jz omitted: zero for xy, copied from jx for heisenberg, required for xyz
/// epsilon = 0.1   # optional disorder applied on load
/// seed = 7        # required when epsilon > 0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub n_spins: usize,
    pub model: ModelKind,
    #[serde(default)]
    pub jx: Vec<Bond>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jz: Option<Vec<Bond>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl ChainFile {
    /// Explicit description of a chain (upper-triangle bonds, no disorder).
    pub fn from_spec(spec: &ChainSpec) -> Self {
        let collect = |m: &DMatrix<f64>| {
            let n = m.nrows();
            let mut bonds = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if m[(i, j)] != 0.0 {
                        bonds.push(Bond {
                            m: i + 1,
                            n: j + 1,
                            j: m[(i, j)],
                        });
                    }
                }
            }
            bonds
        };
        Self {
            n_spins: spec.n_spins(),
            model: spec.model(),
            jx: collect(spec.jx()),
            jz: match spec.model() {
                ModelKind::Xyz => Some(collect(spec.jz())),
                _ => None,
            },
            seed: None,
            epsilon: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("chain file serializes")
    }

    /// Build the chain, applying disorder when `epsilon > 0`.
    pub fn resolve(&self) -> Result<ChainSpec> {
        let n = self.n_spins;
        if n < 2 {
            return Err(Error::TooFewSpins(n));
        }
        let fill = |bonds: &[Bond]| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(n, n);
            for b in bonds {
                for site in [b.m, b.n] {
                    if site == 0 || site > n {
                        return Err(Error::SiteOutOfRange { site, n });
                    }
                }
                if b.m == b.n {
                    return Err(Error::SelfCoupling {
                        name: "bond",
                        site: b.m,
                    });
                }
                m[(b.m - 1, b.n - 1)] = b.j;
                m[(b.n - 1, b.m - 1)] = b.j;
            }
            Ok(m)
        };
        let jx = fill(&self.jx)?;
        let jz = match (&self.jz, self.model) {
            (Some(bonds), _) => fill(bonds)?,
            (None, ModelKind::Xy) => DMatrix::zeros(n, n),
            (None, ModelKind::Heisenberg) => jx.clone(),
            (None, ModelKind::Xyz) => {
                return Err(Error::Format("model xyz requires a jz bond list".into()))
            }
        };
        let spec = ChainSpec::new(self.model, jx, jz)?;
        match self.epsilon {
            Some(eps) if eps != 0.0 => {
                let seed = self
                    .seed
                    .ok_or_else(|| Error::Format("epsilon > 0 requires a seed".into()))?;
                sample_disordered_chain(&spec, eps, seed)
            }
            Some(eps) if eps < 0.0 => Err(Error::NegativeEpsilon(eps)),
            _ => Ok(spec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn uniform_xy_is_tridiagonal() {
        let h = build_subspace_hamiltonian(&ChainSpec::uniform(ModelKind::Xy, 3).unwrap());
        assert_eq!(
            h.matrix(),
            &dmatrix![0.0, 1.0, 0.0; 1.0, 0.0, 1.0; 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn two_site_heisenberg() {
        let h = build_subspace_hamiltonian(&ChainSpec::uniform(ModelKind::Heisenberg, 2).unwrap());
        assert_eq!(h.matrix(), &dmatrix![-0.5, 1.0; 1.0, -0.5]);
    }

    #[test]
    fn zero_couplings_give_zero_matrix() {
        let spec = ChainSpec::nnc(ModelKind::Heisenberg, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(build_subspace_hamiltonian(&spec).matrix(), &DMatrix::zeros(4, 4));
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = dmatrix![0.0, 1.0; 0.5, 0.0];
        assert!(matches!(
            ChainSpec::new(ModelKind::Xyz, asym, DMatrix::zeros(2, 2)),
            Err(Error::Asymmetric { .. })
        ));
        let jx = dmatrix![0.0, 1.0; 1.0, 0.0];
        assert!(matches!(
            ChainSpec::new(ModelKind::Xyz, jx.clone(), DMatrix::zeros(3, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            ChainSpec::new(ModelKind::Xy, jx.clone(), jx.clone()),
            Err(Error::ModelMismatch { .. })
        ));
        assert!(matches!(
            ChainSpec::uniform(ModelKind::Xy, 1),
            Err(Error::TooFewSpins(1))
        ));
    }

    #[test]
    fn switch_off_first_bond() {
        let spec = ChainSpec::uniform(ModelKind::Xy, 3).unwrap();
        let h2 = apply_actuator(&spec, &Actuator::default()).unwrap();
        assert_eq!(
            h2.matrix(),
            &dmatrix![0.0, 0.0, 0.0; 0.0, 0.0, 1.0; 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn switch_off_two_site_heisenberg_leaves_nothing() {
        let spec = ChainSpec::uniform(ModelKind::Heisenberg, 2).unwrap();
        let h2 = apply_actuator(&spec, &Actuator::default()).unwrap();
        assert_eq!(h2.matrix(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn zero_diagonal_shift_is_identity() {
        let spec = ChainSpec::uniform(ModelKind::Heisenberg, 5).unwrap();
        let h1 = build_subspace_hamiltonian(&spec);
        let h2 = apply_actuator(&spec, &Actuator::DiagonalShift { site: 1, delta: 0.0 }).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn actuator_footprint_is_local() {
        let spec = ChainSpec::uniform(ModelKind::Heisenberg, 6).unwrap();
        let h1 = build_subspace_hamiltonian(&spec);
        let cases = [
            (Actuator::SwitchOffCoupling { m: 3, n: 4 }, vec![2, 3]),
            (
                Actuator::AddCouplingDelta {
                    m: 2,
                    n: 3,
                    delta: 0.3,
                },
                vec![1, 2],
            ),
            (Actuator::DiagonalShift { site: 5, delta: 0.7 }, vec![4]),
        ];
        for (act, sites) in cases {
            let h2 = apply_actuator(&spec, &act).unwrap();
            let diff = h2.matrix() - h1.matrix();
            // a z-coupling change also moves every diagonal entry by the same
            // amount through the pair sum (a global phase)
            let outside = (0..6).find(|s| !sites.contains(s)).unwrap();
            let common = diff[(outside, outside)];
            for i in 0..6 {
                for j in 0..6 {
                    let v = if i == j { diff[(i, j)] - common } else { diff[(i, j)] };
                    let allowed = sites.contains(&i) && sites.contains(&j);
                    if !allowed {
                        assert_eq!(v, 0.0, "{act:?} touched ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn actuator_site_range() {
        let spec = ChainSpec::uniform(ModelKind::Xy, 3).unwrap();
        assert!(apply_actuator(&spec, &Actuator::SwitchOffCoupling { m: 3, n: 4 }).is_err());
        assert!(apply_actuator(&spec, &Actuator::DiagonalShift { site: 0, delta: 1.0 }).is_err());
    }

    #[test]
    fn disorder_edge_cases() {
        let base = ChainSpec::uniform(ModelKind::Heisenberg, 10).unwrap();
        assert_eq!(sample_disordered_chain(&base, 0.0, 3).unwrap(), base);
        assert!(matches!(
            sample_disordered_chain(&base, -0.1, 3),
            Err(Error::NegativeEpsilon(_))
        ));
        let a = sample_disordered_chain(&base, 0.1, 42).unwrap();
        let b = sample_disordered_chain(&base, 0.1, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_disordered_chain(&base, 0.1, 43).unwrap());
        assert_eq!(a.jx(), a.jz());
        assert_eq!(a.model(), ModelKind::Heisenberg);
    }

    #[test]
    fn disorder_rejects_long_range() {
        let mut jx = DMatrix::zeros(3, 3);
        jx[(0, 2)] = 1.0;
        jx[(2, 0)] = 1.0;
        let spec = ChainSpec::new(ModelKind::Xy, jx, DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(
            sample_disordered_chain(&spec, 0.1, 0),
            Err(Error::NotNearestNeighbour { m: 1, n: 3 })
        ));
    }

    #[test]
    fn small_disorder_stays_within_five_sigma() {
        let base = ChainSpec::uniform(ModelKind::Xy, 11).unwrap();
        for seed in 0..1000 {
            let chain = sample_disordered_chain(&base, 0.01, seed).unwrap();
            assert!(chain.nn_bonds().iter().all(|b| (b - 1.0).abs() <= 0.05));
        }
    }

    #[test]
    fn chain_file_round_trip() {
        let spec = ChainSpec::nnc_anisotropic(ModelKind::Xyz, &[1.0, 0.9, 1.1], &[0.5, 0.2, 0.0])
            .unwrap();
        let text = ChainFile::from_spec(&spec).to_toml();
        let back = ChainFile::parse(&text).unwrap().resolve().unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn chain_file_with_disorder() {
        let text = r#"
n_spins = 3
model = "heisenberg"
jx = [ { m = 1, n = 2, j = 1.0 }, { m = 2, n = 3, j = 1.0 } ]
epsilon = 0.1
seed = 9
"#;
        let spec = ChainFile::parse(text).unwrap().resolve().unwrap();
        let base = ChainSpec::uniform(ModelKind::Heisenberg, 3).unwrap();
        assert_eq!(spec, sample_disordered_chain(&base, 0.1, 9).unwrap());
        assert!(ChainFile::parse("n_spins = 3\nmodel = \"xy\"\nbogus = 1\n").is_err());
        let no_seed = "n_spins = 2\nmodel = \"xy\"\njx = [{ m = 1, n = 2, j = 1.0 }]\nepsilon = 0.1\n";
        assert!(ChainFile::parse(no_seed).unwrap().resolve().is_err());
    }
}
