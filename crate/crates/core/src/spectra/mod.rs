//! Limiting joint spectral laws as finite weighted atom lists.
//!
//! A [`JointSpectrum`] holds atoms `(h, g, weight)` where `h` is an eigenvalue
//! of the (weighted) feature covariance and `g` the signal strength along the
//! matching eigenvector. A [`WeightedSpectrum`] holds `(s, v, r, weight)`
//! triples for the weighted-ridge problem and projects onto a joint spectrum
//! via `(h, g) = (r, s*v/r)`.

mod io;
mod law;
mod recipes;

pub use io::{
    parse_spectrum_json, parse_spectrum_spec, spectrum_to_json, weighted_to_json, SpectrumInput,
    SpectrumSource,
};
pub(crate) use law::apportion;
pub use law::{discretize, Coupling, Law, LawDescriptor, DEFAULT_ATOMS};
pub use recipes::{Recipe, RecipeKind, RECIPE_KEYS};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance on the total probability mass of an atom list.
pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub h: f64,
    pub g: f64,
    pub weight: f64,
}

impl Atom {
    pub fn new(h: f64, g: f64, weight: f64) -> Self {
        Atom { h, g, weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpectrum {
    atoms: Vec<Atom>,
    c_lower: f64,
    c_upper: f64,
    truncated: bool,
}

impl JointSpectrum {
    /// Builds a spectrum whose weights already sum to one within [`WEIGHT_TOL`].
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        validate_atoms(&atoms, false)?;
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidSpectrum(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self::assemble(atoms, false))
    }

    /// Builds a spectrum from positive weights of arbitrary total, rescaling
    /// them to a probability vector.
    pub fn from_unnormalized(mut atoms: Vec<Atom>) -> Result<Self> {
        validate_atoms(&atoms, false)?;
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        for a in &mut atoms {
            a.weight /= total;
        }
        Ok(Self::assemble(atoms, false))
    }

    pub fn point_mass(h: f64, g: f64) -> Result<Self> {
        Self::new(vec![Atom::new(h, g, 1.0)])
    }

    pub fn from_triples(triples: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|t| Atom::new(t[0], t[1], t[2]))
                .collect(),
        )
    }

    fn assemble(atoms: Vec<Atom>, truncated: bool) -> Self {
        let c_lower = atoms.iter().map(|a| a.h).fold(f64::INFINITY, f64::min);
        let c_upper = atoms
            .iter()
            .map(|a| a.h.max(a.g))
            .fold(f64::NEG_INFINITY, f64::max);
        JointSpectrum {
            atoms,
            c_lower,
            c_upper,
            truncated,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Infimum of `h` over the atoms (zero for truncated spectra).
    pub fn c_lower(&self) -> f64 {
        self.c_lower
    }

    /// Supremum of `max(h, g)` over the atoms.
    pub fn c_upper(&self) -> f64 {
        self.c_upper
    }

    /// True when produced by [`truncate_top`](Self::truncate_top) and carrying
    /// atoms at `h = 0`.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// `E[f(h, g)]`, failing on the first atom where `f` is not finite.
    pub fn expect<F: Fn(f64, f64) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (index, a) in self.atoms.iter().enumerate() {
            let value = f(a.h, a.g);
            if !value.is_finite() {
                return Err(Error::Evaluation {
                    index,
                    h: a.h,
                    g: a.g,
                    value,
                });
            }
            acc += a.weight * value;
        }
        Ok(acc)
    }

    /// Unchecked weighted sum used on hot paths; callers check the result.
    pub(crate) fn sum<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(a.h, a.g)).sum()
    }

    pub fn mean_h(&self) -> f64 {
        self.sum(|h, _| h)
    }

    pub fn mean_g(&self) -> f64 {
        self.sum(|_, g| g)
    }

    /// `E[g h]`, the per-coordinate signal energy.
    pub fn mean_gh(&self) -> f64 {
        self.sum(|h, g| g * h)
    }

    /// Conditional means `E[g | h]` grouped on `h` values equal within `tol`,
    /// returned as `(h, E[g|h], mass)` in ascending `h`.
    pub fn conditional_g_means(&self, tol: f64) -> Vec<(f64, f64, f64)> {
        let mut sorted = self.atoms.clone();
        sorted.sort_by(|a, b| a.h.total_cmp(&b.h));
        let mut groups: Vec<(f64, f64, f64)> = Vec::new();
        for a in sorted {
            match groups.last_mut() {
                Some((h, gw, w)) if (a.h - *h).abs() <= tol * h.abs().max(1.0) => {
                    *gw += a.g * a.weight;
                    *w += a.weight;
                }
                _ => groups.push((a.h, a.g * a.weight, a.weight)),
            }
        }
        groups
            .into_iter()
            .map(|(h, gw, w)| (h, gw / w, w))
            .collect()
    }

    /// Keeps the top `theta` fraction of mass by `h` and moves the rest to
    /// `h = 0`, splitting a boundary atom group proportionally.
    pub fn truncate_top(&self, theta: f64) -> Result<Self> {
        let split = self.split_top(theta)?;
        let mut atoms = split.kept;
        atoms.extend(split.dropped.iter().map(|a| Atom::new(0.0, a.g, a.weight)));
        let truncated = !split.dropped.is_empty();
        Ok(Self::assemble(atoms, truncated))
    }

    /// Partition into the top-`theta` mass (kept) and the remainder (dropped,
    /// with original `h` values preserved).
    pub(crate) fn split_top(&self, theta: f64) -> Result<TopSplit> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "theta must lie in (0, 1], got {theta}"
            )));
        }
        let mut sorted = self.atoms.clone();
        sorted.sort_by(|a, b| a.h.total_cmp(&b.h));

        let mut kept = Vec::with_capacity(sorted.len());
        let mut dropped = Vec::new();
        let mut to_drop = 1.0 - theta;
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j].h == sorted[i].h {
                j += 1;
            }
            let group = &sorted[i..j];
            let mass: f64 = group.iter().map(|a| a.weight).sum();
            if to_drop <= 1e-15 {
                kept.extend_from_slice(group);
            } else if to_drop >= mass - 1e-15 {
                dropped.extend_from_slice(group);
                to_drop -= mass;
            } else {
                let frac = to_drop / mass;
                for a in group {
                    dropped.push(Atom::new(a.h, a.g, a.weight * frac));
                    kept.push(Atom::new(a.h, a.g, a.weight * (1.0 - frac)));
                }
                to_drop = 0.0;
            }
            i = j;
        }
        Ok(TopSplit { kept, dropped })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TopSplit {
    pub kept: Vec<Atom>,
    pub dropped: Vec<Atom>,
}

fn validate_atoms(atoms: &[Atom], allow_zero_h: bool) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::InvalidSpectrum("no atoms".into()));
    }
    for (i, a) in atoms.iter().enumerate() {
        if !(a.weight.is_finite() && a.weight > 0.0) {
            return Err(Error::InvalidSpectrum(format!(
                "atom {i}: weight {} must be positive",
                a.weight
            )));
        }
        let h_ok = if allow_zero_h { a.h >= 0.0 } else { a.h > 0.0 };
        if !(a.h.is_finite() && h_ok) {
            return Err(Error::InvalidSpectrum(format!(
                "atom {i}: h = {} must be positive",
                a.h
            )));
        }
        if !(a.g.is_finite() && a.g >= 0.0) {
            return Err(Error::InvalidSpectrum(format!(
                "atom {i}: g = {} must be nonnegative",
                a.g
            )));
        }
    }
    Ok(())
}

/// How two eigenvalue lists are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Aligned,
    Misaligned,
    /// Uniform random permutation drawn from the given seed.
    Random(u64),
}

/// Pairs sorted `d_x` with `d_beta` in the requested order; equal weights.
pub fn relate(d_x: &[f64], d_beta: &[f64], relation: Relation) -> Result<JointSpectrum> {
    if d_x.len() != d_beta.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: d_x has {} entries, d_beta has {}",
            d_x.len(),
            d_beta.len()
        )));
    }
    if d_x.is_empty() {
        return Err(Error::InvalidSpectrum("no atoms".into()));
    }
    let mut xs = d_x.to_vec();
    xs.sort_by(f64::total_cmp);
    let mut bs = d_beta.to_vec();
    bs.sort_by(f64::total_cmp);
    match relation {
        Relation::Aligned => {}
        Relation::Misaligned => bs.reverse(),
        Relation::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            bs.shuffle(&mut rng);
        }
    }
    let w = 1.0 / xs.len() as f64;
    JointSpectrum::from_unnormalized(
        xs.into_iter()
            .zip(bs)
            .map(|(h, g)| Atom::new(h, g, w))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedAtom {
    pub s: f64,
    pub v: f64,
    pub r: f64,
    pub weight: f64,
}

impl WeightedAtom {
    pub fn new(s: f64, v: f64, r: f64, weight: f64) -> Self {
        WeightedAtom { s, v, r, weight }
    }
}

/// Joint law of feature eigenvalue `s`, signal strength `v` and the weighted
/// ratio `r = s / d_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSpectrum {
    atoms: Vec<WeightedAtom>,
}

impl WeightedSpectrum {
    pub fn new(atoms: Vec<WeightedAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidSpectrum("no atoms".into()));
        }
        let mut total = 0.0;
        for (i, a) in atoms.iter().enumerate() {
            for (name, x) in [("s", a.s), ("v", a.v), ("r", a.r), ("weight", a.weight)] {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::InvalidSpectrum(format!(
                        "atom {i}: {name} = {x} must be positive"
                    )));
                }
            }
            total += a.weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidSpectrum(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(WeightedSpectrum { atoms })
    }

    /// Standard ridge (`r = s`) from a joint `(s, v)` spectrum.
    pub fn from_joint(spectrum: &JointSpectrum) -> Result<Self> {
        Self::new(
            spectrum
                .atoms()
                .iter()
                .map(|a| WeightedAtom::new(a.h, a.g, a.h, a.weight))
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[WeightedAtom] {
        &self.atoms
    }

    pub fn r_values(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.r).collect()
    }

    /// Replaces the per-atom `r` values.
    pub fn with_r(&self, r: &[f64]) -> Result<Self> {
        if r.len() != self.atoms.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} r values, got {}",
                self.atoms.len(),
                r.len()
            )));
        }
        Self::new(
            self.atoms
                .iter()
                .zip(r)
                .map(|(a, &r)| WeightedAtom::new(a.s, a.v, r, a.weight))
                .collect(),
        )
    }

    /// Sets `r = f(s, v)` on every atom.
    pub fn map_r<F: Fn(f64, f64) -> f64>(&self, f: F) -> Result<Self> {
        let r: Vec<f64> = self.atoms.iter().map(|a| f(a.s, a.v)).collect();
        self.with_r(&r)
    }

    /// The joint law of `(d_{x/w}, d_{wβ})`, i.e. `(h, g) = (r, s v / r)`.
    pub fn project(&self) -> Result<JointSpectrum> {
        JointSpectrum::new(
            self.atoms
                .iter()
                .map(|a| Atom::new(a.r, a.s * a.v / a.r, a.weight))
                .collect(),
        )
    }

    /// Joint `(s, v)` law, i.e. the standard-ridge projection.
    pub fn signal_spectrum(&self) -> Result<JointSpectrum> {
        JointSpectrum::new(
            self.atoms
                .iter()
                .map(|a| Atom::new(a.s, a.v, a.weight))
                .collect(),
        )
    }

    /// `E[v | s]` per atom, grouping equal `s` within `tol` (relative).
    pub fn conditional_v_means(&self, tol: f64) -> Vec<f64> {
        let mut order: Vec<usize> = (0..self.atoms.len()).collect();
        order.sort_by(|&a, &b| self.atoms[a].s.total_cmp(&self.atoms[b].s));
        let mut out = vec![0.0; self.atoms.len()];
        let mut i = 0;
        while i < order.len() {
            let s0 = self.atoms[order[i]].s;
            let mut j = i;
            let (mut vw, mut w) = (0.0, 0.0);
            while j < order.len() && (self.atoms[order[j]].s - s0).abs() <= tol * s0.abs().max(1.0)
            {
                let a = &self.atoms[order[j]];
                vw += a.v * a.weight;
                w += a.weight;
                j += 1;
            }
            for &k in &order[i..j] {
                out[k] = vw / w;
            }
            i = j;
        }
        out
    }
}

/// Aspect ratio, noise level and limiting spectrum of one regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub gamma: f64,
    pub sigma2: f64,
    pub spectrum: JointSpectrum,
}

impl ModelSpec {
    pub fn new(gamma: f64, sigma2: f64, spectrum: JointSpectrum) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be nonnegative, got {sigma2}"
            )));
        }
        Ok(ModelSpec {
            gamma,
            sigma2,
            spectrum,
        })
    }

    /// Noise level giving signal-to-noise ratio `snr = E[gh] / sigma2`.
    pub fn from_snr(gamma: f64, snr: f64, spectrum: JointSpectrum) -> Result<Self> {
        if !(snr.is_finite() && snr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "snr must be positive, got {snr}"
            )));
        }
        let sigma2 = spectrum.mean_gh() / snr;
        Self::new(gamma, sigma2, spectrum)
    }

    /// `E(x^T β)^2 / (γ σ²) = E[gh] / σ²`.
    pub fn snr(&self) -> Result<f64> {
        if self.sigma2 <= 0.0 {
            return Err(Error::InvalidArgument(
                "snr is undefined for noiseless models".into(),
            ));
        }
        Ok(self.spectrum.mean_gh() / self.sigma2)
    }

    /// Risk of the null estimator, `γ E[gh] + σ²`.
    pub fn null_risk(&self) -> f64 {
        self.gamma * self.spectrum.mean_gh() + self.sigma2
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Self::new(self.gamma, sigma2, self.spectrum.clone())
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(gamma, self.sigma2, self.spectrum.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(a: [f64; 3], b: [f64; 3]) -> JointSpectrum {
        JointSpectrum::from_triples(&[a, b]).unwrap()
    }

    #[test]
    fn expect_point_mass_and_linearity() {
        let s = JointSpectrum::point_mass(1.0, 1.0).unwrap();
        assert_eq!(s.expect(|h, _| h).unwrap(), 1.0);
        let s = two([1.0, 1.0, 0.75], [5.0, 5.0, 0.25]);
        assert!((s.expect(|h, _| h).unwrap() - 2.0).abs() < 1e-15);
        let s = two([1.0, 2.0, 0.5], [3.0, 4.0, 0.5]);
        assert!((s.expect(|h, g| g * h).unwrap() - 7.0).abs() < 1e-15);
    }

    #[test]
    fn expect_reports_offending_atom() {
        let s = two([1.0, 2.0, 0.5], [3.0, 4.0, 0.5]);
        let err = s.expect(|h, _| 1.0 / (h - 3.0)).unwrap_err();
        assert!(matches!(err, Error::Evaluation { index: 1, .. }));
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(JointSpectrum::from_triples(&[[1.0, 1.0, 0.4]]).is_err());
        assert!(JointSpectrum::from_triples(&[[1.0, 1.0, 1.0], [2.0, 1.0, 0.0]]).is_err());
        assert!(JointSpectrum::from_triples(&[[0.0, 1.0, 1.0]]).is_err());
        assert!(JointSpectrum::from_triples(&[[1.0, -1.0, 1.0]]).is_err());
    }

    #[test]
    fn bounds() {
        let s = two([1.0, 4.0, 0.5], [3.0, 2.0, 0.5]);
        assert_eq!(s.c_lower(), 1.0);
        assert_eq!(s.c_upper(), 4.0);
    }

    #[test]
    fn truncate_full_is_identity() {
        let s = two([1.0, 1.0, 0.5], [3.0, 1.0, 0.5]);
        let t = s.truncate_top(1.0).unwrap();
        assert_eq!(t.atoms(), s.atoms());
        assert!(!t.is_truncated());
    }

    #[test]
    fn truncate_median() {
        let s = two([1.0, 1.0, 0.5], [3.0, 1.0, 0.5]);
        let t = s.truncate_top(0.5).unwrap();
        let mut atoms = t.atoms().to_vec();
        atoms.sort_by(|a, b| a.h.total_cmp(&b.h));
        assert_eq!(atoms.len(), 2);
        assert_eq!((atoms[0].h, atoms[0].g), (0.0, 1.0));
        assert!((atoms[0].weight - 0.5).abs() < 1e-15);
        assert_eq!((atoms[1].h, atoms[1].g), (3.0, 1.0));
    }

    #[test]
    fn truncate_at_quarter() {
        let s = two([1.0, 1.0, 0.75], [5.0, 1.0, 0.25]);
        let t = s.truncate_top(0.25).unwrap();
        let zero_mass: f64 = t
            .atoms()
            .iter()
            .filter(|a| a.h == 0.0)
            .map(|a| a.weight)
            .sum();
        assert!((zero_mass - 0.75).abs() < 1e-15);
        assert!(t
            .atoms()
            .iter()
            .any(|a| a.h == 5.0 && (a.weight - 0.25).abs() < 1e-15));
    }

    #[test]
    fn truncate_splits_boundary_atom() {
        let s = two([1.0, 1.0, 0.5], [3.0, 2.0, 0.5]);
        let t = s.truncate_top(0.7).unwrap();
        let live: f64 = t
            .atoms()
            .iter()
            .filter(|a| a.h > 0.0)
            .map(|a| a.weight)
            .sum();
        assert!((live - 0.7).abs() < 1e-12);
        let total: f64 = t.atoms().iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncate_rejects_nonpositive_theta() {
        let s = JointSpectrum::point_mass(1.0, 1.0).unwrap();
        assert!(s.truncate_top(0.0).is_err());
        assert!(s.truncate_top(-0.5).is_err());
        assert!(s.truncate_top(1.5).is_err());
    }

    #[test]
    fn relate_orders() {
        let a = relate(&[1.0, 2.0], &[3.0, 4.0], Relation::Aligned).unwrap();
        let pairs: Vec<_> = a.atoms().iter().map(|x| (x.h, x.g, x.weight)).collect();
        assert_eq!(pairs, vec![(1.0, 3.0, 0.5), (2.0, 4.0, 0.5)]);
        let m = relate(&[2.0, 1.0], &[3.0, 4.0], Relation::Misaligned).unwrap();
        let pairs: Vec<_> = m.atoms().iter().map(|x| (x.h, x.g)).collect();
        assert_eq!(pairs, vec![(1.0, 4.0), (2.0, 3.0)]);
        assert!(relate(&[1.0], &[1.0, 2.0], Relation::Aligned).is_err());
    }

    #[test]
    fn relate_random_is_seeded() {
        let dx: Vec<f64> = (1..=50).map(f64::from).collect();
        let a = relate(&dx, &dx, Relation::Random(7)).unwrap();
        let b = relate(&dx, &dx, Relation::Random(7)).unwrap();
        let c = relate(&dx, &dx, Relation::Random(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn conditional_means_group_equal_h() {
        let s = JointSpectrum::from_triples(&[[1.0, 2.0, 0.25], [1.0, 4.0, 0.25], [2.0, 1.0, 0.5]])
            .unwrap();
        let cm = s.conditional_g_means(1e-12);
        assert_eq!(cm.len(), 2);
        assert!((cm[0].1 - 3.0).abs() < 1e-15);
        assert!((cm[0].2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_projection() {
        let w = WeightedSpectrum::new(vec![
            WeightedAtom::new(2.0, 3.0, 1.0, 0.5),
            WeightedAtom::new(4.0, 1.0, 2.0, 0.5),
        ])
        .unwrap();
        let j = w.project().unwrap();
        assert_eq!(j.atoms()[0].h, 1.0);
        assert_eq!(j.atoms()[0].g, 6.0);
        assert_eq!(j.atoms()[1].g, 2.0);
        // gh is invariant under the choice of r
        let j2 = w.map_r(|s, _| s).unwrap().project().unwrap();
        assert!((j.mean_gh() - j2.mean_gh()).abs() < 1e-15);
    }

    #[test]
    fn snr_round_trip() {
        let s = JointSpectrum::point_mass(1.0, 2.0).unwrap();
        let m = ModelSpec::from_snr(2.0, 4.0, s).unwrap();
        assert!((m.sigma2 - 0.5).abs() < 1e-15);
        assert!((m.snr().unwrap() - 4.0).abs() < 1e-15);
        let noiseless = m.with_sigma2(0.0).unwrap();
        assert!(noiseless.snr().is_err());
    }
}
