//! Continuous and discrete marginal laws and their quantile discretization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Atom, JointSpectrum};
use crate::error::{Error, Result};

pub const DEFAULT_ATOMS: usize = 2048;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Quantile of `|a|` for `a ~ N(0, 1)`.
fn folded_quantile(q: f64) -> f64 {
    std_normal().inverse_cdf(0.5 * (1.0 + q))
}

/// A one-dimensional law on the positive reals.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `(value, probability)` pairs.
    Discrete(Vec<(f64, f64)>),
    /// `min(u² + shift, cap)` with `u ~ N(0, 1)`.
    CappedSquaredNormal {
        shift: f64,
        cap: f64,
    },
    /// `|a| + shift` with `a ~ N(0, 1)`.
    FoldedNormal {
        shift: f64,
    },
    /// `1/|a| + shift` with `a ~ N(0, 1)`.
    InverseFoldedNormal {
        shift: f64,
    },
}

/// A quantile interval `[lo, hi]` on which the law is either constant or
/// continuous and strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    lo: f64,
    hi: f64,
    constant: Option<f64>,
}

impl Law {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "uniform bounds must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(Law::Uniform { lo, hi })
    }

    pub fn discrete(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty discrete law".into()));
        }
        let total: f64 = points.iter().map(|p| p.1).sum();
        if points.iter().any(|p| !(p.1 > 0.0) || !p.0.is_finite()) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "discrete law needs finite values and positive probabilities summing to 1".into(),
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Law::Discrete(points))
    }

    pub fn quantile(&self, q: f64) -> f64 {
        match self {
            Law::Uniform { lo, hi } => lo + q * (hi - lo),
            Law::Discrete(points) => {
                let mut acc = 0.0;
                for &(v, p) in points {
                    acc += p;
                    if q <= acc {
                        return v;
                    }
                }
                points[points.len() - 1].0
            }
            Law::CappedSquaredNormal { shift, cap } => {
                let u = folded_quantile(q);
                (u * u + shift).min(*cap)
            }
            Law::FoldedNormal { shift } => shift + folded_quantile(q),
            Law::InverseFoldedNormal { shift } => shift + 1.0 / folded_quantile(1.0 - q),
        }
    }

    fn pieces(&self) -> Vec<Piece> {
        match self {
            Law::Discrete(points) => {
                let mut out = Vec::with_capacity(points.len());
                let mut acc = 0.0;
                for (i, &(v, p)) in points.iter().enumerate() {
                    let hi = if i + 1 == points.len() { 1.0 } else { acc + p };
                    out.push(Piece {
                        lo: acc,
                        hi,
                        constant: Some(v),
                    });
                    acc += p;
                }
                out
            }
            Law::CappedSquaredNormal { shift, cap } if cap > shift => {
                let t = (cap - shift).sqrt();
                let q = 2.0 * std_normal().cdf(t) - 1.0;
                vec![
                    Piece {
                        lo: 0.0,
                        hi: q,
                        constant: None,
                    },
                    Piece {
                        lo: q,
                        hi: 1.0,
                        constant: Some(*cap),
                    },
                ]
            }
            Law::CappedSquaredNormal { cap, .. } => vec![Piece {
                lo: 0.0,
                hi: 1.0,
                constant: Some(*cap),
            }],
            _ => vec![Piece {
                lo: 0.0,
                hi: 1.0,
                constant: None,
            }],
        }
    }

    fn constant_on(&self, lo: f64, hi: f64) -> Option<f64> {
        let mid = 0.5 * (lo + hi);
        self.pieces()
            .into_iter()
            .find(|p| p.lo <= mid && mid <= p.hi)
            .and_then(|p| p.constant)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.pieces().iter().map(|p| p.hi).collect()
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Law::Discrete(_))
    }

    /// One i.i.d. draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Law::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            Law::Discrete(_) => self.quantile(rng.random::<f64>()),
            Law::CappedSquaredNormal { shift, cap } => {
                let u: f64 = StandardNormal.sample(rng);
                (u * u + shift).min(*cap)
            }
            Law::FoldedNormal { shift } => {
                let a: f64 = StandardNormal.sample(rng);
                shift + a.abs()
            }
            Law::InverseFoldedNormal { shift } => {
                let a: f64 = StandardNormal.sample(rng);
                shift + 1.0 / a.abs()
            }
        }
    }

    /// `p` values: exact proportions for discrete laws, i.i.d. draws otherwise.
    pub fn finite_values<R: Rng + ?Sized>(&self, p: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Law::Discrete(points) => {
                let probs: Vec<f64> = points.iter().map(|x| x.1).collect();
                let counts = apportion(&probs, p);
                points
                    .iter()
                    .zip(counts)
                    .flat_map(|(&(v, _), c)| std::iter::repeat(v).take(c))
                    .collect()
            }
            _ => (0..p).map(|_| self.sample(rng)).collect(),
        }
    }
}

/// Largest-remainder apportionment of `total` items by probabilities.
pub(crate) fn apportion(probs: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// How the `g` quantile is tied to the `h` quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Comonotone: both at quantile `q`.
    Aligned,
    /// Antitone: `g` at quantile `1 - q`.
    Misaligned,
    /// Independent: `g` replaced by its mean.
    Independent,
}

/// A law on `(h, g)` that can be discretized.
#[derive(Debug, Clone, PartialEq)]
pub enum LawDescriptor {
    /// Random `h` with constant `g`.
    Marginal {
        h: Law,
        g: f64,
    },
    Coupled {
        h: Law,
        g: Law,
        coupling: Coupling,
    },
    /// `h = |a| + shift`, `g = E[(a + b/2)² + 1 | h] = (h - shift)² + 5/4`.
    FoldedSignal {
        shift: f64,
    },
    /// `h = 1/|a| + shift`, `g = 1/(h - shift)² + 5/4`.
    InverseFoldedSignal {
        shift: f64,
    },
}

/// Sorted, deduplicated quantile breakpoints including 0 and 1.
fn merge_breaks(mut b: Vec<f64>) -> Vec<f64> {
    b.push(0.0);
    b.push(1.0);
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    b
}

/// Midpoint-quantile atoms on `[lo, hi]`, roughly proportional to its length.
fn midpoints(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let k = ((n as f64) * (hi - lo)).round().max(1.0) as usize;
    let w = (hi - lo) / k as f64;
    (0..k).map(|j| (lo + (j as f64 + 0.5) * w, w)).collect()
}

/// Deterministic `n_atoms`-point approximation of a law.
///
/// Continuous stretches of the quantile function get equal-weight atoms at
/// midpoint quantiles; flat stretches (point masses) stay exact atoms.
pub fn discretize(law: &LawDescriptor, n_atoms: usize) -> Result<JointSpectrum> {
    if n_atoms == 0 {
        return Err(Error::InvalidArgument("n_atoms must be positive".into()));
    }
    let atoms = match law {
        LawDescriptor::Marginal { h, g } => {
            let mut atoms = Vec::new();
            for w in merge_breaks(h.breakpoints()).windows(2) {
                let (lo, hi) = (w[0], w[1]);
                if let Some(c) = h.constant_on(lo, hi) {
                    atoms.push(Atom::new(c, *g, hi - lo));
                } else {
                    for (q, wt) in midpoints(lo, hi, n_atoms) {
                        atoms.push(Atom::new(h.quantile(q), *g, wt));
                    }
                }
            }
            atoms
        }
        LawDescriptor::Coupled {
            h,
            g,
            coupling: Coupling::Independent,
        } => {
            let g_mean = discretize(
                &LawDescriptor::Marginal {
                    h: g.clone(),
                    g: 0.0,
                },
                n_atoms,
            )?
            .mean_h();
            return discretize(
                &LawDescriptor::Marginal {
                    h: h.clone(),
                    g: g_mean,
                },
                n_atoms,
            );
        }
        LawDescriptor::Coupled { h, g, coupling } => {
            let flip = *coupling == Coupling::Misaligned;
            let gq = |q: f64| if flip { 1.0 - q } else { q };
            let mut breaks = h.breakpoints();
            breaks.extend(g.breakpoints().into_iter().map(gq));
            let mut atoms = Vec::new();
            for w in merge_breaks(breaks).windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let hc = h.constant_on(lo, hi);
                let gc = if flip {
                    g.constant_on(1.0 - hi, 1.0 - lo)
                } else {
                    g.constant_on(lo, hi)
                };
                match (hc, gc) {
                    (Some(hv), Some(gv)) => atoms.push(Atom::new(hv, gv, hi - lo)),
                    _ => {
                        for (q, wt) in midpoints(lo, hi, n_atoms) {
                            let hv = hc.unwrap_or_else(|| h.quantile(q));
                            let gv = gc.unwrap_or_else(|| g.quantile(gq(q)));
                            atoms.push(Atom::new(hv, gv, wt));
                        }
                    }
                }
            }
            atoms
        }
        LawDescriptor::FoldedSignal { shift } => {
            let h = Law::FoldedNormal { shift: *shift };
            midpoints(0.0, 1.0, n_atoms)
                .into_iter()
                .map(|(q, w)| {
                    let s = h.quantile(q);
                    Atom::new(s, (s - shift).powi(2) + 1.25, w)
                })
                .collect()
        }
        LawDescriptor::InverseFoldedSignal { shift } => {
            let h = Law::InverseFoldedNormal { shift: *shift };
            midpoints(0.0, 1.0, n_atoms)
                .into_iter()
                .map(|(q, w)| {
                    let s = h.quantile(q);
                    Atom::new(s, (s - shift).powi(-2) + 1.25, w)
                })
                .collect()
        }
    };
    JointSpectrum::from_unnormalized(atoms)
}
