//! Built-in spectrum constructions keyed by name.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::law::{discretize, Coupling, Law, LawDescriptor, DEFAULT_ATOMS};
use super::{Atom, JointSpectrum, WeightedAtom, WeightedSpectrum};
use crate::error::{Error, Result};

pub const RECIPE_KEYS: [&str; 12] = [
    "dc-dc",
    "dc-ct",
    "ct-ct",
    "ct-dc",
    "fig4-twopoint",
    "fig5-left",
    "fig5-right",
    "fig6-left",
    "fig6-right",
    "fig7-aligned",
    "fig7-misaligned",
    "fig7-other",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecipeKind {
    DcDc,
    DcCt,
    CtCt,
    CtDc,
    Fig4TwoPoint,
    Fig5Left,
    Fig5Right,
    Fig6Left,
    Fig6Right,
    Fig7Aligned,
    Fig7Misaligned,
    Fig7Other,
}

impl RecipeKind {
    pub fn key(self) -> &'static str {
        RECIPE_KEYS[self as usize]
    }

    fn from_key(key: &str) -> Option<Self> {
        use RecipeKind::*;
        const ALL: [RecipeKind; 12] = [
            DcDc,
            DcCt,
            CtCt,
            CtDc,
            Fig4TwoPoint,
            Fig5Left,
            Fig5Right,
            Fig6Left,
            Fig6Right,
            Fig7Aligned,
            Fig7Misaligned,
            Fig7Other,
        ];
        ALL.into_iter().find(|k| k.key() == key)
    }
}

/// A named construction plus its parameters.
///
/// `coupling` pairs the two marginals of the four `dc`/`ct` recipes and of
/// `fig5-left`; the remaining recipes define `d_beta` as a function of `d_x`
/// and ignore it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub kind: RecipeKind,
    pub coupling: Coupling,
    /// Exponent in `v = s^alpha` for `fig4-twopoint`.
    pub alpha: f64,
    pub n_atoms: usize,
}

const HERMITE_NODES: usize = 8;

/// Nodes and weights of the `k`-point Gauss-Hermite rule for `N(0, 1)`.
pub(crate) fn hermite_nodes(k: usize) -> Vec<(f64, f64)> {
    let jacobi = nalgebra::DMatrix::<f64>::from_fn(k, k, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut nodes: Vec<(f64, f64)> = (0..k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes
}

const TWO_POINT: [(f64, f64); 2] = [(1.0, 0.75), (5.0, 0.25)];
const FIG7_X: [(f64, f64); 3] = [
    (1.0, 4.0 / 11.0),
    (1.0 / 50.0, 4.0 / 11.0),
    (1.0 / 2500.0, 3.0 / 11.0),
];
const FIG7_OTHER: [[f64; 3]; 3] = [
    [2.0, 2.0 / 3.0, 0.2],
    [0.2, 1.1 / 3.0, 0.6],
    [0.2, 0.2 / 3.0, 0.2],
];

impl Recipe {
    pub fn new(kind: RecipeKind) -> Self {
        Recipe {
            kind,
            coupling: Coupling::Aligned,
            alpha: 1.0,
            n_atoms: DEFAULT_ATOMS,
        }
    }

    /// Parses `name` or `name:aligned|misaligned|independent`.
    pub fn parse(key: &str) -> Result<Self> {
        let (name, rel) = match key.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (key, None),
        };
        let kind =
            RecipeKind::from_key(name).ok_or_else(|| Error::UnknownRecipe(key.to_string()))?;
        let mut recipe = Recipe::new(kind);
        if let Some(rel) = rel {
            recipe.coupling = match rel {
                "aligned" => Coupling::Aligned,
                "misaligned" => Coupling::Misaligned,
                "independent" | "random" => Coupling::Independent,
                _ => return Err(Error::UnknownRecipe(key.to_string())),
            };
        }
        Ok(recipe)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_atoms(mut self, n_atoms: usize) -> Self {
        self.n_atoms = n_atoms;
        self
    }

    pub fn key(&self) -> String {
        match self.coupling {
            Coupling::Aligned => self.kind.key().to_string(),
            Coupling::Misaligned => format!("{}:misaligned", self.kind.key()),
            Coupling::Independent => format!("{}:independent", self.kind.key()),
        }
    }

    /// `(d_x law, d_beta law)` for the recipes built from two marginals.
    fn marginals(&self) -> Option<(Law, Law)> {
        let d = |pts: &[(f64, f64)]| Law::Discrete(pts.to_vec());
        let u = |lo, hi| Law::Uniform { lo, hi };
        Some(match self.kind {
            RecipeKind::DcDc => (
                d(&[(1.0, 0.25), (3.0, 0.25), (5.0, 0.25), (7.0, 0.25)]),
                d(&[(1.0, 0.75), (8.0, 0.25)]),
            ),
            RecipeKind::DcCt => (d(&[(1.0, 0.5), (8.0, 0.5)]), u(1.0, 8.0)),
            RecipeKind::CtCt => (
                u(1.0, 5.0),
                Law::CappedSquaredNormal {
                    shift: 1.0,
                    cap: 5.0,
                },
            ),
            RecipeKind::CtDc => (u(1.0, 8.0), d(&[(1.0, 0.5), (7.0, 0.5)])),
            RecipeKind::Fig5Left => (
                d(&[(1.0, 0.25), (2.0, 0.25), (3.0, 0.25), (4.0, 0.25)]),
                d(&[(1.0, 0.75), (5.0, 0.25)]),
            ),
            _ => return None,
        })
    }

    /// `d_beta` as a function of `d_x` for the deterministic recipes.
    fn beta_of_x(&self, x: f64) -> f64 {
        match self.kind {
            RecipeKind::Fig4TwoPoint => x.powf(self.alpha),
            RecipeKind::Fig5Right => x * x,
            RecipeKind::Fig7Aligned => 18.0 / 5.0 * x,
            RecipeKind::Fig7Misaligned => 4.0 / 9.0 / x,
            _ => unreachable!("no functional relation for {:?}", self.kind),
        }
    }

    /// Limiting `(s, v)` law for `Σ_w = I`, so `h = d_x` and `g = d_beta`
    /// (or `E[d_beta | d_x]` for the dependent `fig6` constructions).
    pub fn joint_spectrum(&self) -> Result<JointSpectrum> {
        if let Some((h, g)) = self.marginals() {
            return discretize(
                &LawDescriptor::Coupled {
                    h,
                    g,
                    coupling: self.coupling,
                },
                self.n_atoms,
            );
        }
        let from_x = |pts: &[(f64, f64)]| {
            JointSpectrum::from_unnormalized(
                pts.iter()
                    .map(|&(x, w)| Atom::new(x, self.beta_of_x(x), w))
                    .collect(),
            )
        };
        match self.kind {
            RecipeKind::Fig4TwoPoint | RecipeKind::Fig5Right => from_x(&TWO_POINT),
            RecipeKind::Fig7Aligned | RecipeKind::Fig7Misaligned => from_x(&FIG7_X),
            RecipeKind::Fig7Other => JointSpectrum::from_triples(&FIG7_OTHER),
            RecipeKind::Fig6Left => {
                discretize(&LawDescriptor::FoldedSignal { shift: 5.0 }, self.n_atoms)
            }
            RecipeKind::Fig6Right => discretize(
                &LawDescriptor::InverseFoldedSignal { shift: 2.0 },
                self.n_atoms,
            ),
            _ => unreachable!(),
        }
    }

    /// The law as `(s, v, r = s)` triples.
    ///
    /// For `fig6` the second Gaussian `b` is integrated on Gauss-Hermite
    /// nodes, so `v` keeps its spread given `s` rather than collapsing to
    /// `E[v|s]`.
    pub fn weighted_spectrum(&self) -> Result<WeightedSpectrum> {
        let (shift, inverse) = match self.kind {
            RecipeKind::Fig6Left => (5.0, false),
            RecipeKind::Fig6Right => (2.0, true),
            _ => return WeightedSpectrum::from_joint(&self.joint_spectrum()?),
        };
        let nodes = hermite_nodes(HERMITE_NODES);
        let n_s = (self.n_atoms / HERMITE_NODES).max(1);
        let law = if inverse {
            Law::InverseFoldedNormal { shift }
        } else {
            Law::FoldedNormal { shift }
        };
        let mut atoms = Vec::with_capacity(n_s * HERMITE_NODES);
        for j in 0..n_s {
            let q = (j as f64 + 0.5) / n_s as f64;
            let s = law.quantile(q);
            let a = if inverse {
                1.0 / (s - shift)
            } else {
                s - shift
            };
            for &(b, w) in &nodes {
                // |a| is folded; the sign of a is independent of b, so use both
                for sign in [1.0, -1.0] {
                    let v = (sign * a + b / 2.0).powi(2) + 1.0;
                    atoms.push(WeightedAtom::new(s, v, s, 0.5 * w / n_s as f64));
                }
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        for a in &mut atoms {
            a.weight /= total;
        }
        WeightedSpectrum::new(atoms)
    }

    /// Finite-dimensional diagonals `(d_x, d_beta)` of length `p`.
    ///
    /// Discrete marginals use exact proportions; continuous ones are drawn
    /// i.i.d. The `fig6` constructions draw `(s, v)` jointly.
    pub fn finite_design<R: Rng + ?Sized>(
        &self,
        p: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if p == 0 {
            return Err(Error::InvalidArgument("p must be positive".into()));
        }
        if let Some((hx, gb)) = self.marginals() {
            let mut dx = hx.finite_values(p, rng);
            let mut db = gb.finite_values(p, rng);
            dx.sort_by(f64::total_cmp);
            db.sort_by(f64::total_cmp);
            match self.coupling {
                Coupling::Aligned => {}
                Coupling::Misaligned => db.reverse(),
                Coupling::Independent => db.shuffle(rng),
            }
            return Ok((dx, db));
        }
        let exact =
            |pts: &[(f64, f64)], rng: &mut R| Law::Discrete(pts.to_vec()).finite_values(p, rng);
        let pair = |dx: Vec<f64>| {
            let db = dx.iter().map(|&x| self.beta_of_x(x)).collect();
            (dx, db)
        };
        Ok(match self.kind {
            RecipeKind::Fig4TwoPoint | RecipeKind::Fig5Right => pair(exact(&TWO_POINT, rng)),
            RecipeKind::Fig7Aligned | RecipeKind::Fig7Misaligned => pair(exact(&FIG7_X, rng)),
            RecipeKind::Fig7Other => {
                let counts = super::law::apportion(&[0.2, 0.6, 0.2], p);
                let mut dx = Vec::with_capacity(p);
                let mut db = Vec::with_capacity(p);
                for (t, c) in FIG7_OTHER.iter().zip(counts) {
                    dx.extend(std::iter::repeat(t[0]).take(c));
                    db.extend(std::iter::repeat(t[1]).take(c));
                }
                (dx, db)
            }
            RecipeKind::Fig6Left | RecipeKind::Fig6Right => {
                let mut dx = Vec::with_capacity(p);
                let mut db = Vec::with_capacity(p);
                for _ in 0..p {
                    let a: f64 = StandardNormal.sample(rng);
                    let b: f64 = StandardNormal.sample(rng);
                    let s = if self.kind == RecipeKind::Fig6Left {
                        a.abs() + 5.0
                    } else {
                        1.0 / a.abs() + 2.0
                    };
                    dx.push(s);
                    db.push((a + b / 2.0).powi(2) + 1.0);
                }
                (dx, db)
            }
            _ => unreachable!(),
        })
    }
}
