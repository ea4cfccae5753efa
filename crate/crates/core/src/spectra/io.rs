//! JSON serialization and command-line spectrum arguments.

use super::law::{discretize, Law, LawDescriptor};
use super::recipes::Recipe;
use super::{Atom, JointSpectrum, WeightedAtom, WeightedSpectrum};
use crate::error::{Error, Result};

/// Tolerance on the weight total of user-supplied JSON before renormalizing.
const INPUT_WEIGHT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumInput {
    Joint(JointSpectrum),
    Weighted(WeightedSpectrum),
}

impl SpectrumInput {
    /// The `(h, g)` law seen by the risk formulas.
    pub fn joint(&self) -> Result<JointSpectrum> {
        match self {
            SpectrumInput::Joint(j) => Ok(j.clone()),
            SpectrumInput::Weighted(w) => w.project(),
        }
    }

    /// The `(s, v, r)` view; joint spectra are read as standard ridge.
    pub fn weighted(&self) -> Result<WeightedSpectrum> {
        match self {
            SpectrumInput::Joint(j) => WeightedSpectrum::from_joint(j),
            SpectrumInput::Weighted(w) => Ok(w.clone()),
        }
    }
}

pub fn spectrum_to_json(spectrum: &JointSpectrum) -> String {
    let rows: Vec<[f64; 3]> = spectrum
        .atoms()
        .iter()
        .map(|a| [a.h, a.g, a.weight])
        .collect();
    serde_json::to_string(&rows).expect("finite floats serialize")
}

pub fn weighted_to_json(spectrum: &WeightedSpectrum) -> String {
    let rows: Vec<[f64; 4]> = spectrum
        .atoms()
        .iter()
        .map(|a| [a.s, a.v, a.r, a.weight])
        .collect();
    serde_json::to_string(&rows).expect("finite floats serialize")
}

/// Parses `[[h,g,w],...]` or `[[s,v,r,w],...]`.
pub fn parse_spectrum_json(text: &str) -> Result<SpectrumInput> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
    let arity = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidSpectrum("no atoms".into()))?;
    if rows.iter().any(|r| r.len() != arity) {
        return Err(Error::Parse("rows must all have the same length".into()));
    }
    let weight_index = match arity {
        3 => 2,
        4 => 3,
        n => {
            return Err(Error::Parse(format!(
                "rows must have 3 or 4 entries, got {n}"
            )))
        }
    };
    let total: f64 = rows.iter().map(|r| r[weight_index]).sum();
    if !((total - 1.0).abs() <= INPUT_WEIGHT_TOL) {
        return Err(Error::InvalidSpectrum(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    if arity == 3 {
        let atoms = rows.iter().map(|r| Atom::new(r[0], r[1], r[2])).collect();
        if (total - 1.0).abs() <= super::WEIGHT_TOL {
            Ok(SpectrumInput::Joint(JointSpectrum::new(atoms)?))
        } else {
            Ok(SpectrumInput::Joint(JointSpectrum::from_unnormalized(
                atoms,
            )?))
        }
    } else {
        if rows.iter().any(|r| !(r[3] > 0.0)) {
            return Err(Error::InvalidSpectrum("weights must be positive".into()));
        }
        let scale = if (total - 1.0).abs() <= super::WEIGHT_TOL {
            1.0
        } else {
            total
        };
        let mut atoms: Vec<WeightedAtom> = rows
            .iter()
            .map(|r| WeightedAtom::new(r[0], r[1], r[2], r[3] / scale))
            .collect();
        let sum: f64 = atoms.iter().map(|a| a.weight).sum();
        if (sum - 1.0).abs() > super::WEIGHT_TOL {
            for a in &mut atoms {
                a.weight /= sum;
            }
        }
        Ok(SpectrumInput::Weighted(WeightedSpectrum::new(atoms)?))
    }
}

/// Where a `--spectrum` argument points.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumSource {
    Inline(SpectrumInput),
    Recipe(Recipe),
    File(String),
}

fn num(field: &str, arg: &str) -> Result<f64> {
    let x: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad number {field:?} in {arg:?}")))?;
    if !x.is_finite() {
        return Err(Error::Parse(format!("non-finite number in {arg:?}")));
    }
    Ok(x)
}

/// Interprets a spectrum argument without touching the filesystem.
///
/// Accepted forms: `pointmass:h[:g]`, `uniform:a:b[:g]`, a recipe key,
/// inline JSON starting with `[`, or anything else as a file path.
pub fn parse_spectrum_spec(arg: &str, n_atoms: usize) -> Result<SpectrumSource> {
    let arg = arg.trim();
    if arg.starts_with('[') {
        return Ok(SpectrumSource::Inline(parse_spectrum_json(arg)?));
    }
    let fields: Vec<&str> = arg.split(':').collect();
    match fields[0] {
        "pointmass" => {
            let (h, g) = match fields.len() {
                2 => (num(fields[1], arg)?, 1.0),
                3 => (num(fields[1], arg)?, num(fields[2], arg)?),
                _ => {
                    return Err(Error::Parse(format!(
                        "expected pointmass:h[:g], got {arg:?}"
                    )))
                }
            };
            Ok(SpectrumSource::Inline(SpectrumInput::Joint(
                JointSpectrum::point_mass(h, g)?,
            )))
        }
        "uniform" => {
            let (a, b, g) = match fields.len() {
                3 => (num(fields[1], arg)?, num(fields[2], arg)?, 1.0),
                4 => (
                    num(fields[1], arg)?,
                    num(fields[2], arg)?,
                    num(fields[3], arg)?,
                ),
                _ => {
                    return Err(Error::Parse(format!(
                        "expected uniform:a:b[:g], got {arg:?}"
                    )))
                }
            };
            if !(a > 0.0) {
                return Err(Error::InvalidSpectrum(format!(
                    "uniform lower bound must be positive, got {a}"
                )));
            }
            let law = LawDescriptor::Marginal {
                h: Law::uniform(a, b)?,
                g,
            };
            Ok(SpectrumSource::Inline(SpectrumInput::Joint(discretize(
                &law, n_atoms,
            )?)))
        }
        _ => match Recipe::parse(arg) {
            Ok(r) => Ok(SpectrumSource::Recipe(r.with_atoms(n_atoms))),
            Err(e) => {
                if arg.is_empty() {
                    Err(Error::Parse("empty spectrum argument".into()))
                } else if std::path::Path::new(arg).extension().is_some() || arg.contains('/') {
                    Ok(SpectrumSource::File(arg.to_string()))
                } else {
                    Err(e)
                }
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::RECIPE_KEYS;

    #[test]
    fn round_trip_joint() {
        let s = JointSpectrum::from_triples(&[[1.0, 2.0, 0.25], [3.5, 0.1, 0.75]]).unwrap();
        let back = parse_spectrum_json(&spectrum_to_json(&s)).unwrap();
        assert_eq!(back, SpectrumInput::Joint(s));
    }

    #[test]
    fn round_trip_weighted() {
        let w = WeightedSpectrum::new(vec![
            WeightedAtom::new(1.0, 2.0, 0.5, 0.5),
            WeightedAtom::new(3.0, 1.0, 3.0, 0.5),
        ])
        .unwrap();
        let back = parse_spectrum_json(&weighted_to_json(&w)).unwrap();
        assert_eq!(back, SpectrumInput::Weighted(w));
    }

    #[test]
    fn recipes_round_trip() {
        for key in RECIPE_KEYS {
            let s = Recipe::parse(key)
                .unwrap()
                .with_atoms(128)
                .joint_spectrum()
                .unwrap();
            let back = parse_spectrum_json(&spectrum_to_json(&s)).unwrap();
            assert_eq!(back.joint().unwrap(), s, "{key}");
        }
    }

    #[test]
    fn json_errors() {
        assert!(matches!(
            parse_spectrum_json("[[1,2]]"),
            Err(Error::Parse(_))
        ));
        assert!(parse_spectrum_json("[]").is_err());
        assert!(parse_spectrum_json("[[1,1,0.5]]").is_err());
        assert!(parse_spectrum_json("[[1,1,0.5],[1,1,0.5,1]]").is_err());
        assert!(parse_spectrum_json("not json").is_err());
        assert!(parse_spectrum_json("[[0,1,1]]").is_err());
    }

    #[test]
    fn spec_forms() {
        match parse_spectrum_spec("pointmass:2", 16).unwrap() {
            SpectrumSource::Inline(SpectrumInput::Joint(j)) => {
                assert_eq!(j.atoms(), &[Atom::new(2.0, 1.0, 1.0)])
            }
            other => panic!("{other:?}"),
        }
        match parse_spectrum_spec("uniform:1:5", 2).unwrap() {
            SpectrumSource::Inline(SpectrumInput::Joint(j)) => assert_eq!(j.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_spectrum_spec("dc-dc:misaligned", 16).unwrap(),
            SpectrumSource::Recipe(_)
        ));
        assert_eq!(
            parse_spectrum_spec("data/spec.json", 16).unwrap(),
            SpectrumSource::File("data/spec.json".into())
        );
        assert!(matches!(
            parse_spectrum_spec("nonsense", 16),
            Err(Error::UnknownRecipe(_))
        ));
        assert!(parse_spectrum_spec("pointmass:x", 16).is_err());
        assert!(parse_spectrum_spec("uniform:0:1", 16).is_err());
        assert!(parse_spectrum_spec("pointmass:inf", 16).is_err());
    }
}
