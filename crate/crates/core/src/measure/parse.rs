use std::path::Path;

use super::{Atom, DensityFamily, LambdaMeasure};
use crate::error::{Error, Result};

/// Parses a measure spec such as `atom:0:0.3+density:uniform:1.0`.
///
/// ```text
/// spec    := term ('+' term)*
/// term    := 'atom:' loc ':' mass | 'density:' family
/// family  := 'uniform:' mass | 'log_gamma:' gamma | 'beta:' a ':' b ':' mass | 'table:' file-path
/// ```
pub fn parse_measure(spec: &str) -> Result<LambdaMeasure> {
    let mut atom0 = 0.0;
    let mut atom1 = 0.0;
    let mut atoms: Vec<Atom> = Vec::new();
    let mut densities = Vec::new();

    let mut offset = 0;
    for term in spec.split('+') {
        let start = offset;
        offset += term.len() + 1;
        let fields = split_fields(term, start);
        let (head, head_pos) = fields[0];
        match head {
            "atom" => {
                expect_arity(&fields, 3, term, start)?;
                let loc = number(fields[1])?;
                let mass = number(fields[2])?;
                if !(0.0..=1.0).contains(&loc) {
                    return Err(Error::InvalidMeasure(format!(
                        "atom location {loc} outside [0,1]"
                    )));
                }
                positive_mass(mass)?;
                if loc == 0.0 {
                    atom0 += mass;
                } else if loc == 1.0 {
                    atom1 += mass;
                } else {
                    atoms.push(Atom {
                        location: loc,
                        mass,
                    });
                }
            }
            "density" => {
                let family = fields
                    .get(1)
                    .ok_or_else(|| syntax(start + term.len(), "expected density family"))?;
                match family.0 {
                    "uniform" => {
                        expect_arity(&fields, 3, term, start)?;
                        let mass = number(fields[2])?;
                        positive_mass(mass)?;
                        densities.push(DensityFamily::Uniform { mass });
                    }
                    "log_gamma" => {
                        expect_arity(&fields, 3, term, start)?;
                        densities.push(DensityFamily::LogGamma {
                            gamma: number(fields[2])?,
                        });
                    }
                    "beta" => {
                        expect_arity(&fields, 5, term, start)?;
                        let (a, b, mass) =
                            (number(fields[2])?, number(fields[3])?, number(fields[4])?);
                        positive_mass(mass)?;
                        densities.push(DensityFamily::beta(a, b, mass)?);
                    }
                    "table" => {
                        // The path is everything after `table:` and may itself contain ':'.
                        let prefix = "density:table:";
                        let path = term
                            .strip_prefix(prefix)
                            .filter(|p| !p.is_empty())
                            .ok_or_else(|| {
                                syntax(
                                    start + term.len(),
                                    "expected file path after `density:table:`",
                                )
                            })?;
                        densities.push(DensityFamily::table_from_file(Path::new(path))?);
                    }
                    other => {
                        return Err(syntax(
                            family.1,
                            &format!("unknown density family `{other}`"),
                        ))
                    }
                }
            }
            "" => return Err(syntax(head_pos, "empty term")),
            other => {
                return Err(syntax(
                    head_pos,
                    &format!("expected `atom` or `density`, found `{other}`"),
                ))
            }
        }
    }
    if atoms.windows(2).any(|w| w[0].location == w[1].location)
        || atoms
            .iter()
            .enumerate()
            .any(|(i, a)| atoms[..i].iter().any(|b| b.location == a.location))
    {
        return Err(Error::InvalidMeasure(
            "duplicate interior atom location".into(),
        ));
    }
    LambdaMeasure::new(atom0, atom1, atoms, densities, spec)
}

fn split_fields(term: &str, start: usize) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut pos = start;
    for f in term.split(':') {
        out.push((f, pos));
        pos += f.len() + 1;
    }
    out
}

fn expect_arity(fields: &[(&str, usize)], n: usize, term: &str, start: usize) -> Result<()> {
    match fields.len().cmp(&n) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Less => Err(syntax(
            start + term.len(),
            &format!("expected {n} ':'-separated fields"),
        )),
        std::cmp::Ordering::Greater => Err(syntax(fields[n].1, "unexpected extra field")),
    }
}

fn number((text, pos): (&str, usize)) -> Result<f64> {
    let ok = !text.is_empty()
        && text
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    match text.parse::<f64>() {
        Ok(x) if ok && x.is_finite() => Ok(x),
        _ => Err(syntax(
            pos,
            &format!("expected a decimal number, found `{text}`"),
        )),
    }
}

fn positive_mass(mass: f64) -> Result<()> {
    if mass > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidMeasure(format!(
            "mass must be positive, got {mass}"
        )))
    }
}

fn syntax(pos: usize, msg: &str) -> Error {
    Error::Syntax {
        pos,
        msg: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_atoms() {
        let m = parse_measure("atom:0.5:1.0").unwrap();
        assert_eq!(
            m.interior_atoms(),
            &[Atom {
                location: 0.5,
                mass: 1.0
            }]
        );
        let k = parse_measure("atom:0:1.0").unwrap();
        assert_eq!(k.atom_at_zero(), 1.0);
        assert_eq!(k.total_mass(), 1.0);
    }

    #[test]
    fn parses_families() {
        let m = parse_measure("density:log_gamma:1.5").unwrap();
        assert_eq!(m.densities(), &[DensityFamily::LogGamma { gamma: 1.5 }]);
        let m = parse_measure("atom:0:0.3+density:uniform:1.0").unwrap();
        assert!((m.total_mass() - 1.3).abs() < 1e-10);
        let m = parse_measure("density:beta:2:3:0.5").unwrap();
        assert!((m.total_mass() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn parses_table_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# edge,value\n0.25,2\n1,1").unwrap();
        let m = parse_measure(&format!("density:table:{}", f.path().display())).unwrap();
        assert!((m.total_mass() - 1.25).abs() < 1e-10);
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse_measure("atom:0.5:1.0+dens:uniform:1") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 13),
            other => panic!("{other:?}"),
        }
        match parse_measure("atom:0.5:x") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 9),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_measure("atom:0.5"),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            parse_measure("density:weird:1"),
            Err(Error::Syntax { pos: 8, .. })
        ));
        assert!(matches!(
            parse_measure("atom:0.5:inf"),
            Err(Error::Syntax { .. })
        ));
    }

    #[test]
    fn semantic_errors() {
        assert!(matches!(
            parse_measure("atom:1.5:1"),
            Err(Error::InvalidMeasure(_))
        ));
        assert!(matches!(
            parse_measure("atom:0.5:-1"),
            Err(Error::InvalidMeasure(_))
        ));
        assert!(matches!(
            parse_measure("atom:0.5:0"),
            Err(Error::InvalidMeasure(_))
        ));
        assert!(matches!(
            parse_measure("atom:0.5:1+atom:0.5:2"),
            Err(Error::InvalidMeasure(_))
        ));
        assert!(matches!(
            parse_measure("density:beta:-1:2:1"),
            Err(Error::InvalidMeasure(_))
        ));
    }
}
