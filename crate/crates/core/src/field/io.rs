//! Text format for coefficient fields.
//!
//! ```text
//! basisfit-coefficients 1
//! layout row-major
//! problem laplace-peanut
//! domain {"shape":{"kind":"disk","center":[0.0,0.0],"radius":1.0}}
//! fields 1
//! field u
//! axes x y
//! transform identity
//! dims 2
//! dim chebyshev 3 -1.0000000000000000e0 1.0000000000000000e0
//! dim chebyshev 3 -1.0000000000000000e0 1.0000000000000000e0
//! values 9
//! 1.0000000000000000e0
//! ...
//! end
//! ```
//!
//! `problem` and `domain` are optional. Numbers use 17 significant digits.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use super::{CoefficientField, FieldError, OutputTransform};
use crate::basis::{BasisFamily, BasisSpec1D, TensorBasisSpec};
use crate::geometry::DomainSpec;

pub const FORMAT_HEADER: &str = "basisfit-coefficients 1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedField {
    pub name: String,
    pub axes: Vec<String>,
    pub field: CoefficientField,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientFile {
    pub problem: Option<String>,
    pub domain: Option<DomainSpec>,
    pub fields: Vec<NamedField>,
}

impl CoefficientFile {
    pub fn field(&self, name: &str) -> Option<&NamedField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FORMAT_HEADER}").unwrap();
        writeln!(s, "layout row-major").unwrap();
        if let Some(p) = &self.problem {
            writeln!(s, "problem {p}").unwrap();
        }
        if let Some(d) = &self.domain {
            writeln!(s, "domain {}", serde_json::to_string(d).expect("domain serializes")).unwrap();
        }
        writeln!(s, "fields {}", self.fields.len()).unwrap();
        for nf in &self.fields {
            let f = &nf.field;
            writeln!(s, "field {}", nf.name).unwrap();
            writeln!(s, "axes {}", nf.axes.join(" ")).unwrap();
            writeln!(s, "transform {}", f.transform().name()).unwrap();
            writeln!(s, "dims {}", f.spec().ndim()).unwrap();
            for d in &f.spec().dims {
                writeln!(
                    s,
                    "dim {} {} {:.16e} {:.16e}",
                    d.family.name(),
                    d.n_modes,
                    d.map.lo,
                    d.map.hi
                )
                .unwrap();
            }
            writeln!(s, "values {}", f.coeffs().len()).unwrap();
            for v in f.coeffs() {
                writeln!(s, "{v:.16e}").unwrap();
            }
        }
        writeln!(s, "end").unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, &str), FormatError> {
            loop {
                match lines.next() {
                    Some((_, "")) => continue,
                    Some(l) => return Ok(l),
                    None => {
                        return Err(FormatError::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") })
                    }
                }
            }
        };
        let err = |line: usize, msg: String| FormatError::Parse { line, msg };

        let (ln, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(err(ln, format!("expected '{FORMAT_HEADER}'")));
        }
        let (ln, layout) = next("layout")?;
        if layout != "layout row-major" {
            return Err(err(ln, "only 'layout row-major' is supported".into()));
        }
        let mut out = CoefficientFile::default();
        let n_fields = loop {
            let (ln, l) = next("fields")?;
            let (key, rest) = l.split_once(' ').unwrap_or((l, ""));
            match key {
                "problem" => out.problem = Some(rest.trim().to_string()),
                "domain" => {
                    out.domain = Some(
                        serde_json::from_str(rest).map_err(|e| err(ln, format!("bad domain: {e}")))?,
                    )
                }
                "fields" => break parse_num::<usize>(rest, ln)?,
                _ => return Err(err(ln, format!("unexpected key '{key}'"))),
            }
        };
        for _ in 0..n_fields {
            let name = keyed(next("field")?, "field")?.to_string();
            let axes_line = next("axes")?;
            let axes: Vec<String> = keyed(axes_line, "axes")?.split_whitespace().map(String::from).collect();
            let (ln, t) = next("transform")?;
            let transform = match keyed((ln, t), "transform")? {
                "identity" => OutputTransform::Identity,
                "exp" => OutputTransform::Exp,
                other => return Err(err(ln, format!("unknown transform '{other}'"))),
            };
            let dims_line = next("dims")?;
            let nd: usize = parse_num(keyed(dims_line, "dims")?, dims_line.0)?;
            let mut dims = Vec::with_capacity(nd);
            for _ in 0..nd {
                let (ln, l) = next("dim")?;
                let parts: Vec<&str> = keyed((ln, l), "dim")?.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(err(ln, "dim needs: family n_modes lo hi".into()));
                }
                let family = BasisFamily::from_str(parts[0]).map_err(|e| err(ln, e.to_string()))?;
                let n: usize = parse_num(parts[1], ln)?;
                let lo: f64 = parse_num(parts[2], ln)?;
                let hi: f64 = parse_num(parts[3], ln)?;
                dims.push(BasisSpec1D::new(family, n, lo, hi).map_err(|e| err(ln, e.to_string()))?);
            }
            if axes.len() != nd {
                return Err(err(axes_line.0, format!("{} axis names for {nd} dimensions", axes.len())));
            }
            let spec = TensorBasisSpec::new(dims).map_err(|e| err(dims_line.0, e.to_string()))?;
            let values_line = next("values")?;
            let nv: usize = parse_num(keyed(values_line, "values")?, values_line.0)?;
            if nv != spec.total_modes() {
                return Err(err(
                    values_line.0,
                    format!("{nv} values but the basis has {} modes", spec.total_modes()),
                ));
            }
            let mut coeffs = Vec::with_capacity(nv);
            for _ in 0..nv {
                let (ln, l) = next("value")?;
                coeffs.push(parse_num::<f64>(l, ln)?);
            }
            let field = CoefficientField::new(spec, coeffs, transform)?;
            out.fields.push(NamedField { name, axes, field });
        }
        let (ln, end) = next("end")?;
        if end != "end" {
            return Err(err(ln, "expected 'end'".into()));
        }
        Ok(out)
    }
}

fn keyed<'a>((ln, l): (usize, &'a str), key: &str) -> Result<&'a str, FormatError> {
    match l.split_once(' ') {
        Some((k, rest)) if k == key => Ok(rest.trim()),
        None if l == key => Ok(""),
        _ => Err(FormatError::Parse { line: ln, msg: format!("expected '{key}'") }),
    }
}

fn parse_num<T: FromStr>(s: &str, line: usize) -> Result<T, FormatError> {
    s.trim()
        .parse()
        .map_err(|_| FormatError::Parse { line, msg: format!("cannot parse number '{s}'") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Hole;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_file() -> CoefficientFile {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = TensorBasisSpec::new(vec![
            BasisSpec1D::new(BasisFamily::CosineOnly, 4, -5.0, 5.0).unwrap(),
            BasisSpec1D::new(BasisFamily::Legendre, 3, 0.0, std::f64::consts::FRAC_PI_2).unwrap(),
        ])
        .unwrap();
        let coeffs: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() * 1e-7 - 3.3).collect();
        let u = CoefficientField::new(spec.clone(), coeffs, OutputTransform::Identity).unwrap();
        let m = CoefficientField::zeros(spec, OutputTransform::Exp);
        CoefficientFile {
            problem: Some("nls".into()),
            domain: Some(DomainSpec::peanut(vec![Hole { center: [0.3, 0.1], radius: 0.15 }])),
            fields: vec![
                NamedField { name: "u".into(), axes: vec!["x".into(), "t".into()], field: u },
                NamedField { name: "mu".into(), axes: vec!["x".into(), "t".into()], field: m },
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let f = sample_file();
        let text = f.to_text();
        assert!(text.contains("layout row-major"));
        let back = CoefficientFile::parse(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let text = sample_file().to_text();
        assert!(CoefficientFile::parse(&text.replace("values 12", "values 11")).is_err());
        assert!(CoefficientFile::parse(&text.replace("cosine", "hermite")).is_err());
        assert!(CoefficientFile::parse(&text.replace("row-major", "column-major")).is_err());
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(CoefficientFile::parse(&truncated).is_err());
    }
}
