//! JSON problem documents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use tilt_core::composite::{CompositeProblem, SmoothMap, SmoothObjective};
use tilt_core::proxcore::{NonsmoothTerm, TermKind};

use crate::CliError;

/// Matrices are written as arrays of rows.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveDef {
    Quadratic {
        #[serde(rename = "Q")]
        q: Rows,
        c: Vec<f64>,
    },
    /// Quadratic plus `Σ aᵢ xᵢ⁴`.
    Quartic {
        #[serde(rename = "Q")]
        q: Rows,
        c: Vec<f64>,
        a: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapDef {
    Affine {
        #[serde(rename = "A")]
        a: Rows,
        b: Vec<f64>,
    },
    /// Identity onto `p × q` matrices, row-major.
    Reshape { p: usize, q: usize },
    AffineReshape {
        #[serde(rename = "A")]
        a: Rows,
        b: Vec<f64>,
        p: usize,
        q: usize,
    },
    /// `(Ax + b)ᵢ + ½ xᵀHᵢx`.
    Quadratic {
        #[serde(rename = "A")]
        a: Rows,
        b: Vec<f64>,
        #[serde(rename = "H")]
        h: Vec<Rows>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermDef {
    SpectralNorm { p: usize, q: usize },
    L1 { m: usize },
    NonposOrthant { m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    pub f0: ObjectiveDef,
    #[serde(rename = "F")]
    pub map: MapDef,
    pub g: TermDef,
    pub x_bar: Vec<f64>,
    pub kappa_mscq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedProblem {
    pub problem: CompositeProblem,
    pub x_bar: DVector<f64>,
    pub kappa: Option<f64>,
    pub seed: Option<u64>,
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Input(format!("schema error: {}", msg.into()))
}

fn matrix(
    rows: &Rows,
    shape: (usize, usize),
    field: &str,
    against: &str,
) -> Result<DMatrix<f64>, CliError> {
    let (r, c) = shape;
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        let got_cols = rows.first().map_or(0, Vec::len);
        return Err(schema(format!(
            "{field} must be {r}x{c} to match {against}, got {} rows of {got_cols}",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, field: &str, against: &str) -> Result<DVector<f64>, CliError> {
    if v.len() != len {
        return Err(schema(format!(
            "{field} has length {} but {against} requires {len}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn to_problem(&self) -> Result<ParsedProblem, CliError> {
        let n = self.n;
        if n == 0 {
            return Err(schema("n must be positive"));
        }
        let f0 = match &self.f0 {
            ObjectiveDef::Quadratic { q, c } => SmoothObjective::Quadratic {
                q: matrix(q, (n, n), "f0.Q", "n")?,
                c: vector(c, n, "f0.c", "n")?,
            },
            ObjectiveDef::Quartic { q, c, a } => SmoothObjective::Quartic {
                q: matrix(q, (n, n), "f0.Q", "n")?,
                c: vector(c, n, "f0.c", "n")?,
                a: vector(a, n, "f0.a", "n")?,
            },
        };
        let out_rows = |a: &Rows| a.len();
        let map = match &self.map {
            MapDef::Affine { a, b } => {
                let m = out_rows(a);
                SmoothMap::Affine {
                    a: matrix(a, (m, n), "F.A", "n")?,
                    b: vector(b, m, "F.b", "the rows of F.A")?,
                }
            }
            MapDef::Reshape { p, q } => {
                if p * q != n {
                    return Err(schema(format!("F.p * F.q = {} must equal n = {n}", p * q)));
                }
                SmoothMap::identity(n)
            }
            MapDef::AffineReshape { a, b, p, q } => {
                let m = p * q;
                SmoothMap::Affine {
                    a: matrix(a, (m, n), "F.A", "F.p * F.q rows and n columns")?,
                    b: vector(b, m, "F.b", "F.p * F.q")?,
                }
            }
            MapDef::Quadratic { a, b, h } => {
                let m = out_rows(a);
                if h.len() != m {
                    return Err(schema(format!(
                        "F.H has {} matrices but F.A has {m} rows",
                        h.len()
                    )));
                }
                SmoothMap::Quadratic {
                    a: matrix(a, (m, n), "F.A", "n")?,
                    b: vector(b, m, "F.b", "the rows of F.A")?,
                    hessians: h
                        .iter()
                        .enumerate()
                        .map(|(i, hi)| matrix(hi, (n, n), &format!("F.H[{i}]"), "n"))
                        .collect::<Result<_, _>>()?,
                }
            }
        };
        let g = match self.g {
            TermDef::SpectralNorm { p, q } => {
                if p == 0 || q == 0 {
                    return Err(schema("g.p and g.q must be positive"));
                }
                if let MapDef::Reshape { p: fp, q: fq }
                | MapDef::AffineReshape { p: fp, q: fq, .. } = self.map
                {
                    if (fp, fq) != (p, q) {
                        return Err(schema(format!(
                            "g is {p}x{q} (g.p, g.q) but F reshapes to {fp}x{fq} (F.p, F.q)"
                        )));
                    }
                }
                NonsmoothTerm::spectral(p, q)
            }
            TermDef::L1 { m } => NonsmoothTerm::l1(m),
            TermDef::NonposOrthant { m } => NonsmoothTerm::nonpositive_orthant(m),
        };
        if g.dim() != map.out_dim() {
            return Err(schema(format!(
                "g acts on dimension {} (g) but F maps into dimension {} (F)",
                g.dim(),
                map.out_dim()
            )));
        }
        if matches!(
            self.map,
            MapDef::Reshape { .. } | MapDef::AffineReshape { .. }
        ) && !matches!(g.kind, TermKind::SpectralNorm { .. })
        {
            return Err(schema("F.type reshape requires g.type spectral_norm"));
        }
        let x_bar = vector(&self.x_bar, n, "x_bar", "n")?;
        if let Some(k) = self.kappa {
            if !(k > 0.0) || !k.is_finite() {
                return Err(schema("kappa must be positive and finite"));
            }
        }
        let problem = CompositeProblem::new(f0, map, g, self.kappa_mscq)
            .map_err(|e| schema(e.to_string()))?;
        Ok(ParsedProblem {
            problem,
            x_bar,
            kappa: self.kappa,
            seed: self.seed,
        })
    }

    /// Document describing `prob` with an explicit affine (or quadratic) map.
    pub fn from_problem(
        prob: &CompositeProblem,
        x_bar: &DVector<f64>,
        kappa: Option<f64>,
        seed: Option<u64>,
    ) -> Self {
        let f0 = match &prob.f0 {
            SmoothObjective::Quadratic { q, c } => ObjectiveDef::Quadratic {
                q: rows_of(q),
                c: c.iter().copied().collect(),
            },
            SmoothObjective::Quartic { q, c, a } => ObjectiveDef::Quartic {
                q: rows_of(q),
                c: c.iter().copied().collect(),
                a: a.iter().copied().collect(),
            },
        };
        let map = match (&prob.map, prob.g.kind) {
            (SmoothMap::Affine { a, b }, TermKind::SpectralNorm { p, q }) => {
                MapDef::AffineReshape {
                    a: rows_of(a),
                    b: b.iter().copied().collect(),
                    p,
                    q,
                }
            }
            (SmoothMap::Affine { a, b }, _) => MapDef::Affine {
                a: rows_of(a),
                b: b.iter().copied().collect(),
            },
            (SmoothMap::Quadratic { a, b, hessians }, _) => MapDef::Quadratic {
                a: rows_of(a),
                b: b.iter().copied().collect(),
                h: hessians.iter().map(rows_of).collect(),
            },
        };
        let g = match prob.g.kind {
            TermKind::SpectralNorm { p, q } => TermDef::SpectralNorm { p, q },
            TermKind::L1Norm { m } => TermDef::L1 { m },
            TermKind::NonpositiveOrthant { m } => TermDef::NonposOrthant { m },
        };
        ProblemFile {
            n: prob.n,
            f0,
            map,
            g,
            x_bar: x_bar.iter().copied().collect(),
            kappa_mscq: prob.kappa_mscq,
            kappa,
            seed,
        }
    }
}

/// Parses and validates a problem document; errors carry the JSON path or the source location.
pub fn parse_problem(document: &str) -> Result<ParsedProblem, CliError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let file: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            CliError::Input(format!("parse error: {inner}"))
        } else if path == "." {
            CliError::Input(format!("schema error: {inner}"))
        } else {
            CliError::Input(format!("schema error at {path}: {inner}"))
        }
    })?;
    file.to_problem()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORTHANT_1D: &str = r#"{
        "n": 1,
        "f0": {"type": "quadratic", "Q": [[2.0]], "c": [0.0]},
        "F": {"type": "affine", "A": [[1.0]], "b": [0.0]},
        "g": {"type": "nonpos_orthant", "m": 1},
        "x_bar": [0.0],
        "kappa_mscq": 1.0
    }"#;

    fn err(doc: &str) -> String {
        match parse_problem(doc) {
            Err(CliError::Input(m)) => m,
            other => panic!("expected an input error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_orthant_document() {
        let p = parse_problem(ORTHANT_1D).unwrap();
        assert_eq!(p.problem.n, 1);
        assert_eq!(p.kappa, None);
        assert_eq!(p.seed, None);
    }

    #[test]
    fn missing_key_is_named() {
        let doc = ORTHANT_1D.replace(",\n        \"kappa_mscq\": 1.0", "");
        assert!(err(&doc).contains("kappa_mscq"), "{}", err(&doc));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = ORTHANT_1D.replace("\"n\": 1,", "\"n\": 1, \"extra\": true,");
        assert!(err(&doc).contains("extra"));
        let doc = ORTHANT_1D.replace("\"m\": 1}", "\"m\": 1, \"p\": 2}");
        assert!(err(&doc).contains("at g"));
    }

    #[test]
    fn unsupported_tag_is_a_schema_error() {
        let doc = ORTHANT_1D.replace("nonpos_orthant", "huber");
        let m = err(&doc);
        assert!(m.starts_with("schema error at g"), "{m}");
    }

    #[test]
    fn syntax_error_reports_location() {
        let m = err("{\"n\": 1,,}");
        assert!(m.starts_with("parse error") && m.contains("line 1"), "{m}");
    }

    #[test]
    fn dimension_mismatch_names_both_fields() {
        let doc = ORTHANT_1D.replace("\"m\": 1", "\"m\": 2");
        let m = err(&doc);
        assert!(m.contains("(g)") && m.contains("(F)"), "{m}");
        let doc = ORTHANT_1D.replace("\"x_bar\": [0.0]", "\"x_bar\": [0.0, 1.0]");
        let m = err(&doc);
        assert!(m.contains("x_bar") && m.contains('n'), "{m}");
    }

    #[test]
    fn reshape_must_agree_with_g() {
        let doc = r#"{"n": 4,
            "f0": {"type": "quadratic", "Q": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]], "c": [0,0,0,0]},
            "F": {"type": "reshape", "p": 2, "q": 2},
            "g": {"type": "spectral_norm", "p": 1, "q": 4},
            "x_bar": [0,0,0,0], "kappa_mscq": 1}"#;
        let m = err(doc);
        assert!(m.contains("g.p") && m.contains("F.p"), "{m}");
        let ok = doc.replace("\"p\": 1, \"q\": 4", "\"p\": 2, \"q\": 2");
        assert_eq!(parse_problem(&ok).unwrap().problem.g.dim(), 4);
    }

    #[test]
    fn serialize_then_parse_round_trips() {
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]);
        let prob = CompositeProblem::new(
            SmoothObjective::Quartic {
                q,
                c: DVector::from_vec(vec![0.1, -0.2]),
                a: DVector::from_vec(vec![1.0, 0.0]),
            },
            SmoothMap::Quadratic {
                a: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
                b: DVector::from_vec(vec![-0.5]),
                hessians: vec![DMatrix::identity(2, 2)],
            },
            NonsmoothTerm::l1(1),
            2.5,
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.25, 1.0 / 3.0]);
        let file = ProblemFile::from_problem(&prob, &x, Some(1.5), Some(7));
        let text = serde_json::to_string(&file).unwrap();
        let back = parse_problem(&text).unwrap();
        assert_eq!(back.problem, prob);
        assert_eq!(back.x_bar, x);
        assert_eq!((back.kappa, back.seed), (Some(1.5), Some(7)));

        let spectral = CompositeProblem::new(
            SmoothObjective::Quadratic {
                q: DMatrix::identity(4, 4),
                c: DVector::zeros(4),
            },
            SmoothMap::identity(4),
            NonsmoothTerm::spectral(2, 2),
            1.0,
        )
        .unwrap();
        let file = ProblemFile::from_problem(&spectral, &DVector::zeros(4), None, None);
        let back = parse_problem(&serde_json::to_string(&file).unwrap()).unwrap();
        assert_eq!(back.problem, spectral);
    }
}
