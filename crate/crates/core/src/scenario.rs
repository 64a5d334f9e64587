//! Scenario files: flat `key = value` text with `[section]` headers.
//!
//! ```text
//! name = cubic_stable
//! seed = 42
//! window_mu = 20
//! grid_delta = 0.01
//! analyses = algebra-audit, dichotomy, equivalence
//!
//! [rate]
//! kind = shifted-odd-power-exp
//! params = 2, 3
//!
//! [family]
//! kind = diagonal
//! exponents = -1
//! ```
//!
//! Lines starting with `#` or `;` are comments. Matrices are row-major and
//! comma-separated.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result as CoreResult;
use crate::family::EvolutionFamily;
use crate::growth_rate::{BuiltinKind, GrowthRate};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    AlgebraAudit,
    SemigroupAudit,
    Dichotomy,
    Spectrum,
    Resolvent,
    Equivalence,
}

impl Analysis {
    pub const ALL: [Analysis; 6] = [
        Analysis::AlgebraAudit,
        Analysis::SemigroupAudit,
        Analysis::Dichotomy,
        Analysis::Spectrum,
        Analysis::Resolvent,
        Analysis::Equivalence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::AlgebraAudit => "algebra-audit",
            Analysis::SemigroupAudit => "semigroup-audit",
            Analysis::Dichotomy => "dichotomy",
            Analysis::Spectrum => "spectrum",
            Analysis::Resolvent => "resolvent",
            Analysis::Equivalence => "equivalence",
        }
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Analysis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown analysis '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateDecl {
    pub kind: String,
    pub params: Vec<f64>,
}

impl RateDecl {
    fn builtin(&self) -> BuiltinKind {
        match self.kind.as_str() {
            "exponential" => BuiltinKind::Exponential,
            "algebraic" => BuiltinKind::Algebraic,
            _ => BuiltinKind::ShiftedOddPowerExp,
        }
    }

    pub fn build(&self) -> CoreResult<GrowthRate> {
        GrowthRate::make_builtin(self.builtin(), &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilyDecl {
    Identity {
        dim: usize,
    },
    Diagonal {
        exponents: Vec<f64>,
    },
    ConstantCoefficient {
        matrix: Vec<f64>,
        dim: usize,
        step_tol: f64,
    },
}

impl FamilyDecl {
    pub fn build(&self, rate: &GrowthRate) -> CoreResult<EvolutionFamily> {
        match self {
            FamilyDecl::Identity { dim } => EvolutionFamily::identity(*dim, rate.clone()),
            FamilyDecl::Diagonal { exponents } => {
                EvolutionFamily::diagonal(exponents, rate.clone())
            }
            FamilyDecl::ConstantCoefficient {
                matrix,
                dim,
                step_tol,
            } => EvolutionFamily::constant_coefficient(
                DMatrix::from_row_slice(*dim, *dim, matrix),
                rate.clone(),
                *step_tol,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumDecl {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub n_lambda: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventDecl {
    /// The grid is `[-half_width, half_width]` in mu.
    pub half_width: f64,
    /// Data is a hat of this radius centred at `mu = 0`.
    pub hat_radius: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub window_mu: f64,
    pub grid_delta: f64,
    pub samples: usize,
    pub analyses: Vec<Analysis>,
    pub rate: RateDecl,
    pub family: FamilyDecl,
    pub spectrum: SpectrumDecl,
    pub resolvent: ResolventDecl,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    key_col: usize,
    value_col: usize,
}

const SECTIONS: [(&str, &[&str]); 6] = [
    (
        "",
        &[
            "name",
            "seed",
            "output_dir",
            "window_mu",
            "grid_delta",
            "samples",
            "analyses",
        ],
    ),
    ("rate", &["kind", "params"]),
    (
        "family",
        &["kind", "dim", "exponents", "matrix", "step_tol"],
    ),
    ("spectrum", &["lambda_lo", "lambda_hi", "n_lambda"]),
    ("resolvent", &["half_width", "hat_radius", "tol"]),
    ("dichotomy", &["samples"]),
];

type Table = BTreeMap<(String, String), Entry>;

fn tokenize(text: &str) -> std::result::Result<Table, ParseError> {
    let mut table = Table::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let indent = raw.len() - raw.trim_start().len();
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') || body.starts_with(';') {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(ParseError {
                    line,
                    column: indent + body.len(),
                    message: "section header must end with ']'".into(),
                });
            };
            let name = name.trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name && !s.is_empty()) {
                return Err(ParseError {
                    line,
                    column: indent + 2,
                    message: format!("unknown section [{name}]"),
                });
            }
            section = name.to_string();
            continue;
        }
        let Some(eq) = raw.find('=') else {
            return Err(ParseError {
                line,
                column: indent + 1,
                message: "expected 'key = value'".into(),
            });
        };
        let key = raw[..eq].trim();
        let value = raw[eq + 1..].trim();
        let value_col = eq + 2 + (raw[eq + 1..].len() - raw[eq + 1..].trim_start().len());
        if key.is_empty() {
            return Err(ParseError {
                line,
                column: indent + 1,
                message: "missing key before '='".into(),
            });
        }
        let allowed = SECTIONS
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        if !allowed.contains(&key) {
            let place = if section.is_empty() {
                "top level".to_string()
            } else {
                format!("[{section}]")
            };
            return Err(ParseError {
                line,
                column: indent + 1,
                message: format!("unknown key '{key}' at {place}"),
            });
        }
        if value.is_empty() {
            return Err(ParseError {
                line,
                column: value_col,
                message: format!("missing value for '{key}'"),
            });
        }
        let entry = Entry {
            value: value.to_string(),
            line,
            key_col: indent + 1,
            value_col,
        };
        if let Some(prev) = table.insert((section.clone(), key.to_string()), entry) {
            return Err(ParseError {
                line,
                column: indent + 1,
                message: format!("duplicate key '{key}' (first set on line {})", prev.line),
            });
        }
    }
    Ok(table)
}

struct Reader {
    table: Table,
    /// Position reported for errors about missing required keys.
    eof_line: usize,
}

impl Reader {
    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.table.get(&(section.to_string(), key.to_string()))
    }

    fn missing(&self, section: &str, key: &str) -> ParseError {
        let place = if section.is_empty() {
            String::new()
        } else {
            format!(" in [{section}]")
        };
        ParseError {
            line: self.eof_line,
            column: 1,
            message: format!("missing required key '{key}'{place}"),
        }
    }

    fn parsed<T: FromStr>(
        &self,
        section: &str,
        key: &str,
    ) -> std::result::Result<Option<(T, &Entry)>, ParseError>
    where
        T::Err: fmt::Display,
    {
        let Some(e) = self.entry(section, key) else {
            return Ok(None);
        };
        e.value
            .parse::<T>()
            .map(|v| Some((v, e)))
            .map_err(|err| ParseError {
                line: e.line,
                column: e.value_col,
                message: format!("invalid value for '{key}': {err}"),
            })
    }

    fn get<T: FromStr>(
        &self,
        section: &str,
        key: &str,
        default: T,
    ) -> std::result::Result<T, ParseError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parsed(section, key)?.map_or(default, |(v, _)| v))
    }

    fn list(
        &self,
        section: &str,
        key: &str,
    ) -> std::result::Result<Option<(Vec<f64>, &Entry)>, ParseError> {
        let Some(e) = self.entry(section, key) else {
            return Ok(None);
        };
        let mut out = Vec::new();
        let mut offset = 0;
        for item in e.value.split(',') {
            let lead = item.len() - item.trim_start().len();
            let v = item.trim().parse::<f64>().map_err(|_| ParseError {
                line: e.line,
                column: e.value_col + offset + lead,
                message: format!("'{}' is not a number", item.trim()),
            })?;
            out.push(v);
            offset += item.len() + 1;
        }
        Ok(Some((out, e)))
    }

    fn check(cond: bool, e: &Entry, message: String) -> std::result::Result<(), ParseError> {
        if cond {
            Ok(())
        } else {
            Err(ParseError {
                line: e.line,
                column: e.value_col,
                message,
            })
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> std::result::Result<Self, ParseError> {
        let r = Reader {
            table: tokenize(text)?,
            eof_line: text.lines().count().max(1),
        };

        let name = r.get("", "name", "scenario".to_string())?;
        let seed = r.get("", "seed", 42u64)?;
        let output_dir = r.entry("", "output_dir").map(|e| PathBuf::from(&e.value));

        let window_mu = match r.parsed::<f64>("", "window_mu")? {
            Some((v, e)) => {
                Reader::check(
                    v >= 1.0 && v.is_finite(),
                    e,
                    format!("window_mu must be at least 1, got {v}"),
                )?;
                v
            }
            None => 20.0,
        };
        let grid_delta = match r.parsed::<f64>("", "grid_delta")? {
            Some((v, e)) => {
                Reader::check(
                    v > 0.0 && v.is_finite(),
                    e,
                    format!("grid_delta must be positive, got {v}"),
                )?;
                v
            }
            None => 0.01,
        };
        let samples = match r
            .parsed::<usize>("dichotomy", "samples")?
            .or(r.parsed::<usize>("", "samples")?)
        {
            Some((v, e)) => {
                Reader::check(v >= 10, e, format!("samples must be at least 10, got {v}"))?;
                v
            }
            None => 200,
        };

        let Some(e) = r.entry("", "analyses") else {
            return Err(r.missing("", "analyses"));
        };
        let mut analyses = Vec::new();
        let mut seen = HashSet::new();
        let mut offset = 0;
        for item in e.value.split(',') {
            let lead = item.len() - item.trim_start().len();
            let column = e.value_col + offset + lead;
            let a: Analysis = item.trim().parse().map_err(|m| ParseError {
                line: e.line,
                column,
                message: m,
            })?;
            if !seen.insert(a) {
                return Err(ParseError {
                    line: e.line,
                    column,
                    message: format!("analysis '{a}' listed twice"),
                });
            }
            analyses.push(a);
            offset += item.len() + 1;
        }

        let Some(kind) = r.entry("rate", "kind") else {
            return Err(r.missing("rate", "kind"));
        };
        let params = r
            .list("rate", "params")?
            .map(|(v, _)| v)
            .unwrap_or_default();
        let rate = match kind.value.as_str() {
            "exponential" | "algebraic" => RateDecl {
                kind: kind.value.clone(),
                params: Vec::new(),
            },
            "shifted-odd-power-exp" => {
                let at = r.entry("rate", "params").unwrap_or(kind);
                let ok = params.len() == 2
                    && params[1] >= 1.0
                    && params[1].fract() == 0.0
                    && params[1] % 2.0 == 1.0;
                Reader::check(
                    ok,
                    at,
                    "shifted-odd-power-exp needs params = t0, n with n a positive odd integer"
                        .into(),
                )?;
                RateDecl {
                    kind: kind.value.clone(),
                    params,
                }
            }
            "custom" => {
                return Err(ParseError {
                    line: kind.line,
                    column: kind.value_col,
                    message: "custom rates need code and cannot be declared in a scenario".into(),
                })
            }
            other => {
                return Err(ParseError {
                    line: kind.line,
                    column: kind.value_col,
                    message: format!("unknown rate kind '{other}'"),
                })
            }
        };

        let Some(fkind) = r.entry("family", "kind") else {
            return Err(r.missing("family", "kind"));
        };
        let family = match fkind.value.as_str() {
            "identity" => {
                let dim = match r.parsed::<usize>("family", "dim")? {
                    Some((d, e)) => {
                        Reader::check(d >= 1, e, "dim must be positive".into())?;
                        d
                    }
                    None => 1,
                };
                FamilyDecl::Identity { dim }
            }
            "diagonal" => {
                let Some((exponents, e)) = r.list("family", "exponents")? else {
                    return Err(r.missing("family", "exponents"));
                };
                Reader::check(
                    exponents.iter().all(|x| x.is_finite()),
                    e,
                    "exponents must be finite".into(),
                )?;
                FamilyDecl::Diagonal { exponents }
            }
            "constant-coefficient" => {
                let Some((matrix, e)) = r.list("family", "matrix")? else {
                    return Err(r.missing("family", "matrix"));
                };
                let dim = (matrix.len() as f64).sqrt().round() as usize;
                Reader::check(
                    dim >= 1 && dim * dim == matrix.len(),
                    e,
                    format!("matrix has {} entries, not a square count", matrix.len()),
                )?;
                let step_tol = match r.parsed::<f64>("family", "step_tol")? {
                    Some((v, e)) => {
                        Reader::check(v > 0.0, e, "step_tol must be positive".into())?;
                        v
                    }
                    None => 1e-11,
                };
                FamilyDecl::ConstantCoefficient {
                    matrix,
                    dim,
                    step_tol,
                }
            }
            other => {
                return Err(ParseError {
                    line: fkind.line,
                    column: fkind.value_col,
                    message: format!("unknown family kind '{other}'"),
                })
            }
        };

        let spectrum = SpectrumDecl {
            lambda_lo: r.get("spectrum", "lambda_lo", -3.0)?,
            lambda_hi: r.get("spectrum", "lambda_hi", 3.0)?,
            n_lambda: r.get("spectrum", "n_lambda", 61usize)?,
        };
        if !(spectrum.lambda_lo < spectrum.lambda_hi) || spectrum.n_lambda < 3 {
            let e = r
                .entry("spectrum", "n_lambda")
                .or(r.entry("spectrum", "lambda_hi"))
                .or(r.entry("spectrum", "lambda_lo"));
            let (line, column) = e.map_or((r.eof_line, 1), |e| (e.line, e.key_col));
            return Err(ParseError {
                line,
                column,
                message: "spectrum needs lambda_lo < lambda_hi and n_lambda >= 3".into(),
            });
        }

        let resolvent = ResolventDecl {
            half_width: r.get("resolvent", "half_width", 8.0)?,
            hat_radius: r.get("resolvent", "hat_radius", 1.0)?,
            tol: r.get("resolvent", "tol", 1e-10)?,
        };
        if !(resolvent.hat_radius > 0.0
            && resolvent.half_width > resolvent.hat_radius
            && resolvent.tol > 0.0)
        {
            let e = r
                .entry("resolvent", "half_width")
                .or(r.entry("resolvent", "hat_radius"))
                .or(r.entry("resolvent", "tol"));
            let (line, column) = e.map_or((r.eof_line, 1), |e| (e.line, e.key_col));
            return Err(ParseError {
                line,
                column,
                message: "resolvent needs 0 < hat_radius < half_width and tol > 0".into(),
            });
        }

        Ok(Scenario {
            name,
            seed,
            output_dir,
            window_mu,
            grid_delta,
            samples,
            analyses,
            rate,
            family,
            spectrum,
            resolvent,
        })
    }
}
