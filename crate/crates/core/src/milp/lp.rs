use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LinearConstraint, MilpModel, Sense, VarKind, Variable};
use crate::error::{Error, Result};

const TERMS_PER_LINE: usize = 8;

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v != 0.0 && (v.abs() >= 1e15 || v.abs() < 1e-4) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// CPLEX LP text for `model`. The objective is empty; every variable is
/// listed in the Bounds section in model order.
pub fn write_lp(model: &MilpModel) -> String {
    let mut s = String::from("\\ feasibility model\nMinimize\n obj:\n");
    if !model.constraints.is_empty() {
        s.push_str("Subject To\n");
        for c in &model.constraints {
            write!(s, " {}:", c.name).unwrap();
            if c.terms.is_empty() {
                s.push_str(" 0 ");
                s.push_str(&model.variables.first().map_or("x".into(), |v| v.name.clone()));
            }
            for (k, &(i, a)) in c.terms.iter().enumerate() {
                if k > 0 && k % TERMS_PER_LINE == 0 {
                    s.push_str("\n   ");
                }
                let sign = if a.is_sign_negative() { '-' } else { '+' };
                write!(s, " {sign} {} {}", num(a.abs()), model.variables[i].name).unwrap();
            }
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            writeln!(s, " {op} {}", num(c.rhs)).unwrap();
        }
    }
    s.push_str("Bounds\n");
    for v in &model.variables {
        if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            writeln!(s, " {} free", v.name).unwrap();
        } else {
            writeln!(s, " {} <= {} <= {}", num(v.lower), v.name, num(v.upper)).unwrap();
        }
    }
    let bins: Vec<&str> = model.binaries().map(|v| v.name.as_str()).collect();
    if !bins.is_empty() {
        s.push_str("Binary\n");
        for chunk in bins.chunks(TERMS_PER_LINE) {
            writeln!(s, " {}", chunk.join(" ")).unwrap();
        }
    }
    s.push_str("End\n");
    s
}

pub fn export_lp(model: &MilpModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_lp(model))?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Objective,
    Constraints,
    Bounds,
    Binary,
    General,
    Done,
}

fn parse_num(t: &str) -> Result<f64> {
    match t.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => t.parse().map_err(|_| Error::Parse(format!("bad number {t:?} in LP file"))),
    }
}

fn header(line: &str) -> Option<Section> {
    match line.to_ascii_lowercase().as_str() {
        "minimize" | "minimum" | "min" | "maximize" | "maximum" | "max" => Some(Section::Objective),
        "subject to" | "such that" | "st" | "s.t." | "st." => Some(Section::Constraints),
        "bounds" | "bound" => Some(Section::Bounds),
        "binary" | "binaries" | "bin" => Some(Section::Binary),
        "general" | "generals" | "gen" => Some(Section::General),
        "end" => Some(Section::Done),
        _ => None,
    }
}

struct RawConstraint {
    name: String,
    terms: Vec<(String, f64)>,
    sense: Sense,
    rhs: f64,
}

fn parse_constraint(name: String, toks: &[String]) -> Result<RawConstraint> {
    let bad = || Error::Parse(format!("malformed constraint {name}"));
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    let mut i = 0;
    while i < toks.len() {
        let t = toks[i].as_str();
        match t {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            "<=" | "=<" | "<" | ">=" | "=>" | ">" | "=" => {
                let sense = match t {
                    "<=" | "=<" | "<" => Sense::Le,
                    ">=" | "=>" | ">" => Sense::Ge,
                    _ => Sense::Eq,
                };
                let rhs_tok = toks.get(i + 1).ok_or_else(bad)?;
                let rhs = if rhs_tok == "-" {
                    -parse_num(toks.get(i + 2).ok_or_else(bad)?)?
                } else {
                    parse_num(rhs_tok)?
                };
                return Ok(RawConstraint { name, terms, sense, rhs });
            }
            _ => {
                if let Ok(v) = t.parse::<f64>() {
                    coef = Some(coef.unwrap_or(1.0) * v);
                } else {
                    terms.push((t.to_string(), sign * coef.unwrap_or(1.0)));
                    sign = 1.0;
                    coef = None;
                }
            }
        }
        i += 1;
    }
    Err(bad())
}

/// Parses CPLEX LP text as produced by [`write_lp`]. Variables are ordered
/// by their first appearance in the Bounds section, then in constraints.
pub fn parse_lp(text: &str) -> Result<MilpModel> {
    let mut section = Section::Preamble;
    let mut raw: Vec<RawConstraint> = Vec::new();
    let mut pending: Option<(String, Vec<String>)> = None;
    let mut bounds: Vec<(String, f64, f64)> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();

    let flush = |pending: &mut Option<(String, Vec<String>)>, raw: &mut Vec<RawConstraint>| -> Result<()> {
        if let Some((name, toks)) = pending.take() {
            raw.push(parse_constraint(name, &toks)?);
        }
        Ok(())
    };

    for line in text.lines() {
        let line = line.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = header(line) {
            flush(&mut pending, &mut raw)?;
            section = h;
            continue;
        }
        match section {
            Section::Preamble | Section::Objective | Section::Done | Section::General => {}
            Section::Constraints => {
                let (label, body) = match line.find(':') {
                    Some(p) => (Some(line[..p].trim().to_string()), &line[p + 1..]),
                    None => (None, line),
                };
                if let Some(name) = label {
                    flush(&mut pending, &mut raw)?;
                    pending = Some((name, Vec::new()));
                } else if pending.is_none() {
                    pending = Some((format!("c{}", raw.len() + 1), Vec::new()));
                }
                let toks = &mut pending.as_mut().unwrap().1;
                toks.extend(body.split_whitespace().map(str::to_string));
            }
            Section::Bounds => {
                let toks: Vec<&str> = line.split_whitespace().collect();
                let entry = match toks.as_slice() {
                    [name, free] if free.eq_ignore_ascii_case("free") => {
                        (name.to_string(), f64::NEG_INFINITY, f64::INFINITY)
                    }
                    [lo, "<=", name, "<=", hi] => (name.to_string(), parse_num(lo)?, parse_num(hi)?),
                    [name, "<=", hi] => (name.to_string(), 0.0, parse_num(hi)?),
                    [name, ">=", lo] => (name.to_string(), parse_num(lo)?, f64::INFINITY),
                    [name, "=", v] => (name.to_string(), parse_num(v)?, parse_num(v)?),
                    _ => return Err(Error::Parse(format!("unsupported bound line {line:?}"))),
                };
                bounds.push(entry);
            }
            Section::Binary => binaries.extend(line.split_whitespace().map(str::to_string)),
        }
    }
    flush(&mut pending, &mut raw)?;
    if section != Section::Done {
        return Err(Error::Parse("LP file lacks End".into()));
    }

    let mut model = MilpModel::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (name, lo, hi) in bounds {
        match index.get(&name) {
            Some(&i) => {
                model.variables[i].lower = lo;
                model.variables[i].upper = hi;
            }
            None => {
                index.insert(name.clone(), model.variables.len());
                model.variables.push(Variable { name, kind: VarKind::Continuous, lower: lo, upper: hi });
            }
        }
    }
    let mut lookup = |model: &mut MilpModel, name: &str| -> usize {
        *index.entry(name.to_string()).or_insert_with(|| {
            model.variables.push(Variable {
                name: name.to_string(),
                kind: VarKind::Continuous,
                lower: 0.0,
                upper: f64::INFINITY,
            });
            model.variables.len() - 1
        })
    };
    for c in raw {
        let terms = c
            .terms
            .iter()
            .filter(|(_, a)| *a != 0.0 || c.terms.len() > 1)
            .map(|(n, a)| (lookup(&mut model, n), *a))
            .collect::<Vec<_>>();
        model.constraints.push(LinearConstraint { name: c.name, terms, sense: c.sense, rhs: c.rhs });
    }
    for b in binaries {
        let i = lookup(&mut model, &b);
        model.variables[i].kind = VarKind::Binary;
    }
    Ok(model)
}
