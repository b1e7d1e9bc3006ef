//! LP-style text dump of an [`LpProblem`], readable by common MILP tools
//! after stripping the `priorities` section.
//!
//! ```text
//! \ comment
//! maximize
//!  obj: 3 x + 2 y + 1.5
//! subject to
//!  cap: 1 x + 1 y <= 4
//! bounds
//!  0 <= x <= 10
//! general
//!  y
//! binary
//!  b
//! priorities
//!  b 2
//! end
//! ```
//!
//! Numbers are written with Rust's shortest round-trip formatting.

use std::fmt::Write as _;

use super::{LpProblem, Sense, VarKind};
use crate::error::{Error, Result};

pub fn write_lp(p: &LpProblem) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "\\ {} variables, {} constraints", p.num_vars(), p.num_constraints());
    let _ = writeln!(s, "maximize");
    let terms: Vec<(usize, f64)> = p
        .objective
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(j, &c)| (j, c))
        .collect();
    let _ = writeln!(s, " obj: {}", expr(p, &terms, p.offset));
    let _ = writeln!(s, "subject to");
    for c in &p.constraints {
        let _ = writeln!(s, " {}: {} {} {:?}", c.name, expr(p, &c.coeffs, 0.0), c.sense.symbol(), c.rhs);
    }
    let _ = writeln!(s, "bounds");
    for j in 0..p.num_vars() {
        let _ = writeln!(s, " {:?} <= {} <= {:?}", p.lower[j], p.names[j], p.upper[j]);
    }
    for (title, kind) in [("general", VarKind::Integer), ("binary", VarKind::Binary)] {
        let vars: Vec<&str> = (0..p.num_vars())
            .filter(|&j| p.kinds[j] == kind)
            .map(|j| p.names[j].as_str())
            .collect();
        if !vars.is_empty() {
            let _ = writeln!(s, "{title}");
            for v in vars {
                let _ = writeln!(s, " {v}");
            }
        }
    }
    if p.priority.iter().any(|&q| q != 0) {
        let _ = writeln!(s, "priorities");
        for j in (0..p.num_vars()).filter(|&j| p.priority[j] != 0) {
            let _ = writeln!(s, " {} {}", p.names[j], p.priority[j]);
        }
    }
    let _ = writeln!(s, "end");
    s
}

fn expr(p: &LpProblem, terms: &[(usize, f64)], constant: f64) -> String {
    let mut parts: Vec<String> = Vec::new();
    for &(j, a) in terms {
        let sign = if parts.is_empty() {
            if a < 0.0 {
                "-"
            } else {
                ""
            }
        } else if a < 0.0 {
            "- "
        } else {
            "+ "
        };
        parts.push(format!("{sign}{:?} {}", a.abs(), p.names[j]));
    }
    if constant != 0.0 || parts.is_empty() {
        let sign = match (parts.is_empty(), constant < 0.0) {
            (true, true) => "-",
            (true, false) => "",
            (false, true) => "- ",
            (false, false) => "+ ",
        };
        parts.push(format!("{sign}{:?}", constant.abs()));
    }
    parts.join(" ")
}

#[derive(PartialEq, Clone, Copy)]
enum Section {
    Start,
    Objective,
    Rows,
    Bounds,
    General,
    Binary,
    Priorities,
    End,
}

/// Parses the format produced by [`write_lp`]. Variables are created in order
/// of first appearance in the `bounds` section.
pub fn parse_lp(text: &str) -> Result<LpProblem> {
    let mut p = LpProblem::new();
    let mut section = Section::Start;
    let mut objective: Option<(Vec<(String, f64)>, f64, usize)> = None;
    let mut rows: Vec<(String, Vec<(String, f64)>, Sense, f64, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let header = match line.to_ascii_lowercase().as_str() {
            "maximize" | "max" => Some(Section::Objective),
            "subject to" | "st" | "s.t." => Some(Section::Rows),
            "bounds" => Some(Section::Bounds),
            "general" | "generals" => Some(Section::General),
            "binary" | "binaries" => Some(Section::Binary),
            "priorities" => Some(Section::Priorities),
            "end" => Some(Section::End),
            _ => None,
        };
        if let Some(h) = header {
            section = h;
            continue;
        }
        match section {
            Section::Start => return Err(Error::parse(ln, "expected `maximize`")),
            Section::End => return Err(Error::parse(ln, "content after `end`")),
            Section::Objective => {
                let body = line.split_once(':').map_or(line, |(_, b)| b);
                let (terms, c) = parse_expr(body, ln)?;
                objective = Some((terms, c, ln));
            }
            Section::Rows => {
                let (name, body) = line
                    .split_once(':')
                    .ok_or_else(|| Error::parse(ln, "constraint needs a `name:` prefix"))?;
                let (sense, op) = [("<=", Sense::Le), (">=", Sense::Ge), ("=", Sense::Eq)]
                    .iter()
                    .find(|(op, _)| body.contains(op))
                    .map(|&(op, s)| (s, op))
                    .ok_or_else(|| Error::parse(ln, "missing comparison operator"))?;
                let (lhs, rhs) = body.split_once(op).expect("operator present");
                let (terms, c) = parse_expr(lhs, ln)?;
                let rhs: f64 = rhs.trim().parse().map_err(|_| Error::parse(ln, "bad right-hand side"))?;
                rows.push((name.trim().to_string(), terms, sense, rhs - c, ln));
            }
            Section::Bounds => {
                let t: Vec<&str> = line.split_whitespace().collect();
                if t.len() != 5 || t[1] != "<=" || t[3] != "<=" {
                    return Err(Error::parse(ln, "bounds must read `lo <= name <= hi`"));
                }
                let lo = num(t[0], ln)?;
                let hi = num(t[4], ln)?;
                if p.names.iter().any(|n| n == t[2]) {
                    return Err(Error::parse(ln, format!("duplicate variable `{}`", t[2])));
                }
                p.add_var(t[2], VarKind::Continuous, lo, hi, 0.0);
            }
            Section::General | Section::Binary => {
                let j = lookup(&p, line, ln)?;
                p.kinds[j] = if section == Section::General {
                    VarKind::Integer
                } else {
                    VarKind::Binary
                };
            }
            Section::Priorities => {
                let (name, q) = line
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| Error::parse(ln, "priority needs `name value`"))?;
                let j = lookup(&p, name, ln)?;
                p.priority[j] = q.trim().parse().map_err(|_| Error::parse(ln, "bad priority"))?;
            }
        }
    }
    if section != Section::End {
        return Err(Error::parse(text.lines().count().max(1), "missing `end`"));
    }
    let (terms, c, ln) = objective.ok_or_else(|| Error::parse(1, "missing objective"))?;
    for (name, a) in terms {
        let j = lookup(&p, &name, ln)?;
        p.objective[j] += a;
    }
    p.offset = c;
    for (name, terms, sense, rhs, ln) in rows {
        let coeffs = terms
            .into_iter()
            .map(|(v, a)| lookup(&p, &v, ln).map(|j| (j, a)))
            .collect::<Result<Vec<_>>>()?;
        p.add_constraint(name, &coeffs, sense, rhs);
    }
    Ok(p)
}

fn lookup(p: &LpProblem, name: &str, ln: usize) -> Result<usize> {
    p.names
        .iter()
        .position(|n| n == name.trim())
        .ok_or_else(|| Error::parse(ln, format!("unknown variable `{}`", name.trim())))
}

fn num(s: &str, ln: usize) -> Result<f64> {
    match s {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::parse(ln, format!("bad number `{s}`"))),
    }
}

/// Parses `[-]a name (+|-) b name ... [(+|-) c]`.
fn parse_expr(s: &str, ln: usize) -> Result<(Vec<(String, f64)>, f64)> {
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for tok in s.split_whitespace() {
        match tok {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            _ => {
                if let Some(rest) = tok.strip_prefix('-').filter(|r| !r.is_empty() && coef.is_none()) {
                    if let Ok(v) = rest.parse::<f64>() {
                        coef = Some(-sign * v);
                        continue;
                    }
                }
                if let Ok(v) = tok.parse::<f64>() {
                    if let Some(c) = coef.take() {
                        constant += c;
                    }
                    coef = Some(sign * v);
                } else {
                    let a = coef.take().unwrap_or(sign);
                    terms.push((tok.to_string(), a));
                }
                sign = 1.0;
            }
        }
    }
    if let Some(c) = coef {
        constant += c;
    }
    if terms.is_empty() && constant == 0.0 && s.trim().is_empty() {
        return Err(Error::parse(ln, "empty expression"));
    }
    Ok((terms, constant))
}
