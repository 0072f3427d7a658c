//! Reading and writing problems in the CPLEX LP text format.
//!
//! The writer lists every column in the `Bounds` section in column order, so
//! parsing an exported file reproduces the problem exactly. Numbers use the
//! shortest representation that round-trips.

use std::fmt::Write as _;

use thiserror::Error;

use super::problem::{Column, Constraint, MilpProblem, Relation, VarKind, VarTag};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct LpParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> LpParseError {
    LpParseError { line, message: message.into() }
}

fn write_terms(out: &mut String, p: &MilpProblem, terms: &[(usize, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (k, &(j, a)) in terms.iter().enumerate() {
        let name = &p.columns()[j].name;
        if a < 0.0 || (a == 0.0 && a.is_sign_negative()) {
            let _ = write!(out, " - {} {}", -a, name);
        } else if k == 0 {
            let _ = write!(out, " {a} {name}");
        } else {
            let _ = write!(out, " + {a} {name}");
        }
    }
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Serialises `p` in LP format.
pub fn export_lp(p: &MilpProblem) -> String {
    let mut out = String::from("Minimize\n obj:");
    write_terms(&mut out, p, p.objective());
    out.push_str("\nSubject To\n");
    for (i, row) in p.constraints().iter().enumerate() {
        let _ = write!(out, " c{}:", i + 1);
        write_terms(&mut out, p, &row.terms);
        let _ = writeln!(out, " {} {}", row.relation, row.rhs);
    }
    out.push_str("Bounds\n");
    for c in p.columns() {
        let _ = writeln!(out, " {} <= {} <= {}", fmt_bound(c.lower), c.name, fmt_bound(c.upper));
    }
    let binaries: Vec<&str> =
        p.columns().iter().filter(|c| c.kind == VarKind::Binary).map(|c| c.name.as_str()).collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in binaries.chunks(8) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Section {
    Start,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    End,
}

fn section_keyword(line: &str) -> Option<Section> {
    let lower = line.trim().to_ascii_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    match words.as_slice() {
        ["minimize"] | ["minimise"] | ["minimum"] | ["min"] => Some(Section::Objective),
        ["subject", "to"] | ["such", "that"] | ["st"] | ["s.t."] => Some(Section::Constraints),
        ["bounds"] | ["bound"] => Some(Section::Bounds),
        ["binaries"] | ["binary"] | ["bin"] => Some(Section::Binaries),
        ["end"] => Some(Section::End),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Sign(f64),
    Rel(Relation),
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "_.[]{}!\"#$%&()/,;?@'`|~".contains(c)
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Tok>, LpParseError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '+' || c == '-' {
            toks.push(Tok::Sign(if c == '+' { 1.0 } else { -1.0 }));
            i += 1;
        } else if c == '<' || c == '>' || c == '=' {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '<' | '>' | '=') {
                j += 1;
            }
            let op: String = chars[i..j].iter().collect();
            let rel = match op.as_str() {
                "<" | "<=" | "=<" => Relation::Le,
                ">" | ">=" | "=>" => Relation::Ge,
                "=" => Relation::Eq,
                _ => return Err(err(line, format!("unknown relation `{op}`"))),
            };
            toks.push(Tok::Rel(rel));
            i = j;
        } else if c.is_ascii_digit() || c == '.' {
            let mut j = i;
            while j < chars.len() {
                let d = chars[j];
                let exp_sign = (d == '+' || d == '-') && j > i && matches!(chars[j - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    j += 1;
                } else {
                    break;
                }
            }
            let s: String = chars[i..j].iter().collect();
            let v = s.parse::<f64>().map_err(|_| err(line, format!("bad number `{s}`")))?;
            toks.push(Tok::Num(v));
            i = j;
        } else if is_name_char(c) {
            let mut j = i;
            while j < chars.len() && is_name_char(chars[j]) {
                j += 1;
            }
            let s: String = chars[i..j].iter().collect();
            match s.to_ascii_lowercase().as_str() {
                "inf" | "infinity" => toks.push(Tok::Num(f64::INFINITY)),
                _ => toks.push(Tok::Name(s)),
            }
            i = j;
        } else {
            return Err(err(line, format!("unexpected character `{c}`")));
        }
    }
    Ok(toks)
}

struct Builder {
    columns: Vec<(String, Option<(f64, f64)>, bool)>,
    index: std::collections::HashMap<String, usize>,
}

impl Builder {
    fn var(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        self.columns.push((name.to_string(), None, false));
        self.index.insert(name.to_string(), self.columns.len() - 1);
        self.columns.len() - 1
    }
}

/// Parses a linear expression `[±] [coef] name (± [coef] name)*`; a lone `0`
/// denotes the empty expression.
fn parse_expr(b: &mut Builder, toks: &[Tok], line: usize) -> Result<Vec<(usize, f64)>, LpParseError> {
    if let [Tok::Num(v)] = toks {
        if *v == 0.0 {
            return Ok(Vec::new());
        }
    }
    let mut terms: Vec<(usize, f64)> = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let mut sign = 1.0;
        let mut saw_sign = false;
        while let Some(Tok::Sign(s)) = toks.get(i) {
            sign *= s;
            saw_sign = true;
            i += 1;
        }
        if !saw_sign && !terms.is_empty() {
            return Err(err(line, "expected `+` or `-` between terms"));
        }
        let mut coef = 1.0;
        if let Some(Tok::Num(v)) = toks.get(i) {
            coef = *v;
            i += 1;
        }
        match toks.get(i) {
            Some(Tok::Name(n)) => {
                let j = b.var(n);
                match terms.iter_mut().find(|(k, _)| *k == j) {
                    Some(t) => t.1 += sign * coef,
                    None => terms.push((j, sign * coef)),
                }
                i += 1;
            }
            _ => return Err(err(line, "expected a variable name")),
        }
    }
    Ok(terms)
}

fn number_of(toks: &[Tok], line: usize) -> Result<f64, LpParseError> {
    match toks {
        [Tok::Num(v)] => Ok(*v),
        [Tok::Sign(s), Tok::Num(v)] => Ok(s * v),
        _ => Err(err(line, "expected a number")),
    }
}

fn parse_bound(b: &mut Builder, toks: &[Tok], line: usize) -> Result<(), LpParseError> {
    if let [Tok::Name(n), Tok::Name(kw)] = toks {
        if kw.eq_ignore_ascii_case("free") {
            let j = b.var(n);
            b.columns[j].1 = Some((f64::NEG_INFINITY, f64::INFINITY));
            return Ok(());
        }
    }
    let rels: Vec<usize> = toks.iter().enumerate().filter(|(_, t)| matches!(t, Tok::Rel(_))).map(|(i, _)| i).collect();
    let rel_at = |i: usize| match toks[i] {
        Tok::Rel(r) => r,
        _ => unreachable!(),
    };
    let set = |b: &mut Builder, name: &str, lo: Option<f64>, hi: Option<f64>| {
        let j = b.var(name);
        let (cur_lo, cur_hi) = b.columns[j].1.unwrap_or((0.0, f64::INFINITY));
        b.columns[j].1 = Some((lo.unwrap_or(cur_lo), hi.unwrap_or(cur_hi)));
    };
    match rels.as_slice() {
        [r1, r2] => {
            let lo = number_of(&toks[..*r1], line)?;
            let name = match &toks[r1 + 1..*r2] {
                [Tok::Name(n)] => n.clone(),
                _ => return Err(err(line, "expected a variable between bounds")),
            };
            let hi = number_of(&toks[r2 + 1..], line)?;
            if rel_at(*r1) != Relation::Le || rel_at(*r2) != Relation::Le {
                return Err(err(line, "double bounds must use `<=`"));
            }
            set(b, &name, Some(lo), Some(hi));
        }
        [r] => {
            let rel = rel_at(*r);
            match (&toks[..*r], &toks[r + 1..]) {
                ([Tok::Name(n)], rhs) => {
                    let v = number_of(rhs, line)?;
                    match rel {
                        Relation::Le => set(b, n, None, Some(v)),
                        Relation::Ge => set(b, n, Some(v), None),
                        Relation::Eq => set(b, n, Some(v), Some(v)),
                    }
                }
                (lhs, [Tok::Name(n)]) => {
                    let v = number_of(lhs, line)?;
                    match rel {
                        Relation::Le => set(b, n, Some(v), None),
                        Relation::Ge => set(b, n, None, Some(v)),
                        Relation::Eq => set(b, n, Some(v), Some(v)),
                    }
                }
                _ => return Err(err(line, "malformed bound")),
            }
        }
        _ => return Err(err(line, "malformed bound")),
    }
    Ok(())
}

/// Parses LP text produced by [`export_lp`] (and the common subset of the
/// format: single-line or continued rows, `free` bounds, `Binaries`).
/// Columns are ordered as first declared in `Bounds`, then by first use.
pub fn parse_lp(text: &str) -> Result<MilpProblem, LpParseError> {
    let mut section = Section::Start;
    let mut b = Builder { columns: Vec::new(), index: Default::default() };
    let mut objective: Option<(Vec<Tok>, usize)> = None;
    let mut rows: Vec<(usize, Vec<Tok>)> = Vec::new();
    let mut pending: Option<(usize, Vec<Tok>)> = None;
    let mut bound_lines: Vec<(usize, Vec<Tok>)> = Vec::new();
    let mut binaries: Vec<(usize, String)> = Vec::new();
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split('\\').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if section == Section::End {
            return Err(err(line, "content after `End`"));
        }
        if let Some(next) = section_keyword(content) {
            if next == Section::Bounds || next == Section::Binaries || next == Section::End {
                if let Some((l, _)) = pending.take() {
                    return Err(err(l, "constraint without a relation"));
                }
            }
            if section == Section::Start && next != Section::Objective {
                return Err(err(line, "expected `Minimize`"));
            }
            section = next;
            continue;
        }
        match section {
            Section::Start => {
                let msg = if content.to_ascii_lowercase().starts_with("max") {
                    "only minimisation problems are supported".to_string()
                } else {
                    format!("expected `Minimize`, found `{content}`")
                };
                return Err(err(line, msg));
            }
            Section::Objective => {
                let body = content.split_once(':').map_or(content, |(_, r)| r);
                let mut toks = tokenize(body, line)?;
                match &mut objective {
                    Some((t, _)) => t.append(&mut toks),
                    None => objective = Some((toks, line)),
                }
            }
            Section::Constraints => {
                let mut toks;
                let start;
                match pending.take() {
                    Some((l, t)) => {
                        start = l;
                        toks = t;
                        toks.extend(tokenize(content, line)?);
                    }
                    None => {
                        start = line;
                        let body = content.split_once(':').map_or(content, |(_, r)| r);
                        toks = tokenize(body, line)?;
                    }
                }
                let has_rhs = toks.iter().position(|t| matches!(t, Tok::Rel(_))).is_some_and(|r| {
                    matches!(toks.last(), Some(Tok::Num(_))) && r + 1 < toks.len()
                });
                if has_rhs {
                    rows.push((start, toks));
                } else {
                    pending = Some((start, toks));
                }
            }
            Section::Bounds => bound_lines.push((line, tokenize(content, line)?)),
            Section::Binaries => {
                binaries.extend(content.split_whitespace().map(|n| (line, n.to_string())));
            }
            Section::End => unreachable!(),
        }
    }
    if section != Section::End {
        return Err(err(last_line + 1, "unexpected end of file (missing `End`)"));
    }

    // Bounds first so they fix the column order.
    for (line, toks) in &bound_lines {
        parse_bound(&mut b, toks, *line)?;
    }
    let objective = match objective {
        Some((toks, line)) => parse_expr(&mut b, &toks, line)?,
        None => Vec::new(),
    };
    let mut constraints = Vec::with_capacity(rows.len());
    for (line, toks) in rows {
        let r = toks.iter().position(|t| matches!(t, Tok::Rel(_))).expect("row has a relation");
        let relation = match toks[r] {
            Tok::Rel(rel) => rel,
            _ => unreachable!(),
        };
        let terms = parse_expr(&mut b, &toks[..r], line)?;
        let rhs = number_of(&toks[r + 1..], line)?;
        constraints.push(Constraint { terms, relation, rhs });
    }
    for (line, name) in binaries {
        let j = match b.index.get(&name) {
            Some(&j) => j,
            None => return Err(err(line, format!("binary `{name}` does not appear in the model"))),
        };
        b.columns[j].2 = true;
    }
    let columns = b
        .columns
        .into_iter()
        .map(|(name, bounds, binary)| {
            let (lower, upper) = bounds.unwrap_or(if binary { (0.0, 1.0) } else { (0.0, f64::INFINITY) });
            let tag = VarTag::from_name(&name);
            let kind = if binary { VarKind::Binary } else { VarKind::Continuous };
            Column { name, kind, lower, upper, tag }
        })
        .collect();
    Ok(MilpProblem::from_parts(columns, objective, constraints))
}
