//! CPLEX LP text format.
//!
//! Variables are written as `v<id>_<name>` and rows as `r<index>_<tag>` with characters
//! outside `[A-Za-z0-9_.]` replaced by `_`, so any LP reader accepts them and the ids
//! survive a round trip. Quadratic objective terms use the `[ ... ] / 2` form.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{LinearConstraint, MilpModel, Sense, SolverError, VarId, VarKind, VariableDef};

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn var_name(v: &VariableDef) -> String {
    format!("v{}_{}", v.id.0, sanitize(&v.name))
}

fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

/// Appends `+ c name` terms, wrapping long lines.
fn write_terms(
    out: &mut String,
    line_start: &mut usize,
    terms: impl Iterator<Item = (f64, String)>,
) {
    let mut first = true;
    for (c, name) in terms {
        if out.len() - *line_start > 200 {
            out.push_str("\n   ");
            *line_start = out.len() - 3;
        }
        let sign = if c < 0.0 { '-' } else { '+' };
        if first && c >= 0.0 {
            let _ = write!(out, " {} {}", num(c), name);
        } else {
            let _ = write!(out, " {sign} {} {}", num(c.abs()), name);
        }
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
}

pub fn export_lp(model: &MilpModel) -> String {
    let names: Vec<String> = model.variables.iter().map(var_name).collect();
    let mut out = String::from("\\ exported MILP model\nMinimize\n obj:");
    let mut line_start = out.rfind('\n').unwrap() + 1;
    write_terms(
        &mut out,
        &mut line_start,
        model
            .objective
            .iter()
            .map(|&(v, c)| (c, names[v.0].clone())),
    );
    if model.objective_constant != 0.0 {
        let c = model.objective_constant;
        let _ = write!(out, " {} {}", if c < 0.0 { '-' } else { '+' }, num(c.abs()));
    }
    if !model.quadratic_objective.is_empty() {
        out.push_str(" + [");
        let quad = model.quadratic_objective.iter().map(|&(i, j, c)| {
            let term = if i == j {
                format!("{} ^ 2", names[i.0])
            } else {
                format!("{} * {}", names[i.0], names[j.0])
            };
            (2.0 * c, term)
        });
        write_terms(&mut out, &mut line_start, quad);
        out.push_str(" ] / 2");
    }
    out.push_str("\nSubject To\n");
    for (r, c) in model.constraints.iter().enumerate() {
        line_start = out.len();
        let _ = write!(out, " r{r}_{}:", sanitize(&c.tag));
        write_terms(
            &mut out,
            &mut line_start,
            c.terms.iter().map(|&(v, k)| (k, names[v.0].clone())),
        );
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", num(c.rhs));
    }
    out.push_str("Bounds\n");
    for (v, name) in model.variables.iter().zip(&names) {
        if v.lb == f64::NEG_INFINITY && v.ub == f64::INFINITY {
            let _ = writeln!(out, " {name} free");
        } else {
            let _ = writeln!(out, " {} <= {name} <= {}", num(v.lb), num(v.ub));
        }
    }
    let bins: Vec<&String> = model
        .variables
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for n in bins {
            let _ = writeln!(out, " {n}");
        }
    }
    let gens: Vec<&String> = model
        .variables
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Integer)
        .map(|(_, n)| n)
        .collect();
    if !gens.is_empty() {
        out.push_str("Generals\n");
        for n in gens {
            let _ = writeln!(out, " {n}");
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(String),
}

fn tokenize(text: &str, line: usize) -> Result<Vec<(Tok, usize)>, SolverError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let err = |detail: String| SolverError::LpFormat { line, detail };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            toks.push((
                Tok::Num(s.parse().map_err(|_| err(format!("bad number `{s}`")))?),
                line,
            ));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
            {
                i += 1;
            }
            toks.push((Tok::Name(chars[start..i].iter().collect()), line));
        } else if matches!(c, '<' | '>' | '=') {
            let mut op = c.to_string();
            if i + 1 < chars.len() && matches!(chars[i + 1], '<' | '>' | '=') {
                op.push(chars[i + 1]);
                i += 1;
            }
            i += 1;
            let norm = match op.as_str() {
                "<" | "<=" | "=<" => "<=",
                ">" | ">=" | "=>" => ">=",
                "=" | "==" => "=",
                other => return Err(err(format!("unknown operator `{other}`"))),
            };
            toks.push((Tok::Op(norm.into()), line));
        } else if matches!(c, '+' | '-' | '*' | '^' | '[' | ']' | '/' | ':') {
            toks.push((Tok::Op(c.to_string()), line));
            i += 1;
        } else {
            return Err(err(format!("unexpected character `{c}`")));
        }
    }
    Ok(toks)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    Generals,
}

struct Builder {
    model: MilpModel,
    index: HashMap<String, VarId>,
    bounded: Vec<bool>,
}

impl Builder {
    fn var(&mut self, name: &str) -> VarId {
        if let Some(&v) = self.index.get(name) {
            return v;
        }
        let id = self.model.add_continuous(name, 0.0, f64::INFINITY);
        self.index.insert(name.to_string(), id);
        self.bounded.push(false);
        id
    }
}

struct Cursor<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }
    fn peek_at(&self, k: usize) -> Option<&'a Tok> {
        self.toks.get(self.pos + k).map(|t| &t.0)
    }
    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(0, |t| t.1)
    }
    fn next(&mut self) -> Option<&'a Tok> {
        let t = self.peek();
        self.pos += 1;
        t
    }
    fn err(&self, detail: impl Into<String>) -> SolverError {
        SolverError::LpFormat {
            line: self.line(),
            detail: detail.into(),
        }
    }
    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Some(Tok::Op(o)) if o == op)
    }
    fn optional_label(&mut self) -> Option<String> {
        if let (Some(Tok::Name(n)), Some(Tok::Op(o))) = (self.peek(), self.peek_at(1)) {
            if o == ":" {
                self.pos += 2;
                return Some(n.clone());
            }
        }
        None
    }
    fn signed_number(&mut self) -> Result<f64, SolverError> {
        let mut sign = 1.0;
        while let Some(Tok::Op(o)) = self.peek() {
            match o.as_str() {
                "+" => {}
                "-" => sign = -sign,
                _ => break,
            }
            self.pos += 1;
        }
        match self.next() {
            Some(Tok::Num(v)) => Ok(sign * v),
            Some(Tok::Name(n)) if matches!(n.to_ascii_lowercase().as_str(), "inf" | "infinity") => {
                Ok(sign * f64::INFINITY)
            }
            _ => Err(self.err("expected a number")),
        }
    }
}

#[derive(Default)]
struct Expr {
    linear: Vec<(String, f64)>,
    quadratic: Vec<(String, String, f64)>,
    constant: f64,
}

/// Parses terms until a relational operator or the end of input.
fn parse_expr(cur: &mut Cursor<'_>, allow_quadratic: bool) -> Result<Expr, SolverError> {
    let mut e = Expr::default();
    loop {
        match cur.peek() {
            None => break,
            Some(Tok::Op(o)) if matches!(o.as_str(), "<=" | ">=" | "=") => break,
            Some(Tok::Name(_)) if matches!(cur.peek_at(1), Some(Tok::Op(o)) if o == ":") => break,
            _ => {}
        }
        let mut sign = 1.0;
        let mut saw_sign = false;
        while let Some(Tok::Op(o)) = cur.peek() {
            match o.as_str() {
                "+" => {}
                "-" => sign = -sign,
                _ => break,
            }
            saw_sign = true;
            cur.pos += 1;
        }
        if cur.is_op("[") {
            if !allow_quadratic {
                return Err(cur.err("quadratic terms are only supported in the objective"));
            }
            cur.pos += 1;
            let mut quad = Vec::new();
            while !cur.is_op("]") {
                let c = match cur.peek() {
                    Some(Tok::Num(_)) | Some(Tok::Op(_)) => cur.signed_number()?,
                    _ => 1.0,
                };
                let a = match cur.next() {
                    Some(Tok::Name(n)) => n.clone(),
                    _ => return Err(cur.err("expected a variable in quadratic term")),
                };
                match cur.next() {
                    Some(Tok::Op(o)) if o == "^" => match cur.next() {
                        Some(Tok::Num(p)) if *p == 2.0 => quad.push((a.clone(), a, c)),
                        _ => return Err(cur.err("only squares are supported")),
                    },
                    Some(Tok::Op(o)) if o == "*" => match cur.next() {
                        Some(Tok::Name(b)) => quad.push((a, b.clone(), c)),
                        _ => return Err(cur.err("expected a variable after `*`")),
                    },
                    _ => return Err(cur.err("expected `^ 2` or `* var`")),
                }
                if cur.peek().is_none() {
                    return Err(cur.err("unterminated `[`"));
                }
            }
            cur.pos += 1;
            let mut div = 1.0;
            if cur.is_op("/") {
                cur.pos += 1;
                div = match cur.next() {
                    Some(Tok::Num(d)) if *d != 0.0 => *d,
                    _ => return Err(cur.err("expected a divisor after `]`")),
                };
            }
            e.quadratic
                .extend(quad.into_iter().map(|(a, b, c)| (a, b, sign * c / div)));
            continue;
        }
        match cur.next() {
            Some(Tok::Num(v)) => {
                let c = sign * v;
                match cur.peek() {
                    Some(Tok::Name(n)) if !matches!(cur.peek_at(1), Some(Tok::Op(o)) if o == ":") =>
                    {
                        e.linear.push((n.clone(), c));
                        cur.pos += 1;
                    }
                    _ => e.constant += c,
                }
            }
            Some(Tok::Name(n)) => e.linear.push((n.clone(), sign)),
            None if saw_sign => return Err(cur.err("dangling sign")),
            None => break,
            Some(Tok::Op(o)) => return Err(cur.err(format!("unexpected `{o}`"))),
        }
    }
    Ok(e)
}

/// Splits `v<id>_<rest>`/`r<id>_<rest>` back into `(id, rest)`.
fn split_prefixed(name: &str, prefix: char) -> Option<(usize, String)> {
    let rest = name.strip_prefix(prefix)?;
    let (digits, tail) = rest.split_once('_')?;
    Some((digits.parse().ok()?, tail.to_string()))
}

/// Reads a model written by [`export_lp`] or any LP file using the same subset of the
/// format. A `Maximize` objective is negated so the result still minimizes.
pub fn import_lp(text: &str) -> Result<MilpModel, SolverError> {
    let mut sections: Vec<(Section, Vec<(Tok, usize)>)> = Vec::new();
    let mut section = Section::None;
    let mut maximize = false;
    let mut seen_end = false;
    let mut toks = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('\\').next().unwrap_or("");
        let key = line.trim().to_ascii_lowercase();
        let next = match key.as_str() {
            "minimize" | "minimum" | "min" => Some(Section::Objective),
            "maximize" | "maximum" | "max" => {
                maximize = true;
                Some(Section::Objective)
            }
            "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
            "bounds" | "bound" => Some(Section::Bounds),
            "binaries" | "binary" | "bin" => Some(Section::Binaries),
            "generals" | "general" | "gen" => Some(Section::Generals),
            "semi-continuous" | "semi" | "sos" => {
                return Err(SolverError::LpFormat {
                    line: lineno + 1,
                    detail: format!("section `{key}` is not supported"),
                })
            }
            "end" => {
                seen_end = true;
                break;
            }
            _ => None,
        };
        if let Some(s) = next {
            sections.push((section, std::mem::take(&mut toks)));
            section = s;
            continue;
        }
        if section == Section::Bounds {
            // Bounds are one per line; keep each line as its own group.
            let line_toks = tokenize(line, lineno + 1)?;
            if !line_toks.is_empty() {
                sections.push((Section::Bounds, line_toks));
            }
            continue;
        }
        if section == Section::None && !key.is_empty() {
            return Err(SolverError::LpFormat {
                line: lineno + 1,
                detail: "content before the objective section".into(),
            });
        }
        toks.extend(tokenize(line, lineno + 1)?);
    }
    if !seen_end {
        return Err(SolverError::LpFormat {
            line: text.lines().count(),
            detail: "missing `End`".into(),
        });
    }
    sections.push((section, toks));

    let mut b = Builder {
        model: MilpModel::new(),
        index: HashMap::new(),
        bounded: Vec::new(),
    };
    let mut objective = Expr::default();
    let mut rows: Vec<(String, Expr, Sense, f64)> = Vec::new();
    let mut binaries = Vec::new();
    let mut generals = Vec::new();
    // First pass registers variables in order of appearance.
    for (sec, toks) in &sections {
        let mut cur = Cursor { toks, pos: 0 };
        match sec {
            Section::None => {}
            Section::Objective => {
                cur.optional_label();
                objective = parse_expr(&mut cur, true)?;
                if cur.peek().is_some() {
                    return Err(cur.err("unexpected token in objective"));
                }
            }
            Section::Constraints => {
                while cur.peek().is_some() {
                    let name = cur
                        .optional_label()
                        .unwrap_or_else(|| format!("R{}", rows.len()));
                    let e = parse_expr(&mut cur, false)?;
                    let sense = match cur.next() {
                        Some(Tok::Op(o)) if o == "<=" => Sense::Le,
                        Some(Tok::Op(o)) if o == ">=" => Sense::Ge,
                        Some(Tok::Op(o)) if o == "=" => Sense::Eq,
                        _ => return Err(cur.err("expected a relational operator")),
                    };
                    let rhs = cur.signed_number()? - e.constant;
                    rows.push((name, e, sense, rhs));
                }
            }
            Section::Bounds if toks.is_empty() => {}
            Section::Bounds => {
                let line = cur.line();
                let bad = || SolverError::LpFormat {
                    line,
                    detail: "unrecognized bound".into(),
                };
                let (name, lb, ub): (String, Option<f64>, Option<f64>) = match toks
                    .iter()
                    .map(|t| &t.0)
                    .collect::<Vec<_>>()[..]
                {
                    [Tok::Name(n), Tok::Name(f)] if f.eq_ignore_ascii_case("free") => {
                        (n.clone(), Some(f64::NEG_INFINITY), Some(f64::INFINITY))
                    }
                    _ => {
                        let lead_num = !matches!(cur.peek(), Some(Tok::Name(n)) if !matches!(n.to_ascii_lowercase().as_str(), "inf" | "infinity"));
                        let mut lb = None;
                        let mut ub = None;
                        if lead_num {
                            let v = cur.signed_number()?;
                            match cur.next() {
                                Some(Tok::Op(o)) if o == "<=" => lb = Some(v),
                                Some(Tok::Op(o)) if o == ">=" => ub = Some(v),
                                Some(Tok::Op(o)) if o == "=" => (lb, ub) = (Some(v), Some(v)),
                                _ => return Err(bad()),
                            }
                        }
                        let name = match cur.next() {
                            Some(Tok::Name(n)) => n.clone(),
                            _ => return Err(bad()),
                        };
                        if let Some(Tok::Op(o)) = cur.next() {
                            let v = cur.signed_number()?;
                            match o.as_str() {
                                "<=" => ub = Some(v),
                                ">=" => lb = Some(v),
                                "=" => (lb, ub) = (Some(v), Some(v)),
                                _ => return Err(bad()),
                            }
                        }
                        if cur.peek().is_some() {
                            return Err(bad());
                        }
                        (name, lb, ub)
                    }
                };
                let v = b.var(&name);
                b.bounded[v.0] = true;
                let def = &mut b.model.variables[v.0];
                if let Some(l) = lb {
                    def.lb = l;
                }
                if let Some(u) = ub {
                    def.ub = u;
                }
                continue;
            }
            Section::Binaries | Section::Generals => {
                let list = if *sec == Section::Binaries {
                    &mut binaries
                } else {
                    &mut generals
                };
                while let Some(t) = cur.next() {
                    match t {
                        Tok::Name(n) => list.push(n.clone()),
                        _ => return Err(cur.err("expected a variable name")),
                    }
                }
            }
        }
    }
    // Variables missing from the bounds listing are registered by first appearance.
    for name in objective
        .linear
        .iter()
        .map(|t| &t.0)
        .chain(objective.quadratic.iter().flat_map(|t| [&t.0, &t.1]))
        .chain(rows.iter().flat_map(|r| r.1.linear.iter().map(|t| &t.0)))
        .chain(binaries.iter())
        .chain(generals.iter())
    {
        b.var(name);
    }
    for name in &generals {
        let v = b.index[name];
        b.model.variables[v.0].kind = VarKind::Integer;
    }
    for name in &binaries {
        let v = b.index[name];
        let def = &mut b.model.variables[v.0];
        def.kind = VarKind::Binary;
        if !b.bounded[v.0] {
            def.ub = 1.0;
        }
        def.lb = def.lb.max(0.0);
        def.ub = def.ub.min(1.0);
    }

    // Restore exported ids and names when every variable carries a `v<id>_` prefix.
    let n = b.model.variables.len();
    let ids: Option<Vec<(usize, String)>> = b
        .model
        .variables
        .iter()
        .map(|v| split_prefixed(&v.name, 'v'))
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    if let Some(ids) = ids {
        let mut seen = vec![false; n];
        if ids
            .iter()
            .all(|(id, _)| *id < n && !std::mem::replace(&mut seen[*id], true))
        {
            for (old, (id, rest)) in ids.into_iter().enumerate() {
                perm[old] = id;
                b.model.variables[old].name = rest;
            }
        }
    }
    let mut vars: Vec<VariableDef> = b.model.variables.clone();
    for (old, v) in b.model.variables.iter().enumerate() {
        vars[perm[old]] = VariableDef {
            id: VarId(perm[old]),
            ..v.clone()
        };
    }
    let map = |name: &String| VarId(perm[b.index[name].0]);

    let sign = if maximize { -1.0 } else { 1.0 };
    let mut model = MilpModel {
        variables: vars,
        ..MilpModel::default()
    };
    model.objective = objective
        .linear
        .iter()
        .map(|(nm, c)| (map(nm), sign * c))
        .collect();
    model.objective_constant = sign * objective.constant;
    model.quadratic_objective = objective
        .quadratic
        .iter()
        .map(|(a, c2, c)| (map(a), map(c2), sign * c))
        .collect();
    for (name, e, sense, rhs) in rows {
        let tag = split_prefixed(&name, 'r').map_or(name, |(_, t)| t);
        let terms = e.linear.iter().map(|(nm, c)| (map(nm), *c)).collect();
        model.add_constraint(LinearConstraint {
            terms,
            sense,
            rhs,
            tag,
        });
    }
    Ok(model)
}
