//! CPLEX-style LP text files.
//!
//! Dialect written here:
//!
//! ```text
//! \ comment
//! Maximize
//!  obj: + 1 out_0
//! Subject To
//!  lin_1_0: + 0.5 in_0 - 1 x_1_0 + 1 s_1_0 = -0.1
//! Bounds
//!  -1 <= in_0 <= 1
//!  out_0 free
//! Generals
//!  z_1_0
//! End
//! ```
//!
//! Every variable gets an explicit line in `Bounds`, integers are listed
//! under `Generals` with their bounds (binaries as `0 <= z <= 1`), and an
//! objective constant, if any, is written as a trailing number. Long
//! expressions wrap onto indented continuation lines. Variables and rows are
//! written in model order, so identical models give identical bytes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Cmp, MipModel, ObjSense, VarRole};
use super::MipError;

const TERMS_PER_LINE: usize = 6;

/// Shortest round-trip representation, without exponent for ordinary magnitudes.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.is_infinite() {
        if v > 0.0 { "+inf".into() } else { "-inf".into() }
    } else if (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write_expr(out: &mut String, terms: &[(usize, f64)], model: &MipModel) {
    for (k, &(j, a)) in terms.iter().enumerate() {
        if k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if a < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", fmt_num(a.abs()), model.vars[j].name);
    }
}

pub fn write_lp(model: &MipModel) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ {} variables, {} constraints, {} integer",
        model.vars.len(),
        model.constraints.len(),
        model.num_integers()
    );
    out.push_str(match model.sense {
        ObjSense::Maximize => "Maximize\n",
        ObjSense::Minimize => "Minimize\n",
    });
    out.push_str(" obj:");
    if model.objective.is_empty() {
        match model.vars.first() {
            Some(v) => {
                let _ = write!(out, " 0 {}", v.name);
            }
            None => out.push_str(" 0"),
        }
    } else {
        write_expr(&mut out, &model.objective, model);
    }
    if model.obj_offset != 0.0 {
        let sign = if model.obj_offset < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {}", fmt_num(model.obj_offset.abs()));
    }
    out.push_str("\nSubject To\n");
    for c in &model.constraints {
        let _ = write!(out, " {}:", c.name);
        if c.terms.is_empty() {
            if let Some(v) = model.vars.first() {
                let _ = write!(out, " 0 {}", v.name);
            }
        }
        write_expr(&mut out, &c.terms, model);
        let _ = writeln!(out, " {} {}", c.cmp.symbol(), fmt_num(c.rhs));
    }
    out.push_str("Bounds\n");
    for v in &model.vars {
        let line = if v.lb == v.ub {
            format!(" {} = {}", v.name, fmt_num(v.lb))
        } else if v.lb == f64::NEG_INFINITY && v.ub == f64::INFINITY {
            format!(" {} free", v.name)
        } else if v.ub == f64::INFINITY {
            format!(" {} >= {}", v.name, fmt_num(v.lb))
        } else {
            format!(" {} <= {} <= {}", fmt_num(v.lb), v.name, fmt_num(v.ub))
        };
        out.push_str(&line);
        out.push('\n');
    }
    let ints: Vec<&str> = model.vars.iter().filter(|v| v.integer).map(|v| v.name.as_str()).collect();
    if !ints.is_empty() {
        out.push_str("Generals\n");
        for chunk in ints.chunks(TERMS_PER_LINE) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}

/// Variable name map written next to an exported model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameMap {
    pub variables: Vec<NamedVar>,
    /// Human-readable meaning of each network input, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedVar {
    pub name: String,
    pub integer: bool,
    #[serde(flatten)]
    pub role: VarRole,
}

impl NameMap {
    pub fn from_model(model: &MipModel, input_labels: Vec<String>) -> Self {
        Self {
            variables: model
                .vars
                .iter()
                .map(|v| NamedVar {
                    name: v.name.clone(),
                    integer: v.integer,
                    role: v.role,
                })
                .collect(),
            input_labels,
        }
    }
}

/// Path of the JSON name map belonging to an LP file: `model.lp` → `model.names.json`.
pub fn sidecar_path(lp_path: &Path) -> PathBuf {
    lp_path.with_extension("names.json")
}

/// Writes the LP file and its name-map sidecar; returns the sidecar path.
pub fn export_lp(model: &MipModel, path: impl AsRef<Path>, input_labels: Vec<String>) -> Result<PathBuf, MipError> {
    let path = path.as_ref();
    fs::write(path, write_lp(model))?;
    let side = sidecar_path(path);
    let map = NameMap::from_model(model, input_labels);
    let json = serde_json::to_string_pretty(&map).map_err(|e| MipError::Parse(e.to_string()))?;
    fs::write(&side, json + "\n")?;
    Ok(side)
}

pub fn read_name_map(path: impl AsRef<Path>) -> Result<NameMap, MipError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| MipError::Parse(e.to_string()))
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Generals,
    Binaries,
}

fn section_of(line: &str) -> Option<(Section, Option<ObjSense>)> {
    let l = line.to_ascii_lowercase();
    Some(match l.as_str() {
        "maximize" | "maximise" | "maximum" | "max" => (Section::Objective, Some(ObjSense::Maximize)),
        "minimize" | "minimise" | "minimum" | "min" => (Section::Objective, Some(ObjSense::Minimize)),
        "subject to" | "such that" | "st" | "s.t." => (Section::Constraints, None),
        "bounds" | "bound" => (Section::Bounds, None),
        "generals" | "general" | "gen" => (Section::Generals, None),
        "binaries" | "binary" | "bin" => (Section::Binaries, None),
        "end" => (Section::None, None),
        _ => return None,
    })
}

fn parse_num(tok: &str) -> Option<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

struct Reader {
    model: MipModel,
    index: HashMap<String, usize>,
}

impl Reader {
    fn var(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        let j = self.model.add_var(name, 0.0, f64::INFINITY, VarRole::Aux);
        self.index.insert(name.to_string(), j);
        j
    }

    /// Parses `[sign] [coef] name ...` plus optional trailing constant.
    fn expr(&mut self, toks: &[&str]) -> Result<(Vec<(usize, f64)>, f64), MipError> {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        let mut constant = 0.0;
        let mut sign = 1.0;
        let mut coef: Option<f64> = None;
        for &t in toks {
            match t {
                "+" => sign = 1.0,
                "-" => sign = -1.0,
                _ => {
                    if let Some(v) = parse_num(t) {
                        if let Some(prev) = coef {
                            constant += sign * prev;
                            sign = 1.0;
                        }
                        coef = Some(v);
                    } else {
                        let j = self.var(t);
                        let c = sign * coef.take().unwrap_or(1.0);
                        match terms.iter_mut().find(|(k, _)| *k == j) {
                            Some(e) => e.1 += c,
                            None => terms.push((j, c)),
                        }
                        sign = 1.0;
                    }
                }
            }
        }
        if let Some(v) = coef {
            constant += sign * v;
        }
        Ok((terms, constant))
    }
}

/// Splits an item of `name: body` form.
fn split_label(text: &str) -> (Option<&str>, &str) {
    match text.find(':') {
        Some(p) => (Some(text[..p].trim()), text[p + 1..].trim()),
        None => (None, text.trim()),
    }
}

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

pub fn read_lp(text: &str) -> Result<MipModel, MipError> {
    let mut rd = Reader {
        model: MipModel::new(),
        index: HashMap::new(),
    };
    let mut section = Section::None;
    let mut objective_text = String::new();
    // Constraint items: a new item starts at a line containing `name:`.
    let mut items: Vec<(usize, String)> = Vec::new();
    let mut bounds: Vec<(usize, String)> = Vec::new();
    let mut generals: Vec<String> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some((s, sense)) = section_of(line) {
            section = s;
            if let Some(sense) = sense {
                rd.model.sense = sense;
            }
            continue;
        }
        match section {
            Section::Objective => {
                objective_text.push(' ');
                objective_text.push_str(line);
            }
            Section::Constraints => {
                if line.contains(':') || items.is_empty() {
                    items.push((ln + 1, line.to_string()));
                } else {
                    let last = items.last_mut().unwrap();
                    last.1.push(' ');
                    last.1.push_str(line);
                }
            }
            Section::Bounds => bounds.push((ln + 1, line.to_string())),
            Section::Generals => generals.extend(line.split_whitespace().map(String::from)),
            Section::Binaries => binaries.extend(line.split_whitespace().map(String::from)),
            Section::None => {
                return Err(MipError::Parse(format!("line {}: text outside any section", ln + 1)));
            }
        }
    }

    // The writer lists every column in Bounds, in model order; declaring them
    // first keeps the column order stable across a round trip.
    for (_, line) in &bounds {
        for tok in tokens(line) {
            let op = matches!(tok, "<=" | "=<" | ">=" | "=>" | "=" | "<" | ">");
            if !op && parse_num(tok).is_none() && !tok.eq_ignore_ascii_case("free") {
                rd.var(tok);
            }
        }
    }

    let (_, body) = split_label(&objective_text);
    let (obj, offset) = rd.expr(&tokens(body))?;
    rd.model.objective = obj.into_iter().filter(|t| t.1 != 0.0).collect();
    rd.model.obj_offset = offset;

    for (k, (ln, item)) in items.iter().enumerate() {
        let (label, body) = split_label(item);
        let toks = tokens(body);
        let pos = toks
            .iter()
            .position(|t| matches!(*t, "<=" | "=<" | ">=" | "=>" | "=" | "<" | ">"))
            .ok_or_else(|| MipError::Parse(format!("line {ln}: constraint without comparison")))?;
        let cmp = match toks[pos] {
            "<=" | "=<" | "<" => Cmp::Le,
            ">=" | "=>" | ">" => Cmp::Ge,
            _ => Cmp::Eq,
        };
        let (terms, lhs_const) = rd.expr(&toks[..pos])?;
        let (rhs_terms, rhs_const) = rd.expr(&toks[pos + 1..])?;
        if !rhs_terms.is_empty() {
            return Err(MipError::Parse(format!("line {ln}: variables on the right-hand side")));
        }
        let name = label.map(String::from).unwrap_or_else(|| format!("r{k}"));
        let terms = terms.into_iter().filter(|t| t.1 != 0.0).collect();
        rd.model.add_constraint(name, terms, cmp, rhs_const - lhs_const);
    }

    for (ln, line) in &bounds {
        let toks = tokens(line);
        let bad = || MipError::Parse(format!("line {ln}: unrecognized bound '{line}'"));
        match toks.as_slice() {
            [name, free] if free.eq_ignore_ascii_case("free") => {
                let j = rd.var(name);
                rd.model.vars[j].lb = f64::NEG_INFINITY;
                rd.model.vars[j].ub = f64::INFINITY;
            }
            [l, "<=", name, "<=", u] => {
                let (l, u) = (parse_num(l).ok_or_else(bad)?, parse_num(u).ok_or_else(bad)?);
                let j = rd.var(name);
                rd.model.vars[j].lb = l;
                rd.model.vars[j].ub = u;
            }
            [a, op, b] => {
                let (name, value, op) = match (parse_num(a), parse_num(b)) {
                    (None, Some(v)) => (*a, v, *op),
                    (Some(v), None) => (
                        *b,
                        v,
                        match *op {
                            "<=" => ">=",
                            ">=" => "<=",
                            o => o,
                        },
                    ),
                    _ => return Err(bad()),
                };
                let j = rd.var(name);
                let v = &mut rd.model.vars[j];
                match op {
                    "=" => {
                        v.lb = value;
                        v.ub = value;
                    }
                    ">=" => v.lb = value,
                    "<=" => v.ub = value,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(bad()),
        }
    }
    for name in generals {
        let j = rd.var(&name);
        rd.model.vars[j].integer = true;
    }
    for name in binaries {
        let j = rd.var(&name);
        let v = &mut rd.model.vars[j];
        v.integer = true;
        v.lb = v.lb.max(0.0);
        v.ub = v.ub.min(1.0);
    }
    rd.model.validate()?;
    Ok(rd.model)
}

pub fn import_lp(path: impl AsRef<Path>) -> Result<MipModel, MipError> {
    read_lp(&fs::read_to_string(path)?)
}

/// Result of solving an LP file with HiGHS' own reader, keyed by column name.
#[cfg(feature = "highs")]
#[derive(Debug, Clone)]
pub struct ExternalSolve {
    pub optimal: bool,
    pub objective: f64,
    pub values: HashMap<String, f64>,
}

/// Reads an LP file with HiGHS' parser (not ours) and solves it.
#[cfg(feature = "highs")]
pub fn solve_lp_file_with_highs(path: impl AsRef<Path>) -> Result<ExternalSolve, MipError> {
    use std::ffi::{CStr, CString};
    use std::os::raw::c_char;

    use highs_sys::*;

    let cpath = CString::new(path.as_ref().to_string_lossy().as_bytes())
        .map_err(|_| MipError::Backend("path contains a NUL byte".into()))?;
    struct Handle(*mut std::os::raw::c_void);
    impl Drop for Handle {
        fn drop(&mut self) {
            // SAFETY: created by Highs_create and destroyed exactly once.
            unsafe { Highs_destroy(self.0) }
        }
    }
    // SAFETY: plain C API usage on a handle owned by this function.
    unsafe {
        let h = Handle(Highs_create());
        Highs_setBoolOptionValue(h.0, c"output_flag".as_ptr(), 0);
        Highs_setDoubleOptionValue(h.0, c"mip_rel_gap".as_ptr(), 1e-9);
        Highs_setDoubleOptionValue(h.0, c"mip_feasibility_tolerance".as_ptr(), 1e-9);
        Highs_setDoubleOptionValue(h.0, c"primal_feasibility_tolerance".as_ptr(), 1e-9);
        if Highs_readModel(h.0, cpath.as_ptr()) == kHighsStatusError {
            return Err(MipError::Backend(format!("HiGHS could not read {}", path.as_ref().display())));
        }
        if Highs_run(h.0) == kHighsStatusError {
            return Err(MipError::Backend("HiGHS run failed".into()));
        }
        let status = Highs_getModelStatus(h.0);
        let n = Highs_getNumCol(h.0).max(0) as usize;
        let m = Highs_getNumRow(h.0).max(0) as usize;
        let mut col = vec![0.0; n];
        let mut col_dual = vec![0.0; n];
        let mut row = vec![0.0; m];
        let mut row_dual = vec![0.0; m];
        Highs_getSolution(h.0, col.as_mut_ptr(), col_dual.as_mut_ptr(), row.as_mut_ptr(), row_dual.as_mut_ptr());
        let mut values = HashMap::with_capacity(n);
        let mut buf = vec![0 as c_char; 1024];
        for (i, v) in col.iter().enumerate() {
            if Highs_getColName(h.0, i as HighsInt, buf.as_mut_ptr()) != kHighsStatusError {
                let name = CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned();
                values.insert(name, *v);
            }
        }
        Ok(ExternalSolve {
            optimal: status == kHighsModelStatusOptimal,
            objective: Highs_getObjectiveValue(h.0),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -2.5, 1e-12, 3.0e17, 123456.789, -7.0] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn parse_handwritten() {
        let text = "Minimize\n obj: 2 x + 3 y - 1\nSubject To\n c1: x + y >= 2\n c2: x - y\n   <= 1\nBounds\n 0 <= x <= 4\n y <= 5\nGenerals\n y\nEnd\n";
        let m = read_lp(text).unwrap();
        assert_eq!(m.vars.len(), 2);
        assert_eq!(m.obj_offset, -1.0);
        assert_eq!(m.constraints[1].terms, vec![(0, 1.0), (1, -1.0)]);
        assert_eq!(m.constraints[1].rhs, 1.0);
        assert!(m.vars[1].integer);
        assert_eq!((m.vars[1].lb, m.vars[1].ub), (0.0, 5.0));
    }

    #[test]
    fn rejects_garbage_bound() {
        let text = "Minimize\n obj: x\nSubject To\nBounds\n x ~ 3\nEnd\n";
        assert!(matches!(read_lp(text), Err(MipError::Parse(_))));
    }
}
