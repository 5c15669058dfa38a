//! Text front end for the mini-IR. See `docs/mini-ir.md` for the grammar.

use std::collections::HashMap;

use super::ast::*;
use super::{Location, Value, DEFAULT_VERIFY_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unbalanced region {0}")]
    UnbalancedRegion(u32),
    #[error("use before def of register %{0}")]
    UseBeforeDef(String),
    #[error("unknown function `@{0}`")]
    UnknownFunction(String),
    #[error("duplicate function `@{0}`")]
    DuplicateFunction(String),
    #[error("function `@{0}` can fall off its end (last instruction must be br or ret)")]
    FallThrough(String),
    #[error("function `@{0}` takes parameters and cannot be called")]
    CallWithParams(String),
    #[error("shift amount {0} out of range [0, 63]")]
    ShiftOutOfRange(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub kind: ParseErrorKind,
}

type PResult<T> = Result<T, ParseError>;

struct Cursor<'a> {
    line: u32,
    text: &'a str,
    // byte offset into the original line of `text`'s first char
    base: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, at: &str, kind: ParseErrorKind) -> ParseError {
        let col = at.as_ptr() as usize - self.text.as_ptr() as usize + self.base + 1;
        ParseError {
            line: self.line,
            col: col as u32,
            kind,
        }
    }

    fn syntax(&self, at: &str, msg: impl Into<String>) -> ParseError {
        self.err(at, ParseErrorKind::Syntax(msg.into()))
    }
}

pub(crate) fn parse_literal(s: &str) -> Option<Value> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix("f0x") {
        return u64::from_str_radix(hex, 16)
            .ok()
            .map(|b| Value::from_bits(super::ValueTag::Float, b));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    if let Some(hex) = body.strip_prefix("0x") {
        let v = u64::from_str_radix(hex, 16).ok()? as i64;
        return Some(Value::int(if neg { v.wrapping_neg() } else { v }));
    }
    if body.is_empty() || !body.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    if body.chars().all(|c| c.is_ascii_digit()) {
        return s.parse::<i64>().ok().map(Value::int);
    }
    s.parse::<f64>().ok().map(Value::float)
}

/// Input bindings, one `LOCATION = LITERAL` per line. `;` and `#` start
/// comments. Later bindings of the same location win.
pub fn parse_inputs(text: &str) -> Result<std::collections::BTreeMap<Location, Value>, ParseError> {
    let mut out = std::collections::BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split([';', '#']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ParseError {
            line: n as u32 + 1,
            col: 1,
            kind: ParseErrorKind::Syntax(msg),
        };
        let (loc, val) = line.split_once('=').ok_or_else(|| err(format!("expected `LOCATION = VALUE`, got `{line}`")))?;
        let loc: Location = loc.trim().parse().map_err(|e| err(format!("{e}")))?;
        let val = parse_literal(val).ok_or_else(|| err(format!("bad literal `{}`", val.trim())))?;
        out.insert(loc, val);
    }
    Ok(out)
}

#[derive(Default)]
struct FuncBuilder {
    name: String,
    params: Vec<RegId>,
    registers: Vec<String>,
    reg_ids: HashMap<String, RegId>,
    body: Vec<Instr>,
    labels: Vec<Label>,
    label_ids: HashMap<String, LabelId>,
    label_defined: Vec<Option<u32>>,
    label_first_use: Vec<(u32, u32)>,
    pending_calls: Vec<(usize, String, u32, u32)>,
    region_stack: Vec<(u32, u32, u32)>,
}

impl FuncBuilder {
    fn reg(&mut self, name: &str) -> RegId {
        if let Some(&id) = self.reg_ids.get(name) {
            return id;
        }
        let id = self.registers.len() as RegId;
        self.registers.push(name.to_string());
        self.reg_ids.insert(name.to_string(), id);
        id
    }

    fn label(&mut self, name: &str, line: u32, col: u32) -> LabelId {
        if let Some(&id) = self.label_ids.get(name) {
            return id;
        }
        let id = self.labels.len() as LabelId;
        self.labels.push(Label {
            name: name.to_string(),
            pos: usize::MAX,
        });
        self.label_ids.insert(name.to_string(), id);
        self.label_defined.push(None);
        self.label_first_use.push((line, col));
        id
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

fn split_commas(s: &str) -> Vec<&str> {
    // Commas never occur inside `M[...]`, so a flat split is enough.
    s.split(',').map(str::trim).collect()
}

fn parse_operand(cur: &Cursor, fb: &mut FuncBuilder, s: &str) -> PResult<Operand> {
    if let Some(name) = s.strip_prefix('%') {
        if !is_ident(name) {
            return Err(cur.syntax(s, format!("bad register name `{s}`")));
        }
        return Ok(Operand::Reg(fb.reg(name)));
    }
    parse_literal(s)
        .map(Operand::Imm)
        .ok_or_else(|| cur.syntax(s, format!("expected register or literal, found `{s}`")))
}

fn parse_memref(cur: &Cursor, fb: &mut FuncBuilder, s: &str) -> PResult<MemRef> {
    let inner = s
        .strip_prefix("M[")
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| cur.syntax(s, format!("expected memory operand M[...], found `{s}`")))?
        .trim();
    let (base, offset) = match inner.find(['+', '-']).filter(|&i| i > 0) {
        Some(i) => {
            let sign = if inner.as_bytes()[i] == b'+' { 1 } else { -1 };
            let off_text = inner[i + 1..].trim();
            let off: i64 = off_text
                .parse()
                .map_err(|_| cur.syntax(off_text, format!("bad memory offset `{off_text}`")))?;
            (inner[..i].trim(), sign * off)
        }
        None => (inner, 0),
    };
    let base = parse_operand(cur, fb, base)?;
    if let Operand::Imm(v) = base {
        let Some(a) = v.as_int() else {
            return Err(cur.syntax(s, "memory address must be an integer"));
        };
        // Fold constant addresses into the offset so the base is always 0.
        return Ok(MemRef {
            base: Operand::Imm(Value::int(0)),
            offset: a + offset,
        });
    }
    Ok(MemRef { base, offset })
}

fn parse_region_id(cur: &Cursor, s: &str) -> PResult<u32> {
    s.trim()
        .parse()
        .map_err(|_| cur.syntax(s, format!("bad region id `{s}`")))
}

fn expect_args<'a>(cur: &Cursor, at: &'a str, args: &'a str, n: usize) -> PResult<Vec<&'a str>> {
    let parts: Vec<&str> = if args.trim().is_empty() {
        Vec::new()
    } else {
        split_commas(args)
    };
    if parts.len() != n {
        return Err(cur.syntax(at, format!("expected {n} operand(s), found {}", parts.len())));
    }
    Ok(parts)
}

fn parse_instruction(cur: &Cursor, fb: &mut FuncBuilder, text: &str) -> PResult<Inst> {
    let (dst, rhs) = match text.split_once('=') {
        Some((d, r)) if d.trim_start().starts_with('%') => {
            let d = d.trim();
            let name = &d[1..];
            if !is_ident(name) {
                return Err(cur.syntax(d, format!("bad destination register `{d}`")));
            }
            (Some(name), r.trim())
        }
        _ => (None, text.trim()),
    };
    let (mnemonic, args) = match rhs.split_once(char::is_whitespace) {
        Some((m, a)) => (m, a.trim()),
        None => (rhs, ""),
    };
    let need_dst = |fb: &mut FuncBuilder| -> PResult<RegId> {
        match dst {
            Some(d) => Ok(fb.reg(d)),
            None => Err(cur.syntax(mnemonic, format!("`{mnemonic}` needs a destination register"))),
        }
    };
    let no_dst = || -> PResult<()> {
        match dst {
            Some(_) => Err(cur.syntax(mnemonic, format!("`{mnemonic}` does not produce a value"))),
            None => Ok(()),
        }
    };

    let binop = match mnemonic {
        "iadd" => Some(BinOp::IAdd),
        "isub" => Some(BinOp::ISub),
        "imul" => Some(BinOp::IMul),
        "idiv" => Some(BinOp::IDiv),
        "fadd" => Some(BinOp::FAdd),
        "fsub" => Some(BinOp::FSub),
        "fmul" => Some(BinOp::FMul),
        "fdiv" => Some(BinOp::FDiv),
        "shl" => Some(BinOp::Shl),
        "shr" => Some(BinOp::Shr),
        _ => None,
    };
    if let Some(op) = binop {
        let a = expect_args(cur, mnemonic, args, 2)?;
        let lhs = parse_operand(cur, fb, a[0])?;
        let rhs = parse_operand(cur, fb, a[1])?;
        if matches!(op, BinOp::Shl | BinOp::Shr) {
            if let Operand::Imm(v) = rhs {
                let amount = v.as_int().unwrap_or(-1);
                if !(0..=63).contains(&amount) {
                    return Err(cur.err(a[1], ParseErrorKind::ShiftOutOfRange(amount)));
                }
            }
        }
        let dst = need_dst(fb)?;
        return Ok(Inst::Binary { op, dst, lhs, rhs });
    }

    let inst = match Opcode::from_str_prefix(mnemonic) {
        Some(Opcode::ICmp(pred)) | Some(Opcode::FCmp(pred)) => {
            let a = expect_args(cur, mnemonic, args, 2)?;
            let lhs = parse_operand(cur, fb, a[0])?;
            let rhs = parse_operand(cur, fb, a[1])?;
            let dst = need_dst(fb)?;
            if mnemonic.starts_with('i') {
                Inst::ICmp { pred, dst, lhs, rhs }
            } else {
                Inst::FCmp { pred, dst, lhs, rhs }
            }
        }
        Some(Opcode::TruncF2I) | Some(Opcode::ExtI2F) | Some(Opcode::Mov) => {
            let a = expect_args(cur, mnemonic, args, 1)?;
            let src = parse_operand(cur, fb, a[0])?;
            let dst = need_dst(fb)?;
            match mnemonic {
                "trunc_f2i" => Inst::TruncF2I { dst, src },
                "ext_i2f" => Inst::ExtI2F { dst, src },
                _ => Inst::Mov { dst, src },
            }
        }
        Some(Opcode::Load) => {
            let a = expect_args(cur, mnemonic, args, 1)?;
            let addr = parse_memref(cur, fb, a[0])?;
            let dst = need_dst(fb)?;
            Inst::Load { dst, addr }
        }
        Some(Opcode::Store) => {
            no_dst()?;
            let a = expect_args(cur, mnemonic, args, 2)?;
            let addr = parse_memref(cur, fb, a[0])?;
            let value = parse_operand(cur, fb, a[1])?;
            Inst::Store { addr, value }
        }
        Some(Opcode::Br) => {
            no_dst()?;
            let a = expect_args(cur, mnemonic, args, 1)?;
            let (line, col) = (cur.line, cur.err(a[0], ParseErrorKind::Syntax(String::new())).col);
            Inst::Br {
                target: fb.label(a[0], line, col),
            }
        }
        Some(Opcode::BrCond) => {
            no_dst()?;
            let a = expect_args(cur, mnemonic, args, 3)?;
            let cond = parse_operand(cur, fb, a[0])?;
            let col_of = |s: &str| cur.err(s, ParseErrorKind::Syntax(String::new())).col;
            let then_target = fb.label(a[1], cur.line, col_of(a[1]));
            let else_target = fb.label(a[2], cur.line, col_of(a[2]));
            Inst::BrCond {
                cond,
                then_target,
                else_target,
            }
        }
        Some(Opcode::Call) => {
            let a = expect_args(cur, mnemonic, args, 1)?;
            let name = a[0]
                .strip_prefix('@')
                .filter(|n| is_ident(n))
                .ok_or_else(|| cur.syntax(a[0], "expected @function"))?;
            let dst = dst.map(|d| fb.reg(d));
            let col = cur.err(a[0], ParseErrorKind::Syntax(String::new())).col;
            fb.pending_calls.push((fb.body.len(), name.to_string(), cur.line, col));
            Inst::Call { dst, callee: u32::MAX }
        }
        Some(Opcode::Ret) => {
            no_dst()?;
            let value = if args.is_empty() {
                None
            } else {
                let a = expect_args(cur, mnemonic, args, 1)?;
                Some(parse_operand(cur, fb, a[0])?)
            };
            Inst::Ret { value }
        }
        Some(Opcode::Print { digits }) => {
            no_dst()?;
            let a = expect_args(cur, mnemonic, args, 1)?;
            let value = parse_operand(cur, fb, a[0])?;
            if digits.is_some_and(|d| d > 17) {
                return Err(cur.syntax(mnemonic, "print precision must be at most 17 digits"));
            }
            Inst::Print { value, digits }
        }
        Some(Opcode::VerifyCheck) => {
            no_dst()?;
            expect_args(cur, mnemonic, args, 0)?;
            Inst::VerifyCheck
        }
        _ if mnemonic == "region_begin" || mnemonic == "region_end" => {
            no_dst()?;
            let id = parse_region_id(cur, args)?;
            if mnemonic == "region_begin" {
                Inst::RegionBegin(id)
            } else {
                Inst::RegionEnd(id)
            }
        }
        _ => return Err(cur.syntax(mnemonic, format!("unknown opcode `{mnemonic}`"))),
    };
    Ok(inst)
}

impl Opcode {
    /// Mnemonic lookup for opcodes whose textual form is a single token.
    fn from_str_prefix(s: &str) -> Option<Opcode> {
        s.parse().ok()
    }
}

/// Parse and validate a mini-IR program.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut functions: Vec<FuncBuilder> = Vec::new();
    let mut current: Option<FuncBuilder> = None;
    let mut entry_name: Option<(String, u32)> = None;
    let mut verify: Option<VerifySpec> = None;
    let mut memory_size = None;
    let mut data: Vec<(u64, Value)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = (lineno + 1) as u32;
        let code = raw.split(';').next().unwrap_or("");
        let trimmed = code.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cur = Cursor {
            line,
            text: raw,
            base: 0,
        };

        if let Some(fb) = current.as_mut() {
            if trimmed == "}" {
                functions.push(current.take().unwrap());
                continue;
            }
            if let Some(label) = trimmed.strip_suffix(':') {
                if !is_ident(label) {
                    return Err(cur.syntax(trimmed, format!("bad label `{label}`")));
                }
                let col = cur.err(trimmed, ParseErrorKind::Syntax(String::new())).col;
                let id = fb.label(label, line, col);
                if fb.label_defined[id as usize].is_some() {
                    return Err(cur.err(trimmed, ParseErrorKind::DuplicateLabel(label.to_string())));
                }
                fb.label_defined[id as usize] = Some(line);
                fb.labels[id as usize].pos = fb.body.len();
                continue;
            }
            let inst = if let Some(id) = trimmed.strip_prefix("#region") {
                Inst::RegionBegin(parse_region_id(&cur, id)?)
            } else if let Some(id) = trimmed.strip_prefix("#endregion") {
                Inst::RegionEnd(parse_region_id(&cur, id)?)
            } else {
                parse_instruction(&cur, fb, trimmed)?
            };
            match inst {
                Inst::RegionBegin(id) => fb.region_stack.push((id, line, 0)),
                Inst::RegionEnd(id) => match fb.region_stack.pop() {
                    Some((open, _, _)) if open == id => {}
                    _ => return Err(cur.err(trimmed, ParseErrorKind::UnbalancedRegion(id))),
                },
                _ => {}
            }
            fb.body.push(Instr { inst, line });
            continue;
        }

        if let Some(rest) = trimmed.strip_prefix(".entry") {
            let name = rest.trim().strip_prefix('@').filter(|n| is_ident(n));
            let Some(name) = name else {
                return Err(cur.syntax(trimmed, "expected `.entry @name`"));
            };
            entry_name = Some((name.to_string(), line));
        } else if let Some(rest) = trimmed.strip_prefix(".memory") {
            let size: u64 = rest
                .trim()
                .parse()
                .map_err(|_| cur.syntax(rest, "expected memory size"))?;
            memory_size = Some(size);
        } else if let Some(rest) = trimmed.strip_prefix(".data") {
            let (loc, values) = rest
                .split_once('=')
                .ok_or_else(|| cur.syntax(rest, "expected `.data M[addr] = v, ...`"))?;
            let Ok(Location::Mem { addr }) = loc.trim().parse::<Location>() else {
                return Err(cur.syntax(loc, "expected memory location M[addr]"));
            };
            for (i, v) in split_commas(values).into_iter().enumerate() {
                let value = parse_literal(v).ok_or_else(|| cur.syntax(v, format!("bad literal `{v}`")))?;
                data.push((addr + i as u64, value));
            }
        } else if let Some(rest) = trimmed.strip_prefix(".verify") {
            let (locs, tol) = match rest.split_once(" tol ") {
                Some((l, t)) => {
                    let tol: f64 = t
                        .trim()
                        .parse()
                        .map_err(|_| cur.syntax(t, "bad tolerance"))?;
                    (l, tol)
                }
                None => (rest, DEFAULT_VERIFY_TOLERANCE),
            };
            let mut locations = Vec::new();
            for l in split_commas(locs) {
                locations.push(l.parse().map_err(|e| cur.syntax(l, format!("{e}")))?);
            }
            verify = Some(VerifySpec {
                locations,
                tolerance: tol,
            });
        } else if let Some(rest) = trimmed.strip_prefix('@') {
            let header = rest
                .strip_suffix('{')
                .ok_or_else(|| cur.syntax(trimmed, "expected `{` after function header"))?
                .trim();
            let (name, params) = match header.split_once('(') {
                Some((n, p)) => {
                    let p = p
                        .trim()
                        .strip_suffix(')')
                        .ok_or_else(|| cur.syntax(header, "unclosed parameter list"))?;
                    (n.trim(), p)
                }
                None => (header, ""),
            };
            if !is_ident(name) {
                return Err(cur.syntax(header, format!("bad function name `{name}`")));
            }
            if functions.iter().any(|f| f.name == name) {
                return Err(cur.err(trimmed, ParseErrorKind::DuplicateFunction(name.to_string())));
            }
            let mut fb = FuncBuilder {
                name: name.to_string(),
                ..Default::default()
            };
            for p in split_commas(params).into_iter().filter(|p| !p.is_empty()) {
                let reg = p
                    .strip_prefix('%')
                    .filter(|n| is_ident(n))
                    .ok_or_else(|| cur.syntax(p, format!("bad parameter `{p}`")))?;
                let id = fb.reg(reg);
                fb.params.push(id);
            }
            current = Some(fb);
        } else {
            return Err(cur.syntax(trimmed, format!("unexpected `{trimmed}` outside a function")));
        }
    }

    if let Some(fb) = current {
        return Err(ParseError {
            line: text.lines().count() as u32,
            col: 1,
            kind: ParseErrorKind::Syntax(format!("function `@{}` is missing its closing `}}`", fb.name)),
        });
    }

    let names: HashMap<String, u32> = functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.clone(), i as u32))
        .collect();
    let (entry_name, entry_line) = entry_name.unwrap_or_else(|| ("main".to_string(), 1));
    let entry = *names.get(&entry_name).ok_or(ParseError {
        line: entry_line,
        col: 1,
        kind: ParseErrorKind::UnknownFunction(entry_name.clone()),
    })?;

    let mut out = Vec::with_capacity(functions.len());
    let has_params: Vec<bool> = functions.iter().map(|f| !f.params.is_empty()).collect();
    for mut fb in functions {
        if let Some(&(id, line, _)) = fb.region_stack.last() {
            return Err(ParseError {
                line,
                col: 1,
                kind: ParseErrorKind::UnbalancedRegion(id),
            });
        }
        for (id, defined) in fb.label_defined.iter().enumerate() {
            if defined.is_none() {
                let (line, col) = fb.label_first_use[id];
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::UndefinedLabel(fb.labels[id].name.clone()),
                });
            }
        }
        for (pos, name, line, col) in std::mem::take(&mut fb.pending_calls) {
            let callee = *names.get(&name).ok_or(ParseError {
                line,
                col,
                kind: ParseErrorKind::UnknownFunction(name.clone()),
            })?;
            if has_params[callee as usize] {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::CallWithParams(name),
                });
            }
            if let Inst::Call { callee: c, .. } = &mut fb.body[pos].inst {
                *c = callee;
            }
        }
        let func = Function {
            name: fb.name,
            params: fb.params,
            registers: fb.registers,
            body: fb.body,
            labels: fb.labels,
        };
        check_function(&func)?;
        out.push(func);
    }

    Ok(Program {
        functions: out,
        entry,
        verify,
        memory_size,
        data,
    })
}

fn successors(func: &Function, pc: usize) -> Vec<usize> {
    match &func.body[pc].inst {
        Inst::Br { target } => vec![func.label_pos(*target)],
        Inst::BrCond {
            then_target,
            else_target,
            ..
        } => vec![func.label_pos(*then_target), func.label_pos(*else_target)],
        Inst::Ret { .. } => Vec::new(),
        _ => vec![pc + 1],
    }
}

/// Fall-through and use-before-def checks. Definedness is a forward
/// must-analysis: a register is defined at `pc` only if every path from
/// the entry defines it first.
fn check_function(func: &Function) -> PResult<()> {
    let n = func.body.len();
    let err_at = |pc: usize, kind| ParseError {
        line: func.body.get(pc).map_or(1, |i| i.line),
        col: 1,
        kind,
    };
    match func.body.last() {
        Some(last) if last.inst.is_terminator() => {}
        _ => return Err(err_at(n.saturating_sub(1), ParseErrorKind::FallThrough(func.name.clone()))),
    }
    for label in &func.labels {
        if label.pos >= n {
            return Err(err_at(n - 1, ParseErrorKind::UndefinedLabel(label.name.clone())));
        }
    }

    let nregs = func.registers.len();
    let words = nregs.div_ceil(64).max(1);
    let full = vec![u64::MAX; words];
    // defined_in[pc]: registers definitely defined on entry to pc.
    let mut defined_in: Vec<Option<Vec<u64>>> = vec![None; n];
    let mut entry_set = vec![0u64; words];
    for &p in &func.params {
        entry_set[p as usize / 64] |= 1 << (p % 64);
    }
    defined_in[0] = Some(entry_set);
    let mut work = vec![0usize];
    while let Some(pc) = work.pop() {
        let mut out = defined_in[pc].clone().unwrap_or_else(|| full.clone());
        if let Some(d) = func.body[pc].inst.def() {
            out[d as usize / 64] |= 1 << (d % 64);
        }
        for succ in successors(func, pc) {
            let merged = match &defined_in[succ] {
                None => out.clone(),
                Some(prev) => prev.iter().zip(&out).map(|(a, b)| a & b).collect(),
            };
            if defined_in[succ].as_ref() != Some(&merged) {
                defined_in[succ] = Some(merged);
                work.push(succ);
            }
        }
    }

    for (pc, instr) in func.body.iter().enumerate() {
        let Some(defined) = &defined_in[pc] else {
            continue; // unreachable
        };
        for op in instr.inst.operands() {
            if let Operand::Reg(r) = op {
                if defined[r as usize / 64] & (1 << (r % 64)) == 0 {
                    return Err(ParseError {
                        line: instr.line,
                        col: 1,
                        kind: ParseErrorKind::UseBeforeDef(func.registers[r as usize].clone()),
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOT: &str = include_str!("../../fixtures/dot_product.mir");

    #[test]
    fn dot_product_fixture_parses() {
        let p = parse_program(DOT).unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.region_ids().len(), 1);
    }

    #[test]
    fn display_round_trips() {
        let p = parse_program(DOT).unwrap();
        let again = parse_program(&p.to_string()).unwrap();
        assert_eq!(p.to_string(), again.to_string());
        assert_eq!(p.functions[0].body.len(), again.functions[0].body.len());
    }

    #[test]
    fn unbalanced_region_is_rejected() {
        let err = parse_program("@main {\n  region_end 2\n  ret\n}\n").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnbalancedRegion(2));
        assert!(err.to_string().contains("unbalanced region"));
        let err = parse_program("@main {\n  #region 1\n  ret\n}\n").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnbalancedRegion(1));
    }

    #[test]
    fn use_before_def_is_rejected() {
        let err = parse_program("@main {\n  %x = iadd %t, 1\n  ret\n}\n").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UseBeforeDef("t".into()));
        assert!(err.to_string().contains("use before def"));
        assert_eq!(err.line, 2);
    }

    #[test]
    fn use_before_def_on_one_path_only() {
        let src = "@main {\n  %c = mov 1\n  br_cond %c, a, b\na:\n  %t = mov 2\n  br join\nb:\n  br join\njoin:\n  print %t\n  ret\n}\n";
        let err = parse_program(src).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UseBeforeDef("t".into()));
    }

    #[test]
    fn loops_do_not_confuse_definedness() {
        let src = "@main {\n  %i = mov 0\nloop:\n  %i = iadd %i, 1\n  %c = icmp.lt %i, 4\n  br_cond %c, loop, done\ndone:\n  ret\n}\n";
        parse_program(src).unwrap();
    }

    #[test]
    fn undefined_label_is_rejected() {
        let err = parse_program("@main {\n  br nowhere\n}\n").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UndefinedLabel("nowhere".into()));
        assert_eq!((err.line, err.col), (2, 6));
    }

    #[test]
    fn syntax_errors_carry_columns() {
        let err = parse_program("@main {\n  %x = frob 1, 2\n  ret\n}\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.col, 8);
        assert!(matches!(err.kind, ParseErrorKind::Syntax(_)));
    }

    #[test]
    fn shift_amount_range_is_checked() {
        let err = parse_program("@main {\n  %x = shl 1, 64\n  ret\n}\n").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::ShiftOutOfRange(64));
    }

    #[test]
    fn fall_through_is_rejected() {
        let err = parse_program("@main {\n  %x = mov 1\n}\n").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::FallThrough(_)));
    }

    #[test]
    fn input_files() {
        let m = parse_inputs("; sizes\n%n = 4\nM[2] = 1.5  # cell\n\n%n = 5\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[&Location::reg("n")], Value::int(5));
        assert_eq!(m[&Location::mem(2)], Value::float(1.5));
        assert_eq!(parse_inputs("%n 4").unwrap_err().line, 1);
        assert_eq!(parse_inputs("%n = 4\n%m = x").unwrap_err().line, 2);
    }

    #[test]
    fn literals() {
        assert_eq!(parse_literal("42"), Some(Value::int(42)));
        assert_eq!(parse_literal("-7"), Some(Value::int(-7)));
        assert_eq!(parse_literal("0x10"), Some(Value::int(16)));
        assert_eq!(parse_literal("1.5"), Some(Value::float(1.5)));
        assert_eq!(parse_literal("-2e-3"), Some(Value::float(-2e-3)));
        assert_eq!(parse_literal("f0x7ff8000000000000"), Some(Value::float(f64::NAN)));
        assert_eq!(parse_literal("abc"), None);
    }

    #[test]
    fn memory_operands() {
        let src = "@main(%i) {\n  %a = load M[%i + 3]\n  %b = load M[%i - 1]\n  store M[7 + 1], %a\n  ret\n}\n";
        let p = parse_program(src).unwrap();
        let body = &p.functions[0].body;
        assert!(matches!(body[0].inst, Inst::Load { addr: MemRef { offset: 3, .. }, .. }));
        assert!(matches!(body[1].inst, Inst::Load { addr: MemRef { offset: -1, .. }, .. }));
        assert!(matches!(
            body[2].inst,
            Inst::Store {
                addr: MemRef {
                    base: Operand::Imm(_),
                    offset: 8
                },
                ..
            }
        ));
    }
}
