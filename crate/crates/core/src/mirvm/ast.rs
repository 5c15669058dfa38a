use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Location, Value};

/// Index into [`Function::registers`].
pub type RegId = u32;
/// Index into [`Function::labels`].
pub type LabelId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operand {
    Reg(RegId),
    Imm(Value),
}

/// `M[base + offset]`. The base operand is what gets traced (and can be
/// fault-injected); the offset is a static displacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemRef {
    pub base: Operand,
    pub offset: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinOp {
    IAdd,
    ISub,
    IMul,
    IDiv,
    FAdd,
    FSub,
    FMul,
    FDiv,
    Shl,
    Shr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpPred {
    Lt,
    Le,
    Eq,
    Ne,
}

impl CmpPred {
    fn mnemonic(self) -> &'static str {
        match self {
            CmpPred::Lt => "lt",
            CmpPred::Le => "le",
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
        }
    }

    fn from_mnemonic(s: &str) -> Option<Self> {
        Some(match s {
            "lt" => CmpPred::Lt,
            "le" => CmpPred::Le,
            "eq" => CmpPred::Eq,
            "ne" => CmpPred::Ne,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Inst {
    Binary {
        op: BinOp,
        dst: RegId,
        lhs: Operand,
        rhs: Operand,
    },
    ICmp {
        pred: CmpPred,
        dst: RegId,
        lhs: Operand,
        rhs: Operand,
    },
    FCmp {
        pred: CmpPred,
        dst: RegId,
        lhs: Operand,
        rhs: Operand,
    },
    TruncF2I {
        dst: RegId,
        src: Operand,
    },
    ExtI2F {
        dst: RegId,
        src: Operand,
    },
    Mov {
        dst: RegId,
        src: Operand,
    },
    Load {
        dst: RegId,
        addr: MemRef,
    },
    Store {
        addr: MemRef,
        value: Operand,
    },
    Br {
        target: LabelId,
    },
    BrCond {
        cond: Operand,
        then_target: LabelId,
        else_target: LabelId,
    },
    Call {
        dst: Option<RegId>,
        callee: u32,
    },
    Ret {
        value: Option<Operand>,
    },
    /// `digits` is the number of fractional digits of `%.Ne`-style output;
    /// `None` prints the value exactly.
    Print {
        value: Operand,
        digits: Option<u8>,
    },
    RegionBegin(u32),
    RegionEnd(u32),
    VerifyCheck,
}

impl Inst {
    pub fn opcode(&self) -> Opcode {
        match self {
            Inst::Binary { op, .. } => match op {
                BinOp::IAdd => Opcode::IAdd,
                BinOp::ISub => Opcode::ISub,
                BinOp::IMul => Opcode::IMul,
                BinOp::IDiv => Opcode::IDiv,
                BinOp::FAdd => Opcode::FAdd,
                BinOp::FSub => Opcode::FSub,
                BinOp::FMul => Opcode::FMul,
                BinOp::FDiv => Opcode::FDiv,
                BinOp::Shl => Opcode::Shl,
                BinOp::Shr => Opcode::Shr,
            },
            Inst::ICmp { pred, .. } => Opcode::ICmp(*pred),
            Inst::FCmp { pred, .. } => Opcode::FCmp(*pred),
            Inst::TruncF2I { .. } => Opcode::TruncF2I,
            Inst::ExtI2F { .. } => Opcode::ExtI2F,
            Inst::Mov { .. } => Opcode::Mov,
            Inst::Load { .. } => Opcode::Load,
            Inst::Store { .. } => Opcode::Store,
            Inst::Br { .. } => Opcode::Br,
            Inst::BrCond { .. } => Opcode::BrCond,
            Inst::Call { .. } => Opcode::Call,
            Inst::Ret { .. } => Opcode::Ret,
            Inst::Print { digits, .. } => Opcode::Print { digits: *digits },
            Inst::RegionBegin(id) => Opcode::RegionBegin(*id),
            Inst::RegionEnd(id) => Opcode::RegionEnd(*id),
            Inst::VerifyCheck => Opcode::VerifyCheck,
        }
    }

    /// Register written by this instruction in its own frame.
    pub fn def(&self) -> Option<RegId> {
        match self {
            Inst::Binary { dst, .. }
            | Inst::ICmp { dst, .. }
            | Inst::FCmp { dst, .. }
            | Inst::TruncF2I { dst, .. }
            | Inst::ExtI2F { dst, .. }
            | Inst::Mov { dst, .. }
            | Inst::Load { dst, .. } => Some(*dst),
            Inst::Call { dst, .. } => *dst,
            _ => None,
        }
    }

    /// Operands in trace order (see [`crate::traceio::TraceEvent`]).
    pub fn operands(&self) -> Vec<Operand> {
        match self {
            Inst::Binary { lhs, rhs, .. } | Inst::ICmp { lhs, rhs, .. } | Inst::FCmp { lhs, rhs, .. } => {
                vec![*lhs, *rhs]
            }
            Inst::TruncF2I { src, .. } | Inst::ExtI2F { src, .. } | Inst::Mov { src, .. } => vec![*src],
            Inst::Load { addr, .. } => vec![addr.base],
            Inst::Store { addr, value } => vec![addr.base, *value],
            Inst::BrCond { cond, .. } => vec![*cond],
            Inst::Ret { value } => value.iter().copied().collect(),
            Inst::Print { value, .. } => vec![*value],
            _ => Vec::new(),
        }
    }

    pub fn is_terminator(&self) -> bool {
        matches!(self, Inst::Br { .. } | Inst::BrCond { .. } | Inst::Ret { .. })
    }
}

/// Instruction kind as recorded in traces: the opcode without its operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Opcode {
    IAdd,
    ISub,
    IMul,
    IDiv,
    FAdd,
    FSub,
    FMul,
    FDiv,
    ICmp(CmpPred),
    FCmp(CmpPred),
    Shl,
    Shr,
    TruncF2I,
    ExtI2F,
    Mov,
    Load,
    Store,
    Br,
    BrCond,
    Call,
    Ret,
    Print { digits: Option<u8> },
    RegionBegin(u32),
    RegionEnd(u32),
    VerifyCheck,
}

impl Opcode {
    pub fn is_add_like(self) -> bool {
        matches!(self, Opcode::IAdd | Opcode::ISub | Opcode::FAdd | Opcode::FSub)
    }

    /// Arithmetic that combines operands into one result (aggregation).
    pub fn is_arith(self) -> bool {
        matches!(
            self,
            Opcode::IAdd | Opcode::ISub | Opcode::IMul | Opcode::FAdd | Opcode::FSub | Opcode::FMul
        )
    }

    pub fn is_compare(self) -> bool {
        matches!(self, Opcode::ICmp(_) | Opcode::FCmp(_))
    }

    pub fn is_shift(self) -> bool {
        matches!(self, Opcode::Shl | Opcode::Shr)
    }

    pub fn is_output(self) -> bool {
        matches!(self, Opcode::Print { .. } | Opcode::VerifyCheck)
    }

    pub fn is_region_marker(self) -> bool {
        matches!(self, Opcode::RegionBegin(_) | Opcode::RegionEnd(_))
    }

    /// Stable one-byte code used by the binary trace format.
    pub(crate) fn code(self) -> (u8, u32) {
        match self {
            Opcode::IAdd => (0, 0),
            Opcode::ISub => (1, 0),
            Opcode::IMul => (2, 0),
            Opcode::IDiv => (3, 0),
            Opcode::FAdd => (4, 0),
            Opcode::FSub => (5, 0),
            Opcode::FMul => (6, 0),
            Opcode::FDiv => (7, 0),
            Opcode::ICmp(p) => (8, p as u32),
            Opcode::FCmp(p) => (9, p as u32),
            Opcode::Shl => (10, 0),
            Opcode::Shr => (11, 0),
            Opcode::TruncF2I => (12, 0),
            Opcode::ExtI2F => (13, 0),
            Opcode::Mov => (14, 0),
            Opcode::Load => (15, 0),
            Opcode::Store => (16, 0),
            Opcode::Br => (17, 0),
            Opcode::BrCond => (18, 0),
            Opcode::Call => (19, 0),
            Opcode::Ret => (20, 0),
            Opcode::Print { digits: None } => (21, u32::MAX),
            Opcode::Print { digits: Some(d) } => (21, d as u32),
            Opcode::RegionBegin(id) => (22, id),
            Opcode::RegionEnd(id) => (23, id),
            Opcode::VerifyCheck => (24, 0),
        }
    }

    pub(crate) fn from_code(code: u8, arg: u32) -> Option<Self> {
        let pred = |a: u32| {
            Some(match a {
                0 => CmpPred::Lt,
                1 => CmpPred::Le,
                2 => CmpPred::Eq,
                3 => CmpPred::Ne,
                _ => return None,
            })
        };
        Some(match code {
            0 => Opcode::IAdd,
            1 => Opcode::ISub,
            2 => Opcode::IMul,
            3 => Opcode::IDiv,
            4 => Opcode::FAdd,
            5 => Opcode::FSub,
            6 => Opcode::FMul,
            7 => Opcode::FDiv,
            8 => Opcode::ICmp(pred(arg)?),
            9 => Opcode::FCmp(pred(arg)?),
            10 => Opcode::Shl,
            11 => Opcode::Shr,
            12 => Opcode::TruncF2I,
            13 => Opcode::ExtI2F,
            14 => Opcode::Mov,
            15 => Opcode::Load,
            16 => Opcode::Store,
            17 => Opcode::Br,
            18 => Opcode::BrCond,
            19 => Opcode::Call,
            20 => Opcode::Ret,
            21 if arg == u32::MAX => Opcode::Print { digits: None },
            21 => Opcode::Print {
                digits: Some(u8::try_from(arg).ok()?),
            },
            22 => Opcode::RegionBegin(arg),
            23 => Opcode::RegionEnd(arg),
            24 => Opcode::VerifyCheck,
            _ => return None,
        })
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opcode::IAdd => f.write_str("iadd"),
            Opcode::ISub => f.write_str("isub"),
            Opcode::IMul => f.write_str("imul"),
            Opcode::IDiv => f.write_str("idiv"),
            Opcode::FAdd => f.write_str("fadd"),
            Opcode::FSub => f.write_str("fsub"),
            Opcode::FMul => f.write_str("fmul"),
            Opcode::FDiv => f.write_str("fdiv"),
            Opcode::ICmp(p) => write!(f, "icmp.{}", p.mnemonic()),
            Opcode::FCmp(p) => write!(f, "fcmp.{}", p.mnemonic()),
            Opcode::Shl => f.write_str("shl"),
            Opcode::Shr => f.write_str("shr"),
            Opcode::TruncF2I => f.write_str("trunc_f2i"),
            Opcode::ExtI2F => f.write_str("ext_i2f"),
            Opcode::Mov => f.write_str("mov"),
            Opcode::Load => f.write_str("load"),
            Opcode::Store => f.write_str("store"),
            Opcode::Br => f.write_str("br"),
            Opcode::BrCond => f.write_str("br_cond"),
            Opcode::Call => f.write_str("call"),
            Opcode::Ret => f.write_str("ret"),
            Opcode::Print { digits: None } => f.write_str("print"),
            Opcode::Print { digits: Some(d) } => write!(f, "print.e{d}"),
            Opcode::RegionBegin(id) => write!(f, "region_begin {id}"),
            Opcode::RegionEnd(id) => write!(f, "region_end {id}"),
            Opcode::VerifyCheck => f.write_str("verify_check"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown opcode `{0}`")]
pub struct UnknownOpcode(pub String);

impl FromStr for Opcode {
    type Err = UnknownOpcode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || UnknownOpcode(s.to_string());
        let simple = match s {
            "iadd" => Some(Opcode::IAdd),
            "isub" => Some(Opcode::ISub),
            "imul" => Some(Opcode::IMul),
            "idiv" => Some(Opcode::IDiv),
            "fadd" => Some(Opcode::FAdd),
            "fsub" => Some(Opcode::FSub),
            "fmul" => Some(Opcode::FMul),
            "fdiv" => Some(Opcode::FDiv),
            "shl" => Some(Opcode::Shl),
            "shr" => Some(Opcode::Shr),
            "trunc_f2i" => Some(Opcode::TruncF2I),
            "ext_i2f" => Some(Opcode::ExtI2F),
            "mov" => Some(Opcode::Mov),
            "load" => Some(Opcode::Load),
            "store" => Some(Opcode::Store),
            "br" => Some(Opcode::Br),
            "br_cond" => Some(Opcode::BrCond),
            "call" => Some(Opcode::Call),
            "ret" => Some(Opcode::Ret),
            "print" => Some(Opcode::Print { digits: None }),
            "verify_check" => Some(Opcode::VerifyCheck),
            _ => None,
        };
        if let Some(op) = simple {
            return Ok(op);
        }
        if let Some(p) = s.strip_prefix("icmp.") {
            return CmpPred::from_mnemonic(p).map(Opcode::ICmp).ok_or_else(err);
        }
        if let Some(p) = s.strip_prefix("fcmp.") {
            return CmpPred::from_mnemonic(p).map(Opcode::FCmp).ok_or_else(err);
        }
        if let Some(d) = s.strip_prefix("print.e") {
            let digits = d.parse().map_err(|_| err())?;
            return Ok(Opcode::Print { digits: Some(digits) });
        }
        if let Some(id) = s.strip_prefix("region_begin ") {
            return id.trim().parse().map(Opcode::RegionBegin).map_err(|_| err());
        }
        if let Some(id) = s.strip_prefix("region_end ") {
            return id.trim().parse().map(Opcode::RegionEnd).map_err(|_| err());
        }
        Err(err())
    }
}

impl From<Opcode> for String {
    fn from(op: Opcode) -> String {
        op.to_string()
    }
}

impl TryFrom<String> for Opcode {
    type Error = UnknownOpcode;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instr {
    pub inst: Inst,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Label {
    pub name: String,
    pub pos: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Function {
    pub name: String,
    pub params: Vec<RegId>,
    pub registers: Vec<String>,
    pub body: Vec<Instr>,
    pub labels: Vec<Label>,
}

impl Function {
    pub fn label_pos(&self, id: LabelId) -> usize {
        self.labels[id as usize].pos
    }
}

/// Output locations checked by `verify_check`, with a relative tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySpec {
    pub locations: Vec<Location>,
    pub tolerance: f64,
}

pub const DEFAULT_VERIFY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub functions: Vec<Function>,
    pub entry: u32,
    pub verify: Option<VerifySpec>,
    pub memory_size: Option<u64>,
    /// Initial memory image from `.data` directives.
    pub data: Vec<(u64, Value)>,
}

impl Program {
    pub fn entry_function(&self) -> &Function {
        &self.functions[self.entry as usize]
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Number of static `region_begin` markers, by region id.
    pub fn region_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .functions
            .iter()
            .flat_map(|f| f.body.iter())
            .filter_map(|i| match i.inst {
                Inst::RegionBegin(id) => Some(id),
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// SHA-256 over the canonical source plus the line table, so traces of
    /// the same program laid out differently get different hashes.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.to_string().as_bytes());
        for f in &self.functions {
            for i in &f.body {
                h.update(i.line.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

struct OperandFmt<'a>(&'a Function, Operand);

impl fmt::Display for OperandFmt<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.1 {
            Operand::Reg(r) => write!(f, "%{}", self.0.registers[r as usize]),
            Operand::Imm(v) => write!(f, "{v}"),
        }
    }
}

struct MemFmt<'a>(&'a Function, MemRef);

impl fmt::Display for MemFmt<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let MemRef { base, offset } = self.1;
        match (base, offset) {
            (Operand::Imm(v), _) => write!(f, "M[{}]", v.to_f64() as i64 + offset),
            (b, 0) => write!(f, "M[{}]", OperandFmt(self.0, b)),
            (b, o) if o > 0 => write!(f, "M[{} + {o}]", OperandFmt(self.0, b)),
            (b, o) => write!(f, "M[{} - {}]", OperandFmt(self.0, b), o.unsigned_abs()),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, ".entry @{}", self.entry_function().name)?;
        if let Some(size) = self.memory_size {
            writeln!(f, ".memory {size}")?;
        }
        for (addr, v) in &self.data {
            writeln!(f, ".data M[{addr}] = {v}")?;
        }
        if let Some(spec) = &self.verify {
            let locs: Vec<String> = spec.locations.iter().map(|l| l.to_string()).collect();
            writeln!(f, ".verify {} tol {:e}", locs.join(", "), spec.tolerance)?;
        }
        for func in &self.functions {
            let params: Vec<String> = func
                .params
                .iter()
                .map(|&r| format!("%{}", func.registers[r as usize]))
                .collect();
            writeln!(f, "@{}({}) {{", func.name, params.join(", "))?;
            for (pos, instr) in func.body.iter().enumerate() {
                for label in func.labels.iter().filter(|l| l.pos == pos) {
                    writeln!(f, "{}:", label.name)?;
                }
                write!(f, "  ")?;
                fmt_inst(f, self, func, &instr.inst)?;
                writeln!(f)?;
            }
            for label in func.labels.iter().filter(|l| l.pos == func.body.len()) {
                writeln!(f, "{}:", label.name)?;
            }
            writeln!(f, "}}")?;
        }
        Ok(())
    }
}

fn fmt_inst(f: &mut fmt::Formatter<'_>, program: &Program, func: &Function, inst: &Inst) -> fmt::Result {
    let callee_name = |c: u32| &program.functions[c as usize].name;
    let reg = |r: RegId| format!("%{}", func.registers[r as usize]);
    let op = |o: Operand| OperandFmt(func, o);
    let label = |l: LabelId| &func.labels[l as usize].name;
    let opcode = inst.opcode();
    match inst {
        Inst::Binary { dst, lhs, rhs, .. } | Inst::ICmp { dst, lhs, rhs, .. } | Inst::FCmp { dst, lhs, rhs, .. } => {
            write!(f, "{} = {opcode} {}, {}", reg(*dst), op(*lhs), op(*rhs))
        }
        Inst::TruncF2I { dst, src } | Inst::ExtI2F { dst, src } | Inst::Mov { dst, src } => {
            write!(f, "{} = {opcode} {}", reg(*dst), op(*src))
        }
        Inst::Load { dst, addr } => write!(f, "{} = load {}", reg(*dst), MemFmt(func, *addr)),
        Inst::Store { addr, value } => write!(f, "store {}, {}", MemFmt(func, *addr), op(*value)),
        Inst::Br { target } => write!(f, "br {}", label(*target)),
        Inst::BrCond {
            cond,
            then_target,
            else_target,
        } => write!(f, "br_cond {}, {}, {}", op(*cond), label(*then_target), label(*else_target)),
        Inst::Call { dst: Some(d), callee } => write!(f, "{} = call @{}", reg(*d), callee_name(*callee)),
        Inst::Call { dst: None, callee } => write!(f, "call @{}", callee_name(*callee)),
        Inst::Ret { value: Some(v) } => write!(f, "ret {}", op(*v)),
        Inst::Ret { value: None } => f.write_str("ret"),
        Inst::Print { value, .. } => write!(f, "{opcode} {}", op(*value)),
        Inst::RegionBegin(_) | Inst::RegionEnd(_) | Inst::VerifyCheck => write!(f, "{opcode}"),
    }
}
