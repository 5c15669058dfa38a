use std::collections::BTreeMap;

use super::*;
use crate::traceio::{Trace, TraceEvent};

/// Where an operand came from, so an operand fault can be written back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Reg { frame: usize, reg: RegId },
    Mem(u64),
    Imm,
}

struct Frame {
    func: u32,
    regs: Vec<Option<Value>>,
    pc: usize,
    /// Caller's register that receives our return value.
    ret_dst: Option<RegId>,
    regions_open: usize,
}

struct Machine<'p> {
    program: &'p Program,
    config: &'p ExecConfig,
    frames: Vec<Frame>,
    memory: Vec<Option<Value>>,
    regions: Vec<u32>,
    count: u64,
    fault: Option<FaultSpec>,
    fault_applied: bool,
    trace: Trace,
    printed: Vec<Value>,
    outputs: BTreeMap<Location, Value>,
    verify: Option<VerifyRecord>,
    return_value: Option<Value>,
}

enum Flow {
    Next,
    Jump(usize),
    Call(u32, Option<RegId>),
    Return,
    Halt,
}

struct Effect {
    slots: Vec<Slot>,
    values: Vec<Value>,
    result: Option<(Option<Slot>, Value)>,
    flow: Flow,
}

/// Execute `program` on `input`, optionally injecting one bit flip.
///
/// `input` binds the entry function's parameters (as depth-0 registers)
/// and may pre-load memory cells. Traps and budget exhaustion are
/// reported through [`RunOutcome::status`]; `Err` is reserved for invalid
/// requests (missing inputs, a fault that names a nonexistent slot).
pub fn execute(
    program: &Program,
    input: &BTreeMap<Location, Value>,
    fault: Option<&FaultSpec>,
    config: &ExecConfig,
) -> Result<RunOutcome, VmError> {
    if config.budget == 0 {
        return Err(VmError::ZeroBudget);
    }
    if let Some(f) = fault {
        if f.bit > 63 {
            return Err(VmError::BadBit(f.bit));
        }
    }
    let mem_size = config
        .memory_size
        .or(program.memory_size)
        .unwrap_or(DEFAULT_MEMORY_SIZE);
    let mut memory = vec![None; mem_size as usize];
    for &(addr, v) in &program.data {
        if addr >= mem_size {
            return Err(VmError::InputOutOfBounds(addr, mem_size));
        }
        memory[addr as usize] = Some(v);
    }

    let entry = program.entry_function();
    let mut regs = vec![None; entry.registers.len()];
    for (loc, &v) in input {
        match loc {
            Location::Mem { addr } => {
                if *addr >= mem_size {
                    return Err(VmError::InputOutOfBounds(*addr, mem_size));
                }
                memory[*addr as usize] = Some(v);
            }
            Location::Reg { depth: 0, name } => {
                let reg = entry
                    .params
                    .iter()
                    .copied()
                    .find(|&r| entry.registers[r as usize] == *name)
                    .ok_or_else(|| VmError::UnknownInput(loc.clone()))?;
                regs[reg as usize] = Some(v);
            }
            Location::Reg { .. } => return Err(VmError::UnknownInput(loc.clone())),
        }
    }
    for &p in &entry.params {
        if regs[p as usize].is_none() {
            return Err(VmError::MissingInput(Location::reg(entry.registers[p as usize].clone())));
        }
    }

    let hash = if config.record_trace { program.hash() } else { [0; 32] };
    let mut m = Machine {
        program,
        config,
        frames: vec![Frame {
            func: program.entry,
            regs,
            pc: 0,
            ret_dst: None,
            regions_open: 0,
        }],
        memory,
        regions: Vec::new(),
        count: 0,
        fault: fault.copied(),
        fault_applied: false,
        trace: Trace::new(hash),
        printed: Vec::new(),
        outputs: BTreeMap::new(),
        verify: None,
        return_value: None,
    };
    let status = m.run()?;
    if let Some(f) = m.fault {
        if !m.fault_applied && !matches!(status, RunStatus::Trapped { index, .. } if index == f.index) {
            return Err(VmError::FaultNotReached {
                index: f.index,
                count: m.count,
            });
        }
    }
    Ok(RunOutcome {
        status,
        outputs: m.outputs,
        printed: m.printed,
        verify: m.verify,
        return_value: m.return_value,
        trace: m.trace,
        dynamic_instruction_count: m.count,
        fault_applied: m.fault_applied,
    })
}

fn type_mismatch(op: Opcode) -> TrapReason {
    TrapReason::TypeMismatch {
        opcode: op.to_string(),
    }
}

fn compare<T: PartialOrd>(pred: CmpPred, a: T, b: T) -> bool {
    match pred {
        CmpPred::Lt => a < b,
        CmpPred::Le => a <= b,
        CmpPred::Eq => a == b,
        CmpPred::Ne => a != b,
    }
}

fn binop(op: BinOp, opcode: Opcode, a: Value, b: Value) -> Result<Value, TrapReason> {
    use BinOp::*;
    match op {
        IAdd | ISub | IMul | IDiv | Shl | Shr => {
            let (Some(x), Some(y)) = (a.as_int(), b.as_int()) else {
                return Err(type_mismatch(opcode));
            };
            Ok(Value::int(match op {
                IAdd => x.wrapping_add(y),
                ISub => x.wrapping_sub(y),
                IMul => x.wrapping_mul(y),
                IDiv => {
                    if y == 0 {
                        return Err(TrapReason::DivideByZero);
                    }
                    x.wrapping_div(y)
                }
                Shl | Shr => {
                    if !(0..=63).contains(&y) {
                        return Err(TrapReason::ShiftOutOfRange { amount: y });
                    }
                    if op == Shl {
                        ((x as u64) << y) as i64
                    } else {
                        ((x as u64) >> y) as i64
                    }
                }
                _ => unreachable!(),
            }))
        }
        FAdd | FSub | FMul | FDiv => {
            let (Some(x), Some(y)) = (a.as_float(), b.as_float()) else {
                return Err(type_mismatch(opcode));
            };
            Ok(Value::float(match op {
                FAdd => x + y,
                FSub => x - y,
                FMul => x * y,
                _ => x / y,
            }))
        }
    }
}

/// Value seen by a reader of `%.{digits}e` output.
pub(crate) fn round_for_print(v: Value, digits: Option<u8>) -> Value {
    match (digits, v.as_float()) {
        (Some(d), Some(x)) if x.is_finite() => {
            let text = format!("{:.*e}", d as usize, x);
            Value::float(text.parse().expect("formatted float parses"))
        }
        _ => v,
    }
}

impl Machine<'_> {
    fn run(&mut self) -> Result<RunStatus, VmError> {
        loop {
            if self.count >= self.config.budget {
                return Ok(RunStatus::Hung);
            }
            let fi = self.frames.len() - 1;
            let program = self.program;
            let func = &program.functions[self.frames[fi].func as usize];
            let instr = &func.body[self.frames[fi].pc];
            let here = self.fault.filter(|f| f.index == self.count);

            let effect = match self.step(fi, &instr.inst, here)? {
                Ok(e) => e,
                Err(trap) => {
                    return Ok(RunStatus::Trapped {
                        trap,
                        index: self.count,
                    })
                }
            };
            let region_id = self.regions.last().copied();
            if let Some(f) = here {
                if let FaultTarget::Operand(k) = f.target {
                    if k as usize >= effect.values.len() {
                        return Err(VmError::InvalidFaultTarget {
                            index: f.index,
                            target: f.target,
                            opcode: instr.inst.opcode(),
                        });
                    }
                }
            }
            let mut result = effect.result;
            if let Some(f) = here.filter(|f| f.target == FaultTarget::Result) {
                match &mut result {
                    Some((_, v)) => {
                        *v = flip_bit(*v, f.bit);
                        self.fault_applied = true;
                    }
                    None => {
                        return Err(VmError::InvalidFaultTarget {
                            index: f.index,
                            target: f.target,
                            opcode: instr.inst.opcode(),
                        })
                    }
                }
            }
            if let Inst::Print { .. } = instr.inst {
                self.printed.push(result.expect("print produces a value").1);
            }

            if self.config.record_trace {
                let event = TraceEvent {
                    index: self.count,
                    opcode: instr.inst.opcode(),
                    src_line: instr.line,
                    operand_locations: effect.slots.iter().map(|s| self.location(*s)).collect(),
                    operand_values: effect.values,
                    result_location: result.and_then(|(s, _)| s).and_then(|s| self.location(s)),
                    result_value: result.map(|(_, v)| v),
                    region_id,
                };
                self.trace.events.push(event);
            }
            self.count += 1;
            if let Some((Some(slot), v)) = result {
                self.store(slot, v);
            }
            if let Inst::RegionEnd(_) = instr.inst {
                self.regions.pop();
                self.frames[fi].regions_open -= 1;
            }

            match effect.flow {
                Flow::Next => self.frames[fi].pc += 1,
                Flow::Jump(pc) => self.frames[fi].pc = pc,
                Flow::Call(callee, dst) => {
                    self.frames[fi].pc += 1;
                    let n = self.program.functions[callee as usize].registers.len();
                    self.frames.push(Frame {
                        func: callee,
                        regs: vec![None; n],
                        pc: 0,
                        ret_dst: dst,
                        regions_open: 0,
                    });
                }
                Flow::Return => {
                    self.frames.pop();
                }
                Flow::Halt => return Ok(RunStatus::Completed),
            }
        }
    }

    fn location(&self, slot: Slot) -> Option<Location> {
        match slot {
            Slot::Reg { frame, reg } => {
                let func = &self.program.functions[self.frames[frame].func as usize];
                Some(Location::Reg {
                    depth: frame as u32,
                    name: func.registers[reg as usize].clone(),
                })
            }
            Slot::Mem(addr) => Some(Location::Mem { addr }),
            Slot::Imm => None,
        }
    }

    fn store(&mut self, slot: Slot, v: Value) {
        match slot {
            Slot::Reg { frame, reg } => self.frames[frame].regs[reg as usize] = Some(v),
            Slot::Mem(addr) => self.memory[addr as usize] = Some(v),
            Slot::Imm => {}
        }
    }

    fn load(&self, slot: Slot, imm: Value) -> Result<Value, TrapReason> {
        match slot {
            Slot::Reg { frame, reg } => self.frames[frame].regs[reg as usize].ok_or_else(|| {
                TrapReason::UndefinedLocation {
                    location: self.location(slot).unwrap().to_string(),
                }
            }),
            Slot::Mem(addr) => self.memory[addr as usize].ok_or(TrapReason::UninitializedMemory { addr }),
            Slot::Imm => Ok(imm),
        }
    }

    /// Read operand slot `k`, applying an operand fault aimed at it.
    /// Faults on registers and memory persist in the location.
    fn read(
        &mut self,
        k: usize,
        slot: Slot,
        imm: Value,
        here: Option<FaultSpec>,
        e: &mut Effect,
    ) -> Result<Value, TrapReason> {
        let mut v = self.load(slot, imm)?;
        if let Some(f) = here.filter(|f| f.target == FaultTarget::Operand(k as u32)) {
            v = flip_bit(v, f.bit);
            self.store(slot, v);
            self.fault_applied = true;
        }
        e.slots.push(slot);
        e.values.push(v);
        Ok(v)
    }

    fn read_operand(
        &mut self,
        fi: usize,
        k: usize,
        op: Operand,
        here: Option<FaultSpec>,
        e: &mut Effect,
    ) -> Result<Value, TrapReason> {
        match op {
            Operand::Reg(reg) => self.read(k, Slot::Reg { frame: fi, reg }, Value::int(0), here, e),
            Operand::Imm(v) => self.read(k, Slot::Imm, v, here, e),
        }
    }

    fn address(&self, base: Value, offset: i64) -> Result<u64, TrapReason> {
        let Some(b) = base.as_int() else {
            return Err(type_mismatch(Opcode::Load));
        };
        let addr = b.wrapping_add(offset);
        if addr < 0 || addr as u64 >= self.memory.len() as u64 {
            return Err(TrapReason::MemoryOutOfBounds { addr });
        }
        Ok(addr as u64)
    }

    /// Outer `Err` is an invalid request; inner `Err` is a trap.
    #[allow(clippy::type_complexity)]
    fn step(
        &mut self,
        fi: usize,
        inst: &Inst,
        here: Option<FaultSpec>,
    ) -> Result<Result<Effect, TrapReason>, VmError> {
        let mut e = Effect {
            slots: Vec::with_capacity(2),
            values: Vec::with_capacity(2),
            result: None,
            flow: Flow::Next,
        };
        let opcode = inst.opcode();
        let program = self.program;
        let func = &program.functions[self.frames[fi].func as usize];
        let dst_slot = |reg: RegId| Some(Slot::Reg { frame: fi, reg });
        let r: Result<(), TrapReason> = (|| {
            match *inst {
                Inst::Binary { op, dst, lhs, rhs } => {
                    let a = self.read_operand(fi, 0, lhs, here, &mut e)?;
                    let b = self.read_operand(fi, 1, rhs, here, &mut e)?;
                    e.result = Some((dst_slot(dst), binop(op, opcode, a, b)?));
                }
                Inst::ICmp { pred, dst, lhs, rhs } => {
                    let a = self.read_operand(fi, 0, lhs, here, &mut e)?;
                    let b = self.read_operand(fi, 1, rhs, here, &mut e)?;
                    let (Some(x), Some(y)) = (a.as_int(), b.as_int()) else {
                        return Err(type_mismatch(opcode));
                    };
                    e.result = Some((dst_slot(dst), Value::int(compare(pred, x, y) as i64)));
                }
                Inst::FCmp { pred, dst, lhs, rhs } => {
                    let a = self.read_operand(fi, 0, lhs, here, &mut e)?;
                    let b = self.read_operand(fi, 1, rhs, here, &mut e)?;
                    let (Some(x), Some(y)) = (a.as_float(), b.as_float()) else {
                        return Err(type_mismatch(opcode));
                    };
                    // IEEE: every ordered comparison with NaN is false, `ne` is true.
                    e.result = Some((dst_slot(dst), Value::int(compare(pred, x, y) as i64)));
                }
                Inst::TruncF2I { dst, src } => {
                    let a = self.read_operand(fi, 0, src, here, &mut e)?;
                    let x = a.as_float().ok_or_else(|| type_mismatch(opcode))?;
                    // `as` saturates and maps NaN to 0.
                    e.result = Some((dst_slot(dst), Value::int(x as i64)));
                }
                Inst::ExtI2F { dst, src } => {
                    let a = self.read_operand(fi, 0, src, here, &mut e)?;
                    let x = a.as_int().ok_or_else(|| type_mismatch(opcode))?;
                    e.result = Some((dst_slot(dst), Value::float(x as f64)));
                }
                Inst::Mov { dst, src } => {
                    let a = self.read_operand(fi, 0, src, here, &mut e)?;
                    e.result = Some((dst_slot(dst), a));
                }
                Inst::Load { dst, addr } => {
                    let base = self.read_operand(fi, 0, addr.base, here, &mut e)?;
                    let a = self.address(base, addr.offset)?;
                    let v = self.read(1, Slot::Mem(a), Value::int(0), here, &mut e)?;
                    e.result = Some((dst_slot(dst), v));
                }
                Inst::Store { addr, value } => {
                    let base = self.read_operand(fi, 0, addr.base, here, &mut e)?;
                    let v = self.read_operand(fi, 1, value, here, &mut e)?;
                    let a = self.address(base, addr.offset)?;
                    e.result = Some((Some(Slot::Mem(a)), v));
                }
                Inst::Br { target } => e.flow = Flow::Jump(func.label_pos(target)),
                Inst::BrCond {
                    cond,
                    then_target,
                    else_target,
                } => {
                    let c = self.read_operand(fi, 0, cond, here, &mut e)?;
                    let target = if c.is_truthy() { then_target } else { else_target };
                    e.flow = Flow::Jump(func.label_pos(target));
                }
                Inst::Call { dst, callee } => {
                    if self.frames.len() >= MAX_CALL_DEPTH {
                        return Err(TrapReason::CallDepthExceeded);
                    }
                    e.flow = Flow::Call(callee, dst);
                }
                Inst::Ret { value } => {
                    if let Some(&id) = self.regions.last().filter(|_| self.frames[fi].regions_open > 0) {
                        return Err(TrapReason::UnbalancedRegion { id });
                    }
                    let v = match value {
                        Some(op) => Some(self.read_operand(fi, 0, op, here, &mut e)?),
                        None => None,
                    };
                    if fi == 0 {
                        self.return_value = v;
                        e.flow = Flow::Halt;
                    } else {
                        let dst = self.frames[fi].ret_dst;
                        if let (Some(reg), Some(v)) = (dst, v) {
                            e.result = Some((Some(Slot::Reg { frame: fi - 1, reg }), v));
                        }
                        e.flow = Flow::Return;
                    }
                }
                Inst::Print { value, digits } => {
                    let v = self.read_operand(fi, 0, value, here, &mut e)?;
                    e.result = Some((None, round_for_print(v, digits)));
                }
                Inst::RegionBegin(id) => {
                    self.regions.push(id);
                    self.frames[fi].regions_open += 1;
                }
                Inst::RegionEnd(id) => {
                    if self.regions.last() != Some(&id) || self.frames[fi].regions_open == 0 {
                        return Err(TrapReason::UnbalancedRegion { id });
                    }
                }
                Inst::VerifyCheck => self.verify_check(here, &mut e)?,
            }
            Ok(())
        })();
        Ok(r.map(|()| e))
    }

    fn verify_check(&mut self, here: Option<FaultSpec>, e: &mut Effect) -> Result<(), TrapReason> {
        let Some(spec) = &self.program.verify else {
            return Ok(());
        };
        let mut values = Vec::with_capacity(spec.locations.len());
        for (k, loc) in spec.locations.iter().enumerate() {
            let slot = match loc {
                Location::Mem { addr } => {
                    if *addr >= self.memory.len() as u64 {
                        return Err(TrapReason::MemoryOutOfBounds { addr: *addr as i64 });
                    }
                    Slot::Mem(*addr)
                }
                Location::Reg { depth, name } => {
                    let frame = *depth as usize;
                    let reg = self.frames.get(frame).and_then(|f| {
                        let func = &self.program.functions[f.func as usize];
                        func.registers.iter().position(|r| r == name)
                    });
                    match reg {
                        Some(reg) => Slot::Reg {
                            frame,
                            reg: reg as RegId,
                        },
                        None => {
                            return Err(TrapReason::UndefinedLocation {
                                location: loc.to_string(),
                            })
                        }
                    }
                }
            };
            values.push(self.read(k, slot, Value::int(0), here, e)?);
        }
        for (loc, v) in spec.locations.iter().zip(&values) {
            self.outputs.insert(loc.clone(), *v);
        }
        let passed = match &self.config.reference {
            None => true,
            Some(reference) => {
                reference.len() == values.len()
                    && reference
                        .iter()
                        .zip(&values)
                        .all(|(r, v)| within_tolerance(*r, *v, spec.tolerance))
            }
        };
        let passed = passed && self.verify.as_ref().is_none_or(|p| p.passed);
        self.verify = Some(VerifyRecord { values, passed });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DOT: &str = include_str!("../../fixtures/dot_product.mir");

    fn run(src: &str, fault: Option<FaultSpec>) -> RunOutcome {
        let p = parse_program(src).unwrap();
        execute(&p, &BTreeMap::new(), fault.as_ref(), &ExecConfig::default()).unwrap()
    }

    #[test]
    fn dot_product_golden() {
        let out = run(DOT, None);
        assert_eq!(out.status, RunStatus::Completed);
        // 1*5 + 2*6 + 3*7 + 4*8
        assert_eq!(out.printed, vec![Value::float(70.0)]);
        assert!(out.verify.unwrap().passed);
        assert_eq!(out.dynamic_instruction_count as usize, out.trace.len());
        for (i, e) in out.trace.events.iter().enumerate() {
            assert_eq!(e.index, i as u64);
            assert_eq!(e.operand_locations.len(), e.operand_values.len());
        }
    }

    #[test]
    fn address_fault_traps() {
        let golden = run(DOT, None);
        let load = golden
            .trace
            .events
            .iter()
            .find(|e| e.opcode == Opcode::Load)
            .unwrap();
        let fault = FaultSpec {
            index: load.index,
            target: FaultTarget::Operand(0),
            bit: 40,
        };
        let out = run(DOT, Some(fault));
        assert_eq!(
            out.status,
            RunStatus::Trapped {
                trap: TrapReason::MemoryOutOfBounds {
                    addr: load.operand_values[0].as_int().unwrap() + (1 << 40)
                },
                index: load.index
            }
        );
        assert!(out.fault_applied);
    }

    #[test]
    fn divide_by_zero_traps() {
        let out = run("@main {\n  %z = mov 0\n  %x = idiv 4, %z\n  ret\n}\n", None);
        assert!(matches!(
            out.status,
            RunStatus::Trapped {
                trap: TrapReason::DivideByZero,
                index: 1
            }
        ));
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn budget_exhaustion_is_a_hang() {
        let p = parse_program("@main {\nloop:\n  br loop\n}\n").unwrap();
        let cfg = ExecConfig {
            budget: 50,
            ..Default::default()
        };
        let out = execute(&p, &BTreeMap::new(), None, &cfg).unwrap();
        assert_eq!(out.status, RunStatus::Hung);
        assert_eq!(out.dynamic_instruction_count, 50);
    }

    #[test]
    fn nan_fcmp_is_false_not_a_trap() {
        let src = "@main {\n  %n = mov f0x7ff8000000000000\n  %c = fcmp.lt %n, 1.0\n  %d = fcmp.ne %n, %n\n  print %c\n  print %d\n  ret\n}\n";
        let out = run(src, None);
        assert_eq!(out.printed, vec![Value::int(0), Value::int(1)]);
    }

    #[test]
    fn operand_fault_persists_result_fault_does_not_touch_sources() {
        let src = "@main {\n  %a = mov 8\n  %b = iadd %a, 0\n  print %a\n  print %b\n  ret\n}\n";
        let op = run(
            src,
            Some(FaultSpec {
                index: 1,
                target: FaultTarget::Operand(0),
                bit: 0,
            }),
        );
        assert_eq!(op.printed, vec![Value::int(9), Value::int(9)]);
        let res = run(
            src,
            Some(FaultSpec {
                index: 1,
                target: FaultTarget::Result,
                bit: 0,
            }),
        );
        assert_eq!(res.printed, vec![Value::int(8), Value::int(9)]);
    }

    #[test]
    fn invalid_fault_target_is_an_error() {
        let p = parse_program("@main {\n  %a = mov 8\n  ret\n}\n").unwrap();
        let f = FaultSpec {
            index: 0,
            target: FaultTarget::Operand(3),
            bit: 0,
        };
        let err = execute(&p, &BTreeMap::new(), Some(&f), &ExecConfig::default()).unwrap_err();
        assert!(matches!(err, VmError::InvalidFaultTarget { .. }));
        let f = FaultSpec { index: 9, ..f };
        let err = execute(&p, &BTreeMap::new(), Some(&f), &ExecConfig::default()).unwrap_err();
        assert!(matches!(err, VmError::FaultNotReached { .. }));
    }

    #[test]
    fn calls_qualify_registers_by_depth() {
        let src = ".entry @main\n@main {\n  %x = mov 1\n  %r = call @f\n  %s = iadd %x, %r\n  print %s\n  ret\n}\n@f {\n  %x = mov 41\n  ret %x\n}\n";
        let out = run(src, None);
        assert_eq!(out.printed, vec![Value::int(42)]);
        let ret = out.trace.events.iter().find(|e| e.opcode == Opcode::Ret).unwrap();
        assert_eq!(ret.operand_locations[0], Some("%x@1".parse().unwrap()));
        assert_eq!(ret.result_location, Some("%r".parse().unwrap()));
    }

    #[test]
    fn print_precision_loses_low_digits() {
        let v = round_for_print(Value::float(1.234_567_891), Some(3));
        assert_eq!(v, Value::float(1.235));
        assert_eq!(round_for_print(Value::int(5), Some(3)), Value::int(5));
    }

    #[test]
    fn region_ids_attribute_to_innermost() {
        let src = "@main {\n  #region 1\n  %a = mov 1\n  #region 2\n  %b = mov 2\n  #endregion 2\n  #endregion 1\n  ret\n}\n";
        let out = run(src, None);
        let ids: Vec<_> = out.trace.events.iter().map(|e| e.region_id).collect();
        assert_eq!(ids, vec![Some(1), Some(1), Some(2), Some(2), Some(2), Some(1), None]);
    }

    #[test]
    fn inputs_bind_parameters() {
        let p = parse_program("@main(%n) {\n  %m = imul %n, 2\n  print %m\n  ret\n}\n").unwrap();
        let cfg = ExecConfig::default();
        let err = execute(&p, &BTreeMap::new(), None, &cfg).unwrap_err();
        assert!(matches!(err, VmError::MissingInput(_)));
        let input = BTreeMap::from([(Location::reg("n"), Value::int(21))]);
        let out = execute(&p, &input, None, &cfg).unwrap();
        assert_eq!(out.printed, vec![Value::int(42)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fault_prefix_matches_golden(idx in 0u64..40, bit in 0u8..64, result in any::<bool>()) {
            let p = parse_program(DOT).unwrap();
            let cfg = ExecConfig::default();
            let golden = execute(&p, &BTreeMap::new(), None, &cfg).unwrap();
            let idx = idx % golden.dynamic_instruction_count;
            let ev = &golden.trace.events[idx as usize];
            let target = if result && ev.result_value.is_some() {
                FaultTarget::Result
            } else if !ev.operand_values.is_empty() {
                FaultTarget::Operand(0)
            } else {
                return Ok(());
            };
            let f = FaultSpec { index: idx, target, bit };
            let a = execute(&p, &BTreeMap::new(), Some(&f), &cfg).unwrap();
            let b = execute(&p, &BTreeMap::new(), Some(&f), &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&a.trace.events[..idx as usize], &golden.trace.events[..idx as usize]);
            prop_assert_eq!(a.dynamic_instruction_count as usize, a.trace.len());
        }
    }
}
