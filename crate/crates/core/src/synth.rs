//! Random well-formed mini-IR programs for property tests.
//!
//! Generated programs always parse and their fault-free run completes:
//! no integer division, constant or loop-bounded addresses, constant
//! shift amounts, and loop counters the body never touches.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SynthParams {
    pub statements: usize,
    pub max_loop_iters: u32,
    pub max_depth: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            statements: 30,
            max_loop_iters: 5,
            max_depth: 2,
        }
    }
}

const FREGS: usize = 4;
const IREGS: usize = 4;
/// Floats live in M[0..8], integers in M[8..16].
const FBASE: u64 = 0;
const IBASE: u64 = 8;
const CELLS: u64 = 8;

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    out: String,
    labels: u32,
    regions: u32,
    budget: usize,
}

impl Gen<'_> {
    fn line(&mut self, s: impl AsRef<str>) {
        let _ = writeln!(self.out, "  {}", s.as_ref());
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("L{}", self.labels)
    }

    fn f(&mut self) -> String {
        format!("%f{}", self.rng.gen_range(0..FREGS))
    }

    fn i(&mut self) -> String {
        format!("%n{}", self.rng.gen_range(0..IREGS))
    }

    fn fconst(&mut self) -> String {
        let v: f64 = self.rng.gen_range(-4.0..4.0);
        format!("{:.3}", if v.abs() < 0.01 { 0.5 } else { v })
    }

    fn iconst(&mut self) -> i64 {
        self.rng.gen_range(-9..10)
    }

    /// Address of a cell in a bank, indexed by a loop counter when one is open.
    fn addr(&mut self, base: u64, counter: Option<(u32, u32)>) -> String {
        match counter {
            Some((d, iters)) if self.rng.gen_bool(0.5) => {
                let off = self.rng.gen_range(0..=CELLS - iters as u64);
                format!("M[%k{d} + {}]", base + off)
            }
            _ => format!("M[{}]", base + self.rng.gen_range(0..CELLS)),
        }
    }

    fn block(&mut self, depth: u32, counter: Option<(u32, u32)>, params: &SynthParams) {
        let n = self.rng.gen_range(1..=6);
        for _ in 0..n {
            if self.budget == 0 {
                return;
            }
            self.budget -= 1;
            self.statement(depth, counter, params);
        }
    }

    fn statement(&mut self, depth: u32, counter: Option<(u32, u32)>, params: &SynthParams) {
        let choice = self.rng.gen_range(0..100);
        match choice {
            0..=17 => {
                let (d, a) = (self.f(), self.f());
                let b = if self.rng.gen_bool(0.6) { self.f() } else { self.fconst() };
                let op = *["fadd", "fsub", "fmul", "fadd"].choose(self.rng).unwrap();
                // Self-accumulation shows up often in real kernels.
                let a = if self.rng.gen_bool(0.3) { d.clone() } else { a };
                self.line(format!("{d} = {op} {a}, {b}"));
            }
            18..=21 => {
                let (d, a, c) = (self.f(), self.f(), self.fconst());
                self.line(format!("{d} = fdiv {a}, {c}"));
            }
            22..=33 => {
                let (d, a) = (self.i(), self.i());
                let b = if self.rng.gen_bool(0.5) { self.i() } else { self.iconst().to_string() };
                let op = *["iadd", "isub", "imul"].choose(self.rng).unwrap();
                self.line(format!("{d} = {op} {a}, {b}"));
            }
            34..=39 => {
                let (d, a) = (self.i(), self.i());
                let op = if self.rng.gen_bool(0.5) { "shr" } else { "shl" };
                let s = self.rng.gen_range(0..8);
                self.line(format!("{d} = {op} {a}, {s}"));
            }
            40..=43 => {
                let (d, a) = (self.i(), self.f());
                self.line(format!("{d} = trunc_f2i {a}"));
            }
            44..=46 => {
                let (d, a) = (self.f(), self.i());
                self.line(format!("{d} = ext_i2f {a}"));
            }
            47..=50 => {
                if self.rng.gen_bool(0.5) {
                    let (d, c) = (self.f(), self.fconst());
                    self.line(format!("{d} = mov {c}"));
                } else {
                    let (d, c) = (self.i(), self.iconst());
                    self.line(format!("{d} = mov {c}"));
                }
            }
            51..=60 => {
                if self.rng.gen_bool(0.5) {
                    let (d, m) = (self.f(), self.addr(FBASE, counter));
                    self.line(format!("{d} = load {m}"));
                } else {
                    let (d, m) = (self.i(), self.addr(IBASE, counter));
                    self.line(format!("{d} = load {m}"));
                }
            }
            61..=70 => {
                if self.rng.gen_bool(0.5) {
                    let (m, s) = (self.addr(FBASE, counter), self.f());
                    self.line(format!("store {m}, {s}"));
                } else {
                    let (m, s) = (self.addr(IBASE, counter), self.i());
                    self.line(format!("store {m}, {s}"));
                }
            }
            71..=74 => {
                if self.rng.gen_bool(0.6) {
                    let (d, s) = (self.rng.gen_range(2..8), self.f());
                    self.line(format!("print.e{d} {s}"));
                } else {
                    let s = self.i();
                    self.line(format!("print {s}"));
                }
            }
            75..=86 => {
                // if-then
                let (then, end) = (self.label(), self.label());
                let cond = if self.rng.gen_bool(0.5) {
                    let (a, b) = (self.f(), self.f());
                    let p = *["lt", "le", "eq", "ne"].choose(self.rng).unwrap();
                    format!("fcmp.{p} {a}, {b}")
                } else {
                    let (a, b) = (self.i(), self.i());
                    let p = *["lt", "le", "eq", "ne"].choose(self.rng).unwrap();
                    format!("icmp.{p} {a}, {b}")
                };
                self.line(format!("%b{depth} = {cond}"));
                self.line(format!("br_cond %b{depth}, {then}, {end}"));
                let _ = writeln!(self.out, "{then}:");
                self.block(depth, counter, params);
                self.line(format!("br {end}"));
                let _ = writeln!(self.out, "{end}:");
            }
            _ if depth < params.max_depth => {
                let iters = self.rng.gen_range(1..=params.max_loop_iters);
                let (head, exit) = (self.label(), self.label());
                self.regions += 1;
                let r = self.regions;
                self.line(format!("%k{depth} = mov 0"));
                self.line(format!("#region {r}"));
                let _ = writeln!(self.out, "{head}:");
                self.block(depth + 1, Some((depth, iters)), params);
                self.line(format!("%k{depth} = iadd %k{depth}, 1"));
                self.line(format!("%c{depth} = icmp.lt %k{depth}, {iters}"));
                self.line(format!("br_cond %c{depth}, {head}, {exit}"));
                let _ = writeln!(self.out, "{exit}:");
                self.line(format!("#endregion {r}"));
            }
            _ => {
                let (d, a) = (self.f(), self.f());
                self.line(format!("{d} = fadd {d}, {a}"));
            }
        }
    }
}

pub fn generate_program(seed: u64) -> String {
    generate_with(seed, &SynthParams::default())
}

pub fn generate_with(seed: u64, params: &SynthParams) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = String::new();
    let _ = writeln!(head, "; generated, seed {seed}");
    let _ = writeln!(head, ".memory 16");
    let floats: Vec<String> = (0..CELLS).map(|_| format!("{:.3}", rng.gen_range(-8.0..8.0))).collect();
    let ints: Vec<String> = (0..CELLS).map(|_| rng.gen_range(-50..50).to_string()).collect();
    let _ = writeln!(head, ".data M[{FBASE}] = {}", floats.join(", "));
    let _ = writeln!(head, ".data M[{IBASE}] = {}", ints.join(", "));
    let _ = writeln!(head, ".verify M[{FBASE}], M[{IBASE}] tol 1e-9");

    let mut g = Gen {
        rng: &mut rng,
        out: String::new(),
        labels: 0,
        regions: 0,
        budget: params.statements,
    };
    for r in 0..FREGS {
        let c = g.fconst();
        g.line(format!("%f{r} = mov {c}"));
    }
    for r in 0..IREGS {
        let c = g.iconst();
        g.line(format!("%n{r} = mov {c}"));
    }
    while g.budget > 0 {
        g.block(0, None, params);
    }
    g.line(format!("store M[{FBASE}], %f0"));
    g.line(format!("store M[{IBASE}], %n0"));
    g.line("verify_check");
    g.line("print %f1");
    g.line("ret");
    format!("{head}@main {{\n{}}}\n", g.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirvm::{execute, parse_program, ExecConfig};
    use std::collections::BTreeMap;

    #[test]
    fn generated_programs_run() {
        for seed in 0..200 {
            let src = generate_program(seed);
            let p = parse_program(&src).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{src}"));
            let out = execute(&p, &BTreeMap::new(), None, &ExecConfig::default()).unwrap();
            assert!(out.status.is_completed(), "seed {seed}: {}\n{src}", out.status);
            assert!(out.trace.len() <= 10_000);
        }
    }
}
