//! Statistically sized fault-injection campaigns.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand::{seq::index, Rng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dddg::{classify_interface_with, AccessIndex};
use crate::mirvm::{
    execute, ExecConfig, FaultSpec, FaultTarget, Location, Program, RunOutcome, RunStatus, Value, VmError,
};
use crate::traceio::{split_regions_with, SplitOptions, Trace};

/// Faulty runs get at most this multiple of the golden instruction count
/// (plus [`HANG_SLACK`]) before they are declared hung.
pub const HANG_FACTOR: u64 = 10;
pub const HANG_SLACK: u64 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("population size must be positive")]
    EmptyPopulationSize,
    #[error("margin must be in (0, 1), got {0}")]
    BadMargin(f64),
    #[error("p must be in (0, 1), got {0}")]
    BadProportion(f64),
    #[error("confidence level must be in (0, 1), got {0}")]
    BadConfidence(f64),
    #[error("empty population for scope {0}")]
    EmptyPopulation(Scope),
    #[error("golden run failed: {0}")]
    GoldenFailed(RunStatus),
    #[error("region {0} never executes")]
    UnknownRegion(u32),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("sample size must be at least 1")]
    ZeroSamples,
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Level95,
    Level99,
    /// A confidence level in (0, 1), z from the normal quantile.
    Level(f64),
    /// An explicit z score.
    Z(f64),
}

impl Confidence {
    pub fn from_level(level: f64) -> Result<Self, CampaignError> {
        if !(level > 0.0 && level < 1.0) {
            return Err(CampaignError::BadConfidence(level));
        }
        Ok(if level == 0.95 {
            Confidence::Level95
        } else if level == 0.99 {
            Confidence::Level99
        } else {
            Confidence::Level(level)
        })
    }

    pub fn z(self) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        match self {
            Confidence::Level95 => 1.960,
            Confidence::Level99 => 2.576,
            Confidence::Level(c) => Normal::standard().inverse_cdf(0.5 + c / 2.0),
            Confidence::Z(z) => z,
        }
    }

    pub fn level(self) -> Option<f64> {
        match self {
            Confidence::Level95 => Some(0.95),
            Confidence::Level99 => Some(0.99),
            Confidence::Level(c) => Some(c),
            Confidence::Z(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// `None` is an infinite population.
    pub population: Option<u64>,
    pub confidence: Confidence,
    pub z: f64,
    pub margin: f64,
    pub p: f64,
    pub n: u64,
}

pub fn sample_size(population: Option<u64>, confidence: Confidence, margin: f64, p: f64) -> Result<SamplePlan, CampaignError> {
    if population == Some(0) {
        return Err(CampaignError::EmptyPopulationSize);
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(CampaignError::BadMargin(margin));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(CampaignError::BadProportion(p));
    }
    let z = confidence.z();
    let n0 = z * z * p * (1.0 - p) / (margin * margin);
    // Tiny slack so float noise on an exact integer does not round up.
    let ceil = |x: f64| (x - 1e-9).ceil().max(1.0) as u64;
    let n = match population {
        None => ceil(n0),
        Some(big_n) => ceil(big_n as f64 / (1.0 + (big_n - 1) as f64 / n0)).min(big_n),
    };
    Ok(SamplePlan {
        population,
        confidence,
        z,
        margin,
        p,
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteClass {
    /// Values flowing into the scope: reads of a location before the
    /// scope writes it.
    Inputs,
    /// Every other operand and result slot in the scope.
    Internals,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scope {
    /// `None` is the whole program.
    pub region: Option<u32>,
    pub class: SiteClass,
}

impl Scope {
    pub const PROGRAM: Scope = Scope {
        region: None,
        class: SiteClass::Both,
    };
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let class = match self.class {
            SiteClass::Inputs => "inputs",
            SiteClass::Internals => "internals",
            SiteClass::Both => "both",
        };
        match self.region {
            None => write!(f, "program:{class}"),
            Some(id) => write!(f, "region:{id}:{class}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad scope `{0}`: expected program[:CLASS] or region:ID[:CLASS], CLASS one of inputs|internals|both")]
pub struct ParseScopeError(String);

impl FromStr for Scope {
    type Err = ParseScopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseScopeError(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let class = |c: Option<&&str>| match c.copied() {
            None | Some("both") => Ok(SiteClass::Both),
            Some("inputs") => Ok(SiteClass::Inputs),
            Some("internals") => Ok(SiteClass::Internals),
            Some(_) => Err(err()),
        };
        match parts.as_slice() {
            ["program", rest @ ..] if rest.len() <= 1 => Ok(Scope {
                region: None,
                class: class(rest.first())?,
            }),
            ["region", id, rest @ ..] if rest.len() <= 1 => Ok(Scope {
                region: Some(id.parse().map_err(|_| err())?),
                class: class(rest.first())?,
            }),
            _ => Err(err()),
        }
    }
}

/// Injectable value slots; each contributes 64 bit positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Population {
    pub scope: Scope,
    /// Sorted by (index, operand slots then result).
    pub slots: Vec<(u64, FaultTarget)>,
}

impl Population {
    pub fn len(&self) -> u64 {
        self.slots.len() as u64 * 64
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn site(&self, i: u64) -> FaultSpec {
        let (index, target) = self.slots[(i / 64) as usize];
        FaultSpec {
            index,
            target,
            bit: (i % 64) as u8,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = FaultSpec> + '_ {
        (0..self.len()).map(|i| self.site(i))
    }
}

/// Operand slots must read a location (immediates are not data) and
/// result slots must produce a value.
pub fn enumerate_targets(trace: &Trace, scope: Scope) -> Result<Population, CampaignError> {
    let mut slots = Vec::new();
    let mut push_event = |e: &crate::traceio::TraceEvent, is_input: &mut dyn FnMut(&Location) -> bool| {
        for (k, l) in e.reads() {
            let input = is_input(l);
            let take = match scope.class {
                SiteClass::Inputs => input,
                SiteClass::Internals => !input,
                SiteClass::Both => true,
            };
            if take {
                slots.push((e.index, FaultTarget::Operand(k as u32)));
            }
        }
        if e.result_value.is_some() && scope.class != SiteClass::Inputs {
            slots.push((e.index, FaultTarget::Result));
        }
    };
    match scope.region {
        None => {
            let mut written = std::collections::HashSet::new();
            for e in &trace.events {
                push_event(e, &mut |l| !written.contains(l));
                if let Some(l) = &e.result_location {
                    written.insert(l.clone());
                }
            }
        }
        Some(id) => {
            let opts = SplitOptions {
                roots: None,
                lenient: true,
            };
            let instances = split_regions_with(trace, &opts).expect("lenient split does not fail");
            let access = AccessIndex::new(trace);
            let mut any = false;
            // Pieces of one instance share an ordinal; treat each piece's span
            // on its own since pieces are contiguous runs of the region.
            for inst in instances.iter().filter(|i| i.region_id == Some(id)) {
                any = true;
                let iface = classify_interface_with(inst, trace, &access);
                let mut written = std::collections::HashSet::new();
                for e in inst.events(trace) {
                    push_event(e, &mut |l| iface.inputs.contains(l) && !written.contains(l));
                    if let Some(l) = &e.result_location {
                        written.insert(l.clone());
                    }
                }
            }
            if !any {
                return Err(CampaignError::UnknownRegion(id));
            }
        }
    }
    if slots.is_empty() {
        return Err(CampaignError::EmptyPopulation(scope));
    }
    Ok(Population { scope, slots })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manifestation {
    VerificationSuccess,
    VerificationFailed,
    Crashed,
}

impl fmt::Display for Manifestation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Manifestation::VerificationSuccess => "verification_success",
            Manifestation::VerificationFailed => "verification_failed",
            Manifestation::Crashed => "crashed",
        })
    }
}

/// Traps and hangs crash. A completed run succeeds when its
/// `verify_check` passed; programs without one must reproduce the golden
/// printed values and return value bit for bit.
pub fn classify(outcome: &RunOutcome, golden: &RunOutcome) -> Manifestation {
    match outcome.status {
        RunStatus::Trapped { .. } | RunStatus::Hung => Manifestation::Crashed,
        RunStatus::Completed => {
            let ok = match &outcome.verify {
                Some(v) => v.passed,
                None => outcome.printed == golden.printed && outcome.return_value == golden.return_value,
            };
            if ok {
                Manifestation::VerificationSuccess
            } else {
                Manifestation::VerificationFailed
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub verification_success: u64,
    pub verification_failed: u64,
    pub crashed: u64,
}

impl Tallies {
    pub fn add(&mut self, m: Manifestation) {
        match m {
            Manifestation::VerificationSuccess => self.verification_success += 1,
            Manifestation::VerificationFailed => self.verification_failed += 1,
            Manifestation::Crashed => self.crashed += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.verification_success + self.verification_failed + self.crashed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub fault: FaultSpec,
    pub manifestation: Manifestation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub plan: Option<SamplePlan>,
    pub scope: Scope,
    pub seed: u64,
    pub population_size: u64,
    /// Sites were drawn with replacement because the population was
    /// smaller than the requested sample.
    pub with_replacement: bool,
    pub exhaustive: bool,
    pub m: u64,
    pub tallies: Tallies,
    pub success_rate: f64,
    pub golden_instructions: u64,
    pub records: Vec<FaultRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SampleRequest {
    /// Size from confidence and margin over the scope's population.
    Statistical { confidence: Confidence, margin: f64, p: f64 },
    Fixed { n: u64 },
    /// Every site in the population.
    Exhaustive,
}

#[derive(Clone, Debug)]
pub struct CampaignRequest {
    pub sample: SampleRequest,
    pub scope: Scope,
    pub seed: u64,
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
    /// Upper bound on the per-run instruction budget.
    pub max_budget: u64,
}

impl Default for CampaignRequest {
    fn default() -> Self {
        Self {
            sample: SampleRequest::Statistical {
                confidence: Confidence::Level95,
                margin: 0.03,
                p: 0.5,
            },
            scope: Scope::PROGRAM,
            seed: 0,
            jobs: 0,
            max_budget: crate::mirvm::DEFAULT_BUDGET,
        }
    }
}

/// A golden run plus its site population, reusable across campaigns.
pub struct Prepared<'p> {
    pub program: &'p Program,
    pub input: &'p BTreeMap<Location, Value>,
    pub golden: RunOutcome,
    pub population: Population,
    pub config: ExecConfig,
}

pub fn prepare<'p>(
    program: &'p Program,
    input: &'p BTreeMap<Location, Value>,
    scope: Scope,
    max_budget: u64,
) -> Result<Prepared<'p>, CampaignError> {
    let golden = execute(
        program,
        input,
        None,
        &ExecConfig {
            budget: max_budget,
            ..Default::default()
        },
    )?;
    if !golden.status.is_completed() {
        return Err(CampaignError::GoldenFailed(golden.status));
    }
    let population = enumerate_targets(&golden.trace, scope)?;
    let budget = max_budget.min(
        golden
            .dynamic_instruction_count
            .saturating_mul(HANG_FACTOR)
            .saturating_add(HANG_SLACK),
    );
    let config = ExecConfig {
        budget,
        memory_size: None,
        reference: golden.verify.as_ref().map(|v| v.values.clone()),
        record_trace: false,
    };
    Ok(Prepared {
        program,
        input,
        golden,
        population,
        config,
    })
}

impl Prepared<'_> {
    pub fn inject(&self, fault: &FaultSpec) -> Result<Manifestation, CampaignError> {
        let out = execute(self.program, self.input, Some(fault), &self.config)?;
        Ok(classify(&out, &self.golden))
    }

    /// Site indices for a request, in ascending order.
    pub fn draw(&self, sample: SampleRequest, seed: u64) -> Result<(Option<SamplePlan>, Vec<u64>, bool), CampaignError> {
        let len = self.population.len();
        let (plan, n) = match sample {
            SampleRequest::Exhaustive => return Ok((None, (0..len).collect(), false)),
            SampleRequest::Fixed { n } => (None, n),
            SampleRequest::Statistical { confidence, margin, p } => {
                let plan = sample_size(Some(len), confidence, margin, p)?;
                (Some(plan), plan.n)
            }
        };
        if n == 0 {
            return Err(CampaignError::ZeroSamples);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if n <= len {
            let mut picks: Vec<u64> = index::sample(&mut rng, len as usize, n as usize)
                .into_iter()
                .map(|i| i as u64)
                .collect();
            picks.sort_unstable();
            Ok((plan, picks, false))
        } else {
            log::warn!("population {len} smaller than sample {n}; drawing with replacement");
            let mut picks: Vec<u64> = (0..n).map(|_| rng.gen_range(0..len)).collect();
            picks.sort_unstable();
            Ok((plan, picks, true))
        }
    }

    pub fn run(&self, sample: SampleRequest, seed: u64, jobs: usize) -> Result<CampaignResult, CampaignError> {
        let (plan, picks, with_replacement) = self.draw(sample, seed)?;
        let work = || -> Result<Vec<FaultRecord>, CampaignError> {
            picks
                .par_iter()
                .map(|&i| {
                    let fault = self.population.site(i);
                    Ok(FaultRecord {
                        fault,
                        manifestation: self.inject(&fault)?,
                    })
                })
                .collect()
        };
        let records = if jobs == 0 {
            work()?
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| CampaignError::ThreadPool(e.to_string()))?
                .install(work)?
        };
        let mut tallies = Tallies::default();
        for r in &records {
            tallies.add(r.manifestation);
        }
        let m = records.len() as u64;
        Ok(CampaignResult {
            plan,
            scope: self.population.scope,
            seed,
            population_size: self.population.len(),
            with_replacement,
            exhaustive: matches!(sample, SampleRequest::Exhaustive),
            m,
            success_rate: tallies.verification_success as f64 / m as f64,
            tallies,
            golden_instructions: self.golden.dynamic_instruction_count,
            records,
        })
    }
}

pub fn run_campaign(
    program: &Program,
    input: &BTreeMap<Location, Value>,
    request: &CampaignRequest,
) -> Result<CampaignResult, CampaignError> {
    prepare(program, input, request.scope, request.max_budget)?.run(request.sample, request.seed, request.jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirvm::parse_program;

    #[test]
    fn sample_sizes() {
        let s = |c, e| sample_size(None, c, e, 0.5).unwrap().n;
        // Closed-form oracles: ceil(1.96^2 * 0.25 / 0.03^2) and ceil(2.576^2 * 0.25 / 0.01^2).
        assert_eq!(s(Confidence::Level95, 0.03), (1.96f64 * 1.96 * 0.25 / 0.0009).ceil() as u64);
        assert_eq!(s(Confidence::Level95, 0.03), 1068);
        assert_eq!(s(Confidence::Level99, 0.01), 16590);
        for c in [Confidence::Level95, Confidence::Level99] {
            for e in [0.01, 0.03, 0.1, 0.5] {
                assert!(sample_size(Some(100), c, e, 0.5).unwrap().n <= 100);
            }
        }
        assert!(sample_size(Some(0), Confidence::Level95, 0.03, 0.5).is_err());
        assert!(sample_size(None, Confidence::Level95, 0.0, 0.5).is_err());
        assert!(sample_size(None, Confidence::Level95, 0.03, 1.0).is_err());
        let lvl = Confidence::from_level(0.9).unwrap().z();
        assert!((lvl - 1.6449).abs() < 1e-3);
    }

    #[test]
    fn scope_round_trip() {
        for s in ["program:both", "program:inputs", "region:3:internals", "region:12:inputs"] {
            assert_eq!(s.parse::<Scope>().unwrap().to_string(), s);
        }
        assert_eq!("program".parse::<Scope>().unwrap(), Scope::PROGRAM);
        assert!("region:x:inputs".parse::<Scope>().is_err());
        assert!("loop:1".parse::<Scope>().is_err());
    }

    fn golden_trace(src: &str) -> Trace {
        let p = parse_program(src).unwrap();
        execute(&p, &BTreeMap::new(), None, &ExecConfig::default()).unwrap().trace
    }

    #[test]
    fn straight_line_result_sites() {
        let mut src = String::from("@main {\n");
        for i in 0..10 {
            src.push_str(&format!("  %r{i} = mov {i}\n"));
        }
        src.push_str("  ret\n}\n");
        let t = golden_trace(&src);
        let pop = enumerate_targets(
            &t,
            Scope {
                region: None,
                class: SiteClass::Internals,
            },
        )
        .unwrap();
        assert_eq!(pop.len(), 640);
        assert!(pop.slots.iter().all(|s| s.1 == FaultTarget::Result));
    }

    #[test]
    fn region_input_sites() {
        let src = "@main {\n  %a = mov 1.5\n  %b = mov 2.5\n  #region 1\n  %s = fadd %a, %b\n  %t = fmul %s, %s\n  #endregion 1\n  print %t\n  ret\n}\n";
        let t = golden_trace(src);
        let inputs = enumerate_targets(
            &t,
            Scope {
                region: Some(1),
                class: SiteClass::Inputs,
            },
        )
        .unwrap();
        assert_eq!(inputs.len(), 128);
        let scratch = "@main {\n  #region 1\n  %s = mov 1\n  #endregion 1\n  ret\n}\n";
        let t = golden_trace(scratch);
        let e = enumerate_targets(
            &t,
            Scope {
                region: Some(1),
                class: SiteClass::Inputs,
            },
        );
        assert!(matches!(e, Err(CampaignError::EmptyPopulation(_))));
    }

    #[test]
    fn forced_masking() {
        // Every value in the region is overwritten by a constant before use.
        let src = ".memory 4\n.verify M[0]\n@main {\n  #region 1\n  %a = mov 1\n  %a = mov 2\n  %b = mov 3\n  %b = mov 4\n  #endregion 1\n  store M[0], 7\n  verify_check\n  ret\n}\n";
        let p = parse_program(src).unwrap();
        let req = CampaignRequest {
            sample: SampleRequest::Exhaustive,
            scope: "region:1:internals".parse().unwrap(),
            ..Default::default()
        };
        let r = run_campaign(&p, &BTreeMap::new(), &req).unwrap();
        assert_eq!(r.m, 4 * 64);
        assert_eq!(r.success_rate, 1.0);
    }

    #[test]
    fn forced_crashing() {
        // Each loaded value is the next address in an 8-cell memory.
        let mut src = String::from(".memory 8\n.data M[0] = 1, 2, 3, 4, 5, 6, 7, 0\n.verify %p\n@main {\n  %p = mov 0\n");
        for _ in 0..7 {
            src.push_str("  %p = load M[%p]\n");
        }
        src.push_str("  verify_check\n  ret\n}\n");
        let p = parse_program(&src).unwrap();
        let req = CampaignRequest {
            sample: SampleRequest::Exhaustive,
            ..Default::default()
        };
        let r = run_campaign(&p, &BTreeMap::new(), &req).unwrap();
        assert!(r.success_rate < 0.1, "{}", r.success_rate);
        assert!(r.tallies.crashed > r.tallies.verification_failed);
    }

    #[test]
    fn trapping_golden_run_is_rejected() {
        let p = parse_program("@main {\n  %z = mov 0\n  %a = idiv 1, %z\n  ret\n}\n").unwrap();
        let e = run_campaign(&p, &BTreeMap::new(), &CampaignRequest::default());
        assert!(matches!(e, Err(CampaignError::GoldenFailed(_))));
    }

    #[test]
    fn reproducible() {
        let p = parse_program(include_str!("../../fixtures/dot_product.mir")).unwrap();
        let req = CampaignRequest {
            sample: SampleRequest::Fixed { n: 200 },
            seed: 9,
            jobs: 2,
            ..Default::default()
        };
        let a = run_campaign(&p, &BTreeMap::new(), &req).unwrap();
        let b = run_campaign(
            &p,
            &BTreeMap::new(),
            &CampaignRequest {
                jobs: 4,
                ..req.clone()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tallies.total(), a.m);
        assert_eq!(a.success_rate, a.tallies.verification_success as f64 / a.m as f64);
    }
}
