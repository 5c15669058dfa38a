use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use fliptrace::analysis::{analyze, AnalysisError, AnalysisOptions, AnalysisReport};
use fliptrace::campaign::{
    classify, run_campaign, CampaignError, CampaignRequest, CampaignResult, Confidence, SampleRequest, Scope, HANG_FACTOR,
    HANG_SLACK,
};
use fliptrace::mirvm::{
    execute, parse_inputs, parse_program, ExecConfig, FaultSpec, FaultTarget, Location, Program, RunOutcome, Value,
    DEFAULT_BUDGET,
};
use fliptrace::model::{self, BenchmarkRow, ModelError, FEATURES};
use fliptrace::patterns::{feature_vector, structural_features, FeatureVector};
use fliptrace::traceio::TraceFormat;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::output::{emit, json};
use crate::{Cli, Command, Failure, Format, ModelAction, ProgramArgs};

struct Ctx {
    cfg: Config,
    budget: u64,
    seed: u64,
    jobs: usize,
    strict: bool,
    format: Option<Format>,
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(Failure::input)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        budget: cli.budget.or(cfg.budget).unwrap_or(DEFAULT_BUDGET),
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        jobs: cli.jobs.or(cfg.jobs).unwrap_or(0),
        strict: cli.strict,
        format: cli.format,
        cfg,
    };
    if ctx.jobs > 0 {
        // Bounds the model's leave-one-out fits; campaigns build their own pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(ctx.jobs).build_global();
    }
    match &cli.command {
        Command::Trace { prog, out } => cmd_trace(&ctx, prog, out),
        Command::Inject { prog, fault, trace, out } => cmd_inject(&ctx, prog, fault, trace.as_deref(), out.as_deref()),
        Command::Analyze {
            prog,
            fault,
            golden_trace,
            out,
            counts,
        } => cmd_analyze(&ctx, prog, fault, golden_trace.as_deref(), out.as_deref(), counts.as_deref()),
        Command::Campaign {
            prog,
            scope,
            confidence,
            margin,
            proportion,
            samples,
            exhaustive,
            records,
            out,
        } => {
            let cc = ctx.cfg.campaign();
            let scope = scope.clone().or(cc.scope).unwrap_or_else(|| "program".into());
            let sample = if *exhaustive {
                SampleRequest::Exhaustive
            } else if let Some(n) = samples {
                SampleRequest::Fixed { n: *n }
            } else {
                let level = confidence.or(cc.confidence).unwrap_or(0.95);
                SampleRequest::Statistical {
                    confidence: Confidence::from_level(level).map_err(Failure::input)?,
                    margin: margin.or(cc.margin).unwrap_or(0.03),
                    p: proportion.or(cc.proportion).unwrap_or(0.5),
                }
            };
            cmd_campaign(&ctx, prog, &scope, sample, *records, out.as_deref())
        }
        Command::Features { prog, fault, name, out } => cmd_features(&ctx, prog, fault.as_deref(), name.as_deref(), out.as_deref()),
        Command::Model { action, data, ridge, out } => {
            let mc = ctx.cfg.model();
            let data = data.clone().or(mc.data);
            let lambda = ridge.or(mc.ridge).unwrap_or(0.0);
            cmd_model(&ctx, *action, data.as_deref(), lambda, out.as_deref())
        }
        Command::Report { files, out } => cmd_report(&ctx, files, out.as_deref()),
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(anyhow!("cannot read {}: {e}", path.display())))
}

fn load(prog: &ProgramArgs) -> Result<(Program, BTreeMap<Location, Value>), Failure> {
    let text = read_file(&prog.program)?;
    let p = parse_program(&text).map_err(|e| Failure::input(anyhow!("{}:{e}", prog.program.display())))?;
    let input = match &prog.input {
        Some(path) => parse_inputs(&read_file(path)?).map_err(|e| Failure::input(anyhow!("{}:{e}", path.display())))?,
        None => BTreeMap::new(),
    };
    Ok((p, input))
}

fn parse_fault(s: &str) -> Result<FaultSpec, Failure> {
    let bad = || Failure::input(anyhow!("bad fault `{s}`, expected INDEX:TARGET:BIT (e.g. 12:result:3 or 12:operand0:5)"));
    let mut parts = s.trim_start_matches('#').split(':');
    let (Some(i), Some(t), Some(b), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let target = match t {
        "result" | "res" => FaultTarget::Result,
        _ => {
            let k = t.strip_prefix("operand").or_else(|| t.strip_prefix("op")).ok_or_else(bad)?;
            FaultTarget::Operand(k.parse().map_err(|_| bad())?)
        }
    };
    Ok(FaultSpec {
        index: i.parse().map_err(|_| bad())?,
        target,
        bit: b.parse().map_err(|_| bad())?,
    })
}

fn golden_run(p: &Program, input: &BTreeMap<Location, Value>, budget: u64, record: bool) -> Result<RunOutcome, Failure> {
    let cfg = ExecConfig {
        budget,
        record_trace: record,
        ..Default::default()
    };
    let g = execute(p, input, None, &cfg).map_err(Failure::input)?;
    if !g.status.is_completed() {
        return Err(Failure::golden(anyhow!("golden run {}", g.status)));
    }
    Ok(g)
}

fn cmd_trace(ctx: &Ctx, prog: &ProgramArgs, out: &Path) -> Result<(), Failure> {
    let (p, input) = load(prog)?;
    let g = golden_run(&p, &input, ctx.budget, true)?;
    let mut buf = Vec::new();
    TraceFormat::from_path(out).write(&g.trace, &mut buf).context("encoding trace")?;
    emit(Some(out), &buf)?;
    log::info!("{} events written to {}", g.trace.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct InjectReport {
    kind: &'static str,
    fault: FaultSpec,
    fault_applied: bool,
    status: fliptrace::mirvm::RunStatus,
    manifestation: fliptrace::campaign::Manifestation,
    golden_instructions: u64,
    faulty_instructions: u64,
    printed: Vec<String>,
    verify_passed: Option<bool>,
}

fn cmd_inject(ctx: &Ctx, prog: &ProgramArgs, fault: &str, trace: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let fault = parse_fault(fault)?;
    let (p, input) = load(prog)?;
    let g = golden_run(&p, &input, ctx.budget, false)?;
    let cfg = ExecConfig {
        budget: ctx
            .budget
            .min(g.dynamic_instruction_count.saturating_mul(HANG_FACTOR).saturating_add(HANG_SLACK)),
        memory_size: None,
        reference: g.verify.as_ref().map(|v| v.values.clone()),
        record_trace: trace.is_some(),
    };
    let f = execute(&p, &input, Some(&fault), &cfg).map_err(Failure::input)?;
    if let Some(path) = trace {
        let mut buf = Vec::new();
        TraceFormat::from_path(path).write(&f.trace, &mut buf).context("encoding trace")?;
        emit(Some(path), &buf)?;
    }
    let report = InjectReport {
        kind: "inject",
        fault,
        fault_applied: f.fault_applied,
        manifestation: classify(&f, &g),
        status: f.status,
        golden_instructions: g.dynamic_instruction_count,
        faulty_instructions: f.dynamic_instruction_count,
        printed: f.printed.iter().map(|v| v.to_string()).collect(),
        verify_passed: f.verify.map(|v| v.passed),
    };
    emit(out, &json(&report)?)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Tagged<T> {
    kind: String,
    #[serde(flatten)]
    body: T,
}

fn tagged<T>(kind: &str, body: T) -> Tagged<T> {
    Tagged { kind: kind.into(), body }
}

fn cmd_analyze(
    ctx: &Ctx,
    prog: &ProgramArgs,
    fault: &str,
    golden_trace: Option<&Path>,
    out: Option<&Path>,
    counts: Option<&Path>,
) -> Result<(), Failure> {
    let fault = parse_fault(fault)?;
    let (p, input) = load(prog)?;
    if let Some(path) = golden_trace {
        let file = std::fs::File::open(path).map_err(|e| Failure::input(anyhow!("cannot read {}: {e}", path.display())))?;
        let t = TraceFormat::from_path(path)
            .read(file)
            .map_err(|e| Failure::input(anyhow!("{}: {e}", path.display())))?;
        if t.program_hash != p.hash() {
            return Err(Failure::input(anyhow!(
                "{} was recorded from a different program than {}",
                path.display(),
                prog.program.display()
            )));
        }
    }
    let a = analyze(&p, &input, &fault, &AnalysisOptions { budget: ctx.budget }).map_err(|e| match e {
        AnalysisError::GoldenFailed(s) => Failure::golden(anyhow!("golden run {s}")),
        AnalysisError::GoldenVm(_) | AnalysisError::FaultyVm(_) => Failure::input(e),
        other => Failure::from(anyhow::Error::from(other)),
    })?;
    let r = &a.report;
    let csv = r.counts_csv();
    match ctx.format {
        Some(Format::Csv) => emit(out, csv.as_bytes())?,
        _ => emit(out, &json(&tagged("analysis", r))?)?,
    }
    if let Some(path) = counts {
        emit(Some(path), csv.as_bytes())?;
    }
    if ctx.strict && (r.degraded || r.value_compare_degraded) {
        return Err(Failure::degraded(format!(
            "analysis degraded (value comparison lost at #{})",
            r.alignment.alignment_break.map_or("-".into(), |c| c.to_string())
        )));
    }
    Ok(())
}

fn cmd_campaign(
    ctx: &Ctx,
    prog: &ProgramArgs,
    scope: &str,
    sample: SampleRequest,
    records: bool,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let scope: Scope = scope.parse().map_err(Failure::input)?;
    let (p, input) = load(prog)?;
    let request = CampaignRequest {
        sample,
        scope,
        seed: ctx.seed,
        jobs: ctx.jobs,
        max_budget: ctx.budget,
    };
    let mut result = run_campaign(&p, &input, &request).map_err(|e| match e {
        CampaignError::GoldenFailed(s) => Failure::golden(anyhow!("golden run {s}")),
        CampaignError::ThreadPool(_) => Failure::from(anyhow::Error::from(e)),
        other => Failure::input(other),
    })?;
    if !records {
        result.records.clear();
    }
    match ctx.format {
        Some(Format::Csv) => {
            let mut s = String::from(CAMPAIGN_HEADER);
            s.push('\n');
            campaign_row(&mut s, &prog.program.display().to_string(), &result);
            emit(out, s.as_bytes())?;
        }
        _ => emit(out, &json(&tagged("campaign", &result))?)?,
    }
    if ctx.strict && result.with_replacement {
        return Err(Failure::degraded("population smaller than the sample; sites were drawn with replacement"));
    }
    Ok(())
}

const CAMPAIGN_HEADER: &str = "source,scope,seed,population,m,verification_success,verification_failed,crashed,success_rate";

fn campaign_row(s: &mut String, source: &str, r: &CampaignResult) {
    let t = &r.tallies;
    let _ = writeln!(
        s,
        "{source},{},{},{},{},{},{},{},{:.6}",
        r.scope, r.seed, r.population_size, r.m, t.verification_success, t.verification_failed, t.crashed, r.success_rate
    );
}

#[derive(Serialize)]
struct FeatureReport<'a> {
    name: &'a str,
    source: &'static str,
    #[serde(flatten)]
    features: &'a FeatureVector,
}

fn cmd_features(ctx: &Ctx, prog: &ProgramArgs, fault: Option<&str>, name: Option<&str>, out: Option<&Path>) -> Result<(), Failure> {
    let (p, input) = load(prog)?;
    let stem = prog.program.file_stem().and_then(|s| s.to_str()).unwrap_or("program").to_string();
    let name = name.unwrap_or(&stem);
    let (fv, source) = match fault {
        None => {
            let g = golden_run(&p, &input, ctx.budget, true)?;
            (structural_features(&g.trace).map_err(|e| Failure::input(anyhow!("{e}")))?, "structural")
        }
        Some(f) => {
            let fault = parse_fault(f)?;
            let a = analyze(&p, &input, &fault, &AnalysisOptions { budget: ctx.budget }).map_err(|e| match e {
                AnalysisError::GoldenFailed(s) => Failure::golden(anyhow!("golden run {s}")),
                other => Failure::input(other),
            })?;
            (
                feature_vector(&a.pair.faulty, &a.report.patterns).map_err(|e| Failure::input(anyhow!("{e}")))?,
                "detected",
            )
        }
    };
    match ctx.format {
        Some(Format::Json) => emit(out, &json(&FeatureReport { name, source, features: &fv })?)?,
        _ => emit(out, format!("{}\n{}\n", FeatureVector::csv_header(), fv.csv_row(name)).as_bytes())?,
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelRow {
    benchmark: String,
    rates: [f64; 6],
    measured_sr: f64,
    predicted_raw: f64,
    predicted_sr: f64,
    prediction_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelReport {
    estimator: String,
    note: String,
    ridge_lambda: f64,
    features: Vec<String>,
    r_squared: f64,
    #[serde(default)]
    intercept: Option<f64>,
    #[serde(default)]
    coefficients: Option<Vec<f64>>,
    #[serde(default)]
    mean_error: Option<f64>,
    #[serde(default)]
    mean_error_excluding: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    standardized_coefficients: Option<Vec<f64>>,
    #[serde(default)]
    importance: Option<Vec<String>>,
    #[serde(default)]
    rows: Vec<ModelRow>,
}

fn model_err(e: ModelError) -> Failure {
    Failure::input(e)
}

fn cmd_model(ctx: &Ctx, action: ModelAction, data: Option<&Path>, lambda: f64, out: Option<&Path>) -> Result<(), Failure> {
    let rows: Vec<BenchmarkRow> = match data {
        Some(path) => model::parse_rows(&read_file(path)?).map_err(|e| Failure::input(anyhow!("{}: {e}", path.display())))?,
        None => model::bundled_rows(),
    };
    let estimator = if lambda > 0.0 { format!("ridge(lambda={lambda})") } else { "ols".to_string() };
    let mut report = ModelReport {
        note: format!(
            "{estimator} with intercept; a ridge penalty is the stand-in for an unspecified Bayesian prior; predictions clamped to [0, 1]"
        ),
        estimator,
        ridge_lambda: lambda,
        features: FEATURES.iter().map(|s| s.to_string()).collect(),
        r_squared: 0.0,
        intercept: None,
        coefficients: None,
        mean_error: None,
        mean_error_excluding: None,
        standardized_coefficients: None,
        importance: None,
        rows: Vec::new(),
    };
    let kind = match action {
        ModelAction::Fit => {
            let m = model::fit_ridge(&rows, lambda).map_err(model_err)?;
            report.r_squared = model::r_squared(&m, &rows);
            report.intercept = Some(m.intercept);
            report.coefficients = Some(m.beta.to_vec());
            report.standardized_coefficients = Some(model::standardized_coefficients(&m, &rows).to_vec());
            report.rows = rows
                .iter()
                .map(|r| {
                    let p = model::predict(&m, &r.rates);
                    ModelRow {
                        benchmark: r.name.clone(),
                        rates: r.rates,
                        measured_sr: r.measured_sr,
                        predicted_raw: p.raw,
                        predicted_sr: p.clamped,
                        prediction_error: (r.measured_sr - p.clamped).abs() / r.measured_sr,
                    }
                })
                .collect();
            "model_fit"
        }
        ModelAction::Loo | ModelAction::Importance => {
            let ev = model::loo_evaluate_ridge(&rows, lambda).map_err(model_err)?;
            report.r_squared = ev.r_squared;
            report.intercept = Some(ev.full_model.intercept);
            report.coefficients = Some(ev.full_model.beta.to_vec());
            report.standardized_coefficients = Some(ev.std_coeffs.to_vec());
            report.importance = Some(ev.importance_order().iter().map(|s| s.to_string()).collect());
            if action == ModelAction::Loo {
                report.mean_error = Some(ev.mean_error);
                report.mean_error_excluding = Some(ev.mean_error_excluding.clone());
                report.rows = ev
                    .per_row
                    .iter()
                    .zip(&rows)
                    .map(|(e, r)| ModelRow {
                        benchmark: e.name.clone(),
                        rates: r.rates,
                        measured_sr: e.measured_sr,
                        predicted_raw: e.predicted_raw,
                        predicted_sr: e.predicted_sr,
                        prediction_error: e.relative_error,
                    })
                    .collect();
                "model_loo"
            } else {
                "model_importance"
            }
        }
    };
    match ctx.format {
        Some(Format::Csv) => emit(out, model_csv(kind, &report).as_bytes())?,
        _ => emit(out, &json(&tagged(kind, &report))?)?,
    }
    Ok(())
}

fn model_csv(kind: &str, r: &ModelReport) -> String {
    let mut s = String::new();
    if kind == "model_importance" {
        s.push_str("feature,standardized_coefficient,rank\n");
        let coefs = r.standardized_coefficients.clone().unwrap_or_default();
        for (rank, f) in r.importance.iter().flatten().enumerate() {
            let j = FEATURES.iter().position(|x| x == f).unwrap_or(0);
            let _ = writeln!(s, "{f},{:.6},{}", coefs.get(j).copied().unwrap_or(f64::NAN), rank + 1);
        }
        return s;
    }
    let _ = writeln!(s, "benchmark,{},measured_sr,predicted_sr,prediction_error", FEATURES.join(","));
    for row in &r.rows {
        let rates: Vec<String> = row.rates.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{:.3},{:.4}",
            row.benchmark,
            rates.join(","),
            row.measured_sr,
            row.predicted_sr,
            row.prediction_error
        );
    }
    s
}

fn cmd_report(ctx: &Ctx, files: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let mut docs = Vec::new();
    for f in files {
        let v: serde_json::Value =
            serde_json::from_str(&read_file(f)?).map_err(|e| Failure::input(anyhow!("{}: not JSON: {e}", f.display())))?;
        let kind = v
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| Failure::input(anyhow!("{}: no report kind", f.display())))?
            .to_string();
        docs.push((f, kind, v));
    }
    let kind = docs[0].1.clone();
    if let Some((f, k, _)) = docs.iter().find(|d| d.1 != kind) {
        return Err(Failure::input(anyhow!("mixed report kinds: {} is {k}, {} is {kind}", f.display(), docs[0].0.display())));
    }
    let bad = |f: &Path, e: serde_json::Error| Failure::input(anyhow!("{}: not a {kind} report: {e}", f.display()));
    let (summary, csv) = match kind.as_str() {
        "campaign" => {
            let mut csv = format!("{CAMPAIGN_HEADER}\n");
            let mut text = String::new();
            let _ = writeln!(text, "{:<28} {:<20} {:>8} {:>8} {:>8} {:>8} {:>8}", "source", "scope", "m", "success", "failed", "crashed", "SR");
            for (f, _, v) in &docs {
                let r: CampaignResult = serde_json::from_value(v.clone()).map_err(|e| bad(f, e))?;
                let name = f.display().to_string();
                campaign_row(&mut csv, &name, &r);
                let t = &r.tallies;
                let _ = writeln!(
                    text,
                    "{:<28} {:<20} {:>8} {:>8} {:>8} {:>8} {:>8.4}",
                    name,
                    r.scope.to_string(),
                    r.m,
                    t.verification_success,
                    t.verification_failed,
                    t.crashed,
                    r.success_rate
                );
            }
            (text, csv)
        }
        "model_fit" | "model_loo" | "model_importance" => {
            let mut csv = String::new();
            let mut text = String::new();
            for (f, _, v) in &docs {
                let r: ModelReport = serde_json::from_value(v.clone()).map_err(|e| bad(f, e))?;
                let part = model_csv(&kind, &r);
                if csv.is_empty() {
                    csv.push_str(&part);
                } else {
                    csv.extend(part.lines().skip(1).map(|l| format!("{l}\n")));
                }
                let _ = writeln!(text, "{} ({}): R2 = {:.4}", f.display(), r.estimator, r.r_squared);
                if let Some(m) = r.mean_error {
                    let _ = writeln!(text, "  mean leave-one-out error {:.1}%", m * 100.0);
                }
                if let Some(order) = &r.importance {
                    let _ = writeln!(text, "  importance: {}", order.join(" > "));
                }
                for row in &r.rows {
                    let _ = writeln!(
                        text,
                        "  {:<8} measured {:.3} predicted {:.3} error {:.1}%",
                        row.benchmark,
                        row.measured_sr,
                        row.predicted_sr,
                        row.prediction_error * 100.0
                    );
                }
            }
            (text, csv)
        }
        "analysis" => {
            let mut csv = String::from("source,fault,manifestation,degraded,drop_points,patterns,case_verdicts\n");
            let mut text = String::new();
            for (f, _, v) in &docs {
                let r: AnalysisReport = serde_json::from_value(v.clone()).map_err(|e| bad(f, e))?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    f.display(),
                    r.fault,
                    r.manifestation,
                    r.degraded,
                    r.drop_points.len(),
                    r.patterns.len(),
                    r.verdicts.len()
                );
                let _ = writeln!(text, "{}: fault {} -> {}", f.display(), r.fault, r.manifestation);
                for d in &r.drop_points {
                    let _ = writeln!(text, "  drop at #{} (line {}, {}): {} -> {}", d.index, d.src_line, d.opcode, d.count_before, d.count_after);
                }
                for p in &r.patterns {
                    let _ = writeln!(text, "  {} {:?}: {}", p.kind, p.anchor_indices, p.note);
                }
            }
            (text, csv)
        }
        other => return Err(Failure::input(anyhow!("unknown report kind `{other}`"))),
    };
    match ctx.format {
        Some(Format::Csv) => emit(None, csv.as_bytes())?,
        _ => emit(None, summary.as_bytes())?,
    }
    if let Some(path) = out {
        emit(Some(path), csv.as_bytes())?;
    }
    Ok(())
}
