use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ivselect::data::validate;
use ivselect::estimation::Projection;
use ivselect::io::{
    combo_diagnostics, export_dendrogram, ingest_csv, ColumnSpec, ConfigEcho, LatePayload, Payload,
    ReportEnvelope, SelectionPayload,
};
use ivselect::selection::{plausibly_exogenous_union_ci, run_late, run_selection};
use ivselect::simulation::{run_monte_carlo_with, DesignName, Method, SimulationDesign};
use ivselect::{
    partial_out_controls, Error, Linkage, Metric, ModelFit, Result, SelectionConfig,
    SignificanceRule,
};

/// Selects valid instruments by clustering just-identified estimates.
#[derive(Parser)]
#[command(name = "ivselect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select valid instruments from a CSV file.
    Select(SelectArgs),
    /// Run a Monte Carlo design.
    Simulate(SimulateArgs),
}

#[derive(Parser)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    outcome: String,
    /// Comma-separated endogenous regressor columns.
    #[arg(long, value_delimiter = ',', required = true)]
    endogenous: Vec<String>,
    /// Comma-separated candidate instrument columns.
    #[arg(long, value_delimiter = ',', required = true)]
    instruments: Vec<String>,
    /// Comma-separated exogenous control columns.
    #[arg(long, value_delimiter = ',')]
    controls: Vec<String>,
    /// euclidean, manhattan or minkowski:P
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    metric: Metric,
    /// ward, complete, median or centroid
    #[arg(long, default_value = "ward", value_parser = parse_linkage)]
    linkage: Linkage,
    /// Fixed Sargan level instead of 0.1 / ln(n).
    #[arg(long)]
    alpha: Option<f64>,
    /// Report every effect group instead of the largest one.
    #[arg(long)]
    late: bool,
    /// Union of just-identified intervals at this miscoverage level.
    #[arg(long, value_name = "LEVEL")]
    union_ci: Option<f64>,
    /// Write the JSON report here ('-' for stdout instead of the table).
    #[arg(long, value_name = "OUT")]
    json: Option<PathBuf>,
    /// Write the dendrogram document here.
    #[arg(long, value_name = "OUT")]
    dendrogram: Option<PathBuf>,
}

#[derive(Parser)]
struct SimulateArgs {
    #[arg(long)]
    design: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of oracle, naive, ahc.
    #[arg(long, value_delimiter = ',', default_value = "oracle,naive,ahc")]
    methods: Vec<String>,
    /// Write the JSON report here ('-' for stdout instead of the table).
    #[arg(long, value_name = "OUT")]
    json: Option<PathBuf>,
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    match s {
        "euclidean" => Ok(Metric::Euclidean),
        "manhattan" => Ok(Metric::Manhattan),
        _ => match s.strip_prefix("minkowski:") {
            Some(p) => p
                .parse::<f64>()
                .map(|p| Metric::Minkowski { p })
                .map_err(|_| format!("bad minkowski exponent '{p}'")),
            None => Err("expected euclidean, manhattan or minkowski:P".into()),
        },
    }
}

fn parse_linkage(s: &str) -> std::result::Result<Linkage, String> {
    match s {
        "ward" => Ok(Linkage::Ward),
        "complete" => Ok(Linkage::Complete),
        "median" => Ok(Linkage::Median),
        "centroid" => Ok(Linkage::Centroid),
        _ => Err("expected ward, complete, median or centroid".into()),
    }
}

/// Timing goes into the report only on request so that repeated runs stay
/// byte-identical by default.
fn timing(start: Instant) -> Option<f64> {
    std::env::var_os("IVSELECT_TIMING").map(|_| start.elapsed().as_secs_f64() * 1e3)
}

fn workers() -> Result<Option<usize>> {
    match std::env::var("IVSELECT_WORKERS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&w| w > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("IVSELECT_WORKERS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn emit(json_out: &Option<PathBuf>, envelope: &ReportEnvelope, table: &str) -> Result<()> {
    let json = envelope.to_json()?;
    match json_out {
        Some(p) if p.as_os_str() == "-" => print!("{json}"),
        Some(p) => {
            std::fs::write(p, json)?;
            print!("{table}");
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn names(idx: &[usize], all: &[String]) -> String {
    if idx.is_empty() {
        return "(none)".into();
    }
    idx.iter().map(|&i| all[i].as_str()).collect::<Vec<_>>().join(", ")
}

fn coefficient_rows(out: &mut String, fit: &ModelFit, endogenous: &[String]) {
    let _ = writeln!(out, "  {:<16}{:>14}{:>14}", "coefficient", "estimate", "std. error");
    for ((name, b), se) in endogenous.iter().zip(&fit.beta).zip(fit.std_errors()) {
        let _ = writeln!(out, "  {name:<16}{b:>14.6}{se:>14.6}");
    }
}

fn cmd_select(args: SelectArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let columns = ColumnSpec {
        outcome: args.outcome,
        endogenous: args.endogenous,
        instruments: args.instruments,
        controls: args.controls,
        intercept: true,
    };
    let raw = ingest_csv(&args.input, &columns)?;
    if let Some(first) = validate(&raw).first() {
        return Err(Error::Config(format!("dataset check failed: {first}")));
    }
    let config = SelectionConfig {
        metric: args.metric,
        linkage: args.linkage,
        significance: match args.alpha {
            Some(alpha) => SignificanceRule::Fixed { alpha },
            None => SignificanceRule::PaperDefault,
        },
        ..Default::default()
    };
    config.check(raw.j())?;
    if let Some(level) = args.union_ci {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!("--union-ci level {level} must lie in (0, 1)")));
        }
    }
    let n = raw.n();
    let alpha = config.significance.alpha(n);
    let echo = ConfigEcho::Select {
        columns: columns.clone(),
        selection: config.clone(),
        alpha,
        late: args.late,
        union_ci: args.union_ci,
    };
    let inst = &columns.instruments;
    let endo = &columns.endogenous;
    let mut table = String::new();
    let _ = writeln!(
        table,
        "n = {n}, instruments = {}, regressors = {}, Sargan level = {alpha:.6}",
        raw.j(),
        raw.p()
    );

    let (envelope, dendro_doc, code) = if args.late {
        let run = run_late(&raw, &config)?;
        let _ = writeln!(table, "{} effect groups", run.result.groups.len());
        for (g, group) in run.result.groups.iter().enumerate() {
            let center: Vec<String> = group.center.iter().map(|c| format!("{c:.6}")).collect();
            let _ = writeln!(table, "group {}: {}", g + 1, names(&group.ivs, inst));
            let _ = writeln!(table, "  center: {}", center.join(", "));
            coefficient_rows(&mut table, &group.fit, endo);
            let _ = writeln!(
                table,
                "  Sargan: statistic {:.4}, df {}, p-value {:.4}",
                group.sargan.statistic, group.sargan.df, group.sargan.p_value
            );
        }
        let doc = export_dendrogram(&run.dendrogram, &run.estimates)?;
        let payload = Payload::Late(LatePayload {
            instrument_names: inst.clone(),
            endogenous_names: endo.clone(),
            n,
            result: run.result,
        });
        let env = ReportEnvelope::new(echo, payload, combo_diagnostics(&run.estimates));
        (env, doc, ExitCode::SUCCESS)
    } else {
        let run = run_selection(&raw, &config)?;
        let res = &run.result;
        let data = partial_out_controls(&raw)?;
        let strength = Projection::new(&data)
            .and_then(|p| p.first_stage_strength(&res.valid))
            .ok();
        let union = match args.union_ci {
            Some(level) => Some(plausibly_exogenous_union_ci(&raw, &config, level)?),
            None => None,
        };
        if res.all_rejected {
            let _ = writeln!(
                table,
                "WARNING: the Sargan test rejected at every step; reporting the step with the largest p-value"
            );
        }
        let _ = writeln!(table, "{} invalid: {}", res.invalid.len(), names(&res.invalid, inst));
        let _ = writeln!(table, "{} valid: {}", res.valid.len(), names(&res.valid, inst));
        let _ = writeln!(table, "stopped at K = {} of {} estimates", res.stop_k, run.estimates.len());
        coefficient_rows(&mut table, &res.fit, endo);
        let last = &res.path[res.stop_k - 1].sargan;
        let _ = writeln!(
            table,
            "Sargan: statistic {:.4}, df {}, p-value {:.4}, critical value {:.4}",
            last.statistic, last.df, last.p_value, last.critical_value
        );
        match strength {
            Some(s) => {
                let label = if raw.p() == 1 { "first-stage F" } else { "Cragg-Donald" };
                let _ = writeln!(table, "{label}: {s:.3}");
            }
            None => {
                let _ = writeln!(table, "first-stage strength: unavailable");
            }
        }
        let flagged = run.estimates.iter().filter(|e| e.near_singular).count();
        if flagged > 0 {
            let _ = writeln!(table, "{flagged} near-singular just-identified estimates");
        }
        if let Some(u) = &union {
            for (name, iv) in endo.iter().zip(&u.intervals) {
                let _ = writeln!(table, "union interval {name}: [{:.6}, {:.6}]", iv[0], iv[1]);
            }
        }
        let code = if res.all_rejected { ExitCode::from(2) } else { ExitCode::SUCCESS };
        let doc = export_dendrogram(&run.dendrogram, &run.estimates)?;
        let payload = Payload::Selection(SelectionPayload {
            instrument_names: inst.clone(),
            endogenous_names: endo.clone(),
            n,
            result: run.result,
            first_stage_strength: strength,
            union_ci: union,
        });
        let env = ReportEnvelope::new(echo, payload, combo_diagnostics(&run.estimates));
        (env, doc, code)
    };

    // Serialize everything before writing anything.
    let dendro_json = match &args.dendrogram {
        Some(_) => Some(serde_json::to_string_pretty(&dendro_doc)? + "\n"),
        None => None,
    };
    let mut envelope = envelope;
    envelope.timing_ms = timing(start);
    if let (Some(path), Some(doc)) = (&args.dendrogram, dendro_json) {
        std::fs::write(path, doc)?;
    }
    emit(&args.json, &envelope, &table)?;
    Ok(code)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let name: DesignName = args.design.parse()?;
    let methods: Vec<Method> = args
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_>>()?;
    let design = SimulationDesign::new(name, args.n)?;
    let report = run_monte_carlo_with(
        &design,
        args.reps,
        args.seed,
        &methods,
        &SelectionConfig::default(),
        workers()?,
    )?;
    let table = report.to_table();
    let echo = ConfigEcho::Simulate {
        design: name.to_string(),
        n: args.n,
        reps: args.reps,
        seed: args.seed,
        methods,
    };
    let mut envelope = ReportEnvelope::new(echo, Payload::Simulation(report), Vec::new());
    envelope.timing_ms = timing(start);
    emit(&args.json, &envelope, &table)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is reserved for a fully
    // rejected selection.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
