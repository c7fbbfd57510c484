//! `accelsim`: traffic analysis, simulation and published-figure comparison
//! for the accelerator model.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use accelsim_core::arch::HwConfig;
use accelsim_core::config::{load_hw, load_network};
use accelsim_core::report::{compare, gradcheck, roofline_table, COMPARE_PRESETS};
use accelsim_core::sim::{
    check_against_model, check_against_reference, count_super_layer, random_operands,
    run_super_layer, SimOptions,
};
use accelsim_core::spec::{NetworkSpec, Phase};
use accelsim_core::traffic::{network_summary, super_traffic, StrategySet, TrafficReport};
use accelsim_core::Error;

use output::{emit, fmt_f, Format, Report};

#[derive(Parser)]
#[command(
    name = "accelsim",
    version,
    about = "Memory-traffic model and dataflow simulator for a CNN training accelerator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Network preset name or JSON file.
    #[arg(long, default_value = "alexnet")]
    net: String,
    /// Hardware preset name or JSON file.
    #[arg(long, default_value = "alexnet-full")]
    hw: String,
    /// Training phase: fp, dp or ku.
    #[arg(long, default_value = "fp")]
    phase: Phase,
    /// Strategy subset, e.g. `1234`, `1,2`, `all` or `none`.
    #[arg(long, default_value = "all")]
    strategies: StrategySet,
    /// Override the network's batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Seed for every random tensor.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer external traffic and normalized bandwidth from the closed-form model.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Restrict to one super layer (1-based).
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Run one super layer through the dataflow simulator.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Super layer to simulate (1-based).
        #[arg(long, default_value_t = 1)]
        layer: usize,
        /// Count transactions only, without data.
        #[arg(long)]
        count_only: bool,
        /// Require byte-exact agreement with the traffic model.
        #[arg(long)]
        check_against_model: bool,
        /// Require agreement with the reference operators.
        #[arg(long)]
        check_against_reference: bool,
        /// Learning rate of the kernel update.
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        /// Write the simulated output tensor as JSON.
        #[arg(long)]
        dump_output: Option<PathBuf>,
    },
    /// Compare computed figures with the published ones.
    Compare {
        /// One of the built-in comparison presets, or `all`.
        preset: String,
        /// Replace every row's tolerance (relative).
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check backpropagated kernel gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        /// Perturb one analytic gradient entry (negative control).
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bandwidth-bound throughput of this design and prior work.
    Roofline {
        #[command(flatten)]
        common: Common,
        /// DRAM bandwidths in bytes/s, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "19.2e9")]
        dram: Vec<f64>,
    },
}

enum Failure {
    /// A check ran and did not pass.
    Check(String),
    /// Bad input or configuration.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("io error: {e}"))
    }
}

type CmdResult = Result<(), Failure>;

fn load(common: &Common) -> Result<(NetworkSpec, HwConfig), Failure> {
    let mut net = load_network(&common.net)?;
    if let Some(b) = common.batch {
        net.batch = b;
    }
    net.validate()?;
    let hw = load_hw(&common.hw)?;
    Ok((net, hw))
}

fn layer_index(net: &NetworkSpec, layer: usize) -> Result<usize, Failure> {
    if layer == 0 || layer > net.layers.len() {
        return Err(Failure::Usage(format!(
            "layer {layer} out of range 1..={} (layers are 1-based)",
            net.layers.len()
        )));
    }
    Ok(layer - 1)
}

fn traffic_row(label: String, r: &TrafficReport) -> Vec<String> {
    vec![
        label,
        fmt_f(r.input_bytes as f64 / 1e6, 3),
        fmt_f(r.output_bytes as f64 / 1e6, 3),
        fmt_f(r.kernel_bytes as f64 / 1e6, 3),
        fmt_f(r.conv_ops as f64 / 1e9, 3),
        fmt_f(r.normalized_bw, 3),
    ]
}

const TRAFFIC_HEADERS: [&str; 6] = [
    "layer",
    "input_MB",
    "output_MB",
    "kernel_MB",
    "conv_Gop",
    "MB_per_GFlop",
];

fn analyze(common: &Common, layer: Option<usize>) -> CmdResult {
    let (net, hw) = load(common)?;
    let word = hw.word_bytes;
    let report = match layer {
        Some(l) => {
            let idx = layer_index(&net, l)?;
            let r = super_traffic(idx, &net, common.phase, &common.strategies, word)?;
            let json = serde_json::json!({
                "network": net.name, "phase": common.phase, "strategies": common.strategies,
                "layers": [{"layer": l, "traffic": r}],
            });
            Report::new(
                TRAFFIC_HEADERS.to_vec(),
                vec![traffic_row(l.to_string(), &r)],
                &json,
            )
        }
        None => {
            let s = network_summary(&net, common.phase, &common.strategies, word)?;
            let mut rows: Vec<Vec<String>> = s
                .layers
                .iter()
                .map(|(l, r)| traffic_row((l + 1).to_string(), r))
                .collect();
            if !s.layers.is_empty() {
                rows.push(traffic_row("total".into(), &s.total));
            }
            let layers: Vec<_> = s
                .layers
                .iter()
                .map(|(l, r)| serde_json::json!({"layer": l + 1, "traffic": r}))
                .collect();
            let json = serde_json::json!({
                "network": net.name, "phase": common.phase, "strategies": common.strategies,
                "layers": layers, "total": s.total,
            });
            Report::new(TRAFFIC_HEADERS.to_vec(), rows, &json)
        }
    };
    emit(&report.render(common.format), common.out.as_deref())?;
    Ok(())
}

struct SimulateArgs {
    layer: usize,
    count_only: bool,
    check_model: bool,
    check_reference: bool,
    alpha: f64,
    dump_output: Option<PathBuf>,
}

fn simulate(common: &Common, a: SimulateArgs) -> CmdResult {
    let (net, hw) = load(common)?;
    let idx = layer_index(&net, a.layer)?;
    if a.count_only && a.check_reference {
        return Err(Failure::Usage(
            "--check-against-reference needs data; drop --count-only".into(),
        ));
    }
    let (result, operands) = if a.count_only {
        (
            count_super_layer(&net, idx, common.phase, &hw, &common.strategies)?,
            None,
        )
    } else {
        let ops = random_operands(&net, idx, common.phase, common.seed)?;
        let options = SimOptions {
            track_addresses: false,
            alpha: a.alpha,
        };
        (
            run_super_layer(
                &net,
                idx,
                &ops.as_input(),
                &hw,
                &common.strategies,
                &options,
            )?,
            Some(ops),
        )
    };

    let mut failures = Vec::new();
    let mut rows = vec![
        vec!["input_bytes".into(), result.traffic.input_bytes.to_string()],
        vec![
            "output_bytes".into(),
            result.traffic.output_bytes.to_string(),
        ],
        vec![
            "kernel_bytes".into(),
            result.traffic.kernel_bytes.to_string(),
        ],
        vec!["conv_ops".into(), result.traffic.conv_ops.to_string()],
        vec![
            "normalized_bw".into(),
            fmt_f(result.traffic.normalized_bw, 4),
        ],
        vec![
            "cycles_per_image".into(),
            result.cycles_per_image.to_string(),
        ],
        vec!["cycles".into(), result.cycles.to_string()],
        vec!["sram_bytes".into(), result.sram_bytes.to_string()],
        vec!["register_bits".into(), result.register_bits.to_string()],
    ];
    if let Some(ps) = &result.pool_schedule {
        rows.push(vec![
            "pool_engine_cycles".into(),
            ps.required_cycles.to_string(),
        ]);
        rows.push(vec!["pool_engine_feasible".into(), ps.feasible.to_string()]);
    }
    let mut model_check = None;
    if a.check_model {
        let mismatch = check_against_model(&net, &result, hw.word_bytes)?;
        let verdict = match &mismatch {
            None => "pass".to_string(),
            Some(m) => {
                let msg = format!(
                    "{} differs: simulated {} vs model {}",
                    m.field, m.simulated, m.model
                );
                failures.push(format!("model check failed: {msg}"));
                format!("FAIL ({msg})")
            }
        };
        rows.push(vec!["check_against_model".into(), verdict]);
        model_check = Some(mismatch);
    }
    let mut reference_check = None;
    if a.check_reference {
        let ops = operands.as_ref().expect("functional run has operands");
        let c = check_against_reference(&net, idx, ops, &result, a.alpha)?;
        let pass = c.max_rel_error <= 1e-5;
        let verdict = if pass {
            format!("pass (max rel error {:.3e})", c.max_rel_error)
        } else {
            let msg = format!(
                "max rel error {:.3e} at element {}",
                c.max_rel_error, c.worst_index
            );
            failures.push(format!("reference check failed: {msg}"));
            format!("FAIL ({msg})")
        };
        rows.push(vec!["check_against_reference".into(), verdict]);
        reference_check = Some(c);
    }

    if let Some(path) = &a.dump_output {
        let tensor = result
            .outputs
            .as_ref()
            .map(|t| serde_json::to_value(t).expect("tensor serializes"))
            .or_else(|| {
                result
                    .kernels
                    .as_ref()
                    .map(|k| serde_json::to_value(k).expect("kernels serialize"))
            })
            .ok_or_else(|| Failure::Usage("no output tensor (counting-only run)".into()))?;
        std::fs::write(
            path,
            serde_json::to_string_pretty(&tensor).expect("json value"),
        )?;
    }

    let json = serde_json::json!({
        "result": result,
        "check_against_model": model_check.map(|m| serde_json::json!({"pass": m.is_none(), "mismatch": m})),
        "check_against_reference": reference_check,
    });
    let report = Report::new(vec!["quantity", "value"], rows, &json);
    emit(&report.render(common.format), common.out.as_deref())?;
    match failures.first() {
        Some(f) => Err(Failure::Check(f.clone())),
        None => Ok(()),
    }
}

fn compare_cmd(
    preset: &str,
    tolerance: Option<f64>,
    format: Format,
    out: Option<PathBuf>,
) -> CmdResult {
    let mut rows = compare(preset)?;
    if let Some(t) = tolerance {
        if t.is_nan() || t < 0.0 {
            return Err(Failure::Usage(format!("tolerance must be >= 0, got {t}")));
        }
        rows = rows.iter().map(|r| r.with_tolerance(t)).collect();
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.metric.clone(),
                format!("{}", r.published),
                fmt_f(r.computed, 4),
                fmt_f(r.rel_error, 4),
                fmt_f(r.tolerance, 4),
                if r.pass { "pass" } else { "FAIL" }.into(),
                r.source.clone(),
            ]
        })
        .collect();
    let failed = rows.iter().filter(|r| !r.pass).count();
    let report = Report::new(
        vec![
            "metric",
            "published",
            "computed",
            "rel_error",
            "tolerance",
            "status",
            "source",
        ],
        table,
        &rows,
    )
    .with_footer(format!(
        "{} of {} rows pass",
        rows.len() - failed,
        rows.len()
    ));
    emit(&report.render(format), out.as_deref())?;
    if failed > 0 {
        return Err(Failure::Check(format!(
            "{failed} comparison row(s) outside tolerance"
        )));
    }
    Ok(())
}

fn gradcheck_cmd(
    seed: u64,
    epsilon: f64,
    corrupt: bool,
    format: Format,
    out: Option<PathBuf>,
) -> CmdResult {
    let r = gradcheck(seed, epsilon, corrupt)?;
    let (layer, i, j, u, v) = r.worst;
    let rows = vec![
        vec!["seed".into(), r.seed.to_string()],
        vec!["epsilon".into(), format!("{:e}", r.epsilon)],
        vec!["max_rel_error".into(), format!("{:.3e}", r.max_rel_error)],
        vec![
            "worst_element".into(),
            format!("layer {} kernel[{i}][{j}][{u}][{v}]", layer + 1),
        ],
        vec![
            "alpha_zero_unchanged".into(),
            r.alpha_zero_unchanged.to_string(),
        ],
        vec!["status".into(), if r.pass { "pass" } else { "FAIL" }.into()],
    ];
    let report = Report::new(vec!["quantity", "value"], rows, &r);
    emit(&report.render(format), out.as_deref())?;
    if !r.pass {
        return Err(Failure::Check(format!(
            "gradient mismatch {:.3e} at layer {} kernel[{i}][{j}][{u}][{v}]",
            r.max_rel_error,
            layer + 1
        )));
    }
    if !r.alpha_zero_unchanged {
        return Err(Failure::Check(
            "zero-rate update changed the kernels".into(),
        ));
    }
    Ok(())
}

fn roofline_cmd(common: &Common, dram: &[f64]) -> CmdResult {
    let (net, hw) = load(common)?;
    if let Some(bad) = dram.iter().find(|d| d.is_nan() || **d < 0.0) {
        return Err(Failure::Usage(format!(
            "DRAM bandwidth must be >= 0, got {bad}"
        )));
    }
    let bw = network_summary(&net, common.phase, &common.strategies, hw.word_bytes)?
        .total
        .normalized_bw;
    let rows = roofline_table(bw, dram);
    let table = rows
        .iter()
        .map(|r| {
            vec![
                r.design.clone(),
                fmt_f(r.normalized_bw, 3),
                fmt_f(r.dram_bytes_per_s / 1e9, 2),
                fmt_f(r.attainable_flops / 1e12, 3),
            ]
        })
        .collect();
    let report = Report::new(
        vec![
            "design",
            "MB_per_GFlop",
            "dram_GB_per_s",
            "attainable_TFlop_per_s",
        ],
        table,
        &rows,
    );
    emit(&report.render(common.format), common.out.as_deref())?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Analyze { common, layer } => analyze(&common, layer),
        Command::Simulate {
            common,
            layer,
            count_only,
            check_against_model,
            check_against_reference,
            alpha,
            dump_output,
        } => simulate(
            &common,
            SimulateArgs {
                layer,
                count_only,
                check_model: check_against_model,
                check_reference: check_against_reference,
                alpha,
                dump_output,
            },
        ),
        Command::Compare {
            preset,
            tolerance,
            format,
            out,
        } => {
            if !COMPARE_PRESETS.contains(&preset.as_str()) {
                return Err(Failure::Usage(format!(
                    "unknown comparison preset `{preset}`; available: {}",
                    COMPARE_PRESETS.join(", ")
                )));
            }
            compare_cmd(&preset, tolerance, format, out)
        }
        Command::Gradcheck {
            seed,
            epsilon,
            corrupt_gradient,
            format,
            out,
        } => gradcheck_cmd(seed, epsilon, corrupt_gradient, format, out),
        Command::Roofline { common, dram } => roofline_cmd(&common, &dram),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
