use std::path::Path;

use hetpart_core::cost::{build_cost_table, Capacities, CostDocument, CostError, CostTable, Device, ProfileDocument, Profiles};
use hetpart_core::graph::{
    cartpole_network, layer_specs, ComputeGraph, GraphDocument, GraphError, LayerEntry, LayerSpec,
    NetworkDocument,
};
use hetpart_core::partition::{
    partition as solve, simulate_schedule, sweep_batch_sizes, AssignmentDocument, PartitionError,
};
use hetpart_core::train::report::pooled_final_moving_average;
use hetpart_core::train::{reward_error, train_run, DqnConfig, TrainError, TrainMode, TrainReport, TrainSummary};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::files::{ensure_dir, load_json, parse_json, read_input, write_csv, write_json, InputFile, RunManifest};
use crate::verify::{self, Suite};
use crate::{CliError, PartitionArgs, ProfileArgs, SweepArgs, TrainArgs, VerifyArgs};

pub const SEED_ENV: &str = "HETPART_SEED";
pub const TRAIN_CONFIG_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        if e.is_infeasible() {
            CliError::Infeasible(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Config(_) | TrainError::Engine(_) => CliError::Input(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

/// A graph file holds either explicit nodes and edges or a network template.
enum GraphInput {
    Explicit(ComputeGraph),
    Network(NetworkDocument),
}

impl GraphInput {
    fn graph(&self) -> Result<ComputeGraph, CliError> {
        match self {
            GraphInput::Explicit(g) => Ok(g.clone()),
            GraphInput::Network(n) => Ok(n.build()?),
        }
    }
}

fn load_graph(path: &Path) -> Result<(GraphInput, InputFile), CliError> {
    let (text, input) = read_input(path)?;
    let probe: serde_json::Value = parse_json(&input.path, &text)?;
    let parsed = if probe.get("nodes").is_some() {
        let doc: GraphDocument = parse_json(&input.path, &text)?;
        GraphInput::Explicit(doc.into_graph()?)
    } else {
        GraphInput::Network(parse_json(&input.path, &text)?)
    };
    Ok((parsed, input))
}

fn load_profiles(path: Option<&Path>, manifest: &mut RunManifest) -> Result<Profiles, CliError> {
    match path {
        None => Ok(Profiles::default()),
        Some(p) => {
            let doc = load_json::<ProfileDocument>(p)?;
            manifest.inputs.push(doc.input);
            Ok(doc.value.into_profiles()?)
        }
    }
}

fn load_capacities(
    path: Option<&Path>,
    profiles: &Profiles,
    manifest: &mut RunManifest,
) -> Result<Capacities, CliError> {
    match path {
        None => Ok(profiles.capacities()),
        Some(p) => {
            let doc = load_json::<Capacities>(p)?;
            manifest.inputs.push(doc.input);
            if doc.value.0.values().any(|c| !(*c >= 0.0)) {
                return Err(CliError::Input(format!("{}: capacities must be non-negative", p.display())));
            }
            Ok(doc.value)
        }
    }
}

pub fn profile(args: &ProfileArgs) -> Result<(), CliError> {
    let out = &args.common.out;
    let mut manifest = RunManifest::new("profile", out);
    let (input, file) = load_graph(&args.graph)?;
    manifest.inputs.push(file);
    let profiles = load_profiles(args.common.profiles.as_deref(), &mut manifest)?;
    let graph = input.graph()?;
    let table = build_cost_table(&graph, &profiles)?;

    ensure_dir(out)?;
    write_json(&out.join("cost.json"), &table.to_document())?;
    write_csv(&out.join("cost.csv"), |w| table.write_csv(w))?;
    manifest.outputs = vec!["cost.json".into(), "cost.csv".into()];
    manifest.write(out)?;
    let mm = graph.mm_nodes().count();
    println!(
        "{} nodes ({mm} MM), {} cost entries -> {}",
        graph.len(),
        table.len(),
        out.join("cost.json").display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct PartitionSummary {
    schema_version: u32,
    makespan_s: f64,
    simulated_makespan_s: f64,
    mm_nodes_pl: usize,
    mm_nodes_aie: usize,
    explored: u64,
}

pub fn partition(args: &PartitionArgs) -> Result<(), CliError> {
    let out = &args.common.out;
    let mut manifest = RunManifest::new("partition", out);
    let (input, file) = load_graph(&args.graph)?;
    manifest.inputs.push(file);
    let graph = input.graph()?;
    let profiles = load_profiles(args.common.profiles.as_deref(), &mut manifest)?;
    let cost: CostTable = match &args.cost {
        Some(p) => {
            let doc = load_json::<CostDocument>(p)?;
            manifest.inputs.push(doc.input);
            doc.value.into_table()?
        }
        None => build_cost_table(&graph, &profiles)?,
    };
    let caps = load_capacities(args.capacities.as_deref(), &profiles, &mut manifest)?;
    let sol = solve(&graph, &cost, &caps)?;
    let sim = simulate_schedule(&sol.assignment, &graph, &cost, profiles.links())?;
    let summary = PartitionSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        makespan_s: sol.makespan_s,
        simulated_makespan_s: sim.makespan_s,
        mm_nodes_pl: sol.assignment.count_mm_on(&graph, Device::Pl),
        mm_nodes_aie: sol.assignment.count_mm_on(&graph, Device::Aie),
        explored: sol.explored,
    };

    ensure_dir(out)?;
    write_json(&out.join("assignment.json"), &sol.assignment.to_document())?;
    write_csv(&out.join("schedule.csv"), |w| sol.schedule.write_csv(w))?;
    write_csv(&out.join("simulated_schedule.csv"), |w| sim.write_csv(w))?;
    write_json(&out.join("partition.json"), &summary)?;
    manifest.outputs = ["assignment.json", "schedule.csv", "simulated_schedule.csv", "partition.json"]
        .map(String::from)
        .to_vec();
    manifest.write(out)?;
    println!(
        "makespan {:.6e} s (model), {:.6e} s (simulated); MM nodes: {} PL, {} AIE",
        summary.makespan_s, summary.simulated_makespan_s, summary.mm_nodes_pl, summary.mm_nodes_aie
    );
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    if args.batch_sizes.len() < 2 {
        return Err(CliError::Input("a sweep needs at least two batch sizes".into()));
    }
    if args.batch_sizes.contains(&0) {
        return Err(CliError::Input("batch sizes must be at least 1".into()));
    }
    let out = &args.common.out;
    let mut manifest = RunManifest::new("sweep", out);
    let (input, file) = load_graph(&args.graph)?;
    manifest.inputs.push(file);
    let GraphInput::Network(template) = input else {
        return Err(CliError::Input(format!(
            "{}: a sweep needs a network template, not an explicit graph",
            args.graph.display()
        )));
    };
    let profiles = load_profiles(args.common.profiles.as_deref(), &mut manifest)?;
    let caps = load_capacities(args.capacities.as_deref(), &profiles, &mut manifest)?;
    manifest.parameters = json!({ "batch_sizes": args.batch_sizes });
    let report = sweep_batch_sizes(
        &template.layer_specs()?,
        template.algorithm,
        &args.batch_sizes,
        &profiles,
        &caps,
    )?;

    ensure_dir(out)?;
    write_csv(&out.join("sweep.csv"), |w| report.write_csv(w))?;
    write_json(
        &out.join("sweep.json"),
        &json!({
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "monotone": report.is_monotone(),
            "strict_increase": report.has_strict_increase(),
            "rows": report.rows,
            "violations": report.violations,
        }),
    )?;
    manifest.outputs = vec!["sweep.csv".into(), "sweep.json".into()];
    manifest.write(out)?;
    for r in &report.rows {
        println!("bs {:>6}: {} AIE / {} PL MM nodes, makespan {:.6e} s", r.batch_size, r.aie_nodes, r.pl_nodes, r.makespan_s);
    }
    if report.is_monotone() {
        println!("AIE node count is non-decreasing");
    } else {
        println!("VIOLATION: AIE node count drops at batch sizes {:?}", report.violations);
    }
    Ok(())
}

/// Network and DQN settings for `hetpart train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfigDocument {
    #[serde(default = "train_schema")]
    pub schema_version: u32,
    /// Q-network layers; the CartPole 4-64-64-2 network when omitted.
    #[serde(default)]
    pub layers: Option<Vec<LayerEntry>>,
    #[serde(default)]
    pub dqn: DqnConfig,
}

fn train_schema() -> u32 {
    TRAIN_CONFIG_SCHEMA_VERSION
}

impl TrainConfigDocument {
    fn network(&self) -> Result<Vec<LayerSpec>, CliError> {
        if self.schema_version != TRAIN_CONFIG_SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "unsupported train config schema_version {}",
                self.schema_version
            )));
        }
        match &self.layers {
            Some(l) => Ok(layer_specs(l)?),
            None => Ok(cartpole_network()),
        }
    }
}

fn seed_override(raw: Option<String>) -> Result<Option<u64>, CliError> {
    raw.map(|s| {
        s.trim()
            .parse()
            .map_err(|_| CliError::Input(format!("{SEED_ENV}={s:?} is not an unsigned integer")))
    })
    .transpose()
}

fn write_report(out: &Path, name: &str, report: &TrainReport, outputs: &mut Vec<String>) -> Result<(), CliError> {
    write_csv(&out.join(format!("{name}.csv")), |w| report.write_csv(w))?;
    write_json(&out.join(format!("{name}.json")), report)?;
    outputs.push(format!("{name}.csv"));
    outputs.push(format!("{name}.json"));
    Ok(())
}

fn run_seeds(
    cfg: &DqnConfig,
    network: &[LayerSpec],
    mode: &TrainMode,
    seeds: &[u64],
    out: &Path,
    outputs: &mut Vec<String>,
) -> Result<Vec<TrainReport>, CliError> {
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let name = format!("{}_seed{seed}", mode.name());
        match train_run(cfg, network, mode, seed) {
            Ok(r) => {
                println!(
                    "{name}: {} episodes, final MA {:.2}, {} skipped steps",
                    r.episode_rewards.len(),
                    r.final_moving_average().unwrap_or(f64::NAN),
                    r.skipped_steps
                );
                write_report(out, &name, &r, outputs)?;
                reports.push(r);
            }
            Err(TrainError::Diverged { step, consecutive, report }) => {
                write_json(&out.join(format!("{name}.diverged.json")), &report)?;
                return Err(CliError::Diverged(format!(
                    "{name}: loss non-finite for {consecutive} consecutive steps at train step {step}; partial report in {name}.diverged.json"
                )));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(reports)
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    if !args.fp32 && args.assignment.is_none() {
        return Err(CliError::Input("nothing to run: pass --fp32 and/or --assignment".into()));
    }
    if args.seeds == 0 {
        return Err(CliError::Input("--seeds must be at least 1".into()));
    }
    let out = &args.common.out;
    let mut manifest = RunManifest::new("train", out);
    let doc = match &args.config {
        Some(p) => {
            let d = load_json::<TrainConfigDocument>(p)?;
            manifest.inputs.push(d.input);
            d.value
        }
        None => TrainConfigDocument {
            schema_version: TRAIN_CONFIG_SCHEMA_VERSION,
            layers: None,
            dqn: DqnConfig::default(),
        },
    };
    let network = doc.network()?;
    let mut cfg = doc.dqn.clone();
    if let Some(seed) = seed_override(std::env::var(SEED_ENV).ok())? {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let seeds: Vec<u64> = (0..args.seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    manifest.seeds = seeds.clone();

    let mixed = match args.assignment.as_deref() {
        None => None,
        Some("partition") => {
            let profiles = load_profiles(args.common.profiles.as_deref(), &mut manifest)?;
            let caps = load_capacities(args.capacities.as_deref(), &profiles, &mut manifest)?;
            let graph = hetpart_core::graph::build_training_graph(
                &network,
                hetpart_core::graph::Algorithm::Dqn,
                cfg.batch_size,
            )?;
            let cost = build_cost_table(&graph, &profiles)?;
            Some(solve(&graph, &cost, &caps)?.assignment)
        }
        Some(path) => {
            let d = load_json::<AssignmentDocument>(Path::new(path))?;
            manifest.inputs.push(d.input);
            Some(d.value.into_assignment()?)
        }
    };
    manifest.parameters = json!({ "dqn": cfg, "fp32": args.fp32, "assignment": args.assignment });

    ensure_dir(out)?;
    let mut outputs = Vec::new();
    if let Some(a) = &mixed {
        write_json(&out.join("assignment.json"), &a.to_document())?;
        outputs.push("assignment.json".into());
    }
    let baseline = if args.fp32 {
        Some(run_seeds(&cfg, &network, &TrainMode::Fp32Baseline, &seeds, out, &mut outputs)?)
    } else {
        None
    };
    let quantized = match mixed {
        Some(a) => Some(run_seeds(&cfg, &network, &TrainMode::Mixed(a), &seeds, out, &mut outputs)?),
        None => None,
    };
    let summary = match (&quantized, &baseline) {
        (Some(q), Some(b)) => {
            let err = reward_error(q, b).ok();
            TrainSummary::new(q).with_baseline(b, err)
        }
        (Some(runs), None) | (None, Some(runs)) => TrainSummary::new(runs),
        (None, None) => unreachable!("checked above"),
    };
    write_json(&out.join("summary.json"), &summary)?;
    outputs.push("summary.json".into());
    manifest.outputs = outputs;
    manifest.write(out)?;

    if let Some(b) = &baseline {
        println!("fp32 pooled final MA {:.2}", pooled_final_moving_average(b).unwrap_or(f64::NAN));
    }
    if let Some(q) = &quantized {
        println!("mixed pooled final MA {:.2}", pooled_final_moving_average(q).unwrap_or(f64::NAN));
    }
    if let Some(e) = summary.reward_error_percent {
        println!("reward error {e:.2}%");
    }
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let suite: Suite = args.suite.parse()?;
    let result = verify::run(suite);
    let text = serde_json::to_string_pretty(&result).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{text}");
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_json(&out.join(format!("verify-{}.json", args.suite)), &result)?;
    }
    if result.passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!("suite {} failed", args.suite)))
    }
}
