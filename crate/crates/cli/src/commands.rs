use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use sequoia_core::optimizer::{fixed_size_rows, load_cost_model, parse_cost_csv, FixedSizeRow, SpeedupGrid};
use sequoia_core::planner::{best_tree_bounded, UnboundedPlanner};
use sequoia_core::simlab::{
    estimate_acceptance_vector, parse_structures, sample_prompts, scaling_experiment, speedup_experiment,
    write_curve_csv, EstimationReport, ExperimentConfig, ModelPair, ModelPairConfig, ToyLM,
};
use sequoia_core::{AcceptanceVector, CostModel, TokenId, TreeTopology, VerifierKind};

use crate::args::*;
use crate::error::CliError;
use crate::lists::parse_budgets;
use crate::manifest::{self, digest, manifest_path, RunManifest};
use crate::selfcheck;

/// Contexts enumerated when no prompt count is given; larger tables are sampled.
const MAX_ENUMERATED_CONTEXTS: usize = 4096;
/// Prompts sampled from large tables by default.
const DEFAULT_PROMPTS: usize = 200;

/// What a command read and wrote, for its manifest.
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    out: PathBuf,
    out_is_dir: bool,
    seeds: Vec<u64>,
    /// Reported after the outputs and manifest are on disk.
    failure: Option<CliError>,
}

impl Outcome {
    fn file(inputs: Vec<PathBuf>, outputs: Vec<PathBuf>, seeds: Vec<u64>) -> Self {
        let out = outputs[0].clone();
        Outcome {
            inputs,
            outputs,
            out,
            out_is_dir: false,
            seeds,
            failure: None,
        }
    }

    fn dir(inputs: Vec<PathBuf>, outputs: Vec<PathBuf>, out: &Path, seed: u64) -> Self {
        Outcome {
            inputs,
            outputs,
            out: out.to_path_buf(),
            out_is_dir: true,
            seeds: vec![seed],
            failure: None,
        }
    }
}

/// Runs a parsed command and writes its manifest. `args` are the arguments
/// after the program name.
pub fn dispatch(cli: Cli, args: &[String]) -> Result<(), CliError> {
    let Some(outcome) = execute(&cli.command)? else {
        return Ok(());
    };
    let m = RunManifest {
        tool: manifest::TOOL.into(),
        version: manifest::VERSION.into(),
        command: cli.command.name().into(),
        args: args.to_vec(),
        params: serde_json::to_value(&cli.command).expect("arguments serialize"),
        seeds: outcome.seeds,
        inputs: outcome.inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
        outputs: outcome.outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
    };
    m.write(&manifest_path(&outcome.out, outcome.out_is_dir))?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn execute(command: &Command) -> Result<Option<Outcome>, CliError> {
    Ok(Some(match command {
        Command::MakePair(a) => make_pair(a)?,
        Command::Plan(a) => plan(a)?,
        Command::Optimize(a) => optimize(a)?,
        Command::Estimate(a) => estimate(a)?,
        Command::Scaling(a) => scaling(a)?,
        Command::Simulate(a) => simulate(a)?,
        Command::Selfcheck(a) => selfcheck_cmd(a)?,
        Command::Replay(a) => {
            replay(a)?;
            return Ok(None);
        }
    }))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::input(path.display(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::input(path.display(), e))
}

/// Reads an acceptance vector from a JSON list or an object with a `p` list
/// (such as an estimation report).
pub fn read_acceptance(path: &Path, sort: bool) -> Result<AcceptanceVector, CliError> {
    let value: Value = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::input(path.display(), e))?;
    let list = match &value {
        Value::Object(o) => o.get("p").cloned().unwrap_or(Value::Null),
        other => other.clone(),
    };
    let mut p: Vec<f64> = serde_json::from_value(list).map_err(|_| {
        CliError::Input(format!(
            "{}: expected a list of probabilities or an object with a `p` list",
            path.display()
        ))
    })?;
    if sort {
        p.sort_by(|a, b| b.total_cmp(a));
    }
    Ok(AcceptanceVector::new(p)?)
}

fn read_pair(path: &Path) -> Result<ModelPair, CliError> {
    ModelPair::from_json(&read_text(path)?).map_err(|e| CliError::input(path.display(), e))
}

fn parse_verifier(name: &str) -> Result<VerifierKind, CliError> {
    Ok(name.parse::<VerifierKind>()?)
}

fn make_pair(a: &MakePairArgs) -> Result<Outcome, CliError> {
    let pair = ModelPair::new(ModelPairConfig {
        vocab: a.vocab,
        order: a.order,
        divergence: a.divergence,
        temperature: a.temperature,
        seed: a.seed,
    })?;
    write_text(&a.out, &(pair.to_json() + "\n"))?;
    println!(
        "wrote {} (vocab {}, order {}, {} contexts)",
        a.out.display(),
        a.vocab,
        a.order,
        pair.target.tables().len()
    );
    Ok(Outcome::file(vec![], vec![a.out.clone()], vec![a.seed]))
}

#[derive(Serialize)]
struct PlanOutput {
    value: f64,
    size: usize,
    /// Layers including the root.
    layers: usize,
    /// Draft passes (edges on the longest path).
    depth: usize,
    budget: usize,
    config: String,
    topology: TreeTopology,
}

/// `(size,layers)` label for a tree.
pub fn config_label(t: &TreeTopology) -> String {
    format!("({},{})", t.len(), t.layers())
}

fn plan(a: &PlanArgs) -> Result<Outcome, CliError> {
    let p = read_acceptance(&a.acceptance, a.sort)?;
    let kmax = a.kmax.unwrap_or(p.kmax());
    let res = match a.depth {
        Some(layers) => best_tree_bounded(a.budget, layers, &p, kmax)?,
        None => {
            if a.budget == 0 {
                return Err(CliError::Input("budget must be at least 1".into()));
            }
            UnboundedPlanner::new(a.budget, &p, kmax)?.plan(a.budget)
        }
    };
    let out = PlanOutput {
        value: res.value,
        size: res.topology.len(),
        layers: res.topology.layers(),
        depth: res.topology.depth(),
        budget: a.budget,
        config: config_label(&res.topology),
        topology: res.topology,
    };
    write_json(&a.out, &out)?;
    println!("value {:.6} config {}", out.value, out.config);
    Ok(Outcome::file(vec![a.acceptance.clone()], vec![a.out.clone()], vec![]))
}

fn read_cost(path: &Path, draft_seconds: f64, batch: usize) -> Result<CostModel, CliError> {
    let rows = parse_cost_csv(&read_text(path)?).map_err(|e| CliError::input(path.display(), e))?;
    let loaded = load_cost_model(&rows, draft_seconds, batch)?;
    for w in &loaded.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(loaded.model)
}

#[derive(Serialize)]
struct OptimizeOutput {
    n: usize,
    d: usize,
    #[serde(rename = "G")]
    expected_tokens: f64,
    speedup: f64,
    config: String,
    topology: TreeTopology,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed: Option<Vec<FixedSizeRow>>,
}

fn optimize(a: &OptimizeArgs) -> Result<Outcome, CliError> {
    let p = read_acceptance(&a.acceptance, a.sort)?;
    let model = read_cost(&a.cost, a.draft_seconds, a.batch)?;
    let kmax = a.kmax.unwrap_or(p.kmax());
    let grid = SpeedupGrid::new(&p, &model, a.nmax, a.dmax, kmax)?;
    let best = grid.argmax();
    let fixed = match &a.compare_fixed {
        Some(list) => {
            let sizes = parse_budgets(list)?;
            if let Some(&n) = sizes.iter().find(|&&n| n > a.nmax) {
                return Err(CliError::Input(format!("fixed size {n} exceeds --nmax {}", a.nmax)));
            }
            Some(fixed_size_rows(&grid, &sizes))
        }
        None => None,
    };
    println!(
        "optimizer: n {} d {} G {:.4} speedup {:.4}x",
        best.n, best.d, best.expected_tokens, best.speedup
    );
    if let Some(rows) = &fixed {
        println!("{:>8} {:>4} {:>10} {:>10}", "n", "d", "G", "speedup");
        for r in rows {
            println!("{:>8} {:>4} {:>10.4} {:>9.4}x", r.n, r.d, r.expected_tokens, r.speedup);
        }
        println!(
            "{:>8} {:>4} {:>10.4} {:>9.4}x  (hardware-aware)",
            best.n, best.d, best.expected_tokens, best.speedup
        );
    }
    let out = OptimizeOutput {
        n: best.n,
        d: best.d,
        expected_tokens: best.expected_tokens,
        speedup: best.speedup,
        config: format!("({},{})", best.n, best.d),
        topology: best.topology,
        fixed,
    };
    write_json(&a.out, &out)?;
    Ok(Outcome::file(
        vec![a.acceptance.clone(), a.cost.clone()],
        vec![a.out.clone()],
        vec![],
    ))
}

/// Prompts for estimation: every table context when the table is small,
/// otherwise `count` prompts sampled from the target.
fn estimation_prompts(target: &ToyLM, count: Option<usize>, seed: u64) -> Result<Vec<Vec<TokenId>>, CliError> {
    let contexts = target.tables().len();
    match count {
        None if contexts <= MAX_ENUMERATED_CONTEXTS => Ok(target.contexts()),
        n => {
            let n = n.unwrap_or(DEFAULT_PROMPTS);
            if n == 0 {
                return Err(CliError::Input("--prompts must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            Ok(sample_prompts(target, n, target.order(), &mut rng))
        }
    }
}

fn run_estimate(
    pair: &ModelPair,
    kind: VerifierKind,
    kmax: usize,
    prompts: Option<usize>,
    trials: usize,
    seed: u64,
) -> Result<EstimationReport, CliError> {
    let vocab = pair.target.vocab();
    if kmax == 0 || kmax > vocab {
        return Err(CliError::Input(format!("--kmax must be in 1..={vocab}, got {kmax}")));
    }
    let contexts = estimation_prompts(&pair.target, prompts, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(estimate_acceptance_vector(
        &pair.draft,
        &pair.target,
        kind,
        &contexts,
        kmax,
        trials,
        &mut rng,
    )?)
}

fn default_curve_path(out: &Path) -> PathBuf {
    out.with_extension("rejection.csv")
}

fn estimate(a: &EstimateArgs) -> Result<Outcome, CliError> {
    let kind = parse_verifier(&a.verifier)?;
    let pair = read_pair(&a.pair)?;
    let report = run_estimate(&pair, kind, a.kmax, a.prompts, a.trials, a.seed)?;
    write_json(&a.out, &report)?;
    let curve = a.curve.clone().unwrap_or_else(|| default_curve_path(&a.out));
    let file = fs::File::create(&curve).map_err(|e| CliError::input(curve.display(), e))?;
    report.write_rejection_csv(BufWriter::new(file))?;
    let shown: Vec<String> = report.p.iter().map(|x| format!("{x:.4}")).collect();
    println!(
        "{kind}: p = [{}] ({})",
        shown.join(", "),
        if report.exact { "exact" } else { "sampled" }
    );
    match (report.exponent, report.cover_rank) {
        (Some(b), _) => println!("power-law exponent {b:.3}"),
        (None, Some(k)) => println!("rejection reaches zero at rank {k}"),
        _ => {}
    }
    Ok(Outcome::file(
        vec![a.pair.clone()],
        vec![a.out.clone(), curve],
        vec![a.seed],
    ))
}

/// Acceptance vector for planning an experiment: the given file, or an
/// estimate on the pair itself (sorted, so the planner accepts it).
fn experiment_acceptance(
    c: &ExperimentArgs,
    pair: &ModelPair,
    kind: VerifierKind,
) -> Result<AcceptanceVector, CliError> {
    match &c.acceptance {
        Some(path) => read_acceptance(path, false),
        None => {
            let kmax = c.kmax.unwrap_or(pair.target.vocab().min(8));
            let report = run_estimate(pair, kind, kmax, None, c.trials, c.seed)?;
            Ok(report.sorted_acceptance_vector()?)
        }
    }
}

fn experiment_inputs(c: &ExperimentArgs) -> Vec<PathBuf> {
    std::iter::once(c.pair.clone()).chain(c.acceptance.clone()).collect()
}

fn experiment_config(c: &ExperimentArgs) -> ExperimentConfig {
    ExperimentConfig {
        steps: c.steps,
        seed: c.seed,
        threads: c.threads,
    }
}

fn write_rows(path: &Path, rows: &[sequoia_core::simlab::CurveRow]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::input(path.display(), e))?;
    write_curve_csv(rows, BufWriter::new(file))?;
    Ok(())
}

fn print_rows(rows: &[sequoia_core::simlab::CurveRow]) {
    println!(
        "{:>8} {:>20} {:>10} {:>8} {:>10}",
        "budget", "structure", "tok/step", "ci95", "speedup"
    );
    for r in rows {
        println!(
            "{:>8} {:>20} {:>10.4} {:>8.4} {:>10.4}",
            r.budget, r.structure, r.tokens_per_step, r.ci95, r.simulated_speedup
        );
    }
}

fn scaling(a: &ScalingArgs) -> Result<Outcome, CliError> {
    let c = &a.common;
    let kind = parse_verifier(&c.verifier)?;
    let budgets = parse_budgets(&c.budgets)?;
    let structures = parse_structures(&a.structures)?;
    let pair = read_pair(&c.pair)?;
    let p = experiment_acceptance(c, &pair, kind)?;
    let rows = scaling_experiment(&pair, kind, &p, &budgets, &structures, &experiment_config(c))?;
    create_dir(&c.out)?;
    let csv = c.out.join("scaling.csv");
    let acc = c.out.join("acceptance.json");
    write_rows(&csv, &rows)?;
    write_json(&acc, &p)?;
    print_rows(&rows);
    Ok(Outcome::dir(experiment_inputs(c), vec![csv, acc], &c.out, c.seed))
}

fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let c = &a.common;
    let kind = parse_verifier(&c.verifier)?;
    let budgets = parse_budgets(&c.budgets)?;
    let pair = read_pair(&c.pair)?;
    let model = match &a.cost {
        Some(path) => read_cost(path, a.draft_seconds, a.batch)?,
        None => CostModel::flat(0.0).with_batch(a.batch),
    };
    let p = experiment_acceptance(c, &pair, kind)?;
    let rows = speedup_experiment(&pair, kind, &p, &model, &budgets, a.dmax, &experiment_config(c))?;
    create_dir(&c.out)?;
    let csv = c.out.join("speedup.csv");
    let acc = c.out.join("acceptance.json");
    write_rows(&csv, &rows)?;
    write_json(&acc, &p)?;
    print_rows(&rows);
    let mut inputs = experiment_inputs(c);
    inputs.extend(a.cost.clone());
    Ok(Outcome::dir(inputs, vec![csv, acc], &c.out, c.seed))
}

fn selfcheck_cmd(a: &SelfcheckArgs) -> Result<Outcome, CliError> {
    let report = selfcheck::run(a.seed, a.instances)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    write_json(&a.out, &report)?;
    let mut outcome = Outcome::file(vec![], vec![a.out.clone()], vec![a.seed]);
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        outcome.failure = Some(CliError::Internal(format!("{failed} selfcheck checks failed")));
    }
    Ok(outcome)
}

fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let m = RunManifest::read(&a.manifest)?;
    if m.tool != manifest::TOOL {
        return Err(CliError::Input(format!("manifest was written by {:?}", m.tool)));
    }
    if m.version != manifest::VERSION {
        eprintln!(
            "warning: manifest version {} differs from {}",
            m.version,
            manifest::VERSION
        );
    }
    for input in &m.inputs {
        let now = manifest::sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::Input(format!(
                "input {} changed since the recorded run",
                input.path
            )));
        }
    }
    let argv: Vec<String> = std::iter::once(manifest::TOOL.to_string())
        .chain(m.args.iter().cloned())
        .collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Input(format!("recorded arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Input("a manifest cannot replay another replay".into()));
    }
    // replay compares bytes; a failing selfcheck still reproduces its report
    execute(&cli.command)?;
    let mut mismatched = Vec::new();
    for out in &m.outputs {
        let now = manifest::sha256_file(Path::new(&out.path))?;
        if now == out.sha256 {
            println!("identical {}", out.path);
        } else {
            println!("differs   {}", out.path);
            mismatched.push(out.path.clone());
        }
    }
    if mismatched.is_empty() {
        println!("replay: {} outputs byte-identical", m.outputs.len());
        Ok(())
    } else {
        Err(CliError::Internal(format!(
            "replay produced different bytes for {}",
            mismatched.join(", ")
        )))
    }
}
