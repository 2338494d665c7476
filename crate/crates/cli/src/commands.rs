use std::fmt;
use std::path::Path;

use pbn_rl::agent::{self, greedy_policy, Schedule, TrainConfig, PRESET_NAMES};
use pbn_rl::analysis::{
    self, build_transition_matrix, estimate_attractor_occupancy, exact_ssd, find_attractors, monte_carlo_ssd,
    Controller, SimulationPlan,
};
use pbn_rl::env::{ControlTask, Target, TaskSpec};
use pbn_rl::eval::{self, histogram_svg, InitialStates};
use pbn_rl::inference::{self, BinaryMatrix, CodMetric, ExpressionMatrix, InferOptions};
use pbn_rl::model::PbnModel;
use pbn_rl::network::Network;
use pbn_rl::neural::{load_checkpoint, save_checkpoint, MlpParams};
use pbn_rl::rng::{self, SimRng};
use pbn_rl::state::NetworkState;
use serde::Serialize;

use crate::manifest::Run;
use crate::{AttractorsArgs, BaselineArgs, EvalArgs, EvalMode, InferArgs, Metric, SimulateArgs, SsdArgs, TrainArgs};

/// Largest N for which SSD histograms are also drawn.
const HISTOGRAM_PLOT_LIMIT: usize = 12;
const SSD_TOL: f64 = 1e-12;
const SSD_MAX_ITERS: usize = 1_000_000;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn code(&self) -> u8 {
        self.code
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn threshold(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}", self.message)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn err<E: fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::usage(format!("{context}: {e}"))
}

fn rng_for(seed: Option<u64>) -> SimRng {
    match seed {
        Some(s) => rng::seeded(s),
        None => rng::seeded(rand::random()),
    }
}

fn load_network(path: &Path) -> Result<Network> {
    let model = PbnModel::load(path).map_err(err(&path.display().to_string()))?;
    Network::new(model).map_err(err(&path.display().to_string()))
}

fn load_task(path: &Path, network: &Network) -> Result<ControlTask> {
    let text = std::fs::read_to_string(path).map_err(err(&path.display().to_string()))?;
    let spec: TaskSpec = serde_json::from_str(&text).map_err(err(&path.display().to_string()))?;
    spec.resolve(network).map_err(err(&path.display().to_string()))
}

fn load_params(path: &Path, network: &Network, task: &ControlTask) -> Result<MlpParams> {
    let params = load_checkpoint(path).map_err(err(&path.display().to_string()))?;
    if params.input_size() != network.n_nodes() || params.output_size() != task.action_count() {
        return Err(CliError::usage(format!(
            "{}: checkpoint maps {} inputs to {} actions, task needs {} to {}",
            path.display(),
            params.input_size(),
            params.output_size(),
            network.n_nodes(),
            task.action_count()
        )));
    }
    Ok(params)
}

fn io(e: std::io::Error) -> CliError {
    CliError::usage(format!("writing output: {e}"))
}

fn save_params(run: &mut Run, name: &str, params: &MlpParams) -> Result<()> {
    let tmp = run.path(&format!("{name}.tmp"));
    save_checkpoint(params, &tmp).map_err(err("writing checkpoint"))?;
    std::fs::rename(&tmp, run.path(name)).map_err(io)?;
    run.record(name);
    Ok(())
}

// ---- validate ----

pub fn validate(path: &Path) -> Result<()> {
    let model = PbnModel::load(path).map_err(err(&path.display().to_string()))?;
    let violations = model.validate();
    if violations.is_empty() {
        println!("{}: ok ({} nodes)", path.display(), model.n_nodes);
        return Ok(());
    }
    for v in &violations {
        println!("{v}");
    }
    Err(CliError::threshold(format!(
        "{}: {} violation(s)",
        path.display(),
        violations.len()
    )))
}

// ---- attractors ----

#[derive(Serialize)]
struct AttractorReport<'a> {
    network: &'a str,
    n_nodes: usize,
    count: usize,
    sizes: Vec<usize>,
    attractors: &'a [Vec<NetworkState>],
    #[serde(skip_serializing_if = "Option::is_none")]
    occupancy: Option<OccupancyReport>,
}

#[derive(Serialize)]
struct OccupancyReport {
    runs: u64,
    max_steps: u64,
    fractions: Vec<f64>,
    std_errors: Vec<f64>,
    not_absorbed: u64,
}

pub fn attractors(args: AttractorsArgs, seed: Option<u64>) -> Result<()> {
    let network = load_network(&args.network)?;
    let set = find_attractors(&network, args.cap).map_err(err("attractor search"))?;
    let occupancy = match args.occupancy {
        Some(runs) => {
            let est = estimate_attractor_occupancy(&network, &set, runs, args.max_steps, &mut rng_for(seed));
            Some(OccupancyReport {
                runs,
                max_steps: args.max_steps,
                fractions: est.fractions(),
                std_errors: est.std_errors(),
                not_absorbed: est.not_absorbed,
            })
        }
        None => None,
    };
    let report = AttractorReport {
        network: network.name(),
        n_nodes: network.n_nodes(),
        count: set.len(),
        sizes: set.attractors.iter().map(Vec::len).collect(),
        attractors: &set.attractors,
        occupancy,
    };
    let mut run = Run::start(&args.out.out, "attractors", seed).map_err(io)?;
    run.input("network", &args.network);
    run.write_json("attractors.json", &report).map_err(io)?;
    run.finish().map_err(io)?;
    for (k, a) in set.attractors.iter().enumerate() {
        let shown = if a.len() == 1 {
            a[0].to_string()
        } else {
            format!("cycle of {}", a.len())
        };
        match &report.occupancy {
            Some(o) => println!(
                "A{}: {shown}  occupancy {:.4} ± {:.4}",
                k + 1,
                o.fractions[k],
                o.std_errors[k]
            ),
            None => println!("A{}: {shown}", k + 1),
        }
    }
    Ok(())
}

// ---- simulate ----

pub fn simulate(args: SimulateArgs, seed: Option<u64>) -> Result<()> {
    let network = load_network(&args.network)?;
    let n = network.n_nodes();
    let mut rng = rng_for(seed);
    let mut state = match &args.start {
        Some(s) => {
            let st: NetworkState = s.parse().map_err(err("--start"))?;
            if st.len() != n {
                return Err(CliError::usage(format!(
                    "--start has {} bits, network has {n} nodes",
                    st.len()
                )));
            }
            st
        }
        None => NetworkState::random(n, &mut rng),
    };
    let mut csv = String::from("step,state\n");
    csv.push_str(&format!("0,{state}\n"));
    for t in 1..=args.steps {
        state = network.step(&state, &mut rng);
        csv.push_str(&format!("{t},{state}\n"));
    }
    let mut run = Run::start(&args.out.out, "simulate", seed).map_err(io)?;
    run.input("network", &args.network);
    let path = run.write("trajectory.csv", csv).map_err(io)?;
    run.finish().map_err(io)?;
    println!("{} steps written to {}", args.steps, path.display());
    Ok(())
}

// ---- ssd ----

pub fn ssd(args: SsdArgs, seed: Option<u64>) -> Result<()> {
    let network = load_network(&args.network)?;
    let n = network.n_nodes();
    let mut run = Run::start(&args.out.out, "ssd", seed).map_err(io)?;
    run.input("network", &args.network);
    let dense: Option<Vec<f64>>;
    if args.exact {
        let matrix = build_transition_matrix(&network, analysis::DEFAULT_MATRIX_CAP)
            .map_err(|e| CliError::usage(format!("{e}; rerun without --exact (e.g. --runs 300 --steps 4000)")))?;
        let pi = exact_ssd(&matrix, SSD_TOL, SSD_MAX_ITERS).map_err(err("exact ssd"))?;
        let mut csv = String::from("state,index,probability\n");
        for (i, p) in pi.iter().enumerate() {
            csv.push_str(&format!("{},{i},{p}\n", NetworkState::from_index(n, i as u64)));
        }
        run.write("ssd.csv", csv).map_err(io)?;
        dense = Some(pi);
    } else {
        let policy = match (&args.policy, &args.task) {
            (Some(p), Some(t)) => {
                let task = load_task(t, &network)?;
                run.input("policy", p);
                run.input("task", t);
                Some(greedy_policy(load_params(p, &network, &task)?, &task))
            }
            (None, Some(_)) => return Err(CliError::usage("--task is only used with --policy")),
            _ => None,
        };
        let plan = SimulationPlan {
            runs: args.runs,
            steps_per_run: args.steps,
            burn_in: args.burn_in,
        };
        let controller = policy.as_ref().map(|p| p as &dyn Controller);
        let hist = monte_carlo_ssd(&network, controller, plan, None, &mut rng_for(seed)).map_err(err("ssd"))?;
        let mut csv = String::from("state,count,probability\n");
        for (s, c) in &hist.counts {
            csv.push_str(&format!("{s},{c},{}\n", *c as f64 / hist.total as f64));
        }
        run.write("ssd.csv", csv).map_err(io)?;
        dense = (n <= HISTOGRAM_PLOT_LIMIT).then(|| hist.dense(n));
    }
    if n <= HISTOGRAM_PLOT_LIMIT {
        if let Some(d) = &dense {
            let title = format!("Steady-state distribution: {}", network.name());
            run.write("ssd.svg", histogram_svg(&title, "state index", d))
                .map_err(io)?;
        }
    }
    run.finish().map_err(io)?;
    println!("ssd written to {}", args.out.out.join("ssd.csv").display());
    Ok(())
}

// ---- train ----

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match (&args.preset, &args.config) {
        (Some(name), _) => agent::preset(name).ok_or_else(|| {
            CliError::usage(format!(
                "unknown preset {name:?}; available: {}",
                PRESET_NAMES.join(", ")
            ))
        })?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(err(&path.display().to_string()))?;
            TrainConfig::from_json(&text).map_err(err(&path.display().to_string()))?
        }
        (None, None) => return Err(CliError::usage("one of --preset or --config is required")),
    };
    if let Some(h) = args.horizon {
        config.horizon = Some(h);
    }
    if let Some(b) = args.budget {
        match &mut config.schedule {
            Schedule::Episodic { epochs, .. } => *epochs = b,
            Schedule::Stepwise { total_steps, .. } => *total_steps = b,
        }
    }
    Ok(config)
}

pub fn train(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let network = load_network(&args.network)?;
    let task = load_task(&args.task, &network)?;
    let mut config = resolve_config(&args)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(err("config"))?;
    let mut run = Run::start(&args.out.out, "train", Some(config.seed)).map_err(io)?;
    run.input("network", &args.network);
    run.input("task", &args.task);
    if let Some(c) = &args.config {
        run.input("config", c);
    }
    run.write("config.json", config.to_json() + "\n").map_err(io)?;

    let quiet = args.quiet;
    let total = config.schedule.total_units();
    let mut observer = |m: &agent::EpochMetrics, _: &MlpParams| {
        if !quiet {
            eprintln!(
                "epoch {}/{total}  episodes {}  perturbations {:.3}  reward {:.3}  eps {:.3}",
                m.epoch + 1,
                m.episodes,
                m.avg_perturbations,
                m.avg_reward,
                m.epsilon
            );
        }
    };
    let mut rng = rng::seeded(config.seed);
    let artifacts = match agent::train_with_observer(&network, &task, &config, &mut rng, &mut observer) {
        Ok(a) => a,
        Err(agent::AgentError::Diverged { step, checkpoint }) => {
            save_params(&mut run, "checkpoint-last-finite.json", &checkpoint)?;
            run.finish().map_err(io)?;
            return Err(CliError::threshold(format!(
                "training diverged at gradient step {step}; last finite parameters saved"
            )));
        }
        Err(e) => return Err(CliError::usage(format!("training: {e}"))),
    };
    save_params(&mut run, "checkpoint.json", &artifacts.params)?;
    for (epoch, params) in &artifacts.checkpoints {
        save_params(&mut run, &format!("checkpoint-epoch-{epoch}.json"), params)?;
    }
    if artifacts.metrics.is_empty() {
        let mut csv = Vec::new();
        agent::write_metrics_csv(&[], &mut csv).map_err(io)?;
        run.write("metrics.csv", csv).map_err(io)?;
    } else {
        eval::training_curves(&artifacts.metrics, &args.out.out).map_err(err("curves"))?;
        for f in ["metrics.csv", "perturbations.svg", "reward.svg"] {
            run.record(f);
        }
    }
    run.write_json(
        "summary.json",
        &serde_json::json!({
            "gradient_steps": artifacts.gradient_steps,
            "env_steps": artifacts.env_steps,
            "episodes": artifacts.episodes,
        }),
    )
    .map_err(io)?;
    run.finish().map_err(io)?;
    println!(
        "trained {} episodes, {} gradient steps; checkpoint at {}",
        artifacts.episodes,
        artifacts.gradient_steps,
        args.out.out.join("checkpoint.json").display()
    );
    Ok(())
}

// ---- eval ----

fn default_threshold(task: &ControlTask) -> f64 {
    match task.target {
        Target::Subset { .. } => 0.25,
        Target::Attractor { .. } if task.name.starts_with("n20") => 0.95,
        Target::Attractor { .. } => 0.98,
    }
}

fn parse_initial(text: Option<&str>, n: usize) -> Result<InitialStates> {
    match text {
        None => Ok(InitialStates::auto(n)),
        Some("exhaustive") => Ok(InitialStates::Exhaustive),
        Some(t) => t
            .strip_prefix("sampled:")
            .and_then(|c| c.parse().ok())
            .map(|count| InitialStates::Sampled { count })
            .ok_or_else(|| CliError::usage(format!("--initial must be `exhaustive` or `sampled:COUNT`, got {t:?}"))),
    }
}

pub fn eval(args: EvalArgs, seed: Option<u64>) -> Result<()> {
    let network = load_network(&args.network)?;
    let task = load_task(&args.task, &network)?;
    match (args.mode, &task.target) {
        (EvalMode::Success, Target::Subset { .. }) => {
            return Err(CliError::usage(
                "--mode success needs an attractor task; use --mode ssd",
            ))
        }
        (EvalMode::Ssd, Target::Attractor { .. }) => {
            return Err(CliError::usage("--mode ssd needs a subset task; use --mode success"))
        }
        _ => {}
    }
    let policy = greedy_policy(load_params(&args.checkpoint, &network, &task)?, &task);
    let threshold = args.threshold.unwrap_or_else(|| default_threshold(&task));
    let mut rng = rng_for(seed);
    let mut run = Run::start(&args.out.out, "eval", seed).map_err(io)?;
    run.input("network", &args.network);
    run.input("task", &args.task);
    run.input("checkpoint", &args.checkpoint);

    let (score, label) = match args.mode {
        EvalMode::Success => {
            let initial = parse_initial(args.initial.as_deref(), network.n_nodes())?;
            let horizons = if args.horizons.is_empty() {
                vec![task.horizon]
            } else {
                args.horizons.clone()
            };
            let reports =
                eval::success_sweep_horizons(&network, &task, &policy, args.attempts, &horizons, initial, &mut rng)
                    .map_err(err("eval"))?;
            let mut csv = String::from("horizon,attempts,successes,success_rate,std_error,mean_perturbations\n");
            for r in &reports {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.horizon, r.attempts, r.successes, r.success_rate, r.std_error, r.mean_perturbations
                ));
                println!(
                    "H={:<4} success {:.4} ± {:.4}  mean perturbations {:.3}",
                    r.horizon, r.success_rate, r.std_error, r.mean_perturbations
                );
            }
            run.write("success.csv", csv).map_err(io)?;
            run.write_json("success.json", &reports).map_err(io)?;
            (
                reports[0].success_rate,
                format!("success rate at H={}", reports[0].horizon),
            )
        }
        EvalMode::Ssd => {
            let plan = SimulationPlan {
                runs: args.runs,
                steps_per_run: args.steps,
                burn_in: 0,
            };
            let report = eval::ssd_shift(&network, &task, &policy, plan, &mut rng).map_err(err("eval"))?;
            let mut csv = String::from("condition,desirable_mass,std_error\n");
            csv.push_str(&format!(
                "uncontrolled,{},{}\n",
                report.uncontrolled_mass, report.uncontrolled_std_error
            ));
            csv.push_str(&format!(
                "controlled,{},{}\n",
                report.controlled_mass, report.controlled_std_error
            ));
            run.write("ssd-shift.csv", csv).map_err(io)?;
            #[derive(Serialize)]
            struct Summary {
                uncontrolled_mass: f64,
                controlled_mass: f64,
                shift: f64,
                pooled_std_error: f64,
                plan: SimulationPlan,
            }
            run.write_json(
                "ssd-shift.json",
                &Summary {
                    uncontrolled_mass: report.uncontrolled_mass,
                    controlled_mass: report.controlled_mass,
                    shift: report.shift(),
                    pooled_std_error: report.pooled_std_error,
                    plan,
                },
            )
            .map_err(io)?;
            println!(
                "desirable mass {:.4} -> {:.4} (shift {:+.4} ± {:.4})",
                report.uncontrolled_mass,
                report.controlled_mass,
                report.shift(),
                report.pooled_std_error
            );
            (report.shift(), "desirable-mass shift".to_string())
        }
    };
    run.finish().map_err(io)?;
    if score >= threshold {
        println!("PASS: {label} {score:.4} >= {threshold}");
        Ok(())
    } else {
        Err(CliError::threshold(format!(
            "{label} {score:.4} below threshold {threshold}"
        )))
    }
}

// ---- baseline ----

pub fn baseline(args: BaselineArgs, seed: Option<u64>) -> Result<()> {
    let network = load_network(&args.network)?;
    let task = load_task(&args.task, &network)?;
    let report = eval::random_baseline(&network, &task, args.attempts, args.max_steps, &mut rng_for(seed))
        .map_err(err("baseline"))?;
    let mut run = Run::start(&args.out.out, "baseline", seed).map_err(io)?;
    run.input("network", &args.network);
    run.input("task", &args.task);
    run.write_json("baseline.json", &report).map_err(io)?;
    run.finish().map_err(io)?;
    println!(
        "reached {}/{}  mean steps {:.1}  mean perturbations {:.1}",
        report.reached, report.attempts, report.mean_steps, report.mean_perturbations
    );
    Ok(())
}

// ---- infer ----

pub fn infer(args: InferArgs, seed: Option<u64>) -> Result<()> {
    let genes_text = std::fs::read_to_string(&args.genes).map_err(err(&args.genes.display().to_string()))?;
    let genes: Vec<String> = genes_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if genes.is_empty() {
        return Err(CliError::usage(format!("{}: no genes listed", args.genes.display())));
    }
    let opts = InferOptions {
        max_inputs: args.max_inputs,
        min_cod_gain: args.min_cod_gain,
        laplace_alpha: args.laplace_alpha,
        metric: match args.metric {
            Metric::Misclassification => CodMetric::Misclassification,
            Metric::SquaredError => CodMetric::SquaredError,
        },
    };
    let file = std::fs::File::open(&args.expression).map_err(err(&args.expression.display().to_string()))?;
    let (model, report) = if args.binary {
        let bin = BinaryMatrix::from_bits_csv(file).map_err(err("expression data"))?;
        let idx: Vec<usize> = genes
            .iter()
            .map(|g| {
                bin.gene_index(g)
                    .ok_or_else(|| CliError::usage(format!("unknown gene {g:?}")))
            })
            .collect::<Result<_>>()?;
        let sub = BinaryMatrix::from_bits(genes.clone(), idx.iter().map(|&i| bin.bits[i].clone()).collect())
            .map_err(err("expression data"))?;
        inference::infer_from_binary(&sub, &opts).map_err(err("inference"))?
    } else {
        let data = ExpressionMatrix::from_csv(file).map_err(err("expression data"))?;
        inference::infer_pbn(&data, &genes, &opts).map_err(err("inference"))?
    };
    let mut run = Run::start(&args.out.out, "infer", seed).map_err(io)?;
    run.input("expression", &args.expression);
    run.input("genes", &args.genes);
    run.write("network.json", model.to_json() + "\n").map_err(io)?;
    run.write("inference.csv", report.to_csv()).map_err(io)?;
    run.write_json("inference.json", &report).map_err(io)?;
    run.finish().map_err(io)?;
    for node in &report.nodes {
        let flag = if node.constant_gene { "  (constant)" } else { "" };
        println!("{} <- [{}]{flag}", node.gene, node.inputs.join(", "));
    }
    Ok(())
}

// ---- presets ----

pub fn presets() -> Result<()> {
    for name in PRESET_NAMES {
        let c = agent::preset(name).expect("listed preset exists");
        let budget = match c.schedule {
            Schedule::Episodic {
                epochs,
                episodes_per_epoch,
            } => format!("{} episodes", epochs * episodes_per_epoch),
            Schedule::Stepwise { total_steps, .. } => format!("{total_steps} steps"),
        };
        println!(
            "{name:<20} {budget:<18} gamma {} batch {} hidden {:?}",
            c.gamma, c.batch_size, c.hidden
        );
    }
    Ok(())
}
