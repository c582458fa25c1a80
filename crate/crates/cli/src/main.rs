use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pdm_core::expert::{build_dataset_from, draw_instances, load_dataset, ExpertConfig, ScenarioInstance};
use pdm_core::harness::{path_length, plot, run_experiment, violation_rate, ExperimentConfig};
use pdm_core::samplers::{sample, Method, SamplerConfig};
use pdm_core::scenario::{load_scenario, load_trajectories, save_scenario, save_trajectories, FamilyKind, ScenarioFamily};
use pdm_core::score_model::{
    load_checkpoint, save_checkpoint, train, Checkpoint, Example, NetworkLayout, ScoreModel, ScoreNetwork,
    TrainConfig, Weighting,
};
use pdm_core::{ConstraintSpec, NoiseSchedule, PdmError, Result};

const INDEX_FILE: &str = "index.json";

#[derive(Parser)]
#[command(name = "pdm", version, about = "Projected diffusion sampling for continuous multi-agent path finding")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw scenario instances of one family.
    GenScenarios {
        #[arg(long)]
        family: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve expert trajectories for a scenario directory.
    GenExpert {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        restarts: usize,
        #[arg(long, default_value_t = 32)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a score network on an expert dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Use only this family's instances.
        #[arg(long)]
        family: Option<String>,
        /// Hidden widths, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "256,256,256")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, value_enum, default_value_t = WeightArg::One)]
        weighting: WeightArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Sample one trajectory set for a scenario.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Pdm)]
        method: MethodArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Guidance weight for gdm.
        #[arg(long)]
        guidance: Option<f64>,
        /// Also report one terminal projection of dm/gdm output.
        #[arg(long)]
        final_snap: bool,
    },
    /// Compare methods on held-out instances and write a CSV.
    Eval {
        /// Checkpoint; repeat for one model per agent count.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "narrow-corridor,obstacle-dense,agent-dense")]
        families: Vec<String>,
        #[arg(long, default_value_t = 20)]
        per_family: usize,
        #[arg(long, value_delimiter = ',', default_value = "pdm,dm,gdm")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        guidance: Option<f64>,
        /// Fill the proj_wall_ms column (makes the CSV run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Draw a scenario and optionally a trajectory set as SVG.
    Plot {
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = NoiseSchedule::DEFAULT_BETA_MIN)]
    beta_min: f64,
    #[arg(long, default_value_t = NoiseSchedule::DEFAULT_BETA_MAX)]
    beta_max: f64,
    #[arg(long, default_value_t = NoiseSchedule::DEFAULT_LEVELS)]
    levels: usize,
    #[arg(long, default_value_t = NoiseSchedule::DEFAULT_INNER_STEPS)]
    inner_steps: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pdm,
    Dm,
    Gdm,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pdm => Method::Pdm,
            MethodArg::Dm => Method::Dm,
            MethodArg::Gdm => Method::Gdm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    One,
    Beta,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    family: FamilyKind,
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::GenScenarios {
            family,
            count,
            seed,
            out,
        } => gen_scenarios(&family, count, seed, &out),
        Command::GenExpert {
            scenarios,
            out,
            restarts,
            horizon,
            seed,
        } => {
            let cfg = ExpertConfig {
                restarts,
                horizon,
                seed,
                ..ExpertConfig::default()
            };
            gen_expert(&scenarios, &out, &cfg)
        }
        Command::Train {
            data,
            epochs,
            out,
            family,
            hidden,
            lr,
            batch,
            weighting,
            seed,
            schedule,
        } => {
            let cfg = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                epochs,
                weighting: match weighting {
                    WeightArg::One => Weighting::One,
                    WeightArg::Beta => Weighting::Beta,
                },
                seed,
                ..TrainConfig::default()
            };
            let schedule =
                NoiseSchedule::geometric(schedule.beta_min, schedule.beta_max, schedule.levels, schedule.inner_steps)?;
            train_model(&data, family.as_deref(), hidden, &cfg, schedule, &out)
        }
        Command::Sample {
            model,
            scenario,
            method,
            seed,
            out,
            guidance,
            final_snap,
        } => sample_one(&model, &scenario, method.into(), seed, &out, guidance, final_snap),
        Command::Eval {
            model,
            families,
            per_family,
            methods,
            seed,
            out_csv,
            guidance,
            timing,
        } => {
            let families = families.iter().map(|f| FamilyKind::parse(f)).collect::<Result<Vec<_>>>()?;
            let methods = methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?;
            let mut cfg = ExperimentConfig::new(methods, families, per_family, seed);
            if let Some(g) = guidance {
                cfg.guidance_weight = g;
            }
            cfg.record_timing = timing;
            eval(&model, cfg, &out_csv)
        }
        Command::Plot { traj, scenario, out } => {
            let s = load_scenario(&scenario)?;
            let t = traj.map(load_trajectories).transpose()?;
            plot(t.as_ref(), &s, &out)?;
            Ok(0)
        }
    }
}

fn gen_scenarios(family: &str, count: usize, seed: u64, out: &Path) -> Result<u8> {
    if count == 0 {
        return Err(PdmError::Contract("count must be >= 1".into()));
    }
    let kind = FamilyKind::parse(family)?;
    let (instances, skipped) = draw_instances(&[ScenarioFamily::new(kind, seed)], count)?;
    for s in &skipped {
        log::warn!("draw {} (seed {}) skipped: {}", s.index, s.seed, s.reason);
    }
    fs::create_dir_all(out)?;
    let mut index = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let file = format!("{}-{i:04}.json", kind.name());
        save_scenario(&inst.scenario, out.join(&file))?;
        index.push(IndexEntry {
            file,
            family: kind,
            seed: inst.seed,
        });
    }
    write_json(&out.join(INDEX_FILE), &index)?;
    println!("wrote {} {} scenarios to {}", index.len(), kind.name(), out.display());
    Ok(0)
}

fn gen_expert(scenarios: &Path, out: &Path, cfg: &ExpertConfig) -> Result<u8> {
    let text = fs::read_to_string(scenarios.join(INDEX_FILE))?;
    let index: Vec<IndexEntry> = serde_json::from_str(&text).map_err(|e| PdmError::Parse {
        field: INDEX_FILE.into(),
        offset: 0,
        message: e.to_string(),
    })?;
    let instances = index
        .iter()
        .map(|e| {
            Ok(ScenarioInstance {
                family: e.family,
                seed: e.seed,
                scenario: load_scenario(scenarios.join(&e.file))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = build_dataset_from(&instances, cfg, out)?;
    println!(
        "solved {} of {} instances into {}",
        manifest.entries.len(),
        instances.len(),
        out.display()
    );
    Ok(0)
}

fn train_model(
    data: &Path,
    family: Option<&str>,
    hidden: Vec<usize>,
    cfg: &TrainConfig,
    schedule: NoiseSchedule,
    out: &Path,
) -> Result<u8> {
    let ds = load_dataset(data)?;
    let family = family.map(FamilyKind::parse).transpose()?;
    let items: Vec<_> = ds.items.iter().filter(|it| family.is_none_or(|f| it.family == f)).collect();
    let first = items
        .first()
        .ok_or_else(|| PdmError::Contract("no training items match".into()))?;
    let n_agents = first.scenario.n_agents();
    if items.iter().any(|it| it.scenario.n_agents() != n_agents) {
        return Err(PdmError::Contract(
            "dataset mixes agent counts; pick one with --family".into(),
        ));
    }
    let mut layout = NetworkLayout::new(n_agents, ds.manifest.horizon);
    layout.hidden = hidden;
    let examples: Vec<Example> = items
        .iter()
        .map(|it| Example::new(&it.trajectory, &it.scenario, layout.obstacle_slots))
        .collect();
    let mut net = ScoreNetwork::new(layout, cfg.seed)?;
    let report = train(&mut net, &examples, &schedule, cfg)?;
    let mut ck = Checkpoint::new(net, schedule);
    ck.header.train = Some(cfg.clone());
    ck.header.training_seeds = ds.manifest.seeds();
    let mut fams: Vec<String> = items.iter().map(|it| it.family.name().to_string()).collect();
    fams.dedup();
    ck.header.families = fams;
    ck.header.loss_history = report.loss_history.clone();
    save_checkpoint(&ck, out)?;
    let h = &report.loss_history;
    if let (Some(a), Some(b)) = (h.first(), h.last()) {
        println!("trained on {} examples: loss {a:.4} -> {b:.4}", examples.len());
    }
    Ok(0)
}

fn sample_one(
    model: &Path,
    scenario: &Path,
    method: Method,
    seed: u64,
    out: &Path,
    guidance: Option<f64>,
    final_snap: bool,
) -> Result<u8> {
    let ck = load_checkpoint(model)?;
    let s = load_scenario(scenario)?;
    let spec = ConstraintSpec::from_scenario(&s);
    let mut cfg = SamplerConfig::new(method, ck.header.schedule.clone(), ck.network.layout().horizon, seed);
    if let Some(g) = guidance {
        cfg.guidance_weight = g;
    }
    cfg.final_snap = final_snap;
    let result = sample(&ck.network, &s, &spec, &cfg)?;
    save_trajectories(&result.trajectory, out)?;
    println!(
        "{}: feasible={} violation_rate={} path_length={} max_residual={:.3e}",
        method.name(),
        result.feasible,
        violation_rate(&result.trajectory, &s, &spec)?,
        path_length(&result.trajectory),
        result.max_residual
    );
    if let Some(snap) = &result.snapped {
        println!("snapped: violation_rate={}", violation_rate(snap, &s, &spec)?);
    }
    if method == Method::Pdm && !result.feasible {
        eprintln!("final projection did not reach the tolerance; wrote the best iterate");
        return Ok(4);
    }
    Ok(0)
}

fn eval(models: &[PathBuf], mut cfg: ExperimentConfig, out_csv: &Path) -> Result<u8> {
    let cks = models.iter().map(load_checkpoint).collect::<Result<Vec<_>>>()?;
    let first = &cks[0];
    if cks.iter().any(|c| c.header.schedule != first.header.schedule) {
        return Err(PdmError::Contract("models were trained with different noise schedules".into()));
    }
    cfg.schedule = first.header.schedule.clone();
    cfg.horizon = first.network.layout().horizon;
    cfg.exclude_seeds = cks
        .iter()
        .flat_map(|c| c.header.training_seeds.iter().copied())
        .collect::<BTreeSet<u64>>();
    let nets: Vec<&dyn ScoreModel> = cks.iter().map(|c| &c.network as &dyn ScoreModel).collect();
    let report = run_experiment(&cfg, &nets)?;
    report.write_csv(out_csv)?;
    println!("method  family           n  violation_rate  path_length_sum  feasible");
    for s in &report.summaries {
        println!(
            "{:<7} {:<16} {:>2}  {:>14.4}  {:>15.4}  {:>8.2}",
            s.method.name(),
            s.family.name(),
            s.instances,
            s.violation_rate_mean,
            s.path_length_sum_mean,
            s.feasible_fraction
        );
    }
    Ok(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PdmError::Contract(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
