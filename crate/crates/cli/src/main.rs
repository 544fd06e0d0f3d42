use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use microgrid_empc::controllers::{Method, TerminalCase};
use microgrid_empc::guarantees::certify;
use microgrid_empc::harness::{oracle_full_window, run_closed_loop, run_comparison, ScenarioSpec};
use microgrid_empc::io::data::parse_timestamp;
use microgrid_empc::io::report::{
    comparison_table, guarantee_summary, write_cost_rows, write_guarantee_report, write_json, write_oracle,
    write_simulation_log, CostRow,
};
use microgrid_empc::io::{load_data, synth_month, write_data, LoadedData, ScenarioConfig};
use microgrid_empc::{Error, Result};

const DEFAULT_START: &str = "2024-01-01T00:00:00";

#[derive(Parser)]
#[command(name = "empc", version, about = "Economic MPC simulator for a grid-connected battery microgrid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop run of one method (against its reference for choice methods)
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        case: Option<TerminalCase>,
    },
    /// Cost table over methods and terminal cases
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "std_ref,choice1,choice2")]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_value = "i,ii,iii")]
        cases: Vec<TerminalCase>,
    },
    /// Perfect-foresight minimum bill over the window
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Run a choice method and certify its closed-loop guarantees
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "choice2")]
        method: Method,
        #[arg(long)]
        case: Option<TerminalCase>,
    },
    /// Write the synthetic data set
    Synth {
        #[arg(long, default_value_t = 31)]
        days: u32,
        #[arg(long, default_value_t = 0.25)]
        dt_hours: f64,
        #[arg(long, default_value = DEFAULT_START)]
        start: String,
        /// Steps appended after the last day for the final horizons
        #[arg(long, default_value_t = 96)]
        lookahead_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// PV/load CSV; the synthetic month when absent
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Drop the on-peak demand charge
    #[arg(long)]
    ncdc_only: bool,
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if self.ncdc_only {
            cfg.tariff.opdc_rate = 0.0;
        }
        Ok(cfg)
    }

    fn data(&self, cfg: &ScenarioConfig) -> Result<LoadedData> {
        match &self.data {
            Some(p) => load_data(p),
            None => {
                let start = match &cfg.window.start {
                    Some(s) => parse_timestamp(s).map_err(Error::Config)?,
                    None => parse_timestamp(DEFAULT_START).map_err(Error::Config)?,
                };
                Ok(synth_month(cfg.window.days, cfg.horizon.dt_hours, start, cfg.horizon.steps_n))
            }
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn cost_row(spec: &ScenarioSpec, log: &microgrid_empc::harness::SimulationLog) -> Result<CostRow> {
    let cfg = log.primary_config();
    Ok(CostRow {
        scenario: log.scenario.clone(),
        method: cfg.method,
        case: log.reference_config.case,
        reference: log.proposed_config.as_ref().map(|_| log.reference_config.method),
        cost: log.primary().cost(&spec.window, &spec.site)?,
    })
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { common, method, case } => {
            let mut cfg = common.config()?;
            if let Some(m) = method {
                cfg.select_method(m);
            }
            if let Some(c) = case {
                cfg.reference.case = c;
            }
            let data = common.data(&cfg)?;
            let spec = cfg.scenario(&data)?;
            let log = run_closed_loop(&spec)?;
            let out = common.out_dir()?;
            write_simulation_log(&out.join(format!("{}_log.csv", spec.name)), &log, &spec.site, |t| data.timestamp(t))?;
            let mut rows = vec![cost_row(&spec, &log)?];
            if log.proposed.is_some() {
                rows.push(CostRow {
                    scenario: log.scenario.clone(),
                    method: log.reference_config.method,
                    case: log.reference_config.case,
                    reference: None,
                    cost: log.reference.cost(&spec.window, &spec.site)?,
                });
            }
            write_cost_rows(&out.join(format!("{}_cost.csv", spec.name)), &rows)?;
            write_json(&out.join(format!("{}_cost.json", spec.name)), &rows)?;
            print!("{}", comparison_table(&rows, spec.site.tariff.opdc_rate > 0.0));
            Ok(true)
        }
        Command::Compare { common, methods, cases } => {
            let cfg = common.config()?;
            let data = common.data(&cfg)?;
            let mut base_cfg = cfg.clone();
            base_cfg.proposed = None;
            base_cfg.reference.method = None;
            let spec = base_cfg.scenario(&data)?;
            let runs = run_comparison(&spec, &methods, &cases)?;
            let rows = runs
                .iter()
                .map(|r| cost_row(&spec, &r.log))
                .collect::<Result<Vec<_>>>()?;
            let out = common.out_dir()?;
            write_cost_rows(&out.join("compare.csv"), &rows)?;
            write_json(&out.join("compare.json"), &rows)?;
            print!("{}", comparison_table(&rows, spec.site.tariff.opdc_rate > 0.0));
            Ok(true)
        }
        Command::Oracle { common } => {
            let cfg = common.config()?;
            let data = common.data(&cfg)?;
            let spec = cfg.scenario(&data)?;
            let oracle = oracle_full_window(&spec.site, &spec.window)?;
            let out = common.out_dir()?;
            write_oracle(&out.join("oracle_trajectory.csv"), &oracle, spec.window.start_step, |t| data.timestamp(t))?;
            write_json(&out.join("oracle_cost.json"), &oracle.cost)?;
            let c = oracle.cost;
            println!(
                "oracle: energy {:.2} loss {:.2} ncdc {:.2} opdc {:.2} total {:.2}",
                c.energy_cost, c.bess_loss_cost, c.ncdc, c.opdc, c.total
            );
            Ok(true)
        }
        Command::Check { common, method, case } => {
            if method.is_reference() {
                return Err(Error::Config(format!("check needs a choice method, got {method}")));
            }
            let mut cfg = common.config()?;
            cfg.select_method(method);
            if let Some(c) = case {
                cfg.reference.case = c;
            }
            let data = common.data(&cfg)?;
            let spec = cfg.scenario(&data)?;
            let log = run_closed_loop(&spec)?;
            let rep = certify(&log, &spec.site)?;
            let out = common.out_dir()?;
            write_guarantee_report(&out.join(format!("{}_guarantees.csv", spec.name)), &rep)?;
            println!("{}", guarantee_summary(&rep));
            Ok(rep.passed())
        }
        Command::Synth {
            days,
            dt_hours,
            start,
            lookahead_steps,
            out,
        } => {
            if days == 0 || !(dt_hours > 0.0) {
                return Err(Error::Config("synth needs days >= 1 and dt_hours > 0".into()));
            }
            let start = parse_timestamp(&start).map_err(Error::Config)?;
            let data = synth_month(days, dt_hours, start, lookahead_steps);
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_data(&out, &data)?;
            println!("wrote {} rows to {}", data.len(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
