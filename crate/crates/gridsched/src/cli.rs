//! Command-line frontend: reproducible scenario runs with machine-readable
//! CSV/JSON outputs.
//!
//! Exit codes: 0 success, 1 input error, 2 solver did not converge,
//! 3 search budget exceeded (best-known result is still written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::offline_nonpreemptive::{
    exact_min_bins, exact_nonpreemptive_min_cost, first_fit_decreasing, schedule_from_packing,
    GridSchedule, PackingError, PackingInstance, PackingResult, SearchBudget,
};
use crate::offline_preemptive::{rounding_hint, solve, FractionalReport};
use crate::scenario::{Scenario, StochasticSection};
use crate::sim::{run as run_sim, PolicySpec, SimResult};
use crate::stochastic::{
    compound_default_cost, cr_asymptotics, default_policy_cost, mmc_power_cost,
    universal_lower_bound, StochasticParams,
};
use crate::task_model::{schedule_cost, CostFunction, LoadProfile, Schedule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

/// Environment variable overriding the exact-search node budgets.
pub const BUDGET_ENV: &str = "GRIDSCHED_BUDGET";

#[derive(Parser)]
#[command(
    name = "gridsched",
    about = "Demand-load scheduling: offline convex-cost solvers and an online policy simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the preemptive relaxation by iterative load balancing.
    OfflinePreemptive {
        #[arg(long)]
        scenario: PathBuf,
        /// Output file (JSON); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pack the uniform instance (or search start times with --grid).
    OfflineNonpreemptive {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exact branch-and-bound packing (default).
        #[arg(long, conflicts_with = "ffd")]
        exact: bool,
        /// First-fit-decreasing heuristic packing.
        #[arg(long)]
        ffd: bool,
        /// Exhaustive start-time search on this grid step instead of packing.
        #[arg(long)]
        grid: Option<f64>,
    },
    /// Tabulate analytic quantities (CSV).
    Analyze {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate every policy/threshold/deadline cell of the scenario (CSV).
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to one policy by name: default, cr, tp, etp.
        #[arg(long)]
        policy: Option<String>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Policy cost versus mean deadline, with the lower-bound column (CSV).
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::OfflinePreemptive { scenario, out } => cmd_offline_preemptive(&scenario, out.as_deref()),
        Command::OfflineNonpreemptive {
            scenario,
            out,
            exact,
            ffd,
            grid,
        } => cmd_offline_nonpreemptive(&scenario, out.as_deref(), exact, ffd, grid),
        Command::Analyze { scenario, out } => cmd_analyze(&scenario, out.as_deref()),
        Command::Simulate {
            scenario,
            out,
            policy,
            seed,
        } => cmd_simulate(&scenario, out.as_deref(), policy.as_deref(), seed),
        Command::Compare { scenario, out, seed } => cmd_compare(&scenario, out.as_deref(), seed),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

type CmdResult = Result<i32, Box<dyn std::error::Error>>;

fn search_budget() -> SearchBudget {
    match std::env::var(BUDGET_ENV) {
        Ok(v) => match v.parse::<u64>() {
            Ok(n) if n > 0 => SearchBudget(n),
            _ => SearchBudget::default(),
        },
        Err(_) => SearchBudget::default(),
    }
}

/// Rounds to 9 significant digits and prints the shortest representation, so
/// CSV bytes are stable across platforms.
fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float");
    format!("{rounded}")
}

fn opt_sig9(x: Option<f64>) -> String {
    x.map(sig9).unwrap_or_default()
}

struct Table {
    columns: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &'static [&'static str]) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// JSON mirror of the CSV: an array of objects with the CSV cell strings.
    fn to_json(&self) -> String {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|row| {
                self.columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), serde_json::Value::String(v.clone())))
                    .collect()
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&rows).expect("string table serializes");
        text.push('\n');
        text
    }
}

fn write_output(out: Option<&Path>, content: &str) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn write_table(out: Option<&Path>, table: &Table) -> std::io::Result<()> {
    let json = out
        .and_then(|p| p.extension())
        .map(|ext| ext == "json")
        .unwrap_or(false);
    let content = if json { table.to_json() } else { table.to_csv() };
    write_output(out, &content)
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_output(out, &text)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// offline-preemptive
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PreemptiveOutput {
    scenario: String,
    objective: f64,
    rounds_used: usize,
    converged: bool,
    load: LoadProfile,
    schedule: Schedule,
    fractional: FractionalReport,
}

fn cmd_offline_preemptive(scenario_path: &Path, out: Option<&Path>) -> CmdResult {
    let scenario = Scenario::load(scenario_path)?;
    let offline = scenario.offline()?;
    let config = offline.balance_config();
    let result = solve(&offline.tasks, &scenario.cost, offline.horizon, &config)?;
    let fractional = rounding_hint(&result);
    let converged = result.converged;
    let output = PreemptiveOutput {
        scenario: scenario.name.clone(),
        objective: result.objective,
        rounds_used: result.rounds_used,
        converged,
        load: result.load,
        schedule: result.schedule,
        fractional,
    };
    write_json(out, &output)?;
    Ok(if converged { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}

// ---------------------------------------------------------------------------
// offline-nonpreemptive
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PackingOutput {
    scenario: String,
    mode: &'static str,
    bins: Vec<Vec<usize>>,
    bin_count: usize,
    peak_power: f64,
    objective: f64,
    schedule: Schedule,
    load: LoadProfile,
    budget_exceeded: bool,
}

#[derive(Serialize)]
struct GridOutput {
    scenario: String,
    mode: &'static str,
    grid_step: f64,
    objective: Option<f64>,
    explored: Option<u64>,
    schedule: Option<Schedule>,
    budget_exceeded: bool,
}

fn cmd_offline_nonpreemptive(
    scenario_path: &Path,
    out: Option<&Path>,
    _exact: bool,
    ffd: bool,
    grid: Option<f64>,
) -> CmdResult {
    let scenario = Scenario::load(scenario_path)?;
    let offline = scenario.offline()?;
    let budget = search_budget();

    if let Some(step) = grid {
        let (result, exceeded) = match exact_nonpreemptive_min_cost(
            &offline.tasks,
            &scenario.cost,
            offline.horizon,
            step,
            budget,
        ) {
            Ok(r) => (Some(r), false),
            Err(PackingError::GridBudgetExceeded { best_known, .. }) => (best_known, true),
            Err(e) => return Err(e.into()),
        };
        let output = GridOutput {
            scenario: scenario.name.clone(),
            mode: "grid",
            grid_step: step,
            objective: result.as_ref().map(|r| r.objective),
            explored: result.as_ref().map(|r| r.explored),
            schedule: result.map(|r: GridSchedule| r.schedule),
            budget_exceeded: exceeded,
        };
        write_json(out, &output)?;
        return Ok(if exceeded { EXIT_BUDGET } else { EXIT_OK });
    }

    let packing = offline.packing.as_ref().ok_or("packing mode needs a `packing` section")?;
    let instance = PackingInstance::new(
        packing.sizes.clone(),
        packing.capacity,
        packing.power_step,
    )?;
    let (result, mode, exceeded): (PackingResult, &'static str, bool) = if ffd {
        (first_fit_decreasing(&instance)?, "ffd", false)
    } else {
        match exact_min_bins(&instance, budget) {
            Ok(r) => (r, "exact", false),
            Err(PackingError::BudgetExceeded { best_known, .. }) => (best_known, "exact", true),
            Err(e) => return Err(e.into()),
        }
    };
    let (schedule, load) = schedule_from_packing(&instance, &result)?;
    let output = PackingOutput {
        scenario: scenario.name.clone(),
        mode,
        bins: result.bins.clone(),
        bin_count: result.bin_count,
        peak_power: result.peak_power,
        objective: schedule_cost(&scenario.cost, &load),
        schedule,
        load,
        budget_exceeded: exceeded,
    };
    write_json(out, &output)?;
    Ok(if exceeded { EXIT_BUDGET } else { EXIT_OK })
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

const ANALYZE_COLUMNS: &[&str] = &[
    "quantity",
    "threshold",
    "servers",
    "epsilon",
    "utilization",
    "value",
    "std_error",
    "gap",
    "stable",
];

fn cmd_analyze(scenario_path: &Path, out: Option<&Path>) -> CmdResult {
    let scenario = Scenario::load(scenario_path)?;
    let section = scenario.stochastic()?;
    let params = section.params()?;
    let cost = &scenario.cost;
    let mut table = Table::new(ANALYZE_COLUMNS);

    let blank = String::new;
    if params.is_unit_power() {
        let value = default_policy_cost(&params, cost)?;
        table.push(vec![
            "default_cost".into(),
            blank(),
            blank(),
            blank(),
            blank(),
            sig9(value),
            blank(),
            blank(),
            blank(),
        ]);
    } else {
        let estimate = compound_default_cost(&params, cost)?;
        table.push(vec![
            "compound_default_cost".into(),
            blank(),
            blank(),
            blank(),
            blank(),
            sig9(estimate.value()),
            opt_sig9(estimate.std_error()),
            blank(),
            blank(),
        ]);
    }
    let bound = universal_lower_bound(&params, cost);
    table.push(vec![
        "lower_bound".into(),
        blank(),
        blank(),
        blank(),
        blank(),
        sig9(bound),
        blank(),
        blank(),
        blank(),
    ]);

    // M/M/c cost at every controlled-release threshold in the sweep.
    let mut cr_thresholds: Vec<f64> = scenario
        .expanded_policies()?
        .iter()
        .filter_map(|p| match p {
            PolicySpec::ControlledRelease { threshold } => Some(*threshold),
            _ => None,
        })
        .collect();
    cr_thresholds.sort_by(f64::total_cmp);
    cr_thresholds.dedup();
    for threshold in cr_thresholds {
        let servers = (threshold - 1e-9).ceil().max(1.0) as u64;
        let utilization = params.occupancy_mean() / servers as f64;
        let stable = utilization < 1.0;
        let value = if stable && params.is_unit_power() {
            Some(mmc_power_cost(
                params.arrival_rate(),
                params.service_rate(),
                servers,
                cost,
            )?)
        } else {
            None
        };
        table.push(vec![
            "mmc_cost".into(),
            sig9(threshold),
            servers.to_string(),
            blank(),
            sig9(utilization),
            opt_sig9(value),
            blank(),
            opt_sig9(value.map(|v| v - bound)),
            stable.to_string(),
        ]);
    }

    if params.is_unit_power() {
        let default_epsilons = vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 40.0];
        let epsilons = section.epsilons.clone().unwrap_or(default_epsilons);
        for row in cr_asymptotics(&params, &epsilons, cost)? {
            table.push(vec![
                "cr_asymptotics".into(),
                sig9(row.threshold),
                row.servers.to_string(),
                sig9(row.epsilon),
                sig9(row.utilization),
                opt_sig9(row.power_cost),
                blank(),
                opt_sig9(row.gap),
                row.stable.to_string(),
            ]);
        }
    }

    write_table(out, &table)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// simulate / compare
// ---------------------------------------------------------------------------

const SIMULATE_COLUMNS: &[&str] = &[
    "policy",
    "threshold",
    "d",
    "avg_cost",
    "ci_halfwidth",
    "avg_power",
    "avg_power_ci_halfwidth",
    "peak_power",
    "postponed_fraction",
    "deadline_activation_rate",
    "lower_bound",
    "mmc_reference",
];

const COMPARE_COLUMNS: &[&str] = &[
    "policy",
    "threshold",
    "d",
    "mean_deadline",
    "avg_cost",
    "ci_halfwidth",
    "lower_bound",
];

struct SweepCell {
    policy: PolicySpec,
    expiry_rate: f64,
    result: SimResult,
}

fn run_sweep(
    scenario: &Scenario,
    section: &StochasticSection,
    policies: &[PolicySpec],
    expiry_rates: &[f64],
    seed_override: Option<u64>,
) -> Result<Vec<SweepCell>, Box<dyn std::error::Error>> {
    let controls = scenario.sim_controls()?;
    let base_params = section.params()?;
    let mut cells = Vec::new();
    for policy in policies {
        for &d in expiry_rates {
            let params = base_params.with_expiry_rate(d)?;
            let config =
                controls.to_config(params, scenario.cost.clone(), policy.clone(), seed_override);
            let result = run_sim(&config)?;
            cells.push(SweepCell {
                policy: policy.clone(),
                expiry_rate: d,
                result,
            });
        }
    }
    // deterministic row order regardless of construction order
    cells.sort_by(|a, b| {
        a.policy
            .name()
            .cmp(b.policy.name())
            .then(
                a.policy
                    .threshold_label()
                    .unwrap_or(-1.0)
                    .total_cmp(&b.policy.threshold_label().unwrap_or(-1.0)),
            )
            .then(a.expiry_rate.total_cmp(&b.expiry_rate))
    });
    Ok(cells)
}

fn filter_policies(
    policies: Vec<PolicySpec>,
    filter: Option<&str>,
) -> Result<Vec<PolicySpec>, Box<dyn std::error::Error>> {
    let Some(name) = filter else {
        return Ok(policies);
    };
    if !["default", "cr", "tp", "etp"].contains(&name) {
        return Err(format!("unknown policy `{name}` (expected default, cr, tp or etp)").into());
    }
    Ok(policies.into_iter().filter(|p| p.name() == name).collect())
}

/// The M/M/c reference for controlled release at an integer threshold.
fn mmc_reference(
    params: &StochasticParams,
    policy: &PolicySpec,
    cost: &CostFunction,
) -> Option<f64> {
    let PolicySpec::ControlledRelease { threshold } = policy else {
        return None;
    };
    if !params.is_unit_power() {
        return None;
    }
    let servers = threshold.round();
    if servers < 1.0 || (threshold - servers).abs() > 1e-9 {
        return None;
    }
    let servers = servers as u64;
    if params.occupancy_mean() / servers as f64 >= 1.0 {
        return None;
    }
    mmc_power_cost(params.arrival_rate(), params.service_rate(), servers, cost).ok()
}

fn cmd_simulate(
    scenario_path: &Path,
    out: Option<&Path>,
    policy_filter: Option<&str>,
    seed_override: Option<u64>,
) -> CmdResult {
    let scenario = Scenario::load(scenario_path)?;
    let section = scenario.stochastic()?;
    let params = section.params()?;
    let policies = filter_policies(scenario.expanded_policies()?, policy_filter)?;
    let cells = run_sweep(&scenario, section, &policies, &section.expiry_rates(), seed_override)?;
    let bound = universal_lower_bound(&params, &scenario.cost);
    let mut table = Table::new(SIMULATE_COLUMNS);
    for cell in &cells {
        let r = &cell.result;
        table.push(vec![
            cell.policy.name().to_string(),
            opt_sig9(cell.policy.threshold_label()),
            sig9(cell.expiry_rate),
            sig9(r.avg_cost),
            sig9(r.ci_halfwidth),
            sig9(r.avg_power),
            sig9(r.avg_power_ci_halfwidth),
            sig9(r.peak_power),
            sig9(r.postponed_fraction),
            sig9(r.deadline_activation_rate),
            sig9(bound),
            opt_sig9(mmc_reference(&params, &cell.policy, &scenario.cost)),
        ]);
    }
    write_table(out, &table)?;
    Ok(EXIT_OK)
}

fn cmd_compare(scenario_path: &Path, out: Option<&Path>, seed_override: Option<u64>) -> CmdResult {
    let scenario = Scenario::load(scenario_path)?;
    let section = scenario.stochastic()?;
    if section.d_values.as_deref().is_none_or(|v| v.is_empty()) {
        return Err("compare needs a non-empty `d_values` list in the stochastic section".into());
    }
    let params = section.params()?;
    let policies = scenario.expanded_policies()?;
    let cells = run_sweep(&scenario, section, &policies, &section.expiry_rates(), seed_override)?;
    let bound = universal_lower_bound(&params, &scenario.cost);
    let mut table = Table::new(COMPARE_COLUMNS);
    for cell in &cells {
        table.push(vec![
            cell.policy.name().to_string(),
            opt_sig9(cell.policy.threshold_label()),
            sig9(cell.expiry_rate),
            sig9(1.0 / cell.expiry_rate),
            sig9(cell.result.avg_cost),
            sig9(cell.result.ci_halfwidth),
            sig9(bound),
        ]);
    }
    write_table(out, &table)?;
    Ok(EXIT_OK)
}
