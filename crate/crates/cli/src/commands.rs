use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use flexclinch::agents::truthful_policies;
use flexclinch::mechanisms::{
    run_market_clearing, run_mca, run_vcg, ExternalityTerm, McaConfig, Rationing, VcgConfig, DEFAULT_TOLERANCE,
};
use flexclinch::metrics::{cheater_sweep, log_log_slope, log_omega_grid, proportional_welfare_loss, welfare_loss_bound, SweepMechanism};
use flexclinch::model::{Instance, InstanceFile};
use flexclinch::protocol::{assert_privacy, run_protocol_mca, PrivacyReport, ProtocolTrace};
use flexclinch::scenario::{DayProfile, OmegaFamily, Population, HORIZON, DEFAULT_A, DEFAULT_B};

use crate::{Common, Mechanism, PopulationArgs, ProtocolArgs, RunArgs, SimulateDayArgs, Status, SweepCheatArgs, SweepEpsilonArgs};

fn mca_config(epsilon: f64, common: &Common) -> McaConfig {
    McaConfig {
        epsilon,
        rationing: if common.compat_line11 { Rationing::Line11Literal } else { Rationing::ResidualDemand },
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        bail!("--epsilon must be a positive number, got {epsilon}");
    }
    Ok(())
}

fn output_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out).with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    Ok(&common.out)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn load_instance(path: &Path) -> Result<Instance> {
    let inst = InstanceFile::load(path)?.instance();
    let problems = inst.validate();
    if !problems.is_empty() {
        bail!("invalid instance {}:\n  {}", path.display(), problems.join("\n  "));
    }
    Ok(inst)
}

/// The instance a sweep works on at `omega_f`.
fn population_instance(args: &PopulationArgs, seed: u64, omega_f: f64) -> Result<Instance> {
    if !(omega_f > 0.0) {
        bail!("omega_f must be positive, got {omega_f}");
    }
    match &args.instance {
        Some(path) => {
            let mut inst = load_instance(path)?;
            for u in &mut inst.users {
                u.discomfort.omega *= omega_f;
            }
            Ok(inst)
        }
        None => {
            if args.users == 0 {
                bail!("--users must be at least 1");
            }
            let family = OmegaFamily::for_slot(args.slot);
            Ok(Population::draw(args.users, seed).instance(family, omega_f, DEFAULT_A, DEFAULT_B).with_timeslot(args.slot))
        }
    }
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn run(args: &RunArgs) -> Result<Status> {
    check_epsilon(args.epsilon)?;
    let inst = load_instance(&args.instance)?;
    let policies = truthful_policies(&inst.users);
    let mut ledger = None;
    let outcome = match args.mechanism {
        Mechanism::Mca => {
            let run = run_mca(&inst, &policies, &mca_config(args.epsilon, &args.common))?;
            ledger = Some(run.ledger);
            run.outcome
        }
        Mechanism::Vcg => {
            let externality = if args.compat_eq6 { ExternalityTerm::OthersOnly } else { ExternalityTerm::FullReduction };
            run_vcg(&inst, &VcgConfig { tolerance: DEFAULT_TOLERANCE, externality })?
        }
        Mechanism::MarketClearing => run_market_clearing(&inst, &policies, DEFAULT_TOLERANCE)?,
    };

    let dir = output_dir(&args.common)?;
    write(dir, "outcome.json", &outcome.to_json())?;
    if let Some(ledger) = ledger {
        write(dir, "ledger.csv", &ledger.to_csv())?;
    }
    let utilities = outcome.utilities(&inst);
    let rows = (0..inst.len()).map(|i| {
        vec![
            outcome.user_ids[i].to_string(),
            outcome.allocation[i].to_string(),
            outcome.payment[i].to_string(),
            utilities[i].to_string(),
        ]
    });
    write(dir, "utilities.csv", &csv_string(&["user_id", "allocation", "payment", "utility"], rows)?)?;

    println!("mechanism: {}", outcome.mechanism);
    println!("total reduction: {}", outcome.total_reduction);
    println!("welfare: {}", outcome.welfare);
    println!("fsp profit: {}", outcome.fsp_profit);
    for (i, u) in utilities.iter().enumerate() {
        println!(
            "user {}: allocation {} payment {} utility {u}",
            outcome.user_ids[i], outcome.allocation[i], outcome.payment[i]
        );
    }
    Ok(Status::Ok)
}

pub fn sweep_cheat(args: &SweepCheatArgs) -> Result<Status> {
    check_epsilon(args.epsilon)?;
    if args.omega_f.is_empty() {
        bail!("--omega-f needs at least one value");
    }
    if args.grid_points == 0 || !(args.grid_span > 1.0) {
        bail!("the omega grid needs at least one point and a span above 1");
    }
    let dir = output_dir(&args.common)?;
    let mechanisms = [
        ("mca", SweepMechanism::Mca(mca_config(args.epsilon, &args.common))),
        ("market-clearing", SweepMechanism::MarketClearing { tolerance: DEFAULT_TOLERANCE }),
    ];
    let mut status = Status::Ok;
    let mut rows = Vec::new();
    for &omega_f in &args.omega_f {
        let inst = population_instance(&args.population, args.common.seed, omega_f)?;
        let Some(cheater) = inst.users.get(args.cheater) else {
            bail!("--cheater {} out of range for {} users", args.cheater, inst.len());
        };
        let grid = log_omega_grid(cheater.discomfort.omega, args.grid_points, args.grid_span);
        for (name, mechanism) in mechanisms {
            let sweep = cheater_sweep(&inst, mechanism, args.cheater, &grid)?;
            write(dir, &format!("cheat_{name}_wf{omega_f}.csv"), &sweep.to_csv())?;
            let ratio = sweep.profit_ratio();
            println!(
                "omega_f {omega_f} {name}: omega_real {} argmax {} profit ratio {ratio}",
                sweep.omega_real, sweep.argmax_omega
            );
            if name == "mca" {
                let steps = sweep.argmax_index().abs_diff(sweep.truthful_index());
                if steps > 1 || (ratio - 1.0).abs() > 1e-3 {
                    eprintln!("truthfulness check failed at omega_f {omega_f}: argmax {steps} grid steps from truth");
                    status = Status::PropertyFailed;
                }
            }
            rows.push(vec![
                omega_f.to_string(),
                name.to_string(),
                sweep.omega_real.to_string(),
                sweep.argmax_omega.to_string(),
                sweep.truthful_utility.to_string(),
                sweep.max_utility().to_string(),
                ratio.to_string(),
            ]);
        }
    }
    let header = ["omega_f", "mechanism", "omega_real", "argmax_omega", "truthful_utility", "max_utility", "profit_ratio"];
    write(dir, "profit_ratio.csv", &csv_string(&header, rows)?)?;
    Ok(status)
}

pub fn sweep_epsilon(args: &SweepEpsilonArgs) -> Result<Status> {
    if args.epsilon_list.is_empty() {
        bail!("--epsilon-list needs at least one value");
    }
    for &eps in &args.epsilon_list {
        check_epsilon(eps)?;
    }
    let omega_f = args.omega_f.first().copied().unwrap_or(1.0);
    let inst = population_instance(&args.population, args.common.seed, omega_f)?;
    let vcg = run_vcg(&inst, &VcgConfig::default())?;
    let policies = truthful_policies(&inst.users);
    let mut status = Status::Ok;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for &eps in &args.epsilon_list {
        let mca = run_mca(&inst, &policies, &mca_config(eps, &args.common))?.outcome;
        let loss = vcg.welfare - mca.welfare;
        let proportional = proportional_welfare_loss(vcg.welfare, mca.welfare)?;
        let bound = welfare_loss_bound(eps, inst.reward.lambda_max(), inst.reward.b)?;
        if loss > bound + 1e-9 {
            eprintln!("welfare loss {loss} exceeds its bound {bound} at epsilon {eps}");
            status = Status::PropertyFailed;
        }
        println!("epsilon {eps}: loss {loss} proportional {proportional} bound {bound}");
        points.push((eps, proportional));
        rows.push(vec![eps.to_string(), loss.to_string(), proportional.to_string(), bound.to_string()]);
    }
    let dir = output_dir(&args.common)?;
    write(dir, "epsilon.csv", &csv_string(&["epsilon", "welfare_loss", "proportional_welfare_loss", "bound"], rows)?)?;

    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.truncate(3);
    if points.len() >= 2 && points.iter().all(|p| p.1 > 0.0) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        println!("log-log slope over the {} smallest epsilons: {}", xs.len(), log_log_slope(&xs, &ys)?);
    }
    Ok(status)
}

pub fn simulate_day(args: &SimulateDayArgs) -> Result<Status> {
    check_epsilon(args.epsilon)?;
    if args.users == 0 {
        bail!("--users must be at least 1");
    }
    if let Some(slot) = args.events.iter().find(|&&s| s >= HORIZON) {
        bail!("event slot {slot} is outside the {HORIZON}-slot day");
    }
    let omega_f = args.omega_f.first().copied().unwrap_or(1.0);
    if !(omega_f > 0.0) {
        bail!("omega_f must be positive, got {omega_f}");
    }
    // Event-slot load at the largest aggregate baseline the reward allows.
    let peak = DEFAULT_A / (2.0 * DEFAULT_B);
    let day = DayProfile::synthesize(args.common.seed, &args.events, peak);
    let population = Population::draw(args.users, args.common.seed);
    let mut with_dr = day.loads.clone();
    for &slot in &day.dr_events {
        let inst = population.instance_for_load(OmegaFamily::for_slot(slot), omega_f, DEFAULT_A, DEFAULT_B, day.loads[slot]);
        let outcome = run_mca(&inst, &truthful_policies(&inst.users), &mca_config(args.epsilon, &args.common))?.outcome;
        with_dr[slot] = day.loads[slot] - outcome.total_reduction;
        println!("slot {slot}: reduction {} welfare {}", outcome.total_reduction, outcome.welfare);
    }
    let rows = (0..HORIZON).map(|t| vec![t.to_string(), day.loads[t].to_string(), with_dr[t].to_string()]);
    let dir = output_dir(&args.common)?;
    write(dir, "day.csv", &csv_string(&["timeslot", "load_no_dr", "load_with_dr"], rows)?)?;
    Ok(Status::Ok)
}

fn print_report(report: &PrivacyReport) {
    for check in &report.checks {
        if check.passed {
            println!("privacy {}: PASS", check.name);
        } else {
            let shown: Vec<String> = check.offending.iter().take(10).map(u64::to_string).collect();
            let more = check.offending.len().saturating_sub(shown.len());
            let tail = if more > 0 { format!(" and {more} more") } else { String::new() };
            println!("privacy {}: FAIL (messages {}{tail})", check.name, shown.join(", "));
        }
    }
}

pub fn protocol(args: &ProtocolArgs) -> Result<Status> {
    if let Some(path) = &args.audit {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let trace = ProtocolTrace::from_jsonl(&text, args.common.seed)?;
        let report = assert_privacy(&trace);
        print_report(&report);
        return Ok(if report.passed() { Status::Ok } else { Status::PropertyFailed });
    }

    check_epsilon(args.epsilon)?;
    let omega_f = args.omega_f.first().copied().unwrap_or(1.0);
    let inst = population_instance(&args.population, args.common.seed, omega_f)?;
    let policies = truthful_policies(&inst.users);
    let cfg = mca_config(args.epsilon, &args.common);
    let run = run_protocol_mca(&inst, &policies, &cfg, args.common.seed)?;
    let central = run_mca(&inst, &policies, &cfg)?;

    let dir = output_dir(&args.common)?;
    write(dir, "trace.jsonl", &run.trace.to_jsonl())?;
    write(dir, "outcome.json", &run.outcome.to_json())?;
    let report = assert_privacy(&run.trace);
    write(dir, "privacy.json", &serde_json::to_string_pretty(&report)?)?;

    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let equivalent = run.outcome == central.outcome
        && bits(&run.outcome.allocation) == bits(&central.outcome.allocation)
        && bits(&run.outcome.payment) == bits(&central.outcome.payment);
    println!("messages: {}", run.trace.messages.len());
    println!("centralized-equivalence: {}", if equivalent { "PASS" } else { "FAIL" });
    print_report(&report);
    Ok(if equivalent && report.passed() { Status::Ok } else { Status::PropertyFailed })
}
