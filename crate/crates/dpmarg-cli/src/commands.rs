//! The three subcommands: plan, run, account.
//!
//! `plan` is pure computation over schema + workload (it never opens a
//! dataset — the `plan` subcommand does not even accept one). `run`
//! measures and reconstructs; all its randomness flows from one master
//! seed that is echoed on stdout and stamped into every output header.
//! File writes are serialized on the main thread; the parallelism lives
//! inside the library's measure/reconstruct fan-out.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use dpmarg::accounting::{calibrate_budget, guarantees, BudgetTarget, PrivacyAccount};
use dpmarg::mechanism::{measure_all, NoiseSource, NoisyResidual};
use dpmarg::planner::{
    build_cost_model, compute_pcost, marginal_variance, max_weighted_variance, rmse,
    solve_max_variance, solve_sum_of_variances, solve_utility_constrained, CostModel, LossSpec,
    Plan, DEFAULT_MAXVAR_TOL,
};
use dpmarg::reconstruct::{reconstruct_all, MarginalEstimate};
use dpmarg::schema::{AttrSet, Schema, Workload};

use crate::config::{
    load_dataset, load_plan, load_schema, load_workload, save_plan, set_to_names, sig12,
    CliError, CliResult, DeltaDoc, PlanDoc, SigmaDoc, VarianceDoc,
};
use crate::{AccountArgs, BudgetFlags, Objective, PlanArgs, RunArgs};

/// A resolved constraint: either a total privacy cost to spend or a loss
/// bound to meet at minimal cost.
enum Constraint {
    Pcost(f64),
    LossBound(f64),
}

fn resolve_constraint(flags: &BudgetFlags) -> CliResult<Constraint> {
    let mut found: Vec<Constraint> = Vec::new();
    if let Some(p) = flags.budget_pcost {
        if !(p > 0.0 && p.is_finite()) {
            return Err(CliError::Config(format!("--budget-pcost must be positive, got {p}")));
        }
        found.push(Constraint::Pcost(p));
    }
    if let Some(r) = flags.budget_rho {
        found.push(Constraint::Pcost(calibrate_budget(BudgetTarget::Rho(r))?));
    }
    if let Some(m) = flags.budget_mu {
        found.push(Constraint::Pcost(calibrate_budget(BudgetTarget::Mu(m))?));
    }
    if let Some((epsilon, delta)) = flags.budget_eps_delta {
        found.push(Constraint::Pcost(calibrate_budget(BudgetTarget::EpsilonDelta {
            epsilon,
            delta,
        })?));
    }
    if let Some(g) = flags.loss_bound {
        if !(g > 0.0 && g.is_finite()) {
            return Err(CliError::Config(format!("--loss-bound must be positive, got {g}")));
        }
        found.push(Constraint::LossBound(g));
    }
    if found.len() != 1 {
        return Err(CliError::Config(
            "exactly one of --budget-pcost, --budget-rho, --budget-mu, --budget-eps-delta, \
             --loss-bound is required"
                .into(),
        ));
    }
    Ok(found.pop().unwrap())
}

fn solve(
    model: &CostModel,
    weights: &[f64],
    objective: Objective,
    constraint: &Constraint,
) -> CliResult<Plan> {
    let plan = match constraint {
        Constraint::Pcost(c) => match objective {
            Objective::Sumvar => solve_sum_of_variances(model, weights, *c),
            Objective::Maxvar => solve_max_variance(model, weights, *c, DEFAULT_MAXVAR_TOL),
        },
        Constraint::LossBound(g) => {
            let loss = match objective {
                Objective::Sumvar => {
                    LossSpec::WeightedSumOfVariances { weights: weights.to_vec() }
                }
                Objective::Maxvar => LossSpec::MaxWeightedVariance { weights: weights.to_vec() },
            };
            solve_utility_constrained(model, &loss, *g)
        }
    }?;
    Ok(plan)
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Sumvar => "sumvar",
        Objective::Maxvar => "maxvar",
    }
}

fn build_plan_doc(
    schema: &Schema,
    model: &CostModel,
    workload: &Workload,
    plan: &Plan,
    objective: Objective,
    seed: Option<u64>,
    epsilons: &[f64],
) -> CliResult<PlanDoc> {
    let pcost = compute_pcost(model, plan)?;
    let (rho, mu) = guarantees(pcost)?;
    let account = PrivacyAccount::new(pcost)?;
    let weights = workload.weights();
    let mut sigma2 = Vec::with_capacity(model.closure().len());
    for a in model.closure() {
        sigma2.push(SigmaDoc {
            attrs: set_to_names(a, schema),
            sigma2: sig12(plan.sigma2(a)?),
        });
    }
    let mut delta_curve = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        delta_curve.push(DeltaDoc { epsilon, delta: account.delta(epsilon)? });
    }
    let mut marginal_variances = Vec::with_capacity(workload.len());
    for entry in workload.entries() {
        marginal_variances.push(VarianceDoc {
            attrs: set_to_names(&entry.attrs, schema),
            cell_variance: marginal_variance(model, plan, &entry.attrs)?,
        });
    }
    Ok(PlanDoc {
        version: dpmarg::VERSION.to_string(),
        seed,
        objective: objective_name(objective).to_string(),
        pcost,
        rho,
        mu,
        predicted_loss: plan.predicted_loss,
        rmse: rmse(model, plan, workload)?,
        max_variance: max_weighted_variance(model, plan, &weights)?,
        sigma2,
        delta_curve,
        marginal_variances,
    })
}

pub fn cmd_plan(args: &PlanArgs) -> CliResult<()> {
    let schema = load_schema(&args.schema)?;
    let workload = load_workload(&args.workload, &schema)?;
    let model = build_cost_model(&schema, &workload)?;
    let constraint = resolve_constraint(&args.budget)?;
    let plan = solve(&model, &workload.weights(), args.objective, &constraint)?;
    let doc = build_plan_doc(&schema, &model, &workload, &plan, args.objective, args.seed, &args.epsilons)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", args.out.display())))?;
    let path = args.out.join("plan.json");
    save_plan(&path, &doc)?;

    println!("wrote {}", path.display());
    println!("objective: {}", doc.objective);
    println!("marginals: {} (closure {})", workload.len(), model.closure().len());
    println!("pcost: {}", sig12(doc.pcost));
    println!("rho: {}", sig12(doc.rho));
    println!("mu: {}", sig12(doc.mu));
    println!("predicted loss: {}", sig12(doc.predicted_loss));
    println!("rmse: {}", sig12(doc.rmse));
    println!("max variance: {}", sig12(doc.max_variance));
    println!("delta curve:");
    for d in &doc.delta_curve {
        println!("  epsilon {} -> delta {}", d.epsilon, sig12(d.delta));
    }
    println!("noise scales:");
    for (a, s) in model.closure().iter().zip(&doc.sigma2) {
        println!("  {}: {}", a.label(&schema), s.sigma2);
    }
    println!("per-marginal cell variance:");
    for (entry, v) in workload.entries().iter().zip(&doc.marginal_variances) {
        println!("  {}: {}", entry.attrs.label(&schema), sig12(v.cell_variance));
    }
    Ok(())
}

/// Header comment stamped at the top of every output file.
struct RunHeader {
    seed: u64,
    pcost: f64,
    rho: f64,
    mu: f64,
    zero_noise: bool,
}

fn write_header(f: &mut File, hdr: &RunHeader) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Config(format!("write failed: {e}"));
    writeln!(f, "# dpmarg {}", dpmarg::VERSION).map_err(io)?;
    writeln!(f, "# seed: {}", hdr.seed).map_err(io)?;
    writeln!(f, "# pcost: {}", sig12(hdr.pcost)).map_err(io)?;
    writeln!(f, "# rho: {}", sig12(hdr.rho)).map_err(io)?;
    writeln!(f, "# mu: {}", sig12(hdr.mu)).map_err(io)?;
    if hdr.zero_noise {
        writeln!(
            f,
            "# zero-noise: true — noise disabled; this output is NOT differentially private; \
             pcost/rho/mu describe the plan, not this run"
        )
        .map_err(io)?;
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' }).collect()
}

fn marginal_filename(a: &AttrSet, schema: &Schema) -> String {
    if a.is_empty() {
        return "marginal_total.csv".into();
    }
    let names: Vec<String> =
        a.indices().iter().map(|&i| sanitize(&schema.attr(i).name)).collect();
    format!("marginal_{}.csv", names.join("_"))
}

fn write_residuals(
    path: &Path,
    schema: &Schema,
    residuals: &[NoisyResidual],
    hdr: &RunHeader,
) -> CliResult<()> {
    let mut f = File::create(path)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
    write_header(&mut f, hdr)?;
    let mut w = csv::Writer::from_writer(f);
    let io = |e: csv::Error| CliError::Config(format!("write {}: {e}", path.display()));
    w.write_record(["attrs", "sigma2", "component", "value"]).map_err(io)?;
    for r in residuals {
        for (i, v) in r.values.iter().enumerate() {
            w.write_record([
                r.attrset.label(schema),
                sig12(r.sigma2),
                i.to_string(),
                sig12(*v),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::Config(format!("write {}: {e}", path.display())))?;
    Ok(())
}

fn write_marginal(
    path: &Path,
    schema: &Schema,
    est: &MarginalEstimate,
    hdr: &RunHeader,
) -> CliResult<()> {
    let mut f = File::create(path)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
    write_header(&mut f, hdr)?;
    let mut w = csv::Writer::from_writer(f);
    let io = |e: csv::Error| CliError::Config(format!("write {}: {e}", path.display()));

    let mut header: Vec<String> = set_to_names(&est.attrset, schema);
    header.extend(["estimate".into(), "variance".into(), "covariance".into()]);
    w.write_record(&header).map_err(io)?;

    for (idx, value) in est.values.iter().enumerate() {
        let coords = est.attrset.cell_values(schema, idx);
        let mut row: Vec<String> = Vec::with_capacity(coords.len() + 3);
        for (j, &attr_idx) in est.attrset.indices().iter().enumerate() {
            let attr = schema.attr(attr_idx);
            row.push(match &attr.labels {
                Some(labels) => labels[coords[j]].clone(),
                None => coords[j].to_string(),
            });
        }
        row.push(sig12(*value));
        row.push(sig12(est.cell_variance));
        row.push(sig12(est.pairwise_covariance));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Config(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let schema = load_schema(&args.schema)?;
    let workload = load_workload(&args.workload, &schema)?;
    let model = build_cost_model(&schema, &workload)?;

    let plan = if let Some(path) = &args.plan {
        if count_flags(&args.budget) > 0 {
            return Err(CliError::Config(
                "give either --plan or budget/loss flags, not both".into(),
            ));
        }
        let (plan, _) = load_plan(path, &schema)?;
        for a in model.closure() {
            if !plan.sigma2.contains_key(a) {
                return Err(CliError::Config(format!(
                    "plan {} has no noise scale for {}, which the workload needs",
                    path.display(),
                    a.label(&schema)
                )));
            }
        }
        plan
    } else {
        let constraint = resolve_constraint(&args.budget)?;
        solve(&model, &workload.weights(), args.objective, &constraint)?
    };

    let pcost = compute_pcost(&model, &plan)?;
    let (rho, mu) = guarantees(pcost)?;
    let seed = args.seed.unwrap_or_else(rand::random);

    // Zero-noise test mode strips the noise but keeps the plan for the
    // headers; the released values are then exact and NOT private.
    let measure_plan = if args.zero_noise {
        eprintln!(
            "WARNING: --zero-noise is a test mode; the output is NOT differentially private"
        );
        Plan {
            sigma2: plan.sigma2.keys().map(|a| (a.clone(), 0.0)).collect(),
            total_pcost: 0.0,
            predicted_loss: 0.0,
        }
    } else {
        plan.clone()
    };

    // The dataset is opened only now: planning above is data-independent.
    let dataset = load_dataset(&args.dataset, &schema)?;

    let noise = NoiseSource::new(seed);
    let residuals_vec = measure_all(&dataset, &measure_plan, &noise)?;
    let residuals: BTreeMap<AttrSet, NoisyResidual> =
        residuals_vec.iter().map(|r| (r.attrset.clone(), r.clone())).collect();
    let estimates = reconstruct_all(&schema, &workload, &residuals)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", args.out.display())))?;
    let hdr = RunHeader { seed, pcost, rho, mu, zero_noise: args.zero_noise };
    let residuals_path = args.out.join("residuals.csv");
    write_residuals(&residuals_path, &schema, &residuals_vec, &hdr)?;
    let mut files: Vec<PathBuf> = vec![residuals_path];
    for est in &estimates {
        let path = args.out.join(marginal_filename(&est.attrset, &schema));
        write_marginal(&path, &schema, est, &hdr)?;
        files.push(path);
    }

    println!("seed: {seed}");
    println!("pcost: {}", sig12(pcost));
    println!("rho: {}", sig12(rho));
    println!("mu: {}", sig12(mu));
    println!("records: {}", dataset.num_records());
    println!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}

fn count_flags(flags: &BudgetFlags) -> usize {
    usize::from(flags.budget_pcost.is_some())
        + usize::from(flags.budget_rho.is_some())
        + usize::from(flags.budget_mu.is_some())
        + usize::from(flags.budget_eps_delta.is_some())
        + usize::from(flags.loss_bound.is_some())
}

pub fn cmd_account(args: &AccountArgs) -> CliResult<()> {
    let pcost = if let Some(path) = &args.plan {
        if count_flags(&args.budget) > 0 {
            return Err(CliError::Config(
                "give either --plan or a budget flag, not both".into(),
            ));
        }
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read plan {}: {e}", path.display())))?;
        let doc: PlanDoc = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("plan {}: {e}", path.display())))?;
        doc.pcost
    } else {
        match resolve_constraint(&args.budget)? {
            Constraint::Pcost(p) => p,
            Constraint::LossBound(_) => {
                return Err(CliError::Config(
                    "account needs a privacy budget or --plan; --loss-bound has no fixed cost"
                        .into(),
                ))
            }
        }
    };
    let account = PrivacyAccount::new(pcost)?;
    println!("pcost: {}", sig12(account.pcost()));
    println!("rho: {}", sig12(account.rho()));
    println!("mu: {}", sig12(account.mu()));
    println!("delta curve:");
    for &epsilon in &args.epsilons {
        println!("  epsilon {} -> delta {}", epsilon, sig12(account.delta(epsilon)?));
    }
    Ok(())
}
