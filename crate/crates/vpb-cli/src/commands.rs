use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use vpb_lab::collision::CollisionModel;
use vpb_lab::hermite::HermiteBasis;
use vpb_lab::hypocoercivity::{
    decay_experiment, equivalence_constants, measure_constants, select_coefficients, selection_inequalities,
    EnergyLedger,
};
use vpb_lab::io::{self, Cell, OutputDir, RunManifest, Table};
use vpb_lab::limit::{limit_sweep as run_sweep, sweep_fits, ExperimentPlan};
use vpb_lab::spectral::{branch_rows, choose_r0, eigen_branches, log_grid, BRANCHES};
use vpb_lab::torus::Torus;
use vpb_lab::uq::{build_grid, ensemble_run, stability_experiment, RandomData};
use vpb_lab::vpb::{default_dt, run, InitialKind, SimulationConfig};
use vpb_lab::{Error, Result};

use crate::{Common, Profile};

fn json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn eps_values(c: &Common, default: &[f64]) -> Result<Vec<f64>> {
    let list = match (&c.eps_list, c.epsilon) {
        (Some(l), _) => io::parse_eps_list(l)?,
        (None, Some(e)) => vec![e],
        (None, None) => default.to_vec(),
    };
    for &e in &list {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::validation("epsilon", format!("must lie in (0, 1], got {e}")));
        }
    }
    Ok(list)
}

fn read_kv(c: &Common) -> Result<Option<std::collections::BTreeMap<String, String>>> {
    match c.config.as_deref() {
        None | Some("default") => Ok(None),
        Some(p) => io::parse_kv(&io::read_text(Path::new(p))?).map(Some),
    }
}

/// Profile baseline, then the config file, then explicit flags. A new ε resets
/// the step to `min(1e-3, ε²/4)` unless `keep_dt`.
fn simulation_config(c: &Common, base: SimulationConfig, keep_dt: bool) -> Result<SimulationConfig> {
    let mut cfg = match read_kv(c)? {
        None => base,
        Some(map) => {
            let mut merged = io::parse_kv(&io::config_to_string(&base))?;
            let explicit_dt = map.contains_key("dt");
            let new_eps = map.contains_key("epsilon");
            merged.extend(map);
            if new_eps && !explicit_dt && !keep_dt {
                merged.remove("dt");
            }
            io::config_from_kv(&merged)?
        }
    };
    if let Some(e) = c.epsilon {
        cfg.epsilon = e;
        if !keep_dt {
            cfg.dt = default_dt(e);
        }
    }
    cfg.modes = c.modes.unwrap_or(cfg.modes);
    cfg.degree = c.degree.unwrap_or(cfg.degree);
    cfg.dt = c.dt.unwrap_or(cfg.dt);
    cfg.t_final = c.t_final.unwrap_or(cfg.t_final);
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn finish(out: OutputDir, mut manifest: RunManifest, started: Instant) -> Result<()> {
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    let root = out.root().display().to_string();
    let m = out.finish(manifest)?;
    println!("wrote {} files and manifest.json to {root}", m.outputs.len());
    Ok(())
}

fn ledger_for(degree: usize, eta: f64, dim: usize, modes: usize) -> Result<(HermiteBasis, Torus, EnergyLedger)> {
    let basis = Arc::new(HermiteBasis::new(degree));
    let model = CollisionModel::new(basis.clone(), eta)?;
    let torus = Torus::new(dim, modes)?;
    let ledger = measure_constants(&model, &torus, None)?;
    Ok(((*basis).clone(), torus, ledger))
}

pub fn simulate(c: &Common) -> Result<()> {
    let started = Instant::now();
    let base = match c.profile {
        Profile::Smoke => SimulationConfig::default(),
        Profile::Full => SimulationConfig { modes: 8, degree: 8, t_final: 5.0, ..Default::default() },
    };
    let cfg = simulation_config(c, base, false)?;
    let mut out = OutputDir::create(&c.out_dir)?;
    let traj = run(&cfg)?;
    let mut cons = Table::new(&["t", "mass", "momentum_1", "momentum_2", "momentum_3", "energy"]);
    for e in &traj.ledger.entries {
        cons.push(vec![
            Cell::F(e.t),
            Cell::F(e.mass),
            Cell::F(e.momentum[0]),
            Cell::F(e.momentum[1]),
            Cell::F(e.momentum[2]),
            Cell::F(e.energy),
        ]);
    }
    out.write_table("conservation.csv", &cons)?;

    let (basis, torus, measured) = ledger_for(cfg.degree, cfg.eta, cfg.dim, cfg.modes)?;
    let mut ledger = select_coefficients(&measured, cfg.epsilon, None)?;
    equivalence_constants(&basis, &torus, &mut ledger, 1);
    let mut energy = Table::new(&["epsilon", "t", "e1", "e21", "e22", "total", "total_plus", "plain"]);
    for s in &traj.snapshots {
        let e = vpb_lab::hypocoercivity::energy_functional(&basis, &torus, s, &ledger, 1)?;
        energy.push(vec![
            Cell::F(cfg.epsilon),
            Cell::F(e.t),
            Cell::F(e.e1),
            Cell::F(e.e21),
            Cell::F(e.e22),
            Cell::F(e.total),
            Cell::F(e.total_plus),
            Cell::F(e.plain),
        ]);
    }
    out.write_table("energy.csv", &energy)?;
    if let Some(last) = traj.snapshots.last() {
        out.write_table("snapshot_final.csv", &io::snapshot_table(&torus, last))?;
    }
    out.write("config.txt", io::config_to_string(&cfg).as_bytes())?;
    let (dm, dp, de) = traj.ledger.drifts();
    println!("drift: mass {dm:.3e} momentum {dp:.3e} energy {de:.3e}");
    let mut manifest = RunManifest::new("simulate", json(&cfg), cfg.seed);
    manifest.ledger = Some(json(&ledger));
    finish(out, manifest, started)
}

pub fn spectrum(c: &Common, smax: f64, points: usize) -> Result<()> {
    let started = Instant::now();
    if !(smax > 0.0) {
        return Err(Error::validation("smax", "must be positive"));
    }
    if points < 4 {
        return Err(Error::validation("points", "need at least 4 samples"));
    }
    let eps = eps_values(c, &[1.0])?;
    let degree = c.degree.unwrap_or(6);
    let model = CollisionModel::new(Arc::new(HermiteBasis::new(degree)), 0.2)?;
    let grid = log_grid(smax * 1e-3, smax, points);
    let mut out = OutputDir::create(&c.out_dir)?;
    let mut table =
        Table::new(&["epsilon", "s", "j", "re_lambda", "im_lambda", "fit_c_re", "fit_c_im", "residual"]);
    let mut summary = Vec::new();
    for &e in &eps {
        let branches = eigen_branches(&model, e, &grid, 0.0)?;
        if branches.len() != BRANCHES.len() {
            return Err(Error::BranchCount { s: smax, found: branches.len() });
        }
        for r in branch_rows(e, &branches) {
            table.push(vec![
                Cell::F(r.epsilon),
                Cell::F(r.s),
                Cell::I(r.j as i64),
                Cell::F(r.re_lambda),
                Cell::F(r.im_lambda),
                Cell::F(r.fit_c_re),
                Cell::F(r.fit_c_im),
                Cell::F(r.residual),
            ]);
        }
        let r0 = choose_r0(&model, e, 0.0)?;
        summary.push(serde_json::json!({
            "epsilon": e,
            "r0": r0,
            "branches": branches.iter().map(|b| serde_json::json!({
                "j": b.j, "lambda0": [b.lambda0.re, b.lambda0.im], "c": [b.c.re, b.c.im], "residual": b.residual,
            })).collect::<Vec<_>>(),
        }));
    }
    out.write_table("branches.csv", &table)?;
    out.write_json("spectrum.json", &summary)?;
    let config = serde_json::json!({ "eps_list": eps, "smax": smax, "points": points, "degree": degree });
    finish(out, RunManifest::new("spectrum", config, 0), started)
}

fn sweep_plan(c: &Common) -> Result<ExperimentPlan> {
    let mut plan = match c.profile {
        Profile::Full => ExperimentPlan::default(),
        Profile::Smoke => ExperimentPlan {
            epsilons: vec![0.4, 0.2, 0.1, 0.05],
            modes: 2,
            degree: 4,
            t_final: 1.0,
            ..Default::default()
        },
    };
    if let Some(map) = read_kv(c)? {
        let mut merged = io::parse_kv(&io::plan_to_string(&plan))?;
        merged.extend(map);
        plan = io::plan_from_kv(&merged)?;
    }
    if c.eps_list.is_some() || c.epsilon.is_some() {
        plan.epsilons = eps_values(c, &[])?;
    }
    plan.modes = c.modes.unwrap_or(plan.modes);
    plan.degree = c.degree.unwrap_or(plan.degree);
    plan.t_final = c.t_final.unwrap_or(plan.t_final);
    plan.seed = c.seed.unwrap_or(plan.seed);
    plan.fluid_dt = c.dt.unwrap_or(plan.fluid_dt);
    plan.validate()?;
    Ok(plan)
}

pub fn limit_sweep(c: &Common) -> Result<()> {
    let started = Instant::now();
    let plan = sweep_plan(c)?;
    let mut out = OutputDir::create(&c.out_dir)?;
    let rows = run_sweep(&plan)?;
    let mut table = Table::new(&[
        "epsilon",
        "ell",
        "time_avg_err",
        "integrated_err",
        "perp_budget",
        "decay_rate",
        "tail",
        "linear_err",
        "acoustic_avg",
    ]);
    for r in &rows {
        table.push(vec![
            Cell::F(r.epsilon),
            Cell::U(r.ell),
            Cell::F(r.time_avg_err),
            Cell::F(r.integrated_err),
            Cell::F(r.perp_budget),
            Cell::F(r.decay_rate),
            Cell::F(r.tail),
            Cell::F(r.linear_err),
            Cell::F(r.acoustic_avg),
        ]);
    }
    out.write_table("results.csv", &table)?;
    if rows.len() >= 4 {
        let fits = sweep_fits(&rows)?;
        println!(
            "slopes: integrated {:.3} linear {:.3} perp {:.3}",
            fits.integrated.slope, fits.linear.slope, fits.perp.slope
        );
        out.write_json("fits.json", &fits)?;
    }
    out.write("plan.txt", io::plan_to_string(&plan).as_bytes())?;
    finish(out, RunManifest::new("limit-sweep", json(&plan), plan.seed), started)
}

pub fn uq(c: &Common) -> Result<()> {
    let started = Instant::now();
    let base = match c.profile {
        Profile::Smoke => SimulationConfig {
            modes: 2,
            degree: 4,
            dt: 0.01,
            t_final: 4.0,
            initial: InitialKind::Generic,
            amplitude: 0.01,
            ..Default::default()
        },
        Profile::Full => SimulationConfig {
            modes: 4,
            degree: 6,
            dt: 0.01,
            t_final: 10.0,
            initial: InitialKind::Generic,
            amplitude: 0.01,
            ..Default::default()
        },
    };
    let cfg = simulation_config(c, base, true)?;
    let nodes = c.nodes.unwrap_or(match c.profile {
        Profile::Smoke => 5,
        Profile::Full => 9,
    });
    if nodes < 5 {
        return Err(Error::validation("nodes", "ensembles need at least 5 nodes"));
    }
    let grid = build_grid(nodes)?;
    let mut out = OutputDir::create(&c.out_dir)?;
    let ens = ensemble_run(&cfg, &grid, RandomData::Linear { slope: 0.5 }, 1)?;
    let mut table = Table::new(&["t", "l2", "sup_nodes", "sup", "l2_inf", "dz"]);
    for n in &ens.norms {
        table.push(vec![Cell::F(n.t), Cell::F(n.l2), Cell::F(n.sup_nodes), Cell::F(n.sup), Cell::F(n.l2_inf), Cell::F(n.dz)]);
    }
    out.write_table("mixed_norms.csv", &table)?;
    out.write_json("ensemble.json", &ens.manifest())?;
    let transient = cfg.t_final / 2.0;
    let stab = stability_experiment(&cfg, &grid, 1e-3, 0, transient)?;
    let mut st = Table::new(&["t", "difference"]);
    for (t, d) in stab.times.iter().zip(&stab.difference) {
        st.push(vec![Cell::F(*t), Cell::F(*d)]);
    }
    out.write_table("stability.csv", &st)?;
    let decay = ens.decay(transient)?;
    let dz = ens.dz_decay(transient)?;
    println!("decay rate {:.4}, dz rate {:.4}, contraction rate {:.4}", decay.rate, dz.rate, stab.rate);
    out.write_json(
        "fits.json",
        &serde_json::json!({ "decay": decay, "dz_decay": dz, "stability_rate": stab.rate, "stability_amplitude": stab.amplitude, "runge_flag": ens.runge_flag }),
    )?;
    out.write("config.txt", io::config_to_string(&cfg).as_bytes())?;
    let mut manifest = RunManifest::new("uq", serde_json::json!({ "config": json(&cfg), "nodes": nodes }), cfg.seed);
    manifest.ledger = Some(json(&ens.manifest()));
    finish(out, manifest, started)
}

pub fn energy_report(c: &Common, s: usize) -> Result<()> {
    let started = Instant::now();
    let base = SimulationConfig {
        modes: 4,
        degree: 6,
        dt: 0.05,
        t_final: match c.profile {
            Profile::Smoke => 10.0,
            Profile::Full => 20.0,
        },
        initial: InitialKind::Generic,
        amplitude: 0.1,
        nonlinear: false,
        ..Default::default()
    };
    let cfg = simulation_config(c, base, true)?;
    let eps = eps_values(c, &[1.0, 0.1, 0.01])?;
    let (basis, torus, measured) = ledger_for(cfg.degree, cfg.eta, cfg.dim, cfg.modes)?;
    let mut out = OutputDir::create(&c.out_dir)?;
    let mut ineq = Table::new(&["epsilon", "name", "lhs", "rhs", "slack"]);
    let mut series = Table::new(&["epsilon", "t", "e1", "e21", "e22", "total", "total_plus", "plain"]);
    let mut fits = Table::new(&["epsilon", "rate", "amplitude", "residual", "samples", "monotone_tail"]);
    let mut ledgers = Vec::new();
    for &e in &eps {
        let mut l = select_coefficients(&measured, e, None)?;
        let equiv = equivalence_constants(&basis, &torus, &mut l, s);
        for q in selection_inequalities(&l) {
            ineq.push(vec![Cell::F(e), Cell::S(q.name.clone()), Cell::F(q.lhs), Cell::F(q.rhs), Cell::F(q.slack())]);
        }
        let exp = decay_experiment(&SimulationConfig { epsilon: e, ..cfg.clone() }, s, cfg.t_final / 2.0)?;
        for v in &exp.series {
            series.push(vec![
                Cell::F(e),
                Cell::F(v.t),
                Cell::F(v.e1),
                Cell::F(v.e21),
                Cell::F(v.e22),
                Cell::F(v.total),
                Cell::F(v.total_plus),
                Cell::F(v.plain),
            ]);
        }
        let f = exp.fit;
        fits.push(vec![
            Cell::F(e),
            Cell::F(f.rate),
            Cell::F(f.amplitude),
            Cell::F(f.residual),
            Cell::U(f.samples),
            Cell::S(f.monotone_tail.to_string()),
        ]);
        println!("epsilon {e}: rate {:.4} c_l {:.3e} c_u {:.3e}", f.rate, l.c_l, l.c_u_equiv);
        ledgers.push(serde_json::json!({ "ledger": l, "equivalence": equiv }));
    }
    out.write_table("inequalities.csv", &ineq)?;
    out.write_table("energy_decay.csv", &series)?;
    out.write_table("decay_fits.csv", &fits)?;
    out.write_json("ledgers.json", &ledgers)?;
    let mut manifest =
        RunManifest::new("energy-report", serde_json::json!({ "config": json(&cfg), "eps_list": eps, "s": s }), cfg.seed);
    manifest.ledger = Some(json(&measured));
    finish(out, manifest, started)
}
