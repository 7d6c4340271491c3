use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use wavefield::data_ingest::{
    load_grid_dataset, log_standardize, marginal_stats, write_grid_dataset, GridDataset, GridShape, MarginalStats,
};
use wavefield::deformation::{BBox, DeformParams, TauSpec};
use wavefield::dspace::{default_base_node, reconstruct_dspace};
use wavefield::estimation::{
    fit, initialize, likelihood_ratio_test, mesh_for, AlphaPolicy, FitConfig, LocalEstimates,
};
use wavefield::fem_gmrf::{observation_matrix, synthesize_dataset, PrecisionModel};
use wavefield::mesh::{apply_barrier, TriMesh};
use wavefield::risk_route::{
    damage_distribution, empirical_exceedance, exceedance_bound_with, quantile_envelope, route_locations,
    route_marginals, sample_variance, sigma_wdot, upcrossing_bound_with, Route, ShipConstants,
};
use wavefield::{Error, Point};

use crate::{Command, ModelArgs, RouteArgs};

pub struct Ctx {
    pub out: PathBuf,
    pub seed: u64,
}

/// Collects the paths written by a subcommand.
struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn dataset(&mut self, name: &str, data: &GridDataset) -> Result<()> {
        let p = self.dir.join(name);
        write_grid_dataset(data, &p)?;
        self.written.push(p);
        Ok(())
    }
}

pub fn run(cmd: &Command, ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let mut w = Writer {
        dir: &ctx.out,
        written: Vec::new(),
    };
    match cmd {
        Command::Ingest(a) => ingest(&a.input, &mut w)?,
        Command::Synthesize(a) => synthesize(a, ctx, &mut w)?,
        Command::Mesh(a) => mesh(a, &mut w)?,
        Command::Fit(a) => fit_cmd(a, &mut w)?,
        Command::Lrt(a) => lrt(a, &mut w)?,
        Command::Simulate(a) => simulate(a, ctx, &mut w)?,
        Command::Correlate(a) => correlate(a, &mut w)?,
        Command::Exceed(a) => exceed(a, ctx, &mut w)?,
        Command::Fatigue(a) => fatigue(a, ctx, &mut w)?,
        Command::Deform(a) => deform(a, &mut w)?,
        Command::Replay(_) => unreachable!("replay is resolved before dispatch"),
    }
    Ok(w.written)
}

fn load_raw(path: &Path) -> Result<GridDataset> {
    let data = load_grid_dataset(path)?;
    data.check_positive()?;
    Ok(data)
}

/// Mesh of the data grid for `params` with the barrier applied.
fn model_mesh(data: &GridDataset, params: &DeformParams, model: &ModelArgs) -> Result<TriMesh> {
    let m = mesh_for(data, params, model.extension)?;
    Ok(apply_barrier(&m, params.nu().max(0.5), m.r_min)?)
}

#[derive(Serialize)]
struct IngestSummary {
    nx: usize,
    ny: usize,
    n_cells: usize,
    n_ocean: usize,
    n_land: usize,
    n_replicates: usize,
    min_hs: Option<f64>,
    max_hs: Option<f64>,
    min_log_sd: Option<f64>,
    max_log_sd: Option<f64>,
}

fn stats_csv(data: &GridDataset, stats: &MarginalStats) -> String {
    let mut s = String::from("location,cell,x,y,mean,sd\n");
    for (j, p) in data.locations.iter().enumerate() {
        writeln!(s, "{j},{},{},{},{},{}", data.cells[j], p.x, p.y, stats.mean[j], stats.sd[j]).unwrap();
    }
    s
}

fn ingest(input: &Path, w: &mut Writer) -> Result<()> {
    let data = load_raw(input)?;
    let all = data.replicates.iter().flatten().copied();
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let stats = if data.n_replicates() >= 2 {
        let logs: Vec<Vec<f64>> = data
            .replicates
            .iter()
            .map(|r| r.iter().map(|v| v.ln()).collect())
            .collect();
        Some(marginal_stats(&logs, data.n_locations())?)
    } else {
        None
    };
    let sd_range = stats.as_ref().map(|s| {
        s.sd.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)))
    });
    let summary = IngestSummary {
        nx: data.grid.nx,
        ny: data.grid.ny,
        n_cells: data.grid.n_cells(),
        n_ocean: data.n_locations(),
        n_land: data.grid.n_cells() - data.n_locations(),
        n_replicates: data.n_replicates(),
        min_hs: lo.is_finite().then_some(lo),
        max_hs: hi.is_finite().then_some(hi),
        min_log_sd: sd_range.map(|r| r.0),
        max_log_sd: sd_range.map(|r| r.1),
    };
    println!(
        "{}: {}x{} grid, {} ocean locations, {} replicates",
        input.display(),
        summary.nx,
        summary.ny,
        summary.n_ocean,
        summary.n_replicates
    );
    w.json("ingest_summary.json", &summary)?;
    if let Some(s) = &stats {
        w.text("log_marginals.csv", &stats_csv(&data, s))?;
    }
    Ok(())
}

fn synthesize(a: &crate::SynthesizeArgs, ctx: &Ctx, w: &mut Writer) -> Result<()> {
    let (grid, land) = match &a.grid_from {
        Some(p) => {
            let d = load_grid_dataset(p)?;
            (d.grid, d.land_mask)
        }
        None => {
            if a.nx < 2 || a.ny < 2 || !(a.dx > 0.0 && a.dy > 0.0) {
                bail!(Error::InvalidInput("the grid needs nx, ny >= 2 and positive spacing".into()));
            }
            let g = GridShape::regular(a.nx, a.ny, a.x0, a.y0, a.dx, a.dy);
            let n = g.n_cells();
            (g, vec![false; n])
        }
    };
    let params = match &a.params {
        Some(p) => DeformParams::load(p)?,
        None => {
            let (x0, y0, x1, y1) = grid.bounds();
            DeformParams::identity(0, BBox::new(x0, y0, x1 - x0, y1 - y0), 2, 0.1f64.ln(), TauSpec::UnitVariance)
        }
    };
    let (data, _) = synthesize_dataset(&params, grid, land, a.n, ctx.seed, a.model.extension)?;
    w.dataset("dataset.csv", &data)?;
    w.text("truth_params.json", &(params.to_json() + "\n"))?;
    println!("{} replicates at {} locations", data.n_replicates(), data.n_locations());
    Ok(())
}

fn mesh(a: &crate::MeshArgs, w: &mut Writer) -> Result<()> {
    let raw = load_raw(&a.input)?;
    let params = match &a.params {
        Some(p) => DeformParams::load(p)?,
        None => {
            let (std, _) = log_standardize(&raw)?;
            let config = FitConfig {
                k: a.k,
                ..Default::default()
            };
            initialize(&std, &config)?.0
        }
    };
    let m = model_mesh(&raw, &params, &a.model)?;
    let summary = m.summary(a.bins);
    println!(
        "{} nodes, {} triangles ({} extension), edges {:.4}..{:.4}",
        summary.n_nodes, summary.n_triangles, summary.n_extension, summary.min_edge, summary.max_edge
    );
    w.text("nodes.csv", &m.nodes_csv())?;
    w.text("triangles.csv", &m.triangles_csv())?;
    w.json("mesh_summary.json", &summary)
}

/// Fit summary consumed by `lrt`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_params: usize,
    pub n_free: usize,
    pub k: usize,
    pub alpha: u32,
    pub stationary: bool,
    pub sigma_eps: f64,
    pub n_replicates: usize,
    pub n_locations: usize,
    pub local_median_nu: Option<f64>,
    pub local_collapsed: Option<usize>,
    pub nu_histogram: Option<Vec<(f64, usize)>>,
}

fn locals_csv(l: &LocalEstimates) -> String {
    let mut s = String::from("x,y,nu,h11,h12,h22,sigma2,eta,range_min,collapsed\n");
    for e in &l.estimates {
        let h = &e.h_tilde;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            e.center.x,
            e.center.y,
            e.nu,
            h[(0, 0)],
            h[(0, 1)],
            h[(1, 1)],
            e.sigma2,
            e.eta,
            e.range_min,
            e.collapsed
        )
        .unwrap();
    }
    s
}

fn fit_cmd(a: &crate::FitArgs, w: &mut Writer) -> Result<()> {
    let raw = load_raw(&a.input)?;
    let (data, stats) = log_standardize(&raw)?;
    let config = FitConfig {
        k: a.k,
        alpha_policy: a.alpha.map_or(AlphaPolicy::FromLocal, AlphaPolicy::Fixed),
        max_iterations: a.max_iter,
        grad_tol: a.grad_tol,
        nugget_init: a.nugget_init,
        stationary_only: a.stationary,
    };
    let (init, locals) = match &a.init {
        Some(p) => (DeformParams::load(p)?, None),
        None => {
            let (p, l) = initialize(&data, &config)?;
            (p, Some(l))
        }
    };
    let m = mesh_for(&data, &init, a.model.extension)?;
    let res = fit(&data, &m, &config, &init)?;
    let report = FitReport {
        log_likelihood: res.log_likelihood,
        initial_log_likelihood: res.initial_log_likelihood,
        iterations: res.iterations,
        converged: res.converged,
        n_params: res.n_params,
        n_free: res.n_free,
        k: res.params.k,
        alpha: res.params.alpha,
        stationary: a.stationary,
        sigma_eps: res.params.sigma_eps(),
        n_replicates: data.n_replicates(),
        n_locations: data.n_locations(),
        local_median_nu: locals.as_ref().and_then(|l| l.median_nu()),
        local_collapsed: locals.as_ref().map(|l| l.n_collapsed()),
        nu_histogram: locals.as_ref().map(|l| l.nu_histogram()),
    };
    println!(
        "l = {:.4} after {} iterations (converged: {}), {} parameters",
        report.log_likelihood, report.iterations, report.converged, report.n_params
    );
    let name = &a.name;
    w.text(&format!("{name}_params.json"), &(res.params.to_json() + "\n"))?;
    w.json(&format!("{name}_report.json"), &report)?;
    let mut trace = String::from("step,log_likelihood\n");
    for (i, l) in res.trace.iter().enumerate() {
        writeln!(trace, "{i},{l}").unwrap();
    }
    w.text(&format!("{name}_trace.csv"), &trace)?;
    w.text(&format!("{name}_marginals.csv"), &stats_csv(&data, &stats))?;
    if let Some(l) = &locals {
        w.text(&format!("{name}_local.csv"), &locals_csv(l))?;
    }
    Ok(())
}

fn lrt(a: &crate::LrtArgs, w: &mut Writer) -> Result<()> {
    let load = |p: &Path| -> Result<FitReport> {
        let t = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&t).map_err(|e| Error::Json(e).into())
    };
    let (s, n) = (load(&a.stationary)?, load(&a.nonstationary)?);
    let df = match a.df {
        Some(d) => d,
        None if n.n_params > s.n_params => (n.n_params - s.n_params) as u32,
        None => bail!(Error::InvalidInput(format!(
            "the non-stationary fit has {} parameters, not more than the stationary fit's {}",
            n.n_params, s.n_params
        ))),
    };
    let out = likelihood_ratio_test(s.log_likelihood, n.log_likelihood, df, a.significance)?;
    println!(
        "lambda = {:.4}, df = {}, c = {:.4}: {}",
        out.lambda,
        out.df,
        out.critical_value,
        if out.reject { "stationary model rejected" } else { "stationary model not rejected" }
    );
    w.json("lrt.json", &out)
}

fn simulate(a: &crate::SimulateArgs, ctx: &Ctx, w: &mut Writer) -> Result<()> {
    let template = load_grid_dataset(&a.input)?;
    let params = DeformParams::load(&a.params)?;
    let stats = if a.back_transform {
        template.check_positive()?;
        Some(log_standardize(&template)?.1)
    } else {
        None
    };
    let m = model_mesh(&template, &params, &a.model)?;
    let model = PrecisionModel::build(&m, &params)?;
    let obs = observation_matrix(&m, &template.locations)?;
    let mut reps = model.simulate_at(&obs, params.sigma_eps(), a.n, ctx.seed);
    if let Some(s) = &stats {
        for r in &mut reps {
            for (j, v) in r.iter_mut().enumerate() {
                *v = (s.mean[j] + s.sd[j] * *v).exp();
            }
        }
    }
    let out = GridDataset::new(template.grid, template.land_mask, reps, None)?;
    w.dataset("simulated.csv", &out)
}

fn correlate(a: &crate::CorrelateArgs, w: &mut Writer) -> Result<()> {
    let data = load_grid_dataset(&a.input)?;
    let params = DeformParams::load(&a.params)?;
    let m = model_mesh(&data, &params, &a.model)?;
    let node = match (a.node, a.at) {
        (Some(n), _) if n < m.n_nodes() => n,
        (Some(n), _) => bail!(Error::InvalidInput(format!("node {n} out of range (mesh has {})", m.n_nodes()))),
        (None, Some((x, y))) => m.nearest_node(&Point::new(x, y)),
        (None, None) => default_base_node(&m),
    };
    if m.is_boundary_node(node) {
        bail!(Error::InvalidInput(format!("node {node} lies on the mesh boundary, where the field is zero")));
    }
    let model = PrecisionModel::build(&m, &params)?;
    let corr = model.correlation_column(node);
    let mut s = String::from("node,x,y,correlation\n");
    for (i, c) in corr.iter().enumerate() {
        let p = m.nodes[i];
        writeln!(s, "{i},{},{},{c}", p.x, p.y).unwrap();
    }
    println!("reference node {node} at ({}, {})", m.nodes[node].x, m.nodes[node].y);
    w.text("correlation.csv", &s)
}

/// Route, model and per-waypoint log `H_s` marginals.
struct RouteModel {
    route: Route,
    params: DeformParams,
    model: PrecisionModel,
    obs: wavefield::sparse::CsrMatrix,
    mu: Vec<f64>,
    sd: Vec<f64>,
    /// `(log H_s − mu)/sd` at the route for every replicate of the input.
    observed: Vec<Vec<f64>>,
}

fn route_model(a: &RouteArgs) -> Result<RouteModel> {
    let raw = load_raw(&a.input)?;
    let (data, stats) = log_standardize(&raw)?;
    let params = DeformParams::load(&a.params)?;
    let route = Route::load_csv(&a.route, a.metres_per_unit)?;
    let locs = route_locations(&route, &data)?;
    let (mu, sd) = route_marginals(&locs, &stats);
    let m = model_mesh(&data, &params, &a.model)?;
    let model = PrecisionModel::build(&m, &params)?;
    let obs = observation_matrix(&m, &route.points)?;
    let observed = raw
        .replicates
        .iter()
        .map(|r| locs.iter().map(|&j| r[j]).collect())
        .collect();
    Ok(RouteModel {
        route,
        params,
        model,
        obs,
        mu,
        sd,
        observed,
    })
}

fn thresholds(a: &crate::ExceedArgs) -> Result<Vec<f64>> {
    if !(a.u_min > 0.0 && a.u_step > 0.0 && a.u_max >= a.u_min) {
        bail!(Error::InvalidInput("thresholds need 0 < u-min <= u-max and u-step > 0".into()));
    }
    let n = ((a.u_max - a.u_min) / a.u_step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| a.u_min + i as f64 * a.u_step).collect())
}

fn exceed(a: &crate::ExceedArgs, ctx: &Ctx, w: &mut Writer) -> Result<()> {
    let u_grid = thresholds(a)?;
    let rm = route_model(&a.route)?;
    // marginal sd of the latent field, without the nugget
    let sd: Vec<f64> = rm
        .model
        .variances_at(&rm.obs)
        .iter()
        .zip(&rm.sd)
        .map(|(v, s)| s * v.sqrt())
        .collect();
    let swd = sigma_wdot(&rm.route, &rm.params)?;
    let empirical = if a.n_sim > 0 {
        let sims = hs_draws(&rm, rm.model.simulate_at(&rm.obs, rm.params.sigma_eps(), a.n_sim, ctx.seed));
        Some(empirical_exceedance(&sims, &u_grid)?)
    } else {
        None
    };
    let mut s = String::from("u,bound,upcrossing_bound");
    s.push_str(if empirical.is_some() { ",empirical\n" } else { "\n" });
    for (i, &u) in u_grid.iter().enumerate() {
        let b = exceedance_bound_with(&rm.route, &rm.mu, &sd, &swd, u.ln())?;
        let up = upcrossing_bound_with(&rm.route, &rm.mu, &sd, &swd, u.ln())?;
        write!(s, "{u},{b},{up}").unwrap();
        if let Some(e) = &empirical {
            write!(s, ",{}", e[i]).unwrap();
        }
        s.push('\n');
    }
    println!("{} thresholds over a {:.0} s route", u_grid.len(), rm.route.duration());
    w.text("exceedance.csv", &s)?;
    w.text("route.csv", &rm.route.to_csv())
}

/// `H_s = exp(mu + sd·x)` for standardised route draws.
fn hs_draws(rm: &RouteModel, draws: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    draws
        .into_iter()
        .map(|d| {
            d.iter()
                .enumerate()
                .map(|(i, x)| (rm.mu[i] + rm.sd[i] * x).exp())
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct SampleSummary {
    n: usize,
    mean: f64,
    variance: f64,
}

impl SampleSummary {
    fn of(v: &[f64]) -> Self {
        SampleSummary {
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
            variance: if v.len() > 1 { sample_variance(v) } else { 0.0 },
        }
    }
}

#[derive(Serialize)]
struct FatigueSummary {
    route_seconds: f64,
    constants: ShipConstants,
    observed: SampleSummary,
    dependent: SampleSummary,
    independent: SampleSummary,
}

fn fatigue(a: &crate::FatigueArgs, ctx: &Ctx, w: &mut Writer) -> Result<()> {
    let consts = ShipConstants {
        c: a.c,
        beta: a.beta,
        gamma_fatigue: 10f64.powf(a.log10_gamma),
        ..Default::default()
    };
    consts.validate()?;
    if a.n_sim < 2 {
        bail!(Error::InvalidInput("fatigue needs at least two simulations".into()));
    }
    let rm = route_model(&a.route)?;
    let nugget = rm.params.sigma_eps();
    let dep = hs_draws(&rm, rm.model.simulate_at(&rm.obs, nugget, a.n_sim, ctx.seed));
    let ind = hs_draws(&rm, rm.model.simulate_independent_at(&rm.obs, nugget, a.n_sim, ctx.seed));
    let d_obs = damage_distribution(&rm.observed, &rm.route, &consts)?;
    let d_dep = damage_distribution(&dep, &rm.route, &consts)?;
    let d_ind = damage_distribution(&ind, &rm.route, &consts)?;
    let mut s = String::from("source,index,damage\n");
    for (name, v) in [("observed", &d_obs), ("dependent", &d_dep), ("independent", &d_ind)] {
        for (i, d) in v.iter().enumerate() {
            writeln!(s, "{name},{i},{d}").unwrap();
        }
    }
    w.text("damage.csv", &s)?;
    let summary = FatigueSummary {
        route_seconds: rm.route.duration(),
        constants: consts,
        observed: SampleSummary::of(&d_obs),
        dependent: SampleSummary::of(&d_dep),
        independent: SampleSummary::of(&d_ind),
    };
    println!(
        "damage variance: observed {:.4e}, dependent {:.4e}, independent {:.4e}",
        summary.observed.variance, summary.dependent.variance, summary.independent.variance
    );
    w.json("fatigue_summary.json", &summary)?;
    let m = d_obs.len();
    if m >= 2 && a.n_sim >= m {
        // simulated batches the size of the observed sample
        let batches = |v: &[f64]| v.chunks_exact(m).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let mut e = String::from("p,observed,dependent_min,dependent_max,independent_min,independent_max\n");
        let dep_env = quantile_envelope(&d_obs, &batches(&d_dep))?;
        let ind_env = quantile_envelope(&d_obs, &batches(&d_ind))?;
        for (r, q) in dep_env.iter().zip(&ind_env) {
            writeln!(e, "{},{},{},{},{},{}", r.p, r.data, r.sim_min, r.sim_max, q.sim_min, q.sim_max).unwrap();
        }
        w.text("damage_envelope.csv", &e)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DeformReport {
    base_node: usize,
    n_nodes: usize,
    n_triangles: usize,
    n_folds: usize,
    fold_triangles: Vec<usize>,
    n_unreached: usize,
    max_loop_defect: f64,
    total_loop_defect: f64,
}

fn deform(a: &crate::DeformArgs, w: &mut Writer) -> Result<()> {
    let data = load_grid_dataset(&a.input)?;
    let params = DeformParams::load(&a.params)?;
    let m = mesh_for(&data, &params, a.model.extension)?;
    let base = match a.base_node {
        Some(b) if b < m.n_nodes() => b,
        Some(b) => bail!(Error::InvalidInput(format!("base node {b} out of range (mesh has {})", m.n_nodes()))),
        None => default_base_node(&m),
    };
    let map = reconstruct_dspace(&m, &params, base)?;
    let report = DeformReport {
        base_node: base,
        n_nodes: m.n_nodes(),
        n_triangles: m.n_triangles(),
        n_folds: map.fold_triangles.len(),
        fold_triangles: map.fold_triangles.clone(),
        n_unreached: map.unreached.len(),
        max_loop_defect: map.max_loop_defect(),
        total_loop_defect: map.total_loop_defect,
    };
    println!("{} folded triangles of {}", report.n_folds, report.n_triangles);
    w.text("dspace_nodes.csv", &map.nodes_csv(&m))?;
    w.text("triangles.csv", &m.triangles_csv())?;
    w.json("deform_report.json", &report)
}
