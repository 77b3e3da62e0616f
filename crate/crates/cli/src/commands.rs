//! One function per subcommand. Each writes its tables and reports into the
//! artifact directory; the caller writes the MANIFEST.

use maglorentz::coupling::{mismatch_census, scatterer_point, MismatchMode};
use maglorentz::environment::ScattererField;
use maglorentz::legs_green::{
    check_green_bounds, default_edges, green_experiment_runs, inter_leg_mismatch_rate, intra_leg_mismatch_rate,
    GreenConfig, OccupationKind,
};
use maglorentz::limit_process::simulate_until;
use maglorentz::markovized::simulate_markovized;
use maglorentz::physical_mlp::{simulate_physical, ScenarioLabel};
use maglorentz::randomness::mix_seed;
use maglorentz::stats::{
    linear_fit, invariance_suite, mean, scenario_census, trap_probability, ProcessKind, ScalingExperiment, Schedule,
};
use maglorentz::{ArcSegment, PlanarVector, RandomStream};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{fmt, Artifacts};
use crate::svg::{render, Scene};
use crate::CliError;

const PATH_TAG: u64 = 0x636c_6970;
const FIELD_TAG: u64 = 0x636c_6966;

fn stream(cfg: &ExperimentConfig, run: u64) -> RandomStream {
    RandomStream::new(mix_seed(cfg.seed, PATH_TAG), run)
}

/// Endpoint table and summary shared by the three trajectory commands.
#[derive(Serialize)]
struct PathRow {
    run: u64,
    collisions: usize,
    end: PlanarVector,
}

fn write_paths(out: &mut Artifacts, cfg: &ExperimentConfig, rows: &[PathRow], extra: serde_json::Value) -> Result<(), CliError> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.run.to_string(), r.collisions.to_string(), fmt(r.end.x), fmt(r.end.y)])
        .collect();
    out.csv("endpoints.csv", &["run", "collisions", "x", "y"], &table)?;
    let sq: Vec<f64> = rows.iter().map(|r| r.end.norm_sq()).collect();
    let msd = mean(&sq);
    out.json(
        "summary.json",
        &json!({
            "runs": rows.len(),
            "T": cfg.t_end,
            "mean_collisions": mean(&rows.iter().map(|r| r.collisions as f64).collect::<Vec<_>>()),
            "msd": msd,
            "sigma2": msd / (2.0 * cfg.t_end),
            "extra": extra,
        }),
    )
}

fn write_scene(out: &mut Artifacts, cfg: &ExperimentConfig, scene: Scene) -> Result<(), CliError> {
    out.json("trajectory.json", &scene)?;
    if cfg.svg {
        out.svg("trajectory.svg", &render(&scene))?;
    }
    Ok(())
}

fn segments(per_flight: impl Iterator<Item = Vec<ArcSegment>>) -> (Vec<ArcSegment>, Vec<usize>) {
    let mut arcs = Vec::new();
    let mut segment = Vec::new();
    for (j, a) in per_flight.enumerate() {
        segment.extend(std::iter::repeat_n(j, a.len()));
        arcs.extend(a);
    }
    (arcs, segment)
}

pub fn limit(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let rows = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| {
            let p = simulate_until(cfg.t_end, &mut stream(cfg, run));
            Ok(PathRow {
                run,
                collisions: p.n_collisions(),
                end: p.position_at(cfg.t_end)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_paths(out, cfg, &rows, json!(null))?;
    let arcs = simulate_until(cfg.t_end, &mut stream(cfg, 0)).arcs();
    let segment = (0..arcs.len()).collect();
    write_scene(out, cfg, Scene { eps: cfg.eps, arcs, segment, scatterers: vec![] })
}

pub fn markovized(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let rows = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| {
            let y = simulate_markovized(cfg.t_end, cfg.eps, &mut stream(cfg, run))?;
            Ok(PathRow {
                run,
                collisions: y.n_segments(),
                end: y.position_at(cfg.t_end)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_paths(out, cfg, &rows, json!(null))?;
    let y = simulate_markovized(cfg.t_end, cfg.eps, &mut stream(cfg, 0))?;
    let (arcs, segment) = segments((1..=y.n_segments()).map(|j| y.segment(j).to_vec()));
    let scatterers = (1..y.records.len())
        .filter_map(|i| scatterer_point(&y, i, MismatchMode::ScattererCenters))
        .collect();
    write_scene(out, cfg, Scene { eps: cfg.eps, arcs, segment, scatterers })
}

fn physical_run(cfg: &ExperimentConfig, run: u64) -> Result<(maglorentz::physical_mlp::PhysicalRun, ScattererField), CliError> {
    let mut field = ScattererField::new(cfg.rho, cfg.eps, mix_seed(cfg.seed, FIELD_TAG), run)?;
    field.condition_start_free(PlanarVector::ZERO);
    let r = simulate_physical(&mut field, cfg.t_end, &mut stream(cfg, run), cfg.cutoffs)?;
    Ok((r, field))
}

pub fn physical(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let runs = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| physical_run(cfg, run).map(|(r, _)| (run, r)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let rows: Vec<PathRow> = runs
        .iter()
        .map(|(run, r)| PathRow {
            run: *run,
            collisions: r.collisions.len(),
            end: r.final_state.pos,
        })
        .collect();
    let labels: Vec<Vec<String>> = runs
        .iter()
        .map(|(run, r)| {
            vec![
                run.to_string(),
                format!("{:?}", r.label),
                r.distinct_scatterers.to_string(),
                fmt(r.max_excursion),
                fmt(r.arcs.last().map_or(0.0, |a| a.t1())),
            ]
        })
        .collect();
    out.csv("labels.csv", &["run", "label", "distinct_scatterers", "max_excursion", "end_time"], &labels)?;
    let count = |l: ScenarioLabel| runs.iter().filter(|(_, r)| r.label == l).count();
    let census = json!({
        "A": count(ScenarioLabel::A),
        "B": count(ScenarioLabel::B),
        "C": count(ScenarioLabel::C),
        "D": count(ScenarioLabel::D),
        "unresolved": count(ScenarioLabel::Unresolved),
    });
    // endpoints are at the end of each run, which is T unless trapped earlier
    write_paths(out, cfg, &rows, census)?;

    let (r, field) = physical_run(cfg, 0)?;
    let (arcs, segment) = {
        let mut seg = 0;
        let mut next = r.collisions.iter().map(|c| c.t).peekable();
        let segment = r
            .arcs
            .iter()
            .map(|a| {
                while next.next_if(|&t| t <= a.t0).is_some() {
                    seg += 1;
                }
                seg
            })
            .collect();
        (r.arcs.clone(), segment)
    };
    let reach = r.max_excursion + 2.0 + cfg.eps;
    let scatterers = field
        .generated()
        .into_iter()
        .map(|(_, c)| c)
        .filter(|c| c.norm() <= reach)
        .collect();
    write_scene(out, cfg, Scene { eps: cfg.eps, arcs, segment, scatterers })
}

pub fn couple(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let rows = mismatch_census(&cfg.eps_grid, cfg.t_end, cfg.n_runs, cfg.seed, cfg.mismatch)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            [r.eps, r.t_end, r.n_runs as f64, r.p_hat, r.ci_lo, r.ci_hi, r.p_shadow, r.p_recollide]
                .iter()
                .map(|&x| fmt(x))
                .collect()
        })
        .collect();
    out.csv(
        "census.csv",
        &["eps", "T", "runs", "p_hat", "ci_lo", "ci_hi", "p_shadow", "p_recollide"],
        &table,
    )?;
    let xs: Vec<f64> = rows.iter().map(|r| r.eps * r.eps.ln().abs()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.p_hat).collect();
    let fit = (rows.len() >= 2).then(|| linear_fit(&xs, &ys));
    let ratios: Vec<_> = (1..rows.len())
        .map(|k| json!({ "eps": [rows[k - 1].eps, rows[k].eps], "observed": ys[k - 1] / ys[k], "predicted": xs[k - 1] / xs[k] }))
        .collect();
    out.json(
        "scaling.json",
        &json!({
            "regressor": "eps * |ln eps|",
            "points": xs.iter().zip(&ys).map(|(x, y)| [x, y]).collect::<Vec<_>>(),
            "fit": fit,
            "ratios": ratios,
        }),
    )
}

pub fn traps(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let est = trap_probability(cfg.eps, cfg.rho, cfg.n_runs, cfg.seed)?;
    let census = scenario_census(cfg.eps, cfg.rho, cfg.n_runs, cfg.seed, cfg.t_end, cfg.cutoffs)?;
    let n = census.n_runs as f64;
    let rows: Vec<Vec<String>> = [
        ("A", census.a),
        ("B", census.b),
        ("C", census.c),
        ("D", census.d),
        ("unresolved", census.unresolved),
    ]
    .iter()
    .map(|(l, k)| vec![l.to_string(), k.to_string(), fmt(*k as f64 / n)])
    .collect();
    out.csv("census.csv", &["label", "count", "fraction"], &rows)?;
    out.json("summary.json", &json!({ "free_orbit": est, "census": census }))
}

pub fn green(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    if cfg.n_runs < 2 {
        return Err(CliError::Config("green needs at least 2 runs (fit and held-out halves)".into()));
    }
    let g = GreenConfig {
        eps: cfg.eps,
        mode: cfg.legs,
        t_end: cfg.t_end,
        n_runs: cfg.n_runs,
        seed: cfg.seed,
        edges: default_edges(cfg.eps, cfg.r_max),
    };
    let train = green_experiment_runs(&g, (0..g.n_runs).step_by(2))?;
    let test = green_experiment_runs(&g, (1..g.n_runs).step_by(2))?;
    let report = check_green_bounds(cfg.eps, &train, &test);
    let mut all = train.clone();
    all.merge(&test);

    let mut rows = Vec::new();
    for kind in [
        OccupationKind::G,
        OccupationKind::H,
        OccupationKind::PackG,
        OccupationKind::PackH,
        OccupationKind::R,
    ] {
        let h = all.get(kind);
        for k in 0..h.n_bins() {
            rows.push(vec![
                kind.symbol().to_string(),
                fmt(h.edges[k]),
                fmt(h.edges[k + 1]),
                fmt(h.mass(k)),
                fmt(h.stderr(k)),
                fmt(h.density(k)),
            ]);
        }
    }
    out.csv("occupation.csv", &["kind", "r_lo", "r_hi", "mass", "stderr", "density"], &rows)?;
    let packs: Vec<Vec<String>> = all
        .packs
        .iter()
        .map(|p| {
            vec![
                p.run.to_string(),
                p.index.to_string(),
                p.gamma_len.to_string(),
                fmt(p.leg_duration),
                fmt(p.displacement.x),
                fmt(p.displacement.y),
            ]
        })
        .collect();
    out.csv("packs.csv", &["run", "index", "gamma", "duration", "dx", "dy"], &packs)?;
    out.json(
        "bounds.json",
        &json!({
            "report": report,
            "all_hold": report.all_hold(),
            "steps": all.n_steps,
            "regenerations": all.regenerations,
            "delta": all.delta,
            "mean_gamma": all.mean_gamma(),
        }),
    )
}

pub fn legs(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let intra = intra_leg_mismatch_rate(&cfg.eps_grid, cfg.n_packs, cfg.legs, cfg.mismatch, cfg.seed)?;
    let inter = inter_leg_mismatch_rate(&cfg.eps_grid, cfg.t_end, cfg.n_runs, cfg.legs, cfg.mismatch, cfg.seed)?;
    let rows: Vec<Vec<String>> = intra
        .iter()
        .map(|r| {
            vec![
                fmt(r.eps),
                r.n_packs.to_string(),
                r.n_flights.to_string(),
                fmt(r.rate),
                fmt(r.stderr),
                fmt(r.shadow_rate),
                fmt(r.direct_rate),
                fmt(r.distant_rate),
            ]
        })
        .collect();
    out.csv(
        "intra.csv",
        &["eps", "packs", "flights", "rate", "stderr", "shadow", "direct", "distant"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = inter
        .iter()
        .map(|r| {
            vec![
                fmt(r.eps),
                fmt(r.t_end),
                r.n_runs.to_string(),
                fmt(r.p_hat),
                fmt(r.ci_lo),
                fmt(r.ci_hi),
                fmt(r.p_shadow),
                fmt(r.p_recollide),
                fmt(r.p_any),
                r.first_leg_events.to_string(),
                fmt(r.mean_legs),
            ]
        })
        .collect();
    out.csv(
        "inter.csv",
        &[
            "eps", "T", "runs", "p_hat", "ci_lo", "ci_hi", "p_shadow", "p_recollide", "p_any", "first_leg_events",
            "mean_legs",
        ],
        &rows,
    )?;
    out.json("legs.json", &json!({ "intra": intra, "inter": inter }))
}

pub fn invariance(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let exp = ScalingExperiment {
        process: cfg.process,
        eps: (cfg.process != ProcessKind::Limit).then_some(cfg.eps),
        schedule: Schedule::Fixed(cfg.t_end),
        n_paths: cfg.n_runs as usize,
        seed: cfg.seed,
        mismatch_mode: cfg.mismatch,
    };
    let rep = invariance_suite(&exp)?;
    let rows: Vec<Vec<String>> = rep
        .msd_times
        .iter()
        .zip(&rep.msd)
        .map(|(t, m)| vec![fmt(*t), fmt(*m)])
        .collect();
    out.csv("msd.csv", &["t", "msd"], &rows)?;
    out.json("invariance.json", &rep)
}

pub fn plot(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Config("plot needs --input".into()))?;
    let text = std::fs::read_to_string(path)?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    // accept both our own artifact files and a bare scene
    let scene: Scene = serde_json::from_value(doc.get("data").cloned().unwrap_or(doc))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    out.svg(&format!("{name}.svg"), &render(&scene))
}
