//! Subcommand implementations. Each returns its exit status and the artifacts
//! it wrote; the caller adds the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use qgeq::atlas::{
    cross_check_canonical, sweep_entropy, EntropySurface, EquivalenceLabel, SweepOptions,
};
use qgeq::domain::{Field, Grid, GridSpec};
use qgeq::error::Error;
use qgeq::functionals::{zonal_velocity_profile, Topography};
use qgeq::ldp::estimate_rate;
use qgeq::prior::PriorModel;
use qgeq::solver::{
    solve_canonical, solve_microcanonical, EquilibriumState, IteratePhase, SolveStatus,
};
use qgeq::stability::{analyze, StabilityReport};

use crate::config::{Command, PlotKind, PriorConfig, RunConfig, TopographyConfig};
use crate::csvio::{self, num, opt};
use crate::error::{CliError, Exit};
use crate::plot;

pub struct Outcome {
    pub exit: Exit,
    pub status: String,
    pub artifacts: Vec<String>,
}

/// Problem data shared by the solving commands.
pub struct Setup {
    pub grid: Grid,
    pub prior: PriorModel,
    pub topo: Topography,
}

pub fn load_prior(config: &PriorConfig) -> Result<PriorModel, CliError> {
    Ok(match config {
        PriorConfig::Gaussian => PriorModel::gaussian(),
        PriorConfig::GammaSkew { epsilon } => PriorModel::gamma_skew(*epsilon)?,
        PriorConfig::Tabulated { path } => {
            let rows = csvio::read_table(path, csvio::PRIOR)?;
            let (mut y, mut d) = (
                Vec::with_capacity(rows.len()),
                Vec::with_capacity(rows.len()),
            );
            for (k, r) in rows.iter().enumerate() {
                y.push(csvio::parse_f64(&r[0], path, k + 2)?);
                d.push(csvio::parse_f64(&r[1], path, k + 2)?);
            }
            PriorModel::tabulated(y, d)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
    })
}

pub fn load_topography(config: &TopographyConfig, grid: &Grid) -> Result<Topography, CliError> {
    Ok(match config {
        TopographyConfig::ZonalSine { amplitude } => Topography::zonal_sine(grid, *amplitude),
        TopographyConfig::Flat => Topography::flat(grid),
        TopographyConfig::File { path } => {
            let rows = csvio::read_table(path, csvio::TOPOGRAPHY)?;
            if rows.len() != grid.len() {
                return Err(CliError::Input(format!(
                    "{}: {} rows for a grid of {} cells",
                    path.display(),
                    rows.len(),
                    grid.len()
                )));
            }
            let h = (grid.spec().period_length / grid.n1() as f64)
                .min(grid.spec().channel_width / grid.n2() as f64);
            let mut b = Vec::with_capacity(rows.len());
            for (k, (r, (x1, x2))) in rows.iter().zip(grid.cell_centers()).enumerate() {
                let line = k + 2;
                let (c1, c2) = (
                    csvio::parse_f64(&r[0], path, line)?,
                    csvio::parse_f64(&r[1], path, line)?,
                );
                if (c1 - x1).abs() > 1e-6 * h || (c2 - x2).abs() > 1e-6 * h {
                    return Err(CliError::Input(format!(
                        "{}: row {line} is at ({c1}, {c2}) but the cell center is ({x1}, {x2})",
                        path.display()
                    )));
                }
                b.push(csvio::parse_f64(&r[2], path, line)?);
            }
            Topography::from_field(grid, Field::from_vec(b))?
        }
    })
}

pub fn setup(config: &RunConfig) -> Result<Setup, CliError> {
    let grid = Grid::new(GridSpec::from(&config.grid))?;
    let prior = load_prior(&config.prior)?;
    let topo = load_topography(&config.topography, &grid)?;
    Ok(Setup { grid, prior, topo })
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
    artifacts: &mut Vec<String>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    artifacts.push(name.to_owned());
    Ok(())
}

fn write_csv(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: &[Vec<String>],
    artifacts: &mut Vec<String>,
) -> Result<(), CliError> {
    csvio::write_table(&dir.join(name), header, rows)?;
    artifacts.push(name.to_owned());
    Ok(())
}

pub fn run(command: Command, config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match command {
        Command::SolveCanonical | Command::SolveMicrocanonical => solve(command, config, out),
        Command::Sweep => sweep(config, out),
        Command::Classify => classify(config, out),
        Command::Stability => stability(config, out),
        Command::McLdp => mc_ldp(config, out),
        Command::Plot => plot(config, out),
    }
}

#[derive(Serialize)]
struct StateSummary<'a> {
    ensemble: qgeq::solver::Ensemble,
    status: SolveStatus,
    converged: bool,
    iterations: usize,
    energy: f64,
    circulation: f64,
    beta: f64,
    gamma: f64,
    entropy: Option<f64>,
    meanfield_residual: f64,
    n1: usize,
    n2: usize,
    q_min: f64,
    q_max: f64,
    psi_min: f64,
    psi_max: f64,
    zonal_deviation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<&'a crate::config::PointBlock>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn write_state(
    state: &EquilibriumState,
    setup: &Setup,
    target: Option<&crate::config::PointBlock>,
    out: &Path,
    artifacts: &mut Vec<String>,
) -> Result<(), CliError> {
    let grid = &setup.grid;
    let summary = StateSummary {
        ensemble: state.ensemble,
        status: state.status,
        converged: state.converged,
        iterations: state.iterations,
        energy: state.energy,
        circulation: state.circulation,
        beta: state.beta,
        gamma: state.gamma,
        entropy: finite(state.entropy),
        meanfield_residual: state.meanfield_residual,
        n1: grid.n1(),
        n2: grid.n2(),
        q_min: state.q.min(),
        q_max: state.q.max(),
        psi_min: state.psi.min(),
        psi_max: state.psi.max(),
        zonal_deviation: grid.zonal_deviation(&state.q),
        target,
    };
    write_json(out, "state.json", &summary, artifacts)?;

    let field: Vec<Vec<String>> = grid
        .cell_centers()
        .zip(state.q.values().iter().zip(state.psi.values()))
        .map(|((x1, x2), (q, psi))| vec![num(x1), num(x2), num(*q), num(*psi)])
        .collect();
    write_csv(out, "field.csv", csvio::FIELD, &field, artifacts)?;

    let velocity: Vec<Vec<String>> = zonal_velocity_profile(grid, &state.psi)?
        .into_iter()
        .map(|(x2, v1)| vec![num(x2), num(v1)])
        .collect();
    write_csv(out, "velocity.csv", csvio::VELOCITY, &velocity, artifacts)?;

    let history: Vec<Vec<String>> = state
        .history
        .iter()
        .map(|r| {
            let phase = match r.phase {
                IteratePhase::Linearized => "linearized",
                IteratePhase::Newton => "newton",
            };
            vec![
                r.iteration.to_string(),
                phase.to_owned(),
                num(r.information),
                num(r.energy),
                num(r.circulation),
                num(r.beta),
                num(r.gamma),
            ]
        })
        .collect();
    write_csv(out, "history.csv", csvio::HISTORY, &history, artifacts)
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIterations => "max_iterations",
        SolveStatus::Stalled => "stalled",
        SolveStatus::Unbounded => "unbounded",
    }
}

fn solve(command: Command, config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let setup = setup(config)?;
    let (state, target) = match command {
        Command::SolveCanonical => {
            let b = config.solve_canonical.as_ref().expect("validated");
            let s = solve_canonical(
                &setup.grid,
                &setup.prior,
                &setup.topo,
                b.beta,
                b.gamma,
                &config.solver,
            )?;
            (s, None)
        }
        _ => {
            let b = config.solve_microcanonical.as_ref().expect("validated");
            let s = solve_microcanonical(
                &setup.grid,
                &setup.prior,
                &setup.topo,
                b.energy,
                b.circulation,
                &config.solver,
            )?;
            (s, Some(b))
        }
    };
    let mut artifacts = Vec::new();
    write_state(&state, &setup, target, out, &mut artifacts)?;
    Ok(Outcome {
        exit: if state.converged {
            Exit::Ok
        } else {
            Exit::Nonconvergence
        },
        status: status_name(state.status).to_owned(),
        artifacts,
    })
}

fn label_cells(label: &EquivalenceLabel) -> [String; 3] {
    let (we, wg) = label
        .witness()
        .map_or((None, None), |(e, g)| (Some(e), Some(g)));
    [label.name().to_owned(), opt(we), opt(wg)]
}

#[derive(Serialize)]
struct SweepSummary {
    energies: usize,
    circulations: usize,
    admissible: usize,
    converged: usize,
    nonunique: usize,
    full: usize,
    partial: usize,
    nonequivalent: usize,
    unresolved: usize,
    inadmissible: usize,
    gradient_checked: usize,
    gradient_ok: usize,
    hull_min_gap: Option<f64>,
    cross_checked: usize,
    cross_check_agree: usize,
}

fn sweep(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let block = config.sweep.as_ref().expect("validated");
    let setup = setup(config)?;
    let opts = SweepOptions {
        solver: config.solver.clone(),
        multistart: block.multistart,
        keep_states: block.cross_check,
    };
    let surface = sweep_entropy(
        &setup.grid,
        &setup.prior,
        &setup.topo,
        &block.energy,
        &block.circulation,
        &opts,
    )?;
    let labels = surface.classify_all(&config.tolerances);
    let mut artifacts = Vec::new();

    let rows: Vec<Vec<String>> = surface
        .points()
        .iter()
        .zip(&labels)
        .map(|(p, l)| {
            let mut row = vec![
                num(p.energy),
                num(p.circulation),
                p.admissible.to_string(),
                p.converged.to_string(),
                opt(p.entropy),
                opt(p.beta),
                opt(p.gamma),
            ];
            row.extend(label_cells(l));
            row
        })
        .collect();
    write_csv(out, "surface.csv", csvio::SURFACE, &rows, &mut artifacts)?;

    let gradient = surface.gradient_consistency();
    let rows: Vec<Vec<String>> = gradient
        .iter()
        .map(|g| {
            vec![
                num(g.energy),
                num(g.circulation),
                num(g.beta),
                num(g.gamma),
                num(g.fd_beta),
                num(g.fd_gamma),
                g.ok.to_string(),
            ]
        })
        .collect();
    write_csv(out, "gradient.csv", csvio::GRADIENT, &rows, &mut artifacts)?;

    let full: Vec<(f64, f64)> = surface
        .points()
        .iter()
        .zip(&labels)
        .filter(|(_, l)| matches!(l, EquivalenceLabel::Full))
        .map(|(p, _)| (p.energy, p.circulation))
        .collect();
    let checks: Vec<Vec<String>> = if block.cross_check {
        full.par_iter()
            .map(|&(e, g)| {
                let c = cross_check_canonical(
                    &surface,
                    e,
                    g,
                    &setup.grid,
                    &setup.prior,
                    &setup.topo,
                    &config.solver,
                );
                match c {
                    Ok(c) => vec![
                        num(e),
                        num(g),
                        num(c.beta),
                        num(c.gamma),
                        status_name(c.status).to_owned(),
                        num(c.canonical_energy),
                        num(c.canonical_circulation),
                        num(c.state_mismatch),
                        num(c.constraint_mismatch),
                        c.agrees(1e-2, 1e-3).to_string(),
                    ],
                    Err(_) => {
                        let p = surface
                            .locate(e, g)
                            .map(|(i, j)| surface.point(i, j).clone())
                            .ok();
                        vec![
                            num(e),
                            num(g),
                            opt(p.as_ref().and_then(|p| p.beta)),
                            opt(p.as_ref().and_then(|p| p.gamma)),
                            "error".to_owned(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            "false".to_owned(),
                        ]
                    }
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    write_csv(
        out,
        "cross_check.csv",
        csvio::CROSS_CHECK,
        &checks,
        &mut artifacts,
    )?;

    let hull = surface.concave_hull();
    let hull_min_gap = surface
        .points()
        .iter()
        .zip(&hull)
        .filter_map(|(p, h)| Some(h.as_ref()? - p.entropy?))
        .min_by(f64::total_cmp);
    let count = |name: &str| labels.iter().filter(|l| l.name() == name).count();
    let (ne, ng) = surface.shape();
    let summary = SweepSummary {
        energies: ne,
        circulations: ng,
        admissible: surface.points().iter().filter(|p| p.admissible).count(),
        converged: surface.points().iter().filter(|p| p.converged).count(),
        nonunique: surface.points().iter().filter(|p| p.nonunique).count(),
        full: count("full"),
        partial: count("partial"),
        nonequivalent: count("nonequivalent"),
        unresolved: count("unresolved"),
        inadmissible: count("inadmissible"),
        gradient_checked: gradient.len(),
        gradient_ok: gradient.iter().filter(|g| g.ok).count(),
        hull_min_gap,
        cross_checked: checks.len(),
        cross_check_agree: checks.iter().filter(|r| r[9] == "true").count(),
    };
    write_json(out, "summary.json", &summary, &mut artifacts)?;

    let exit = if summary.converged == 0 && summary.admissible > 0 {
        Exit::Nonconvergence
    } else {
        Exit::Ok
    };
    Ok(Outcome {
        exit,
        status: format!("{} of {} points converged", summary.converged, ne * ng),
        artifacts,
    })
}

fn classify(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let block = config.classify.as_ref().expect("validated");
    let surface: EntropySurface = csvio::read_surface(&block.surface)?;
    let points: Vec<(f64, f64)> = if block.points.is_empty() {
        surface
            .points()
            .iter()
            .map(|p| (p.energy, p.circulation))
            .collect()
    } else {
        block.points.iter().map(|p| (p[0], p[1])).collect()
    };
    let tol = &config.tolerances;
    let rows = points
        .iter()
        .map(|&(e, g)| {
            let label = surface
                .classify(e, g, tol)
                .map_err(|err| CliError::Config(format!("classify.points: {err}")))?;
            let violation = match &label {
                EquivalenceLabel::Nonequivalent { violation, .. } => Some(*violation),
                EquivalenceLabel::Full | EquivalenceLabel::Partial { .. } => Some(0.0),
                _ => None,
            };
            let mut row = vec![num(e), num(g)];
            row.extend(label_cells(&label));
            row.push(opt(violation));
            Ok(row)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut artifacts = Vec::new();
    write_csv(
        out,
        "classification.csv",
        csvio::CLASSIFICATION,
        &rows,
        &mut artifacts,
    )?;
    Ok(Outcome {
        exit: Exit::Ok,
        status: format!("{} points classified", rows.len()),
        artifacts,
    })
}

#[derive(Serialize)]
struct StabilityEntry {
    energy: f64,
    circulation: f64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<StabilityReport>,
}

fn stability(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let block = config.stability.as_ref().expect("validated");
    let setup = setup(config)?;
    let mut worst = Exit::Ok;
    let mut entries = Vec::with_capacity(block.points.len());
    for &[e, g] in &block.points {
        let solved =
            solve_microcanonical(&setup.grid, &setup.prior, &setup.topo, e, g, &config.solver);
        let (exit, status, message, report) = match solved {
            Err(err @ Error::Infeasible { .. }) => {
                (Exit::Infeasible, "infeasible", Some(err.to_string()), None)
            }
            Err(err) => return Err(err.into()),
            Ok(s) if !s.converged => (Exit::Nonconvergence, status_name(s.status), None, None),
            Ok(s) => (
                Exit::Ok,
                "ok",
                None,
                Some(analyze(&s, &setup.prior, &setup.grid)?),
            ),
        };
        worst = worst.max(exit);
        entries.push(StabilityEntry {
            energy: e,
            circulation: g,
            status: status.to_owned(),
            message,
            report,
        });
    }

    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|en| {
            let mut row = vec![num(en.energy), num(en.circulation), en.status.clone()];
            match &en.report {
                Some(r) => row.extend([
                    r.n1.to_string(),
                    r.n2.to_string(),
                    num(r.beta),
                    num(r.gamma),
                    num(r.mu_full),
                    num(r.mu_tangent),
                    num(r.nu),
                    num(r.lambda_min),
                    num(r.dqdpsi_min),
                    num(r.dqdpsi_max),
                    opt(r.theta),
                    opt(r.sigma),
                    opt(r.tau),
                    opt(r.penalized_min),
                    r.rayleigh_ok.to_string(),
                    r.arnold2_ok.to_string(),
                    r.canonical_nondegenerate.to_string(),
                    r.microcanonical_nondegenerate.to_string(),
                    r.lyapunov_penalized_ok.to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(
                    String::new(),
                    csvio::STABILITY.len() - 3,
                )),
            }
            row
        })
        .collect();
    let mut artifacts = Vec::new();
    write_csv(
        out,
        "stability.csv",
        csvio::STABILITY,
        &rows,
        &mut artifacts,
    )?;
    write_json(out, "stability.json", &entries, &mut artifacts)?;
    let ok = entries.iter().filter(|e| e.report.is_some()).count();
    Ok(Outcome {
        exit: worst,
        status: format!("{ok} of {} points analyzed", entries.len()),
        artifacts,
    })
}

fn mc_ldp(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let block = config.mc_ldp.as_ref().expect("validated");
    let prior = load_prior(&config.prior)?;
    let mc = block.mc_config(config.seed.unwrap_or(0));
    let result = estimate_rate(&mc, &prior, block.target)?;
    let rows: Vec<Vec<String>> = result
        .estimates
        .iter()
        .map(|r| {
            let ci_low = if r.censored {
                r.rate_lower_bound
            } else {
                r.ci_low
            };
            vec![
                r.n.to_string(),
                r.hits.to_string(),
                r.trials.to_string(),
                opt(r.rate),
                opt(ci_low),
                opt(r.ci_high),
                num(result.target),
            ]
        })
        .collect();
    let mut artifacts = Vec::new();
    write_csv(out, "mc.csv", csvio::MC, &rows, &mut artifacts)?;
    write_json(out, "mc.json", &result, &mut artifacts)?;
    let last = result.last();
    Ok(Outcome {
        exit: Exit::Ok,
        status: match last.rate {
            Some(rate) => format!("rate {rate} at n = {}", last.n),
            None => format!("no rate at n = {} ({} hits)", last.n, last.hits),
        },
        artifacts,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "plot".into(), |s| s.to_string_lossy().into_owned())
}

fn plot(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let block = config.plot.as_ref().expect("validated");
    let mut rendered: Vec<(String, String)> = Vec::new();
    match block.kind {
        PlotKind::Surface | PlotKind::Section => {
            for input in &block.inputs {
                let rows = csvio::read_surface_rows(input)?;
                let (svg, suffix) = if block.kind == PlotKind::Surface {
                    (plot::surface(&rows)?, "map".to_owned())
                } else if let Some(c) = block.circulation {
                    (
                        plot::section(&rows, plot::Section::AlongEnergy { circulation: c })?,
                        format!("section_gamma_{c}"),
                    )
                } else {
                    let e = block.energy.expect("validated");
                    (
                        plot::section(&rows, plot::Section::AlongCirculation { energy: e })?,
                        format!("section_e_{e}"),
                    )
                };
                rendered.push((format!("{}_{suffix}.svg", stem(input)), svg));
            }
        }
        PlotKind::Velocity => {
            let mut profiles = Vec::new();
            for input in &block.inputs {
                let rows = csvio::read_table(input, csvio::VELOCITY)?;
                let profile = rows
                    .iter()
                    .enumerate()
                    .map(|(k, r)| {
                        Ok((
                            csvio::parse_f64(&r[0], input, k + 2)?,
                            csvio::parse_f64(&r[1], input, k + 2)?,
                        ))
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                let name = input
                    .parent()
                    .and_then(Path::file_name)
                    .map_or_else(|| stem(input), |d| d.to_string_lossy().into_owned());
                profiles.push((name, profile));
            }
            rendered.push(("velocity.svg".into(), plot::velocity(&profiles)?));
        }
    }
    let mut artifacts = Vec::new();
    for (name, svg) in &rendered {
        let path: PathBuf = out.join(name);
        fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
        artifacts.push(name.clone());
    }
    Ok(Outcome {
        exit: Exit::Ok,
        status: format!("{} plots written", artifacts.len()),
        artifacts,
    })
}
