//! Command implementations behind the `ovs` binary: configuration
//! loading with environment overrides, the pipeline subcommands and their
//! file outputs. Progress goes to standard error; data goes to files only.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use ovs_core::electrostatics::{self, FieldError};
use ovs_core::mesh::{optical_path_samples, VoxelMesh};
use ovs_core::report::{self, RunManifest};
use ovs_core::scene::{ElectrodeMode, Scene};
use ovs_core::signal::{fit_drift, Waveform};
use ovs_core::sweep::{self, EvalOptions, Family};

/// Exit status meanings: 0 success, 1 configuration error, 2 solver
/// failure.
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

/// Environment prefix for configuration overrides: any config key can be
/// overridden as OVS_<SECTION..>_<KEY> (path segments joined by `_`,
/// uppercased), e.g. OVS_SIM_T_TOTAL=30 or OVS_MATERIALS_BGO_DENSITY=7100.
pub const ENV_PREFIX: &str = "OVS_";

#[derive(Debug, Parser)]
#[command(
    name = "ovs",
    version,
    about = "Thermal-stress birefringence simulation for electro-optic voltage sensors"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalArgs {
    /// Configuration document; the built-in default scene when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker-thread cap for mode-level parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Voxel edge length override, m.
    #[arg(long, global = true)]
    pub resolution: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline for one electrode mode and write its
    /// error-versus-temperature curve.
    Simulate {
        /// Built-in mode name (overrides the configured electrode).
        #[arg(long)]
        mode: Option<String>,
        /// Write one temperature CSV per snapshot into this directory.
        #[arg(long, value_name = "DIR")]
        dump_temps: Option<PathBuf>,
        /// Write one stress CSV per snapshot into this directory.
        #[arg(long, value_name = "DIR")]
        dump_stress: Option<PathBuf>,
        /// Write the electric field per crystal element.
        #[arg(long, value_name = "FILE")]
        dump_field: Option<PathBuf>,
        /// Write per-snapshot path sections (birefringence, angle, phase).
        #[arg(long, value_name = "FILE")]
        dump_sections: Option<PathBuf>,
    },
    /// Evaluate several modes (or search an electrode family) and write a
    /// ranked report.
    Sweep {
        /// Comma-separated built-in mode names, or `all`.
        #[arg(long, default_value = "all")]
        modes: String,
        /// Grid-search one family (`cu` or `ito`) instead of fixed modes.
        #[arg(long)]
        optimize: Option<String>,
        /// Grid points for the ratio search.
        #[arg(long, default_value_t = 7)]
        grid: usize,
    },
    /// Electrostatics only: field angle and half-wave voltage of a mode.
    Field {
        #[arg(long)]
        mode: Option<String>,
        /// Write the electric field per crystal element.
        #[arg(long, value_name = "FILE")]
        dump_field: Option<PathBuf>,
    },
    /// Fit a measured or synthesized trace (two-column CSV: time,
    /// intensity) with a drive-synchronous sinusoid plus quadratic drift.
    Fit {
        /// Input trace.
        trace: PathBuf,
        /// Drive frequency, Hz.
        #[arg(long, default_value_t = 50.0)]
        freq: f64,
    },
    /// Write the voxelized scene as a plain-text legacy unstructured
    /// grid.
    ExportMesh,
}

/// Classified command failure, mapped to an exit status by `main`.
#[derive(Debug)]
pub enum CommandError {
    Config(anyhow::Error),
    Solver(anyhow::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => EXIT_CONFIG,
            CommandError::Solver(_) => EXIT_SOLVER,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CommandError::Config(e) | CommandError::Solver(e) => format!("{e:#}"),
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> CommandError {
    CommandError::Config(e.into())
}

fn solver_err(e: impl Into<anyhow::Error>) -> CommandError {
    CommandError::Solver(e.into())
}

/// Load, override and validate the scene; returns the scene and the
/// effective configuration text whose hash identifies the run.
pub fn load_scene(global: &GlobalArgs, mode: Option<&str>) -> Result<(Scene, String), CommandError> {
    let text = match &global.config {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("config not found: {}", path.display()))
            .map_err(CommandError::Config)?,
        None => ovs_core::scene::DEFAULT_DOCUMENT.to_string(),
    };
    let text = apply_env_overrides(&text).map_err(config_err)?;
    let mut scene = Scene::parse(&text).map_err(config_err)?;
    if let Some(resolution) = global.resolution {
        scene.sim.mesh_resolution = resolution;
    }
    if let Some(name) = mode {
        let mode = ElectrodeMode::builtin(name).map_err(config_err)?;
        scene = scene.with_mode(mode);
    }
    let diagnostics = scene.validate();
    if !diagnostics.is_empty() {
        let listing: Vec<String> = diagnostics.iter().map(|d| d.to_string()).collect();
        return Err(CommandError::Config(anyhow!(
            "invalid configuration:\n  {}",
            listing.join("\n  ")
        )));
    }
    let effective = scene.to_toml();
    Ok((scene, effective))
}

/// Rewrite leaf values of the document for which an OVS_* environment
/// override is present. Only keys that already exist can be overridden.
pub fn apply_env_overrides(text: &str) -> Result<String> {
    let mut value: toml::Value = toml::from_str(text).context("config syntax")?;
    let mut any = false;
    rewrite_leaves(&mut value, ENV_PREFIX.trim_end_matches('_'), &mut any)?;
    if any {
        Ok(toml::to_string(&value).expect("config reserialization"))
    } else {
        Ok(text.to_string())
    }
}

fn rewrite_leaves(value: &mut toml::Value, prefix: &str, any: &mut bool) -> Result<()> {
    if let toml::Value::Table(table) = value {
        for (key, slot) in table.iter_mut() {
            let path = format!("{prefix}_{}", key.to_uppercase().replace('-', "_"));
            match slot {
                toml::Value::Table(_) => rewrite_leaves(slot, &path, any)?,
                toml::Value::Array(items) => {
                    for (i, item) in items.iter_mut().enumerate() {
                        rewrite_leaves(item, &format!("{path}_{i}"), any)?;
                    }
                }
                leaf => {
                    if let Ok(raw) = std::env::var(&path) {
                        *leaf = parse_override(&raw, leaf)
                            .with_context(|| format!("override {path}={raw}"))?;
                        *any = true;
                    }
                }
            }
        }
    }
    Ok(())
}

fn parse_override(raw: &str, like: &toml::Value) -> Result<toml::Value> {
    Ok(match like {
        toml::Value::Float(_) => toml::Value::Float(raw.parse()?),
        toml::Value::Integer(_) => toml::Value::Integer(raw.parse()?),
        toml::Value::Boolean(_) => toml::Value::Boolean(raw.parse()?),
        _ => toml::Value::String(raw.to_string()),
    })
}

fn configure_threads(global: &GlobalArgs) {
    if let Some(n) = global.threads {
        // Ignore failure: the global pool can only be built once per
        // process (tests may run several commands).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn mode_of(scene: &Scene, requested: Option<&str>) -> Result<ElectrodeMode, CommandError> {
    match requested {
        Some(name) => ElectrodeMode::builtin(name).map_err(config_err),
        None => scene
            .electrode
            .clone()
            .ok_or_else(|| CommandError::Config(anyhow!("no electrode mode configured; pass --mode"))),
    }
}

/// Dump paths are taken relative to the output directory unless absolute.
fn resolve_out(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

pub fn run(cli: Cli) -> Result<(), CommandError> {
    configure_threads(&cli.global);
    match &cli.command {
        Command::Simulate { mode, dump_temps, dump_stress, dump_field, dump_sections } => {
            cmd_simulate(
                &cli.global,
                mode.as_deref(),
                dump_temps.as_deref(),
                dump_stress.as_deref(),
                dump_field.as_deref(),
                dump_sections.as_deref(),
            )
        }
        Command::Sweep { modes, optimize, grid } => {
            cmd_sweep(&cli.global, modes, optimize.as_deref(), *grid)
        }
        Command::Field { mode, dump_field } => {
            cmd_field(&cli.global, mode.as_deref(), dump_field.as_deref())
        }
        Command::Fit { trace, freq } => cmd_fit(&cli.global, trace, *freq),
        Command::ExportMesh => cmd_export_mesh(&cli.global),
    }
}

pub fn cmd_simulate(
    global: &GlobalArgs,
    mode: Option<&str>,
    dump_temps: Option<&Path>,
    dump_stress: Option<&Path>,
    dump_field: Option<&Path>,
    dump_sections: Option<&Path>,
) -> Result<(), CommandError> {
    let (scene, effective) = load_scene(global, mode)?;
    let hash = report::config_hash(&effective);
    let mode = mode_of(&scene, mode)?;
    let mut manifest = RunManifest::new(hash.clone(), "simulate", vec![format!("--mode={}", mode.name)]);

    eprintln!("simulate: mode {} at {} m resolution", mode.name, scene.sim.mesh_resolution);
    let t0 = Instant::now();
    let options = EvalOptions { keep_stress: dump_stress.is_some() };
    let eval = sweep::evaluate_mode_detailed(&scene, &mode, options).map_err(solver_err)?;
    manifest.record_stage("evaluate", t0.elapsed().as_secs_f64());
    eprintln!(
        "simulate: angle {:.2} deg, total error {:.3e}, {} snapshots",
        eval.result.mean_angle,
        eval.result.total_error,
        eval.result.curve.len()
    );

    let t0 = Instant::now();
    let out = &global.out;
    let curve_path = out.join(format!("curve_{}.csv", mode.name));
    report::write_curve_csv(&curve_path, &hash, &eval.result).map_err(solver_err)?;
    manifest.record_output(&curve_path);

    if let Some(dir) = dump_temps {
        let dir = resolve_out(out, dir);
        for p in report::write_temperature_dumps(&dir, &hash, &eval.mesh, &eval.history)
            .map_err(solver_err)?
        {
            manifest.record_output(&p);
        }
    }
    if let Some(dir) = dump_stress {
        let dir = resolve_out(out, dir);
        for p in report::write_stress_dumps(
            &dir,
            &hash,
            &eval.mesh,
            &eval.history.times,
            &eval.stress_snapshots,
        )
        .map_err(solver_err)?
        {
            manifest.record_output(&p);
        }
    }
    if let Some(path) = dump_field {
        let path = resolve_out(out, path);
        report::write_field_dump(&path, &hash, &eval.mesh, &eval.potential).map_err(solver_err)?;
        manifest.record_output(&path);
    }
    if let Some(path) = dump_sections {
        let path = resolve_out(out, path);
        report::write_sections_dump(&path, &hash, &eval.history.times, &eval.sections_snapshots)
            .map_err(solver_err)?;
        manifest.record_output(&path);
    }
    manifest.record_stage("io", t0.elapsed().as_secs_f64());
    manifest.write(&out.join("manifest.json")).map_err(solver_err)?;
    Ok(())
}

fn parse_mode_list(scene: &Scene, spec: &str) -> Result<Vec<ElectrodeMode>, CommandError> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(ElectrodeMode::builtins());
    }
    let mut out = Vec::new();
    for name in spec.split(',') {
        let name = name.trim();
        if name.is_empty() {
            continue;
        }
        out.push(ElectrodeMode::builtin(name).map_err(config_err)?);
    }
    if out.is_empty() {
        return mode_of(scene, None).map(|m| vec![m]);
    }
    Ok(out)
}

pub fn cmd_sweep(
    global: &GlobalArgs,
    modes: &str,
    optimize: Option<&str>,
    grid: usize,
) -> Result<(), CommandError> {
    let (scene, effective) = load_scene(global, None)?;
    let hash = report::config_hash(&effective);
    let out = &global.out;

    let (report_data, flags) = match optimize {
        Some(family) => {
            let family = match family.to_ascii_lowercase().as_str() {
                "cu" => Family::Cu,
                "ito" => Family::Ito,
                other => {
                    return Err(CommandError::Config(anyhow!(
                        "unknown electrode family `{other}` (expected cu or ito)"
                    )))
                }
            };
            eprintln!("sweep: optimizing {} family over {grid} grid points", family.prefix());
            let t0 = Instant::now();
            let (best, rep) = sweep::optimize_ratio(&scene, family, grid).map_err(solver_err)?;
            eprintln!(
                "sweep: best {} (ratio {:.1}:{:.1} mm) after {:.1?}",
                best.name,
                best.ratio_x * 1e3,
                best.ratio_y * 1e3,
                t0.elapsed()
            );
            (rep, vec![format!("--optimize={}", family.prefix()), format!("--grid={grid}")])
        }
        None => {
            let list = parse_mode_list(&scene, modes)?;
            eprintln!("sweep: evaluating {} modes", list.len());
            let t0 = Instant::now();
            let rep = sweep::compare_modes(&scene, &list).map_err(solver_err)?;
            eprintln!("sweep: finished in {:.1?}", t0.elapsed());
            (rep, vec![format!("--modes={modes}")])
        }
    };

    let mut manifest = RunManifest::new(hash.clone(), "sweep", flags);
    let report_path = out.join("report.csv");
    report::write_report_csv(&report_path, &hash, &report_data).map_err(solver_err)?;
    manifest.record_output(&report_path);
    for r in &report_data.results {
        let p = out.join(format!("curve_{}.csv", r.name));
        report::write_curve_csv(&p, &hash, r).map_err(solver_err)?;
        manifest.record_output(&p);
    }
    if !report_data.trace.is_empty() {
        let p = out.join("trace.csv");
        report::write_trace_csv(&p, &hash, &report_data).map_err(solver_err)?;
        manifest.record_output(&p);
    }
    manifest.write(&out.join("manifest.json")).map_err(solver_err)?;
    Ok(())
}

pub fn cmd_field(
    global: &GlobalArgs,
    mode: Option<&str>,
    dump_field: Option<&Path>,
) -> Result<(), CommandError> {
    let (scene, effective) = load_scene(global, mode)?;
    let hash = report::config_hash(&effective);
    let mode = mode_of(&scene, mode)?;
    let scene = scene.with_mode(mode.clone());

    let t0 = Instant::now();
    let mesh = VoxelMesh::build(&scene).map_err(config_err)?;
    let samples = optical_path_samples(&mesh, &scene).map_err(config_err)?;
    let field = electrostatics::solve_potential(&mesh, &mode, &scene.optics, scene.sim.solver_rel_tol)
        .map_err(solver_err)?;
    let summary = electrostatics::mean_field_angle(&field, &samples).map_err(solver_err)?;
    let hwv = match electrostatics::half_wave_voltage(
        &mesh,
        &mode,
        &scene.optics,
        &samples,
        scene.sim.solver_rel_tol,
    ) {
        Ok(v) => v,
        Err(FieldError::EffectivelyInfiniteHwv) => f64::INFINITY,
        Err(e) => return Err(solver_err(e)),
    };
    eprintln!(
        "field: mode {} angle {:.2} deg hwv {:.4e} V ({:.1?})",
        mode.name,
        summary.mean_angle,
        hwv,
        t0.elapsed()
    );

    let out = &global.out;
    let mut manifest = RunManifest::new(hash.clone(), "field", vec![format!("--mode={}", mode.name)]);
    manifest.record_stage("field", t0.elapsed().as_secs_f64());
    let summary_path = out.join(format!("field_{}.csv", mode.name));
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(&ensure_parent(&summary_path).map_err(solver_err)?)
                .map_err(solver_err)?,
        );
        writeln!(w, "# config={hash}").map_err(solver_err)?;
        writeln!(w, "mode,mean_angle_deg,hwv_v").map_err(solver_err)?;
        writeln!(w, "{},{},{}", mode.name, summary.mean_angle, hwv).map_err(solver_err)?;
    }
    manifest.record_output(&summary_path);
    if let Some(path) = dump_field {
        let path = resolve_out(out, path);
        report::write_field_dump(&path, &hash, &mesh, &field).map_err(solver_err)?;
        manifest.record_output(&path);
    }
    manifest.write(&out.join("manifest.json")).map_err(solver_err)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(path.to_path_buf())
}

pub fn cmd_fit(global: &GlobalArgs, trace: &Path, freq: f64) -> Result<(), CommandError> {
    let text = std::fs::read_to_string(trace)
        .with_context(|| format!("trace not found: {}", trace.display()))
        .map_err(CommandError::Config)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
            return Err(CommandError::Config(anyhow!("line {}: expected `time,intensity`", lineno + 1)));
        };
        let (Ok(t), Ok(v)) = (a.trim().parse::<f64>(), b.trim().parse::<f64>()) else {
            if pairs.is_empty() {
                continue; // header row
            }
            return Err(CommandError::Config(anyhow!("line {}: non-numeric row", lineno + 1)));
        };
        pairs.push((t, v));
    }
    let waveform = Waveform::from_pairs(&pairs).map_err(config_err)?;
    let fit = fit_drift(&waveform, freq).map_err(solver_err)?;
    eprintln!(
        "fit: i_ac {:.4e}, phi {:.4} rad, drift mean {:.4e}, residual rms {:.2e}",
        fit.i_ac, fit.phi, fit.mean_dc, fit.residual_rms
    );

    let hash = report::config_hash(&text);
    let out = &global.out;
    let mut manifest = RunManifest::new(hash.clone(), "fit", vec![format!("--freq={freq}")]);
    let fit_path = out.join("fit_report.csv");
    report::write_fit_report(&fit_path, &hash, &fit).map_err(solver_err)?;
    manifest.record_output(&fit_path);
    manifest.write(&out.join("manifest.json")).map_err(solver_err)?;
    Ok(())
}

pub fn cmd_export_mesh(global: &GlobalArgs) -> Result<(), CommandError> {
    let (scene, effective) = load_scene(global, None)?;
    let hash = report::config_hash(&effective);
    let mesh = VoxelMesh::build(&scene).map_err(config_err)?;
    let out = &global.out;
    let path = out.join("mesh.vtk");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&ensure_parent(&path).map_err(solver_err)?).map_err(solver_err)?,
    );
    mesh.write_legacy_grid(&mut w).map_err(solver_err)?;
    for d in &mesh.diagnostics {
        eprintln!("export-mesh: note: {d}");
    }
    let mut manifest = RunManifest::new(hash, "export-mesh", Vec::new());
    manifest.record_output(&path);
    manifest.write(&out.join("manifest.json")).map_err(solver_err)?;
    eprintln!("export-mesh: wrote {}", path.display());
    Ok(())
}
