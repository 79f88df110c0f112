use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use diffcomet::bench::{run_sweeps, Metric, Preset, SweepConfig, DEFAULT_TRIALS, SMOKE_TRIALS};
use diffcomet::covmodel::{CovarianceMatrix, Parity};
use diffcomet::estimator::{estimate as moment_estimate, EstimatorConfig, ResultReport};
use diffcomet::mle::{ml_estimate, MlConfig, MlInit};
use diffcomet::shapes::{Family, ShapeConfig};
use diffcomet::sim::{draw_snapshots, ScenarioConfig};
use diffcomet::stats::{sample_covariance, SnapshotSet, WeightSpec};

use crate::manifest::{self, SimulationManifest, SweepManifest, ARTIFACT, VERSION};
use crate::{DmaxArgs, EstimateArgs, InitArg, MethodArg, ParityArg, PresetArg, SimulateArgs, SweepArgs, WeightArg};

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn scenario_from_flags(args: &SimulateArgs) -> Result<ScenarioConfig> {
    let geometry = args
        .geometry
        .config()
        .ok_or_else(|| anyhow!("missing geometry: pass --uniform-M or --positions"))?;
    let family: Family = args.shape.ok_or_else(|| anyhow!("missing required field: shape (--shape)"))?.into();
    if family != Family::Point && args.sigma_z.is_none() && args.sigma_omega.is_none() {
        bail!("missing required field: spread (--sigma-z or --sigma-omega)");
    }
    let shape = ShapeConfig {
        family,
        sigma_omega: args.sigma_omega,
        sigma_z: args.sigma_z,
        negative_tail: args.negative_tail.then_some(true),
    };
    if args.snr_db.is_none() && args.noise_var.is_none() {
        bail!("missing required field: noise level (--snr-db or --noise-var)");
    }
    let (omega0, z0) = match (args.omega0, args.z0, args.geometry.z_amb) {
        (None, None, Some(_)) => (None, Some(30.0)),
        (None, None, None) => (Some(0.3), None),
        (w, z, _) => (w, z),
    };
    Ok(ScenarioConfig {
        geometry,
        shape,
        omega0,
        z0,
        power: args.power,
        noise_var: args.noise_var,
        snr_db: args.snr_db,
        snapshots: args.snapshots.ok_or_else(|| anyhow!("missing required field: snapshot count (--n)"))?,
    })
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let (config, seed, stream) = if let Some(path) = &args.manifest {
        let m: SimulationManifest = manifest::read_json(path)?;
        (m.scenario, m.master_seed, m.stream)
    } else if let Some(path) = &args.config {
        let mut c: ScenarioConfig = manifest::read_json(path)?;
        if let Some(n) = args.snapshots {
            c.snapshots = n;
        }
        (c, args.seed, args.stream)
    } else {
        (scenario_from_flags(&args)?, args.seed, args.stream)
    };
    let scenario = config.build().context("invalid scenario")?;
    let snapshots = draw_snapshots(&scenario, seed, stream)?;

    ensure_parent(&args.output)?;
    let mut out = BufWriter::new(File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?);
    snapshots.write_csnp(&mut out)?;
    out.flush()?;
    let sidecar = manifest::sidecar_path(&args.output);
    let record = SimulationManifest {
        artifact: ARTIFACT.into(),
        version: VERSION.into(),
        command: "simulate".into(),
        scenario: config,
        master_seed: seed,
        stream,
        format: "csnp-v1".into(),
        created: manifest::now(),
        outputs: vec![args.output.clone(), sidecar.clone()],
    };
    manifest::write_json(&sidecar, &record)?;

    let shape = scenario.shape;
    let spread = match scenario.geom.z_amb() {
        Some(z) => format!("sigma_z = {} m", shape.sigma_omega() * z),
        None => format!("sigma_omega = {}", shape.sigma_omega()),
    };
    println!(
        "wrote {} and {}: M = {}, N = {}, SNR = {:.2} dB, shape = {} ({spread})",
        args.output.display(),
        sidecar.display(),
        scenario.geom.sensors(),
        scenario.snapshots,
        scenario.snr_db(),
        shape.family(),
    );
    Ok(())
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    #[serde(flatten)]
    report: ResultReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    search_trace: Option<&'a [(f64, f64)]>,
}

enum Input {
    Snapshots(SnapshotSet),
    Covariance(CovarianceMatrix),
}

fn read_input(args: &EstimateArgs) -> Result<Input> {
    let path = &args.input;
    let ctx = || format!("reading {}", path.display());
    if args.covariance {
        let text = fs::read_to_string(path).with_context(ctx)?;
        return Ok(Input::Covariance(CovarianceMatrix::from_csv(&text).with_context(ctx)?));
    }
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let set = if is_csv {
        SnapshotSet::from_csv(&fs::read_to_string(path).with_context(ctx)?)
    } else {
        SnapshotSet::read_csnp(BufReader::new(File::open(path).with_context(ctx)?))
    };
    Ok(Input::Snapshots(set.with_context(ctx)?))
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let input = read_input(&args)?;
    let sensors = match &input {
        Input::Snapshots(s) => s.sensors(),
        Input::Covariance(r) => r.size(),
    };
    let sidecar_path = manifest::sidecar_path(&args.input);
    let sidecar = if !args.geometry.is_set() && sidecar_path.is_file() {
        match manifest::read_json::<SimulationManifest>(&sidecar_path) {
            Ok(m) => Some(m.scenario.geometry),
            Err(e) => {
                eprintln!("warning: ignoring sidecar: {e:#}");
                None
            }
        }
    } else {
        None
    };
    let geom = args.geometry.resolve(sidecar.as_ref(), sensors)?;
    let sample = match input {
        Input::Snapshots(s) => sample_covariance(&s)?,
        Input::Covariance(r) => r,
    };

    let result = match args.method {
        MethodArg::Moment => {
            let order = match args.order {
                Some(d) => d,
                None => geom.d_max()?,
            };
            let parity = match args.parity {
                ParityArg::All => Parity::AllOrders,
                ParityArg::Even => Parity::EvenOnly,
            };
            let weight = match args.weight {
                WeightArg::Inverse => WeightSpec::inverse(),
                WeightArg::Identity => WeightSpec::identity(),
            }
            .with_ridge(args.ridge);
            let mut config = EstimatorConfig::new(order).with_parity(parity).with_weight(weight);
            config.grid_points = args.grid;
            config.keep_trace = args.trace;
            moment_estimate(&geom, &sample, &config)?
        }
        MethodArg::Ml => {
            let family: Family = args
                .assume
                .ok_or_else(|| anyhow!("--method ml needs --assume gaussian|exponential|uniform"))?
                .into();
            let mut config = MlConfig::new(family).with_init(match args.init {
                InitArg::Grid => MlInit::Grid,
                InitArg::Moment => MlInit::FromMomentEstimator,
            });
            config.omega_grid = args.grid;
            config.keep_trace = args.trace;
            ml_estimate(&geom, &sample, &config)?
        }
    };

    let output = EstimateOutput {
        report: result.report(geom.z_amb()),
        search_trace: result.search_trace.as_deref(),
    };
    let text = serde_json::to_string_pretty(&output)? + "\n";
    print!("{text}");
    if let Some(path) = &args.output {
        ensure_parent(path)?;
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn read_sweep_configs(path: &Path) -> Result<Vec<SweepConfig>> {
    let value: serde_json::Value = manifest::read_json(path)?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|c| vec![c])
    };
    parsed.with_context(|| format!("parsing sweep config {}", path.display()))
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let started = manifest::now();
    let (mut configs, preset) = if let Some(path) = &args.manifest {
        let m: SweepManifest = manifest::read_json(path)?;
        (m.sweeps, m.preset)
    } else if let Some(path) = &args.config {
        (read_sweep_configs(path)?, None)
    } else {
        let p = match args.preset.expect("clap requires a preset") {
            PresetArg::Fig2 => Preset::Fig2,
            PresetArg::Fig3 => Preset::Fig3,
            PresetArg::Fig4 => Preset::Fig4,
        };
        let name = p.name().to_string();
        (p.sweeps(DEFAULT_TRIALS, 0), Some(name))
    };
    let trials = if args.smoke { Some(SMOKE_TRIALS) } else { args.trials };
    for c in &mut configs {
        if let Some(t) = trials {
            c.trials = t;
        }
        if let Some(s) = args.seed {
            c.master_seed = s;
        }
    }
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }

    let result = run_sweeps(&configs)?;
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let mut outputs = Vec::new();
    for metric in Metric::ALL {
        let path = args.output.join(format!("rmse_{}.csv", metric.name()));
        fs::write(&path, result.to_csv(metric)).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }
    let manifest_path = args.output.join("manifest.json");
    outputs.push(manifest_path.clone());
    let record = SweepManifest {
        artifact: ARTIFACT.into(),
        version: VERSION.into(),
        command: "sweep".into(),
        preset,
        sweeps: configs,
        started,
        finished: manifest::now(),
        outputs: outputs.clone(),
    };
    manifest::write_json(&manifest_path, &record)?;
    for p in &outputs {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn dmax(args: DmaxArgs) -> Result<()> {
    let geom = args
        .geometry
        .config()
        .ok_or_else(|| anyhow!("missing geometry: pass --uniform-M or --positions"))?
        .build()?;
    let m = geom.sensors();
    let d = geom.d_max()?;
    if geom.is_uniform() {
        println!("D_max = {d} (uniform array, M = {m}: 2M - 3)");
    } else {
        println!("D_max = {d} (non-uniform array, M = {m}: M(M - 1) - 1)");
    }
    Ok(())
}
