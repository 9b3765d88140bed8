use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use radioloc::bench::{
    self, Method, MethodParams, ReportFormat, ResultRow, RunOptions, Scenario, ScenarioName, TrainJob,
};
use radioloc::dpm_sim::{simulate, SimParams};
use radioloc::heatloc::{train::write_log_csv, HeatmapMode};
use radioloc::io::{read_gray_png, read_json, write_gray_png, write_json};
use radioloc::scene::{
    build_dataset, generate_city_map, image_to_occupancy, occupancy_to_image, BuildingParams, CityMap, Dataset,
    DatasetConfig, Split,
};
use radioloc::Pixel;

#[derive(Parser)]
#[command(name = "radioloc", version, about = "Radio-map localization toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamSet {
    Base,
    Perturbed,
}

impl ParamSet {
    fn params(self) -> SimParams {
        match self {
            ParamSet::Base => SimParams::base(),
            ParamSet::Perturbed => SimParams::perturbed(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(clap::Args)]
struct MethodArgs {
    /// kNN neighbour count.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Adaptive-kNN inclusion ratio.
    #[arg(long, default_value_t = 1.1)]
    alpha: f64,
    /// Adaptive-kNN neighbour cap.
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    /// Fingerprint lattice stride (pixels).
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Heat-map sigma (gray levels).
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    /// Reduce heat maps with argmax instead of center of mass.
    #[arg(long)]
    argmax: bool,
    /// LocUNet checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Correntropy kernel width (m).
    #[arg(long, default_value_t = 5.0)]
    correntropy_sigma: f64,
}

impl MethodArgs {
    fn params(&self) -> MethodParams {
        let mut p = MethodParams {
            knn_k: self.k,
            aknn_alpha: self.alpha,
            aknn_k_max: self.k_max,
            fingerprint_stride: self.stride,
            heatmap_sigma: self.sigma,
            heatmap_mode: if self.argmax { HeatmapMode::Argmax } else { HeatmapMode::Com },
            checkpoint: self.checkpoint.clone(),
            ..MethodParams::default()
        };
        p.correntropy.sigma_m = self.correntropy_sigma;
        p
    }
}

#[derive(clap::Args)]
struct SampleArgs {
    /// Dataset directory (containing manifest.json).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "SIM-DPM")]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Evaluate at most this many UEs per scene.
    #[arg(long)]
    max_ue: Option<usize>,
    /// Override the localizer-side map noise (gray std).
    #[arg(long)]
    map_noise: Option<f64>,
    /// Disable timing and evaluate samples in parallel.
    #[arg(long)]
    no_timing: bool,
}

impl SampleArgs {
    fn scenario(&self) -> Result<Scenario> {
        let mut s = Scenario::new(self.scenario.parse::<ScenarioName>()?);
        if let Some(n) = self.map_noise {
            s.map_noise_gray = n;
        }
        Ok(s)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            split: self.split.into(),
            max_ue_per_scene: self.max_ue,
            timing: !self.no_timing,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate random city maps as PNG occupancy images.
    GenMaps {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        buildings: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset (maps, radio maps, ToA maps, manifest) from a JSON config.
    MakeDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the default config and exit.
        #[arg(long)]
        print_default: bool,
    },
    /// Simulate the radio map and ToA map of one transmitter on a city map PNG.
    Simulate {
        #[arg(long)]
        map: PathBuf,
        /// Transmitter pixel as `x,y` (1-indexed).
        #[arg(long)]
        tx: String,
        #[arg(long, value_enum, default_value = "base")]
        params: ParamSet,
        #[arg(long, default_value_t = 1.0)]
        cell: f64,
        /// Output directory; files are named `<stem>.{png,json,pld,toa}`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "radio")]
        stem: String,
    },
    /// Train a LocUNet from a JSON job file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one method and print its MAE.
    Eval {
        #[arg(long)]
        method: String,
        #[command(flatten)]
        samples: SampleArgs,
        #[command(flatten)]
        methods: MethodArgs,
    },
    /// Run several methods on one scenario and write per-sample results.
    RunScenario {
        #[arg(long)]
        methods: String,
        #[command(flatten)]
        samples: SampleArgs,
        #[command(flatten)]
        method_args: MethodArgs,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Merge result CSVs into results.csv and tables.md.
    Report {
        /// Row CSV files written by run-scenario.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
    },
}

fn parse_pixel(s: &str) -> Result<Pixel> {
    let (x, y) = s.split_once(',').context("expected x,y")?;
    Ok(Pixel::new(x.trim().parse()?, y.trim().parse()?))
}

fn run_eval(method: &str, samples: &SampleArgs, args: &MethodArgs) -> Result<()> {
    let method: Method = method.parse()?;
    let dataset = Dataset::open(&samples.dataset)?;
    let run = bench::run_scenario(&samples.scenario()?, &dataset, &[method], &args.params(), &samples.options())?;
    let row = &run.rows[0];
    println!(
        "{} {} mae_m={:.4} mean_runtime_ms={:.4} n={}",
        row.scenario, row.method, row.mae_m, row.mean_runtime_ms, row.n_samples
    );
    Ok(())
}

fn run_scenario(methods: &str, samples: &SampleArgs, args: &MethodArgs, out: &Path) -> Result<()> {
    let methods = Method::parse_list(methods)?;
    if methods.is_empty() {
        bail!("no methods given");
    }
    let dataset = Dataset::open(&samples.dataset)?;
    let scenario = samples.scenario()?;
    let run = bench::run_scenario(&scenario, &dataset, &methods, &args.params(), &samples.options())?;
    let stem = format!("{}_seed{}", scenario.name, samples.seed);
    let (errors, timings) = bench::write_sample_records(out, &stem, &run.records)?;
    let rows_path = out.join(format!("{stem}_rows.csv"));
    std::fs::write(&rows_path, bench::report(&run.rows, ReportFormat::Csv)?)?;
    print!("{}", bench::report(&run.rows, ReportFormat::Text)?);
    eprintln!(
        "wrote {}, {}, {}",
        rows_path.display(),
        errors.display(),
        timings.display()
    );
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenMaps {
            seed,
            count,
            size,
            buildings,
            out,
        } => {
            std::fs::create_dir_all(&out)?;
            for i in 0..count {
                let seed_i = radioloc::rng::derive(seed, "gen-maps", i as u64);
                let map = generate_city_map(seed_i, size, buildings, &BuildingParams::default())?;
                write_gray_png(&out.join(format!("map_{i:03}.png")), &occupancy_to_image(&map.buildings))?;
            }
            eprintln!("wrote {count} maps to {}", out.display());
        }
        Cmd::MakeDataset {
            config,
            out,
            print_default,
        } => {
            if print_default {
                println!("{}", serde_json::to_string_pretty(&DatasetConfig::default())?);
                return Ok(());
            }
            let mut cfg: DatasetConfig = match config {
                Some(p) => read_json(&p)?,
                None => DatasetConfig::default(),
            };
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let m = build_dataset(&cfg)?;
            eprintln!(
                "wrote {} scenes ({} radio maps) to {}",
                m.scenes.len(),
                m.scenes.iter().map(|s| s.radio_maps.len()).sum::<usize>(),
                cfg.out_dir.display()
            );
        }
        Cmd::Simulate {
            map,
            tx,
            params,
            cell,
            out,
            stem,
        } => {
            let city = CityMap::from_buildings(image_to_occupancy(&read_gray_png(&map)?), cell)?;
            let tx = parse_pixel(&tx)?;
            let (radio, toa) = simulate(&city, tx, &params.params())?;
            std::fs::create_dir_all(&out)?;
            radio.save(&out, &stem, cell)?;
            toa.save(&out.join(format!("{stem}.toa")))?;
            eprintln!("wrote {}/{stem}.{{png,json,pld,toa}}", out.display());
        }
        Cmd::Train { config, out } => {
            let job: TrainJob = read_json(&config)?;
            let dataset = Dataset::open(&job.dataset)?;
            let mut scenario = Scenario::new(job.scenario);
            if let Some(n) = job.map_noise_gray {
                scenario.map_noise_gray = n;
            }
            let outcome = bench::train_locnet(&dataset, &scenario, &job.train, job.seed, job.max_ue_per_scene, |row| {
                eprintln!(
                    "epoch {:>3} lr {:.1e} train {:.3} val {:.3}",
                    row.epoch, row.lr, row.train_mae, row.val_mae
                )
            })?;
            std::fs::create_dir_all(&out)?;
            outcome.model.save(&out.join("model.bin"))?;
            write_log_csv(&out.join("train_log.csv"), &outcome.log)?;
            write_json(&out.join("train_job.json"), &job)?;
            println!(
                "best epoch {} val_mae_px {:.4}; checkpoint {}",
                outcome.best_epoch,
                outcome.best_val_mae,
                out.join("model.bin").display()
            );
        }
        Cmd::Eval {
            method,
            samples,
            methods,
        } => run_eval(&method, &samples, &methods)?,
        Cmd::RunScenario {
            methods,
            samples,
            method_args,
            out,
        } => run_scenario(&methods, &samples, &method_args, &out)?,
        Cmd::Report { inputs, out, format } => {
            let format: ReportFormat = format.parse()?;
            let mut rows: Vec<ResultRow> = Vec::new();
            for p in &inputs {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                rows.extend(bench::parse_results_csv(&text)?);
            }
            bench::write_report(&out, &rows)?;
            print!("{}", bench::report(&rows, format)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
