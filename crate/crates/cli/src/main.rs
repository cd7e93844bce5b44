//! `bnn` — batch experimentation for the BNN severity-regression toolkit.
//!
//! Subcommands: `run` (full nested-CV experiment), `generate` (synthetic
//! cohort CSV), `sample` (single HMC chain + diagnostics), `predict` (apply a
//! saved model artifact to a CSV), `report` (re-render a structured report).

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bnn_core::artifact::ModelArtifact;
use bnn_core::bayes::{self, BayesSpec};
use bnn_core::data::{
    self, generate_cohort, load_csv, sequential_ids, write_report, CohortSpec, ReportFormat,
};
use bnn_core::eval::{make_fold_plan, run_experiment_with, CvReport, ExperimentMeta, Profile};
use bnn_core::hmc::{self, HmcConfig};
use bnn_core::net::{Activation, Architecture, DesignMatrix};
use bnn_core::preprocess::Preprocessor;
use bnn_core::Error;

use config::{DataSource, RunConfig};

#[derive(Parser)]
#[command(name = "bnn", version, about = "Bayesian neural-network severity regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment: preprocessing, nested CV, reports.
    Run(RunArgs),
    /// Generate a synthetic cohort CSV.
    Generate(GenerateArgs),
    /// Sample a single HMC chain and store the chain artifact.
    Sample(SampleArgs),
    /// Apply a saved model artifact to a CSV.
    Predict(PredictArgs),
    /// Re-render a structured report as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV data file (id,target,features...).
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use the synthetic default cohort.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Output path prefix; writes <out>.json and <out>.txt.
    #[arg(long, default_value = "report")]
    out: String,
    /// Shrink chains, epochs, and the grid for CI-scale runs.
    #[arg(long)]
    fast: bool,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value = "table")]
    format: FormatArg,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// CSV data file; omit with --synthetic.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    #[arg(long)]
    synthetic: bool,
    /// Hidden layer widths, comma separated (e.g. "100" or "100,100").
    #[arg(long, default_value = "100", value_delimiter = ',')]
    hidden: Vec<usize>,
    /// Prior weight precision.
    #[arg(long, default_value_t = 1.0)]
    precision: f64,
    #[arg(long, default_value_t = 0.01)]
    step_size: f64,
    #[arg(long, default_value_t = 20)]
    leapfrog: usize,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thinning: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    pca_k: usize,
    /// Chain artifact output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model artifact.
    #[arg(long)]
    model: PathBuf,
    /// CSV with rows to score.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV (id,target,mean,variance); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Structured report JSON.
    #[arg(long)]
    input: PathBuf,
    /// Rendered table output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum FormatArg {
    Table,
    Structured,
}

fn exit_code_for(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "data" => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = err.category();
            eprintln!("error[{category}]: {err}");
            ExitCode::from(exit_code_for(category))
        }
    }
}

fn read_config(path: Option<&PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn load_data(source: &DataSource) -> Result<DesignMatrix, Error> {
    match source {
        DataSource::Synthetic(spec) => generate_cohort(spec),
        DataSource::Csv(path) => Ok(load_csv(path)?.data),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let mut cfg = read_config(args.config.as_ref())?;
    // Flags win over the config file.
    if args.fast {
        cfg.profile = Profile::Fast;
        cfg.grid = None;
        cfg.families = None;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        if let DataSource::Synthetic(ref mut spec) = cfg.data {
            spec.seed = seed;
        }
    }
    if let Some(path) = &args.data {
        cfg.data = DataSource::Csv(path.display().to_string());
    } else if args.synthetic {
        if let DataSource::Csv(_) = cfg.data {
            cfg.data = DataSource::Synthetic(CohortSpec {
                seed: cfg.seed,
                ..CohortSpec::default()
            });
        }
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    let cfg = cfg.resolve();
    let config_hash = cfg.hash();

    let data = load_data(&cfg.data)?;
    let plan = make_fold_plan(data.n(), cfg.seed)?;
    let grid = cfg
        .grid
        .as_ref()
        .expect("resolved config")
        .to_grid(cfg.pca_components)?;
    let families = cfg.families.expect("resolved config").to_families();
    let meta = ExperimentMeta {
        seed: cfg.seed,
        pca_k: cfg.pca_components,
        config_hash,
        notes: vec![format!(
            "inner-loop HMC: num_samples={}, burn_in={}; outer refit: num_samples={}, burn_in={}",
            families.hmc.inner.num_samples,
            families.hmc.inner.burn_in,
            families.hmc.outer.num_samples,
            families.hmc.outer.burn_in
        )],
    };

    let report = if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| run_experiment_with(&families.as_dyn(), &data, &grid, &plan, &meta))?
    } else {
        run_experiment_with(&families.as_dyn(), &data, &grid, &plan, &meta)?
    };

    write_report(&report, format!("{}.json", args.out), ReportFormat::Structured)?;
    write_report(&report, format!("{}.txt", args.out), ReportFormat::Table)?;
    match args.format {
        FormatArg::Table => print!("{}", report.render_table()),
        FormatArg::Structured => println!("{}", report.to_json()),
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let cfg = read_config(args.config.as_ref())?;
    let mut spec = match cfg.data {
        DataSource::Synthetic(spec) => spec,
        DataSource::Csv(_) => CohortSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.patients {
        spec.n_patients = n;
    }
    if let Some(d) = args.features {
        spec.n_features = d;
    }
    let data = generate_cohort(&spec)?;
    data::write_csv(&args.out, &sequential_ids(data.n()), &data)?;
    println!(
        "wrote {} patients x {} features to {}",
        data.n(),
        data.dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<(), Error> {
    let data = if args.synthetic {
        generate_cohort(&CohortSpec {
            seed: args.seed,
            ..CohortSpec::default()
        })?
    } else {
        let path = args.data.as_ref().ok_or_else(|| {
            Error::InvalidConfig("sample needs --data <csv> or --synthetic".into())
        })?;
        load_csv(path)?.data
    };
    let pre = Preprocessor::fit(data.rows(), args.pca_k)?;
    let projected = DesignMatrix::new(pre.transform(data.rows())?, data.targets().to_vec())?;
    let arch = Architecture::new(args.pca_k, args.hidden.clone(), Activation::Tanh)?;
    let sigma2 = bayes::estimate_noise_variance(&projected, bayes::RIDGE_ALPHA);
    let spec = BayesSpec::tied(args.precision, sigma2, &arch)?;
    let config = HmcConfig::new(
        args.step_size,
        args.leapfrog,
        args.samples,
        args.burn_in,
        args.thinning,
        args.seed,
    )?;
    let chain = hmc::run_chain(&arch, &spec, &projected, &config)?;

    let trace = chain.energy_trace();
    let mean_e = trace.iter().sum::<f64>() / trace.len() as f64;
    let min_e = trace.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_e = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("chain: {} kept samples, {} parameters", chain.len(), arch.parameter_count());
    println!("acceptance rate: {:.3}", chain.acceptance_rate());
    println!("divergences: {}", chain.divergences());
    println!(
        "step size: {:.6} (configured {:.6})",
        chain.step_size_used(),
        args.step_size
    );
    println!("noise variance (ridge warm start): {sigma2:.4}");
    println!("energy: mean {mean_e:.2}, min {min_e:.2}, max {max_e:.2}");
    println!(
        "energy ESS (batch means): {:.0}",
        hmc::effective_sample_size(trace)
    );

    let artifact = ModelArtifact::from_hmc(&arch, &spec, &chain, &config, Some(pre));
    artifact.save(&args.out)?;
    println!("chain artifact written to {}", args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let artifact = ModelArtifact::load(&args.model)?;
    let dataset = load_csv(&args.data)?;
    let prediction = artifact.predict(dataset.data.rows())?;
    let mut out = String::from("id,target,mean,variance\n");
    let (means, variances): (&[f64], Option<&[f64]>) = match &prediction {
        bnn_core::eval::Prediction::Point(p) => (p, None),
        bnn_core::eval::Prediction::Posterior(d) => (&d.means, Some(&d.variances)),
    };
    for (i, id) in dataset.ids.iter().enumerate() {
        let variance = match variances {
            Some(v) => format!("{}", v[i]),
            None => "n.a.".to_string(),
        };
        out.push_str(&format!(
            "{id},{},{},{variance}\n",
            dataset.data.targets()[i],
            means[i]
        ));
    }
    match &args.out {
        Some(path) => std::fs::write(path, out)?,
        None => print!("{out}"),
    }
    let mse = bnn_core::eval::mse(dataset.data.targets(), means)?;
    eprintln!("mse against the target column: {mse:.4}");
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.input)?;
    let report = CvReport::from_json(&text)?;
    let table = report.render_table();
    match &args.out {
        Some(path) => std::fs::write(path, table)?,
        None => print!("{table}"),
    }
    Ok(())
}
