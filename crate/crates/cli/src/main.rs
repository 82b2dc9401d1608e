//! Command-line front end: verify benchmarks, estimate spectra and
//! entropies, build partitions, check the standing conditions, and sweep
//! scale parameters. Exit code 0 means no inequality violation beyond
//! tolerance and no fatal stage error.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ruelle::config::{self, Bench, BenchmarkSpec};
use ruelle::emit::{self, EmitFormat};
use ruelle::rng::SeedTree;

#[derive(Parser)]
#[command(
    name = "ruelle",
    about = "entropy / Lyapunov-exponent inequality verification on chart domains",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// benchmark name (doubling, tent, logistic4, gauss, gauss-noncompact,
    /// doubling2d) or path to a TOML config
    target: String,
    /// root seed for every random stream
    #[arg(long)]
    seed: Option<u64>,
    /// rayon worker count (0 = library default); results are identical
    /// for every setting
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// output directory for reports
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Full verification pipeline and report emission
    Verify(Common),
    /// Lyapunov spectrum over mu-sampled orbits (CSV + JSON summary)
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// orbit length
        #[arg(long)]
        horizon: Option<usize>,
        /// number of orbits
        #[arg(long)]
        orbits: Option<usize>,
    },
    /// Block-entropy table on the natural partition
    Entropy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long)]
        orbits: Option<usize>,
    },
    /// Build the adaptive partition and dump it (JSON, SVG for planar
    /// charts)
    Partition {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Distortion falsifier and integrability report
    CheckConditions(Common),
    /// Trend table over the (n, l, m) grid
    Sweep(Common),
}

fn load_spec(target: &str, seed: Option<u64>) -> Result<BenchmarkSpec> {
    let path = Path::new(target);
    let mut spec = if path.exists() && path.is_file() {
        BenchmarkSpec::load(path).with_context(|| format!("loading {target}"))?
    } else {
        BenchmarkSpec::named(target).with_context(|| format!("resolving benchmark '{target}'"))?
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn resolve(common: &Common) -> Result<Bench> {
    if common.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.workers)
            .build_global()
            .context("configuring worker pool")?;
    }
    let spec = load_spec(&common.target, common.seed)?;
    Ok(config::resolve(spec)?)
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Verify(common) => {
            let bench = resolve(&common)?;
            let report = ruelle::report::run_verification(&bench)?;
            // rebuild the partition for the dump artifacts; same seed
            // path as the pipeline stage, so it is the same partition
            let tree = SeedTree::new(bench.spec.seed);
            let partition = ruelle::partition::AdaptivePartition::build(
                bench.system.clone(),
                bench.profile.clone(),
                &bench.measure,
                bench.level_params,
                bench.spec.budgets.partition_samples,
                &tree,
            )
            .ok();
            let files = emit::emit(
                &report,
                partition.as_ref(),
                &[EmitFormat::Json, EmitFormat::Csv, EmitFormat::Svg],
                &common.out,
            )?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            println!(
                "{}: lhs {:.6} ({}), rhs {:.6} ± {:.2e}, margin {:.6} => {}",
                report.benchmark,
                report.margin.lhs_best,
                report.margin.lhs_source,
                report.margin.rhs,
                report.margin.rhs_stderr,
                report.margin.margin,
                if report.margin.pass { "inequality holds" } else { "VIOLATION" }
            );
            Ok(if report.margin.pass { 0 } else { 1 })
        }
        Command::Spectrum { common, horizon, orbits } => {
            let bench = resolve(&common)?;
            let spec = &bench.spec;
            let tree = SeedTree::new(spec.seed);
            let est = ruelle::lyapunov::positive_sum_integral(
                &bench.system,
                &bench.measure,
                horizon.unwrap_or(spec.budgets.spectrum_horizon),
                orbits.unwrap_or(spec.budgets.spectrum_orbits),
                spec.budgets.reorth_every,
                spec.budgets.burn_in,
                &tree,
            )?;
            std::fs::create_dir_all(&common.out)?;
            let csv_path = common.out.join("spectrum.csv");
            std::fs::write(&csv_path, emit::spectrum_csv(&est.rows))?;
            let summary = serde_json::json!({
                "benchmark": spec.name,
                "mean_positive_sum": est.value,
                "stderr": est.stderr,
                "horizon": est.horizon,
                "orbits": est.orbits_requested,
                "escaped": est.escaped,
            });
            let json_path = common.out.join("spectrum.json");
            std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)?;
            println!("wrote {}", csv_path.display());
            println!("wrote {}", json_path.display());
            println!("positive-sum integral {:.6} ± {:.2e}", est.value, est.stderr);
            Ok(0)
        }
        Command::Entropy { common, t_max, orbits } => {
            let bench = resolve(&common)?;
            let spec = &bench.spec;
            let tree = SeedTree::new(spec.seed);
            let natural = bench
                .natural
                .as_ref()
                .context("benchmark has no registered natural partition")?;
            let be = ruelle::entropy::block_entropy(
                &bench.system,
                &bench.measure,
                natural,
                t_max.unwrap_or(spec.budgets.block_t_max),
                orbits.unwrap_or(spec.budgets.entropy_orbits),
                &tree.child("natural"),
            )?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("entropy.csv");
            let mut csv = String::from("partition,t,h_t,h_t_over_t,increment\n");
            for row in &be.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    be.partition, row.t, row.h_t, row.h_t_over_t, row.increment
                ));
            }
            std::fs::write(&path, csv)?;
            println!("wrote {}", path.display());
            println!(
                "slope {:.6} ± {:.2e} nats/step{}",
                be.slope,
                be.slope_stderr,
                if be.undersampled { " (undersampled)" } else { "" }
            );
            Ok(0)
        }
        Command::Partition { common, samples } => {
            let bench = resolve(&common)?;
            let spec = &bench.spec;
            let tree = SeedTree::new(spec.seed);
            let part = ruelle::partition::AdaptivePartition::build(
                bench.system.clone(),
                bench.profile.clone(),
                &bench.measure,
                bench.level_params,
                samples.unwrap_or(spec.budgets.partition_samples),
                &tree,
            )?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("partition.json");
            std::fs::write(&path, emit::partition_json(&part, 5_000)?)?;
            println!("wrote {}", path.display());
            if part.dim() == 2 {
                let svg = common.out.join("partition.svg");
                std::fs::write(&svg, emit::partition_svg(&part)?)?;
                println!("wrote {}", svg.display());
            }
            let h = part.entropy();
            println!(
                "levels {}, cells {}, H {:.4} <= bound {:.4} (truncation {:.2e})",
                part.levels.len(),
                part.cell_counts.len(),
                h.plug_in,
                h.bound + h.truncation_correction,
                h.truncation_mass
            );
            Ok(0)
        }
        Command::CheckConditions(common) => {
            let bench = resolve(&common)?;
            let spec = &bench.spec;
            let tree = SeedTree::new(spec.seed);
            let budget = ruelle::measure::Budget {
                quad_evals: spec.budgets.quad_evals,
                mc_samples: spec.budgets.mc_samples,
            };
            let base = bench
                .measure
                .sample(spec.budgets.distortion_points, tree.child("condition-a").root());
            let mut rng = tree.stream("condition-a", 0);
            let a = ruelle::system::check_distortion(
                &bench.system,
                &spec.distortion,
                &base,
                &ruelle::system::DistortionPlan::default(),
                &mut rng,
            )?;
            let b = ruelle::measure::condition_b_report(
                &bench.measure,
                &bench.system,
                &bench.profile,
                &bench.quad_hints,
                &budget,
                tree.child("condition-b").root(),
            )?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("conditions.json");
            let doc = serde_json::json!({ "distortion": a, "integrability": b });
            std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
            println!("wrote {}", path.display());
            println!(
                "distortion: max ratio {:.4} over {} pairs => {}",
                a.max_ratio,
                a.pairs,
                if a.pass { "consistent" } else { "refuted" }
            );
            println!("integrability: {:?}", b.status);
            Ok(0)
        }
        Command::Sweep(common) => {
            let bench = resolve(&common)?;
            let tree = SeedTree::new(bench.spec.seed);
            let rhs = ruelle::lyapunov::positive_sum_integral(
                &bench.system,
                &bench.measure,
                bench.spec.budgets.spectrum_horizon,
                bench.spec.budgets.spectrum_orbits,
                bench.spec.budgets.reorth_every,
                bench.spec.budgets.burn_in,
                &tree,
            )?;
            let rows = ruelle::report::run_sweep(&bench, &tree, rhs.value, rhs.stderr)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("sweep.csv");
            let mut csv = String::from(
                "n,l,m,lhs_slope_per_f,lhs_stderr,conditional_per_f,partition_entropy,entropy_bound,rhs_per_f,margin,flags\n",
            );
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.n,
                    r.l,
                    r.m,
                    opt(r.lhs_slope_per_f),
                    opt(r.lhs_stderr),
                    opt(r.conditional_per_f),
                    opt(r.partition_entropy),
                    opt(r.entropy_bound),
                    r.rhs_per_f,
                    opt(r.margin),
                    r.flags.join(";")
                ));
            }
            std::fs::write(&path, csv)?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
            Ok(0)
        }
    }
}
