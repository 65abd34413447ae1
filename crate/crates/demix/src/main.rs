use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use demix::cli::{cmd_detect, cmd_evaluate, cmd_separate, cmd_simulate, AssignmentRule, RunConfig};
use demix::hypothesis::Call;
use demix::mixture::ModelFamily;
use demix::simulate::SyntheticSpec;

/// Detect mixed bacterial strains in a WGS alignment, estimate their
/// proportions, and partition the reads per strain.
///
/// Input alignments are SAM text; convert binary alignments upstream with
/// `samtools view -h sample.bam > sample.sam`.
#[derive(Parser)]
#[command(name = "demix", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Binomial,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    /// Naive-Bayes MAP with fitted variances (default).
    Map,
    /// Unweighted count vote (two strains only).
    Binomial,
}

#[derive(Args)]
struct PipelineArgs {
    /// Aligned reads (SAM text).
    sam: PathBuf,
    /// Reference genome (FASTA).
    reference: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Significance level of the likelihood-ratio test.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Depth filter coefficient (fraction of the mean depth).
    #[arg(long, default_value_t = 0.70)]
    kappa: f64,
    /// Minimum allele percentage for a variant to be processed.
    #[arg(long, default_value_t = 10.0)]
    noise_threshold: f64,
    /// Number of constituent strains to model (1-3).
    #[arg(long, default_value_t = 2)]
    strains: usize,
    /// Mixture component family.
    #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
    model: FamilyArg,
    /// GFF3 file restricting the analysis to listed regions.
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Seed for the mixture initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable the depth filter.
    #[arg(long)]
    no_depth_filter: bool,
    /// Minimum mapping quality for a read to be counted.
    #[arg(long, default_value_t = 1)]
    min_mapq: u8,
    /// Fit one component per strain instead of complement pairs (3 strains).
    #[arg(long)]
    direct_components: bool,
    /// Read assignment rule used by `separate`.
    #[arg(long, value_enum, default_value_t = RuleArg::Map)]
    rule: RuleArg,
}

impl PipelineArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            alpha: self.alpha,
            kappa: self.kappa,
            noise_threshold: self.noise_threshold,
            n_strains: self.strains,
            model_family: match self.model {
                FamilyArg::Binomial => ModelFamily::Binomial,
                FamilyArg::Gaussian => ModelFamily::Gaussian,
            },
            regions_path: self.regions.clone(),
            output_dir: self.out.clone(),
            seed: self.seed,
            depth_filter: !self.no_depth_filter,
            min_map_quality: self.min_mapq,
            direct_components: self.direct_components,
            assignment_rule: match self.rule {
                RuleArg::Map => AssignmentRule::Map,
                RuleArg::Binomial => AssignmentRule::BinomialVote,
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Classify the sample as pure or mixed and estimate proportions.
    Detect(PipelineArgs),
    /// Detect, then partition reads per strain with consensus sequences.
    Separate(PipelineArgs),
    /// Generate a synthetic sample with known ground truth.
    Simulate {
        /// Output sample directory.
        #[arg(long)]
        out: PathBuf,
        /// Reference length in bases.
        #[arg(long, default_value_t = 50_000)]
        ref_length: usize,
        /// Number of strains (1-3).
        #[arg(long, default_value_t = 2)]
        strains: usize,
        /// Substitutions planted per strain.
        #[arg(long, default_value_t = 100)]
        snps: usize,
        /// Comma-separated strain proportions summing to 1.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.7, 0.3])]
        proportions: Vec<f64>,
        /// Mean depth of coverage.
        #[arg(long, default_value_t = 100.0)]
        depth: f64,
        /// Read length.
        #[arg(long, default_value_t = 150)]
        read_length: usize,
        /// Per-base substitution error probability.
        #[arg(long, default_value_t = 0.02)]
        error_rate: f64,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a panel of sample directories against their ground truth.
    Evaluate {
        /// Panel directory containing one subdirectory per sample.
        panel: PathBuf,
        /// Output directory for the evaluation report and tables.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run() -> demix::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Detect(args) => {
            let report = cmd_detect(&args.config(), &args.sam, &args.reference)?;
            println!(
                "{}: call={} lr={:.4} threshold={:.4} alpha={}",
                report.sample_id, report.call, report.lr_statistic, report.threshold_c, report.alpha
            );
            if let Some(props) = &report.em_proportions {
                let text: Vec<String> = props.iter().map(|p| format!("{p:.3}")).collect();
                println!("proportions: {}", text.join(":"));
            }
            for warning in &report.warnings {
                eprintln!("note: {warning}");
            }
        }
        Command::Separate(args) => {
            let report = cmd_separate(&args.config(), &args.sam, &args.reference)?;
            println!(
                "{}: call={} lr={:.4} assigned_reads={}",
                report.sample_id, report.call, report.lr_statistic, report.n_assigned_reads
            );
            if report.call == Call::Pure {
                println!("pure sample: one strain file written");
            }
        }
        Command::Simulate {
            out,
            ref_length,
            strains,
            snps,
            proportions,
            depth,
            read_length,
            error_rate,
            seed,
        } => {
            let spec = SyntheticSpec {
                ref_length,
                n_strains: strains,
                snps_per_strain: snps,
                proportions,
                depth,
                read_length,
                error_rate,
                seed,
            };
            cmd_simulate(&spec, &out)?;
            println!("sample written to {}", out.display());
        }
        Command::Evaluate { panel, out } => {
            let summary = cmd_evaluate(&panel, &out)?;
            println!(
                "samples={} mixed_detected={}/{} pure_correct={}/{}",
                summary.n_samples,
                summary.detection.mixed_called_mixed,
                summary.detection.true_mixed,
                summary.detection.pure_called_pure,
                summary.detection.true_pure,
            );
            if let Some(rmse) = summary.rmse_major {
                println!("rmse_major={rmse:.4}");
            }
            if let Some(auc) = summary.auc {
                println!("auc={auc:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
