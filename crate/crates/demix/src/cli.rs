//! Pipeline commands: detect, separate, simulate, evaluate.
//!
//! These are the library entry points behind the command-line subcommands;
//! each reads its inputs from disk, writes its outputs under the configured
//! output directory, and returns the structured result.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assign::{
    assign_binomial, assign_map, consensus_sequence, partition_reads, read_variant_profile,
    StrainAssignment, VariantIndex, Vote,
};
use crate::error::{DemixError, Result};
use crate::evaluate::{
    alpha_calibration_grid, confusion_matrix, consensus_mismatches, grid_monotonicity, rmse,
    roc_auc, AlphaGridCell, SampleRecord,
};
use crate::fasta::{read_fasta_file, write_fasta, FastaRecord};
use crate::hypothesis::{likelihood_ratio_test, Call, HypothesisResult};
use crate::mixture::{
    build_observations, em_fit, proportions_from_model, strain_assignment_model,
    write_responsibility_tsv, FrequencyObservations, MixtureModel, ModelFamily,
    ProportionEstimate,
};
use crate::pileup::{
    build_feature_vectors, filter_profile, parse_regions_file, write_site_tsv, FilterConfig,
    Interval, SampleProfile,
};
use crate::report::{read_report, write_report, Report, SCHEMA_VERSION};
use crate::sam::{parse_alignment_file, write_sam, Alignment, AlignedRead};
use crate::simulate::{read_truth, write_sample_dir, GroundTruth, SyntheticSpec};

/// EM stopping tolerance on the log-likelihood.
pub const EM_TOL: f64 = 1e-6;
/// EM iteration cap.
pub const EM_MAX_ITER: usize = 500;

/// Which two-strain read-assignment rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentRule {
    /// Naive-Bayes MAP with the fitted (unequal) variances; the default.
    Map,
    /// The unweighted count vote, exposed for comparisons.
    BinomialVote,
}

/// Pipeline configuration shared by detect and separate.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub alpha: f64,
    pub kappa: f64,
    pub noise_threshold: f64,
    pub n_strains: usize,
    pub model_family: ModelFamily,
    pub regions_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub depth_filter: bool,
    pub min_map_quality: u8,
    /// Fit K = n_strains components instead of complement pairs for three
    /// strains.
    pub direct_components: bool,
    pub assignment_rule: AssignmentRule,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.05,
            kappa: 0.70,
            noise_threshold: 10.0,
            n_strains: 2,
            model_family: ModelFamily::Gaussian,
            regions_path: None,
            output_dir: PathBuf::from("."),
            seed: 0,
            depth_filter: true,
            min_map_quality: 1,
            direct_components: false,
            assignment_rule: AssignmentRule::Map,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DemixError::InvalidInput(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(1..=3).contains(&self.n_strains) {
            return Err(DemixError::InvalidInput(format!(
                "n_strains must be 1, 2, or 3, got {}",
                self.n_strains
            )));
        }
        if self.assignment_rule == AssignmentRule::BinomialVote && self.n_strains != 2 {
            return Err(DemixError::InvalidInput(
                "the binomial vote rule applies to two-strain samples only".into(),
            ));
        }
        self.filter_config().validate()
    }

    fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            kappa: if self.depth_filter { self.kappa } else { 0.0 },
            noise_threshold: self.noise_threshold,
            min_map_quality: self.min_map_quality,
        }
    }
}

/// Everything the detect stage produces, kept in memory so separate can
/// continue the pipeline without re-reading inputs.
pub struct PipelineState {
    pub sample_id: String,
    pub reference: FastaRecord,
    pub alignment: Alignment,
    pub profile: SampleProfile,
    pub test: HypothesisResult,
    pub model: Option<MixtureModel>,
    pub estimate: Option<ProportionEstimate>,
    pub observations: Option<FrequencyObservations>,
    pub report: Report,
}

fn sample_id_of(sam_path: &Path) -> String {
    sam_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".into())
}

fn mixture_component_count(config: &RunConfig) -> usize {
    if config.n_strains >= 3 && !config.direct_components {
        2 * config.n_strains
    } else {
        config.n_strains
    }
}

fn run_detection(config: &RunConfig, sam_path: &Path, ref_path: &Path) -> Result<PipelineState> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let references = read_fasta_file(ref_path)?;
    let reference = references
        .into_iter()
        .next()
        .ok_or_else(|| DemixError::InvalidInput("reference FASTA has no record".into()))?;
    let ref_length = reference.sequence.len();
    let alignment = parse_alignment_file(sam_path, config.min_map_quality)?;
    let regions = match &config.regions_path {
        Some(path) => parse_regions_file(path)?,
        None => vec![Interval {
            start: 0,
            end: ref_length,
        }],
    };
    let filter_config = config.filter_config();
    let sites = build_feature_vectors(&alignment.reads, ref_length);
    let profile = filter_profile(sites, regions, &filter_config)?;
    if profile.filtered_sites.is_empty() {
        return Err(DemixError::InvalidInput(
            "no sites passed filtering; the alignment may be empty or outside the regions".into(),
        ));
    }
    let test = likelihood_ratio_test(&profile, config.alpha)?;
    let n_variant_sites = profile.variant_sites().len();

    let mut warnings: Vec<String> = Vec::new();
    if n_variant_sites == 0 {
        warnings.push("no variant evidence".into());
    }
    let mut call = test.call;
    let mut model = None;
    let mut estimate = None;
    let mut observations = None;
    if call == Call::Mixed {
        if config.n_strains == 1 {
            warnings.push("n_strains is 1; mixture fit skipped".into());
        } else {
            match build_observations(&profile, &filter_config) {
                Err(DemixError::NoVariantEvidence) => {
                    // A mixed call without heterogeneous sites cannot be
                    // quantified; report it as pure.
                    call = Call::Pure;
                    if !warnings.iter().any(|w| w == "no variant evidence") {
                        warnings.push("no variant evidence".into());
                    }
                }
                Err(e) => return Err(e),
                Ok(obs) => {
                    let k = mixture_component_count(config);
                    match em_fit(&obs, k, config.model_family, EM_TOL, EM_MAX_ITER, config.seed) {
                        Ok(outcome) => {
                            match proportions_from_model(&outcome.model, config.n_strains) {
                                Ok(est) => {
                                    warnings.push(format!(
                                        "mixture fitted with {k} {} components for {} strains",
                                        if k == config.n_strains {
                                            "direct"
                                        } else {
                                            "complement-paired"
                                        },
                                        config.n_strains
                                    ));
                                    warnings.extend(est.warnings.iter().cloned());
                                    model = Some(outcome.model);
                                    estimate = Some(est);
                                }
                                Err(e) => warnings.push(format!("proportion pairing failed: {e}")),
                            }
                        }
                        Err(e) => warnings.push(format!("mixture fit failed: {e}")),
                    }
                    observations = Some(obs);
                }
            }
        }
    }

    let sample_id = sample_id_of(sam_path);
    let report = Report {
        schema_version: SCHEMA_VERSION,
        sample_id: sample_id.clone(),
        call,
        lr_statistic: test.lr_statistic,
        threshold_c: test.threshold_c,
        alpha: test.alpha,
        epsilon0: test.epsilon0,
        epsilon1: test.epsilon1,
        p_mle: test.p,
        em_proportions: estimate.as_ref().map(|e| e.proportions.clone()),
        component_table: model.as_ref().map(|m| m.components.clone()),
        n_filtered_sites: profile.filtered_sites.len(),
        n_variant_sites,
        n_assigned_reads: 0,
        warnings,
    };

    let mut site_tsv =
        std::io::BufWriter::new(std::fs::File::create(config.output_dir.join("sites.tsv"))?);
    write_site_tsv(&mut site_tsv, &profile.filtered_sites)?;
    if let (Some(m), Some(obs)) = (&model, &observations) {
        let mut resp = std::io::BufWriter::new(std::fs::File::create(
            config.output_dir.join("mixture_responsibilities.tsv"),
        )?);
        write_responsibility_tsv(&mut resp, obs, m)?;
    }
    write_report(&config.output_dir.join("report.json"), &report)?;

    Ok(PipelineState {
        sample_id,
        reference,
        alignment,
        profile,
        test,
        model,
        estimate,
        observations,
        report,
    })
}

/// Detect whether the sample is pure or mixed; writes report.json, the
/// per-site table, and (for mixed calls) the responsibility table.
pub fn cmd_detect(config: &RunConfig, sam_path: &Path, ref_path: &Path) -> Result<Report> {
    Ok(run_detection(config, sam_path, ref_path)?.report)
}

fn write_strain_sam(
    dir: &Path,
    sample_id: &str,
    strain: usize,
    reads: &[&AlignedRead],
    reference: &FastaRecord,
) -> Result<()> {
    let path = dir.join(format!("{sample_id}.strain{}.sam", strain + 1));
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_sam(&mut out, reads, &reference.id, reference.sequence.len())
}

fn write_assignment_tsv(
    path: &Path,
    assignments: &[StrainAssignment],
    n_strains: usize,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "read_id\tstrain")?;
    for k in 0..n_strains {
        write!(out, "\tlog_posterior_{k}")?;
    }
    writeln!(out)?;
    for a in assignments {
        let strain = a
            .strain
            .map(|s| s.to_string())
            .unwrap_or_else(|| "unassigned".into());
        write!(out, "{}\t{strain}", a.read_id)?;
        match &a.posterior {
            Some(post) => {
                for p in post {
                    write!(out, "\t{:.6}", p.max(1e-300).ln())?;
                }
            }
            None => {
                for _ in 0..n_strains {
                    write!(out, "\tna")?;
                }
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Fraction of mate pairs whose two assigned reads received the same strain,
/// or `None` when no pair has both mates assigned.
fn mate_consistency(assignments: &[StrainAssignment]) -> Option<(usize, f64)> {
    let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for a in assignments {
        if let Some(s) = a.strain {
            by_id.entry(a.read_id.as_str()).or_default().push(s);
        }
    }
    let pairs: Vec<&Vec<usize>> = by_id.values().filter(|v| v.len() >= 2).collect();
    if pairs.is_empty() {
        return None;
    }
    let consistent = pairs
        .iter()
        .filter(|v| v.iter().all(|&s| s == v[0]))
        .count();
    Some((pairs.len(), consistent as f64 / pairs.len() as f64))
}

/// Full pipeline: detect, then partition reads per strain and emit one SAM
/// and one consensus sequence per strain plus the assignment table. A pure
/// call emits a single strain file identical to the input.
pub fn cmd_separate(config: &RunConfig, sam_path: &Path, ref_path: &Path) -> Result<Report> {
    let mut state = run_detection(config, sam_path, ref_path)?;
    let dir = &config.output_dir;

    let separable =
        state.report.call == Call::Mixed && state.model.is_some() && config.n_strains >= 2;
    if !separable {
        let all: Vec<&AlignedRead> = state.alignment.reads.iter().collect();
        write_strain_sam(dir, &state.sample_id, 0, &all, &state.reference)?;
        let consensus = FastaRecord {
            id: "strain1".into(),
            sequence: consensus_sequence(&all, &state.reference.sequence),
        };
        let mut out =
            std::io::BufWriter::new(std::fs::File::create(dir.join("consensus.fasta"))?);
        write_fasta(&mut out, &[consensus])?;
        return Ok(state.report);
    }

    let model = state.model.as_ref().expect("checked separable");
    let estimate = state.estimate.as_ref().expect("checked separable");
    let strain_model = strain_assignment_model(model, estimate);
    let variant_sites = state.profile.variant_sites();
    let index = VariantIndex::new(variant_sites.iter().copied());
    let mut assignments: Vec<StrainAssignment> = Vec::new();
    for read in &state.alignment.reads {
        if let Some(profile) = read_variant_profile(read, &index) {
            let assignment = match config.assignment_rule {
                AssignmentRule::Map => assign_map(&profile, &strain_model),
                AssignmentRule::BinomialVote => StrainAssignment {
                    read_id: profile.read_id.clone(),
                    strain: Some(match assign_binomial(&profile) {
                        Vote::Major => 0,
                        Vote::Minor => 1,
                    }),
                    posterior: None,
                },
            };
            assignments.push(assignment);
        }
    }
    let parts = partition_reads(&state.alignment.reads, &assignments, config.n_strains)?;
    let mut consensus_records = Vec::with_capacity(parts.len());
    for (k, part) in parts.iter().enumerate() {
        write_strain_sam(dir, &state.sample_id, k, part, &state.reference)?;
        consensus_records.push(FastaRecord {
            id: format!("strain{}", k + 1),
            sequence: consensus_sequence(part, &state.reference.sequence),
        });
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("consensus.fasta"))?);
    write_fasta(&mut out, &consensus_records)?;
    write_assignment_tsv(&dir.join("assignments.tsv"), &assignments, config.n_strains)?;

    state.report.n_assigned_reads = assignments.len();
    if let Some((n_pairs, fraction)) = mate_consistency(&assignments) {
        state.report.warnings.push(format!(
            "mate consistency: {:.1}% of {n_pairs} assigned pairs agree",
            100.0 * fraction
        ));
    }
    write_report(&dir.join("report.json"), &state.report)?;
    Ok(state.report)
}

/// Generate a synthetic sample directory (reference.fasta, reads.sam,
/// truth.json).
pub fn cmd_simulate(spec: &SyntheticSpec, out_dir: &Path) -> Result<()> {
    write_sample_dir(out_dir, spec)
}

/// Detection counts of an evaluation panel.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub true_mixed: usize,
    pub true_pure: usize,
    pub mixed_called_mixed: usize,
    pub pure_called_pure: usize,
}

/// Read-assignment score of one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionScore {
    pub sample_id: String,
    pub n_assigned: u64,
    pub n_correct: u64,
}

/// Consensus mismatches of one sample, per strain, at the positions where
/// any strain differs from the reference. Planted positions the tool never
/// analyzed (dropped by the depth or region filters) are excluded from the
/// score and counted separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusScore {
    pub sample_id: String,
    pub mismatches_per_strain: Vec<usize>,
    pub n_positions_scored: usize,
    pub n_positions_unanalyzed: usize,
}

/// Aggregated evaluation over a panel of sample directories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub n_samples: usize,
    pub detection: DetectionCounts,
    /// RMSE of the major proportion over correctly-called mixed samples.
    pub rmse_major: Option<f64>,
    pub max_major_deviation: Option<f64>,
    /// AUC of the likelihood-ratio statistic over all samples.
    pub auc: Option<f64>,
    /// Mixed samples misclassified as pure; excluded from the RMSE.
    pub misclassified_mixed: Vec<String>,
    pub confusion: Vec<ConfusionScore>,
    pub consensus: Vec<ConsensusScore>,
    pub alpha_grid: Vec<AlphaGridCell>,
    pub monotonicity_satisfied: Option<usize>,
    pub monotonicity_total: Option<usize>,
    pub samples: Vec<SampleRecord>,
    pub warnings: Vec<String>,
}

/// Map estimated strain ranks (descending proportion) onto true strain
/// indices by matching proportion ranks.
fn rank_mapping(true_props: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..true_props.len()).collect();
    idx.sort_by(|&a, &b| {
        true_props[b]
            .partial_cmp(&true_props[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx
}

fn parse_assignment_tsv(path: &Path) -> Result<Vec<StrainAssignment>> {
    let file = std::fs::File::open(path)?;
    let mut assignments = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let text = line?;
        if i == 0 || text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 2 {
            return Err(DemixError::Parse {
                line: i + 1,
                message: "assignment row needs read_id and strain columns".into(),
            });
        }
        let strain = if fields[1] == "unassigned" {
            None
        } else {
            Some(fields[1].parse::<usize>().map_err(|_| DemixError::Parse {
                line: i + 1,
                message: format!("invalid strain index '{}'", fields[1]),
            })?)
        };
        assignments.push(StrainAssignment {
            read_id: fields[0].to_string(),
            strain,
            posterior: None,
        });
    }
    Ok(assignments)
}

fn evaluate_sample_dir(
    dir: &Path,
    truth: &GroundTruth,
    summary: &mut EvaluationSummary,
    out_dir: &Path,
) -> Result<()> {
    let sample_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mapping = rank_mapping(&truth.spec.proportions);

    // Confusion matrix against read provenance, in true-strain index space.
    let assignment_path = dir.join("assignments.tsv");
    if assignment_path.exists() {
        let mut assignments = parse_assignment_tsv(&assignment_path)?;
        for a in &mut assignments {
            if let Some(k) = a.strain {
                a.strain = mapping.get(k).copied();
            }
        }
        let matrix = confusion_matrix(&assignments, &truth.read_provenance)?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(
            out_dir.join(format!("confusion_{sample_id}.tsv")),
        )?);
        for row in &matrix.counts {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{}", cells.join("\t"))?;
        }
        summary.confusion.push(ConfusionScore {
            sample_id: sample_id.clone(),
            n_assigned: matrix.total(),
            n_correct: matrix.diagonal(),
        });
    }

    // Consensus mismatches at the union of planted SNP positions the tool
    // actually analyzed.
    let consensus_path = dir.join("consensus.fasta");
    if consensus_path.exists() && truth.spec.n_strains >= 2 {
        let records = crate::fasta::read_fasta_file(&consensus_path)?;
        if records.len() == truth.spec.n_strains {
            let union = truth.all_snp_positions();
            let (scored, unanalyzed) = match read_analyzed_positions(&dir.join("sites.tsv"))? {
                Some(analyzed) => {
                    let scored: Vec<usize> = union
                        .iter()
                        .copied()
                        .filter(|p| analyzed.contains(p))
                        .collect();
                    let dropped = union.len() - scored.len();
                    (scored, dropped)
                }
                None => (union, 0),
            };
            let mut mismatches = vec![0usize; records.len()];
            for (rank, record) in records.iter().enumerate() {
                let true_strain = mapping[rank];
                mismatches[rank] = consensus_mismatches(
                    &record.sequence,
                    truth.strain_genomes[true_strain].as_bytes(),
                    &scored,
                )?;
            }
            summary.consensus.push(ConsensusScore {
                sample_id,
                mismatches_per_strain: mismatches,
                n_positions_scored: scored.len(),
                n_positions_unanalyzed: unanalyzed,
            });
        }
    }
    Ok(())
}

/// Positions listed in a per-site table, when present.
fn read_analyzed_positions(path: &Path) -> Result<Option<std::collections::HashSet<usize>>> {
    if !path.exists() {
        return Ok(None);
    }
    let file = std::fs::File::open(path)?;
    let mut positions = std::collections::HashSet::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let text = line?;
        if i == 0 || text.is_empty() {
            continue;
        }
        let first = text.split('\t').next().unwrap_or("");
        positions.insert(first.parse::<usize>().map_err(|_| DemixError::Parse {
            line: i + 1,
            message: format!("invalid position '{first}'"),
        })?);
    }
    Ok(Some(positions))
}

/// Aggregate detection, proportion, assignment, and consensus scores over a
/// panel directory of per-sample subdirectories (each with truth.json and
/// report.json, plus separate outputs when available).
pub fn cmd_evaluate(panel_dir: &Path, out_dir: &Path) -> Result<EvaluationSummary> {
    std::fs::create_dir_all(out_dir)?;
    let mut sample_dirs: Vec<PathBuf> = std::fs::read_dir(panel_dir)?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| p.is_dir())
        .collect();
    sample_dirs.sort();

    let mut summary = EvaluationSummary {
        n_samples: 0,
        detection: DetectionCounts::default(),
        rmse_major: None,
        max_major_deviation: None,
        auc: None,
        misclassified_mixed: Vec::new(),
        confusion: Vec::new(),
        consensus: Vec::new(),
        alpha_grid: Vec::new(),
        monotonicity_satisfied: None,
        monotonicity_total: None,
        samples: Vec::new(),
        warnings: Vec::new(),
    };

    let mut grid_mixed: Vec<(usize, f64, f64)> = Vec::new();
    let mut grid_pure: Vec<(usize, f64)> = Vec::new();

    for dir in &sample_dirs {
        let sample_id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let truth_path = dir.join("truth.json");
        let report_path = dir.join("report.json");
        if !truth_path.exists() || !report_path.exists() {
            summary
                .warnings
                .push(format!("skipping {sample_id}: missing truth.json or report.json"));
            continue;
        }
        let truth = read_truth(&truth_path)?;
        let report = read_report(&report_path)?;
        let true_label = if truth.spec.n_strains >= 2 {
            Call::Mixed
        } else {
            Call::Pure
        };
        summary.n_samples += 1;
        match true_label {
            Call::Mixed => summary.detection.true_mixed += 1,
            Call::Pure => summary.detection.true_pure += 1,
        }
        match (true_label, report.call) {
            (Call::Mixed, Call::Mixed) => summary.detection.mixed_called_mixed += 1,
            (Call::Pure, Call::Pure) => summary.detection.pure_called_pure += 1,
            (Call::Mixed, Call::Pure) => summary.misclassified_mixed.push(sample_id.clone()),
            _ => {}
        }
        let estimated = if report.call == Call::Mixed {
            report.em_proportions.clone()
        } else {
            None
        };
        summary.samples.push(SampleRecord {
            sample_id: sample_id.clone(),
            true_label,
            true_proportions: truth.spec.proportions.clone(),
            lr_statistic: report.lr_statistic,
            call: report.call,
            estimated_proportions: estimated,
        });

        // The alpha-calibration grid applies to one- and two-strain samples;
        // the grid distance is the pairwise strain distance of the subset.
        if truth.spec.n_strains <= 2 {
            let distance = 2 * truth.spec.snps_per_strain;
            if true_label == Call::Mixed {
                let major = truth
                    .spec
                    .proportions
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                grid_mixed.push((distance, major, report.lr_statistic));
            } else {
                grid_pure.push((distance, report.lr_statistic));
            }
        }

        evaluate_sample_dir(dir, &truth, &mut summary, out_dir)?;
    }

    // Major-proportion RMSE over correctly-called mixed samples.
    let mut true_major = Vec::new();
    let mut est_major = Vec::new();
    for record in &summary.samples {
        if record.true_label == Call::Mixed && record.call == Call::Mixed {
            if let Some(est) = &record.estimated_proportions {
                if !est.is_empty() {
                    true_major.push(
                        record
                            .true_proportions
                            .iter()
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max),
                    );
                    est_major.push(est[0]);
                }
            }
        }
    }
    if !true_major.is_empty() {
        summary.rmse_major = Some(rmse(&true_major, &est_major)?);
        summary.max_major_deviation = Some(
            true_major
                .iter()
                .zip(est_major.iter())
                .map(|(t, e)| (t - e).abs())
                .fold(0.0, f64::max),
        );
        let mut out = std::io::BufWriter::new(std::fs::File::create(
            out_dir.join("proportions.tsv"),
        )?);
        writeln!(out, "true_major\test_major")?;
        for (t, e) in true_major.iter().zip(est_major.iter()) {
            writeln!(out, "{t:.4}\t{e:.4}")?;
        }
    }

    // ROC over the likelihood-ratio statistic.
    let scores: Vec<f64> = summary.samples.iter().map(|s| s.lr_statistic).collect();
    let labels: Vec<Call> = summary.samples.iter().map(|s| s.true_label).collect();
    match roc_auc(&scores, &labels) {
        Ok((curve, auc)) => {
            summary.auc = Some(auc);
            let mut out =
                std::io::BufWriter::new(std::fs::File::create(out_dir.join("roc_curve.tsv"))?);
            writeln!(out, "fpr\ttpr")?;
            for (fpr, tpr) in curve {
                writeln!(out, "{fpr:.6}\t{tpr:.6}")?;
            }
        }
        Err(e) => summary.warnings.push(format!("ROC skipped: {e}")),
    }

    if !grid_mixed.is_empty() {
        summary.alpha_grid = alpha_calibration_grid(&grid_mixed, &grid_pure);
        let (satisfied, total) = grid_monotonicity(&summary.alpha_grid);
        summary.monotonicity_satisfied = Some(satisfied);
        summary.monotonicity_total = Some(total);
        let mut out =
            std::io::BufWriter::new(std::fs::File::create(out_dir.join("alpha_grid.tsv"))?);
        writeln!(out, "snp_distance\tmajor_proportion\tmin_alpha")?;
        for cell in &summary.alpha_grid {
            writeln!(
                out,
                "{}\t{:.2}\t{:.6}",
                cell.snp_distance, cell.major_proportion, cell.min_alpha
            )?;
        }
    }

    let file = std::fs::File::create(out_dir.join("evaluation.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad_alpha = RunConfig {
            alpha: 1.5,
            ..RunConfig::default()
        };
        assert!(bad_alpha.validate().is_err());
        let bad_strains = RunConfig {
            n_strains: 4,
            ..RunConfig::default()
        };
        assert!(bad_strains.validate().is_err());
        let vote_needs_two_strains = RunConfig {
            assignment_rule: AssignmentRule::BinomialVote,
            n_strains: 3,
            ..RunConfig::default()
        };
        assert!(vote_needs_two_strains.validate().is_err());
    }

    #[test]
    fn component_count_rules() {
        let mut config = RunConfig::default();
        assert_eq!(mixture_component_count(&config), 2);
        config.n_strains = 3;
        assert_eq!(mixture_component_count(&config), 6);
        config.direct_components = true;
        assert_eq!(mixture_component_count(&config), 3);
    }

    #[test]
    fn rank_mapping_orders_by_descending_proportion() {
        // True proportions listed minor-first: estimated rank 0 (largest)
        // maps to true strain 2.
        assert_eq!(rank_mapping(&[0.10, 0.25, 0.65]), vec![2, 1, 0]);
        assert_eq!(rank_mapping(&[0.7, 0.3]), vec![0, 1]);
        // Ties keep the earlier index first.
        assert_eq!(rank_mapping(&[0.5, 0.5]), vec![0, 1]);
    }

    #[test]
    fn mate_consistency_counts_pairs() {
        let mk = |id: &str, strain: usize| StrainAssignment {
            read_id: id.into(),
            strain: Some(strain),
            posterior: None,
        };
        assert_eq!(mate_consistency(&[mk("a", 0)]), None);
        let stats = mate_consistency(&[mk("a", 0), mk("a", 0), mk("b", 1), mk("b", 0)]).unwrap();
        assert_eq!(stats.0, 2);
        assert!((stats.1 - 0.5).abs() < 1e-12);
    }
}
