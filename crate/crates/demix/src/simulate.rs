//! Synthetic single- and multi-strain samples with known ground truth.
//!
//! Strain genomes are the reference plus random base substitutions; reads
//! are emitted pre-aligned at their true positions with a uniform per-base
//! substitution error. Everything is deterministic given the seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::fasta::{write_fasta, FastaRecord};
use crate::sam::{AlignedRead, CigarOp, MateFlag};

/// Phred score written for every simulated base.
const PLACEHOLDER_QUALITY: u8 = 40;
const SIMULATED_MAPQ: u8 = 60;

/// Parameters of one synthetic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub ref_length: usize,
    pub n_strains: usize,
    pub snps_per_strain: usize,
    /// Strain proportions; must sum to 1.
    pub proportions: Vec<f64>,
    /// Target mean depth of coverage.
    pub depth: f64,
    pub read_length: usize,
    /// Per-base substitution probability.
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            ref_length: 50_000,
            n_strains: 2,
            snps_per_strain: 100,
            proportions: vec![0.7, 0.3],
            depth: 100.0,
            read_length: 150,
            error_rate: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_strains == 0 || self.n_strains > 3 {
            return Err(DemixError::InvalidInput(format!(
                "n_strains must be 1..=3, got {}",
                self.n_strains
            )));
        }
        if self.proportions.len() != self.n_strains {
            return Err(DemixError::InvalidInput(format!(
                "{} proportions supplied for {} strains",
                self.proportions.len(),
                self.n_strains
            )));
        }
        let total: f64 = self.proportions.iter().sum();
        if (total - 1.0).abs() > 1e-6 || self.proportions.iter().any(|&p| p <= 0.0) {
            return Err(DemixError::InvalidInput(format!(
                "proportions must be positive and sum to 1, got {:?}",
                self.proportions
            )));
        }
        if self.snps_per_strain == 0 || self.snps_per_strain > self.ref_length {
            return Err(DemixError::InvalidInput(
                "snps_per_strain must be in 1..=ref_length".into(),
            ));
        }
        if self.read_length == 0 || self.read_length > self.ref_length {
            return Err(DemixError::InvalidInput(
                "read_length must be in 1..=ref_length".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.error_rate) {
            return Err(DemixError::InvalidInput(format!(
                "error_rate must lie in [0, 0.5), got {}",
                self.error_rate
            )));
        }
        if self.depth <= 0.0 {
            return Err(DemixError::InvalidInput("depth must be positive".into()));
        }
        Ok(())
    }
}

/// One planted substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrainSnp {
    pub position: usize,
    pub alt: char,
}

/// Everything an evaluation needs to score a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub strain_genomes: Vec<String>,
    /// Per strain, the planted substitutions.
    pub snp_positions: Vec<Vec<StrainSnp>>,
    /// read_id -> strain index; covers every generated read exactly once.
    pub read_provenance: BTreeMap<String, usize>,
}

impl GroundTruth {
    /// Positions where any strain differs from the reference.
    pub fn all_snp_positions(&self) -> Vec<usize> {
        let mut positions: Vec<usize> = self
            .snp_positions
            .iter()
            .flatten()
            .map(|s| s.position)
            .collect();
        positions.sort_unstable();
        positions.dedup();
        positions
    }
}

const REF_BASES: [u8; 4] = *b"ACGT";

/// Deterministic pseudo-random reference sequence.
pub fn generate_reference(length: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length)
        .map(|_| REF_BASES[rng.gen_range(0usize..4)])
        .collect()
}

/// Plant `n_snps` substitutions at distinct uniform positions; each replaces
/// the base with a uniformly chosen different base.
pub fn mutate_strain(reference: &[u8], n_snps: usize, seed: u64) -> (Vec<u8>, Vec<StrainSnp>) {
    assert!(n_snps <= reference.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut genome = reference.to_vec();
    let mut chosen = std::collections::HashSet::with_capacity(n_snps);
    while chosen.len() < n_snps {
        chosen.insert(rng.gen_range(0usize..reference.len()));
    }
    let mut positions: Vec<usize> = chosen.into_iter().collect();
    positions.sort_unstable();
    let snps: Vec<StrainSnp> = positions
        .into_iter()
        .map(|position| {
            let current = genome[position];
            let others: Vec<u8> = REF_BASES.iter().copied().filter(|&b| b != current).collect();
            let alt = others[rng.gen_range(0usize..3)];
            genome[position] = alt;
            StrainSnp {
                position,
                alt: alt as char,
            }
        })
        .collect();
    (genome, snps)
}

/// Binomial sample by CDF inversion; fine for the small n*p used here.
fn sample_binomial<R: Rng>(rng: &mut R, n: usize, p: f64) -> usize {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let u: f64 = rng.gen();
    let ratio = p / (1.0 - p);
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cum = pmf;
    let mut k = 0usize;
    while u > cum && k < n {
        pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
        cum += pmf;
        k += 1;
    }
    k
}

/// Generate pre-aligned reads from the strain genomes.
///
/// The read count is depth * ref_length / read_length; each read picks its
/// strain by the mixture proportions, a uniform start, and flips each base
/// to a uniform different base with probability `error_rate` (error count
/// drawn per read, positions distinct).
pub fn simulate_reads(
    genomes: &[Vec<u8>],
    spec: &SyntheticSpec,
    seed: u64,
) -> (Vec<AlignedRead>, BTreeMap<String, usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_reads = (spec.depth * spec.ref_length as f64 / spec.read_length as f64).round() as usize;
    let max_start = spec.ref_length - spec.read_length;
    let mut reads = Vec::with_capacity(n_reads);
    let mut provenance = BTreeMap::new();
    for i in 0..n_reads {
        let u: f64 = rng.gen();
        let mut strain = spec.n_strains - 1;
        let mut cum = 0.0;
        for (k, &p) in spec.proportions.iter().enumerate() {
            cum += p;
            if u < cum {
                strain = k;
                break;
            }
        }
        let start = rng.gen_range(0usize..=max_start);
        let mut bases = genomes[strain][start..start + spec.read_length].to_vec();
        let n_errors = sample_binomial(&mut rng, spec.read_length, spec.error_rate);
        if n_errors > 0 {
            let mut chosen = std::collections::HashSet::with_capacity(n_errors);
            while chosen.len() < n_errors {
                chosen.insert(rng.gen_range(0usize..spec.read_length));
            }
            let mut positions: Vec<usize> = chosen.into_iter().collect();
            positions.sort_unstable();
            for pos in positions {
                let current = bases[pos];
                let others: Vec<u8> =
                    REF_BASES.iter().copied().filter(|&b| b != current).collect();
                bases[pos] = others[rng.gen_range(0usize..3)];
            }
        }
        let read_id = format!("read{i:07}");
        provenance.insert(read_id.clone(), strain);
        reads.push(AlignedRead {
            read_id,
            mate_flag: MateFlag::First,
            ref_start: start,
            cigar: vec![CigarOp::Match(spec.read_length)],
            base_qualities: vec![PLACEHOLDER_QUALITY; bases.len()],
            bases,
            map_quality: SIMULATED_MAPQ,
            is_mapped: true,
            mate_is_mapped: true,
        });
    }
    (reads, provenance)
}

/// Build a full sample: reference, mutated strain genomes, reads, provenance.
pub fn generate_sample(spec: &SyntheticSpec) -> Result<(Vec<u8>, GroundTruth, Vec<AlignedRead>)> {
    spec.validate()?;
    let mut seeder = ChaCha8Rng::seed_from_u64(spec.seed);
    let ref_seed: u64 = seeder.gen();
    let strain_seeds: Vec<u64> = (0..spec.n_strains).map(|_| seeder.gen()).collect();
    let reads_seed: u64 = seeder.gen();

    let reference = generate_reference(spec.ref_length, ref_seed);
    let mut strain_genomes = Vec::with_capacity(spec.n_strains);
    let mut snp_positions = Vec::with_capacity(spec.n_strains);
    for &s in &strain_seeds {
        let (genome, snps) = mutate_strain(&reference, spec.snps_per_strain, s);
        strain_genomes.push(genome);
        snp_positions.push(snps);
    }
    let (reads, read_provenance) = simulate_reads(&strain_genomes, spec, reads_seed);
    let truth = GroundTruth {
        spec: spec.clone(),
        strain_genomes: strain_genomes
            .iter()
            .map(|g| String::from_utf8(g.clone()).expect("bases are ASCII"))
            .collect(),
        snp_positions,
        read_provenance,
    };
    Ok((reference, truth, reads))
}

/// Write reference.fasta, reads.sam, and truth.json into `dir`.
pub fn write_sample_dir(dir: &Path, spec: &SyntheticSpec) -> Result<()> {
    let (reference, truth, reads) = generate_sample(spec)?;
    std::fs::create_dir_all(dir)?;

    let mut fasta = std::io::BufWriter::new(std::fs::File::create(dir.join("reference.fasta"))?);
    write_fasta(
        &mut fasta,
        &[FastaRecord {
            id: "ref".into(),
            sequence: reference,
        }],
    )?;

    let mut sam = std::io::BufWriter::new(std::fs::File::create(dir.join("reads.sam"))?);
    let refs: Vec<&AlignedRead> = reads.iter().collect();
    crate::sam::write_sam(&mut sam, &refs, "ref", spec.ref_length)?;

    let json = std::fs::File::create(dir.join("truth.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(json), &truth)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
