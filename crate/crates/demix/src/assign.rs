//! Classification of variant-bearing reads to strains.
//!
//! The closed-form two-strain rules vote with the read's supporting counts
//! (unweighted) or supporting frequencies (depth-normalized); the general
//! rule is naive-Bayes MAP against the fitted mixture components. Reads
//! without variant sites stay unassigned and flow into every strain output.

use std::collections::HashMap;

use crate::error::{DemixError, Result};
use crate::math::log_sum_exp;
use crate::mixture::{ModelFamily, StrainModel};
use crate::pileup::{base_index, count_bases, SiteFeature};
use crate::sam::{AlignedRead, CigarOp};

/// One variant site covered by a read: the site-level count of the read's
/// own base, the site depth, and the corresponding percentage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSite {
    pub position: usize,
    /// Count of the read's base at this site (x), 0 < x <= depth.
    pub supporting_count: u32,
    pub depth: u32,
    /// 100 * supporting_count / depth.
    pub base_percent: f64,
}

/// The variant sites a read covers, in ascending position order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadVariantProfile {
    pub read_id: String,
    pub sites: Vec<ProfileSite>,
}

/// Decision of the closed-form two-strain rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vote {
    Major,
    Minor,
}

/// Strain label for one read. `strain == None` means unassigned.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainAssignment {
    pub read_id: String,
    pub strain: Option<usize>,
    /// Posterior over strains (MAP rule only); sums to 1.
    pub posterior: Option<Vec<f64>>,
}

/// Position-keyed lookup over the variant sites.
pub struct VariantIndex<'a> {
    map: HashMap<usize, &'a SiteFeature>,
}

impl<'a> VariantIndex<'a> {
    pub fn new<I>(sites: I) -> Self
    where
        I: IntoIterator<Item = &'a SiteFeature>,
    {
        VariantIndex {
            map: sites.into_iter().map(|s| (s.position, s)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Collect the variant sites a read overlaps with a non-deleted, non-N base.
///
/// Returns `None` for reads with zero mapping quality or reads covering no
/// variant site; those remain unassigned.
pub fn read_variant_profile(
    read: &AlignedRead,
    variant_sites: &VariantIndex<'_>,
) -> Option<ReadVariantProfile> {
    if read.map_quality == 0 {
        return None;
    }
    let mut sites = Vec::new();
    let mut ref_pos = read.ref_start;
    let mut read_pos = 0usize;
    for op in &read.cigar {
        match *op {
            CigarOp::Match(len) => {
                for _ in 0..len {
                    if let Some(site) = variant_sites.map.get(&ref_pos) {
                        if let Some(b) = read.bases.get(read_pos).and_then(|&b| base_index(b)) {
                            let x = site.counts[b];
                            if x > 0 {
                                sites.push(ProfileSite {
                                    position: ref_pos,
                                    supporting_count: x,
                                    depth: site.depth,
                                    base_percent: site.percent[b],
                                });
                            }
                        }
                    }
                    ref_pos += 1;
                    read_pos += 1;
                }
            }
            CigarOp::Insertion(len) | CigarOp::SoftClip(len) => read_pos += len,
            CigarOp::Deletion(len) => ref_pos += len,
        }
    }
    if sites.is_empty() {
        None
    } else {
        Some(ReadVariantProfile {
            read_id: read.read_id.clone(),
            sites,
        })
    }
}

/// Unweighted vote: major iff sum(2x - d) >= 0; ties go to the major strain.
pub fn assign_binomial(profile: &ReadVariantProfile) -> Vote {
    let sum: i64 = profile
        .sites
        .iter()
        .map(|s| 2 * s.supporting_count as i64 - s.depth as i64)
        .sum();
    if sum >= 0 {
        Vote::Major
    } else {
        Vote::Minor
    }
}

/// Depth-normalized vote: major iff sum(2x/d - 1) >= 0; ties go to the
/// major strain.
pub fn assign_gaussian_vote(profile: &ReadVariantProfile) -> Vote {
    let sum: f64 = profile
        .sites
        .iter()
        .map(|s| 2.0 * s.supporting_count as f64 / s.depth as f64 - 1.0)
        .sum();
    // Exact ties accumulate rounding noise of ~1e-16 per site; any true
    // nonzero vote is at least 1/depth, far above this tolerance.
    if sum >= -VOTE_TIE_EPS {
        Vote::Major
    } else {
        Vote::Minor
    }
}

const VOTE_TIE_EPS: f64 = 1e-9;

/// Log density of one normalized value under a component (all quantities on
/// the 0..1 scale; the strain model was built with means normalized so the
/// read's base fractions and the component means share that scale).
fn ln_component_density(
    family: ModelFamily,
    component: &crate::mixture::Component,
    site: &ProfileSite,
) -> f64 {
    let x = site.base_percent / 100.0;
    let mu = component.mu / 100.0;
    match family {
        ModelFamily::Gaussian => {
            let sigma = component.sigma / 100.0;
            let z = (x - mu) / sigma;
            -sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
        }
        ModelFamily::Binomial => {
            let d = site.depth as u64;
            let s = site.supporting_count as u64;
            let q = mu.clamp(1e-9, 1.0 - 1e-9);
            crate::math::ln_binomial(d, s) + s as f64 * q.ln() + (d - s) as f64 * (1.0 - q).ln()
        }
    }
}

/// Naive-Bayes MAP assignment against the per-strain densities.
///
/// Each strain's per-site density is the weighted mixture over its component
/// set (its own frequency cluster plus the other strains' complements).
/// Ties go to the earlier strain (larger proportion); if every density
/// underflows the read falls back to the largest-prior strain.
pub fn assign_map(profile: &ReadVariantProfile, model: &StrainModel) -> StrainAssignment {
    let k = model.n_strains();
    let mut log_post = vec![0.0; k];
    for (j, strain) in model.strains.iter().enumerate() {
        let mut lp = strain.prior.ln();
        let mut terms = vec![0.0; strain.components.len()];
        for site in &profile.sites {
            for (t, component) in terms.iter_mut().zip(&strain.components) {
                *t = component.weight.ln() + ln_component_density(model.family, component, site);
            }
            lp += log_sum_exp(&terms);
        }
        log_post[j] = lp;
    }

    // Strains are ordered by descending proportion, so keeping the first
    // maximum breaks ties toward the larger strain; the tolerance absorbs
    // rounding noise on exact ties.
    let mut best = 0usize;
    for j in 1..k {
        if log_post[j] > log_post[best] + VOTE_TIE_EPS {
            best = j;
        }
    }
    if !log_post[best].is_finite() {
        eprintln!(
            "warning: read {}: all strain densities underflowed, assigning to the largest-prior strain",
            profile.read_id
        );
        let mut by_prior = 0usize;
        for j in 1..k {
            if model.strains[j].prior > model.strains[by_prior].prior {
                by_prior = j;
            }
        }
        let priors: Vec<f64> = model.strains.iter().map(|s| s.prior).collect();
        let total: f64 = priors.iter().sum();
        return StrainAssignment {
            read_id: profile.read_id.clone(),
            strain: Some(by_prior),
            posterior: Some(priors.iter().map(|p| p / total).collect()),
        };
    }
    let lse = log_sum_exp(&log_post);
    let posterior: Vec<f64> = log_post.iter().map(|lp| (lp - lse).exp()).collect();
    StrainAssignment {
        read_id: profile.read_id.clone(),
        strain: Some(best),
        posterior: Some(posterior),
    }
}

/// Split reads into per-strain lists: strain k receives the reads assigned
/// to k plus every unassigned read, preserving input order.
///
/// Assignments are matched to reads by id, consumed in input order, so mate
/// pairs sharing an id are handled independently.
pub fn partition_reads<'a>(
    reads: &'a [AlignedRead],
    assignments: &[StrainAssignment],
    n_strains: usize,
) -> Result<Vec<Vec<&'a AlignedRead>>> {
    let mut by_id: HashMap<&str, std::collections::VecDeque<&StrainAssignment>> = HashMap::new();
    for a in assignments {
        if let Some(strain) = a.strain {
            if strain >= n_strains {
                return Err(DemixError::InvalidInput(format!(
                    "assignment of read {} names strain {strain} but only {n_strains} strains exist",
                    a.read_id
                )));
            }
        }
        by_id.entry(a.read_id.as_str()).or_default().push_back(a);
    }
    let mut out: Vec<Vec<&AlignedRead>> = vec![Vec::new(); n_strains];
    for read in reads {
        let assignment = by_id
            .get_mut(read.read_id.as_str())
            .and_then(|queue| queue.pop_front());
        match assignment.and_then(|a| a.strain) {
            Some(k) => out[k].push(read),
            None => {
                for bucket in &mut out {
                    bucket.push(read);
                }
            }
        }
    }
    Ok(out)
}

/// Majority-base consensus over a strain's reads.
///
/// Positions with no coverage take the reference base; ties go to the
/// reference base when it is among the tied bases, otherwise to the first
/// base in A < C < G < T order.
pub fn consensus_sequence(strain_reads: &[&AlignedRead], reference: &[u8]) -> Vec<u8> {
    let counts = count_bases(strain_reads.iter().copied(), reference.len());
    reference
        .iter()
        .zip(counts.iter())
        .map(|(&ref_base, site)| {
            let max = *site.iter().max().unwrap();
            if max == 0 {
                return ref_base;
            }
            if let Some(ri) = base_index(ref_base) {
                if site[ri] == max {
                    return ref_base;
                }
            }
            let best = site.iter().position(|&c| c == max).unwrap();
            crate::pileup::BASES[best]
        })
        .collect()
}
