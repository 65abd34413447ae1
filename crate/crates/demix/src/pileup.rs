//! Per-position base counting, feature vectors, and site filtering.
//!
//! Walks each read's CIGAR to build per-position base counts, converts them
//! to percentage feature vectors, and applies the region, depth, and noisy-
//! variant filters that define the data the hypothesis test runs on.

use std::io::Write;

use crate::error::{DemixError, Result};
use crate::sam::{AlignedRead, CigarOp};

/// Fixed base order used everywhere: A < C < G < T.
pub const BASES: [u8; 4] = *b"ACGT";

/// Index of a base in [`BASES`], or `None` for N.
pub fn base_index(base: u8) -> Option<usize> {
    match base {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

/// Feature vector for one reference position: the four base percentages plus
/// depth, alongside the raw counts they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteFeature {
    /// 0-based reference position.
    pub position: usize,
    /// Raw base counts in A, C, G, T order. N bases and deletions count
    /// toward neither the counts nor the depth.
    pub counts: [u32; 4],
    /// Total depth (sum of counts).
    pub depth: u32,
    /// Base percentages in A, C, G, T order; sums to 100 when depth > 0.
    pub percent: [f64; 4],
}

impl SiteFeature {
    fn from_counts(position: usize, counts: [u32; 4]) -> Self {
        let depth: u32 = counts.iter().sum();
        let mut percent = [0.0; 4];
        if depth > 0 {
            for (p, &c) in percent.iter_mut().zip(counts.iter()) {
                *p = 100.0 * c as f64 / depth as f64;
            }
        }
        SiteFeature {
            position,
            counts,
            depth,
            percent,
        }
    }

    /// Base indices sorted by count descending, ties broken A < C < G < T.
    pub fn ranked_bases(&self) -> [usize; 4] {
        let mut idx = [0usize, 1, 2, 3];
        idx.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        idx
    }

    /// Count of the second most frequent base.
    pub fn second_count(&self) -> u32 {
        self.counts[self.ranked_bases()[1]]
    }

    /// Percentage of the second most frequent base.
    pub fn second_percent(&self) -> f64 {
        self.percent[self.ranked_bases()[1]]
    }

    /// True when more than one base is observed.
    pub fn is_heterogeneous(&self) -> bool {
        self.second_count() > 0
    }
}

/// Half-open 0-based interval [start, end).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn contains(&self, pos: usize) -> bool {
        pos >= self.start && pos < self.end
    }
}

/// Filter settings for profile construction.
#[derive(Debug, Clone, Copy)]
pub struct FilterConfig {
    /// Depth filter coefficient: sites below `kappa * mean_depth` are
    /// dropped. Zero disables the depth filter.
    pub kappa: f64,
    /// Percentage below which a second allele marks the site as noisy.
    pub noise_threshold: f64,
    /// Reads below this mapping quality are excluded at parse time.
    pub min_map_quality: u8,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            kappa: 0.70,
            noise_threshold: 10.0,
            min_map_quality: 1,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(DemixError::InvalidInput(format!(
                "kappa must lie in [0, 1], got {}",
                self.kappa
            )));
        }
        if !(0.0..50.0).contains(&self.noise_threshold) {
            return Err(DemixError::InvalidInput(format!(
                "noise threshold must lie in [0, 50), got {}",
                self.noise_threshold
            )));
        }
        Ok(())
    }
}

/// The filtered per-site data the hypothesis test and mixture model consume.
#[derive(Debug, Clone)]
pub struct SampleProfile {
    /// All sites with depth > 0, ascending by position.
    pub sites: Vec<SiteFeature>,
    /// Mean depth over sites inside the analyzed regions, computed before
    /// depth filtering.
    pub mean_depth: f64,
    /// Sites retained after the region, depth, and noise filters.
    pub filtered_sites: Vec<SiteFeature>,
    /// Analyzed intervals.
    pub regions: Vec<Interval>,
}

impl SampleProfile {
    /// Filtered sites where more than one base is observed. After the noisy
    /// filter these are exactly the sites whose minor allele clears the
    /// noise threshold.
    pub fn variant_sites(&self) -> Vec<&SiteFeature> {
        self.filtered_sites
            .iter()
            .filter(|s| s.is_heterogeneous())
            .collect()
    }
}

/// Accumulate per-position base counts for reads against a reference of the
/// given length. Positions outside `[0, ref_length)` are ignored.
pub fn count_bases<'a, I>(reads: I, ref_length: usize) -> Vec<[u32; 4]>
where
    I: IntoIterator<Item = &'a AlignedRead>,
{
    let mut counts = vec![[0u32; 4]; ref_length];
    for read in reads {
        let mut ref_pos = read.ref_start;
        let mut read_pos = 0usize;
        for op in &read.cigar {
            match *op {
                CigarOp::Match(len) => {
                    for _ in 0..len {
                        if ref_pos < ref_length && read_pos < read.bases.len() {
                            if let Some(b) = base_index(read.bases[read_pos]) {
                                counts[ref_pos][b] += 1;
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
    }
    counts
}

/// Build one feature vector (base percentages plus depth) per covered
/// position.
///
/// Insertions and soft clips consume read bases only, deletions consume
/// reference only, and N bases are not counted toward any base.
pub fn build_feature_vectors(reads: &[AlignedRead], ref_length: usize) -> Vec<SiteFeature> {
    count_bases(reads.iter(), ref_length)
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().any(|&n| n > 0))
        .map(|(pos, c)| SiteFeature::from_counts(pos, c))
        .collect()
}

/// Apply the region, depth, and noisy-variant filters.
///
/// The mean depth is computed over all sites inside the regions before any
/// depth filtering. A site is kept when its depth is at least
/// `kappa * mean_depth` and its second allele is either absent or at least
/// the noise threshold.
pub fn filter_profile(
    sites: Vec<SiteFeature>,
    regions: Vec<Interval>,
    config: &FilterConfig,
) -> Result<SampleProfile> {
    config.validate()?;
    if regions.is_empty() {
        return Err(DemixError::InvalidInput(
            "no regions supplied; pass at least one interval or the whole-genome interval".into(),
        ));
    }
    let in_region = |pos: usize| regions.iter().any(|r| r.contains(pos));
    let region_sites: Vec<&SiteFeature> = sites.iter().filter(|s| in_region(s.position)).collect();
    let mean_depth = if region_sites.is_empty() {
        0.0
    } else {
        region_sites.iter().map(|s| s.depth as f64).sum::<f64>() / region_sites.len() as f64
    };
    let min_depth = config.kappa * mean_depth;
    let filtered_sites: Vec<SiteFeature> = region_sites
        .into_iter()
        .filter(|s| (s.depth as f64) >= min_depth)
        .filter(|s| {
            let second = s.second_percent();
            !(second > 0.0 && second < config.noise_threshold)
        })
        .cloned()
        .collect();
    Ok(SampleProfile {
        sites,
        mean_depth,
        filtered_sites,
        regions,
    })
}

/// Parse a GFF3 annotation stream into sorted, merged half-open intervals.
///
/// Columns 4 and 5 are the 1-based inclusive start and end; lines starting
/// with `#` are skipped.
pub fn parse_regions<R: std::io::BufRead>(reader: R) -> Result<Vec<Interval>> {
    let mut intervals = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 5 {
            return Err(DemixError::Parse {
                line: line_no,
                message: format!("expected at least 5 GFF columns, found {}", fields.len()),
            });
        }
        let start: usize = fields[3].trim().parse().map_err(|_| DemixError::Parse {
            line: line_no,
            message: format!("non-integer start coordinate '{}'", fields[3]),
        })?;
        let end: usize = fields[4].trim().parse().map_err(|_| DemixError::Parse {
            line: line_no,
            message: format!("non-integer end coordinate '{}'", fields[4]),
        })?;
        if start > end {
            return Err(DemixError::Parse {
                line: line_no,
                message: format!("start {start} exceeds end {end}"),
            });
        }
        if start == 0 {
            return Err(DemixError::Parse {
                line: line_no,
                message: "GFF coordinates are 1-based; start 0 is invalid".into(),
            });
        }
        intervals.push(Interval {
            start: start - 1,
            end,
        });
    }
    Ok(merge_intervals(intervals))
}

pub fn parse_regions_file(path: &std::path::Path) -> Result<Vec<Interval>> {
    let file = std::fs::File::open(path)?;
    parse_regions(std::io::BufReader::new(file))
}

fn merge_intervals(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.sort_by_key(|iv| (iv.start, iv.end));
    let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Write the per-site table: position, four base percentages, depth.
pub fn write_site_tsv<W: Write>(writer: &mut W, sites: &[SiteFeature]) -> Result<()> {
    writeln!(writer, "position\tA_pct\tC_pct\tG_pct\tT_pct\tdepth")?;
    for s in sites {
        writeln!(
            writer,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            s.position, s.percent[0], s.percent[1], s.percent[2], s.percent[3], s.depth
        )?;
    }
    Ok(())
}
