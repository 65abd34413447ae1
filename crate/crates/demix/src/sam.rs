//! SAM text ingestion and emission.
//!
//! Parses the 11 mandatory columns of the SAM format into [`AlignedRead`]
//! records. Only the CIGAR operations M, I, D and S are accepted; binary
//! input must be converted to SAM text upstream (`samtools view -h`).

use std::io::{BufRead, Write};

use crate::error::{DemixError, Result};

const FLAG_PAIRED: u16 = 0x1;
const FLAG_UNMAPPED: u16 = 0x4;
const FLAG_MATE_UNMAPPED: u16 = 0x8;
const FLAG_FIRST_IN_PAIR: u16 = 0x40;
const FLAG_SECOND_IN_PAIR: u16 = 0x80;

/// Which element of a read pair a record represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MateFlag {
    First,
    Second,
}

/// CIGAR operations understood by the pileup walker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CigarOp {
    /// M: consumes reference and read.
    Match(usize),
    /// I: consumes read only.
    Insertion(usize),
    /// D: consumes reference only.
    Deletion(usize),
    /// S: consumes read only.
    SoftClip(usize),
}

impl CigarOp {
    /// Run length of the operation (always at least the parsed count).
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        match *self {
            CigarOp::Match(n) | CigarOp::Insertion(n) | CigarOp::Deletion(n) | CigarOp::SoftClip(n) => n,
        }
    }

    fn consumes_read(&self) -> bool {
        !matches!(self, CigarOp::Deletion(_))
    }

    fn symbol(&self) -> char {
        match self {
            CigarOp::Match(_) => 'M',
            CigarOp::Insertion(_) => 'I',
            CigarOp::Deletion(_) => 'D',
            CigarOp::SoftClip(_) => 'S',
        }
    }
}

/// One aligned read with the fields the pipeline needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedRead {
    pub read_id: String,
    pub mate_flag: MateFlag,
    /// 0-based leftmost reference position.
    pub ref_start: usize,
    pub cigar: Vec<CigarOp>,
    /// Bases over {A, C, G, T, N}.
    pub bases: Vec<u8>,
    /// Per-base Phred scores. Parsed but not used to weight the model.
    pub base_qualities: Vec<u8>,
    pub map_quality: u8,
    pub is_mapped: bool,
    pub mate_is_mapped: bool,
}

impl AlignedRead {
    /// Number of reference positions this alignment spans.
    pub fn reference_span(&self) -> usize {
        self.cigar
            .iter()
            .map(|op| match op {
                CigarOp::Match(n) | CigarOp::Deletion(n) => *n,
                _ => 0,
            })
            .sum()
    }
}

/// Result of parsing a SAM stream.
#[derive(Debug, Clone, Default)]
pub struct Alignment {
    /// Retained reads in input order.
    pub reads: Vec<AlignedRead>,
    /// LN of the first @SQ header line, when present.
    pub reference_length: Option<usize>,
    /// SN of the first @SQ header line, when present.
    pub reference_name: Option<String>,
}

fn parse_cigar(text: &str, line: usize) -> Result<Vec<CigarOp>> {
    if text == "*" {
        return Ok(Vec::new());
    }
    let mut ops = Vec::new();
    let mut num_start = 0;
    for (i, ch) in text.char_indices() {
        if ch.is_ascii_digit() {
            continue;
        }
        let len: usize = text[num_start..i].parse().map_err(|_| DemixError::Parse {
            line,
            message: format!("invalid CIGAR length in '{text}'"),
        })?;
        let op = match ch {
            'M' => CigarOp::Match(len),
            'I' => CigarOp::Insertion(len),
            'D' => CigarOp::Deletion(len),
            'S' => CigarOp::SoftClip(len),
            other => {
                return Err(DemixError::Parse {
                    line,
                    message: format!("unknown CIGAR op '{other}' in '{text}'"),
                })
            }
        };
        ops.push(op);
        num_start = i + 1;
    }
    if num_start != text.len() {
        return Err(DemixError::Parse {
            line,
            message: format!("trailing digits in CIGAR '{text}'"),
        });
    }
    Ok(ops)
}

fn parse_record(line_text: &str, line: usize) -> Result<AlignedRead> {
    let fields: Vec<&str> = line_text.split('\t').collect();
    if fields.len() < 11 {
        return Err(DemixError::Parse {
            line,
            message: format!("expected 11 tab-separated columns, found {}", fields.len()),
        });
    }
    let flag: u16 = fields[1].parse().map_err(|_| DemixError::Parse {
        line,
        message: format!("invalid FLAG '{}'", fields[1]),
    })?;
    let pos: usize = fields[3].parse().map_err(|_| DemixError::Parse {
        line,
        message: format!("invalid POS '{}'", fields[3]),
    })?;
    let mapq: u8 = fields[4].parse().map_err(|_| DemixError::Parse {
        line,
        message: format!("invalid MAPQ '{}'", fields[4]),
    })?;
    let cigar = parse_cigar(fields[5], line)?;
    let bases: Vec<u8> = fields[9].bytes().map(|b| b.to_ascii_uppercase()).collect();
    if bases.iter().any(|b| !matches!(b, b'A' | b'C' | b'G' | b'T' | b'N')) {
        return Err(DemixError::Parse {
            line,
            message: "SEQ contains a symbol outside {A,C,G,T,N}".into(),
        });
    }
    // QUAL '*' means absent; substitute zeros so the length invariant holds.
    let base_qualities: Vec<u8> = if fields[10] == "*" {
        vec![0; bases.len()]
    } else {
        fields[10].bytes().map(|b| b.saturating_sub(33)).collect()
    };
    if bases.len() != base_qualities.len() {
        return Err(DemixError::Parse {
            line,
            message: format!(
                "SEQ length {} does not match QUAL length {}",
                bases.len(),
                base_qualities.len()
            ),
        });
    }
    let read_consumed: usize = cigar.iter().filter(|op| op.consumes_read()).map(|op| op.len()).sum();
    if !cigar.is_empty() && read_consumed != bases.len() {
        return Err(DemixError::Parse {
            line,
            message: format!(
                "CIGAR consumes {read_consumed} read bases but SEQ has {}",
                bases.len()
            ),
        });
    }
    let mate_flag = if flag & FLAG_SECOND_IN_PAIR != 0 {
        MateFlag::Second
    } else {
        MateFlag::First
    };
    Ok(AlignedRead {
        read_id: fields[0].to_string(),
        mate_flag,
        ref_start: pos.saturating_sub(1),
        cigar,
        bases,
        base_qualities,
        map_quality: mapq,
        is_mapped: flag & FLAG_UNMAPPED == 0,
        mate_is_mapped: flag & FLAG_MATE_UNMAPPED == 0,
    })
}

/// Parse SAM text, keeping only reads where both mates are mapped and the
/// mapping quality is at least `min_map_quality`. Input order is preserved.
///
/// Header lines are skipped except for the first `@SQ` line, whose SN/LN
/// are recorded on the returned [`Alignment`].
pub fn parse_alignment<R: BufRead>(reader: R, min_map_quality: u8) -> Result<Alignment> {
    let mut out = Alignment::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.is_empty() {
            continue;
        }
        if let Some(header) = text.strip_prefix('@') {
            if header.starts_with("SQ") && out.reference_length.is_none() {
                for field in header.split('\t') {
                    if let Some(ln) = field.strip_prefix("LN:") {
                        out.reference_length = ln.parse().ok();
                    } else if let Some(sn) = field.strip_prefix("SN:") {
                        out.reference_name = Some(sn.to_string());
                    }
                }
            }
            continue;
        }
        let read = parse_record(&text, line_no)?;
        if read.is_mapped && read.mate_is_mapped && read.map_quality >= min_map_quality {
            out.reads.push(read);
        }
    }
    Ok(out)
}

pub fn parse_alignment_file(path: &std::path::Path, min_map_quality: u8) -> Result<Alignment> {
    let file = std::fs::File::open(path)?;
    parse_alignment(std::io::BufReader::new(file), min_map_quality)
}

/// Write reads as SAM text with a minimal header.
pub fn write_sam<W: Write>(
    writer: &mut W,
    reads: &[&AlignedRead],
    reference_name: &str,
    reference_length: usize,
) -> Result<()> {
    writeln!(writer, "@HD\tVN:1.6\tSO:unsorted")?;
    writeln!(writer, "@SQ\tSN:{reference_name}\tLN:{reference_length}")?;
    for read in reads {
        let mut flag = FLAG_PAIRED;
        if !read.is_mapped {
            flag |= FLAG_UNMAPPED;
        }
        if !read.mate_is_mapped {
            flag |= FLAG_MATE_UNMAPPED;
        }
        flag |= match read.mate_flag {
            MateFlag::First => FLAG_FIRST_IN_PAIR,
            MateFlag::Second => FLAG_SECOND_IN_PAIR,
        };
        let cigar: String = if read.cigar.is_empty() {
            "*".to_string()
        } else {
            read.cigar
                .iter()
                .map(|op| format!("{}{}", op.len(), op.symbol()))
                .collect()
        };
        let qual: String = read.base_qualities.iter().map(|q| (q + 33) as char).collect();
        writeln!(
            writer,
            "{}\t{}\t{}\t{}\t{}\t{}\t=\t{}\t0\t{}\t{}",
            read.read_id,
            flag,
            reference_name,
            read.ref_start + 1,
            read.map_quality,
            cigar,
            read.ref_start + 1,
            String::from_utf8_lossy(&read.bases),
            qual,
        )?;
    }
    Ok(())
}
