//! Minimal FASTA reading and writing for single-reference workflows.

use std::io::{BufRead, Write};

use crate::error::{DemixError, Result};

/// One FASTA record: identifier (text after `>`, up to first whitespace) and sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaRecord {
    pub id: String,
    pub sequence: Vec<u8>,
}

/// Parse all records from a FASTA stream. Sequences are upper-cased.
pub fn read_fasta<R: BufRead>(reader: R) -> Result<Vec<FastaRecord>> {
    let mut records: Vec<FastaRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(DemixError::Parse {
                    line: idx + 1,
                    message: "empty FASTA header".into(),
                });
            }
            records.push(FastaRecord {
                id,
                sequence: Vec::new(),
            });
        } else {
            let rec = records.last_mut().ok_or_else(|| DemixError::Parse {
                line: idx + 1,
                message: "sequence data before any FASTA header".into(),
            })?;
            rec.sequence
                .extend(line.bytes().map(|b| b.to_ascii_uppercase()));
        }
    }
    Ok(records)
}

pub fn read_fasta_file(path: &std::path::Path) -> Result<Vec<FastaRecord>> {
    let file = std::fs::File::open(path)?;
    read_fasta(std::io::BufReader::new(file))
}

/// Write records with sequence lines wrapped at 70 columns.
pub fn write_fasta<W: Write>(writer: &mut W, records: &[FastaRecord]) -> Result<()> {
    for rec in records {
        writeln!(writer, ">{}", rec.id)?;
        for chunk in rec.sequence.chunks(70) {
            writer.write_all(chunk)?;
            writeln!(writer)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            FastaRecord {
                id: "ref".into(),
                sequence: b"ACGTACGTACGT".to_vec(),
            },
            FastaRecord {
                id: "alt".into(),
                sequence: vec![b'A'; 200],
            },
        ];
        let mut buf = Vec::new();
        write_fasta(&mut buf, &recs).unwrap();
        let parsed = read_fasta(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(parsed, recs);
    }

    #[test]
    fn lowercase_is_normalized() {
        let parsed = read_fasta(std::io::BufReader::new(&b">x\nacgt\n"[..])).unwrap();
        assert_eq!(parsed[0].sequence, b"ACGT");
    }

    #[test]
    fn data_before_header_is_an_error() {
        assert!(read_fasta(std::io::BufReader::new(&b"ACGT\n"[..])).is_err());
    }
}
