//! Test-injection fixtures: forced bit/basis sequences in the newline
//! format `index,alice_bit,alice_basis,bob_basis`.

use super::{Basis, Bb84Error};

/// Forced per-qubit inputs for [`super::transmit_and_measure_injected`].
#[derive(Clone, Debug)]
pub struct Injection {
    pub alice_bits: Vec<bool>,
    pub alice_bases: Vec<Basis>,
    pub bob_bases: Vec<Basis>,
}

impl Injection {
    pub fn new(alice_bits: Vec<bool>, alice_bases: Vec<Basis>, bob_bases: Vec<Basis>) -> Result<Self, Bb84Error> {
        if alice_bits.len() != alice_bases.len() || alice_bits.len() != bob_bases.len() {
            return Err(Bb84Error::InvalidArgument(
                "injection sequences must have identical length".into(),
            ));
        }
        Ok(Self {
            alice_bits,
            alice_bases,
            bob_bases,
        })
    }

    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }

    /// Parses `index,alice_bit,alice_basis,bob_basis` records. Blank lines
    /// and `#` comments are skipped; bases are `+` (rectilinear) and `×`
    /// (diagonal, ASCII `x` accepted); indices must ascend.
    pub fn parse(text: &str) -> Result<Self, Bb84Error> {
        let mut alice_bits = Vec::new();
        let mut alice_bases = Vec::new();
        let mut bob_bases = Vec::new();
        let mut last_index: Option<u64> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Bb84Error::InvalidArgument(format!(
                    "fixture line {}: expected 4 comma-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let index: u64 = fields[0].parse().map_err(|_| {
                Bb84Error::InvalidArgument(format!("fixture line {}: bad index", lineno + 1))
            })?;
            if let Some(prev) = last_index {
                if index <= prev {
                    return Err(Bb84Error::InvalidArgument(format!(
                        "fixture line {}: indices must ascend",
                        lineno + 1
                    )));
                }
            }
            last_index = Some(index);
            alice_bits.push(parse_bit(fields[1], lineno)?);
            alice_bases.push(parse_basis(fields[2], lineno)?);
            bob_bases.push(parse_basis(fields[3], lineno)?);
        }
        if alice_bits.is_empty() {
            return Err(Bb84Error::InvalidArgument("fixture contains no records".into()));
        }
        Ok(Self {
            alice_bits,
            alice_bases,
            bob_bases,
        })
    }
}

fn parse_bit(field: &str, lineno: usize) -> Result<bool, Bb84Error> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Bb84Error::InvalidArgument(format!(
            "fixture line {}: bit must be 0 or 1, got {other:?}",
            lineno + 1
        ))),
    }
}

fn parse_basis(field: &str, lineno: usize) -> Result<Basis, Bb84Error> {
    match field {
        "+" => Ok(Basis::Rectilinear),
        "×" | "x" => Ok(Basis::Diagonal),
        other => Err(Bb84Error::InvalidArgument(format!(
            "fixture line {}: basis must be + or ×, got {other:?}",
            lineno + 1
        ))),
    }
}
