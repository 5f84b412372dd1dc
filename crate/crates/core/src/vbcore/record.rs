//! Versioned text format for fitted weights and their objective trace.

use std::fmt::Write as _;
use std::path::Path;

use super::weights::SimplexWeights;
use crate::augment::AugmentationSpec;
use crate::error::{Error, Result};

const HEADER: &str = "vbtta-fit 1";

#[derive(Clone, Debug, PartialEq)]
pub struct FitRecord {
    pub spec_hashes: Vec<u64>,
    pub weights: SimplexWeights,
    pub trace: Vec<f64>,
}

impl FitRecord {
    pub fn new(specs: &[AugmentationSpec], weights: SimplexWeights, trace: Vec<f64>) -> Result<Self> {
        crate::error::check_dim(specs.len(), weights.len())?;
        Ok(Self {
            spec_hashes: specs.iter().map(|s| s.fingerprint()).collect(),
            weights,
            trace,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\nk {}\nspecs", self.weights.len());
        for h in &self.spec_hashes {
            let _ = write!(s, " {h:016x}");
        }
        s.push_str("\nweights");
        for w in self.weights.as_slice() {
            let _ = write!(s, " {w:?}");
        }
        let _ = writeln!(s, "\ntrace {}", self.trace.len());
        for v in &self.trace {
            let _ = writeln!(s, "{v:?}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {what}") });
        let bad = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };

        let (n, l) = next("header")?;
        if l.trim() != HEADER {
            return Err(bad(n, "unsupported header"));
        }
        let (n, l) = next("k")?;
        let k: usize = l.strip_prefix("k ").and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad(n, "expected `k <count>`"))?;
        let (n, l) = next("specs")?;
        let spec_hashes = l
            .strip_prefix("specs")
            .ok_or_else(|| bad(n, "expected `specs`"))?
            .split_whitespace()
            .map(|h| u64::from_str_radix(h, 16).map_err(|_| bad(n, "bad spec hash")))
            .collect::<Result<Vec<_>>>()?;
        let (n, l) = next("weights")?;
        let w = l
            .strip_prefix("weights")
            .ok_or_else(|| bad(n, "expected `weights`"))?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(n, "bad weight")))
            .collect::<Result<Vec<_>>>()?;
        if spec_hashes.len() != k || w.len() != k {
            return Err(bad(n, "component count mismatch"));
        }
        let weights = SimplexWeights::new(w).map_err(|e| bad(n, &e.to_string()))?;
        let (n, l) = next("trace")?;
        let len: usize = l.strip_prefix("trace ").and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad(n, "expected `trace <len>`"))?;
        let mut trace = Vec::with_capacity(len);
        for _ in 0..len {
            let (n, l) = next("trace value")?;
            trace.push(l.trim().parse().map_err(|_| bad(n, "bad trace value"))?);
        }
        Ok(Self {
            spec_hashes,
            weights,
            trace,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
