use crate::error::{Result, SimError};
use crate::numeric::harmonic_mean;
use crate::Vector;

/// Per-worker gradient accumulators `(Gᵢ, bᵢ)` plus the stamp of the
/// iterate every gradient in `Gᵢ` was computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    g: Vec<Vector>,
    b: Vec<u64>,
    stamps: Vec<Option<u64>>,
}

impl GradientTable {
    pub fn new(n: usize, d: usize) -> Self {
        GradientTable { g: vec![Vector::zeros(d); n], b: vec![0; n], stamps: vec![None; n] }
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// `Gᵢ += g`, `bᵢ += 1`. All gradients in one entry must share a stamp.
    pub fn add(&mut self, i: usize, grad: &Vector, stamp: u64) -> Result<()> {
        match self.stamps[i] {
            Some(s) if s != stamp => {
                return Err(SimError::Invariant(format!(
                    "entry {i} holds gradients at iterate {s}, got one at iterate {stamp}"
                )))
            }
            _ => self.stamps[i] = Some(stamp),
        }
        self.g[i] += grad;
        self.b[i] += 1;
        Ok(())
    }

    /// Replaces entry `i` with a single gradient.
    pub fn overwrite(&mut self, i: usize, grad: Vector, stamp: u64) {
        self.g[i] = grad;
        self.b[i] = 1;
        self.stamps[i] = Some(stamp);
    }

    pub fn counts(&self) -> &[u64] {
        &self.b
    }

    pub fn stamp(&self, i: usize) -> Option<u64> {
        self.stamps[i]
    }

    pub fn accumulator(&self, i: usize) -> &Vector {
        &self.g[i]
    }

    pub fn is_filled(&self, i: usize) -> bool {
        self.b[i] > 0
    }

    pub fn all_filled(&self) -> bool {
        self.b.iter().all(|&b| b > 0)
    }

    pub fn is_empty(&self) -> bool {
        self.b.iter().all(|&b| b == 0)
    }

    /// `Bᵏ = ((1/n) Σ 1/bᵢ)⁻¹`, zero while some entry is empty.
    pub fn harmonic_batch(&self) -> f64 {
        harmonic_mean(&self.b)
    }

    /// `δᵢ = k − stampᵢ` for every entry.
    pub fn delays(&self, k: u64) -> Result<Vec<u64>> {
        self.stamps
            .iter()
            .enumerate()
            .map(|(i, s)| match s {
                Some(s) if *s <= k => Ok(k - s),
                Some(s) => Err(SimError::Invariant(format!("entry {i} stamped {s} is ahead of iteration {k}"))),
                None => Err(SimError::Invariant(format!("entry {i} is empty"))),
            })
            .collect()
    }

    /// `(1/n) Σ Gᵢ/bᵢ`.
    pub fn direction(&self) -> Result<Vector> {
        let mut dir = Vector::zeros(self.g.first().map_or(0, Vector::len));
        for (i, (g, &b)) in self.g.iter().zip(&self.b).enumerate() {
            if b == 0 {
                return Err(SimError::Invariant(format!("update attempted with b_{i} = 0")));
            }
            dir.axpy(1.0 / b as f64, g, 1.0);
        }
        Ok(dir / self.n() as f64)
    }

    pub fn clear(&mut self) {
        for g in &mut self.g {
            g.fill(0.0);
        }
        self.b.fill(0);
        self.stamps.fill(None);
    }
}
