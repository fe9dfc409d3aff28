//! Coordinate boxes: the rectangular domains on which model charts are valid.

use crate::error::{GeomError, Result};

/// Axis-aligned box of valid chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ChartBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b), "inverted box bounds");
        ChartBox { lo, hi }
    }

    /// Cube [c - r, c + r]^d around a center point.
    pub fn around(center: &[f64], r: f64) -> Self {
        ChartBox {
            lo: center.iter().map(|c| c - r).collect(),
            hi: center.iter().map(|c| c + r).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(GeomError::Shape { expected: self.dim(), got: x.len() });
        }
        for (i, v) in x.iter().enumerate() {
            if *v < self.lo[i] || *v > self.hi[i] {
                return Err(GeomError::OutsideChart { index: i, value: *v });
            }
        }
        Ok(())
    }

    /// The box shrunk toward its center by the given fraction per side
    /// (sampling stays away from the boundary so finite differences fit).
    pub fn shrunk(&self, margin: f64) -> ChartBox {
        let lo = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| a + margin * (b - a))
            .collect();
        let hi = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - margin * (b - a))
            .collect();
        ChartBox { lo, hi }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containment_and_margin() {
        let b = ChartBox::new(vec![0.0, -1.0], vec![1.0, 1.0]);
        assert!(b.contains(&[0.5, 0.0]));
        assert!(!b.contains(&[1.5, 0.0]));
        assert!(b.check(&[0.5]).is_err());
        let s = b.shrunk(0.1);
        assert!((s.lo[0] - 0.1).abs() < 1e-15);
        assert!((s.hi[1] - 0.8).abs() < 1e-15);
        assert_eq!(b.center(), vec![0.5, 0.0]);
    }
}
