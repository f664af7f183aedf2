use crate::error::{Error, Result};

/// Ordered finite set of design points.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignGrid {
    points: Vec<f64>,
}

impl DesignGrid {
    /// Builds a grid from strictly increasing, finite coordinates. At least
    /// two points are required.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite point".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid(
                "points must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Equispaced grid of `d` points on `[lo, hi]`.
    pub fn equispaced(lo: f64, hi: f64, d: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidGrid(format!("empty interval [{lo}, {hi}]")));
        }
        if d < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {d}")));
        }
        let step = (hi - lo) / (d - 1) as f64;
        Ok(Self {
            points: (0..d).map(|i| lo + step * i as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Result<f64> {
        self.points
            .get(i)
            .copied()
            .ok_or(Error::InvalidIndex {
                index: i,
                len: self.points.len(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_and_unsorted() {
        assert!(DesignGrid::new(vec![1.0]).is_err());
        assert!(DesignGrid::new(vec![1.0, 1.0]).is_err());
        assert!(DesignGrid::new(vec![2.0, 1.0]).is_err());
        assert!(DesignGrid::new(vec![0.0, f64::NAN]).is_err());
        assert!(DesignGrid::new(vec![0.0, 1.0, 2.0]).is_ok());
    }

    #[test]
    fn equispaced_endpoints() {
        let g = DesignGrid::equispaced(-3.0, 3.0, 46).unwrap();
        assert_eq!(g.len(), 46);
        assert_eq!(g.point(0).unwrap(), -3.0);
        assert!((g.point(45).unwrap() - 3.0).abs() < 1e-12);
    }
}
