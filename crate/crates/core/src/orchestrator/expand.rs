use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExpandError {
    #[error("anchor class {0} has a non-positive factor")]
    ZeroAnchorFactor(usize),
    #[error("anchor class {anchor} out of range for {n} classes")]
    AnchorOutOfRange { anchor: usize, n: usize },
    #[error("{factors} factors for {availability} availability entries")]
    LengthMismatch { factors: usize, availability: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub anchor: usize,
    pub quotas: Vec<u64>,
    /// Unrounded `f_c / f_anchor * D_anchor`.
    pub targets: Vec<f64>,
    /// Classes whose target exceeded their availability.
    pub capped: Vec<usize>,
}

impl Expansion {
    pub fn total(&self) -> u64 {
        self.quotas.iter().sum()
    }
}

/// Scales every class relative to an anchor that receives its full availability,
/// keeping the converged factor ratios. Ratios use the unrounded factors.
pub fn expand_distribution(factors: &[f64], availability: &[u64], anchor: usize) -> Result<Expansion, ExpandError> {
    if factors.len() != availability.len() {
        return Err(ExpandError::LengthMismatch { factors: factors.len(), availability: availability.len() });
    }
    let n = factors.len();
    if anchor >= n {
        return Err(ExpandError::AnchorOutOfRange { anchor, n });
    }
    let anchor_factor = factors[anchor];
    if anchor_factor.is_nan() || anchor_factor <= 0.0 {
        return Err(ExpandError::ZeroAnchorFactor(anchor));
    }
    let base = availability[anchor] as f64;
    let targets: Vec<f64> = factors.iter().map(|f| f / anchor_factor * base).collect();
    let mut capped = Vec::new();
    let quotas = targets
        .iter()
        .zip(availability)
        .enumerate()
        .map(|(c, (&t, &avail))| {
            let q = (t.round_ties_even().max(1.0)) as u64;
            if q > avail {
                log::warn!("class {c}: expanded quota {q} capped at availability {avail}");
                capped.push(c);
                avail
            } else {
                q
            }
        })
        .collect();
    Ok(Expansion { anchor, quotas, targets, capped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_ratio_example() {
        // ratio 0.1012 against an anchor with 5000 samples
        let e = expand_distribution(&[0.1012, 1.0], &[5000, 5000], 1).unwrap();
        assert_eq!(e.quotas, vec![506, 5000]);
        let e = expand_distribution(&[0.0253, 0.25], &[5000, 5000], 1).unwrap();
        assert_eq!(e.quotas, vec![506, 5000]);
        assert!(e.capped.is_empty());
    }

    #[test]
    fn uniform_factors() {
        let e = expand_distribution(&[0.3; 3], &[5000, 5000, 4000], 0).unwrap();
        assert_eq!(e.quotas, vec![5000, 5000, 4000]);
        assert_eq!(e.capped, vec![2]);
    }

    #[test]
    fn floor_and_errors() {
        let e = expand_distribution(&[1e-9, 0.5], &[100, 100], 1).unwrap();
        assert_eq!(e.quotas, vec![1, 100]);
        assert_eq!(expand_distribution(&[0.0, 0.5], &[10, 10], 0), Err(ExpandError::ZeroAnchorFactor(0)));
        assert!(matches!(expand_distribution(&[0.5], &[10, 10], 0), Err(ExpandError::LengthMismatch { .. })));
        assert!(matches!(expand_distribution(&[0.5, 0.5], &[10, 10], 2), Err(ExpandError::AnchorOutOfRange { .. })));
    }
}
