//! Jensen–Shannon distance between two empirical distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsDistance {
    /// Square root of the base-2 divergence, in `[0, 1]`.
    pub value: f64,
    pub bins: usize,
    pub support: (f64, f64),
    pub warning: Option<String>,
}

/// Histogram of `x` with `bins` equal bins on `[lo, hi]`, normalised to
/// probabilities. The upper edge belongs to the last bin.
pub fn histogram(x: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in x {
        let i = if width > 0.0 {
            (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        h[i] += 1.0;
    }
    let total = x.len() as f64;
    h.iter_mut().for_each(|c| *c /= total);
    h
}

fn divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            d += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            d += 0.5 * b * (b / m).log2();
        }
    }
    d.max(0.0)
}

/// Histograms both samples on their shared support with `⌊√n⌋` bins for
/// the shorter sample and returns the square root of the J–S divergence.
pub fn js_distance(a: &[f64], b: &[f64]) -> Result<JsDistance> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("J-S distance needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("J-S distance: non-finite sample value".into()));
    }
    let (lo_a, hi_a) = stats::min_max(a);
    let (lo_b, hi_b) = stats::min_max(b);
    let (lo, hi) = (lo_a.min(lo_b), hi_a.max(hi_b));
    let bins = ((a.len().min(b.len()) as f64).sqrt().floor() as usize).max(1);
    let pa = histogram(a, lo, hi, bins);
    let pb = histogram(b, lo, hi, bins);
    let occupied = |p: &[f64]| p.iter().filter(|&&x| x > 0.0).count();
    let warning = if occupied(&pa) == 1 && occupied(&pb) == 1 && pa == pb {
        log::warn!("J-S distance: both samples fall into a single bin");
        Some("both samples fall into a single bin".to_string())
    } else {
        None
    };
    Ok(JsDistance {
        value: divergence(&pa, &pb).sqrt().min(1.0),
        bins,
        support: (lo, hi),
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_is_zero() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(js_distance(&x, &x).unwrap().value, 0.0);
    }

    #[test]
    fn disjoint_is_one() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let b: Vec<f64> = (0..100).map(|i| 5.0 + i as f64 / 100.0).collect();
        assert_eq!(js_distance(&a, &b).unwrap().value, 1.0);
    }

    #[test]
    fn single_bin_warns() {
        let r = js_distance(&[2.0; 30], &[2.0; 40]).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.warning.is_some());
    }

    #[test]
    fn bins_follow_shorter_sample() {
        let a = vec![0.0; 50];
        let b: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(js_distance(&a, &b).unwrap().bins, 7);
    }

    #[test]
    fn empty_is_error() {
        assert!(js_distance(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            a in prop::collection::vec(-10.0f64..10.0, 1..200),
            b in prop::collection::vec(-10.0f64..10.0, 1..200),
        ) {
            let ab = js_distance(&a, &b).unwrap().value;
            let ba = js_distance(&b, &a).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(js_distance(&a, &a).unwrap().value, 0.0);
        }
    }
}
