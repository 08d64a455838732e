use crate::error::{Error, Result};

/// Half-width of the initial bracket on the standardised scale.
pub const BRACKET_START: f64 = 10.0;
/// Number of times the bracket may double before giving up.
pub const BRACKET_DOUBLINGS: u32 = 10;
pub const MAX_BISECTIONS: usize = 200;
const TOL: f64 = 1e-10;

/// Inverts a non-decreasing function at every level in `ps` simultaneously;
/// `f` receives all query points at once.
pub fn quantile_invert_many<F>(mut f: F, ps: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if let Some(&p) = ps.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {p}")));
    }
    let n = ps.len();
    let mut lo = vec![-BRACKET_START; n];
    let mut hi = vec![BRACKET_START; n];
    for round in 0..=BRACKET_DOUBLINGS {
        let (flo, fhi) = (f(&lo)?, f(&hi)?);
        let mut done = true;
        for i in 0..n {
            if flo[i] > ps[i] {
                lo[i] *= 2.0;
                done = false;
            }
            if fhi[i] < ps[i] {
                hi[i] *= 2.0;
                done = false;
            }
        }
        if done {
            break;
        }
        if round == BRACKET_DOUBLINGS {
            let i = (0..n).find(|&i| flo[i] > ps[i] || fhi[i] < ps[i]).expect("some level unbracketed");
            return Err(Error::BracketFailure {
                p: ps[i],
                limit: lo[i].abs().max(hi[i].abs()) / 2.0,
            });
        }
    }
    let mut mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut open = vec![true; n];
    for _ in 0..MAX_BISECTIONS {
        let fm = f(&mid)?;
        for i in 0..n {
            if !open[i] {
                continue;
            }
            if (fm[i] - ps[i]).abs() < TOL || hi[i] - lo[i] <= f64::EPSILON * mid[i].abs().max(1.0) {
                open[i] = false;
                continue;
            }
            if fm[i] < ps[i] {
                lo[i] = mid[i];
            } else {
                hi[i] = mid[i];
            }
            mid[i] = 0.5 * (lo[i] + hi[i]);
        }
        if !open.iter().any(|&o| o) {
            break;
        }
    }
    Ok(mid)
}

/// `y` with `F(y) ≈ p` by bracket expansion and bisection.
pub fn quantile_invert<F>(mut f: F, p: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let y = quantile_invert_many(|ys| Ok(ys.iter().map(|&y| f(y)).collect()), &[p])?;
    Ok(y[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sigmoid;

    #[test]
    fn inverts_the_logistic() {
        assert!(quantile_invert(sigmoid, 0.5).unwrap().abs() < 1e-9);
        assert!((quantile_invert(sigmoid, sigmoid(1.0)).unwrap() - 1.0).abs() < 1e-6);
        let y = quantile_invert(sigmoid, 0.3).unwrap();
        assert!((sigmoid(y) - 0.3).abs() < 1e-8);
    }

    #[test]
    fn expands_the_bracket_and_fails_past_the_cap() {
        let wide = |y: f64| sigmoid(y / 500.0);
        let y = quantile_invert(wide, 0.999).unwrap();
        assert!((wide(y) - 0.999).abs() < 1e-8);
        assert!(y > 20.0);
        assert!(matches!(
            quantile_invert(|y| sigmoid(y / 1e6), 0.999),
            Err(Error::BracketFailure { .. })
        ));
        assert!(quantile_invert(sigmoid, 1.0).is_err());
    }
}
