//! Dynamic time warping with the step set {(+1,0), (0,+1), (+1,+1)} and
//! unit weighting.

use crate::error::{Error, Result};

/// Monotonic alignment between two sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    /// Index pairs from (0,0) to (Ta-1, Tb-1), inclusive.
    pub pairs: Vec<(usize, usize)>,
    /// Summed per-pair distance along the path.
    pub cost: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Step {
    Start,
    Diag,
    FromA, // (+1, 0): previous cell (i-1, j)
    FromB, // (0, +1): previous cell (i, j-1)
}

/// Align two sequences under a per-pair distance. Ties between equal-cost
/// predecessors prefer the diagonal, then (+1,0), then (0,+1); the
/// preference is applied when the table is filled, so the backtrace is
/// deterministic.
pub fn dtw_align<A, B, F>(a: &[A], b: &[B], dist: F) -> Result<AlignmentPath>
where
    F: Fn(&A, &B) -> f64,
{
    let (ta, tb) = (a.len(), b.len());
    if ta == 0 || tb == 0 {
        return Err(Error::EmptyInput("dtw over an empty sequence".into()));
    }
    let mut cost = vec![0.0f64; ta * tb];
    let mut step = vec![Step::Start; ta * tb];
    for i in 0..ta {
        for j in 0..tb {
            let d = dist(&a[i], &b[j]);
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "dtw distance at ({i},{j}) is {d}"
                )));
            }
            let (prev, s) = match (i, j) {
                (0, 0) => (0.0, Step::Start),
                (0, _) => (cost[j - 1], Step::FromB),
                (_, 0) => (cost[(i - 1) * tb], Step::FromA),
                _ => {
                    let diag = cost[(i - 1) * tb + j - 1];
                    let from_a = cost[(i - 1) * tb + j];
                    let from_b = cost[i * tb + j - 1];
                    // tie preference: diagonal, then (+1,0), then (0,+1)
                    if diag <= from_a && diag <= from_b {
                        (diag, Step::Diag)
                    } else if from_a <= from_b {
                        (from_a, Step::FromA)
                    } else {
                        (from_b, Step::FromB)
                    }
                }
            };
            cost[i * tb + j] = prev + d;
            step[i * tb + j] = s;
        }
    }

    let mut pairs = Vec::with_capacity(ta.max(tb));
    let (mut i, mut j) = (ta - 1, tb - 1);
    loop {
        pairs.push((i, j));
        match step[i * tb + j] {
            Step::Start => break,
            Step::Diag => {
                i -= 1;
                j -= 1;
            }
            Step::FromA => i -= 1,
            Step::FromB => j -= 1,
        }
    }
    pairs.reverse();
    Ok(AlignmentPath {
        pairs,
        cost: cost[(ta - 1) * tb + tb - 1],
    })
}
