//! Token error rates from a unit-cost Levenshtein alignment. Character and
//! syllable error rates share this engine; the syllable variant strips tone
//! digits from both sides first.

use crate::error::{Error, Result};
use crate::eval::token::strip_tone;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRateResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
    /// `100 * (S + D + I) / N`; can exceed 100 on insertion-heavy output.
    pub rate: f64,
}

impl ErrorRateResult {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein with a deterministic backtrace (match/substitution
/// preferred over deletion, deletion over insertion).
pub fn error_rate<R: AsRef<str>, H: AsRef<str>>(
    reference: &[R],
    hypothesis: &[H],
) -> Result<ErrorRateResult> {
    let n = reference.len();
    let m = hypothesis.len();
    if n == 0 {
        return Err(Error::EmptyInput("error rate needs a nonempty reference".into()));
    }
    let width = m + 1;
    let mut d = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        d[i * width] = i;
    }
    for (j, cell) in d[..width].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            let diag = d[(i - 1) * width + j - 1] + sub_cost;
            let del = d[(i - 1) * width + j] + 1;
            let ins = d[i * width + j - 1] + 1;
            d[i * width + j] = diag.min(del).min(ins);
        }
    }

    let (mut s, mut del, mut ins) = (0usize, 0usize, 0usize);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * width + j];
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            if here == d[(i - 1) * width + j - 1] + sub_cost {
                s += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * width + j] + 1 {
            del += 1;
            i -= 1;
            continue;
        }
        ins += 1;
        j -= 1;
    }
    Ok(ErrorRateResult {
        substitutions: s,
        deletions: del,
        insertions: ins,
        reference_length: n,
        rate: 100.0 * (s + del + ins) as f64 / n as f64,
    })
}

/// Syllable error rate: tone digits discarded from both sequences, then the
/// same Levenshtein engine.
pub fn syllable_error_rate<R: AsRef<str>, H: AsRef<str>>(
    reference: &[R],
    hypothesis: &[H],
) -> Result<ErrorRateResult> {
    error_rate(&strip_tone(reference), &strip_tone(hypothesis))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identical_sequences_are_perfect() {
        let r = toks("ni hao ma");
        let got = error_rate(&r, &r).unwrap();
        assert_eq!(got.edits(), 0);
        assert_eq!(got.rate, 0.0);
    }

    #[test]
    fn one_deletion_over_three_tokens() {
        let r = toks("ni hao ma");
        let h = toks("ni hao");
        let got = error_rate(&r, &h).unwrap();
        assert_eq!(
            (got.substitutions, got.deletions, got.insertions),
            (0, 1, 0)
        );
        assert!((got.rate - 33.33).abs() < 0.01);
    }

    #[test]
    fn empty_reference_is_error() {
        let r: Vec<String> = vec![];
        let h = toks("a");
        assert!(error_rate(&r, &h).is_err());
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let r = toks("a b c d");
        let h: Vec<String> = vec![];
        let got = error_rate(&r, &h).unwrap();
        assert_eq!(got.deletions, 4);
        assert_eq!(got.rate, 100.0);
    }

    #[test]
    fn rate_can_exceed_one_hundred() {
        let r = toks("a");
        let h = toks("x y z");
        let got = error_rate(&r, &h).unwrap();
        assert_eq!(got.edits(), 3); // 1 substitution + 2 insertions
        assert_eq!(got.rate, 300.0);
    }

    #[test]
    fn hand_checked_mixed_case() {
        // ref  = a b c
        // hyp  = a x c d
        // best: match a, substitute b->x, match c, insert d => S=1, I=1
        let got = error_rate(&toks("a b c"), &toks("a x c d")).unwrap();
        assert_eq!(
            (got.substitutions, got.deletions, got.insertions),
            (1, 0, 1)
        );
    }

    #[test]
    fn ser_equals_cer_after_tone_discard() {
        // tones differ but syllables match -> SER 0, while CER over toned
        // tokens sees substitutions
        let r = toks("ni3 hao3 ma1");
        let h = toks("ni2 hao3 ma5");
        let cer = error_rate(&r, &h).unwrap();
        let ser = syllable_error_rate(&r, &h).unwrap();
        assert_eq!(cer.substitutions, 2);
        assert_eq!(ser.edits(), 0);
    }

    #[test]
    fn matches_brute_force_on_random_pairs() {
        use rand::{Rng, SeedableRng};

        /// Exhaustive minimum edit count — the oracle.
        fn brute(r: &[u8], h: &[u8]) -> usize {
            fn go(r: &[u8], h: &[u8]) -> usize {
                match (r.split_first(), h.split_first()) {
                    (None, None) => 0,
                    (None, Some(_)) => h.len(),
                    (Some(_), None) => r.len(),
                    (Some((&rc, rr)), Some((&hc, hr))) => {
                        let sub = go(rr, hr) + usize::from(rc != hc);
                        let del = go(rr, h) + 1;
                        let ins = go(r, hr) + 1;
                        sub.min(del).min(ins)
                    }
                }
            }
            go(r, h)
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for case in 0..200 {
            let ln = rng.random_range(1..=6);
            let lm = rng.random_range(0..=6);
            let r: Vec<u8> = (0..ln).map(|_| rng.random_range(0..4u8)).collect();
            let h: Vec<u8> = (0..lm).map(|_| rng.random_range(0..4u8)).collect();
            let rs: Vec<String> = r.iter().map(|c| c.to_string()).collect();
            let hs: Vec<String> = h.iter().map(|c| c.to_string()).collect();
            let got = error_rate(&rs, &hs).unwrap();
            let want = brute(&r, &h);
            assert_eq!(got.edits(), want, "case {case}: {rs:?} vs {hs:?}");
        }
    }
}
