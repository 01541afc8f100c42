//! Word error rate: Levenshtein alignment with a deterministic backtrace,
//! and the permutation-optimal multi-speaker variant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit-distance outcome against a reference of `ref_word_count` words.
/// `wer` is (S + I + D) / N and may exceed 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_word_count: usize,
    pub wer: f64,
}

impl WerBreakdown {
    pub fn new(
        substitutions: usize,
        insertions: usize,
        deletions: usize,
        ref_word_count: usize,
    ) -> Result<Self> {
        if ref_word_count == 0 {
            return Err(Error::Score("word error rate needs a nonempty reference".into()));
        }
        Ok(Self {
            substitutions,
            insertions,
            deletions,
            ref_word_count,
            wer: (substitutions + insertions + deletions) as f64 / ref_word_count as f64,
        })
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Word error rate of `hypothesis` against a nonempty `reference`: unit-cost
/// Levenshtein alignment, with S/I/D read off one minimal backtrace that
/// prefers substitution over insertion over deletion on ties.
pub fn wer<R: AsRef<str>, H: AsRef<str>>(
    reference: &[R],
    hypothesis: &[H],
) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::Score("word error rate needs a nonempty reference".into()));
    }
    let (s, i, d) = align(
        &reference.iter().map(|w| w.as_ref()).collect::<Vec<_>>(),
        &hypothesis.iter().map(|w| w.as_ref()).collect::<Vec<_>>(),
    );
    WerBreakdown::new(s, i, d, reference.len())
}

/// Minimal-cost alignment counts (substitutions, insertions, deletions);
/// empty sides are fine here — they become pure insertions or deletions.
fn align(reference: &[&str], hypothesis: &[&str]) -> (usize, usize, usize) {
    let n = reference.len();
    let m = hypothesis.len();
    let mut dp = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dp[idx(i, 0)] = i;
    }
    for j in 0..=m {
        dp[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[idx(i - 1, j - 1)] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = dp[idx(i, j - 1)] + 1;
            let del = dp[idx(i - 1, j)] + 1;
            dp[idx(i, j)] = sub.min(ins).min(del);
        }
    }

    let (mut s, mut ins_count, mut d) = (0usize, 0usize, 0usize);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cost = dp[idx(i, j)];
        // Tie order: match/substitution, then insertion, then deletion.
        if i > 0 && j > 0 {
            let was_match = reference[i - 1] == hypothesis[j - 1];
            if dp[idx(i - 1, j - 1)] + usize::from(!was_match) == cost {
                if !was_match {
                    s += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && dp[idx(i, j - 1)] + 1 == cost {
            ins_count += 1;
            j -= 1;
            continue;
        }
        d += 1;
        i -= 1;
    }
    (s, ins_count, d)
}

/// Permutation-optimal multi-speaker WER: pads both sides with empty word
/// streams to a square, tries every injective hypothesis-to-reference
/// stream assignment, and keeps the one with the fewest total errors.
/// Unassigned hypothesis streams count entirely as insertions, unassigned
/// reference streams as deletions.
pub fn cp_wer(
    reference: &BTreeMap<String, Vec<String>>,
    hypothesis: &BTreeMap<String, Vec<String>>,
) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::Score("speaker-paired WER needs at least one reference stream".into()));
    }
    let total_ref_words: usize = reference.values().map(Vec::len).sum();
    if total_ref_words == 0 {
        return Err(Error::Score("speaker-paired WER needs a nonempty reference".into()));
    }

    let empty: Vec<String> = Vec::new();
    let k = reference.len().max(hypothesis.len());
    let ref_streams: Vec<&Vec<String>> =
        reference.values().chain(std::iter::repeat(&empty)).take(k).collect();
    let hyp_streams: Vec<&Vec<String>> =
        hypothesis.values().chain(std::iter::repeat(&empty)).take(k).collect();

    let mut best: Option<(usize, (usize, usize, usize))> = None;
    for_each_permutation(k, &mut |assignment| {
        let mut totals = (0usize, 0usize, 0usize);
        for (h, &r) in assignment.iter().enumerate() {
            let (s, i, d) = align(
                &ref_streams[r].iter().map(String::as_str).collect::<Vec<_>>(),
                &hyp_streams[h].iter().map(String::as_str).collect::<Vec<_>>(),
            );
            totals.0 += s;
            totals.1 += i;
            totals.2 += d;
        }
        let cost = totals.0 + totals.1 + totals.2;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, totals));
        }
    });
    let (_, (s, i, d)) = best.expect("k >= 1 yields at least one assignment");
    WerBreakdown::new(s, i, d, total_ref_words)
}

/// Calls `f` with every permutation of 0..n, in lexicographic order (which
/// makes minimum-cost ties deterministic).
pub(crate) fn for_each_permutation(n: usize, f: &mut impl FnMut(&[usize])) {
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn recurse(
        n: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        f: &mut impl FnMut(&[usize]),
    ) {
        if current.len() == n {
            f(current);
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                current.push(v);
                recurse(n, current, used, f);
                current.pop();
                used[v] = false;
            }
        }
    }
    recurse(n, &mut current, &mut used, f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_sequences_score_zero() {
        let r = words("the quick brown fox");
        let b = wer(&r, &r).unwrap();
        assert_eq!(b.errors(), 0);
        assert_eq!(b.wer, 0.0);
        assert_eq!(b.ref_word_count, 4);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let r = words("a b c");
        let b = wer(&r, &Vec::<String>::new()).unwrap();
        assert_eq!((b.substitutions, b.insertions, b.deletions), (0, 0, 3));
        assert_eq!(b.wer, 1.0);
    }

    #[test]
    fn substitution_plus_deletion_case() {
        let b = wer(&words("a b c d"), &words("a x c")).unwrap();
        assert_eq!((b.substitutions, b.insertions, b.deletions), (1, 0, 1));
        assert_eq!(b.wer, 0.5);
    }

    #[test]
    fn empty_reference_is_rejected() {
        assert!(wer(&Vec::<String>::new(), &words("a")).is_err());
    }

    #[test]
    fn ties_prefer_substitutions() {
        // "a b" vs "b a" has two minimal alignments of cost 2: two
        // substitutions, or one insertion plus one deletion.
        let b = wer(&words("a b"), &words("b a")).unwrap();
        assert_eq!((b.substitutions, b.insertions, b.deletions), (2, 0, 0));
    }

    /// Plain recursive edit distance, memoized — an implementation with no
    /// shared structure with the DP table above.
    fn edit_oracle(r: &[&str], h: &[&str]) -> usize {
        fn go<'a>(
            r: &[&'a str],
            h: &[&'a str],
            memo: &mut std::collections::HashMap<(usize, usize), usize>,
        ) -> usize {
            if r.is_empty() {
                return h.len();
            }
            if h.is_empty() {
                return r.len();
            }
            let key = (r.len(), h.len());
            if let Some(&v) = memo.get(&key) {
                return v;
            }
            let mut best = go(&r[1..], &h[1..], memo) + usize::from(r[0] != h[0]);
            best = best.min(go(r, &h[1..], memo) + 1);
            best = best.min(go(&r[1..], h, memo) + 1);
            memo.insert(key, best);
            best
        }
        go(r, h, &mut std::collections::HashMap::new())
    }

    fn word_seq(max_len: usize) -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            proptest::sample::select(vec!["a", "b", "c", "d"]).prop_map(str::to_string),
            0..max_len,
        )
    }

    proptest! {
        #[test]
        fn total_errors_match_an_independent_edit_distance(
            r in word_seq(9).prop_filter("nonempty ref", |v| !v.is_empty()),
            h in word_seq(9),
        ) {
            let b = wer(&r, &h).unwrap();
            let rr: Vec<&str> = r.iter().map(String::as_str).collect();
            let hh: Vec<&str> = h.iter().map(String::as_str).collect();
            prop_assert_eq!(b.errors(), edit_oracle(&rr, &hh));
        }

        #[test]
        fn triangle_inequality_over_error_counts(
            a in word_seq(7).prop_filter("nonempty", |v| !v.is_empty()),
            b in word_seq(7).prop_filter("nonempty", |v| !v.is_empty()),
            c in word_seq(7),
        ) {
            let ac = wer(&a, &c).unwrap().errors();
            let ab = wer(&a, &b).unwrap().errors();
            let bc = wer(&b, &c).unwrap().errors();
            prop_assert!(ac <= ab + bc);
        }
    }

    fn stream_map(pairs: &[(&str, &str)]) -> BTreeMap<String, Vec<String>> {
        pairs.iter().map(|(k, v)| (k.to_string(), words(v))).collect()
    }

    #[test]
    fn swapping_hypothesis_speakers_changes_nothing() {
        let reference = stream_map(&[("r1", "a b c"), ("r2", "d e")]);
        let hyp = stream_map(&[("h1", "a b c"), ("h2", "d e")]);
        let swapped = stream_map(&[("h1", "d e"), ("h2", "a b c")]);
        let straight = cp_wer(&reference, &hyp).unwrap();
        let crossed = cp_wer(&reference, &swapped).unwrap();
        assert_eq!(straight.errors(), 0);
        assert_eq!(crossed.errors(), 0);
        assert_eq!(straight.wer, crossed.wer);
    }

    #[test]
    fn missing_stream_deletes_that_reference() {
        let reference = stream_map(&[("r1", "a b c"), ("r2", "d e")]);
        let hyp = stream_map(&[("h1", "a b c")]);
        let b = cp_wer(&reference, &hyp).unwrap();
        assert_eq!((b.substitutions, b.insertions, b.deletions), (0, 0, 2));
        assert_eq!(b.ref_word_count, 5);
    }

    #[test]
    fn extra_hypothesis_stream_counts_as_insertions() {
        let reference = stream_map(&[("r1", "a b")]);
        let hyp = stream_map(&[("h1", "a b"), ("h2", "x y z")]);
        let b = cp_wer(&reference, &hyp).unwrap();
        assert_eq!((b.substitutions, b.insertions, b.deletions), (0, 3, 0));
    }

    #[test]
    fn empty_reference_map_is_rejected() {
        assert!(cp_wer(&BTreeMap::new(), &stream_map(&[("h", "a")])).is_err());
        assert!(cp_wer(&stream_map(&[("r", "")]), &stream_map(&[("h", "a")])).is_err());
    }

    proptest! {
        #[test]
        fn two_speaker_case_matches_the_exhaustive_assignment(
            r1 in word_seq(6).prop_filter("nonempty", |v| !v.is_empty()),
            r2 in word_seq(6),
            h1 in word_seq(6),
            h2 in word_seq(6),
        ) {
            let mut reference = BTreeMap::new();
            reference.insert("r1".to_string(), r1.clone());
            reference.insert("r2".to_string(), r2.clone());
            let mut hyp = BTreeMap::new();
            hyp.insert("h1".to_string(), h1.clone());
            hyp.insert("h2".to_string(), h2.clone());

            let errors_of = |rr: &Vec<String>, hh: &Vec<String>| -> usize {
                let rv: Vec<&str> = rr.iter().map(String::as_str).collect();
                let hv: Vec<&str> = hh.iter().map(String::as_str).collect();
                let (s, i, d) = super::align(&rv, &hv);
                s + i + d
            };
            let straight = errors_of(&r1, &h1) + errors_of(&r2, &h2);
            let crossed = errors_of(&r1, &h2) + errors_of(&r2, &h1);
            let b = cp_wer(&reference, &hyp).unwrap();
            prop_assert_eq!(b.errors(), straight.min(crossed));
        }

        #[test]
        fn never_worse_than_the_first_come_pairing(
            r1 in word_seq(6).prop_filter("nonempty", |v| !v.is_empty()),
            r2 in word_seq(6).prop_filter("nonempty", |v| !v.is_empty()),
            h1 in word_seq(6),
            h2 in word_seq(6),
        ) {
            let mut reference = BTreeMap::new();
            reference.insert("r1".to_string(), r1.clone());
            reference.insert("r2".to_string(), r2.clone());
            let mut hyp = BTreeMap::new();
            hyp.insert("h1".to_string(), h1.clone());
            hyp.insert("h2".to_string(), h2.clone());
            let fifo = wer(&r1, &h1).unwrap().errors() + wer(&r2, &h2).unwrap().errors();
            prop_assert!(cp_wer(&reference, &hyp).unwrap().errors() <= fifo);
        }
    }

    #[test]
    fn permutations_are_lexicographic_and_complete() {
        let mut seen = Vec::new();
        for_each_permutation(3, &mut |p| seen.push(p.to_vec()));
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen[5], vec![2, 1, 0]);
        let mut sorted = seen.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
    }
}
