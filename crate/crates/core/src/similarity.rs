//! ROUGE-L similarity, greedy deduplication and similarity ranking.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::DialogueSession;
use crate::tokenize::Tokenizer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimilarityError {
    #[error("similarity pool is empty")]
    EmptyPool,
    #[error("target size {target} exceeds pool size {pool}")]
    TargetTooLarge { target: usize, pool: usize },
    #[error("k = {k} exceeds pool size {pool}")]
    KTooLarge { k: usize, pool: usize },
}

/// A ROUGE-L F-measure in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub const ZERO: SimilarityScore = SimilarityScore(0.0);

    pub fn new(value: f64) -> Option<Self> {
        (0.0..=1.0).contains(&value).then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Length of a longest common subsequence, in O(|a|·|b|) time and
/// O(min(|a|,|b|)) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// ROUGE-L F1 (β = 1) over pre-tokenized sequences.
pub fn rouge_l_tokens<T: PartialEq>(a: &[T], b: &[T]) -> SimilarityScore {
    if a.is_empty() || b.is_empty() {
        return SimilarityScore::ZERO;
    }
    let lcs = lcs_length(a, b) as f64;
    let p = lcs / a.len() as f64;
    let r = lcs / b.len() as f64;
    if p + r == 0.0 {
        return SimilarityScore::ZERO;
    }
    SimilarityScore((2.0 * p * r / (p + r)).clamp(0.0, 1.0))
}

pub fn rouge_l(a: &str, b: &str, tokenizer: &dyn Tokenizer) -> SimilarityScore {
    rouge_l_tokens(&tokenizer.surfaces(a), &tokenizer.surfaces(b))
}

/// Best score of `x` against the pool and the first index attaining it.
pub fn max_similarity<S: AsRef<str>>(
    x: &str,
    pool: &[S],
    tokenizer: &dyn Tokenizer,
) -> Result<(SimilarityScore, usize), SimilarityError> {
    let xt = tokenizer.surfaces(x);
    let mut best: Option<(SimilarityScore, usize)> = None;
    for (i, p) in pool.iter().enumerate() {
        let s = rouge_l_tokens(&xt, &tokenizer.surfaces(p.as_ref()));
        if best.is_none_or(|(b, _)| s.0 > b.0) {
            best = Some((s, i));
        }
    }
    best.ok_or(SimilarityError::EmptyPool)
}

/// Pairwise ROUGE-L matrix; symmetric with ones on the diagonal.
pub fn pairwise_matrix<S: AsRef<str>>(texts: &[S], tokenizer: &dyn Tokenizer) -> Vec<Vec<f64>> {
    let tokens: Vec<Vec<&str>> = texts.iter().map(|t| tokenizer.surfaces(t.as_ref())).collect();
    let n = tokens.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = rouge_l_tokens(&tokens[i], &tokens[i]).0;
        for j in i + 1..n {
            let s = rouge_l_tokens(&tokens[i], &tokens[j]).0;
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    m
}

/// Largest off-diagonal entry among the selected indices (0 with fewer
/// than two items).
pub fn max_pairwise(matrix: &[Vec<f64>], indices: &[usize]) -> f64 {
    let mut best = 0.0f64;
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            best = best.max(matrix[i][j]);
        }
    }
    best
}

/// Indices kept by greedy deduplication of `texts` down to `target`.
///
/// Each round removes the item whose highest similarity to any other
/// remaining item is largest; ties remove the later index.
pub fn dedup_indices<S: AsRef<str>>(
    texts: &[S],
    target: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<usize>, SimilarityError> {
    if target > texts.len() {
        return Err(SimilarityError::TargetTooLarge {
            target,
            pool: texts.len(),
        });
    }
    let matrix = pairwise_matrix(texts, tokenizer);
    let mut alive: Vec<usize> = (0..texts.len()).collect();
    while alive.len() > target {
        let mut victim = 0;
        let mut victim_score = f64::NEG_INFINITY;
        for (pos, &i) in alive.iter().enumerate() {
            let score = alive
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| matrix[i][j])
                .fold(0.0f64, f64::max);
            // `>=` so the later index wins ties
            if score >= victim_score {
                victim_score = score;
                victim = pos;
            }
        }
        alive.remove(victim);
    }
    Ok(alive)
}

pub fn dedup_to_size(
    pool: Vec<DialogueSession>,
    target: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<DialogueSession>, SimilarityError> {
    let texts: Vec<String> = pool.iter().map(DialogueSession::text).collect();
    let keep = dedup_indices(&texts, target, tokenizer)?;
    let mut keep = keep.into_iter().peekable();
    Ok(pool
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| (keep.next_if_eq(&i).is_some()).then_some(s))
        .collect())
}

/// Ids of the `k` most similar pool entries, by descending score and then
/// ascending id.
pub fn top_k_similar<I: AsRef<str>, S: AsRef<str>>(
    target: &str,
    pool: &[(I, S)],
    k: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<String>, SimilarityError> {
    if k > pool.len() {
        return Err(SimilarityError::KTooLarge { k, pool: pool.len() });
    }
    let tt = tokenizer.surfaces(target);
    let mut scored: Vec<(f64, &str)> = pool
        .iter()
        .map(|(id, text)| {
            (
                rouge_l_tokens(&tt, &tokenizer.surfaces(text.as_ref())).0,
                id.as_ref(),
            )
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{CharTokenizer, WhitespaceTokenizer};

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(lcs_length::<char>(&[], &chars("abc")), 0);
        assert_eq!(lcs_length(&chars("ABCD"), &chars("ACD")), 3);
        assert_eq!(lcs_length(&chars("ACD"), &chars("ABCD")), 3);
        assert_eq!(lcs_length(&chars("xyzzy"), &chars("xyzzy")), 5);
    }

    #[test]
    fn rouge_examples() {
        let t = CharTokenizer;
        assert_eq!(rouge_l("same", "same", &t).value(), 1.0);
        assert_eq!(rouge_l("abc", "xyz", &t).value(), 0.0);
        assert_eq!(rouge_l("", "xyz", &t).value(), 0.0);
        assert!((rouge_l("ABCD", "ACD", &t).value() - 6.0 / 7.0).abs() < 1e-12);
        let w = WhitespaceTokenizer;
        assert!((rouge_l("the cat sat", "the cat", &w).value() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn max_similarity_first_index_wins() {
        let pool = ["zzz", "abc", "abc"];
        let (s, i) = max_similarity("abc", &pool, &CharTokenizer).unwrap();
        assert_eq!((s.value(), i), (1.0, 1));
        let (s, i) = max_similarity("abd", &["abc"], &CharTokenizer).unwrap();
        assert_eq!(i, 0);
        assert!((s.value() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            max_similarity::<&str>("a", &[], &CharTokenizer),
            Err(SimilarityError::EmptyPool)
        );
    }

    #[test]
    fn dedup_removes_later_duplicate() {
        let texts = ["hello world", "completely different", "hello world"];
        let keep = dedup_indices(&texts, 2, &CharTokenizer).unwrap();
        assert_eq!(keep, vec![0, 1]);
        assert_eq!(dedup_indices(&texts, 3, &CharTokenizer).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            dedup_indices(&texts, 4, &CharTokenizer),
            Err(SimilarityError::TargetTooLarge { .. })
        ));
    }

    #[test]
    fn top_k_tie_breaks_by_id() {
        let pool = [("b", "abc"), ("a", "abc"), ("c", "xyz")];
        let ids = top_k_similar("abc", &pool, 2, &CharTokenizer).unwrap();
        assert_eq!(ids, ["a", "b"]);
        assert!(matches!(
            top_k_similar("abc", &pool, 4, &CharTokenizer),
            Err(SimilarityError::KTooLarge { .. })
        ));
    }
}
