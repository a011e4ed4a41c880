//! Chi-square token/label association scores for feature selection.

use std::collections::HashSet;

/// One document reduced to its token set plus a binary class label.
pub struct LabeledDoc {
    pub tokens: HashSet<String>,
    pub label: bool,
}

impl LabeledDoc {
    pub fn new(tokens: impl IntoIterator<Item = String>, label: bool) -> Self {
        Self {
            tokens: tokens.into_iter().collect(),
            label,
        }
    }
}

/// Standard 2x2 chi-square statistic of document-level token presence versus
/// class label: `N (ad - bc)^2 / ((a+b)(c+d)(a+c)(b+d))`, where `a`/`b` count
/// positive-class documents with/without the token and `c`/`d` the same for
/// the negative class. Zero marginals (token in all or no documents, or a
/// missing class) score 0 by convention.
pub fn chi_square_scores(docs: &[LabeledDoc], token: &str) -> f64 {
    let mut a = 0u64;
    let mut b = 0u64;
    let mut c = 0u64;
    let mut d = 0u64;
    for doc in docs {
        let present = doc.tokens.contains(token);
        match (doc.label, present) {
            (true, true) => a += 1,
            (true, false) => b += 1,
            (false, true) => c += 1,
            (false, false) => d += 1,
        }
    }
    chi_square_from_counts(a, b, c, d)
}

pub(crate) fn chi_square_from_counts(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let n = (a + b + c + d) as f64;
    let denom = ((a + b) * (c + d)) as f64 * ((a + c) * (b + d)) as f64;
    if denom == 0.0 {
        return 0.0;
    }
    let ad = a as f64 * d as f64;
    let bc = b as f64 * c as f64;
    n * (ad - bc) * (ad - bc) / denom
}
