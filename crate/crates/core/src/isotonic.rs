//! Weighted pool-adjacent-violators.

/// Weighted least-squares nondecreasing fit of `y`.
///
/// Adjacent blocks that violate monotonicity are merged into their weighted
/// mean until none remain.
pub fn pava_nondecreasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    // (weighted mean, total weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let tw = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 + m2 * w2) / tw, tw, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}
