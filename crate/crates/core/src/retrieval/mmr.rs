//! Greedy maximal marginal relevance.

/// Greedy MMR over `candidates`.
///
/// At every step picks the candidate maximizing
/// `lambda * relevance[c] - (1 - lambda) * max_{s in selected} sim(c, s)`,
/// with the redundancy term zero while nothing is selected. Exact score ties
/// go to the lowest candidate id. Returns `(id, score at selection)` pairs in
/// selection order, `min(k, candidates.len())` of them.
pub fn mmr_greedy<F>(candidates: &[usize], relevance: &[f64], sim: F, k: usize, lambda: f64) -> Vec<(usize, f64)>
where
    F: Fn(usize, usize) -> f64,
{
    debug_assert_eq!(candidates.len(), relevance.len());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| candidates[i]);

    let take = k.min(candidates.len());
    let mut redundancy = vec![f64::NEG_INFINITY; candidates.len()];
    let mut taken = vec![false; candidates.len()];
    let mut out = Vec::with_capacity(take);
    for _ in 0..take {
        let mut best: Option<(usize, f64)> = None;
        for &i in &order {
            if taken[i] {
                continue;
            }
            let red = if out.is_empty() { 0.0 } else { redundancy[i] };
            let score = lambda * relevance[i] - (1.0 - lambda) * red;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let (pick, score) = best.expect("take <= remaining candidates");
        taken[pick] = true;
        out.push((candidates[pick], score));
        for &i in &order {
            if !taken[i] {
                let s = sim(candidates[i], candidates[pick]);
                if s > redundancy[i] {
                    redundancy[i] = s;
                }
            }
        }
    }
    out
}
