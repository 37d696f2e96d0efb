//! Rank-normalized split R-hat and bulk/tail effective sample size.

use crate::math::{mean, std_normal_quantile};

/// Splits each chain in half (dropping the middle draw of odd-length chains).
fn split_chains(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled ranks (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(Vec::len).sum();
    let mut idx: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
    for (c, ch) in chains.iter().enumerate() {
        for (i, &v) in ch.iter().enumerate() {
            idx.push((v, c, i));
        }
    }
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let s = total as f64;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && idx[end].0 == idx[start].0 {
            end += 1;
        }
        let rank = 0.5 * ((start + 1) as f64 + end as f64);
        let z = std_normal_quantile((rank - 0.375) / (s + 0.25));
        for &(_, c, i) in &idx[start..end] {
            out[c][i] = z;
        }
        start = end;
    }
    out
}

fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b = n * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0);
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// max(bulk, folded) rank-normalized split R-hat. Returns NaN for fewer than 4 draws per chain.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let bulk = basic_rhat(&rank_normalize(&split));
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let med = crate::math::quantile_sorted(&crate::math::sorted_copy(&pooled), 0.5);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |c: usize, lag: usize| -> f64 {
        let ch = &chains[c];
        let mu = means[c];
        (0..n - lag)
            .map(|i| (ch[i] - mu) * (ch[i + lag] - mu))
            .sum::<f64>()
            / n as f64
    };
    let acov0: Vec<f64> = (0..m).map(|c| acov(c, 0)).collect();
    let chain_var: Vec<f64> = acov0
        .iter()
        .map(|a| a * n as f64 / (n as f64 - 1.0))
        .collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        let grand = mean(&means);
        var_plus += means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| -> f64 {
        if lag == 0 {
            return 1.0;
        }
        let mean_acov = (0..m).map(|c| acov(c, lag)).sum::<f64>() / m as f64;
        1.0 - (mean_var - mean_acov) / var_plus
    };
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS on rank-normalized split chains.
pub fn ess_bulk(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    ess_raw(&rank_normalize(&split_chains(chains)))
}

/// Tail ESS: the smaller ESS of the 5% and 95% quantile indicators.
pub fn ess_tail(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let pooled = crate::math::sorted_copy(&split.iter().flatten().copied().collect::<Vec<_>>());
    let ess_at = |p: f64| {
        let q = crate::math::quantile_sorted(&pooled, p);
        let ind: Vec<Vec<f64>> = split
            .iter()
            .map(|c| c.iter().map(|&v| if v <= q { 1.0 } else { 0.0 }).collect())
            .collect();
        ess_raw(&ind)
    };
    ess_at(0.05).min(ess_at(0.95))
}
