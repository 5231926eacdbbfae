//! Brute-force reference implementations. Each one recomputes its answer
//! from the definition and shares no code path with the library.
#![allow(dead_code)]

/// Iterated frontier peeling that recomputes every pairwise comparison
/// from scratch each round. Returns the layers as row indices.
pub fn frontier_layers(rows: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..rows.len()).collect();
    let mut layers = Vec::new();
    while !remaining.is_empty() {
        let layer: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| {
                !remaining.iter().any(|&k| {
                    let ge = rows[k].iter().zip(&rows[i]).all(|(b, a)| b >= a);
                    ge && rows[k] != rows[i]
                })
            })
            .collect();
        remaining.retain(|i| !layer.contains(i));
        layers.push(layer);
    }
    layers
}

/// Every assignment of every batch size, enumerated. Returns the best
/// `(batch, latency)` by throughput (smaller batch on ties) and, per batch,
/// the minimum latency within `capacity` if any.
pub fn exhaustive_plans(
    latency: &[Vec<Vec<f64>>],
    memory: &[Vec<Vec<u64>>],
    comm: &[Vec<f64>],
    batches: &[u32],
    capacity: u64,
) -> (Option<(u32, f64)>, Vec<Option<f64>>) {
    let layers = latency.len();
    let strategies = latency[0].len();
    let mut per_batch = Vec::new();
    for b in 0..batches.len() {
        let mut best: Option<f64> = None;
        let mut assignment = vec![0usize; layers];
        loop {
            let mut lat = 0.0;
            let mut mem = 0u64;
            for (l, &s) in assignment.iter().enumerate() {
                lat += latency[l][s][b] + comm[l][s];
                mem += memory[l][s][b];
            }
            if mem <= capacity && best.is_none_or(|v| lat < v) {
                best = Some(lat);
            }
            // odometer increment
            let mut l = 0;
            while l < layers {
                assignment[l] += 1;
                if assignment[l] < strategies {
                    break;
                }
                assignment[l] = 0;
                l += 1;
            }
            if l == layers {
                break;
            }
        }
        per_batch.push(best);
    }
    let mut overall: Option<(u32, f64)> = None;
    for (b, lat) in per_batch.iter().enumerate() {
        if let Some(lat) = *lat {
            let tp = |batch: u32, lat: f64| if lat == 0.0 { f64::INFINITY } else { batch as f64 / lat };
            if overall.is_none_or(|(ob, ol)| tp(batches[b], lat) > tp(ob, ol)) {
                overall = Some((batches[b], lat));
            }
        }
    }
    (overall, per_batch)
}

/// Central difference of `f` at `x` along `t` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], t: &[f64], h: f64) -> Vec<f64> {
    let plus: Vec<f64> = x.iter().zip(t).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(t).map(|(a, b)| a - h * b).collect();
    f(&plus)
        .iter()
        .zip(f(&minus))
        .map(|(p, m)| (p - m) / (2.0 * h))
        .collect()
}

/// Pearson correlation from the textbook two-pass formula.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}
