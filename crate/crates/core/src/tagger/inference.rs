use super::features::ChunkFeatures;

pub const NUM_LABELS: usize = 2;
pub const O: usize = 0;
pub const START: usize = 1;

/// Borrowed view of CRF weights. `emission` is flat, `[feature * 2 + label]`.
#[derive(Debug, Clone, Copy)]
pub struct Potentials<'a> {
    pub emission: &'a [f64],
    pub transition: [[f64; 2]; 2],
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl<'a> Potentials<'a> {
    /// Splits a flat parameter vector laid out as
    /// `[emission (2F) | transition (4) | start (2) | end (2)]`.
    pub fn from_flat(theta: &'a [f64]) -> Self {
        let f2 = theta.len() - 8;
        let t = &theta[f2..];
        Potentials {
            emission: &theta[..f2],
            transition: [[t[0], t[1]], [t[2], t[3]]],
            start: [t[4], t[5]],
            end: [t[6], t[7]],
        }
    }

    pub fn emission_scores(&self, features: &ChunkFeatures) -> Vec<[f64; 2]> {
        (0..features.len())
            .map(|t| {
                let mut s = [0.0; 2];
                for &(f, v) in features.position(t) {
                    let base = 2 * f as usize;
                    s[0] += v * self.emission[base];
                    s[1] += v * self.emission[base + 1];
                }
                s
            })
            .collect()
    }

    /// Unnormalized log score of one labeling.
    pub fn sequence_score(&self, emissions: &[[f64; 2]], labels: &[usize]) -> f64 {
        let Some((&first, _)) = labels.split_first() else {
            return 0.0;
        };
        let mut score = self.start[first] + self.end[labels[labels.len() - 1]];
        for (t, &y) in labels.iter().enumerate() {
            score += emissions[t][y];
            if t > 0 {
                score += self.transition[labels[t - 1]][y];
            }
        }
        score
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub log_partition: f64,
    /// `node[t][y] = P(y_t = y)`.
    pub node: Vec<[f64; 2]>,
    /// `edge[t][a][b] = P(y_t = a, y_{t+1} = b)`, one entry per adjacent pair.
    pub edge: Vec<[[f64; 2]; 2]>,
}

/// Below this a factor has lost precision to underflow.
const TINY: f64 = 1e-250;

/// Forward-backward over precomputed emission scores.
///
/// Emissions are shifted by their per-position maximum before
/// exponentiation and the forward and backward vectors are renormalized at
/// every step; the log partition is recovered as the sum of the log scale
/// factors and shifts. If any shifted factor would underflow, the chunk is
/// redone entirely in log space.
pub fn forward_backward(pot: &Potentials, emissions: &[[f64; 2]]) -> Marginals {
    let n = emissions.len();
    if n == 0 {
        return Marginals {
            log_partition: 0.0,
            node: Vec::new(),
            edge: Vec::new(),
        };
    }
    let tmax = pot.transition.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let m = pot.transition.map(|row| row.map(|w| (w - tmax).exp()));
    let smax = pot.start[0].max(pot.start[1]);
    let start = pot.start.map(|w| (w - smax).exp());
    let emax = pot.end[0].max(pot.end[1]);
    let end = pot.end.map(|w| (w - emax).exp());

    let mut psi = Vec::with_capacity(n);
    let mut log_partition = smax + emax + tmax * (n - 1) as f64;
    let mut smallest = m.iter().flatten().chain(&start).chain(&end).fold(1.0f64, |a, &b| a.min(b));
    for e in emissions {
        let hi = e[0].max(e[1]);
        log_partition += hi;
        let p = [(e[0] - hi).exp(), (e[1] - hi).exp()];
        smallest = smallest.min(p[0]).min(p[1]);
        psi.push(p);
    }
    if smallest < TINY {
        return forward_backward_log(pot, emissions);
    }

    let mut alpha = vec![[0.0; 2]; n];
    let mut scale = vec![0.0; n];
    let mut a = [start[0] * psi[0][0], start[1] * psi[0][1]];
    for t in 0..n {
        if t > 0 {
            let p = alpha[t - 1];
            a = [
                psi[t][0] * (p[0] * m[0][0] + p[1] * m[1][0]),
                psi[t][1] * (p[0] * m[0][1] + p[1] * m[1][1]),
            ];
        }
        let c = a[0] + a[1];
        scale[t] = c;
        alpha[t] = [a[0] / c, a[1] / c];
        log_partition += c.ln();
    }
    let z_end = alpha[n - 1][0] * end[0] + alpha[n - 1][1] * end[1];
    log_partition += z_end.ln();

    let mut beta = vec![[0.0; 2]; n];
    beta[n - 1] = [end[0] / z_end, end[1] / z_end];
    for t in (0..n - 1).rev() {
        let w = [psi[t + 1][0] * beta[t + 1][0], psi[t + 1][1] * beta[t + 1][1]];
        let c = scale[t + 1];
        beta[t] = [
            (m[0][0] * w[0] + m[0][1] * w[1]) / c,
            (m[1][0] * w[0] + m[1][1] * w[1]) / c,
        ];
    }

    let node = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| [a[0] * b[0], a[1] * b[1]])
        .collect();
    let edge = (0..n - 1)
        .map(|t| {
            let a = alpha[t];
            let c = scale[t + 1];
            let w = [psi[t + 1][0] * beta[t + 1][0] / c, psi[t + 1][1] * beta[t + 1][1] / c];
            [
                [a[0] * m[0][0] * w[0], a[0] * m[0][1] * w[1]],
                [a[1] * m[1][0] * w[0], a[1] * m[1][1] * w[1]],
            ]
        })
        .collect();
    Marginals {
        log_partition,
        node,
        edge,
    }
}

fn lse2(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// Log-space recursions: slower, but exact for arbitrarily large weights.
pub fn forward_backward_log(pot: &Potentials, emissions: &[[f64; 2]]) -> Marginals {
    let n = emissions.len();
    if n == 0 {
        return Marginals {
            log_partition: 0.0,
            node: Vec::new(),
            edge: Vec::new(),
        };
    }
    let tr = pot.transition;
    let mut alpha = vec![[0.0; 2]; n];
    alpha[0] = [pot.start[0] + emissions[0][0], pot.start[1] + emissions[0][1]];
    for t in 1..n {
        let p = alpha[t - 1];
        for y in 0..NUM_LABELS {
            alpha[t][y] = emissions[t][y] + lse2(p[0] + tr[0][y], p[1] + tr[1][y]);
        }
    }
    let log_partition = lse2(alpha[n - 1][0] + pot.end[0], alpha[n - 1][1] + pot.end[1]);
    let mut beta = vec![[0.0; 2]; n];
    beta[n - 1] = pot.end;
    for t in (0..n - 1).rev() {
        let w = [emissions[t + 1][0] + beta[t + 1][0], emissions[t + 1][1] + beta[t + 1][1]];
        for y in 0..NUM_LABELS {
            beta[t][y] = lse2(tr[y][0] + w[0], tr[y][1] + w[1]);
        }
    }
    let node = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| [(a[0] + b[0] - log_partition).exp(), (a[1] + b[1] - log_partition).exp()])
        .collect();
    let edge = (0..n - 1)
        .map(|t| {
            let mut e = [[0.0; 2]; 2];
            for (a, row) in e.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    *cell = (alpha[t][a] + tr[a][b] + emissions[t + 1][b] + beta[t + 1][b] - log_partition).exp();
                }
            }
            e
        })
        .collect();
    Marginals {
        log_partition,
        node,
        edge,
    }
}

/// Highest-scoring labeling and its score. Ties go to `O`.
pub fn viterbi(pot: &Potentials, emissions: &[[f64; 2]]) -> (Vec<usize>, f64) {
    let n = emissions.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut back = vec![[O; 2]; n];
    let mut delta = [pot.start[0] + emissions[0][0], pot.start[1] + emissions[0][1]];
    for t in 1..n {
        let mut next = [0.0; 2];
        for y in 0..NUM_LABELS {
            let from_o = delta[O] + pot.transition[O][y];
            let from_s = delta[START] + pot.transition[START][y];
            let (best, arg) = if from_s > from_o { (from_s, START) } else { (from_o, O) };
            next[y] = best + emissions[t][y];
            back[t][y] = arg;
        }
        delta = next;
    }
    let final_o = delta[O] + pot.end[O];
    let final_s = delta[START] + pot.end[START];
    let (score, mut y) = if final_s > final_o { (final_s, START) } else { (final_o, O) };
    let mut labels = vec![O; n];
    for t in (0..n).rev() {
        labels[t] = y;
        y = back[t][y];
    }
    (labels, score)
}
