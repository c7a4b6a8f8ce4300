//! Reference implementations written independently of the library code:
//! brute-force neighbour sets and agreement, nested-loop cell counts,
//! pairwise-difference ANOVA sums, a quadrature incomplete beta and the
//! closed-form even-df chi-square tail.

use std::collections::BTreeSet;

/// Annotated graph neighbours of `v` plus its `k_feat` nearest annotated
/// nodes by squared Euclidean distance, ties to the lower id.
pub fn neighbor_set(
    v: usize,
    labels: &[Option<usize>],
    edges: &[(usize, usize)],
    emb: &[Vec<f64>],
    k_feat: usize,
) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for &(a, b) in edges {
        if a == v && labels[b].is_some() {
            out.insert(b);
        }
        if b == v && labels[a].is_some() {
            out.insert(a);
        }
    }
    let dist = |u: usize| -> f64 {
        let mut s = 0.0;
        for j in 0..emb[v].len() {
            let d = emb[v][j] - emb[u][j];
            s += d * d;
        }
        s
    };
    let mut taken = BTreeSet::new();
    for _ in 0..k_feat {
        let mut best: Option<(f64, usize)> = None;
        for u in 0..labels.len() {
            if u == v || labels[u].is_none() || taken.contains(&u) {
                continue;
            }
            let d = dist(u);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, u));
            }
        }
        match best {
            Some((_, u)) => {
                taken.insert(u);
            }
            None => break,
        }
    }
    out.extend(taken);
    out.into_iter().collect()
}

pub fn agreement(v: usize, nbrs: &[usize], labels: &[Option<usize>]) -> Option<f64> {
    if nbrs.is_empty() {
        return None;
    }
    let same = nbrs.iter().filter(|&&u| labels[u] == labels[v]).count();
    Some(same as f64 / nbrs.len() as f64)
}

/// `(cluster, class, support, correct)` for every cell with at least
/// `min_cell` annotated, ground-truth-labeled nodes, ordered by class then
/// cluster.
pub fn cell_counts(
    ann: &[Option<usize>],
    truth: &[usize],
    clusters: &[usize],
    k: usize,
    c: usize,
    min_cell: usize,
) -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    for class in 0..c {
        for cluster in 0..k {
            let mut support = 0;
            let mut correct = 0;
            for v in 0..ann.len() {
                if let Some(l) = ann[v] {
                    if clusters[v] == cluster && truth[v] == class {
                        support += 1;
                        if l == class {
                            correct += 1;
                        }
                    }
                }
            }
            if support >= min_cell.max(1) {
                out.push((cluster, class, support, correct));
            }
        }
    }
    out
}

/// One-way ANOVA from the pairwise identities
/// `SSW = Σ_g (1/n_g) Σ_{a<b} (x_a − x_b)²` and
/// `SSB = (1/N) Σ_{g<h} n_g n_h (m_g − m_h)²`, which involve no
/// subtraction of large sums.
pub fn anova(groups: &[Vec<f64>]) -> (f64, f64) {
    let n: usize = groups.iter().map(Vec::len).sum();
    let mut ssw = 0.0;
    for g in groups {
        let mut s = 0.0;
        for a in 0..g.len() {
            for b in a + 1..g.len() {
                s += (g[a] - g[b]).powi(2);
            }
        }
        ssw += s / g.len() as f64;
    }
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let mut ssb = 0.0;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            ssb += (groups[i].len() * groups[j].len()) as f64 * (means[i] - means[j]).powi(2);
        }
    }
    ssb /= n as f64;
    if ssw == 0.0 && ssb == 0.0 {
        return (0.0, 1.0);
    }
    if ssw == 0.0 {
        return (f64::MAX, f64::MIN_POSITIVE);
    }
    let (d1, d2) = ((groups.len() - 1) as f64, (n - groups.len()) as f64);
    let f = (ssb / d1) / (ssw / d2);
    (f, f_tail(f, d1, d2).max(f64::MIN_POSITIVE))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Tanh-sinh rule for `∫₀¹ u^(a−1) (1−u)^(b−1) g(u) du` after the change
/// of variable `u = σ(π sinh t)`, which folds the endpoint powers into the
/// weight. Returns the natural log of the integral.
fn ln_beta_integral(a: f64, b: f64, g: impl Fn(f64) -> f64) -> f64 {
    let h = 1.0 / 128.0;
    let t_max = 5.0;
    let steps = (t_max / h) as i64;
    let mut terms = Vec::with_capacity(2 * steps as usize + 1);
    for i in -steps..=steps {
        let t = i as f64 * h;
        let s = std::f64::consts::PI * t.sinh();
        let ln_u = -softplus(-s);
        let ln_1mu = -softplus(s);
        let gu = g(ln_u.exp());
        if gu <= 0.0 {
            continue;
        }
        terms.push(a * ln_u + b * ln_1mu + (std::f64::consts::PI * t.cosh()).ln() + gu.ln());
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + h.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by quadrature, as a log.
fn ln_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    // ∫₀ˣ t^(a−1)(1−t)^(b−1) dt = x^a ∫₀¹ u^(a−1) (1 − x u)^(b−1) du
    let part = a * x.ln() + ln_beta_integral(a, 1.0, |u| (1.0 - x * u).powf(b - 1.0));
    part - ln_beta_integral(a, b, |_| 1.0)
}

/// Upper tail of the F(d1, d2) distribution.
pub fn f_tail(f: f64, d1: f64, d2: f64) -> f64 {
    let z = d2 / (d2 + d1 * f);
    if z <= 0.5 {
        ln_inc_beta(d2 / 2.0, d1 / 2.0, z).exp()
    } else {
        1.0 - ln_inc_beta(d1 / 2.0, d2 / 2.0, 1.0 - z).exp()
    }
}

/// Fisher's method via `P(χ²_{2m} > x) = e^(−x/2) Σ_{j<m} (x/2)^j / j!`.
pub fn fisher(ps: &[f64]) -> f64 {
    let x = -2.0 * ps.iter().map(|p| p.ln()).sum::<f64>();
    let half = x / 2.0;
    let mut ln_fact = 0.0;
    let mut terms = Vec::with_capacity(ps.len());
    for j in 0..ps.len() {
        if j > 0 {
            ln_fact += (j as f64).ln();
        }
        let t = if j == 0 { 0.0 } else { j as f64 * half.ln() - ln_fact };
        terms.push(t);
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_sf = -half + m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    ln_sf.exp().clamp(f64::MIN_POSITIVE, 1.0)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn self_check() -> Result<(), String> {
    // F(2, 4) tail has the closed form (1 + f/2)^(−2)
    for f in [0.1, 1.0, 3.0, 50.0] {
        let want = (1.0 + f / 2.0_f64).powi(-2);
        if rel_err(f_tail(f, 2.0, 4.0), want) > 1e-12 {
            return Err(format!("F(2,4) tail at {f}"));
        }
    }
    // F(1, 1) tail: 1 − (2/π) atan(√f)
    for f in [0.01, 0.7, 9.0] {
        let want = 1.0 - 2.0 / std::f64::consts::PI * f64::sqrt(f).atan();
        if rel_err(f_tail(f, 1.0, 1.0), want) > 1e-12 {
            return Err(format!("F(1,1) tail at {f}"));
        }
    }
    if rel_err(fisher(&[0.05]), 0.05) > 1e-12 {
        return Err("fisher with one p-value".into());
    }
    Ok(())
}
