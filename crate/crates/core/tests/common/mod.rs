//! Reference computations that share no code with the library solver.
#![allow(dead_code)]

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        assert!(d.abs() > 1e-300, "singular system");
        for k in 0..n {
            a[col][k] /= d;
        }
        b[col] /= d;
        for r in 0..n {
            if r != col && a[r][col] != 0.0 {
                let f = a[r][col];
                for k in 0..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    b
}

/// Chain-ladder design row over `2n - 1` columns: intercept, accident-year
/// and development-year dummies with the first level as reference.
fn row(n: usize, i: usize, j: usize) -> Vec<f64> {
    let mut z = vec![0.0; 2 * n - 1];
    z[0] = 1.0;
    if i > 1 {
        z[i - 1] = 1.0;
    }
    if j > 1 {
        z[n + j - 2] = 1.0;
    }
    z
}

/// Log-link GLM with variance `mu^power` (1 = over-dispersed Poisson,
/// 2 = gamma) fitted by iteratively reweighted least squares. Returns the
/// coefficients and the per-accident-year reserves `i = 2..=n`.
pub fn glm_reserves(rows: &[Vec<f64>], power: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let p = 2 * n - 1;
    let mut obs = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        for (j, &y) in r.iter().enumerate() {
            obs.push((row(n, i + 1, j + 1), y));
        }
    }
    let mut eta: Vec<f64> = obs.iter().map(|(_, y)| y.max(1.0).ln()).collect();
    let mut beta = vec![0.0; p];
    for _ in 0..200 {
        let mut xtwx = vec![vec![0.0; p]; p];
        let mut xtwz = vec![0.0; p];
        for ((z, y), e) in obs.iter().zip(&eta) {
            let mu = e.exp();
            let w = mu.powf(2.0 - power);
            let work = e + (y - mu) / mu;
            for a in 0..p {
                if z[a] == 0.0 {
                    continue;
                }
                xtwz[a] += w * z[a] * work;
                for b in 0..p {
                    xtwx[a][b] += w * z[a] * z[b];
                }
            }
        }
        let next = solve(xtwx, xtwz);
        let change = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        eta = obs.iter().map(|(z, _)| z.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
        if change < 1e-13 {
            break;
        }
    }
    let reserves = (2..=n)
        .map(|i| {
            (n + 2 - i..=n)
                .map(|j| row(n, i, j).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().exp())
                .sum()
        })
        .collect();
    (beta, reserves)
}

/// Classical volume-weighted chain-ladder reserves for `i = 2..=n` from
/// incremental rows.
pub fn chain_ladder_reserves(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let cum: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .scan(0.0, |s, x| {
                    *s += x;
                    Some(*s)
                })
                .collect()
        })
        .collect();
    let factors: Vec<f64> = (0..n - 1)
        .map(|j| {
            let (num, den) = cum
                .iter()
                .filter(|r| r.len() > j + 1)
                .fold((0.0, 0.0), |(a, b), r| (a + r[j + 1], b + r[j]));
            num / den
        })
        .collect();
    (1..n)
        .map(|i| {
            let last = *cum[i].last().unwrap();
            let f: f64 = factors[n - 1 - i..].iter().product();
            last * (f - 1.0)
        })
        .collect()
}

/// Process plus estimation variance of the reserve of one accident year for
/// an independence fit: `phi sum h(mu) + g' Sigma g` with `g = sum D'`.
pub fn independence_mse(mu: &[f64], jac: &[Vec<f64>], sigma: &[Vec<f64>], phi: f64, power: f64) -> f64 {
    let process: f64 = mu.iter().map(|m| phi * m.powf(power)).sum();
    let p = sigma.len();
    let g: Vec<f64> = (0..p).map(|k| jac.iter().map(|r| r[k]).sum()).collect();
    let mut est = 0.0;
    for a in 0..p {
        for b in 0..p {
            est += g[a] * sigma[a][b] * g[b];
        }
    }
    process + est
}
