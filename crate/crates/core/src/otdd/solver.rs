use serde::{Deserialize, Serialize};

use super::{OtddError, Result};

pub const EXACT_BOUND: usize = 512;
const MASS_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Sinkhorn { epsilon: f64 },
}

/// Transport plan with its cost `Σ π_ij C_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    /// Row-major `n_a × n_b`.
    pub plan: Vec<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub total_cost: f64,
    pub solver: SolverKind,
}

impl Coupling {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.n_b + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks(self.n_b).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n_b).map(|j| (0..self.n_a).map(|i| self.at(i, j)).sum()).collect()
    }

    /// Largest absolute marginal violation.
    pub fn violation(&self, mu: &[f64], nu: &[f64]) -> f64 {
        let r = self.row_sums().iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(nu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }
}

fn check_problem(cost: &[f64], n_a: usize, n_b: usize, mu: &[f64], nu: &[f64]) -> Result<()> {
    if cost.len() != n_a * n_b || mu.len() != n_a || nu.len() != n_b || n_a == 0 || n_b == 0 {
        return Err(OtddError::Config(format!(
            "cost of length {} does not fit {}x{} marginals",
            cost.len(),
            mu.len(),
            nu.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(OtddError::Numeric("non-finite cost".into()));
    }
    for w in [mu, nu] {
        if w.iter().any(|&v| !(v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(OtddError::Config("marginals must be non-negative and sum to 1".into()));
        }
    }
    Ok(())
}

/// Exact discrete OT by successive shortest augmenting paths (Dijkstra with
/// Johnson potentials) on the transportation network.
pub fn solve_ot_exact(cost: &[f64], n_a: usize, n_b: usize, mu: &[f64], nu: &[f64]) -> Result<Coupling> {
    if n_a > EXACT_BOUND || n_b > EXACT_BOUND {
        return Err(OtddError::TooLarge { n_a, n_b, bound: EXACT_BOUND });
    }
    check_problem(cost, n_a, n_b, mu, nu)?;
    let shift = cost.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let c = |i: usize, j: usize| cost[i * n_b + j] - shift;

    // nodes: 0 = source, 1..=n_a rows, n_a+1..=n_a+n_b columns, last = sink
    let nodes = n_a + n_b + 2;
    let sink = nodes - 1;
    let row = |i: usize| 1 + i;
    let col = |j: usize| 1 + n_a + j;
    let mut flow = vec![0.0; n_a * n_b];
    let mut sent = vec![0.0; n_a];
    let mut recv = vec![0.0; n_b];
    let mut potential = vec![0.0; nodes];
    let total: f64 = mu.iter().sum::<f64>().min(nu.iter().sum());
    let mut moved = 0.0;

    while total - moved > MASS_EPS {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        dist[0] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == sink {
                break;
            }
            done[u] = true;
            let relax = |v: usize, edge_cost: f64, dist: &mut Vec<f64>, prev: &mut Vec<usize>| {
                let reduced = (edge_cost + potential[u] - potential[v]).max(0.0);
                if dist[u] + reduced < dist[v] {
                    dist[v] = dist[u] + reduced;
                    prev[v] = u;
                }
            };
            if u == 0 {
                for i in 0..n_a {
                    if mu[i] - sent[i] > MASS_EPS {
                        relax(row(i), 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u <= n_a {
                let i = u - 1;
                for j in 0..n_b {
                    relax(col(j), c(i, j), &mut dist, &mut prev);
                }
                if sent[i] > MASS_EPS {
                    relax(0, 0.0, &mut dist, &mut prev);
                }
            } else {
                let j = u - 1 - n_a;
                for i in 0..n_a {
                    if flow[i * n_b + j] > MASS_EPS {
                        relax(row(i), -c(i, j), &mut dist, &mut prev);
                    }
                }
                if nu[j] - recv[j] > MASS_EPS {
                    relax(sink, 0.0, &mut dist, &mut prev);
                }
            }
        }
        if !dist[sink].is_finite() {
            return Err(OtddError::Numeric("transport network disconnected".into()));
        }
        for v in 0..nodes {
            potential[v] += dist[v].min(dist[sink]);
        }

        // walk back from the sink to find the bottleneck
        let mut path = vec![sink];
        let mut v = sink;
        while v != 0 {
            v = prev[v];
            path.push(v);
        }
        path.reverse();
        let mut amount = f64::INFINITY;
        for w in path.windows(2) {
            let (u, v) = (w[0], w[1]);
            let cap = match (u, v) {
                (0, v) => mu[v - 1] - sent[v - 1],
                (u, 0) => sent[u - 1],
                (u, v) if v == sink => nu[u - 1 - n_a] - recv[u - 1 - n_a],
                (u, _) if u <= n_a => f64::INFINITY,
                (u, v) => flow[(v - 1) * n_b + (u - 1 - n_a)],
            };
            amount = amount.min(cap);
        }
        for w in path.windows(2) {
            let (u, v) = (w[0], w[1]);
            match (u, v) {
                (0, v) => sent[v - 1] += amount,
                (u, 0) => sent[u - 1] -= amount,
                (u, v) if v == sink => recv[u - 1 - n_a] += amount,
                (u, v) if u <= n_a => flow[(u - 1) * n_b + (v - 1 - n_a)] += amount,
                (u, v) => flow[(v - 1) * n_b + (u - 1 - n_a)] -= amount,
            }
        }
        moved += amount;
    }
    for f in &mut flow {
        if *f < MASS_EPS {
            *f = 0.0;
        }
    }
    let total_cost = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
    Ok(Coupling {
        plan: flow,
        n_a,
        n_b,
        total_cost,
        solver: SolverKind::Exact,
    })
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT by log-domain Sinkhorn with ε-scaling: ε starts at the cost
/// range and halves until it reaches `epsilon`. Converged when the largest
/// marginal violation is at most `tol`.
pub fn solve_ot_sinkhorn(
    cost: &[f64],
    n_a: usize,
    n_b: usize,
    mu: &[f64],
    nu: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Coupling> {
    if !(epsilon > 0.0) {
        return Err(OtddError::Config("sinkhorn epsilon must be positive".into()));
    }
    check_problem(cost, n_a, n_b, mu, nu)?;
    let log_mu: Vec<f64> = mu.iter().map(|v| v.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|v| v.ln()).collect();
    let range = cost.iter().cloned().fold(0.0, f64::max) - cost.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut eps = range.max(epsilon);
    let mut f = vec![0.0; n_a];
    let mut g = vec![0.0; n_b];
    let plan_of = |f: &[f64], g: &[f64], eps: f64| -> Vec<f64> {
        let mut p = vec![0.0; n_a * n_b];
        for i in 0..n_a {
            for j in 0..n_b {
                p[i * n_b + j] = ((f[i] + g[j] - cost[i * n_b + j]) / eps).exp();
            }
        }
        p
    };
    let mut iters = 0;
    let mut violation = f64::INFINITY;
    loop {
        let last_stage = eps <= epsilon;
        let stage_cap = if last_stage { usize::MAX } else { 50 };
        let mut stage_iters = 0;
        while iters < max_iter && stage_iters < stage_cap {
            for i in 0..n_a {
                if mu[i] == 0.0 {
                    f[i] = f64::NEG_INFINITY;
                    continue;
                }
                let row = (0..n_b).map(|j| (g[j] - cost[i * n_b + j]) / eps);
                f[i] = eps * (log_mu[i] - logsumexp(row));
            }
            for j in 0..n_b {
                if nu[j] == 0.0 {
                    g[j] = f64::NEG_INFINITY;
                    continue;
                }
                let column = (0..n_a).map(|i| (f[i] - cost[i * n_b + j]) / eps);
                g[j] = eps * (log_nu[j] - logsumexp(column));
            }
            iters += 1;
            stage_iters += 1;
            if last_stage || stage_iters % 10 == 0 {
                // columns are exact after the g update; rows carry the error
                violation = (0..n_a)
                    .map(|i| {
                        let s: f64 = (0..n_b).map(|j| ((f[i] + g[j] - cost[i * n_b + j]) / eps).exp()).sum();
                        (s - mu[i]).abs()
                    })
                    .fold(0.0, f64::max);
                if violation <= tol {
                    break;
                }
            }
        }
        if last_stage {
            break;
        }
        if iters >= max_iter {
            break;
        }
        eps = (eps / 2.0).max(epsilon);
    }
    if !(violation <= tol) || eps > epsilon {
        return Err(OtddError::NotConverged {
            iterations: iters,
            violation,
        });
    }
    let plan = plan_of(&f, &g, eps);
    let total_cost = plan.iter().zip(cost).map(|(p, c)| p * c).sum();
    Ok(Coupling {
        plan,
        n_a,
        n_b,
        total_cost,
        solver: SolverKind::Sinkhorn { epsilon },
    })
}
