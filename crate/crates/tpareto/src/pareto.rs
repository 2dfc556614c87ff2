//! Min-norm weighting over task gradients.
//!
//! Finds simplex weights minimizing `‖Σ αᵗ gᵗ‖²`: the analytic solution for
//! two tasks, Frank-Wolfe with that solution as the exact line search for
//! more, and a brute-force simplex-grid oracle used by tests.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::GradientVector;

/// Counts calls into the min-norm solver. Lets tests assert structurally
/// that plain (non-Pareto) training never reaches the solver.
static SOLVER_CALLS: AtomicU64 = AtomicU64::new(0);

pub fn solver_call_count() -> u64 {
    SOLVER_CALLS.load(Ordering::Relaxed)
}

pub fn reset_solver_call_count() {
    SOLVER_CALLS.store(0, Ordering::Relaxed);
}

/// T gradients of one parameter group under different losses.
#[derive(Debug, Clone)]
pub struct ParetoProblem {
    gradients: Vec<GradientVector>,
}

impl ParetoProblem {
    pub fn new(gradients: Vec<GradientVector>) -> Result<Self> {
        if gradients.is_empty() {
            return Err(Error::InvalidConfig("a Pareto problem needs at least one gradient".into()));
        }
        let dim = gradients[0].dim();
        for g in &gradients[1..] {
            if g.dim() != dim {
                return Err(Error::DimMismatch(dim, g.dim()));
            }
        }
        Ok(Self { gradients })
    }

    pub fn task_count(&self) -> usize {
        self.gradients.len()
    }

    pub fn gradients(&self) -> &[GradientVector] {
        &self.gradients
    }

    /// Gram matrix `M[i][j] = gᵢ · gⱼ`. Everything downstream works off it.
    #[allow(clippy::needless_range_loop)]
    fn gram(&self) -> Vec<Vec<f64>> {
        let t = self.task_count();
        let mut m = vec![vec![0.0; t]; t];
        for i in 0..t {
            for j in i..t {
                let d = self.gradients[i].dot(&self.gradients[j]);
                m[i][j] = d;
                m[j][i] = d;
            }
        }
        m
    }

    /// `‖Σ αᵗ gᵗ‖²` from the Gram matrix.
    pub fn combined_norm_sq(&self, alpha: &[f64]) -> f64 {
        quad_form(&self.gram(), alpha)
    }

    /// The combined vector `Σ αᵗ gᵗ`.
    pub fn combine(&self, alpha: &[f64]) -> GradientVector {
        let mut out = GradientVector::zeros(self.gradients[0].group, self.gradients[0].dim());
        for (g, &a) in self.gradients.iter().zip(alpha) {
            out.add_scaled(g, a);
        }
        out
    }
}

fn quad_form(m: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let t = alpha.len();
    let mut s = 0.0;
    for i in 0..t {
        for j in 0..t {
            s += alpha[i] * m[i][j] * alpha[j];
        }
    }
    s
}

/// A point on the T-simplex: non-negative weights summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoWeights {
    pub alpha: Vec<f64>,
}

impl ParetoWeights {
    /// Clamps negatives to zero and renormalizes so the simplex invariants
    /// hold exactly.
    pub fn project(mut alpha: Vec<f64>) -> Self {
        for a in &mut alpha {
            if *a < 0.0 {
                *a = 0.0;
            }
        }
        let sum: f64 = alpha.iter().sum();
        if sum > 0.0 {
            for a in &mut alpha {
                *a /= sum;
            }
        } else {
            let t = alpha.len();
            alpha.iter_mut().for_each(|a| *a = 1.0 / t as f64);
        }
        Self { alpha }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Frank-Wolfe stopping criteria. The two-task case is solved in closed
/// form and never iterates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-7 }
    }
}

/// Below this squared distance two gradients are treated as identical and
/// the two-task weight defaults to 1/2 (every convex combination is the
/// same vector, and the symmetric choice keeps relative weights stable).
const DEGENERATE_DIST_SQ: f64 = 1e-12;

/// Weight on `g1` minimizing `‖α g1 + (1−α) g2‖²` over `α ∈ [0, 1]`:
/// `clip(((g2 − g1)·g2) / ‖g1 − g2‖², [0, 1])`.
pub fn analytic_two_task(g1: &GradientVector, g2: &GradientVector) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimMismatch(g1.dim(), g2.dim()));
    }
    let g11 = g1.dot(g1);
    let g22 = g2.dot(g2);
    let g12 = g1.dot(g2);
    Ok(two_task_from_products(g11, g12, g22))
}

/// Same computation from inner products; shared with the line search.
fn two_task_from_products(g11: f64, g12: f64, g22: f64) -> f64 {
    let denom = g11 - 2.0 * g12 + g22; // ‖g1 − g2‖²
    if denom < DEGENERATE_DIST_SQ {
        return 0.5;
    }
    ((g22 - g12) / denom).clamp(0.0, 1.0)
}

/// Min-norm point in the convex hull of the problem's gradients.
///
/// T = 1 returns weight 1; T = 2 uses the closed form; T > 2 runs
/// Frank-Wolfe with pairwise (swap) steps from uniform weights, using the
/// analytic two-task solution as exact line search and stopping when the
/// duality gap falls below `cfg.tol` (measured on the Gram matrix
/// normalized by the largest squared gradient norm, so convergence is
/// invariant to rescaling the whole problem). Pairwise steps keep the gap
/// shrinking linearly when the minimizer sits on a face of the simplex,
/// where the classic step zigzags.
pub fn frank_wolfe_minnorm(problem: &ParetoProblem, cfg: &SolverConfig) -> Result<ParetoWeights> {
    SOLVER_CALLS.fetch_add(1, Ordering::Relaxed);
    let t = problem.task_count();
    if t == 1 {
        return Ok(ParetoWeights { alpha: vec![1.0] });
    }
    if t == 2 {
        let a = analytic_two_task(&problem.gradients()[0], &problem.gradients()[1])?;
        return Ok(ParetoWeights::project(vec![a, 1.0 - a]));
    }

    let mut m = problem.gram();
    // normalize by the largest squared norm so the stopping rule (and the
    // whole iterate sequence) is invariant to rescaling every gradient
    let scale = (0..t).map(|i| m[i][i]).fold(0.0f64, f64::max);
    if scale > 0.0 {
        for row in &mut m {
            for v in row.iter_mut() {
                *v /= scale;
            }
        }
    }
    let mut alpha = vec![1.0 / t as f64; t];
    for _ in 0..cfg.max_iter {
        // mv = M·α ; objective f = αᵀMα ; duality gap = 2(f − min_t mv_t)
        let mv: Vec<f64> = (0..t)
            .map(|i| (0..t).map(|j| m[i][j] * alpha[j]).sum())
            .collect();
        let f = alpha.iter().zip(&mv).map(|(a, v)| a * v).sum::<f64>();
        let (toward, &toward_val) = mv
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite gram"))
            .expect("non-empty");
        let gap = 2.0 * (f - toward_val);
        if gap <= cfg.tol {
            break;
        }
        // Away vertex: the worst coordinate still carrying weight.
        let (away, &away_val) = mv
            .iter()
            .enumerate()
            .filter(|(i, _)| alpha[*i] > 0.0)
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite gram"))
            .expect("weights sum to 1");
        if away == toward {
            break;
        }
        // Move mass from `away` to `toward`: minimize
        // ‖g_α + γ (g_toward − g_away)‖² over γ ∈ [0, α_away].
        let denom = m[toward][toward] - 2.0 * m[toward][away] + m[away][away];
        let gamma = if denom < DEGENERATE_DIST_SQ {
            alpha[away]
        } else {
            ((away_val - toward_val) / denom).clamp(0.0, alpha[away])
        };
        alpha[away] -= gamma;
        alpha[toward] += gamma;
    }
    kkt_polish(&m, &mut alpha);
    Ok(ParetoWeights::project(alpha))
}

/// Coordinates below this are treated as outside the support when
/// polishing. Pairwise steps zero dropped coordinates exactly, so active
/// ones sit far above it.
const SUPPORT_EPS: f64 = 1e-9;

/// Replaces a converged iterate with the exact minimizer on its support:
/// solving `M_S z = 1` and normalizing gives the KKT point of the
/// equality-constrained problem. Applied only when the candidate is
/// feasible and certifies global optimality; otherwise the iterate is
/// kept. This pins the returned weights to the data rather than to the
/// iteration path, which ill-conditioned instances would otherwise smear.
fn kkt_polish(m: &[Vec<f64>], alpha: &mut [f64]) {
    let support: Vec<usize> =
        (0..alpha.len()).filter(|&i| alpha[i] > SUPPORT_EPS).collect();
    if support.is_empty() {
        return;
    }
    let s = support.len();
    let mut candidate = vec![0.0; alpha.len()];
    if s == 1 {
        candidate[support[0]] = 1.0;
    } else {
        let g: Vec<Vec<f64>> =
            support.iter().map(|&i| support.iter().map(|&j| m[i][j]).collect()).collect();
        let Some(z) = solve_linear(&g, &vec![1.0; s]) else {
            return;
        };
        let total: f64 = z.iter().sum();
        if !(total.is_finite() && total.abs() > 1e-300) {
            return;
        }
        for (&i, &zi) in support.iter().zip(&z) {
            candidate[i] = zi / total;
        }
        // feasibility: tolerate elimination round-off, nothing more
        if candidate.iter().any(|&a| a < -1e-9) {
            return;
        }
        for c in candidate.iter_mut() {
            if *c < 0.0 {
                *c = 0.0;
            }
        }
    }
    // global optimality certificate on the full coordinate set
    let t = alpha.len();
    let mv: Vec<f64> =
        (0..t).map(|i| (0..t).map(|j| m[i][j] * candidate[j]).sum()).collect();
    let f: f64 = candidate.iter().zip(&mv).map(|(a, v)| a * v).sum();
    let f_old: f64 = {
        let mv_old: Vec<f64> =
            (0..t).map(|i| (0..t).map(|j| m[i][j] * alpha[j]).sum()).collect();
        alpha.iter().zip(&mv_old).map(|(a, v)| a * v).sum()
    };
    let ok = mv.iter().all(|&v| v >= f - 1e-9) && f <= f_old + 1e-12;
    if ok {
        alpha.copy_from_slice(&candidate);
    }
}

/// Gaussian elimination with partial pivoting; `None` for (near-)singular
/// systems.
fn solve_linear(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    let scale = aug
        .iter()
        .flat_map(|r| r[..n].iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let (pivot, pval) = (col..n)
            .map(|r| (r, aug[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .expect("non-empty");
        if pval < 1e-12 * scale {
            return None;
        }
        aug.swap(col, pivot);
        for r in col + 1..n {
            let factor = aug[r][col] / aug[col][col];
            let (head, tail) = aug.split_at_mut(r);
            let pivot_row = &head[col];
            for (c, v) in tail[0].iter_mut().enumerate().take(n + 1).skip(col) {
                *v -= factor * pivot_row[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = aug[row][n];
        for c in row + 1..n {
            acc -= aug[row][c] * x[c];
        }
        x[row] = acc / aug[row][row];
    }
    Some(x)
}

/// Exhaustive minimizer of `‖Σ αᵗ gᵗ‖²` over the simplex grid with spacing
/// `grid_step` (weights are multiples of `1/round(1/grid_step)`).
/// Brute-force test oracle; only feasible for small T.
pub fn minnorm_oracle(problem: &ParetoProblem, grid_step: f64) -> Result<ParetoWeights> {
    let t = problem.task_count();
    if t > 4 {
        return Err(Error::OracleInfeasible(format!("grid enumeration over T={t} tasks")));
    }
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::InvalidConfig(format!("grid_step {grid_step} outside (0, 0.5]")));
    }
    let k = (1.0 / grid_step).round() as usize;
    let m = problem.gram();
    let mut best = vec![0.0; t];
    let mut best_val = f64::INFINITY;
    let mut counts = vec![0usize; t];
    enumerate_compositions(k, t, &mut counts, 0, &mut |c| {
        let alpha: Vec<f64> = c.iter().map(|&x| x as f64 / k as f64).collect();
        let v = quad_form(&m, &alpha);
        if v < best_val {
            best_val = v;
            best = alpha;
        }
    });
    Ok(ParetoWeights::project(best))
}

/// Visits every way to write `total` as an ordered sum of `slots`
/// non-negative integers.
fn enumerate_compositions(
    total: usize,
    slots: usize,
    counts: &mut Vec<usize>,
    idx: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if idx == slots - 1 {
        counts[idx] = total;
        visit(counts);
        return;
    }
    for c in 0..=total {
        counts[idx] = c;
        enumerate_compositions(total - c, slots, counts, idx + 1, visit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GroupId;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gv(values: Vec<f64>) -> GradientVector {
        GradientVector { group: GroupId::Theta1, values }
    }

    fn random_problem(rng: &mut ChaCha8Rng, t: usize, dim: usize) -> ParetoProblem {
        let grads = (0..t)
            .map(|_| gv((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        ParetoProblem::new(grads).unwrap()
    }

    #[test]
    fn two_task_symmetric_orthogonal() {
        let a = analytic_two_task(&gv(vec![1.0, 0.0]), &gv(vec![0.0, 1.0])).unwrap();
        assert!((a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_task_collinear_clips_to_shorter() {
        let a = analytic_two_task(&gv(vec![2.0, 0.0]), &gv(vec![1.0, 0.0])).unwrap();
        assert_eq!(a, 0.0);
        // brute-force 1-D grid confirms the min-norm point is g2
        let p = ParetoProblem::new(vec![gv(vec![2.0, 0.0]), gv(vec![1.0, 0.0])]).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        let mut x = 0.0;
        while x <= 1.0 {
            let v = p.combined_norm_sq(&[x, 1.0 - x]);
            if v < best.0 {
                best = (v, x);
            }
            x += 1e-4;
        }
        assert!(best.1.abs() < 1e-3);
    }

    #[test]
    fn two_task_identical_gradients_degenerate() {
        let g = gv(vec![1.0, 1.0]);
        let a = analytic_two_task(&g, &g).unwrap();
        assert_eq!(a, 0.5);
        let p = ParetoProblem::new(vec![g.clone(), g]).unwrap();
        let c = p.combine(&[a, 1.0 - a]);
        assert_eq!(c.values, vec![1.0, 1.0]);
    }

    #[test]
    fn two_task_dim_mismatch_is_an_error() {
        let err = analytic_two_task(&gv(vec![1.0]), &gv(vec![1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimMismatch(1, 2)));
    }

    #[test]
    fn scale_invariance_of_two_task_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let g1 = gv((0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
            let g2 = gv((0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
            let diff: f64 = g1
                .values
                .iter()
                .zip(&g2.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if diff < 1e-6 {
                continue;
            }
            let c = rng.random_range(1e-3..1e3);
            let a = analytic_two_task(&g1, &g2).unwrap();
            let b = analytic_two_task(&g1.scaled(c), &g2.scaled(c)).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b} at c={c}");
        }
    }

    #[test]
    fn frank_wolfe_single_task() {
        let p = ParetoProblem::new(vec![gv(vec![3.0, -1.0])]).unwrap();
        let w = frank_wolfe_minnorm(&p, &SolverConfig::default()).unwrap();
        assert_eq!(w.alpha, vec![1.0]);
    }

    #[test]
    fn frank_wolfe_orthonormal_basis_uniform() {
        let p = ParetoProblem::new(vec![
            gv(vec![1.0, 0.0, 0.0]),
            gv(vec![0.0, 1.0, 0.0]),
            gv(vec![0.0, 0.0, 1.0]),
        ])
        .unwrap();
        let w = frank_wolfe_minnorm(&p, &SolverConfig::default()).unwrap();
        for a in &w.alpha {
            assert!((a - 1.0 / 3.0).abs() < 1e-6);
        }
        let v = p.combined_norm_sq(&w.alpha);
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn frank_wolfe_two_tasks_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 2, 8);
            let w = frank_wolfe_minnorm(&p, &SolverConfig::default()).unwrap();
            let a = analytic_two_task(&p.gradients()[0], &p.gradients()[1]).unwrap();
            assert!((w.alpha[0] - a).abs() < 1e-6);
            assert!((w.alpha[1] - (1.0 - a)).abs() < 1e-6);
        }
    }

    #[test]
    fn frank_wolfe_ignores_dominated_long_gradient() {
        let p = ParetoProblem::new(vec![
            gv(vec![1.0, 0.0]),
            gv(vec![0.0, 1.0]),
            gv(vec![10.0, 10.0]),
        ])
        .unwrap();
        let w = frank_wolfe_minnorm(&p, &SolverConfig::default()).unwrap();
        assert!(w.alpha[2] < 1e-3, "dominated gradient got weight {}", w.alpha[2]);
        assert!((w.alpha[0] - 0.5).abs() < 1e-3);
        assert!((w.alpha[1] - 0.5).abs() < 1e-3);
        // simplex-grid oracle agrees
        let o = minnorm_oracle(&p, 0.01).unwrap();
        let diff = (p.combined_norm_sq(&w.alpha) - p.combined_norm_sq(&o.alpha)).abs();
        assert!(diff <= 1e-3);
    }

    #[test]
    fn oracle_symmetric_pair() {
        let p = ParetoProblem::new(vec![gv(vec![1.0, 0.0]), gv(vec![0.0, 1.0])]).unwrap();
        let o = minnorm_oracle(&p, 0.01).unwrap();
        assert!((o.alpha[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn oracle_singleton() {
        let p = ParetoProblem::new(vec![gv(vec![1.0, 0.0])]).unwrap();
        let o = minnorm_oracle(&p, 0.1).unwrap();
        assert_eq!(o.alpha, vec![1.0]);
    }

    #[test]
    fn oracle_matches_unclipped_closed_form() {
        // {(3,0), (0,1)}: unclipped α = ((g2−g1)·g2)/‖g1−g2‖² = 1/10
        let g1 = gv(vec![3.0, 0.0]);
        let g2 = gv(vec![0.0, 1.0]);
        let closed = analytic_two_task(&g1, &g2).unwrap();
        assert!((closed - 0.1).abs() < 1e-12);
        let p = ParetoProblem::new(vec![g1, g2]).unwrap();
        let o = minnorm_oracle(&p, 0.001).unwrap();
        assert!((o.alpha[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn oracle_rejects_large_task_counts() {
        let grads = (0..5).map(|_| gv(vec![1.0])).collect();
        let p = ParetoProblem::new(grads).unwrap();
        assert!(matches!(minnorm_oracle(&p, 0.1), Err(Error::OracleInfeasible(_))));
    }

    #[test]
    fn descent_certificate_on_random_instances() {
        // first-order optimality: ⟨g*, gᵗ⟩ ≥ ‖g*‖² − ε for every t
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..100 {
            let t = if trial % 2 == 0 { 2 } else { 3 };
            let p = random_problem(&mut rng, t, 1 + (trial % 16));
            let w = frank_wolfe_minnorm(&p, &SolverConfig::default()).unwrap();
            let star = p.combine(&w.alpha);
            let ns = star.norm_sq();
            for g in p.gradients() {
                assert!(
                    star.dot(g) >= ns - 1e-6,
                    "trial {trial}: ⟨g*, g⟩ = {} < {}",
                    star.dot(g),
                    ns
                );
            }
        }
    }

    #[test]
    fn weights_satisfy_simplex_invariants_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..100 {
            let t = 2 + trial % 3;
            let p = random_problem(&mut rng, t, 4);
            let w = frank_wolfe_minnorm(&p, &SolverConfig::default()).unwrap();
            assert!(w.alpha.iter().all(|a| *a >= 0.0));
            let sum: f64 = w.alpha.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn solver_call_counter_increments() {
        let before = solver_call_count();
        let p = ParetoProblem::new(vec![gv(vec![1.0])]).unwrap();
        frank_wolfe_minnorm(&p, &SolverConfig::default()).unwrap();
        assert!(solver_call_count() > before);
    }
}
