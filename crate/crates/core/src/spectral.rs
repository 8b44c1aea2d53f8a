//! The population random walk, its relaxation time, and the `R_S` matrices
//! used to bound minority survival in annihilation dynamics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::{edge_expansion, Graph};

/// Largest `n` handled by the dense eigensolver.
pub const DENSE_LIMIT: usize = 2000;
/// Convergence target of the iterative path.
pub const ITERATIVE_TOL: f64 = 1e-9;
pub const ITERATIVE_MAX_ITER: usize = 1_000_000;

const CHECK_TOL: f64 = 1e-9;
const SPECTRUM_TOL: f64 = 1e-8;

/// Transition matrix `P` of the lazy walk that moves along each incident
/// edge with probability `1/(2m)`.
#[derive(Debug, Clone)]
pub struct WalkMatrix {
    n: usize,
    m: usize,
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Dense(DMatrix<f64>),
    Sparse { adjacency: Vec<Vec<u32>> },
}

/// Dense for `n <= DENSE_LIMIT`, sparse otherwise.
pub fn population_walk_matrix(g: &Graph) -> WalkMatrix {
    if g.n() <= DENSE_LIMIT {
        WalkMatrix::dense(g)
    } else {
        WalkMatrix::sparse(g)
    }
}

impl WalkMatrix {
    pub fn dense(g: &Graph) -> Self {
        let n = g.n();
        let w = 1.0 / (2.0 * g.m() as f64);
        let mut p = DMatrix::<f64>::zeros(n, n);
        for &(u, v) in g.edges() {
            p[(u as usize, v as usize)] = w;
            p[(v as usize, u as usize)] = w;
        }
        for u in 0..n {
            p[(u, u)] = 1.0 - g.degree(u) as f64 * w;
        }
        WalkMatrix {
            n,
            m: g.m(),
            repr: Repr::Dense(p),
        }
    }

    /// Matrix-free form used by the iterative eigensolver.
    pub fn sparse(g: &Graph) -> Self {
        WalkMatrix {
            n: g.n(),
            m: g.m(),
            repr: Repr::Sparse {
                adjacency: (0..g.n()).map(|u| g.neighbors(u).to_vec()).collect(),
            },
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, Repr::Dense(_))
    }

    pub fn entry(&self, u: usize, v: usize) -> f64 {
        match &self.repr {
            Repr::Dense(p) => p[(u, v)],
            Repr::Sparse { adjacency } => {
                let w = 1.0 / (2.0 * self.m as f64);
                if u == v {
                    1.0 - adjacency[u].len() as f64 * w
                } else if adjacency[u].iter().any(|&x| x as usize == v) {
                    w
                } else {
                    0.0
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(p) => p.clone(),
            Repr::Sparse { .. } => DMatrix::from_fn(self.n, self.n, |u, v| self.entry(u, v)),
        }
    }

    /// `P x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.repr {
            Repr::Dense(p) => (p * DVector::from_column_slice(x)).as_slice().to_vec(),
            Repr::Sparse { adjacency } => {
                let w = 1.0 / (2.0 * self.m as f64);
                adjacency
                    .iter()
                    .enumerate()
                    .map(|(u, nb)| {
                        let s: f64 = nb.iter().map(|&v| x[v as usize] - x[u]).sum();
                        x[u] + w * s
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub lambda2: f64,
    pub gap: f64,
    pub tau_rel: f64,
}

impl SpectralSummary {
    fn from_lambda2(lambda2: f64) -> Self {
        // P is positive semidefinite; tiny negative values are rounding noise.
        let lambda2 = if lambda2 < 0.0 && lambda2 > -1e-12 {
            0.0
        } else {
            lambda2
        };
        let gap = 1.0 - lambda2;
        SpectralSummary {
            lambda2,
            gap,
            tau_rel: 1.0 / gap,
        }
    }
}

/// Second-largest eigenvalue of `P` and the relaxation time `1/(1-λ2)`.
pub fn relaxation_time(p: &WalkMatrix) -> Result<SpectralSummary> {
    match &p.repr {
        Repr::Dense(mat) => {
            let eig = sorted_eigenvalues(mat.clone());
            Ok(SpectralSummary::from_lambda2(eig[eig.len() - 2]))
        }
        Repr::Sparse { .. } => relaxation_time_iterative(p, ITERATIVE_TOL, ITERATIVE_MAX_ITER),
    }
}

/// Power iteration deflated against the constant vector.
pub fn relaxation_time_iterative(p: &WalkMatrix, tol: f64, max_iter: usize) -> Result<SpectralSummary> {
    let n = p.n();
    // deterministic, non-symmetric start vector
    let mut x: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() - 0.5)
        .collect();
    let project = |x: &mut Vec<f64>| {
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
    };
    project(&mut x);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let y = p.apply(&x);
        let mu: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        residual = x.iter().zip(&y).map(|(a, b)| (b - mu * a).powi(2)).sum::<f64>().sqrt();
        if residual <= tol * mu.abs().max(tol) {
            return Ok(SpectralSummary::from_lambda2(mu));
        }
        x = y;
        project(&mut x);
    }
    Err(Error::Numerical {
        message: format!("power iteration did not converge in {max_iter} iterations"),
        residual,
    })
}

/// Relaxation time of the population walk on `g`.
pub fn tau_rel(g: &Graph) -> Result<f64> {
    Ok(relaxation_time(&population_walk_matrix(g))?.tau_rel)
}

/// Generator `Q = P - I` of the continuous-time walk.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    q: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn from_walk(p: &WalkMatrix) -> Result<Self> {
        if p.n() > DENSE_LIMIT {
            return Err(Error::Size(format!(
                "generator is dense and limited to n <= {DENSE_LIMIT}"
            )));
        }
        let mut q = p.to_dense();
        for u in 0..p.n() {
            q[(u, u)] -= 1.0;
        }
        Ok(GeneratorMatrix { q })
    }

    pub fn of_graph(g: &Graph) -> Result<Self> {
        GeneratorMatrix::from_walk(&population_walk_matrix(g))
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Principal submatrix on `nodes` (in the given order).
    pub fn principal(&self, nodes: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(nodes.len(), nodes.len(), |i, j| self.q[(nodes[i], nodes[j])])
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(mat: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn largest_eigenvalue(mat: DMatrix<f64>) -> f64 {
    *sorted_eigenvalues(mat).last().expect("nonempty matrix")
}

fn complement(n: usize, s: &[usize]) -> Result<Vec<usize>> {
    let mut in_s = vec![false; n];
    for &u in s {
        if u >= n {
            return param(format!("node {u} out of range for n={n}"));
        }
        if in_s[u] {
            return param(format!("node {u} listed twice in S"));
        }
        in_s[u] = true;
    }
    if s.is_empty() {
        return param("S must be nonempty");
    }
    if s.len() == n {
        return param("S must be a proper subset of V");
    }
    Ok((0..n).filter(|&u| !in_s[u]).collect())
}

/// `R_S`: `Q` restricted to `V∖S`, with `λ(Q[V∖S])` on the diagonal of `S`
/// and zeros elsewhere.
pub fn build_rs(q: &GeneratorMatrix, s: &[usize]) -> Result<DMatrix<f64>> {
    let n = q.n();
    let rest = complement(n, s)?;
    let lam = largest_eigenvalue(q.principal(&rest));
    let mut r = DMatrix::<f64>::zeros(n, n);
    for &u in &rest {
        for &v in &rest {
            r[(u, v)] = q.matrix()[(u, v)];
        }
    }
    for &u in s {
        r[(u, u)] = lam;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRsCheck {
    /// `-λ(R_S)`
    pub lhs: f64,
    /// `(|S|/n) / τ_rel`
    pub rhs: f64,
    pub holds: bool,
}

pub fn verify_lambda_rs_bound(g: &Graph, s: &[usize]) -> Result<LambdaRsCheck> {
    let p = population_walk_matrix(g);
    let tau = relaxation_time(&p)?.tau_rel;
    let rs = build_rs(&GeneratorMatrix::from_walk(&p)?, s)?;
    let lhs = -largest_eigenvalue(rs);
    let rhs = s.len() as f64 / g.n() as f64 / tau;
    Ok(LambdaRsCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - CHECK_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsSpectrumCheck {
    pub max_abs_diff: f64,
    pub matches: bool,
}

/// Compares `spec(R_S)` with `spec(Q[V∖S])` extended by `|S|` copies of
/// `λ(Q[V∖S])`, the block-diagonal decomposition of `R_S`.
pub fn rs_spectrum_check(g: &Graph, s: &[usize]) -> Result<RsSpectrumCheck> {
    let q = GeneratorMatrix::of_graph(g)?;
    let rest = complement(g.n(), s)?;
    let mut expected = sorted_eigenvalues(q.principal(&rest));
    let lam = *expected.last().expect("nonempty complement");
    expected.extend(std::iter::repeat_n(lam, s.len()));
    expected.sort_by(f64::total_cmp);
    let actual = sorted_eigenvalues(build_rs(&q, s)?);
    let max_abs_diff = actual
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(RsSpectrumCheck {
        max_abs_diff,
        matches: max_abs_diff <= SPECTRUM_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub zeta: f64,
    /// `m/ζ`
    pub lower: f64,
    pub tau_rel: f64,
    /// `8 (m/ζ)^2`
    pub upper: f64,
    pub holds: bool,
}

/// `m/ζ <= τ_rel <= 8 (m/ζ)^2`, with exact `ζ` (so `n <= 22`).
pub fn spectral_sandwich_check(g: &Graph) -> Result<SandwichCheck> {
    let zeta = edge_expansion(g)?.ratio();
    let tau_rel = tau_rel(g)?;
    let lower = g.m() as f64 / zeta;
    let upper = 8.0 * lower * lower;
    Ok(SandwichCheck {
        zeta,
        lower,
        tau_rel,
        upper,
        holds: lower - CHECK_TOL <= tau_rel && tau_rel <= upper + CHECK_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphFamily};

    /// Cyclic Jacobi rotations; slow but independent of nalgebra.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }

    fn oracle_tau(g: &Graph) -> f64 {
        let ev = jacobi_eigenvalues(rows(&WalkMatrix::dense(g).to_dense()));
        1.0 / (1.0 - ev[ev.len() - 2])
    }

    fn g(f: GraphFamily, n: usize) -> Graph {
        build_graph(f, n, 1).unwrap()
    }

    #[test]
    fn walk_matrix_entries() {
        let p = population_walk_matrix(&g(GraphFamily::Complete, 4));
        for u in 0..4 {
            for v in 0..4 {
                let want = if u == v { 0.75 } else { 1.0 / 12.0 };
                assert!((p.entry(u, v) - want).abs() < 1e-15);
            }
        }
        let c4 = population_walk_matrix(&g(GraphFamily::Cycle, 4));
        assert_eq!(c4.entry(0, 1), 0.125);
        assert_eq!(c4.entry(0, 2), 0.0);
        assert_eq!(c4.entry(2, 2), 0.75);
        let p2 = population_walk_matrix(&g(GraphFamily::Path, 2));
        assert!((0..2).all(|u| (0..2).all(|v| p2.entry(u, v) == 0.5)));
    }

    #[test]
    fn walk_matrix_is_doubly_stochastic_and_uniform_stationary() {
        for graph in [
            g(GraphFamily::Lollipop, 5),
            g(GraphFamily::Star, 9),
            g(GraphFamily::Grid, 12),
        ] {
            let p = WalkMatrix::dense(&graph).to_dense();
            let n = graph.n();
            for u in 0..n {
                let row: f64 = (0..n).map(|v| p[(u, v)]).sum();
                assert!((row - 1.0).abs() < 1e-12);
                for v in 0..n {
                    assert_eq!(p[(u, v)], p[(v, u)]);
                }
            }
            let pi = vec![1.0 / n as f64; n];
            let moved = WalkMatrix::dense(&graph).apply(&pi);
            assert!(moved.iter().all(|x| (x - 1.0 / n as f64).abs() < 1e-12));
            let ev = sorted_eigenvalues(p);
            assert!(ev[0] > -1e-12 && ev[n - 1] < 1.0 + 1e-12);
        }
    }

    #[test]
    fn relaxation_time_examples() {
        let k4 = relaxation_time(&population_walk_matrix(&g(GraphFamily::Complete, 4))).unwrap();
        assert!((k4.lambda2 - 2.0 / 3.0).abs() < 1e-12);
        assert!((k4.tau_rel - 3.0).abs() < 1e-9);
        let c4 = relaxation_time(&population_walk_matrix(&g(GraphFamily::Cycle, 4))).unwrap();
        assert!((c4.lambda2 - 0.75).abs() < 1e-12);
        assert!((c4.tau_rel - 4.0).abs() < 1e-9);
        let p2 = relaxation_time(&population_walk_matrix(&g(GraphFamily::Path, 2))).unwrap();
        assert_eq!(p2.lambda2, 0.0);
        assert!((p2.tau_rel - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_closed_form() {
        for n in 3..12 {
            let t = tau_rel(&g(GraphFamily::Complete, n)).unwrap();
            assert!((t - (n as f64 - 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_agrees_with_jacobi_oracle() {
        let graphs = [
            g(GraphFamily::Lollipop, 6),
            g(GraphFamily::Cycle, 11),
            g(GraphFamily::Star, 7),
            g(GraphFamily::RandomRegular { degree: 3 }, 14),
            g(GraphFamily::Grid, 15),
        ];
        for graph in &graphs {
            let t = tau_rel(graph).unwrap();
            let o = oracle_tau(graph);
            assert!((t - o).abs() / o < 1e-9, "{}: {t} vs {o}", graph.descriptor());
        }
    }

    #[test]
    fn iterative_path_agrees_with_dense() {
        let graph = build_graph(GraphFamily::RandomRegular { degree: 3 }, 40, 5).unwrap();
        let dense = relaxation_time(&WalkMatrix::dense(&graph)).unwrap();
        let sparse = relaxation_time(&WalkMatrix::sparse(&graph)).unwrap();
        assert!((dense.lambda2 - sparse.lambda2).abs() < 1e-8);
        assert!((dense.tau_rel - sparse.tau_rel).abs() / dense.tau_rel < 1e-6);
    }

    #[test]
    fn iterative_reports_non_convergence() {
        let graph = g(GraphFamily::Lollipop, 8);
        let err = relaxation_time_iterative(&WalkMatrix::sparse(&graph), 1e-14, 3).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let q = GeneratorMatrix::of_graph(&g(GraphFamily::Lollipop, 4)).unwrap();
        for u in 0..q.n() {
            let s: f64 = q.matrix().row(u).iter().sum();
            assert!(s.abs() < 1e-12);
        }
        assert!(sorted_eigenvalues(q.matrix().clone()).iter().all(|&x| x < 1e-12));
    }

    #[test]
    fn rs_single_node_complement() {
        let k4 = g(GraphFamily::Complete, 4);
        let q = GeneratorMatrix::of_graph(&k4).unwrap();
        let r = build_rs(&q, &[0, 1, 2]).unwrap();
        for u in 0..3 {
            assert!((r[(u, u)] + 0.25).abs() < 1e-15);
            for v in 0..4 {
                if u != v {
                    assert_eq!(r[(u, v)], 0.0);
                }
            }
        }
        assert!((r[(3, 3)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn rs_opposite_nodes_of_c4() {
        let q = GeneratorMatrix::of_graph(&g(GraphFamily::Cycle, 4)).unwrap();
        let r = build_rs(&q, &[0, 2]).unwrap();
        let sub = q.principal(&[1, 3]);
        assert_eq!(sub[(0, 1)], 0.0);
        assert!((sub[(0, 0)] + 0.25).abs() < 1e-15);
        assert!((r[(0, 0)] + 0.25).abs() < 1e-15);
        assert!((r[(2, 2)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn rs_rejects_degenerate_sets() {
        let q = GeneratorMatrix::of_graph(&g(GraphFamily::Complete, 4)).unwrap();
        assert!(build_rs(&q, &[]).is_err());
        assert!(build_rs(&q, &[0, 1, 2, 3]).is_err());
        assert!(build_rs(&q, &[0, 0]).is_err());
        assert!(build_rs(&q, &[9]).is_err());
    }

    #[test]
    fn lambda_rs_examples() {
        let k4 = g(GraphFamily::Complete, 4);
        let c = verify_lambda_rs_bound(&k4, &[0, 1]).unwrap();
        assert!(c.holds);
        assert!((c.rhs - 0.5 / 3.0).abs() < 1e-12);
        let oracle = -jacobi_eigenvalues(rows(
            &build_rs(&GeneratorMatrix::of_graph(&k4).unwrap(), &[0, 1]).unwrap(),
        ))[3];
        assert!((c.lhs - oracle).abs() < 1e-12);

        let c6 = g(GraphFamily::Cycle, 6);
        assert!(verify_lambda_rs_bound(&c6, &[0, 2, 4]).unwrap().holds);

        for graph in [g(GraphFamily::Lollipop, 4), g(GraphFamily::Star, 6)] {
            let tau = tau_rel(&graph).unwrap();
            let n = graph.n();
            for v in 0..n {
                let s: Vec<usize> = (0..n).filter(|&u| u != v).collect();
                let c = verify_lambda_rs_bound(&graph, &s).unwrap();
                let closed = graph.degree(v) as f64 / (2.0 * graph.m() as f64);
                assert!((c.lhs - closed).abs() < 1e-12);
                assert!((c.rhs - (n as f64 - 1.0) / (n as f64 * tau)).abs() < 1e-12);
                assert!(c.holds);
            }
        }
    }

    #[test]
    fn rs_spectrum_decomposes() {
        let graph = g(GraphFamily::Lollipop, 5);
        for s in [vec![0], vec![1, 7], vec![0, 3, 5, 9]] {
            assert!(rs_spectrum_check(&graph, &s).unwrap().matches);
        }
    }

    #[test]
    fn sandwich_examples() {
        let k4 = spectral_sandwich_check(&g(GraphFamily::Complete, 4)).unwrap();
        assert!((k4.lower - 3.0).abs() < 1e-12 && (k4.upper - 72.0).abs() < 1e-9 && k4.holds);
        let c6 = spectral_sandwich_check(&g(GraphFamily::Cycle, 6)).unwrap();
        assert!((c6.lower - 9.0).abs() < 1e-12 && (c6.upper - 648.0).abs() < 1e-9 && c6.holds);
        assert!((c6.tau_rel - oracle_tau(&g(GraphFamily::Cycle, 6))).abs() < 1e-9);
        let p2 = spectral_sandwich_check(&g(GraphFamily::Path, 2)).unwrap();
        assert!((p2.lower - 1.0).abs() < 1e-12 && (p2.upper - 8.0).abs() < 1e-12 && p2.holds);
    }

    #[test]
    fn sandwich_size_cap() {
        let big = g(GraphFamily::Cycle, 30);
        assert!(matches!(spectral_sandwich_check(&big), Err(Error::Size(_))));
    }
}
