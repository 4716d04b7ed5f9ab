"""Optimal experimental designs over the probability simplex.

One solver covers the three designs used in this package: minimize, over
distributions lambda on the arms, the worst Mahalanobis variance

    f(lambda) = max_y  y^T A(lambda)^{-1} y,      A(lambda) = sum_x lambda_x x x^T,

where y ranges over a direction set: the arms themselves (G design), all
differences of extreme-point pairs (XY design), or differences of adjacent
pairs only (adjacent design).

The solver is Frank-Wolfe with the max-attaining direction as the active
linearization piece, exact line search along the chosen vertex (the 1-D
restriction of f is convex, and a rank-one update makes each evaluation
O(#directions)), and a 2/(k+2) fallback step.  Because f is a max of smooth
pieces, the single-piece linearization can certify a loose duality gap at
symmetric optima where many pieces tie; certificates are therefore also
evaluated on mixtures of near-maximal pieces (uniform mixtures over tie
sets, and an LP-optimized mixture at termination), each of which yields a
valid upper bound on suboptimality.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize_scalar

from .simplex import LinearProgram, solve_lp

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 20000

# Weights below this are solver dust and dropped before rounding.
PRUNE_TOL = 1e-9


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class RoundingError(RuntimeError):
    """The rounded allocation violated the factor-2 variance guarantee."""


@dataclass(frozen=True)
class DirectionSet:
    """Directions whose prediction variance a design controls."""

    vectors: np.ndarray
    pairs: tuple = None  # optional (i, j) arm-index provenance per row
    kind: str = "custom"

    def __post_init__(self):
        vec = np.atleast_2d(np.asarray(self.vectors, dtype=float)).copy()
        if vec.size == 0:
            raise ValueError("direction set is empty")
        norms = np.linalg.norm(vec, axis=1)
        if np.any(norms == 0):
            raise ValueError("direction set contains a zero vector")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class Design:
    """A design lambda with its matrix, achieved value, and certificate."""

    arms: object
    directions: DirectionSet
    weights: np.ndarray
    design_matrix: np.ndarray
    objective_value: float
    duality_gap: float
    iterations: int
    converged: bool
    ridge_applied: bool = False

    @property
    def support(self):
        return np.flatnonzero(self.weights > 0)

    def to_json_dict(self):
        return {
            "weights": [float(w) for w in self.weights],
            "objective": float(self.objective_value),
            "gap": float(self.duality_gap),
            "iters": int(self.iterations),
        }


@dataclass(frozen=True)
class Allocation:
    """Integer pull counts per arm summing to the budget T."""

    counts: np.ndarray
    total: int
    empirical_matrix: np.ndarray

    def schedule(self):
        """Arm indices repeated by count, ascending index order."""
        return np.repeat(np.arange(self.counts.size), self.counts)


def design_matrix(X, weights):
    w = np.asarray(weights, dtype=float)
    if w.size != X.K:
        raise ValueError(f"weights length {w.size} != K = {X.K}")
    A = np.einsum("k,ki,kj->ij", w, X.arms, X.arms)
    return (A + A.T) / 2.0


def mahalanobis_sq(z, A):
    """z^T A^{-1} z via Cholesky solve; raises SingularMatrixError if A is
    not positive definite down to eigenvalue 1e-12."""
    z = np.asarray(z, dtype=float)
    A = np.asarray(A, dtype=float)
    try:
        factor = cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        eig = float(np.linalg.eigvalsh(A)[0])
        raise SingularMatrixError(
            f"matrix is not positive definite (min eigenvalue {eig:.3e})",
            min_eigenvalue=eig,
        ) from None
    diag = np.diagonal(factor[0])
    if np.min(diag) ** 2 <= 1e-12 * max(1.0, np.max(diag) ** 2):
        eig = float(np.linalg.eigvalsh(A)[0])
        if eig <= 1e-12:
            raise SingularMatrixError(
                f"matrix is numerically singular (min eigenvalue {eig:.3e})",
                min_eigenvalue=eig,
            )
    return float(z @ cho_solve(factor, z))


def _direction_values(Y, factor):
    sols = cho_solve(factor, Y.T)  # d x m
    return np.einsum("md,dm->m", Y, sols), sols


def _mixture_gap(f_val, values, scores, mu):
    """Valid suboptimality bound from a mixture mu over pieces:
    f - f* <= max_x sum_j mu_j c_{jx} + f - 2 sum_j mu_j v_j,
    where c_{jx} = (y_j^T A^{-1} x_k)^2 and v_j = y_j^T A^{-1} y_j; the
    final terms account for pieces that are only near-maximal."""
    mix = mu @ scores
    return max(float(np.max(mix) + f_val - 2.0 * (mu @ values)), 0.0)


def _certificate_gap_lp(f_val, values, scores_all, max_pieces=200):
    """LP-optimized mixture certificate: min over mu in the simplex of
    max_x sum_j mu_j c_{jx} - 2 sum_j mu_j v_j, plus f."""
    m, K = scores_all.shape
    order = np.argsort(values)[::-1][:max_pieces]
    C = scores_all[order]
    v = values[order]
    J = order.size
    # Variables (mu_1..mu_J >= 0, t free): maximize 2 mu.v - t.
    obj = np.concatenate([2.0 * v, [-1.0]])
    eqs = [(np.concatenate([np.ones(J), [0.0]]), 1.0)]
    ineqs = [(np.concatenate([C[:, k], [-1.0]]), 0.0) for k in range(K)]
    nonneg = np.concatenate([np.ones(J, dtype=bool), [False]])
    res = solve_lp(LinearProgram(obj, eqs, ineqs, nonneg=nonneg), max_iter=20000)
    if not res.optimal:
        return math.inf
    return max(float(f_val - res.value), 0.0)


def _softmax(values, tau):
    z = (values - values.max()) / tau
    w = np.exp(z)
    return w / w.sum()


def _segment_values(A, B, Y):
    """Set up v_j(gamma) for A(gamma) = (1-gamma) A + gamma B.

    Simultaneous diagonalization reduces every evaluation to O(#directions):
    with A = L L^T and L^{-1} B L^{-T} = Q diag(e) Q^T,
        y^T A(gamma)^{-1} y = sum_i  ytil_i^2 / ((1-gamma) + gamma e_i).
    """
    L = np.linalg.cholesky(A)
    Binv = np.linalg.solve(L, np.linalg.solve(L, B).T)
    e, Q = np.linalg.eigh((Binv + Binv.T) / 2.0)
    Ytil = np.linalg.solve(L, Y.T).T @ Q  # m x d
    Y2 = Ytil**2

    def values_at(gamma):
        denom = (1.0 - gamma) + gamma * e
        if np.any(denom <= 0):
            return None
        return Y2 @ (1.0 / denom)

    return values_at


def _descent_lp(values, scores, active, max_iter=20000):
    """Bundle direction: the simplex point q minimizing the worst active
    piece's linearized value  v_j - c_j^T q.  Returns (q, predicted_max)."""
    J = active.size
    K = scores.shape[1]
    C = scores[active]
    v = values[active]
    # Variables (q_1..q_K >= 0, t free): maximize -t.
    obj = np.zeros(K + 1)
    obj[-1] = -1.0
    eqs = [(np.concatenate([np.ones(K), [0.0]]), 1.0)]
    ineqs = [(np.concatenate([-C[j], [-1.0]]), -v[j]) for j in range(J)]
    nonneg = np.concatenate([np.ones(K, dtype=bool), [False]])
    res = solve_lp(LinearProgram(obj, eqs, ineqs, nonneg=nonneg), max_iter=max_iter)
    if not res.optimal:
        return None, math.inf
    return np.maximum(res.x[:K], 0.0), float(res.x[K])


def _bundle_polish(X, Y, lam, state, tol, rounds=60):
    """Trust-region bundle refinement from a near-optimal design.

    Each round minimizes the linear models  2 v_j - c_j^T q  of the active
    pieces over the simplex, restricted to an L-infinity box around the
    current point (the models underestimate the convex pieces, so the box
    keeps the step where they are trustworthy), then line-searches toward
    the LP point.  The box radius adapts to the achieved-vs-predicted ratio.
    """
    A, values, scores = state(lam)
    f_val = float(values.max())
    rho = 0.05
    for _ in range(rounds):
        active = np.flatnonzero(values >= f_val * (1.0 - 0.2))
        if active.size > 80:
            active = active[np.argsort(values[active])[::-1][:80]]
        support = set(np.flatnonzero(lam > 1e-12))
        support.update(int(np.argmax(scores[j])) for j in active)
        support = np.array(sorted(support))
        S = support.size
        C = scores[np.ix_(active, support)]
        v = values[active]
        off_mass = float(lam.sum() - lam[support].sum())
        # Variables (q_S >= 0, t free): min t with box |q - lam| <= rho.
        obj = np.zeros(S + 1)
        obj[-1] = -1.0
        eqs = [(np.concatenate([np.ones(S), [0.0]]), 1.0 - off_mass)]
        ineqs = [(np.concatenate([-C[j], [-1.0]]), -2.0 * v[j]) for j in range(len(active))]
        for s in range(S):
            row = np.zeros(S + 1)
            row[s] = 1.0
            ineqs.append((row, float(lam[support[s]] + rho)))
        nonneg = np.concatenate([np.ones(S, dtype=bool), [False]])
        res = solve_lp(LinearProgram(obj, eqs, ineqs, nonneg=nonneg), max_iter=20000)
        if not res.optimal:
            break
        predicted = f_val - float(res.x[-1])
        if predicted <= tol * f_val / 10.0:
            break
        q = lam.copy()
        q[support] = np.maximum(res.x[:S], 0.0)
        step = _best_segment_step(X, A, Y, lam, [q], f_val, 0)
        if step is None:
            rho *= 0.5
            if rho < 1e-8:
                break
            continue
        f_new, lam = step
        achieved = f_val - f_new
        rho = min(rho * 2.0, 0.25) if achieved > 0.5 * predicted else max(rho * 0.5, 1e-8)
        A, values, scores = state(lam)
        f_val = float(values.max())
    return lam, A, values, scores, f_val


def minmax_design(X, dirs, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Minimize the worst directional variance over the design simplex.

    Frank-Wolfe steps move toward either a single arm (the greedy arm of the
    worst direction) or a mixture of per-direction greedy arms; mixtures are
    what escape the kinks where two directions' variances tie and no single
    arm improves both.  Exact line search keeps accepted iterations monotone.

    Returns a Design whose objective_value upper-bounds the optimum and whose
    duality_gap certifies the suboptimality; converged is False when the
    iteration budget ran out before the relative gap reached tol.
    """
    arms = X.arms
    K, d = arms.shape
    Y = dirs.vectors
    lam = np.full(K, 1.0 / K)
    ridge_applied = False

    def state(lam_vec):
        nonlocal ridge_applied
        M = design_matrix(X, lam_vec)
        try:
            fac = cho_factor(M, lower=True)
        except np.linalg.LinAlgError:
            fac = None
        if fac is None or np.linalg.cond(M) > 1e12:
            ridge_applied = True
            M = M + 1e-10 * np.eye(d)
            fac = cho_factor(M, lower=True)
        vals, sols = _direction_values(Y, fac)
        scores = (arms @ sols).T ** 2  # m x K, entries (y_j^T A^{-1} x_k)^2
        return M, vals, scores

    A, values, scores = state(lam)
    f_val = float(values.max())
    tau_rel = 0.1  # softmax temperature relative to the current value
    gap = math.inf
    it = 0
    while it < max_iter:
        j_star = int(np.argmax(values))
        point = np.zeros(len(Y))
        point[j_star] = 1.0
        ties = values >= f_val * (1.0 - 1e-9)
        mu_ties = ties / ties.sum()
        mu_soft = _softmax(values, max(tau_rel * f_val, 1e-300))
        gap = min(
            _mixture_gap(f_val, values, scores, point),
            _mixture_gap(f_val, values, scores, mu_ties),
            _mixture_gap(f_val, values, scores, mu_soft),
        )
        if gap <= tol * max(f_val, 1e-300):
            break

        greedy = np.argmax(scores, axis=1)  # best arm per direction
        targets = []
        q1 = np.zeros(K)
        q1[greedy[j_star]] = 1.0
        targets.append(q1)
        for mu in (mu_soft, mu_ties):
            q = np.zeros(K)
            np.add.at(q, greedy, mu)
            targets.append(q)

        step = _best_segment_step(X, A, Y, lam, targets, f_val, it)
        if step is None and tau_rel > 1e-7:
            tau_rel *= 0.2  # sharpen the mixture and retry
            it += 1
            continue
        if step is None:
            # Bundle rescue: one LP over the near-maximal directions.
            active = np.flatnonzero(values >= f_val * (1.0 - 0.05))[:60]
            q_lp, _ = _descent_lp(values, scores, active)
            if q_lp is not None and q_lp.sum() > 0:
                step = _best_segment_step(
                    X, A, Y, lam, [q_lp / q_lp.sum()], f_val, it
                )
            if step is None:
                break
        f_val, lam = step
        A, values, scores = state(lam)
        f_val = float(values.max())
        it += 1

    if gap > tol * max(f_val, 1e-300):
        lam, A, values, scores, f_val = _bundle_polish(X, Y, lam, state, tol)
        j_star = int(np.argmax(values))
        point = np.zeros(len(Y))
        point[j_star] = 1.0
        gap = min(
            _mixture_gap(f_val, values, scores, point),
            _certificate_gap_lp(f_val, values, scores),
        )

    return Design(
        arms=X,
        directions=dirs,
        weights=lam,
        design_matrix=A,
        objective_value=f_val,
        duality_gap=float(gap),
        iterations=it,
        converged=bool(gap <= tol * max(f_val, 1e-300)),
        ridge_applied=ridge_applied,
    )


def _best_segment_step(X, A, Y, lam, targets, f_val, it):
    """Exact line search toward each target distribution; best improving
    (new_value, new_lambda) or None if no target improves the objective."""
    best = (f_val - 1e-14 * max(1.0, f_val), None, None)
    for q in targets:
        B = design_matrix(X, q)
        values_at = _segment_values(A, B, Y)

        def f_seg(gamma):
            vals = values_at(gamma)
            return math.inf if vals is None else float(vals.max())

        res = minimize_scalar(
            f_seg, bounds=(0.0, 0.9999), method="bounded",
            options={"xatol": 1e-11},
        )
        for gamma in (float(res.x), min(2.0 / (it + 2.0), 0.999)):
            f_new = f_seg(gamma)
            if f_new < best[0]:
                best = (f_new, q, gamma)
    if best[1] is None:
        return None
    _, q, gamma = best
    return best[0], (1.0 - gamma) * lam + gamma * q


def arm_directions(X):
    return DirectionSet(X.arms, kind="arms")


def pair_directions(X, pairs, kind="pairs"):
    pairs = tuple(tuple(sorted(p)) for p in sorted(pairs))
    if not pairs:
        raise ValueError("no pairs supplied")
    vec = np.array([X[i] - X[j] for i, j in pairs])
    return DirectionSet(vec, pairs=pairs, kind=kind)


def g_optimal(X, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Design minimizing the worst per-arm prediction variance."""
    return minmax_design(X, arm_directions(X), tol=tol, max_iter=max_iter)


def xy_optimal(X, adjacency, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Design minimizing the worst variance over all extreme-pair differences."""
    ext = adjacency.extreme_points
    pairs = [(ext[a], ext[b]) for a in range(len(ext)) for b in range(a + 1, len(ext))]
    return minmax_design(X, pair_directions(X, pairs, kind="xy"), tol=tol, max_iter=max_iter)


def adjacent_optimal(X, adjacency, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Design minimizing the worst variance over adjacent-pair differences."""
    return minmax_design(
        X, pair_directions(X, adjacency.pair_list(), kind="adjacent"),
        tol=tol, max_iter=max_iter,
    )


def kiefer_wolfowitz_check(X, tol=0.01):
    """True iff the achieved G-design value matches the dimension within tol."""
    value = g_optimal(X).objective_value
    return abs(value - X.d) / X.d <= tol, value


def _caratheodory_reduce(X, weights, max_support):
    """Shrink the support of `weights` without changing A(lambda) or the
    total mass, by walking along null vectors of the lifted moment map."""
    w = weights.copy()
    support = np.flatnonzero(w > 0)
    d = X.d
    iu = np.triu_indices(d)
    while support.size > max_support:
        mom = np.vstack(
            [
                np.array([np.outer(X[i], X[i])[iu] for i in support]).T,
                np.ones(support.size),
            ]
        )
        _, s, vt = np.linalg.svd(mom)
        eta = vt[-1]
        if np.max(np.abs(eta)) < 1e-14:
            break
        pos = eta > 1e-14
        if not np.any(pos):
            eta = -eta
            pos = eta > 1e-14
        steps = w[support[pos]] / eta[pos]
        t = steps.min()
        w[support] -= t * eta
        w[support] = np.maximum(w[support], 0.0)
        # The coordinate that hit its bound leaves the support exactly.
        w[support[pos][int(np.argmin(steps))]] = 0.0
        support = np.flatnonzero(w > 0)
    total = w.sum()
    if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-8):
        raise RoundingError(f"support reduction lost mass: sum = {total}")
    return w / total


def _apportion(weights_support, T):
    """Efficient apportionment of T pulls to a positive weight vector."""
    p = weights_support.size
    n = np.ceil((T - p / 2.0) * weights_support).astype(int)
    n = np.maximum(n, 0)
    while n.sum() > T:
        n[np.argmax((n - 1) / weights_support)] -= 1
    while n.sum() < T:
        n[np.argmin(n / weights_support)] += 1
    return n


def max_direction_variance(dirs, A):
    return max(mahalanobis_sq(y, A) for y in dirs.vectors)


def round_design(design, T, directions=None, repair_limit=None):
    """Convert a design into an integer allocation of T >= d^2 pulls.

    The allocation's worst directional variance is checked against twice the
    design's own; a violation after local repair raises RoundingError, since
    the guarantee is supposed to hold for every T >= d^2.
    """
    X = design.arms
    d = X.d
    if T < d * d:
        raise ValueError(f"budget T = {T} below d^2 = {d * d}")
    dirs = directions if directions is not None else design.directions

    w = np.where(design.weights >= PRUNE_TOL, design.weights, 0.0)
    w = w / w.sum()
    max_support = d * (d + 1) // 2 + 1
    if np.count_nonzero(w) > max_support:
        w = _caratheodory_reduce(X, w, max_support)
        drift = np.abs(design_matrix(X, w) - design.design_matrix).max()
        if drift > 1e-8 * max(1.0, np.abs(design.design_matrix).max()):
            raise RoundingError(f"support reduction drifted the design matrix by {drift:.3e}")

    support = np.flatnonzero(w > 0)
    counts = np.zeros(X.K, dtype=int)
    counts[support] = _apportion(w[support], T)

    ideal = max_direction_variance(dirs, design.design_matrix)
    counts = _repair(X, counts, w, dirs, ideal, T, repair_limit)
    emp = design_matrix(X, counts / T)
    achieved = max_direction_variance(dirs, emp)
    if achieved > 2.0 * ideal * (1.0 + 1e-9):
        raise RoundingError(
            f"rounded allocation variance factor {achieved / ideal:.4f} exceeds 2"
        )
    return Allocation(counts=counts, total=int(T), empirical_matrix=emp)


def _repair(X, counts, weights, dirs, ideal, T, limit=None):
    """Greedy single-pull moves toward the factor-2 guarantee, support-preserving."""
    emp = design_matrix(X, counts / T)
    try:
        achieved = max_direction_variance(dirs, emp)
    except SingularMatrixError:
        achieved = math.inf
    if achieved <= 2.0 * ideal:
        return counts
    support = np.flatnonzero(weights > 0)
    limit = limit if limit is not None else 4 * T
    for _ in range(limit):
        best = (achieved, None)
        for i in support:
            if counts[i] <= 1:
                continue
            for j in support:
                if j == i:
                    continue
                cand = counts.copy()
                cand[i] -= 1
                cand[j] += 1
                try:
                    val = max_direction_variance(dirs, design_matrix(X, cand / T))
                except SingularMatrixError:
                    continue
                if val < best[0] - 1e-15:
                    best = (val, cand)
        if best[1] is None:
            break
        achieved, counts = best[0], best[1]
        if achieved <= 2.0 * ideal:
            break
    return counts
