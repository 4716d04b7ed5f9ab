"""Dense two-phase simplex solver for small linear programs.

All problems solved here are tiny (a handful of free variables, at most a
few hundred rows), so the implementation favors robustness over speed:
a dense tableau, Bland's anti-cycling pivot rule throughout, and explicit
infeasible/unbounded verdicts.

Problems are stated as maximization over *free* variables:

    max  c^T u
    s.t. E u  = e
         F u <= f
"""

from dataclasses import dataclass, field

import numpy as np

# Pivot / feasibility tolerance of the tableau arithmetic.
TOL = 1e-9


class SimplexError(Exception):
    """Numerical failure inside the simplex iteration."""

    def __init__(self, message, iteration_cap=None, basis=None):
        super().__init__(message)
        self.iteration_cap = iteration_cap
        self.basis = list(basis) if basis is not None else None


@dataclass(frozen=True)
class LinearProgram:
    """A small LP: max objective subject to eq/ineq rows.

    Variables are free by default; `nonneg` marks coordinates constrained to
    be nonnegative (kept native rather than split, which roughly halves the
    tableau for mixture-weight problems).
    """

    objective: np.ndarray
    equality_constraints: list = field(default_factory=list)
    inequality_constraints: list = field(default_factory=list)
    variable_count: int = 0
    nonneg: np.ndarray = None

    def __post_init__(self):
        obj = np.asarray(self.objective, dtype=float)
        object.__setattr__(self, "objective", obj)
        n = self.variable_count or obj.size
        object.__setattr__(self, "variable_count", n)
        if obj.size != n:
            raise ValueError(f"objective has length {obj.size}, expected {n}")
        mask = (
            np.zeros(n, dtype=bool)
            if self.nonneg is None
            else np.asarray(self.nonneg, dtype=bool)
        )
        if mask.size != n:
            raise ValueError("nonneg mask length does not match variable_count")
        object.__setattr__(self, "nonneg", mask)
        for row, _ in list(self.equality_constraints) + list(self.inequality_constraints):
            if np.asarray(row, dtype=float).size != n:
                raise ValueError("constraint row length does not match variable_count")


@dataclass(frozen=True)
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: float = np.nan
    x: np.ndarray = None
    iterations: int = 0

    @property
    def optimal(self):
        return self.status == "optimal"


def _pivot(tableau, basis, row, col):
    tableau[row] /= tableau[row, col]
    for r in range(tableau.shape[0]):
        if r != row and abs(tableau[r, col]) > 0.0:
            tableau[r] -= tableau[r, col] * tableau[row]
    basis[row] = col


def _simplex_iterate(tableau, basis, max_iter, iteration_offset=0):
    """Pivot a feasible tableau to optimality (minimizing the cost row).

    Entering columns follow Dantzig's most-negative rule for speed; once the
    pivot count passes a threshold that suggests cycling, the iteration
    switches to Bland's rule, which terminates on any tableau.
    """
    m = tableau.shape[0] - 1
    n = tableau.shape[1] - 1
    bland_after = 4 * (m + n) + 200
    it = 0
    while True:
        if it + iteration_offset >= max_iter:
            raise SimplexError(
                f"simplex iteration cap {max_iter} exceeded",
                iteration_cap=max_iter,
                basis=basis,
            )
        reduced = tableau[-1, :-1]
        if it < bland_after:
            col = int(np.argmin(reduced))
            if reduced[col] >= -TOL:
                return it, "optimal"
        else:
            col = -1
            for j in range(n):
                if reduced[j] < -TOL:
                    col = j
                    break
            if col < 0:
                return it, "optimal"
        ratios_row = -1
        best = np.inf
        for r in range(m):
            a = tableau[r, col]
            if a > TOL:
                ratio = tableau[r, -1] / a
                if ratio < best - TOL or (
                    abs(ratio - best) <= TOL
                    and (ratios_row < 0 or basis[r] < basis[ratios_row])
                ):
                    best = ratio
                    ratios_row = r
        if ratios_row < 0:
            return it, "unbounded"
        _pivot(tableau, basis, ratios_row, col)
        it += 1


def solve_lp(lp, max_iter=10000):
    """Solve a LinearProgram, returning an LpResult.

    Free variables are split into nonnegative pairs internally; variables
    marked nonneg enter the tableau directly. The returned optimizer is
    primal feasible within TOL and optimal within TOL of the true optimum
    of the tableau arithmetic.
    """
    n = lp.variable_count
    eq_rows = [(np.asarray(r, dtype=float), float(b)) for r, b in lp.equality_constraints]
    ub_rows = [(np.asarray(r, dtype=float), float(b)) for r, b in lp.inequality_constraints]
    m_eq, m_ub = len(eq_rows), len(ub_rows)
    m = m_eq + m_ub
    if m == 0:
        if np.allclose(lp.objective, 0.0) or (
            np.all(lp.objective[~lp.nonneg] == 0.0) and np.all(lp.objective <= 0.0)
        ):
            return LpResult("optimal", 0.0, np.zeros(n), 0)
        return LpResult("unbounded")

    free = np.flatnonzero(~lp.nonneg)
    n_split = n + free.size  # columns: natives first, then mirrors of frees

    def expand(row):
        out = np.empty(n_split)
        out[:n] = row
        out[n:] = -row[free]
        return out

    # Columns: [natives (n), free mirrors, slacks (m_ub), artificials].
    A = np.zeros((m, n_split + m_ub))
    b = np.zeros(m)
    for i, (row, rhs) in enumerate(eq_rows):
        A[i, :n_split] = expand(row)
        b[i] = rhs
    for k, (row, rhs) in enumerate(ub_rows):
        i = m_eq + k
        A[i, :n_split] = expand(row)
        A[i, n_split + k] = 1.0
        b[i] = rhs

    # Normalize rhs signs so the phase-1 basis is feasible.
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # A slack column can start basic only on a non-negated inequality row.
    basis = [-1] * m
    needs_artificial = []
    for i in range(m):
        if i >= m_eq and not neg[i]:
            basis[i] = 2 * n + (i - m_eq)
        else:
            needs_artificial.append(i)

    n_art = len(needs_artificial)
    n_cols = A.shape[1] + n_art
    tableau = np.zeros((m + 1, n_cols + 1))
    tableau[:m, : A.shape[1]] = A
    tableau[:m, -1] = b
    for j, i in enumerate(needs_artificial):
        tableau[i, A.shape[1] + j] = 1.0
        basis[i] = A.shape[1] + j

    total_iters = 0
    if n_art > 0:
        # Phase 1: minimize the sum of artificials.
        cost = np.zeros(n_cols + 1)
        cost[A.shape[1] :] = 1.0
        cost[-1] = 0.0
        tableau[-1] = cost
        for i in range(m):
            if basis[i] >= A.shape[1]:
                tableau[-1] -= tableau[i]
        it, status = _simplex_iterate(tableau, basis, max_iter)
        total_iters += it
        if status != "optimal" or tableau[-1, -1] < -1e-7:
            # Phase-1 objective row holds -(sum of artificials).
            return LpResult("infeasible", iterations=total_iters)
        # Pivot out any artificial stuck in the basis at level zero.
        for i in range(m):
            if basis[i] >= A.shape[1]:
                piv = -1
                for j in range(A.shape[1]):
                    if abs(tableau[i, j]) > TOL:
                        piv = j
                        break
                if piv >= 0:
                    _pivot(tableau, basis, i, piv)
                # else: redundant row; harmless to leave in place.
        tableau = np.delete(tableau, np.s_[A.shape[1] : n_cols], axis=1)
        n_cols = A.shape[1]

    # Phase 2: maximize the original objective (minimize its negation).
    c_full = np.zeros(n_cols + 1)
    c_full[:n] = -lp.objective
    c_full[n:n_split][:] = lp.objective[free]
    tableau[-1] = c_full
    for i in range(m):
        if basis[i] < n_cols and abs(c_full[basis[i]]) > 0.0:
            tableau[-1] -= c_full[basis[i]] * tableau[i]
    it, status = _simplex_iterate(tableau, basis, max_iter, total_iters)
    total_iters += it
    if status == "unbounded":
        return LpResult("unbounded", iterations=total_iters)

    x_split = np.zeros(n_cols)
    for i in range(m):
        if basis[i] < n_cols:
            x_split[basis[i]] = tableau[i, -1]
    x = x_split[:n]
    x[free] -= x_split[n:n_split]
    return LpResult("optimal", float(lp.objective @ x), x, total_iters)
