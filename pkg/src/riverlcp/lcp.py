"""Mixed linear complementarity problems and two solvers.

A mixed LCP here is: find z such that, row by row,

    0 <= z_i  perp  (M z + q)_i >= 0     if variable i is nonnegative,
    (M z + q)_i = 0                      if variable i is free.

Row i always belongs to variable i; the sign metadata on the variable
decides whether the row is a complementarity row or an equation.

Two solvers are provided.  ``solve_fb_newton`` is a damped semismooth
Newton method on the Fischer-Burmeister reformulation and is the primary
path (it is start-point sensitive, which the equilibrium studies exploit).
``solve_lemke`` reduces the mixed problem to a pure LCP by pivoting and
runs Lemke's complementary pivot method with lexicographic tie-breaking;
it serves as an independent cross-check.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "Sign",
    "VariableMeta",
    "MlcpProblem",
    "SolveStatus",
    "SolveReport",
    "SingularJacobianError",
    "DegeneratePivotError",
    "ReductionError",
    "residual",
    "complementarity_violation",
    "solve_fb_newton",
    "solve_lemke",
    "dump_problem",
]


class Sign(Enum):
    NONNEGATIVE = "nonnegative"
    FREE = "free"


@dataclass(frozen=True)
class VariableMeta:
    """Identity of one variable/row: symbol plus (player, period, class)."""

    id: int
    symbol: str
    player: int
    period: int
    cls: int | None
    sign: Sign

    @property
    def key(self) -> tuple:
        return (self.symbol, self.player, self.period, self.cls)


class MlcpProblem:
    """Immutable mixed LCP: sparse M, dense q, aligned variable metadata."""

    def __init__(self, M: sp.spmatrix, q: np.ndarray, variables: list[VariableMeta]):
        M = sp.csr_matrix(M, dtype=float)
        q = np.asarray(q, dtype=float)
        n = len(variables)
        if M.shape != (n, n) or q.shape != (n,):
            raise ValueError(f"dimension mismatch: M {M.shape}, q {q.shape}, vars {n}")
        if not np.all(np.isfinite(M.data)) or not np.all(np.isfinite(q)):
            raise ValueError("M and q must be finite")
        keys = [v.key for v in variables]
        if len(set(keys)) != n:
            raise ValueError("duplicate (symbol, player, period, class) keys")
        for i, v in enumerate(variables):
            if v.id != i:
                raise ValueError(f"variable {v.key} has id {v.id}, expected {i}")
        self.M = M
        self.q = q
        self.variables = tuple(variables)
        self.n = n
        self.free_mask = np.array([v.sign is Sign.FREE for v in variables], dtype=bool)
        self.comp_mask = ~self.free_mask
        self._dense: np.ndarray | None = None
        self._index = {v.key: v.id for v in variables}

    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.M.toarray()
        return self._dense

    def index_of(self, symbol: str, player: int, period: int, cls: int | None = None) -> int:
        return self._index[(symbol, player, period, cls)]


class SolveStatus(Enum):
    CONVERGED = "converged"
    RAY_TERMINATION = "ray_termination"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class SolveReport:
    z: np.ndarray
    residual: float
    status: SolveStatus
    iterations: int

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED


class SingularJacobianError(Exception):
    """Newton system stayed singular through all regularization levels."""


class DegeneratePivotError(Exception):
    """Lexicographic ordering failed to break a pivot tie (assembler bug)."""


class ReductionError(Exception):
    """Free variables could not be pivoted out of the mixed problem."""


def _fb(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # phi(a, b) = sqrt(a^2 + b^2) - a - b; zero iff a, b >= 0 and a*b = 0
    return np.hypot(a, b) - a - b


def residual(p: MlcpProblem, z: np.ndarray) -> float:
    """Inf-norm of the FB residual (complementarity rows) and |Mz+q| (free rows)."""
    z = np.asarray(z, dtype=float)
    w = p.M @ z + p.q
    out = np.where(p.comp_mask, _fb(z, w), w)
    return float(np.max(np.abs(out))) if p.n else 0.0


def complementarity_violation(p: MlcpProblem, z: np.ndarray) -> float:
    """Worst componentwise violation of z >= 0, w >= 0, z*w = 0 (comp) and w = 0 (free)."""
    z = np.asarray(z, dtype=float)
    w = p.M @ z + p.q
    worst = 0.0
    if p.free_mask.any():
        worst = float(np.max(np.abs(w[p.free_mask])))
    zc, wc = z[p.comp_mask], w[p.comp_mask]
    if zc.size:
        worst = max(
            worst,
            float(np.max(-zc)),
            float(np.max(-wc)),
            float(np.max(np.abs(zc * wc))),
        )
    return max(worst, 0.0)


def _phi_vector(p: MlcpProblem, z: np.ndarray, Md: np.ndarray) -> np.ndarray:
    w = Md @ z + p.q
    return np.where(p.comp_mask, _fb(z, w), w)


def _try_polish(p: MlcpProblem, Md: np.ndarray, z: np.ndarray, tol: float) -> np.ndarray | None:
    """Active-set finisher: solve the linear system implied by the current
    iterate's complementarity split and accept it only if it is an exact
    solution.  Tightens near-converged iterates that the damped iteration
    would otherwise approach slowly (degenerate pairs make the FB Jacobian
    singular at the solution).  Degenerate pairs are additionally tried on
    their inactive side, and rank-deficient splits (disconnected price
    rows) fall back to a least-squares solve before the feasibility test.
    """
    w = Md @ z + p.q
    primary = p.free_mask | (p.comp_mask & (z > w))
    degenerate = p.comp_mask & (np.abs(z) < 1e-6) & (np.abs(w) < 1e-6)
    for basic in (primary, primary & ~degenerate):
        idx = np.where(basic)[0]
        z_new = np.zeros(p.n)
        if idx.size:
            sub = Md[np.ix_(idx, idx)]
            try:
                z_new[idx] = np.linalg.solve(sub, -p.q[idx])
            except np.linalg.LinAlgError:
                z_new[idx] = np.linalg.lstsq(sub, -p.q[idx], rcond=None)[0]
        if not np.all(np.isfinite(z_new)):
            continue
        if residual(p, z_new) <= tol:
            return z_new
    return None


def _fb_newton_once(
    p: MlcpProblem,
    z: np.ndarray,
    *,
    tol: float,
    max_iter: int,
    armijo_sigma: float,
    backtrack: float,
    mu0: float,
    mu_max: float,
    polish: bool,
) -> SolveReport:
    Md = p.dense()
    n = p.n
    comp = p.comp_mask
    eye = np.eye(n)
    best_z, best_res = z.copy(), np.inf
    iterations = 0
    for iterations in range(max_iter + 1):
        phi = _phi_vector(p, z, Md)
        res = float(np.max(np.abs(phi))) if n else 0.0
        if res < best_res:
            best_z, best_res = z.copy(), res
        if res <= tol:
            return SolveReport(z=z, residual=res, status=SolveStatus.CONVERGED, iterations=iterations)
        if polish and res <= 1e-5:
            polished = _try_polish(p, Md, z, tol)
            if polished is not None:
                return SolveReport(
                    z=polished,
                    residual=residual(p, polished),
                    status=SolveStatus.CONVERGED,
                    iterations=iterations,
                )
        if iterations == max_iter:
            break

        # one element of the B-subdifferential of the FB system
        w = Md @ z + p.q
        r = np.hypot(z, w)
        safe = r > 0.0
        origin = 1.0 / np.sqrt(2.0) - 1.0
        da = np.where(safe, np.divide(z, r, out=np.zeros(n), where=safe) - 1.0, origin)
        db = np.where(safe, np.divide(w, r, out=np.zeros(n), where=safe) - 1.0, origin)
        da = np.where(comp, da, 0.0)
        db = np.where(comp, db, 1.0)
        J = db[:, None] * Md + np.diag(da)

        d = None
        mu = 0.0
        while True:
            Jmu = J + mu * eye if mu else J
            try:
                cand = np.linalg.solve(Jmu, -phi)
            except np.linalg.LinAlgError:
                cand = None
            if cand is not None and np.all(np.isfinite(cand)):
                err = float(np.linalg.norm(Jmu @ cand + phi))
                if err <= max(1e-10, 1e-7 * float(np.linalg.norm(phi))):
                    d = cand
                    break
            mu = mu0 if mu == 0.0 else mu * 10.0
            if mu > mu_max:
                raise SingularJacobianError(
                    f"Newton system singular after regularization up to mu={mu_max:g}"
                )

        grad = J.T @ phi
        slope = float(grad @ d)
        if slope > -1e-14:
            d = -grad
            slope = -float(grad @ grad)
            if slope > -1e-14:
                break  # stationary point of the merit function, not a solution

        psi = 0.5 * float(phi @ phi)
        t = 1.0
        accepted = False
        while t >= 2.0 ** -60:
            z_new = z + t * d
            phi_new = _phi_vector(p, z_new, Md)
            if 0.5 * float(phi_new @ phi_new) <= psi + armijo_sigma * t * slope:
                z = z_new
                accepted = True
                break
            t *= backtrack
        if not accepted:
            break  # merit stalled above tolerance

    if polish:
        polished = _try_polish(p, Md, best_z, tol)
        if polished is not None:
            return SolveReport(
                z=polished,
                residual=residual(p, polished),
                status=SolveStatus.CONVERGED,
                iterations=iterations,
            )
    status = SolveStatus.CONVERGED if best_res <= tol else SolveStatus.MAX_ITERATIONS
    return SolveReport(z=best_z, residual=best_res, status=status, iterations=iterations)


DEFAULT_FALLBACK_STARTS = (0.0, 2.0, 5.0, 10.0, 50.0, 100.0, 0.1, 1000.0)


def solve_fb_newton(
    p: MlcpProblem,
    start: np.ndarray | float | None = None,
    *,
    tol: float = 1e-9,
    max_iter: int = 200,
    armijo_sigma: float = 1e-4,
    backtrack: float = 0.5,
    mu0: float = 1e-10,
    mu_max: float = 1e-2,
    polish: bool = True,
    fallback_starts: tuple = DEFAULT_FALLBACK_STARTS,
) -> SolveReport:
    """Damped semismooth Newton on the FB reformulation.

    The generalized Jacobian row for a complementarity pair (z_i, w_i) is
    (z_i/r - 1) e_i + (w_i/r - 1) M_i with r = ||(z_i, w_i)||; at the origin
    the subgradient (1/sqrt(2) - 1) is used for both coefficients.  Newton
    systems are regularized Levenberg-style (mu*I, growing tenfold, capped)
    before ``SingularJacobianError`` is raised; a gradient step backs up the
    Newton direction when it fails the descent test, and near-converged
    iterates are finished by an exact active-set solve.

    If the run from ``start`` stalls in a local minimum of the merit
    function, the fixed ``fallback_starts`` cascade is tried in order (the
    merit function of FB reformulations admits non-solution stationary
    points on degenerate problems).  The whole procedure is deterministic
    for a fixed (problem, start, options) triple; a run that converges
    from the given start never consults the fallbacks, preserving
    starting-point sensitivity experiments.
    """
    n = p.n
    if start is None:
        z0 = np.ones(n)
    elif np.isscalar(start):
        z0 = np.full(n, float(start))
    else:
        z0 = np.array(start, dtype=float)
        if z0.shape != (n,):
            raise ValueError(f"start has shape {z0.shape}, expected ({n},)")
    if not np.all(np.isfinite(z0)):
        raise ValueError("start must be finite")

    opts = dict(
        tol=tol,
        max_iter=max_iter,
        armijo_sigma=armijo_sigma,
        backtrack=backtrack,
        mu0=mu0,
        mu_max=mu_max,
        polish=polish,
    )
    report = _fb_newton_once(p, z0, **opts)
    if report.converged:
        return report
    best = report
    for s in fallback_starts:
        rep = _fb_newton_once(p, np.full(n, float(s)), **opts)
        if rep.converged:
            return rep
        if rep.residual < best.residual:
            best = rep
    return best


# ---------------------------------------------------------------------------
# Lemke: mixed-row reduction followed by lexicographic complementary pivoting
# ---------------------------------------------------------------------------

_PIVOT_TOL = 1e-9


class _Reduction:
    """Pivot the free variables out of a mixed LCP, leaving a pure LCP.

    Two mechanisms, applied in order:

    1. Gaussian pivots on the (equation rows x free columns) block.  This
       removes free variables that appear in the equation block itself (the
       minimum-outflow recursion, which is unit triangular).
    2. A mixed swap for a leftover free column y: find a complementarity
       row r containing y whose own variable x_c carries a pivot in a
       remaining equation row e.  Substitute x_c out via e, solve row r for
       y, and introduce the slack s of row r as a new nonnegative variable
       paired against the equation-derived expression for x_c.  The pair
       (s >= 0 perp x_c >= 0) reproduces the original complementarity of
       row r exactly, so the exchange is solution-preserving.  This handles
       multipliers of equations that contain no free variables at all (the
       cumulative-supply and capacity-augmentation rows).

    A log of eliminations supports exact back-substitution afterwards.
    """

    def __init__(self, p: MlcpProblem):
        self.A = p.dense().copy()
        self.q = p.q.astype(float).copy()
        self.col_keys: list = list(range(p.n))
        self.col_free: list[bool] = [bool(f) for f in p.free_mask]
        self.row_kind: list[str] = ["eq" if f else "comp" for f in p.free_mask]
        # complementarity row i starts out paired with original column i
        self.row_pair: list = [None if f else i for i, f in enumerate(p.free_mask)]
        self.subst_log: list[tuple[object, dict, float]] = []
        self._n_slacks = 0

    def _log(self, key, coef_row: np.ndarray, const: float, extra: dict | None = None):
        coefs = {
            self.col_keys[j]: float(coef_row[j])
            for j in range(len(self.col_keys))
            if coef_row[j] != 0.0
        }
        if extra:
            coefs.update(extra)
        self.subst_log.append((key, coefs, float(const)))

    def _drop_col(self, pos: int):
        self.A = np.delete(self.A, pos, axis=1)
        del self.col_keys[pos]
        del self.col_free[pos]

    def _drop_row(self, pos: int):
        self.A = np.delete(self.A, pos, axis=0)
        self.q = np.delete(self.q, pos)
        del self.row_kind[pos]
        del self.row_pair[pos]

    def _substitute_col(self, pos: int, src_row: int):
        """Eliminate column `pos` from every row but `src_row` using that row."""
        piv = self.A[src_row, pos]
        row = self.A[src_row] / piv
        qv = self.q[src_row] / piv
        for i in range(self.A.shape[0]):
            if i == src_row or self.A[i, pos] == 0.0:
                continue
            f = self.A[i, pos]
            self.A[i] -= f * row
            self.A[i, pos] = 0.0
            self.q[i] -= f * qv

    def eliminate_on_equations(self):
        while True:
            eq_rows = [i for i, k in enumerate(self.row_kind) if k == "eq"]
            free_cols = [j for j, f in enumerate(self.col_free) if f]
            if not eq_rows or not free_cols:
                return
            block = np.abs(self.A[np.ix_(eq_rows, free_cols)])
            bi, bj = np.unravel_index(int(np.argmax(block)), block.shape)
            if block[bi, bj] <= _PIVOT_TOL:
                return
            e, y = eq_rows[bi], free_cols[bj]
            piv = self.A[e, y]
            coef = -self.A[e] / piv
            coef[y] = 0.0
            self._log(self.col_keys[y], coef, -self.q[e] / piv)
            self._substitute_col(y, e)
            self._drop_row(e)
            self._drop_col(y)

    def mixed_swaps(self):
        while any(self.col_free):
            y = next(j for j, f in enumerate(self.col_free) if f)
            hit = self._find_swap(y)
            if hit is None:
                raise ReductionError("free variables remain but no admissible pivot exists")
            self._swap(y, *hit)

    def _find_swap(self, y: int):
        for r, kind in enumerate(self.row_kind):
            if kind != "comp" or abs(self.A[r, y]) <= _PIVOT_TOL:
                continue
            pair = self.row_pair[r]
            if pair not in self.col_keys:
                continue
            c = self.col_keys.index(pair)
            for e, ek in enumerate(self.row_kind):
                if ek == "eq" and abs(self.A[e, c]) > _PIVOT_TOL:
                    return (r, e, c)
        return None

    def _swap(self, y: int, r: int, e: int, c: int):
        free_pos = [j for j, f in enumerate(self.col_free) if f]
        if np.max(np.abs(self.A[e, free_pos])) > 1e-12:
            raise ReductionError("equation row still carries a free variable")
        c_key, y_key = self.col_keys[c], self.col_keys[y]

        # 1. substitute x_c out via equation row e; keep its expression as a
        #    live complementarity row (it will pair with the new slack)
        piv_e = self.A[e, c]
        h_coef = -self.A[e] / piv_e
        h_coef[c] = 0.0
        h_const = -self.q[e] / piv_e
        self._log(c_key, h_coef, h_const)
        self._substitute_col(c, e)
        s_key = ("slack", self._n_slacks)
        self._n_slacks += 1
        self.A = np.vstack([self.A, h_coef[None, :]])
        self.q = np.append(self.q, h_const)
        self.row_kind.append("comp")
        self.row_pair.append(s_key)
        self._drop_row(e)
        if r > e:
            r -= 1
        self._drop_col(c)
        y = self.col_keys.index(y_key)

        # 2. solve complementarity row r for y; its slack s becomes a new
        #    nonnegative column entering every row that contained y
        piv_r = self.A[r, y]
        if abs(piv_r) <= _PIVOT_TOL:
            raise ReductionError("swap pivot vanished during substitution")
        row_r = self.A[r] / piv_r
        q_r = self.q[r] / piv_r
        coef = -row_r
        coef[y] = 0.0
        self._log(y_key, coef, -q_r, extra={s_key: 1.0 / piv_r})
        self.A = np.hstack([self.A, np.zeros((self.A.shape[0], 1))])
        self.col_keys.append(s_key)
        self.col_free.append(False)
        s = len(self.col_keys) - 1
        for i in range(self.A.shape[0]):
            if i == r or self.A[i, y] == 0.0:
                continue
            f = self.A[i, y]
            self.A[i, :-1] -= f * row_r
            self.A[i, y] = 0.0
            self.A[i, s] += f / piv_r
            self.q[i] -= f * q_r
        self._drop_row(r)
        self._drop_col(y)

    def run(self):
        self.eliminate_on_equations()
        self.mixed_swaps()
        if any(k == "eq" for k in self.row_kind):
            raise ReductionError("equation rows remain after reduction")
        order = [self.col_keys.index(pair) for pair in self.row_pair]
        A = self.A[:, order]
        keys = [self.col_keys[j] for j in order]
        return A, self.q.copy(), keys


def _lemke_pure(A: np.ndarray, q: np.ndarray, max_pivots: int):
    """Lemke with covering vector e and lexicographic ratio test on [q | B^-1]."""
    n = len(q)
    if n == 0 or float(np.min(q)) >= 0.0:
        return np.zeros(n), SolveStatus.CONVERGED, 0
    # tableau: I w - A z - e z0 = q; columns w_0..w_{n-1}, z_0..z_{n-1}, z0, rhs
    T = np.hstack([np.eye(n), -A, -np.ones((n, 1)), q[:, None]])
    basis: list[tuple[str, int]] = [("w", i) for i in range(n)]
    rhs = 2 * n + 1
    z0_col = 2 * n

    def pivot(r: int, c: int):
        T[r] /= T[r, c]
        for i in range(n):
            if i != r and T[i, c] != 0.0:
                T[i] -= T[i, c] * T[r]

    def read_z() -> np.ndarray:
        z = np.zeros(n)
        for i, (kind, j) in enumerate(basis):
            if kind == "z":
                z[j] = T[i, rhs]
        return z

    def lex_leave(col: int, eligible: list[int]) -> int:
        best, best_vec = eligible[0], None
        for i in eligible:
            vec = np.concatenate(([T[i, rhs]], T[i, :n])) / T[i, col]
            if best_vec is None:
                best, best_vec = i, vec
                continue
            diff = vec - best_vec
            nz = np.nonzero(np.abs(diff) > 1e-12)[0]
            if nz.size == 0:
                raise DegeneratePivotError("lexicographic tie between tableau rows")
            if diff[nz[0]] < 0:
                best, best_vec = i, vec
        return best

    # initial pivot: z0 enters, the most negative rhs row leaves (B^-1 = I,
    # so the plain index is already a valid lexicographic tie-break)
    r = min((i for i in range(n) if T[i, rhs] < 0), key=lambda i: (T[i, rhs], i))
    leaving = basis[r]
    pivot(r, z0_col)
    basis[r] = ("z0", 0)
    entering = ("z", leaving[1])

    for it in range(1, max_pivots + 1):
        col = entering[1] + (n if entering[0] == "z" else 0)
        eligible = [i for i in range(n) if T[i, col] > 1e-10]
        if not eligible:
            return read_z(), SolveStatus.RAY_TERMINATION, it
        r = lex_leave(col, eligible)
        leaving = basis[r]
        pivot(r, col)
        basis[r] = entering
        if leaving[0] == "z0":
            return read_z(), SolveStatus.CONVERGED, it
        entering = ("z" if leaving[0] == "w" else "w", leaving[1])
    return read_z(), SolveStatus.MAX_ITERATIONS, max_pivots


def solve_lemke(p: MlcpProblem, *, tol: float = 1e-8, max_pivots: int = 10000) -> SolveReport:
    """Lemke complementary pivoting after free-variable elimination.

    Free variables are pivoted out first (equation-row pivots, then mixed
    swaps; see ``_Reduction``), the remaining pure LCP is solved with the
    lexicographic rule, and eliminated variables are reconstructed by exact
    back-substitution.  On ray termination no solution is fabricated: the
    report carries the last basic point and ``RAY_TERMINATION`` status.
    """
    red = _Reduction(p)
    A, q, keys = red.run()
    z_red, status, pivots = _lemke_pure(A, q, max_pivots)

    values: dict = {key: 0.0 for key in keys}
    for key, val in zip(keys, z_red):
        values[key] = float(val)
    for key, coefs, const in reversed(red.subst_log):
        values[key] = const + sum(c * values[k] for k, c in coefs.items())

    z = np.array([values[i] for i in range(p.n)])
    res = residual(p, z)
    if status is SolveStatus.CONVERGED and res > tol:
        status = SolveStatus.MAX_ITERATIONS
    return SolveReport(z=z, residual=res, status=status, iterations=pivots)


def dump_problem(p: MlcpProblem, prefix: str | Path) -> list[Path]:
    """Write M (MatrixMarket), q (one value per line) and the JSON variable map."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    m_path = prefix.with_suffix(".mtx")
    q_path = prefix.with_suffix(".q.txt")
    v_path = prefix.with_suffix(".vars.json")
    scipy.io.mmwrite(str(m_path), sp.coo_matrix(p.M))
    q_path.write_text("".join(f"{float(v)!r}\n" for v in p.q))
    v_path.write_text(
        json.dumps(
            [
                {
                    "id": v.id,
                    "symbol": v.symbol,
                    "player": v.player,
                    "period": v.period,
                    "class": v.cls,
                    "sign": v.sign.value,
                }
                for v in p.variables
            ],
            indent=2,
        )
    )
    return [m_path, q_path, v_path]
