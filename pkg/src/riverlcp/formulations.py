"""Market-structure assemblers, welfare evaluation and the sequential oracle.

Three interaction structures share one player program (concave benefit
integral, cumulative-withdrawal supply balance, flow and capacity limits):

* GCM: bilateral release purchases W_P[i, j, t]; each seller clears its own
  market, purchased water is reserved for the purchasing node.
* CSM: a scalar purchase W_P[i, t] clearing at the purchasing node; sellers
  collect every downstream purchaser's price (released water is rentable).
* NO_MARKET: no trades; players interact only through the inherited
  minimum outflow.

``build_*`` concatenate each player's KKT stationarity and feasibility
rows with the outflow recursion and market clearing into one square mixed
LCP.  The inverse demand curve is substituted as alpha - beta*Q at
assembly, keeping the system linear.  Variable order is players outer,
symbols inner (primal before dual), periods/classes innermost; for GCM
purchases the class slot of the variable key carries the seller index.

``solve_no_market_recursive`` is the independent oracle for the no-market
case: players are swept upstream to downstream and each one's concave QP
is solved exactly (pool-adjacent-violators on the cumulative-demand chain),
propagating the minimum outflow.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .basin import BasinConfig, upstream_set, downstream_set
from .lcp import (
    MlcpProblem,
    Sign,
    SolveReport,
    SolveStatus,
    VariableMeta,
    solve_fb_newton,
    solve_lemke,
)

__all__ = [
    "MarketStructure",
    "EquilibriumSolution",
    "MissingSymbolError",
    "InfeasiblePlayer",
    "build_gcm",
    "build_csm",
    "build_no_market",
    "build_problem",
    "solve_structure",
    "solve_no_market_recursive",
    "welfare",
    "purchases_by_player",
]


class MarketStructure(Enum):
    GCM = "gcm"
    CSM = "csm"
    NO_MARKET = "none"


class MissingSymbolError(KeyError):
    """A value required by the welfare formula is absent from the solution."""


class InfeasiblePlayer(Exception):
    """A player's flow balance cannot be met even with full storage releases."""


@dataclass(frozen=True)
class EquilibriumSolution:
    structure: MarketStructure
    values: dict
    welfare: tuple[float, ...]
    report: SolveReport

    def value(self, symbol: str, player: int, period: int, cls: int | None = None) -> float:
        return self.values[(symbol, player, period, cls)]

    def get(self, symbol: str, player: int, period: int, cls: int | None = None) -> float:
        return self.values.get((symbol, player, period, cls), 0.0)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _layout(cfg: BasinConfig, structure: MarketStructure) -> list[VariableMeta]:
    N, T, C = cfg.n_players, cfg.periods, cfg.classes
    market = structure is not MarketStructure.NO_MARKET
    metas: list[VariableMeta] = []

    def add(symbol, player, period, cls, sign):
        metas.append(VariableMeta(len(metas), symbol, player, period, cls, sign))

    for i in range(N):
        for t in range(T):
            add("W_D", i, t, None, Sign.NONNEGATIVE)
        for t in range(T):
            add("W_S", i, t, None, Sign.NONNEGATIVE)
        for t in range(T):
            add("Q", i, t, None, Sign.NONNEGATIVE)
        for t in range(T):
            add("K", i, t, None, Sign.NONNEGATIVE)
        if market:
            for c in range(C):
                for t in range(T):
                    add("L_R", i, t, c, Sign.NONNEGATIVE)
            if structure is MarketStructure.GCM:
                for j in upstream_set(cfg, i):
                    for t in range(T):
                        add("W_P", i, t, j, Sign.NONNEGATIVE)
            elif i > 0:
                for t in range(T):
                    add("W_P", i, t, None, Sign.NONNEGATIVE)
            for c in range(C):
                for t in range(T):
                    add("gamma_loss", i, t, c, Sign.NONNEGATIVE)
        for t in range(T):
            add("gamma_flow", i, t, None, Sign.NONNEGATIVE)
        for t in range(T):
            add("gamma_cap", i, t, None, Sign.NONNEGATIVE)
        for t in range(T):
            add("lambda_sup", i, t, None, Sign.FREE)
        for t in range(T):
            add("lambda_aug", i, t, None, Sign.FREE)
        for t in range(T):
            add("O_min", i, t, None, Sign.FREE)
        if market:
            for t in range(T):
                add("pi_as", i, t, None, Sign.NONNEGATIVE)
    return metas


def build_problem(cfg: BasinConfig, structure: MarketStructure) -> MlcpProblem:
    """Assemble the mixed LCP for one market structure."""
    N, T, C = cfg.n_players, cfg.periods, cfg.classes
    d = cfg.discounts()
    gcm = structure is MarketStructure.GCM
    csm = structure is MarketStructure.CSM
    market = gcm or csm

    metas = _layout(cfg, structure)
    index = {m.key: m.id for m in metas}
    n = len(metas)
    rows_i: list[int] = []
    cols_j: list[int] = []
    vals: list[float] = []
    q = np.zeros(n)

    def idx(symbol, player, period, cls=None):
        return index[(symbol, player, period, cls)]

    def put(row, col, val):
        if val != 0.0:
            rows_i.append(row)
            cols_j.append(col)
            vals.append(float(val))

    for i, p in enumerate(cfg.players):
        for t in range(T):
            # stationarity wrt W_D: suffix supply multipliers less the
            # loss-stock credit (loss fraction taken at the withdrawal period)
            row = idx("W_D", i, t)
            for t2 in range(t, T):
                put(row, idx("lambda_sup", i, t2), 1.0)
                if market:
                    for c in range(C):
                        put(row, idx("gamma_loss", i, t2, c), -p.lf[c][t])

            # stationarity wrt W_S: release cost net of sale price
            row = idx("W_S", i, t)
            q[row] += d[t] * p.c_sr[t]
            if gcm:
                put(row, idx("pi_as", i, t), -d[t])
            elif csm:
                for k in downstream_set(cfg, i):
                    put(row, idx("pi_as", k, t), -d[t])
            put(row, idx("gamma_flow", i, t), -1.0)
            put(row, idx("gamma_cap", i, t), 1.0)

            # stationarity wrt Q with theta = alpha - beta*Q substituted
            row = idx("Q", i, t)
            q[row] += d[t] * (p.c_ops[t] - p.alpha[t])
            put(row, idx("Q", i, t), d[t] * p.beta[t])
            put(row, idx("lambda_sup", i, t), -1.0)
            put(row, idx("gamma_flow", i, t), 1.0)

            # stationarity wrt K
            row = idx("K", i, t)
            q[row] += d[t] * p.c_cap[t]
            put(row, idx("gamma_cap", i, t), -1.0)
            put(row, idx("lambda_aug", i, t), 1.0)

            if market:
                # stationarity wrt L_R: reduction cost net of sale price plus
                # suffix loss multipliers (reductions are permanent)
                for c in range(C):
                    row = idx("L_R", i, t, c)
                    q[row] += d[t] * p.c_cu[c][t]
                    if gcm:
                        put(row, idx("pi_as", i, t), -d[t])
                    else:
                        for k in downstream_set(cfg, i):
                            put(row, idx("pi_as", k, t), -d[t])
                    for t2 in range(t, T):
                        put(row, idx("gamma_loss", i, t2, c), 1.0)

                # stationarity wrt W_P
                if gcm:
                    for j in upstream_set(cfg, i):
                        row = idx("W_P", i, t, j)
                        put(row, idx("pi_as", j, t), d[t])
                        put(row, idx("gamma_flow", i, t), -1.0)
                elif i > 0:
                    row = idx("W_P", i, t)
                    put(row, idx("pi_as", i, t), d[t])
                    put(row, idx("gamma_flow", i, t), -1.0)

                # loss-reduction stock: cumulative reductions within losses
                for c in range(C):
                    row = idx("gamma_loss", i, t, c)
                    for t2 in range(t + 1):
                        put(row, idx("W_D", i, t2), p.lf[c][t2])
                        put(row, idx("L_R", i, t2, c), -1.0)

            # flow limit: net inflow less regulatory flow bounds withdrawals
            row = idx("gamma_flow", i, t)
            q[row] += p.n - p.r_fc[t]
            put(row, idx("W_S", i, t), 1.0)
            if gcm:
                for j in upstream_set(cfg, i):
                    put(row, idx("W_P", i, t, j), 1.0)
            elif csm and i > 0:
                put(row, idx("W_P", i, t), 1.0)
            if i > 0:
                put(row, idx("O_min", i - 1, t), 1.0)
            put(row, idx("Q", i, t), -1.0)

            # storage releases within built capacity
            row = idx("gamma_cap", i, t)
            put(row, idx("K", i, t), 1.0)
            put(row, idx("W_S", i, t), -1.0)

            # cumulative supply balance (equation)
            row = idx("lambda_sup", i, t)
            for t2 in range(t + 1):
                put(row, idx("W_D", i, t2), 1.0)
            put(row, idx("Q", i, t), -1.0)

            # all-or-nothing capacity build (equation)
            row = idx("lambda_aug", i, t)
            put(row, idx("K", i, t), 1.0)
            q[row] -= p.a_req[t]

            # minimum-outflow recursion (equation); reductions raise the
            # unaided outflow only from the following period on
            row = idx("O_min", i, t)
            put(row, idx("O_min", i, t), 1.0)
            q[row] -= p.n
            for c in range(C):
                for t2 in range(t + 1):
                    put(row, idx("W_D", i, t2), p.lf[c][t2])
                if market:
                    for t2 in range(t):
                        put(row, idx("L_R", i, t2, c), -1.0)
            if i > 0:
                put(row, idx("O_min", i - 1, t), -1.0)

            # market clearing
            if gcm:
                row = idx("pi_as", i, t)
                for c in range(C):
                    put(row, idx("L_R", i, t, c), 1.0)
                put(row, idx("W_S", i, t), 1.0)
                for k in downstream_set(cfg, i):
                    put(row, idx("W_P", k, t, i), -1.0)
            elif csm:
                row = idx("pi_as", i, t)
                for j in upstream_set(cfg, i):
                    for c in range(C):
                        put(row, idx("L_R", j, t, c), 1.0)
                    put(row, idx("W_S", j, t), 1.0)
                if i > 0:
                    put(row, idx("W_P", i, t), -1.0)

    M = sp.coo_matrix((vals, (rows_i, cols_j)), shape=(n, n))
    return MlcpProblem(M, q, metas)


def build_gcm(cfg: BasinConfig) -> MlcpProblem:
    return build_problem(cfg, MarketStructure.GCM)


def build_csm(cfg: BasinConfig) -> MlcpProblem:
    return build_problem(cfg, MarketStructure.CSM)


def build_no_market(cfg: BasinConfig) -> MlcpProblem:
    return build_problem(cfg, MarketStructure.NO_MARKET)


# ---------------------------------------------------------------------------
# welfare
# ---------------------------------------------------------------------------


def purchases_by_player(cfg: BasinConfig, structure: MarketStructure, values: dict) -> np.ndarray:
    """Total purchased releases per (player, period)."""
    N, T = cfg.n_players, cfg.periods
    out = np.zeros((N, T))
    for i in range(N):
        for t in range(T):
            if structure is MarketStructure.GCM:
                out[i, t] = sum(values.get(("W_P", i, t, j), 0.0) for j in upstream_set(cfg, i))
            elif structure is MarketStructure.CSM:
                out[i, t] = values.get(("W_P", i, t, None), 0.0)
    return out


def welfare(cfg: BasinConfig, structure: MarketStructure, values: dict) -> list[float]:
    """Discounted per-player objective evaluated at the given primal values.

    The benefit integral is closed-form: alpha*Q - (beta/2)*Q^2.  Raises
    ``MissingSymbolError`` when a symbol needed by the structure is absent.
    """
    N, T, C = cfg.n_players, cfg.periods, cfg.classes
    d = cfg.discounts()
    market = structure is not MarketStructure.NO_MARKET

    def need(symbol, player, period, cls=None):
        key = (symbol, player, period, cls)
        if key not in values:
            raise MissingSymbolError(key)
        return values[key]

    out = []
    for i, p in enumerate(cfg.players):
        total = 0.0
        for t in range(T):
            Q = need("Q", i, t)
            WS = need("W_S", i, t)
            K = need("K", i, t)
            term = p.alpha[t] * Q - 0.5 * p.beta[t] * Q * Q
            term -= p.c_ops[t] * Q + p.c_sr[t] * WS + p.c_cap[t] * K
            if market:
                lr_total = 0.0
                for c in range(C):
                    lr = need("L_R", i, t, c)
                    lr_total += lr
                    term -= p.c_cu[c][t] * lr
                if structure is MarketStructure.GCM:
                    term += need("pi_as", i, t) * (lr_total + WS)
                    for j in upstream_set(cfg, i):
                        term -= need("pi_as", j, t) * need("W_P", i, t, j)
                else:
                    for k in downstream_set(cfg, i):
                        term += need("pi_as", k, t) * (lr_total + WS)
                    if i > 0:
                        term -= need("pi_as", i, t) * need("W_P", i, t)
            total += d[t] * term
        out.append(float(total))
    return out


def solution_from_report(cfg: BasinConfig, structure: MarketStructure,
                         p: MlcpProblem, report: SolveReport) -> EquilibriumSolution:
    values = {m.key: float(report.z[m.id]) for m in p.variables}
    return EquilibriumSolution(
        structure=structure,
        values=values,
        welfare=tuple(welfare(cfg, structure, values)),
        report=report,
    )


def solve_structure(
    cfg: BasinConfig,
    structure: MarketStructure,
    *,
    solver: str = "fb",
    start: np.ndarray | float | None = 1.0,
    tol: float | None = None,
    max_iter: int = 200,
) -> EquilibriumSolution:
    """Build and solve one structure; start defaults to the all-ones interior point."""
    p = build_problem(cfg, structure)
    if solver == "fb":
        kw = {"max_iter": max_iter}
        if tol is not None:
            kw["tol"] = tol
        report = solve_fb_newton(p, start, **kw)
    elif solver == "lemke":
        report = solve_lemke(p, **({"tol": tol} if tol is not None else {}))
    else:
        raise ValueError(f"unknown solver {solver!r} (expected 'fb' or 'lemke')")
    return solution_from_report(cfg, structure, p, report)


# ---------------------------------------------------------------------------
# sequential oracle for the no-market game
# ---------------------------------------------------------------------------


def _block_argmax(ts, lo, hi, coeff_lin, coeff_quad, c_sr_d, kink):
    """Maximize a pooled sum of concave piecewise quadratics over [lo, hi].

    Each period contributes d*(alpha-c_ops)*Q - d*(beta/2)*Q^2 minus
    d*c_sr*max(0, Q - kink_t); candidates are the interval ends, the kinks
    and each smooth segment's stationary point.
    """

    def H(qv):
        val = 0.0
        for t in ts:
            val += coeff_lin[t] * qv - 0.5 * coeff_quad[t] * qv * qv
            if qv > kink[t]:
                val -= c_sr_d[t] * (qv - kink[t])
        return val

    pts = sorted({lo, hi} | {kink[t] for t in ts if lo < kink[t] < hi})
    best_q, best_v = lo, H(lo)
    for left, right in zip(pts, pts[1:]):
        a = sum(coeff_lin[t] - (c_sr_d[t] if kink[t] <= left + 1e-12 else 0.0) for t in ts)
        b = sum(coeff_quad[t] for t in ts)
        cands = [right]
        if b > 0:
            root = a / b
            if left < root < right:
                cands.append(root)
        for qv in cands:
            v = H(qv)
            if v > best_v + 0.0:
                best_q, best_v = qv, v
    return best_q


def solve_no_market_recursive(cfg: BasinConfig) -> EquilibriumSolution:
    """Sweep players upstream to downstream, solving each program exactly.

    Each player's problem, given the inherited minimum outflow, is a
    concave QP in the cumulative demand path Q_1 <= .. <= Q_T with box
    limits from flow and built capacity; storage releases cover any excess
    of Q over the free inflow at cost c_sr.  Solved by pool-adjacent-
    violators with exact piecewise-quadratic block maximization, then the
    outflow recursion is propagated.  Raises ``InfeasiblePlayer`` when a
    player's mandatory release exceeds its built capacity.
    """
    N, T, C = cfg.n_players, cfg.periods, cfg.classes
    d = cfg.discounts()
    values: dict = {}
    welfare_vec: list[float] = []
    o_prev = np.zeros(T)

    for i, p in enumerate(cfg.players):
        B = np.array([p.n - p.r_fc[t] + o_prev[t] for t in range(T)])
        U = B + np.asarray(p.a_req)
        for t in range(T):
            if U[t] < -1e-9:
                raise InfeasiblePlayer(
                    f"player {p.name!r}: net inflow {B[t]:.6g} plus capacity "
                    f"{p.a_req[t]:.6g} is negative in period {t}"
                )
        coeff_lin = [d[t] * (p.alpha[t] - p.c_ops[t]) for t in range(T)]
        coeff_quad = [d[t] * p.beta[t] for t in range(T)]
        c_sr_d = [d[t] * p.c_sr[t] for t in range(T)]
        kink = [float(B[t]) for t in range(T)]

        # isotonic chain: pool adjacent blocks until Q is nondecreasing
        blocks: list[list] = []  # [periods, q]
        for t in range(T):
            ts = [t]
            hi = max(0.0, float(min(U[t2] for t2 in ts)))
            qv = _block_argmax(ts, 0.0, hi, coeff_lin, coeff_quad, c_sr_d, kink)
            blocks.append([ts, qv])
            while len(blocks) > 1 and blocks[-2][1] > blocks[-1][1] + 1e-15:
                ts = blocks[-2][0] + blocks[-1][0]
                hi = max(0.0, float(min(U[t2] for t2 in ts)))
                qv = _block_argmax(ts, 0.0, hi, coeff_lin, coeff_quad, c_sr_d, kink)
                blocks[-2:] = [[ts, qv]]

        Q = np.zeros(T)
        for ts, qv in blocks:
            for t in ts:
                Q[t] = qv
        WS = np.maximum(0.0, Q - B)
        WD = np.maximum(0.0, np.diff(Q, prepend=0.0))

        total = 0.0
        for t in range(T):
            total += d[t] * (
                p.alpha[t] * Q[t]
                - 0.5 * p.beta[t] * Q[t] ** 2
                - p.c_ops[t] * Q[t]
                - p.c_sr[t] * WS[t]
                - p.c_cap[t] * p.a_req[t]
            )
        welfare_vec.append(float(total))

        o_cur = np.zeros(T)
        for t in range(T):
            losses = sum(p.lf[c][t2] * WD[t2] for c in range(C) for t2 in range(t + 1))
            o_cur[t] = p.n - losses + o_prev[t]
            values[("W_D", i, t, None)] = float(WD[t])
            values[("W_S", i, t, None)] = float(WS[t])
            values[("Q", i, t, None)] = float(Q[t])
            values[("K", i, t, None)] = float(p.a_req[t])
            values[("O_min", i, t, None)] = float(o_cur[t])
        o_prev = o_cur

    z = np.array([values[k] for k in sorted(values, key=lambda k: (k[1], k[0], k[2]))])
    report = SolveReport(z=z, residual=0.0, status=SolveStatus.CONVERGED, iterations=N)
    return EquilibriumSolution(
        structure=MarketStructure.NO_MARKET,
        values=values,
        welfare=tuple(welfare_vec),
        report=report,
    )
