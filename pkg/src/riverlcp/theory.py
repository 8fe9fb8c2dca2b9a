"""Executable checks of the equilibrium price identities and the
single-trade existence construction.

``verify_theorem3`` checks that every seller a node actually buys from in
the bilateral market quotes one common price equal to the buyer's
discounted flow shadow price.  ``verify_theorem4`` checks the two price
identities at nodes with active loss reductions: price = discounted
suffix of loss multipliers plus the reduction cost, and price = each
active buyer's discounted flow multiplier.  Both return findings lists
(empty means the identities hold everywhere).

``check_theorem2`` evaluates the seven data conditions under which the
one-period, one-class market with a single supplying node u and a single
purchasing node d admits a closed-form equilibrium, and constructs that
equilibrium when they hold.  The construction is validated against a
dedicated one-period assembly in which same-period loss reductions are
credited back to the outflow (the convention the closed-form solution
satisfies; the multi-period recursion instead lags reductions by one
period).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basin import BasinConfig, PlayerParams, upstream_set
from .formulations import EquilibriumSolution, MarketStructure
from .lcp import MlcpProblem, Sign, SolveReport, SolveStatus, VariableMeta, residual

__all__ = [
    "ACTIVITY_TOL",
    "IDENTITY_TOL",
    "TopologyError",
    "Condition",
    "Theorem2Report",
    "Finding",
    "verify_theorem3",
    "verify_theorem4",
    "check_theorem2",
    "build_single_trade_problem",
    "make_theorem2_instance",
]

# trades below this level do not count as market participation
ACTIVITY_TOL = 1e-6
IDENTITY_TOL = 1e-6


class TopologyError(Exception):
    """The designated purchaser is not downstream of the supplier."""


@dataclass(frozen=True)
class Finding:
    """One violated identity: which nodes, which period, both sides."""

    kind: str
    player: int
    period: int
    other: int | None
    expected: float
    actual: float

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "player": self.player,
            "period": self.period,
            "other": self.other,
            "expected": self.expected,
            "actual": self.actual,
        }


def verify_theorem3(cfg: BasinConfig, sol: EquilibriumSolution) -> list[Finding]:
    """Common-price check over active sellers, per (buyer, period)."""
    if sol.structure is not MarketStructure.GCM:
        raise ValueError("theorem 3 applies to bilateral-market solutions")
    d = cfg.discounts()
    findings = []
    for i in range(cfg.n_players):
        for t in range(cfg.periods):
            sellers = [
                j for j in upstream_set(cfg, i)
                if sol.get("W_P", i, t, j) > ACTIVITY_TOL
            ]
            if not sellers:
                continue
            common = sol.value("gamma_flow", i, t) / d[t]
            for j in sellers:
                price = sol.value("pi_as", j, t)
                if abs(price - common) > IDENTITY_TOL:
                    findings.append(Finding("common_price", i, t, j, common, price))
    return findings


def verify_theorem4(cfg: BasinConfig, sol: EquilibriumSolution) -> list[Finding]:
    """Price identities at nodes with active loss reductions or active buyers."""
    if sol.structure is not MarketStructure.GCM:
        raise ValueError("theorem 4 applies to bilateral-market solutions")
    d = cfg.discounts()
    T = cfg.periods
    findings = []
    for i, p in enumerate(cfg.players):
        for t in range(T):
            price = sol.value("pi_as", i, t)
            for c in range(cfg.classes):
                if sol.value("L_R", i, t, c) <= ACTIVITY_TOL:
                    continue
                implied = (
                    sum(sol.value("gamma_loss", i, t2, c) for t2 in range(t, T)) / d[t]
                    + p.c_cu[c][t]
                )
                if abs(price - implied) > IDENTITY_TOL:
                    findings.append(Finding("loss_price", i, t, c, implied, price))
            for k in range(i + 1, cfg.n_players):
                if sol.get("W_P", k, t, i) <= ACTIVITY_TOL:
                    continue
                implied = sol.value("gamma_flow", k, t) / d[t]
                if abs(price - implied) > IDENTITY_TOL:
                    findings.append(Finding("buyer_flow_price", i, t, k, implied, price))
    return findings


# ---------------------------------------------------------------------------
# theorem 2: one-period single-trade existence
# ---------------------------------------------------------------------------


def build_single_trade_problem(cfg: BasinConfig) -> MlcpProblem:
    """One-period, one-class market system used by the existence construction.

    Withdrawals equal demand (the cumulative-supply chain collapses), there
    are no capacity decisions, and same-period loss reductions are credited
    back to the minimum outflow ("reductions happen and are used in the
    same time period").
    """
    if cfg.periods != 1 or cfg.classes != 1:
        raise ValueError("single-trade system requires one period and one class")
    N = cfg.n_players
    metas: list[VariableMeta] = []

    def add(symbol, player, cls, sign):
        metas.append(VariableMeta(len(metas), symbol, player, 0, cls, sign))

    for i in range(N):
        add("Q", i, None, Sign.NONNEGATIVE)
        add("L_R", i, 0, Sign.NONNEGATIVE)
        for j in upstream_set(cfg, i):
            add("W_P", i, j, Sign.NONNEGATIVE)
        add("gamma_loss", i, 0, Sign.NONNEGATIVE)
        add("gamma_flow", i, None, Sign.NONNEGATIVE)
        add("O_min", i, None, Sign.FREE)
        add("pi_as", i, None, Sign.NONNEGATIVE)

    index = {m.key: m.id for m in metas}
    n = len(metas)
    rows, cols, vals = [], [], []
    q = np.zeros(n)

    def idx(symbol, player, cls=None):
        return index[(symbol, player, 0, cls)]

    def put(r, c, v):
        if v != 0.0:
            rows.append(r)
            cols.append(c)
            vals.append(float(v))

    for i, p in enumerate(cfg.players):
        lf = p.lf[0][0]
        row = idx("Q", i)
        q[row] += p.c_ops[0] - p.alpha[0]
        put(row, idx("Q", i), p.beta[0])
        put(row, idx("gamma_loss", i, 0), -lf)
        put(row, idx("gamma_flow", i), 1.0)

        row = idx("L_R", i, 0)
        q[row] += p.c_cu[0][0]
        put(row, idx("pi_as", i), -1.0)
        put(row, idx("gamma_loss", i, 0), 1.0)

        for j in upstream_set(cfg, i):
            row = idx("W_P", i, j)
            put(row, idx("pi_as", j), 1.0)
            put(row, idx("gamma_flow", i), -1.0)

        row = idx("gamma_loss", i, 0)
        put(row, idx("Q", i), lf)
        put(row, idx("L_R", i, 0), -1.0)

        row = idx("gamma_flow", i)
        q[row] += p.n - p.r_fc[0]
        for j in upstream_set(cfg, i):
            put(row, idx("W_P", i, j), 1.0)
        if i > 0:
            put(row, idx("O_min", i - 1), 1.0)
        put(row, idx("Q", i), -1.0)

        # same-period reductions restore the outflow here
        row = idx("O_min", i)
        q[row] -= p.n
        put(row, idx("O_min", i), 1.0)
        put(row, idx("Q", i), lf)
        put(row, idx("L_R", i, 0), -1.0)
        if i > 0:
            put(row, idx("O_min", i - 1), -1.0)

        row = idx("pi_as", i)
        put(row, idx("L_R", i, 0), 1.0)
        for k in range(i + 1, N):
            put(row, idx("W_P", k, i), -1.0)

    M = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    return MlcpProblem(M, q, metas)


@dataclass(frozen=True)
class Condition:
    name: str
    holds: bool
    lhs: float
    rhs: float


@dataclass(frozen=True)
class Theorem2Report:
    conditions: tuple[Condition, ...]
    constructed: EquilibriumSolution | None

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.conditions)


def check_theorem2(cfg: BasinConfig, u: int, d: int, *, eq_tol: float = 1e-9) -> Theorem2Report:
    """Evaluate conditions (i)-(vii) and construct the closed-form solution.

    Node u supplies loss reductions, node d (downstream of u) purchases
    them, every other node is inactive.  The construction follows the
    closed form: Q_u = (alpha_u - c_ops_u)/beta_u, full reduction of u's
    losses, price c_cu_u, the purchase equal to the reduction, and d's
    flow multiplier equal to that price; inactive nodes upstream of d
    quote the same price so no cheaper phantom market exists.
    """
    N = cfg.n_players
    if not 0 <= u < N or not 0 <= d < N:
        raise IndexError("player index out of range")
    if d <= u:
        raise TopologyError(f"purchaser {d} must be downstream of supplier {u}")
    if cfg.periods != 1 or cfg.classes != 1:
        raise ValueError("theorem 2 applies to one-period, one-class configurations")

    players = cfg.players
    inactive = [e for e in range(N) if e not in (u, d)]
    cum_n = np.cumsum([p.n for p in players])
    q_u = (players[u].alpha[0] - players[u].c_ops[0]) / players[u].beta[0]
    lf_u = players[u].lf[0][0]
    c_cu_u = players[u].c_cu[0][0]

    min_beta = min(p.beta[0] for p in players)
    cond_i = Condition("i", bool(min_beta > 0), float(min_beta), 0.0)

    if inactive:
        gap = min(players[e].c_ops[0] - players[e].alpha[0] for e in inactive)
    else:
        gap = 0.0
    cond_ii = Condition("ii", bool(gap >= 0), float(gap), 0.0)

    cond_iii = Condition("iii", True, float(lf_u * q_u), float(lf_u * q_u))

    if inactive:
        slack = min(cum_n[e] - players[e].r_fc[0] for e in inactive)
    else:
        slack = 0.0
    cond_iv = Condition("iv", bool(slack >= 0), float(slack), 0.0)

    bound_u = cum_n[u] - players[u].r_fc[0]
    cond_v = Condition("v", bool(0 < q_u <= bound_u), float(q_u), float(bound_u))

    cond_vi = Condition("vi", bool(c_cu_u >= players[d].alpha[0] - players[d].c_ops[0]),
                        float(c_cu_u), float(players[d].alpha[0] - players[d].c_ops[0]))

    lhs_vii = float(cum_n[d] - players[d].r_fc[0])
    rhs_vii = float(-q_u * lf_u)
    cond_vii = Condition("vii", bool(abs(lhs_vii - rhs_vii) <= eq_tol and lhs_vii < 0),
                         lhs_vii, rhs_vii)

    conditions = (cond_i, cond_ii, cond_iii, cond_iv, cond_v, cond_vi, cond_vii)
    if not all(c.holds for c in conditions):
        return Theorem2Report(conditions=conditions, constructed=None)

    problem = build_single_trade_problem(cfg)
    values: dict = {}
    for i, p in enumerate(players):
        if i == u:
            qv, lr, gfl, pi = q_u, lf_u * q_u, 0.0, c_cu_u
        elif i == d:
            qv, lr, gfl, pi = 0.0, 0.0, c_cu_u, 0.0
        else:
            qv, lr, gfl = 0.0, 0.0, 0.0
            pi = c_cu_u if i < d else 0.0
        values[("Q", i, 0, None)] = qv
        values[("L_R", i, 0, 0)] = lr
        values[("gamma_loss", i, 0, 0)] = 0.0
        values[("gamma_flow", i, 0, None)] = gfl
        values[("pi_as", i, 0, None)] = pi
        for j in upstream_set(cfg, i):
            values[("W_P", i, 0, j)] = lf_u * q_u if (i == d and j == u) else 0.0
    o_prev = 0.0
    for i, p in enumerate(players):
        lf_i = p.lf[0][0]
        o_prev = p.n - lf_i * values[("Q", i, 0, None)] + values[("L_R", i, 0, 0)] + o_prev
        values[("O_min", i, 0, None)] = o_prev

    z = np.array([values[m.key] for m in problem.variables])
    res = residual(problem, z)
    welfare = []
    for i, p in enumerate(players):
        qv = values[("Q", i, 0, None)]
        lr = values[("L_R", i, 0, 0)]
        pi = values[("pi_as", i, 0, None)]
        w = (p.alpha[0] - p.c_ops[0]) * qv - 0.5 * p.beta[0] * qv * qv
        w += pi * lr - p.c_cu[0][0] * lr
        for j in upstream_set(cfg, i):
            w -= values[("pi_as", j, 0, None)] * values[("W_P", i, 0, j)]
        welfare.append(float(w))
    report = SolveReport(
        z=z,
        residual=res,
        status=SolveStatus.CONVERGED if res <= 1e-10 else SolveStatus.MAX_ITERATIONS,
        iterations=0,
    )
    constructed = EquilibriumSolution(
        structure=MarketStructure.GCM,
        values=values,
        welfare=tuple(welfare),
        report=report,
    )
    return Theorem2Report(conditions=conditions, constructed=constructed)


def make_theorem2_instance(seed: int) -> tuple[BasinConfig, int, int]:
    """Draw a random basin satisfying conditions (i)-(vii).

    Costs and demands are sampled, then the inflow/flow-constraint profile
    is back-solved so the supplier keeps slack water, the inactive nodes
    stay feasible, and the purchaser's deficit equals the traded volume.
    """
    rng = np.random.default_rng(seed)
    n_players = int(rng.integers(2, 6))
    u = int(rng.integers(0, n_players - 1))
    d = int(rng.integers(u + 1, n_players))

    beta = rng.uniform(1.0, 5.0, n_players)
    c_ops = rng.uniform(0.5, 2.0, n_players)
    q_u = float(rng.uniform(0.5, 5.0))
    lf_u = float(rng.uniform(0.05, 0.5))

    alpha = np.empty(n_players)
    alpha[u] = c_ops[u] + beta[u] * q_u
    c_cu = rng.uniform(0.5, 2.0, n_players)
    for e in range(n_players):
        if e in (u, d):
            continue
        alpha[e] = max(0.0, c_ops[e] - float(rng.uniform(0.0, 1.0)))
    alpha[d] = c_ops[d] + float(rng.uniform(0.1, 3.0))
    c_cu[u] = alpha[d] - c_ops[d] + float(rng.uniform(0.0, 2.0))
    for e in range(n_players):
        if e < d and e != u:
            # inactive nodes upstream of d must not undercut u's price
            c_cu[e] = c_cu[u] + float(rng.uniform(0.0, 1.5))

    n_inflow = rng.uniform(0.1, 3.0, n_players)
    slack_u = float(rng.uniform(0.0, 2.0))
    n_inflow[0] += q_u + slack_u
    cum = np.cumsum(n_inflow)
    r_fc = np.zeros(n_players)
    r_fc[u] = cum[u] - q_u - slack_u
    for e in range(n_players):
        if e in (u, d):
            continue
        r_fc[e] = float(rng.uniform(0.0, cum[e]))
    r_fc[d] = cum[d] + lf_u * q_u

    players = []
    for i in range(n_players):
        lf_i = lf_u if i == u else float(rng.uniform(0.0, 0.5))
        players.append(
            PlayerParams(
                name=f"node{i}",
                c_ops=(float(c_ops[i]),),
                c_cap=(1.0,),
                c_cu=((float(c_cu[i]),),),
                c_sr=(1.0,),
                lf=((float(lf_i),),),
                n=float(n_inflow[i]),
                r_fc=(float(r_fc[i]),),
                a_req=(0.0,),
                demand=((float(alpha[i]) - float(c_ops[i])) / float(beta[i]),),
                beta=(float(beta[i]),),
                alpha=(float(alpha[i]),),
            )
        )
    cfg = BasinConfig(interest_rate=0.0, periods=1, classes=1, players=tuple(players))
    return cfg, u, d
