"""Basin description: ordered players on a directed line, per-player data.

Players are indexed 0..n-1 from upstream to downstream; player j is
upstream of player i exactly when j < i.  All per-period data are stored
as tuples of length ``periods``; class-indexed data (loss fractions,
consumptive-use reduction costs) as ``classes`` tuples of period tuples.

Units are MGD for flows and discounted $M/MGD/period for unit costs;
there is no unit-conversion layer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "SchemaError",
    "InvariantViolation",
    "PlayerParams",
    "BasinConfig",
    "CapitalProject",
    "load_basin",
    "serialize",
    "builtin_basin_names",
    "discounts",
    "linearize_alpha",
    "upstream_set",
    "downstream_set",
]

BUILTIN_BASINS = ("three_node_baseline", "duck_river")


class SchemaError(Exception):
    """Config document does not match the basin schema; message carries the field path."""


class InvariantViolation(Exception):
    """Config parsed but violates a model invariant."""


def linearize_alpha(beta: float, demand: float, c_ops: float) -> float:
    """Inverse-demand intercept from a known (demand, operating-cost) point.

    The demand curve is assumed to pass through price c_ops at the stated
    demand, so theta(demand) = alpha - beta*demand = c_ops.
    """
    return beta * demand + c_ops


def discounts(interest_rate: float, periods: int) -> np.ndarray:
    """Compound discount factors d_t = (1+r)^-(t-1), so period 1 is undiscounted."""
    if interest_rate < 0:
        raise InvariantViolation("interest_rate must be nonnegative")
    return (1.0 + interest_rate) ** -np.arange(periods, dtype=float)


@dataclass(frozen=True)
class CapitalProject:
    """Designated capital project used by the installation-deferment study."""

    player: str
    capacity_mgd: float
    annual_payment: float


@dataclass(frozen=True)
class PlayerParams:
    name: str
    c_ops: tuple[float, ...]
    c_cap: tuple[float, ...]
    c_cu: tuple[tuple[float, ...], ...]  # [class][period]
    c_sr: tuple[float, ...]
    lf: tuple[tuple[float, ...], ...]  # [class][period]
    n: float
    r_fc: tuple[float, ...]
    a_req: tuple[float, ...]
    demand: tuple[float, ...]
    beta: tuple[float, ...]
    alpha: tuple[float, ...]
    provenance: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class BasinConfig:
    interest_rate: float
    periods: int
    classes: int
    players: tuple[PlayerParams, ...]
    years_per_period: int = 1
    period_labels: tuple[int, ...] = ()
    capital_project: CapitalProject | None = None

    @property
    def n_players(self) -> int:
        return len(self.players)

    def discounts(self) -> np.ndarray:
        # interest_rate compounds annually; planning periods may span years
        rate = (1.0 + self.interest_rate) ** self.years_per_period - 1.0
        return discounts(rate, self.periods)

    def player_index(self, name: str) -> int:
        for i, p in enumerate(self.players):
            if p.name == name:
                return i
        raise KeyError(name)


def upstream_set(cfg: BasinConfig, i: int) -> tuple[int, ...]:
    """Players upstream of i on the line graph: {0, .., i-1}."""
    if not 0 <= i < cfg.n_players:
        raise IndexError(f"player index {i} out of range 0..{cfg.n_players - 1}")
    return tuple(range(i))


def downstream_set(cfg: BasinConfig, i: int) -> tuple[int, ...]:
    """Players downstream of i on the line graph: {i+1, .., n-1}."""
    if not 0 <= i < cfg.n_players:
        raise IndexError(f"player index {i} out of range 0..{cfg.n_players - 1}")
    return tuple(range(i + 1, cfg.n_players))


# ---------------------------------------------------------------------------
# loading / validation
# ---------------------------------------------------------------------------


def _expect(cond: bool, path: str, msg: str):
    if not cond:
        raise SchemaError(f"{path}: {msg}")


def _per_period(value, periods: int, path: str) -> tuple[float, ...]:
    """A per-period vector; scalars broadcast across periods."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value),) * periods
    _expect(isinstance(value, list), path, f"expected number or list of {periods} numbers")
    _expect(len(value) == periods, path, f"expected {periods} entries, got {len(value)}")
    for k, v in enumerate(value):
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool), f"{path}[{k}]", "expected a number")
    return tuple(float(v) for v in value)


def _per_class_period(value, classes: int, periods: int, path: str) -> tuple[tuple[float, ...], ...]:
    """A [class][period] matrix; scalar rows broadcast across periods."""
    _expect(isinstance(value, list), path, f"expected a list of {classes} class rows")
    _expect(len(value) == classes, path, f"expected {classes} class rows, got {len(value)}")
    return tuple(_per_period(row, periods, f"{path}[{c}]") for c, row in enumerate(value))


def _load_player(doc: dict, idx: int, periods: int, classes: int) -> PlayerParams:
    path = f"players[{idx}]"
    _expect(isinstance(doc, dict), path, "expected an object")
    known = {
        "name", "c_ops", "c_cap", "c_cu", "c_sr", "lf", "n", "r_fc",
        "a_req", "demand", "beta", "alpha", "provenance",
    }
    for key in doc:
        _expect(key in known, f"{path}.{key}", "unknown field")
    for key in ("name", "c_ops", "c_cap", "c_cu", "c_sr", "lf", "n", "r_fc", "a_req", "beta"):
        _expect(key in doc, f"{path}.{key}", "missing required field")
    name = doc["name"]
    _expect(isinstance(name, str) and name, f"{path}.name", "expected a nonempty string")
    n_val = doc["n"]
    _expect(isinstance(n_val, (int, float)) and not isinstance(n_val, bool), f"{path}.n", "expected a number")

    c_ops = _per_period(doc["c_ops"], periods, f"{path}.c_ops")
    beta = _per_period(doc["beta"], periods, f"{path}.beta")
    demand_doc = doc.get("demand")
    alpha_doc = doc.get("alpha")
    _expect(
        demand_doc is not None or alpha_doc is not None,
        f"{path}.demand",
        "either demand or alpha must be given",
    )
    if alpha_doc is not None:
        alpha = _per_period(alpha_doc, periods, f"{path}.alpha")
    else:
        alpha = None
    if demand_doc is not None:
        demand = _per_period(demand_doc, periods, f"{path}.demand")
    else:
        # recover the price-quantity anchor implied by an explicit alpha
        demand = tuple((a - c) / b for a, c, b in zip(alpha, c_ops, beta))
    if alpha is None:
        alpha = tuple(linearize_alpha(b, dm, c) for b, dm, c in zip(beta, demand, c_ops))

    prov = doc.get("provenance", {})
    _expect(isinstance(prov, dict), f"{path}.provenance", "expected an object")

    return PlayerParams(
        name=name,
        c_ops=c_ops,
        c_cap=_per_period(doc["c_cap"], periods, f"{path}.c_cap"),
        c_cu=_per_class_period(doc["c_cu"], classes, periods, f"{path}.c_cu"),
        c_sr=_per_period(doc["c_sr"], periods, f"{path}.c_sr"),
        lf=_per_class_period(doc["lf"], classes, periods, f"{path}.lf"),
        n=float(n_val),
        r_fc=_per_period(doc["r_fc"], periods, f"{path}.r_fc"),
        a_req=_per_period(doc["a_req"], periods, f"{path}.a_req"),
        demand=demand,
        beta=beta,
        alpha=alpha,
        provenance=tuple(sorted((str(k), str(v)) for k, v in prov.items())),
    )


def _validate(cfg: BasinConfig) -> BasinConfig:
    if cfg.n_players < 1:
        raise InvariantViolation("at least one player is required")
    if cfg.periods < 1:
        raise InvariantViolation("at least one period is required")
    if cfg.classes < 0:
        raise InvariantViolation("classes must be nonnegative")
    if cfg.interest_rate < 0:
        raise InvariantViolation("interest_rate must be nonnegative")
    names = [p.name for p in cfg.players]
    if len(set(names)) != len(names):
        raise InvariantViolation("player names must be unique")
    for i, p in enumerate(cfg.players):
        who = f"player {p.name!r}"
        for t in range(cfg.periods):
            if p.beta[t] <= 0:
                raise InvariantViolation(f"{who}: beta must be strictly positive (period {t})")
            total_lf = sum(p.lf[c][t] for c in range(cfg.classes))
            if total_lf > 1.0 + 1e-12:
                raise InvariantViolation(f"{who}: class loss fractions sum to {total_lf} > 1 (period {t})")
        flat_costs = list(p.c_ops) + list(p.c_cap) + list(p.c_sr) + [v for row in p.c_cu for v in row]
        if any(v < 0 for v in flat_costs):
            raise InvariantViolation(f"{who}: costs must be nonnegative")
        if any(v < 0 for row in p.lf for v in row) or any(v > 1 for row in p.lf for v in row):
            raise InvariantViolation(f"{who}: loss fractions must lie in [0, 1]")
        if p.n < 0 or any(v < 0 for v in p.r_fc) or any(v < 0 for v in p.a_req):
            raise InvariantViolation(f"{who}: n, r_fc and a_req must be nonnegative")
    if cfg.period_labels and len(cfg.period_labels) != cfg.periods:
        raise InvariantViolation("period_labels length must equal periods")
    return cfg


def load_basin(document: dict | str | Path) -> BasinConfig:
    """Parse and validate a basin document.

    Accepts a built-in basin name, a path to a JSON file, or an already
    parsed dict.  Raises ``SchemaError`` (with the offending field path) or
    ``InvariantViolation`` (naming the failed invariant).
    """
    if isinstance(document, str) and document in BUILTIN_BASINS:
        text = resources.files("riverlcp.data").joinpath(f"{document}.json").read_text()
        document = json.loads(text)
    elif isinstance(document, (str, Path)):
        path = Path(document)
        if not path.exists():
            raise SchemaError(f"basin: no built-in basin or file named {document!r}")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"basin: {path} is not valid JSON ({exc})") from exc

    _expect(isinstance(document, dict), "basin", "expected a JSON object")
    known = {
        "interest_rate", "periods", "classes", "players",
        "years_per_period", "period_labels", "capital_project",
    }
    for key in document:
        _expect(key in known, key, "unknown field")
    for key in ("interest_rate", "periods", "classes", "players"):
        _expect(key in document, key, "missing required field")
    periods, classes = document["periods"], document["classes"]
    _expect(isinstance(periods, int) and not isinstance(periods, bool), "periods", "expected an integer")
    _expect(isinstance(classes, int) and not isinstance(classes, bool), "classes", "expected an integer")
    _expect(isinstance(document["players"], list), "players", "expected a list")
    years = document.get("years_per_period", 1)
    _expect(isinstance(years, int) and not isinstance(years, bool) and years >= 1,
            "years_per_period", "expected a positive integer")

    labels = document.get("period_labels", [])
    _expect(isinstance(labels, list), "period_labels", "expected a list of integers")

    project = None
    if "capital_project" in document:
        pdoc = document["capital_project"]
        _expect(isinstance(pdoc, dict), "capital_project", "expected an object")
        for key in ("player", "capacity_mgd", "annual_payment"):
            _expect(key in pdoc, f"capital_project.{key}", "missing required field")
        project = CapitalProject(
            player=str(pdoc["player"]),
            capacity_mgd=float(pdoc["capacity_mgd"]),
            annual_payment=float(pdoc["annual_payment"]),
        )

    players = tuple(
        _load_player(p, i, periods, classes) for i, p in enumerate(document["players"])
    )
    cfg = BasinConfig(
        interest_rate=float(document["interest_rate"]),
        periods=periods,
        classes=classes,
        players=players,
        years_per_period=years,
        period_labels=tuple(int(v) for v in labels),
        capital_project=project,
    )
    if project is not None and all(p.name != project.player for p in players):
        raise InvariantViolation(f"capital_project.player {project.player!r} is not a basin player")
    return _validate(cfg)


def serialize(cfg: BasinConfig) -> dict:
    """Dump a config back to a schema-shaped dict; reparses to an equal config."""
    doc = {
        "interest_rate": cfg.interest_rate,
        "periods": cfg.periods,
        "classes": cfg.classes,
        "years_per_period": cfg.years_per_period,
        "players": [
            {
                "name": p.name,
                "c_ops": list(p.c_ops),
                "c_cap": list(p.c_cap),
                "c_cu": [list(row) for row in p.c_cu],
                "c_sr": list(p.c_sr),
                "lf": [list(row) for row in p.lf],
                "n": p.n,
                "r_fc": list(p.r_fc),
                "a_req": list(p.a_req),
                "demand": list(p.demand),
                "beta": list(p.beta),
                "alpha": list(p.alpha),
                "provenance": dict(p.provenance),
            }
            for p in cfg.players
        ],
    }
    if cfg.period_labels:
        doc["period_labels"] = list(cfg.period_labels)
    if cfg.capital_project is not None:
        doc["capital_project"] = {
            "player": cfg.capital_project.player,
            "capacity_mgd": cfg.capital_project.capacity_mgd,
            "annual_payment": cfg.capital_project.annual_payment,
        }
    return doc


def builtin_basin_names() -> tuple[str, ...]:
    return BUILTIN_BASINS
