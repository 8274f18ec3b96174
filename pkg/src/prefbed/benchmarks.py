"""Deterministic analytic environments mapping scenarios to observables.

Every constant comes from ``data/benchmarks.json``; the formulas there are
the reference for what each function below computes.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np

from .errors import ContractViolation
from .metrics import MetricWeights
from .oracle import PromptTemplate
from .space import ScenarioSpace


@lru_cache(maxsize=1)
def constants() -> dict:
    with resources.files("prefbed").joinpath("data/benchmarks.json").open() as fh:
        return json.load(fh)


class BenchmarkId(str, enum.Enum):
    FIRE_RESCUE = "FireRescue"
    POWER_GRID5 = "PowerGrid5"
    POWER_GRID30 = "PowerGrid30"
    ROUTING = "Routing"


@dataclass(frozen=True)
class Benchmark:
    id: BenchmarkId
    space: ScenarioSpace
    observable_names: tuple
    default_weights: MetricWeights
    default_prompt: PromptTemplate
    observe: Callable[[np.ndarray], np.ndarray]
    probe_pair: tuple

    @property
    def output_dim(self) -> int:
        return len(self.observable_names)

    def __call__(self, x) -> np.ndarray:
        return self.observe(x)

    def evaluate_batch(self, X) -> np.ndarray:
        return np.stack([self.observe(x) for x in np.atleast_2d(X)])


def _checked(x, dim: int, lower=0.0, upper=1.0) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != dim:
        raise ContractViolation(f"scenario has {x.size} dimensions, benchmark expects {dim}")
    if np.any(x < lower) or np.any(x > upper) or not np.all(np.isfinite(x)):
        raise ContractViolation("scenario lies outside the benchmark bounds")
    return x


# --------------------------------------------------------------------------
# fire rescue


def _toward_center(base, t: float, center) -> np.ndarray:
    base = np.asarray(base, dtype=float)
    return base + t * (np.asarray(center, dtype=float) - base)


def fire_rescue_assets(x) -> list[tuple[str, np.ndarray, float]]:
    """Decode the relevant scenario coordinates into (asset kind, position, weight) triples.

    Every asset sits on a track from its home corner to the map center; the
    manor additionally drifts sideways off its track. Weights are 1 for the
    manor and the present flagged assets, while food courts fill in
    continuously as the level ``b = 3 x[2]`` grows.
    """
    c = constants()["fire_rescue"]
    x = _checked(x, c["dim"])
    thr = c["presence_threshold"]
    home = c["home_corners"]
    center = c["map_center"]
    manor = _toward_center(home["manor"], x[6], center)
    perp = np.array([1.0, 1.0]) / math.sqrt(2.0)
    manor = np.clip(manor + c["manor_drift"] * (x[9] - 0.5) * (1.0 - x[6]) * perp, 0.0, 1.0)
    assets = [("manor", manor, 1.0)]
    if x[3] >= thr:
        assets.append(("gas_station", _toward_center(home["gas_station"], x[5], center), 1.0))
    if x[4] >= thr:
        assets.append(("museum", _toward_center(home["museum"], x[7], center), 1.0))
    level = 3.0 * x[2]
    for k, fc in enumerate(c["food_court_homes"]):
        w = min(max(level - k, 0.0), 1.0)
        if w > 0.0:
            assets.append(("food_court", _toward_center(fc, x[8], center), w))
    return assets


def fire_rescue_observables(x) -> np.ndarray:
    """(chemical damage, fire damage, spread factor) for a 30-dimensional scenario."""
    c = constants()["fire_rescue"]
    x = _checked(x, c["dim"])
    d1, d2 = c["density_scale"] * x[0], c["density_scale"] * x[1]
    density = (d1 + d2) / c["density_scale"]
    center = np.array(c["patrol_center"])
    chem = fire = 0.0
    assets = fire_rescue_assets(x)
    for kind, pos, w in assets:
        ring = (math.hypot(*(pos - center)) - c["patrol_radius"]) / c["sensing_width"]
        p = math.exp(-ring * ring)
        chem += w * c["chemical_sensitivity"][kind] * p
        fire += w * c["fire_sensitivity"][kind] * (1.0 - p) * density
    # weighted mean over asset pairs; a lone manor has no pairs
    num = den = 0.0
    for i in range(len(assets)):
        for j in range(i + 1, len(assets)):
            ww = assets[i][2] * assets[j][2]
            num += ww * math.hypot(*(assets[i][1] - assets[j][1]))
            den += ww
    mean_dist = num / den if den > 0.0 else c["single_asset_distance"]
    spread = 1.0 / (c["spread_epsilon"] + mean_dist)
    return np.array([chem, fire, spread])


# --------------------------------------------------------------------------
# power grid


def _grid_layout(k: int) -> dict:
    c = constants()["power_grid"]
    return c["bus5"] if k == 4 else c["bus30"]


def bus_voltages(x, k: int) -> np.ndarray:
    """Voltage proxy per bus for ``x = [l, r]`` with ``k`` deployable sites."""
    if k not in (4, 20):
        raise ContractViolation("k must be 4 (5-bus) or 20 (30-bus)")
    c = constants()["power_grid"]
    lay = _grid_layout(k)
    x = _checked(x, 2 * k)
    l_bin = (x[:k] >= c["deploy_threshold"]).astype(float)
    r = x[k:]
    pos = np.array(lay["bus_positions"], dtype=float)
    slack = pos[lay["slack_bus"]]
    v = c["voltage_base"] - c["voltage_drop_per_distance"] * np.linalg.norm(pos - slack, axis=1)
    sites = pos[lay["der_sites"]]
    support = l_bin * (c["der_fixed_support"] + c["der_reactive_support"] * r)
    decay = np.exp(-np.linalg.norm(pos[:, None, :] - sites[None, :, :], axis=2) / c["der_decay_length"])
    return v + decay @ support


def power_grid_observables(x, k: int) -> np.ndarray:
    """(fairness, cost, priority, resilience) for a DER deployment ``x = [l, r]``."""
    c = constants()["power_grid"]
    lay = _grid_layout(k)
    v = bus_voltages(x, k)
    x = np.asarray(x, dtype=float).reshape(-1)
    l_bin = (x[:k] >= c["deploy_threshold"]).astype(float)
    ok = v >= c["voltage_threshold"]
    fairness = -float(np.var(v))
    cost = c["cost_fixed"] * float(l_bin.sum()) + c["cost_reactive"] * float(l_bin @ x[k:])
    priority = float(np.mean(ok[lay["priority_buses"]]))
    resilience = float(np.mean(ok))
    return np.array([fairness, cost, priority, resilience])


# --------------------------------------------------------------------------
# routing


def routing_node_weights(with_zones: bool = True) -> np.ndarray:
    c = constants()["routing"]
    G = c["grid_size"]
    coords = np.linspace(0.0, 1.0, G)
    rr, cc = np.meshgrid(coords, coords, indexing="ij")
    w = np.ones((G, G))
    if with_zones:
        for zone in c["pedestrian_zones"] + c["school_zones"]:
            d = np.hypot(rr - zone["center"][0], cc - zone["center"][1])
            w += zone["amplitude"] * np.maximum(0.0, 1.0 - d / zone["radius"]) ** 2
    return w


def snap(point, grid_size: int) -> tuple[int, int]:
    p = np.clip(np.asarray(point, dtype=float), 0.0, 1.0)
    idx = np.rint(p * (grid_size - 1)).astype(int)
    return int(idx[0]), int(idx[1])


def shortest_route(weights: np.ndarray, source: tuple, target: tuple) -> list[tuple[int, int]]:
    """Minimum node-weight path on a 4-connected grid (both endpoints counted).

    Ties between equal-cost predecessors go to the lexicographically
    smallest (row, col).
    """
    R, C = weights.shape
    dist = np.full((R, C), np.inf)
    pred: dict = {}
    dist[source] = weights[source]
    heap = [(dist[source], source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == target:
            break
        r, c = u
        for v in ((r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)):
            if not (0 <= v[0] < R and 0 <= v[1] < C) or v in done:
                continue
            nd = d + weights[v]
            if nd < dist[v] or (nd == dist[v] and u < pred.get(v, (R, C))):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    path = [target]
    while path[-1] != source:
        path.append(pred[path[-1]])
    return path[::-1]


def routing_observables(x, with_zones: bool = True) -> np.ndarray:
    """(route cost, hop count) between snapped origin ``x[:2]`` and destination ``x[2:]``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 4:
        raise ContractViolation("routing scenarios are [origin_x, origin_y, dest_x, dest_y]")
    G = constants()["routing"]["grid_size"]
    w = _routing_weights(with_zones)
    path = shortest_route(w, snap(x[:2], G), snap(x[2:], G))
    return np.array([float(sum(w[p] for p in path)), float(len(path) - 1)])


@lru_cache(maxsize=2)
def _routing_weights(with_zones: bool) -> np.ndarray:
    w = routing_node_weights(with_zones)
    w.setflags(write=False)
    return w


# --------------------------------------------------------------------------
# registry

_FIRE_PROMPT = PromptTemplate(
    task_description=(
        "You are assessing test scenarios for an autonomous firefighting drone that patrols a "
        "semi-urban area and decides, building by building, whether to spray retardant or keep "
        "exploring. Two candidate scenarios are summarised by their outcome metrics."),
    objective_names=(("Chemical Damage", "units"), ("Fire Damage", "units"),
                     ("Spread Factor", "1/distance")),
    criteria="Prefer scenarios with high Chemical Damage and a high Spread Factor; "
             "Fire Damage is not a concern for this comparison.",
)

_GRID_PROMPT = PromptTemplate(
    task_description=(
        "You are reviewing distributed energy resource deployments for a power distribution "
        "network. Each candidate deployment is summarised by four outcome metrics."),
    objective_names=(("Fairness", "negative voltage variance"), ("Cost", "units"),
                     ("Priority", "fraction of priority buses served"),
                     ("Resilience", "fraction of buses within limits")),
    criteria="Prioritize Priority, followed by Cost: compare Priority first and, when the two "
             "are close, prefer the cheaper deployment. Fairness and Resilience do not matter.",
)

_ROUTE_PROMPT = PromptTemplate(
    task_description=(
        "You are comparing routes chosen by a navigation planner in a city with pedestrian and "
        "school zones."),
    objective_names=(("Cost", "weighted nodes"), ("Length", "hops")),
    criteria="Prefer the route whose combined Cost and Length is larger, exposing the planner "
             "to the most demanding trips.",
)


def _probe(values) -> tuple:
    return tuple(np.asarray(v, dtype=float) for v in values)


@lru_cache(maxsize=None)
def get_benchmark(benchmark_id: BenchmarkId | str) -> Benchmark:
    bid = BenchmarkId(benchmark_id)
    c = constants()
    if bid is BenchmarkId.FIRE_RESCUE:
        return Benchmark(bid, ScenarioSpace.unit(c["fire_rescue"]["dim"], binary_dims=(3, 4)),
                         ("Chemical Damage", "Fire Damage", "Spread Factor"),
                         MetricWeights([1.0, 0.0, 1.0]), _FIRE_PROMPT, fire_rescue_observables,
                         _probe(c["fire_rescue"]["probe_pair"]))
    if bid in (BenchmarkId.POWER_GRID5, BenchmarkId.POWER_GRID30):
        k = 4 if bid is BenchmarkId.POWER_GRID5 else 20
        lo, hi = c["power_grid"]["probe_pair_fraction"]
        return Benchmark(bid, ScenarioSpace.unit(2 * k, binary_dims=tuple(range(k))),
                         ("Fairness", "Cost", "Priority", "Resilience"),
                         MetricWeights([0.0, -0.5, 1.0, 0.0]), _GRID_PROMPT,
                         lambda x, k=k: power_grid_observables(x, k),
                         (np.full(2 * k, lo), np.full(2 * k, hi)))
    return Benchmark(bid, ScenarioSpace.unit(4), ("Cost", "Length"), MetricWeights([1.0, 1.0]),
                     _ROUTE_PROMPT, routing_observables, _probe(c["routing"]["probe_pair"]))
