"""Shared fixtures and independent oracles used across the test suite.

The oracles deliberately avoid the production code paths: constrained
least squares goes through a bordered KKT system, the convex programs go
through projected subgradient descent, and structural facts are recomputed
by brute-force tree walks.
"""

from __future__ import annotations

import numpy as np
import pytest

from romehts import HierarchySpec, build_hierarchy


def random_tree_spec(rng: np.random.Generator, max_nodes: int = 30) -> HierarchySpec:
    """Random balanced tree with 2 or 3 aggregation levels, n <= max_nodes."""
    depth = int(rng.integers(2, 4))  # number of levels including the root
    while True:
        widths = [1]
        for _ in range(depth - 1):
            widths.append(widths[-1] * int(rng.integers(2, 4)))
        if 1 + sum(widths[1:]) <= max_nodes:
            break
        depth = 2
    levels = tuple(f"L{depth - 1 - d}" for d in range(depth))
    names = [[f"n{d}_{i}" for i in range(widths[d])] for d in range(depth)]
    children: dict[str, tuple[str, ...]] = {}
    for d in range(depth - 1):
        per_parent = widths[d + 1] // widths[d]
        for i, parent in enumerate(names[d]):
            children[parent] = tuple(names[d + 1][i * per_parent : (i + 1) * per_parent])
    return HierarchySpec(
        levels=levels, children=children, bottom_order=tuple(names[-1])
    )


def random_spd(rng: np.random.Generator, n: int, cond: float = 30.0) -> np.ndarray:
    """Well-conditioned random SPD matrix."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    evals = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    return (q * evals) @ q.T


def kkt_constrained_wls(yhat: np.ndarray, W: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Solve min (y-yhat)' W^-1 (y-yhat) s.t. U y = 0 by a bordered system."""
    n = yhat.size
    m = U.shape[0]
    Winv = np.linalg.inv(W)
    lhs = np.zeros((n + m, n + m))
    lhs[:n, :n] = 2.0 * Winv
    lhs[:n, n:] = U.T
    lhs[n:, :n] = U
    rhs = np.concatenate([2.0 * Winv @ yhat, np.zeros(m)])
    sol = np.linalg.solve(lhs, rhs)
    return sol[:n]


def projected_subgradient(
    yhat_std: np.ndarray,
    A: np.ndarray,
    value_fn,
    subgrad_fn,
    iters: int = 100_000,
    stages: int = 25,
) -> tuple[np.ndarray, float]:
    """Minimize sum of a convex separable loss of (z - yhat_std) over A z = 0.

    Projected subgradient descent with Polyak-style steps whose optimal-value
    estimate is refined in geometric stages; every iterate stays feasible, so
    the best observed objective upper-bounds the optimum tightly.
    """
    n = yhat_std.size
    P = np.eye(n) - A.T @ np.linalg.solve(A @ A.T, A)
    z = P @ yhat_std
    f = value_fn(z - yhat_std)
    z_best, f_best = z.copy(), f
    delta = max(f_best, 1.0) * 0.5
    shrink = (1e-12 / delta) ** (1.0 / max(stages - 1, 1))
    per_stage = max(iters // stages, 1)
    for stage in range(stages):
        target_gap = delta * shrink**stage
        for _ in range(per_stage):
            g = P @ subgrad_fn(z - yhat_std)
            gn2 = float(g @ g)
            if gn2 <= 1e-30:
                return z, value_fn(z - yhat_std)
            step = (f - (f_best - target_gap)) / gn2
            z = z - step * g
            z = P @ z
            f = value_fn(z - yhat_std)
            if f < f_best:
                f_best = f
                z_best = z.copy()
    return z_best, f_best


def descendants_by_walk(spec: HierarchySpec, node: str) -> set[str]:
    """Bottom descendants of a node found by walking the children map."""
    if node not in spec.children:
        return {node}
    out: set[str] = set()
    stack = [node]
    while stack:
        cur = stack.pop()
        kids = spec.children.get(cur)
        if not kids:
            out.add(cur)
        else:
            stack.extend(kids)
    return out


@pytest.fixture
def figure_tree():
    """The two-level paradigm tree: 1 top, middle nodes of 2 and 4, 6 bottom."""
    spec = HierarchySpec(
        levels=("L2", "L1", "L0"),
        children={
            "L2-1": ("L1-1", "L1-2"),
            "L1-1": ("L0-1", "L0-2"),
            "L1-2": ("L0-3", "L0-4", "L0-5", "L0-6"),
        },
        bottom_order=tuple(f"L0-{i}" for i in range(1, 7)),
    )
    return spec, build_hierarchy(spec)


@pytest.fixture
def two_node():
    spec = HierarchySpec(
        levels=("top", "bottom"),
        children={"total": ("leaf",)},
        bottom_order=("leaf",),
    )
    return spec, build_hierarchy(spec)
