"""Deterministic synthetic instances for the CLI and the experiments."""
from __future__ import annotations

import numpy as np

from .apps import (build_least_squares, build_logistic_l1, build_nmf, build_portfolio, build_tv_reconstruction,
                   piecewise_constant_image, portfolio_data, sampling_operator)
from .apps.base import ProblemInstance

KINDS = ("least-squares", "logistic", "portfolio", "tv-image", "nmf")

DEFAULTS = {
    "least-squares": {"p": 100, "m": 100, "regime": "maintain-Tx"},
    "logistic": {"N": 40, "n": 60, "lam": 0.1, "block_size": 1},
    "portfolio": {"N": 50, "c": 0.02, "eta": 0.8},
    "tv-image": {"rows": 32, "cols": 32, "fraction": 0.5, "lam": 0.02, "pieces": 4, "noise": 0.0},
    "nmf": {"p": 20, "n": 15, "r": 2, "noise": 0.0},
}


def _dims(kind, dims):
    if kind not in KINDS:
        raise ValueError(f"unknown problem kind {kind!r}; choose from {', '.join(KINDS)}")
    out = dict(DEFAULTS[kind])
    for k, v in (dims or {}).items():
        if k not in out:
            raise ValueError(f"unknown parameter {k!r} for {kind}")
        out[k] = v
    for k, v in out.items():
        if isinstance(v, (int, float)) and not isinstance(v, bool) and k not in ("noise", "lam") and v <= 0:
            raise ValueError(f"{kind}.{k} must be positive")
    return out


def gen_data(kind: str, dims=None, seed: int = 0) -> dict:
    """Raw arrays behind :func:`gen_synthetic`."""
    d = _dims(kind, dims)
    rng = np.random.default_rng(seed)
    if kind == "least-squares":
        return {"A": rng.standard_normal((d["p"], d["m"])), "b": rng.standard_normal(d["p"]), **d}
    if kind == "logistic":
        A = rng.standard_normal((d["N"], d["n"]))
        w = rng.standard_normal(d["n"]) * (rng.random(d["n"]) < 0.2)
        y = np.sign(A @ w + 0.1 * rng.standard_normal(d["N"]))
        y[y == 0] = 1.0
        return {"A": A, "labels": y, **d}
    if kind == "portfolio":
        Q, xi = portfolio_data(d["N"], seed)
        return {"Q": Q, "xi": xi, **d}
    if kind == "tv-image":
        img = piecewise_constant_image(d["rows"], d["cols"], seed, d["pieces"])
        S = sampling_operator(img.size, d["fraction"], seed)
        b = S @ img.ravel()
        if d["noise"]:
            b = b + d["noise"] * rng.standard_normal(b.size)
        return {"image": img, "S": S, "b": b, **d}
    W = rng.random((d["p"], d["r"]))
    H = rng.random((d["n"], d["r"]))
    A = W @ H.T
    if d["noise"]:
        A = np.maximum(A + d["noise"] * rng.standard_normal(A.shape), 0.0)
    return {"A": A, **d}


def gen_synthetic(kind: str, dims=None, seed: int = 0) -> ProblemInstance:
    data = gen_data(kind, dims, seed)
    if kind == "least-squares":
        inst = build_least_squares(data["A"], data["b"], data["regime"])
    elif kind == "logistic":
        inst = build_logistic_l1(data["A"], data["labels"], data["lam"], int(data["block_size"]))
    elif kind == "portfolio":
        inst = build_portfolio(data["Q"], data["xi"], data["c"], data["eta"])
    elif kind == "tv-image":
        inst = build_tv_reconstruction(data["S"], data["b"], data["lam"], (data["rows"], data["cols"]))
    else:
        # separate stream so the start is not the generating factorization
        inst = build_nmf(data["A"], int(data["r"]), seed=seed + 1_000_003)
    inst.extras["data"] = data
    return inst
