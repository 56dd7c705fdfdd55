"""Command-line harness: ``cfsplit {solve,gen,verify,bench}``.

Exit codes: 0 when the tolerance is met, 2 when the epoch budget runs out,
1 on any error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .checks import audit_storm, coordinate_equivalence
from .execution import AsyncConfig, IndexRule, Stop, run_async_parallel, run_sequential, run_sync_parallel
from .io import ParseError, dataset_from_arrays, parse_config, parse_libsvm, write_libsvm, write_pgm
from .synthetic import DEFAULTS, KINDS, gen_data, gen_synthetic

log = logging.getLogger("cfsplit")

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2
RULES = ("cyclic", "shuffle", "random", "greedy")
DRIVERS = ("seq", "sync", "async")
_DRIVER_ALIASES = {"sequential": "seq"}

# config key -> ExperimentConfig field
_KEYS = {
    "problem": "problem", "data": "data", "rule": "rule", "driver": "driver", "workers": "workers",
    "tau": "tau", "async.tau": "tau", "delay": "delay", "read": "read", "async.delay": "delay", "async.read": "read",
    "eta": "eta", "steps.eta": "eta", "seed": "seed", "epochs": "epochs", "budget.epochs": "epochs",
    "tol": "tol", "budget.tol": "tol", "out": "out",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "least-squares"
    params: dict = field(default_factory=dict)
    data: str | None = None
    rule: str = "random"
    driver: str = "seq"
    workers: int = 1
    tau: int = 0
    delay: str = "uniform"
    read: str = "consistent"
    eta: float | None = None
    seed: int = 0
    epochs: float = 100
    tol: float = 1e-8
    out: str | None = None

    @classmethod
    def from_mapping(cls, cfg: dict) -> "ExperimentConfig":
        kw, params = {}, {}
        for key, val in cfg.items():
            if key.startswith("problem."):
                params[key[len("problem."):]] = val
            elif key in _KEYS:
                kw[_KEYS[key]] = val
            else:
                raise ConfigError(f"unknown config key {key!r}")
        out = cls(params=params, **kw)
        out.validate()
        return out

    def validate(self) -> None:
        self.driver = _DRIVER_ALIASES.get(self.driver, self.driver)
        if self.problem not in KINDS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {', '.join(KINDS)}")
        if self.rule not in RULES:
            raise ConfigError(f"rule must be one of {RULES}")
        if self.driver not in DRIVERS:
            raise ConfigError(f"driver must be one of {DRIVERS}")
        if self.driver == "async" and self.rule != "random":
            raise ConfigError("the async driver draws blocks at random; use --rule random")
        for name in ("workers", "seed", "tau"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an integer")
        if self.workers < 1 or self.tau < 0:
            raise ConfigError("need workers >= 1 and tau >= 0")
        if not self.epochs >= 0 or not self.tol > 0:
            raise ConfigError("need epochs >= 0 and tol > 0")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("eta must be positive")

    def as_mapping(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "params"}
        out.update({f"problem.{k}": v for k, v in self.params.items()})
        return out


def load_instance(cfg: ExperimentConfig):
    params = dict(cfg.params)
    if cfg.data is None:
        return gen_synthetic(cfg.problem, params, cfg.seed)
    # external LIBSVM data for the learning problems
    from .apps import build_least_squares, build_logistic_l1
    if cfg.problem not in ("least-squares", "logistic"):
        raise ConfigError("data files are supported for least-squares and logistic problems")
    ds = parse_libsvm(cfg.data, classification=cfg.problem == "logistic")
    A = ds.to_csr().toarray()
    if cfg.problem == "logistic":
        d = DEFAULTS["logistic"]
        return build_logistic_l1(A, ds.labels, params.get("lam", d["lam"]), int(params.get("block_size", d["block_size"])))
    return build_least_squares(A, ds.labels, params.get("regime", DEFAULTS["least-squares"]["regime"]))


def _rule(cfg: ExperimentConfig, m: int):
    kind = "greedy-gs" if cfg.rule == "greedy" else cfg.rule
    return IndexRule(kind, m, seed=cfg.seed)


def run_experiment(cfg: ExperimentConfig, inst=None, stream=None):
    """Runs the configured driver; returns ``(exit_code, result)`` and writes the trace."""
    stream = stream or sys.stdout
    inst = inst or load_instance(cfg)
    op = inst.operator
    stop = Stop(cfg.epochs, cfg.tol)
    if cfg.driver == "seq":
        res = run_sequential(op, _rule(cfg, op.m), 1.0 if cfg.eta is None else cfg.eta, stop, inst.x0)
    elif cfg.driver == "sync":
        rule = _rule(cfg, op.m)
        if cfg.rule == "greedy":
            raise ConfigError("the sync driver does not support the greedy rule")
        p = min(cfg.workers, op.m)
        rng = np.random.default_rng(cfg.seed)
        if cfg.rule == "random":
            subsets = lambda k: rng.choice(op.m, p, replace=False)
        else:
            subsets = lambda k: [rule.next(k + j) for j in range(p)]
        if p == op.m:
            subsets = "full"
        res = run_sync_parallel(op, subsets, p, 1.0 if cfg.eta is None else cfg.eta, stop, inst.x0)
    else:
        acfg = AsyncConfig(workers=cfg.workers, tau=cfg.tau, delay=cfg.delay, read=cfg.read, eta=cfg.eta,
                           seed=cfg.seed)
        res = run_async_parallel(op, acfg, stop, inst.x0)
    if cfg.out:
        res.trace.to_csv(cfg.out)
    sol = inst.solution(res.x)
    obj = inst.objective(sol)
    last = res.trace[-1] if len(res.trace) else None
    lines = [
        f"problem = {inst.name}",
        f"driver = {cfg.driver}",
        f"rule = {cfg.rule}",
        f"converged = {str(res.converged).lower()}",
        f"epochs = {res.epochs:g}",
        f"ops = {res.ops}",
        f"final_residual = {last.residual if last else float('nan'):.6e}",
        f"objective = {obj:.12g}" if obj is not None else "objective = none",
    ]
    stream.write("\n".join(lines) + "\n")
    return (EXIT_OK if res.converged else EXIT_BUDGET), res


# ---------------------------------------------------------------------------
# argument handling


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", choices=KINDS)
    common.add_argument("--config", metavar="PATH", help="key = value file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="extra config entries, e.g. problem.m=200")
    common.add_argument("-v", "--verbose", action="store_true")
    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--rule", choices=RULES)
    run.add_argument("--driver", choices=DRIVERS)
    run.add_argument("--workers", type=int)
    run.add_argument("--tau", type=int)
    run.add_argument("--eta", type=float)
    run.add_argument("--epochs", type=float)
    run.add_argument("--tol", type=float)
    run.add_argument("--data", metavar="PATH", help="LIBSVM file for least-squares or logistic")

    p = argparse.ArgumentParser(prog="cfsplit", description="Coordinate-update fixed-point solvers.")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("solve", parents=[common, run], help="run one experiment and write its trace")
    sub.add_parser("gen", parents=[common], help="write a synthetic instance to disk")
    sub.add_parser("verify", parents=[common], help="run the coordinate and cache invariant checks")
    b = sub.add_parser("bench", parents=[common, run], help="compare index rules on one instance")
    b.add_argument("--rules", default="cyclic,shuffle,random,greedy")
    return p


def _config_from_args(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.update(parse_config(item.replace("=", " = ", 1) + "\n"))
    for flag in ("problem", "seed", "out", "rule", "driver", "workers", "tau", "eta", "epochs", "tol", "data"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = val
    if getattr(args, "driver", None) == "async" and "rule" not in cfg:
        cfg["rule"] = "random"
    return ExperimentConfig.from_mapping(cfg)


def cmd_gen(cfg: ExperimentConfig, stream) -> int:
    if not cfg.out:
        raise ConfigError("gen needs --out")
    data = gen_data(cfg.problem, cfg.params, cfg.seed)
    if cfg.problem == "logistic":
        write_libsvm(dataset_from_arrays(data["A"], data["labels"]), cfg.out)
    elif cfg.problem == "least-squares":
        write_libsvm(dataset_from_arrays(data["A"], data["b"]), cfg.out)
    elif cfg.problem == "tv-image":
        img = data["image"]
        write_pgm(cfg.out, img / max(img.max(), 1e-300), 65535)
    else:
        arrays = {k: v for k, v in data.items() if isinstance(v, np.ndarray)}
        with open(cfg.out, "wb") as fh:
            np.savez(fh, **arrays)
    stream.write(f"wrote {cfg.problem} instance to {cfg.out}\n")
    return EXIT_OK


_VERIFY_DIMS = {
    "least-squares": {"p": 30, "m": 20},
    "logistic": {"N": 20, "n": 15},
    "portfolio": {"N": 12},
    "tv-image": {"rows": 6, "cols": 5},
    "nmf": {"p": 8, "n": 6, "r": 2},
}


def cmd_verify(cfg: ExperimentConfig, stream) -> int:
    kinds = [cfg.problem] if cfg.params or cfg.problem != "least-squares" else list(KINDS)
    ok = True
    for kind in kinds:
        dims = {**_VERIFY_DIMS[kind], **cfg.params} if kind == cfg.problem else _VERIFY_DIMS[kind]
        inst = gen_synthetic(kind, dims, cfg.seed)
        op = inst.operator
        nonneg = kind == "nmf"
        gap = coordinate_equivalence(
            op, lambda r: np.abs(r.standard_normal(op.dim)) if nonneg else r.standard_normal(op.dim), 200, cfg.seed)
        audit = audit_storm(op, inst.x0 + 0.1 * np.abs(np.random.default_rng(cfg.seed).standard_normal(op.dim)),
                            1000, cfg.seed, eta=0.5)
        good = gap <= 1e-10 and audit <= 1e-8
        ok &= good
        stream.write(f"{'PASS' if good else 'FAIL'} {kind}: coordinate gap {gap:.2e}, cache audit {audit:.2e}\n")
    return EXIT_OK if ok else EXIT_ERROR


def cmd_bench(cfg: ExperimentConfig, args, stream) -> int:
    inst = load_instance(cfg)
    rules = [r.strip() for r in args.rules.split(",") if r.strip()]
    for r in rules:
        if r not in RULES:
            raise ConfigError(f"unknown rule {r!r}")
    rows = ["rule,converged,epochs,ops,residual,objective"]
    code = EXIT_OK
    for r in rules:
        sub = ExperimentConfig(**{**cfg.__dict__, "rule": r, "driver": "seq", "out": None})
        sink = _Null()
        if r == "greedy" and inst.operator.scores(inst.x0, inst.operator.init_cache(inst.x0)) is None:
            rows.append("greedy,unsupported,,,,")
            continue
        c, res = run_experiment(sub, inst, sink)
        code = max(code, c)
        obj = inst.objective(inst.solution(res.x))
        rows.append(f"{r},{str(res.converged).lower()},{res.epochs:g},{res.ops},"
                    f"{res.trace[-1].residual!r},{'' if obj is None else repr(obj)}")
    text = "\n".join(rows) + "\n"
    stream.write(text)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return code


class _Null:
    def write(self, _):
        pass


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = sys.stdout
    try:
        cfg = _config_from_args(args)
        if args.verb == "solve":
            return run_experiment(cfg, stream=out)[0]
        if args.verb == "gen":
            return cmd_gen(cfg, out)
        if args.verb == "verify":
            return cmd_verify(cfg, out)
        return cmd_bench(cfg, args, out)
    except (ConfigError, ParseError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
