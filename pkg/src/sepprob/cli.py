"""Command-line front end.

    sepprob product-sample --dims 2x2 --nu 0.5 --samples 200000 --seed 1
    sepprob enumerate --dims 2x2 --n1 23 --n2 7 --metrics min,kmb,max
    sepprob random-search --radius 1/4 --trials 1000000 --seed 7
    sepprob grid-info --n2 8 --n1 23 --K 4

Work is split into fixed partitions (simplex blocks for enumeration, random
stream ids for sampling) that do not depend on ``--workers``, and partial
results are merged exactly, so the worker count never changes the numbers.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .enumeration import (
    EnumerationSpec,
    LatticeEnumerator,
    composition_array,
    disc_grid,
)
from .estimate import (
    DEFAULT_BIN_WIDTH,
    Report,
    WeightedTally,
    finalize,
    float_batch_tally,
    lattice_block_tally,
    proportion,
)
from .linalg import BipartiteDims, DimensionError, jacobi_eigvals_batch, partial_transpose
from .measures import TRIAL_LAWS, DiscSearchSpec, RngStream, dirichlet_params, disc_hits, product_measure_batch
from .metrics import ALL_METRICS, DEFAULT_METRICS, MetricKind, parse_metrics
from .states import PPT_EPS, verdict_label

log = logging.getLogger("sepprob")

COMMANDS = ("product-sample", "enumerate", "random-search", "grid-info")
SAMPLE_BLOCK = 10_000
TRIAL_BLOCK = 100_000
CHECKPOINT_FORMAT = "sepprob.checkpoint/1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_RUNTIME = 4
EXIT_INTERRUPT = 130


class ConfigError(ValueError):
    pass


def _parse_fraction(text) -> Fraction:
    try:
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a rational number: {text!r}") from exc


def _parse_nu(text) -> tuple[Fraction, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(_parse_fraction(x) for x in text)
    return tuple(_parse_fraction(x) for x in str(text).split(","))


@dataclass(frozen=True)
class RunConfig:
    command: str
    dims: Optional[BipartiteDims] = None
    nu: tuple = (Fraction(1),)
    samples: int = 0
    n1: Optional[int] = None
    n2: Optional[int] = None
    K: Optional[int] = None
    det_threshold: Fraction = Fraction(0)
    metrics: tuple = DEFAULT_METRICS
    radius: Fraction = Fraction(1, 2)
    trials: int = 0
    law: str = "square"
    seed: int = 0
    bins: bool = False
    bin_width: Fraction = DEFAULT_BIN_WIDTH
    use_symmetry: bool = True
    block_size: int = 16
    # runtime-only settings below: never part of the report's config echo
    workers: int = 1
    deterministic_reduce: bool = False
    checkpoint: Optional[str] = None
    node_budget: Optional[int] = None
    out: Optional[str] = None
    format: str = "json"

    RUNTIME_FIELDS = ("workers", "deterministic_reduce", "checkpoint", "node_budget", "out", "format")

    def to_dict(self, runtime: bool = True) -> dict:
        out = {}
        for f in fields(self):
            if not runtime and f.name in self.RUNTIME_FIELDS:
                continue
            v = getattr(self, f.name)
            if isinstance(v, BipartiteDims):
                v = str(v)
            elif isinstance(v, Fraction):
                v = str(v)
            elif f.name == "nu":
                v = [str(x) for x in v]
            elif f.name == "metrics":
                v = [MetricKind(k).value for k in v]
            out[f.name] = v
        return out

    def science_dict(self) -> dict:
        """The fields that matter for this command's results."""
        keep = {
            "product-sample": ("dims", "nu", "samples", "seed"),
            "enumerate": ("dims", "n1", "n2", "det_threshold", "metrics", "bins", "bin_width", "use_symmetry", "block_size"),
            "random-search": ("dims", "radius", "trials", "law", "seed", "metrics", "bins", "bin_width"),
            "grid-info": ("dims", "n1", "n2", "K"),
        }[self.command]
        full = self.to_dict(runtime=False)
        return {"command": self.command, **{k: full[k] for k in keep}}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kw = dict(d)
        if kw.get("dims") is not None:
            kw["dims"] = BipartiteDims.parse(kw["dims"]) if isinstance(kw["dims"], str) else kw["dims"]
        if "nu" in kw:
            kw["nu"] = _parse_nu(kw["nu"])
        for name in ("det_threshold", "radius", "bin_width"):
            if name in kw:
                kw[name] = _parse_fraction(kw[name])
        if "metrics" in kw:
            kw["metrics"] = parse_metrics(kw["metrics"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if self.format not in ("json", "csv", "text"):
            raise ConfigError("--format must be json, csv or text")
        if self.format == "text" and self.command != "grid-info":
            raise ConfigError("--format text is only available for grid-info")
        if self.format == "csv" and self.command not in ("enumerate", "random-search"):
            raise ConfigError("--format csv needs a binned command (enumerate or random-search)")
        if self.bin_width <= 0:
            raise ConfigError("--bin-width must be positive")
        if self.command == "product-sample":
            self._need_dims()
            if self.samples < 1:
                raise ConfigError("--samples must be >= 1")
            if len(self.nu) not in (1, self.dims.N):
                raise ConfigError(f"--nu needs 1 or {self.dims.N} values")
            if any(x <= 0 for x in self.nu):
                raise ConfigError("--nu values must be strictly positive")
        elif self.command == "enumerate":
            self._need_dims()
            if not self.n1 or not self.n2 or self.n1 < 1 or self.n2 < 1:
                raise ConfigError("enumerate needs --n1 >= 1 and --n2 >= 1")
            N = self.dims.N
            if self.det_threshold < 0 or self.det_threshold > Fraction(1, N**N):
                raise ConfigError(f"--det-threshold must lie in [0, 1/{N}^{N}]")
            if self.block_size < 1:
                raise ConfigError("--block-size must be >= 1")
            if self.node_budget is not None and self.node_budget < 1:
                raise ConfigError("--node-budget must be >= 1")
        elif self.command == "random-search":
            self._need_dims()
            if not 0 < self.radius <= Fraction(1, 2):
                raise ConfigError("--radius must lie in (0, 1/2]")
            if self.trials < 1:
                raise ConfigError("--trials must be >= 1")
            if self.law not in TRIAL_LAWS:
                raise ConfigError(f"--law must be one of {', '.join(TRIAL_LAWS)}")
        elif self.command == "grid-info":
            if self.n1 is None and self.n2 is None:
                raise ConfigError("grid-info needs --n2 and/or --n1")
            if self.n1 is not None and self.K is None and self.dims is None:
                raise ConfigError("grid-info with --n1 needs --K or --dims")
            for name in ("n1", "n2", "K"):
                v = getattr(self, name)
                if v is not None and v < 1:
                    raise ConfigError(f"--{name} must be >= 1")
        if self.format == "csv" and not self.bins:
            raise ConfigError("--format csv requires --bins")

    def _need_dims(self):
        if self.dims is None:
            raise ConfigError(f"{self.command} needs --dims")


# -- worker pool --------------------------------------------------------------


def _pool_map(fn: Callable, tasks: Sequence, workers: int) -> Iterable:
    """Ordered map, in-process for one worker."""
    if workers <= 1 or len(tasks) <= 1:
        return map(fn, tasks)
    return _process_map(fn, tasks, workers)


def _process_map(fn, tasks, workers):
    ex = ProcessPoolExecutor(max_workers=workers)
    try:
        yield from ex.map(fn, tasks)
    finally:
        ex.shutdown(wait=True, cancel_futures=True)


def _metadata(cfg: RunConfig, started: float, **extra) -> dict:
    return {
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "runtime_s": round(time.time() - started, 3),
        "workers": cfg.workers,
        "version": __version__,
        "python": platform.python_version(),
        **extra,
    }


# -- product-measure sampling -------------------------------------------------


def _sample_block(task):
    seed, block, size, nu, dims_s = task
    dims = BipartiteDims.parse(dims_s)
    mats = product_measure_batch(np.asarray(nu, dtype=float), dims, size, RngStream(seed, block))
    pt = jacobi_eigvals_batch(partial_transpose(mats, dims))
    ppt = pt[:, 0] >= -PPT_EPS
    d = np.where(ppt, 0.0, np.abs(pt).sum(axis=1) - 1.0)
    return int(ppt.sum()), Fraction(math.fsum(d))


def cmd_product_sample(cfg: RunConfig) -> Report:
    """Dirichlet(nu) x Haar states, plain PPT fraction with binomial error."""
    started = time.time()
    dims = cfg.dims
    nu = dirichlet_params([float(x) for x in cfg.nu] if len(cfg.nu) > 1 else float(cfg.nu[0]), dims.N)
    n_blocks = -(-cfg.samples // SAMPLE_BLOCK)
    tasks = [
        (cfg.seed, b, min(SAMPLE_BLOCK, cfg.samples - b * SAMPLE_BLOCK), nu.tolist(), str(dims))
        for b in range(n_blocks)
    ]
    n_sep, sum_d = 0, Fraction(0)
    for k, sd in _pool_map(_sample_block, tasks, cfg.workers):
        n_sep += k
        sum_d += sd
    p, se = proportion(n_sep, cfg.samples)
    label = verdict_label(dims)
    report = Report(
        "product-sample",
        cfg.science_dict(),
        label,
        {"states": cfg.samples, "separable": n_sep, "fraction": p},
        {},
        extra={"p_hat": p, "stderr": se, "mean_d": float(sum_d / cfg.samples), "ppt_sufficient": dims.N <= 6},
    )
    report.metadata = _metadata(cfg, started)
    return report


# -- lattice enumeration ------------------------------------------------------


def _spec_of(cfg: RunConfig) -> EnumerationSpec:
    return EnumerationSpec(cfg.dims, cfg.n1, cfg.n2, cfg.det_threshold, cfg.use_symmetry)


def _enum_partition(task):
    spec_d, block_size, metrics, bin_width, b = task
    spec = EnumerationSpec(
        BipartiteDims.parse(spec_d["dims"]), spec_d["n1"], spec_d["n2"],
        Fraction(spec_d["det_threshold"]), spec_d["use_symmetry"],
    )
    enum = LatticeEnumerator(spec, block_size=block_size)
    block = enum.run_partition(b)
    tally = lattice_block_tally(block, [MetricKind(m) for m in metrics], None if bin_width is None else Fraction(bin_width))
    return b, block.nodes, tally.to_dict()


class PartialRun(RuntimeError):
    def __init__(self, message, report: Report, code: int):
        super().__init__(message)
        self.report = report
        self.code = code


def _load_checkpoint(path: str, spec: EnumerationSpec, cfg: RunConfig):
    if not path or not os.path.exists(path):
        return None
    with open(path) as fh:
        ck = json.load(fh)
    if ck.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a sepprob checkpoint")
    if ck["spec_hash"] != spec.digest() or ck["block_size"] != cfg.block_size:
        raise ConfigError(f"checkpoint {path} belongs to a different run (spec or block size differ)")
    tally = WeightedTally.from_dict(ck["tally"])
    want = WeightedTally(cfg.metrics, cfg.bin_width if cfg.bins else None)
    if tally.metrics != want.metrics or tally.bin_width != want.bin_width:
        raise ConfigError(f"checkpoint {path} was written with different metrics or binning")
    return ck


def write_checkpoint(path: str, spec: EnumerationSpec, cfg: RunConfig, next_partition: int, n_partitions: int, nodes: int, tally: WeightedTally):
    """Atomically record progress; resumable from ``next_partition``."""
    ck = {
        "format": CHECKPOINT_FORMAT,
        "spec": spec.to_dict(),
        "spec_hash": spec.digest(),
        "block_size": cfg.block_size,
        "next_partition": next_partition,
        "n_partitions": n_partitions,
        "complete": next_partition >= n_partitions,
        "nodes": nodes,
        "tally": tally.to_dict(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(ck, fh, sort_keys=True)
    os.replace(tmp, path)


def cmd_enumerate(cfg: RunConfig) -> Report:
    """Exhaustive lattice run weighted by monotone-metric volume elements."""
    started = time.time()
    spec = _spec_of(cfg)
    enum = LatticeEnumerator(spec, block_size=cfg.block_size)
    n_part = enum.n_partitions
    bin_width = cfg.bin_width if cfg.bins else None
    tally = WeightedTally(cfg.metrics, bin_width)
    start, nodes = 0, 0
    ck_path = cfg.checkpoint or (cfg.out + ".ckpt" if cfg.out else None)
    ck = _load_checkpoint(ck_path, spec, cfg)
    if ck is not None:
        tally = WeightedTally.from_dict(ck["tally"])
        start, nodes = ck["next_partition"], ck["nodes"]
        log.info("resuming from partition %d of %d", start, n_part)

    def finish(partial: bool, done: int) -> Report:
        report = finalize(tally, spec.dims, "enumerate", cfg.science_dict()) if tally.n else Report(
            "enumerate", cfg.science_dict(), verdict_label(spec.dims),
            {"states": 0, "separable": 0, "fraction": None}, {},
        )
        report.extra = {
            "simplex_points": len(enum.comps),
            "grid_points": len(enum.grid),
            "partitions": n_part,
            "partitions_done": done,
            "partial": partial,
        }
        report.metadata = _metadata(cfg, started, nodes=nodes, resumed_from=start)
        return report

    tasks = [(spec.to_dict(), cfg.block_size, [k.value for k in cfg.metrics],
              None if bin_width is None else str(bin_width), b) for b in range(start, n_part)]
    done = start
    try:
        for b, block_nodes, tdict in _pool_map(_enum_partition, tasks, cfg.workers):
            tally.merge(WeightedTally.from_dict(tdict))
            nodes += block_nodes
            done = b + 1
            if ck_path:
                write_checkpoint(ck_path, spec, cfg, done, n_part, nodes, tally)
            if cfg.node_budget is not None and nodes > cfg.node_budget and done < n_part:
                raise PartialRun(
                    f"node budget {cfg.node_budget} exceeded after partition {done}/{n_part}",
                    finish(True, done), EXIT_BUDGET,
                )
    except KeyboardInterrupt:
        if ck_path:
            write_checkpoint(ck_path, spec, cfg, done, n_part, nodes, tally)
        raise PartialRun(f"interrupted after partition {done}/{n_part}", finish(True, done), EXIT_INTERRUPT)
    if ck_path and not cfg.checkpoint and os.path.exists(ck_path):
        # the implicit checkpoint beside --out is only kept for unfinished runs
        os.remove(ck_path)
    return finish(False, done)


# -- random search ------------------------------------------------------------


def _search_block(task):
    seed, block, size, radius, law, dims_s, metrics, bin_width = task
    dims = BipartiteDims.parse(dims_s)
    mats, lam = disc_hits(dims, float(Fraction(radius)), size, RngStream(seed, block), law)
    tally = float_batch_tally(mats, dims, [MetricKind(m) for m in metrics],
                              None if bin_width is None else Fraction(bin_width), lam)
    return tally.to_dict()


def cmd_random_search(cfg: RunConfig) -> Report:
    """Random trials in the diagonal simplex x off-diagonal discs."""
    started = time.time()
    spec = DiscSearchSpec(cfg.dims, float(cfg.radius), cfg.trials, cfg.law)
    bin_width = cfg.bin_width if cfg.bins else None
    n_blocks = -(-cfg.trials // TRIAL_BLOCK)
    tasks = [
        (cfg.seed, b, min(TRIAL_BLOCK, cfg.trials - b * TRIAL_BLOCK), str(cfg.radius), cfg.law, str(cfg.dims),
         [k.value for k in cfg.metrics], None if bin_width is None else str(bin_width))
        for b in range(n_blocks)
    ]
    tally = WeightedTally(cfg.metrics, bin_width)
    for tdict in _pool_map(_search_block, tasks, cfg.workers):
        tally.merge(WeightedTally.from_dict(tdict))
    extra = {"trials": spec.trials, "hits": tally.n, "hits_separable": tally.n_sep, "hit_rate": tally.n / spec.trials}
    if tally.n:
        report = finalize(tally, spec.dims, "random-search", cfg.science_dict())
    else:
        report = Report("random-search", cfg.science_dict(), verdict_label(spec.dims),
                        {"states": 0, "separable": 0, "fraction": None}, {})
    report.extra = extra
    report.metadata = _metadata(cfg, started)
    return report


# -- grid info ----------------------------------------------------------------


def cmd_grid_info(cfg: RunConfig) -> dict:
    out = {}
    if cfg.n2 is not None:
        g = disc_grid(cfg.n2)
        m2 = int(np.min(g.u * g.u + g.v * g.v))
        out.update({
            "n2": cfg.n2,
            "grid_points": len(g),
            "min_modulus": g.min_modulus,
            "min_modulus_squared": str(Fraction(m2, 4 * cfg.n2 * cfg.n2)),
            "contains_origin": g.contains_origin,
        })
    if cfg.n1 is not None:
        K = cfg.K if cfg.K is not None else cfg.dims.N
        out.update({"n1": cfg.n1, "K": K, "simplex_points": math.comb(cfg.n1 + K - 1, K - 1)})
    return out


def _grid_text(info: dict) -> str:
    lines = []
    if "n2" in info:
        lines.append(f"n2={info['n2']}: {info['grid_points']} grid points in |z| <= 1/2, "
                     f"min modulus {info['min_modulus']:.6f}"
                     + (" (origin included)" if info["contains_origin"] else ""))
    if "n1" in info:
        lines.append(f"n1={info['n1']}, K={info['K']}: {info['simplex_points']} simplex points")
    return "\n".join(lines) + "\n"


# -- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argument errors become ConfigError so they get the JSON error path."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sepprob", description="A priori separability probabilities of bipartite states.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=False, metrics=False, bins=False):
        p.add_argument("--dims", default="2x2", help="bipartite dimensions, e.g. 2x3")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if metrics:
            p.add_argument("--metrics", default="min,kmb,max", help="comma list of min,kmb,max,identric")
        if bins:
            p.add_argument("--bins", action="store_true", help="bin results by participation ratio")
            p.add_argument("--bin-width", default=str(DEFAULT_BIN_WIDTH))
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--deterministic-reduce", action="store_true",
                       help="accepted for compatibility; reductions are always exact and order-free")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", default="json", choices=["json", "csv", "text"])

    p = sub.add_parser("product-sample", help="Dirichlet x Haar Monte Carlo")
    common(p, seed=True)
    p.add_argument("--nu", default="1", help="Dirichlet parameter, scalar or comma list")
    p.add_argument("--samples", type=int, required=True)

    p = sub.add_parser("enumerate", help="exhaustive lattice enumeration")
    common(p, metrics=True, bins=True)
    p.add_argument("--n1", type=int, required=True)
    p.add_argument("--n2", type=int, required=True)
    p.add_argument("--det-threshold", default="0", help="exact rational, e.g. 1/2560000")
    p.add_argument("--no-symmetry", action="store_true", help="disable the conjugation symmetry")
    p.add_argument("--block-size", type=int, default=16, help="simplex points per partition")
    p.add_argument("--checkpoint", help="checkpoint file (resumes if present)")
    p.add_argument("--node-budget", type=int, help="stop with a checkpoint after this many search nodes")

    p = sub.add_parser("random-search", help="random search of the disc product space")
    common(p, seed=True, metrics=True, bins=True)
    p.add_argument("--radius", default="1/2", help="disc radius, rational, at most 1/2")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--law", default="square", choices=list(TRIAL_LAWS))

    p = sub.add_parser("grid-info", help="grid and simplex lattice sizes")
    p.add_argument("--dims")
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--out")
    p.add_argument("--format", default="json", choices=["json", "text"])
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    d = {"command": ns.command}
    for name in ("dims", "n1", "n2", "K", "samples", "trials", "seed", "workers", "out", "format",
                 "checkpoint", "node_budget", "law", "block_size"):
        if getattr(ns, name, None) is not None:
            d[name] = getattr(ns, name)
    for name in ("nu", "det_threshold", "radius", "bin_width", "metrics"):
        if getattr(ns, name, None) is not None:
            d[name] = getattr(ns, name)
    d["bins"] = bool(getattr(ns, "bins", False))
    d["deterministic_reduce"] = bool(getattr(ns, "deterministic_reduce", False))
    if getattr(ns, "no_symmetry", False):
        d["use_symmetry"] = False
    if ns.command == "grid-info" and ns.dims is None:
        d.pop("dims", None)
    try:
        return RunConfig.from_dict(d)
    except (DimensionError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _render(report: Report, cfg: RunConfig) -> str:
    if cfg.format == "csv":
        return report.bins.to_csv() if report.bins is not None else ""
    return report.to_json()


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": message}) + "\n")
    return code


def run(cfg: RunConfig) -> Report | dict:
    if cfg.command == "product-sample":
        return cmd_product_sample(cfg)
    if cfg.command == "enumerate":
        return cmd_enumerate(cfg)
    if cfg.command == "random-search":
        return cmd_random_search(cfg)
    return cmd_grid_info(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "invalid_config", str(exc))
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "invalid_config", str(exc))
    try:
        result = run(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "invalid_config", str(exc))
    except PartialRun as exc:
        _emit(_render(exc.report, cfg), cfg.out)
        kind = "budget_exceeded" if exc.code == EXIT_BUDGET else "interrupted"
        return _fail(exc.code, kind, str(exc))
    except KeyboardInterrupt:
        return _fail(EXIT_INTERRUPT, "interrupted", "interrupted")
    except (ValueError, OverflowError, RuntimeError) as exc:
        return _fail(EXIT_RUNTIME, "runtime_error", str(exc))
    if isinstance(result, dict):
        text = _grid_text(result) if cfg.format == "text" else json.dumps(result, indent=2, sort_keys=True) + "\n"
    else:
        text = _render(result, cfg)
    _emit(text, cfg.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
