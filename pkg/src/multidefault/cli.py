"""Command line: ``multidefault simulate | price | verify --config run.yaml``.

Exit codes: 0 ok, 1 asserted check failed, 2 config error, 3 capacity error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from . import __version__
from .claims import SurvivalLeg, check_tower_recovery, check_tower_survival, price_claim
from .config import ScenarioConfig, make_claim, make_payoff
from .defaults import (PathEngine, ScenarioBatch, conditional_expectation_fixed_prior,
                       oracle_conditional_expectation, simulate_scenarios)
from .errors import CapacityError, ConfigError, InsufficientConditioningError, MultiDefaultError
from .sublinear import check_commutation_conditions, verify_weak_dpp

log = logging.getLogger("multidefault")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_CAPACITY = 0, 1, 2, 3


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (tuple, list, np.ndarray)):
        return ";".join(fmt(v) for v in x)
    return str(x)


class Output:
    """Collects CSV files in memory and writes them with a manifest."""

    def __init__(self, out_dir: str):
        self.dir = out_dir
        self.files: dict[str, str] = {}

    def table(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
        self.files[name] = buf.getvalue()

    def write(self, cfg: ScenarioConfig, command: str, started: str) -> None:
        os.makedirs(self.dir, exist_ok=True)
        for name, text in self.files.items():
            with open(os.path.join(self.dir, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        manifest = {
            "command": command,
            "config_sha256": cfg.digest(),
            "engine_version": __version__,
            "seed": int(cfg.run["seed"]),
            "started": started,
            "finished": _now(),
            "outputs": [{"file": n, "sha256": hashlib.sha256(t.encode()).hexdigest()}
                        for n, t in sorted(self.files.items())],
        }
        with open(os.path.join(self.dir, "manifest.yaml"), "w", encoding="utf-8") as fh:
            yaml.safe_dump(manifest, fh, sort_keys=True)
        with open(os.path.join(self.dir, "config.yaml"), "w", encoding="utf-8") as fh:
            fh.write(cfg.dump())


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# -- simulate ------------------------------------------------------------------

def _simulate(cfg: ScenarioConfig, threads: int) -> ScenarioBatch:
    grid, model, lat = cfg.grid(), cfg.model(), cfg.lattice()
    n, seed, policy = int(cfg.run["n_paths"]), int(cfg.run["seed"]), cfg.run["policy"]
    if threads <= 1 or n < 2 * threads:
        return simulate_scenarios(model, lat, policy, n, seed, grid)
    size = math.ceil(n / threads)
    starts = list(range(0, n, size))
    with ThreadPoolExecutor(threads) as ex:
        parts = list(ex.map(lambda a: simulate_scenarios(model, lat, policy, min(size, n - a), seed, grid,
                                                         path_offset=a), starts))
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return ScenarioBatch(cat("path_index"), cat("states"), cat("exp_marks"), cat("inter_arrival"),
                         cat("default_times"), cat("censored"))


def counting_covariance(batch: ScenarioBatch, u: float, s: float, t: float) -> tuple[float, float]:
    """Sample ``Cov(N_t - N_s, N_s - N_u)`` with a standard error."""
    x = (batch.counts(t) - batch.counts(s)).astype(float)
    y = (batch.counts(s) - batch.counts(u)).astype(float)
    n = x.size
    if n < 2:
        return float("nan"), float("nan")
    prod = (x - x.mean()) * (y - y.mean())
    return float(prod.sum() / (n - 1)), float(prod.std(ddof=1) / math.sqrt(n))


def cmd_simulate(cfg: ScenarioConfig, out: Output, threads: int = 1) -> bool:
    grid, model = cfg.grid(), cfg.model()
    N = model.n_levels
    batch = _simulate(cfg, threads)
    header = (["path_id"] + [f"E_{i}" for i in range(1, N + 1)] + [f"tau_{i}" for i in range(1, N + 1)]
              + [f"censored_{i}" for i in range(1, N + 1)])
    rows = ([int(batch.path_index[j])] + list(batch.exp_marks[j]) + list(batch.default_times[j])
            + [bool(c) for c in batch.censored[j]] for j in range(len(batch)))
    out.table("scenarios.csv", header, rows)

    sim = cfg.data["simulate"]
    times = [float(x) for x in sim.get("times", grid.t_max * np.arange(1, 5) / 4)]
    triples = sim.get("cov_triples", [[grid.t_max / 4, grid.t_max / 2, grid.t_max]])
    n = len(batch)
    summary = [("n_paths", 0, 0.0, n, 0.0)]
    if n:
        summary.append(("ordered_fraction", 0, 0.0, float(batch.ordered().mean()), 0.0))
        for lvl in range(1, N + 1):
            for t in times:
                p = float((batch.default_times[:, lvl - 1] > t).mean())
                summary.append(("survival", lvl, t, p, math.sqrt(p * (1 - p) / n)))
            summary.append(("censored_fraction", lvl, grid.t_max, float(batch.censored[:, lvl - 1].mean()), 0.0))
        for u, s, t in triples:
            c, se = counting_covariance(batch, u, s, t)
            summary.append((f"cov_u{fmt(float(u))}_s{fmt(float(s))}", 0, float(t), c, se))
    out.table("summary.csv", ["metric", "level", "time", "value", "stderr"], summary)
    return True


# -- price ----------------------------------------------------------------------

def cmd_price(cfg: ScenarioConfig, out: Output) -> bool:
    grid, model, lat = cfg.grid(), cfg.model(), cfg.lattice()
    cap = int(cfg.run["path_enum_cap"])
    rows = []
    for cid, claim, t, regimes in cfg.claims():
        rv = price_claim(claim, model, lat, t, grid, cap=cap)
        for k, u in regimes:
            vals = rv.compute(k, np.asarray(u, dtype=float)[None, :] if k else None)[:, 0]
            for pre, v in zip(rv.prefixes, vals):
                rows.append((cid, k, tuple(u), "-".join(str(int(x)) for x in pre), float(v)))
    out.table("pricing.csv", ["claim_id", "regime", "u", "prefix", "value"], rows)
    return True


# -- verify ---------------------------------------------------------------------

def _verify_dpp(cfg, v, rows) -> bool:
    grid, model, lat = cfg.grid(), cfg.model(), cfg.lattice()
    phi = make_payoff(v["payoff"], "verify.payoff", grid, model.n_levels)
    signed = bool(v.get("allow_signed", False))
    tol = float(cfg.run["tol_dpp"])
    rep = verify_weak_dpp(model, lat, phi, float(v["s"]), float(v["t"]), grid, allow_signed=signed, tol=tol,
                          cap=int(cfg.run["path_enum_cap"]))
    ok = rep.passed or signed
    a = rep.argmin
    rows.append(("dpp", "min_gap", rep.min_gap, -tol, not signed, rep.passed,
                 a.get("regime", ""), a.get("u", ()), a.get("prefix", ())))
    rows.append(("dpp", "max_abs_gap", rep.max_abs_gap, tol, False, rep.max_abs_gap <= tol, "", (), ()))
    return ok


def _verify_tower(cfg, v, rows) -> bool:
    grid, model, lat = cfg.grid(), cfg.model(), cfg.lattice()
    tol = float(cfg.run["tol_dpp"])
    s, t = float(v["s"]), float(v["t"])
    specs = v.get("claims") or ([v["payoff"]] if "payoff" in v else [])
    if not specs:
        raise ConfigError("verify.claims: at least one survival or recovery claim is required")
    expect = bool(v.get("expect_equality", False))
    ok = True
    for j, spec in enumerate(specs):
        claim = make_claim(spec, f"verify.claims[{j}]", grid, model.n_levels)
        if claim.i != 2:
            raise ConfigError(f"verify.claims[{j}].level: tower checks are stated for the second default")
        if isinstance(claim, SurvivalLeg):
            rep = check_tower_survival(model, lat, claim.Y, s, t, claim.T, grid, tol)
        else:
            rep = check_tower_recovery(model, lat, claim.Z, s, t, claim.window[1], claim.M, grid, tol)
        cid = spec.get("id", f"claim{j}")
        for name, r in rep.conditions.items():
            rows.append(("tower", f"{cid}:{name}", r, tol, expect, r <= tol, "", (), ()))
        w = rep.where
        rows.append(("tower", f"{cid}:equality", rep.equality, tol, expect, rep.equality_holds,
                     w.get("regime", ""), w.get("u", ()), w.get("prefix", ())))
        rows.append(("tower", f"{cid}:conditions_imply_equality", float(rep.consistent), 1.0, True,
                     rep.consistent, "", (), ()))
        ok &= rep.consistent and (rep.equality_holds and rep.conditions_hold or not expect)
    return ok


def _verify_commutation(cfg, v, rows) -> bool:
    grid, model, lat = cfg.grid(), cfg.model(), cfg.lattice()
    tol = float(cfg.run["tol_dpp"])
    phi = make_payoff(v["payoff"], "verify.payoff", grid, model.n_levels)
    s, t = float(v["s"]), float(v["t"])
    eng = PathEngine(model, lat, grid, 2, int(cfg.run["path_enum_cap"]))
    res = check_commutation_conditions(model, lat, phi, s, t, engine=eng)
    for r in res:
        rows.append(("commutation", f"A{r.condition}", r.residual, tol, False, r.residual <= tol, "", r.u, r.prefix))
    rep = verify_weak_dpp(model, lat, phi, s, t, tol=tol, engine=eng)
    hold = all(r.residual <= tol for r in res)
    strong = rep.max_abs_gap <= tol
    rows.append(("commutation", "conditions_imply_strong_dpp", rep.max_abs_gap, tol, True,
                 strong or not hold, "", (), ()))
    return strong or not hold


def _verify_oracle(cfg, v, rows) -> bool:
    grid, model, lat = cfg.grid(), cfg.model(), cfg.lattice()
    run = cfg.run
    policy = run["policy"]
    batch = simulate_scenarios(model, lat, policy, int(run["n_paths"]), int(run["seed"]), grid)
    ok = True
    for j, case in enumerate(v.get("cases", [])):
        phi = make_payoff(case["payoff"], f"verify.cases[{j}].payoff", grid, model.n_levels)
        t = float(case.get("t", 0.0))
        k, u = case.get("regime", [0, []])
        prefix = case.get("prefix")
        cv = conditional_expectation_fixed_prior(model, lat, policy, phi, t, (int(k), u), grid)
        exact = float(cv.at(prefix)) if prefix is not None else float(cv.values[0])
        try:
            est = oracle_conditional_expectation(model, lat, policy, phi, t, (int(k), u), 0, 0, grid,
                                                 prefix=prefix, w_match=run["w_match"],
                                                 min_kept=int(run["min_kept"]), batch=batch)
        except InsufficientConditioningError as exc:
            rows.append(("oracle", f"case{j}", float("nan"), 0.0, False, False, k, tuple(u), ()))
            log.warning("case %d: %s", j, exc)
            continue
        dev = abs(exact - est.mean)
        lim = float(run["ci_mult"]) * est.stderr
        passed = dev <= lim
        rows.append(("oracle", f"case{j}", dev, lim, True, passed, k, tuple(u), tuple(prefix or ())))
        ok &= passed
    return ok


VERIFIERS = {"dpp": _verify_dpp, "tower": _verify_tower, "commutation": _verify_commutation,
             "oracle": _verify_oracle}


def cmd_verify(cfg: ScenarioConfig, out: Output, kind: str | None = None) -> bool:
    v = cfg.data["verify"]
    kind = kind or v.get("kind")
    if kind not in VERIFIERS:
        raise ConfigError(f"verify.kind: expected one of {sorted(VERIFIERS)}, got {kind!r}")
    for key in {"dpp": ("s", "t", "payoff"), "commutation": ("s", "t", "payoff"),
                "tower": ("s", "t"), "oracle": ("cases",)}[kind]:
        if key not in v:
            raise ConfigError(f"verify.{key}: required for kind {kind!r}")
    rows: list = []
    ok = VERIFIERS[kind](cfg, v, rows)
    out.table("verify.csv", ["check", "item", "value", "tol", "asserted", "passed", "regime", "u", "prefix"], rows)
    return ok


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multidefault", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("simulate", "price", "verify"))
    p.add_argument("--config", required=True, help="scenario file (YAML)")
    p.add_argument("--seed", type=int, help="override run.seed (unsigned 64-bit)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for simulation")
    p.add_argument("--verify-kind", choices=sorted(VERIFIERS), help="override verify.kind")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    started = _now()
    try:
        cfg = ScenarioConfig.load(args.config)
        if args.seed is not None:
            if not (0 <= args.seed < 2 ** 64):
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        out = Output(args.out)
        if args.command == "simulate":
            ok = cmd_simulate(cfg, out, max(1, args.threads))
        elif args.command == "price":
            ok = cmd_price(cfg, out)
        else:
            ok = cmd_verify(cfg, out, args.verify_kind)
        out.write(cfg, args.command, started)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except MultiDefaultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not ok:
        print("verification failed", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
