"""Command-line entry point: ``openkpz <command> [--config PATH] [--out DIR] ...``.

Exit status is 0 when every check passes, 1 when a check fails and 2 on bad
input (unknown command, unreadable or malformed config, missing fields).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .model import ModelError, ModelParams

COMMANDS = ("derive", "solve-boundary", "validate", "simulate", "drift-check", "operators",
            "kernels", "bounds", "she", "compare")


class InputError(Exception):
    pass


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# io helpers


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


class Run:
    """Output directory, config hash and the list of artifacts written so far."""

    def __init__(self, out: Path, config_hash: str, seed: int):
        self.out = out
        self.config_hash = config_hash
        self.seed = seed
        self.artifacts: list[str] = []

    def json(self, name: str, payload: dict) -> None:
        body = {"config_hash": self.config_hash, "seed": self.seed, **_jsonable(payload)}
        _atomic_write(self.out / name, json.dumps(body, indent=2, sort_keys=True) + "\n")
        self.artifacts.append(name)

    def csv(self, name: str, rows: list[dict], header: list[str] | None = None) -> None:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash} seed={self.seed}\n")
        header = header or (list(rows[0]) if rows else [])
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
        _atomic_write(self.out / name, buf.getvalue())
        self.artifacts.append(name)

    def matrix(self, name: str, M: np.ndarray) -> None:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash} seed={self.seed}\n")
        np.savetxt(buf, np.atleast_2d(M), delimiter=",", fmt="%.17g")
        _atomic_write(self.out / name, buf.getvalue())
        self.artifacts.append(name)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError(f"config {path} must hold a JSON object")
    return cfg


def _params(cfg: dict) -> ModelParams:
    if not cfg:
        raise InputError("this command needs --config with model parameters")
    try:
        return ModelParams.from_dict(cfg)
    except ModelError as exc:
        raise InputError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid model parameters: {exc}") from exc


def _int_list(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"--N expects a comma-separated list of integers, got {text!r}") from exc


def _config_hash(command: str, cfg: dict, args) -> str:
    blob = json.dumps({"command": command, "config": cfg, "seed": args.seed, "id": args.id, "N": args.N},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("OPENKPZ_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError(f"OPENKPZ_THREADS must be an integer, got {env!r}") from exc
    return 1


def _versions() -> dict:
    import numba
    import scipy

    return {"openkpz": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


# ---------------------------------------------------------------------------
# commands


def cmd_derive(run: Run, cfg: dict, args) -> None:
    from .model import derive_coefficients

    p = _params(cfg)
    run.json("derived.json", {"params": p.to_dict(), "derived": derive_coefficients(p).to_dict()})


def cmd_solve_boundary(run: Run, cfg: dict, args) -> None:
    from .model import boundary_residuals, derive_coefficients, solve_boundary_coefficients

    p = _params(cfg)
    d = derive_coefficients(p)
    b = solve_boundary_coefficients(p, d)
    res = boundary_residuals(p, d, b)
    run.json("boundary.json", {"params": p.to_dict(), "boundary": b.to_dict(), "residual": res})
    if res > 1e-12:
        raise CheckFailed(f"boundary system residual {res:.3g} exceeds 1e-12")


def cmd_validate(run: Run, cfg: dict, args) -> None:
    from dataclasses import asdict

    from .model import derive_coefficients, solve_boundary_coefficients, validate_assumptions

    p = _params(cfg)
    d = derive_coefficients(p)
    try:
        b = solve_boundary_coefficients(p, d)
    except ModelError as exc:
        b = None
        note = str(exc)
    else:
        note = ""
    rep = validate_assumptions(p, d, b)
    payload = asdict(rep)
    payload["ok"] = rep.ok and b is not None
    if note:
        payload["notes"].append(note)
    run.json("validation.json", payload)
    if not payload["ok"]:
        raise CheckFailed("assumption checks failed: " + "; ".join(payload["notes"] or ["see validation.json"]))


def cmd_simulate(run: Run, cfg: dict, args) -> None:
    from .cole_hopf import integer_heights
    from .dynamics import replica_generators, run_replica, sample_initial
    from .she_ref import build_system

    p = _params(cfg)
    system = build_system(p, cfg.get("boundary", "matched" if p.m == 1 else "liggett"))
    checkpoints = [float(t) for t in cfg.get("checkpoints", [p.T_f])]
    replicas = int(cfg.get("replicas", 1))
    initial = cfg.get("initial", "near_stationary")
    rows = []
    d = system.derived
    for r, rng in enumerate(replica_generators(args.seed, replicas)):
        snaps, n_events = run_replica(sample_initial(initial, p.N, rng), checkpoints, system, rng)
        for t, snap in zip(checkpoints, snaps):
            H = integer_heights(snap)
            Z = np.exp(-d.tilt * H + d.nu_N * t)
            rows.extend({"replica": r, "checkpoint": t, "x": x, "height": int(H[x]), "Z": float(Z[x])}
                        for x in range(p.N + 1))
    run.csv("heights.csv", rows, ["replica", "checkpoint", "x", "height", "Z"])


def cmd_drift_check(run: Run, cfg: dict, args) -> None:
    from .cole_hopf import drift_identity_error
    from .dynamics import ParticleSystem
    from .model import derive_coefficients, solve_boundary_coefficients

    p = _params(cfg)
    if p.N > 14:
        raise InputError("drift-check enumerates all 2^(N+1) configurations; use N <= 14")
    d = derive_coefficients(p)
    system = ParticleSystem.build(p, d, solve_boundary_coefficients(p, d))
    t = float(cfg.get("t", 0.3))
    flux = int(cfg.get("left_flux", 0))
    err = drift_identity_error(system, t, flux)
    run.json("drift_check.json", {"params": p.to_dict(), "t": t, "left_flux": flux, "max_relative_error": err})
    if err > 1e-10:
        raise CheckFailed(f"drift identity violated: relative error {err:.3g}")


def cmd_operators(run: Run, cfg: dict, args) -> None:
    from .model import derive_coefficients
    from .operators import adjoint_flat, build_L_lap, invariant_measure, max_principle_check

    p = _params(cfg)
    d = derive_coefficients(p)
    L = build_L_lap(d)
    adj = adjoint_flat(L, d)
    pi = invariant_measure(L)
    mp = max_principle_check(pi.pi, p.m)
    edge_gap = abs(pi.pi[0] - pi.pi[-1])
    run.matrix("L_lap.csv", L.matrix)
    run.matrix("adjoint.csv", adj.matrix)
    run.matrix("pi.csv", pi.pi)
    run.json("operators.json", {"params": p.to_dict(), "pi_ratio": pi.ratio, "pi_min": float(pi.pi.min()),
                                "pi_edge_gap": edge_gap, "residual": pi.residual,
                                "extrema_in_clusters": mp.passed})
    if not (mp.passed and edge_gap <= 1e-10 and pi.pi.min() > 0):
        raise CheckFailed("invariant measure checks failed")


def cmd_kernels(run: Run, cfg: dict, args) -> None:
    from .kernels import (build_kernel, chapman_kolmogorov_error, full_line_chapman_kolmogorov_error,
                          image_kernel, padded_image_kernel)
    from .model import derive_coefficients

    p = _params(cfg)
    d = derive_coefficients(p)
    times = [float(t) for t in cfg.get("times", [1e-3, 1e-2, 1e-1])]
    kinds = ["image_sum", "nn_neumann", "neumann"]
    if p.A_minus or p.A_plus:
        kinds += ["nn_robin", "robin"]
    kernels = {k: build_kernel(k, d, p.A_minus, p.A_plus) for k in kinds}
    summary: dict = {"params": p.to_dict(), "times": times, "chapman_kolmogorov": {}, "triangle": []}
    worst = 0.0
    for k, K in kernels.items():
        e = max(chapman_kolmogorov_error(K, t, t) for t in times)
        summary["chapman_kolmogorov"][k] = e
        worst = max(worst, e)
    e = max(full_line_chapman_kolmogorov_error(d, t, t) for t in times)
    summary["chapman_kolmogorov"]["full_line"] = e
    worst = max(worst, e)
    if p.m == 1:
        nn = kernels["nn_neumann"]
        for t in times:
            a, b, c = image_kernel(d, t), nn.P(t), padded_image_kernel(d, t)
            row = {"t": t, "image_vs_eig": float(np.abs(a - b).max()), "image_vs_padded": float(np.abs(a - c).max()),
                   "eig_vs_padded": float(np.abs(b - c).max())}
            summary["triangle"].append(row)
            worst = max(worst, *[v for k, v in row.items() if k != "t"])
    sites = sorted({0, p.N // 4, p.N // 2, p.N})
    rows = [{"kind": k, "t": t, "x": x, "y": y, "value": float(K.P(t)[x, y])}
            for k, K in kernels.items() for t in times for x in sites for y in range(p.N + 1)]
    run.csv("kernels.csv", rows, ["kind", "t", "x", "y", "value"])
    run.json("kernels.json", summary)
    if worst > 1e-8:
        raise CheckFailed(f"kernel consistency error {worst:.3g} exceeds 1e-8")


def cmd_bounds(run: Run, cfg: dict, args) -> None:
    from .kernels import BOUNDS, CORE_BOUNDS, DEFAULT_SUITE_PARAMS, DEFAULT_SWEEP, bound_suite

    params = _params(cfg) if cfg else DEFAULT_SUITE_PARAMS
    ids = [s.strip() for s in args.id.split(",")] if args.id else list(CORE_BOUNDS)
    unknown = [b for b in ids if b not in BOUNDS]
    if unknown:
        raise InputError(f"unknown bound id(s): {', '.join(unknown)}; known: {', '.join(BOUNDS)}")
    Ns = _int_list(args.N) or list(DEFAULT_SWEEP)
    reports = bound_suite(ids, Ns, params, slack=float(cfg.get("slack", 4.0)))
    rows = [r for rep in reports for r in rep.rows()]
    run.csv("bounds.csv", rows, ["bound_id", "part", "N", "constant", "spread", "verdict"])
    run.json("bounds.json", {"params": params.to_dict(), "N": Ns,
                             "verdicts": {r.bound_id: r.verdict for r in reports}})
    failed = [r.bound_id for r in reports if not r.passed]
    if failed:
        raise CheckFailed(f"bounds without N-uniform constants: {', '.join(failed)}")


def _moment_rows(rep):
    return rep.rows()


MOMENT_HEADER = ["checkpoint", "x", "mean", "se_mean", "var", "se_var"]


def cmd_she(run: Run, cfg: dict, args) -> None:
    from .she_ref import SHEParams, she_moments

    p = _params(cfg)
    sp = SHEParams.from_model(p, M=int(cfg.get("M", 256)))
    checkpoints = tuple(float(t) for t in cfg.get("checkpoints", [0.05, 0.1]))
    rep = she_moments(sp, int(cfg.get("she_replicas", cfg.get("replicas", 2000))), args.seed, checkpoints)
    run.csv("she_moments.csv", _moment_rows(rep), MOMENT_HEADER)


def cmd_compare(run: Run, cfg: dict, args) -> None:
    from .she_ref import DEFAULT_EXPERIMENT, convergence_experiment

    params = _params(cfg) if cfg else DEFAULT_EXPERIMENT
    Ns = _int_list(args.N) or [64, 128, 256]
    verdict, reports = convergence_experiment(
        N_values=Ns,
        replicas=int(cfg.get("replicas", 2000)),
        seed=args.seed,
        params=params,
        she_replicas=cfg.get("she_replicas"),
        M=int(cfg.get("M", 256)),
        threads=_threads(args),
        checkpoints=tuple(float(t) for t in cfg.get("checkpoints", [0.05, 0.1])),
    )
    for name, rep in reports.items():
        run.csv(f"moments_{name.replace('=', '')}.csv", _moment_rows(rep), MOMENT_HEADER)
    run.json("compare.json", verdict.to_dict())
    if not verdict.passed:
        raise CheckFailed("particle ensembles do not match the SHE reference")


HANDLERS = {
    "derive": cmd_derive,
    "solve-boundary": cmd_solve_boundary,
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "drift-check": cmd_drift_check,
    "operators": cmd_operators,
    "kernels": cmd_kernels,
    "bounds": cmd_bounds,
    "she": cmd_she,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="openkpz", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON file with model parameters and experiment settings")
    ap.add_argument("--out", default="openkpz_out", help="output directory")
    ap.add_argument("--seed", type=int, default=0, help="64-bit seed")
    ap.add_argument("--threads", type=int, default=None, help="worker count (falls back to OPENKPZ_THREADS)")
    ap.add_argument("--id", default=None, help="comma-separated bound ids")
    ap.add_argument("--N", default=None, help="comma-separated lattice sizes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not 0 <= args.seed < 2**64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return 2
    started = time.time()
    try:
        cfg = _load_config(args.config)
        run = Run(Path(args.out), _config_hash(args.command, cfg, args), args.seed)
        status, message = 0, "ok"
        try:
            HANDLERS[args.command](run, cfg, args)
        except CheckFailed as exc:
            status, message = 1, str(exc)
        except ModelError as exc:
            raise InputError(str(exc)) from exc
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "command": args.command,
        "config": cfg,
        "config_hash": run.config_hash,
        "seed": args.seed,
        "threads": _threads(args),
        "versions": _versions(),
        "artifacts": run.artifacts,
        "status": status,
        "message": message,
        "started": started,
        "wall_time": time.time() - started,
    }
    _atomic_write(run.out / "manifest.json", json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    if status:
        print(f"check failed: {message}", file=sys.stderr)
    else:
        print(f"{args.command}: ok ({', '.join(run.artifacts)})")
    return status


if __name__ == "__main__":
    sys.exit(main())
