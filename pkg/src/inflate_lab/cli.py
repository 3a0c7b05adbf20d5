"""Command-line surface: parse experiment configs, dispatch, emit reports.

Exit codes: 0 success, 2 precondition or schema violation, 3 numerical
failure (no certificate found, unverifiable certificate, failed local
search).  Errors are emitted as a JSON object on stderr.  Reports are
deterministic: identical config + seed reproduce byte-identical files
(no timestamps in any report).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import constructions as co
from . import linear_analysis as la
from . import maximal_volume as mv_mod
from . import measure_lab as ml
from . import normed_space as ns
from .errors import InflateLabError, NumericalFailure, PreconditionError

_NORM_SCHEMA = {
    "type": "object",
    "required": ["dim", "kind"],
    "properties": {"dim": {"type": "integer", "minimum": 1}},
}

_MAP_SCHEMA = {
    "type": "object",
    "required": ["entries", "domain_norm", "codomain_norm"],
    "properties": {
        "entries": {"type": "array"},
        "domain_norm": _NORM_SCHEMA,
        "codomain_norm": _NORM_SCHEMA,
    },
}

_SCHEMAS = {
    "check-inflation": {
        "type": "object",
        "required": ["map", "lambda"],
        "properties": {
            "map": _MAP_SCHEMA,
            "lambda": {"type": "number", "minimum": 0},
            "restarts": {"type": "integer", "minimum": 1},
            "steps": {"type": "integer", "minimum": 1},
        },
    },
    "probe-pair": {
        "type": "object",
        "required": ["a", "b", "lambda", "samples"],
        "properties": {
            "a": _NORM_SCHEMA,
            "b": _NORM_SCHEMA,
            "lambda": {"type": "number", "minimum": 0},
            "samples": {"type": "integer", "minimum": 1},
            "restarts": {"type": "integer", "minimum": 1},
            "steps": {"type": "integer", "minimum": 1},
            "include": {"type": "array"},
        },
    },
    "mv": {
        "type": "object",
        "required": ["u", "a", "b"],
        "properties": {
            "u": {"type": "array", "items": {"type": "number"}},
            "a": _NORM_SCHEMA,
            "b": _NORM_SCHEMA,
            "restarts": {"type": "integer", "minimum": 1},
            "analytic": {"type": "boolean"},
        },
    },
    "inflate": {
        "type": "object",
        "required": ["map", "box", "eps"],
        "properties": {
            "map": _MAP_SCHEMA,
            "offset": {"type": "array", "items": {"type": "number"}},
            "box": {"type": "array"},
            "eps": {"type": "number", "exclusiveMinimum": 0},
            "lambda": {"type": "number", "minimum": 0},
            "certificate": {"type": "object"},
            "max_cells_csv": {"type": "integer", "minimum": 1},
        },
    },
    "glue": {
        "type": "object",
        "required": ["base", "patches", "delta", "L", "domain_norm", "codomain_norm"],
        "properties": {
            "base": {"type": "object"},
            "patches": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["set", "rho", "map"],
                    "properties": {
                        "set": {"type": "array"},
                        "rho": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "map": {"type": "object"},
                    },
                },
            },
            "delta": {"type": "number", "exclusiveMinimum": 0},
            "L": {"type": "number", "minimum": 0},
            "domain_norm": _NORM_SCHEMA,
            "codomain_norm": _NORM_SCHEMA,
            "domain_box": {"type": "array"},
            "probes": {"type": "integer", "minimum": 1},
        },
    },
    "experiment-positive": {
        "type": "object",
        "required": ["box", "m", "f", "eta", "eps_schedule"],
        "properties": {
            "box": {"type": "array"},
            "m": {"type": "integer", "minimum": 1},
            "f": {"type": "object"},
            "eta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "lambda": {"type": "number", "exclusiveMinimum": 0},
            "eps_schedule": {"type": "array", "items": {"type": "number"}},
            "boxcount": {"type": "boolean"},
            "box_size": {"type": "number", "exclusiveMinimum": 0},
        },
    },
    "experiment-negative": {
        "type": "object",
        "required": ["u", "r", "eps_schedule"],
        "properties": {
            "u": {"type": "array", "items": {"type": "number"}},
            "r": {"type": "number", "exclusiveMinimum": 0},
            "eps_schedule": {"type": "array", "items": {"type": "number"}},
            "n": {"type": "integer", "minimum": 2},
            "m": {"type": "integer", "minimum": 2},
            "domain_kind": {"type": "string"},
            "codomain_kind": {"type": "string"},
            "grid": {"type": "integer", "minimum": 2},
            "restarts": {"type": "integer", "minimum": 1},
            "steps": {"type": "integer", "minimum": 1},
            "control": {"type": "boolean"},
            "threshold": {"type": "number"},
        },
    },
    "calibrate": {
        "type": "object",
        "required": ["n", "m", "box_size"],
        "properties": {
            "n": {"type": "integer", "minimum": 1, "maximum": 2},
            "m": {"type": "integer", "minimum": 1, "maximum": 4},
            "box_size": {"type": "number", "exclusiveMinimum": 0},
        },
    },
}

COMMANDS = tuple(_SCHEMAS)


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    params: dict
    seed: int = 0
    out: Optional[str] = None
    format: str = "json"
    threads: int = 1

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "params": self.params,
            "seed": self.seed,
            "out": self.out,
            "format": self.format,
            "threads": self.threads,
        }

    @staticmethod
    def from_json(data: dict) -> "ExperimentConfig":
        return ExperimentConfig(
            command=data["command"],
            params=data.get("params", {}),
            seed=int(data.get("seed", 0)),
            out=data.get("out"),
            format=data.get("format", "json"),
            threads=int(data.get("threads", 1)),
        )


def _validate(config: ExperimentConfig) -> None:
    import jsonschema

    if config.command not in _SCHEMAS:
        raise PreconditionError(f"unknown command {config.command!r}")
    if config.format not in ("json", "csv"):
        raise PreconditionError(f"format must be json or csv, got {config.format!r}")
    try:
        jsonschema.validate(config.params, _SCHEMAS[config.command])
    except jsonschema.ValidationError as exc:
        pointer = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise PreconditionError(f"config params.{pointer}: {exc.message}") from exc


# -- command implementations ---------------------------------------------------


def _cmd_check_inflation(params: dict, seed: int) -> dict:
    map_ = la.map_from_json(params["map"])
    lam = float(params["lambda"])
    cert = la.inflation_search(map_, lam, restarts=int(params.get("restarts", 64)),
                               steps=int(params.get("steps", 200)), seed=seed)
    if cert is None:
        raise NumericalFailure(f"no verified {lam}-inflation found within budget")
    report = la.verify_certificate(map_, cert)
    return {
        "certificate": la.certificate_to_json(cert),
        "verification": {
            "verified": report.verified,
            "worst_sign_norm": report.worst_sign_norm,
            "min_vol": report.min_vol,
            "message": report.message,
        },
    }


def _cmd_probe_pair(params: dict, seed: int, threads: int) -> dict:
    a = ns.norm_from_json(params["a"])
    b = ns.norm_from_json(params["b"])
    report = la.inflating_pair_probe(
        a, b, float(params["lambda"]), int(params["samples"]), seed,
        restarts=int(params.get("restarts", 16)), steps=int(params.get("steps", 120)),
        include=params.get("include"), threads=threads)
    return {
        "lambda": report.lam,
        "normalized_lambda": report.normalized_lam,
        "samples": report.samples,
        "seed": report.seed,
        "fraction_certified": report.fraction_certified,
        "fraction_certified_normalized": report.fraction_certified_normalized,
        "failures": report.failures,
        "failures_normalized": report.failures_normalized,
    }


def _cmd_mv(params: dict, seed: int) -> dict:
    a = ns.norm_from_json(params["a"])
    b = ns.norm_from_json(params["b"])
    result = mv_mod.max_volume(np.asarray(params["u"], dtype=float), a, b,
                               restarts=int(params.get("restarts", 32)), seed=seed,
                               analytic=bool(params.get("analytic", True)))
    return {
        "value": result.value,
        "best_V": result.best_V.tolist(),
        "feasibility_gap": result.feasibility_gap,
        "restarts_used": result.restarts_used,
        "analytic": result.analytic,
    }


def _cmd_inflate(params: dict, seed: int) -> dict:
    map_ = la.map_from_json(params["map"])
    box = np.asarray(params["box"], dtype=float)
    eps = float(params["eps"])
    offset = np.asarray(params.get("offset", np.zeros(map_.m)), dtype=float)
    if "certificate" in params:
        cert = la.certificate_from_json(params["certificate"])
    else:
        lam = float(params.get("lambda", 0.0))
        cert = la.inflation_search(map_, lam, seed=seed)
        if cert is None:
            raise NumericalFailure("no certificate found for the requested lambda")
    pam = co.inflate_affine(map_, cert, box, eps, offset=offset)
    return {
        "map": pam.to_json(),
        "summary": {
            "cells": [int(c.segment_count) for c in pam.curves],
            "declared_lip": pam.declared_lip,
            "cell_vol": pam.constant_cell_vol,
            "certificate": la.certificate_to_json(cert),
        },
    }


def _cmd_glue(params: dict, seed: int) -> dict:
    a = ns.norm_from_json(params["domain_norm"])
    b = ns.norm_from_json(params["codomain_norm"])
    n, m = a.dim, b.dim
    base = ml.map_from_descriptor(params["base"], n, m)
    sets, radii, maps = [], [], []
    for patch in params["patches"]:
        sets.append(np.asarray(patch["set"], dtype=float))
        radii.append(float(patch["rho"]))
        maps.append(ml.map_from_descriptor(patch["map"], n, m))
    spec = co.PatchSpec(tuple(sets), tuple(radii), tuple(maps), base,
                        float(params["delta"]), a, b)
    L = float(params["L"])
    glued = co.glue_patches(spec, L, seed=seed)
    if "domain_box" in params:
        box = np.asarray(params["domain_box"], dtype=float)
    else:
        hulls = []
        for s in sets:
            arr = s if s.ndim == 2 and s.shape[1] == 2 and s.shape[0] == n else None
            if arr is None:
                pts = s if s.ndim == 2 else s[None, :]
                arr = np.stack([pts.min(axis=0), pts.max(axis=0)], axis=1)
            hulls.append(arr)
        lo = np.min([h[:, 0] for h in hulls], axis=0) - 2.0
        hi = np.max([h[:, 1] for h in hulls], axis=0) + 2.0
        box = np.stack([lo, hi], axis=1)
    probes = int(params.get("probes", 4000))
    lip = ml.estimate_lipschitz(glued, box, a, b, pairs=probes, seed=seed)
    from .geometry import sample_box
    from .seeding import rng_for

    pts = sample_box(box, probes, rng_for(seed, 17))
    sup = float(np.max(ns._eval_many(b, glued.eval_many(pts) - co.batch_call(base, pts))))
    return {
        "lip_bound": glued.lip_bound,
        "sampled_lip": lip.value,
        "sampled_sup_dist": sup,
        "delta": spec.delta,
        "patches": len(sets),
    }


def _cmd_experiment_positive(params: dict, seed: int) -> dict:
    config = ml.PositiveConfig(
        box=np.asarray(params["box"], dtype=float),
        m=int(params["m"]),
        f=params["f"],
        eta=float(params["eta"]),
        lam=float(params.get("lambda", 1.0)),
        eps_schedule=tuple(float(e) for e in params["eps_schedule"]),
        seed=seed,
        run_boxcount=bool(params.get("boxcount", False)),
        box_size=float(params.get("box_size", 1e-3)),
    )
    return ml.run_positive_experiment(config)


def _cmd_experiment_negative(params: dict, seed: int) -> dict:
    config = ml.NegativeConfig(
        u=np.asarray(params["u"], dtype=float),
        r=float(params["r"]),
        eps_schedule=tuple(float(e) for e in params["eps_schedule"]),
        seed=seed,
        domain_kind=params.get("domain_kind", "linf"),
        codomain_kind=params.get("codomain_kind", "euclidean"),
        n=int(params.get("n", 2)),
        m=int(params.get("m", 2)),
        grid=int(params.get("grid", 6)),
        restarts=int(params.get("restarts", 16)),
        steps=int(params.get("steps", 200)),
        control=bool(params.get("control", False)),
        threshold=params.get("threshold"),
    )
    return ml.run_negative_experiment(config)


def _cmd_calibrate(params: dict, seed: int) -> dict:
    n, m = int(params["n"]), int(params["m"])
    box_size = float(params["box_size"])
    value = ml._calibration(n, m, box_size)
    return {"n": n, "m": m, "box_size": box_size, "calibration": value}


def run(config: ExperimentConfig) -> int:
    """Validate, dispatch, write reports; returns the process exit code."""
    try:
        _validate(config)
        if config.command == "check-inflation":
            report = _cmd_check_inflation(config.params, config.seed)
        elif config.command == "probe-pair":
            report = _cmd_probe_pair(config.params, config.seed, config.threads)
        elif config.command == "mv":
            report = _cmd_mv(config.params, config.seed)
        elif config.command == "inflate":
            report = _cmd_inflate(config.params, config.seed)
        elif config.command == "glue":
            report = _cmd_glue(config.params, config.seed)
        elif config.command == "experiment-positive":
            report = _cmd_experiment_positive(config.params, config.seed)
        elif config.command == "experiment-negative":
            report = _cmd_experiment_negative(config.params, config.seed)
        elif config.command == "calibrate":
            report = _cmd_calibrate(config.params, config.seed)
        else:  # unreachable after validation
            raise PreconditionError(f"unknown command {config.command!r}")
    except PreconditionError as exc:
        _emit_error("precondition", exc)
        return 2
    except NumericalFailure as exc:
        _emit_error("numerical", exc)
        return 3
    except InflateLabError as exc:
        _emit_error("error", exc)
        return 2

    payload = {"command": config.command, "seed": config.seed, "report": report}
    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"
    if config.format == "csv" and config.command == "inflate":
        # flat CSV of cell records for external plotting
        if not config.out:
            _emit_error("precondition", PreconditionError("inflate csv needs --out"))
            return 2
        pam = co.PiecewiseAffineMap.from_json(report["map"])
        max_cells = int(config.params.get("max_cells_csv", 100_000))
        try:
            co.pa_cells_to_csv(pam, config.out, max_cells=max_cells)
        except NumericalFailure as exc:
            _emit_error("numerical", exc)
            return 3
        return 0
    if config.format == "csv":
        records = report.get("records") if isinstance(report, dict) else None
        if records is None:
            _emit_error("precondition",
                        PreconditionError("csv format requires an experiment command"))
            return 2
        if config.out:
            ml.records_to_csv(records, config.out)
        else:
            import csv as _csv
            import io

            buf = io.StringIO()
            writer = _csv.DictWriter(buf, fieldnames=ml.CSV_FIELDS, extrasaction="ignore")
            writer.writeheader()
            for rec in records:
                writer.writerow({k: rec.get(k) for k in ml.CSV_FIELDS})
            sys.stdout.write(buf.getvalue())
        return 0
    if config.out:
        with open(config.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _emit_error(kind: str, exc: Exception) -> None:
    sys.stderr.write(json.dumps(
        {"error": {"type": kind, "message": str(exc)}}, sort_keys=True) + "\n")


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="inflate-lab",
        description="Norm geometry, inflation certificates and measure experiments.",
    )
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="JSON file with {params: ...} or the params object itself")
        p.add_argument("--params", type=str, default=None,
                       help="inline JSON params (overrides --config)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--format", type=str, choices=("json", "csv"), default=None)
        p.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2

    try:
        file_config: dict = {}
        if args.config:
            with open(args.config) as fh:
                file_config = json.load(fh)
        if "params" not in file_config:
            file_config = {"command": args.command, "params": file_config}
        if args.params is not None:
            file_config["params"] = json.loads(args.params)
    except (OSError, json.JSONDecodeError) as exc:
        _emit_error("precondition", exc)
        return 2

    env_threads = os.environ.get("INFLATE_LAB_THREADS")
    config = ExperimentConfig(
        command=args.command,
        params=file_config.get("params", {}),
        seed=args.seed if args.seed is not None else int(file_config.get("seed", 0)),
        out=args.out if args.out is not None else file_config.get("out"),
        format=args.format if args.format is not None else file_config.get("format", "json"),
        threads=(args.threads if args.threads is not None else
                 int(file_config.get("threads", env_threads or 1))),
    )
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
