"""Command-line front end.

Exit codes: 0 success, 2 validation error, 3 I/O or corrupt stream,
4 oracle tolerance failure.
"""
from __future__ import annotations

import argparse
import contextlib
import itertools
import json
import math
import os
import sys
import warnings

from . import oracle, pipeline, qstates
from .classify import classical_bounds, region_curves, write_region_csv
from .errors import (ConvergenceError, OracleMismatch, PhotostatsError, StreamCorruptionError,
                     ValidationError)
from .qstates import StateConfig
from .reconstruct import photon_moments, propagate_errors
from .statacc import DEFAULT_BATCHES, SCHEMA_VERSION, CumulantSet, combine_batches, subtract_noise
from .streamfile import StreamReader, write_stream

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_ORACLE = 4


def _load_json_arg(text):
    """A JSON literal, or the path of a file holding one."""
    if os.path.exists(text):
        with open(text) as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"not valid JSON: {exc}") from exc


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def _emit_json(doc, path=None):
    with _output(path) as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _finite_or_none(v):
    return v if isinstance(v, float) and math.isfinite(v) else None


def cmd_simulate(args):
    cfg = StateConfig.from_json(_load_json_arg(args.config))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.samples < 1:
        raise ValidationError("--samples must be >= 1")
    write_stream(args.out, qstates.iter_chunks(cfg, args.samples), args.samples, cfg)
    return EXIT_OK


def stream_cumulants(paths, batches=DEFAULT_BATCHES, shift=0.0) -> CumulantSet:
    """Batch cumulants of the concatenation of one or more stream files, in one pass."""
    readers = [StreamReader(p) for p in paths]
    try:
        total = sum(r.count for r in readers)
        chunks = itertools.chain.from_iterable(r.iter_chunks() for r in readers)
        return combine_batches(pipeline.batch_sums(chunks, total, batches, shift))
    finally:
        for r in readers:
            r.close()


def cmd_cumulants(args):
    cs = stream_cumulants(args.streams, args.batches, args.shift)
    _emit_json(cs.to_json(), args.json)
    return EXIT_OK


def _load_cumulants(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ValidationError(f"{path}: unsupported schema version {doc.get('schema_version')}")
    return CumulantSet.from_json(doc)


def reconstruct_report(signal: CumulantSet, noise: CumulantSet = None):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cs = subtract_noise(signal, noise) if noise is not None else signal
        if cs.se is not None:
            pm = propagate_errors(cs)
        else:
            pm = photon_moments(cs)
            warnings.warn("inputs carry no standard errors; no classicality verdict issued")
        report = classical_bounds(pm)
    return {
        "schema_version": SCHEMA_VERSION,
        "noise_subtracted": noise is not None,
        "cumulants": cs.to_json(),
        "photon_moments": pm.to_json(),
        "classicality": report.to_json(),
        "warnings": [str(w.message) for w in caught],
    }


def cmd_reconstruct(args):
    signal = _load_cumulants(args.signal)
    noise = _load_cumulants(args.noise) if args.noise else None
    doc = reconstruct_report(signal, noise)
    for msg in doc["warnings"]:
        print(f"warning: {msg}", file=sys.stderr)
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_sweep(args):
    if args.state == "modulated" and args.scheme is None:
        raise ValidationError("--scheme is required for modulated sweeps")
    grid = pipeline.log_grid(args.n_from, args.n_to, args.points)
    rows = pipeline.sweep(args.state, grid, args.samples_per_point, args.noise_photons,
                          args.seed, args.scheme, args.batches, args.threads)
    with _output(args.out) as fh:
        pipeline.write_sweep_csv(rows, fh)
    return EXIT_OK


def _closed_form_cumulants(cfg):
    if cfg.kind == "thermal":
        return [0.0, cfg.nbar + 0.5, 0.0, 0.0, 0.0, 0.0]
    a2 = cfg.alpha2
    return [0.0, a2 + 0.5, 0.0, -1.5 * a2**2, 0.0, 10 * a2**3]


def run_oracle_check(check, cfg, k=None, r=1.0, theta=0.0, n_trunc=oracle.N_TRUNC):
    """Run one oracle verification; returns (report dict, passed)."""
    if check == "eq3":
        p = oracle.number_distribution(cfg, n_trunc)
        rows = []
        for kk in ([k] if k else [1, 2, 3]):
            closed = oracle.quadrature_even_moment(p, kk)
            brute = oracle.bruteforce_symmetric_sum(p, kk)
            rows.append({"k": kk, "closed_form": closed, "brute_force": brute,
                         "abs_diff": abs(closed - brute)})
        ok = all(row["abs_diff"] <= 1e-10 for row in rows)
        return {"check": "eq3", "state": cfg.to_json(), "results": rows, "ok": ok}, ok
    if check == "cgf":
        expected = _closed_form_cumulants(cfg)
        rows = []
        for kk in ([k] if k else range(1, 7)):
            got = oracle.cumulant_via_cgf(cfg, kk)
            want = expected[kk - 1]
            rel = abs(got - want) / max(abs(want), 1e-12) if want else abs(got)
            rows.append({"k": kk, "numeric": got, "closed_form": want, "rel_err": rel})
        ok = all(row["rel_err"] <= 1e-5 for row in rows)
        return {"check": "cgf", "state": cfg.to_json(), "results": rows, "ok": ok}, ok
    if check == "roundtrip":
        try:
            rep = oracle.roundtrip(cfg, n_trunc)
        except OracleMismatch as exc:
            rep = exc.report
        return {"check": "roundtrip", "state": cfg.to_json(), **rep.to_json()}, rep.ok
    if check == "displace":
        rep = oracle.displaced_stats(cfg, r, theta, n_trunc)
        doc = {"check": "displace", "state": cfg.to_json(), "r": r, "theta": theta,
               **rep.to_json()}
        doc["fano_direct"] = _finite_or_none(rep.direct[1] / rep.direct[0]) if rep.direct[0] > 0 else None
        return doc, rep.ok
    raise ValidationError(f"unknown oracle check {check!r}")


_DEFAULT_ORACLE_STATE = {
    "eq3": {"kind": "coherent", "alpha2": 1.0},
    "cgf": {"kind": "coherent", "alpha2": 1.0},
    "roundtrip": {"kind": "thermal", "nbar": 2.0},
    "displace": {"kind": "coherent", "alpha2": 0.0},
}


def cmd_oracle(args):
    state = _load_json_arg(args.state) if args.state else _DEFAULT_ORACLE_STATE[args.check]
    cfg = StateConfig.from_json(state)
    doc, ok = run_oracle_check(args.check, cfg, args.k, args.r, args.theta, args.n_trunc)
    _emit_json(doc, args.out)
    if not ok:
        print(f"oracle check {args.check} failed tolerance", file=sys.stderr)
    return EXIT_OK if ok else EXIT_ORACLE


def cmd_curves(args):
    if args.grid:
        grid = [float(v) for v in args.grid.split(",")]
    else:
        grid = [0.0] + list(pipeline.log_grid(args.n_from, args.n_to, args.points))
    with _output(args.out) as fh:
        write_region_csv(region_curves(grid), fh)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="photostats",
        description="Photocount statistics from phase-averaged quadrature streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated quadrature stream")
    p.add_argument("config", help="state config JSON (literal or file path)")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cumulants", help="cumulants C1..C6 of one or more stream files")
    p.add_argument("streams", nargs="+", help="stream files, processed as one concatenated stream")
    p.add_argument("--batches", type=int, default=DEFAULT_BATCHES)
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--json", default=None, metavar="PATH", help="output file (default stdout)")
    p.set_defaults(func=cmd_cumulants)

    p = sub.add_parser("reconstruct", help="photon moments and classicality from cumulants")
    p.add_argument("--signal", required=True)
    p.add_argument("--noise", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("sweep", help="simulate a photon-number sweep, one CSV row per point")
    p.add_argument("--state", choices=pipeline.SWEEP_KINDS, default="coherent")
    p.add_argument("--scheme", choices=qstates.SCHEMES, default=None)
    p.add_argument("--n-from", type=float, default=1e-2)
    p.add_argument("--n-to", type=float, default=1.0)
    p.add_argument("--points", type=int, default=13)
    p.add_argument("--samples-per-point", type=int, default=10**7)
    p.add_argument("--noise-photons", type=float, default=1.0)
    p.add_argument("--batches", type=int, default=DEFAULT_BATCHES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=pipeline.default_threads())
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact truncated-Fock-space verifications")
    p.add_argument("--check", choices=("eq3", "cgf", "roundtrip", "displace"), required=True)
    p.add_argument("--state", default=None, help="state config JSON (literal or file path)")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--n-trunc", type=int, default=oracle.N_TRUNC)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("curves", help="region boundary curves of the (<n>, <dn^2>) plane as CSV")
    p.add_argument("--grid", default=None, help="comma-separated photon numbers")
    p.add_argument("--n-from", type=float, default=1e-2)
    p.add_argument("--n-to", type=float, default=10.0)
    p.add_argument("--points", type=int, default=31)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, StreamCorruptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConvergenceError, OracleMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except PhotostatsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
