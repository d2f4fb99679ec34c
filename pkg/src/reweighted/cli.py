"""Command-line entry point.

Each subcommand resolves its parameters from built-in defaults, then an
optional ``--config`` key=value file, then explicit flags.  The resolved
parameters are written to ``run-manifest`` in the output directory; passing
that file back as ``--config`` reproduces the run.

Exit codes: 0 success, 1 solver error or missing dataset, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, cs, cs_analysis, harness, io, mc

logger = logging.getLogger("reweighted")

OUTPUT_ENV = "REWEIGHTED_OUTPUT_DIR"
MANIFEST = "run-manifest"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# parameter parsing


def parse_grid(text: str) -> list[int]:
    """``"2:40:2"`` (inclusive start:stop:step) or ``"2,4,8"``."""
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1)
            start, stop, step = parts
            if step <= 0:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"bad grid {text!r}: use start:stop:step or a comma list") from None


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _parse_optional_int(text) -> int | None:
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return int(text)


def _converter(default) -> Callable[[str], Any]:
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


# defaults per subcommand; the type of each default drives parsing of config values
_WSST_DEFAULTS = {
    "eps_lambda": 1e-4,
    "q": 0.7,
    "K": 50,
    "tol": 5e-4,
    "tau": 0.0,
    "max_inner_iters": 5000,
    "rank_cap": "none",
}
_SOLVER_DEFAULTS = {
    "feas_tol": 1e-10,
    "obj_tol": 1e-9,
    "stab_tol": 1e-8,
    "max_iter": 50_000,
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "cs-phase": {
        "n": 128,
        "s_grid": "2:40:2",
        "m_grid": "10:120:10",
        "reps": 20,
        "eps": 0.01,
        "k": 20,
        "eta": 1e-5,
        "workers": 1,
        **_SOLVER_DEFAULTS,
    },
    "a0-track": {"n": 256, "m": 110, "s": 45, "reps": 10, "K": 30, "eps": 0.01, "workers": 1, **_SOLVER_DEFAULTS},
    "mc-phase": {
        "n": 100,
        "ranks": "2:30:2",
        "sample_frac": 0.3,
        "reps": 5,
        "workers": 1,
        **_WSST_DEFAULTS,
        "tol": harness.MC_DESK_CONFIG.tol,
        "max_inner_iters": harness.MC_DESK_CONFIG.max_inner_iters,
    },
    "inpaint": {"image": "", "size": 64, "rank": 5, "sample_frac": 0.3, **_WSST_DEFAULTS},
    "collab": {"data": "", **_WSST_DEFAULTS, "eps_lambda": 1e-3, "tol": 1e-3, "rank_cap": "200"},
    "certify": {"problem": "", "weights": ""},
    "complete": {"data": "", "rows": 0, "cols": 0, "method": "wsst", **_WSST_DEFAULTS},
}

# manifest bookkeeping keys that a config file may contain
_IGNORED_KEYS = {"subcommand", "version", "out"}


def resolve(subcommand: str, config: dict[str, str], flags: dict[str, Any]) -> dict[str, Any]:
    """Defaults, overridden by config-file values, overridden by flags."""
    params = dict(DEFAULTS[subcommand])
    params["seed"] = 0
    for source in (config, flags):
        for key, value in source.items():
            if value is None or key in _IGNORED_KEYS:
                continue
            if key not in params:
                raise UsageError(f"unknown parameter {key!r} for {subcommand}")
            try:
                params[key] = _converter(params[key])(value)
            except ValueError:
                raise UsageError(f"bad value {value!r} for {key}") from None
    return params


def _wsst_config(p: dict[str, Any]) -> mc.WsstConfig:
    try:
        return mc.WsstConfig(
            eps_lambda=p["eps_lambda"],
            q=p["q"],
            K=p["K"],
            tol=p["tol"],
            tau=p["tau"],
            max_inner_iters=p["max_inner_iters"],
            rank_cap=_parse_optional_int(p["rank_cap"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _solver_config(p: dict[str, Any]) -> cs.SolverConfig:
    try:
        return cs.SolverConfig(
            feas_tol=p["feas_tol"], obj_tol=p["obj_tol"], stab_tol=p["stab_tol"], max_iter=p["max_iter"]
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _require_file(path: str, what: str) -> str:
    if not path:
        raise UsageError(f"--{what} is required")
    return path


def _load(reader: Callable, path: str):
    """Parse an input file; malformed content is a usage error."""
    try:
        return reader(path)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# commands


def cmd_cs_phase(p, out: Path) -> None:
    rm = harness.run_cs_phase_map(
        p["n"],
        parse_grid(p["s_grid"]),
        parse_grid(p["m_grid"]),
        p["reps"],
        p["eps"],
        p["k"],
        p["eta"],
        p["seed"],
        _solver_config(p),
        workers=p["workers"],
    )
    io.write_csv(out / "cs_phase.csv", rm.CSV_HEADER, rm.csv_rows())
    print(f"weighted >= plain in {rm.dominance_fraction():.1%} of cells; totals {rm.counts_weighted.sum()} vs {rm.counts_plain.sum()}")


def cmd_a0_track(p, out: Path) -> None:
    traces = harness.run_a0_tracking(p["n"], p["m"], p["s"], p["reps"], p["K"], p["eps"], p["seed"], _solver_config(p), workers=p["workers"])
    rows = [(t.rep, k + 1, t.log10_C[k], t.err[k]) for t in traces for k in range(t.err.size)]
    io.write_csv(out / "a0_track.csv", ("rep", "k", "log10_C", "err"), rows)
    print(f"{sum(t.recovered for t in traces)}/{len(traces)} repetitions recovered")


def cmd_mc_phase(p, out: Path) -> None:
    res = harness.run_mc_phase(p["n"], parse_grid(p["ranks"]), p["sample_frac"], p["reps"], _wsst_config(p), p["seed"], workers=p["workers"])
    io.write_csv(out / "mc_phase.csv", res.CSV_HEADER, res.csv_rows())
    print(
        "largest rank with median error < 1e-3: "
        f"NNM {harness.largest_recovered_rank(res.ranks, res.nnm_error)}, "
        f"WSST {harness.largest_recovered_rank(res.ranks, res.wsst_error)}"
    )


def cmd_inpaint(p, out: Path) -> None:
    image = _load(io.read_pgm, p["image"]) if p["image"] else harness.synthetic_image(p["size"], p["seed"])
    res = harness.run_inpainting(image, p["rank"], p["sample_frac"], _wsst_config(p), p["seed"])
    io.write_csv(
        out / "inpaint.csv",
        ("method", "relative_error", "rank"),
        [("nnm", res.nnm_error, res.nnm_rank), ("wsst", res.wsst_error, res.wsst_rank)],
    )
    io.write_pgm(out / "truth.pgm", res.truth)
    io.write_pgm(out / "observed.pgm", res.observed)
    io.write_pgm(out / "nnm.pgm", res.nnm)
    io.write_pgm(out / "wsst.pgm", res.wsst)
    io.write_pgm(out / "nnm_diff.pgm", res.nnm_diff, rescale=True)
    io.write_pgm(out / "wsst_diff.pgm", res.wsst_diff, rescale=True)
    print(f"NNM error {res.nnm_error:.3e} rank {res.nnm_rank}; WSST error {res.wsst_error:.3e} rank {res.wsst_rank}")


def cmd_collab(p, out: Path) -> None:
    data = _load(io.read_movielens, _require_file(p["data"], "data"))
    res = harness.run_collab_filter(data, _wsst_config(p), p["seed"])
    io.write_csv(
        out / "collab.csv",
        ("method", "relative_error", "rank", "n_users", "n_items", "n_train", "n_test"),
        [
            ("nnm", res.nnm_error, res.nnm_rank, res.n_users, res.n_items, res.n_train, res.n_test),
            ("wsst", res.wsst_error, res.wsst_rank, res.n_users, res.n_items, res.n_train, res.n_test),
        ],
    )
    print(f"NNM error {res.nnm_error:.3e} rank {res.nnm_rank}; WSST error {res.wsst_error:.3e} rank {res.wsst_rank}")


def cmd_certify(p, out: Path) -> None:
    A, x = _load(io.read_problem, _require_file(p["problem"], "problem"))
    w = _load(io.read_vector, _require_file(p["weights"], "weights"))
    if w.size != A.shape[1]:
        raise UsageError(f"weights have {w.size} entries, A has {A.shape[1]} columns")
    rep = cs_analysis.dual_certificate(A, x, w)
    header = ("valid", "strict_bound", "delta_hat", "mu_hat", "a0_constant")
    row = (rep.valid, rep.strict_bound, rep.delta_hat, rep.mu_hat, rep.a0_constant)
    io.write_csv(out / "certificate.csv", header, [row])
    print(",".join(header))
    print(",".join(io.format_float(v) for v in row))


def cmd_complete(p, out: Path) -> None:
    rows, cols, vals = _load(io.read_triplets, _require_file(p["data"], "data"))
    n1 = p["rows"] or (int(rows.max()) + 1 if rows.size else 0)
    n2 = p["cols"] or (int(cols.max()) + 1 if cols.size else 0)
    if n1 < 1 or n2 < 1:
        raise UsageError("cannot infer the matrix size from an empty file; pass --rows and --cols")
    if p["method"] not in ("wsst", "nnm"):
        raise UsageError("--method must be wsst or nnm")
    try:
        obs = mc.MaskedMatrix(mc.MaskSet(n1, n2, rows, cols), vals)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = _wsst_config(p)
    res = mc.nnm_solve(obs, cfg)
    if p["method"] == "wsst":
        res = mc.wsst(obs, res, cfg)
    r, c = np.divmod(np.arange(n1 * n2), n2)
    io.write_csv(out / "completed.csv", ("row", "col", "value"), zip(r, c, res.values_at(r, c)))
    print(f"{p['method']} rank {res.rank}, lambda {res.lambda_used:.3e}, {res.inner_iterations_total} inner iterations")


COMMANDS: dict[str, Callable] = {
    "cs-phase": cmd_cs_phase,
    "a0-track": cmd_a0_track,
    "mc-phase": cmd_mc_phase,
    "inpaint": cmd_inpaint,
    "collab": cmd_collab,
    "certify": cmd_certify,
    "complete": cmd_complete,
}

HELP = {
    "cs-phase": "exact-recovery counts of plain and reweighted basis pursuit on an (s, m) grid",
    "a0-track": "weight-accuracy constant and log error along the reweighting iterations",
    "mc-phase": "NNM versus WSST relative errors over a rank grid",
    "inpaint": "complete a masked low-rank image; writes PGM reconstructions and difference maps",
    "collab": "held-out error on a MovieLens ratings file (u.data or ratings.dat)",
    "certify": "dual certificate and condition constants for one weighted problem",
    "complete": "one-shot completion of a row,col,value triplet file",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reweighted", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for name, defaults in DEFAULTS.items():
        sp = sub.add_parser(name, help=HELP[name], description=HELP[name])
        sp.add_argument("--config", help="key = value parameter file (flags take precedence)")
        sp.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./results)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        for key, default in defaults.items():
            flag = "--" + key.replace("_", "-")
            kind = _converter(default)
            sp.add_argument(flag, dest=key, type=str if kind is _parse_bool else kind, default=None, help=f"default: {default}")
    return parser


def _output_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get(OUTPUT_ENV) or "results")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    name = args.subcommand
    flags = {k: v for k, v in vars(args).items() if k in DEFAULTS[name] or k == "seed"}
    try:
        config = io.read_config(args.config) if args.config else {}
        params = resolve(name, config, flags)
        out = _output_dir(args.out)
        manifest = {"subcommand": name, "version": __version__, **params}
        io.write_config(out / MANIFEST, manifest)
        COMMANDS[name](params, out)
    except (UsageError, OSError) as exc:
        if isinstance(exc, io.DatasetMissing):
            print(f"error: DatasetMissing: {exc}", file=sys.stderr)
            return 1
        print(f"usage error: {exc}", file=sys.stderr)
        print(parser.format_usage().strip(), file=sys.stderr)
        return 2
    except (
        cs.Infeasible,
        cs_analysis.SingularGram,
        cs_analysis.KernelTooLarge,
        harness.EmptyTestSet,
        np.linalg.LinAlgError,
        ArithmeticError,
        ValueError,
    ) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
