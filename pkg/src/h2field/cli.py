"""Command-line front end: ``h2field {sample,validate,bench,stats}``.

Settings are resolved as command-line flags over a ``--config`` file over
built-in defaults.  The config file is flat ``key = value`` text (``#``
starts a comment); a JSON run manifest written by an earlier run is also
accepted and reproduces that run.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure,
3 I/O failure.  Errors are reported on stderr as a single ``error: ...``
line.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import replace
from importlib import metadata

import numpy as np
import scipy

from . import oracle
from .cluster import sparsity_stats
from .errors import ConfigError, H2FieldError, NumericalError
from .h2 import assemble, frobenius_error
from .h2 import stats as h2_stats
from .kernels import DENSE_CAP, AdmissibilityWarning, assemble_dense
from .pointset import generate_lowdiscrepancy
from .sampler import FieldSampler, SampleConfig, write_samples_csv
from .sqrt_iter import sqrt_apply_krylov, sqrt_apply_schulz

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot read {text!r} as a boolean")


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


# key -> (parser, default, SampleConfig field or None)
SHARED = {
    "points": (str, None, "points"),
    "grid": (str, None, "grid"),
    "lowdisc": (int, None, "lowdisc"),
    "kernel": (str, "matern", "kernel"),
    "sigma": (float, 1.0, "sigma"),
    "lambda": (float, 1.0, "lam"),
    "mu": (str, "1/2", "mu"),
    "pnorm": (int, 2, "pnorm"),
    "p": (int, 4, "p"),
    "eta": (float, 1.0, "eta"),
    "cleaf": (int, 20, "c_leaf"),
    "method": (str, "krylov", "method"),
    "kmax": (int, 200, "kmax"),
    "tol": (_opt_float, None, "krylov_tol"),
    "breakdown_tol": (float, 1e-12, "breakdown_tol"),
    "schulz_k": (int, 10, "schulz_k"),
    "scaling": (str, "safe", "scaling"),
    "seed": (int, 0, "seed"),
    "samples": (int, 1, "n_samples"),
    "lognormal": (_bool, False, "lognormal"),
    "mean": (float, 0.0, "mean"),
    "batch": (int, 8, "batch"),
    "out": (str, None, None),
    "threads": (int, None, None),
    "manifest": (str, None, None),
}
EXTRA = {
    "validate": {"p_list": (str, "2,3,4,5,6", None), "probe_seed": (int, 0, None),
                 "dense_max": (int, DENSE_CAP, None)},
    "bench": {"sizes": (str, "1024,2048,4096", None), "trials": (int, 3, None),
              "dense_max": (int, DENSE_CAP, None), "target": (float, 1e-8, None),
              "bench_methods": (str, "krylov", None)},
    "sample": {},
    "stats": {},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _flag(key):
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="h2field", description="Gaussian random fields via H2-matrices.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {"sample": "draw field samples and write them as CSV",
             "validate": "compare against dense reference computations",
             "bench": "time assembly, matvec and square-root application versus N",
             "stats": "print block-tree and storage statistics"}
    for name, extra in EXTRA.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", default=None, help="flat key=value file or JSON manifest")
        for key in list(SHARED) + list(extra):
            sp.add_argument(_flag(key), dest=key, default=None, metavar=key.upper())
    return parser


def read_config(path) -> dict:
    """Parse a key=value config file or a JSON manifest into raw settings."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return dict(data.get("settings", data))
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge flags over config file over defaults and convert types."""
    table = {**SHARED, **EXTRA[args.command]}
    raw = {k: d for k, (_, d, _) in table.items()}
    if args.config:
        from_file = read_config(args.config)
        unknown = sorted(set(from_file) - set(table))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        raw.update(from_file)
    given = {k: getattr(args, k) for k in table if getattr(args, k, None) is not None}
    # a point source given as a flag replaces any source from the file
    if any(k in given for k in ("points", "grid", "lowdisc")):
        for k in ("points", "grid", "lowdisc"):
            raw[k] = None
    raw.update(given)
    settings = {}
    for key, (conv, default, _) in table.items():
        val = raw.get(key)
        try:
            settings[key] = val if val is None or val is default else conv(val)
        except (TypeError, ValueError):
            raise ConfigError(f"invalid value for {key}: {val!r}") from None
    if settings["threads"] is None:
        settings["threads"] = os.cpu_count() or 1
    return settings


def make_config(settings: dict) -> SampleConfig:
    kw = {field: settings[key] for key, (_, _, field) in SHARED.items() if field}
    if not any(kw[k] is not None for k in ("points", "grid", "lowdisc")):
        raise ConfigError("no points given; use --points FILE, --grid AxB or --lowdisc M")
    return SampleConfig(**kw)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        return "0+unknown"


def write_manifest(settings: dict, command: str, timings: dict, diagnostics: dict,
                   default_path: str | None) -> str | None:
    path = settings.get("manifest") or default_path
    if path is None:
        return None
    manifest = {
        "command": command,
        "settings": {k: v for k, v in settings.items() if k != "manifest"},
        "version": _version(),
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__, "platform": platform.platform()},
        "timings": timings,
        "diagnostics": diagnostics,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _median_time(fn, trials):
    ts = []
    for _ in range(trials):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return float(np.median(ts))


# ---------------------------------------------------------------- commands

def cmd_sample(settings: dict) -> int:
    cfg = make_config(settings)
    sampler = FieldSampler(cfg)
    t = time.perf_counter()
    samples = sampler.sample(threads=settings["threads"])
    t_apply = time.perf_counter() - t
    out = settings["out"] or "samples.csv"
    write_samples_csv(out, sampler.points, samples)
    timings = dict(sampler.timings, sampling_total=t_apply,
                   per_sample=t_apply / len(samples))
    diags = {"n_points": sampler.n, "samples": [s.diagnostics for s in samples]}
    path = write_manifest(settings, "sample", timings, diags, out + ".manifest.json")
    print(f"wrote {len(samples)} samples at {sampler.n} points to {out}; manifest {path}")
    return EXIT_OK


def _int_list(text, what):
    try:
        vals = [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"cannot parse {what} list {text!r}") from None
    if not vals:
        raise ConfigError(f"empty {what} list")
    return vals


def validation_report(cfg: SampleConfig, p_list, probe_seed: int = 0,
                      dense_max: int = DENSE_CAP) -> dict:
    """Dense-reference measurements for one configuration (see ``cmd_validate``)."""
    sampler = FieldSampler(cfg)
    if sampler.n > dense_max:
        raise ConfigError(f"N={sampler.n} exceeds the dense cap {dense_max}")
    C = assemble_dense(sampler.kernel, sampler.points, dense_max)
    frob = []
    for p in p_list:
        h = assemble(sampler.kernel, sampler.bct, p, check_c2=False)
        frob.append({"p": p, "frobenius_error": frobenius_error(h, C)})
    bounds = oracle.spectral_bounds(C, cap=dense_max)
    R = oracle.dense_sqrt(C, cap=dense_max)
    z = np.random.default_rng(probe_seed).standard_normal(sampler.n)
    target, zn = R @ z, np.linalg.norm(z)
    res = sqrt_apply_krylov(sampler.h2, z, cfg.kmax, cfg.breakdown_tol, history=True,
                            keep_basis=True)
    krylov = [{"k": len(c), "rel_error": float(np.linalg.norm(res.Q[:, :len(c)] @ c - target) / zn)}
              for c in res.coefficients]
    sc = sampler.schulz_scaling()
    schulz = []
    for k in range(cfg.schulz_k + 1):
        try:
            y = sqrt_apply_schulz(sampler.h2, z, k, sc["s"])
            err = float(np.linalg.norm(y - target) / zn)
        except NumericalError:
            err = math.inf
        schulz.append({"k": k, "rel_error": err})
    return {"n": sampler.n, "frobenius": frob, "lambda_min": bounds["lambda_min"],
            "lambda_max": bounds["lambda_max"], "cond": bounds["cond"],
            "krylov": krylov, "krylov_k0": res.k0, "schulz": schulz, "schulz_s": sc["s"]}


def cmd_validate(settings: dict) -> int:
    cfg = make_config(settings)
    p_list = _int_list(settings["p_list"], "p")
    t = time.perf_counter()
    rep = validation_report(cfg, p_list, settings["probe_seed"], settings["dense_max"])
    elapsed = time.perf_counter() - t
    lines = [f"N = {rep['n']}",
             f"lambda_min(C) = {rep['lambda_min']:.6e}  lambda_max(C) = {rep['lambda_max']:.6e}"
             f"  cond = {rep['cond']:.6e}",
             "", "p,frobenius_error"]
    lines += [f"{r['p']},{r['frobenius_error']:.6e}" for r in rep["frobenius"]]
    lines += ["", "method,k,rel_error"]
    lines += [f"krylov,{r['k']},{r['rel_error']:.6e}" for r in rep["krylov"]]
    lines += [f"schulz,{r['k']},{r['rel_error']:.6e}" for r in rep["schulz"]]
    text = "\n".join(lines) + "\n"
    out = settings["out"]
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    write_manifest(settings, "validate", {"total": elapsed}, rep,
                   out + ".manifest.json" if out else None)
    return EXIT_OK


def run_bench(base: SampleConfig, sizes, trials: int = 3, dense_max: int = DENSE_CAP,
              target: float = 1e-8, methods=("krylov",)) -> dict:
    """Timing table versus N on Sobol point sets.

    The Krylov dimension is calibrated once, at the first size, as the
    largest step count any of ``base.batch`` probe vectors needs until the
    relative increment drops below ``target``; that count is then used
    unchanged for every N.  Per-sample times are medians over ``trials``
    runs of one batch divided by the batch size.
    """
    rows, k_cal = [], None
    for n in sizes:
        m = int(round(math.log2(n)))
        if 2**m != n:
            raise ConfigError(f"bench sizes must be powers of two, got {n}")
        cfg = replace(base, points=None, grid=None, lowdisc=None,
                      point_set=generate_lowdiscrepancy(m, 2))
        t = time.perf_counter()
        sampler = FieldSampler(cfg)
        t_asm = time.perf_counter() - t
        Z = sampler.normals(range(cfg.batch))
        row = {"N": n, "assembly_s": t_asm,
               "matvec_s": _median_time(lambda: sampler.h2.matvec(Z[:, 0]), trials)}
        if "krylov" in methods:
            if k_cal is None:
                res = sqrt_apply_krylov(sampler.h2, Z, cfg.kmax, cfg.breakdown_tol, target)
                k_cal = max(r.k0 for r in res)
            row["krylov_k"] = k_cal
            row["krylov_per_sample_s"] = _median_time(
                lambda: sqrt_apply_krylov(sampler.h2, Z, k_cal, cfg.breakdown_tol),
                trials) / cfg.batch
        if "schulz" in methods:
            s = sampler.schulz_scaling()["s"]
            row["schulz_k"] = cfg.schulz_k
            row["schulz_per_sample_s"] = _median_time(
                lambda: sqrt_apply_schulz(sampler.h2, Z, cfg.schulz_k, s), trials) / cfg.batch
        if n <= dense_max:
            C = assemble_dense(sampler.kernel, sampler.points, dense_max)
            row["dense_sqrt_s"] = _median_time(
                lambda: oracle.dense_sqrt(C, cap=dense_max) @ Z[:, 0], trials)
        rows.append(row)
    slopes = {}
    for col in ("krylov_per_sample_s", "schulz_per_sample_s", "dense_sqrt_s", "matvec_s"):
        pts = [(r["N"], r[col]) for r in rows if col in r]
        if len(pts) >= 2:
            x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
            slopes[col] = float(np.polyfit(x, y, 1)[0])
    return {"rows": rows, "slopes": slopes, "trials": trials}


def cmd_bench(settings: dict) -> int:
    sizes = _int_list(settings["sizes"], "size")
    methods = tuple(m.strip() for m in settings["bench_methods"].split(",") if m.strip())
    bad = set(methods) - {"krylov", "schulz"}
    if bad:
        raise ConfigError(f"unknown bench methods: {sorted(bad)}")
    # the point source is replaced by a Sobol set of each size
    cfg = make_config(dict(settings, points=None, grid=None, lowdisc=0))
    rep = run_bench(cfg, sizes, settings["trials"], settings["dense_max"],
                    settings["target"], methods)
    cols = ["N", "assembly_s", "matvec_s"]
    for name in ("krylov", "schulz"):
        if name in methods:
            cols += [f"{name}_k", f"{name}_per_sample_s"]
    cols.append("dense_sqrt_s")
    lines = [",".join(cols)]
    for r in rep["rows"]:
        lines.append(",".join("" if c not in r else
                              (str(r[c]) if isinstance(r[c], int) else f"{r[c]:.6e}")
                              for c in cols))
    text = "\n".join(lines) + "\n"
    out = settings["out"]
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for col, s in rep["slopes"].items():
        print(f"# log-log slope {col}: {s:.3f}", file=sys.stderr)
    write_manifest(settings, "bench", {"rows": rep["rows"], "trials": rep["trials"]},
                   {"slopes": rep["slopes"]}, out + ".manifest.json" if out else None)
    return EXIT_OK


def cmd_stats(settings: dict) -> int:
    cfg = make_config(settings)
    sampler = FieldSampler(cfg)
    info = {"N": sampler.n, **sparsity_stats(sampler.bct), **h2_stats(sampler.h2),
            "storage": sampler.h2.storage()}
    text = json.dumps(info, indent=2, default=_jsonable) + "\n"
    if settings["out"]:
        with open(settings["out"], "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "validate": cmd_validate, "bench": cmd_bench,
            "stats": cmd_stats}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        settings = resolve_settings(args)
        with warnings.catch_warnings():
            # the c2 guidance is advisory and would fire on every Matern run
            warnings.simplefilter("ignore", AdmissibilityWarning)
            return COMMANDS[args.command](settings)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (H2FieldError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
