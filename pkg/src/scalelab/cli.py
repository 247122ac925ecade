"""Command-line entry point: ``scalelab <command> [flags]``.

Exit codes: 0 success, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .core import MODELS, DatasetValidationError, FitDataset, ForgettingWarning, l0_table, read_curve_csv, read_runs_jsonl, \
    validate_dataset, write_curve_csv, write_runs_jsonl
from .laws import LawFamily, evaluate, needs_l0, response

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _dump(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    return text


def _metadata(args):
    # The only non-deterministic field of any output.
    return {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "scalelab_version": __version__, "command": args.command}


def _load_runs(path, l0=None) -> FitDataset:
    if not path:
        raise InputError("--input is required")
    try:
        recs = read_runs_jsonl(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except ValueError as e:
        raise InputError(str(e)) from None
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ForgettingWarning)
            ds = validate_dataset(recs, l0)
    except DatasetValidationError as e:
        raise InputError(f"{path}: {e}") from None
    below = [w for w in caught if issubclass(w.category, ForgettingWarning)]
    if below:
        print(f"warning: {len(below)} of {len(ds)} records sit below their baseline pretraining loss", file=sys.stderr)
    return ds


def _load_l0(args):
    if getattr(args, "l0_table", None):
        try:
            raw = json.loads(Path(args.l0_table).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"{args.l0_table}: {e}") from None
        return {int(k): float(v) for k, v in raw.items()}
    if getattr(args, "l0_preset", None):
        return l0_table(args.l0_preset)
    return None


def _fit_config(args):
    from .fitting import FitConfig

    kw = {}
    if args.huber_delta is not None:
        kw["huber_delta"] = args.huber_delta
    if args.max_iterations is not None:
        kw["max_iterations"] = args.max_iterations
    if args.grad_tolerance is not None:
        kw["grad_tolerance"] = args.grad_tolerance
    if args.init_grid:
        try:
            kw["init_grid"] = json.loads(Path(args.init_grid).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"{args.init_grid}: {e}") from None
    if args.bound:
        b = {}
        for spec in args.bound:
            try:
                name, lo, hi = spec.split(":")
                b[name] = (float(lo), float(hi))
            except ValueError:
                raise InputError(f"--bound expects name:lo:hi, got {spec!r}") from None
        kw["bounds"] = b
    try:
        return FitConfig(**kw)
    except ValueError as e:
        raise InputError(str(e)) from None


def _family_and_l0(args):
    family = LawFamily(args.family)
    l0 = _load_l0(args)
    if needs_l0(family) and l0 is None:
        raise InputError(f"{family.value}: missing L0 table (pass --l0-table or --l0-preset)")
    return family, l0


# ---------------------------------------------------------------------------
# Commands


def cmd_fit(args):
    from .evaluation import mre
    from .fitting import fit

    family, l0 = _family_and_l0(args)
    ds = _load_runs(args.input, l0)
    cfg = _fit_config(args)
    try:
        res = fit(family, ds, cfg, l0)
    except ValueError as e:
        raise InputError(str(e)) from None
    err = mre(res.predict(ds), response(family, ds, l0))
    out = res.to_dict()
    out["mre"] = err
    out["domain"] = ds.domain
    out["n_records"] = len(ds)
    out["metadata"] = _metadata(args)
    if args.output:
        _dump(out, args.output)
    p = res.params
    print(f"{family.value} on {ds.domain} ({len(ds)} runs): MRE {100 * err:.3f}%  objective {res.objective:.3e}")
    for k, v in p.to_dict(family).items():
        if isinstance(v, (int, float)):
            print(f"  {k:6s} {v:.6g}")
    print(f"  best start {res.best_start_index}/{res.n_starts}, converged={res.converged}, E at floor={res.e_at_floor}")
    return EXIT_OK


def cmd_bootstrap(args):
    from .evaluation import BootstrapConfig, bootstrap_mre, write_rep_csv

    family, l0 = _family_and_l0(args)
    ds = _load_runs(args.input, l0)
    cfg = _fit_config(args)
    res = bootstrap_mre(family, ds, cfg, BootstrapConfig(args.reps, args.resample_size, args.seed), l0)
    if math.isnan(res.mean):
        print(f"all {args.reps} bootstrap repetitions failed", file=sys.stderr)
        return EXIT_NUMERIC
    out = res.to_dict()
    out["metadata"] = {**res.metadata, **_metadata(args)}
    if args.output:
        _dump(out, args.output)
    if args.rep_csv:
        write_rep_csv(res, args.rep_csv)
    print(f"{family.value}: bootstrap MRE {100 * res.mean:.3f}% over {args.reps - len(res.failed)}/{args.reps} reps")
    return EXIT_OK


def cmd_extrapolate(args):
    from .evaluation import SETUPS, extrapolation_mre, split_extrapolation

    family, l0 = _family_and_l0(args)
    ds = _load_runs(args.input, l0)
    setups = [args.setup] if args.setup else ["A", "B"]
    rows = []
    for tag in setups:
        try:
            train, test = split_extrapolation(ds, tag)
        except ValueError as e:
            raise InputError(str(e)) from None
        err = extrapolation_mre(family, ds, tag, _fit_config(args), l0)
        s = SETUPS[tag]
        rows.append({"setup": tag, "excluded_sizes": list(s.excluded_model_sizes),
                     "excluded_tokens": list(s.excluded_token_counts), "n_train": len(train),
                     "n_test": len(test), "mre": err})
        print(f"setup {tag}: train {len(train)}, held out {len(test)}, MRE {100 * err:.3f}%")
    if args.output:
        _dump({"family": family.value, "results": rows, "metadata": _metadata(args)}, args.output)
    return EXIT_OK


def _load_fit(path):
    from .fitting import FitResult

    try:
        return FitResult.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: not a fit result ({e})") from None


def cmd_predict(args):
    if not args.input:
        raise InputError("--input (a fit JSON) is required")
    res = _load_fit(args.input)
    if args.runs:
        ds = _load_runs(args.runs)
        pred = res.predict(ds)
        rows = [(r.n_params, r.dft_tokens, r.p, y) for r, y in zip(ds, pred)]
    else:
        if args.n is None or args.tokens is None:
            raise InputError("give --runs, or --n and --tokens (and optionally --p)")
        rows = [(args.n, args.tokens, args.p, float(evaluate(res.family, res.params, args.n, args.tokens, args.p)))]
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_params", "dft_tokens", "p", "predicted"])
        for n, d, p, y in rows:
            w.writerow([int(n), int(d), repr(float(p)), repr(float(y))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_simulate(args):
    from . import surrogate

    kw = {"noise_sigma": args.noise_sigma, "seed": args.seed}
    if args.grid_preset == "ift":
        spec = surrogate.spec_for_domain("openhermes", **kw)
    else:
        spec = surrogate.spec_for_domain(args.domain, **kw)
    if args.curve:
        if args.n is None or args.tokens is None:
            raise InputError("--curve needs --n and --tokens")
        from .laws import Covariates

        curve = surrogate.gen_curve(spec, surrogate.CurveShape(), Covariates(args.n, args.tokens, args.p),
                                    args.l_start, noise_sigma=args.curve_noise)
        if not args.output:
            raise InputError("--output is required")
        write_curve_csv(curve, args.output)
        print(f"wrote {len(curve.steps)} points to {args.output}; analytic bottom at step {curve.meta['t_bottom']:.1f}")
        return EXIT_OK
    ds = surrogate.gen_grid(spec)
    if not args.output:
        raise InputError("--output is required")
    write_runs_jsonl(ds.records, args.output)
    print(f"wrote {len(ds)} runs for {spec.domain} (noise {spec.noise_sigma}) to {args.output}")
    return EXIT_OK


def cmd_ucurve(args):
    from .evaluation import ucurve_bottom

    try:
        curve = read_curve_csv(args.input)
    except FileNotFoundError:
        raise InputError(f"{args.input}: no such file") from None
    except ValueError as e:
        raise InputError(str(e)) from None
    b = ucurve_bottom(curve)
    out = {"step": b.step, "loss": b.loss, "smoothed": b.smoothed, "no_overfitting": b.no_overfitting}
    if curve.val_pt is not None:
        i = int(np.searchsorted(curve.steps, b.step))
        out["pt_loss_at_bottom"] = float(curve.val_pt[i])
    if args.output:
        _dump(out, args.output)
    flag = "  (no overfitting observed)" if b.no_overfitting else ""
    print(f"bottom at step {b.step:g}: val_ft {b.loss:.6g}{flag}")
    return EXIT_OK


def cmd_mix_stats(args):
    from .datapipe import MixtureConfig, binomial_band, mixture_sources, read_mixture_manifest

    if args.input:
        try:
            src = read_mixture_manifest(args.input)
        except FileNotFoundError:
            raise InputError(f"{args.input}: no such file") from None
        except ValueError as e:
            raise InputError(str(e)) from None
        if args.p is None:
            try:
                args.p = json.loads(Path(args.input + ".json").read_text())["p"]
            except (OSError, KeyError, json.JSONDecodeError):
                raise InputError("--p is required when the manifest has no sidecar") from None
    else:
        if args.n is None or args.n < 1:
            raise InputError("--n must be at least 1")
        try:
            src = mixture_sources(MixtureConfig(args.p, args.seed), int(args.n))
        except ValueError as e:
            raise InputError(str(e)) from None
    n = src.size
    if n == 0:
        raise InputError("no rows to count")
    obs = float(src.mean())
    lo, hi = binomial_band(args.p, n)
    verdict = "PASS" if lo <= obs <= hi else "FAIL"
    print(f"rows {n}  observed {obs:.6f}  expected {args.p:.6f}  3-sigma band [{lo:.6f}, {hi:.6f}]  {verdict}")
    if args.output:
        _dump({"n": n, "observed": obs, "expected": args.p, "band": [lo, hi], "verdict": verdict,
               "seed": args.seed, "metadata": _metadata(args)}, args.output)
    return EXIT_OK


def cmd_toy_opt(args):
    from .optimizers import TOY_OPTIMUM, run_toy_quadratic

    variants = [args.variant] if args.variant else ["adam", "adamw", "anchored_adamw"]
    for v in variants:
        tr = run_toy_quadratic(v, args.lam, steps=args.steps, lr=args.lr)
        x, y = tr.final
        print(f"{v:15s} lam={args.lam:g}  final ({x:.4f}, {y:.4f})  f={tr.values[-1]:.4g}  "
              f"dist to optimum {np.linalg.norm(tr.final - TOY_OPTIMUM):.4f}")
        if args.output:
            path = Path(args.output)
            if len(variants) > 1:
                path.mkdir(parents=True, exist_ok=True)
                path = path / f"{v}.csv"
            tr.to_csv(path)
    return EXIT_OK


def _slice_rows(res, xs, key, fixed, runs):
    """Predictions along one covariate with the other two held at ``fixed``."""
    rows = []
    for x in xs:
        cov = dict(fixed)
        cov[key] = x
        pred = float(evaluate(res.family, res.params, cov["n"], cov["d"], cov["p"]))
        obs = ""
        if runs is not None:
            hits = [r for r in runs if r.n_params == cov["n"] and r.dft_tokens == cov["d"] and r.p == cov["p"]]
            if hits:
                col = "min_val_ft_loss" if res.family.value in ("additive_nd", "multiplicative_ft") else "pt_loss_at_min"
                obs = repr(float(np.mean([getattr(r, col) for r in hits])))
        rows.append((x, pred, obs))
    return rows


def cmd_report(args):
    from .surrogate import P_GRID, TOKEN_GRID

    if not args.input:
        raise InputError("--input (a fit JSON) is required")
    res = _load_fit(args.input)
    runs = _load_runs(args.runs) if args.runs else None
    if res.family is LawFamily.FORGETTING_ADDITIVE_DELTA:
        raise InputError("reports cover loss laws, not the additive-delta rise")
    sizes = [m.n_params for m in MODELS]
    fixed = {"n": args.n or 334_000_000, "d": args.tokens or 3_000_000, "p": 0.01 if args.p is None else args.p}
    if needs_l0(res.family) and fixed["n"] not in (res.params.l0_pt or {}):
        raise InputError(f"the fit has no baseline for n={fixed['n']}")
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    slices = {"n": sizes, "d": list(TOKEN_GRID), "p": list(P_GRID)}
    written = []
    for key, xs in slices.items():
        path = out / f"{res.family.value}_{key}_slice.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "predicted", "observed"])
            for x, y, o in _slice_rows(res, xs, key, fixed, runs):
                w.writerow([repr(x) if isinstance(x, float) else int(x), repr(y), o])
        written.append(str(path))
    _dump({"family": res.family.value, "fixed": fixed, "files": [Path(p).name for p in written],
           "metadata": _metadata(args)}, out / f"{res.family.value}_report.json")
    print("\n".join(written))
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "bootstrap": cmd_bootstrap,
    "extrapolate": cmd_extrapolate,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "ucurve": cmd_ucurve,
    "mix-stats": cmd_mix_stats,
    "toy-opt": cmd_toy_opt,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    families = [f.value for f in LawFamily]
    ap = argparse.ArgumentParser(prog="scalelab", description="Fit and evaluate finetuning/forgetting scaling laws.")
    ap.add_argument("--version", action="version", version=f"scalelab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, fitting=False, family=False):
        p.add_argument("--input", help="input file")
        p.add_argument("--output", help="output file or directory")
        p.add_argument("--seed", type=int, default=0)
        if family:
            p.add_argument("--family", choices=families, required=True)
            p.add_argument("--l0-table", help="JSON mapping n_params -> baseline pretraining loss")
            p.add_argument("--l0-preset", choices=["rewarmed", "terminal"], help="built-in baseline table")
        if fitting:
            p.add_argument("--huber-delta", type=float)
            p.add_argument("--max-iterations", type=int)
            p.add_argument("--grad-tolerance", type=float)
            p.add_argument("--init-grid", help="JSON mapping coordinate -> list of starting values")
            p.add_argument("--bound", action="append", metavar="NAME:LO:HI")

    common(sub.add_parser("fit", help="fit a law family to runs.jsonl"), True, True)

    p = sub.add_parser("bootstrap", help="bootstrapped MRE of a law family")
    common(p, True, True)
    p.add_argument("--reps", type=int, default=128)
    p.add_argument("--resample-size", type=int)
    p.add_argument("--rep-csv", help="write per-repetition MREs as CSV")

    p = sub.add_parser("extrapolate", help="fit on small models / few tokens, score on the rest")
    common(p, True, True)
    p.add_argument("--setup", choices=["A", "B"])

    for name, hlp in (("predict", "evaluate a fitted law"), ("report", "CSV slices of a fitted law")):
        p = sub.add_parser(name, help=hlp)
        common(p)
        p.add_argument("--runs", help="runs.jsonl to predict or to attach as observations")
        p.add_argument("--n", type=int, help="parameter count")
        p.add_argument("--tokens", type=int, help="finetuning tokens")
        p.add_argument("--p", type=float, default=None if name == "report" else 0.0)

    p = sub.add_parser("simulate", help="synthetic run grid or loss curve")
    common(p)
    p.add_argument("--domain", default="arxiv")
    p.add_argument("--grid-preset", choices=["grid125", "ift"], default="grid125")
    p.add_argument("--noise-sigma", type=float, default=0.005)
    p.add_argument("--curve", action="store_true", help="emit one loss curve instead of a grid")
    p.add_argument("--n", type=int)
    p.add_argument("--tokens", type=int)
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--l-start", type=float, default=3.5, help="finetuning loss at step 0 (curves)")
    p.add_argument("--curve-noise", type=float, default=0.0)

    common(sub.add_parser("ucurve", help="bottom of a finetuning loss curve"))

    p = sub.add_parser("mix-stats", help="observed injection fraction vs the binomial band")
    common(p)
    p.add_argument("--p", type=float)
    p.add_argument("--n", type=int, default=1_000_000)

    p = sub.add_parser("toy-opt", help="Adam / AdamW / Anchored AdamW on a 2-D quadratic")
    common(p)
    p.add_argument("--variant", choices=["adam", "adamw", "anchored_adamw"])
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    return ap


def main(argv=None) -> int:
    from .fitting import FitError

    args = build_parser().parse_args(argv)
    if args.command == "mix-stats" and args.p is None and not args.input:
        args.p = 0.01
    try:
        return COMMANDS[args.command](args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FitError as e:
        print(f"error: {e}", file=sys.stderr)
        for d in e.diagnostics:
            print(f"  start {d.index} x0={d.x0}: {d.message}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
