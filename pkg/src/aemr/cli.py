"""Command-line entry points.

Subcommands:

* ``match``: read a CSV dataset (plus optional holdout), run the
  matching engine, and write matched groups, per-unit effect estimates,
  the iteration trace, and the resolved weights into an output
  directory. Output files are written with fixed field order, ``\\n``
  line endings, and shortest round-trip float formatting, so repeated
  runs with the same inputs produce byte-identical files; the manifest
  (which records wall-clock timing and file digests) is the one
  deliberately non-reproducible output.
* ``simulate``: generate one of the built-in synthetic scenarios to CSV.
* ``importance``: permutation-importance scores for a holdout CSV.
* ``oracle-check``: run the engine against the brute-force oracles on
  seeded random instances; exits nonzero on any disagreement.
* ``bench``: time the engine against the enumeration oracle.

Exit codes: 0 on success, 1 when the run itself fails (validation
issues, oracle mismatches), 2 for unusable arguments or inputs.

A config file of ``key = value`` lines can pre-set any long option of
``match`` (keys use underscores); explicit command-line flags win over
the file. ``--threads`` falls back to the AEMR_THREADS environment
variable and controls only how many oracle-check instances run in
parallel.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    ConfigError,
    CovariateSpec,
    Dataset,
    MatchingError,
    validate_dataset,
)
from .engine import EngineConfig, MatchResult, run
from .estimate import ate, estimate_cates
from .holdout import permutation_importance, weights_from_importance
from .oracle import brute_enumerate, check_engine_against_oracles
from .synthgen import (
    exp_decay_scenario,
    imbalance_scenario,
    irrelevant_scenario,
    missing_scenario,
    noise_scenario,
    random_categorical_instance,
)

__all__ = ["main"]

_MISSING_TOKENS = {"", "NA", "na", "NaN", "nan", "?"}


def _fmt_float(x: Optional[float]) -> str:
    if x is None:
        return ""
    return repr(float(x))


# ---------------------------------------------------------------- CSV I/O


def read_dataset_csv(
    path: str, treatment_col: str = "treatment", outcome_col: str = "outcome"
) -> Dataset:
    """Load a dataset from CSV with one covariate per remaining column.

    Covariate cells are treated as opaque labels and encoded to dense
    codes in sorted label order (numeric order when every label parses
    as an integer). Cells equal to one of the missing tokens get a
    dedicated sentinel code per covariate and are recorded in the
    missing mask. Treatment must be 0/1 and the outcome numeric.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file")
        rows = [r for r in reader if r]
    for col in (treatment_col, outcome_col):
        if col not in header:
            raise ConfigError(f"{path}: missing required column {col!r}")
    t_idx = header.index(treatment_col)
    y_idx = header.index(outcome_col)
    cov_idx = [i for i in range(len(header)) if i not in (t_idx, y_idx)]
    if not cov_idx:
        raise ConfigError(f"{path}: no covariate columns")
    for r in rows:
        if len(r) != len(header):
            raise ConfigError(f"{path}: ragged row with {len(r)} fields")

    n = len(rows)
    try:
        treatment = np.array([int(r[t_idx]) for r in rows], dtype=np.int8)
        outcome = np.array([float(r[y_idx]) for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"{path}: bad treatment/outcome value: {exc}")

    codes = np.zeros((n, len(cov_idx)), dtype=np.int64)
    missing = np.zeros((n, len(cov_idx)), dtype=bool)
    specs = []
    label_maps = []
    any_missing = False
    for j, ci in enumerate(cov_idx):
        raw = [r[ci] for r in rows]
        observed = sorted({v for v in raw if v not in _MISSING_TOKENS})
        if observed and all(_is_int(v) for v in observed):
            observed.sort(key=int)
        has_missing = any(v in _MISSING_TOKENS for v in raw)
        any_missing = any_missing or has_missing
        code_of = {v: c for c, v in enumerate(observed)}
        sentinel = len(observed)
        arity = len(observed) + (1 if has_missing else 0)
        arity = max(arity, 2)  # constant columns still need a two-value alphabet
        for i, v in enumerate(raw):
            if v in _MISSING_TOKENS:
                codes[i, j] = sentinel
                missing[i, j] = True
            else:
                codes[i, j] = code_of[v]
        specs.append(CovariateSpec(header[ci], arity))
        label_maps.append({c: v for v, c in code_of.items()})
    return Dataset(
        specs,
        codes,
        treatment,
        outcome,
        missing_mask=missing if any_missing else None,
        label_maps=label_maps,
    )


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def write_dataset_csv(path: str, d: Dataset) -> None:
    """Inverse of :func:`read_dataset_csv`; missing cells become empty fields."""
    names = d.covariate_names()
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + ["treatment", "outcome"])
        for i in range(d.n):
            row = []
            for j in range(d.p):
                if d.missing_mask is not None and d.missing_mask[i, j]:
                    row.append("")
                else:
                    code = int(d.codes[i, j])
                    if d.label_maps is not None:
                        row.append(d.label_maps[j].get(code, str(code)))
                    else:
                        row.append(str(code))
            row.append(str(int(d.treatment[i])))
            row.append(_fmt_float(d.outcome[i]))
            w.writerow(row)


def read_weights_csv(path: str, names: Sequence[str]) -> np.ndarray:
    """Weights CSV with header ``covariate,weight``; must cover every covariate."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["covariate", "weight"]:
            raise ConfigError(f"{path}: expected header 'covariate,weight'")
        table = {}
        for r in reader:
            if not r:
                continue
            try:
                table[r[0]] = float(r[1])
            except (IndexError, ValueError):
                raise ConfigError(f"{path}: bad weight row {r!r}")
    missing = [nm for nm in names if nm not in table]
    if missing:
        raise ConfigError(f"{path}: no weight for covariates {missing}")
    return np.array([table[nm] for nm in names], dtype=np.float64)


# ------------------------------------------------------------- run output


def write_groups_jsonl(path: str, result: MatchResult) -> None:
    with open(path, "w", newline="\n") as fh:
        for g in result.groups:
            obj = {
                "group_id": list(g.group_id),
                "retained": list(g.retained.members),
                "key_values": list(g.key_values),
                "members": list(g.members),
                "main_members": list(g.main_members),
                "aux_members": list(g.aux_members),
                "n_treated": g.n_treated,
                "n_control": g.n_control,
            }
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def write_trace_csv(path: str, result: MatchResult) -> None:
    cols = [
        "iteration",
        "dropped",
        "retained_weight",
        "pe",
        "bf",
        "mq",
        "n_groups",
        "n_new_treated",
        "n_new_control",
        "n_unmatched_treated",
        "n_unmatched_control",
    ]
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in result.trace:
            w.writerow(
                [
                    r.iteration,
                    " ".join(str(j) for j in r.dropped.members),
                    _fmt_float(r.retained_weight),
                    _fmt_float(r.pe),
                    _fmt_float(r.bf),
                    _fmt_float(r.mq),
                    r.n_groups,
                    r.n_new_treated,
                    r.n_new_control,
                    r.n_unmatched_treated,
                    r.n_unmatched_control,
                ]
            )


def write_cates_csv(path: str, records) -> None:
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            [
                "unit_id",
                "treated",
                "group_iteration",
                "group_rank",
                "cate",
                "n_group_treated",
                "n_group_control",
            ]
        )
        for r in records:
            w.writerow(
                [
                    r.unit_id,
                    int(r.treated),
                    r.group_id[0],
                    r.group_id[1],
                    _fmt_float(r.cate),
                    r.n_group_treated,
                    r.n_group_control,
                ]
            )


def write_weights_csv(path: str, names: Sequence[str], weights: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "weight"])
        for nm, wt in zip(names, weights):
            w.writerow([nm, _fmt_float(wt)])


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, result: MatchResult, extra: dict) -> None:
    files = {}
    for p in sorted(out_dir.iterdir()):
        if p.name == "manifest.json" or not p.is_file():
            continue
        files[p.name] = {"sha256": _sha256(p), "bytes": p.stat().st_size}
    manifest = {
        "files": files,
        "stop_reason": result.stop_reason,
        "iterations": len(result.trace),
        "n_groups": len(result.groups),
        "timing_seconds": result.timing_seconds,
    }
    manifest.update(extra)
    with open(out_dir / "manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ------------------------------------------------------------ subcommands


def _load_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip().strip("'\"")
    return out


_CONFIG_COERCERS = {
    "mode": str,
    "tradeoff_c": float,
    "ridge_lambda": float,
    "shuffles": int,
    "seed": int,
    "max_iterations": int,
    "max_pe_degradation": float,
    "max_balance_gap": float,
    "early_stop_weight": float,
    "missing": lambda s: s.lower() in ("1", "true", "yes", "on"),
    "treatment_col": str,
    "outcome_col": str,
}


def _apply_config_defaults(parser: argparse.ArgumentParser, cfg: dict[str, str]) -> None:
    converted = {}
    for key, raw in cfg.items():
        coerce = _CONFIG_COERCERS.get(key)
        if coerce is None:
            raise ConfigError(f"config file: unknown key {key!r}")
        try:
            converted[key] = coerce(raw)
        except ValueError:
            raise ConfigError(f"config file: bad value for {key!r}: {raw!r}")
    # subcommands parse into a fresh namespace, so defaults set on the
    # top-level parser never reach them; push onto each subparser instead
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                sub.set_defaults(**converted)


def _engine_config_from_args(args, weights) -> EngineConfig:
    return EngineConfig(
        mode=args.mode,
        weights=weights,
        tradeoff_c=args.tradeoff_c,
        max_pe_degradation_fraction=args.max_pe_degradation,
        max_balance_ratio_gap=args.max_balance_gap,
        max_iterations=args.max_iterations,
        early_stop_before_important=args.early_stop_weight,
        missing_enabled=args.missing,
        ridge_lambda=args.ridge_lambda,
        importance_shuffles=args.shuffles,
        seed=args.seed,
    )


def cmd_match(args) -> int:
    d = read_dataset_csv(args.data, args.treatment_col, args.outcome_col)
    issues = validate_dataset(d)
    if issues:
        for msg in issues:
            print(f"invalid data: {msg}", file=sys.stderr)
        return 1
    holdout = None
    if args.holdout:
        holdout = read_dataset_csv(args.holdout, args.treatment_col, args.outcome_col)
        h_issues = validate_dataset(holdout)
        if h_issues:
            for msg in h_issues:
                print(f"invalid holdout: {msg}", file=sys.stderr)
            return 1
    weights = None
    if args.weights:
        weights = read_weights_csv(args.weights, d.covariate_names())

    config = _engine_config_from_args(args, weights)
    result = run(d, config, holdout)
    records = estimate_cates(d, result)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_groups_jsonl(str(out / "groups.jsonl"), result)
    write_trace_csv(str(out / "trace.csv"), result)
    write_cates_csv(str(out / "cates.csv"), records)
    write_weights_csv(str(out / "weights.csv"), d.covariate_names(), result.weights)
    write_manifest(
        out,
        result,
        {
            "data": os.path.abspath(args.data),
            "holdout": os.path.abspath(args.holdout) if args.holdout else None,
            "mode": args.mode,
            "seed": args.seed,
        },
    )

    n_t = d.n_treated()
    matched_t = result.state.n_matched_treated()
    print(f"matched {matched_t}/{n_t} treated and "
          f"{result.state.n_matched_control()}/{d.n_control()} control units")
    print(f"{len(result.groups)} groups over {len(result.trace)} iterations "
          f"(stop: {result.stop_reason})")
    treated_records = [r for r in records if r.treated]
    if treated_records:
        print(f"average effect on the matched treated: {ate(records):.6g}")
    print(f"outputs in {out}")
    return 0


def cmd_simulate(args) -> int:
    builders = {
        "irrelevant": irrelevant_scenario,
        "exp_decay": exp_decay_scenario,
        "imbalance": imbalance_scenario,
        "noise": noise_scenario,
        "missing": missing_scenario,
    }
    builder = builders[args.scenario]
    kwargs = {"seed": args.seed}
    if args.n_control is not None:
        kwargs["n_control"] = args.n_control
    if args.n_treated is not None:
        kwargs["n_treated"] = args.n_treated
    scenario = builder(**kwargs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(str(out / "data.csv"), scenario.data)
    write_dataset_csv(str(out / "holdout.csv"), scenario.holdout)
    with open(out / "true_cates.csv", "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "true_cate"])
        for i, v in enumerate(scenario.true_cate):
            w.writerow([i, _fmt_float(v)])
    with open(out / "coefficients.json", "w", newline="\n") as fh:
        json.dump(
            {
                "alpha": [float(a) for a in scenario.alpha],
                "beta": [float(b) for b in scenario.beta],
                "U": scenario.U,
                "n_important": scenario.n_important,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    print(
        f"scenario {args.scenario}: n={scenario.data.n} (holdout {scenario.holdout.n}),"
        f" p={scenario.data.p}, outputs in {out}"
    )
    return 0


def cmd_importance(args) -> int:
    holdout = read_dataset_csv(args.holdout, args.treatment_col, args.outcome_col)
    issues = validate_dataset(holdout)
    if issues:
        for msg in issues:
            print(f"invalid holdout: {msg}", file=sys.stderr)
        return 1
    scores = permutation_importance(
        holdout, n_shuffles=args.shuffles, ridge_lambda=args.ridge_lambda,
        seed=args.seed,
    )
    weights = weights_from_importance(scores)
    names = holdout.covariate_names()
    order = sorted(range(len(names)), key=lambda j: (scores[j], names[j]))
    with open(args.out, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "score", "weight"])
        for j in order:
            w.writerow([names[j], _fmt_float(scores[j]), _fmt_float(weights[j])])
    top = ", ".join(names[j] for j in reversed(order[-3:]))
    print(f"wrote {args.out}; most important: {top}")
    return 0


def _check_one_instance(seed: int) -> tuple[int, int, int, list[str]]:
    d, w = random_categorical_instance(seed)
    if os.environ.get("AEMR_TEST_CORRUPT") == "1":
        # sabotage: the oracles score against shifted weights, so a
        # healthy checker must start reporting mismatches
        ow = w.copy()
        ow[int(np.argmax(ow))] += 0.5
        problems = check_engine_against_oracles(d, w, oracle_weights=ow)
    else:
        problems = check_engine_against_oracles(d, w)
    return seed, d.n, d.p, problems


def cmd_oracle_check(args) -> int:
    seeds = [args.seed + i for i in range(args.instances)]
    failures = 0
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_check_one_instance, seeds))
    else:
        results = [_check_one_instance(s) for s in seeds]
    for seed, n, p, problems in results:
        if problems:
            failures += 1
            print(f"seed {seed} (n={n}, p={p}): MISMATCH")
            for msg in problems[:10]:
                print(f"  {msg}")
        elif args.verbose:
            print(f"seed {seed} (n={n}, p={p}): ok")
    print(f"{args.instances - failures}/{args.instances} instances agreed"
          f" with both oracles")
    return 1 if failures else 0


def cmd_bench(args) -> int:
    d, w = random_categorical_instance(
        args.seed, n_range=(args.n, args.n), p_range=(args.p, args.p)
    )
    t0 = time.perf_counter()
    result = run(d, EngineConfig(mode="fixed_weight", weights=w))
    t_engine = time.perf_counter() - t0
    t0 = time.perf_counter()
    brute_enumerate(d, w, p_cap=max(args.p, 16), stop_when_treated_exhausted=False)
    t_brute = time.perf_counter() - t0
    print(f"n={d.n} p={d.p}: engine {t_engine:.3f}s "
          f"({len(result.trace)} iterations), enumeration {t_brute:.3f}s")
    return 0


# ------------------------------------------------------------ arg parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aemr",
        description="Almost-exact matching with replacement on categorical covariates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_cols(p):
        p.add_argument("--treatment-col", default="treatment")
        p.add_argument("--outcome-col", default="outcome")

    m = sub.add_parser("match", help="run the matching engine on a CSV dataset")
    m.add_argument("--data", required=True, help="matching dataset CSV")
    m.add_argument("--holdout", help="holdout CSV for scoring / weight derivation")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--config", help="key = value config file (flags win)")
    m.add_argument("--mode", choices=["fixed_weight", "adaptive_mq"],
                   default="fixed_weight")
    m.add_argument("--weights", help="CSV of covariate,weight rows")
    m.add_argument("--tradeoff-c", type=float, default=1.0,
                   help="balancing-factor coefficient in the quality score")
    m.add_argument("--max-iterations", type=int, default=None)
    m.add_argument("--max-pe-degradation", type=float, default=0.05,
                   help="adaptive: stop when prediction error degrades past "
                        "this fraction of the exact-matching baseline")
    m.add_argument("--max-balance-gap", type=float, default=0.10,
                   help="adaptive: stop when matched fractions of the two "
                        "arms drift further apart than this")
    m.add_argument("--early-stop-weight", type=float, default=None,
                   help="stop before dropping any covariate heavier than this")
    m.add_argument("--missing", action=argparse.BooleanOptionalAction, default=True,
                   help="respect missing values during grouping")
    m.add_argument("--ridge-lambda", type=float, default=0.1)
    m.add_argument("--shuffles", type=int, default=100,
                   help="permutation-importance repeats when deriving weights")
    m.add_argument("--seed", type=int, default=0)
    add_common_cols(m)
    m.set_defaults(func=cmd_match)

    s = sub.add_parser("simulate", help="generate a synthetic scenario to CSV")
    s.add_argument("--scenario", required=True,
                   choices=["irrelevant", "exp_decay", "imbalance", "noise",
                            "missing"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-control", type=int, default=None)
    s.add_argument("--n-treated", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("importance", help="permutation importance for a holdout CSV")
    i.add_argument("--holdout", required=True)
    i.add_argument("--out", required=True, help="output CSV path")
    i.add_argument("--shuffles", type=int, default=100)
    i.add_argument("--ridge-lambda", type=float, default=0.1)
    i.add_argument("--seed", type=int, default=0)
    add_common_cols(i)
    i.set_defaults(func=cmd_importance)

    o = sub.add_parser("oracle-check",
                       help="compare the engine against brute-force oracles")
    o.add_argument("--instances", type=int, default=20)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--threads", type=int,
                   default=int(os.environ.get("AEMR_THREADS", "1")))
    o.add_argument("--verbose", action="store_true")
    o.set_defaults(func=cmd_oracle_check)

    b = sub.add_parser("bench", help="time the engine against enumeration")
    b.add_argument("--n", type=int, default=500)
    b.add_argument("--p", type=int, default=8)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # pre-scan for --config so its values become defaults, then reparse;
    # anything given explicitly on the command line still wins
    if "--config" in argv:
        idx = argv.index("--config")
        if idx + 1 >= len(argv):
            parser.error("--config needs a path")
        try:
            _apply_config_defaults(parser, _load_config_file(argv[idx + 1]))
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MatchingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
