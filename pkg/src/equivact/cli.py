"""Command-line entry point: equivariance audit, calibration sensitivity,
attention check, transfer experiment and dataset codec conversion.

Exit codes: 0 success, 2 check failed (mismatch), 3 inconclusive,
64 usage error, 65 malformed input data.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .report import csv_text, dumps, write_outputs

EXIT_OK = 0
EXIT_MISMATCH = 2
EXIT_INCONCLUSIVE = 3
EXIT_USAGE = 64
EXIT_DATAERR = 65

RANDOMIZED = {"audit", "sensitivity", "attn-check", "transfer"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


# per-subcommand defaults live here so config files can tell "unset" from "default"
DEFAULTS = {
    "common": {"seed": None, "out": "results"},
    "audit": {"trials": 1000},
    "sensitivity": {
        "lever_arms": [round(0.1 * i, 10) for i in range(1, 21)],
        "eps": [0.01],
        "trials": 100,
        "motion": 0.02,
        "relative_angle": 1.0,
    },
    "attn-check": {"tokens": 64, "dim": 32, "trials": 20, "translation_range": 1.0},
    "transfer": {
        "codecs": ["be", "ee", "ce", "ours-robust"],
        "train_eps": 200,
        "fewshot_eps": 20,
        "eval_eps": 50,
        "train_iters": 10000,
        "finetune_iters": 3000,
        "lr": 0.1,
        "finetune_lr": 0.05,
        "batch_size": 256,
        "hidden": 128,
        "ee_translation": False,
        "workers": None,
    },
    "convert": {"input": None, "from_codec": None, "to_codec": None, "output": None},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="RNG seed (required for randomized subcommands)")
    common.add_argument("--out", help="output directory (default: results)")
    common.add_argument("--config", help="JSON file of settings; explicit flags take precedence")

    p = _Parser(prog="equivact", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("audit", parents=[common], help="codec x subgroup equivariance table")
    a.add_argument("--trials", type=int, help="random trials per cell (>= 100, default 1000)")

    s = sub.add_parser("sensitivity", parents=[common], help="objective sensitivity to camera miscalibration")
    s.add_argument("--lever-arms", dest="lever_arms", type=_float_list, help="comma list in meters")
    s.add_argument("--eps", type=_float_list, help="comma list of extrinsic rotation errors (rad)")
    s.add_argument("--trials", type=int, help="random perturbation directions (default 100)")
    s.add_argument("--motion", type=float, help="commanded translation (m)")
    s.add_argument("--relative-angle", dest="relative_angle", type=float, help="commanded rotation (rad)")

    c = sub.add_parser("attn-check", parents=[common], help="pose-embedded attention invariants")
    c.add_argument("--tokens", type=int)
    c.add_argument("--dim", type=int, help="token dimension, multiple of 4")
    c.add_argument("--trials", type=int)
    c.add_argument("--translation-range", dest="translation_range", type=float)

    t = sub.add_parser("transfer", parents=[common], help="train, zero-shot and few-shot transfer")
    t.add_argument("--codecs", type=_str_list)
    t.add_argument("--train-eps", dest="train_eps", type=int)
    t.add_argument("--fewshot-eps", dest="fewshot_eps", type=int)
    t.add_argument("--eval-eps", dest="eval_eps", type=int)
    t.add_argument("--train-iters", dest="train_iters", type=int)
    t.add_argument("--finetune-iters", dest="finetune_iters", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--finetune-lr", dest="finetune_lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--ee-translation", dest="ee_translation", action="store_const", const=True)
    t.add_argument("--workers", type=int, help="parallel codec workers (capped by EQUIVACT_THREADS)")

    v = sub.add_parser("convert", parents=[common], help="re-encode a JSONL dataset between codecs")
    v.add_argument("--in", dest="input", help="input JSONL path")
    v.add_argument("--from", dest="from_codec")
    v.add_argument("--to", dest="to_codec")
    v.add_argument("--output", help="output JSONL path (default: <out>/converted.jsonl)")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge explicit flags over config-file values over defaults."""
    cmd = args.command
    allowed = {**DEFAULTS["common"], **DEFAULTS[cmd]}
    settings = {k: getattr(args, k, None) for k in allowed}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(cfg) - set(allowed))
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        for k, v in cfg.items():
            if settings[k] is None:
                settings[k] = v
    for k, v in allowed.items():
        if settings[k] is None:
            settings[k] = v
    if cmd in RANDOMIZED and settings["seed"] is None:
        raise UsageError(f"{cmd} requires --seed")
    if settings["seed"] is not None:
        seed = settings["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise UsageError("seed must be an integer in [0, 2^64)")
    return settings


def thread_cap() -> int:
    env = os.environ.get("EQUIVACT_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise UsageError(f"EQUIVACT_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise UsageError("EQUIVACT_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands


def cmd_audit(s: dict) -> int:
    from .audit import MIN_TRIALS, InconclusiveClassification, full_classification_table

    trials = int(s["trials"])
    if trials < MIN_TRIALS:
        raise UsageError(f"--trials must be >= {MIN_TRIALS}")
    samples: list = []
    try:
        table = full_classification_table(trials, s["seed"], samples=samples)
    except InconclusiveClassification as exc:
        _log(f"inconclusive: {exc}")
        return EXIT_INCONCLUSIVE
    mismatches = [c for c in table if not c.matches]
    report = {
        "command": "audit",
        "seed": s["seed"],
        "trials": trials,
        "matches_expected": not mismatches,
        "cells": [c.to_dict() for c in table],
    }
    header = ["codec", "subgroup", "trial", "eq_rot_err", "eq_trans_err", "inv_rot_err", "inv_trans_err"]
    rows = [[r[h] for h in header] for r in samples]
    out = s["out"]
    write_outputs({os.path.join(out, "audit.json"): dumps(report) + "\n", os.path.join(out, "audit_trials.csv"): csv_text(header, rows)})
    for c in table:
        flag = "ok" if c.matches else "MISMATCH"
        print(f"{c.codec.value:12s} {c.subgroup.value:12s} {c.verdict.value:12s} {flag}")
    return EXIT_OK if not mismatches else EXIT_MISMATCH


def cmd_sensitivity(s: dict) -> int:
    from .audit import lever_arm_sweep

    levers = [float(x) for x in s["lever_arms"]]
    eps_list = [float(x) for x in s["eps"]]
    if not levers or not eps_list:
        raise UsageError("need at least one lever arm and one eps")
    if any(not L > 0 for L in levers):
        raise UsageError("lever arms must be positive")
    if any(e < 0 for e in eps_list):
        raise UsageError("eps must be non-negative")
    if int(s["trials"]) < 1:
        raise UsageError("--trials must be >= 1")
    rows, fits, ok = [], [], True
    for eps in eps_list:
        sweep = lever_arm_sweep(levers, eps, int(s["trials"]), s["seed"], float(s["motion"]), float(s["relative_angle"]))
        for r in sweep.reports:
            rows.append([r.lever_arm, r.eps, r.objective_delta_full, r.objective_delta_robust])
        checked = eps > 0 and len(levers) >= 2
        passed = sweep.passed if checked else None
        ok = ok and passed is not False
        fits.append(
            {
                "eps": eps,
                "correlation_full": sweep.correlation_full,
                "slope_full": sweep.slope_full,
                "slope_robust": sweep.slope_robust,
                "passed": passed,
            }
        )
        if checked:
            print(f"eps={eps:g}: correlation_full={sweep.correlation_full:.7f} slope_robust={sweep.slope_robust:.3g} {'ok' if passed else 'FAIL'}")
    report = {"command": "sensitivity", "seed": s["seed"], "settings": {k: s[k] for k in DEFAULTS["sensitivity"]}, "fits": fits, "passed": ok}
    out = s["out"]
    write_outputs(
        {
            os.path.join(out, "sensitivity.csv"): csv_text(["lever_arm", "eps", "delta_full", "delta_robust"], rows),
            os.path.join(out, "sensitivity.json"): dumps(report) + "\n",
        }
    )
    return EXIT_OK if ok else EXIT_MISMATCH


def attention_check(tokens: int, dim: int, trials: int, seed: int, translation_range: float = 1.0) -> dict:
    from .attention import AttentionWeights, TokenSet, pose_embedded_attention, sigma
    from .se3 import random_pose

    hom = inv = 0.0
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        A, B = random_pose(rng, translation_range), random_pose(rng, translation_range)
        hom = max(hom, float(np.max(np.abs(sigma(A, dim) @ sigma(B, dim) - sigma(A @ B, dim)))))
        w = AttentionWeights.random(dim, rng)
        poses = [random_pose(rng, translation_range) for _ in range(tokens)]
        ts = TokenSet(rng.standard_normal((tokens, dim)), rng.uniform(-1, 1, (tokens, 2)), poses)
        base = random_pose(rng, translation_range)
        moved = TokenSet(ts.tokens, ts.planes, [base @ p for p in poses])
        inv = max(inv, float(np.max(np.abs(pose_embedded_attention(ts, w) - pose_embedded_attention(moved, w)))))
    return {"sigma_homomorphism_max_err": hom, "base_invariance_max_err": inv}


def cmd_attn_check(s: dict) -> int:
    tokens, dim, trials = int(s["tokens"]), int(s["dim"]), int(s["trials"])
    if dim <= 0 or dim % 4:
        raise UsageError("--dim must be a positive multiple of 4")
    if tokens < 1 or trials < 1:
        raise UsageError("--tokens and --trials must be >= 1")
    res = attention_check(tokens, dim, trials, s["seed"], float(s["translation_range"]))
    ok = res["sigma_homomorphism_max_err"] < 1e-12 and res["base_invariance_max_err"] < 1e-8
    report = {"command": "attn-check", "seed": s["seed"], "tokens": tokens, "dim": dim, "trials": trials, **res, "passed": ok}
    write_outputs({os.path.join(s["out"], "attn_check.json"): dumps(report) + "\n"})
    print(f"sigma homomorphism {res['sigma_homomorphism_max_err']:.3g}, base invariance {res['base_invariance_max_err']:.3g}: {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_MISMATCH


def transfer_pattern(rows) -> dict | None:
    """Qualitative transfer pattern; None when a needed codec was not run."""
    from .codecs import CodecId

    r = {(row.codec, row.condition): row.success_rate for row in rows}
    need = [CodecId.OURS_ROBUST, CodecId.EE, CodecId.BE, CodecId.CE]
    if any((c, "zeroshot") not in r for c in need):
        return None
    checks = {
        "ours_robust_nominal_ge_0.9": r[(CodecId.OURS_ROBUST, "nominal")] >= 0.9,
        "ee_nominal_ge_0.9": r[(CodecId.EE, "nominal")] >= 0.9,
        "ours_robust_zeroshot_ge_0.8": r[(CodecId.OURS_ROBUST, "zeroshot")] >= 0.8,
        "be_zeroshot_le_0.2": r[(CodecId.BE, "zeroshot")] <= 0.2,
        "ee_zeroshot_le_0.2": r[(CodecId.EE, "zeroshot")] <= 0.2,
        "ce_zeroshot_le_0.2": r[(CodecId.CE, "zeroshot")] <= 0.2,
        "ee_fewshot_ge_0.8": r[(CodecId.EE, "fewshot")] >= 0.8,
    }
    return {"checks": checks, "holds": all(checks.values())}


def cmd_transfer(s: dict) -> int:
    from .codecs import CodecId
    from .sim import TransferConfig, transfer_experiment

    try:
        codecs = tuple(CodecId.parse(c) for c in s["codecs"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ints = ["train_eps", "fewshot_eps", "eval_eps", "train_iters", "finetune_iters", "batch_size", "hidden"]
    if any(int(s[k]) < 1 for k in ints) or not codecs:
        raise UsageError("episode counts, iterations, batch size and hidden width must be >= 1")
    cap = thread_cap()
    workers = min(int(s["workers"]) if s["workers"] is not None else cap, cap)
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    cfg = TransferConfig(
        codecs=codecs,
        seed=s["seed"],
        lr=float(s["lr"]),
        finetune_lr=float(s["finetune_lr"]),
        ee_translation=bool(s["ee_translation"]),
        **{k: int(s[k]) for k in ints},
    )
    rows = transfer_experiment(cfg, workers=workers)
    settings = {k: s[k] for k in DEFAULTS["transfer"] if k != "workers"}
    settings["codecs"] = [c.value for c in codecs]
    report = {"command": "transfer", "seed": s["seed"], "settings": settings, "rows": [r.to_dict() for r in rows], "pattern": transfer_pattern(rows)}
    header = ["codec", "condition", "success_rate", "episodes", "seed"]
    out = s["out"]
    write_outputs(
        {
            os.path.join(out, "transfer.json"): dumps(report) + "\n",
            os.path.join(out, "transfer.csv"): csv_text(header, [[r.to_dict()[h] for h in header] for r in rows]),
        }
    )
    for r in rows:
        print(f"{r.codec.value:12s} {r.condition:9s} {r.success_rate:.2f}")
    return EXIT_OK


def convert_record(rec: dict, src, dst) -> dict:
    """Decode ``rec['y']`` with ``src`` and re-encode it with ``dst``."""
    from .codecs import decode, encode, objective_to_vec, vec_to_objective
    from .embodiment import EmbodimentConfig

    if not isinstance(rec, dict) or "m" not in rec or "y" not in rec:
        raise ValueError("record needs 'm' and 'y'")
    m = EmbodimentConfig.from_dict(rec["m"])
    y = np.asarray(rec["y"], dtype=float)
    if y.shape != (10,) or not np.all(np.isfinite(y)):
        raise ValueError("'y' must be 10 finite floats")
    a = decode(src, m, vec_to_objective(y))
    out = dict(rec)
    out["y"] = [float(v) for v in objective_to_vec(encode(dst, m, a))]
    out["codec"] = dst.value
    return out


def cmd_convert(s: dict) -> int:
    import warnings

    from .codecs import CodecId

    for k, flag in (("input", "--in"), ("from_codec", "--from"), ("to_codec", "--to")):
        if not s[k]:
            raise UsageError(f"convert requires {flag}")
    try:
        src, dst = CodecId.parse(s["from_codec"]), CodecId.parse(s["to_codec"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        fh = open(s["input"], encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot open {s['input']}: {exc}") from exc
    lines = []
    with fh, warnings.catch_warnings():
        warnings.simplefilter("ignore")  # clamped grippers are expected in recorded data
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = convert_record(json.loads(line), src, dst)
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{s['input']}:{n}: {exc}") from exc
            lines.append(dumps(rec, indent=None))
    path = s["output"] or os.path.join(s["out"], "converted.jsonl")
    write_outputs({path: "".join(line + "\n" for line in lines)})
    print(f"converted {len(lines)} records {src.value} -> {dst.value}")
    return EXIT_OK


COMMANDS = {
    "audit": cmd_audit,
    "sensitivity": cmd_sensitivity,
    "attn-check": cmd_attn_check,
    "transfer": cmd_transfer,
    "convert": cmd_convert,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = resolve(args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        _log(f"equivact {args.command}: usage error: {exc}")
        return EXIT_USAGE
    except DataError as exc:
        _log(f"equivact {args.command}: bad input: {exc}")
        return EXIT_DATAERR


if __name__ == "__main__":
    sys.exit(main())
