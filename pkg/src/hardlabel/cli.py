"""Single entry point: run attacks, campaigns, studies, and the oracle service.

Exit codes: 0 success, 2 attack precondition or configuration failure,
3 transport failure, 4 infeasible evaluation protocol, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .core import Criterion, Image, l2_distance
from .errors import (
    ConfigError,
    DegenerateStartError,
    InvalidEndpointsError,
    ProtocolInfeasibleError,
    QueryBudgetExceeded,
    ShapeError,
    TransportError,
)
from .fileformats import load_image, load_mlp, save_image
from .harness import (
    SUMMARY_COLUMNS,
    ProtocolConfig,
    ProtocolMode,
    enumerate_pairs,
    read_summary_csv,
    run_attack,
    run_campaign,
    start_sensitivity_rows,
    synthesize_dataset,
    write_report,
)
from .metrics import (
    perturbation_heat_map,
    phm_to_csv,
    phm_to_text,
    summarize,
    write_traces_ndjson,
)
from .oracles import (
    Oracle,
    PLATEAU_PRESETS,
    ToyModel2D,
    default_toy_endpoints,
    plateau_model,
    toy_optimal_distortion,
)
from .presets import ATTACK_NAMES, AttackSettings, preset
from .server import OracleService, RemoteOracle

SUMMARY_SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; we want 64
        raise UsageError(message)


# ---------------------------------------------------------------------------
# TOML-style config files (sections of key = value lines)


def parse_config_text(text: str) -> dict[str, dict]:
    """Parse the supported key = value subset with [section] headers."""
    out: dict[str, dict] = {"": {}}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[section][key] = _parse_scalar(value)
    return out


def _parse_scalar(text: str):
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


_STEP_KEYS = (
    "directions_per_estimate", "probe_radius", "binary_search_tol",
    "initial_step_scale",
)
_BD_KEYS = (
    "half_width", "blocks_per_craft", "lam", "percentile", "window_T",
    "epsilon_s",
)
_STAGE_KEYS = (
    "stage1_window_hsja", "stage1_window_sopt", "stage3_window",
    "ge_epsilon_s", "epsilon_r", "init_tol",
)


def apply_config(settings: AttackSettings, cfg: dict[str, dict]) -> AttackSettings:
    if "preset" in cfg.get("", {}):
        settings = preset(str(cfg[""]["preset"]))
    for section, attr in (("signopt", "sopt"), ("hopskipjump", "hsj"), ("boundary", "boundary")):
        overrides = {
            k: v for k, v in cfg.get(section, {}).items() if k in _STEP_KEYS
        }
        unknown = set(cfg.get(section, {})) - set(_STEP_KEYS)
        if unknown:
            raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
        if overrides:
            settings = replace(settings, **{attr: replace(getattr(settings, attr), **overrides)})
    bd_section = cfg.get("blockdescent", {})
    unknown = set(bd_section) - set(_BD_KEYS)
    if unknown:
        raise ConfigError(f"[blockdescent]: unknown keys {sorted(unknown)}")
    if bd_section:
        settings = replace(settings, bd=replace(settings.bd, **bd_section))
    stage_section = cfg.get("stages", {})
    unknown = set(stage_section) - set(_STAGE_KEYS)
    if unknown:
        raise ConfigError(f"[stages]: unknown keys {sorted(unknown)}")
    if stage_section:
        settings = replace(settings, **stage_section)
    return settings


def load_settings(preset_name: str, config_path: str | None) -> AttackSettings:
    settings = preset(preset_name)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            settings = apply_config(settings, parse_config_text(fh.read()))
    return settings


# ---------------------------------------------------------------------------
# Oracle and image resolution


def build_oracle(spec: str) -> Oracle:
    if spec == "toy":
        return ToyModel2D()
    if spec.startswith("mlp:"):
        return load_mlp(spec[len("mlp:"):])
    if spec.startswith("remote:"):
        return RemoteOracle(spec[len("remote:"):])
    if spec.startswith("plateau:"):
        return plateau_model(spec[len("plateau:"):])
    if spec == "plateau":
        return plateau_model()
    raise UsageError(
        f"unknown oracle spec {spec!r}; use toy, mlp:<path>, remote:<url>, "
        f"or plateau:<{'|'.join(sorted(PLATEAU_PRESETS))}>"
    )


def default_preset_for(oracle_spec: str) -> str:
    if oracle_spec == "toy":
        return "toy"
    if oracle_spec.startswith("plateau"):
        return "plateau"
    return "cifar-scale"


def _plateau_builtin(oracle: Oracle, label: int, index: int) -> Image:
    from .oracles import QuantizedDetectorModel

    if not isinstance(oracle, QuantizedDetectorModel):
        raise UsageError("builtin:<label>:<index> images need a plateau oracle")
    if not 0 <= label < oracle.class_count:
        raise UsageError(f"label {label} out of range [0, {oracle.class_count})")
    c, w, h = oracle.dims
    rng = np.random.default_rng([777, label, index])
    if label < oracle.detector_count:
        arr = np.clip(oracle.templates[label] + rng.normal(0.0, 0.08, c * w * h), 0.0, 1.0)
    else:
        arr = rng.uniform(0.0, 1.0, c * w * h)
    return Image(arr, c, w, h)


def resolve_source(spec: str, oracle: Oracle, oracle_spec: str) -> Image:
    if spec == "builtin":
        if oracle_spec == "toy":
            source, _ = default_toy_endpoints()
            return source
        raise UsageError("--source builtin is only defined for the toy oracle")
    if spec.startswith("builtin:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError("--source builtin:<label>:<index>")
        return _plateau_builtin(oracle, int(parts[1]), int(parts[2]))
    return load_image(spec)


def resolve_start(
    spec: str, oracle: Oracle, oracle_spec: str, criterion: Criterion
) -> Image | None:
    if spec == "auto":
        if criterion.targeted and oracle_spec.startswith("plateau"):
            for idx in range(200):
                img = _plateau_builtin(oracle, criterion.reference_label, 1000 + idx)
                if oracle.decide(img) == criterion.reference_label:
                    return img
            raise InvalidEndpointsError(
                f"no correctly classified start found for class {criterion.reference_label}"
            )
        if criterion.targeted:
            raise UsageError("--start auto for targeted mode needs a plateau oracle")
        return None  # untargeted: synthesized inside the attack
    if spec == "builtin":
        if oracle_spec == "toy":
            _, start = default_toy_endpoints()
            return start
        raise UsageError("--start builtin is only defined for the toy oracle")
    if spec.startswith("builtin:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError("--start builtin:<label>:<index>")
        return _plateau_builtin(oracle, int(parts[1]), int(parts[2]))
    return load_image(spec)


def parse_mode(spec: str) -> Criterion | None:
    """Criterion from the flag; None means untargeted with inferred label."""
    if spec == "untargeted":
        return None  # ground truth comes from the oracle's decision on the source
    if spec.startswith("untargeted:"):
        return Criterion(targeted=False, reference_label=int(spec.split(":", 1)[1]))
    if spec.startswith("targeted:"):
        return Criterion(targeted=True, reference_label=int(spec.split(":", 1)[1]))
    raise UsageError(f"unknown mode {spec!r}; use targeted:<k> or untargeted[:<y>]")


# ---------------------------------------------------------------------------
# Commands


def cmd_attack(args) -> int:
    oracle = build_oracle(args.oracle)
    settings = load_settings(args.preset or default_preset_for(args.oracle), args.config)
    criterion = parse_mode(args.mode)
    source = resolve_source(args.source, oracle, args.oracle)
    if criterion is None:
        criterion = Criterion(targeted=False, reference_label=oracle.decide(source))
    start = resolve_start(args.start, oracle, args.oracle, criterion)
    rng = np.random.default_rng(args.seed)

    os.makedirs(args.out, exist_ok=True)
    best, trace = run_attack(
        args.attack, oracle, source, start, criterion, settings, args.budget, rng,
        pair_id=f"{args.attack}-seed{args.seed}",
    )
    final = l2_distance(source, best)
    stage_first: dict[str, int] = {}
    for rec in trace.records:
        stage_first.setdefault(rec.stage.value, rec.query_index)
    write_traces_ndjson(os.path.join(args.out, "trace.ndjson"), [trace])
    save_image(best, os.path.join(args.out, "adversarial.img"))
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "kind": "attack-summary",
        "attack": args.attack,
        "oracle": args.oracle,
        "mode": args.mode,
        "seed": args.seed,
        "budget": args.budget,
        "final_distortion": final,
        "queries_used": trace.queries_used,
        "stage_tags": sorted({rec.stage.value for rec in trace.records}),
        "stage_first_query": stage_first,
    }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"final distortion {final:.6f} after {trace.queries_used} queries")
    return 0


def cmd_eval(args) -> int:
    if args.oracle.startswith("remote:"):
        raise UsageError("eval campaigns need a local oracle factory")
    oracle_factory = lambda: build_oracle(args.oracle)  # noqa: E731
    settings = load_settings(args.preset or default_preset_for(args.oracle), args.config)
    mode = ProtocolMode(args.protocol)
    cfg = ProtocolConfig(
        mode=mode,
        n_source_classes=args.sources,
        n_samples_per_class=args.samples,
        m_targets_per_group=args.targets,
        starts_per_pair=args.starts,
        budget=args.budget,
        hard_threshold=args.hard_threshold,
        master_seed=args.master_seed,
    )
    probe = oracle_factory()
    dataset = synthesize_dataset(probe, args.per_class, args.master_seed, noise=args.noise)
    pairs = enumerate_pairs(cfg, dataset, oracle_factory())
    eps_grid = tuple(float(v) for v in args.eps.split(",") if v)
    report = run_campaign(
        dataset, pairs, args.attack, oracle_factory, args.budget, settings,
        eps_grid=eps_grid, hard_threshold=args.hard_threshold,
        master_seed=args.master_seed, workers=args.workers,
    )
    write_report(report, args.out)
    if mode == ProtocolMode.START_SENSITIVITY:
        rows = start_sensitivity_rows(report)
        path = os.path.join(args.out, "start_sensitivity.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("source_id,mean_final,std_final\n")
            for source_id, mean, std in rows:
                fh.write(f"{source_id},{mean!r},{std!r}\n")
    agg = report.aggregates()
    print(
        f"{len(pairs)} pairs, attack {args.attack}: "
        f"mean={agg['mean']} median={agg['median']} hard={agg['hard_count']}"
    )
    return 0


def cmd_hardset(args) -> int:
    path = args.report
    if os.path.isdir(path):
        path = os.path.join(path, "summary.csv")
    rows = read_summary_csv(path)
    kept = [r for r in rows if float(r["final_distortion"]) >= args.threshold]
    lines = [",".join(SUMMARY_COLUMNS)]
    for r in kept:
        lines.append(",".join(r[k] for k in SUMMARY_COLUMNS))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_phm(args) -> int:
    source = load_image(args.source)
    adv = load_image(args.adversarial)
    grid = perturbation_heat_map(source, adv)
    text = phm_to_text(grid) if args.format == "text" else phm_to_csv(grid)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_toystudy(args) -> int:
    attacks = [a.strip() for a in args.attacks.split(",") if a.strip()]
    for attack in attacks:
        if attack not in ATTACK_NAMES:
            raise UsageError(f"unknown attack {attack!r}")
    settings = load_settings(args.preset or "toy", args.config)
    source, start = default_toy_endpoints()
    criterion = Criterion(targeted=True, reference_label=1)
    optimum = toy_optimal_distortion(source)

    lines = ["attack,success_rate,mean_final,median_final"]
    for attack in attacks:
        finals = []
        for run in range(args.runs):
            oracle = ToyModel2D()
            rng = np.random.default_rng([args.seed, run])
            best, _ = run_attack(
                attack, oracle, source, start, criterion, settings, args.budget, rng,
                pair_id=f"{attack}-{run}",
            )
            finals.append(l2_distance(source, best))
        successes = sum(1 for f in finals if f <= optimum + args.tol)
        mean, median, _ = summarize(finals)
        lines.append(f"{attack},{successes / len(finals)!r},{mean!r},{median!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    sys.stdout.write(f"# derived optimum: {optimum!r} (tolerance {args.tol})\n")
    return 0


def cmd_serve(args) -> int:
    oracle = build_oracle(args.oracle)
    host, _, port = args.bind.partition(":")
    service = OracleService(
        oracle, host or "127.0.0.1", int(port or 0), rate_limit_qps=args.rate_limit
    )
    print(f"serving {args.oracle} at {service.endpoint}", flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> Parser:
    parser = Parser(prog="hardlabel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("attack", help="run one attack and write its artifacts")
    p.add_argument("--attack", required=True, choices=ATTACK_NAMES)
    p.add_argument("--oracle", required=True,
                   help="toy | mlp:<path> | remote:<url> | plateau:<preset>")
    p.add_argument("--source", default="builtin",
                   help="image descriptor path | builtin | builtin:<label>:<idx>")
    p.add_argument("--start", default="builtin",
                   help="image descriptor path | builtin | builtin:<label>:<idx> | auto")
    p.add_argument("--mode", default="targeted:1",
                   help="targeted:<k> | untargeted:<y>")
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", default=None, choices=("toy", "plateau", "cifar-scale", "imagenet-scale"))
    p.add_argument("--config", default=None, help="TOML-style hyperparameter overrides")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="run an evaluation campaign")
    p.add_argument("--protocol", required=True,
                   choices=[m.value for m in ProtocolMode])
    p.add_argument("--oracle", required=True)
    p.add_argument("--attack", required=True, choices=ATTACK_NAMES)
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--sources", type=int, default=4, help="N source classes")
    p.add_argument("--samples", type=int, default=2, help="n samples per class")
    p.add_argument("--targets", type=int, default=3, help="m targets per group")
    p.add_argument("--starts", type=int, default=1, help="p starts per pair")
    p.add_argument("--per-class", type=int, default=12, dest="per_class")
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--eps", default="0.3,0.6,0.9", help="ASR epsilon grid")
    p.add_argument("--hard-threshold", type=float, default=0.9, dest="hard_threshold")
    p.add_argument("--master-seed", type=int, default=0, dest="master_seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--preset", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hardset", help="filter a campaign summary by threshold")
    p.add_argument("--report", required=True, help="summary.csv or its directory")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_hardset)

    p = sub.add_parser("phm", help="perturbation heat map of an adversarial image")
    p.add_argument("--source", required=True)
    p.add_argument("--adversarial", required=True)
    p.add_argument("--format", default="csv", choices=("csv", "text"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_phm)

    p = sub.add_parser("toystudy", help="seeded attack comparison on the 2-D toy victim")
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--attacks", default="boundary,signopt,hsj,rambo-sopt")
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_toystudy)

    p = sub.add_parser("serve", help="expose an oracle over HTTP")
    p.add_argument("--oracle", required=True)
    p.add_argument("--bind", default="127.0.0.1:8710")
    p.add_argument("--rate-limit", type=float, default=None, dest="rate_limit")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 64
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 64
    except (ConfigError, InvalidEndpointsError, DegenerateStartError,
            QueryBudgetExceeded, ShapeError) as exc:
        print(f"attack precondition failed: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return 3
    except ProtocolInfeasibleError as exc:
        print(f"protocol infeasible: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
