"""Command-line entry point.

Subcommands: synth, extract, train, infer, eval, robustness,
explain-features, explain-nodes.  Every run writes a resolved run-config
JSON next to its outputs, and every artifact embeds the format version plus
the run config hash, so any artifact can be regenerated byte-identically
from its inputs.  Exit codes: 0 success, 1 usage error, 2 data/validation
error.

Options may come from a JSON config file (``--config``); explicit
command-line flags win.  The output directory may be overridden with the
``ARTERYMATCH_OUT_DIR`` environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .dataset import CaseEntry, assign_roles, load_graphs_by_role, write_manifest
from .errors import ArteryMatchError, FileFormatError
from .explain import explain_features, explain_nodes
from .extract import extract_graph
from .features import FeatureConfig
from .fileio import atomic_write_text, read_pgm, write_pgm
from .graphs import save_graph
from .metrics import SWEEP_PROBABILITIES, compute_metrics, robustness_sweep
from .model import load_params, save_params
from .pipeline import InferenceResult, TrainConfig, infer_labels, train
from .rng import derive_seed
from .skeleton import BinaryMask
from .synthetic import TreeGrammarConfig, generate_case

ARTIFACT_FORMAT_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        raise UsageError(message)


# path-valued options are excluded from the run config hash and from the
# serialized copy: artifact bytes must not depend on where inputs or outputs
# happen to live, only on seeds and semantic settings (A matching rerun of
# the same configuration is then byte-identical wherever it runs.)
_PATH_OPTIONS = {
    "out",
    "out_csv",
    "out_json",
    "loss_csv",
    "manifest",
    "model",
    "mask",
    "intensity",
    "predictions",
}


def _run_config_hash(options: dict) -> str:
    hashable = {k: v for k, v in options.items() if k not in _PATH_OPTIONS}
    canonical = json.dumps(hashable, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _write_run_config(out_path: str, subcommand: str, options: dict) -> str:
    payload = {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "subcommand": subcommand,
        "options": {k: v for k, v in options.items() if k not in _PATH_OPTIONS},
    }
    digest = _run_config_hash(options)
    payload["run_config_hash"] = digest
    atomic_write_text(out_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return digest


def _out_dir(path: str) -> str:
    return os.environ.get("ARTERYMATCH_OUT_DIR", "") or path


def _csv_text(rows: list[list[str]], run_config_hash: str) -> str:
    lines = [f"# format_version={ARTIFACT_FORMAT_VERSION} run_config_hash={run_config_hash}"]
    lines += [",".join(row) for row in rows]
    return "\n".join(lines) + "\n"


def _feature_config(args) -> FeatureConfig:
    return FeatureConfig(
        topology=not args.no_topology,
        position=not args.no_position,
        intensity=not args.no_intensity,
    )


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-topology", action="store_true", help="disable topology features")
    p.add_argument("--no-position", action="store_true", help="disable position features")
    p.add_argument("--no-intensity", action="store_true", help="disable intensity features")


def _options_dict(args, skip=("config", "func")) -> dict:
    return {
        k: v for k, v in sorted(vars(args).items()) if k not in skip and not k.startswith("_")
    }


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    out = _out_dir(args.out)
    grammar_fields = {
        "lad_segments": tuple(args.lad_segments),
        "lcx_segments": tuple(args.lcx_segments),
        "d_branch_prob": args.d_branch_prob,
        "om_branch_prob": args.om_branch_prob,
        "jitter": args.jitter,
        "vessel_width": tuple(args.vessel_width),
        "image_size": tuple(args.image_size),
        "lao_prob": args.lao_prob,
        "base_contrast": args.base_contrast,
        "distal_falloff": args.distal_falloff,
        "noise_std": args.noise_std,
    }
    cfg = TreeGrammarConfig(**grammar_fields)
    feature_config = _feature_config(args)
    options = _options_dict(args)
    digest = _write_run_config(os.path.join(out, "run_config.json"), "synth", options)

    cases = []
    for k in range(args.count):
        case_seed = derive_seed(args.seed, "case", k) & 0x7FFFFFFF
        case = generate_case(cfg, case_seed, feature_config)
        case_id = f"case_{k:04d}"
        graph_rel = os.path.join("graphs", f"{case_id}.json")
        mask_rel = os.path.join("masks", f"{case_id}.pgm")
        intensity_rel = os.path.join("masks", f"{case_id}_intensity.pgm")
        save_graph(case.graph, os.path.join(out, graph_rel))
        comment = f"format_version={ARTIFACT_FORMAT_VERSION} run_config_hash={digest}"
        write_pgm(os.path.join(out, mask_rel), case.mask.bits.astype(np.uint8) * 255, comment)
        write_pgm(os.path.join(out, intensity_rel), case.mask.intensity, comment)
        cases.append((case_id, case_seed, case))

    roles = assign_roles(
        [(cid, case.graph.view_angle, case.graph.n) for cid, _, case in cases],
        n_templates=args.n_templates,
        n_test=args.n_test,
        seed=args.seed,
    )
    entries = [
        CaseEntry(
            case_id=cid,
            seed=case_seed,
            view_angle=case.graph.view_angle,
            role=roles[cid],
            graph_path=os.path.join("graphs", f"{cid}.json"),
            mask_path=os.path.join("masks", f"{cid}.pgm"),
            intensity_path=os.path.join("masks", f"{cid}_intensity.pgm"),
            n_nodes=case.graph.n,
        )
        for cid, case_seed, case in cases
    ]
    write_manifest(os.path.join(out, "manifest.json"), entries, args.seed, digest)
    print(f"wrote {len(cases)} cases to {out}")
    return 0


def _cmd_extract(args) -> int:
    root_hint = None
    if args.root:
        try:
            x, y = args.root.split(",")
            root_hint = (float(x), float(y))
        except ValueError:
            raise UsageError(f"--root expects 'x,y', got {args.root!r}")
    bits = read_pgm(args.mask) >= 128
    intensity = read_pgm(args.intensity) if args.intensity else None
    mask = BinaryMask(bits=bits, intensity=intensity)
    graph = extract_graph(
        mask,
        _feature_config(args),
        root_hint=root_hint,
        view_angle=args.view,
        prune_len=args.prune_len,
    )
    save_graph(graph, args.out)
    _write_run_config(args.out + ".run.json", "extract", _options_dict(args))
    print(f"extracted {graph.n} segments -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    options = _options_dict(args)
    digest = _run_config_hash(options)
    _, graphs = load_graphs_by_role(args.manifest, "train")
    config = TrainConfig(
        steps=args.steps,
        lr=args.lr,
        seed=args.seed,
        hidden=args.hidden,
        attention_iters=args.attention_iters,
        conv_iters=args.conv_iters,
        loss_every=args.loss_every,
    )
    names = FeatureConfig().feature_names()
    d = graphs[0].feature_matrix().shape[1] if graphs else 0
    if d != len(names):
        names = [f"feature_{k}" for k in range(d)]
    params, curve = train(graphs, config, feature_names=names)
    save_params(params, args.out, run_config_hash=digest)
    _write_run_config(args.out + ".run.json", "train", options)
    if args.loss_csv:
        rows = [["step", "loss"]] + [[str(s), repr(v)] for s, v in curve]
        atomic_write_text(args.loss_csv, _csv_text(rows, digest))
    final = curve[-1][1] if curve else float("nan")
    print(f"trained {config.steps} steps on {len(graphs)} graphs; final loss {final:.6f}")
    return 0


def _prediction_payload(case_id: str, result: InferenceResult, digest: str) -> dict:
    per_node = []
    for entry in result.per_node:
        node = {
            "node_id": entry.node_id,
            "predicted": entry.predicted,
            "predicted_split": entry.predicted_split,
            "votes": [
                {"label": v.label, "count": v.count, "mean_prob": v.mean_prob}
                for v in entry.votes
            ],
        }
        if entry.true is not None:
            node["true"] = entry.true
        per_node.append(node)
    return {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "run_config_hash": digest,
        "test_case_id": case_id,
        "per_node": per_node,
        "skipped_templates": [
            {"id": tid, "reason": reason} for tid, reason in result.skipped_templates
        ],
    }


def _cmd_infer(args) -> int:
    out = _out_dir(args.out)
    options = _options_dict(args)
    digest = _write_run_config(os.path.join(out, "run_config.json"), "infer", options)
    params, _ = load_params(args.model)
    template_ids, templates = load_graphs_by_role(args.manifest, "template")
    test_ids, tests = load_graphs_by_role(args.manifest, "test")
    selected = set(args.test_id) if args.test_id else None
    written = 0
    for case_id, graph in zip(test_ids, tests):
        if selected is not None and case_id not in selected:
            continue
        result = infer_labels(params, graph, templates, template_ids=template_ids, decode=args.decode)
        payload = _prediction_payload(case_id, result, digest)
        atomic_write_text(
            os.path.join(out, f"{case_id}.json"), json.dumps(payload, indent=2) + "\n"
        )
        written += 1
    print(f"wrote {written} prediction files to {out}")
    return 0


def _load_predictions(paths: list[str]) -> list[tuple[str, str]]:
    outcomes: list[tuple[str, str]] = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        for k, node in enumerate(payload.get("per_node", [])):
            if "true" not in node:
                raise FileFormatError(
                    f"{path}: per_node[{k}] has no 'true' label; cannot evaluate"
                )
            outcomes.append((node["true"], node["predicted"]))
    return outcomes


def _prediction_files(spec: str) -> list[str]:
    if os.path.isdir(spec):
        return sorted(
            os.path.join(spec, name)
            for name in os.listdir(spec)
            if name.endswith(".json") and name != "run_config.json"
        )
    return [spec]


def _cmd_eval(args) -> int:
    paths = []
    for spec in args.predictions:
        paths.extend(_prediction_files(spec))
    if not paths:
        raise FileFormatError("no prediction files found")
    outcomes = _load_predictions(paths)
    report = compute_metrics(outcomes, printed_recall=args.printed_recall)
    options = _options_dict(args)
    digest = _run_config_hash(options)
    if args.out_csv:
        atomic_write_text(args.out_csv, _csv_text(report.csv_rows(), digest))
        _write_run_config(args.out_csv + ".run.json", "eval", options)
    if args.out_json:
        payload = {
            "format_version": ARTIFACT_FORMAT_VERSION,
            "run_config_hash": digest,
            **report.to_json(),
        }
        atomic_write_text(args.out_json, json.dumps(payload, indent=2) + "\n")
    print(
        f"n={report.n} weighted ACC {report.accuracy:.4f} PREC {report.precision:.4f} "
        f"REC {report.recall:.4f} F1 {report.f1:.4f} (micro {report.micro_accuracy:.4f})"
    )
    return 0


def _cmd_robustness(args) -> int:
    options = _options_dict(args)
    digest = _run_config_hash(options)
    params, _ = load_params(args.model)
    template_ids, templates = load_graphs_by_role(args.manifest, "template")
    _, tests = load_graphs_by_role(args.manifest, "test")
    probabilities = tuple(float(p) for p in args.probabilities.split(","))
    reports = robustness_sweep(
        params,
        tests,
        templates,
        probabilities=probabilities,
        seed=args.seed,
        decode=args.decode,
        printed_recall=args.printed_recall,
    )
    rows = [["probability", "class", "metric", "value"]]
    for p in probabilities:
        report = reports[p]
        for cls, m in report.per_class.items():
            for metric, value in (
                ("accuracy", m.accuracy),
                ("precision", m.precision),
                ("recall", m.recall),
                ("f1", m.f1),
            ):
                rows.append([f"{p:g}", cls, metric, f"{value:.4f}"])
        for metric, value in (
            ("accuracy", report.accuracy),
            ("precision", report.precision),
            ("recall", report.recall),
            ("f1", report.f1),
            ("micro_accuracy", report.micro_accuracy),
        ):
            rows.append([f"{p:g}", "weighted", metric, f"{value:.4f}"])
    atomic_write_text(args.out, _csv_text(rows, digest))
    _write_run_config(args.out + ".run.json", "robustness", options)
    print(f"robustness sweep over {len(probabilities)} probabilities -> {args.out}")
    return 0


def _usable_pairs(tests, test_ids, templates, template_ids):
    pairs, ids = [], []
    for tid, test in zip(test_ids, tests):
        for pid, template in zip(template_ids, templates):
            if test.view_angle == template.view_angle and test.n <= template.n:
                pairs.append((test, template))
                ids.append((tid, pid))
    return pairs, ids


def _cmd_explain_features(args) -> int:
    options = _options_dict(args)
    digest = _run_config_hash(options)
    params, _ = load_params(args.model)
    template_ids, templates = load_graphs_by_role(args.manifest, "template")
    test_ids, tests = load_graphs_by_role(args.manifest, "test")
    pairs, pair_ids = _usable_pairs(tests, test_ids, templates, template_ids)
    if args.max_pairs:
        pairs, pair_ids = pairs[: args.max_pairs], pair_ids[: args.max_pairs]
    importance = explain_features(params, pairs, tau=args.tau)
    payload = {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "run_config_hash": digest,
        "tau": args.tau,
        "n_pairs": len(pairs),
        "pair_ids": [{"test": t, "template": p} for t, p in pair_ids],
        **importance.to_json(),
    }
    atomic_write_text(args.out, json.dumps(payload, indent=2) + "\n")
    top = ", ".join(name for name, _, _ in importance.ranking[:5]) or "(none selected)"
    print(f"explained {len(pairs)} pairs; top features: {top}")
    return 0


def _cmd_explain_nodes(args) -> int:
    options = _options_dict(args)
    digest = _run_config_hash(options)
    params, _ = load_params(args.model)
    template_ids, templates = load_graphs_by_role(args.manifest, "template")
    test_ids, tests = load_graphs_by_role(args.manifest, "test")
    try:
        test = tests[test_ids.index(args.test_id)]
    except ValueError:
        raise FileFormatError(f"test case {args.test_id!r} not in manifest")
    try:
        template = templates[template_ids.index(args.template_id)]
    except ValueError:
        raise FileFormatError(f"template case {args.template_id!r} not in manifest")
    importance = explain_nodes(params, test, template, tau=args.tau)
    payload = {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "run_config_hash": digest,
        "tau": args.tau,
        "test_case_id": args.test_id,
        "template_case_id": args.template_id,
        **importance.to_json(),
    }
    atomic_write_text(args.out, json.dumps(payload, indent=2) + "\n")
    print(
        f"node importance {args.test_id} vs {args.template_id}: "
        f"fidelity {importance.initial_fidelity:.4f} -> {importance.final_fidelity:.4f}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="arterymatch", description=__doc__)
    parser.add_argument("--version", action="version", version=f"arterymatch {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file with option defaults")
        return p

    p = add("synth", _cmd_synth, "generate a synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-templates", type=int, default=4)
    p.add_argument("--n-test", type=int, default=4)
    p.add_argument("--lad-segments", type=int, nargs=2, default=[1, 4])
    p.add_argument("--lcx-segments", type=int, nargs=2, default=[1, 4])
    p.add_argument("--d-branch-prob", type=float, default=0.55)
    p.add_argument("--om-branch-prob", type=float, default=0.55)
    p.add_argument("--jitter", type=float, default=2.5)
    p.add_argument("--vessel-width", type=float, nargs=2, default=[2.5, 4.5])
    p.add_argument("--image-size", type=int, nargs=2, default=[192, 192])
    p.add_argument("--lao-prob", type=float, default=0.5)
    p.add_argument("--base-contrast", type=float, default=215.0)
    p.add_argument("--distal-falloff", type=float, default=0.45)
    p.add_argument("--noise-std", type=float, default=5.0)
    _add_feature_flags(p)

    p = add("extract", _cmd_extract, "extract a segment graph from a PGM mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--intensity")
    p.add_argument("--root", help="root hint as 'x,y' (defaults to border-nearest endpoint)")
    p.add_argument("--view", choices=("LAO", "RAO"), default="LAO")
    p.add_argument("--prune-len", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_feature_flags(p)

    p = add("train", _cmd_train, "train the matcher on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--attention-iters", type=int, default=3)
    p.add_argument("--conv-iters", type=int, default=2)
    p.add_argument("--loss-every", type=int, default=50)
    p.add_argument("--loss-csv")

    p = add("infer", _cmd_infer, "label test graphs by template voting")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-id", action="append")
    p.add_argument("--decode", choices=("hungarian", "argmax"), default="hungarian")

    p = add("eval", _cmd_eval, "compute metrics from prediction files")
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.add_argument("--printed-recall", action="store_true")

    p = add("robustness", _cmd_robustness, "metrics under random segment dropping")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--probabilities", default=",".join(f"{p:g}" for p in SWEEP_PROBABILITIES)
    )
    p.add_argument("--decode", choices=("hungarian", "argmax"), default="hungarian")
    p.add_argument("--printed-recall", action="store_true")

    p = add("explain-features", _cmd_explain_features, "greedy feature importance")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--max-pairs", type=int)

    p = add("explain-nodes", _cmd_explain_nodes, "greedy template-node importance")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-id", required=True)
    p.add_argument("--template-id", required=True)
    p.add_argument("--tau", type=float, default=0.8)

    return parser


def _apply_config_file(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                defaults = json.load(fh)
        except FileNotFoundError:
            raise FileFormatError(f"{args.config}: config file not found")
        except json.JSONDecodeError as err:
            raise FileFormatError(f"{args.config}: not valid JSON ({err})") from err
        if not isinstance(defaults, dict):
            raise FileFormatError(f"{args.config}: config must be a JSON object")
        known = set(vars(args))
        bad = [k for k in defaults if k not in known]
        if bad:
            raise FileFormatError(f"{args.config}: unknown option(s) {sorted(bad)}")
        # config supplies defaults; explicit flags win
        sub_argv = list(argv)
        probe = parser.parse_args(sub_argv)
        explicit = _explicit_flags(sub_argv)
        for key, value in defaults.items():
            if key not in explicit:
                setattr(probe, key, value)
        return probe
    return args


def _explicit_flags(argv: list[str]) -> set[str]:
    flags = set()
    for token in argv:
        if token.startswith("--"):
            flags.add(token[2:].split("=")[0].replace("-", "_"))
    return flags


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except ArteryMatchError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err.filename or ''}: {err.strerror or err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
