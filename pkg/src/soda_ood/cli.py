"""Command-line entry point: ``soda-ood {score,eval,synth,sweep}``.

Every option can also come from ``--config FILE`` (``key=value`` lines, keys
spelled like the long option with ``-`` or ``_``); an explicit flag wins.
A run manifest is itself a valid config file, so ``score --config
out.csv.manifest`` repeats a run.

Exit codes: 0 success, 2 invalid input, 3 numerical failure. Errors are
printed to stderr as ``ERROR <code>: <detail>``.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from soda_ood import __version__, _backend, io, metrics, pipeline, synth
from soda_ood.core import Mode, SodaConfig
from soda_ood.errors import ConflictingFlags, InputError, MalformedTable, SodaError
from soda_ood.graph import write_edge_list
from soda_ood.scoring import PromptEmbeddingGroups, build_prototypes, classify


def read_keyvalue(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise MalformedTable(f"{path}:{lineno}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def write_keyvalue(path, items: dict[str, object]) -> None:
    lines = [f"{k}={v}" for k, v in items.items()]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return "" if v is None else str(v)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _eta_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soda-ood", description="Transductive OOD scoring with score propagation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value file supplying defaults for any option")
    common.add_argument("--threads", type=_positive_int, default=None, help="worker threads (default: all cores)")

    p = sub.add_parser("score", parents=[common], help="score a test set")
    p.add_argument("--test", type=Path, required=True, help="test embeddings (.emb)")
    p.add_argument("--prompts", type=Path, required=True, help="prompt embeddings (.emb)")
    p.add_argument("--prompt-classes", type=Path, required=True, help="row,class_name CSV for the prompts")
    p.add_argument("--reference", type=Path, help="reference (source-domain ID) embeddings (.emb)")
    p.add_argument("--reference-classes", type=Path, help="row,class_name CSV for the references")
    p.add_argument("--out", type=Path, required=True, help="scores CSV to write")
    p.add_argument("--manifest", type=Path, help="manifest path (default: <out>.manifest)")
    p.add_argument("--mode", choices=["zs", "zero_shot", "full"], default="zs")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--eta", type=float, default=0.02)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--baseline", choices=pipeline.BASELINES, default="none")
    p.add_argument("--temperature", type=float, default=1.0, help="MSP softmax temperature")
    p.add_argument("--ridge", type=float, default=1e-3, help="Mahalanobis covariance ridge")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    p.add_argument("--oracle", action="store_true", help="report the gap to the exact fixed point")
    p.add_argument("--early-stop", action="store_true", help="stop once no score changes by more than 1e-10")
    p.add_argument("--trace", type=Path, help="write every iterate as iter,index,value CSV")
    p.add_argument("--graph-dump", type=Path, help="write the graph edge list as i,j CSV")
    p.add_argument("--predictions", type=Path, help="write index,predicted_class CSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="evaluate a scores CSV against labels")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--column", default="score_final", choices=["s_text", "d_src", "score_initial", "score_final"])
    p.add_argument("--recall", type=float, default=0.95)
    p.add_argument("--classes", type=Path, help="index,predicted_class CSV for the binned accuracy analysis")
    p.add_argument("--bins", type=_positive_int, default=10)
    p.add_argument("--bins-out", type=Path, help="binned accuracy CSV (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scenario")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--id-classes", type=int, default=5)
    p.add_argument("--ood-classes", type=int, default=3)
    p.add_argument("--n-id-test", type=int, default=100, help="test samples per ID class")
    p.add_argument("--n-ood-test", type=int, default=100, help="test samples per OOD class")
    p.add_argument("--n-reference", type=int, default=50, help="reference samples per ID class")
    p.add_argument("--concentration", type=float, default=4.0)
    p.add_argument("--shift", type=float, default=0.6, help="domain shift angle in radians")
    p.add_argument("--prototype-noise", type=float, default=1.0, help="prompt misalignment angle in radians")
    p.add_argument("--prompts-per-class", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", parents=[common], help="sweep one hyper-parameter over a synth directory")
    p.add_argument("--data", type=Path, required=True, help="directory written by `synth`")
    p.add_argument("--param", choices=["iters", "alpha", "eta"], required=True)
    p.add_argument("--values", type=_eta_list, required=True, help="comma-separated values")
    p.add_argument("--mode", choices=["zs", "zero_shot", "full"], default="full")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--eta", type=float, default=0.02)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out", type=Path, help="CSV output (default: stdout)")
    p.set_defaults(func=cmd_sweep)
    return parser


def _find_config(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv`` with values from ``--config`` as defaults (flags still win)."""
    config = _find_config(argv)
    commands = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((tok for tok in argv if tok in commands), None)
    if config is None or command is None:
        return parser.parse_args(argv)
    subparser = commands[command]
    dests = {a.dest: a for a in subparser._actions}  # noqa: SLF001
    defaults = {}
    for key, value in read_keyvalue(config).items():
        if "." in key or key in ("command", "config"):
            continue  # manifest metadata
        dest = key.replace("-", "_")
        if dest not in dests:
            raise InputError(f"{config}: unknown option {key!r} for `{command}`")
        action = dests[dest]
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            defaults[dest] = value.lower() in ("1", "true", "yes")
        elif value == "":
            defaults[dest] = None
        else:
            defaults[dest] = action.type(value) if action.type else value
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _load_prompts(emb_path, classes_path) -> PromptEmbeddingGroups:
    emb = io.load_embeddings(emb_path)
    class_index, names = io.load_class_map(classes_path)
    if class_index.shape[0] != emb.shape[0]:
        raise InputError(f"{classes_path} lists {class_index.shape[0]} rows, {emb_path} has {emb.shape[0]}")
    return PromptEmbeddingGroups(emb, class_index, names)


def cmd_score(args) -> int:
    timings: dict[str, float] = {}
    start = time.perf_counter()
    config = SodaConfig(alpha=args.alpha, eta=args.eta, iters=args.iters, topk=args.topk,
                        mode=Mode.parse(args.mode), seed=args.seed)
    if args.reference_classes is not None and args.reference is None:
        raise ConflictingFlags("--reference-classes given without --reference")

    test = io.load_embeddings(args.test)
    groups = _load_prompts(args.prompts, args.prompt_classes)
    reference = io.load_embeddings(args.reference) if args.reference is not None else None
    ref_class = None
    if args.reference_classes is not None:
        ref_class, _ = io.load_class_map(args.reference_classes)
        if ref_class.shape[0] != reference.shape[0]:
            raise InputError(f"{args.reference_classes} lists {ref_class.shape[0]} rows, {args.reference} has {reference.shape[0]}")
    timings["load"] = time.perf_counter() - start

    t = time.perf_counter()
    protos = build_prototypes(groups)
    timings["prototypes"] = time.perf_counter() - t

    result = pipeline.run(test, protos, config, reference, ref_class, baseline=args.baseline,
                          temperature=args.temperature, ridge=args.ridge, oracle=args.oracle,
                          early_stop=args.early_stop)
    timings.update(result.timings)

    t = time.perf_counter()
    io.save_scores(args.out, result.s_text, result.d_src, result.score_initial, result.score_final)
    if args.trace is not None:
        io.save_trace(args.trace, result.score_trace())
    if args.graph_dump is not None:
        write_edge_list(args.graph_dump, result.graph)
    if args.predictions is not None:
        pred = classify(test, protos)
        lines = ["index,predicted_class"] + [f"{i},{protos.class_names[c]}" for i, c in enumerate(pred)]
        args.predictions.write_text("\n".join(lines) + "\n", encoding="utf-8")
    timings["write"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - start

    manifest: dict[str, object] = {"command": "score"}
    for key in ("test", "prompts", "prompt_classes", "reference", "reference_classes", "out", "mode", "alpha",
                "eta", "iters", "topk", "baseline", "temperature", "ridge", "seed", "oracle", "early_stop",
                "trace", "graph_dump", "predictions", "threads"):
        manifest[key.replace("_", "-")] = _fmt(getattr(args, key))
    for key in ("test", "prompts", "prompt_classes", "reference", "reference_classes"):
        path = getattr(args, key)
        if path is not None:
            manifest[f"digest.{key}"] = io.file_digest(path)
    manifest["digest.out"] = io.file_digest(args.out)
    manifest["result.epsilon"] = _fmt(float(result.graph.epsilon))
    manifest["result.n_edges"] = result.graph.n_edges
    manifest["result.iterations"] = result.text_trace.iters
    manifest["result.backend"] = _backend.backend_name()
    manifest["result.threads"] = _backend.get_num_threads()
    for key, gap in result.oracle_gap.items():
        manifest[f"result.oracle_gap_{key}"] = _fmt(gap)
    for key, seconds in timings.items():
        manifest[f"time.{key}"] = f"{seconds:.6f}"
    manifest_path = args.manifest or Path(f"{args.out}.manifest")
    write_keyvalue(manifest_path, manifest)
    print(f"wrote {args.out} ({test.shape[0]} samples, epsilon={result.graph.epsilon:.6g}, "
          f"{result.graph.n_edges} edges) and {manifest_path}")
    return 0


def _load_predictions(path, n: int) -> list[str]:
    header, rows = io._read_rows(path)  # noqa: SLF001
    if header != ["index", "predicted_class"]:
        raise MalformedTable(f"{path}: header must be index,predicted_class")
    preds: dict[int, str] = {}
    for row in rows:
        preds[int(row[0])] = row[1].strip()
    if sorted(preds) != list(range(n)):
        raise MalformedTable(f"{path}: expected predictions for indices 0..{n - 1}")
    return [preds[i] for i in range(n)]


def cmd_eval(args) -> int:
    table = io.load_scores(args.scores)
    labels = io.load_labels(args.labels)
    scores = table[args.column]
    if scores is None:
        raise InputError(f"column {args.column} is empty in {args.scores}")
    if scores.shape[0] != len(labels):
        raise InputError(f"{args.scores} has {scores.shape[0]} rows, {args.labels} has {len(labels)}")
    print(metrics.evaluate(scores, labels.is_id, args.recall).line())

    if args.classes is not None:
        d_src = table["d_src"]
        if d_src is None:
            raise ConflictingFlags("binned accuracy needs the d_src column (score with --mode full)")
        if not labels.has_classes:
            raise InputError(f"{args.labels} has no class_label column")
        preds = _load_predictions(args.classes, len(labels))
        keep = np.flatnonzero(labels.is_id)
        true = np.asarray([labels.class_labels[i] for i in keep], dtype=object)
        pred = np.asarray([preds[i] for i in keep], dtype=object)
        text = metrics.format_bins(metrics.binned_accuracy(pred, true, d_src[keep], args.bins))
        if args.bins_out is not None:
            args.bins_out.write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    scenario = synth.SynthScenario.random(
        dim=args.dim, n_id_classes=args.id_classes, n_ood_classes=args.ood_classes,
        concentration=args.concentration, seed=args.seed, n_id_test=args.n_id_test,
        n_ood_test=args.n_ood_test, n_reference=args.n_reference, shift=args.shift,
        prototype_noise=args.prototype_noise, prompts_per_class=args.prompts_per_class,
    )
    paths = synth.write_scenario(synth.generate(scenario), args.out)
    manifest: dict[str, object] = {"command": "synth"}
    for key in ("out", "seed", "dim", "id_classes", "ood_classes", "n_id_test", "n_ood_test", "n_reference",
                "concentration", "shift", "prototype_noise", "prompts_per_class"):
        manifest[key.replace("_", "-")] = _fmt(getattr(args, key))
    manifest["result.generator"] = "numpy.random.Philox"
    for key, path in paths.items():
        manifest[f"digest.{key}"] = io.file_digest(path)
    write_keyvalue(Path(args.out) / "manifest.txt", manifest)
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    d = Path(args.data)
    test = io.load_embeddings(d / synth.FILES["test"])
    labels = io.load_labels(d / synth.FILES["labels"])
    protos = build_prototypes(_load_prompts(d / synth.FILES["prompts"], d / synth.FILES["prompt_classes"]))
    reference = io.load_embeddings(d / synth.FILES["reference"])
    ref_class, _ = io.load_class_map(d / synth.FILES["reference_classes"])
    base = dict(alpha=args.alpha, eta=args.eta, iters=args.iters, topk=args.topk, mode=Mode.parse(args.mode))

    lines = [f"{args.param},auc,fpr95,epsilon,n_edges"]
    graph = None
    for value in args.values:
        cfg = dict(base)
        cfg[args.param] = int(value) if args.param == "iters" else value
        config = SodaConfig(**cfg)
        if args.param != "eta" and graph is None:
            graph = pipeline.graph_for(test, config.eta)  # independent of the swept value
        result = pipeline.run(test, protos, config, reference, ref_class,
                              graph=graph if args.param != "eta" else None)
        ev = metrics.evaluate(result.score_final, labels.is_id)
        eps = result.graph.epsilon
        shown = int(value) if args.param == "iters" else value
        lines.append(f"{shown},{ev.auc:.6f},{ev.fpr95:.6f},{'' if math.isnan(eps) else format(eps, '.9g')},{result.graph.n_edges}")
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        _backend.set_num_threads(args.threads)
        return args.func(args)
    except SodaError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        # argument conversions from config files and stray filesystem errors
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
