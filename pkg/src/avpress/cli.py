"""Command-line entry point for the compression pipeline.

Subcommands mirror the experimental workflow: ``gen`` builds synthetic
streams, ``validate`` checks stream files, ``compress`` runs the two-stage
pipeline, ``train`` fits the audio selector, ``eval`` scores retained
tokens against planted labels, ``flops`` prints the analytic cost model,
and ``gradcheck`` verifies the backward pass against finite differences.

Configuration is a flat ``key=value`` file (one pair per line, ``#``
comments allowed); ``--set key=value`` flags override file entries. All
randomness is controlled by ``--seed``, so identical invocations produce
byte-identical outputs.

Exit codes: 0 success, 1 domain or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys

from .audio_selector import (
    SelectorConfig,
    init_params,
    load_params,
    param_count,
    save_params,
)
from .baselines import random_selection_recall
from .errors import (
    FormatError,
    NumericError,
    ParameterError,
    ShapeError,
    StateError,
    TrainingError,
)
from .flops import BackboneSpec, report, write_report_csv
from .gradcheck import gradient_check
from .pipeline import (
    compress_stream,
    compressed_to_stream,
    random_compress_stream,
    realized_retained_ratio,
)
from .stream import (
    CompressionConfig,
    load_labels,
    load_stream,
    retained_counts,
    save_stream,
    validate_stream,
)
from .synthetic import GenSpec, generate_synthetic
from .training import TrainConfig, evaluate_recall, train

GRADCHECK_TOLERANCE = 1e-5


class UsageError(Exception):
    """Malformed invocation: bad config key, bad value, missing input."""


_REQUIRED = object()


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError(f"{v} must be >= 1")
    return v


def _seed_value(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in u64")
    return v


_GEN_SCHEMA = {
    "chunks": (_pos_int, _REQUIRED),
    "frame_tokens": (_pos_int, _REQUIRED),
    "audio_tokens": (_pos_int, _REQUIRED),
    "dim": (_pos_int, _REQUIRED),
    "planted_spatial": (int, _REQUIRED),
    "planted_moving": (int, _REQUIRED),
    "planted_audio": (int, _REQUIRED),
    "planted_decoy": (int, 0),
    "noise_scale": (float, 0.02),
    "margin": (float, 10.0),
    "anchor_spread": (float, 1.0),
    "anchor_seed": (int, 0),
}

_SELECTOR_KEYS = {
    "hidden": (_pos_int, 32),
    "heads": (_pos_int, 4),
    "mlp_hidden": (_pos_int, 16),
    "selector_layers": (_pos_int, 1),
}

_RATIO_KEYS = {
    "rho_v": (float, _REQUIRED),
    "rho_a": (float, _REQUIRED),
}

_COMPRESS_SCHEMA = {**_RATIO_KEYS, **_SELECTOR_KEYS}

_TRAIN_SCHEMA = {
    **_RATIO_KEYS,
    **_SELECTOR_KEYS,
    "learning_rate": (float, 1e-3),
    "steps": (_pos_int, 500),
    "batch_chunks": (_pos_int, 8),
    "optimizer": (str, "adam"),
    "clip_norm": (float, None),
}

_FLOPS_SCHEMA = {
    **_RATIO_KEYS,
    **_SELECTOR_KEYS,
    "backbone_layers": (_pos_int, 28),
    "backbone_hidden": (_pos_int, 3584),
    "backbone_ffn": (_pos_int, None),
}


def _read_pairs(path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if key in pairs:
                raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
            pairs[key] = value
    return pairs


def _resolve(schema: dict, cfg_path, overrides: list[str]) -> dict:
    raw = _read_pairs(cfg_path) if cfg_path else {}
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    resolved = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                resolved[key] = parse(raw[key])
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
        elif default is _REQUIRED:
            raise UsageError(f"missing required config key {key}")
        else:
            resolved[key] = default
    return resolved


def _comp_config(cfg: dict) -> CompressionConfig:
    return CompressionConfig(
        rho_v=cfg["rho_v"], rho_a=cfg["rho_a"], selector_layers=cfg["selector_layers"]
    )


def _selector_config(cfg: dict, dim: int) -> SelectorConfig:
    return SelectorConfig(
        dim=dim,
        hidden=cfg["hidden"],
        heads=cfg["heads"],
        mlp_hidden=cfg["mlp_hidden"],
        layers=cfg["selector_layers"],
    )


def _cmd_gen(args) -> int:
    cfg = _resolve(_GEN_SCHEMA, args.spec, args.set)
    spec = GenSpec(
        chunks=cfg["chunks"],
        frame_tokens=cfg["frame_tokens"],
        audio_tokens=cfg["audio_tokens"],
        dim=cfg["dim"],
        planted_spatial=cfg["planted_spatial"],
        planted_moving=cfg["planted_moving"],
        planted_audio=cfg["planted_audio"],
        planted_decoy=cfg["planted_decoy"],
        noise_scale=cfg["noise_scale"],
        margin=cfg["margin"],
        anchor_spread=cfg["anchor_spread"],
        anchor_seed=cfg["anchor_seed"],
    )
    stream, labels = generate_synthetic(spec, args.seed)
    save_stream(stream, args.out)
    if args.labels:
        from .stream import save_labels

        save_labels(labels, args.labels)
    print(f"wrote {stream.K} chunks (n_p={stream.n_p}, n_a={stream.n_a}, D={stream.D}) to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    stream = load_stream(args.in_path)
    violations = validate_stream(stream)
    if violations:
        for v in violations:
            print(str(v), file=sys.stderr)
        return 1
    print(f"ok: {stream.K} chunks, n_p={stream.n_p}, n_a={stream.n_a}, D={stream.D}")
    return 0


def _cmd_compress(args) -> int:
    cfg = _resolve(_COMPRESS_SCHEMA, args.cfg, args.set)
    stream = load_stream(args.in_path)
    comp = _comp_config(cfg)
    if args.baseline == "random":
        compressed = random_compress_stream(stream, comp, args.seed)
    else:
        if args.params:
            scfg, params = load_params(args.params)
            if scfg.dim != stream.D:
                raise ParameterError(
                    f"checkpoint dim {scfg.dim} does not match stream D {stream.D}"
                )
        else:
            scfg = _selector_config(cfg, stream.D)
            params = init_params(scfg, args.seed)
        guide = "audio" if args.baseline == "audio_only" else "video"
        compressed = compress_stream(stream, params, scfg, comp, guide=guide)
    out_stream = compressed_to_stream(compressed, stream.D)
    save_stream(out_stream, args.out)
    if args.report:
        n_hat_p, n_hat_a = retained_counts(comp, stream.n_p, stream.n_a)
        ratio = realized_retained_ratio(stream, comp)
        with open(args.report, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["chunk", "n_p", "n_a", "n_hat_p", "n_hat_a", "retained_ratio"])
            for cc in compressed:
                writer.writerow(
                    [cc.index_t, stream.n_p, stream.n_a, n_hat_p, n_hat_a, repr(ratio)]
                )
    print(
        f"compressed {stream.K} chunks to {out_stream.tokens_per_chunk()} tokens/chunk "
        f"(retained ratio {realized_retained_ratio(stream, comp):.4f})"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve(_TRAIN_SCHEMA, args.cfg, args.set)
    stream = load_stream(args.in_path)
    labels = load_labels(args.labels)
    eval_stream = load_stream(args.eval_in) if args.eval_in else None
    eval_labels = load_labels(args.eval_labels) if args.eval_labels else None
    comp = _comp_config(cfg)
    scfg = _selector_config(cfg, stream.D)
    tcfg = TrainConfig(
        learning_rate=cfg["learning_rate"],
        steps=cfg["steps"],
        batch_chunks=cfg["batch_chunks"],
        seed=args.seed,
        optimizer=cfg["optimizer"],
        clip_norm=cfg["clip_norm"],
    )
    params, history = train(
        stream, labels, tcfg, scfg, comp,
        eval_stream=eval_stream, eval_labels=eval_labels, guide=args.guide,
    )
    save_params(args.out, scfg, params)
    if args.history:
        history.write_csv(args.history)
    print(
        f"trained {param_count(scfg)} parameters for {tcfg.steps} steps; "
        f"final loss {history.loss[-1]:.6f}, final recall {history.recall[-1]:.4f}"
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve(_COMPRESS_SCHEMA, args.cfg, args.set)
    stream = load_stream(args.in_path)
    labels = load_labels(args.labels)
    comp = _comp_config(cfg)
    scfg, params = load_params(args.params)
    if scfg.dim != stream.D:
        raise ParameterError(
            f"checkpoint dim {scfg.dim} does not match stream D {stream.D}"
        )
    metrics = evaluate_recall(params, stream, labels, scfg, comp, guide=args.guide)
    random_mean = random_selection_recall(stream, labels, comp, args.seed)
    rows = [
        ("recall", metrics.recall),
        ("precision", metrics.precision),
        ("retained_ratio", metrics.retained_ratio),
        ("random_baseline_recall", random_mean),
    ]
    for name, value in rows:
        print(f"{name}={value:.6f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            for name, value in rows:
                writer.writerow([name, repr(value)])
    return 0


def _parse_sweep(text: str) -> list[tuple[float, float]]:
    pairs = []
    for part in text.split(","):
        if ":" not in part:
            raise UsageError(f"--sweep expects rho_v:rho_a pairs, got {part!r}")
        rv, ra = part.split(":", 1)
        try:
            pairs.append((float(rv), float(ra)))
        except ValueError as exc:
            raise UsageError(f"--sweep: {exc}") from exc
    return pairs


def _cmd_flops(args) -> int:
    cfg = _resolve(_FLOPS_SCHEMA, args.cfg, args.set)
    stream = load_stream(args.in_path)
    backbone = BackboneSpec(
        layers=cfg["backbone_layers"],
        hidden=cfg["backbone_hidden"],
        ffn=cfg["backbone_ffn"],
    )
    scfg = _selector_config(cfg, stream.D)
    sweep = _parse_sweep(args.sweep) if args.sweep else [(cfg["rho_v"], cfg["rho_a"])]
    reports = []
    for rho_v, rho_a in sweep:
        comp = CompressionConfig(
            rho_v=rho_v, rho_a=rho_a, selector_layers=cfg["selector_layers"]
        )
        r = report(stream, comp, scfg, backbone)
        reports.append(r)
        print(
            f"retained={r.retained_ratio:.4f} selector={r.selector_flops} "
            f"backbone_full={r.backbone_flops_full} "
            f"backbone_compressed={r.backbone_flops_compressed} "
            f"total_compressed={r.total_compressed}"
        )
    if args.out:
        write_report_csv(args.out, reports)
    return 0


def _cmd_gradcheck(args) -> int:
    result = gradient_check(seed=args.seed)
    for name, err in result.per_tensor.items():
        print(f"{name}: max_rel_err={err:.3e}")
    if result.passed(GRADCHECK_TOLERANCE):
        print(f"gradcheck passed: max_rel_err={result.max_rel_err:.3e}")
        return 0
    print(
        f"gradcheck FAILED: worst parameter {result.worst_param} "
        f"rel_err={result.max_rel_err:.3e} exceeds {GRADCHECK_TOLERANCE}",
        file=sys.stderr,
    )
    return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avpress",
        description="Chunk-level audio-video token stream compression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic stream with planted labels")
    p.add_argument("--spec", required=True, help="generation config (key=value lines)")
    p.add_argument("--seed", type=_seed_value, default=0)
    p.add_argument("--out", required=True, help="output stream (.ots)")
    p.add_argument("--labels", help="output planted labels (.otl)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("validate", help="check a stream file's invariants")
    p.add_argument("--in", dest="in_path", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("compress", help="run the two-stage compression pipeline")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--cfg", required=True)
    p.add_argument("--out", required=True, help="compressed stream (.ots)")
    p.add_argument("--report", help="per-chunk CSV report")
    p.add_argument("--params", help="selector checkpoint (.otp); seeded init if omitted")
    p.add_argument("--seed", type=_seed_value, default=0)
    p.add_argument(
        "--baseline", choices=["random", "audio_only"], help="ablation selector"
    )
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("train", help="train the audio selector on planted labels")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--cfg", required=True)
    p.add_argument("--out", required=True, help="checkpoint output (.otp)")
    p.add_argument("--history", help="per-step CSV history")
    p.add_argument("--eval-in", dest="eval_in", help="held-out stream for recall")
    p.add_argument("--eval-labels", dest="eval_labels")
    p.add_argument("--guide", choices=["video", "audio"], default="video")
    p.add_argument("--seed", type=_seed_value, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score retained tokens against planted labels")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--cfg", required=True)
    p.add_argument("--out", help="metrics CSV")
    p.add_argument("--guide", choices=["video", "audio"], default="video")
    p.add_argument("--seed", type=_seed_value, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("flops", help="analytic cost model for a stream")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--cfg", required=True)
    p.add_argument("--out", help="report CSV")
    p.add_argument("--sweep", help="comma-separated rho_v:rho_a pairs")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("gradcheck", help="verify analytic gradients numerically")
    p.add_argument("--seed", type=_seed_value, default=7)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (
        ParameterError,
        FormatError,
        ShapeError,
        NumericError,
        TrainingError,
        StateError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
