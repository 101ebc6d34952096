"""Command line entry points: simulate, analyze, replay, serve,
train-gesture, report.

Log level comes from the MULTICUE_LOG environment variable (default INFO).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys

log = logging.getLogger("multicue")


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        if str(path).endswith(".toml"):
            import tomllib
            return tomllib.load(fh)
        return json.load(fh)


def cmd_simulate(args) -> int:
    from .simulate import SimulatorConfig, simulate

    overrides = _load_config(args.config)
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.duration is not None:
        overrides["duration_s"] = args.duration
    config = SimulatorConfig(**overrides)
    sidecar = args.sidecar or str(args.output) + ".truth.json"
    simulate(config, args.output, sidecar)
    print(f"wrote {args.output} and {sidecar} (seed {config.rng_seed}, "
          f"{config.duration_s:.0f} s)")
    return 0


def cmd_analyze(args) -> int:
    from ..forest import ForestModel
    from .analyze import analyze_session

    model = None
    if args.gesture_model:
        with open(args.gesture_model, encoding="utf-8") as fh:
            model = ForestModel.from_json(fh.read())
    features = args.output or str(args.session) + ".features.jsonl"
    result = analyze_session(args.session, features, gesture_model=model)
    report_path = args.report or str(args.session) + ".report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(result.report, fh, indent=1, sort_keys=True)
    print(f"wrote {features} and {report_path}")
    print(f"lanes: {', '.join(result.report['lanes'])}")
    print(f"proposals: {result.report['n_proposals']} at "
          f"{result.report['proposal_times']}")
    return 0


def cmd_replay(args) -> int:
    from ..bus import StreamBus
    from .replay import ReplayClock, replay

    bus = StreamBus(retention_s=args.retention)
    clock = ReplayClock(speed=None if args.speed in (None, 0) else args.speed)
    stats = replay(args.session, bus, clock)
    print(f"replayed {stats.records} records: {stats.samples} samples, "
          f"{stats.markers} markers, {len(stats.skipped_lines)} skipped lines")
    for lineno, msg in stats.skipped_lines:
        print(f"  skipped line {lineno}: {msg}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    from .service import SessionService

    host, _, port = args.bind.partition(":")
    service = SessionService(args.features,
                             speed=None if args.speed == 0 else args.speed)
    try:
        asyncio.run(service.serve(host or "127.0.0.1", int(port or 8765)))
    except KeyboardInterrupt:
        pass
    return 0


def cmd_train_gesture(args) -> int:
    from ..gesture import GestureTaxonomy, train_gesture_forest
    from ..forest import cross_validate
    from .simulate import make_gesture_training_set

    taxonomy = GestureTaxonomy.load_default()
    feats, labels = make_gesture_training_set(
        taxonomy, per_class=args.per_class, rng_seed=args.seed or 99)
    model = train_gesture_forest(feats, labels, taxonomy,
                                 n_trees=args.trees, rng_seed=args.seed or 0)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())
    print(f"wrote {args.output}: {len(model.trees)} trees, "
          f"oob accuracy {model.oob_accuracy}")
    if args.cross_validate:
        index = {g: i for i, g in enumerate(taxonomy.gesture_ids)}
        y = [index[g] for g in labels]
        cv = cross_validate(feats, y, k=5, rng_seed=args.seed or 0,
                            n_trees=args.trees)
        print(f"5-fold accuracy: {cv['mean_accuracy']:.3f} {cv['fold_accuracy']}")
    return 0


def cmd_report(args) -> int:
    from .recording import load_session
    from ..prosody import length_loudness_correlation

    records = load_session(args.features)
    lanes: dict[str, int] = {}
    proposals = decisions = 0
    utterances = []
    for rec in records:
        if rec["kind"] == "feature":
            lanes[rec["stream"]] = lanes.get(rec["stream"], 0) + 1
            if rec["stream"] == "verbal":
                utterances.append(rec["data"])
        elif rec["kind"] == "proposal":
            proposals += 1
        elif rec["kind"] == "decision":
            decisions += 1
    print("feature records per lane:")
    for lane in sorted(lanes):
        print(f"  {lane:12s} {lanes[lane]}")
    print(f"proposals: {proposals}, decisions: {decisions}")
    if len(utterances) >= 3:
        durations = [u.get("duration_s") for u in utterances]
        sones = [u.get("loudness_sone") for u in utterances]
        if all(v is not None for v in durations + sones):
            r = length_loudness_correlation(durations, sones)
            print(f"utterance length vs loudness correlation: r={r:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multicue",
        description="multimodal communication-cue engine: simulate, analyze "
                    "and serve XR training sessions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic session + truth sidecar")
    p.add_argument("output", help="session JSONL path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--duration", type=float, default=None, help="seconds")
    p.add_argument("--sidecar", default=None)
    p.add_argument("--config", default=None, help="TOML/JSON simulator config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="run the offline feature pipeline")
    p.add_argument("session", help="session JSONL path")
    p.add_argument("--output", default=None, help="features JSONL path")
    p.add_argument("--report", default=None, help="report JSON path")
    p.add_argument("--gesture-model", default=None, help="forest model JSON")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("replay", help="replay a session into a stream bus")
    p.add_argument("session")
    p.add_argument("--speed", type=float, default=0,
                   help="time multiplier; 0 = batch (no waiting)")
    p.add_argument("--retention", type=float, default=1e9,
                   help="bus ring-buffer retention seconds")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="serve an analyzed session to consoles")
    p.add_argument("features", help="features JSONL from `analyze`")
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--speed", type=float, default=20.0,
                   help="replay speed multiplier; 0 = as fast as possible")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("train-gesture", help="train the gesture forest on the "
                                             "canonical templates")
    p.add_argument("output", help="model JSON path")
    p.add_argument("--trees", type=int, default=40)
    p.add_argument("--per-class", type=int, default=24)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cross-validate", action="store_true")
    p.set_defaults(func=cmd_train_gesture)

    p = sub.add_parser("report", help="summarize an analyzed session")
    p.add_argument("features", help="features JSONL")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("MULTICUE_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
