"""Batch command-line interface.

Subcommands cover the whole pipeline: ``train`` fits the ring-color
model, ``identify`` ranks roster candidates for detection clips,
``evaluate`` scores predicted tracks and pecks against ground truth
(rendering scatter figures next to the delimited report), ``synth``
generates seeded datasets, and ``join-tracks`` / ``match-frames`` expose
the track utilities.  Every run writes a resolved-config snapshot that
``--config`` can replay; all randomness flows from ``--seed``; outputs
are written atomically and are independent of ``--jobs``.

Exit codes: 0 success, 2 input/schema error, 3 domain-invariant
violation, 1 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import classifier, matcher, metrics, synth, tracks
from .classifier import ClassifierModel
from .errors import CorvidError, DomainError, InputError
from .identity import ColorTable, Roster, Scope, check_nesting, load_roster

log = logging.getLogger("corvid")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _workdir(args: argparse.Namespace) -> Path:
    return Path(args.workdir)


def _resolve(args: argparse.Namespace, value: str | Path) -> Path:
    path = Path(value)
    return path if path.is_absolute() else _workdir(args) / path


def _load_table(args: argparse.Namespace) -> ColorTable:
    if args.color_table:
        return ColorTable.from_csv(_resolve(args, args.color_table))
    return ColorTable.default()


def _snapshot(args: argparse.Namespace) -> dict:
    skip = {"func", "config", "verbose", "command"}
    doc = {"subcommand": args.command}
    for key, value in vars(args).items():
        if key in skip:
            continue
        doc[key] = str(value) if isinstance(value, Path) else value
    return doc


def _write_run_config(path: Path, args: argparse.Namespace) -> None:
    _atomic_write_text(path, json.dumps(_snapshot(args), indent=2, sort_keys=True) + "\n")


# --- train ------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> None:
    table = _load_table(args)
    manifest = _resolve(args, args.manifest)
    samples = classifier.load_crop_manifest(manifest)
    log.info("training on %d crops across %d classes", len(samples), len(table))
    model = classifier.train(samples, table, temperature=args.temperature)
    out = _resolve(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out, json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")
    _write_run_config(out.with_name(out.stem + ".run_config.json"), args)
    print(f"model: {out} ({len(model.codes)} classes)")


# --- identify ---------------------------------------------------------------

def _identify_one(task) -> matcher.IdRanking:
    clip_path, model, roster, table, threshold = task
    clip = matcher.load_clip(clip_path)
    return matcher.identify_clip(clip, model, roster, table, threshold)


def _load_rosters(args: argparse.Namespace, table: ColorTable) -> dict[Scope, Roster]:
    rosters: dict[Scope, Roster] = {}
    for path in args.rosters:
        roster = load_roster(
            _resolve(args, path), table, require_aluminium=not args.no_alu_check
        )
        if roster.scope in rosters:
            raise InputError(f"scope {roster.scope.value!r} given twice in --rosters")
        rosters[roster.scope] = roster
    check_nesting(rosters)
    return rosters


def cmd_identify(args: argparse.Namespace) -> None:
    table = _load_table(args)
    model = None
    if args.model:
        model = ClassifierModel.load(_resolve(args, args.model))
        if model.color_table_hash != table.sha256():
            log.warning("model was trained against a different color table")
    rosters = _load_rosters(args, table)
    scope = Scope.parse(args.scope)
    if scope not in rosters:
        raise InputError(f"no roster file with scope {scope.value!r} among --rosters")
    roster = rosters[scope]

    clips_path = _resolve(args, args.clips)
    if clips_path.is_dir():
        clip_files = sorted(clips_path.glob("*.jsonl"))
    elif clips_path.exists():
        clip_files = [clips_path]
    else:
        raise InputError(f"clip path {clips_path} does not exist")
    if not clip_files:
        raise InputError(f"no *.jsonl clips under {clips_path}")

    tasks = [(p, model, roster, table, args.pair_threshold_px) for p in clip_files]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rankings = list(pool.map(_identify_one, tasks, chunksize=8))
    else:
        rankings = [_identify_one(t) for t in tasks]
    rankings.sort(key=lambda r: r.clip_id)
    log.info("identified %d clips against %d candidates", len(rankings), len(roster))

    out_dir = _resolve(args, args.out) if args.out else _workdir(args) / "rankings"
    out_dir.mkdir(parents=True, exist_ok=True)
    docs = [matcher.ranking_to_dict(r) for r in rankings]
    _atomic_write_text(out_dir / "rankings.json", json.dumps(docs, indent=2, sort_keys=True) + "\n")
    _write_run_config(out_dir / "run_config.json", args)

    if args.summary:
        truth_path = (
            _resolve(args, args.truth)
            if args.truth
            else next(
                (p for p in (clips_path / "truth.json", clips_path.parent / "truth.json") if p.is_file()),
                None,
            )
        )
        if truth_path is None:
            raise InputError("--summary needs a truth.json (give --truth)")
        truth_doc = json.loads(Path(truth_path).read_text())
        clip_truth = truth_doc.get("clips", {})
        pairs = []
        for ranking in rankings:
            if ranking.clip_id not in clip_truth:
                raise InputError(f"{truth_path} has no truth for clip {ranking.clip_id}")
            pairs.append((ranking, clip_truth[ranking.clip_id]))
        report = metrics.reid_report(pairs, scope.value)
        _atomic_write_text(
            out_dir / "summary.json",
            json.dumps(
                {
                    "scope": report.scope,
                    "top1": report.top1,
                    "top3": report.top3,
                    "n_clips": report.n_clips,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
        )
        print(
            f"scope={report.scope} top1={report.top1:.4f} "
            f"top3={report.top3:.4f} n={report.n_clips}"
        )
    else:
        print(f"rankings: {out_dir / 'rankings.json'} ({len(rankings)} clips)")


# --- evaluate ---------------------------------------------------------------

def _video_files(pred_dir: Path, truth_dir: Path) -> list[tuple[str, dict[str, Path]]]:
    manifests = sorted(truth_dir.glob("*.manifest.json"))
    if not manifests:
        raise InputError(f"no *.manifest.json under {truth_dir}")
    videos = []
    for manifest in manifests:
        video_id = manifest.name.removesuffix(".manifest.json")
        files = {
            "manifest": manifest,
            "truth_tracks": truth_dir / f"{video_id}.tracks.csv",
            "truth_pecks": truth_dir / f"{video_id}.pecks.csv",
            "pred_tracks": pred_dir / f"{video_id}.tracks.csv",
            "pred_pecks": pred_dir / f"{video_id}.pecks.csv",
        }
        for path in files.values():
            if not path.is_file():
                raise InputError(f"missing evaluation input: {path}")
        videos.append((video_id, files))
    return videos


def _evaluate_one(task) -> metrics.VideoEvaluation:
    files, iou_min, window_s = task
    manifest = tracks.load_manifest(files["manifest"])
    truth = tracks.VideoData(
        tracks=tracks.load_tracks(files["truth_tracks"]),
        pecks=tracks.load_pecks(files["truth_pecks"], manifest.length_frames),
    )
    predicted = tracks.VideoData(
        tracks=tracks.load_tracks(files["pred_tracks"]),
        pecks=tracks.load_pecks(files["pred_pecks"], manifest.length_frames),
    )
    return metrics.evaluate_video(
        predicted, truth, manifest, iou_min=iou_min, window_s=window_s
    )


def cmd_evaluate(args: argparse.Namespace) -> None:
    pred_dir = _resolve(args, args.pred)
    truth_dir = _resolve(args, args.truth)
    videos = _video_files(pred_dir, truth_dir)
    tasks = [(files, args.iou_min, args.window_s) for _, files in videos]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            evaluations = list(pool.map(_evaluate_one, tasks))
    else:
        evaluations = [_evaluate_one(t) for t in tasks]
    report = metrics.aggregate(evaluations)

    out_dir = _resolve(args, args.out) if args.out else _workdir(args) / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(
        out_dir / "report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    _atomic_write_text(out_dir / "report.csv", metrics.report_to_csv(report))
    if args.scatter:
        for name, content in metrics.scatter_csvs(report).items():
            _atomic_write_text(out_dir / name, content)
    if not args.no_figures:
        from . import figures  # deferred: pulls in the render stack

        for path in figures.render_report_figures(report, out_dir):
            log.info("figure: %s", path)

    if args.baseline_trials > 0:
        data = []
        for _, files in videos:
            manifest = tracks.load_manifest(files["manifest"])
            truth = tracks.VideoData(
                tracks=tracks.load_tracks(files["truth_tracks"]),
                pecks=tracks.load_pecks(files["truth_pecks"], manifest.length_frames),
            )
            data.append((truth, manifest))
        baseline = metrics.random_assignment_baseline(
            data,
            n_trials=args.baseline_trials,
            seed=args.seed,
            iou_min=args.iou_min,
            window_s=args.window_s,
        )
        _atomic_write_text(
            out_dir / "baseline.json",
            json.dumps(baseline.to_dict(), indent=2, sort_keys=True) + "\n",
        )
    _write_run_config(out_dir / "run_config.json", args)
    feeding_r = report.feeding.pearson_r if report.feeding else None
    print(
        f"videos={report.n_videos} prop_correct={report.prop_correct_frames:.4f} "
        f"peck_f1={_fmt(report.peck_f1)} feeding_r={_fmt(feeding_r)}"
    )


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


# --- synth ------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> None:
    table = _load_table(args)
    config = synth.SynthConfig(
        seed=args.seed,
        n_birds=args.n_birds,
        noise_sigma=args.noise_sigma,
        frames_per_clip=args.frames_per_clip,
        drop_prob=args.drop_prob,
        video_length_frames=args.video_length_frames,
        fps=args.fps,
        n_clips=args.n_clips,
        n_videos=args.n_videos,
        n_train_crops=args.n_train_crops,
        peck_rate_per_min=args.peck_rate,
        corruption_rate=args.corruption_rate,
        peck_jitter_frames=args.peck_jitter,
        box_jitter_px=args.box_jitter,
        territory_size=args.territory_size,
        neighbours_size=args.neighbours_size,
    )
    out_dir = _resolve(args, args.out) if args.out else _workdir(args) / "synth_data"
    paths = synth.generate_dataset(config, out_dir, table)
    _write_run_config(out_dir / "run_config.json", args)
    print(
        f"dataset: {paths.root} (birds={config.n_birds} clips={len(paths.clip_files)} "
        f"videos={len(paths.video_ids)} sigma={config.noise_sigma} "
        f"drop={config.drop_prob} corruption={config.corruption_rate})"
    )


# --- join-tracks ------------------------------------------------------------

def cmd_join_tracks(args: argparse.Namespace) -> None:
    path = _resolve(args, args.tracks)
    all_tracks = tracks.load_tracks(path)
    by_id = {str(t.track_id): t for t in all_tracks}
    for wanted in (args.track_a, args.track_b):
        if wanted not in by_id:
            raise InputError(f"track {wanted!r} not found in {path}")
    a, b = by_id[args.track_a], by_id[args.track_b]
    joined = tracks.join_tracks(a, b)
    gap = b.first_frame - a.last_frame - 1
    out_tracks = []
    for track in all_tracks:
        if str(track.track_id) == args.track_b:
            continue
        out_tracks.append(joined if str(track.track_id) == args.track_a else track)
    out = _resolve(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    tracks.save_tracks(out_tracks, tmp)
    os.replace(tmp, out)
    _write_run_config(out.with_name(out.stem + ".run_config.json"), args)
    print(f"joined {args.track_a}+{args.track_b} filling {gap} gap frames -> {out}")


# --- match-frames -----------------------------------------------------------

def cmd_match_frames(args: argparse.Namespace) -> None:
    pred = tracks.load_tracks(_resolve(args, args.pred))
    truth = tracks.load_tracks(_resolve(args, args.truth))
    corr = tracks.match_frames(pred, truth, args.iou_min)
    lines = ["frame,predicted_track,truth_track,iou"]
    for frame in sorted(corr.matches):
        for pi, ti, value in corr.matches[frame]:
            lines.append(f"{frame},{pred[pi].track_id},{truth[ti].track_id},{value}")
    out = _resolve(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out, "\n".join(lines) + "\n")
    _write_run_config(out.with_name(out.stem + ".run_config.json"), args)
    summary = f"matches: {out} total_iou={corr.total_iou():.6f}"
    if any(t.bird_id for t in pred) and any(t.bird_id for t in truth):
        prop = metrics.prop_correct_frames(corr)
        summary += f" prop_correct={prop.strict:.4f} matched_only={prop.matched_only:.4f}"
    print(summary)


# --- parser -----------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--workdir",
        default=os.environ.get("CORVID_WORKDIR", "."),
        help="base for relative paths (default: $CORVID_WORKDIR or '.')",
    )
    common.add_argument("--color-table", default=None, help="color table CSV (default: built-in)")
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("--iou-min", type=float, default=0.5, help="IoU floor for box matching")
    common.add_argument(
        "--pair-threshold-px",
        type=float,
        default=None,
        help="ring pairing distance (default: half the median crop diagonal)",
    )
    common.add_argument(
        "--no-alu-check",
        action="store_true",
        help="accept combinations without an aluminium ring",
    )
    common.add_argument("--config", default=None, help="replay a saved run_config.json")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="corvid",
        description="Color-ring bird identification and its behavioral benchmark.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    by_name: dict[str, argparse.ArgumentParser] = {}

    p = subparsers.add_parser("train", parents=[common], help="fit the ring-color model")
    p.add_argument("manifest", help="labeled crop manifest (JSON lines)")
    p.add_argument("--out", default="model.json", help="model output path")
    p.add_argument("--temperature", type=float, default=1.0, help="softmax temperature")
    p.set_defaults(func=cmd_train)
    by_name["train"] = p

    p = subparsers.add_parser("identify", parents=[common], help="rank roster candidates per clip")
    p.add_argument("clips", help="clip file or directory of *.jsonl clips")
    p.add_argument("--model", default=None, help="trained model (needed for crop clips)")
    p.add_argument(
        "--rosters", nargs="+", required=True, help="roster JSON files, one per scope"
    )
    p.add_argument(
        "--scope",
        default=Scope.WITHIN_TERRITORY.value,
        choices=[s.value for s in Scope],
        help="gallery scope to rank against",
    )
    p.add_argument("--top-k", type=int, default=3, help="ids reported per clip summary")
    p.add_argument("--out", default=None, help="output directory (default: workdir/rankings)")
    p.add_argument("--summary", action="store_true", help="also compute Top-1/Top-3 from truth")
    p.add_argument("--truth", default=None, help="truth.json for --summary")
    p.set_defaults(func=cmd_identify)
    by_name["identify"] = p

    p = subparsers.add_parser("evaluate", parents=[common], help="score predictions against truth")
    p.add_argument("pred", help="directory with predicted tracks/pecks")
    p.add_argument("truth", help="directory with manifests and truth tracks/pecks")
    p.add_argument("--out", default=None, help="report directory (default: workdir/report)")
    p.add_argument("--window-s", type=float, default=1.0, help="peck window length in seconds")
    p.add_argument("--scatter", action="store_true", help="emit per-point CSVs")
    p.add_argument("--no-figures", action="store_true", help="skip scatter PNGs")
    p.add_argument(
        "--baseline-trials",
        type=int,
        default=0,
        help="random-assignment trials for a chance floor (0 = skip)",
    )
    p.set_defaults(func=cmd_evaluate)
    by_name["evaluate"] = p

    p = subparsers.add_parser("synth", parents=[common], help="generate a seeded dataset")
    p.add_argument("--out", default=None, help="dataset directory (default: workdir/synth_data)")
    p.add_argument("--n-birds", type=int, default=12)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--frames-per-clip", type=int, default=25)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--video-length-frames", type=int, default=1500)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--n-clips", type=int, default=20)
    p.add_argument("--n-videos", type=int, default=2)
    p.add_argument("--n-train-crops", type=int, default=8)
    p.add_argument("--peck-rate", type=float, default=4.0, help="base pecks/minute per bird")
    p.add_argument("--corruption-rate", type=float, default=0.0)
    p.add_argument("--peck-jitter", type=int, default=0, help="max |frames| of peck jitter")
    p.add_argument("--box-jitter", type=float, default=0.0, help="max |px| of box jitter")
    p.add_argument("--territory-size", type=int, default=3)
    p.add_argument("--neighbours-size", type=int, default=15)
    p.set_defaults(func=cmd_synth)
    by_name["synth"] = p

    p = subparsers.add_parser(
        "join-tracks", parents=[common], help="join two same-bird tracks across a gap"
    )
    p.add_argument("tracks", help="track CSV holding both tracks")
    p.add_argument("--track-a", required=True, help="earlier track id")
    p.add_argument("--track-b", required=True, help="later track id")
    p.add_argument("--out", required=True, help="output track CSV")
    p.set_defaults(func=cmd_join_tracks)
    by_name["join-tracks"] = p

    p = subparsers.add_parser(
        "match-frames", parents=[common], help="match predicted to truth boxes per frame"
    )
    p.add_argument("pred", help="predicted track CSV")
    p.add_argument("truth", help="truth track CSV")
    p.add_argument("--out", required=True, help="correspondence CSV output")
    p.set_defaults(func=cmd_match_frames)
    by_name["match-frames"] = p

    return parser, by_name


def main(argv: list[str] | None = None) -> int:
    parser, by_name = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            config_path = Path(args.config)
            try:
                saved = json.loads(config_path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise InputError(f"cannot replay {config_path}: {exc}") from exc
            if saved.get("subcommand") != args.command:
                raise InputError(
                    f"{config_path} was saved by {saved.get('subcommand')!r}, "
                    f"not {args.command!r}"
                )
            by_name[args.command].set_defaults(
                **{k: v for k, v in saved.items() if k != "subcommand"}
            )
            args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            stream=sys.stderr,
            format="%(levelname)s %(message)s",
        )
        args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CorvidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
