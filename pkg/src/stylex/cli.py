"""``stylex`` command line: generate, train, sweep, cluster, distance.

Every subcommand accepts ``--config`` (a JSON document, see
``stylex generate --print-config``), ``--out`` and ``--seed``. Outputs land in
``<out>/<command>-<variant>/`` next to a ``config.json`` snapshot.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .checkpoint import CheckpointError
from .experiments import (SCHEMA_ID, ConfigError, Corpus, ExperimentConfig, default_candidates, run_cluster,
                          run_distance, run_sweep, run_training, write_snapshot, write_summary)
from .phantoms import CorpusManifest, file_sha256, generate_phantom, make_split, phantom_path, save_phantom
from .pipelines import AXES, load_styled
from .trainer import NumericAbort, StyleModel

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("stylex")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"{out} is locked by another command (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def corpus_dir(out: Path) -> Path:
    return out / "corpus"


def train_dir(out: Path, kind: str) -> Path:
    return out / f"train-{kind}"


def _load_corpus(out: Path) -> Corpus:
    try:
        return Corpus.from_dir(corpus_dir(out))
    except FileNotFoundError as exc:
        raise DataError(f"{exc}; run 'stylex generate' first") from None


def _load_model(args, cfg: ExperimentConfig, kind: str) -> StyleModel:
    path = Path(args.checkpoint) if args.checkpoint else train_dir(Path(cfg.out), kind) / "checkpoints" / "final.styx"
    if not path.exists():
        raise DataError(f"missing checkpoint {path}; run 'stylex train' first")
    try:
        return StyleModel.load(path)
    except CheckpointError as exc:
        raise DataError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, args) -> dict:
    """Write the phantom cache and manifest, or verify an existing one."""
    root = corpus_dir(Path(cfg.out))
    c = cfg.corpus
    split = make_split(c.n_contents, c.split_fraction, c.corpus_seed)
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        manifest = CorpusManifest.load(manifest_path)
        if manifest.train_ids != split.train_ids or manifest.test_ids != split.test_ids:
            raise DataError(f"{manifest_path} was written for a different corpus configuration")
        for seed in split.all_ids:
            path = phantom_path(root, seed)
            if not path.exists():
                raise DataError(f"missing cached phantom {path}")
            if file_sha256(path) != manifest.hashes.get(str(seed)):
                raise DataError(f"hash mismatch for cached phantom {path}")
        return {"verified": len(split.all_ids), "written": 0, "n_train": len(split.train_ids),
                "n_test": len(split.test_ids)}
    hashes = {}
    try:
        for seed in split.all_ids:
            raw = generate_phantom(seed, (c.image_size, c.image_size))
            hashes[str(seed)] = save_phantom(phantom_path(root, seed), raw)
    except OSError as exc:
        raise DataError(f"cannot write corpus under {root}: {exc}") from None
    manifest = CorpusManifest(c.corpus_seed, [c.image_size, c.image_size], c.split_fraction,
                              split.train_ids, split.test_ids, hashes)
    manifest.save(manifest_path)
    write_snapshot(root, cfg, "generate")
    return {"verified": 0, "written": len(hashes), "n_train": len(split.train_ids), "n_test": len(split.test_ids)}


def cmd_train(cfg: ExperimentConfig, args) -> dict:
    corpus = _load_corpus(Path(cfg.out))
    out = train_dir(Path(cfg.out), cfg.pipeline.kind)
    write_snapshot(out, cfg, "train")
    try:
        result = run_training(corpus, cfg, out_dir=out, progress=lambda m: print(m, flush=True))
    except NumericAbort as exc:
        write_summary(out, {"aborted": True, "reason": str(exc)})
        raise
    summary = {"pipeline": cfg.pipeline.kind, "epochs": cfg.train.epochs, "checkpoint": str(result.checkpoint),
               "final_loss": result.epoch_loss[-1] if result.epoch_loss else None,
               "final_collapse_std": result.epoch_collapse[-1] if result.epoch_collapse else None,
               "epoch_loss": result.epoch_loss, "epoch_collapse_std": result.epoch_collapse}
    write_summary(out, summary)
    return summary


def cmd_sweep(cfg: ExperimentConfig, args) -> dict:
    model = _load_model(args, cfg, "lap")
    corpus = _load_corpus(Path(cfg.out))
    out = Path(cfg.out) / f"sweep-{args.axis}"
    write_snapshot(out, cfg, "sweep", {"axis": args.axis, "steps": args.steps})
    try:
        return run_sweep(model, corpus, cfg, args.axis, out_dir=out, steps=args.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_cluster(cfg: ExperimentConfig, args) -> dict:
    kind = "lap" if args.set == "lap_x" else "surrogate"
    model = _load_model(args, cfg, kind)
    corpus = _load_corpus(Path(cfg.out))
    out = Path(cfg.out) / f"cluster-{args.set}"
    write_snapshot(out, cfg, "cluster", {"set": args.set})
    try:
        return run_cluster(model, corpus, cfg, args.set, out_dir=out)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_distance(cfg: ExperimentConfig, args) -> dict:
    model = _load_model(args, cfg, cfg.pipeline.kind)
    out = Path(cfg.out) / f"distance-{cfg.pipeline.kind}"
    if args.reference:
        if not args.candidates:
            raise UsageError("--reference needs at least one --candidates image")
        try:
            reference = load_styled(args.reference)
            candidates = [(Path(p).stem, load_styled(p)) for p in args.candidates]
        except (FileNotFoundError, KeyError, OSError) as exc:
            raise DataError(f"cannot read styled image: {exc}") from None
    else:
        reference, candidates = default_candidates(_load_corpus(Path(cfg.out)), cfg)
    write_snapshot(out, cfg, "distance", {"reference": args.reference, "candidates": args.candidates})
    return run_distance(model, reference, candidates, out_dir=out)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "sweep": cmd_sweep,
            "cluster": cmd_cluster, "distance": cmd_distance}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; omitted keys take defaults")
    common.add_argument("--out", help="run directory (overrides config 'out')")
    common.add_argument("--seed", type=int, help="master seed for training and t-SNE")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="stylex", description="Style similarity experiments on synthetic phantoms.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write or verify the phantom corpus")
    p = sub.add_parser("train", parents=[common], help="train the style encoder")
    p.add_argument("--pipeline", choices=["lap", "surrogate"], help="override pipeline.kind")
    p.add_argument("--epochs", type=int, help="override train.epochs (0 writes an untrained baseline)")
    p = sub.add_parser("sweep", parents=[common], help="1-D analysis of a LAP parameter sweep")
    p.add_argument("axis", help="one of w, l, h")
    p.add_argument("--steps", type=int, help="number of sweep groups")
    p.add_argument("--checkpoint")
    p = sub.add_parser("cluster", parents=[common], help="2-D analysis of a style set")
    p.add_argument("set", help="lap_x or surrogate_x")
    p.add_argument("--checkpoint")
    p = sub.add_parser("distance", parents=[common], help="reference vs candidate distance grid")
    p.add_argument("--reference", help="styled PNG (with JSON sidecar)")
    p.add_argument("--candidates", nargs="*", default=[])
    p.add_argument("--pipeline", choices=["lap", "surrogate"])
    p.add_argument("--checkpoint")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    data = cfg.to_dict()
    if args.out:
        data["out"] = args.out
    if getattr(args, "pipeline", None):
        data["pipeline"]["kind"] = args.pipeline
    if getattr(args, "epochs", None) is not None:
        if args.epochs < 0:
            raise UsageError("--epochs must be >= 0")
        data["train"]["epochs"] = args.epochs
    cfg = ExperimentConfig.from_dict(data)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if args.command == "sweep" and args.axis not in AXES:
            raise UsageError(f"axis must be one of {', '.join(AXES)}, got {args.axis!r}")
        if args.command == "cluster" and args.set not in ("lap_x", "surrogate_x"):
            raise UsageError(f"set must be lap_x or surrogate_x, got {args.set!r}")
        if args.command == "sweep" and args.steps is not None and args.steps < 2:
            raise UsageError("--steps must be >= 2")
        cfg = resolve_config(args)
        if args.print_config:
            print(json.dumps({"schema": SCHEMA_ID, "config": cfg.to_dict()}, indent=2))
            return EXIT_OK
        out = Path(cfg.out)
        with output_lock(out):
            summary = COMMANDS[args.command](cfg, args)
        print(json.dumps(summary, indent=2, default=float))
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        print(f"stylex: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericAbort as exc:
        print(f"stylex: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"stylex: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
