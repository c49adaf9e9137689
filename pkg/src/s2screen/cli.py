"""Command-line entry point.

Subcommands cover the full workflow: ``synth`` writes a planted corpus,
``sample`` curates it, ``pretrain`` / ``finetune`` train the two stages,
``embed`` persists embedding stores, ``screen`` ranks a ligand library,
``predict-sites`` emits residue scores, ``eval-vs`` / ``eval-sites`` score
rankings and residue labels, and ``split`` filters training proteins by
homology to a test set.

Conventions: exit 0 on success, 1 on usage errors, 2 on data errors;
structured JSON logs go to stderr (no timestamps, so outputs stay
reproducible); every run logs its resolved configuration.  Config files
are flat JSON objects mirroring the training/sampling fields, with
command-line flags taking precedence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autograd import CheckpointError
from .data import (DataFormatError, MotifConfig, generate_synthetic_dataset,
                   load_labels, load_ligands, load_proteins, parse_dataset,
                   write_dataset, write_labels)
from .metrics import (RankedList, evaluate_screening,
                      evaluate_site_predictions)
from .retrieval import StoreError, screen, store_read
from .sampling import SamplingConfig, run_bilateral_pipeline
from .splits import homology_exclusion_split
from .training import ModelParams, TrainConfig, embed_corpus, finetune, \
    predict_sites, pretrain

__all__ = ["dispatch", "main"]

_LEVELS = {"debug": 10, "info": 20, "warning": 30, "error": 40}
_log_threshold = 20


def _log(level: str, event: str, **fields) -> None:
    if _LEVELS[level] < _log_threshold:
        return
    record = {"level": level, "event": event}
    record.update(fields)
    print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise DataFormatError(f"config file {path}: {err}") from err
    if not isinstance(obj, dict):
        raise DataFormatError(f"config file {path}: expected a JSON object")
    return obj


def _train_config(args, file_cfg: dict) -> TrainConfig:
    """Flat-key config resolution: CLI flag > config file > default."""
    cfg = TrainConfig()
    for key in ("epochs", "batch_size", "learning_rate", "tau", "lam",
                "probes", "seed", "d_seq", "d_mol", "d_shared",
                "disable_ssf", "disable_bsp", "disable_bds"):
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
        elif key in file_cfg:
            setattr(cfg, key, file_cfg[key])
    return cfg


def _read_dataset(directory):
    d = Path(directory)
    return parse_dataset(d / "proteins.jsonl", d / "ligands.jsonl",
                         d / "affinities.tsv")


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = MotifConfig(n_classes=args.classes, motif_len=args.motif_len)
    _log("info", "config", command="synth", n=args.n,
         seq_len=args.seq_len, atoms=args.atoms, classes=args.classes,
         motif_len=args.motif_len, seed=args.seed, out=str(args.out))
    dataset = generate_synthetic_dataset(
        args.n, seq_len=args.seq_len, n_atoms=args.atoms,
        motif_config=cfg, seed=args.seed)
    write_dataset(dataset, args.out)
    _log("info", "synth-written", n_pairs=len(dataset.triplets),
         out=str(args.out))
    return 0


def cmd_sample(args) -> int:
    file_cfg = _load_config_file(args.config)

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return file_cfg.get(key, default)

    cfg = SamplingConfig(
        alpha=pick(args.alpha, "alpha", 0.5),
        delta=pick(args.delta, "delta", 1.0),
        hitter_cutoff=pick(args.hitter_cutoff, "hitter_cutoff", 20),
        identity_threshold=pick(args.identity, "identity_threshold", 0.40),
        pains_denylist=tuple(args.denylist or
                             file_cfg.get("pains_denylist", ())),
        target_size=pick(args.target, "target_size", None),
        seed=pick(args.seed, "seed", 0),
    )
    _log("info", "config", command="sample", input=str(args.input_dir),
         out=str(args.out), **{k: getattr(cfg, k) for k in (
             "alpha", "delta", "hitter_cutoff", "identity_threshold",
             "target_size", "seed")})
    dataset = _read_dataset(args.input_dir)
    curated, report = run_bilateral_pipeline(dataset, cfg)
    out = Path(args.out)
    write_dataset(curated, out)
    with open(out / "curation_report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    _log("info", "sample-written", final_size=report.final_size,
         clean_pool=report.clean_pool)
    return 0


def _write_history(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def cmd_pretrain(args) -> int:
    cfg = _train_config(args, _load_config_file(args.config))
    _log("info", "config", command="pretrain", data=str(args.data),
         out=str(args.out), **cfg.to_dict())
    dataset = _read_dataset(args.data)
    params, history = pretrain(dataset, cfg, snapshot_dir=args.snapshots)
    params.save(args.out)
    _write_history(history, str(args.out) + ".log.jsonl")
    _log("info", "pretrain-done", epochs=len(history),
         final_loss=history[-1]["loss_total"])
    return 0


def cmd_finetune(args) -> int:
    cfg = _train_config(args, _load_config_file(args.config))
    _log("info", "config", command="finetune", data=str(args.data),
         init=str(args.init), out=str(args.out), **cfg.to_dict())
    dataset = _read_dataset(args.data)
    init_params = ModelParams.load(args.init)
    params, history = finetune(dataset, cfg, init_params,
                               snapshot_dir=args.snapshots)
    params.save(args.out)
    _write_history(history, str(args.out) + ".log.jsonl")
    _log("info", "finetune-done", epochs=len(history),
         final_loss=history[-1]["loss_total"])
    return 0


def cmd_embed(args) -> int:
    _log("info", "config", command="embed", ckpt=str(args.ckpt),
         data=str(args.data), mode=args.mode, out=str(args.out))
    params = ModelParams.load(args.ckpt)
    data_dir = Path(args.data)
    if args.mode == "ligand":
        records = [lig for _, lig in
                   sorted(load_ligands(data_dir / "ligands.jsonl").items())]
    else:
        records = [p for _, p in
                   sorted(load_proteins(data_dir / "proteins.jsonl").items())]
    store = embed_corpus(params, records, args.mode)
    store.write(args.out)
    _log("info", "embed-written", rows=len(store), dim=store.dim)
    return 0


def cmd_screen(args) -> int:
    _log("info", "config", command="screen", pocket_ckpt=str(args.pocket_ckpt),
         proteins=str(args.proteins), library=str(args.library),
         top_k=args.top_k, out=str(args.out) if args.out else "-")
    params = ModelParams.load(args.pocket_ckpt)
    proteins = load_proteins(args.proteins)
    library = store_read(args.library)
    lines = []
    for pid in sorted(proteins):
        query = embed_corpus(params, [proteins[pid]], "pocket")
        hits = screen(query.vectors[0], library, args.top_k)
        lines.append(json.dumps(
            {"target_id": pid,
             "results": [{"ligand_id": lid, "score": score}
                         for lid, score in hits]}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_predict_sites(args) -> int:
    _log("info", "config", command="predict-sites", ckpt=str(args.ckpt),
         proteins=str(args.proteins), ligands=str(args.ligands),
         k=args.k, seed=args.seed, out=str(args.out))
    params = ModelParams.load(args.ckpt)
    proteins = load_proteins(args.proteins)
    ligands = [lig for _, lig in sorted(load_ligands(args.ligands).items())]
    rows = []
    for pid in sorted(proteins):
        scores = predict_sites(params, proteins[pid], ligands, k=args.k,
                               seed=args.seed)
        rows.append({"protein_id": pid,
                     "scores": [float(s) for s in scores]})
    write_labels(rows, args.out)
    _log("info", "sites-written", proteins=len(rows))
    return 0


def _load_ranks(path) -> dict[str, RankedList]:
    out: dict[str, RankedList] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rl = RankedList(tuple(float(s) for s in obj["scores"]),
                                tuple(int(l) for l in obj["labels"]))
                out[str(obj["target_id"])] = rl
            except (json.JSONDecodeError, KeyError, TypeError,
                    ValueError) as err:
                raise DataFormatError(f"{path}:{line_no}: {err}") from err
    if not out:
        raise DataFormatError(f"{path}: no rank rows found")
    return out


def cmd_eval_vs(args) -> int:
    _log("info", "config", command="eval-vs", ranks=str(args.ranks),
         out=str(args.out) if args.out else "-")
    report = evaluate_screening(_load_ranks(args.ranks))
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval_sites(args) -> int:
    _log("info", "config", command="eval-sites", scores=str(args.scores),
         labels=str(args.labels), out=str(args.out) if args.out else "-")
    labels = {rec.protein_id: rec.labels for rec in load_labels(args.labels)}
    per_protein: dict[str, RankedList] = {}
    with open(args.scores, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pid = str(obj["protein_id"])
                scores = tuple(float(s) for s in obj["scores"])
            except (json.JSONDecodeError, KeyError, TypeError,
                    ValueError) as err:
                raise DataFormatError(
                    f"{args.scores}:{line_no}: {err}") from err
            if pid not in labels:
                raise DataFormatError(
                    f"{args.scores}:{line_no}: no labels for {pid!r}")
            if len(labels[pid]) != len(scores):
                raise DataFormatError(
                    f"{args.scores}:{line_no}: {pid!r} has {len(scores)} "
                    f"scores but {len(labels[pid])} labels")
            per_protein[pid] = RankedList(scores, labels[pid])
    if not per_protein:
        raise DataFormatError(f"{args.scores}: no score rows found")
    report = evaluate_site_predictions(per_protein)
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_split(args) -> int:
    _log("info", "config", command="split", train=str(args.train),
         test=str(args.test), cutoff=args.cutoff, out=str(args.out))
    train = load_proteins(args.train)
    test = load_proteins(args.test)
    kept, audit = homology_exclusion_split(train, test, args.cutoff)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "proteins.jsonl", "w", encoding="utf-8") as fh:
        for pid in sorted(kept):
            p = kept[pid]
            fh.write(json.dumps({
                "id": p.id, "sequence": p.sequence,
                "atoms": [{"element": a.element, "x": a.x, "y": a.y,
                           "z": a.z, "residue_index": int(r)}
                          for a, r in p.atoms],
                "pocket_residues": [int(i) for i in p.pocket_residues],
                "annotation": p.annotation}, sort_keys=True) + "\n")
    with open(out / "audit.json", "w", encoding="utf-8") as fh:
        json.dump({"cutoff": args.cutoff,
                   "n_input": len(train), "n_kept": len(kept),
                   "removed": [e.to_dict() for e in audit]},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")
    _log("info", "split-written", kept=len(kept), removed=len(audit))
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="s2screen",
                     description="sequence-structure contrastive virtual "
                                 "screening toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", choices=sorted(_LEVELS),
                        default="info")
    parser.add_argument("--threads", type=int, default=1,
                        help="reserved; execution is single-threaded for "
                             "reproducibility")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a planted synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seq-len", type=int, default=30)
    p.add_argument("--atoms", type=int, default=12)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--motif-len", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="run the bilateral curation pipeline")
    p.add_argument("--in", dest="input_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--hitter-cutoff", type=int)
    p.add_argument("--identity", type=float)
    p.add_argument("--target", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--denylist", nargs="*")
    p.add_argument("--config")
    p.set_defaults(func=cmd_sample)

    for stage in ("pretrain", "finetune"):
        p = sub.add_parser(stage, help=f"run {stage}")
        p.add_argument("--config")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--snapshots")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--lam", type=float)
        p.add_argument("--probes", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--d-seq", dest="d_seq", type=int)
        p.add_argument("--d-mol", dest="d_mol", type=int)
        p.add_argument("--d-shared", dest="d_shared", type=int)
        if stage == "finetune":
            p.add_argument("--init", required=True)
            p.add_argument("--disable-ssf", dest="disable_ssf",
                           action="store_const", const=True)
            p.add_argument("--disable-bsp", dest="disable_bsp",
                           action="store_const", const=True)
            p.set_defaults(func=cmd_finetune)
        else:
            p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", help="embed a corpus into a vector store")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["pocket", "ligand", "sequence"],
                   required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("screen", help="rank a ligand library per target")
    p.add_argument("--pocket-ckpt", dest="pocket_ckpt", required=True)
    p.add_argument("--proteins", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--top-k", dest="top_k", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("predict-sites",
                       help="emit per-residue binding scores")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--proteins", required=True)
    p.add_argument("--ligands", required=True,
                   help="probe ligand library (jsonl)")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_sites)

    p = sub.add_parser("eval-vs", help="score screening rankings")
    p.add_argument("--ranks", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_vs)

    p = sub.add_parser("eval-sites", help="score residue predictions")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_sites)

    p = sub.add_parser("split", help="homology-exclusion filtering")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--cutoff", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    return parser


def dispatch(argv) -> int:
    """Run one command; returns the process exit code (0 ok, 1 usage,
    2 data error)."""
    global _log_threshold
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"s2screen: error: {err}", file=sys.stderr)
        return 1
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    if args.threads < 1:
        print("s2screen: error: --threads must be >= 1", file=sys.stderr)
        return 1
    _log_threshold = _LEVELS[args.log_level]
    try:
        return args.func(args)
    except (DataFormatError, StoreError, CheckpointError) as err:
        _log("error", "data-error", message=str(err))
        return 2
    except FileNotFoundError as err:
        _log("error", "data-error", message=f"missing file: {err.filename}")
        return 2
    except ValueError as err:
        _log("error", "data-error", message=str(err))
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
