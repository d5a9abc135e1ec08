"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
Failures also print a one-line JSON object on stderr.
"""

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from .dataset import (
    Dataset,
    atomic_write_text,
    load_dataset,
    save_dataset,
    split_indices,
    synth_generate,
)
from .errors import DualSpaceError, StorageError, ValidationError
from .fusion import FusionTransform, embed, fit_fusion
from .network import init, load_checkpoint, save_checkpoint
from .retrieval import DEFAULT_SCOPES, evaluate
from .trainer import TrainConfig, grad_check_report, train

log = logging.getLogger("dualspace")

CHECKPOINT = "checkpoint.bin"
FUSION = "fusion.json"
HISTORY = "loss_history.csv"
CONFIG = "train_config.json"
REPORT = "eval_report.json"
SCOPE_CSV = "precision_scope.csv"
GRADCHECK_LIMIT = 1e-4


@contextlib.contextmanager
def thread_limit():
    """Cap BLAS threads from ``DUALSPACE_THREADS`` (unset means no cap)."""
    value = os.environ.get("DUALSPACE_THREADS")
    if not value:
        yield
        return
    try:
        n = int(value)
    except ValueError:
        raise ValidationError(f"DUALSPACE_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ValidationError("DUALSPACE_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _out_dir(path):
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create output directory {d}: {e}") from e
    return d


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _write_report(report, out):
    d = _out_dir(out)
    atomic_write_text(d / REPORT, report.to_json())
    atomic_write_text(d / SCOPE_CSV, report.precision_scope_csv())


def _split_of(dataset):
    if dataset.split is None:
        raise ValidationError("dataset has no train/test split; run `dualspace split` first")
    return dataset.train_test()


# -- commands ------------------------------------------------------------------

def cmd_synth(args):
    for name in ("classes", "per_class", "d_audio", "d_visual"):
        if getattr(args, name) < 1:
            raise ValidationError(f"--{name.replace('_', '-')} must be at least 1")
    if args.per_class < 2:
        raise ValidationError("--per-class must be at least 2 so every category can be split")
    ds = synth_generate(args.classes, args.per_class, args.d_audio, args.d_visual,
                        args.noise, args.cross_noise, args.seed, args.latent_dim)
    train_idx, test_idx = split_indices(ds, args.train_frac, args.seed)
    ds = ds.with_split(train_idx, test_idx)
    manifest = save_dataset(ds, args.out)
    _print_json({"n": manifest.n, "d_a": manifest.d_a, "d_v": manifest.d_v, "c": manifest.c,
                 "train": len(train_idx), "test": len(test_idx), "out": str(args.out)})
    return 0


def cmd_split(args):
    ds = load_dataset(args.data)
    train_idx, test_idx = split_indices(ds, args.train_frac, args.seed)
    ds = ds.with_split(train_idx, test_idx)
    save_dataset(ds, args.out or args.data)
    _print_json({"train": len(train_idx), "test": len(test_idx)})
    return 0


def ablation_settings(ablation, cfg):
    """Apply the loss weighting of one model variant to ``cfg``.

    Variants keep the full architecture and fusion and differ only in which
    loss terms are active: ``explicit`` drops the discriminative term and
    ``implicit`` drops the correlation term. The other weights are unchanged.
    """
    if ablation == "explicit":
        cfg.alpha = 0.0
    elif ablation == "implicit":
        cfg.corr_weight = 0.0
    elif ablation != "full":
        raise ValidationError(f"unknown ablation {ablation!r}")
    return cfg


def cmd_train(args):
    ds = load_dataset(args.data)
    train_set, _ = _split_of(ds)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                      momentum=args.momentum, alpha=args.alpha, beta=args.beta, ridge=args.ridge,
                      seed=args.seed, share_ex_im=args.share_ex_im,
                      normalize_inputs=not args.no_normalize)
    cfg = ablation_settings(args.ablation, cfg)
    cfg.validate(ds.c)
    out = _out_dir(args.out)
    params, history = train(cfg, train_set)
    params.meta["ablation"] = args.ablation
    fusion = fit_fusion(params, train_set, params.k, cfg.ridge)
    save_checkpoint(params, out / CHECKPOINT)
    atomic_write_text(out / FUSION, fusion.to_json())
    atomic_write_text(out / HISTORY, history.to_csv())
    atomic_write_text(out / CONFIG, json.dumps({**cfg.to_dict(), "ablation": args.ablation},
                                               indent=2, sort_keys=True))
    digest = hashlib.sha256((out / CHECKPOINT).read_bytes()).hexdigest()
    _print_json({"checkpoint": str(out / CHECKPOINT), "sha256": digest,
                 "final_loss": history.epochs[-1].to_dict() if len(history) else None})
    return 0


def _load_model(checkpoint, fusion_path=None):
    params = load_checkpoint(checkpoint)
    fusion_path = Path(fusion_path) if fusion_path else Path(checkpoint).with_name(FUSION)
    if not fusion_path.is_file():
        raise StorageError(f"fusion transform {fusion_path} not found")
    return params, FusionTransform.from_json(fusion_path.read_text(encoding="utf-8"))


def cmd_eval(args):
    ds = load_dataset(args.data)
    test = _split_of(ds)[1] if ds.split is not None else ds
    params, fusion = _load_model(args.checkpoint, args.fusion)
    report = evaluate(embed(params, fusion, test.audio, "audio"),
                      embed(params, fusion, test.visual, "visual"), test.labels,
                      args.scopes, test.c)
    _write_report(report, args.out)
    _print_json({"map_a2v": report.map_a2v, "map_v2a": report.map_v2a, "map_avg": report.map_avg})
    return 0


def cmd_baseline(args):
    ds = load_dataset(args.data)
    train_set, test = _split_of(ds)
    if args.kind == "random":
        report = bl.random_baseline(test, args.seed, args.scopes)
    elif args.kind == "cca":
        report = bl.fit_cca_baseline(train_set, args.k_out, args.ridge).evaluate(test, args.scopes)
    else:
        report = bl.fit_cluster_cca_baseline(train_set, args.k_out, args.ridge, args.pair_budget,
                                             args.seed).evaluate(test, args.scopes)
    _write_report(report, args.out)
    _print_json({"kind": args.kind, "map_a2v": report.map_a2v, "map_v2a": report.map_v2a,
                 "map_avg": report.map_avg})
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng([args.seed, 2])
    k = args.classes
    params = init(args.seed, args.d_audio, args.d_visual, k)
    audio = rng.standard_normal((args.batch, args.d_audio))
    visual = rng.standard_normal((args.batch, args.d_visual))
    labels = np.eye(k)[rng.integers(0, k, args.batch)]
    report = grad_check_report(params, audio, visual, labels, args.epsilon, args.alpha,
                               args.beta, args.ridge, samples_per_tensor=args.samples,
                               seed=args.seed)
    ok = report.max_relative_error < GRADCHECK_LIMIT
    _print_json({"epsilon": args.epsilon, "max_relative_error": report.max_relative_error,
                 "checked": report.checked, "skipped_kinks": report.skipped_kinks, "pass": bool(ok)})
    return 0 if ok else 3


def cmd_export(args):
    ds = load_dataset(args.data)
    if ds.split is not None and args.subset != "all":
        ds = ds.train_test()[0 if args.subset == "train" else 1]
    params, fusion = _load_model(args.checkpoint, args.fusion)
    raw = ds.audio if args.modality == "audio" else ds.visual
    emb = embed(params, fusion, raw, args.modality)
    empty = np.zeros((ds.n, 0))
    out = Dataset(emb if args.modality == "audio" else empty,
                  emb if args.modality == "visual" else empty, ds.labels, ds.c, ds.names)
    save_dataset(out, args.out, extra={"modality": args.modality})
    _print_json({"n": ds.n, "k_out": emb.shape[1], "modality": args.modality, "out": str(args.out)})
    return 0


# -- parser --------------------------------------------------------------------

def _scopes(text):
    try:
        return [int(s) for s in text.split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid scope list {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="dualspace", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--d-audio", type=int, default=128)
    s.add_argument("--d-visual", type=int, default=1024)
    s.add_argument("--noise", type=float, default=0.5)
    s.add_argument("--cross-noise", type=float, default=0.3)
    s.add_argument("--latent-dim", type=int, default=16)
    s.add_argument("--train-frac", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="store a stratified train/test split in a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--train-frac", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write to a new directory instead of in place")
    s.set_defaults(func=cmd_split)

    d = TrainConfig()
    s = sub.add_parser("train", help="train the branch networks and fit the fusion layer")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float, default=d.alpha)
    s.add_argument("--beta", type=float, default=d.beta)
    s.add_argument("--epochs", type=int, default=d.epochs)
    s.add_argument("--batch-size", type=int, default=d.batch_size)
    s.add_argument("--lr", type=float, default=d.learning_rate)
    s.add_argument("--momentum", type=float, default=d.momentum)
    s.add_argument("--ridge", type=float, default=d.ridge)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--share-ex-im", action="store_true")
    s.add_argument("--no-normalize", action="store_true")
    s.add_argument("--ablation", choices=("full", "explicit", "implicit"), default="full")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a trained model on the test split")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--fusion", help="fusion JSON (default: next to the checkpoint)")
    s.add_argument("--out", required=True)
    s.add_argument("--scopes", type=_scopes, default=list(DEFAULT_SCOPES))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", help="fit and evaluate a reference system")
    s.add_argument("--data", required=True)
    s.add_argument("--kind", choices=("random", "cca", "cluster_cca"), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k-out", type=int)
    s.add_argument("--ridge", type=float, default=d.ridge)
    s.add_argument("--pair-budget", type=int, default=bl.DEFAULT_PAIR_BUDGET)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scopes", type=_scopes, default=list(DEFAULT_SCOPES))
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("gradcheck", help="finite-difference check of the objective's gradients")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--epsilon", type=float, default=1e-5)
    s.add_argument("--batch", type=int, default=40)
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--d-audio", type=int, default=128)
    s.add_argument("--d-visual", type=int, default=1024)
    s.add_argument("--alpha", type=float, default=d.alpha)
    s.add_argument("--beta", type=float, default=d.beta)
    s.add_argument("--ridge", type=float, default=d.ridge)
    s.add_argument("--samples", type=int, default=200)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("export", help="write embeddings in the dataset binary format")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--fusion")
    s.add_argument("--data", required=True)
    s.add_argument("--modality", choices=("audio", "visual"), required=True)
    s.add_argument("--subset", choices=("all", "train", "test"), default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with thread_limit():
            return args.func(args)
    except DualSpaceError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": e.exit_code}),
              file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": 4}),
              file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
