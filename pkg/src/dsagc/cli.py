"""Command-line entry point: synth, extract, train, ablate, embed-plot, report.

Exit codes: 0 success, 1 runtime failure (including failed folds), 2 config error.
"""
from __future__ import annotations

import argparse
import functools
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dsagc import engine, featio
from dsagc.config import ABLATIONS, CE_MODES, RunConfig, TrainConfig, load_config
from dsagc.errors import ConfigError, DSAGCError, FeatureFileError, ShapeError

logger = logging.getLogger("dsagc")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def load_dataset(path) -> featio.Dataset:
    """A container file, a directory of ``.feat`` files, or a SEED feature directory."""
    p = Path(path)
    if p.is_dir() and (p / "label.mat").exists():
        return featio.load_seed_de(p)
    return featio.load_features(p)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = featio.SyntheticConfig(
        n_subjects=args.n_subjects, n_trials=args.trials, segments_per_trial=args.segments,
        n_channels=args.channels, n_bands=args.bands, n_classes=args.classes,
        shift_strength=args.shift, noise_sigma=args.noise,
    )
    ds = featio.generate_synthetic(cfg, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    featio.save_features(ds, out)
    m = ds.manifest
    print(f"wrote {out}: {len(ds)} records, {m.n_subjects} subjects x {m.n_trials} trials, "
          f"{m.n_channels} channels x {m.n_bands} bands, {m.n_classes} classes")
    return 0


def _raw_subject_id(path: Path, data) -> int:
    if "subject" in data:
        return int(data["subject"])
    head = re.match(r"\d+", path.stem)
    if head is None:
        raise ConfigError(f"{path.name}: no 'subject' array and no numeric file-name prefix")
    return int(head.group())


def cmd_extract(args) -> int:
    """Raw ``.npz`` recordings -> DE container.

    Each file holds one subject: ``trial_<k>`` arrays of shape (channels,
    samples) and a ``labels`` vector with one class id per trial.
    """
    files = sorted(Path(args.raw).glob("*.npz"))
    if not files:
        raise ConfigError(f"no .npz recordings in {args.raw}")
    smoothing = featio.SmoothingConfig(method=args.smoothing)
    de, subj, trial, seg, lab = [], [], [], [], []
    manifest = None
    n_trials = 0
    for f in files:
        with np.load(f) as data:
            sid = _raw_subject_id(f, data)
            keys = sorted((k for k in data.files if k.startswith("trial_")),
                          key=lambda k: int(k.split("_")[1]))
            labels = np.asarray(data["labels"]).astype(int)
            if len(labels) != len(keys):
                raise ShapeError(f"{f.name}: {len(keys)} trials but {len(labels)} labels")
            for t, k in enumerate(keys):
                raw = np.asarray(data[k], dtype=np.float64)
                if manifest is None:
                    manifest = featio.DatasetManifest(
                        n_subjects=len(files), n_trials=len(keys),
                        channels=featio.default_channels(raw.shape[0]),
                        bands=featio.DEFAULT_BANDS, fs=args.fs, n_classes=args.classes,
                    )
                x = featio.extract_trial(raw, manifest, smoothing)
                de.append(x)
                subj.append(np.full(len(x), sid))
                trial.append(np.full(len(x), t))
                seg.append(np.arange(len(x)))
                lab.append(np.full(len(x), labels[t]))
            n_trials = max(n_trials, len(keys))
    ds = featio.Dataset(replace(manifest, n_trials=n_trials), np.concatenate(de),
                        np.concatenate(subj), np.concatenate(trial), np.concatenate(seg),
                        np.concatenate(lab))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    featio.save_features(ds, out)
    print(f"wrote {out}: {len(ds)} records from {len(files)} subject file(s)")
    return 0


def _run_config(args) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    t = base.train
    updates = {}
    for flag, key in (("et", "e_t"), ("epochs", "max_epochs"), ("seed", "seed"),
                      ("ce_mode", "ce_mode"), ("lr", "lr"), ("batch_size", "batch_size"),
                      ("snapshot_epochs", "snapshot_epochs")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    if "max_epochs" in updates and "e_t" not in updates and t.e_t > updates["max_epochs"]:
        updates["e_t"] = updates["max_epochs"]
    t = replace(t, **updates)
    for name in getattr(args, "ablate", None) or ():
        t = t.with_ablation(name)
    run = {"train": t}
    for flag, key in (("dataset", "dataset"), ("out", "out"), ("n_unlabeled", "n_unlabeled"),
                      ("jobs", "jobs"), ("et_sweep", "et_sweep")):
        value = getattr(args, flag, None)
        if value is not None:
            run[key] = value
    rc = replace(base, **run)
    if not rc.dataset:
        raise ConfigError("no dataset given (--dataset or 'dataset' in --config)")
    if rc.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    for et in rc.et_sweep:
        if not 0 <= et <= t.max_epochs:
            raise ConfigError(f"E_t sweep value {et} outside [0, {t.max_epochs}]")
    return rc


def _tag(cfg: TrainConfig, n: int) -> str:
    name = re.sub(r"[^A-Za-z0-9]+", "-", cfg.method_name).strip("-")
    return f"{name}_N{n}_Et{cfg.e_t}_seed{cfg.seed}"


def _save_snapshot(directory: str, target: int, meta: dict, epoch, model) -> None:
    cfg = meta["cfg"]
    path = Path(directory) / f"target{target:02d}_{epoch if epoch == 'final' else f'e{epoch}'}.ckpt"
    engine.save_checkpoint(path, model, cfg, {"target_subject": target,
                                              "n_unlabeled": meta["n_unlabeled"],
                                              "epoch": epoch})


class _HookFactory:
    """Picklable per-fold checkpoint writer."""

    def __init__(self, directory: Path, cfg: TrainConfig, n_unlabeled: int):
        self.directory, self.cfg, self.n_unlabeled = str(directory), cfg, n_unlabeled

    def __call__(self, target: int):
        meta = {"cfg": self.cfg, "n_unlabeled": self.n_unlabeled}
        return functools.partial(_save_snapshot, self.directory, target, meta)


def _fold_record(fold: engine.FoldResult) -> dict:
    return {"target_subject": fold.target_subject, "N": fold.n_unlabeled, "E_t": fold.e_t,
            "accuracy": fold.accuracy, "confusion": fold.confusion.tolist(),
            "recall": fold.recall.tolist(), "split": fold.split, "traces": fold.traces,
            "provenance": fold.provenance}


def run_training(rc: RunConfig, checkpoints: bool = True,
                 variants: list[TrainConfig] | None = None) -> tuple[list, Path]:
    """Run every requested protocol and write CSV, split manifests and checkpoints."""
    dataset = load_dataset(rc.dataset)
    subjects = dataset.subjects()
    if not 0 <= rc.n_unlabeled <= len(subjects) - 2:
        raise ConfigError(f"--n-unlabeled must be in [0, {len(subjects) - 2}] "
                          f"for {len(subjects)} subjects")
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(rc.render(), encoding="utf-8")
    (out / "dataset.json").write_text(
        json.dumps(dataset.manifest.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if variants is None:
        variants = ([replace(rc.train, e_t=et) for et in rc.et_sweep] if rc.et_sweep
                    else [rc.train])
    results = []
    for cfg in variants:
        tag = _tag(cfg, rc.n_unlabeled)
        fold_dir = out / "folds" / tag
        fold_dir.mkdir(parents=True, exist_ok=True)
        factory = None
        if checkpoints:
            ck_dir = out / "checkpoints" / tag
            ck_dir.mkdir(parents=True, exist_ok=True)
            factory = _HookFactory(ck_dir, cfg, rc.n_unlabeled)
        res = engine.run_protocol(dataset, rc.n_unlabeled, cfg, jobs=rc.jobs,
                                  hook_factory=factory)
        for fold in res.folds:
            (fold_dir / f"target{fold.target_subject:02d}.json").write_text(
                json.dumps(_fold_record(fold), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        for target, err in res.failures.items():
            print(f"fold {target} failed: {err}", file=sys.stderr)
        print(f"{cfg.method_name} N={rc.n_unlabeled} E_t={cfg.e_t} seed={cfg.seed}: "
              f"{engine_summary(res)}")
        results.append(res)
    engine.write_metrics_csv(results, out / "metrics.csv")
    return results, out


def engine_summary(res: engine.ProtocolResult) -> str:
    from dsagc.report import format_cell

    if not res.folds:
        return "all folds failed"
    return f"{format_cell(res.mean_acc, res.std_acc)} over {len(res.folds)} fold(s)"


def cmd_train(args) -> int:
    rc = _run_config(args)
    results, _ = run_training(rc, checkpoints=not args.no_checkpoints)
    return 0 if all(r.ok for r in results) else 1


def cmd_ablate(args) -> int:
    """The full model plus each requested single ablation (all four by default)."""
    rc = _run_config(replace_args(args, ablate=None))
    names = args.ablate or list(ABLATIONS)
    variants = [rc.train] + [rc.train.with_ablation(n) for n in names]
    results, _ = run_training(rc, checkpoints=not args.no_checkpoints, variants=variants)
    return 0 if all(r.ok for r in results) else 1


def replace_args(args, **kw):
    ns = argparse.Namespace(**vars(args))
    for k, v in kw.items():
        setattr(ns, k, v)
    return ns


def cmd_embed_plot(args) -> int:
    from dsagc.tsne import plot_embedding, tsne

    model, cfg, meta = engine.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    m = dataset.manifest
    if (m.n_channels, m.n_bands, m.n_classes) != (model.n_channels, model.n_bands,
                                                  model.n_classes):
        raise FeatureFileError(
            f"checkpoint expects {model.n_channels} channels x {model.n_bands} bands, "
            f"{model.n_classes} classes; dataset has {m.n_channels} x {m.n_bands}, "
            f"{m.n_classes} classes"
        )
    target = int(meta.get("target_subject", dataset.subjects()[0]))
    n_unl = int(meta.get("n_unlabeled", 0))
    split = featio.partition_loso(dataset, target, n_unl)
    cfg = replace(cfg, snapshot_max_points=args.max_points)
    snap = engine.snapshot(model, split, cfg)
    labels = snap["label"].copy()
    u_rows = snap["domain"] == 1
    if u_rows.any():
        # U labels were stripped for training; recover them for coloring only
        labeled_u = dataset.for_subjects(split.U.subjects())
        labels[u_rows] = labeled_u.label[snap["index"][u_rows]]
    Y = tsne(snap["features"], perplexity=args.perplexity, n_iter=args.iters, seed=args.seed)
    stage = args.stage or str(meta.get("epoch", "final"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    plot_embedding(
        Y, snap["domain"], labels, out,
        title=f"t-SNE of fused features, target {target}, N={n_unl}, {stage}",
        metadata={"Title": f"dsagc embedding {stage}",
                  "Description": json.dumps({"checkpoint": Path(args.checkpoint).name,
                                             "target_subject": target, "N": n_unl,
                                             "stage": stage, "seed": args.seed,
                                             "perplexity": args.perplexity,
                                             "iterations": args.iters}, sort_keys=True)},
    )
    print(f"wrote {out} ({len(Y)} points)")
    return 0


def cmd_report(args) -> int:
    from dsagc.report import build_table, render_report

    labels, ns, cells = build_table(args.metrics_dir)
    csv_text, table = render_report(labels, ns, cells)
    out = Path(args.out) if args.out else (Path(args.metrics_dir) if Path(args.metrics_dir).is_dir()
                                           else Path(args.metrics_dir).parent)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(csv_text, encoding="utf-8")
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


# ---------------------------------------------------------------- parser


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--dataset", help="feature container, .feat directory or SEED directory")
    p.add_argument("--n-unlabeled", type=int, help="unlabeled source subjects N (default 2)")
    p.add_argument("--et", type=int, help="stage-switch epoch E_t (default 30)")
    p.add_argument("--et-sweep", type=_int_list, help="comma-separated E_t values")
    p.add_argument("--epochs", type=int, help="max epochs (default 100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="parallel folds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--ce-mode", choices=CE_MODES)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--snapshot-epochs", type=_int_list,
                   help="epochs whose weights are checkpointed (0 = before training)")
    p.add_argument("--ablate", action="append", choices=ABLATIONS)
    p.add_argument("--no-checkpoints", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsagc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cross-subject DE dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-subjects", type=int, default=15)
    p.add_argument("--trials", type=int, default=15)
    p.add_argument("--segments", type=int, default=20)
    p.add_argument("--channels", type=int, default=62)
    p.add_argument("--bands", type=int, default=5)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--shift", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="raw .npz recordings -> DE feature container")
    p.add_argument("--raw", required=True, help="directory of per-subject .npz files")
    p.add_argument("--out", required=True)
    p.add_argument("--fs", type=float, default=featio.DEFAULT_FS)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--smoothing", choices=("kalman", "moving_average", "none"), default="kalman")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="run the LOSO protocol")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="full model plus single ablations")
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("embed-plot", help="t-SNE plot of fused features from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--stage", help="label for the plot (default: checkpoint epoch)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--max-points", type=int, default=300, help="per domain")
    p.set_defaults(func=cmd_embed_plot)

    p = sub.add_parser("report", help="methods x N table from metrics CSVs")
    p.add_argument("metrics_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DSAGCError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
