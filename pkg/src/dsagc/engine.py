"""Model assembly, losses, training schedule and the LOSO protocol."""
from __future__ import annotations

import csv
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from dsagc.adapt import DOMAIN_S, DOMAIN_T, DOMAIN_U, Discriminator, domain_loss
from dsagc.autodiff import Tensor, concat, no_grad, record_kinks, softmax
from dsagc.config import TrainConfig, render, parse
from dsagc.contrast import ProjectionHead, default_drop_count, drop_nodes, nt_xent, sample_kept_nodes
from dsagc.errors import ConfigError, MalformedHeaderError, NumericalError, ProtocolError
from dsagc.featio import Dataset, DomainSplit, partition_loso
from dsagc.fusion import MultiHeadAttention, sample_similarity, weighted_ce
from dsagc.graphcore import cheb_conv, dynamic_adjacency, graph_reg_loss, scaled_laplacian
from dsagc.nn import MLP, Linear, Module
from dsagc.optim import RMSprop

logger = logging.getLogger(__name__)

LOSS_KEYS = ("ce", "disc", "gcn", "gcl", "total")


def resolve_drop_count(cfg: TrainConfig, n_channels: int) -> int:
    d = default_drop_count(n_channels) if cfg.drop_count < 0 else cfg.drop_count
    if not 0 <= d < n_channels:
        raise ConfigError(f"drop_count {d} invalid for {n_channels} channels")
    return d


class DSAGC(Module):
    """Non-structural stream, graph stream, attentive fusion and heads."""

    def __init__(self, n_channels: int, n_bands: int, n_classes: int, cfg: TrainConfig,
                 rng: np.random.Generator):
        self.n_channels, self.n_bands, self.n_classes = n_channels, n_bands, n_classes
        self.drop_count = resolve_drop_count(cfg, n_channels)
        h = cfg.hidden
        self.f_ns = MLP((n_channels * n_bands, h, h, h), rng)
        self.w = Tensor(np.ones(n_bands), requires_grad=True)
        theta = np.zeros(cfg.cheb_order)
        theta[0] = 1.0
        self.theta = Tensor(theta, requires_grad=True)
        self.f_s = MLP(((n_channels - self.drop_count) * n_bands, h, h, h), rng)
        self.proj = ProjectionHead(rng, (h, h, cfg.proj_dim))
        self.disc = Discriminator(rng, h, h, cfg.disc_dropout)
        self.attn = MultiHeadAttention(2 * h, cfg.heads, rng)
        self.phi = Linear(2 * h, cfg.sim_dim, rng)
        self.clf = Linear(2 * h, n_classes, rng)

    @property
    def n_kept(self) -> int:
        return self.n_channels - self.drop_count


@dataclass
class Batch:
    x: np.ndarray  # (B, N, C)
    domain: np.ndarray  # 0=S, 1=U, 2=T
    label: np.ndarray  # -1 outside S
    keys: np.ndarray  # (B, 3) subject, trial, segment

    def __len__(self):
        return len(self.x)

    def rows(self, domain: int) -> np.ndarray:
        return np.flatnonzero(self.domain == domain)

    def counts(self) -> dict[str, int]:
        return {n: int((self.domain == d).sum()) for n, d in (("S", 0), ("U", 1), ("T", 2))}


def make_batch(parts: Sequence[tuple[Dataset, np.ndarray, int]]) -> Batch:
    xs, doms, labs, keys = [], [], [], []
    for ds, idx, dom in parts:
        idx = np.asarray(idx, dtype=int)
        xs.append(ds.de[idx])
        doms.append(np.full(len(idx), dom))
        # labels only travel with labeled-source rows
        labs.append(ds.label[idx] if dom == DOMAIN_S else np.full(len(idx), -1))
        keys.append(np.stack([ds.subject[idx], ds.trial[idx], ds.segment[idx]], axis=1))
    return Batch(np.concatenate(xs), np.concatenate(doms), np.concatenate(labs),
                 np.concatenate(keys))


@dataclass
class Outputs:
    x: Tensor
    A: Tensor
    f_ns: Tensor
    f_s: Tensor
    fused: Tensor
    logits: Tensor
    f_s_views: list[Tensor] = field(default_factory=list)


def eval_kept_nodes(keys: np.ndarray, n_channels: int, drop_count: int, seed: int,
                    view: int = 0) -> np.ndarray:
    """Deterministic per-record augmentation used at evaluation time."""
    return np.concatenate([
        sample_kept_nodes(1, n_channels, drop_count,
                          np.random.default_rng([seed, int(s), int(t), int(g), view]))
        for s, t, g in keys
    ])


def forward(model: DSAGC, batch: Batch, cfg: TrainConfig, rng: np.random.Generator | None,
            views: Sequence[np.ndarray] | None = None) -> Outputs:
    """Run both streams and the fusion.

    Training samples two node-drop views from ``rng``; the first feeds the
    fusion. With explicit ``views`` (evaluation) the structural feature is
    the mean over the views.
    """
    B = len(batch)
    x = Tensor(batch.x)
    f_ns = model.f_ns(x.reshape(B, -1))
    A = dynamic_adjacency(x, model.w)
    L_tilde, _ = scaled_laplacian(A, cfg.power_tol, cfg.power_max_iter, cfg.power_squarings)
    conv = cheb_conv(x, L_tilde, model.theta)
    if views is None:
        n_views = 2 if cfg.alpha_gcl > 0 and not cfg.no_contrastive else 1
        views = [sample_kept_nodes(B, model.n_channels, model.drop_count, rng)
                 for _ in range(n_views)]
        g_views = [model.f_s(drop_nodes(conv, k)) for k in views]
        f_s = g_views[0]
    else:
        g_views = [model.f_s(drop_nodes(conv, k)) for k in views]
        f_s = g_views[0]
        for g in g_views[1:]:
            f_s = f_s + g
        f_s = f_s * (1.0 / len(g_views))
    tokens = concat([f_ns, f_s], axis=1)
    fused = tokens if cfg.no_attn_fusion else model.attn(tokens)
    return Outputs(x, A, f_ns, f_s, fused, model.clf(fused), g_views)


def loss_terms(out: Outputs, batch: Batch, model: DSAGC, cfg: TrainConfig, stage: int,
               rng: np.random.Generator | None, reverse: bool = True) -> dict[str, Tensor]:
    """Component losses; a switched-off term is absent from the result.

    ``reverse=False`` drops the gradient reversal so the discriminator term
    can be gradient-checked as an ordinary function.
    """
    s_rows, t_rows = batch.rows(DOMAIN_S), batch.rows(DOMAIN_T)
    if s_rows.size == 0:
        raise ProtocolError("batch has no labeled-source rows")
    if stage == 2 and batch.rows(DOMAIN_U).size:
        raise ProtocolError("unlabeled-source rows present before the stage switch")
    probs = softmax(out.logits[s_rows], axis=1)
    if cfg.no_sample_weights or t_rows.size == 0:
        weights = Tensor(np.ones(s_rows.size))
    else:
        R = model.phi(out.fused)
        weights = sample_similarity(R[s_rows], R[t_rows])
    terms = {"ce": weighted_ce(probs, batch.label[s_rows], weights, cfg.ce_mode)}
    if cfg.alpha_disc > 0 and not cfg.no_disc:
        terms["disc"] = domain_loss(out.f_ns, batch.domain, model.disc, stage, cfg.grl_mu, rng,
                                    reverse=reverse)
    if cfg.alpha_gcn > 0:
        terms["gcn"] = graph_reg_loss(out.x, out.A, cfg.lambda_reg)
    if cfg.alpha_gcl > 0 and not cfg.no_contrastive and len(out.f_s_views) > 1:
        z1, z2 = (model.proj(g) for g in out.f_s_views[:2])
        terms["gcl"] = nt_xent(z1, z2, cfg.tau)
    return terms


def total_loss(terms: Mapping[str, Tensor], cfg: TrainConfig) -> Tensor:
    weights = {"ce": 1.0, "disc": cfg.alpha_disc, "gcn": cfg.alpha_gcn, "gcl": cfg.alpha_gcl}
    total = terms["ce"]
    for k in ("disc", "gcn", "gcl"):
        if k in terms:
            total = total + weights[k] * terms[k]
    return total


# ---------------------------------------------------------------- training


class CyclicSampler:
    """Endless shuffled pass over ``n`` indices."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos >= self.n:
                self.order, self.pos = self.rng.permutation(self.n), 0
            chunk = self.order[self.pos:self.pos + k]
            out.append(chunk)
            self.pos += len(chunk)
            k -= len(chunk)
        return np.concatenate(out)


@dataclass
class FoldResult:
    target_subject: int
    n_unlabeled: int
    e_t: int
    accuracy: float
    confusion: np.ndarray
    traces: dict[str, list[float]]
    split: dict
    provenance: list[dict]
    embeddings: dict = field(default_factory=dict, repr=False)
    predictions: np.ndarray | None = field(default=None, repr=False)
    model: DSAGC | None = field(default=None, repr=False)

    @property
    def recall(self) -> np.ndarray:
        support = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.diag(self.confusion) / support
        return np.nan_to_num(r)


def _fold_rngs(cfg: TrainConfig, split: DomainSplit):
    ss = np.random.SeedSequence([cfg.seed, split.target_subject, split.n_unlabeled])
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def predict(model: DSAGC, ds: Dataset, cfg: TrainConfig, domain: int = DOMAIN_T):
    """Fused features and logits in fixed-composition batches (dataset order, last batch kept)."""
    fused, logits = [], []
    with no_grad():
        for start in range(0, len(ds), cfg.batch_size):
            idx = np.arange(start, min(start + cfg.batch_size, len(ds)))
            batch = make_batch([(ds, idx, domain)])
            views = [eval_kept_nodes(batch.keys, model.n_channels, model.drop_count, cfg.seed, v)
                     for v in range(cfg.eval_views)]
            out = forward(model, batch, cfg, None, views)
            fused.append(out.fused.data)
            logits.append(out.logits.data)
    return np.concatenate(fused), np.concatenate(logits)


def evaluate(model: DSAGC, ds: Dataset, cfg: TrainConfig):
    """Accuracy, confusion matrix (rows = true class) and predictions on labeled ``ds``."""
    _, logits = predict(model, ds, cfg)
    pred = logits.argmax(axis=1)
    C = model.n_classes
    conf = np.zeros((C, C), dtype=int)
    np.add.at(conf, (ds.label, pred), 1)
    return float((pred == ds.label).mean()), conf, pred


def snapshot(model: DSAGC, split: DomainSplit, cfg: TrainConfig) -> dict:
    """Fused features for evenly spaced S, U and T records (at most ``snapshot_max_points`` each).

    ``index`` holds each point's position inside its domain's dataset; U
    labels are -1 because the split strips them.
    """
    feats, doms, labs, index = [], [], [], []
    for dom, ds in ((DOMAIN_S, split.S), (DOMAIN_U, split.U), (DOMAIN_T, split.T)):
        if len(ds) == 0:
            continue
        k = min(len(ds), cfg.snapshot_max_points)
        idx = np.unique(np.linspace(0, len(ds) - 1, k).round().astype(int))
        sub = ds.select(idx)
        f, _ = predict(model, sub, cfg, dom)
        feats.append(f)
        doms.append(np.full(len(idx), dom))
        labs.append(sub.label)
        index.append(idx)
    return {"features": np.concatenate(feats), "domain": np.concatenate(doms),
            "label": np.concatenate(labs), "index": np.concatenate(index)}


def train_fold(split: DomainSplit, cfg: TrainConfig, keep_model: bool = False,
               snapshot_hook: Callable[[int | str, DSAGC], None] | None = None) -> FoldResult:
    """Staged training: S+T for epochs 1..E_t, S+U+T afterwards; evaluate on T.

    ``snapshot_hook(epoch, model)`` runs at every snapshot epoch and with
    ``"final"`` after the last epoch.
    """
    S, U, T = split.S, split.U, split.T
    if len(S) == 0:
        raise ProtocolError("labeled source domain is empty")
    if len(T) == 0:
        raise ProtocolError("target domain is empty")
    init_rng, shuffle_rng, aug_rng, drop_rng = _fold_rngs(cfg, split)
    m = S.manifest
    model = DSAGC(m.n_channels, m.n_bands, m.n_classes, cfg, init_rng)
    opt = RMSprop(model.named_parameters(), cfg.lr, cfg.rms_rho, cfg.rms_eps)
    traces = {k: [] for k in LOSS_KEYS}
    provenance: list[dict] = []
    embeddings: dict = {}
    if 0 in cfg.snapshot_epochs:
        embeddings[0] = snapshot(model, split, cfg)
        if snapshot_hook:
            snapshot_hook(0, model)
    t_sampler = CyclicSampler(len(T), shuffle_rng)
    u_sampler = CyclicSampler(len(U), shuffle_rng) if len(U) else None

    for epoch in range(1, cfg.max_epochs + 1):
        stage = 2 if epoch <= cfg.e_t else 3
        use_u = stage == 3 and u_sampler is not None
        sub = cfg.batch_size // (3 if use_u else 2)
        b_s = max(1, min(sub, len(S)))
        perm = shuffle_rng.permutation(len(S))
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        seen = {"S": set(), "U": set(), "T": set()}
        counts = {"S": 0, "U": 0, "T": 0}
        n_steps = max(1, len(S) // b_s)
        for step in range(n_steps):
            parts = [(S, perm[step * b_s:(step + 1) * b_s], DOMAIN_S)]
            if use_u:
                parts.append((U, u_sampler.take(min(sub, len(U))), DOMAIN_U))
            parts.append((T, t_sampler.take(min(sub, len(T))), DOMAIN_T))
            batch = make_batch(parts)
            for name, d in (("S", 0), ("U", 1), ("T", 2)):
                rows = batch.domain == d
                counts[name] += int(rows.sum())
                seen[name].update(np.unique(batch.keys[rows, 0]).tolist())
            out = forward(model, batch, cfg, aug_rng)
            terms = loss_terms(out, batch, model, cfg, stage, drop_rng)
            loss = total_loss(terms, cfg)
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k, v in terms.items():
                sums[k] += float(v.data)
            sums["total"] += float(loss.data)
        for k in LOSS_KEYS:
            traces[k].append(sums[k] / n_steps)
        for name, t in model.named_parameters().items():
            if not np.isfinite(t.data).all():
                raise NumericalError(f"parameter {name!r} became non-finite at epoch {epoch}")
        provenance.append({"epoch": epoch, "stage": stage, "rows": counts,
                           "subjects": {k: sorted(v) for k, v in seen.items()}})
        if epoch in cfg.snapshot_epochs:
            embeddings[epoch] = snapshot(model, split, cfg)
            if snapshot_hook:
                snapshot_hook(epoch, model)
    if cfg.snapshot_epochs:
        embeddings["final"] = snapshot(model, split, cfg)
    if snapshot_hook:
        snapshot_hook("final", model)
    acc, conf, pred = evaluate(model, T, cfg)
    return FoldResult(
        target_subject=split.target_subject, n_unlabeled=split.n_unlabeled, e_t=cfg.e_t,
        accuracy=acc, confusion=conf, traces=traces, split=split.to_manifest(),
        provenance=provenance, embeddings=embeddings, predictions=pred,
        model=model if keep_model else None,
    )


# ---------------------------------------------------------------- protocol


@dataclass
class ProtocolResult:
    n_unlabeled: int
    cfg: TrainConfig
    folds: list[FoldResult]
    failures: dict[int, str]

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.accuracy for f in self.folds])

    @property
    def mean_acc(self) -> float:
        return float(self.accuracies.mean()) if self.folds else float("nan")

    @property
    def std_acc(self) -> float:
        return float(self.accuracies.std()) if self.folds else float("nan")

    @property
    def ok(self) -> bool:
        return not self.failures


def _run_one(args):
    dataset, target, n_unlabeled, cfg, keep_model, hook_factory = args
    try:
        split = partition_loso(dataset, target, n_unlabeled)
        hook = hook_factory(target) if hook_factory else None
        return target, train_fold(split, cfg, keep_model, hook), None
    except Exception as exc:  # recorded, the protocol continues
        logger.exception("fold for target %s failed", target)
        return target, None, f"{type(exc).__name__}: {exc}"


def run_protocol(dataset: Dataset, n_unlabeled: int, cfg: TrainConfig, jobs: int = 1,
                 targets: Sequence[int] | None = None, keep_models: bool = False,
                 on_fold: Callable[[FoldResult], None] | None = None,
                 hook_factory: Callable[[int], Callable] | None = None) -> ProtocolResult:
    """One fold per target subject; aggregate mean and population std of accuracies.

    ``hook_factory(target)`` builds the fold's snapshot hook; it must be
    picklable when ``jobs > 1``.
    """
    subjects = dataset.subjects()
    if len(subjects) < 3:
        raise ConfigError("the protocol needs at least 3 subjects")
    if not 0 <= n_unlabeled <= len(subjects) - 2:
        raise ConfigError(f"n_unlabeled must be in [0, {len(subjects) - 2}]")
    targets = list(subjects if targets is None else targets)
    work = [(dataset, t, n_unlabeled, cfg, keep_models, hook_factory) for t in targets]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    folds, failures = [], {}
    for target, fold, err in sorted(results, key=lambda r: r[0]):
        if fold is None:
            failures[target] = err
        else:
            folds.append(fold)
            if on_fold:
                on_fold(fold)
    return ProtocolResult(n_unlabeled, cfg, folds, failures)


# ---------------------------------------------------------------- metrics

METRIC_COLUMNS = ("method", "N", "E_t", "seed", "row", "target_subject", "accuracy", "std")


def _num(x: float) -> str:
    return "" if x is None or np.isnan(x) else f"{x:.6f}"


def metrics_rows(result: ProtocolResult) -> list[dict[str, str]]:
    """Fold rows, failed-fold rows and one summary row, all values as fixed-format strings."""
    cfg = result.cfg
    n_classes = result.folds[0].confusion.shape[0] if result.folds else 0
    base = {"method": cfg.method_name, "N": str(result.n_unlabeled), "E_t": str(cfg.e_t),
            "seed": str(cfg.seed)}
    rows = []
    for f in result.folds:
        row = dict(base, row="fold", target_subject=str(f.target_subject),
                   accuracy=_num(f.accuracy), std="")
        row.update({f"recall_{c}": _num(r) for c, r in enumerate(f.recall)})
        rows.append(row)
    for target, err in sorted(result.failures.items()):
        row = dict(base, row="failed", target_subject=str(target), accuracy="", std="")
        row.update({f"recall_{c}": "" for c in range(n_classes)})
        rows.append(row)
    summary = dict(base, row="summary", target_subject="", accuracy=_num(result.mean_acc),
                   std=_num(result.std_acc))
    if result.folds:
        mean_recall = np.mean([f.recall for f in result.folds], axis=0)
        summary.update({f"recall_{c}": _num(r) for c, r in enumerate(mean_recall)})
    rows.append(summary)
    return rows


def write_metrics_csv(results: Sequence[ProtocolResult], path) -> None:
    """One CSV holding every run in ``results`` (e.g. an E_t sweep)."""
    rows = [r for res in results for r in metrics_rows(res)]
    n_classes = max((len([k for k in r if k.startswith("recall_")]) for r in rows), default=0)
    columns = list(METRIC_COLUMNS) + [f"recall_{c}" for c in range(n_classes)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_excluded: int
    worst: tuple[str, int] | None
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error < self.tolerance


def _kink_signature(log: list) -> list[np.ndarray]:
    return [v > 0 for v in log]


def grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
               tolerance: float = 1e-4, n_coords: int = 200, step: float = 1e-5,
               seed: int = 0, atol: float = 1e-6,
               fd_sign: Mapping[str, float] | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences on sampled coordinates.

    Coordinates whose +/- perturbation flips the sign of any recorded ReLU
    argument (a kink crossing) are excluded. The relative error is
    ``|a - n| / max(|a|, |n|, atol * max(1, |f|))`` with ``f`` the loss
    value; the floor keeps finite-difference round-off (of order
    ``eps |f| / step``) on near-zero gradients from dominating. ``fd_sign`` scales the numeric
    derivative per parameter, e.g. ``-mu`` for parameters upstream of a
    gradient reversal.
    """
    fd_sign = dict(fd_sign or {})
    params = dict(params)
    for t in params.values():
        t.grad = None
    with record_kinks() as base_log:
        loss = loss_fn()
    base_sig = _kink_signature(base_log)
    floor = atol * max(1.0, abs(float(loss.data)))
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items()}
    rng = np.random.default_rng(seed)
    total = sum(t.data.size for t in params.values())
    coords: list[tuple[str, int]] = []
    for k, t in params.items():
        share = max(4, int(np.ceil(n_coords * t.data.size / total)))
        n = min(t.data.size, share)
        coords += [(k, int(i)) for i in rng.choice(t.data.size, n, replace=False)]

    def evaluate_at(t: Tensor, i: int, value: float):
        flat = t.data.reshape(-1)
        old = flat[i]
        flat[i] = value
        with no_grad(), record_kinks() as log:
            f = float(loss_fn().data)
        flat[i] = old
        return f, _kink_signature(log)

    worst, max_err, checked, excluded = None, 0.0, 0, 0
    for k, i in coords:
        t = params[k]
        x0 = t.data.reshape(-1)[i]
        fp, sp = evaluate_at(t, i, x0 + step)
        fm, sm = evaluate_at(t, i, x0 - step)
        if any(not np.array_equal(a, b) for sig in (sp, sm) for a, b in zip(base_sig, sig)):
            excluded += 1
            continue
        num = fd_sign.get(k, 1.0) * (fp - fm) / (2 * step)
        ana = float(analytic[k].reshape(-1)[i])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        checked += 1
        if err > max_err:
            max_err, worst = err, (k, i)
    return GradCheckReport(max_err, checked, excluded, worst, tolerance)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"DSAGCCK1"
CKPT_VERSION = 1


def save_checkpoint(path, model: DSAGC, cfg: TrainConfig, meta: dict | None = None) -> None:
    params = model.named_parameters()
    header = {
        "format": "dsagc-checkpoint",
        "version": CKPT_VERSION,
        "config": render(cfg),
        "dims": {"n_channels": model.n_channels, "n_bands": model.n_bands,
                 "n_classes": model.n_classes},
        "params": [{"name": k, "shape": list(t.shape)} for k, t in params.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<I", len(blob)) + blob)
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(model, cfg, meta)``; raises on malformed or inconsistent files."""
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise MalformedHeaderError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        if header["version"] != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        cfg = parse(header["config"], TrainConfig)
        dims = header["dims"]
    except (ValueError, KeyError) as exc:
        raise MalformedHeaderError(f"{path}: malformed checkpoint header ({exc})") from exc
    model = DSAGC(dims["n_channels"], dims["n_bands"], dims["n_classes"], cfg,
                  np.random.default_rng(0))
    params = model.named_parameters()
    declared = [(p["name"], tuple(p["shape"])) for p in header["params"]]
    if declared != [(k, t.shape) for k, t in params.items()]:
        raise MalformedHeaderError(f"{path}: parameter layout does not match the architecture")
    off = 12 + hlen
    for k, t in params.items():
        n = t.data.size
        chunk = raw[off:off + 8 * n]
        if len(chunk) != 8 * n:
            raise MalformedHeaderError(f"{path}: truncated parameter payload at {k!r}")
        t.data = np.frombuffer(chunk, "<f8").reshape(t.shape).copy()
        off += 8 * n
    return model, cfg, header.get("meta", {})
