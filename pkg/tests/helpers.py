"""Finite-difference helpers shared by the test modules."""
import numpy as np

from dsagc.autodiff import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f(x)`` for every coordinate of ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def analytic_grad(build, *arrays):
    """Gradients of ``build(*tensors)`` with respect to each input array."""
    ts = [Tensor(np.array(a, dtype=float), requires_grad=True) for a in arrays]
    build(*ts).backward()
    return [t.grad for t in ts]


def max_rel_err(a, n, floor: float = 1e-6) -> float:
    a, n = np.asarray(a), np.asarray(n)
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


def check_grads(build, *arrays, tol: float = 1e-4, h: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradients over all inputs.

    The denominator is floored at ``1e-6 * max(1, |f|)``: central differences
    carry round-off of about ``eps * |f| / h``.
    """
    grads = analytic_grad(build, *arrays)
    f0 = float(build(*[Tensor(np.array(v, dtype=float)) for v in arrays]).data)
    floor = 1e-6 * max(1.0, abs(f0))
    worst = 0.0
    for i, a in enumerate(arrays):
        def f(x, i=i):
            args = [Tensor(np.array(v, dtype=float)) for v in arrays]
            args[i] = Tensor(x)
            return float(build(*args).data)
        worst = max(worst, max_rel_err(grads[i], numeric_grad(f, a, h), floor))
    assert worst < tol, worst
    return worst


# ------------------------------------------------------------------ oracles


def reg_oracle(psi, A, lam):
    n = len(psi)
    total = 0.0
    for j in range(n):
        for k in range(n):
            total += lam * float(((psi[j] - psi[k]) ** 2).sum()) * A[j, k] + A[j, k] ** 2
    return total


def cheb_oracle(x, L_tilde, theta):
    evals, U = np.linalg.eigh(L_tilde)
    ev = np.clip(evals, -1.0, 1.0)
    out = np.zeros_like(x)
    for p, th in enumerate(theta):
        out += th * U @ np.diag(np.cos(p * np.arccos(ev))) @ U.T @ x
    return out


def nt_xent_oracle(Z1, Z2, tau):
    """Naive double loop over anchors and candidates."""
    def cos(a, b):
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    def one_way(A, P):
        B = len(A)
        total = 0.0
        for i in range(B):
            denom = 0.0
            for k in range(B):
                if k != i:
                    denom += np.exp(cos(A[i], A[k]) / tau)
            total += -np.log(np.exp(cos(A[i], P[i]) / tau) / denom)
        return total / B

    return 0.5 * (one_way(Z1, Z2) + one_way(Z2, Z1))


# ------------------------------------------------------------------ engine fixtures


def micro_batch(seed: int = 0, **cfg_overrides):
    """Frozen 6-sample micro-batch (2 S, 2 U, 2 T; 8 channels, 2 bands) and a fresh model."""
    from dataclasses import replace

    from dsagc import engine
    from dsagc.config import TrainConfig
    from dsagc.featio import SyntheticConfig, generate_synthetic, partition_loso

    ds = generate_synthetic(SyntheticConfig(n_subjects=4, n_trials=3, segments_per_trial=2,
                                            n_channels=8, n_bands=2), seed)
    split = partition_loso(ds, 0, 1)
    cfg = replace(TrainConfig(batch_size=6), **cfg_overrides)
    m = ds.manifest
    model = engine.DSAGC(m.n_channels, m.n_bands, m.n_classes, cfg, np.random.default_rng(seed))
    batch = engine.make_batch([(split.S, [0, 3], 0), (split.U, [1, 4], 1), (split.T, [2, 5], 2)])
    return model, batch, cfg


def loss_fn(model, batch, cfg, key: str, stage: int = 3, reverse: bool = False):
    """Closure over fixed rng seeds so every evaluation sees the same views and dropout masks."""
    from dsagc import engine

    def f():
        out = engine.forward(model, batch, cfg, np.random.default_rng(1))
        terms = engine.loss_terms(out, batch, model, cfg, stage, np.random.default_rng(2),
                                  reverse=reverse)
        return engine.total_loss(terms, cfg) if key == "full" else terms[key]

    return f


def gradient_fidelity(n_coords: int = 200, seed: int = 0):
    """Gradient-check every loss component on the micro-batch; returns {name: report}."""
    from dsagc import engine

    reports = {}
    for mode in ("inside_log", "outside_log"):
        model, batch, cfg = micro_batch(seed, ce_mode=mode)
        params = model.named_parameters()
        checks = [(f"ce[{mode}]", "ce", False, None), (f"full[{mode}]", "full", False, None)]
        if mode == "inside_log":
            mu = cfg.grl_mu
            grl_sign = {k: -mu for k in params if k.startswith("f_ns.")}
            checks += [("gcn", "gcn", False, None), ("gcl", "gcl", False, None),
                       ("disc[grad_reverse]", "disc", True, grl_sign)]
        for name, key, reverse, sign in checks:
            reports[name] = engine.grad_check(loss_fn(model, batch, cfg, key, reverse=reverse),
                                              params, n_coords=n_coords, seed=seed,
                                              fd_sign=sign)
    return reports
