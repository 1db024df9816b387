"""Depth sweep on the annuli classification sets with k-fold cross validation.

The classifier is the depth-N residual flow (relu field, shared weights)
followed by a linear readout into a logistic score.  Training is full-batch
gradient descent with momentum, which keeps every run exactly reproducible;
all folds are trained simultaneously along a stacked fold axis.  Exact flow
gradients come from the forward sensitivity recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset
from .risk import RegularizerSpec, penalty_profile

__all__ = ["AnnuliTrainConfig", "FoldResult", "DepthSweepResult", "depth_sweep"]


@dataclass(frozen=True)
class AnnuliTrainConfig:
    hidden: int = 16
    folds: int = 5
    iters: int = 400
    lr: float = 0.15
    momentum: float = 0.9
    gamma: float = 0.001
    lam: float = 1.0
    rho0: float = 1.0
    seed: int = 11
    lr_drop_at: float = 0.7   # fraction of iters after which lr is divided by 10
    lr_drop2_at: float = 0.9  # further division by 2
    grad_clip: float = 25.0   # per-fold cap on the flow-gradient norm

    @property
    def regularizer(self) -> RegularizerSpec:
        return RegularizerSpec(self.gamma, self.lam, self.rho0)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    status: str  # "ok" or "failed: ..."
    train_cross_entropy: float
    val_cross_entropy: float
    val_squared: float
    val_accuracy: float


@dataclass(frozen=True)
class DepthSweepResult:
    n_values: tuple
    folds: tuple  # tuple over N of tuples of FoldResult

    def summary(self):
        """Rows (N, mean val CE, std over folds, mean accuracy, n_ok)."""
        rows = []
        for n, fr in zip(self.n_values, self.folds):
            ok = [f for f in fr if f.status == "ok"]
            ce = np.array([f.val_cross_entropy for f in ok])
            acc = np.array([f.val_accuracy for f in ok])
            rows.append(
                (
                    n,
                    float(ce.mean()) if len(ok) else float("nan"),
                    float(ce.std(ddof=1)) if len(ok) > 1 else 0.0,
                    float(acc.mean()) if len(ok) else float("nan"),
                    len(ok),
                )
            )
        return rows


def _glorot(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _relu(z):
    return np.maximum(z, 0.0)


def _fold_splits(n: int, folds: int, rng) -> list:
    perm = rng.permutation(n)
    blocks = np.array_split(perm, folds)
    out = []
    for i in range(folds):
        val = blocks[i]
        train = np.concatenate([blocks[j] for j in range(folds) if j != i])
        out.append((train, val))
    return out


class _FoldedFlowClassifier:
    """All-folds-at-once flow + readout state with exact gradients."""

    def __init__(self, dim: int, cfg: AnnuliTrainConfig):
        self.d = dim
        self.mh = cfg.hidden
        self.cfg = cfg
        self.m = 2 * dim * cfg.hidden + dim + cfg.hidden
        rng = np.random.Generator(
            np.random.Philox(key=np.array([cfg.seed, 0xa9], dtype=np.uint64))
        )
        f, d, mh = cfg.folds, dim, cfg.hidden
        self.k1 = _glorot(rng, (f, d, mh), mh, d)
        self.k2 = _glorot(rng, (f, mh, d), d, mh)
        self.b1 = np.zeros((f, d))
        self.b2 = np.zeros((f, mh))
        self.w = _glorot(rng, (f, d), d, 1)
        self.c = np.zeros(f)

    def theta_flat(self) -> np.ndarray:
        f = self.cfg.folds
        return np.concatenate(
            [
                self.k1.reshape(f, -1),
                self.k2.reshape(f, -1),
                self.b1,
                self.b2,
            ],
            axis=1,
        )

    def _flow(self, x, n_steps, with_sens):
        """x: (F, B, d).  Returns endpoint and optionally S: (F, B, d, m).

        The sensitivity update S += h (dxf S + dtf) is written blockwise so
        the structured dtf (sparse k1/b1 blocks, rank-one k2/b2 blocks) never
        materializes as a dense (F, B, d, m) array.
        """
        f, b, d = x.shape
        mh = self.mh
        h = 1.0 / n_steps
        s = np.zeros((f, b, d, self.m)) if with_sens else None
        idx = np.arange(d)
        blk = d * mh
        k1t = self.k1.transpose(0, 2, 1)  # (F, mh, d)
        k2t = self.k2.transpose(0, 2, 1)  # (F, d, mh)
        for _ in range(n_steps):
            z = x @ k2t + self.b2[:, None, :]
            a = _relu(z)
            fx = a @ k1t + self.b1[:, None, :]
            if with_sens:
                s1 = (z > 0.0).astype(float)
                k1s1 = self.k1[:, None, :, :] * s1[:, :, None, :]  # (F, B, d, mh)
                dxf = k1s1 @ self.k2[:, None, :, :]
                upd = dxf @ s  # (F, B, d, m)
                u_k2 = upd[..., blk : 2 * blk].reshape(f, b, d, mh, d)
                u_k2 += k1s1[..., None] * x[:, :, None, None, :]
                upd[..., 2 * blk + d :] += k1s1
                for i in idx:
                    upd[:, :, i, i * mh : (i + 1) * mh] += a
                    upd[:, :, i, 2 * blk + i] += 1.0
                s += h * upd
            x = x + h * fx
        return x, s

    def loss_and_grads(self, x, y, n_steps):
        """Cross entropy + penalty, with exact gradients for all parameters."""
        f, b, _ = x.shape
        xT, s = self._flow(x, n_steps, with_sens=True)
        score = np.einsum("fd,fbd->fb", self.w, xT) + self.c[:, None]
        ys = y * score
        ce = np.mean(np.logaddexp(0.0, -ys), axis=1)
        gs = -y * _sigmoid(-ys) / b  # (F, B), d(ce)/d(score) premultiplied by 1/B

        g_w = np.einsum("fb,fbd->fd", gs, xT)
        g_c = gs.sum(axis=1)
        g_theta = np.einsum("fb,fd,fbdm->fm", gs, self.w, s)

        theta = self.theta_flat()
        r = np.linalg.norm(theta, axis=1)
        hval, dh = penalty_profile(r, self.cfg.regularizer)
        scale = np.where(r > 0, dh / np.maximum(r, 1e-300), 0.0)
        g_theta = g_theta + self.cfg.gamma * scale[:, None] * theta
        loss = ce + self.cfg.gamma * hval
        return loss, ce, g_theta, g_w, g_c

    def apply_theta_grad(self, g_theta, v_theta, lr):
        f, d, mh = self.cfg.folds, self.d, self.mh
        blk = d * mh
        v_theta *= self.cfg.momentum
        v_theta -= lr * g_theta
        self.k1 += v_theta[:, :blk].reshape(f, d, mh)
        self.k2 += v_theta[:, blk : 2 * blk].reshape(f, mh, d)
        self.b1 += v_theta[:, 2 * blk : 2 * blk + d]
        self.b2 += v_theta[:, 2 * blk + d :]
        return v_theta

    def evaluate(self, x, y, n_steps):
        xT, _ = self._flow(x, n_steps, with_sens=False)
        score = np.einsum("fd,fbd->fb", self.w, xT) + self.c[:, None]
        ce = np.mean(np.logaddexp(0.0, -y * score), axis=1)
        sq = np.mean((y - score) ** 2, axis=1)
        acc = np.mean((np.sign(score) == y), axis=1)
        return ce, sq, acc


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _train_one_depth(data: LabeledDataset, n_steps: int, cfg: AnnuliTrainConfig):
    rng = np.random.Generator(
        np.random.Philox(key=np.array([cfg.seed, 0xf01d], dtype=np.uint64))
    )
    splits = _fold_splits(len(data), cfg.folds, rng)
    n_train = min(len(tr) for tr, _ in splits)
    n_val = min(len(va) for _, va in splits)
    # trim to the common size so folds stack into one array
    x_tr = np.stack([data.inputs[tr[:n_train]] for tr, _ in splits])
    y_tr = np.stack([data.labels[tr[:n_train]] for tr, _ in splits])
    x_va = np.stack([data.inputs[va[:n_val]] for _, va in splits])
    y_va = np.stack([data.labels[va[:n_val]] for _, va in splits])

    model = _FoldedFlowClassifier(data.dim, cfg)
    v_theta = np.zeros((cfg.folds, model.m))
    v_w = np.zeros_like(model.w)
    v_c = np.zeros_like(model.c)
    train_ce = np.full(cfg.folds, np.nan)
    status = ["ok"] * cfg.folds
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cfg.iters):
            lr = cfg.lr
            if it >= cfg.lr_drop_at * cfg.iters:
                lr /= 10.0
            if it >= cfg.lr_drop2_at * cfg.iters:
                lr /= 2.0
            loss, ce, g_theta, g_w, g_c = model.loss_and_grads(x_tr, y_tr, n_steps)
            norms = np.linalg.norm(g_theta, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(norms > cfg.grad_clip, cfg.grad_clip / norms, 1.0)
            g_theta = g_theta * scale[:, None]
            v_theta = model.apply_theta_grad(g_theta, v_theta, lr)
            v_w = cfg.momentum * v_w - lr * g_w * scale[:, None]
            v_c = cfg.momentum * v_c - lr * g_c * scale
            model.w += v_w
            model.c += v_c
            train_ce = ce
        val_ce, val_sq, val_acc = model.evaluate(x_va, y_va, n_steps)
    out = []
    for i in range(cfg.folds):
        bad = not (
            np.isfinite(train_ce[i]) and np.isfinite(val_ce[i]) and np.isfinite(val_sq[i])
        )
        out.append(
            FoldResult(
                i,
                "failed: non-finite loss" if bad else status[i],
                float(train_ce[i]),
                float(val_ce[i]),
                float(val_sq[i]),
                float(val_acc[i]),
            )
        )
    return out


def depth_sweep(data: LabeledDataset, n_list, cfg: AnnuliTrainConfig) -> DepthSweepResult:
    """Cross-validated training at every depth in n_list."""
    if data.kind != "classification":
        raise ValueError("depth_sweep expects a classification dataset")
    n_list = [int(n) for n in n_list]
    results = tuple(tuple(_train_one_depth(data, n, cfg)) for n in n_list)
    return DepthSweepResult(tuple(n_list), results)
