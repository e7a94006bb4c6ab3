"""Entropy-conditioned dense predictor with per-modality heads, plus AdamW.

Inputs are the joint belief parameters and the time; outputs are atom-type
logits, torus predictions and the lattice prediction. The torus head is
residual around the input mean, ``F_hat = wrap(atan2(u, v) + m)``. The
lattice head predicts the flow noise ``eps_hat`` and returns
``L_hat = (mu - sqrt(gamma (1 - gamma)) eps_hat) / gamma``, which keeps the
late-step lattice loss well scaled; at ``gamma = 0`` the head output is
used as ``L_hat`` directly.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from torusbfn import autodiff as ad

CHECKPOINT_VERSION = 1
# below this gamma the lattice head predicts L directly
GAMMA_MIN = 1e-6


@dataclass(frozen=True)
class NetConfig:
    N: int = 4
    K: int = 4
    D: int = 2
    lattice_dim: int = 3
    hidden: int = 128
    layers: int = 2
    entropy_cond: bool = True
    equivariant: bool = False
    c_final: float = 1000.0
    sigma1_sq: float = 0.001
    time_freqs: int = 8

    def config_hash(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def toggle_entropy_conditioning(cfg, on=None):
    """Return ``cfg`` with entropy conditioning flipped, or set to ``on``."""
    flag = (not cfg.entropy_cond) if on is None else bool(on)
    return NetConfig(**{**asdict(cfg), "entropy_cond": flag})


@dataclass
class JointParamState:
    """Belief parameters for a batch: shapes (B,N,K), (B,D), (B,D), (B,Ld), (B,)."""

    theta_A: np.ndarray
    m_F: np.ndarray
    c_F: np.ndarray
    mu_L: np.ndarray
    rho_L: np.ndarray

    @classmethod
    def prior(cls, batch, cfg, rng):
        return cls(
            np.full((batch, cfg.N, cfg.K), 1.0 / cfg.K),
            rng.uniform(-np.pi, np.pi, size=(batch, cfg.D)),
            np.zeros((batch, cfg.D)),
            np.zeros((batch, cfg.lattice_dim)),
            np.ones(batch),
        )


def _torus_pairs(D):
    return [(a, b) for a in range(D) for b in range(a + 1, D)]


def feature_blocks(cfg):
    """Ordered (name, width) of the feature vector."""
    torus = 2 * len(_torus_pairs(cfg.D)) if cfg.equivariant else 2 * cfg.D
    return [
        ("theta_A", cfg.N * cfg.K),
        ("torus", torus),
        ("log_c", cfg.D),
        ("mu_L", cfg.lattice_dim),
        ("time", 2 * cfg.time_freqs),
    ]


def feature_dim(cfg):
    return sum(w for _, w in feature_blocks(cfg))


def time_embedding(t, freqs):
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    w = np.pi * 2.0 ** np.arange(freqs)
    return np.concatenate([np.sin(w * t), np.cos(w * t)], axis=1)


def features(cfg, state, t):
    """Deterministic feature matrix (B, feature_dim) for a batch of states."""
    batch = state.m_F.shape[0]
    m = state.m_F
    if cfg.equivariant:
        pairs = _torus_pairs(cfg.D)
        diff = np.stack([m[:, a] - m[:, b] for a, b in pairs], axis=1) if pairs else np.zeros((batch, 0))
        torus = np.concatenate([np.cos(diff), np.sin(diff)], axis=1)
    else:
        torus = np.concatenate([np.cos(m), np.sin(m)], axis=1)
    if cfg.entropy_cond:
        log_c = np.log1p(state.c_F) / math.log1p(cfg.c_final)
    else:
        log_c = np.zeros((batch, cfg.D))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
    return np.concatenate(
        [state.theta_A.reshape(batch, -1), torus, log_c, state.mu_L, time_embedding(t, cfg.time_freqs)],
        axis=1,
    )


def init_params(cfg, rng):
    """Fan-in uniform hidden layers; zero head weights.

    The torus head bias starts at (u, v) = (0, 1): the offset atan2(u, v) is
    then 0, as for zero weights, but its gradient is defined.
    """
    params = {}
    width = feature_dim(cfg)
    for k in range(cfg.layers):
        bound = 1.0 / math.sqrt(width)
        params[f"W{k}"] = rng.uniform(-bound, bound, size=(width, cfg.hidden))
        params[f"b{k}"] = rng.uniform(-bound, bound, size=cfg.hidden)
        width = cfg.hidden
    params["WA"] = np.zeros((width, cfg.N * cfg.K))
    params["bA"] = np.zeros(cfg.N * cfg.K)
    params["WF"] = np.zeros((width, 2 * cfg.D))
    params["bF"] = np.concatenate([np.zeros(cfg.D), np.ones(cfg.D)])
    params["WL"] = np.zeros((width, cfg.lattice_dim))
    params["bL"] = np.zeros(cfg.lattice_dim)
    return params


@dataclass
class Outputs:
    """Head outputs; Vars when built on a tape."""

    A_logits: object
    F_pred: object
    L_pred: object


def _check_finite(x, name):
    if not np.all(np.isfinite(x.value)):
        raise FloatingPointError(f"non-finite activations in layer {name}")


def forward_on_tape(tape, pvars, cfg, state, t):
    """Record the forward pass; ``pvars`` maps parameter names to tape Vars."""
    batch = state.m_F.shape[0]
    h = tape.const(features(cfg, state, t))
    for k in range(cfg.layers):
        h = ad.silu(h @ pvars[f"W{k}"] + pvars[f"b{k}"])
        _check_finite(h, f"hidden{k}")
    logits = ad.reshape(h @ pvars["WA"] + pvars["bA"], (batch, cfg.N, cfg.K))
    raw_f = h @ pvars["WF"] + pvars["bF"]
    u = ad.take_cols(raw_f, 0, cfg.D)
    v = ad.take_cols(raw_f, cfg.D, 2 * cfg.D)
    f_pred = ad.wrap(ad.atan2(u, v) + state.m_F)
    l_pred = lattice_readout(h @ pvars["WL"] + pvars["bL"], state.mu_L, t, cfg.sigma1_sq)
    for name, x in (("A", logits), ("F", f_pred), ("L", l_pred)):
        _check_finite(x, f"head_{name}")
    return Outputs(logits, f_pred, l_pred)


def lattice_coefficients(t, batch, sigma1_sq):
    """(a, b) with L_hat = a * mu + b * eps_hat, per row."""
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
    gamma = -np.expm1(t * math.log(sigma1_sq))
    ok = gamma >= GAMMA_MIN
    g = np.where(ok, gamma, 1.0)
    a = np.where(ok, 1.0 / g, 0.0)
    b = np.where(ok, -np.sqrt((1.0 - g) / g), 1.0)
    return a[:, None], b[:, None]


def lattice_readout(eps_hat, mu, t, sigma1_sq):
    a, b = lattice_coefficients(t, mu.shape[0], sigma1_sq)
    return eps_hat * b + mu * a


def forward(params, cfg, state, t):
    """Plain numpy forward pass returning (A_logits, F_pred, L_pred)."""
    tape = ad.Tape()
    pvars = {k: tape.const(v) for k, v in params.items()}
    out = forward_on_tape(tape, pvars, cfg, state, t)
    return Outputs(out.A_logits.value, out.F_pred.value, out.L_pred.value)


class AdamW:
    """Adam moments with decoupled weight decay; deterministic given its state."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        if set(params) != set(grads):
            raise ValueError("parameter and gradient keys differ")
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        out = {}
        for k, p in params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match {k} {p.shape}")
            m = self.m.get(k, np.zeros_like(p)) * b1 + (1 - b1) * g
            v = self.v.get(k, np.zeros_like(p)) * b2 + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            out[k] = p - self.lr * (update + self.weight_decay * p)
        return out


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` when the monitored value stalls."""

    def __init__(self, optimizer, factor=0.6, patience=5, min_lr=1e-4, threshold=1e-3):
        self.opt = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = math.inf
        self.bad = 0

    def step(self, value):
        if value < self.best * (1 - self.threshold):
            self.best = value
            self.bad = 0
            return
        self.bad += 1
        if self.bad > self.patience:
            self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
            self.bad = 0


def save_checkpoint(path, params, cfg, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **params)
    return path


def load_checkpoint(path):
    """Return (params, cfg, extra); raises ValueError on a version or shape mismatch."""
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        cfg = NetConfig(**header["config"])
        if cfg.config_hash() != header["config_hash"]:
            raise ValueError("checkpoint config hash mismatch")
        params = {k: data[k].copy() for k in header["shapes"]}
    for k, shape in header["shapes"].items():
        if list(params[k].shape) != shape:
            raise ValueError(f"shape mismatch for {k}")
    return params, cfg, header.get("extra", {})
