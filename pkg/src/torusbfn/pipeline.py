"""Joint training and sampling over atom types, torus coordinates and lattice.

Synthetic "toy crystals" come from a von Mises mixture on the torus whose
mode also drives the atom-type distribution and the lattice mean, so a
model has to learn cross-modality structure to score well.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from torusbfn import autodiff as ad
from torusbfn.euclid_flow import gauss_flow_sample, gauss_update
from torusbfn.net import (
    AdamW,
    JointParamState,
    NetConfig,
    PlateauScheduler,
    forward,
    forward_on_tape,
    init_params,
)
from torusbfn.schedule import (
    DiscreteScheduleParams,
    GaussianScheduleParams,
    cached_vm_schedule,
    discrete_alpha,
    gaussian_alpha,
)
from torusbfn.simplex_flow import sender_draw, simplex_flow_sample, softmax
from torusbfn.special import TWO_PI, DomainError, bessel_ratio_i1_i0, wrap
from torusbfn.torus_flow import SenderDraw, TorusBelief, bayesian_update, flow_sample_fast_batch
from torusbfn.von_mises import log_pdf, sample_vm, VonMises

log = logging.getLogger(__name__)


@dataclass
class ToyCrystal:
    """A batch of crystals: A (M, N) class indices, F (M, D) angles, L (M, Ld)."""

    A: np.ndarray
    F: np.ndarray
    L: np.ndarray

    def __len__(self):
        return self.A.shape[0]

    def take(self, idx):
        return ToyCrystal(self.A[idx], self.F[idx], self.L[idx])


@dataclass(frozen=True)
class SyntheticSpec:
    N: int = 4
    K: int = 4
    lattice_dim: int = 3
    mode_means: tuple = ((-math.pi / 2, -math.pi / 2), (math.pi / 2, math.pi / 2))
    mode_conc: float = 20.0
    mode_weights: tuple = (0.5, 0.5)
    class_probs: tuple = ((0.48, 0.48, 0.02, 0.02), (0.02, 0.02, 0.48, 0.48))
    lattice_means: tuple = ((1.0, 0.5, 1.5), (1.5, 1.0, 0.5))
    lattice_std: float = 0.3

    def __post_init__(self):
        w = np.asarray(self.mode_weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("mode weights must be nonnegative and sum to 1")
        probs = np.asarray(self.class_probs, dtype=np.float64)
        if probs.shape != (w.size, self.K) or np.any(np.abs(probs.sum(1) - 1.0) > 1e-12):
            raise DomainError("class_probs must be one distribution over K classes per mode")
        if np.asarray(self.mode_means).shape[0] != w.size:
            raise DomainError("one mean vector per mode is required")
        if np.asarray(self.lattice_means).shape != (w.size, self.lattice_dim):
            raise DomainError("lattice_means must have shape (modes, lattice_dim)")

    @property
    def D(self):
        return np.asarray(self.mode_means).shape[1]

    def class_marginal(self):
        return np.asarray(self.mode_weights) @ np.asarray(self.class_probs)

    def torus_marginal_pdf(self, x, dim):
        """Marginal mixture density of coordinate ``dim`` at angles ``x``."""
        means = np.asarray(self.mode_means)[:, dim]
        dens = [w * np.exp(log_pdf(VonMises(m, self.mode_conc), x)) for w, m in zip(self.mode_weights, means)]
        return np.sum(dens, axis=0)


def generate_synthetic(spec, count, rng, return_modes=False):
    """i.i.d. toy crystals; the mode is drawn first and drives all three parts."""
    modes = rng.choice(len(spec.mode_weights), size=count, p=np.asarray(spec.mode_weights))
    means = np.asarray(spec.mode_means)[modes]
    F = sample_vm(means, spec.mode_conc, rng, size=means.shape)
    cum = np.cumsum(np.asarray(spec.class_probs), axis=1)[modes]
    u = rng.random((count, spec.N))
    A = np.minimum((u[:, :, None] >= cum[:, None, :]).sum(-1), spec.K - 1)
    L = np.asarray(spec.lattice_means)[modes] + spec.lattice_std * rng.standard_normal((count, spec.lattice_dim))
    out = ToyCrystal(A.astype(np.int64), F, L)
    return (out, modes) if return_modes else out


@dataclass
class TrainConfig:
    n: int = 50
    c_final: float = 1000.0
    sigma1_sq: float = 0.001
    beta1: float = 3.0
    weight_A: float = 0.05
    weight_F: float = 0.05
    weight_L: float = 0.05
    batch_size: int = 256
    steps: int = 15000
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lr_factor: float = 0.6
    lr_patience: int = 4
    min_lr: float = 1e-4
    eval_every: int = 100
    train_size: int = 20000
    val_size: int = 1024
    seed: int = 0
    hidden: int = 128
    layers: int = 2
    entropy_cond: bool = True
    equivariant: bool = False

    def __post_init__(self):
        for name in ("n", "batch_size", "steps", "train_size", "val_size", "hidden", "layers", "eval_every"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")
        for name in ("c_final", "beta1", "lr"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not 0 < self.sigma1_sq < 1:
            raise DomainError("sigma1_sq must lie in (0, 1)")

    def net_config(self, spec):
        return NetConfig(
            N=spec.N, K=spec.K, D=spec.D, lattice_dim=spec.lattice_dim, hidden=self.hidden,
            layers=self.layers, entropy_cond=self.entropy_cond, equivariant=self.equivariant,
            c_final=self.c_final, sigma1_sq=self.sigma1_sq,
        )


@dataclass(frozen=True)
class Schedules:
    n: int
    vm_alphas: np.ndarray
    gauss: GaussianScheduleParams
    disc: DiscreteScheduleParams


def build_schedules(n, c_final, sigma1_sq, beta1, K, cache_dir=None):
    vm = cached_vm_schedule(c_final, n, cache_dir=cache_dir)
    return Schedules(n, vm.alphas, GaussianScheduleParams(sigma1_sq, n), DiscreteScheduleParams(beta1, n, K))


def flow_states(batch, i, sched, rng):
    """Belief parameters theta_{i-1} for each row, at t = (i - 1)/n."""
    i = np.asarray(i, dtype=np.int64)
    t = (i - 1) / sched.n
    lattice = gauss_flow_sample(batch.L, t, sched.gauss, rng)
    types = simplex_flow_sample(batch.A, t, sched.disc, rng)
    torus = flow_sample_fast_batch(batch.F, i - 1, sched.vm_alphas, rng)
    return JointParamState(types.theta, torus.m, torus.c, lattice.mu, np.asarray(lattice.rho))


def modality_losses(out, batch, i, sched, rng):
    """Per-sample (L_A, L_F, L_L) Vars for outputs recorded on a tape."""
    tape = out.F_pred.tape
    n = sched.n
    alpha_a = discrete_alpha(i, sched.disc)
    y = sender_draw(batch.A, alpha_a, sched.disc.K, rng)
    y_true = np.take_along_axis(y, batch.A[..., None], axis=-1)[..., 0]
    lse = ad.logsumexp(ad.log_softmax(out.A_logits) + y)
    loss_a = ad.sum(tape.const(y_true) - lse, axis=-1) * float(n)

    alpha_f = sched.vm_alphas[np.asarray(i) - 1]
    weight_f = n * alpha_f * bessel_ratio_i1_i0(alpha_f)
    loss_f = ad.sum(1.0 - ad.cos(tape.const(batch.F) - out.F_pred), axis=-1) * weight_f

    weight_l = 0.5 * n * gaussian_alpha(i, sched.gauss)
    err = tape.const(batch.L) - out.L_pred
    loss_l = ad.sum(err * err, axis=-1) * weight_l
    return loss_a, loss_f, loss_l


def joint_loss(out, batch, i, sched, config, rng):
    """Weighted batch-mean loss and its per-modality breakdown."""
    la, lf, ll = modality_losses(out, batch, i, sched, rng)
    parts = {"A": ad.mean(la), "F": ad.mean(lf), "L": ad.mean(ll)}
    total = parts["A"] * config.weight_A + parts["F"] * config.weight_F + parts["L"] * config.weight_L
    breakdown = {k: float(v.value) for k, v in parts.items()}
    breakdown["total"] = float(total.value)
    return total, breakdown


def loss_and_grads(params, cfg, batch, i, states, sched, config, rng):
    tape = ad.Tape()
    pvars = {k: tape.var(v, requires_grad=True) for k, v in params.items()}
    t = (np.asarray(i) - 1) / sched.n
    out = forward_on_tape(tape, pvars, cfg, states, t)
    total, breakdown = joint_loss(out, batch, i, sched, config, rng)
    tape.backward(total)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in pvars.items()}
    return breakdown, grads


def train_step(params, opt, cfg, batch, sched, config, rng):
    """One step of joint training with a per-sample step index."""
    i = rng.integers(1, sched.n + 1, size=len(batch))
    states = flow_states(batch, i, sched, rng)
    breakdown, grads = loss_and_grads(params, cfg, batch, i, states, sched, config, rng)
    if not math.isfinite(breakdown["total"]):
        raise FloatingPointError(f"non-finite loss {breakdown}")
    return opt.step(params, grads), breakdown


def validation_loss(params, cfg, val, sched, config, seed):
    """Loss on a fixed validation set with fixed step indices and flow draws."""
    rng = np.random.default_rng(seed)
    i = rng.integers(1, sched.n + 1, size=len(val))
    states = flow_states(val, i, sched, rng)
    tape = ad.Tape()
    pvars = {k: tape.const(v) for k, v in params.items()}
    out = forward_on_tape(tape, pvars, cfg, states, (i - 1) / sched.n)
    _, breakdown = joint_loss(out, val, i, sched, config, rng)
    return breakdown


@dataclass
class TrainResult:
    params: dict
    cfg: NetConfig
    curve: list = field(default_factory=list)
    val: dict = field(default_factory=dict)
    train_config: TrainConfig = None


def train(config, spec, sched=None, cache_dir=None, progress=None):
    """Train a predictor on fresh synthetic data; deterministic given ``config.seed``."""
    root = np.random.SeedSequence(config.seed)
    data_seed, init_seed, step_seed, val_seed = root.spawn(4)
    if sched is None:
        sched = build_schedules(config.n, config.c_final, config.sigma1_sq, config.beta1, spec.K, cache_dir)
    data_rng = np.random.default_rng(data_seed)
    data = generate_synthetic(spec, config.train_size, data_rng)
    val = generate_synthetic(spec, config.val_size, data_rng)
    cfg = config.net_config(spec)
    params = init_params(cfg, np.random.default_rng(init_seed))
    opt = AdamW(config.lr, weight_decay=config.weight_decay)
    plateau = PlateauScheduler(opt, config.lr_factor, config.lr_patience, config.min_lr)
    rng = np.random.default_rng(step_seed)
    val_int = int(val_seed.generate_state(1)[0])
    curve = []
    window = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(data), size=config.batch_size)
        params, breakdown = train_step(params, opt, cfg, data.take(idx), sched, config, rng)
        breakdown.update(step=step, lr=opt.lr)
        curve.append(breakdown)
        window.append(breakdown["total"])
        if step % config.eval_every == 0:
            plateau.step(float(np.mean(window)))
            window = []
            if progress is not None:
                progress(step, breakdown)
    val_loss = validation_loss(params, cfg, val, sched, config, val_int)
    return TrainResult(params, cfg, curve, val_loss, config)


def network_predictor(params, cfg):
    """Wrap trained parameters as ``predict(state, t) -> (logits, F_hat, L_hat)``."""

    def predict(state, t):
        out = forward(params, cfg, state, t)
        return out.A_logits, out.F_pred, out.L_pred

    return predict


def _categorical(logits, rng):
    p = softmax(logits)
    cum = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[:-1])
    return np.minimum((u[..., None] >= cum).sum(-1), p.shape[-1] - 1)


def sample_chain(predict, shapes, sched, count, rng, trace=None):
    """Run the n-step sampling chain and return the final ToyCrystal batch.

    ``shapes`` gives (N, K, D, lattice_dim). At step i the predictor sees
    theta_{i-1} and t = (i - 1)/n; beliefs are updated only while i < n.
    ``trace`` (a list) receives (i, state) before each forward pass.
    """
    N, K, D, Ld = shapes
    state = JointParamState(
        np.full((count, N, K), 1.0 / K),
        rng.uniform(-np.pi, np.pi, size=(count, D)),
        np.zeros((count, D)),
        np.zeros((count, Ld)),
        np.ones(count),
    )
    n = sched.n
    for i in range(1, n + 1):
        t = (i - 1) / n
        if trace is not None:
            trace.append((i, state))
        logits, f_hat, l_hat = predict(state, t)
        if i < n:
            a_l = gaussian_alpha(i, sched.gauss)
            y_l = l_hat + rng.standard_normal(l_hat.shape) / math.sqrt(a_l)
            lattice = gauss_update(_Gauss(state.mu_L, state.rho_L[:, None]), y_l, a_l)
            a_f = sched.vm_alphas[i - 1]
            y_f = sample_vm(f_hat, a_f, rng, size=f_hat.shape)
            torus = bayesian_update(TorusBelief(state.m_F, state.c_F), SenderDraw(y_f, a_f))
            a_a = discrete_alpha(i, sched.disc)
            k = _categorical(logits, rng)
            y_a = sender_draw(k, a_a, K, rng)
            with np.errstate(divide="ignore"):
                log_theta = np.log(state.theta_A)
            state = JointParamState(softmax(log_theta + y_a), torus.m, torus.c, lattice.mu, lattice.rho[:, 0])
    A_hat = _categorical(logits, rng)
    return ToyCrystal(A_hat, wrap(f_hat), np.asarray(l_hat, dtype=np.float64))


@dataclass(frozen=True)
class _Gauss:
    mu: np.ndarray
    rho: np.ndarray


def sample(predict, shapes, sched, count, seed, chunk_size=1024, threads=1):
    """Chunked sampling; chunk seeds are fixed so output ignores ``threads``."""
    chunks = [(s, min(chunk_size, count - s)) for s in range(0, count, chunk_size)]
    seeds = np.random.SeedSequence(seed).spawn(len(chunks))

    def run(k):
        return sample_chain(predict, shapes, sched, chunks[k][1], np.random.default_rng(seeds[k]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(chunks))))
    else:
        parts = [run(k) for k in range(len(chunks))]
    return ToyCrystal(
        np.concatenate([p.A for p in parts]),
        np.concatenate([p.F for p in parts]),
        np.concatenate([p.L for p in parts]),
    )


HIST_BINS = 64
MIN_EVAL_SAMPLES = 1000


def histogram_kl(angles, pdf, bins=HIST_BINS, sub=64):
    """KL(empirical bin frequencies || reference bin masses) on [-pi, pi)."""
    edges = np.linspace(-np.pi, np.pi, bins + 1)
    counts, _ = np.histogram(wrap(angles), bins=edges)
    p = counts / counts.sum()
    width = TWO_PI / bins
    pts = edges[:-1, None] + width * (np.arange(sub) + 0.5) / sub
    q = pdf(pts).mean(axis=1) * width
    q = q / q.sum()
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def energy_distance(x, y, chunk=512):
    """2 E|X - Y| - E|X - X'| - E|Y - Y'| for two point clouds."""

    def mean_dist(a, b):
        total = 0.0
        for s in range(0, len(a), chunk):
            d = a[s:s + chunk, None, :] - b[None, :, :]
            total += np.sqrt(np.sum(d * d, axis=-1)).sum()
        return total / (len(a) * len(b))

    return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)


def mode_posterior_from_F(F, spec):
    lp = np.log(np.asarray(spec.mode_weights))[None, :].repeat(len(F), 0)
    for k, mean in enumerate(np.asarray(spec.mode_means)):
        lp[:, k] += np.sum(spec.mode_conc * np.cos(F - mean), axis=1)
    return np.argmax(lp, axis=1)


def mode_posterior_from_A(A, spec):
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(spec.class_probs))
        lw = np.log(np.asarray(spec.mode_weights))
    scores = lw[None, :] + np.stack([logp[k][A].sum(1) for k in range(len(lw))], axis=1)
    return np.argmax(scores, axis=1)


def _canonical_order(samples):
    keys = [samples.L[:, j] for j in reversed(range(samples.L.shape[1]))]
    keys += [samples.F[:, j] for j in reversed(range(samples.F.shape[1]))]
    keys += [samples.A[:, j] for j in reversed(range(samples.A.shape[1]))]
    return np.lexsort(keys)


def evaluate(samples, spec, ref_seed=0, ref_size=4000):
    """Toy-scale quality metrics; invariant to the order of ``samples``."""
    if len(samples) < MIN_EVAL_SAMPLES:
        raise ValueError(f"evaluate needs at least {MIN_EVAL_SAMPLES} samples, got {len(samples)}")
    samples = samples.take(_canonical_order(samples))
    kls = [histogram_kl(samples.F[:, d], lambda x, d=d: spec.torus_marginal_pdf(x, d)) for d in range(spec.D)]
    ref = generate_synthetic(spec, ref_size, np.random.default_rng(ref_seed))
    ed = energy_distance(samples.L, ref.L)
    freq = np.bincount(samples.A.ravel(), minlength=spec.K) / samples.A.size
    tv = 0.5 * float(np.abs(freq - spec.class_marginal()).sum())
    agree = float(np.mean(mode_posterior_from_A(samples.A, spec) == mode_posterior_from_F(samples.F, spec)))
    return {
        "hist_kl": [float(k) for k in kls],
        "hist_kl_max": float(max(kls)),
        "lattice_energy_distance": float(ed),
        "type_marginal_tv": tv,
        "class_mode_agreement": agree,
        "count": len(samples),
    }


def nfe_metrics(result, spec, nfe=(10, 50), eval_count=5000, cache_dir=None, sample_seed=1):
    """Sample a trained model at each step count and score the samples."""
    cfg = result.train_config
    shapes = (spec.N, spec.K, spec.D, spec.lattice_dim)
    out = {}
    for n in nfe:
        sched = build_schedules(n, cfg.c_final, cfg.sigma1_sq, cfg.beta1, spec.K, cache_dir)
        samples = sample(network_predictor(result.params, result.cfg), shapes, sched, eval_count, sample_seed)
        out[n] = evaluate(samples, spec)
    return out


def ablation_row(result, metrics_by_nfe):
    row = {"val_loss": result.val["total"]}
    for n, m in metrics_by_nfe.items():
        row[f"hist_kl_n{n}"] = m["hist_kl"]
        row[f"hist_kl_mean_n{n}"] = float(np.mean(m["hist_kl"]))
    return row


def ablation(config, spec, eval_count=5000, nfe=(10, 50), cache_dir=None, sample_seed=1):
    """Train with and without entropy conditioning under identical seeds and budgets."""
    table = {}
    for label, flag in (("entropy_cond", True), ("time_only", False)):
        result = train(replace(config, entropy_cond=flag), spec, cache_dir=cache_dir)
        table[label] = ablation_row(result, nfe_metrics(result, spec, nfe, eval_count, cache_dir, sample_seed))
    return table
