"""Shared oracles and harnesses for the test modules."""

import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np

from torusbfn import autodiff as ad
from torusbfn.euclid_flow import GaussBelief, gauss_update
from torusbfn.net import NetConfig, forward, forward_on_tape, init_params
from torusbfn.pipeline import Schedules, ToyCrystal, flow_states, joint_loss, loss_and_grads, sample
from torusbfn.schedule import DiscreteScheduleParams, GaussianScheduleParams, gaussian_alpha
from torusbfn.special import wrap

MODALITY_WEIGHTS = {"A": (1.0, 0.0, 0.0), "F": (0.0, 1.0, 0.0), "L": (0.0, 0.0, 1.0)}


def random_setup(rng, batch=3, n=5):
    """A small random network, schedule, batch and flow state."""
    cfg = NetConfig(
        N=int(rng.integers(1, 4)), K=int(rng.integers(2, 5)), D=int(rng.integers(1, 4)),
        lattice_dim=int(rng.integers(1, 4)), hidden=int(rng.integers(3, 9)), layers=int(rng.integers(1, 3)),
        entropy_cond=bool(rng.integers(0, 2)), equivariant=bool(rng.integers(0, 2)), time_freqs=3,
    )
    params = {k: v + 0.3 * rng.standard_normal(v.shape) for k, v in init_params(cfg, rng).items()}
    sched = Schedules(
        n, rng.uniform(0.5, 50.0, n), GaussianScheduleParams(cfg.sigma1_sq, n), DiscreteScheduleParams(3.0, n, cfg.K)
    )
    data = ToyCrystal(
        rng.integers(0, cfg.K, size=(batch, cfg.N)),
        rng.uniform(-np.pi, np.pi, size=(batch, cfg.D)),
        rng.normal(size=(batch, cfg.lattice_dim)),
    )
    i = rng.integers(1, n + 1, size=batch)
    states = flow_states(data, i, sched, rng)
    return cfg, params, sched, data, i, states


def total_loss(params, cfg, data, i, states, sched, weights, draw_seed):
    tape = ad.Tape()
    pvars = {k: tape.const(v) for k, v in params.items()}
    out = forward_on_tape(tape, pvars, cfg, states, (np.asarray(i) - 1) / sched.n)
    total, _ = joint_loss(out, data, i, sched, weights, np.random.default_rng(draw_seed))
    return total.value.item()


def gradient_check(seed, modality, h=1e-5):
    """Max-norm relative error between tape and central-difference gradients."""
    rng = np.random.default_rng(seed)
    cfg, params, sched, data, i, states = random_setup(rng)
    wa, wf, wl = MODALITY_WEIGHTS[modality]
    weights = SimpleNamespace(weight_A=wa, weight_F=wf, weight_L=wl)
    draw_seed = seed + 1000
    _, grads = loss_and_grads(params, cfg, data, i, states, sched, weights, np.random.default_rng(draw_seed))
    num, ana = [], []
    for k, p in params.items():
        for idx in np.ndindex(p.shape):
            plus = {**params, k: p.copy()}
            minus = {**params, k: p.copy()}
            plus[k][idx] += h
            minus[k][idx] -= h
            fp = total_loss(plus, cfg, data, i, states, sched, weights, draw_seed)
            fm = total_loss(minus, cfg, data, i, states, sched, weights, draw_seed)
            num.append((fp - fm) / (2 * h))
            ana.append(grads[k][idx])
    num, ana = np.array(num), np.array(ana)
    return float(np.max(np.abs(num - ana)) / max(np.max(np.abs(num)), 1e-12))


def empirical_kl(a, b, bins=64):
    """KL between two angle histograms on [-pi, pi), with half-count smoothing of b."""
    edges = np.linspace(-np.pi, np.pi, bins + 1)
    p = np.histogram(wrap(a), edges)[0] + 0.0
    q = np.histogram(wrap(b), edges)[0] + 0.5
    p, q = p / p.sum(), q / q.sum()
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def shifted_stub(params, cfg, target):
    """An equivariant-mode network recentred on, and contracted toward, an internal target angle."""

    def predict(state, t):
        moved = replace(state, m_F=wrap(state.m_F - target))
        out = forward(params, cfg, moved, t)
        return out.A_logits, wrap(target + 0.3 * out.F_pred), out.L_pred

    return predict


def chain_shift_kls(shift, vm_alphas, count=20_000):
    """(shifted, unshifted) histogram KLs per torus dim between chains whose stub target differs by ``shift``."""
    cfg = NetConfig(hidden=16, equivariant=True)
    init_rng = np.random.default_rng(4)
    params = {k: v + 0.5 * init_rng.standard_normal(v.shape) for k, v in init_params(cfg, init_rng).items()}
    target = np.array([0.4, -1.1])
    n = len(vm_alphas)
    sched = Schedules(n, vm_alphas, GaussianScheduleParams(0.001, n), DiscreteScheduleParams(3.0, n, cfg.K))
    shapes = (cfg.N, cfg.K, cfg.D, cfg.lattice_dim)
    base = sample(shifted_stub(params, cfg, target), shapes, sched, count, seed=1)
    moved = sample(shifted_stub(params, cfg, target + shift), shapes, sched, count, seed=2)
    shifted = [empirical_kl(wrap(base.F[:, d] + shift), moved.F[:, d]) for d in range(cfg.D)]
    unshifted = [empirical_kl(base.F[:, d], moved.F[:, d]) for d in range(cfg.D)]
    return shifted, unshifted


def equivariant_lattice_stub(mu, t):
    """Psi(Q mu) = Q Psi(mu): a radial scaling of the input mean."""
    r = np.linalg.norm(mu, axis=-1, keepdims=True)
    return (1.5 + np.tanh(r)) * mu + 0.1 * t * mu


def lattice_chain(psi, noise, n, params):
    """The lattice branch of the sampling chain driven by given unit noise."""
    mu = np.zeros(noise.shape[1:])
    rho = 1.0
    for i in range(1, n + 1):
        out = psi(mu, (i - 1) / n)
        if i < n:
            a = gaussian_alpha(i, params)
            b = gauss_update(GaussBelief(mu, rho), out + noise[i - 1] / math.sqrt(a), a)
            mu, rho = b.mu, b.rho
    return out
