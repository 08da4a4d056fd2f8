"""Desk-scale denoiser backends, including a trainable numpy convnet.

The trainable model is a two-layer 3x3 convnet with FiLM-style modulation and
a time-gated skip from the latent to the output:

    u    = conv1(concat(z, control))
    h    = tanh(gamma(t) * u + beta(prompt))
    eps  = conv2(h) + gate(t) * z

There is deliberately no learned time-varying bias: with no conditioning the
prediction depends on t only through gamma(t) and gate(t), both of which act
on the latent and fall under the trainer's latent gain budget.  Naive DDIM
inversion evaluates the predictor one ladder rung away from where sampling
does, so any unbudgeted time wobble of the unconditional output would break
sample(invert(z)) round-trips.  Everything runs in plain numpy so results are
bit-reproducible across process counts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .conditioning import ConditioningBundle
from .diffusion import DenoiserBackend, DiffusionSchedule, LatentGrid
from .errors import BackendError, ConfigError, GenerationError

__all__ = [
    "ZeroDenoiser",
    "ConstantDenoiser",
    "ScalarLinearDenoiser",
    "ToyDenoiser",
    "TrainingLog",
    "train_toy_denoiser",
    "save_toy_denoiser",
    "load_toy_denoiser",
]

logger = logging.getLogger(__name__)

_TIME_FEATURES = 8


class ZeroDenoiser(DenoiserBackend):
    """Predicts zero noise everywhere; handy for closed-form identities."""

    accepts_control = True

    def predict_noise(self, latent: LatentGrid, t: int, cond=None) -> np.ndarray:
        return np.zeros_like(latent.data)


class ConstantDenoiser(DenoiserBackend):
    """Predicts a fixed, input-independent noise field."""

    accepts_control = True

    def __init__(self, value: float = 0.1):
        self.value = float(value)

    def predict_noise(self, latent: LatentGrid, t: int, cond=None) -> np.ndarray:
        return np.full_like(latent.data, self.value)


class ScalarLinearDenoiser(DenoiserBackend):
    """eps_hat = slope * z; the smallest input-dependent backend worth having."""

    accepts_control = True

    def __init__(self, slope: float = 0.1):
        self.slope = float(slope)

    def predict_noise(self, latent: LatentGrid, t: int, cond=None) -> np.ndarray:
        return self.slope * latent.data


# ---------------------------------------------------------------------------
# numpy conv primitives (3x3, stride 1, 'same' padding)
# ---------------------------------------------------------------------------


def _conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x [B,C,H,W], w [O,C,3,3] -> [B,O,H,W]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    return np.einsum("bchwij,ocij->bohw", win, w, optimize=True)


def _conv3x3_grad_w(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    return np.einsum("bchwij,bohw->ocij", win, dout, optimize=True)


def _conv3x3_grad_x(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    dp = np.pad(dout, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(dp, (3, 3), axis=(2, 3))
    return np.einsum("bohwij,ocij->bchw", win, w[:, :, ::-1, ::-1], optimize=True)


def _time_features(t: np.ndarray, num_train_steps: int) -> np.ndarray:
    # t [B] -> [B, 8]; bounded periodic features of the normalized timestep
    tau = np.asarray(t, dtype=np.float64) / float(num_train_steps)
    cols = [
        np.ones_like(tau),
        tau,
        np.sin(math.pi * tau),
        np.cos(math.pi * tau),
        np.sin(2.0 * math.pi * tau),
        np.cos(2.0 * math.pi * tau),
        np.sin(4.0 * math.pi * tau),
        np.cos(4.0 * math.pi * tau),
    ]
    return np.stack(cols, axis=-1)


class ToyDenoiser(DenoiserBackend):
    """Trainable desk-scale noise predictor (see module docstring).

    Control tensors are concatenated to the latent channels; the channel
    budget is fixed at ``1 + max_instances`` (background plus instance slots),
    with missing slots zero-padded and extras dropped with a warning.
    """

    accepts_control = True

    def __init__(
        self,
        latent_channels: int = 3,
        hidden_channels: int = 12,
        max_instances: int = 4,
        prompt_dim: int = 64,
        num_train_steps: int = 1000,
        seed: int = 0,
    ):
        if latent_channels < 1 or hidden_channels < 1 or max_instances < 0:
            raise ConfigError("channel counts must be positive")
        self.latent_channels = latent_channels
        self.hidden_channels = hidden_channels
        self.control_channels = 1 + max_instances
        self.prompt_dim = prompt_dim
        self.num_train_steps = num_train_steps
        cin = latent_channels + self.control_channels
        rng = np.random.default_rng(seed)

        def init(*shape, scale):
            return (rng.standard_normal(shape) * scale).astype(np.float32)

        # No learned time-varying bias anywhere: at cond=None the predictor's
        # timestep dependence lives entirely in the gated latent pathway, so
        # the trainer's latent gain budget also bounds the inversion mismatch.
        ch, co, ft = hidden_channels, latent_channels, _TIME_FEATURES
        self.params = {
            "w1": init(ch, cin, 3, 3, scale=0.05 / math.sqrt(cin * 9)),
            "w_gamma": np.zeros((ch, ft), dtype=np.float32),
            "w_prompt": init(ch, prompt_dim, scale=0.01),
            "w2": init(co, ch, 3, 3, scale=0.05 / math.sqrt(ch * 9)),
            "b2": np.zeros(co, dtype=np.float32),
            "w_gate": np.zeros((co, ft), dtype=np.float32),
        }

    # -- batch forward/backward used by the trainer ------------------------

    def _forward(self, x, z, tfeat, pvec, want_cache=False):
        p = self.params
        u = _conv3x3(x, p["w1"])
        gamma = 1.0 + tfeat @ p["w_gamma"].T
        beta = pvec @ p["w_prompt"].T
        a = gamma[:, :, None, None] * u + beta[:, :, None, None]
        h = np.tanh(a)
        v = _conv3x3(h, p["w2"]) + p["b2"][None, :, None, None]
        gate = tfeat @ p["w_gate"].T
        eps = v + gate[:, :, None, None] * z
        if not want_cache:
            return eps, None
        return eps, {"x": x, "z": z, "u": u, "gamma": gamma, "h": h, "gate": gate,
                     "tfeat": tfeat, "pvec": pvec}

    def _backward(self, d_eps, cache):
        p = self.params
        x, z, u, gamma, h = cache["x"], cache["z"], cache["u"], cache["gamma"], cache["h"]
        tfeat, pvec, gate = cache["tfeat"], cache["pvec"], cache["gate"]
        d_gate_b = np.einsum("bohw,bohw->bo", d_eps, z)
        grads = {
            "w_gate": np.einsum("bo,bf->of", d_gate_b, tfeat),
            "b2": d_eps.sum(axis=(0, 2, 3)),
            "w2": _conv3x3_grad_w(h, d_eps),
        }
        d_h = _conv3x3_grad_x(d_eps, p["w2"])
        d_a = d_h * (1.0 - h * h)
        d_gamma_b = np.einsum("bchw,bchw->bc", d_a, u)
        d_beta_b = d_a.sum(axis=(2, 3))
        grads["w_gamma"] = np.einsum("bc,bf->cf", d_gamma_b, tfeat)
        grads["w_prompt"] = np.einsum("bc,bp->cp", d_beta_b, pvec)
        d_u = gamma[:, :, None, None] * d_a
        grads["w1"] = _conv3x3_grad_w(x, d_u)
        return grads

    # -- conditioning plumbing --------------------------------------------

    def _standardize_control(self, control: Optional[np.ndarray], hw) -> np.ndarray:
        kc = self.control_channels
        if control is None:
            return np.zeros((kc,) + tuple(hw), dtype=np.float32)
        control = np.asarray(control)
        if control.shape[1:] != tuple(hw):
            raise BackendError(
                f"control spatial shape {control.shape[1:]} != latent {tuple(hw)}"
            )
        k = control.shape[0]
        if k > kc:
            logger.warning("control has %d channels, keeping first %d", k, kc)
            return control[:kc].astype(np.float32)
        if k < kc:
            pad = np.zeros((kc - k,) + control.shape[1:], dtype=np.float32)
            return np.concatenate([control.astype(np.float32), pad], axis=0)
        return control.astype(np.float32)

    def _prompt_vector(self, cond: Optional[ConditioningBundle]) -> np.ndarray:
        if cond is None or cond.prompt is None:
            return np.zeros(self.prompt_dim, dtype=np.float64)
        vec = cond.prompt.vector
        if vec.size != self.prompt_dim:
            raise BackendError(
                f"prompt embedding has dim {vec.size}, model expects {self.prompt_dim}"
            )
        return vec

    def latent_gain_parts(self) -> tuple:
        """(gate peak, conv pathway bound) for ``||d eps_hat / d z||``.

        The gate part is the skip gate's peak magnitude over all timesteps;
        the conv part bounds the latent's route through conv1/tanh/conv2
        (conv operator norms bounded by 3x the Frobenius norm, tanh slope by
        1, gamma at its peak).  Their sum bounds the predictor's sensitivity
        to the latent at every timestep.
        """
        p = self.params
        grid = _time_features(np.arange(self.num_train_steps + 1), self.num_train_steps)
        gate_max = float(np.abs(grid @ p["w_gate"].T).max()) if p["w_gate"].size else 0.0
        gamma_max = float(np.abs(1.0 + grid @ p["w_gamma"].T).max())
        w1_z = p["w1"][:, : self.latent_channels]
        conv_gain = 9.0 * float(np.linalg.norm(w1_z)) * gamma_max * float(np.linalg.norm(p["w2"]))
        return gate_max, conv_gain

    def latent_gain_bound(self) -> float:
        """Upper bound on ``||d eps_hat / d z||`` over all timesteps.

        Used by the trainer to keep the model inversion-friendly: the DDIM
        round-trip error grows linearly in this gain.
        """
        gate_max, conv_gain = self.latent_gain_parts()
        return gate_max + conv_gain

    def predict_noise(self, latent: LatentGrid, t: int, cond=None) -> np.ndarray:
        z = latent.data
        if z.shape[0] != self.latent_channels:
            raise BackendError(
                f"latent has {z.shape[0]} channels, model expects {self.latent_channels}"
            )
        ctrl = self._standardize_control(
            cond.control_map if cond is not None else None, z.shape[1:]
        )
        x = np.concatenate([z, ctrl.astype(z.dtype, copy=False)], axis=0)[None]
        tfeat = _time_features(np.array([t]), self.num_train_steps)
        pvec = self._prompt_vector(cond)[None]
        eps, _ = self._forward(x, z[None], tfeat, pvec)
        return eps[0]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainingLog:
    """Loss curve plus the knobs that produced it."""

    losses: list = field(default_factory=list)
    num_steps: int = 0
    batch_size: int = 0
    learning_rate: float = 0.0
    seed: int = 0

    @property
    def initial_loss(self) -> float:
        return self.losses[0] if self.losses else float("nan")

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    def update(self, params, grads):
        self.step += 1
        bc1 = 1.0 - self.b1**self.step
        bc2 = 1.0 - self.b2**self.step
        for k in params:
            g = grads[k].astype(np.float32)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def train_toy_denoiser(
    model: ToyDenoiser,
    schedule: DiffusionSchedule,
    batch_fn: Callable[[np.random.Generator, int], tuple],
    num_steps: int,
    batch_size: int = 8,
    learning_rate: float = 3e-3,
    seed: int = 0,
    latent_gain_budget: Optional[float] = 7e-4,
) -> TrainingLog:
    """Fit the toy denoiser with the standard noise-prediction objective.

    ``batch_fn(rng, n)`` must return ``(z0, control, prompt_vecs)`` with
    shapes ``[n, C, H, W]``, ``[n, Kc, H, W]`` and ``[n, prompt_dim]``.
    Training aborts on a non-finite loss rather than writing a broken model.

    ``latent_gain_budget`` caps :meth:`ToyDenoiser.latent_gain_bound` by
    rescaling the latent-facing weights (skip gate and the conv columns that
    see the latent) after every optimizer step.  DDIM inversion evaluates
    eps_hat one rung away from where sampling evaluates it, so the round-trip
    error is proportional to this gain; the budget trades denoising strength
    for a tight sample(invert(z)) round-trip.  The conditioning pathway is
    never rescaled.  Pass None to train unconstrained.
    """
    if num_steps < 0:
        raise ConfigError(f"num_steps must be >= 0, got {num_steps}")
    if latent_gain_budget is not None and latent_gain_budget <= 0.0:
        raise ConfigError(f"latent_gain_budget must be > 0, got {latent_gain_budget}")
    if schedule.num_steps != model.num_train_steps:
        raise ConfigError(
            f"schedule has T={schedule.num_steps} but model was built for "
            f"T={model.num_train_steps}"
        )
    rng = np.random.default_rng(seed)
    opt = _Adam(model.params, learning_rate)
    log = TrainingLog(
        num_steps=num_steps, batch_size=batch_size, learning_rate=learning_rate, seed=seed
    )
    sqrt_ab = np.sqrt(schedule.alpha_bars).astype(np.float32)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bars).astype(np.float32)
    for _ in range(num_steps):
        z0, ctrl, pvec = batch_fn(rng, batch_size)
        z0 = np.asarray(z0, dtype=np.float32)
        ctrl = np.asarray(ctrl, dtype=np.float32)
        if ctrl.shape[1] != model.control_channels:
            raise ConfigError(
                f"batch control has {ctrl.shape[1]} channels, "
                f"model expects {model.control_channels}"
            )
        t = rng.integers(1, schedule.num_steps + 1, size=z0.shape[0])
        noise = rng.standard_normal(z0.shape, dtype=np.float32)
        coef_s = sqrt_ab[t - 1][:, None, None, None]
        coef_n = sqrt_1mab[t - 1][:, None, None, None]
        z_t = coef_s * z0 + coef_n * noise
        x = np.concatenate([z_t, ctrl], axis=1)
        tfeat = _time_features(t, schedule.num_steps).astype(np.float32)
        pv = np.asarray(pvec, dtype=np.float32)
        eps_hat, cache = model._forward(x, z_t, tfeat, pv, want_cache=True)
        resid = eps_hat - noise
        loss = float(np.mean(resid * resid))
        if not math.isfinite(loss):
            raise GenerationError(f"training diverged at step {opt.step}: loss={loss}")
        log.losses.append(loss)
        d_eps = (2.0 / resid.size) * resid
        grads = model._backward(d_eps, cache)
        opt.update(model.params, grads)
        if latent_gain_budget is not None:
            # Each pathway gets half the budget and is rescaled on its own,
            # so growth in the free parameters (w2, gamma) squeezes only the
            # conv route and never starves the gate of its share.
            gate_max, conv_gain = model.latent_gain_parts()
            half = 0.5 * latent_gain_budget
            if gate_max > half:
                model.params["w_gate"] *= half / gate_max
            if conv_gain > half:
                model.params["w1"][:, : model.latent_channels] *= half / conv_gain
    return log


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_toy_denoiser(model: ToyDenoiser, path) -> None:
    meta = {
        "latent_channels": model.latent_channels,
        "hidden_channels": model.hidden_channels,
        "max_instances": model.control_channels - 1,
        "prompt_dim": model.prompt_dim,
        "num_train_steps": model.num_train_steps,
    }
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_toy_denoiser(path) -> ToyDenoiser:
    with np.load(path) as blob:
        if "meta_json" not in blob:
            raise BackendError(f"checkpoint {path} lacks model metadata")
        meta = json.loads(bytes(blob["meta_json"].tobytes()).decode("utf-8"))
        model = ToyDenoiser(**meta)
        for k in model.params:
            key = f"param_{k}"
            if key not in blob:
                raise BackendError(f"checkpoint {path} is missing array {key}")
            model.params[k] = blob[key].astype(np.float32)
    return model
