"""Discriminators ``D = sigmoid(logit)`` and the policy rewards derived from them.

The expert (or target) class is always the positive class, so the optimal
logit is ``log(rho_expert / rho_policy)``. Two interchangeable backends share
one interface: an exact tabular oracle built from occupancy measures and a
learned network trained by logistic regression with a gradient penalty.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DivergedParameters, ShapeMismatch
from .fdiv import FDivergence, get_divergence
from .nn import MLP, Adam, InputNormalizer, gradient_penalty, load_checkpoint, save_checkpoint

DEFAULT_LOGIT_CLIP = (-10.0, 10.0)


class RewardKind(str, Enum):
    GAIL = "GAIL"
    AIRL = "AIRL"
    FAIRL = "FAIRL"
    FMAX = "FMAX"


@dataclass(frozen=True)
class RewardSpec:
    """A reward transform of the logit; ``divergence`` is set only for ``FMAX``."""

    kind: RewardKind
    divergence: FDivergence | None = None

    def __str__(self) -> str:
        if self.kind is RewardKind.FMAX:
            return f"FMAX({self.divergence})"
        return self.kind.value


def parse_reward(kind) -> RewardSpec:
    """Accepts ``RewardSpec``, ``RewardKind``, or strings such as ``"AIRL"`` or ``"FMAX(ForwardKL)"``."""
    if isinstance(kind, RewardSpec):
        return kind
    if isinstance(kind, RewardKind):
        if kind is RewardKind.FMAX:
            raise ValueError("FMAX rewards need a divergence, e.g. 'FMAX(ReverseKL)'")
        return RewardSpec(kind)
    text = str(kind).strip()
    if text.upper().startswith("FMAX"):
        inner = text[4:].strip().strip("()[]: ")
        if not inner:
            raise ValueError("FMAX rewards need a divergence, e.g. 'FMAX(ReverseKL)'")
        return RewardSpec(RewardKind.FMAX, get_divergence(inner))
    try:
        return RewardSpec(RewardKind(text.upper()))
    except ValueError:
        raise ValueError(f"unknown reward kind {kind!r}") from None


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(log_sigmoid(x))


def reward_from_logit(logit, kind) -> np.ndarray:
    """Policy reward as a function of the (already clipped) logit.

    GAIL ``log D``; AIRL the logit itself; FAIRL ``-logit * exp(logit)``;
    ``FMAX(f)`` the conjugate ``f*`` evaluated at the optimal critic value
    implied by the logit, ``f*(f'(exp(logit)))``.
    """
    spec = parse_reward(kind)
    ell = np.asarray(logit, dtype=float)
    if spec.kind is RewardKind.GAIL:
        return log_sigmoid(ell)
    if spec.kind is RewardKind.AIRL:
        return ell.copy()
    if spec.kind is RewardKind.FAIRL:
        return -ell * np.exp(ell)
    f = spec.divergence
    return f.conjugate_unchecked(f.t_from_logit(ell))


def one_hot_features(states, actions, n_states: int, n_actions: int | None = None) -> np.ndarray:
    """``one_hot(s)`` concatenated with ``one_hot(a)``; actions omitted when ``n_actions`` is None."""
    s = np.asarray(states, dtype=int).ravel()
    width = n_states + (n_actions or 0)
    out = np.zeros((s.size, width))
    out[np.arange(s.size), s] = 1.0
    if n_actions:
        a = np.asarray(actions, dtype=int).ravel()
        out[np.arange(s.size), n_states + a] = 1.0
    return out


class Discriminator:
    """Common interface: ``logit``, ``probability`` and ``reward``."""

    logit_clip: tuple[float, float] | None

    def raw_logit(self, x) -> np.ndarray:
        raise NotImplementedError

    def logit(self, x) -> np.ndarray:
        ell = self.raw_logit(x)
        if self.logit_clip is not None:
            ell = np.clip(ell, *self.logit_clip)
        return ell

    def probability(self, x) -> np.ndarray:
        return sigmoid(self.logit(x))

    def reward(self, x, kind) -> np.ndarray:
        return reward_from_logit(self.logit(x), kind)


class ExactTabularDiscriminator(Discriminator):
    """Optimal discriminator computed from two joint occupancy tables.

    Inputs are ``(state, action)`` index pairs given as an integer array of
    shape ``(n, 2)`` (or a single pair). ``logit_table`` exposes the full
    ``(S, A)`` table.
    """

    def __init__(self, expert_occupancy, policy_occupancy, logit_clip=DEFAULT_LOGIT_CLIP):
        e = np.asarray(getattr(expert_occupancy, "joint", expert_occupancy), dtype=float)
        p = np.asarray(getattr(policy_occupancy, "joint", policy_occupancy), dtype=float)
        if e.shape != p.shape:
            raise ShapeMismatch(f"occupancy shapes differ: {e.shape} vs {p.shape}")
        self.expert = e
        self.policy = p
        self.logit_clip = logit_clip

    @property
    def shape(self) -> tuple[int, int]:
        return self.expert.shape

    def raw_logit_table(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            ell = np.log(self.expert) - np.log(self.policy)
        # both zero: no evidence either way
        return np.where((self.expert == 0) & (self.policy == 0), 0.0, ell)

    def logit_table(self) -> np.ndarray:
        ell = self.raw_logit_table()
        if self.logit_clip is not None:
            ell = np.clip(ell, *self.logit_clip)
        return ell

    def probability_table(self) -> np.ndarray:
        return sigmoid(self.logit_table())

    def reward_table(self, kind) -> np.ndarray:
        return reward_from_logit(self.logit_table(), kind)

    def _index(self, x):
        idx = np.asarray(x, dtype=int)
        single = idx.ndim == 1
        idx = np.atleast_2d(idx)
        if idx.shape[1] != 2:
            raise ShapeMismatch(f"tabular inputs are (state, action) pairs, got shape {np.shape(x)}")
        S, A = self.shape
        if np.any(idx < 0) or np.any(idx[:, 0] >= S) or np.any(idx[:, 1] >= A):
            raise ShapeMismatch("state or action index out of range")
        return idx, single

    def raw_logit(self, x):
        idx, single = self._index(x)
        out = self.raw_logit_table()[idx[:, 0], idx[:, 1]]
        return out[0] if single else out


class LearnedDiscriminator(Discriminator):
    """MLP logit on normalised features, trained with logistic loss.

    The normaliser should be fitted on expert (or target) samples only.
    """

    def __init__(
        self,
        input_dim: int,
        hidden=(64, 64),
        activation: str = "tanh",
        seed: int = 0,
        step_size: float = 1e-3,
        normalizer: InputNormalizer | None = None,
        logit_clip=DEFAULT_LOGIT_CLIP,
    ):
        self.net = MLP([input_dim, *hidden, 1], activation, seed)
        self.normalizer = normalizer or InputNormalizer.identity(input_dim)
        self.optimizer = Adam(step_size)
        self.logit_clip = logit_clip
        self.rng = np.random.default_rng(seed)

    @property
    def input_dim(self) -> int:
        return self.net.in_dim

    def _features(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.input_dim:
            raise ShapeMismatch(f"discriminator expects dim {self.input_dim}, got {x.shape[1]}")
        return self.normalizer(x), single

    def raw_logit(self, x):
        z, single = self._features(x)
        out = self.net(z)[:, 0]
        return out[0] if single else out

    def loss_and_grad(self, expert_batch, policy_batch, grad_pen_weight: float = 0.0, rng=None):
        """Mean binary cross-entropy (expert positive) plus penalty, and its gradient."""
        xe, _ = self._features(expert_batch)
        xp, _ = self._features(policy_batch)
        if len(xe) == 0 or len(xp) == 0:
            raise ValueError("discriminator batches must be nonempty")
        x = np.vstack([xe, xp])
        y = np.concatenate([np.ones(len(xe)), np.zeros(len(xp))])
        ell = self.net(x)[:, 0]
        # softplus(-l) for positives, softplus(l) for negatives
        loss = float(np.mean(np.logaddexp(0.0, np.where(y == 1, -ell, ell))))
        dl = (sigmoid(ell) - y) / len(y)
        grad = self.net.backward(x, dl[:, None])
        if grad_pen_weight > 0:
            pen, g_pen = gradient_penalty(self.net, xe, xp, grad_pen_weight, rng or self.rng)
            loss += pen
            grad = grad + g_pen
        return loss, grad

    def train_step(self, expert_batch, policy_batch, grad_pen_weight: float = 0.0) -> float:
        """One optimiser step; returns the loss before the step."""
        loss, grad = self.loss_and_grad(expert_batch, policy_batch, grad_pen_weight)
        if not np.isfinite(loss):
            raise DivergedParameters("non-finite discriminator loss")
        self.net.set_params(self.optimizer.step(self.net.params, grad))
        return loss

    def accuracy(self, expert_batch, policy_batch) -> float:
        le = self.raw_logit(np.atleast_2d(expert_batch))
        lp = self.raw_logit(np.atleast_2d(policy_batch))
        return float((np.sum(le > 0) + np.sum(lp < 0)) / (np.size(le) + np.size(lp)))

    def save(self, path) -> None:
        save_checkpoint(self.net, path, extra={"normalizer": self.normalizer.to_dict(), "logit_clip": self.logit_clip})

    @classmethod
    def load(cls, path) -> "LearnedDiscriminator":
        net, extra = load_checkpoint(path)
        d = cls(net.in_dim, net.layer_sizes[1:-1], net.activation.value, net.seed)
        d.net = net
        if "normalizer" in extra:
            d.normalizer = InputNormalizer.from_dict(extra["normalizer"])
        clip = extra.get("logit_clip")
        d.logit_clip = tuple(clip) if clip is not None else None
        return d


def train_step(d: LearnedDiscriminator, expert_batch, policy_batch, grad_pen_weight: float = 0.0) -> float:
    return d.train_step(expert_batch, policy_batch, grad_pen_weight)
