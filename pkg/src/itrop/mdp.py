"""Finite MDPs: exact and sampled Bellman operators for value and Q iteration."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import (ConfigurationError, ExactOperatorHandle, NonConvergenceError,
                   RandomOperatorFactory, RngStream)

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class MdpModel:
    """Tabular MDP with transition kernel (S, A, S), cost table (S, A), discount in (0, 1)."""

    transition: np.ndarray
    cost: np.ndarray
    discount: float

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=np.float64)
        c = np.asarray(self.cost, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {t.shape}")
        s, a, _ = t.shape
        if s < 1 or a < 1:
            raise ConfigurationError("need at least one state and one action")
        if c.shape != (s, a):
            raise ConfigurationError(f"cost must have shape ({s}, {a}), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ConfigurationError("cost table has non-finite entries")
        if np.any(t < 0):
            raise ConfigurationError("transition kernel has negative entries")
        sums = t.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > _ROW_SUM_TOL)
        if bad.size:
            si, ai = bad[0]
            raise ConfigurationError(
                f"transition row (s={si}, a={ai}) sums to {sums[si, ai]!r}, not 1")
        if not (0.0 < float(self.discount) < 1.0):
            raise ConfigurationError(f"discount must lie in (0, 1), got {self.discount!r}")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]


def _check_value(model: MdpModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.num_states,):
        raise ConfigurationError(
            f"value function must have shape ({model.num_states},), got {v.shape}")
    return v


def _check_q(model: MdpModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (model.num_states, model.num_actions):
        raise ConfigurationError(
            f"q table must have shape ({model.num_states}, {model.num_actions}), got {q.shape}")
    return q


def bellman_apply(model: MdpModel, v) -> np.ndarray:
    """One exact value-iteration sweep: min_a [ c(s,a) + discount * E v(s') ]."""
    v = _check_value(model, v)
    return (model.cost + model.discount * (model.transition @ v)).min(axis=1)


def q_apply(model: MdpModel, q) -> np.ndarray:
    """One exact Q-iteration sweep: c(s,a) + discount * E min_a' q(s', a')."""
    q = _check_q(model, q)
    w = q.min(axis=1)
    return model.cost + model.discount * (model.transition @ w)


def _sampling_weights(model: MdpModel) -> np.ndarray:
    # Rows renormalized exactly to 1 so the multinomial sampler never rejects
    # a row whose float sum sits a few ulp away from 1.
    p = model.transition.reshape(-1, model.num_states)
    return np.ascontiguousarray(p / p.sum(axis=1, keepdims=True))


def empirical_bellman_factory(model: MdpModel, sample_size: int) -> RandomOperatorFactory:
    """Sampled value-iteration operators.

    A realization draws, for every (s, a), the empirical distribution of
    sample_size i.i.d. next states; applying it replaces E v(s') by the
    sample mean.  All applications of one realization share its draws.
    """
    if sample_size < 1:
        raise ConfigurationError("sample_size must be >= 1")
    pvals = _sampling_weights(model)
    s, a = model.num_states, model.num_actions
    cost, discount = model.cost, model.discount

    def realize(stream: RngStream):
        counts = stream.generator().multinomial(sample_size, pvals)
        weights = counts / sample_size  # (S*A, S), rows sum to 1

        def apply(v):
            v = _check_value(model, v)
            emp = weights @ v
            return (cost + discount * emp.reshape(s, a)).min(axis=1)

        return apply

    return RandomOperatorFactory(sample_size=sample_size, realize=realize, dimension=s)


def empirical_q_factory(model: MdpModel, sample_size: int) -> RandomOperatorFactory:
    """Sampled Q-iteration operators over flattened (S*A,) tables."""
    if sample_size < 1:
        raise ConfigurationError("sample_size must be >= 1")
    pvals = _sampling_weights(model)
    s, a = model.num_states, model.num_actions
    cost, discount = model.cost, model.discount

    def realize(stream: RngStream):
        counts = stream.generator().multinomial(sample_size, pvals)
        weights = counts / sample_size

        def apply(qflat):
            q = _check_q(model, np.asarray(qflat).reshape(s, a))
            w = q.min(axis=1)
            emp = weights @ w
            return (cost + discount * emp.reshape(s, a)).ravel()

        return apply

    return RandomOperatorFactory(sample_size=sample_size, realize=realize, dimension=s * a)


def empirical_bellman_apply(model: MdpModel, v, sample_size: int,
                            stream: RngStream) -> np.ndarray:
    """One sampled value sweep; calls with the same stream share their draws."""
    return empirical_bellman_factory(model, sample_size).realize(stream)(v)


def empirical_q_apply(model: MdpModel, q, sample_size: int, stream: RngStream) -> np.ndarray:
    """One sampled Q sweep on an (S, A) table; same-stream calls share draws."""
    q = _check_q(model, q)
    flat = empirical_q_factory(model, sample_size).realize(stream)(q.ravel())
    return flat.reshape(model.num_states, model.num_actions)


def bellman_operator(model: MdpModel) -> ExactOperatorHandle:
    """Exact value sweep as an operator handle (a discount-contraction in sup norm)."""
    return ExactOperatorHandle(apply=lambda v: bellman_apply(model, v),
                               dimension=model.num_states,
                               claimed_modulus=model.discount)


def q_operator(model: MdpModel) -> ExactOperatorHandle:
    """Exact Q sweep over flattened tables as an operator handle."""
    s, a = model.num_states, model.num_actions

    def apply(qflat):
        return q_apply(model, np.asarray(qflat).reshape(s, a)).ravel()

    return ExactOperatorHandle(apply=apply, dimension=s * a, claimed_modulus=model.discount)


def sample_next_states(model: MdpModel, state: int, action: int, sample_size: int,
                       stream: RngStream) -> np.ndarray:
    """sample_size i.i.d. next states from p(. | state, action).

    Inverse-CDF draws: binary search of uniforms in the cumulative row.
    """
    if not (0 <= state < model.num_states):
        raise ConfigurationError(f"state {state} out of range")
    if not (0 <= action < model.num_actions):
        raise ConfigurationError(f"action {action} out of range")
    if sample_size < 1:
        raise ConfigurationError("sample_size must be >= 1")
    cum = np.cumsum(model.transition[state, action])
    cum[-1] = 1.0  # guard the top end against accumulated rounding
    u = stream.generator().random(sample_size)
    return np.searchsorted(cum, u, side="right").astype(np.int64)


def solve_exact(model: MdpModel, kind: str = "value", tol: float = 1e-10,
                max_iterations: int = 10 ** 6) -> np.ndarray:
    """Fixed point of the exact sweep by iteration.

    Stops once the sup-norm step shrinks below tol * (1 - discount) / discount,
    which bounds the remaining distance to the fixed point by tol.
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    if kind == "value":
        x = np.zeros(model.num_states)
        step = lambda y: bellman_apply(model, y)
    elif kind == "q":
        x = np.zeros((model.num_states, model.num_actions))
        step = lambda y: q_apply(model, y)
    else:
        raise ConfigurationError(f"kind must be 'value' or 'q', got {kind!r}")
    threshold = tol * (1.0 - model.discount) / model.discount
    for _ in range(max_iterations):
        nxt = step(x)
        if np.max(np.abs(nxt - x)) <= threshold:
            return nxt
        x = nxt
    raise NonConvergenceError(
        f"no fixed point to tolerance {tol} within {max_iterations} sweeps")


def random_mdp(num_states: int, num_actions: int, seed: int, discount: float = 0.9) -> MdpModel:
    """Seeded random instance: rows are normalized i.i.d. uniforms, costs uniform(0,1)."""
    if num_states < 1 or num_actions < 1:
        raise ConfigurationError("need at least one state and one action")
    rng = RngStream(seed).generator()
    raw = rng.random((num_states, num_actions, num_states))
    transition = raw / raw.sum(axis=2, keepdims=True)
    cost = rng.random((num_states, num_actions))
    return MdpModel(transition=transition, cost=cost, discount=discount)


def hoeffding_bound(num_states: int, num_actions: int, eps: float, sample_size: int,
                    radius: float) -> float:
    """Tail bound on P(sup-deviation of one sampled sweep > eps) for ||v||_inf <= radius.

    May exceed 1, in which case it is vacuous.
    """
    if num_states < 1 or num_actions < 1:
        raise ConfigurationError("need at least one state and one action")
    if eps <= 0 or radius <= 0 or sample_size < 1:
        raise ConfigurationError("eps and radius must be positive, sample_size >= 1")
    return float(2.0 * num_states * num_actions
                 * np.exp(-eps * sample_size / (num_states * radius ** 2)))


_MODEL_KEYS = {"num_states", "num_actions", "discount", "transition", "cost"}


def model_to_dict(model: MdpModel) -> dict:
    return {
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "discount": model.discount,
        "transition": model.transition.tolist(),
        "cost": model.cost.tolist(),
    }


def model_from_dict(data: dict) -> MdpModel:
    if not isinstance(data, dict):
        raise ConfigurationError("model document must be a JSON object")
    unknown = set(data) - _MODEL_KEYS
    if unknown:
        raise ConfigurationError(f"unknown model keys: {sorted(unknown)}")
    missing = _MODEL_KEYS - set(data)
    if missing:
        raise ConfigurationError(f"missing model keys: {sorted(missing)}")
    model = MdpModel(transition=np.asarray(data["transition"], dtype=np.float64),
                     cost=np.asarray(data["cost"], dtype=np.float64),
                     discount=float(data["discount"]))
    if model.num_states != data["num_states"] or model.num_actions != data["num_actions"]:
        raise ConfigurationError("declared num_states/num_actions do not match array shapes")
    return model


def save_model(model: MdpModel, path) -> None:
    """Write the model as JSON; floats round-trip losslessly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> MdpModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(data)
