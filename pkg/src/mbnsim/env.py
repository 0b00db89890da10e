"""The joint network-selection and subchannel-allocation decision process.

One episode builds one allocation: FeMBB agents act first (each picks a
(base station, subchannel) pair), then eURLLC agents (each picks a
(subchannel, mini-slot) pair that punctures the hosting subchannel). Every
agent acts exactly once per episode, in a per-episode random order within
its class. Accepted actions earn the marginal change of the scalarized
objective; infeasible or conflicting actions are rejected with a fixed
penalty and leave the state unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .phy import sinr
from .scenario import (NetworkState, UserClass, compute_gain_tensor,
                       refresh_fading)
from .service import decoding_error_probability, punctured_rate, shannon_rate

ALLOCATION_SCHEMA_VERSION = 1
_UNASSIGNED_KEY = (1 << 30, 1 << 30, 1 << 30)


class AllocationError(ValueError):
    """An allocation violates a structural invariant."""


@dataclass
class Allocation:
    """FeMBB assignments plus the eURLLC mini-slot puncturing tensor.

    `beta[q, k, m]` marks eURLLC user q puncturing mini-slot m of subchannel
    k; `eurllc_host[q]` records the base station resolved to host that
    puncture. Unassigned entries are -1.
    """

    n_fembb: int
    n_eurllc: int
    n_subchannels: int
    n_minislots: int
    fembb_bs: np.ndarray = field(default=None)
    fembb_k: np.ndarray = field(default=None)
    beta: np.ndarray = field(default=None)
    eurllc_host: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.fembb_bs is None:
            self.fembb_bs = np.full(self.n_fembb, -1, dtype=int)
        if self.fembb_k is None:
            self.fembb_k = np.full(self.n_fembb, -1, dtype=int)
        if self.beta is None:
            self.beta = np.zeros(
                (self.n_eurllc, self.n_subchannels, self.n_minislots),
                dtype=np.int8)
        if self.eurllc_host is None:
            self.eurllc_host = np.full(self.n_eurllc, -1, dtype=int)

    def copy(self) -> "Allocation":
        return Allocation(self.n_fembb, self.n_eurllc, self.n_subchannels,
                          self.n_minislots, self.fembb_bs.copy(),
                          self.fembb_k.copy(), self.beta.copy(),
                          self.eurllc_host.copy())

    def validate(self) -> None:
        assigned = self.fembb_bs >= 0
        if not np.array_equal(assigned, self.fembb_k >= 0):
            raise AllocationError("fembb_bs and fembb_k must agree on assignment")
        pairs = {(int(b), int(k)) for b, k in
                 zip(self.fembb_bs[assigned], self.fembb_k[assigned])}
        if len(pairs) != int(assigned.sum()):
            raise AllocationError("a (bs, subchannel) pair is assigned twice")
        if self.beta.sum(axis=(1, 2)).max(initial=0) > 1:
            raise AllocationError("an eURLLC user punctures more than one mini-slot")
        if self.beta.sum(axis=0).max(initial=0) > 1:
            raise AllocationError("a (subchannel, mini-slot) pair is punctured twice")
        punctured = self.beta.sum(axis=(1, 2)) > 0
        if not np.array_equal(punctured, self.eurllc_host >= 0):
            raise AllocationError("eurllc_host must be set exactly for puncturing users")

    def eurllc_slot(self, q: int) -> tuple[int, int] | None:
        hits = np.argwhere(self.beta[q])
        if len(hits) == 0:
            return None
        return int(hits[0][0]), int(hits[0][1])

    def occupied(self, n_bs: int) -> np.ndarray:
        occ = np.zeros((n_bs, self.n_subchannels), dtype=bool)
        for f in range(self.n_fembb):
            if self.fembb_bs[f] >= 0:
                occ[self.fembb_bs[f], self.fembb_k[f]] = True
        return occ

    def puncture_counts(self, n_bs: int) -> np.ndarray:
        counts = np.zeros((n_bs, self.n_subchannels), dtype=int)
        for q in range(self.n_eurllc):
            slot = self.eurllc_slot(q)
            if slot is not None:
                counts[self.eurllc_host[q], slot[0]] += 1
        return counts

    def canonical_key(self) -> tuple:
        """Total order used for deterministic tie-breaking among optima."""
        f_part = tuple(
            (int(b), int(k), 0) if b >= 0 else _UNASSIGNED_KEY
            for b, k in zip(self.fembb_bs, self.fembb_k))
        u_part = []
        for q in range(self.n_eurllc):
            slot = self.eurllc_slot(q)
            u_part.append(_UNASSIGNED_KEY if slot is None
                          else (slot[0], slot[1], int(self.eurllc_host[q])))
        return f_part + tuple(u_part)

    def to_json(self) -> dict:
        punctures = []
        for q in range(self.n_eurllc):
            slot = self.eurllc_slot(q)
            punctures.append(None if slot is None
                             else [slot[0], slot[1], int(self.eurllc_host[q])])
        return {
            "schema_version": ALLOCATION_SCHEMA_VERSION,
            "n_fembb": self.n_fembb,
            "n_eurllc": self.n_eurllc,
            "n_subchannels": self.n_subchannels,
            "n_minislots": self.n_minislots,
            "fembb": [None if b < 0 else [int(b), int(k)]
                      for b, k in zip(self.fembb_bs, self.fembb_k)],
            "punctures": punctures,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Allocation":
        if data.get("schema_version") != ALLOCATION_SCHEMA_VERSION:
            raise AllocationError(
                f"unsupported allocation schema: {data.get('schema_version')}")
        alloc = cls(data["n_fembb"], data["n_eurllc"], data["n_subchannels"],
                    data["n_minislots"])
        for f, entry in enumerate(data["fembb"]):
            if entry is not None:
                alloc.fembb_bs[f], alloc.fembb_k[f] = entry
        for q, entry in enumerate(data["punctures"]):
            if entry is not None:
                k, m, host = entry
                alloc.beta[q, k, m] = 1
                alloc.eurllc_host[q] = host
        alloc.validate()
        return alloc


@dataclass(frozen=True)
class ScalarizedObjective:
    """Weighted-sum scalarization of FeMBB rate and eURLLC reliability."""

    weight_rate: float = 0.5
    weight_reliability: float = 0.5
    rate_scale_bps: float = 1.0
    reliability_scale: float = 1.0
    violation_penalty: float = 1.0

    def __post_init__(self):
        if self.weight_rate < 0 or self.weight_reliability < 0:
            raise ValueError("weights must be >= 0")
        if abs(self.weight_rate + self.weight_reliability - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if self.rate_scale_bps <= 0 or self.reliability_scale <= 0:
            raise ValueError("normalizers must be > 0")

    @classmethod
    def for_state(cls, state: NetworkState, weight_rate: float = 0.5,
                  violation_penalty: float = 1.0) -> "ScalarizedObjective":
        """Normalizers derived from the scenario: the rate scale is the user
        count times the best interference-free link rate, the reliability
        scale is the eURLLC user count."""
        best = 0.0
        for i in range(state.n_users):
            for j in range(state.n_bs):
                if not state.reachable[i, j]:
                    continue
                power = state.subchannel_power_w(j)
                noise = state.noise_w(j)
                w = state.frame_for(j).subchannel_bandwidth_hz
                g = state.gains[i, j, :].max()
                if g > 0:
                    best = max(best, shannon_rate(w, power * g / noise))
        if best <= 0:
            best = state.qos.fembb_min_rate_bps
        n_f = max(len(state.fembb_users), 1)
        n_u = max(len(state.eurllc_users), 1)
        return cls(weight_rate=weight_rate,
                   weight_reliability=1.0 - weight_rate,
                   rate_scale_bps=n_f * best,
                   reliability_scale=float(n_u),
                   violation_penalty=violation_penalty)


@dataclass
class ObjectiveBreakdown:
    value: float
    fembb_rates_bps: np.ndarray   # punctured rate per FeMBB user (0 if unassigned)
    fembb_ok: np.ndarray          # assigned and meeting the rate target
    eurllc_errors: np.ndarray     # decoding error per eURLLC user (1 if unserved)
    eurllc_ok: np.ndarray         # punctured a slot and meeting the error target

    @property
    def fembb_total_rate_bps(self) -> float:
        return float(self.fembb_rates_bps.sum())

    @property
    def eurllc_feasible_count(self) -> int:
        return int(self.eurllc_ok.sum())


def link_gamma(state: NetworkState, active: np.ndarray, user: int, j: int,
               k: int) -> float:
    """SINR of user's link on (bs j, subchannel k); co-channel interference
    comes from other same-band stations active on k."""
    band = state.band_of(j)
    interference = 0.0
    for j2 in range(state.n_bs):
        if j2 != j and active[j2, k] and state.band_of(j2) is band:
            interference += state.subchannel_power_w(j2) * state.gains[user, j2, k]
    return sinr(state.subchannel_power_w(j), state.gains[user, j, k],
                interference, state.noise_w(j))


def resolve_eurllc_host(state: NetworkState, occupied: np.ndarray, user: int,
                        k: int) -> int:
    """Base station hosting an eURLLC puncture on subchannel k.

    Prefers, among stations reachable by the user, the best-gain one whose
    subchannel k carries a FeMBB assignment; if none does, falls back to the
    best-gain reachable station (the RF station is always reachable).
    """
    best_occ, best_free = -1, -1
    for j in range(state.n_bs):
        if not state.reachable[user, j]:
            continue
        if occupied[j, k]:
            if best_occ < 0 or state.gains[user, j, k] > state.gains[user, best_occ, k]:
                best_occ = j
        if best_free < 0 or state.gains[user, j, k] > state.gains[user, best_free, k]:
            best_free = j
    return best_occ if best_occ >= 0 else best_free


def objective_breakdown(state: NetworkState, alloc: Allocation,
                        weights: ScalarizedObjective) -> ObjectiveBreakdown:
    alloc.validate()
    n_bs = state.n_bs
    occupied = alloc.occupied(n_bs)
    punct = alloc.puncture_counts(n_bs)
    active = occupied | (punct > 0)
    minislots = state.n_minislots
    fembb_ids = state.fembb_users
    eurllc_ids = state.eurllc_users
    n_f, n_u = len(fembb_ids), len(eurllc_ids)
    penalty = weights.violation_penalty

    rates = np.zeros(n_f)
    fembb_ok = np.zeros(n_f, dtype=bool)
    s_rate = 0.0
    for f, user in enumerate(fembb_ids):
        j = int(alloc.fembb_bs[f])
        if j < 0:
            if state.fembb_qos_enforced:
                s_rate -= penalty / n_f
            continue
        k = int(alloc.fembb_k[f])
        gamma = link_gamma(state, active, user, j, k)
        w = state.frame_for(j).subchannel_bandwidth_hz
        rates[f] = punctured_rate(w, gamma, int(punct[j, k]), minislots)
        fembb_ok[f] = rates[f] >= state.qos.fembb_min_rate_bps
        if not state.fembb_qos_enforced:
            s_rate += rates[f] / weights.rate_scale_bps
        elif fembb_ok[f]:
            s_rate += rates[f] / weights.rate_scale_bps
        else:
            s_rate -= penalty / n_f

    errors = np.ones(n_u)
    eurllc_ok = np.zeros(n_u, dtype=bool)
    s_rel = 0.0
    for q, user in enumerate(eurllc_ids):
        slot = alloc.eurllc_slot(q)
        if slot is None:
            s_rel -= penalty / max(n_u, 1)
            continue
        k, _ = slot
        host = int(alloc.eurllc_host[q])
        gamma = link_gamma(state, active, user, host, k)
        if gamma <= 0:
            errors[q] = 1.0
        else:
            errors[q] = decoding_error_probability(state.frame_for(host), gamma)
        eurllc_ok[q] = errors[q] <= state.qos.eurllc_max_error
        if eurllc_ok[q]:
            s_rel += (1.0 - errors[q]) / weights.reliability_scale
        else:
            s_rel -= penalty / n_u

    value = weights.weight_rate * s_rate + weights.weight_reliability * s_rel
    return ObjectiveBreakdown(value, rates, fembb_ok, errors, eurllc_ok)


def objective(state: NetworkState, alloc: Allocation,
              weights: ScalarizedObjective) -> float:
    """Scalarized objective of an allocation on a state."""
    return objective_breakdown(state, alloc, weights).value


def attach_serving(state: NetworkState, alloc: Allocation,
                   default_bs: int | None = None) -> None:
    """Record each user's serving base station on the state (for mobility).

    Unserved users get `default_bs` when given, else stay -1.
    """
    serving = np.full(state.n_users, -1, dtype=int)
    for f, user in enumerate(state.fembb_users):
        if alloc.fembb_bs[f] >= 0:
            serving[user] = alloc.fembb_bs[f]
    for q, user in enumerate(state.eurllc_users):
        if alloc.eurllc_host[q] >= 0:
            serving[user] = alloc.eurllc_host[q]
    if default_bs is not None:
        serving[serving < 0] = default_bs
    state.serving_bs = serving


class JnsaEnv:
    """Sequential multi-agent environment over one NetworkState.

    Single-writer: `step` mutates internal episode state and must be driven
    from one logical thread. Distinct instances are independent.
    """

    def __init__(self, state: NetworkState,
                 objective_cfg: ScalarizedObjective | None = None,
                 conflict_penalty: float = 1.0, seed: int = 0,
                 refresh_fading_on_reset: bool = True):
        self.state = state
        self.objective_cfg = objective_cfg or ScalarizedObjective.for_state(state)
        self.conflict_penalty = float(conflict_penalty)
        self.refresh_fading_on_reset = refresh_fading_on_reset
        self._rng = np.random.default_rng(seed)
        self.fembb_ids = state.fembb_users
        self.eurllc_ids = state.eurllc_users
        self._local_index = {u: f for f, u in enumerate(self.fembb_ids)}
        self._local_index.update({u: q for q, u in enumerate(self.eurllc_ids)})
        self.fembb_action_count = state.n_bs * state.n_subchannels
        self.eurllc_action_count = state.n_subchannels * state.n_minislots
        bitmap = state.n_bs * state.n_subchannels
        self.fembb_obs_dim = 2 + 2 * bitmap
        self.eurllc_obs_dim = 2 + 2 * bitmap + state.n_subchannels * state.n_minislots
        self._order: list[int] = []
        self._cursor = 0
        self._done = True
        self._alloc = Allocation(len(self.fembb_ids), len(self.eurllc_ids),
                                 state.n_subchannels, state.n_minislots)
        self._norm_gains = np.zeros_like(state.gains)
        self._obj_value = 0.0
        self.conflict_penalty_total = 0.0

    # -- episode control ---------------------------------------------------

    def reset(self) -> np.ndarray:
        if self.refresh_fading_on_reset:
            refresh_fading(self.state, self._rng)
        self._refresh_norm_gains()
        order = [int(u) for u in self._rng.permutation(self.fembb_ids)] if \
            self.fembb_ids else []
        order += [int(u) for u in self._rng.permutation(self.eurllc_ids)] if \
            self.eurllc_ids else []
        self._order = order
        self._cursor = 0
        self._done = len(order) == 0
        self._alloc = Allocation(len(self.fembb_ids), len(self.eurllc_ids),
                                 self.state.n_subchannels,
                                 self.state.n_minislots)
        self._obj_value = objective(self.state, self._alloc, self.objective_cfg)
        self.conflict_penalty_total = 0.0
        if self._done:
            return np.zeros(0)
        return self.observe(self._order[0])

    @property
    def current_agent(self) -> int | None:
        return None if self._done else self._order[self._cursor]

    @property
    def agent_order(self) -> list[int]:
        return list(self._order)

    @property
    def done(self) -> bool:
        return self._done

    @property
    def allocation(self) -> Allocation:
        return self._alloc

    @property
    def objective_value(self) -> float:
        return self._obj_value

    def user_class(self, user: int) -> UserClass:
        return self.state.users[user].user_class

    def action_count_for(self, user: int) -> int:
        return (self.fembb_action_count
                if self.user_class(user) is UserClass.FEMBB
                else self.eurllc_action_count)

    # -- observations --------------------------------------------------------

    def _refresh_norm_gains(self):
        lo, hi = self.state.gain_log_bounds
        g = self.state.gains
        with np.errstate(divide="ignore"):
            logs = np.where(g > 0, np.log10(np.maximum(g, 1e-300)), lo)
        norm = np.clip((logs - lo) / (hi - lo), 0.0, 1.0)
        norm *= self.state.reachable[:, :, None]
        self._norm_gains = norm

    def observe(self, user: int) -> np.ndarray:
        """Feature vector: class flag, QoS target level, candidate link gains
        (log min-max scaled, unreachable zeroed), FeMBB occupancy bitmap and,
        for eURLLC agents, the mini-slot puncture bitmap. All in [0, 1]."""
        state = self.state
        occ = self._alloc.occupied(state.n_bs).astype(float).ravel()
        gains = self._norm_gains[user].ravel()
        if self.user_class(user) is UserClass.FEMBB:
            margin = min(1.0, state.qos.fembb_min_rate_bps
                         / (self.objective_cfg.rate_scale_bps
                            / max(len(self.fembb_ids), 1)))
            head = np.array([0.0, margin])
            return np.concatenate([head, gains, occ])
        margin = min(1.0, -math.log10(state.qos.eurllc_max_error) / 20.0)
        head = np.array([1.0, margin])
        punct = (self._alloc.beta.sum(axis=0) > 0).astype(float).ravel()
        return np.concatenate([head, gains, occ, punct])

    # -- transition ----------------------------------------------------------

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        """Commit the current agent's action if feasible; reward is the
        marginal objective change, or minus the conflict penalty on
        rejection. Returns (next agent's observation, reward, episode done).
        """
        if self._done:
            raise RuntimeError("episode is finished; call reset()")
        user = self._order[self._cursor]
        if self.user_class(user) is UserClass.FEMBB:
            reward = self._step_fembb(user, int(action))
        else:
            reward = self._step_eurllc(user, int(action))
        self._cursor += 1
        self._done = self._cursor >= len(self._order)
        next_obs = (np.zeros(0) if self._done
                    else self.observe(self._order[self._cursor]))
        return next_obs, reward, self._done

    def _reject(self) -> float:
        self.conflict_penalty_total += self.conflict_penalty
        return -self.conflict_penalty

    def _step_fembb(self, user: int, action: int) -> float:
        state = self.state
        if not 0 <= action < self.fembb_action_count:
            raise IndexError(f"FeMBB action {action} outside 0..{self.fembb_action_count - 1}")
        j, k = divmod(action, state.n_subchannels)
        f = self._local_index[user]
        if not state.reachable[user, j]:
            return self._reject()
        if self._alloc.occupied(state.n_bs)[j, k]:
            return self._reject()
        candidate = self._alloc.copy()
        candidate.fembb_bs[f] = j
        candidate.fembb_k[f] = k
        br = objective_breakdown(state, candidate, self.objective_cfg)
        if state.fembb_qos_enforced and not br.fembb_ok[f]:
            return self._reject()
        reward = br.value - self._obj_value
        self._alloc = candidate
        self._obj_value = br.value
        return reward

    def _step_eurllc(self, user: int, action: int) -> float:
        state = self.state
        if not 0 <= action < self.eurllc_action_count:
            raise IndexError(f"eURLLC action {action} outside 0..{self.eurllc_action_count - 1}")
        k, m = divmod(action, state.n_minislots)
        q = self._local_index[user]
        if self._alloc.beta[:, k, m].any():
            return self._reject()
        host = resolve_eurllc_host(state, self._alloc.occupied(state.n_bs),
                                   user, k)
        if host < 0:
            return self._reject()
        candidate = self._alloc.copy()
        candidate.beta[q, k, m] = 1
        candidate.eurllc_host[q] = host
        br = objective_breakdown(state, candidate, self.objective_cfg)
        if not br.eurllc_ok[q]:
            return self._reject()
        reward = br.value - self._obj_value
        self._alloc = candidate
        self._obj_value = br.value
        return reward


# ---------------------------------------------------------------------------
# Perturbations used by the robustness experiments

def perturb_csi(state: NetworkState, delta: float, seed: int,
                mode: str = "verbatim") -> NetworkState:
    """Imperfect-CSI model: every gain becomes |sqrt(d)*h + sqrt(d-1)*w| with
    w standard complex normal ("verbatim", d >= 1). Mode "conventional" uses
    the Gauss-Markov mixing |sqrt(d)*h + sqrt(1-d)*w| for 0 <= d <= 1.
    Deterministic per seed; d = 1 is the identity in both modes.
    """
    if mode == "verbatim":
        if delta < 1.0:
            raise ValueError("verbatim CSI noise requires delta >= 1")
        noise_scale = math.sqrt(delta - 1.0)
    elif mode == "conventional":
        if not 0.0 <= delta <= 1.0:
            raise ValueError("conventional CSI noise requires delta in [0, 1]")
        noise_scale = math.sqrt(1.0 - delta)
    else:
        raise ValueError(f"unknown CSI noise mode: {mode}")
    new = state.copy()
    if noise_scale == 0.0:
        return new
    rng = np.random.default_rng(seed)
    shape = state.gains.shape
    re = rng.standard_normal(shape) * math.sqrt(0.5)
    im = rng.standard_normal(shape) * math.sqrt(0.5)
    scaled = math.sqrt(delta) * state.gains
    new.gains = np.hypot(scaled + noise_scale * re, noise_scale * im)
    return new


def apply_mobility(state: NetworkState, elapsed_s: float,
                   speed_mps: float) -> NetworkState:
    """Translate every user radially away from its serving base station by
    speed*elapsed and recompute gains (same fading draws). Requires serving
    assignments on the state."""
    if elapsed_s < 0:
        raise ValueError("elapsed time must be >= 0")
    if state.serving_bs is None or (state.serving_bs < 0).any():
        raise ValueError("mobility requires a serving base station per user")
    new = state.copy()
    shift = speed_mps * elapsed_s
    if shift == 0.0:
        return new
    bs_list = new.topology.bs_list
    for i, user in enumerate(new.users):
        anchor = bs_list[int(new.serving_bs[i])].position
        direction = user.position - anchor
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            direction = np.array([1.0, 0.0, 0.0])
            norm = 1.0
        user.position = user.position + direction * (shift / norm)
    new.gains, new.reachable = compute_gain_tensor(new.channel, new.topology,
                                                   new.users, new.fading)
    return new
