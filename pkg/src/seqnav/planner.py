"""Low-level action planning: action heads, a scripted reference follower and the
exploration/verification wrapper with its adaptive threshold."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import Action, ContractViolation, POLICY_ACTIONS
from .tensorio import load_tensors, save_tensors
from .world import (
    Scene,
    UnreachableError,
    distance_field,
    next_direction,
    turn_toward,
)

N_ACTIONS = len(POLICY_ACTIONS)  # FORWARD, TURN_LEFT, TURN_RIGHT, STOP
EXPLORATION, VERIFICATION = "exploration", "verification"


def argmax_action(probs) -> Action:
    p = np.asarray(probs, dtype=np.float64)
    return Action(int(np.argmax(p)))


def second_best(probs) -> Action:
    """Second-largest probability; ties resolved towards the lower action index."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (N_ACTIONS,):
        raise ContractViolation(f"expected {N_ACTIONS} probabilities, got shape {p.shape}")
    order = sorted(range(N_ACTIONS), key=lambda i: (-p[i], i))
    return Action(order[1])


class ActionPolicy:
    """predict(z_map, z_instr, hidden, a_prev, obs=None) -> (probs over 4 actions, hidden)."""

    requires_map = True

    def initial_hidden(self, episode=None, seed: int = 0):
        raise NotImplementedError

    def predict(self, z_map, z_instr, hidden, a_prev: Optional[Action], obs=None):
        raise NotImplementedError


# ------------------------------------------------------------------ neural head


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """GRU update with gates ordered (reset, update, new)."""
    gi = w_ih @ x + b_ih
    gh = w_hh @ h + b_hh
    H = h.shape[0]
    r = sigmoid(gi[:H] + gh[:H])
    z = sigmoid(gi[H:2 * H] + gh[H:2 * H])
    n = np.tanh(gi[2 * H:] + r * gh[2 * H:])
    return (1.0 - z) * n + z * h


_AOH_SHAPES = {
    "action_embed.weight": lambda D, M, H, E: (E, N_ACTIONS + 1),
    "gru1.weight_ih": lambda D, M, H, E: (3 * H, D + E),
    "gru1.weight_hh": lambda D, M, H, E: (3 * H, H),
    "gru1.bias_ih": lambda D, M, H, E: (3 * H,),
    "gru1.bias_hh": lambda D, M, H, E: (3 * H,),
    "attn.query": lambda D, M, H, E: (H, H),
    "attn.key": lambda D, M, H, E: (H, M),
    "attn.value": lambda D, M, H, E: (H, M),
    "gru2.weight_ih": lambda D, M, H, E: (3 * H, 2 * H),
    "gru2.weight_hh": lambda D, M, H, E: (3 * H, H),
    "gru2.bias_ih": lambda D, M, H, E: (3 * H,),
    "gru2.bias_hh": lambda D, M, H, E: (3 * H,),
    "head.weight": lambda D, M, H, E: (N_ACTIONS, H),
    "head.bias": lambda D, M, H, E: (N_ACTIONS,),
}


@dataclass
class AOHWeights:
    tensors: dict
    instr_dim: int = 128
    map_channels: int = 128
    hidden: int = 64
    action_dim: int = 16

    def validate(self):
        dims = (self.instr_dim, self.map_channels, self.hidden, self.action_dim)
        for name, shape_fn in _AOH_SHAPES.items():
            if name not in self.tensors:
                raise ContractViolation(f"missing tensor {name}")
            want = shape_fn(*dims)
            if tuple(self.tensors[name].shape) != want:
                raise ContractViolation(f"{name}: shape {tuple(self.tensors[name].shape)} != {want}")
        return self

    @classmethod
    def random(cls, seed: int = 0, instr_dim=128, map_channels=128, hidden=64, action_dim=16):
        rng = np.random.default_rng([seed, 0xA0C])
        dims = (instr_dim, map_channels, hidden, action_dim)
        t = {}
        for name, fn in _AOH_SHAPES.items():
            shape = fn(*dims)
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            t[name] = rng.uniform(-1, 1, shape) / math.sqrt(fan_in)
        return cls(t, *dims).validate()

    @classmethod
    def zeros(cls, instr_dim=128, map_channels=128, hidden=64, action_dim=16):
        dims = (instr_dim, map_channels, hidden, action_dim)
        return cls({n: np.zeros(fn(*dims)) for n, fn in _AOH_SHAPES.items()}, *dims)

    def save(self, path):
        meta = np.array([self.instr_dim, self.map_channels, self.hidden, self.action_dim], dtype=np.float64)
        save_tensors(path, {"meta.dims": meta, **self.tensors})

    @classmethod
    def load(cls, path):
        t = load_tensors(path)
        if "meta.dims" not in t:
            raise ContractViolation("weight file lacks meta.dims")
        dims = [int(v) for v in t.pop("meta.dims")]
        return cls(t, *dims).validate()


def aoh_forward(w: AOHWeights, z_map, z_instr, h_prev, a_prev: Optional[Action]):
    """Two GRU cells bridged by cross-attention over the map positions; returns (probs, h_next)."""
    T = w.tensors
    H = w.hidden
    zs = np.asarray(z_instr, dtype=np.float64).ravel()
    zm = np.asarray(z_map, dtype=np.float64)
    if zs.shape != (w.instr_dim,):
        raise ContractViolation(f"instruction embedding has {zs.size} dims, weights expect {w.instr_dim}")
    if zm.ndim != 3 or zm.shape[0] != w.map_channels:
        raise ContractViolation(f"map embedding shape {zm.shape} incompatible with {w.map_channels} channels")
    keys_in = zm.reshape(w.map_channels, -1).T  # (positions, C)
    h = np.zeros(2 * H) if h_prev is None else np.asarray(h_prev, dtype=np.float64)
    if h.shape != (2 * H,):
        raise ContractViolation(f"hidden state has shape {h.shape}, expected ({2 * H},)")
    h1, h2 = h[:H], h[H:]
    onehot = np.zeros(N_ACTIONS + 1)
    if a_prev is not None:
        onehot[int(a_prev)] = 1.0
    a_emb = T["action_embed.weight"] @ onehot
    h1 = gru_cell(np.concatenate([zs, a_emb]), h1, T["gru1.weight_ih"], T["gru1.weight_hh"],
                  T["gru1.bias_ih"], T["gru1.bias_hh"])
    q = T["attn.query"] @ h1
    k = keys_in @ T["attn.key"].T
    v = keys_in @ T["attn.value"].T
    s = k @ q / math.sqrt(H)
    s = np.exp(s - s.max())
    att = s / s.sum()
    ctx = att @ v
    h2 = gru_cell(np.concatenate([ctx, h1]), h2, T["gru2.weight_ih"], T["gru2.weight_hh"],
                  T["gru2.bias_ih"], T["gru2.bias_hh"])
    logits = T["head.weight"] @ h2 + T["head.bias"]
    e = np.exp(logits - logits.max())
    return e / e.sum(), np.concatenate([h1, h2])


class NeuralAOH(ActionPolicy):
    requires_map = True

    def __init__(self, weights: AOHWeights):
        self.weights = weights.validate()

    def initial_hidden(self, episode=None, seed: int = 0):
        return np.zeros(2 * self.weights.hidden)

    def predict(self, z_map, z_instr, hidden, a_prev, obs=None):
        return aoh_forward(self.weights, z_map, z_instr, hidden, a_prev)


# ------------------------------------------------------------- scripted oracle

_HEADING_OF_DIR = (0.0, 90.0, 180.0, 270.0)


@dataclass
class ScriptState:
    rng: np.random.Generator
    path_cells: list
    boundaries: list
    goals: list
    cursor: int = 0
    decided: set = field(default_factory=set)
    drift_goal: Optional[tuple] = None  # cell of the wrong landmark being pursued
    rejoin: bool = False  # heading back to path_cells[cursor] after leaving the reference
    last_proposal: Optional[Action] = None
    errors: int = 0


class ScriptedOraclePolicy(ActionPolicy):
    """Follows the reference path; at decision points (sub-task starts and
    reference turns) it commits with probability ``error_rate`` to some other
    landmark of the scene and stops there.

    Probabilities put ``top`` on the planned action and ``second`` on the
    action of the competing plan (the correct one while drifting), so a
    forced second-best choice steers back towards the reference.  If the
    executed action differs from its proposal, it abandons any drift and
    rejoins the reference.
    """

    requires_map = False

    def __init__(self, scene: Scene, error_rate: float = 0.0, seed: int = 0, top: float = 0.7, second: float = 0.2):
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError("error_rate must lie in [0, 1]")
        if not top > second > (1.0 - top - second) / 2.0 >= 0.0:
            raise ValueError("need top > second > remaining mass per action")
        self.scene = scene
        self.error_rate = error_rate
        self.seed = seed
        self.top = top
        self.second = second

    def initial_hidden(self, episode=None, seed: int = 0):
        if episode is None:
            raise ValueError("scripted policy needs the reference episode")
        cells = [self.scene.cell_of(p) for p in episode.path]
        rng = np.random.default_rng([self.seed, int(seed), 0x5C41])
        goals = [self.scene.cell_of(self.scene.landmark(g).position) for g in episode.goals]
        return ScriptState(rng, cells, list(episode.boundaries), goals)

    # helpers
    def _subtask(self, st: ScriptState) -> int:
        for k, b in enumerate(st.boundaries):
            if st.cursor < b:
                return k
        return len(st.boundaries) - 1

    def _is_decision_point(self, st: ScriptState) -> bool:
        i = st.cursor
        if i >= len(st.path_cells) - 1:
            return False
        if i == 0 or i in st.boundaries:
            return True
        a, b, c = st.path_cells[i - 1], st.path_cells[i], st.path_cells[i + 1]
        return (b[0] - a[0], b[1] - a[1]) != (c[0] - b[0], c[1] - b[1])

    def _move_toward(self, pose, cell, target_cell) -> Action:
        if cell == target_cell:
            return Action.STOP
        k = next_direction(distance_field(self.scene, target_cell), cell, _dir_of_heading(pose.heading))
        return turn_toward(pose.heading, _HEADING_OF_DIR[k])

    def _reference_action(self, st: ScriptState, pose, cell) -> Action:
        cells = st.path_cells
        if cell != cells[st.cursor]:
            return self._move_toward(pose, cell, cells[st.cursor])
        if st.cursor == len(cells) - 1:
            return Action.STOP
        heading = _HEADING_OF_DIR[_dir_between(cell, cells[st.cursor + 1])]
        return turn_toward(pose.heading, heading)

    def _sync_cursor(self, st: ScriptState, cell):
        cells = st.path_cells
        if cells[st.cursor] != cell:
            # moved along the path, or got rolled back onto it
            lo, hi = max(0, st.cursor - 2), min(len(cells) - 1, st.cursor + 2)
            for i in list(range(st.cursor + 1, hi + 1)) + list(range(st.cursor - 1, lo - 1, -1)):
                if cells[i] == cell:
                    st.cursor = i
                    break
        st.rejoin = cells[st.cursor] != cell

    def predict(self, z_map, z_instr, st: ScriptState, a_prev, obs=None):
        if obs is None:
            raise ValueError("scripted policy reads the pose from the observation")
        pose = obs.pose
        cell = self.scene.cell_of(pose.position)
        if st.last_proposal is not None and a_prev is not None and a_prev != st.last_proposal \
                and a_prev != Action.TURN_BACK_LAST_STEP:
            # overridden from outside: drop any wrong plan and rejoin the reference
            if st.drift_goal is not None:
                st.drift_goal = None
                st.rejoin = True
        self._sync_cursor(st, cell)
        if st.drift_goal is None and not st.rejoin and st.cursor not in st.decided and self._is_decision_point(st):
            st.decided.add(st.cursor)
            if self.error_rate > 0 and st.rng.random() < self.error_rate:
                k = self._subtask(st)
                choices = [self.scene.cell_of(lm.position) for lm in self.scene.landmarks]
                choices = [c for c in choices if c != st.goals[k] and c != cell]
                if choices:
                    st.drift_goal = choices[int(st.rng.integers(len(choices)))]
                    st.errors += 1
        correct = self._reference_action(st, pose, cell)
        if st.drift_goal is not None:
            wrong = self._move_toward(pose, cell, st.drift_goal)
            top, alt = wrong, correct
        else:
            top, alt = correct, None
        probs = self._distribution(top, alt)
        st.last_proposal = top
        return probs, st

    def _distribution(self, top: Action, alt: Optional[Action]):
        rest = (1.0 - self.top - self.second) / 2.0
        p = np.full(N_ACTIONS, rest)
        p[int(top)] = self.top
        if alt is None or alt == top:
            # the runner-up is a fixed deterministic neighbour of the planned action
            alt = {Action.FORWARD: Action.TURN_LEFT, Action.TURN_LEFT: Action.FORWARD,
                   Action.TURN_RIGHT: Action.FORWARD, Action.STOP: Action.FORWARD}[top]
        p[int(alt)] = self.second
        return p / p.sum()


def _dir_of_heading(heading: float) -> Optional[int]:
    q = heading / 90.0
    return int(q) % 4 if q == int(q) else None


def _dir_between(a, b) -> int:
    d = (b[0] - a[0], b[1] - a[1])
    return {(0, 1): 0, (1, 0): 1, (0, -1): 2, (-1, 0): 3}[d]


# -------------------------------------------------------- exploration/verify


@dataclass(frozen=True)
class EaVConfig:
    term1: bool = True
    term2: bool = True
    threshold_mode: str = "learnable"  # or "fixed"
    fixed_value: Optional[float] = None
    init: float = 0.30
    floor: float = 0.05
    ceiling: float = 1.0
    tick_every: int = 10
    tick_decay: float = 0.01
    fail_decay: float = 0.05
    pass_gain: float = 0.03

    @property
    def enabled(self) -> bool:
        return self.term1 or self.term2

    @property
    def initial_delta(self) -> float:
        return self.fixed_value if self.threshold_mode == "fixed" else self.init


def configure_eav(term1_enabled: bool = True, term2_enabled: bool = True, threshold_mode="learnable") -> EaVConfig:
    """threshold_mode: "learnable", ("fixed", v), "fixed:v" or a bare number."""
    mode, value = "learnable", None
    if isinstance(threshold_mode, (tuple, list)):
        mode, value = threshold_mode[0], threshold_mode[1]
    elif isinstance(threshold_mode, (int, float)):
        mode, value = "fixed", threshold_mode
    elif isinstance(threshold_mode, str) and threshold_mode.startswith("fixed"):
        mode = "fixed"
        _, _, v = threshold_mode.partition(":")
        value = float(v) if v else None
    elif threshold_mode != "learnable":
        raise ValueError(f"unknown threshold mode {threshold_mode!r}")
    if mode == "fixed":
        if value is None or not 0.05 <= float(value) <= 1.0:
            raise ValueError(f"fixed threshold must lie in [0.05, 1.0], got {value!r}")
        value = float(value)
    return EaVConfig(term1=bool(term1_enabled), term2=bool(term2_enabled), threshold_mode=mode, fixed_value=value)


@dataclass
class EaVState:
    k_star_last: Optional[int] = None
    delta0: float = 0.30
    mode: str = EXPLORATION
    low_action_counter: int = 0
    hidden: object = None
    a_prev: Optional[Action] = None
    events: list = field(default_factory=list)  # (kind, detail) diagnostics and threshold events

    def for_new_episode(self, hidden) -> "EaVState":
        """Fresh per-episode bookkeeping; the threshold carries over within a scene."""
        return EaVState(delta0=self.delta0, low_action_counter=self.low_action_counter, hidden=hidden)


def initial_eav_state(cfg: EaVConfig, hidden=None) -> EaVState:
    return EaVState(delta0=cfg.initial_delta, hidden=hidden)


TICK, VERIFICATION_FAILED, VERIFICATION_PASSED = "tick", "verification_failed", "verification_passed"


def update_threshold(state: EaVState, event: str, cfg: EaVConfig = EaVConfig()) -> EaVState:
    if event not in (TICK, VERIFICATION_FAILED, VERIFICATION_PASSED):
        raise ValueError(f"unknown threshold event {event!r}")
    d = state.delta0
    counter = state.low_action_counter
    if event == TICK:
        counter += 1
        if counter % cfg.tick_every == 0 and cfg.threshold_mode == "learnable":
            d -= cfg.tick_decay
    elif cfg.threshold_mode == "learnable":
        d += cfg.pass_gain if event == VERIFICATION_PASSED else -cfg.fail_decay
    if cfg.threshold_mode == "learnable":
        d = min(cfg.ceiling, max(cfg.floor, round(d, 12)))
    return replace(state, delta0=d, low_action_counter=counter)


def eav_step(obs, instr, sel, policy: ActionPolicy, state: EaVState, provider, cfg: EaVConfig = EaVConfig(),
             z_map=None, z_instr=None, can_rollback: bool = True):
    """One decision of the exploration/verification loop; returns (action, new state).

    The threshold tick for the executed action is applied by the caller
    (``update_threshold(state, TICK)``) once the action has run.
    """
    probs, hidden = policy.predict(z_map, z_instr, state.hidden, state.a_prev, obs=obs)
    s = replace(state, hidden=hidden, events=list(state.events))
    best = argmax_action(probs)
    if s.mode == VERIFICATION:
        s.mode = EXPLORATION
        action = second_best(probs)
        s.events.append(("forced_second_best", int(action)))
        return action, s
    if not cfg.enabled or sel.alpha == 0:
        return best, s
    k, kl = sel.k_star, s.k_star_last
    switching = kl is not None and k != kl
    in_order = not switching or k == kl + 1
    turn_back = False
    if cfg.term1 and in_order:
        pass
    elif not switching:
        pass  # term-II only: nothing to verify without a phrase switch
    elif not cfg.term2:
        turn_back = True  # order violation alone
    elif kl + 1 < len(instr.phrases):
        delta_t = provider.score(instr.phrases[kl + 1], obs)
        if delta_t < s.delta0:
            turn_back = True
            s = update_threshold(s, VERIFICATION_FAILED, cfg)
            s.events.append((VERIFICATION_FAILED, round(delta_t, 12)))
        else:
            s = update_threshold(s, VERIFICATION_PASSED, cfg)
            s.events.append((VERIFICATION_PASSED, round(delta_t, 12)))
    s.k_star_last = k
    if turn_back:
        if can_rollback:
            s.mode = VERIFICATION
            return Action.TURN_BACK_LAST_STEP, s
        s.events.append(("rollback_unavailable", k))
    return best, s
