"""LSTM, GRU and the spatially-enhanced variants SRU-LSTM, SRU-GRU, SRU-Ours.

All cells share one calling convention::

    h_next, state_next, gates = step(x, state, params)

with ``x`` of shape (batch, input_dim) or (input_dim,). Weights follow the
column-vector convention of the equations (``W_xi`` is hidden x input); the
batched forward multiplies by the transpose.

The SRU variants add a spatial term ``s = W_xs x + b_s`` (no squashing) that
multiplies the candidate pre-activation before its tanh. SRU-Ours further
replaces the (f, i) pair in the cell update with the refined retain gate
``r = i*(1-(1-f)^2) + (1-i)*f^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .nn import load_params_json, params_to_json
from .tensor import ContractError, DimensionError, Tensor

CELL_KINDS = ("lstm", "gru", "sru-lstm", "sru-gru", "sru-ours")
LSTM_FAMILY = ("lstm", "sru-lstm", "sru-ours")
SPATIAL = ("sru-lstm", "sru-gru", "sru-ours")

_GATES = {"lstm": ("i", "f", "o", "g"), "gru": ("z", "r", "h")}


def gate_names(kind: str) -> tuple[str, ...]:
    return _GATES["lstm" if kind in LSTM_FAMILY else "gru"]


def param_names(kind: str) -> list[str]:
    if kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {kind!r}; expected one of {CELL_KINDS}")
    names = []
    for gname in gate_names(kind):
        names += [f"W_x{gname}", f"W_h{gname}", f"b_{gname}"]
    if kind in SPATIAL:
        names += ["W_xs", "b_s"]
    return names


@dataclass
class CellParams:
    kind: str
    input_dim: int
    hidden_dim: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        expected = param_names(self.kind)
        if set(self.tensors) != set(expected):
            raise ContractError(
                f"{self.kind} params need exactly {expected}, got {sorted(self.tensors)}")
        H, I = self.hidden_dim, self.input_dim
        for name, t in self.tensors.items():
            if name.startswith("b_"):
                want = (H,)
            elif name.startswith("W_x"):
                want = (H, I)
            else:
                want = (H, H)
            if t.shape != want:
                raise DimensionError(f"{name}: expected shape {want}, got {t.shape}")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @classmethod
    def init(cls, kind: str, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "CellParams":
        """U[-1/sqrt(H), 1/sqrt(H)] everywhere, except ``b_s = 1`` so SRUs start at their reduction."""
        bound = 1.0 / np.sqrt(hidden_dim)
        tensors = {}
        for name in param_names(kind):
            if name == "b_s":
                tensors[name] = Tensor(np.ones(hidden_dim), requires_grad=True)
                continue
            if name.startswith("b_"):
                shape = (hidden_dim,)
            elif name.startswith("W_x"):
                shape = (hidden_dim, input_dim)
            else:
                shape = (hidden_dim, hidden_dim)
            tensors[name] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
        return cls(kind, input_dim, hidden_dim, tensors)

    @classmethod
    def from_arrays(cls, kind: str, arrays: dict[str, np.ndarray], requires_grad: bool = False) -> "CellParams":
        W = arrays[f"W_x{gate_names(kind)[0]}"]
        H, I = np.shape(W)
        return cls(kind, I, H, {k: Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()})

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + k: self.tensors[k] for k in param_names(self.kind)}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def to_json(self) -> dict:
        return params_to_json(self.named_parameters())

    def load_json(self, blob: dict) -> None:
        load_params_json(self.named_parameters(), blob)


@dataclass
class CellState:
    h: Tensor
    c: Tensor | None = None

    @classmethod
    def zeros(cls, kind: str, hidden_dim: int, batch: int | None = None) -> "CellState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        c = Tensor(np.zeros(shape)) if kind in LSTM_FAMILY else None
        return cls(Tensor(np.zeros(shape)), c)

    def detach(self) -> "CellState":
        return CellState(self.h.detach(), None if self.c is None else self.c.detach())


@dataclass
class GateRecord:
    """Per-step gate activations, detached, keyed by symbol (i, f, o, g, s, r / z, r, h)."""

    kind: str
    values: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


# ---------------------------------------------------------------------------
# fused weights: one (input, n*H) matrix for all x-paths, etc.


@dataclass
class _Fused:
    kind: str
    Wx: Tensor
    Wh: Tensor
    b: Tensor
    Whh: Tensor | None = None  # GRU candidate path, applied to r*h
    Ws: Tensor | None = None
    bs: Tensor | None = None


def fuse(params: CellParams) -> _Fused:
    kind = params.kind
    P = params.tensors
    names = gate_names(kind)
    Wx = tn.transpose(tn.concat([P[f"W_x{g}"] for g in names], axis=0))
    b = tn.concat([P[f"b_{g}"] for g in names], axis=0)
    if kind in LSTM_FAMILY:
        Wh = tn.transpose(tn.concat([P[f"W_h{g}"] for g in names], axis=0))
        Whh = None
    else:
        Wh = tn.transpose(tn.concat([P["W_hz"], P["W_hr"]], axis=0))
        Whh = tn.transpose(P["W_hh"])
    Ws = bs = None
    if kind in SPATIAL:
        Ws = tn.transpose(P["W_xs"])
        bs = P["b_s"]
    return _Fused(kind, Wx, Wh, b, Whh, Ws, bs)


def refined_gate(i, f):
    """Retain gate of SRU-Ours; a convex combination of 1-(1-f)^2 and f^2."""
    return i * (1.0 - (1.0 - f) ** 2) + (1.0 - i) * f**2


def _lstm_family_step(x: Tensor, state: CellState, w: _Fused):
    H = state.h.shape[-1]
    a = tn.matmul(x, w.Wx) + tn.matmul(state.h, w.Wh) + w.b
    i = tn.sigmoid(a[:, :H])
    f = tn.sigmoid(a[:, H:2 * H])
    o = tn.sigmoid(a[:, 2 * H:3 * H])
    pre = a[:, 3 * H:]
    rec = {"i": i.data, "f": f.data, "o": o.data}
    if w.Ws is not None:
        s = tn.matmul(x, w.Ws) + w.bs
        pre = s * pre
        rec["s"] = s.data
    g = tn.tanh(pre)
    rec["g"] = g.data
    if w.kind == "sru-ours":
        r = refined_gate(i, f)
        c = r * state.c + (1.0 - r) * g
        rec["r"] = r.data
    else:
        c = f * state.c + i * g
    h = o * tn.tanh(c)
    return h, CellState(h, c), rec


def _gru_family_step(x: Tensor, state: CellState, w: _Fused):
    H = state.h.shape[-1]
    h_prev = state.h
    ax = tn.matmul(x, w.Wx) + w.b
    ah = tn.matmul(h_prev, w.Wh)
    z = tn.sigmoid(ax[:, :H] + ah[:, :H])
    r = tn.sigmoid(ax[:, H:2 * H] + ah[:, H:])
    pre = ax[:, 2 * H:] + tn.matmul(r * h_prev, w.Whh)
    rec = {"z": z.data, "r": r.data}
    if w.Ws is not None:
        s = tn.matmul(x, w.Ws) + w.bs
        pre = s * pre
        rec["s"] = s.data
    cand = tn.tanh(pre)
    rec["h"] = cand.data
    h = (1.0 - z) * cand + z * h_prev
    return h, CellState(h), rec


def _check_dims(x: Tensor, state: CellState, params: CellParams):
    if x.shape[-1] != params.input_dim:
        raise DimensionError(f"{params.kind}: input shape {x.shape} vs input_dim {params.input_dim}")
    if state.h.shape[-1] != params.hidden_dim:
        raise DimensionError(f"{params.kind}: hidden shape {state.h.shape} vs hidden_dim {params.hidden_dim}")
    if (params.kind in LSTM_FAMILY) != (state.c is not None):
        raise ContractError(f"{params.kind}: state cell vector presence does not match cell family")
    if state.c is not None and state.c.shape != state.h.shape:
        raise DimensionError(f"cell state shape {state.c.shape} vs hidden {state.h.shape}")


def _promote(x, state: CellState):
    """Lift unbatched (x, state) to batch size 1."""
    x = tn.as_tensor(x)
    if x.ndim != 1:
        return x, state, False
    c = None if state.c is None else tn.reshape(state.c, (1, -1))
    return tn.reshape(x, (1, -1)), CellState(tn.reshape(state.h, (1, -1)), c), True


def _demote(h, state: CellState, rec: dict):
    c = None if state.c is None else tn.reshape(state.c, (-1,))
    h = tn.reshape(h, (-1,))
    return h, CellState(h, c), {k: v.reshape(-1) for k, v in rec.items()}


def _step(expected_kinds, x, state: CellState, params: CellParams, fused: _Fused | None = None):
    if params.kind not in expected_kinds:
        raise ContractError(f"step for {expected_kinds} called with {params.kind} params")
    x, st, squeezed = _promote(x, state)
    _check_dims(x, st, params)
    w = fused if fused is not None else fuse(params)
    body = _lstm_family_step if params.kind in LSTM_FAMILY else _gru_family_step
    h, new_state, rec = body(x, st, w)
    if squeezed:
        h, new_state, rec = _demote(h, new_state, rec)
    return h, new_state, GateRecord(params.kind, rec)


def lstm_step(x, state: CellState, params: CellParams):
    return _step(("lstm",), x, state, params)


def gru_step(x, state: CellState, params: CellParams):
    return _step(("gru",), x, state, params)


def sru_lstm_step(x, state: CellState, params: CellParams):
    return _step(("sru-lstm",), x, state, params)


def sru_gru_step(x, state: CellState, params: CellParams):
    return _step(("sru-gru",), x, state, params)


def sru_ours_step(x, state: CellState, params: CellParams):
    return _step(("sru-ours",), x, state, params)


STEP_FUNCTIONS = {
    "lstm": lstm_step,
    "gru": gru_step,
    "sru-lstm": sru_lstm_step,
    "sru-gru": sru_gru_step,
    "sru-ours": sru_ours_step,
}


class RecurrentCell:
    """A cell kind bound to its parameters."""

    def __init__(self, params: CellParams):
        self.params = params
        self.kind = params.kind

    @classmethod
    def create(cls, kind: str, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "RecurrentCell":
        return cls(CellParams.init(kind, input_dim, hidden_dim, rng))

    @property
    def hidden_dim(self) -> int:
        return self.params.hidden_dim

    def initial_state(self, batch: int | None = None) -> CellState:
        return CellState.zeros(self.kind, self.params.hidden_dim, batch)

    def step(self, x, state: CellState, fused: _Fused | None = None):
        return _step((self.kind,), x, state, self.params, fused)

    def fuse(self) -> _Fused:
        return fuse(self.params)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return self.params.named_parameters(prefix)


def unroll(cell: RecurrentCell, inputs, state: CellState | None = None):
    """Run ``cell`` over ``inputs`` (a sequence of x_t, or an array shaped (T, ...)).

    Returns ``(h_T, states, gates)`` where ``states[t]`` is the state after
    step t+1. Gradients flow through every step.
    """
    if isinstance(inputs, Tensor):
        seq = [inputs[t] for t in range(inputs.shape[0])]
    elif isinstance(inputs, np.ndarray):
        seq = [Tensor(inputs[t]) for t in range(inputs.shape[0])]
    else:
        seq = list(inputs)
    if not seq:
        raise ContractError("unroll: empty input sequence")
    if state is None:
        first = tn.as_tensor(seq[0])
        state = cell.initial_state(None if first.ndim == 1 else first.shape[0])
    fused = cell.fuse()
    states, gates = [], []
    h = state.h
    for x in seq:
        h, state, rec = cell.step(x, state, fused)
        states.append(state)
        gates.append(rec)
    return h, states, gates
