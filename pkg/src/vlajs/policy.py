"""Gaussian policy and value function with hand-derived gradients.

Both heads are fixed two-hidden-layer tanh MLPs (width 64): the mean net maps
a 20-D observation to a 7-D action mean, the value net to a scalar. The
log-std is a state-independent 7-vector clamped to [-5, 2]. Gradients are
exact reverse-mode for this architecture; no autodiff dependency.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, fields

import numpy as np

OBS_DIM = 20
ACT_DIM = 7
GRIPPER_DIM = 6
HIDDEN = 64
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_STD_INIT = -0.5

_CKPT_MAGIC = b"VJCKPT\x00\x00"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for corrupted, truncated, or wrong-version checkpoint files."""


@dataclass
class PolicyParams:
    # mean net
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    # state-independent log standard deviations
    log_std: np.ndarray
    # value net
    vw1: np.ndarray
    vb1: np.ndarray
    vw2: np.ndarray
    vb2: np.ndarray
    vw3: np.ndarray
    vb3: np.ndarray

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{f.name: getattr(self, f.name).copy()
                               for f in fields(self)})


PARAM_FIELDS = tuple(f.name for f in fields(PolicyParams))

_SHAPES = {
    "w1": (OBS_DIM, HIDDEN), "b1": (HIDDEN,),
    "w2": (HIDDEN, HIDDEN), "b2": (HIDDEN,),
    "w3": (HIDDEN, ACT_DIM), "b3": (ACT_DIM,),
    "log_std": (ACT_DIM,),
    "vw1": (OBS_DIM, HIDDEN), "vb1": (HIDDEN,),
    "vw2": (HIDDEN, HIDDEN), "vb2": (HIDDEN,),
    "vw3": (HIDDEN, 1), "vb3": (1,),
}


def init_policy(rng: np.random.Generator,
                init_log_std: float = LOG_STD_INIT) -> PolicyParams:
    """Scaled-Gaussian init (std 1/sqrt(fan_in)), zero biases.

    The gripper head starts biased open to match the initial gripper state:
    attachment fires only on an open-to-closed transition, so a policy whose
    mean closes everywhere can never attach and receives no grasp signal.

    The gripper log-std never starts below LOG_STD_INIT even when
    init_log_std is tighter: the gripper is a sign-threshold channel, so
    shrinking its noise with the translation-precision knob would strangle
    the open/close exploration that grasp discovery depends on.
    """
    def w(shape):
        return rng.standard_normal(shape) / np.sqrt(shape[0])

    b3 = np.zeros(ACT_DIM)
    b3[GRIPPER_DIM] = 1.0
    log_std = np.full(ACT_DIM, init_log_std)
    log_std[GRIPPER_DIM] = max(init_log_std, LOG_STD_INIT)
    return PolicyParams(
        w1=w(_SHAPES["w1"]), b1=np.zeros(HIDDEN),
        w2=w(_SHAPES["w2"]), b2=np.zeros(HIDDEN),
        w3=w(_SHAPES["w3"]), b3=b3,
        log_std=log_std,
        vw1=w(_SHAPES["vw1"]), vb1=np.zeros(HIDDEN),
        vw2=w(_SHAPES["vw2"]), vb2=np.zeros(HIDDEN),
        vw3=w(_SHAPES["vw3"]), vb3=np.zeros(1),
    )


def zero_grads() -> PolicyParams:
    return PolicyParams(**{n: np.zeros(_SHAPES[n]) for n in PARAM_FIELDS})


def forward(params: PolicyParams, obs: np.ndarray
            ) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """Returns (mean, log_std, value, cache). Accepts [20] or [B, 20]."""
    obs = np.asarray(obs, dtype=float)
    if not np.all(np.isfinite(obs)):
        raise ValueError("non-finite observation")
    single = obs.ndim == 1
    x = obs[None, :] if single else obs

    h1 = np.tanh(x @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    mean = h2 @ params.w3 + params.b3

    vh1 = np.tanh(x @ params.vw1 + params.vb1)
    vh2 = np.tanh(vh1 @ params.vw2 + params.vb2)
    value = (vh2 @ params.vw3 + params.vb3)[:, 0]

    log_std = np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)
    cache = {"x": x, "h1": h1, "h2": h2, "vh1": vh1, "vh2": vh2}
    if single:
        return mean[0], log_std, value[0], cache
    return mean, log_std, value, cache


def backward(params: PolicyParams, cache: dict,
             dmean: np.ndarray, dvalue: np.ndarray) -> PolicyParams:
    """Exact gradients of a scalar loss given dL/dmean and dL/dvalue.

    dmean: [B, 7]; dvalue: [B]. The log_std gradient is loss-specific and is
    filled in by the caller (log_std never flows through the networks).
    """
    x, h1, h2 = cache["x"], cache["h1"], cache["h2"]
    dmean = np.atleast_2d(dmean)
    if dmean.shape[0] != x.shape[0]:
        raise ValueError("upstream gradient batch mismatch")

    g = zero_grads()
    g.w3 = h2.T @ dmean
    g.b3 = dmean.sum(axis=0)
    dh2 = dmean @ params.w3.T
    dz2 = dh2 * (1.0 - h2 * h2)
    g.w2 = h1.T @ dz2
    g.b2 = dz2.sum(axis=0)
    dh1 = dz2 @ params.w2.T
    dz1 = dh1 * (1.0 - h1 * h1)
    g.w1 = x.T @ dz1
    g.b1 = dz1.sum(axis=0)

    vh1, vh2 = cache["vh1"], cache["vh2"]
    dv = np.asarray(dvalue, dtype=float).reshape(-1, 1)
    if dv.shape[0] != x.shape[0]:
        raise ValueError("upstream gradient batch mismatch")
    g.vw3 = vh2.T @ dv
    g.vb3 = dv.sum(axis=0)
    dvh2 = dv @ params.vw3.T
    dvz2 = dvh2 * (1.0 - vh2 * vh2)
    g.vw2 = vh1.T @ dvz2
    g.vb2 = dvz2.sum(axis=0)
    dvh1 = dvz2 @ params.vw2.T
    dvz1 = dvh1 * (1.0 - vh1 * vh1)
    g.vw1 = x.T @ dvz1
    g.vb1 = dvz1.sum(axis=0)
    return g


def log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density summed over the 7 action dimensions."""
    mean = np.asarray(mean, dtype=float)
    action = np.asarray(action, dtype=float)
    var = np.exp(2.0 * log_std)
    lp = -0.5 * (((action - mean) ** 2) / var + 2.0 * log_std + np.log(2.0 * np.pi))
    return lp.sum(axis=-1)


def log_prob_grads(mean, log_std, action):
    """d log_prob / d mean and (summed later) d log_prob / d log_std."""
    diff = np.asarray(action, dtype=float) - np.asarray(mean, dtype=float)
    inv_var = np.exp(-2.0 * log_std)
    dmean = diff * inv_var                     # [B, 7]
    dlog_std = diff * diff * inv_var - 1.0     # [B, 7], per-sample
    return dmean, dlog_std


def entropy(log_std: np.ndarray) -> float:
    """Differential entropy of the diagonal Gaussian (state-independent)."""
    return float(np.sum(log_std + 0.5 * np.log(2.0 * np.pi * np.e)))


def sample_action(mean, log_std, rng: np.random.Generator) -> np.ndarray:
    """Reparameterized draw: mean + sigma * z with z from the given stream."""
    z = rng.standard_normal(np.shape(mean))
    return np.asarray(mean) + np.exp(log_std) * z


@dataclass
class OptimizerState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: PolicyParams | None = None
    v: PolicyParams | None = None

    def __post_init__(self):
        if self.m is None:
            self.m = zero_grads()
        if self.v is None:
            self.v = zero_grads()


def optimizer_step(params: PolicyParams, grads: PolicyParams,
                   state: OptimizerState) -> tuple[PolicyParams, OptimizerState]:
    """Bias-corrected adaptive-moment update. Non-finite gradients leave the
    parameters untouched and raise."""
    for n in PARAM_FIELDS:
        if not np.all(np.isfinite(getattr(grads, n))):
            raise ValueError(f"non-finite gradient for {n}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = {}
    for n in PARAM_FIELDS:
        p, g = getattr(params, n), getattr(grads, n)
        m = getattr(state.m, n)
        v = getattr(state.v, n)
        m[:] = state.beta1 * m + (1.0 - state.beta1) * g
        v[:] = state.beta2 * v + (1.0 - state.beta2) * g * g
        out[n] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    new = PolicyParams(**out)
    new.log_std = np.clip(new.log_std, LOG_STD_MIN, LOG_STD_MAX)
    return new, state


def clip_grad_norm(grads: PolicyParams, max_norm: float) -> PolicyParams:
    """Global-norm clip across every parameter tensor."""
    total = 0.0
    for n in PARAM_FIELDS:
        g = getattr(grads, n)
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for n in PARAM_FIELDS:
            getattr(grads, n)[:] *= scale
    return grads


# --- checkpoint I/O --------------------------------------------------------
# Layout: magic(8) | version u32 LE | manifest_len u64 LE | manifest JSON |
# payload (flat float64 LE). The manifest records (name, shape, offset in
# floats) per parameter plus a sha256 of the payload bytes.

def save_checkpoint(path, params: PolicyParams) -> None:
    chunks = []
    layout = []
    offset = 0
    for n in PARAM_FIELDS:
        a = np.ascontiguousarray(getattr(params, n), dtype="<f8")
        layout.append({"name": n, "shape": list(a.shape), "offset": offset})
        offset += a.size
        chunks.append(a.tobytes())
    payload = b"".join(chunks)
    manifest = json.dumps({
        "layout": layout,
        "total_floats": offset,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        f.write(payload)


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(_CKPT_MAGIC) + 12 or raw[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError("not a policy checkpoint file")
    pos = len(_CKPT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    try:
        manifest = json.loads(raw[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint manifest: {e}") from e
    pos += mlen
    payload = raw[pos:]
    if hashlib.sha256(payload).hexdigest() != manifest.get("sha256"):
        raise CheckpointError("checkpoint payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8")
    if flat.size != manifest.get("total_floats"):
        raise CheckpointError("checkpoint payload length mismatch")
    out = {}
    for entry in manifest["layout"]:
        n, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
        if n not in _SHAPES or _SHAPES[n] != shape:
            raise CheckpointError(f"unexpected parameter {n} with shape {shape}")
        size = int(np.prod(shape)) if shape else 1
        out[n] = flat[off:off + size].reshape(shape).astype(float)
    missing = set(PARAM_FIELDS) - out.keys()
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    return PolicyParams(**out)
