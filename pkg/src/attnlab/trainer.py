"""Toy training harness with manual gradients for the weight-divergence proxy.

A single-head attention classifier on a synthetic separable token task is
trained twice under a controlled perturbation (attention variant, init
seed, or precision) and the per-checkpoint distance between the two weight
trajectories is the proxy for the perturbation's downstream impact.

Every arithmetic step of forward, backward and the SGD update runs through
the rounded kernels at the run's training format, so low-precision runs
quantize the optimizer step too. Runs are pure functions of their config:
snapshots are bit-identical on repeat.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .formats import BF16, FP16, FP32, FP64, FloatFormat, parse_format
from .metrics import max_difference, wasserstein_1d

__all__ = [
    "TaskSpec",
    "TrainRunConfig",
    "ToyModel",
    "CheckpointDelta",
    "forward_loss",
    "backward",
    "train_run",
    "compare_runs",
    "run_scenario_suite",
    "save_checkpoints",
    "load_checkpoints",
    "SCENARIOS",
]

TENSOR_NAMES = ("embed", "wq", "wk", "wv", "head")
SCENARIOS = ("flash_vs_baseline", "different_init", "fp16_vs_fp32")

# init streams per tensor; the data stream space starts above them
_INIT_STREAMS = {name: i for i, name in enumerate(TENSOR_NAMES)}
_DATA_STREAM_BASE = 1 << 32


@dataclass(frozen=True)
class TaskSpec:
    """Synthetic sequence-classification task.

    Labels are uniform over classes; each token is drawn from the label's
    vocab block with probability 3/4 and uniformly otherwise, so the
    mean-pooled embedding is linearly separable in expectation.
    """

    vocab: int = 32
    seq_len: int = 8
    head_dim: int = 8
    classes: int = 4
    batch_size: int = 4
    data_seed: int = 1234

    def __post_init__(self) -> None:
        if self.classes < 2 or self.vocab < self.classes:
            raise ValueError("need vocab >= classes >= 2")
        if min(self.seq_len, self.head_dim, self.batch_size) < 1:
            raise ValueError("seq_len, head_dim, batch_size must be >= 1")


@dataclass(frozen=True)
class TrainRunConfig:
    seed: int = 0
    attention_variant: str = "baseline"
    train_format: FloatFormat = BF16
    steps: int = 2000
    learning_rate: float = 0.05
    checkpoint_every: int = 100
    task: TaskSpec = field(default_factory=TaskSpec)
    accumulate_in_carrier: bool = False

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.checkpoint_every < 1 or self.steps % self.checkpoint_every != 0:
            raise ValueError("checkpoint_every must divide steps evenly")
        if self.attention_variant not in ("baseline", "flash"):
            raise ValueError(f"unknown variant {self.attention_variant!r}")


@dataclass
class ToyModel:
    """embed (vocab x d), Wq/Wk/Wv (d x d), head (d x classes)."""

    embed: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    head: np.ndarray
    format: FloatFormat

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def copy(self) -> "ToyModel":
        return ToyModel(
            self.embed.copy(), self.wq.copy(), self.wk.copy(), self.wv.copy(),
            self.head.copy(), self.format,
        )


def init_model(cfg: TrainRunConfig) -> ToyModel:
    """Seeded normal init scaled by 1/sqrt(d), quantized to the train format."""
    t = cfg.task
    fmt = cfg.train_format
    p = fmt.params()
    scale = 1.0 / np.sqrt(t.head_dim)
    shapes = {
        "embed": (t.vocab, t.head_dim),
        "wq": (t.head_dim, t.head_dim),
        "wk": (t.head_dim, t.head_dim),
        "wv": (t.head_dim, t.head_dim),
        "head": (t.head_dim, t.classes),
    }
    tensors = {}
    for name, shape in shapes.items():
        z = backend.active.standard_normal(cfg.seed, _INIT_STREAMS[name], shape[0] * shape[1])
        tensors[name] = backend.active.quantize_array(scale * z.reshape(shape), *p)
    return ToyModel(**tensors, format=fmt)


def make_batch(task: TaskSpec, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic batch for a step: same for every run sharing the task."""
    b, n = task.batch_size, task.seq_len
    u = backend.active.uniform01(task.data_seed, _DATA_STREAM_BASE + step, b * (n + 1))
    labels = np.minimum((u[:b] * task.classes).astype(np.int64), task.classes - 1)
    block = task.vocab // task.classes
    ut = u[b:].reshape(b, n)
    tokens = np.empty((b, n), dtype=np.int64)
    for i in range(b):
        lo = labels[i] * block
        for j in range(n):
            r = ut[i, j]
            if r < 0.75:  # token from the label's vocab block
                tokens[i, j] = lo + min(int(r / 0.75 * block), block - 1)
            else:
                tokens[i, j] = min(int((r - 0.75) / 0.25 * task.vocab), task.vocab - 1)
    return tokens, labels


def _q(x: np.ndarray, p) -> np.ndarray:
    return backend.active.quantize_array(x, *p)


def forward_loss(model: ToyModel, tokens: np.ndarray, labels: np.ndarray,
                 variant: str, fmt: FloatFormat, accumulate_in_carrier: bool = False,
                 geometry=None):
    """Embed -> project -> attention -> mean-pool -> linear head -> softmax CE.

    Returns (loss, activations); activations carry everything backward needs.
    """
    from .attention import BlockGeometry, flash_attention  # local: avoid cycle
    from .matrix import Matrix

    p = fmt.params()
    acc = accumulate_in_carrier
    be = backend.active
    bsz, n = tokens.shape
    d = model.embed.shape[1]
    scale = 1.0 / np.sqrt(d)
    if geometry is None:
        geometry = BlockGeometry(max(1, n // 2), max(1, n // 2))

    seqs = []
    pooled = np.empty((bsz, d))
    ones_row = np.ones((1, n))
    for i in range(bsz):
        x = model.embed[tokens[i]]
        q = be.matmul_rounded(x, model.wq, *p, acc)
        k = be.matmul_rounded(x, model.wk, *p, acc)
        v = be.matmul_rounded(x, model.wv, *p, acc)
        s = be.matmul_rounded(q, np.ascontiguousarray(k.T), *p, acc)
        s = _q(scale * s, p)
        prob = be.softmax_rows_rounded(s, *p, acc)
        if variant == "flash":
            o = flash_attention(
                Matrix(q, fmt, _trusted=True), Matrix(k, fmt, _trusted=True),
                Matrix(v, fmt, _trusted=True), fmt, geometry, acc,
            ).data
        else:
            o = be.matmul_rounded(prob, v, *p, acc)
        pooled[i] = _q(be.matmul_rounded(ones_row, o, *p, acc)[0] / n, p)
        seqs.append({"x": x, "q": q, "k": k, "v": v, "prob": prob, "o": o})

    logits = be.matmul_rounded(pooled, model.head, *p, acc)
    m = be.rowmax(logits)
    z = _q(logits - m[:, None], p)
    e = _q(be.exp_array(z), p)
    ssum = np.zeros(bsz)
    for j in range(e.shape[1]):
        if acc:
            ssum = ssum + e[:, j]
        else:
            ssum = _q(ssum + e[:, j], p)
    if acc:
        ssum = _q(ssum, p)
    probs = _q(e / ssum[:, None], p)
    logs = _q(be.log_array(ssum), p)
    zlab = z[np.arange(bsz), labels]
    losses = _q(logs - zlab, p)
    total = 0.0
    for i in range(bsz):
        total = float(_q(np.array([total + losses[i]]), p)[0])
    loss = float(_q(np.array([total / bsz]), p)[0])

    activations = {
        "tokens": tokens, "labels": labels, "pooled": pooled, "probs": probs,
        "seqs": seqs, "scale": scale, "n": n, "bsz": bsz, "fmt": fmt, "acc": acc,
    }
    return loss, activations


def backward(model: ToyModel, activations: dict, fmt: FloatFormat) -> dict[str, np.ndarray]:
    """Analytic gradients, every step through the rounded kernels at fmt.

    The attention gradient uses the full-matrix softmax jacobian with the
    probabilities recomputed globally from the run's score matrix (the flash
    variant's forward deviation enters through the loss, not a tiled
    backward).
    """
    p = fmt.params()
    be = backend.active
    acc = activations["acc"]
    bsz, n = activations["bsz"], activations["n"]
    scale = activations["scale"]
    tokens, labels = activations["tokens"], activations["labels"]
    d = model.embed.shape[1]

    onehot = np.zeros_like(activations["probs"])
    onehot[np.arange(bsz), labels] = 1.0
    dlogits = _q(_q(activations["probs"] - onehot, p) / bsz, p)

    pooled = activations["pooled"]
    grads = {
        "head": be.matmul_rounded(np.ascontiguousarray(pooled.T), dlogits, *p, acc),
        "embed": np.zeros_like(model.embed),
        "wq": np.zeros_like(model.wq),
        "wk": np.zeros_like(model.wk),
        "wv": np.zeros_like(model.wv),
    }
    dpooled = be.matmul_rounded(dlogits, np.ascontiguousarray(model.head.T), *p, acc)

    for i in range(bsz):
        s = activations["seqs"][i]
        x, q, k, v, prob = s["x"], s["q"], s["k"], s["v"], s["prob"]
        # mean-pool backward: each attention-output row sees dpooled / n
        drow = _q(dpooled[i] / n, p)
        do = np.tile(drow, (n, 1))
        dv = be.matmul_rounded(np.ascontiguousarray(prob.T), do, *p, acc)
        dp = be.matmul_rounded(do, np.ascontiguousarray(v.T), *p, acc)
        pdp = _q(dp * prob, p)
        rs = np.zeros(n)
        for j in range(n):
            if acc:
                rs = rs + pdp[:, j]
            else:
                rs = _q(rs + pdp[:, j], p)
        if acc:
            rs = _q(rs, p)
        ds = _q(prob * _q(dp - rs[:, None], p), p)
        ds = _q(scale * ds, p)
        dq = be.matmul_rounded(ds, k, *p, acc)
        dk = be.matmul_rounded(np.ascontiguousarray(ds.T), q, *p, acc)
        grads["wq"] = _q(grads["wq"] + be.matmul_rounded(np.ascontiguousarray(x.T), dq, *p, acc), p)
        grads["wk"] = _q(grads["wk"] + be.matmul_rounded(np.ascontiguousarray(x.T), dk, *p, acc), p)
        grads["wv"] = _q(grads["wv"] + be.matmul_rounded(np.ascontiguousarray(x.T), dv, *p, acc), p)
        dx = _q(
            _q(be.matmul_rounded(dq, np.ascontiguousarray(model.wq.T), *p, acc)
               + be.matmul_rounded(dk, np.ascontiguousarray(model.wk.T), *p, acc), p)
            + be.matmul_rounded(dv, np.ascontiguousarray(model.wv.T), *p, acc),
            p,
        )
        for t in range(n):
            tok = tokens[i, t]
            grads["embed"][tok] = _q(grads["embed"][tok] + dx[t], p)
    return grads


@dataclass(frozen=True)
class Snapshot:
    step: int
    tensors: dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainResult:
    config: TrainRunConfig
    snapshots: list[Snapshot]
    losses: list[float]
    divergence_events: list[tuple[int, float]]


def train_run(cfg: TrainRunConfig) -> TrainResult:
    """Plain SGD; snapshot at step 0 and every checkpoint_every steps.

    A non-finite loss is recorded as a divergence event and training
    continues (the run stays observable, mirroring loss-spike monitoring).
    """
    model = init_model(cfg)
    fmt = cfg.train_format
    p = fmt.params()
    lr = cfg.learning_rate
    snapshots = [Snapshot(0, {k: v.copy() for k, v in model.tensors().items()})]
    losses = []
    events = []
    for step in range(1, cfg.steps + 1):
        tokens, labels = make_batch(cfg.task, step - 1)
        loss, acts = forward_loss(
            model, tokens, labels, cfg.attention_variant, fmt, cfg.accumulate_in_carrier
        )
        losses.append(loss)
        if not np.isfinite(loss):
            events.append((step, loss))
        grads = backward(model, acts, fmt)
        for name in TENSOR_NAMES:
            w = getattr(model, name)
            g = grads[name]
            upd = _q(lr * g, p)
            setattr(model, name, _q(w - upd, p))
        if step % cfg.checkpoint_every == 0:
            snapshots.append(Snapshot(step, {k: v.copy() for k, v in model.tensors().items()}))
    return TrainResult(cfg, snapshots, losses, events)


@dataclass(frozen=True)
class CheckpointDelta:
    step: int
    max_difference: float
    wasserstein: float
    per_tensor: list[tuple[str, float]]


def compare_runs(a: TrainResult | list[Snapshot], b: TrainResult | list[Snapshot]) -> list[CheckpointDelta]:
    """Per-checkpoint weight distances between two runs.

    max_difference is taken over all parameters jointly; the Wasserstein
    aggregate is the size-weighted mean of per-tensor distances on the
    flattened values.
    """
    sa = a.snapshots if isinstance(a, TrainResult) else a
    sb = b.snapshots if isinstance(b, TrainResult) else b
    if [s.step for s in sa] != [s.step for s in sb]:
        raise ValueError("checkpoint schedules differ")
    out = []
    for snap_a, snap_b in zip(sa, sb):
        if set(snap_a.tensors) != set(snap_b.tensors):
            raise ValueError("tensor sets differ")
        md = 0.0
        per = []
        wsum = 0.0
        total = 0
        for name in TENSOR_NAMES:
            ta, tb = snap_a.tensors[name], snap_b.tensors[name]
            if ta.shape != tb.shape:
                raise ValueError(f"shape mismatch for {name}")
            md = max(md, max_difference(ta, tb))
            w = wasserstein_1d(ta.ravel(), tb.ravel())
            per.append((name, w))
            wsum += w * ta.size
            total += ta.size
        out.append(CheckpointDelta(snap_a.step, md, wsum / total, per))
    return out


def run_scenario_suite(base: TrainRunConfig) -> dict[str, list[CheckpointDelta]]:
    """The three paired comparisons behind the divergence proxy:

    1. flash vs baseline (same seed, same format);
    2. baseline vs baseline from a different init (same format);
    3. baseline FP16 vs baseline FP32 (same seed).
    All runs share the task, schedule and data stream.
    """
    seed2 = base.seed + 1000003
    runs = {
        "base": train_run(replace(base, attention_variant="baseline")),
        "flash": train_run(replace(base, attention_variant="flash")),
        "init2": train_run(replace(base, attention_variant="baseline", seed=seed2)),
        "fp16": train_run(replace(base, attention_variant="baseline", train_format=FP16)),
        "fp32": train_run(replace(base, attention_variant="baseline", train_format=FP32)),
    }
    return {
        "flash_vs_baseline": compare_runs(runs["flash"], runs["base"]),
        "different_init": compare_runs(runs["init2"], runs["base"]),
        "fp16_vs_fp32": compare_runs(runs["fp16"], runs["fp32"]),
    }


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, config hash, tensor table, snapshots

_MAGIC = b"ATNLCKPT"


def config_hash(cfg: TrainRunConfig) -> str:
    blob = json.dumps(
        {
            "seed": cfg.seed,
            "variant": cfg.attention_variant,
            "format": cfg.train_format.name,
            "steps": cfg.steps,
            "lr": cfg.learning_rate,
            "ckpt": cfg.checkpoint_every,
            "carrier": cfg.accumulate_in_carrier,
            "task": [cfg.task.vocab, cfg.task.seq_len, cfg.task.head_dim,
                     cfg.task.classes, cfg.task.batch_size, cfg.task.data_seed],
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoints(result: TrainResult, path) -> None:
    """Little-endian binary container for a run's snapshot series."""
    snaps = result.snapshots
    names = list(snaps[0].tensors)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<H", 1))
        f.write(bytes.fromhex(config_hash(result.config)))
        f.write(struct.pack("<HI", len(names), len(snaps)))
        for name in names:
            enc = name.encode()
            shape = snaps[0].tensors[name].shape
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", len(shape)))
            f.write(struct.pack(f"<{len(shape)}I", *shape))
        for snap in snaps:
            f.write(struct.pack("<I", snap.step))
            for name in names:
                f.write(snap.tensors[name].astype("<f8").tobytes())


def load_checkpoints(path) -> tuple[str, list[Snapshot]]:
    """Returns (config hash hex, snapshots)."""
    with open(path, "rb") as f:
        if f.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint container")
        (version,) = struct.unpack("<H", f.read(2))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        chash = f.read(32).hex()
        n_names, n_snaps = struct.unpack("<HI", f.read(6))
        names = []
        shapes = []
        for _ in range(n_names):
            (ln,) = struct.unpack("<H", f.read(2))
            names.append(f.read(ln).decode())
            (nd,) = struct.unpack("<B", f.read(1))
            shapes.append(struct.unpack(f"<{nd}I", f.read(4 * nd)))
        snaps = []
        for _ in range(n_snaps):
            (step,) = struct.unpack("<I", f.read(4))
            tensors = {}
            for name, shape in zip(names, shapes):
                count = int(np.prod(shape))
                buf = f.read(8 * count)
                tensors[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            snaps.append(Snapshot(step, tensors))
    return chash, snaps
