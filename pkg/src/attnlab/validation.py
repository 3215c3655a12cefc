"""Fast self-validation oracles behind the `validate` subcommand.

Each check returns (passed, detail). The suite validates the emulation
against independent references: native float casts for quantization, a
brute-force assignment oracle for the Wasserstein metric, central finite
differences for the gradients, and the single-tile collapse of the flash
kernel onto the baseline's softmax intermediates.
"""

from __future__ import annotations

import itertools
from dataclasses import replace

import numpy as np

from . import backend
from .attention import BlockGeometry, baseline_attention, flash_attention
from .formats import BF16, FP16, FP32, FP64
from .matrix import Matrix, random_matrix
from .metrics import max_difference, wasserstein_1d
from .trainer import TaskSpec, TrainRunConfig, backward, forward_loss, init_model, make_batch

__all__ = ["CHECKS", "run_checks", "check_names"]


def _bits_equal(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and np.array_equal(a.view(np.uint64), b.view(np.uint64))


def check_quantize_conformance() -> tuple[bool, str]:
    """Emulated FP32/FP16 match the platform casts bit-for-bit; idempotence
    and monotonicity hold on random samples."""
    rng = np.random.default_rng(2024)
    bits = rng.integers(0, 2**64, size=1_000_000, dtype=np.uint64)
    x = bits.view(np.float64)
    x = x[np.isfinite(x)]
    with np.errstate(all="ignore"):
        ours32 = backend.active.quantize_array(x, *FP32.params())
        ref32 = x.astype(np.float32).astype(np.float64)
        ours16 = backend.active.quantize_array(x, *FP16.params())
        ref16 = x.astype(np.float16).astype(np.float64)
    if not _bits_equal(ours32, ref32):
        return False, "fp32 conformance mismatch"
    if not _bits_equal(ours16, ref16):
        return False, "fp16 conformance mismatch"
    z = rng.normal(0, 10, 100_000)
    for fmt in (BF16, FP16, FP32, FP64):
        qz = backend.active.quantize_array(z, *fmt.params())
        if not _bits_equal(backend.active.quantize_array(qz, *fmt.params()), qz):
            return False, f"idempotence failed for {fmt.name}"
        zs = np.sort(z)
        qs = backend.active.quantize_array(zs, *fmt.params())
        if np.any(np.diff(qs) < 0):
            return False, f"monotonicity failed for {fmt.name}"
    return True, f"{x.size} samples vs native casts"


def check_single_tile_reduction() -> tuple[bool, str]:
    """With one tile, flash running stats equal the baseline softmax
    intermediates bitwise and FP64 outputs agree to 1e-12."""
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(12):
        n = int(rng.integers(1, 48))
        d = int(rng.integers(1, 24))
        seed = int(rng.integers(0, 1 << 30))
        fmt = (BF16, FP16, FP32, FP64)[trial % 4]
        q = random_matrix(n, d, seed, fmt, stream=0)
        k = random_matrix(n, d, seed, fmt, stream=1)
        v = random_matrix(n, d, seed, fmt, stream=2)
        out, m, l = flash_attention(q, k, v, fmt, BlockGeometry(n, n),
                                    return_running_stats=True)
        p = fmt.params()
        import math
        s = backend.active.matmul_rounded(q.data, np.ascontiguousarray(k.data.T), *p, False)
        s = backend.active.quantize_array((1.0 / math.sqrt(d)) * s, *p)
        m_ref = backend.active.rowmax(s)
        prob = backend.active.quantize_array(
            backend.active.exp_array(backend.active.quantize_array(s - m_ref[:, None], *p)), *p
        )
        l_ref = np.zeros(n)
        for j in range(prob.shape[1]):
            l_ref = backend.active.quantize_array(l_ref + prob[:, j], *p)
        if not (_bits_equal(m, m_ref) and _bits_equal(l, l_ref)):
            return False, f"running stats diverge at n={n} d={d} {fmt.name}"
        if fmt is FP64:
            base = baseline_attention(q, k, v, fmt)
            worst = max(worst, max_difference(out, base))
    if worst > 1e-12:
        return False, f"FP64 single-tile deviation {worst:.3e} > 1e-12"
    return True, f"stats bitwise equal; FP64 max deviation {worst:.3e}"


def check_wasserstein_oracle() -> tuple[bool, str]:
    """Equal-size W1 matches brute-force optimal assignment within 1e-12."""
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(40):
        n = int(rng.integers(1, 7))
        xs = rng.normal(0, 3, n)
        ys = rng.normal(1, 2, n)
        got = wasserstein_1d(xs, ys)
        best = min(
            float(np.mean(np.abs(xs - np.array(perm))))
            for perm in itertools.permutations(ys)
        )
        worst = max(worst, abs(got - best))
    if worst > 1e-12:
        return False, f"assignment oracle gap {worst:.3e}"
    return True, f"max gap vs brute-force assignment {worst:.3e}"


def check_gradient_fp64() -> tuple[bool, str]:
    """Analytic FP64 gradients vs central finite differences (h = 1e-5)."""
    cfg = TrainRunConfig(
        seed=3, attention_variant="baseline", train_format=FP64, steps=1,
        learning_rate=0.1, checkpoint_every=1,
        task=TaskSpec(vocab=12, seq_len=6, head_dim=8, classes=3, batch_size=2),
    )
    model = init_model(cfg)
    tokens, labels = make_batch(cfg.task, 0)
    _, acts = forward_loss(model, tokens, labels, "baseline", FP64)
    grads = backward(model, acts, FP64)
    h = 1e-5
    worst = 0.0
    for name, w in model.tensors().items():
        g = grads[name]
        flat = w.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = forward_loss(model, tokens, labels, "baseline", FP64)
            flat[idx] = orig - h
            lm, _ = forward_loss(model, tokens, labels, "baseline", FP64)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            ga = g.ravel()[idx]
            err = abs(ga - fd) / max(abs(ga), abs(fd), 1e-4)
            worst = max(worst, err)
    if worst > 1e-4:
        return False, f"max relative gradient error {worst:.3e} > 1e-4"
    return True, f"max relative gradient error {worst:.3e}"


def check_backend_parity() -> tuple[bool, str]:
    """Compiled and numpy backends agree bit-for-bit on a kernel battery."""
    from . import _pure

    backends = backend.available_backends()
    if "native" not in backends:
        return True, "native backend not built; nothing to compare"
    native = backends["native"]
    rng = np.random.default_rng(5)
    x = rng.normal(0, 50, 50_000)
    for fmt in (BF16, FP16, FP32, FP64):
        if not _bits_equal(_pure.quantize_array(x, *fmt.params()),
                           native.quantize_array(x, *fmt.params())):
            return False, f"quantize parity broke at {fmt.name}"
    if not _bits_equal(_pure.exp_array(x), native.exp_array(x)):
        return False, "exp parity broke"
    with np.errstate(all="ignore"):
        if not _bits_equal(_pure.log_array(np.abs(x) + 1e-300),
                           native.log_array(np.abs(x) + 1e-300)):
            return False, "log parity broke"
    if not _bits_equal(_pure.standard_normal(42, 1, 9999), native.standard_normal(42, 1, 9999)):
        return False, "rng parity broke"
    for trial in range(8):
        n, d = int(rng.integers(1, 24)), int(rng.integers(1, 12))
        fmt = (BF16, FP16, FP32, FP64)[trial % 4]
        carrier = bool(trial % 2)
        q = _pure.quantize_array(rng.normal(0, 1.5, (n, d)), *fmt.params())
        k = _pure.quantize_array(rng.normal(0, 1.5, (n, d)), *fmt.params())
        v = _pure.quantize_array(rng.normal(0, 1.5, (n, d)), *fmt.params())
        br, bc = int(rng.integers(1, n + 1)), int(rng.integers(1, n + 1))
        a = _pure.flash_forward(q, k, v, 0.3, br, bc, *fmt.params(), carrier, None, False)
        b = native.flash_forward(q, k, v, 0.3, br, bc, *fmt.params(), carrier, None, False)
        if not _bits_equal(a, b):
            return False, f"flash parity broke at n={n} d={d} {fmt.name}"
    return True, "quantize/exp/log/rng/flash bitwise identical"


CHECKS = (
    ("quantize_conformance", check_quantize_conformance),
    ("single_tile_reduction", check_single_tile_reduction),
    ("wasserstein_oracle", check_wasserstein_oracle),
    ("gradient_check_fp64", check_gradient_fp64),
    ("backend_parity", check_backend_parity),
)


def check_names() -> list[str]:
    return [name for name, _ in CHECKS]


def run_checks(names: list[str] | None = None) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        passed, detail = fn()
        results.append((name, passed, detail))
    return results
