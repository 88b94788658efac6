"""Alternating adversarial training loop, optimizers, and checkpointing.

Every minibatch performs one approximator update (minimize L_s + lambda_u*L_u)
followed by one explainer update (minimize L_s + lambda_u*L~_u + lambda_e*L_e),
with fresh Gumbel noise per step and per sample. The epoch counter m drives
the prior warm-start decay.
"""

from __future__ import annotations

import base64
import json
import os
import struct
import time
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .approximators import (ApproximatorPair, cross_entropy_var, make_pair,
                            relativistic_flip, sliced_wasserstein_var,
                            sw_directions)
from .core import ConfigError, TrainConfig, named_rng
from .explainer import ExplainerNet, fuse_prior, fuse_prior_var, prior_constraint_loss_var
from .sampler import relaxed_topk_var, sample_gumbel_batch

CHECKPOINT_MAGIC = b"MEEDCKPT"
CHECKPOINT_VERSION = 1


class TrainingAbort(RuntimeError):
    """Raised when a loss goes non-finite; the last good checkpoint survives."""


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""


# ---------------------------------------------------------------------------
# Optimizers (flat parameter vectors, in-place updates)
# ---------------------------------------------------------------------------

class Optimizer:
    name = "base"

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        raise NotImplementedError

    def get_state(self) -> dict:
        raise NotImplementedError

    def set_state(self, state: dict) -> None:
        raise NotImplementedError


class Sgd(Optimizer):
    name = "sgd"

    def __init__(self, rate: float, n: int, decay: float = 0.0):
        self.rate, self.decay, self.t = rate, decay, 0

    def step(self, params, grad):
        self.t += 1
        params -= self.rate / (1.0 + self.decay * self.t) * grad

    def get_state(self):
        return {"t": self.t}

    def set_state(self, state):
        self.t = int(state["t"])


class RmsProp(Optimizer):
    name = "rmsprop"

    def __init__(self, rate: float, n: int, decay: float = 0.0,
                 rho: float = 0.9, eps: float = 1e-8):
        self.rate, self.decay, self.rho, self.eps = rate, decay, rho, eps
        self.avg = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.avg = self.rho * self.avg + (1 - self.rho) * grad * grad
        params -= self.rate / (1.0 + self.decay * self.t) * grad / (np.sqrt(self.avg) + self.eps)

    def get_state(self):
        return {"t": self.t, "avg": self.avg}

    def set_state(self, state):
        self.t = int(state["t"])
        self.avg = np.asarray(state["avg"], dtype=np.float64)


class Adadelta(Optimizer):
    name = "adadelta"

    def __init__(self, rate: float, n: int, decay: float = 0.0,
                 rho: float = 0.95, eps: float = 1e-6):
        self.rate, self.rho, self.eps = rate, rho, eps
        self.acc_g = np.zeros(n)
        self.acc_d = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.acc_g = self.rho * self.acc_g + (1 - self.rho) * grad * grad
        delta = np.sqrt(self.acc_d + self.eps) / np.sqrt(self.acc_g + self.eps) * grad
        self.acc_d = self.rho * self.acc_d + (1 - self.rho) * delta * delta
        params -= self.rate * delta

    def get_state(self):
        return {"t": self.t, "acc_g": self.acc_g, "acc_d": self.acc_d}

    def set_state(self, state):
        self.t = int(state["t"])
        self.acc_g = np.asarray(state["acc_g"], dtype=np.float64)
        self.acc_d = np.asarray(state["acc_d"], dtype=np.float64)


class Adam(Optimizer):
    name = "adam"

    def __init__(self, rate: float, n: int, decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.rate, self.decay = rate, decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        params -= self.rate / (1.0 + self.decay * self.t) * mhat / (np.sqrt(vhat) + self.eps)

    def get_state(self):
        return {"t": self.t, "m": self.m, "v": self.v}

    def set_state(self, state):
        self.t = int(state["t"])
        self.m = np.asarray(state["m"], dtype=np.float64)
        self.v = np.asarray(state["v"], dtype=np.float64)


def make_optimizer(config: TrainConfig, n: int) -> Optimizer:
    cls = {"sgd": Sgd, "rmsprop": RmsProp, "adadelta": Adadelta, "adam": Adam}[config.optimizer]
    return cls(config.learning_rate, n, decay=config.decay)


# ---------------------------------------------------------------------------
# Update steps
# ---------------------------------------------------------------------------

def _loss_u_var(y: np.ndarray, pred_u: ad.Var, config: TrainConfig,
                thetas: Optional[np.ndarray]) -> ad.Var:
    if config.loss_u == "cross-entropy":
        return cross_entropy_var(y, pred_u)
    return sliced_wasserstein_var(y, pred_u, thetas)


def approximator_step(pair: ApproximatorPair, explainer: ExplainerNet,
                      x: np.ndarray, y: np.ndarray, config: TrainConfig,
                      xi: np.ndarray, opt_s: Optimizer, opt_u: Optimizer,
                      prior_r: Optional[np.ndarray] = None, m: int = 0,
                      sw_thetas: Optional[np.ndarray] = None,
                      batch_id: str = "?") -> tuple:
    """One update of both approximators; explainer parameters stay frozen."""
    z = explainer.score(x, y)
    if prior_r is not None:
        z = fuse_prior(z, prior_r, m)
    v = relaxed_topk_var(ad.Var(z), xi, config.tau).value
    leaves_s = pair.a_selected.make_leaves()
    leaves_u = pair.a_unselected.make_leaves()
    pred_s = pair.a_selected.forward_var(ad.Var(x * v), leaves_s)
    pred_u = pair.a_unselected.forward_var(ad.Var(x * (1.0 - v)), leaves_u)
    l_s = cross_entropy_var(y, pred_s)
    l_u = _loss_u_var(y, pred_u, config, sw_thetas)
    total = ad.add(l_s, ad.mul(l_u, config.lambda_u))
    for name, val in (("L_s", l_s.value), ("L_u", l_u.value)):
        if not np.isfinite(val):
            raise TrainingAbort(f"non-finite {name} in approximator step, batch {batch_id}")
    ad.backward(total)
    opt_s.step(pair.a_selected.parameters, pair.a_selected.grad_from_leaves(leaves_s))
    opt_u.step(pair.a_unselected.parameters, pair.a_unselected.grad_from_leaves(leaves_u))
    return float(l_s.value), float(l_u.value)


def explainer_step(explainer: ExplainerNet, pair: ApproximatorPair,
                   x: np.ndarray, y: np.ndarray, config: TrainConfig,
                   xi: np.ndarray, opt_e: Optimizer,
                   prior_r: Optional[np.ndarray] = None, m: int = 0,
                   sw_thetas: Optional[np.ndarray] = None,
                   batch_id: str = "?") -> tuple:
    """One explainer update; approximator parameters stay frozen."""
    leaves = explainer.make_leaves()
    z = explainer.score_var(x, y, leaves)
    if prior_r is not None:
        z_tilde = fuse_prior_var(z, prior_r, m)
        l_e = prior_constraint_loss_var(z_tilde, z, m)
    else:
        z_tilde = z
        l_e = ad.Var(0.0)
    v = relaxed_topk_var(z_tilde, xi, config.tau)
    pred_s = pair.a_selected.forward_var(ad.mul(v, x), pair.a_selected.make_leaves())
    pred_u = pair.a_unselected.forward_var(ad.mul(ad.sub(1.0, v), x),
                                           pair.a_unselected.make_leaves())
    l_s = cross_entropy_var(y, pred_s)
    if config.loss_u == "cross-entropy":
        # Relativistic variant: still minimize, against the flipped target.
        l_u_tilde = cross_entropy_var(relativistic_flip(y), pred_u)
        objective = ad.add(l_s, ad.mul(l_u_tilde, config.lambda_u))
    else:
        l_u_tilde = sliced_wasserstein_var(y, pred_u, sw_thetas)
        objective = ad.sub(l_s, ad.mul(l_u_tilde, config.lambda_u))
    if config.lambda_e != 0.0 and prior_r is not None:
        objective = ad.add(objective, ad.mul(l_e, config.lambda_e))
    for name, val in (("L_s", l_s.value), ("L_u", l_u_tilde.value), ("L_e", l_e.value)):
        if not np.isfinite(val):
            raise TrainingAbort(f"non-finite {name} in explainer step, batch {batch_id}")
    ad.backward(objective)
    grad = explainer.grad_from_leaves(leaves)
    params = explainer.parameters
    opt_e.step(params, grad)
    explainer.set_parameters(params)
    return float(l_s.value), float(l_u_tilde.value), float(l_e.value)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    format_version: int
    config: TrainConfig
    meta: dict  # architecture: d, c, explainer_hidden, approx_hidden, fusion
    explainer_params: np.ndarray
    a_selected_params: np.ndarray
    a_unselected_params: np.ndarray
    epoch_counter: int
    runtime_state: bytes  # RNG + optimizer state, opaque


def _config_text(config: TrainConfig, meta: dict, epoch_counter: int) -> str:
    items = {f"train.{f.name}": getattr(config, f.name) for f in fields(TrainConfig)}
    for key, val in meta.items():
        items[f"arch.{key}"] = val
    items["epoch_counter"] = epoch_counter
    lines = []
    for key in sorted(items):
        val = items[key]
        if isinstance(val, (tuple, list)):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"


def _parse_config_text(text: str) -> tuple:
    raw = {}
    for line in text.strip().splitlines():
        key, _, val = line.partition("=")
        raw[key] = val
    def conv(key, val):
        if key in ("train.use_output_feedback",):
            return val == "true"
        if key in ("train.k", "train.epochs", "train.seed", "train.batch_size",
                   "train.n_projections"):
            return int(val)
        if key in ("train.tau", "train.lambda_u", "train.lambda_e",
                   "train.learning_rate", "train.decay"):
            return float(val)
        return val
    cfg_kwargs = {k[len("train."):]: conv(k, v) for k, v in raw.items() if k.startswith("train.")}
    config = TrainConfig(**cfg_kwargs)
    meta = {}
    for k, v in raw.items():
        if k.startswith("arch."):
            name = k[len("arch."):]
            if name in ("d", "c"):
                meta[name] = int(v)
            elif name in ("explainer_hidden", "approx_hidden"):
                meta[name] = tuple(int(s) for s in v.split(",")) if v else ()
            else:
                meta[name] = v
    return config, meta, int(raw["epoch_counter"])


def _pack_section(payload: bytes) -> bytes:
    return struct.pack("<Q", len(payload)) + payload


class _Reader:
    def __init__(self, blob: bytes, offset: int):
        self.blob, self.offset = blob, offset

    def section(self) -> bytes:
        if self.offset + 8 > len(self.blob):
            raise CheckpointError(f"truncated checkpoint at offset {self.offset}")
        (length,) = struct.unpack_from("<Q", self.blob, self.offset)
        self.offset += 8
        if self.offset + length > len(self.blob):
            raise CheckpointError(f"truncated checkpoint section at offset {self.offset}")
        out = self.blob[self.offset:self.offset + length]
        self.offset += length
        return out


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Atomic, bit-exact binary serialization."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", ckpt.format_version)]
    parts.append(_pack_section(_config_text(ckpt.config, ckpt.meta,
                                            ckpt.epoch_counter).encode("utf-8")))
    for vec in (ckpt.explainer_params, ckpt.a_selected_params, ckpt.a_unselected_params):
        vec = np.asarray(vec, dtype=np.float64)
        parts.append(_pack_section(struct.pack("<Q", vec.size)
                                   + vec.astype("<f8").tobytes()))
    parts.append(_pack_section(ckpt.runtime_state))
    blob = b"".join(parts)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not a MEED checkpoint")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"format version mismatch: file has {version}, library supports {CHECKPOINT_VERSION}")
    reader = _Reader(blob, 12)
    config, meta, m = _parse_config_text(reader.section().decode("utf-8"))
    vecs = []
    for _ in range(3):
        section = reader.section()
        (count,) = struct.unpack_from("<Q", section, 0)
        vec = np.frombuffer(section, dtype="<f8", count=count, offset=8).astype(np.float64)
        vecs.append(vec)
    runtime = reader.section()
    return Checkpoint(format_version=version, config=config, meta=meta,
                      explainer_params=vecs[0], a_selected_params=vecs[1],
                      a_unselected_params=vecs[2], epoch_counter=m,
                      runtime_state=runtime)


def _encode_arrays(obj):
    if isinstance(obj, dict):
        return {k: _encode_arrays(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": base64.b64encode(obj.astype("<f8").tobytes()).decode("ascii")}
    return obj


def _decode_arrays(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.frombuffer(base64.b64decode(obj["__ndarray__"]), dtype="<f8").copy()
        return {k: _decode_arrays(v) for k, v in obj.items()}
    return obj


def _runtime_state_bytes(rngs: dict, opts: dict) -> bytes:
    payload = {
        "rng": {name: gen.bit_generator.state for name, gen in rngs.items()},
        "opt": {name: _encode_arrays(opt.get_state()) for name, opt in opts.items()},
    }
    return json.dumps(payload, sort_keys=True).encode("utf-8")


def _restore_runtime_state(blob: bytes, rngs: dict, opts: dict) -> None:
    payload = json.loads(blob.decode("utf-8"))
    for name, gen in rngs.items():
        gen.bit_generator.state = payload["rng"][name]
    for name, opt in opts.items():
        opt.set_state(_decode_arrays(payload["opt"][name]))


# ---------------------------------------------------------------------------
# Full training loop
# ---------------------------------------------------------------------------

def build_explainer(meta: dict, config: TrainConfig,
                    rng: Optional[np.random.Generator] = None) -> ExplainerNet:
    fusion = meta.get("fusion", "concat-raw") if config.use_output_feedback else "none"
    return ExplainerNet(meta["d"], meta["c"], hidden=meta["explainer_hidden"],
                        feedback_fusion=fusion, rng=rng)


def nets_from_checkpoint(ckpt: Checkpoint) -> tuple:
    """Rebuild (explainer, pair) with the stored architecture and parameters."""
    explainer = build_explainer(ckpt.meta, ckpt.config)
    explainer.set_parameters(ckpt.explainer_params)
    pair = make_pair(ckpt.meta["d"], ckpt.meta["c"], ckpt.meta["approx_hidden"],
                     np.random.default_rng(0))
    pair.a_selected.set_parameters(ckpt.a_selected_params)
    pair.a_unselected.set_parameters(ckpt.a_unselected_params)
    return explainer, pair


def compute_prior_scores(x: np.ndarray, y: np.ndarray, model,
                         method: str) -> np.ndarray:
    from .baselines import grad_scores, gradient_times_input_scores
    fn = grad_scores if method == "grad" else gradient_times_input_scores
    return np.stack([fn(model, xi).r for xi in x])


def train(dataset, model, config: TrainConfig,
          explainer_hidden: Sequence[int] = (32, 32),
          approx_hidden: Sequence[int] = (32, 32),
          fusion: str = "concat-raw",
          out_dir: Optional[str] = None,
          resume: Optional[Checkpoint] = None,
          log_lines: Optional[list] = None) -> tuple:
    """Train explainer and approximators; returns (explainer, pair, checkpoint).

    `dataset` needs `.X` (n, d); model outputs are computed once and cached.
    With `resume`, continues the stored trajectory up to config.epochs.
    """
    x_all = np.asarray(dataset.X, dtype=np.float64)
    n, d = x_all.shape
    if n == 0:
        raise ConfigError("dataset is empty")
    if config.k > d:
        raise ConfigError(f"k={config.k} exceeds d={d}")
    y_all = getattr(dataset, "Y", None)
    if y_all is None:
        y_all = model.evaluate(x_all)
    y_all = np.asarray(y_all, dtype=np.float64)
    c = y_all.shape[1]

    meta = {"d": d, "c": c, "explainer_hidden": tuple(explainer_hidden),
            "approx_hidden": tuple(approx_hidden), "fusion": fusion}

    rngs = {"data": named_rng(config.seed, "data"),
            "gumbel": named_rng(config.seed, "gumbel"),
            "perturb": named_rng(config.seed, "perturb")}
    init_rng = named_rng(config.seed, "init")

    if resume is not None:
        if resume.meta != meta or resume.config != config:
            raise CheckpointError("resume checkpoint does not match this run's configuration")
        explainer, pair = nets_from_checkpoint(resume)
        start_epoch = resume.epoch_counter
    else:
        explainer = build_explainer(meta, config, rng=init_rng)
        pair = make_pair(d, c, meta["approx_hidden"], init_rng)
        start_epoch = 0

    opts = {"explainer": make_optimizer(config, explainer.n_params),
            "a_selected": make_optimizer(config, pair.a_selected.n_params),
            "a_unselected": make_optimizer(config, pair.a_unselected.n_params)}
    if resume is not None:
        _restore_runtime_state(resume.runtime_state, rngs, opts)

    prior_all = None
    if config.prior_method != "none":
        prior_all = compute_prior_scores(x_all, y_all, model, config.prior_method)

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(format_version=CHECKPOINT_VERSION, config=config, meta=meta,
                          explainer_params=explainer.parameters,
                          a_selected_params=pair.a_selected.parameters.copy(),
                          a_unselected_params=pair.a_unselected.parameters.copy(),
                          epoch_counter=epoch,
                          runtime_state=_runtime_state_bytes(rngs, opts))

    ckpt = snapshot(start_epoch)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin") if out_dir else None
    if ckpt_path:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(ckpt, ckpt_path)

    batch = config.batch_size
    for m in range(start_epoch, config.epochs):
        tic = time.perf_counter()
        perm = rngs["data"].permutation(n)
        sums = np.zeros(3)
        n_batches = 0
        for lo in range(0, n, batch):
            idx = perm[lo:lo + batch]
            xb, yb = x_all[idx], y_all[idx]
            rb = prior_all[idx] if prior_all is not None else None
            thetas = (sw_directions(c, config.n_projections, rngs["perturb"])
                      if config.loss_u == "sliced-wasserstein" else None)
            bid = f"epoch {m} offset {lo}"
            xi_a = sample_gumbel_batch(len(idx), d, config.k, rngs["gumbel"])
            l_s, l_u = approximator_step(pair, explainer, xb, yb, config, xi_a,
                                         opts["a_selected"], opts["a_unselected"],
                                         prior_r=rb, m=m, sw_thetas=thetas, batch_id=bid)
            xi_e = sample_gumbel_batch(len(idx), d, config.k, rngs["gumbel"])
            _, _, l_e = explainer_step(explainer, pair, xb, yb, config, xi_e,
                                       opts["explainer"], prior_r=rb, m=m,
                                       sw_thetas=thetas, batch_id=bid)
            sums += (l_s, l_u, l_e)
            n_batches += 1
        mean = sums / max(n_batches, 1)
        line = (f"epoch={m} L_s={mean[0]:.6f} L_u={mean[1]:.6f} "
                f"L_e={mean[2]:.6f} seconds={time.perf_counter() - tic:.3f}")
        if log_lines is not None:
            log_lines.append(line)
        if out_dir:
            with open(os.path.join(out_dir, "train.log"), "a" if m > start_epoch else "w",
                      encoding="utf-8") as fh:
                fh.write(line + "\n")
        ckpt = snapshot(m + 1)
        if ckpt_path:
            save_checkpoint(ckpt, ckpt_path)
    return explainer, pair, ckpt
