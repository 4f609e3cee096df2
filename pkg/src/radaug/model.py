"""Differentiable pose regressor with hand-rolled numpy backprop.

Reference architecture: three 3x3 stride-2 conv blocks (8/16/32 channels,
tanh), spatial flatten, one 64-unit tanh dense layer, 6-unit linear pose
head. Images enter as raw [0, 255] values and are divided by 255
internally; input gradients are reported back in the raw pixel domain via
the chain rule, so perturbation step sizes live in pixel units.

Flatten rather than global average pooling: on this scale of data the GAP
bottleneck makes frames nearly indistinguishable (pairwise feature
distances collapse by more than an order of magnitude), and the model
plateaus at predict-the-mean. A "gap" pool mode is kept for comparison.

Everything is float64 and seeded, so identical (seed, inputs) give
bitwise-identical outputs. tanh keeps the whole network smooth, which the
finite-difference gradient checks rely on.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Pose, SampleTuple, matrix_to_poses, poses_to_matrix
from .loss import LossParams, tuple_loss_grad_arrays

_KERNEL = 3
_STRIDE = 2
_PAD = 1

DEFAULT_ARCH = {"conv_channels": [8, 16, 32], "hidden": 64, "out": 6,
                "pool": "flatten"}

CHECKPOINT_MAGIC = b"RADG"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """Raised when a training or gradient step encounters a non-finite loss."""


@dataclass(frozen=True)
class InputGradient:
    """dLoss/dpixels for one image, in the raw [0, 255] pixel domain."""

    grad: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grad, dtype=np.float64)
        if g.ndim != 3:
            raise ValueError(f"grad must be (H, W, C), got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("gradient contains non-finite values")
        object.__setattr__(self, "grad", g)


def _im2col(x: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Extract 3x3 stride-2 patches: (N, H, W, C) -> (N, OH, OW, 9*C)."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (_PAD, _PAD), (_PAD, _PAD), (0, 0)))
    oh = (h + 2 * _PAD - _KERNEL) // _STRIDE + 1
    ow = (w + 2 * _PAD - _KERNEL) // _STRIDE + 1
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(n, oh, ow, _KERNEL, _KERNEL, c),
        strides=(s0, s1 * _STRIDE, s2 * _STRIDE, s1, s2, s3), writeable=False)
    return np.ascontiguousarray(win).reshape(n, oh, ow, _KERNEL * _KERNEL * c), (oh, ow)


def _col2im(dcols: np.ndarray, in_shape: tuple) -> np.ndarray:
    """Scatter-add patch gradients back onto the (padded) input."""
    n, h, w, c = in_shape
    oh = (h + 2 * _PAD - _KERNEL) // _STRIDE + 1
    ow = (w + 2 * _PAD - _KERNEL) // _STRIDE + 1
    dxp = np.zeros((n, h + 2 * _PAD, w + 2 * _PAD, c))
    d6 = dcols.reshape(n, oh, ow, _KERNEL, _KERNEL, c)
    for a in range(_KERNEL):
        for b in range(_KERNEL):
            dxp[:, a:a + oh * _STRIDE:_STRIDE, b:b + ow * _STRIDE:_STRIDE, :] += d6[:, :, :, a, b, :]
    return dxp[:, _PAD:_PAD + h, _PAD:_PAD + w, :]


def arch_for_poses(pose_matrix: np.ndarray, base_arch: dict | None = None) -> dict:
    """Architecture descriptor with a fixed output affine fitted to targets.

    The per-component mean and spread of the training poses become
    non-trainable constants, so the head regresses O(1) residuals whatever
    the world scale. Constants travel with the checkpoint header.
    """
    arch = dict(base_arch or DEFAULT_ARCH)
    mat = np.asarray(pose_matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != arch["out"]:
        raise ValueError(f"pose matrix must be (n, {arch['out']}), got {mat.shape}")
    arch["out_offset"] = mat.mean(axis=0).tolist()
    arch["out_scale"] = np.maximum(mat.std(axis=0), 1e-3).tolist()
    return arch


def _out_hw(size: int, n_blocks: int) -> int:
    for _ in range(n_blocks):
        size = (size + 2 * _PAD - _KERNEL) // _STRIDE + 1
    return size


def _param_table(input_dims: tuple[int, int, int], arch: dict) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) table; also the checkpoint layout."""
    chans = [input_dims[2]] + list(arch["conv_channels"])
    table = []
    for li in range(1, len(chans)):
        table.append((f"conv{li}.w", (_KERNEL * _KERNEL * chans[li - 1], chans[li])))
        table.append((f"conv{li}.b", (chans[li],)))
    if arch.get("pool", "flatten") == "gap":
        feat = chans[-1]
    else:
        n_blocks = len(arch["conv_channels"])
        feat = _out_hw(input_dims[0], n_blocks) * _out_hw(input_dims[1], n_blocks) \
            * chans[-1]
    table.append(("fc1.w", (feat, arch["hidden"])))
    table.append(("fc1.b", (arch["hidden"],)))
    table.append(("head.w", (arch["hidden"], arch["out"])))
    table.append(("head.b", (arch["out"],)))
    return table


class PoseRegressor:
    """Small conv pose regressor. Parameters are never mutated in place:
    train_step returns a fresh model, so a handle can be shared freely for
    forward/input_gradient calls."""

    def __init__(self, input_dims: tuple[int, int, int], params: dict[str, np.ndarray],
                 arch: dict | None = None):
        self.input_dims = tuple(int(d) for d in input_dims)
        self.arch = dict(arch or DEFAULT_ARCH)
        self.params = dict(params)
        for name, shape in _param_table(self.input_dims, self.arch):
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape "
                                 f"{self.params[name].shape}, expected {shape}")

    @classmethod
    def create(cls, input_dims: tuple[int, int, int] = (64, 64, 3), seed: int = 0,
               arch: dict | None = None) -> "PoseRegressor":
        """Fresh model with seeded uniform fan-in init."""
        h, w, _ = input_dims
        if min(h, w) < 8:
            raise ValueError(f"input dims too small for 3 stride-2 blocks: {input_dims}")
        arch = dict(arch or DEFAULT_ARCH)
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in _param_table(tuple(input_dims), arch):
            if name.endswith(".b"):
                params[name] = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(tuple(input_dims), params, arch)

    # --- forward / backward -------------------------------------------------

    def _check_dims(self, pixels: np.ndarray):
        if pixels.shape[1:] != self.input_dims:
            raise ValueError(f"image dims {pixels.shape[1:]} do not match "
                             f"model input dims {self.input_dims}")

    def _forward(self, x_raw: np.ndarray):
        """Forward pass on a raw-pixel batch; returns (out, cache)."""
        self._check_dims(x_raw)
        h = np.asarray(x_raw, dtype=np.float64) / 255.0
        convs = []
        for li in range(1, len(self.arch["conv_channels"]) + 1):
            cols, _ = _im2col(h)
            z = cols @ self.params[f"conv{li}.w"] + self.params[f"conv{li}.b"]
            a = np.tanh(z)
            convs.append((cols, a, h.shape))
            h = a
        if self.arch.get("pool", "flatten") == "gap":
            feat = h.mean(axis=(1, 2))
        else:
            feat = h.reshape(h.shape[0], -1)
        a1 = np.tanh(feat @ self.params["fc1.w"] + self.params["fc1.b"])
        out = a1 @ self.params["head.w"] + self.params["head.b"]
        # fixed affine maps the O(1) head range onto world-scale poses
        if "out_scale" in self.arch:
            out = out * np.asarray(self.arch["out_scale"], dtype=np.float64)
        if "out_offset" in self.arch:
            out = out + np.asarray(self.arch["out_offset"], dtype=np.float64)
        return out, (convs, feat, a1, h.shape)

    def _backward(self, cache, dout: np.ndarray, *, want_input_grad: bool,
                  want_param_grads: bool):
        convs, feat, a1, last_shape = cache
        grads: dict[str, np.ndarray] = {}
        if "out_scale" in self.arch:
            dout = dout * np.asarray(self.arch["out_scale"], dtype=np.float64)
        da1 = dout @ self.params["head.w"].T
        if want_param_grads:
            grads["head.w"] = a1.T @ dout
            grads["head.b"] = dout.sum(axis=0)
        dz1 = da1 * (1.0 - a1 * a1)
        dfeat = dz1 @ self.params["fc1.w"].T
        if want_param_grads:
            grads["fc1.w"] = feat.T @ dz1
            grads["fc1.b"] = dz1.sum(axis=0)
        if self.arch.get("pool", "flatten") == "gap":
            _, oh, ow, _ = last_shape
            dh = np.broadcast_to(dfeat[:, None, None, :] / (oh * ow), last_shape).copy()
        else:
            dh = dfeat.reshape(last_shape)
        for li in range(len(convs), 0, -1):
            cols, a, in_shape = convs[li - 1]
            dz = (dh * (1.0 - a * a)).reshape(-1, a.shape[-1])
            w = self.params[f"conv{li}.w"]
            if want_param_grads:
                grads[f"conv{li}.w"] = cols.reshape(-1, w.shape[0]).T @ dz
                grads[f"conv{li}.b"] = dz.sum(axis=0)
            if li > 1 or want_input_grad:
                dh = _col2im(dz @ w.T, in_shape)
        dx_raw = dh / 255.0 if want_input_grad else None
        return grads, dx_raw

    # --- public operations ----------------------------------------------------

    def forward_pixels(self, pixels: np.ndarray) -> np.ndarray:
        """(N, H, W, C) raw pixels -> (N, 6) pose vectors."""
        out, _ = self._forward(np.asarray(pixels, dtype=np.float64))
        return out

    def forward(self, tup: SampleTuple) -> list[Pose]:
        """Predicted poses for every frame of a tuple, deterministic per theta."""
        out = self.forward_pixels(tup.pixel_stack())
        if not np.all(np.isfinite(out)):
            raise NonFiniteLossError("forward produced non-finite pose components")
        return matrix_to_poses(out)

    def _loss_and_dout(self, out: np.ndarray, splits: list[int],
                       truth_mats: list[np.ndarray], params: LossParams,
                       average: bool):
        """Per-tuple loss gradients assembled into a batch dout matrix."""
        scale = 1.0 / len(splits) if average else 1.0
        dout = np.zeros_like(out)
        total = dbeta = dgamma = 0.0
        start = 0
        for n, truth in zip(splits, truth_mats):
            dp, db, dg, bd = tuple_loss_grad_arrays(out[start:start + n], truth, params)
            dout[start:start + n] = dp * scale
            total += bd.total * scale
            dbeta += db * scale
            dgamma += dg * scale
            start += n
        return dout, total, dbeta, dgamma

    @staticmethod
    def _truth_matrix(truth) -> np.ndarray:
        if isinstance(truth, np.ndarray):
            return np.asarray(truth, dtype=np.float64)
        return poses_to_matrix(list(truth))

    def input_gradient(self, tup: SampleTuple, truth: Sequence[Pose],
                       params: LossParams) -> list[InputGradient]:
        """dL/dx per image of the tuple, with theta held frozen.

        The parameters are only read, never written, so theta is bitwise
        unchanged after this call.
        """
        pixels = tup.pixel_stack()
        out, cache = self._forward(pixels)
        truth_mat = self._truth_matrix(truth)
        dout, total, _, _ = self._loss_and_dout(
            out, [len(tup)], [truth_mat], params, average=False)
        if not np.isfinite(total):
            raise NonFiniteLossError(f"loss is non-finite ({total}) in input_gradient")
        _, dx = self._backward(cache, dout, want_input_grad=True, want_param_grads=False)
        return [InputGradient(grad=g) for g in dx]

    def input_gradient_batch(self, batch: Sequence[SampleTuple],
                             truths: Sequence, params: LossParams) -> np.ndarray:
        """Stacked raw-domain input gradients for a batch of tuples.

        One forward/backward pass over all images; rows follow the batch's
        frame order. Loss per tuple is not averaged, matching input_gradient.
        """
        pixels = np.concatenate([t.pixel_stack() for t in batch])
        splits = [len(t) for t in batch]
        truth_mats = [self._truth_matrix(tr) for tr in truths]
        out, cache = self._forward(pixels)
        dout, total, _, _ = self._loss_and_dout(out, splits, truth_mats, params,
                                                average=False)
        if not np.isfinite(total):
            raise NonFiniteLossError(f"loss is non-finite ({total}) in input_gradient_batch")
        _, dx = self._backward(cache, dout, want_input_grad=True, want_param_grads=False)
        return dx

    def train_step(self, batch: Sequence[SampleTuple], truths: Sequence,
                   params: LossParams, lr: float
                   ) -> tuple["PoseRegressor", LossParams, float]:
        """One SGD update on the mean tuple loss of the batch.

        Returns (updated model, updated loss params, pre-update loss). beta
        and gamma step with the same learning rate as the weights. The mean
        (not sum) over tuples keeps the step size independent of batch size;
        for a single tuple the reported loss equals tuple_loss exactly.
        """
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        pixels = np.concatenate([t.pixel_stack() for t in batch])
        splits = [len(t) for t in batch]
        truth_mats = [self._truth_matrix(tr) for tr in truths]
        out, cache = self._forward(pixels)
        dout, total, dbeta, dgamma = self._loss_and_dout(
            out, splits, truth_mats, params, average=True)
        if not np.isfinite(total):
            raise NonFiniteLossError(f"loss is non-finite ({total}) in train_step")
        grads, _ = self._backward(cache, dout, want_input_grad=False,
                                  want_param_grads=True)
        new_params = {name: self.params[name] - lr * grads[name]
                      for name in self.params}
        new_model = PoseRegressor(self.input_dims, new_params, self.arch)
        return new_model, params.stepped(dbeta, dgamma, lr), float(total)

    # --- introspection ----------------------------------------------------------

    def checksum(self) -> str:
        """sha256 over the ordered parameter bytes; freeze-contract witness."""
        h = hashlib.sha256()
        for name, _ in _param_table(self.input_dims, self.arch):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[name].ravel()
                               for name, _ in _param_table(self.input_dims, self.arch)])

    def n_params(self) -> int:
        return int(sum(np.prod(s) for _, s in _param_table(self.input_dims, self.arch)))


# --- checkpoint format ------------------------------------------------------
# magic | u32 version | u32 header length | header JSON | little-endian f64
# flat parameter vector (network params in table order, then beta, gamma).


def save_checkpoint(model: PoseRegressor, params: LossParams, path,
                    *, seed: int = 0, steps: int = 0, config_hash: str = "") -> None:
    header = {
        "arch": model.arch,
        "input_dims": list(model.input_dims),
        "param_table": [[n, list(s)] for n, s in _param_table(model.input_dims, model.arch)],
        "loss": {"alpha": params.alpha, "all_pairs": params.all_pairs},
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    flat = np.concatenate([model.flat_params(), [params.beta, params.gamma]])
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(hdr)))
        f.write(hdr)
        f.write(flat.astype("<f8").tobytes())
    with open(str(path) + ".manifest.txt", "w") as f:
        f.write(f"seed={seed}\nsteps={steps}\nconfig_hash={config_hash}\n")


def load_checkpoint(path) -> tuple[PoseRegressor, LossParams]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version, hdr_len = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(hdr_len).decode())
        flat = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    table = [(n, tuple(s)) for n, s in header["param_table"]]
    expect = sum(int(np.prod(s)) for _, s in table) + 2
    if flat.size != expect:
        raise ValueError(f"checkpoint has {flat.size} values, expected {expect}")
    params = {}
    pos = 0
    for name, shape in table:
        n = int(np.prod(shape))
        params[name] = flat[pos:pos + n].reshape(shape).copy()
        pos += n
    beta, gamma = float(flat[pos]), float(flat[pos + 1])
    model = PoseRegressor(tuple(header["input_dims"]), params, header["arch"])
    loss = LossParams(beta=beta, gamma=gamma, alpha=header["loss"]["alpha"],
                      all_pairs=header["loss"]["all_pairs"])
    return model, loss
