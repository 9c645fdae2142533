"""Residual convolutional acoustic models over (maps x mel x time) inputs.

Time is never padded: every convolution shrinks the time axis and shortcut
connections are cropped to match. Frequency uses "same" padding, so only
strides change the frequency extent.

A model exists in one of two geometries that share the same parameters:

* windowed: time strides as configured; one output per input window of
  exactly :func:`receptive_field` frames
* dense: every time stride replaced by stride 1 and all later time operations
  dilated by the product of the removed strides; one output per valid frame
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import gradcore as gc
from .corpus import BalancingConfig, Utterance, balanced_sampler, logmel_maps
from .errors import ConfigError, ContextError, CropError, DimensionError, TrainingError
from .gradcore import BatchNormState, Tensor, ops


@dataclass(frozen=True)
class StageSpec:
    maps: int
    blocks: int
    kind: str = "basic"                       # basic | bottleneck
    init_stride: tuple[int, int] = (1, 1)     # (freq, time) for the first block
    pool: tuple[int, int] | None = None       # (freq, time) window, stride = window


@dataclass(frozen=True)
class ResNetConfig:
    stages: tuple[StageSpec, ...]
    n_states: int
    in_channels: int = 3
    mel_bins: int = 64
    stem_maps: int = 64
    stem_kernel: tuple[int, int] = (5, 5)
    stem_pool: tuple[int, int] = (2, 1)
    fc: tuple[int, ...] = (2084, 2084, 2084, 1024)
    fc_time: int = 3            # time width consumed by the first FC layer
    kernel: int = 3
    width_divisor: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(
            s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages))
        object.__setattr__(self, "fc", tuple(self.fc))
        if not self.stages:
            raise ConfigError("at least one stage required")
        if self.width_divisor < 1:
            raise ConfigError("width_divisor must be >= 1")
        for w in [self.stem_maps] + [s.maps for s in self.stages]:
            if w % self.width_divisor:
                raise ConfigError(f"map count {w} not divisible by width_divisor {self.width_divisor}")
        if min(self.fc, default=1) < self.width_divisor:
            raise ConfigError("FC widths must be >= width_divisor")
        for s in self.stages:
            if s.blocks < 1:
                raise ConfigError("every stage needs >= 1 block")
            if s.kind not in ("basic", "bottleneck"):
                raise ConfigError(f"unknown block kind {s.kind!r}")
            if min(s.init_stride) < 1 or (s.pool is not None and min(s.pool) < 1):
                raise ConfigError("strides and pool windows must be >= 1")
        if self.kernel % 2 == 0 or self.stem_kernel[1] % 2 == 0:
            raise ConfigError("time kernels must be odd so shortcut crops are symmetric")
        if min(self.n_states, self.in_channels, self.mel_bins, self.fc_time) < 1:
            raise ConfigError("n_states, in_channels, mel_bins, fc_time must be >= 1")
        if self.final_freq() < 1:
            raise ConfigError("frequency extent collapses below 1")

    def width(self, maps: int) -> int:
        return max(1, maps // self.width_divisor)

    def stage_shapes(self) -> list[tuple[int, int]]:
        """``(maps, freq bins)`` after the stem and after each stage's blocks."""
        F = (self.mel_bins - self.stem_pool[0]) // self.stem_pool[0] + 1
        out = [(self.width(self.stem_maps), F)]
        for s in self.stages:
            F = (F - 1) // s.init_stride[0] + 1
            out.append((self.width(s.maps) * (4 if s.kind == "bottleneck" else 1), F))
        return out

    def final_freq(self) -> int:
        F = self.stage_shapes()[-1][1]
        pool = self.stages[-1].pool
        return F if pool is None else (F - pool[0]) // pool[0] + 1

    def to_dict(self) -> dict:
        """Declarative form using the table vocabulary (initStride, repeats, maxpool)."""
        return {
            "input": [self.in_channels, self.mel_bins],
            "stem": {"conv": list(self.stem_kernel), "maps": self.stem_maps, "maxpool": list(self.stem_pool)},
            "stages": [{"maps": s.maps, "repeats": s.blocks, "block": s.kind, "initStride": list(s.init_stride),
                        "maxpool": None if s.pool is None else list(s.pool)} for s in self.stages],
            "fc": list(self.fc), "fc_time": self.fc_time, "n_states": self.n_states,
            "kernel": self.kernel, "width_divisor": self.width_divisor,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResNetConfig":
        try:
            stages = tuple(StageSpec(int(s["maps"]), int(s["repeats"]), s.get("block", "basic"),
                                     tuple(s.get("initStride", (1, 1))),
                                     None if s.get("maxpool") is None else tuple(s["maxpool"]))
                           for s in d["stages"])
            stem = d.get("stem", {})
            return cls(stages=stages, n_states=int(d["n_states"]), in_channels=int(d["input"][0]),
                       mel_bins=int(d["input"][1]), stem_maps=int(stem.get("maps", 64)),
                       stem_kernel=tuple(stem.get("conv", (5, 5))), stem_pool=tuple(stem.get("maxpool", (2, 1))),
                       fc=tuple(d.get("fc", (2084, 2084, 2084, 1024))), fc_time=int(d.get("fc_time", 3)),
                       kernel=int(d.get("kernel", 3)), width_divisor=int(d.get("width_divisor", 1)))
        except (KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"malformed stage spec: {exc}") from exc


def column_spec(column: str, width_divisor: int = 1, n_states: int = 32000, mel_bins: int = 64) -> ResNetConfig:
    """The four table columns: (a) bottleneck 1-3333, (b) 1-3333 without time
    stride, (c) 1-2222 and (d) 1-3333 with time-strided stage 4."""
    reps = {"a": 3, "b": 3, "c": 2, "d": 3}[column]
    kind = "bottleneck" if column == "a" else "basic"
    tstride = 2 if column in "cd" else 1
    stages = (
        StageSpec(64, reps, kind, (1, 1)),
        StageSpec(128, reps, kind, (2, 1)),
        StageSpec(256, reps, kind, (2, 1)),
        StageSpec(512, reps, kind, (2, tstride), (2, tstride)),
    )
    return ResNetConfig(stages, n_states=n_states, mel_bins=mel_bins, width_divisor=width_divisor)


def desk_preset(mel_bins: int, n_states: int) -> ResNetConfig:
    """Small time-strided network used for the synthetic end-to-end run."""
    stages = (
        StageSpec(8, 1, "basic", (1, 1)),
        StageSpec(16, 1, "basic", (2, 1)),
        StageSpec(32, 1, "basic", (2, 2), (2, 2)),
    )
    return ResNetConfig(stages, n_states=n_states, mel_bins=mel_bins, stem_maps=8, stem_kernel=(3, 3),
                        fc=(64,), fc_time=3)


# -- time geometry ------------------------------------------------------------------

@dataclass(frozen=True)
class TimeOp:
    kernel: int
    stride: int = 1
    dilation: int = 1


@dataclass(frozen=True)
class _Block:
    name: str
    in_maps: int
    out_maps: int
    in_freq: int
    out_freq: int
    kind: str
    freq_stride: int
    convs: tuple[str, ...]
    projection: bool


def _layout(cfg: ResNetConfig) -> tuple[list[str], dict[str, TimeOp], list[_Block]]:
    """Main-path time operations in order, their windowed geometry, and the blocks."""
    order = ["stem.conv", "stem.pool"]
    geom = {"stem.conv": TimeOp(cfg.stem_kernel[1]), "stem.pool": TimeOp(cfg.stem_pool[1], cfg.stem_pool[1])}
    blocks = []
    maps, F = cfg.stage_shapes()[0]
    for si, st in enumerate(cfg.stages, start=1):
        width = cfg.width(st.maps)
        out_maps = width * (4 if st.kind == "bottleneck" else 1)
        for b in range(st.blocks):
            name = f"s{si}.b{b}"
            first = b == 0
            fs, ts = st.init_stride if first else (1, 1)
            out_F = (F - 1) // fs + 1
            if st.kind == "basic":
                convs = (name + ".conv1", name + ".conv2")
                geom[convs[0]] = TimeOp(cfg.kernel, ts)
                geom[convs[1]] = TimeOp(cfg.kernel)
            else:
                convs = (name + ".conv1", name + ".conv2", name + ".conv3")
                geom[convs[0]] = TimeOp(1)
                geom[convs[1]] = TimeOp(cfg.kernel, ts)
                geom[convs[2]] = TimeOp(1)
            order.extend(convs)
            projection = maps != out_maps or fs != 1 or ts != 1
            if projection:
                geom[name + ".proj"] = TimeOp(1, ts)
            blocks.append(_Block(name, maps, out_maps, F, out_F, st.kind, fs, convs, projection))
            maps, F = out_maps, out_F
        if st.pool is not None:
            pname = f"s{si}.pool"
            geom[pname] = TimeOp(st.pool[1], st.pool[1])
            order.append(pname)
    geom["fc0"] = TimeOp(cfg.fc_time)
    order.append("fc0")
    return order, geom, blocks


def receptive_field(cfg_or_geom, order: Sequence[str] | None = None) -> int:
    """Closed form ``1 + sum_i d_i (k_i - 1) prod_{j<i} s_j`` over the main path."""
    if isinstance(cfg_or_geom, ResNetConfig):
        order, geom, _ = _layout(cfg_or_geom)
    else:
        geom = cfg_or_geom
    total, jump = 1, 1
    for name in order:
        op = geom[name]
        total += op.dilation * (op.kernel - 1) * jump
        jump *= op.stride
    return total


def max_single_output_window(cfg: ResNetConfig) -> int:
    """Longest input still producing exactly one output with floor-mode striding."""
    order, geom, _ = _layout(cfg)
    n = 1
    for name in reversed(order):
        op = geom[name]
        n = (n - 1) * op.stride + op.dilation * (op.kernel - 1) + 1 + (op.stride - 1)
    return n


def time_trace(cfg: ResNetConfig, T: int) -> list[tuple[str, int]]:
    """Layer-by-layer output time lengths of the windowed main path."""
    order, geom, _ = _layout(cfg)
    out = []
    for name in order:
        op = geom[name]
        T = gc.conv_time_length(T, op.kernel, op.stride, op.dilation)
        out.append((name, T))
    return out


def dilate_geometry(order: Sequence[str], geom: Mapping[str, TimeOp]) -> dict[str, TimeOp]:
    """Stride -> dilation rewrite of a windowed geometry."""
    out: dict[str, TimeOp] = {}
    jump = 1
    for name in order:
        op = geom[name]
        proj = name[:-len(".conv1")] + ".proj" if name.endswith(".conv1") else None
        if proj in geom:
            # the projection reads the block input, like conv1
            out[proj] = TimeOp(1, 1, geom[proj].dilation * jump)
        out[name] = TimeOp(op.kernel, 1, op.dilation * jump)
        jump *= op.stride
    return out


def strides_from_dilations(order: Sequence[str], dense: Mapping[str, TimeOp]) -> dict[str, TimeOp]:
    """Inverse of :func:`dilate_geometry` for geometries that start undilated.

    A main-path layer's stride is the dilation growth to the next layer; a
    projection takes the product of its block's conv strides.
    """
    out: dict[str, TimeOp] = {}
    for i, name in enumerate(order):
        op = dense[name]
        nxt = dense[order[i + 1]].dilation if i + 1 < len(order) else op.dilation
        if nxt % op.dilation:
            raise ConfigError(f"dilation does not grow by an integer factor after {name}")
        out[name] = TimeOp(op.kernel, nxt // op.dilation, 1)
    for name in dense:
        if name.endswith(".proj"):
            block = name[:-len(".proj")] + ".conv"
            out[name] = TimeOp(1, math.prod(out[c].stride for c in order if c.startswith(block)), 1)
    return out


def crop_shortcut(x: Tensor, target_T: int) -> Tensor:
    """Drop ``(T - target_T) / 2`` frames from each time edge."""
    T = x.shape[-1]
    diff = T - target_T
    if diff < 0 or diff % 2:
        raise CropError(f"cannot crop time {T} symmetrically to {target_T}")
    if diff == 0:
        return x
    c = diff // 2
    return x[..., c:T - c]


# -- model -----------------------------------------------------------------------------

class ResNetAcousticModel:
    def __init__(self, config: ResNetConfig, seed: int = 0, params: Mapping[str, np.ndarray] | None = None,
                 dense: bool = False):
        self.config = config
        self.order, self.windowed_geometry, self.blocks = _layout(config)
        self.dense = dense
        self.geometry = dilate_geometry(self.order, self.windowed_geometry) if dense else dict(self.windowed_geometry)
        self.bn: dict[str, BatchNormState] = {}
        self._shapes = {}
        init = _init_params(config, self.blocks, seed)
        if params is not None:
            missing = set(init) ^ set(params)
            if missing:
                raise ConfigError(f"parameter names do not match config: {sorted(missing)[:5]}")
            init = params
        self.params = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k)
                       for k, v in sorted(init.items())}
        for k, v in self.params.items():
            if k.endswith(".gamma"):
                self.bn[k[:-6]] = BatchNormState(v.shape)

    @property
    def context(self) -> int:
        return receptive_field(self.windowed_geometry, self.order)

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # -- graph --------------------------------------------------------------------
    def _conv(self, name, h, freq_stride=1, freq_padding="same"):
        op = self.geometry[name]
        W = self.params[name + ".W"]
        b = self.params.get(name + ".b")
        return ops.conv2d(h, W, b, freq_stride=freq_stride, time_stride=op.stride, time_dilation=op.dilation,
                          freq_padding=freq_padding)

    def _bn_relu(self, name, h, mode):
        p = self.params
        return ops.relu(ops.batchnorm_freq(h, p[name + ".gamma"], p[name + ".beta"], self.bn[name], mode))

    def _block(self, blk: _Block, x: Tensor, mode: str) -> Tensor:
        h = x
        offset = 0.0
        jump = 1
        for i, cname in enumerate(blk.convs, start=1):
            h = self._bn_relu(f"{blk.name}.bn{i}", h, mode)
            fs = blk.freq_stride if (blk.kind == "basic" and i == 1) or (blk.kind == "bottleneck" and i == 2) else 1
            h = self._conv(cname, h, freq_stride=fs)
            op = self.geometry[cname]
            offset += op.dilation * (op.kernel - 1) / 2 * jump
            jump *= op.stride
        c = int(offset)
        short = crop_shortcut(x, x.shape[-1] - 2 * c)
        if blk.projection:
            short = self._conv(blk.name + ".proj", short, freq_stride=blk.freq_stride)
        if short.shape != h.shape:
            raise CropError(f"{blk.name}: shortcut {short.shape} vs conv path {h.shape}")
        return h + short

    def graph(self, x, mode: str = "eval") -> Tensor:
        """``N x C x F x T`` input -> ``N x T_out x n_states`` logits."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim == 3:
            x = ops.reshape(x, (1,) + x.shape)
        cfg = self.config
        if x.shape[1] != cfg.in_channels or x.shape[2] != cfg.mel_bins:
            raise DimensionError(f"expected N x {cfg.in_channels} x {cfg.mel_bins} x T input, got {x.shape}")
        h = self._conv("stem.conv", x)
        op = self.geometry["stem.pool"]
        h = ops.maxpool2d(h, cfg.stem_pool, (cfg.stem_pool[0], op.stride), op.dilation)
        bi = 0
        for si, st in enumerate(cfg.stages, start=1):
            for _ in range(st.blocks):
                h = self._block(self.blocks[bi], h, mode)
                bi += 1
            if si == len(cfg.stages):
                h = self._bn_relu("final.bn", h, mode)
            if st.pool is not None:
                op = self.geometry[f"s{si}.pool"]
                h = ops.maxpool2d(h, st.pool, (st.pool[0], op.stride), op.dilation)
        for i in range(len(cfg.fc) + 1):
            name = f"fc{i}"
            if i == 0:
                h = self._conv(name, h, freq_padding="none")
            else:
                h = ops.conv2d(h, self.params[name + ".W"], self.params[name + ".b"], freq_padding="none")
            if i < len(cfg.fc):
                h = ops.relu(h)
        # N x n_states x 1 x T -> N x T x n_states
        N, S, _, T = h.shape
        return ops.transpose(ops.reshape(h, (N, S, T)), (0, 2, 1))

    def forward_window(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        """Logits for windows of exactly :attr:`context` frames: ``C x F x T`` -> ``n_states``
        or ``N x C x F x T`` -> ``N x n_states``."""
        if self.dense:
            raise ConfigError("forward_window needs the windowed (strided) model")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.context:
            raise ContextError(f"window has T={x.shape[-1]}, model requires T = {self.context}")
        out = self.graph(x, mode).data[:, 0, :]
        return out[0] if x.ndim == 3 else out

    def forward_strided(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        """Windowed network on any ``T >= context`` with floor-mode striding."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] < self.context:
            raise ContextError(f"input has T={x.shape[-1]}, need T >= {self.context}")
        out = self.graph(x, mode).data
        return out[0] if x.ndim == 3 else out

    def forward_dense(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        """``C x F x T`` -> ``(T - context + 1) x n_states`` with the dilated model."""
        if not self.dense:
            raise ConfigError("forward_dense needs a model converted with to_dilated")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] < self.context:
            raise ContextError(f"utterance has T={x.shape[-1]}, need T >= {self.context}")
        out = self.graph(x, mode).data
        return out[0] if x.ndim == 3 else out

    # -- utterance-level helpers ---------------------------------------------------------
    def padded_maps(self, utt: Utterance) -> np.ndarray:
        """Log-mel maps with edge-replicated time padding so dense output has ``T`` rows."""
        maps = logmel_maps(utt)
        left = (self.context - 1) // 2
        right = self.context - 1 - left
        return np.pad(maps, ((0, 0), (0, 0), (left, right)), mode="edge")

    def log_posteriors(self, utt: Utterance) -> np.ndarray:
        dense = self if self.dense else to_dilated(self)
        return ops._log_softmax(dense.forward_dense(dense.padded_maps(utt)))

    # -- persistence -----------------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.params.items()}
        for name, st in self.bn.items():
            if st.initialized:
                out[f"buffer.{name}.mean"] = st.running_mean
                out[f"buffer.{name}.var"] = st.running_var
        return out

    def save(self, path) -> None:
        path = Path(path)
        gc.save_checkpoint(path, self.state_dict())
        path.with_suffix(".json").write_text(json.dumps(
            {"kind": "resnet_am", "dense": self.dense, "config": self.config.to_dict()},
            indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ResNetAcousticModel":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        blob = gc.load_checkpoint(path)
        params = {k: v for k, v in blob.items() if not k.startswith("buffer.")}
        model = cls(ResNetConfig.from_dict(meta["config"]), params=params, dense=bool(meta["dense"]))
        for name, st in model.bn.items():
            if f"buffer.{name}.mean" in blob:
                st.running_mean = blob[f"buffer.{name}.mean"]
                st.running_var = blob[f"buffer.{name}.var"]
                st.initialized = True
        return model


def _init_params(cfg: ResNetConfig, blocks: Sequence[_Block], seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}

    def he(shape):
        fan_in = int(np.prod(shape[1:]))
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)

    def bn(name, maps, F):
        p[name + ".gamma"] = np.ones((maps, F))
        p[name + ".beta"] = np.zeros((maps, F))

    stem_maps, _ = cfg.stage_shapes()[0]
    p["stem.conv.W"] = he((stem_maps, cfg.in_channels) + tuple(cfg.stem_kernel))
    k = cfg.kernel
    for blk in blocks:
        if blk.kind == "basic":
            bn(blk.name + ".bn1", blk.in_maps, blk.in_freq)
            p[blk.name + ".conv1.W"] = he((blk.out_maps, blk.in_maps, k, k))
            bn(blk.name + ".bn2", blk.out_maps, blk.out_freq)
            p[blk.name + ".conv2.W"] = he((blk.out_maps, blk.out_maps, k, k))
        else:
            mid = blk.out_maps // 4
            bn(blk.name + ".bn1", blk.in_maps, blk.in_freq)
            p[blk.name + ".conv1.W"] = he((mid, blk.in_maps, 1, 1))
            bn(blk.name + ".bn2", mid, blk.in_freq)
            p[blk.name + ".conv2.W"] = he((mid, mid, k, k))
            bn(blk.name + ".bn3", mid, blk.out_freq)
            p[blk.name + ".conv3.W"] = he((blk.out_maps, mid, 1, 1))
        if blk.projection:
            p[blk.name + ".proj.W"] = he((blk.out_maps, blk.in_maps, 1, 1))
    maps, F = cfg.stage_shapes()[-1]
    bn("final.bn", maps, F)
    Ff = cfg.final_freq()
    sizes = [cfg.width(w) for w in cfg.fc] + [cfg.n_states]
    fan_maps, kf, kt = maps, Ff, cfg.fc_time
    for i, n in enumerate(sizes):
        p[f"fc{i}.W"] = he((n, fan_maps, kf, kt))
        p[f"fc{i}.b"] = np.zeros(n)
        fan_maps, kf, kt = n, 1, 1
    return p


def build(config: ResNetConfig, seed: int = 0) -> ResNetAcousticModel:
    return ResNetAcousticModel(config, seed)


def parameter_count(config: ResNetConfig) -> int:
    """Closed-form count (no arrays allocated), equal to ``build(config).num_params()``."""
    order, geom, blocks = _layout(config)
    k = config.kernel
    n = config.stage_shapes()[0][0] * config.in_channels * config.stem_kernel[0] * config.stem_kernel[1]
    for blk in blocks:
        if blk.kind == "basic":
            n += 2 * blk.in_maps * blk.in_freq + blk.out_maps * blk.in_maps * k * k
            n += 2 * blk.out_maps * blk.out_freq + blk.out_maps * blk.out_maps * k * k
        else:
            mid = blk.out_maps // 4
            n += 2 * blk.in_maps * blk.in_freq + mid * blk.in_maps
            n += 2 * mid * blk.in_freq + mid * mid * k * k
            n += 2 * mid * blk.out_freq + blk.out_maps * mid
        if blk.projection:
            n += blk.out_maps * blk.in_maps
    maps, F = config.stage_shapes()[-1]
    n += 2 * maps * F
    fan = maps * config.final_freq() * config.fc_time
    for size in [config.width(w) for w in config.fc] + [config.n_states]:
        n += size * fan + size
        fan = size
    return n


def to_dilated(model: ResNetAcousticModel) -> ResNetAcousticModel:
    """Dense-prediction copy: identical parameter values and BN statistics, new geometry."""
    if model.dense:
        return model
    out = ResNetAcousticModel(model.config, params={k: v.data.copy() for k, v in model.params.items()},
                              dense=True)
    for name, st in model.bn.items():
        tgt = out.bn[name]
        tgt.running_mean, tgt.running_var = st.running_mean.copy(), st.running_var.copy()
        tgt.initialized = st.initialized
    return out


def calibrate(model: ResNetAcousticModel, x: np.ndarray) -> None:
    """One train-mode pass so every batch-norm layer has running statistics."""
    model.graph(np.asarray(x, dtype=np.float64), mode="train")


# -- training ------------------------------------------------------------------------------

@dataclass(frozen=True)
class ResNetSchedule:
    epochs: int = 6
    steps_per_epoch: int = 40
    batch_size: int = 32
    learning_rate: float = 0.03
    momentum: float = 0.9
    seed: int = 0
    balancing: float = 0.8

    @classmethod
    def from_json(cls, path) -> "ResNetSchedule":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class ResNetTrainResult:
    losses: list[float] = field(default_factory=list)


class WindowSampler:
    """Draws (window, label) pairs: a state from the balanced distribution,
    then a uniformly chosen frame carrying that state."""

    def __init__(self, model: ResNetAcousticModel, utts: Sequence[Utterance], balancing: BalancingConfig,
                 seed: int):
        self.maps = [model.padded_maps(u) for u in utts]
        self.ctx = model.context
        where: dict[int, list[tuple[int, int]]] = {}
        for ui, u in enumerate(utts):
            for t, s in enumerate(u.labels):
                where.setdefault(int(s), []).append((ui, t))
        self.where = {s: np.array(v) for s, v in sorted(where.items())}
        counts = {s: len(v) for s, v in self.where.items()}
        self.states = balanced_sampler(counts, balancing, seed)
        self.rng = np.random.default_rng([seed, 1])

    def batch(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        for _ in range(n):
            s = next(self.states)
            ui, t = self.where[s][self.rng.integers(len(self.where[s]))]
            xs.append(self.maps[ui][:, :, t:t + self.ctx])
            ys.append(s)
        return np.stack(xs), np.array(ys)


def train(model: ResNetAcousticModel, utts: Sequence[Utterance], schedule: ResNetSchedule,
          balancing: BalancingConfig | None = None) -> ResNetTrainResult:
    """Windowed cross-entropy training with Nesterov momentum on balanced batches."""
    if model.dense:
        raise ConfigError("train the windowed model; convert with to_dilated afterwards")
    balancing = balancing or BalancingConfig(schedule.balancing)
    sampler = WindowSampler(model, utts, balancing, schedule.seed)
    opt = gc.Optimizer(model.params, gc.OptimizerConfig("nesterov", schedule.learning_rate,
                                                        momentum=schedule.momentum))
    names = list(model.params)
    result = ResNetTrainResult()
    for epoch in range(schedule.epochs):
        total = 0.0
        for _ in range(schedule.steps_per_epoch):
            x, y = sampler.batch(schedule.batch_size)
            logits = model.graph(x, mode="train")
            loss = gc.softmax_cross_entropy(logits, y[:, None])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"loss diverged (NaN/Inf) in epoch {epoch}")
            grads = dict(zip(names, gc.grad(loss, [model.params[k] for k in names])))
            gc.step(model.params, grads, opt.state)
            total += value
        result.losses.append(total / schedule.steps_per_epoch)
    return result


def frame_accuracy(model: ResNetAcousticModel, utts: Sequence[Utterance]) -> float:
    dense = to_dilated(model)
    hits = total = 0
    for u in utts:
        pred = dense.log_posteriors(u).argmax(axis=1)
        hits += int((pred == u.labels).sum())
        total += u.T
    return hits / total


def windows_of(maps: np.ndarray, ctx: int) -> Iterator[np.ndarray]:
    for t in range(maps.shape[-1] - ctx + 1):
        yield maps[..., t:t + ctx]
