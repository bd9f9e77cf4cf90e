"""The 3D UNet: strided-convolution encoder, transposed-convolution decoder
with skip connections, and sigmoid heads on the last decoder stages for deep
supervision."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FormatError, ShapeError
from .rng import derive_rng

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class UNetConfig:
    num_downsamples: int = 4
    base_channels: int = 32
    channel_cap: int = 320
    kernel: int = 3
    convs_per_stage: int = 2
    leaky_slope: float = 0.01
    deep_supervision_heads: int = 4
    in_channels: int = 1
    out_channels: int = 1

    def validate(self):
        if self.num_downsamples < 1:
            raise ConfigError("num_downsamples must be >= 1")
        if not 1 <= self.deep_supervision_heads <= self.num_downsamples:
            raise ConfigError(
                f"deep_supervision_heads must be in [1, num_downsamples={self.num_downsamples}]")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd")
        if self.convs_per_stage < 1:
            raise ConfigError("convs_per_stage must be >= 1")
        return self

    def stage_channels(self, i):
        return min(self.base_channels * 2 ** i, self.channel_cap)

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


# the small CPU profile used throughout the tests
DESK_UNET = UNetConfig(num_downsamples=3, base_channels=8, channel_cap=64,
                       deep_supervision_heads=3)


@dataclass
class UNetOutputs:
    main: ad.Tensor
    aux: list = field(default_factory=list)

    @property
    def heads(self):
        return [self.main] + list(self.aux)


class _ConvBlock:
    """conv -> instance norm -> leaky ReLU."""

    def __init__(self, cin, cout, k, stride, slope, rng, dtype):
        fan_in = cin * k ** 3
        std = np.sqrt(2.0 / fan_in)
        self.w = ad.Tensor(rng.normal(0.0, std, (cout, cin, k, k, k)).astype(dtype),
                           requires_grad=True)
        self.b = ad.Tensor(np.zeros((1, cout, 1, 1, 1), dtype), requires_grad=True)
        self.gamma = ad.Tensor(np.ones((1, cout, 1, 1, 1), dtype), requires_grad=True)
        self.beta = ad.Tensor(np.zeros((1, cout, 1, 1, 1), dtype), requires_grad=True)
        self.stride = stride
        self.slope = slope

    def forward(self, x):
        y = ad.conv3d(x, self.w, self.b, self.stride)
        y = ad.instance_norm(y, self.gamma, self.beta)
        return ad.leaky_relu(y, self.slope)

    def params(self, prefix):
        return [(f"{prefix}.conv.w", self.w), (f"{prefix}.conv.b", self.b),
                (f"{prefix}.norm.gamma", self.gamma), (f"{prefix}.norm.beta", self.beta)]


class _Head:
    """1x1x1 conv + sigmoid score head."""

    def __init__(self, cin, cout, rng, dtype):
        std = np.sqrt(2.0 / cin)
        self.w = ad.Tensor(rng.normal(0.0, std, (cout, cin, 1, 1, 1)).astype(dtype),
                           requires_grad=True)
        self.b = ad.Tensor(np.zeros((1, cout, 1, 1, 1), dtype), requires_grad=True)

    def forward(self, x):
        return ad.sigmoid(ad.conv3d(x, self.w, self.b, 1))

    def params(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class UNet3D:
    """Built by :func:`build`; holds parameter tensors and runs forward."""

    def __init__(self, cfg, seed, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.seed = int(seed)
        self.dtype = np.dtype(dtype).type
        rng = derive_rng(seed, "unet-init")
        k = cfg.kernel
        nd = cfg.num_downsamples
        ch = cfg.stage_channels
        self.encoder = []
        for i in range(nd + 1):
            blocks = []
            for j in range(cfg.convs_per_stage):
                cin = (cfg.in_channels if i == 0 else ch(i - 1)) if j == 0 else ch(i)
                stride = 2 if (i >= 1 and j == 0) else 1
                blocks.append(_ConvBlock(cin, ch(i), k, stride, cfg.leaky_slope,
                                         rng, self.dtype))
            self.encoder.append(blocks)
        self.decoder = []
        for i in range(nd - 1, -1, -1):
            std = np.sqrt(2.0 / (ch(i + 1) * 8))
            up_w = ad.Tensor(rng.normal(0.0, std, (ch(i + 1), ch(i), 2, 2, 2)).astype(self.dtype),
                             requires_grad=True)
            blocks = []
            for j in range(cfg.convs_per_stage):
                cin = 2 * ch(i) if j == 0 else ch(i)
                blocks.append(_ConvBlock(cin, ch(i), k, 1, cfg.leaky_slope,
                                         rng, self.dtype))
            self.decoder.append((up_w, blocks))  # decoder[0] is the deepest stage
        self.heads = []
        for i in range(cfg.deep_supervision_heads):
            self.heads.append(_Head(ch(i), cfg.out_channels, rng, self.dtype))

    def named_parameters(self):
        out = []
        for i, blocks in enumerate(self.encoder):
            for j, blk in enumerate(blocks):
                out.extend(blk.params(f"enc{i}.block{j}"))
        for idx, (up_w, blocks) in enumerate(self.decoder):
            stage = self.cfg.num_downsamples - 1 - idx
            out.append((f"dec{stage}.up.w", up_w))
            for j, blk in enumerate(blocks):
                out.extend(blk.params(f"dec{stage}.block{j}"))
        for i, head in enumerate(self.heads):
            out.extend(head.params(f"head{i}"))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def parameter_count(self):
        return sum(int(np.prod(t.shape)) for t in self.parameters())

    def forward(self, patch):
        """patch: (N, in_channels, p, p, p) tensor with p divisible by
        2**num_downsamples.  Returns UNetOutputs with the main head first
        and aux heads at 1/2, 1/4, ... resolution."""
        nd = self.cfg.num_downsamples
        spatial = patch.shape[2:]
        for s in spatial:
            if s % (2 ** nd) != 0:
                raise ShapeError(
                    f"patch spatial dims {spatial} must be divisible by 2^{nd}")
        skips = []
        x = patch
        for blocks in self.encoder:
            for blk in blocks:
                x = blk.forward(x)
            skips.append(x)
        stage_feats = {}
        for idx, (up_w, blocks) in enumerate(self.decoder):
            stage = nd - 1 - idx
            x = ad.conv3d_transpose(x, up_w, 2)
            x = ad.concat_channels(x, skips[stage])
            for blk in blocks:
                x = blk.forward(x)
            stage_feats[stage] = x
        outputs = [self.heads[i].forward(stage_feats[i])
                   for i in range(self.cfg.deep_supervision_heads)]
        return UNetOutputs(main=outputs[0], aux=outputs[1:])


def build(cfg, seed, dtype=np.float32):
    """He-normal conv weights (std = sqrt(2/fan_in)), zero biases, unit
    gamma / zero beta; bitwise deterministic for a given seed."""
    return UNet3D(cfg, seed, dtype)


def downsample_targets(gt, levels):
    """Per deep-supervision level, factor-2 max-pool of the previous level:
    a coarse voxel is foreground iff any of its 8 children is.  gt is a
    binary (D,H,W) array; returns [gt, level1, ..., level_levels]."""
    gt = np.asarray(gt)
    out = [gt.astype(np.uint8)]
    cur = out[0]
    for _ in range(levels):
        d, h, w = cur.shape
        if d % 2 or h % 2 or w % 2:
            raise ShapeError(f"target dims {cur.shape} not divisible by 2")
        cur = cur.reshape(d // 2, 2, h // 2, 2, w // 2, 2).max(axis=(1, 3, 5))
        out.append(cur)
    return out


def save_checkpoint(model, path_prefix, extra=None):
    """Write <prefix>.bin (flat little-endian float32 blob) and
    <prefix>.json (manifest with per-parameter name/shape/byte offset,
    format_version, and the embedded UNet config)."""
    names = model.named_parameters()
    manifest = {"format_version": CHECKPOINT_FORMAT_VERSION,
                "unet_config": model.cfg.to_dict(),
                "seed": model.seed,
                "params": []}
    if extra:
        manifest["extra"] = extra
    offset = 0
    blob = bytearray()
    for name, t in names:
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        manifest["params"].append(
            {"name": name, "shape": list(t.shape), "offset": offset})
        blob += arr.tobytes()
        offset += arr.nbytes
    bin_path = str(path_prefix) + ".bin"
    json_path = str(path_prefix) + ".json"
    with open(bin_path, "wb") as f:
        f.write(bytes(blob))
    with open(json_path, "w") as f:
        json.dump(manifest, f, indent=1)
    return json_path, bin_path


def load_checkpoint(path_prefix, dtype=np.float32):
    """Rebuild the model from the embedded config and restore parameters."""
    json_path = str(path_prefix) + ".json"
    bin_path = str(path_prefix) + ".bin"
    with open(json_path) as f:
        manifest = json.load(f)
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(
            f"checkpoint format_version {version} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})")
    cfg = UNetConfig.from_dict(manifest["unet_config"])
    model = build(cfg, manifest.get("seed", 0), dtype=dtype)
    blob = np.fromfile(bin_path, dtype="<f4")
    params = dict(model.named_parameters())
    for entry in manifest["params"]:
        name = entry["name"]
        if name not in params:
            raise FormatError(f"checkpoint parameter {name} not in model")
        shape = tuple(entry["shape"])
        t = params[name]
        if t.shape != shape:
            raise FormatError(
                f"checkpoint parameter {name} shape {shape} != model {t.shape}")
        n = int(np.prod(shape))
        start = entry["offset"] // 4
        if start + n > blob.size:
            raise FormatError(f"checkpoint blob truncated at parameter {name}")
        t.data = blob[start:start + n].reshape(shape).astype(dtype)
    return model, manifest
