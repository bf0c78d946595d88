"""End-to-end model assembly and configuration.

The encoder is a small stacked-BConv pyramid at strides 4/8/16/32 standing in
for a pretrained transformer backbone; every module downstream only assumes a
generic 4-level pyramid. Ablation switches (use_fpm / use_hrp / use_cfm /
freq_mode) change which sub-layers are constructed, never the code path shape.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

import numpy as np

from .blocks import BConv, Conv2d, RFB, SAM
from .errors import ConfigError, ShapeError
from .params import ParamStore
from .stage1 import FPM, NCD, FREQ_MODES
from .stage2 import CFM, ChannelReducer
from . import tensor as T
from .tensor import Tensor


@dataclass
class FPNetConfig:
    input_size: int = 512
    enc_channels: tuple[int, int, int, int] = (32, 64, 160, 256)
    ncd_width: int = 32
    cfm_width: int = 64
    bottleneck_width: int = 16
    hrp_width: int = 32
    head_gain: float = 24.0
    alpha_oct: float = 0.5
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 4
    epochs: int = 100
    seed: int = 0
    augment: bool = True
    use_fpm: bool = True
    use_hrp: bool = True
    use_cfm: bool = True
    freq_mode: str = "both"

    def validate(self) -> "FPNetConfig":
        if self.input_size % 32 != 0 or self.input_size <= 0:
            raise ConfigError(f"input_size must be a positive multiple of 32; "
                              f"got {self.input_size}")
        for name in ("ncd_width", "cfm_width", "bottleneck_width", "hrp_width",
                     "batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if any(c <= 1 for c in self.enc_channels) or len(self.enc_channels) != 4:
            raise ConfigError(f"enc_channels needs 4 widths > 1; got {self.enc_channels}")
        if self.head_gain <= 0.0:
            raise ConfigError(f"head_gain must be positive; got {self.head_gain}")
        if not 0.0 < self.alpha_oct < 1.0:
            raise ConfigError(f"alpha_oct must be in (0,1); got {self.alpha_oct}")
        if self.freq_mode not in FREQ_MODES:
            raise ConfigError(f"freq_mode must be one of {FREQ_MODES}; got {self.freq_mode!r}")
        return self

    # -- flat key=value config file ------------------------------------------

    def to_text(self) -> str:
        lines = ["# fpnet configuration"]
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = int(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FPNetConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(key, value)
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path) -> "FPNetConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _parse_value(key: str, value: str):
    try:
        if key == "enc_channels":
            parts = tuple(int(p) for p in value.split(","))
            return parts
        if key == "freq_mode":
            return value
        if key in ("alpha_oct", "lr", "weight_decay", "head_gain"):
            return float(value)
        if key in ("augment", "use_fpm", "use_hrp", "use_cfm"):
            return value.strip().lower() in ("1", "true", "on", "yes")
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse value {value!r}") from exc


@dataclass
class FeaturePyramid:
    x1: Tensor  # stride 4
    x2: Tensor  # stride 8
    x3: Tensor  # stride 16
    x4: Tensor  # stride 32


@dataclass
class PredictionTriplet:
    s1: Tensor
    s2: Tensor
    s_output: Tensor


class Encoder:
    """Four stride-2 stages of stacked BConvs; X1 sits at stride 4."""

    def __init__(self, store: ParamStore, prefix: str, rng, channels):
        c1, c2, c3, c4 = channels
        self.s1a = BConv(store, f"{prefix}.s1a", rng, 3, c1, 3, stride=2)
        self.s1b = BConv(store, f"{prefix}.s1b", rng, c1, c1, 3, stride=2)
        self.s2a = BConv(store, f"{prefix}.s2a", rng, c1, c2, 3, stride=2)
        self.s2b = BConv(store, f"{prefix}.s2b", rng, c2, c2, 3)
        self.s3a = BConv(store, f"{prefix}.s3a", rng, c2, c3, 3, stride=2)
        self.s3b = BConv(store, f"{prefix}.s3b", rng, c3, c3, 3)
        self.s4a = BConv(store, f"{prefix}.s4a", rng, c3, c4, 3, stride=2)
        self.s4b = BConv(store, f"{prefix}.s4b", rng, c4, c4, 3)

    def __call__(self, image: Tensor, training: bool = False) -> FeaturePyramid:
        x1 = self.s1b(self.s1a(image, training), training)
        x2 = self.s2b(self.s2a(x1, training), training)
        x3 = self.s3b(self.s3a(x2, training), training)
        x4 = self.s4b(self.s4a(x3, training), training)
        return FeaturePyramid(x1=x1, x2=x2, x3=x3, x4=x4)


class FPNet:
    def __init__(self, config: FPNetConfig):
        self.config = config.validate()
        self.store = ParamStore()
        rng = np.random.default_rng(config.seed)
        c1, c2, c3, c4 = config.enc_channels
        w = config.ncd_width
        cw = config.cfm_width
        s = self.store

        self.encoder = Encoder(s, "enc", rng, config.enc_channels)

        # stage 1: per-level features into the NCD working width
        if config.use_fpm:
            self.fpm2 = FPM(s, "fpm2", rng, c2, w, alpha_oct=config.alpha_oct,
                            freq_mode=config.freq_mode, level_hw=config.input_size // 8)
            self.fpm3 = FPM(s, "fpm3", rng, c3, w, alpha_oct=config.alpha_oct,
                            freq_mode=config.freq_mode, level_hw=config.input_size // 16)
            self.fpm4 = FPM(s, "fpm4", rng, c4, w, alpha_oct=config.alpha_oct,
                            freq_mode=config.freq_mode, level_hw=config.input_size // 32)
            self._level_feats = (self.fpm2, self.fpm3, self.fpm4)
        else:
            self.plain2 = BConv(s, "plain2", rng, c2, w, 3)
            self.plain3 = BConv(s, "plain3", rng, c3, w, 3)
            self.plain4 = BConv(s, "plain4", rng, c4, w, 3)
            self._level_feats = (self.plain2, self.plain3, self.plain4)
        self.ncd = NCD(s, "ncd", rng, w)

        # stage 2: reduce, then two fusion steps (CFM or plain concatenation)
        self.reduce2 = ChannelReducer(s, "reduce2", rng, c2, cw)
        self.reduce3 = ChannelReducer(s, "reduce3", rng, c3, cw)
        self.reduce4 = ChannelReducer(s, "reduce4", rng, c4, cw)
        if config.use_cfm:
            self.cfm1 = CFM(s, "cfm1", rng, cw, config.bottleneck_width)
            self.cfm2 = CFM(s, "cfm2", rng, cw, config.bottleneck_width)
        else:
            self.fuse34 = BConv(s, "fuse34", rng, 2 * cw, cw, 3)
            self.fuse23 = BConv(s, "fuse23", rng, 2 * cw, cw, 3)
        self.s2_head = Conv2d(s, "s2_head", rng, cw, 1, 1)

        # refinement head
        if config.use_hrp:
            hw = config.hrp_width
            self.rfb = RFB(s, "rfb", rng, c1, hw)
            self.sam = SAM(s, "sam", rng)
            self.head_adapter = Conv2d(s, "head_adapter", rng, cw, hw, 1)
            self.head_b1 = BConv(s, "head_b1", rng, hw, hw, 3)
            self.head_b2 = BConv(s, "head_b2", rng, hw, hw, 3)
            self.out_head = Conv2d(s, "out_head", rng, hw, 1, 1)
        else:
            self.head_b1 = BConv(s, "head_b1", rng, cw, cw, 3)
            self.out_head = Conv2d(s, "out_head", rng, cw, 1, 1)

    # ------------------------------------------------------------------

    def encode(self, image: Tensor, training: bool = False) -> FeaturePyramid:
        n = self.config.input_size
        if image.shape[1] != 3 or image.shape[2] != n or image.shape[3] != n:
            raise ShapeError(f"encode: expected (b,3,{n},{n}); got {image.shape}")
        return self.encoder(image, training)

    def stage1(self, pyramid: FeaturePyramid, training: bool = False):
        l2, l3, l4 = self._level_feats
        f2 = l2(pyramid.x2, training)
        f3 = l3(pyramid.x3, training)
        f4 = l4(pyramid.x4, training)
        return self.ncd(f2, f3, f4, training)

    def stage2(self, pyramid: FeaturePyramid, s1_logits: Tensor, training: bool = False):
        """Returns (s2_logits at level-3 resolution, f2_out at level-2 resolution)."""
        f2 = self.reduce2(pyramid.x2, training)
        f3 = self.reduce3(pyramid.x3, training)
        f4 = self.reduce4(pyramid.x4, training)
        if self.config.use_cfm:
            s1_at_4 = _resize_to(s1_logits, f4)
            f3_out = self.cfm1(f3, f4, s1_at_4, training)
            s2 = T.affine(self.s2_head(f3_out), self.config.head_gain, 0.0)
            f2_out = self.cfm2(f2, f3_out, s2, training)
        else:
            f3_out = self.fuse34(T.concat_channels(
                [f3, T.upsample_nearest(f4, 2)]), training)
            s2 = T.affine(self.s2_head(f3_out), self.config.head_gain, 0.0)
            f2_out = self.fuse23(T.concat_channels(
                [f2, T.upsample_nearest(f3_out, 2)]), training)
        return s2, f2_out

    def head(self, pyramid: FeaturePyramid, f2_out: Tensor, training: bool = False) -> Tensor:
        if self.config.use_hrp:
            refined = self.sam(self.rfb(pyramid.x1, training), training)
            lifted = self.head_adapter(_resize_to(f2_out, refined))
            fused = T.add(refined, lifted)
            out = self.out_head(self.head_b2(self.head_b1(fused, training), training))
        else:
            out = self.out_head(self.head_b1(f2_out, training))
        return T.affine(out, self.config.head_gain, 0.0)

    def forward(self, image: Tensor, training: bool = False) -> PredictionTriplet:
        n = self.config.input_size
        pyramid = self.encode(image, training)
        dec = self.stage1(pyramid, training)
        s1 = T.affine(dec.s1_logits, self.config.head_gain, 0.0)
        s2, f2_out = self.stage2(pyramid, s1, training)
        s_out = self.head(pyramid, f2_out, training)
        return PredictionTriplet(
            s1=T.resize_bilinear(s1, n, n),
            s2=T.resize_bilinear(s2, n, n),
            s_output=T.resize_bilinear(s_out, n, n),
        )

    def predict(self, image: Tensor) -> np.ndarray:
        """Inference-mode probability map (B,1,H,W) in [0,1]."""
        preds = self.forward(image, training=False)
        return T.sigmoid(preds.s_output).data


def _resize_to(x: Tensor, like: Tensor) -> Tensor:
    if (x.shape[2], x.shape[3]) == (like.shape[2], like.shape[3]):
        return x
    return T.resize_bilinear(x, like.shape[2], like.shape[3])


def ablation_config(base: FPNetConfig, row: str) -> FPNetConfig:
    """Named rows of the two ablation tables, reachable by switches alone."""
    rows = {
        "baseline": dict(use_fpm=False, use_hrp=False, use_cfm=False),
        "fpm": dict(use_fpm=True, use_hrp=False, use_cfm=False),
        "fpm_hrp": dict(use_fpm=True, use_hrp=True, use_cfm=False),
        "full": dict(use_fpm=True, use_hrp=True, use_cfm=True),
        "freq_low": dict(use_fpm=True, use_hrp=True, use_cfm=True, freq_mode="low"),
        "freq_high": dict(use_fpm=True, use_hrp=True, use_cfm=True, freq_mode="high"),
        "freq_both": dict(use_fpm=True, use_hrp=True, use_cfm=True, freq_mode="both"),
    }
    if row not in rows:
        raise ConfigError(f"unknown ablation row {row!r}; expected one of {sorted(rows)}")
    return replace(base, **rows[row]).validate()
