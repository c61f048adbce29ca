"""
Fourier Neural Operator.

    h = P(x);  h = act(SpectralConv(h) + W_b h) repeated L times;  out = fc2(relu(fc1(h)))

The optional pretraining decoder mirrors the encoder stack with its own weights
and maps back to the input channels. After pretraining the decoder is
discarded and a fresh projection head is attached for the downstream task.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from diffcore import dc_ops
from diffcore.dc_tensor import Parameter, Tensor
from fno.fno_layers import Pointwise, SpectralLayer
from utils.errors import ConfigError, ModelStateError, ShapeError

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class FnoConfig:
    in_channels: int
    out_channels: int
    width: int = 32
    modes1: int = 12
    modes2: int = 12
    layers: int = 4
    activation: str = "gelu"
    projection_activation: str = "relu"
    projection_width: Optional[int] = None
    decoder: bool = False
    dtype: str = "f32"

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.width, self.modes1, self.modes2, self.layers) < 1:
            raise ConfigError(f"FNO sizes must be positive: {asdict(self)}")
        for act in (self.activation, self.projection_activation):
            if act not in dc_ops.ACTIVATIONS:
                raise ConfigError(f"unknown activation '{act}', expected one of {sorted(dc_ops.ACTIVATIONS)}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be f32 or f64, got '{self.dtype}'")
        if self.projection_width is None:
            self.projection_width = self.width

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def check_resolution(self, H: int, W: int):
        if self.modes1 > H // 2 or self.modes2 > W // 2:
            raise ShapeError(f"modes ({self.modes1}, {self.modes2}) exceed resolution {H}x{W}")

    def to_dict(self) -> dict:
        return asdict(self)


class FnoModel:
    def __init__(self, config: FnoConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype
        w, m1, m2 = config.width, config.modes1, config.modes2

        self.lift = Pointwise(config.in_channels, w, rng, dtype, "lift")
        self.encoder = [SpectralLayer(w, m1, m2, rng, dtype, f"encoder.{i}") for i in range(config.layers)]
        self.fc1 = Pointwise(w, config.projection_width, rng, dtype, "head.fc1")
        self.fc2 = Pointwise(config.projection_width, config.out_channels, rng, dtype, "head.fc2")

        self.decoder: Optional[List[SpectralLayer]] = None
        self.decoder_out: Optional[Pointwise] = None
        if config.decoder:
            self.decoder = [SpectralLayer(w, m1, m2, rng, dtype, f"decoder.{i}") for i in range(config.layers)]
            self.decoder_out = Pointwise(w, config.in_channels, rng, dtype, "decoder.out")
        self._act = dc_ops.ACTIVATIONS[config.activation]
        self._proj_act = dc_ops.ACTIVATIONS[config.projection_activation]

    # --- forward passes ---

    def _as_input(self, x) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.config.np_dtype))
        if t.data.ndim != 4 or t.shape[1] != self.config.in_channels:
            raise ShapeError(f"model expects (B, {self.config.in_channels}, H, W), got {t.shape}")
        self.config.check_resolution(*t.shape[-2:])
        if t.dtype != self.config.np_dtype:
            t = Tensor(t.data.astype(self.config.np_dtype))
        return t

    def encode(self, x) -> Tensor:
        h = self.lift(self._as_input(x))
        for layer in self.encoder:
            h = self._act(layer(h))
        return h

    def decode_pretrain(self, latent: Tensor) -> Tensor:
        if self.decoder is None:
            raise ModelStateError("model has no pretraining decoder")
        h = latent
        for layer in self.decoder:
            h = self._act(layer(h))
        return self.decoder_out(h)

    def reconstruct(self, x) -> Tensor:
        return self.decode_pretrain(self.encode(x))

    def extract_backbone_features(self, x) -> Tensor:
        """Activations right before the final projection layer, (B, projection_width, H, W)."""
        return self._proj_act(self.fc1(self.encode(x)))

    def forward(self, x) -> Tensor:
        return self.fc2(self.extract_backbone_features(x))

    __call__ = forward

    # --- state machine ---

    @property
    def has_decoder(self) -> bool:
        return self.decoder is not None

    def discard_decoder(self):
        self.decoder = None
        self.decoder_out = None
        self.config.decoder = False

    def attach_head(self, out_channels: int, seed: int):
        """Replaces the projection with a freshly initialized width -> out_channels head."""
        rng = np.random.default_rng(seed)
        dtype = self.config.np_dtype
        self.fc1 = Pointwise(self.config.width, self.config.projection_width, rng, dtype, "head.fc1")
        self.fc2 = Pointwise(self.config.projection_width, out_channels, rng, dtype, "head.fc2")
        self.config.out_channels = out_channels
        logging.info(f"Attached a new projection head: {self.config.width} -> {out_channels} channels")

    def encoder_parameters(self) -> List[Parameter]:
        params = self.lift.parameters()
        for layer in self.encoder:
            params += layer.parameters()
        return params

    def head_parameters(self) -> List[Parameter]:
        return self.fc1.parameters() + self.fc2.parameters()

    def decoder_parameters(self) -> List[Parameter]:
        if self.decoder is None:
            return []
        params = []
        for layer in self.decoder:
            params += layer.parameters()
        return params + self.decoder_out.parameters()

    def all_parameters(self) -> List[Parameter]:
        return self.encoder_parameters() + self.head_parameters() + self.decoder_parameters()

    def parameters(self) -> List[Parameter]:
        """Trainable parameters in a fixed order; a frozen encoder is left out."""
        return [p for p in self.all_parameters() if p.requires_grad]

    def freeze_encoder(self):
        for p in self.encoder_parameters():
            p.requires_grad = False

    def unfreeze(self):
        for p in self.all_parameters():
            p.requires_grad = True

    @property
    def encoder_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.encoder_parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.all_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = {p.name: p for p in self.all_parameters()}
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, value in state.items():
            params[name].assign(value)

    def num_parameters(self) -> int:
        return int(sum(p.size * (2 if p.is_complex else 1) for p in self.all_parameters()))
