from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from ..exceptions import InvalidParam


@dataclass(frozen=True)
class EaseformerConfig:
    """Architecture and training hyperparameters.

    Defaults follow the published setup (512-wide model, 8 heads). Use
    :meth:`desk` for the small configuration the test-suite trains.
    """

    d_model: int = 512
    n_heads: int = 8
    e_layers: int = 2
    d_layers: int = 2
    d_ff: int | None = None
    seq_len: int = 90
    label_len: int = 60
    pred_len: int = 30
    factor: int = 5
    tau: float = 0.85
    eit_enabled: bool = True
    zero_init_decoder: bool = False
    dropout: float = 0.05
    base_lr: float = 1e-4
    lr_decay: float = 0.5
    epochs: int = 10
    batch_size: int = 8
    patience: int = 3
    seed: int = 0
    n_features: int = 3

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise InvalidParam("d_model must be divisible by n_heads")
        if not 0 <= self.label_len <= self.seq_len:
            raise InvalidParam("label_len must lie in [0, seq_len]")
        if self.tau <= 0:
            raise InvalidParam("tau must be positive")
        if self.pred_len < 1 or self.seq_len < 1:
            raise InvalidParam("seq_len and pred_len must be positive")
        if self.e_layers < 1 or self.d_layers < 1:
            raise InvalidParam("need at least one encoder and one decoder layer")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidParam("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.factor < 1:
            raise InvalidParam("batch_size and factor must be >= 1, epochs >= 0")

    @property
    def ff_width(self):
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    @classmethod
    def desk(cls, **overrides):
        """64-wide, 4-head model; the narrower net needs a larger step size to train in 10 epochs."""
        return cls(**{**DESK, **overrides})

    @classmethod
    def for_mode(cls, mode, **overrides):
        """Config for one of the three compared variants.

        ``informer``: raw distance channel, fully zero decoder prediction block.
        ``no_eit``: raw distance channel, distance prior kept in the decoder.
        ``easeformer``: distance-preference channel and prior (full model).
        """
        flags = MODES[mode]
        return cls(**{**overrides, **flags})

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def coerce(cls, values):
        """Typed copy of a ``{field: text}`` mapping; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in known:
                raise InvalidParam(f"unknown Easeformer option {key!r}")
            try:
                out[key] = _coerce(known[key].type, raw)
            except ValueError as exc:
                raise InvalidParam(f"option {key}: {exc}") from None
        return out

    @classmethod
    def from_dict(cls, values):
        return cls(**cls.coerce(values))


DESK = {"d_model": 64, "n_heads": 4, "base_lr": 1e-3}

MODES = {
    "informer": {"eit_enabled": False, "zero_init_decoder": True},
    "no_eit": {"eit_enabled": False, "zero_init_decoder": False},
    "easeformer": {"eit_enabled": True, "zero_init_decoder": False},
}

MODE_LABELS = {"informer": "Informer", "no_eit": "Easeformer-noEIT", "easeformer": "Easeformer"}


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "None" in str(type_name) and text.lower() in ("", "none"):
        return None
    if "bool" in str(type_name):
        if text.lower() in ("1", "true", "on", "yes"):
            return True
        if text.lower() in ("0", "false", "off", "no"):
            return False
        raise InvalidParam(f"not a boolean: {raw!r}")
    if "int" in str(type_name):
        return int(text)
    if "float" in str(type_name):
        return float(text)
    return text
