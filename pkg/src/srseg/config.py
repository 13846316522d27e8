"""Run configuration: plain-text `key = value` files with dotted keys.

Every field of the data, network, and training records is addressable; unknown
keys are hard errors rather than silent typos. A run is identified by the
sha256 of its canonical text (all keys, defaults included, sorted), so two
configs that resolve to the same values share a fingerprint regardless of key
order or comments.
"""

import hashlib

from .data import DegradationSpec, dataset_ids
from .seg import DEFAULT_ENCODER_PLAN, SegConfig
from .sr import SRConfig
from .training import MODES, LossWeights, TrainConfig
from .validation import IGNORE_ID


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _ints(text):
    t = text.strip()
    return tuple(int(p) for p in t.split(",")) if t else ()


def _plan(text):
    out = []
    for part in text.split(","):
        depth, _, width = part.strip().partition("x")
        out.append((int(depth), int(width)))
    return tuple(out)


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{d}x{w}" for d, w in value)
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


# key -> (default, parser)
SCHEMA = {
    "data.dataset": ("synthetic", str),
    "data.root": ("data", str),
    "data.factor": (4, int),
    "data.tile": (480, int),
    "data.kernel_a": (-0.5, float),
    "data.antialias": (True, _bool),
    "data.cache": (True, _bool),
    "data.synth_n": (16, int),
    "data.synth_test_n": (8, int),
    "data.synth_classes": (3, int),
    "sr.stages": (7, int),
    "sr.feat0": (256, int),
    "sr.nr": (64, int),
    "sr.dense": (True, _bool),
    "seg.num_classes": (0, int),  # 0: take the dataset's class count
    "seg.encoder_plan": (DEFAULT_ENCODER_PLAN, _plan),
    "seg.ignore_ids": ((IGNORE_ID,), _ints),
    "train.mode": ("end2end", str),
    "train.epochs": (300, int),
    "train.base_lr": (1e-5, float),
    "train.decay_factor": (10.0, float),
    "train.beta1": (0.9, float),
    "train.beta2": (0.999, float),
    "train.eps": (1e-8, float),
    "train.sr_weight_decay": (1e-4, float),
    "train.seg_weight_decay": (5e-4, float),
    "train.batch_size": (1, int),
    "train.seed": (0, int),
    "train.alpha": (0.1, float),
    "train.beta": (1000.0, float),
    "train.clamp": ("straight_through", str),
    "train.checkpoint_every": (50, int),
}

# the balance grid shipped for the sweep command
ALPHA_GRID = (0.001, 0.01, 0.1, 1.0)
BETA_GRID = (1.0, 10.0, 100.0, 1000.0, 10000.0, 100000.0)


def parse_config_text(text, source="<config>"):
    """Raw key -> string-value pairs; rejects unknown and duplicate keys."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got '{raw}'")
        key = key.strip()
        if key not in SCHEMA:
            raise ValueError(f"{source}:{lineno}: unknown config key '{key}'")
        if key in pairs:
            raise ValueError(f"{source}:{lineno}: duplicate key '{key}'")
        pairs[key] = value.strip()
    return pairs


def resolve(file_text=None, overrides=(), source="<config>"):
    """Merge defaults <- config file <- command-line overrides into a full
    value mapping."""
    values = {key: default for key, (default, _) in SCHEMA.items()}
    raw = parse_config_text(file_text, source) if file_text else {}
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"override '{item}' is not key=value")
        if key not in SCHEMA:
            raise ValueError(f"unknown config key '{key}'")
        raw[key] = value.strip()
    for key, text in raw.items():
        parser = SCHEMA[key][1]
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise ValueError(f"config key '{key}': {exc}") from None
    if values["data.dataset"] not in dataset_ids():
        raise ValueError(f"data.dataset must be one of {dataset_ids()}")
    return values


def canonical_text(values):
    return "".join(f"{key} = {_render(values[key])}\n" for key in sorted(values))


def fingerprint(values):
    return hashlib.sha256(canonical_text(values).encode()).hexdigest()


def degradation_spec(values):
    return DegradationSpec(factor=values["data.factor"],
                           kernel_a=values["data.kernel_a"],
                           antialias=values["data.antialias"])


def sr_config(values):
    return SRConfig(factor=values["data.factor"], stages=values["sr.stages"],
                    feat0=values["sr.feat0"], nr=values["sr.nr"],
                    dense=values["sr.dense"])


def seg_config(values, num_classes=None):
    k = values["seg.num_classes"] or num_classes
    if not k:
        raise ValueError("seg.num_classes unset and no dataset class count given")
    return SegConfig(num_classes=k, encoder_plan=values["seg.encoder_plan"],
                     ignore_ids=frozenset(values["seg.ignore_ids"]))


def train_config(values):
    if values["train.mode"] not in MODES:
        raise ValueError(f"train.mode must be one of {MODES}")
    return TrainConfig(
        mode=values["train.mode"], epochs=values["train.epochs"],
        base_lr=values["train.base_lr"],
        decay_factor=values["train.decay_factor"],
        betas=(values["train.beta1"], values["train.beta2"]),
        eps=values["train.eps"],
        sr_weight_decay=values["train.sr_weight_decay"],
        seg_weight_decay=values["train.seg_weight_decay"],
        batch_size=values["train.batch_size"], seed=values["train.seed"],
        weights=LossWeights(values["train.alpha"], values["train.beta"]),
        clamp=values["train.clamp"], tile=values["data.tile"],
        checkpoint_every=values["train.checkpoint_every"],
    )


def sweep_configs(values):
    """The shipped balance grid as 24 child configs (never launched here)."""
    out = []
    for alpha in ALPHA_GRID:
        for beta in BETA_GRID:
            child = dict(values)
            child["train.alpha"] = alpha
            child["train.beta"] = beta
            out.append(child)
    return out
