"""Resumable run state.

Parameter and optimizer tensors are stored in a self-describing container any
implementation can read without this package::

    ntc v1
    <tensor count>
    <name> f4 <ndim> <dim0> <dim1> ... <byte offset into payload>
    ...
    <blank line>
    <raw little-endian 32-bit float payload>

Header lines are ASCII, space-separated, sorted by tensor name. A checkpoint
is a directory holding one container per network/optimizer plus a
``state.json`` with everything non-tensor (epoch, loss history, optimizer step
counts and hyperparameters, config fingerprint and text). ``LATEST`` under
``<run>/checkpoints/`` names the newest epoch directory.

Restoring mid-run and continuing reproduces the uninterrupted run bit-exactly:
tensors round-trip through raw float32 bytes, and the trainer draws its
shuffle from (seed, epoch) rather than carried RNG state.
"""

import json
from pathlib import Path

import numpy as np
import torch

MAGIC = "ntc v1"


def write_tensors(path, tensors):
    """Write a name -> float32 array mapping as one container file."""
    names = sorted(tensors)
    arrays = {}
    for name in names:
        # asarray, not ascontiguousarray: the latter promotes 0-dim to (1,)
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        if any(ch.isspace() for ch in name) or not name:
            raise ValueError(f"bad tensor name {name!r}")
        arrays[name] = arr
    lines = [MAGIC, str(len(names))]
    offset = 0
    for name in names:
        arr = arrays[name]
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"{name} f4 {arr.ndim}{' ' + dims if arr.ndim else ''} {offset}")
        offset += arr.nbytes
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        for name in names:
            fh.write(arrays[name].tobytes())
    return path


def read_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    head_end = blob.index(b"\n\n")
    lines = blob[:head_end].decode("ascii").splitlines()
    if lines[0] != MAGIC:
        raise ValueError(f"{path}: not a tensor container (header {lines[0]!r})")
    count = int(lines[1])
    payload = blob[head_end + 2:]
    out = {}
    for line in lines[2:2 + count]:
        parts = line.split(" ")
        name, dtype, ndim = parts[0], parts[1], int(parts[2])
        if dtype != "f4":
            raise ValueError(f"{path}: unsupported dtype {dtype} for {name}")
        dims = tuple(int(d) for d in parts[3:3 + ndim])
        offset = int(parts[3 + ndim])
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        out[name] = arr.reshape(dims).copy()
    if len(out) != count:
        raise ValueError(f"{path}: header promised {count} tensors, parsed {len(out)}")
    return out


# ---------------------------------------------------------------------------
# torch adapters

def module_tensors(module):
    state = module.state_dict()
    out = {}
    for name, t in state.items():
        if t.dtype != torch.float32:
            raise ValueError(f"{name}: only float32 state is serialized, got {t.dtype}")
        out[name] = t.detach().cpu().numpy()
    return out


def load_module_tensors(module, tensors):
    state = module.state_dict()
    if set(state) != set(tensors):
        missing = set(state) ^ set(tensors)
        raise ValueError(f"tensor name mismatch: {sorted(missing)}")
    with torch.no_grad():
        for name, t in state.items():
            src = torch.from_numpy(np.ascontiguousarray(tensors[name]))
            if tuple(t.shape) != tuple(src.shape):
                raise ValueError(f"{name}: shape {tuple(src.shape)} != {tuple(t.shape)}")
            t.copy_(src)
    return module


def optimizer_tensors(optimizer, named_params):
    """Split optimizer state into float32 moment tensors and a JSON-safe rest."""
    tensors = {}
    steps = {}
    for name, p in named_params:
        st = optimizer.state.get(p)
        if not st:
            continue
        tensors[f"{name}.exp_avg"] = st["exp_avg"].detach().cpu().numpy()
        tensors[f"{name}.exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()
        step = st["step"]
        steps[name] = float(step.item() if torch.is_tensor(step) else step)
    groups = [{k: v for k, v in g.items() if k != "params"}
              for g in optimizer.param_groups]
    return tensors, {"steps": steps, "groups": groups}


def load_optimizer_tensors(optimizer, named_params, tensors, meta):
    for g, saved in zip(optimizer.param_groups, meta["groups"], strict=True):
        for k, v in saved.items():
            g[k] = tuple(v) if isinstance(v, list) else v
    steps = meta["steps"]
    for name, p in named_params:
        if name not in steps:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(steps[name]),
            "exp_avg": torch.from_numpy(
                np.ascontiguousarray(tensors[f"{name}.exp_avg"])).clone(),
            "exp_avg_sq": torch.from_numpy(
                np.ascontiguousarray(tensors[f"{name}.exp_avg_sq"])).clone(),
        }
    return optimizer


# ---------------------------------------------------------------------------
# checkpoint directories

def save_checkpoint(run_dir, epoch, containers, state):
    """Write one epoch directory and repoint LATEST at it.

    containers: stem -> (name -> float32 array); state: JSON-safe dict.
    """
    run_dir = Path(run_dir)
    name = f"epoch_{epoch:04d}"
    ckpt = run_dir / "checkpoints" / name
    ckpt.mkdir(parents=True, exist_ok=True)
    for stem, tensors in containers.items():
        write_tensors(ckpt / f"{stem}.ntc", tensors)
    (ckpt / "state.json").write_text(
        json.dumps(state, indent=2, sort_keys=True) + "\n")
    (run_dir / "checkpoints" / "LATEST").write_text(name + "\n")
    return ckpt


def resolve_checkpoint(run_dir, ref="last"):
    run_dir = Path(run_dir)
    base = run_dir / "checkpoints"
    if ref in ("last", "latest", None):
        pointer = base / "LATEST"
        if not pointer.is_file():
            raise FileNotFoundError(f"no LATEST pointer under {base}")
        return base / pointer.read_text().strip()
    if isinstance(ref, int) or str(ref).isdigit():
        return base / f"epoch_{int(ref):04d}"
    path = Path(ref)
    return path if path.is_absolute() else run_dir / path


def load_checkpoint(ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    state_path = ckpt_dir / "state.json"
    if not state_path.is_file():
        raise FileNotFoundError(f"no state.json under {ckpt_dir}")
    state = json.loads(state_path.read_text())
    containers = {p.stem: read_tensors(p) for p in sorted(ckpt_dir.glob("*.ntc"))}
    return state, containers
