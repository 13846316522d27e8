import json

import numpy as np
import pytest
import torch

from srseg.checkpoint import (MAGIC, load_checkpoint, load_module_tensors,
                              load_optimizer_tensors, module_tensors,
                              optimizer_tensors, read_tensors,
                              resolve_checkpoint, save_checkpoint,
                              write_tensors)
from srseg.seg import SegConfig, SegNet

from conftest import param_vector


def parse_container(path):
    """Independent reader: same format, different code path than read_tensors."""
    blob = path.read_bytes()
    header, payload = blob.split(b"\n\n", 1)
    lines = header.decode("ascii").split("\n")
    assert lines[0] == MAGIC
    count = int(lines[1])
    assert len(lines) == 2 + count
    out = {}
    prev = ""
    for line in lines[2:]:
        fields = line.split(" ")
        name = fields[0]
        assert name > prev, "names must be sorted"
        prev = name
        assert fields[1] == "f4"
        ndim = int(fields[2])
        dims = [int(d) for d in fields[3:3 + ndim]]
        offset = int(fields[3 + ndim])
        n = int(np.prod(dims)) if dims else 1
        out[name] = np.frombuffer(
            payload, "<f4", count=n, offset=offset).reshape(dims)
    return out


def random_mapping(rng, n=8):
    shapes = [(), (1,), (5,), (2, 3), (0, 4), (2, 1, 3, 2)]
    out = {}
    for i in range(n):
        shape = shapes[rng.integers(0, len(shapes))]
        out[f"t{i:02d}.w"] = rng.normal(size=shape).astype(np.float32)
    return out


def test_round_trip_bits_and_shapes(tmp_path, rng):
    tensors = random_mapping(rng)
    tensors["special"] = np.array(
        [0.0, -0.0, np.inf, -np.inf, np.float32(1e-45)], dtype=np.float32)
    path = write_tensors(tmp_path / "t.ntc", tensors)
    back = read_tensors(path)
    assert set(back) == set(tensors)
    for name, arr in tensors.items():
        assert back[name].shape == arr.shape
        assert back[name].dtype == np.float32
        assert back[name].tobytes() == arr.tobytes()


def test_zero_dim_survives(tmp_path):
    path = write_tensors(tmp_path / "s.ntc", {"s": np.float32(2.5)})
    back = read_tensors(path)
    assert back["s"].shape == ()
    assert back["s"] == np.float32(2.5)


def test_independent_reader_agrees(tmp_path, rng):
    tensors = random_mapping(rng)
    path = write_tensors(tmp_path / "t.ntc", tensors)
    theirs = parse_container(path)
    ours = read_tensors(path)
    assert set(theirs) == set(ours)
    for name in ours:
        assert theirs[name].tobytes() == ours[name].tobytes()


def test_write_rejects_bad_names(tmp_path):
    with pytest.raises(ValueError):
        write_tensors(tmp_path / "t.ntc", {"has space": np.zeros(2, np.float32)})
    with pytest.raises(ValueError):
        write_tensors(tmp_path / "t.ntc", {"": np.zeros(2, np.float32)})


def test_read_rejects_wrong_magic(tmp_path):
    p = tmp_path / "bad.ntc"
    p.write_bytes(b"npz v9\n0\n\n")
    with pytest.raises(ValueError, match="not a tensor container"):
        read_tensors(p)


def test_module_tensors_rejects_non_float32():
    class M(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.lin = torch.nn.Linear(2, 2)
            self.register_buffer("count", torch.zeros(1, dtype=torch.int64))

    with pytest.raises(ValueError, match="float32"):
        module_tensors(M())


def test_module_round_trip(tmp_path):
    cfg = SegConfig(num_classes=2, encoder_plan=((1, 4), (1, 4)))
    net = SegNet(cfg, seed=3)
    path = write_tensors(tmp_path / "seg.ntc", module_tensors(net))
    other = SegNet(cfg, seed=99)
    assert not torch.equal(param_vector(net), param_vector(other))
    load_module_tensors(other, read_tensors(path))
    assert torch.equal(param_vector(net), param_vector(other))


def test_load_module_tensors_checks_names_and_shapes():
    cfg = SegConfig(num_classes=2, encoder_plan=((1, 4), (1, 4)))
    net = SegNet(cfg, seed=3)
    tensors = module_tensors(net)
    extra = dict(tensors, rogue=np.zeros(3, np.float32))
    with pytest.raises(ValueError, match="name mismatch"):
        load_module_tensors(net, extra)
    first = sorted(tensors)[0]
    bad = dict(tensors)
    bad[first] = np.zeros((1, 1), np.float32)
    with pytest.raises(ValueError, match="shape"):
        load_module_tensors(net, bad)


def _adamw_fixture(seed, steps):
    torch.manual_seed(seed)
    net = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.ReLU(),
                              torch.nn.Linear(8, 1))
    opt = torch.optim.AdamW(net.parameters(), lr=1e-2, weight_decay=1e-3)
    x = torch.linspace(-1, 1, 16).reshape(4, 4)
    y = x.sum(dim=1, keepdim=True)
    for _ in range(steps):
        opt.zero_grad()
        ((net(x) - y) ** 2).mean().backward()
        opt.step()
    return net, opt, (x, y)


def test_optimizer_round_trip_continues_bit_exactly(tmp_path):
    net, opt, (x, y) = _adamw_fixture(seed=7, steps=3)
    named = list(net.named_parameters())
    tensors, meta = optimizer_tensors(opt, named)
    write_tensors(tmp_path / "opt.ntc", tensors)
    write_tensors(tmp_path / "net.ntc", module_tensors(net))
    (tmp_path / "meta.json").write_text(json.dumps(meta))

    net2, opt2, _ = _adamw_fixture(seed=7, steps=0)
    load_module_tensors(net2, read_tensors(tmp_path / "net.ntc"))
    load_optimizer_tensors(opt2, list(net2.named_parameters()),
                           read_tensors(tmp_path / "opt.ntc"),
                           json.loads((tmp_path / "meta.json").read_text()))
    for _ in range(2):
        for o, n in ((opt, net), (opt2, net2)):
            o.zero_grad()
            ((n(x) - y) ** 2).mean().backward()
            o.step()
    assert torch.equal(param_vector(net), param_vector(net2))


def test_optimizer_tensors_skip_unstepped_params():
    net = torch.nn.Linear(2, 2)
    opt = torch.optim.AdamW(net.parameters())
    tensors, meta = optimizer_tensors(opt, list(net.named_parameters()))
    assert tensors == {} and meta["steps"] == {}
    assert meta["groups"][0]["betas"] == (0.9, 0.999)


def test_save_resolve_load(tmp_path):
    run = tmp_path / "run"
    for epoch in (1, 2):
        ckpt = save_checkpoint(run, epoch,
                               {"net_params": {"w": np.full(3, float(epoch),
                                                            np.float32)}},
                               {"epoch": epoch, "history": []})
        assert ckpt.name == f"epoch_{epoch:04d}"
    assert (run / "checkpoints" / "LATEST").read_text().strip() == "epoch_0002"
    assert resolve_checkpoint(run, "last").name == "epoch_0002"
    assert resolve_checkpoint(run).name == "epoch_0002"
    assert resolve_checkpoint(run, 1).name == "epoch_0001"
    assert resolve_checkpoint(run, "1").name == "epoch_0001"
    rel = resolve_checkpoint(run, "checkpoints/epoch_0001")
    assert rel == run / "checkpoints" / "epoch_0001"
    state, containers = load_checkpoint(resolve_checkpoint(run, "last"))
    assert state["epoch"] == 2
    assert containers["net_params"]["w"][0] == 2.0


def test_resolve_without_latest_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        resolve_checkpoint(tmp_path, "last")


def test_load_checkpoint_requires_state(tmp_path):
    (tmp_path / "epoch_0001").mkdir()
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "epoch_0001")
