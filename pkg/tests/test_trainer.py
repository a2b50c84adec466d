import numpy as np
import pytest
import torch

from oracles import ce_numpy, finite_difference_check, relative_errors
from segue.core.types import ImageBatch
from segue.distortion import DistortionConfig
from segue.errors import ArgumentError, ConfigError, NonFiniteLossError
from segue.generator import GeneratorModel
from segue.models import build_classifier
from segue.side_info import SideInformation, label_bits
from segue.trainer import (TrainConfig, TrainState, loss_f, loss_G, param_digest, run_two_stage, stage_for,
                           write_loss_csv)

EPS = 8 / 255


def _tiny_cfg(**kw):
    base = dict(epochs=3, batch_size=4, surrogate_widths=(4, 4, 4), generator_widths=(4, 4, 4), seed=0)
    base.update(kw)
    return TrainConfig(**base)


def _tiny_data(n=8, seed=0):
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(n, 3, 8, 8, generator=gen) * 0.8 + 0.1
    y = torch.arange(n) % 2
    return ImageBatch(x, y), SideInformation(y)


def test_stage_pattern():
    assert [stage_for(e) for e in range(1, 11)] == ["f", "G", "G", "G", "G"] * 2
    assert [stage_for(e, 2) for e in range(1, 5)] == ["f", "G", "f", "G"]


def test_loss_values_match_oracles():
    torch.manual_seed(0)
    f = build_classifier("cnn", 3, 3, (4, 4, 4)).double().eval()
    G = GeneratorModel(3, (4, 8, 8), 16, EPS).double().eval()
    x = torch.rand(4, 3, 8, 8, dtype=torch.float64) * 0.8 + 0.1
    y = torch.tensor([0, 1, 2, 0])
    bits = label_bits(y).double()
    with torch.no_grad():
        raw = G.raw(x, bits)
        logits = f(torch.clamp(x + raw, 0, 1)).numpy()
    ce = ce_numpy(logits, y.numpy())
    assert float(loss_f(f, G, x, bits, y).detach()) == pytest.approx(ce, rel=1e-12)
    norm = np.sqrt((raw.numpy().reshape(4, -1) ** 2).sum(1)).mean()
    got = float(loss_G(f, G, x, bits, y, alpha=0.7, beta=0.01).detach())
    assert got == pytest.approx(0.7 * ce + 0.01 * norm, rel=1e-12)


def test_loss_f_does_not_touch_generator():
    torch.manual_seed(0)
    f = build_classifier("cnn", 2, 3, (4, 4, 4))
    G = GeneratorModel(3, (4, 4, 4), 16, EPS)
    x, side = _tiny_data(4)
    loss_f(f, G, x.pixels, label_bits(side.labels), side.labels).backward()
    assert all(p.grad is None for p in G.parameters())
    assert any(p.grad is not None for p in f.parameters())


def _gradcheck_pair(seed=0):
    torch.manual_seed(seed)
    f = build_classifier("cnn", 3, 3, (4, 8, 8)).double()
    G = GeneratorModel(3, (4, 8, 8), 16, EPS).double()
    x = torch.rand(4, 3, 8, 8, dtype=torch.float64) * 0.8 + 0.1
    y = torch.tensor([0, 1, 2, 1])
    return f, G, x, label_bits(y).double(), y


def test_gradient_check_surrogate_loss():
    f, G, x, bits, y = _gradcheck_pair()
    pairs = finite_difference_check(lambda: loss_f(f, G, x, bits, y), f.parameters(), n_coords=100)
    assert relative_errors(pairs).max() <= 1e-3


def test_gradient_check_generator_loss_through_distortion():
    f, G, x, bits, y = _gradcheck_pair(1)
    cfg = DistortionConfig(rho_d=0.0, enabled_ops={"blur", "sharpness"})
    from segue.distortion import apply_distortion

    def distort(xp, target):
        return apply_distortion(xp, target, f, cfg, torch.Generator().manual_seed(0))

    pairs = finite_difference_check(lambda: loss_G(f, G, x, bits, y, 1.0, 1e-3, distort), G.parameters(),
                                    n_coords=100)
    assert relative_errors(pairs).max() <= 1e-3


def test_stop_loss_infinite_stops_after_first_epoch():
    data, side = _tiny_data()
    state = run_two_stage(data, side, _tiny_cfg(stop_loss=float("inf")), 2)
    assert state.epoch == 1 and state.stopped_early
    assert [r["stage"] for r in state.history] == ["f"]


def test_stub_loss_triggers_early_stop():
    data, side = _tiny_data()
    losses = iter([5.0, 4.0, 0.5, 0.0009, 0.0])
    state = run_two_stage(data, side, _tiny_cfg(epochs=20), 2, eval_fn=lambda s, e: next(losses))
    assert state.epoch == 4 and state.stopped_early
    assert [r["stage"] for r in state.history] == ["f", "G", "G", "G"]


def test_epoch_cap_and_cycle():
    data, side = _tiny_data()
    state = run_two_stage(data, side, _tiny_cfg(epochs=20), 2, eval_fn=lambda s, e: 1.0)
    assert state.epoch == 20 and not state.stopped_early
    assert [r["stage"] for r in state.history] == ["f", "G", "G", "G", "G"] * 4
    assert all(r["steps"] == 2 for r in state.history)
    assert all(r["max_delta"] <= EPS for r in state.history)


def test_determinism_and_seed_sensitivity():
    data, side = _tiny_data()
    a = run_two_stage(data, side, _tiny_cfg(), 2)
    b = run_two_stage(data, side, _tiny_cfg(), 2)
    c = run_two_stage(data, side, _tiny_cfg(seed=1), 2)
    assert param_digest(a.G) == param_digest(b.G)
    assert [r["full_set_loss"] for r in a.history] == [r["full_set_loss"] for r in b.history]
    assert param_digest(a.G) != param_digest(c.G)


def test_resume_from_state_matches_uninterrupted_run():
    data, side = _tiny_data()
    full = run_two_stage(data, side, _tiny_cfg(epochs=3), 2)
    part = run_two_stage(data, side, _tiny_cfg(epochs=2), 2)
    resumed = run_two_stage(data, side, _tiny_cfg(epochs=3), 2, state=part)
    assert param_digest(full.G) == param_digest(resumed.G)


def test_non_finite_loss_aborts():
    data, side = _tiny_data()
    cfg = _tiny_cfg()
    state = TrainState.create(cfg, 2)
    with torch.no_grad():
        next(state.G.head.parameters()).fill_(float("nan"))
    with pytest.raises(NonFiniteLossError):
        run_two_stage(data, side, cfg, 2, state=state)


def test_input_errors():
    data, side = _tiny_data(3)
    with pytest.raises(ArgumentError):
        run_two_stage(data, side, _tiny_cfg(), 2)
    data, side = _tiny_data(8)
    with pytest.raises(ArgumentError):
        run_two_stage(data, SideInformation(side.labels[:4]), _tiny_cfg(), 2)


@pytest.mark.parametrize("kw,key", [({"epsilon": 0.0}, "epsilon"), ({"epochs": 0}, "epochs"),
                                    ({"cycle": 0}, "cycle"), ({"side_info": "x"}, "side_info"),
                                    ({"lr_g": -1}, "lr_g")])
def test_config_validation(kw, key):
    with pytest.raises(ConfigError) as exc:
        TrainConfig(**kw)
    assert exc.value.key == key


def test_side_fusion_off_zeroes_bits():
    from segue.trainer import _side_bits
    cfg = TrainConfig(side_fusion=False)
    assert float(_side_bits(cfg, SideInformation(torch.tensor([3, 5]))).abs().sum()) == 0


def test_loss_csv(tmp_path):
    data, side = _tiny_data()
    state = run_two_stage(data, side, _tiny_cfg(epochs=2), 2)
    write_loss_csv(state.history, tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "epoch,stage,steps,train_loss,full_set_loss,max_delta"
    assert lines[1].startswith("1,f,2,") and lines[2].startswith("2,G,2,")
