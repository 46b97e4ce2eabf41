import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsagc.autodiff import Tensor
from dsagc.config import ABLATIONS, RunConfig, TrainConfig, load_config, parse, render
from dsagc.errors import ConfigError, NumericalError
from dsagc.optim import RMSprop, rmsprop_step


def test_rmsprop_one_step():
    p, s = rmsprop_step({"p": np.array(1.0)}, {"p": np.array(2.0)}, {}, lr=1e-3)
    assert float(s["p"]) == pytest.approx(0.04, abs=1e-15)
    assert float(p["p"]) == pytest.approx(1 - 1e-3 * 2 / (0.2 + 1e-8), abs=1e-15)
    assert float(p["p"]) == pytest.approx(0.9900000004999999, abs=1e-15)


def test_rmsprop_two_steps():
    opt = RMSprop({"p": Tensor(np.array(1.0), requires_grad=True)}, lr=1e-3)
    t = opt.params["p"]
    for g in (2.0, 2.0):
        t.grad = np.array(g)
        opt.step()
    assert float(opt.state["p"]) == pytest.approx(0.0796, abs=1e-15)
    assert float(t.data) == pytest.approx(0.9829111887011729, abs=1e-15)


def test_zero_gradient_decays_state():
    p, s = rmsprop_step({"p": np.ones(3)}, {"p": np.zeros(3)}, {"p": np.full(3, 2.0)}, lr=0.1)
    np.testing.assert_array_equal(p["p"], np.ones(3))
    np.testing.assert_allclose(s["p"], 1.98)


def test_missing_gradient_counts_as_zero():
    p, _ = rmsprop_step({"p": np.ones(2)}, {}, {}, lr=0.1)
    np.testing.assert_array_equal(p["p"], np.ones(2))


def test_nan_gradient_names_parameter():
    with pytest.raises(NumericalError, match="f_ns.layers.0.W"):
        rmsprop_step({"f_ns.layers.0.W": np.ones(2)}, {"f_ns.layers.0.W": np.array([1, np.nan])},
                     {}, lr=0.1)


# ------------------------------------------------------------------ config


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(e_t=101)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(alpha_disc=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(ce_mode="bogus")
    assert TrainConfig(e_t=0).e_t == 0 and TrainConfig(e_t=100).e_t == 100


def test_ablation_names():
    cfg = TrainConfig().with_ablation("no_disc")
    assert cfg.ablations == ("no_disc",) and cfg.method_name == "DS-AGC[no_disc]"
    assert TrainConfig().method_name == "DS-AGC"
    with pytest.raises(ConfigError):
        TrainConfig().with_ablation("no_graph")


def test_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError, match="unknown"):
        parse("lr = 0.01\nno_dics = true\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse("lr = 0.01\nlr = 0.02\n")
    with pytest.raises(ConfigError):
        parse("no_disc = yes\n")
    with pytest.raises(ConfigError):
        parse("just a line\n")


def test_load_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ne_t = 10\nmax_epochs = 20\ndataset = data/x.feat\n")
    cfg = load_config(p)
    assert cfg.train.e_t == 10 and cfg.dataset == "data/x.feat"


@st.composite
def train_configs(draw):
    max_epochs = draw(st.integers(0, 200))
    pos = st.floats(1e-6, 10.0, allow_nan=False)
    return TrainConfig(
        lr=draw(pos), batch_size=draw(st.integers(2, 256)),
        e_t=draw(st.integers(0, max_epochs)), max_epochs=max_epochs, tau=draw(pos),
        lambda_reg=draw(st.floats(0, 1)), alpha_disc=draw(st.floats(0, 5)),
        seed=draw(st.integers(0, 2**31)), ce_mode=draw(st.sampled_from(["inside_log",
                                                                       "outside_log"])),
        snapshot_epochs=tuple(draw(st.lists(st.integers(0, 100), max_size=4))),
        **{a: draw(st.booleans()) for a in ABLATIONS},
    )


@given(train_configs(), st.text("abcdefgh/._-", max_size=12), st.integers(0, 13),
       st.lists(st.integers(0, 100), max_size=5))
@settings(max_examples=100, deadline=None)
def test_config_round_trip(train, dataset, n, sweep):
    cfg = RunConfig(train=train, dataset=dataset, n_unlabeled=n, et_sweep=tuple(sweep))
    assert RunConfig.parse(cfg.render()) == cfg
    assert parse(render(train), TrainConfig) == train


def test_render_lists_every_field():
    text = RunConfig().render()
    keys = {line.split(" = ")[0] for line in text.splitlines() if " = " in line}
    expected = {f.name for f in dataclasses.fields(TrainConfig)} | {
        f.name for f in dataclasses.fields(RunConfig) if f.name != "train"}
    assert keys == expected
