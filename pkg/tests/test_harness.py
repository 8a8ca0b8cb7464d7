import numpy as np
import pytest

from hexproj import harness
from hexproj.advhead import AdversarialModel
from hexproj.datasets import LabeledImageSet, ShiftRecipe
from hexproj.exceptions import ConfigError
from hexproj.harness import (CSV_HEADER, METHODS, ExperimentConfig, RunResult, build_config,
                             build_datasets, emit_curves, emit_metrics, emit_probe,
                             linear_probe, parse_config_lines, probe_experiment, read_metrics,
                             run_experiment, run_grid, summarize, train_model, wire_method)
from hexproj.hexhead import HexMode
from hexproj.model import HexModel, PlainModel
from hexproj.nglcm import NGLCM

TINY = dict(h_width=8, hidden=16, g_width=8, levels=8, batch_size=16, learning_rate=1e-3)


def tiny_config(kind="background_correlated", method="H", epochs=2, seed=0, **kw):
    recipe = ShiftRecipe(kind=kind, n_classes=4, n_backgrounds=4, n_samples=160,
                         angle_list=(0, 30, 60), test_angles=(60,))
    return ExperimentConfig(recipe=recipe, method=method, epochs=epochs, seed=seed,
                            **{**TINY, **kw})


# -- config ----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_config(method="Z")
    with pytest.raises(ConfigError, match="batch_size"):
        tiny_config(method="H", batch_size=4)
    # the plain baseline has no projection precondition
    tiny_config(method="B", batch_size=4)
    with pytest.raises(ConfigError):
        tiny_config(epochs=-1)
    with pytest.raises(ConfigError):
        tiny_config(encoder="rnn")


def test_setting_labels():
    assert tiny_config().setting == "rho=0.9"
    assert tiny_config("fourier_pattern").setting == "independently"
    assert tiny_config("rotation").setting == "test=60"


def test_parse_config_lines_and_build():
    text = """
    # experiment
    method = V
    epochs=3   # short
    directions = deg0, deg90
    rho = 0.5
    extra.amplitude = 80
    """
    values = parse_config_lines(text.splitlines())
    cfg = build_config({**values, "batch_size": "32"})
    assert cfg.method == "V" and cfg.epochs == 3 and cfg.batch_size == 32
    assert cfg.directions == ("deg0", "deg90")
    assert cfg.recipe.rho == 0.5 and cfg.recipe.extra == {"amplitude": 80}
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_lines(["novalue"])
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config({"colour": "red"})
    with pytest.raises(ConfigError, match="bad value"):
        build_config({"epochs": "ten"})
    with pytest.raises(ConfigError):
        build_config({"rho": "3"})


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("method=B\nseed=4\n")
    cfg = build_config(harness.load_config_file(path))
    assert cfg.method == "B" and cfg.seed == 4


# -- wiring ----------------------------------------------------------------

def test_method_wiring():
    models = {m: wire_method(tiny_config(method=m)) for m in METHODS}
    assert isinstance(models["B"], PlainModel)
    assert not any(isinstance(layer, NGLCM) for layer in models["B"].encoder.layers)
    assert isinstance(models["E"], AdversarialModel) and models["E"].variant == "adve"
    assert isinstance(models["A"], AdversarialModel) and models["A"].variant == "adv"
    assert models["M"].texture_kind == "mlp" and models["M"].nglcm_block is None
    assert models["H"].nglcm_block is not None
    expected = {"M": HexMode.HEX, "N": HexMode.ABLATION_N, "H": HexMode.HEX,
                "V": HexMode.HEX_ADV, "L": HexMode.HEX_ALL}
    for code, mode in expected.items():
        assert isinstance(models[code], HexModel) and models[code].mode is mode
    assert wire_method(tiny_config(method="V", lambda_loss=0.3)).head.lambda_loss == 1.0


def test_wiring_is_seeded():
    a = wire_method(tiny_config(method="H", seed=3))
    b = wire_method(tiny_config(method="H", seed=3))
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)


# -- training --------------------------------------------------------------

class ScriptedModel:
    """Validation accuracy follows a fixed script, one entry per epoch."""

    n_classes = 2

    def __init__(self, script):
        self.script = list(script)
        self.epoch = -1
        self.params = [np.zeros(1)]

    def step(self, X, y):
        return 0.0

    def decision_function(self, X):
        self.calls = getattr(self, "calls", 0) + 1
        if self.calls % 2 == 1:
            self.epoch += 1
        acc = self.script[self.epoch] if self.calls % 2 == 0 else 0.5
        n = len(X)
        right = int(round(acc * n))
        out = np.zeros((n, 2))
        out[:right, 0] = 1.0
        out[right:, 1] = 1.0
        self.params[0][0] = self.epoch
        return out

    def get_state(self):
        return [p.copy() for p in self.params]

    def set_state(self, state):
        self.params[0][...] = state[0]


def test_checkpoint_is_earliest_best_validation_epoch():
    data = LabeledImageSet(np.zeros((10, 2, 2)), np.zeros(10, dtype=int))
    model = ScriptedModel([0.2, 0.6, 0.4, 0.6, 0.5])
    history, best = train_model(model, data, data, 5, 5, np.random.default_rng(0))
    assert [h["val_accuracy"] for h in history] == [0.2, 0.6, 0.4, 0.6, 0.5]
    assert best == 1
    assert model.params[0][0] == 1


def test_epochs_zero_is_near_chance():
    accs = [run_experiment(tiny_config(method=m, epochs=0, seed=s)).test_accuracy
            for m in ("B", "H") for s in range(5)]
    assert abs(np.mean(accs) - 0.25) < 0.1
    res = run_experiment(tiny_config(epochs=0))
    assert res.history == [] and res.best_epoch == -1


def test_run_is_deterministic_to_the_byte(tmp_path):
    runs = [run_experiment(tiny_config(method="A", seed=2)) for _ in range(2)]
    paths = []
    for i, r in enumerate(runs):
        p = tmp_path / f"m{i}.csv"
        emit_metrics([r], p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert runs[0].test_accuracy == runs[1].test_accuracy


def test_reported_test_accuracy_is_from_best_epoch():
    res, model = run_experiment(tiny_config(epochs=3), return_model=True)
    vals = res.curve("val", "accuracy")
    assert res.best_epoch == int(np.argmax(vals))
    _, _, test = build_datasets(tiny_config().recipe, 0)
    assert res.test_accuracy == np.mean(model.predict(test.images) == test.labels)


@pytest.mark.parametrize("kind", ["background_correlated", "fourier_pattern", "rotation"])
def test_every_method_runs_on_every_recipe(kind):
    for m in METHODS:
        res = run_experiment(tiny_config(kind, method=m, epochs=1))
        assert 0.0 <= res.test_accuracy <= 1.0 and len(res.history) == 1


def test_rotation_split_holds_out_validation():
    cfg = tiny_config("rotation")
    tr, va, te = build_datasets(cfg.recipe, 0)
    assert set(te.nuisance_ids) == {2}
    assert set(tr.nuisance_ids) | set(va.nuisance_ids) == {0, 1}
    assert len(va) == round(0.1 * (len(tr) + len(va)))


def test_training_set_smaller_than_a_batch():
    tiny = LabeledImageSet(np.zeros((3, 28, 28)), [0, 1, 2])
    with pytest.raises(ConfigError):
        run_experiment(tiny_config(method="B"), data=(tiny, tiny, tiny))


# -- grids and output ------------------------------------------------------

def fake_result(method="H", seed=0, acc=0.5, epochs=3, setting="rho=0.9"):
    hist = [{"epoch": e, "train_accuracy": 0.1 * e, "train_loss": 1.0 / 3 + e,
             "val_accuracy": 0.2, "val_loss": 2.0 / 7, "step_loss": 0.0} for e in range(epochs)]
    return RunResult(method, seed, setting, hist, acc, 0, 0.0)


def test_metric_csv_rows_and_precision(tmp_path):
    r = fake_result(acc=1 / 3)
    path = tmp_path / "m.csv"
    emit_metrics([r], path)
    rows = read_metrics(path)
    train_acc = [row for row in rows if row[4] == "train" and row[5] == "accuracy"]
    assert len(train_acc) == 3
    assert [row[6] for row in train_acc] == [0.0, 0.1, 0.2]
    assert [row for row in rows if row[4] == "test"][0][6] == 1 / 3
    assert rows[0][6] == r.history[0]["train_accuracy"]
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    losses = [row[6] for row in rows if row[5] == "loss" and row[4] == "train"]
    assert losses == [h["train_loss"] for h in r.history]


def test_summary_mean_and_std(tmp_path):
    one = summarize([fake_result(acc=0.7)])
    assert one[("H", "rho=0.9")] == (0.7, 0.0, 1)
    many = summarize([fake_result(seed=s, acc=a) for s, a in enumerate([0.5, 0.7])])
    assert many[("H", "rho=0.9")][1] == pytest.approx(0.1)
    summary = emit_metrics([fake_result(acc=0.7)], tmp_path / "m.csv")
    assert "H,rho=0.9,test_accuracy,0.69999999999999996,0,1" in open(summary).read()
    with pytest.raises(ValueError):
        emit_metrics([], tmp_path / "x.csv")


def test_curves_csv(tmp_path):
    path = tmp_path / "c.csv"
    emit_curves([fake_result(seed=1), fake_result(seed=0)], path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("method,seed,setting,epoch,train_accuracy")
    assert len(lines) == 7 and lines[1].startswith("H,0,")


def test_grid_sorted_and_complete():
    base = tiny_config(epochs=1)
    res = run_grid(base, ["H", "B"], [1, 0], [{"rho": 0.0}, {"rho": 0.9}])
    keys = [(r.method, r.setting, r.seed) for r in res]
    assert keys == sorted(keys) and len(keys) == 8


def test_read_metrics_rejects_other_files(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n")
    with pytest.raises(ConfigError):
        read_metrics(p)


# -- probing ---------------------------------------------------------------

def test_linear_probe_on_separable_and_random_features():
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(4), 50)
    assert linear_probe(np.eye(4)[y] + 0.01 * rng.standard_normal((200, 4)), y) == 1.0
    assert linear_probe(rng.standard_normal((200, 3)), y) < 0.45


def test_probe_experiment_table(tmp_path):
    recipe = ShiftRecipe(n_classes=4, n_backgrounds=4, n_samples=200)
    cfg = ExperimentConfig(recipe=recipe, method="B", epochs=1, batch_size=32, g_width=8,
                           levels=8, learning_rate=1e-3)
    table = probe_experiment(cfg)
    assert set(table.scores) == {"nglcm", "mlp"}
    assert len(table.scores["nglcm"]["texture"]) == 2
    assert table.chance == {"texture": 0.25, "label": 0.25}
    # an NGLCM representation separates the textures even before training
    assert table.scores["nglcm"]["texture"][0] > 0.5
    path = tmp_path / "p.csv"
    emit_probe([table], path)
    assert len(path.read_text().splitlines()) == 5
