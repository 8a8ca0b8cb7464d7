"""Experiment runner: datasets + method wiring + training loop + metrics.

Method codes:

    B  plain encoder and decoder
    M  HEX with the NGLCM branch replaced by a one-layer MLP on raw pixels
    N  two-branch wiring trained on F_A (no projection)
    E  ADVE: reversed gradient from regressing g on h
    A  ADV: reversed gradient from matching softmax(F_G) from F_P
    H  HEX, predicting with F_P
    V  HEX plus lambda * CE(F_G), lambda = 1
    L  HEX, predicting with F_L
"""
import csv
import time
from dataclasses import MISSING, dataclass, field, fields

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .advhead import AdversarialModel
from .datasets import (LabeledImageSet, ShiftRecipe, gen_background_correlated,
                       gen_fourier_patterned, gen_glyph_set, gen_rotation_domains,
                       gen_texture_corpus, split_rngs)
from .exceptions import ConfigError
from .hexhead import HexMode
from .model import BranchClassifier, HexModel, PlainModel
from .netcore import cross_entropy

METHODS = ("B", "M", "N", "E", "A", "H", "V", "L")
HEX_METHODS = {"M": HexMode.HEX, "N": HexMode.ABLATION_N, "H": HexMode.HEX,
               "V": HexMode.HEX_ADV, "L": HexMode.HEX_ALL}
PROJECTING = ("M", "H", "V", "L")
CSV_HEADER = ("method", "seed", "setting", "epoch", "split", "metric", "value")
ROTATION_VAL_FRACTION = 0.1


@dataclass
class ExperimentConfig:
    recipe: ShiftRecipe = field(default_factory=ShiftRecipe)
    method: str = "H"
    epochs: int = 100
    learning_rate: float = 5e-4
    batch_size: int = 64
    seed: int = 0
    encoder: str = "mlp"
    h_width: int = 32
    hidden: int = 64
    g_width: int = 32
    conv_channels: tuple = (4, 8)
    kernel_size: int = 5
    levels: int = 16
    directions: tuple = ("deg0",)
    lambda_loss: float = 1.0
    adv_scale: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method code {self.method!r}; expected one of {METHODS}")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.encoder not in ("mlp", "cnn"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.method in PROJECTING and self.batch_size <= self.recipe.n_classes:
            raise ConfigError(
                f"method {self.method} needs batch_size > n_classes "
                f"({self.batch_size} <= {self.recipe.n_classes})"
            )

    @property
    def setting(self):
        r = self.recipe
        if r.kind == "background_correlated":
            return f"rho={r.rho:g}"
        if r.kind == "fourier_pattern":
            return r.attach_strategy
        return "test=" + "/".join(f"{a:g}" for a in r.test_angles)


@dataclass
class RunResult:
    method: str
    seed: int
    setting: str
    history: list
    test_accuracy: float
    best_epoch: int
    wall_clock: float

    def curve(self, split, metric):
        return [row[f"{split}_{metric}"] for row in self.history]


# -- config files ----------------------------------------------------------

def _coerce(text, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(text)
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        kind = type(like[0]) if like else str
        return tuple(kind(t) if kind is not str else t for t in items)
    return text


def _guess(text):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_config_lines(lines):
    """``key=value`` lines to a dict; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = value
    return out


def load_config_file(path):
    with open(path) as fh:
        return parse_config_lines(fh)


def build_config(values):
    """Build an :class:`ExperimentConfig` from string (or typed) values.

    Keys name either a config field, a recipe field, or ``extra.<name>`` for
    generator-specific options stored in ``recipe.extra``.
    """
    base_cfg = _defaults(ExperimentConfig)
    base_recipe = _defaults(ShiftRecipe)
    cfg_kw, recipe_kw, extra = {}, {}, {}
    for key, value in values.items():
        if not (key.startswith("extra.") or (key in base_cfg and key != "recipe")
                or (key in base_recipe and key != "extra")):
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key.startswith("extra."):
                extra[key[6:]] = _guess(value) if isinstance(value, str) else value
            elif key in base_cfg and key != "recipe":
                cfg_kw[key] = _coerce(value, base_cfg[key]) if isinstance(value, str) else value
            elif key in base_recipe and key != "extra":
                recipe_kw[key] = (_coerce(value, base_recipe[key])
                                  if isinstance(value, str) else value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    try:
        recipe = ShiftRecipe(**recipe_kw, extra=extra)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(recipe=recipe, **cfg_kw)


def _defaults(cls):
    out = {}
    for f in fields(cls):
        if f.default_factory is not MISSING:
            out[f.name] = f.default_factory()
        else:
            out[f.name] = f.default
    return out


# -- data and wiring -------------------------------------------------------

def _concat(sets):
    return LabeledImageSet(np.concatenate([s.images for s in sets]),
                           np.concatenate([s.labels for s in sets]),
                           np.concatenate([s.nuisance_ids for s in sets]))


def build_datasets(recipe, seed):
    """Train/val/test sets for a recipe."""
    r = recipe
    extra = dict(r.extra)
    if r.kind == "background_correlated":
        return gen_background_correlated(r.n_classes, r.n_backgrounds, r.rho, r.n_samples, seed,
                                         r.side, r.splits, r.noise, **extra)
    base = gen_glyph_set(r.n_classes, r.n_samples, seed, r.side, r.noise)
    if r.kind == "fourier_pattern":
        return gen_fourier_patterned(base, r.attach_strategy, r.train_kernels, r.test_kernel,
                                     seed, r.splits, r.n_classes)
    # rotation: held-out angles are the test domain; 10% of the rest validates
    n_per_class = int(extra.get("n_per_class", r.n_samples // (2 * r.n_classes)))
    domains = gen_rotation_domains(base, r.angle_list, n_per_class, seed)
    test_angles = set(r.test_angles)
    train = _concat([d for a, d in domains.items() if a not in test_angles])
    test = _concat([d for a, d in domains.items() if a in test_angles])
    order = np.random.default_rng(split_rngs(seed, 4)[3]).permutation(len(train))
    n_val = int(round(ROTATION_VAL_FRACTION * len(train)))
    return train.subset(order[n_val:]), train.subset(order[:n_val]), test


def _rngs(seed):
    init, shuffle, disc = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(seed).spawn(3))
    return init, shuffle, disc


def wire_method(config, init_rng=None, disc_rng=None):
    """Model for the config's method code."""
    c = config
    c.validate()
    if init_rng is None or disc_rng is None:
        r_init, _, r_disc = _rngs(c.seed)
        init_rng = r_init if init_rng is None else init_rng
        disc_rng = r_disc if disc_rng is None else disc_rng
    common = dict(h_width=c.h_width, hidden=c.hidden, conv_channels=c.conv_channels,
                  kernel_size=c.kernel_size, lr=c.learning_rate, rng=init_rng)
    two_branch = dict(g_width=c.g_width, levels=c.levels, directions=c.directions, **common)
    C, side = c.recipe.n_classes, c.recipe.side
    if c.method == "B":
        return PlainModel(C, side, encoder=c.encoder, **common)
    if c.method in ("E", "A"):
        return AdversarialModel(C, side, variant="adve" if c.method == "E" else "adv",
                                adv_scale=c.adv_scale, disc_rng=disc_rng, encoder=c.encoder,
                                **two_branch)
    lam = 1.0 if c.method == "V" else c.lambda_loss
    texture = "mlp" if c.method == "M" else "nglcm"
    return HexModel(C, side, mode=HEX_METHODS[c.method], texture=texture, encoder=c.encoder,
                    lambda_loss=lam, **two_branch)


# -- training --------------------------------------------------------------

def _evaluate(model, data):
    logits = model.decision_function(data.images)
    loss, _ = cross_entropy(logits, data.labels)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels)), loss


def train_model(model, train, val, epochs, batch_size, shuffle_rng, log=None):
    """Minibatch training with best-validation checkpointing.

    The last partial batch of every epoch is dropped. Returns
    ``(history, best_epoch)`` and leaves the model at its best checkpoint
    (earliest epoch on ties; untouched when ``epochs == 0``).
    """
    history = []
    best_acc, best_epoch, best_state = -np.inf, -1, None
    n = len(train)
    if epochs and n < batch_size:
        raise ConfigError(f"training set of {n} is smaller than one batch of {batch_size}")
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n - batch_size + 1, batch_size):
            idx = order[start:start + batch_size]
            losses.append(model.step(train.images[idx], train.labels[idx]))
        train_acc, train_loss = _evaluate(model, train)
        val_acc, val_loss = _evaluate(model, val) if len(val) else (float("nan"), float("nan"))
        history.append({"epoch": epoch, "train_accuracy": train_acc, "train_loss": train_loss,
                        "val_accuracy": val_acc, "val_loss": val_loss,
                        "step_loss": float(np.mean(losses))})
        if log:
            log(f"epoch {epoch}: train {train_acc:.4f} val {val_acc:.4f}")
        if val_acc > best_acc:
            best_acc, best_epoch, best_state = val_acc, epoch, model.get_state()
    if best_state is not None:
        model.set_state(best_state)
    return history, best_epoch


def run_experiment(config, data=None, log=None, return_model=False):
    """Train one configuration and report test accuracy at the best validation epoch.

    ``data`` optionally supplies a prebuilt (train, val, test) triple. With
    ``return_model`` the trained model is returned alongside the result.
    """
    config.validate()
    t0 = time.perf_counter()
    train, val, test = build_datasets(config.recipe, config.seed) if data is None else data
    init_rng, shuffle_rng, disc_rng = _rngs(config.seed)
    model = wire_method(config, init_rng, disc_rng)
    history, best_epoch = train_model(model, train, val, config.epochs, config.batch_size,
                                      shuffle_rng, log)
    test_acc = float(np.mean(model.predict(test.images) == test.labels))
    result = RunResult(config.method, config.seed, config.setting, history, test_acc, best_epoch,
                       time.perf_counter() - t0)
    return (result, model) if return_model else result


def run_grid(base, methods, seeds, settings=None, log=None):
    """Every (setting, method, seed) combination; ``settings`` are dicts of overrides.

    Results come back sorted by (method, setting, seed).
    """
    results = []
    for overrides in settings or [{}]:
        for method in methods:
            for seed in seeds:
                recipe_kw = {k: v for k, v in overrides.items()
                             if k in _defaults(ShiftRecipe)}
                cfg_kw = {k: v for k, v in overrides.items() if k not in recipe_kw}
                recipe = ShiftRecipe(**{**_recipe_dict(base.recipe), **recipe_kw})
                cfg = ExperimentConfig(**{**_config_dict(base), **cfg_kw, "recipe": recipe,
                                          "method": method, "seed": seed})
                res = run_experiment(cfg)
                if log:
                    log(f"{method} seed={seed} {cfg.setting}: test {res.test_accuracy:.4f}")
                results.append(res)
    return sorted(results, key=lambda r: (r.method, r.setting, r.seed))


def _recipe_dict(recipe):
    return {f.name: getattr(recipe, f.name) for f in fields(ShiftRecipe)}


def _config_dict(config):
    return {f.name: getattr(config, f.name) for f in fields(ExperimentConfig)}


# -- probing ---------------------------------------------------------------

@dataclass
class ProbeTable:
    """Per-epoch cross-validated probe accuracies and their summaries.

    ``scores[branch][target]`` is a list with one accuracy per epoch.
    """
    scores: dict
    chance: dict
    seed: int

    def mean(self, branch, target):
        return float(np.mean(self.scores[branch][target]))

    def std(self, branch, target):
        return float(np.std(self.scores[branch][target]))

    def rows(self):
        for branch in sorted(self.scores):
            for target in sorted(self.scores[branch]):
                yield branch, target, self.mean(branch, target), self.std(branch, target)


def linear_probe(features, targets, seed=0, folds=5):
    """Mean 5-fold cross-validated accuracy of a logistic-regression probe."""
    probe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return float(np.mean(cross_val_score(probe, features, targets, cv=cv)))


def probe_experiment(config, n_textures=None, log=None):
    """Train NGLCM-branch and MLP-branch classifiers on the labels of a
    multi-texture corpus and probe their representations every epoch.

    Epoch 0 in the table is the untrained representation.
    """
    r = config.recipe
    n_textures = r.n_backgrounds if n_textures is None else n_textures
    corpus = gen_texture_corpus(r.n_classes, n_textures, r.n_samples, config.seed, r.side,
                                r.noise)
    scores, chance = {}, {"texture": 1.0 / n_textures, "label": 1.0 / r.n_classes}
    for branch in ("nglcm", "mlp"):
        init_rng, shuffle_rng, _ = _rngs(config.seed)
        model = BranchClassifier(r.n_classes, r.side, branch, config.g_width, config.levels,
                                 config.directions, lr=config.learning_rate, rng=init_rng)
        per = {"texture": [], "label": []}
        for epoch in range(config.epochs + 1):
            if epoch:
                order = shuffle_rng.permutation(len(corpus))
                for s in range(0, len(corpus) - config.batch_size + 1, config.batch_size):
                    idx = order[s:s + config.batch_size]
                    model.step(corpus.images[idx], corpus.labels[idx])
            feats = model.representation(corpus.images)
            per["texture"].append(linear_probe(feats, corpus.nuisance_ids, config.seed))
            per["label"].append(linear_probe(feats, corpus.labels, config.seed))
            if log:
                log(f"{branch} epoch {epoch}: texture {per['texture'][-1]:.3f} "
                    f"label {per['label'][-1]:.3f}")
        scores[branch] = per
    return ProbeTable(scores, chance, config.seed)


# -- output ----------------------------------------------------------------

def _fmt(value):
    return format(value, ".17g") if isinstance(value, float) else str(value)


def metric_rows(results):
    rows = []
    for r in sorted(results, key=lambda r: (r.method, r.setting, r.seed)):
        for h in r.history:
            for split in ("train", "val"):
                for metric in ("accuracy", "loss"):
                    rows.append((r.method, r.seed, r.setting, h["epoch"], split, metric,
                                 h[f"{split}_{metric}"]))
        rows.append((r.method, r.seed, r.setting, r.best_epoch, "test", "accuracy",
                     r.test_accuracy))
    return rows


def summarize(results):
    """Mean and population std of test accuracy per (method, setting)."""
    cells = {}
    for r in results:
        cells.setdefault((r.method, r.setting), []).append(r.test_accuracy)
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in sorted(cells.items())}


def emit_metrics(results, path, summary_path=None):
    """Long-format metric CSV plus a summary CSV (``<path>.summary.csv`` by default)."""
    if not results:
        raise ValueError("no results to emit")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in metric_rows(results):
            w.writerow([_fmt(v) for v in row])
    summary_path = summary_path or str(path) + ".summary.csv"
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "setting", "metric", "mean", "std", "n"))
        for (method, setting), (mean, std, n) in summarize(results).items():
            w.writerow([method, setting, "test_accuracy", _fmt(mean), _fmt(std), n])
    return summary_path


def emit_curves(results, path):
    """Wide per-epoch CSV (one row per run and epoch) for external plotting."""
    if not results:
        raise ValueError("no results to emit")
    cols = ("train_accuracy", "train_loss", "val_accuracy", "val_loss")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "seed", "setting", "epoch") + cols)
        for r in sorted(results, key=lambda r: (r.method, r.setting, r.seed)):
            for h in r.history:
                w.writerow([r.method, r.seed, r.setting, h["epoch"]] + [_fmt(h[c]) for c in cols])


def emit_probe(tables, path):
    """Probe summary: one row per (seed, branch, target) with mean and std over epochs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "branch", "target", "mean", "std", "chance"))
        for t in tables:
            for branch, target, mean, std in t.rows():
                w.writerow([t.seed, branch, target, _fmt(mean), _fmt(std), _fmt(t.chance[target])])


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected metrics header {header}")
        return [(m, int(s), st, int(e), sp, me, float(v)) for m, s, st, e, sp, me, v in reader]
