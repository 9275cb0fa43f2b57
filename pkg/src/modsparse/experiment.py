"""Config-driven experiment runner.

One run is the three-phase protocol: train (optionally with a geometric,
shuffled or uniform L1 penalty on each hidden update matrix), sparsify on
the magnitude-pruning schedule, and optionally retrain from fresh weights on
the frozen sparse architecture. Everything is reproducible from
(config, seed): batches, embeddings, initializations and shuffles all derive
from fixed seed streams.
"""

from __future__ import annotations

import copy
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from . import geometry, inhibitors, optim, pruning, regularizer, rnn, tasks
from .geometry import ManifoldSpec
from .inhibitors import InhibitorSpec

TASK_ADDING = "adding"
TASK_NAVIGATION = "navigation"

MODE_NONE = "none"
MODE_L1 = "l1"
MODE_MODULI = "moduli"
MODE_SHUFFLED = "shuffled"
MODES = (MODE_NONE, MODE_L1, MODE_MODULI, MODE_SHUFFLED)

METRICS_HEADER = ("epoch,batch,train_loss,penalty_value,sparsity_percent,"
                  "eval_metric,wall_time_s,seed")

# Seed stream tags; every random draw in a run is keyed (seed, tag, ...).
_S_PARAMS, _S_EMBED, _S_SHUFFLE, _S_TRAIN, _S_EVAL, _S_ARENA, _S_EXTRAS = range(1, 8)


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; a last-good checkpoint was kept if possible."""


# ---------------------------------------------------------------------------
# Configuration

def _strict(d: dict, allowed, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys {unknown} in {where}")


@dataclass
class ModelConfig:
    hidden: list
    nonlinearity: str = rnn.RELU
    bias: bool = True
    decoder_bias: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        _strict(d, ("hidden", "layers", "nonlinearity", "bias", "decoder_bias"),
                "model")
        hidden = d.get("hidden", 128)
        layers = d.get("layers")
        if isinstance(hidden, int):
            hidden = [hidden] * (layers or 1)
        elif layers is not None and layers != len(hidden):
            raise ConfigError("model.layers disagrees with the hidden list")
        if not hidden or any(h < 1 for h in hidden):
            raise ConfigError("hidden dims must be positive")
        return cls(list(hidden), d.get("nonlinearity", rnn.RELU),
                   bool(d.get("bias", True)), bool(d.get("decoder_bias", True)))


_INHIBITOR_KEYS = {
    inhibitors.DOG: ("c", "sigma1", "sigma2", "clamp_nonnegative"),
    inhibitors.RICKER: ("sigma", "clamp_nonnegative"),
    inhibitors.DIFFUSION: ("c", "n_exp"),
    inhibitors.SINUSOID: ("c", "mu"),
    inhibitors.CONSTANT: ("c",),
}

_INHIBITOR_FACTORY = {
    inhibitors.DOG: InhibitorSpec.dog,
    inhibitors.RICKER: InhibitorSpec.ricker,
    inhibitors.DIFFUSION: InhibitorSpec.diffusion,
    inhibitors.SINUSOID: InhibitorSpec.sinusoid,
    inhibitors.CONSTANT: InhibitorSpec.constant,
}


def _inhibitor_from_dict(d: dict) -> InhibitorSpec:
    if "kind" not in d:
        raise ConfigError("inhibitor needs a kind")
    kind = d["kind"]
    if kind not in _INHIBITOR_KEYS:
        raise ConfigError(f"unknown inhibitor kind {kind!r}")
    rest = {k: v for k, v in d.items() if k != "kind"}
    _strict(rest, _INHIBITOR_KEYS[kind], f"inhibitor({kind})")
    return _INHIBITOR_FACTORY[kind](**rest)


_MANIFOLD_DEFAULT_SCALE = {
    geometry.CIRCLE: geometry.DEFAULT_RADIUS,
    geometry.SPHERE: geometry.DEFAULT_RADIUS,
    geometry.TORUS2: geometry.DEFAULT_PERIOD,
    geometry.KLEIN_BOTTLE: geometry.DEFAULT_PERIOD,
    geometry.TORUS6: geometry.DEFAULT_PERIOD,
    geometry.EUCLIDEAN: geometry.DEFAULT_BOX_SIDE,
}


def _manifold_from_dict(d: dict) -> ManifoldSpec:
    _strict(d, ("kind", "scale", "ambient_dim"), "manifold")
    if "kind" not in d or d["kind"] not in geometry.KINDS:
        raise ConfigError(f"unknown manifold kind {d.get('kind')!r}")
    scale = d.get("scale", _MANIFOLD_DEFAULT_SCALE[d["kind"]])
    return ManifoldSpec(d["kind"], scale, d.get("ambient_dim"))


@dataclass
class RegularizerConfig:
    mode: str = MODE_NONE
    manifold: ManifoldSpec | None = None
    inhibitor: InhibitorSpec | None = None
    ell: float = 1.0
    lam: float = 0.0
    trainable_embedding: bool = False
    embedding_lr: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "RegularizerConfig":
        _strict(d, ("mode", "manifold", "inhibitor", "ell", "lambda",
                    "trainable_embedding", "embedding_lr"), "regularizer")
        mode = d.get("mode", MODE_NONE)
        if mode not in MODES:
            raise ConfigError(f"unknown regularizer mode {mode!r}")
        manifold = d.get("manifold")
        inhibitor = d.get("inhibitor")
        cfg = cls(
            mode=mode,
            manifold=_manifold_from_dict(manifold) if manifold else None,
            inhibitor=_inhibitor_from_dict(inhibitor) if inhibitor else None,
            ell=float(d.get("ell", 1.0)),
            lam=float(d.get("lambda", 0.0)),
            trainable_embedding=bool(d.get("trainable_embedding", False)),
            embedding_lr=float(d.get("embedding_lr", 0.0)),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.ell < 1:
            raise ConfigError("ell must be >= 1")
        if self.mode in (MODE_MODULI, MODE_SHUFFLED):
            if self.manifold is None or self.inhibitor is None:
                raise ConfigError(f"mode {self.mode!r} needs manifold and inhibitor")
        if self.trainable_embedding:
            if self.mode != MODE_MODULI:
                raise ConfigError("trainable embeddings require mode 'moduli'")
            if inhibitors.is_monotone(self.inhibitor):
                raise ConfigError(
                    "a monotone inhibitor with a trainable embedding collapses "
                    "all neurons onto one point (plain L1 with coefficient "
                    "f(0)); use a non-monotone inhibitor or a fixed embedding")
            if not self.embedding_lr > 0:
                raise ConfigError("trainable embeddings need embedding_lr > 0")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "manifold": self.manifold.to_dict() if self.manifold else None,
            "inhibitor": self.inhibitor.to_dict() if self.inhibitor else None,
            "ell": self.ell, "lambda": self.lam,
            "trainable_embedding": self.trainable_embedding,
            "embedding_lr": self.embedding_lr,
        }


@dataclass
class PruningConfig:
    enabled: bool = False
    target_percent: float = 0.0
    epochs: int = 2
    # "hidden" prunes only the hidden update matrices; "all" extends the
    # schedule to every trainable tensor.
    scope: str = "hidden"

    @classmethod
    def from_dict(cls, d: dict) -> "PruningConfig":
        _strict(d, ("enabled", "target_percent", "epochs", "scope"), "pruning")
        cfg = cls(bool(d.get("enabled", False)),
                  float(d.get("target_percent", 0.0)),
                  int(d.get("epochs", 2)), d.get("scope", "hidden"))
        if cfg.scope not in ("hidden", "all"):
            raise ConfigError(f"unknown pruning scope {cfg.scope!r}")
        return cfg


@dataclass
class OptimizerConfig:
    kind: str = optim.ADAM
    lr: float = 1e-4
    grad_clip: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        _strict(d, ("kind", "lr", "grad_clip"), "optimizer")
        return cls(d.get("kind", optim.ADAM), float(d.get("lr", 1e-4)),
                   None if d.get("grad_clip") is None else float(d["grad_clip"]))


@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 1
    batches_per_epoch: int = 100
    batch_size: int = 32
    eval_every: int = 100
    eval_batches: int = 4
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _strict(d, ("seed", "epochs", "batches_per_epoch", "batch_size",
                    "eval_every", "eval_batches", "out_dir"), "run")
        cfg = cls(int(d.get("seed", 0)), int(d.get("epochs", 1)),
                  int(d.get("batches_per_epoch", 100)),
                  int(d.get("batch_size", 32)), int(d.get("eval_every", 100)),
                  int(d.get("eval_batches", 4)), d.get("out_dir"))
        for name in ("epochs", "batches_per_epoch", "batch_size",
                     "eval_every", "eval_batches"):
            if getattr(cfg, name) < 1:
                raise ConfigError(f"run.{name} must be >= 1")
        return cfg


@dataclass
class AddingDataConfig:
    seq_len: int = 50

    @classmethod
    def from_dict(cls, d: dict) -> "AddingDataConfig":
        _strict(d, ("seq_len",), "data")
        return cls(int(d.get("seq_len", 50)))


@dataclass
class NavDataConfig:
    seq_len: int = 20
    n_landmarks: int = 64
    side_cm: float = 220.0
    gaussian_sigma_cm: float = 12.0
    grid_resolution_cm: float = 2.2
    max_speed_cm: float = 5.0
    turn_sigma_rad: float = 0.5
    # Landmarks define the task itself, so their seed is independent of the
    # run seed: lottery retrains and sweep trials keep the same arena.
    landmark_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "NavDataConfig":
        _strict(d, ("seq_len", "n_landmarks", "side_cm", "gaussian_sigma_cm",
                    "grid_resolution_cm", "max_speed_cm", "turn_sigma_rad",
                    "landmark_seed"), "data")
        return cls(int(d.get("seq_len", 20)), int(d.get("n_landmarks", 64)),
                   float(d.get("side_cm", 220.0)),
                   float(d.get("gaussian_sigma_cm", 12.0)),
                   float(d.get("grid_resolution_cm", 2.2)),
                   float(d.get("max_speed_cm", 5.0)),
                   float(d.get("turn_sigma_rad", 0.5)),
                   int(d.get("landmark_seed", 0)))


@dataclass
class ExperimentConfig:
    task: str
    model: ModelConfig
    data: object
    regularizer: RegularizerConfig
    pruning: PruningConfig
    optimizer: OptimizerConfig
    run: RunConfig

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _strict(d, ("task", "data", "model", "regularizer", "pruning",
                    "optimizer", "run"), "config")
        task = d.get("task")
        if task not in (TASK_ADDING, TASK_NAVIGATION):
            raise ConfigError(f"unknown task {task!r}")
        data_cls = AddingDataConfig if task == TASK_ADDING else NavDataConfig
        cfg = cls(
            task=task,
            model=ModelConfig.from_dict(d.get("model", {})),
            data=data_cls.from_dict(d.get("data", {})),
            regularizer=RegularizerConfig.from_dict(d.get("regularizer", {})),
            pruning=PruningConfig.from_dict(d.get("pruning", {})),
            optimizer=OptimizerConfig.from_dict(d.get("optimizer", {})),
            run=RunConfig.from_dict(d.get("run", {})),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.regularizer.validate()
        if self.pruning.enabled:
            if not 0 <= self.pruning.target_percent < 100:
                raise ConfigError("pruning.target_percent must be in [0, 100)")
            if self.pruning.epochs < 2:
                raise ConfigError("pruning schedule needs >= 2 epochs")
            if self.pruning.epochs > self.run.epochs:
                raise ConfigError("pruning.epochs cannot exceed run.epochs")

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "data": asdict(self.data),
            "model": asdict(self.model),
            "regularizer": self.regularizer.to_dict(),
            "pruning": asdict(self.pruning),
            "optimizer": asdict(self.optimizer),
            "run": asdict(self.run),
        }
        return d


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# Task adapters

class AddingTaskAdapter:
    input_dim = 2
    output_dim = 1
    decoder_activation = rnn.IDENTITY

    def __init__(self, config: ExperimentConfig):
        self.T = config.data.seq_len
        self.B = config.run.batch_size
        self.seed = config.run.seed
        evals = [tasks.gen_adding_batch(self.T, self.B, [self.seed, _S_EVAL, j])
                 for j in range(config.run.eval_batches)]
        self._eval_inputs = [b.inputs for b in evals]
        self._eval_targets = [b.target for b in evals]

    def init_extras(self, hidden_dim: int) -> dict:
        return {}

    def train_batch(self, index: int):
        batch = tasks.gen_adding_batch(self.T, self.B,
                                       [self.seed, _S_TRAIN, index])
        return batch.inputs, batch.target

    def h_init(self, inputs, aux, extras, hidden_dims):
        return None  # zeros

    def criterion(self, output: np.ndarray, aux):
        target = aux[:, None]
        diff = output - target
        loss = float(np.mean(diff**2))
        grad = 2.0 * diff / diff.size
        return loss, grad

    def extra_grads(self, h_init_grads, inputs, aux, extras) -> dict:
        return {}

    def eval_metric(self, params, extras) -> float:
        """Root mean squared error over the frozen eval set."""
        sq_sum, count = 0.0, 0
        for X, target in zip(self._eval_inputs, self._eval_targets):
            pred = rnn.forward(params, X).output[:, 0]
            sq_sum += float(np.sum((pred - target)**2))
            count += target.size
        return math.sqrt(sq_sum / count)


class NavigationTaskAdapter:
    input_dim = 2
    decoder_activation = rnn.SOFTMAX

    def __init__(self, config: ExperimentConfig):
        d = config.data
        self.T = d.seq_len
        self.B = config.run.batch_size
        self.seed = config.run.seed
        self.grid_resolution_cm = d.grid_resolution_cm
        self.max_speed = d.max_speed_cm
        self.turn_sigma = d.turn_sigma_rad
        self.arena = tasks.make_arena(d.n_landmarks,
                                      [d.landmark_seed, _S_ARENA],
                                      d.side_cm, d.gaussian_sigma_cm)
        self.output_dim = d.n_landmarks
        self._eval = [self._make(i, [self.seed, _S_EVAL, i])
                      for i in range(config.run.eval_batches)]

    def _make(self, index: int, seed):
        traj = tasks.gen_trajectories(self.arena, self.T, self.B, seed,
                                      self.max_speed, self.turn_sigma)
        start_scores = tasks.place_scores(self.arena, traj.start_cm)
        target_scores = tasks.place_scores(self.arena, traj.end_cm)
        return traj, start_scores, target_scores

    def init_extras(self, hidden_dim: int) -> dict:
        rng = np.random.default_rng([self.seed, _S_EXTRAS])
        n = self.arena.n_landmarks
        return {"encoder.E": rng.uniform(-1, 1, (hidden_dim, n)) / np.sqrt(n)}

    def train_batch(self, index: int):
        traj, start_scores, target_scores = self._make(
            index, [self.seed, _S_TRAIN, index])
        return traj.velocities, (start_scores, target_scores, traj.end_cm)

    def h_init(self, inputs, aux, extras, hidden_dims):
        start_scores = aux[0]
        h0 = [start_scores @ extras["encoder.E"].T]
        for h in hidden_dims[1:]:
            h0.append(np.zeros((start_scores.shape[0], h)))
        return h0

    def criterion(self, output: np.ndarray, aux):
        target = aux[1]
        with np.errstate(divide="raise"):
            loss = float(-np.mean(np.sum(target * np.log(output), axis=1)))
        grad = -target / (output * target.shape[0])
        return loss, grad

    def extra_grads(self, h_init_grads, inputs, aux, extras) -> dict:
        return {"encoder.E": h_init_grads[0].T @ aux[0]}

    def eval_metric(self, params, extras) -> float:
        """Mean decode error (cm) over the frozen eval trajectories."""
        errs = []
        for traj, start_scores, _ in self._eval:
            h0 = self.h_init(None, (start_scores,), extras, params.hidden_dims)
            out = rnn.forward(params, traj.velocities, h0).output
            decoded = tasks.decode_position(out, self.arena,
                                            self.grid_resolution_cm)
            errs.append(np.linalg.norm(decoded - traj.end_cm, axis=1))
        return float(np.mean(np.concatenate(errs)))


def _make_task(config: ExperimentConfig):
    if config.task == TASK_ADDING:
        return AddingTaskAdapter(config)
    return NavigationTaskAdapter(config)


# ---------------------------------------------------------------------------
# Metrics

@dataclass
class MetricsRecord:
    epoch: int
    batch: int
    train_loss: float
    penalty_value: float
    sparsity_percent: float
    eval_metric: float
    wall_time_s: float
    seed: int

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.batch},{self.train_loss!r},"
                f"{self.penalty_value!r},{self.sparsity_percent!r},"
                f"{self.eval_metric!r},{self.wall_time_s!r},{self.seed}")


def write_metrics_csv(records, path) -> None:
    with open(path, "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


# ---------------------------------------------------------------------------
# Training

@dataclass
class TrainResult:
    config: ExperimentConfig
    params: rnn.RnnParams
    extras: dict
    masks: dict
    metrics: list
    embeddings: list
    coefficients: list
    final_eval: float
    out_dir: str | None = None
    debug_records: list = field(default_factory=list)


def _build_regularizer(config: ExperimentConfig):
    """Per-layer (embedding, coefficient matrix) lists for the run."""
    reg = config.regularizer
    hidden = config.model.hidden
    embeddings, coeffs = [], []
    if reg.mode == MODE_NONE:
        return [None] * len(hidden), [None] * len(hidden)
    for k, h in enumerate(hidden):
        if reg.mode == MODE_L1:
            embeddings.append(None)
            coeffs.append(regularizer.uniform_coefficients(h, h, 1.0, reg.ell))
            continue
        emb = geometry.sample_uniform(reg.manifold, h,
                                      [config.run.seed, _S_EMBED, k])
        emb.trainable = reg.trainable_embedding
        C = regularizer.build_coefficients(emb, emb, reg.inhibitor, reg.ell)
        if reg.mode == MODE_SHUFFLED:
            C = regularizer.shuffle(C, [config.run.seed, _S_SHUFFLE, k])
        embeddings.append(emb)
        coeffs.append(C)
    return embeddings, coeffs


def _sparsity_percent(masks: dict) -> float:
    if not masks:
        return 0.0
    zeros = sum(int(np.sum(m == 0)) for m in masks.values())
    total = sum(m.size for m in masks.values())
    return 100.0 * zeros / total


def _prunable_names(params: rnn.RnnParams) -> list:
    return [f"layers.{k}.W_hh" for k in range(len(params.layers))]


def run_training(config: ExperimentConfig, out_dir: str | None = None,
                 debug: bool = False, frozen_masks: dict | None = None,
                 preset_params: rnn.RnnParams | None = None,
                 preset_coeffs: list | None = None) -> TrainResult:
    """Execute one training run.

    frozen_masks / preset_params / preset_coeffs support the lottery
    protocol: masks are applied from step one, never recomputed, and the
    regularizer matrices are reused rather than rebuilt (embeddings frozen).
    """
    out_dir = out_dir or config.run.out_dir
    task = _make_task(config)
    params = preset_params or rnn.init_rnn_params(
        task.input_dim, config.model.hidden, task.output_dim,
        nonlinearity=config.model.nonlinearity, bias=config.model.bias,
        decoder_bias=config.model.decoder_bias,
        decoder_activation=task.decoder_activation,
        seed=[config.run.seed, _S_PARAMS])
    extras = task.init_extras(config.model.hidden[0])
    tensors = {**params.tensors(), **extras}

    reg = config.regularizer
    if preset_coeffs is not None:
        embeddings, coeffs = [None] * len(config.model.hidden), list(preset_coeffs)
        train_embedding = False
    else:
        embeddings, coeffs = _build_regularizer(config)
        train_embedding = reg.trainable_embedding and reg.lam > 0

    opt = optim.init_optimizer(tensors, config.optimizer.kind,
                               config.optimizer.lr, config.optimizer.grad_clip)

    masks: dict = dict(frozen_masks) if frozen_masks else {}
    if masks:
        for name, mask in masks.items():
            tensors[name] *= mask

    run = config.run
    total_batches = run.epochs * run.batches_per_epoch
    records: list = []
    debug_records: list = []
    t0 = time.perf_counter()
    last_good = None
    whh_names = _prunable_names(params)
    prune_names = sorted(tensors) if config.pruning.scope == "all" else whh_names

    def current_penalty():
        if reg.lam == 0 or all(C is None for C in coeffs):
            return 0.0
        return sum(regularizer.penalty(C, tensors[name])
                   for C, name in zip(coeffs, whh_names) if C is not None)

    def record_row(epoch, gi):
        metric = task.eval_metric(params, extras)
        records.append(MetricsRecord(
            epoch=epoch, batch=gi + 1,
            train_loss=window["loss"] / max(window["n"], 1),
            penalty_value=window["pen"] / max(window["n"], 1),
            sparsity_percent=_sparsity_percent(masks),
            eval_metric=metric,
            wall_time_s=time.perf_counter() - t0,
            seed=run.seed))
        window["loss"] = window["pen"] = 0.0
        window["n"] = 0
        return metric

    window = {"loss": 0.0, "pen": 0.0, "n": 0}
    final_metric = None
    for epoch in range(1, run.epochs + 1):
        if config.pruning.enabled and frozen_masks is None \
                and epoch <= config.pruning.epochs:
            level = pruning.scheduled_sparsity(epoch, config.pruning.epochs,
                                               config.pruning.target_percent)
            for name in prune_names:
                masks[name] = pruning.magnitude_prune(tensors[name], level)
        for b in range(run.batches_per_epoch):
            gi = (epoch - 1) * run.batches_per_epoch + b
            try:
                inputs, aux = task.train_batch(gi)
                h0 = task.h_init(inputs, aux, extras, params.hidden_dims)
                cache = rnn.forward(params, inputs, h0)
                criterion, dout = task.criterion(cache.output, aux)
                grads, h_init_grads = rnn.backward(params, cache, dout)
                grads.update(task.extra_grads(h_init_grads, inputs, aux, extras))

                pen_raw = current_penalty()
                if reg.lam > 0:
                    for C, name in zip(coeffs, whh_names):
                        if C is None:
                            continue
                        pgrad = reg.lam * regularizer.penalty_weight_grad(
                            C, tensors[name])
                        if debug:
                            debug_records.append({
                                "batch": gi, "criterion": criterion,
                                "penalty_raw": pen_raw,
                                "criterion_grad": grads[name].copy(),
                                "penalty_grad": pgrad.copy(),
                            })
                        grads[name] = grads[name] + pgrad
                total = criterion + reg.lam * pen_raw
                if not np.isfinite(total):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, batch {gi}")
                optim.optimizer_step(opt, tensors, grads, masks)
            except FloatingPointError as exc:
                if out_dir and last_good is not None:
                    ckpt.save_checkpoint(
                        os.path.join(out_dir, "checkpoint_last_good"),
                        last_good, masks, {"epoch": epoch, "batch": gi})
                raise TrainingDiverged(str(exc)) from exc
            window["loss"] += total
            window["pen"] += reg.lam * pen_raw
            window["n"] += 1

            if (gi + 1) % run.eval_every == 0 or gi + 1 == total_batches:
                final_metric = record_row(epoch, gi)
                last_good = {k: v.copy() for k, v in tensors.items()}

        if train_embedding and epoch < run.epochs:
            for k, (emb, name) in enumerate(zip(embeddings, whh_names)):
                if emb is None:
                    continue
                grad_pts, _ = regularizer.penalty_embedding_grad(
                    emb, emb, reg.inhibitor, tensors[name], reg.ell)
                emb.points -= reg.embedding_lr * reg.lam * grad_pts
                for i in range(len(emb)):
                    emb.points[i] = geometry.retract(emb.manifold, emb.points[i])
                coeffs[k] = regularizer.build_coefficients(
                    emb, emb, reg.inhibitor, reg.ell)

    if final_metric is None:  # pragma: no cover - eval_every > total guard
        final_metric = record_row(run.epochs, total_batches - 1)

    result = TrainResult(config, params, extras, masks, records, embeddings,
                         coeffs, final_metric, out_dir, debug_records)
    if out_dir:
        _write_run_outputs(result)
    return result


def _write_run_outputs(result: TrainResult) -> None:
    out = result.out_dir
    os.makedirs(out, exist_ok=True)
    save_config(result.config, os.path.join(out, "config.json"))
    write_metrics_csv(result.metrics, os.path.join(out, "metrics.csv"))
    meta = {
        "task": result.config.task,
        "hidden": result.config.model.hidden,
        "layers": [f"layers.{k}" for k in range(len(result.config.model.hidden))],
        "nonlinearity": result.config.model.nonlinearity,
        "seed": result.config.run.seed,
        "epoch": result.config.run.epochs,
        "pruning": {**asdict(result.config.pruning),
                    "k_at_save": result.config.run.epochs},
        "pruned_tensors": sorted(result.masks),
        "regularizer_mode": result.config.regularizer.mode,
    }
    tensors = {**result.params.tensors(), **result.extras}
    ckpt.save_checkpoint(os.path.join(out, "checkpoint"), tensors,
                         result.masks, meta)
    for k, emb in enumerate(result.embeddings):
        if emb is not None:
            geometry.save_embedding(emb, os.path.join(out, f"embedding_layer{k}.json"))
    for k, C in enumerate(result.coefficients):
        if C is not None:
            regularizer.save_coefficients(C, os.path.join(out, f"coefficients_layer{k}"))
    summary = {
        "final_eval_metric": result.final_eval,
        "final_sparsity_percent": _sparsity_percent(result.masks),
        "epochs": result.config.run.epochs,
        "seed": result.config.run.seed,
        "task": result.config.task,
        "regularizer_mode": result.config.regularizer.mode,
        "lambda": result.config.regularizer.lam,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    try:
        from . import plots
        plots.save_metrics_figure(result.metrics, os.path.join(out, "metrics.png"),
                                  task=result.config.task)
    except Exception:  # figures are a convenience, never fail the run
        pass


# ---------------------------------------------------------------------------
# Lottery retraining

def run_lottery(config: ExperimentConfig, checkpoint_dir: str, seed: int,
                out_dir: str | None = None) -> TrainResult:
    """Reinitialize under `seed`, retrain with the checkpoint's masks frozen.

    No pruning happens during the retrain and embeddings stay fixed: the
    coefficient matrices exported by the original run are reused verbatim.
    """
    ckpt_dir = checkpoint_dir
    if not os.path.exists(os.path.join(ckpt_dir, "manifest.json")):
        ckpt_dir = os.path.join(checkpoint_dir, "checkpoint")
    _, masks, _ = ckpt.load_checkpoint(ckpt_dir)
    if not masks:
        raise ValueError(f"no masks found in checkpoint {checkpoint_dir!r}")

    cfg = copy.deepcopy(config)
    cfg.pruning = PruningConfig(enabled=False)
    cfg.regularizer.trainable_embedding = False
    cfg.regularizer.embedding_lr = 0.0
    cfg.run = replace(cfg.run, seed=int(seed), out_dir=out_dir)

    coeffs = None
    run_dir = os.path.dirname(ckpt_dir) if ckpt_dir.endswith("checkpoint") else ckpt_dir
    prefixes = [os.path.join(run_dir, f"coefficients_layer{k}")
                for k in range(len(cfg.model.hidden))]
    if all(os.path.exists(p + ".bin") for p in prefixes):
        coeffs = [regularizer.load_coefficients(p) for p in prefixes]
    elif cfg.regularizer.mode in (MODE_MODULI, MODE_SHUFFLED):
        raise ValueError("lottery run needs the original coefficient export")

    return run_training(cfg, out_dir=out_dir, frozen_masks=masks,
                        preset_coeffs=coeffs)


# ---------------------------------------------------------------------------
# Lambda sweeps

def run_sweep(config: ExperimentConfig, lambdas, trials: int,
              out_dir: str | None = None) -> list:
    """One run per (lambda, trial); summarizes the final eval metric."""
    lambdas = list(lambdas)
    if not lambdas:
        raise ValueError("sweep needs at least one lambda")
    if trials < 1:
        raise ValueError("sweep needs at least one trial")
    rows = []
    for lam in lambdas:
        finals, errors = [], []
        for trial in range(trials):
            cfg = copy.deepcopy(config)
            cfg.regularizer.lam = float(lam)
            cfg.regularizer.validate()
            cfg.run = replace(cfg.run, seed=config.run.seed + trial,
                              out_dir=None)
            try:
                res = run_training(cfg)
                finals.append(res.final_eval)
            except Exception as exc:  # keep sweeping past failed runs
                errors.append(f"trial {trial}: {exc}")
        row = {
            "lambda": float(lam),
            "trials_ok": len(finals),
            "mean_eval": float(np.mean(finals)) if finals else float("nan"),
            "sd_eval": float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0,
            "errors": errors,
        }
        rows.append(row)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            fh.write("lambda,trials_ok,mean_eval,sd_eval\n")
            for r in rows:
                fh.write(f"{r['lambda']!r},{r['trials_ok']},"
                         f"{r['mean_eval']!r},{r['sd_eval']!r}\n")
        with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
            json.dump(rows, fh, indent=1)
        try:
            from . import plots
            plots.save_sweep_figure(rows, os.path.join(out_dir, "sweep.png"))
        except Exception:
            pass
    return rows


# ---------------------------------------------------------------------------
# Checkpoint utilities (heatmap export, re-evaluation)

def export_heatmap(run_dir: str, layer: int, out_path: str | None = None,
                   order_by_embedding: bool = False,
                   render_figure: bool = True) -> str:
    """Write |W_hh| of one layer as CSV (and a rendered PNG next to it)."""
    ckpt_dir = run_dir
    if not os.path.exists(os.path.join(ckpt_dir, "manifest.json")):
        ckpt_dir = os.path.join(run_dir, "checkpoint")
    tensors, _, _ = ckpt.load_checkpoint(ckpt_dir)
    name = f"layers.{layer}.W_hh"
    if name not in tensors:
        raise ValueError(f"no hidden update matrix for layer {layer}")
    mat = np.abs(tensors[name])
    if order_by_embedding:
        emb_path = os.path.join(run_dir, f"embedding_layer{layer}.json")
        if not os.path.exists(emb_path):
            raise ValueError("no saved embedding to order by")
        emb = geometry.load_embedding(emb_path)
        order = np.argsort(emb.points[:, 0], kind="stable")
        mat = mat[np.ix_(order, order)]
    out_path = out_path or os.path.join(run_dir, f"heatmap_layer{layer}.csv")
    np.savetxt(out_path, mat, delimiter=",")
    if render_figure:
        try:
            from . import plots
            plots.save_heatmap_figure(mat, os.path.splitext(out_path)[0] + ".png",
                                      title=f"|W_hh| layer {layer}")
        except Exception:
            pass
    return out_path


def evaluate_run(run_dir: str) -> dict:
    """Recompute the eval metric of a finished run from its artifacts."""
    config = load_config(os.path.join(run_dir, "config.json"))
    tensors, masks, meta = ckpt.load_checkpoint(os.path.join(run_dir, "checkpoint"))
    task = _make_task(config)
    params = rnn.init_rnn_params(
        task.input_dim, config.model.hidden, task.output_dim,
        nonlinearity=config.model.nonlinearity, bias=config.model.bias,
        decoder_bias=config.model.decoder_bias,
        decoder_activation=task.decoder_activation,
        seed=[config.run.seed, _S_PARAMS])
    loaded = params.tensors()
    extras = {}
    for name, arr in tensors.items():
        if name in loaded:
            loaded[name][...] = arr
        else:
            extras[name] = arr
    metric = task.eval_metric(params, extras)
    return {"eval_metric": metric, "task": config.task,
            "sparsity_percent": _sparsity_percent(masks),
            "seed": config.run.seed}
