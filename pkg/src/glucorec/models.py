"""Recommendation networks: a chained-LSTM block and its residual stack.

A block runs one LSTM over the 6-hour history (BGL, carbs, bolus,
basal), bridges its final state into a second LSTM that consumes the
prediction-window events (carbs, bolus, basal only, since future BGL is
unknown), then feeds the final state(s) plus query features (target BGL,
horizon, ToD average, planned carbs for bolus-given-carbs) through fully
connected layers ending in a forecast scalar and a 72-step BGL backcast.
Stacking is residual: each block sees the history BGL minus the previous
blocks' backcasts and the stack prediction is the sum of all forecasts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .baselines import BaselineModel, predict_at
from .errors import ConfigError, QueryError, ShapeError
from .recexamples import (
    HISTORY_STEPS,
    HORIZONS,
    ExampleClass,
    RecommendationExample,
    Scenario,
)
from .timeseries import GRID_MINUTES, ScalingParams

MAX_HORIZON = max(HORIZONS)

#: Tuned hyper-parameters per scenario and example class:
#: (blocks, fc_layers, dropout). The plain LSTM architecture always uses
#: a single block.
LSTM_DEFAULTS = {
    (Scenario.CARBS_ALL, ExampleClass.INERTIAL): (1, 3, 0.1),
    (Scenario.CARBS_ALL, ExampleClass.UNRESTRICTED): (1, 3, 0.1),
    (Scenario.CARBS_NO_BOLUS, ExampleClass.INERTIAL): (1, 3, 0.1),
    (Scenario.CARBS_NO_BOLUS, ExampleClass.UNRESTRICTED): (1, 3, 0.1),
    (Scenario.BOLUS_ALL, ExampleClass.INERTIAL): (1, 3, 0.0),
    (Scenario.BOLUS_ALL, ExampleClass.UNRESTRICTED): (1, 2, 0.3),
    (Scenario.BOLUS_WITH_CARBS, ExampleClass.INERTIAL): (1, 2, 0.2),
    (Scenario.BOLUS_WITH_CARBS, ExampleClass.UNRESTRICTED): (1, 2, 0.5),
}
NBEATS_DEFAULTS = {
    (Scenario.CARBS_ALL, ExampleClass.INERTIAL): (5, 2, 0.3),
    (Scenario.CARBS_ALL, ExampleClass.UNRESTRICTED): (3, 3, 0.3),
    (Scenario.CARBS_NO_BOLUS, ExampleClass.INERTIAL): (5, 2, 0.3),
    (Scenario.CARBS_NO_BOLUS, ExampleClass.UNRESTRICTED): (3, 3, 0.3),
    (Scenario.BOLUS_ALL, ExampleClass.INERTIAL): (5, 4, 0.2),
    (Scenario.BOLUS_ALL, ExampleClass.UNRESTRICTED): (4, 4, 0.2),
    (Scenario.BOLUS_WITH_CARBS, ExampleClass.INERTIAL): (5, 4, 0.5),
    (Scenario.BOLUS_WITH_CARBS, ExampleClass.UNRESTRICTED): (3, 5, 0.2),
}


@dataclass(frozen=True)
class ModelConfig:
    architecture: str  # "lstm" | "nbeats"
    scenario: Scenario
    example_class: ExampleClass
    blocks: int
    fc_layers: int
    dropout: float
    state_size: int = 32
    fcn_width: int = 64
    use_s1: bool = True
    joint_heads: bool = True
    lambda_forecast: float = 1.0
    lambda_backcast: float = 1.0

    def __post_init__(self):
        if self.architecture not in ("lstm", "nbeats"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if not 1 <= self.blocks <= 10:
            raise ConfigError("blocks must be in 1..10")
        if not 1 <= self.fc_layers <= 5:
            raise ConfigError("fc_layers must be in 1..5")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def feature_count(self) -> int:
        # target BGL, horizon, ToD average (+ planned carbs)
        return 4 if self.scenario is Scenario.BOLUS_WITH_CARBS else 3

    @property
    def feature_names(self) -> list[str]:
        names = ["target_bgl", "tau", "tod_average"]
        if self.scenario is Scenario.BOLUS_WITH_CARBS:
            names.append("planned_carbs")
        return names

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "scenario": self.scenario.value,
            "example_class": self.example_class.value,
            "blocks": self.blocks, "fc_layers": self.fc_layers,
            "dropout": self.dropout, "state_size": self.state_size,
            "fcn_width": self.fcn_width, "use_s1": self.use_s1,
            "joint_heads": self.joint_heads,
            "lambda_forecast": self.lambda_forecast,
            "lambda_backcast": self.lambda_backcast,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["scenario"] = Scenario(d["scenario"])
        d["example_class"] = ExampleClass(d["example_class"])
        return cls(**d)


def default_model_config(architecture: str, scenario: Scenario,
                         example_class: ExampleClass) -> ModelConfig:
    """Tuned defaults; the sparse carbs-without-bolus scenario halves all widths."""
    table = NBEATS_DEFAULTS if architecture == "nbeats" else LSTM_DEFAULTS
    blocks, fc_layers, dropout = table[(scenario, example_class)]
    state, width = (32, 64)
    if scenario is Scenario.CARBS_NO_BOLUS:
        state, width = 16, 32
    return ModelConfig(architecture=architecture, scenario=scenario,
                       example_class=example_class, blocks=blocks,
                       fc_layers=fc_layers, dropout=dropout,
                       state_size=state, fcn_width=width)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class LstmCell:
    """Single-layer LSTM; gate order i, f, g, o along the weight columns."""

    def __init__(self, rng: np.random.Generator, input_size: int,
                 hidden_size: int, name: str):
        h = hidden_size
        self.hidden_size = h
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0  # forget gate starts open
        self.wx = ad.parameter(_glorot(rng, input_size, 4 * h), f"{name}.wx")
        self.wh = ad.parameter(_glorot(rng, h, 4 * h), f"{name}.wh")
        self.b = ad.parameter(bias, f"{name}.b")

    def parameters(self) -> list[Tensor]:
        return [self.wx, self.wh, self.b]

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        z = ad.add(ad.add(ad.matmul(x, self.wx), ad.matmul(h, self.wh)), self.b)
        n = self.hidden_size
        i = ad.sigmoid(ad.narrow(z, 1, 0, n))
        f = ad.sigmoid(ad.narrow(z, 1, n, n))
        g = ad.tanh(ad.narrow(z, 1, 2 * n, n))
        o = ad.sigmoid(ad.narrow(z, 1, 3 * n, n))
        c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_new = ad.mul(o, ad.tanh(c_new))
        return h_new, c_new

    def run_stepwise(self, steps: list[Tensor], h0: Tensor, c0: Tensor) -> Tensor:
        """Reference path built from primitive ops; used to pin lstm_sequence."""
        h, c = h0, c0
        for x in steps:
            h, c = self.step(x, h, c)
        return h


def lstm_sequence(cell: LstmCell, events: np.ndarray, h0: Tensor, c0: Tensor,
                  bgl: Tensor | None = None) -> Tensor:
    """Run a whole LSTM sequence as one tape node with hand-rolled BPTT.

    ``events`` is a plain (B, T, E) array; when ``bgl`` is given its
    columns are prepended as input channel 0 so gradients can flow back
    into the (residually stacked) BGL history. Numerically identical to
    chaining ``cell.step``; exists because one fused node per sequence is
    far cheaper than ~16 tape nodes per time step.
    """
    n = cell.hidden_size
    wx, wh, b = cell.wx, cell.wh, cell.b
    batch, steps = events.shape[0], events.shape[1]
    bgl_data = bgl.data if bgl is not None else None

    h, c = h0.data, c0.data
    caches = []
    for t in range(steps):
        x = events[:, t, :] if bgl_data is None else np.concatenate(
            [bgl_data[:, t:t + 1], events[:, t, :]], axis=1)
        z = x @ wx.data + h @ wh.data + b.data
        i = ad.sigmoid_stable(z[:, :n])
        f = ad.sigmoid_stable(z[:, n:2 * n])
        g = np.tanh(z[:, 2 * n:3 * n])
        o = ad.sigmoid_stable(z[:, 3 * n:])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        caches.append((x, h, c, i, f, g, o, tanh_c))
        h, c = o * tanh_c, c_new

    parents = [wx, wh, b, h0, c0] + ([bgl] if bgl is not None else [])
    if not (ad.is_grad_enabled() and any(p.requires_grad for p in parents)):
        return Tensor(h, name="lstm_sequence")

    wx_data, wh_data = np.array(wx.data), np.array(wh.data)

    def backward(grad):
        dh = np.array(grad)
        dc = np.zeros_like(dh)
        d_wx = np.zeros_like(wx_data)
        d_wh = np.zeros_like(wh_data)
        d_b = np.zeros(4 * n)
        d_bgl = np.zeros_like(bgl_data) if bgl_data is not None else None
        for t in range(steps - 1, -1, -1):
            x, h_prev, c_prev, i, f, g, o, tanh_c = caches[t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
            di, dg, df = dc * g, dc * i, dc * c_prev
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            d_wx += x.T @ dz
            d_wh += h_prev.T @ dz
            d_b += dz.sum(axis=0)
            dx = dz @ wx_data.T
            dh = dz @ wh_data.T
            dc = dc * f
            if d_bgl is not None:
                d_bgl[:, t] = dx[:, 0]
        wx.accumulate(d_wx)
        wh.accumulate(d_wh)
        b.accumulate(d_b)
        h0.accumulate(dh)
        c0.accumulate(dc)
        if bgl is not None:
            bgl.accumulate(d_bgl)

    return Tensor(h, requires_grad=True, parents=tuple(parents),
                  backward_fn=backward, name="lstm_sequence")


@dataclass
class EncodedBatch:
    """Scaled tensors for one same-horizon batch of examples."""

    tau: int
    bgl_history: np.ndarray      # (B, 72)
    event_history: np.ndarray    # (B, 72, 3) carbs, bolus, basal
    future_events: np.ndarray    # (B, L, 3) label event masked out
    features: np.ndarray         # (B, F)
    labels: np.ndarray           # (B, 1)

    @property
    def size(self) -> int:
        return self.bgl_history.shape[0]


def encode_features(scenario: Scenario, scaling: ScalingParams, tau: int,
                    target_bgl: float, tod_average: float,
                    planned_carbs: float | None) -> np.ndarray:
    feats = [
        scaling.scale_value("bgl", target_bgl),
        tau / MAX_HORIZON,
        scaling.scale_value(scenario.label_channel, tod_average),
    ]
    if scenario is Scenario.BOLUS_WITH_CARBS:
        if planned_carbs is None:
            raise QueryError("bolus-with-carbs queries need planned_carbs")
        feats.append(scaling.scale_value("carbs", planned_carbs))
    return np.array(feats)


@dataclass
class EncodedExample:
    """One example scaled with its subject's own parameters."""

    tau: int
    bgl_history: np.ndarray    # (72,)
    event_history: np.ndarray  # (72, 3)
    future_events: np.ndarray  # (L, 3)
    features: np.ndarray       # (F,)
    label: float               # scaled
    label_natural: float
    target_bgl: float
    event_time: int
    subject_id: str


def encode_example(ex: RecommendationExample, scenario: Scenario,
                   scaling: ScalingParams) -> EncodedExample:
    """Scale one example into model tensors.

    The label event at offset +10 (and the paired meal at +20 in the
    bolus-given-carbs scenario) is zeroed out of the future events so the
    network never sees its own label; those quantities reach the FCN only
    through the feature vector. Scaling statistics must come from the
    training split.
    """
    if scaling.provenance != "train":
        raise ConfigError(
            f"refusing to scale with {scaling.provenance!r}-derived "
            "statistics; scaling must come from the training split")
    steps = (10 + ex.tau) // GRID_MINUTES
    if ex.future.shape[0] != steps:
        raise ShapeError(
            f"example future window has {ex.future.shape[0]} steps, "
            f"expected {steps} for tau={ex.tau}")
    bgl = scaling.scale_array("bgl", ex.history[:, 0])
    events = np.column_stack([
        scaling.scale_array("carbs", ex.history[:, 1]),
        scaling.scale_array("bolus", ex.history[:, 2]),
        scaling.scale_array("basal", ex.history[:, 3]),
    ])
    future = np.column_stack([
        scaling.scale_array("carbs", ex.future[:, 0]),
        scaling.scale_array("bolus", ex.future[:, 1]),
        scaling.scale_array("basal", ex.future[:, 2]),
    ])
    label_row = 1  # offset +10 minutes
    if scenario.is_carb:
        future[label_row, 0] = 0.0
    else:
        future[label_row, 1] = 0.0
    if scenario is Scenario.BOLUS_WITH_CARBS:
        future[label_row + 2, 0] = 0.0  # paired meal at +20
    features = encode_features(scenario, scaling, ex.tau, ex.target_bgl,
                               ex.tod_average, ex.planned_carbs)
    return EncodedExample(
        tau=ex.tau, bgl_history=bgl, event_history=events,
        future_events=future, features=features,
        label=scaling.scale_value(scenario.label_channel, ex.label),
        label_natural=ex.label, target_bgl=ex.target_bgl,
        event_time=ex.event_time, subject_id=ex.subject_id)


def collate(encoded: list[EncodedExample]) -> EncodedBatch:
    """Stack same-horizon encoded examples into one batch."""
    taus = {e.tau for e in encoded}
    if len(taus) != 1:
        raise ShapeError(f"collate: mixed horizons {sorted(taus)}")
    return EncodedBatch(
        tau=taus.pop(),
        bgl_history=np.stack([e.bgl_history for e in encoded]),
        event_history=np.stack([e.event_history for e in encoded]),
        future_events=np.stack([e.future_events for e in encoded]),
        features=np.stack([e.features for e in encoded]),
        labels=np.array([[e.label] for e in encoded]),
    )


def encode_batch(examples: list[RecommendationExample], scenario: Scenario,
                 scaling: ScalingParams) -> EncodedBatch:
    return collate([encode_example(ex, scenario, scaling) for ex in examples])


class LstmBlock:
    """One chained-LSTM block with FCN heads for forecast and backcast."""

    def __init__(self, rng: np.random.Generator, config: ModelConfig, name: str):
        self.config = config
        self.name = name
        h, w = config.state_size, config.fcn_width
        self.lstm1 = LstmCell(rng, 4, h, f"{name}.lstm1")
        self.bridge_w = ad.parameter(_glorot(rng, h, h), f"{name}.bridge.w")
        self.bridge_b = ad.parameter(np.zeros(h), f"{name}.bridge.b")
        self.lstm2 = LstmCell(rng, 3, h, f"{name}.lstm2")

        fcn_in = (2 * h if config.use_s1 else h) + config.feature_count
        self.fc: list[tuple[Tensor, Tensor]] = []
        prev = fcn_in
        for i in range(config.fc_layers):
            wt = ad.parameter(_glorot(rng, prev, w), f"{name}.fc{i}.w")
            bt = ad.parameter(np.zeros(w), f"{name}.fc{i}.b")
            self.fc.append((wt, bt))
            prev = w
        if config.joint_heads:
            self.head_w = ad.parameter(_glorot(rng, prev, HISTORY_STEPS + 1),
                                       f"{name}.head.w")
            self.head_b = ad.parameter(np.zeros(HISTORY_STEPS + 1),
                                       f"{name}.head.b")
            self.heads = [(self.head_w, self.head_b)]
        else:
            self.back_w = ad.parameter(_glorot(rng, prev, HISTORY_STEPS),
                                       f"{name}.backcast.w")
            self.back_b = ad.parameter(np.zeros(HISTORY_STEPS),
                                       f"{name}.backcast.b")
            self.fore_w = ad.parameter(_glorot(rng, prev, 1),
                                       f"{name}.forecast.w")
            self.fore_b = ad.parameter(np.zeros(1), f"{name}.forecast.b")
            self.heads = [(self.back_w, self.back_b),
                          (self.fore_w, self.fore_b)]

    def parameters(self) -> list[Tensor]:
        params = self.lstm1.parameters() + [self.bridge_w, self.bridge_b]
        params += self.lstm2.parameters()
        for wt, bt in self.fc:
            params += [wt, bt]
        for wt, bt in self.heads:
            params += [wt, bt]
        return params

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        groups = {"lstm1": self.lstm1.parameters(),
                  "bridge": [self.bridge_w, self.bridge_b],
                  "lstm2": self.lstm2.parameters()}
        for i, (wt, bt) in enumerate(self.fc):
            groups[f"fc{i}"] = [wt, bt]
        groups["heads"] = [p for pair in self.heads for p in pair]
        return groups

    def forward(self, bgl: Tensor, event_history: np.ndarray,
                future_events: np.ndarray, features: np.ndarray,
                train_mode: bool, rng: np.random.Generator | None
                ) -> tuple[Tensor, Tensor]:
        """Return (forecast (B,1), backcast (B,72)), both in scaled units."""
        n = bgl.shape[0]
        h = self.config.state_size
        if bgl.shape[1] != HISTORY_STEPS:
            raise ShapeError(
                f"block expects {HISTORY_STEPS} history steps, "
                f"got {bgl.shape[1]}")
        zeros = ad.constant(np.zeros((n, h)))
        s1 = lstm_sequence(self.lstm1, event_history, zeros, zeros, bgl=bgl)

        h0 = ad.linear(s1, self.bridge_w, self.bridge_b)
        s2 = lstm_sequence(self.lstm2, future_events, h0, zeros)

        pieces = [s1, s2] if self.config.use_s1 else [s2]
        x = ad.concat(pieces + [ad.constant(features)], axis=1)
        for wt, bt in self.fc:
            x = ad.relu(ad.linear(x, wt, bt))
            if train_mode and self.config.dropout > 0:
                if rng is None:
                    raise ConfigError("training forward pass needs an RNG")
                x = ad.dropout(x, self.config.dropout, True, rng)
        if self.config.joint_heads:
            out = ad.linear(x, self.head_w, self.head_b)
            backcast = ad.narrow(out, 1, 0, HISTORY_STEPS)
            forecast = ad.narrow(out, 1, HISTORY_STEPS, 1)
        else:
            backcast = ad.linear(x, self.back_w, self.back_b)
            forecast = ad.linear(x, self.fore_w, self.fore_b)
        return forecast, backcast


@dataclass
class StackOutput:
    prediction: Tensor             # (B, 1) scaled label units
    forecasts: list[Tensor]        # per block (B, 1)
    backcasts: list[Tensor]        # per block (B, 72)
    block_input_bgl: list[Tensor]  # per block (B, 72)


class ResidualStack:
    """Blocks chained on the BGL channel; forecasts accumulate."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.blocks = [LstmBlock(rng, config, f"block{i}")
                       for i in range(config.blocks)]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for block in self.blocks
                for p in block.parameters()]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def forward_batch(self, batch: EncodedBatch, train_mode: bool = False,
                      rng: np.random.Generator | None = None) -> StackOutput:
        bgl = ad.constant(batch.bgl_history)
        forecasts, backcasts, inputs = [], [], []
        for block in self.blocks:
            inputs.append(bgl)
            forecast, backcast = block.forward(
                bgl, batch.event_history, batch.future_events, batch.features,
                train_mode, rng)
            forecasts.append(forecast)
            backcasts.append(backcast)
            bgl = ad.sub(bgl, backcast)
        return StackOutput(ad.add_n(forecasts), forecasts, backcasts, inputs)

    def loss(self, output: StackOutput, labels: np.ndarray) -> Tensor:
        """Prediction MSE plus per-block cumulative-forecast and backcast terms."""
        target = ad.constant(labels)
        total = ad.mse_loss(output.prediction, target)
        n = len(self.blocks)
        lam_f, lam_c = self.config.lambda_forecast, self.config.lambda_backcast
        if lam_f > 0:
            cumulative = None
            terms = []
            for forecast in output.forecasts:
                cumulative = forecast if cumulative is None \
                    else ad.add(cumulative, forecast)
                terms.append(ad.mse_loss(cumulative, target))
            total = ad.add(total, ad.scale(ad.add_n(terms), lam_f / n))
        if lam_c > 0:
            # targets stay live graph tensors: gradients flow through the
            # residual chain on both sides of each per-block MSE
            terms = [ad.mse_loss(backcast, block_in)
                     for backcast, block_in
                     in zip(output.backcasts, output.block_input_bgl)]
            total = ad.add(total, ad.scale(ad.add_n(terms), lam_c / n))
        return total

    def predict_scaled(self, batch: EncodedBatch) -> np.ndarray:
        with ad.no_grad():
            return self.forward_batch(batch, train_mode=False).prediction.data

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: np.array(p.data) for name, p in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            if arrays[name].shape != p.data.shape:
                raise ShapeError(
                    f"tensor {name}: checkpoint shape {arrays[name].shape} "
                    f"!= model shape {p.data.shape}")
            p.data = np.array(arrays[name])


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"GRCKPT1\n"
CHECKPOINT_VERSION = 1


@dataclass
class ModelCheckpoint:
    """Everything needed to serve a trained model, self-contained."""

    config: ModelConfig
    subject_id: str
    seed: int
    scaling: ScalingParams
    tod_model: BaselineModel
    weights: dict[str, np.ndarray]
    val_mae: float | None = None
    format_version: int = CHECKPOINT_VERSION

    @property
    def checkpoint_id(self) -> str:
        return (f"{self.config.scenario.value}_{self.config.example_class.value}"
                f"_{self.config.architecture}_{self.subject_id}_s{self.seed}")

    def build_stack(self) -> ResidualStack:
        stack = ResidualStack(self.config, self.seed)
        stack.load_state(self.weights)
        return stack


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    """Header JSON (UTF-8) plus little-endian float64 tensors in header order."""
    names = sorted(ckpt.weights)
    header = {
        "format_version": ckpt.format_version,
        "config": ckpt.config.to_dict(),
        "subject_id": ckpt.subject_id,
        "seed": ckpt.seed,
        "val_mae": ckpt.val_mae,
        "scaling": ckpt.scaling.to_dict(),
        "tod": ckpt.tod_model.to_dict(),
        "tensors": [{"name": n, "shape": list(ckpt.weights[n].shape)}
                    for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(ckpt.weights[name].astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header["format_version"] != CHECKPOINT_VERSION:
            raise ConfigError(
                f"{path}: unsupported checkpoint version "
                f"{header['format_version']}")
        weights = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ConfigError(f"{path}: truncated tensor {spec['name']}")
            weights[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return ModelCheckpoint(
        config=ModelConfig.from_dict(header["config"]),
        subject_id=header["subject_id"],
        seed=header["seed"],
        scaling=ScalingParams.from_dict(header["scaling"]),
        tod_model=BaselineModel.from_dict(header["tod"]),
        weights=weights,
        val_mae=header.get("val_mae"),
        format_version=header["format_version"],
    )


# -- inference ----------------------------------------------------------------

@dataclass
class RecommendQuery:
    """A what-if question against a trained checkpoint, in natural units.

    ``event_time`` is the clock position of the proposed action (t+10),
    in minutes; only its minute-of-day matters, for the ToD average.
    """

    history_bgl: np.ndarray
    history_carbs: np.ndarray
    history_bolus: np.ndarray
    history_basal: np.ndarray
    tau: int
    target_bgl: float
    event_time: int = 0
    planned_carbs: float | None = None


@dataclass
class Recommendation:
    value: float            # grams or units, clamped at 0
    raw_value: float        # unclamped model output
    clamped: bool
    unit: str
    per_block: list[float]  # natural-unit contributions, sum to value pre-clamp


def predict(ckpt: ModelCheckpoint, query: RecommendQuery,
            stack: ResidualStack | None = None) -> Recommendation:
    """Answer a what-if query; negative raw outputs clamp to 0 with a flag.

    The future event channels are all zero (the what-if mirrors an
    inertial situation and the label event is always masked anyway)
    except basal, which persists the last observed rate.
    """
    if query.tau not in HORIZONS:
        raise QueryError(
            f"horizon {query.tau} not in {{30..90 step 5}}")
    arrays = [np.asarray(a, dtype=np.float64) for a in
              (query.history_bgl, query.history_carbs, query.history_bolus,
               query.history_basal)]
    for arr in arrays:
        if arr.shape != (HISTORY_STEPS,):
            raise QueryError(
                f"history channels must have exactly {HISTORY_STEPS} steps, "
                f"got {arr.shape}")
        if np.isnan(arr).any():
            raise QueryError("history contains missing values")
    if stack is None:
        stack = ckpt.build_stack()
    scenario = ckpt.config.scenario
    scaling = ckpt.scaling
    tod_average = predict_at(ckpt.tod_model, query.event_time)
    steps = (10 + query.tau) // GRID_MINUTES

    bgl = scaling.scale_array("bgl", arrays[0])[None, :]
    events = np.stack([
        scaling.scale_array("carbs", arrays[1]),
        scaling.scale_array("bolus", arrays[2]),
        scaling.scale_array("basal", arrays[3]),
    ], axis=1)[None, :, :]
    future = np.zeros((1, steps, 3))
    future[0, :, 2] = scaling.scale_value("basal", float(arrays[3][-1]))
    features = encode_features(scenario, scaling, query.tau, query.target_bgl,
                               tod_average, query.planned_carbs)[None, :]
    batch = EncodedBatch(query.tau, bgl, events, future, features,
                         np.zeros((1, 1)))
    with ad.no_grad():
        out = stack.forward_batch(batch, train_mode=False)
    lo, hi = scaling.channels[scenario.label_channel]
    raw = float(out.prediction.data[0, 0]) * (hi - lo) + lo
    span = hi - lo
    n = len(out.forecasts)
    per_block = [float(f.data[0, 0]) * span + lo / n for f in out.forecasts]
    clamped = raw < 0
    return Recommendation(value=max(0.0, raw), raw_value=raw, clamped=clamped,
                          unit=scenario.unit, per_block=per_block)
