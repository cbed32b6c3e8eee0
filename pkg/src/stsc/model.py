"""Cross-connected auto-encoder model.

Two convolutional auto-encoders are trained separately: one reconstructs
the (timesteps, sensors, 4) input tensors ("X"), the other the
(horizon, 1, 1) future-speed vectors ("Y"). A small mapper network
(conv -> flatten -> dense) then bridges the X latent space to the Y
latent space, and the predictor is the composition

    decoder_Y ( mapper ( encoder_X (x) ) )

trained in two phases: first the mapper alone with both pre-trained ends
frozen, then the whole network fine-tuned end to end.

Checkpoints are single files: an 8-byte magic ``STSC0001``, a 4-byte
little-endian header length, a UTF-8 JSON header (training phase, model
spec, tensor shapes, normalization parameters, parameter manifest with
byte offsets), then the parameters as little-endian float32 blobs in
manifest order.
"""

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from ._util import atomic_write_bytes
from .dataset import NormalizationParams, denormalize
from .errors import (
    BatchTooSmallError,
    CheckpointError,
    ConfigError,
    DimensionError,
    DivergenceError,
    StateError,
)
from .nn.layers import (
    Activation,
    AvgPool,
    BatchNorm,
    Conv2D,
    ConvTranspose2D,
    Dense,
    Dropout,
    Flatten,
    Reshape,
    ResidualBlock,
    Sequential,
    Upsample,
)
from .nn.losses import mse
from .nn.optim import Adam

log = logging.getLogger("stsc.model")

CHECKPOINT_MAGIC = b"STSC0001"

PHASE_PRETRAIN_X = "pretrain-x"
PHASE_PRETRAIN_Y = "pretrain-y"
PHASE_CROSS = "cross"
PHASE_FINETUNED = "finetuned"
PHASES = (PHASE_PRETRAIN_X, PHASE_PRETRAIN_Y, PHASE_CROSS, PHASE_FINETUNED)

# Each encoder stage halves both spatial dimensions with k=3, s=2, p=1.
_DOWN_STAGES = 3
_POOL_STAGES = 2


def _down(size):
    """Output size of one k=3, s=2, p=1 convolution."""
    return (size - 1) // 2 + 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters; the defaults match the reference sizes
    (input 60x10x4 -> latent 8x2x64; horizon 12x1x1 -> latent 3x1x16;
    mapper output 48)."""

    input_steps: int = 60
    input_sensors: int = 10
    input_channels: int = 4
    horizon_steps: int = 12
    x_widths: tuple = (16, 32, 64)
    residual_blocks: int = 3
    y_widths: tuple = (8, 16, 16)
    mapper_channels: int = 16
    dropout_prob: float = 0.2

    def validate(self):
        for name in ("input_steps", "input_sensors", "input_channels",
                     "horizon_steps", "mapper_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("x_widths", "y_widths"):
            widths = getattr(self, name)
            if len(widths) != _DOWN_STAGES:
                raise ConfigError(f"{name} needs exactly {_DOWN_STAGES} entries")
            if any(int(w) < 1 for w in widths):
                raise ConfigError(f"{name} entries must be positive")
        if self.residual_blocks < 0:
            raise ConfigError("residual_blocks must be non-negative")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError("dropout_prob must lie in [0, 1)")
        divisor = 2 ** _POOL_STAGES
        if self.horizon_steps % divisor:
            raise ConfigError(
                f"horizon_steps must be divisible by {divisor} for the "
                f"{_POOL_STAGES} (2,1) poolings, got {self.horizon_steps}")
        return self

    def x_trace(self):
        """Spatial sizes through the X encoder, input first, latent last."""
        sizes = [(self.input_steps, self.input_sensors)]
        for _ in range(_DOWN_STAGES):
            h, w = sizes[-1]
            sizes.append((_down(h), _down(w)))
        return sizes

    @property
    def x_latent_shape(self):
        h, w = self.x_trace()[-1]
        return (h, w, self.x_widths[-1])

    @property
    def y_latent_shape(self):
        return (self.horizon_steps // 2 ** _POOL_STAGES, 1, self.y_widths[-1])

    @property
    def input_shape(self):
        return (self.input_steps, self.input_sensors, self.input_channels)

    @property
    def output_shape(self):
        return (self.horizon_steps, 1, 1)

    def to_dict(self):
        raw = dataclasses.asdict(self)
        raw["x_widths"] = list(self.x_widths)
        raw["y_widths"] = list(self.y_widths)
        return raw

    @classmethod
    def from_dict(cls, raw):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - fields)
        if unknown:
            raise ConfigError(f"unknown model spec keys: {unknown}")
        values = dict(raw)
        for name in ("x_widths", "y_widths"):
            if name in values:
                values[name] = tuple(int(w) for w in values[name])
        return cls(**values).validate()


def _output_padding(target, source):
    """Output padding so a k=3, s=2, p=1 transposed conv maps source -> target."""
    base = 2 * source - 1
    pad = target - base
    if not 0 <= pad < 2:
        raise ConfigError(
            f"cannot invert encoder trace {target} -> {source} with a "
            f"stride-2 transposed convolution")
    return pad


def build_dae_x(spec=None, *, rng):
    """Auto-encoder over input tensors (n, steps, sensors, channels).

    Encoder: three stride-2 conv+BN+tanh stages, then residual blocks and
    dropout. Decoder mirrors it with transposed convolutions whose output
    paddings are derived from the encoder trace, and ends in a sigmoid so
    reconstructions stay inside [0, 1]. Children are named ``encoder`` and
    ``decoder``.
    """
    spec = (spec or ModelSpec()).validate()
    trace = spec.x_trace()
    channels = [spec.input_channels, *spec.x_widths]

    enc_layers, enc_names = [], []
    for i in range(_DOWN_STAGES):
        enc_layers += [
            Conv2D(channels[i], channels[i + 1], kernel=3, stride=2,
                   padding=1, rng=rng),
            BatchNorm(channels[i + 1]),
            Activation("tanh"),
        ]
        enc_names += [f"conv{i + 1}", f"bn{i + 1}", f"act{i + 1}"]
    for i in range(spec.residual_blocks):
        enc_layers.append(ResidualBlock(spec.x_widths[-1], rng=rng))
        enc_names.append(f"res{i + 1}")
    enc_layers.append(Dropout(spec.dropout_prob))
    enc_names.append("drop")
    encoder = Sequential(enc_layers, names=enc_names)

    dec_layers, dec_names = [], []
    for i in range(spec.residual_blocks):
        dec_layers.append(ResidualBlock(spec.x_widths[-1], rng=rng))
        dec_names.append(f"res{i + 1}")
    for i in range(_DOWN_STAGES, 0, -1):
        stage = _DOWN_STAGES - i + 1
        (th, tw), (sh, sw) = trace[i - 1], trace[i]
        out_pad = (_output_padding(th, sh), _output_padding(tw, sw))
        if stage == _DOWN_STAGES:
            dec_layers.append(Dropout(spec.dropout_prob))
            dec_names.append("drop")
        dec_layers.append(
            ConvTranspose2D(channels[i], channels[i - 1], kernel=3, stride=2,
                            padding=1, output_padding=out_pad, rng=rng))
        dec_names.append(f"tconv{stage}")
        if stage < _DOWN_STAGES:
            dec_layers += [BatchNorm(channels[i - 1]), Activation("tanh")]
            dec_names += [f"bn{stage}", f"act{stage}"]
    dec_layers.append(Activation("sigmoid"))
    dec_names.append("out")
    decoder = Sequential(dec_layers, names=dec_names)

    # Build-time shape-inversion assertion: walking the derived output
    # paddings back up must land exactly on the input size.
    rebuilt = trace[-1]
    for i in range(_DOWN_STAGES, 0, -1):
        (th, tw), (sh, sw) = trace[i - 1], trace[i]
        rebuilt = (2 * rebuilt[0] - 1 + _output_padding(th, sh),
                   2 * rebuilt[1] - 1 + _output_padding(tw, sw))
    if rebuilt != trace[0]:
        raise ConfigError(
            f"decoder trace {rebuilt} does not invert encoder input {trace[0]}")

    return Sequential([encoder, decoder], names=["encoder", "decoder"])


def build_dae_y(spec=None, *, rng):
    """Auto-encoder over future-speed vectors viewed as (n, horizon, 1, 1)
    single-channel images.

    Encoder: conv+BN+tanh stages with two (2, 1) average poolings and
    dropout after each pool. Decoder mirrors with (2, 1) upsampling and a
    sigmoid head. Children are named ``encoder`` and ``decoder``.
    """
    spec = (spec or ModelSpec()).validate()
    w1, w2, w3 = spec.y_widths

    encoder = Sequential(
        [
            Conv2D(1, w1, kernel=3, stride=1, padding=1, rng=rng),
            BatchNorm(w1),
            Activation("tanh"),
            AvgPool((2, 1)),
            Dropout(spec.dropout_prob),
            Conv2D(w1, w2, kernel=3, stride=1, padding=1, rng=rng),
            BatchNorm(w2),
            Activation("tanh"),
            AvgPool((2, 1)),
            Dropout(spec.dropout_prob),
            Conv2D(w2, w3, kernel=3, stride=1, padding=1, rng=rng),
            BatchNorm(w3),
            Activation("tanh"),
        ],
        names=["conv1", "bn1", "act1", "pool1", "drop1",
               "conv2", "bn2", "act2", "pool2", "drop2",
               "conv3", "bn3", "act3"],
    )
    decoder = Sequential(
        [
            ConvTranspose2D(w3, w2, kernel=3, stride=1, padding=1, rng=rng),
            BatchNorm(w2),
            Activation("tanh"),
            Upsample((2, 1)),
            Dropout(spec.dropout_prob),
            ConvTranspose2D(w2, w1, kernel=3, stride=1, padding=1, rng=rng),
            BatchNorm(w1),
            Activation("tanh"),
            Upsample((2, 1)),
            Dropout(spec.dropout_prob),
            ConvTranspose2D(w1, 1, kernel=3, stride=1, padding=1, rng=rng),
            Activation("sigmoid"),
        ],
        names=["tconv1", "bn1", "act1", "up1", "drop1",
               "tconv2", "bn2", "act2", "up2", "drop2",
               "tconv3", "out"],
    )
    return Sequential([encoder, decoder], names=["encoder", "decoder"])


def build_mapper(spec=None, *, rng):
    """Latent bridge: conv (k=3, s=1, pad 2) -> flatten -> dense -> reshape
    from the X latent shape to the Y latent shape."""
    spec = (spec or ModelSpec()).validate()
    zh, zw, zc = spec.x_latent_shape
    yh, yw, yc = spec.y_latent_shape
    conv = Conv2D(zc, spec.mapper_channels, kernel=3, stride=1, padding=2,
                  rng=rng)
    ch, cw = conv.output_size(zh, zw)
    flat = ch * cw * spec.mapper_channels
    return Sequential(
        [conv, Flatten(), Dense(flat, yh * yw * yc, rng=rng),
         Reshape((yh, yw, yc))],
        names=["conv", "flatten", "dense", "reshape"],
    )


def assemble_cross(dae_x, dae_y, mapper, spec):
    """Compose decoder_Y . mapper . encoder_X into the predictor network.

    The parts are shared, not copied: fine-tuning the assembled network
    updates the original auto-encoder halves. A zero forward pass verifies
    the latent shapes are compatible.
    """
    spec.validate()
    net = Sequential([dae_x["encoder"], mapper, dae_y["decoder"]],
                     names=["encoder", "mapper", "decoder"])
    probe = np.zeros((2, *spec.input_shape))
    try:
        out = net.forward(probe, training=False)
    except (DimensionError, ValueError) as exc:
        raise ConfigError(f"incompatible component shapes: {exc}") from exc
    if out.shape != (2, *spec.output_shape):
        raise ConfigError(
            f"assembled network maps {spec.input_shape} to {out.shape[1:]}, "
            f"expected {spec.output_shape}")
    return net


def assemble_from_checkpoints(ckpt_x, ckpt_y, *, rng, allow_untrained=False):
    """Build the cross-connected predictor from two pre-training checkpoints.

    Returns ``(network, spec, norm)`` with a freshly initialized mapper.
    Unless ``allow_untrained`` is set, the checkpoints must carry the
    ``pretrain-x`` and ``pretrain-y`` phase tags.
    """
    if not allow_untrained:
        if ckpt_x.phase != PHASE_PRETRAIN_X:
            raise StateError(
                f"expected a {PHASE_PRETRAIN_X!r} checkpoint, got "
                f"{ckpt_x.phase!r} (pass allow_untrained to override)")
        if ckpt_y.phase != PHASE_PRETRAIN_Y:
            raise StateError(
                f"expected a {PHASE_PRETRAIN_Y!r} checkpoint, got "
                f"{ckpt_y.phase!r} (pass allow_untrained to override)")
    if ckpt_x.spec != ckpt_y.spec:
        raise ConfigError("the two checkpoints disagree on the model spec")
    if (ckpt_x.norm is not None and ckpt_y.norm is not None
            and ckpt_x.norm != ckpt_y.norm):
        raise ConfigError(
            "the two checkpoints disagree on normalization parameters")
    spec = ckpt_x.spec
    dae_x = build_dae_x(spec, rng=rng)
    dae_y = build_dae_y(spec, rng=rng)
    load_arrays(dae_x, ckpt_x.arrays)
    load_arrays(dae_y, ckpt_y.arrays)
    mapper = build_mapper(spec, rng=rng)
    net = assemble_cross(dae_x, dae_y, mapper, spec)
    return net, spec, ckpt_x.norm if ckpt_x.norm is not None else ckpt_y.norm


def network_arrays(net):
    """All parameter and state arrays by dotted name (live references)."""
    arrays = {}
    for name, param, _ in net.named_params():
        arrays[name] = param
    for name, state in net.named_state():
        arrays[name] = state
    return arrays


def load_arrays(net, arrays):
    """Copy ``arrays`` into the network's parameters and state, in place."""
    live = network_arrays(net)
    if set(live) != set(arrays):
        missing = sorted(set(live) - set(arrays))
        extra = sorted(set(arrays) - set(live))
        raise CheckpointError(
            f"parameter names do not match the network: "
            f"missing {missing or 'none'}, unexpected {extra or 'none'}")
    for name, target in live.items():
        source = np.asarray(arrays[name], dtype=np.float64)
        if source.shape != target.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {source.shape}, "
                f"network {target.shape}")
        target[...] = source


def _batch_indices(n, batch_size, rng):
    """Shuffled index batches; a trailing singleton is merged into the
    previous batch so batch normalization always sees at least 2 rows."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def train_network(net, inputs, targets, config, *, tag="train"):
    """Generic Adam training loop over (inputs, targets) pairs.

    Returns the per-epoch mean loss curve; raises ``DivergenceError`` with
    the 1-based epoch index if a non-finite loss appears.
    """
    config.validate()
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    if n < 2:
        raise BatchTooSmallError(
            f"training needs at least 2 samples, got {n}")
    if config.epochs == 0:
        return []
    optimizer = Adam(list(net.trainable_params()),
                     learning_rate=config.learning_rate,
                     beta1=config.beta1, beta2=config.beta2,
                     epsilon=config.epsilon)
    rng = np.random.default_rng(config.rng_seed)
    curve = []
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx in _batch_indices(n, config.batch_size, rng):
            prediction = net.forward(inputs[idx], training=True, rng=rng)
            loss, grad = mse(prediction, targets[idx])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"{tag}: non-finite loss at epoch {epoch}", epoch=epoch)
            net.backward(grad)
            optimizer.step()
            total += loss * len(idx)
        curve.append(total / n)
        log.info("%s epoch %d/%d loss %.6g", tag, epoch, config.epochs,
                 curve[-1])
    return curve


def pretrain_dae(dae, data, config, *, tag="pretrain"):
    """Train an auto-encoder to reconstruct ``data`` (already in [0, 1]).

    ``data`` is (n, steps, sensors, channels) for the X auto-encoder or
    (n, horizon, 1, 1) for the Y one. Returns the per-epoch loss curve;
    zero configured epochs leave the network untouched.
    """
    data = np.asarray(data, dtype=np.float64)
    return train_network(dae, data, data, config, tag=tag)


@dataclass(frozen=True)
class PhasePlan:
    """Epoch budget for the two cross-training phases."""

    mapper_epochs: int = 30
    finetune_epochs: int = 20

    def validate(self):
        if self.mapper_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("phase epoch counts must be non-negative")
        return self


def train_cross(net, x, y, config, plan=None):
    """Train the assembled predictor on (x, y) pairs in two phases.

    Phase A updates only the mapper (both auto-encoder ends frozen, so
    their parameters and batch-norm statistics stay bitwise unchanged);
    phase B fine-tunes every parameter. Returns the two loss curves.
    """
    plan = (plan or PhasePlan()).validate()
    encoder, decoder = net["encoder"], net["decoder"]
    encoder.set_frozen(True)
    decoder.set_frozen(True)
    try:
        curve_a = train_network(
            net, x, y, dataclasses.replace(config, epochs=plan.mapper_epochs),
            tag="mapper")
    finally:
        encoder.set_frozen(False)
        decoder.set_frozen(False)
    curve_b = train_network(
        net, x, y, dataclasses.replace(config, epochs=plan.finetune_epochs),
        tag="finetune")
    return curve_a, curve_b


def predict(net, x, params, *, speed_range=(0.0, 120.0)):
    """Forward pass in evaluation mode, denormalized to mph.

    ``x`` is one sample (steps, sensors, channels) or a batch with a
    leading sample axis; the result is a (horizon,) vector or an
    (n, horizon) matrix accordingly, clamped to ``speed_range``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[np.newaxis]
    if x.ndim != 4:
        raise DimensionError(
            f"predict expects a 3-d sample or 4-d batch, got shape {x.shape}")
    try:
        out = net.forward(x, training=False)
    except ValueError as exc:
        raise DimensionError(f"input does not fit the network: {exc}") from exc
    out = out.reshape(out.shape[0], -1)
    speeds = denormalize(out, params)
    np.clip(speeds, speed_range[0], speed_range[1], out=speeds)
    return speeds[0] if single else speeds


@dataclass
class Checkpoint:
    """A deserialized checkpoint: phase tag, spec, arrays by name, and the
    normalization parameters (or None for pre-dataset experiments)."""

    phase: str
    spec: ModelSpec
    arrays: dict
    norm: object = None


def _phase_shapes(phase, spec):
    if phase == PHASE_PRETRAIN_X:
        return {"input": list(spec.input_shape), "output": list(spec.input_shape)}
    if phase == PHASE_PRETRAIN_Y:
        return {"input": list(spec.output_shape), "output": list(spec.output_shape)}
    return {"input": list(spec.input_shape), "output": list(spec.output_shape)}


def save_checkpoint(path, net, *, phase, spec, norm=None):
    """Serialize a network to ``path`` atomically (see module docstring)."""
    if phase not in PHASES:
        raise ConfigError(f"unknown training phase {phase!r}; expected one "
                          f"of {list(PHASES)}")
    spec.validate()
    arrays = network_arrays(net)
    manifest, blobs, offset = [], [], 0
    for name in sorted(arrays):
        blob = np.ascontiguousarray(arrays[name], dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arrays[name].shape),
                         "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "phase": phase,
        "spec": spec.to_dict(),
        "shapes": _phase_shapes(phase, spec),
        "norm": None if norm is None else {"minimum": norm.minimum,
                                           "maximum": norm.maximum},
        "manifest": manifest,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    atomic_write_bytes(path, CHECKPOINT_MAGIC
                       + struct.pack("<I", len(encoded))
                       + encoded + b"".join(blobs))


def load_checkpoint(path):
    """Parse a checkpoint file into a ``Checkpoint`` (arrays as float64)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 4:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a model checkpoint")
    header_start = len(CHECKPOINT_MAGIC) + 4
    (header_len,) = struct.unpack("<I", data[len(CHECKPOINT_MAGIC):header_start])
    if header_start + header_len > len(data):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[header_start:header_start + header_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    for key in ("phase", "spec", "manifest"):
        if key not in header:
            raise CheckpointError(f"{path}: header is missing {key!r}")
    phase = header["phase"]
    if phase not in PHASES:
        raise CheckpointError(f"{path}: unknown training phase {phase!r}")
    try:
        spec = ModelSpec.from_dict(header["spec"])
    except (ConfigError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad model spec: {exc}") from None
    payload = data[header_start + header_len:]
    arrays = {}
    for entry in header["manifest"]:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(
                f"{path}: malformed manifest entry: {exc}") from None
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if name in arrays:
            raise CheckpointError(f"{path}: duplicate parameter {name!r}")
        if nbytes != count * 4:
            raise CheckpointError(
                f"{path}: manifest size mismatch for {name!r}")
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated parameter data")
        arrays[name] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=offset,
        ).astype(np.float64).reshape(shape)
    norm = header.get("norm")
    if norm is not None:
        try:
            norm = NormalizationParams(minimum=float(norm["minimum"]),
                                       maximum=float(norm["maximum"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(
                f"{path}: bad normalization parameters: {exc}") from None
    return Checkpoint(phase=phase, spec=spec, arrays=arrays, norm=norm)


def build_network(phase, spec, *, rng):
    """Fresh network of the architecture a checkpoint phase refers to."""
    if phase == PHASE_PRETRAIN_X:
        return build_dae_x(spec, rng=rng)
    if phase == PHASE_PRETRAIN_Y:
        return build_dae_y(spec, rng=rng)
    if phase in (PHASE_CROSS, PHASE_FINETUNED):
        dae_x = build_dae_x(spec, rng=rng)
        dae_y = build_dae_y(spec, rng=rng)
        return assemble_cross(dae_x, dae_y, build_mapper(spec, rng=rng), spec)
    raise ConfigError(f"unknown training phase {phase!r}")


def load_model(path):
    """Rebuild the network stored in a checkpoint: ``(net, checkpoint)``."""
    ckpt = load_checkpoint(path)
    net = build_network(ckpt.phase, ckpt.spec, rng=np.random.default_rng(0))
    load_arrays(net, ckpt.arrays)
    return net, ckpt
