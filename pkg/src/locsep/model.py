"""Dense-UNet-style complex spectral mapping separator and its training loop.

The network maps stacked multichannel spectrogram features to 2N output
planes, read as the real and imaginary parts of N complex ratio masks. Each
mask is multiplied into the reference-mic mixture spectrogram.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .acoustics import geometry_truth
from .criteria import Criterion, CriterionReport, lbt_assign, loss_ri_mag, pit_assign
from .signals import DEFAULT_STFT, apply_cirm, stft

CHECKPOINT_VERSION = 1
MAG_EPS = 1e-12


@dataclass(frozen=True)
class SeparatorConfig:
    """Topology knobs. Full scale is depth 4, 9 blocks, 5 convs, 64 channels."""

    n_speakers: int = 2
    n_mics: int = 7
    depth: int = 2
    n_blocks: int = 3
    convs_per_block: int = 2
    channels: int = 8
    n_bins: int = DEFAULT_STFT.n_bins
    features: str = "phase_aligned"

    def __post_init__(self):
        if self.n_blocks % 2 == 0 or not 1 <= self.n_blocks <= 2 * self.depth + 1:
            raise ValueError("n_blocks must be odd and at most 2 * depth + 1")
        if self.convs_per_block < 1:
            raise ValueError("convs_per_block must be >= 1")
        if self.features not in ("raw", "phase_aligned"):
            raise ValueError(f"unknown feature mode {self.features!r}")

    @classmethod
    def full_scale(cls, n_speakers: int = 2) -> "SeparatorConfig":
        return cls(n_speakers=n_speakers, depth=4, n_blocks=9, convs_per_block=5, channels=64)

    @property
    def in_channels(self) -> int:
        return 2 * self.n_mics

    @property
    def out_channels(self) -> int:
        return 2 * self.n_speakers

    @property
    def multiple(self) -> int:
        return 2**self.depth

    def padded_bins(self) -> int:
        return -(-self.n_bins // self.multiple) * self.multiple

    def block_levels(self) -> set:
        """UNet levels (0 = full resolution, depth = bottleneck) that hold dense blocks."""
        side = (self.n_blocks - 1) // 2
        return set(range(self.depth - side, self.depth)) | {self.depth}


def mixture_features(spectra, mode: str = "phase_aligned") -> np.ndarray:
    """Network input planes ``(2 * n_mics, T, F)`` from ``(n_mics, T, F)`` spectra.

    ``raw`` stacks real and imaginary parts scaled by the reference RMS.
    ``phase_aligned`` rotates every channel by the reference phase, so the
    planes carry inter-channel phase differences as unit phasors; the
    reference slot carries its standardized log-magnitude instead.
    """
    Y = np.asarray(spectra)
    if mode == "raw":
        scale = np.sqrt(np.mean(np.abs(Y[0]) ** 2)) + 1e-8
        Z = Y / scale
        return np.concatenate([Z.real, Z.imag], axis=0)
    ref = Y[0]
    rot = np.conj(ref) / (np.abs(ref) + 1e-8)
    Z = Y * rot[None] / (np.abs(Y) + 1e-8)
    logmag = np.log(np.abs(ref) + 1e-5)
    Z[0] = (logmag - logmag.mean()) / (logmag.std() + 1e-8)
    return np.concatenate([Z.real, Z.imag], axis=0)


def _reflect_pad(x, multiple):
    T, F = x.shape[-2:]
    pt = (-T) % multiple
    pf = (-F) % multiple
    mode_t = "reflect" if T > pt else "symmetric"
    mode_f = "reflect" if F > pf else "symmetric"
    x = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(0, pt), (0, 0)], mode=mode_t)
    x = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(0, pf)], mode=mode_f)
    return x


class DenseUNet:
    """Parameters plus a recorded forward pass.

    Dense blocks sit at the deepest levels; levels without a block use a
    single 3x3 convolution. Inside a block every layer sees the
    concatenation of the block input and all earlier layer outputs; the
    middle layer is a 1x1 convolution followed by a learned frequency
    mapping across all bins of that level.
    """

    def __init__(self, config: SeparatorConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params: dict[str, ag.Tensor] = {}
        C = config.channels
        self._conv("in", config.in_channels, C, 3, rng)
        blocks = config.block_levels()
        bins = config.padded_bins()
        for level in range(config.depth + 1):
            f_level = bins // 2**level
            names = ["enc"] if level == config.depth else ["enc", "dec"]
            for side in names:
                prefix = f"{side}{level}"
                if side == "dec":
                    self._conv(f"{prefix}.merge", 2 * C, C, 1, rng)
                if level in blocks:
                    self._dense_block(prefix, C, f_level, rng)
                else:
                    self._conv(f"{prefix}.conv", C, C, 3, rng)
        self._conv("out", C, config.out_channels, 1, rng, zero=True)

    def _conv(self, name, cin, cout, k, rng, zero=False):
        if zero:
            w = np.zeros((cout, cin, k, k))
        else:
            bound = np.sqrt(3.0 / (cin * k * k))
            w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        self.params[f"{name}.w"] = ag.parameter(w, f"{name}.w")
        self.params[f"{name}.b"] = ag.parameter(np.zeros(cout), f"{name}.b")

    def _dense_block(self, prefix, C, n_bins, rng):
        n = self.config.convs_per_block
        mid = n // 2
        for i in range(n):
            cin = C * (i + 1)
            if i == mid:
                self._conv(f"{prefix}.l{i}", cin, C, 1, rng)
                self.params[f"{prefix}.l{i}.fmap"] = ag.parameter(np.eye(n_bins), f"{prefix}.l{i}.fmap")
                self.params[f"{prefix}.l{i}.fbias"] = ag.parameter(np.zeros(n_bins), f"{prefix}.l{i}.fbias")
            else:
                self._conv(f"{prefix}.l{i}", cin, C, 3, rng)

    def _apply_conv(self, name, x):
        return ag.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def _apply_block(self, prefix, x):
        feats = [x]
        mid = self.config.convs_per_block // 2
        for i in range(self.config.convs_per_block):
            inp = feats[0] if len(feats) == 1 else ag.concat(feats, axis=1)
            h = self._apply_conv(f"{prefix}.l{i}", inp)
            if i == mid:
                h = frequency_mapping(h, self.params[f"{prefix}.l{i}.fmap"], self.params[f"{prefix}.l{i}.fbias"])
            else:
                h = ag.elu(h)
            feats.append(h)
        return feats[-1]

    def _stage(self, prefix, level, x):
        if level in self.config.block_levels():
            return self._apply_block(prefix, x)
        return ag.elu(self._apply_conv(f"{prefix}.conv", x))

    def forward(self, features) -> ag.Tensor:
        """Raw mask planes ``(1, 2N, T, F)`` for input planes ``(1, 2M, T, F)``.

        T and F must already be multiples of ``2**depth``.
        """
        cfg = self.config
        x = features if isinstance(features, ag.Tensor) else ag.Tensor(features)
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected (1, {cfg.in_channels}, T, F) input, got {x.shape}")
        if x.shape[2] % cfg.multiple or x.shape[3] != cfg.padded_bins():
            raise ValueError(f"T must be a multiple of {cfg.multiple} and F equal {cfg.padded_bins()}")
        h = ag.elu(self._apply_conv("in", x))
        skips = []
        for level in range(cfg.depth):
            h = self._stage(f"enc{level}", level, h)
            skips.append(h)
            h = ag.avg_pool2(h)
        h = self._stage(f"enc{cfg.depth}", cfg.depth, h)
        for level in reversed(range(cfg.depth)):
            h = ag.upsample2(h)
            h = ag.elu(self._apply_conv(f"dec{level}.merge", ag.concat([h, skips[level]], axis=1)))
            h = self._stage(f"dec{level}", level, h)
        return self._apply_conv("out", h)

    def masks(self, spectra) -> tuple[ag.Tensor, ag.Tensor]:
        """Real and imaginary mask tensors, each ``(N, T, F)``, for ``(n_mics, T, F)`` spectra."""
        spectra = np.asarray(spectra)
        if spectra.ndim != 3 or spectra.shape[0] != self.config.n_mics or spectra.shape[2] != self.config.n_bins:
            raise ValueError(f"expected ({self.config.n_mics}, T, {self.config.n_bins}) spectra, got {spectra.shape}")
        T, F = spectra.shape[1:]
        feats = _reflect_pad(mixture_features(spectra, self.config.features), self.config.multiple)
        out = self.forward(feats[None])
        N = self.config.n_speakers
        return out[0, :N, :T, :F], out[0, N:, :T, :F]

    def predict_masks(self, spectra) -> np.ndarray:
        re, im = self.masks(spectra)
        return re.data + 1j * im.data

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def frequency_mapping(x, weight, bias=None) -> ag.Tensor:
    """Learned linear mixing of all frequency bins (last axis), followed by ELU."""
    return ag.elu(ag.freq_linear(x, weight, bias))


def separated_spectra(mask_re, mask_im, mixture_ref):
    """``(M_r + j M_i) * Y`` as a pair of real tensors."""
    yr, yi = mixture_ref.real, mixture_ref.imag
    return mask_re * yr - mask_im * yi, mask_re * yi + mask_im * yr


def ag_loss_ri_mag(est_re, est_im, target) -> ag.Tensor:
    """Differentiable twin of :func:`locsep.criteria.loss_ri_mag`."""
    tr, ti = target.real, target.imag
    mag = ag.sqrt(ag.square(est_re) + ag.square(est_im), eps=MAG_EPS)
    return (
        ag.mean(ag.abs_(est_re - tr))
        + ag.mean(ag.abs_(est_im - ti))
        + ag.mean(ag.abs_(mag - np.abs(target)))
    )


class Adam:
    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * p.grad
            self.v[k] = b2 * self.v[k] + (1 - b2) * p.grad**2
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainState:
    model: DenseUNet
    optimizer: Adam
    criterion: Criterion
    seed: int = 0
    step: int = 0
    history: list = field(default_factory=list)


def new_train_state(config: SeparatorConfig, criterion=Criterion.AZIMUTH, seed: int = 0, lr: float = 1e-3) -> TrainState:
    model = DenseUNet(config, seed)
    return TrainState(model, Adam(model.params, lr=lr), Criterion(criterion), seed)


def _assign(criterion, est_values, targets, scenario) -> CriterionReport:
    if criterion == Criterion.PIT:
        return pit_assign(est_values, targets)
    by_az, by_dist = geometry_truth(scenario)
    order = by_az if criterion == Criterion.AZIMUTH else by_dist
    return lbt_assign(est_values, targets, order, criterion=criterion)


def example_loss(model: DenseUNet, example, criterion, cfg=DEFAULT_STFT):
    """Differentiable criterion loss for one example plus its assignment report."""
    criterion = Criterion(criterion)
    if criterion == Criterion.COMBINED:
        raise ValueError("the combined criterion selects trained models at inference; train azimuth or distance")
    if example.targets.shape[0] != model.config.n_speakers:
        raise ValueError(f"example has {example.targets.shape[0]} speakers, model expects {model.config.n_speakers}")
    Y = stft(example.mixture, cfg)
    S = stft(example.targets, cfg)
    m_re, m_im = model.masks(Y)
    est_re, est_im = separated_spectra(m_re, m_im, Y[0])
    N = model.config.n_speakers
    est_values = [est_re.data[n] + 1j * est_im.data[n] for n in range(N)]
    report = _assign(criterion, est_values, list(S), example.scenario)
    pairing = report.assignment.pairing
    total = None
    for n in range(N):
        term = ag_loss_ri_mag(est_re[n], est_im[n], S[pairing[n]])
        total = term if total is None else total + term
    return total * (1.0 / N), report


def train_step(state: TrainState, batch, criterion=None) -> tuple[TrainState, list]:
    """One optimizer update on ``batch`` (a list of MixtureExample).

    The loss is averaged over the batch. Returns the state and the
    per-example CriterionReports.
    """
    criterion = Criterion(criterion or state.criterion)
    state.model.zero_grad()
    reports = []
    scale = 1.0 / len(batch)
    for example in batch:
        loss, report = example_loss(state.model, example, criterion)
        (loss * scale).backward()
        reports.append(report)
    state.optimizer.step()
    state.step += 1
    state.history.append(float(np.mean([r.total_loss for r in reports])))
    return state, reports


def dataset_loss(model: DenseUNet, examples, criterion) -> float:
    """Mean criterion loss over ``examples`` without recording gradients."""
    return float(np.mean([_report(model, ex, criterion).total_loss for ex in examples]))


def _report(model, example, criterion, cfg=DEFAULT_STFT):
    Y = stft(example.mixture, cfg)
    S_hat = np.stack([apply_cirm(m, Y[0]) for m in model.predict_masks(Y)])
    return _assign(Criterion(criterion), list(S_hat), list(stft(example.targets, cfg)), example.scenario)


def train_loop(state: TrainState, examples, steps: int, batch_size: int = 8, seed: int = 0, on_step=None) -> TrainState:
    """Run ``steps`` updates on batches drawn without replacement from ``examples``.

    Batch order depends only on ``seed``. ``on_step(step, loss, reports)``
    is called after every update.
    """
    if not examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(seed)
    batch_size = min(batch_size, len(examples))
    for _ in range(steps):
        idx = rng.choice(len(examples), size=batch_size, replace=False)
        state, reports = train_step(state, [examples[i] for i in idx])
        if on_step is not None:
            on_step(state.step, state.history[-1], reports)
    return state


def separate(model: DenseUNet, mixture, cfg=DEFAULT_STFT) -> tuple[np.ndarray, np.ndarray]:
    """Separated reference-mic spectrograms ``(N, T, F)`` and the mixture spectra."""
    Y = stft(mixture, cfg)
    masks = model.predict_masks(Y)
    return np.stack([apply_cirm(m, Y[0]) for m in masks]), Y


def save_checkpoint(path, state: TrainState, metadata: dict | None = None) -> None:
    """``.npz`` with a JSON header (version, config, step, seed) plus parameters and Adam moments."""
    header = {
        **(metadata or {}),
        "format": "locsep-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(state.model.config),
        "criterion": state.criterion.value,
        "step": state.step,
        "seed": state.seed,
        "adam": {"lr": state.optimizer.lr, "betas": list(state.optimizer.betas), "t": state.optimizer.step_count},
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for k, p in state.model.params.items():
        arrays[f"param/{k}"] = p.data
        arrays[f"adam_m/{k}"] = state.optimizer.m[k]
        arrays[f"adam_v/{k}"] = state.optimizer.v[k]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint_header(path) -> dict:
    with np.load(path) as z:
        if "__header__" not in z:
            raise ValueError(f"{path} is not a locsep checkpoint")
        return json.loads(bytes(z["__header__"]).decode())


def load_checkpoint(path) -> TrainState:
    with np.load(path) as z:
        if "__header__" not in z:
            raise ValueError(f"{path} is not a locsep checkpoint")
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format") != "locsep-checkpoint":
            raise ValueError(f"{path} is not a locsep checkpoint")
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        config = SeparatorConfig(**header["config"])
        state = new_train_state(config, header["criterion"], header["seed"], header["adam"]["lr"])
        state.optimizer.betas = tuple(header["adam"]["betas"])
        state.optimizer.step_count = header["adam"]["t"]
        state.step = header["step"]
        for k, p in state.model.params.items():
            p.data = z[f"param/{k}"].copy()
            state.optimizer.m[k] = z[f"adam_m/{k}"].copy()
            state.optimizer.v[k] = z[f"adam_v/{k}"].copy()
    return state
