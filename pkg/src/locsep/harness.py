"""Experiment orchestration and the ``locsep`` command line.

Every command reads a JSON experiment config (``--config``), honours
``--seed`` and ``--out-dir``, and stamps the config hash and seed into each
file it writes. Failures exit nonzero with a one-line JSON error on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .acoustics import Scenario, MixtureExample, geometry_truth, scenario_rirs
from .criteria import (
    DEFAULT_THRESHOLD,
    MAX_PIT_SPEAKERS,
    Criterion,
    dynamic_select,
    lbt_assign,
    min_azimuth_gap,
    pit_assign,
)
from .data import DrySource, make_example
from .localization import build_steering_table, estimate_azimuths
from .metrics import eval_example
from .model import (
    SeparatorConfig,
    load_checkpoint,
    new_train_state,
    read_checkpoint_header,
    save_checkpoint,
    separate,
    train_loop,
)
from .signals import apply_cirm, ideal_cirm, istft, read_wav, stft, write_wav

MANIFEST_VERSION = 1
DEFAULT_GAP_BINS = (0.0, 20.0, 45.0, 90.0, 180.0)
PESQ_MARKER = "omitted"
REPORT_COLUMNS = ("criterion", "ESTOI", "PESQ", "SI-SNR", "SDR")
STAMP_COLUMNS = ("config_hash", "seed")


class HarnessError(Exception):
    """A user-facing failure reported as JSON on stderr."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on. Defaults are the pinned toy budget."""

    n_speakers: int = 2
    train_count: int = 200
    test_count: int = 50
    reverberant: bool = False
    azimuth_resolution: float = 5.0
    min_gap: float | None = None
    max_gap: float | None = None
    duration: float = 0.5  # training clips, seconds
    test_duration: float = 1.0  # long enough for ESTOI after silent-frame removal
    dry_dir: str | None = None
    seed: int = 0
    model: SeparatorConfig = field(default_factory=SeparatorConfig)
    criterion: str = "azimuth"
    steps: int = 200
    batch_size: int = 8
    lr: float = 2e-3
    scoring: str = "fixed"
    threshold: float = DEFAULT_THRESHOLD
    gap_bins: tuple = DEFAULT_GAP_BINS
    workers: int = 1

    def __post_init__(self):
        Criterion(self.criterion)
        if self.scoring not in ("fixed", "best-permutation"):
            raise HarnessError(f"unknown scoring {self.scoring!r}")
        if self.model.n_speakers != self.n_speakers:
            raise HarnessError(f"model expects {self.model.n_speakers} speakers, dataset has {self.n_speakers}")
        if min(self.train_count, self.test_count, self.steps) < 0 or self.batch_size < 1:
            raise HarnessError("counts, steps and batch size must be nonnegative")
        if list(self.gap_bins) != sorted(self.gap_bins) or len(self.gap_bins) < 2:
            raise HarnessError("gap_bins must be at least two increasing edges")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise HarnessError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        model = d.pop("model", {})
        model.setdefault("n_speakers", d.get("n_speakers", 2))
        if "gap_bins" in d:
            d["gap_bins"] = tuple(float(v) for v in d["gap_bins"])
        try:
            return cls(model=SeparatorConfig(**model), **d)
        except (TypeError, ValueError) as err:
            raise HarnessError(f"invalid config: {err}") from err

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as err:
            raise HarnessError(f"cannot read config {path}: {err}") from err

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gap_bins"] = list(self.gap_bins)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def stamp(self) -> dict:
        return {"config_hash": self.digest(), "seed": self.seed}


class RirCache:
    """RIRs on disk keyed by scenario digest, so repeated scenes are simulated once."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def __call__(self, scenario: Scenario) -> np.ndarray:
        path = self.directory / f"{scenario.digest()}.npy"
        if path.exists():
            return np.load(path)
        rirs = scenario_rirs(scenario)
        np.save(path, rirs)
        return rirs


# ---------------------------------------------------------------- datasets


def split_seeds(config: ExperimentConfig) -> dict:
    """Per-example seeds for the train and test splits, derived from the config seed."""
    ss = np.random.SeedSequence(config.seed)
    train, test = ss.spawn(2)
    return {
        "train": [int(s) for s in train.generate_state(config.train_count)] if config.train_count else [],
        "test": [int(s) for s in test.generate_state(config.test_count)] if config.test_count else [],
    }


def _example_kwargs(config: ExperimentConfig) -> dict:
    return dict(
        n_speakers=config.n_speakers,
        azimuth_resolution=config.azimuth_resolution,
        reverberant=config.reverberant,
        min_gap=config.min_gap,
        max_gap=config.max_gap,
    )


def _build(args):
    seed, kwargs, dry_dir, duration, cache_dir = args
    source = DrySource(dry_dir, duration)
    provider = RirCache(cache_dir) if cache_dir else None
    return make_example(seed, source=source, rir_provider=provider, **kwargs)


def build_examples(config: ExperimentConfig, seeds, cache_dir=None, duration=None) -> list[MixtureExample]:
    """Examples for ``seeds`` in seed order, optionally built in parallel."""
    duration = config.duration if duration is None else duration
    jobs = [(s, _example_kwargs(config), config.dry_dir, duration, cache_dir) for s in seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            return list(pool.map(_build, jobs))
    return [_build(j) for j in jobs]


def make_splits(config: ExperimentConfig, cache_dir=None) -> dict:
    """In-memory train/test examples (what ``simulate`` writes, without the WAV round trip)."""
    return {
        name: build_examples(config, seeds, cache_dir, _split_duration(config, name))
        for name, seeds in split_seeds(config).items()
    }


def _split_duration(config, split):
    return config.test_duration if split == "test" else config.duration


def write_manifest(path, examples, seeds, split: str, config: ExperimentConfig, wav_dir) -> None:
    """One JSON line per example; mixtures and targets go to float WAVs under ``wav_dir``."""
    wav_dir = Path(wav_dir)
    wav_dir.mkdir(parents=True, exist_ok=True)
    stamp = config.stamp()
    lines = []
    for i, (ex, seed) in enumerate(zip(examples, seeds)):
        ex_id = f"{split}-{i:05d}"
        mix_path = wav_dir / f"{ex_id}-mix.wav"
        tgt_path = wav_dir / f"{ex_id}-targets.wav"
        write_wav(mix_path, ex.mixture)
        write_wav(tgt_path, ex.targets)
        record = {
            "id": ex_id,
            "version": MANIFEST_VERSION,
            "split": split,
            "example_seed": seed,
            "mixture": mix_path.name,
            "targets": tgt_path.name,
            "scenario": ex.scenario.to_dict(),
            "utterances": list(ex.utterance_ids),
            "min_azimuth_gap": min_azimuth_gap(ex.scenario.azimuths) if ex.scenario.n_speakers > 1 else None,
            **stamp,
        }
        lines.append(json.dumps(record, sort_keys=True))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise HarnessError(f"cannot read manifest {path}: {err}") from err
    records = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            for key in ("id", "mixture", "targets", "scenario"):
                rec[key]
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise HarnessError(f"corrupt manifest {path} line {n}: {err}") from err
        records.append(rec)
    return records


def load_examples(path) -> tuple[list, list[MixtureExample]]:
    """Manifest records and the examples they describe (WAVs resolved next to the manifest)."""
    base = Path(path).parent
    records = read_manifest(path)
    examples = []
    for rec in records:
        wav_dir = base / rec.get("wav_dir", "wav")
        try:
            mixture = read_wav(wav_dir / rec["mixture"])
            targets = read_wav(wav_dir / rec["targets"])
            scenario = Scenario.from_dict(rec["scenario"])
        except (OSError, ValueError, KeyError, TypeError) as err:
            raise HarnessError(f"manifest entry {rec['id']}: {err}") from err
        examples.append(MixtureExample(mixture, targets, scenario, rec.get("utterances", [])))
    return records, examples


# ---------------------------------------------------------------- training


def train_model(config: ExperimentConfig, examples, on_step=None):
    """Fresh model trained under ``config``; returns the final TrainState."""
    for ex in examples:
        if ex.targets.shape[0] != config.n_speakers:
            raise HarnessError(f"example has {ex.targets.shape[0]} speakers, config expects {config.n_speakers}")
    criterion = Criterion(config.criterion)
    if criterion == Criterion.COMBINED:
        raise HarnessError("train azimuth and distance models separately; combined selection happens in eval")
    state = new_train_state(config.model, criterion, seed=config.seed, lr=config.lr)
    return train_loop(state, examples, config.steps, config.batch_size, seed=config.seed, on_step=on_step)


# ---------------------------------------------------------------- evaluation


def target_order(scenario: Scenario, criterion) -> tuple:
    """Speaker index each output is trained to produce under ``criterion``."""
    criterion = Criterion(criterion)
    if criterion == Criterion.PIT:
        return tuple(range(scenario.n_speakers))
    by_az, by_dist = geometry_truth(scenario)
    return by_dist if criterion == Criterion.DISTANCE else by_az


def oracle_separation(example: MixtureExample) -> np.ndarray:
    """Ideal-cIRM estimates at the reference mic, in target order.

    The training-time magnitude clamp is lifted here: it exists to bound
    gradients, and with it the oracle loses bins where the speakers cancel.
    """
    n = example.mixture.shape[1]
    Y = stft(example.mixture[0])
    masks = [ideal_cirm(S, Y, clamp=np.inf) for S in stft(example.targets)]
    return np.stack([istft(apply_cirm(m, Y), out_len=n) for m in masks])


def model_separation(model, example: MixtureExample):
    """Separated waveforms ``(N, samples)`` plus the spectra used for localization."""
    S_hat, Y = separate(model, example.mixture)
    n = example.mixture.shape[1]
    return np.stack([istft(s, out_len=n) for s in S_hat]), S_hat, Y


def select_criterion(example, table, threshold=DEFAULT_THRESHOLD, estimates=None, spectra=None):
    """Dynamic criterion choice for one mixture.

    Azimuths come from ratio masks of ``estimates`` (separated spectra); with
    ``estimates=None`` the ideal targets are used as oracle masks.
    """
    Y = stft(example.mixture) if spectra is None else spectra
    sources = list(stft(example.targets)) if estimates is None else list(estimates)
    found = estimate_azimuths(sources, Y, table)
    return dynamic_select(found, threshold), found


class CombinedSeparator:
    """Azimuth- and distance-trained models with per-mixture criterion selection.

    The azimuth model separates first; its outputs are localized and, when
    any two are within ``threshold`` degrees, the distance model's outputs
    are used instead.
    """

    def __init__(self, azimuth_model, distance_model, threshold=DEFAULT_THRESHOLD, oracle_localization=False, table=None):
        self.azimuth_model = azimuth_model
        self.distance_model = distance_model
        self.threshold = threshold
        self.oracle_localization = oracle_localization
        self.table = table if table is not None else build_steering_table()

    def choose(self, example):
        if self.oracle_localization:
            return select_criterion(example, self.table, self.threshold)[0], None
        waves, S_hat, Y = model_separation(self.azimuth_model, example)
        return select_criterion(example, self.table, self.threshold, S_hat, Y)[0], waves

    def separate(self, example):
        """Estimates, the criterion whose ordering they follow, and that criterion."""
        chosen, az_waves = self.choose(example)
        if chosen == Criterion.AZIMUTH:
            waves = az_waves if az_waves is not None else model_separation(self.azimuth_model, example)[0]
        else:
            waves = model_separation(self.distance_model, example)[0]
        return waves, chosen


def _gap(example):
    return min_azimuth_gap(example.scenario.azimuths) if example.scenario.n_speakers > 1 else 180.0


def evaluate(examples, system, label: str, scoring="fixed", ids=None) -> list[dict]:
    """Per-example evaluation rows for one system.

    ``system`` is ``"oracle"``, a ``(model, criterion)`` pair or a
    :class:`CombinedSeparator`. Fixed scoring compares output n with the
    speaker the criterion assigns to output n.
    """
    rows = []
    for i, ex in enumerate(examples):
        selected = None
        if system == "oracle":
            waves, criterion = oracle_separation(ex), Criterion.PIT
        elif isinstance(system, CombinedSeparator):
            waves, criterion = system.separate(ex)
            selected = criterion.value
        else:
            model, criterion = system
            waves = model_separation(model, ex)[0]
        order = target_order(ex.scenario, criterion)
        record = eval_example(list(waves), [ex.targets[k] for k in order], ex.mixture[0], scoring)
        rows.append(
            {
                "id": ids[i] if ids else f"example-{i:05d}",
                "system": label,
                "selected": selected,
                "min_azimuth_gap": _gap(ex),
                "target_order": [k + 1 for k in order],
                "record": record,
            }
        )
    return rows


def _mean(values):
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else None


def summarize(rows) -> dict:
    """Means of metrics and their improvements over the mixture."""
    out = {"count": len(rows)}
    for name in ("si_snr", "sdr", "estoi"):
        out[name] = _mean([r["record"].mean(name) for r in rows])
        out[f"delta_{name}"] = _mean([r["record"].mean_delta(name) for r in rows])
    selected = [r["selected"] for r in rows if r["selected"] is not None]
    if selected:
        out["distance_selection_rate"] = selected.count(Criterion.DISTANCE.value) / len(selected)
    return out


def _fmt(v, scale=1.0):
    return "" if v is None else f"{v * scale:.4f}"


def report_row(label: str, summary: dict) -> dict:
    """One table row: ESTOI in percent, PESQ marked as omitted, SI-SNR and SDR in dB."""
    return {
        "criterion": label,
        "ESTOI": _fmt(summary["estoi"], 100.0),
        "PESQ": PESQ_MARKER,
        "SI-SNR": _fmt(summary["si_snr"]),
        "SDR": _fmt(summary["sdr"]),
    }


def gap_label(lo, hi, last):
    return f"[{lo:g},{hi:g}]" if last else f"[{lo:g},{hi:g})"


def gap_rows(label: str, rows, edges) -> list[dict]:
    """One row per gap bin per metric (ESTOI, PESQ, dSI-SNR, dSDR) for a system."""
    out = []
    for b, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        last = b == len(edges) - 2
        members = [r for r in rows if lo <= r["min_azimuth_gap"] < hi or (last and r["min_azimuth_gap"] == hi)]
        values = {
            "ESTOI": _mean([r["record"].mean("estoi") for r in members]),
            "PESQ": None,
            "dSI-SNR": _mean([r["record"].mean_delta("si_snr") for r in members]),
            "dSDR": _mean([r["record"].mean_delta("sdr") for r in members]),
        }
        for metric, value in values.items():
            if metric == "PESQ":
                shown = PESQ_MARKER
            elif metric == "ESTOI":
                shown = _fmt(value, 100.0)
            else:
                shown = _fmt(value)
            out.append(
                {"criterion": label, "gap_bin": gap_label(lo, hi, last), "metric": metric, "value": shown, "count": len(members)}
            )
    return out


# ---------------------------------------------------------------- benchmark


@dataclass
class BenchReport:
    rows: list  # one dict per N

    def ratios(self) -> list:
        return [r["time_ratio"] for r in self.rows]

    def ratio_monotone_from(self, n_min: int = 3) -> bool:
        vals = [r["time_ratio"] for r in self.rows if r["n"] >= n_min]
        return all(b > a for a, b in zip(vals, vals[1:]))

    def to_json(self) -> dict:
        return {"rows": self.rows, "ratio_monotone_n_ge_3": self.ratio_monotone_from(3)}


def _median_times(fns, reps):
    """Median seconds per call; calls are interleaved so host drift hits every function alike."""
    times = [[] for _ in fns]
    for _ in range(reps):
        for fn, bucket in zip(fns, times):
            t0 = time.perf_counter()
            fn()
            bucket.append(time.perf_counter() - t0)
    return [float(np.median(t)) for t in times]


def run_bench(max_n: int = MAX_PIT_SPEAKERS, reps: int = 100, shape=(32, 64), seed: int = 0) -> BenchReport:
    """Counters and median wall time of PIT vs LBT assignment for N = 1..max_n."""
    if not 1 <= max_n <= MAX_PIT_SPEAKERS:
        raise HarnessError(f"max_n must be in [1, {MAX_PIT_SPEAKERS}]")
    if reps < 100:
        raise HarnessError("bench needs at least 100 repetitions")
    rng = np.random.default_rng(seed)
    rows = []
    for n in range(1, max_n + 1):
        est = list(rng.standard_normal((n, *shape)) + 1j * rng.standard_normal((n, *shape)))
        ref = list(rng.standard_normal((n, *shape)) + 1j * rng.standard_normal((n, *shape)))
        order = tuple(range(n))
        pit = pit_assign(est, ref)
        lbt = lbt_assign(est, ref, order)
        pit_t, lbt_t = _median_times([lambda: pit_assign(est, ref), lambda: lbt_assign(est, ref, order)], reps)
        rows.append(
            {
                "n": n,
                "pit_permutations_scanned": pit.permutations_scanned,
                "pit_pairwise_evals": pit.pairwise_evals,
                "lbt_permutations_scanned": lbt.permutations_scanned,
                "lbt_pairwise_evals": lbt.pairwise_evals,
                "pit_seconds": pit_t,
                "lbt_seconds": lbt_t,
                "time_ratio": pit_t / lbt_t,
            }
        )
    return BenchReport(rows)


# ---------------------------------------------------------------- commands


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def cmd_simulate(config: ExperimentConfig, out_dir: Path, args) -> dict:
    seeds = split_seeds(config)
    cache = out_dir / "rir_cache"
    written = {}
    for split, split_seeds_ in seeds.items():
        examples = build_examples(config, split_seeds_, cache, _split_duration(config, split))
        path = out_dir / f"{split}.jsonl"
        write_manifest(path, examples, split_seeds_, split, config, out_dir / "wav")
        written[split] = {"manifest": str(path), "count": len(examples)}
    return {"command": "simulate", **config.stamp(), "splits": written}


def _default_manifest(args, out_dir, split):
    return Path(args.manifest) if args.manifest else out_dir / f"{split}.jsonl"


def cmd_train(config: ExperimentConfig, out_dir: Path, args) -> dict:
    if args.criterion:
        config = replace(config, criterion=args.criterion)
    if args.steps is not None:
        config = replace(config, steps=args.steps)
    records, examples = load_examples(_default_manifest(args, out_dir, "train"))
    log_path = out_dir / f"train_log_{config.criterion}.csv"
    stamp = config.stamp()
    rows = []

    def on_step(step, loss, reports):
        rows.append(
            {
                "step": step,
                "loss": f"{loss:.8g}",
                "criterion": config.criterion,
                "permutations_scanned": reports[0].permutations_scanned,
                "pairwise_evals": reports[0].pairwise_evals,
                **stamp,
            }
        )

    state = train_model(config, examples, on_step)
    columns = ["step", "loss", "criterion", "permutations_scanned", "pairwise_evals", *STAMP_COLUMNS]
    _write_csv(log_path, rows, columns)
    ckpt = out_dir / f"model_{config.criterion}.npz"
    save_checkpoint(ckpt, state, metadata=stamp)
    initial = state.history[0] if state.history else None
    final = state.history[-1] if state.history else None
    return {"command": "train", **stamp, "checkpoint": str(ckpt), "log": str(log_path), "steps": state.step,
            "initial_loss": initial, "final_loss": final}


def _load_for_eval(path, n_speakers):
    header = read_checkpoint_header(path)
    if header["config"]["n_speakers"] != n_speakers:
        raise HarnessError(f"checkpoint {path} separates {header['config']['n_speakers']} speakers, data has {n_speakers}")
    return load_checkpoint(path)


def cmd_eval(config: ExperimentConfig, out_dir: Path, args) -> dict:
    records, examples = load_examples(_default_manifest(args, out_dir, "test"))
    ids = [r["id"] for r in records]
    scoring = args.scoring or config.scoring
    n_spk = examples[0].targets.shape[0] if examples else config.n_speakers
    checkpoints = args.checkpoint or []
    if args.mode == "oracle":
        systems = [("oracle", "oracle")]
    elif args.mode == "combined":
        states = [_load_for_eval(p, n_spk) for p in checkpoints]
        by_crit = {s.criterion: s.model for s in states}
        if set(by_crit) != {Criterion.AZIMUTH, Criterion.DISTANCE} or len(states) != 2:
            raise HarnessError("combined mode needs one azimuth-trained and one distance-trained checkpoint")
        combined = CombinedSeparator(
            by_crit[Criterion.AZIMUTH], by_crit[Criterion.DISTANCE], config.threshold, args.oracle_localization
        )
        systems = [("combined", combined)]
    else:
        if not checkpoints:
            raise HarnessError("single mode needs at least one --checkpoint")
        systems = []
        for p in checkpoints:
            state = _load_for_eval(p, n_spk)
            systems.append((state.criterion.value, (state.model, state.criterion)))
    stamp = config.stamp()
    all_rows, table, gaps, summaries = [], [], [], {}
    for label, system in systems:
        rows = evaluate(examples, system, label, scoring, ids)
        summary = summarize(rows)
        summaries[label] = summary
        table.append({**report_row(label, summary), **stamp})
        if args.gap_bins:
            gaps.extend({**g, **stamp} for g in gap_rows(label, rows, config.gap_bins))
        all_rows.extend(rows)
    with open(out_dir / "eval_records.jsonl", "w") as fh:
        for r in all_rows:
            fh.write(json.dumps({**{k: v for k, v in r.items() if k != "record"}, **r["record"].to_json(), **stamp},
                                sort_keys=True) + "\n")
    _write_csv(out_dir / "report.csv", table, REPORT_COLUMNS + STAMP_COLUMNS)
    result = {"command": "eval", **stamp, "scoring": scoring, "mode": args.mode, "summaries": summaries,
              "report": str(out_dir / "report.csv")}
    if args.gap_bins:
        _write_csv(out_dir / "gap_report.csv", gaps, ("criterion", "gap_bin", "metric", "value", "count") + STAMP_COLUMNS)
        result["gap_report"] = str(out_dir / "gap_report.csv")
    _write_json(out_dir / "eval_summary.json", result)
    return result


def cmd_localize(config: ExperimentConfig, out_dir: Path, args) -> dict:
    table = build_steering_table(grid_step=args.grid_step)
    model = load_checkpoint(args.checkpoint).model if args.checkpoint else None
    results = []
    if args.wav:
        mixture = read_wav(args.wav)
        Y = stft(mixture)
        if model is not None:
            S_hat, _ = separate(model, mixture)
            found = estimate_azimuths(list(S_hat), Y, table)
        else:
            found = estimate_azimuths(None, Y, table, masks=[np.ones(Y.shape[1:])])
        results.append({"id": Path(args.wav).stem, "estimates": found.to_json(args.profiles)})
    else:
        records, examples = load_examples(_default_manifest(args, out_dir, "test"))
        for rec, ex in zip(records, examples):
            Y = stft(ex.mixture)
            if model is not None:
                S_hat, _ = separate(model, ex.mixture)
                found = estimate_azimuths(list(S_hat), Y, table)
            else:
                found = estimate_azimuths(list(stft(ex.targets)), Y, table)
            results.append(
                {
                    "id": rec["id"],
                    "mask": "model" if model is not None else "oracle",
                    "true_azimuths": [float(a) % 360.0 for a in ex.scenario.azimuths],
                    "estimates": found.to_json(args.profiles),
                }
            )
    out = {"command": "localize", **config.stamp(), "grid_step": args.grid_step, "results": results}
    _write_json(out_dir / "localize.json", out)
    return {"command": "localize", **config.stamp(), "output": str(out_dir / "localize.json"), "count": len(results)}


def cmd_bench(config: ExperimentConfig, out_dir: Path, args) -> dict:
    report = run_bench(args.max_n, args.reps, seed=config.seed)
    out = {"command": "bench", **config.stamp(), **report.to_json()}
    _write_json(out_dir / "bench.json", out)
    return {"command": "bench", **config.stamp(), "output": str(out_dir / "bench.json"),
            "ratio_monotone_n_ge_3": report.ratio_monotone_from(3)}


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "localize": cmd_localize, "bench": cmd_bench}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise HarnessError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="locsep", description="Location-based training lab for multi-channel speaker separation.")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out-dir", default=".", help="output directory (created if missing)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="generate train/test manifests and WAVs")
    p = sub.add_parser("train", parents=[common], help="train a separator on a manifest")
    p.add_argument("--manifest")
    p.add_argument("--criterion", choices=["pit", "azimuth", "distance"])
    p.add_argument("--steps", type=int)
    p = sub.add_parser("eval", parents=[common], help="score checkpoints on a manifest")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--mode", choices=["single", "combined", "oracle"], default="single")
    p.add_argument("--scoring", choices=["fixed", "best-permutation"])
    p.add_argument("--gap-bins", action="store_true", help="add the azimuth-gap breakdown report")
    p.add_argument("--oracle-localization", action="store_true", help="combined mode: localize with ideal masks")
    p = sub.add_parser("localize", parents=[common], help="mask-weighted GCC-PHAT azimuths")
    p.add_argument("--manifest")
    p.add_argument("--wav", help="multichannel mixture WAV instead of a manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--grid-step", type=float, default=1.0)
    p.add_argument("--profiles", action="store_true", help="include score profiles")
    p = sub.add_parser("bench", parents=[common], help="PIT vs LBT assignment cost")
    p.add_argument("--max-n", type=int, default=MAX_PIT_SPEAKERS)
    p.add_argument("--reps", type=int, default=100)
    return parser


def main(argv=None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[command](config, out_dir, args)
    except Exception as err:  # every failure becomes machine-readable
        kind = "HarnessError" if isinstance(err, HarnessError) else type(err).__name__
        sys.stderr.write(json.dumps({"error": kind, "message": str(err), "command": command}) + "\n")
        return 1 if not isinstance(err, HarnessError) or not str(err).startswith("usage:") else 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
