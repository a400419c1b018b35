"""Estimator-style front end: ``fit`` on mixtures, ``predict`` separated speech, ``score`` in dB."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .acoustics import MixtureExample
from .criteria import DEFAULT_THRESHOLD, Criterion
from .harness import CombinedSeparator, evaluate, model_separation
from .model import SeparatorConfig, new_train_state, train_loop


def check_mixture(mixture, n_mics: int | None = None) -> np.ndarray:
    """Finite float64 ``(n_mics, samples)`` array, or ValueError."""
    x = np.asarray(mixture, dtype=float)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError(f"mixture must be (n_mics, samples), got shape {x.shape}")
    if n_mics is not None and x.shape[0] != n_mics:
        raise ValueError(f"mixture has {x.shape[0]} channels, expected {n_mics}")
    if not np.all(np.isfinite(x)):
        raise ValueError("mixture contains NaN or inf")
    return x


def check_examples(examples, n_speakers: int | None = None, n_mics: int | None = None) -> list:
    """Nonempty list of MixtureExample with consistent speaker and channel counts."""
    examples = list(examples)
    if not examples:
        raise ValueError("no examples")
    for ex in examples:
        if not isinstance(ex, MixtureExample):
            raise TypeError(f"expected MixtureExample, got {type(ex).__name__}")
        check_mixture(ex.mixture, n_mics)
        if n_speakers is not None and ex.targets.shape[0] != n_speakers:
            raise ValueError(f"example has {ex.targets.shape[0]} speakers, expected {n_speakers}")
    return examples


class LocationSeparator(BaseEstimator):
    """Multi-channel separator trained with PIT, azimuth, distance or combined criteria.

    ``criterion='combined'`` trains an azimuth model and a distance model and
    chooses between them per mixture from the azimuth model's localized
    outputs. Outputs follow the criterion's speaker order.
    """

    def __init__(
        self,
        criterion="azimuth",
        n_speakers=2,
        channels=8,
        depth=2,
        n_blocks=3,
        convs_per_block=2,
        features="phase_aligned",
        steps=200,
        batch_size=8,
        lr=2e-3,
        threshold=DEFAULT_THRESHOLD,
        random_state=0,
    ):
        self.criterion = criterion
        self.n_speakers = n_speakers
        self.channels = channels
        self.depth = depth
        self.n_blocks = n_blocks
        self.convs_per_block = convs_per_block
        self.features = features
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.threshold = threshold
        self.random_state = random_state

    def _config(self, n_mics):
        return SeparatorConfig(
            n_speakers=self.n_speakers,
            n_mics=n_mics,
            depth=self.depth,
            n_blocks=self.n_blocks,
            convs_per_block=self.convs_per_block,
            channels=self.channels,
            features=self.features,
        )

    def _train(self, criterion, examples, config):
        state = new_train_state(config, criterion, seed=self.random_state, lr=self.lr)
        return train_loop(state, examples, self.steps, self.batch_size, seed=self.random_state)

    def fit(self, X, y=None):
        """Train on a list of MixtureExample (targets are carried by the examples)."""
        examples = check_examples(X, self.n_speakers)
        n_mics = examples[0].mixture.shape[0]
        check_examples(examples, n_mics=n_mics)
        config = self._config(n_mics)
        criterion = Criterion(self.criterion)
        self.states_ = {}
        if criterion == Criterion.COMBINED:
            for c in (Criterion.AZIMUTH, Criterion.DISTANCE):
                self.states_[c] = self._train(c, examples, config)
        else:
            self.states_[criterion] = self._train(criterion, examples, config)
        self.n_mics_ = n_mics
        return self

    def _system(self):
        check_is_fitted(self, "states_")
        if Criterion(self.criterion) == Criterion.COMBINED:
            return CombinedSeparator(
                self.states_[Criterion.AZIMUTH].model, self.states_[Criterion.DISTANCE].model, self.threshold
            )
        (criterion, state), = self.states_.items()
        return state.model, criterion

    def predict(self, X) -> list:
        """Separated reference-mic waveforms ``(N, samples)`` per mixture.

        ``X`` holds MixtureExamples or raw ``(n_mics, samples)`` arrays.
        """
        system = self._system()
        out = []
        for item in X:
            ex = item if isinstance(item, MixtureExample) else MixtureExample(
                check_mixture(item, self.n_mics_), np.empty((0, 0)), None
            )
            check_mixture(ex.mixture, self.n_mics_)
            if isinstance(system, CombinedSeparator):
                out.append(system.separate(ex)[0])
            else:
                out.append(model_separation(system[0], ex)[0])
        return out

    def score(self, X, y=None) -> float:
        """Mean SI-SNR improvement (dB): fixed output order, or best permutation for PIT."""
        system = self._system()
        examples = check_examples(X, self.n_speakers, self.n_mics_)
        scoring = "best-permutation" if Criterion(self.criterion) == Criterion.PIT else "fixed"
        rows = evaluate(examples, system, Criterion(self.criterion).value, scoring)
        return float(np.mean([r["record"].mean_delta("si_snr") for r in rows]))
