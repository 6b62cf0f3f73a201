"""Weak-pulse photon statistics and detector click modeling.

An attenuated laser pulse carries a Poisson-distributed photon number with
mean mu.  Each photon independently reaches detector i with probability
p_i (from the loop optics) and fires it with probability eta, so the
photon-induced no-click probability at detector i is exp(-mu * eta * p_i)
and the two detectors are independent (Poisson thinning).  Dark counts add
an independent per-gate click probability to each detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .loopmodel import LoopConfig, fringe_coefficients

_MASK64 = (1 << 64) - 1

PROB_SUM_TOL = 1e-9


class DoubleClickPolicy(str, Enum):
    DISCARD = "discard"
    RANDOM_ASSIGN = "random_assign"


class ClickOutcome(Enum):
    NONE = "none"
    D1 = "d1"
    D2 = "d2"
    BOTH = "both"


@dataclass(frozen=True)
class SourceParams:
    """Pulsed weak-coherent source.

    mu: mean photon number per pulse (after the in-loop attenuator).
    rep_rate: pulse repetition rate in Hz.
    wavelength: meters; carried for reporting, the optics model is
    wavelength-independent.
    """

    mu: float = 0.1
    rep_rate: float = 100e3
    wavelength: float = 830e-9

    def validate(self) -> None:
        if not (self.mu >= 0.0 and math.isfinite(self.mu)):
            raise ValueError(f"source.mu must be >= 0, got {self.mu}")
        if not (self.rep_rate > 0.0):
            raise ValueError(f"source.rep_rate must be > 0, got {self.rep_rate}")
        if not (self.wavelength > 0.0):
            raise ValueError(f"source.wavelength must be > 0, got {self.wavelength}")


@dataclass(frozen=True)
class DetectorParams:
    """Gated single-photon avalanche detectors, one per output port.

    efficiency: photon -> avalanche probability, identical for both.
    dark_prob: dark click probability per gate per detector.
    double_click_policy: what to do when both detectors fire in one gate.
    """

    efficiency: float = 1.0
    dark_prob: float = 0.0
    double_click_policy: DoubleClickPolicy = DoubleClickPolicy.DISCARD

    def validate(self) -> None:
        if not (0.0 <= self.efficiency <= 1.0):
            raise ValueError(f"detectors.efficiency must be in [0, 1], got {self.efficiency}")
        if not (0.0 <= self.dark_prob < 1.0):
            raise ValueError(f"detectors.dark_prob must be in [0, 1), got {self.dark_prob}")


class RngStream:
    """Deterministic counter-based random stream (Philox 4x64).

    The 128-bit Philox key is (seed, stream), so any number of named
    substreams can be derived from one master seed without coordination;
    identical (seed, stream) always reproduces the same draw sequence
    regardless of what other streams were consumed.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self.generator = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def substream(self, purpose: int, index: int = 0) -> "RngStream":
        """Derived stream: purpose tag in the high bits, batch index in the low."""
        return RngStream(self.seed, ((int(purpose) & 0xFFFFFF) << 40) | (int(index) & ((1 << 40) - 1)))


@dataclass(frozen=True)
class ClickDistribution:
    q_none: float
    q_d1_only: float
    q_d2_only: float
    q_both: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.q_none, self.q_d1_only, self.q_d2_only, self.q_both)


def no_click_probabilities(p1, p2, src: SourceParams, det: DetectorParams):
    """Per-detector total no-click probabilities (a1, a2); accepts arrays."""
    me = src.mu * det.efficiency
    a1 = (1.0 - det.dark_prob) * np.exp(-me * np.asarray(p1, dtype=float))
    a2 = (1.0 - det.dark_prob) * np.exp(-me * np.asarray(p2, dtype=float))
    return a1, a2


def click_probabilities(
    p1: float, p2: float, src: SourceParams, det: DetectorParams
) -> ClickDistribution:
    """Joint distribution of the four gate outcomes for given port probabilities.

    P(no click at Di) = (1 - dark_prob) * exp(-mu * eta * p_i); the detectors
    are independent, so the four joint outcomes factorize.
    """
    src.validate()
    det.validate()
    if not (p1 >= 0.0 and p2 >= 0.0 and p1 + p2 <= 1.0 + PROB_SUM_TOL):
        raise ValueError(f"port probabilities invalid: p1={p1}, p2={p2}")
    a1, a2 = no_click_probabilities(p1, p2, src, det)
    a1, a2 = float(a1), float(a2)
    return ClickDistribution(
        q_none=a1 * a2,
        q_d1_only=(1.0 - a1) * a2,
        q_d2_only=a1 * (1.0 - a2),
        q_both=(1.0 - a1) * (1.0 - a2),
    )


# Fixed categorical order for sampling: none, d1, d2, both.
_OUTCOME_ORDER = (ClickOutcome.NONE, ClickOutcome.D1, ClickOutcome.D2, ClickOutcome.BOTH)


def sample_pulse(probs: ClickDistribution, rng: RngStream) -> ClickOutcome:
    """One categorical draw from the four-outcome distribution (one uniform consumed)."""
    q = probs.as_tuple()
    if any(x < -PROB_SUM_TOL for x in q) or abs(sum(q) - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"malformed click distribution {q}")
    u = rng.generator.random()
    acc = 0.0
    for outcome, p in zip(_OUTCOME_ORDER, q):
        acc += p
        if u < acc:
            return outcome
    return ClickOutcome.BOTH


@dataclass(frozen=True)
class ExpectedSession:
    """Closed-form per-pulse expectations for a BB84 session over a given loop."""

    sifted_prob: float
    error_prob: float
    raw_click_prob: float
    raw_rate: float
    qber: float


def expected_session(
    config: LoopConfig,
    phase_table,
    src: SourceParams,
    det: DetectorParams,
) -> ExpectedSession:
    """Exact session expectations by enumerating the 8 equally likely choice cells.

    ``phase_table`` supplies the protocol's phase coding: ``alice(basis, bit)``
    and ``bob(basis)`` in radians.  Averages over uniform independent bit and
    basis choices, applies the double-click policy, and counts an error when a
    sifted click decodes to the wrong bit (detector 1 -> 0, detector 2 -> 1).
    """
    src.validate()
    det.validate()
    fc = fringe_coefficients(config)
    policy = det.double_click_policy
    sifted = 0.0
    errors = 0.0
    clicks = 0.0
    w = 1.0 / 8.0
    for a_basis in (0, 1):
        for a_bit in (0, 1):
            for b_basis in (0, 1):
                delta = phase_table.alice(a_basis, a_bit) - phase_table.bob(b_basis)
                p1, p2 = fc.probs(delta % (2.0 * math.pi))
                d = click_probabilities(p1, p2, src, det)
                clicks += w * (d.q_d1_only + d.q_d2_only + d.q_both)
                if a_basis != b_basis:
                    continue
                wrong = d.q_d2_only if a_bit == 0 else d.q_d1_only
                if policy is DoubleClickPolicy.DISCARD:
                    sifted += w * (d.q_d1_only + d.q_d2_only)
                    errors += w * wrong
                else:
                    sifted += w * (d.q_d1_only + d.q_d2_only + d.q_both)
                    errors += w * (wrong + 0.5 * d.q_both)
    return ExpectedSession(
        sifted_prob=sifted,
        error_prob=errors,
        raw_click_prob=clicks,
        raw_rate=src.rep_rate * sifted,
        qber=errors / sifted if sifted > 0.0 else math.nan,
    )
