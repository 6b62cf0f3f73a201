"""Seeded, vectorized Monte Carlo execution of key-exchange sessions.

Reproducibility contract: a session is driven entirely by a 64-bit master
seed.  Pulses are processed in fixed-size batches, and every consumer of
randomness draws from its own named Philox substream keyed by
(master seed, purpose << 40 | batch index):

===================  =======  =================================================
purpose              tag      draw order within a batch (arrays of batch size)
===================  =======  =================================================
protocol choices     1        alice bits, alice bases, bob bases
eavesdropper         2        attack coins, eve bases, eve outcome coins
detection            3        outcome coins [, double-click assignment coins]
disclosure subset    4        subset coins (only when disclosed_fraction < 1)
ring disturbance     16 + i   cw-pass phases, ccw-pass phases for noisy entity i
===================  =======  =================================================

Counts merge by pure addition, so results are independent of batch
processing order, and any single pulse can be re-derived from the seed,
its batch index (pulse // batch_size) and offset (pulse % batch_size).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bb84 import (
    PHASE_CODING,
    EveConfig,
    EveStrategy,
    PhaseTable,
    PulseRecord,
    SessionStats,
)
from .loopmodel import LoopConfig, fringe_coefficients
from .quantumchannel import (
    ClickOutcome,
    DetectorParams,
    DoubleClickPolicy,
    RngStream,
    SourceParams,
    no_click_probabilities,
)

PURPOSE_CHOICES = 1
PURPOSE_EVE = 2
PURPOSE_DETECT = 3
PURPOSE_DISCLOSE = 4
PURPOSE_NOISE_BASE = 16

DEFAULT_BATCH_SIZE = 1 << 17

_OUTCOME_BY_CODE = (ClickOutcome.NONE, ClickOutcome.D1, ClickOutcome.D2, ClickOutcome.BOTH)


class DisturbanceKind(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseTap:
    """Random phase injected by a ring module on each pulse pass.

    Both counter-propagating pulses traverse the module, each pass drawing
    its own phase, so only the difference of the two draws survives at the
    coupler.  Gaussian taps draw N(0, sigma^2) per pass; uniform taps draw
    U[0, 2pi) per pass (the strong-disturbance limit).
    """

    sigma: float
    kind: DisturbanceKind = DisturbanceKind.GAUSSIAN
    tag: int = 0

    def validate(self) -> None:
        if not (self.sigma >= 0.0):
            raise ValueError(f"disturbance sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class SessionParams:
    """Everything a session needs besides the loop itself."""

    pulses: int
    seed: int
    source: SourceParams = field(default_factory=SourceParams)
    detectors: DetectorParams = field(default_factory=DetectorParams)
    eve: EveConfig = field(default_factory=EveConfig)
    disclosed_fraction: float = 1.0
    swap_detector_bits: bool = False
    table: PhaseTable = field(default_factory=lambda: PHASE_CODING)
    batch_size: int = DEFAULT_BATCH_SIZE

    def validate(self) -> None:
        if self.pulses < 1:
            raise ValueError(f"protocol.pulses must be >= 1, got {self.pulses}")
        if not (0.0 < self.disclosed_fraction <= 1.0):
            raise ValueError(
                f"protocol.disclosed_fraction must be in (0, 1], got {self.disclosed_fraction}"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.source.validate()
        self.detectors.validate()
        self.eve.validate()


def run_session(
    config: LoopConfig,
    params: SessionParams,
    noise: tuple[NoiseTap, ...] = (),
    collect_records: bool = False,
) -> tuple[SessionStats, list[PulseRecord] | None]:
    """Execute a full session: loop optics -> click sampling -> sifting counts.

    Deterministic given (config, params, noise); see the module docstring
    for the substream layout.  ``collect_records`` materializes per-pulse
    protocol records (intended for transcripts and small sessions; memory
    grows linearly with pulse count).
    """
    params.validate()
    for tap in noise:
        tap.validate()
    fc = fringe_coefficients(config)
    root = RngStream(params.seed)
    table = params.table
    policy = params.detectors.double_click_policy

    pulses_left = params.pulses
    batch = 0
    raw_clicks = 0
    sifted_bits = 0
    errors = 0
    disclosed_bits = 0
    records: list[PulseRecord] | None = [] if collect_records else None

    while pulses_left > 0:
        n = min(params.batch_size, pulses_left)

        g_choice = root.substream(PURPOSE_CHOICES, batch).generator
        alice_bits = g_choice.integers(0, 2, size=n)
        alice_bases = g_choice.integers(0, 2, size=n)
        bob_bases = g_choice.integers(0, 2, size=n)

        phi_a = table.alice_phases[alice_bases, alice_bits]
        phi_b = table.bob_phases[bob_bases]

        eff_phi_a = phi_a
        if params.eve.strategy is not EveStrategy.OFF:
            g_eve = root.substream(PURPOSE_EVE, batch).generator
            u_attack = g_eve.random(n)
            eve_bases = g_eve.integers(0, 2, size=n)
            u_outcome = g_eve.random(n)
            attacked = u_attack < params.eve.fraction
            p_zero = np.cos((phi_a - table.bob_phases[eve_bases]) / 2.0) ** 2
            eve_bits = (u_outcome >= p_zero).astype(np.int64)
            eff_phi_a = np.where(attacked, table.alice_phases[eve_bases, eve_bits], phi_a)

        delta = eff_phi_a - phi_b
        for tap in noise:
            if tap.sigma == 0.0 and tap.kind is DisturbanceKind.GAUSSIAN:
                continue
            g_noise = root.substream(PURPOSE_NOISE_BASE + tap.tag, batch).generator
            if tap.kind is DisturbanceKind.GAUSSIAN:
                cw_pass = g_noise.normal(0.0, tap.sigma, size=n)
                ccw_pass = g_noise.normal(0.0, tap.sigma, size=n)
            else:
                cw_pass = g_noise.uniform(0.0, 2.0 * math.pi, size=n)
                ccw_pass = g_noise.uniform(0.0, 2.0 * math.pi, size=n)
            delta = delta + cw_pass - ccw_pass

        p1, p2 = fc.probs(np.asarray(delta, dtype=float) % (2.0 * math.pi))
        a1, a2 = no_click_probabilities(p1, p2, params.source, params.detectors)
        q_none = a1 * a2
        q_d1 = (1.0 - a1) * a2
        q_d2 = a1 * (1.0 - a2)

        g_detect = root.substream(PURPOSE_DETECT, batch).generator
        u = g_detect.random(n)
        # categorical in fixed order none|d1|d2|both
        code = (
            (u >= q_none).astype(np.int8)
            + (u >= q_none + q_d1).astype(np.int8)
            + (u >= q_none + q_d1 + q_d2).astype(np.int8)
        )
        raw_code = code.copy()
        if policy is DoubleClickPolicy.RANDOM_ASSIGN:
            assign = g_detect.random(n)
            code = np.where(code == 3, np.where(assign < 0.5, 1, 2).astype(np.int8), code)
        else:
            code = np.where(code == 3, 0, code).astype(np.int8)

        single = (code == 1) | (code == 2)
        matched = alice_bases == bob_bases
        sifted = single & matched
        decoded = code - 1  # valid where single
        if params.swap_detector_bits:
            decoded = 1 - decoded
        wrong = sifted & (decoded != alice_bits)

        if params.disclosed_fraction < 1.0:
            g_disc = root.substream(PURPOSE_DISCLOSE, batch).generator
            disclosed_mask = sifted & (g_disc.random(n) < params.disclosed_fraction)
        else:
            disclosed_mask = sifted

        raw_clicks += int(np.count_nonzero(raw_code != 0))
        sifted_bits += int(np.count_nonzero(sifted))
        errors += int(np.count_nonzero(wrong & disclosed_mask))
        disclosed_bits += int(np.count_nonzero(disclosed_mask))

        if records is not None:
            base_index = params.pulses - pulses_left
            for i in range(n):
                records.append(
                    PulseRecord(
                        index=base_index + i,
                        alice_bit=int(alice_bits[i]),
                        alice_basis=int(alice_bases[i]),
                        bob_basis=int(bob_bases[i]),
                        phi_a=float(phi_a[i]),
                        phi_b=float(phi_b[i]),
                        outcome=_OUTCOME_BY_CODE[int(raw_code[i])],
                        sifted=bool(sifted[i]),
                        decoded_bit=int(decoded[i]) if sifted[i] else None,
                    )
                )

        pulses_left -= n
        batch += 1

    stats = SessionStats.from_counts(
        pulses_sent=params.pulses,
        raw_clicks=raw_clicks,
        sifted_bits=sifted_bits,
        errors=errors,
        disclosed_bits=disclosed_bits,
        rep_rate=params.source.rep_rate,
    )
    return stats, records
