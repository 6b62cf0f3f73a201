import dataclasses
import math

import numpy as np
import pytest

from loopqkd import jones
from loopqkd.jones import IDENTITY, H_POL, JonesOperator, JonesState, backward, random_unitary
from loopqkd.loopmodel import (
    DEFAULT_GROUP_INDEX,
    SPEED_OF_LIGHT,
    Component,
    ComponentKind,
    Direction,
    LoopConfig,
    PhasePair,
    accumulate,
    detection_probs,
    fringe_coefficients,
    pdl_penalty,
    standard_loop,
    timing_schedule,
)


def amplitude_chain_oracle(config, phi_a, phi_b):
    """Brute-force (p1, p2): multiply out the amplitude chain component by
    component, independent of accumulate()/fringe_coefficients()."""
    kappa = config.coupler_ratio
    t = math.sqrt(1.0 - kappa)
    r = 1j * math.sqrt(kappa)
    psi = config.source_pol.vector

    v = t * psi.copy()
    for c in config.components:
        v = math.sqrt(c.power_transmittance()) * (c.jones.m @ v)
    v_cw = np.exp(1j * phi_a) * v

    w = r * psi.copy()
    for c in reversed(config.components):
        w = math.sqrt(c.power_transmittance()) * (c.jones.m.T @ w)
    v_ccw = np.exp(1j * phi_b) * w

    out1 = t * v_ccw + r * v_cw
    out2 = r * v_ccw + t * v_cw
    return float(np.vdot(out1, out1).real), float(np.vdot(out2, out2).real)


def replace_jones(config, index, op):
    comps = list(config.components)
    comps[index] = dataclasses.replace(comps[index], jones=op)
    return LoopConfig(tuple(comps), config.coupler_ratio, config.source_pol)


# ---------------------------------------------------------------- accumulate


def test_accumulate_identity_lossless():
    cfg = standard_loop(200.0, 200.0, 800.0)
    for d in (Direction.CW, Direction.CCW):
        s = accumulate(cfg, d)
        assert np.max(np.abs(s.jones_total.m - np.eye(2))) < 1e-15
        assert s.amplitude_transmittance == pytest.approx(1.0, abs=1e-15)
        assert s.optical_length == pytest.approx(1200.0)


def test_accumulate_db_arithmetic():
    cfg = standard_loop(200.0, 0.0, 0.0)
    comps = [
        dataclasses.replace(c, loss_db_per_km=0.2 if c.label == "upper-link" else 0.0)
        for c in cfg.components
    ]
    cfg = LoopConfig(tuple(comps), cfg.coupler_ratio, cfg.source_pol)
    s = accumulate(cfg, Direction.CW)
    assert s.amplitude_transmittance**2 == pytest.approx(10 ** (-0.04 / 10.0), rel=1e-12)


def test_accumulate_transmittance_is_product_of_component_powers():
    rng = np.random.default_rng(7)
    cfg = standard_loop(150.0, 300.0, 500.0, loss_db_per_km=1.3, attenuator_transmittance=0.37)
    expected = 1.0
    for c in cfg.components:
        expected *= c.power_transmittance()
    s = accumulate(cfg, Direction.CCW)
    assert s.amplitude_transmittance**2 == pytest.approx(expected, abs=1e-12)


def test_accumulate_ccw_is_backward_of_cw():
    rng = np.random.default_rng(8)
    for _ in range(20):
        u = random_unitary(rng)
        cfg = standard_loop(delay_jones=u)
        cw = accumulate(cfg, Direction.CW)
        ccw = accumulate(cfg, Direction.CCW)
        assert np.max(np.abs(ccw.jones_total.m - cw.jones_total.m.T)) < 1e-12
        assert np.max(np.abs(ccw.jones_total.m - backward(cw.jones_total).m)) < 1e-12


def test_accumulate_rejects_invalid_config():
    cfg = standard_loop()
    comps = tuple(c for c in cfg.components if c.kind is not ComponentKind.ATTENUATOR)
    bad = LoopConfig(comps, 0.5, H_POL)
    with pytest.raises(ValueError, match="attenuator"):
        accumulate(bad, Direction.CW)
    with pytest.raises(ValueError, match="coupler_ratio"):
        accumulate(LoopConfig(cfg.components, 1.5, H_POL), Direction.CW)
    with pytest.raises(ValueError, match="owner"):
        Component(ComponentKind.PHASE_MODULATOR, owner="carol").validate()


# ---------------------------------------------------------------- detection


def test_detection_ideal_ports():
    cfg = standard_loop()
    assert detection_probs(cfg, PhasePair(0.0, 0.0)) == pytest.approx((1.0, 0.0), abs=1e-15)
    assert detection_probs(cfg, PhasePair(math.pi, 0.0)) == pytest.approx((0.0, 1.0), abs=1e-15)
    assert detection_probs(cfg, PhasePair(math.pi / 2, 0.0)) == pytest.approx((0.5, 0.5), abs=1e-15)


def test_detection_interference_law_on_grid():
    cfg = standard_loop()
    for delta in np.linspace(0.0, 2.0 * math.pi, 360):
        p1, p2 = detection_probs(cfg, PhasePair(delta, 0.0))
        assert abs(p1 - math.cos(delta / 2.0) ** 2) < 1e-12
        assert abs(p1 + p2 - 1.0) < 1e-12


def test_detection_depends_only_on_phase_difference():
    rng = np.random.default_rng(9)
    cfg = standard_loop(delay_jones=random_unitary(rng), upper_jones=random_unitary(rng))
    for _ in range(50):
        a, b, shift = rng.uniform(0.0, 2.0 * math.pi, size=3)
        p = detection_probs(cfg, PhasePair(a, b))
        q = detection_probs(cfg, PhasePair(a + shift, b + shift))
        assert p == pytest.approx(q, abs=1e-12)


def test_detection_matches_amplitude_chain_oracle():
    rng = np.random.default_rng(10)
    for _ in range(50):
        cfg = standard_loop(
            upper_length=rng.uniform(10, 500),
            lower_length=rng.uniform(10, 500),
            delay_length=rng.uniform(100, 1000),
            loss_db_per_km=rng.uniform(0.0, 3.0),
            attenuator_transmittance=rng.uniform(0.2, 1.0),
            coupler_ratio=rng.uniform(0.2, 0.8),
            upper_jones=random_unitary(rng),
            lower_jones=random_unitary(rng),
            delay_jones=random_unitary(rng),
        )
        phi_a, phi_b = rng.uniform(0.0, 2.0 * math.pi, size=2)
        got = detection_probs(cfg, PhasePair(phi_a, phi_b))
        want = amplitude_chain_oracle(cfg, phi_a, phi_b)
        assert got == pytest.approx(want, abs=1e-12)


def test_detection_rejects_unnormalized_source():
    cfg = standard_loop(source_pol=JonesState(1.0, 1.0))
    with pytest.raises(ValueError, match="normalized"):
        detection_probs(cfg, PhasePair(0.0, 0.0))


def test_phase_drift_immunity():
    rng = np.random.default_rng(11)
    cfg = standard_loop(
        upper_jones=random_unitary(rng),
        delay_jones=random_unitary(rng),
        attenuator_transmittance=0.6,
    )
    phases = PhasePair(0.7, 0.3)
    base = detection_probs(cfg, phases)
    for _ in range(200):
        idx = int(rng.integers(0, len(cfg.components)))
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        drifted = replace_jones(
            cfg, idx, JonesOperator(np.exp(1j * theta) * cfg.components[idx].jones.m)
        )
        got = detection_probs(drifted, phases)
        assert abs(got[0] - base[0]) < 1e-12
        assert abs(got[1] - base[1]) < 1e-12


def test_lossless_unitarity_any_coupler_ratio():
    rng = np.random.default_rng(12)
    for _ in range(20):
        cfg = standard_loop(
            coupler_ratio=rng.uniform(0.05, 0.95),
            upper_jones=random_unitary(rng),
            lower_jones=random_unitary(rng),
        )
        p1, p2 = detection_probs(cfg, PhasePair(*rng.uniform(0, 2 * math.pi, size=2)))
        assert p1 + p2 == pytest.approx(1.0, abs=1e-12)


def test_symmetric_birefringence_keeps_ideal_law():
    rng = np.random.default_rng(13)
    for _ in range(20):
        u = random_unitary(rng)
        sym = JonesOperator(u.m.T @ u.m)  # symmetric unitary
        cfg = standard_loop(delay_jones=sym)
        for delta in np.linspace(0.0, 2.0 * math.pi, 24):
            p1, _ = detection_probs(cfg, PhasePair(delta, 0.0))
            assert abs(p1 - math.cos(delta / 2.0) ** 2) < 1e-10


def test_loss_scales_total_probability_linearly():
    cfg_full = standard_loop(attenuator_transmittance=0.8)
    cfg_half = standard_loop(attenuator_transmittance=0.4)
    for delta in (0.0, 0.9, 2.5):
        p1f, p2f = detection_probs(cfg_full, PhasePair(delta, 0.0))
        p1h, p2h = detection_probs(cfg_half, PhasePair(delta, 0.0))
        assert p1h + p2h == pytest.approx(0.5 * (p1f + p2f), abs=1e-12)


def test_fringe_coefficients_array_evaluation():
    cfg = standard_loop()
    fc = fringe_coefficients(cfg)
    deltas = np.linspace(0.0, 2.0 * math.pi, 100)
    p1, p2 = fc.probs(deltas)
    for d, a, b in zip(deltas, p1, p2):
        pa, pb = detection_probs(cfg, PhasePair(d, 0.0))
        assert a == pytest.approx(pa, abs=1e-14)
        assert b == pytest.approx(pb, abs=1e-14)


# ---------------------------------------------------------------- timing


def test_timing_paper_geometry_staggers_pulses():
    cfg = standard_loop(200.0, 200.0, 800.0)
    sched = timing_schedule(cfg)
    assert not sched.conflict
    expected = 800.0 * DEFAULT_GROUP_INDEX / SPEED_OF_LIGHT
    assert sched.alice_pm_separation == pytest.approx(expected, rel=1e-12)
    assert sched.alice_pm_separation == pytest.approx(3.92e-6, rel=1e-2)


def test_timing_zero_delay_conflicts():
    cfg = standard_loop(200.0, 200.0, 0.0)
    sched = timing_schedule(cfg)
    assert sched.conflict
    assert sched.alice_pm_separation == pytest.approx(0.0, abs=1e-15)


def test_timing_stagger_independent_of_link_length():
    short = timing_schedule(standard_loop(200.0, 200.0, 800.0))
    long = timing_schedule(standard_loop(10_000.0, 10_000.0, 800.0))
    assert not long.conflict
    assert long.alice_pm_separation == pytest.approx(short.alice_pm_separation, rel=1e-12)


def test_timing_rejects_bad_group_index():
    with pytest.raises(ValueError, match="group_index"):
        timing_schedule(standard_loop(), group_index=0.9)


def test_timing_schedule_covers_all_components_both_ways():
    cfg = standard_loop()
    sched = timing_schedule(cfg)
    assert len(sched.entries) == 2 * len(cfg.components)
    for e in sched.entries:
        assert e.t_exit >= e.t_enter >= 0.0


# ---------------------------------------------------------------- PDL


def test_pdl_penalty_ideal():
    assert pdl_penalty(standard_loop()) == pytest.approx(1.0, abs=1e-12)


def test_pdl_penalty_loss_orthogonal_to_populated_axis():
    pdl = Component(ComponentKind.PDL_ELEMENT, label="pdl", jones=jones.diattenuator(1.0, 0.0))
    cfg = standard_loop(extra_components=(pdl,))
    assert pdl_penalty(cfg) == pytest.approx(1.0, abs=1e-12)


def test_pdl_penalty_matches_amplitude_chain():
    rng = np.random.default_rng(14)
    for _ in range(30):
        pdl = Component(
            ComponentKind.PDL_ELEMENT,
            label="pdl",
            jones=jones.diattenuator(
                rng.uniform(0.5, 1.0), rng.uniform(0.1, 0.5), rng.uniform(0, math.pi)
            ),
        )
        cfg = standard_loop(
            upper_jones=random_unitary(rng),
            delay_jones=random_unitary(rng),
            extra_components=(pdl,),
        )
        # oracle: explicit chains without the coupler factors
        psi = cfg.source_pol.vector
        v = psi.copy()
        for c in cfg.components:
            v = math.sqrt(c.power_transmittance()) * (c.jones.m @ v)
        w = psi.copy()
        for c in reversed(cfg.components):
            w = math.sqrt(c.power_transmittance()) * (c.jones.m.T @ w)
        want = abs(np.vdot(w, v)) / math.sqrt(
            float(np.vdot(v, v).real) * float(np.vdot(w, w).real)
        )
        assert pdl_penalty(cfg) == pytest.approx(want, abs=1e-12)


def test_pdl_penalty_zero_power_rejected():
    pdl = Component(ComponentKind.PDL_ELEMENT, label="pdl", jones=jones.diattenuator(0.0, 0.0))
    cfg = standard_loop(extra_components=(pdl,))
    with pytest.raises(ValueError, match="single-path power"):
        pdl_penalty(cfg)


# ---------------------------------------------------------------- types


def test_phase_pair_reduction_and_delta():
    p = PhasePair(-math.pi / 2.0, 3.0 * math.pi)
    assert 0.0 <= p.phi_a < 2.0 * math.pi
    assert p.phi_b == pytest.approx(math.pi)
    assert p.delta == pytest.approx((p.phi_a - p.phi_b) % (2 * math.pi))


def test_component_validation_messages():
    with pytest.raises(ValueError, match="length"):
        Component(ComponentKind.FIBER, label="f", length=-1.0).validate()
    with pytest.raises(ValueError, match="transmittance"):
        Component(ComponentKind.ATTENUATOR, label="a", transmittance=0.0).validate()
    with pytest.raises(ValueError, match="singular value"):
        Component(
            ComponentKind.PDL_ELEMENT, label="p", jones=JonesOperator(np.diag([2.0, 1.0]))
        ).validate()


def test_loop_indexes_phase_modulators():
    cfg = standard_loop()
    assert cfg.components[cfg.alice_pm_index].owner == "alice"
    assert cfg.components[cfg.bob_pm_index].owner == "bob"
