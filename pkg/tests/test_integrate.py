"""Integrator checks: analytic oracles, order measurement, exactness, drift."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from choreo.integrate import (
    BlowUpError,
    IntegratorConfig,
    integrate_functions,
    integrate_horizon,
    poincare_crossings,
    step,
)
from choreo.model import (
    ConfinementPotential,
    InteractionPotential,
    PhaseState,
    SystemSpec,
)


def vertical_spec(delta, alpha, d=1):
    inter = InteractionPotential(kind="cosine-test", params={"strength": 0.0})
    conf = ConfinementPotential(alpha=alpha, lengths=(np.pi,) * d)
    return SystemSpec(N=1, d=d, delta=delta, interaction=inter, confinement=conf)


def vertical_period_oracle(delta, alpha, E):
    """Independent quadrature of T(E) = 2 int dq / sqrt(2(E - delta V))."""
    V = lambda q: delta / np.sin(q) ** alpha
    qt = brentq(lambda q: E - V(q), 1e-12, np.pi / 2 - 1e-12)
    # substitution q = qt + u^2 kills the turning singularity; half by symmetry
    def integrand(u):
        q = qt + u * u
        return 2.0 * u / np.sqrt(2.0 * (E - V(q)))
    half, _ = quad(integrand, 0.0, np.sqrt(np.pi / 2 - qt), limit=200)
    return 4.0 * half


# ----------------------------------------------------------- harmonic oracle


def harmonic_step_error(method, dt):
    cfg = IntegratorConfig(method=method, dt=dt)
    q0 = np.array([[1.0]])
    p0 = np.array([[0.0]])
    qs, ps, _ = integrate_functions(lambda q: q, lambda q, p: 0.5 * (q[0, 0] ** 2 + p[0, 0] ** 2),
                                    q0, p0, cfg, 2 * np.pi)
    return float(np.hypot(qs[0, 0] - 1.0, ps[0, 0]))


def test_harmonic_one_period_return():
    assert harmonic_step_error("splitting-order-2", 1e-3) < 1e-6


def test_order2_convergence_ratio():
    e1 = harmonic_step_error("splitting-order-2", 2e-3)
    e2 = harmonic_step_error("splitting-order-2", 1e-3)
    assert 3.3 < e1 / e2 < 4.9


def test_order4_convergence_ratio():
    e1 = harmonic_step_error("splitting-order-4", 4e-3)
    e2 = harmonic_step_error("splitting-order-4", 2e-3)
    assert 11.0 < e1 / e2 < 22.0


def test_free_particle_exact():
    spec = vertical_spec(0.0, 4.0, d=2)
    state = PhaseState(q=np.array([[1.0, 1.5]]), p=np.array([[0.25, -0.125]]), t=0.0)
    cfg = IntegratorConfig(method="splitting-order-2", dt=0.125)
    out = step(spec, state, cfg)
    assert np.array_equal(out.q, state.q + 0.125 * state.p)
    assert np.array_equal(out.p, state.p)


# ----------------------------------------------------------- event-driven


def test_event_driven_sawtooth_exact():
    spec = vertical_spec(0.0, 2.0, d=1)
    state = PhaseState(q=np.array([[0.3]]), p=np.array([[1.0]]), t=0.0)
    cfg = IntegratorConfig(method="event-driven", dt=np.pi / 7)
    traj = integrate_horizon(spec, state, cfg, np.pi)
    assert abs(traj.qs[-1, 0, 0] - (np.pi - 0.3)) <= 1e-14
    assert traj.ps[-1, 0, 0] == -1.0


def test_event_driven_conserves_speed_bitwise():
    spec = vertical_spec(0.0, 2.0, d=2)
    state = PhaseState(q=np.array([[0.4, 1.0]]), p=np.array([[0.7303, -1.25]]), t=0.0)
    cfg = IntegratorConfig(method="event-driven", dt=0.21)
    traj = integrate_horizon(spec, state, cfg, 40.0)
    assert np.all(np.abs(traj.ps[:, 0, 0]) == 0.7303)
    assert np.all(np.abs(traj.ps[:, 0, 1]) == 1.25)
    assert np.all(traj.energies == traj.energies[0])
    walls = [e for e in traj.events if e["kind"] == "reflection"]
    assert len(walls) > 10


def test_event_driven_requires_zero_delta():
    spec = vertical_spec(1e-3, 4.0)
    state = PhaseState(q=np.array([[1.0]]), p=np.array([[1.0]]), t=0.0)
    cfg = IntegratorConfig(method="event-driven", dt=0.1)
    with pytest.raises(ValueError):
        integrate_horizon(spec, state, cfg, 1.0)


# ----------------------------------------------------------- wall handling


def make_vertical_state(spec, E=0.5, q0=np.pi / 2, sign=1.0):
    V = spec.delta * spec.confinement.value(np.array([q0]))
    p0 = sign * np.sqrt(2.0 * (E - float(V)))
    return PhaseState(q=np.array([[q0]]), p=np.array([[p0]]), t=0.0)


def test_reversibility_through_turning():
    spec = vertical_spec(1e-3, 4.0)
    state = make_vertical_state(spec)
    cfg = IntegratorConfig(method="splitting-order-2", dt=2e-3)
    T = 3.7  # crosses the ceiling turning point
    traj = integrate_horizon(spec, state, cfg, T)
    back = PhaseState(q=traj.qs[-1].copy(), p=-traj.ps[-1].copy(), t=0.0)
    traj2 = integrate_horizon(spec, back, cfg, T)
    assert abs(traj2.qs[-1, 0, 0] - state.q[0, 0]) < 1e-6
    assert abs(traj2.ps[-1, 0, 0] + state.p[0, 0]) < 1e-6


def test_energy_drift_over_1e5_steps():
    delta, alpha = 1e-3, 4.0
    spec = vertical_spec(delta, alpha)
    T_half = vertical_period_oracle(delta, alpha, 0.5)
    dt = T_half / 2000.0
    cfg = IntegratorConfig(method="splitting-order-2", dt=dt)
    state = make_vertical_state(spec)
    traj = integrate_horizon(spec, state, cfg, 1e5 * dt, record_stride=50)
    H0 = traj.energies[0]
    dev = np.abs(traj.energies - H0)
    drift = dev.max() / abs(H0)
    assert drift < 1e-6
    # oscillation, not accumulation: late-run envelope comparable to early-run
    n = len(dev)
    assert dev[-n // 5:].max() < 3.0 * max(dev[: n // 5].max(), 1e-12)
    # single nominal step (no substepping) from exact data: the energy
    # relation p^2 = 2(E - dV(q)) gives exact on-orbit anchors in the layer;
    # the adaptive run must beat 100x the method's raw one-step error there
    E = 0.5
    V = lambda q: delta / np.sin(q) ** alpha
    raw = IntegratorConfig(method="splitting-order-2", dt=dt, max_substeps=1)
    single = 0.0
    for frac in (0.02, 0.1, 0.25, 0.6, 0.95):
        qa = brentq(lambda q: V(q) - frac * E, 1e-9, np.pi / 2)
        pa = -np.sqrt(2.0 * (E - V(qa)))
        anchor = PhaseState(q=np.array([[qa]]), p=np.array([[pa]]), t=0.0)
        after = step(spec, anchor, raw)
        Ha = 0.5 * after.p[0, 0] ** 2 + V(after.q[0, 0])
        single = max(single, abs(Ha - E))
    assert drift * abs(H0) <= 100.0 * max(single, 1e-12)


def test_blowup_detection():
    spec = vertical_spec(1.0, 2.0)
    state = PhaseState(q=np.array([[0.05]]), p=np.array([[-1.0]]), t=0.0)
    cfg = IntegratorConfig(method="splitting-order-2", dt=0.5, max_substeps=1)
    with pytest.raises(BlowUpError):
        integrate_horizon(spec, state, cfg, 2.0)


# ----------------------------------------------------------- observers


def test_observer_call_count():
    spec = vertical_spec(0.0, 2.0, d=1)
    state = PhaseState(q=np.array([[1.0]]), p=np.array([[0.1]]), t=0.0)
    cfg = IntegratorConfig(method="splitting-order-2", dt=0.01)
    for T, stride in [(1.0, 0.3), (1.0, 0.25), (2.5, 1.0)]:
        calls = []
        integrate_horizon(spec, state, cfg, T,
                          observers=[lambda s: calls.append(s.t)],
                          observer_stride=stride)
        assert len(calls) == int(np.ceil(T / stride))


# ----------------------------------------------------------- Poincare


def test_poincare_circle_crossings():
    cfg = IntegratorConfig(method="splitting-order-2", dt=1e-3)
    q0 = np.array([[1.0]])
    p0 = np.array([[0.0]])
    _, _, traj = integrate_functions(lambda q: q, lambda q, p: 0.5 * (q[0, 0] ** 2 + p[0, 0] ** 2),
                                     q0, p0, cfg, 2 * np.pi, record_stride=10)
    events = poincare_crossings(traj, lambda st: st.q[0, 0])
    assert len(events) == 2
    assert abs(events[0].t - np.pi / 2) < 1e-4
    assert abs(events[1].t - 3 * np.pi / 2) < 1e-4
    for ev in events:
        assert abs(ev.value) < 1e-10
    assert events[0].direction == -1
    assert events[1].direction == 1


def test_poincare_on_vertical_system():
    spec = vertical_spec(1e-3, 4.0)
    state = make_vertical_state(spec)
    cfg = IntegratorConfig(method="splitting-order-2", dt=2e-3)
    traj = integrate_horizon(spec, state, cfg, 12.0, record_stride=7)
    events = poincare_crossings(traj, lambda st: st.q[0, 0] - np.pi / 2)
    # crossings alternate in direction, roughly half a period apart
    assert len(events) >= 3
    for ev in events:
        assert abs(ev.value) < 1e-10
    gaps = np.diff([ev.t for ev in events])
    T_half = vertical_period_oracle(1e-3, 4.0, 0.5)
    assert np.allclose(gaps, T_half / 2, rtol=0.02)


def test_turning_events_logged():
    spec = vertical_spec(1e-3, 4.0)
    state = make_vertical_state(spec)
    cfg = IntegratorConfig(method="splitting-order-2", dt=2e-3)
    T_half = vertical_period_oracle(1e-3, 4.0, 0.5)
    traj = integrate_horizon(spec, state, cfg, 2.2 * T_half)
    turns = [e for e in traj.events if e["kind"] == "turning"]
    assert len(turns) >= 4
    gaps = np.diff([e["t"] for e in turns])
    assert np.allclose(gaps, T_half / 2, rtol=0.02)


# ----------------------------------------------------------- export


def test_csv_and_ndjson_export(tmp_path):
    from choreo.integrate import export_events_ndjson, export_trajectory_csv

    spec = vertical_spec(1e-3, 4.0)
    state = make_vertical_state(spec)
    cfg = IntegratorConfig(method="splitting-order-2", dt=5e-3)
    traj = integrate_horizon(spec, state, cfg, 8.0, record_stride=20)
    csv_path = tmp_path / "traj.csv"
    export_trajectory_csv(traj, csv_path)
    header = csv_path.read_text().splitlines()[0]
    assert header.split(",") == ["t", "q0_0", "p0_0", "H"]
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    assert data.shape[0] == len(traj.times)
    nd_path = tmp_path / "events.ndjson"
    export_events_ndjson(traj, nd_path)
    import json
    lines = [json.loads(l) for l in nd_path.read_text().splitlines()]
    assert len(lines) == len(traj.events)
    assert all("t" in rec and "kind" in rec for rec in lines)


# ------------------------------------------------- fused force closures


@pytest.mark.parametrize("kind,params,rho", [
    ("inverse-square-shifted", {"strength": 10.0, "shift": 1.0}, 0.1),
    ("inverse-power-with-core", {"strength": 2.0, "power": 3.0}, 0.2),
    ("cosine-test", {"strength": 1.3}, 0.0),
    ("quartic-test", {"a4": 0.7, "a2": -0.3}, 0.0),
])
def test_fast_closures_match_generic_evaluators(kind, params, rho):
    """The hot-loop closures must agree with eval_gradient / eval_energy."""
    from choreo.integrate import _spec_functions
    from choreo.model import cutoff, eval_energy, eval_gradient

    rng = np.random.default_rng(11)
    base = InteractionPotential(kind=kind, rho=rho, params=params)
    for W in (base, cutoff(base, 50.0)):
        for N, d in ((1, 1), (2, 2), (4, 3)):
            conf = ConfinementPotential(alpha=4.0, lengths=(np.pi,) * d)
            spec = SystemSpec(N=N, d=d, delta=1e-3, interaction=W,
                              confinement=conf)
            grad, energy = _spec_functions(spec)
            for _ in range(25):
                while True:
                    q = rng.uniform(0.4, np.pi - 0.4, size=(N, d))
                    sep = [np.linalg.norm(q[i] - q[j])
                           for i in range(N) for j in range(i + 1, N)]
                    if not sep or min(sep) > rho + 0.05:
                        break
                p = rng.normal(size=(N, d))
                g0, _ = eval_gradient(spec, PhaseState(q=q, p=p))
                e0 = eval_energy(spec, PhaseState(q=q, p=p))
                gscale = max(np.max(np.abs(g0)), 1.0)
                assert np.max(np.abs(grad(q) - g0)) <= 1e-14 * gscale
                assert abs(energy(q, p) - e0) <= 1e-14 * max(abs(e0), 1.0)


def test_fast_closures_domain_and_core_checks():
    from choreo.integrate import _spec_functions
    from choreo.model import DomainViolation

    W = InteractionPotential(kind="inverse-square-shifted", rho=0.5,
                             params={"strength": 1.0, "shift": 1.0})
    conf = ConfinementPotential(alpha=4.0, lengths=(np.pi, np.pi))
    spec = SystemSpec(N=2, d=2, delta=1e-3, interaction=W, confinement=conf)
    grad, energy = _spec_functions(spec)
    with pytest.raises(DomainViolation):
        grad(np.array([[-0.1, 1.0], [1.0, 1.0]]))
    with pytest.raises(DomainViolation):
        energy(np.array([[1.0, 1.0], [1.2, 1.0]]), np.zeros((2, 2)))
    # delta=0 short-circuits both checks
    spec0 = SystemSpec(N=2, d=2, delta=0.0, interaction=W, confinement=conf)
    g0, e0 = _spec_functions(spec0)
    q = np.array([[1.0, 1.0], [1.2, 1.0]])
    assert np.all(g0(q) == 0.0)
    assert e0(q, np.ones((2, 2))) == 2.0
