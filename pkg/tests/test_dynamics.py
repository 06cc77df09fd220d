import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from surfilm import constitutive as C
from surfilm.constitutive import ModelParams, SigmaModel
from surfilm.dynamics import (AuxFields, State, StepControl, StepFailure, admissible,
                              assemble_aux, explicit_step, fluxes_J, fluxes_j_limit,
                              fluxes_j_limit_alpha1, lift, lift_state, original_fluxes,
                              regularized_fluxes, run, step, try_step)
from surfilm.grid import Field, Grid
from surfilm.helmholtz import BarrierError

from test_helmholtz import dense_pressure, dense_smooth


def random_state(rng, params, n=48, lifted=True, low=0.0):
    g = Grid(n, 1.0)
    if lifted:
        h = rng.uniform(params.sqrt_eps + low, 3.0, n)
        gam = rng.uniform(params.eps + low, 3.0, n)
    else:
        h = rng.uniform(low, 3.0, n)
        gam = rng.uniform(low, 3.0, n)
    return State.from_arrays(g, h, gam)


def cosine_state(params, n=64, lifted=True, amp=0.5):
    g = Grid(n, 1.0)
    x = g.cell_centers
    h, gam = 1 + amp * np.cos(np.pi * x), 1 + amp * np.cos(np.pi * x)
    if lifted:
        h, gam = lift(h, gam, params.eps)
    return State.from_arrays(g, h, gam)


def scale(*arrs):
    return max(1.0, *(float(np.max(np.abs(a))) for a in arrs))


# ------------------------------------------------------------------ state

def test_state_validation():
    g = Grid(4)
    with pytest.raises(ValueError):
        State.from_arrays(g, [1, 1, -1e-3, 1], [1, 1, 1, 1])
    with pytest.raises(ValueError):
        State(0.0, g.constant(1.0), Grid(5).constant(1.0))
    s = State.from_arrays(g, np.ones(4), np.ones(4), 0.5)
    assert s.t == 0.5 and s.grid == g


def test_lift(linear_params):
    s = lift_state(State.from_arrays(Grid(4), np.zeros(4), np.zeros(4)), 0.04)
    np.testing.assert_allclose(s.h.values, 0.2)
    np.testing.assert_allclose(s.gamma.values, 0.04)


# ------------------------------------------------------------ step control

def test_step_control_growth_and_shrink():
    c = StepControl(dt=1.0, dt_max=2.0)
    for _ in range(4):
        c.accepted()
    assert c.dt == 1.0
    c.accepted()
    assert c.dt == pytest.approx(1.2)
    for _ in range(40):
        c.accepted()
    assert c.dt == 2.0
    s = State.from_arrays(Grid(4), np.ones(4), np.ones(4))
    c.rejected(s, "test")
    assert c.dt == 1.0 and c.n_rejected == 1


def test_step_control_failure():
    s = State.from_arrays(Grid(4), np.ones(4), np.ones(4))
    c = StepControl(dt=1e-3, dt_min=4e-4)
    c.rejected(s, "x")
    with pytest.raises(StepFailure) as info:
        c.rejected(s, "x")
    assert info.value.state is s
    c = StepControl(dt=1.0, dt_min=1e-300, max_rejects=3)
    for _ in range(3):
        c.rejected(s, "x")
    with pytest.raises(StepFailure):
        c.rejected(s, "x")


def test_step_control_validation():
    with pytest.raises(ValueError):
        StepControl(dt=1.0, dt_max=0.5)
    with pytest.raises(ValueError):
        StepControl(dt=1.0, shrink=1.0)
    f = StepControl.fixed(0.1)
    for _ in range(10):
        f.accepted()
    assert f.dt == 0.1


# -------------------------------------------------------------------- aux

def test_aux_of_constant(linear_params):
    g = Grid(16)
    s = State.from_arrays(g, np.full(16, 1.3), np.full(16, 0.7))
    aux = assemble_aux(s, linear_params)
    np.testing.assert_allclose(aux.H.values, 1.3, rtol=1e-14)
    np.testing.assert_allclose(aux.A.values, C.alpha1(1.3, 1.0), rtol=1e-14)
    np.testing.assert_allclose(aux.B.values, 0.7, rtol=1e-14)
    np.testing.assert_allclose(aux.Sigma.values, linear_params.sigma.sigma(0.7), rtol=1e-14)


def test_aux_on_lifted_data_respects_barriers(linear_params, rng):
    for _ in range(10):
        g = Grid(40)
        h, gam = lift(rng.uniform(0, 2, 40), rng.uniform(0, 2, 40), linear_params.eps)
        aux = assemble_aux(State.from_arrays(g, h, gam), linear_params)
        assert np.min(aux.H.values) >= linear_params.sqrt_eps * (1 - 1e-14)
        assert np.min(aux.B.values) >= linear_params.eps * (1 - 1e-14)


@pytest.mark.parametrize("pname", ["linear_params", "log_params"])
def test_aux_vs_dense(pname, request, rng):
    p = request.getfixturevalue(pname)
    s = random_state(rng, p, n=40)
    aux = assemble_aux(s, p)
    dx, eps = s.grid.dx, p.eps
    H = dense_smooth(s.h.values, eps, dx)
    assert np.max(np.abs(aux.H.values - H)) < 1e-12
    assert np.max(np.abs(aux.A.values - dense_smooth(C.alpha1(s.h.values, p.G), eps, dx))) < 1e-12
    assert np.max(np.abs(aux.B.values - dense_smooth(s.gamma.values, eps, dx))) < 1e-12
    S = dense_pressure(p.sigma.sigma(s.gamma.values), aux.H.values, eps, dx)
    assert np.max(np.abs(aux.Sigma.values - S)) < 1e-12


# ------------------------------------------------------------------ fluxes

def _oracle_regularized(s, aux, p):
    # face-by-face evaluation of the regularized fluxes
    h, g = s.h.values, s.gamma.values
    dx, n, G, eps, e1 = s.grid.dx, s.grid.n_cells, p.G, p.eps, p.eta1
    sig = p.sigma
    Fh, Fg = np.zeros(n + 1), np.zeros(n + 1)
    for k in range(1, n):
        hf = 0.5 * (h[k - 1] + h[k])
        gf = 0.5 * (g[k - 1] + g[k])
        Hf = 0.5 * (aux.H.values[k - 1] + aux.H.values[k])
        Bf = 0.5 * (aux.B.values[k - 1] + aux.B.values[k])
        a1 = G * hf**3 / 3
        a2 = 0.5 * (hf - math.sqrt(eps)) ** 2
        b2 = gf - eps
        a0 = e1 * Hf + (1 - e1) * hf
        dal = (0.4 * math.sqrt(G / 3) * (h[k] ** 2.5 - h[k - 1] ** 2.5)) / dx
        dS = (aux.Sigma.values[k] - aux.Sigma.values[k - 1]) / dx
        dA = (aux.A.values[k] - aux.A.values[k - 1]) / dx
        dg = (g[k] - g[k - 1]) / dx
        dsig = (float(sig.sigma(g[k])) - float(sig.sigma(g[k - 1]))) / dx
        b1g = gf * abs(float(sig.sigma_prime(gf)))
        b1B = Bf * abs(float(sig.sigma_prime(Bf)))
        Fh[k] = math.sqrt(a1) * dal - a2 * math.sqrt(Hf) / math.sqrt(hf) * dS
        Fg[k] = (G * a2 * b2 * math.sqrt(a0) / math.sqrt(hf * a1) * dA
                 + p.D * b1g / b1B * dg - a0 * gf * dsig)
    return Fh, Fg


def _oracle_original(s, p):
    h, g = s.h.values, s.gamma.values
    dx, n, G, sig = s.grid.dx, s.grid.n_cells, p.G, p.sigma
    Fh, Fg = np.zeros(n + 1), np.zeros(n + 1)
    for k in range(1, n):
        hf = 0.5 * (h[k - 1] + h[k])
        gf = 0.5 * (g[k - 1] + g[k])
        a1 = G * hf**3 / 3
        dal = 0.4 * math.sqrt(G / 3) * (h[k] ** 2.5 - h[k - 1] ** 2.5) / dx
        dsig = (float(sig.sigma(g[k])) - float(sig.sigma(g[k - 1]))) / dx
        dg = (g[k] - g[k - 1]) / dx
        dh = dal / math.sqrt(a1) if a1 > 0 else 0.0
        Fh[k] = math.sqrt(a1) * dal - 0.5 * hf * hf * dsig
        Fg[k] = 0.5 * G * hf * hf * gf * dh + p.D * dg - hf * gf * dsig
    return Fh, Fg


@pytest.mark.parametrize("pname", ["linear_params", "log_params"])
def test_constant_state_has_zero_fluxes(pname, request):
    p = request.getfixturevalue(pname)
    s = State.from_arrays(Grid(12), np.full(12, 1.4), np.full(12, 0.9))
    aux = assemble_aux(s, p)
    for F in (*regularized_fluxes(s, aux, p), *original_fluxes(s, p), *fluxes_J(s, aux, p),
              *fluxes_j_limit(s, p)):
        assert np.max(np.abs(F)) < 1e-13


@pytest.mark.parametrize("pname", ["linear_params", "log_params"])
def test_regularized_fluxes_vs_oracle(pname, request, rng):
    p = request.getfixturevalue(pname)
    s = random_state(rng, p)
    aux = assemble_aux(s, p)
    Fh, Fg = regularized_fluxes(s, aux, p)
    Oh, Og = _oracle_regularized(s, aux, p)
    assert np.max(np.abs(Fh - Oh)) < 1e-12 * scale(Oh)
    assert np.max(np.abs(Fg - Og)) < 1e-12 * scale(Og)
    assert Fh[0] == Fh[-1] == Fg[0] == Fg[-1] == 0.0


def test_gamma_flux_cross_term_only(linear_params):
    p = linear_params
    g = Grid(64)
    x = g.cell_centers
    s = State.from_arrays(g, 1.2 + 0.4 * np.cos(np.pi * x), np.full(64, 0.8))
    aux = assemble_aux(s, p)
    _, Fg = regularized_fluxes(s, aux, p)
    hf = 0.5 * (s.h.values[1:] + s.h.values[:-1])
    Hf = 0.5 * (aux.H.values[1:] + aux.H.values[:-1])
    a1 = hf**3 / 3
    a2 = 0.5 * (hf - 0.1) ** 2
    a0 = 0.875 * Hf + 0.125 * hf
    direct = a2 * (0.8 - 0.01) * np.sqrt(a0) / np.sqrt(hf * a1) * np.diff(aux.A.values) / g.dx
    assert np.max(np.abs(Fg[1:-1] - direct)) < 1e-12 * scale(direct)


@pytest.mark.parametrize("pname", ["linear_params", "log_params"])
def test_gamma_diffusivity_positive(pname, request, rng):
    from surfilm.dynamics import _regularized_parts
    p = request.getfixturevalue(pname)
    for _ in range(20):
        s = random_state(rng, p)
        parts = _regularized_parts(s, assemble_aux(s, p), p)
        assert np.all(parts.k_g > 0)
        assert np.all(parts.k_h > 0)


@pytest.mark.parametrize("pname", ["linear_params", "log_params"])
def test_original_fluxes_vs_oracle(pname, request, rng):
    p = request.getfixturevalue(pname)
    s = random_state(rng, p, lifted=False)
    Fh, Fg = original_fluxes(s, p)
    Oh, Og = _oracle_original(s, p)
    assert np.max(np.abs(Fh - Oh)) < 1e-12 * scale(Oh)
    assert np.max(np.abs(Fg - Og)) < 1e-12 * scale(Og)


def test_original_fluxes_dry_film(linear_params, rng):
    g = Grid(30)
    gam = rng.uniform(0, 2, 30)
    s = State.from_arrays(g, np.zeros(30), gam)
    Fh, Fg = original_fluxes(s, linear_params)
    assert np.all(Fh == 0)
    np.testing.assert_allclose(Fg[1:-1], 0.1 * np.diff(gam) / g.dx, rtol=1e-14)


def test_original_fluxes_converge_to_continuum(linear_params):
    # face fluxes of smooth profiles against the exact flux at the faces
    p = linear_params
    errs = []
    for n in (32, 64, 128):
        g = Grid(n)
        x, xf = g.cell_centers, g.faces
        s = State.from_arrays(g, 1 + 0.3 * np.cos(np.pi * x), 1 + 0.4 * np.cos(2 * np.pi * x))
        Fh, Fg = original_fluxes(s, p)
        h, hx = 1 + 0.3 * np.cos(np.pi * xf), -0.3 * np.pi * np.sin(np.pi * xf)
        G_, gx = 1 + 0.4 * np.cos(2 * np.pi * xf), -0.8 * np.pi * np.sin(2 * np.pi * xf)
        eh = h**3 / 3 * hx + 0.5 * h * h * gx
        eg = 0.5 * h * h * G_ * hx + (0.1 + h * G_) * gx
        errs.append(max(np.max(np.abs(Fh - eh)), np.max(np.abs(Fg - eg))))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_barrier_guard(linear_params):
    g = Grid(8)
    s = State.from_arrays(g, np.full(8, 1.0), np.full(8, 1.0))
    aux = assemble_aux(s, linear_params)
    low = State.from_arrays(g, np.full(8, 0.01), np.full(8, 1.0))
    with pytest.raises(BarrierError):
        regularized_fluxes(low, aux, linear_params)
    bad_aux = AuxFields(aux.H, aux.A, g.constant(1e-5), aux.Sigma)
    with pytest.raises(BarrierError):
        regularized_fluxes(s, bad_aux, linear_params)


@pytest.mark.parametrize("pname", ["linear_params", "log_params"])
def test_h_flux_equals_minus_sqrt_a1_Jf(pname, request, rng):
    p = request.getfixturevalue(pname)
    for _ in range(20):
        s = random_state(rng, p)
        aux = assemble_aux(s, p)
        Fh, _ = regularized_fluxes(s, aux, p)
        J_f, _ = fluxes_J(s, aux, p)
        hf = 0.5 * (s.h.values[1:] + s.h.values[:-1])
        target = -np.sqrt(C.a1(hf, p.G)) * J_f[1:-1]
        assert np.max(np.abs(Fh[1:-1] - target)) < 1e-12 * scale(target)


@pytest.mark.parametrize("pname", ["linear_params", "log_params"])
def test_j_limit_two_routes(pname, request, rng):
    p = request.getfixturevalue(pname)
    for _ in range(20):
        s = random_state(rng, p, lifted=False)
        a, b = fluxes_j_limit(s, p), fluxes_j_limit_alpha1(s, p)
        for u, v in zip(a, b):
            assert np.max(np.abs(u - v)) < 1e-12 * scale(u)


@pytest.mark.parametrize("pname", ["linear_params", "log_params"])
def test_eps_to_zero_substitution(pname, request, rng):
    p = request.getfixturevalue(pname)
    for _ in range(10):
        s = random_state(rng, p)
        g = s.grid
        aux0 = AuxFields(s.h, Field(g, C.alpha1(s.h.values, p.G)), s.gamma,
                         Field(g, p.sigma.sigma(s.gamma.values)))
        Fh, Fg = regularized_fluxes(s, aux0, p, mobilities=(lambda r: 0.5 * r * r,
                                                            lambda r: r))
        Oh, Og = original_fluxes(s, p)
        assert np.max(np.abs(Fh - Oh)) < 1e-12 * scale(Oh)
        assert np.max(np.abs(Fg - Og)) < 1e-12 * scale(Og)


# -------------------------------------------------------------------- steps

@pytest.mark.parametrize("scheme", ["regularized", "original"])
@given(st.floats(0.2, 5.0), st.floats(0.05, 3.0), st.floats(1e-6, 1e-1))
def test_constants_are_fixed_points(scheme, hbar, gbar, dt):
    p = ModelParams(1.0, 0.1, SigmaModel.logarithmic(1.0, 0.8, 2.0, 1, 5.0), eps=1e-2)
    s = State.from_arrays(Grid(16), np.full(16, hbar), np.full(16, gbar))
    new, reason = try_step(s, p, dt, scheme)
    assert reason is None
    assert np.max(np.abs(new.h.values - hbar)) <= 1e-14 * max(1, hbar)
    assert np.max(np.abs(new.gamma.values - gbar)) <= 1e-14 * max(1, gbar)


@pytest.mark.parametrize("scheme", ["regularized", "original"])
def test_step_conserves_mass(scheme, linear_params, log_params, rng):
    for p in (linear_params, log_params):
        # rough random data; kept away from 0 so every step is accepted
        s = random_state(rng, p, n=64, low=0.5)
        m0 = np.sum(s.h.values), np.sum(s.gamma.values)
        c = StepControl(dt=1e-6)
        for _ in range(5):
            s, ok = step(s, p, c, scheme)
            assert ok
        assert abs(np.sum(s.h.values) - m0[0]) <= 1e-12 * m0[0]
        assert abs(np.sum(s.gamma.values) - m0[1]) <= 1e-12 * m0[1]


@pytest.mark.parametrize("scheme", ["regularized", "original"])
def test_step_agrees_with_explicit_to_second_order(scheme, linear_params):
    s = cosine_state(linear_params, n=32)
    diffs = []
    for dt in (1e-4, 5e-5, 2.5e-5):
        a, _ = try_step(s, linear_params, dt, scheme)
        b = explicit_step(s, linear_params, dt, scheme)
        diffs.append(max(np.max(np.abs(a.h.values - b.h.values)),
                         np.max(np.abs(a.gamma.values - b.gamma.values))))
    assert diffs[0] / diffs[1] == pytest.approx(4.0, rel=0.05)
    assert diffs[1] / diffs[2] == pytest.approx(4.0, rel=0.05)


def test_rejection_never_clips():
    p = ModelParams(1.0, 0.01, SigmaModel.linear(100.0, 50.0), eps=1e-2)
    g = Grid(64)
    x = g.cell_centers
    h, gam = lift(1 - np.cos(np.pi * x), 1 + np.cos(np.pi * x), p.eps)
    s = State.from_arrays(g, h, gam)
    new, reason = try_step(s, p, 1e-2)
    assert reason is not None and "below floor" in reason
    assert new is s
    c = StepControl(dt=1e-2, dt_max=1e-2)
    seen = []
    summary = run(s, p, c, 0.02, observers=[lambda st, aux, stop: seen.append(st)])
    assert summary.n_rejected > 0
    m0 = np.sum(h)
    for st_ in seen:
        assert admissible(st_.h.values, st_.gamma.values, p, "regularized") is None
        assert abs(np.sum(st_.h.values) - m0) <= 1e-12 * m0


def test_run_hard_failure_carries_state():
    p = ModelParams(1.0, 0.01, SigmaModel.linear(100.0, 50.0), eps=1e-2)
    g = Grid(64)
    x = g.cell_centers
    h, gam = lift(1 - np.cos(np.pi * x), 1 + np.cos(np.pi * x), p.eps)
    s = State.from_arrays(g, h, gam)
    with pytest.raises(StepFailure) as info:
        run(s, p, StepControl(dt=1e-2, dt_min=5e-3), 0.1)
    assert info.value.state.t == 0.0


def test_run_rejects_inadmissible_start(linear_params):
    s = State.from_arrays(Grid(8), np.full(8, 0.05), np.ones(8))
    with pytest.raises(StepFailure):
        run(s, linear_params, StepControl(dt=1e-3), 0.1)


@pytest.mark.parametrize("scheme", ["regularized", "original"])
def test_run_constant_data(scheme, linear_params):
    s = State.from_arrays(Grid(32), np.full(32, 1.1), np.full(32, 0.6))
    summ = run(s, linear_params, StepControl(dt=1e-3, dt_max=0.05), 1.0, scheme)
    assert summ.final.t == 1.0
    assert np.max(np.abs(summ.final.h.values - 1.1)) <= 1e-10
    assert np.max(np.abs(summ.final.gamma.values - 0.6)) <= 1e-10


def test_run_lands_on_stop_times(linear_params):
    s = cosine_state(linear_params, n=16)
    hits = []
    run(s, linear_params, StepControl(dt=7e-4, dt_max=3e-3), 0.05,
        observers=[lambda st, aux, stop: stop and hits.append(st.t)],
        stop_times=[0.0123, 0.03, 0.2])
    assert hits == [0.0, 0.0123, 0.03, 0.05]


def test_run_cosine_barriers_and_mass(linear_params):
    s = cosine_state(linear_params, n=64)
    m0 = np.sum(s.h.values), np.sum(s.gamma.values)
    mins = []
    run(s, linear_params, StepControl(dt=1e-4, dt_max=5e-4), 0.1,
        observers=[lambda st, aux, stop: mins.append((st.h.values.min(), st.gamma.values.min(),
                                                      np.sum(st.h.values),
                                                      np.sum(st.gamma.values)))])
    a = np.array(mins)
    assert np.all(a[:, 0] >= 0.1 - 1e-10) and np.all(a[:, 1] >= 0.01 - 1e-10)
    assert np.max(np.abs(a[:, 2] - m0[0])) <= 1e-12 * m0[0]
    assert np.max(np.abs(a[:, 3] - m0[1])) <= 1e-12 * m0[1]


def test_first_order_in_time(linear_params):
    s = cosine_state(linear_params, n=32)
    T = 0.05

    def final(dt):
        return run(s, linear_params, StepControl.fixed(dt), T).final

    ref = final(T / 2048)
    errs = []
    for k in (32, 64, 128):
        f = final(T / k)
        errs.append(np.max(np.abs(f.h.values - ref.h.values)))
    assert 1.7 < errs[0] / errs[1] < 2.3
    assert 1.7 < errs[1] / errs[2] < 2.3


def test_source_term_enters(linear_params):
    s = State.from_arrays(Grid(8), np.ones(8), np.ones(8))
    new, reason = try_step(s, linear_params, 0.1, "original",
                           source=lambda x, t: (np.full_like(x, 1.0), np.zeros_like(x)))
    assert reason is None
    np.testing.assert_allclose(new.h.values, 1.1, rtol=1e-14)
