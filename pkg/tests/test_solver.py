"""Tests for the discrete shallow water diagnostics, tendencies and stepping."""

import numpy as np
import pytest

from mimswe import solver as slv
from mimswe.errors import BlowUpError, DiagnosticError
from mimswe.fields import Field
from mimswe.topology import MeshTopology


def make_ops(nx=4, ny=4, p=2, mode="exact", L=2 * np.pi):
    mesh = MeshTopology(nx=nx, ny=ny, Lx=L, Ly=L, p=p)
    return slv.Discretization(mesh, mode)


def cosine_stream(x, y):
    return 0.1 * np.cos(x - np.pi) * np.cos(y - np.pi)


def balanced_state(ops, f0=8.0, g=8.0, H=0.2):
    """Velocity from the cosine stream function, depth in geostrophic balance."""
    psi = ops.project("W", cosine_stream)
    u = Field("U", ops.E10f @ psi.data)
    h = ops.project("Q", lambda x, y: (f0 / g) * cosine_stream(x, y) + H)
    physics = slv.Physics(f=ops.constant_coriolis(f0), g=g, H=H)
    return slv.SimState(u=u, h=h, t=0.0), physics


def rest_state(ops, H=8.0, f0=8.0, g=8.0):
    u = Field("U", np.zeros(ops.dofmap.dU))
    h = ops.project("Q", lambda x, y: H * np.ones_like(x))
    physics = slv.Physics(f=ops.constant_coriolis(f0), g=g, H=H)
    return slv.SimState(u=u, h=h, t=0.0), physics


class TestDiagnoseQ:
    def test_rest_gives_f_over_H(self):
        ops = make_ops()
        state, physics = rest_state(ops, H=2.0, f0=6.0)
        q = slv.diagnose_q(state.u, state.h, physics.f, ops)
        assert np.allclose(q.data, 3.0, rtol=1e-11)

    def test_negative_depth_raises(self):
        ops = make_ops(nx=2, ny=2, p=1)
        state, physics = rest_state(ops)
        bad_h = Field("Q", -state.h.data)
        with pytest.raises(DiagnosticError):
            slv.diagnose_q(state.u, bad_h, physics.f, ops)

    def test_rigid_rotation_curl(self):
        # away from the periodic seam, q h - f approximates the constant
        # curl 2*Omega of a rigid rotation
        omega_rot = 0.3
        ops = make_ops(nx=16, ny=16, p=3)
        mesh = ops.mesh
        center = np.pi

        def vel(x, y):
            return -omega_rot * (y - center), omega_rot * (x - center)

        u = ops.project("U", vel)
        H, f0 = 2.0, 1.5
        h = ops.project("Q", lambda x, y: H * np.ones_like(x))
        q = slv.diagnose_q(u, h, ops.constant_coriolis(f0), ops)
        # rigid rotation is not periodic; its seam discontinuity pollutes the
        # mass solve only locally, so sample W nodes >= 5 elements inside
        xn = mesh.node_coords_1d("x")
        keep = (xn > 5 * mesh.dx) & (xn < mesh.Lx - 5 * mesh.dx)
        mask = np.outer(keep, keep).ravel()
        curl = q.data[mask] * H - f0
        assert np.allclose(curl, 2 * omega_rot, rtol=2e-3), (
            f"max dev {np.abs(curl - 2 * omega_rot).max():.2e}")


class TestDiagnoseFK:
    def test_flux_constant_depth(self):
        ops = make_ops(p=3)
        rng = np.random.RandomState(1)
        u = Field("U", rng.uniform(-1, 1, ops.dofmap.dU))
        H = 3.0
        h = ops.project("Q", lambda x, y: H * np.ones_like(x))
        F = slv.diagnose_F(u, h, ops)
        assert np.allclose(F.data, H * u.data, rtol=1e-12, atol=1e-12)

    def test_flux_zero_velocity(self):
        ops = make_ops()
        state, _ = rest_state(ops)
        F = slv.diagnose_F(Field("U", np.zeros(ops.dofmap.dU)), state.h, ops)
        assert np.array_equal(F.data, np.zeros(ops.dofmap.dU))

    def test_kinetic_energy_zero(self):
        ops = make_ops()
        K = slv.diagnose_K(Field("U", np.zeros(ops.dofmap.dU)), ops)
        assert np.array_equal(K.data, np.zeros(ops.dofmap.dQ))

    def test_kinetic_energy_uniform_flow(self):
        # K is 1/2 pointwise, so its cell-integral DOFs are half the areas
        ops = make_ops(p=2)
        mesh = ops.mesh
        u = ops.project("U", lambda x, y: (np.ones_like(x), np.zeros_like(y)))
        K = slv.diagnose_K(u, ops)
        wx = np.diff(mesh.subcell_edges_1d("x"))
        wy = np.diff(mesh.subcell_edges_1d("y"))
        areas = np.outer(wx, wy).ravel()
        assert np.allclose(K.data, 0.5 * areas, rtol=1e-11)


class TestVorticity:
    def test_zero_velocity(self):
        ops = make_ops()
        w = slv.diagnose_vorticity(Field("U", np.zeros(ops.dofmap.dU)), ops)
        assert np.array_equal(w.data, np.zeros(ops.dofmap.dW))

    def test_total_vorticity_vanishes(self):
        ops = make_ops(p=3)
        rng = np.random.RandomState(2)
        u = Field("U", rng.uniform(-1, 1, ops.dofmap.dU))
        w = slv.diagnose_vorticity(u, ops)
        total = np.sum(ops.massW @ w.data)
        assert abs(total) < 1e-11

    def test_laplacian_of_stream_function(self):
        # u = E10 psi-points is discretely rotational; omega approximates
        # the analytic Laplacian of psi at discretization accuracy
        ops = make_ops(nx=8, ny=8, p=3)
        psi = ops.project("W", cosine_stream)
        u = Field("U", ops.E10f @ psi.data)
        w = slv.diagnose_vorticity(u, ops)
        lap = ops.project("W", lambda x, y: -2.0 * cosine_stream(x, y))
        err = np.max(np.abs(w.data - lap.data))
        assert err < 2e-4, f"laplacian mismatch {err:.2e}"


class TestAnticipatedPV:
    def test_tau_zero_identity(self):
        ops = make_ops()
        rng = np.random.RandomState(3)
        q = Field("W", rng.uniform(-1, 1, ops.dofmap.dW))
        u = Field("U", rng.uniform(-1, 1, ops.dofmap.dU))
        qhat = slv.anticipated_pv(q, u, 0.0, ops)
        assert np.array_equal(qhat.data, q.data)

    def test_zero_velocity_identity(self):
        ops = make_ops()
        rng = np.random.RandomState(4)
        q = Field("W", rng.uniform(-1, 1, ops.dofmap.dW))
        u = Field("U", np.zeros(ops.dofmap.dU))
        qhat = slv.anticipated_pv(q, u, 0.5, ops)
        assert np.allclose(qhat.data, q.data, atol=1e-13)

    def test_constant_q_identity(self):
        # E10 applied to a constant vanishes, so advection contributes nothing
        ops = make_ops()
        rng = np.random.RandomState(5)
        q = Field("W", np.full(ops.dofmap.dW, 2.5))
        u = Field("U", rng.uniform(-1, 1, ops.dofmap.dU))
        qhat = slv.anticipated_pv(q, u, 0.7, ops)
        assert np.allclose(qhat.data, q.data, atol=1e-12)


class TestTendency:
    def test_rest_state_stationary(self):
        ops = make_ops()
        state, physics = rest_state(ops)
        du, dh = slv.tendency(state, physics, ops)
        assert np.max(np.abs(du)) < 1e-11
        assert np.max(np.abs(dh)) < 1e-13

    def test_mass_budget_closes_exactly(self):
        ops = make_ops(p=3)
        state, physics = balanced_state(ops)
        du, dh = slv.tendency(state, physics, ops)
        assert abs(np.sum(dh)) < 1e-13 * np.abs(dh).max()

    def test_vorticity_budget_closes(self):
        ops = make_ops(p=3)
        state, physics = balanced_state(ops)
        du, dh = slv.tendency(state, physics, ops)
        # total vorticity tendency: 1^T W domega/dt = -1^T (E10)^T U du/dt
        budget = np.sum(ops.E10fT @ (ops.massU @ du))
        scale = max(np.abs(ops.massU @ du).max(), 1e-30)
        assert abs(budget) < 1e-11 * max(1.0, scale)

    def test_skew_energy_identity(self):
        # F^T U^q F vanishes for the assembled rotational operator
        ops = make_ops(p=3)
        state, physics = balanced_state(ops)
        stage = slv.evaluate_stage(state, physics, ops)
        Uq = ops.coupling("Uq", stage.q).matrix
        F = stage.F.data
        bound = 1e-12 * (F @ F) * np.abs(Uq).max()
        assert abs(F @ (Uq @ F)) <= max(bound, 1e-20)

    def test_initialization_divergence_free(self):
        ops = make_ops(p=3)
        state, _ = balanced_state(ops)
        div = ops.E21 @ state.u.data
        assert np.abs(div).max() < 1e-15

    def test_apv_preserves_mass_vorticity_budgets(self):
        ops = make_ops(p=2)
        state, physics = balanced_state(ops)
        physics.apv_tau = 0.05
        du, dh = slv.tendency(state, physics, ops)
        assert abs(np.sum(dh)) < 1e-12
        budget = np.sum(ops.E10fT @ (ops.massU @ du))
        assert abs(budget) < 1e-11

    def test_spatially_varying_coriolis_budgets_close(self):
        # any W-projected f(x, y) keeps the telescoping budgets exact
        ops = make_ops(p=3)
        state, _ = balanced_state(ops)
        f_var = ops.project("W", lambda x, y: 8.0 + 2.0 * np.sin(y) * np.cos(x))
        physics = slv.Physics(f=f_var, g=8.0, H=0.2)
        du, dh = slv.tendency(state, physics, ops)
        assert abs(np.sum(dh)) < 1e-12
        budget = np.sum(ops.E10fT @ (ops.massU @ du))
        assert abs(budget) < 1e-11


class TestRk2:
    def test_rest_state_bitwise_unchanged(self):
        ops = make_ops()
        state, physics = rest_state(ops)
        new = slv.rk2_step(state, physics, ops, 0.01)
        # tendencies vanish to roundoff; the update adds exact zeros scaled
        # by dt except for solver noise below machine epsilon of the fields
        assert np.allclose(new.u.data, state.u.data, atol=1e-13)
        assert np.allclose(new.h.data, state.h.data, atol=1e-14)

    def test_reverse_step_returns(self):
        ops = make_ops(nx=3, ny=3, p=2)
        state, physics = balanced_state(ops)
        dt = 1e-3
        fwd = slv.rk2_step(state, physics, ops, dt)
        # explicit midpoint is not exactly reversible; composing with the
        # negated step leaves an O(dt^3) defect

        s1 = slv.evaluate_stage(fwd, physics, ops)
        mid = slv.SimState(Field("U", fwd.u.data - 0.5 * dt * s1.du),
                           Field("Q", fwd.h.data - 0.5 * dt * s1.dh), fwd.t)
        s2 = slv.evaluate_stage(mid, physics, ops)
        back_u = fwd.u.data - dt * s2.du
        back_h = fwd.h.data - dt * s2.dh
        du_scale = max(np.abs(s1.du).max(), 1.0)
        assert np.abs(back_u - state.u.data).max() < 10 * dt**3 * du_scale
        assert np.abs(back_h - state.h.data).max() < 10 * dt**3

    def test_local_order_three_vs_rk4_oracle(self):
        ops = make_ops(nx=3, ny=3, p=2)
        state, physics = balanced_state(ops)

        def rk4(y, dt):
            def f(s):
                du, dh = slv.tendency(s, physics, ops)
                return du, dh
            k1 = f(y)
            y2 = slv.SimState(Field("U", y.u.data + 0.5 * dt * k1[0]),
                              Field("Q", y.h.data + 0.5 * dt * k1[1]), y.t)
            k2 = f(y2)
            y3 = slv.SimState(Field("U", y.u.data + 0.5 * dt * k2[0]),
                              Field("Q", y.h.data + 0.5 * dt * k2[1]), y.t)
            k3 = f(y3)
            y4 = slv.SimState(Field("U", y.u.data + dt * k3[0]),
                              Field("Q", y.h.data + dt * k3[1]), y.t)
            k4 = f(y4)
            un = y.u.data + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            hn = y.h.data + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            return np.concatenate([un, hn])

        def rk2(y, dt):
            n = slv.rk2_step(y, physics, ops, dt)
            return np.concatenate([n.u.data, n.h.data])

        dt = 2e-3
        defect1 = np.linalg.norm(rk2(state, dt) - rk4(state, dt))
        defect2 = np.linalg.norm(rk2(state, dt / 2) - rk4(state, dt / 2))
        ratio = defect1 / defect2
        assert 6.0 < ratio < 10.5, f"local order ratio {ratio:.2f}, expected ~8"

    def test_blowup_detection(self):
        ops = make_ops(nx=2, ny=2, p=1)
        state, physics = rest_state(ops)
        state.u.data[0] = np.nan
        with pytest.raises(BlowUpError):
            slv.rk2_step(state, physics, ops, 0.01)


class TestExtendedRk2:
    def test_stage_coefficients_realize_damped_polynomial(self):
        # nested gammas must produce 1 + z + z^2/2 + a3 z^3 + a4 z^4 + a5 z^5
        # with the theta^4 damping coefficient 2 a3 - 2 a4 - 1/4 = 0.05
        g1, g2, g3, g4 = slv.EXTENDED_STAGES
        assert g4 == 0.5
        a3 = g4 * g3
        a4 = a3 * g2
        a5 = a4 * g1
        assert abs(2 * a3 - 2 * a4 - 0.25 - 0.05) < 1e-7
        # stability: |R(i theta)| <= 1 up to theta = 3.9
        th = np.linspace(0, 3.9, 20001)
        z = 1j * th
        R = 1 + z + z**2 / 2 + a3 * z**3 + a4 * z**4 + a5 * z**5
        assert np.abs(R).max() <= 1.0 + 1e-12

    def test_local_order_matches_midpoint(self):
        # second order: halving dt cuts the one-step defect vs RK4 by ~8
        ops = make_ops(nx=3, ny=3, p=2)
        state, physics = balanced_state(ops)

        def defect(step, dt):
            ref = state
            a = step(ref, physics, ops, dt)
            # RK4 oracle
            def f(s):
                return slv.tendency(s, physics, ops)
            k1 = f(ref)
            y2 = slv.SimState(Field("U", ref.u.data + 0.5 * dt * k1[0]),
                              Field("Q", ref.h.data + 0.5 * dt * k1[1]), ref.t)
            k2 = f(y2)
            y3 = slv.SimState(Field("U", ref.u.data + 0.5 * dt * k2[0]),
                              Field("Q", ref.h.data + 0.5 * dt * k2[1]), ref.t)
            k3 = f(y3)
            y4 = slv.SimState(Field("U", ref.u.data + dt * k3[0]),
                              Field("Q", ref.h.data + dt * k3[1]), ref.t)
            k4 = f(y4)
            un = ref.u.data + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            hn = ref.h.data + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            return np.linalg.norm(np.concatenate([a.u.data - un, a.h.data - hn]))

        dt = 2e-3
        ratio = defect(slv.rk2_extended_step, dt) / defect(slv.rk2_extended_step, dt / 2)
        assert 6.0 < ratio < 10.5, f"extended scheme local order ratio {ratio:.2f}"

    def test_survives_wave_cfl_where_midpoint_explodes(self):
        # pick dt so that sigma_max * dt ~ 2.4: beyond the midpoint rule's
        # oscillatory tolerance but inside the extended interval
        ops = make_ops(nx=8, ny=8, p=3)
        state, physics = balanced_state(ops, f0=8.0, g=8.0, H=8.0)
        state.h.data += ops.project("Q", lambda x, y: 7.8 + 0 * x).data  # H ~ 8
        dt = 2.4 / 190.0  # sigma_max ~ 190 on this mesh at c = 8
        s = state.copy()
        # explosion surfaces as either a NaN state or a negative-depth abort
        with pytest.raises((BlowUpError, DiagnosticError)):
            for _ in range(200):
                s = slv.rk2_step(s, physics, ops, dt)
        s = state.copy()
        for _ in range(200):
            s = slv.rk2_extended_step(s, physics, ops, dt)
        assert np.isfinite(s.u.data).all()
        assert np.abs(s.u.data).max() < 10 * np.abs(state.u.data).max()

    def test_exact_mass_and_vorticity_budgets(self):
        ops = make_ops(p=3)
        state, physics = balanced_state(ops)
        state.h.data += ops.project("Q", lambda x, y: 7.8 + 0 * x).data
        mass0 = state.h.data.sum()
        vort0 = -np.sum(ops.E10fT @ (ops.massU @ state.u.data))
        s = state
        for _ in range(5):
            s = slv.rk2_extended_step(s, physics, ops, 0.005)
        mass1 = s.h.data.sum()
        vort1 = -np.sum(ops.E10fT @ (ops.massU @ s.u.data))
        assert abs(mass1 - mass0) < 1e-12 * abs(mass0)
        assert abs(vort1 - vort0) < 1e-11


class TestLinearized:
    def test_no_rotation_rest_depth(self):
        # f = 0 and flat depth: no forces act on a divergence-free velocity
        ops = make_ops(p=3)
        psi = ops.project("W", cosine_stream)
        u = Field("U", ops.E10f @ psi.data)
        h = Field("Q", np.zeros(ops.dofmap.dQ))
        physics = slv.Physics(f=Field("W", np.zeros(ops.dofmap.dW)), g=8.0, H=0.2)
        state = slv.SimState(u=u, h=h, t=0.0)
        du, dh = slv.linearized_tendency(state, physics, ops)
        assert np.abs(dh).max() < 1e-14
        assert np.abs(du).max() < 1e-11

    def test_mass_budget(self):
        ops = make_ops(p=2)
        rng = np.random.RandomState(8)
        state = slv.SimState(Field("U", rng.uniform(-1, 1, ops.dofmap.dU)),
                             Field("Q", rng.uniform(-1, 1, ops.dofmap.dQ)), 0.0)
        physics = slv.Physics(f=ops.constant_coriolis(8.0), g=8.0, H=0.2)
        du, dh = slv.linearized_tendency(state, physics, ops)
        assert abs(np.sum(dh)) < 1e-12 * max(1.0, np.abs(dh).max())

    def test_balanced_state_nearly_stationary(self):
        ops = make_ops(nx=8, ny=8, p=3)
        state, physics = balanced_state(ops)
        du, dh = slv.linearized_tendency(state, physics, ops)
        assert np.abs(dh).max() < 1e-14  # exactly divergence free start
        # velocity imbalance is pure truncation error, small on this mesh
        assert np.abs(du).max() < 1e-3, f"imbalance {np.abs(du).max():.2e}"
