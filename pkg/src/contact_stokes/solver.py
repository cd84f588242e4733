"""Mixed finite elements for the flattened Stokes system and the time stepper.

Velocity is continuous quadratic, pressure continuous linear. The surface
perturbation lives in the quadratic trace space on the free surface; each
step eliminates it by the backward Euler substitution
``eta^{n+1} = eta^n + dt B u`` where ``(B u)_i = u(x_i) . N(x_i)``. The
resulting saddle system is

    [ K     -D^T   c_m   0 ] [u]   [f]
    [ -D     0     0     e ] [p] = [0]
    [ c_m^T  0     0     0 ] [L]   [0]
    [ 0      e^T   0     0 ] [l]   [0]

with ``c_m = B^T m`` (``m`` the surface quadrature weights) enforcing
``int u . N = 0`` and ``e`` the pressure integrals enforcing ``int p = 0``.
"""
from __future__ import annotations

import math
import zipfile
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.linalg import eigh, null_space
from scipy.sparse.linalg import splu

from . import core
from .equilibrium import EquilibriumSurface
from .fem import Mesh, build_mesh, element_geometry, line_rule, p2_line_basis, p2_line_grad
from .geometry import GeometryFields, coefficient_fields, fields_at_points, validate_geometry
from .kernels import Q_eval, R_eval, ResponseError, kappa_of

__all__ = [
    "AssembledSystem",
    "InfSupError",
    "NewtonError",
    "Simulation",
    "SimulationState",
    "SmallDataError",
    "SolverError",
    "StepRecord",
    "SurfaceSpace",
    "advance",
    "assemble_system",
    "build_mesh",
    "energy_audit",
    "inf_sup_constant",
    "load_checkpoint",
    "manufactured_convergence",
    "save_checkpoint",
    "solve_saddle",
    "stokes_slip_solve",
]

RESIDUAL_TOL = 1e-10
CHECKPOINT_VERSION = 2
HISTORY_DEPTH = 4

_WALL_TANGENT = {"left": 1, "right": 1, "bottom": 0, "sigma": 0}
_WALL_NORMAL = {"left": 0, "right": 0, "bottom": 1, "sigma": 1}


class SolverError(RuntimeError):
    pass


class InfSupError(SolverError):
    pass


class SmallDataError(SolverError):
    pass


class NewtonError(SolverError):
    pass


# ---------------------------------------------------------------- surface space


@dataclass(frozen=True, eq=False)
class SurfaceSpace:
    """Quadratic Lagrange space on the uniform free-surface grid.

    ``S = g M + sigma K_w`` realizes ``(phi, psi)_{1,Sigma}`` with the weight
    ``(1 + zeta0'^2)^{-3/2}`` in ``K_w``.
    """

    x: np.ndarray
    mass: sparse.csr_matrix
    stiff: sparse.csr_matrix  # unweighted
    S: sparse.csr_matrix
    weights: np.ndarray  # nodal integrals of the basis
    q_idx: np.ndarray  # (n_edges, 3) node indices per edge
    q_phi: np.ndarray  # (nq, 3)
    q_dphi: np.ndarray  # (n_edges, nq, 3) physical derivatives
    q_w: np.ndarray  # (n_edges, nq) weights times length
    q_dzeta: np.ndarray  # (n_edges, nq) zeta0' at quadrature points
    sigma: float

    @classmethod
    def build(cls, mesh: Mesh, equilibrium: EquilibriumSurface, nq: int = 4) -> "SurfaceSpace":
        x = mesh.surface_x
        n_edges = (x.size - 1) // 2
        idx = np.stack([2 * np.arange(n_edges), 2 * np.arange(n_edges) + 1, 2 * np.arange(n_edges) + 2], axis=1)
        t, w = line_rule(nq)
        phi = p2_line_basis(t)
        L = x[idx[:, 2]] - x[idx[:, 0]]
        dphi = p2_line_grad(t)[None, :, :] / L[:, None, None]
        wq = w[None, :] * L[:, None]
        xq = x[idx[:, 0], None] + t[None, :] * L[:, None]
        dz = equilibrium.interp(xq.ravel())[1].reshape(xq.shape)
        weight = (1.0 + dz * dz) ** -1.5
        Me = np.einsum("eq,qa,qb->eab", wq, phi, phi)
        Ke = np.einsum("eq,eqa,eqb->eab", wq, dphi, dphi)
        Kw = np.einsum("eq,eqa,eqb->eab", wq * weight, dphi, dphi)
        rows = np.repeat(idx, 3, axis=1).ravel()
        cols = np.tile(idx, (1, 3)).ravel()
        shape = (x.size, x.size)
        mk = lambda E: sparse.csr_matrix((E.ravel(), (rows, cols)), shape=shape)
        M, K, Kwm = mk(Me), mk(Ke), mk(Kw)
        p = equilibrium.params
        weights = np.zeros(x.size)
        np.add.at(weights, idx.ravel(), np.einsum("eq,qa->ea", wq, phi).ravel())
        return cls(
            x=x,
            mass=M,
            stiff=K,
            S=(p.g * M + p.sigma * Kwm).tocsr(),
            weights=weights,
            q_idx=idx,
            q_phi=phi,
            q_dphi=dphi,
            q_w=wq,
            q_dzeta=dz,
            sigma=p.sigma,
        )

    def mean(self, f) -> float:
        return float(self.weights @ f)

    def slope_at_quad(self, f):
        return np.einsum("eqa,ea->eq", self.q_dphi, np.asarray(f)[self.q_idx])

    def curvature_load(self, eta) -> np.ndarray:
        """``r_i = int sigma R(zeta0', eta_h') psi_i'``."""
        R = R_eval(self.q_dzeta, self.slope_at_quad(eta))
        loc = np.einsum("eq,eq,eqa->ea", self.q_w, R, self.q_dphi) * self.sigma
        out = np.zeros(self.x.size)
        np.add.at(out, self.q_idx.ravel(), loc.ravel())
        return out

    def q_energy(self, eta) -> float:
        """``int sigma Q(zeta0', eta_h')``."""
        Q = Q_eval(self.q_dzeta, self.slope_at_quad(eta))
        return float(self.sigma * np.sum(self.q_w * Q))

    def energy(self, eta) -> float:
        """Perturbation energy ``I(zeta0 + eta) - I(zeta0)`` for zero-mean ``eta``."""
        eta = np.asarray(eta, dtype=float)
        return 0.5 * float(eta @ (self.S @ eta)) + self.q_energy(eta)

    def h1_sq(self, f) -> float:
        f = np.asarray(f, dtype=float)
        return float(f @ (self.mass @ f) + f @ (self.stiff @ f))


# ---------------------------------------------------------------- assembly


class _Layout:
    """Index bookkeeping of a mesh: velocity dofs ``c * n_nodes + node``."""

    def __init__(self, mesh: Mesh, walls=("left", "right", "bottom")):
        self.mesh = mesh
        N = mesh.n_nodes
        self.n_u = 2 * N
        ldof = np.concatenate([mesh.tri, mesh.tri + N], axis=1)  # (ne, 12)
        self.k_rows = np.repeat(ldof, 12, axis=1).ravel()
        self.k_cols = np.tile(ldof, (1, 12)).ravel()
        self.d_rows = np.repeat(mesh.ptri, 12, axis=1).ravel()
        self.d_cols = np.tile(ldof, (1, 3)).ravel()
        fixed = [N * _WALL_NORMAL[t] + mesh.tags[t] for t in walls]
        self.fixed = np.unique(np.concatenate(fixed))
        mask = np.ones(self.n_u, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)
        self.walls = walls

    @cached_property
    def pressure_mean(self) -> np.ndarray:
        geo = self.mesh.elem_geom
        loc = np.einsum("eq,qp->ep", geo.wdet, geo.phi1)
        e = np.zeros(self.mesh.n_pressure)
        np.add.at(e, self.mesh.ptri.ravel(), loc.ravel())
        return e

    @cached_property
    def wall_edges(self):
        """Per wall: edge node ids, quadrature points, basis values and ``w ds``."""
        t, w = line_rule(4)
        phi = p2_line_basis(t)
        out = {}
        for tag in self.walls:
            ed = self.mesh.boundary_edges(tag)
            X = self.mesh.nodes[ed]  # (k, 3, 2)
            L = np.linalg.norm(X[:, 2] - X[:, 0], axis=1)
            pts = np.einsum("qa,kai->kqi", phi, X)
            out[tag] = (ed, pts, phi, w[None, :] * L[:, None])
        return out

    def scatter_K(self, Ke) -> sparse.csr_matrix:
        return sparse.csr_matrix((Ke.ravel(), (self.k_rows, self.k_cols)), shape=(self.n_u, self.n_u))

    def scatter_D(self, De) -> sparse.csr_matrix:
        return sparse.csr_matrix((De.ravel(), (self.d_rows, self.d_cols)), shape=(self.mesh.n_pressure, self.n_u))


def stokes_blocks(layout: _Layout, acal_q, J_q, mu: float):
    """Global viscous matrix and divergence block ``D_{p,(c,a)} = int chi_p (Acal grad psi_a)_c J``."""
    geo = layout.mesh.elem_geom
    Ke, De = core.local_stokes(
        np.ascontiguousarray(geo.grads),
        np.ascontiguousarray(geo.wdet),
        np.ascontiguousarray(acal_q),
        np.ascontiguousarray(J_q),
        np.ascontiguousarray(geo.phi1),
        float(mu),
    )
    return layout.scatter_K(Ke), layout.scatter_D(De)


def slip_matrix(layout: _Layout, beta: float, jac_fn=None) -> sparse.csr_matrix:
    """``int_{walls} beta J (u . tau)(w . tau)``; ``jac_fn(x1, x2)`` defaults to 1."""
    N = layout.mesh.n_nodes
    rows, cols, vals = [], [], []
    for tag, (ed, pts, phi, wds) in layout.wall_edges.items():
        Jw = np.ones(wds.shape) if jac_fn is None else jac_fn(pts[..., 0], pts[..., 1]).reshape(wds.shape)
        loc = beta * np.einsum("kq,qa,qb->kab", wds * Jw, phi, phi)
        dof = ed + N * _WALL_TANGENT[tag]
        rows.append(np.repeat(dof, 3, axis=1).ravel())
        cols.append(np.tile(dof, (1, 3)).ravel())
        vals.append(loc.ravel())
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(layout.n_u, layout.n_u)
    )


def normal_trace_operator(mesh: Mesh, N_vec) -> sparse.csr_matrix:
    """``(B u)_i = u(x_i) . N(x_i)`` at the free-surface nodes."""
    s = mesh.surface_nodes
    n_s = s.size
    rows = np.concatenate([np.arange(n_s), np.arange(n_s)])
    cols = np.concatenate([s, s + mesh.n_nodes])
    vals = np.concatenate([N_vec[:, 0], N_vec[:, 1]])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n_s, 2 * mesh.n_nodes))


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Saddle system restricted to free velocity dofs.

    ``K`` velocity block, ``D`` divergence block (pressure x free velocity),
    ``rhs`` velocity load, ``c_u`` optional velocity constraint columns,
    ``e`` pressure-mean row.
    """

    K: sparse.csr_matrix
    D: sparse.csr_matrix
    rhs: np.ndarray
    e: np.ndarray
    c_u: np.ndarray | None
    layout: _Layout
    parts: dict = field(default_factory=dict)

    @property
    def n_free(self) -> int:
        return self.K.shape[0]

    def matrix(self) -> sparse.csc_matrix:
        e_col = sparse.csr_matrix(self.e.reshape(-1, 1))
        if self.c_u is None:
            blocks = [
                [self.K, -self.D.T, None],
                [-self.D, None, e_col],
                [None, e_col.T, None],
            ]
        else:
            cu = sparse.csr_matrix(self.c_u.reshape(-1, 1))
            blocks = [
                [self.K, -self.D.T, cu, None],
                [-self.D, None, None, e_col],
                [cu.T, None, None, None],
                [None, e_col.T, None, None],
            ]
        return sparse.bmat(blocks, format="csc")

    def full_rhs(self) -> np.ndarray:
        n_extra = 1 + (self.c_u is not None)
        return np.concatenate([self.rhs, np.zeros(self.D.shape[0] + n_extra)])


@dataclass(frozen=True)
class SaddleSolution:
    u: np.ndarray  # full velocity vector, fixed dofs zero
    p: np.ndarray
    multipliers: np.ndarray
    residual: float


def _factor(A, symmetric: bool):
    """Sparse LU; symmetric-mode minimum degree first, partial-pivoting COLAMD as fallback."""
    if symmetric:
        try:
            return splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1e-3, options={"SymmetricMode": True})
        except RuntimeError:
            pass
    try:
        return splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise InfSupError("inf-sup failure - refine mesh or change elements") from exc


def solve_saddle(system: AssembledSystem, tol: float = RESIDUAL_TOL) -> SaddleSolution:
    """Direct solve of the saddle system.

    With a free surface the core ``[[K, -D^T], [-D, 0]]`` is nonsingular (the
    constant pressure couples to the surface flux), so the two dense
    constraints are eliminated by bordering: the core is factored once and a
    2 x 2 system fixes the multipliers. Otherwise the full matrix is factored.
    """
    layout = system.layout
    b = system.full_rhs()
    n_f = system.n_free
    n_p = system.D.shape[0]
    if not np.any(b):
        return SaddleSolution(np.zeros(layout.n_u), np.zeros(n_p), np.zeros(b.size - n_f - n_p), 0.0)
    bn = np.linalg.norm(b)
    A = system.matrix()
    if system.c_u is not None:
        n0 = n_f + n_p
        A0 = A[:n0, :n0].tocsc()
        V = A[:n0, n0:].toarray()
        b0 = b[:n0]

        def bordered(lu):
            Y = lu.solve(np.column_stack([b0, V]))
            z0, Z = Y[:, 0], Y[:, 1:]
            y = np.linalg.solve(V.T @ Z, V.T @ z0)
            return np.concatenate([z0 - Z @ y, y])

        for symmetric in (True, False):
            lu = _factor(A0, symmetric)
            x = bordered(lu)
            res = np.linalg.norm(A @ x - b) / bn
            if not res <= tol and np.isfinite(res):
                x = x + bordered_correction(lu, V, A, b, x)
                res = np.linalg.norm(A @ x - b) / bn
            if res <= tol:
                break
    else:
        lu = _factor(A, False)
        x = lu.solve(b)
        res = np.linalg.norm(A @ x - b) / bn
        if not res <= tol:
            x = x + lu.solve(b - A @ x)
            res = np.linalg.norm(A @ x - b) / bn
    if not np.isfinite(res):
        raise InfSupError("inf-sup failure - refine mesh or change elements")
    if res > tol:
        raise SolverError(f"saddle solve residual {res:.3e} above tolerance {tol:.1e}")
    u = np.zeros(layout.n_u)
    u[layout.free] = x[:n_f]
    return SaddleSolution(u, x[n_f : n_f + n_p], x[n_f + n_p :], float(res))


def bordered_correction(lu, V, A, b, x):
    """One iterative-refinement step for the bordered solve."""
    r = b - A @ x
    n0 = V.shape[0]
    Y = lu.solve(np.column_stack([r[:n0], V]))
    z0, Z = Y[:, 0], Y[:, 1:]
    y = np.linalg.solve(V.T @ Z, V.T @ z0 - r[n0:])
    return np.concatenate([z0 - Z @ y, y])


# ---------------------------------------------------------------- dynamic problem


@dataclass(frozen=True, eq=False)
class StepRecord:
    """Per-step diagnostics."""

    step: int
    time: float
    mass: float
    drift: float
    energy: float
    dissipation: dict
    newton_iterations: int
    residual: float
    gate: dict


@dataclass(frozen=True, eq=False)
class SimulationState:
    """Immutable snapshot of the time loop.

    ``history`` holds the most recent states (newest last) as tuples
    ``(time, eta, u, p, contact_velocities)``, at most ``HISTORY_DEPTH`` long.
    """

    time: float
    step: int
    eta: np.ndarray
    u: np.ndarray
    p: np.ndarray
    contact_velocities: np.ndarray
    history: tuple = ()

    def with_history(self) -> "SimulationState":
        item = (self.time, self.eta, self.u, self.p, self.contact_velocities)
        hist = deque(self.history, maxlen=HISTORY_DEPTH)
        hist.append(item)
        return replace(self, history=tuple(hist))


class Simulation:
    """Owns the mesh, the surface space and the assembly layout of one scenario."""

    def __init__(self, equilibrium: EquilibriumSurface, mesh: Mesh, newton_tol: float = 1e-10, newton_maxit: int = 10, picard: bool = False):
        self.equilibrium = equilibrium
        self.params = equilibrium.params
        self.mesh = mesh
        self.layout = _Layout(mesh)
        self.surface = SurfaceSpace.build(mesh, equilibrium)
        self.response = self.params.response
        self.kappa = kappa_of(self.response)
        self.newton_tol = newton_tol
        self.newton_maxit = newton_maxit
        self.picard = picard

    # -- states

    def initial_state(self, eta0) -> SimulationState:
        eta0 = np.asarray(eta0, dtype=float).copy()
        if eta0.shape != (self.mesh.nx,):
            raise ValueError(f"eta0 must have {self.mesh.nx} samples")
        eta0 -= self.surface.mean(eta0) / (2.0 * self.params.ell)
        st = SimulationState(
            time=0.0,
            step=0,
            eta=eta0,
            u=np.zeros(self.layout.n_u),
            p=np.zeros(self.mesh.n_pressure),
            contact_velocities=np.zeros(2),
        )
        return st.with_history()

    def fields(self, eta) -> GeometryFields:
        return coefficient_fields(eta, self.equilibrium, self.mesh)

    def energy(self, eta) -> float:
        return self.surface.energy(eta)

    # -- assembly

    def assemble(self, eta, fields: GeometryFields, dt: float, v_lin=None) -> AssembledSystem:
        if not dt > 0:
            raise ValueError("dt must be positive")
        gate = validate_geometry(fields)
        if not gate["ok"]:
            raise SmallDataError(
                f"left small-data regime: |J-1| = {gate['worst_J_dev']:.3g}, |A| = {gate['worst_A']:.3g}"
            )
        lay = self.layout
        p = self.params
        Kv, D = stokes_blocks(lay, fields.Acal_q, fields.J_q, p.mu)
        jac = lambda a, b: fields_at_points(fields, a, b)["J"]
        Ks = slip_matrix(lay, p.beta, jac)
        B = normal_trace_operator(self.mesh, fields.N_vec)
        Ssurf = self.surface.S
        ends = np.array([0, self.surface.x.size - 1])
        if v_lin is None:
            v_lin = np.zeros(2)
        if self.response.is_linear:
            wp = np.full(2, self.kappa)
            wc = np.zeros(2)
        else:
            wp = np.asarray(self.response.W_prime(v_lin), dtype=float)
            wc = np.asarray(self.response.W(v_lin), dtype=float) - wp * v_lin
        C = sparse.csr_matrix((wp, (ends, ends)), shape=Ssurf.shape)
        Kt = Kv + Ks + B.T @ (dt * Ssurf + C) @ B
        surf_load = Ssurf @ eta + self.surface.curvature_load(eta)
        surf_load[ends] += wc
        f = -(B.T @ surf_load)
        c_m = B.T @ self.surface.weights
        free = lay.free
        Kt = Kt.tocsr()[free][:, free]
        return AssembledSystem(
            K=Kt.tocsr(),
            D=D.tocsc()[:, free].tocsr(),
            rhs=f[free],
            e=lay.pressure_mean,
            c_u=c_m[free],
            layout=lay,
            parts={"Kv": Kv, "Ks": Ks, "B": B, "gate": gate},
        )

    # -- stepping

    def advance(self, state: SimulationState, dt: float) -> tuple[SimulationState, StepRecord]:
        eta = state.eta
        fields = self.fields(eta)
        v = state.contact_velocities.copy()
        its = 0
        trace = []
        while True:
            its += 1
            try:
                system = self.assemble(eta, fields, dt, v)
            except ResponseError as exc:
                raise NewtonError(f"contact velocity left the response range: {exc}") from exc
            sol = solve_saddle(system)
            Bu = system.parts["B"] @ sol.u
            v_new = Bu[[0, -1]]
            trace.append(float(np.abs(v_new - v).max()))
            if self.response.is_linear or trace[-1] <= self.newton_tol:
                v = v_new
                break
            if its >= self.newton_maxit:
                raise NewtonError("Newton iteration on contact velocities did not converge: " + ", ".join(f"{t:.2e}" for t in trace))
            v = v_new
        if self.picard:
            mid = eta + 0.5 * dt * Bu
            sys2 = replace(system, rhs=self._picard_rhs(system, mid, eta, v))
            sol = solve_saddle(sys2)
            Bu = system.parts["B"] @ sol.u
            v = Bu[[0, -1]]
        new_eta = eta + dt * Bu
        drift = self.surface.mean(new_eta) - self.surface.mean(eta)
        new_eta = new_eta - self.surface.mean(new_eta) / (2.0 * self.params.ell)
        u = sol.u
        diss = {
            "viscous": float(u @ (system.parts["Kv"] @ u)),
            "slip": float(u @ (system.parts["Ks"] @ u)),
            "contact": float(np.sum(v * np.asarray(self.response.W(v), dtype=float))),
        }
        new_state = SimulationState(
            time=state.time + dt,
            step=state.step + 1,
            eta=new_eta,
            u=u,
            p=sol.p,
            contact_velocities=v,
            history=state.history,
        ).with_history()
        rec = StepRecord(
            step=new_state.step,
            time=new_state.time,
            mass=self.surface.mean(new_eta),
            drift=float(drift),
            energy=self.energy(new_eta),
            dissipation=diss,
            newton_iterations=its,
            residual=sol.residual,
            gate=system.parts["gate"],
        )
        return new_state, rec

    def _picard_rhs(self, system, eta_mid, eta, v):
        B = system.parts["B"]
        surf = self.surface.S @ eta + self.surface.curvature_load(eta_mid)
        if not self.response.is_linear:
            wp = np.asarray(self.response.W_prime(v), dtype=float)
            surf[[0, -1]] += np.asarray(self.response.W(v), dtype=float) - wp * v
        return -(B.T @ surf)[self.layout.free]

    def run(self, eta0, dt: float, n_steps: int, callback=None, state: SimulationState | None = None):
        """Advance ``n_steps``; returns ``(final_state, records)``.

        ``callback(state, record)`` is invoked after every step.
        """
        if state is None:
            state = self.initial_state(eta0)
        records = [self.initial_record(state)]
        for _ in range(n_steps):
            state, rec = self.advance(state, dt)
            records.append(rec)
            if callback is not None:
                callback(state, rec)
        return state, records

    def initial_record(self, state: SimulationState) -> StepRecord:
        return StepRecord(
            step=state.step,
            time=state.time,
            mass=self.surface.mean(state.eta),
            drift=0.0,
            energy=self.energy(state.eta),
            dissipation={"viscous": 0.0, "slip": 0.0, "contact": 0.0},
            newton_iterations=0,
            residual=0.0,
            gate={"ok": True, "worst_J_dev": 0.0, "worst_A": 0.0},
        )


def assemble_system(sim: Simulation, state: SimulationState, dt: float) -> AssembledSystem:
    """Assemble the step system for ``state`` (geometry lagged at ``state.eta``)."""
    return sim.assemble(state.eta, sim.fields(state.eta), dt, state.contact_velocities)


def advance(sim: Simulation, state: SimulationState, dt: float) -> SimulationState:
    return sim.advance(state, dt)[0]


def energy_audit(records) -> np.ndarray:
    """Energy balance residual per step.

    ``|(E^n - E^{n-1}) / dt + D^n|`` where ``D^n`` is the viscous, slip and
    contact dissipation of the step that produced ``E^n``. The backward
    difference matches the backward Euler stepper, whose numerical
    dissipation makes the residual ``O(dt)``.
    """
    if len(records) < 2:
        raise ValueError("energy audit needs at least two records")
    out = np.empty(len(records) - 1)
    for i in range(1, len(records)):
        r0, r1 = records[i - 1], records[i]
        dt = r1.time - r0.time
        D = sum(r1.dissipation.values())
        out[i - 1] = abs((r1.energy - r0.energy) / dt + D)
    return out


def time_derivatives(history, j: int, index: int = 1):
    """Backward difference ``d_t^j`` of entry ``index`` (1 = eta, 2 = u, 3 = p) over the newest ``j+1`` states."""
    if j == 0:
        return np.asarray(history[-1][index])
    if len(history) < j + 1:
        raise ValueError(f"need {j + 1} stored states for d_t^{j}")
    vals = [np.asarray(h[index]) for h in history[-(j + 1) :]]
    times = [h[0] for h in history[-(j + 1) :]]
    dt = times[-1] - times[-2]
    out = np.zeros_like(vals[-1])
    for k in range(j + 1):
        out = out + (-1) ** k * math.comb(j, k) * vals[-1 - k]
    return out / dt**j


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, state: SimulationState) -> None:
    """Write ``state`` as an ``.npz`` archive with fixed entry timestamps (byte-reproducible)."""
    hist = state.history
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "time": np.array(state.time),
        "step": np.array(state.step),
        "eta": state.eta,
        "u": state.u,
        "p": state.p,
        "contact_velocities": state.contact_velocities,
        "hist_time": np.array([h[0] for h in hist]),
        "hist_eta": np.array([h[1] for h in hist]),
        "hist_u": np.array([h[2] for h in hist]),
        "hist_p": np.array([h[3] for h in hist]),
        "hist_v": np.array([h[4] for h in hist]),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)


def load_checkpoint(path) -> SimulationState:
    with np.load(path) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version} not supported (expected {CHECKPOINT_VERSION})")
        hist = tuple(
            (float(t), e.copy(), u.copy(), p.copy(), v.copy())
            for t, e, u, p, v in zip(z["hist_time"], z["hist_eta"], z["hist_u"], z["hist_p"], z["hist_v"])
        )
        return SimulationState(
            time=float(z["time"]),
            step=int(z["step"]),
            eta=z["eta"].copy(),
            u=z["u"].copy(),
            p=z["p"].copy(),
            contact_velocities=z["contact_velocities"].copy(),
            history=hist,
        )


# ---------------------------------------------------------------- verification helpers


def _identity_coefficients(mesh: Mesh):
    geo = mesh.elem_geom
    acal = np.zeros(geo.wdet.shape + (2, 2))
    acal[..., 0, 0] = 1.0
    acal[..., 1, 1] = 1.0
    return acal, np.ones(geo.wdet.shape)


def stokes_slip_solve(mesh: Mesh, mu: float, beta: float, body_force, slip_data, acal_q=None, J_q=None):
    """Steady Stokes problem with Navier slip on all four sides of ``mesh``.

    Solves ``div S = f``, ``div_A u = 0``, ``u . nu = 0`` and
    ``(S nu - beta u) . tau = slip_data`` with ``S = p I - mu D_A u``.
    ``body_force(x)`` returns ``(..., 2)``; ``slip_data(x, tag)`` a scalar field.
    """
    layout = _Layout(mesh, walls=("left", "right", "bottom", "sigma"))
    if acal_q is None:
        acal_q, J_q = _identity_coefficients(mesh)
    Kv, D = stokes_blocks(layout, acal_q, J_q, mu)
    Ks = slip_matrix(layout, beta)
    geo = mesh.elem_geom
    f = np.asarray(body_force(geo.points))
    N = mesh.n_nodes
    rhs = np.zeros(2 * N)
    for c in range(2):
        loc = np.einsum("eq,eq,qa->ea", geo.wdet * J_q, f[..., c], geo.phi2)
        np.add.at(rhs, mesh.tri.ravel() + c * N, loc.ravel())
    for tag, (ed, pts, phi, wds) in layout.wall_edges.items():
        g = np.asarray(slip_data(pts, tag))
        loc = np.einsum("kq,kq,qa->ka", wds, g, phi)
        np.add.at(rhs, (ed + N * _WALL_TANGENT[tag]).ravel(), -loc.ravel())
    free = layout.free
    system = AssembledSystem(
        K=(Kv + Ks).tocsr()[free][:, free].tocsr(),
        D=D.tocsc()[:, free].tocsr(),
        rhs=rhs[free],
        e=layout.pressure_mean,
        c_u=None,
        layout=layout,
    )
    return solve_saddle(system), system


@dataclass(frozen=True)
class ManufacturedStokes:
    """Exact slip solution on ``(-ell, ell) x (-depth, 0)`` from ``psi = sin(pi X) sin(pi Y)``.

    ``X = (x1 + ell) / (2 ell)``, ``Y = (x2 + depth) / depth``; ``u = (d2 psi, -d1 psi)``
    is divergence free with zero normal trace; ``p = cos(pi X) cos(pi Y)`` has zero mean.
    """

    ell: float = 1.0
    depth: float = 1.0
    mu: float = 1.0
    beta: float = 1.0

    def _XY(self, x):
        a = math.pi / (2 * self.ell)
        b = math.pi / self.depth
        return a * (x[..., 0] + self.ell), b * (x[..., 1] + self.depth), a, b

    def u(self, x):
        X, Y, a, b = self._XY(x)
        return np.stack([b * np.sin(X) * np.cos(Y), -a * np.cos(X) * np.sin(Y)], axis=-1)

    def grad_u(self, x):
        """``G[..., i, j] = d_j u_i``."""
        X, Y, a, b = self._XY(x)
        G = np.empty(X.shape + (2, 2))
        G[..., 0, 0] = a * b * np.cos(X) * np.cos(Y)
        G[..., 0, 1] = -b * b * np.sin(X) * np.sin(Y)
        G[..., 1, 0] = a * a * np.sin(X) * np.sin(Y)
        G[..., 1, 1] = -a * b * np.cos(X) * np.cos(Y)
        return G

    def p(self, x):
        X, Y, _, _ = self._XY(x)
        return np.cos(X) * np.cos(Y)

    def body_force(self, x):
        """``grad p - mu lap u``."""
        X, Y, a, b = self._XY(x)
        lap = -(a * a + b * b)
        u = self.u(x)
        gp = np.stack([-a * np.sin(X) * np.cos(Y), -b * np.cos(X) * np.sin(Y)], axis=-1)
        return gp - self.mu * lap * u

    def slip_data(self, x, tag):
        """``(S nu - beta u) . tau`` with ``S = p I - mu (grad u + grad u^T)``."""
        G = self.grad_u(x)
        Dm = G + np.swapaxes(G, -1, -2)
        nu = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "bottom": (0.0, -1.0), "sigma": (0.0, 1.0)}[tag]
        nu = np.array(nu)
        # same tangent as the assembly: e2 on vertical walls, e1 on horizontal ones
        tau = np.eye(2)[_WALL_TANGENT[tag]]
        Snu_tau = -self.mu * np.einsum("...ij,j,i->...", Dm, nu, tau)
        return Snu_tau - self.beta * self.u(x) @ tau


def manufactured_errors(n: int, ms: ManufacturedStokes | None = None, quad_order: int = 5) -> dict:
    """Velocity ``H^1`` and pressure ``L^2`` errors on an ``n x n/2``-cell rectangle."""
    from .fem import rectangle_mesh

    ms = ms or ManufacturedStokes()
    m = max(2, int(round(n * ms.depth / (2 * ms.ell))))
    mesh = rectangle_mesh(n, m, ell=ms.ell, top=0.0, depth=ms.depth)
    sol, _ = stokes_slip_solve(mesh, ms.mu, ms.beta, ms.body_force, ms.slip_data)
    geo = element_geometry(mesh, quad_order)
    N = mesh.n_nodes
    U = np.stack([sol.u[:N], sol.u[N:]], axis=-1)
    uh = np.einsum("qa,eac->eqc", geo.phi2, U[mesh.tri])
    guh = np.einsum("eqaj,eac->eqcj", geo.grads, U[mesh.tri])
    ph = np.einsum("qp,ep->eq", geo.phi1, sol.p[mesh.ptri])
    x = geo.points
    eu = np.einsum("eq,eqc->", geo.wdet, (uh - ms.u(x)) ** 2)
    egu = np.einsum("eq,eqcj->", geo.wdet, (guh - ms.grad_u(x)) ** 2)
    ep = np.einsum("eq,eq->", geo.wdet, (ph - ms.p(x)) ** 2)
    return {
        "h": 2 * ms.ell / n,
        "u_L2": math.sqrt(eu),
        "u_H1": math.sqrt(eu + egu),
        "p_L2": math.sqrt(ep),
        "residual": sol.residual,
    }


def manufactured_convergence(levels=(8, 16, 32, 64), ms: ManufacturedStokes | None = None) -> dict:
    """Errors per level and observed orders between successive levels."""
    rows = [manufactured_errors(n, ms) for n in levels]
    orders = {}
    for key in ("u_L2", "u_H1", "p_L2"):
        e = np.array([r[key] for r in rows])
        orders[key] = np.log2(e[:-1] / e[1:]).tolist()
    return {"levels": list(levels), "errors": rows, "orders": orders}


def inf_sup_constant(mesh: Mesh, mu: float = 1.0, fields: GeometryFields | None = None, walls=("left", "right", "bottom")) -> float:
    """Discrete inf-sup constant of the divergence block (dense; coarse meshes only).

    ``beta_h^2`` is the smallest eigenvalue of ``D K^{-1} D^T`` against the
    pressure mass matrix on zero-mean pressures, with ``K`` the viscous form.
    """
    layout = _Layout(mesh, walls=walls)
    if fields is None:
        acal_q, J_q = _identity_coefficients(mesh)
    else:
        acal_q, J_q = fields.Acal_q, fields.J_q
    Kv, D = stokes_blocks(layout, acal_q, J_q, mu)
    free = layout.free
    K = Kv.tocsr()[free][:, free].tocsc()
    Dd = D.tocsc()[:, free].toarray()
    lu = splu(K)
    S = Dd @ lu.solve(Dd.T)
    geo = mesh.elem_geom
    Me = np.einsum("eq,qa,qb->eab", geo.wdet, geo.phi1, geo.phi1)
    rows = np.repeat(mesh.ptri, 3, axis=1).ravel()
    cols = np.tile(mesh.ptri, (1, 3)).ravel()
    Mp = sparse.csr_matrix((Me.ravel(), (rows, cols)), shape=(mesh.n_pressure,) * 2).toarray()
    Z = null_space(layout.pressure_mean.reshape(1, -1))
    lam = eigh(Z.T @ S @ Z, Z.T @ Mp @ Z, eigvals_only=True, subset_by_index=[0, 0])
    return float(math.sqrt(max(lam[0], 0.0)))
