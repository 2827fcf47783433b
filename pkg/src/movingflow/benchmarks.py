"""Built-in verification cases with closed-form exact solutions.

Each case carries the exact velocity, velocity gradient, pressure and
forcing in physical coordinates, twice: as vectorized numpy closures (used
by the solver and error norms) and as expression strings (used by the
independent strong-form residual check in :func:`verify_benchmark_fields`,
which differentiates the parsed expression trees exactly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expressions import parse_expression
from .maps import AxisScalingMap, TubeShrinkMap
from .meshing import dirichlet, generate_box, generate_tube, refine_uniform
from .solver import BoundaryConditionSet, DirichletBC, NeumannBC, NoslipBC

__all__ = ["BenchmarkCase", "tube_benchmark", "manufactured_2d",
           "verify_benchmark_fields", "benchmark_case"]


@dataclass
class BenchmarkCase:
    name: str
    dimension: int
    T: float
    nu: float
    stress: str
    base_dt: float
    map: object
    velocity: object              # (X_phys, t) -> (n, d)
    velocity_gradient: object     # (X_phys, t) -> (n, d, d), du_a/dx_b
    pressure: object              # (X_phys, t) -> (n,)
    forcing: object               # (X_phys, t) -> (n, d)
    _mesh_factory: object
    _nominal_h: object
    _bc_factory: object
    velocity_exprs: tuple
    pressure_expr: str
    forcing_exprs: tuple
    _reference_sampler: object
    _mesh_cache: dict = field(default_factory=dict)

    def mesh_for_level(self, level):
        if level not in self._mesh_cache:
            self._mesh_cache[level] = self._mesh_factory(level, self._mesh_cache)
        return self._mesh_cache[level]

    def nominal_h(self, level):
        return self._nominal_h(level)

    def boundary_conditions(self):
        return self._bc_factory()

    def sample_reference_points(self, rng, n):
        return self._reference_sampler(rng, n)


# ---------------------------------------------------------------------------
# shrinking-tube case (3D, full-gradient stress, outflow at max y)
# ---------------------------------------------------------------------------

_TUBE_NU = 0.04
_TUBE_LEVELS = {1: (8, 3), 2: (12, 4), 3: (16, 6), 4: (24, 8), 5: (32, 12)}


def _tube_radius(y):
    return math.exp((y + 4.0) / 8.0)


def _tube_fields(nu):
    def parts(X, t):
        x1, y, x3 = X[:, 0], X[:, 1], X[:, 2]
        E = np.exp(-(y + 4.0) / 4.0)
        q = 1.0 / (4.0 - t) ** 2
        r2 = x1 ** 2 + x3 ** 2
        return x1, y, x3, E, q, r2

    def velocity(X, t):
        x1, y, x3, E, q, r2 = parts(X, t)
        u = np.empty_like(X)
        u[:, 0] = -2.0 * E * r2 * q * x1
        u[:, 1] = 8.0 / (4.0 - t) - 32.0 * E * r2 * q
        u[:, 2] = -2.0 * E * r2 * q * x3
        return u

    def velocity_gradient(X, t):
        x1, y, x3, E, q, r2 = parts(X, t)
        G = np.empty((len(X), 3, 3))
        G[:, 0, 0] = -2.0 * E * q * (3.0 * x1 ** 2 + x3 ** 2)
        G[:, 0, 1] = 0.5 * E * q * x1 * r2
        G[:, 0, 2] = -4.0 * E * q * x1 * x3
        G[:, 1, 0] = -64.0 * E * q * x1
        G[:, 1, 1] = 8.0 * E * q * r2
        G[:, 1, 2] = -64.0 * E * q * x3
        G[:, 2, 0] = -4.0 * E * q * x1 * x3
        G[:, 2, 1] = 0.5 * E * q * x3 * r2
        G[:, 2, 2] = -2.0 * E * q * (x1 ** 2 + 3.0 * x3 ** 2)
        return G

    def pressure(X, t):
        x1, y, x3, E, q, r2 = parts(X, t)
        return (512.0 * nu * E - 8.0 * y + 32.0 - 512.0 * nu * math.exp(-2.0)) * q

    def forcing(X, t):
        x1, y, x3, E, q, r2 = parts(X, t)
        radial = nu * E * q * (16.0 + r2 / 8.0) - 4.0 * E ** 2 * q ** 2 * r2 ** 2
        f = np.empty_like(X)
        f[:, 0] = radial * x1
        f[:, 1] = 2.0 * nu * E * q * r2 - 128.0 * E ** 2 * q ** 2 * r2 ** 2
        f[:, 2] = radial * x3
        return f

    return velocity, velocity_gradient, pressure, forcing


def _tube_exprs(nu):
    E = "exp(-(x2+4)/4)"
    q = "(4-t)^2"
    r2 = "(x1^2+x3^2)"
    vel = (
        f"-2*{E}*{r2}*x1/{q}",
        f"8/(4-t) - 32*{E}*{r2}/{q}",
        f"-2*{E}*{r2}*x3/{q}",
    )
    pres = (f"(512*{nu}*{E} - 8*x2 + 32 - 512*{nu}*exp(-2))/{q}")
    radial = f"({nu}*{E}*(16 + {r2}/8)/{q} - 4*exp(-(x2+4)/2)*{r2}^2/{q}^2)"
    forc = (
        f"{radial}*x1",
        f"2*{nu}*{E}*{r2}/{q} - 128*exp(-(x2+4)/2)*{r2}^2/{q}^2",
        f"{radial}*x3",
    )
    return vel, pres, forc


def tube_benchmark():
    """Shrinking axisymmetric tube with a known analytic solution.

    Reference domain: tube of radius exp((y+4)/8) around the x2 axis,
    y in [-4, 4]; the cross-section shrinks by sqrt(1 - t/4) over T = 0.2.
    Lateral wall: moving no-slip (the exact velocity coincides with the wall
    velocity there); inlet disk: velocity prescribed from the exact solution;
    outlet disk: natural condition with the exact traction of the
    full-gradient stress, whose pressure gauge makes p vanish at the outlet.
    """
    nu = _TUBE_NU
    map_ = TubeShrinkMap()
    velocity, velocity_gradient, pressure, forcing = _tube_fields(nu)
    vexprs, pexpr, fexprs = _tube_exprs(nu)

    def mesh_factory(level, cache):
        if level not in _TUBE_LEVELS:
            raise ValueError(f"tube case defines levels {sorted(_TUBE_LEVELS)}")
        na, nr = _TUBE_LEVELS[level]
        return generate_tube(na, nr, _tube_radius, (-4.0, 4.0),
                             labels={"inlet": dirichlet(1)})

    def bc_factory():
        def inlet_data(X_ref, t):
            return velocity(map_.position(X_ref, t), t)

        def outlet_traction(X_ref, t, normals):
            F, Finv, J, _ = map_.sample_fields(X_ref, t)
            phys = map_.position(X_ref, t)
            co = np.einsum("nmd,nm->nd", Finv, normals)      # F^{-T} n
            G = velocity_gradient(phys, t)
            p = pressure(phys, t)
            return nu * np.einsum("nad,nd->na", G, co) - p[:, None] * co

        from .meshing import NOSLIP, neumann
        return BoundaryConditionSet({
            NOSLIP: NoslipBC(),
            dirichlet(1): DirichletBC(inlet_data),
            neumann(0): NeumannBC(outlet_traction),
        })

    def sampler(rng, n):
        y = rng.uniform(-4.0, 4.0, n)
        rho = np.sqrt(rng.uniform(0.0, 1.0, n)) * 0.95
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        r = rho * np.exp((y + 4.0) / 8.0)
        return np.stack([r * np.cos(theta), y, r * np.sin(theta)], axis=1)

    return BenchmarkCase(
        name="tube", dimension=3, T=0.2, nu=nu, stress="full-gradient",
        base_dt=0.04, map=map_, velocity=velocity,
        velocity_gradient=velocity_gradient, pressure=pressure,
        forcing=forcing, _mesh_factory=mesh_factory,
        _nominal_h=lambda level: 2.0 ** (-(level - 1) / 2.0),
        _bc_factory=bc_factory, velocity_exprs=vexprs, pressure_expr=pexpr,
        forcing_exprs=fexprs, _reference_sampler=sampler)


# ---------------------------------------------------------------------------
# manufactured 2D case (area-preserving stretch, all-Dirichlet boundary)
# ---------------------------------------------------------------------------

_ALPHA = 0.1


def _manufactured_fields(nu):
    pi = np.pi

    def velocity(X, t):
        x, y = X[:, 0], X[:, 1]
        c = np.cos(t)
        u = np.empty_like(X)
        u[:, 0] = pi * np.sin(pi * x) * np.cos(pi * y) * c
        u[:, 1] = -pi * np.cos(pi * x) * np.sin(pi * y) * c
        return u

    def velocity_gradient(X, t):
        x, y = X[:, 0], X[:, 1]
        c = np.cos(t)
        G = np.empty((len(X), 2, 2))
        G[:, 0, 0] = pi ** 2 * np.cos(pi * x) * np.cos(pi * y) * c
        G[:, 0, 1] = -pi ** 2 * np.sin(pi * x) * np.sin(pi * y) * c
        G[:, 1, 0] = pi ** 2 * np.sin(pi * x) * np.sin(pi * y) * c
        G[:, 1, 1] = -pi ** 2 * np.cos(pi * x) * np.cos(pi * y) * c
        return G

    def pressure(X, t):
        x, y = X[:, 0], X[:, 1]
        s1 = 1.0 + _ALPHA * t
        mean = np.sin(pi * s1) * np.sin(pi / s1) * np.cos(t) / pi ** 2
        return np.cos(pi * x) * np.cos(pi * y) * np.cos(t) - mean

    def forcing(X, t):
        x, y = X[:, 0], X[:, 1]
        c, s = np.cos(t), np.sin(t)
        sx, cx = np.sin(pi * x), np.cos(pi * x)
        sy, cy = np.sin(pi * y), np.cos(pi * y)
        f = np.empty_like(X)
        f[:, 0] = (-pi * sx * cy * s + 0.5 * pi ** 3 * c ** 2 * np.sin(2 * pi * x)
                   + 2.0 * nu * pi ** 3 * sx * cy * c - pi * sx * cy * c)
        f[:, 1] = (pi * cx * sy * s + 0.5 * pi ** 3 * c ** 2 * np.sin(2 * pi * y)
                   - 2.0 * nu * pi ** 3 * cx * sy * c - pi * cx * sy * c)
        return f

    return velocity, velocity_gradient, pressure, forcing


def _manufactured_exprs(nu):
    vel = (
        "pi*sin(pi*x1)*cos(pi*x2)*cos(t)",
        "-pi*cos(pi*x1)*sin(pi*x2)*cos(t)",
    )
    pres = ("cos(pi*x1)*cos(pi*x2)*cos(t)"
            " - sin(pi*(1+0.1*t))*sin(pi/(1+0.1*t))*cos(t)/pi^2")
    forc = (
        f"-pi*sin(pi*x1)*cos(pi*x2)*sin(t) + pi^3/2*cos(t)^2*sin(2*pi*x1)"
        f" + 2*{nu}*pi^3*sin(pi*x1)*cos(pi*x2)*cos(t)"
        f" - pi*sin(pi*x1)*cos(pi*x2)*cos(t)",
        f"pi*cos(pi*x1)*sin(pi*x2)*sin(t) + pi^3/2*cos(t)^2*sin(2*pi*x2)"
        f" - 2*{nu}*pi^3*cos(pi*x1)*sin(pi*x2)*cos(t)"
        f" - pi*cos(pi*x1)*sin(pi*x2)*cos(t)",
    )
    return vel, pres, forc


def manufactured_2d():
    """Stream-function solution on an area-preserving stretching square.

    The reference unit square stretches to [0, 1+at] x [0, 1/(1+at)] with
    a = 0.1 (J = 1 identically); the exact velocity is the curl of
    sin(pi x) sin(pi y) cos(t) in physical coordinates, so it is pointwise
    divergence free and vanishes at t = pi/2.  The whole boundary carries
    velocity data from the exact solution, exercising the flux-compatibility
    correction and the pressure gauge.
    """
    nu = 1.0
    map_ = AxisScalingMap(
        scales=[lambda t: 1.0 + _ALPHA * t, lambda t: 1.0 / (1.0 + _ALPHA * t)],
        rates=[lambda t: _ALPHA, lambda t: -_ALPHA / (1.0 + _ALPHA * t) ** 2])
    velocity, velocity_gradient, pressure, forcing = _manufactured_fields(nu)
    vexprs, pexpr, fexprs = _manufactured_exprs(nu)

    def mesh_factory(level, cache):
        if level == 1:
            faces = ("xmin", "xmax", "ymin", "ymax")
            return generate_box(2, (8, 8),
                                labels={f: dirichlet(0) for f in faces})
        return refine_uniform(cache_get(cache, level - 1, mesh_factory))

    def bc_factory():
        def data(X_ref, t):
            return velocity(map_.position(X_ref, t), t)

        return BoundaryConditionSet({dirichlet(0): DirichletBC(data)})

    def sampler(rng, n):
        return rng.uniform(0.0, 1.0, (n, 2))

    return BenchmarkCase(
        name="manufactured-2d", dimension=2, T=0.5, nu=nu, stress="symmetric",
        base_dt=0.05, map=map_, velocity=velocity,
        velocity_gradient=velocity_gradient, pressure=pressure,
        forcing=forcing, _mesh_factory=mesh_factory,
        _nominal_h=lambda level: 2.0 ** (-(level - 1)),
        _bc_factory=bc_factory, velocity_exprs=vexprs, pressure_expr=pexpr,
        forcing_exprs=fexprs, _reference_sampler=sampler)


def cache_get(cache, level, factory):
    if level not in cache:
        cache[level] = factory(level, cache)
    return cache[level]


_CASES = {"tube": tube_benchmark, "manufactured-2d": manufactured_2d}


def benchmark_case(name):
    try:
        return _CASES[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark case {name!r}; "
                         f"available: {sorted(_CASES)}") from None


# ---------------------------------------------------------------------------
# strong-form residual oracle
# ---------------------------------------------------------------------------


def verify_benchmark_fields(case, n_samples=100, seed=20240, times=None):
    """Check the transcribed exact fields against the strong equations.

    The case's expression strings are parsed and differentiated exactly on
    the tree; the pointwise momentum residual, the velocity divergence, and
    the mismatch between expressions and the numpy closures are returned
    (all should sit at roundoff level for a correct transcription).
    """
    rng = np.random.default_rng(seed)
    d = case.dimension
    names = tuple(f"x{i + 1}" for i in range(d)) + ("t",)
    u = [parse_expression(e, names) for e in case.velocity_exprs]
    p = parse_expression(case.pressure_expr, names)
    f = [parse_expression(e, names) for e in case.forcing_exprs]
    xs = [f"x{i + 1}" for i in range(d)]
    du_t = [ui.derivative("t") for ui in u]
    du = [[ui.derivative(x) for x in xs] for ui in u]
    d2u = [[[dij.derivative(x) for x in xs] for dij in row] for row in du]
    dp = [p.derivative(x) for x in xs]

    ref = case.sample_reference_points(rng, n_samples)
    ts = rng.uniform(0.0, case.T, n_samples) if times is None \
        else np.resize(np.asarray(times, dtype=float), n_samples)
    phys = np.vstack([case.map.position(ref[i:i + 1], ts[i])
                      for i in range(n_samples)])

    env_all = {name: phys[:, i] for i, name in enumerate(xs)}
    env_all["t"] = ts

    def ev(expr):
        return np.broadcast_to(np.asarray(expr(**env_all), dtype=float),
                               (n_samples,))

    uv = np.stack([ev(ui) for ui in u], axis=1)
    G = np.array([[ev(du[i][j]) for j in range(d)] for i in range(d)])
    G = np.moveaxis(G, -1, 0)                      # (n, d, d): du_i/dx_j
    lap = np.stack([sum(ev(d2u[i][j][j]) for j in range(d))
                    for i in range(d)], axis=1)
    gradp = np.stack([ev(dpi) for dpi in dp], axis=1)
    fv = np.stack([ev(fi) for fi in f], axis=1)
    ut = np.stack([ev(di) for di in du_t], axis=1)

    conv = np.einsum("nij,nj->ni", G, uv)
    visc = lap.copy()
    if case.stress == "symmetric":
        # add grad(div u): d/dx_i sum_j du_j/dx_j
        for i in range(d):
            visc[:, i] += sum(ev(d2u[j][j][i]) for j in range(d))
    residual = ut + conv + gradp - case.nu * visc - fv
    divergence = np.einsum("nii->n", G)

    mism = 0.0
    for i in range(n_samples):
        Xi = phys[i:i + 1]
        ti = ts[i]
        mism = max(mism, float(np.max(np.abs(case.velocity(Xi, ti) - uv[i]))))
        mism = max(mism, float(np.max(np.abs(case.velocity_gradient(Xi, ti) - G[i]))))
        mism = max(mism, float(np.max(np.abs(case.forcing(Xi, ti) - fv[i]))))
        mism = max(mism, float(abs(case.pressure(Xi, ti)[0] - ev_point(p, Xi, ti, xs))))
    return {
        "max_momentum_residual": float(np.max(np.abs(residual))),
        "max_divergence": float(np.max(np.abs(divergence))),
        "max_field_mismatch": mism,
    }


def ev_point(expr, X, t, xs):
    env = {name: X[0, i] for i, name in enumerate(xs)}
    env["t"] = t
    return float(expr(**env))
