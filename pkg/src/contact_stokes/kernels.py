"""Perturbation nonlinearities of the contact-point problem.

``R`` is the exact second-order Taylor remainder of ``f(s) = s / sqrt(1 + s^2)``
around the equilibrium slope, ``Q`` its antiderivative in the perturbation
slope, and ``What`` the quadratic remainder of the inverse contact-point
velocity response.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator


def _slope_ratio(s):
    return s / np.sqrt(1.0 + s * s)


def R_eval(y, z):
    """Closed-form Taylor remainder ``R(y, z)``.

    ``f(y + z) = f(y) + z / (1 + y^2)^{3/2} + R(y, z)`` with ``f(s) = s/sqrt(1+s^2)``.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return _slope_ratio(y + z) - _slope_ratio(y) - z / (1.0 + y * y) ** 1.5


def R_dz(y, z):
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return (1.0 + (y + z) ** 2) ** -1.5 - (1.0 + y * y) ** -1.5


def R_dy(y, z):
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return (
        (1.0 + (y + z) ** 2) ** -1.5
        - (1.0 + y * y) ** -1.5
        + 3.0 * y * z * (1.0 + y * y) ** -2.5
    )


def R_quad(y: float, z: float, tol: float = 1e-13) -> float:
    """Integral representation of ``R``; used as an independent check."""
    val, _ = integrate.quad(
        lambda s: 3.0 * (s - z) * (s + y) / (1.0 + (y + s) ** 2) ** 2.5,
        0.0,
        z,
        epsabs=tol,
        epsrel=tol,
        limit=200,
    )
    return val


def Q_eval(y, z):
    """Potential ``Q(y, z) = int_0^z R(y, r) dr`` in closed form.

    For small ``|z|`` a Taylor series replaces the closed form, which cancels
    O(1) terms down to O(z^3).
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    y, z = np.broadcast_arrays(y, z)
    a = 1.0 + y * y
    closed = (
        np.sqrt(1.0 + (y + z) ** 2)
        - np.sqrt(a)
        - y * z / np.sqrt(a)
        - 0.5 * z * z / a**1.5
    )
    # d^3/ds^3 sqrt(1+s^2) = -3 s (1+s^2)^{-5/2}; d^4 = (12 s^2 - 3)(1+s^2)^{-7/2}
    series = -0.5 * y * z**3 / a**2.5 + (12.0 * y * y - 3.0) * z**4 / (24.0 * a**3.5)
    small = np.abs(z) < 1e-3
    out = np.where(small, series, closed)
    return out[()] if out.ndim == 0 else out


def Q_quad(y: float, z: float, tol: float = 1e-13) -> float:
    """``Q`` by adaptive quadrature of the closed-form ``R``."""
    val, _ = integrate.quad(lambda r: float(R_eval(y, r)), 0.0, z, epsabs=tol, epsrel=tol)
    return val


class ResponseError(ValueError):
    pass


@dataclass(frozen=True)
class ResponseFunction:
    """Contact-point velocity response ``V`` and its inverse ``W``.

    ``kind`` is one of ``"linear"`` (``W(v) = kappa v``), ``"sinh"``
    (``V(z) = A sinh(B z)``) or ``"tabulated"`` (monotone samples of ``V``,
    interpolated with PCHIP).
    """

    kind: str = "linear"
    kappa0: float = 1.0
    A: float = 1.0
    B: float = 1.0
    z_samples: tuple = ()
    v_samples: tuple = ()
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "linear":
            if not self.kappa0 > 0:
                raise ResponseError("linear response needs kappa > 0")
        elif self.kind == "sinh":
            if not (self.A > 0 and self.B > 0):
                raise ResponseError("sinh response needs A, B > 0")
        elif self.kind == "tabulated":
            z = np.asarray(self.z_samples, dtype=float)
            v = np.asarray(self.v_samples, dtype=float)
            if z.size < 4 or z.shape != v.shape:
                raise ResponseError("tabulated response needs >= 4 paired samples")
            if np.any(np.diff(z) <= 0) or np.any(np.diff(v) <= 0):
                raise ResponseError("tabulated response must be strictly increasing")
            if not (z[0] < 0 < z[-1]):
                raise ResponseError("tabulated response must bracket z = 0")
            object.__setattr__(self, "_interp", PchipInterpolator(z, v, extrapolate=False))
            if abs(float(self._interp(0.0))) > 1e-12 * max(1.0, np.abs(v).max()):
                raise ResponseError("tabulated response must satisfy V(0) = 0")
        else:
            raise ResponseError(f"unknown response kind {self.kind!r}")

    @classmethod
    def linear(cls, kappa: float) -> "ResponseFunction":
        return cls(kind="linear", kappa0=kappa)

    @classmethod
    def sinh(cls, A: float, B: float) -> "ResponseFunction":
        return cls(kind="sinh", A=A, B=B)

    @classmethod
    def tabulated(cls, z, v) -> "ResponseFunction":
        return cls(kind="tabulated", z_samples=tuple(map(float, z)), v_samples=tuple(map(float, v)))

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    def V(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "linear":
            return z / self.kappa0
        if self.kind == "sinh":
            return self.A * np.sinh(self.B * z)
        self._check_range(z, self.z_samples)
        return self._interp(z)

    def W(self, v):
        """Inverse response; for tables by bracketed root finding on ``V``."""
        v = np.asarray(v, dtype=float)
        if self.kind == "linear":
            return self.kappa0 * v
        if self.kind == "sinh":
            return np.arcsinh(v / self.A) / self.B
        self._check_range(v, self.v_samples)
        z0, z1 = self.z_samples[0], self.z_samples[-1]
        solve = lambda t: optimize.brentq(lambda s: float(self._interp(s)) - t, z0, z1, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        out = np.array([solve(t) for t in np.atleast_1d(v).ravel()]).reshape(np.shape(v))
        return out[()] if out.ndim == 0 else out

    def W_prime(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "linear":
            return np.full_like(v, self.kappa0)
        if self.kind == "sinh":
            return 1.0 / (self.B * np.sqrt(self.A**2 + v * v))
        return 1.0 / self._interp(self.W(v), 1)

    @staticmethod
    def _check_range(t, samples):
        if np.any(t < samples[0]) or np.any(t > samples[-1]):
            raise ResponseError(
                f"response evaluated outside its tabulated range [{samples[0]}, {samples[-1]}]"
            )


def kappa_of(response: ResponseFunction) -> float:
    """``kappa = W'(0)``; analytic for closed forms, 4th-order differences for tables."""
    if response.kind == "linear":
        k = response.kappa0
    elif response.kind == "sinh":
        k = 1.0 / (response.A * response.B)
    else:
        span = min(-response.v_samples[0], response.v_samples[-1])
        h = 1e-3 * span
        W = response.W
        k = float((-W(2 * h) + 8 * W(h) - 8 * W(-h) + W(-2 * h)) / (12 * h))
    if not k > 0:
        raise ResponseError(f"kappa must be positive, got {k}")
    return float(k)


def w_hat(z, response: ResponseFunction, kappa: float | None = None):
    """Quadratic remainder ``What(z) = W(z)/kappa - z``."""
    if kappa is None:
        kappa = kappa_of(response)
    if response.is_linear:
        return np.zeros_like(np.asarray(z, dtype=float))
    return response.W(z) / kappa - np.asarray(z, dtype=float)


def load_response_csv(path) -> ResponseFunction:
    """Read a two-column ``z, V(z)`` table (header row optional)."""
    zs, vs = [], []
    first = True
    with open(Path(path), newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                z, v = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if first:
                    first = False
                    continue  # header
                raise ResponseError(f"{path}:{lineno}: expected two numbers, got {row!r}") from None
            first = False
            zs.append(z)
            vs.append(v)
    return ResponseFunction.tabulated(zs, vs)
