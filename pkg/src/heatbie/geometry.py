"""Closed boundary curves in the plane and the space-time lattice.

Curves are star-shaped polar curves ``r(theta) = R + a cos(k theta)`` about a
center, traversed counterclockwise. The circle is the ``a = 0`` case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POLYLINE_SEGMENTS = 4096


class GeometryError(ValueError):
    """Invalid curve parameters or an invalid perforated-domain configuration."""


@dataclass(frozen=True)
class BoundaryCurve:
    """Smooth closed curve ``gamma(theta) = center + r(theta) (cos theta, sin theta)``.

    The outward normal is the clockwise rotation of the unit tangent.
    """

    center: tuple[float, float]
    radius: float
    amplitude: float = 0.0
    wobbles: int = 0
    name: str = "curve"

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"radius must be positive, got {self.radius}")
        if self.amplitude < 0:
            raise GeometryError(f"wobble amplitude must be >= 0, got {self.amplitude}")
        if self.amplitude >= self.radius:
            raise GeometryError(
                f"wobble amplitude {self.amplitude} must be smaller than radius {self.radius}"
            )
        if self.wobbles < 0:
            raise GeometryError(f"wobble count must be >= 0, got {self.wobbles}")

    @property
    def kind(self) -> str:
        return "circle" if self.amplitude == 0 else "star"

    def _polar(self, theta):
        k, a = self.wobbles, self.amplitude
        r = self.radius + a * np.cos(k * theta)
        dr = -a * k * np.sin(k * theta)
        ddr = -a * k * k * np.cos(k * theta)
        return r, dr, ddr

    def position(self, theta):
        theta = np.asarray(theta, dtype=float)
        r, _, _ = self._polar(theta)
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([self.center[0] + r * c, self.center[1] + r * s], axis=-1)

    def derivative(self, theta):
        """First derivative gamma'(theta)."""
        theta = np.asarray(theta, dtype=float)
        r, dr, _ = self._polar(theta)
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([dr * c - r * s, dr * s + r * c], axis=-1)

    def second_derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        r, dr, ddr = self._polar(theta)
        c, s = np.cos(theta), np.sin(theta)
        return np.stack(
            [ddr * c - 2 * dr * s - r * c, ddr * s + 2 * dr * c - r * s], axis=-1
        )

    def speed(self, theta):
        return np.linalg.norm(self.derivative(theta), axis=-1)

    def normal(self, theta):
        d = self.derivative(theta)
        n = np.stack([d[..., 1], -d[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def curvature(self, theta):
        """Signed curvature, positive for a convex counterclockwise curve."""
        d = self.derivative(theta)
        dd = self.second_derivative(theta)
        cross = d[..., 0] * dd[..., 1] - d[..., 1] * dd[..., 0]
        return cross / np.linalg.norm(d, axis=-1) ** 3

    def arclength(self, n: int = 64) -> float:
        """Periodic trapezoid rule for the length of the curve."""
        theta = 2 * np.pi * np.arange(n) / n
        return float(np.sum(self.speed(theta)) * 2 * np.pi / n)

    def polyline(self, n: int = POLYLINE_SEGMENTS):
        theta = 2 * np.pi * np.arange(n) / n
        return self.position(theta)

    def winding_number(self, points):
        """Winding number of the polyline around each point (signed edge crossings)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a = self.polyline()
        b = np.roll(a, -1, axis=0)
        out = np.empty(len(pts), dtype=int)
        for lo in range(0, len(pts), 256):
            p = pts[lo:lo + 256, None, :]
            ay, by = a[None, :, 1], b[None, :, 1]
            # side > 0 when p is left of the directed edge a -> b
            side = (b[None, :, 0] - a[None, :, 0]) * (p[..., 1] - ay) - (p[..., 0] - a[None, :, 0]) * (by - ay)
            up = (ay <= p[..., 1]) & (by > p[..., 1]) & (side > 0)
            down = (ay > p[..., 1]) & (by <= p[..., 1]) & (side < 0)
            out[lo:lo + 256] = np.sum(up, axis=1) - np.sum(down, axis=1)
        return out

    def contains(self, points):
        return self.winding_number(points) != 0

    def distance(self, points):
        """Distance from each point to the fine polyline."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p0 = self.polyline()
        seg = np.roll(p0, -1, axis=0) - p0
        seg2 = np.sum(seg * seg, axis=1)
        out = np.empty(len(pts))
        for lo in range(0, len(pts), 64):
            w = pts[lo:lo + 64, None, :] - p0[None]
            s = np.clip(np.einsum("psk,sk->ps", w, seg) / seg2, 0.0, 1.0)
            out[lo:lo + 64] = np.sqrt(np.min(np.sum((w - s[..., None] * seg) ** 2, axis=-1), axis=1))
        return out

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "center": list(self.center), "radius": self.radius}
        if self.kind == "star":
            out["amplitude"] = self.amplitude
            out["wobbles"] = self.wobbles
        return out


def make_circle(center=(0.0, 0.0), radius: float = 1.0, name: str = "circle") -> BoundaryCurve:
    if not radius > 0:
        raise GeometryError(f"radius must be positive, got {radius}")
    return BoundaryCurve((float(center[0]), float(center[1])), float(radius), name=name)


def make_star(
    center=(0.0, 0.0),
    radius: float = 1.0,
    amplitude: float = 0.0,
    wobbles: int = 0,
    name: str = "star",
) -> BoundaryCurve:
    return BoundaryCurve(
        (float(center[0]), float(center[1])), float(radius), float(amplitude), int(wobbles), name
    )


def curve_from_dict(spec: dict, name: str = "curve") -> BoundaryCurve:
    kind = spec.get("kind", "circle")
    center = tuple(spec.get("center", (0.0, 0.0)))
    if kind == "circle":
        return make_circle(center, spec["radius"], name=name)
    if kind == "star":
        return make_star(center, spec["radius"], spec.get("amplitude", 0.0), spec.get("wobbles", 0), name=name)
    raise GeometryError(f"unknown curve kind {kind!r}")


@dataclass(frozen=True)
class AnnulusReport:
    valid: bool
    separation: float
    message: str = ""


def validate_annulus(outer: BoundaryCurve, inner: BoundaryCurve, raise_on_error: bool = True) -> AnnulusReport:
    """Check that ``inner`` lies strictly inside ``outer`` and return their separation."""
    pin = inner.polyline(1024)
    pout = outer.polyline(1024)
    inside = outer.contains(pin)
    if not np.all(inside):
        msg = f"{np.count_nonzero(~inside)} samples of the inner curve lie outside the outer curve"
    else:
        sep = float(np.min(outer.distance(pin)))
        if sep > 0 and not np.any(inner.contains(pout[::4])):
            return AnnulusReport(True, sep, "ok")
        msg = "curves touch or overlap"
    if raise_on_error:
        raise GeometryError(msg)
    return AnnulusReport(False, 0.0, msg)


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform time grid on [0, T] and uniform parameter nodes on each boundary."""

    T: float
    Nt: int
    Nx: int
    theta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.T > 0:
            raise GeometryError(f"horizon T must be positive, got {self.T}")
        if self.Nt < 1:
            raise GeometryError(f"Nt must be >= 1, got {self.Nt}")
        if self.Nx < 8:
            raise GeometryError(f"Nx must be >= 8, got {self.Nx}")
        object.__setattr__(self, "theta", 2 * np.pi * np.arange(self.Nx) / self.Nx)

    @property
    def ht(self) -> float:
        return self.T / self.Nt

    @property
    def times(self) -> np.ndarray:
        return self.ht * np.arange(self.Nt + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nt + 1, self.Nx)
