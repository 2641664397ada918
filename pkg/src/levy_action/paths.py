"""Grid paths on [0, 1] and step functions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


class Path:
    """Values ``phi(k/n)``, ``k = 0..n``, on a uniform grid of ``[0, 1]``.

    With ``step=False`` the path is the piecewise-linear interpolant (an
    absolutely continuous path); with ``step=True`` it is the càdlàg step path
    that holds ``values[k]`` on ``[k/n, (k+1)/n)``.
    """

    def __init__(self, values, start=None, step=False):
        values = np.array(values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValidationError("a path needs at least two grid values", "/values")
        if not np.all(np.isfinite(values)):
            raise ValidationError("path values must be finite", "/values")
        if start is not None and float(start) != values[0]:
            raise ValidationError(f"values[0]={values[0]!r} does not match start={start!r}", "/start")
        values.setflags(write=False)
        self.values = values
        self.step = bool(step)

    @property
    def n(self):
        return self.values.size - 1

    @property
    def start(self):
        return float(self.values[0])

    @property
    def end(self):
        return float(self.values[-1])

    @property
    def times(self):
        return np.linspace(0.0, 1.0, self.n + 1)

    @property
    def slopes(self):
        return self.n * np.diff(self.values)

    @property
    def midpoints(self):
        return 0.5 * (self.values[:-1] + self.values[1:])

    def __call__(self, t):
        """Evaluate the path at times ``t`` (linear or step interpretation)."""
        t = np.asarray(t, dtype=float)
        if self.step:
            k = np.clip(np.floor(t * self.n + 1e-12).astype(int), 0, self.n)
            return self.values[k]
        return np.interp(t, self.times, self.values)

    @classmethod
    def from_function(cls, fn, n):
        t = np.linspace(0.0, 1.0, n + 1)
        return cls(np.asarray(fn(t), dtype=float) * np.ones(n + 1))

    @classmethod
    def line(cls, x0, x1, n):
        return cls(np.linspace(x0, x1, n + 1))

    def with_values(self, values):
        return Path(values, step=self.step)

    def to_dict(self):
        out = {"n": self.n, "values": self.values.tolist(), "start": self.start}
        if self.step:
            out["step"] = True
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ValidationError("path document must be an object", "")
        for key in ("n", "values"):
            if key not in doc:
                raise ValidationError(f"missing key {key!r}", f"/{key}")
        values = doc["values"]
        if not isinstance(values, list) or len(values) != int(doc["n"]) + 1:
            raise ValidationError("values must be a list of n+1 numbers", "/values")
        return cls(values, start=doc.get("start"), step=bool(doc.get("step", False)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def sup_distance(self, other):
        """``max_k |phi(t_k) - psi(t_k)|`` on a shared grid."""
        if other.n != self.n:
            raise ValidationError(f"grid sizes differ: {self.n} vs {other.n}")
        return float(np.max(np.abs(self.values - other.values)))

    def __repr__(self):
        kind = "step" if self.step else "linear"
        return f"Path(n={self.n}, {kind}, start={self.start:g}, end={self.end:g})"


@dataclass(frozen=True)
class StepFunction:
    """``alpha(t) = sum_j c_j 1[s_j, t_j)(t)`` with ordered, disjoint pieces."""

    pieces: tuple

    def __post_init__(self):
        pieces = tuple((float(c), float(s), float(t)) for c, s, t in self.pieces)
        prev = 0.0
        for j, (c, s, t) in enumerate(pieces):
            if not all(math.isfinite(v) for v in (c, s, t)):
                raise ValidationError("step-function entries must be finite", f"/pieces/{j}")
            if not (s >= prev and s < t <= 1.0 and s >= 0.0):
                raise ValidationError("pieces must satisfy 0 <= s_1 < t_1 <= s_2 < ... <= 1", f"/pieces/{j}")
            prev = t
        object.__setattr__(self, "pieces", pieces)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for c, s, e in self.pieces:
            out = out + c * ((t >= s) & (t < e))
        return out

    @property
    def terminal(self):
        """``alpha(1)``; zero unless a piece ends at 1 inclusive (never)."""
        return 0.0

    def breakpoints(self):
        pts = {0.0, 1.0}
        for _, s, t in self.pieces:
            pts.update((s, t))
        return np.array(sorted(pts))
