"""Temporal source amplitudes rho(t) from a small catalog."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


@dataclass(frozen=True)
class AmplitudeFunction:
    """Temporal factor of the separable source ``rho(t) f(x)``.

    Kinds and their parameters:

    * ``constant``: ``value``
    * ``affine``: ``value + slope * t``
    * ``sinusoidal-offset``: ``offset + amplitude * sin(frequency * t + phase)``
    * ``tabulated``: piecewise-linear through ``(times, values)``
    """

    kind: str
    params: dict = field(default_factory=dict)

    KINDS = ("constant", "affine", "sinusoidal-offset", "tabulated")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown amplitude kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "tabulated":
            t = np.asarray(self.params["times"], dtype=float)
            v = np.asarray(self.params["values"], dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 2 or np.any(np.diff(t) <= 0):
                raise ValueError("tabulated amplitude needs increasing times and matching values")

    # -- constructors ---------------------------------------------------
    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", {"value": float(value)})

    @classmethod
    def affine(cls, value, slope):
        return cls("affine", {"value": float(value), "slope": float(slope)})

    @classmethod
    def sinusoidal(cls, offset, amplitude=1.0, frequency=1.0, phase=0.0):
        return cls(
            "sinusoidal-offset",
            {"offset": float(offset), "amplitude": float(amplitude),
             "frequency": float(frequency), "phase": float(phase)},
        )

    @classmethod
    def tabulated(cls, times, values):
        return cls("tabulated", {"times": [float(t) for t in times], "values": [float(v) for v in values]})

    # -- evaluation -----------------------------------------------------
    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            out = np.full(t.shape, p["value"])
        elif self.kind == "affine":
            out = p["value"] + p["slope"] * t
        elif self.kind == "sinusoidal-offset":
            out = p["offset"] + p["amplitude"] * np.sin(p["frequency"] * t + p["phase"])
        else:
            out = np.interp(t, p["times"], p["values"])
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            out = np.zeros(t.shape)
        elif self.kind == "affine":
            out = np.full(t.shape, p["slope"])
        elif self.kind == "sinusoidal-offset":
            out = p["amplitude"] * p["frequency"] * np.cos(p["frequency"] * t + p["phase"])
        else:
            times = np.asarray(p["times"])
            slopes = np.diff(p["values"]) / np.diff(times)
            idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, slopes.size - 1)
            out = slopes[idx]
        return out if out.ndim else float(out)

    def _candidates(self, T: float) -> NDArray:
        """Points of [0, T] where rho or rho' attains its extrema."""
        pts = [0.0, T]
        p = self.params
        if self.kind == "sinusoidal-offset" and p["frequency"] != 0.0:
            w, phi = p["frequency"], p["phase"]
            # extrema of sin and cos: w t + phi = k pi / 2
            k_lo, k_hi = sorted(((phi) / (np.pi / 2), (w * T + phi) / (np.pi / 2)))
            for k in range(int(np.ceil(k_lo)), int(np.floor(k_hi)) + 1):
                pts.append((k * np.pi / 2 - phi) / w)
        elif self.kind == "tabulated":
            pts.extend(t for t in p["times"] if 0.0 <= t <= T)
        return np.clip(np.asarray(pts, dtype=float), 0.0, T)

    def rho0(self, T: float) -> float:
        """``min`` of rho over [0, T] (exact for every catalog kind)."""
        return float(np.min(self(self._candidates(T))))

    def sup(self, T: float) -> float:
        return float(np.max(np.abs(self(self._candidates(T)))))

    def c1_norm(self, T: float) -> float:
        """``sup|rho| + sup|rho'|`` over [0, T]."""
        pts = self._candidates(T)
        if self.kind == "tabulated":
            dsup = float(np.max(np.abs(self.derivative(pts[:-1] if pts.size > 1 else pts))))
        else:
            dsup = float(np.max(np.abs(self.derivative(pts))))
        return self.sup(T) + dsup

    def scaled(self, factor: float) -> "AmplitudeFunction":
        p = dict(self.params)
        if self.kind == "constant":
            p["value"] *= factor
        elif self.kind == "affine":
            p["value"] *= factor
            p["slope"] *= factor
        elif self.kind == "sinusoidal-offset":
            p["offset"] *= factor
            p["amplitude"] *= factor
        else:
            p["values"] = [v * factor for v in p["values"]]
        return AmplitudeFunction(self.kind, p)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}
