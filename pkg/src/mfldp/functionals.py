"""Bounded continuous path functionals used for expectations and events.

A functional looks at finitely many time marginals of a path:
``tanh(a * <v, omega_t> + b)``, optionally averaged over ``samples`` equally
spaced times in ``[t, t_end]``. ``kind="const"`` is the constant 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TestFunctional:
    __test__ = False  # not a pytest class

    kind: str = "tanh"
    a: float = 1.0
    v: tuple = (1.0,)
    b: float = 0.0
    t: float | None = None
    t_end: float | None = None
    samples: int = 16

    def __post_init__(self):
        if self.kind not in ("tanh", "const"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))
        if self.t_end is not None and self.samples < 2:
            raise ValueError("window averages need samples >= 2")

    def times(self, horizon: float) -> np.ndarray:
        """Time points the functional reads, clipped to ``[0, horizon]``."""
        if self.kind == "const":
            return np.array([horizon])
        t0 = horizon if self.t is None else min(self.t, horizon)
        if self.t_end is None:
            return np.array([t0])
        return np.linspace(t0, min(self.t_end, horizon), self.samples)

    def apply(self, states: np.ndarray) -> np.ndarray:
        """Evaluate on marginals ``states[..., i, :]`` taken at ``self.times``.

        ``states`` has shape ``(..., len(times), d)``; returns shape ``(...)``.
        """
        if self.kind == "const":
            return np.ones(states.shape[:-2])
        d = states.shape[-1]
        v = np.zeros(d)
        v[: len(self.v)] = self.v[:d]
        proj = states[..., 0] * v[0]
        for j in range(1, d):
            proj = proj + states[..., j] * v[j]
        vals = np.tanh(self.a * proj + self.b)
        return vals.mean(axis=-1) if vals.shape[-1] > 1 else vals[..., 0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "a": self.a, "v": list(self.v), "b": self.b,
            "t": self.t, "t_end": self.t_end, "samples": self.samples,
        }


FUNCTIONALS: dict[str, TestFunctional] = {
    "one": TestFunctional(kind="const"),
    "tanh_c_T": TestFunctional(kind="tanh", a=1.0, v=(1.0,), b=0.0),
}


def register_functional(name: str, f: TestFunctional) -> None:
    FUNCTIONALS[name] = f


def get_functional(f) -> TestFunctional:
    if isinstance(f, TestFunctional):
        return f
    try:
        return FUNCTIONALS[f]
    except KeyError:
        raise KeyError(f"unknown functional id {f!r}; registered: {sorted(FUNCTIONALS)}") from None


def functional_from_dict(spec: dict) -> TestFunctional:
    return TestFunctional(**spec)
