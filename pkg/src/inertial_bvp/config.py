"""Run configuration: a JSON document validated before any computation."""
import json
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .problems import REGISTRY, make_problem


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemConfig(_Strict):
    name: Literal["rotating_2d", "kse_galerkin", "two_layer_lorenz", "linear_benchmark"]
    params: dict = Field(default_factory=dict)


class Grid(_Strict):
    start: float
    stop: float
    step: float

    def values(self):
        if self.step <= 0:
            raise ConfigError("grid step must be positive")
        n = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        if n < 1:
            raise ConfigError("empty grid")
        return [round(self.start + k * self.step, 12) for k in range(n)]


class UFix(_Strict):
    index: List[int]
    value: List[float]


class Tolerances(_Strict):
    bvp: float = Field(1e-3, gt=0)
    ivp_rtol: float = Field(1e-4, gt=0)
    ivp_atol: float = Field(1e-7, gt=0)
    max_nodes: int = Field(2000, ge=3)


class TrajectoryConfig(_Strict):
    scheme: str = "euler"
    dt: float = Field(1e-2, gt=0)
    N: int = Field(100, ge=0)


class DecoupleConfig(_Strict):
    t0: float = 0.0
    t1: float = 10.0
    u0: Optional[List[float]] = None
    rtol: float = Field(1e-8, gt=0)
    atol: float = Field(1e-10, gt=0)
    max_step: Optional[float] = None


class TboundConfig(_Strict):
    K: float = 1.0
    alpha: float
    beta: float
    L: float
    sigma: Optional[float] = None
    tol: float = Field(1e-6, gt=0)
    x0_norm: float = Field(1.0, ge=0)
    t0: float = 0.0
    T_max: Optional[float] = None
    samples: int = Field(51, ge=2)


class RunConfig(_Strict):
    problem: ProblemConfig = Field(default_factory=lambda: ProblemConfig(name="rotating_2d"))
    p: int = Field(1, ge=1)
    t: float = 0.0
    T: Optional[float] = Field(None, gt=0)
    T_grid: Optional[List[float] | Grid] = None
    what_boundary: Optional[List[List[float]]] = None
    what_grid: Optional[List[List[List[float]]]] = None
    y0: Optional[List[float]] = None
    u_fix: Optional[UFix] = None
    linearization: Literal["anchor", "trajectory"] = "anchor"
    tol: Tolerances = Field(default_factory=Tolerances)
    defect_horizon: Optional[float] = Field(None, gt=0)
    trajectory: TrajectoryConfig = Field(default_factory=TrajectoryConfig)
    decouple: DecoupleConfig = Field(default_factory=DecoupleConfig)
    tbound: Optional[TboundConfig] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.y0 is not None and self.u_fix is not None:
            raise ValueError("give at most one of y0 and u_fix")
        return self

    # --- resolved values ---------------------------------------------------

    def make_problem(self):
        try:
            return make_problem(self.problem.name, **self.problem.params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {self.problem.name}: {exc}") from exc

    def T_values(self):
        if self.T_grid is None:
            if self.T is None:
                raise ConfigError("need T or T_grid")
            return [self.T]
        vals = self.T_grid.values() if isinstance(self.T_grid, Grid) else list(self.T_grid)
        if not vals:
            raise ConfigError("T_grid is empty")
        if any(v <= 0 for v in vals):
            raise ConfigError("T values must be positive")
        return vals

    def query(self, problem, T=None):
        """Build a :class:`ManifoldQuery`; the slow part defaults to a unit alternating ``y0``."""
        from .manifold import ManifoldQuery

        d = problem.dim
        if not self.p < d:
            raise ConfigError(f"p={self.p} must be smaller than the dimension d={d}")
        T = self.T if T is None else T
        if T is None:
            T = self.T_values()[0]
        kw = dict(p=self.p, T=float(T), t=self.t, bvp_tol=self.tol.bvp, ivp_rtol=self.tol.ivp_rtol,
                  ivp_atol=self.tol.ivp_atol, max_nodes=self.tol.max_nodes,
                  linearization=self.linearization)
        if self.what_boundary is not None:
            kw["what_boundary"] = tuple(tuple(w) for w in self.what_boundary)
        if self.u_fix is not None:
            if any(not 0 <= i < d for i in self.u_fix.index):
                raise ConfigError("u_fix index out of range")
            kw["u_fix"] = {"index": list(self.u_fix.index), "value": list(self.u_fix.value)}
        else:
            kw["y0"] = tuple(self.y0) if self.y0 is not None else tuple(default_y0(self.p))
        try:
            return ManifoldQuery(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved(self):
        """Config as a plain dict with every default filled in, problem parameters included."""
        out = self.model_dump(mode="json")
        try:
            out["problem"]["resolved"] = self.make_problem().describe()
        except ConfigError:
            pass
        return out


def default_y0(p):
    """Normalized alternating vector ``(-1, 1, -1, ..) / sqrt(p)``."""
    v = np.resize([-1.0, 1.0], p)
    return v / np.sqrt(p)


def load_config(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def schema():
    return RunConfig.model_json_schema()


__all__ = ["RunConfig", "load_config", "schema", "default_y0", "REGISTRY"]
