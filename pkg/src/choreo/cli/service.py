"""HTTP facade over the toolkit: one POST endpoint per operation.

Every endpoint takes the same payload (configuration text or an already
parsed section tree, plus optional seed/threads overrides) and returns
``{"records": [...]}`` where each record is one NDJSON-able dict.  The
command line client talks to this app in process; pointing it at a remote
instance changes nothing but the transport.
"""

from __future__ import annotations

import math

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from .. import __version__
from ..average import AveragedPotential, QuadraturePolicy
from ..nondeg import detm_random_sweep
from .config import ConfigError, get, parse_config, put, validate_keys
from .scenarios import (Scenario, _build_path, _jsonable, _joint_minimum,
                        run_scenario, sweep_grid_from_config, sweep_scenarios)

app = FastAPI(title="choreo service", version=__version__)


class ConfigPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config_text: str | None = None
    config: dict | None = None
    seed: int | None = None
    threads: int | None = None
    grid: dict | None = None


def _load(payload: ConfigPayload) -> dict:
    if payload.config_text is None and payload.config is None:
        raise ConfigError("payload needs config_text or config")
    if payload.config_text is not None:
        cfg = parse_config(payload.config_text)
    else:
        cfg = dict(payload.config)
    if payload.seed is not None:
        put(cfg, "run.seed", int(payload.seed))
    return cfg


def _scenario(cfg: dict, default_name: str | None = None) -> Scenario:
    if default_name is not None and get(cfg, "scenario.name", None) is None:
        put(cfg, "scenario.name", default_name)
    return Scenario.from_config(cfg)


def _guard(fn):
    try:
        return _jsonable(fn())
    except HTTPException:
        raise
    except Exception as exc:
        raise HTTPException(status_code=422,
                            detail=f"{type(exc).__name__}: {exc}") from exc


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/simulate")
def simulate(payload: ConfigPayload) -> dict:
    def work():
        report, artifacts = run_scenario(_scenario(_load(payload)))
        records = [report.to_record()]
        for rec in artifacts.get("minimum", []):
            records.append({"record": "minimum", **rec})
        records.extend(artifacts.get("samples", []))
        records.extend(artifacts.get("orbit", []))
        return {"records": records}
    return _guard(work)


@app.post("/minimize")
def minimize(payload: ConfigPayload) -> dict:
    def work():
        cfg = _load(payload)
        scn = _scenario(cfg, default_name="smooth-choreo")
        path = _build_path(scn)
        report, xi = _joint_minimum(scn, path, QuadraturePolicy())
        rec = {"record": "minimum", **report.to_record(),
               "xi": [[float(x) for x in row] for row in np.atleast_2d(xi)]}
        return {"records": [rec]}
    return _guard(work)


@app.post("/average")
def average(payload: ConfigPayload) -> dict:
    def work():
        cfg = _load(payload)
        scn = _scenario(cfg, default_name="smooth-choreo")
        path = _build_path(scn)
        avg = AveragedPotential(path, scn.spec.interaction,
                                QuadraturePolicy(), None)
        n = int(get(cfg, "average.n", 64))
        zeta = float(get(cfg, "average.zeta", 0.0))
        derivs = min(4, max(0, int(get(cfg, "average.derivs", 2))))
        records = []
        for v in np.linspace(0.0, 2.0 * math.pi, n, endpoint=False):
            rec = {"record": "w-avg", "vartheta": float(v),
                   "zeta": zeta, "value": float(avg.value(v, zeta))}
            for order in range(1, derivs + 1):
                rec[f"d{order}"] = float(avg.deriv(v, zeta, order))
            records.append(rec)
        return {"records": records}
    return _guard(work)


@app.post("/nondeg")
def nondeg(payload: ConfigPayload) -> dict:
    def work():
        cfg = _load(payload)
        validate_keys(cfg)
        draws = detm_random_sweep(
            n_draws=int(get(cfg, "nondeg.n_draws", 100)),
            seed=int(get(cfg, "nondeg.seed", 0)),
            workers=payload.threads)
        records = [{"record": "detm-draw", **d,
                    "passed": d["residual"] < 1e-10} for d in draws]
        worst = max((d["residual"] for d in draws), default=0.0)
        records.append({"record": "detm-summary", "n_draws": len(draws),
                        "max_residual": worst, "passed": worst < 1e-10})
        return {"records": records}
    return _guard(work)


@app.post("/billiard")
def billiard(payload: ConfigPayload) -> dict:
    def work():
        scn = _scenario(_load(payload), default_name="billiard-ellipse")
        report, _ = run_scenario(scn)
        return {"records": [report.to_record()]}
    return _guard(work)


@app.post("/scaling")
def scaling(payload: ConfigPayload) -> dict:
    def work():
        scn = _scenario(_load(payload), default_name="scaling-probe")
        report, _ = run_scenario(scn)
        return {"records": [report.to_record()]}
    return _guard(work)


@app.post("/sweep")
def sweep(payload: ConfigPayload) -> dict:
    def work():
        cfg = _load(payload)
        grid = payload.grid or sweep_grid_from_config(cfg)
        threads = payload.threads or get(cfg, "sweep.threads", None)
        records = sweep_scenarios(cfg, grid, threads=threads)
        return {"records": records}
    return _guard(work)
