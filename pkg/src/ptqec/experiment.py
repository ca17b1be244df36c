"""Configuration-driven sweeps over noise parameters.

A config is a TOML file::

    code = "five_qubit"            # five_qubit | steane | file:<path>
    metric = "both"                # hs | cd | both
    backend = "exact"              # exact | mps
    depolarizing_convention = "total_over_three"
    block_order = ["depolarizing", "heisenberg", "zz"]
    seed = 0                       # reserved, the pipeline is deterministic
    workers = 1

    [params]                       # scalars or lists; the grid is their product
    p_err = [1e-4, 1e-3]
    j_ct = 0.0
    j_nm = [0.0, 0.01]

    [mps]                          # required iff backend = "mps"
    max_bond = [128, 256]
    sv_threshold = 1e-8
    reference = "exact"            # exact | none | mps:<bond>

    [output]
    path = "results.csv"
    format = "csv"                 # csv | json
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from . import __version__
from .channels import DepolarizingConvention, NoiseParams
from .codes import load_code
from .decoder import Metric, ml_decode, score_branches
from .process import CapabilityError, branch_states, build_process_tensor, parse_block_order

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunManifest",
    "PUBLISHED_TABLES",
    "load_config",
    "parse_config",
    "run",
    "reproduce",
    "decoder_export",
    "write_csv",
    "csv_columns",
]

CSV_BASE = ["p_err", "j_ct", "j_nm", "metric", "backend", "max_bond", "p_fail_or_est"]
CSV_MPS = ["p_perf", "one_minus_fidelity"]

# published Steane reference rows: chi -> (p_est, p_perf, 1 - F); "exact" -> p_fail(cd)
PUBLISHED_TABLES = {
    "steane_low": {
        "p": 1e-4,
        "rows": {
            128: (6.2682e-4, 9.0272e-4, 5.7262e-8),
            256: (8.0750e-4, 8.0847e-4, 1.2322e-12),
            512: (8.0791e-4, 8.0845e-4, 4.9616e-13),
            1024: (8.0794e-4, 8.0845e-4, 4.1056e-13),
        },
        "exact": 8.0828e-4,
    },
    "steane_mid": {
        "p": 1e-3,
        "rows": {
            128: (6.7378e-3, 9.6312e-3, 5.7948e-6),
            256: (8.6344e-3, 8.6946e-3, 9.8323e-9),
            512: (8.6890e-3, 8.6921e-3, 1.2113e-9),
            1024: (8.6908e-3, 8.6913e-3, 1.0829e-12),
        },
        "exact": 8.6913e-3,
    },
    "steane_high": {
        "p": 1e-2,
        "rows": {
            128: (1.1548e-1, 1.4335e-1, 8.5472e-4),
            256: (1.3197e-1, 1.3565e-1, 1.0217e-4),
            512: (1.3491e-1, 1.3560e-1, 1.3690e-5),
            1024: (1.3509e-1, 1.3549e-1, 5.6104e-7),
        },
        "exact": 1.3549e-1,
    },
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _grid(value, name) -> list[float]:
    vals = value if isinstance(value, list) else [value]
    if not vals:
        raise ConfigError(f"grid '{name}' is empty")
    try:
        return [float(v) for v in vals]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid '{name}' must contain numbers") from exc


@dataclass
class ExperimentConfig:
    code: str = "five_qubit"
    p_err: list = field(default_factory=lambda: [0.0])
    j_ct: list = field(default_factory=lambda: [0.0])
    j_nm: list = field(default_factory=lambda: [0.0])
    metric: str = "both"
    backend: str = "exact"
    max_bond: list = field(default_factory=list)
    sv_threshold: float = 1e-8
    reference: str = "exact"
    depolarizing_convention: str = "total_over_three"
    block_order: tuple = ("depolarizing", "heisenberg", "zz")
    seed: int = 0
    workers: int = 1
    output_path: str | None = None
    output_format: str = "csv"

    def validate(self) -> "ExperimentConfig":
        if self.metric not in ("hs", "cd", "both"):
            raise ConfigError(f"metric must be hs, cd or both, got {self.metric!r}")
        if self.backend not in ("exact", "mps"):
            raise ConfigError(f"backend must be exact or mps, got {self.backend!r}")
        if self.backend == "mps" and not self.max_bond:
            raise ConfigError("backend 'mps' requires an [mps] section with max_bond")
        if self.backend == "exact" and self.max_bond:
            raise ConfigError("an [mps] section is only allowed with backend 'mps'")
        if any(int(b) < 1 for b in self.max_bond):
            raise ConfigError("max_bond must be >= 1")
        if self.sv_threshold < 0:
            raise ConfigError("sv_threshold must be >= 0")
        if self.output_format not in ("csv", "json"):
            raise ConfigError(f"output format must be csv or json, got {self.output_format!r}")
        ref = self.reference
        if not (ref in ("exact", "none") or (ref.startswith("mps:") and ref[4:].isdigit())):
            raise ConfigError(f"reference must be exact, none or mps:<bond>, got {ref!r}")
        try:
            DepolarizingConvention(self.depolarizing_convention)
            self.block_order = parse_block_order(self.block_order)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("p_err", "j_ct", "j_nm"):
            if not getattr(self, name):
                raise ConfigError(f"grid '{name}' is empty")
        for p in self.p_err:
            try:
                NoiseParams(p, 0.0, 0.0, self.depolarizing_convention)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return self

    @property
    def metrics(self) -> list[str]:
        return ["hs", "cd"] if self.metric == "both" else [self.metric]

    def points(self) -> list[tuple[float, float, float]]:
        """Grid points as (p_err, j_ct, j_nm) in canonical order."""
        return sorted(itertools.product(self.p_err, self.j_ct, self.j_nm))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["block_order"] = list(self.block_order)
        return d

    def digest(self) -> str:
        body = {k: v for k, v in self.as_dict().items() if k not in ("output_path", "workers")}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def parse_config(data: dict) -> ExperimentConfig:
    known = {"code", "metric", "backend", "depolarizing_convention", "block_order", "seed", "workers", "params", "mps", "output"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    params = data.get("params", {})
    mps = data.get("mps")
    out = data.get("output", {})
    cfg = ExperimentConfig(
        code=str(data.get("code", "five_qubit")),
        p_err=_grid(params.get("p_err", 0.0), "p_err"),
        j_ct=_grid(params.get("j_ct", 0.0), "j_ct"),
        j_nm=_grid(params.get("j_nm", 0.0), "j_nm"),
        metric=str(data.get("metric", "both")),
        backend=str(data.get("backend", "exact")),
        max_bond=[int(b) for b in _grid(mps.get("max_bond", []), "max_bond")] if mps and "max_bond" in mps else [],
        sv_threshold=float(mps.get("sv_threshold", 1e-8)) if mps else 1e-8,
        reference=str(mps.get("reference", "exact")) if mps else "exact",
        depolarizing_convention=str(data.get("depolarizing_convention", "total_over_three")),
        block_order=data.get("block_order", ("depolarizing", "heisenberg", "zz")),
        seed=int(data.get("seed", 0)),
        workers=int(data.get("workers", 1)),
        output_path=out.get("path"),
        output_format=str(out.get("format", "csv")),
    )
    if mps is not None and "max_bond" not in mps:
        raise ConfigError("[mps] section requires max_bond")
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    conventions: dict
    rows: list
    seconds: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _reference_branches(code, params, cfg: ExperimentConfig):
    if cfg.reference == "none":
        return None
    if cfg.reference == "exact":
        return branch_states(build_process_tensor(code, params, cfg.block_order), code)
    from .mps import MpsConfig, check_capacity, run_mps

    ref_cfg = MpsConfig(int(cfg.reference[4:]), cfg.sv_threshold)
    check_capacity(code, ref_cfg)
    return run_mps(code, params, ref_cfg, cfg.block_order).branches


def _evaluate_point(args) -> list[dict]:
    cfg, point = args
    p_err, j_ct, j_nm = point
    code = load_code(cfg.code)
    params = NoiseParams(p_err, j_nm, j_ct, cfg.depolarizing_convention)
    rows = []
    if cfg.backend == "exact":
        t0 = time.perf_counter()
        sc = score_branches(branch_states(build_process_tensor(code, params, cfg.block_order), code), code)
        elapsed = time.perf_counter() - t0
        for m in cfg.metrics:
            rows.append(
                {
                    "p_err": p_err,
                    "j_ct": j_ct,
                    "j_nm": j_nm,
                    "metric": m,
                    "backend": "exact",
                    "max_bond": "",
                    "p_fail_or_est": sc.failure(m, sc.choose(m)),
                    "seconds": elapsed,
                }
            )
        return rows
    from .mps import MpsConfig, branches_to_vector, mps_fidelity, run_mps

    reference = _reference_branches(code, params, cfg)
    ref_scores = score_branches(reference, code) if reference is not None else None
    for chi in cfg.max_bond:
        t0 = time.perf_counter()
        mrun = run_mps(code, params, MpsConfig(chi, cfg.sv_threshold), cfg.block_order)
        sc = score_branches(mrun.branches, code)
        elapsed = time.perf_counter() - t0
        fid = ""
        if reference is not None:
            fid = 1.0 - mps_fidelity(branches_to_vector(mrun.branches), branches_to_vector(reference))
        for m in cfg.metrics:
            choice = sc.choose(m)
            perf = ref_scores.failure(m, choice) if ref_scores is not None else ""
            rows.append(
                {
                    "p_err": p_err,
                    "j_ct": j_ct,
                    "j_nm": j_nm,
                    "metric": m,
                    "backend": "mps",
                    "max_bond": chi,
                    "p_fail_or_est": sc.failure(m, choice),
                    "p_perf": perf,
                    "one_minus_fidelity": fid,
                    "seconds": elapsed,
                }
            )
    return rows


def csv_columns(backend: str) -> list[str]:
    return CSV_BASE + (CSV_MPS if backend == "mps" else []) + ["seconds"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: list[dict], backend: str, fh) -> None:
    cols = csv_columns(backend)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])


def _conventions(cfg: ExperimentConfig) -> dict:
    return {
        "code": cfg.code,
        "depolarizing_convention": cfg.depolarizing_convention,
        "block_order": list(cfg.block_order),
        "slots": "n-k+1 (one block before each measurement and one before recovery)",
        "bath": "one private qubit per data qubit, |0>, never refreshed",
        "crosstalk": "open chain",
        "hs_normalisation": "overlap / 4 (noiseless (I,0) branch = 1)",
        "cd_norm": "Frobenius, unnormalised Choi (identity channel trace 2)",
        "branch_eps": 1e-14,
        "backend": cfg.backend,
        "sv_threshold": cfg.sv_threshold if cfg.backend == "mps" else None,
        "reference": cfg.reference if cfg.backend == "mps" else None,
    }


def run(cfg: ExperimentConfig, write: bool = True) -> RunManifest:
    """Evaluate every grid point; rows are sorted canonically before writing."""
    cfg.validate()
    code = load_code(cfg.code)
    if cfg.backend == "exact":
        # fail fast on infeasible sizes before dispatching any work
        probe = build_process_tensor(code, NoiseParams(0.0, max(cfg.j_nm), 0.0), cfg.block_order)
        _check_exact_size(probe, code)
    jobs = [(cfg, pt) for pt in cfg.points()]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_evaluate_point, jobs))
    else:
        results = [_evaluate_point(j) for j in jobs]
    rows = [r for chunk in results for r in chunk]
    order = {"hs": 0, "cd": 1}
    rows.sort(key=lambda r: (r["p_err"], r["j_ct"], r["j_nm"], r["max_bond"] or 0, order[r["metric"]]))
    manifest = RunManifest(cfg.digest(), __version__, _conventions(cfg), rows, [r["seconds"] for r in rows])
    if write and cfg.output_path:
        _write_outputs(manifest, cfg)
    return manifest


def _check_exact_size(pt, code):
    from .process import EXACT_QUBIT_LIMIT

    needed = 1 + code.n + (code.n if any(b.factors and pt.params.j_nm for b in pt.blocks) else 0)
    if needed > EXACT_QUBIT_LIMIT:
        raise CapabilityError(
            f"exact backend needs a dense operator on {needed} qubits for {code.name}; use backend = 'mps'"
        )


def _write_outputs(manifest: RunManifest, cfg: ExperimentConfig):
    path = Path(cfg.output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if cfg.output_format == "json":
        path.write_text(manifest.to_json())
        return
    with open(path, "w", newline="") as fh:
        write_csv(manifest.rows, cfg.backend, fh)
    Path(str(path) + ".manifest.json").write_text(manifest.to_json())


def decoder_export(cfg: ExperimentConfig, path) -> Path:
    """Write the decoder table of a single-point config."""
    cfg.validate()
    points = cfg.points()
    if len(points) != 1:
        raise ConfigError(f"export needs a single grid point, config has {len(points)}")
    if cfg.metric == "both":
        raise ConfigError("export needs metric hs or cd")
    if cfg.backend == "mps" and len(cfg.max_bond) != 1:
        raise ConfigError("export needs a single max_bond")
    p_err, j_ct, j_nm = points[0]
    code = load_code(cfg.code)
    params = NoiseParams(p_err, j_nm, j_ct, cfg.depolarizing_convention)
    if cfg.backend == "exact":
        branches = branch_states(build_process_tensor(code, params, cfg.block_order), code)
    else:
        from .mps import MpsConfig, run_mps

        branches = run_mps(code, params, MpsConfig(cfg.max_bond[0], cfg.sv_threshold), cfg.block_order).branches
    table = ml_decode(branches, code, cfg.metric)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(table.to_text())
    return path


def reproduce(
    table_id: str,
    chis=(128, 256, 512, 1024),
    reference_bond: int = 2048,
    depolarizing_convention: str = "total_over_three",
    block_order=None,
    sv_threshold: float = 1e-8,
) -> dict:
    """Steane results table: MPS ladder against a high-bond reference, side by side
    with the published values.

    The dense exact backend cannot hold the Steane code with its bath, so the
    ``exact`` row is a reference MPS run with ``reference_bond``.
    """
    if table_id not in PUBLISHED_TABLES:
        raise ConfigError(f"unknown table {table_id!r}; choose from {sorted(PUBLISHED_TABLES)}")
    from .mps import MpsConfig, branches_to_vector, check_capacity, mps_fidelity, run_mps

    table = PUBLISHED_TABLES[table_id]
    p = table["p"]
    code = load_code("steane")
    params = NoiseParams(p, p, p, depolarizing_convention)
    order = parse_block_order(block_order)
    t0 = time.perf_counter()
    # refuse before spending hours on a reference that cannot fit
    check_capacity(code, MpsConfig(reference_bond, sv_threshold))
    ref_run = run_mps(code, params, MpsConfig(reference_bond, sv_threshold), order)
    ref_sc = score_branches(ref_run.branches, code)
    ref_fail = ref_sc.failure("cd", ref_sc.choose("cd"))
    ref_vec = branches_to_vector(ref_run.branches)
    rows = []
    for chi in chis:
        t = time.perf_counter()
        mrun = run_mps(code, params, MpsConfig(chi, sv_threshold), order)
        sc = score_branches(mrun.branches, code)
        choice = sc.choose("cd")
        est = sc.failure("cd", choice)
        perf = ref_sc.failure("cd", choice)
        infid = 1.0 - mps_fidelity(branches_to_vector(mrun.branches), ref_vec)
        published = table["rows"].get(chi)
        rows.append(
            {
                "chi": chi,
                "p_est": est,
                "p_perf": perf,
                "one_minus_fidelity": infid,
                "seconds": time.perf_counter() - t,
                "discarded_weight": mrun.state.discarded,
                "published_p_est": published[0] if published else None,
                "published_p_perf": published[1] if published else None,
                "published_one_minus_fidelity": published[2] if published else None,
                "rel_dev_p_est": (est - published[0]) / published[0] if published else None,
                "rel_dev_p_perf": (perf - published[1]) / published[1] if published else None,
            }
        )
    rows.append(
        {
            "chi": f"reference(mps:{reference_bond})",
            "p_est": ref_fail,
            "p_perf": ref_fail,
            "one_minus_fidelity": 0.0,
            "seconds": ref_run.seconds,
            "discarded_weight": ref_run.state.discarded,
            "published_p_est": table["exact"],
            "published_p_perf": table["exact"],
            "published_one_minus_fidelity": 0.0,
            "rel_dev_p_est": (ref_fail - table["exact"]) / table["exact"],
            "rel_dev_p_perf": (ref_fail - table["exact"]) / table["exact"],
        }
    )
    return {
        "table": table_id,
        "params": params.as_dict(),
        "block_order": list(order),
        "sv_threshold": sv_threshold,
        "version": __version__,
        "rows": rows,
        "seconds": time.perf_counter() - t0,
    }
