"""Command-line driver for the bounded-section pipeline.

Subcommands
-----------
constants     critical lattice densities (cubic and hexagonal) per dimension
run           frame -> Gram -> whitening -> mixing -> certification
kernel-check  decay regimes and dual-route agreement of the reproducing kernel
compare       field-wise drift report between two run manifests
emit-polys    flattest-section polynomial and eigenfunction records

Configuration is a single JSON file (--config) whose keys mirror RunConfig;
individual flags override file values.  A run writes manifest.json,
summary.csv, and optional binary dumps into --out.  The manifest splits into
a deterministic "core" (bit-identical for identical configs, including the
distortion-sampling seed) and an "envelope" holding wall-clock data.

Exit codes: 0 every check passed, 2 a soft property deviated (logged
empirical trends such as density ratios below target), 1 a hard invariant
failed or the pipeline errored out.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import os
import sys
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__
from .certify import (
    VOLUME,
    CertifyError,
    certify_family,
    emit_eigenfunction,
    emit_polynomials,
    flat_bound,
    l2_inner,
    select_flat_sequence,
    write_ratio_csv,
)
from .constants import ConstantsError, constants_table, solve_beta, solve_beta_prime
from .flatten import FlattenError, dump_family, flatten_frame, fk_norm, sup_norm_chain_bound
from .frame import FrameError, LatticeSpec, build, choose_spacing, nearest_neighbor_distance
from .geometry import (
    GeometryError,
    cp1_latlon_cover,
    cp2_ball_cover,
    covering_defect,
    distortion_estimate,
    make_chart,
    BallRegion,
    ProjectivePoint,
    UnitLift,
    exp_chart_vectors,
    standard_point,
    two_cap_cover,
)
from .kernel import (
    KernelError,
    KernelModel,
    coherent_state,
    dimension,
    szego_kernel,
    szego_kernel_monomial_sum,
    verify_decay,
)
from .whitening import (
    WhiteningError,
    assemble_gram,
    dump_matrix,
    inv_sqrt_eigen,
    inv_sqrt_neumann,
)

# Gram assembly is dense; frames past this size are a config mistake, not a run.
GRAM_SIZE_CAP = 4000

# raw monomial coefficients overflow past this degree, so the dual-route
# kernel comparison is only meaningful below it
DUAL_ROUTE_DEGREE_CAP = 600

MODES = ("full", "constants-only", "kernel-check")
COVER_NAMES = ("latlon", "two-cap", "balls")


class CliError(ValueError):
    """Configuration rejected before any computation starts."""


class CompareError(ValueError):
    """Two manifests cannot be compared field by field."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on, plus io fields that do not affect it.

    Semantic fields enter the manifest core verbatim; out/dumps are io-only
    and excluded so identical configs give bit-identical cores.
    """

    m: int = 1
    k: tuple = (50, 100, 200, 400)
    lattice: str = "cubic"
    eta: float = 0.5
    gamma: float | None = None  # None: 1.27 single chart, max chart gamma else
    spacing: float | None = None  # None: choose_spacing(m, eta, gamma)
    t: float | None = 0.4
    cover: dict | None = None  # {"name": ..., "radius": ...}; overrides t
    delta: float | None = None
    epsilon: float = 0.05
    beta: float | None = None
    order: str = "lex"
    mesh: int = 16
    rounds: int = 16
    neumann_tol: float = 1e-10
    ortho_tol: float = 1e-8
    drift_tol: float = 1e-6
    seed: int = 0
    mode: str = "full"
    constants_max_m: int = 6
    out: str | None = None
    dumps: bool = False

    _IO_FIELDS = ("out", "dumps")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls) if not f.name.startswith("_")}
        unknown = sorted(set(data) - known)
        if unknown:
            raise CliError("unknown config keys: %s" % ", ".join(unknown))
        clean = dict(data)
        if "k" in clean:
            clean["k"] = tuple(int(v) for v in clean["k"])
        if "lattice" in clean and clean["lattice"] == "hex":
            clean["lattice"] = "hexagonal"
        return cls(**clean)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise CliError("cannot read config %s: %s" % (path, exc)) from exc
        except json.JSONDecodeError as exc:
            raise CliError("config %s is not valid JSON: %s" % (path, exc)) from exc
        if not isinstance(data, dict):
            raise CliError("config %s must hold a JSON object" % path)
        return cls.from_dict(data)

    def merged(self, overrides: dict) -> "RunConfig":
        if not overrides:
            return self
        probe = RunConfig.from_dict(overrides)  # normalizes k and lattice
        clean = {key: getattr(probe, key) for key in overrides}
        return replace(self, **clean)

    def echo(self) -> dict:
        """Semantic fields only, JSON-ready; io fields stay out of the core."""
        out = {}
        for f in fields(self):
            if f.name.startswith("_") or f.name in self._IO_FIELDS:
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise CliError("mode must be one of %s" % " | ".join(MODES))
        if not isinstance(self.m, int) or self.m < 1:
            raise CliError("m must be a positive integer")
        if self.mode == "full" and self.m > 2:
            raise CliError("full mode supports m in {1, 2} (sup-norm meshes)")
        if self.lattice not in ("cubic", "hexagonal"):
            raise CliError("lattice must be cubic or hexagonal")
        if self.lattice == "hexagonal" and self.m != 1:
            raise CliError("hexagonal lattices are planar: m must be 1")
        if self.mode in ("full", "kernel-check"):
            if len(self.k) == 0:
                raise CliError("k list is empty: give at least one degree")
            floor = 2 if self.mode == "kernel-check" else 1
            if any((not isinstance(v, int)) or v < floor for v in self.k):
                raise CliError("every k must be an integer >= %d" % floor)
        for name in ("neumann_tol", "ortho_tol", "drift_tol"):
            if not getattr(self, name) > 0:
                raise CliError("%s must be positive" % name)
        if self.mesh < 4:
            raise CliError("mesh must be at least 4 cells per dimension")
        if self.rounds < 1:
            raise CliError("rounds must be at least 1")
        if not 0 < self.eta < 1:
            raise CliError("eta target must lie in (0, 1)")
        if not 0 <= self.epsilon < 1:
            raise CliError("epsilon must lie in [0, 1)")
        if self.gamma is not None and not self.gamma > 1:
            raise CliError("gamma must exceed 1")
        if self.spacing is not None and not self.spacing > 0:
            raise CliError("spacing must be positive")
        if self.order not in ("lex", "reversed"):
            raise CliError("order must be lex or reversed")
        if self.seed < 0:
            raise CliError("seed must be a non-negative integer")
        if not 1 <= self.constants_max_m <= 12:
            raise CliError("constants_max_m must lie in 1..12")
        if self.beta is not None:
            if self.lattice == "cubic":
                critical = solve_beta(self.m).density
                label = "critical cubic density"
            else:
                critical = solve_beta_prime(self.m).density
                label = "critical hexagonal density"
            if not 0 < self.beta < critical:
                raise CliError(
                    "beta target %.6g must lie below the %s %.6g for m=%d"
                    % (self.beta, label, critical, self.m)
                )
        if self.cover is not None:
            if not isinstance(self.cover, dict) or "name" not in self.cover:
                raise CliError('cover must be an object with a "name" key')
            if self.cover["name"] not in COVER_NAMES:
                raise CliError("cover name must be one of %s" % ", ".join(COVER_NAMES))
        elif self.mode == "full":
            if self.t is None or not self.t > 0:
                raise CliError("single-chart runs need a positive halfwidth t")
        return self


# ---------------------------------------------------------------------------
# chart and lattice assembly


def build_charts(cfg: RunConfig):
    """Charts from the cover stanza, or None for a single-chart run."""
    if cfg.cover is None:
        return None
    name = cfg.cover["name"]
    radius = cfg.cover.get("radius")
    if name == "latlon":
        if cfg.m != 1:
            raise GeometryError("latlon covers exist only on the projective line")
        if radius is None:
            raise CliError("latlon cover needs a radius")
        return tuple(cp1_latlon_cover(float(radius)))
    if name == "balls":
        if cfg.m != 2:
            raise GeometryError("the disjoint ball cover is specific to m=2")
        return tuple(cp2_ball_cover(float(radius) if radius is not None else 0.4))
    if radius is None:
        raise CliError("two-cap cover needs a radius")
    return tuple(two_cap_cover(cfg.m, float(radius)))


def lattice_spec(cfg: RunConfig):
    """Resolve spacing/gamma/charts into a LatticeSpec plus a report dict."""
    charts = build_charts(cfg)
    if charts is not None:
        gamma = cfg.gamma if cfg.gamma is not None else max(c.gamma for c in charts)
        t = None
    else:
        gamma = cfg.gamma if cfg.gamma is not None else 1.27
        t = cfg.t
        reach = t * math.sqrt(2 * cfg.m)
        if reach >= math.pi / 2 - 1e-9:
            raise GeometryError(
                "single-chart halfwidth %.3g reaches %.3g, past the "
                "injectivity radius" % (t, reach)
            )
    a = cfg.spacing if cfg.spacing is not None else choose_spacing(cfg.m, cfg.eta, gamma)
    spec = LatticeSpec(
        kind=cfg.lattice,
        m=cfg.m,
        a=a,
        eta=cfg.eta,
        gamma=gamma,
        epsilon=cfg.epsilon,
        t=t,
        charts=charts,
        delta=cfg.delta,
        beta_target=cfg.beta,
        order=cfg.order,
    )
    spec.validate(strict=False)  # still enforces the covering-slack budget
    info = {
        "kind": spec.kind,
        "spacing": spec.a,
        "eta_target": spec.eta,
        "gamma": spec.gamma,
        "epsilon": spec.epsilon,
        "t": spec.t,
        "delta": spec.delta,
        "beta_target": spec.beta_target,
        "order": spec.order,
        "formal_eta": spec.formal_eta,
        # the m-exponent reading of the same certificate (disputed form);
        # theta^m - 1 = sqrt(1 + theta^{2m} - 1) - 1
        "formal_eta_m_exponent": math.sqrt(1.0 + spec.formal_eta) - 1.0,
        "certified": spec.certified,
        "abound": spec.abound_satisfied,
        "chart_count": 1 if charts is None else len(charts),
    }
    if charts is not None:
        info["covering_defect"] = covering_defect(cfg.m, list(charts))
        info["distortion_samples"] = [
            distortion_estimate(c, nsamples=2000, seed=cfg.seed + i)
            for i, c in enumerate(charts)
        ]
    return spec, info


# ---------------------------------------------------------------------------
# per-level pipeline


def _run_level(cfg: RunConfig, spec: LatticeSpec, k: int, dump_dir: str | None = None):
    """One degree through the whole pipeline; returns the manifest row."""
    frame = build(spec, k)
    n, d = frame.n, dimension(cfg.m, k)
    invariants: dict = {"frame_nonempty": n >= 1}
    soft: dict = {}
    row = {
        "k": k,
        "n_k": n,
        "d_k": d,
        "ratio": n / d,
        "invariants": invariants,
        "soft": soft,
    }
    if n == 0:
        return row, frame, None, None
    if n > GRAM_SIZE_CAP:
        raise CliError(
            "k=%d builds %d frame points, past the dense-pipeline cap %d"
            % (k, n, GRAM_SIZE_CAP)
        )

    scale = spec.a / math.sqrt(k)
    nn = nearest_neighbor_distance(frame) if n >= 2 else None
    row["nn"] = nn
    invariants["nn_floor"] = nn is None or nn >= scale / spec.gamma * (1 - 1e-9)
    # ceiling only binds for dense frames; sparse multichart frames sit far apart
    reach = 1.0 if spec.charts is None else 1.0 + spec.dedup_factor
    soft["nn_ceiling"] = nn is None or nn <= scale * spec.gamma * reach * (1 + 1e-9)

    g = assemble_gram(frame)
    row["eta_hat"] = g.eta_hat
    soft["eta_within_target"] = g.eta_hat <= spec.eta

    op = inv_sqrt_neumann(g, tol=cfg.neumann_tol)  # raises on divergence
    reference = inv_sqrt_eigen(g)
    agree = float(np.max(np.abs(op.entries - reference.entries)))
    row["b_norm"] = op.norm_inf
    row["neumann_terms"] = op.series_terms
    row["b_agree"] = agree
    invariants["whitening_methods_agree"] = agree <= max(1e3 * cfg.neumann_tol, 1e-8)
    invariants["b_norm_within_bound"] = True  # enforced inside the solvers

    fam = flatten_frame(frame, op)
    coeffs = fam.coefficient_matrix()
    ortho_dev = float(np.max(np.abs(coeffs @ coeffs.conj().T - np.eye(n))))
    row["ortho_dev"] = ortho_dev
    invariants["orthonormal"] = ortho_dev <= cfg.ortho_tol

    fk = fk_norm(frame)
    chain = sup_norm_chain_bound(fk, op, n)
    row["fk_norm"] = fk
    row["chain_bound"] = chain

    cert = certify_family(fam, ceiling=chain, mesh=cfg.mesh, rounds=cfg.rounds,
                          orthonormal=False)
    l2_dev = float(max(abs(v - 1.0) for v in cert.l2_norms))
    sups = [e.value for e in cert.sup_estimates]
    row["l2_dev"] = l2_dev
    row["section_sups"] = sups
    row["max_sup"] = max(sups)
    row["min_sup"] = min(sups)
    invariants["l2_normalized"] = l2_dev <= max(cfg.ortho_tol, 1e-8)
    invariants["sup_within_chain"] = row["max_sup"] <= chain * (1 + 1e-9)

    if n <= d:
        bound = flat_bound(n / d, g.eta_hat, VOLUME[cfg.m]) * 1.10
        row["flat_bound"] = bound
        invariants["sup_within_flat_bound"] = row["max_sup"] <= bound
    else:
        row["flat_bound"] = None
        invariants["sup_within_flat_bound"] = False

    spread = (row["max_sup"] - row["min_sup"]) / row["min_sup"] if n > 1 else 0.0
    row["flat_spread"] = spread
    soft["flat_within_5pct"] = spread <= 0.05
    if cfg.beta is not None:
        soft["density_at_target"] = row["ratio"] >= cfg.beta

    if dump_dir is not None:
        dump_matrix(os.path.join(dump_dir, "gram-k%d.bin" % k),
                    cfg.m, k, g.entries, tag="gram")
        dump_matrix(os.path.join(dump_dir, "whitening-k%d.bin" % k),
                    cfg.m, k, op.entries, tag="whitening %s" % op.method)
        dump_family(os.path.join(dump_dir, "family-k%d.bin" % k),
                    fam, tag="flat family")
    return row, frame, op, fam


# ---------------------------------------------------------------------------
# mode runners


def _constants_core(cfg: RunConfig) -> dict:
    rows = constants_table(cfg.constants_max_m)
    return {
        "rows": [r.to_dict() for r in rows],
        "beta": [r.beta for r in rows],
        "beta_prime": [r.beta_prime for r in rows],
        "invariants": {"solver_converged": all(r.residual < 1e-8 for r in rows)},
    }


def dual_route_deviation(model: KernelModel, seed: int = 0) -> float:
    """Worst relative gap between the closed-form kernel and a literal
    basis sum, over pairs a geodesic step c/sqrt(k) apart.  Kept to near
    pairs: far pairs drown the tiny true value in summation noise.  The
    second route is the exact-rational monomial sum while its factorials
    fit in a float, and the coherent-coefficient inner product beyond."""
    rng = np.random.default_rng(seed)
    m, k = model.m, model.k
    worst = 0.0
    for c in (0.5, 1.0, 2.0):
        for _ in range(2):
            raw = rng.standard_normal(m + 1) + 1j * rng.standard_normal(m + 1)
            center = ProjectivePoint.from_vector(raw)
            chart = make_chart(center, BallRegion(1.0), 2.0)
            v = rng.standard_normal(2 * m)
            v *= c / math.sqrt(k) / np.linalg.norm(v)
            x = UnitLift.from_vector(exp_chart_vectors(chart, v[None, :])[0])
            y = center.lift()
            a = szego_kernel(model, x, y)
            if m + k <= 120:
                b = szego_kernel_monomial_sum(model, x, y)
            else:
                b = model.diag * l2_inner(
                    coherent_state(model, y), coherent_state(model, x)
                )
            rel = abs(a - b) / max(abs(a), abs(b), 1e-300)
            worst = max(worst, rel)
    return worst


def _kernel_core(cfg: RunConfig) -> dict:
    rows = []
    for k in cfg.k:
        model = KernelModel(cfg.m, k)
        rep = verify_decay(model)
        cap = min(rep.near.threshold, math.pi / 2 - 1e-9)
        # the Gaussian window argument needs log P ~ -k d^2/2 with a
        # quadratic correction; 0.25 d^2 holds once the window is inside d ~ 1
        near_ok = rep.near.max_deviation <= 0.25 * cap * cap
        far_ok = rep.far is None or rep.far.max_deviation < 1.0
        dual = None
        if k <= DUAL_ROUTE_DEGREE_CAP:
            dual = dual_route_deviation(model, seed=cfg.seed)
        row = {
            "k": k,
            "near": rep.near.to_dict(),
            "far": rep.far.to_dict() if rep.far is not None else None,
            "dual_route_rel": dual,
            "invariants": {"dual_route_agree": dual is None or dual <= 1e-10},
            "soft": {"near_regime": near_ok, "far_regime": far_ok},
        }
        rows.append(row)
    return {"rows": rows}


def _full_core(cfg: RunConfig, dump_dir: str | None):
    spec, info = lattice_spec(cfg)
    rows = []
    for k in cfg.k:
        rows.append(_run_level(cfg, spec, k, dump_dir)[0])
    return {"spec": info, "rows": rows}


def _status(rows: list) -> dict:
    hard, soft = [], []
    for row in rows:
        for name, ok in row.get("invariants", {}).items():
            if not ok:
                hard.append("k=%s:%s" % (row.get("k", "-"), name))
        for name, ok in row.get("soft", {}).items():
            if not ok:
                soft.append("k=%s:%s" % (row.get("k", "-"), name))
    code = 1 if hard else (2 if soft else 0)
    return {"exit_code": code, "hard_failures": hard, "soft_deviations": soft}


def run(cfg: RunConfig) -> dict:
    """Execute the configured mode and assemble the manifest."""
    cfg.validate()
    started = time.perf_counter()
    dump_dir = None
    if cfg.dumps:
        if cfg.out is None:
            raise CliError("binary dumps need an output directory")
        os.makedirs(cfg.out, exist_ok=True)
        dump_dir = cfg.out
    core = {
        "tool": "flatsections",
        "version": __version__,
        "mode": cfg.mode,
        "config": cfg.echo(),
    }
    if cfg.mode == "constants-only":
        body = _constants_core(cfg)
        core.update(body)
        core["status"] = _status([{"k": "*", "invariants": body["invariants"]}])
    elif cfg.mode == "kernel-check":
        body = _kernel_core(cfg)
        core.update(body)
        core["status"] = _status(body["rows"])
    else:
        body = _full_core(cfg, dump_dir)
        core.update(body)
        core["status"] = _status(body["rows"])
    envelope = {
        "wall_clock_s": time.perf_counter() - started,
        "written_at": datetime.datetime.now(datetime.timezone.utc).isoformat(
            timespec="seconds"
        ),
        "out": cfg.out,
        "dumps": cfg.dumps,
    }
    return {"core": core, "envelope": envelope}


def core_bytes(manifest: dict) -> bytes:
    """Canonical serialization of the deterministic part."""
    return json.dumps(manifest["core"], sort_keys=True).encode("utf-8")


def write_outputs(manifest: dict, cfg: RunConfig) -> list:
    if cfg.out is None:
        return []
    os.makedirs(cfg.out, exist_ok=True)
    paths = []
    mpath = os.path.join(cfg.out, "manifest.json")
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    paths.append(mpath)
    core = manifest["core"]
    if core["mode"] == "full":
        cpath = os.path.join(cfg.out, "summary.csv")
        csv_rows = []
        for row in core["rows"]:
            csv_rows.append(
                {
                    "k": row["k"],
                    "n_k": row["n_k"],
                    "d_k": row["d_k"],
                    "ratio": row["ratio"],
                    "eta_hat": row.get("eta_hat"),
                    "b_norm": row.get("b_norm"),
                    "fk_norm": row.get("fk_norm"),
                    "max_sup": row.get("max_sup"),
                    "bound": row.get("chain_bound"),
                }
            )
        write_ratio_csv(cpath, csv_rows)
        paths.append(cpath)
    if core["mode"] == "constants-only":
        cpath = os.path.join(cfg.out, "constants.csv")
        with open(cpath, "w", encoding="utf-8") as fh:
            keys = list(core["rows"][0])
            fh.write(",".join(keys) + "\n")
            for row in core["rows"]:
                fh.write(",".join(repr(row[key]) for key in keys) + "\n")
        paths.append(cpath)
    return paths


# ---------------------------------------------------------------------------
# emit-polys


def emit_polys(cfg: RunConfig) -> dict:
    """Run the pipeline and keep the flattest section per degree, as a
    polynomial record and as the matching sphere eigenfunction."""
    cfg.validate()
    spec, info = lattice_spec(cfg)
    levels: dict = {}
    rows = []
    for k in cfg.k:
        _, frame, op, fam = _run_level(cfg, spec, k)
        if fam is None:
            raise FrameError("degree k=%d yields an empty frame" % k)
        records = emit_polynomials(fam, mesh=cfg.mesh, rounds=cfg.rounds)
        levels[k] = records
        floor_ok = all(r.sphere_ratio >= 1 - 1e-3 for r in records)
        rows.append({"k": k, "invariants": {"sphere_ratio_floor": floor_ok}, "soft": {}})
    selected = select_flat_sequence(levels)
    eigen = {}
    for k, rec in selected.items():
        erec = emit_eigenfunction(rec, seed=cfg.seed + 5)
        eigen[k] = erec
        for row in rows:
            if row["k"] == k:
                row["invariants"]["eigen_residual_small"] = erec.residual <= 1e-6
    return {
        "spec": info,
        "levels": {str(k): [json.loads(r.to_json()) for r in v] for k, v in levels.items()},
        "selected": {str(k): json.loads(r.to_json()) for k, r in selected.items()},
        "eigenfunctions": {str(k): e.to_dict() for k, e in eigen.items()},
        "status": _status(rows),
    }


# ---------------------------------------------------------------------------
# compare

# row fields whose values depend only on the frame as a set, not its order
GRAM_LEVEL_FIELDS = (
    "n_k",
    "d_k",
    "ratio",
    "nn",
    "eta_hat",
    "b_norm",
    "neumann_terms",
    "b_agree",
    "ortho_dev",
    "fk_norm",
    "chain_bound",
    "flat_bound",
    "l2_dev",
    "max_sup",
    "min_sup",
    "flat_spread",
)

# config keys allowed to differ between comparable runs
_COMPARE_IGNORED_KEYS = ("order",)


def _rel_gap(a, b) -> float:
    # relative for O(1)-and-larger fields, absolute below 1: residual-level
    # quantities (ortho_dev, b_agree) sit at the noise floor, where a
    # relative comparison would flag meaningless jitter
    if a is None and b is None:
        return 0.0
    if a is None or b is None:
        return math.inf
    if isinstance(a, bool) or isinstance(b, bool):
        return 0.0 if a == b else math.inf
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def compare_manifests(ma: dict, mb: dict, tol: float = 1e-6) -> dict:
    """Field-wise drift report between two manifest cores.

    Runs differing only in frame ordering stay comparable: the Gram-level
    fields must agree, while per-section sup lists may come back as a
    permutation of each other and are reported as such, not as drift.
    """
    ca, cb = ma["core"], mb["core"]
    if ca["mode"] != cb["mode"]:
        raise CompareError("manifests come from different modes")
    mismatched = []
    for key in ca["config"]:
        if key in _COMPARE_IGNORED_KEYS:
            continue
        if ca["config"].get(key) != cb["config"].get(key):
            mismatched.append(key)
    if mismatched:
        raise CompareError("incompatible configs: %s" % ", ".join(sorted(mismatched)))
    drift, permuted = [], []
    checked = 0

    def check(label, key, a, b):
        nonlocal checked
        checked += 1
        rel = _rel_gap(a, b)
        if rel > tol:
            drift.append({"where": label, "field": key, "a": a, "b": b, "rel": rel})

    spec_a, spec_b = ca.get("spec"), cb.get("spec")
    if spec_a is not None:
        for key in spec_a:
            if key in _COMPARE_IGNORED_KEYS:
                continue
            va, vb = spec_a[key], spec_b.get(key)
            if isinstance(va, list):
                for i, (x, y) in enumerate(zip(va, vb)):
                    check("spec", "%s[%d]" % (key, i), x, y)
            elif isinstance(va, (int, float)) and not isinstance(va, bool):
                check("spec", key, va, vb)
            elif va != vb:
                drift.append({"where": "spec", "field": key, "a": va, "b": vb, "rel": math.inf})
    rows_a = ca.get("rows", [])
    rows_b = cb.get("rows", [])
    if len(rows_a) != len(rows_b):
        raise CompareError("manifests hold different row counts")
    for ra, rb in zip(rows_a, rows_b):
        label = "k=%s" % ra.get("k", "-")
        for key in GRAM_LEVEL_FIELDS:
            if key in ra or key in rb:
                check(label, key, ra.get(key), rb.get(key))
        for key in ("beta", "beta_prime", "dual_route_rel"):
            if key in ra:
                check(label, key, ra.get(key), rb.get(key))
        sa, sb = ra.get("section_sups"), rb.get("section_sups")
        if sa is not None and sb is not None:
            same = len(sa) == len(sb) and all(_rel_gap(x, y) <= tol for x, y in zip(sa, sb))
            if not same:
                as_sets = sorted(sa), sorted(sb)
                if all(_rel_gap(x, y) <= tol for x, y in zip(*as_sets)):
                    permuted.append({"where": label, "field": "section_sups"})
                else:
                    drift.append(
                        {"where": label, "field": "section_sups", "a": sa, "b": sb,
                         "rel": math.inf}
                    )
        for side in ("invariants", "soft"):
            for key in ra.get(side, {}):
                check(label, "%s.%s" % (side, key), ra[side][key], rb.get(side, {}).get(key))
    return {
        "identical": not drift and not permuted,
        "drift": drift,
        "permuted": permuted,
        "checked": checked,
        "tol": tol,
    }


def render_compare(report: dict) -> str:
    lines = []
    for entry in report["drift"]:
        lines.append(
            "drift %s %s: %r vs %r (rel %.3g)"
            % (entry["where"], entry["field"], entry["a"], entry["b"], entry["rel"])
        )
    for entry in report["permuted"]:
        lines.append(
            "%s %s: permuted (sorted values agree)" % (entry["where"], entry["field"])
        )
    if report["identical"]:
        lines.append("identical: %d fields within %.1g" % (report["checked"], report["tol"]))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# argument parsing and entry point


def _parse_k(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise CliError("cannot parse k list %r" % text) from exc


def _add_run_flags(sub):
    sub.add_argument("--config", help="JSON config file; flags override its values")
    sub.add_argument("--m", type=int, help="complex dimension of the base space")
    sub.add_argument("--k", help="comma-separated degrees, e.g. 50,100,200")
    sub.add_argument("--lattice", choices=("cubic", "hex", "hexagonal"))
    sub.add_argument("--eta", type=float, help="target Gram perturbation in (0,1)")
    sub.add_argument("--beta", type=float, help="density target (below the critical value)")
    sub.add_argument("--mesh", type=int, help="sup-norm mesh cells per dimension")
    sub.add_argument("--out", help="output directory for manifest and csv files")
    sub.add_argument("--mode", choices=MODES)
    sub.add_argument("--spacing", type=float, help="lattice spacing; default from eta")
    sub.add_argument("--gamma", type=float, help="declared chart distortion bound")
    sub.add_argument("--t", type=float, help="single-chart halfwidth")
    sub.add_argument("--order", choices=("lex", "reversed"))
    sub.add_argument("--seed", type=int, help="sampling seed (distortion, kernel pairs)")
    sub.add_argument("--dumps", action="store_true", default=None,
                     help="write Gram/whitening/family binaries per degree")


def _collect_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for key in ("m", "eta", "beta", "mesh", "out", "mode", "spacing", "gamma",
                "t", "order", "seed", "lattice", "dumps"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "k", None) is not None:
        overrides["k"] = _parse_k(args.k)
    if getattr(args, "max_m", None) is not None:
        overrides["constants_max_m"] = args.max_m
    return cfg.merged(overrides)


def _print_run(manifest: dict):
    core = manifest["core"]
    if core["mode"] == "constants-only":
        for row in core["rows"]:
            print(
                "m=%d  a=%.6f  beta=%.5f  alpha=%.6f  beta_prime=%.5f"
                % (row["m"], row["a_m"], row["beta_m"], row["alpha_m"], row["beta_prime_m"])
            )
    elif core["mode"] == "kernel-check":
        for row in core["rows"]:
            far = row["far"]["max deviation"] if row["far"] else float("nan")
            dual = row["dual_route_rel"]
            print(
                "k=%d  near_dev=%.4g  far_max=%.4g  dual=%s"
                % (row["k"], row["near"]["max deviation"], far,
                   "%.3g" % dual if dual is not None else "skipped")
            )
    else:
        for row in core["rows"]:
            if "eta_hat" not in row:
                print("k=%d  empty frame" % row["k"])
                continue
            print(
                "k=%d  n=%d  d=%d  ratio=%.5f  eta=%.4f  b=%.4f  fk=%.4f  "
                "sup=%.4f  bound=%.4f"
                % (row["k"], row["n_k"], row["d_k"], row["ratio"], row["eta_hat"],
                   row["b_norm"], row["fk_norm"], row["max_sup"], row["chain_bound"])
            )
    status = core["status"]
    for item in status["hard_failures"]:
        print("hard failure: %s" % item)
    for item in status["soft_deviations"]:
        print("soft deviation: %s" % item)
    verdict = {0: "pass", 1: "hard failure", 2: "soft deviation"}[status["exit_code"]]
    print("status: %s (exit %d)" % (verdict, status["exit_code"]))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flatsections",
        description="uniformly bounded orthonormal sections over complex projective space",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="full pipeline per degree")
    _add_run_flags(p_run)

    p_const = sub.add_parser("constants", help="critical density table")
    p_const.add_argument("--max-m", dest="max_m", type=int)
    p_const.add_argument("--out")

    p_kc = sub.add_parser("kernel-check", help="kernel decay and dual-route checks")
    _add_run_flags(p_kc)

    p_cmp = sub.add_parser("compare", help="drift report between two manifests")
    p_cmp.add_argument("manifest_a")
    p_cmp.add_argument("manifest_b")
    p_cmp.add_argument("--tol", type=float, default=1e-6)

    p_emit = sub.add_parser("emit-polys", help="flattest polynomial per degree")
    _add_run_flags(p_emit)

    args = parser.parse_args(argv)
    try:
        if args.cmd == "compare":
            with open(args.manifest_a, "r", encoding="utf-8") as fh:
                ma = json.load(fh)
            with open(args.manifest_b, "r", encoding="utf-8") as fh:
                mb = json.load(fh)
            report = compare_manifests(ma, mb, tol=args.tol)
            text = render_compare(report)
            if text:
                print(text)
            return 1 if report["drift"] else 0

        cfg = _collect_config(args)
        if args.cmd == "constants":
            cfg = cfg.merged({"mode": "constants-only"})
        elif args.cmd == "kernel-check":
            cfg = cfg.merged({"mode": "kernel-check"})

        if args.cmd == "emit-polys":
            result = emit_polys(cfg)
            if cfg.out is not None:
                os.makedirs(cfg.out, exist_ok=True)
                with open(os.path.join(cfg.out, "polynomials.json"), "w",
                          encoding="utf-8") as fh:
                    json.dump({"levels": result["levels"], "selected": result["selected"]},
                              fh, sort_keys=True, indent=1)
                with open(os.path.join(cfg.out, "eigenfunctions.json"), "w",
                          encoding="utf-8") as fh:
                    json.dump(result["eigenfunctions"], fh, sort_keys=True, indent=1)
            for k, rec in sorted(result["selected"].items(), key=lambda kv: int(kv[0])):
                print("k=%s  sup/l2 on the sphere: %.4f" % (k, rec["sphere ratio"]))
            status = result["status"]
            for item in status["hard_failures"]:
                print("hard failure: %s" % item)
            return status["exit_code"]

        manifest = run(cfg)
        write_outputs(manifest, cfg)
        _print_run(manifest)
        return manifest["core"]["status"]["exit_code"]
    except CliError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except (GeometryError, FrameError) as exc:
        print("chart error: %s" % exc, file=sys.stderr)
        return 1
    except WhiteningError as exc:
        print("whitening error: %s" % exc, file=sys.stderr)
        return 1
    except CompareError as exc:
        print("compare error: %s" % exc, file=sys.stderr)
        return 1
    except (KernelError, FlattenError, CertifyError, ConstantsError) as exc:
        print("pipeline error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("io error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
