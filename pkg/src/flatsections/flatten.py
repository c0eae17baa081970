"""Root-of-unity mixing into flat sections, and the mapping norm of the
pointwise frame sum.

Whitening hands over an orthonormal family that still has localized
members.  Mixing by a unitary DFT spreads every member evenly over the
whole frame, and the sup-norm of each mixed section is then controlled
by the chain  (1/sqrt(n)) * F * ||B||,  where F is the sup over x of
sum_mu |Phi_mu(x)|.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .frame import Frame
from .geometry import BallRegion, ProjectivePoint, make_chart, exp_chart_vectors
from .kernel import KernelModel, SectionExpansion
from .whitening import WhiteningOperator, whiten

_MAGIC = b"FLT1"


class FlattenError(ValueError):
    pass


def _primitive_root(n: int) -> complex:
    return 1.0 + 0.0j if n == 1 else complex(np.exp(2j * np.pi / n))


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT with every entry an exact root of unity.

    Entries are recomputed from the reduced integer phase (j*q mod n)
    rather than by accumulating powers, so there is no drift at large n.
    """
    if n < 1:
        raise FlattenError("mixing needs at least one section")
    j, q = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    phase = (j * q) % n
    return np.exp(2j * np.pi * phase / n) / math.sqrt(n)


@dataclass(frozen=True)
class FlatFamily:
    k: int
    m: int
    zeta: complex  # primitive n-th root of unity used in the mix
    sections: list
    provenance: str = ""
    # weights of each output section over the coherent frame (row j holds
    # v^{(j)}, the inspectable intermediate of the sup-norm chain)
    mix_weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.sections)

    def coefficient_matrix(self) -> np.ndarray:
        return np.vstack([s.ortho_coeffs for s in self.sections])

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "m": self.m,
                "n": self.n,
                "zeta re": self.zeta.real,
                "zeta im": self.zeta.imag,
                "provenance": self.provenance,
            }
        )


def dft_mix(psis: list, provenance: str = "") -> FlatFamily:
    """Mix an orthonormal family with the unitary root-of-unity matrix."""
    if len(psis) == 0:
        raise FlattenError("cannot mix an empty family")
    first = psis[0]
    n = len(psis)
    coeffs = np.vstack([p.ortho_coeffs for p in psis])
    mixed = dft_matrix(n) @ coeffs
    sections = [SectionExpansion.from_ortho(first.m, first.k, row) for row in mixed]
    zeta = _primitive_root(n)
    return FlatFamily(k=first.k, m=first.m, zeta=zeta, sections=sections,
                      provenance=provenance)


def flatten_frame(frame: Frame, op: WhiteningOperator) -> FlatFamily:
    """Whiten a frame and mix; keeps the frame-basis weights v^{(j)}."""
    psis = whiten(frame, op)
    fam = dft_mix(psis, provenance="%s | %s" % (frame.order_tag, op.method))
    weights = dft_matrix(frame.n) @ op.entries
    return FlatFamily(k=fam.k, m=fam.m, zeta=fam.zeta, sections=fam.sections,
                      provenance=fam.provenance, mix_weights=weights)


def sup_norm_chain_bound(fk: float, op: WhiteningOperator, n: int) -> float:
    """||s_j||_inf <= (1/sqrt(n)) * fk * ||B||, uniform in j."""
    if n < 1:
        raise FlattenError("empty family")
    return fk * op.norm_inf / math.sqrt(n)


def area_mesh(m: int, target: int) -> np.ndarray:
    """Deterministic mesh of unit lifts, equidistributed for the volume.

    m = 1 uses the (area, angle) product grid; m = 2 folds a product grid
    onto the moment simplex, which preserves the uniform measure.
    """
    if m == 1:
        side = max(2, int(math.isqrt(target)))
        u = (np.arange(side) + 0.5) / side
        th = 2 * np.pi * (np.arange(side) + 0.5) / side
        uu, tt = np.meshgrid(u, th, indexing="ij")
        uu, tt = uu.ravel(), tt.ravel()
        return np.stack(
            [np.sqrt(1 - uu) + 0j, np.sqrt(uu) * np.exp(1j * tt)], axis=1
        )
    if m == 2:
        side = max(2, int(round(target ** 0.25)))
        g = (np.arange(side) + 0.5) / side
        th = 2 * np.pi * (np.arange(side) + 0.5) / side
        a, b, t1, t2 = np.meshgrid(g, g, th, th, indexing="ij")
        a, b, t1, t2 = a.ravel(), b.ravel(), t1.ravel(), t2.ravel()
        over = a + b > 1  # fold the square onto the simplex
        a = np.where(over, 1 - a, a)
        b = np.where(over, 1 - b, b)
        w = np.maximum(1 - a - b, 0.0)
        return np.stack(
            [np.sqrt(w) + 0j, np.sqrt(a) * np.exp(1j * t1), np.sqrt(b) * np.exp(1j * t2)],
            axis=1,
        )
    raise FlattenError("meshes implemented for m = 1 and m = 2 only")


def _tangent_ball_grid(m: int, radius: float, side: int) -> np.ndarray:
    axes = [np.linspace(-radius, radius, side)] * (2 * m)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2 * m)
    keep = np.linalg.norm(pts, axis=1) <= radius + 1e-15
    return pts[keep]


def frame_sum(frame: Frame, lifts: np.ndarray) -> np.ndarray:
    """sum_mu |Phi_mu(x)| = sqrt(diag) * sum_mu cos^k d(x, y_mu) at each x."""
    model = KernelModel(frame.m, frame.k)
    q = np.abs(lifts @ frame.points.conj().T)
    np.clip(q, 0.0, 1.0, out=q)
    with np.errstate(divide="ignore"):
        logq = np.log(q)
    return math.sqrt(model.diag) * np.sum(np.exp(frame.k * logq), axis=1)


def fk_norm(frame: Frame, mesh: int = 16384, rounds: int = 6) -> float:
    """Mapping norm sup_x sum_mu |Phi_mu(x)|, by mesh plus local refinement.

    The frame points themselves are always included: each is the peak of
    its own term, so the estimate can never fall below sqrt(diag).
    """
    if frame.n == 0:
        raise FlattenError("empty frame")
    lifts = np.vstack([area_mesh(frame.m, mesh), frame.points])
    vals = frame_sum(frame, lifts)
    best = int(np.argmax(vals))
    best_val = float(vals[best])
    best_lift = lifts[best]
    # zoom: geodesic grids around the incumbent, shrinking by halves
    radius = 0.7 / math.sqrt(max(frame.k, 1))
    for _ in range(rounds):
        center = ProjectivePoint.from_vector(best_lift)
        chart = make_chart(center, BallRegion(min(radius * 1.1, 0.7)), 2.0)
        cand = exp_chart_vectors(chart, _tangent_ball_grid(frame.m, radius, 5))
        vals = frame_sum(frame, cand)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val = float(vals[i])
            best_lift = cand[i]
        radius /= 2
    return best_val


def fk_ceilings(frame: Frame, eta_hat: float | None = None) -> dict:
    """Analytic ceilings for fk_norm.

    "theta": sqrt(diag) * (1 + sqrt(2 pi)/a_tilde)^{2m}, the Poisson
    summation tail bound with the distortion-adjusted spacing;
    "eta": (1 + eta) * sqrt(diag) * 1.05, with eta the measured row mass
    when given, the design constant otherwise.
    """
    spec = frame.spec
    model = KernelModel(frame.m, frame.k)
    root = math.sqrt(model.diag)
    atil = (spec.a / spec.gamma) * math.sqrt(1 - spec.epsilon)
    eta = spec.eta if eta_hat is None else eta_hat
    return {
        "theta": root * (1 + math.sqrt(2 * math.pi) / atil) ** (2 * frame.m),
        "eta": (1 + eta) * root * 1.05,
    }


def bourgain_reference(signs, k: int) -> list:
    """Sign-twisted DFT of the monomial basis on the projective line.

    For any sign vector the output is exactly orthonormal; with trivial
    signs it is the classical highly peaked family, kept as a reference
    point rather than a bounded construction.
    """
    sigma = np.asarray(signs, dtype=np.float64)
    if sigma.ndim != 1 or sigma.shape[0] != k + 1:
        raise FlattenError("need one sign per monomial, k + 1 of them")
    if not np.all(np.abs(sigma) == 1.0):
        raise FlattenError("signs must be +1 or -1")
    mixed = dft_matrix(k + 1) * sigma[None, :]  # rows: coefficients over chi_q
    return [SectionExpansion.from_ortho(1, k, row) for row in mixed]


def dump_family(path, fam: FlatFamily, tag: str):
    """Binary coefficient dump; header convention shared with whitening."""
    data = np.ascontiguousarray(fam.coefficient_matrix(), dtype=np.complex128)
    raw = tag.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", fam.m, fam.k, data.shape[0]))
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(data.tobytes(order="C"))


def load_family(path) -> FlatFamily:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FlattenError("not a flat-family dump")
    m, k, n = struct.unpack_from("<III", blob, 4)
    (tag_len,) = struct.unpack_from("<I", blob, 16)
    tag = blob[20:20 + tag_len].decode("utf-8")
    body = blob[20 + tag_len:]
    d = KernelModel(m, k).d_k
    if len(body) != 16 * n * d:
        raise FlattenError("flat-family dump body has the wrong size")
    coeffs = np.frombuffer(body, dtype=np.complex128).reshape(n, d)
    sections = [SectionExpansion.from_ortho(m, k, row) for row in coeffs]
    zeta = _primitive_root(n)
    return FlatFamily(k=k, m=m, zeta=zeta, sections=sections, provenance=tag)
