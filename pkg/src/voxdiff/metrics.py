"""Scale-invariant evaluation metrics and Table-style reporting.

SI-SDR follows the projection definition: the reference is rescaled by
alpha = <estimate, reference> / ||reference||^2 and the ratio of projected
signal energy to residual energy is reported in dB.  The three-way
decomposition (target / interference / artifacts) first orthogonalizes the
interference against the reference so the energy identity
||estimate||^2 = ||e_target||^2 + ||e_inter||^2 + ||e_artif||^2 is exact.

PESQ and ESTOI are standardized external algorithms; the report carries
optional externally computed values but this module never computes them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .spectro import Waveform

__all__ = ["DB_CAP", "si_sdr", "si_decompose", "SiDecomposition", "ClipMetrics", "EvalReport", "evaluate_set"]

DB_CAP = 100.0


def _samples(x) -> np.ndarray:
    arr = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {arr.shape}")
    return arr.astype(np.float64, copy=False)


def _capped_db(num: float, den: float) -> float:
    """10 log10(num/den) clipped to [-DB_CAP, DB_CAP], with zero handling."""
    if num <= 0.0:
        return -DB_CAP
    if den <= 0.0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +/-100."""
    est = _samples(estimate)
    ref = _samples(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: estimate {est.shape[0]}, reference {ref.shape[0]}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference signal is identically zero")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    err = est - target
    return _capped_db(float(np.dot(target, target)), float(np.dot(err, err)))


@dataclass(frozen=True)
class SiDecomposition:
    e_target: np.ndarray
    e_inter: np.ndarray
    e_artif: np.ndarray
    si_sdr: float
    si_sir: float
    si_sar: float


def si_decompose(estimate, reference_s, interference_n) -> SiDecomposition:
    """Orthogonal projection split of the estimate into target/interference/artifacts.

    The interference is orthogonalized against the reference first, so the
    three components are mutually orthogonal and their energies sum to the
    estimate energy exactly.
    """
    est = _samples(estimate)
    s = _samples(reference_s)
    n = _samples(interference_n)
    if not (est.shape == s.shape == n.shape):
        raise ValueError("estimate, reference and interference must share a length")
    s_energy = float(np.dot(s, s))
    if s_energy == 0.0:
        raise ValueError("reference signal is identically zero")
    n_perp = n - (float(np.dot(n, s)) / s_energy) * s
    n_energy = float(np.dot(n_perp, n_perp))
    if n_energy <= 1e-30 * max(1.0, float(np.dot(n, n))):
        raise ValueError("interference is (numerically) parallel to the reference")

    e_target = (float(np.dot(est, s)) / s_energy) * s
    resid = est - e_target
    e_inter = (float(np.dot(resid, n_perp)) / n_energy) * n_perp
    e_artif = resid - e_inter

    t2 = float(np.dot(e_target, e_target))
    i2 = float(np.dot(e_inter, e_inter))
    a2 = float(np.dot(e_artif, e_artif))
    return SiDecomposition(
        e_target=e_target,
        e_inter=e_inter,
        e_artif=e_artif,
        si_sdr=_capped_db(t2, i2 + a2),
        si_sir=_capped_db(t2, i2),
        si_sar=_capped_db(t2, a2),
    )


@dataclass
class ClipMetrics:
    clip_id: str
    si_sdr: float | None = None
    si_sir: float | None = None
    si_sar: float | None = None
    pesq: float | None = None
    estoi: float | None = None
    error: str | None = None


_METRIC_NAMES = ("si_sdr", "si_sir", "si_sar", "pesq", "estoi")


@dataclass
class EvalReport:
    per_clip: list[ClipMetrics] = field(default_factory=list)
    aggregate: dict[str, dict[str, float]] = field(default_factory=dict)
    schema_version: int = 1

    def recompute_aggregate(self) -> dict[str, dict[str, float]]:
        agg: dict[str, dict[str, float]] = {}
        for name in _METRIC_NAMES:
            values = [getattr(c, name) for c in self.per_clip if c.error is None and getattr(c, name) is not None]
            if values:
                arr = np.asarray(values, dtype=np.float64)
                agg[name] = {"mean": float(arr.mean()), "std": float(arr.std()), "count": len(values)}
        return agg

    def to_json_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "per_clip": [asdict(c) for c in self.per_clip],
            "aggregate": self.aggregate,
        }

    def format_table(self) -> str:
        """Aligned plain-text table: one row per clip plus a mean +/- std row."""
        cols = [n for n in _METRIC_NAMES if n in self.aggregate]
        header = ["clip"] + [n.replace("_", "-").upper() for n in cols]
        rows = []
        for c in self.per_clip:
            if c.error is not None:
                rows.append([c.clip_id, f"FAILED: {c.error}"] + [""] * (len(cols) - 1))
                continue
            rows.append([c.clip_id] + [
                f"{getattr(c, n):.2f}" if getattr(c, n) is not None else "-" for n in cols
            ])
        summary = ["mean ± std"] + [
            f"{self.aggregate[n]['mean']:.1f} ± {self.aggregate[n]['std']:.1f}" for n in cols
        ]
        widths = [max(len(r[i]) for r in [header] + rows + [summary]) for i in range(len(header))]
        def fmt(r):
            return "  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
        lines = [fmt(header), fmt(["-" * w for w in widths])]
        lines += [fmt(r) for r in rows]
        lines += [fmt(["-" * w for w in widths]), fmt(summary)]
        return "\n".join(lines)


def evaluate_set(pairs, out: str | os.PathLike | None = None, clip_ids=None, external: dict | None = None) -> EvalReport:
    """Per-clip SI metrics with mean/std aggregation over (enhanced, clean, interference) triples.

    `external` optionally maps clip id -> {"pesq": x, "estoi": y} with values
    computed by the standard external tools.  When `out` is given, the JSON
    report goes there and an aligned text table goes next to it (.txt).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_set needs at least one clip")
    if clip_ids is None:
        clip_ids = [f"clip_{i:04d}" for i in range(len(pairs))]
    if len(clip_ids) != len(pairs):
        raise ValueError("clip_ids length does not match pairs")

    report = EvalReport()
    for cid, (enhanced, clean, interference) in zip(clip_ids, pairs):
        side = (external or {}).get(cid, {})
        try:
            d = si_decompose(enhanced, clean, interference)
            report.per_clip.append(
                ClipMetrics(
                    clip_id=cid,
                    si_sdr=d.si_sdr,
                    si_sir=d.si_sir,
                    si_sar=d.si_sar,
                    pesq=side.get("pesq"),
                    estoi=side.get("estoi"),
                )
            )
        except (ValueError, FloatingPointError) as e:
            report.per_clip.append(ClipMetrics(clip_id=cid, error=str(e)))
    report.aggregate = report.recompute_aggregate()

    if out is not None:
        out = os.fspath(out)
        with open(out, "w") as f:
            json.dump(report.to_json_dict(), f, indent=2)
        with open(os.path.splitext(out)[0] + ".txt", "w") as f:
            f.write(report.format_table() + "\n")
    return report
