"""Exact geometry of subpixel splitting and merging.

Both grids live on the normalized canvas [0, 1] per axis.  Along one axis,
positions are stored as integer numerators over the common denominator
``n_in * n_out``; input boundary ``m / n_in`` becomes ``m * n_out`` and output
boundary ``m / n_out`` becomes ``m * n_in``, so coincident boundaries compare
equal as integers and no zero-width sliver is ever produced.

A subpixel is the rectangle formed by one vertical and one horizontal segment.
Coordinates ``phi`` (relative to the parent input pixel) and ``psi`` (relative
to the parent output pixel) are ``(h1, v1, h2, v2)`` corner offsets from the
pixel centre, measured in units of that pixel's width/height.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import ContractViolation


class Segment(NamedTuple):
    in_index: int
    out_index: int
    start: int  # numerator over AxisLattice.denominator
    end: int


@dataclass(frozen=True)
class AxisLattice:
    n_in: int
    n_out: int
    boundaries: tuple[int, ...]
    segments: tuple[Segment, ...]

    @property
    def denominator(self) -> int:
        return self.n_in * self.n_out

    def boundary_fractions(self) -> list[Fraction]:
        return [Fraction(b, self.denominator) for b in self.boundaries]

    def segment_fractions(self) -> list[tuple[int, int, Fraction, Fraction]]:
        d = self.denominator
        return [(s.in_index, s.out_index, Fraction(s.start, d), Fraction(s.end, d))
                for s in self.segments]

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Per-segment numpy views used by the vectorized 2-D lattice."""
        seg = np.array(self.segments, dtype=np.int64).reshape(-1, 4)
        n_in, n_out = self.n_in, self.n_out
        start, end = seg[:, 2], seg[:, 3]
        in_idx, out_idx = seg[:, 0], seg[:, 1]
        return {
            "in": in_idx,
            "out": out_idx,
            "length": end - start,  # integer numerator
            # (start/D - (i+1/2)/n_in) * n_in == start/n_out - i - 1/2
            "phi1": start / n_out - in_idx - 0.5,
            "phi2": end / n_out - in_idx - 0.5,
            "psi1": start / n_in - out_idx - 0.5,
            "psi2": end / n_in - out_idx - 0.5,
        }


def build_axis_lattice(n_in: int, n_out: int) -> AxisLattice:
    """Merge the input and output pixel boundaries of one axis."""
    if int(n_in) != n_in or int(n_out) != n_out or n_in < 1 or n_out < 1:
        raise ContractViolation("build_axis_lattice",
                                f"counts must be positive integers, got {n_in}, {n_out}")
    n_in, n_out = int(n_in), int(n_out)
    denom = n_in * n_out
    bounds = sorted(set(range(0, denom + 1, n_out)) | set(range(0, denom + 1, n_in)))
    segments = tuple(
        Segment(a // n_out, a // n_in, a, b) for a, b in zip(bounds[:-1], bounds[1:])
    )
    return AxisLattice(n_in, n_out, tuple(bounds), segments)


@dataclass(frozen=True)
class SubpixelRecord:
    in_pixel: tuple[int, int]
    out_pixel: tuple[int, int]
    area: Fraction
    phi: tuple[Fraction, Fraction, Fraction, Fraction]
    psi: tuple[Fraction, Fraction, Fraction, Fraction]

    def dump(self) -> str:
        def fmt(v):
            return "(" + ",".join(str(x) for x in v) + ")"
        return (f"in={fmt(self.in_pixel)} out={fmt(self.out_pixel)} "
                f"area={self.area.numerator}/{self.area.denominator} "
                f"phi={fmt(self.phi)} psi={fmt(self.psi)}")


def _offsets(seg: Segment, n_ref: int, ref_index: int, denom: int) -> tuple[Fraction, Fraction]:
    # corner offsets from the reference pixel centre in units of its size
    c = Fraction(2 * ref_index + 1, 2)
    return Fraction(seg.start * n_ref, denom) - c, Fraction(seg.end * n_ref, denom) - c


@dataclass(frozen=True, eq=False)
class SubpixelLattice:
    """Cartesian product of a vertical and a horizontal axis lattice.

    Record ``k = kv * len(h_axis.segments) + kh`` (row-major).  The exact
    records and the grouping maps are built lazily; the model only needs the
    flat numpy arrays in :attr:`arrays`.
    """

    v_axis: AxisLattice
    h_axis: AxisLattice

    @property
    def in_shape(self) -> tuple[int, int]:
        return self.v_axis.n_in, self.h_axis.n_in

    @property
    def out_shape(self) -> tuple[int, int]:
        return self.v_axis.n_out, self.h_axis.n_out

    def __len__(self) -> int:
        return len(self.v_axis.segments) * len(self.h_axis.segments)

    @cached_property
    def records(self) -> list[SubpixelRecord]:
        dv, dh = self.v_axis.denominator, self.h_axis.denominator
        out = []
        for sv in self.v_axis.segments:
            pv1, pv2 = _offsets(sv, self.v_axis.n_in, sv.in_index, dv)
            qv1, qv2 = _offsets(sv, self.v_axis.n_out, sv.out_index, dv)
            lv = Fraction(sv.end - sv.start, dv)
            for sh in self.h_axis.segments:
                ph1, ph2 = _offsets(sh, self.h_axis.n_in, sh.in_index, dh)
                qh1, qh2 = _offsets(sh, self.h_axis.n_out, sh.out_index, dh)
                out.append(SubpixelRecord(
                    in_pixel=(sv.in_index, sh.in_index),
                    out_pixel=(sv.out_index, sh.out_index),
                    area=lv * Fraction(sh.end - sh.start, dh),
                    phi=(ph1, pv1, ph2, pv2),
                    psi=(qh1, qv1, qh2, qv2),
                ))
        return out

    @cached_property
    def p_map(self) -> dict[tuple[int, int], tuple[int, ...]]:
        """Input pixel -> indices of the subpixels split from it."""
        groups: dict[tuple[int, int], list[int]] = {}
        for k, rec in enumerate(self.records):
            groups.setdefault(rec.in_pixel, []).append(k)
        return {key: tuple(v) for key, v in groups.items()}

    @cached_property
    def r_map(self) -> dict[tuple[int, int], tuple[int, ...]]:
        """Output pixel -> indices of the subpixels merged into it."""
        groups: dict[tuple[int, int], list[int]] = {}
        for k, rec in enumerate(self.records):
            groups.setdefault(rec.out_pixel, []).append(k)
        return {key: tuple(v) for key, v in groups.items()}

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Flat float64/int64 arrays, one entry per record in record order.

        ``in_flat``/``out_flat`` are row-major pixel indices, ``area`` the
        canvas area, ``phi``/``psi`` are ``(K, 4)``.
        """
        v, h = self.v_axis.arrays, self.h_axis.arrays
        nv, nh = len(v["in"]), len(h["in"])

        def outer(a, b):
            return np.repeat(a, nh), np.tile(b, nv)

        vin, hin = outer(v["in"], h["in"])
        vout, hout = outer(v["out"], h["out"])
        lv, lh = outer(v["length"], h["length"])
        pv1, ph1 = outer(v["phi1"], h["phi1"])
        pv2, ph2 = outer(v["phi2"], h["phi2"])
        qv1, qh1 = outer(v["psi1"], h["psi1"])
        qv2, qh2 = outer(v["psi2"], h["psi2"])
        return {
            "in_flat": vin * self.h_axis.n_in + hin,
            "out_flat": vout * self.h_axis.n_out + hout,
            # exact integer product, one rounding
            "area": (lv * lh) / (self.v_axis.denominator * self.h_axis.denominator),
            "phi": np.stack([ph1, pv1, ph2, pv2], axis=1),
            "psi": np.stack([qh1, qv1, qh2, qv2], axis=1),
        }

    def dump(self) -> str:
        return "\n".join(r.dump() for r in self.records)


def build_lattice(in_h: int, in_w: int, out_h: int, out_w: int) -> SubpixelLattice:
    return SubpixelLattice(v_axis=build_axis_lattice(in_h, out_h),
                           h_axis=build_axis_lattice(in_w, out_w))


def area_weights(lattice: SubpixelLattice) -> np.ndarray:
    """Subpixel areas as float64, in record order."""
    return lattice.arrays["area"].copy()
