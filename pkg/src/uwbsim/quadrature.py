"""Vectorised adaptive Simpson quadrature."""

from __future__ import annotations

import numpy as np


class ConvergenceError(RuntimeError):
    """A quadrature or series truncation did not reach its tolerance."""


def adaptive_simpson(f, a, b, rtol=1e-4, atol=0.0, breakpoints=None, min_intervals=8,
                     max_intervals=200_000):
    """Integrate a vectorised ``f`` over ``[a, b]``.

    Intervals are refined level by level; an interval is accepted once the
    two-halves estimate differs from the whole-interval estimate by at most
    its width-share of ``15 * max(rtol*|I|, atol)``. ``breakpoints`` inside
    ``(a, b)`` seed the partition, which lets piecewise-smooth integrands
    (e.g. linearly interpolated tables) converge at once.

    Raises
    ------
    ConvergenceError
        If more than ``max_intervals`` live intervals would be needed.
    """
    a, b = float(a), float(b)
    if b == a:
        return 0.0
    if b < a:
        return -adaptive_simpson(f, b, a, rtol, atol, breakpoints, min_intervals, max_intervals)
    edges = np.linspace(a, b, min_intervals + 1)
    if breakpoints is not None:
        bp = np.asarray(breakpoints, dtype=float)
        edges = np.union1d(edges, bp[(bp > a) & (bp < b)])
    lo, hi = edges[:-1], edges[1:]
    mid = (lo + hi) / 2
    flo, fmid, fhi = f(lo), f(mid), f(hi)
    whole = (hi - lo) / 6 * (flo + 4 * fmid + fhi)
    accepted = 0.0
    span = b - a
    while lo.size:
        if lo.size > max_intervals:
            raise ConvergenceError(
                f"adaptive Simpson on [{a:g}, {b:g}] exceeded {max_intervals} intervals"
            )
        ql, qr = (lo + mid) / 2, (mid + hi) / 2
        fql, fqr = f(ql), f(qr)
        left = (mid - lo) / 6 * (flo + 4 * fql + fmid)
        right = (hi - mid) / 6 * (fmid + 4 * fqr + fhi)
        halves = left + right
        err = np.abs(halves - whole)
        estimate = accepted + halves.sum()
        tol = max(rtol * abs(estimate), atol)
        ok = err <= 15 * tol * (hi - lo) / span
        accepted += float(np.sum(halves[ok] + (halves[ok] - whole[ok]) / 15))
        keep = ~ok
        lo, mid, hi, ql, qr = lo[keep], mid[keep], hi[keep], ql[keep], qr[keep]
        flo, fmid, fhi, fql, fqr = flo[keep], fmid[keep], fhi[keep], fql[keep], fqr[keep]
        left, right = left[keep], right[keep]
        # split each surviving interval into its two halves
        lo, mid, hi = np.concatenate((lo, mid)), np.concatenate((ql, qr)), np.concatenate((mid, hi))
        flo, fmid, fhi = np.concatenate((flo, fmid)), np.concatenate((fql, fqr)), np.concatenate((fmid, fhi))
        whole = np.concatenate((left, right))
    return accepted
