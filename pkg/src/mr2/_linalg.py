"""Rank-revealing least squares used by every regression in the package.

The solve is SVD-based with a relative rank tolerance of 1e-10. On an
exactly dependent design the minimum-norm solution is returned, which
leaves the fitted values equal to the orthogonal projection onto the
design's column span (dependent columns share the load without changing
the projection). When full rank is required, a rank-deficient design
raises CollinearityError; the dependent columns are identified by a
column-pivoted QR pass on the error path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .errors import CollinearityError

RANK_RTOL = 1e-10


@dataclass
class LeastSquaresFit:
    coef: np.ndarray            # minimum-norm on deficient designs
    rank: int
    fitted: np.ndarray
    residual: np.ndarray
    rss: float                  # weighted when weights given


def _dependent_columns(xw: np.ndarray, rank: int) -> tuple[int, ...]:
    _, piv = qr(xw, mode="r", pivoting=True)
    return tuple(int(j) for j in piv[rank:])


def lstsq_pivoted(x: np.ndarray, y: np.ndarray, *,
                  weights: np.ndarray | None = None,
                  names: tuple[str, ...] | None = None,
                  require_full_rank: bool = False,
                  rtol: float = RANK_RTOL) -> LeastSquaresFit:
    """Solve min ||sqrt(w) (y - X b)|| with rank detection.

    With ``require_full_rank`` a deficient design raises CollinearityError
    naming the dependent columns; otherwise the minimum-norm solution is
    returned and the fit is the projection onto the column span.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=np.float64))
        xw = x * sw[:, None]
        yw = y * sw
    else:
        xw, yw = x, y
    coef, _, rank, _ = np.linalg.lstsq(xw, yw, rcond=rtol)
    p = x.shape[1]
    if rank < p and require_full_rank:
        dropped = _dependent_columns(xw, rank)
        labels = tuple(names[j] for j in dropped) if names else tuple(map(str, dropped))
        raise CollinearityError(
            f"design is rank deficient (rank {rank} of {p}); dependent columns: "
            + ", ".join(labels),
            columns=labels,
        )
    fitted = x @ coef
    residual = y - fitted
    if weights is not None:
        rss = float(np.sum(weights * residual**2))
    else:
        rss = float(residual @ residual)
    return LeastSquaresFit(coef=coef, rank=int(rank), fitted=fitted,
                           residual=residual, rss=rss)
