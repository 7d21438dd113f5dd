"""Sensitivity of every node bound to the 2 n_1 box-facet biases.

For the bound LP of node ``(j, k)`` the envelope theorem gives
``d value / d theta = dL/d theta`` at the optimal primal/dual pair. The box
rows contribute their multipliers directly; the upper-envelope row of each
earlier unstable node ``(l, t)`` contributes through its slope and intercept,
which move with that node's own bounds::

    d(c b + d)/d theta  = c1 du + c2 dl      c1 = l (l - b) / (u - l)^2
                                             c2 = u (b - u) / (u - l)^2
    d(c w.z)/d theta    = -(c1h dl - c2h du)  c1h = u (w.z) / (u - l)^2
                                             c2h = l (w.z) / (u - l)^2

Combining both with the Lagrangian sign of each sense::

    dl_{j,k} = -lam0 - sum lam_t [(c1 - c2h) du_t + (c2 + c1h) dl_t]   (min LP)
    du_{j,k} = +lam0 + sum lam_t [(c1 - c2h) du_t + (c2 + c1h) dl_t]   (max LP)

which reduces to ``dl = -lam``, ``du = +lam`` on the first layer. Stable
nodes have constant envelopes and drop out of the sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .relaxation import DEGENERATE_WIDTH, BoundsTable, EnvelopeCoefficients


class RateError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundRates:
    """``dl[j][k, i]`` and ``du[j][k, i]``; facet ``i`` follows ``InputBox.bias``."""

    dl: tuple
    du: tuple

    def __len__(self):
        return len(self.dl)

    @property
    def n_facets(self) -> int:
        return self.dl[0].shape[1] if self.dl else 0


def _box_duals(bounds: BoundsTable, layer: int, which: str) -> np.ndarray:
    sols = bounds.min_solutions[layer] if which == "min" else bounds.max_solutions[layer]
    box = bounds.polytopes[layer].box_rows
    if not sols or sols[0].dual is None or len(sols[0].dual) == 0:
        raise RateError(f"layer {layer + 1} bound LPs carry no dual solution")
    return np.array([s.dual[box] for s in sols])


def first_layer_rates(bounds: BoundsTable) -> BoundRates:
    if len(bounds) == 0:
        raise RateError("bounds table is empty")
    return BoundRates((-_box_duals(bounds, 0, "min"),), (_box_duals(bounds, 0, "max"),))


def forward_rates(net, bounds: BoundsTable, coeffs: EnvelopeCoefficients,
                  partial: BoundRates = None) -> BoundRates:
    """Rates for every weight layer, reusing the layers already in ``partial``."""
    if partial is None:
        partial = first_layer_rates(bounds)
    dl = list(partial.dl)
    du = list(partial.du)
    for j in range(len(dl), len(bounds)):
        poly = bounds.polytopes[j]
        corr = []
        # per earlier layer: unstable node indices and the (du, dl) weights
        for l in range(j):
            idx = np.flatnonzero(coeffs.unstable[l])
            if idx.size == 0:
                corr.append(None)
                continue
            lo = coeffs.lower[l][idx]
            up = coeffs.upper[l][idx]
            width = up - lo
            if np.any(width < DEGENERATE_WIDTH):
                raise RateError(f"unstable node in layer {l + 1} has degenerate bounds")
            corr.append((idx, lo, up, width ** 2))
        rates = {}
        for which, sols, sign in (("min", bounds.min_solutions[j], -1.0),
                                  ("max", bounds.max_solutions[j], 1.0)):
            out = np.empty((len(sols), 2 * net.n_inputs))
            for k, sol in enumerate(sols):
                total = sol.dual[poly.box_rows].copy()
                for l, entry in enumerate(corr):
                    if entry is None:
                        continue
                    idx, lo, up, w2 = entry
                    lam = sol.dual[poly.blocks[l].upper][idx]
                    if not np.any(lam):
                        continue
                    bias = net.biases[l][idx]
                    wz = net.weights[l][idx] @ sol.primal[poly.block_columns(l)]
                    c1 = lo * (lo - bias) / w2
                    c2 = up * (bias - up) / w2
                    c1h = up * wz / w2
                    c2h = lo * wz / w2
                    total += (lam * (c1 - c2h)) @ du[l][idx] + (lam * (c2 + c1h)) @ dl[l][idx]
                out[k] = sign * total
            rates[which] = out
        dl.append(rates["min"])
        du.append(rates["max"])
    return BoundRates(tuple(dl), tuple(du))


def bound_rates(net, bounds: BoundsTable, coeffs: EnvelopeCoefficients) -> BoundRates:
    return forward_rates(net, bounds, coeffs, first_layer_rates(bounds))
