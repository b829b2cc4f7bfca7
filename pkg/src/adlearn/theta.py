"""Parameter draws and the unconstrained coordinate system used for sampling.

Unconstrained layout, in order::

    log g[A], log gamma_bar, log(zeta - shift)[A], log zeta_bar,
    xi[A], eta[S], phi[12], psi[M], log sigma

gamma_a is never a free coordinate: gamma_a = g_a / (1/gamma_bar + g_a),
i.e. expit(log g_a + log gamma_bar).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import expit

from .model import N_TENURE_BUCKETS, DomainError

ZETA_SHIFT = 0.01


@dataclass(frozen=True)
class ParamLayout:
    n_advertisers: int
    n_sites: int
    n_months: int
    advertiser_ids: tuple = ()
    site_ids: tuple = ()
    months: tuple = ()
    zeta_shift: float = ZETA_SHIFT

    def __post_init__(self):
        if not self.advertiser_ids:
            object.__setattr__(self, "advertiser_ids", tuple(range(self.n_advertisers)))
        if not self.site_ids:
            object.__setattr__(self, "site_ids", tuple(range(self.n_sites)))
        if not self.months:
            object.__setattr__(self, "months", tuple(range(self.n_months)))
        if (len(self.advertiser_ids), len(self.site_ids), len(self.months)) != (
            self.n_advertisers, self.n_sites, self.n_months
        ):
            raise DomainError("id labels do not match layout sizes")

    @property
    def dim(self) -> int:
        return 3 * self.n_advertisers + self.n_sites + N_TENURE_BUCKETS + self.n_months + 3

    def _offsets(self):
        a, s, m = self.n_advertisers, self.n_sites, self.n_months
        sizes = [("log_g", a), ("log_gamma_bar", 1), ("log_zeta_excess", a),
                 ("log_zeta_bar", 1), ("xi", a), ("eta", s), ("phi", N_TENURE_BUCKETS),
                 ("psi", m), ("log_sigma", 1)]
        out, start = {}, 0
        for name, n in sizes:
            out[name] = slice(start, start + n)
            start += n
        return out

    @cached_property
    def slices(self) -> dict[str, slice]:
        return self._offsets()

    def unconstrained_names(self) -> list[str]:
        sl = self.slices
        names = [""] * self.dim
        labels = {
            "log_g": self.advertiser_ids, "log_zeta_excess": self.advertiser_ids,
            "xi": self.advertiser_ids, "eta": self.site_ids,
            "phi": tuple(range(N_TENURE_BUCKETS)), "psi": self.months,
        }
        for key, s in sl.items():
            if key in labels:
                for i, lab in zip(range(s.start, s.stop), labels[key]):
                    names[i] = f"{key}[{lab}]"
            else:
                names[s.start] = key
        return names


@dataclass(frozen=True)
class ThetaDraw:
    """One full parameter vector on the natural scale."""

    gamma: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    sigma: float
    zeta_bar: float
    gamma_bar: float
    g: np.ndarray
    layout: ParamLayout = field(repr=False, compare=False, default=None)

    def validate(self) -> None:
        if np.any(~(self.gamma > 0)) or np.any(~(self.gamma < 1)):
            raise DomainError("gamma must lie in (0, 1)")
        shift = self.layout.zeta_shift if self.layout else ZETA_SHIFT
        if np.any(~(self.zeta > shift)):
            raise DomainError(f"zeta must exceed {shift}")
        for name in ("sigma", "zeta_bar", "gamma_bar"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if np.any(~(self.g > 0)):
            raise DomainError("g must be positive")
        if len(self.phi) != N_TENURE_BUCKETS:
            raise DomainError("phi needs 12 entries")
        implied = self.g / (1.0 / self.gamma_bar + self.g)
        if not np.allclose(implied, self.gamma, rtol=1e-9, atol=0):
            raise DomainError("gamma is inconsistent with g and gamma_bar")

    @classmethod
    def from_hierarchy(cls, g, gamma_bar, zeta, xi, eta, phi, psi, sigma, zeta_bar,
                       layout: ParamLayout | None = None) -> "ThetaDraw":
        g = np.asarray(g, dtype=float)
        gamma = expit(np.log(g) + np.log(gamma_bar))
        return cls(gamma=gamma, zeta=np.asarray(zeta, dtype=float),
                   xi=np.asarray(xi, dtype=float), eta=np.asarray(eta, dtype=float),
                   phi=np.asarray(phi, dtype=float), psi=np.asarray(psi, dtype=float),
                   sigma=float(sigma), zeta_bar=float(zeta_bar),
                   gamma_bar=float(gamma_bar), g=g, layout=layout)

    def named_values(self) -> dict[str, float]:
        """Flat ``name -> value`` mapping, used for draws CSV columns."""
        lay = self.layout or ParamLayout(len(self.gamma), len(self.eta), len(self.psi))
        out: dict[str, float] = {}
        for key, labels in (("gamma", lay.advertiser_ids), ("zeta", lay.advertiser_ids),
                            ("xi", lay.advertiser_ids), ("g", lay.advertiser_ids),
                            ("eta", lay.site_ids), ("phi", range(N_TENURE_BUCKETS)),
                            ("psi", lay.months)):
            for lab, v in zip(labels, getattr(self, key)):
                out[f"{key}[{lab}]"] = float(v)
        for key in ("sigma", "zeta_bar", "gamma_bar"):
            out[key] = float(getattr(self, key))
        return out

    @classmethod
    def from_named_values(cls, values: dict[str, float], layout: ParamLayout) -> "ThetaDraw":
        def vec(key, labels):
            return np.array([float(values[f"{key}[{lab}]"]) for lab in labels])

        g = vec("g", layout.advertiser_ids)
        gamma_bar = float(values["gamma_bar"])
        return cls.from_hierarchy(
            g=g, gamma_bar=gamma_bar,
            zeta=vec("zeta", layout.advertiser_ids), xi=vec("xi", layout.advertiser_ids),
            eta=vec("eta", layout.site_ids), phi=vec("phi", range(N_TENURE_BUCKETS)),
            psi=vec("psi", layout.months), sigma=float(values["sigma"]),
            zeta_bar=float(values["zeta_bar"]), layout=layout,
        )


def from_unconstrained(u: np.ndarray, layout: ParamLayout) -> ThetaDraw:
    u = np.asarray(u, dtype=float)
    if u.shape != (layout.dim,):
        raise DomainError(f"expected vector of length {layout.dim}, got shape {u.shape}")
    sl = layout.slices
    log_g = u[sl["log_g"]]
    log_gb = u[sl["log_gamma_bar"]][0]
    return ThetaDraw(
        gamma=expit(log_g + log_gb),
        zeta=layout.zeta_shift + np.exp(u[sl["log_zeta_excess"]]),
        xi=u[sl["xi"]].copy(),
        eta=u[sl["eta"]].copy(),
        phi=u[sl["phi"]].copy(),
        psi=u[sl["psi"]].copy(),
        sigma=float(np.exp(u[sl["log_sigma"]][0])),
        zeta_bar=float(np.exp(u[sl["log_zeta_bar"]][0])),
        gamma_bar=float(np.exp(log_gb)),
        g=np.exp(log_g),
        layout=layout,
    )


def to_unconstrained(theta: ThetaDraw, layout: ParamLayout) -> np.ndarray:
    u = np.empty(layout.dim)
    sl = layout.slices
    u[sl["log_g"]] = np.log(theta.g)
    u[sl["log_gamma_bar"]] = np.log(theta.gamma_bar)
    u[sl["log_zeta_excess"]] = np.log(np.asarray(theta.zeta) - layout.zeta_shift)
    u[sl["log_zeta_bar"]] = np.log(theta.zeta_bar)
    u[sl["xi"]] = theta.xi
    u[sl["eta"]] = theta.eta
    u[sl["phi"]] = theta.phi
    u[sl["psi"]] = theta.psi
    u[sl["log_sigma"]] = np.log(theta.sigma)
    return u


def log_abs_det_jacobian(u: np.ndarray, layout: ParamLayout) -> tuple[float, np.ndarray]:
    """Log-Jacobian of u -> (g, gamma_bar, zeta, zeta_bar, fixed effects, sigma).

    Every positive quantity is exp(u) (+ shift), so the log-Jacobian is the sum
    of those coordinates and its gradient is an indicator vector.
    """
    mask = log_scale_mask(layout)
    return float(np.sum(u[mask])), mask.astype(float)


def log_scale_mask(layout: ParamLayout) -> np.ndarray:
    mask = np.zeros(layout.dim, dtype=bool)
    for key in ("log_g", "log_gamma_bar", "log_zeta_excess", "log_zeta_bar", "log_sigma"):
        mask[layout.slices[key]] = True
    return mask


def stack_named(draws: Sequence[ThetaDraw]) -> tuple[list[str], np.ndarray]:
    names = list(draws[0].named_values())
    rows = np.array([[d.named_values()[n] for n in names] for d in draws])
    return names, rows
