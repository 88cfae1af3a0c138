"""Ball-arithmetic evaluation of sums of pure Gaussians.

The threshold-detector link state is a difference of two Gaussians whose
coefficients grow like ``1/(eta_s p_c)``.  Tensor products multiply those
coefficients while the probabilities of interest stay of order one, so the
cancellation quickly exceeds what double precision can hold (about twenty
digits for the repeater QKD at a few hundred km).  These states never carry
polynomial factors except for the Bell kernel of a fidelity, and every matrix
involved is real symmetric, so each moment reduces to ``coeff / det`` over
principal sub-blocks.  Here those sums are evaluated with python-flint ``arb``
balls; the final radius certifies the returned digits and the precision is
raised until it does.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import flint
from flint import arb, arb_mat

from .gaussian import CharFun, EngineError

PRECISIONS = (256, 512, 1024, 2048)
RESULT_RTOL = 1e-13
RESULT_ATOL = 1e-40
KINDS = ("unit", "delta", "click")


@contextmanager
def working_precision(bits: int):
    old = flint.ctx.prec
    flint.ctx.prec = bits
    try:
        yield
    finally:
        flint.ctx.prec = old


def num(x) -> arb:
    """Exact ball for a double (or an existing ball)."""
    return x if isinstance(x, arb) else arb(float(x))


def eye(n: int) -> arb_mat:
    m = arb_mat(n, n)
    for i in range(n):
        m[i, i] = 1
    return m


def submatrix(m: arb_mat, rows: Sequence[int], cols: Sequence[int] | None = None) -> arb_mat:
    cols = rows if cols is None else cols
    out = arb_mat(len(rows), len(cols))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            out[a, b] = m[i, j]
    return out


def block_diag(a: arb_mat, b: arb_mat) -> arb_mat:
    na, nb = a.nrows(), b.nrows()
    out = arb_mat(na + nb, na + nb)
    for i in range(na):
        for j in range(na):
            out[i, j] = a[i, j]
    for i in range(nb):
        for j in range(nb):
            out[na + i, na + j] = b[i, j]
    return out


def quad(m: arb_mat, v: Sequence) -> arb:
    """``v^T m v`` for a real vector ``v``."""
    n = len(v)
    return sum((v[i] * m[i, j] * v[j] for i in range(n) for j in range(n) if v[i] != 0 and v[j] != 0), arb(0))


@dataclass(frozen=True)
class GaussSum:
    """``sum_t c_t exp(-z^T Q_t z)`` over labelled modes, in ball arithmetic."""

    modes: tuple[str, ...]
    terms: tuple[tuple[arb, arb_mat], ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(set(self.modes)) != len(self.modes):
            raise ValueError(f"duplicate mode labels in {self.modes}")
        n = len(self.modes)
        for _, q in self.terms:
            if q.nrows() != n or q.ncols() != n:
                raise ValueError("term dimension does not match mode count")

    def index(self, label: str) -> int:
        try:
            return self.modes.index(label)
        except ValueError:
            raise KeyError(f"mode {label!r} not in {self.modes}") from None

    def at_origin(self) -> arb:
        return sum((c for c, _ in self.terms), arb(0))

    def relabel(self, mapping: Mapping[str, str]) -> "GaussSum":
        return GaussSum(tuple(mapping.get(m, m) for m in self.modes), self.terms)

    def to_charfun(self) -> CharFun:
        """Round to a double-precision :class:`CharFun` (for pointwise checks)."""
        n = len(self.modes)
        return CharFun.build(
            self.modes,
            [(float(c.mid()), [[float(q[i, j].mid()) for j in range(n)] for i in range(n)]) for c, q in self.terms],
        )


def tensor(a: GaussSum, b: GaussSum) -> GaussSum:
    if set(a.modes) & set(b.modes):
        raise ValueError(f"modes overlap: {sorted(set(a.modes) & set(b.modes))}")
    return GaussSum(a.modes + b.modes, tuple((ca * cb, block_diag(qa, qb)) for ca, qa in a.terms for cb, qb in b.terms))


def mixing_blocks(eta_c, eta_d) -> tuple[arb_mat, arb_mat]:
    """Ball version of :func:`dlczqkd.link.mixing_map` (all entries real)."""
    eta_c, eta_d = num(eta_c), num(eta_d)
    h = (eta_d / 2).sqrt()
    minus, plus = (-h, h), (h, h)
    root = eta_c.sqrt()
    lmap = arb_mat([[root * minus[0], root * minus[1]], [root * plus[0], root * plus[1]]])
    g = arb_mat(2, 2)
    for i in range(2):
        for j in range(2):
            g[i, j] = (1 - eta_c) * (minus[i] * minus[j] + plus[i] * plus[j])
        g[i, i] += 1 - eta_d
    return lmap, g


def apply_mixing(gs: GaussSum, pairs, eta_c, eta_d) -> GaussSum:
    """Send each ``(x, y, x_out, y_out)`` pair through the measurement module."""
    n = len(gs.modes)
    lmap, gfac = eye(n), arb_mat(n, n)
    sub_l, sub_g = mixing_blocks(eta_c, eta_d)
    modes = list(gs.modes)
    for x, y, x_out, y_out in pairs:
        idx = (gs.index(x), gs.index(y))
        for a in range(2):
            for b in range(2):
                lmap[idx[a], idx[b]] = sub_l[a, b]
                gfac[idx[a], idx[b]] = sub_g[a, b]
        modes[idx[0]], modes[idx[1]] = x_out, y_out
    lt = lmap.transpose()
    return GaussSum(tuple(modes), tuple((c, lt * q * lmap + gfac) for c, q in gs.terms))


def _branches(modes: Sequence[str], kinds: Mapping[str, str]):
    """Expand click kernels: yields ``(sign, deleted mode indices)``."""
    for name, kind in kinds.items():
        if kind not in KINDS:
            raise ValueError(f"unknown kernel {kind!r}")
        if name not in modes:
            raise KeyError(f"kernel on unknown mode {name!r}")
    fixed = [modes.index(m) for m, k in kinds.items() if k == "delta"]
    clicks = [modes.index(m) for m, k in kinds.items() if k == "click"]
    for chosen in itertools.product((True, False), repeat=len(clicks)):
        deleted = set(fixed) | {i for i, d in zip(clicks, chosen) if d}
        sign = -1 if (len(clicks) - sum(chosen)) % 2 else 1
        yield sign, frozenset(deleted)


def _inv_det(q: arb_mat) -> arb:
    if q.nrows() == 0:
        return arb(1)
    d = q.det()
    if not d > 0:
        raise EngineError("Gaussian exponent is not positive definite")
    return 1 / d


def integrate(gs: GaussSum, kinds: Mapping[str, str], bell_modes: tuple | None = None) -> arb:
    """Integral against per-mode kernels (``unit``/``delta``/``click``).

    ``bell_modes = (a, b, sign)`` additionally multiplies by the Bell kernel
    ``1 - |z_a + sign z_b|^2 / 2`` on two integrated (``unit``-free) modes; those
    two modes must not appear in ``kinds``.
    """
    modes = list(gs.modes)
    kinds = dict(kinds)
    covered = set(kinds) | (set(bell_modes[:2]) if bell_modes else set())
    if covered != set(modes) or (bell_modes and set(bell_modes[:2]) & set(kinds)):
        raise ValueError("every mode needs exactly one kernel")
    total = arb(0)
    for sign, deleted in _branches(modes, kinds):
        keep = [i for i in range(len(modes)) if i not in deleted]
        vec = None
        if bell_modes:
            vec = [arb(0)] * len(keep)
            vec[keep.index(modes.index(bell_modes[0]))] = arb(1)
            vec[keep.index(modes.index(bell_modes[1]))] = arb(bell_modes[2])
        part = arb(0)
        for c, q in gs.terms:
            qk = submatrix(q, keep)
            w = c * _inv_det(qk)
            if vec is not None:
                w *= 1 - quad(qk.inv(), vec) / 2
            part += w
        total += sign * part
    return total


def subset_integrals(gs: GaussSum) -> dict[frozenset, arb]:
    """``sum_t c_t / det(Q_t[K, K])`` for every subset ``K`` of integrated modes.

    Any kernel product of ``unit``/``delta``/``click`` is a signed sum of these.
    """
    n = len(gs.modes)
    out = {}
    for r in range(n + 1):
        for keep in itertools.combinations(range(n), r):
            out[frozenset(keep)] = sum((c * _inv_det(submatrix(q, keep)) for c, q in gs.terms), arb(0))
    return out


def condition(gs: GaussSum, kinds: Mapping[str, str]) -> tuple[GaussSum, arb]:
    """Integrate out the modes in ``kinds``; returns the normalised remainder and the weight."""
    modes = list(gs.modes)
    rest = [i for i, m in enumerate(modes) if m not in kinds]
    terms = []
    for sign, deleted in _branches(modes, kinds):
        integ = [modes.index(m) for m in kinds if modes.index(m) not in deleted]
        for c, q in gs.terms:
            q_rr = submatrix(q, rest)
            if integ:
                q_mm = submatrix(q, integ)
                q_rm = submatrix(q, rest, integ)
                q_rr = q_rr - q_rm * q_mm.inv() * q_rm.transpose()
                c = c * _inv_det(q_mm)
            terms.append((sign * c, q_rr))
    out = GaussSum(tuple(modes[i] for i in rest), tuple(terms))
    weight = out.at_origin()
    if not weight > 0:
        raise EngineError("conditioning weight is not positive")
    return GaussSum(out.modes, tuple((c / weight, q) for c, q in out.terms)), weight


def certified(x: arb, what: str = "value") -> float:
    """Midpoint of ``x`` after checking the ball is tight enough."""
    mid = float(x.mid())
    rad = float(x.rad())
    if rad > RESULT_RTOL * abs(mid) and rad > RESULT_ATOL:
        raise PrecisionError(f"{what} not resolved: {mid!r} +/- {rad:.3e}")
    return mid


class PrecisionError(EngineError):
    """Ball radius too large at the working precision."""


def adaptive(fn: Callable, *args, **kwargs):
    """Run ``fn`` at increasing precision until it stops raising :class:`PrecisionError`."""
    last = None
    for bits in PRECISIONS:
        with working_precision(bits):
            try:
                return fn(*args, **kwargs)
            except PrecisionError as exc:
                last = exc
    raise last
