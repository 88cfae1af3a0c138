"""Anti-normally ordered characteristic functions of Gaussian-times-polynomial form.

A characteristic function over ``n`` labelled complex modes is stored as a sum of
terms::

    coeff * exp(-z^H Q z) * prod_k (z^H P_k z)

with ``Q`` Hermitian and every ``P_k`` a Hermitian quadratic form.  The class is
closed under tensor products, linear argument substitution, multiplication by
Gaussian factors and partial integration against the detection kernels below,
which is all the repeater and QKD pipelines need.

Integrals use the measure ``prod_i d^2 z_i / pi``.  For a term with covariance
``C = Q^-1`` the integral is ``coeff / det(Q) * E_C[prod_k z^H P_k z]`` and the
Gaussian expectation is evaluated exactly with the complex Wick (cycle) formula.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from functools import cached_property, lru_cache
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
IMAG_TOL = 1e-10
MAX_FORMS = 12
MAX_CONDITION = 1e12
MIN_DET = 1e-300


class EngineError(ArithmeticError):
    """Raised when a Gaussian integral is ill-posed (singular or indefinite exponent)."""


def hermitian(matrix, name: str = "matrix") -> np.ndarray:
    """Return ``matrix`` as a complex array after checking it is Hermitian."""
    m = np.array(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if m.size and np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL * max(1.0, np.max(np.abs(m))):
        raise ValueError(f"{name} is not Hermitian")
    return 0.5 * (m + m.conj().T)


def outer_form(vector) -> np.ndarray:
    """Rank-one form ``v v^H`` so that ``z^H P z = |v^H z|^2``."""
    v = np.asarray(vector, dtype=complex)
    return np.outer(v, v.conj())


@dataclass(frozen=True)
class GaussianTerm:
    coeff: complex
    exponent: np.ndarray
    forms: tuple[np.ndarray, ...] = ()

    @property
    def n_modes(self) -> int:
        return self.exponent.shape[0]


def _term(coeff, exponent, forms=()) -> GaussianTerm:
    return GaussianTerm(complex(coeff), np.asarray(exponent, dtype=complex), tuple(forms))


@dataclass(frozen=True)
class CharFun:
    """A sum of Gaussian terms over an ordered tuple of mode labels."""

    modes: tuple[str, ...]
    terms: tuple[GaussianTerm, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(set(self.modes)) != len(self.modes):
            raise ValueError(f"duplicate mode labels in {self.modes}")
        n = len(self.modes)
        for t in self.terms:
            if t.exponent.shape != (n, n) or any(p.shape != (n, n) for p in t.forms):
                raise ValueError("term dimension does not match mode count")

    @classmethod
    def build(cls, modes: Sequence[str], terms: Iterable[tuple]) -> "CharFun":
        """Build from ``(coeff, Q, [P_1, ...])`` tuples, checking hermiticity."""
        out = []
        for coeff, q, *rest in terms:
            forms = rest[0] if rest else ()
            out.append(_term(coeff, hermitian(q, "exponent"), [hermitian(p, "form") for p in forms]))
        return cls(tuple(modes), tuple(out))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def index(self, label: str) -> int:
        try:
            return self.modes.index(label)
        except ValueError:
            raise KeyError(f"mode {label!r} not in {self.modes}") from None

    def __call__(self, zeta) -> complex:
        return evaluate(self, zeta)

    def scaled(self, factor: complex) -> "CharFun":
        return CharFun(self.modes, tuple(_term(t.coeff * factor, t.exponent, t.forms) for t in self.terms))

    def relabel(self, mapping: dict[str, str]) -> "CharFun":
        return CharFun(tuple(mapping.get(m, m) for m in self.modes), self.terms)

    def reorder(self, modes: Sequence[str]) -> "CharFun":
        """Same function with the mode axes permuted into ``modes`` order."""
        if sorted(modes) != sorted(self.modes):
            raise ValueError("reorder needs a permutation of the existing modes")
        idx = [self.index(m) for m in modes]
        return CharFun(
            tuple(modes),
            tuple(
                _term(t.coeff, t.exponent[np.ix_(idx, idx)], [p[np.ix_(idx, idx)] for p in t.forms])
                for t in self.terms
            ),
        )

    @property
    def max_forms(self) -> int:
        return max((len(t.forms) for t in self.terms), default=0)

    @cached_property
    def stacks(self) -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Terms grouped by form count as ``(coeffs, Q stack, form stack)`` arrays."""
        n = self.n_modes
        groups: dict[int, list] = defaultdict(list)
        for t in self.terms:
            groups[len(t.forms)].append(t)
        out = {}
        for m, ts in sorted(groups.items()):
            out[m] = (
                np.array([t.coeff for t in ts], dtype=complex),
                np.array([t.exponent for t in ts], dtype=complex).reshape(len(ts), n, n),
                np.array([list(t.forms) for t in ts], dtype=complex).reshape(len(ts), m, n, n),
            )
        return out


def evaluate(cf: CharFun, zeta) -> complex:
    """Pointwise value ``sum_t coeff exp(-z^H Q z) prod z^H P z``."""
    z = np.asarray(zeta, dtype=complex).reshape(-1)
    if z.shape[0] != cf.n_modes:
        raise ValueError(f"expected {cf.n_modes} coordinates, got {z.shape[0]}")
    total = 0j
    for t in cf.terms:
        val = t.coeff * np.exp(-(z.conj() @ t.exponent @ z))
        for p in t.forms:
            val *= z.conj() @ p @ z
        total += val
    return complex(total)


def tensor(a: CharFun, b: CharFun) -> CharFun:
    """Characteristic function of the product state; exponents become block diagonal."""
    clash = set(a.modes) & set(b.modes)
    if clash:
        raise ValueError(f"tensor needs disjoint modes, shared: {sorted(clash)}")
    na, nb = a.n_modes, b.n_modes

    def lift(m, first):
        out = np.zeros((na + nb, na + nb), dtype=complex)
        if first:
            out[:na, :na] = m
        else:
            out[na:, na:] = m
        return out

    terms = []
    for ta in a.terms:
        for tb in b.terms:
            q = lift(ta.exponent, True) + lift(tb.exponent, False)
            forms = [lift(p, True) for p in ta.forms] + [lift(p, False) for p in tb.forms]
            terms.append(_term(ta.coeff * tb.coeff, q, forms))
    return CharFun(a.modes + b.modes, tuple(terms))


def substitute_linear(cf: CharFun, lmap, new_modes: Sequence[str]) -> CharFun:
    """Return ``z -> cf(L z)``: old arguments are ``L`` times the new ones."""
    lmat = np.asarray(lmap, dtype=complex)
    if lmat.shape != (cf.n_modes, len(new_modes)):
        raise ValueError(f"map shape {lmat.shape} incompatible with {cf.n_modes} old / {len(new_modes)} new modes")
    lh = lmat.conj().T
    terms = tuple(
        _term(t.coeff, lh @ t.exponent @ lmat, [lh @ p @ lmat for p in t.forms]) for t in cf.terms
    )
    return CharFun(tuple(new_modes), terms)


def multiply_gaussian_factor(cf: CharFun, g) -> CharFun:
    """Multiply by ``exp(-z^H G z)``."""
    gm = hermitian(g, "gaussian factor")
    if gm.shape != (cf.n_modes, cf.n_modes):
        raise ValueError("gaussian factor has wrong dimension")
    return CharFun(cf.modes, tuple(_term(t.coeff, t.exponent + gm, t.forms) for t in cf.terms))


def simplify(cf: CharFun, rtol: float = 1e-13) -> CharFun:
    """Merge terms with identical exponent and forms and drop zero coefficients.

    Forms are rescaled to unit max-entry (the scale moves into the coefficient)
    and put in a canonical order, so products that differ only by a constant
    or by ordering merge too.  Terms carrying an identically zero form vanish.
    """
    scale = max((np.max(np.abs(t.exponent)) for t in cf.terms), default=1.0) or 1.0
    groups: dict[bytes, list[tuple]] = defaultdict(list)
    for t in cf.terms:
        coeff, forms = t.coeff, []
        for p in t.forms:
            flat = p.ravel()
            size = float(np.max(np.abs(flat)))
            if size == 0.0:
                break
            lead = flat[int(np.argmax(np.abs(flat) > 1e-9 * size))]
            if lead.real < 0 or (lead.real == 0 and lead.imag < 0):
                size = -size
            coeff = coeff * size
            forms.append(p / size)
        else:
            keys = [np.round(p.ravel(), 11) + 0j for p in forms]
            order = sorted(range(len(forms)), key=lambda i: keys[i].tobytes())
            forms = [forms[i] for i in order]
            key = np.round(t.exponent.ravel() / scale, 11) + 0j
            tag = key.tobytes() + b"".join(keys[i].tobytes() for i in order) + bytes([len(forms)])
            groups[tag].append((coeff, t.exponent, tuple(forms)))
    terms = []
    cmax = max((abs(c) for members in groups.values() for c, _, _ in members), default=0.0)
    for members in groups.values():
        coeff = sum(c for c, _, _ in members)
        if abs(coeff) > rtol * cmax:
            terms.append(_term(coeff, members[0][1], members[0][2]))
    return CharFun(cf.modes, tuple(terms))


# --------------------------------------------------------------------------
# Measurement kernels


@dataclass(frozen=True)
class MeasurementFactor:
    """Trace kernel ``Tr[M D_N(-z)]`` of a detection operator ``M``.

    ``unit``            vacuum projector, kernel 1
    ``one_minus_abs_sq`` one-photon projector, kernel 1 - |z|^2
    ``delta``           identity (partial trace), kernel pi delta(z)
    ``delta_minus_one`` threshold click I - |0><0|, kernel pi delta(z) - 1
    ``bell``            Bell projector on two modes, kernel 1 - |z_a + s z_b|^2 / 2
    """

    kind: str
    modes: tuple[str, ...]
    sign: int = 1

    def __post_init__(self):
        arity = {"unit": 1, "one_minus_abs_sq": 1, "delta": 1, "delta_minus_one": 1, "bell": 2}
        if self.kind not in arity:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        if len(self.modes) != arity[self.kind]:
            raise ValueError(f"{self.kind} acts on {arity[self.kind]} mode(s)")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")


def vacuum(mode: str) -> MeasurementFactor:
    return MeasurementFactor("unit", (mode,))


def one_photon(mode: str) -> MeasurementFactor:
    return MeasurementFactor("one_minus_abs_sq", (mode,))


def trace(mode: str) -> MeasurementFactor:
    return MeasurementFactor("delta", (mode,))


def click(mode: str) -> MeasurementFactor:
    return MeasurementFactor("delta_minus_one", (mode,))


def bell(mode_a: str, mode_b: str, sign: int) -> MeasurementFactor:
    return MeasurementFactor("bell", (mode_a, mode_b), sign)


def _check_factors(modes: Sequence[str], factors: Sequence[MeasurementFactor]) -> None:
    seen_delta = set()
    used = set()
    for f in factors:
        for m in f.modes:
            if m not in modes:
                raise KeyError(f"factor references unknown mode {m!r}")
        if f.kind in ("delta", "delta_minus_one"):
            if f.modes[0] in seen_delta:
                raise ValueError(f"more than one delta-type factor on mode {f.modes[0]!r}")
            seen_delta.add(f.modes[0])
        else:
            used.update(f.modes)
    if seen_delta & used:
        raise ValueError(f"modes {sorted(seen_delta & used)} carry both delta and polynomial kernels")


def _expand_factors(modes: Sequence[str], factors: Sequence[MeasurementFactor]):
    """Distribute kernels into branches ``(weight, delta_modes, extra_forms)``."""
    n = len(modes)
    idx = {m: i for i, m in enumerate(modes)}
    branches = [(1.0, frozenset(), ())]
    for f in factors:
        new = []
        if f.kind == "unit":
            continue
        if f.kind == "delta":
            for w, d, fs in branches:
                new.append((w, d | {idx[f.modes[0]]}, fs))
        elif f.kind == "delta_minus_one":
            for w, d, fs in branches:
                new.append((w, d | {idx[f.modes[0]]}, fs))
                new.append((-w, d, fs))
        else:
            vec = np.zeros(n, dtype=complex)
            if f.kind == "one_minus_abs_sq":
                vec[idx[f.modes[0]]] = 1.0
                c = -1.0
            else:
                vec[idx[f.modes[0]]] = 1.0
                vec[idx[f.modes[1]]] = f.sign
                c = -0.5
            form = outer_form(vec)
            for w, d, fs in branches:
                new.append((w, d, fs))
                new.append((w * c, d, fs + (form,)))
        branches = new
    return branches


# --------------------------------------------------------------------------
# Wick expectation


@lru_cache(maxsize=None)
def _subset_tables(m: int):
    """Index tables for the cycle / set-partition recursion over ``m`` forms."""
    full = (1 << m) - 1
    lowbit = [0] * (1 << m)
    for s in range(1, 1 << m):
        lowbit[s] = (s & -s).bit_length() - 1
    # For each S (non-empty), the subsets T of S containing lowbit(S).
    partitions = []
    for s in range(1, 1 << m):
        low = 1 << lowbit[s]
        rest = s ^ low
        subs = []
        sub = rest
        while True:
            subs.append(sub | low)
            if sub == 0:
                break
            sub = (sub - 1) & rest
        partitions.append((s, subs))
    return full, lowbit, partitions


def _wick_batch(cov: np.ndarray, forms: np.ndarray) -> np.ndarray:
    """Batched complex Wick expectation.

    ``cov`` has shape (T, n, n), ``forms`` (T, m, n, n).  Returns the length-T
    vector ``E[prod_k z^H A_k z]`` for ``z ~ CN(0, C)``, i.e. the sum over
    permutations of products of cycle traces ``tr(A_k1 C A_k2 C ...)``.
    The permutation sum is reorganised as ordered-path products ``K[U]`` over
    subsets and a set-partition recursion, which is exact and costs
    O(2^m m) matrix products plus O(3^m) scalar updates.
    """
    t_count, m = forms.shape[:2]
    if m == 0:
        return np.ones(t_count, dtype=complex)
    if m > MAX_FORMS:
        raise EngineError(f"{m} quadratic forms exceed the complexity guard ({MAX_FORMS})")
    n = cov.shape[-1]
    full, lowbit, partitions = _subset_tables(m)
    b = np.einsum("tkij,tjl->tkil", forms, cov)  # A_k C
    # K[U] = sum over orderings (u_1..u_r) of U of B_u1 ... B_ur
    k_tab = np.empty((1 << m, t_count, n, n), dtype=complex)
    k_tab[0] = np.eye(n)
    for u in range(1, 1 << m):
        acc = np.zeros((t_count, n, n), dtype=complex)
        bits = u
        while bits:
            low = bits & -bits
            j = low.bit_length() - 1
            acc += k_tab[u ^ low] @ b[:, j]
            bits ^= low
        k_tab[u] = acc
    # cycle weight of subset S anchored at its lowest element
    cyc = np.empty((1 << m, t_count), dtype=complex)
    cyc[0] = 0.0
    for s in range(1, 1 << m):
        j = lowbit[s]
        cyc[s] = np.einsum("tij,tji->t", b[:, j], k_tab[s ^ (1 << j)])
    part = np.empty((1 << m, t_count), dtype=complex)
    part[0] = 1.0
    for s, subs in partitions:
        acc = np.zeros(t_count, dtype=complex)
        for sub in subs:
            acc += cyc[sub] * part[s ^ sub]
        part[s] = acc
    return part[full]


def wick_expectation(cov, forms: Sequence) -> complex:
    """Exact ``E[prod_k z^H A_k z]`` for a circular complex Gaussian with covariance ``cov``."""
    c = np.asarray(cov, dtype=complex)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("covariance must be square")
    fs = [np.asarray(a, dtype=complex) for a in forms]
    for a in fs:
        if a.shape != c.shape:
            raise ValueError(f"form shape {a.shape} does not match covariance {c.shape}")
    if not fs:
        return 1.0 + 0j
    return complex(_wick_batch(c[None], np.stack(fs)[None])[0])


def wick_permutation_sum(cov, forms: Sequence) -> complex:
    """Reference evaluation of the cycle formula by explicit enumeration of permutations."""
    c = np.asarray(cov, dtype=complex)
    fs = [np.asarray(a, dtype=complex) for a in forms]
    m = len(fs)
    total = 0j
    for perm in itertools.permutations(range(m)):
        seen = [False] * m
        prod = 1.0 + 0j
        for start in range(m):
            if seen[start]:
                continue
            mat = np.eye(c.shape[0], dtype=complex)
            k = start
            while not seen[k]:
                seen[k] = True
                mat = mat @ fs[k] @ c
                k = perm[k]
            prod *= np.trace(mat)
        total += prod
    return total


# --------------------------------------------------------------------------
# Integration


def _check_exponents(q: np.ndarray) -> None:
    """Reject exponent blocks that are not safely positive definite (batched)."""
    eig = np.linalg.eigvalsh(q)
    lo, hi = eig[..., 0], eig[..., -1]
    if np.any(lo <= 0):
        raise EngineError("Gaussian exponent is not positive definite")
    if np.any(hi / lo > MAX_CONDITION):
        raise EngineError("Gaussian exponent is ill-conditioned")
    if np.any(np.prod(eig, axis=-1) < MIN_DET):
        raise EngineError("Gaussian exponent determinant underflows")


def _integrate_batch(coeffs, qs, form_stacks) -> complex:
    """Sum of ``coeff / det(Q) * Wick(Q^-1, forms)`` over a batch with equal shapes."""
    coeffs = np.asarray(coeffs, dtype=complex)
    if qs.shape[-1] == 0:
        if form_stacks.shape[1]:
            return 0j
        return complex(coeffs.sum())
    qs = 0.5 * (qs + np.conj(np.swapaxes(qs, -1, -2)))
    _check_exponents(qs)
    dets = np.real(np.linalg.det(qs))
    cov = np.linalg.inv(qs)
    return complex(np.sum(coeffs / dets * _wick_batch(cov, form_stacks)))


def _keep(matrix: np.ndarray, keep: list[int]) -> np.ndarray:
    return matrix[np.ix_(keep, keep)]


def moment_integral(cf: CharFun, factors: Sequence[MeasurementFactor] = (), *, real: bool = True):
    """Integrate ``cf`` against measurement kernels over all modes.

    Modes without a delta-type factor are integrated with weight ``d^2 z / pi``
    (together with any polynomial kernel they carry); delta factors pin their
    mode to zero.  With ``real=True`` the result is checked to be real and the
    real part returned.
    """
    factors = list(factors)
    _check_factors(cf.modes, factors)
    n = cf.n_modes
    batches: dict[tuple, list] = defaultdict(list)
    for weight, deltas, extra in _expand_factors(cf.modes, factors):
        keep = np.array([i for i in range(n) if i not in deltas], dtype=int)
        grid = np.ix_(keep, keep)
        extra_k = np.array([p[grid] for p in extra], dtype=complex).reshape(len(extra), len(keep), len(keep))
        for m, (coeffs, qs, fs) in cf.stacks.items():
            q_k = qs[:, keep][:, :, keep]
            f_k = fs[:, :, keep][:, :, :, keep]
            if len(extra):
                f_k = np.concatenate([f_k, np.broadcast_to(extra_k, (len(coeffs),) + extra_k.shape)], axis=1)
            batches[(len(keep), f_k.shape[1])].append((weight * coeffs, q_k, f_k))
    total = 0j
    for items in batches.values():
        coeffs = np.concatenate([c for c, _, _ in items])
        qs = np.concatenate([q for _, q, _ in items])
        fs = np.concatenate([f for _, _, f in items])
        total += _integrate_batch(coeffs, qs, fs)
    if not real:
        return total
    scale = max(1.0, abs(total))
    if abs(total.imag) > IMAG_TOL * scale:
        raise EngineError(f"moment integral has imaginary part {total.imag:.3e}")
    return float(total.real)


def probability(cf: CharFun, factors: Sequence[MeasurementFactor]) -> float:
    """Moment integral that is additionally required to be a probability."""
    val = moment_integral(cf, factors)
    if val < -1e-12 or val > 1 + 1e-9:
        raise EngineError(f"probability {val} outside [0, 1]")
    return min(max(val, 0.0), 1.0)


def trace_all(cf: CharFun) -> float:
    """``Tr rho`` via delta kernels on every mode (equals ``cf(0)``)."""
    return moment_integral(cf, [trace(m) for m in cf.modes])


# --------------------------------------------------------------------------
# Partial measurement


def _structures(forms_r, chain_x, chain_z, cov_m):
    """Expand ``E_w[prod_k (r^H A_k r + r^H x_k w + w^H x_k^H r + w^H Z_k w)]``.

    Returns a list of ``(scalar, [Hermitian forms in r])``.  Each form picks one
    of its four parts; contractions of ``w`` with ``w^H`` then decompose into
    open chains ``x C Z C ... C x^H`` (summed with their reversal, which is the
    Hermitian conjugate) and closed cycles ``tr(C Z C Z ...)``.
    """
    m = len(forms_r)
    results = []

    def chain_matrix(order):
        mat = chain_x[order[0]] @ cov_m
        for k in order[1:-1]:
            mat = mat @ chain_z[k] @ cov_m
        mat = mat @ chain_x[order[-1]].conj().T
        return mat + mat.conj().T

    def cycle_value(order):
        mat = np.eye(cov_m.shape[0], dtype=complex)
        for k in order:
            mat = mat @ cov_m @ chain_z[k]
        return np.trace(mat)

    def recurse(remaining: tuple[int, ...], scalar: complex, acc: list):
        if not remaining:
            results.append((scalar, list(acc)))
            return
        k, rest = remaining[0], remaining[1:]
        recurse(rest, scalar, acc + [forms_r[k]])
        for size in range(0, len(rest) + 1):
            for others in itertools.combinations(rest, size):
                left = tuple(i for i in rest if i not in others)
                for perm in itertools.permutations(others):
                    # closed cycle anchored at k
                    recurse(left, scalar * cycle_value((k,) + perm), acc)
                if size == 0:
                    continue
                members = (k,) + others
                for order in itertools.permutations(members):
                    if order[0] < order[-1]:
                        recurse(left, scalar, acc + [chain_matrix(order)])

    recurse(tuple(range(m)), 1.0 + 0j, [])
    return results


def partial_condition(cf: CharFun, factors: Sequence[MeasurementFactor]) -> tuple[CharFun, float]:
    """Measure the modes named in ``factors`` and return the conditional state.

    The remaining modes keep their Gaussian dependence: the measured block is
    integrated with the remaining variables held fixed, giving the Schur
    complement as the new exponent and conditional moments (mean linear in the
    remaining variables) for the polynomial part.  Returns the normalised
    characteristic function of the remaining modes and the outcome weight.
    """
    factors = list(factors)
    _check_factors(cf.modes, factors)
    measured = {m for f in factors for m in f.modes}
    if any(f.kind == "bell" for f in factors):
        raise ValueError("Bell kernels are not supported for partial measurement")
    remaining = [m for m in cf.modes if m not in measured]
    n = cf.n_modes
    out_terms = []
    for weight, deltas, extra in _expand_factors(cf.modes, factors):
        keep = [i for i in range(n) if i not in deltas]
        kept_modes = [cf.modes[i] for i in keep]
        r_idx = [kept_modes.index(m) for m in remaining]
        m_idx = [i for i, m in enumerate(kept_modes) if m not in remaining]
        nk, nr, nm = len(keep), len(r_idx), len(m_idx)
        extra_k = [_keep(p, keep) for p in extra]
        for t in cf.terms:
            q = _keep(t.exponent, keep)
            forms = [_keep(p, keep) for p in t.forms] + extra_k
            coeff = weight * t.coeff
            if nm == 0:
                perm = np.ix_(r_idx, r_idx)
                out_terms.append(_term(coeff, q[perm], [p[perm] for p in forms]))
                continue
            q_mm = q[np.ix_(m_idx, m_idx)]
            q_mr = q[np.ix_(m_idx, r_idx)]
            q_rr = q[np.ix_(r_idx, r_idx)]
            _check_exponents(q_mm[None])
            cov_m = np.linalg.inv(q_mm)
            schur = q_rr - q_mr.conj().T @ cov_m @ q_mr
            schur = 0.5 * (schur + schur.conj().T)
            # z (kept ordering) = T r + E w
            tmat = np.zeros((nk, nr), dtype=complex)
            tmat[r_idx, np.arange(nr)] = 1.0
            tmat[m_idx, :] = -cov_m @ q_mr
            emat = np.zeros((nk, nm), dtype=complex)
            emat[m_idx, np.arange(nm)] = 1.0
            forms_r = [tmat.conj().T @ p @ tmat for p in forms]
            chain_x = [tmat.conj().T @ p @ emat for p in forms]
            chain_z = [emat.conj().T @ p @ emat for p in forms]
            pref = coeff / np.real(np.linalg.det(q_mm))
            for scalar, fr in _structures(forms_r, chain_x, chain_z, cov_m):
                out_terms.append(_term(pref * scalar, schur, [0.5 * (p + p.conj().T) for p in fr]))
    unnormalised = simplify(CharFun(tuple(remaining), tuple(out_terms)))
    w = evaluate(unnormalised, np.zeros(len(remaining)))
    if abs(w.imag) > IMAG_TOL * max(1.0, abs(w)):
        raise EngineError("conditional weight is not real")
    weight = float(w.real)
    if weight <= 0:
        raise EngineError(f"measurement outcome has non-positive weight {weight}")
    return unnormalised.scaled(1.0 / weight), weight


__all__ = [
    "CharFun",
    "EngineError",
    "GaussianTerm",
    "MeasurementFactor",
    "bell",
    "click",
    "evaluate",
    "hermitian",
    "moment_integral",
    "multiply_gaussian_factor",
    "one_photon",
    "outer_form",
    "partial_condition",
    "probability",
    "simplify",
    "substitute_linear",
    "tensor",
    "trace",
    "trace_all",
    "vacuum",
    "wick_expectation",
    "wick_permutation_sum",
]
