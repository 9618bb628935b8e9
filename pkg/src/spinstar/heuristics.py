"""Circuit-shortening heuristics applied at every level of the recursion:
non-participating-qubit reduction, tensor-product splitting, and greedy
unwrapping of known gates.

All qubit references here are 0-based positions *within the current
context matrix*; the decomposition layer maps them back to register
labels.
"""

from dataclasses import dataclass

import numpy as np

from . import matcore
from .matcore import maxabs


@dataclass(frozen=True)
class PartitionReport:
    """Finest tensor-product partition found for a unitary."""

    blocks: tuple   # tuple of tuples of qubit positions, each sorted
    factors: tuple  # matching unitary factors


@dataclass(frozen=True)
class UnwrapStep:
    """One accepted left/right multiplication by a known gate.

    ``angle`` uses the R-convention R(z) = exp(i z sigma/2) for rotations
    and the bare |11> phase for controlled-phase gates.
    """

    gate: str       # 'rx' | 'ry' | 'cnot' | 'swap' | 'cphase'
    side: str       # 'left' | 'right'
    qubits: tuple
    angle: float = 0.0


def _identity_factor(u, n, pos, tol):
    """If u = u' (x) I on qubit position ``pos``, return u'; else None."""
    t = u.reshape([2] * (2 * n))
    b00 = np.take(np.take(t, 0, axis=pos), 0, axis=n - 1 + pos)
    b11 = np.take(np.take(t, 1, axis=pos), 1, axis=n - 1 + pos)
    b01 = np.take(np.take(t, 0, axis=pos), 1, axis=n - 1 + pos)
    b10 = np.take(np.take(t, 1, axis=pos), 0, axis=n - 1 + pos)
    half = 2 ** (n - 1)
    if maxabs(b01) > tol or maxabs(b10) > tol or maxabs(b00 - b11) > tol:
        return None
    return ((b00 + b11) / 2).reshape(half, half)


def direct_reduce(u, n, tol=1e-8):
    """Strip qubits on which u acts as identity.

    Returns (reduced unitary, active positions).  A fully trivial input
    reduces to a 1x1 matrix carrying the global phase and an empty tuple.
    """
    u = np.asarray(u, dtype=complex)
    active = list(range(n))
    changed = True
    while changed and len(active) > 0:
        changed = False
        for pos in range(len(active)):
            reduced = _identity_factor(u, len(active), pos, tol)
            if reduced is not None:
                u = reduced
                active.pop(pos)
                changed = True
                break
    return u, tuple(active)


def _schmidt_cut(u, n, block):
    """Operator-Schmidt matricization of u across (block, complement)."""
    comp = [q for q in range(n) if q not in block]
    t = u.reshape([2] * (2 * n))
    order = list(block) + [n + q for q in block] + comp + [n + q for q in comp]
    r = t.transpose(order).reshape(4 ** len(block), 4 ** len(comp))
    return r, comp


def detect_product(u, n, tol=1e-7):
    """Finest partition of u into a tensor product over disjoint qubit sets.

    Tests every bipartition by the operator-Schmidt rank (singular values
    of the reshaped matrix) and recurses into the factors; returns None
    when only the trivial partition exists.
    """
    u = np.asarray(u, dtype=complex)
    if n < 2:
        return None
    # enumerate bipartitions uniquely via subsets containing position 0
    cuts = []
    for mask in range(0, 2 ** (n - 1)):
        block = tuple([0] + [q for q in range(1, n) if (mask >> (q - 1)) & 1])
        if len(block) < n:
            cuts.append(block)
    cuts.sort(key=lambda b: (len(b), b))

    for block in cuts:
        r, comp = _schmidt_cut(u, n, block)
        svals = np.linalg.svd(r, compute_uv=False)
        if svals.size > 1 and svals[1] > tol * max(1.0, svals[0]):
            continue
        uu, ss, vv = np.linalg.svd(r)
        da, db = 2 ** len(block), 2 ** len(comp)
        fa = uu[:, 0].reshape(da, da) * np.sqrt(da)
        fb = vv[0, :].conj().reshape(db, db) * (ss[0] / np.sqrt(da))
        if matcore.unitarity_defect(fa) > 100 * tol or matcore.unitarity_defect(fb) > 100 * tol:
            continue
        blocks, factors = [], []
        for sub_block, sub_factor in ((block, fa), (tuple(comp), fb)):
            inner = detect_product(sub_factor, len(sub_block), tol)
            if inner is None:
                blocks.append(sub_block)
                factors.append(sub_factor)
            else:
                for ib, ifac in zip(inner.blocks, inner.factors):
                    blocks.append(tuple(sub_block[i] for i in ib))
                    factors.append(ifac)
        order = np.argsort([b[0] for b in blocks])
        return PartitionReport(tuple(blocks[i] for i in order),
                               tuple(factors[i] for i in order))
    return None


@dataclass(frozen=True)
class ConditionalPeel:
    """A qubit whose coupling to the rest is purely diagonal.

    ``side='right'`` encodes u = (v_rest (x) I_q) . D . (w on q); 'left'
    encodes u = (w on q) . D . (v_rest (x) I_q).  ``diag_phases`` is the
    phase of D on the full 2^n basis.
    """

    qubit: int
    side: str
    v_rest: np.ndarray
    diag_phases: np.ndarray
    w_local: np.ndarray


def _qubit_blocks(u, n, pos):
    """2x2 grid of conditional blocks <a|_q u |b>_q."""
    t = u.reshape([2] * (2 * n))
    half = 2 ** (n - 1)
    return [[np.take(np.take(t, a, axis=pos), b, axis=n - 1 + pos).reshape(half, half)
             for b in (0, 1)] for a in (0, 1)]


def _polar_unitary(m):
    uu, _, vv = np.linalg.svd(m)
    return uu @ vv


def conditional_peel(u, n, tol=1e-9):
    """Find a qubit whose interaction with the rest is carried entirely by
    a native diagonal gate, up to one local rotation on that qubit.

    Diagonal gates cost a single native pulse regardless of the phase
    pattern, so peeling them before splitting keeps loosely connected
    circuits (the QFT family in particular) from exploding in the
    recursion.  Returns a :class:`ConditionalPeel` or None.
    """
    u = np.asarray(u, dtype=complex)
    if n < 2:
        return None
    half = 2 ** (n - 1)
    for pos in range(n):
        blocks = _qubit_blocks(u, n, pos)
        for side in ("right", "left"):
            # 'right': blocks of row a share the factor C_a = v d_a
            # 'left' : blocks of column b share the factor C_b = d_b v
            cs, w = [], np.zeros((2, 2), dtype=complex)
            ok = True
            for i in (0, 1):
                pair = [blocks[i][0], blocks[i][1]] if side == "right" else \
                    [blocks[0][i], blocks[1][i]]
                norms = [np.linalg.norm(b) for b in pair]
                ref = int(np.argmax(norms))
                scale = norms[ref] / np.sqrt(half)
                if scale < tol:
                    ok = False
                    break
                c = pair[ref] / scale
                if matcore.unitarity_defect(c) > 1e-6:
                    ok = False
                    break
                cs.append(c)
                for j in (0, 1):
                    coef = np.trace(c.conj().T @ pair[j]) / half
                    if maxabs(pair[j] - coef * c) > 1e-7:
                        ok = False
                        break
                    if side == "right":
                        w[i, j] = coef
                    else:
                        w[j, i] = coef
                if not ok:
                    break
            if not ok:
                continue
            g = cs[0].conj().T @ cs[1] if side == "right" else cs[1] @ cs[0].conj().T
            if not matcore.is_diagonal(g, 1e-7):
                continue
            if matcore.unitarity_defect(w) > 1e-6:
                continue
            w = _polar_unitary(w)
            v_rest = _polar_unitary(cs[0])
            d1 = np.angle(np.diag(g))
            full = np.zeros(2 ** n)
            for idx in range(2 ** n):
                if (idx >> (n - 1 - pos)) & 1:
                    rest = _drop_bit(idx, n, pos)
                    full[idx] = d1[rest]
            cand = _peel_matrix(v_rest, full, w, n, pos, side)
            if maxabs(cand - u) <= 1e-9:
                return ConditionalPeel(pos, side, v_rest, full, w)
    return None


def _drop_bit(idx, n, pos):
    high = idx >> (n - pos)
    low = idx & ((1 << (n - 1 - pos)) - 1)
    return (high << (n - 1 - pos)) | low


def _peel_matrix(v_rest, diag_phases, w, n, pos, side):
    rest = [q + 1 for q in range(n) if q != pos]
    v_full = matcore.embed_on_qubits(v_rest, rest, n)
    w_full = matcore.embed_on_qubits(w, [pos + 1], n)
    d_full = np.diag(np.exp(1j * diag_phases))
    return v_full @ d_full @ w_full if side == "right" else w_full @ d_full @ v_full


def _reduction_measure(u, n, tol=1e-8):
    """(active count, block sizes, peel flag) ordering used by the unwrapper."""
    reduced, active = direct_reduce(u, n, tol)
    sizes = (len(active),)
    peel = 1
    if len(active) >= 2:
        report = detect_product(reduced, len(active))
        if report is not None:
            sizes = tuple(sorted((len(b) for b in report.blocks), reverse=True))
        if conditional_peel(reduced, len(active)) is not None:
            peel = 0
    return (len(active), sizes, peel)


def _candidate_gates(n, max_k=None):
    """Known gates in the fixed deterministic search order."""
    max_k = n if max_k is None else max_k
    out = []
    for k in range(0, max_k + 1):
        zeta = np.pi / 2 ** k
        for kind in ("rx", "ry"):
            for sign in (1.0, -1.0):
                axis = (1, 0, 0) if kind == "rx" else (0, 1, 0)
                mat = matcore.rotation2(tuple(a * sign * zeta / 2 for a in axis))
                for q in range(n):
                    out.append((kind, sign * zeta, (q,), mat))
    if n >= 2:
        for name, base in (("cnot", matcore.CNOT), ("swap", matcore.SWAP)):
            for qa in range(n):
                for qb in range(n):
                    if qa == qb or (name == "swap" and qa > qb):
                        continue
                    out.append((name, 0.0, (qa, qb), base))
        for k in range(0, max_k + 1):
            phi = np.pi / 2 ** k
            for sign in (1.0, -1.0):
                mat = matcore.cphase(sign * phi)
                for qa in range(n):
                    for qb in range(qa + 1, n):
                        out.append(("cphase", sign * phi, (qa, qb), mat))
    return out


def unwrap_known(u, n, max_k=None, tol=1e-8):
    """Greedy unwrapping: multiply by known gates whenever doing so strictly
    shrinks the problem (fewer active qubits, or a finer product split).

    Returns (steps, residual).  The residual keeps the input dimension;
    callers re-run the reduction on it and emit the inverse steps.
    """
    u = np.asarray(u, dtype=complex)
    steps = []
    measure = _reduction_measure(u, n, tol)
    if measure < (n, (n,), 1):
        return steps, u  # already reducible without unwrapping
    candidates = _candidate_gates(n, max_k)
    improved = True
    while improved:
        improved = False
        for name, angle, qubits, mat in candidates:
            full = matcore.embed_on_qubits(mat, [q + 1 for q in qubits], n)
            for side in ("left", "right"):
                trial = full @ u if side == "left" else u @ full
                trial_measure = _reduction_measure(trial, n, tol)
                if trial_measure < measure:
                    steps.append(UnwrapStep(name, side, qubits, angle))
                    u = trial
                    measure = trial_measure
                    improved = True
                    break
            if improved:
                break
    return steps, u
