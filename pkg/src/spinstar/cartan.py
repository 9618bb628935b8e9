"""Recursive algebraic decomposition of multi-qubit unitaries into the
native gate set of a star-coupled spin register: single-qubit rotations
plus diagonal multi-qubit phase gates.

Both involution layers work at the group level.  Given a unitary block G
of the current recursion context, the first layer conjugates by sigma_z
on the last tensor factor and factors G = K_l * exp(h) * K_r with exp(h)
block-diagonal in x-rotations; the second layer conjugates by sigma_x and
peels a diagonal factor off each K, leaving unitaries that act trivially
on the last qubit so the recursion can descend.

Qubit 1 is the most significant tensor factor throughout; the "last"
qubit acted on by the involutions is the least significant one.
"""

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import heuristics, matcore
from .errors import DecompositionError, InvalidInputError
from .matcore import I2, SX, SZ, TOLS, kron, maxabs


# --------------------------------------------------------------------------
# Gate IR


@dataclass(frozen=True)
class LocalRotation:
    """exp(i (cx sx + cy sy + cz sz)) acting on one register qubit (1-based)."""

    qubit: int
    coeffs: tuple

    def matrix(self):
        return matcore.rotation2(self.coeffs)

    @property
    def angle(self):
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True)
class DiagonalPhase:
    """exp(i diag(phases)) on the listed qubits (ascending, 1-based)."""

    qubits: tuple
    phases: tuple

    def matrix(self):
        return np.diag(np.exp(1j * np.asarray(self.phases)))


def wrap_phases(phases):
    """Fold angles into the canonical interval (-pi, pi]."""
    p = np.mod(np.asarray(phases, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(p == -np.pi, np.pi, p)


def gate_matrix(gate, nqubits):
    """Realize a native gate on the full 2^nqubits register."""
    if isinstance(gate, LocalRotation):
        return matcore.embed_on_qubits(gate.matrix(), [gate.qubit], nqubits)
    return matcore.embed_on_qubits(gate.matrix(), list(gate.qubits), nqubits)


@dataclass
class GateSequence:
    """Ordered native gates; leftmost gate is applied last (matrix order)."""

    nqubits: int
    gates: list = field(default_factory=list)
    global_phase: float = 0.0

    def matrix(self):
        u = np.eye(2 ** self.nqubits, dtype=complex) * np.exp(1j * self.global_phase)
        for g in self.gates:
            u = u @ gate_matrix(g, self.nqubits)
        return u

    def census(self):
        """Counts {(kind, arity): count} of the gate list."""
        out = {}
        for g in self.gates:
            key = ("local", 1) if isinstance(g, LocalRotation) else ("diag", len(g.qubits))
            out[key] = out.get(key, 0) + 1
        return out

    def __len__(self):
        return len(self.gates)

    def to_json(self):
        def fmt(x):
            return float(f"{float(x):.17g}")

        payload = {
            "nqubits": self.nqubits,
            "global_phase": fmt(self.global_phase),
            "gates": [
                {"kind": "local", "qubit": g.qubit, "coeffs": [fmt(c) for c in g.coeffs]}
                if isinstance(g, LocalRotation)
                else {"kind": "diag", "qubits": list(g.qubits), "phases": [fmt(p) for p in g.phases]}
                for g in self.gates
            ],
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        gates = []
        for g in payload["gates"]:
            if g["kind"] == "local":
                gates.append(LocalRotation(int(g["qubit"]), tuple(float(c) for c in g["coeffs"])))
            elif g["kind"] == "diag":
                gates.append(DiagonalPhase(tuple(int(q) for q in g["qubits"]),
                                           tuple(float(p) for p in g["phases"])))
            else:
                raise InvalidInputError(f"unknown gate kind {g['kind']!r}")
        return cls(nqubits=int(payload["nqubits"]), gates=gates,
                   global_phase=float(payload.get("global_phase", 0.0)))


# --------------------------------------------------------------------------
# Involutions and Cartan pairs


def sigma_last(nqubits, pauli):
    """1 x ... x 1 x sigma acting on the last (least significant) qubit."""
    return kron(np.eye(2 ** (nqubits - 1), dtype=complex), pauli)


def involution_apply(x, kind):
    """theta(x) = sigma x sigma with sigma = 1 (x) sigma_z ('z') or sigma_x ('x')."""
    n = matcore.nqubits_of(x)
    if kind == "z":
        # Conjugation by 1 (x) sigma_z flips the sign of the odd/even
        # off-diagonal 2x2 sub-blocks; do it by index masks, no matmul.
        out = x.copy()
        out[0::2, 1::2] *= -1
        out[1::2, 0::2] *= -1
        return out
    if kind == "x":
        out = x.copy().reshape(2 ** (n - 1), 2, 2 ** (n - 1), 2)
        out = out[:, ::-1, :, ::-1]
        return np.ascontiguousarray(out.reshape(x.shape))
    raise InvalidInputError(f"unknown involution kind {kind!r}")


def cartan_split(g, kind):
    """Split a skew-Hermitian g into (k, m) with theta(k)=k, theta(m)=-m."""
    matcore.check_skew(g)
    tg = involution_apply(g, kind)
    return (g + tg) / 2, (g - tg) / 2


def m_squared(g_mat, kind):
    """Group-level M^2 = theta(G^dag) G."""
    matcore.check_unitary(g_mat, 1e-8)
    return involution_apply(g_mat.conj().T, kind) @ g_mat


# --------------------------------------------------------------------------
# Paired eigenbasis construction (the constructive core of both layers)


def _cluster_eigenphases(vals, tol=TOLS.phase_cluster):
    """Group sorted unit eigenvalues into clusters of near-equal phase.

    Returns a list of (representative value, index array); handles the
    branch seam by merging the first and last cluster when they touch
    modulo 2 pi.
    """
    phases = np.angle(vals)
    clusters = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or phases[i] - phases[i - 1] > tol:
            idx = np.arange(start, i)
            rep = np.mean(vals[idx])
            clusters.append([rep / abs(rep), idx])
            start = i
    if len(clusters) > 1 and (phases[0] + 2 * np.pi) - phases[-1] <= tol:
        rep = clusters[0][0]
        clusters[0][1] = np.concatenate([clusters[-1][1], clusters[0][1]])
        clusters.pop()
    return [(rep, idx) for rep, idx in clusters]


def _orthonormal_range(cols, tol=1e-9):
    """Canonical orthonormal basis of the column span.

    Degenerate eigenspaces leave the basis completely free; an arbitrary
    (e.g. LAPACK-provided) choice smears any tensor/diagonal structure of
    the input across the K-factors and inflates the recursion.  Aligning
    the basis with the computational axes (column-pivoted QR on the span
    projector, phases fixed on each column's largest entry) keeps
    structured inputs structured and is deterministic.
    """
    if cols.shape[1] == 0:
        return cols
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    rank = int(np.sum(s > tol * max(1.0, s[0] if s.size else 1.0)))
    basis = u[:, :rank]
    if rank == 0:
        return basis
    import scipy.linalg as _sla
    proj = basis @ basis.conj().T
    q, _, _ = _sla.qr(proj, pivoting=True)
    out = q[:, :rank]
    # keep the columns inside the span exactly (QR of the projector can
    # leak tiny components); re-project and re-orthonormalize
    out = basis @ (basis.conj().T @ out)
    out, _ = np.linalg.qr(out)
    for j in range(out.shape[1]):
        k = int(np.argmax(np.abs(out[:, j])))
        ph = out[k, j] / abs(out[k, j])
        out[:, j] = out[:, j] / ph
    return out


def _complete_even_basis(space_cols, have_cols, projector, tol=1e-9):
    """Extend ``have_cols`` to an orthonormal basis of projector @ span(space).

    Used when the per-eigenvector route could not supply enough compatible
    vectors: the missing directions are recovered from the projected
    eigenspace itself, which keeps every invariance property intact.
    """
    target = _orthonormal_range(projector @ space_cols, tol)
    out = [c for c in have_cols]
    for j in range(target.shape[1]):
        v = target[:, j].copy()
        for c in out:
            v -= c * (c.conj() @ v)
        nrm = np.linalg.norm(v)
        if nrm > 1e-6:
            out.append(v / nrm)
    return out, target.shape[1]


def orthogonality_filter(nonsingular_vecs, sigma, dim, singular_pairs, needed,
                         eps=TOLS.basis_orthogonality, max_subset=8):
    """Select candidate eigenvectors whose sigma-transformed basis vectors
    stay mutually orthogonal.

    Candidates incompatible with an already-committed singular pair p
    (|v^dag sigma p| > eps) are discarded first; the survivors' pairwise
    kernel K = V^dag sigma V then drives a deterministic lexicographic
    combination search for a subset of size ``needed`` with all pairwise
    entries below eps.  Returns the selected vectors (possibly fewer than
    ``needed`` when no full subset exists).
    """
    if needed <= 0:
        return []
    live = []
    for v in nonsingular_vecs:
        if all(abs(np.vdot(p, sigma @ v)) <= eps for p in singular_pairs):
            live.append(v)
    if not live:
        return []
    v_mat = np.column_stack(live)
    kernel = np.abs(v_mat.conj().T @ sigma @ v_mat)
    np.fill_diagonal(kernel, 0.0)
    compat = kernel <= eps

    best = []

    def extend(chosen, start):
        nonlocal best
        if len(chosen) > len(best):
            best = list(chosen)
        if len(chosen) == min(needed, max_subset):
            return True
        for j in range(start, len(live)):
            if all(compat[j, c] for c in chosen):
                if extend(chosen + [j], j + 1):
                    return True
        return False

    extend([], 0)
    return [live[j] for j in best[:needed]]


def _pairs_real_cluster(cols, kind, nqubits, eps=TOLS.basis_orthogonality):
    """Paired basis vectors for a +1/-1 eigenspace.

    Eigenvectors exactly even/odd under sigma_{N,z} are committed as
    singular pairs; remaining candidates pass through the orthogonality
    filter; any shortfall is completed from the projected eigenspace.
    Returns (evens, odds) lists of equal length.
    """
    sz = sigma_last(nqubits, SZ)
    p_even = (np.eye(2 ** nqubits) + sz) / 2
    p_odd = (np.eye(2 ** nqubits) - sz) / 2

    sing_even, sing_odd, nonsing = [], [], []
    for j in range(cols.shape[1]):
        v = cols[:, j]
        odd_part = np.linalg.norm(p_odd @ v)
        even_part = np.linalg.norm(p_even @ v)
        if odd_part <= eps:
            sing_even.append(v)
        elif even_part <= eps:
            sing_odd.append(v)
        else:
            nonsing.append(v)

    evens = [v / np.linalg.norm(v) for v in sing_even]
    committed = list(evens)
    if kind == "z":
        odds = [v / np.linalg.norm(v) for v in sing_odd]
        committed += odds
    else:
        # Under the x-type involution the odd partner is sigma_x q1, so odd
        # singular vectors contribute their (even) sigma_x image instead.
        sx = sigma_last(nqubits, SX)
        for v in sing_odd:
            w = sx @ v
            for c in evens:
                w = w - c * (c.conj() @ w)
            nrm = np.linalg.norm(w)
            if nrm > eps:
                evens.append(w / nrm)
        committed = list(evens)
        odds = None

    need = max(0, (cols.shape[1] - len(sing_even) - len(sing_odd)) // 2)
    picked = orthogonality_filter(nonsing, sz, 2 ** nqubits, committed, need, eps)
    for v in picked:
        evens.append(_normalized(p_even @ v))
        if kind == "z":
            odds.append(_normalized(p_odd @ v))

    evens, r_even = _complete_even_basis(cols, evens, p_even)
    if kind == "z":
        odds, r_odd = _complete_even_basis(cols, odds, p_odd)
        if len(evens) != len(odds) or len(evens) + len(odds) != cols.shape[1]:
            raise DecompositionError(
                f"unbalanced even/odd split in a real eigenspace: "
                f"{len(evens)} even vs {len(odds)} odd of {cols.shape[1]}")
    else:
        sx = sigma_last(nqubits, SX)
        odds = [sx @ v for v in evens]
        if 2 * len(evens) != cols.shape[1]:
            raise DecompositionError(
                f"sigma_x pairing does not cover a real eigenspace: "
                f"{len(evens)} pairs for dimension {cols.shape[1]}")
    return evens, odds


def _normalized(v):
    nrm = np.linalg.norm(v)
    if nrm < 1e-12:
        raise DecompositionError("attempted to normalize a null pair vector")
    return v / nrm


def build_paired_basis(eigvals, eigvecs, kind):
    """Reorganize a unitary eigenbasis into involution-compatible pairs.

    For ``kind='x'`` (the K-layer of the algorithm) every pair satisfies
    sigma_{N,z} q1 = q1, sigma_{N,z} q2 = -q2, sigma_x q1 = q2, and the
    conjugated matrix becomes 2x2 blocks exp(i alpha sigma_z).  For
    ``kind='z'`` (the first layer, where eigenvalues pair with their
    conjugates across eigenspaces) the sigma_z relations hold and the
    blocks become exp(i alpha sigma_x).

    Returns (Q', alphas): Q' columns are [q1_0, q2_0, q1_1, q2_1, ...] and
    alphas[j] is the block angle of pair j.
    """
    dim = eigvecs.shape[0]
    nqubits = matcore.check_dim(dim)
    sz = sigma_last(nqubits, SZ)
    sx = sigma_last(nqubits, SX)
    clusters = _cluster_eigenphases(eigvals)

    pairs = []  # (alpha, q1, q2)
    ptol = TOLS.conjugate_pairing

    def cluster_kind(rep):
        if abs(rep - 1.0) <= ptol:
            return "one"
        if abs(rep + 1.0) <= ptol:
            return "minus"
        return "complex"

    if kind == "z":
        used = set()
        for ci, (rep, idx) in enumerate(clusters):
            if ci in used:
                continue
            ckind = cluster_kind(rep)
            cols = eigvecs[:, idx]
            if ckind in ("one", "minus"):
                used.add(ci)
                alpha = 0.0 if ckind == "one" else np.pi
                evens, odds = _pairs_real_cluster(cols, "z", nqubits)
                for q1, q2 in zip(evens, odds):
                    pairs.append((alpha, q1, q2))
            else:
                partner = None
                for cj, (rep2, _) in enumerate(clusters):
                    if cj != ci and cj not in used and abs(rep2 - np.conj(rep)) <= ptol:
                        partner = cj
                        break
                if partner is None:
                    raise DecompositionError(
                        f"no conjugate partner for eigenvalue {rep:.12g} "
                        f"within tolerance {ptol:g}")
                used.update({ci, partner})
                if np.angle(rep) < 0:
                    rep, idx = clusters[partner][0], clusters[partner][1]
                    cols = eigvecs[:, idx]
                alpha = float(np.angle(rep))
                basis = _orthonormal_range(cols) if cols.shape[1] > 1 else cols
                for j in range(basis.shape[1]):
                    p = basis[:, j]
                    pairs.append((alpha, _normalized(p + sz @ p), _normalized(p - sz @ p)))
    elif kind == "x":
        p_even = (np.eye(dim) + sz) / 2
        for rep, idx in clusters:
            ckind = cluster_kind(rep)
            cols = eigvecs[:, idx]
            if ckind in ("one", "minus"):
                alpha = 0.0 if ckind == "one" else np.pi
                evens, odds = _pairs_real_cluster(cols, "x", nqubits)
                for q1, q2 in zip(evens, odds):
                    pairs.append((alpha, q1, q2))
            else:
                # The eigenspace is sigma_z-invariant here; its even part
                # supplies q1 and sigma_x q1 lands in the conjugate space.
                alpha = float(np.angle(rep))
                evens = _orthonormal_range(p_even @ cols)
                for j in range(evens.shape[1]):
                    q1 = evens[:, j]
                    pairs.append((alpha, q1, sx @ q1))
    else:
        raise InvalidInputError(f"unknown involution kind {kind!r}")

    if 2 * len(pairs) != dim:
        raise DecompositionError(f"paired basis incomplete: {len(pairs)} pairs for dim {dim}")

    pairs.sort(key=lambda t: t[0])
    q_prime = np.empty((dim, dim), dtype=complex)
    alphas = np.empty(len(pairs))
    for j, (alpha, q1, q2) in enumerate(pairs):
        q_prime[:, 2 * j] = q1
        q_prime[:, 2 * j + 1] = q2
        alphas[j] = alpha
    defect = matcore.unitarity_defect(q_prime)
    if defect > TOLS.basis_orthogonality:
        raise DecompositionError(f"paired basis not orthonormal (defect {defect:.2e})")
    return q_prime, alphas


def _block_diag_pairs(alphas, pauli_kind):
    """blockdiag over pairs of exp(i alpha sigma_x) or, for 'z', the diagonal
    with entries (e^{i alpha}, e^{-i alpha})."""
    blocks = []
    for a in alphas:
        if pauli_kind == "x":
            blocks.append(np.cos(a) * I2 + 1j * np.sin(a) * SX)
        else:
            blocks.append(np.diag([np.exp(1j * a), np.exp(-1j * a)]))
    out = np.zeros((2 * len(alphas), 2 * len(alphas)), dtype=complex)
    for j, b in enumerate(blocks):
        out[2 * j:2 * j + 2, 2 * j:2 * j + 2] = b
    return out


def rotate_to_subalgebra(m2, nqubits):
    """First-layer conjugation: find K1 and x-rotation angles zeta with
    M^2 = K1 blockdiag(exp(i zeta_j sigma_x)) K1^dag and theta_z(K1) = K1.

    Returns (K1, zetas); exp(h) = sum_j |j><j| (x) R_x(zeta_j) is then
    K1^dag-conjugated back by the caller.
    """
    if maxabs(involution_apply(m2, "z") - m2.conj().T) > 1e-7:
        raise InvalidInputError("input does not satisfy theta_z(M^2) = (M^2)^dag")
    vals, vecs = matcore.eig_unitary(m2, tol=1e-7)
    k1, alphas = build_paired_basis(vals, vecs, "z")
    recon = k1 @ _block_diag_pairs(alphas, "x") @ k1.conj().T
    if maxabs(recon - m2) > 1e-6:
        raise DecompositionError(
            f"first-layer pairing failed to reproduce M^2 (err {maxabs(recon - m2):.2e})")
    return k1, alphas


def subalgebra_element(zetas):
    """h = i sum_j (zeta_j / 2) |j><j| (x) sigma_x as a dense skew matrix."""
    dim = 2 * len(zetas)
    h = np.zeros((dim, dim), dtype=complex)
    for j, z in enumerate(zetas):
        h[2 * j:2 * j + 2, 2 * j:2 * j + 2] = 1j * (z / 2) * SX
    return h


def _collapse_last(mat, tol=1e-7, what="factor"):
    """Extract A from mat = A (x) I_2; raises when the structure is absent."""
    a = (mat[0::2, 0::2] + mat[1::2, 1::2]) / 2
    defect = maxabs(mat - np.kron(a, I2))
    if defect > tol:
        raise DecompositionError(f"{what} does not act trivially on the last qubit "
                                 f"(defect {defect:.2e})")
    return a


def decompose_k_layer(k_mat):
    """Factor a theta_z-invariant K as K = (A x I) Q' exp(h1) Q'^dag with
    Q' = q (x) I and h1 in i span(|j><j| x sigma_z).

    Returns (a, q, alphas): A and q are SU(2^{N-1})-level matrices ready
    for recursion, exp(h1) is the diagonal with pairwise phases
    (alpha_j/2, -alpha_j/2).
    """
    n = matcore.nqubits_of(k_mat)
    if maxabs(involution_apply(k_mat, "z") - k_mat) > 1e-7:
        raise InvalidInputError("K is not invariant under the z-type involution")
    m12 = m_squared(k_mat, "x")
    if maxabs(involution_apply(m12, "z") - m12) > 1e-6:
        raise DecompositionError("M^2 of the K-layer does not commute with sigma_{N,z}")
    vals, vecs = matcore.eig_unitary(m12, tol=1e-7)
    q_prime, alphas = build_paired_basis(vals, vecs, "x")
    d_half = np.exp(1j * np.column_stack([alphas / 2, -alphas / 2]).reshape(-1))
    m = (q_prime * d_half) @ q_prime.conj().T
    k_local = k_mat @ m.conj().T
    a = _collapse_last(k_local, what="K-layer local factor")
    q = _collapse_last(q_prime, what="K-layer similarity")
    return a, q, alphas


def k_layer_factors(k_mat):
    """Spec-level view of :func:`decompose_k_layer`.

    Returns (k_factor, u, h1, v) with K = k_factor @ u @ exp(h1) @ v, where
    k_factor and u act trivially on the last qubit and h1 is diagonal.
    """
    a, q, alphas = decompose_k_layer(k_mat)
    h1 = np.diag(1j * np.column_stack([alphas / 2, -alphas / 2]).reshape(-1))
    u = np.kron(q, I2)
    return np.kron(a, I2), u, h1, u.conj().T


# --------------------------------------------------------------------------
# The recursion


@dataclass(frozen=True)
class DecomposeOptions:
    heuristics: bool = True
    su4_variant: str = "main"      # "main" | "canonical"
    lower_z: bool = True           # rewrite pure-z rotations into y-x-y form
    merge_diagonals: bool = True
    cull_tol: float = 1e-11        # identity / diagonal detection threshold
    unwrap: bool = True            # known-gate unwrapping (needs heuristics)


def _emit_local(u2, qubit, opts, out):
    coeffs, phase = matcore.rotation_coeffs(u2)
    cnorm = np.linalg.norm(coeffs)
    if cnorm <= opts.cull_tol:
        return phase
    cx, cy, cz = coeffs
    if opts.lower_z and abs(cx) <= opts.cull_tol and abs(cy) <= opts.cull_tol:
        # R_z(2 cz) = R_y(pi/2) R_x(2 cz) R_y(-pi/2)
        out.append(LocalRotation(qubit, (0.0, np.pi / 4, 0.0)))
        out.append(LocalRotation(qubit, (cz, 0.0, 0.0)))
        out.append(LocalRotation(qubit, (0.0, -np.pi / 4, 0.0)))
        return phase
    out.append(LocalRotation(qubit, (cx, cy, cz)))
    return phase


def _emit_diagonal(u, qubits, out):
    phases = wrap_phases(np.angle(np.diag(u)))
    out.append(DiagonalPhase(tuple(qubits), tuple(float(p) for p in phases)))
    return 0.0


def _decompose(u, qubits, opts, out):
    """Append native gates realizing u on the listed qubits; returns the
    global phase left over (product of emitted gates times e^{i phase} = u)."""
    dim = u.shape[0]
    if dim == 1:
        return float(np.angle(u[0, 0]))
    n = len(qubits)

    phi = matcore.phase_of_identity(u, opts.cull_tol)
    if phi is not None:
        return phi

    if n == 1:
        return _emit_local(u, qubits[0], opts, out)

    if matcore.is_diagonal(u, opts.cull_tol):
        return _emit_diagonal(u, qubits, out)

    if opts.heuristics:
        reduced, active = heuristics.direct_reduce(u, n)
        if len(active) < n:
            return _decompose(reduced, [qubits[i] for i in active], opts, out)
        report = heuristics.detect_product(u, n)
        if report is not None:
            phase = 0.0
            for block, factor in zip(report.blocks, report.factors):
                phase += _decompose(factor, [qubits[i] for i in block], opts, out)
            return phase
        peel = heuristics.conditional_peel(u, n)
        if peel is not None:
            return _emit_peel(peel, qubits, opts, out)
        if opts.unwrap:
            phase = _try_unwrap(u, qubits, opts, out)
            if phase is not None:
                return phase

    if n == 2 and opts.su4_variant == "canonical":
        return _su4_canonical(u, qubits, opts, out)

    return _cartan_layer(u, qubits, opts, out)


def _emit_diag_minimal(phases, qubits, opts, out):
    """Emit a diagonal gate on the qubits its phases actually depend on."""
    phases = np.asarray(phases, dtype=float)
    n = len(qubits)
    t = phases.reshape([2] * n)
    keep = []
    for pos in range(n):
        if maxabs(np.take(t, 1, axis=pos) - np.take(t, 0, axis=pos)) > opts.cull_tol:
            keep.append(pos)
    for pos in reversed(range(n)):
        if pos not in keep:
            t = np.take(t, 0, axis=pos)
    if not keep:
        return float(t)  # constant diagonal: pure global phase
    sub = wrap_phases(t.reshape(-1))
    out.append(DiagonalPhase(tuple(qubits[p] for p in keep),
                             tuple(float(p) for p in sub)))
    return 0.0


def _emit_peel(peel, qubits, opts, out):
    rest = [q for i, q in enumerate(qubits) if i != peel.qubit]
    phase = 0.0
    if peel.side == "right":
        phase += _decompose(peel.v_rest, rest, opts, out)
        phase += _emit_diag_minimal(peel.diag_phases, qubits, opts, out)
        phase += _emit_local(peel.w_local, qubits[peel.qubit], opts, out)
    else:
        phase += _emit_local(peel.w_local, qubits[peel.qubit], opts, out)
        phase += _emit_diag_minimal(peel.diag_phases, qubits, opts, out)
        phase += _decompose(peel.v_rest, rest, opts, out)
    return phase


def _try_unwrap(u, qubits, opts, out):
    steps, residual = heuristics.unwrap_known(u, len(qubits))
    if not steps:
        return None
    # u = (product of inverse left steps, innermost last) residual (inverse
    # right steps, innermost first); emit accordingly.
    left, right = [], []
    for s in steps:
        (left if s.side == "left" else right).append(s)
    phase = 0.0
    for s in left:  # u = g1^dag g2^dag ... residual: earlier steps leftmost
        phase += _emit_unwrap_inverse(s, qubits, opts, out)
    # the residual is reducible by construction, so the recursive call
    # shrinks the context before any further unwrapping can trigger
    phase += _decompose(residual, qubits, opts, out)
    for s in reversed(right):
        phase += _emit_unwrap_inverse(s, qubits, opts, out)
    return phase


def _emit_unwrap_inverse(step, qubits, opts, out):
    """Emit the native realization of the inverse of an unwrap step."""
    mapped = [qubits[i] for i in step.qubits]
    if step.gate in ("rx", "ry"):
        axis = (1.0, 0.0, 0.0) if step.gate == "rx" else (0.0, 1.0, 0.0)
        c = -step.angle / 2.0
        out.append(LocalRotation(mapped[0], tuple(a * c for a in axis)))
        return 0.0
    if step.gate == "cphase":
        phases = wrap_phases([0.0, 0.0, 0.0, -step.angle])
        out.append(DiagonalPhase(tuple(sorted(mapped)), tuple(float(p) for p in phases)))
        return 0.0
    if step.gate in ("cnot", "swap"):
        base = matcore.CNOT if step.gate == "cnot" else matcore.SWAP
        inner = replace(opts, heuristics=False)
        return _decompose(base.conj().T, mapped, inner, out)
    raise InvalidInputError(f"unknown unwrap gate {step.gate!r}")


def _cartan_layer(u, qubits, opts, out):
    m2 = m_squared(u, "z")
    k1, zetas = rotate_to_subalgebra(m2, len(qubits))
    m = k1 @ _block_diag_pairs_half_x(zetas) @ k1.conj().T
    k = u @ m.conj().T
    k_left = k @ k1
    k_right = k1.conj().T

    phase = _decompose_k_part(k_left, qubits, opts, out)
    # exp(h) = (1 x R_y(-pi/2)) diag(R_z(zeta_j)) (1 x R_y(pi/2))
    out.append(LocalRotation(qubits[-1], (0.0, -np.pi / 4, 0.0)))
    dphases = wrap_phases(np.column_stack([zetas / 2, -zetas / 2]).reshape(-1))
    out.append(DiagonalPhase(tuple(qubits), tuple(float(p) for p in dphases)))
    out.append(LocalRotation(qubits[-1], (0.0, np.pi / 4, 0.0)))
    phase += _decompose_k_part(k_right, qubits, opts, out)
    return phase


def _block_diag_pairs_half_x(zetas):
    """blockdiag of R_x(zeta_j) = exp(i zeta_j/2 sigma_x)."""
    return _block_diag_pairs(np.asarray(zetas) / 2, "x")


def _decompose_k_part(k_mat, qubits, opts, out):
    """Emit gates for a theta_z-invariant block of the current layer."""
    phi = matcore.phase_of_identity(k_mat, opts.cull_tol)
    if phi is not None:
        return phi
    if matcore.is_diagonal(k_mat, opts.cull_tol):
        return _emit_diagonal(k_mat, qubits, out)
    try:
        a = _collapse_last(k_mat, tol=opts.cull_tol)
    except DecompositionError:
        a = None
    if a is not None:
        return _decompose(a, qubits[:-1], opts, out)

    a, q, alphas = decompose_k_layer(k_mat)
    phase = _decompose(a @ q, qubits[:-1], opts, out)
    if maxabs(alphas) > opts.cull_tol:
        dphases = wrap_phases(np.column_stack([alphas / 2, -alphas / 2]).reshape(-1))
        out.append(DiagonalPhase(tuple(qubits), tuple(float(p) for p in dphases)))
    phase += _decompose(q.conj().T, qubits[:-1], opts, out)
    return phase


# --------------------------------------------------------------------------
# SU(4) canonical variant (magic-basis KAK with Weyl-chamber reduction)

_MAGIC = np.array([[1, 0, 0, 1j],
                   [0, 1j, 1, 0],
                   [0, 1j, -1, 0],
                   [1, 0, 0, -1j]], dtype=complex) / np.sqrt(2)

_XX = kron(SX, SX)
_YY = kron(matcore.SY, matcore.SY)
_ZZ = kron(SZ, SZ)


def _joint_symmetric_eig(c, s, tol=1e-8):
    """Common orthogonal eigenbasis of two commuting real symmetric matrices."""
    w, o = np.linalg.eigh(c)
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and w[j] - w[i] <= tol * max(1.0, abs(w[i])):
            j += 1
        if j - i > 1:
            block = o[:, i:j].T @ s @ o[:, i:j]
            _, o2 = np.linalg.eigh(0.5 * (block + block.T))
            o[:, i:j] = o[:, i:j] @ o2
        i = j
    return o


def _kron_factor_2x2(mat4):
    """Split a 4x4 kron product into (phase, a, b) with det(a)=det(b)=1."""
    a_idx, b_idx = max(((i, j) for i in range(4) for j in range(4)),
                       key=lambda t: abs(mat4[t]))
    f1 = np.zeros((2, 2), dtype=complex)
    f2 = np.zeros((2, 2), dtype=complex)
    for i in range(2):
        for j in range(2):
            f1[(a_idx >> 1) ^ i, (b_idx >> 1) ^ j] = mat4[a_idx ^ (i << 1), b_idx ^ (j << 1)]
            f2[(a_idx & 1) ^ i, (b_idx & 1) ^ j] = mat4[a_idx ^ i, b_idx ^ j]
    d1 = np.sqrt(np.linalg.det(f1)) or 1.0
    d2 = np.sqrt(np.linalg.det(f2)) or 1.0
    f1, f2 = f1 / d1, f2 / d2
    g = mat4[a_idx, b_idx] / (f1[a_idx >> 1, b_idx >> 1] * f2[a_idx & 1, b_idx & 1])
    defect = maxabs(mat4 - g * kron(f1, f2))
    if defect > 1e-7:
        raise DecompositionError(f"matrix is not a kron product (defect {defect:.2e})")
    return g, f1, f2


def interaction_coefficients(u4):
    """KAK data of a two-qubit unitary: (phase, (a1, a2), (a, b, c), (b1, b2))
    with u4 = e^{i phase} (a1 x a2) exp(i(a XX + b YY + c ZZ)) (b1 x b2)
    and (a, b, c) canonicalized into pi/4 >= a >= b >= |c|."""
    u4 = np.asarray(u4, dtype=complex)
    if u4.shape != (4, 4):
        raise InvalidInputError("interaction_coefficients expects a 4x4 unitary")
    su, phase0 = matcore.project_su(u4)
    m = _MAGIC.conj().T @ su @ _MAGIC
    if matcore.is_diagonal(m, 1e-11):
        # already an XX/YY/ZZ exponential (SWAP, Heisenberg-type gates):
        # no similarity transform needed, outer factors stay trivial
        theta = np.angle(np.diag(m))
        left = np.eye(4)
        right = np.eye(4)
    else:
        p = m.T @ m
        o = _joint_symmetric_eig(np.real(p), np.imag(p))
        if np.linalg.det(o) < 0:
            o[:, 0] *= -1
        pv = np.diag(o.T @ np.real(p) @ o) + 1j * np.diag(o.T @ np.imag(p) @ o)
        theta = np.angle(pv) / 2.0
        right = o
        left = m @ right @ np.diag(np.exp(-1j * theta))
        if maxabs(np.imag(left)) > 1e-6:
            raise DecompositionError("left factor of the magic-basis split is not real")
        left = np.real(left)
        if np.linalg.det(left) < 0:
            left[:, 0] *= -1
            theta = theta.copy()
            theta[0] += np.pi
    # m = left diag(e^{i theta}) right^T
    w = np.sum(theta) / 4
    a = (theta[0] + theta[1] - theta[2] - theta[3]) / 4
    b = (-theta[0] + theta[1] - theta[2] + theta[3]) / 4
    c = (theta[0] - theta[1] - theta[2] + theta[3]) / 4
    ka = _MAGIC @ left @ _MAGIC.conj().T
    kb = _MAGIC @ right.T @ _MAGIC.conj().T
    g1, a1, a2 = _kron_factor_2x2(ka)
    g2, b1, b2 = _kron_factor_2x2(kb)
    phase = phase0 + w + np.angle(g1) + np.angle(g2)
    coeffs, locals_ = _canonicalize_weyl((a, b, c))
    (l1, l2), (r1, r2), extra = locals_
    return (phase + extra,
            (a1 @ l1, a2 @ l2),
            coeffs,
            (r1 @ b1, r2 @ b2))


def _canonicalize_weyl(v):
    """Reduce interaction coefficients into the chamber pi/4 >= a >= b >= |c|.

    Returns ((a, b, c), ((l1, l2), (r1, r2), phase)) such that
    exp(i(v . P)) = e^{i phase} (l1 x l2) exp(i(a XX + b YY + c ZZ)) (r1 x r2).
    """
    v = list(v)
    l1 = l2 = r1 = r2 = np.eye(2, dtype=complex)
    phase = 0.0
    paulis = [SX, matcore.SY, SZ]
    # single-qubit conjugators: swapper[k] exchanges the two axes != k
    swappers = [matcore.rx(np.pi / 2), matcore.ry(np.pi / 2), matcore.rz(np.pi / 2)]

    def shift(k, step):
        nonlocal phase, r1, r2
        v[k] += step * np.pi / 2
        # exp(i v P) = exp(i (v + step pi/2) P) (exp(-i pi/2 P))^step; exp(-i pi/2 P) = -i P
        phase += -step * np.pi / 2
        if step % 2:
            r1 = paulis[k] @ r1
            r2 = paulis[k] @ r2
        elif step % 4:
            phase += np.pi  # (-iP)^2 = -1

    def swap(k1, k2):
        nonlocal l1, l2, r1, r2
        v[k1], v[k2] = v[k2], v[k1]
        s = swappers[3 - k1 - k2]
        l1, l2 = l1 @ s.conj().T, l2 @ s.conj().T
        r1, r2 = s @ r1, s @ r2

    def negate(k1, k2):
        nonlocal l1, r1
        v[k1] *= -1
        v[k2] *= -1
        s = paulis[3 - k1 - k2]
        l1 = l1 @ s
        r1 = s @ r1

    def canonical_shift(k):
        while v[k] <= -np.pi / 4:
            shift(k, 1)
        while v[k] > np.pi / 4:
            shift(k, -1)

    def sort_abs():
        if abs(v[0]) < abs(v[1]):
            swap(0, 1)
        if abs(v[1]) < abs(v[2]):
            swap(1, 2)
        if abs(v[0]) < abs(v[1]):
            swap(0, 1)

    for k in range(3):
        canonical_shift(k)
    sort_abs()
    if v[0] < 0:
        negate(0, 2)
    if v[1] < 0:
        negate(1, 2)
    canonical_shift(2)
    if v[0] > np.pi / 4 - 1e-10 and v[2] < 0:
        shift(0, -1)
        negate(0, 2)
    return tuple(v), ((l1, l2), (r1, r2), phase)


def _su4_canonical(u4, qubits, opts, out):
    phase, (a1, a2), (ca, cb, cc), (b1, b2) = interaction_coefficients(u4)
    qa, qb = qubits
    phase += _emit_local(a1, qa, opts, out)
    phase += _emit_local(a2, qb, opts, out)

    def zz_diag(coef):
        out.append(DiagonalPhase((qa, qb), tuple(wrap_phases([coef, -coef, -coef, coef]))))

    if abs(ca) > opts.cull_tol:
        out.append(LocalRotation(qa, (0.0, -np.pi / 4, 0.0)))
        out.append(LocalRotation(qb, (0.0, -np.pi / 4, 0.0)))
        zz_diag(ca)
        out.append(LocalRotation(qa, (0.0, np.pi / 4, 0.0)))
        out.append(LocalRotation(qb, (0.0, np.pi / 4, 0.0)))
    if abs(cb) > opts.cull_tol:
        out.append(LocalRotation(qa, (np.pi / 4, 0.0, 0.0)))
        out.append(LocalRotation(qb, (np.pi / 4, 0.0, 0.0)))
        zz_diag(cb)
        out.append(LocalRotation(qa, (-np.pi / 4, 0.0, 0.0)))
        out.append(LocalRotation(qb, (-np.pi / 4, 0.0, 0.0)))
    if abs(cc) > opts.cull_tol:
        zz_diag(cc)
    phase += _emit_local(b1, qa, opts, out)
    phase += _emit_local(b2, qb, opts, out)
    return phase


def su4_canonical_decompose(u4, qubits=(1, 2), opts=None):
    """Canonical two-qubit decomposition lowered to the native gate set."""
    opts = opts or DecomposeOptions(su4_variant="canonical")
    out = []
    phase = _su4_canonical(np.asarray(u4, dtype=complex), list(qubits), opts, out)
    seq = GateSequence(nqubits=max(qubits), gates=out, global_phase=phase)
    return _postprocess(seq, opts)


# --------------------------------------------------------------------------
# Entry point and peephole passes


def recursive_decompose(u, opts=None):
    """Decompose a 2^n unitary into native gates (product order, leftmost last).

    The determinant phase is projected out first and recorded on the
    returned sequence's ``global_phase`` together with phases collected
    from the recursion, so that seq.matrix() reproduces u exactly.
    """
    u = np.asarray(u, dtype=complex)
    n = matcore.nqubits_of(u)
    if n > 7:
        raise InvalidInputError("register sizes beyond 7 qubits are out of scope")
    matcore.check_unitary(u, 1e-8)
    opts = opts or DecomposeOptions()
    su, phase0 = matcore.project_su(u)
    out = []
    phase = _decompose(su, list(range(1, n + 1)), opts, out)
    seq = GateSequence(nqubits=n, gates=out, global_phase=phase0 + phase)
    return _postprocess(seq, opts)


def _postprocess(seq, opts):
    gates = [g for g in seq.gates if not _is_identity_gate(g, opts.cull_tol)]
    phase = seq.global_phase
    while True:
        before = len(gates)
        if opts.merge_diagonals:
            gates = _merge_diagonals(gates, opts)
        gates, dphase = _cancel_inverse_locals(gates, opts)
        phase += dphase
        if len(gates) == before:
            break
    pruned = []
    for g in gates:
        if isinstance(g, DiagonalPhase):
            ph = np.asarray(g.phases)
            if np.ptp(ph) <= opts.cull_tol:  # constant diagonal = global phase
                phase += float(np.mean(ph))
                continue
        pruned.append(g)
    return GateSequence(seq.nqubits, pruned, float(wrap_phases([phase])[0]))


def _cancel_inverse_locals(gates, opts):
    """Drop adjacent same-qubit rotation pairs whose product is the identity
    up to phase.  General rotation pairs are kept separate (pure-axis gates
    map one-to-one onto resonant pulses)."""
    out = list(gates)
    phase = 0.0
    changed = True
    while changed:
        changed = False
        for i in range(len(out) - 1):
            g, h = out[i], out[i + 1]
            if (isinstance(g, LocalRotation) and isinstance(h, LocalRotation)
                    and g.qubit == h.qubit):
                prod = g.matrix() @ h.matrix()
                phi = matcore.phase_of_identity(prod, 10 * opts.cull_tol)
                if phi is not None:
                    phase += phi
                    del out[i:i + 2]
                    changed = True
                    break
    return out, phase


def _is_identity_gate(g, tol):
    if isinstance(g, LocalRotation):
        return np.linalg.norm(g.coeffs) <= tol
    return maxabs(wrap_phases(g.phases)) <= tol


def _merge_diagonals(gates, opts):
    """Merge diagonal gates separated only by rotations that commute with
    the gate being moved (the later diagonal slides left past them)."""
    out = list(gates)
    changed = True
    while changed:
        changed = False
        for i, g in enumerate(out):
            if not isinstance(g, DiagonalPhase):
                continue
            between = []
            j = i + 1
            while j < len(out):
                h = out[j]
                if isinstance(h, DiagonalPhase):
                    if all(b.qubit not in h.qubits for b in between):
                        out[i] = _combine_diag(g, h)
                        del out[j]
                        changed = True
                    break
                if isinstance(h, LocalRotation):
                    between.append(h)
                    j += 1
                    continue
                break
            if changed:
                break
    return [g for g in out if not _is_identity_gate(g, opts.cull_tol)]


def _combine_diag(g, h):
    qubits = tuple(sorted(set(g.qubits) | set(h.qubits)))
    k = len(qubits)
    phases = np.zeros(2 ** k)
    for src in (g, h):
        src_pos = [qubits.index(q) for q in src.qubits]
        for idx in range(2 ** k):
            sub = 0
            for p in src_pos:
                sub = (sub << 1) | ((idx >> (k - 1 - p)) & 1)
            phases[idx] += src.phases[sub]
    return DiagonalPhase(qubits, tuple(float(p) for p in wrap_phases(phases)))
