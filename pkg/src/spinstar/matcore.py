"""Dense complex matrix utilities for small multi-qubit operators.

Everything here works on plain ``numpy`` arrays of shape ``(2**n, 2**n)``.
Matrix exponentials and logarithms go through Hermitian eigensolvers so
that the results stay unitary / skew-Hermitian to machine precision,
which the decomposition layers rely on.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InvalidInputError


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used across the package (single knob for tests)."""

    unitarity: float = 1e-10
    skew: float = 1e-10
    eig_residual: float = 1e-9
    eig_orthonormal: float = 1e-9
    phase_cluster: float = 1e-8      # eigenphases closer than this form one eigenspace
    conjugate_pairing: float = 1e-7  # matching an eigenvalue with its conjugate partner
    branch_margin: float = 1e-12     # distance to the -pi branch cut that triggers a warning
    basis_orthogonality: float = 1e-8


TOLS = Tolerances()

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SX, SY, SZ)


def check_dim(dim):
    if dim < 1 or dim & (dim - 1):
        raise InvalidInputError(f"dimension {dim} is not a positive power of two")
    return int(np.log2(dim))


def nqubits_of(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    return check_dim(a.shape[0])


def maxabs(a):
    return 0.0 if a.size == 0 else float(np.max(np.abs(a)))


def unitarity_defect(u):
    return maxabs(u.conj().T @ u - np.eye(u.shape[0]))


def check_unitary(u, tol=TOLS.unitarity):
    nqubits_of(u)
    defect = unitarity_defect(u)
    if defect > tol:
        raise InvalidInputError(f"matrix is not unitary: ||U^dag U - I||_max = {defect:.3e}")
    return u


def check_skew(a, tol=TOLS.skew):
    nqubits_of(a)
    defect = maxabs(a + a.conj().T)
    if defect > tol:
        raise InvalidInputError(f"matrix is not skew-Hermitian: ||A + A^dag||_max = {defect:.3e}")
    return a


def kron(*ops):
    """Kronecker product of one or more operators, left factor most significant."""
    out = np.asarray(ops[0], dtype=complex)
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def exp_skew(a):
    """Exponential of a skew-Hermitian matrix, unitary by construction.

    Diagonalizes the Hermitian matrix -iA and exponentiates the spectrum,
    so the result satisfies the unitarity invariant independent of ||A||.
    """
    a = np.asarray(a, dtype=complex)
    check_skew(a)
    w, v = np.linalg.eigh(-1j * a)
    return (v * np.exp(1j * w)) @ v.conj().T


def eig_unitary(u, tol=TOLS.unitarity):
    """Eigendecomposition of a unitary with orthonormal eigenvectors.

    Uses a complex Schur reduction: for a normal matrix the Schur form is
    diagonal, so the Schur vectors are an orthonormal eigenbasis even in
    the presence of degenerate eigenvalues (where ``numpy.linalg.eig``
    returns skewed bases).  Eigenvalues are sorted by phase in (-pi, pi].

    Returns (eigenvalues, eigenvector matrix Q) with U = Q diag(vals) Q^dag.
    """
    u = np.asarray(u, dtype=complex)
    check_unitary(u, tol)
    t, q = sla.schur(u, output="complex")
    off = maxabs(np.triu(t, 1))
    if off > 1e-8:
        raise InvalidInputError(f"Schur form not diagonal (off-diag {off:.2e}); input not normal?")
    vals = np.diag(t).copy()
    vals = vals / np.abs(vals)
    order = np.argsort(np.angle(vals), kind="stable")
    return vals[order], q[:, order]


def log_unitary(u, warn=None):
    """Principal logarithm of a unitary: skew-Hermitian A with exp(A) = U.

    Eigenphases are taken in (-pi, pi]; a phase within the branch margin
    of -pi is mapped to +pi (deterministic tie-break) and reported through
    the optional ``warn`` callback.
    """
    vals, q = eig_unitary(u)
    phases = np.angle(vals)
    near_cut = phases < (-np.pi + TOLS.branch_margin)
    if np.any(near_cut):
        phases = np.where(near_cut, np.pi, phases)
        if warn is not None:
            warn("eigenphase within branch margin of -pi; tie-broken to +pi")
    a = (q * (1j * phases)) @ q.conj().T
    return 0.5 * (a - a.conj().T)


def partial_trace_electron(u_full):
    """Electron-|down> conditioned block <down| U |down> of a 2^(N+1) operator.

    The electron is the first (most significant) tensor factor and the
    computational level |down> is index 0, so this is the top-left block.
    """
    u_full = np.asarray(u_full, dtype=complex)
    n = nqubits_of(u_full)
    if n < 1:
        raise InvalidInputError("need at least the electron factor")
    d = u_full.shape[0] // 2
    return u_full[:d, :d].copy()


def global_phase_align(a, b):
    """Return exp(i theta) * A with theta maximizing Re Tr(B^dag exp(i theta) A)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    tr = np.trace(b.conj().T @ a)
    if abs(tr) < 1e-300:
        return a.copy()
    return a * (tr.conjugate() / abs(tr))


def dist_to_phase_multiple(a, b):
    """max-norm distance between A and the best phase-aligned copy of B."""
    return maxabs(global_phase_align(a, b) - b)


def project_su(u):
    """Divide out the determinant phase: returns (U', phi) with U = e^{i phi} U'.

    U' has determinant 1; phi is the removed per-entry global phase.
    """
    u = np.asarray(u, dtype=complex)
    n = nqubits_of(u)
    det = np.linalg.det(u)
    phi = np.angle(det) / u.shape[0]
    return u * np.exp(-1j * phi), phi


def is_diagonal(u, tol=1e-11):
    return maxabs(u - np.diag(np.diag(u))) <= tol


def phase_of_identity(u, tol=1e-11):
    """If U = e^{i phi} I within tol, return phi; otherwise None."""
    z = u[0, 0]
    if abs(abs(z) - 1.0) > tol:
        return None
    phi = np.angle(z)
    if maxabs(u - np.exp(1j * phi) * np.eye(u.shape[0])) <= tol:
        return float(phi)
    return None


def haar_unitary(dim, rng):
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_skew_hermitian(dim, rng, scale=1.0):
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * 0.5 * (z - z.conj().T)


def embed_on_qubits(op, qubits, nqubits):
    """Embed an operator acting on the listed qubits (1-based, qubit 1 most
    significant) into the full 2^n register, identity elsewhere.

    ``op`` is a 2^k matrix whose tensor factors follow the order of
    ``qubits``; the listed qubits need not be adjacent or sorted.
    """
    qubits = list(qubits)
    k = len(qubits)
    if sorted(set(qubits)) != sorted(qubits) or any(q < 1 or q > nqubits for q in qubits):
        raise InvalidInputError(f"bad qubit list {qubits} for n={nqubits}")
    op = np.asarray(op, dtype=complex)
    if op.shape != (2 ** k, 2 ** k):
        raise InvalidInputError(f"operator shape {op.shape} does not match {k} qubits")
    full = kron(op, np.eye(2 ** (nqubits - k), dtype=complex))
    # Tensor legs are currently [listed qubits..., remaining qubits...];
    # permute them back into register order.
    rest = [q for q in range(1, nqubits + 1) if q not in qubits]
    layout = qubits + rest
    perm = [layout.index(q) for q in range(1, nqubits + 1)]
    t = full.reshape([2] * (2 * nqubits))
    t = t.transpose(perm + [nqubits + p for p in perm])
    return np.ascontiguousarray(t.reshape(2 ** nqubits, 2 ** nqubits))


def rotation2(coeffs):
    """exp(i (cx sx + cy sy + cz sz)) on a single qubit."""
    cx, cy, cz = coeffs
    h = cx * SX + cy * SY + cz * SZ
    theta = float(np.sqrt(cx * cx + cy * cy + cz * cz))
    if theta < 1e-300:
        return np.eye(2, dtype=complex)
    return np.cos(theta) * I2 + 1j * np.sin(theta) / theta * h


def rotation_coeffs(u2):
    """Inverse of :func:`rotation2` for a 2x2 unitary, up to global phase.

    Returns (coeffs, phase) with U = e^{i phase} exp(i c.sigma) and
    |c| <= pi (principal branch).
    """
    u2 = np.asarray(u2, dtype=complex)
    if u2.shape != (2, 2):
        raise InvalidInputError("rotation_coeffs expects a 2x2 matrix")
    su, phase = project_su(u2)
    a = log_unitary(su)
    coeffs = tuple(float(np.real(np.trace(s @ a) / 2j)) for s in PAULIS)
    return coeffs, phase


def rx(zeta):
    """R_x(zeta) = exp(i zeta/2 sigma_x)."""
    return rotation2((zeta / 2.0, 0.0, 0.0))


def ry(zeta):
    return rotation2((0.0, zeta / 2.0, 0.0))


def rz(zeta):
    return rotation2((0.0, 0.0, zeta / 2.0))


# Standard gate matrices used by the benchmark circuits and the unwrapping
# heuristic (qubit 1 is the most significant factor of any 2-qubit gate).

HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)


def cphase(phi):
    """Controlled phase diag(1, 1, 1, e^{i phi})."""
    return np.diag(np.exp(1j * np.array([0.0, 0.0, 0.0, phi])))
