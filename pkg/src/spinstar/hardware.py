"""Physical model of the star-shaped spin register.

A central electron spin (NV, or a spin-1/2 group-IV defect) couples to N
nuclear spins through the parallel hyperfine component; nuclei never
couple to each other directly.  Everything is expressed in the frame
rotating with the static Hamiltonian, so the drive Hamiltonians below
carry explicit time-dependent phases at the nuclear transition
frequencies (radio band) and at the electron transition frequency
(microwave band).

Units: all frequencies/rates in rad/s, fields in tesla, times in seconds.
The electron two-level convention is |down> = index 0 of the first
(most significant) tensor factor; the computational register lives in the
|down> branch.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .matcore import I2, SX, SY, kron

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Nucleus:
    label: str
    gamma: float  # gyromagnetic ratio, rad/s/T
    beta: float   # half hyperfine splitting A_zz/2, rad/s


@dataclass(frozen=True)
class SpinSystem:
    """Register parameters and derived transition frequencies."""

    d_zfs: float                 # zero-field splitting, rad/s
    gamma_e: float               # electron gyromagnetic ratio, rad/s/T
    b0: float                    # static field, tesla
    nuclei: tuple
    electron_kind: str = "nv"    # "nv" (spin-1 two-level reduction) | "group4"
    name: str = "custom"

    def __post_init__(self):
        if self.electron_kind not in ("nv", "group4"):
            raise InvalidInputError(f"unknown electron kind {self.electron_kind!r}")
        if not self.nuclei:
            raise InvalidInputError("need at least one register nucleus")
        if len(self.nuclei) > 6:
            raise InvalidInputError("more than 6 register nuclei is out of scope")
        for nuc in self.nuclei:
            if abs(nuc.gamma * self.b0) > 0 and abs(nuc.beta / (nuc.gamma * self.b0)) > 0.1:
                warnings.warn(
                    f"{nuc.label}: |beta/(gamma B0)| = "
                    f"{abs(nuc.beta / (nuc.gamma * self.b0)):.2f} > 0.1; the secular "
                    "ZZ approximation is strained", stacklevel=2)
        freqs = [self.nuclear_frequency(i) for i in range(len(self.nuclei))]
        for i in range(len(freqs)):
            for j in range(i + 1, len(freqs)):
                if abs(freqs[i] - freqs[j]) < TWO_PI * 1e3:
                    warnings.warn(
                        f"nuclear transitions {self.nuclei[i].label} and "
                        f"{self.nuclei[j].label} separated by less than 2*pi*1 kHz; "
                        "spectral addressing will fail", stacklevel=2)

    @property
    def nqubits(self):
        return len(self.nuclei)

    @property
    def dim(self):
        return 2 ** (self.nqubits + 1)

    @property
    def omega_el(self):
        """Bare electron transition frequency in the rotating-frame bookkeeping."""
        return self.d_zfs - self.gamma_e * self.b0

    def nuclear_frequency(self, i):
        """Drive frequency of nucleus i with the electron parked in |down>."""
        nuc = self.nuclei[i]
        if self.electron_kind == "nv":
            return nuc.gamma * self.b0 + 2.0 * nuc.beta   # gamma B0 + A_zz
        return nuc.gamma * self.b0 + nuc.beta             # gamma B0 + A_zz/2

    def parity(self, bit):
        if self.electron_kind == "nv":
            return 1.0 if bit else -1.0
        return 0.5 if bit else -0.5

    def level_frequency(self, l):
        """Hyperfine shift of basis level l (1-based, qubit 1 most significant)."""
        n = self.nqubits
        if not 1 <= l <= 2 ** n:
            raise InvalidInputError(f"level index {l} outside 1..{2 ** n}")
        bits = (l - 1)
        total = 0.0
        for j, nuc in enumerate(self.nuclei):
            bit = (bits >> (n - 1 - j)) & 1
            total += self.parity(bit) * nuc.beta
        return total

    def level_shifts(self):
        """All 2^N level shifts as an array (index = l-1)."""
        return np.array([self.level_frequency(l) for l in range(1, 2 ** self.nqubits + 1)])

    @property
    def microwave_prefactor(self):
        """Coefficient of B1(t) in the electron drive Hamiltonian."""
        if self.electron_kind == "nv":
            return self.gamma_e / np.sqrt(2.0)
        return self.gamma_e / 2.0


@dataclass
class DriveField:
    """Piecewise-constant control field samples under a carrier.

    ``samples[k]`` holds the envelope on [k tau, (k+1) tau) relative to the
    pulse start; the carrier runs on absolute time so that back-to-back
    pulses stay phase-coherent with the rotating frame.
    """

    carrier: float               # rad/s
    phase: float                 # rad
    tau: float                   # s
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.tau <= 0:
            raise InvalidInputError("sample step must be positive")

    @property
    def duration(self):
        return len(self.samples) * self.tau

    def envelope_at(self, t_rel):
        idx = np.clip((np.asarray(t_rel) // self.tau).astype(int), 0,
                      max(len(self.samples) - 1, 0))
        if len(self.samples) == 0:
            return np.zeros_like(np.asarray(t_rel, dtype=float))
        return self.samples[idx]

    def b1(self, t_abs, t_start=0.0):
        return self.envelope_at(t_abs - t_start) * np.cos(self.carrier * t_abs + self.phase)


# --------------------------------------------------------------------------
# Hamiltonians (electron factor first, |down> = index 0)


def _nuclear_xy_ops(nqubits):
    """Embedded I_{i,x}, I_{i,y} (= sigma/2) on the electron+register space."""
    ops = []
    for i in range(nqubits):
        before = 2 ** (i + 1)           # electron + earlier nuclei
        after = 2 ** (nqubits - 1 - i)
        ix = kron(np.eye(before), SX / 2, np.eye(after))
        iy = kron(np.eye(before), SY / 2, np.eye(after))
        ops.append((ix, iy))
    return ops


class _OpCache(dict):
    def for_system(self, sys):
        key = (sys.nqubits,)
        if key not in self:
            self[key] = _nuclear_xy_ops(sys.nqubits)
        return self[key]


_OPS = _OpCache()


def h_sq(sys, t, fld, t_start=0.0):
    """Radio-band drive Hamiltonian acting on the nuclei (electron idle)."""
    if t < t_start - 1e-15 or t > t_start + fld.duration + 1e-15:
        raise InvalidInputError("time outside the pulse window")
    b1 = float(fld.b1(t, t_start))
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    if b1 == 0.0:
        return h
    ops = _OPS.for_system(sys)
    for i in range(sys.nqubits):
        w = sys.nuclear_frequency(i)
        ix, iy = ops[i]
        h -= sys.nuclei[i].gamma * b1 * (np.cos(w * t) * ix + np.sin(w * t) * iy)
    return h


def _electron_block(sys, phases):
    """sum_l [cos(phi_l) sx - sin(phi_l) sy] (x) |l><l| as a dense matrix."""
    d = 2 ** sys.nqubits
    h = np.zeros((2 * d, 2 * d), dtype=complex)
    h[:d, d:] = np.diag(np.exp(1j * phases))
    h[d:, :d] = np.diag(np.exp(-1j * phases))
    return h


def h_nv(sys, t, fld, t_start=0.0):
    """Microwave-band drive Hamiltonian, full (no rotating-wave approximation)."""
    if t < t_start - 1e-15 or t > t_start + fld.duration + 1e-15:
        raise InvalidInputError("time outside the pulse window")
    b1 = float(fld.b1(t, t_start))
    if b1 == 0.0:
        return np.zeros((sys.dim, sys.dim), dtype=complex)
    phases = (sys.omega_el + sys.level_shifts()) * t
    return sys.microwave_prefactor * b1 * _electron_block(sys, phases)


def h_nv_rwa(sys, t, envelope_value):
    """Co-rotating microwave Hamiltonian used by the pulse design model."""
    phases = sys.level_shifts() * t
    return 0.5 * sys.microwave_prefactor * envelope_value * _electron_block(sys, phases)


# --------------------------------------------------------------------------
# Presets

_N15 = {"label": "15N", "gamma": -TWO_PI * 4.32e6, "beta": TWO_PI * 1.515e6}
_C13_L = {"label": "13C1", "gamma": TWO_PI * 10.708e6, "beta": TWO_PI * 0.49e6}
_C13_S = {"label": "13C2", "gamma": TWO_PI * 10.708e6, "beta": TWO_PI * 0.206e6}

#: Default static field.  The paper leaves B0 open; this value puts the
#: electron transition near 2*pi*40 MHz so a 1 ns step resolves the
#: counter-rotating terms, while the nuclear transitions stay separated
#: by ~2*pi*0.5 MHz for spectral addressing.
DEFAULT_B0 = 0.101


def table2_system(nqubits=2, b0=DEFAULT_B0):
    """NV register with the reference physical parameters (1-3 nuclei)."""
    roster = [_N15, _C13_L, _C13_S]
    if not 1 <= nqubits <= 3:
        raise InvalidInputError("the reference register provides 1..3 nuclei")
    nuclei = tuple(Nucleus(**kw) for kw in roster[:nqubits])
    return SpinSystem(d_zfs=TWO_PI * 2.87e9, gamma_e=TWO_PI * 28.024e9,
                      b0=b0, nuclei=nuclei, electron_kind="nv",
                      name=f"table2-nv-{nqubits}q")


def group4_template(nqubits=2, b0=DEFAULT_B0):
    """Spin-1/2 color-center variant with the same nuclear roster."""
    roster = [_N15, _C13_L, _C13_S]
    nuclei = tuple(Nucleus(**kw) for kw in roster[:nqubits])
    return SpinSystem(d_zfs=TWO_PI * 2.87e9, gamma_e=TWO_PI * 28.024e9,
                      b0=b0, nuclei=nuclei, electron_kind="group4",
                      name=f"group4-{nqubits}q")


_UNIT_SCALES = {
    "Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6, "GHz": TWO_PI * 1e9,
    "Hz/T": TWO_PI, "kHz/T": TWO_PI * 1e3, "MHz/T": TWO_PI * 1e6, "GHz/T": TWO_PI * 1e9,
    "rad/s": 1.0, "rad/s/T": 1.0, "T": 1.0, "mT": 1e-3,
}


def _quantity(node, what):
    if not isinstance(node, dict) or "value" not in node or "unit" not in node:
        raise InvalidInputError(f"{what}: parameters must carry explicit units "
                                "({'value': ..., 'unit': ...})")
    unit = node["unit"]
    if unit not in _UNIT_SCALES:
        raise InvalidInputError(f"{what}: unknown unit {unit!r}")
    return float(node["value"]) * _UNIT_SCALES[unit]


def load_system(path):
    """Load a system preset from a JSON parameter file (units mandatory)."""
    with open(path) as fh:
        payload = json.load(fh)
    nuclei = tuple(
        Nucleus(label=nuc.get("label", f"n{i}"),
                gamma=_quantity(nuc["gamma"], f"nucleus {i} gamma"),
                beta=_quantity(nuc["beta"], f"nucleus {i} beta"))
        for i, nuc in enumerate(payload["nuclei"]))
    return SpinSystem(
        d_zfs=_quantity(payload["D"], "D"),
        gamma_e=_quantity(payload["gamma_e"], "gamma_e"),
        b0=_quantity(payload["B0"], "B0"),
        nuclei=nuclei,
        electron_kind=payload.get("electron_kind", "nv"),
        name=payload.get("name", "file"))


def preset(name, b0=DEFAULT_B0, nqubits=None):
    """Resolve a preset name or a parameter-file path to a SpinSystem."""
    if name == "table2-nv":
        return table2_system(nqubits or 2, b0)
    if name == "group4-template":
        return group4_template(nqubits or 2, b0)
    return load_system(name)
