"""Control-pulse synthesis for the native gate set.

Single-qubit rotations become constant resonant radio pulses (general
axes via XYX decomposition); diagonal entangling gates become microwave
pulses with a Fourier-mode envelope whose coefficients are optimized
against a figure of merit evaluated through per-level rotation
accumulation (no matrix exponentials in the design loop).
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import hardware, matcore
from .cartan import DiagonalPhase, GateSequence, LocalRotation, wrap_phases
from .errors import InvalidInputError, PulseOptimizationError


# --------------------------------------------------------------------------
# Rotation bookkeeping: exp(-i angle/2 axis.sigma)


@dataclass(frozen=True)
class AxisAngle:
    """Rotation exp(-i angle/2 axis.sigma); angle in [0, 2 pi)."""

    angle: float
    axis: tuple

    def __post_init__(self):
        object.__setattr__(self, "axis", tuple(float(a) for a in self.axis))

    def matrix(self):
        w, v = _quaternion_of(self)
        return w * matcore.I2 - 1j * (v[0] * matcore.SX + v[1] * matcore.SY + v[2] * matcore.SZ)

    def rotation_vector(self):
        return self.angle * np.asarray(self.axis)


def _quaternion_of(r):
    half = r.angle / 2.0
    return np.cos(half), np.sin(half) * np.asarray(r.axis)


def _axis_angle_from_quaternion(w, v):
    norm = float(np.linalg.norm(v))
    angle = 2.0 * np.arctan2(norm, w)
    if norm < 1e-14:
        return AxisAngle(angle % (2 * np.pi), (0.0, 0.0, 1.0))
    return AxisAngle(angle % (2 * np.pi), tuple(v / norm))


def compose_rotations(r1, r2):
    """Rotation equal to applying r1 first, then r2."""
    w1, v1 = _quaternion_of(r1)
    w2, v2 = _quaternion_of(r2)
    w = w1 * w2 - float(np.dot(v1, v2))
    v = w2 * v1 + w1 * v2 + np.cross(v2, v1)
    return _axis_angle_from_quaternion(w, v)


def _hamilton_apply_then(wa, va, wb, vb):
    """Vectorized composition: rotation a applied first, then b."""
    w = wb * wa - np.sum(va * vb, axis=-1)
    v = (wb[..., None] * va + wa[..., None] * vb + np.cross(vb, va))
    return w, v


def xyx_decompose(u_or_rot):
    """Euler angles (z1, z2, z3) with U = exp(i z1 sx) exp(i z2 sy) exp(i z3 sx).

    Accepts a 2x2 unitary (up to global phase) or an AxisAngle.
    """
    if isinstance(u_or_rot, AxisAngle):
        u = u_or_rot.matrix()
    else:
        u = np.asarray(u_or_rot, dtype=complex)
    su, _ = matcore.project_su(u)
    a, b = su[0, 0], su[0, 1]
    c2 = np.hypot(np.real(a), np.imag(b))
    s2 = np.hypot(np.real(b), np.imag(a))
    zp = np.arctan2(np.imag(b), np.real(a)) if c2 > 1e-15 else 0.0
    zm = np.arctan2(-np.imag(a), np.real(b)) if s2 > 1e-15 else 0.0
    z2 = np.arctan2(s2, c2)
    z1 = (zp + zm) / 2.0
    z3 = (zp - zm) / 2.0
    return float(z1), float(z2), float(z3)


# --------------------------------------------------------------------------
# Pulse data types


@dataclass
class FourierEnvelope:
    """B(t) = sum_i a_i cos(W_i t + phi_i) + b_i sin(W_i t + psi_i), W_i = 2 i pi / T."""

    gate_time: float
    a: np.ndarray
    b: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    @property
    def n_freq(self):
        return len(self.a)

    def frequencies(self):
        return 2.0 * np.pi * np.arange(1, self.n_freq + 1) / self.gate_time

    def sample(self, t):
        t = np.asarray(t, dtype=float)
        w = self.frequencies()
        arg = np.multiply.outer(t, w)
        return (np.cos(arg + self.phi) @ self.a) + (np.sin(arg + self.psi) @ self.b)


@dataclass
class PulseSchedule:
    """One native gate realized as a drive-field segment."""

    gate: object                  # the NativeGate it realizes (one of possibly several segments)
    fld: hardware.DriveField
    regime: str                   # "radio" | "microwave"
    fom: float = None
    fidelity: float = None

    @property
    def duration(self):
        return self.fld.duration


# --------------------------------------------------------------------------
# Single-qubit (radio) pulses


def local_rotation_pulse(sys, qubit, angle, axis_xy, tn_unit, tau=1e-9):
    """Constant resonant pulse realizing exp(i angle (nx sx + ny sy)) on a nucleus.

    Duration scales linearly with the angle, (|angle|/pi) * tn_unit, so the
    Rabi rate is the same for every rotation at a given unit time.
    """
    nx, ny = axis_xy
    if abs(np.hypot(nx, ny) - 1.0) > 1e-9:
        raise InvalidInputError("axis must be a unit vector in the xy-plane")
    if tn_unit <= 0:
        raise InvalidInputError("tn_unit must be positive")
    gate = LocalRotation(qubit, (angle * nx, angle * ny, 0.0))
    if abs(angle) < 1e-12:
        fld = hardware.DriveField(carrier=0.0, phase=0.0, tau=tau, samples=np.zeros(0))
        return PulseSchedule(gate, fld, "radio", fidelity=1.0)
    nsteps = max(1, int(round((abs(angle) / np.pi) * tn_unit / tau)))
    duration = nsteps * tau
    gamma = sys.nuclei[qubit - 1].gamma
    b_c = 4.0 * angle / (gamma * duration)
    phi_c = float(np.arctan2(-ny, nx))
    if b_c < 0:
        b_c, phi_c = -b_c, phi_c + np.pi
    fld = hardware.DriveField(carrier=sys.nuclear_frequency(qubit - 1), phase=phi_c,
                              tau=tau, samples=np.full(nsteps, b_c))
    return PulseSchedule(gate, fld, "radio")


def synthesize_local(sys, gate, tn_unit, tau=1e-9):
    """Pulses (execution order) realizing a LocalRotation, XYX-decomposed
    when the rotation leaves the xy-plane."""
    cx, cy, cz = gate.coeffs
    if abs(cz) <= 1e-12:
        angle = float(np.hypot(cx, cy))
        if angle < 1e-12:
            return []
        return [local_rotation_pulse(sys, gate.qubit, angle, (cx / angle, cy / angle),
                                     tn_unit, tau)]
    z1, z2, z3 = xyx_decompose(gate.matrix())
    pulses = []
    for zeta, axis in ((z3, (1.0, 0.0)), (z2, (0.0, 1.0)), (z1, (1.0, 0.0))):
        if abs(zeta) < 1e-12:
            continue
        pulses.append(local_rotation_pulse(sys, gate.qubit, zeta, axis, tn_unit, tau))
    return pulses


# --------------------------------------------------------------------------
# Entangling (microwave) pulses


def gate_level_phases(sys, gate):
    """Embed a DiagonalPhase's phase vector onto all 2^N register levels."""
    n = sys.nqubits
    pos = [q - 1 for q in gate.qubits]
    phases = np.empty(2 ** n)
    for idx in range(2 ** n):
        sub = 0
        for p in pos:
            sub = (sub << 1) | ((idx >> (n - 1 - p)) & 1)
        phases[idx] = gate.phases[sub]
    return phases


def accumulate_level_rotations(sys, envelope, tau=1e-9):
    """Net electron rotation per register level for a Fourier envelope.

    Each time slice contributes exp(-i (f_l sx - g_l sy) tau) on level l;
    the time-ordered product collapses to one axis-angle rotation per
    level via the rotation-addition formula, evaluated as a vectorized
    pairwise tree over the time axis.
    """
    t_total = envelope.gate_time
    nsteps = int(round(t_total / tau))
    if abs(nsteps * tau - t_total) > 1e-12 * max(1.0, t_total / tau):
        raise InvalidInputError("tau must divide the gate time")
    if nsteps == 0:
        return [AxisAngle(0.0, (0.0, 0.0, 1.0)) for _ in range(2 ** sys.nqubits)]
    t_mid = (np.arange(nsteps) + 0.5) * tau
    env = envelope.sample(t_mid)
    shifts = sys.level_shifts()
    pref = 0.5 * sys.microwave_prefactor
    phase = np.multiply.outer(t_mid, shifts)
    f = pref * env[:, None] * np.cos(phase)
    g = pref * env[:, None] * np.sin(phase)
    r = np.hypot(f, g)
    rt = r * tau
    w = np.cos(rt)
    sinc = np.where(r > 1e-300, np.sin(rt) / np.where(r > 1e-300, r, 1.0), tau)
    v = np.stack([sinc * f, -sinc * g, np.zeros_like(f)], axis=-1)
    # pairwise tree over the time axis; later slices act after earlier ones
    while w.shape[0] > 1:
        m = w.shape[0]
        if m % 2:
            w = np.concatenate([w, np.ones((1,) + w.shape[1:])])
            v = np.concatenate([v, np.zeros((1,) + v.shape[1:])])
            m += 1
        w, v = _hamilton_apply_then(w[0::2], v[0::2], w[1::2], v[1::2])
    return [_axis_angle_from_quaternion(float(w[0, l]), v[0, l])
            for l in range(w.shape[1])]


def fom(rotations, target_phases):
    """Figure of merit: product over levels of the phase-match and
    electron-return cosines; equals 1 exactly at a perfect gate (modulo
    2 pi windings of the accumulated z-angle)."""
    target_phases = np.asarray(target_phases, dtype=float)
    if len(rotations) != len(target_phases):
        raise InvalidInputError("one target phase per basis level is required")
    total = 1.0
    for rot, phi in zip(rotations, target_phases):
        rx, ry, rz = rot.rotation_vector()
        total *= np.cos(rz - phi) * np.cos(rx) * np.cos(ry)
    return float(total)


def _rwa_gate_amplitudes(rotations):
    """<down| u_l |down> for each level's accumulated rotation."""
    out = np.empty(len(rotations), dtype=complex)
    for l, rot in enumerate(rotations):
        w, v = _quaternion_of(rot)
        out[l] = w - 1j * v[2]
    return out


def rwa_gate_fidelity(rotations, gate_phases):
    amp = _rwa_gate_amplitudes(rotations)
    return float(np.abs(np.sum(np.conj(np.exp(1j * np.asarray(gate_phases))) * amp))
                 / len(rotations))


@dataclass
class EntanglingResult:
    envelope: FourierEnvelope
    fom: float
    rwa_fidelity: float
    fidelity: float = None        # full-Hamiltonian simulation, filled on verify
    restart: int = -1


def optimize_entangling_pulse(sys, gate, gate_time=3e-6, n_freq=10, seed=0,
                              restarts=8, tau=1e-9, fom_threshold=1 - 1e-5,
                              verify=True, amp_cap=None):
    """Shape the microwave envelope realizing a diagonal phase gate.

    Runs a bounded L-BFGS ascent of the figure of merit over the Fourier
    coefficients and phases (central finite differences, multi-start with
    deterministic seeds) and returns the best result; the reported
    fidelity comes from a full-Hamiltonian simulation of the pulse.
    """
    if gate_time <= 0:
        raise InvalidInputError("gate time must be positive")
    if any(q < 1 or q > sys.nqubits for q in gate.qubits):
        raise InvalidInputError("gate qubits outside the register")
    gate_phases = gate_level_phases(sys, gate)
    targets = -2.0 * gate_phases          # z-angle of exp(-i z/2 sz) giving e^{i phi} on |down>
    # amplitude unit: Rabi rate of a few beta so the drive can traverse the
    # hyperfine splittings within the gate time
    beta_scale = max(abs(n.beta) for n in sys.nuclei)
    amp_unit = 2.0 * beta_scale / (0.5 * sys.microwave_prefactor)
    rng = np.random.default_rng(seed)
    nf = n_freq

    def build_envelope(x):
        return FourierEnvelope(gate_time=gate_time,
                               a=x[0:nf] * amp_unit, b=x[nf:2 * nf] * amp_unit,
                               phi=x[2 * nf:3 * nf], psi=x[3 * nf:4 * nf])

    def objective(x):
        rots = accumulate_level_rotations(sys, build_envelope(x), tau)
        value = -fom(rots, targets)
        if amp_cap is not None:
            peak = np.max(np.abs(build_envelope(x).sample(
                (np.arange(64) + 0.5) * gate_time / 64)))
            if peak > amp_cap:
                value += (peak / amp_cap - 1.0) ** 2
        return value

    def gradient(x, step=1e-7):
        g = np.empty_like(x)
        for i in range(len(x)):
            xp = x.copy(); xp[i] += step
            xm = x.copy(); xm[i] -= step
            g[i] = (objective(xp) - objective(xm)) / (2 * step)
        return g

    bounds = ([(None, None)] * (2 * nf)) + ([(-np.pi, np.pi)] * (2 * nf))
    best = None
    for restart in range(restarts):
        x0 = np.concatenate([rng.uniform(-0.5, 0.5, 2 * nf),
                             rng.uniform(-np.pi, np.pi, 2 * nf)])
        res = scipy.optimize.minimize(objective, x0, jac=gradient,
                                      method="L-BFGS-B", bounds=bounds,
                                      options={"maxiter": 400})
        env = build_envelope(res.x)
        rots = accumulate_level_rotations(sys, env, tau)
        cand = EntanglingResult(envelope=env, fom=fom(rots, targets),
                                rwa_fidelity=rwa_gate_fidelity(rots, gate_phases),
                                restart=restart)
        # rank by design-model gate quality first: the FoM is insensitive to
        # per-level pi flips, which the RWA fidelity catches
        key = (round(cand.rwa_fidelity, 9), round(cand.fom, 9), -cand.restart)
        if best is None or key > (round(best.rwa_fidelity, 9), round(best.fom, 9), -best.restart):
            best = cand
        if best.fom >= fom_threshold and best.rwa_fidelity >= 1 - 5e-5:
            break
    if verify:
        from . import sim
        sched = schedule_for_envelope(sys, gate, best.envelope, tau)
        u_full = sim.propagate(sim.Propagation(system=sys, schedules=[sched], tau=tau))
        target_mat = np.diag(np.exp(1j * gate_phases))
        best.fidelity = sim.fidelity(matcore.partial_trace_electron(u_full), target_mat)
    if best.fom < fom_threshold:
        raise PulseOptimizationError(
            f"entangling pulse optimization stalled at FoM {best.fom:.8f} "
            f"(threshold {fom_threshold})", best=best)
    return best


def schedule_for_envelope(sys, gate, envelope, tau=1e-9):
    nsteps = int(round(envelope.gate_time / tau))
    samples = envelope.sample((np.arange(nsteps) + 0.5) * tau)
    fld = hardware.DriveField(carrier=sys.omega_el, phase=0.0, tau=tau, samples=samples)
    return PulseSchedule(gate, fld, "microwave")


def synthesize_diagonal(sys, gate, gate_time=3e-6, split_threshold=np.pi, **kw):
    """Entangling pulses (execution order) for a DiagonalPhase.

    Gates with a phase of magnitude >= pi are realized as two sequential
    half-angle pulses, which keeps the optimization well-conditioned.
    """
    phases = np.asarray(gate.phases)
    if np.max(np.abs(phases)) >= split_threshold - 1e-12:
        half = DiagonalPhase(gate.qubits, tuple(p / 2.0 for p in gate.phases))
        result = optimize_entangling_pulse(sys, half, gate_time=gate_time, **kw)
        sched = schedule_for_envelope(sys, half, result.envelope, kw.get("tau", 1e-9))
        sched.fom, sched.fidelity = result.fom, result.fidelity
        second = PulseSchedule(half, sched.fld, "microwave", sched.fom, sched.fidelity)
        return [sched, second]
    result = optimize_entangling_pulse(sys, gate, gate_time=gate_time, **kw)
    sched = schedule_for_envelope(sys, gate, result.envelope, kw.get("tau", 1e-9))
    sched.fom, sched.fidelity = result.fom, result.fidelity
    return [sched]


# --------------------------------------------------------------------------
# Sequence-level synthesis with a content-addressed library


def gate_key(gate, sys, gate_time_or_tn):
    """Content hash identifying a pulse-library entry."""
    if isinstance(gate, LocalRotation):
        payload = {"kind": "local", "qubit": gate.qubit,
                   "coeffs": [f"{c:.15g}" for c in gate.coeffs]}
    else:
        payload = {"kind": "diag", "qubits": list(gate.qubits),
                   "phases": [f"{p:.15g}" for p in gate.phases]}
    payload["system"] = sys.name
    payload["b0"] = f"{sys.b0:.12g}"
    payload["time"] = f"{gate_time_or_tn:.12g}"
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def synthesize_sequence(sys, seq, tn_unit=10e-6, entangling_time=3e-6,
                        tau=1e-9, n_freq=10, seed=0, restarts=8, cache=None,
                        verify=True, fom_threshold=1 - 1e-5):
    """Pulse program (execution order) for a compiled gate sequence.

    Entangling gates are cached by content hash; identical diagonal gates
    reuse the optimized envelope.  Returns (program, per-gate info list).
    """
    cache = {} if cache is None else cache
    program = []
    info = []
    failures = []
    for gate in reversed(seq.gates):      # sequence is matrix-ordered; execute right-to-left
        if isinstance(gate, LocalRotation):
            pulses = synthesize_local(sys, gate, tn_unit, tau)
            program.extend(pulses)
            info.append({"gate": gate, "kind": "radio", "pulses": len(pulses)})
            continue
        key = gate_key(gate, sys, entangling_time)
        if key not in cache:
            try:
                cache[key] = synthesize_diagonal(
                    sys, gate, gate_time=entangling_time, tau=tau, n_freq=n_freq,
                    seed=seed, restarts=restarts, verify=verify,
                    fom_threshold=fom_threshold)
            except PulseOptimizationError as exc:
                failures.append((gate, exc))
                best = exc.best
                sched = schedule_for_envelope(sys, gate, best.envelope, tau)
                sched.fom = best.fom
                cache[key] = [sched]
        pulses = cache[key]
        program.extend(pulses)
        info.append({"gate": gate, "kind": "microwave", "pulses": len(pulses),
                     "key": key, "fom": pulses[0].fom, "fidelity": pulses[0].fidelity})
    return program, info, failures


def rescale_local_pulses(sys, program, tn_unit, tau=1e-9):
    """Re-synthesize the radio pulses of a program for a new unit time,
    keeping every entangling pulse unchanged."""
    out = []
    for sched in program:
        if sched.regime == "microwave":
            out.append(sched)
        else:
            cx, cy, _ = sched.gate.coeffs
            angle = float(np.hypot(cx, cy))
            if angle < 1e-12:
                out.append(sched)
                continue
            out.append(local_rotation_pulse(sys, sched.gate.qubit, angle,
                                            (cx / angle, cy / angle), tn_unit, tau))
    return out


# --------------------------------------------------------------------------
# Serialization (CSV samples + JSON sidecar)


def save_schedule(basepath, sched):
    fld = sched.fld
    t_ns = (np.arange(len(fld.samples)) * fld.tau) * 1e9
    rows = np.column_stack([t_ns, fld.samples,
                            np.full_like(t_ns, fld.carrier),
                            np.full_like(t_ns, fld.phase)])
    header = "t_ns,envelope_T,carrier_rad_per_s,phase_rad"
    np.savetxt(f"{basepath}.csv", rows, delimiter=",", header=header,
               comments="", fmt="%.17g")
    gate = sched.gate
    meta = {
        "regime": sched.regime,
        "tau_s": fld.tau,
        "fom": sched.fom,
        "fidelity": sched.fidelity,
        "gate": ({"kind": "local", "qubit": gate.qubit, "coeffs": list(gate.coeffs)}
                 if isinstance(gate, LocalRotation)
                 else {"kind": "diag", "qubits": list(gate.qubits),
                       "phases": list(gate.phases)}),
    }
    with open(f"{basepath}.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_schedule(basepath):
    with open(f"{basepath}.json") as fh:
        meta = json.load(fh)
    data = np.loadtxt(f"{basepath}.csv", delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, 4))
    g = meta["gate"]
    gate = (LocalRotation(int(g["qubit"]), tuple(g["coeffs"])) if g["kind"] == "local"
            else DiagonalPhase(tuple(g["qubits"]), tuple(g["phases"])))
    fld = hardware.DriveField(carrier=float(data[0, 2]) if len(data) else 0.0,
                              phase=float(data[0, 3]) if len(data) else 0.0,
                              tau=float(meta["tau_s"]),
                              samples=data[:, 1] if len(data) else np.zeros(0))
    return PulseSchedule(gate, fld, meta["regime"], meta.get("fom"), meta.get("fidelity"))
