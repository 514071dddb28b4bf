"""Dense statevector simulation of single-qubit encoding circuits.

The circuit family is deliberately small: per re-uploading layer, a Hadamard
on every qubit, a data-dependent phase exp(+i * x_i * Z_i) on qubit i, and an
optional trainable RZ/RY pair per qubit.  There are no entangling gates, so
every reachable state is a product state; the simulator is nevertheless a
general dense one so that observables and noise are handled uniformly.

Observables are weighted sums of the identity and single-qubit Paulis,

    H = a*I + sum_i sum_{P in {X,Y,Z}} b_{i,P} * P_i,

evaluated either exactly from amplitudes, by finite-shot sampling (each Pauli
term gets its own shot budget), or by stochastic Pauli-channel trajectories
that emulate gate and readout noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

AXES = "XYZ"

_SQRT2_INV = 1.0 / math.sqrt(2.0)
_H = np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT2_INV
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_PAULI = {"X": _X, "Y": _Y, "Z": _Z}
# rotate-to-Z-basis matrices: measuring P equals applying this then measuring Z
_S_DAG = np.array([[1, 0], [0, -1j]], dtype=complex)
_BASIS_ROT = {"X": _H, "Y": _H @ _S_DAG, "Z": np.eye(2, dtype=complex)}

# trajectory chunk size; bounds memory at chunk * 2**n amplitudes
_SHOT_CHUNK = 1 << 16


def _zphase(x: float) -> np.ndarray:
    """Matrix of exp(+i*x*Z) = diag(e^{ix}, e^{-ix})."""
    return np.array([[np.exp(1j * x), 0], [0, np.exp(-1j * x)]])


def _rz(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]])


def _ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


@dataclass(frozen=True)
class GateOp:
    """One single-qubit gate: name in {h, zphase, rz, ry}, target qubit, angle."""

    name: str
    qubit: int
    angle: float = 0.0

    def matrix(self) -> np.ndarray:
        if self.name == "h":
            return _H
        if self.name == "zphase":
            return _zphase(self.angle)
        if self.name == "rz":
            return _rz(self.angle)
        if self.name == "ry":
            return _ry(self.angle)
        raise ValueError(f"unknown gate {self.name!r}")


@dataclass(frozen=True)
class Statevector:
    """Normalized complex amplitudes over the 2**n_qubits basis states.

    Qubit 0 is the least significant bit of the basis index.
    """

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (2**self.n_qubits,):
            raise ValueError(
                f"expected {2**self.n_qubits} amplitudes, got shape {amps.shape}"
            )
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"state not normalized: sum |a|^2 = {norm!r}")
        amps = amps.copy()
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)


@dataclass(frozen=True)
class EncodingCircuit:
    """Layered angle-encoding circuit.

    Per layer: H on every qubit, then the phase exp(+i * x_i * Z_i) on qubit i,
    then (when `variational_angles` is given) an RZ and an RY on each qubit.
    `variational_angles` is laid out layer-major, qubit-minor, (rz, ry) last:
    index = layer*2n + 2*qubit + {0: rz, 1: ry}.

    `include_hadamards=False` is a degenerate test-only mode that drops the
    Hadamards so an all-zero circuit acts as the identity.
    """

    n_qubits: int
    layers: int
    feature_angles: np.ndarray
    variational_angles: np.ndarray | None = None
    include_hadamards: bool = True

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        feat = np.array(self.feature_angles, dtype=float)
        if feat.shape != (self.n_qubits,):
            raise ValueError("feature_angles length must equal n_qubits")
        if not np.all(np.isfinite(feat)):
            raise ValueError("feature_angles must be finite")
        feat.flags.writeable = False
        object.__setattr__(self, "feature_angles", feat)
        if self.variational_angles is not None:
            var = np.array(self.variational_angles, dtype=float)
            expected = 2 * self.n_qubits * self.layers
            if var.shape != (expected,):
                raise ValueError(
                    f"variational_angles must have length {expected}, got {var.shape}"
                )
            if not np.all(np.isfinite(var)):
                raise ValueError("variational_angles must be finite")
            var.flags.writeable = False
            object.__setattr__(self, "variational_angles", var)

    def gate_ops(self) -> list[GateOp]:
        """Lower to the flat gate sequence the simulators execute."""
        ops: list[GateOp] = []
        n = self.n_qubits
        for layer in range(self.layers):
            if self.include_hadamards:
                ops.extend(GateOp("h", q) for q in range(n))
            ops.extend(
                GateOp("zphase", q, float(self.feature_angles[q])) for q in range(n)
            )
            if self.variational_angles is not None:
                base = layer * 2 * n
                for q in range(n):
                    ops.append(GateOp("rz", q, float(self.variational_angles[base + 2 * q])))
                    ops.append(GateOp("ry", q, float(self.variational_angles[base + 2 * q + 1])))
        return ops


def build_feature_map(
    x: Sequence[float],
    layers: int = 1,
    variational: Sequence[float] | None = None,
) -> EncodingCircuit:
    """Encoding circuit for feature vector `x` (one qubit per feature)."""
    feat = np.asarray(x, dtype=float)
    if feat.ndim != 1 or feat.size == 0:
        raise ValueError("x must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(feat)):
        raise ValueError("x must be finite")
    var = None if variational is None else np.asarray(variational, dtype=float)
    return EncodingCircuit(feat.size, layers, feat, var)


@dataclass(frozen=True)
class PauliSumObservable:
    """a*I + sum of b_{i,P} * P_i with P in {X, Y, Z}."""

    identity_coeff: float
    pauli_coeffs: Mapping[tuple[int, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.identity_coeff):
            raise ValueError("identity coefficient must be finite")
        coeffs = {}
        for (qubit, axis), value in dict(self.pauli_coeffs).items():
            if axis not in AXES:
                raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
            if qubit < 0:
                raise ValueError("qubit index must be nonnegative")
            if not np.isfinite(value):
                raise ValueError("Pauli coefficients must be finite")
            coeffs[(int(qubit), axis)] = float(value)
        object.__setattr__(self, "pauli_coeffs", coeffs)

    def terms(self) -> list[tuple[int, str, float]]:
        """Pauli terms sorted by (qubit, axis X<Y<Z); the canonical order."""
        return [
            (q, ax, self.pauli_coeffs[(q, ax)])
            for q, ax in sorted(self.pauli_coeffs, key=lambda k: (k[0], AXES.index(k[1])))
        ]

    def max_qubit(self) -> int:
        return max((q for q, _ in self.pauli_coeffs), default=-1)


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic Pauli channel: per-gate depolarizing + readout bit flips."""

    depolarizing_prob: float = 0.0
    readout_flip_prob: float = 0.0

    def __post_init__(self):
        for name in ("depolarizing_prob", "readout_flip_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {p!r}")


# ---------------------------------------------------------------------------
# simulator core
# ---------------------------------------------------------------------------


def _apply_matrix(states: np.ndarray, mat: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Apply a 2x2 matrix to `qubit` of states shaped (..., 2**n)."""
    lead = states.shape[:-1]
    v = states.reshape(lead + (2,) * n)
    ax = v.ndim - 1 - qubit  # qubit 0 is the least significant bit
    v = np.moveaxis(v, ax, -1)
    v = v @ mat.T
    v = np.moveaxis(v, -1, ax)
    return v.reshape(lead + (2**n,))


def run_gates(gates: Iterable[GateOp], n_qubits: int) -> np.ndarray:
    """Run a gate sequence on |0...0> and return raw amplitudes."""
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    for op in gates:
        if not 0 <= op.qubit < n_qubits:
            raise ValueError(f"gate qubit {op.qubit} out of range for {n_qubits} qubits")
        amps = _apply_matrix(amps, op.matrix(), op.qubit, n_qubits)
    return amps


def apply_circuit(circuit: EncodingCircuit) -> Statevector:
    """Statevector produced by the circuit from the all-zeros state."""
    return Statevector(circuit.n_qubits, run_gates(circuit.gate_ops(), circuit.n_qubits))


def _qubit_slices(amps: np.ndarray, qubit: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Split amplitudes shaped (..., 2**n) into (bit=0, bit=1) halves on `qubit`."""
    lead = amps.shape[:-1]
    v = amps.reshape(lead + (2,) * n)
    ax = v.ndim - 1 - qubit
    v = np.moveaxis(v, ax, -1).reshape(lead + (2 ** (n - 1), 2))
    return v[..., 0], v[..., 1]


def pauli_expectation(amps: np.ndarray, n: int, qubit: int, axis: str):
    """<P_qubit> for amplitudes shaped (..., 2**n); returns shape (...,)."""
    a0, a1 = _qubit_slices(amps, qubit, n)
    if axis == "Z":
        return np.sum(np.abs(a0) ** 2 - np.abs(a1) ** 2, axis=-1)
    cross = np.sum(np.conj(a0) * a1, axis=-1)
    if axis == "X":
        return 2.0 * np.real(cross)
    if axis == "Y":
        return 2.0 * np.imag(cross)
    raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


def _check_bounds(obs: PauliSumObservable, n: int) -> None:
    if obs.max_qubit() >= n:
        raise ValueError(
            f"observable touches qubit {obs.max_qubit()} but the state has {n} qubits"
        )


def expectation(state: Statevector, obs: PauliSumObservable) -> float:
    """<H> = a + sum b_{i,P} <P_i>, computed exactly from amplitudes."""
    _check_bounds(obs, state.n_qubits)
    total = obs.identity_coeff
    for qubit, axis, coeff in obs.terms():
        total += coeff * float(pauli_expectation(state.amplitudes, state.n_qubits, qubit, axis))
    return float(total)


def apply_observable(amps: np.ndarray, n: int, obs: PauliSumObservable) -> np.ndarray:
    """H|psi> for the Pauli-sum observable."""
    out = obs.identity_coeff * amps
    for qubit, axis, coeff in obs.terms():
        out = out + coeff * _apply_matrix(amps, _PAULI[axis], qubit, n)
    return out


def variance(state: Statevector, obs: PauliSumObservable) -> float:
    """Var(H) = <H^2> - <H>^2 >= 0.

    Computed as ||(H - <H>) psi||^2 by applying H to the state, which is exact
    up to rounding, avoids the cancellation of the naive two-term form, and
    needs no symbolic expansion of the squared operator.
    """
    _check_bounds(obs, state.n_qubits)
    hpsi = apply_observable(state.amplitudes, state.n_qubits, obs)
    e1 = np.real(np.vdot(state.amplitudes, hpsi))
    resid = hpsi - e1 * state.amplitudes
    return float(np.real(np.vdot(resid, resid)))


# ---------------------------------------------------------------------------
# shot sampling
# ---------------------------------------------------------------------------


def _bit_one_probability(amps: np.ndarray, n: int, qubit: int, axis: str):
    """P(measured bit = 1) when measuring Pauli `axis` on `qubit`.

    Bit 0 is the +1 eigenvalue outcome; the state is rotated so the target
    Pauli becomes Z, then the bit=1 mass is read off.
    """
    rot = _BASIS_ROT[axis]
    rotated = amps if axis == "Z" else _apply_matrix(amps, rot, qubit, n)
    _, a1 = _qubit_slices(rotated, qubit, n)
    return np.sum(np.abs(a1) ** 2, axis=-1)


def _sample_term_clean(
    amps: np.ndarray, n: int, qubit: int, axis: str, shots: int,
    readout_flip: float, rng: np.random.Generator,
) -> float:
    """Finite-shot estimate of <P> from a single (noise-free) state."""
    p1 = float(_bit_one_probability(amps, n, qubit, axis))
    p1 = min(max(p1, 0.0), 1.0)
    if readout_flip > 0.0:
        p1 = p1 * (1.0 - readout_flip) + (1.0 - p1) * readout_flip
    ones = int(rng.binomial(shots, p1))
    return 1.0 - 2.0 * ones / shots


def _sample_term_trajectories(
    gates: list[GateOp], n: int, qubit: int, axis: str, shots: int,
    noise: NoiseModel, rng: np.random.Generator,
) -> float:
    """Per-shot trajectory estimate of <P> under the gate-noise channel.

    After every gate a uniformly random Pauli is inserted on the touched qubit
    with probability depolarizing_prob, independently per shot.
    """
    total_ones = 0
    done = 0
    while done < shots:
        chunk = min(_SHOT_CHUNK, shots - done)
        states = np.zeros((chunk, 2**n), dtype=complex)
        states[:, 0] = 1.0
        for op in gates:
            states = _apply_matrix(states, op.matrix(), op.qubit, n)
            hit = rng.random(chunk) < noise.depolarizing_prob
            kinds = rng.integers(0, 3, size=chunk)
            for k, ax in enumerate(AXES):
                sel = hit & (kinds == k)
                if np.any(sel):
                    states[sel] = _apply_matrix(states[sel], _PAULI[ax], op.qubit, n)
        p1 = np.clip(_bit_one_probability(states, n, qubit, axis), 0.0, 1.0)
        bits = rng.random(chunk) < p1
        if noise.readout_flip_prob > 0.0:
            bits ^= rng.random(chunk) < noise.readout_flip_prob
        total_ones += int(np.count_nonzero(bits))
        done += chunk
    return 1.0 - 2.0 * total_ones / shots


def _sampled_expectation(
    gates: list[GateOp], n: int, obs: PauliSumObservable,
    shots: int, seed, noise: NoiseModel | None,
) -> float:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    _check_bounds(obs, n)
    rng = np.random.default_rng(seed)
    trajectories = noise is not None and noise.depolarizing_prob > 0.0
    readout = noise.readout_flip_prob if noise is not None else 0.0
    clean_amps = None if trajectories else run_gates(gates, n)
    total = obs.identity_coeff
    for qubit, axis, coeff in obs.terms():
        if trajectories:
            est = _sample_term_trajectories(gates, n, qubit, axis, shots, noise, rng)
        else:
            est = _sample_term_clean(clean_amps, n, qubit, axis, shots, readout, rng)
        total += coeff * est
    return float(total)


def sample_expectation(
    circuit: EncodingCircuit, obs: PauliSumObservable, shots: int, seed
) -> float:
    """Monte-Carlo estimate of <H>: each Pauli term measured with `shots` shots.

    Deterministic for a fixed (circuit, obs, shots, seed).
    """
    return _sampled_expectation(circuit.gate_ops(), circuit.n_qubits, obs, shots, seed, None)


def sample_noisy_expectation_from_gates(
    gates: list[GateOp], n_qubits: int, obs: PauliSumObservable,
    noise: NoiseModel, shots: int, seed,
) -> float:
    """Noisy estimate for an explicit gate sequence (exposed for oracles)."""
    return _sampled_expectation(gates, n_qubits, obs, shots, seed, noise)


def sample_noisy_expectation(
    circuit: EncodingCircuit, obs: PauliSumObservable,
    noise: NoiseModel, shots: int, seed,
) -> float:
    """Shot estimate of <H> under the depolarizing + readout-flip channel.

    With all noise probabilities zero this consumes the identical random
    stream as `sample_expectation`, so the two agree bit for bit.
    """
    return _sampled_expectation(
        circuit.gate_ops(), circuit.n_qubits, obs, shots, seed, noise
    )
