"""Bus admittance assembly and AC power-flow solvers.

Two solvers share one convergence contract (per-unit power mismatch at
every non-slack bus below tolerance): full Newton-Raphson in polar form,
and the fast-decoupled iteration with constant B' / B'' matrices (BX
variant: B' from the series branches with charging, shunts and taps
removed; B'' the negated imaginary part of Ybus with series resistance
and phase shifts removed, shunts and charging kept). B'' doubles as the
reactive sensitivity matrix of the control model, keeping solver and
controller consistent. :func:`bus_mismatch` recomputes residuals from
first principles, branch by branch, as an independent audit of either
solver.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .netmodel import Branch, BusKind, Network, bus_order, partition_buses
from .numerics import lu_factor, lu_solve, lu_solve_factored

__all__ = [
    "PF_TOLERANCE",
    "NEWTON_MAX_ITER",
    "FDLF_MAX_ITER",
    "AdmittanceMatrix",
    "PowerFlowSolution",
    "PowerFlowError",
    "PowerFlowDivergedError",
    "build_ybus",
    "build_bpp_full",
    "build_bprime_full",
    "solve_newton",
    "solve_fdlf",
    "bus_mismatch",
]

PF_TOLERANCE = 1e-8
NEWTON_MAX_ITER = 30
FDLF_MAX_ITER = 60  # linear convergence rate needs more headroom


class PowerFlowError(RuntimeError):
    pass


class PowerFlowDivergedError(PowerFlowError):
    """Solver hit its iteration cap; ``solution`` holds the last iterate."""

    def __init__(self, message: str, solution: "PowerFlowSolution"):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    """Real and imaginary parts of Ybus over the ascending-bus-id index
    space shared with :class:`~gridvolt.netmodel.BusPartition`."""

    g: np.ndarray
    b: np.ndarray
    ids: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.ids)

    def complex(self) -> np.ndarray:
        return self.g + 1j * self.b


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    """Converged (or best-effort) bus state in the internal index space."""

    vm: np.ndarray
    va: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    ids: tuple[int, ...]

    def index_of(self, bus_id: int) -> int:
        return self.ids.index(bus_id)

    def vm_at(self, bus_id: int) -> float:
        return float(self.vm[self.index_of(bus_id)])

    def va_at(self, bus_id: int) -> float:
        return float(self.va[self.index_of(bus_id)])


def _branch_admittances(br: Branch, *, ignore_r: bool, ignore_charging: bool,
                        unit_tap: bool, zero_shift: bool):
    """Two-port admittance terms (yff, yft, ytf, ytt) of one pi branch."""
    r = 0.0 if ignore_r else br.r
    if r == 0.0 and br.x == 0.0:
        raise PowerFlowError(
            f"branch {br.from_bus}-{br.to_bus} has zero impedance"
        )
    ys = 1.0 / complex(r, br.x)
    bc = 0.0 if ignore_charging else br.b_charging
    tap = 1.0 if unit_tap else br.tap
    shift = 0.0 if zero_shift else math.radians(br.shift)
    t = tap * cmath.exp(1j * shift)
    yff = (ys + 0.5j * bc) / (tap * tap)
    ytt = ys + 0.5j * bc
    yft = -ys / t.conjugate()
    ytf = -ys / t
    return yff, yft, ytf, ytt


def _assemble_ybus(net: Network, *, ignore_r=False, ignore_charging=False,
                   ignore_shunts=False, unit_tap=False,
                   zero_shift=False) -> np.ndarray:
    order = bus_order(net)
    n = len(order)
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.in_service:
            continue
        f = order[br.from_bus]
        t = order[br.to_bus]
        yff, yft, ytf, ytt = _branch_admittances(
            br, ignore_r=ignore_r, ignore_charging=ignore_charging,
            unit_tap=unit_tap, zero_shift=zero_shift)
        y[f, f] += yff
        y[f, t] += yft
        y[t, f] += ytf
        y[t, t] += ytt
    if not ignore_shunts:
        for bus in net.buses:
            i = order[bus.id]
            y[i, i] += complex(bus.g_shunt, bus.b_shunt) / net.base_mva
    return y


def build_ybus(net: Network) -> AdmittanceMatrix:
    """Standard pi-model bus admittance matrix.

    Series admittance 1/(r + jx), from-side scaled by the off-nominal tap
    with phase shift, half the line charging plus any bus shunt on the
    diagonals. Raises on an in-service zero-impedance branch.
    """
    y = _assemble_ybus(net)
    ids = tuple(sorted(b.id for b in net.buses))
    return AdmittanceMatrix(g=y.real.copy(), b=y.imag.copy(), ids=ids)


def build_bpp_full(net: Network) -> np.ndarray:
    """Full-network B'' matrix: the reactive Jacobian dQ/dV at a flat
    voltage profile under decoupling assumptions.

    Series resistance, phase shifts and off-nominal taps are dropped;
    shunts and line charging are kept. At V = 1, theta = 0 the exact
    derivative is -B_ij off the diagonal and -2 B_ii - sum_{j!=i} B_ij on
    it (the quadratic V^2 shunt terms differentiate to twice their
    admittance entries), with B = Im(Ybus) of that reduced network. This
    is the matrix behind the fast-decoupled reactive iteration and the
    Q-V sensitivity model, over all buses in internal order.
    """
    b = _assemble_ybus(net, ignore_r=True, unit_tap=True, zero_shift=True).imag
    return -(b + np.diag(b.sum(axis=1)))


def build_bprime_full(net: Network) -> np.ndarray:
    """Full-network B' matrix for the active fast-decoupled iteration:
    series branches only (charging, shunts, taps, shifts removed)."""
    return -_assemble_ybus(net, ignore_charging=True,
                           ignore_shunts=True, unit_tap=True,
                           zero_shift=True).imag


def _scheduled_injections(net: Network, order: dict[int, int]):
    n = len(order)
    p = np.zeros(n)
    q = np.zeros(n)
    for bus in net.buses:
        i = order[bus.id]
        p[i] -= bus.p_load / net.base_mva
        q[i] -= bus.q_load / net.base_mva
    for gen in net.generators:
        if gen.in_service:
            p[order[gen.bus]] += gen.p_gen / net.base_mva
    return p, q


def _start_state(net: Network, order: dict[int, int]):
    n = len(order)
    vm = np.ones(n)
    va = np.zeros(n)
    for bus in net.buses:
        if bus.kind in (BusKind.SLACK, BusKind.PV):
            vm[order[bus.id]] = bus.v_setpoint
    return vm, va


def _power_mismatch(ybus: np.ndarray, vm, va, p_sched, q_sched):
    v = vm * np.exp(1j * va)
    s = v * np.conj(ybus @ v)
    return p_sched - s.real, q_sched - s.imag


def _mismatch_norm(dp, dq, pvpq, pq) -> float:
    worst = 0.0
    if len(pvpq):
        worst = float(np.max(np.abs(dp[pvpq])))
    if len(pq):
        worst = max(worst, float(np.max(np.abs(dq[pq]))))
    return worst


def solve_newton(net: Network, tol: float = PF_TOLERANCE,
                 max_iter: int = NEWTON_MAX_ITER) -> PowerFlowSolution:
    """Full Newton-Raphson power flow in polar coordinates.

    Flat start from the set-points (slack/PV) and 1.0 pu (PQ) at zero
    angle. On convergence the active mismatch at every non-slack bus and
    the reactive mismatch at every PQ bus are below ``tol`` (pu on the
    system base) and PV/slack magnitudes equal their set-points exactly.
    Raises :class:`PowerFlowDivergedError` after ``max_iter`` iterations.
    """
    part = partition_buses(net)
    order = part.ext_to_int
    ids = tuple(sorted(order))
    ybus = _assemble_ybus(net)
    p_sched, q_sched = _scheduled_injections(net, order)
    vm, va = _start_state(net, order)

    pvpq = np.array([i for i in range(len(ids)) if i != part.slack_idx], dtype=int)
    pq = np.array(part.pq_idx, dtype=int)
    npvpq = len(pvpq)

    dp, dq = _power_mismatch(ybus, vm, va, p_sched, q_sched)
    worst = _mismatch_norm(dp, dq, pvpq, pq)
    iterations = 0
    while worst > tol and iterations < max_iter:
        v = vm * np.exp(1j * va)
        ibus = ybus @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vn = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        ds_dvm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
        jac = np.vstack([
            np.hstack([ds_dva[np.ix_(pvpq, pvpq)].real,
                       ds_dvm[np.ix_(pvpq, pq)].real]),
            np.hstack([ds_dva[np.ix_(pq, pvpq)].imag,
                       ds_dvm[np.ix_(pq, pq)].imag]),
        ])
        rhs = np.concatenate([dp[pvpq], dq[pq]])
        step = lu_solve(jac, rhs)
        va[pvpq] += step[:npvpq]
        vm[pq] += step[npvpq:]
        iterations += 1
        dp, dq = _power_mismatch(ybus, vm, va, p_sched, q_sched)
        worst = _mismatch_norm(dp, dq, pvpq, pq)

    solution = PowerFlowSolution(vm=vm, va=va, converged=worst <= tol,
                                 iterations=iterations, max_mismatch=worst,
                                 ids=ids)
    if not solution.converged:
        raise PowerFlowDivergedError(
            f"Newton power flow did not converge in {max_iter} iterations "
            f"(max mismatch {worst:.3e} pu)", solution)
    return solution


def solve_fdlf(net: Network, tol: float = PF_TOLERANCE,
               max_iter: int = FDLF_MAX_ITER) -> PowerFlowSolution:
    """Fast-decoupled power flow (XB scheme, constant matrices).

    Same start and convergence contract as :func:`solve_newton`; the two
    solvers agree to well below table precision on the bundled cases.
    """
    part = partition_buses(net)
    order = part.ext_to_int
    ids = tuple(sorted(order))
    ybus = _assemble_ybus(net)
    p_sched, q_sched = _scheduled_injections(net, order)
    vm, va = _start_state(net, order)

    pvpq = np.array([i for i in range(len(ids)) if i != part.slack_idx], dtype=int)
    pq = np.array(part.pq_idx, dtype=int)

    bp = build_bprime_full(net)[np.ix_(pvpq, pvpq)]
    bpp = build_bpp_full(net)[np.ix_(pq, pq)]
    bp_fac = lu_factor(bp)
    bpp_fac = lu_factor(bpp) if len(pq) else None

    dp, dq = _power_mismatch(ybus, vm, va, p_sched, q_sched)
    worst = _mismatch_norm(dp, dq, pvpq, pq)
    iterations = 0
    while worst > tol and iterations < max_iter:
        # P half-iteration updates angles.
        va[pvpq] += lu_solve_factored(bp_fac, dp[pvpq] / vm[pvpq])
        dp, dq = _power_mismatch(ybus, vm, va, p_sched, q_sched)
        worst = _mismatch_norm(dp, dq, pvpq, pq)
        iterations += 1
        if worst <= tol:
            break
        # Q half-iteration updates PQ magnitudes.
        if bpp_fac is not None:
            vm[pq] += lu_solve_factored(bpp_fac, dq[pq] / vm[pq])
            dp, dq = _power_mismatch(ybus, vm, va, p_sched, q_sched)
            worst = _mismatch_norm(dp, dq, pvpq, pq)

    solution = PowerFlowSolution(vm=vm, va=va, converged=worst <= tol,
                                 iterations=iterations, max_mismatch=worst,
                                 ids=ids)
    if not solution.converged:
        raise PowerFlowDivergedError(
            f"fast-decoupled power flow did not converge in {max_iter} "
            f"iterations (max mismatch {worst:.3e} pu)", solution)
    return solution


def bus_mismatch(net: Network, vm, va):
    """Scheduled-minus-injected (P, Q) at every bus, from first principles.

    Walks the branch list with scalar complex arithmetic (no admittance
    matrix), making it an independent residual oracle for the solvers.
    The active entry at the slack bus and the reactive entries at
    slack/PV buses compare against case-file schedules that the solution
    does not enforce; callers should mask them.
    """
    order = bus_order(net)
    vm = np.asarray(vm, dtype=float)
    va = np.asarray(va, dtype=float)
    if vm.shape != (len(order),) or va.shape != (len(order),):
        raise ValueError("vm/va length must equal the bus count")

    volt = {bus.id: vm[order[bus.id]] * cmath.exp(1j * va[order[bus.id]])
            for bus in net.buses}
    p_inj = {bus.id: 0.0 for bus in net.buses}
    q_inj = {bus.id: 0.0 for bus in net.buses}

    for br in net.branches:
        if not br.in_service:
            continue
        yff, yft, ytf, ytt = _branch_admittances(
            br, ignore_r=False, ignore_charging=False, unit_tap=False,
            zero_shift=False)
        vf = volt[br.from_bus]
        vt = volt[br.to_bus]
        sf = vf * (yff * vf + yft * vt).conjugate()
        st = vt * (ytf * vf + ytt * vt).conjugate()
        p_inj[br.from_bus] += sf.real
        q_inj[br.from_bus] += sf.imag
        p_inj[br.to_bus] += st.real
        q_inj[br.to_bus] += st.imag

    for bus in net.buses:
        v2 = abs(volt[bus.id]) ** 2
        p_inj[bus.id] += v2 * bus.g_shunt / net.base_mva
        q_inj[bus.id] -= v2 * bus.b_shunt / net.base_mva

    p_sched, q_sched = _scheduled_injections(net, order)
    dp = np.zeros(len(order))
    dq = np.zeros(len(order))
    for bus in net.buses:
        i = order[bus.id]
        dp[i] = p_sched[i] - p_inj[bus.id]
        dq[i] = q_sched[i] - q_inj[bus.id]
    return dp, dq
