"""Fixed-step closed-loop simulation.

One control step samples the plant, runs the allocator and the body-level
controller, updates the parameter estimates, and advances the plant with
RK4 while the torques are held.  Several runs that differ only in the
contact-channel inertia and the wall stiffness can be stepped together as a
batch; every run keeps its own state and nothing couples them.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..adaptation import nal_increment
from ..allocator import (
    AllocatorState,
    derive_gains,
    psi_on_surface,
    psi_rate,
    psi_step,
    required_cartesian,
    required_joint,
    sliding_surface,
)
from ..body import f_inv, f_map
from ..chain import jacobian_from_frames, pose_of
from ..controller import (
    EnergyAccumulator,
    actual_forces,
    recompose,
    stability_function,
    stability_function_from_errors,
)
from ..spatial import mv
from .config import ExperimentConfig
from .fastplant import FastChainPlant
from .plant import ChainPlant, kinematics
from .wall import VirtualWall, wall_scalar

DIVERGENCE_RATE = 1e3  # rad/s or m/s
DIVERGENCE_FORCE = 1e7  # N


@dataclass(frozen=True)
class Variant:
    """Per-run overrides of the contact-channel inertia and the wall stiffness."""

    m_d: Optional[float] = None
    K_e: Optional[float] = None


@dataclass
class Tuning:
    """Allocator matrices stacked over runs, shape ``(B, 6, 6)``."""

    M_d: np.ndarray
    D_d: np.ndarray
    K_d: np.ndarray
    Lambda: np.ndarray
    theta_psi: np.ndarray
    theta_e: np.ndarray
    Gamma_p: np.ndarray
    Gamma_v: np.ndarray
    Gamma_f: np.ndarray


def wrap_angles(e):
    out = np.array(e, dtype=float)
    out[..., 3:] = (out[..., 3:] + math.pi) % (2 * math.pi) - math.pi
    return out


class ForceSensor:
    """Measured task wrench: optional pure delay, first-order low-pass and noise."""

    def __init__(self, shape, dt: float, cutoff_hz: float, delay_steps: int, noise_std: float, seed: int):
        self.alpha = 1.0 - math.exp(-2 * math.pi * cutoff_hz * dt) if cutoff_hz > 0 else 1.0
        self.buffer = [np.zeros(shape) for _ in range(delay_steps)]
        self.state: Optional[np.ndarray] = None
        self.noise_std = noise_std
        self.rng = np.random.default_rng(seed)

    def measure(self, wrench):
        if self.buffer:
            self.buffer.append(wrench)
            wrench = self.buffer.pop(0)
        if self.state is None:
            self.state = np.array(wrench, dtype=float)
        else:
            self.state = self.state + self.alpha * (wrench - self.state)
        out = self.state
        if self.noise_std > 0:
            out = out + self.rng.normal(0.0, self.noise_std, size=out.shape)
        return out


@dataclass
class RunStats:
    """Online per-run diagnostics (arrays over the batch)."""

    B: int
    in_contact: np.ndarray = None
    contact_started: np.ndarray = None
    first_contact: np.ndarray = None
    onset_step: np.ndarray = None
    bounces: np.ndarray = None
    min_enet_contact: np.ndarray = None
    pre_err2: np.ndarray = None
    pre_n: np.ndarray = None
    post_err2: np.ndarray = None
    post_n: np.ndarray = None
    max_ups_after: np.ndarray = None
    max_ups_sustained: np.ndarray = None
    S_int: np.ndarray = None
    min_S_int: np.ndarray = None
    max_S: np.ndarray = None
    max_S_mismatch: np.ndarray = None
    min_L_eig: np.ndarray = None
    fallbacks: np.ndarray = None
    saturations: np.ndarray = None
    diverged: np.ndarray = None
    diverged_step: np.ndarray = None
    reason: List[str] = field(default_factory=list)

    def __post_init__(self):
        B = self.B
        z = lambda: np.zeros(B)
        self.in_contact = np.zeros(B, bool)
        self.contact_started = np.zeros(B, bool)
        self.first_contact = np.full(B, -1)
        self.onset_step = np.full(B, -1)
        self.bounces = np.zeros(B, int)
        self.min_enet_contact = np.full(B, np.inf)
        self.pre_err2, self.pre_n, self.post_err2, self.post_n = z(), z(), z(), z()
        self.max_ups_after, self.max_ups_sustained = z(), z()
        self.S_int, self.min_S_int, self.max_S, self.max_S_mismatch = z(), z(), z(), z()
        self.min_L_eig = np.full(B, np.inf)
        self.fallbacks = np.zeros(B, int)
        self.saturations = np.zeros(B, int)
        self.diverged = np.zeros(B, bool)
        self.diverged_step = np.full(B, -1)
        self.reason = [""] * B


class Simulator:
    """Batched closed-loop simulator for one experiment configuration.

    ``record`` selects the telemetry kept per step: ``"full"`` keeps every
    column; ``"contact"`` keeps only what the contact statistics need.
    """

    def __init__(self, cfg: ExperimentConfig, variants: Sequence[Variant] = (Variant(),),
                 record: str = "full"):
        self.cfg = cfg
        self.variants = list(variants)
        self.B = B = len(self.variants)
        self.record = record
        self.dt = cfg.dt
        self.channel = cfg.wall.axis if cfg.wall is not None else cfg.sweep.channel

        specs = [cfg.spec if v.m_d is None else cfg.spec.with_inertia(self.channel, v.m_d) for v in self.variants]
        gains = [derive_gains(s) for s in specs]
        stack = lambda objs, name: np.stack([getattr(o, name) for o in objs])
        self.tuning = Tuning(*(stack(specs, k) for k in ("M_d", "D_d", "K_d", "Lambda", "theta_psi", "theta_e")),
                             *(stack(gains, k) for k in ("Gamma_p", "Gamma_v", "Gamma_f")))
        self.wall: Optional[VirtualWall] = None
        if cfg.wall is not None:
            K = np.array([cfg.wall.K_e if v.K_e is None else v.K_e for v in self.variants], dtype=float)
            self.wall = VirtualWall(K, cfg.wall.z_e, cfg.wall.axis, cfg.wall.side, cfg.wall.bilateral)
        self.sensor = ForceSensor((B, 6), cfg.dt, cfg.force_filter_hz, cfg.force_delay_steps,
                                  cfg.force_noise_std, cfg.seed)
        self.stats = RunStats(B)
        self.energy = EnergyAccumulator((B,))
        self.t = 0.0
        self.k = 0
        self.rows: Dict[str, List[np.ndarray]] = {}
        self.pose = np.broadcast_to(cfg.pose0, (B, 6)).copy()

        if cfg.plant == "chain":
            m = cfg.model
            self.model = m
            self.plant = ChainPlant(m)
            self.fast_plant = FastChainPlant(m)
            self.q = np.broadcast_to(cfg.q0, (B, m.n)).copy()
            self.qdot = np.broadcast_to(cfg.qdot0, (B, m.n)).copy()
            L0 = cfg.L0_scale * np.eye(4) if cfg.L0_model_factor is None else cfg.L0_model_factor * f_map(m.phi)
            self.L_hat = np.broadcast_to(L0, (B, m.n, 4, 4)).copy()
            self.K_A = np.broadcast_to(cfg.gains.K_A, (m.n, 6, 6))
            self.work = np.zeros((B, 3))
            self.E0 = self.plant.energy(self.q, self.qdot)
            self.psi = np.zeros((B, 6))
            if cfg.psi_init == "on_surface":
                kin = kinematics(m, self.q)
                jac = jacobian_from_frames(m, kin.Rw, kin.pw, self.qdot, self.q)
                X = pose_of(kin.Rw[:, -1], kin.pw[:, -1])
                Xd, dXd, _ = self.reference(0.0)
                self.psi = psi_on_surface(self.tuning, wrap_angles(X - Xd), mv(jac.J, self.qdot) - dXd)
        else:
            self.Xdot = np.zeros((B, 6))
            self.psi = np.zeros((B, 6))
            if cfg.psi_init == "on_surface":
                Xd, dXd, _ = self.reference(0.0)
                self.psi = psi_on_surface(self.tuning, self.pose - Xd, self.Xdot - dXd)

    # ------------------------------------------------------------------
    def reference(self, t: float):
        if self.cfg.plan is None:
            z = np.zeros(6)
            hold = self.cfg.pose0 if self.cfg.setpoint is None else self.cfg.setpoint
            return hold.copy(), z, z
        return self.cfg.plan(t)

    def _pulse(self, t: float):
        w = np.zeros(6)
        for p in self.cfg.pulses:
            if p.t_on <= t < p.t_off:
                w = w + p.wrench
        return w

    def _true_contact(self, pose):
        """Task wrench of the wall at ``pose`` and the scalar wall force."""
        if self.wall is None:
            return np.zeros(pose.shape[:-1] + (6,)), np.zeros(pose.shape[:-1])
        f = wall_scalar(self.wall, pose)
        w = np.zeros(pose.shape[:-1] + (6,))
        w[..., self.wall.axis] = f
        return w, f

    def _log(self, name: str, value):
        self.rows.setdefault(name, []).append(np.array(value, dtype=float).reshape(self.B, -1))

    def _alive(self):
        return ~self.stats.diverged

    # ------------------------------------------------------------------
    def step(self):
        cfg, dt, t, st = self.cfg, self.dt, self.t, self.stats
        tun = self.tuning
        Xd, dXd, ddXd = self.reference(t)

        if cfg.plant == "chain":
            m = self.model
            kin = kinematics(m, self.q)
            jac = jacobian_from_frames(m, kin.Rw, kin.pw, self.qdot, self.q)
            X = pose_of(kin.Rw[:, -1], kin.pw[:, -1])
            Xdot = mv(jac.J, self.qdot)
            singular = jac.singular
        else:
            X, Xdot = self.pose, self.Xdot
            singular = np.zeros(self.B, bool)

        wall_w, f_c = self._true_contact(X)
        pulse = self._pulse(t)
        F_meas = self.sensor.measure(wall_w + pulse)
        contact = f_c != 0.0 if self.wall is not None else np.zeros(self.B, bool)
        F_d = np.where(contact[:, None], cfg.desired_contact_wrench, 0.0)
        e = wrap_angles(X - Xd)
        edot = Xdot - dXd
        e_f = F_meas - F_d
        alloc = AllocatorState(self.psi, e, edot, e_f)
        ups = sliding_surface(alloc, tun)
        Xr_dot, Xr_ddot = required_cartesian(alloc, tun, tun, Xd, dXd, ddXd)
        S = stability_function(ups, F_d, F_meas)
        S_alt = stability_function_from_errors(edot, e, self.psi, tun.theta_e, tun.theta_psi, F_d, F_meas)
        v_c = Xdot[:, self.channel]

        self._update_stats(t, contact, e, ups, S, S_alt, f_c * v_c)

        if self.record == "full":
            self._log("t", np.full(self.B, t))
            if cfg.plant == "chain":
                self._log("q", self.q)
                self._log("qdot", self.qdot)
            for name, val in (("X", X), ("Xd", Xd + 0 * X), ("e", e), ("ef", e_f), ("ups", ups),
                              ("psi", self.psi), ("Xr_ddot", Xr_ddot)):
                self._log(name, val)
        self._log("f_c", f_c)
        self._log("f_sensed", F_meas[:, self.channel])
        self._log("v", v_c)
        self._log("contact", contact)
        self._log("e_c", e[:, self.channel])
        if self.record == "full":
            for name, val in (("S", S), ("S_int", st.S_int), ("E_net", self.energy.net),
                              ("E_absorbed", self.energy.absorbed), ("E_injected", self.energy.injected)):
                self._log(name, val)

        if cfg.plant == "chain":
            self._step_chain(kin, jac, X, alloc, Xr_dot, Xr_ddot, F_meas, F_d)
        else:
            self._step_ideal(t, alloc, e_f)
        self._check_divergence(singular)
        self.t = (self.k + 1) * dt
        self.k += 1

    def _tool_wrench(self, Rw_tool, task_wrench):
        """World-aligned task wrench at the tool point, expressed in tool axes."""
        Rt = np.swapaxes(Rw_tool, -1, -2)
        return np.concatenate([mv(Rt, task_wrench[..., :3]), mv(Rt, task_wrench[..., 3:])], axis=-1)

    def _step_chain(self, kin, jac, X, alloc, Xr_dot, Xr_ddot, F_meas, F_d):
        cfg, dt, m = self.cfg, self.dt, self.model
        qdot_r, qddot_r, _ = required_joint(m, self.q, self.qdot, Xr_dot, Xr_ddot, jac.J, jac.Jdot)
        task_r = F_d if cfg.tip_force == "desired" else F_meas
        tip_r = self._tool_wrench(kin.Rw[:, -1], task_r)
        phi_hat = f_inv(self.L_hat, check=False)
        rec = recompose(m, kin.R_rel, kin.p_rel, kin.Rw, self.qdot, qdot_r, qddot_r, phi_hat, self.K_A, tip_r)
        tau = rec.tau
        if cfg.torque_limit is not None:
            clipped = np.clip(tau, -cfg.torque_limit, cfg.torque_limit)
            self.stats.saturations += np.any(clipped != tau, axis=-1) & self._alive()
            tau = clipped
        eta = np.einsum("...ij,...i->...j", rec.Y, rec.V_r - rec.V)

        wall = self.wall if cfg.wall_physical else None
        pulse = self._pulse(self.t)
        alive = self._alive()
        q_new, qd_new, work, ddq0 = self.fast_plant.step(self.q, self.qdot, tau, dt, wall, pulse, alive)

        if self.record == "full":
            self._log("tau", tau)
            self._log("Lmin", np.linalg.eigvalsh(self.L_hat)[..., 0])
            # virtual power flow at every cutting point, using the true transmitted wrenches
            V, dV = _actual_motion(m, kin, self.qdot, ddq0)
            task_now = (self._true_contact(X)[0] if wall is not None else 0.0) + pulse
            tip_actual = self._tool_wrench(kin.Rw[:, -1], task_now)
            F_act = actual_forces(m, kin.R_rel, kin.p_rel, kin.Rw, V, dV, tip_actual)
            p = np.einsum("...i,...i->...", rec.V_r - V, rec.F_r - F_act)
            self._log("vpf", p)
            self._log("W", self.work)
            self._log("E_mech", self.plant.energy(self.q, self.qdot))

        L_new, fell = nal_increment(self.L_hat, eta, cfg.gamma, dt)
        psi_new = psi_step(alloc, self.tuning, self.tuning, dt)
        keep = alive[:, None]
        self.q = np.where(keep, q_new, self.q)
        self.qdot = np.where(keep, qd_new, self.qdot)
        self.work = self.work + np.where(keep, work, 0.0)
        self.L_hat = np.where(keep[:, :, None, None], L_new, self.L_hat)
        self.psi = np.where(keep, psi_new, self.psi)
        self.stats.fallbacks += fell.sum(axis=-1) * alive
        self.stats.min_L_eig = np.minimum(self.stats.min_L_eig, np.linalg.eigvalsh(self.L_hat)[..., 0].min(-1))

    def _step_ideal(self, t, alloc, e_f):
        """Cartesian double integrator driven by the required acceleration.

        With ``ideal_feedback = 0`` the required acceleration is realised
        exactly; a positive value adds ``-k (dX - dX_r)``, which pulls the
        sliding variable to zero at rate ``k``.
        """
        dt, tun, k_fb = self.dt, self.tuning, self.cfg.ideal_feedback

        def rates(tt, X, Xdot, psi):
            Xd, dXd, ddXd = self.reference(tt)
            s = AllocatorState(psi, X - Xd, Xdot - dXd, e_f)
            dpsi = psi_rate(psi, s.e_x, s.e_x_dot, e_f, tun, tun)
            Xr_dot, Xr_ddot = required_cartesian(s, tun, tun, Xd, dXd, ddXd)
            return Xdot, Xr_ddot - k_fb * (Xdot - Xr_dot), dpsi

        y = (self.pose, self.Xdot, self.psi)
        k1 = rates(t, *y)
        k2 = rates(t + dt / 2, *(a + dt / 2 * b for a, b in zip(y, k1)))
        k3 = rates(t + dt / 2, *(a + dt / 2 * b for a, b in zip(y, k2)))
        k4 = rates(t + dt, *(a + dt * b for a, b in zip(y, k3)))
        new = [a + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]
        keep = self._alive()[:, None]
        self.pose, self.Xdot, self.psi = (np.where(keep, n, o) for n, o in zip(new, y))

    # ------------------------------------------------------------------
    def _update_stats(self, t, contact, e, ups, S, S_alt, power):
        st, cfg = self.stats, self.cfg
        alive = self._alive()
        self.energy.add(power, self.dt, active=alive)
        was = st.in_contact
        onset = contact & ~was
        release = was & ~contact
        st.first_contact = np.where(onset & (st.first_contact < 0), self.k, st.first_contact)
        st.onset_step = np.where(onset, self.k, st.onset_step)
        st.bounces += (release & alive).astype(int)
        st.contact_started |= contact
        st.in_contact = contact
        st.min_enet_contact = np.where(contact & alive, np.minimum(st.min_enet_contact, self.energy.net),
                                       st.min_enet_contact)
        err2 = e[:, self.channel] ** 2
        pre = ~st.contact_started
        post = st.contact_started & ~contact
        st.pre_err2 += np.where(pre, err2, 0.0)
        st.pre_n += pre
        # post-release window restarts at every new contact
        st.post_err2 = np.where(onset, 0.0, st.post_err2 + np.where(post, err2, 0.0))
        st.post_n = np.where(onset, 0.0, st.post_n + post)
        u = np.abs(ups).max(axis=-1)
        if t >= cfg.upsilon_transient - 1e-12:
            st.max_ups_after = np.where(alive, np.maximum(st.max_ups_after, u), st.max_ups_after)
        held = contact & (self.k - st.onset_step >= int(round(cfg.upsilon_transient / self.dt)))
        st.max_ups_sustained = np.where(held & alive, np.maximum(st.max_ups_sustained, u), st.max_ups_sustained)
        if self.k > 0:
            st.S_int = st.S_int + 0.5 * self.dt * (self._S_last + S)
        self._S_last = S
        st.min_S_int = np.minimum(st.min_S_int, st.S_int)
        st.max_S = np.maximum(st.max_S, np.abs(S))
        st.max_S_mismatch = np.maximum(st.max_S_mismatch, np.abs(S - S_alt))

    def _check_divergence(self, singular):
        st = self.stats
        if self.cfg.plant == "chain":
            bad = ~np.all(np.isfinite(self.q), -1) | ~np.all(np.isfinite(self.qdot), -1) \
                | (np.abs(self.qdot).max(-1) > DIVERGENCE_RATE)
        else:
            bad = ~np.all(np.isfinite(self.Xdot), -1) | (np.abs(self.Xdot).max(-1) > DIVERGENCE_RATE)
        if self.wall is not None:
            bad |= np.abs(self.rows["f_c"][-1][:, 0]) > DIVERGENCE_FORCE
        bad |= singular
        new = bad & ~st.diverged
        for b in np.flatnonzero(new):
            st.reason[b] = "orientation representation singularity" if singular[b] else "state diverged"
        st.diverged_step = np.where(new, self.k, st.diverged_step)
        st.diverged |= bad

    # ------------------------------------------------------------------
    def run(self, n_steps: Optional[int] = None) -> "BatchResult":
        n = self.cfg.n_steps if n_steps is None else n_steps
        for _ in range(n):
            self.step()
        return BatchResult(self)


def _actual_motion(model, kin, qdot, qddot):
    from ..chain import propagate_required
    return propagate_required(model, kin.R_rel, kin.p_rel, qdot, qdot, qddot)


class BatchResult:
    """Telemetry and per-run summaries after a batched run."""

    def __init__(self, sim: Simulator):
        self.sim = sim
        self.cfg = sim.cfg
        self.variants = sim.variants
        self.series = {k: np.stack(v) for k, v in sim.rows.items()}  # (steps, B, width)
        if sim.cfg.plant == "chain":
            self.final_work = sim.work.copy()
            self.energy_drift = sim.plant.energy(sim.q, sim.qdot) - sim.E0 - (
                sim.work[:, 0] - sim.work[:, 1] - sim.work[:, 2])

    def trace(self, name: str, run: int = 0) -> np.ndarray:
        arr = self.series[name][:, run, :]
        return arr[:, 0] if arr.shape[1] == 1 else arr

    def summary(self, run: int = 0) -> Dict[str, object]:
        st, sim = self.sim.stats, self.sim
        rms = lambda s, n: float(math.sqrt(s / n)) if n > 0 else 0.0
        pre = rms(st.pre_err2[run], st.pre_n[run])
        free_n = st.pre_n[run] + st.post_n[run]
        out: Dict[str, object] = {
            "m_d": float(sim.tuning.M_d[run, sim.channel, sim.channel]),
            "K_e": None if sim.wall is None else float(sim.wall.K_e[run]),
            "steps": sim.k,
            "diverged": bool(st.diverged[run]),
            "diverged_step": int(st.diverged_step[run]),
            "divergence_reason": st.reason[run],
            "contact_made": bool(st.contact_started[run]),
            "first_contact_time": None if st.first_contact[run] < 0 else float(st.first_contact[run] * sim.dt),
            "bounces": int(st.bounces[run]),
            "E_net": float(sim.energy.net[run]),
            "E_absorbed": float(sim.energy.absorbed[run]),
            "E_injected": float(sim.energy.injected[run]),
            "min_E_net_in_contact": None if not np.isfinite(st.min_enet_contact[run]) else float(st.min_enet_contact[run]),
            "S_integral": float(st.S_int[run]),
            "min_S_integral": float(st.min_S_int[run]),
            "max_abs_S": float(st.max_S[run]),
            "max_S_form_mismatch": float(st.max_S_mismatch[run]),
            "max_upsilon_after_transient": float(st.max_ups_after[run]),
            "max_upsilon_sustained_contact": float(st.max_ups_sustained[run]),
            "rms_free_error_pre_contact": pre,
            "rms_free_error": rms(st.pre_err2[run] + st.post_err2[run], free_n),
        }
        if sim.cfg.plant == "chain":
            out.update({
                "min_L_hat_eigenvalue": float(st.min_L_eig[run]),
                "spd_fallbacks": int(st.fallbacks[run]),
                "torque_saturation_steps": int(st.saturations[run]),
                "work_actuators": float(self.final_work[run, 0]),
                "work_friction": float(self.final_work[run, 1]),
                "work_tool": float(self.final_work[run, 2]),
                "energy_balance_error": float(self.energy_drift[run]),
            })
        return out

    def passive(self, run: int, max_bounces: int) -> bool:
        st = self.sim.stats
        if st.diverged[run] or not st.contact_started[run]:
            return False
        return bool(self.sim.energy.net[run] > 0 and st.bounces[run] <= max_bounces)


def simulate(cfg: ExperimentConfig, variants: Sequence[Variant] = (Variant(),), record: str = "full") -> BatchResult:
    return Simulator(cfg, variants, record).run()
