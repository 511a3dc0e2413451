"""Compiled inner loops: trap forces, adaptive Runge-Kutta, collision chains.

Everything here works on flat float64 state ``y`` = (ion pos, ion vel,
atom pos, atom vel) and a parameter vector ``P`` whose layout is frozen by
the index constants below.  The public modules build ``P`` via
``TrapParams.kernel_params`` and never index it by hand.

The stepper is an embedded Dormand-Prince 5(4) pair with a hard step-size
cap (resolving the drive in full-RF mode) and an extra cap shrink during
close ion-atom encounters; error control does the rest.
"""

import math

import numpy as np
from numba import config as _numba_config
from numba import njit, prange

# the portable threading layer; avoids depending on the system TBB version
_numba_config.THREADING_LAYER = "workqueue"

# --- parameter vector layout -------------------------------------------------
IDX_MODE = 0  # 0.0 secular pseudopotential, 1.0 full RF
IDX_OMEGA_RF = 1
IDX_M_ION = 2
IDX_CHARGE = 3
IDX_OMEGA_X = 4  # secular frequencies (rad/s), bookkeeping in full-RF mode
IDX_OMEGA_Y = 5
IDX_OMEGA_Z = 6
IDX_QX = 7  # Mathieu q for x; y carries -q by construction but is stored
IDX_QY = 8
IDX_AX = 9
IDX_AY = 10
IDX_AZ = 11
IDX_EDC_X = 12  # stray uniform static field, V/m
IDX_EDC_Y = 13
IDX_EDC_Z = 14
IDX_AQUAD = 15  # quadrature RF field amplitude, V/m (oscillates as sin)
IDX_UQ_X = 16  # unit vector of the quadrature field
IDX_UQ_Y = 17
IDX_UQ_Z = 18
IDX_GAX = 19  # axial RF residual gradient, V/m per m (oscillates as cos)
IDX_ZNULL = 20  # axial RF null position, m
IDX_C4 = 21
IDX_C6 = 22
IDX_M_ATOM = 23
IDX_R_REFINE = 24  # shrink the step cap inside this pair separation
IDX_R_FLOOR = 25  # abort if the pair separation falls below this

# Fourier-lattice blocks for the exact secular decomposition (full-RF mode).
# Three real series of length NLAT per axis, indexed n = -NMAX..NMAX:
#   c_n  periodic Floquet-mode factor, c_0 = 1
#   R_n  response to unit acceleration exp(i Omega t)
#   D_n  periodic orbit under unit constant acceleration
NMAX = 8
NLAT = 2 * NMAX + 1
IDX_CMODE = 26  # 3 * NLAT floats, axis-major
IDX_RESP = IDX_CMODE + 3 * NLAT
IDX_STATIC = IDX_RESP + 3 * NLAT
NPARAMS = IDX_STATIC + 3 * NLAT

# propagation status codes
ST_REACHED_TEND = 0
ST_ATOM_EXITED = 1
ST_HIT_FLOOR = 2
ST_STEP_UNDERFLOW = 3


@njit(cache=True)
def _deriv(t, y, dy, P, has_atom):
    """Fill dy with d(state)/dt."""
    m_i = P[IDX_M_ION]
    qe = P[IDX_CHARGE]
    dy[0] = y[3]
    dy[1] = y[4]
    dy[2] = y[5]
    if P[IDX_MODE] == 0.0:
        ax = -P[IDX_OMEGA_X] * P[IDX_OMEGA_X] * y[0] + qe / m_i * P[IDX_EDC_X]
        ay = -P[IDX_OMEGA_Y] * P[IDX_OMEGA_Y] * y[1] + qe / m_i * P[IDX_EDC_Y]
        az = -P[IDX_OMEGA_Z] * P[IDX_OMEGA_Z] * y[2] + qe / m_i * P[IDX_EDC_Z]
    else:
        om = P[IDX_OMEGA_RF]
        c = math.cos(om * t)
        s = math.sin(om * t)
        pref = 0.25 * om * om
        eom = qe / m_i
        ax = (
            -pref * (P[IDX_AX] - 2.0 * P[IDX_QX] * c) * y[0]
            + eom * (P[IDX_EDC_X] + P[IDX_AQUAD] * P[IDX_UQ_X] * s)
        )
        ay = (
            -pref * (P[IDX_AY] - 2.0 * P[IDX_QY] * c) * y[1]
            + eom * (P[IDX_EDC_Y] + P[IDX_AQUAD] * P[IDX_UQ_Y] * s)
        )
        az = (
            -pref * P[IDX_AZ] * y[2]
            + eom
            * (
                P[IDX_EDC_Z]
                + P[IDX_AQUAD] * P[IDX_UQ_Z] * s
                + P[IDX_GAX] * (y[2] - P[IDX_ZNULL]) * c
            )
        )
    if has_atom:
        dx = y[0] - y[6]
        dy1 = y[1] - y[7]
        dz = y[2] - y[8]
        r2 = dx * dx + dy1 * dy1 + dz * dz
        r = math.sqrt(r2)
        inv_r = 1.0 / r
        inv_r2 = inv_r * inv_r
        inv_r5 = inv_r2 * inv_r2 * inv_r
        # dV/dr = C4 (2/r^5 - 6 C6 / r^7); force on ion = -dV/dr * rhat
        dvdr = P[IDX_C4] * (2.0 * inv_r5 - 6.0 * P[IDX_C6] * inv_r5 * inv_r2)
        fac = -dvdr * inv_r
        fx = fac * dx
        fy = fac * dy1
        fz = fac * dz
        m_a = P[IDX_M_ATOM]
        ax += fx / m_i
        ay += fy / m_i
        az += fz / m_i
        dy[6] = y[9]
        dy[7] = y[10]
        dy[8] = y[11]
        dy[9] = -fx / m_a
        dy[10] = -fy / m_a
        dy[11] = -fz / m_a
    else:
        dy[6] = 0.0
        dy[7] = 0.0
        dy[8] = 0.0
        dy[9] = 0.0
        dy[10] = 0.0
        dy[11] = 0.0
    dy[3] = ax
    dy[4] = ay
    dy[5] = az


@njit(cache=True)
def _pair_r(y):
    dx = y[0] - y[6]
    dy1 = y[1] - y[7]
    dz = y[2] - y[8]
    return math.sqrt(dx * dx + dy1 * dy1 + dz * dz)


@njit(cache=True)
def _propagate(y, t0, t_end, P, has_atom, rtol, atol_pos, atol_vel, max_step, exit_r2):
    """Advance y in place from t0 toward t_end with a DP5(4) pair.

    Stops early when the atom leaves the injection sphere (exit_r2 > 0,
    measured from the trap centre) or the pair separation hits the floor.
    Returns (t, status, min_r).
    """
    n = 12
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    ytmp = np.empty(n)
    ynew = np.empty(n)

    t = t0
    min_r = 1e300
    if has_atom:
        min_r = _pair_r(y)
        if min_r <= P[IDX_R_FLOOR]:
            return t, ST_HIT_FLOOR, min_r

    _deriv(t, y, k1, P, has_atom)
    h = max_step
    have_fsal = True

    while t < t_end:
        cap = max_step
        if has_atom:
            r_now = _pair_r(y)
            if r_now < P[IDX_R_REFINE]:
                frac = r_now / P[IDX_R_REFINE]
                shrink = frac * frac
                if shrink < 1e-4:
                    shrink = 1e-4
                cap = max_step * shrink
        if h > cap:
            h = cap
        if t + h > t_end:
            h = t_end - t
        if h < 1e-19:
            return t, ST_STEP_UNDERFLOW, min_r

        if not have_fsal:
            _deriv(t, y, k1, P, has_atom)
            have_fsal = True

        # Dormand-Prince stages
        for i in range(n):
            ytmp[i] = y[i] + h * 0.2 * k1[i]
        _deriv(t + 0.2 * h, ytmp, k2, P, has_atom)
        for i in range(n):
            ytmp[i] = y[i] + h * (0.075 * k1[i] + 0.225 * k2[i])
        _deriv(t + 0.3 * h, ytmp, k3, P, has_atom)
        for i in range(n):
            ytmp[i] = y[i] + h * (
                (44.0 / 45.0) * k1[i] - (56.0 / 15.0) * k2[i] + (32.0 / 9.0) * k3[i]
            )
        _deriv(t + 0.8 * h, ytmp, k4, P, has_atom)
        for i in range(n):
            ytmp[i] = y[i] + h * (
                (19372.0 / 6561.0) * k1[i]
                - (25360.0 / 2187.0) * k2[i]
                + (64448.0 / 6561.0) * k3[i]
                - (212.0 / 729.0) * k4[i]
            )
        _deriv(t + (8.0 / 9.0) * h, ytmp, k5, P, has_atom)
        for i in range(n):
            ytmp[i] = y[i] + h * (
                (9017.0 / 3168.0) * k1[i]
                - (355.0 / 33.0) * k2[i]
                + (46732.0 / 5247.0) * k3[i]
                + (49.0 / 176.0) * k4[i]
                - (5103.0 / 18656.0) * k5[i]
            )
        _deriv(t + h, ytmp, k6, P, has_atom)
        for i in range(n):
            ynew[i] = y[i] + h * (
                (35.0 / 384.0) * k1[i]
                + (500.0 / 1113.0) * k3[i]
                + (125.0 / 192.0) * k4[i]
                - (2187.0 / 6784.0) * k5[i]
                + (11.0 / 84.0) * k6[i]
            )
        _deriv(t + h, ynew, k7, P, has_atom)

        # embedded error estimate
        err = 0.0
        for i in range(n):
            ei = h * (
                (71.0 / 57600.0) * k1[i]
                - (71.0 / 16695.0) * k3[i]
                + (71.0 / 1920.0) * k4[i]
                - (17253.0 / 339200.0) * k5[i]
                + (22.0 / 525.0) * k6[i]
                - (1.0 / 40.0) * k7[i]
            )
            amax = abs(y[i])
            if abs(ynew[i]) > amax:
                amax = abs(ynew[i])
            atol = atol_pos if (i % 6) < 3 else atol_vel
            sc = atol + rtol * amax
            q = ei / sc
            err += q * q
        err = math.sqrt(err / n)

        if err <= 1.0:
            t += h
            for i in range(n):
                y[i] = ynew[i]
                k1[i] = k7[i]
            if has_atom:
                r_now = _pair_r(y)
                if r_now < min_r:
                    min_r = r_now
                if r_now <= P[IDX_R_FLOOR]:
                    return t, ST_HIT_FLOOR, min_r
                if exit_r2 > 0.0:
                    ax2 = y[6] * y[6] + y[7] * y[7] + y[8] * y[8]
                    if ax2 > exit_r2:
                        return t, ST_ATOM_EXITED, min_r
        else:
            have_fsal = True  # k1 still valid at (t, y)

        # step-size update
        if err == 0.0:
            fac = 5.0
        else:
            fac = 0.9 * err ** (-0.2)
            if fac < 0.2:
                fac = 0.2
            elif fac > 5.0:
                fac = 5.0
        h = h * fac
        if h > max_step:
            h = max_step

    return t, ST_REACHED_TEND, min_r


@njit(cache=True)
def _axis_forced_response(P, axis, t, amp_sin, amp_cos, amp_dc):
    """(x, v) of the periodic forced orbit on one axis.

    amp_sin drives as sin(Omega t), amp_cos as cos(Omega t), amp_dc is a
    constant acceleration; all responses come from the precomputed real
    Fourier series R_n (oscillating drives) and D_n (static drive).
    """
    om = P[IDX_OMEGA_RF]
    base_r = IDX_RESP + axis * NLAT
    base_d = IDX_STATIC + axis * NLAT
    x = amp_dc * P[base_d + NMAX]
    v = 0.0
    for n in range(1, NMAX + 1):
        cn = math.cos(n * om * t)
        sn = math.sin(n * om * t)
        rp = P[base_r + NMAX + n]
        rm = P[base_r + NMAX - n]
        dsym = P[base_d + NMAX + n] + P[base_d + NMAX - n]
        x += amp_sin * (rp - rm) * sn + (amp_cos * (rp + rm) + amp_dc * dsym) * cn
        v += (
            amp_sin * (rp - rm) * n * om * cn
            - (amp_cos * (rp + rm) + amp_dc * dsym) * n * om * sn
        )
    return x, v


@njit(cache=True)
def _axis_secular_energy(P, axis, t, x_cl, v_cl):
    """Project one axis onto its Floquet mode; return the secular energy (J).

    With Phi(t) = sum_n c_n exp(i(w + n Omega)t) and A the complex mode
    amplitude, x_cl = Re[A Phi] and v_cl = Re[A Phi'] invert (Wronskian is
    constant) to A = i(x Phi'* - v Phi*)/(S0 S1); the energy of the secular
    carrier is then (m/2) w^2 |A|^2, free of micromotion ripple.
    """
    om = P[IDX_OMEGA_RF]
    w = P[IDX_OMEGA_X + axis]
    base_c = IDX_CMODE + axis * NLAT
    re_p = 0.0
    im_p = 0.0
    re_pd = 0.0
    im_pd = 0.0
    s0 = 0.0
    s1 = 0.0
    for n in range(-NMAX, NMAX + 1):
        cn = P[base_c + NMAX + n]
        if cn == 0.0:
            continue
        wn = w + n * om
        cph = math.cos(wn * t)
        sph = math.sin(wn * t)
        re_p += cn * cph
        im_p += cn * sph
        re_pd -= cn * wn * sph
        im_pd += cn * wn * cph
        s0 += cn
        s1 += cn * wn
    norm = s0 * s1
    re_a = (x_cl * im_pd - v_cl * im_p) / norm
    im_a = (x_cl * re_pd - v_cl * re_p) / norm
    return 0.5 * P[IDX_M_ION] * w * w * (re_a * re_a + im_a * im_a)


@njit(cache=True)
def _secular_energy_now(y, t, P, e_out):
    """Per-axis secular energy (J) of the ion.

    Full-RF mode strips the coherent forced orbit (quadrature and axial RF
    drives, static stray push) and projects the remainder onto the exact
    Floquet mode of each axis.  Secular mode reads the oscillator energy
    about the displaced equilibrium directly.
    """
    m_i = P[IDX_M_ION]
    qe = P[IDX_CHARGE]
    eom = qe / m_i

    if P[IDX_MODE] == 0.0:
        for axis in range(3):
            w = P[IDX_OMEGA_X + axis]
            u_eq = eom * P[IDX_EDC_X + axis] / (w * w)
            dx = y[axis] - u_eq
            v = y[3 + axis]
            e_out[axis] = 0.5 * m_i * (v * v + w * w * dx * dx)
        return

    for axis in range(3):
        amp_sin = eom * P[IDX_AQUAD] * P[IDX_UQ_X + axis]
        amp_cos = 0.0
        if axis == 2:
            amp_cos = eom * P[IDX_GAX] * (y[2] - P[IDX_ZNULL])
        amp_dc = eom * P[IDX_EDC_X + axis]
        xf, vf = _axis_forced_response(P, axis, t, amp_sin, amp_cos, amp_dc)
        e_out[axis] = _axis_secular_energy(P, axis, t, y[axis] - xf, y[3 + axis] - vf)


@njit(cache=True)
def _run_chain(
    ion,
    apos,
    avel,
    P,
    rtol,
    atol_pos,
    atol_vel,
    max_step,
    r0,
    cap_periods,
    n_avg,
    e_out,
    minr_out,
    flag_out,
):
    """Inject atoms one after another against a single ion.

    ion : (6,) ion state, updated in place
    apos, avel : (n, 3) atom entry positions (about the trap centre) and velocities
    e_out : (n, 3) per-axis secular energy after each atom
    minr_out : (n,) closest pair approach during each passage
    flag_out : (n,) status per atom (ST_ATOM_EXITED normal, ST_REACHED_TEND capped)

    Returns (t_total, err_index): err_index >= 0 marks the atom whose
    passage aborted on the radius floor or a step underflow.
    """
    n_at = apos.shape[0]
    t = 0.0
    y = np.empty(12)
    e_now = np.empty(3)
    t_rf = 2.0 * math.pi / P[IDX_OMEGA_RF]
    t_cap = cap_periods * t_rf
    exit_r2 = r0 * r0 * (1.0 + 1e-9)

    for j in range(n_at):
        for i in range(6):
            y[i] = ion[i]
        y[6] = apos[j, 0]
        y[7] = apos[j, 1]
        y[8] = apos[j, 2]
        y[9] = avel[j, 0]
        y[10] = avel[j, 1]
        y[11] = avel[j, 2]

        t_new, status, min_r = _propagate(
            y, t, t + t_cap, P, True, rtol, atol_pos, atol_vel, max_step, exit_r2
        )
        t = t_new
        minr_out[j] = min_r
        flag_out[j] = status
        if status == ST_HIT_FLOOR or status == ST_STEP_UNDERFLOW:
            return t, j
        for i in range(6):
            ion[i] = y[i]

        if P[IDX_MODE] == 1.0 and n_avg > 1:
            # micromotion-period average of the decomposed secular energy
            ex = 0.0
            ey = 0.0
            ez = 0.0
            dt_sub = t_rf / n_avg
            for _s in range(n_avg):
                _secular_energy_now(y, t, P, e_now)
                ex += e_now[0]
                ey += e_now[1]
                ez += e_now[2]
                t_new, status, _m = _propagate(
                    y, t, t + dt_sub, P, False, rtol, atol_pos, atol_vel, max_step, -1.0
                )
                t = t_new
                if status != ST_REACHED_TEND:
                    return t, j
            e_out[j, 0] = ex / n_avg
            e_out[j, 1] = ey / n_avg
            e_out[j, 2] = ez / n_avg
            for i in range(6):
                ion[i] = y[i]
        else:
            _secular_energy_now(y, t, P, e_now)
            e_out[j, 0] = e_now[0]
            e_out[j, 1] = e_now[1]
            e_out[j, 2] = e_now[2]

    return t, -1


@njit(parallel=True)
def _run_ensemble(
    ions0,
    apos,
    avel,
    P,
    rtol,
    atol_pos,
    atol_vel,
    max_step,
    r0,
    cap_periods,
    n_avg,
    e_out,
    minr_out,
    flag_out,
    t_out,
    err_out,
):
    """Independent collision chains, one per run (outer arrays indexed by run)."""
    n_runs = ions0.shape[0]
    for r in prange(n_runs):
        ion = ions0[r].copy()
        t_tot, err_idx = _run_chain(
            ion,
            apos[r],
            avel[r],
            P,
            rtol,
            atol_pos,
            atol_vel,
            max_step,
            r0,
            cap_periods,
            n_avg,
            e_out[r],
            minr_out[r],
            flag_out[r],
        )
        t_out[r] = t_tot
        err_out[r] = err_idx
        ions0[r] = ion


@njit(cache=True)
def _propagate_sampled(
    y, t0, P, has_atom, rtol, atol_pos, atol_vel, max_step, sample_dt, n_samples, pos_out, vel_out
):
    """Record the state on a uniform time grid; returns final t and status."""
    t = t0
    for k in range(n_samples):
        pos_out[k, 0] = y[0]
        pos_out[k, 1] = y[1]
        pos_out[k, 2] = y[2]
        vel_out[k, 0] = y[3]
        vel_out[k, 1] = y[4]
        vel_out[k, 2] = y[5]
        if k == n_samples - 1:
            break
        t_new, status, _m = _propagate(
            y, t, t0 + (k + 1) * sample_dt, P, has_atom, rtol, atol_pos, atol_vel, max_step, -1.0
        )
        t = t_new
        if status != ST_REACHED_TEND:
            return t, status
    return t, ST_REACHED_TEND
