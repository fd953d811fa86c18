"""Numba-compiled hot path shared by the public API and the engine.

The scalar functions are the single source of truth for the control-law
formulas; the fleet kernels compose them over struct-of-array snapshots.
Force sums iterate in ascending vehicle id, leader searches are strict
argmins with id tie-breaks, so every result is a pure function of the
snapshot regardless of how callers schedule work.
"""

import math

import numpy as np
from numba import njit

# --------------------------------------------------------------------------
# ring geometry
# --------------------------------------------------------------------------


@njit(cache=True)
def wrap_position(x, length):
    return x % length


@njit(cache=True)
def signed_offset(dx, length):
    # shortest signed ring distance, in (-L/2, L/2]
    d = dx % length
    if d > 0.5 * length:
        d -= length
    return d


@njit(cache=True)
def ring_forward_gap(x_f, len_f, x_l, len_l, length):
    return ((x_l - 0.5 * len_l) - (x_f + 0.5 * len_f)) % length


@njit(cache=True)
def intervals_overlap(y_a, w_a, y_b, w_b):
    return abs(y_a - y_b) < 0.5 * (w_a + w_b)


# --------------------------------------------------------------------------
# strip discretization
# --------------------------------------------------------------------------


@njit(cache=True)
def strip_interval(y, width, y_right, strip_width):
    """Inclusive index interval of strips covered with positive measure."""
    lo = int(math.floor((y - 0.5 * width - y_right) / strip_width))
    hi = int(math.ceil((y + 0.5 * width - y_right) / strip_width)) - 1
    return lo, hi


# --------------------------------------------------------------------------
# longitudinal laws (shared by both vehicle classes)
# --------------------------------------------------------------------------


@njit(cache=True)
def safe_velocity(v_leader, gap, decel_mag, tau, min_gap):
    """Gipps-style speed that still allows stopping behind the leader.

    decel_mag is the magnitude of the comfortable deceleration.  A negative
    radicand means no non-negative speed is safe, so 0 is returned.
    """
    ta = tau * decel_mag
    rad = ta * ta + v_leader * v_leader + 2.0 * decel_mag * (gap - min_gap)
    if rad <= 0.0:
        return 0.0
    v = -ta + math.sqrt(rad)
    return v if v > 0.0 else 0.0


@njit(cache=True)
def safe_acceleration(
    v_current, v_target, gap, dt, decel_comfort, decel_critical, accel_max, min_gap
):
    """Acceleration toward v_target, clamped to the vehicle's abilities.

    When braking and the kinematic braking distance at the comfortable rate
    exceeds the available gap, the lower clamp drops to decel_critical.
    Callers that have no such emergency rate pass decel_critical ==
    decel_comfort.
    """
    v_diff = v_target - v_current
    raw = v_diff / dt
    lower = decel_comfort
    if v_diff < 0.0 and v_diff * v_diff / (-2.0 * decel_comfort) > gap - min_gap:
        lower = decel_critical
    if raw < lower:
        return lower
    if raw > accel_max:
        return accel_max
    return raw


@njit(cache=True)
def strip_change_benefit(v_safe_dest, v_safe_cur, v_des, n_strips, lam):
    return (v_safe_dest - v_safe_cur) / v_des * math.exp(-lam * n_strips)


# --------------------------------------------------------------------------
# CAV control laws
# --------------------------------------------------------------------------


@njit(cache=True)
def pl_force(y_pl, y, vy, k_pl, k_pl_v):
    return k_pl * (y_pl - y) - k_pl_v * vy


@njit(cache=True)
def cruise_force(vx, v_des, dt, accel_pref, k_px):
    v_ts = vx + accel_pref * dt
    if v_ts > v_des:
        v_ts = v_des
    return k_px * (v_ts - vx)


@njit(cache=True)
def field_magnitude(dx, dy, sd1, sd2, p1, p2, p3):
    a = (dx / (0.5 * sd1)) ** p1 + (dy / (0.5 * sd2)) ** p2
    return 1.0 / (a**p3 + 1.0)


@njit(cache=True)
def boundary_bounds(y, vy, width, y_right, y_left, k_b1, k_b2):
    """(lower, upper) lateral-acceleration bounds keeping the body on the road."""
    upper = k_b1 * ((y_left - 0.5 * width) - y) - k_b2 * vy
    lower = k_b1 * ((y_right + 0.5 * width) - y) - k_b2 * vy
    return lower, upper


# --------------------------------------------------------------------------
# fleet kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def compute_strip_bounds(y, width, y_right, strip_width, lo_out, hi_out):
    for i in range(y.shape[0]):
        lo, hi = strip_interval(y[i], width[i], y_right, strip_width)
        lo_out[i] = lo
        hi_out[i] = hi


@njit(cache=True)
def find_leaders(
    x,
    y,
    length_arr,
    width_arr,
    is_hdv,
    strip_lo,
    strip_hi,
    order,
    pos_of,
    length_m,
    front_range_hdv,
    front_range_cav,
    max_len,
    leader_out,
    gap_out,
):
    """Per-vehicle leader: nearest ahead within the class front range.

    HDV subjects require a shared strip; CAV subjects require lateral body
    overlap.  Nearest means minimal bumper gap, ties broken by lower id.
    """
    n = x.shape[0]
    for i in range(n):
        front_range = front_range_hdv if is_hdv[i] else front_range_cav
        best_gap = np.inf
        best_id = -1
        k = pos_of[i]
        for step in range(1, n):
            j = order[(k + step) % n]
            d = (x[j] - x[i]) % length_m
            if d - 0.5 * (length_arr[i] + max_len) >= front_range:
                break
            g = ring_forward_gap(x[i], length_arr[i], x[j], length_arr[j], length_m)
            if g >= front_range:
                continue
            if is_hdv[i]:
                if strip_lo[i] > strip_hi[j] or strip_lo[j] > strip_hi[i]:
                    continue
            else:
                if not intervals_overlap(y[i], width_arr[i], y[j], width_arr[j]):
                    continue
            if g < best_gap or (g == best_gap and j < best_id):
                best_gap = g
                best_id = j
        leader_out[i] = best_id
        gap_out[i] = best_gap if best_id >= 0 else np.inf


@njit(cache=True)
def strip_move_blocked(
    i,
    y_dest,
    x,
    y,
    vx,
    length_arr,
    width_arr,
    is_hdv,
    length_m,
    strip_width,
    min_gap,
    brake_hdv,
    brake_cav,
):
    """True when a one-strip move to y_dest would create an unsafe pairing.

    Blocks lateral clearance below one strip against any vehicle that
    overlaps longitudinally, and cut-ins where fore/aft bumper gaps are
    shorter than min_gap plus the closing-speed braking distance.
    """
    n = x.shape[0]
    for j in range(n):
        if j == i:
            continue
        if abs(y_dest - y[j]) >= 0.5 * (width_arr[i] + width_arr[j]) + strip_width:
            continue
        d = signed_offset(x[j] - x[i], length_m)
        half = 0.5 * (length_arr[i] + length_arr[j])
        if abs(d) < half:
            return True
        if d > 0.0:
            gap = d - half
            closing = vx[i] * vx[i] - vx[j] * vx[j]
            need = min_gap + (closing / (2.0 * brake_hdv) if closing > 0.0 else 0.0)
            if gap < need:
                return True
        else:
            gap = -d - half
            brake = brake_hdv if is_hdv[j] else brake_cav
            closing = vx[j] * vx[j] - vx[i] * vx[i]
            need = min_gap + (closing / (2.0 * brake) if closing > 0.0 else 0.0)
            if gap < need:
                return True
    return False


@njit(cache=True)
def hdv_control(
    x,
    y,
    vx,
    length_arr,
    width_arr,
    v_des,
    tau,
    is_hdv,
    strip_lo,
    strip_hi,
    order,
    pos_of,
    leader,
    leader_gap,
    mem_left,
    mem_right,
    length_m,
    y_right,
    y_left,
    dt,
    strip_width,
    lam,
    benefit_threshold,
    decel_comfort,
    decel_critical,
    accel_max,
    min_gap,
    front_range,
    max_len,
    exp_tab,
    ax_out,
    move_out,
):
    """Longitudinal control plus strip-change memory update for every HDV.

    Writes accelerations into ax_out, one-strip decisions (-1 right, 0 stay,
    +1 left) into move_out, and updates the memory arrays in place.  The
    realized move is suppressed when the destination is blocked; the memory
    reset has already happened by then (the driver re-accumulates).
    """
    n = x.shape[0]
    decel_mag = -decel_comfort
    # reusable scratch
    w_id = np.empty(n, np.int64)
    w_gap = np.empty(n, np.float64)
    n_strip_max = exp_tab.shape[0]
    dest_v = np.empty(n_strip_max, np.float64)
    filled = np.empty(n_strip_max, np.uint8)
    nxt = np.empty(n_strip_max + 1, np.int64)

    for i in range(n):
        move_out[i] = 0
        if not is_hdv[i]:
            continue

        # longitudinal: follow the current-strip leader, never beyond v_des
        li = leader[i]
        if li >= 0:
            g_cur = leader_gap[i]
            v_cur = safe_velocity(vx[li], g_cur, decel_mag, tau[i], min_gap)
            if v_cur > v_des[i]:
                v_cur = v_des[i]
        else:
            g_cur = np.inf
            v_cur = v_des[i]
        ax_out[i] = safe_acceleration(
            vx[i], v_cur, g_cur, dt, decel_comfort, decel_critical, accel_max, min_gap
        )

        # collect the ahead window once; destinations share it
        nw = 0
        k = pos_of[i]
        for step in range(1, n):
            j = order[(k + step) % n]
            d = (x[j] - x[i]) % length_m
            if d - 0.5 * (length_arr[i] + max_len) >= front_range:
                break
            g = ring_forward_gap(x[i], length_arr[i], x[j], length_arr[j], length_m)
            if g >= front_range:
                continue
            w_id[nw] = j
            w_gap[nw] = g
            nw += 1
        # insertion sort by (gap, id); window is nearly sorted already
        for a in range(1, nw):
            jid = w_id[a]
            jg = w_gap[a]
            b = a - 1
            while b >= 0 and (w_gap[b] > jg or (w_gap[b] == jg and w_id[b] > jid)):
                w_id[b + 1] = w_id[b]
                w_gap[b + 1] = w_gap[b]
                b -= 1
            w_id[b + 1] = jid
            w_gap[b + 1] = jg

        lo0 = strip_lo[i]
        hi0 = strip_hi[i]

        for side_idx in range(2):
            side = 1 if side_idx == 0 else -1  # +1 = left (+y), -1 = right
            if side == 1:
                room = (y_left - 0.5 * width_arr[i] - y[i]) / strip_width
            else:
                room = (y[i] - 0.5 * width_arr[i] - y_right) / strip_width
            n_max = int(math.floor(room + 1e-9))
            if n_max >= n_strip_max:
                n_max = n_strip_max - 1

            benefit_sum = 0.0
            if n_max >= 1:
                for m in range(1, n_max + 1):
                    filled[m] = 0
                    nxt[m] = m
                nxt[n_max + 1] = n_max + 1
                # paint destinations with the nearest strip-sharing vehicle
                for widx in range(nw):
                    j = w_id[widx]
                    # subject strips at destination n (side +1) are
                    # [lo0 + n, hi0 + n]; overlap with j constrains side*n
                    rel_lo = strip_lo[j] - hi0
                    rel_hi = strip_hi[j] - lo0
                    if side == 1:
                        a = rel_lo
                        b = rel_hi
                    else:
                        a = -rel_hi
                        b = -rel_lo
                    if a < 1:
                        a = 1
                    if b > n_max:
                        b = n_max
                    if b < a:
                        continue
                    vj = safe_velocity(vx[j], w_gap[widx], decel_mag, tau[i], min_gap)
                    if vj > v_des[i]:
                        vj = v_des[i]
                    m = a
                    while m <= b:
                        # hop to the next unfilled slot
                        r = m
                        while nxt[r] != r:
                            r = nxt[r]
                        if nxt[m] != r:
                            nxt[m] = r
                        m = r
                        if m > b:
                            break
                        dest_v[m] = vj
                        filled[m] = 1
                        nxt[m] = m + 1
                        m += 1
                for m in range(1, n_max + 1):
                    vd = dest_v[m] if filled[m] == 1 else v_des[i]
                    benefit_sum += (vd - v_cur) / v_des[i] * exp_tab[m]

            if side == 1:
                if benefit_sum > 0.0:
                    mem_left[i] += benefit_sum
                else:
                    mem_left[i] *= 0.5
            else:
                if benefit_sum > 0.0:
                    mem_right[i] += benefit_sum
                else:
                    mem_right[i] *= 0.5

        if mem_left[i] > benefit_threshold or mem_right[i] > benefit_threshold:
            side = 1 if mem_left[i] > mem_right[i] else -1  # tie goes right
            mem_left[i] = 0.0
            mem_right[i] = 0.0
            move_out[i] = side


@njit(cache=True)
def cav_control(
    x,
    y,
    vx,
    vy,
    prev_ax,
    prev_ay,
    length_arr,
    width_arr,
    v_des,
    tau,
    is_hdv,
    leader,
    leader_gap,
    y_pl_eff,
    length_m,
    y_right,
    y_left,
    dt,
    front_range,
    back_range,
    w_nudge,
    w_repulse,
    p1,
    p2,
    p3,
    sd2_margin,
    delta_shift_gain,
    min_gap,
    decel_comfort,
    accel_pref,
    k_px,
    k_pl,
    k_pl_v,
    k_b1,
    k_b2,
    neighbor_margin,
    nb_brake_hdv,
    nb_resp_s,
    ax_min,
    ax_max,
    ay_min,
    ay_max,
    jx_min,
    jx_max,
    jy_min,
    jy_max,
    ax_out,
    ay_out,
):
    """Potential-line control for every CAV on the snapshot.

    The clamp chain is fixed: safe bound -> acceleration limits -> jerk
    limits longitudinally; boundary and adjacent-body bounds ->
    acceleration limits -> jerk limits laterally.
    """
    n = x.shape[0]
    decel_mag = -decel_comfort
    for i in range(n):
        if is_hdv[i]:
            continue
        fx = 0.0
        fy = 0.0
        nb_lo = -np.inf
        nb_hi = np.inf
        a_bound = np.inf
        for j in range(n):  # ascending id keeps sums deterministic
            if j == i:
                continue
            d = signed_offset(x[j] - x[i], length_m)
            if (
                abs(y[j] - y[i]) < 0.5 * (width_arr[i] + width_arr[j])
                and 0.0 < d < front_range
            ):
                # safe bound against every overlapping vehicle ahead, not
                # just the nearest: staggered traffic can hide the binding
                # threat behind a faster near leader
                g = ring_forward_gap(x[i], length_arr[i], x[j], length_arr[j], length_m)
                if g < front_range:
                    g_eff = g - 0.5 * nb_resp_s * max(0.0, vx[i] - vx[j])
                    vs = safe_velocity(vx[j], g_eff, decel_mag, tau[i], min_gap)
                    a_s = safe_acceleration(
                        vx[i], vs, g_eff, dt, decel_comfort, decel_comfort,
                        accel_pref, min_gap,
                    )
                    if a_s < a_bound:
                        a_bound = a_s
            half_w_raw = 0.5 * (width_arr[i] + width_arr[j])
            half_len = 0.5 * (length_arr[i] + length_arr[j])
            clamp = False
            if abs(y[j] - y[i]) >= half_w_raw:
                # laterally clear: bar entry into unsafe slots
                if d >= 0.0:
                    gap = d - half_len
                    lin = vx[i] - vx[j]
                    need = min_gap
                    if lin > 0.0:
                        # jerk-limited follower needs nb_resp_s to reach
                        # full braking, then the kinematic distance
                        need += lin * nb_resp_s + lin * (vx[i] + vx[j]) / (
                            2.0 * decel_mag
                        )
                else:
                    gap = -d - half_len
                    lin = vx[j] - vx[i]
                    need = min_gap
                    if lin > 0.0:
                        if is_hdv[j]:
                            need += lin * (vx[i] + vx[j]) / (2.0 * nb_brake_hdv)
                        else:
                            need += lin * nb_resp_s + lin * (vx[i] + vx[j]) / (
                                2.0 * decel_mag
                            )
                clamp = gap < need
            if clamp:
                # edge cushion grows with the inward lateral speed so the
                # jerk-limited feedback engages early enough to stop it
                if y[j] >= y[i]:
                    half_w = half_w_raw + neighbor_margin
                    if vy[i] > 0.0:
                        half_w += 0.5 * nb_resp_s * vy[i]
                    bnd = k_b1 * ((y[j] - half_w) - y[i]) - k_b2 * vy[i]
                    if bnd < nb_hi:
                        nb_hi = bnd
                else:
                    half_w = half_w_raw + neighbor_margin
                    if vy[i] < 0.0:
                        half_w -= 0.5 * nb_resp_s * vy[i]
                    bnd = k_b1 * ((y[j] + half_w) - y[i]) - k_b2 * vy[i]
                    if bnd > nb_lo:
                        nb_lo = bnd
            if d >= 0.0:
                if d >= front_range:
                    continue
                w = w_nudge
                shift = delta_shift_gain * tau[i] * max(0.0, vx[i] - vx[j])
                dx_eff = shift - d
            else:
                if -d >= back_range:
                    continue
                w = w_repulse
                dx_eff = -d
            sd1 = (length_arr[i] + length_arr[j]) + 2.0 * min_gap + tau[i] * vx[i]
            sd2 = 0.5 * (width_arr[i] + width_arr[j]) + sd2_margin
            dy = y[i] - y[j]
            f = field_magnitude(dx_eff, dy, sd1, sd2, p1, p2, p3)
            gx = dx_eff / (0.5 * sd1)
            gy = dy / (0.5 * sd2)
            r = math.sqrt(gx * gx + gy * gy)
            if r > 0.0:
                fx += w * (f * gx / r)
                fy += w * (f * gy / r)
            else:
                fx += w * (-f if d >= 0.0 else f)

        ax1 = cruise_force(vx[i], v_des[i], dt, accel_pref, k_px) + fx
        if a_bound < ax1:
            ax1 = a_bound
        if ax1 < ax_min:
            ax1 = ax_min
        elif ax1 > ax_max:
            ax1 = ax_max
        lo = prev_ax[i] + jx_min * dt
        hi = prev_ax[i] + jx_max * dt
        if ax1 < lo:
            ax1 = lo
        elif ax1 > hi:
            ax1 = hi
        ax_out[i] = ax1

        ay1 = fy + pl_force(y_pl_eff[i], y[i], vy[i], k_pl, k_pl_v)
        blo, bhi = boundary_bounds(
            y[i], vy[i], width_arr[i], y_right, y_left, k_b1, k_b2
        )
        lo = max(blo, nb_lo)
        hi = min(bhi, nb_hi)
        if lo > hi:  # sandwiched: split the difference, road edges win
            ay1 = min(max(0.5 * (lo + hi), blo), bhi)
        elif ay1 < lo:
            ay1 = lo
        elif ay1 > hi:
            ay1 = hi
        if ay1 < ay_min:
            ay1 = ay_min
        elif ay1 > ay_max:
            ay1 = ay_max
        lo = prev_ay[i] + jy_min * dt
        hi = prev_ay[i] + jy_max * dt
        if ay1 < lo:
            ay1 = lo
        elif ay1 > hi:
            ay1 = hi
        ay_out[i] = ay1


@njit(cache=True)
def count_body_overlaps(x, y, length_arr, width_arr, order, length_m, max_len):
    """Number of vehicle pairs whose bounding boxes overlap (positive measure)."""
    n = order.shape[0]
    count = 0
    for k in range(n):
        i = order[k]
        for step in range(1, n):
            j = order[(k + step) % n]
            d = (x[j] - x[i]) % length_m
            if d >= 0.5 * (length_arr[i] + max_len):
                break
            if d == 0.0 and j < i:
                continue  # identical x: count the pair once
            if d < 0.5 * (length_arr[i] + length_arr[j]) and intervals_overlap(
                y[i], width_arr[i], y[j], width_arr[j]
            ):
                count += 1
    return count
