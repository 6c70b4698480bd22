"""Hot numeric kernels for the highway simulation.

Everything here operates on flat numpy arrays (structure-of-arrays vehicle
state plus a packed road-geometry vector) so the same code can run either
JIT-compiled with numba or as plain Python/numpy. The JIT path is the
default; set SOCIALHIGHWAY_NUMBA=0 before import to select the fallback.
``benchmarks/bench_kernels.py`` times both paths.

Array conventions (one row per vehicle):
    x, v, acc, tspeed, odo, length : float64
    lane, prev_lane, kind, mission, cooldown : int64
    crashed, departed, dual, lc_enabled, changed : uint8
    P : float64 (n, 9) driver params, columns
        0 v0, 1 T0, 2 d0, 3 acc_max, 4 acc_des, 5 delta,
        6 politeness, 7 delta_a_th, 8 b_safe

Packed road vector (float64, length 8):
    0 n_lanes_total, 1 n_through, 2 length, 3 ramp_kind (0 none,
    1 merge, 2 exit), 4 ramp_x0, 5 ramp_x1, 6 junction_x, 7 spare
"""

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SOCIALHIGHWAY_NUMBA", "1") != "0"

KIND_HV = 0
KIND_AV = 1
MISSION_NONE = 0
MISSION_MERGE = 1
MISSION_EXIT = 2

# physics constants
GAP_MIN = 0.1  # m, clamp before IDM division blows up
V_CAP = 40.0  # m/s hard speed ceiling
FAR_GAP = 1.0e9  # m, "no leader" gap
AV_KP = 1.0  # 1/s target-speed controller gain
AV_ACCEL = 3.0  # m/s^2 comfortable AV acceleration
AV_BRAKE = 6.0  # m/s^2 AV braking authority
AV_LC_MARGIN = 2.0  # m, clearance beyond bumper overlap for AV lane changes
RAMP_END_BUFFER = 1.0  # m, stop short of the physical ramp end
EXIT_PREP_DIST = 100.0  # m before exit window: mission vehicle seeks right lane
LC_COOLDOWN_TICKS = 2  # decision ticks between discretionary lane changes

# event type codes emitted by kernels
EV_COLLISION = 1
EV_LANE_CHANGE = 2
EV_DEPARTED = 3


def _jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def idm_desired_gap_s(v, dv, d0, T0, amax, ades):
    """Desired minimum gap; dynamic part floored at zero."""
    dyn = v * T0 + v * dv / (2.0 * math.sqrt(amax * ades))
    if dyn < 0.0:
        dyn = 0.0
    return d0 + dyn


def idm_accel_s(v, dv, gap, v0, T0, d0, amax, ades, delta, clip):
    """IDM longitudinal acceleration; optional clip to [-2*ades, amax]."""
    if gap < GAP_MIN:
        gap = GAP_MIN
    ds = v * T0 + v * dv / (2.0 * math.sqrt(amax * ades))
    if ds < 0.0:
        ds = 0.0
    ds += d0
    a = amax * (1.0 - (v / v0) ** delta - (ds / gap) ** 2)
    if clip:
        lo = -2.0 * ades
        if a < lo:
            a = lo
        if a > amax:
            a = amax
    return a


def mobil_gain_s(a_ego, a_ego_new, a_n, a_n_new, a_o, a_o_new, politeness):
    """MOBIL incentive: own gain plus politeness-weighted follower changes."""
    return (a_ego_new - a_ego) + politeness * ((a_n_new - a_n) + (a_o_new - a_o))


def mobil_ok_s(a_ego, a_ego_new, a_n, a_n_new, a_o, a_o_new, politeness, dath, bsafe):
    """True when both the safety and the incentive criteria pass."""
    if a_n_new <= -bsafe:
        return False
    g = (a_ego_new - a_ego) + politeness * ((a_n_new - a_n) + (a_o_new - a_o))
    return g > dath


def speed_pixel_s(rel_v, s0, vref):
    """Clipped logarithmic map of relative speed into [0, 1], 0.5 at rest."""
    m = math.log(1.0 + abs(rel_v) / s0) / math.log(1.0 + vref / s0)
    if m > 1.0:
        m = 1.0
    if rel_v < 0.0:
        m = -m
    p = 0.5 + 0.5 * m
    if p < 0.0:
        p = 0.0
    if p > 1.0:
        p = 1.0
    return p


idm_desired_gap_s = _jit(idm_desired_gap_s)
idm_accel_s = _jit(idm_accel_s)
mobil_gain_s = _jit(mobil_gain_s)
mobil_ok_s = _jit(mobil_ok_s)
speed_pixel_s = _jit(speed_pixel_s)


def _lane_extent(road, lane):
    """Drivable [x0, x1] of a lane index."""
    if lane < int(road[1]):
        return 0.0, road[2]
    return road[4], road[5]


def _leader(x, lane, departed, length, i, target_lane):
    """Index of nearest vehicle ahead of i in target_lane, -1 if none."""
    n = x.shape[0]
    best = -1
    bx = 1.0e18
    for j in range(n):
        if j == i or departed[j] == 1 or lane[j] != target_lane:
            continue
        if x[j] > x[i] and x[j] < bx:
            bx = x[j]
            best = j
    return best


def _follower(x, lane, departed, length, i, target_lane):
    """Index of nearest vehicle behind i in target_lane, -1 if none."""
    n = x.shape[0]
    best = -1
    bx = -1.0e18
    for j in range(n):
        if j == i or departed[j] == 1 or lane[j] != target_lane:
            continue
        if x[j] <= x[i] and x[j] > bx:
            bx = x[j]
            best = j
    return best


def _gap(x, length, i, j):
    """Bumper-to-bumper gap between i and a vehicle j ahead of it."""
    return x[j] - x[i] - 0.5 * (length[i] + length[j])


_lane_extent = _jit(_lane_extent)
_leader = _jit(_leader)
_follower = _jit(_follower)
_gap = _jit(_gap)


def _hv_accel(x, v, lane, mission, departed, length, P, road, i):
    """IDM acceleration of HV i against its leader / ramp-end obstacle."""
    j = _leader(x, lane, departed, length, i, lane[i])
    gap = FAR_GAP
    dv = 0.0
    if j >= 0:
        gap = _gap(x, length, i, j)
        dv = v[i] - v[j]
    # merge ramp ends in a physical barrier
    if int(road[3]) == 1 and lane[i] >= int(road[1]):
        egap = road[5] - RAMP_END_BUFFER - x[i] - 0.5 * length[i]
        if egap < gap:
            gap = egap
            dv = v[i]
    return idm_accel_s(
        v[i], dv, gap, P[i, 0], P[i, 1], P[i, 2], P[i, 3], P[i, 4], P[i, 5], True
    )


def compute_accels(x, v, lane, tspeed, kind, mission, crashed, departed, length, P, road, acc):
    """Fill acc for every vehicle: IDM for HVs, speed controller for AVs."""
    n = x.shape[0]
    for i in range(n):
        if crashed[i] == 1 or departed[i] == 1:
            acc[i] = 0.0
            continue
        if kind[i] == KIND_AV:
            a = AV_KP * (tspeed[i] - v[i])
            if a > AV_ACCEL:
                a = AV_ACCEL
            if a < -AV_BRAKE:
                a = -AV_BRAKE
            acc[i] = a
        else:
            acc[i] = _hv_accel(x, v, lane, mission, departed, length, P, road, i)


_hv_accel = _jit(_hv_accel)
compute_accels = _jit(compute_accels)


def _lanes_overlap(lane, prev_lane, dual, i, j):
    if lane[i] == lane[j]:
        return True
    if dual[i] == 1 and prev_lane[i] == lane[j]:
        return True
    if dual[j] == 1 and prev_lane[j] == lane[i]:
        return True
    if dual[i] == 1 and dual[j] == 1 and prev_lane[i] == prev_lane[j]:
        return True
    return False


_lanes_overlap = _jit(_lanes_overlap)


def integrate_and_collide(
    x, v, acc, lane, prev_lane, dual, crashed, departed, odo, length, road, dt,
    ev_type, ev_i, ev_j, ev_k, ev_n,
):
    """One physics substep: kinematics, departures, collisions.

    Events are appended to the ev_* buffers starting at ev_n; the new event
    count is returned. Crashed vehicles stay frozen; departed ones leave the
    interaction set but remain in the arrays.
    """
    n = x.shape[0]
    ne = ev_n
    for i in range(n):
        if crashed[i] == 1 or departed[i] == 1:
            continue
        nv = v[i] + acc[i] * dt
        if nv < 0.0:
            nv = 0.0
        if nv > V_CAP:
            nv = V_CAP
        v[i] = nv
        x[i] += nv * dt
        odo[i] += nv * dt
    # departures at lane end (merge ramp is obstacle-terminated, clamp instead)
    for i in range(n):
        if crashed[i] == 1 or departed[i] == 1:
            continue
        x1 = _lane_extent(road, lane[i])[1]
        if x[i] >= x1:
            if int(road[3]) == 1 and lane[i] >= int(road[1]):
                x[i] = x1 - RAMP_END_BUFFER
                v[i] = 0.0
            else:
                departed[i] = 1
                ev_type[ne] = EV_DEPARTED
                ev_i[ne] = i
                ev_j[ne] = lane[i]
                ev_k[ne] = 0
                ne += 1
    # pairwise collision scan
    for i in range(n):
        if departed[i] == 1:
            continue
        for j in range(i + 1, n):
            if departed[j] == 1:
                continue
            if crashed[i] == 1 and crashed[j] == 1:
                continue
            if not _lanes_overlap(lane, prev_lane, dual, i, j):
                continue
            if abs(x[i] - x[j]) < 0.5 * (length[i] + length[j]):
                crashed[i] = 1
                crashed[j] = 1
                ev_type[ne] = EV_COLLISION
                ev_i[ne] = i
                ev_j[ne] = j
                ev_k[ne] = lane[i]
                ne += 1
    # dual-lane occupancy only lasts the substep after the change
    for i in range(n):
        dual[i] = 0
    return ne


integrate_and_collide = _jit(integrate_and_collide)


def _hypothetical_accels(x, v, lane, mission, departed, length, P, road, i, cand):
    """Six accelerations used by MOBIL for a move of i into lane cand.

    Returns (a_ego, a_ego_new, a_n, a_n_new, a_o, a_o_new); unclipped IDM so
    the safety criterion sees the true deceleration demand.
    """
    lead_cur = _leader(x, lane, departed, length, i, lane[i])
    lead_new = _leader(x, lane, departed, length, i, cand)
    fol_old = _follower(x, lane, departed, length, i, lane[i])
    fol_new = _follower(x, lane, departed, length, i, cand)

    gap = FAR_GAP
    dv = 0.0
    if lead_cur >= 0:
        gap = _gap(x, length, i, lead_cur)
        dv = v[i] - v[lead_cur]
    a_ego = idm_accel_s(v[i], dv, gap, P[i, 0], P[i, 1], P[i, 2], P[i, 3], P[i, 4], P[i, 5], False)

    gap = FAR_GAP
    dv = 0.0
    if lead_new >= 0:
        gap = _gap(x, length, i, lead_new)
        dv = v[i] - v[lead_new]
    a_ego_new = idm_accel_s(v[i], dv, gap, P[i, 0], P[i, 1], P[i, 2], P[i, 3], P[i, 4], P[i, 5], False)

    a_n = 0.0
    a_n_new = 0.0
    if fol_new >= 0:
        k = fol_new
        gap = FAR_GAP
        dv = 0.0
        if lead_new >= 0:
            gap = _gap(x, length, k, lead_new)
            dv = v[k] - v[lead_new]
        a_n = idm_accel_s(v[k], dv, gap, P[k, 0], P[k, 1], P[k, 2], P[k, 3], P[k, 4], P[k, 5], False)
        gap = _gap(x, length, k, i)
        dv = v[k] - v[i]
        a_n_new = idm_accel_s(v[k], dv, gap, P[k, 0], P[k, 1], P[k, 2], P[k, 3], P[k, 4], P[k, 5], False)

    a_o = 0.0
    a_o_new = 0.0
    if fol_old >= 0:
        k = fol_old
        gap = _gap(x, length, k, i)
        dv = v[k] - v[i]
        a_o = idm_accel_s(v[k], dv, gap, P[k, 0], P[k, 1], P[k, 2], P[k, 3], P[k, 4], P[k, 5], False)
        gap = FAR_GAP
        dv = 0.0
        if lead_cur >= 0:
            gap = _gap(x, length, k, lead_cur)
            dv = v[k] - v[lead_cur]
        a_o_new = idm_accel_s(v[k], dv, gap, P[k, 0], P[k, 1], P[k, 2], P[k, 3], P[k, 4], P[k, 5], False)

    return a_ego, a_ego_new, a_n, a_n_new, a_o, a_o_new


_hypothetical_accels = _jit(_hypothetical_accels)


def _mandatory_change_ok(x, v, lane, mission, departed, length, P, road, i, cand):
    """Safety-criterion-only gate for mission-driven (forced) lane changes."""
    a_ego, a_ego_new, a_n, a_n_new, a_o, a_o_new = _hypothetical_accels(
        x, v, lane, mission, departed, length, P, road, i, cand
    )
    if a_n_new <= -P[i, 8]:
        return False
    if a_ego_new <= -P[i, 8]:
        return False
    return True


_mandatory_change_ok = _jit(_mandatory_change_ok)


def _do_change(lane, prev_lane, dual, cooldown, changed, i, cand, ev_type, ev_i, ev_j, ev_k, ne):
    prev_lane[i] = lane[i]
    lane[i] = cand
    dual[i] = 1
    changed[i] = 1
    cooldown[i] = LC_COOLDOWN_TICKS
    ev_type[ne] = EV_LANE_CHANGE
    ev_i[ne] = i
    ev_j[ne] = prev_lane[i]
    ev_k[ne] = cand
    return ne + 1


_do_change = _jit(_do_change)


def lane_phase(
    x, v, lane, prev_lane, dual, kind, mission, crashed, departed, length, P, road,
    lc_enabled, cooldown, changed, av_req,
    ev_type, ev_i, ev_j, ev_k, ev_n,
):
    """Decision-tick lateral phase: AV requested changes, HV MOBIL, missions.

    av_req holds -1/0/+1 lane deltas for AVs (0 elsewhere). Vehicles are
    processed in index order with state updated as we go, so simultaneous
    requests resolve deterministically. Returns the new event count.
    """
    n = x.shape[0]
    nt = int(road[1])
    ramp_kind = int(road[3])
    ne = ev_n
    for i in range(n):
        changed[i] = 0
    for i in range(n):
        if crashed[i] == 1 or departed[i] == 1:
            continue
        if cooldown[i] > 0:
            cooldown[i] -= 1
        if kind[i] == KIND_AV:
            if av_req[i] == 0:
                continue
            cand = lane[i] + av_req[i]
            if cand < 0 or cand >= nt:
                continue
            clear = True
            for j in range(n):
                if j == i or departed[j] == 1:
                    continue
                if lane[j] != cand and not (dual[j] == 1 and prev_lane[j] == cand):
                    continue
                if abs(x[j] - x[i]) < 0.5 * (length[i] + length[j]) + AV_LC_MARGIN:
                    clear = False
                    break
            if clear:
                ne = _do_change(lane, prev_lane, dual, cooldown, changed, i, cand, ev_type, ev_i, ev_j, ev_k, ne)
            continue
        if lc_enabled[i] == 0:
            continue
        # mission-driven mandatory moves (ignore cooldown and incentive)
        if mission[i] == MISSION_MERGE and ramp_kind == 1 and lane[i] >= nt:
            if x[i] >= road[6]:
                cand = nt - 1
                if _mandatory_change_ok(x, v, lane, mission, departed, length, P, road, i, cand):
                    ne = _do_change(lane, prev_lane, dual, cooldown, changed, i, cand, ev_type, ev_i, ev_j, ev_k, ne)
            continue
        if mission[i] == MISSION_EXIT and ramp_kind == 2 and lane[i] < nt:
            if lane[i] < nt - 1 and x[i] >= road[4] - EXIT_PREP_DIST:
                cand = lane[i] + 1
                if _mandatory_change_ok(x, v, lane, mission, departed, length, P, road, i, cand):
                    ne = _do_change(lane, prev_lane, dual, cooldown, changed, i, cand, ev_type, ev_i, ev_j, ev_k, ne)
                continue
            if lane[i] == nt - 1 and road[4] <= x[i] and x[i] <= road[5] - RAMP_END_BUFFER:
                cand = nt
                if _mandatory_change_ok(x, v, lane, mission, departed, length, P, road, i, cand):
                    ne = _do_change(lane, prev_lane, dual, cooldown, changed, i, cand, ev_type, ev_i, ev_j, ev_k, ne)
            continue  # exit-mission vehicles never change lanes discretionarily
        if cooldown[i] > 0:
            continue
        if lane[i] >= nt:
            continue  # non-mission ramp traffic never changes discretionary
        best_cand = -1
        best_gain = -1.0e18
        for d in (-1, 1):
            cand = lane[i] + d
            if cand < 0 or cand >= nt:
                continue
            a_ego, a_ego_new, a_n, a_n_new, a_o, a_o_new = _hypothetical_accels(
                x, v, lane, mission, departed, length, P, road, i, cand
            )
            if a_n_new <= -P[i, 8]:
                continue
            g = mobil_gain_s(a_ego, a_ego_new, a_n, a_n_new, a_o, a_o_new, P[i, 6])
            if g > P[i, 7] and g > best_gain:
                best_gain = g
                best_cand = cand
        if best_cand >= 0:
            ne = _do_change(lane, prev_lane, dual, cooldown, changed, i, best_cand, ev_type, ev_i, ev_j, ev_k, ne)
    return ne


lane_phase = _jit(lane_phase)


def _inst_ttc(x, v, lane, prev_lane, dual, departed, length, ego):
    """Instantaneous bumper-gap / closing-speed TTC involving ego, or inf."""
    best = 1.0e18
    lanes0 = lane[ego]
    lanes1 = prev_lane[ego] if dual[ego] == 1 else lanes0
    n = x.shape[0]
    for j in range(n):
        if j == ego or departed[j] == 1:
            continue
        lj = lane[j]
        lj2 = prev_lane[j] if dual[j] == 1 else lj
        if lj != lanes0 and lj != lanes1 and lj2 != lanes0 and lj2 != lanes1:
            continue
        gap = abs(x[j] - x[ego]) - 0.5 * (length[j] + length[ego])
        if gap < 0.0:
            gap = 0.0
        if x[j] > x[ego]:
            closing = v[ego] - v[j]
        else:
            closing = v[j] - v[ego]
        if closing > 1.0e-9:
            t = gap / closing
            if t < best:
                best = t
    return best


_inst_ttc = _jit(_inst_ttc)


def project_ttc(
    x, v, acc, lane, prev_lane, dual, tspeed, kind, mission, crashed, departed,
    odo, length, P, road, lc_enabled, cooldown, changed, av_req,
    ego, n_ticks, sub_per_tick, dt, ttc_cap,
):
    """Roll the world forward and return the minimum projected TTC for ego.

    Mutates the (caller-cloned) state arrays. HVs follow IDM/MOBIL and the
    mission logic; all AVs hold their targets except ego's av_req/tspeed,
    which the caller primed with the candidate action. The score is
    min over time of (elapsed + instantaneous ttc), cut to the elapsed time
    at any projected collision involving ego, capped at ttc_cap.
    """
    ev_type = np.zeros(512, dtype=np.int64)
    ev_i = np.zeros(512, dtype=np.int64)
    ev_j = np.zeros(512, dtype=np.int64)
    ev_k = np.zeros(512, dtype=np.int64)
    score = ttc_cap
    elapsed = 0.0
    for tick in range(n_ticks):
        lane_phase(
            x, v, lane, prev_lane, dual, kind, mission, crashed, departed, length,
            P, road, lc_enabled, cooldown, changed, av_req,
            ev_type, ev_i, ev_j, ev_k, 0,
        )
        if tick == 0:
            for i in range(av_req.shape[0]):
                av_req[i] = 0
        t = elapsed + _inst_ttc(x, v, lane, prev_lane, dual, departed, length, ego)
        if t < score:
            score = t
        for s in range(sub_per_tick):
            compute_accels(x, v, lane, tspeed, kind, mission, crashed, departed, length, P, road, acc)
            integrate_and_collide(
                x, v, acc, lane, prev_lane, dual, crashed, departed, odo, length,
                road, dt, ev_type, ev_i, ev_j, ev_k, 0,
            )
            elapsed += dt
            if crashed[ego] == 1:
                if elapsed < score:
                    score = elapsed
                return score if score < ttc_cap else ttc_cap
            t = elapsed + _inst_ttc(x, v, lane, prev_lane, dual, departed, length, ego)
            if t < score:
                score = t
            if departed[ego] == 1:
                return score if score < ttc_cap else ttc_cap
        if score <= elapsed:
            return score  # later samples cannot lower the minimum
    if score > ttc_cap:
        score = ttc_cap
    return score


project_ttc = _jit(project_ttc)


def render_channels(
    x, v, lane, prev_lane, dual, kind, mission, crashed, departed, length, road,
    ego, lon_range, s0, vref, out,
):
    """Paint the 5-channel ego-centric velocity map into out (5, H, W).

    Channels: 0 AVs, 1 HVs, 2 mission vehicle, 3 ego attention, 4 road
    layout. Pixel values for vehicles are speed_pixel(v_other - v_ego).
    """
    H = out.shape[1]
    W = out.shape[2]
    nl = int(road[0])
    cell = lon_range / W
    x_lo = x[ego] - 0.5 * lon_range
    v_e = v[ego]
    for c in range(5):
        for r in range(H):
            for cc in range(W):
                out[c, r, cc] = 0.0
    # road layout channel
    for l in range(nl):
        ext = _lane_extent(road, l)
        r0 = (l * H) // nl
        r1 = ((l + 1) * H) // nl
        c0 = int(math.floor((ext[0] - x_lo) / cell))
        c1 = int(math.ceil((ext[1] - x_lo) / cell))
        if c0 < 0:
            c0 = 0
        if c1 > W:
            c1 = W
        for r in range(r0, r1):
            for cc in range(c0, c1):
                out[4, r, cc] = 1.0
    n = x.shape[0]
    for j in range(n):
        if departed[j] == 1:
            continue
        rel = x[j] - x[ego]
        if abs(rel) > 0.5 * lon_range + length[j]:
            continue
        l = lane[j]
        r0 = (l * H) // nl
        r1 = ((l + 1) * H) // nl
        c0 = int(math.floor((rel - 0.5 * length[j] + 0.5 * lon_range) / cell))
        c1 = int(math.ceil((rel + 0.5 * length[j] + 0.5 * lon_range) / cell))
        if c1 == c0:
            c1 = c0 + 1
        if c0 < 0:
            c0 = 0
        if c1 > W:
            c1 = W
        if c0 >= c1:
            continue
        px = speed_pixel_s(v[j] - v_e, s0, vref)
        if mission[j] != MISSION_NONE:
            ch = 2
        elif kind[j] == KIND_AV:
            ch = 0
        else:
            ch = 1
        for r in range(r0, r1):
            for cc in range(c0, c1):
                out[ch, r, cc] = px
        if j == ego:
            for r in range(r0, r1):
                for cc in range(c0, c1):
                    out[3, r, cc] = 1.0
    return out


render_channels = _jit(render_channels)
