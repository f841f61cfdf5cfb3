"""Compiled substep integrators for the pushing and maze tasks.

Both kernels advance ``N`` independent environments by ``n_sub`` substeps of
``dt`` with semi-implicit Euler on a point-mass tool (plus a yaw channel).
Contacts are penalty spring-dampers with tanh-regularized Coulomb friction.
The actuation is either a wrench held over the control step (``mode == 0``)
or a velocity servo evaluated every substep (``mode == 1``).

Per-environment outputs (columns of ``out``):

0-2 contact force on the tool at the last substep, 3 contact torque (z),
4 max penetration, 5 max friction excess ``|F_t| - mu_s F_n``, 6 actuator
work, 7 viscous dissipation, 8 max total normal force, 9-10 mean
wall/box normal-force vector (xy), 11 arc length (maze), 12 distance to the
centerline (maze).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

N_OUT = 13

# layout of the ``prm`` vector shared by both kernels
P_MASS, P_DAMP, P_INERTIA, P_RDAMP, P_KN, P_DN, P_VSCALE, P_STATIC, P_KV, P_KW, P_FMAX = range(11)
# pushing extras
P_MU_C, P_HALF_LEN, P_RADIUS, P_BETA, P_GRAVITY = range(11, 16)
# maze extras
P_DISC = 11

# 2D limit-surface ratio m_max / (mu m g) for a uniformly supported square, per unit edge
SQUARE_TORQUE_RATIO = (math.sqrt(2.0) + math.log(1.0 + math.sqrt(2.0))) / 6.0


@njit(cache=True)
def _closest_on_segment(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = 0.0
    if L2 > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / L2
        t = min(1.0, max(0.0, t))
    return ax + t * dx, ay + t * dy, t


@njit(cache=True)
def _contact(nx, ny, pen, rvx, rvy, k_n, d_n, mu, vscale):
    """Normal + friction force on the tool for outward normal ``n`` and relative velocity ``rv``."""
    rate = -(rvx * nx + rvy * ny)
    fn = k_n * pen + d_n * rate
    if fn < 0.0:
        fn = 0.0
    tx, ty = -ny, nx
    ft = -mu * math.tanh((rvx * tx + rvy * ty) / vscale) * fn
    return fn * nx + ft * tx, fn * ny + ft * ty, fn, abs(ft)


@njit(cache=True)
def _actuation(i, mode, f_cmd, tau_cmd, v_cmd, w_cmd, vel, wz, prm):
    if mode == 0:
        fx, fy, fz, tz = f_cmd[i, 0], f_cmd[i, 1], f_cmd[i, 2], tau_cmd[i]
    else:
        kv, kw = prm[P_KV], prm[P_KW]
        fx = kv * (v_cmd[i, 0] - vel[i, 0])
        fy = kv * (v_cmd[i, 1] - vel[i, 1])
        fz = kv * (v_cmd[i, 2] - vel[i, 2])
        tz = kw * (w_cmd[i] - wz[i])
    norm = math.sqrt(fx * fx + fy * fy + fz * fz)
    if norm > prm[P_FMAX]:
        s = prm[P_FMAX] / norm
        fx, fy, fz = fx * s, fy * s, fz * s
    return fx, fy, fz, tz


@njit(cache=True)
def _integrate_tool(i, pos, vel, yaw, wz, fx, fy, fz, tz, cfx, cfy, cfz, ctz, prm, dt, out):
    m, c, inertia, cr = prm[P_MASS], prm[P_DAMP], prm[P_INERTIA], prm[P_RDAMP]
    vel[i, 0] += dt * (fx + cfx - c * vel[i, 0]) / m
    vel[i, 1] += dt * (fy + cfy - c * vel[i, 1]) / m
    vel[i, 2] += dt * (fz + cfz - c * vel[i, 2]) / m
    wz[i] += dt * (tz + ctz - cr * wz[i]) / inertia
    dx, dy, dz, dth = dt * vel[i, 0], dt * vel[i, 1], dt * vel[i, 2], dt * wz[i]
    pos[i, 0] += dx
    pos[i, 1] += dy
    pos[i, 2] += dz
    yaw[i] += dth
    out[i, 6] += fx * dx + fy * dy + fz * dz + tz * dth
    out[i, 7] += c * (vel[i, 0] * dx + vel[i, 1] * dy + vel[i, 2] * dz) + cr * wz[i] * dth


@njit(cache=True)
def pushing_substeps(active, pos, vel, yaw, wz, box, box_vel, sliding, half, mass, mu_k, mu_s,
                     mode, f_cmd, tau_cmd, v_cmd, w_cmd, prm, n_sub, dt, out):
    k_n, d_n, vs, static = prm[P_KN], prm[P_DN], prm[P_VSCALE], prm[P_STATIC]
    mu_c, L, r_p, beta, g = prm[P_MU_C], prm[P_HALF_LEN], prm[P_RADIUS], prm[P_BETA], prm[P_GRAVITY]
    n_env = pos.shape[0]
    for i in range(n_env):
        for j in range(N_OUT):
            out[i, j] = 0.0
        if not active[i]:
            continue
        h = half[i]
        for _ in range(n_sub):
            fx, fy, fz, tz = _actuation(i, mode, f_cmd, tau_cmd, v_cmd, w_cmd, vel, wz, prm)
            cx, cy = pos[i, 0], pos[i, 1]
            ux, uy = -math.sin(yaw[i]), math.cos(yaw[i])  # paddle axis
            p0x, p0y, p1x, p1y = cx - L * ux, cy - L * uy, cx + L * ux, cy + L * uy
            bx, by, bth = box[i, 0], box[i, 1], box[i, 2]
            cb, sb = math.cos(bth), math.sin(bth)
            bvx, bvy, bw = box_vel[i, 0], box_vel[i, 1], box_vel[i, 2]
            tfx = tfy = ttz = 0.0
            bfx = bfy = btz = 0.0
            fn_total = 0.0
            nvx = nvy = 0.0
            for c_idx in range(6):
                if c_idx < 4:
                    sx = 1.0 if (c_idx == 0 or c_idx == 3) else -1.0
                    sy = 1.0 if c_idx < 2 else -1.0
                    qx = bx + cb * sx * h - sb * sy * h
                    qy = by + sb * sx * h + cb * sy * h
                    ex, ey, _t = _closest_on_segment(qx, qy, p0x, p0y, p1x, p1y)
                    dxv, dyv = ex - qx, ey - qy
                    d = math.sqrt(dxv * dxv + dyv * dyv)
                    if d >= r_p or d < 1e-12:
                        continue
                    nx, ny, pen, px, py = dxv / d, dyv / d, r_p - d, qx, qy
                else:
                    ex, ey = (p0x, p0y) if c_idx == 4 else (p1x, p1y)
                    lx = cb * (ex - bx) + sb * (ey - by)
                    ly = -sb * (ex - bx) + cb * (ey - by)
                    if abs(lx) < h and abs(ly) < h:
                        # endpoint inside the box: push out through the nearest face
                        if h - abs(lx) < h - abs(ly):
                            nlx, nly, depth = math.copysign(1.0, lx), 0.0, h - abs(lx)
                            clx, cly = math.copysign(h, lx), ly
                        else:
                            nlx, nly, depth = 0.0, math.copysign(1.0, ly), h - abs(ly)
                            clx, cly = lx, math.copysign(h, ly)
                        pen = r_p + depth
                    else:
                        clx, cly = min(h, max(-h, lx)), min(h, max(-h, ly))
                        if abs(clx) == h and abs(cly) == h:
                            continue  # corner contact handled above
                        dl = math.sqrt((lx - clx) ** 2 + (ly - cly) ** 2)
                        if dl >= r_p:
                            continue
                        nlx, nly, pen = (lx - clx) / dl, (ly - cly) / dl, r_p - dl
                    nx, ny = cb * nlx - sb * nly, sb * nlx + cb * nly
                    px, py = bx + cb * clx - sb * cly, by + sb * clx + cb * cly
                rvx = (vel[i, 0] - wz[i] * (py - cy)) - (bvx - bw * (py - by))
                rvy = (vel[i, 1] + wz[i] * (px - cx)) - (bvy + bw * (px - bx))
                Fx, Fy, fn, ft = _contact(nx, ny, pen, rvx, rvy, k_n, d_n, mu_c, vs)
                tfx += Fx
                tfy += Fy
                ttz += (px - cx) * Fy - (py - cy) * Fx
                bfx -= Fx
                bfy -= Fy
                btz -= (px - bx) * Fy - (py - by) * Fx
                fn_total += fn
                nvx += fn * nx
                nvy += fn * ny
                out[i, 4] = max(out[i, 4], pen)
                out[i, 5] = max(out[i, 5], ft - static * mu_c * fn)
            out[i, 8] = max(out[i, 8], fn_total)
            out[i, 9] += nvx / n_sub
            out[i, 10] += nvy / n_sub
            out[i, 0], out[i, 1], out[i, 2], out[i, 3] = tfx, tfy, 0.0, ttz
            _integrate_tool(i, pos, vel, yaw, wz, fx, fy, fz, tz, tfx, tfy, 0.0, ttz, prm, dt, out)

            # quasi-static box on an ellipsoidal limit surface with stick/slip hysteresis
            arm = SQUARE_TORQUE_RATIO * 2.0 * h
            f_s = mu_s[i] * mass[i] * g
            if not sliding[i]:
                if (bfx * bfx + bfy * bfy) / (f_s * f_s) + (btz * btz) / ((arm * f_s) ** 2) > 1.0:
                    sliding[i] = True
            if sliding[i]:
                f_k = mu_k[i] * mass[i] * g
                m_k = arm * f_k
                s = math.sqrt((bfx * bfx + bfy * bfy) / (f_k * f_k) + (btz * btz) / (m_k * m_k))
                if s <= 1.0:
                    sliding[i] = False
                    box_vel[i, 0] = box_vel[i, 1] = box_vel[i, 2] = 0.0
                else:
                    fac = beta * (1.0 - 1.0 / s)
                    box_vel[i, 0] = fac * bfx
                    box_vel[i, 1] = fac * bfy
                    box_vel[i, 2] = fac * btz / (arm * arm)
            box[i, 0] += dt * box_vel[i, 0]
            box[i, 1] += dt * box_vel[i, 1]
            box[i, 2] += dt * box_vel[i, 2]


@njit(cache=True)
def _polyline_closest(x, y, verts, nv, cum):
    best_d = 1e300
    bx = by = s = 0.0
    for j in range(nv - 1):
        ax, ay, cx, cy = verts[j, 0], verts[j, 1], verts[j + 1, 0], verts[j + 1, 1]
        qx, qy, t = _closest_on_segment(x, y, ax, ay, cx, cy)
        d = math.sqrt((x - qx) ** 2 + (y - qy) ** 2)
        if d < best_d:
            best_d, bx, by = d, qx, qy
            s = cum[j] + t * (cum[j + 1] - cum[j])
    return best_d, bx, by, s


@njit(cache=True)
def _corner_contact(x, y, verts, nv, hw):
    """Closest inner wall corner whose wedge contains ``(x, y)``.

    Where two wall lines meet on the inside of a bend the nearest wall point
    in the wedge behind the corner is the corner itself; returns the distance
    to it and the corner, or ``-1`` when no wedge applies.
    """
    best = -1.0
    px = py = 0.0
    for j in range(1, nv - 1):
        ax, ay = verts[j, 0] - verts[j - 1, 0], verts[j, 1] - verts[j - 1, 1]
        bx, by = verts[j + 1, 0] - verts[j, 0], verts[j + 1, 1] - verts[j, 1]
        la, lb = math.sqrt(ax * ax + ay * ay), math.sqrt(bx * bx + by * by)
        ax, ay, bx, by = ax / la, ay / la, bx / lb, by / lb
        cross = ax * by - ay * bx
        if abs(cross) < 1e-9:
            continue
        sg = 1.0 if cross > 0.0 else -1.0
        m = sg * hw / (1.0 + ax * bx + ay * by)
        cx = verts[j, 0] + m * (-ay - by)
        cy = verts[j, 1] + m * (ax + bx)
        rx, ry = x - cx, y - cy
        dist = math.sqrt(rx * rx + ry * ry)
        if rx * ax + ry * ay >= 0.0 and rx * bx + ry * by <= 0.0 and dist < hw:
            if best < 0.0 or dist < best:
                best, px, py = dist, cx, cy
    return best, px, py


@njit(cache=True)
def maze_substeps(active, pos, vel, yaw, wz, verts, n_verts, cum, half_width, floor, mu,
                  mode, f_cmd, tau_cmd, v_cmd, w_cmd, prm, n_sub, dt, out):
    k_n, d_n, vs, static, r = prm[P_KN], prm[P_DN], prm[P_VSCALE], prm[P_STATIC], prm[P_DISC]
    n_env = pos.shape[0]
    for i in range(n_env):
        for j in range(N_OUT):
            out[i, j] = 0.0
        if not active[i]:
            continue
        nv = n_verts[i]
        amp, wavelength, phase = floor[i, 0], floor[i, 1], floor[i, 2]
        for _ in range(n_sub):
            fx, fy, fz, tz = _actuation(i, mode, f_cmd, tau_cmd, v_cmd, w_cmd, vel, wz, prm)
            x, y, z = pos[i, 0], pos[i, 1], pos[i, 2]
            d, qx, qy, s = _polyline_closest(x, y, verts[i], nv, cum[i])
            cfx = cfy = cfz = ctz = 0.0
            fn = 0.0
            pen = d + r - half_width[i]
            nx = ny = 0.0
            if d > 1e-12:
                nx, ny = (qx - x) / d, (qy - y) / d  # back toward the centerline
            dc, cx, cy = _corner_contact(x, y, verts[i], nv, half_width[i])
            if dc > 1e-12:
                pen = r - dc
                nx, ny = (x - cx) / dc, (y - cy) / dc  # away from the corner
            elif dc >= 0.0:
                pen = 0.0
            if pen > 0.0 and (nx != 0.0 or ny != 0.0):
                # contact point on the disc rim, on the wall side
                ox, oy = -r * nx, -r * ny
                rvx = vel[i, 0] - wz[i] * oy
                rvy = vel[i, 1] + wz[i] * ox
                cfx, cfy, fn, ft = _contact(nx, ny, pen, rvx, rvy, k_n, d_n, mu[i], vs)
                ctz = ox * cfy - oy * cfx
                out[i, 4] = max(out[i, 4], pen)
                out[i, 5] = max(out[i, 5], ft - static * mu[i] * fn)
                out[i, 9] += fn * nx / n_sub
                out[i, 10] += fn * ny / n_sub
            # vertical-only frictionless floor
            height = amp * math.sin(2.0 * math.pi * s / wavelength + phase)
            if z < height:
                cfz = k_n * (height - z) - d_n * vel[i, 2]
                if cfz < 0.0:
                    cfz = 0.0
            out[i, 8] = max(out[i, 8], fn)
            out[i, 0], out[i, 1], out[i, 2], out[i, 3] = cfx, cfy, cfz, ctz
            _integrate_tool(i, pos, vel, yaw, wz, fx, fy, fz, tz, cfx, cfy, cfz, ctz, prm, dt, out)
        d, qx, qy, s = _polyline_closest(pos[i, 0], pos[i, 1], verts[i], nv, cum[i])
        out[i, 11], out[i, 12] = s, d
