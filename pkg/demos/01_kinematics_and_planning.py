"""Kinematics and planning primitives, stepped through by hand.

Run:  python3 demos/01_kinematics_and_planning.py
"""

from platoonsim import (BehaviorParams, IdmParams, KinematicState, advance,
                        desired_accel, fit_cubic, idm_accel, plan_trajectory)

print("== fixed-step kinematics ==")
state = KinematicState(station=0.0, speed=25.0)
for accel in (0.0, 2.0, -3.0):
    nxt = advance(state, accel, 0.05)
    print(f"  a={accel:+.1f}: station {state.station:.4f} -> {nxt.station:.4f}, "
          f"speed {state.speed:.2f} -> {nxt.speed:.2f}")

print("\n== desired acceleration toward a target speed ==")
params = BehaviorParams(target_speed=30.0)
for v in (25.0, 29.9, 30.0, 33.0):
    print(f"  v={v:5.1f}: a = {desired_accel(params, v, 0.05):+6.2f} m/s^2 "
          f"(comfort bounds [{params.comfort_decel}, {params.comfort_accel}])")

print("\n== cubic lateral curve for a 3 s lane change at 25 m/s ==")
curve = fit_cubic(-3.5, 0.0, 0.0, 0.0, 0.0, 75.0)
print(f"  coefficients (domain-shifted): a0={curve.a0:.3f} a1={curve.a1:.3f} "
      f"a2={curve.a2:.6f} a3={curve.a3:.9f}")
for x in (0.0, 18.75, 37.5, 56.25, 75.0):
    print(f"  y({x:6.2f} m) = {curve.evaluate(x):+.3f} m")

print("\n== trajectory rollout: accelerate 25 -> 30 and hold ==")
traj = plan_trajectory(KinematicState(station=0.0, speed=25.0),
                       BehaviorParams(target_speed=30.0), horizon_steps=60, dt=0.05)
for i in (0, 25, 50, 60):
    pt = traj.points[i]
    print(f"  t={pt.time:4.2f} s  x={pt.station:7.3f} m  v={pt.speed:6.3f} m/s")

print("\n== IDM car following for background traffic ==")
p = IdmParams(desired_speed=30.0)
for gap in (5.0, 15.0, 30.0, 100.0):
    a = idm_accel(gap, 20.0, 0.0, p)
    print(f"  gap {gap:6.1f} m at 20 m/s, matched speeds: a = {a:+.3f} m/s^2")
