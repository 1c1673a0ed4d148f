"""Mid-run events: reference step and load step.

Events are applied at grid instants; a reference step retargets the
controller (the operating point and the passive output map are resolved
for the new target), a load step rebuilds the plant matrices.  The
controller sees the load change only through the measured output - the
regulation is expected to be nearly insensitive to it.

Run:  python3 demos/06_events.py
CLI:  pbclab simulate --preset fig-step
      pbclab simulate --preset fig-load-step
"""

import os
from pathlib import Path

import numpy as np

from pbclab.sim import (
    ControllerSpec,
    EventSpec,
    ObserverSpec,
    Scenario,
    compute_metrics,
    run_scenario,
)
from pbclab.svgplot import write_plot


def run(events):
    return run_scenario(Scenario(
        controller=ControllerSpec(feedback="observer"),
        observers=[ObserverSpec(name="fct", kind="fct-gpebo")],
        x0=(0.75, 15.0, -1.5, -18.0),
        horizon=0.05,
        events=events,
    ))


step = run([EventSpec(0.015, "reference", -5.0)])
t, v4 = step.t, step.signals[:, -1]
post = t >= 0.015
dev = np.abs(v4[post] + 5.0)
viol = np.flatnonzero(dev > 0.05)
resettle = t[post][viol[-1] + 1] if viol.size else t[post][0]
print("reference step -15 -> -5 V at 15 ms:")
print(f"  re-entered the 1% band of the new target at {resettle * 1e3:.2f} ms")
print(f"  final output {v4[-1]:.4f} V")

load = run([EventSpec(0.015, "load", 30.0)])
t, v4 = load.t, load.signals[:, -1]
dev = np.abs(v4 + 15.0)
post = t >= 0.015
back = np.flatnonzero(dev[post] > 0.15)
print("load step 20 -> 30 ohm at 15 ms:")
print(f"  transient peak {dev[post].max():.2f} V off target")
print(f"  back inside the band at {t[post][back[-1] + 1] * 1e3:.2f} ms"
      if back.size else "  never left the band")
print(f"  final output {v4[-1]:.4f} V")

out = Path(os.environ.get("PBCLAB_OUT", "demo-out"))
out.mkdir(parents=True, exist_ok=True)
write_plot(out / "events-v4.svg",
           [("reference step", step.t, step.signals[:, -1]),
            ("load step", load.t, load.signals[:, -1]),
            ("active reference", step.t, step.ref)],
           title="event response", xlabel="t [s]", ylabel="v4 [V]")
print(f"plot in {out}/")
