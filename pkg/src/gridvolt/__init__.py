"""gridvolt: generator set-point voltage control for transmission grids.

Load a case, knock a bus voltage out of its band with a reactive
disturbance, and steer it back with minimal set-point effort:

    from gridvolt import caseio, controller, netmodel

    net = caseio.parse_case(
        caseio.CaseSource.from_path(caseio.bundled_case_path("case9")))
    net = netmodel.apply_disturbance(net, bus=9, dq=70.0)
    trace = controller.ovc_run(net)
    print(trace.outcome, len(trace.iterations))
"""

from . import caseio, cli, controller, netmodel, numerics, powerflow, sensitivity

__version__ = "0.1.0"

__all__ = [
    "caseio",
    "cli",
    "controller",
    "netmodel",
    "numerics",
    "powerflow",
    "sensitivity",
    "__version__",
]
