"""All ten acceptance criteria at full size; one PASS/FAIL line per criterion.

The lines are printed as the tests run and again in the terminal summary.
"""

import json

import pytest

from conftest import ACCEPTANCE_LINES
from hsep.suites import SUITES
from hsep.verify import _json_default

pytestmark = pytest.mark.acceptance

# (number, suite, runtime limit in seconds)
CRITERIA = [
    (1, "coupling", 10),
    (2, "tilted", 5),
    (3, "decomposition", 60),
    (4, "covariance", 30),
    (5, "duality", 10),
    (6, "martingale", 600),
    (7, "qv_approx", 600),
    (8, "moments", 900),
    (9, "convergence", 1800),
    (10, "kernels", 300),
]

DETAIL_KEYS = ("mismatched_steps", "worst", "max_residual", "max_discrepancy", "identity_residual",
               "prefactor_rel_error", "final_var_rel_gap", "sup_exponents")


def _detail(rep: dict) -> str:
    parts = []
    for k in DETAIL_KEYS:
        if k in rep:
            parts.append(f"{k}={json.dumps(rep[k], default=_json_default)}")
    if rep.get("name") == "moments":
        ne, st = rep["near_eq"], rep["step"]
        parts.append(f"spatial={ne['spatial_exponent']:.3f} temporal={ne['temporal_exponent']:.3f} "
                     f"step={st['exponent']:.3f}")
    if rep.get("name") == "kernels":
        parts.append("sup=" + ", ".join(f"{e}:{v['sup_exponent']:.3f}" for e, v in rep["eps"].items()))
    return " ".join(parts)


@pytest.mark.parametrize("number,name,limit", CRITERIA, ids=[f"criterion{n:02d}_{s}" for n, s, _ in CRITERIA])
def test_criterion(number, name, limit):
    rep = SUITES[name](seed=0)
    in_time = rep["runtime_s"] < limit
    ok = bool(rep["passed"]) and in_time
    line = (f"criterion {number} {name}: {'PASS' if ok else 'FAIL'} "
            f"({rep['runtime_s']:.1f} s, limit {limit} s) {_detail(rep)}")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert rep["passed"], line
    assert in_time, line
