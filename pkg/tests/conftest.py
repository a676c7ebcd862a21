"""Pin BLAS to one thread before numpy loads (deterministic runs, honest
single-threaded budgets) and emit one ACCEPTANCE line per criterion."""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")


def pytest_runtest_logreport(report):
    # runs outside per-test capture, so these lines always reach the log
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    props = dict(report.user_properties)
    name = props.get("criterion")
    if report.passed and name:
        print(f"\nACCEPTANCE {name}: PASS ({props.get('detail', '')})", flush=True)
    elif report.failed:
        print(f"\nACCEPTANCE {name or report.nodeid.split('::')[-1]}: FAIL",
              flush=True)
