"""gradcheck command implementation"""

from ..core.gradcheck import run_suite
from ..utils.colors import error, header, success
from ..utils.helpers import format_table
from .common import report_failure, resolve_config


def gradcheck_command(args):
    """Finite-difference check of every differentiable primitive and both losses."""
    try:
        config = resolve_config(args).validate()
        results = run_suite(config.seed, only=getattr(args, "ops", None))

        print(header("Gradient check (h=1e-5, float64)"))
        rows = [[r.name, f"{r.max_error:.2e}", "ok" if r.passed else "FAIL"] for r in results]
        print(format_table(rows, headers=["Op", "Max rel. error", "Status"]))
        failed = [r.name for r in results if not r.passed]
        if failed:
            print(error(f"Gradient check failed: {', '.join(failed)}"))
            return 1
        print(success("All gradient checks passed"))
        return 0

    except (Exception, KeyboardInterrupt) as e:
        return report_failure("gradcheck", e)
