"""Time the numba kernels against their numpy twins on the bundled toy models.

    python benchmarks/bench_kernels.py [--units 200000] [--repeat 5]

Both paths must agree exactly; the script checks that before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from seqscm import kernels
from seqscm.sampling import compile_model, stream_uniforms
from seqscm.scorers import load_scorer
from seqscm.spec_format import bundled_spec, instantiate_variation

MODELS = [("marathon_g1", "marathon_g1_confounder"), ("marathon_g2", "marathon_g2_collider"), ("signflip", "signflip")]


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--units", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'model':<14}{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for spec_name, mock in MODELS:
        spec = bundled_spec(spec_name)
        scm = instantiate_variation(spec, (0,) * len(spec.variables), load_scorer(f"mock:{mock}"), seed=0)
        m = compile_model(scm)
        tables = (m.cards, m.par_ptr, m.par_idx, m.cpt_ptr, m.cpt_flat)
        base = np.full((args.units, len(scm.order)), -1, dtype=np.int64)
        u = np.random.default_rng(0).random((args.units, len(scm.order)))

        assert np.array_equal(kernels.joint_table_nb(*tables), kernels.joint_table_np(*tables))
        assert np.array_equal(kernels.sample_batch_nb(*tables, base, u), kernels.sample_batch_np(*tables, base, u))

        cases = {
            "joint_table": (lambda: kernels.joint_table_nb(*tables), lambda: kernels.joint_table_np(*tables)),
            "sample_batch": (
                lambda: kernels.sample_batch_nb(*tables, base, u),
                lambda: kernels.sample_batch_np(*tables, base, u),
            ),
        }
        for name, (nb, npy) in cases.items():
            t_nb, t_np = best_of(nb, args.repeat), best_of(npy, args.repeat)
            print(f"{spec_name:<14}{name:<14}{t_nb * 1e3:>10.2f}{t_np * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")

    # per-unit stream setup dominates the batch path; show it for scale
    t = best_of(lambda: stream_uniforms(0, range(10_000), "observational", 5), 1)
    print(f"stream setup: {t / 10_000 * 1e6:.1f} us per unit")


if __name__ == "__main__":
    main()
