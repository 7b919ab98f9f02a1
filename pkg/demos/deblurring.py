"""Image deblurring posterior sampled with GEDA versus the CG sampler.

GEDA only touches FFTs and diagonal scalings, so its per-sample cost stays
small as the dimension grows; the CG sampler needs a full Krylov run for
every draw. The effective sample size per second (ESSR) makes this visible.
"""
from hdgauss import bench


def main(d=256):
    g = bench.run_scenario3("geda", d=d, T=2000, burn_in=200).summary
    c = bench.run_scenario3("cg", d=d, T=300, burn_in=30).summary
    for name, s in (("geda", g), ("cg", c)):
        print(f"{name:<5} ESS {s['ess']:8.1f}  ESSR {s['essr']:10.1f}/s  component {s['component']}")
    print(f"GEDA is {g['essr'] / c['essr']:.1f}x more efficient at d = {d}")


if __name__ == "__main__":
    main()
