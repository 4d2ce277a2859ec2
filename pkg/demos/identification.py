"""Target identification with TMS at reduced scale.

Runs the single-observation protocol on a 40-view-per-class library (the
acceptance suite uses 200). The threshold is set where reference channels
exceed it 95% of the time, and the generator and baseline are scored
against it. Takes about ten seconds.
"""

from stcm.evaluation import Benchmark, BenchmarkConfig, single_observation

bench = Benchmark(BenchmarkConfig(n_views=40))
res = single_observation(bench)
print(f"threshold {res.threshold:.3f}")
for src in ("reference", "model", "baseline"):
    print(f"{src:9s} exceedance {getattr(res, src + '_exceedance'):.2f}")
for cls, row in res.per_class().items():
    print(cls, {k: round(v, 2) for k, v in row.items()})
