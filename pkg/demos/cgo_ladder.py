"""Complex geometric optics solutions for the standard bump model.

As tau grows the correction r shrinks, and so do the source f and curl_zeta r
measured relative to tau.
"""
from mtlab.cgo import cgo_ladder
from mtlab.material import standard_bump_model

cols = ("norm_r", "norm_f_over_tau", "norm_curlzeta_r_over_tau", "div_ratio")
print(f"{'tau':>5} " + " ".join(f"{c:>25}" for c in cols))
for rec in cgo_ladder(standard_bump_model()):
    print(f"{rec['tau']:5.0f} " + " ".join(f"{rec['norms'][c]:25.5g}" for c in cols))
