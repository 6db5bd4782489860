"""Make a transmission line strictly dissipative, then reduce it orthogonally.

After the transform ``E11`` is SPD and ``A + A^T`` of the underlying ODE is
negative definite, so any orthogonal projection stays stable. The same
reduction on the input side loses the certificate.
"""
import sys

from daemor.acceptance import sd_pipeline

q = int(sys.argv[1]) if len(sys.argv) > 1 else 20
order = int(sys.argv[2]) if len(sys.argv) > 2 else 10
d = sd_pipeline(q, order)
print(f'q={q} order={order}')
print(f"transform: transfer error {d['transform_tf_error']:.2e}, Lyapunov residual "
      f"{d['lyapunov_residual']:.2e}, SPD margin {d['spd_margin']:.2e}")
for tag, label in (('w', 'W-based'), ('v', 'V-based')):
    print(f"{label}: E_r SPD={d[f'{tag}_er_spd']} A_r+A_r^T<0={d[f'{tag}_ar_nd']} stable={d[f'{tag}_stable']} "
          f"max sym eig={d[f'{tag}_ar_symmpart_max_eig']:.3e} max Re={d[f'{tag}_max_real_part']:.3e}")
