"""One-sided reduction of a transmission line: W-based versus V-based.

The line has output-side structure that makes the output (W) Krylov basis
safe for orthogonal projection. The input (V) basis is not: the reduced model
still interpolates, but it is no longer the projection of the underlying ODE.
"""
import numpy as np

from daemor.acceptance import tline_peak_shifts
from daemor.analysis import compare, interpolation_residuals
from daemor.errors import StructuralGuard
from daemor.krylov import input_krylov_basis, output_krylov_basis
from daemor.model import TransmissionLineParams, build_transmission_line, validate_semi_explicit
from daemor.reduce import orthogonal_reduce

dae = build_transmission_line(TransmissionLineParams(10))
print(f'transmission line: N={dae.order}, n_dyn={dae.n_dyn}')
print('structure:', validate_semi_explicit(dae))

w_data = tline_peak_shifts(dae, 10, 'output')
rom_w = orthogonal_reduce(dae, output_krylov_basis(dae, w_data))

v_data = tline_peak_shifts(dae, 10, 'input')
v_basis = input_krylov_basis(dae, v_data)
try:
    orthogonal_reduce(dae, v_basis)
except StructuralGuard as exc:
    print('guard:', exc)
rom_v = orthogonal_reduce(dae, v_basis, unsafe=True)

report = compare(dae, {'W-based': rom_w, 'V-based': rom_v}, np.logspace(0, 10, 300), h2=False)
for m in report.models:
    print(f'{m.name:8s} order={m.order:3d} stable={m.stable} dissipative={m.dissipative} '
          f'max_rel_freq_error={m.max_rel_freq_error}')
worst = max(r['residual'] for r in interpolation_residuals(dae, rom_v, v_data))
print(f'V-based interpolation residual: {worst:.2e}')
