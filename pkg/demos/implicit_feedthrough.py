"""PORK on a DAE whose output sees an algebraic variable.

Tapping the first inductor voltage gives a nonzero high-frequency limit
``D_imp``. The reduction carries it exactly into ``dr``, so the error decays
instead of levelling off at ``|D_imp|``.
"""
import numpy as np

from daemor.analysis import peak_frequencies
from daemor.krylov import shifts_to_sylvester
from daemor.model import (TransmissionLineParams, build_transmission_line, frequency_response,
                          implicit_feedthrough)
from daemor.reduce import pork

dae = build_transmission_line(TransmissionLineParams(10, output_tap='first_inductor_voltage'))
d_imp = implicit_feedthrough(dae)
# shifts just right of the five largest resonances
peaks = peak_frequencies(dae, np.logspace(6, 10, 1000), 5)
shifts = [x for w in peaks for x in (w * (0.05 + 1j), w * (0.05 - 1j))]
rom = pork(dae, shifts_to_sylvester(shifts, [1.0] * len(shifts)))
print(f'D_imp = {d_imp.ravel()}, dr = {rom.dr.ravel()}')

om = np.logspace(7, 12, 11)
g = frequency_response(dae, om).values.ravel()
err = np.abs(g - frequency_response(rom, om).values.ravel())
naive = rom.with_blocks(dr=dae.d)
err_naive = np.abs(g - frequency_response(naive, om).values.ravel())
print(f"{'omega':>10s} {'|G - G_r|':>12s} {'without D_imp':>14s}")
for w, e, n in zip(om, err, err_naive):
    print(f'{w:10.2e} {e:12.3e} {n:14.3e}')
