"""Apparent resistivity sounding over a two-layer earth.

Forward-solver impedance tensors over a smoothed two-layer model are compared
with the classical layered-earth recursion.  Low frequencies see the resistive
basement, high frequencies the conductive top layer.
"""
from mtlab.fields import Grid3
from mtlab.symbol import LayeredModel, layered_sounding, sounding

sigmas, interfaces = (1.0, 0.1), (0.5,)
grid = Grid3((-0.5, -0.5, 0.0), (1.0, 1.0, 1.0), (9, 9, 161))
model = LayeredModel(sigmas, interfaces, grid.origin[2], 0.0125)
omegas = [1.0, 4.0, 16.0]

print(f"{'omega':>6} {'rho_a solver':>13} {'rho_a layered':>14} {'phase':>7}")
for (w, rho, ph), (_, ref, _) in zip(sounding(model, omegas, grid),
                                      layered_sounding(sigmas, [0.5], omegas)):
    print(f"{w:6.1f} {rho:13.4f} {ref:14.4f} {ph:7.2f}")
