"""Surface impedance of a uniform half space from the forward solver.

A plane wave is imposed on the faces of a box, the curl-curl system is solved,
and the surface ratio E/H is compared with sqrt(i omega mu / sigma).
"""
import numpy as np

from mtlab.fields import Grid3
from mtlab.forward import plane_wave_H, scalar_impedance, solve_forward
from mtlab.material import MaterialModel
from mtlab.symbol import apparent_resistivity

grid = Grid3((-0.5, -0.5, 0.0), (1.0, 1.0, 1.0), (32, 32, 32))
model = MaterialModel.constant(1.0, 1.0)

print(f"{'omega':>6} {'|Z| solver':>11} {'|Z| exact':>10} {'rho_a':>7}")
for omega in (2.0, 10.0, 40.0):
    Z = scalar_impedance(solve_forward(model, omega, plane_wave_H(grid, omega, 1.0, 1.0)))
    exact = np.sqrt(1j * omega)
    print(f"{omega:6.1f} {abs(Z):11.5f} {abs(exact):10.5f} {apparent_resistivity(Z, omega):7.4f}")
