"""Physical constants and the fixed incidence/energy matrices."""
import numpy as np

Q_E = 1.602176634e-19  # C
K_B = 1.380649e-23  # J/K

# junction incidence: row j = change of (n1, n2) for one forward event at junction j
T_MAT = np.array([[1, 0], [-1, 1], [0, -1]], dtype=np.int64)

# E0 @ THETA[j] == q^2 T_j Cs_inv
THETA = np.array(
    [
        [[2, 1], [0, -1], [0, 1]],
        [[-1, -1], [-1, 1], [1, 1]],
        [[-1, 0], [1, 0], [-1, -2]],
    ],
    dtype=np.int64,
)

for _a in (T_MAT, THETA):
    _a.setflags(write=False)
