"""Independent reference computations used to freeze expected test values.

These are written against textbook formulas with mpmath and share no code
with the package.
"""

import mpmath as mp

mp.mp.dps = 40


def normal_pdf(x):
    return mp.exp(-mp.mpf(x) ** 2 / 2) / mp.sqrt(2 * mp.pi)


def normal_cdf(x):
    return mp.ncdf(x)


def waveguide_s11_db(p1_mm, p2_mm, d1, d2, omega, width_mm=30, chi_e=1, chi_m=mp.mpf("0.1")):
    """|S11| in dB from a cascade of ABCD (chain) matrices of TE10 line sections."""
    c0 = mp.mpf(299792458)
    mu0 = 4 * mp.pi * mp.mpf(10) ** -7
    kc = mp.pi / (mp.mpf(width_mm) / 1000)
    k0 = mp.mpf(omega) / c0

    def line(eps, mu, length_mm):
        beta = mp.sqrt(mu * eps * k0**2 - kc**2)
        z = mp.mpf(omega) * mu0 * mu / beta
        th = beta * mp.mpf(length_mm) / 1000
        return mp.matrix([[mp.cos(th), 1j * z * mp.sin(th)], [1j * mp.sin(th) / z, mp.cos(th)]]), z

    eps = 1 + mp.mpf(d1) * chi_e
    mu = 1 + mp.mpf(d2) * chi_m
    off, z0 = line(1, 1, p2_mm)
    inl, _ = line(eps, mu, p1_mm)
    m = off * inl * off
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    s11 = (a + b / z0 - c * z0 - d) / (a + b / z0 + c * z0 + d)
    return 20 * mp.log10(abs(s11))


def gpr_mean_two_points(x_query, xs=(0, 1), ys=(0, 1), length=1, signal=1):
    """Zero-mean GP posterior mean with a squared-exponential kernel."""
    k = lambda a, b: signal * mp.exp(-((mp.mpf(a) - b) ** 2) / (2 * mp.mpf(length) ** 2))
    K = mp.matrix([[k(a, b) for b in xs] for a in xs])
    kq = mp.matrix([k(x_query, b) for b in xs])
    alpha = mp.lu_solve(K, mp.matrix(list(ys)))
    return sum(kq[i] * alpha[i] for i in range(len(xs)))
