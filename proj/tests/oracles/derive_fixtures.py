"""High-precision oracle for the frozen expected values in the unit tests.

Every value here is computed with mpmath at 50 digits, independently of the
C++ code paths. Run with `python3 derive_fixtures.py` and paste the printed
numbers into the tests when a fixture changes.
"""
import mpmath as mp

mp.mp.dps = 50


def L(u):
    return 1 / (1 + mp.e ** (-u))


def Linv(p):
    # bisection, not the closed form, so the oracle stays independent
    lo, hi = mp.mpf(-60), mp.mpf(60)
    for _ in range(400):
        mid = (lo + hi) / 2
        if L(mid) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def L2(u, v, w):
    return 1 / (1 + mp.e ** (-u) + mp.e ** (-v) + (1 - w) * mp.e ** (-u - v))


def show(name, x):
    print(f"{name} = {mp.nstr(x, 20)}")


show("logistic_cdf(-ln 9)", L(-mp.log(9)))
show("logistic_quantile(0.9)", Linv(mp.mpf("0.9")))

u, v, w = mp.mpf(1), mp.mpf(-1), mp.mpf("0.5")
h = mp.mpf("1e-20")
show("d_du(1,-1,0.5)", (L2(u + h, v, w) - L2(u - h, v, w)) / (2 * h))
show("d_dv(1,-1,0.5)", (L2(u, v + h, w) - L2(u, v - h, w)) / (2 * h))
show("d_dw(1,-1,0.5)", (L2(u, v, w + h) - L2(u, v, w - h)) / (2 * h))

show("attainable lo(ln3,0)", L2(mp.log(3), 0, -1))
show("attainable hi(ln3,0)", L2(mp.log(3), 0, 1))

# omega for (0.5, 0.5, 0.3) by bisection on G(r) = L2(0,0,r) - 0.3
lo, hi = mp.mpf(-1), mp.mpf(1)
for _ in range(400):
    mid = (lo + hi) / 2
    if L2(0, 0, mid) < mp.mpf("0.3"):
        lo = mid
    else:
        hi = mid
show("omega(0.5,0.5,0.3)", (lo + hi) / 2)

# canonical identification fixture
pi = [mp.mpf("0.5"), mp.mpf("0.3"), mp.mpf("0.2")]
om = [mp.mpf("0.5"), mp.mpf("-0.5")]
psel = [mp.mpf("0.4"), mp.mpf("0.6")]
for k in range(2):
    for z in range(2):
        show(f"canonical p_joint[{k + 1}][{z}]", L2(Linv(pi[k]), Linv(psel[z]), om[k]))
show("canonical mu1", mp.log(pi[0] / pi[2]))
show("canonical mu2", mp.log(pi[1] / pi[2]))

# boundary cell for the interiority violation: omega = -1 at z = 0
show("boundary p_k0 (pi=0.5, psel0=0.4, w=-1)", L2(0, Linv(mp.mpf("0.4")), -1))
