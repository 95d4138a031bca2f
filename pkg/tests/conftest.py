import numpy as np
import numpy.testing as npt

from mcit import autograd as ag


def numeric_grad_inplace(arr, scalar_fn, eps=1e-6):
    """Central-difference gradient of scalar_fn() w.r.t. arr (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + eps
        fp = scalar_fn()
        arr[i] = orig - eps
        fm = scalar_fn()
        arr[i] = orig
        g[i] = (fp - fm) / (2 * eps)
        it.iternext()
    return g


def fd_check_params(module, forward_scalar, atol=1e-6, rtol=1e-4, eps=1e-6):
    """Backprop forward_scalar() and compare every parameter gradient
    against central differences."""
    module.zero_grad()
    forward_scalar().backward()

    def value():
        with ag.no_grad():
            return forward_scalar().item()

    for name, p in module.named_parameters():
        num = numeric_grad_inplace(p.data, value, eps)
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        npt.assert_allclose(grad, num, atol=atol, rtol=rtol, err_msg=name)


def fd_check_sampled(module, forward_scalar, eps=1e-5, rtol=1e-4,
                     n_random=2, seed=0, atol_zero=1e-8):
    """Finite-difference check at sampled coordinates of every parameter:
    the max-|gradient| entry plus n_random random entries, compared with
    a combined absolute-plus-relative tolerance. Returns the number of
    coordinates checked; raises AssertionError listing all failures."""
    module.zero_grad()
    forward_scalar().backward()

    def value():
        with ag.no_grad():
            return forward_scalar().item()

    rng = np.random.default_rng(seed)
    failures = []
    checked = 0
    for name, p in module.named_parameters():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flats = {int(np.abs(grad).argmax())}
        flats.update(int(v) for v in rng.integers(0, p.data.size,
                                                  size=n_random))
        for flat in flats:
            c = np.unravel_index(flat, p.data.shape)
            orig = p.data[c]
            p.data[c] = orig + eps
            fp = value()
            p.data[c] = orig - eps
            fm = value()
            p.data[c] = orig
            num = (fp - fm) / (2 * eps)
            ana = grad[c]
            checked += 1
            # assert_allclose-style combined tolerance: the absolute floor
            # absorbs central-difference roundoff noise, the relative term
            # governs every coordinate with a real-magnitude gradient.
            tol = atol_zero + rtol * max(abs(ana), abs(num))
            if abs(ana - num) > tol:
                failures.append(f"{name}{list(c)}: analytic={ana:.3e} "
                                f"numeric={num:.3e}")
    assert not failures, "gradient mismatches:\n" + "\n".join(failures)
    return checked
