import os
import subprocess
import sys

import numpy as np
import pytest

from lwck import _backend, _pykernels

needs_cython = pytest.mark.skipif("cython" not in _backend.available(), reason="extension not built")


class TestSelection:
    def test_python_always_available(self):
        assert "python" in _backend.available()
        assert _backend.get("python") is _pykernels

    def test_unknown(self):
        with pytest.raises(ValueError):
            _backend.get("fortran")

    def test_env_forces_fallback(self):
        env = dict(os.environ, LWCK_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", "import lwck; print(lwck.BACKEND)"],
                             env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"


@needs_cython
class TestAgreement:
    @pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (2, 3, 1), (1, 1, 2), (2, 1, 4)])
    def test_conv(self, stride, padding, groups):
        rng = np.random.default_rng(stride + padding + groups)
        x = rng.standard_normal((4, 11, 9))
        w = rng.standard_normal((8, 4 // groups, 3, 3))
        p = _pykernels.conv2d_direct(x, w, stride, padding, groups)
        np.testing.assert_allclose(_backend.get("cython").conv2d_loop(x, w, stride, padding, groups), p, atol=1e-12)
        np.testing.assert_allclose(_backend.get("cython").conv2d_direct(x, w, stride, padding, groups), p, atol=1e-12)

    def test_conv_dispatch_dense(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((16, 9, 9))
        w = rng.standard_normal((4, 16, 3, 3))
        ck = _backend.get("cython")
        np.testing.assert_allclose(ck.conv2d_loop(x, w, 1, 1, 1), ck.conv2d_direct(x, w, 1, 1, 1), atol=1e-12)

    @pytest.mark.parametrize("shape", [(6, 4), (20, 20), (64, 48)])
    def test_jacobi(self, shape):
        a = np.random.default_rng(shape[0]).standard_normal(shape)
        wc, vc, _ = _backend.get("cython").jacobi_svd(a, 1e-15)
        wp, vp, _ = _pykernels.jacobi_svd(a, 1e-15)
        np.testing.assert_allclose(np.sort(np.linalg.norm(wc, axis=0)), np.sort(np.linalg.norm(wp, axis=0)), rtol=1e-12)
        np.testing.assert_allclose(wc @ vc.T, a, atol=1e-12)
        np.testing.assert_allclose(wp @ vp.T, a, atol=1e-12)
