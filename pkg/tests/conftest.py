import numpy as np
import pytest

from aegissat import crypto
from aegissat.harness.testbed import generate_keyset
from aegissat.platform import TRUST_ANCHOR, Platform


@pytest.fixture(scope="session")
def keys():
    return generate_keyset(crypto.TEST, 1234)


@pytest.fixture(scope="session")
def rogue_keys():
    return generate_keyset(crypto.TEST, 9999)


@pytest.fixture
def platform(keys):
    """Provisioned platform with the default two-region layout."""
    p = Platform(crypto.TEST)
    p.provision_fuses(crypto.digest(keys.root_public.key_bytes))
    p.install_root_key(keys.root_public)
    p.keystore.load_device_key(TRUST_ANCHOR, keys.device)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.report_lines():
            terminalreporter.write_line(line)
