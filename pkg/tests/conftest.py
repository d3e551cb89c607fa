import ipaddress
import os
import sys

import pytest
from hypothesis import strategies as st

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from srv6kit.creds import make_bundle
from srv6kit.model import EncapMode, Ipv6Prefix, PathPolicy, SegmentList, canonicalize_prefix

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def bundle(tmp_path_factory):
    """One credential set for every secure-transport test (RSA keygen is
    the slow part; there is no reason to repeat it per test)."""
    return make_bundle(tmp_path_factory.mktemp("creds"))


# ------------------------------------------------ hypothesis strategies ----

addresses = st.integers(min_value=0, max_value=2**128 - 1).map(ipaddress.IPv6Address)


@st.composite
def prefixes(draw, canonical=True):
    plen = draw(st.integers(min_value=0, max_value=128))
    addr = draw(addresses)
    p = Ipv6Prefix(addr, plen)
    return canonicalize_prefix(p) if canonical else p


@st.composite
def segment_lists(draw, min_size=1, max_size=5):
    segs = draw(st.lists(addresses, min_size=min_size, max_size=max_size))
    return SegmentList(tuple(segs))


device_names = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyz0123456789-", min_size=1, max_size=15
).filter(lambda s: not s.startswith("-"))


@st.composite
def path_policies(draw):
    return PathPolicy(
        destination=draw(prefixes()),
        segments=draw(segment_lists()),
        device=draw(device_names),
        encapmode=draw(st.sampled_from(list(EncapMode))),
        table=draw(st.integers(min_value=0, max_value=2**32 - 1)),
    )
