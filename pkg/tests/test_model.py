import ipaddress

import pytest
from hypothesis import given

from conftest import path_policies, prefixes
from srv6kit.model import (
    EncapMode,
    InvalidPrefixLen,
    Ipv6Prefix,
    Operation,
    PathPolicy,
    PolicyRequest,
    SegmentList,
    canonicalize_prefix,
    validate_request,
)


def policy(dest="fc00:1::/64", segs=("fc00:2::1",), dev="eth0", mode=EncapMode.ENCAP, table=254):
    return PathPolicy(Ipv6Prefix.parse(dest), SegmentList.of(*segs), dev, mode, table)


class TestCanonicalize:
    def test_masks_host_bits(self):
        assert canonicalize_prefix(Ipv6Prefix.parse("fc00::1/64")) == Ipv6Prefix.parse("fc00::/64")

    def test_zero_prefix(self):
        assert canonicalize_prefix(Ipv6Prefix.parse("::/0")) == Ipv6Prefix.parse("::/0")

    def test_mid_boundary(self):
        # bitmask oracle: keep the top 48 bits only
        p = Ipv6Prefix.parse("fc00:aaaa:bbbb:cccc:1::/48")
        expected = int(p.address) & (((1 << 48) - 1) << 80)
        got = canonicalize_prefix(p)
        assert int(got.address) == expected
        assert got == Ipv6Prefix.parse("fc00:aaaa:bbbb::/48")

    def test_rejects_bad_len(self):
        with pytest.raises(InvalidPrefixLen):
            canonicalize_prefix(Ipv6Prefix(ipaddress.IPv6Address("::"), 129))

    @given(prefixes(canonical=False))
    def test_idempotent(self, p):
        once = canonicalize_prefix(p)
        assert canonicalize_prefix(once) == once

    @given(prefixes(canonical=False))
    def test_canonical_contains_same_range(self, p):
        c = canonicalize_prefix(p)
        assert c.prefix_len == p.prefix_len
        if p.prefix_len > 0:
            shift = 128 - p.prefix_len
            assert int(c.address) >> shift == int(p.address) >> shift


class TestValidateRequest:
    def test_valid_create(self):
        assert validate_request(PolicyRequest.create(policy())) == []

    def test_create_needs_paths(self):
        violations = validate_request(PolicyRequest(Operation.CREATE, ()))
        assert violations == ["paths must be non-empty for Create"]

    def test_get_needs_no_paths(self):
        violations = validate_request(PolicyRequest(Operation.GET, (policy(),)))
        assert any("empty for Get" in v for v in violations)

    def test_insert_rejects_ipv4_mapped(self):
        bad = policy(dest="::ffff:a00:0/104", mode=EncapMode.INSERT)
        violations = validate_request(PolicyRequest.create(bad))
        assert any("insert requires IPv6 traffic" in v for v in violations)

    def test_encap_allows_ipv4_mapped(self):
        ok = policy(dest="::ffff:a00:0/104", mode=EncapMode.ENCAP)
        assert validate_request(PolicyRequest.create(ok)) == []

    def test_empty_segments(self):
        bad = PathPolicy(Ipv6Prefix.parse("fc00::/64"), SegmentList(()), "eth0")
        violations = validate_request(PolicyRequest.create(bad))
        assert any("non-empty" in v for v in violations)

    def test_device_rules(self):
        assert validate_request(PolicyRequest.create(policy(dev="")))
        assert validate_request(PolicyRequest.create(policy(dev="x" * 16)))
        assert validate_request(PolicyRequest.create(policy(dev="x" * 15))) == []

    def test_table_range(self):
        assert validate_request(PolicyRequest.create(policy(table=2**32)))
        assert validate_request(PolicyRequest.create(policy(table=-1)))
        assert validate_request(PolicyRequest.create(policy(table=0))) == []

    def test_non_canonical_destination(self):
        bad = PathPolicy(Ipv6Prefix.parse("fc00::1/64"), SegmentList.of("fc00:2::1"), "eth0")
        violations = validate_request(PolicyRequest.create(bad))
        assert any("canonical" in v for v in violations)

    @given(path_policies())
    def test_generated_policies_validate(self, path):
        assert validate_request(PolicyRequest.create(path)) == [] or any(
            "insert requires" in v for v in validate_request(PolicyRequest.create(path))
        )


def test_prefix_contains():
    p = Ipv6Prefix.parse("fc00:4::/64")
    assert p.contains(ipaddress.IPv6Address("fc00:4::d"))
    assert not p.contains(ipaddress.IPv6Address("fc00:5::d"))
    assert Ipv6Prefix.parse("::/0").contains(ipaddress.IPv6Address("1234::1"))


def test_segment_list_parse_roundtrip():
    sl = SegmentList.parse("fcff:2::1,fcff:4::1")
    assert len(sl) == 2
    assert SegmentList.parse(str(sl)) == sl


def test_default_table_is_main():
    assert policy().table == 254
