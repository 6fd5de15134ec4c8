from file import gcd, lcm


def test_basic():
    assert gcd(12, 18) == 6


def test_lcm():
    assert lcm(4, 6) == 12
