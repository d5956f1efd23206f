"""A tiny calculator the test suite grows one behavior at a time."""


def add(a, b):
    raise NotImplementedError("addition is not implemented yet")


def divide(a, b):
    raise NotImplementedError("division is not implemented yet")
